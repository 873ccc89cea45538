#include "toflow/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "toflow/errors.hpp"

namespace toflow {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'T', 'O', 'F', 'L', 'O', 'W', 'C', 'K'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw CheckpointError("checkpoint payload is truncated");
  return v;
}

void put_tensor(std::ostream& out, const Tensor& t) {
  put<std::uint64_t>(out, t.rows());
  put<std::uint64_t>(out, t.cols());
  out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor take_tensor(std::istream& in) {
  const auto rows = take<std::uint64_t>(in);
  const auto cols = take<std::uint64_t>(in);
  if (rows > (1u << 24) || cols > (1u << 24) || rows * cols > (1u << 26)) {
    throw CheckpointError("implausible tensor shape in checkpoint");
  }
  Tensor t(rows, cols);
  in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!in) throw CheckpointError("checkpoint payload is truncated");
  return t;
}

void put_adam(std::ostream& out, const AdamState& s) {
  put(out, s.config.lr);
  put(out, s.config.beta1);
  put(out, s.config.beta2);
  put(out, s.config.eps);
  put<std::uint64_t>(out, s.step_count);
  put<std::uint64_t>(out, s.m.size());
  for (const Tensor& t : s.m) put_tensor(out, t);
  put<std::uint64_t>(out, s.v.size());
  for (const Tensor& t : s.v) put_tensor(out, t);
}

AdamState take_adam(std::istream& in) {
  AdamState s;
  s.config.lr = take<double>(in);
  s.config.beta1 = take<double>(in);
  s.config.beta2 = take<double>(in);
  s.config.eps = take<double>(in);
  s.step_count = take<std::uint64_t>(in);
  for (auto* buf : {&s.m, &s.v}) {
    const auto n = take<std::uint64_t>(in);
    if (n > 4096) throw CheckpointError("implausible moment count in checkpoint");
    for (std::uint64_t i = 0; i < n; ++i) buf->push_back(take_tensor(in));
  }
  return s;
}

std::string encode_payload(const Checkpoint& ck) {
  std::ostringstream out(std::ios::binary);
  const std::string cfg = ck.config.dump();
  put<std::uint64_t>(out, cfg.size());
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  put<std::uint64_t>(out, ck.iterations_done);
  ck.net.write_binary(out);
  put_adam(out, ck.weight_optimizer);
  put(out, ck.T);
  put(out, ck.t0);
  put_adam(out, ck.time_optimizer);
  put<std::uint64_t>(out, ck.nfe_history.size());
  for (std::size_t n : ck.nfe_history) put<std::uint64_t>(out, n);
  return std::move(out).str();
}

Checkpoint decode_payload(const std::string& payload) {
  std::istringstream in(payload, std::ios::binary);
  Checkpoint ck;
  const auto cfg_len = take<std::uint64_t>(in);
  if (cfg_len > payload.size()) throw CheckpointError("config length exceeds payload");
  std::string cfg(cfg_len, '\0');
  in.read(cfg.data(), static_cast<std::streamsize>(cfg_len));
  if (!in) throw CheckpointError("checkpoint payload is truncated");
  try {
    ck.config = nlohmann::json::parse(cfg);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("config snapshot does not parse: ") + e.what());
  }
  ck.iterations_done = take<std::uint64_t>(in);
  try {
    ck.net = DynamicsNet::read_binary(in);
  } catch (const Error& e) {
    throw CheckpointError(std::string("network record: ") + e.what());
  }
  ck.weight_optimizer = take_adam(in);
  ck.T = take<double>(in);
  ck.t0 = take<double>(in);
  ck.time_optimizer = take_adam(in);
  const auto n_hist = take<std::uint64_t>(in);
  if (n_hist > payload.size()) throw CheckpointError("implausible history length");
  ck.nfe_history.reserve(n_hist);
  for (std::uint64_t i = 0; i < n_hist; ++i) ck.nfe_history.push_back(take<std::uint64_t>(in));
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes in checkpoint payload");
  return ck;
}

nlohmann::json sidecar(const Checkpoint& ck) {
  return {{"format", "toflow-checkpoint"},
          {"version", kCheckpointVersion},
          {"iterations_done", ck.iterations_done},
          {"architecture",
           {{"dim", ck.net.dim()},
            {"hidden", ck.net.hidden()},
            {"depth", ck.net.depth()},
            {"activation", "tanh"},
            {"time_input", "concatenated at every layer"},
            {"parameter_count", ck.net.parameter_count()}}},
          {"T", ck.T},
          {"t0", ck.t0},
          {"config", ck.config}};
}

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t n) noexcept {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  if (path.empty()) throw NotFoundError("empty checkpoint path");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const std::string payload = encode_payload(ck);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    put(out, kCheckpointVersion);
    put<std::uint64_t>(out, payload.size());
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    put(out, fnv1a64(payload.data(), payload.size()));
    if (!out) throw IoError("write failed on " + tmp.string());
  }
  fs::rename(tmp, path);

  std::ofstream meta(path.string() + ".json", std::ios::trunc);
  meta << sidecar(ck).dump(2) << '\n';
  if (!meta) throw IoError("cannot write checkpoint sidecar for " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  if (path.empty()) throw NotFoundError("empty checkpoint path");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("no checkpoint at " + path.string());

  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint (bad magic)");
  }
  const auto version = take<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto len = take<std::uint64_t>(in);
  if (len > (1ULL << 34)) throw CheckpointError("implausible payload length");
  std::string payload(len, '\0');
  in.read(payload.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError("checkpoint is truncated");
  const auto sum = take<std::uint64_t>(in);
  if (sum != fnv1a64(payload.data(), payload.size())) {
    throw CheckpointError("checkpoint checksum mismatch (file is corrupt)");
  }
  return decode_payload(payload);
}

}  // namespace toflow
