#include "toflow/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "toflow/errors.hpp"

namespace toflow {

using nlohmann::json;

namespace {

std::string_view trace_kind_name(TraceKind k) { return k == TraceKind::Exact ? "exact" : "hutchinson"; }

TraceKind parse_trace_kind(const std::string& s) {
  if (s == "exact") return TraceKind::Exact;
  if (s == "hutchinson") return TraceKind::Hutchinson;
  throw ConfigError("trace.kind", "unknown trace kind '" + s + "' (exact|hutchinson)");
}

std::string_view noise_name(ProbeNoise n) { return n == ProbeNoise::Gaussian ? "gaussian" : "rademacher"; }

ProbeNoise parse_noise(const std::string& s) {
  if (s == "rademacher") return ProbeNoise::Rademacher;
  if (s == "gaussian") return ProbeNoise::Gaussian;
  throw ConfigError("trace.noise", "unknown probe noise '" + s + "' (rademacher|gaussian)");
}

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

// Types are taken from the default tree: unsigned fields reject negatives and
// fractions, float fields accept any number.
void check_type(const json& def, const json& val, const std::string& path) {
  if (def.is_object()) {
    if (!val.is_object()) throw ConfigError(path, "expected a table");
    return;
  }
  if (def.is_boolean()) {
    if (!val.is_boolean()) throw ConfigError(path, "expected true or false");
  } else if (def.is_string()) {
    if (!val.is_string()) throw ConfigError(path, "expected a string");
  } else if (def.is_number_unsigned() || def.is_number_integer()) {
    if (!val.is_number_unsigned() && !(val.is_number_integer() && val.get<std::int64_t>() >= 0)) {
      throw ConfigError(path, "expected a non-negative integer");
    }
  } else if (def.is_number_float()) {
    if (!val.is_number()) throw ConfigError(path, "expected a number");
  }
}

void merge_into(json& base, const json& overlay, const std::string& prefix) {
  if (!overlay.is_object()) throw ConfigError(prefix.empty() ? "<root>" : prefix, "expected a table");
  for (const auto& [key, val] : overlay.items()) {
    const std::string path = join(prefix, key);
    if (!base.contains(key)) throw ConfigError(path, "unknown key");
    json& slot = base[key];
    check_type(slot, val, path);
    if (slot.is_object()) {
      merge_into(slot, val, path);
    } else if (slot.is_number_float()) {
      slot = val.get<double>();
    } else {
      slot = val;
    }
  }
}

template <typename T>
T get(const json& tree, const char* section, const char* key) {
  const std::string path = section[0] ? std::string(section) + "." + key : std::string(key);
  const json* node = &tree;
  if (section[0]) {
    if (!tree.contains(section)) throw ConfigError(path, "missing");
    node = &tree.at(section);
  }
  if (!node->contains(key)) throw ConfigError(path, "missing");
  try {
    return node->at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path, e.what());
  }
}

AdamConfig adam_from(const json& tree, const char* section) {
  return AdamConfig{.lr = get<double>(tree, section, "lr"),
                    .beta1 = get<double>(tree, section, "beta1"),
                    .beta2 = get<double>(tree, section, "beta2"),
                    .eps = get<double>(tree, section, "eps")};
}

json adam_json(const AdamConfig& a) {
  return {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}};
}

// ============================================================================
// TOML subset
// ============================================================================

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

[[noreturn]] void toml_error(std::size_t line, const std::string& msg) {
  throw ConfigError("<toml:" + std::to_string(line) + ">", msg);
}

// Drops a trailing comment that is not inside a string.
std::string_view strip_comment(std::string_view s) {
  char quote = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (quote) {
      if (c == '\\' && quote == '"') {
        ++i;
      } else if (c == quote) {
        quote = 0;
      }
    } else if (c == '"' || c == '\'') {
      quote = c;
    } else if (c == '#') {
      return s.substr(0, i);
    }
  }
  return s;
}

std::vector<std::string> split_key(std::string_view key, std::size_t line) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = key.find('.', start);
    const std::string_view part = trim(key.substr(start, dot == std::string_view::npos ? dot : dot - start));
    if (part.empty()) toml_error(line, "empty key segment");
    for (char c : part) {
      if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) {
        toml_error(line, "invalid character in key '" + std::string(part) + "'");
      }
    }
    parts.emplace_back(part);
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return parts;
}

json parse_scalar(std::string_view v, std::size_t line) {
  if (v.empty()) toml_error(line, "missing value");
  if (v.front() == '"') {
    if (v.size() < 2 || v.back() != '"') toml_error(line, "unterminated string");
    try {
      return json::parse(v);  // JSON escapes are a superset of what we accept
    } catch (const json::exception&) {
      toml_error(line, "bad string literal");
    }
  }
  if (v.front() == '\'') {
    if (v.size() < 2 || v.back() != '\'') toml_error(line, "unterminated string");
    return std::string(v.substr(1, v.size() - 2));
  }
  if (v == "true") return true;
  if (v == "false") return false;
  std::string num;
  for (char c : v) {
    if (c != '_') num.push_back(c);
  }
  try {
    json j = json::parse(num);
    if (j.is_number()) return j;
  } catch (const json::exception&) {
  }
  // JSON does not accept a leading '+' or forms like "1." / ".5".
  char* end = nullptr;
  const double d = std::strtod(num.c_str(), &end);
  if (end != num.c_str() && *end == '\0') return d;
  toml_error(line, "cannot parse value '" + std::string(v) + "'");
}

}  // namespace

// ============================================================================
// RunConfig
// ============================================================================

void RunConfig::validate() const {
  if (dataset.name.empty()) throw ConfigError("dataset.name", "required");
  const Dataset d = parse_dataset(dataset.name);
  (void)d;
  if (dataset.n_test == 0) throw ConfigError("dataset.n_test", "must be >= 1");
  if (model.depth > 0 && model.hidden == 0) throw ConfigError("model.hidden", "must be >= 1");
  if (model.depth > 64) throw ConfigError("model.depth", "must be <= 64");
  solver.validate();
  if (trace.kind == TraceKind::Hutchinson && trace.n_probes == 0) {
    throw ConfigError("trace.n_probes", "must be >= 1");
  }
  make_policy().validate();
  optimizer.adam.validate("optimizer");
  if (!(optimizer.clip > 0.0)) throw ConfigError("optimizer.clip", "must be > 0");
  if (schedule.batch_size == 0) throw ConfigError("schedule.batch_size", "must be >= 1");
  if (schedule.eval_every == 0) throw ConfigError("schedule.eval_every", "must be >= 1");
  if (schedule.nfe_window == 0) throw ConfigError("schedule.nfe_window", "must be >= 1");
  if (schedule.eval_chunk == 0) throw ConfigError("schedule.eval_chunk", "must be >= 1");
}

TimePolicy RunConfig::make_policy() const {
  const PolicyConfig& p = policy;
  switch (p.kind) {
    case PolicyKind::Fixed: return TimePolicy::fixed(p.T0, p.t0);
    case PolicyKind::Steer: return TimePolicy::steer(p.T0, p.t0, p.steer_b);
    case PolicyKind::TemporalOpt:
      return TimePolicy::temporal(p.T0, p.t0, p.alpha, p.epsilon, p.time_adam, p.optimize_t0);
  }
  return TimePolicy::fixed(p.T0, p.t0);
}

json to_json(const RunConfig& c) {
  json j;
  j["dataset"] = {{"name", c.dataset.name},
                  {"seed", c.dataset.seed},
                  {"n_test", c.dataset.n_test},
                  {"quantized8", c.dataset.quantized8}};
  j["model"] = {{"hidden", c.model.hidden}, {"depth", c.model.depth}};
  j["solver"] = {{"method", std::string(method_name(c.solver.method))},
                 {"rtol", c.solver.rtol},
                 {"atol", c.solver.atol},
                 {"h_init", c.solver.h_init},
                 {"h_min", c.solver.h_min},
                 {"h_max", c.solver.h_max},
                 {"max_steps", c.solver.max_steps}};
  j["trace"] = {{"kind", std::string(trace_kind_name(c.trace.kind))},
                {"noise", std::string(noise_name(c.trace.noise))},
                {"n_probes", c.trace.n_probes},
                {"exact_dim_cap", c.trace.exact_dim_cap}};
  json policy = adam_json(c.policy.time_adam);
  policy["tag"] = std::string(policy_name(c.policy.kind));
  policy["T0"] = c.policy.T0;
  policy["t0"] = c.policy.t0;
  policy["alpha"] = c.policy.alpha;
  policy["epsilon"] = c.policy.epsilon;
  policy["steer_b"] = c.policy.steer_b;
  policy["optimize_t0"] = c.policy.optimize_t0;
  j["policy"] = policy;
  json opt = adam_json(c.optimizer.adam);
  opt["clip"] = c.optimizer.clip;
  j["optimizer"] = opt;
  j["schedule"] = {{"iterations", c.schedule.iterations},
                   {"batch_size", c.schedule.batch_size},
                   {"eval_every", c.schedule.eval_every},
                   {"checkpoint_every", c.schedule.checkpoint_every},
                   {"nfe_window", c.schedule.nfe_window},
                   {"eval_chunk", c.schedule.eval_chunk}};
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  return j;
}

RunConfig config_from_json(const json& tree) {
  // Merging onto the defaults rejects unknown keys and fills in missing ones.
  json full = to_json(RunConfig{});
  merge_into(full, tree, "");

  RunConfig c;
  c.dataset.name = get<std::string>(full, "dataset", "name");
  c.dataset.seed = get<std::uint64_t>(full, "dataset", "seed");
  c.dataset.n_test = get<std::size_t>(full, "dataset", "n_test");
  c.dataset.quantized8 = get<bool>(full, "dataset", "quantized8");

  c.model.hidden = get<std::size_t>(full, "model", "hidden");
  c.model.depth = get<std::size_t>(full, "model", "depth");

  c.solver.method = parse_method(get<std::string>(full, "solver", "method"));
  c.solver.rtol = get<double>(full, "solver", "rtol");
  c.solver.atol = get<double>(full, "solver", "atol");
  c.solver.h_init = get<double>(full, "solver", "h_init");
  c.solver.h_min = get<double>(full, "solver", "h_min");
  c.solver.h_max = get<double>(full, "solver", "h_max");
  c.solver.max_steps = get<std::size_t>(full, "solver", "max_steps");

  c.trace.kind = parse_trace_kind(get<std::string>(full, "trace", "kind"));
  c.trace.noise = parse_noise(get<std::string>(full, "trace", "noise"));
  c.trace.n_probes = get<std::size_t>(full, "trace", "n_probes");
  c.trace.exact_dim_cap = get<std::size_t>(full, "trace", "exact_dim_cap");

  c.policy.kind = parse_policy(get<std::string>(full, "policy", "tag"));
  c.policy.T0 = get<double>(full, "policy", "T0");
  c.policy.t0 = get<double>(full, "policy", "t0");
  c.policy.alpha = get<double>(full, "policy", "alpha");
  c.policy.epsilon = get<double>(full, "policy", "epsilon");
  c.policy.steer_b = get<double>(full, "policy", "steer_b");
  c.policy.optimize_t0 = get<bool>(full, "policy", "optimize_t0");
  c.policy.time_adam = adam_from(full, "policy");

  c.optimizer.adam = adam_from(full, "optimizer");
  c.optimizer.clip = get<double>(full, "optimizer", "clip");

  c.schedule.iterations = get<std::size_t>(full, "schedule", "iterations");
  c.schedule.batch_size = get<std::size_t>(full, "schedule", "batch_size");
  c.schedule.eval_every = get<std::size_t>(full, "schedule", "eval_every");
  c.schedule.checkpoint_every = get<std::size_t>(full, "schedule", "checkpoint_every");
  c.schedule.nfe_window = get<std::size_t>(full, "schedule", "nfe_window");
  c.schedule.eval_chunk = get<std::size_t>(full, "schedule", "eval_chunk");

  c.seed = get<std::uint64_t>(full, "", "seed");
  c.out_dir = get<std::string>(full, "", "out_dir");
  return c;
}

json parse_toml(std::string_view text) {
  json root = json::object();
  std::vector<std::string> table;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view raw = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const std::string_view line = trim(strip_comment(raw));
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) toml_error(line_no, "malformed table header");
      table = split_key(line.substr(1, line.size() - 2), line_no);
      json* node = &root;
      for (const std::string& part : table) {
        json& next = (*node)[part];
        if (next.is_null()) next = json::object();
        if (!next.is_object()) toml_error(line_no, "'" + part + "' is already a value");
        node = &next;
      }
      continue;
    }

    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) toml_error(line_no, "expected key = value");
    std::vector<std::string> key = table;
    for (std::string& part : split_key(line.substr(0, eq), line_no)) key.push_back(std::move(part));
    json* node = &root;
    for (std::size_t i = 0; i + 1 < key.size(); ++i) {
      json& next = (*node)[key[i]];
      if (next.is_null()) next = json::object();
      if (!next.is_object()) toml_error(line_no, "'" + key[i] + "' is already a value");
      node = &next;
    }
    if (node->contains(key.back())) toml_error(line_no, "duplicate key '" + key.back() + "'");
    (*node)[key.back()] = parse_scalar(trim(line.substr(eq + 1)), line_no);
  }
  return root;
}

json parse_config_text(std::string_view text) {
  const std::string_view t = trim(text);
  if (!t.empty() && t.front() == '{') {
    try {
      return json::parse(t);
    } catch (const json::exception& e) {
      throw ConfigError("<json>", e.what());
    }
  }
  return parse_toml(text);
}

void apply_override(json& tree, std::string_view assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError(std::string(assignment), "override must look like key=value");
  }
  const std::string path(trim(assignment.substr(0, eq)));
  const std::string_view raw = trim(assignment.substr(eq + 1));
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = std::string(raw);
  }
  const std::vector<std::string> parts = split_key(path, 0);
  json* node = &tree;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    json& next = (*node)[parts[i]];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) throw ConfigError(path, "'" + parts[i] + "' is not a table");
    node = &next;
  }
  (*node)[parts.back()] = std::move(value);
}

RunConfig load_config(const json& user_tree, const std::vector<std::string>& overrides) {
  json tree = user_tree.is_null() ? json::object() : user_tree;
  for (const std::string& o : overrides) apply_override(tree, o);
  RunConfig c = config_from_json(tree);
  if (c.out_dir.empty()) {
    if (const char* env = std::getenv("TOFLOW_OUT_DIR")) c.out_dir = env;
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path* file, const std::vector<std::string>& overrides) {
  json tree = json::object();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw NotFoundError("cannot open config file " + file->string());
    std::stringstream ss;
    ss << in.rdbuf();
    tree = parse_config_text(ss.str());
  }
  return load_config(tree, overrides);
}

}  // namespace toflow
