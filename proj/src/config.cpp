#include "hyperskel/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace hyperskel {

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kPooled: return "pooled";
    case Strategy::kToken: return "token";
    case Strategy::kEuclideanPooled: return "euclidean_pooled";
    case Strategy::kEuclideanToken: return "euclidean_token";
    case Strategy::kNone: return "none";
  }
  return "none";
}

Strategy parse_alignment_strategy(const std::string& name) {
  for (Strategy s : {Strategy::kPooled, Strategy::kToken, Strategy::kEuclideanPooled,
                     Strategy::kEuclideanToken, Strategy::kNone}) {
    if (strategy_name(s) == name) return s;
  }
  throw std::invalid_argument("unknown strategy '" + name +
                              "' (pooled, token, euclidean_pooled, euclidean_token, none)");
}

bool is_euclidean(Strategy s) {
  return s == Strategy::kEuclideanPooled || s == Strategy::kEuclideanToken;
}

bool uses_token_alignment(Strategy s) {
  return s == Strategy::kToken || s == Strategy::kEuclideanToken;
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* what) {
  throw std::invalid_argument("config key '" + key + "': expected " + what + ", got '" + value +
                              "'");
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) {
    bad_value(key, v, "a finite number");
  }
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(key, trim(item)));
  if (out.empty()) bad_value(key, v, "a comma-separated list");
  return out;
}

std::string list_str(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

struct Field {
  const char* key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define HS_SIZE(name, member)                                                            \
  Field{name, [](TrainConfig& c, const std::string& v) { c.member = to_uint(name, v); }, \
        [](const TrainConfig& c) { return std::to_string(c.member); }}
#define HS_DOUBLE(name, member)                                                            \
  Field{name, [](TrainConfig& c, const std::string& v) { c.member = to_double(name, v); }, \
        [](const TrainConfig& c) { return format_double(c.member); }}
#define HS_STRING(name, member)                                               \
  Field{name, [](TrainConfig& c, const std::string& v) { c.member = v; }, \
        [](const TrainConfig& c) { return c.member; }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      HS_SIZE("d_hyp", d_hyp),
      HS_SIZE("d_gcn", d_gcn),
      HS_SIZE("d_model", d_model),
      HS_DOUBLE("init_c", init_c),
      Field{"learn_c", [](TrainConfig& c, const std::string& v) { c.learn_c = to_bool("learn_c", v); },
            [](const TrainConfig& c) { return std::string(c.learn_c ? "true" : "false"); }},
      HS_DOUBLE("alpha_init", alpha_init),
      HS_DOUBLE("ce_smoothing", ce_smoothing),
      HS_DOUBLE("contrastive_smoothing", contrastive_smoothing),
      HS_DOUBLE("tau", tau),
      HS_DOUBLE("margin", margin),
      HS_DOUBLE("tau_attn", tau_attn),
      HS_DOUBLE("lr", lr),
      HS_DOUBLE("hyp_lr", hyp_lr),
      HS_DOUBLE("weight_decay", weight_decay),
      HS_DOUBLE("grad_clip", grad_clip),
      HS_SIZE("epochs", epochs),
      HS_SIZE("warmup_epochs", warmup_epochs),
      HS_SIZE("batch_size", batch_size),
      HS_SIZE("seed", seed),
      Field{"strategy",
            [](TrainConfig& c, const std::string& v) { c.strategy = parse_alignment_strategy(v); },
            [](const TrainConfig& c) { return strategy_name(c.strategy); }},
      HS_STRING("adjacency", adjacency),
      Field{"frechet_iters",
            [](TrainConfig& c, const std::string& v) {
              c.frechet_iters = static_cast<int>(to_uint("frechet_iters", v));
            },
            [](const TrainConfig& c) { return std::to_string(c.frechet_iters); }},
      HS_DOUBLE("frechet_tol", frechet_tol),
      HS_SIZE("num_classes", data.num_classes),
      HS_SIZE("samples_per_class", data.samples_per_class),
      HS_SIZE("frames", data.frames),
      HS_SIZE("min_frames", data.min_frames),
      HS_DOUBLE("hand_scale", data.hand_scale),
      HS_DOUBLE("face_scale", data.face_scale),
      HS_DOUBLE("jitter", data.jitter),
      HS_DOUBLE("data_noise", data.noise),
      HS_SIZE("data_seed", data.seed),
      HS_SIZE("eval_every", eval_every),
      HS_STRING("data_path", data_path),
      HS_STRING("out_dir", out_dir),
      Field{"curvatures",
            [](TrainConfig& c, const std::string& v) { c.curvatures = to_list("curvatures", v); },
            [](const TrainConfig& c) { return list_str(c.curvatures); }},
      Field{"noise_levels",
            [](TrainConfig& c, const std::string& v) { c.noise_levels = to_list("noise_levels", v); },
            [](const TrainConfig& c) { return list_str(c.noise_levels); }},
      HS_STRING("hyp_checkpoint", hyp_checkpoint),
      HS_STRING("euc_checkpoint", euc_checkpoint),
  };
  return table;
}

#undef HS_SIZE
#undef HS_DOUBLE
#undef HS_STRING

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("invalid config: " + what);
}

}  // namespace

void DataConfig::validate() const {
  require(num_classes >= 2, "num_classes must be at least 2");
  require(samples_per_class >= 1, "samples_per_class must be positive");
  require(frames >= 4, "frames must be at least 4");
  require(min_frames >= 1 && min_frames <= frames, "min_frames must lie in [1, frames]");
  require(hand_scale > 0 && face_scale > 0, "part scales must be positive");
  require(jitter >= 0 && noise >= 0, "jitter and data_noise must be non-negative");
}

void TrainConfig::validate() const {
  data.validate();
  require(d_hyp > 0 && d_gcn > 0 && d_model > 0, "dimensions must be positive");
  require(init_c > 0, "init_c must be positive");
  require(alpha_init > 0 && alpha_init <= 1, "alpha_init must lie in (0, 1]");
  require(ce_smoothing >= 0 && ce_smoothing < 1, "ce_smoothing must lie in [0, 1)");
  require(contrastive_smoothing >= 0 && contrastive_smoothing < 1,
          "contrastive_smoothing must lie in [0, 1)");
  require(tau > 0.01 && tau < 2.01, "tau must lie in (0.01, 2.01)");
  require(margin >= 0, "margin must be non-negative");
  require(tau_attn > 0, "tau_attn must be positive");
  require(lr > 0 && hyp_lr > 0, "learning rates must be positive");
  require(weight_decay >= 0, "weight_decay must be non-negative");
  require(grad_clip > 0, "grad_clip must be positive");
  require(epochs > 0, "epochs must be positive");
  require(batch_size >= 2, "batch_size must be at least 2");
  require(adjacency == "uniform" || adjacency == "distance", "adjacency must be uniform or distance");
  require(frechet_iters >= 1, "frechet_iters must be positive");
  require(frechet_tol > 0, "frechet_tol must be positive");
  require(eval_every >= 2, "eval_every must be at least 2");
  for (double c : curvatures) require(c > 0, "curvatures must be positive");
  for (double s : noise_levels) require(s >= 0, "noise_levels must be non-negative");
}

void apply_setting(TrainConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(cfg, value);
      return;
    }
  }
  throw std::invalid_argument("unknown config key '" + key + "'");
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected 'key = value'");
    }
    apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(cfg));
  return out;
}

std::string dump_config(const TrainConfig& cfg) {
  std::string s;
  for (const auto& [k, v] : config_entries(cfg)) s += k + " = " + v + "\n";
  return s;
}

}  // namespace hyperskel
