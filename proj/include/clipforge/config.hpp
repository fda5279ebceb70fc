#pragma once

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "clipforge/synthetic.hpp"
#include "clipforge/training.hpp"

namespace clipforge {

// Flat key=value run configuration ('#' starts a comment, unknown keys are
// rejected). Defaults follow the reference hyperparameters where one exists;
// sizes default to desk scale.
struct RunConfig {
  std::uint64_t seed = 1;

  // Synthetic corpus.
  int num_videos = 250;
  int frames_per_video = 64;
  int frame_size = 32;
  int channels = 1;
  int positive_parts = 2;
  int negative_parts = 1;
  double test_fraction = 0.2;
  double background_level = 0.25;
  double jitter = 1.5;
  double noise = 0.02;
  double blob_intensity = 0.9;
  double blob_radius = 5.0;
  double blob_flicker = 0.25;
  int run_min = 10;
  int run_max = 20;

  // Action space.
  std::vector<int> actions = {1, 3, 5, 7};
  std::vector<int> resolutions = {32, 24, 16, 12};
  int stations = 2;

  // Mixup / loss weights / annealing.
  double alpha = 0.3;
  double beta = 0.3;
  double gamma = 0.1;
  double tau_init = 5.0;
  double tau_floor = 0.01;
  std::string balance_form = "abs";
  double policy_grad_clip = 3.0;

  // Networks.
  int hidden_dim = 64;
  std::vector<int> cnn_widths = {8, 16, 32};
  int norm_groups = 8;
  int policy_groups = 8;
  std::string attention = "none";
  int attention_reduction = 16;
  int attention_kernel = 7;
  int eca_kernel = 3;
  int sa_groups = 4;

  // Schedule.
  int phase1_epochs = 20;
  int phase2_epochs = 10;
  int phase3_epochs = 10;
  double phase1_lr = 0.01;
  double phase2_lr = 0.04;
  double phase3_lr = 0.01;
  std::vector<double> lr_milestones = {0.5, 0.7, 0.9};
  double momentum = 0.937;
  double weight_decay = 5e-4;
  int batch_frames = 32;
  int batch_videos = 1;

  // Failures surface as ConfigError so the CLI exits with the usage code.
  void validate() const {
    try {
      validate_impl();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }

 private:
  void validate_impl() const {
    corpus_spec().validate();
    ActionSpace space(actions, resolutions);
    require(test_fraction >= 0.0 && test_fraction < 1.0, "test_fraction must lie in [0,1)");
    require(stations >= 0 && stations <= frames_per_video,
            "stations must lie in [0, frames_per_video]");
    require(alpha > 0.0, "alpha must be positive");
    require(beta >= 0.0 && gamma >= 0.0, "beta and gamma must be non-negative");
    require(tau_init > 0.0 && tau_floor > 0.0 && tau_floor <= tau_init,
            "temperature schedule needs 0 < tau_floor <= tau_init");
    parse_balance_form(balance_form);
    require(policy_grad_clip >= 0.0, "policy_grad_clip must be >= 0 (0 disables)");
    require(hidden_dim >= 1, "hidden_dim must be >= 1");
    require(!cnn_widths.empty(), "cnn_widths must not be empty");
    for (int w : cnn_widths) {
      require(w >= 1 && w % norm_groups == 0,
              strformat("cnn width %d must be a positive multiple of norm_groups %d", w,
                        norm_groups));
    }
    const AttentionKind kind = parse_attention_kind(attention);
    if (kind == AttentionKind::Cbam) {
      require(attention_reduction >= 1, "attention_reduction must be >= 1");
      require(attention_kernel >= 1 && attention_kernel % 2 == 1,
              "attention_kernel must be odd");
    }
    if (kind == AttentionKind::Eca) {
      require(eca_kernel >= 1 && eca_kernel % 2 == 1, "eca_kernel must be odd");
    }
    if (kind == AttentionKind::Shuffle) {
      for (int w : cnn_widths) {
        require(w % (2 * sa_groups) == 0,
                strformat("cnn width %d must be divisible by 2*sa_groups=%d", w, 2 * sa_groups));
      }
    }
    require((hidden_dim + cnn_widths.back()) % policy_groups == 0,
            strformat("policy input dim %d not divisible by policy_groups %d",
                      hidden_dim + cnn_widths.back(), policy_groups));
    require(phase1_epochs >= 0 && phase2_epochs >= 0 && phase3_epochs >= 0,
            "phase epochs must be >= 0");
    require(phase1_lr > 0.0 && phase2_lr > 0.0 && phase3_lr > 0.0,
            "learning rates must be positive");
    for (double m : lr_milestones) {
      require(m > 0.0 && m <= 1.0, "lr_milestones must lie in (0,1]");
    }
    require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0,1)");
    require(weight_decay >= 0.0, "weight_decay must be non-negative");
    require(batch_frames >= 1 && batch_videos >= 1, "batch sizes must be >= 1");
    const int full_res = space.full_resolution();
    require(full_res <= frame_size * 8, "full resolution implausibly larger than frames");
  }

 public:
  SyntheticCorpusSpec corpus_spec() const {
    SyntheticCorpusSpec spec;
    spec.num_videos = num_videos;
    spec.frames_per_video = frames_per_video;
    spec.frame_size = frame_size;
    spec.channels = channels;
    spec.positive_parts = positive_parts;
    spec.negative_parts = negative_parts;
    spec.rng_seed = seed;
    spec.background_level = background_level;
    spec.jitter = jitter;
    spec.noise = noise;
    spec.blob_intensity = blob_intensity;
    spec.blob_radius = blob_radius;
    spec.blob_flicker = blob_flicker;
    spec.run_min = run_min;
    spec.run_max = run_max;
    return spec;
  }

  ModelConfig model_config() const {
    ModelConfig mc;
    mc.actions = ActionSpace(actions, resolutions);
    mc.cnn.in_channels = channels;
    mc.cnn.widths = cnn_widths;
    mc.cnn.norm_groups = norm_groups;
    mc.cnn.attention = parse_attention_kind(attention);
    mc.cnn.attention_reduction = attention_reduction;
    mc.cnn.attention_kernel = attention_kernel;
    mc.cnn.eca_kernel = eca_kernel;
    mc.cnn.sa_groups = sa_groups;
    mc.hidden_dim = hidden_dim;
    mc.policy_groups = policy_groups;
    mc.stations = stations;
    return mc;
  }

  TrainConfig train_config(int threads) const {
    TrainConfig tc;
    tc.phase1 = {phase1_epochs, phase1_lr};
    tc.phase2 = {phase2_epochs, phase2_lr};
    tc.phase3 = {phase3_epochs, phase3_lr};
    tc.lr_milestones = lr_milestones;
    tc.momentum = momentum;
    tc.weight_decay = weight_decay;
    tc.beta = beta;
    tc.gamma = gamma;
    tc.alpha = alpha;
    tc.tau_init = tau_init;
    tc.tau_floor = tau_floor;
    tc.balance_form = parse_balance_form(balance_form);
    tc.policy_grad_clip = policy_grad_clip;
    tc.batch_frames = batch_frames;
    tc.batch_videos = batch_videos;
    tc.seed = seed;
    tc.threads = threads;
    return tc;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline double config_double(const std::string& v, const std::string& key) {
  const char* begin = v.c_str();
  char* end = nullptr;
  const double parsed = std::strtod(begin, &end);
  if (end != begin + v.size() || v.empty() || !std::isfinite(parsed)) {
    throw ConfigError(strformat("config key '%s': bad number '%s'", key.c_str(), v.c_str()));
  }
  return parsed;
}

inline long config_long(const std::string& v, const std::string& key) {
  const char* begin = v.c_str();
  char* end = nullptr;
  const long parsed = std::strtol(begin, &end, 10);
  if (end != begin + v.size() || v.empty()) {
    throw ConfigError(strformat("config key '%s': bad integer '%s'", key.c_str(), v.c_str()));
  }
  return parsed;
}

inline int config_int(const std::string& v, const std::string& key) {
  return static_cast<int>(config_long(v, key));
}

inline std::uint64_t config_u64(const std::string& v, const std::string& key) {
  const char* begin = v.c_str();
  char* end = nullptr;
  const unsigned long long parsed = std::strtoull(begin, &end, 10);
  if (end != begin + v.size() || v.empty()) {
    throw ConfigError(strformat("config key '%s': bad integer '%s'", key.c_str(), v.c_str()));
  }
  return static_cast<std::uint64_t>(parsed);
}

inline std::vector<std::string> config_list(const std::string& v) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : v) {
    if (ch == ',') {
      parts.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  parts.push_back(trim(cur));
  return parts;
}

inline std::vector<int> config_int_list(const std::string& v, const std::string& key) {
  std::vector<int> out;
  for (const std::string& p : config_list(v)) out.push_back(config_int(p, key));
  return out;
}

inline std::vector<double> config_double_list(const std::string& v, const std::string& key) {
  std::vector<double> out;
  for (const std::string& p : config_list(v)) out.push_back(config_double(p, key));
  return out;
}

// "2:1" -> {2, 1}
inline std::pair<int, int> config_ratio(const std::string& v, const std::string& key) {
  const std::size_t colon = v.find(':');
  if (colon == std::string::npos) {
    throw ConfigError(strformat("config key '%s': expected P:N ratio, got '%s'", key.c_str(),
                                v.c_str()));
  }
  return {config_int(trim(v.substr(0, colon)), key), config_int(trim(v.substr(colon + 1)), key)};
}

}  // namespace detail

inline void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  using detail::config_double;
  using detail::config_double_list;
  using detail::config_int;
  using detail::config_int_list;
  using detail::config_ratio;
  using detail::config_u64;

  if (key == "seed") cfg.seed = config_u64(value, key);
  else if (key == "num_videos") cfg.num_videos = config_int(value, key);
  else if (key == "frames_per_video") cfg.frames_per_video = config_int(value, key);
  else if (key == "frame_size") cfg.frame_size = config_int(value, key);
  else if (key == "channels") cfg.channels = config_int(value, key);
  else if (key == "positive_ratio") {
    auto [p, n] = config_ratio(value, key);
    cfg.positive_parts = p;
    cfg.negative_parts = n;
  } else if (key == "test_fraction") cfg.test_fraction = config_double(value, key);
  else if (key == "background_level") cfg.background_level = config_double(value, key);
  else if (key == "jitter") cfg.jitter = config_double(value, key);
  else if (key == "noise") cfg.noise = config_double(value, key);
  else if (key == "blob_intensity") cfg.blob_intensity = config_double(value, key);
  else if (key == "blob_radius") cfg.blob_radius = config_double(value, key);
  else if (key == "blob_flicker") cfg.blob_flicker = config_double(value, key);
  else if (key == "run_min") cfg.run_min = config_int(value, key);
  else if (key == "run_max") cfg.run_max = config_int(value, key);
  else if (key == "actions") cfg.actions = config_int_list(value, key);
  else if (key == "resolutions") cfg.resolutions = config_int_list(value, key);
  else if (key == "stations") cfg.stations = config_int(value, key);
  else if (key == "alpha") cfg.alpha = config_double(value, key);
  else if (key == "beta") cfg.beta = config_double(value, key);
  else if (key == "gamma") cfg.gamma = config_double(value, key);
  else if (key == "tau_init") cfg.tau_init = config_double(value, key);
  else if (key == "tau_floor") cfg.tau_floor = config_double(value, key);
  else if (key == "balance_form") cfg.balance_form = value;
  else if (key == "policy_grad_clip") cfg.policy_grad_clip = config_double(value, key);
  else if (key == "hidden_dim") cfg.hidden_dim = config_int(value, key);
  else if (key == "cnn_widths") cfg.cnn_widths = config_int_list(value, key);
  else if (key == "norm_groups") cfg.norm_groups = config_int(value, key);
  else if (key == "policy_groups") cfg.policy_groups = config_int(value, key);
  else if (key == "attention") cfg.attention = value;
  else if (key == "attention_reduction") cfg.attention_reduction = config_int(value, key);
  else if (key == "attention_kernel") cfg.attention_kernel = config_int(value, key);
  else if (key == "eca_kernel") cfg.eca_kernel = config_int(value, key);
  else if (key == "sa_groups") cfg.sa_groups = config_int(value, key);
  else if (key == "phase1_epochs") cfg.phase1_epochs = config_int(value, key);
  else if (key == "phase2_epochs") cfg.phase2_epochs = config_int(value, key);
  else if (key == "phase3_epochs") cfg.phase3_epochs = config_int(value, key);
  else if (key == "phase1_lr") cfg.phase1_lr = config_double(value, key);
  else if (key == "phase2_lr") cfg.phase2_lr = config_double(value, key);
  else if (key == "phase3_lr") cfg.phase3_lr = config_double(value, key);
  else if (key == "lr_milestones") cfg.lr_milestones = config_double_list(value, key);
  else if (key == "momentum") cfg.momentum = config_double(value, key);
  else if (key == "weight_decay") cfg.weight_decay = config_double(value, key);
  else if (key == "batch_frames") cfg.batch_frames = config_int(value, key);
  else if (key == "batch_videos") cfg.batch_videos = config_int(value, key);
  else throw ConfigError(strformat("unknown config key '%s'", key.c_str()));
}

inline RunConfig parse_config(std::istream& in, const std::string& what) {
  RunConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(
          strformat("%s line %d: expected key=value, got '%s'", what.c_str(), line_no,
                    line.c_str()));
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(strformat("%s line %d: empty key", what.c_str(), line_no));
    }
    apply_config_entry(cfg, key, value);
  }
  return cfg;
}

inline RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw ConfigError(strformat("cannot open config file '%s'", path.c_str()));
  return parse_config(in, path);
}

}  // namespace clipforge
