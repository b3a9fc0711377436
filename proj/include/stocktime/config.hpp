#pragma once

// Flat `key = value` run configuration. Every key has a default; unknown or
// malformed keys are rejected before any work starts.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "stocktime/baselines.hpp"
#include "stocktime/data.hpp"
#include "stocktime/model.hpp"
#include "stocktime/train.hpp"

namespace stocktime {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ValueKind { text, uint, real, boolean, choice, list };

struct KeySpec {
  std::string_view key;
  std::string_view default_value;
  ValueKind kind;
  std::string_view help;
  std::vector<std::string_view> choices = {};  // choice: allowed values; list: allowed items (empty = any)
};

inline const std::vector<KeySpec>& config_keys() {
  static const std::vector<KeySpec> keys = {
      {"data_path", "", ValueKind::text, "CSV of prices; empty means generate synthetic data"},
      {"frequency", "daily", ValueKind::choice, "bar frequency of the data", {"daily", "hourly"}},
      {"min_length", "0", ValueKind::uint, "drop shorter series; 0 means lookback + horizon + 1"},
      {"synth_kind", "ar1", ValueKind::choice, "synthetic generator", {"ar1", "gbm", "sector-factor"}},
      {"synth_stocks", "8", ValueKind::uint, "number of synthetic series"},
      {"synth_length", "2048", ValueKind::uint, "length of each synthetic series"},
      {"synth_phi", "0.9", ValueKind::real, "ar1 coefficient (factor persistence for sector-factor)"},
      {"synth_sigma", "0.02", ValueKind::real, "synthetic innovation scale"},
      {"synth_drift", "0", ValueKind::real, "gbm drift per step"},
      {"synth_factor_weight", "0.7", ValueKind::real, "sector-factor loading in [0,1]"},
      {"synth_sectors", "3", ValueKind::uint, "number of synthetic sectors (1..11)"},
      {"lookback", "32", ValueKind::uint, "input length d; must be a multiple of patch_len"},
      {"horizon", "8", ValueKind::uint, "forecast length x"},
      {"patch_len", "8", ValueKind::uint, "patch length l"},
      {"train_stride", "0", ValueKind::uint, "step between training windows; 0 means patch_len"},
      {"eval_stride", "0", ValueKind::uint, "step between validation/test windows; 0 means patch_len"},
      {"split_train", "0.7", ValueKind::real, "chronological train fraction"},
      {"split_valid", "0.1", ValueKind::real, "chronological validation fraction"},
      {"split_test", "0.2", ValueKind::real, "chronological test fraction"},
      {"encoder", "lstm", ValueKind::choice, "patch encoder", {"lstm", "mlp", "linear", "none"}},
      {"encoder_hidden", "256", ValueKind::uint, "encoder hidden width"},
      {"encoder_layers", "2", ValueKind::uint, "stacked lstm layers"},
      {"d_llm", "64", ValueKind::uint, "backbone width"},
      {"backbone_layers", "2", ValueKind::uint, "backbone transformer blocks"},
      {"backbone_heads", "4", ValueKind::uint, "attention heads per block"},
      {"backbone_ff", "256", ValueKind::uint, "backbone feed-forward width"},
      {"backbone_max_positions", "128", ValueKind::uint, "longest token sequence"},
      {"backbone_seed", "1234", ValueKind::uint, "seed of the frozen backbone weights"},
      {"backbone_weights", "", ValueKind::text, "checkpoint with backbone.* tensors; empty means seeded"},
      {"fusion", "add", ValueKind::choice, "how context joins price embeddings", {"add", "concat-project"}},
      {"fusion_enabled", "true", ValueKind::boolean, "add context embeddings to price embeddings"},
      {"stats_on_raw", "false", ValueKind::boolean, "context statistics on raw instead of normalized prices"},
      {"rollout_context", "true", ValueKind::boolean, "build context for predicted patches during rollout"},
      {"supervise_horizon", "false", ValueKind::boolean, "also supervise the first out-of-window patch"},
      {"lr", "0.001", ValueKind::real, "Adam learning rate"},
      {"epochs", "10", ValueKind::uint, "training epochs"},
      {"batch_size", "32", ValueKind::uint, "windows per optimizer step"},
      {"adam_beta1", "0.9", ValueKind::real, "Adam beta1"},
      {"adam_beta2", "0.999", ValueKind::real, "Adam beta2"},
      {"adam_eps", "1e-8", ValueKind::real, "Adam epsilon"},
      {"seed", "42", ValueKind::uint, "seed for data generation, initialization and batch order"},
      {"select_best", "true", ValueKind::boolean, "keep the epoch with the best validation IC"},
      {"baseline_hidden", "64", ValueKind::uint, "hidden width of rnn/lstm/alstm baselines"},
      {"baseline_layers", "1", ValueKind::uint, "recurrent layers of the baselines"},
      {"eval_models", "stocktime,persistence,rnn,lstm,alstm", ValueKind::list, "models scored by eval",
       {"stocktime", "persistence", "rnn", "lstm", "alstm"}},
      {"ablation_variants", "full,mlp_encoder,no_encoder,no_fusion,backbone_swap", ValueKind::list,
       "variants run by ablate", {"full", "mlp_encoder", "no_encoder", "no_fusion", "backbone_swap"}},
      {"sweep_axis", "lookback", ValueKind::choice, "parameter varied by sweep", {"lookback", "encoder_layers"}},
      {"sweep_values", "16,32,64,128,256", ValueKind::list, "values of the sweep axis"},
      {"checkpoint", "", ValueKind::text, "model checkpoint for forecast/eval; empty means train"},
      {"movement_tie", "up", ValueKind::choice, "label of a zero price change", {"up", "down"}},
      {"record_wall_time", "false", ValueKind::boolean, "write real timings into wall_secs (breaks byte identity)"},
      {"jobs", "1", ValueKind::uint, "worker threads for ablation and sweep cells"},
  };
  return keys;
}

inline const KeySpec* find_key(std::string_view key) {
  for (const auto& k : config_keys())
    if (k.key == key) return &k;
  return nullptr;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto item = trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::optional<std::uint64_t> parse_uint(std::string_view s) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<double> parse_real(std::string_view s) {
  const auto v = detail::parse_double(s);
  if (!v || !std::isfinite(*v)) return std::nullopt;
  return v;
}

inline std::optional<bool> parse_bool(std::string_view s) {
  if (s == "true") return true;
  if (s == "false") return false;
  return std::nullopt;
}

}  // namespace detail

class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : config_keys()) values_[std::string(k.key)] = std::string(k.default_value);
  }

  /// Parses `key = value` lines. `#` starts a comment anywhere on a line.
  static RunConfig parse(std::istream& in, const std::string& source = "<config>") {
    RunConfig cfg;
    std::map<std::string, std::size_t> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto where = source + ":" + std::to_string(line_no);
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto text = detail::trim(line);
      if (text.empty()) continue;
      const auto eq = text.find('=');
      if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value', got '" + text + "'");
      const auto key = detail::trim(std::string_view(text).substr(0, eq));
      const auto value = detail::trim(std::string_view(text).substr(eq + 1));
      if (key.empty()) throw ConfigError(where + ": missing key before '='");
      if (auto it = seen.find(key); it != seen.end()) {
        throw ConfigError(where + ": duplicate key '" + key + "' (first set on line " + std::to_string(it->second) + ")");
      }
      seen[key] = line_no;
      try {
        cfg.set(key, value);
      } catch (const ConfigError& e) {
        throw ConfigError(where + ": " + e.what());
      }
    }
    cfg.validate();
    return cfg;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    return parse(in, path);
  }

  /// Sets one key after checking its type. Cross-key checks run in validate().
  void set(const std::string& key, const std::string& value) {
    const KeySpec* spec = find_key(key);
    if (!spec) throw ConfigError("unknown key '" + key + "'");
    check_value(*spec, value);
    values_[key] = value;
  }

  const std::string& raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
    return it->second;
  }

  std::string text(const std::string& key) const { return raw(key); }
  std::size_t uint(const std::string& key) const { return static_cast<std::size_t>(*detail::parse_uint(raw(key))); }
  std::uint64_t u64(const std::string& key) const { return *detail::parse_uint(raw(key)); }
  double real(const std::string& key) const { return *detail::parse_real(raw(key)); }
  bool boolean(const std::string& key) const { return *detail::parse_bool(raw(key)); }
  std::vector<std::string> list(const std::string& key) const { return detail::split_list(raw(key)); }

  Frequency frequency() const { return *parse_frequency(raw("frequency")); }
  std::size_t patch_len() const { return uint("patch_len"); }
  std::size_t lookback() const { return uint("lookback"); }
  std::size_t horizon() const { return uint("horizon"); }
  std::size_t min_length() const {
    const auto v = uint("min_length");
    return v ? v : lookback() + horizon() + 1;
  }

  /// Every key, in registry order, as `key = value`.
  std::string resolved_text() const {
    std::string out = "# resolved configuration\n";
    for (const auto& k : config_keys()) {
      out += std::string(k.key) + " = " + values_.at(std::string(k.key)) + "\n";
    }
    return out;
  }

  ModelConfig model_config() const {
    ModelConfig m;
    m.patch_len = patch_len();
    m.encoder.kind = *parse_encoder_kind(raw("encoder"));
    m.encoder.hidden_dim = uint("encoder_hidden");
    m.encoder.num_layers = uint("encoder_layers");
    m.encoder.d_llm = uint("d_llm");
    m.backbone.d_llm = uint("d_llm");
    m.backbone.num_layers = uint("backbone_layers");
    m.backbone.num_heads = uint("backbone_heads");
    m.backbone.ff_dim = uint("backbone_ff");
    m.backbone.max_positions = uint("backbone_max_positions");
    m.backbone.seed = u64("backbone_seed");
    if (!raw("backbone_weights").empty()) m.backbone.weights_path = raw("backbone_weights");
    m.fusion_enabled = boolean("fusion_enabled");
    m.fusion = *parse_fusion_mode(raw("fusion"));
    m.stats_on_raw = boolean("stats_on_raw");
    m.rollout_context = boolean("rollout_context");
    m.seed = u64("seed");
    return m;
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.lr = real("lr");
    t.epochs = uint("epochs");
    t.batch_size = uint("batch_size");
    t.beta1 = real("adam_beta1");
    t.beta2 = real("adam_beta2");
    t.eps = real("adam_eps");
    t.seed = u64("seed");
    t.supervise_horizon = boolean("supervise_horizon");
    t.select_best = boolean("select_best");
    t.tie_is_up = raw("movement_tie") == "up";
    return t;
  }

  WindowOptions window_options() const {
    WindowOptions w;
    w.lookback = lookback();
    w.horizon = horizon();
    w.train_stride = uint("train_stride") ? uint("train_stride") : patch_len();
    w.eval_stride = uint("eval_stride") ? uint("eval_stride") : patch_len();
    w.split = {real("split_train"), real("split_valid"), real("split_test")};
    return w;
  }

  SyntheticSpec synthetic_spec() const {
    SyntheticSpec s;
    s.kind = *parse_synthetic_kind(raw("synth_kind"));
    s.stocks = uint("synth_stocks");
    s.length = uint("synth_length");
    s.seed = u64("seed");
    s.frequency = frequency();
    s.phi = real("synth_phi");
    s.sigma = real("synth_sigma");
    s.drift = real("synth_drift");
    s.factor_weight = real("synth_factor_weight");
    s.sectors = uint("synth_sectors");
    return s;
  }

  BaselineConfig baseline_config(BaselineKind kind) const {
    BaselineConfig b;
    b.kind = kind;
    b.hidden = uint("baseline_hidden");
    b.layers = uint("baseline_layers");
    b.horizon = horizon();
    b.seed = u64("seed");
    return b;
  }

  /// Cross-key consistency. Throws ConfigError naming the offending keys.
  void validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    const auto l = patch_len();
    if (l < 2) fail("patch_len must be >= 2");
    if (lookback() == 0 || lookback() % l != 0) {
      fail("lookback=" + std::to_string(lookback()) + " is not a positive multiple of patch_len=" + std::to_string(l));
    }
    if (horizon() == 0) fail("horizon must be >= 1");
    if (uint("epochs") == 0) fail("epochs must be >= 1");
    if (uint("batch_size") == 0) fail("batch_size must be >= 1");
    if (uint("jobs") == 0) fail("jobs must be >= 1");
    if (uint("baseline_hidden") == 0 || uint("baseline_layers") == 0) fail("baseline_hidden and baseline_layers must be >= 1");
    if (list("eval_models").empty()) fail("eval_models must name at least one model");
    if (list("ablation_variants").empty()) fail("ablation_variants must name at least one variant");
    const auto sweep = list("sweep_values");  // empty is a valid, vacuous sweep
    for (const auto& v : sweep) {
      const auto n = detail::parse_uint(v);
      if (!n || *n == 0) fail("sweep_values: '" + v + "' is not a positive integer");
      if (raw("sweep_axis") == "lookback" && *n % l != 0) {
        fail("sweep_values: lookback " + v + " is not a multiple of patch_len=" + std::to_string(l));
      }
    }
    try {
      window_options().split.validate();
      model_config().validate();
      train_config().validate();
      if (raw("data_path").empty()) {
        const auto s = synthetic_spec();
        if (s.length < 64) fail("synth_length must be >= 64");
        if (s.stocks == 0) fail("synth_stocks must be >= 1");
        if (!(std::abs(s.phi) < 1.0)) fail("synth_phi must satisfy |phi| < 1");
        if (!(s.sigma > 0.0)) fail("synth_sigma must be positive");
        if (!(s.factor_weight >= 0.0 && s.factor_weight <= 1.0)) fail("synth_factor_weight must lie in [0,1]");
        if (s.sectors == 0 || s.sectors > kSectors.size()) fail("synth_sectors must be in 1..11");
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }

  /// `--help` text: every key with its default.
  static std::string describe_keys() {
    std::string out = "configuration keys (key = default  description):\n";
    for (const auto& k : config_keys()) {
      std::string line = "  " + std::string(k.key) + " = " +
                         (k.default_value.empty() ? std::string("\"\"") : std::string(k.default_value));
      if (line.size() < 44) line.resize(44, ' ');
      else line += "  ";
      out += line + std::string(k.help);
      if (k.kind == ValueKind::choice) {
        out += " [";
        for (std::size_t i = 0; i < k.choices.size(); ++i) out += (i ? "|" : "") + std::string(k.choices[i]);
        out += "]";
      }
      out += "\n";
    }
    return out;
  }

 private:
  static void check_value(const KeySpec& spec, const std::string& value) {
    const std::string key(spec.key);
    switch (spec.kind) {
      case ValueKind::text:
        return;
      case ValueKind::uint:
        if (!detail::parse_uint(value)) throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
        return;
      case ValueKind::real:
        if (!detail::parse_real(value)) throw ConfigError(key + ": expected a finite number, got '" + value + "'");
        return;
      case ValueKind::boolean:
        if (!detail::parse_bool(value)) throw ConfigError(key + ": expected true or false, got '" + value + "'");
        return;
      case ValueKind::choice:
        if (std::find(spec.choices.begin(), spec.choices.end(), value) == spec.choices.end()) {
          std::string allowed;
          for (auto c : spec.choices) allowed += (allowed.empty() ? "" : ", ") + std::string(c);
          throw ConfigError(key + ": '" + value + "' is not one of " + allowed);
        }
        return;
      case ValueKind::list:
        for (const auto& item : detail::split_list(value)) {
          if (!spec.choices.empty() && std::find(spec.choices.begin(), spec.choices.end(), item) == spec.choices.end()) {
            throw ConfigError(key + ": unknown item '" + item + "'");
          }
        }
        return;
    }
  }

  std::map<std::string, std::string> values_;
};

}  // namespace stocktime
