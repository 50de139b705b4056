#pragma once

// Experiment configuration: one JSON document with the sections dataset,
// model, train, attacks and eval. Every key is optional; unknown keys and
// wrongly typed values raise ConfigError naming the JSON pointer path.

#include <cmath>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "shmguard/attacks.hpp"
#include "shmguard/data.hpp"
#include "shmguard/defenses.hpp"
#include "shmguard/errors.hpp"
#include "shmguard/rng.hpp"

namespace shmguard {

using nlohmann::json;

/// Reads one JSON object, remembering which keys were consumed so leftovers
/// can be reported.
class JsonSection {
 public:
  JsonSection(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  std::string where() const { return path_.empty() ? "/" : path_; }
  std::string key_path(const std::string& key) const { return path_ + "/" + key; }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    return as<T>(j_.at(key), key_path(key));
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  JsonSection section(const std::string& key) {
    static const json empty = json::object();
    return has(key) ? JsonSection(j_.at(key), key_path(key)) : JsonSection(empty, key_path(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.contains(k)) throw ConfigError("unknown key '" + key_path(k) + "'");
    }
  }

  template <class T>
  static T as(const json& v, const std::string& path) {
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
          throw ConfigError(path + ": expected a non-negative integer");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError(path + ": expected a number");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(path + ": expected true or false");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(path + ": expected a string");
      }
      return v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

struct DatasetConfig {
  /// "synthetic" or "csv".
  std::string source = "synthetic";
  std::string csv_path;
  SynthSpec synth = default_synth_spec();
  /// "raw" signals or Welch "frf" magnitudes (channel 0 as excitation).
  std::string features = "raw";
  std::size_t frf_segments = 5;
  NormMode normalization = NormMode::per_channel_zscore;
  double split_ratio = 0.8;
};

struct ModelConfig {
  /// "mlp" or "cnn".
  std::string preset = "mlp";
  std::size_t hidden = 17;
  std::string checkpoint;
};

/// Optimizer settings of the desk-scale benchmark: plain SGD, since momentum
/// 0.9 made PGD training collapse to constant predictions on some seeds.
inline TrainSpec benchmark_train_spec() {
  TrainSpec s;
  s.epochs = 40;
  s.batch_size = 32;
  s.learning_rate = 0.05F;
  s.optimizer = Optimizer::sgd;
  return s;
}

/// Training settings. Attack budgets used during training follow the
/// benchmark epsilon unless `epsilon` is set.
struct TrainConfig {
  TrainSpec spec = benchmark_train_spec();
  std::optional<float> epsilon;
  /// Circle-loss weight; unset means kDefaultCircleBeta for at_circle and 0
  /// for every other mode.
  std::optional<float> beta;
  std::size_t pgd_iters = 10;
  float pgd_step_ratio = 0.25F;
  float cw_c = 1.0F;
  std::size_t cw_iters = 50;
  float cw_lr = 0.01F;
};

/// One evaluation attack. A missing eps means the benchmark epsilon; a
/// missing step ratio means 1 for FGSM and 2.5 / iters otherwise.
struct AttackEntry {
  AttackFamily family = AttackFamily::pgd;
  std::optional<float> eps;
  std::size_t iters = 1;
  std::optional<float> step_ratio;
  bool random_start = false;
  float cw_c = 1.0F;
  float cw_k = 0.0F;
  std::size_t cw_iters = 100;
  float cw_lr = 0.01F;
  std::optional<std::size_t> target;
  std::string name;

  std::string label() const {
    if (!name.empty()) return name;
    std::string s(to_string(family));
    if (family == AttackFamily::bim || family == AttackFamily::pgd) s += "-" + std::to_string(iters);
    return s;
  }

  AttackSpec resolve(float benchmark_eps, std::uint64_t seed) const {
    AttackSpec s;
    s.family = family;
    s.eps = eps.value_or(benchmark_eps);
    s.iters = family == AttackFamily::bim || family == AttackFamily::pgd ? iters : 1;
    const float ratio = step_ratio.value_or(family == AttackFamily::fgsm ? 1.0F : 2.5F / static_cast<float>(s.iters));
    s.step = family == AttackFamily::cw_l2 || family == AttackFamily::gaussian ? 0.0F : ratio * s.eps;
    // A zero budget projects every step away; any positive step will do.
    if (s.eps == 0.0F && (family == AttackFamily::bim || family == AttackFamily::pgd)) s.step = ratio;
    s.random_start = random_start;
    s.cw_c = cw_c;
    s.cw_k = cw_k;
    s.cw_iters = cw_iters;
    s.cw_lr = cw_lr;
    s.cw_target = target;
    s.seed = seed;
    s.validate();
    return s;
  }
};

inline std::vector<AttackEntry> default_attacks() {
  AttackEntry fgsm{AttackFamily::fgsm};
  AttackEntry bim{AttackFamily::bim};
  bim.iters = 20;
  AttackEntry pgd{AttackFamily::pgd};
  pgd.iters = 20;
  pgd.random_start = true;
  AttackEntry cw{AttackFamily::cw_l2};
  return {fgsm, bim, pgd, cw};
}

struct CalibrationConfig {
  float start = 0.005F;
  float ratio = 1.5F;
  std::size_t max_steps = 24;
  double threshold = 0.30;
  std::size_t iters = 20;
};

inline constexpr float kDefaultCircleBeta = 0.1F;

struct ModelEntry {
  std::string id;
  TrainMode mode = TrainMode::standard;
  std::optional<std::size_t> hidden;
  std::optional<float> beta;
  /// Added to the run seed when building and training this model.
  std::uint64_t seed_offset = 0;
};

inline std::vector<ModelEntry> default_transfer_models() {
  return {{.id = "standard", .mode = TrainMode::standard},
          {.id = "pgd_at", .mode = TrainMode::pgd_at},
          {.id = "at_circle", .mode = TrainMode::at_circle},
          {.id = "substitute", .mode = TrainMode::standard, .hidden = 32, .seed_offset = 1}};
}

inline std::vector<ModelEntry> default_report_models() {
  return {{.id = "standard", .mode = TrainMode::standard},
          {.id = "fast_at", .mode = TrainMode::fast_at},
          {.id = "pgd_at", .mode = TrainMode::pgd_at},
          {.id = "at_circle", .mode = TrainMode::at_circle},
          {.id = "distill", .mode = TrainMode::distill}};
}

struct EvalConfig {
  std::optional<float> epsilon;
  CalibrationConfig calibration;
  /// Absolute noise levels; empty means {0, 0.5, 1, 2, 4} times epsilon.
  std::vector<float> gauss_sigmas;
  std::vector<ModelEntry> transfer_models = default_transfer_models();
  std::vector<ModelEntry> report_models = default_report_models();
  /// Tap subsets for the ablation; empty means every subset of the CNN taps.
  std::optional<std::vector<std::vector<std::string>>> ablation_subsets;
  SmoothingSpec smoothing;
  /// Whether the report includes a randomized-smoothing row built on the
  /// standard model.
  bool smoothing_baseline = true;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig train;
  std::vector<AttackEntry> attacks = default_attacks();
  EvalConfig eval;
};

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

inline ClassModes parse_class(JsonSection s) {
  ClassModes c;
  c.name = s.get<std::string>("name", "");
  c.freqs = s.get<std::vector<double>>("freqs", {});
  c.damping = s.get<std::vector<double>>("damping", {});
  c.amplitude = s.get<std::vector<double>>("amplitude", {});
  s.finish();
  if (c.name.empty()) throw ConfigError(s.where() + ": class needs a name");
  return c;
}

inline DatasetConfig parse_dataset(JsonSection s) {
  DatasetConfig d;
  d.source = s.get<std::string>("source", d.source);
  if (d.source != "synthetic" && d.source != "csv") throw ConfigError(s.key_path("source") + ": expected 'synthetic' or 'csv'");
  d.csv_path = s.get<std::string>("csv_path", "");
  if (d.source == "csv" && d.csv_path.empty()) throw ConfigError(s.key_path("csv_path") + ": required when source is 'csv'");
  {
    JsonSection g = s.section("synthetic");
    SynthSpec& sp = d.synth;
    sp.channels = g.get<std::size_t>("channels", sp.channels);
    sp.length = g.get<std::size_t>("length", sp.length);
    sp.sample_rate = g.get<double>("sample_rate", sp.sample_rate);
    sp.noise_floor = g.get<double>("noise_floor", sp.noise_floor);
    sp.freq_jitter = g.get<double>("freq_jitter", sp.freq_jitter);
    sp.amp_jitter = g.get<double>("amp_jitter", sp.amp_jitter);
    sp.phase_jitter = g.get<double>("phase_jitter", sp.phase_jitter);
    sp.samples_per_class = g.get<std::size_t>("samples_per_class", sp.samples_per_class);
    if (g.has("classes")) {
      const json& arr = g.raw("classes");
      if (!arr.is_array()) throw ConfigError(g.key_path("classes") + ": expected an array");
      sp.classes.clear();
      for (std::size_t i = 0; i < arr.size(); ++i) {
        sp.classes.push_back(parse_class(JsonSection(arr[i], g.key_path("classes") + "/" + std::to_string(i))));
      }
    }
    g.finish();
    try {
      sp.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(g.where() + ": " + e.what());
    }
  }
  d.features = s.get<std::string>("features", d.features);
  if (d.features != "raw" && d.features != "frf") throw ConfigError(s.key_path("features") + ": expected 'raw' or 'frf'");
  d.frf_segments = s.get<std::size_t>("frf_segments", d.frf_segments);
  if (s.has("normalization")) {
    try {
      d.normalization = norm_mode_from(s.get<std::string>("normalization", ""));
    } catch (const ConfigError& e) {
      throw ConfigError(s.key_path("normalization") + ": " + e.what());
    }
  }
  d.split_ratio = s.get<double>("split_ratio", d.split_ratio);
  if (!(d.split_ratio > 0 && d.split_ratio < 1)) throw ConfigError(s.key_path("split_ratio") + ": must lie in (0, 1)");
  s.finish();
  return d;
}

inline ModelConfig parse_model(JsonSection s) {
  ModelConfig m;
  m.preset = s.get<std::string>("preset", m.preset);
  if (m.preset != "mlp" && m.preset != "cnn") throw ConfigError(s.key_path("preset") + ": expected 'mlp' or 'cnn'");
  m.hidden = s.get<std::size_t>("hidden", m.hidden);
  if (m.hidden < 1) throw ConfigError(s.key_path("hidden") + ": must be >= 1");
  m.checkpoint = s.get<std::string>("checkpoint", "");
  s.finish();
  return m;
}

template <class F>
auto with_path(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline TrainConfig parse_train(JsonSection s) {
  TrainConfig t;
  TrainSpec& sp = t.spec;
  if (s.has("mode")) {
    const auto name = s.get<std::string>("mode", "");
    sp.mode = with_path(s.key_path("mode"), [&] { return train_mode_from(name); });
  }
  sp.epochs = s.get<std::size_t>("epochs", sp.epochs);
  sp.batch_size = s.get<std::size_t>("batch_size", sp.batch_size);
  sp.learning_rate = s.get<float>("learning_rate", sp.learning_rate);
  if (s.has("optimizer")) {
    const auto o = s.get<std::string>("optimizer", "");
    if (o == "sgd") sp.optimizer = Optimizer::sgd;
    else if (o == "sgd_momentum") sp.optimizer = Optimizer::sgd_momentum;
    else throw ConfigError(s.key_path("optimizer") + ": expected 'sgd' or 'sgd_momentum'");
  }
  sp.momentum = s.get<float>("momentum", sp.momentum);
  if (s.has("epsilon")) t.epsilon = s.get<float>("epsilon", 0.0F);
  {
    JsonSection m = s.section("attack_mix");
    sp.attack_mix.pgd = m.get<double>("pgd", sp.attack_mix.pgd);
    sp.attack_mix.fgsm = m.get<double>("fgsm", sp.attack_mix.fgsm);
    sp.attack_mix.cw = m.get<double>("cw", sp.attack_mix.cw);
    m.finish();
  }
  t.pgd_iters = s.get<std::size_t>("pgd_iters", t.pgd_iters);
  t.pgd_step_ratio = s.get<float>("pgd_step_ratio", t.pgd_step_ratio);
  t.cw_c = s.get<float>("cw_c", t.cw_c);
  t.cw_iters = s.get<std::size_t>("cw_iters", t.cw_iters);
  t.cw_lr = s.get<float>("cw_lr", t.cw_lr);
  sp.fast_step_scale = s.get<float>("fast_step_scale", sp.fast_step_scale);
  if (s.has("beta")) {
    t.beta = s.get<float>("beta", 0.0F);
    if (!(*t.beta >= 0)) throw ConfigError(s.key_path("beta") + ": must be >= 0");
  }
  {
    JsonSection c = s.section("circle");
    sp.loss.circle.margin = c.get<float>("margin", sp.loss.circle.margin);
    sp.loss.circle.gamma = c.get<float>("gamma", sp.loss.circle.gamma);
    c.finish();
  }
  sp.loss.tap_ids = s.get<std::vector<std::string>>("taps", sp.loss.tap_ids);
  {
    JsonSection d = s.section("distill");
    sp.distill.temperature = d.get<float>("temperature", sp.distill.temperature);
    sp.distill.lambda = d.get<float>("lambda", sp.distill.lambda);
    sp.distill.teacher_checkpoint = d.get<std::string>("teacher_checkpoint", "");
    d.finish();
  }
  s.finish();
  with_path(s.where(), [&] {
    TrainSpec probe = sp;
    probe.mode = TrainMode::standard;
    probe.validate();
    for (TrainMode m : {TrainMode::at_circle, TrainMode::distill}) {
      probe.mode = m;
      probe.pgd.eps = probe.fgsm.eps = probe.cw.eps = 0.1F;
      probe.pgd.step = 0.01F;
      probe.validate();
    }
    return 0;
  });
  if (t.pgd_iters < 1) throw ConfigError(s.key_path("pgd_iters") + ": must be >= 1");
  if (!(t.pgd_step_ratio > 0)) throw ConfigError(s.key_path("pgd_step_ratio") + ": must be > 0");
  if (t.epsilon && !(*t.epsilon >= 0)) throw ConfigError(s.key_path("epsilon") + ": must be >= 0");
  return t;
}

inline AttackEntry parse_attack(JsonSection s) {
  AttackEntry a;
  if (!s.has("family")) throw ConfigError(s.where() + ": attack needs a family");
  const auto fam = s.get<std::string>("family", "");
  a.family = with_path(s.key_path("family"), [&] { return attack_family_from(fam); });
  if (s.has("eps")) a.eps = s.get<float>("eps", 0.0F);
  a.iters = s.get<std::size_t>("iters", a.family == AttackFamily::fgsm ? 1 : 20);
  if (s.has("step_ratio")) a.step_ratio = s.get<float>("step_ratio", 0.0F);
  a.random_start = s.get<bool>("random_start", a.family == AttackFamily::pgd);
  a.cw_c = s.get<float>("cw_c", a.cw_c);
  a.cw_k = s.get<float>("cw_k", a.cw_k);
  a.cw_iters = s.get<std::size_t>("cw_iters", a.cw_iters);
  a.cw_lr = s.get<float>("cw_lr", a.cw_lr);
  if (s.has("target")) a.target = s.get<std::size_t>("target", 0);
  a.name = s.get<std::string>("name", "");
  s.finish();
  with_path(s.where(), [&] { return a.resolve(0.1F, 0); });
  return a;
}

inline ModelEntry parse_model_entry(JsonSection s) {
  ModelEntry m;
  m.id = s.get<std::string>("id", "");
  if (m.id.empty()) throw ConfigError(s.where() + ": model entry needs an id");
  if (s.has("mode")) {
    const auto name = s.get<std::string>("mode", "");
    m.mode = with_path(s.key_path("mode"), [&] { return train_mode_from(name); });
  }
  if (s.has("hidden")) m.hidden = s.get<std::size_t>("hidden", 0);
  if (s.has("beta")) {
    m.beta = s.get<float>("beta", 0.0F);
    if (!(*m.beta >= 0)) throw ConfigError(s.key_path("beta") + ": must be >= 0");
  }
  m.seed_offset = s.get<std::uint64_t>("seed_offset", 0);
  s.finish();
  return m;
}

inline std::vector<ModelEntry> parse_model_list(JsonSection& parent, const std::string& key, std::vector<ModelEntry> fallback) {
  if (!parent.has(key)) return fallback;
  const json& arr = parent.raw(key);
  if (!arr.is_array() || arr.empty()) throw ConfigError(parent.key_path(key) + ": expected a non-empty array");
  std::vector<ModelEntry> out;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    out.push_back(parse_model_entry(JsonSection(arr[i], parent.key_path(key) + "/" + std::to_string(i))));
    if (!ids.insert(out.back().id).second) {
      throw ConfigError(parent.key_path(key) + "/" + std::to_string(i) + ": duplicate model id '" + out.back().id + "'");
    }
  }
  return out;
}

inline EvalConfig parse_eval(JsonSection s) {
  EvalConfig e;
  if (s.has("epsilon")) {
    e.epsilon = s.get<float>("epsilon", 0.0F);
    if (!(*e.epsilon >= 0)) throw ConfigError(s.key_path("epsilon") + ": must be >= 0");
  }
  {
    JsonSection c = s.section("calibration");
    CalibrationConfig& cc = e.calibration;
    cc.start = c.get<float>("start", cc.start);
    cc.ratio = c.get<float>("ratio", cc.ratio);
    cc.max_steps = c.get<std::size_t>("max_steps", cc.max_steps);
    cc.threshold = c.get<double>("threshold", cc.threshold);
    cc.iters = c.get<std::size_t>("iters", cc.iters);
    c.finish();
    if (!(cc.start > 0) || !(cc.ratio > 1) || cc.max_steps < 1 || cc.iters < 1 || !(cc.threshold > 0 && cc.threshold <= 1)) {
      throw ConfigError(c.where() + ": need start > 0, ratio > 1, max_steps >= 1, iters >= 1, threshold in (0, 1]");
    }
  }
  e.gauss_sigmas = s.get<std::vector<float>>("gauss_sigmas", {});
  for (float v : e.gauss_sigmas) {
    if (!(v >= 0)) throw ConfigError(s.key_path("gauss_sigmas") + ": values must be >= 0");
  }
  e.transfer_models = parse_model_list(s, "transfer_models", e.transfer_models);
  e.report_models = parse_model_list(s, "report_models", e.report_models);
  if (s.has("ablation_subsets")) {
    e.ablation_subsets = s.get<std::vector<std::vector<std::string>>>("ablation_subsets", {});
  }
  {
    JsonSection r = s.section("smoothing");
    e.smoothing.sigma = r.get<float>("sigma", e.smoothing.sigma);
    e.smoothing.n_samples = r.get<std::size_t>("n_samples", e.smoothing.n_samples);
    e.smoothing.alpha = r.get<double>("alpha", e.smoothing.alpha);
    r.finish();
    with_path(r.where(), [&] {
      e.smoothing.validate();
      return 0;
    });
  }
  e.smoothing_baseline = s.get<bool>("smoothing_baseline", e.smoothing_baseline);
  s.finish();
  return e;
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& j) {
  JsonSection root(j, "");
  ExperimentConfig c;
  c.dataset = detail::parse_dataset(root.section("dataset"));
  c.model = detail::parse_model(root.section("model"));
  c.train = detail::parse_train(root.section("train"));
  if (root.has("attacks")) {
    const json& arr = root.raw("attacks");
    if (!arr.is_array()) throw ConfigError("/attacks: expected an array");
    c.attacks.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      c.attacks.push_back(detail::parse_attack(JsonSection(arr[i], "/attacks/" + std::to_string(i))));
    }
  }
  c.eval = detail::parse_eval(root.section("eval"));
  root.finish();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }
  return parse_config(j);
}

// ---------------------------------------------------------------------------
// Canonical form

/// A float as the double nearest its shortest decimal form, so 0.01F is
/// written as 0.01.
inline double float_json(float f) {
  if (!std::isfinite(f)) return f;
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, f);
  double d = 0.0;
  std::from_chars(buf, res.ptr, d);
  return d;
}

inline std::vector<double> float_json(const std::vector<float>& v) {
  std::vector<double> out;
  for (float f : v) out.push_back(float_json(f));
  return out;
}

namespace detail {

template <class T>
json opt(const std::optional<T>& v) {
  if (!v) return nullptr;
  if constexpr (std::is_same_v<T, float>) {
    return float_json(*v);
  } else {
    return *v;
  }
}

inline json model_entry_json(const ModelEntry& m) {
  return {{"id", m.id}, {"mode", std::string(to_string(m.mode))}, {"hidden", opt(m.hidden)}, {"beta", opt(m.beta)}, {"seed_offset", m.seed_offset}};
}

}  // namespace detail

/// Fully resolved configuration with every default filled in. Parsing this
/// document yields the same configuration.
inline json to_json(const ExperimentConfig& c) {
  using detail::opt;
  json classes = json::array();
  for (const auto& k : c.dataset.synth.classes) {
    classes.push_back({{"name", k.name}, {"freqs", k.freqs}, {"damping", k.damping}, {"amplitude", k.amplitude}});
  }
  const SynthSpec& sp = c.dataset.synth;
  json dataset = {{"source", c.dataset.source},
                  {"csv_path", c.dataset.csv_path},
                  {"synthetic",
                   {{"channels", sp.channels},
                    {"length", sp.length},
                    {"sample_rate", sp.sample_rate},
                    {"noise_floor", sp.noise_floor},
                    {"freq_jitter", sp.freq_jitter},
                    {"amp_jitter", sp.amp_jitter},
                    {"phase_jitter", sp.phase_jitter},
                    {"samples_per_class", sp.samples_per_class},
                    {"classes", classes}}},
                  {"features", c.dataset.features},
                  {"frf_segments", c.dataset.frf_segments},
                  {"normalization", std::string(to_string(c.dataset.normalization))},
                  {"split_ratio", c.dataset.split_ratio}};
  json model = {{"preset", c.model.preset},
                {"hidden", c.model.hidden},
                {"checkpoint", c.model.checkpoint}};
  const TrainSpec& t = c.train.spec;
  json train = {{"mode", std::string(to_string(t.mode))},
                {"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"learning_rate", float_json(t.learning_rate)},
                {"optimizer", t.optimizer == Optimizer::sgd ? "sgd" : "sgd_momentum"},
                {"momentum", float_json(t.momentum)},
                {"epsilon", opt(c.train.epsilon)},
                {"attack_mix", {{"pgd", t.attack_mix.pgd}, {"fgsm", t.attack_mix.fgsm}, {"cw", t.attack_mix.cw}}},
                {"pgd_iters", c.train.pgd_iters},
                {"pgd_step_ratio", float_json(c.train.pgd_step_ratio)},
                {"cw_c", float_json(c.train.cw_c)},
                {"cw_iters", c.train.cw_iters},
                {"cw_lr", float_json(c.train.cw_lr)},
                {"fast_step_scale", float_json(t.fast_step_scale)},
                {"beta", opt(c.train.beta)},
                {"circle", {{"margin", float_json(t.loss.circle.margin)}, {"gamma", float_json(t.loss.circle.gamma)}}},
                {"taps", t.loss.tap_ids},
                {"distill",
                 {{"temperature", float_json(t.distill.temperature)},
                  {"lambda", float_json(t.distill.lambda)},
                  {"teacher_checkpoint", t.distill.teacher_checkpoint}}}};
  json attacks = json::array();
  for (const auto& a : c.attacks) {
    attacks.push_back({{"family", std::string(to_string(a.family))},
                       {"eps", opt(a.eps)},
                       {"iters", a.iters},
                       {"step_ratio", opt(a.step_ratio)},
                       {"random_start", a.random_start},
                       {"cw_c", float_json(a.cw_c)},
                       {"cw_k", float_json(a.cw_k)},
                       {"cw_iters", a.cw_iters},
                       {"cw_lr", float_json(a.cw_lr)},
                       {"target", opt(a.target)},
                       {"name", a.name}});
  }
  const EvalConfig& e = c.eval;
  json transfer = json::array(), report = json::array();
  for (const auto& m : e.transfer_models) transfer.push_back(detail::model_entry_json(m));
  for (const auto& m : e.report_models) report.push_back(detail::model_entry_json(m));
  json eval = {{"epsilon", opt(e.epsilon)},
               {"calibration",
                {{"start", float_json(e.calibration.start)},
                 {"ratio", float_json(e.calibration.ratio)},
                 {"max_steps", e.calibration.max_steps},
                 {"threshold", e.calibration.threshold},
                 {"iters", e.calibration.iters}}},
               {"gauss_sigmas", float_json(e.gauss_sigmas)},
               {"transfer_models", transfer},
               {"report_models", report},
               {"ablation_subsets", opt(e.ablation_subsets)},
               {"smoothing", {{"sigma", float_json(e.smoothing.sigma)}, {"n_samples", e.smoothing.n_samples}, {"alpha", e.smoothing.alpha}}},
               {"smoothing_baseline", e.smoothing_baseline}};
  return {{"dataset", dataset}, {"model", model}, {"train", train}, {"attacks", attacks}, {"eval", eval}};
}

/// Fingerprint of the resolved configuration, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << fnv1a64(to_json(c).dump());
  return os.str();
}

}  // namespace shmguard
