#pragma once

// Experiment orchestration: data preparation, epsilon calibration, robustness
// tables, transfer matrices, Gaussian sweeps, layer ablation and report files.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "shmguard/attacks.hpp"
#include "shmguard/config.hpp"
#include "shmguard/data.hpp"
#include "shmguard/defenses.hpp"
#include "shmguard/nets.hpp"

namespace shmguard {

// ---------------------------------------------------------------------------
// Data and models

struct PreparedData {
  SignalDataset train;
  SignalDataset test;
  NormStats norm;
};

/// The dataset as configured, before feature extraction and normalization.
inline SignalDataset load_dataset(const DatasetConfig& cfg, std::uint64_t seed) {
  if (cfg.source == "csv") return load_csv(cfg.csv_path, load_schema(schema_path_for(cfg.csv_path)));
  SynthSpec spec = cfg.synth;
  spec.seed = seed;
  return generate(spec);
}

/// Features, stratified split, then normalization fitted on the training part.
inline PreparedData prepare_data(const DatasetConfig& cfg, std::uint64_t seed) {
  SignalDataset ds = load_dataset(cfg, seed);
  if (cfg.features == "frf") ds = frf_features(ds, cfg.frf_segments);
  auto [train, test] = split(ds, cfg.split_ratio, seed);
  PreparedData out{std::move(train), std::move(test), {}};
  out.norm = fit_normalization(out.train, cfg.normalization);
  out.norm.apply(out.train);
  out.norm.apply(out.test);
  return out;
}

inline Architecture make_arch(const ModelConfig& cfg, const SignalDataset& ds, std::optional<std::size_t> hidden = {}) {
  if (cfg.preset == "cnn") return cnn_preset(ds.channels(), ds.length(), ds.class_count());
  return mlp_preset({ds.channels(), ds.length()}, hidden.value_or(cfg.hidden), ds.class_count());
}

/// Training spec for one mode with every attack budget set to `eps`.
inline TrainSpec resolve_train_spec(const TrainConfig& cfg, TrainMode mode, float beta, float eps, std::uint64_t seed) {
  TrainSpec s = cfg.spec;
  s.mode = mode;
  s.seed = seed;
  s.loss.beta = beta;
  s.pgd = AttackSpec{AttackFamily::pgd, eps, cfg.pgd_step_ratio * eps, cfg.pgd_iters, true};
  s.fgsm = AttackSpec{AttackFamily::fgsm, eps, eps};
  s.cw = AttackSpec{AttackFamily::cw_l2, eps, 0.0F, 1, false, cfg.cw_c, 0.0F, cfg.cw_iters, cfg.cw_lr};
  s.validate();
  return s;
}

inline double accuracy_percent(std::span<const std::size_t> pred, std::span<const std::size_t> labels) {
  if (labels.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += pred[i] == labels[i] ? 1 : 0;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// Epsilon calibration

struct Calibration {
  float epsilon = 0.0F;
  /// False when the budget came from the config rather than the grid search.
  bool calibrated = true;
  /// False when no grid point pushed accuracy below the threshold; epsilon is
  /// then the last grid point.
  bool reached = true;
  std::vector<std::pair<float, double>> grid;  // (eps, accuracy %)

  json to_json() const {
    json g = json::array();
    for (const auto& [e, a] : grid) g.push_back({{"eps", float_json(e)}, {"accuracy", a}});
    return {{"epsilon", float_json(epsilon)}, {"calibrated", calibrated}, {"reached", reached}, {"grid", g}};
  }
};

/// Smallest eps on the grid start * ratio^k at which the model's PGD accuracy
/// falls below the threshold.
inline Calibration calibrate_epsilon(const Network& net, const SignalDataset& data, const CalibrationConfig& cfg,
                                     std::uint64_t seed) {
  Calibration c;
  float eps = cfg.start;
  for (std::size_t k = 0; k < cfg.max_steps; ++k, eps *= cfg.ratio) {
    AttackSpec s{AttackFamily::pgd, eps, 2.5F * eps / static_cast<float>(cfg.iters), cfg.iters, true};
    s.seed = derive_seed(seed, {k});
    const double acc = 100.0 * (1.0 - pgd(net, data.samples, data.labels, s).success_rate());
    c.grid.emplace_back(eps, acc);
    c.epsilon = eps;
    if (acc < 100.0 * cfg.threshold) return c;
  }
  c.reached = false;
  return c;
}

// ---------------------------------------------------------------------------
// Robustness reports

struct AttackRow {
  std::string attack;
  float eps = 0.0F;
  double accuracy = 0.0;  // percent
  double mean_linf = 0.0;
  double mean_l2 = 0.0;
  /// Mean over rows with a finite SNR; empty when no row has one.
  std::optional<double> mean_snr_db;
  std::size_t samples = 0;

  bool operator==(const AttackRow&) const = default;
};

struct RobustnessReport {
  std::string model_id;
  double clean_accuracy = 0.0;  // percent
  std::vector<AttackRow> rows;
  std::string config_hash;
  std::uint64_t seed = 0;

  bool operator==(const RobustnessReport&) const = default;

  json to_json() const {
    json r = json::array();
    for (const auto& row : rows) {
      r.push_back({{"attack", row.attack},
                   {"eps", float_json(row.eps)},
                   {"accuracy", row.accuracy},
                   {"mean_linf", row.mean_linf},
                   {"mean_l2", row.mean_l2},
                   {"mean_snr_db", row.mean_snr_db ? json(*row.mean_snr_db) : json(nullptr)},
                   {"samples", row.samples}});
    }
    return {{"model_id", model_id}, {"clean_accuracy", clean_accuracy}, {"rows", r}, {"config_hash", config_hash},
            {"seed", seed}};
  }

  static RobustnessReport from_json(const json& j) {
    RobustnessReport r;
    r.model_id = j.at("model_id").get<std::string>();
    r.clean_accuracy = j.at("clean_accuracy").get<double>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& row : j.at("rows")) {
      AttackRow a;
      a.attack = row.at("attack").get<std::string>();
      a.eps = row.at("eps").get<float>();
      a.accuracy = row.at("accuracy").get<double>();
      a.mean_linf = row.at("mean_linf").get<double>();
      a.mean_l2 = row.at("mean_l2").get<double>();
      if (!row.at("mean_snr_db").is_null()) a.mean_snr_db = row.at("mean_snr_db").get<double>();
      a.samples = row.at("samples").get<std::size_t>();
      r.rows.push_back(std::move(a));
    }
    return r;
  }
};

struct NamedAttack {
  std::string name;
  AttackSpec spec;
};

namespace detail {

inline AttackRow summarize(const std::string& name, float eps, const AdvBatch& adv, std::span<const std::size_t> pred,
                           std::span<const std::size_t> labels) {
  AttackRow row{name, eps, accuracy_percent(pred, labels), 0.0, 0.0, std::nullopt, labels.size()};
  double snr = 0.0;
  std::size_t finite = 0;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    row.mean_linf += adv.linf[i];
    row.mean_l2 += adv.l2[i];
    if (std::isfinite(adv.snr_db[i])) {
      snr += adv.snr_db[i];
      ++finite;
    }
  }
  if (adv.size() > 0) {
    row.mean_linf /= static_cast<double>(adv.size());
    row.mean_l2 /= static_cast<double>(adv.size());
  }
  if (finite > 0) row.mean_snr_db = snr / static_cast<double>(finite);
  return row;
}

}  // namespace detail

/// Accuracy of `net` on adversarial examples generated against itself.
inline RobustnessReport evaluate_robustness(const std::string& model_id, const Network& net, const SignalDataset& data,
                                            std::span<const NamedAttack> attacks, std::string config_hash = {},
                                            std::uint64_t seed = 0) {
  for (const auto& a : attacks) a.spec.validate();
  RobustnessReport rep{model_id, accuracy_percent(predict(net, data.samples), data.labels), {}, std::move(config_hash), seed};
  for (const auto& a : attacks) {
    AdvBatch adv = run_attack(net, data.samples, data.labels, a.spec);
    const auto pred = predict(net, adv.x_adv);
    rep.rows.push_back(detail::summarize(a.name, a.spec.eps, adv, pred, data.labels));
  }
  return rep;
}

/// Same table for the smoothed classifier: attacks target the base model and
/// abstentions count as errors.
inline RobustnessReport evaluate_smoothed(const std::string& model_id, const Network& net, const SignalDataset& data,
                                          std::span<const NamedAttack> attacks, const SmoothingSpec& smoothing,
                                          std::string config_hash = {}, std::uint64_t seed = 0) {
  auto smoothed_labels = [&](const Tensor& x) {
    std::vector<std::size_t> out;
    for (const auto& p : rs_predict(net, x, smoothing)) out.push_back(p.label.value_or(net.class_count));
    return out;
  };
  RobustnessReport rep{model_id, accuracy_percent(smoothed_labels(data.samples), data.labels), {}, std::move(config_hash),
                       seed};
  for (const auto& a : attacks) {
    AdvBatch adv = run_attack(net, data.samples, data.labels, a.spec);
    rep.rows.push_back(detail::summarize(a.name, a.spec.eps, adv, smoothed_labels(adv.x_adv), data.labels));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Transfer

struct TransferMatrix {
  std::string attack;
  std::vector<std::string> ids;
  /// cells[s][t]: accuracy % of model t on examples crafted against model s.
  std::vector<std::vector<double>> cells;

  std::vector<double> column_means() const {
    std::vector<double> m(ids.size(), 0.0);
    for (std::size_t t = 0; t < ids.size(); ++t) {
      for (std::size_t s = 0; s < ids.size(); ++s) m[t] += cells[s][t];
      m[t] /= static_cast<double>(ids.size());
    }
    return m;
  }

  std::vector<double> row_means() const {
    std::vector<double> m(ids.size(), 0.0);
    for (std::size_t s = 0; s < ids.size(); ++s) {
      for (std::size_t t = 0; t < ids.size(); ++t) m[s] += cells[s][t];
      m[s] /= static_cast<double>(ids.size());
    }
    return m;
  }

  double diagonal_mean() const {
    double d = 0.0;
    for (std::size_t i = 0; i < ids.size(); ++i) d += cells[i][i];
    return d / static_cast<double>(ids.size());
  }

  /// Mean over cells with source != target; NaN for a single model.
  double off_diagonal_mean() const {
    if (ids.size() < 2) return std::nan("");
    double d = 0.0;
    for (std::size_t s = 0; s < ids.size(); ++s) {
      for (std::size_t t = 0; t < ids.size(); ++t) d += s == t ? 0.0 : cells[s][t];
    }
    return d / static_cast<double>(ids.size() * (ids.size() - 1));
  }

  json to_json() const {
    const double off = off_diagonal_mean();
    return {{"attack", attack},
            {"ids", ids},
            {"cells", cells},
            {"column_means", column_means()},
            {"row_means", row_means()},
            {"diagonal_mean", diagonal_mean()},
            {"off_diagonal_mean", std::isnan(off) ? json(nullptr) : json(off)}};
  }
};

struct NamedModel {
  std::string id;
  const Network* net;
};

inline TransferMatrix transfer_matrix(std::span<const NamedModel> models, const NamedAttack& attack,
                                      const SignalDataset& data) {
  if (models.empty()) throw ConfigError("transfer matrix needs at least one model");
  for (const auto& m : models) {
    if (m.net->arch.input != models[0].net->arch.input || m.net->class_count != models[0].net->class_count) {
      throw ConfigError("model '" + m.id + "' is incompatible with '" + models[0].id + "' (input shape or classes differ)");
    }
  }
  attack.spec.validate();
  TransferMatrix tm{attack.name, {}, {}};
  for (const auto& src : models) {
    tm.ids.push_back(src.id);
    const AdvBatch adv = run_attack(*src.net, data.samples, data.labels, attack.spec);
    std::vector<double> row;
    for (const auto& tgt : models) row.push_back(accuracy_percent(predict(*tgt.net, adv.x_adv), data.labels));
    tm.cells.push_back(std::move(row));
  }
  return tm;
}

// ---------------------------------------------------------------------------
// Gaussian noise

struct GaussPoint {
  float sigma = 0.0F;
  double accuracy = 0.0;  // percent
  double mean_l2 = 0.0;
};

inline std::vector<GaussPoint> gaussian_sweep(const Network& net, const SignalDataset& data, std::span<const float> sigmas,
                                              std::uint64_t seed) {
  std::vector<GaussPoint> out;
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    AttackSpec s{AttackFamily::gaussian, sigmas[i]};
    s.seed = derive_seed(seed, {i});
    const AdvBatch adv = gaussian_attack(net, data.samples, data.labels, s);
    double l2 = 0.0;
    for (double v : adv.l2) l2 += v;
    out.push_back({sigmas[i], 100.0 * (1.0 - adv.success_rate()), adv.size() ? l2 / static_cast<double>(adv.size()) : 0.0});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Feature geometry

struct FeatureGeometry {
  double intra = 0.0;  // mean cosine over same-class pairs
  double inter = 0.0;  // mean cosine over different-class pairs
};

inline FeatureGeometry feature_geometry(const Network& net, const SignalDataset& data,
                                        std::string_view tap = kPenultimate) {
  const Tensor f = features_at(net, data.samples, tap);
  const std::size_t n = f.rows(), w = f.row_size();
  double intra = 0.0, inter = 0.0;
  std::size_t n_intra = 0, n_inter = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < w; ++k) dot += static_cast<double>(f[i * w + k]) * f[j * w + k];
      if (data.labels[i] == data.labels[j]) {
        intra += dot;
        ++n_intra;
      } else {
        inter += dot;
        ++n_inter;
      }
    }
  }
  return {n_intra ? intra / static_cast<double>(n_intra) : 0.0, n_inter ? inter / static_cast<double>(n_inter) : 0.0};
}

// ---------------------------------------------------------------------------
// Layer ablation

struct AblationRow {
  std::vector<std::string> taps;
  double clean = 0.0;  // percent
  double fgsm = 0.0;
  double bim = 0.0;
  bool recommended = false;

  std::string label() const {
    if (taps.empty()) return "None";
    std::string s;
    for (const auto& t : taps) s += (s.empty() ? "" : "+") + t;
    return s;
  }
};

/// Every subset of the architecture's taps, smallest first, then by tap order.
inline std::vector<std::vector<std::string>> all_tap_subsets(const Architecture& arch) {
  const auto ids = Network{arch}.tap_ids();
  std::vector<std::vector<std::string>> out;
  for (std::size_t size = 0; size <= ids.size(); ++size) {
    for (std::size_t mask = 0; mask < (std::size_t{1} << ids.size()); ++mask) {
      if (static_cast<std::size_t>(__builtin_popcountll(mask)) != size) continue;
      std::vector<std::string> s;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (mask & (std::size_t{1} << i)) s.push_back(ids[i]);
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

/// One at_circle run per tap subset from the same seed; the empty subset
/// trains with beta = 0.
inline std::vector<AblationRow> ablate_layers(const Architecture& arch, const PreparedData& data,
                                              std::span<const std::vector<std::string>> subsets, const TrainSpec& base,
                                              const AttackSpec& fgsm_spec, const AttackSpec& bim_spec) {
  const Network probe = build(arch, base.seed);
  for (const auto& s : subsets) {
    for (const auto& t : s) probe.tap_layer(t);
  }
  std::vector<AblationRow> rows;
  for (const auto& s : subsets) {
    TrainSpec spec = base;
    spec.mode = TrainMode::at_circle;
    spec.loss.tap_ids = s;
    if (s.empty()) spec.loss.beta = 0.0F;
    const Network net = adversarial_train(build(arch, base.seed), data.train, spec).net;
    AblationRow row{s};
    row.clean = accuracy_percent(predict(net, data.test.samples), data.test.labels);
    row.fgsm = 100.0 * (1.0 - fgsm(net, data.test.samples, data.test.labels, fgsm_spec).success_rate());
    row.bim = 100.0 * (1.0 - bim(net, data.test.samples, data.test.labels, bim_spec).success_rate());
    row.recommended = s.size() == 1 && probe.tap_layer(s[0]) == probe.penultimate_layer();
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Output

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw CorruptDataError(path.string() + ": " + e.what());
  }
}

/// Two-decimal fixed formatting for CSV cells.
inline std::string fixed2(double v) {
  if (std::isnan(v)) return "";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

inline const char* kRobustnessCsvHeader = "model,attack,eps,accuracy,mean_linf,mean_l2,mean_snr_db,samples,clean_accuracy,config_hash,seed\n";

inline std::string robustness_csv_rows(const RobustnessReport& r) {
  std::string s;
  for (const auto& row : r.rows) {
    s += csv_escape(r.model_id) + "," + csv_escape(row.attack) + "," + fixed2(row.eps) + "," + fixed2(row.accuracy) + "," +
         fixed2(row.mean_linf) + "," + fixed2(row.mean_l2) + "," + (row.mean_snr_db ? fixed2(*row.mean_snr_db) : "") +
         "," + std::to_string(row.samples) + "," + fixed2(r.clean_accuracy) + "," + r.config_hash + "," +
         std::to_string(r.seed) + "\n";
  }
  return s;
}

enum class ReportFormat { csv, json };

inline void emit_report(const RobustnessReport& r, ReportFormat format, const std::filesystem::path& path) {
  if (format == ReportFormat::json) {
    write_json(path, r.to_json());
  } else {
    write_text(path, kRobustnessCsvHeader + robustness_csv_rows(r));
  }
}

inline std::string transfer_csv(std::span<const TransferMatrix> ms) {
  std::string s = "attack,source,target,accuracy\n";
  for (const auto& m : ms) {
    for (std::size_t a = 0; a < m.ids.size(); ++a) {
      for (std::size_t b = 0; b < m.ids.size(); ++b) {
        s += csv_escape(m.attack) + "," + csv_escape(m.ids[a]) + "," + csv_escape(m.ids[b]) + "," + fixed2(m.cells[a][b]) + "\n";
      }
    }
    const auto means = m.column_means();
    for (std::size_t b = 0; b < m.ids.size(); ++b) {
      s += csv_escape(m.attack) + ",Mean," + csv_escape(m.ids[b]) + "," + fixed2(means[b]) + "\n";
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Session: config plus seed, with models trained on demand and cached

class Session {
 public:
  Session(ExperimentConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed), hash_(config_hash(cfg_)) {}

  const ExperimentConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  const std::string& hash() const { return hash_; }

  json header(const std::string& command) const {
    return {{"command", command}, {"config_hash", hash_}, {"seed", seed_}};
  }

  const PreparedData& data() {
    if (!data_) data_ = prepare_data(cfg_.dataset, seed_);
    return *data_;
  }

  Architecture arch(std::optional<std::size_t> hidden = {}) { return make_arch(cfg_.model, data().train, hidden); }

  /// Benchmark epsilon: eval.epsilon when set, else calibrated against the
  /// standard model.
  const Calibration& calibration() {
    if (!calibration_) {
      if (cfg_.eval.epsilon) {
        calibration_ = Calibration{*cfg_.eval.epsilon, false, true, {}};
      } else {
        calibration_ = calibrate_epsilon(model(standard_entry()), data().test, cfg_.eval.calibration,
                                         derive_seed(seed_, {kCalibrationTag}));
      }
    }
    return *calibration_;
  }

  float epsilon() { return calibration().epsilon; }
  float train_epsilon() { return cfg_.train.epsilon ? *cfg_.train.epsilon : epsilon(); }

  static ModelEntry standard_entry() { return {.id = "standard", .mode = TrainMode::standard}; }

  /// The model described by the train section (mode and beta as configured).
  ModelEntry configured_entry() const {
    ModelEntry e{.id = std::string(to_string(cfg_.train.spec.mode)), .mode = cfg_.train.spec.mode};
    e.beta = cfg_.train.beta;
    return e;
  }

  float beta_for(const ModelEntry& e) const {
    if (e.beta) return *e.beta;
    return e.mode == TrainMode::at_circle ? cfg_.train.beta.value_or(kDefaultCircleBeta) : 0.0F;
  }

  const TrainResult& train(const ModelEntry& e) {
    const std::string key = std::string(to_string(e.mode)) + "/" + std::to_string(e.hidden.value_or(0)) + "/" +
                            std::to_string(beta_for(e)) + "/" + std::to_string(e.seed_offset);
    auto it = trained_.find(key);
    if (it != trained_.end()) return it->second;
    const std::uint64_t s = seed_ + e.seed_offset;
    const float eps = e.mode == TrainMode::standard || e.mode == TrainMode::distill ? 0.0F : train_epsilon();
    TrainSpec spec = resolve_train_spec(cfg_.train, e.mode, beta_for(e), eps, s);
    TrainResult r = shmguard::train(build(arch(e.hidden), s), data().train, spec);
    return trained_.emplace(key, std::move(r)).first->second;
  }

  const Network& model(const ModelEntry& e) { return train(e).net; }

  /// model.checkpoint when set, else the configured model trained in-process.
  const Network& subject() {
    if (cfg_.model.checkpoint.empty()) return model(configured_entry());
    if (!loaded_) {
      loaded_ = load(cfg_.model.checkpoint);
      check_input(*loaded_, data().test.samples.shape);
      if (loaded_->class_count != data().test.class_count()) {
        throw ConfigError("checkpoint '" + cfg_.model.checkpoint + "' does not match the dataset's class count");
      }
    }
    return *loaded_;
  }

  std::string subject_id() const {
    return cfg_.model.checkpoint.empty() ? std::string(to_string(cfg_.train.spec.mode)) : cfg_.model.checkpoint;
  }

  std::vector<NamedAttack> attacks() {
    std::vector<NamedAttack> out;
    for (std::size_t i = 0; i < cfg_.attacks.size(); ++i) {
      const auto& a = cfg_.attacks[i];
      const float bench = a.eps ? 0.0F : epsilon();
      out.push_back({a.label(), a.resolve(bench, derive_seed(seed_, {kAttackTag, i}))});
    }
    return out;
  }

  std::vector<float> gauss_sigmas() {
    if (!cfg_.eval.gauss_sigmas.empty()) return cfg_.eval.gauss_sigmas;
    const float e = epsilon();
    return {0.0F, 0.5F * e, e, 2.0F * e, 4.0F * e};
  }

  SmoothingSpec smoothing() const {
    SmoothingSpec s = cfg_.eval.smoothing;
    s.seed = derive_seed(seed_, {kSmoothingTag});
    return s;
  }

 private:
  enum : std::uint64_t { kCalibrationTag = 11, kAttackTag = 12, kSmoothingTag = 13 };

  ExperimentConfig cfg_;
  std::uint64_t seed_;
  std::string hash_;
  std::optional<PreparedData> data_;
  std::optional<Calibration> calibration_;
  std::map<std::string, TrainResult> trained_;
  std::optional<Network> loaded_;
};

}  // namespace shmguard
