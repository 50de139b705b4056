#pragma once

// Training procedures and randomized-smoothing prediction.
//
// Every trainer shares one loop: shuffle per epoch, build the batch inputs
// (clean or adversarial, generated against the parameters at the start of the
// step), take one SGD step on the batch loss. All randomness is derived from
// (seed, epoch, batch, purpose) so runs are bit-reproducible.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "shmguard/attacks.hpp"
#include "shmguard/autodiff.hpp"
#include "shmguard/data.hpp"
#include "shmguard/errors.hpp"
#include "shmguard/losses.hpp"
#include "shmguard/nets.hpp"
#include "shmguard/rng.hpp"

namespace shmguard {

enum class TrainMode { standard, at_circle, pgd_at, fast_at, distill };

inline std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::standard: return "standard";
    case TrainMode::at_circle: return "at_circle";
    case TrainMode::pgd_at: return "pgd_at";
    case TrainMode::fast_at: return "fast_at";
    case TrainMode::distill: return "distill";
  }
  return "?";
}

inline TrainMode train_mode_from(std::string_view s) {
  for (auto m : {TrainMode::standard, TrainMode::at_circle, TrainMode::pgd_at, TrainMode::fast_at, TrainMode::distill}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown training mode '" + std::string(s) + "'");
}

enum class Optimizer { sgd, sgd_momentum };

/// Attack family proportions for mixed adversarial training, in the fixed
/// order PGD, FGSM, C&W.
struct AttackMix {
  double pgd = 3.0;
  double fgsm = 1.0;
  double cw = 1.0;

  std::array<double, 3> weights() const { return {pgd, fgsm, cw}; }

  void validate() const {
    for (double w : weights()) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("attack_mix entries must be finite and >= 0");
    }
    if (pgd + fgsm + cw <= 0.0) throw ConfigError("attack_mix must not be all zero");
  }
};

/// Largest-remainder apportionment of n samples over the mix weights. Ties in
/// the remainder go to the earlier family.
inline std::array<std::size_t, 3> mix_counts(const AttackMix& mix, std::size_t n) {
  mix.validate();
  const auto w = mix.weights();
  const double total = w[0] + w[1] + w[2];
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = static_cast<double>(n) * w[i] / total;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    rem[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[order[k % 3]];
  return counts;
}

struct DistillSpec {
  float temperature = 2048.0F;
  /// Weight of the temperature-softened teacher term.
  float lambda = 0.4F;
  /// Existing teacher checkpoint; empty means train one first.
  std::string teacher_checkpoint;
};

struct TrainSpec {
  TrainMode mode = TrainMode::standard;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  float learning_rate = 0.05F;
  Optimizer optimizer = Optimizer::sgd_momentum;
  float momentum = 0.9F;
  std::uint64_t seed = 0;
  AttackMix attack_mix;
  AttackSpec pgd{AttackFamily::pgd, 0.1F, 0.025F, 10, true};
  AttackSpec fgsm{AttackFamily::fgsm, 0.1F};
  AttackSpec cw{AttackFamily::cw_l2, 0.1F, 0.0F, 1, false, 1.0F, 0.0F, 50};
  /// Fast-AT step as a multiple of eps (taken from the fgsm spec).
  float fast_step_scale = 1.25F;
  CombinedLossSpec loss;
  DistillSpec distill;

  void validate() const {
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(learning_rate > 0.0F)) throw ConfigError("train.learning_rate must be > 0");
    if (!(momentum >= 0.0F && momentum < 1.0F)) throw ConfigError("train.momentum must lie in [0, 1)");
    if (!(fast_step_scale > 0.0F)) throw ConfigError("train.fast_step_scale must be > 0");
    loss.validate();
    if (mode == TrainMode::at_circle) attack_mix.validate();
    if (mode == TrainMode::at_circle || mode == TrainMode::pgd_at) pgd.validate();
    if (mode == TrainMode::at_circle || mode == TrainMode::fast_at) fgsm.validate();
    if (mode == TrainMode::at_circle && attack_mix.cw > 0) cw.validate();
    if (mode == TrainMode::distill) {
      if (!(distill.temperature > 0.0F)) throw ConfigError("distill.temperature must be > 0");
      if (!(distill.lambda >= 0.0F && distill.lambda <= 1.0F)) throw ConfigError("distill.lambda must lie in [0, 1]");
    }
  }
};

struct EpochLog {
  double loss = 0.0;
  double clean_accuracy = 0.0;
  /// Share of generated adversarial examples still classified correctly.
  std::optional<double> adversarial_accuracy;
  std::array<std::size_t, 3> family_counts{};
};

struct TrainLog {
  std::vector<EpochLog> epochs;
};

struct TrainResult {
  Network net;
  TrainLog log;
};

inline double accuracy(const Network& net, const Tensor& x, std::span<const std::size_t> labels) {
  if (labels.empty()) return 0.0;
  const auto pred = predict(net, x);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

namespace detail {

/// Purpose tags for derived random streams.
enum : std::uint64_t { kShuffle = 1, kAttack = 2, kTeacher = 3 };

struct BatchInputs {
  Tensor x;
  std::array<std::size_t, 3> counts{};
  std::size_t adversarial = 0;
  std::size_t still_correct = 0;
};

using BatchBuilder = std::function<BatchInputs(const Network&, const Tensor&, std::span<const std::size_t>,
                                               std::size_t epoch, std::size_t batch)>;
using BatchLoss = std::function<Var(const Network&, const ForwardTrace&, std::span<const std::size_t>,
                                    std::span<const std::size_t> rows)>;

inline BatchInputs clean_inputs(const Network&, const Tensor& x, std::span<const std::size_t>, std::size_t, std::size_t) {
  return {x, {}, 0, 0};
}

/// Splits the batch by the mix and replaces each block with adversarial
/// examples from its family.
inline BatchInputs mixed_inputs(const Network& net, const Tensor& x, std::span<const std::size_t> y,
                                const TrainSpec& spec, const AttackMix& mix, std::size_t epoch, std::size_t batch) {
  BatchInputs out{Tensor(x.shape, std::vector<float>(x.data)), mix_counts(mix, x.rows()), 0, 0};
  const std::array<const AttackSpec*, 3> specs{&spec.pgd, &spec.fgsm, &spec.cw};
  std::size_t first = 0;
  const std::size_t w = x.row_size();
  for (std::size_t fam = 0; fam < 3; ++fam) {
    const std::size_t n = out.counts[fam];
    if (n == 0) continue;
    AttackSpec s = *specs[fam];
    s.seed = derive_seed(spec.seed, {kAttack, epoch, batch, fam});
    const Tensor part = slice_rows(x, first, n);
    AdvBatch adv = run_attack(net, part, y.subspan(first, n), s);
    std::copy(adv.x_adv.data.begin(), adv.x_adv.data.end(), out.x.data.begin() + static_cast<std::ptrdiff_t>(first * w));
    out.adversarial += n;
    for (bool ok : adv.success) out.still_correct += ok ? 0 : 1;
    first += n;
  }
  return out;
}

inline BatchInputs fast_inputs(const Network& net, const Tensor& x, std::span<const std::size_t> y,
                               const TrainSpec& spec, std::size_t epoch, std::size_t batch) {
  AttackSpec s = spec.fgsm;
  s.family = AttackFamily::pgd;
  s.random_start = true;
  s.iters = 1;
  s.step = spec.fast_step_scale * spec.fgsm.eps;
  if (!(s.step > 0.0F)) return clean_inputs(net, x, y, epoch, batch);
  s.seed = derive_seed(spec.seed, {kAttack, epoch, batch, 1});
  AdvBatch adv = pgd(net, x, y, s);
  BatchInputs out{std::move(adv.x_adv), {0, x.rows(), 0}, x.rows(), 0};
  for (bool ok : adv.success) out.still_correct += ok ? 0 : 1;
  return out;
}

inline void check_training_data(const Network& net, const SignalDataset& data) {
  data.validate();
  check_input(net, data.samples.shape);
  if (data.class_count() != net.class_count) {
    throw ConfigError("dataset has " + std::to_string(data.class_count()) + " classes, network outputs " +
                      std::to_string(net.class_count));
  }
}

inline TrainResult train_loop(Network net, const SignalDataset& data, const TrainSpec& spec,
                              const BatchBuilder& make_inputs, const BatchLoss& batch_loss, std::string mode_name) {
  check_training_data(net, data);
  const std::size_t n = data.size();
  std::vector<std::vector<float>> velocity;
  for (const Tensor& p : net.params) velocity.emplace_back(p.size(), 0.0F);
  const float mu = spec.optimizer == Optimizer::sgd_momentum ? spec.momentum : 0.0F;
  TrainLog log;
  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(spec.seed, {kShuffle, epoch}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochLog ep;
    std::size_t adv_total = 0, adv_correct = 0, batches = 0;
    double loss_sum = 0.0;
    for (std::size_t start = 0, b = 0; start < n; start += spec.batch_size, ++b) {
      const std::size_t len = std::min(spec.batch_size, n - start);
      std::span<const std::size_t> rows(order.data() + start, len);
      const Tensor xb = take_rows(data.samples, rows);
      std::vector<std::size_t> yb;
      for (std::size_t r : rows) yb.push_back(data.labels[r]);

      double value = 0.0;
      try {
        BatchInputs in = make_inputs(net, xb, yb, epoch, b);
        for (std::size_t f = 0; f < 3; ++f) ep.family_counts[f] += in.counts[f];
        adv_total += in.adversarial;
        adv_correct += in.still_correct;

        Tape tape;
        auto params = bind_params(tape, net, true);
        auto tr = forward(net, tape, params, tape.constant(std::move(in.x)));
        Var loss = batch_loss(net, tr, yb, rows);
        value = loss.value()[0];
        tape.backward(loss);
        for (std::size_t p = 0; p < net.params.size(); ++p) {
          const Tensor g = tape.gradient(params[p]);
          float* w = net.params[p].data.data();
          for (std::size_t i = 0; i < g.size(); ++i) {
            velocity[p][i] = mu * velocity[p][i] + g[i];
            w[i] -= spec.learning_rate * velocity[p][i];
          }
          if (!net.params[p].all_finite()) throw NumericError("non-finite parameter after update");
        }
      } catch (const NumericError& e) {
        throw NumericError("training diverged (" + mode_name + ", epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b) + "): " + e.what());
      }
      loss_sum += value;
      ++batches;
    }
    ep.loss = loss_sum / static_cast<double>(batches);
    try {
      ep.clean_accuracy = accuracy(net, data.samples, data.labels);
    } catch (const NumericError& e) {
      throw NumericError("training diverged (" + mode_name + ", end of epoch " + std::to_string(epoch) + "): " + e.what());
    }
    if (adv_total > 0) ep.adversarial_accuracy = static_cast<double>(adv_correct) / static_cast<double>(adv_total);
    log.epochs.push_back(ep);
  }
  net.meta.seed = spec.seed;
  net.meta.loss_mode = std::move(mode_name);
  net.meta.epoch = spec.epochs;
  return {std::move(net), std::move(log)};
}

}  // namespace detail

/// Clean-input training on the combined loss (beta = 0 is plain CE).
inline TrainResult standard_train(Network net, const SignalDataset& data, const TrainSpec& spec) {
  spec.validate();
  if (spec.mode != TrainMode::standard) throw ConfigError("standard_train needs mode 'standard'");
  const CombinedLossSpec loss = spec.loss;
  return detail::train_loop(
      std::move(net), data, spec, detail::clean_inputs,
      [loss](const Network& n, const ForwardTrace& tr, std::span<const std::size_t> y, std::span<const std::size_t>) {
        return combined_loss(n, tr, y, loss);
      },
      "standard");
}

/// at_circle: mixed PGD/FGSM/C&W batches with the combined loss.
/// pgd_at: all-PGD batches with cross-entropy. fast_at: one random-start
/// FGSM step of fast_step_scale * eps, then projection, with cross-entropy.
inline TrainResult adversarial_train(Network net, const SignalDataset& data, const TrainSpec& spec) {
  spec.validate();
  const CombinedLossSpec circle = spec.loss;
  const CombinedLossSpec plain{spec.loss.circle, 0.0F, spec.loss.tap_ids};
  auto loss_of = [](CombinedLossSpec ls) -> detail::BatchLoss {
    return [ls](const Network& n, const ForwardTrace& tr, std::span<const std::size_t> y, std::span<const std::size_t>) {
      return combined_loss(n, tr, y, ls);
    };
  };
  switch (spec.mode) {
    case TrainMode::at_circle:
      return detail::train_loop(
          std::move(net), data, spec,
          [&spec](const Network& n, const Tensor& x, std::span<const std::size_t> y, std::size_t e, std::size_t b) {
            return detail::mixed_inputs(n, x, y, spec, spec.attack_mix, e, b);
          },
          loss_of(circle), "at_circle");
    case TrainMode::pgd_at:
      return detail::train_loop(
          std::move(net), data, spec,
          [&spec](const Network& n, const Tensor& x, std::span<const std::size_t> y, std::size_t e, std::size_t b) {
            return detail::mixed_inputs(n, x, y, spec, AttackMix{1.0, 0.0, 0.0}, e, b);
          },
          loss_of(plain), "pgd_at");
    case TrainMode::fast_at:
      return detail::train_loop(
          std::move(net), data, spec,
          [&spec](const Network& n, const Tensor& x, std::span<const std::size_t> y, std::size_t e, std::size_t b) {
            return detail::fast_inputs(n, x, y, spec, e, b);
          },
          loss_of(plain), "fast_at");
    default: throw ConfigError("adversarial_train needs mode at_circle, pgd_at or fast_at");
  }
}

/// Trains a teacher at temperature T (or loads one), then a student of the
/// same architecture on lambda * T^2 * softCE(z_s / T, softmax(z_t / T)) +
/// (1 - lambda) * CE(z_s, y).
inline TrainResult distill_train(const Architecture& arch, const SignalDataset& data, const TrainSpec& spec) {
  spec.validate();
  if (spec.mode != TrainMode::distill) throw ConfigError("distill_train needs mode 'distill'");
  const float T = spec.distill.temperature;
  const float lambda = spec.distill.lambda;

  Network teacher;
  if (!spec.distill.teacher_checkpoint.empty()) {
    if (!std::filesystem::exists(spec.distill.teacher_checkpoint)) {
      throw IoError("teacher checkpoint '" + spec.distill.teacher_checkpoint + "' does not exist");
    }
    teacher = load(spec.distill.teacher_checkpoint);
    if (!(teacher.arch == arch)) throw ConfigError("teacher and student architectures differ");
  } else if (lambda > 0.0F) {
    TrainSpec ts = spec;
    ts.seed = derive_seed(spec.seed, {detail::kTeacher});
    teacher = detail::train_loop(
                  build(arch, ts.seed), data, ts, detail::clean_inputs,
                  [T](const Network&, const ForwardTrace& tr, std::span<const std::size_t> y, std::span<const std::size_t>) {
                    return cross_entropy(T == 1.0F ? tr.logits : scale(tr.logits, 1.0F / T), y);
                  },
                  "distill_teacher")
                  .net;
  }

  Tensor soft;
  if (lambda > 0.0F) soft = softmax_rows(forward_logits(teacher, data.samples), T);
  const std::size_t classes = data.class_count();
  auto loss = [&, T, lambda, classes](const Network&, const ForwardTrace& tr, std::span<const std::size_t> y,
                                      std::span<const std::size_t> rows) {
    Var hard = cross_entropy(tr.logits, y);
    if (lambda == 0.0F) return hard;
    Tensor targets(Shape{rows.size(), classes});
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::copy_n(soft.data.begin() + static_cast<std::ptrdiff_t>(rows[r] * classes), classes,
                  targets.data.begin() + static_cast<std::ptrdiff_t>(r * classes));
    }
    Var soft_term = scale(soft_cross_entropy(tr.logits, targets, T), lambda * T * T);
    if (lambda == 1.0F) return soft_term;
    return add(soft_term, scale(hard, 1.0F - lambda));
  };
  return detail::train_loop(build(arch, spec.seed), data, spec, detail::clean_inputs, loss, "distill");
}

/// Dispatches on spec.mode. Distillation builds its own student from `net.arch`.
inline TrainResult train(Network net, const SignalDataset& data, const TrainSpec& spec) {
  switch (spec.mode) {
    case TrainMode::standard: return standard_train(std::move(net), data, spec);
    case TrainMode::distill: return distill_train(net.arch, data, spec);
    default: return adversarial_train(std::move(net), data, spec);
  }
}

// ---------------------------------------------------------------------------
// Randomized smoothing

struct SmoothingSpec {
  float sigma = 0.003F;
  std::size_t n_samples = 100;
  double alpha = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(sigma >= 0.0F)) throw ConfigError("smoothing sigma must be >= 0");
    if (n_samples < 2) throw ConfigError("smoothing n_samples must be >= 2");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("smoothing alpha must lie in (0, 1)");
  }
};

struct SmoothedPrediction {
  std::optional<std::size_t> label;  // empty means abstain
  std::size_t n_a = 0;
  std::size_t n_b = 0;
  double p_value = 0.0;
};

/// P(X >= k) for X ~ Binomial(n, 1/2).
inline double binomial_upper_tail_half(std::size_t k, std::size_t n) {
  if (k == 0) return 1.0;
  if (k > n) return 0.0;
  // Sum pmf terms in log space from the largest term outward.
  const double ln2n = static_cast<double>(n) * std::log(2.0);
  auto log_pmf = [&](std::size_t i) {
    return std::lgamma(static_cast<double>(n) + 1) - std::lgamma(static_cast<double>(i) + 1) -
           std::lgamma(static_cast<double>(n - i) + 1) - ln2n;
  };
  const double top = log_pmf(std::max(k, (n + 1) / 2));
  long double s = 0.0L;
  for (std::size_t i = k; i <= n; ++i) s += std::exp(static_cast<long double>(log_pmf(i) - top));
  return std::min(1.0, static_cast<double>(std::exp(static_cast<long double>(top)) * s));
}

/// Abstention rule on a vote split: keep the top class iff the one-sided
/// binomial test of n_a against n_a + n_b at p = 1/2 rejects at alpha.
inline bool rs_abstains(std::size_t n_a, std::size_t n_b, double alpha, double* p_out = nullptr) {
  const double p = binomial_upper_tail_half(n_a, n_a + n_b);
  if (p_out) *p_out = p;
  return p > alpha;
}

/// Smoothed prediction for every row of x. sigma = 0 returns the base label.
inline std::vector<SmoothedPrediction> rs_predict(const Network& net, const Tensor& x, const SmoothingSpec& spec) {
  spec.validate();
  check_input(net, x.shape);
  const std::size_t w = x.row_size();
  std::vector<SmoothedPrediction> out(x.rows());
  if (spec.sigma == 0.0F) {
    const auto base = predict(net, x);
    for (std::size_t r = 0; r < x.rows(); ++r) out[r] = {base[r], spec.n_samples, 0, 0.0};
    return out;
  }
  Shape noisy_shape = x.shape;
  noisy_shape[0] = spec.n_samples;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    Tensor noisy(noisy_shape);
    for (std::size_t s = 0; s < spec.n_samples; ++s) {
      std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(r * w), w,
                  noisy.data.begin() + static_cast<std::ptrdiff_t>(s * w));
    }
    noisy = gaussian_perturb(noisy, spec.sigma, derive_seed(spec.seed, {r}));
    std::vector<std::size_t> votes(net.class_count, 0);
    for (std::size_t p : predict(net, noisy)) ++votes[p];
    const auto top = static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    std::size_t runner = 0;
    for (std::size_t c = 0; c < votes.size(); ++c) {
      if (c != top) runner = std::max(runner, votes[c]);
    }
    SmoothedPrediction sp{top, votes[top], runner, 0.0};
    if (rs_abstains(sp.n_a, sp.n_b, spec.alpha, &sp.p_value)) sp.label.reset();
    out[r] = sp;
  }
  return out;
}

}  // namespace shmguard
