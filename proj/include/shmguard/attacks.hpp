#pragma once

// White-box adversarial example generators and perturbation statistics.
//
// Sign-gradient attacks differentiate the summed per-sample cross-entropy with
// respect to the input batch. Samples never interact, so one tape per batch
// gives the same gradients as one tape per sample.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "shmguard/autodiff.hpp"
#include "shmguard/errors.hpp"
#include "shmguard/losses.hpp"
#include "shmguard/nets.hpp"
#include "shmguard/rng.hpp"
#include "shmguard/tensor.hpp"

namespace shmguard {

enum class AttackFamily { fgsm, bim, pgd, cw_l2, gaussian };

inline std::string_view to_string(AttackFamily f) {
  switch (f) {
    case AttackFamily::fgsm: return "fgsm";
    case AttackFamily::bim: return "bim";
    case AttackFamily::pgd: return "pgd";
    case AttackFamily::cw_l2: return "cw_l2";
    case AttackFamily::gaussian: return "gaussian";
  }
  return "?";
}

inline AttackFamily attack_family_from(std::string_view s) {
  for (auto f : {AttackFamily::fgsm, AttackFamily::bim, AttackFamily::pgd, AttackFamily::cw_l2,
                 AttackFamily::gaussian}) {
    if (to_string(f) == s) return f;
  }
  throw ConfigError("unknown attack family '" + std::string(s) + "'");
}

struct AttackSpec {
  AttackFamily family = AttackFamily::fgsm;
  /// L-inf budget. For gaussian it is the noise standard deviation. C&W treats
  /// +inf as unconstrained.
  float eps = 0.0F;
  float step = 0.0F;
  std::size_t iters = 1;
  bool random_start = false;
  float cw_c = 1.0F;
  float cw_k = 0.0F;
  std::size_t cw_iters = 100;
  float cw_lr = 0.01F;
  std::optional<std::size_t> cw_target;
  std::optional<std::pair<float, float>> clamp_range;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(eps >= 0.0F)) throw ConfigError("attack eps must be >= 0");
    if (clamp_range && !(clamp_range->first < clamp_range->second)) {
      throw ConfigError("attack clamp_range must satisfy lo < hi");
    }
    switch (family) {
      case AttackFamily::bim:
      case AttackFamily::pgd:
        if (!(step > 0.0F)) throw ConfigError("attack step must be > 0 for iterative families");
        if (iters < 1) throw ConfigError("attack iters must be >= 1");
        break;
      case AttackFamily::cw_l2:
        if (!(cw_c > 0.0F)) throw ConfigError("cw_c must be > 0");
        if (!(cw_k >= 0.0F)) throw ConfigError("cw_k must be >= 0");
        if (cw_iters < 1) throw ConfigError("cw_iters must be >= 1");
        if (!(cw_lr > 0.0F)) throw ConfigError("cw_lr must be > 0");
        break;
      default: break;
    }
  }

  std::string name() const { return std::string(to_string(family)); }
};

struct AdvBatch {
  Tensor x_adv;
  std::vector<double> linf;
  std::vector<double> l2;
  std::vector<double> snr_db;
  std::vector<bool> success;

  std::size_t size() const { return success.size(); }
  double success_rate() const {
    if (success.empty()) return 0.0;
    return static_cast<double>(std::count(success.begin(), success.end(), true)) / static_cast<double>(success.size());
  }
};

namespace detail {

/// Per-sample SNR in dB; NaN marks a zero-energy sample.
inline std::vector<double> snr_rows(const Tensor& x, const Tensor& x_adv) {
  if (x.shape != x_adv.shape) {
    throw ShapeError("snr_db: shapes " + shape_str(x.shape) + " and " + shape_str(x_adv.shape) + " differ");
  }
  std::vector<double> out(x.rows());
  const std::size_t w = x.row_size();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double sig = 0.0, noise = 0.0;
    for (std::size_t j = 0; j < w; ++j) {
      const double a = x[r * w + j];
      const double d = static_cast<double>(x_adv[r * w + j]) - a;
      sig += a * a;
      noise += d * d;
    }
    if (sig == 0.0) {
      out[r] = std::numeric_limits<double>::quiet_NaN();
    } else {
      out[r] = noise == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(sig / noise);
    }
  }
  return out;
}

}  // namespace detail

/// 10 log10(|x|^2 / |x_adv - x|^2) per sample; +inf when the rows are equal.
inline std::vector<double> snr_db(const Tensor& x, const Tensor& x_adv) {
  auto out = detail::snr_rows(x, x_adv);
  for (std::size_t r = 0; r < out.size(); ++r) {
    if (std::isnan(out[r])) throw NumericError("snr_db: sample " + std::to_string(r) + " has zero signal energy");
  }
  return out;
}

inline Tensor gaussian_perturb(const Tensor& x, float sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0F)) throw ConfigError("gaussian sigma must be >= 0");
  Tensor out(x.shape, std::vector<float>(x.data));
  if (sigma == 0.0F) return out;
  Rng rng(seed);
  std::normal_distribution<float> noise(0.0F, sigma);
  for (float& v : out.data) v += noise(rng);
  return out;
}

/// d/dx of the summed cross-entropy at x.
inline Tensor input_gradient(const Network& net, const Tensor& x, std::span<const std::size_t> labels) {
  Tape tape;
  auto params = bind_params(tape, net, false);
  Tensor in(x.shape, std::vector<float>(x.data));
  in.requires_grad = true;
  Var xv = tape.leaf(std::move(in));
  auto tr = forward(net, tape, params, xv);
  tape.backward(cross_entropy_sum(tr.logits, labels));
  return tape.gradient(xv);
}

namespace detail {

inline float sign(float g) { return g > 0.0F ? 1.0F : (g < 0.0F ? -1.0F : 0.0F); }

inline void clamp_data(Tensor& t, const AttackSpec& spec) {
  if (!spec.clamp_range) return;
  const auto [lo, hi] = *spec.clamp_range;
  for (float& v : t.data) v = std::clamp(v, lo, hi);
}

inline void project_ball(Tensor& t, const Tensor& x, float eps) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::clamp(t[i], x[i] - eps, x[i] + eps);
}

inline AdvBatch finish(const Network& net, const Tensor& x, std::span<const std::size_t> labels, Tensor x_adv) {
  AdvBatch out;
  const std::size_t w = x.row_size();
  out.linf.assign(x.rows(), 0.0);
  out.l2.assign(x.rows(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < w; ++j) {
      const double d = static_cast<double>(x_adv[r * w + j]) - x[r * w + j];
      out.linf[r] = std::max(out.linf[r], std::abs(d));
      s += d * d;
    }
    out.l2[r] = std::sqrt(s);
  }
  out.snr_db = snr_rows(x, x_adv);
  const auto pred = predict(net, x_adv);
  out.success.resize(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) out.success[r] = pred[r] != labels[r];
  out.x_adv = std::move(x_adv);
  return out;
}

inline void check_batch(const Network& net, const Tensor& x, std::span<const std::size_t> labels) {
  check_input(net, x.shape);
  check_labels(labels, x.rows(), net.class_count);
}

/// Shared loop of BIM and PGD: step, data clamp, then projection.
inline Tensor iterate_sign(const Network& net, const Tensor& x, std::span<const std::size_t> labels,
                           const AttackSpec& spec, Tensor start) {
  Tensor cur = std::move(start);
  for (std::size_t it = 0; it < spec.iters; ++it) {
    const Tensor g = input_gradient(net, cur, labels);
    for (std::size_t i = 0; i < cur.size(); ++i) cur[i] += spec.step * sign(g[i]);
    clamp_data(cur, spec);
    project_ball(cur, x, spec.eps);
  }
  return cur;
}

}  // namespace detail

inline AdvBatch fgsm(const Network& net, const Tensor& x, std::span<const std::size_t> labels, const AttackSpec& spec) {
  spec.validate();
  detail::check_batch(net, x, labels);
  Tensor adv(x.shape, std::vector<float>(x.data));
  if (spec.eps > 0.0F) {
    const Tensor g = input_gradient(net, x, labels);
    for (std::size_t i = 0; i < adv.size(); ++i) adv[i] = x[i] + spec.eps * detail::sign(g[i]);
  }
  detail::clamp_data(adv, spec);
  detail::project_ball(adv, x, spec.eps);
  return detail::finish(net, x, labels, std::move(adv));
}

inline AdvBatch bim(const Network& net, const Tensor& x, std::span<const std::size_t> labels, const AttackSpec& spec) {
  spec.validate();
  detail::check_batch(net, x, labels);
  Tensor adv = detail::iterate_sign(net, x, labels, spec, Tensor(x.shape, std::vector<float>(x.data)));
  return detail::finish(net, x, labels, std::move(adv));
}

inline AdvBatch pgd(const Network& net, const Tensor& x, std::span<const std::size_t> labels, const AttackSpec& spec) {
  spec.validate();
  detail::check_batch(net, x, labels);
  Tensor start(x.shape, std::vector<float>(x.data));
  if (spec.random_start && spec.eps > 0.0F) {
    Rng rng(spec.seed);
    std::uniform_real_distribution<float> u(-spec.eps, spec.eps);
    for (float& v : start.data) v += u(rng);
    detail::clamp_data(start, spec);
    detail::project_ball(start, x, spec.eps);
  }
  Tensor adv = detail::iterate_sign(net, x, labels, spec, std::move(start));
  return detail::finish(net, x, labels, std::move(adv));
}

/// Gradient descent on delta for |delta|^2 + c * max(margin, -k). Returns per
/// sample the successful iterate with the smallest L2 norm, else the last one.
inline AdvBatch cw_l2(const Network& net, const Tensor& x, std::span<const std::size_t> labels, const AttackSpec& spec) {
  spec.validate();
  detail::check_batch(net, x, labels);
  const std::size_t n = x.rows(), w = x.row_size(), classes = net.class_count;
  if (spec.cw_target && *spec.cw_target >= classes) throw ConfigError("cw_target out of range");

  // Logit selection masks: `own` picks the class whose logit should lose,
  // `rival` excludes it from the competing max.
  const std::vector<std::size_t> own_class = [&] {
    std::vector<std::size_t> v(labels.begin(), labels.end());
    if (spec.cw_target) std::fill(v.begin(), v.end(), *spec.cw_target);
    return v;
  }();
  Tensor rival_mask(Shape{n, classes}, 0.0F);
  for (std::size_t r = 0; r < n; ++r) rival_mask[r * classes + own_class[r]] = -1e9F;
  const bool targeted = spec.cw_target.has_value();
  const bool bounded = std::isfinite(spec.eps);

  Tensor delta(x.shape, 0.0F);
  Tensor best(x.shape, std::vector<float>(x.data));
  std::vector<double> best_l2(n, std::numeric_limits<double>::infinity());

  for (std::size_t it = 0;; ++it) {
    Tape tape;
    auto params = bind_params(tape, net, false);
    Tensor d = delta;
    d.requires_grad = true;
    Var dv = tape.leaf(std::move(d));
    Var xin = add(tape.constant(Tensor(x.shape, std::vector<float>(x.data))), dv);
    auto tr = forward(net, tape, params, xin);
    const Tensor& z = tr.logits.value();
    const auto pred = argmax_rows(z);
    for (std::size_t r = 0; r < n; ++r) {
      const bool ok = targeted ? pred[r] == own_class[r] : pred[r] != labels[r];
      if (!ok) continue;
      double s = 0.0;
      for (std::size_t j = 0; j < w; ++j) s += static_cast<double>(delta[r * w + j]) * delta[r * w + j];
      if (s < best_l2[r]) {
        best_l2[r] = s;
        for (std::size_t j = 0; j < w; ++j) best[r * w + j] = xin.value()[r * w + j];
      }
    }
    if (it == spec.cw_iters) break;

    Var own = gather(tr.logits, own_class);
    Var rival = row_max(add(tr.logits, tape.constant(rival_mask)));
    // Untargeted pushes Z_true below the best rival; targeted pushes Z_t above it.
    Var margin = targeted ? sub(rival, own) : sub(own, rival);
    Var hinge = clamp(margin, -spec.cw_k, std::numeric_limits<float>::max());
    Var objective = add(sum(mul(dv, dv)), scale(sum(hinge), spec.cw_c));
    tape.backward(objective);
    const Tensor g = tape.gradient(dv);
    for (std::size_t i = 0; i < delta.size(); ++i) {
      float v = delta[i] - spec.cw_lr * g[i];
      if (bounded) v = std::clamp(v, -spec.eps, spec.eps);
      if (spec.clamp_range) v = std::clamp(x[i] + v, spec.clamp_range->first, spec.clamp_range->second) - x[i];
      delta[i] = v;
    }
    if (!delta.all_finite()) throw NumericError("cw_l2: non-finite perturbation at iteration " + std::to_string(it));
  }

  Tensor adv(x.shape, std::vector<float>(x.data));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < w; ++j) {
      adv[r * w + j] = std::isfinite(best_l2[r]) ? best[r * w + j] : x[r * w + j] + delta[r * w + j];
    }
  }
  return detail::finish(net, x, labels, std::move(adv));
}

inline AdvBatch gaussian_attack(const Network& net, const Tensor& x, std::span<const std::size_t> labels,
                                const AttackSpec& spec) {
  spec.validate();
  detail::check_batch(net, x, labels);
  Tensor adv = gaussian_perturb(x, spec.eps, spec.seed);
  detail::clamp_data(adv, spec);
  return detail::finish(net, x, labels, std::move(adv));
}

inline AdvBatch run_attack(const Network& net, const Tensor& x, std::span<const std::size_t> labels,
                           const AttackSpec& spec) {
  switch (spec.family) {
    case AttackFamily::fgsm: return fgsm(net, x, labels, spec);
    case AttackFamily::bim: return bim(net, x, labels, spec);
    case AttackFamily::pgd: return pgd(net, x, labels, spec);
    case AttackFamily::cw_l2: return cw_l2(net, x, labels, spec);
    case AttackFamily::gaussian: return gaussian_attack(net, x, labels, spec);
  }
  throw ConfigError("unhandled attack family");
}

}  // namespace shmguard
