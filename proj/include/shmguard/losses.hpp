#pragma once

// Classification and pair-similarity losses.
//
// Pair losses work on per-anchor similarity lists: for anchor i, s_p are its
// cosine similarities to the other same-label batch members and s_n those to
// different-label members. Both families reduce, per anchor, to
//   softplus(LSE_j a(s_n^j) + LSE_i b(s_p^i))
// which equals log[1 + sum_j exp(a_j) * sum_i exp(b_i)] without overflow.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "shmguard/autodiff.hpp"
#include "shmguard/errors.hpp"
#include "shmguard/nets.hpp"
#include "shmguard/tensor.hpp"

namespace shmguard {

/// Circle loss hyper-parameters. Optima and decision margins derive from m.
struct CircleParams {
  float margin = 0.25F;
  float gamma = 32.0F;

  double optimum_neg() const { return -static_cast<double>(margin); }
  double optimum_pos() const { return 1.0 - static_cast<double>(margin); }
  double delta_neg() const { return static_cast<double>(margin); }
  double delta_pos() const { return 1.0 - static_cast<double>(margin); }

  void validate() const {
    if (!(margin > 0.0F && margin < 1.0F)) {
      throw ConfigError("circle margin must lie in (0, 1), got " + std::to_string(margin));
    }
    if (!(gamma > 0.0F)) throw ConfigError("circle scale gamma must be > 0");
  }
};

/// Cross-entropy plus beta times the circle loss summed over feature taps.
struct CombinedLossSpec {
  CircleParams circle;
  float beta = 0.0F;
  std::vector<std::string> tap_ids{std::string(kPenultimate)};

  void validate() const {
    circle.validate();
    if (!(beta >= 0.0F)) throw ConfigError("beta must be >= 0");
    if (beta > 0.0F && tap_ids.empty()) throw ConfigError("beta > 0 requires at least one tap id");
  }
};

struct SimilarityPairs {
  std::vector<std::vector<double>> positives;  // s_p per anchor
  std::vector<std::vector<double>> negatives;  // s_n per anchor

  std::size_t anchors() const { return positives.size(); }
};

// ---------------------------------------------------------------------------
// Cross-entropy

inline void check_labels(std::span<const std::size_t> labels, std::size_t rows, std::size_t classes) {
  if (labels.size() != rows) {
    throw ShapeError("got " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) +
                     " rows");
  }
  for (std::size_t y : labels) {
    if (y >= classes) {
      throw ConfigError("label " + std::to_string(y) + " out of range for " + std::to_string(classes) +
                        " classes");
    }
  }
}

/// Mean over the batch of -log softmax(logits)[label].
inline Var cross_entropy(Var logits, std::span<const std::size_t> labels) {
  detail::require_rank("cross_entropy", logits, 2);
  check_labels(labels, logits.shape()[0], logits.shape()[1]);
  return scale(mean(gather(log_softmax(logits), {labels.begin(), labels.end()})), -1.0F);
}

/// Batch sum of per-sample cross-entropy; attack gradients use this so that
/// per-sample gradients do not depend on batch size.
inline Var cross_entropy_sum(Var logits, std::span<const std::size_t> labels) {
  detail::require_rank("cross_entropy", logits, 2);
  check_labels(labels, logits.shape()[0], logits.shape()[1]);
  return scale(sum(gather(log_softmax(logits), {labels.begin(), labels.end()})), -1.0F);
}

/// Mean over rows of -sum_c target[r,c] * log softmax(logits / T)[r,c].
inline Var soft_cross_entropy(Var logits, const Tensor& targets, float temperature) {
  detail::require_rank("soft_cross_entropy", logits, 2);
  if (targets.shape != logits.shape()) {
    throw ShapeError("soft_cross_entropy: targets " + shape_str(targets.shape) + " vs logits " +
                     shape_str(logits.shape()));
  }
  Tape& tape = logits.tape();
  Var logp = log_softmax(temperature == 1.0F ? logits : scale(logits, 1.0F / temperature));
  Var t = tape.constant(Tensor(targets.shape, std::vector<float>(targets.data)));
  return scale(sum(mul(logp, t)), -1.0F / static_cast<float>(logits.shape()[0]));
}

inline Tensor softmax_rows(const Tensor& logits, float temperature = 1.0F) {
  Tape tape;
  Var z = tape.constant(Tensor(logits.shape, std::vector<float>(logits.data)));
  return softmax(temperature == 1.0F ? z : scale(z, 1.0F / temperature)).value();
}

// ---------------------------------------------------------------------------
// Pair similarities

/// All ordered (anchor, other) pairs in the batch, self excluded.
inline SimilarityPairs pair_similarities(const Tensor& features, std::span<const std::size_t> labels) {
  if (features.rank() != 2) throw ShapeError("pair_similarities: features must be [B, D]");
  const std::size_t n = features.dim(0), d = features.dim(1);
  if (n < 2) throw ConfigError("pair_similarities: batch must hold at least 2 samples");
  if (labels.size() != n) throw ShapeError("pair_similarities: label count differs from batch size");
  SimilarityPairs out;
  out.positives.resize(n);
  out.negatives.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += static_cast<double>(features[i * d + k]) * features[j * d + k];
      (labels[i] == labels[j] ? out.positives[i] : out.negatives[i]).push_back(s);
    }
  }
  return out;
}

namespace detail {

inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

/// log-sum-exp; writes softmax weights into `w`.
inline double log_sum_exp(std::span<const double> v, std::vector<double>& w) {
  const double mx = *std::max_element(v.begin(), v.end());
  double z = 0.0;
  w.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    w[i] = std::exp(v[i] - mx);
    z += w[i];
  }
  for (double& x : w) x /= z;
  return mx + std::log(z);
}

/// Per-similarity logit and its derivative for one pair-loss family.
struct PairLogits {
  virtual ~PairLogits() = default;
  virtual double neg(double s) const = 0;
  virtual double d_neg(double s) const = 0;
  virtual double pos(double s) const = 0;
  virtual double d_pos(double s) const = 0;
};

struct UnifiedLogits final : PairLogits {
  double m, gamma;
  UnifiedLogits(double margin, double g) : m(margin), gamma(g) {}
  double neg(double s) const override { return gamma * (s + m); }
  double d_neg(double) const override { return gamma; }
  double pos(double s) const override { return -gamma * s; }
  double d_pos(double) const override { return -gamma; }
};

/// Self-paced weights alpha_n = [s_n - O_n]_+, alpha_p = [O_p - s_p]_+ with
/// decision margins Delta_n = m, Delta_p = 1 - m. The weights are
/// differentiated through, so gradients are those of the loss value itself.
struct CircleLogits final : PairLogits {
  CircleParams p;
  explicit CircleLogits(CircleParams params) : p(params) {}
  double neg(double s) const override {
    const double alpha = std::max(0.0, s - p.optimum_neg());
    return p.gamma * alpha * (s - p.delta_neg());
  }
  double d_neg(double s) const override {
    const double alpha = std::max(0.0, s - p.optimum_neg());
    const double dalpha = s > p.optimum_neg() ? 1.0 : 0.0;
    return p.gamma * (dalpha * (s - p.delta_neg()) + alpha);
  }
  double pos(double s) const override {
    const double alpha = std::max(0.0, p.optimum_pos() - s);
    return -p.gamma * alpha * (s - p.delta_pos());
  }
  double d_pos(double s) const override {
    const double alpha = std::max(0.0, p.optimum_pos() - s);
    const double dalpha = s < p.optimum_pos() ? -1.0 : 0.0;
    return -p.gamma * (dalpha * (s - p.delta_pos()) + alpha);
  }
};

/// Loss of one anchor; optionally fills d loss / d s for each similarity.
inline double anchor_loss(const PairLogits& f, std::span<const double> sp, std::span<const double> sn,
                          std::vector<double>* d_sp = nullptr, std::vector<double>* d_sn = nullptr) {
  std::vector<double> a(sn.size()), b(sp.size()), wa, wb;
  for (std::size_t j = 0; j < sn.size(); ++j) a[j] = f.neg(sn[j]);
  for (std::size_t i = 0; i < sp.size(); ++i) b[i] = f.pos(sp[i]);
  const double z = log_sum_exp(a, wa) + log_sum_exp(b, wb);
  if (d_sp && d_sn) {
    const double outer = sigmoid(z);
    d_sn->resize(sn.size());
    d_sp->resize(sp.size());
    for (std::size_t j = 0; j < sn.size(); ++j) (*d_sn)[j] = outer * wa[j] * f.d_neg(sn[j]);
    for (std::size_t i = 0; i < sp.size(); ++i) (*d_sp)[i] = outer * wb[i] * f.d_pos(sp[i]);
  }
  return softplus(z);
}

inline double pair_loss(const PairLogits& f, const SimilarityPairs& pairs) {
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < pairs.anchors(); ++i) {
    if (pairs.positives[i].empty() || pairs.negatives[i].empty()) continue;
    total += anchor_loss(f, pairs.positives[i], pairs.negatives[i]);
    ++counted;
  }
  return counted ? total / static_cast<double>(counted) : 0.0;
}

/// Pair loss over all in-batch pairs of normalized features, recorded as one tape node.
inline Var pair_loss(const char* op, std::shared_ptr<const PairLogits> f, Var features,
                     std::span<const std::size_t> labels) {
  require_rank(op, features, 2);
  const Tensor& fv = features.value();
  const std::size_t n = fv.dim(0), d = fv.dim(1);
  if (n < 2) throw ConfigError(std::string(op) + ": batch must hold at least 2 samples");
  if (labels.size() != n) throw ShapeError(std::string(op) + ": label count differs from batch size");

  std::vector<double> sim(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += static_cast<double>(fv[i * d + k]) * fv[j * d + k];
      sim[i * n + j] = sim[j * n + i] = s;
    }
  }
  // d loss / d sim[i][j], accumulated from anchor i's perspective.
  std::vector<double> dsim(n * n, 0.0);
  double total = 0.0;
  std::size_t counted = 0;
  std::vector<double> sp, sn, dsp, dsn;
  std::vector<std::size_t> ip, in;
  for (std::size_t i = 0; i < n; ++i) {
    sp.clear(), sn.clear(), ip.clear(), in.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (labels[i] == labels[j]) {
        sp.push_back(sim[i * n + j]);
        ip.push_back(j);
      } else {
        sn.push_back(sim[i * n + j]);
        in.push_back(j);
      }
    }
    if (sp.empty() || sn.empty()) continue;
    total += anchor_loss(*f, sp, sn, &dsp, &dsn);
    ++counted;
    for (std::size_t q = 0; q < ip.size(); ++q) dsim[i * n + ip[q]] += dsp[q];
    for (std::size_t q = 0; q < in.size(); ++q) dsim[i * n + in[q]] += dsn[q];
  }
  const double scale_by = counted ? 1.0 / static_cast<double>(counted) : 0.0;
  for (double& v : dsim) v *= scale_by;
  Tensor out = Tensor::scalar(static_cast<float>(total * scale_by));
  return features.tape().record(op, std::move(out), {features},
                                [n, d, dsim = std::move(dsim)](Tape& t, std::size_t self) {
                                  const double g = t.grad_of(self)[0];
                                  const std::size_t in_id = t.input_id(self, 0);
                                  const Tensor& fv = t.value(in_id);
                                  float* gf = t.accum(in_id);
                                  if (!gf) return;
                                  for (std::size_t i = 0; i < n; ++i) {
                                    for (std::size_t k = 0; k < d; ++k) {
                                      double acc = 0.0;
                                      for (std::size_t j = 0; j < n; ++j) {
                                        const double w = dsim[i * n + j] + dsim[j * n + i];
                                        if (w != 0.0) acc += w * fv[j * d + k];
                                      }
                                      gf[i * d + k] += static_cast<float>(g * acc);
                                    }
                                  }
                                });
}

}  // namespace detail

/// Per anchor log[1 + sum_j exp(gamma(s_n + m)) * sum_i exp(-gamma s_p)], averaged
/// over anchors that have both positives and negatives.
inline double unified_loss(const SimilarityPairs& pairs, float margin, float gamma) {
  if (!(gamma > 0.0F)) throw ConfigError("unified_loss: gamma must be > 0");
  return detail::pair_loss(detail::UnifiedLogits(margin, gamma), pairs);
}

inline double circle_loss(const SimilarityPairs& pairs, const CircleParams& params) {
  params.validate();
  return detail::pair_loss(detail::CircleLogits(params), pairs);
}

/// Differentiable unified loss over normalized features [B, D].
inline Var unified_loss(Var features, std::span<const std::size_t> labels, float margin, float gamma) {
  if (!(gamma > 0.0F)) throw ConfigError("unified_loss: gamma must be > 0");
  return detail::pair_loss("unified_loss", std::make_shared<detail::UnifiedLogits>(margin, gamma), features,
                           labels);
}

/// Differentiable circle loss over normalized features [B, D].
inline Var circle_loss(Var features, std::span<const std::size_t> labels, const CircleParams& params) {
  params.validate();
  return detail::pair_loss("circle_loss", std::make_shared<detail::CircleLogits>(params), features, labels);
}

// ---------------------------------------------------------------------------
// Combined objective

/// CE(logits, y) + beta * sum over taps of circle(features at tap). beta == 0
/// records the cross-entropy alone.
inline Var combined_loss(const Network& net, const ForwardTrace& trace,
                         std::span<const std::size_t> labels, const CombinedLossSpec& spec) {
  spec.validate();
  Var loss = cross_entropy(trace.logits, labels);
  if (spec.beta == 0.0F) return loss;
  for (const std::string& tap : spec.tap_ids) {
    Var feats = tap_features(net, trace, tap);
    loss = add(loss, scale(circle_loss(feats, labels, spec.circle), spec.beta));
  }
  return loss;
}

inline float combined_loss(const Network& net, const Tensor& x_adv, std::span<const std::size_t> labels,
                           const CombinedLossSpec& spec) {
  Tape tape;
  auto params = bind_params(tape, net, false);
  auto tr = forward(net, tape, params, tape.constant(Tensor(x_adv.shape, std::vector<float>(x_adv.data))));
  return combined_loss(net, tr, labels, spec).value()[0];
}

inline float cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  Tape tape;
  return cross_entropy(tape.constant(Tensor(logits.shape, std::vector<float>(logits.data))), labels).value()[0];
}

}  // namespace shmguard
