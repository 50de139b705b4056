#pragma once

// Small classifier networks: dense / conv1d / relu / flatten / maxpool1d stacks
// with named feature taps for pair-similarity regularization.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "shmguard/autodiff.hpp"
#include "shmguard/errors.hpp"
#include "shmguard/rng.hpp"
#include "shmguard/tensor.hpp"

namespace shmguard {

enum class LayerKind { dense, conv1d, relu, flatten, maxpool1d };

inline std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv1d: return "conv1d";
    case LayerKind::relu: return "relu";
    case LayerKind::flatten: return "flatten";
    case LayerKind::maxpool1d: return "maxpool1d";
  }
  return "?";
}

inline LayerKind layer_kind_from(std::string_view s) {
  for (LayerKind k : {LayerKind::dense, LayerKind::conv1d, LayerKind::relu, LayerKind::flatten,
                      LayerKind::maxpool1d}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown layer kind '" + std::string(s) + "'");
}

/// One layer. dims: dense (in, out); conv1d (in_channels, out_channels, kernel);
/// maxpool1d (window); relu/flatten none. A non-empty tap_id exposes the layer output.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::vector<std::size_t> dims;
  std::string tap_id;

  static LayerSpec dense(std::size_t in, std::size_t out, std::string tap = {}) {
    return {LayerKind::dense, {in, out}, std::move(tap)};
  }
  static LayerSpec conv1d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                          std::string tap = {}) {
    return {LayerKind::conv1d, {in_ch, out_ch, kernel}, std::move(tap)};
  }
  static LayerSpec relu(std::string tap = {}) { return {LayerKind::relu, {}, std::move(tap)}; }
  static LayerSpec flatten(std::string tap = {}) { return {LayerKind::flatten, {}, std::move(tap)}; }
  static LayerSpec maxpool1d(std::size_t window, std::string tap = {}) {
    return {LayerKind::maxpool1d, {window}, std::move(tap)};
  }

  bool has_params() const { return kind == LayerKind::dense || kind == LayerKind::conv1d; }
  bool operator==(const LayerSpec&) const = default;
};

/// Per-sample input shape plus the layer stack.
struct Architecture {
  Shape input;
  std::vector<LayerSpec> layers;
  bool operator==(const Architecture&) const = default;
};

/// Alias accepted wherever a tap id is expected; resolves to the layer whose
/// output feeds the final dense layer.
inline constexpr std::string_view kPenultimate = "penultimate";

/// Three-layer ANN: input -> dense(hidden) -> relu [tap "hidden"] -> dense(classes).
/// Inputs of rank > 1 are flattened first.
inline Architecture mlp_preset(Shape input, std::size_t hidden, std::size_t classes) {
  Architecture a{input, {}};
  if (input.size() > 1) a.layers.push_back(LayerSpec::flatten());
  a.layers.push_back(LayerSpec::dense(shape_size(input), hidden));
  a.layers.push_back(LayerSpec::relu("hidden"));
  a.layers.push_back(LayerSpec::dense(hidden, classes));
  return a;
}

/// Convolutional stand-in for the deep model, with three taps:
/// layer1 (post-conv), layer2 (post-dense-hidden), layer3 (penultimate).
inline Architecture cnn_preset(std::size_t channels, std::size_t length, std::size_t classes,
                               std::size_t conv_channels = 8, std::size_t kernel = 9,
                               std::size_t pool = 4, std::size_t hidden = 32,
                               std::size_t penultimate = 16) {
  const std::size_t pooled = (length - kernel + 1) / pool;
  return Architecture{
      Shape{channels, length},
      {LayerSpec::conv1d(channels, conv_channels, kernel), LayerSpec::relu("layer1"),
       LayerSpec::maxpool1d(pool), LayerSpec::flatten(),
       LayerSpec::dense(conv_channels * pooled, hidden), LayerSpec::relu("layer2"),
       LayerSpec::dense(hidden, penultimate), LayerSpec::relu("layer3"),
       LayerSpec::dense(penultimate, classes)}};
}

/// Output shape of each layer (per sample), validating composition.
inline std::vector<Shape> layer_shapes(const Architecture& arch) {
  if (arch.input.empty()) throw ShapeError("architecture has no input shape");
  for (std::size_t d : arch.input) {
    if (d == 0) throw ShapeError("input extents must be positive");
  }
  std::vector<Shape> out;
  Shape cur = arch.input;
  std::vector<std::string> taps;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& l = arch.layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + std::string(to_string(l.kind)) + ")";
    auto need_dims = [&](std::size_t n) {
      if (l.dims.size() != n) throw ShapeError(where + ": expected " + std::to_string(n) + " dims");
      for (std::size_t d : l.dims) {
        if (d == 0) throw ShapeError(where + ": dims must be >= 1");
      }
    };
    switch (l.kind) {
      case LayerKind::dense:
        need_dims(2);
        if (cur.size() != 1 || cur[0] != l.dims[0]) {
          throw ShapeError(where + ": expects input [" + std::to_string(l.dims[0]) + "], got " +
                           shape_str(cur));
        }
        cur = Shape{l.dims[1]};
        break;
      case LayerKind::conv1d:
        need_dims(3);
        if (cur.size() != 2 || cur[0] != l.dims[0] || cur[1] < l.dims[2]) {
          throw ShapeError(where + ": incompatible with input " + shape_str(cur));
        }
        cur = Shape{l.dims[1], cur[1] - l.dims[2] + 1};
        break;
      case LayerKind::maxpool1d:
        need_dims(1);
        if (cur.size() != 2 || cur[1] < l.dims[0]) {
          throw ShapeError(where + ": incompatible with input " + shape_str(cur));
        }
        cur = Shape{cur[0], cur[1] / l.dims[0]};
        break;
      case LayerKind::relu:
        need_dims(0);
        break;
      case LayerKind::flatten:
        need_dims(0);
        cur = Shape{shape_size(cur)};
        break;
    }
    if (!l.tap_id.empty()) {
      if (l.tap_id == kPenultimate) throw ShapeError(where + ": tap id 'penultimate' is reserved");
      if (std::find(taps.begin(), taps.end(), l.tap_id) != taps.end()) {
        throw ShapeError(where + ": duplicate tap id '" + l.tap_id + "'");
      }
      taps.push_back(l.tap_id);
    }
    out.push_back(cur);
  }
  if (cur.size() != 1 || cur[0] < 2) {
    throw ShapeError("network output must be a vector of >= 2 class scores, got " + shape_str(cur));
  }
  return out;
}

struct TrainingMetadata {
  std::uint64_t seed = 0;
  std::string loss_mode = "untrained";
  std::size_t epoch = 0;
  bool operator==(const TrainingMetadata&) const = default;
};

class Network {
 public:
  Architecture arch;
  /// Weight then bias for every parameterized layer, in layer order.
  std::vector<Tensor> params;
  std::size_t class_count = 0;
  TrainingMetadata meta;

  /// Index into params of each layer's weight, or -1.
  std::vector<int> param_slot;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Tensor& p : params) n += p.size();
    return n;
  }

  std::vector<float> flat_params() const {
    std::vector<float> v;
    v.reserve(parameter_count());
    for (const Tensor& p : params) v.insert(v.end(), p.data.begin(), p.data.end());
    return v;
  }

  void set_flat_params(std::span<const float> v) {
    if (v.size() != parameter_count()) {
      throw CorruptDataError("parameter blob holds " + std::to_string(v.size()) +
                             " values, architecture needs " + std::to_string(parameter_count()));
    }
    std::size_t off = 0;
    for (Tensor& p : params) {
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(off), p.size(), p.data.begin());
      off += p.size();
    }
  }

  std::vector<std::string> tap_ids() const {
    std::vector<std::string> ids;
    for (const LayerSpec& l : arch.layers) {
      if (!l.tap_id.empty()) ids.push_back(l.tap_id);
    }
    return ids;
  }

  /// Layer index whose output feeds the final dense layer (skipping shape-only layers).
  std::size_t penultimate_layer() const {
    const std::size_t last = arch.layers.size() - 1;
    if (arch.layers.size() < 2 || arch.layers[last].kind != LayerKind::dense) {
      throw ShapeError("network has no penultimate layer: final layer is not dense");
    }
    return last - 1;
  }

  /// Tap id at the penultimate layer (empty when that layer carries no tap).
  std::string penultimate_tap() const { return arch.layers[penultimate_layer()].tap_id; }

  /// Layer index for a tap id (or the penultimate alias).
  std::size_t tap_layer(std::string_view tap) const {
    if (tap == kPenultimate) return penultimate_layer();
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
      if (arch.layers[i].tap_id == tap) return i;
    }
    throw ConfigError("unknown tap id '" + std::string(tap) + "'");
  }

  Shape output_shape_of(std::size_t layer) const { return layer_shapes(arch).at(layer); }
};

/// Builds a network with Glorot-uniform weights and zero biases; deterministic per seed.
inline Network build(const Architecture& arch, std::uint64_t seed) {
  const std::vector<Shape> shapes = layer_shapes(arch);
  Network net;
  net.arch = arch;
  net.class_count = shapes.back()[0];
  net.meta.seed = seed;
  Rng rng(seed);
  for (const LayerSpec& l : arch.layers) {
    if (!l.has_params()) {
      net.param_slot.push_back(-1);
      continue;
    }
    net.param_slot.push_back(static_cast<int>(net.params.size()));
    Shape wshape, bshape;
    double fan_in = 0, fan_out = 0;
    if (l.kind == LayerKind::dense) {
      wshape = {l.dims[0], l.dims[1]};
      bshape = {l.dims[1]};
      fan_in = static_cast<double>(l.dims[0]);
      fan_out = static_cast<double>(l.dims[1]);
    } else {
      wshape = {l.dims[1], l.dims[0], l.dims[2]};
      bshape = {l.dims[1]};
      fan_in = static_cast<double>(l.dims[0] * l.dims[2]);
      fan_out = static_cast<double>(l.dims[1] * l.dims[2]);
    }
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor w(wshape);
    for (float& v : w.data) v = static_cast<float>(dist(rng));
    net.params.push_back(std::move(w));
    net.params.emplace_back(bshape, 0.0F);
  }
  return net;
}

/// Parameter leaves of a network on a tape.
inline std::vector<Var> bind_params(Tape& tape, const Network& net, bool track) {
  std::vector<Var> vars;
  vars.reserve(net.params.size());
  for (const Tensor& p : net.params) {
    Tensor t(p.shape, std::vector<float>(p.data));
    t.requires_grad = track;
    vars.push_back(tape.leaf(std::move(t)));
  }
  return vars;
}

struct ForwardTrace {
  Var logits;
  /// Output of every layer, in order.
  std::vector<Var> layer_outputs;
};

inline void check_input(const Network& net, const Shape& batch_shape) {
  if (batch_shape.size() != net.arch.input.size() + 1 ||
      !std::equal(net.arch.input.begin(), net.arch.input.end(), batch_shape.begin() + 1)) {
    throw ShapeError("input batch " + shape_str(batch_shape) + " does not match network input " +
                     shape_str(net.arch.input));
  }
}

inline ForwardTrace forward(const Network& net, Tape& tape, std::span<const Var> params, Var x) {
  check_input(net, x.shape());
  ForwardTrace tr;
  Var h = x;
  const std::size_t batch = x.shape()[0];
  for (std::size_t i = 0; i < net.arch.layers.size(); ++i) {
    const LayerSpec& l = net.arch.layers[i];
    switch (l.kind) {
      case LayerKind::dense: {
        const auto slot = static_cast<std::size_t>(net.param_slot[i]);
        h = add_bias(matmul(h, params[slot]), params[slot + 1]);
        break;
      }
      case LayerKind::conv1d: {
        const auto slot = static_cast<std::size_t>(net.param_slot[i]);
        h = conv1d(h, params[slot], params[slot + 1]);
        break;
      }
      case LayerKind::relu: h = relu(h); break;
      case LayerKind::flatten: h = reshape(h, Shape{batch, h.size() / batch}); break;
      case LayerKind::maxpool1d: h = maxpool1d(h, l.dims[0]); break;
    }
    tr.layer_outputs.push_back(h);
  }
  tr.logits = h;
  return tr;
}

/// L2-normalized, flattened features at a tap, on the tape.
inline Var tap_features(const Network& net, const ForwardTrace& tr, std::string_view tap) {
  Var f = tr.layer_outputs.at(net.tap_layer(tap));
  const std::size_t batch = f.shape()[0];
  if (f.shape().size() != 2) f = reshape(f, Shape{batch, f.size() / batch});
  return normalize_rows(f);
}

inline Tensor forward_logits(const Network& net, const Tensor& x) {
  Tape tape;
  auto params = bind_params(tape, net, false);
  Tensor in(x.shape, std::vector<float>(x.data));
  return forward(net, tape, params, tape.constant(std::move(in))).logits.value();
}

/// Per-row L2-normalized features at `tap` (flattened per sample).
inline Tensor features_at(const Network& net, const Tensor& x, std::string_view tap) {
  net.tap_layer(tap);
  Tape tape;
  auto params = bind_params(tape, net, false);
  Tensor in(x.shape, std::vector<float>(x.data));
  auto tr = forward(net, tape, params, tape.constant(std::move(in)));
  return tap_features(net, tr, tap).value();
}

inline std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  std::vector<std::size_t> out(logits.rows());
  for (std::size_t r = 0; r < out.size(); ++r) {
    auto row = logits.row(r);
    out[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

inline std::vector<std::size_t> predict(const Network& net, const Tensor& x) {
  return argmax_rows(forward_logits(net, x));
}

// ---------------------------------------------------------------------------
// Checkpoints: one line of JSON header, then a little-endian float32 blob.

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json to_json(const Architecture& a) {
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerSpec& l : a.layers) {
    nlohmann::json j{{"kind", to_string(l.kind)}, {"dims", l.dims}};
    if (!l.tap_id.empty()) j["tap_id"] = l.tap_id;
    layers.push_back(std::move(j));
  }
  return {{"input", a.input}, {"layers", std::move(layers)}};
}

inline Architecture architecture_from_json(const nlohmann::json& j) {
  try {
    Architecture a;
    a.input = j.at("input").get<Shape>();
    for (const auto& lj : j.at("layers")) {
      LayerSpec l;
      l.kind = layer_kind_from(lj.at("kind").get<std::string>());
      l.dims = lj.at("dims").get<std::vector<std::size_t>>();
      if (lj.contains("tap_id")) l.tap_id = lj.at("tap_id").get<std::string>();
      a.layers.push_back(std::move(l));
    }
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed architecture: ") + e.what());
  }
}

inline void save(const Network& net, const std::string& path) {
  const std::vector<float> blob = net.flat_params();
  nlohmann::json header{{"format", "shmguard-checkpoint"},
                        {"version", kCheckpointVersion},
                        {"architecture", to_json(net.arch)},
                        {"seed", net.meta.seed},
                        {"metadata", {{"loss_mode", net.meta.loss_mode}, {"epoch", net.meta.epoch}}},
                        {"blob_bytes", blob.size() * 4}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << header.dump() << '\n';
  std::string bytes(blob.size() * 4, '\0');
  for (std::size_t i = 0; i < blob.size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(blob[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((u >> (8 * b)) & 0xFFU);
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline Network load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw CorruptDataError("checkpoint '" + path + "' has no header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptDataError("checkpoint header is not JSON: " + std::string(e.what()));
  }
  const int version = header.value("version", -1);
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  Network net = build(architecture_from_json(header.at("architecture")), 0);
  net.meta.seed = header.value("seed", std::uint64_t{0});
  if (header.contains("metadata")) {
    net.meta.loss_mode = header["metadata"].value("loss_mode", std::string("untrained"));
    net.meta.epoch = header["metadata"].value("epoch", std::size_t{0});
  }
  const auto declared = header.value("blob_bytes", std::size_t{0});
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != declared || declared != net.parameter_count() * 4) {
    throw CorruptDataError("checkpoint blob is " + std::to_string(bytes.size()) + " bytes; header declares " +
                           std::to_string(declared) + ", architecture needs " +
                           std::to_string(net.parameter_count() * 4));
  }
  std::vector<float> blob(declared / 4);
  for (std::size_t i = 0; i < blob.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    blob[i] = std::bit_cast<float>(u);
  }
  net.set_flat_params(blob);
  return net;
}

}  // namespace shmguard
