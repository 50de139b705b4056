#pragma once

// Synthetic vibration datasets, spectral features, normalization, splitting
// and CSV exchange.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "shmguard/errors.hpp"
#include "shmguard/rng.hpp"
#include "shmguard/tensor.hpp"

namespace shmguard {

struct SignalDataset {
  /// [N, channels, length]
  Tensor samples;
  std::vector<std::size_t> labels;
  std::vector<std::string> class_names;
  double sample_rate = 1.0;
  std::string provenance;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return samples.shape.at(1); }
  std::size_t length() const { return samples.shape.at(2); }
  std::size_t class_count() const { return class_names.size(); }

  void validate() const {
    if (samples.rank() != 3) throw ShapeError("dataset samples must be [N, channels, length], got " + shape_str(samples.shape));
    if (samples.shape[0] != labels.size()) throw ShapeError("dataset has " + std::to_string(samples.shape[0]) +
                                                            " samples but " + std::to_string(labels.size()) + " labels");
    for (std::size_t y : labels) {
      if (y >= class_names.size()) throw ConfigError("dataset label " + std::to_string(y) + " out of range");
    }
    if (labels.size() < class_names.size()) throw ConfigError("dataset has fewer samples than classes");
  }

  SignalDataset subset(std::span<const std::size_t> idx) const {
    SignalDataset out;
    out.samples = take_rows(samples, idx);
    for (std::size_t i : idx) out.labels.push_back(labels[i]);
    out.class_names = class_names;
    out.sample_rate = sample_rate;
    out.provenance = provenance;
    return out;
  }
};

// ---------------------------------------------------------------------------
// Synthetic generation

/// Modal parameters of one damage class.
struct ClassModes {
  std::string name;
  std::vector<double> freqs;      // Hz
  std::vector<double> damping;    // decay rate, 1/s
  std::vector<double> amplitude;
};

struct SynthSpec {
  std::size_t channels = 2;
  std::size_t length = 128;
  double sample_rate = 256.0;
  std::vector<ClassModes> classes;
  double noise_floor = 0.05;
  /// Relative spread of per-sample frequency, damping and amplitude draws.
  double freq_jitter = 0.01;
  double amp_jitter = 0.1;
  /// Phase offset drawn uniformly from [-phase_jitter, phase_jitter] per mode.
  double phase_jitter = 0.5;
  std::size_t samples_per_class = 200;
  std::uint64_t seed = 0;

  std::size_t class_count() const { return classes.size(); }

  void validate() const {
    if (classes.size() < 2) throw ConfigError("synthetic spec needs at least 2 classes");
    if (channels < 1 || length < 8) throw ConfigError("synthetic spec needs channels >= 1 and length >= 8");
    if (!(sample_rate > 0)) throw ConfigError("sample_rate must be > 0");
    if (samples_per_class < 1) throw ConfigError("samples_per_class must be >= 1");
    if (noise_floor < 0 || freq_jitter < 0 || amp_jitter < 0 || phase_jitter < 0) {
      throw ConfigError("noise and jitter settings must be >= 0");
    }
    for (const auto& c : classes) {
      if (c.freqs.empty() || c.freqs.size() != c.damping.size() || c.freqs.size() != c.amplitude.size()) {
        throw ConfigError("class '" + c.name + "': freqs, damping and amplitude must be non-empty and equal length");
      }
      for (double f : c.freqs) {
        if (!(f > 0) || f >= sample_rate / 2) {
          throw ConfigError("class '" + c.name + "': modal frequency " + std::to_string(f) +
                            " Hz violates Nyquist limit " + std::to_string(sample_rate / 2) + " Hz");
        }
      }
    }
    for (std::size_t a = 0; a < classes.size(); ++a) {
      for (std::size_t b = a + 1; b < classes.size(); ++b) {
        if (classes[a].freqs == classes[b].freqs && classes[a].damping == classes[b].damping &&
            classes[a].amplitude == classes[b].amplitude) {
          throw ConfigError("classes '" + classes[a].name + "' and '" + classes[b].name + "' are identical");
        }
      }
    }
  }
};

/// Four damage states: intact plus three levels of stiffness loss that lower
/// the modal frequencies and reshape the amplitudes.
inline SynthSpec default_synth_spec() {
  SynthSpec s;
  const std::vector<double> base{14.0, 38.0, 70.0};
  const std::vector<std::vector<double>> shift{{0, 0, 0}, {0.06, 0.02, 0.04}, {0.03, 0.08, 0.05}, {0.10, 0.07, 0.12}};
  const std::vector<std::vector<double>> amp{{1.0, 0.6, 0.4}, {0.9, 0.7, 0.4}, {1.0, 0.5, 0.55}, {0.8, 0.65, 0.5}};
  for (std::size_t c = 0; c < 4; ++c) {
    ClassModes m;
    m.name = "DC" + std::to_string(c);
    for (std::size_t k = 0; k < base.size(); ++k) m.freqs.push_back(base[k] * (1.0 - shift[c][k]));
    m.damping = {3.0, 5.0, 8.0};
    m.amplitude = amp[c];
    s.classes.push_back(std::move(m));
  }
  return s;
}

/// Modal participation of mode k at sensor c: simply supported beam shapes
/// sampled at the sensor cell midpoints (c + 1/2) / channels.
inline double mode_shape(std::size_t channel, std::size_t mode, std::size_t channels) {
  const double x = (static_cast<double>(channel) + 0.5) / static_cast<double>(channels);
  return std::sin(static_cast<double>(mode + 1) * std::numbers::pi * x);
}

inline SignalDataset generate(const SynthSpec& spec) {
  spec.validate();
  const std::size_t n = spec.samples_per_class * spec.class_count();
  SignalDataset ds;
  ds.samples = Tensor(Shape{n, spec.channels, spec.length});
  ds.sample_rate = spec.sample_rate;
  for (const auto& c : spec.classes) ds.class_names.push_back(c.name);
  ds.provenance = "synthetic seed=" + std::to_string(spec.seed);
  const std::size_t w = spec.channels * spec.length;
  std::size_t row = 0;
  for (std::size_t cls = 0; cls < spec.class_count(); ++cls) {
    const ClassModes& modes = spec.classes[cls];
    for (std::size_t i = 0; i < spec.samples_per_class; ++i, ++row) {
      Rng rng(derive_seed(spec.seed, {cls, i}));
      std::normal_distribution<double> unit(0.0, 1.0);
      std::uniform_real_distribution<double> phase(-spec.phase_jitter, spec.phase_jitter);
      std::vector<double> sig(w, 0.0);
      for (std::size_t k = 0; k < modes.freqs.size(); ++k) {
        const double f = modes.freqs[k] * (1.0 + spec.freq_jitter * unit(rng));
        const double z = modes.damping[k] * (1.0 + spec.amp_jitter * unit(rng));
        const double a = modes.amplitude[k] * (1.0 + spec.amp_jitter * unit(rng));
        const double phi = phase(rng);
        for (std::size_t ch = 0; ch < spec.channels; ++ch) {
          const double shape = mode_shape(ch, k, spec.channels);
          for (std::size_t t = 0; t < spec.length; ++t) {
            const double tt = static_cast<double>(t) / spec.sample_rate;
            sig[ch * spec.length + t] += a * shape * std::exp(-z * tt) * std::sin(2.0 * std::numbers::pi * f * tt + phi);
          }
        }
      }
      if (spec.noise_floor > 0) {
        std::normal_distribution<double> noise(0.0, spec.noise_floor);
        for (double& v : sig) v += noise(rng);
      }
      for (std::size_t j = 0; j < w; ++j) ds.samples[row * w + j] = static_cast<float>(sig[j]);
      ds.labels.push_back(cls);
    }
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Spectra

using Complex = std::complex<double>;

/// O(n^2) discrete Fourier transform.
inline std::vector<Complex> dft_direct(std::span<const Complex> x) {
  const std::size_t n = x.size();
  std::vector<Complex> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    Complex acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double ang = -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
      acc += x[t] * Complex(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  return out;
}

/// Radix-2 FFT for power-of-two lengths, direct DFT otherwise.
inline std::vector<Complex> dft(std::span<const Complex> x) {
  const std::size_t n = x.size();
  if (n == 0 || (n & (n - 1)) != 0) return dft_direct(x);
  std::vector<Complex> a(x.begin(), x.end());
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(len);
        const Complex wk(std::cos(ang), std::sin(ang));
        const Complex u = a[i + k];
        const Complex v = a[i + k + len / 2] * wk;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
  return a;
}

inline std::vector<Complex> dft_real(std::span<const double> x) {
  std::vector<Complex> c(x.begin(), x.end());
  return dft(c);
}

/// Periodic Hann window of length n.
inline std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

struct FrfResult {
  std::vector<double> magnitude;
  /// Bins whose force power was (numerically) zero; their magnitude is 0.
  std::vector<std::size_t> zero_force_bins;
};

/// Relative force-power floor below which an FRF bin is treated as unexcited.
inline constexpr double kFrfPowerFloor = 1e-20;

/// H1 estimate |mean(conj(F) A)| / mean(|F|^2) over non-overlapping Hann
/// windowed segments.
inline FrfResult welch_frf(std::span<const double> force, std::span<const double> accel, std::size_t segments = 5) {
  if (force.size() != accel.size()) throw ShapeError("welch_frf: force and accel lengths differ");
  if (segments < 1 || force.size() % segments != 0) {
    throw ConfigError("welch_frf: length " + std::to_string(force.size()) + " is not divisible by " +
                      std::to_string(segments) + " segments");
  }
  const std::size_t seg = force.size() / segments;
  if (seg < 8) throw ConfigError("welch_frf: segment length " + std::to_string(seg) + " is below 8");
  const std::size_t bins = seg / 2 + 1;
  const auto win = hann(seg);
  std::vector<Complex> saf(bins, 0.0);
  std::vector<double> sff(bins, 0.0);
  std::vector<Complex> fs(seg), as(seg);
  for (std::size_t s = 0; s < segments; ++s) {
    for (std::size_t t = 0; t < seg; ++t) {
      fs[t] = force[s * seg + t] * win[t];
      as[t] = accel[s * seg + t] * win[t];
    }
    const auto F = dft(fs);
    const auto A = dft(as);
    for (std::size_t k = 0; k < bins; ++k) {
      saf[k] += std::conj(F[k]) * A[k];
      sff[k] += std::norm(F[k]);
    }
  }
  FrfResult out;
  out.magnitude.resize(bins);
  const double peak = *std::max_element(sff.begin(), sff.end());
  for (std::size_t k = 0; k < bins; ++k) {
    if (sff[k] <= kFrfPowerFloor * peak || sff[k] == 0.0) {
      out.magnitude[k] = 0.0;
      out.zero_force_bins.push_back(k);
    } else {
      out.magnitude[k] = std::abs(saf[k] / static_cast<double>(segments)) / (sff[k] / static_cast<double>(segments));
    }
  }
  return out;
}

/// FRF features: channel 0 is the excitation, every other channel a response.
/// Output shape [N, channels - 1, segment_length / 2 + 1].
inline SignalDataset frf_features(const SignalDataset& ds, std::size_t segments) {
  if (ds.channels() < 2) throw ConfigError("frf features need an excitation channel and at least one response");
  const std::size_t len = ds.length(), ch = ds.channels();
  std::vector<double> f(len), a(len);
  std::vector<float> out;
  std::size_t bins = 0;
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const float* row = ds.samples.data.data() + r * ch * len;
    std::copy(row, row + len, f.begin());
    for (std::size_t c = 1; c < ch; ++c) {
      std::copy(row + c * len, row + (c + 1) * len, a.begin());
      auto frf = welch_frf(f, a, segments);
      bins = frf.magnitude.size();
      for (double v : frf.magnitude) out.push_back(static_cast<float>(v));
    }
  }
  SignalDataset res = ds;
  res.samples = Tensor(Shape{ds.size(), ch - 1, bins}, std::move(out));
  res.provenance = ds.provenance + " frf segments=" + std::to_string(segments);
  return res;
}

// ---------------------------------------------------------------------------
// Normalization

enum class NormMode { per_channel_zscore, global_minmax };

inline std::string_view to_string(NormMode m) {
  return m == NormMode::per_channel_zscore ? "per_channel_zscore" : "global_minmax";
}

inline NormMode norm_mode_from(std::string_view s) {
  if (s == "per_channel_zscore") return NormMode::per_channel_zscore;
  if (s == "global_minmax") return NormMode::global_minmax;
  throw ConfigError("unknown normalization mode '" + std::string(s) + "'");
}

struct NormStats {
  NormMode mode = NormMode::per_channel_zscore;
  /// zscore: per-channel mean and std. minmax: a single (min, max) pair.
  std::vector<double> shift;
  std::vector<double> scale;

  void apply(SignalDataset& ds) const {
    const std::size_t ch = ds.channels(), len = ds.length();
    for (std::size_t r = 0; r < ds.size(); ++r) {
      for (std::size_t c = 0; c < ch; ++c) {
        const std::size_t s = mode == NormMode::per_channel_zscore ? c : 0;
        if (s >= shift.size()) throw ShapeError("normalization stats do not match dataset channels");
        float* p = ds.samples.data.data() + (r * ch + c) * len;
        for (std::size_t t = 0; t < len; ++t) p[t] = static_cast<float>((p[t] - shift[s]) / scale[s]);
      }
    }
  }

  nlohmann::json to_json() const {
    return {{"mode", std::string(to_string(mode))}, {"shift", shift}, {"scale", scale}};
  }
};

/// Fits statistics on `train`: zscore uses population std over all samples and
/// time steps of each channel; minmax maps the global range onto [0, 1].
inline NormStats fit_normalization(const SignalDataset& train, NormMode mode) {
  NormStats st;
  st.mode = mode;
  const std::size_t ch = train.channels(), len = train.length();
  if (mode == NormMode::per_channel_zscore) {
    for (std::size_t c = 0; c < ch; ++c) {
      double sum = 0.0, sq = 0.0;
      const double count = static_cast<double>(train.size() * len);
      for (std::size_t r = 0; r < train.size(); ++r) {
        const float* p = train.samples.data.data() + (r * ch + c) * len;
        for (std::size_t t = 0; t < len; ++t) sum += p[t];
      }
      const double mean = sum / count;
      for (std::size_t r = 0; r < train.size(); ++r) {
        const float* p = train.samples.data.data() + (r * ch + c) * len;
        for (std::size_t t = 0; t < len; ++t) sq += (p[t] - mean) * (p[t] - mean);
      }
      const double sd = std::sqrt(sq / count);
      if (!(sd > 0.0)) throw ConfigError("normalization: channel " + std::to_string(c) + " has zero variance");
      st.shift.push_back(mean);
      st.scale.push_back(sd);
    }
  } else {
    const auto [lo, hi] = std::minmax_element(train.samples.data.begin(), train.samples.data.end());
    if (!(*hi > *lo)) throw ConfigError("normalization: dataset is constant");
    st.shift.push_back(*lo);
    st.scale.push_back(static_cast<double>(*hi) - *lo);
  }
  return st;
}

// ---------------------------------------------------------------------------
// Splitting

/// Stratified split: per class, round(ratio * n_c) shuffled members go to the
/// first part. Both parts keep the original sample order.
inline std::pair<SignalDataset, SignalDataset> split(const SignalDataset& ds, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie in (0, 1)");
  std::vector<std::size_t> first, second;
  for (std::size_t c = 0; c < ds.class_count(); ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.labels[i] == c) members.push_back(i);
    }
    if (members.size() < 2) {
      throw ConfigError("split: class '" + ds.class_names[c] + "' has fewer than 2 samples");
    }
    Rng rng(derive_seed(seed, {c}));
    std::shuffle(members.begin(), members.end(), rng);
    auto take = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(members.size())));
    take = std::clamp<std::size_t>(take, 1, members.size() - 1);
    first.insert(first.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
    second.insert(second.end(), members.begin() + static_cast<std::ptrdiff_t>(take), members.end());
  }
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  return {ds.subset(first), ds.subset(second)};
}

// ---------------------------------------------------------------------------
// CSV

struct CsvSchema {
  std::size_t channels = 0;
  std::size_t length = 0;
  std::string label_column = "label";
  std::vector<std::string> class_names;
  double sample_rate = 1.0;

  nlohmann::json to_json() const {
    return {{"channels", channels},
            {"length", length},
            {"label_column", label_column},
            {"class_names", class_names},
            {"sample_rate", sample_rate}};
  }

  static CsvSchema from_json(const nlohmann::json& j) {
    CsvSchema s;
    try {
      s.channels = j.at("channels").get<std::size_t>();
      s.length = j.at("length").get<std::size_t>();
      s.label_column = j.value("label_column", std::string("label"));
      s.class_names = j.at("class_names").get<std::vector<std::string>>();
      s.sample_rate = j.value("sample_rate", 1.0);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("csv schema: ") + e.what());
    }
    if (s.channels == 0 || s.length == 0 || s.class_names.size() < 2) {
      throw ConfigError("csv schema: channels, length must be >= 1 and at least 2 classes declared");
    }
    return s;
  }
};

inline std::string schema_path_for(const std::string& csv_path) { return csv_path + ".schema.json"; }

inline CsvSchema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open schema '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptDataError("schema '" + path + "': " + e.what());
  }
  return CsvSchema::from_json(j);
}

/// Writes one row per sample (class name, then channel-major values) plus the
/// schema next to it. Floats use the shortest round-trip representation.
inline void save_csv(const SignalDataset& ds, const std::string& path) {
  ds.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  const std::size_t ch = ds.channels(), len = ds.length(), w = ch * len;
  out << "label";
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t t = 0; t < len; ++t) out << ",c" << c << "_t" << t;
  }
  out << '\n';
  char buf[64];
  for (std::size_t r = 0; r < ds.size(); ++r) {
    out << ds.class_names[ds.labels[r]];
    for (std::size_t j = 0; j < w; ++j) {
      auto res = std::to_chars(buf, buf + sizeof buf, ds.samples[r * w + j]);
      out << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
  CsvSchema schema{ch, len, "label", ds.class_names, ds.sample_rate};
  std::ofstream sj(schema_path_for(path), std::ios::trunc);
  if (!sj) throw IoError("cannot write '" + schema_path_for(path) + "'");
  sj << schema.to_json().dump(2) << '\n';
}

inline SignalDataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  const std::size_t w = schema.channels * schema.length;
  std::string line;
  std::size_t lineno = 0;
  std::size_t label_col = 0;
  if (!std::getline(in, line)) throw CorruptDataError(path + ": empty file");
  ++lineno;
  {
    std::vector<std::string> header;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) header.push_back(cell);
    auto it = std::find(header.begin(), header.end(), schema.label_column);
    if (it == header.end()) throw CorruptDataError(path + ":1: missing label column '" + schema.label_column + "'");
    label_col = static_cast<std::size_t>(it - header.begin());
    if (header.size() != w + 1) {
      throw CorruptDataError(path + ":1: header has " + std::to_string(header.size()) + " fields, expected " +
                             std::to_string(w + 1));
    }
  }
  std::vector<float> values;
  std::vector<std::size_t> labels;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string_view> cells;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      cells.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    const std::string where = path + ":" + std::to_string(lineno) + ": ";
    if (cells.size() != w + 1) {
      throw CorruptDataError(where + "expected " + std::to_string(w + 1) + " fields, found " + std::to_string(cells.size()));
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i == label_col) {
        auto it = std::find(schema.class_names.begin(), schema.class_names.end(), cells[i]);
        if (it == schema.class_names.end()) throw CorruptDataError(where + "unknown label '" + std::string(cells[i]) + "'");
        labels.push_back(static_cast<std::size_t>(it - schema.class_names.begin()));
        continue;
      }
      float v = 0.0F;
      const auto cell = cells[i];
      auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        throw CorruptDataError(where + "cannot parse value '" + std::string(cell) + "' in column " + std::to_string(i + 1));
      }
      values.push_back(v);
    }
  }
  if (labels.empty()) throw CorruptDataError(path + ": no samples after the header");
  SignalDataset ds;
  ds.samples = Tensor(Shape{labels.size(), schema.channels, schema.length}, std::move(values));
  ds.labels = std::move(labels);
  ds.class_names = schema.class_names;
  ds.sample_rate = schema.sample_rate;
  ds.provenance = "csv " + path;
  ds.validate();
  return ds;
}

}  // namespace shmguard
