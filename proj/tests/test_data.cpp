#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "shmguard/data.hpp"

namespace shmguard {
namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("shmguard_data_" + name)).string();
}

std::vector<double> random_signal(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

SynthSpec small_spec(std::uint64_t seed) {
  SynthSpec s = default_synth_spec();
  s.samples_per_class = 20;
  s.seed = seed;
  return s;
}

// Per-segment DFT written out from the definition with a symmetric-index Hann
// window, independent of the library transform.
std::vector<double> frf_oracle(const std::vector<double>& f, const std::vector<double>& a, std::size_t segments) {
  const std::size_t seg = f.size() / segments, bins = seg / 2 + 1;
  std::vector<double> sff(bins, 0.0), re(bins, 0.0), im(bins, 0.0);
  for (std::size_t s = 0; s < segments; ++s) {
    for (std::size_t k = 0; k < bins; ++k) {
      long double fr = 0, fi = 0, ar = 0, ai = 0;
      for (std::size_t t = 0; t < seg; ++t) {
        const long double w = 0.5L - 0.5L * std::cos(2.0L * std::numbers::pi_v<long double> * t / seg);
        const long double ang = -2.0L * std::numbers::pi_v<long double> * static_cast<long double>(k * t) / seg;
        fr += w * f[s * seg + t] * std::cos(ang);
        fi += w * f[s * seg + t] * std::sin(ang);
        ar += w * a[s * seg + t] * std::cos(ang);
        ai += w * a[s * seg + t] * std::sin(ang);
      }
      // conj(F) * A
      re[k] += static_cast<double>(fr * ar + fi * ai);
      im[k] += static_cast<double>(fr * ai - fi * ar);
      sff[k] += static_cast<double>(fr * fr + fi * fi);
    }
  }
  std::vector<double> out(bins);
  for (std::size_t k = 0; k < bins; ++k) out[k] = std::hypot(re[k], im[k]) / sff[k];
  return out;
}

TEST(Dft, ParsevalAndFftMatchesDirect) {
  std::mt19937_64 rng(1);
  for (std::size_t n : {8U, 16U, 64U, 128U, 25U, 40U}) {
    auto x = random_signal(n, rng);
    auto X = dft_real(x);
    double time = 0, freq = 0;
    for (double v : x) time += v * v;
    for (auto c : X) freq += std::norm(c);
    EXPECT_NEAR(freq / static_cast<double>(n), time, 1e-6 * time);
    std::vector<Complex> cx(x.begin(), x.end());
    auto direct = dft_direct(cx);
    for (std::size_t k = 0; k < n; ++k) EXPECT_LT(std::abs(direct[k] - X[k]), 1e-9 * n);
  }
}

TEST(Generate, PureSinusoidPeaksAtExpectedBin) {
  SynthSpec s;
  s.channels = 1;
  s.length = 128;
  s.sample_rate = 256.0;
  s.noise_floor = 0.0;
  s.freq_jitter = 0.0;
  s.amp_jitter = 0.0;
  s.samples_per_class = 1;
  s.classes = {{"a", {40.0}, {0.0}, {1.0}}, {"b", {70.0}, {0.0}, {1.0}}};
  SignalDataset ds = generate(s);
  for (std::size_t r = 0; r < 2; ++r) {
    std::vector<double> x(ds.samples.data.begin() + static_cast<std::ptrdiff_t>(r * 128),
                          ds.samples.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * 128));
    auto X = dft_real(x);
    std::size_t best = 0;
    for (std::size_t k = 0; k <= 64; ++k) {
      if (std::abs(X[k]) > std::abs(X[best])) best = k;
    }
    EXPECT_EQ(best, static_cast<std::size_t>(std::lround(s.classes[r].freqs[0] * 128 / 256.0)));
  }
}

TEST(Generate, DeterministicPerSeed) {
  EXPECT_EQ(generate(small_spec(3)).samples.data, generate(small_spec(3)).samples.data);
  EXPECT_NE(generate(small_spec(3)).samples.data, generate(small_spec(4)).samples.data);
  SignalDataset ds = generate(small_spec(3));
  EXPECT_EQ(ds.samples.shape, (Shape{80, 2, 128}));
  EXPECT_EQ(ds.class_names, (std::vector<std::string>{"DC0", "DC1", "DC2", "DC3"}));
}

TEST(Generate, NyquistAndDistinctness) {
  SynthSpec s = small_spec(0);
  s.classes[1].freqs[2] = 128.0;
  EXPECT_THROW(generate(s), ConfigError);
  s = small_spec(0);
  s.classes[2] = s.classes[0];
  EXPECT_THROW(generate(s), ConfigError);
}

TEST(Generate, ClassesAreSpectrallySeparable) {
  // Between-class distance of mean magnitude spectra exceeds the mean
  // within-class spread for every seed.
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SignalDataset ds = generate(small_spec(seed));
    const std::size_t len = ds.length(), bins = len / 2 + 1, C = ds.class_count();
    std::vector<std::vector<double>> spec(ds.size(), std::vector<double>(bins));
    for (std::size_t r = 0; r < ds.size(); ++r) {
      std::vector<double> x(ds.samples.data.begin() + static_cast<std::ptrdiff_t>(r * 2 * len),
                            ds.samples.data.begin() + static_cast<std::ptrdiff_t>(r * 2 * len + len));
      auto X = dft_real(x);
      for (std::size_t k = 0; k < bins; ++k) spec[r][k] = std::abs(X[k]);
    }
    std::vector<std::vector<double>> mean(C, std::vector<double>(bins, 0.0));
    std::vector<double> count(C, 0.0);
    for (std::size_t r = 0; r < ds.size(); ++r) {
      for (std::size_t k = 0; k < bins; ++k) mean[ds.labels[r]][k] += spec[r][k];
      count[ds.labels[r]] += 1;
    }
    for (std::size_t c = 0; c < C; ++c) {
      for (double& v : mean[c]) v /= count[c];
    }
    auto dist = [&](const std::vector<double>& a, const std::vector<double>& b) {
      double s = 0;
      for (std::size_t k = 0; k < bins; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
      return std::sqrt(s);
    };
    double within = 0;
    for (std::size_t r = 0; r < ds.size(); ++r) within += dist(spec[r], mean[ds.labels[r]]);
    within /= static_cast<double>(ds.size());
    double between = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < C; ++a) {
      for (std::size_t b = a + 1; b < C; ++b) between = std::min(between, dist(mean[a], mean[b]));
    }
    EXPECT_GT(between, within) << "seed " << seed;
  }
}

TEST(WelchFrf, MatchesDirectOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto f = random_signal(160, rng);
    auto a = random_signal(160, rng);
    auto got = welch_frf(f, a, 5);
    auto want = frf_oracle(f, a, 5);
    ASSERT_EQ(got.magnitude.size(), 17U);
    for (std::size_t k = 0; k < want.size(); ++k) EXPECT_NEAR(got.magnitude[k], want[k], 1e-9 * std::max(1.0, want[k]));
  }
}

TEST(WelchFrf, ScalingIdentity) {
  std::mt19937_64 rng(6);
  auto f = random_signal(320, rng);
  for (double c : {1.0, 2.0, 0.5, 3.25}) {
    std::vector<double> a(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) a[i] = c * f[i];
    auto frf = welch_frf(f, a, 5);
    for (double v : frf.magnitude) EXPECT_NEAR(v, c, 1e-12 * c);
  }
}

TEST(WelchFrf, BinCenterSinusoid) {
  const std::size_t seg = 32;
  std::vector<double> f(seg * 5), a(seg * 5);
  for (std::size_t t = 0; t < f.size(); ++t) {
    f[t] = std::sin(2 * std::numbers::pi * 4.0 * static_cast<double>(t) / seg);
    a[t] = 2.0 * f[t];
  }
  auto frf = welch_frf(f, a, 5);
  EXPECT_NEAR(frf.magnitude[4], 2.0, 1e-6);
  EXPECT_FALSE(frf.zero_force_bins.empty());
  for (std::size_t k : frf.zero_force_bins) EXPECT_EQ(frf.magnitude[k], 0.0);
}

TEST(WelchFrf, Errors) {
  std::vector<double> x(128, 1.0);
  EXPECT_THROW(welch_frf(x, x, 5), ConfigError);
  std::vector<double> y(35, 1.0);
  EXPECT_THROW(welch_frf(y, y, 5), ConfigError);
  std::vector<double> z(40, 1.0);
  EXPECT_THROW(welch_frf(z, std::vector<double>(45, 1.0), 5), ShapeError);
}

TEST(Normalize, ZscoreMeansVanishOnTrainingSplit) {
  SignalDataset ds = generate(small_spec(7));
  auto [train, val] = split(ds, 0.7, 7);
  NormStats st = fit_normalization(train, NormMode::per_channel_zscore);
  SignalDataset t = train;
  st.apply(t);
  NormStats again = fit_normalization(t, NormMode::per_channel_zscore);
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_LT(std::abs(again.shift[c]), 1e-6);
    EXPECT_NEAR(again.scale[c], 1.0, 1e-5);
  }
  SignalDataset twice = t;
  st.apply(twice);
  EXPECT_NE(twice.samples.data, t.samples.data);
}

TEST(Normalize, MinmaxHitsUnitInterval) {
  SignalDataset ds = generate(small_spec(8));
  NormStats st = fit_normalization(ds, NormMode::global_minmax);
  st.apply(ds);
  const auto [lo, hi] = std::minmax_element(ds.samples.data.begin(), ds.samples.data.end());
  EXPECT_EQ(*lo, 0.0F);
  EXPECT_EQ(*hi, 1.0F);
}

TEST(Normalize, ZeroVarianceChannel) {
  SignalDataset ds = generate(small_spec(9));
  for (std::size_t r = 0; r < ds.size(); ++r) {
    for (std::size_t t = 0; t < ds.length(); ++t) ds.samples[(r * 2 + 1) * ds.length() + t] = 3.0F;
  }
  EXPECT_THROW(fit_normalization(ds, NormMode::per_channel_zscore), ConfigError);
  EXPECT_THROW(norm_mode_from("l2"), ConfigError);
}

TEST(Split, StratifiedSevenToThree) {
  SynthSpec s = small_spec(10);
  s.samples_per_class = 100;
  SignalDataset ds = generate(s);
  auto [train, val] = split(ds, 0.7, 11);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_EQ(std::count(train.labels.begin(), train.labels.end(), c), 70);
    EXPECT_EQ(std::count(val.labels.begin(), val.labels.end(), c), 30);
  }
  auto [train2, val2] = split(ds, 0.7, 11);
  EXPECT_EQ(train.samples.data, train2.samples.data);
  EXPECT_EQ(val.labels, val2.labels);
}

TEST(Split, PartitionIsDisjointAndExhaustive) {
  SignalDataset ds = generate(small_spec(12));
  // Tag each sample with its index so membership can be recovered.
  const std::size_t w = ds.channels() * ds.length();
  for (std::size_t r = 0; r < ds.size(); ++r) ds.samples[r * w] = static_cast<float>(r);
  auto [a, b] = split(ds, 0.6, 3);
  std::multiset<float> seen;
  for (std::size_t r = 0; r < a.size(); ++r) seen.insert(a.samples[r * w]);
  for (std::size_t r = 0; r < b.size(); ++r) seen.insert(b.samples[r * w]);
  ASSERT_EQ(seen.size(), ds.size());
  for (std::size_t r = 0; r < ds.size(); ++r) EXPECT_EQ(seen.count(static_cast<float>(r)), 1U);
  EXPECT_THROW(split(ds, 1.0, 0), ConfigError);
  SignalDataset tiny = ds.subset(std::vector<std::size_t>{0, 20, 21, 40, 41, 60, 61});
  EXPECT_THROW(split(tiny, 0.5, 0), ConfigError);
}

TEST(Csv, RoundTripIsExact) {
  SignalDataset ds = generate(small_spec(13));
  const std::string path = temp_path("rt.csv");
  save_csv(ds, path);
  SignalDataset back = load_csv(path, load_schema(schema_path_for(path)));
  EXPECT_EQ(back.samples.data, ds.samples.data);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.class_names, ds.class_names);
  std::remove(path.c_str());
  std::remove(schema_path_for(path).c_str());
}

TEST(Csv, ErrorsNameTheLine) {
  SignalDataset ds = generate(small_spec(14)).subset(std::vector<std::size_t>{0, 25, 45, 70});
  const std::string path = temp_path("bad.csv");
  save_csv(ds, path);
  const CsvSchema schema = load_schema(schema_path_for(path));
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  in.close();
  auto write = [&](const std::vector<std::string>& ls) {
    std::ofstream out(path, std::ios::trunc);
    for (const auto& l : ls) out << l << '\n';
  };
  auto expect_line = [&](const std::string& needle) {
    try {
      load_csv(path, schema);
      FAIL() << "expected an error";
    } catch (const CorruptDataError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };

  auto ragged = lines;
  ragged[2] += ",1.0";
  write(ragged);
  expect_line(":3:");

  auto bad_float = lines;
  bad_float[3].replace(bad_float[3].find(',') + 1, 1, "x");
  write(bad_float);
  expect_line(":4:");

  auto bad_label = lines;
  bad_label[1].replace(0, 3, "DC9");
  write(bad_label);
  expect_line(":2:");

  write({lines[0]});
  expect_line("no samples");

  std::remove(path.c_str());
  std::remove(schema_path_for(path).c_str());
  EXPECT_THROW(load_csv(temp_path("missing.csv"), schema), IoError);
}

}  // namespace
}  // namespace shmguard
