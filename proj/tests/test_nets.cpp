#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "shmguard/nets.hpp"
#include "test_support.hpp"

namespace shmguard {
namespace {

using testing::random_tensor;

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("shmguard_" + name)).string();
}

TEST(Nets, MlpPresetParameterCount) {
  Network net = build(mlp_preset({64}, 17, 4), 0);
  EXPECT_EQ(net.parameter_count(), 64U * 17 + 17 + 17 * 4 + 4);
  EXPECT_EQ(net.class_count, 4U);
}

TEST(Nets, BuildIsDeterministicPerSeed) {
  EXPECT_EQ(build(mlp_preset({64}, 17, 4), 9).flat_params(), build(mlp_preset({64}, 17, 4), 9).flat_params());
  EXPECT_NE(build(mlp_preset({64}, 17, 4), 9).flat_params(), build(mlp_preset({64}, 17, 4), 10).flat_params());
}

TEST(Nets, GlorotBounds) {
  Network net = build(mlp_preset({64}, 17, 4), 3);
  const double limit = std::sqrt(6.0 / (64 + 17));
  for (float w : net.params[0].data) EXPECT_LE(std::abs(w), limit);
}

TEST(Nets, CnnPresetShapeContract) {
  Network net = build(cnn_preset(2, 128, 4), 1);
  std::mt19937_64 rng(1);
  Tensor logits = forward_logits(net, random_tensor({3, 2, 128}, rng));
  EXPECT_EQ(logits.shape, (Shape{3, 4}));
  EXPECT_EQ(net.tap_ids(), (std::vector<std::string>{"layer1", "layer2", "layer3"}));
}

TEST(Nets, CompositionErrors) {
  EXPECT_THROW(build(Architecture{{8}, {LayerSpec::dense(7, 3)}}, 0), ShapeError);
  EXPECT_THROW(build(Architecture{{2, 16}, {LayerSpec::conv1d(3, 4, 3)}}, 0), ShapeError);
  EXPECT_THROW(build(Architecture{{8}, {LayerSpec::dense(8, 1)}}, 0), ShapeError);
  EXPECT_THROW(build(Architecture{{8}, {LayerSpec::dense(8, 4, "a"), LayerSpec::relu("a"), LayerSpec::dense(4, 2)}}, 0),
               ShapeError);
  EXPECT_THROW(build(Architecture{{8}, {LayerSpec::dense(8, 0)}}, 0), ShapeError);
}

TEST(Nets, ZeroParametersGiveZeroLogits) {
  Network net = build(mlp_preset({6}, 4, 3), 5);
  net.set_flat_params(std::vector<float>(net.parameter_count(), 0.0F));
  std::mt19937_64 rng(2);
  Tensor logits = forward_logits(net, random_tensor({5, 6}, rng));
  for (float v : logits.data) EXPECT_EQ(v, 0.0F);
}

TEST(Nets, IdentityWeights) {
  Network net = build(Architecture{{2}, {LayerSpec::dense(2, 2)}}, 0);
  net.params[0].data = {1, 0, 0, 1};
  net.params[1].data = {0, 0};
  Tensor logits = forward_logits(net, Tensor::matrix(1, 2, {3, 5}));
  EXPECT_EQ(logits.data, (std::vector<float>{3, 5}));
}

TEST(Nets, SoftmaxRowsSumToOne) {
  Network net = build(cnn_preset(2, 64, 3), 4);
  std::mt19937_64 rng(4);
  Tensor logits = forward_logits(net, random_tensor({6, 2, 64}, rng, -3, 3));
  for (std::size_t r = 0; r < 6; ++r) {
    double z = 0;
    auto row = logits.row(r);
    const float mx = *std::max_element(row.begin(), row.end());
    for (float v : row) z += std::exp(v - mx);
    double s = 0;
    for (float v : row) s += std::exp(v - mx) / z;
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Nets, BatchConsistencyAndPermutation) {
  Network net = build(cnn_preset(2, 64, 4), 8);
  std::mt19937_64 rng(8);
  Tensor x = random_tensor({5, 2, 64}, rng);
  Tensor all = forward_logits(net, x);
  Tensor one = forward_logits(net, slice_rows(x, 0, 1));
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(one[j], all[j]);

  std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  Tensor permuted = forward_logits(net, take_rows(x, perm));
  for (std::size_t r = 0; r < perm.size(); ++r) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(permuted[r * 4 + j], all[perm[r] * 4 + j]);
  }
}

TEST(Nets, InputShapeMismatch) {
  Network net = build(mlp_preset({6}, 4, 3), 0);
  EXPECT_THROW(forward_logits(net, Tensor::matrix(2, 5, std::vector<float>(10, 0.0F))), ShapeError);
}

TEST(Nets, FeaturesAreUnitRows) {
  Network net = build(cnn_preset(2, 64, 4), 3);
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({6, 2, 64}, rng, -2, 2);
  for (const std::string tap : {"layer1", "layer2", "layer3", "penultimate"}) {
    Tensor f = features_at(net, x, tap);
    for (std::size_t r = 0; r < f.rows(); ++r) {
      double s = 0;
      for (float v : f.row(r)) s += static_cast<double>(v) * v;
      if (s > 0) EXPECT_NEAR(std::sqrt(s), 1.0, 1e-5) << tap;
    }
  }
  EXPECT_THROW(features_at(net, x, "layer9"), ConfigError);
}

TEST(Nets, DuplicateInputsGiveIdenticalFeatures) {
  Network net = build(mlp_preset({2, 32}, 17, 4), 6);
  std::mt19937_64 rng(6);
  Tensor one = random_tensor({1, 2, 32}, rng);
  Tensor two(Shape{2, 2, 32});
  std::copy(one.data.begin(), one.data.end(), two.data.begin());
  std::copy(one.data.begin(), one.data.end(), two.data.begin() + 64);
  Tensor f = features_at(net, two, "penultimate");
  for (std::size_t j = 0; j < f.row_size(); ++j) EXPECT_EQ(f.row(0)[j], f.row(1)[j]);
}

TEST(Nets, PenultimateFeedsSingleDenseLayer) {
  Network mlp = build(mlp_preset({64}, 17, 4), 0);
  EXPECT_EQ(mlp.penultimate_tap(), "hidden");
  EXPECT_EQ(mlp.output_shape_of(mlp.penultimate_layer()), (Shape{17}));
  Network cnn = build(cnn_preset(2, 128, 4), 0);
  EXPECT_EQ(cnn.penultimate_tap(), "layer3");
  for (const Network* n : {&mlp, &cnn}) {
    const std::size_t p = n->penultimate_layer();
    EXPECT_EQ(p + 2, n->arch.layers.size());
    EXPECT_EQ(n->arch.layers[p + 1].kind, LayerKind::dense);
  }
}

TEST(Nets, CheckpointRoundTripIsBitExact) {
  Network net = build(mlp_preset({64}, 17, 4), 12);
  net.meta.loss_mode = "at_circle";
  net.meta.epoch = 7;
  const std::string path = temp_path("rt.ckpt");
  save(net, path);
  Network back = load(path);
  EXPECT_EQ(back.arch, net.arch);
  EXPECT_EQ(back.meta, net.meta);
  std::mt19937_64 rng(12);
  Tensor x = random_tensor({9, 64}, rng, -4, 4);
  EXPECT_EQ(forward_logits(back, x).data, forward_logits(net, x).data);
  std::remove(path.c_str());
}

TEST(Nets, CheckpointTruncatedBlob) {
  Network net = build(cnn_preset(2, 64, 3), 1);
  const std::string path = temp_path("trunc.ckpt");
  save(net, path);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 6);
  EXPECT_THROW(load(path), CorruptDataError);
  std::remove(path.c_str());
}

TEST(Nets, CheckpointVersionMismatch) {
  Network net = build(mlp_preset({4}, 3, 2), 1);
  const std::string path = temp_path("ver.ckpt");
  save(net, path);
  std::ifstream in(path, std::ios::binary);
  std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  const auto pos = contents.find("\"version\":1");
  ASSERT_NE(pos, std::string::npos);
  contents.replace(pos, 11, "\"version\":999");
  std::ofstream(path, std::ios::binary | std::ios::trunc) << contents;
  EXPECT_THROW(load(path), VersionError);
  EXPECT_THROW(load(temp_path("does_not_exist.ckpt")), IoError);
  std::remove(path.c_str());
}

TEST(Nets, CrossEntropyThroughForwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(31);
  int checked = 0;
  while (checked < 5) {
    Network net = build(cnn_preset(2, 24, 3, 3, 5, 2, 6, 5), rng());
    Tensor x = random_tensor({2, 2, 24}, rng);
    auto y = testing::random_labels(2, 3, rng);
    if (testing::kink_margin(net, x) < 2e-3) continue;
    EXPECT_LT(testing::network_param_fd(net, x, y, CombinedLossSpec{}, 1e-3F), 1e-3);
    ++checked;
  }
}

}  // namespace
}  // namespace shmguard
