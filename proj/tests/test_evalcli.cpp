#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "shmguard/evalcli.hpp"
#include "test_support.hpp"

namespace shmguard {
namespace {

std::string config_error(const json& j) {
  try {
    parse_config(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(Config, EmptyDocumentGivesDefaults) {
  const ExperimentConfig c = parse_config(json::object());
  EXPECT_EQ(c.dataset.source, "synthetic");
  EXPECT_EQ(c.model.hidden, 17U);
  EXPECT_EQ(c.attacks.size(), 4U);
  EXPECT_FALSE(c.train.beta.has_value());
  EXPECT_EQ(c.eval.transfer_models.size(), 4U);
}

TEST(Config, UnknownKeysNameTheirPath) {
  EXPECT_EQ(config_error({{"extra", 1}}), "unknown key '/extra'");
  EXPECT_EQ(config_error({{"train", {{"epoch", 3}}}}), "unknown key '/train/epoch'");
  EXPECT_EQ(config_error({{"train", {{"circle", {{"m", 0.2}}}}}}), "unknown key '/train/circle/m'");
  EXPECT_EQ(config_error({{"attacks", {{{"family", "fgsm"}}, {{"family", "bim"}, {"budget", 1}}}}}),
            "unknown key '/attacks/1/budget'");
  EXPECT_EQ(config_error({{"eval", {{"transfer_models", {{{"id", "a"}, {"colour", "red"}}}}}}}),
            "unknown key '/eval/transfer_models/0/colour'");
  json cls = {{"name", "x"}, {"freqs", {10.0}}, {"damping", {1.0}}, {"amplitude", {1.0}}, {"shape", 2}};
  EXPECT_EQ(config_error({{"dataset", {{"synthetic", {{"classes", {cls}}}}}}}),
            "unknown key '/dataset/synthetic/classes/0/shape'");
}

TEST(Config, TypeAndRangeErrorsNameTheirPath) {
  EXPECT_NE(config_error({{"train", {{"epochs", "ten"}}}}).find("/train/epochs"), std::string::npos);
  EXPECT_NE(config_error({{"train", {{"epochs", -1}}}}).find("/train/epochs"), std::string::npos);
  EXPECT_NE(config_error({{"train", {{"mode", "magic"}}}}).find("/train/mode"), std::string::npos);
  EXPECT_NE(config_error({{"attacks", {{{"family", "zoo"}}}}}).find("/attacks/0/family"), std::string::npos);
  EXPECT_NE(config_error({{"attacks", {{{"eps", 0.1}}}}}).find("/attacks/0"), std::string::npos);
  EXPECT_NE(config_error({{"dataset", {{"split_ratio", 1.5}}}}).find("/dataset/split_ratio"), std::string::npos);
  EXPECT_NE(config_error({{"dataset", {{"synthetic", {{"sample_rate", 100.0}}}}}}).find("Nyquist"), std::string::npos);
  EXPECT_NE(config_error({{"eval", {{"calibration", {{"ratio", 0.5}}}}}}).find("/eval/calibration"), std::string::npos);
  EXPECT_NE(config_error({{"train", json::array()}}).find("/train: expected an object"), std::string::npos);
  EXPECT_NE(config_error({{"eval", {{"report_models", {{{"id", "a"}}, {{"id", "a"}}}}}}}).find("duplicate"),
            std::string::npos);
}

TEST(Config, ResolvedFormRoundTrips) {
  json j = {{"train", {{"mode", "at_circle"}, {"beta", 0.3}, {"learning_rate", 0.01}}},
            {"attacks", {{{"family", "pgd"}, {"iters", 7}, {"eps", 0.2}}}},
            {"eval", {{"gauss_sigmas", {0.0, 0.1}}, {"ablation_subsets", {json::array(), {"layer1"}}}}}};
  const ExperimentConfig c = parse_config(j);
  const json resolved = to_json(c);
  EXPECT_EQ(to_json(parse_config(resolved)), resolved);
  EXPECT_EQ(config_hash(parse_config(resolved)), config_hash(c));
  EXPECT_EQ(resolved["train"]["learning_rate"], 0.01);
}

TEST(Config, HashIsStableAndSensitive) {
  const ExperimentConfig a = parse_config(json::object());
  EXPECT_EQ(config_hash(a), config_hash(parse_config(json::object())));
  EXPECT_EQ(config_hash(a).size(), 16U);
  EXPECT_NE(config_hash(a), config_hash(parse_config({{"train", {{"epochs", 41}}}})));
  EXPECT_NE(config_hash(a), config_hash(parse_config({{"attacks", json::array()}})));
}

TEST(Config, AttackResolution) {
  AttackEntry pgd{AttackFamily::pgd};
  pgd.iters = 20;
  const AttackSpec s = pgd.resolve(0.4F, 5);
  EXPECT_FLOAT_EQ(s.eps, 0.4F);
  EXPECT_FLOAT_EQ(s.step, 0.05F);
  EXPECT_EQ(s.seed, 5U);
  pgd.eps = 0.0F;
  EXPECT_NO_THROW(pgd.resolve(0.4F, 5));
  EXPECT_EQ(pgd.label(), "pgd-20");
  AttackEntry f{AttackFamily::fgsm};
  EXPECT_FLOAT_EQ(f.resolve(0.3F, 0).eps, 0.3F);
}

// Small four-class problem with well separated class means.
SignalDataset four_class(std::size_t per_class, std::uint64_t seed) {
  SignalDataset ds;
  ds.class_names = {"a", "b", "c", "d"};
  ds.samples = Tensor(Shape{4 * per_class, 1, 4});
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> nd(0.0F, 0.2F);
  for (std::size_t i = 0; i < 4 * per_class; ++i) {
    const std::size_t y = i % 4;
    ds.labels.push_back(y);
    for (std::size_t k = 0; k < 4; ++k) ds.samples[i * 4 + k] = (k == y ? 2.0F : 0.0F) + nd(rng);
  }
  return ds;
}

Network trained_toy(std::uint64_t seed) {
  TrainSpec s;
  s.epochs = 10;
  s.batch_size = 16;
  s.learning_rate = 0.02F;
  s.seed = seed;
  return standard_train(build(mlp_preset({1, 4}, 8, 4), seed), four_class(40, 1), s).net;
}

std::vector<NamedAttack> some_attacks(float eps) {
  const float step = eps > 0 ? eps / 4 : 0.1F;
  return {{"fgsm", AttackSpec{AttackFamily::fgsm, eps}},
          {"bim", AttackSpec{AttackFamily::bim, eps, step, 8}},
          {"pgd", AttackSpec{AttackFamily::pgd, eps, step, 8, true}}};
}

TEST(Robustness, ZeroBudgetEqualsCountedCleanAccuracy) {
  const Network net = trained_toy(3);
  const SignalDataset test = four_class(25, 9);
  const auto rep = evaluate_robustness("toy", net, test, some_attacks(0.0F));
  // Independent count from raw logits.
  const Tensor z = forward_logits(net, test.samples);
  std::size_t hit = 0;
  for (std::size_t r = 0; r < test.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < 4; ++c) best = z[r * 4 + c] > z[r * 4 + best] ? c : best;
    hit += best == test.labels[r] ? 1 : 0;
  }
  const double counted = 100.0 * static_cast<double>(hit) / static_cast<double>(test.size());
  EXPECT_EQ(rep.clean_accuracy, counted);
  for (const auto& row : rep.rows) {
    EXPECT_EQ(row.accuracy, counted) << row.attack;
    EXPECT_EQ(row.mean_linf, 0.0);
    EXPECT_FALSE(row.mean_snr_db.has_value());
  }
}

TEST(Robustness, ConstantModelScoresChance) {
  Network net = build(mlp_preset({1, 4}, 8, 4), 1);
  for (auto& p : net.params) std::fill(p.data.begin(), p.data.end(), 0.0F);
  net.params.back().data = {0.0F, 0.0F, 1.0F, 0.0F};
  const auto rep = evaluate_robustness("const", net, four_class(25, 2), some_attacks(0.5F));
  EXPECT_EQ(rep.clean_accuracy, 25.0);
  for (const auto& row : rep.rows) EXPECT_EQ(row.accuracy, 25.0);
}

TEST(Robustness, InvariantsAndStats) {
  const Network net = trained_toy(3);
  const auto rep = evaluate_robustness("toy", net, four_class(25, 9), some_attacks(0.6F), "abc", 7);
  for (const auto& row : rep.rows) {
    EXPECT_GE(row.accuracy, 0.0);
    EXPECT_LE(row.accuracy, 100.0);
    EXPECT_EQ(row.samples, 100U);
    EXPECT_LE(row.mean_linf, 0.6 + 1e-6);
    EXPECT_GT(row.mean_l2, 0.0);
    ASSERT_TRUE(row.mean_snr_db.has_value());
  }
  EXPECT_LE(rep.rows[1].accuracy, rep.rows[0].accuracy + 5.0);
}

TEST(Report, JsonRoundTripAndCsvShape) {
  const Network net = trained_toy(3);
  const auto rep = evaluate_robustness("toy", net, four_class(25, 9), some_attacks(0.6F), "0123456789abcdef", 7);
  const auto dir = std::filesystem::temp_directory_path() / "shmguard_report_test";
  emit_report(rep, ReportFormat::json, dir / "r.json");
  emit_report(rep, ReportFormat::csv, dir / "r.csv");
  EXPECT_EQ(RobustnessReport::from_json(read_json(dir / "r.json")), rep);
  std::ifstream in(dir / "r.csv");
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), rep.rows.size() + 1);
  EXPECT_EQ(lines[0] + "\n", kRobustnessCsvHeader);
  EXPECT_NE(lines[1].find("toy,fgsm,0.60,"), std::string::npos);
  EXPECT_NE(lines[1].find(",0123456789abcdef,7"), std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST(Report, FixedTwoDecimals) {
  EXPECT_EQ(fixed2(86.9812), "86.98");
  EXPECT_EQ(fixed2(0.005), "0.01");
  EXPECT_EQ(fixed2(100.0), "100.00");
  EXPECT_EQ(csv_escape("a,b"), "\"a,b\"");
}

TEST(Transfer, SingleModelIsWhiteBox) {
  const Network net = trained_toy(3);
  const SignalDataset test = four_class(25, 9);
  const auto attacks = some_attacks(0.6F);
  const std::vector<NamedModel> one{{"toy", &net}};
  const auto tm = transfer_matrix(one, attacks[2], test);
  ASSERT_EQ(tm.cells.size(), 1U);
  EXPECT_EQ(tm.cells[0][0], evaluate_robustness("toy", net, test, attacks).rows[2].accuracy);
  EXPECT_TRUE(std::isnan(tm.off_diagonal_mean()));
}

TEST(Transfer, DiagonalMatchesWhiteBoxAndMeans) {
  const Network a = trained_toy(3), b = trained_toy(4), c = trained_toy(5);
  const SignalDataset test = four_class(25, 9);
  const auto attacks = some_attacks(0.6F);
  const std::vector<NamedModel> models{{"a", &a}, {"b", &b}, {"c", &c}};
  const auto tm = transfer_matrix(models, attacks[1], test);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(tm.cells[i][i], evaluate_robustness("x", *models[i].net, test, attacks).rows[1].accuracy);
  }
  double off = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t t = 0; t < 3; ++t) off += s == t ? 0 : tm.cells[s][t];
  }
  EXPECT_DOUBLE_EQ(tm.off_diagonal_mean(), off / 6);
  EXPECT_DOUBLE_EQ(tm.column_means()[1], (tm.cells[0][1] + tm.cells[1][1] + tm.cells[2][1]) / 3);
  const Network wrong = build(mlp_preset({1, 4}, 8, 3), 1);
  const std::vector<NamedModel> bad{{"a", &a}, {"w", &wrong}};
  EXPECT_THROW(transfer_matrix(bad, attacks[0], test), ConfigError);
}

TEST(Gauss, ZeroSigmaIsCleanAndSeeded) {
  const Network net = trained_toy(3);
  const SignalDataset test = four_class(25, 9);
  const std::vector<float> sigmas{0.0F, 0.5F, 2.0F};
  const auto a = gaussian_sweep(net, test, sigmas, 4);
  EXPECT_EQ(a[0].accuracy, 100.0 * accuracy(net, test.samples, test.labels));
  EXPECT_EQ(a[0].mean_l2, 0.0);
  const auto b = gaussian_sweep(net, test, sigmas, 4);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a[i].accuracy, b[i].accuracy);
  // E|N(0, s^2 I_4)| = s * sqrt(2) * Gamma(5/2) / Gamma(2); 100 draws.
  EXPECT_NEAR(a[2].mean_l2, 2.0 * std::sqrt(2.0) * std::tgamma(2.5), 0.5);
}

TEST(Calibration, PicksFirstGridPointBelowThreshold) {
  const Network net = trained_toy(3);
  const SignalDataset test = four_class(25, 9);
  CalibrationConfig cfg;
  cfg.start = 0.05F;
  cfg.ratio = 2.0F;
  cfg.iters = 5;
  const Calibration c = calibrate_epsilon(net, test, cfg, 1);
  ASSERT_TRUE(c.reached);
  ASSERT_FALSE(c.grid.empty());
  EXPECT_EQ(c.epsilon, c.grid.back().first);
  EXPECT_LT(c.grid.back().second, 30.0);
  for (std::size_t i = 0; i + 1 < c.grid.size(); ++i) {
    EXPECT_GE(c.grid[i].second, 30.0);
    EXPECT_FLOAT_EQ(c.grid[i + 1].first, 2.0F * c.grid[i].first);
  }
  cfg.max_steps = 1;
  cfg.start = 1e-4F;
  EXPECT_FALSE(calibrate_epsilon(net, test, cfg, 1).reached);
}

TEST(Geometry, HandComputedCosines) {
  // Identity "network": a dense layer whose penultimate features are the inputs.
  Network net = build(Architecture{{2}, {LayerSpec::dense(2, 2), LayerSpec::relu("h"), LayerSpec::dense(2, 2)}}, 0);
  net.params[0].data = {1, 0, 0, 1};
  SignalDataset ds;
  ds.class_names = {"a", "b"};
  ds.samples = Tensor(Shape{3, 2}, {1, 0, 1, 1, 0, 1});
  ds.labels = {0, 0, 1};
  const auto g = feature_geometry(net, ds);
  const double r = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(g.intra, r, 1e-6);
  EXPECT_NEAR(g.inter, (0.0 + r) / 2.0, 1e-6);
}

TEST(Ablation, SubsetEnumeration) {
  const auto cnn = all_tap_subsets(cnn_preset(2, 128, 4));
  ASSERT_EQ(cnn.size(), 8U);
  EXPECT_TRUE(cnn[0].empty());
  EXPECT_EQ(cnn[1], std::vector<std::string>{"layer1"});
  EXPECT_EQ(cnn[3], std::vector<std::string>{"layer3"});
  EXPECT_EQ(cnn[7], (std::vector<std::string>{"layer1", "layer2", "layer3"}));
  EXPECT_EQ(all_tap_subsets(mlp_preset({8}, 4, 2)).size(), 2U);
}

TEST(Ablation, RowsAndRecommendation) {
  PreparedData d{four_class(20, 1), four_class(10, 2), {}};
  const Architecture arch = mlp_preset({1, 4}, 8, 4);
  TrainSpec base;
  base.epochs = 3;
  base.batch_size = 16;
  base.seed = 4;
  base.loss.beta = 0.2F;
  base.pgd = AttackSpec{AttackFamily::pgd, 0.3F, 0.1F, 3, true};
  base.fgsm = AttackSpec{AttackFamily::fgsm, 0.3F};
  base.cw = AttackSpec{AttackFamily::cw_l2, 0.3F, 0.0F, 1, false, 1.0F, 0.0F, 5};
  const AttackSpec f{AttackFamily::fgsm, 0.3F};
  const AttackSpec b{AttackFamily::bim, 0.3F, 0.05F, 5};
  const auto subsets = all_tap_subsets(arch);
  const auto rows = ablate_layers(arch, d, subsets, base, f, b);
  ASSERT_EQ(rows.size(), 2U);
  EXPECT_EQ(rows[0].label(), "None");
  EXPECT_FALSE(rows[0].recommended);
  EXPECT_TRUE(rows[1].recommended);
  // The empty subset is adversarial training without the circle term.
  TrainSpec plain = base;
  plain.mode = TrainMode::at_circle;
  plain.loss.beta = 0.0F;
  const Network ref = adversarial_train(build(arch, base.seed), d.train, plain).net;
  EXPECT_EQ(rows[0].clean, 100.0 * accuracy(ref, d.test.samples, d.test.labels));
  const std::vector<std::vector<std::string>> bad{{"nope"}};
  EXPECT_THROW(ablate_layers(arch, d, bad, base, f, b), ConfigError);
}

TEST(Session, CachesModelsAndResolvesBeta) {
  ExperimentConfig cfg = parse_config({{"dataset", {{"synthetic", {{"samples_per_class", 10}}}}},
                                       {"train", {{"epochs", 1}}},
                                       {"eval", {{"epsilon", 0.2}}}});
  Session s(cfg, 1);
  EXPECT_EQ(s.beta_for({.id = "x", .mode = TrainMode::at_circle}), kDefaultCircleBeta);
  EXPECT_EQ(s.beta_for({.id = "x", .mode = TrainMode::pgd_at}), 0.0F);
  EXPECT_EQ(s.beta_for({.id = "x", .mode = TrainMode::standard, .beta = 0.5F}), 0.5F);
  EXPECT_EQ(s.epsilon(), 0.2F);
  EXPECT_FALSE(s.calibration().calibrated);
  const Network* a = &s.model(Session::standard_entry());
  EXPECT_EQ(a, &s.model(Session::standard_entry()));
  EXPECT_EQ(s.data().train.size() + s.data().test.size(), 40U);
}

}  // namespace
}  // namespace shmguard
