// Command-line front end. Every subcommand writes <command>.json (plus CSV
// tables where useful) into --out.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "shmguard/evalcli.hpp"

namespace fs = std::filesystem;
using namespace shmguard;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kNumeric = 3, kIo = 4 };

struct Options {
  std::string config;
  std::uint64_t seed = 0;
  std::string out = ".";
};

json report_json(Session& s, const std::string& command) {
  json j = s.header(command);
  j["config"] = to_json(s.config());
  return j;
}

void cmd_gen_data(Session& s, const fs::path& out) {
  const SignalDataset ds = load_dataset(s.config().dataset, s.seed());
  const fs::path csv = out / "dataset.csv";
  fs::create_directories(out);
  save_csv(ds, csv.string());
  std::vector<std::size_t> counts(ds.class_count(), 0);
  for (std::size_t y : ds.labels) ++counts[y];
  json j = report_json(s, "gen-data");
  j["dataset"] = {{"path", "dataset.csv"},
                  {"samples", ds.size()},
                  {"channels", ds.channels()},
                  {"length", ds.length()},
                  {"sample_rate", ds.sample_rate},
                  {"class_names", ds.class_names},
                  {"class_counts", counts},
                  {"provenance", ds.provenance}};
  write_json(out / "gen-data.json", j);
  std::cout << "wrote " << csv.string() << " (" << ds.size() << " samples)\n";
}

void cmd_train(Session& s, const fs::path& out) {
  const ModelEntry e = s.configured_entry();
  const TrainResult& r = s.train(e);
  fs::create_directories(out);
  save(r.net, (out / "model.ckpt").string());
  json epochs = json::array();
  for (const auto& ep : r.log.epochs) {
    epochs.push_back({{"loss", ep.loss},
                      {"train_accuracy", 100.0 * ep.clean_accuracy},
                      {"adversarial_accuracy", ep.adversarial_accuracy ? json(100.0 * *ep.adversarial_accuracy) : json(nullptr)},
                      {"family_counts", ep.family_counts}});
  }
  const auto& d = s.data();
  json j = report_json(s, "train");
  j["model"] = {{"mode", std::string(to_string(e.mode))},
                {"beta", float_json(s.beta_for(e))},
                {"checkpoint", "model.ckpt"},
                {"parameters", r.net.parameter_count()},
                {"test_accuracy", accuracy_percent(predict(r.net, d.test.samples), d.test.labels)}};
  if (e.mode != TrainMode::standard && e.mode != TrainMode::distill) j["train_epsilon"] = float_json(s.train_epsilon());
  j["normalization"] = d.norm.to_json();
  j["epochs"] = epochs;
  write_json(out / "train.json", j);
  std::cout << "trained " << to_string(e.mode) << ", test accuracy " << fixed2(j["model"]["test_accuracy"].get<double>())
            << "%\n";
}

void cmd_attack(Session& s, const fs::path& out) {
  const Network& net = s.subject();
  const auto& test = s.data().test;
  json rows = json::array();
  fs::create_directories(out);
  for (const auto& a : s.attacks()) {
    const AdvBatch adv = run_attack(net, test.samples, test.labels, a.spec);
    SignalDataset ds = test;
    ds.samples = adv.x_adv;
    ds.provenance = "adversarial:" + a.name;
    const std::string file = "adv_" + a.name + ".csv";
    save_csv(ds, (out / file).string());
    const auto pred = predict(net, adv.x_adv);
    const AttackRow row = detail::summarize(a.name, a.spec.eps, adv, pred, test.labels);
    rows.push_back({{"attack", a.name},
                    {"eps", float_json(a.spec.eps)},
                    {"file", file},
                    {"success_rate", 100.0 * adv.success_rate()},
                    {"accuracy", row.accuracy},
                    {"mean_linf", row.mean_linf},
                    {"mean_l2", row.mean_l2},
                    {"mean_snr_db", row.mean_snr_db ? json(*row.mean_snr_db) : json(nullptr)}});
    std::cout << a.name << ": success " << fixed2(100.0 * adv.success_rate()) << "%, wrote " << file << "\n";
  }
  json j = report_json(s, "attack");
  j["model_id"] = s.subject_id();
  j["epsilon"] = s.calibration().to_json();
  j["attacks"] = rows;
  write_json(out / "attack.json", j);
}

void cmd_eval(Session& s, const fs::path& out) {
  const auto attacks = s.attacks();
  const RobustnessReport r = evaluate_robustness(s.subject_id(), s.subject(), s.data().test, attacks, s.hash(), s.seed());
  json j = report_json(s, "eval");
  j["epsilon"] = s.calibration().to_json();
  j["report"] = r.to_json();
  write_json(out / "eval.json", j);
  emit_report(r, ReportFormat::csv, out / "eval.csv");
  for (const auto& row : r.rows) std::cout << row.attack << ": " << fixed2(row.accuracy) << "%\n";
}

void cmd_transfer(Session& s, const fs::path& out) {
  std::vector<NamedModel> models;
  for (const auto& e : s.config().eval.transfer_models) models.push_back({e.id, &s.model(e)});
  std::vector<TransferMatrix> ms;
  json arr = json::array();
  for (const auto& a : s.attacks()) {
    ms.push_back(transfer_matrix(models, a, s.data().test));
    arr.push_back(ms.back().to_json());
    std::cout << a.name << ": diagonal " << fixed2(ms.back().diagonal_mean()) << "%, off-diagonal "
              << fixed2(ms.back().off_diagonal_mean()) << "%\n";
  }
  json j = report_json(s, "transfer");
  j["epsilon"] = s.calibration().to_json();
  j["matrices"] = arr;
  write_json(out / "transfer.json", j);
  write_text(out / "transfer.csv", transfer_csv(ms));
}

void cmd_gauss(Session& s, const fs::path& out) {
  const auto sigmas = s.gauss_sigmas();
  json arr = json::array();
  std::string csv = "model,sigma,accuracy,mean_l2\n";
  for (const auto& e : s.config().eval.report_models) {
    const auto pts = gaussian_sweep(s.model(e), s.data().test, sigmas, derive_seed(s.seed(), {21}));
    json p = json::array();
    for (const auto& g : pts) {
      p.push_back({{"sigma", float_json(g.sigma)}, {"accuracy", g.accuracy}, {"mean_l2", g.mean_l2}});
      csv += csv_escape(e.id) + "," + fixed2(g.sigma) + "," + fixed2(g.accuracy) + "," + fixed2(g.mean_l2) + "\n";
    }
    arr.push_back({{"model_id", e.id}, {"points", p}});
    std::cout << e.id << ": " << fixed2(pts.front().accuracy) << "% -> " << fixed2(pts.back().accuracy) << "%\n";
  }
  json j = report_json(s, "gauss");
  j["epsilon"] = s.calibration().to_json();
  j["sweeps"] = arr;
  write_json(out / "gauss.json", j);
  write_text(out / "gauss.csv", csv);
}

void cmd_ablate(Session& s, const fs::path& out) {
  const Architecture arch = s.arch();
  const auto subsets = s.config().eval.ablation_subsets.value_or(all_tap_subsets(arch));
  const float eps = s.epsilon();
  TrainSpec base = resolve_train_spec(s.config().train, TrainMode::at_circle,
                                      s.beta_for({.id = "at_circle", .mode = TrainMode::at_circle}), s.train_epsilon(),
                                      s.seed());
  AttackSpec f{AttackFamily::fgsm, eps, eps};
  AttackSpec b{AttackFamily::bim, eps, eps / 8.0F, 20};
  const auto rows = ablate_layers(arch, s.data(), subsets, base, f, b);
  json arr = json::array();
  std::string csv = "layers,clean,fgsm,bim,recommended\n";
  for (const auto& r : rows) {
    arr.push_back({{"layers", r.label()}, {"taps", r.taps}, {"clean", r.clean}, {"fgsm", r.fgsm}, {"bim", r.bim},
                   {"recommended", r.recommended}});
    csv += csv_escape(r.label()) + "," + fixed2(r.clean) + "," + fixed2(r.fgsm) + "," + fixed2(r.bim) + "," +
           (r.recommended ? "yes" : "no") + "\n";
    std::cout << r.label() << ": clean " << fixed2(r.clean) << "%, fgsm " << fixed2(r.fgsm) << "%, bim " << fixed2(r.bim)
              << "%" << (r.recommended ? " (recommended)" : "") << "\n";
  }
  json j = report_json(s, "ablate");
  j["epsilon"] = s.calibration().to_json();
  j["rows"] = arr;
  write_json(out / "ablate.json", j);
  write_text(out / "ablate.csv", csv);
}

void cmd_report(Session& s, const fs::path& out) {
  const auto attacks = s.attacks();
  json reports = json::array();
  std::string csv = kRobustnessCsvHeader;
  auto add = [&](const RobustnessReport& r) {
    reports.push_back(r.to_json());
    csv += robustness_csv_rows(r);
    std::cout << r.model_id << ": clean " << fixed2(r.clean_accuracy) << "%";
    for (const auto& row : r.rows) std::cout << ", " << row.attack << " " << fixed2(row.accuracy) << "%";
    std::cout << "\n";
  };
  for (const auto& e : s.config().eval.report_models) {
    add(evaluate_robustness(e.id, s.model(e), s.data().test, attacks, s.hash(), s.seed()));
  }
  if (s.config().eval.smoothing_baseline) {
    add(evaluate_smoothed("randomized_smoothing", s.model(Session::standard_entry()), s.data().test, attacks,
                          s.smoothing(), s.hash(), s.seed()));
  }
  json j = report_json(s, "report");
  j["epsilon"] = s.calibration().to_json();
  j["reports"] = reports;
  write_json(out / "report.json", j);
  write_text(out / "report.csv", csv);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial attacks and defenses for vibration-signal classifiers"};
  app.require_subcommand(1);
  Options opt;
  app.add_option("--config", opt.config, "Experiment config (JSON)");
  app.add_option("--seed", opt.seed, "Base random seed");
  app.add_option("--out", opt.out, "Output directory");

  const std::map<std::string, std::pair<std::string, std::function<void(Session&, const fs::path&)>>> commands{
      {"gen-data", {"Generate the configured dataset as CSV", cmd_gen_data}},
      {"train", {"Train the configured model and save a checkpoint", cmd_train}},
      {"attack", {"Craft adversarial examples against the model", cmd_attack}},
      {"eval", {"White-box robustness table for the model", cmd_eval}},
      {"transfer", {"Black-box transfer matrices", cmd_transfer}},
      {"gauss", {"Accuracy under Gaussian noise", cmd_gauss}},
      {"ablate", {"Circle loss applied at different layers", cmd_ablate}},
      {"report", {"Robustness tables for every defense", cmd_report}},
  };
  for (const auto& [name, c] : commands) app.add_subcommand(name, c.first)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    const ExperimentConfig cfg = opt.config.empty() ? ExperimentConfig{} : load_config(opt.config);
    Session session(cfg, opt.seed);
    for (const auto& [name, c] : commands) {
      if (app.got_subcommand(name)) c.second(session, fs::path(opt.out));
    }
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
}
