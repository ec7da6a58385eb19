#include "moeamc/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "moeamc/checkpoint.hpp"
#include "moeamc/dataset_io.hpp"
#include "moeamc/report.hpp"
#include "moeamc/runconfig.hpp"
#include "moeamc/selftest.hpp"

namespace moeamc {

namespace {

namespace fs = std::filesystem;

std::string fmt6(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

nlohmann::json metrics_to_json(const SnrMetrics& m) {
  nlohmann::json j;
  j["n_classes"] = m.n_classes;
  j["has_gate"] = m.has_gate;
  j["per_snr"] = nlohmann::json::array();
  for (const auto& [snr, bin] : m.per_snr) {
    j["per_snr"].push_back({{"snr_db", snr},
                            {"correct", bin.correct},
                            {"total", bin.total},
                            {"gate_sum", bin.gate_sum}});
  }
  j["confusion"] = nlohmann::json::array();
  for (std::size_t r = 0; r < m.n_classes; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t c = 0; c < m.n_classes; ++c) row.push_back(m.confusion[r * m.n_classes + c]);
    j["confusion"].push_back(row);
  }
  return j;
}

SnrMetrics metrics_from_json(const nlohmann::json& j) {
  SnrMetrics m;
  m.n_classes = j.at("n_classes").get<std::size_t>();
  m.has_gate = j.at("has_gate").get<bool>();
  for (const auto& b : j.at("per_snr")) {
    SnrBin bin;
    bin.correct = b.at("correct").get<std::size_t>();
    bin.total = b.at("total").get<std::size_t>();
    bin.gate_sum = b.at("gate_sum").get<double>();
    m.per_snr[b.at("snr_db").get<double>()] = bin;
  }
  m.confusion.assign(m.n_classes * m.n_classes, 0);
  const auto& cm = j.at("confusion");
  for (std::size_t r = 0; r < m.n_classes; ++r) {
    for (std::size_t c = 0; c < m.n_classes; ++c) {
      m.confusion[r * m.n_classes + c] = cm.at(r).at(c).get<std::size_t>();
    }
  }
  return m;
}

int cmd_generate(const std::string& config_path) {
  RunConfig cfg = RunConfig::from_file(config_path);
  fs::create_directories(cfg.out_dir);
  Dataset full = generate_dataset(cfg.dataset);
  save_dataset(full, cfg.out_dir + "/dataset_full.bin");
  auto splits = split_dataset(full, cfg.split, cfg.split_seed());
  const char* names[3] = {"dataset_train.bin", "dataset_val.bin", "dataset_test.bin"};
  for (int i = 0; i < 3; ++i) save_dataset(splits[i], cfg.out_dir + "/" + names[i]);
  std::cout << "wrote " << cfg.out_dir << "/dataset_full.bin (" << full.examples.size()
            << " examples), splits " << splits[0].examples.size() << "/"
            << splits[1].examples.size() << "/" << splits[2].examples.size() << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& model_name) {
  RunConfig cfg = RunConfig::from_file(config_path);
  ModelKind kind = model_kind_from_name(model_name);
  fs::create_directories(cfg.out_dir);
  Dataset tr = load_dataset(cfg.out_dir + "/dataset_train.bin");
  Dataset va = load_dataset(cfg.out_dir + "/dataset_val.bin");

  Model<float> model = Model<float>::build(kind, cfg.dataset.frame_len, cfg.gate, cfg.hsrm,
                                           cfg.lsrm, cfg.init_seed(kind));
  TrainConfig tc = cfg.train;
  tc.seed = cfg.train_seed(kind);
  tc.model_kind = kind;
  TrainHistory history = train(model, tr, va, tc, &std::cout);

  save_checkpoint(model.store, model.config_json(), cfg.out_dir + "/" + model_name + ".ckpt");

  std::string csv = "epoch,train_loss,val_loss,val_acc\n";
  for (const auto& r : history.records) {
    csv += std::to_string(r.epoch) + "," + fmt6(r.train_loss) + "," + fmt6(r.val_loss) + "," +
           fmt6(r.val_acc) + "\n";
  }
  write_file_text(cfg.out_dir + "/history_" + model_name + ".csv", csv);
  std::cout << "trained " << model_name << ": " << history.records.size() << " epochs, best epoch "
            << history.best_epoch << (history.stopped_early ? " (early stop)" : "") << "\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& model_name,
             std::string ckpt_path) {
  RunConfig cfg = RunConfig::from_file(config_path);
  ModelKind kind = model_kind_from_name(model_name);
  if (ckpt_path.empty()) ckpt_path = cfg.out_dir + "/" + model_name + ".ckpt";
  if (!fs::exists(ckpt_path)) throw IoError("checkpoint not found: " + ckpt_path);

  Checkpoint ck = load_checkpoint(ckpt_path);
  Model<float> model = Model<float>::from_config_json(ck.config);
  load_into_store(model.store, ck);
  if (model.kind != kind) {
    throw ValidationError("checkpoint " + ckpt_path + " holds a " +
                          model_kind_name(model.kind) + " model, not " + model_name);
  }

  Dataset test = load_dataset(cfg.out_dir + "/dataset_test.bin");
  EvalResult res = evaluate(model, test);
  SnrMetrics metrics = accuracy_by_snr(res.predictions, test, res.gate);

  nlohmann::json j = metrics_to_json(metrics);
  j["model"] = model_name;
  j["overall_accuracy"] = res.accuracy;
  write_file_text(cfg.out_dir + "/metrics_" + model_name + ".json", j.dump(2) + "\n");
  std::cout << model_name << " accuracy " << fmt6(res.accuracy) << ", avg over SNR bins "
            << fmt6(average_accuracy(metrics)) << "\n";
  return 0;
}

int cmd_report(const std::string& config_path) {
  RunConfig cfg = RunConfig::from_file(config_path);
  std::vector<std::pair<std::string, SnrMetrics>> models;
  for (ModelKind kind : cfg.models) {
    std::string path = cfg.out_dir + "/metrics_" + model_kind_name(kind) + ".json";
    if (!fs::exists(path)) continue;
    std::vector<std::uint8_t> raw = read_file_bytes(path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(std::string(reinterpret_cast<const char*>(raw.data()), raw.size()));
    } catch (const nlohmann::json::exception& e) {
      throw IoError("malformed metrics file " + path + ": " + e.what());
    }
    models.emplace_back(model_kind_name(kind), metrics_from_json(j));
  }
  if (models.empty()) {
    throw ValidationError("no metrics files under " + cfg.out_dir + "; run eval first");
  }
  emit_report(models, cfg.out_dir);
  std::cout << "wrote report for " << models.size() << " model(s) to " << cfg.out_dir << "\n";
  return 0;
}

int cmd_selftest() {
  auto results = run_selftest();
  std::size_t failed = 0;
  for (const auto& r : results) {
    std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name;
    if (!r.pass) {
      std::cout << " -- " << r.detail;
      ++failed;
    }
    std::cout << "\n";
  }
  std::cout << results.size() - failed << "/" << results.size() << " checks passed\n";
  return failed == 0 ? 0 : 3;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"mixture-of-experts modulation classifier pipeline"};
  app.require_subcommand(1);

  std::string config_path, model_name, ckpt_path;
  CLI::App* gen = app.add_subcommand("generate", "generate the dataset and its splits");
  gen->add_option("--config", config_path, "run config JSON")->required();
  CLI::App* trn = app.add_subcommand("train", "train one model on the generated splits");
  trn->add_option("--config", config_path, "run config JSON")->required();
  trn->add_option("--model", model_name, "hsrm, lsrm, or moe")->required();
  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  ev->add_option("--config", config_path, "run config JSON")->required();
  ev->add_option("--model", model_name, "hsrm, lsrm, or moe")->required();
  ev->add_option("--checkpoint", ckpt_path, "checkpoint path (default <out_dir>/<model>.ckpt)");
  CLI::App* rep = app.add_subcommand("report", "emit CSV and SVG summaries from saved metrics");
  rep->add_option("--config", config_path, "run config JSON")->required();
  CLI::App* st = app.add_subcommand("selftest", "run the analytic oracle suites");

  std::vector<std::string> argv_store = args;
  std::vector<char*> argv;
  std::string prog = "moeamc";
  argv.push_back(prog.data());
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_generate(config_path);
    if (trn->parsed()) return cmd_train(config_path, model_name);
    if (ev->parsed()) return cmd_eval(config_path, model_name, ckpt_path);
    if (rep->parsed()) return cmd_report(config_path);
    if (st->parsed()) return cmd_selftest();
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace moeamc
