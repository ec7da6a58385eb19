#include "moeamc/runconfig.hpp"

#include <fstream>

namespace moeamc {

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  c.dataset = DatasetSpec::defaults(0);
  try {
    c.master_seed = j.value("seed", c.master_seed);
    c.out_dir = j.value("out_dir", c.out_dir);
    if (j.contains("dataset")) {
      const auto& d = j["dataset"];
      if (d.contains("schemes")) {
        c.dataset.schemes.clear();
        for (const auto& s : d["schemes"]) {
          c.dataset.schemes.push_back(scheme_from_name(s.get<std::string>()));
        }
      }
      if (d.contains("snr_grid_db")) {
        c.dataset.snr_grid_db = d["snr_grid_db"].get<std::vector<double>>();
      }
      c.dataset.frame_len = d.value("frame_len", c.dataset.frame_len);
      c.dataset.samples_per_symbol = d.value("samples_per_symbol", c.dataset.samples_per_symbol);
      c.dataset.frames_per_cell = d.value("frames_per_cell", c.dataset.frames_per_cell);
    }
    if (j.contains("split")) {
      const auto& s = j["split"];
      c.split.train = s.value("train", c.split.train);
      c.split.val = s.value("val", c.split.val);
      c.split.test = s.value("test", c.split.test);
    }
    if (j.contains("train")) c.train = train_config_from_json(j["train"]);
    if (j.contains("models")) {
      c.models.clear();
      for (const auto& m : j["models"]) {
        c.models.push_back(model_kind_from_name(m.get<std::string>()));
      }
      if (c.models.empty()) throw ValidationError("run config: models list empty");
    }
    if (j.contains("model")) {
      const auto& m = j["model"];
      if (m.contains("gate")) c.gate = gate_config_from_json(m["gate"]);
      if (m.contains("hsrm")) c.hsrm = hsrm_config_from_json(m["hsrm"]);
      if (m.contains("lsrm")) c.lsrm = lsrm_config_from_json(m["lsrm"]);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("run config: ") + e.what());
  }
  c.dataset.seed = c.dataset_seed();
  c.hsrm.n_classes = c.dataset.schemes.size();
  c.lsrm.n_classes = c.dataset.schemes.size();
  c.dataset.validate();
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config " + path + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

}  // namespace moeamc
