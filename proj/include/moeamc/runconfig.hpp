#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "moeamc/models.hpp"
#include "moeamc/trainer.hpp"

namespace moeamc {

// One JSON file drives the whole pipeline; a single master seed derives
// every stream below it through fixed role constants, so reruns of any
// stage are reproducible in isolation.
struct RunConfig {
  std::uint64_t master_seed = 1;
  std::string out_dir = "runs/out";
  DatasetSpec dataset;  // seed field filled from dataset_seed()
  SplitRatios split;
  TrainConfig train;  // seed field filled per model from train_seed()
  std::vector<ModelKind> models = {ModelKind::kHsrm, ModelKind::kLsrm, ModelKind::kMoe};
  GateConfig gate;
  HsrmConfig hsrm;
  LsrmConfig lsrm;

  std::uint64_t dataset_seed() const { return mix_seed(master_seed, 1); }
  std::uint64_t split_seed() const { return mix_seed(master_seed, 2); }
  std::uint64_t train_seed(ModelKind k) const {
    return mix_seed(mix_seed(master_seed, 3), static_cast<std::uint64_t>(k));
  }
  std::uint64_t init_seed(ModelKind k) const {
    return mix_seed(mix_seed(master_seed, 4), static_cast<std::uint64_t>(k));
  }

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_file(const std::string& path);
};

}  // namespace moeamc
