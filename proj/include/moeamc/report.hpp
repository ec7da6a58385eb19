#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "moeamc/signal.hpp"

namespace moeamc {

struct SnrBin {
  std::size_t correct = 0;
  std::size_t total = 0;
  double gate_sum = 0.0;

  double accuracy() const { return total ? static_cast<double>(correct) / total : 0.0; }
  double gate_mean() const { return total ? gate_sum / static_cast<double>(total) : 0.0; }
};

struct SnrMetrics {
  std::map<double, SnrBin> per_snr;        // keyed by grid snr_db, ascending
  std::vector<std::size_t> confusion;      // [K,K] row-major, rows = true class
  std::size_t n_classes = 0;
  bool has_gate = false;
};

// Buckets predictions by each example's grid SNR and fills the confusion
// matrix. gate, when non-empty, must align with predictions (MoE runs).
SnrMetrics accuracy_by_snr(const std::vector<std::size_t>& predictions, const Dataset& ds,
                           const std::vector<double>& gate = {});

// Unweighted mean of per-bin accuracies; on balanced datasets this equals
// pooled accuracy.
double average_accuracy(const SnrMetrics& m);

// Spearman rank correlation; average ranks for ties.
double spearman_rank_correlation(const std::vector<double>& a, const std::vector<double>& b);

// Writes accuracy_by_snr.csv, confusion_<model>.csv per model, summary.csv,
// and accuracy_by_snr.svg into out_dir. Pure function of the metrics.
void emit_report(const std::vector<std::pair<std::string, SnrMetrics>>& models,
                 const std::string& out_dir);

}  // namespace moeamc
