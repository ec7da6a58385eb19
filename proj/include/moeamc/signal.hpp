#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "moeamc/errors.hpp"
#include "moeamc/rng.hpp"

namespace moeamc {

// Modulation schemes. CPFSK2 is binary continuous-phase FSK with modulation
// index 0.5, standing in for GFSK without the Gaussian pulse filter.
enum class Scheme : std::uint16_t {
  kBpsk = 0,
  kQpsk,
  kPsk8,
  kQam16,
  kQam64,
  kAsk4,
  kCpfsk2,
  kOok,
};

inline constexpr std::size_t kNumSchemes = 8;

const char* scheme_name(Scheme s);
Scheme scheme_from_name(const std::string& name);
std::size_t bits_per_symbol(Scheme s);

// Constellation points indexed by the Gray-coded bit-group value, unit mean
// power. Empty for CPFSK2, whose symbols are waveform segments, not points.
std::vector<std::pair<double, double>> constellation(Scheme s);

struct IQFrame {
  std::vector<float> i;
  std::vector<float> q;

  std::size_t length() const { return i.size(); }
};

// Mean of i^2 + q^2 over the frame, accumulated in double.
double frame_power(const IQFrame& f);

// Maps bit groups to symbols and repeats each symbol sps times
// (rectangular pulse shaping).
IQFrame modulate(const std::vector<std::uint8_t>& bits, Scheme scheme, std::size_t sps);

// Adds white Gaussian noise reaching the requested SNR against the frame's
// measured power; per-component variance is P_sig / (2 * 10^(snr_db/10)).
IQFrame apply_awgn(const IQFrame& frame, double snr_db, Rng& rng);

struct LabeledExample {
  IQFrame frame;
  std::uint16_t class_idx = 0;
  float snr_db = 0.0f;
};

struct DatasetSpec {
  std::vector<Scheme> schemes;
  std::vector<double> snr_grid_db;
  std::size_t frame_len = 128;
  std::size_t samples_per_symbol = 8;
  std::size_t frames_per_cell = 200;
  std::uint64_t seed = 0;

  static DatasetSpec defaults(std::uint64_t seed);
  std::size_t total_examples() const {
    return schemes.size() * snr_grid_db.size() * frames_per_cell;
  }
  void validate() const;
};

enum class SplitTag { kFull = 0, kTrain, kVal, kTest };

const char* split_tag_name(SplitTag t);
SplitTag split_tag_from_name(const std::string& name);

struct Dataset {
  std::vector<LabeledExample> examples;
  DatasetSpec spec;
  SplitTag split_tag = SplitTag::kFull;
};

// Example n is a pure function of (spec, n): index n walks schemes, then SNR
// levels, then frames within the cell, and draws from its own derived stream.
LabeledExample generate_example(const DatasetSpec& spec, std::size_t n);
Dataset generate_dataset(const DatasetSpec& spec);

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

std::array<Dataset, 3> split_dataset(const Dataset& ds, const SplitRatios& ratios,
                                     std::uint64_t seed);

}  // namespace moeamc
