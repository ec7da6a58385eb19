#include "moeamc/signal.hpp"

#include <cmath>

namespace moeamc {

namespace {

constexpr double kPi = 3.14159265358979323846;

constexpr std::uint32_t gray(std::uint32_t n) { return n ^ (n >> 1); }

// PAM levels {-3,-1,1,3,...} for 2^bits points, Gray-mapped, unit mean power
// after dividing by the returned scale.
void pam_table(std::size_t bits, std::vector<double>& out) {
  std::size_t n = std::size_t(1) << bits;
  out.assign(n, 0.0);
  double mean_sq = 0.0;
  for (std::size_t l = 0; l < n; ++l) {
    double a = 2.0 * static_cast<double>(l) - static_cast<double>(n - 1);
    mean_sq += a * a;
  }
  mean_sq /= static_cast<double>(n);
  double scale = std::sqrt(mean_sq);
  for (std::size_t l = 0; l < n; ++l) {
    double a = 2.0 * static_cast<double>(l) - static_cast<double>(n - 1);
    out[gray(static_cast<std::uint32_t>(l))] = a / scale;
  }
}

}  // namespace

const char* scheme_name(Scheme s) {
  switch (s) {
    case Scheme::kBpsk: return "BPSK";
    case Scheme::kQpsk: return "QPSK";
    case Scheme::kPsk8: return "PSK8";
    case Scheme::kQam16: return "QAM16";
    case Scheme::kQam64: return "QAM64";
    case Scheme::kAsk4: return "ASK4";
    case Scheme::kCpfsk2: return "CPFSK2";
    case Scheme::kOok: return "OOK";
  }
  throw ValidationError("unknown scheme id");
}

Scheme scheme_from_name(const std::string& name) {
  for (std::size_t i = 0; i < kNumSchemes; ++i) {
    Scheme s = static_cast<Scheme>(i);
    if (name == scheme_name(s)) return s;
  }
  throw ValidationError("unknown scheme name: " + name);
}

std::size_t bits_per_symbol(Scheme s) {
  switch (s) {
    case Scheme::kBpsk: return 1;
    case Scheme::kQpsk: return 2;
    case Scheme::kPsk8: return 3;
    case Scheme::kQam16: return 4;
    case Scheme::kQam64: return 6;
    case Scheme::kAsk4: return 2;
    case Scheme::kCpfsk2: return 1;
    case Scheme::kOok: return 1;
  }
  throw ValidationError("unknown scheme id");
}

std::vector<std::pair<double, double>> constellation(Scheme s) {
  std::vector<std::pair<double, double>> pts;
  switch (s) {
    case Scheme::kBpsk:
      pts = {{1.0, 0.0}, {-1.0, 0.0}};
      break;
    case Scheme::kQpsk: {
      // independent sign bits on I and Q; adjacent points differ in one bit
      double a = 1.0 / std::sqrt(2.0);
      pts.resize(4);
      for (std::uint32_t v = 0; v < 4; ++v) {
        pts[v] = {(v & 2) ? -a : a, (v & 1) ? -a : a};
      }
      break;
    }
    case Scheme::kPsk8: {
      pts.resize(8);
      for (std::uint32_t p = 0; p < 8; ++p) {
        double ang = 2.0 * kPi * p / 8.0;
        pts[gray(p)] = {std::cos(ang), std::sin(ang)};
      }
      break;
    }
    case Scheme::kQam16:
    case Scheme::kQam64: {
      std::size_t half = s == Scheme::kQam16 ? 2 : 3;
      std::vector<double> pam;
      pam_table(half, pam);
      std::size_t side = pam.size();
      pts.resize(side * side);
      // independent PAM scales give per-axis mean power 1; renormalize the
      // complex point set {I,Q} back to total mean power 1
      double norm = 1.0 / std::sqrt(2.0);
      for (std::size_t vi = 0; vi < side; ++vi) {
        for (std::size_t vq = 0; vq < side; ++vq) {
          pts[(vi << half) | vq] = {pam[vi] * norm, pam[vq] * norm};
        }
      }
      break;
    }
    case Scheme::kAsk4: {
      std::vector<double> pam;
      pam_table(2, pam);
      pts.resize(4);
      for (std::size_t v = 0; v < 4; ++v) pts[v] = {pam[v], 0.0};
      break;
    }
    case Scheme::kOok:
      pts = {{0.0, 0.0}, {std::sqrt(2.0), 0.0}};
      break;
    case Scheme::kCpfsk2:
      break;  // waveform scheme, no point set
  }
  return pts;
}

double frame_power(const IQFrame& f) {
  if (f.i.size() != f.q.size()) throw ValidationError("frame i/q length mismatch");
  if (f.i.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t t = 0; t < f.i.size(); ++t) {
    acc += static_cast<double>(f.i[t]) * f.i[t] + static_cast<double>(f.q[t]) * f.q[t];
  }
  return acc / static_cast<double>(f.i.size());
}

IQFrame modulate(const std::vector<std::uint8_t>& bits, Scheme scheme, std::size_t sps) {
  if (sps < 1) throw ValidationError("modulate: sps must be >= 1");
  std::size_t bps = bits_per_symbol(scheme);
  if (bits.size() % bps != 0) {
    throw ValidationError("modulate: bit count " + std::to_string(bits.size()) +
                          " not divisible by bits_per_symbol " + std::to_string(bps));
  }
  std::size_t nsym = bits.size() / bps;
  IQFrame out;
  out.i.resize(nsym * sps);
  out.q.resize(nsym * sps);

  if (scheme == Scheme::kCpfsk2) {
    // modulation index 0.5: phase advances pi/2 per symbol, spread over sps
    // samples, sign from the bit; phase is continuous across symbols
    double dphi = kPi * 0.5 / static_cast<double>(sps);
    double phi = 0.0;
    for (std::size_t sidx = 0; sidx < nsym; ++sidx) {
      double step = bits[sidx] ? -dphi : dphi;
      for (std::size_t r = 0; r < sps; ++r) {
        phi += step;
        out.i[sidx * sps + r] = static_cast<float>(std::cos(phi));
        out.q[sidx * sps + r] = static_cast<float>(std::sin(phi));
      }
    }
    return out;
  }

  auto pts = constellation(scheme);
  for (std::size_t sidx = 0; sidx < nsym; ++sidx) {
    std::uint32_t v = 0;
    for (std::size_t b = 0; b < bps; ++b) {
      std::uint8_t bit = bits[sidx * bps + b];
      if (bit > 1) throw ValidationError("modulate: bits must be 0 or 1");
      v = (v << 1) | bit;
    }
    auto [si, sq] = pts[v];
    for (std::size_t r = 0; r < sps; ++r) {
      out.i[sidx * sps + r] = static_cast<float>(si);
      out.q[sidx * sps + r] = static_cast<float>(sq);
    }
  }
  return out;
}

IQFrame apply_awgn(const IQFrame& frame, double snr_db, Rng& rng) {
  double p_sig = frame_power(frame);
  if (p_sig <= 0.0) throw ValidationError("apply_awgn: zero-power frame, SNR undefined");
  double sigma = std::sqrt(p_sig / (2.0 * std::pow(10.0, snr_db / 10.0)));
  IQFrame out = frame;
  for (std::size_t t = 0; t < out.i.size(); ++t) {
    out.i[t] = static_cast<float>(out.i[t] + sigma * rng.gaussian());
    out.q[t] = static_cast<float>(out.q[t] + sigma * rng.gaussian());
  }
  return out;
}

DatasetSpec DatasetSpec::defaults(std::uint64_t seed) {
  DatasetSpec spec;
  for (std::size_t i = 0; i < kNumSchemes; ++i) spec.schemes.push_back(static_cast<Scheme>(i));
  for (int snr = -20; snr <= 20; snr += 4) spec.snr_grid_db.push_back(snr);
  spec.seed = seed;
  return spec;
}

void DatasetSpec::validate() const {
  if (schemes.empty()) throw ValidationError("dataset spec: schemes empty");
  if (snr_grid_db.empty()) throw ValidationError("dataset spec: snr grid empty");
  for (std::size_t i = 1; i < snr_grid_db.size(); ++i) {
    if (snr_grid_db[i] <= snr_grid_db[i - 1]) {
      throw ValidationError("dataset spec: snr grid must be strictly increasing");
    }
  }
  if (frame_len == 0 || samples_per_symbol == 0) {
    throw ValidationError("dataset spec: frame_len and samples_per_symbol must be positive");
  }
  if (frame_len % samples_per_symbol != 0) {
    throw ValidationError("dataset spec: frame_len must be divisible by samples_per_symbol");
  }
}

const char* split_tag_name(SplitTag t) {
  switch (t) {
    case SplitTag::kFull: return "full";
    case SplitTag::kTrain: return "train";
    case SplitTag::kVal: return "val";
    case SplitTag::kTest: return "test";
  }
  throw ValidationError("unknown split tag");
}

SplitTag split_tag_from_name(const std::string& name) {
  for (int i = 0; i < 4; ++i) {
    SplitTag t = static_cast<SplitTag>(i);
    if (name == split_tag_name(t)) return t;
  }
  throw ValidationError("unknown split tag: " + name);
}

LabeledExample generate_example(const DatasetSpec& spec, std::size_t n) {
  spec.validate();
  if (n >= spec.total_examples()) {
    throw ValidationError("generate_example: index " + std::to_string(n) + " out of range");
  }
  std::size_t per_scheme = spec.snr_grid_db.size() * spec.frames_per_cell;
  std::size_t s_idx = n / per_scheme;
  std::size_t snr_idx = (n % per_scheme) / spec.frames_per_cell;
  Scheme scheme = spec.schemes[s_idx];
  double snr = spec.snr_grid_db[snr_idx];

  Rng rng(mix_seed(spec.seed, n));
  std::size_t nsym = spec.frame_len / spec.samples_per_symbol;
  std::size_t nbits = nsym * bits_per_symbol(scheme);
  std::vector<std::uint8_t> bits(nbits);
  IQFrame clean;
  // an all-zero OOK payload has no power and no defined SNR; redraw from the
  // same stream until the frame carries signal
  do {
    for (auto& b : bits) b = static_cast<std::uint8_t>(rng.next_bit());
    clean = modulate(bits, scheme, spec.samples_per_symbol);
  } while (frame_power(clean) <= 0.0);

  LabeledExample ex;
  ex.frame = apply_awgn(clean, snr, rng);
  ex.class_idx = static_cast<std::uint16_t>(s_idx);
  ex.snr_db = static_cast<float>(snr);
  return ex;
}

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  ds.split_tag = SplitTag::kFull;
  std::size_t total = spec.total_examples();
  ds.examples.reserve(total);
  for (std::size_t n = 0; n < total; ++n) ds.examples.push_back(generate_example(spec, n));
  return ds;
}

std::array<Dataset, 3> split_dataset(const Dataset& ds, const SplitRatios& ratios,
                                     std::uint64_t seed) {
  double r[3] = {ratios.train, ratios.val, ratios.test};
  for (double v : r) {
    if (v < 0.0) throw ValidationError("split: ratios must be non-negative");
  }
  double sum = r[0] + r[1] + r[2];
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ValidationError("split: ratios sum to " + std::to_string(sum) + ", want 1");
  }
  std::size_t n = ds.examples.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  shuffle(order, rng);

  auto cut1 = static_cast<std::size_t>(std::llround(r[0] * static_cast<double>(n)));
  auto cut2 = static_cast<std::size_t>(std::llround((r[0] + r[1]) * static_cast<double>(n)));
  cut1 = std::min(cut1, n);
  cut2 = std::min(std::max(cut2, cut1), n);

  std::array<Dataset, 3> out;
  SplitTag tags[3] = {SplitTag::kTrain, SplitTag::kVal, SplitTag::kTest};
  std::size_t bounds[4] = {0, cut1, cut2, n};
  for (int p = 0; p < 3; ++p) {
    out[p].spec = ds.spec;
    out[p].split_tag = tags[p];
    out[p].examples.reserve(bounds[p + 1] - bounds[p]);
    for (std::size_t i = bounds[p]; i < bounds[p + 1]; ++i) {
      out[p].examples.push_back(ds.examples[order[i]]);
    }
  }
  return out;
}

}  // namespace moeamc
