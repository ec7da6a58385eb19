#include "moeamc/selftest.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>

#include "moeamc/checkpoint.hpp"
#include "moeamc/cli.hpp"
#include "moeamc/dataset_io.hpp"
#include "moeamc/gradcheck.hpp"
#include "moeamc/report.hpp"
#include "moeamc/trainer.hpp"

namespace moeamc {

namespace {

namespace fs = std::filesystem;

void expect(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

void expect_near(double a, double b, double tol, const std::string& what) {
  if (!(std::abs(a - b) <= tol)) {
    throw Error(what + ": got " + std::to_string(a) + ", want " + std::to_string(b) +
                " (tol " + std::to_string(tol) + ")");
  }
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("moeamc_selftest_" + std::to_string(::getpid()) + "_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string str() const { return path.string(); }
};

using D = double;
using TD = Tensor<double>;

TD make(Shape shape, std::vector<double> v) { return TD::from(std::move(shape), std::move(v)); }

TD eye(std::size_t n) {
  TD t({n, n});
  for (std::size_t i = 0; i < n; ++i) t[i * n + i] = 1.0;
  return t;
}

TD random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TD t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

void zero_store(ParamStore<double>& store) {
  for (auto& e : store.entries()) {
    if (e.trainable) std::fill(e.tensor.values().begin(), e.tensor.values().end(), 0.0);
  }
}

DatasetSpec tiny_spec(std::uint64_t seed) {
  DatasetSpec spec;
  spec.schemes = {Scheme::kBpsk, Scheme::kQpsk};
  spec.snr_grid_db = {0.0, 10.0};
  spec.frame_len = 16;
  spec.samples_per_symbol = 8;
  spec.frames_per_cell = 2;
  spec.seed = seed;
  return spec;
}

bool frames_equal(const IQFrame& a, const IQFrame& b) {
  return a.i == b.i && a.q == b.q;
}

bool datasets_equal(const Dataset& a, const Dataset& b) {
  if (a.examples.size() != b.examples.size() || a.split_tag != b.split_tag) return false;
  if (a.spec.frame_len != b.spec.frame_len || a.spec.seed != b.spec.seed ||
      a.spec.schemes != b.spec.schemes || a.spec.snr_grid_db != b.spec.snr_grid_db) {
    return false;
  }
  for (std::size_t i = 0; i < a.examples.size(); ++i) {
    const auto& x = a.examples[i];
    const auto& y = b.examples[i];
    if (x.class_idx != y.class_idx || x.snr_db != y.snr_db || !frames_equal(x.frame, y.frame)) {
      return false;
    }
  }
  return true;
}

using Checks = std::vector<std::pair<std::string, std::function<void()>>>;

// ---------------------------------------------------------------------------
// sigsynth
// ---------------------------------------------------------------------------
void add_sigsynth_checks(Checks& c) {
  c.emplace_back("modulate bpsk single zero bit", [] {
    IQFrame f = modulate({0}, Scheme::kBpsk, 1);
    expect(f.i.size() == 1 && f.q.size() == 1, "length");
    expect_near(f.i[0], 1.0, 0.0, "i[0]");
    expect_near(f.q[0], 0.0, 0.0, "q[0]");
  });

  c.emplace_back("modulate bpsk ones with sps 2", [] {
    IQFrame f = modulate({1, 1}, Scheme::kBpsk, 2);
    expect(f.i.size() == 4, "length");
    for (std::size_t t = 0; t < 4; ++t) {
      expect_near(f.i[t], -1.0, 0.0, "i");
      expect_near(f.q[t], 0.0, 0.0, "q");
    }
  });

  c.emplace_back("qam16 constellation unit power and point set", [] {
    auto pts = constellation(Scheme::kQam16);
    expect(pts.size() == 16, "16 points");
    double p = 0.0;
    for (auto [i, q] : pts) p += i * i + q * q;
    expect_near(p / 16.0, 1.0, 1e-12, "mean power");
    // independent oracle: the 4x4 grid {-3,-1,1,3}^2 scaled by 1/sqrt(10)
    std::vector<std::pair<double, double>> want;
    for (int a = -3; a <= 3; a += 2) {
      for (int b = -3; b <= 3; b += 2) {
        want.push_back({a / std::sqrt(10.0), b / std::sqrt(10.0)});
      }
    }
    auto key = [](const std::pair<double, double>& v) { return v.first * 10.0 + v.second; };
    auto got = pts;
    std::sort(got.begin(), got.end(), [&](auto& x, auto& y) { return key(x) < key(y); });
    std::sort(want.begin(), want.end(), [&](auto& x, auto& y) { return key(x) < key(y); });
    for (std::size_t k = 0; k < 16; ++k) {
      expect_near(got[k].first, want[k].first, 1e-12, "point I");
      expect_near(got[k].second, want[k].second, 1e-12, "point Q");
    }
  });

  c.emplace_back("awgn at 300 dB is identity", [] {
    Rng rng(11);
    std::vector<std::uint8_t> bits(64);
    for (auto& b : bits) b = static_cast<std::uint8_t>(rng.next_bit());
    IQFrame f = modulate(bits, Scheme::kQpsk, 2);
    Rng noise(12);
    IQFrame g = apply_awgn(f, 300.0, noise);
    for (std::size_t t = 0; t < f.i.size(); ++t) {
      expect_near(g.i[t], f.i[t], 1e-6, "i");
      expect_near(g.q[t], f.q[t], 1e-6, "q");
    }
  });

  auto noise_power = [](double snr_db, double want) {
    Rng rng(21);
    std::vector<std::uint8_t> bits(50000);
    for (auto& b : bits) b = static_cast<std::uint8_t>(rng.next_bit());
    IQFrame f = modulate(bits, Scheme::kBpsk, 1);  // exactly unit power
    Rng noise(22);
    IQFrame g = apply_awgn(f, snr_db, noise);
    double acc = 0.0;
    for (std::size_t t = 0; t < f.i.size(); ++t) {
      double di = static_cast<double>(g.i[t]) - f.i[t];
      double dq = static_cast<double>(g.q[t]) - f.q[t];
      acc += di * di + dq * dq;
    }
    double measured = acc / static_cast<double>(f.i.size());
    expect_near(measured, want, want * 0.05, "noise power");
  };
  c.emplace_back("awgn noise power at 0 dB", [noise_power] { noise_power(0.0, 1.0); });
  c.emplace_back("awgn noise power at 10 dB", [noise_power] { noise_power(10.0, 0.1); });

  c.emplace_back("default dataset example count", [] {
    DatasetSpec spec = DatasetSpec::defaults(42);
    expect(spec.total_examples() == 17600, "8*11*200 = 17600");
    expect(spec.schemes.size() == 8 && spec.snr_grid_db.size() == 11, "default grid");
  });

  c.emplace_back("regenerated dataset serializes byte-identically", [] {
    TempDir tmp("regen");
    DatasetSpec spec = tiny_spec(99);
    save_dataset(generate_dataset(spec), tmp.str() + "/a.bin");
    save_dataset(generate_dataset(spec), tmp.str() + "/b.bin");
    expect(read_file_bytes(tmp.str() + "/a.bin") == read_file_bytes(tmp.str() + "/b.bin"),
           "bytes differ");
  });

  c.emplace_back("zero frames_per_cell gives empty dataset", [] {
    DatasetSpec spec = tiny_spec(3);
    spec.frames_per_cell = 0;
    Dataset ds = generate_dataset(spec);
    expect(ds.examples.empty(), "want empty");
  });

  c.emplace_back("split sizes 12320/1760/3520", [] {
    Dataset ds;
    ds.spec = DatasetSpec::defaults(1);
    ds.examples.resize(17600);  // split looks only at counts and order
    for (std::size_t i = 0; i < 17600; ++i) ds.examples[i].class_idx = i % 8;
    auto parts = split_dataset(ds, SplitRatios{0.7, 0.1, 0.2}, 5);
    expect(parts[0].examples.size() == 12320, "train size");
    expect(parts[1].examples.size() == 1760, "val size");
    expect(parts[2].examples.size() == 3520, "test size");
  });

  c.emplace_back("degenerate split keeps everything in train", [] {
    Dataset ds = generate_dataset(tiny_spec(6));
    auto parts = split_dataset(ds, SplitRatios{1.0, 0.0, 0.0}, 5);
    expect(parts[0].examples.size() == ds.examples.size(), "train size");
    expect(parts[1].examples.empty() && parts[2].examples.empty(), "other splits");
  });

  c.emplace_back("split is deterministic", [] {
    Dataset ds = generate_dataset(tiny_spec(7));
    auto a = split_dataset(ds, SplitRatios{0.5, 0.25, 0.25}, 9);
    auto b = split_dataset(ds, SplitRatios{0.5, 0.25, 0.25}, 9);
    for (int p = 0; p < 3; ++p) expect(datasets_equal(a[p], b[p]), "partition differs");
  });

  c.emplace_back("dataset file round trip", [] {
    TempDir tmp("roundtrip");
    DatasetSpec spec = tiny_spec(13);
    spec.frames_per_cell = 1;
    spec.schemes = {Scheme::kQam16};
    spec.snr_grid_db = {0.0, 6.0, 12.0};
    Dataset ds = generate_dataset(spec);
    expect(ds.examples.size() == 3, "3 examples");
    save_dataset(ds, tmp.str() + "/ds.bin");
    Dataset back = load_dataset(tmp.str() + "/ds.bin");
    expect(datasets_equal(ds, back), "round trip mismatch");
  });

  c.emplace_back("corrupted magic is rejected", [] {
    TempDir tmp("magic");
    save_dataset(generate_dataset(tiny_spec(14)), tmp.str() + "/ds.bin");
    auto bytes = read_file_bytes(tmp.str() + "/ds.bin");
    bytes[0] ^= 0xFF;
    write_file_bytes(tmp.str() + "/ds.bin", bytes);
    try {
      load_dataset(tmp.str() + "/ds.bin");
      expect(false, "no error thrown");
    } catch (const IoError& e) {
      expect(std::string(e.what()).find("bad magic") != std::string::npos, e.what());
    }
  });

  c.emplace_back("checksum corruption is rejected", [] {
    TempDir tmp("crc");
    save_dataset(generate_dataset(tiny_spec(15)), tmp.str() + "/ds.bin");
    auto bytes = read_file_bytes(tmp.str() + "/ds.bin");
    bytes[bytes.size() - 20] ^= 0x01;  // flip one record byte
    write_file_bytes(tmp.str() + "/ds.bin", bytes);
    try {
      load_dataset(tmp.str() + "/ds.bin");
      expect(false, "no error thrown");
    } catch (const IoError& e) {
      expect(std::string(e.what()).find("checksum") != std::string::npos, e.what());
    }
  });

  c.emplace_back("empty dataset round trip", [] {
    TempDir tmp("empty");
    DatasetSpec spec = tiny_spec(16);
    spec.frames_per_cell = 0;
    Dataset ds = generate_dataset(spec);
    save_dataset(ds, tmp.str() + "/ds.bin");
    Dataset back = load_dataset(tmp.str() + "/ds.bin");
    expect(back.examples.empty(), "want empty");
  });
}

// ---------------------------------------------------------------------------
// tensorcore forward ops
// ---------------------------------------------------------------------------
void add_tensor_checks(Checks& c) {
  c.emplace_back("matmul identity", [] {
    TD out = matmul<D>(nullptr, eye(2), make({2, 2}, {1, 2, 3, 4}));
    std::vector<double> want = {1, 2, 3, 4};
    for (int i = 0; i < 4; ++i) expect_near(out[i], want[i], 0.0, "entry");
  });

  c.emplace_back("matmul 1x2 by 2x1", [] {
    TD out = matmul<D>(nullptr, make({1, 2}, {1, 2}), make({2, 1}, {3, 4}));
    expect(out.shape() == Shape{1, 1}, "shape");
    expect_near(out[0], 11.0, 0.0, "value");
  });

  c.emplace_back("matmul matches triple loop", [] {
    Rng rng(31);
    TD a = random_tensor({4, 5}, rng);
    TD b = random_tensor({5, 3}, rng);
    TD out = matmul<D>(nullptr, a, b);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < 5; ++k) acc += a[i * 5 + k] * b[k * 3 + j];
        expect_near(out[i * 3 + j], acc, 1e-12, "entry");
      }
    }
  });

  c.emplace_back("conv1d identity kernel", [] {
    TD out = conv1d<D>(nullptr, make({1, 1, 3}, {1, 2, 3}), make({1, 1, 1}, {1}),
                       make({1}, {0}), 1, 0);
    expect(out.shape() == Shape{1, 1, 3}, "shape");
    for (int i = 0; i < 3; ++i) expect_near(out[i], i + 1.0, 0.0, "entry");
  });

  c.emplace_back("conv1d sliding sums", [] {
    TD out = conv1d<D>(nullptr, make({1, 1, 3}, {1, 2, 3}), make({1, 1, 2}, {1, 1}),
                       make({1}, {0}), 1, 0);
    expect(out.shape() == Shape{1, 1, 2}, "shape");
    expect_near(out[0], 3.0, 0.0, "first");
    expect_near(out[1], 5.0, 0.0, "second");
  });

  c.emplace_back("conv1d matches nested loops", [] {
    Rng rng(32);
    std::size_t B = 2, Cin = 3, Cout = 4, L = 10, K = 3, stride = 2, pad = 1;
    TD x = random_tensor({B, Cin, L}, rng);
    TD w = random_tensor({Cout, Cin, K}, rng);
    TD bias = random_tensor({Cout}, rng);
    TD out = conv1d<D>(nullptr, x, w, bias, stride, pad);
    std::size_t lout = (L + 2 * pad - K) / stride + 1;
    expect(out.shape() == (Shape{B, Cout, lout}), "shape");
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t co = 0; co < Cout; ++co) {
        for (std::size_t lo = 0; lo < lout; ++lo) {
          double acc = bias[co];
          for (std::size_t ci = 0; ci < Cin; ++ci) {
            for (std::size_t k = 0; k < K; ++k) {
              std::ptrdiff_t src = static_cast<std::ptrdiff_t>(lo * stride + k) -
                                   static_cast<std::ptrdiff_t>(pad);
              if (src >= 0 && src < static_cast<std::ptrdiff_t>(L)) {
                acc += x[(b * Cin + ci) * L + src] * w[(co * Cin + ci) * K + k];
              }
            }
          }
          expect_near(out[(b * Cout + co) * lout + lo], acc, 1e-12, "entry");
        }
      }
    }
  });

  c.emplace_back("batch norm train statistics", [] {
    Rng rng(33);
    std::size_t B = 4, C = 3, L = 5;
    TD x = random_tensor({B, C, L}, rng, -2.0, 3.0);
    TD gamma({C}, 1.0), beta({C});
    TD rm({C}), rv({C}, 1.0);
    TD out = batch_norm<D>(nullptr, x, gamma, beta, rm, rv, Mode::kTrain, 0.1, 1e-5);
    for (std::size_t ch = 0; ch < C; ++ch) {
      double mean = 0.0, var = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t l = 0; l < L; ++l) mean += out[(b * C + ch) * L + l];
      }
      mean /= static_cast<double>(B * L);
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t l = 0; l < L; ++l) {
          double d = out[(b * C + ch) * L + l] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(B * L);
      expect_near(mean, 0.0, 1e-6, "channel mean");
      expect_near(var, 1.0, 1e-4, "channel variance");
    }
  });

  c.emplace_back("batch norm affine collapse", [] {
    Rng rng(34);
    TD x = random_tensor({2, 2, 4}, rng);
    TD gamma({2}), beta({2}, 7.0);
    TD rm({2}), rv({2}, 1.0);
    TD out = batch_norm<D>(nullptr, x, gamma, beta, rm, rv, Mode::kTrain, 0.1, 1e-5);
    for (std::size_t i = 0; i < out.size(); ++i) expect_near(out[i], 7.0, 0.0, "entry");
  });

  c.emplace_back("batch norm eval with unit running stats", [] {
    Rng rng(35);
    TD x = random_tensor({2, 2, 4}, rng, -2.0, 2.0);
    TD gamma({2});
    gamma[0] = 1.3;
    gamma[1] = -0.4;
    TD beta({2});
    beta[0] = 0.5;
    beta[1] = 2.0;
    TD rm({2}), rv({2}, 1.0);
    TD out = batch_norm<D>(nullptr, x, gamma, beta, rm, rv, Mode::kEval, 0.1, 1e-5);
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t ch = 0; ch < 2; ++ch) {
        for (std::size_t l = 0; l < 4; ++l) {
          std::size_t i = (b * 2 + ch) * 4 + l;
          expect_near(out[i], gamma[ch] * x[i] + beta[ch], 1e-4, "gamma*x+beta");
        }
      }
    }
  });

  c.emplace_back("layer norm constant vector", [] {
    TD out = layer_norm<D>(nullptr, make({3}, {1, 1, 1}), TD({3}, 1.0), TD({3}), 1e-5);
    for (int i = 0; i < 3; ++i) expect_near(out[i], 0.0, 1e-12, "entry");
  });

  c.emplace_back("layer norm already normalized", [] {
    TD out = layer_norm<D>(nullptr, make({2}, {-1, 1}), TD({2}, 1.0), TD({2}), 1e-5);
    expect_near(out[0], -1.0, 1e-4, "first");
    expect_near(out[1], 1.0, 1e-4, "second");
  });

  c.emplace_back("layer norm 1 2 3", [] {
    TD out = layer_norm<D>(nullptr, make({3}, {1, 2, 3}), TD({3}, 1.0), TD({3}), 1e-5);
    double inv = 1.0 / std::sqrt(2.0 / 3.0 + 1e-5);
    expect_near(out[0], -inv, 1e-12, "first vs oracle");
    expect_near(out[1], 0.0, 1e-12, "middle");
    expect_near(out[2], inv, 1e-12, "last vs oracle");
    expect_near(out[0], -1.2247, 1e-3, "first vs quoted digits");
    expect_near(out[2], 1.2247, 1e-3, "last vs quoted digits");
  });

  c.emplace_back("attention single key passes value through", [] {
    TD out = attention<D>(nullptr, make({1, 2}, {0.3, 0.7}), make({1, 2}, {1.0, 2.0}),
                          make({1, 2}, {5.0, 6.0}));
    expect_near(out[0], 5.0, 1e-12, "v0");
    expect_near(out[1], 6.0, 1e-12, "v1");
  });

  c.emplace_back("attention identical keys averages values", [] {
    TD out = attention<D>(nullptr, make({1, 2}, {0.2, 0.9}), make({2, 2}, {1, 1, 1, 1}),
                          make({2, 2}, {1, 2, 3, 4}));
    expect_near(out[0], 2.0, 1e-12, "mean of column 0");
    expect_near(out[1], 3.0, 1e-12, "mean of column 1");
  });

  c.emplace_back("attention two-key softmax oracle", [] {
    TD out = attention<D>(nullptr, make({1, 2}, {1, 0}), make({2, 2}, {1, 0, 0, 1}),
                          make({2, 2}, {1, 2, 3, 4}));
    // scalar oracle: scores [1/sqrt(2), 0], softmax, mix of V rows
    double s0 = 1.0 / std::sqrt(2.0);
    double e0 = std::exp(s0), e1 = 1.0;
    double w0 = e0 / (e0 + e1), w1 = e1 / (e0 + e1);
    expect_near(out[0], w0 * 1 + w1 * 3, 1e-12, "out0 vs oracle");
    expect_near(out[1], w0 * 2 + w1 * 4, 1e-12, "out1 vs oracle");
    expect_near(w0, 0.6698, 2e-4, "weight0 vs quoted digits");
    expect_near(w1, 0.3302, 2e-4, "weight1 vs quoted digits");
    expect_near(out[0], 1.6604, 2e-4, "out0 vs quoted digits");
    expect_near(out[1], 2.6604, 2e-4, "out1 vs quoted digits");
  });

  c.emplace_back("multi-head attention identity on one token", [] {
    TD x = make({1, 1, 2}, {0.4, -0.6});
    TD out = multi_head_attention<D>(nullptr, x, eye(2), eye(2), eye(2), eye(2), 1);
    expect_near(out[0], 0.4, 1e-12, "x0");
    expect_near(out[1], -0.6, 1e-12, "x1");
  });

  c.emplace_back("two heads decompose into single-head runs", [] {
    Rng rng(36);
    std::size_t T = 3, d = 4;
    TD x = random_tensor({1, T, d}, rng);
    TD out = multi_head_attention<D>(nullptr, x, eye(d), eye(d), eye(d), eye(d), 2);
    for (std::size_t h = 0; h < 2; ++h) {
      TD slice({T, 2});
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < 2; ++j) slice[t * 2 + j] = x[t * d + h * 2 + j];
      }
      TD head = attention<D>(nullptr, slice, slice, slice);
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < 2; ++j) {
          expect_near(out[t * d + h * 2 + j], head[t * 2 + j], 1e-12, "head output");
        }
      }
    }
  });

  c.emplace_back("self-attention is permutation equivariant", [] {
    Rng rng(37);
    std::size_t T = 4, d = 4;
    TD x = random_tensor({1, T, d}, rng);
    TD xp({1, T, d});
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t j = 0; j < d; ++j) xp[(T - 1 - t) * d + j] = x[t * d + j];
    }
    Rng wr(38);
    TD wq = random_tensor({d, d}, wr), wk = random_tensor({d, d}, wr);
    TD wv = random_tensor({d, d}, wr), wo = random_tensor({d, d}, wr);
    TD out = multi_head_attention<D>(nullptr, x, wq, wk, wv, wo, 2);
    TD outp = multi_head_attention<D>(nullptr, xp, wq, wk, wv, wo, 2);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t j = 0; j < d; ++j) {
        expect_near(outp[(T - 1 - t) * d + j], out[t * d + j], 1e-12, "permuted row");
      }
    }
  });

  c.emplace_back("softmax of 0 and ln 3", [] {
    TD out = softmax<D>(nullptr, make({2}, {0.0, std::log(3.0)}));
    expect_near(out[0], 0.25, 1e-12, "first");
    expect_near(out[1], 0.75, 1e-12, "second");
  });

  c.emplace_back("softmax of 1 2 3", [] {
    TD out = softmax<D>(nullptr, make({3}, {1, 2, 3}));
    double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
    double s = e1 + e2 + e3;
    expect_near(out[0], e1 / s, 1e-12, "first vs oracle");
    expect_near(out[1], e2 / s, 1e-12, "second vs oracle");
    expect_near(out[2], e3 / s, 1e-12, "third vs oracle");
    expect_near(out[0], 0.0900, 1e-4, "first vs quoted digits");
    expect_near(out[1], 0.2447, 1e-4, "second vs quoted digits");
    expect_near(out[2], 0.6652, 1e-4, "third vs quoted digits");
  });

  c.emplace_back("max pool windowed maxima", [] {
    TD out = max_pool1d<D>(nullptr, make({1, 1, 4}, {1, 3, 2, 5}), 2, 2);
    expect(out.shape() == (Shape{1, 1, 2}), "shape");
    expect_near(out[0], 3.0, 0.0, "first window");
    expect_near(out[1], 5.0, 0.0, "second window");
  });

  c.emplace_back("sigmoid at zero", [] {
    TD out = sigmoid<D>(nullptr, make({1}, {0.0}));
    expect_near(out[0], 0.5, 0.0, "value");
  });

  c.emplace_back("global average pool of constants", [] {
    TD x({2, 4, 3}, 2.5);
    TD out = global_avg_pool<D>(nullptr, x);
    expect(out.shape() == (Shape{2, 3}), "shape");
    for (std::size_t i = 0; i < out.size(); ++i) expect_near(out[i], 2.5, 1e-12, "entry");
  });

  c.emplace_back("cross entropy of uniform 8-class", [] {
    TD probs({1, 8}, 1.0 / 8.0);
    TD loss = cross_entropy<D>(nullptr, probs, {3});
    expect_near(loss.item(), std::log(8.0), 1e-12, "ln 8");
    expect_near(loss.item(), 2.0794, 1e-4, "quoted digits");
  });

  c.emplace_back("cross entropy of perfect prediction", [] {
    TD probs = make({1, 3}, {1.0, 0.0, 0.0});
    expect_near(cross_entropy<D>(nullptr, probs, {0}).item(), 0.0, 0.0, "loss");
  });

  c.emplace_back("cross entropy of 0.7 on the label", [] {
    TD probs = make({1, 3}, {0.7, 0.2, 0.1});
    double loss = cross_entropy<D>(nullptr, probs, {0}).item();
    expect_near(loss, -std::log(0.7), 1e-12, "-ln 0.7");
    expect_near(loss, 0.35667, 1e-4, "quoted digits");
  });

  c.emplace_back("backward of a linear map", [] {
    TD w = make({3}, {0.2, -0.5, 0.9});
    TD x = make({3}, {1.5, 2.5, -3.5});
    w.set_requires_grad(true);
    Tape<D> tape;
    TD loss = sum_all(&tape, mul(&tape, w, x));
    tape.backward(loss);
    for (int i = 0; i < 3; ++i) expect_near(w.grad()[i], x[i], 1e-12, "grad = x");
  });

  c.emplace_back("backward of half sum of squares", [] {
    TD w = make({2}, {1.0, -2.0});
    w.set_requires_grad(true);
    Tape<D> tape;
    TD loss = scale(&tape, sum_all(&tape, mul(&tape, w, w)), 0.5);
    tape.backward(loss);
    expect_near(w.grad()[0], 1.0, 1e-12, "grad[0]");
    expect_near(w.grad()[1], -2.0, 1e-12, "grad[1]");
  });

  c.emplace_back("grad check on a plain sum", [] {
    Rng rng(39);
    auto res = grad_check(
        [](Tape<D>* tape, std::vector<TD>& in) { return sum_all(tape, in[0]); },
        {random_tensor({5}, rng)});
    expect(res.max_rel_err < 1e-10,
           "rel err " + std::to_string(res.max_rel_err) + " at " + res.worst);
  });

  c.emplace_back("grad check on softmax cross entropy", [] {
    Rng rng(40);
    TD x = random_tensor({2, 4}, rng);
    auto res = grad_check(
        [x](Tape<D>* tape, std::vector<TD>& in) {
          TD logits = linear(tape, x, in[0], in[1]);
          return cross_entropy(tape, softmax(tape, logits), {1, 3});
        },
        {random_tensor({4, 4}, rng), random_tensor({4}, rng)});
    expect(res.max_rel_err < 1e-6,
           "rel err " + std::to_string(res.max_rel_err) + " at " + res.worst);
  });
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------
void add_adam_checks(Checks& c) {
  c.emplace_back("adam zero gradient takes no step", [] {
    std::vector<double> p = {0.5, -0.25}, g = {0.0, 0.0}, m(2, 0.0), v(2, 0.0);
    adam_step(p, g, m, v, 1, 1e-3, 0.9, 0.999, 1e-8);
    expect_near(p[0], 0.5, 0.0, "p[0]");
    expect_near(p[1], -0.25, 0.0, "p[1]");
  });

  c.emplace_back("adam first step magnitude", [] {
    std::vector<double> p = {0.0}, g = {1.0}, m = {0.0}, v = {0.0};
    adam_step(p, g, m, v, 1, 1e-3, 0.9, 0.999, 1e-8);
    double want = -1e-3 / (1.0 + 1e-8);  // lr * mhat / (sqrt(vhat) + eps)
    expect_near(p[0], want, 1e-15, "step vs oracle");
    expect_near(p[0], -9.99999999e-4, 1e-10, "step vs quoted digits");
  });

  c.emplace_back("adam first step opposes gradient sign", [] {
    Rng rng(41);
    std::vector<double> p(8), g(8), m(8, 0.0), v(8, 0.0), before;
    for (auto& x : p) x = rng.uniform(-1.0, 1.0);
    for (auto& x : g) {
      x = rng.uniform(-2.0, 2.0);
      if (std::abs(x) < 0.1) x = 0.5;
    }
    before = p;
    adam_step(p, g, m, v, 1, 1e-3, 0.9, 0.999, 1e-8);
    for (std::size_t i = 0; i < p.size(); ++i) {
      expect((p[i] - before[i]) * g[i] < 0.0, "step direction");
    }
  });
}

// ---------------------------------------------------------------------------
// models
// ---------------------------------------------------------------------------
void add_model_checks(Checks& c) {
  c.emplace_back("preprocess normalizes power", [] {
    IQFrame f;
    f.i = {2.0f, 2.0f};
    f.q = {0.0f, 0.0f};
    TD out = preprocess<D>(f, 2);
    expect(out.shape() == (Shape{2, 2}), "shape");
    expect_near(out[0], 1.0, 1e-12, "i0");
    expect_near(out[1], 1.0, 1e-12, "i1");
    expect_near(out[2], 0.0, 0.0, "q0");
    expect_near(out[3], 0.0, 0.0, "q1");
  });

  c.emplace_back("preprocess keeps unit-power frames", [] {
    IQFrame f;
    f.i = {1.0f, -1.0f, 1.0f, 1.0f};
    f.q = {0.0f, 0.0f, 0.0f, 0.0f};
    TD out = preprocess<D>(f, 4);
    for (std::size_t t = 0; t < 4; ++t) {
      expect_near(out[t], f.i[t], 1e-12, "i");
      expect_near(out[4 + t], 0.0, 1e-12, "q");
    }
  });

  c.emplace_back("preprocess of silence stays finite", [] {
    IQFrame f;
    f.i.assign(4, 0.0f);
    f.q.assign(4, 0.0f);
    TD out = preprocess<D>(f, 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
      expect(std::isfinite(out[i]) && out[i] == 0.0, "zero output");
    }
  });

  c.emplace_back("residual unit with zero branch is identity", [] {
    ParamStore<D> store;
    Rng rng(42);
    auto unit = ResidualUnit<D>::create(store, "u", 2, 3, rng);
    zero_store(store);  // conv weights and biases to zero; norm betas already zero
    store.get("u.bn1.gamma").values().assign(2, 1.0);
    store.get("u.bn2.gamma").values().assign(2, 1.0);
    Rng xr(43);
    TD x = random_tensor({2, 2, 4}, xr);
    for (Mode mode : {Mode::kTrain, Mode::kEval}) {
      TD out = unit.forward(nullptr, x, mode);
      expect(out.shape() == x.shape(), "shape preserved");
      for (std::size_t i = 0; i < x.size(); ++i) expect_near(out[i], x[i], 1e-12, "identity");
    }
  });

  c.emplace_back("residual unit matches hand composition", [] {
    ParamStore<D> store;
    Rng rng(44);
    auto unit = ResidualUnit<D>::create(store, "u", 3, 3, rng);
    // nonzero eval statistics so the normalization actually does something
    for (const char* bn : {"u.bn1", "u.bn2"}) {
      auto& rm = store.get(std::string(bn) + ".running_mean");
      auto& rv = store.get(std::string(bn) + ".running_var");
      for (std::size_t i = 0; i < 3; ++i) {
        rm[i] = 0.1 * static_cast<double>(i + 1);
        rv[i] = 0.5 + 0.3 * static_cast<double>(i);
      }
    }
    Rng xr(45);
    TD x = random_tensor({2, 3, 6}, xr);
    TD got = unit.forward(nullptr, x, Mode::kEval);
    TD h = conv1d<D>(nullptr, x, store.get("u.conv1.w"), store.get("u.conv1.b"), 1, 1);
    h = batch_norm<D>(nullptr, h, store.get("u.bn1.gamma"), store.get("u.bn1.beta"),
                      store.get("u.bn1.running_mean"), store.get("u.bn1.running_var"), Mode::kEval,
                      0.1, 1e-5);
    h = relu<D>(nullptr, h);
    h = conv1d<D>(nullptr, h, store.get("u.conv2.w"), store.get("u.conv2.b"), 1, 1);
    h = batch_norm<D>(nullptr, h, store.get("u.bn2.gamma"), store.get("u.bn2.beta"),
                      store.get("u.bn2.running_mean"), store.get("u.bn2.running_var"), Mode::kEval,
                      0.1, 1e-5);
    TD want = add<D>(nullptr, x, h);
    for (std::size_t i = 0; i < want.size(); ++i) {
      expect_near(got[i], want[i], 1e-12, "composition");
    }
  });

  c.emplace_back("hsrm emits probability rows", [] {
    auto model = Model<D>::build_default(ModelKind::kHsrm, 128, 8, 46);
    Rng xr(47);
    TD x = random_tensor({2, 2, 128}, xr);
    TD probs = model.forward(nullptr, x, Mode::kEval).probs;
    expect(probs.shape() == (Shape{2, 8}), "shape");
    for (std::size_t b = 0; b < 2; ++b) {
      double s = 0.0;
      for (std::size_t k = 0; k < 8; ++k) s += probs[b * 8 + k];
      expect_near(s, 1.0, 1e-6, "row sum");
    }
  });

  c.emplace_back("hsrm flattens 8 steps of 32 channels", [] {
    auto model = Model<D>::build_default(ModelKind::kHsrm, 128, 8, 48);
    // 128 halves four times to 8; the head consumes 32*8 features
    expect(model.store.get("hsrm.fc1.w").shape() == (Shape{256, 128}), "fc1 weight shape");
  });

  c.emplace_back("hsrm is batch permutation equivariant in eval mode", [] {
    auto model = Model<D>::build_default(ModelKind::kHsrm, 32, 4, 49);
    Rng xr(50);
    std::size_t B = 3, L = 32;
    TD x = random_tensor({B, 2, L}, xr);
    TD xr2({B, 2, L});
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t i = 0; i < 2 * L; ++i) {
        xr2[(B - 1 - b) * 2 * L + i] = x[b * 2 * L + i];
      }
    }
    TD a = model.forward(nullptr, x, Mode::kEval).probs;
    TD b2 = model.forward(nullptr, xr2, Mode::kEval).probs;
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t k = 0; k < 4; ++k) {
        expect_near(b2[(B - 1 - b) * 4 + k], a[b * 4 + k], 1e-12, "permuted row");
      }
    }
  });

  c.emplace_back("encoder block with zero submodules is double layer norm", [] {
    ParamStore<D> store;
    Rng rng(51);
    auto enc = EncoderBlock<D>::create(store, "e", 8, 2, 16, rng);
    for (const char* nm : {"e.mha.wq", "e.mha.wk", "e.mha.wv", "e.mha.wo", "e.ffn1.w", "e.ffn2.w"}) {
      auto& t = store.get(nm);
      std::fill(t.values().begin(), t.values().end(), 0.0);
    }
    Rng xr(52);
    TD x = random_tensor({2, 4, 8}, xr);
    TD got = enc.forward(nullptr, x);
    expect(got.shape() == x.shape(), "shape preserved");
    TD ones({8}, 1.0), zeros({8});
    TD want = layer_norm<D>(nullptr, layer_norm<D>(nullptr, x, ones, zeros, 1e-5), ones, zeros,
                            1e-5);
    for (std::size_t i = 0; i < want.size(); ++i) expect_near(got[i], want[i], 1e-12, "collapse");
  });

  c.emplace_back("encoder block is time permutation equivariant", [] {
    ParamStore<D> store;
    Rng rng(53);
    auto enc = EncoderBlock<D>::create(store, "e", 8, 2, 16, rng);
    Rng xr(54);
    std::size_t T = 5;
    TD x = random_tensor({1, T, 8}, xr);
    TD xp({1, T, 8});
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t j = 0; j < 8; ++j) xp[(T - 1 - t) * 8 + j] = x[t * 8 + j];
    }
    TD a = enc.forward(nullptr, x);
    TD b = enc.forward(nullptr, xp);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t j = 0; j < 8; ++j) {
        expect_near(b[(T - 1 - t) * 8 + j], a[t * 8 + j], 1e-12, "permuted token");
      }
    }
  });

  c.emplace_back("lsrm tokenizes 128 samples into 16 patches", [] {
    auto model = Model<D>::build_default(ModelKind::kLsrm, 128, 8, 55);
    expect(model.store.get("lsrm.embed.w").shape() == (Shape{16, 64}), "embed shape");
    Rng xr(56);
    TD x = random_tensor({2, 2, 128}, xr);
    TD probs = model.forward(nullptr, x, Mode::kEval).probs;
    expect(probs.shape() == (Shape{2, 8}), "output shape");
    for (std::size_t b = 0; b < 2; ++b) {
      double s = 0.0;
      for (std::size_t k = 0; k < 8; ++k) s += probs[b * 8 + k];
      expect_near(s, 1.0, 1e-6, "row sum");
    }
  });

  c.emplace_back("lsrm duplicate inputs get identical rows", [] {
    auto model = Model<D>::build_default(ModelKind::kLsrm, 32, 4, 57);
    Rng xr(58);
    TD x({2, 2, 32});
    for (std::size_t i = 0; i < 2 * 32; ++i) {
      x[i] = xr.uniform(-1.0, 1.0);
      x[2 * 32 + i] = x[i];
    }
    TD probs = model.forward(nullptr, x, Mode::kEval).probs;
    for (std::size_t k = 0; k < 4; ++k) expect_near(probs[4 + k], probs[k], 1e-12, "row");
  });

  c.emplace_back("lsrm parameters pass the gradient check", [] {
    LsrmConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.ffn_hidden = 16;
    cfg.head_hidden = {8, 4};
    cfg.n_classes = 2;
    HsrmConfig hc;
    hc.n_classes = 2;
    auto model = Model<D>::build(ModelKind::kLsrm, 16, GateConfig{}, hc, cfg, 59);
    Rng xr(60);
    TD x = random_tensor({2, 2, 16}, xr);
    std::vector<TD> inputs;
    for (auto& e : model.store.entries()) {
      if (e.trainable) inputs.push_back(e.tensor);
    }
    auto res = grad_check(
        [&model, x](Tape<D>* tape, std::vector<TD>&) {
          TD probs = model.forward(tape, x, Mode::kEval).probs;
          return cross_entropy(tape, probs, {0, 1});
        },
        inputs);
    expect(res.max_rel_err < 1e-4,
           "rel err " + std::to_string(res.max_rel_err) + " at " + res.worst);
  });

  c.emplace_back("gate with zero weights answers one half", [] {
    ParamStore<D> store;
    Rng rng(61);
    auto gatenet = GateNet<D>::create(store, "g", GateConfig{{8, 4}}, 8, rng);
    zero_store(store);
    Rng xr(62);
    TD x = random_tensor({3, 2, 8}, xr);
    TD y = gatenet.forward(nullptr, x);
    expect(y.shape() == Shape{3}, "shape");
    for (std::size_t b = 0; b < 3; ++b) expect_near(y[b], 0.5, 0.0, "sigmoid(0)");
  });

  c.emplace_back("gate saturates at bias 20", [] {
    ParamStore<D> store;
    Rng rng(63);
    auto gatenet = GateNet<D>::create(store, "g", GateConfig{{8, 4}}, 8, rng);
    zero_store(store);
    store.get("g.fc3.b")[0] = 20.0;
    Rng xr(64);
    TD y = gatenet.forward(nullptr, random_tensor({2, 2, 8}, xr));
    for (std::size_t b = 0; b < 2; ++b) expect_near(y[b], 1.0, 1e-8, "saturated gate");
  });

  c.emplace_back("gate output stays strictly inside (0,1)", [] {
    ParamStore<D> store;
    Rng rng(65);
    auto gatenet = GateNet<D>::create(store, "g", GateConfig{{8, 4}}, 8, rng);
    Rng xr(66);
    TD y = gatenet.forward(nullptr, random_tensor({16, 2, 8}, xr, -3.0, 3.0));
    for (std::size_t b = 0; b < 16; ++b) expect(y[b] > 0.0 && y[b] < 1.0, "range");
  });

  c.emplace_back("mixture endpoints select one expert exactly", [] {
    TD h = make({1, 2}, {0.8, 0.2});
    TD l = make({1, 2}, {0.2, 0.8});
    for (double gv : {1.0, 0.0}) {
      TD g = make({1}, {gv});
      TD hi = mul_gate<D>(nullptr, h, g);
      TD lo = mul_gate<D>(nullptr, l, one_minus<D>(nullptr, g));
      TD y = add<D>(nullptr, hi, lo);
      const TD& want = gv == 1.0 ? h : l;
      for (int k = 0; k < 2; ++k) expect(y[k] == want[k], "exact endpoint");
    }
  });

  c.emplace_back("mixture midpoint averages the experts", [] {
    TD h = make({1, 2}, {0.8, 0.2});
    TD l = make({1, 2}, {0.2, 0.8});
    TD g = make({1}, {0.5});
    TD y = add<D>(nullptr, mul_gate<D>(nullptr, h, g),
                  mul_gate<D>(nullptr, l, one_minus<D>(nullptr, g)));
    expect_near(y[0], 0.5, 1e-12, "class 0");
    expect_near(y[1], 0.5, 1e-12, "class 1");
  });

  c.emplace_back("classify picks the argmax", [] {
    auto out = classify(make({1, 3}, {0.1, 0.7, 0.2}));
    expect(out.size() == 1 && out[0] == 1, "argmax");
  });

  c.emplace_back("classify breaks ties toward the lower index", [] {
    auto out = classify(make({1, 2}, {0.5, 0.5}));
    expect(out[0] == 0, "tie break");
  });

  c.emplace_back("classify keeps batch order", [] {
    auto out = classify(make({3, 2}, {0.9, 0.1, 0.2, 0.8, 0.6, 0.4}));
    expect(out.size() == 3, "count");
    expect(out[0] == 0 && out[1] == 1 && out[2] == 0, "order aligned");
  });

  c.emplace_back("mixture rows stay convex and normalized", [] {
    HsrmConfig hc;
    hc.n_stacks = 2;
    hc.channels = 4;
    hc.head_hidden = {8, 4};
    hc.n_classes = 4;
    LsrmConfig lc;
    lc.d_model = 8;
    lc.n_heads = 2;
    lc.ffn_hidden = 16;
    lc.head_hidden = {8, 4};
    lc.n_classes = 4;
    auto model = Model<D>::build(ModelKind::kMoe, 16, GateConfig{{8, 4}}, hc, lc, 67);
    Rng xr(68);
    TD x = random_tensor({8, 2, 16}, xr);
    auto out = model.forward(nullptr, x, Mode::kEval);
    expect(out.gate.shape() == Shape{8}, "gate shape");
    for (std::size_t b = 0; b < 8; ++b) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) {
        double yh = out.expert_high[b * 4 + k], yl = out.expert_low[b * 4 + k];
        double yf = out.probs[b * 4 + k];
        expect(yf >= std::min(yh, yl) - 1e-12 && yf <= std::max(yh, yl) + 1e-12, "convexity");
        s += yf;
      }
      expect_near(s, 1.0, 1e-6, "row sum");
    }
  });
}

// ---------------------------------------------------------------------------
// trainer
// ---------------------------------------------------------------------------
void add_trainer_checks(Checks& c) {
  c.emplace_back("early stop on a plateau with patience 2", [] {
    EarlyStopper s(2);
    std::vector<double> losses = {3.0, 2.0, 2.0, 2.0, 2.0};
    std::size_t stop_epoch = 0;
    for (std::size_t e = 0; e < losses.size(); ++e) {
      s.observe(losses[e]);
      if (s.should_stop()) {
        stop_epoch = e;
        break;
      }
    }
    expect(stop_epoch == 3, "stop epoch " + std::to_string(stop_epoch));
    expect(s.best_epoch() == 1, "best epoch " + std::to_string(s.best_epoch()));
  });

  c.emplace_back("zero max epochs returns the initial model", [] {
    auto spec = tiny_spec(70);
    Dataset ds = generate_dataset(spec);
    HsrmConfig hc;
    hc.n_stacks = 2;
    hc.channels = 4;
    hc.head_hidden = {8, 4};
    hc.n_classes = 2;
    LsrmConfig lc;
    lc.n_classes = 2;
    auto model = Model<float>::build(ModelKind::kHsrm, 16, GateConfig{}, hc, lc, 71);
    auto before = model.store.snapshot();
    TrainConfig cfg;
    cfg.max_epochs = 0;
    cfg.seed = 1;
    TrainHistory h = train(model, ds, ds, cfg);
    expect(h.records.empty(), "history should be empty");
    expect(model.store.snapshot() == before, "parameters changed");
  });

  c.emplace_back("training twice gives identical histories", [] {
    auto spec = tiny_spec(72);
    spec.frames_per_cell = 4;
    Dataset ds = generate_dataset(spec);
    HsrmConfig hc;
    hc.n_stacks = 2;
    hc.channels = 4;
    hc.head_hidden = {8, 4};
    hc.n_classes = 2;
    LsrmConfig lc;
    lc.n_classes = 2;
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.max_epochs = 3;
    cfg.patience = 3;
    cfg.seed = 5;
    std::vector<TrainHistory> hs;
    for (int run = 0; run < 2; ++run) {
      auto model = Model<float>::build(ModelKind::kHsrm, 16, GateConfig{}, hc, lc, 73);
      hs.push_back(train(model, ds, ds, cfg));
    }
    expect(hs[0].records.size() == hs[1].records.size(), "epoch counts differ");
    for (std::size_t e = 0; e < hs[0].records.size(); ++e) {
      expect(hs[0].records[e].train_loss == hs[1].records[e].train_loss, "train loss differs");
      expect(hs[0].records[e].val_loss == hs[1].records[e].val_loss, "val loss differs");
      expect(hs[0].records[e].val_acc == hs[1].records[e].val_acc, "val acc differs");
    }
  });

  c.emplace_back("evaluate counts matches and misses", [] {
    auto spec = tiny_spec(74);
    Dataset ds = generate_dataset(spec);  // 8 examples, 2 classes
    HsrmConfig hc;
    hc.n_stacks = 2;
    hc.channels = 4;
    hc.head_hidden = {8, 4};
    hc.n_classes = 2;
    LsrmConfig lc;
    lc.n_classes = 2;
    auto model = Model<D>::build(ModelKind::kHsrm, 16, GateConfig{}, hc, lc, 75);
    EvalResult first = evaluate(model, ds);
    Dataset agree = ds;
    for (std::size_t i = 0; i < agree.examples.size(); ++i) {
      agree.examples[i].class_idx = static_cast<std::uint16_t>(first.predictions[i]);
    }
    expect_near(evaluate(model, agree).accuracy, 1.0, 0.0, "all correct");
    Dataset half = agree;
    for (std::size_t i = 0; i < half.examples.size(); i += 2) {
      half.examples[i].class_idx = static_cast<std::uint16_t>(1 - half.examples[i].class_idx);
    }
    expect_near(evaluate(model, half).accuracy, 0.5, 0.0, "half correct");
  });

  c.emplace_back("untrained model scores at chance", [] {
    DatasetSpec spec = DatasetSpec::defaults(76);
    spec.frames_per_cell = 24;  // 8 classes x 11 SNRs x 24 = 2112 examples
    Dataset ds = generate_dataset(spec);
    auto model = Model<float>::build_default(ModelKind::kHsrm, 128, 8, 77);
    EvalResult res = evaluate(model, ds);
    expect(res.accuracy >= 1.0 / 8.0 - 0.04 && res.accuracy <= 1.0 / 8.0 + 0.04,
           "accuracy " + std::to_string(res.accuracy));
  });
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------
Dataset label_only_dataset(const std::vector<std::pair<std::size_t, double>>& rows,
                           std::size_t n_classes) {
  Dataset ds;
  ds.spec = DatasetSpec::defaults(0);
  ds.spec.schemes.resize(n_classes);
  for (std::size_t i = 0; i < n_classes; ++i) ds.spec.schemes[i] = static_cast<Scheme>(i);
  for (auto [cls, snr] : rows) {
    LabeledExample ex;
    ex.class_idx = static_cast<std::uint16_t>(cls);
    ex.snr_db = static_cast<float>(snr);
    ds.examples.push_back(ex);
  }
  return ds;
}

void add_report_checks(Checks& c) {
  c.emplace_back("all-correct predictions fill every bin", [] {
    Dataset ds = label_only_dataset({{0, 0.0}, {1, 0.0}, {0, 10.0}, {1, 10.0}}, 2);
    SnrMetrics m = accuracy_by_snr({0, 1, 0, 1}, ds);
    expect(m.per_snr.size() == 2, "bin count");
    for (auto& [snr, bin] : m.per_snr) expect_near(bin.accuracy(), 1.0, 0.0, "bin accuracy");
  });

  c.emplace_back("absent SNR bins stay absent", [] {
    Dataset ds = label_only_dataset({{0, 0.0}, {1, 0.0}}, 2);
    SnrMetrics m = accuracy_by_snr({0, 0}, ds);
    expect(m.per_snr.size() == 1, "only one bin");
    expect(m.per_snr.count(0.0) == 1, "bin at 0 dB");
  });

  c.emplace_back("six-example bins match a direct count", [] {
    Dataset ds = label_only_dataset(
        {{0, 0.0}, {1, 0.0}, {0, 0.0}, {1, 0.0}, {0, 10.0}, {1, 10.0}}, 2);
    // 3 of 4 right at 0 dB, 1 of 2 right at 10 dB
    SnrMetrics m = accuracy_by_snr({0, 1, 0, 0, 0, 0}, ds);
    expect_near(m.per_snr.at(0.0).accuracy(), 0.75, 1e-12, "0 dB bin");
    expect_near(m.per_snr.at(10.0).accuracy(), 0.5, 1e-12, "10 dB bin");
    std::size_t row0 = m.confusion[0] + m.confusion[1];
    std::size_t row1 = m.confusion[2] + m.confusion[3];
    expect(row0 == 3 && row1 == 3, "confusion row sums");
  });

  c.emplace_back("average accuracy is the bin mean", [] {
    Dataset ds = label_only_dataset({{0, 0.0}, {0, 0.0}, {0, 10.0}, {0, 10.0}}, 2);
    SnrMetrics m = accuracy_by_snr({0, 0, 0, 1}, ds);
    expect_near(average_accuracy(m), 0.75, 1e-12, "mean of 1.0 and 0.5");
  });

  c.emplace_back("single bin average is that bin", [] {
    Dataset ds = label_only_dataset({{0, 0.0}, {0, 0.0}}, 2);
    SnrMetrics m = accuracy_by_snr({0, 1}, ds);
    expect_near(average_accuracy(m), 0.5, 0.0, "identity");
  });

  c.emplace_back("balanced bins make the mean equal pooled accuracy", [] {
    std::vector<std::pair<std::size_t, double>> rows;
    std::vector<std::size_t> preds;
    Rng rng(78);
    for (double snr : {0.0, 4.0, 8.0}) {
      for (int i = 0; i < 10; ++i) {
        rows.push_back({0, snr});
        preds.push_back(rng.next_bit());
      }
    }
    Dataset ds = label_only_dataset(rows, 2);
    SnrMetrics m = accuracy_by_snr(preds, ds);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == 0 ? 1 : 0;
    double pooled = static_cast<double>(correct) / static_cast<double>(preds.size());
    expect_near(average_accuracy(m), pooled, 1e-12, "pooled vs bin mean");
  });

  c.emplace_back("report files have the promised shape", [] {
    TempDir tmp("report");
    std::vector<std::pair<std::size_t, double>> rows;
    std::vector<std::size_t> preds_a, preds_b;
    Rng rng(79);
    for (int s = -20; s <= 20; s += 4) {
      for (int i = 0; i < 4; ++i) {
        rows.push_back({rng.next_bit(), static_cast<double>(s)});
        preds_a.push_back(rng.next_bit());
        preds_b.push_back(rng.next_bit());
      }
    }
    Dataset ds = label_only_dataset(rows, 2);
    std::vector<std::pair<std::string, SnrMetrics>> models = {
        {"hsrm", accuracy_by_snr(preds_a, ds)}, {"lsrm", accuracy_by_snr(preds_b, ds)}};
    emit_report(models, tmp.str());
    auto csv = read_file_bytes(tmp.str() + "/accuracy_by_snr.csv");
    std::size_t lines = static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n'));
    expect(lines == 12, "11 data rows plus header, got " + std::to_string(lines));
    auto svg_bytes = read_file_bytes(tmp.str() + "/accuracy_by_snr.svg");
    std::string svg(svg_bytes.begin(), svg_bytes.end());
    std::size_t polylines = 0, pos = 0;
    while ((pos = svg.find("<polyline", pos)) != std::string::npos) {
      ++polylines;
      ++pos;
    }
    expect(polylines == 2, "one polyline per model");
    expect(svg.rfind("<svg", 0) == 0 || svg.find("<svg") != std::string::npos, "svg root");
    emit_report(models, tmp.str());
    expect(read_file_bytes(tmp.str() + "/accuracy_by_snr.svg") == svg_bytes,
           "svg not byte-stable");
    expect(read_file_bytes(tmp.str() + "/accuracy_by_snr.csv") == csv, "csv not byte-stable");
  });
}

// ---------------------------------------------------------------------------
// cli
// ---------------------------------------------------------------------------
void add_cli_checks(Checks& c) {
  c.emplace_back("generate is byte-stable across runs", [] {
    TempDir tmp("cli_gen");
    nlohmann::json cfg = {
        {"seed", 7},
        {"out_dir", tmp.str() + "/run"},
        {"dataset",
         {{"schemes", {"BPSK", "QPSK"}},
          {"snr_grid_db", {0.0, 10.0}},
          {"frame_len", 16},
          {"samples_per_symbol", 8},
          {"frames_per_cell", 2}}}};
    std::string cfg_path = tmp.str() + "/cfg.json";
    write_file_text(cfg_path, cfg.dump(2));
    expect(run_cli({"generate", "--config", cfg_path}) == 0, "first generate failed");
    auto first = read_file_bytes(tmp.str() + "/run/dataset_full.bin");
    expect(run_cli({"generate", "--config", cfg_path}) == 0, "second generate failed");
    expect(read_file_bytes(tmp.str() + "/run/dataset_full.bin") == first, "bytes differ");
  });

  c.emplace_back("eval without a checkpoint exits with the I/O code", [] {
    TempDir tmp("cli_eval");
    nlohmann::json cfg = {{"seed", 7}, {"out_dir", tmp.str() + "/run"}};
    std::string cfg_path = tmp.str() + "/cfg.json";
    write_file_text(cfg_path, cfg.dump(2));
    int code = run_cli({"eval", "--config", cfg_path, "--model", "moe"});
    expect(code == 2, "exit code " + std::to_string(code));
  });
}

}  // namespace

std::vector<CheckResult> run_selftest() {
  Checks checks;
  add_sigsynth_checks(checks);
  add_tensor_checks(checks);
  add_adam_checks(checks);
  add_model_checks(checks);
  add_trainer_checks(checks);
  add_report_checks(checks);
  add_cli_checks(checks);

  std::vector<CheckResult> results;
  results.reserve(checks.size());
  for (auto& [name, fn] : checks) {
    CheckResult r;
    r.name = name;
    try {
      fn();
      r.pass = true;
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = e.what();
    }
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace moeamc
