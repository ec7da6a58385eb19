#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "moeamc/checkpoint.hpp"
#include "moeamc/models.hpp"

using namespace moeamc;

namespace {

using TD = Tensor<double>;

TD rand_t(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TD t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

HsrmConfig tiny_hsrm(std::size_t classes) {
  HsrmConfig h;
  h.n_stacks = 2;
  h.channels = 4;
  h.head_hidden = {8, 4};
  h.n_classes = classes;
  return h;
}

LsrmConfig tiny_lsrm(std::size_t classes) {
  LsrmConfig l;
  l.d_model = 8;
  l.n_heads = 2;
  l.ffn_hidden = 16;
  l.head_hidden = {8, 4};
  l.n_classes = classes;
  return l;
}

}  // namespace

TEST_SUITE("models") {

TEST_CASE("preprocess leaves every nonzero frame at unit power") {
  Rng rng(60);
  for (int trial = 0; trial < 5; ++trial) {
    IQFrame f;
    f.i.resize(32);
    f.q.resize(32);
    for (std::size_t t = 0; t < 32; ++t) {
      f.i[t] = static_cast<float>(rng.uniform(-3.0, 3.0));
      f.q[t] = static_cast<float>(rng.uniform(-3.0, 3.0));
    }
    TD x = preprocess<double>(f, 32);
    double p = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) p += x[i] * x[i];
    CHECK(p / 32.0 == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("preprocess rejects a frame shorter than the model input") {
  IQFrame f;
  f.i.assign(8, 1.0f);
  f.q.assign(8, 0.0f);
  CHECK_THROWS_AS(preprocess<double>(f, 16), ValidationError);
}

TEST_CASE("hsrm needs the input length to survive the poolings") {
  auto cfg = tiny_hsrm(4);  // two stacks halve twice: needs input_len % 4 == 0
  CHECK_THROWS_AS(Model<double>::build(ModelKind::kHsrm, 18, GateConfig{}, cfg, tiny_lsrm(4), 1),
                  ValidationError);
}

TEST_CASE("lsrm needs the input length to tile into patches") {
  CHECK_THROWS_AS(
      Model<double>::build(ModelKind::kLsrm, 20, GateConfig{}, tiny_hsrm(4), tiny_lsrm(4), 1),
      ValidationError);
}

TEST_CASE("attention head count must divide the model width") {
  auto bad = tiny_lsrm(4);
  bad.n_heads = 3;  // does not divide d_model 8
  CHECK_THROWS_AS(
      Model<double>::build(ModelKind::kLsrm, 16, GateConfig{}, tiny_hsrm(4), bad, 1),
      ValidationError);
}

TEST_CASE("mixture experts must agree on the class count") {
  CHECK_THROWS_AS(
      Model<double>::build(ModelKind::kMoe, 16, GateConfig{{8, 4}}, tiny_hsrm(4), tiny_lsrm(5), 1),
      ValidationError);
}

TEST_CASE("mixture experts initialize exactly like standalone models") {
  std::uint64_t seed = 77;
  auto moe = Model<double>::build(ModelKind::kMoe, 16, GateConfig{{8, 4}}, tiny_hsrm(4),
                                  tiny_lsrm(4), seed);
  auto hsrm = Model<double>::build(ModelKind::kHsrm, 16, GateConfig{{8, 4}}, tiny_hsrm(4),
                                   tiny_lsrm(4), seed);
  auto lsrm = Model<double>::build(ModelKind::kLsrm, 16, GateConfig{{8, 4}}, tiny_hsrm(4),
                                   tiny_lsrm(4), seed);
  for (auto& e : hsrm.store.entries()) {
    CHECK(moe.store.get(e.name).values() == e.tensor.values());
  }
  for (auto& e : lsrm.store.entries()) {
    CHECK(moe.store.get(e.name).values() == e.tensor.values());
  }
}

TEST_CASE("different seeds give different parameters") {
  auto a = Model<double>::build_default(ModelKind::kHsrm, 16, 4, 1);
  auto b = Model<double>::build_default(ModelKind::kHsrm, 16, 4, 2);
  CHECK(a.store.get("hsrm.stem.w").values() != b.store.get("hsrm.stem.w").values());
}

TEST_CASE("biases start at zero and norm scales at one") {
  auto m = Model<double>::build(ModelKind::kMoe, 16, GateConfig{{8, 4}}, tiny_hsrm(4),
                                tiny_lsrm(4), 3);
  for (auto& e : m.store.entries()) {
    auto ends_with = [&](const char* suffix) {
      std::string s(suffix);
      return e.name.size() >= s.size() && e.name.compare(e.name.size() - s.size(), s.size(), s) == 0;
    };
    if (ends_with(".b") || ends_with(".beta")) {
      for (double v : e.tensor.values()) CHECK(v == 0.0);
    }
    if (ends_with(".gamma")) {
      for (double v : e.tensor.values()) CHECK(v == 1.0);
    }
  }
}

TEST_CASE("checkpoint round trip reproduces the model bit for bit") {
  auto dir = std::filesystem::temp_directory_path() / "moeamc_unit_ckpt";
  std::filesystem::create_directories(dir);
  std::string path = (dir / "m.ckpt").string();

  auto m = Model<float>::build(ModelKind::kMoe, 16, GateConfig{{8, 4}}, tiny_hsrm(4),
                               tiny_lsrm(4), 9);
  save_checkpoint(m.store, m.config_json(), path);

  Checkpoint ck = load_checkpoint(path);
  auto back = Model<float>::from_config_json(ck.config, 0);
  load_into_store(back.store, ck);
  for (auto& e : m.store.entries()) {
    CHECK(back.store.get(e.name).values() == e.tensor.values());
  }

  Rng rng(10);
  Tensor<float> x({2, 2, 16});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  auto ya = m.forward(nullptr, x, Mode::kEval).probs;
  auto yb = back.forward(nullptr, x, Mode::kEval).probs;
  CHECK(ya.values() == yb.values());
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoints with missing tensors are rejected") {
  auto dir = std::filesystem::temp_directory_path() / "moeamc_unit_ckpt2";
  std::filesystem::create_directories(dir);
  std::string path = (dir / "m.ckpt").string();
  auto hsrm = Model<float>::build_default(ModelKind::kHsrm, 16, 4, 1);
  // tiny hsrm differs in shape from the default one; loading must refuse
  save_checkpoint(hsrm.store, hsrm.config_json(), path);
  Checkpoint ck = load_checkpoint(path);
  auto other = Model<float>::build(ModelKind::kHsrm, 16, GateConfig{}, tiny_hsrm(4),
                                   tiny_lsrm(4), 1);
  CHECK_THROWS_AS(load_into_store(other.store, ck), ValidationError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("corrupted checkpoint blobs fail the checksum") {
  auto dir = std::filesystem::temp_directory_path() / "moeamc_unit_ckpt3";
  std::filesystem::create_directories(dir);
  std::string path = (dir / "m.ckpt").string();
  auto m = Model<float>::build(ModelKind::kHsrm, 16, GateConfig{}, tiny_hsrm(4), tiny_lsrm(4), 2);
  save_checkpoint(m.store, m.config_json(), path);
  auto bytes = read_file_bytes(path);
  bytes[bytes.size() - 10] ^= 0x40;
  write_file_bytes(path, bytes);
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("model config json round-trips the architecture") {
  auto m = Model<double>::build(ModelKind::kMoe, 32, GateConfig{{16, 8}}, tiny_hsrm(6),
                                tiny_lsrm(6), 4);
  auto j = m.config_json();
  auto back = Model<double>::from_config_json(j, 4);
  CHECK(back.kind == ModelKind::kMoe);
  CHECK(back.input_len == 32);
  CHECK(back.n_classes == 6);
  CHECK(back.store.size() == m.store.size());
  for (auto& e : m.store.entries()) {
    CHECK(back.store.get(e.name).shape() == e.tensor.shape());
  }
}

TEST_CASE("forward validates the input shape") {
  auto m = Model<double>::build(ModelKind::kHsrm, 16, GateConfig{}, tiny_hsrm(4), tiny_lsrm(4), 5);
  Rng rng(11);
  TD bad = rand_t({2, 2, 8}, rng);
  CHECK_THROWS_AS(m.forward(nullptr, bad, Mode::kEval), ValidationError);
}

TEST_CASE("classify rejects rows that are not probabilities") {
  TD bad = TD::from({1, 2}, {0.9, 0.4});
  CHECK_THROWS_AS(classify(bad), ValidationError);
}

TEST_CASE("gate output feeds the mixture exactly once per example") {
  auto m = Model<double>::build(ModelKind::kMoe, 16, GateConfig{{8, 4}}, tiny_hsrm(4),
                                tiny_lsrm(4), 6);
  Rng rng(12);
  TD x = rand_t({4, 2, 16}, rng);
  auto out = m.forward(nullptr, x, Mode::kEval);
  for (std::size_t b = 0; b < 4; ++b) {
    double g = out.gate[b];
    for (std::size_t k = 0; k < 4; ++k) {
      double want = g * out.expert_high[b * 4 + k] + (1.0 - g) * out.expert_low[b * 4 + k];
      CHECK(out.probs[b * 4 + k] == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

}  // TEST_SUITE
