#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "moeamc/nn.hpp"
#include "moeamc/signal.hpp"

namespace moeamc {

// Token width for the attention expert: non-overlapping groups of 8 time
// steps across both channels form one 16-feature token.
inline constexpr std::size_t kLsrmPatch = 8;

struct HsrmConfig {
  std::size_t n_stacks = 4;
  std::size_t units_per_stack = 2;
  std::size_t channels = 32;
  std::size_t kernel = 3;
  std::pair<std::size_t, std::size_t> head_hidden = {128, 64};
  std::size_t n_classes = 0;
};

struct LsrmConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t ffn_hidden = 128;
  std::pair<std::size_t, std::size_t> head_hidden = {128, 64};
  std::size_t n_classes = 0;
};

struct GateConfig {
  std::pair<std::size_t, std::size_t> hidden = {64, 32};
};

enum class ModelKind { kHsrm, kLsrm, kMoe };

inline const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::kHsrm: return "hsrm";
    case ModelKind::kLsrm: return "lsrm";
    case ModelKind::kMoe: return "moe";
  }
  throw ValidationError("unknown model kind");
}

inline ModelKind model_kind_from_name(const std::string& name) {
  for (int i = 0; i < 3; ++i) {
    ModelKind k = static_cast<ModelKind>(i);
    if (name == model_kind_name(k)) return k;
  }
  throw ValidationError("unknown model kind: " + name);
}

// ---------------------------------------------------------------------------
// Config <-> JSON
// ---------------------------------------------------------------------------
inline nlohmann::json to_json(const HsrmConfig& c) {
  return {{"n_stacks", c.n_stacks},
          {"units_per_stack", c.units_per_stack},
          {"channels", c.channels},
          {"kernel", c.kernel},
          {"head_hidden", {c.head_hidden.first, c.head_hidden.second}},
          {"n_classes", c.n_classes}};
}

inline nlohmann::json to_json(const LsrmConfig& c) {
  return {{"d_model", c.d_model},
          {"n_heads", c.n_heads},
          {"ffn_hidden", c.ffn_hidden},
          {"head_hidden", {c.head_hidden.first, c.head_hidden.second}},
          {"n_classes", c.n_classes}};
}

inline nlohmann::json to_json(const GateConfig& c) {
  return {{"hidden", {c.hidden.first, c.hidden.second}}};
}

inline HsrmConfig hsrm_config_from_json(const nlohmann::json& j) {
  HsrmConfig c;
  c.n_stacks = j.value("n_stacks", c.n_stacks);
  c.units_per_stack = j.value("units_per_stack", c.units_per_stack);
  c.channels = j.value("channels", c.channels);
  c.kernel = j.value("kernel", c.kernel);
  if (j.contains("head_hidden")) {
    c.head_hidden = {j["head_hidden"].at(0).get<std::size_t>(),
                     j["head_hidden"].at(1).get<std::size_t>()};
  }
  if (j.contains("n_classes")) c.n_classes = j["n_classes"].get<std::size_t>();
  return c;
}

inline LsrmConfig lsrm_config_from_json(const nlohmann::json& j) {
  LsrmConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.ffn_hidden = j.value("ffn_hidden", c.ffn_hidden);
  if (j.contains("head_hidden")) {
    c.head_hidden = {j["head_hidden"].at(0).get<std::size_t>(),
                     j["head_hidden"].at(1).get<std::size_t>()};
  }
  if (j.contains("n_classes")) c.n_classes = j["n_classes"].get<std::size_t>();
  return c;
}

inline GateConfig gate_config_from_json(const nlohmann::json& j) {
  GateConfig c;
  if (j.contains("hidden")) {
    c.hidden = {j["hidden"].at(0).get<std::size_t>(), j["hidden"].at(1).get<std::size_t>()};
  }
  return c;
}

// ---------------------------------------------------------------------------
// preprocess: stack I/Q as two channels, normalize to unit average power.
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> preprocess(const IQFrame& frame, std::size_t input_len) {
  if (frame.length() != input_len) {
    throw ValidationError("preprocess: frame length " + std::to_string(frame.length()) +
                          ", model expects " + std::to_string(input_len));
  }
  double p = frame_power(frame);
  double scale = 1.0 / std::sqrt(std::max(p, 1e-12));
  Tensor<T> out({2, input_len});
  for (std::size_t t = 0; t < input_len; ++t) {
    out[t] = static_cast<T>(frame.i[t] * scale);
    out[input_len + t] = static_cast<T>(frame.q[t] * scale);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Residual unit: x + g(x), g = conv->BN->ReLU->conv->BN, shape-preserving.
// ---------------------------------------------------------------------------
template <class T>
struct ResidualUnit {
  Conv1dLayer<T> conv1, conv2;
  BatchNorm1dLayer<T> bn1, bn2;

  static ResidualUnit create(ParamStore<T>& store, const std::string& prefix, std::size_t ch,
                             std::size_t kernel, Rng& rng) {
    if (kernel % 2 == 0) throw ValidationError("residual unit: kernel must be odd");
    ResidualUnit u;
    std::size_t pad = kernel / 2;
    u.conv1 = Conv1dLayer<T>::create(store, prefix + ".conv1", ch, ch, kernel, 1, pad, rng);
    u.bn1 = BatchNorm1dLayer<T>::create(store, prefix + ".bn1", ch);
    u.conv2 = Conv1dLayer<T>::create(store, prefix + ".conv2", ch, ch, kernel, 1, pad, rng);
    u.bn2 = BatchNorm1dLayer<T>::create(store, prefix + ".bn2", ch);
    return u;
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, Mode mode) {
    Tensor<T> g = bn1.forward(tape, conv1.forward(tape, x), mode);
    g = relu(tape, g);
    g = bn2.forward(tape, conv2.forward(tape, g), mode);
    return add(tape, x, g);
  }
};

// ---------------------------------------------------------------------------
// HSRM: stem conv, residual stacks with max-pool halving, MLP head, softmax.
// ---------------------------------------------------------------------------
template <class T>
struct HsrmNet {
  HsrmConfig cfg;
  std::size_t input_len = 0;
  Conv1dLayer<T> stem;
  std::vector<ResidualUnit<T>> units;
  LinearLayer<T> fc1, fc2, fc3;

  static HsrmNet create(ParamStore<T>& store, const std::string& prefix, const HsrmConfig& cfg,
                        std::size_t input_len, Rng& rng) {
    if (cfg.n_stacks < 1 || cfg.units_per_stack < 1 || cfg.channels < 1 || cfg.n_classes < 2) {
      throw ValidationError("hsrm config: degenerate sizes");
    }
    std::size_t div = std::size_t(1) << cfg.n_stacks;
    if (input_len % div != 0 || input_len / div == 0) {
      throw ValidationError("hsrm config: input length " + std::to_string(input_len) +
                            " not divisible by 2^" + std::to_string(cfg.n_stacks));
    }
    HsrmNet net;
    net.cfg = cfg;
    net.input_len = input_len;
    net.stem = Conv1dLayer<T>::create(store, prefix + ".stem", 2, cfg.channels, cfg.kernel, 1,
                                      cfg.kernel / 2, rng);
    for (std::size_t s = 0; s < cfg.n_stacks; ++s) {
      for (std::size_t u = 0; u < cfg.units_per_stack; ++u) {
        net.units.push_back(ResidualUnit<T>::create(
            store, prefix + ".s" + std::to_string(s) + ".u" + std::to_string(u), cfg.channels,
            cfg.kernel, rng));
      }
    }
    std::size_t flat = cfg.channels * (input_len / div);
    net.fc1 = LinearLayer<T>::create(store, prefix + ".fc1", flat, cfg.head_hidden.first,
                                     Init::kHe, rng);
    net.fc2 = LinearLayer<T>::create(store, prefix + ".fc2", cfg.head_hidden.first,
                                     cfg.head_hidden.second, Init::kHe, rng);
    net.fc3 = LinearLayer<T>::create(store, prefix + ".fc3", cfg.head_hidden.second,
                                     cfg.n_classes, Init::kXavier, rng);
    return net;
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, Mode mode) {
    Tensor<T> h = stem.forward(tape, x);
    std::size_t u = 0;
    for (std::size_t s = 0; s < cfg.n_stacks; ++s) {
      for (std::size_t i = 0; i < cfg.units_per_stack; ++i) {
        h = units[u++].forward(tape, h, mode);
      }
      h = max_pool1d(tape, h, 2, 2);
    }
    std::size_t batch = h.dim(0);
    h = reshape(tape, h, {batch, h.dim(1) * h.dim(2)});
    h = relu(tape, fc1.forward(tape, h));
    h = relu(tape, fc2.forward(tape, h));
    return softmax(tape, fc3.forward(tape, h));
  }
};

// ---------------------------------------------------------------------------
// Encoder block, post-norm: h = LN(x + MHA(x)); out = LN(h + FFN(h)).
// ---------------------------------------------------------------------------
template <class T>
struct EncoderBlock {
  MultiHeadAttentionLayer<T> mha;
  LayerNormLayer<T> ln1, ln2;
  LinearLayer<T> ffn1, ffn2;
  std::size_t d_model = 0;

  static EncoderBlock create(ParamStore<T>& store, const std::string& prefix, std::size_t d_model,
                             std::size_t n_heads, std::size_t ffn_hidden, Rng& rng) {
    EncoderBlock b;
    b.d_model = d_model;
    b.mha = MultiHeadAttentionLayer<T>::create(store, prefix + ".mha", d_model, n_heads, rng);
    b.ln1 = LayerNormLayer<T>::create(store, prefix + ".ln1", d_model);
    b.ffn1 = LinearLayer<T>::create(store, prefix + ".ffn1", d_model, ffn_hidden, Init::kHe, rng);
    b.ffn2 = LinearLayer<T>::create(store, prefix + ".ffn2", ffn_hidden, d_model, Init::kXavier,
                                    rng);
    b.ln2 = LayerNormLayer<T>::create(store, prefix + ".ln2", d_model);
    return b;
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) {
    Tensor<T> h = ln1.forward(tape, add(tape, x, mha.forward(tape, x)));
    std::size_t batch = h.dim(0), steps = h.dim(1);
    Tensor<T> flat = reshape(tape, h, {batch * steps, d_model});
    Tensor<T> f = relu(tape, ffn1.forward(tape, flat));
    f = ffn2.forward(tape, f);
    f = reshape(tape, f, {batch, steps, d_model});
    return ln2.forward(tape, add(tape, h, f));
  }
};

// ---------------------------------------------------------------------------
// LSRM: patch embedding, one encoder block, mean over tokens, MLP head.
// ---------------------------------------------------------------------------
template <class T>
struct LsrmNet {
  LsrmConfig cfg;
  std::size_t input_len = 0;
  LinearLayer<T> embed;
  EncoderBlock<T> enc;
  LinearLayer<T> fc1, fc2, fc3;

  static LsrmNet create(ParamStore<T>& store, const std::string& prefix, const LsrmConfig& cfg,
                        std::size_t input_len, Rng& rng) {
    if (cfg.d_model < 1 || cfg.n_classes < 2) throw ValidationError("lsrm config: degenerate sizes");
    if (cfg.n_heads == 0 || cfg.d_model % cfg.n_heads != 0) {
      throw ValidationError("lsrm config: d_model not divisible by n_heads");
    }
    if (input_len % kLsrmPatch != 0) {
      throw ValidationError("lsrm config: input length not divisible by patch size");
    }
    LsrmNet net;
    net.cfg = cfg;
    net.input_len = input_len;
    net.embed = LinearLayer<T>::create(store, prefix + ".embed", 2 * kLsrmPatch, cfg.d_model,
                                       Init::kXavier, rng);
    net.enc = EncoderBlock<T>::create(store, prefix + ".enc", cfg.d_model, cfg.n_heads,
                                      cfg.ffn_hidden, rng);
    net.fc1 = LinearLayer<T>::create(store, prefix + ".fc1", cfg.d_model, cfg.head_hidden.first,
                                     Init::kHe, rng);
    net.fc2 = LinearLayer<T>::create(store, prefix + ".fc2", cfg.head_hidden.first,
                                     cfg.head_hidden.second, Init::kHe, rng);
    net.fc3 = LinearLayer<T>::create(store, prefix + ".fc3", cfg.head_hidden.second,
                                     cfg.n_classes, Init::kXavier, rng);
    return net;
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, Mode) {
    std::size_t batch = x.dim(0);
    Tensor<T> tokens = patchify(tape, x, kLsrmPatch);  // [B,T,2*patch]
    std::size_t steps = tokens.dim(1);
    Tensor<T> flat = reshape(tape, tokens, {batch * steps, 2 * kLsrmPatch});
    Tensor<T> e = embed.forward(tape, flat);
    e = reshape(tape, e, {batch, steps, cfg.d_model});
    Tensor<T> h = enc.forward(tape, e);
    h = global_avg_pool(tape, h);
    h = relu(tape, fc1.forward(tape, h));
    h = relu(tape, fc2.forward(tape, h));
    return softmax(tape, fc3.forward(tape, h));
  }
};

// ---------------------------------------------------------------------------
// Gate: flattened frame through a 3-layer MLP to one sigmoid output.
// ---------------------------------------------------------------------------
template <class T>
struct GateNet {
  GateConfig cfg;
  std::size_t input_len = 0;
  LinearLayer<T> fc1, fc2, fc3;

  static GateNet create(ParamStore<T>& store, const std::string& prefix, const GateConfig& cfg,
                        std::size_t input_len, Rng& rng) {
    if (cfg.hidden.first < 1 || cfg.hidden.second < 1) {
      throw ValidationError("gate config: degenerate sizes");
    }
    GateNet net;
    net.cfg = cfg;
    net.input_len = input_len;
    net.fc1 = LinearLayer<T>::create(store, prefix + ".fc1", 2 * input_len, cfg.hidden.first,
                                     Init::kHe, rng);
    net.fc2 = LinearLayer<T>::create(store, prefix + ".fc2", cfg.hidden.first, cfg.hidden.second,
                                     Init::kHe, rng);
    net.fc3 = LinearLayer<T>::create(store, prefix + ".fc3", cfg.hidden.second, 1, Init::kXavier,
                                     rng);
    return net;
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) {
    std::size_t batch = x.dim(0);
    Tensor<T> h = reshape(tape, x, {batch, 2 * input_len});
    h = relu(tape, fc1.forward(tape, h));
    h = relu(tape, fc2.forward(tape, h));
    h = sigmoid(tape, fc3.forward(tape, h));
    return reshape(tape, h, {batch});
  }
};

template <class T>
struct ModelOutput {
  Tensor<T> probs;        // class probabilities driving the loss
  Tensor<T> gate;         // y_high, defined for the mixture only
  Tensor<T> expert_high;  // defined for the mixture only
  Tensor<T> expert_low;   // defined for the mixture only
};

// ---------------------------------------------------------------------------
// Model: one of the two experts standalone, or the gated mixture.
// ---------------------------------------------------------------------------
template <class T>
struct Model {
  ModelKind kind = ModelKind::kHsrm;
  std::size_t input_len = 0;
  std::size_t n_classes = 0;
  GateConfig gate_cfg;
  HsrmConfig hsrm_cfg;
  LsrmConfig lsrm_cfg;
  ParamStore<T> store;
  std::optional<GateNet<T>> gate;
  std::optional<HsrmNet<T>> hsrm;
  std::optional<LsrmNet<T>> lsrm;

  Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  static Model build(ModelKind kind, std::size_t input_len, const GateConfig& gate_cfg,
                     const HsrmConfig& hsrm_cfg, const LsrmConfig& lsrm_cfg,
                     std::uint64_t init_seed) {
    Model m;
    m.kind = kind;
    m.input_len = input_len;
    m.gate_cfg = gate_cfg;
    m.hsrm_cfg = hsrm_cfg;
    m.lsrm_cfg = lsrm_cfg;
    if (kind == ModelKind::kMoe && hsrm_cfg.n_classes != lsrm_cfg.n_classes) {
      throw ValidationError("model build: experts disagree on n_classes");
    }
    m.n_classes = kind == ModelKind::kLsrm ? lsrm_cfg.n_classes : hsrm_cfg.n_classes;
    // independent init streams per component, so the mixture's experts start
    // exactly like their standalone counterparts under the same seed
    if (kind == ModelKind::kMoe) {
      Rng rg(mix_seed(init_seed, 1));
      m.gate = GateNet<T>::create(m.store, "gate", gate_cfg, input_len, rg);
    }
    if (kind == ModelKind::kHsrm || kind == ModelKind::kMoe) {
      Rng rh(mix_seed(init_seed, 2));
      m.hsrm = HsrmNet<T>::create(m.store, "hsrm", hsrm_cfg, input_len, rh);
    }
    if (kind == ModelKind::kLsrm || kind == ModelKind::kMoe) {
      Rng rl(mix_seed(init_seed, 3));
      m.lsrm = LsrmNet<T>::create(m.store, "lsrm", lsrm_cfg, input_len, rl);
    }
    return m;
  }

  static Model build_default(ModelKind kind, std::size_t input_len, std::size_t n_classes,
                             std::uint64_t init_seed) {
    HsrmConfig h;
    h.n_classes = n_classes;
    LsrmConfig l;
    l.n_classes = n_classes;
    return build(kind, input_len, GateConfig{}, h, l, init_seed);
  }

  nlohmann::json config_json() const {
    nlohmann::json j;
    j["kind"] = model_kind_name(kind);
    j["input_len"] = input_len;
    j["n_classes"] = n_classes;
    if (gate) j["gate"] = to_json(gate_cfg);
    if (hsrm) j["hsrm"] = to_json(hsrm_cfg);
    if (lsrm) j["lsrm"] = to_json(lsrm_cfg);
    return j;
  }

  static Model from_config_json(const nlohmann::json& j, std::uint64_t init_seed = 0) {
    ModelKind kind = model_kind_from_name(j.at("kind").get<std::string>());
    auto input_len = j.at("input_len").get<std::size_t>();
    auto n_classes = j.at("n_classes").get<std::size_t>();
    GateConfig g = j.contains("gate") ? gate_config_from_json(j["gate"]) : GateConfig{};
    HsrmConfig h = j.contains("hsrm") ? hsrm_config_from_json(j["hsrm"]) : HsrmConfig{};
    LsrmConfig l = j.contains("lsrm") ? lsrm_config_from_json(j["lsrm"]) : LsrmConfig{};
    h.n_classes = h.n_classes ? h.n_classes : n_classes;
    l.n_classes = l.n_classes ? l.n_classes : n_classes;
    return build(kind, input_len, g, h, l, init_seed);
  }

  // x is [B, 2, input_len], already preprocessed.
  ModelOutput<T> forward(Tape<T>* tape, const Tensor<T>& x, Mode mode) {
    if (x.rank() != 3 || x.dim(1) != 2 || x.dim(2) != input_len) {
      throw ValidationError("model forward: want [B,2," + std::to_string(input_len) + "], got " +
                            shape_str(x.shape()));
    }
    ModelOutput<T> out;
    switch (kind) {
      case ModelKind::kHsrm:
        out.probs = hsrm->forward(tape, x, mode);
        break;
      case ModelKind::kLsrm:
        out.probs = lsrm->forward(tape, x, mode);
        break;
      case ModelKind::kMoe: {
        out.gate = gate->forward(tape, x);
        out.expert_high = hsrm->forward(tape, x, mode);
        out.expert_low = lsrm->forward(tape, x, mode);
        Tensor<T> high = mul_gate(tape, out.expert_high, out.gate);
        Tensor<T> low = mul_gate(tape, out.expert_low, one_minus(tape, out.gate));
        out.probs = add(tape, high, low);
        break;
      }
    }
    return out;
  }
};

// Per-row argmax over probabilities; ties resolve to the lowest class index.
template <class T>
std::vector<std::size_t> classify(const Tensor<T>& probs) {
  if (probs.rank() != 2) throw ValidationError("classify: want [B,K]");
  std::size_t batch = probs.dim(0), k = probs.dim(1);
  std::vector<std::size_t> out(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += probs[b * k + j];
    if (std::abs(sum - 1.0) > 1e-4) {
      throw ValidationError("classify: row " + std::to_string(b) + " sums to " +
                            std::to_string(sum));
    }
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (probs[b * k + j] > probs[b * k + best]) best = j;
    }
    out[b] = best;
  }
  return out;
}

}  // namespace moeamc
