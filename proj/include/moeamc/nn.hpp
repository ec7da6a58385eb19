#pragma once

#include <cmath>
#include <string>

#include "moeamc/ops.hpp"
#include "moeamc/params.hpp"
#include "moeamc/rng.hpp"

namespace moeamc {

// Weight init: He for layers feeding ReLU, Xavier elsewhere (attention
// projections, output heads). Both uniform, biases zero.
enum class Init { kHe, kXavier };

namespace detail {

template <class T>
void init_uniform(Tensor<T>& t, double limit, Rng& rng) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<T>(rng.uniform(-limit, limit));
  }
}

inline double init_limit(Init init, std::size_t fan_in, std::size_t fan_out) {
  if (init == Init::kHe) return std::sqrt(6.0 / static_cast<double>(fan_in));
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

}  // namespace detail

template <class T>
struct LinearLayer {
  Tensor<T> w;  // [in, out]
  Tensor<T> b;  // [out]

  static LinearLayer create(ParamStore<T>& store, const std::string& prefix, std::size_t in,
                            std::size_t out, Init init, Rng& rng) {
    LinearLayer l;
    Tensor<T> w({in, out});
    detail::init_uniform(w, detail::init_limit(init, in, out), rng);
    l.w = store.add(prefix + ".w", std::move(w));
    l.b = store.add(prefix + ".b", Tensor<T>({out}));
    return l;
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) const {
    return linear(tape, x, w, b);
  }
};

template <class T>
struct Conv1dLayer {
  Tensor<T> w;  // [out_ch, in_ch, k]
  Tensor<T> b;  // [out_ch]
  std::size_t stride = 1;
  std::size_t pad = 0;

  static Conv1dLayer create(ParamStore<T>& store, const std::string& prefix, std::size_t in_ch,
                            std::size_t out_ch, std::size_t k, std::size_t stride, std::size_t pad,
                            Rng& rng) {
    Conv1dLayer l;
    l.stride = stride;
    l.pad = pad;
    Tensor<T> w({out_ch, in_ch, k});
    detail::init_uniform(w, detail::init_limit(Init::kHe, in_ch * k, out_ch * k), rng);
    l.w = store.add(prefix + ".w", std::move(w));
    l.b = store.add(prefix + ".b", Tensor<T>({out_ch}));
    return l;
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) const {
    return conv1d(tape, x, w, b, stride, pad);
  }
};

template <class T>
struct BatchNorm1dLayer {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNorm1dLayer create(ParamStore<T>& store, const std::string& prefix,
                                 std::size_t ch) {
    BatchNorm1dLayer l;
    l.gamma = store.add(prefix + ".gamma", Tensor<T>({ch}, T(1)));
    l.beta = store.add(prefix + ".beta", Tensor<T>({ch}));
    l.running_mean = store.add(prefix + ".running_mean", Tensor<T>({ch}), false);
    l.running_var = store.add(prefix + ".running_var", Tensor<T>({ch}, T(1)), false);
    return l;
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, Mode mode) {
    return batch_norm(tape, x, gamma, beta, running_mean, running_var, mode, momentum, eps);
  }
};

template <class T>
struct LayerNormLayer {
  Tensor<T> gamma;
  Tensor<T> beta;
  double eps = 1e-5;

  static LayerNormLayer create(ParamStore<T>& store, const std::string& prefix, std::size_t d) {
    LayerNormLayer l;
    l.gamma = store.add(prefix + ".gamma", Tensor<T>({d}, T(1)));
    l.beta = store.add(prefix + ".beta", Tensor<T>({d}));
    return l;
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) const {
    return layer_norm(tape, x, gamma, beta, eps);
  }
};

template <class T>
struct MultiHeadAttentionLayer {
  Tensor<T> wq, wk, wv, wo;  // all [d, d], no biases
  std::size_t heads = 1;

  static MultiHeadAttentionLayer create(ParamStore<T>& store, const std::string& prefix,
                                        std::size_t d, std::size_t heads, Rng& rng) {
    MultiHeadAttentionLayer l;
    l.heads = heads;
    double lim = detail::init_limit(Init::kXavier, d, d);
    for (const char* nm : {"wq", "wk", "wv", "wo"}) {
      Tensor<T> w({d, d});
      detail::init_uniform(w, lim, rng);
      store.add(prefix + "." + nm, std::move(w));
    }
    l.wq = store.get(prefix + ".wq");
    l.wk = store.get(prefix + ".wk");
    l.wv = store.get(prefix + ".wv");
    l.wo = store.get(prefix + ".wo");
    return l;
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) const {
    return multi_head_attention(tape, x, wq, wk, wv, wo, heads);
  }
};

}  // namespace moeamc
