#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "moeamc/gemm.hpp"
#include "moeamc/tape.hpp"
#include "moeamc/tensor.hpp"

namespace moeamc {

enum class Mode { kTrain, kEval };

namespace detail {

template <class T>
bool any_requires() {
  return false;
}

template <class T, class... Rest>
bool any_requires(const Tensor<T>& t, const Rest&... rest) {
  return (t.defined() && t.requires_grad()) || any_requires<T>(rest...);
}

inline Shape batch_dims(const Shape& s) {
  return Shape(s.begin(), s.end() - 2);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul: a [.., m, k] x b [.., k, n] -> [.., m, n]. Batch dims must match,
// or either side may be rank 2 and broadcasts across the other's batch.
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ValidationError("matmul: ranks must be >= 2, got " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()));
  }
  std::size_t m = a.dim(a.rank() - 2), ka = a.dim(a.rank() - 1);
  std::size_t kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  if (ka != kb) {
    throw ValidationError("matmul: inner dims disagree, " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()));
  }
  Shape ba = detail::batch_dims(a.shape()), bb = detail::batch_dims(b.shape());
  bool a_bcast = false, b_bcast = false;
  Shape batch;
  if (ba == bb) {
    batch = ba;
  } else if (bb.empty()) {
    batch = ba;
    b_bcast = true;
  } else if (ba.empty()) {
    batch = bb;
    a_bcast = true;
  } else {
    throw ValidationError("matmul: batch dims not broadcastable, " + shape_str(a.shape()) +
                          " x " + shape_str(b.shape()));
  }
  std::size_t nb = shape_size(batch);
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor<T> out(out_shape);

  std::size_t k = ka;
  const T* ap = a.data();
  const T* bp = b.data();
  T* op = out.data();
  for (std::size_t s = 0; s < nb; ++s) {
    const T* as = ap + (a_bcast ? 0 : s * m * k);
    const T* bs = bp + (b_bcast ? 0 : s * k * n);
    detail::gemm_nn(as, bs, op + s * m * n, m, k, n);
  }
  check_finite(out, "matmul");

  if (tape && detail::any_requires<T>(a, b)) {
    out.set_requires_grad(true);
    tape->record("matmul", [a, b, out, m, k, n, nb, a_bcast, b_bcast]() mutable {
      const T* go = out.grad().data();
      if (a.requires_grad()) {
        T* ga = a.grad().data();
        for (std::size_t s = 0; s < nb; ++s) {
          const T* bs = b.data() + (b_bcast ? 0 : s * k * n);
          detail::gemm_nt(go + s * m * n, bs, ga + (a_bcast ? 0 : s * m * k), m, n, k);
        }
      }
      if (b.requires_grad()) {
        T* gb = b.grad().data();
        for (std::size_t s = 0; s < nb; ++s) {
          const T* as = a.data() + (a_bcast ? 0 : s * m * k);
          detail::gemm_tn(as, go + s * m * n, gb + (b_bcast ? 0 : s * k * n), k, m, n);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv1d: cross-correlation. x [B,Cin,L], w [Cout,Cin,k], bias [Cout].
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> conv1d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad) {
  if (x.rank() != 3 || w.rank() != 3) {
    throw ValidationError("conv1d: want x [B,Cin,L], w [Cout,Cin,k], got " +
                          shape_str(x.shape()) + ", " + shape_str(w.shape()));
  }
  std::size_t batch = x.dim(0), cin = x.dim(1), len = x.dim(2);
  std::size_t cout = w.dim(0), kw = w.dim(2);
  if (w.dim(1) != cin) throw ValidationError("conv1d: channel mismatch");
  if (bias.size() != cout) throw ValidationError("conv1d: bias size mismatch");
  if (stride == 0) throw ValidationError("conv1d: stride must be >= 1");
  if (len + 2 * pad < kw) throw ValidationError("conv1d: kernel larger than padded input");
  std::size_t lout = (len + 2 * pad - kw) / stride + 1;
  std::size_t ck = cin * kw;

  Tensor<T> out({batch, cout, lout});
  // cols: per example [Cin*k, Lout], kept for the weight gradient
  auto cols = std::make_shared<std::vector<T>>(batch * ck * lout, T(0));
  const T* xp = x.data();
  for (std::size_t b = 0; b < batch; ++b) {
    T* cb = cols->data() + b * ck * lout;
    const T* xb = xp + b * cin * len;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (std::size_t kk = 0; kk < kw; ++kk) {
        T* row = cb + (ci * kw + kk) * lout;
        for (std::size_t lo = 0; lo < lout; ++lo) {
          std::ptrdiff_t src = static_cast<std::ptrdiff_t>(lo * stride + kk) -
                               static_cast<std::ptrdiff_t>(pad);
          row[lo] = (src >= 0 && src < static_cast<std::ptrdiff_t>(len))
                        ? xb[ci * len + src]
                        : T(0);
        }
      }
    }
    detail::gemm_nn(w.data(), cb, out.data() + b * cout * lout, cout, ck, lout);
  }
  const T* bp = bias.data();
  T* op = out.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < cout; ++c) {
      T bv = bp[c];
      T* row = op + (b * cout + c) * lout;
      for (std::size_t lo = 0; lo < lout; ++lo) row[lo] += bv;
    }
  }
  check_finite(out, "conv1d");

  if (tape && detail::any_requires<T>(x, w, bias)) {
    out.set_requires_grad(true);
    tape->record("conv1d", [x, w, bias, out, cols, batch, cin, cout, len, lout, kw, ck, stride,
                            pad]() mutable {
      const T* go = out.grad().data();
      if (bias.requires_grad()) {
        T* gb = bias.grad().data();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < cout; ++c) {
            const T* row = go + (b * cout + c) * lout;
            T acc = T(0);
            for (std::size_t lo = 0; lo < lout; ++lo) acc += row[lo];
            gb[c] += acc;
          }
        }
      }
      if (w.requires_grad()) {
        T* gw = w.grad().data();
        for (std::size_t b = 0; b < batch; ++b) {
          detail::gemm_nt(go + b * cout * lout, cols->data() + b * ck * lout, gw, cout, lout, ck);
        }
      }
      if (x.requires_grad()) {
        T* gx = x.grad().data();
        std::vector<T> dcols(ck * lout);
        for (std::size_t b = 0; b < batch; ++b) {
          std::fill(dcols.begin(), dcols.end(), T(0));
          detail::gemm_tn(w.data(), go + b * cout * lout, dcols.data(), ck, cout, lout);
          T* gxb = gx + b * cin * len;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            for (std::size_t kk = 0; kk < kw; ++kk) {
              const T* row = dcols.data() + (ci * kw + kk) * lout;
              for (std::size_t lo = 0; lo < lout; ++lo) {
                std::ptrdiff_t src = static_cast<std::ptrdiff_t>(lo * stride + kk) -
                                     static_cast<std::ptrdiff_t>(pad);
                if (src >= 0 && src < static_cast<std::ptrdiff_t>(len)) {
                  gxb[ci * len + src] += row[lo];
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// batch_norm over [B,C,L]: per-channel stats over (B,L), biased variance.
// Train mode updates running stats in place: r <- (1-momentum)*r + momentum*batch.
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> batch_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, Tensor<T>& running_mean, Tensor<T>& running_var,
                     Mode mode, double momentum, double eps) {
  if (x.rank() != 3) throw ValidationError("batch_norm: want [B,C,L], got " + shape_str(x.shape()));
  std::size_t batch = x.dim(0), ch = x.dim(1), len = x.dim(2);
  if (gamma.size() != ch || beta.size() != ch || running_mean.size() != ch ||
      running_var.size() != ch) {
    throw ValidationError("batch_norm: per-channel parameter size mismatch");
  }
  std::size_t n = batch * len;
  if (mode == Mode::kTrain && n < 2) {
    throw ValidationError("batch_norm: train mode needs B*L >= 2");
  }

  Tensor<T> out(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto inv_std = std::make_shared<std::vector<T>>(ch);

  const T* xp = x.data();
  T* op = out.data();
  T* xh = xhat->data();
  for (std::size_t c = 0; c < ch; ++c) {
    double mu, var;
    if (mode == Mode::kTrain) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* row = xp + (b * ch + c) * len;
        for (std::size_t l = 0; l < len; ++l) s += row[l];
      }
      mu = s / static_cast<double>(n);
      double sq = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* row = xp + (b * ch + c) * len;
        for (std::size_t l = 0; l < len; ++l) {
          double d = row[l] - mu;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(n);
      running_mean[c] = static_cast<T>((1.0 - momentum) * running_mean[c] + momentum * mu);
      running_var[c] = static_cast<T>((1.0 - momentum) * running_var[c] + momentum * var);
    } else {
      mu = running_mean[c];
      var = running_var[c];
    }
    T inv = static_cast<T>(1.0 / std::sqrt(var + eps));
    (*inv_std)[c] = inv;
    T g = gamma[c], be = beta[c], muv = static_cast<T>(mu);
    for (std::size_t b = 0; b < batch; ++b) {
      const T* row = xp + (b * ch + c) * len;
      T* orow = op + (b * ch + c) * len;
      T* hrow = xh + (b * ch + c) * len;
      for (std::size_t l = 0; l < len; ++l) {
        T h = (row[l] - muv) * inv;
        hrow[l] = h;
        orow[l] = g * h + be;
      }
    }
  }
  check_finite(out, "batch_norm");

  if (tape && detail::any_requires<T>(x, gamma, beta)) {
    out.set_requires_grad(true);
    bool train = mode == Mode::kTrain;
    tape->record("batch_norm",
                 [x, gamma, beta, out, xhat, inv_std, batch, ch, len, n, train]() mutable {
      const T* go = out.grad().data();
      const T* xh = xhat->data();
      for (std::size_t c = 0; c < ch; ++c) {
        double sum_dy = 0.0, sum_dy_xh = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
          const T* grow = go + (b * ch + c) * len;
          const T* hrow = xh + (b * ch + c) * len;
          for (std::size_t l = 0; l < len; ++l) {
            sum_dy += grow[l];
            sum_dy_xh += grow[l] * hrow[l];
          }
        }
        if (gamma.requires_grad()) gamma.grad()[c] += static_cast<T>(sum_dy_xh);
        if (beta.requires_grad()) beta.grad()[c] += static_cast<T>(sum_dy);
        if (x.requires_grad()) {
          T* gx = x.grad().data();
          T g = gamma[c], inv = (*inv_std)[c];
          T mean_dy = static_cast<T>(sum_dy / static_cast<double>(n));
          T mean_dy_xh = static_cast<T>(sum_dy_xh / static_cast<double>(n));
          for (std::size_t b = 0; b < batch; ++b) {
            const T* grow = go + (b * ch + c) * len;
            const T* hrow = xh + (b * ch + c) * len;
            T* xrow = gx + (b * ch + c) * len;
            if (train) {
              for (std::size_t l = 0; l < len; ++l) {
                xrow[l] += g * inv * (grow[l] - mean_dy - hrow[l] * mean_dy_xh);
              }
            } else {
              for (std::size_t l = 0; l < len; ++l) xrow[l] += g * inv * grow[l];
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// layer_norm over the last axis of [.., d].
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> layer_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, double eps) {
  if (x.rank() < 1) throw ValidationError("layer_norm: rank must be >= 1");
  std::size_t d = x.dim(x.rank() - 1);
  if (gamma.size() != d || beta.size() != d) {
    throw ValidationError("layer_norm: affine parameter size mismatch");
  }
  std::size_t rows = x.size() / d;

  Tensor<T> out(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto inv_std = std::make_shared<std::vector<T>>(rows);

  const T* xp = x.data();
  T* op = out.data();
  T* xh = xhat->data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xp + r * d;
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += row[j];
    double mu = s / static_cast<double>(d);
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double dv = row[j] - mu;
      sq += dv * dv;
    }
    T inv = static_cast<T>(1.0 / std::sqrt(sq / static_cast<double>(d) + eps));
    (*inv_std)[r] = inv;
    T muv = static_cast<T>(mu);
    for (std::size_t j = 0; j < d; ++j) {
      T h = (row[j] - muv) * inv;
      xh[r * d + j] = h;
      op[r * d + j] = gamma[j] * h + beta[j];
    }
  }
  check_finite(out, "layer_norm");

  if (tape && detail::any_requires<T>(x, gamma, beta)) {
    out.set_requires_grad(true);
    tape->record("layer_norm", [x, gamma, beta, out, xhat, inv_std, rows, d]() mutable {
      const T* go = out.grad().data();
      const T* xh = xhat->data();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* grow = go + r * d;
        const T* hrow = xh + r * d;
        if (gamma.requires_grad() || beta.requires_grad()) {
          for (std::size_t j = 0; j < d; ++j) {
            if (gamma.requires_grad()) gamma.grad()[j] += grow[j] * hrow[j];
            if (beta.requires_grad()) beta.grad()[j] += grow[j];
          }
        }
        if (x.requires_grad()) {
          double sum_g = 0.0, sum_g_xh = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            double gj = static_cast<double>(gamma[j]) * grow[j];
            sum_g += gj;
            sum_g_xh += gj * hrow[j];
          }
          T mean_g = static_cast<T>(sum_g / static_cast<double>(d));
          T mean_g_xh = static_cast<T>(sum_g_xh / static_cast<double>(d));
          T inv = (*inv_std)[r];
          T* xrow = x.grad().data() + r * d;
          for (std::size_t j = 0; j < d; ++j) {
            xrow[j] += inv * (gamma[j] * grow[j] - mean_g - hrow[j] * mean_g_xh);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise and shape ops.
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T* xp = x.data();
  T* op = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) op[i] = xp[i] > T(0) ? xp[i] : T(0);
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    tape->record("relu", [x, out]() mutable {
      const T* go = out.grad().data();
      T* gx = x.grad().data();
      const T* xp = x.data();
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (xp[i] > T(0)) gx[i] += go[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> sigmoid(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T* xp = x.data();
  T* op = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    op[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(xp[i]))));
  }
  check_finite(out, "sigmoid");
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    tape->record("sigmoid", [x, out]() mutable {
      const T* go = out.grad().data();
      const T* yp = out.data();
      T* gx = x.grad().data();
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] += go[i] * yp[i] * (T(1) - yp[i]);
    });
  }
  return out;
}

template <class T>
Tensor<T> softmax(Tape<T>* tape, const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw ValidationError("softmax: axis out of range");
  std::size_t n = x.dim(axis);
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  std::size_t outer = x.size() / (n * inner);

  Tensor<T> out(x.shape());
  const T* xp = x.data();
  T* op = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const T* base = xp + o * n * inner + in;
      T* obase = op + o * n * inner + in;
      T mx = base[0];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, base[j * inner]);
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        double e = std::exp(static_cast<double>(base[j * inner] - mx));
        obase[j * inner] = static_cast<T>(e);
        sum += e;
      }
      T inv = static_cast<T>(1.0 / sum);
      for (std::size_t j = 0; j < n; ++j) obase[j * inner] *= inv;
    }
  }
  check_finite(out, "softmax");

  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    tape->record("softmax", [x, out, outer, n, inner]() mutable {
      const T* go = out.grad().data();
      const T* yp = out.data();
      T* gx = x.grad().data();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          std::size_t off = o * n * inner + in;
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(go[off + j * inner]) * yp[off + j * inner];
          T dotv = static_cast<T>(dot);
          for (std::size_t j = 0; j < n; ++j) {
            gx[off + j * inner] += yp[off + j * inner] * (go[off + j * inner] - dotv);
          }
        }
      }
    });
  }
  return out;
}

// softmax over the last axis
template <class T>
Tensor<T> softmax(Tape<T>* tape, const Tensor<T>& x) {
  return softmax(tape, x, x.rank() - 1);
}

template <class T>
Tensor<T> max_pool1d(Tape<T>* tape, const Tensor<T>& x, std::size_t k, std::size_t stride) {
  if (x.rank() != 3) throw ValidationError("max_pool1d: want [B,C,L]");
  std::size_t batch = x.dim(0), ch = x.dim(1), len = x.dim(2);
  if (k == 0 || stride == 0 || len < k) throw ValidationError("max_pool1d: invalid geometry");
  std::size_t lout = (len - k) / stride + 1;

  Tensor<T> out({batch, ch, lout});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
  const T* xp = x.data();
  T* op = out.data();
  for (std::size_t bc = 0; bc < batch * ch; ++bc) {
    const T* row = xp + bc * len;
    T* orow = op + bc * lout;
    std::uint32_t* arow = argmax->data() + bc * lout;
    for (std::size_t lo = 0; lo < lout; ++lo) {
      std::size_t start = lo * stride;
      std::size_t best = start;
      T bv = row[start];
      for (std::size_t j = 1; j < k; ++j) {
        if (row[start + j] > bv) {  // ties keep the first position
          bv = row[start + j];
          best = start + j;
        }
      }
      orow[lo] = bv;
      arow[lo] = static_cast<std::uint32_t>(best);
    }
  }

  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    tape->record("max_pool1d", [x, out, argmax, batch, ch, len, lout]() mutable {
      const T* go = out.grad().data();
      T* gx = x.grad().data();
      for (std::size_t bc = 0; bc < batch * ch; ++bc) {
        const std::uint32_t* arow = argmax->data() + bc * lout;
        const T* grow = go + bc * lout;
        T* xrow = gx + bc * len;
        for (std::size_t lo = 0; lo < lout; ++lo) xrow[arow[lo]] += grow[lo];
      }
    });
  }
  return out;
}

// mean over the time axis: [B,T,D] -> [B,D]
template <class T>
Tensor<T> global_avg_pool(Tape<T>* tape, const Tensor<T>& x) {
  if (x.rank() != 3) throw ValidationError("global_avg_pool: want [B,T,D]");
  std::size_t batch = x.dim(0), steps = x.dim(1), d = x.dim(2);
  Tensor<T> out({batch, d});
  const T* xp = x.data();
  T* op = out.data();
  T inv = static_cast<T>(1.0 / static_cast<double>(steps));
  for (std::size_t b = 0; b < batch; ++b) {
    T* orow = op + b * d;
    for (std::size_t t = 0; t < steps; ++t) {
      const T* row = xp + (b * steps + t) * d;
      for (std::size_t j = 0; j < d; ++j) orow[j] += row[j];
    }
    for (std::size_t j = 0; j < d; ++j) orow[j] *= inv;
  }
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    tape->record("global_avg_pool", [x, out, batch, steps, d, inv]() mutable {
      const T* go = out.grad().data();
      T* gx = x.grad().data();
      for (std::size_t b = 0; b < batch; ++b) {
        const T* grow = go + b * d;
        for (std::size_t t = 0; t < steps; ++t) {
          T* xrow = gx + (b * steps + t) * d;
          for (std::size_t j = 0; j < d; ++j) xrow[j] += grow[j] * inv;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// cross_entropy over probabilities: mean over batch of -ln(max(p[label], eps)).
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> cross_entropy(Tape<T>* tape, const Tensor<T>& probs,
                        const std::vector<std::size_t>& labels, double eps_clamp = 1e-12) {
  if (probs.rank() != 2) throw ValidationError("cross_entropy: want probs [B,K]");
  std::size_t batch = probs.dim(0), k = probs.dim(1);
  if (labels.size() != batch) throw ValidationError("cross_entropy: labels size mismatch");
  const T* pp = probs.data();
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] >= k) {
      throw ValidationError("cross_entropy: label " + std::to_string(labels[b]) +
                            " out of range for K=" + std::to_string(k));
    }
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += pp[b * k + j];
    if (std::abs(s - 1.0) > 1e-4) {
      throw ValidationError("cross_entropy: probability row " + std::to_string(b) +
                            " sums to " + std::to_string(s));
    }
  }
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    double p = std::max(static_cast<double>(pp[b * k + labels[b]]), eps_clamp);
    loss -= std::log(p);
  }
  loss /= static_cast<double>(batch);
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(loss));
  check_finite(out, "cross_entropy");

  if (tape && probs.requires_grad()) {
    out.set_requires_grad(true);
    auto labels_copy = std::make_shared<std::vector<std::size_t>>(labels);
    tape->record("cross_entropy", [probs, out, labels_copy, batch, k, eps_clamp]() mutable {
      T g = out.grad()[0];
      T* gp = probs.grad().data();
      const T* pp = probs.data();
      for (std::size_t b = 0; b < batch; ++b) {
        double p = pp[b * k + (*labels_copy)[b]];
        if (p > eps_clamp) {
          gp[b * k + (*labels_copy)[b]] -=
              g / (static_cast<T>(batch) * static_cast<T>(p));
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ValidationError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  }
  Tensor<T> out(a.shape());
  const T* ap = a.data();
  const T* bp = b.data();
  T* op = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) op[i] = ap[i] + bp[i];
  if (tape && detail::any_requires<T>(a, b)) {
    out.set_requires_grad(true);
    tape->record("add", [a, b, out]() mutable {
      const T* go = out.grad().data();
      if (a.requires_grad()) {
        T* ga = a.grad().data();
        for (std::size_t i = 0; i < a.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        T* gb = b.grad().data();
        for (std::size_t i = 0; i < b.size(); ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ValidationError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  }
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  if (tape && detail::any_requires<T>(a, b)) {
    out.set_requires_grad(true);
    tape->record("mul", [a, b, out]() mutable {
      const T* go = out.grad().data();
      if (a.requires_grad()) {
        T* ga = a.grad().data();
        const T* bp = b.data();
        for (std::size_t i = 0; i < a.size(); ++i) ga[i] += go[i] * bp[i];
      }
      if (b.requires_grad()) {
        T* gb = b.grad().data();
        const T* ap = a.data();
        for (std::size_t i = 0; i < b.size(); ++i) gb[i] += go[i] * ap[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& x, double c) {
  Tensor<T> out(x.shape());
  T cv = static_cast<T>(c);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * cv;
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    tape->record("scale", [x, out, cv]() mutable {
      const T* go = out.grad().data();
      T* gx = x.grad().data();
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] += go[i] * cv;
    });
  }
  return out;
}

template <class T>
Tensor<T> one_minus(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = T(1) - x[i];
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    tape->record("one_minus", [x, out]() mutable {
      const T* go = out.grad().data();
      T* gx = x.grad().data();
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] -= go[i];
    });
  }
  return out;
}

// out[b,k] = probs[b,k] * gate[b]
template <class T>
Tensor<T> mul_gate(Tape<T>* tape, const Tensor<T>& probs, const Tensor<T>& gate) {
  if (probs.rank() != 2 || gate.rank() != 1 || probs.dim(0) != gate.dim(0)) {
    throw ValidationError("mul_gate: want probs [B,K] and gate [B]");
  }
  std::size_t batch = probs.dim(0), k = probs.dim(1);
  Tensor<T> out(probs.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    T gv = gate[b];
    for (std::size_t j = 0; j < k; ++j) out[b * k + j] = probs[b * k + j] * gv;
  }
  if (tape && detail::any_requires<T>(probs, gate)) {
    out.set_requires_grad(true);
    tape->record("mul_gate", [probs, gate, out, batch, k]() mutable {
      const T* go = out.grad().data();
      if (probs.requires_grad()) {
        T* gp = probs.grad().data();
        for (std::size_t b = 0; b < batch; ++b) {
          T gv = gate[b];
          for (std::size_t j = 0; j < k; ++j) gp[b * k + j] += go[b * k + j] * gv;
        }
      }
      if (gate.requires_grad()) {
        T* gg = gate.grad().data();
        const T* pp = probs.data();
        for (std::size_t b = 0; b < batch; ++b) {
          T acc = T(0);
          for (std::size_t j = 0; j < k; ++j) acc += go[b * k + j] * pp[b * k + j];
          gg[b] += acc;
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> reshape(Tape<T>* tape, const Tensor<T>& x, Shape new_shape) {
  if (shape_size(new_shape) != x.size()) {
    throw ValidationError("reshape: size mismatch, " + shape_str(x.shape()) + " -> " +
                          shape_str(new_shape));
  }
  Tensor<T> out = Tensor<T>::from(std::move(new_shape), x.values());
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    tape->record("reshape", [x, out]() mutable {
      const T* go = out.grad().data();
      T* gx = x.grad().data();
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] += go[i];
    });
  }
  return out;
}

namespace detail {

inline std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

}  // namespace detail

// General axis permutation: out dims are x dims reordered by perm.
template <class T>
Tensor<T> permute(Tape<T>* tape, const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  std::size_t r = x.rank();
  if (perm.size() != r) throw ValidationError("permute: perm rank mismatch");
  std::vector<bool> seen(r, false);
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (perm[i] >= r || seen[perm[i]]) throw ValidationError("permute: invalid permutation");
    seen[perm[i]] = true;
    out_shape[i] = x.dim(perm[i]);
  }
  Tensor<T> out(out_shape);
  auto in_strides = detail::strides_of(x.shape());
  auto out_strides = detail::strides_of(out_shape);
  // walk the output linearly; gather from the permuted source stride
  std::vector<std::size_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) src_stride[i] = in_strides[perm[i]];
  const T* xp = x.data();
  T* op = out.data();
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < out.size(); ++o) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += idx[i] * src_stride[i];
    op[o] = xp[src];
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    auto ss = std::make_shared<std::vector<std::size_t>>(src_stride);
    auto os = std::make_shared<Shape>(out_shape);
    tape->record("permute", [x, out, ss, os, r]() mutable {
      const T* go = out.grad().data();
      T* gx = x.grad().data();
      std::vector<std::size_t> idx(r, 0);
      for (std::size_t o = 0; o < out.size(); ++o) {
        std::size_t src = 0;
        for (std::size_t i = 0; i < r; ++i) src += idx[i] * (*ss)[i];
        gx[src] += go[o];
        for (std::size_t i = r; i-- > 0;) {
          if (++idx[i] < (*os)[i]) break;
          idx[i] = 0;
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> transpose_last2(Tape<T>* tape, const Tensor<T>& x) {
  if (x.rank() < 2) throw ValidationError("transpose_last2: rank must be >= 2");
  std::vector<std::size_t> perm(x.rank());
  for (std::size_t i = 0; i < x.rank(); ++i) perm[i] = i;
  std::swap(perm[x.rank() - 2], perm[x.rank() - 1]);
  return permute(tape, x, perm);
}

// [B,C,L] -> [B, L/patch, C*patch]; token t carries channel-major samples
// [c0 s0..s(p-1), c1 s0..s(p-1)].
template <class T>
Tensor<T> patchify(Tape<T>* tape, const Tensor<T>& x, std::size_t patch) {
  if (x.rank() != 3) throw ValidationError("patchify: want [B,C,L]");
  std::size_t batch = x.dim(0), ch = x.dim(1), len = x.dim(2);
  if (patch == 0 || len % patch != 0) {
    throw ValidationError("patchify: length " + std::to_string(len) +
                          " not divisible by patch " + std::to_string(patch));
  }
  std::size_t steps = len / patch;
  Tensor<T> out({batch, steps, ch * patch});
  const T* xp = x.data();
  T* op = out.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      T* orow = op + (b * steps + t) * ch * patch;
      for (std::size_t c = 0; c < ch; ++c) {
        const T* src = xp + (b * ch + c) * len + t * patch;
        for (std::size_t s = 0; s < patch; ++s) orow[c * patch + s] = src[s];
      }
    }
  }
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    tape->record("patchify", [x, out, batch, ch, len, steps, patch]() mutable {
      const T* go = out.grad().data();
      T* gx = x.grad().data();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < steps; ++t) {
          const T* grow = go + (b * steps + t) * ch * patch;
          for (std::size_t c = 0; c < ch; ++c) {
            T* dst = gx + (b * ch + c) * len + t * patch;
            for (std::size_t s = 0; s < patch; ++s) dst[s] += grow[c * patch + s];
          }
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> sum_all(Tape<T>* tape, const Tensor<T>& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s));
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    tape->record("sum_all", [x, out]() mutable {
      T g = out.grad()[0];
      T* gx = x.grad().data();
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

// x [B,in] * w [in,out] + bias [out]
template <class T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0)) {
    throw ValidationError("linear: want x [B,in] and w [in,out], got " + shape_str(x.shape()) +
                          ", " + shape_str(w.shape()));
  }
  std::size_t batch = x.dim(0), in = x.dim(1), outd = w.dim(1);
  if (bias.size() != outd) throw ValidationError("linear: bias size mismatch");
  Tensor<T> out({batch, outd});
  detail::gemm_nn(x.data(), w.data(), out.data(), batch, in, outd);
  T* op = out.data();
  const T* bp = bias.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < outd; ++j) op[b * outd + j] += bp[j];
  }
  check_finite(out, "linear");
  if (tape && detail::any_requires<T>(x, w, bias)) {
    out.set_requires_grad(true);
    tape->record("linear", [x, w, bias, out, batch, in, outd]() mutable {
      const T* go = out.grad().data();
      if (x.requires_grad()) {
        detail::gemm_nt(go, w.data(), x.grad().data(), batch, outd, in);
      }
      if (w.requires_grad()) {
        detail::gemm_tn(x.data(), go, w.grad().data(), in, batch, outd);
      }
      if (bias.requires_grad()) {
        T* gb = bias.grad().data();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t j = 0; j < outd; ++j) gb[j] += go[b * outd + j];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// attention: softmax(Q K^T / sqrt(d_k)) V, softmax over the key axis.
// Composite of primitive ops, so the backward pass comes from the tape.
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> attention(Tape<T>* tape, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  if (q.rank() < 2 || k.rank() < 2 || v.rank() < 2) {
    throw ValidationError("attention: ranks must be >= 2");
  }
  std::size_t dk_q = q.dim(q.rank() - 1);
  std::size_t dk_k = k.dim(k.rank() - 1);
  std::size_t nk_k = k.dim(k.rank() - 2);
  std::size_t nk_v = v.dim(v.rank() - 2);
  if (dk_q != dk_k) throw ValidationError("attention: Q and K key dims disagree");
  if (nk_k != nk_v) throw ValidationError("attention: K and V key counts disagree");
  Tensor<T> kt = transpose_last2(tape, k);
  Tensor<T> scores = matmul(tape, q, kt);
  Tensor<T> scaled = scale(tape, scores, 1.0 / std::sqrt(static_cast<double>(dk_q)));
  Tensor<T> weights = softmax(tape, scaled);
  return matmul(tape, weights, v);
}

// Self-attention with h heads over x [B,T,D]; projections are [D,D].
template <class T>
Tensor<T> multi_head_attention(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& wq,
                               const Tensor<T>& wk, const Tensor<T>& wv, const Tensor<T>& wo,
                               std::size_t heads) {
  if (x.rank() != 3) throw ValidationError("multi_head_attention: want x [B,T,D]");
  std::size_t batch = x.dim(0), steps = x.dim(1), d = x.dim(2);
  if (heads == 0 || d % heads != 0) {
    throw ValidationError("multi_head_attention: d_model " + std::to_string(d) +
                          " not divisible by heads " + std::to_string(heads));
  }
  std::size_t dh = d / heads;
  auto split = [&](const Tensor<T>& proj) {
    Tensor<T> r = reshape(tape, proj, {batch, steps, heads, dh});
    return permute(tape, r, {0, 2, 1, 3});  // [B,h,T,dh]
  };
  Tensor<T> q = split(matmul(tape, x, wq));
  Tensor<T> k = split(matmul(tape, x, wk));
  Tensor<T> v = split(matmul(tape, x, wv));
  Tensor<T> heads_out = attention(tape, q, k, v);           // [B,h,T,dh]
  Tensor<T> merged = permute(tape, heads_out, {0, 2, 1, 3});  // [B,T,h,dh]
  Tensor<T> flat = reshape(tape, merged, {batch, steps, d});
  return matmul(tape, flat, wo);
}

}  // namespace moeamc
