#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "moeamc/models.hpp"

namespace moeamc {

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t max_epochs = 100;
  std::size_t patience = 30;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  ModelKind model_kind = ModelKind::kMoe;

  void validate() const {
    if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
    if (max_epochs > 0 && (patience < 1 || patience > max_epochs)) {
      throw ValidationError("train config: need 1 <= patience <= max_epochs");
    }
    if (!(lr > 0.0)) throw ValidationError("train config: lr must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ValidationError("train config: betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ValidationError("train config: adam_eps must be positive");
  }
};

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.lr = j.value("lr", c.lr);
  if (j.contains("adam_betas")) {
    c.beta1 = j["adam_betas"].at(0).get<double>();
    c.beta2 = j["adam_betas"].at(1).get<double>();
  }
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.seed = j.value("seed", c.seed);
  if (j.contains("model_kind")) {
    c.model_kind = model_kind_from_name(j["model_kind"].get<std::string>());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Adam. The raw-array form is the unit under test; the store form drives it
// across every trainable entry. Arithmetic in double, state kept in T.
// ---------------------------------------------------------------------------
template <class T>
void adam_step(std::vector<T>& params, const std::vector<T>& grads, std::vector<T>& m,
               std::vector<T>& v, std::uint64_t t, double lr, double beta1, double beta2,
               double eps) {
  if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size()) {
    throw ValidationError("adam_step: state size mismatch");
  }
  if (t < 1) throw ValidationError("adam_step: step index must be >= 1");
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double g = grads[i];
    double mi = beta1 * m[i] + (1.0 - beta1) * g;
    double vi = beta2 * v[i] + (1.0 - beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    double mh = mi / bc1;
    double vh = vi / bc2;
    params[i] = static_cast<T>(params[i] - lr * mh / (std::sqrt(vh) + eps));
  }
}

template <class T>
struct AdamState {
  std::vector<std::vector<T>> m, v;  // parallel to store entries, empty slots for frozen ones
  std::uint64_t t = 0;

  static AdamState init(const ParamStore<T>& store) {
    AdamState s;
    s.m.resize(store.size());
    s.v.resize(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
      if (store.entries()[i].trainable) {
        s.m[i].assign(store.entries()[i].tensor.size(), T(0));
        s.v[i].assign(store.entries()[i].tensor.size(), T(0));
      }
    }
    return s;
  }
};

template <class T>
void adam_step(ParamStore<T>& store, AdamState<T>& state, const TrainConfig& cfg) {
  if (state.m.size() != store.size()) throw ValidationError("adam_step: state/store mismatch");
  ++state.t;
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& e = store.entries()[i];
    if (!e.trainable) continue;
    adam_step(e.tensor.values(), e.tensor.grad(), state.m[i], state.v[i], state.t, cfg.lr,
              cfg.beta1, cfg.beta2, cfg.adam_eps);
  }
}

// ---------------------------------------------------------------------------
// Early stopping on validation loss: strict improvement resets the counter,
// the first epoch attaining the best loss is the restore point, and training
// stops once `patience` consecutive epochs fail to improve.
// ---------------------------------------------------------------------------
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  // Feed one epoch's validation loss; true when it strictly improved.
  bool observe(double val_loss) {
    std::size_t epoch = n_++;
    if (val_loss < best_loss_) {
      best_loss_ = val_loss;
      best_epoch_ = epoch;
      wait_ = 0;
      return true;
    }
    ++wait_;
    return false;
  }

  bool should_stop() const { return patience_ > 0 && wait_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }
  std::size_t epochs_seen() const { return n_; }

 private:
  std::size_t patience_;
  double best_loss_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t wait_ = 0;
  std::size_t n_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> records;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

namespace detail {

// Preprocessed dataset: one flat [N, 2, L] value array plus labels. SNR
// labels deliberately do not survive this conversion; the trainer never
// sees them.
template <class T>
struct Prepared {
  std::vector<T> x;
  std::vector<std::size_t> labels;
  std::size_t n = 0;
  std::size_t len = 0;
};

template <class T>
Prepared<T> prepare(const Dataset& ds, std::size_t input_len, std::size_t n_classes) {
  if (ds.examples.empty()) throw ValidationError("trainer: empty dataset");
  Prepared<T> p;
  p.n = ds.examples.size();
  p.len = input_len;
  p.x.resize(p.n * 2 * input_len);
  p.labels.resize(p.n);
  for (std::size_t i = 0; i < p.n; ++i) {
    const auto& ex = ds.examples[i];
    if (ex.class_idx >= n_classes) {
      throw ValidationError("trainer: class index " + std::to_string(ex.class_idx) +
                            " out of range for n_classes " + std::to_string(n_classes));
    }
    Tensor<T> f = preprocess<T>(ex.frame, input_len);
    std::copy(f.data(), f.data() + 2 * input_len, p.x.begin() + i * 2 * input_len);
    p.labels[i] = ex.class_idx;
  }
  return p;
}

template <class T>
Tensor<T> gather_batch(const Prepared<T>& p, const std::vector<std::size_t>& order,
                       std::size_t begin, std::size_t count, std::vector<std::size_t>& labels) {
  std::vector<T> buf(count * 2 * p.len);
  labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t src = order[begin + i];
    std::copy(p.x.begin() + src * 2 * p.len, p.x.begin() + (src + 1) * 2 * p.len,
              buf.begin() + i * 2 * p.len);
    labels[i] = p.labels[src];
  }
  return Tensor<T>::from({count, 2, p.len}, std::move(buf));
}

// Mean loss and accuracy over a prepared set, eval mode, no autodiff.
template <class T>
std::pair<double, double> eval_pass(Model<T>& model, const Prepared<T>& p,
                                    std::size_t batch_size) {
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> order(p.n);
  for (std::size_t i = 0; i < p.n; ++i) order[i] = i;
  for (std::size_t b = 0; b < p.n; b += batch_size) {
    std::size_t count = std::min(batch_size, p.n - b);
    Tensor<T> x = gather_batch(p, order, b, count, labels);
    ModelOutput<T> out = model.forward(nullptr, x, Mode::kEval);
    loss_sum += cross_entropy<T>(nullptr, out.probs, labels).item() * static_cast<double>(count);
    auto preds = classify(out.probs);
    for (std::size_t i = 0; i < count; ++i) {
      if (preds[i] == labels[i]) ++correct;
    }
  }
  return {loss_sum / static_cast<double>(p.n),
          static_cast<double>(correct) / static_cast<double>(p.n)};
}

}  // namespace detail

// Trains in place; on return the model holds the best-validation-loss
// parameters. Mini-batch order reshuffles each epoch from (seed, epoch).
template <class T>
TrainHistory train(Model<T>& model, const Dataset& train_ds, const Dataset& val_ds,
                   const TrainConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  TrainHistory history;
  if (cfg.max_epochs == 0) return history;

  detail::Prepared<T> tr = detail::prepare<T>(train_ds, model.input_len, model.n_classes);
  detail::Prepared<T> va = detail::prepare<T>(val_ds, model.input_len, model.n_classes);

  AdamState<T> adam = AdamState<T>::init(model.store);
  EarlyStopper stopper(cfg.patience);
  std::vector<std::vector<T>> best = model.store.snapshot();

  std::vector<std::size_t> order(tr.n);
  for (std::size_t i = 0; i < tr.n; ++i) order[i] = i;
  std::vector<std::size_t> labels;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(cfg.seed, epoch));
    shuffle(order, shuffle_rng);

    double loss_sum = 0.0;
    for (std::size_t b = 0; b < tr.n; b += cfg.batch_size) {
      std::size_t count = std::min(cfg.batch_size, tr.n - b);
      Tensor<T> x = detail::gather_batch(tr, order, b, count, labels);
      Tape<T> tape;
      ModelOutput<T> out = model.forward(&tape, x, Mode::kTrain);
      Tensor<T> loss = cross_entropy(&tape, out.probs, labels);
      loss_sum += loss.item() * static_cast<double>(count);
      model.store.zero_grad();
      tape.backward(loss);
      adam_step(model.store, adam, cfg);
    }

    auto [val_loss, val_acc] = detail::eval_pass(model, va, cfg.batch_size);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(tr.n), val_loss, val_acc};
    history.records.push_back(rec);
    if (log) {
      char line[160];
      std::snprintf(line, sizeof(line), "epoch %zu train_loss %.6f val_loss %.6f val_acc %.4f",
                    rec.epoch, rec.train_loss, rec.val_loss, rec.val_acc);
      (*log) << line << "\n";
    }

    if (stopper.observe(val_loss)) best = model.store.snapshot();
    if (stopper.should_stop()) {
      history.stopped_early = true;
      break;
    }
  }

  model.store.restore(best);
  history.best_epoch = stopper.best_epoch();
  return history;
}

struct EvalResult {
  double accuracy = 0.0;
  std::vector<std::size_t> predictions;
  std::vector<double> gate;  // per-example mixing weights; empty unless MoE
};

template <class T>
EvalResult evaluate(Model<T>& model, const Dataset& ds, std::size_t batch_size = 256) {
  detail::Prepared<T> p = detail::prepare<T>(ds, model.input_len, model.n_classes);
  EvalResult res;
  res.predictions.reserve(p.n);
  if (model.kind == ModelKind::kMoe) res.gate.reserve(p.n);
  std::size_t correct = 0;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> order(p.n);
  for (std::size_t i = 0; i < p.n; ++i) order[i] = i;
  for (std::size_t b = 0; b < p.n; b += batch_size) {
    std::size_t count = std::min(batch_size, p.n - b);
    Tensor<T> x = detail::gather_batch(p, order, b, count, labels);
    ModelOutput<T> out = model.forward(nullptr, x, Mode::kEval);
    auto preds = classify(out.probs);
    for (std::size_t i = 0; i < count; ++i) {
      res.predictions.push_back(preds[i]);
      if (preds[i] == labels[i]) ++correct;
    }
    if (model.kind == ModelKind::kMoe) {
      for (std::size_t i = 0; i < count; ++i) res.gate.push_back(out.gate[i]);
    }
  }
  res.accuracy = static_cast<double>(correct) / static_cast<double>(p.n);
  return res;
}

}  // namespace moeamc
