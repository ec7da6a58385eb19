#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "moeamc/errors.hpp"
#include "moeamc/tensor.hpp"

namespace moeamc {

// Named parameter registry for a model. Keeps insertion order so that
// optimizer state, checkpoints, and reruns all see the same sequence.
// Non-trainable entries hold state like normalization running statistics:
// they are saved and restored but take no gradient and no optimizer step.
template <class T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
    bool trainable = true;
  };

  Tensor<T>& add(const std::string& name, Tensor<T> t, bool trainable = true) {
    if (index_.count(name)) throw ValidationError("ParamStore: duplicate name " + name);
    t.set_requires_grad(trainable);
    index_[name] = entries_.size();
    entries_.push_back({name, std::move(t), trainable});
    return entries_.back().tensor;
  }

  Tensor<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("ParamStore: unknown name " + name);
    return entries_[it->second].tensor;
  }

  const Tensor<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("ParamStore: unknown name " + name);
    return entries_[it->second].tensor;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const { return entries_.size(); }
  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  std::size_t trainable_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
      if (e.trainable) n += e.tensor.size();
    }
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) {
      if (e.trainable) e.tensor.zero_grad();
    }
  }

  // Deep copy of all values (trainable or not), in entry order.
  std::vector<std::vector<T>> snapshot() const {
    std::vector<std::vector<T>> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.tensor.values());
    return out;
  }

  void restore(const std::vector<std::vector<T>>& snap) {
    if (snap.size() != entries_.size()) throw ValidationError("ParamStore: snapshot size mismatch");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (snap[i].size() != entries_[i].tensor.size()) {
        throw ValidationError("ParamStore: snapshot shape mismatch at " + entries_[i].name);
      }
      entries_[i].tensor.values() = snap[i];
    }
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace moeamc
