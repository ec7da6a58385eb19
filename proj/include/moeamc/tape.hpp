#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "moeamc/tensor.hpp"

namespace moeamc {

// Reverse-mode tape. Forward ops append one record per op in execution order
// (which is a topological order by construction); backward() replays the
// records in reverse, so each node is visited exactly once.
//
// A tape describes one forward graph. Parameter gradients accumulate
// additively across backward() calls on successive tapes until zeroed by the
// caller; intermediate tensors belong to a single tape and are dropped with it.
template <class T>
class Tape {
 public:
  struct Node {
    const char* op;
    std::function<void()> backward;
  };

  void record(const char* op, std::function<void()> backward) {
    nodes_.push_back(Node{op, std::move(backward)});
  }

  std::size_t size() const { return nodes_.size(); }

  const char* op_name(std::size_t i) const { return nodes_[i].op; }

  void backward(Tensor<T>& loss) {
    if (loss.size() != 1) {
      throw ValidationError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    auto& g = loss.grad();
    g.assign(g.size(), T(1));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      it->backward();
    }
  }

  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

}  // namespace moeamc
