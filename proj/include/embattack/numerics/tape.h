#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "embattack/numerics/tensor.h"

namespace embattack::numerics {

// Define-by-run record of primitive operations.
//
// Ops append a node only when at least one input requires grad, so a forward
// pass over frozen weights and constant inputs leaves the tape empty. Nodes
// are appended in evaluation order, which is a topological order of the graph.
// A tape is not thread-safe; each concurrent computation owns its own.
class Tape {
 public:
  // Reads output's gradient and accumulates into the inputs' gradients.
  using BackwardFn = std::function<void()>;

  void record(std::vector<Tensor> inputs, Tensor output, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and replays nodes in reverse, each once.
  // Throws ArgumentError if loss is not a single-element tensor.
  void backward(Tensor loss);

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
};

}  // namespace embattack::numerics
