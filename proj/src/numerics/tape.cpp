#include "embattack/numerics/tape.h"

#include "embattack/numerics/errors.h"

namespace embattack::numerics {

void Tape::record(std::vector<Tensor> inputs, Tensor output, BackwardFn backward) {
  nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(Tensor loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ArgumentError("backward() requires a scalar loss");
  }
  if (!loss.requires_grad()) return;
  loss.mutable_grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    for (Tensor& input : it->inputs) {
      if (input.requires_grad()) input.mutable_grad();
    }
    it->backward();
  }
}

}  // namespace embattack::numerics
