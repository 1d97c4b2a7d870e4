#include <functional>
#include <map>
#include <random>

#include "embattack/attack/attack.h"
#include "embattack/harness/run.h"
#include "embattack/model/params.h"
#include "embattack/numerics/gradcheck.h"
#include "embattack/numerics/ops.h"

namespace embattack::harness {
namespace {

using numerics::Shape;
using numerics::Tape;
using numerics::Tensor;

constexpr std::size_t kCoordinates = 10;
constexpr double kStep = 1e-5;

using Build = std::function<Tensor(Tape&, const Tensor&)>;

class Suite {
 public:
  Suite(double tolerance, std::uint64_t seed) : tolerance_(tolerance), seed_(seed) {}

  Tensor random(Shape shape, double scale = 1.0, double offset = 0.0) {
    std::mt19937_64 rng(seed_ + counter_++);
    std::normal_distribution<double> normal(0.0, scale);
    std::vector<double> data(numerics::shape_numel(shape));
    for (double& v : data) v = offset + normal(rng);
    return Tensor(std::move(shape), std::move(data));
  }

  // Projects onto a fixed random direction so the scalar has a generic
  // gradient.
  Tensor project(Tape& tape, const Tensor& y) {
    auto it = directions_.find(y.numel());
    if (it == directions_.end()) it = directions_.emplace(y.numel(), random({y.numel()})).first;
    const Tensor direction(y.shape(), std::vector<double>(it->second.data().begin(),
                                                         it->second.data().end()));
    return numerics::sum(tape, numerics::mul(tape, y, direction));
  }

  void check(std::string name, const Tensor& x0, const Build& build) {
    Tensor x = x0.clone(true);
    Tape tape;
    tape.backward(build(tape, x));
    const auto coords = numerics::sample_coordinates(x.numel(), kCoordinates, seed_);
    std::vector<double> analytic;
    analytic.reserve(coords.size());
    for (std::size_t i : coords) analytic.push_back(x.grad()[i]);
    auto f = [&](const Tensor& probe) {
      Tape scratch;
      return build(scratch, probe).item();
    };
    const double error = numerics::relative_error(
        analytic, numerics::finite_difference_gradient(f, x0, kStep, coords));
    results_.push_back({std::move(name), error, error < tolerance_});
  }

  std::vector<GradCheckResult> take() { return std::move(results_); }

 private:
  double tolerance_;
  std::uint64_t seed_;
  std::uint64_t counter_ = 1;
  std::map<std::size_t, Tensor> directions_;
  std::vector<GradCheckResult> results_;
};

void check_primitives(Suite& s) {
  namespace ops = numerics;
  const Tensor a = s.random({3, 4});
  const Tensor b = s.random({3, 4});
  const Tensor row = s.random({4});
  // Denominators and max operands kept away from zero and from ties.
  const Tensor positive = s.random({3, 4}, 0.2, 2.0);
  const Tensor shifted = s.random({3, 4}, 0.2, 3.0);

  s.check("add", a, [&](Tape& t, const Tensor& x) { return s.project(t, ops::add(t, x, b)); });
  s.check("add_broadcast_row", row,
          [&](Tape& t, const Tensor& x) { return s.project(t, ops::add(t, a, x)); });
  s.check("sub", b, [&](Tape& t, const Tensor& x) { return s.project(t, ops::sub(t, a, x)); });
  s.check("mul", a, [&](Tape& t, const Tensor& x) { return s.project(t, ops::mul(t, x, b)); });
  s.check("div_numerator", a,
          [&](Tape& t, const Tensor& x) { return s.project(t, ops::div(t, x, positive)); });
  s.check("div_denominator", positive,
          [&](Tape& t, const Tensor& x) { return s.project(t, ops::div(t, a, x)); });
  s.check("maximum", shifted,
          [&](Tape& t, const Tensor& x) { return s.project(t, ops::maximum(t, x, a)); });
  s.check("scalar_mul", a, [&](Tape& t, const Tensor& x) {
    return s.project(t, ops::elementwise(t, x, 1.7, ops::Elementwise::kMul));
  });

  const Tensor m = s.random({3, 5});
  const Tensor n = s.random({5, 2});
  s.check("matmul_lhs", m, [&](Tape& t, const Tensor& x) { return s.project(t, ops::matmul(t, x, n)); });
  s.check("matmul_rhs", n, [&](Tape& t, const Tensor& x) { return s.project(t, ops::matmul(t, m, x)); });

  const Tensor bias = s.random({2});
  s.check("linear_input", m,
          [&](Tape& t, const Tensor& x) { return s.project(t, ops::linear(t, x, n, bias)); });
  s.check("linear_weight", n,
          [&](Tape& t, const Tensor& x) { return s.project(t, ops::linear(t, m, x, bias)); });
  s.check("linear_bias", bias,
          [&](Tape& t, const Tensor& x) { return s.project(t, ops::linear(t, m, n, x)); });

  s.check("softmax_rows", a, [&](Tape& t, const Tensor& x) { return s.project(t, ops::softmax(t, x, 1)); });
  s.check("softmax_columns", a,
          [&](Tape& t, const Tensor& x) { return s.project(t, ops::softmax(t, x, 0)); });

  const Tensor gain = s.random({4}, 0.5, 1.0);
  s.check("layer_norm_input", a, [&](Tape& t, const Tensor& x) {
    return s.project(t, ops::layer_norm(t, x, gain, row));
  });
  s.check("layer_norm_gain", gain, [&](Tape& t, const Tensor& x) {
    return s.project(t, ops::layer_norm(t, a, x, row));
  });
  s.check("layer_norm_bias", row, [&](Tape& t, const Tensor& x) {
    return s.project(t, ops::layer_norm(t, a, gain, x));
  });

  s.check("gelu", s.random({3, 5}, 2.0), [&](Tape& t, const Tensor& x) { return s.project(t, ops::gelu(t, x)); });

  const std::vector<int> ids{2, 0, 2, 4};
  s.check("embedding_rows", s.random({5, 3}), [&](Tape& t, const Tensor& x) {
    return s.project(t, ops::embedding_rows(t, x, ids));
  });
  const Tensor fixed = s.random({2, 4});
  s.check("concat_rows", a, [&](Tape& t, const Tensor& x) {
    const std::vector<Tensor> parts{fixed, x, fixed};
    return s.project(t, ops::concat_rows(t, parts));
  });

  const Tensor q = s.random({5, 4});
  const Tensor k = s.random({5, 4});
  const Tensor v = s.random({5, 4});
  s.check("attention_query", q, [&](Tape& t, const Tensor& x) {
    return s.project(t, ops::causal_attention(t, x, k, v, 2));
  });
  s.check("attention_key", k, [&](Tape& t, const Tensor& x) {
    return s.project(t, ops::causal_attention(t, q, x, v, 2));
  });
  s.check("attention_value", v, [&](Tape& t, const Tensor& x) {
    return s.project(t, ops::causal_attention(t, q, k, x, 2));
  });

  const std::vector<int> targets{1, 0, 3};
  s.check("cross_entropy", a, [&](Tape& t, const Tensor& x) { return ops::cross_entropy(t, x, targets); });
  s.check("sum", a, [&](Tape& t, const Tensor& x) { return s.project(t, ops::sum(t, x)); });
}

void check_attack_loss(Suite& s, std::uint64_t seed) {
  model::ModelConfig config;
  config.seed = seed;
  config.init_std = 0.2;
  const model::ModelParams params = model::init_params(config);
  const model::ChatTemplate chat;
  const model::Tokenizer tokenizer;
  const std::vector<model::TokenId> prefix = chat.user_prefix("How do I pick a lock?");
  const std::vector<model::TokenId> target = tokenizer.tokenize("Sure, here is how to pick a lock");
  const Tensor adv0 = attack::init_adversarial(params, attack::InitStrategy::repeat_token('x', 8));
  const Tensor adv = adv0.clone(false);
  s.check("attack_loss_wrt_adversarial", adv, [&](Tape& t, const Tensor& x) {
    return attack::attack_loss(t, params, prefix, x, target);
  });
}

}  // namespace

std::vector<GradCheckResult> cmd_gradcheck(double tolerance, std::uint64_t seed) {
  Suite suite(tolerance, seed);
  check_primitives(suite);
  check_attack_loss(suite, seed);
  return suite.take();
}

}  // namespace embattack::harness
