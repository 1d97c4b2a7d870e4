#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "embattack/numerics/tensor.h"

namespace embattack::numerics {

using ScalarFunction = std::function<double(const Tensor&)>;

// Central-difference estimate (f(x + h e_i) - f(x - h e_i)) / 2h for each
// flat index in `coords`, returned in the same order. `x` is not modified.
std::vector<double> finite_difference_gradient(const ScalarFunction& f, const Tensor& x,
                                               double step, std::span<const std::size_t> coords);

// Full-tensor variant: a tensor of x's shape holding the estimate everywhere.
Tensor finite_difference_gradient(const ScalarFunction& f, const Tensor& x, double step);

// `count` distinct flat indices of a tensor with `numel` entries, drawn with
// a fixed seed. Returns every index when count >= numel.
std::vector<std::size_t> sample_coordinates(std::size_t numel, std::size_t count,
                                            std::uint64_t seed);

// max_i |a_i - b_i| / max_i max(|a_i|, |b_i|); zero when both are all-zero.
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

}  // namespace embattack::numerics
