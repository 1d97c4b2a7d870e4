#include "embattack/numerics/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "embattack/numerics/errors.h"

namespace embattack::numerics {

std::vector<double> finite_difference_gradient(const ScalarFunction& f, const Tensor& x,
                                               double step, std::span<const std::size_t> coords) {
  if (!(step > 0.0)) throw ArgumentError("finite difference step must be positive");
  Tensor probe = x.clone();
  auto values = probe.mutable_data();
  std::vector<double> out;
  out.reserve(coords.size());
  for (std::size_t i : coords) {
    if (i >= values.size()) throw IndexError("finite difference coordinate out of range");
    const double original = values[i];
    values[i] = original + step;
    const double plus = f(probe);
    values[i] = original - step;
    const double minus = f(probe);
    values[i] = original;
    out.push_back((plus - minus) / (2.0 * step));
  }
  return out;
}

Tensor finite_difference_gradient(const ScalarFunction& f, const Tensor& x, double step) {
  std::vector<std::size_t> all(x.numel());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return Tensor(x.shape(), finite_difference_gradient(f, x, step, all));
}

std::vector<std::size_t> sample_coordinates(std::size_t numel, std::size_t count,
                                            std::uint64_t seed) {
  std::vector<std::size_t> all(numel);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (count >= numel) return all;
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates keeps the draw independent of std::shuffle's
  // implementation.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (numel - i));
    std::swap(all[i], all[j]);
  }
  all.resize(count);
  return all;
}

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw ShapeError("relative_error: length mismatch");
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  if (std::isnan(diff)) return diff;
  if (scale == 0.0) return 0.0;
  return diff / scale;
}

}  // namespace embattack::numerics
