#include "embattack/numerics/ops.h"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "embattack/numerics/errors.h"

namespace embattack::numerics {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

bool any_requires_grad(std::initializer_list<const Tensor*> tensors) {
  for (const Tensor* t : tensors) {
    if (t->requires_grad()) return true;
  }
  return false;
}

Tensor make_output(Shape shape, Buffer data, bool requires_grad) {
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_to_string(t.shape()));
  }
}

bool broadcasts_into(const Shape& a, const Shape& b) {
  if (shape_numel(b) == 1) return true;
  if (b.size() > a.size()) return false;
  return std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()));
}

// Calls f with the binary functor for `kind`, so loops inside f see a
// statically known operation.
template <typename F>
void dispatch(Elementwise kind, F&& f) {
  switch (kind) {
    case Elementwise::kAdd: f([](double x, double y) { return x + y; }); break;
    case Elementwise::kSub: f([](double x, double y) { return x - y; }); break;
    case Elementwise::kMul: f([](double x, double y) { return x * y; }); break;
    case Elementwise::kDiv: f([](double x, double y) { return x / y; }); break;
    case Elementwise::kMax: f([](double x, double y) { return x >= y ? x : y; }); break;
  }
}

}  // namespace

Tensor elementwise(Tape& tape, const Tensor& a, const Tensor& b, Elementwise kind) {
  if (!broadcasts_into(a.shape(), b.shape())) {
    throw ShapeError("elementwise: cannot broadcast " + shape_to_string(b.shape()) + " into " +
                     shape_to_string(a.shape()));
  }
  const std::size_t n = a.numel();
  const std::size_t nb = b.numel();
  auto ad = a.data();
  auto bd = b.data();
  Buffer out(n);
  dispatch(kind, [&](auto op) {
    for (std::size_t base = 0; base < n; base += nb) {
      for (std::size_t j = 0; j < nb; ++j) out[base + j] = op(ad[base + j], bd[j]);
    }
  });

  const bool rg = any_requires_grad({&a, &b});
  Tensor result = make_output(a.shape(), std::move(out), rg);
  if (!rg) return result;

  tape.record({a, b}, result, [a = a, b = b, result, kind]() mutable {
    auto g = result.grad();
    auto ad = a.data();
    auto bd = b.data();
    const std::size_t n = ad.size();
    const std::size_t nb = bd.size();
    // d/da and d/db of op(x, y), each given (upstream, x, y).
    auto over = [&](std::span<double> out_grad, bool to_b, auto partial) {
      for (std::size_t base = 0; base < n; base += nb) {
        for (std::size_t j = 0; j < nb; ++j) {
          out_grad[to_b ? j : base + j] += partial(g[base + j], ad[base + j], bd[j]);
        }
      }
    };
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      switch (kind) {
        case Elementwise::kAdd:
        case Elementwise::kSub: over(ga, false, [](double u, double, double) { return u; }); break;
        case Elementwise::kMul: over(ga, false, [](double u, double, double y) { return u * y; }); break;
        case Elementwise::kDiv: over(ga, false, [](double u, double, double y) { return u / y; }); break;
        case Elementwise::kMax:
          over(ga, false, [](double u, double x, double y) { return x >= y ? u : 0.0; });
          break;
      }
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      switch (kind) {
        case Elementwise::kAdd: over(gb, true, [](double u, double, double) { return u; }); break;
        case Elementwise::kSub: over(gb, true, [](double u, double, double) { return -u; }); break;
        case Elementwise::kMul: over(gb, true, [](double u, double x, double) { return u * x; }); break;
        case Elementwise::kDiv:
          over(gb, true, [](double u, double x, double y) { return -u * x / (y * y); });
          break;
        case Elementwise::kMax:
          over(gb, true, [](double u, double x, double y) { return x >= y ? 0.0 : u; });
          break;
      }
    }
  });
  return result;
}

Tensor elementwise(Tape& tape, const Tensor& a, double b, Elementwise kind) {
  return elementwise(tape, a, Tensor::scalar(b), kind);
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  Buffer out(m * n);
  ConstMap am(a.data().data(), m, k);
  ConstMap bm(b.data().data(), k, n);
  MutMap(out.data(), m, n).noalias() = am * bm;

  const bool rg = any_requires_grad({&a, &b});
  Tensor result = make_output({m, n}, std::move(out), rg);
  if (!rg) return result;

  tape.record({a, b}, result, [a = a, b = b, result, m, k, n]() mutable {
    ConstMap gm(result.grad().data(), m, n);
    if (a.requires_grad()) {
      MutMap(a.mutable_grad().data(), m, k).noalias() +=
          gm * ConstMap(b.data().data(), k, n).transpose();
    }
    if (b.requires_grad()) {
      MutMap(b.mutable_grad().data(), k, n).noalias() +=
          ConstMap(a.data().data(), m, k).transpose() * gm;
    }
  });
  return result;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  if (w.dim(0) != k || b.numel() != n) {
    throw ShapeError("linear: " + shape_to_string(x.shape()) + " x " + shape_to_string(w.shape()) +
                     " + " + shape_to_string(b.shape()));
  }
  Buffer out(m * n);
  MutMap om(out.data(), m, n);
  om.rowwise() = Eigen::Map<const Eigen::RowVectorXd>(b.data().data(), n);
  om.noalias() += ConstMap(x.data().data(), m, k) * ConstMap(w.data().data(), k, n);

  const bool rg = any_requires_grad({&x, &w, &b});
  Tensor result = make_output({m, n}, std::move(out), rg);
  if (!rg) return result;

  tape.record({x, w, b}, result, [x = x, w = w, b = b, result, m, k, n]() mutable {
    ConstMap gm(result.grad().data(), m, n);
    if (x.requires_grad()) {
      MutMap(x.mutable_grad().data(), m, k).noalias() +=
          gm * ConstMap(w.data().data(), k, n).transpose();
    }
    if (w.requires_grad()) {
      MutMap(w.mutable_grad().data(), k, n).noalias() +=
          ConstMap(x.data().data(), m, k).transpose() * gm;
    }
    if (b.requires_grad()) {
      Eigen::Map<Eigen::RowVectorXd>(b.mutable_grad().data(), n) += gm.colwise().sum();
    }
  });
  return result;
}

Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis) {
  const Shape& shape = x.shape();
  if (axis >= shape.size()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " +
                     shape_to_string(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];

  auto xd = x.data();
  Buffer out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, xd[base + i * inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        const double e = std::exp(xd[base + i * inner] - mx);
        out[base + i * inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < len; ++i) out[base + i * inner] /= total;
    }
  }

  const bool rg = x.requires_grad();
  Tensor result = make_output(shape, std::move(out), rg);
  if (!rg) return result;

  tape.record({x}, result, [x = x, result, outer, inner, len]() mutable {
    auto g = result.grad();
    auto y = result.data();
    auto gx = x.mutable_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t i = 0; i < len; ++i) dot += g[base + i * inner] * y[base + i * inner];
        for (std::size_t i = 0; i < len; ++i) {
          const std::size_t idx = base + i * inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
  return result;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double epsilon) {
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layer_norm: gain/bias length must equal last dimension " +
                     std::to_string(d));
  }
  const std::size_t rows = x.numel() / d;
  auto xd = x.data();
  auto gd = gain.data();
  auto bd = bias.data();
  Buffer out(x.numel());
  Buffer xhat(x.numel());
  Buffer rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * d;
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += row[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mean) * (row[i] - mean);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + epsilon);
    for (std::size_t i = 0; i < d; ++i) {
      const double h = (row[i] - mean) * rstd[r];
      xhat[r * d + i] = h;
      out[r * d + i] = h * gd[i] + bd[i];
    }
  }

  const bool rg = any_requires_grad({&x, &gain, &bias});
  Tensor result = make_output(x.shape(), std::move(out), rg);
  if (!rg) return result;

  tape.record({x, gain, bias}, result,
              [x = x, gain = gain, bias = bias, result, xhat = std::move(xhat), rstd = std::move(rstd), rows,
               d]() mutable {
                auto g = result.grad();
                auto gd = gain.data();
                if (gain.requires_grad()) {
                  auto gg = gain.mutable_grad();
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t i = 0; i < d; ++i) gg[i] += g[r * d + i] * xhat[r * d + i];
                }
                if (bias.requires_grad()) {
                  auto gb = bias.mutable_grad();
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t i = 0; i < d; ++i) gb[i] += g[r * d + i];
                }
                if (x.requires_grad()) {
                  auto gx = x.mutable_grad();
                  const double inv_d = 1.0 / static_cast<double>(d);
                  for (std::size_t r = 0; r < rows; ++r) {
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (std::size_t i = 0; i < d; ++i) {
                      const double dh = g[r * d + i] * gd[i];
                      mean_dh += dh;
                      mean_dh_h += dh * xhat[r * d + i];
                    }
                    mean_dh *= inv_d;
                    mean_dh_h *= inv_d;
                    for (std::size_t i = 0; i < d; ++i) {
                      const double dh = g[r * d + i] * gd[i];
                      gx[r * d + i] += rstd[r] * (dh - mean_dh - xhat[r * d + i] * mean_dh_h);
                    }
                  }
                }
              });
  return result;
}

Tensor gelu(Tape& tape, const Tensor& x) {
  // 0.5 x (1 + tanh(z)) written as x * sigmoid(2z), which costs one exp.
  constexpr double kC = 0.044715;
  const double k_scale = std::sqrt(2.0 / std::numbers::pi);
  auto xd = x.data();
  Buffer out(x.numel());
  Buffer gates(x.numel());
  const auto n = static_cast<Eigen::Index>(out.size());
  Eigen::Map<const Eigen::ArrayXd> xa(xd.data(), n);
  Eigen::Map<Eigen::ArrayXd> ga(gates.data(), n);
  ga = 1.0 / (1.0 + (-2.0 * k_scale * (xa + kC * xa * xa * xa)).exp());
  Eigen::Map<Eigen::ArrayXd>(out.data(), n) = xa * ga;
  const bool rg = x.requires_grad();
  Tensor result = make_output(x.shape(), std::move(out), rg);
  if (!rg) return result;

  tape.record({x}, result, [x = x, result, k_scale, gates = std::move(gates)]() mutable {
    auto g = result.grad();
    auto xd = x.data();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < xd.size(); ++i) {
      const double v = xd[i];
      const double s = gates[i];
      const double dz = k_scale * (1.0 + 3.0 * kC * v * v);
      gx[i] += g[i] * (s + v * s * (1.0 - s) * 2.0 * dz);
    }
  });
  return result;
}

Tensor embedding_rows(Tape& tape, const Tensor& table, std::span<const int> ids) {
  require_rank(table, 2, "embedding_rows");
  if (ids.empty()) throw ArgumentError("embedding_rows: empty id sequence");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  auto td = table.data();
  Buffer out(ids.size() * d);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= vocab) {
      throw IndexError("embedding_rows: id " + std::to_string(ids[t]) + " outside table of " +
                       std::to_string(vocab) + " rows");
    }
    std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(ids[t] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(t * d));
  }
  const bool rg = table.requires_grad();
  Tensor result = make_output({ids.size(), d}, std::move(out), rg);
  if (!rg) return result;

  tape.record({table}, result,
              [table = table, result, ids = std::vector<int>(ids.begin(), ids.end()), d]() mutable {
                auto g = result.grad();
                auto gt = table.mutable_grad();
                for (std::size_t t = 0; t < ids.size(); ++t) {
                  const std::size_t row = static_cast<std::size_t>(ids[t]);
                  for (std::size_t i = 0; i < d; ++i) gt[row * d + i] += g[t * d + i];
                }
              });
  return result;
}

Tensor concat_rows(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw ArgumentError("concat_rows: no inputs");
  const std::size_t d = parts.front().shape().back();
  std::size_t rows = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != d) throw ShapeError("concat_rows: column counts differ");
    rows += p.dim(0);
    rg = rg || p.requires_grad();
  }
  Buffer out;
  out.reserve(rows * d);
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor result = make_output({rows, d}, std::move(out), rg);
  if (!rg) return result;

  std::vector<Tensor> inputs(parts.begin(), parts.end());
  tape.record(inputs, result, [inputs, result]() mutable {
    auto g = result.grad();
    std::size_t offset = 0;
    for (Tensor& p : inputs) {
      if (p.requires_grad()) {
        auto gp = p.mutable_grad();
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
      }
      offset += p.numel();
    }
  });
  return result;
}

Tensor causal_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                        std::size_t n_heads) {
  require_rank(q, 2, "causal_attention");
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw ShapeError("causal_attention: q, k, v shapes differ");
  }
  const std::size_t len = q.dim(0), d = q.dim(1);
  if (n_heads == 0 || d % n_heads != 0) {
    throw ShapeError("causal_attention: width " + std::to_string(d) +
                     " not divisible by head count " + std::to_string(n_heads));
  }
  const auto t = static_cast<Eigen::Index>(len);
  const auto hd = static_cast<Eigen::Index>(d / n_heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  ConstMap qm(q.data().data(), t, static_cast<Eigen::Index>(d));
  ConstMap km(k.data().data(), t, static_cast<Eigen::Index>(d));
  ConstMap vm(v.data().data(), t, static_cast<Eigen::Index>(d));

  // Per-head [T, T] attention weights; entries above the diagonal are exactly
  // zero, so masked positions contribute nothing to either pass.
  std::vector<RowMatrix> probs(n_heads);
  Buffer out(len * d);
  MutMap om(out.data(), t, static_cast<Eigen::Index>(d));
  for (std::size_t h = 0; h < n_heads; ++h) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(h) * hd;
    RowMatrix p = (qm.middleCols(c0, hd) * km.middleCols(c0, hd).transpose()) * scale;
    for (Eigen::Index r = 0; r < t; ++r) {
      auto row = p.row(r);
      auto live = row.head(r + 1).array();
      live = (live - live.maxCoeff()).exp();
      live /= live.sum();
      row.tail(t - r - 1).setZero();
    }
    om.middleCols(c0, hd).noalias() = p * vm.middleCols(c0, hd);
    probs[h] = std::move(p);
  }

  const bool rg = any_requires_grad({&q, &k, &v});
  Tensor result = make_output({len, d}, std::move(out), rg);
  if (!rg) return result;

  tape.record({q, k, v}, result,
              [q = q, k = k, v = v, result, probs = std::move(probs), t, hd, d, scale]() mutable {
                const auto dd = static_cast<Eigen::Index>(d);
                ConstMap gm(result.grad().data(), t, dd);
                ConstMap qm(q.data().data(), t, dd);
                ConstMap km(k.data().data(), t, dd);
                ConstMap vm(v.data().data(), t, dd);
                for (std::size_t h = 0; h < probs.size(); ++h) {
                  const Eigen::Index c0 = static_cast<Eigen::Index>(h) * hd;
                  const RowMatrix& p = probs[h];
                  auto go = gm.middleCols(c0, hd);
                  if (v.requires_grad()) {
                    MutMap(v.mutable_grad().data(), t, dd).middleCols(c0, hd).noalias() +=
                        p.transpose() * go;
                  }
                  if (!q.requires_grad() && !k.requires_grad()) continue;
                  RowMatrix dp = go * vm.middleCols(c0, hd).transpose();
                  const Eigen::VectorXd dots = p.cwiseProduct(dp).rowwise().sum();
                  RowMatrix ds = p.cwiseProduct(dp.colwise() - dots) * scale;
                  if (q.requires_grad()) {
                    MutMap(q.mutable_grad().data(), t, dd).middleCols(c0, hd).noalias() +=
                        ds * km.middleCols(c0, hd);
                  }
                  if (k.requires_grad()) {
                    MutMap(k.mutable_grad().data(), t, dd).middleCols(c0, hd).noalias() +=
                        ds.transpose() * qm.middleCols(c0, hd);
                  }
                }
              });
  return result;
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> targets) {
  require_rank(logits, 2, "cross_entropy");
  if (targets.empty()) throw ArgumentError("cross_entropy: empty target sequence");
  const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(rows) + " logit rows");
  }
  auto ld = logits.data();
  Buffer probs(rows * vocab);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[r]) +
                       " outside vocabulary of " + std::to_string(vocab));
    }
    const double* row = ld.data() + r * vocab;
    const auto v = static_cast<Eigen::Index>(vocab);
    Eigen::Map<const Eigen::ArrayXd> in(row, v);
    Eigen::Map<Eigen::ArrayXd> p(probs.data() + r * vocab, v);
    const double mx = in.maxCoeff();
    p = (in - mx).exp();
    const double z = p.sum();
    p /= z;
    total += (mx + std::log(z)) - row[targets[r]];
  }
  const bool rg = logits.requires_grad();
  Tensor result = Tensor::scalar(total / static_cast<double>(rows), rg);
  if (!rg) return result;

  tape.record({logits}, result,
              [logits = logits, result, probs = std::move(probs),
               targets = std::vector<int>(targets.begin(), targets.end()), rows,
               vocab]() mutable {
                const double g = result.grad()[0] / static_cast<double>(rows);
                auto gl = logits.mutable_grad();
                for (std::size_t r = 0; r < rows; ++r) {
                  for (std::size_t i = 0; i < vocab; ++i) gl[r * vocab + i] += g * probs[r * vocab + i];
                  gl[r * vocab + static_cast<std::size_t>(targets[r])] -= g;
                }
              });
  return result;
}

Tensor sum(Tape& tape, const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  const bool rg = x.requires_grad();
  Tensor result = Tensor::scalar(total, rg);
  if (!rg) return result;
  tape.record({x}, result, [x = x, result]() mutable {
    const double g = result.grad()[0];
    for (double& gx : x.mutable_grad()) gx += g;
  });
  return result;
}

}  // namespace embattack::numerics
