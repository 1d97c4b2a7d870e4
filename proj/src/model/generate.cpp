#include "embattack/model/generate.h"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "embattack/numerics/errors.h"

namespace embattack::model {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using RowVector = Eigen::Map<const Eigen::RowVectorXd>;

ConstMap matrix(const Tensor& t) { return ConstMap(t.data().data(), t.dim(0), t.dim(1)); }
RowVector row_vector(const Tensor& t) {
  return RowVector(t.data().data(), static_cast<Eigen::Index>(t.numel()));
}

RowMatrix layer_norm(const RowMatrix& x, const Tensor& gain, const Tensor& bias) {
  constexpr double kEpsilon = 1e-5;
  const auto d = x.cols();
  RowMatrix out(x.rows(), d);
  auto g = gain.data();
  auto b = bias.data();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) mean += x(r, i);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) var += (x(r, i) - mean) * (x(r, i) - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kEpsilon);
    for (Eigen::Index i = 0; i < d; ++i) out(r, i) = (x(r, i) - mean) * rstd * g[i] + b[i];
  }
  return out;
}

void gelu_inplace(RowMatrix& x) {
  constexpr double kC = 0.044715;
  const double scale = std::sqrt(2.0 / std::numbers::pi);
  auto a = x.array();
  a = a / (1.0 + (-2.0 * scale * (a + kC * a * a * a)).exp());
}

}  // namespace

IncrementalDecoder::IncrementalDecoder(const ModelParams& params)
    : params_(params),
      keys_(params.config.n_layers,
            numerics::Buffer(params.config.max_seq_len * params.config.d_model)),
      values_(params.config.n_layers,
              numerics::Buffer(params.config.max_seq_len * params.config.d_model)) {}

std::vector<double> IncrementalDecoder::feed(std::span<const double> rows, std::size_t n_rows) {
  const ModelConfig& cfg = params_.config;
  const std::size_t d = cfg.d_model;
  if (n_rows == 0 || rows.size() != n_rows * d) {
    throw ShapeError("IncrementalDecoder::feed: expected " + std::to_string(n_rows) + " rows of " +
                     std::to_string(d));
  }
  if (position_ + n_rows > cfg.max_seq_len) {
    throw LengthError("decoder position " + std::to_string(position_ + n_rows) +
                      " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  const auto n = static_cast<Eigen::Index>(n_rows);
  const auto dd = static_cast<Eigen::Index>(d);
  RowMatrix x = ConstMap(rows.data(), n, dd) +
                ConstMap(params_.position_embedding.data().data() + position_ * d, n, dd);

  const std::size_t heads = cfg.n_heads;
  const std::size_t hd = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  numerics::Buffer scores(cfg.max_seq_len);

  for (std::size_t li = 0; li < params_.layers.size(); ++li) {
    const LayerParams& l = params_.layers[li];
    RowMatrix h = layer_norm(x, l.ln1_gain, l.ln1_bias);
    RowMatrix q = (h * matrix(l.w_q)).rowwise() + row_vector(l.b_q);
    Eigen::Map<RowMatrix> kc(keys_[li].data() + position_ * d, n, dd);
    Eigen::Map<RowMatrix> vc(values_[li].data() + position_ * d, n, dd);
    kc = (h * matrix(l.w_k)).rowwise() + row_vector(l.b_k);
    vc = (h * matrix(l.w_v)).rowwise() + row_vector(l.b_v);
    const double* kd = keys_[li].data();
    const double* vd = values_[li].data();

    RowMatrix attn = RowMatrix::Zero(n, dd);
    for (Eigen::Index r = 0; r < n; ++r) {
      const std::size_t t = position_ + static_cast<std::size_t>(r);
      for (std::size_t hh = 0; hh < heads; ++hh) {
        const std::size_t c0 = hh * hd;
        const double* qt = q.data() + r * dd + c0;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j <= t; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < hd; ++c) s += qt[c] * kd[j * d + c0 + c];
          scores[j] = s * scale;
          mx = std::max(mx, scores[j]);
        }
        auto live = Eigen::Map<Eigen::ArrayXd>(scores.data(), static_cast<Eigen::Index>(t + 1));
        live = (live - mx).exp();
        const double total = live.sum();
        double* out = attn.data() + r * dd + c0;
        for (std::size_t j = 0; j <= t; ++j) {
          const double p = scores[j] / total;
          for (std::size_t c = 0; c < hd; ++c) out[c] += p * vd[j * d + c0 + c];
        }
      }
    }
    x += (attn * matrix(l.w_o)).rowwise() + row_vector(l.b_o);

    RowMatrix h2 = layer_norm(x, l.ln2_gain, l.ln2_bias);
    RowMatrix ff = (h2 * matrix(l.w_ff1)).rowwise() + row_vector(l.b_ff1);
    gelu_inplace(ff);
    x += (ff * matrix(l.w_ff2)).rowwise() + row_vector(l.b_ff2);
  }
  position_ += n_rows;

  RowMatrix last = layer_norm(x.bottomRows(1), params_.final_gain, params_.final_bias);
  Eigen::RowVectorXd logits = last * matrix(params_.w_out) + row_vector(params_.b_out);
  return std::vector<double>(logits.data(), logits.data() + logits.size());
}

std::vector<double> IncrementalDecoder::feed_token(TokenId id) {
  const std::size_t d = params_.config.d_model;
  if (id < 0 || static_cast<std::size_t>(id) >= params_.config.vocab_size) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary");
  }
  auto table = params_.token_embedding.data();
  return feed(table.subspan(static_cast<std::size_t>(id) * d, d), 1);
}

TokenId argmax(std::span<const double> logits) {
  return static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

std::vector<TokenId> generate_greedy(const ModelParams& params, const Tensor& prefix_embeds,
                                     std::size_t max_new_tokens) {
  const std::size_t len = prefix_embeds.dim(0);
  if (len + max_new_tokens > params.config.max_seq_len) {
    throw LengthError("prefix of " + std::to_string(len) + " plus " +
                      std::to_string(max_new_tokens) + " new tokens exceeds max_seq_len " +
                      std::to_string(params.config.max_seq_len));
  }
  std::vector<TokenId> out;
  if (max_new_tokens == 0) return out;
  IncrementalDecoder decoder(params);
  std::vector<double> logits = decoder.feed(prefix_embeds.data(), len);
  while (true) {
    const TokenId next = argmax(logits);
    if (next == kEos) break;
    out.push_back(next);
    if (out.size() == max_new_tokens) break;
    logits = decoder.feed_token(next);
  }
  return out;
}

}  // namespace embattack::model
