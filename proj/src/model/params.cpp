#include "embattack/model/params.h"

#include <cmath>
#include <random>

namespace embattack::model {
namespace {

std::string layer_name(std::size_t i, const char* field) {
  return "layers." + std::to_string(i) + "." + field;
}

template <typename Fn>
void for_each_tensor(const ModelParams& p, Fn&& fn) {
  fn("token_embedding", p.token_embedding);
  fn("position_embedding", p.position_embedding);
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const LayerParams& l = p.layers[i];
    fn(layer_name(i, "ln1_gain"), l.ln1_gain);
    fn(layer_name(i, "ln1_bias"), l.ln1_bias);
    fn(layer_name(i, "w_q"), l.w_q);
    fn(layer_name(i, "b_q"), l.b_q);
    fn(layer_name(i, "w_k"), l.w_k);
    fn(layer_name(i, "b_k"), l.b_k);
    fn(layer_name(i, "w_v"), l.w_v);
    fn(layer_name(i, "b_v"), l.b_v);
    fn(layer_name(i, "w_o"), l.w_o);
    fn(layer_name(i, "b_o"), l.b_o);
    fn(layer_name(i, "ln2_gain"), l.ln2_gain);
    fn(layer_name(i, "ln2_bias"), l.ln2_bias);
    fn(layer_name(i, "w_ff1"), l.w_ff1);
    fn(layer_name(i, "b_ff1"), l.b_ff1);
    fn(layer_name(i, "w_ff2"), l.w_ff2);
    fn(layer_name(i, "b_ff2"), l.b_ff2);
  }
  fn("final_gain", p.final_gain);
  fn("final_bias", p.final_bias);
  fn("w_out", p.w_out);
  fn("b_out", p.b_out);
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> ModelParams::named_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for_each_tensor(*this, [&](std::string name, const Tensor& t) { out.emplace_back(std::move(name), t); });
  return out;
}

void ModelParams::set_requires_grad(bool value) {
  for (auto& [name, t] : named_tensors()) t.set_requires_grad(value);
}

void ModelParams::zero_grad() {
  for (auto& [name, t] : named_tensors()) t.zero_grad();
}

bool ModelParams::all_finite() const {
  for (const auto& [name, t] : named_tensors()) {
    for (double v : t.data()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

ModelParams ModelParams::clone() const {
  ModelParams copy = *this;
  auto deep = [](Tensor& t) { t = t.clone(t.requires_grad()); };
  deep(copy.token_embedding);
  deep(copy.position_embedding);
  for (LayerParams& l : copy.layers) {
    for (Tensor* t : {&l.ln1_gain, &l.ln1_bias, &l.w_q, &l.b_q, &l.w_k, &l.b_k, &l.w_v, &l.b_v,
                      &l.w_o, &l.b_o, &l.ln2_gain, &l.ln2_bias, &l.w_ff1, &l.b_ff1, &l.w_ff2,
                      &l.b_ff2}) {
      deep(*t);
    }
  }
  deep(copy.final_gain);
  deep(copy.final_bias);
  deep(copy.w_out);
  deep(copy.b_out);
  return copy;
}

ModelParams init_params(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sd = config.init_std;
  auto gaussian = [&](numerics::Shape shape) {
    std::vector<double> data(numerics::shape_numel(shape));
    for (double& v : data) v = sd * normal(rng);
    return Tensor(std::move(shape), std::move(data));
  };
  auto filled = [](numerics::Shape shape, double value) {
    return Tensor(shape, std::vector<double>(numerics::shape_numel(shape), value));
  };

  const std::size_t d = config.d_model, f = config.d_ff, v = config.vocab_size;
  ModelParams p;
  p.config = config;
  p.token_embedding = gaussian({v, d});
  p.position_embedding = gaussian({config.max_seq_len, d});
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    LayerParams l;
    l.ln1_gain = filled({d}, 1.0);
    l.ln1_bias = filled({d}, 0.0);
    l.w_q = gaussian({d, d});
    l.b_q = filled({d}, 0.0);
    l.w_k = gaussian({d, d});
    l.b_k = filled({d}, 0.0);
    l.w_v = gaussian({d, d});
    l.b_v = filled({d}, 0.0);
    l.w_o = gaussian({d, d});
    l.b_o = filled({d}, 0.0);
    l.ln2_gain = filled({d}, 1.0);
    l.ln2_bias = filled({d}, 0.0);
    l.w_ff1 = gaussian({d, f});
    l.b_ff1 = filled({f}, 0.0);
    l.w_ff2 = gaussian({f, d});
    l.b_ff2 = filled({d}, 0.0);
    p.layers.push_back(std::move(l));
  }
  p.final_gain = filled({d}, 1.0);
  p.final_bias = filled({d}, 0.0);
  p.w_out = gaussian({d, v});
  p.b_out = filled({v}, 0.0);
  return p;
}

std::vector<std::pair<std::string, numerics::Shape>> expected_layout(const ModelConfig& config) {
  const ModelParams shapes_only = init_params(config);
  std::vector<std::pair<std::string, numerics::Shape>> out;
  for (const auto& [name, t] : shapes_only.named_tensors()) out.emplace_back(name, t.shape());
  return out;
}

}  // namespace embattack::model
