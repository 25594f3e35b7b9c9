#include "bimanual/nn.hpp"

#include <cmath>

namespace bimanual::nn {

std::string join_name(std::string_view prefix, std::string_view name) {
  if (prefix.empty()) return std::string(name);
  std::string s(prefix);
  s += '.';
  s += name;
  return s;
}

std::vector<NamedTensor> Module::named_parameters() const {
  std::vector<NamedTensor> out;
  collect_parameters("", out);
  return out;
}

std::vector<Tensor> Module::parameters() const {
  std::vector<Tensor> out;
  for (auto& p : named_parameters()) out.push_back(p.tensor);
  return out;
}

std::size_t Module::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : named_parameters()) n += p.tensor.numel();
  return n;
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool bias, double init_scale) : in_(in), out_(out) {
  // Uniform Xavier/Glorot.
  const double bound = init_scale * std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> w(in * out);
  for (double& v : w) v = rng.uniform(-bound, bound);
  weight_ = Tensor::from({in, out}, std::move(w), true);
  if (bias) bias_ = Tensor::zeros({out}, true);
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor y = matmul(x, weight_);
  return bias_.defined() ? y + bias_ : y;
}

void Linear::collect_parameters(std::string_view prefix, std::vector<NamedTensor>& out) const {
  out.push_back({join_name(prefix, "weight"), weight_});
  if (bias_.defined()) out.push_back({join_name(prefix, "bias"), bias_});
}

void Linear::zero_weights() {
  for (double& v : weight_.mutable_data()) v = 0.0;
}

void Linear::assign(const std::vector<double>& weight, const std::vector<double>& bias) {
  if (weight.size() != in_ * out_ || (bias_.defined() ? bias.size() != out_ : !bias.empty())) {
    throw std::invalid_argument("Linear::assign: size mismatch");
  }
  std::copy(weight.begin(), weight.end(), weight_.mutable_data().begin());
  if (bias_.defined()) std::copy(bias.begin(), bias.end(), bias_.mutable_data().begin());
}

LayerNorm::LayerNorm(std::size_t dim) : gamma_(Tensor::full({dim}, 1.0, true)), beta_(Tensor::zeros({dim}, true)) {}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gamma_, beta_); }

void LayerNorm::collect_parameters(std::string_view prefix, std::vector<NamedTensor>& out) const {
  out.push_back({join_name(prefix, "gamma"), gamma_});
  out.push_back({join_name(prefix, "beta"), beta_});
}

Tensor activate(const Tensor& x, Activation act) {
  switch (act) {
    case Activation::Gelu:
      return gelu(x);
    case Activation::Silu:
      return silu(x);
    case Activation::Relu:
      return relu(x);
  }
  return x;
}

Mlp::Mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng, Activation act)
    : fc1_(in, hidden, rng), fc2_(hidden, out, rng), act_(act) {}

Tensor Mlp::forward(const Tensor& x) const { return fc2_.forward(activate(fc1_.forward(x), act_)); }

void Mlp::collect_parameters(std::string_view prefix, std::vector<NamedTensor>& out) const {
  fc1_.collect_parameters(join_name(prefix, "fc1"), out);
  fc2_.collect_parameters(join_name(prefix, "fc2"), out);
}

Tensor ForwardContext::drop(const Tensor& x) const {
  if (!training || dropout == 0.0) return x;
  if (!rng) throw std::invalid_argument("ForwardContext: training with dropout needs an rng");
  return bimanual::dropout(x, dropout, true, *rng);
}

MultiHeadAttention::MultiHeadAttention(std::size_t dim, std::size_t heads, Rng& rng)
    : dim_(dim), heads_(heads), qkv_(dim, 3 * dim, rng), proj_(dim, dim, rng) {
  if (heads == 0 || dim % heads != 0) throw std::invalid_argument("MultiHeadAttention: dim must be divisible by heads");
}

Tensor MultiHeadAttention::forward(const Tensor& x, const Tensor& key_bias, const ForwardContext& ctx) const {
  const std::size_t B = x.size(0), S = x.size(1), H = heads_, Dh = dim_ / heads_;
  // [B, S, 3, H, Dh] -> [3, B, H, S, Dh]
  Tensor qkv = permute(reshape(qkv_.forward(x), {B, S, 3, H, Dh}), {2, 0, 3, 1, 4});
  Tensor q = reshape(slice(qkv, 0, 0, 1), {B, H, S, Dh});
  Tensor k = reshape(slice(qkv, 0, 1, 2), {B, H, S, Dh});
  Tensor v = reshape(slice(qkv, 0, 2, 3), {B, H, S, Dh});
  Tensor scores = matmul(q, transpose(k, 2, 3)) * (1.0 / std::sqrt(static_cast<double>(Dh)));
  if (key_bias.defined()) scores = scores + key_bias;
  Tensor attn = ctx.drop(softmax(scores));
  Tensor heads = permute(matmul(attn, v), {0, 2, 1, 3});  // [B, S, H, Dh]
  return proj_.forward(reshape(heads, {B, S, dim_}));
}

void MultiHeadAttention::collect_parameters(std::string_view prefix, std::vector<NamedTensor>& out) const {
  qkv_.collect_parameters(join_name(prefix, "qkv"), out);
  proj_.collect_parameters(join_name(prefix, "proj"), out);
}

EncoderLayer::EncoderLayer(std::size_t dim, std::size_t heads, std::size_t ff_dim, Rng& rng)
    : norm1_(dim), norm2_(dim), attn_(dim, heads, rng), ff_(dim, ff_dim, dim, rng) {}

Tensor EncoderLayer::forward(const Tensor& x, const Tensor& key_bias, const ForwardContext& ctx) const {
  Tensor h = x + ctx.drop(attn_.forward(norm1_.forward(x), key_bias, ctx));
  return h + ctx.drop(ff_.forward(norm2_.forward(h)));
}

void EncoderLayer::collect_parameters(std::string_view prefix, std::vector<NamedTensor>& out) const {
  norm1_.collect_parameters(join_name(prefix, "norm1"), out);
  attn_.collect_parameters(join_name(prefix, "attn"), out);
  norm2_.collect_parameters(join_name(prefix, "norm2"), out);
  ff_.collect_parameters(join_name(prefix, "ff"), out);
}

Tensor sinusoidal_table(const std::vector<double>& positions, std::size_t dim, double max_period) {
  std::vector<double> out(positions.size() * dim);
  const std::size_t half = dim / 2;
  for (std::size_t p = 0; p < positions.size(); ++p) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(max_period) * static_cast<double>(i) / static_cast<double>(half));
      out[p * dim + 2 * i] = std::sin(positions[p] * freq);
      out[p * dim + 2 * i + 1] = std::cos(positions[p] * freq);
    }
  }
  return Tensor::from({positions.size(), dim}, std::move(out));
}

}  // namespace bimanual::nn
