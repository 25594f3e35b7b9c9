#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bimanual/ops.hpp"
#include "bimanual/rng.hpp"
#include "bimanual/tensor.hpp"

namespace bimanual::nn {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class Module {
 public:
  virtual ~Module() = default;
  virtual void collect_parameters(std::string_view prefix, std::vector<NamedTensor>& out) const = 0;

  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
};

std::string join_name(std::string_view prefix, std::string_view name);

/// y = x W + b with W stored as [in, out].
class Linear : public Module {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool bias = true, double init_scale = 1.0);

  Tensor forward(const Tensor& x) const;
  void collect_parameters(std::string_view prefix, std::vector<NamedTensor>& out) const override;
  void zero_weights();
  /// Overwrites W ([in, out], row-major) and, when present, b.
  void assign(const std::vector<double>& weight, const std::vector<double>& bias);

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

 private:
  std::size_t in_ = 0, out_ = 0;
  Tensor weight_, bias_;
};

class LayerNorm : public Module {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim);
  Tensor forward(const Tensor& x) const;
  void collect_parameters(std::string_view prefix, std::vector<NamedTensor>& out) const override;

 private:
  Tensor gamma_, beta_;
};

enum class Activation { Gelu, Silu, Relu };
Tensor activate(const Tensor& x, Activation act);

/// Two-layer perceptron.
class Mlp : public Module {
 public:
  Mlp() = default;
  Mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng, Activation act = Activation::Gelu);
  Tensor forward(const Tensor& x) const;
  void collect_parameters(std::string_view prefix, std::vector<NamedTensor>& out) const override;

 private:
  Linear fc1_, fc2_;
  Activation act_ = Activation::Gelu;
};

struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;

  Tensor drop(const Tensor& x) const;
};

/// Multi-head self-attention over x[B, S, D]. key_bias is [B, 1, 1, S] (0 or a large
/// negative number) or undefined.
class MultiHeadAttention : public Module {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t dim, std::size_t heads, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor& key_bias, const ForwardContext& ctx) const;
  void collect_parameters(std::string_view prefix, std::vector<NamedTensor>& out) const override;

 private:
  std::size_t dim_ = 0, heads_ = 0;
  Linear qkv_, proj_;
};

/// Pre-norm transformer encoder block.
class EncoderLayer : public Module {
 public:
  EncoderLayer() = default;
  EncoderLayer(std::size_t dim, std::size_t heads, std::size_t ff_dim, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor& key_bias, const ForwardContext& ctx) const;
  void collect_parameters(std::string_view prefix, std::vector<NamedTensor>& out) const override;

 private:
  LayerNorm norm1_, norm2_;
  MultiHeadAttention attn_;
  Mlp ff_;
};

/// Sinusoidal encoding table [positions, dim] (sin on even, cos on odd channels).
Tensor sinusoidal_table(const std::vector<double>& positions, std::size_t dim, double max_period = 10000.0);

}  // namespace bimanual::nn
