#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mvdet/rng.hpp"
#include "mvdet/tensor.hpp"

namespace mvdet {
namespace nn {

// Named learnable tensor (or persistent buffer when learnable is false, e.g.
// batch-norm running statistics).
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool learnable = true;

  Param(std::string n, Tensor v, bool learn = true)
      : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape())),
        learnable(learn) {}
  void zero_grad() { grad.fill(0.0); }
};

// A differentiable layer. forward() caches whatever backward() needs; one
// backward() per forward(). Parameter gradients accumulate until zeroed.
class Layer {
public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  const std::string& name() const { return name_; }
  virtual Tensor forward(const Tensor& x, bool training) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual void collect_params(std::vector<Param*>& out) { (void)out; }

  std::vector<Param*> params() {
    std::vector<Param*> out;
    collect_params(out);
    return out;
  }

private:
  std::string name_;
};

using LayerPtr = std::unique_ptr<Layer>;

// y = x W^T + b over the last dimension; leading dimensions are batch.
class Linear : public Layer {
public:
  Linear(std::string name, int in_features, int out_features, Rng init,
         double init_gain = 2.0);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(std::vector<Param*>& out) override;

  Param weight;  // (out, in)
  Param bias;    // (out)

private:
  int in_, out_;
  Tensor x_;  // cached input, flattened to (N, in)
  std::vector<int> x_shape_;
};

class ReLU : public Layer {
public:
  explicit ReLU(std::string name) : Layer(std::move(name)) {}
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;

private:
  std::vector<char> mask_;
};

class Gelu : public Layer {
public:
  explicit Gelu(std::string name) : Layer(std::move(name)) {}
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;

private:
  Tensor x_;
};

class Identity : public Layer {
public:
  explicit Identity(std::string name) : Layer(std::move(name)) {}
  Tensor forward(const Tensor& x, bool) override { return x; }
  Tensor backward(const Tensor& dy) override { return dy; }
};

// Makes the stage-wise activation configurable ("relu" | "identity").
LayerPtr make_activation(const std::string& kind, std::string name);

// 2-D convolution, NCHW, square kernel, optional channel groups.
class Conv2d : public Layer {
public:
  Conv2d(std::string name, int in_ch, int out_ch, int kernel, int stride, int pad, Rng init,
         int groups = 1);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(std::vector<Param*>& out) override;

  Param weight;  // (out, in/groups, k, k)
  Param bias;    // (out)

private:
  int cin_, cout_, k_, stride_, pad_, groups_;
  Tensor x_;
};

// Non-overlapping average pooling; input sides must divide by the window.
class AvgPool2d : public Layer {
public:
  AvgPool2d(std::string name, int window);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;

private:
  int k_;
  std::vector<int> in_shape_;
};

class GlobalAvgPool : public Layer {
public:
  explicit GlobalAvgPool(std::string name) : Layer(std::move(name)) {}
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;

private:
  std::vector<int> in_shape_;
};

class Flatten : public Layer {
public:
  explicit Flatten(std::string name) : Layer(std::move(name)) {}
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;

private:
  std::vector<int> in_shape_;
};

// Per-channel batch normalization over (N) or (N,H,W); accepts 2-D and 4-D
// input. Running statistics are frozen buffers in eval mode.
class BatchNorm : public Layer {
public:
  BatchNorm(std::string name, int channels, double momentum = 0.1, double eps = 1e-5);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(std::vector<Param*>& out) override;

  Param gamma, beta;
  Param running_mean, running_var;  // buffers

private:
  int c_;
  double momentum_, eps_;
  bool trained_forward_ = false;
  Tensor xhat_;
  std::vector<double> invstd_;
  std::vector<int> in_shape_;
};

// Inverted dropout; identity in eval mode. Mask randomness comes from the
// supplied stream so runs are reproducible.
class Dropout : public Layer {
public:
  Dropout(std::string name, double rate, Rng* stream);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;
  double rate() const { return rate_; }

private:
  double rate_;
  Rng* stream_;
  std::vector<double> mask_;
  bool active_ = false;
};

// Normalization over the last dimension (token embeddings).
class LayerNorm : public Layer {
public:
  LayerNorm(std::string name, int features, double eps = 1e-5);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(std::vector<Param*>& out) override;

  Param gamma, beta;

private:
  int e_;
  double eps_;
  Tensor xhat_;
  std::vector<double> invstd_;
};

// Multi-head self-attention over (N, T, E).
class SelfAttention : public Layer {
public:
  SelfAttention(std::string name, int embed_dim, int heads, Rng init);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(std::vector<Param*>& out) override;

  Param wq, bq, wk, bk, wv, bv, wo, bo;

private:
  int e_, heads_, head_dim_;
  Tensor x_, q_, k_, v_, attn_, concat_;
};

// Adds a learnable positional table to (N, T, E).
class PositionalEmbedding : public Layer {
public:
  PositionalEmbedding(std::string name, int tokens, int embed_dim, Rng init);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(std::vector<Param*>& out) override;

  Param table;  // (T, E)
};

// (N, C, H, W) -> (N, H*W, C)
class ToTokens : public Layer {
public:
  explicit ToTokens(std::string name) : Layer(std::move(name)) {}
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;
  int grid_h() const { return h_; }
  int grid_w() const { return w_; }

private:
  int h_ = 0, w_ = 0;
};

// Mean over tokens: (N, T, E) -> (N, E)
class TokenMean : public Layer {
public:
  explicit TokenMean(std::string name) : Layer(std::move(name)) {}
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;

private:
  int t_ = 0;
};

class Sequential;

// y = x + inner(x); shapes must match.
class Residual : public Layer {
public:
  Residual(std::string name, std::unique_ptr<Sequential> inner);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(std::vector<Param*>& out) override;
  Sequential& inner() { return *inner_; }

private:
  std::unique_ptr<Sequential> inner_;
};

// Ordered layer container. A "tap" captures one layer's output activation in
// forward and the gradient arriving at that output in backward (Grad-CAM).
class Sequential : public Layer {
public:
  explicit Sequential(std::string name) : Layer(std::move(name)) {}

  Sequential& add(LayerPtr layer) {
    layers_.push_back(std::move(layer));
    return *this;
  }

  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(std::vector<Param*>& out) override;

  bool has_layer(const std::string& name) const;
  Layer* layer(const std::string& name);
  const std::vector<LayerPtr>& layers() const { return layers_; }

  void set_tap(const std::string& layer_name);
  void clear_tap() { set_tap(""); }
  const Tensor& tap_activation() const { return tap_act_; }
  const Tensor& tap_gradient() const { return tap_grad_; }

private:
  std::vector<LayerPtr> layers_;
  std::string tap_name_;
  int tap_index_ = -1;
  Tensor tap_act_, tap_grad_;
};

// Adaptive moment estimation over a fixed parameter set.
class AdamOptimizer {
public:
  AdamOptimizer(std::vector<Param*> params, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);
  void step();
  void zero_grad();
  double learning_rate() const { return lr_; }

private:
  std::vector<Param*> params_;
  std::vector<Tensor> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

// FNV-1a over the raw bytes of every learnable parameter, in declaration
// order. Stable fingerprint for determinism tests.
uint64_t parameter_checksum(const std::vector<Param*>& params);
int64_t parameter_count(const std::vector<Param*>& params);

}  // namespace nn
}  // namespace mvdet
