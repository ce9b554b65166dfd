#include "mvdet/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "mvdet/error.hpp"

namespace mvdet {
namespace nn {

namespace {

// flatten leading dims: (..., F) -> (N, F)
int64_t leading(const Tensor& x) {
  int64_t n = 1;
  for (int i = 0; i + 1 < x.ndim(); ++i) n *= x.dim(i);
  return n;
}

void he_init(Tensor& w, int fan_in, Rng& rng, double gain) {
  const double std = std::sqrt(gain / double(fan_in));
  for (int64_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, std);
}

}  // namespace

// ---------------------------------------------------------------- Linear

Linear::Linear(std::string name, int in_features, int out_features, Rng init, double init_gain)
    : Layer(std::move(name)),
      weight(this->name() + ".weight", Tensor({out_features, in_features})),
      bias(this->name() + ".bias", Tensor({out_features})),
      in_(in_features),
      out_(out_features) {
  he_init(weight.value, in_, init, init_gain);
}

Tensor Linear::forward(const Tensor& x, bool) {
  const int64_t n = leading(x);
  if (x.dim(x.ndim() - 1) != in_)
    throw ConfigError(name() + ": expected " + std::to_string(in_) + " input features, got " +
                      std::to_string(x.dim(x.ndim() - 1)));
  x_shape_ = x.shape();
  x_ = x.reshaped({int(n), in_});

  Tensor y({int(n), out_});
  const double* w = weight.value.data();
  const double* b = bias.value.data();
  for (int64_t i = 0; i < n; ++i) {
    const double* xr = x_.data() + i * in_;
    double* yr = y.data() + i * out_;
    for (int o = 0; o < out_; ++o) {
      const double* wr = w + int64_t(o) * in_;
      double acc = b[o];
      for (int j = 0; j < in_; ++j) acc += wr[j] * xr[j];
      yr[o] = acc;
    }
  }
  std::vector<int> out_shape = x_shape_;
  out_shape.back() = out_;
  return y.reshaped(out_shape);
}

Tensor Linear::backward(const Tensor& dy_in) {
  const int64_t n = leading(dy_in);
  Tensor dy = dy_in.reshaped({int(n), out_});
  Tensor dx({int(n), in_});
  double* dw = weight.grad.data();
  double* db = bias.grad.data();
  const double* w = weight.value.data();
  for (int64_t i = 0; i < n; ++i) {
    const double* xr = x_.data() + i * in_;
    const double* dyr = dy.data() + i * out_;
    double* dxr = dx.data() + i * in_;
    for (int o = 0; o < out_; ++o) {
      const double g = dyr[o];
      if (g == 0.0) continue;
      const double* wr = w + int64_t(o) * in_;
      double* dwr = dw + int64_t(o) * in_;
      for (int j = 0; j < in_; ++j) {
        dwr[j] += g * xr[j];
        dxr[j] += g * wr[j];
      }
      db[o] += g;
    }
  }
  return dx.reshaped(x_shape_);
}

void Linear::collect_params(std::vector<Param*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

// ---------------------------------------------------------------- ReLU

Tensor ReLU::forward(const Tensor& x, bool) {
  Tensor y = x;
  mask_.assign(size_t(x.size()), 0);
  for (int64_t i = 0; i < x.size(); ++i) {
    if (y[i] > 0.0)
      mask_[size_t(i)] = 1;
    else
      y[i] = 0.0;
  }
  return y;
}

Tensor ReLU::backward(const Tensor& dy) {
  Tensor dx = dy;
  for (int64_t i = 0; i < dx.size(); ++i)
    if (!mask_[size_t(i)]) dx[i] = 0.0;
  return dx;
}

// ---------------------------------------------------------------- Gelu

Tensor Gelu::forward(const Tensor& x, bool) {
  x_ = x;
  Tensor y = x;
  for (int64_t i = 0; i < y.size(); ++i) {
    const double v = y[i];
    y[i] = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
  }
  return y;
}

Tensor Gelu::backward(const Tensor& dy) {
  Tensor dx = dy;
  constexpr double inv_sqrt_2pi = 0.3989422804014326779399460599344;
  for (int64_t i = 0; i < dx.size(); ++i) {
    const double v = x_[i];
    const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
    const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
    dx[i] *= cdf + v * pdf;
  }
  return dx;
}

LayerPtr make_activation(const std::string& kind, std::string name) {
  if (kind == "relu") return std::make_unique<ReLU>(std::move(name));
  if (kind == "gelu") return std::make_unique<Gelu>(std::move(name));
  if (kind == "identity") return std::make_unique<Identity>(std::move(name));
  throw ConfigError("unknown activation '" + kind + "'");
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::string name, int in_ch, int out_ch, int kernel, int stride, int pad, Rng init,
               int groups)
    : Layer(std::move(name)),
      weight(this->name() + ".weight", Tensor({out_ch, in_ch / groups, kernel, kernel})),
      bias(this->name() + ".bias", Tensor({out_ch})),
      cin_(in_ch),
      cout_(out_ch),
      k_(kernel),
      stride_(stride),
      pad_(pad),
      groups_(groups) {
  if (in_ch % groups != 0 || out_ch % groups != 0)
    throw ConfigError(this->name() + ": channels not divisible by groups");
  he_init(weight.value, (in_ch / groups) * kernel * kernel, init, 2.0);
}

Tensor Conv2d::forward(const Tensor& x, bool) {
  if (x.ndim() != 4 || x.dim(1) != cin_)
    throw ConfigError(name() + ": expected (N," + std::to_string(cin_) + ",H,W) input");
  x_ = x;
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int oh = (h + 2 * pad_ - k_) / stride_ + 1;
  const int ow = (w + 2 * pad_ - k_) / stride_ + 1;
  const int cpg_in = cin_ / groups_, cpg_out = cout_ / groups_;

  Tensor y({n, cout_, oh, ow});
  for (int ni = 0; ni < n; ++ni) {
    for (int co = 0; co < cout_; ++co) {
      const int g = co / cpg_out;
      double* yplane = &y.at(ni, co, 0, 0);
      const double b = bias.value[co];
      for (int64_t i = 0; i < int64_t(oh) * ow; ++i) yplane[i] = b;
      for (int cl = 0; cl < cpg_in; ++cl) {
        const int ci = g * cpg_in + cl;
        const double* xplane = &x_.at(ni, ci, 0, 0);
        for (int ky = 0; ky < k_; ++ky) {
          for (int kx = 0; kx < k_; ++kx) {
            const double wv = weight.value.at(co, cl, ky, kx);
            // valid output column range for this kernel offset
            int ox_lo = 0, ox_hi = ow;
            while (ox_lo < ow && ox_lo * stride_ - pad_ + kx < 0) ++ox_lo;
            while (ox_hi > ox_lo && (ox_hi - 1) * stride_ - pad_ + kx >= w) --ox_hi;
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * stride_ - pad_ + ky;
              if (iy < 0 || iy >= h) continue;
              const double* xr = xplane + int64_t(iy) * w - pad_ + kx;
              double* yr = yplane + int64_t(oy) * ow;
              if (stride_ == 1) {
                for (int ox = ox_lo; ox < ox_hi; ++ox) yr[ox] += wv * xr[ox];
              } else {
                for (int ox = ox_lo; ox < ox_hi; ++ox) yr[ox] += wv * xr[int64_t(ox) * stride_];
              }
            }
          }
        }
      }
    }
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
  const int n = x_.dim(0), h = x_.dim(2), w = x_.dim(3);
  const int oh = dy.dim(2), ow = dy.dim(3);
  const int cpg_in = cin_ / groups_, cpg_out = cout_ / groups_;

  Tensor dx(x_.shape());
  for (int ni = 0; ni < n; ++ni) {
    for (int co = 0; co < cout_; ++co) {
      const int g = co / cpg_out;
      const double* dyplane = &dy.at(ni, co, 0, 0);
      double bsum = 0.0;
      for (int64_t i = 0; i < int64_t(oh) * ow; ++i) bsum += dyplane[i];
      bias.grad[co] += bsum;
      for (int cl = 0; cl < cpg_in; ++cl) {
        const int ci = g * cpg_in + cl;
        const double* xplane = &x_.at(ni, ci, 0, 0);
        double* dxplane = &dx.at(ni, ci, 0, 0);
        for (int ky = 0; ky < k_; ++ky) {
          for (int kx = 0; kx < k_; ++kx) {
            const double wv = weight.value.at(co, cl, ky, kx);
            double wgrad = 0.0;
            int ox_lo = 0, ox_hi = ow;
            while (ox_lo < ow && ox_lo * stride_ - pad_ + kx < 0) ++ox_lo;
            while (ox_hi > ox_lo && (ox_hi - 1) * stride_ - pad_ + kx >= w) --ox_hi;
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * stride_ - pad_ + ky;
              if (iy < 0 || iy >= h) continue;
              const double* xr = xplane + int64_t(iy) * w - pad_ + kx;
              double* dxr = dxplane + int64_t(iy) * w - pad_ + kx;
              const double* dyr = dyplane + int64_t(oy) * ow;
              if (stride_ == 1) {
                for (int ox = ox_lo; ox < ox_hi; ++ox) {
                  wgrad += dyr[ox] * xr[ox];
                  dxr[ox] += wv * dyr[ox];
                }
              } else {
                for (int ox = ox_lo; ox < ox_hi; ++ox) {
                  wgrad += dyr[ox] * xr[int64_t(ox) * stride_];
                  dxr[int64_t(ox) * stride_] += wv * dyr[ox];
                }
              }
            }
            weight.grad.at(co, cl, ky, kx) += wgrad;
          }
        }
      }
    }
  }
  return dx;
}

void Conv2d::collect_params(std::vector<Param*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

// ---------------------------------------------------------------- pooling

AvgPool2d::AvgPool2d(std::string name, int window) : Layer(std::move(name)), k_(window) {}

Tensor AvgPool2d::forward(const Tensor& x, bool) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % k_ != 0 || w % k_ != 0)
    throw ConfigError(name() + ": input sides must divide by the pooling window");
  in_shape_ = x.shape();
  const int oh = h / k_, ow = w / k_;
  const double inv = 1.0 / double(k_ * k_);
  Tensor y({n, c, oh, ow});
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (int dy = 0; dy < k_; ++dy)
            for (int dx2 = 0; dx2 < k_; ++dx2)
              acc += x.at(ni, ci, oy * k_ + dy, ox * k_ + dx2);
          y.at(ni, ci, oy, ox) = acc * inv;
        }
  return y;
}

Tensor AvgPool2d::backward(const Tensor& dy) {
  Tensor dx(in_shape_);
  const int oh = dy.dim(2), ow = dy.dim(3);
  const double inv = 1.0 / double(k_ * k_);
  for (int ni = 0; ni < dy.dim(0); ++ni)
    for (int ci = 0; ci < dy.dim(1); ++ci)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const double g = dy.at(ni, ci, oy, ox) * inv;
          for (int ddy = 0; ddy < k_; ++ddy)
            for (int ddx = 0; ddx < k_; ++ddx)
              dx.at(ni, ci, oy * k_ + ddy, ox * k_ + ddx) = g;
        }
  return dx;
}

Tensor GlobalAvgPool::forward(const Tensor& x, bool) {
  in_shape_ = x.shape();
  const int n = x.dim(0), c = x.dim(1);
  const int64_t hw = int64_t(x.dim(2)) * x.dim(3);
  Tensor y({n, c});
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      const double* p = &x.at(ni, ci, 0, 0);
      double acc = 0.0;
      for (int64_t i = 0; i < hw; ++i) acc += p[i];
      y.at(ni, ci) = acc / double(hw);
    }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy) {
  Tensor dx(in_shape_);
  const int64_t hw = int64_t(in_shape_[2]) * in_shape_[3];
  const double inv = 1.0 / double(hw);
  for (int ni = 0; ni < dy.dim(0); ++ni)
    for (int ci = 0; ci < dy.dim(1); ++ci) {
      const double g = dy.at(ni, ci) * inv;
      double* p = &dx.at(ni, ci, 0, 0);
      for (int64_t i = 0; i < hw; ++i) p[i] = g;
    }
  return dx;
}

Tensor Flatten::forward(const Tensor& x, bool) {
  in_shape_ = x.shape();
  int64_t rest = 1;
  for (int i = 1; i < x.ndim(); ++i) rest *= x.dim(i);
  return x.reshaped({x.dim(0), int(rest)});
}

Tensor Flatten::backward(const Tensor& dy) { return dy.reshaped(in_shape_); }

// ---------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(std::string name, int channels, double momentum, double eps)
    : Layer(std::move(name)),
      gamma(this->name() + ".gamma", Tensor::full({channels}, 1.0)),
      beta(this->name() + ".beta", Tensor({channels})),
      running_mean(this->name() + ".running_mean", Tensor({channels}), false),
      running_var(this->name() + ".running_var", Tensor::full({channels}, 1.0), false),
      c_(channels),
      momentum_(momentum),
      eps_(eps) {}

Tensor BatchNorm::forward(const Tensor& x, bool training) {
  if (!(x.ndim() == 2 || x.ndim() == 4) || x.dim(1) != c_)
    throw ConfigError(name() + ": expected (N,C) or (N,C,H,W) with C=" + std::to_string(c_));
  in_shape_ = x.shape();
  trained_forward_ = training;
  const int n = x.dim(0);
  const int64_t spatial = x.ndim() == 4 ? int64_t(x.dim(2)) * x.dim(3) : 1;
  const int64_t m = int64_t(n) * spatial;

  auto value = [&](const Tensor& t, int ni, int ci, int64_t s) -> double {
    return t.data()[x.ndim() == 4 ? (size_t(ni) * c_ + ci) * spatial + s : size_t(ni) * c_ + ci];
  };
  auto ref = [&](Tensor& t, int ni, int ci, int64_t s) -> double& {
    return t.data()[x.ndim() == 4 ? (size_t(ni) * c_ + ci) * spatial + s : size_t(ni) * c_ + ci];
  };

  xhat_ = Tensor(x.shape());
  invstd_.assign(size_t(c_), 0.0);
  Tensor y(x.shape());
  for (int ci = 0; ci < c_; ++ci) {
    double mean, var;
    if (training) {
      double sum = 0.0, sq = 0.0;
      for (int ni = 0; ni < n; ++ni)
        for (int64_t s = 0; s < spatial; ++s) {
          const double v = value(x, ni, ci, s);
          sum += v;
          sq += v * v;
        }
      mean = sum / double(m);
      var = std::max(0.0, sq / double(m) - mean * mean);
      running_mean.value[ci] = (1.0 - momentum_) * running_mean.value[ci] + momentum_ * mean;
      running_var.value[ci] = (1.0 - momentum_) * running_var.value[ci] + momentum_ * var;
    } else {
      mean = running_mean.value[ci];
      var = running_var.value[ci];
    }
    const double inv = 1.0 / std::sqrt(var + eps_);
    invstd_[size_t(ci)] = inv;
    const double g = gamma.value[ci], b = beta.value[ci];
    for (int ni = 0; ni < n; ++ni)
      for (int64_t s = 0; s < spatial; ++s) {
        const double xh = (value(x, ni, ci, s) - mean) * inv;
        ref(xhat_, ni, ci, s) = xh;
        ref(y, ni, ci, s) = g * xh + b;
      }
  }
  return y;
}

Tensor BatchNorm::backward(const Tensor& dy) {
  const int n = in_shape_[0];
  const int64_t spatial = in_shape_.size() == 4 ? int64_t(in_shape_[2]) * in_shape_[3] : 1;
  const int64_t m = int64_t(n) * spatial;
  const bool four = in_shape_.size() == 4;

  auto value = [&](const Tensor& t, int ni, int ci, int64_t s) -> double {
    return t.data()[four ? (size_t(ni) * c_ + ci) * spatial + s : size_t(ni) * c_ + ci];
  };
  auto ref = [&](Tensor& t, int ni, int ci, int64_t s) -> double& {
    return t.data()[four ? (size_t(ni) * c_ + ci) * spatial + s : size_t(ni) * c_ + ci];
  };

  Tensor dx(in_shape_);
  for (int ci = 0; ci < c_; ++ci) {
    const double g = gamma.value[ci];
    const double inv = invstd_[size_t(ci)];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int ni = 0; ni < n; ++ni)
      for (int64_t s = 0; s < spatial; ++s) {
        const double d = value(dy, ni, ci, s);
        sum_dy += d;
        sum_dy_xhat += d * value(xhat_, ni, ci, s);
      }
    gamma.grad[ci] += sum_dy_xhat;
    beta.grad[ci] += sum_dy;

    if (trained_forward_) {
      const double invm = 1.0 / double(m);
      for (int ni = 0; ni < n; ++ni)
        for (int64_t s = 0; s < spatial; ++s) {
          const double d = value(dy, ni, ci, s);
          const double xh = value(xhat_, ni, ci, s);
          ref(dx, ni, ci, s) = g * inv * (d - invm * sum_dy - xh * invm * sum_dy_xhat);
        }
    } else {
      for (int ni = 0; ni < n; ++ni)
        for (int64_t s = 0; s < spatial; ++s)
          ref(dx, ni, ci, s) = g * inv * value(dy, ni, ci, s);
    }
  }
  return dx;
}

void BatchNorm::collect_params(std::vector<Param*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
  out.push_back(&running_mean);
  out.push_back(&running_var);
}

// ---------------------------------------------------------------- Dropout

Dropout::Dropout(std::string name, double rate, Rng* stream)
    : Layer(std::move(name)), rate_(rate), stream_(stream) {
  if (rate_ < 0.0 || rate_ >= 1.0) throw ConfigError(this->name() + ": dropout rate outside [0,1)");
}

Tensor Dropout::forward(const Tensor& x, bool training) {
  active_ = training && rate_ > 0.0;
  if (!active_) return x;
  const double keep = 1.0 - rate_;
  const double scale = 1.0 / keep;
  mask_.assign(size_t(x.size()), 0.0);
  Tensor y = x;
  for (int64_t i = 0; i < x.size(); ++i) {
    if (stream_->uniform() < keep) {
      mask_[size_t(i)] = scale;
      y[i] *= scale;
    } else {
      y[i] = 0.0;
    }
  }
  return y;
}

Tensor Dropout::backward(const Tensor& dy) {
  if (!active_) return dy;
  Tensor dx = dy;
  for (int64_t i = 0; i < dx.size(); ++i) dx[i] *= mask_[size_t(i)];
  return dx;
}

// ---------------------------------------------------------------- LayerNorm

LayerNorm::LayerNorm(std::string name, int features, double eps)
    : Layer(std::move(name)),
      gamma(this->name() + ".gamma", Tensor::full({features}, 1.0)),
      beta(this->name() + ".beta", Tensor({features})),
      e_(features),
      eps_(eps) {}

Tensor LayerNorm::forward(const Tensor& x, bool) {
  const int64_t n = leading(x);
  if (x.dim(x.ndim() - 1) != e_) throw ConfigError(name() + ": feature dim mismatch");
  xhat_ = Tensor(x.shape());
  invstd_.assign(size_t(n), 0.0);
  Tensor y(x.shape());
  for (int64_t i = 0; i < n; ++i) {
    const double* xr = x.data() + i * e_;
    double sum = 0.0, sq = 0.0;
    for (int j = 0; j < e_; ++j) {
      sum += xr[j];
      sq += xr[j] * xr[j];
    }
    const double mean = sum / e_;
    const double var = std::max(0.0, sq / e_ - mean * mean);
    const double inv = 1.0 / std::sqrt(var + eps_);
    invstd_[size_t(i)] = inv;
    double* xh = xhat_.data() + i * e_;
    double* yr = y.data() + i * e_;
    for (int j = 0; j < e_; ++j) {
      xh[j] = (xr[j] - mean) * inv;
      yr[j] = gamma.value[j] * xh[j] + beta.value[j];
    }
  }
  return y;
}

Tensor LayerNorm::backward(const Tensor& dy) {
  const int64_t n = leading(dy);
  Tensor dx(dy.shape());
  for (int64_t i = 0; i < n; ++i) {
    const double* dyr = dy.data() + i * e_;
    const double* xh = xhat_.data() + i * e_;
    const double inv = invstd_[size_t(i)];
    double sum_d = 0.0, sum_dx = 0.0;
    for (int j = 0; j < e_; ++j) {
      const double d = dyr[j] * gamma.value[j];
      sum_d += d;
      sum_dx += d * xh[j];
      gamma.grad[j] += dyr[j] * xh[j];
      beta.grad[j] += dyr[j];
    }
    double* dxr = dx.data() + i * e_;
    const double inv_e = 1.0 / double(e_);
    for (int j = 0; j < e_; ++j) {
      const double d = dyr[j] * gamma.value[j];
      dxr[j] = inv * (d - inv_e * sum_d - xh[j] * inv_e * sum_dx);
    }
  }
  return dx;
}

void LayerNorm::collect_params(std::vector<Param*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

// ------------------------------------------------------------ SelfAttention

SelfAttention::SelfAttention(std::string name, int embed_dim, int heads, Rng init)
    : Layer(std::move(name)),
      wq(this->name() + ".wq", Tensor({embed_dim, embed_dim})),
      bq(this->name() + ".bq", Tensor({embed_dim})),
      wk(this->name() + ".wk", Tensor({embed_dim, embed_dim})),
      bk(this->name() + ".bk", Tensor({embed_dim})),
      wv(this->name() + ".wv", Tensor({embed_dim, embed_dim})),
      bv(this->name() + ".bv", Tensor({embed_dim})),
      wo(this->name() + ".wo", Tensor({embed_dim, embed_dim})),
      bo(this->name() + ".bo", Tensor({embed_dim})),
      e_(embed_dim),
      heads_(heads),
      head_dim_(embed_dim / heads) {
  if (embed_dim % heads != 0) throw ConfigError(this->name() + ": embed dim not divisible by heads");
  he_init(wq.value, e_, init, 1.0);
  he_init(wk.value, e_, init, 1.0);
  he_init(wv.value, e_, init, 1.0);
  he_init(wo.value, e_, init, 1.0);
}

namespace {

// y(n,t,:) = x(n,t,:) W^T + b, with W (E,E)
Tensor project(const Tensor& x, const Tensor& w, const Tensor& b) {
  const int n = x.dim(0), t = x.dim(1), e = x.dim(2);
  Tensor y({n, t, e});
  for (int ni = 0; ni < n; ++ni)
    for (int ti = 0; ti < t; ++ti) {
      const double* xr = &x.at(ni, ti, 0);
      double* yr = &y.at(ni, ti, 0);
      for (int o = 0; o < e; ++o) {
        const double* wr = w.data() + int64_t(o) * e;
        double acc = b[o];
        for (int j = 0; j < e; ++j) acc += wr[j] * xr[j];
        yr[o] = acc;
      }
    }
  return y;
}

// accumulates dW, dB and returns dX for the projection above
Tensor project_backward(const Tensor& x, const Tensor& w, Param& wp, Param& bp, const Tensor& dy) {
  const int n = x.dim(0), t = x.dim(1), e = x.dim(2);
  Tensor dx({n, t, e});
  for (int ni = 0; ni < n; ++ni)
    for (int ti = 0; ti < t; ++ti) {
      const double* xr = &x.at(ni, ti, 0);
      const double* dyr = &dy.at(ni, ti, 0);
      double* dxr = &dx.at(ni, ti, 0);
      for (int o = 0; o < e; ++o) {
        const double g = dyr[o];
        if (g == 0.0) continue;
        const double* wr = w.data() + int64_t(o) * e;
        double* dwr = wp.grad.data() + int64_t(o) * e;
        for (int j = 0; j < e; ++j) {
          dwr[j] += g * xr[j];
          dxr[j] += g * wr[j];
        }
        bp.grad[o] += g;
      }
    }
  return dx;
}

}  // namespace

Tensor SelfAttention::forward(const Tensor& x, bool) {
  if (x.ndim() != 3 || x.dim(2) != e_) throw ConfigError(name() + ": expected (N,T,E) input");
  x_ = x;
  const int n = x.dim(0), t = x.dim(1);
  q_ = project(x, wq.value, bq.value);
  k_ = project(x, wk.value, bk.value);
  v_ = project(x, wv.value, bv.value);

  const double scale = 1.0 / std::sqrt(double(head_dim_));
  attn_ = Tensor({n, heads_, t, t});
  concat_ = Tensor({n, t, e_});
  for (int ni = 0; ni < n; ++ni) {
    for (int hd = 0; hd < heads_; ++hd) {
      const int off = hd * head_dim_;
      for (int ti = 0; ti < t; ++ti) {
        double* arow = &attn_.at(ni, hd, ti, 0);
        const double* qr = &q_.at(ni, ti, off);
        double maxv = -1e300;
        for (int tj = 0; tj < t; ++tj) {
          const double* kr = &k_.at(ni, tj, off);
          double s = 0.0;
          for (int d = 0; d < head_dim_; ++d) s += qr[d] * kr[d];
          arow[tj] = s * scale;
          maxv = std::max(maxv, arow[tj]);
        }
        double z = 0.0;
        for (int tj = 0; tj < t; ++tj) {
          arow[tj] = std::exp(arow[tj] - maxv);
          z += arow[tj];
        }
        for (int tj = 0; tj < t; ++tj) arow[tj] /= z;
        double* orow = &concat_.at(ni, ti, off);
        for (int d = 0; d < head_dim_; ++d) orow[d] = 0.0;
        for (int tj = 0; tj < t; ++tj) {
          const double a = arow[tj];
          const double* vr = &v_.at(ni, tj, off);
          for (int d = 0; d < head_dim_; ++d) orow[d] += a * vr[d];
        }
      }
    }
  }
  return project(concat_, wo.value, bo.value);
}

Tensor SelfAttention::backward(const Tensor& dy) {
  const int n = x_.dim(0), t = x_.dim(1);
  const double scale = 1.0 / std::sqrt(double(head_dim_));

  Tensor dconcat = project_backward(concat_, wo.value, wo, bo, dy);
  Tensor dq({n, t, e_}), dk({n, t, e_}), dv({n, t, e_});

  std::vector<double> da(static_cast<size_t>(t));
  for (int ni = 0; ni < n; ++ni) {
    for (int hd = 0; hd < heads_; ++hd) {
      const int off = hd * head_dim_;
      for (int ti = 0; ti < t; ++ti) {
        const double* arow = &attn_.at(ni, hd, ti, 0);
        const double* dor = &dconcat.at(ni, ti, off);
        // dA = dO V^T ; dV += A^T dO
        double dot = 0.0;
        for (int tj = 0; tj < t; ++tj) {
          const double* vr = &v_.at(ni, tj, off);
          double s = 0.0;
          for (int d = 0; d < head_dim_; ++d) s += dor[d] * vr[d];
          da[size_t(tj)] = s;
          dot += s * arow[tj];
          double* dvr = &dv.at(ni, tj, off);
          const double a = arow[tj];
          for (int d = 0; d < head_dim_; ++d) dvr[d] += a * dor[d];
        }
        // softmax backward, then scores -> Q,K
        const double* qr = &q_.at(ni, ti, off);
        double* dqr = &dq.at(ni, ti, off);
        for (int tj = 0; tj < t; ++tj) {
          const double ds = arow[tj] * (da[size_t(tj)] - dot) * scale;
          const double* kr = &k_.at(ni, tj, off);
          double* dkr = &dk.at(ni, tj, off);
          for (int d = 0; d < head_dim_; ++d) {
            dqr[d] += ds * kr[d];
            dkr[d] += ds * qr[d];
          }
        }
      }
    }
  }

  Tensor dx = project_backward(x_, wq.value, wq, bq, dq);
  Tensor dxk = project_backward(x_, wk.value, wk, bk, dk);
  Tensor dxv = project_backward(x_, wv.value, wv, bv, dv);
  for (int64_t i = 0; i < dx.size(); ++i) dx[i] += dxk[i] + dxv[i];
  return dx;
}

void SelfAttention::collect_params(std::vector<Param*>& out) {
  for (Param* p : {&wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo}) out.push_back(p);
}

// ---------------------------------------------------- PositionalEmbedding

PositionalEmbedding::PositionalEmbedding(std::string name, int tokens, int embed_dim, Rng init)
    : Layer(std::move(name)), table(this->name() + ".table", Tensor({tokens, embed_dim})) {
  for (int64_t i = 0; i < table.value.size(); ++i) table.value[i] = init.normal(0.0, 0.02);
}

Tensor PositionalEmbedding::forward(const Tensor& x, bool) {
  if (x.ndim() != 3 || x.dim(1) != table.value.dim(0) || x.dim(2) != table.value.dim(1))
    throw ConfigError(name() + ": token grid mismatch");
  Tensor y = x;
  const int n = x.dim(0);
  const int64_t te = table.value.size();
  for (int ni = 0; ni < n; ++ni) {
    double* yr = y.data() + int64_t(ni) * te;
    for (int64_t i = 0; i < te; ++i) yr[i] += table.value[i];
  }
  return y;
}

Tensor PositionalEmbedding::backward(const Tensor& dy) {
  const int n = dy.dim(0);
  const int64_t te = table.value.size();
  for (int ni = 0; ni < n; ++ni) {
    const double* dyr = dy.data() + int64_t(ni) * te;
    for (int64_t i = 0; i < te; ++i) table.grad[i] += dyr[i];
  }
  return dy;
}

void PositionalEmbedding::collect_params(std::vector<Param*>& out) { out.push_back(&table); }

// ---------------------------------------------------------------- tokens

Tensor ToTokens::forward(const Tensor& x, bool) {
  const int n = x.dim(0), c = x.dim(1);
  h_ = x.dim(2);
  w_ = x.dim(3);
  Tensor y({n, h_ * w_, c});
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci)
      for (int yy = 0; yy < h_; ++yy)
        for (int xx = 0; xx < w_; ++xx)
          y.at(ni, yy * w_ + xx, ci) = x.at(ni, ci, yy, xx);
  return y;
}

Tensor ToTokens::backward(const Tensor& dy) {
  const int n = dy.dim(0), c = dy.dim(2);
  Tensor dx({n, c, h_, w_});
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci)
      for (int yy = 0; yy < h_; ++yy)
        for (int xx = 0; xx < w_; ++xx)
          dx.at(ni, ci, yy, xx) = dy.at(ni, yy * w_ + xx, ci);
  return dx;
}

Tensor TokenMean::forward(const Tensor& x, bool) {
  const int n = x.dim(0), e = x.dim(2);
  t_ = x.dim(1);
  Tensor y({n, e});
  for (int ni = 0; ni < n; ++ni)
    for (int ti = 0; ti < t_; ++ti)
      for (int j = 0; j < e; ++j) y.at(ni, j) += x.at(ni, ti, j);
  for (int64_t i = 0; i < y.size(); ++i) y[i] /= double(t_);
  return y;
}

Tensor TokenMean::backward(const Tensor& dy) {
  const int n = dy.dim(0), e = dy.dim(1);
  Tensor dx({n, t_, e});
  const double inv = 1.0 / double(t_);
  for (int ni = 0; ni < n; ++ni)
    for (int ti = 0; ti < t_; ++ti)
      for (int j = 0; j < e; ++j) dx.at(ni, ti, j) = dy.at(ni, j) * inv;
  return dx;
}

// ---------------------------------------------------------------- Residual

Residual::Residual(std::string name, std::unique_ptr<Sequential> inner)
    : Layer(std::move(name)), inner_(std::move(inner)) {}

Tensor Residual::forward(const Tensor& x, bool training) {
  Tensor y = inner_->forward(x, training);
  if (!y.same_shape(x)) throw ConfigError(name() + ": residual branch changed the shape");
  for (int64_t i = 0; i < y.size(); ++i) y[i] += x[i];
  return y;
}

Tensor Residual::backward(const Tensor& dy) {
  Tensor dx = inner_->backward(dy);
  for (int64_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
  return dx;
}

void Residual::collect_params(std::vector<Param*>& out) { inner_->collect_params(out); }

// ---------------------------------------------------------------- Sequential

Tensor Sequential::forward(const Tensor& x, bool training) {
  Tensor cur = x;
  for (size_t i = 0; i < layers_.size(); ++i) {
    cur = layers_[i]->forward(cur, training);
    if (tap_index_ == int(i)) tap_act_ = cur;
  }
  return cur;
}

Tensor Sequential::backward(const Tensor& dy) {
  Tensor cur = dy;
  for (size_t i = layers_.size(); i-- > 0;) {
    if (tap_index_ == int(i)) tap_grad_ = cur;
    cur = layers_[i]->backward(cur);
  }
  return cur;
}

void Sequential::collect_params(std::vector<Param*>& out) {
  for (auto& l : layers_) l->collect_params(out);
}

bool Sequential::has_layer(const std::string& name) const {
  for (const auto& l : layers_)
    if (l->name() == name) return true;
  return false;
}

Layer* Sequential::layer(const std::string& name) {
  for (auto& l : layers_)
    if (l->name() == name) return l.get();
  return nullptr;
}

void Sequential::set_tap(const std::string& layer_name) {
  tap_name_ = layer_name;
  tap_index_ = -1;
  tap_act_ = Tensor();
  tap_grad_ = Tensor();
  if (layer_name.empty()) return;
  for (size_t i = 0; i < layers_.size(); ++i)
    if (layers_[i]->name() == layer_name) {
      tap_index_ = int(i);
      return;
    }
  throw ConfigError(name() + ": no layer named '" + layer_name + "'");
}

// ---------------------------------------------------------------- Adam

AdamOptimizer::AdamOptimizer(std::vector<Param*> params, double lr, double beta1, double beta2,
                             double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (Param* p : params)
    if (p->learnable) params_.push_back(p);
  for (Param* p : params_) {
    m_.push_back(Tensor::zeros(p->value.shape()));
    v_.push_back(Tensor::zeros(p->value.shape()));
  }
}

void AdamOptimizer::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, double(t_));
  const double bc2 = 1.0 - std::pow(beta2_, double(t_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Param& p = *params_[pi];
    Tensor& m = m_[pi];
    Tensor& v = v_[pi];
    for (int64_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void AdamOptimizer::zero_grad() {
  for (Param* p : params_) p->zero_grad();
}

// ---------------------------------------------------------------- utilities

uint64_t parameter_checksum(const std::vector<Param*>& params) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const Param* p : params) {
    if (!p->learnable) continue;
    const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
    const size_t n = size_t(p->value.size()) * sizeof(double);
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

int64_t parameter_count(const std::vector<Param*>& params) {
  int64_t n = 0;
  for (const Param* p : params)
    if (p->learnable) n += p->value.size();
  return n;
}

}  // namespace nn
}  // namespace mvdet
