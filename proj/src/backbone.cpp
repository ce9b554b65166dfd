#include "mvdet/backbone.hpp"

#include <array>

#include "mvdet/error.hpp"

namespace mvdet {

using namespace nn;

std::string to_string(BackboneFamily family) {
  switch (family) {
    case BackboneFamily::TinyTest: return "tiny-test";
    case BackboneFamily::ResidualConv: return "residual-conv";
    case BackboneFamily::ImageTransformer: return "image-transformer";
    case BackboneFamily::MobileConv: return "mobile-conv";
  }
  return "?";
}

BackboneFamily backbone_family_from_string(const std::string& s) {
  if (s == "tiny-test") return BackboneFamily::TinyTest;
  if (s == "residual-conv") return BackboneFamily::ResidualConv;
  if (s == "image-transformer") return BackboneFamily::ImageTransformer;
  if (s == "mobile-conv") return BackboneFamily::MobileConv;
  throw ConfigError("unknown backbone family '" + s + "'");
}

int BackboneSpec::resolved_feature_dim() const {
  if (feature_dim > 0) return feature_dim;
  switch (family) {
    case BackboneFamily::TinyTest: return 16;
    case BackboneFamily::ResidualConv: return 2048;
    case BackboneFamily::ImageTransformer: return 768;
    case BackboneFamily::MobileConv: return 1024;
  }
  return 16;
}

void BackboneSpec::validate() const {
  const int d = resolved_feature_dim();
  if (d < 8) throw ConfigError("backbone feature_dim must be >= 8, got " + std::to_string(d));
  if (input_side < 16) throw ConfigError("backbone input side too small");
  if (family == BackboneFamily::ImageTransformer) {
    if (patch <= 0 || input_side % patch != 0)
      throw ConfigError("transformer patch must divide the input side");
    if (heads <= 0 || d % heads != 0)
      throw ConfigError("transformer feature_dim must divide by heads");
  }
  if (family == BackboneFamily::TinyTest && input_side % 16 != 0)
    throw ConfigError("tiny-test input side must divide by 16");
}

namespace {

// Residual conv block with optional projection shortcut; the output ReLU is
// part of the block so its activation is the natural Grad-CAM tap.
class ConvBlock : public Layer {
public:
  ConvBlock(std::string name, int cin, int cout, int stride, Rng init)
      : Layer(std::move(name)), main_(std::make_unique<Sequential>(this->name() + ".main")) {
    main_->add(std::make_unique<Conv2d>(this->name() + ".conv1", cin, cout, 3, stride, 1,
                                        init.child(1)));
    main_->add(std::make_unique<BatchNorm>(this->name() + ".bn1", cout));
    main_->add(std::make_unique<ReLU>(this->name() + ".relu1"));
    main_->add(std::make_unique<Conv2d>(this->name() + ".conv2", cout, cout, 3, 1, 1,
                                        init.child(2)));
    main_->add(std::make_unique<BatchNorm>(this->name() + ".bn2", cout));
    if (stride != 1 || cin != cout) {
      shortcut_ = std::make_unique<Sequential>(this->name() + ".shortcut");
      shortcut_->add(std::make_unique<Conv2d>(this->name() + ".proj", cin, cout, 1, stride, 0,
                                              init.child(3)));
      shortcut_->add(std::make_unique<BatchNorm>(this->name() + ".projbn", cout));
    }
  }

  Tensor forward(const Tensor& x, bool training) override {
    Tensor y = main_->forward(x, training);
    Tensor s = shortcut_ ? shortcut_->forward(x, training) : x;
    mask_.assign(size_t(y.size()), 0);
    for (int64_t i = 0; i < y.size(); ++i) {
      double v = y[i] + s[i];
      if (v > 0.0) {
        mask_[size_t(i)] = 1;
        y[i] = v;
      } else {
        y[i] = 0.0;
      }
    }
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    Tensor d = dy;
    for (int64_t i = 0; i < d.size(); ++i)
      if (!mask_[size_t(i)]) d[i] = 0.0;
    Tensor dx = main_->backward(d);
    if (shortcut_) {
      Tensor ds = shortcut_->backward(d);
      for (int64_t i = 0; i < dx.size(); ++i) dx[i] += ds[i];
    } else {
      for (int64_t i = 0; i < dx.size(); ++i) dx[i] += d[i];
    }
    return dx;
  }

  void collect_params(std::vector<Param*>& out) override {
    main_->collect_params(out);
    if (shortcut_) shortcut_->collect_params(out);
  }

private:
  std::unique_ptr<Sequential> main_;
  std::unique_ptr<Sequential> shortcut_;
  std::vector<char> mask_;
};

BackboneNet build_tiny_test(const BackboneSpec& spec, Rng init) {
  const int d = spec.resolved_feature_dim();
  const int c = spec.base_channels > 0 ? spec.base_channels : 8;
  const int s1 = spec.input_side / 8;
  const int s2 = s1 / 2;

  BackboneNet bb;
  bb.feature_dim = d;
  bb.net = std::make_unique<Sequential>("tiny");
  bb.net->add(std::make_unique<AvgPool2d>("entry_pool", 8));
  bb.net->add(std::make_unique<Conv2d>("conv1", 3, c, 3, 1, 1, init.child(1)));
  bb.net->add(std::make_unique<ReLU>("relu1"));
  bb.net->add(std::make_unique<AvgPool2d>("pool1", 2));
  bb.net->add(std::make_unique<Conv2d>("conv2", c, 2 * c, 3, 1, 1, init.child(2)));
  bb.net->add(std::make_unique<ReLU>("relu2"));
  bb.net->add(std::make_unique<Flatten>("flatten"));
  bb.net->add(std::make_unique<Linear>("proj", 2 * c * s2 * s2, d, init.child(3)));
  bb.last_spatial = "relu2";
  bb.spatial["conv1"] = {s1, s1, false};
  bb.spatial["relu1"] = {s1, s1, false};
  bb.spatial["conv2"] = {s2, s2, false};
  bb.spatial["relu2"] = {s2, s2, false};
  return bb;
}

BackboneNet build_residual_conv(const BackboneSpec& spec, Rng init) {
  const int d = spec.resolved_feature_dim();
  const int w = std::max(8, d / 8);
  const int blocks = spec.depth > 0 ? spec.depth : 2;
  int side = spec.input_side / 4;  // stem conv /2, stem pool /2

  BackboneNet bb;
  bb.feature_dim = d;
  bb.net = std::make_unique<Sequential>("resconv");
  bb.net->add(std::make_unique<Conv2d>("stem", 3, w, 7, 2, 3, init.child(1)));
  bb.net->add(std::make_unique<BatchNorm>("stem_bn", w));
  bb.net->add(std::make_unique<ReLU>("stem_relu"));
  bb.net->add(std::make_unique<AvgPool2d>("stem_pool", 2));

  int cin = w;
  std::string last;
  for (int stage = 0; stage < 4; ++stage) {
    const int cout = w << stage;
    for (int b = 0; b < blocks; ++b) {
      const int stride = (b == 0 && stage > 0) ? 2 : 1;
      if (stride == 2) side /= 2;
      last = "s" + std::to_string(stage) + "b" + std::to_string(b);
      bb.net->add(std::make_unique<ConvBlock>(last, cin, cout, stride,
                                              init.child(uint64_t(16 + stage * 8 + b))));
      bb.spatial[last] = {side, side, false};
      cin = cout;
    }
  }
  bb.net->add(std::make_unique<GlobalAvgPool>("gap"));
  if (cin != d) bb.net->add(std::make_unique<Linear>("proj", cin, d, init.child(99)));
  bb.last_spatial = last;
  return bb;
}

BackboneNet build_image_transformer(const BackboneSpec& spec, Rng init) {
  const int d = spec.resolved_feature_dim();
  const int g = spec.input_side / spec.patch;
  const int tokens = g * g;
  const int blocks = spec.depth > 0 ? spec.depth : 4;

  BackboneNet bb;
  bb.feature_dim = d;
  bb.net = std::make_unique<Sequential>("vit");
  bb.net->add(std::make_unique<Conv2d>("patch_embed", 3, d, spec.patch, spec.patch, 0,
                                       init.child(1)));
  bb.net->add(std::make_unique<ToTokens>("tokens"));
  bb.net->add(std::make_unique<PositionalEmbedding>("pos", tokens, d, init.child(2)));
  for (int i = 0; i < blocks; ++i) {
    const std::string base = "blk" + std::to_string(i);
    auto attn = std::make_unique<Sequential>(base + "_attn_fn");
    attn->add(std::make_unique<LayerNorm>(base + "_ln1", d));
    attn->add(std::make_unique<SelfAttention>(base + "_attn", d, spec.heads,
                                              init.child(uint64_t(16 + 2 * i))));
    bb.net->add(std::make_unique<Residual>(base + "_res1", std::move(attn)));

    auto mlp = std::make_unique<Sequential>(base + "_mlp_fn");
    mlp->add(std::make_unique<LayerNorm>(base + "_ln2", d));
    mlp->add(std::make_unique<Linear>(base + "_fc1", d, 4 * d, init.child(uint64_t(17 + 2 * i))));
    mlp->add(std::make_unique<Gelu>(base + "_gelu"));
    mlp->add(std::make_unique<Linear>(base + "_fc2", 4 * d, d, init.child(uint64_t(18 + 2 * i))));
    auto res = std::make_unique<Residual>(base + "_res2", std::move(mlp));
    bb.net->add(std::move(res));
    bb.spatial[base + "_res2"] = {g, g, true};
  }
  bb.net->add(std::make_unique<LayerNorm>("final_ln", d));
  bb.spatial["final_ln"] = {g, g, true};
  bb.net->add(std::make_unique<TokenMean>("pool"));
  bb.last_spatial = "final_ln";
  return bb;
}

BackboneNet build_mobile_conv(const BackboneSpec& spec, Rng init) {
  const int d = spec.resolved_feature_dim();
  const int w = std::max(8, d / 8);
  int side = spec.input_side / 2;

  BackboneNet bb;
  bb.feature_dim = d;
  bb.net = std::make_unique<Sequential>("mobile");
  bb.net->add(std::make_unique<Conv2d>("stem", 3, w, 3, 2, 1, init.child(1)));
  bb.net->add(std::make_unique<BatchNorm>("stem_bn", w));
  bb.net->add(std::make_unique<ReLU>("stem_relu"));

  int cin = w;
  std::string last = "stem_relu";
  for (int i = 0; i < 4; ++i) {
    const int cout = w << i;
    const std::string base = "m" + std::to_string(i);
    side /= 2;
    bb.net->add(std::make_unique<Conv2d>(base + "_dw", cin, cin, 3, 2, 1,
                                         init.child(uint64_t(10 + 4 * i)), cin));
    bb.net->add(std::make_unique<BatchNorm>(base + "_dwbn", cin));
    bb.net->add(std::make_unique<ReLU>(base + "_dwrelu"));
    bb.net->add(std::make_unique<Conv2d>(base + "_pw", cin, cout, 1, 1, 0,
                                         init.child(uint64_t(11 + 4 * i))));
    bb.net->add(std::make_unique<BatchNorm>(base + "_pwbn", cout));
    bb.net->add(std::make_unique<ReLU>(base + "_pwrelu"));
    bb.spatial[base + "_pwrelu"] = {side, side, false};
    last = base + "_pwrelu";
    cin = cout;
  }
  bb.net->add(std::make_unique<GlobalAvgPool>("gap"));
  if (cin != d) bb.net->add(std::make_unique<Linear>("proj", cin, d, init.child(99)));
  bb.last_spatial = last;
  return bb;
}

}  // namespace

BackboneNet build_backbone(const BackboneSpec& spec, Rng init) {
  spec.validate();
  switch (spec.family) {
    case BackboneFamily::TinyTest: return build_tiny_test(spec, init);
    case BackboneFamily::ResidualConv: return build_residual_conv(spec, init);
    case BackboneFamily::ImageTransformer: return build_image_transformer(spec, init);
    case BackboneFamily::MobileConv: return build_mobile_conv(spec, init);
  }
  throw ConfigError("unreachable backbone family");
}

}  // namespace mvdet
