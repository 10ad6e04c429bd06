#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mglab/nn/conv.hpp"
#include "mglab/tensor.hpp"

namespace mglab::nn {

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  void zero_grad() { grad = Tensor<T>(value.shape()); }
};

/// Affine map from an output index to the input-grid coordinate of its
/// receptive-field center: input = scale * output + offset.
struct CoordMap {
  double scale = 1.0;
  double offset = 0.0;

  // `this` maps layer outputs to layer inputs; `inner` is applied first.
  CoordMap compose(const CoordMap& inner) const { return {scale * inner.scale, scale * inner.offset + offset}; }
  double to_input(double out) const { return scale * out + offset; }
  double to_output(double in) const { return (in - offset) / scale; }
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual Tensor<T> forward(const Tensor<T>& in) const = 0;
  // Accumulates parameter gradients; returns d(loss)/d(in) when requested.
  virtual Tensor<T> backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& grad_out,
                             bool need_input_grad) = 0;
  virtual std::vector<Param<T>*> params() { return {}; }
  virtual CoordMap coord_map() const { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;
  // Appends the on/off pattern of every data-dependent kink crossed by `in`.
  virtual void collect_kinks(const Tensor<T>& /*in*/, std::vector<std::uint8_t>& /*sig*/) const {}
};

template <typename T>
void he_init(Tensor<T>& weight, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& w : weight.values()) w = static_cast<T>(dist(rng));
}

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::string name, ConvGeometry geom) : geom_(geom) {
    weight_.name = name + ".weight";
    bias_.name = name + ".bias";
    weight_.value = Tensor<T>({geom.out_channels, geom.in_channels, geom.kernel, geom.kernel});
    bias_.value = Tensor<T>({geom.out_channels});
    weight_.zero_grad();
    bias_.zero_grad();
  }

  void init(std::mt19937_64& rng) {
    he_init(weight_.value, geom_.in_channels * geom_.kernel * geom_.kernel, rng);
    bias_.value.fill(T{0});
  }

  const ConvGeometry& geometry() const { return geom_; }
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

  std::string kind() const override { return "conv2d"; }
  Shape output_shape(const Shape& in) const override {
    if (in.size() != 4 || in[1] != geom_.in_channels) {
      throw ShapeError(weight_.name + ": input " + shape_str(in) + " has wrong channel count");
    }
    return {in[0], geom_.out_channels, geom_.out_extent(in[2]), geom_.out_extent(in[3])};
  }
  Tensor<T> forward(const Tensor<T>& in) const override {
    return conv2d_forward(in, weight_.value, bias_.value, geom_);
  }
  Tensor<T> backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& grad_out,
                     bool need_input_grad) override {
    auto g = conv2d_backward(in, weight_.value, grad_out, geom_, need_input_grad);
    for (std::size_t i = 0; i < g.weight.size(); ++i) weight_.grad[i] += g.weight[i];
    for (std::size_t i = 0; i < g.bias.size(); ++i) bias_.grad[i] += g.bias[i];
    return std::move(g.input);
  }
  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }
  CoordMap coord_map() const override {
    return {static_cast<double>(geom_.stride),
            0.5 * static_cast<double>(geom_.effective_kernel() - 1) - static_cast<double>(geom_.padding)};
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d>(*this); }

 private:
  ConvGeometry geom_;
  Param<T> weight_;
  Param<T> bias_;
};

template <typename T>
class Relu final : public Layer<T> {
 public:
  std::string kind() const override { return "relu"; }
  Shape output_shape(const Shape& in) const override { return in; }
  Tensor<T> forward(const Tensor<T>& in) const override {
    Tensor<T> out = in;
    for (auto& v : out.values()) v = v > T{0} ? v : T{0};
    return out;
  }
  Tensor<T> backward(const Tensor<T>&, const Tensor<T>& out, const Tensor<T>& grad_out, bool) override {
    Tensor<T> g = grad_out;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(out[i] > T{0})) g[i] = T{0};
    return g;
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Relu>(*this); }
  void collect_kinks(const Tensor<T>& in, std::vector<std::uint8_t>& sig) const override {
    for (auto v : in.values()) sig.push_back(v > T{0});
  }
};

template <typename T>
class Sigmoid final : public Layer<T> {
 public:
  std::string kind() const override { return "sigmoid"; }
  Shape output_shape(const Shape& in) const override { return in; }
  Tensor<T> forward(const Tensor<T>& in) const override {
    Tensor<T> out = in;
    for (auto& v : out.values()) v = T{1} / (T{1} + std::exp(-v));
    return out;
  }
  Tensor<T> backward(const Tensor<T>&, const Tensor<T>& out, const Tensor<T>& grad_out, bool) override {
    Tensor<T> g = grad_out;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= out[i] * (T{1} - out[i]);
    return g;
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Sigmoid>(*this); }
};

// relu(conv_b(relu(conv_a(x))) + crop(x)). With valid padding each conv trims
// `dilation` cells per side and the skip path is center-cropped to match.
template <typename T>
class ResidualBlock final : public Layer<T> {
 public:
  ResidualBlock(const std::string& name, std::size_t channels, std::size_t dilation, bool same_padding)
      : conv_a_(name + ".a", {channels, channels, 3, 1, same_padding ? dilation : 0, dilation}),
        conv_b_(name + ".b", {channels, channels, 3, 1, same_padding ? dilation : 0, dilation}),
        trim_(same_padding ? 0 : 2 * dilation) {}

  void init(std::mt19937_64& rng) {
    conv_a_.init(rng);
    conv_b_.init(rng);
  }

  std::string kind() const override { return "residual"; }
  Shape output_shape(const Shape& in) const override { return conv_b_.output_shape(conv_a_.output_shape(in)); }

  Tensor<T> forward(const Tensor<T>& in) const override {
    Tensor<T> a = relu_.forward(conv_a_.forward(in));
    Tensor<T> s = conv_b_.forward(a);
    add_cropped(in, s);
    return relu_.forward(s);
  }

  Tensor<T> backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& grad_out,
                     bool need_input_grad) override {
    Tensor<T> pre_a = conv_a_.forward(in);
    Tensor<T> a = relu_.forward(pre_a);
    Tensor<T> gs = relu_.backward(Tensor<T>(), out, grad_out, true);
    Tensor<T> ga = conv_b_.backward(a, Tensor<T>(), gs, true);
    ga = relu_.backward(Tensor<T>(), a, ga, true);
    Tensor<T> gin = conv_a_.backward(in, Tensor<T>(), ga, need_input_grad);
    if (need_input_grad) add_uncropped(gs, gin);
    return gin;
  }

  std::vector<Param<T>*> params() override {
    return {&conv_a_.weight(), &conv_a_.bias(), &conv_b_.weight(), &conv_b_.bias()};
  }
  CoordMap coord_map() const override { return conv_a_.coord_map().compose(conv_b_.coord_map()); }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ResidualBlock>(*this); }

  void collect_kinks(const Tensor<T>& in, std::vector<std::uint8_t>& sig) const override {
    Tensor<T> pre_a = conv_a_.forward(in);
    relu_.collect_kinks(pre_a, sig);
    Tensor<T> s = conv_b_.forward(relu_.forward(pre_a));
    add_cropped(in, s);
    relu_.collect_kinks(s, sig);
  }

 private:
  void add_cropped(const Tensor<T>& x, Tensor<T>& s) const {
    const std::size_t c0 = trim_ / 2;
    for (std::size_t n = 0; n < s.dim(0); ++n)
      for (std::size_t c = 0; c < s.dim(1); ++c)
        for (std::size_t i = 0; i < s.dim(2); ++i)
          for (std::size_t j = 0; j < s.dim(3); ++j) s.at(n, c, i, j) += x.at(n, c, i + c0, j + c0);
  }
  void add_uncropped(const Tensor<T>& gs, Tensor<T>& gx) const {
    const std::size_t c0 = trim_ / 2;
    for (std::size_t n = 0; n < gs.dim(0); ++n)
      for (std::size_t c = 0; c < gs.dim(1); ++c)
        for (std::size_t i = 0; i < gs.dim(2); ++i)
          for (std::size_t j = 0; j < gs.dim(3); ++j) gx.at(n, c, i + c0, j + c0) += gs.at(n, c, i, j);
  }

  Conv2d<T> conv_a_;
  Conv2d<T> conv_b_;
  Relu<T> relu_;
  std::size_t trim_;
};

namespace detail {
struct Tap {
  std::size_t lo, hi;
  double w_hi;  // weight of `hi`; `lo` gets 1 - w_hi
};

// Bilinear taps along one axis: output o samples source coordinate
// (o - offset) / scale, clamped to the source extent.
inline std::vector<Tap> bilinear_taps(std::size_t out, std::size_t src, const CoordMap& map) {
  std::vector<Tap> taps(out);
  for (std::size_t o = 0; o < out; ++o) {
    double t = map.to_output(static_cast<double>(o));
    t = std::clamp(t, 0.0, static_cast<double>(src - 1));
    const auto lo = static_cast<std::size_t>(std::floor(t));
    const std::size_t hi = std::min(lo + 1, src - 1);
    taps[o] = {lo, hi, t - static_cast<double>(lo)};
  }
  return taps;
}
}  // namespace detail

/// Bilinear resampling from a coarse grid to an (out_h, out_w) grid. `map`
/// sends coarse indices to fine coordinates (the trunk's receptive-field map).
template <typename T>
class BilinearUpsample final : public Layer<T> {
 public:
  BilinearUpsample(std::size_t out_h, std::size_t out_w, CoordMap map) : out_h_(out_h), out_w_(out_w), map_(map) {}

  std::string kind() const override { return "upsample"; }
  Shape output_shape(const Shape& in) const override { return {in[0], in[1], out_h_, out_w_}; }

  Tensor<T> forward(const Tensor<T>& in) const override {
    const auto ti = detail::bilinear_taps(out_h_, in.dim(2), map_);
    const auto tj = detail::bilinear_taps(out_w_, in.dim(3), map_);
    Tensor<T> out(output_shape(in.shape()));
    for (std::size_t n = 0; n < in.dim(0); ++n)
      for (std::size_t c = 0; c < in.dim(1); ++c)
        for (std::size_t i = 0; i < out_h_; ++i) {
          const auto& a = ti[i];
          for (std::size_t j = 0; j < out_w_; ++j) {
            const auto& b = tj[j];
            const double v = (1 - a.w_hi) * ((1 - b.w_hi) * in.at(n, c, a.lo, b.lo) + b.w_hi * in.at(n, c, a.lo, b.hi)) +
                             a.w_hi * ((1 - b.w_hi) * in.at(n, c, a.hi, b.lo) + b.w_hi * in.at(n, c, a.hi, b.hi));
            out.at(n, c, i, j) = static_cast<T>(v);
          }
        }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& grad_out, bool) override {
    const auto ti = detail::bilinear_taps(out_h_, in.dim(2), map_);
    const auto tj = detail::bilinear_taps(out_w_, in.dim(3), map_);
    Tensor<T> g(in.shape());
    for (std::size_t n = 0; n < in.dim(0); ++n)
      for (std::size_t c = 0; c < in.dim(1); ++c)
        for (std::size_t i = 0; i < out_h_; ++i) {
          const auto& a = ti[i];
          for (std::size_t j = 0; j < out_w_; ++j) {
            const T go = grad_out.at(n, c, i, j);
            if (go == T{0}) continue;
            const auto& b = tj[j];
            g.at(n, c, a.lo, b.lo) += static_cast<T>((1 - a.w_hi) * (1 - b.w_hi) * go);
            g.at(n, c, a.lo, b.hi) += static_cast<T>((1 - a.w_hi) * b.w_hi * go);
            g.at(n, c, a.hi, b.lo) += static_cast<T>(a.w_hi * (1 - b.w_hi) * go);
            g.at(n, c, a.hi, b.hi) += static_cast<T>(a.w_hi * b.w_hi * go);
          }
        }
    return g;
  }

  CoordMap coord_map() const override { return {1.0 / map_.scale, -map_.offset / map_.scale}; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BilinearUpsample>(*this); }

 private:
  std::size_t out_h_, out_w_;
  CoordMap map_;
};

/// Average pooling from a fine grid onto a coarse grid: coarse cell t averages
/// the fine window of half-width `radius` centered at round(map(t)).
template <typename T>
class AvgDownsample final : public Layer<T> {
 public:
  AvgDownsample(std::size_t out_h, std::size_t out_w, CoordMap map, std::size_t radius)
      : out_h_(out_h), out_w_(out_w), map_(map), radius_(radius) {}

  std::string kind() const override { return "downsample"; }
  Shape output_shape(const Shape& in) const override { return {in[0], in[1], out_h_, out_w_}; }

  Tensor<T> forward(const Tensor<T>& in) const override {
    Tensor<T> out(output_shape(in.shape()));
    visit(in.shape(), [&](std::size_t n, std::size_t c, std::size_t i, std::size_t j, std::size_t si,
                          std::size_t sj, double w) { out.at(n, c, i, j) += static_cast<T>(w * in.at(n, c, si, sj)); });
    return out;
  }

  Tensor<T> backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& grad_out, bool) override {
    Tensor<T> g(in.shape());
    visit(in.shape(), [&](std::size_t n, std::size_t c, std::size_t i, std::size_t j, std::size_t si,
                          std::size_t sj, double w) { g.at(n, c, si, sj) += static_cast<T>(w * grad_out.at(n, c, i, j)); });
    return g;
  }

  CoordMap coord_map() const override { return map_; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<AvgDownsample>(*this); }

 private:
  template <typename Fn>
  void visit(const Shape& in, Fn&& fn) const {
    const auto window = [&](std::size_t t, std::size_t extent) {
      const long c = std::lround(map_.to_input(static_cast<double>(t)));
      const long lo = std::max<long>(0, c - static_cast<long>(radius_));
      const long hi = std::min<long>(static_cast<long>(extent) - 1, c + static_cast<long>(radius_));
      return std::pair<long, long>(lo, hi);
    };
    for (std::size_t i = 0; i < out_h_; ++i) {
      const auto [ilo, ihi] = window(i, in[2]);
      for (std::size_t j = 0; j < out_w_; ++j) {
        const auto [jlo, jhi] = window(j, in[3]);
        const long count = (ihi - ilo + 1) * (jhi - jlo + 1);
        if (count <= 0) continue;
        const double w = 1.0 / static_cast<double>(count);
        for (std::size_t n = 0; n < in[0]; ++n)
          for (std::size_t c = 0; c < in[1]; ++c)
            for (long si = ilo; si <= ihi; ++si)
              for (long sj = jlo; sj <= jhi; ++sj)
                fn(n, c, i, j, static_cast<std::size_t>(si), static_cast<std::size_t>(sj), w);
      }
    }
  }

  std::size_t out_h_, out_w_;
  CoordMap map_;
  std::size_t radius_;
};

/// Activations recorded by Sequential::forward for a later backward pass.
template <typename T>
struct Tape {
  std::vector<Tensor<T>> activations;  // input of layer i at index i; final output last
};

template <typename T>
class Sequential {
 public:
  Sequential() = default;
  explicit Sequential(std::string name) : name_(std::move(name)) {}
  Sequential(const Sequential& other) : name_(other.name_) {
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
  }
  Sequential& operator=(const Sequential& other) {
    if (this != &other) {
      Sequential tmp(other);
      *this = std::move(tmp);
    }
    return *this;
  }
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  const std::string& name() const { return name_; }

  template <typename L>
  L& add(L layer) {
    auto p = std::make_unique<L>(std::move(layer));
    L& ref = *p;
    layers_.push_back(std::move(p));
    return ref;
  }

  std::size_t size() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }

  Shape output_shape(Shape in) const {
    for (const auto& l : layers_) in = l->output_shape(in);
    return in;
  }

  CoordMap coord_map() const {
    CoordMap m;
    for (const auto& l : layers_) m = m.compose(l->coord_map());
    return m;
  }

  Tensor<T> forward(const Tensor<T>& in) const {
    Tensor<T> x = in;
    for (const auto& l : layers_) x = l->forward(x);
    return x;
  }

  Tensor<T> forward(const Tensor<T>& in, Tape<T>& tape) const {
    tape.activations.clear();
    tape.activations.push_back(in);
    for (const auto& l : layers_) tape.activations.push_back(l->forward(tape.activations.back()));
    return tape.activations.back();
  }

  Tensor<T> backward(const Tape<T>& tape, const Tensor<T>& grad_out, bool need_input_grad = true) {
    Tensor<T> g = grad_out;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      const bool need = need_input_grad || i > 0;
      g = layers_[i]->backward(tape.activations[i], tape.activations[i + 1], g, need);
    }
    return g;
  }

  void collect_kinks(const Tensor<T>& in, std::vector<std::uint8_t>& sig) const {
    Tensor<T> x = in;
    for (const auto& l : layers_) {
      l->collect_kinks(x, sig);
      x = l->forward(x);
    }
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    for (auto& l : layers_)
      for (auto* p : l->params()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }

  void set_trainable(bool trainable) {
    for (auto* p : params()) p->trainable = trainable;
  }

 private:
  std::string name_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

}  // namespace mglab::nn
