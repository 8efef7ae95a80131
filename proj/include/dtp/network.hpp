#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dtp/kernels.hpp"
#include "dtp/model_config.hpp"
#include "dtp/tensor.hpp"

namespace dtp {

enum class Mode { train, eval };

/// Trainable tensors and buffers of one layer. Unused members stay empty.
template <typename T>
struct LayerParams {
  Tensor<T> weight;  // conv: [out, in, k, k]; transpose conv: [in, out, k, k]
  Tensor<T> bias;    // [out]
  Tensor<T> gamma;   // batch norm scale [C]
  Tensor<T> beta;    // batch norm shift [C]
  Tensor<T> running_mean;
  Tensor<T> running_var;

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
};

/// Per-call execution record: layer outputs plus what backward needs.
template <typename T>
struct Activations {
  Mode mode = Mode::eval;
  Tensor<T> input;
  int input_h = 0;
  int input_w = 0;
  std::vector<Tensor<T>> out;
  std::vector<Tensor<T>> xhat;               // batch norm normalized input
  std::vector<std::vector<T>> inv_std;       // batch norm 1/sqrt(var + eps)
  std::vector<std::vector<T>> batch_mean;    // train mode only
  std::vector<std::vector<T>> batch_var;     // unbiased, train mode only
};

struct NormSettings {
  double eps = 1e-5;
  double momentum = 0.1;
};

template <typename T>
struct Prediction {
  Tensor<T> logits;     // B x d_max x H x W
  Tensor<T> disparity;  // B x H x W
};

/// Executable DTPnet (or any graph described by a ModelConfig).
template <typename T>
class Network {
 public:
  explicit Network(ModelConfig config, NormSettings norm = {}) : config_(std::move(config)), norm_(norm) {
    validate(config_);
    allocate();
  }

  const ModelConfig& config() const { return config_; }
  std::vector<LayerParams<T>>& layers() { return params_; }
  const std::vector<LayerParams<T>>& layers() const { return params_; }
  std::vector<LayerParams<T>>& grads() { return grads_; }
  const NormSettings& norm_settings() const { return norm_; }

  /// Fan-in scaled normal weights, zero biases, unit norm scale, zero shift.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (int i = 0; i < config_.size(); ++i) {
      const LayerSpec& l = config_.layers[i];
      LayerParams<T>& p = params_[i];
      if (l.has_weights()) {
        double fan_in = static_cast<double>(l.in_channels) * l.kernel * l.kernel;
        if (l.kind == LayerKind::transpose_conv2d) fan_in /= static_cast<double>(l.stride * l.stride);
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
        for (auto& w : p.weight.storage()) w = static_cast<T>(dist(rng));
        p.bias.fill(T{0});
      } else if (l.is_norm()) {
        p.gamma.fill(T{1});
        p.beta.fill(T{0});
        p.running_mean.fill(T{0});
        p.running_var.fill(T{1});
      }
    }
  }

  /// Trainable tensors in a fixed order, paired with their gradients.
  std::vector<ParamRef<T>> parameters() {
    std::vector<ParamRef<T>> refs;
    for (int i = 0; i < config_.size(); ++i) {
      const LayerSpec& l = config_.layers[i];
      if (l.has_weights()) {
        refs.push_back({l.name + ".weight", &params_[i].weight, &grads_[i].weight});
        if (l.bias) refs.push_back({l.name + ".bias", &params_[i].bias, &grads_[i].bias});
      } else if (l.is_norm()) {
        refs.push_back({l.name + ".gamma", &params_[i].gamma, &grads_[i].gamma});
        refs.push_back({l.name + ".beta", &params_[i].beta, &grads_[i].beta});
      }
    }
    return refs;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (int i = 0; i < config_.size(); ++i) {
      const LayerSpec& l = config_.layers[i];
      const LayerParams<T>& p = params_[i];
      if (l.has_weights()) n += p.weight.size() + (l.bias ? p.bias.size() : 0);
      if (l.is_norm()) n += p.gamma.size() + p.beta.size();
    }
    return n;
  }

  void zero_grad() {
    for (auto& g : grads_) {
      g.weight.fill(T{0});
      g.bias.fill(T{0});
      g.gamma.fill(T{0});
      g.beta.fill(T{0});
    }
  }

  // -------------------------------------------------------------------------
  // Whole-graph execution

  /// Runs every layer on `input` (stacked [left; right] for stereo graphs).
  /// Train mode records what backward() needs and updates norm running stats.
  Tensor<T> run(const Tensor<T>& input, Mode mode) {
    begin(acts_, input, mode);
    execute(acts_, 0, config_.size());
    if (mode == Mode::train) update_running_stats(acts_);
    return acts_.out.back();
  }

  /// Eval-mode execution with caller-owned state; safe for concurrent use.
  Tensor<T> infer(const Tensor<T>& input) const {
    Activations<T> acts;
    begin(acts, input, Mode::eval);
    execute(acts, 0, config_.size());
    return std::move(acts.out.back());
  }

  /// Eval-mode output of layer `last` (layers after it are not run).
  Tensor<T> infer_until(const Tensor<T>& input, int last) const {
    if (last < 0 || last >= config_.size()) throw ShapeError("infer_until: layer index out of range");
    Activations<T> acts;
    begin(acts, input, Mode::eval);
    execute(acts, 0, last + 1);
    return std::move(acts.out[last]);
  }

  /// Logits and soft-argmax disparity for a batch of image pairs.
  Prediction<T> forward(const Tensor<T>& left, const Tensor<T>& right, Mode mode = Mode::eval) {
    check_images(left, right);
    Tensor<T> logits = run(stack_batch(left, right), mode);
    Tensor<T> disparity = kernels::soft_argmax(logits);
    return {std::move(logits), std::move(disparity)};
  }

  Prediction<T> predict(const Tensor<T>& left, const Tensor<T>& right) const {
    check_images(left, right);
    Tensor<T> logits = infer(stack_batch(left, right));
    Tensor<T> disparity = kernels::soft_argmax(logits);
    return {std::move(logits), std::move(disparity)};
  }

  // -------------------------------------------------------------------------
  // Stage-level entry points (eval mode)

  /// Siamese feature extraction: the same weights process both images.
  std::pair<Tensor<T>, Tensor<T>> extract_features(const Tensor<T>& left, const Tensor<T>& right) const {
    check_images(left, right);
    const int last = config_.stage_output(Stage::feature);
    Activations<T> acts;
    begin(acts, stack_batch(left, right), Mode::eval);
    execute(acts, 0, last + 1);
    return split_batch(acts.out[last]);
  }

  /// Channel-to-disparity cost volume: concat(f_l, f_r) through three convs.
  Tensor<T> build_cost_volume(const Tensor<T>& f_left, const Tensor<T>& f_right) const {
    if (f_left.shape() != f_right.shape() || f_left.rank() != 4) {
      throw ShapeError("build_cost_volume: feature shapes differ " + to_string(f_left.shape()) + " vs " +
                       to_string(f_right.shape()));
    }
    const int feat = config_.stage_output(Stage::feature);
    const int cost = config_.stage_output(Stage::cost_volume);
    require_shape({f_left.dim(1)}, {config_.layers[feat].out_channels}, "build_cost_volume channels");
    Activations<T> acts;
    begin_at(acts, f_left.dim(0), f_left.dim(2) * config_.downsample_factor,
             f_left.dim(3) * config_.downsample_factor, Mode::eval);
    acts.out[feat] = stack_batch(f_left, f_right);
    execute(acts, feat + 1, cost + 1);
    return std::move(acts.out[cost]);
  }

  /// Hourglass regression, D/4 -> D channel map and bilinear upsampling to full size.
  Tensor<T> regress(const Tensor<T>& cost_volume) const {
    const int cost = config_.stage_output(Stage::cost_volume);
    const int expected = config_.d_max / config_.downsample_factor;
    if (cost_volume.rank() != 4 || cost_volume.dim(1) != expected) {
      throw ShapeError("regress: cost volume must be B x " + std::to_string(expected) + " x H/4 x W/4, got " +
                       to_string(cost_volume.shape()));
    }
    Activations<T> acts;
    begin_at(acts, cost_volume.dim(0), cost_volume.dim(2) * config_.downsample_factor,
             cost_volume.dim(3) * config_.downsample_factor, Mode::eval);
    acts.out[cost] = cost_volume;
    execute(acts, cost + 1, config_.size());
    return std::move(acts.out.back());
  }

  // -------------------------------------------------------------------------
  // Backward

  /// Accumulates parameter gradients for the most recent run()/forward().
  void backward(const Tensor<T>& grad_output) {
    Activations<T>& a = acts_;
    const int n = config_.size();
    require_shape(grad_output.shape(), a.out.back().shape(), "backward: output gradient");
    std::vector<Tensor<T>> grad(static_cast<std::size_t>(n));
    grad.back() = grad_output;
    auto accumulate = [&](int node) -> Tensor<T>* {
      if (node == kNetworkInput) return nullptr;
      if (grad[node].empty()) grad[node] = Tensor<T>(a.out[node].shape());
      return &grad[node];
    };
    std::vector<T> scratch;
    for (int i = n - 1; i >= 0; --i) {
      if (grad[i].empty()) continue;
      const LayerSpec& l = config_.layers[i];
      const Tensor<T>& dy = grad[i];
      const Tensor<T>& y = a.out[i];
      const Tensor<T>& x = value(a, l.inputs[0]);
      switch (l.kind) {
        case LayerKind::conv2d: {
          Tensor<T>* dx = accumulate(l.inputs[0]);
          const kernels::Window g = conv_window(l, x, y);
          for (int b = 0; b < x.dim(0); ++b) {
            kernels::conv2d_backward(x.sample(b), g, params_[i].weight.data(), l.out_channels, dy.sample(b),
                                     grads_[i].weight.data(), l.bias ? grads_[i].bias.data() : nullptr,
                                     dx ? dx->sample(b) : nullptr, scratch);
          }
          break;
        }
        case LayerKind::transpose_conv2d: {
          Tensor<T>* dx = accumulate(l.inputs[0]);
          const kernels::Window g = tconv_window(l, x, y);
          for (int b = 0; b < x.dim(0); ++b) {
            kernels::transpose_conv2d_backward(x.sample(b), g, params_[i].weight.data(), l.in_channels,
                                               dy.sample(b), grads_[i].weight.data(),
                                               l.bias ? grads_[i].bias.data() : nullptr,
                                               dx ? dx->sample(b) : nullptr, scratch);
          }
          break;
        }
        case LayerKind::batch_norm:
          norm_backward(a, i, dy, accumulate(l.inputs[0]));
          break;
        case LayerKind::relu: {
          Tensor<T>* dx = accumulate(l.inputs[0]);
          if (!dx) break;
          for (std::size_t k = 0; k < y.size(); ++k) {
            if (y[k] > T{0}) (*dx)[k] += dy[k];
          }
          break;
        }
        case LayerKind::add:
          for (int in : l.inputs) {
            if (Tensor<T>* dx = accumulate(in)) {
              for (std::size_t k = 0; k < dy.size(); ++k) (*dx)[k] += dy[k];
            }
          }
          break;
        case LayerKind::concat:
          concat_backward(a, l, dy, accumulate);
          break;
        case LayerKind::bilinear_upsample: {
          Tensor<T>* dx = accumulate(l.inputs[0]);
          if (!dx) break;
          for (int b = 0; b < x.dim(0); ++b) {
            kernels::bilinear_backward(dy.sample(b), x.dim(1), x.dim(2), x.dim(3), y.dim(2), y.dim(3),
                                       dx->sample(b));
          }
          break;
        }
      }
    }
  }

  /// Output of layer `i` from the most recent run().
  const Tensor<T>& activation(int i) const { return acts_.out.at(static_cast<std::size_t>(i)); }

 private:
  void allocate() {
    params_.assign(config_.layers.size(), {});
    for (int i = 0; i < config_.size(); ++i) {
      const LayerSpec& l = config_.layers[i];
      LayerParams<T>& p = params_[i];
      if (l.kind == LayerKind::conv2d) {
        p.weight = Tensor<T>({l.out_channels, l.in_channels, l.kernel, l.kernel});
      } else if (l.kind == LayerKind::transpose_conv2d) {
        p.weight = Tensor<T>({l.in_channels, l.out_channels, l.kernel, l.kernel});
      }
      if (l.has_weights() && l.bias) p.bias = Tensor<T>({l.out_channels});
      if (l.is_norm()) {
        p.gamma = Tensor<T>({l.out_channels}, T{1});
        p.beta = Tensor<T>({l.out_channels});
        p.running_mean = Tensor<T>({l.out_channels});
        p.running_var = Tensor<T>({l.out_channels}, T{1});
      }
    }
    grads_.assign(config_.layers.size(), {});
    for (int i = 0; i < config_.size(); ++i) {
      grads_[i].weight = Tensor<T>(params_[i].weight.shape());
      grads_[i].bias = Tensor<T>(params_[i].bias.shape());
      grads_[i].gamma = Tensor<T>(params_[i].gamma.shape());
      grads_[i].beta = Tensor<T>(params_[i].beta.shape());
    }
  }

  void check_images(const Tensor<T>& left, const Tensor<T>& right) const {
    if (!config_.is_stereo()) throw ConfigError("model has no stereo concat; use run() on single images");
    if (left.shape() != right.shape()) {
      throw ShapeError("left/right shapes differ: " + to_string(left.shape()) + " vs " + to_string(right.shape()));
    }
    if (left.rank() != 4 || left.dim(1) != 3) {
      throw ShapeError("images must be B x 3 x H x W, got " + to_string(left.shape()));
    }
    const int f = config_.downsample_factor;
    if (left.dim(2) % f != 0) {
      throw ShapeError("height " + std::to_string(left.dim(2)) + " is not divisible by " + std::to_string(f));
    }
    if (left.dim(3) % f != 0) {
      throw ShapeError("width " + std::to_string(left.dim(3)) + " is not divisible by " + std::to_string(f));
    }
  }

  void begin(Activations<T>& a, const Tensor<T>& input, Mode mode) const {
    if (input.rank() != 4 || input.dim(1) != 3) {
      throw ShapeError("network input must be N x 3 x H x W, got " + to_string(input.shape()));
    }
    const int f = config_.downsample_factor;
    if (input.dim(2) % f != 0) throw ShapeError("input height is not divisible by " + std::to_string(f));
    if (input.dim(3) % f != 0) throw ShapeError("input width is not divisible by " + std::to_string(f));
    begin_at(a, input.dim(0), input.dim(2), input.dim(3), mode);
    a.input = input;
  }

  void begin_at(Activations<T>& a, int, int h, int w, Mode mode) const {
    const std::size_t n = config_.layers.size();
    a.mode = mode;
    a.input_h = h;
    a.input_w = w;
    a.out.assign(n, {});
    a.xhat.assign(n, {});
    a.inv_std.assign(n, {});
    a.batch_mean.assign(n, {});
    a.batch_var.assign(n, {});
  }

  const Tensor<T>& value(const Activations<T>& a, int node) const {
    return node == kNetworkInput ? a.input : a.out[node];
  }

  std::pair<int, int> spatial_of(const Activations<T>& a, int node) const {
    if (node == kNetworkInput) return {a.input_h, a.input_w};
    return {a.out[node].dim(2), a.out[node].dim(3)};
  }

  static kernels::Window conv_window(const LayerSpec& l, const Tensor<T>& x, const Tensor<T>& y) {
    return {x.dim(1), x.dim(2), x.dim(3), l.kernel, l.stride, l.padding, y.dim(2), y.dim(3)};
  }
  // Equivalent forward conv runs from the (larger) output back to the input.
  static kernels::Window tconv_window(const LayerSpec& l, const Tensor<T>& x, const Tensor<T>& y) {
    return {l.out_channels, y.dim(2), y.dim(3), l.kernel, l.stride, l.padding, x.dim(2), x.dim(3)};
  }

  void execute(Activations<T>& a, int first, int last) const {
    std::vector<T> scratch;
    for (int i = first; i < last; ++i) {
      const LayerSpec& l = config_.layers[i];
      const Tensor<T>& x = value(a, l.inputs[0]);
      if (x.empty()) throw ShapeError("layer '" + l.name + "' executed before its input");
      if (x.dim(1) != l.in_channels && l.kind != LayerKind::concat) {
        throw ShapeError("layer '" + l.name + "' expects " + std::to_string(l.in_channels) + " channels, got " +
                         std::to_string(x.dim(1)));
      }
      Tensor<T>& y = a.out[i];
      switch (l.kind) {
        case LayerKind::conv2d: {
          const int ho = conv_extent(l, x.dim(2)), wo = conv_extent(l, x.dim(3));
          y = Tensor<T>({x.dim(0), l.out_channels, ho, wo});
          const kernels::Window g = conv_window(l, x, y);
          for (int b = 0; b < x.dim(0); ++b) {
            kernels::conv2d_forward(x.sample(b), g, params_[i].weight.data(),
                                    l.bias ? params_[i].bias.data() : static_cast<const T*>(nullptr),
                                    l.out_channels, y.sample(b), scratch);
          }
          break;
        }
        case LayerKind::transpose_conv2d: {
          std::optional<int> th, tw;
          if (l.match != kNoMatch) {
            auto [mh, mw] = spatial_of(a, l.match);
            th = mh;
            tw = mw;
          }
          const int ho = transpose_conv_extent(l, x.dim(2), th, "height");
          const int wo = transpose_conv_extent(l, x.dim(3), tw, "width");
          y = Tensor<T>({x.dim(0), l.out_channels, ho, wo});
          const kernels::Window g = tconv_window(l, x, y);
          for (int b = 0; b < x.dim(0); ++b) {
            kernels::transpose_conv2d_forward(x.sample(b), g, params_[i].weight.data(),
                                              l.bias ? params_[i].bias.data() : static_cast<const T*>(nullptr),
                                              l.in_channels, y.sample(b), scratch);
          }
          break;
        }
        case LayerKind::batch_norm:
          norm_forward(a, i, x, y);
          break;
        case LayerKind::relu:
          y = x;
          for (auto& v : y.storage()) v = v > T{0} ? v : T{0};
          break;
        case LayerKind::add: {
          const Tensor<T>& other = value(a, l.inputs[1]);
          require_shape(other.shape(), x.shape(), "layer '" + l.name + "' operands");
          y = x;
          for (std::size_t k = 0; k < y.size(); ++k) y[k] += other[k];
          break;
        }
        case LayerKind::concat:
          concat_forward(a, l, y);
          break;
        case LayerKind::bilinear_upsample: {
          int ho = x.dim(2) * l.scale, wo = x.dim(3) * l.scale;
          if (l.match != kNoMatch) std::tie(ho, wo) = spatial_of(a, l.match);
          y = Tensor<T>({x.dim(0), x.dim(1), ho, wo});
          for (int b = 0; b < x.dim(0); ++b) {
            kernels::bilinear_forward(x.sample(b), x.dim(1), x.dim(2), x.dim(3), ho, wo, y.sample(b));
          }
          break;
        }
      }
    }
  }

  void norm_forward(Activations<T>& a, int i, const Tensor<T>& x, Tensor<T>& y) const {
    const int batch = x.dim(0), channels = x.dim(1);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    const double count = static_cast<double>(batch) * plane;
    const LayerParams<T>& p = params_[i];
    y = Tensor<T>(x.shape());
    Tensor<T>& xhat = a.xhat[i];
    xhat = Tensor<T>(x.shape());
    auto& inv_std = a.inv_std[i];
    inv_std.assign(channels, T{0});
    if (a.mode == Mode::train) {
      a.batch_mean[i].assign(channels, T{0});
      a.batch_var[i].assign(channels, T{0});
    }
    for (int c = 0; c < channels; ++c) {
      double mean, var;
      if (a.mode == Mode::train) {
        double s = 0;
        for (int b = 0; b < batch; ++b) {
          const T* src = x.sample(b) + c * plane;
          for (std::size_t k = 0; k < plane; ++k) s += src[k];
        }
        mean = s / count;
        double ss = 0;
        for (int b = 0; b < batch; ++b) {
          const T* src = x.sample(b) + c * plane;
          for (std::size_t k = 0; k < plane; ++k) {
            const double d = src[k] - mean;
            ss += d * d;
          }
        }
        var = ss / count;
        a.batch_mean[i][c] = static_cast<T>(mean);
        a.batch_var[i][c] = static_cast<T>(count > 1 ? ss / (count - 1) : ss);
      } else {
        mean = p.running_mean[c];
        var = p.running_var[c];
      }
      const T m = static_cast<T>(mean);
      const T is = static_cast<T>(1.0 / std::sqrt(var + norm_.eps));
      inv_std[c] = is;
      const T g = p.gamma[c], sh = p.beta[c];
      for (int b = 0; b < batch; ++b) {
        const T* src = x.sample(b) + c * plane;
        T* xh = xhat.sample(b) + c * plane;
        T* dst = y.sample(b) + c * plane;
        for (std::size_t k = 0; k < plane; ++k) {
          xh[k] = (src[k] - m) * is;
          dst[k] = g * xh[k] + sh;
        }
      }
    }
  }

  void norm_backward(const Activations<T>& a, int i, const Tensor<T>& dy, Tensor<T>* dx) {
    const Tensor<T>& xhat = a.xhat[i];
    const int batch = dy.dim(0), channels = dy.dim(1);
    const std::size_t plane = static_cast<std::size_t>(dy.dim(2)) * dy.dim(3);
    const double count = static_cast<double>(batch) * plane;
    for (int c = 0; c < channels; ++c) {
      double sum_dy = 0, sum_dy_xhat = 0;
      for (int b = 0; b < batch; ++b) {
        const T* g = dy.sample(b) + c * plane;
        const T* xh = xhat.sample(b) + c * plane;
        for (std::size_t k = 0; k < plane; ++k) {
          sum_dy += g[k];
          sum_dy_xhat += g[k] * xh[k];
        }
      }
      grads_[i].gamma[c] += static_cast<T>(sum_dy_xhat);
      grads_[i].beta[c] += static_cast<T>(sum_dy);
      if (!dx) continue;
      const T scale = params_[i].gamma[c] * a.inv_std[i][c];
      if (a.mode == Mode::train) {
        const T mean_dy = static_cast<T>(sum_dy / count);
        const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / count);
        for (int b = 0; b < batch; ++b) {
          const T* g = dy.sample(b) + c * plane;
          const T* xh = xhat.sample(b) + c * plane;
          T* d = dx->sample(b) + c * plane;
          for (std::size_t k = 0; k < plane; ++k) d[k] += scale * (g[k] - mean_dy - xh[k] * mean_dy_xhat);
        }
      } else {
        for (int b = 0; b < batch; ++b) {
          const T* g = dy.sample(b) + c * plane;
          T* d = dx->sample(b) + c * plane;
          for (std::size_t k = 0; k < plane; ++k) d[k] += scale * g[k];
        }
      }
    }
  }

  void update_running_stats(const Activations<T>& a) {
    const T m = static_cast<T>(norm_.momentum);
    for (int i = 0; i < config_.size(); ++i) {
      if (!config_.layers[i].is_norm() || a.batch_mean[i].empty()) continue;
      LayerParams<T>& p = params_[i];
      for (int c = 0; c < config_.layers[i].out_channels; ++c) {
        p.running_mean[c] = (T{1} - m) * p.running_mean[c] + m * a.batch_mean[i][c];
        p.running_var[c] = (T{1} - m) * p.running_var[c] + m * a.batch_var[i][c];
      }
    }
  }

  void concat_forward(const Activations<T>& a, const LayerSpec& l, Tensor<T>& y) const {
    const Tensor<T>& first = value(a, l.inputs[0]);
    const std::size_t plane = static_cast<std::size_t>(first.dim(2)) * first.dim(3);
    if (l.stereo) {
      const int batch = first.dim(0) / 2, c = first.dim(1);
      y = Tensor<T>({batch, 2 * c, first.dim(2), first.dim(3)});
      for (int b = 0; b < batch; ++b) {
        std::copy(first.sample(b), first.sample(b) + c * plane, y.sample(b));
        std::copy(first.sample(batch + b), first.sample(batch + b) + c * plane, y.sample(b) + c * plane);
      }
      return;
    }
    y = Tensor<T>({first.dim(0), l.out_channels, first.dim(2), first.dim(3)});
    for (int b = 0; b < first.dim(0); ++b) {
      T* dst = y.sample(b);
      for (int in : l.inputs) {
        const Tensor<T>& src = value(a, in);
        if (src.dim(2) != first.dim(2) || src.dim(3) != first.dim(3) || src.dim(0) != first.dim(0)) {
          throw ShapeError("layer '" + l.name + "': concat operands disagree: " + to_string(src.shape()) + " vs " +
                           to_string(first.shape()));
        }
        const std::size_t n = static_cast<std::size_t>(src.dim(1)) * plane;
        std::copy(src.sample(b), src.sample(b) + n, dst);
        dst += n;
      }
    }
  }

  template <typename Accumulate>
  void concat_backward(const Activations<T>& a, const LayerSpec& l, const Tensor<T>& dy, Accumulate&& accumulate) {
    const Tensor<T>& first = value(a, l.inputs[0]);
    const std::size_t plane = static_cast<std::size_t>(first.dim(2)) * first.dim(3);
    if (l.stereo) {
      Tensor<T>* dx = accumulate(l.inputs[0]);
      if (!dx) return;
      const int batch = first.dim(0) / 2, c = first.dim(1);
      for (int b = 0; b < batch; ++b) {
        const T* g = dy.sample(b);
        T* dl = dx->sample(b);
        T* dr = dx->sample(batch + b);
        for (std::size_t k = 0; k < c * plane; ++k) {
          dl[k] += g[k];
          dr[k] += g[c * plane + k];
        }
      }
      return;
    }
    std::size_t offset = 0;
    for (int in : l.inputs) {
      const Tensor<T>& src = value(a, in);
      const std::size_t n = static_cast<std::size_t>(src.dim(1)) * plane;
      if (Tensor<T>* dx = accumulate(in)) {
        for (int b = 0; b < first.dim(0); ++b) {
          const T* g = dy.sample(b) + offset;
          T* d = dx->sample(b);
          for (std::size_t k = 0; k < n; ++k) d[k] += g[k];
        }
      }
      offset += n;
    }
  }

  ModelConfig config_;
  NormSettings norm_;
  std::vector<LayerParams<T>> params_;
  std::vector<LayerParams<T>> grads_;
  Activations<T> acts_;
};

/// Bilinear upsampling of a B x C x h x w tensor to B x C x H x W.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int height, int width) {
  Tensor<T> y({x.dim(0), x.dim(1), height, width});
  for (int b = 0; b < x.dim(0); ++b) {
    kernels::bilinear_forward(x.sample(b), x.dim(1), x.dim(2), x.dim(3), height, width, y.sample(b));
  }
  return y;
}

}  // namespace dtp
