#pragma once

// Forward/backward primitives on NCHW buffers. Everything here works on one
// sample at a time; batching lives in the network executor.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "dtp/tensor.hpp"

namespace dtp::kernels {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

/// Geometry of a k x k window sweep: an image of `channels` x `height` x `width`
/// is visited at `out_h` x `out_w` window positions.
struct Window {
  int channels;
  int height;
  int width;
  int kernel;
  int stride;
  int padding;
  int out_h;
  int out_w;

  int rows() const { return channels * kernel * kernel; }
  int cols() const { return out_h * out_w; }
};

/// col[(c*k + ki)*k + kj][oh*out_w + ow] = img[c][oh*s - p + ki][ow*s - p + kj] (0 outside).
template <typename T>
void im2col(const T* img, const Window& g, T* col) {
  const int cols = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    const T* plane = img + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        T* row = col + static_cast<std::size_t>((c * g.kernel + ki) * g.kernel + kj) * cols;
        for (int oh = 0; oh < g.out_h; ++oh) {
          T* dst = row + oh * g.out_w;
          const int ih = oh * g.stride - g.padding + ki;
          if (ih < 0 || ih >= g.height) {
            std::fill(dst, dst + g.out_w, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(ih) * g.width;
          if (g.stride == 1) {
            // iw = ow - p + kj, valid for ow in [lo, hi)
            const int shift = kj - g.padding;
            const int lo = std::clamp(-shift, 0, g.out_w);
            const int hi = std::clamp(g.width - shift, lo, g.out_w);
            std::fill(dst, dst + lo, T{0});
            std::memcpy(dst + lo, src + lo + shift, sizeof(T) * (hi - lo));
            std::fill(dst + hi, dst + g.out_w, T{0});
          } else {
            for (int ow = 0; ow < g.out_w; ++ow) {
              const int iw = ow * g.stride - g.padding + kj;
              dst[ow] = (iw >= 0 && iw < g.width) ? src[iw] : T{0};
            }
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: accumulates column entries back into the image.
template <typename T>
void col2im_add(const T* col, const Window& g, T* img) {
  const int cols = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    T* plane = img + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        const T* row = col + static_cast<std::size_t>((c * g.kernel + ki) * g.kernel + kj) * cols;
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.padding + ki;
          if (ih < 0 || ih >= g.height) continue;
          const T* src = row + oh * g.out_w;
          T* dst = plane + static_cast<std::size_t>(ih) * g.width;
          if (g.stride == 1) {
            const int shift = kj - g.padding;
            const int lo = std::clamp(-shift, 0, g.out_w);
            const int hi = std::clamp(g.width - shift, lo, g.out_w);
            for (int ow = lo; ow < hi; ++ow) dst[ow + shift] += src[ow];
          } else {
            for (int ow = 0; ow < g.out_w; ++ow) {
              const int iw = ow * g.stride - g.padding + kj;
              if (iw >= 0 && iw < g.width) dst[iw] += src[ow];
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Convolution. weight: [out, in, k, k]; x: [in, H, W]; y: [out, Ho, Wo].

template <typename T>
void conv2d_forward(const T* x, const Window& g, const T* weight, const T* bias, int out_channels, T* y,
                    std::vector<T>& scratch) {
  scratch.resize(static_cast<std::size_t>(g.rows()) * g.cols());
  im2col(x, g, scratch.data());
  ConstMatrixMap<T> w(weight, out_channels, g.rows());
  ConstMatrixMap<T> col(scratch.data(), g.rows(), g.cols());
  MatrixMap<T> out(y, out_channels, g.cols());
  out.noalias() = w * col;
  if (bias) {
    for (int o = 0; o < out_channels; ++o) out.row(o).array() += bias[o];
  }
}

/// Accumulates into dweight/dbias/dx (dx may be null).
template <typename T>
void conv2d_backward(const T* x, const Window& g, const T* weight, int out_channels, const T* dy, T* dweight,
                     T* dbias, T* dx, std::vector<T>& scratch) {
  scratch.resize(static_cast<std::size_t>(g.rows()) * g.cols());
  ConstMatrixMap<T> grad_out(dy, out_channels, g.cols());
  if (dbias) {
    // plain loop: Eigen's vectorized reduction order depends on alignment
    const std::size_t n = static_cast<std::size_t>(g.cols());
    for (int o = 0; o < out_channels; ++o) {
      const T* p = dy + n * o;
      T s{0};
      for (std::size_t i = 0; i < n; ++i) s += p[i];
      dbias[o] += s;
    }
  }
  im2col(x, g, scratch.data());
  {
    ConstMatrixMap<T> col(scratch.data(), g.rows(), g.cols());
    MatrixMap<T> dw(dweight, out_channels, g.rows());
    dw.noalias() += grad_out * col.transpose();
  }
  if (dx) {
    ConstMatrixMap<T> w(weight, out_channels, g.rows());
    MatrixMap<T> dcol(scratch.data(), g.rows(), g.cols());
    dcol.noalias() = w.transpose() * grad_out;
    col2im_add(scratch.data(), g, dx);
  }
}

// ---------------------------------------------------------------------------
// Transpose convolution. weight: [in, out, k, k]; x: [in, Hi, Wi];
// y: [out, Ho, Wo]. `g` describes the equivalent forward convolution from
// y-space (channels = out, height = Ho) to x-space (out_h = Hi).

template <typename T>
void transpose_conv2d_forward(const T* x, const Window& g, const T* weight, const T* bias, int in_channels, T* y,
                              std::vector<T>& scratch) {
  scratch.resize(static_cast<std::size_t>(g.rows()) * g.cols());
  ConstMatrixMap<T> w(weight, in_channels, g.rows());
  ConstMatrixMap<T> input(x, in_channels, g.cols());
  MatrixMap<T> col(scratch.data(), g.rows(), g.cols());
  col.noalias() = w.transpose() * input;
  const std::size_t plane = static_cast<std::size_t>(g.height) * g.width;
  std::fill(y, y + plane * g.channels, T{0});
  col2im_add(scratch.data(), g, y);
  if (bias) {
    for (int o = 0; o < g.channels; ++o) {
      T* p = y + plane * o;
      for (std::size_t i = 0; i < plane; ++i) p[i] += bias[o];
    }
  }
}

template <typename T>
void transpose_conv2d_backward(const T* x, const Window& g, const T* weight, int in_channels, const T* dy,
                               T* dweight, T* dbias, T* dx, std::vector<T>& scratch) {
  scratch.resize(static_cast<std::size_t>(g.rows()) * g.cols());
  const std::size_t plane = static_cast<std::size_t>(g.height) * g.width;
  if (dbias) {
    for (int o = 0; o < g.channels; ++o) {
      const T* p = dy + plane * o;
      T s{0};
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      dbias[o] += s;
    }
  }
  im2col(dy, g, scratch.data());
  ConstMatrixMap<T> dcol(scratch.data(), g.rows(), g.cols());
  {
    ConstMatrixMap<T> input(x, in_channels, g.cols());
    MatrixMap<T> dw(dweight, in_channels, g.rows());
    dw.noalias() += input * dcol.transpose();
  }
  if (dx) {
    ConstMatrixMap<T> w(weight, in_channels, g.rows());
    MatrixMap<T> grad_in(dx, in_channels, g.cols());
    grad_in.noalias() += w * dcol;
  }
}

// ---------------------------------------------------------------------------
// Bilinear resampling with half-pixel centers (align_corners = false).

struct LinearTaps {
  std::vector<int> lo, hi;
  std::vector<double> w_lo, w_hi;
};

inline LinearTaps linear_taps(int in, int out) {
  LinearTaps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.w_lo.resize(out);
  t.w_hi.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int i0 = std::min(static_cast<int>(src), in - 1);
    int i1 = i0 + (i0 < in - 1 ? 1 : 0);
    double l1 = src - i0;
    t.lo[i] = i0;
    t.hi[i] = i1;
    t.w_lo[i] = 1.0 - l1;
    t.w_hi[i] = l1;
  }
  return t;
}

/// x: [C, Hi, Wi] -> y: [C, Ho, Wo]
template <typename T>
void bilinear_forward(const T* x, int channels, int hi, int wi, int ho, int wo, T* y) {
  const LinearTaps th = linear_taps(hi, ho), tw = linear_taps(wi, wo);
  std::vector<T> wl(tw.w_lo.begin(), tw.w_lo.end()), wh(tw.w_hi.begin(), tw.w_hi.end());
  std::vector<T> row(static_cast<std::size_t>(wo));
  for (int c = 0; c < channels; ++c) {
    const T* plane = x + static_cast<std::size_t>(c) * hi * wi;
    T* out = y + static_cast<std::size_t>(c) * ho * wo;
    for (int oh = 0; oh < ho; ++oh) {
      const T* r0 = plane + static_cast<std::size_t>(th.lo[oh]) * wi;
      const T* r1 = plane + static_cast<std::size_t>(th.hi[oh]) * wi;
      const T a = static_cast<T>(th.w_lo[oh]), b = static_cast<T>(th.w_hi[oh]);
      T* dst = out + static_cast<std::size_t>(oh) * wo;
      for (int ow = 0; ow < wo; ++ow) {
        const int l = tw.lo[ow], h = tw.hi[ow];
        dst[ow] = a * (wl[ow] * r0[l] + wh[ow] * r0[h]) + b * (wl[ow] * r1[l] + wh[ow] * r1[h]);
      }
    }
  }
}

/// Accumulates the adjoint into dx.
template <typename T>
void bilinear_backward(const T* dy, int channels, int hi, int wi, int ho, int wo, T* dx) {
  const LinearTaps th = linear_taps(hi, ho), tw = linear_taps(wi, wo);
  for (int c = 0; c < channels; ++c) {
    T* plane = dx + static_cast<std::size_t>(c) * hi * wi;
    const T* g = dy + static_cast<std::size_t>(c) * ho * wo;
    for (int oh = 0; oh < ho; ++oh) {
      T* r0 = plane + static_cast<std::size_t>(th.lo[oh]) * wi;
      T* r1 = plane + static_cast<std::size_t>(th.hi[oh]) * wi;
      const T a = static_cast<T>(th.w_lo[oh]), b = static_cast<T>(th.w_hi[oh]);
      const T* src = g + static_cast<std::size_t>(oh) * wo;
      for (int ow = 0; ow < wo; ++ow) {
        const int l = tw.lo[ow], h = tw.hi[ow];
        const T wl = static_cast<T>(tw.w_lo[ow]), wh = static_cast<T>(tw.w_hi[ow]);
        r0[l] += a * wl * src[ow];
        r0[h] += a * wh * src[ow];
        r1[l] += b * wl * src[ow];
        r1[h] += b * wh * src[ow];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Channel-axis softmax. logits: [C, HW]; probs: [C, HW].

/// probs = softmax(logits / temperature) along the channel axis, max-subtracted.
template <typename T>
void softmax_channels(const T* logits, int channels, int pixels, T temperature, T* probs, std::vector<T>& scratch) {
  scratch.assign(static_cast<std::size_t>(pixels), -std::numeric_limits<T>::infinity());
  T* mx = scratch.data();
  for (int c = 0; c < channels; ++c) {
    const T* row = logits + static_cast<std::size_t>(c) * pixels;
    for (int p = 0; p < pixels; ++p) mx[p] = std::max(mx[p], row[p]);
  }
  std::vector<T> sum(static_cast<std::size_t>(pixels), T{0});
  const T inv_t = T{1} / temperature;
  for (int c = 0; c < channels; ++c) {
    const T* row = logits + static_cast<std::size_t>(c) * pixels;
    T* out = probs + static_cast<std::size_t>(c) * pixels;
    for (int p = 0; p < pixels; ++p) {
      out[p] = std::exp((row[p] - mx[p]) * inv_t);
      sum[p] += out[p];
    }
  }
  for (int p = 0; p < pixels; ++p) sum[p] = T{1} / sum[p];
  for (int c = 0; c < channels; ++c) {
    T* out = probs + static_cast<std::size_t>(c) * pixels;
    for (int p = 0; p < pixels; ++p) out[p] *= sum[p];
  }
}

template <typename T>
void require_finite(const Tensor<T>& x, const char* what) {
  if (!x.all_finite()) throw NumericError(std::string(what) + ": non-finite values");
}

/// Softmax over axis 1 of a B x C x H x W tensor.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits, T temperature = T{1}) {
  if (logits.rank() != 4) throw ShapeError("softmax expects a 4-axis tensor, got " + to_string(logits.shape()));
  Tensor<T> probs(logits.shape());
  const int c = logits.dim(1), pixels = logits.dim(2) * logits.dim(3);
  std::vector<T> scratch;
  for (int n = 0; n < logits.dim(0); ++n) {
    softmax_channels(logits.sample(n), c, pixels, temperature, probs.sample(n), scratch);
  }
  return probs;
}

/// Expected bin index under the channel softmax: D = sum_i i * softmax(p)_i.
/// Output B x H x W; every value lies in [0, d_max - 1].
template <typename T>
Tensor<T> soft_argmax(const Tensor<T>& logits) {
  if (logits.rank() != 4) throw ShapeError("soft_argmax expects B x d_max x H x W, got " + to_string(logits.shape()));
  require_finite(logits, "soft_argmax");
  const int batch = logits.dim(0), bins = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  const int pixels = h * w;
  Tensor<T> disparity({batch, h, w});
  // sum_i i * e_i / sum_i e_i with e_i = exp(l_i - max): uniform logits give (d_max - 1) / 2 exactly
  std::vector<T> top(static_cast<std::size_t>(pixels)), num(top.size()), den(top.size());
  for (int n = 0; n < batch; ++n) {
    const T* in = logits.sample(n);
    std::copy(in, in + pixels, top.begin());
    for (int i = 1; i < bins; ++i)
      for (int p = 0; p < pixels; ++p) top[p] = std::max(top[p], in[static_cast<std::size_t>(i) * pixels + p]);
    std::fill(num.begin(), num.end(), T{0});
    std::fill(den.begin(), den.end(), T{0});
    for (int i = 0; i < bins; ++i) {
      const T* row = in + static_cast<std::size_t>(i) * pixels;
      const T d = static_cast<T>(i);
      for (int p = 0; p < pixels; ++p) {
        const T e = std::exp(row[p] - top[p]);
        num[p] += d * e;
        den[p] += e;
      }
    }
    T* out = disparity.sample(n);
    for (int p = 0; p < pixels; ++p) out[p] = std::clamp(num[p] / den[p], T{0}, static_cast<T>(bins - 1));
  }
  return disparity;
}

/// Vector-Jacobian product of soft_argmax: dL/dp_i = s_i * (i - D) * dL/dD.
template <typename T>
Tensor<T> soft_argmax_backward(const Tensor<T>& logits, const Tensor<T>& grad_disparity) {
  const int batch = logits.dim(0), bins = logits.dim(1), pixels = logits.dim(2) * logits.dim(3);
  require_shape(grad_disparity.shape(), {batch, logits.dim(2), logits.dim(3)}, "soft_argmax_backward");
  Tensor<T> grad(logits.shape());
  std::vector<T> scratch, expect(static_cast<std::size_t>(pixels));
  for (int n = 0; n < batch; ++n) {
    T* probs = grad.sample(n);
    softmax_channels(logits.sample(n), bins, pixels, T{1}, probs, scratch);
    std::fill(expect.begin(), expect.end(), T{0});
    for (int i = 1; i < bins; ++i) {
      const T* row = probs + static_cast<std::size_t>(i) * pixels;
      for (int p = 0; p < pixels; ++p) expect[p] += static_cast<T>(i) * row[p];
    }
    const T* gd = grad_disparity.sample(n);
    for (int i = 0; i < bins; ++i) {
      T* row = probs + static_cast<std::size_t>(i) * pixels;
      for (int p = 0; p < pixels; ++p) row[p] *= (static_cast<T>(i) - expect[p]) * gd[p];
    }
  }
  return grad;
}

}  // namespace dtp::kernels
