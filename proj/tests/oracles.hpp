#pragma once

// Independent reference computations used as test oracles. Written with plain
// loops in double precision; nothing here calls into the library's kernels.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace oracle {

/// Softmax by direct summation of exp(p_i / t) (no max subtraction).
inline std::vector<double> softmax(const std::vector<double>& p, double t = 1.0) {
  std::vector<double> e(p.size());
  double z = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    e[i] = std::exp(p[i] / t);
    z += e[i];
  }
  for (double& v : e) v /= z;
  return e;
}

inline double soft_argmax(const std::vector<double>& p) {
  const auto s = softmax(p);
  double d = 0;
  for (std::size_t i = 0; i < s.size(); ++i) d += static_cast<double>(i) * s[i];
  return d;
}

inline double l1_between_softmaxes(const std::vector<double>& p, const std::vector<double>& q, double t) {
  const auto a = softmax(p, t), b = softmax(q, t);
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

/// KL(softmax(q/t) || softmax(p/t)) by direct summation.
inline double kl_teacher_student(const std::vector<double>& p, const std::vector<double>& q, double t) {
  const auto sp = softmax(p, t), sq = softmax(q, t);
  double s = 0;
  for (std::size_t i = 0; i < sp.size(); ++i) {
    if (sq[i] > 0) s += sq[i] * std::log(sq[i] / sp[i]);
  }
  return s;
}

/// Indices of the `count` smallest scores; full sort, ties by index.
inline std::vector<int> lowest_indices(const std::vector<double>& scores, int count) {
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] < scores[b];
    return a < b;
  });
  idx.resize(static_cast<std::size_t>(count));
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Naive direct convolution for one sample, NCHW, weight [out][in][k][k].
inline std::vector<double> conv2d(const std::vector<double>& x, int cin, int h, int w, const std::vector<double>& wt,
                                  int cout, int k, int stride, int pad, int& ho, int& wo) {
  ho = (h + 2 * pad - k) / stride + 1;
  wo = (w + 2 * pad - k) / stride + 1;
  std::vector<double> y(static_cast<std::size_t>(cout) * ho * wo, 0.0);
  for (int o = 0; o < cout; ++o)
    for (int oh = 0; oh < ho; ++oh)
      for (int ow = 0; ow < wo; ++ow) {
        double s = 0;
        for (int c = 0; c < cin; ++c)
          for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) {
              int ih = oh * stride - pad + i, iw = ow * stride - pad + j;
              if (ih < 0 || ih >= h || iw < 0 || iw >= w) continue;
              s += x[(static_cast<std::size_t>(c) * h + ih) * w + iw] * wt[((static_cast<std::size_t>(o) * cin + c) * k + i) * k + j];
            }
        y[(static_cast<std::size_t>(o) * ho + oh) * wo + ow] = s;
      }
  return y;
}

/// Naive transpose convolution (scatter form), weight [in][out][k][k].
inline std::vector<double> transpose_conv2d(const std::vector<double>& x, int cin, int h, int w,
                                            const std::vector<double>& wt, int cout, int k, int stride, int pad,
                                            int ho, int wo) {
  std::vector<double> y(static_cast<std::size_t>(cout) * ho * wo, 0.0);
  for (int c = 0; c < cin; ++c)
    for (int ih = 0; ih < h; ++ih)
      for (int iw = 0; iw < w; ++iw)
        for (int o = 0; o < cout; ++o)
          for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) {
              int oh = ih * stride - pad + i, ow = iw * stride - pad + j;
              if (oh < 0 || oh >= ho || ow < 0 || ow >= wo) continue;
              y[(static_cast<std::size_t>(o) * ho + oh) * wo + ow] +=
                  x[(static_cast<std::size_t>(c) * h + ih) * w + iw] * wt[((static_cast<std::size_t>(c) * cout + o) * k + i) * k + j];
            }
  return y;
}

}  // namespace oracle
