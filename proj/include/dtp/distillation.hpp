#pragma once

// Logit distillation losses, the supervised smooth-L1 loss and the
// supervision-signal modes that combine them.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtp/error.hpp"
#include "dtp/kernels.hpp"
#include "dtp/tensor.hpp"

namespace dtp {

using Mask = Tensor<std::uint8_t>;

/// Linear per-epoch ramp, constant within an epoch.
struct TemperatureSchedule {
  double t_start = 0.5;
  double t_end = 1.0;
  int total_epochs = 1;
};

inline double temperature_at(const TemperatureSchedule& s, int epoch) {
  if (s.total_epochs <= 0) throw DomainError("temperature schedule needs at least one epoch");
  if (epoch < 0 || epoch >= s.total_epochs) {
    throw DomainError("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(s.total_epochs) + ")");
  }
  if (s.total_epochs == 1) return s.t_start;
  if (epoch == s.total_epochs - 1) return s.t_end;
  const double frac = static_cast<double>(epoch) / (s.total_epochs - 1);
  return s.t_start + (s.t_end - s.t_start) * frac;
}

enum class SignalMode { gt_only, kd_plus_gt, kd_only };
enum class Divergence { l1, kl };

struct DistillConfig {
  SignalMode signal_mode = SignalMode::kd_only;
  Divergence divergence = Divergence::l1;
  double gt_weight = 0.5;
  bool cache_teacher = false;
};

inline const char* to_string(SignalMode m) {
  switch (m) {
    case SignalMode::gt_only: return "gt_only";
    case SignalMode::kd_plus_gt: return "kd_plus_gt";
    case SignalMode::kd_only: return "kd_only";
  }
  return "?";
}
inline const char* to_string(Divergence d) { return d == Divergence::l1 ? "l1" : "kl"; }

inline SignalMode parse_signal_mode(const std::string& s) {
  if (s == "gt_only") return SignalMode::gt_only;
  if (s == "kd_plus_gt") return SignalMode::kd_plus_gt;
  if (s == "kd_only") return SignalMode::kd_only;
  throw ConfigError("unknown signal_mode '" + s + "'");
}
inline Divergence parse_divergence(const std::string& s) {
  if (s == "l1" || s == "L1") return Divergence::l1;
  if (s == "kl" || s == "KL") return Divergence::kl;
  throw ConfigError("unknown divergence '" + s + "'");
}

inline void validate(const DistillConfig& c) {
  if (!(c.gt_weight >= 0.0 && c.gt_weight <= 1.0)) throw ConfigError("gt_weight must lie in [0, 1]");
}

inline nlohmann::ordered_json to_json(const DistillConfig& c, const TemperatureSchedule& s) {
  return {{"signal_mode", to_string(c.signal_mode)}, {"divergence", to_string(c.divergence)},
          {"gt_weight", c.gt_weight},                {"cache_teacher", c.cache_teacher},
          {"t_start", s.t_start},                    {"t_end", s.t_end}};
}

inline DistillConfig distill_config_from_json(const nlohmann::json& j) {
  DistillConfig c;
  c.signal_mode = parse_signal_mode(j.value("signal_mode", std::string("kd_only")));
  c.divergence = parse_divergence(j.value("divergence", std::string("l1")));
  c.gt_weight = j.value("gt_weight", 0.5);
  c.cache_teacher = j.value("cache_teacher", false);
  validate(c);
  return c;
}

/// Loss value and its gradient with respect to the student logits (empty when not requested).
template <typename T>
struct LossValue {
  double value = 0.0;
  Tensor<T> grad;
  bool empty_mask = false;
};

namespace detail {

template <typename T>
void check_pair(const Tensor<T>& p, const Tensor<T>& q, double t, const char* what) {
  if (!(t > 0.0) || !std::isfinite(t)) throw DomainError(std::string(what) + ": temperature must be > 0");
  if (p.shape() != q.shape()) {
    throw ShapeError(std::string(what) + ": student " + to_string(p.shape()) + " vs teacher " + to_string(q.shape()));
  }
  if (p.rank() != 4) throw ShapeError(std::string(what) + ": logits must be B x d_max x H x W");
}

}  // namespace detail

/// Mean over pixels of sum_i |softmax(p/t)_i - softmax(q/t)_i|. The teacher
/// logits q receive no gradient.
template <typename T>
LossValue<T> kd_loss(const Tensor<T>& p, const Tensor<T>& q, double t, bool with_grad = true) {
  detail::check_pair(p, q, t, "kd_loss");
  const int batch = p.dim(0), bins = p.dim(1), pixels = p.dim(2) * p.dim(3);
  const double count = static_cast<double>(batch) * pixels;
  LossValue<T> out;
  if (with_grad) out.grad = Tensor<T>(p.shape());
  std::vector<T> sp(static_cast<std::size_t>(bins) * pixels), sq(sp.size()), scratch, dot(pixels);
  const T temp = static_cast<T>(t);
  double total = 0;
  for (int n = 0; n < batch; ++n) {
    kernels::softmax_channels(p.sample(n), bins, pixels, temp, sp.data(), scratch);
    kernels::softmax_channels(q.sample(n), bins, pixels, temp, sq.data(), scratch);
    double s = 0;
    for (std::size_t k = 0; k < sp.size(); ++k) s += std::abs(static_cast<double>(sp[k]) - sq[k]);
    total += s;
    if (!with_grad) continue;
    // g_i = sign(sp_i - sq_i) / count;  dL/dp_j = sp_j / t * (g_j - sum_i g_i sp_i)
    const T inv_count = static_cast<T>(1.0 / count);
    std::fill(dot.begin(), dot.end(), T{0});
    T* g = out.grad.sample(n);
    for (int i = 0; i < bins; ++i) {
      const std::size_t row = static_cast<std::size_t>(i) * pixels;
      for (int px = 0; px < pixels; ++px) {
        const T diff = sp[row + px] - sq[row + px];
        const T sign = diff > T{0} ? inv_count : (diff < T{0} ? -inv_count : T{0});
        g[row + px] = sign;
        dot[px] += sign * sp[row + px];
      }
    }
    const T inv_t = static_cast<T>(1.0 / t);
    for (int i = 0; i < bins; ++i) {
      const std::size_t row = static_cast<std::size_t>(i) * pixels;
      for (int px = 0; px < pixels; ++px) g[row + px] = sp[row + px] * inv_t * (g[row + px] - dot[px]);
    }
  }
  out.value = total / count;
  return out;
}

/// Mean over pixels of KL(softmax(q/t) || softmax(p/t)).
template <typename T>
LossValue<T> kl_loss(const Tensor<T>& p, const Tensor<T>& q, double t, bool with_grad = true) {
  detail::check_pair(p, q, t, "kl_loss");
  const int batch = p.dim(0), bins = p.dim(1), pixels = p.dim(2) * p.dim(3);
  const double count = static_cast<double>(batch) * pixels;
  LossValue<T> out;
  if (with_grad) out.grad = Tensor<T>(p.shape());
  std::vector<T> sp(static_cast<std::size_t>(bins) * pixels), sq(sp.size()), scratch;
  const T temp = static_cast<T>(t);
  double total = 0;
  for (int n = 0; n < batch; ++n) {
    kernels::softmax_channels(p.sample(n), bins, pixels, temp, sp.data(), scratch);
    kernels::softmax_channels(q.sample(n), bins, pixels, temp, sq.data(), scratch);
    for (std::size_t k = 0; k < sp.size(); ++k) {
      if (sq[k] > T{0}) {
        total += static_cast<double>(sq[k]) * (std::log(static_cast<double>(sq[k])) - std::log(static_cast<double>(sp[k])));
      }
    }
    if (!with_grad) continue;
    const T scale = static_cast<T>(1.0 / (t * count));
    T* g = out.grad.sample(n);
    for (std::size_t k = 0; k < sp.size(); ++k) g[k] = (sp[k] - sq[k]) * scale;
  }
  out.value = total / count;
  return out;
}

template <typename T>
LossValue<T> divergence_loss(Divergence d, const Tensor<T>& p, const Tensor<T>& q, double t, bool with_grad = true) {
  return d == Divergence::l1 ? kd_loss(p, q, t, with_grad) : kl_loss(p, q, t, with_grad);
}

/// Smooth-L1 (quadratic below 1 px) averaged over mask-true pixels. Gradient is
/// with respect to the predicted disparity.
template <typename T>
LossValue<T> supervised_loss(const Tensor<T>& pred, const Tensor<T>& gt, const Mask& mask, bool with_grad = true) {
  require_shape(gt.shape(), pred.shape(), "supervised_loss ground truth");
  require_shape(mask.shape(), pred.shape(), "supervised_loss mask");
  LossValue<T> out;
  if (with_grad) out.grad = Tensor<T>(pred.shape());
  std::size_t valid = 0;
  double total = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (!mask[k]) continue;
    ++valid;
    const double d = static_cast<double>(pred[k]) - gt[k];
    const double a = std::abs(d);
    total += a < 1.0 ? 0.5 * d * d : a - 0.5;
  }
  if (valid == 0) {
    out.empty_mask = true;
    return out;
  }
  out.value = total / static_cast<double>(valid);
  if (with_grad) {
    const double inv = 1.0 / static_cast<double>(valid);
    for (std::size_t k = 0; k < pred.size(); ++k) {
      if (!mask[k]) continue;
      const double d = static_cast<double>(pred[k]) - gt[k];
      out.grad[k] = static_cast<T>(std::clamp(d, -1.0, 1.0) * inv);
    }
  }
  return out;
}

/// Supervision-signal selector. `teacher` may be null in gt_only mode; the
/// returned gradient is with respect to the student logits `p`.
template <typename T>
LossValue<T> combined_loss(const DistillConfig& config, const Tensor<T>& p, const Tensor<T>* teacher,
                           const Tensor<T>& pred, const Tensor<T>& gt, const Mask& mask, double t,
                           bool with_grad = true) {
  validate(config);
  if (config.signal_mode != SignalMode::gt_only && teacher == nullptr) {
    throw ConfigError(std::string("signal mode ") + to_string(config.signal_mode) + " requires teacher logits");
  }
  auto supervised_term = [&]() {
    LossValue<T> s = supervised_loss(pred, gt, mask, with_grad);
    LossValue<T> out;
    out.value = s.value;
    out.empty_mask = s.empty_mask;
    if (with_grad) out.grad = kernels::soft_argmax_backward(p, s.grad);
    return out;
  };
  switch (config.signal_mode) {
    case SignalMode::gt_only:
      return supervised_term();
    case SignalMode::kd_only:
      return divergence_loss(config.divergence, p, *teacher, t, with_grad);
    case SignalMode::kd_plus_gt: {
      const double w = config.gt_weight;
      LossValue<T> s = supervised_term();
      LossValue<T> d = divergence_loss(config.divergence, p, *teacher, t, with_grad);
      LossValue<T> out;
      out.value = w * s.value + (1.0 - w) * d.value;
      out.empty_mask = s.empty_mask;
      if (with_grad) {
        out.grad = Tensor<T>(p.shape());
        for (std::size_t k = 0; k < out.grad.size(); ++k) {
          out.grad[k] = static_cast<T>(w) * s.grad[k] + static_cast<T>(1.0 - w) * d.grad[k];
        }
      }
      return out;
    }
  }
  throw ConfigError("unreachable signal mode");
}

}  // namespace dtp
