#pragma once

// Optimizer, supervised teacher training, logit distillation and the
// distill-then-prune driver.

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtp/datasets.hpp"
#include "dtp/distillation.hpp"
#include "dtp/error.hpp"
#include "dtp/metrics.hpp"
#include "dtp/network.hpp"
#include "dtp/pruning.hpp"

namespace dtp {

// ---------------------------------------------------------------------------
// AdamW

struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-2;
  double eps = 1e-8;
  int decay_epoch = 0;  // 0: constant learning rate
  double decay_lr = 1e-4;

  double lr_at(int epoch) const { return decay_epoch > 0 && epoch >= decay_epoch ? decay_lr : lr; }
};

inline void validate(const OptimizerConfig& c) {
  if (!(c.lr > 0) || !(c.beta1 >= 0 && c.beta1 < 1) || !(c.beta2 >= 0 && c.beta2 < 1) || c.weight_decay < 0 ||
      !(c.eps > 0) || c.decay_epoch < 0 || !(c.decay_lr > 0)) {
    throw ConfigError("invalid optimizer settings");
  }
}

inline nlohmann::ordered_json to_json(const OptimizerConfig& c) {
  return {{"kind", "adamw"},      {"lr", c.lr},   {"beta1", c.beta1},           {"beta2", c.beta2},
          {"weight_decay", c.weight_decay}, {"eps", c.eps}, {"decay_epoch", c.decay_epoch}, {"decay_lr", c.decay_lr}};
}

inline OptimizerConfig optimizer_config_from_json(const nlohmann::json& j) {
  OptimizerConfig c;
  const std::string kind = j.value("kind", std::string("adamw"));
  if (kind != "adamw") throw ConfigError("unsupported optimizer '" + kind + "'");
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.eps = j.value("eps", c.eps);
  c.decay_epoch = j.value("decay_epoch", c.decay_epoch);
  c.decay_lr = j.value("decay_lr", c.decay_lr);
  validate(c);
  return c;
}

/// Adam with decoupled weight decay over Network::parameters() order.
template <typename T>
class AdamW {
 public:
  explicit AdamW(OptimizerConfig config = {}) : config_(config) { validate(config_); }

  const OptimizerConfig& config() const { return config_; }
  std::int64_t steps() const { return steps_; }
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }
  void set_steps(std::int64_t s) { steps_ = s; }

  void step(Network<T>& net, double lr) {
    auto params = net.parameters();
    if (m_.size() != params.size()) {
      m_.clear();
      v_.clear();
      for (const auto& p : params) {
        m_.emplace_back(p.value->shape());
        v_.emplace_back(p.value->shape());
      }
    }
    ++steps_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
    const T decay = static_cast<T>(1.0 - lr * config_.weight_decay);
    const T step_size = static_cast<T>(lr / c1);
    const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(c2));
    const T eps = static_cast<T>(config_.eps);
    for (std::size_t k = 0; k < params.size(); ++k) {
      require_shape(m_[k].shape(), params[k].value->shape(), "optimizer state for " + params[k].name);
      T* w = params[k].value->data();
      const T* g = params[k].grad->data();
      T* m = m_[k].data();
      T* v = v_[k].data();
      for (std::size_t i = 0; i < m_[k].size(); ++i) {
        w[i] *= decay;
        m[i] = b1 * m[i] + (T{1} - b1) * g[i];
        v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
        w[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_c2 + eps);
      }
    }
  }

 private:
  OptimizerConfig config_;
  std::int64_t steps_ = 0;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
};

// ---------------------------------------------------------------------------
// Plan

/// Epoch counts for each phase; M (distill_epochs) is measured in epochs.
struct TrainingPlan {
  int teacher_epochs = 20;
  int distill_epochs = 20;
  int prune_rounds = 5;
  double prune_rate = 0.1;
  int finetune_epochs = 5;
  int batch_size = 8;
};

inline void validate(const TrainingPlan& p) {
  if (p.teacher_epochs < 0 || p.distill_epochs < 1 || p.prune_rounds < 1 || p.finetune_epochs < 1 ||
      p.batch_size < 1) {
    throw ConfigError("training plan counts must be positive (teacher_epochs may be 0)");
  }
  if (!(p.prune_rate > 0.0 && p.prune_rate < 1.0)) throw ConfigError("prune_rate must lie in (0, 1)");
}

inline nlohmann::ordered_json to_json(const TrainingPlan& p) {
  return {{"teacher_epochs", p.teacher_epochs}, {"distill_epochs", p.distill_epochs}, {"prune_rounds", p.prune_rounds},
          {"prune_rate", p.prune_rate},         {"finetune_epochs", p.finetune_epochs}, {"batch_size", p.batch_size}};
}

inline TrainingPlan training_plan_from_json(const nlohmann::json& j) {
  TrainingPlan p;
  p.teacher_epochs = j.value("teacher_epochs", p.teacher_epochs);
  p.distill_epochs = j.value("distill_epochs", p.distill_epochs);
  p.prune_rounds = j.value("prune_rounds", p.prune_rounds);
  p.prune_rate = j.value("prune_rate", p.prune_rate);
  p.finetune_epochs = j.value("finetune_epochs", p.finetune_epochs);
  p.batch_size = j.value("batch_size", p.batch_size);
  validate(p);
  return p;
}

// ---------------------------------------------------------------------------
// Records and hooks

struct EpochLog {
  std::string phase;  // "teacher", "distill", "finetune"
  int round = 0;
  int epoch = 0;
  std::optional<double> temperature;
  double loss = 0;
  std::optional<double> train_epe;
  std::optional<double> val_epe;
  std::size_t params = 0;
  double seconds = 0;
};

inline nlohmann::ordered_json to_json(const EpochLog& e) {
  nlohmann::ordered_json j{{"phase", e.phase}, {"round", e.round}, {"epoch", e.epoch}};
  j["t"] = e.temperature ? nlohmann::ordered_json(*e.temperature) : nlohmann::ordered_json(nullptr);
  j["loss"] = e.loss;
  j["train_epe"] = optional_json(e.train_epe);
  if (e.val_epe) j["val_epe"] = *e.val_epe;
  j["params"] = e.params;
  j["seconds"] = e.seconds;
  return j;
}

/// Summary emitted after the initial distillation (round 0) and after every
/// prune-and-finetune round.
struct PhaseResult {
  std::string phase;
  int round = 0;
  MetricReport val;
  std::size_t params = 0;
  std::vector<int> group_sizes;  // prunable groups, dependency-graph order
  std::optional<PruneRecord> prune;
};

inline std::vector<int> prunable_group_sizes(const ModelConfig& config) {
  std::vector<int> sizes;
  for (const auto& g : build_dependency_graph(config).groups)
    if (g.prunable) sizes.push_back(g.size);
  return sizes;
}

inline nlohmann::ordered_json to_json(const PhaseResult& r) {
  nlohmann::ordered_json j{{"phase", r.phase}, {"round", r.round}, {"val", to_json(r.val)}, {"params", r.params},
                           {"group_sizes", r.group_sizes}};
  if (r.prune) j["prune"] = to_json(*r.prune);
  return j;
}

struct TrainHooks {
  std::function<void(const EpochLog&)> on_epoch;
  std::function<void(const PhaseResult&, const Network<float>&, const AdamW<float>&)> on_phase;
  std::ostream* log = nullptr;  // notices (skipped groups, cache use)
  bool eval_every_epoch = false;
};

// ---------------------------------------------------------------------------
// Evaluation

/// Full-frame eval-mode predictions, unpadded to the source size.
inline MetricReport evaluate(const Network<float>& net, const StereoDataset& data, const Normalization& norm = {},
                             bool kitti_official = false,
                             const std::function<void(std::size_t, const Tensor<float>&)>& on_prediction = {}) {
  MetricAccumulator acc(kitti_official);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Batch b = evaluation_batch(data, i, norm);
    Tensor<float> pred = unpad(net.predict(b.left, b.right).disparity, b.pad);
    acc.add(pred, unpad(b.gt, b.pad), unpad(b.valid, b.pad));
    if (on_prediction) on_prediction(i, pred);
  }
  return acc.report();
}

// ---------------------------------------------------------------------------
// Teacher logits

/// Frozen teacher. With caching, the quarter-resolution bin logits of each
/// full-frame training sample are stored once and upsampled on use; this is
/// only valid when training batches are uncropped.
class TeacherLogits {
 public:
  TeacherLogits(const Network<float>& teacher, bool cache) : teacher_(teacher), cache_(cache) {
    const auto& cfg = teacher.config();
    if (cache_ && (cfg.layers.back().kind != LayerKind::bilinear_upsample || cfg.layers.back().inputs[0] != cfg.size() - 2)) {
      throw ConfigError("teacher logit caching needs a graph ending in bin conv + bilinear upsample");
    }
  }

  bool caching() const { return cache_; }

  Tensor<float> operator()(const Batch& batch, const std::vector<std::size_t>& indices) {
    if (!cache_) return teacher_.predict(batch.left, batch.right).logits;
    const int h = batch.left.dim(2), w = batch.left.dim(3);
    const int bins_layer = teacher_.config().size() - 2;
    std::vector<float> values;
    Shape shape;
    for (std::size_t k = 0; k < indices.size(); ++k) {
      auto it = store_.find(indices[k]);
      if (it == store_.end()) {
        Tensor<float> l({1, 3, h, w}), r({1, 3, h, w});
        const std::size_t n = l.size();
        std::copy_n(batch.left.data() + k * n, n, l.data());
        std::copy_n(batch.right.data() + k * n, n, r.data());
        it = store_.emplace(indices[k], teacher_.infer_until(stack_batch(l, r), bins_layer)).first;
      }
      shape = it->second.shape();
      values.insert(values.end(), it->second.storage().begin(), it->second.storage().end());
    }
    shape[0] = static_cast<int>(indices.size());
    return bilinear_resize(Tensor<float>(shape, std::move(values)), h, w);
  }

 private:
  const Network<float>& teacher_;
  bool cache_;
  std::map<std::size_t, Tensor<float>> store_;
};

// ---------------------------------------------------------------------------
// Epoch loops

struct EpochContext {
  std::uint64_t seed = 0;
  int epoch = 0;  // global epoch index for data order
  int batch_size = 8;
  Normalization norm;
  double lr = 1e-3;
};

namespace detail {

inline void check_finite_loss(double loss, const std::string& phase, int epoch) {
  if (!std::isfinite(loss)) {
    throw NumericError("non-finite loss in " + phase + " epoch " + std::to_string(epoch));
  }
}

template <typename Step>
EpochLog run_epoch(const StereoDataset& data, const EpochContext& ctx, Step&& step) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto order = epoch_order(data.size(), ctx.seed, ctx.epoch);
  double loss_sum = 0;
  std::size_t batches = 0;
  MetricAccumulator train_metrics;
  for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(ctx.batch_size)) {
    const Batch b = training_batch(data, order, first, ctx.batch_size, ctx.seed, ctx.epoch, ctx.norm);
    const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(first),
                                       order.begin() + static_cast<std::ptrdiff_t>(first + b.size()));
    loss_sum += step(b, idx, train_metrics);
    ++batches;
  }
  EpochLog log;
  log.epoch = ctx.epoch;
  log.loss = loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1));
  log.train_epe = train_metrics.report().epe;
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

}  // namespace detail

/// One epoch of smooth-L1 training on ground truth.
inline EpochLog supervised_epoch(Network<float>& net, AdamW<float>& opt, const StereoDataset& data,
                                 const EpochContext& ctx) {
  auto log = detail::run_epoch(data, ctx, [&](const Batch& b, const std::vector<std::size_t>&, MetricAccumulator& m) {
    auto pred = net.forward(b.left, b.right, Mode::train);
    auto loss = supervised_loss(pred.disparity, b.gt, b.valid);
    detail::check_finite_loss(loss.value, "supervised", ctx.epoch);
    m.add(pred.disparity, b.gt, b.valid);
    if (loss.empty_mask) return 0.0;
    net.zero_grad();
    net.backward(kernels::soft_argmax_backward(pred.logits, loss.grad));
    opt.step(net, ctx.lr);
    return loss.value;
  });
  log.phase = "teacher";
  log.params = net.parameter_count();
  return log;
}

/// One epoch of distillation at temperature `t`.
inline EpochLog distill_epoch(Network<float>& student, TeacherLogits& teacher, AdamW<float>& opt,
                              const StereoDataset& data, const DistillConfig& cfg, double t, const EpochContext& ctx) {
  auto log = detail::run_epoch(data, ctx, [&](const Batch& b, const std::vector<std::size_t>& idx, MetricAccumulator& m) {
    Tensor<float> q;
    if (cfg.signal_mode != SignalMode::gt_only) q = teacher(b, idx);
    auto pred = student.forward(b.left, b.right, Mode::train);
    auto loss = combined_loss(cfg, pred.logits, q.empty() ? nullptr : &q, pred.disparity, b.gt, b.valid, t);
    detail::check_finite_loss(loss.value, "distill", ctx.epoch);
    m.add(pred.disparity, b.gt, b.valid);
    student.zero_grad();
    student.backward(loss.grad);
    opt.step(student, ctx.lr);
    return loss.value;
  });
  log.phase = "distill";
  log.temperature = t;
  log.params = student.parameter_count();
  return log;
}

// ---------------------------------------------------------------------------
// Drivers

struct RunSettings {
  std::uint64_t seed = 0;
  Normalization norm;
  OptimizerConfig optimizer;
  DistillConfig distill;
  TemperatureSchedule schedule;  // total_epochs is set per phase
};

/// Supervised teacher training; returns the final validation report (or
/// an empty one without validation data).
inline MetricReport train_teacher(Network<float>& net, const StereoDataset& train, const StereoDataset* val,
                                  const TrainingPlan& plan, const RunSettings& run, const TrainHooks& hooks = {}) {
  validate(plan);
  AdamW<float> opt(run.optimizer);
  for (int e = 0; e < plan.teacher_epochs; ++e) {
    EpochContext ctx{run.seed, e, plan.batch_size, run.norm, run.optimizer.lr_at(e)};
    EpochLog log = supervised_epoch(net, opt, train, ctx);
    if (hooks.eval_every_epoch && val) log.val_epe = evaluate(net, *val, run.norm).epe;
    if (hooks.on_epoch) hooks.on_epoch(log);
  }
  PhaseResult result;
  result.phase = "teacher";
  result.params = net.parameter_count();
  if (val) result.val = evaluate(net, *val, run.norm);
  if (hooks.on_phase) hooks.on_phase(result, net, opt);
  return result.val;
}

/// `epochs` epochs of distillation with the temperature schedule restarted.
inline void distill_phase(Network<float>& student, TeacherLogits& teacher, AdamW<float>& opt,
                          const StereoDataset& train, const StereoDataset* val, const RunSettings& run, int epochs,
                          int batch_size, int& global_epoch, const std::string& phase, int round,
                          const TrainHooks& hooks) {
  TemperatureSchedule sched = run.schedule;
  sched.total_epochs = epochs;
  for (int e = 0; e < epochs; ++e) {
    const double t = temperature_at(sched, e);
    EpochContext ctx{run.seed, global_epoch, batch_size, run.norm, run.optimizer.lr_at(global_epoch)};
    EpochLog log = distill_epoch(student, teacher, opt, train, run.distill, t, ctx);
    log.phase = phase;
    log.round = round;
    log.epoch = e;
    if (hooks.eval_every_epoch && val) log.val_epe = evaluate(student, *val, run.norm).epe;
    if (hooks.on_epoch) hooks.on_epoch(log);
    ++global_epoch;
  }
}

struct DtpResult {
  Network<float> student;
  std::vector<PhaseResult> phases;
};

/// Distill for M epochs, then E rounds of {prune at rate r, finetune by
/// distillation}. A PhaseResult (and on_phase call) follows the initial
/// distillation and every round. The optimizer state restarts after each
/// prune because parameter shapes change.
inline DtpResult dtp_train(const TrainingPlan& plan, const Network<float>& teacher, Network<float> student,
                           const StereoDataset& train, const StereoDataset* val, const RunSettings& run,
                           const TrainHooks& hooks = {}) {
  validate(plan);
  validate(run.distill);
  if (teacher.config().d_max != student.config().d_max) {
    throw ConfigError("teacher d_max " + std::to_string(teacher.config().d_max) + " != student d_max " +
                      std::to_string(student.config().d_max));
  }
  bool cache = run.distill.cache_teacher;
  const auto& spec = train.spec();
  if (cache && spec.kind == DatasetKind::synthetic && spec.crop_h && (spec.crop_h != spec.height || spec.crop_w != spec.width)) {
    if (hooks.log) *hooks.log << "teacher cache disabled: training crops differ from the full frame\n";
    cache = false;
  }
  if (cache && spec.kind != DatasetKind::synthetic && spec.crop_h) cache = false;
  TeacherLogits teacher_logits(teacher, cache);

  DtpResult out{std::move(student), {}};
  int global_epoch = 0;
  auto finish = [&](const std::string& phase, int round, std::optional<PruneRecord> rec, const AdamW<float>& opt) {
    PhaseResult r;
    r.phase = phase;
    r.round = round;
    r.params = out.student.parameter_count();
    r.group_sizes = prunable_group_sizes(out.student.config());
    r.prune = std::move(rec);
    if (val) r.val = evaluate(out.student, *val, run.norm);
    if (hooks.on_phase) hooks.on_phase(r, out.student, opt);
    out.phases.push_back(std::move(r));
  };

  {
    AdamW<float> opt(run.optimizer);
    distill_phase(out.student, teacher_logits, opt, train, val, run, plan.distill_epochs, plan.batch_size,
                  global_epoch, "distill", 0, hooks);
    finish("distill", 0, std::nullopt, opt);
  }
  for (int round = 1; round <= plan.prune_rounds; ++round) {
    PruneRecord rec;
    out.student = prune_step(out.student, plan.prune_rate, &rec, hooks.log);
    AdamW<float> opt(run.optimizer);
    distill_phase(out.student, teacher_logits, opt, train, val, run, plan.finetune_epochs, plan.batch_size,
                  global_epoch, "finetune", round, hooks);
    finish("round", round, std::move(rec), opt);
  }
  return out;
}

}  // namespace dtp
