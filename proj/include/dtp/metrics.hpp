#pragma once

// Disparity error metrics, per-module parameter / MAC accounting and a
// latency harness.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtp/error.hpp"
#include "dtp/model_config.hpp"
#include "dtp/network.hpp"
#include "dtp/tensor.hpp"

namespace dtp {

// ---------------------------------------------------------------------------
// Error metrics. Both return std::nullopt when no pixel is valid.

namespace detail {

template <typename T>
void check_metric_shapes(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<std::uint8_t>& mask) {
  require_shape(gt.shape(), pred.shape(), "metric ground truth");
  require_shape(mask.shape(), pred.shape(), "metric mask");
}

}  // namespace detail

template <typename T>
std::optional<double> epe(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<std::uint8_t>& mask) {
  detail::check_metric_shapes(pred, gt, mask);
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (!mask[k]) continue;
    sum += std::abs(static_cast<double>(pred[k]) - gt[k]);
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

/// Percentage of valid pixels with error strictly above 3 px. With
/// `kitti_official` an outlier must also exceed 5% of the ground truth.
template <typename T>
std::optional<double> d1(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<std::uint8_t>& mask,
                         bool kitti_official = false) {
  detail::check_metric_shapes(pred, gt, mask);
  std::size_t bad = 0, n = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (!mask[k]) continue;
    const double err = std::abs(static_cast<double>(pred[k]) - gt[k]);
    const bool outlier = err > 3.0 && (!kitti_official || err > 0.05 * std::abs(static_cast<double>(gt[k])));
    bad += outlier;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return 100.0 * static_cast<double>(bad) / static_cast<double>(n);
}

struct ImageMetrics {
  std::optional<double> epe;
  std::optional<double> d1;
  std::size_t valid = 0;
};

/// Dataset-level report. Aggregate EPE / D1 are pixel-weighted over all valid
/// pixels; images without valid pixels are listed but do not contribute.
struct MetricReport {
  std::optional<double> epe;
  std::optional<double> d1;
  std::size_t valid_pixel_count = 0;
  std::vector<ImageMetrics> per_image;
};

class MetricAccumulator {
 public:
  explicit MetricAccumulator(bool kitti_official = false) : kitti_(kitti_official) {}

  template <typename T>
  void add(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<std::uint8_t>& mask) {
    detail::check_metric_shapes(pred, gt, mask);
    ImageMetrics m;
    double err_sum = 0;
    std::size_t bad = 0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
      if (!mask[k]) continue;
      const double err = std::abs(static_cast<double>(pred[k]) - gt[k]);
      err_sum += err;
      bad += err > 3.0 && (!kitti_ || err > 0.05 * std::abs(static_cast<double>(gt[k])));
      ++m.valid;
    }
    if (m.valid) {
      m.epe = err_sum / static_cast<double>(m.valid);
      m.d1 = 100.0 * static_cast<double>(bad) / static_cast<double>(m.valid);
    }
    err_sum_ += err_sum;
    bad_ += bad;
    valid_ += m.valid;
    per_image_.push_back(m);
  }

  MetricReport report() const {
    MetricReport r;
    r.valid_pixel_count = valid_;
    r.per_image = per_image_;
    if (valid_) {
      r.epe = err_sum_ / static_cast<double>(valid_);
      r.d1 = 100.0 * static_cast<double>(bad_) / static_cast<double>(valid_);
    }
    return r;
  }

 private:
  bool kitti_;
  double err_sum_ = 0;
  std::size_t bad_ = 0;
  std::size_t valid_ = 0;
  std::vector<ImageMetrics> per_image_;
};

inline nlohmann::ordered_json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

inline nlohmann::ordered_json to_json(const MetricReport& r, bool per_image = false) {
  nlohmann::ordered_json j{{"epe", optional_json(r.epe)}, {"d1", optional_json(r.d1)}, {"valid_pixels", r.valid_pixel_count}};
  if (per_image) {
    j["images"] = nlohmann::ordered_json::array();
    for (const auto& m : r.per_image) {
      j["images"].push_back({{"epe", optional_json(m.epe)}, {"d1", optional_json(m.d1)}, {"valid_pixels", m.valid}});
    }
  }
  return j;
}

// ---------------------------------------------------------------------------
// Accounting

/// Exact trainable parameter count of one layer.
inline std::size_t layer_params(const LayerSpec& l) {
  if (l.has_weights()) {
    return static_cast<std::size_t>(l.kernel) * l.kernel * l.in_channels * l.out_channels + (l.bias ? l.out_channels : 0);
  }
  if (l.is_norm()) return 2 * static_cast<std::size_t>(l.out_channels);
  return 0;
}

struct LayerCost {
  std::string name;
  std::string block;
  Stage stage = Stage::feature;
  std::size_t params = 0;
  std::uint64_t macs = 0;
  std::uint64_t elementwise = 0;  // norm, activation, add and interpolation outputs
};

struct AccountingRow {
  std::string label;
  std::size_t params = 0;
  std::uint64_t macs = 0;
  std::uint64_t elementwise = 0;
};

/// Params, MACs and 2*MACs per module. MACs cover one image pair (the siamese
/// feature extractor runs on both views) at height x width; a zero resolution
/// means parameters only.
struct AccountingTable {
  int height = 0;
  int width = 0;
  std::vector<LayerCost> layers;
  std::vector<AccountingRow> stages;  // feature, cost volume, regression
  std::vector<AccountingRow> blocks;  // in network order
  AccountingRow total;

  bool has_flops() const { return height > 0; }
  const AccountingRow& stage(Stage s) const { return stages.at(static_cast<std::size_t>(s)); }
};

inline const char* stage_label(Stage s) {
  switch (s) {
    case Stage::feature: return "Feature extraction";
    case Stage::cost_volume: return "Cost volume";
    case Stage::regression: return "Disparity regression";
  }
  return "?";
}

namespace detail {

inline AccountingTable aggregate(std::vector<LayerCost> layers, int height, int width) {
  AccountingTable t;
  t.height = height;
  t.width = width;
  for (Stage s : {Stage::feature, Stage::cost_volume, Stage::regression}) t.stages.push_back({stage_label(s)});
  t.total.label = "Total";
  std::map<std::string, std::size_t> block_index;
  for (const auto& l : layers) {
    auto add = [&](AccountingRow& r) {
      r.params += l.params;
      r.macs += l.macs;
      r.elementwise += l.elementwise;
    };
    add(t.stages[static_cast<std::size_t>(l.stage)]);
    auto it = block_index.find(l.block);
    if (it == block_index.end()) {
      it = block_index.emplace(l.block, t.blocks.size()).first;
      t.blocks.push_back({l.block});
    }
    add(t.blocks[it->second]);
    add(t.total);
  }
  t.layers = std::move(layers);
  return t;
}

}  // namespace detail

inline AccountingTable count_params(const ModelConfig& config) {
  validate(config);
  std::vector<LayerCost> layers;
  for (const auto& l : config.layers) layers.push_back({l.name, l.block, l.stage, layer_params(l), 0, 0});
  return detail::aggregate(std::move(layers), 0, 0);
}

/// Conv MACs = k*k*Cin*Cout*Hout*Wout; transpose convs use their output size
/// the same way. Per-element work of the parameter-free layers and norms is
/// reported in a separate column.
inline AccountingTable count_flops(const ModelConfig& config, int height, int width) {
  validate(config);
  const auto shapes = infer_shapes(config, 1, height, width);
  std::vector<LayerCost> layers;
  for (int i = 0; i < config.size(); ++i) {
    const LayerSpec& l = config.layers[i];
    const Shape& s = shapes[i];
    const std::uint64_t outputs = static_cast<std::uint64_t>(s[0]) * s[1] * s[2] * s[3];
    LayerCost c{l.name, l.block, l.stage, layer_params(l), 0, 0};
    if (l.has_weights()) {
      c.macs = static_cast<std::uint64_t>(l.kernel) * l.kernel * l.in_channels * outputs;
    } else if (l.kind != LayerKind::concat) {
      c.elementwise = outputs;
    }
    layers.push_back(c);
  }
  return detail::aggregate(std::move(layers), height, width);
}

/// Rounds a resolution up to the downsampling multiple, as evaluation padding does.
inline std::pair<int, int> padded_resolution(const ModelConfig& config, int height, int width) {
  const int f = config.downsample_factor;
  return {(height + f - 1) / f * f, (width + f - 1) / f * f};
}

inline std::string format_table(const AccountingTable& t, bool with_blocks = true) {
  std::ostringstream os;
  os << std::fixed;
  auto line = [&](const AccountingRow& r, const std::string& indent) {
    os << std::left << std::setw(26) << (indent + r.label) << std::right << std::setw(12) << std::setprecision(4)
       << static_cast<double>(r.params) / 1e6;
    if (t.has_flops()) {
      os << std::setw(12) << std::setprecision(3) << static_cast<double>(r.macs) / 1e9 << std::setw(12)
         << 2.0 * static_cast<double>(r.macs) / 1e9 << std::setw(14) << static_cast<double>(r.elementwise) / 1e6;
    }
    os << "\n";
  };
  os << std::left << std::setw(26) << "Module" << std::right << std::setw(12) << "Params(M)";
  if (t.has_flops()) os << std::setw(12) << "MACs(G)" << std::setw(12) << "2*MACs(G)" << std::setw(14) << "Elemwise(M)";
  os << "\n";
  for (std::size_t s = 0; s < t.stages.size(); ++s) {
    line(t.stages[s], "");
    if (!with_blocks) continue;
    for (const auto& b : t.blocks) {
      const auto it = std::find_if(t.layers.begin(), t.layers.end(), [&](const LayerCost& l) { return l.block == b.label; });
      if (it != t.layers.end() && static_cast<std::size_t>(it->stage) == s) line(b, "  ");
    }
  }
  line(t.total, "");
  if (t.has_flops()) os << "resolution " << t.width << "x" << t.height << ", one image pair\n";
  return os.str();
}

/// One JSON object per line: a row per stage, per block and the total.
inline std::string format_records(const AccountingTable& t) {
  std::ostringstream os;
  auto emit = [&](const AccountingRow& r, const char* level) {
    nlohmann::ordered_json j{{"level", level}, {"module", r.label}, {"params", r.params}};
    if (t.has_flops()) {
      j["macs"] = r.macs;
      j["flops2"] = 2 * r.macs;
      j["elementwise"] = r.elementwise;
      j["height"] = t.height;
      j["width"] = t.width;
    }
    os << j.dump() << "\n";
  };
  for (const auto& s : t.stages) emit(s, "stage");
  for (const auto& b : t.blocks) emit(b, "block");
  emit(t.total, "total");
  return os.str();
}

// ---------------------------------------------------------------------------
// Latency

struct LatencyReport {
  double median_ms = 0;
  double p95_ms = 0;
  double mean_ms = 0;
  int iterations = 0;
  std::string device;
};

/// "cpu:<model name> x<threads>", or DTP_DEVICE when set.
inline std::string device_identifier() {
  if (const char* env = std::getenv("DTP_DEVICE"); env && *env) return env;
  std::string model = "unknown";
  std::ifstream info("/proc/cpuinfo");
  std::string line;
  while (std::getline(info, line)) {
    if (line.rfind("model name", 0) == 0) {
      model = line.substr(line.find(':') + 1);
      model.erase(0, model.find_first_not_of(' '));
      break;
    }
  }
  return "cpu:" + model + " x" + std::to_string(std::max(1u, std::thread::hardware_concurrency()));
}

/// Median (mean of the middle pair for even counts), nearest-rank p95 and mean.
inline LatencyReport summarize_latency(std::vector<double> samples_ms) {
  if (samples_ms.empty()) throw DomainError("latency summary needs at least one sample");
  std::sort(samples_ms.begin(), samples_ms.end());
  const std::size_t n = samples_ms.size();
  LatencyReport r;
  r.iterations = static_cast<int>(n);
  r.median_ms = n % 2 ? samples_ms[n / 2] : 0.5 * (samples_ms[n / 2 - 1] + samples_ms[n / 2]);
  const std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  r.p95_ms = samples_ms[std::max<std::size_t>(rank, 1) - 1];
  double sum = 0;
  for (double s : samples_ms) sum += s;
  r.mean_ms = sum / static_cast<double>(n);
  r.device = device_identifier();
  return r;
}

template <typename T>
LatencyReport latency_bench(const Network<T>& net, int height, int width, int batch = 1, int warmup = 2,
                            int iters = 10) {
  if (iters < 1 || warmup < 0 || batch < 1) throw DomainError("latency_bench needs iters >= 1, warmup >= 0, batch >= 1");
  std::mt19937_64 rng(0);
  std::normal_distribution<double> n(0, 1);
  Tensor<T> left({batch, 3, height, width}), right({batch, 3, height, width});
  for (auto& v : left.storage()) v = static_cast<T>(n(rng));
  for (auto& v : right.storage()) v = static_cast<T>(n(rng));
  for (int i = 0; i < warmup; ++i) (void)net.predict(left, right);
  std::vector<double> samples;
  for (int i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)net.predict(left, right);
    samples.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return summarize_latency(std::move(samples));
}

inline nlohmann::ordered_json to_json(const LatencyReport& r) {
  return {{"median_ms", r.median_ms}, {"p95_ms", r.p95_ms}, {"mean_ms", r.mean_ms}, {"iterations", r.iterations},
          {"device", r.device}};
}

}  // namespace dtp
