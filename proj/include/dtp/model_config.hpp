#pragma once

// Declarative network description. The same layer list drives construction,
// parameter counting and FLOP counting, so the three never disagree.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtp/error.hpp"
#include "dtp/tensor.hpp"

namespace dtp {

enum class LayerKind { conv2d, transpose_conv2d, batch_norm, relu, add, concat, bilinear_upsample };

/// Which of the three network modules a layer belongs to.
enum class Stage { feature, cost_volume, regression };

enum class Setting { setting1, setting2, setting3 };

inline constexpr int kNetworkInput = -1;
inline constexpr int kNoMatch = -2;

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::transpose_conv2d: return "transpose_conv2d";
    case LayerKind::batch_norm: return "batch_norm";
    case LayerKind::relu: return "relu";
    case LayerKind::add: return "add";
    case LayerKind::concat: return "concat";
    case LayerKind::bilinear_upsample: return "bilinear_upsample";
  }
  return "?";
}

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::feature: return "feature";
    case Stage::cost_volume: return "cost_volume";
    case Stage::regression: return "regression";
  }
  return "?";
}

inline const char* to_string(Setting s) {
  switch (s) {
    case Setting::setting1: return "Setting1";
    case Setting::setting2: return "Setting2";
    case Setting::setting3: return "Setting3";
  }
  return "?";
}

inline LayerKind parse_layer_kind(const std::string& s) {
  static const std::map<std::string, LayerKind> table = {
      {"conv2d", LayerKind::conv2d},
      {"transpose_conv2d", LayerKind::transpose_conv2d},
      {"batch_norm", LayerKind::batch_norm},
      {"relu", LayerKind::relu},
      {"add", LayerKind::add},
      {"concat", LayerKind::concat},
      {"bilinear_upsample", LayerKind::bilinear_upsample}};
  auto it = table.find(s);
  if (it == table.end()) throw AnalysisError("unknown layer kind '" + s + "'");
  return it->second;
}

inline Stage parse_stage(const std::string& s) {
  if (s == "feature") return Stage::feature;
  if (s == "cost_volume") return Stage::cost_volume;
  if (s == "regression") return Stage::regression;
  throw ConfigError("unknown stage '" + s + "'");
}

inline Setting parse_setting(const std::string& s) {
  if (s == "Setting1" || s == "setting1" || s == "1") return Setting::setting1;
  if (s == "Setting2" || s == "setting2" || s == "2") return Setting::setting2;
  if (s == "Setting3" || s == "setting3" || s == "3") return Setting::setting3;
  throw ConfigError("unknown setting '" + s + "'");
}

/// One node of the network graph. `inputs` index earlier layers;
/// kNetworkInput refers to the image batch.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::conv2d;
  Stage stage = Stage::feature;
  std::string block;  // accounting row, e.g. "feature_1", "hourglass_1"
  std::vector<int> inputs;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  bool bias = false;
  // transpose_conv2d / bilinear_upsample: take the spatial size of this layer
  // (kNetworkInput = image size). kNoMatch uses stride/scale arithmetic.
  int match = kNoMatch;
  int scale = 1;
  // concat only: the input batch holds [left; right] stacked along axis 0 and
  // the two halves are joined along channels.
  bool stereo = false;
  // Output channel count is part of an external contract and must not be pruned.
  bool fixed_output = false;

  bool has_weights() const { return kind == LayerKind::conv2d || kind == LayerKind::transpose_conv2d; }
  bool is_norm() const { return kind == LayerKind::batch_norm; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Per-module channel widths. hourglass == 0 means 2 * d_max / 4.
struct Widths {
  int stem = 16;
  int coarse = 56;
  int feature = 32;
  int cost_mid = 24;
  int hourglass = 0;

  Widths scaled(double factor) const {
    auto s = [factor](int v) { return std::max(1, static_cast<int>(std::lround(v * factor))); };
    return {s(stem), s(coarse), s(feature), s(cost_mid), hourglass == 0 ? 0 : s(hourglass)};
  }
  friend bool operator==(const Widths&, const Widths&) = default;
};

struct ModelConfig {
  int d_max = 192;
  Setting setting = Setting::setting3;
  int downsample_factor = 4;
  Widths widths;
  std::vector<LayerSpec> layers;

  int size() const { return static_cast<int>(layers.size()); }
  const LayerSpec& operator[](int i) const { return layers.at(static_cast<std::size_t>(i)); }

  /// Index of the last layer of a stage, or -1 when the stage is absent.
  int stage_output(Stage s) const {
    for (int i = size() - 1; i >= 0; --i) {
      if (layers[i].stage == s) return i;
    }
    return -1;
  }
  int stereo_concat() const {
    for (int i = 0; i < size(); ++i) {
      if (layers[i].kind == LayerKind::concat && layers[i].stereo) return i;
    }
    return -1;
  }
  bool is_stereo() const { return stereo_concat() >= 0; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// ---------------------------------------------------------------------------
// Construction

namespace detail {

class GraphBuilder {
 public:
  GraphBuilder(std::vector<LayerSpec>& layers, Stage stage, std::string block)
      : layers_(layers), stage_(stage), block_(std::move(block)) {}

  void set_block(std::string block) { block_ = std::move(block); }
  void set_stage(Stage s) { stage_ = s; }

  int channels(int node) const { return node == kNetworkInput ? 3 : layers_[node].out_channels; }

  int conv(int in, int out_ch, int stride, bool bias, const std::string& name) {
    LayerSpec l = base(name, LayerKind::conv2d, {in});
    l.in_channels = channels(in);
    l.out_channels = out_ch;
    l.kernel = 3;
    l.stride = stride;
    l.padding = 1;
    l.bias = bias;
    return push(l);
  }
  int tconv(int in, int out_ch, int match, const std::string& name) {
    LayerSpec l = base(name, LayerKind::transpose_conv2d, {in});
    l.in_channels = channels(in);
    l.out_channels = out_ch;
    l.kernel = 3;
    l.stride = 2;
    l.padding = 1;
    l.match = match;
    return push(l);
  }
  int bn(int in, const std::string& name) { return passthrough(LayerKind::batch_norm, in, name); }
  int relu(int in, const std::string& name) { return passthrough(LayerKind::relu, in, name); }
  int add(int a, int b, const std::string& name) {
    LayerSpec l = base(name, LayerKind::add, {a, b});
    l.in_channels = l.out_channels = channels(a);
    return push(l);
  }
  int concat(std::vector<int> ins, bool stereo, const std::string& name) {
    LayerSpec l = base(name, LayerKind::concat, ins);
    int c = 0;
    for (int i : ins) c += channels(i);
    l.in_channels = l.out_channels = c;
    l.stereo = stereo;
    return push(l);
  }
  int upsample(int in, int match, int scale, const std::string& name) {
    LayerSpec l = base(name, LayerKind::bilinear_upsample, {in});
    l.in_channels = l.out_channels = channels(in);
    l.match = match;
    l.scale = scale;
    return push(l);
  }
  int conv_bn_relu(int in, int out_ch, int stride, const std::string& name) {
    int c = conv(in, out_ch, stride, false, name + ".conv");
    int b = bn(c, name + ".bn");
    return relu(b, name + ".relu");
  }
  /// conv-bn-relu-conv-bn, identity skip, relu.
  int residual_block(int in, const std::string& name) {
    int c = channels(in);
    int a = conv_bn_relu(in, c, 1, name + ".a");
    int b = conv(a, c, 1, false, name + ".b.conv");
    int bb = bn(b, name + ".b.bn");
    int s = add(bb, in, name + ".skip");
    return relu(s, name + ".relu");
  }
  /// Two-level encoder (stride-2 convs) / decoder (stride-2 transpose convs)
  /// with additive skips.
  int hourglass(int in, int width, const std::string& name) {
    int c_in = channels(in);
    int e1 = conv_bn_relu(in, width, 2, name + ".down1");
    int e1b = conv_bn_relu(e1, width, 1, name + ".mid1");
    int e2 = conv_bn_relu(e1b, width, 2, name + ".down2");
    int e2b = conv_bn_relu(e2, width, 1, name + ".mid2");
    int d2 = tconv(e2b, width, e1b, name + ".up2.tconv");
    int d2n = bn(d2, name + ".up2.bn");
    int d2s = add(d2n, e1b, name + ".up2.skip");
    int d2r = relu(d2s, name + ".up2.relu");
    int d1 = tconv(d2r, c_in, in, name + ".up1.tconv");
    int d1n = bn(d1, name + ".up1.bn");
    int d1s = add(d1n, in, name + ".up1.skip");
    return relu(d1s, name + ".up1.relu");
  }

  LayerSpec& last() { return layers_.back(); }

 private:
  LayerSpec base(const std::string& name, LayerKind kind, std::vector<int> inputs) const {
    LayerSpec l;
    l.name = name;
    l.kind = kind;
    l.stage = stage_;
    l.block = block_;
    l.inputs = std::move(inputs);
    return l;
  }
  int passthrough(LayerKind kind, int in, const std::string& name) {
    LayerSpec l = base(name, kind, {in});
    l.in_channels = l.out_channels = channels(in);
    return push(l);
  }
  int push(LayerSpec l) {
    layers_.push_back(std::move(l));
    return static_cast<int>(layers_.size()) - 1;
  }

  std::vector<LayerSpec>& layers_;
  Stage stage_;
  std::string block_;
};

}  // namespace detail

void validate(const ModelConfig& config);

/// Build the DTPnet layer list for a setting. Setting3 is the compressed
/// network: two feature stages and one hourglass.
inline ModelConfig build_model_config(int d_max, Setting setting = Setting::setting3, Widths widths = {}) {
  ModelConfig cfg;
  cfg.d_max = d_max;
  cfg.setting = setting;
  cfg.widths = widths;
  if (d_max <= 0 || d_max % cfg.downsample_factor != 0) {
    throw ConfigError("d_max must be positive and divisible by " + std::to_string(cfg.downsample_factor) +
                      ", got " + std::to_string(d_max));
  }
  const int bins_quarter = d_max / cfg.downsample_factor;
  const int hg_width = widths.hourglass > 0 ? widths.hourglass : 2 * bins_quarter;

  detail::GraphBuilder g(cfg.layers, Stage::feature, "feature_1");
  // Scale A: two stride-2 convs to 1/4 and one residual block.
  int x = g.conv_bn_relu(kNetworkInput, widths.stem, 2, "feature_1.stem");
  x = g.conv_bn_relu(x, widths.stem, 2, "feature_1.down");
  const int fine = g.residual_block(x, "feature_1.res");
  // Scale B: one more stride-2 conv to 1/8 and one residual block, resampled back to 1/4.
  g.set_block("feature_2");
  x = g.conv_bn_relu(fine, widths.coarse, 2, "feature_2.down");
  x = g.residual_block(x, "feature_2.res");
  const int coarse = g.upsample(x, fine, 2, "feature_2.resample");
  x = g.concat({fine, coarse}, false, "feature_2.pyramid");
  x = g.conv_bn_relu(x, widths.feature, 1, "feature_2.fuse");
  if (setting != Setting::setting3) {
    for (int stage = 3; stage <= 4; ++stage) {
      std::string name = "feature_" + std::to_string(stage);
      g.set_block(name);
      x = g.residual_block(x, name + ".res0");
      x = g.residual_block(x, name + ".res1");
    }
  }
  const int features = x;

  g.set_stage(Stage::cost_volume);
  g.set_block("cost_volume");
  x = g.concat({features, features}, true, "cost.concat");
  x = g.conv_bn_relu(x, widths.cost_mid, 1, "cost.l0");
  x = g.conv_bn_relu(x, widths.cost_mid, 1, "cost.l1");
  x = g.conv(x, bins_quarter, 1, true, "cost.l2");
  g.last().fixed_output = true;

  g.set_stage(Stage::regression);
  const int hourglasses = setting == Setting::setting1 ? 3 : 1;
  for (int h = 1; h <= hourglasses; ++h) {
    std::string name = "hourglass_" + std::to_string(h);
    g.set_block(name);
    x = g.hourglass(x, hg_width, name);
  }
  g.set_block("head");
  x = g.conv(x, d_max, 1, true, "head.bins");
  g.last().fixed_output = true;
  g.upsample(x, kNetworkInput, cfg.downsample_factor, "head.upsample");

  validate(cfg);
  return cfg;
}

// ---------------------------------------------------------------------------
// Validation and shape inference

/// Structural checks: topological input order, channel agreement between
/// producers and consumers, positive spatial parameters.
inline void validate(const ModelConfig& config) {
  if (config.d_max <= 0 || config.d_max % config.downsample_factor != 0) {
    throw ConfigError("d_max must be positive and divisible by " + std::to_string(config.downsample_factor));
  }
  if (config.layers.empty()) throw ConfigError("model has no layers");
  auto ch = [&](int node) { return node == kNetworkInput ? 3 : config.layers[node].out_channels; };
  for (int i = 0; i < config.size(); ++i) {
    const LayerSpec& l = config.layers[i];
    const std::string where = "layer " + std::to_string(i) + " '" + l.name + "'";
    if (l.inputs.empty()) throw ConfigError(where + " has no inputs");
    for (int in : l.inputs) {
      if (in != kNetworkInput && (in < 0 || in >= i)) throw ConfigError(where + " references invalid input");
    }
    if (l.in_channels <= 0 || l.out_channels <= 0) throw ConfigError(where + " has non-positive channels");
    switch (l.kind) {
      case LayerKind::conv2d:
      case LayerKind::transpose_conv2d:
        if (l.inputs.size() != 1) throw ConfigError(where + " must have one input");
        if (l.kernel <= 0 || l.stride <= 0 || l.padding < 0) throw ConfigError(where + " bad spatial params");
        if (ch(l.inputs[0]) != l.in_channels) {
          throw ConfigError(where + ": in_channels " + std::to_string(l.in_channels) + " != producer output " +
                            std::to_string(ch(l.inputs[0])));
        }
        break;
      case LayerKind::batch_norm:
      case LayerKind::relu:
      case LayerKind::bilinear_upsample:
        if (l.inputs.size() != 1) throw ConfigError(where + " must have one input");
        if (ch(l.inputs[0]) != l.in_channels || l.in_channels != l.out_channels) {
          throw ConfigError(where + ": channel mismatch");
        }
        break;
      case LayerKind::add:
        if (l.inputs.size() != 2) throw ConfigError(where + " must have two inputs");
        if (ch(l.inputs[0]) != l.in_channels || ch(l.inputs[1]) != l.in_channels ||
            l.out_channels != l.in_channels) {
          throw ConfigError(where + ": add operands have different channel counts");
        }
        break;
      case LayerKind::concat: {
        int total = 0;
        for (int in : l.inputs) total += ch(in);
        if (total != l.in_channels || total != l.out_channels) throw ConfigError(where + ": concat channel sum");
        if (l.stereo && (l.inputs.size() != 2 || l.inputs[0] != l.inputs[1])) {
          throw ConfigError(where + ": stereo concat must join one siamese output with itself");
        }
        break;
      }
    }
  }
  if (config.layers.back().out_channels != config.d_max) {
    throw ConfigError("final layer must output d_max = " + std::to_string(config.d_max) + " channels");
  }
  if (config.stereo_concat() >= 0) {
    int features = config.stage_output(Stage::feature);
    int cost = config.stage_output(Stage::cost_volume);
    if (features < 0 || cost < 0) throw ConfigError("stereo model requires feature and cost_volume stages");
    if (config.layers[cost].out_channels != config.d_max / config.downsample_factor) {
      throw ConfigError("cost volume must have d_max / " + std::to_string(config.downsample_factor) + " channels");
    }
  }
}

/// Number of distinct blocks whose name starts with `prefix` (e.g. "feature_").
inline int count_blocks(const ModelConfig& config, const std::string& prefix) {
  std::set<std::string> seen;
  for (const auto& l : config.layers) {
    if (l.block.rfind(prefix, 0) == 0) seen.insert(l.block);
  }
  return static_cast<int>(seen.size());
}

/// Setting-level contract: block repetition matches the selected setting.
inline void validate_setting(const ModelConfig& config) {
  const int features = count_blocks(config, "feature_");
  const int hourglasses = count_blocks(config, "hourglass_");
  const int want_features = config.setting == Setting::setting3 ? 2 : 4;
  const int want_hg = config.setting == Setting::setting1 ? 3 : 1;
  if (features != want_features || hourglasses != want_hg) {
    throw ConfigError(std::string(to_string(config.setting)) + " expects " + std::to_string(want_features) +
                      " feature stages and " + std::to_string(want_hg) + " hourglass blocks, found " +
                      std::to_string(features) + " and " + std::to_string(hourglasses));
  }
}

/// Nodes executed on the stacked [left; right] batch (upstream of the stereo concat).
inline std::vector<bool> siamese_mask(const ModelConfig& config) {
  std::vector<bool> siamese(config.layers.size(), false);
  if (!config.is_stereo()) return siamese;
  for (int i = 0; i < config.size(); ++i) {
    const LayerSpec& l = config.layers[i];
    if (l.kind == LayerKind::concat && l.stereo) continue;
    bool all = true;
    for (int in : l.inputs) {
      if (in != kNetworkInput && !siamese[in]) all = false;
    }
    siamese[i] = all;
  }
  return siamese;
}

/// Output spatial size of a transpose conv given its input size and an optional target.
inline int transpose_conv_extent(const LayerSpec& l, int in, std::optional<int> target, const std::string& axis) {
  const int base = (in - 1) * l.stride - 2 * l.padding + l.kernel;
  if (!target) return base + (l.stride > 1 ? 1 : 0);
  const int pad = *target - base;
  if (pad < 0 || pad >= std::max(1, l.stride)) {
    throw ShapeError("layer '" + l.name + "': cannot reach " + axis + " extent " + std::to_string(*target) +
                     " from " + std::to_string(in));
  }
  return *target;
}

inline int conv_extent(const LayerSpec& l, int in) { return (in + 2 * l.padding - l.kernel) / l.stride + 1; }

/// Per-layer output shapes (NCHW) for an input batch of `batch` image pairs
/// (or single images for non-stereo graphs) of size height x width.
inline std::vector<Shape> infer_shapes(const ModelConfig& config, int batch, int height, int width) {
  const int f = config.downsample_factor;
  if (height <= 0 || width <= 0 || height % f != 0 || width % f != 0) {
    std::string axis = (height <= 0 || height % f != 0) ? "height" : "width";
    throw ShapeError("input " + axis + " must be a positive multiple of " + std::to_string(f) + " (got " +
                     std::to_string(height) + "x" + std::to_string(width) + ")");
  }
  const int stacked = config.is_stereo() ? 2 * batch : batch;
  const Shape input{stacked, 3, height, width};
  std::vector<Shape> shapes(config.layers.size());
  auto shape_of = [&](int node) -> const Shape& { return node == kNetworkInput ? input : shapes[node]; };
  for (int i = 0; i < config.size(); ++i) {
    const LayerSpec& l = config.layers[i];
    const Shape& in = shape_of(l.inputs[0]);
    Shape out = in;
    out[1] = l.out_channels;
    switch (l.kind) {
      case LayerKind::conv2d:
        out[2] = conv_extent(l, in[2]);
        out[3] = conv_extent(l, in[3]);
        if (out[2] <= 0 || out[3] <= 0) throw ShapeError("layer '" + l.name + "' collapses the input");
        break;
      case LayerKind::transpose_conv2d: {
        std::optional<int> th, tw;
        if (l.match != kNoMatch) {
          th = shape_of(l.match)[2];
          tw = shape_of(l.match)[3];
        }
        out[2] = transpose_conv_extent(l, in[2], th, "height");
        out[3] = transpose_conv_extent(l, in[3], tw, "width");
        break;
      }
      case LayerKind::bilinear_upsample:
        if (l.match != kNoMatch) {
          out[2] = shape_of(l.match)[2];
          out[3] = shape_of(l.match)[3];
        } else {
          out[2] = in[2] * l.scale;
          out[3] = in[3] * l.scale;
        }
        break;
      case LayerKind::add:
        if (shape_of(l.inputs[1]) != in) {
          throw ShapeError("layer '" + l.name + "': add operands " + to_string(in) + " vs " +
                           to_string(shape_of(l.inputs[1])));
        }
        break;
      case LayerKind::concat:
        if (l.stereo) {
          out[0] = in[0] / 2;
        } else {
          for (int other : l.inputs) {
            const Shape& s = shape_of(other);
            if (s[0] != in[0] || s[2] != in[2] || s[3] != in[3]) {
              throw ShapeError("layer '" + l.name + "': concat operands disagree spatially");
            }
          }
        }
        break;
      case LayerKind::batch_norm:
      case LayerKind::relu:
        break;
    }
    shapes[i] = out;
  }
  return shapes;
}

// ---------------------------------------------------------------------------
// Serialization: key/value header plus one JSON object per layer line.

inline nlohmann::ordered_json to_json(const LayerSpec& l) {
  nlohmann::ordered_json j;
  j["name"] = l.name;
  j["kind"] = to_string(l.kind);
  j["stage"] = to_string(l.stage);
  j["block"] = l.block;
  j["inputs"] = l.inputs;
  j["in"] = l.in_channels;
  j["out"] = l.out_channels;
  if (l.has_weights()) {
    j["kernel"] = l.kernel;
    j["stride"] = l.stride;
    j["padding"] = l.padding;
    j["bias"] = l.bias;
  }
  if (l.match != kNoMatch) j["match"] = l.match;
  if (l.kind == LayerKind::bilinear_upsample) j["scale"] = l.scale;
  if (l.stereo) j["stereo"] = true;
  if (l.fixed_output) j["fixed_output"] = true;
  return j;
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec l;
  l.name = j.at("name").get<std::string>();
  l.kind = parse_layer_kind(j.at("kind").get<std::string>());
  l.stage = parse_stage(j.value("stage", std::string("feature")));
  l.block = j.value("block", std::string());
  l.inputs = j.at("inputs").get<std::vector<int>>();
  l.in_channels = j.at("in").get<int>();
  l.out_channels = j.at("out").get<int>();
  l.kernel = j.value("kernel", 1);
  l.stride = j.value("stride", 1);
  l.padding = j.value("padding", 0);
  l.bias = j.value("bias", false);
  l.match = j.value("match", kNoMatch);
  l.scale = j.value("scale", 1);
  l.stereo = j.value("stereo", false);
  l.fixed_output = j.value("fixed_output", false);
  return l;
}

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["d_max"] = c.d_max;
  j["setting"] = to_string(c.setting);
  j["downsample_factor"] = c.downsample_factor;
  j["widths"] = {{"stem", c.widths.stem},
                 {"coarse", c.widths.coarse},
                 {"feature", c.widths.feature},
                 {"cost_mid", c.widths.cost_mid},
                 {"hourglass", c.widths.hourglass}};
  j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : c.layers) j["layers"].push_back(to_json(l));
  return j;
}

inline Widths widths_from_json(const nlohmann::json& j) {
  Widths w;
  w.stem = j.value("stem", w.stem);
  w.coarse = j.value("coarse", w.coarse);
  w.feature = j.value("feature", w.feature);
  w.cost_mid = j.value("cost_mid", w.cost_mid);
  w.hourglass = j.value("hourglass", w.hourglass);
  return w;
}

/// Accepts either an explicit layer list or a builder description
/// ({d_max, setting, widths, width_multiplier}).
inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  const int d_max = j.value("d_max", 192);
  const Setting setting = parse_setting(j.value("setting", std::string("Setting3")));
  Widths widths = j.contains("widths") ? widths_from_json(j["widths"]) : Widths{};
  if (!j.contains("layers")) {
    if (j.contains("width_multiplier")) widths = widths.scaled(j["width_multiplier"].get<double>());
    return build_model_config(d_max, setting, widths);
  }
  ModelConfig c;
  c.d_max = d_max;
  c.setting = setting;
  c.downsample_factor = j.value("downsample_factor", 4);
  c.widths = widths;
  for (const auto& lj : j.at("layers")) c.layers.push_back(layer_from_json(lj));
  validate(c);
  return c;
}

/// Human-readable text form: header keys, then one layer per line.
inline std::string dump_model_config(const ModelConfig& c) {
  auto j = to_json(c);
  std::ostringstream os;
  os << "{\n";
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "layers") continue;
    os << "  \"" << it.key() << "\": " << it.value().dump() << ",\n";
  }
  os << "  \"layers\": [\n";
  for (std::size_t i = 0; i < c.layers.size(); ++i) {
    os << "    " << to_json(c.layers[i]).dump() << (i + 1 < c.layers.size() ? ",\n" : "\n");
  }
  os << "  ]\n}\n";
  return os.str();
}

inline void save_model_config(const ModelConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write model config " + path);
  out << dump_model_config(c);
}

inline ModelConfig load_model_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read model config " + path);
  try {
    return model_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("model config " + path + ": " + e.what());
  }
}

}  // namespace dtp
