#pragma once

// Structured channel pruning. Channels that must disappear together (a conv's
// output, the norm that follows it, every consumer's input slice, both sides
// of a residual add) are collected into groups; each group is scored by the
// summed L2 norm of its kernel slices and the weakest channels are removed
// from every member at once.

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtp/error.hpp"
#include "dtp/model_config.hpp"
#include "dtp/network.hpp"

namespace dtp {

enum class ChannelAxis { output, input };

inline const char* to_string(ChannelAxis a) { return a == ChannelAxis::output ? "out" : "in"; }

/// One tensor axis slice that belongs to a group. Channel k of the group is
/// index `offset + k` along `axis` of layer `layer`.
struct GroupMember {
  int layer = 0;
  ChannelAxis axis = ChannelAxis::output;
  int offset = 0;
  bool scored = false;  // conv/transpose-conv kernels count towards importance; norms do not

  friend bool operator==(const GroupMember&, const GroupMember&) = default;
};

struct PruneGroup {
  int id = 0;
  int size = 0;
  std::vector<GroupMember> members;
  bool prunable = true;
  std::string reason;  // why not prunable
};

/// Undirected coupling between two channel spaces.
struct Coupling {
  enum class Kind { producer_consumer, norm_follows_conv, skip_add, concat_offset };
  Kind kind;
  int a;  // layer index or kNetworkInput
  int b;
};

inline const char* to_string(Coupling::Kind k) {
  switch (k) {
    case Coupling::Kind::producer_consumer: return "producer_consumer";
    case Coupling::Kind::norm_follows_conv: return "norm_follows_conv";
    case Coupling::Kind::skip_add: return "skip_add";
    case Coupling::Kind::concat_offset: return "concat_offset";
  }
  return "?";
}

struct DependencyGraph {
  std::vector<PruneGroup> groups;
  std::vector<Coupling> edges;

  /// Group owning channel axis `axis` of `layer` at `offset` (or -1).
  int group_of(int layer, ChannelAxis axis, int offset = 0) const {
    for (const auto& g : groups)
      for (const auto& m : g.members)
        if (m.layer == layer && m.axis == axis && m.offset == offset) return g.id;
    return -1;
  }
  bool coupled(int a, int b) const {
    return std::any_of(edges.begin(), edges.end(),
                       [&](const Coupling& e) { return (e.a == a && e.b == b) || (e.a == b && e.b == a); });
  }
};

namespace detail {

struct Segment {
  int space;  // producing layer, or kNetworkInput
  int count;
};

class DisjointSets {
 public:
  explicit DisjointSets(int n) : parent_(static_cast<std::size_t>(n)) { std::iota(parent_.begin(), parent_.end(), 0); }
  int find(int x) {
    while (parent_[x] != x) x = parent_[x] = parent_[parent_[x]];
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<int> parent_;
};

/// Channel layout of every layer output as producer segments.
inline std::vector<std::vector<Segment>> channel_layouts(const ModelConfig& config) {
  std::vector<std::vector<Segment>> layout(config.layers.size());
  const std::vector<Segment> input{{kNetworkInput, 3}};
  auto of = [&](int node) -> const std::vector<Segment>& { return node == kNetworkInput ? input : layout[node]; };
  for (int i = 0; i < config.size(); ++i) {
    const LayerSpec& l = config.layers[i];
    switch (l.kind) {
      case LayerKind::conv2d:
      case LayerKind::transpose_conv2d:
        layout[i] = {{i, l.out_channels}};
        break;
      case LayerKind::batch_norm:
      case LayerKind::relu:
      case LayerKind::bilinear_upsample:
      case LayerKind::add:
        layout[i] = of(l.inputs[0]);
        break;
      case LayerKind::concat:
        for (int in : l.inputs) {
          const auto& src = of(in);
          layout[i].insert(layout[i].end(), src.begin(), src.end());
        }
        break;
    }
  }
  return layout;
}

}  // namespace detail

/// Groups are the connected components of the coupling relation on output
/// channels. Groups touching the image channels or a fixed-size output
/// (cost-volume bins, logit bins, final layer) are marked unprunable.
inline DependencyGraph build_dependency_graph(const ModelConfig& config) {
  validate(config);
  const int n = config.size();
  // Space ids: layer i -> i; network input -> n.
  auto sid = [n](int space) { return space == kNetworkInput ? n : space; };
  detail::DisjointSets sets(n + 1);
  const auto layout = detail::channel_layouts(config);
  const std::vector<detail::Segment> input_layout{{kNetworkInput, 3}};
  auto layout_of = [&](int node) -> const std::vector<detail::Segment>& {
    return node == kNetworkInput ? input_layout : layout[node];
  };

  DependencyGraph graph;
  for (int i = 0; i < n; ++i) {
    const LayerSpec& l = config.layers[i];
    if (l.kind == LayerKind::add) {
      const auto& a = layout_of(l.inputs[0]);
      const auto& b = layout_of(l.inputs[1]);
      if (a.size() != b.size()) throw AnalysisError("layer '" + l.name + "': misaligned add coupling");
      for (std::size_t s = 0; s < a.size(); ++s) {
        if (a[s].count != b[s].count) throw AnalysisError("layer '" + l.name + "': misaligned add coupling");
        sets.unite(sid(a[s].space), sid(b[s].space));
        if (a[s].space != b[s].space) graph.edges.push_back({Coupling::Kind::skip_add, a[s].space, b[s].space});
      }
    } else if (l.has_weights()) {
      for (const auto& seg : layout_of(l.inputs[0])) {
        graph.edges.push_back({Coupling::Kind::producer_consumer, seg.space, i});
      }
      if (layout_of(l.inputs[0]).size() > 1) {
        for (const auto& seg : layout_of(l.inputs[0])) graph.edges.push_back({Coupling::Kind::concat_offset, seg.space, i});
      }
    } else if (l.is_norm()) {
      for (const auto& seg : layout_of(l.inputs[0])) graph.edges.push_back({Coupling::Kind::norm_follows_conv, seg.space, i});
    }
  }

  std::map<int, int> group_index;  // root -> group id
  auto group_for = [&](int space, int size) -> PruneGroup& {
    const int root = sets.find(sid(space));
    auto it = group_index.find(root);
    if (it == group_index.end()) {
      PruneGroup g;
      g.id = static_cast<int>(graph.groups.size());
      g.size = size;
      graph.groups.push_back(g);
      it = group_index.emplace(root, g.id).first;
    }
    PruneGroup& g = graph.groups[it->second];
    if (g.size != size) throw AnalysisError("coupled channel spaces disagree on size");
    return g;
  };

  group_for(kNetworkInput, 3);
  for (int i = 0; i < n; ++i) {
    const LayerSpec& l = config.layers[i];
    if (l.has_weights()) {
      group_for(i, l.out_channels).members.push_back({i, ChannelAxis::output, 0, true});
      int offset = 0;
      for (const auto& seg : layout_of(l.inputs[0])) {
        group_for(seg.space, seg.count).members.push_back({i, ChannelAxis::input, offset, true});
        offset += seg.count;
      }
    } else if (l.is_norm()) {
      int offset = 0;
      for (const auto& seg : layout_of(l.inputs[0])) {
        group_for(seg.space, seg.count).members.push_back({i, ChannelAxis::output, offset, false});
        offset += seg.count;
      }
    }
  }

  auto mark = [&](int space, const std::string& reason) {
    const int root = sets.find(sid(space));
    auto it = group_index.find(root);
    if (it == group_index.end()) return;
    PruneGroup& g = graph.groups[it->second];
    if (g.prunable) {
      g.prunable = false;
      g.reason = reason;
    }
  };
  mark(kNetworkInput, "image channels");
  for (int i = 0; i < n; ++i) {
    const LayerSpec& l = config.layers[i];
    if (!l.fixed_output && i != n - 1) continue;
    for (const auto& seg : layout[i]) {
      mark(seg.space, i == n - 1 ? "network output" : "fixed output of '" + l.name + "'");
    }
  }
  return graph;
}

// ---------------------------------------------------------------------------
// Importance

/// L2 norm of slice `index` along the member's axis.
template <typename T>
double slice_norm(const Network<T>& net, const GroupMember& m, int index) {
  const LayerSpec& l = net.config().layers[m.layer];
  const Tensor<T>& w = net.layers()[m.layer].weight;
  const int k2 = l.kernel * l.kernel;
  // conv weight [out, in, k, k]; transpose conv weight [in, out, k, k]
  const bool leading = (l.kind == LayerKind::conv2d) == (m.axis == ChannelAxis::output);
  const int d0 = w.dim(0), d1 = w.dim(1);
  double s = 0;
  if (leading) {
    const T* p = w.data() + static_cast<std::size_t>(index) * d1 * k2;
    for (int k = 0; k < d1 * k2; ++k) s += static_cast<double>(p[k]) * p[k];
  } else {
    for (int a = 0; a < d0; ++a) {
      const T* p = w.data() + (static_cast<std::size_t>(a) * d1 + index) * k2;
      for (int k = 0; k < k2; ++k) s += static_cast<double>(p[k]) * p[k];
    }
  }
  return std::sqrt(s);
}

/// Per-channel group score: sum over scored members of the slice L2 norm.
template <typename T>
std::vector<double> group_importance(const PruneGroup& group, const Network<T>& net) {
  std::vector<double> scores(static_cast<std::size_t>(group.size), 0.0);
  for (const auto& m : group.members) {
    if (!m.scored) continue;
    for (int k = 0; k < group.size; ++k) scores[k] += slice_norm(net, m, m.offset + k);
  }
  return scores;
}

/// Per-group importance table, computed once per pruning round.
using ImportanceTable = std::vector<std::vector<double>>;

template <typename T>
ImportanceTable importance_table(const DependencyGraph& graph, const Network<T>& net) {
  ImportanceTable table;
  table.reserve(graph.groups.size());
  for (const auto& g : graph.groups) table.push_back(group_importance(g, net));
  return table;
}

/// floor(r * n) lowest-scored indices (ties: lower index first), never
/// leaving fewer than one channel. Returned in ascending index order.
inline std::vector<int> select_channels(const std::vector<double>& scores, double rate) {
  if (!(rate > 0.0 && rate < 1.0)) throw DomainError("prune rate must lie in (0, 1)");
  const int n = static_cast<int>(scores.size());
  if (n < 2) return {};
  int count = static_cast<int>(std::floor(rate * n + 1e-9));
  count = std::min(count, n - 1);
  if (count <= 0) return {};
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] < scores[b]; });
  order.resize(static_cast<std::size_t>(count));
  std::sort(order.begin(), order.end());
  return order;
}

// ---------------------------------------------------------------------------
// Surgery

struct GroupPruneRecord {
  int group = 0;
  int size_before = 0;
  int size_after = 0;
  std::vector<int> removed;
};

struct PruneRecord {
  double rate = 0.0;
  std::size_t params_before = 0;
  std::size_t params_after = 0;
  std::vector<GroupPruneRecord> groups;

  bool empty() const {
    return std::all_of(groups.begin(), groups.end(), [](const auto& g) { return g.removed.empty(); });
  }
};

inline nlohmann::ordered_json to_json(const PruneRecord& r) {
  nlohmann::ordered_json j;
  j["rate"] = r.rate;
  j["params_before"] = r.params_before;
  j["params_after"] = r.params_after;
  j["groups"] = nlohmann::ordered_json::array();
  for (const auto& g : r.groups) {
    j["groups"].push_back({{"group", g.group}, {"before", g.size_before}, {"after", g.size_after}, {"removed", g.removed}});
  }
  return j;
}

inline PruneRecord prune_record_from_json(const nlohmann::json& j) {
  PruneRecord r;
  r.rate = j.at("rate").get<double>();
  r.params_before = j.at("params_before").get<std::size_t>();
  r.params_after = j.at("params_after").get<std::size_t>();
  for (const auto& g : j.at("groups")) {
    r.groups.push_back({g.at("group").get<int>(), g.at("before").get<int>(), g.at("after").get<int>(),
                        g.at("removed").get<std::vector<int>>()});
  }
  return r;
}

namespace detail {

inline std::vector<int> kept_indices(int n, const std::set<int>& drop) {
  std::vector<int> keep;
  for (int i = 0; i < n; ++i)
    if (!drop.count(i)) keep.push_back(i);
  return keep;
}

/// Copy of `w` restricted to `keep0` along axis 0 and `keep1` along axis 1.
template <typename T>
Tensor<T> take2(const Tensor<T>& w, const std::vector<int>& keep0, const std::vector<int>& keep1) {
  Shape s = w.shape();
  const std::size_t inner = element_count(Shape(s.begin() + 2, s.end()));
  Shape out_shape = s;
  out_shape[0] = static_cast<int>(keep0.size());
  out_shape[1] = static_cast<int>(keep1.size());
  Tensor<T> out(out_shape);
  T* dst = out.data();
  for (int a : keep0)
    for (int b : keep1) {
      const T* src = w.data() + (static_cast<std::size_t>(a) * s[1] + b) * inner;
      std::copy(src, src + inner, dst);
      dst += inner;
    }
  return out;
}

template <typename T>
Tensor<T> take1(const Tensor<T>& v, const std::vector<int>& keep) {
  if (v.empty()) return v;
  Tensor<T> out({static_cast<int>(keep.size())});
  for (std::size_t i = 0; i < keep.size(); ++i) out[i] = v[keep[i]];
  return out;
}

}  // namespace detail

/// Remove pre-selected channels (`removal[g]` = indices for group g).
template <typename T>
Network<T> apply_pruning(const Network<T>& net, const DependencyGraph& graph,
                         const std::vector<std::vector<int>>& removal) {
  const ModelConfig& cfg = net.config();
  const int n = cfg.size();
  // Channels to drop per (layer, axis).
  std::vector<std::set<int>> drop_out(static_cast<std::size_t>(n)), drop_in(static_cast<std::size_t>(n));
  for (const auto& g : graph.groups) {
    const auto& rm = removal.at(static_cast<std::size_t>(g.id));
    if (rm.empty()) continue;
    if (!g.prunable) throw AnalysisError("attempt to prune unprunable group " + std::to_string(g.id));
    if (static_cast<int>(rm.size()) >= g.size) throw AnalysisError("pruning would remove every channel of a group");
    for (const auto& m : g.members) {
      auto& target = m.axis == ChannelAxis::output ? drop_out[m.layer] : drop_in[m.layer];
      for (int k : rm) target.insert(m.offset + k);
    }
  }

  ModelConfig out_cfg = cfg;
  auto channels = [&](int node) { return node == kNetworkInput ? 3 : out_cfg.layers[node].out_channels; };
  for (int i = 0; i < n; ++i) {
    LayerSpec& l = out_cfg.layers[i];
    switch (l.kind) {
      case LayerKind::conv2d:
      case LayerKind::transpose_conv2d:
        l.in_channels = channels(l.inputs[0]);
        l.out_channels = cfg.layers[i].out_channels - static_cast<int>(drop_out[i].size());
        break;
      case LayerKind::concat: {
        int c = 0;
        for (int in : l.inputs) c += channels(in);
        l.in_channels = l.out_channels = c;
        break;
      }
      default:
        l.in_channels = l.out_channels = channels(l.inputs[0]);
        break;
    }
  }

  Network<T> pruned(out_cfg, net.norm_settings());
  for (int i = 0; i < n; ++i) {
    const LayerSpec& l = cfg.layers[i];
    const LayerParams<T>& src = net.layers()[i];
    LayerParams<T>& dst = pruned.layers()[i];
    if (l.has_weights()) {
      const auto keep_out = detail::kept_indices(l.out_channels, drop_out[i]);
      const auto keep_in = detail::kept_indices(l.in_channels, drop_in[i]);
      dst.weight = l.kind == LayerKind::conv2d ? detail::take2(src.weight, keep_out, keep_in)
                                               : detail::take2(src.weight, keep_in, keep_out);
      if (l.bias) dst.bias = detail::take1(src.bias, keep_out);
    } else if (l.is_norm()) {
      const auto keep = detail::kept_indices(l.out_channels, drop_out[i]);
      dst.gamma = detail::take1(src.gamma, keep);
      dst.beta = detail::take1(src.beta, keep);
      dst.running_mean = detail::take1(src.running_mean, keep);
      dst.running_var = detail::take1(src.running_var, keep);
    }
    LayerParams<T>& g = pruned.grads()[i];
    g.weight = Tensor<T>(dst.weight.shape());
    g.bias = Tensor<T>(dst.bias.shape());
    g.gamma = Tensor<T>(dst.gamma.shape());
    g.beta = Tensor<T>(dst.beta.shape());
  }
  return pruned;
}

/// One pruning round: build the graph, score every group once, remove the
/// floor(r * n) weakest channels per prunable group.
template <typename T>
Network<T> prune_step(const Network<T>& net, double rate, PruneRecord* record = nullptr, std::ostream* log = nullptr) {
  const DependencyGraph graph = build_dependency_graph(net.config());
  const ImportanceTable table = importance_table(graph, net);
  std::vector<std::vector<int>> removal(graph.groups.size());
  PruneRecord rec;
  rec.rate = rate;
  rec.params_before = net.parameter_count();
  if (!(rate > 0.0 && rate < 1.0)) throw DomainError("prune rate must lie in (0, 1)");
  for (const auto& g : graph.groups) {
    if (!g.prunable) continue;
    if (g.size < 2) {
      if (log) *log << "prune: group " << g.id << " has " << g.size << " channel(s), skipped\n";
      continue;
    }
    removal[g.id] = select_channels(table[g.id], rate);
    rec.groups.push_back({g.id, g.size, g.size - static_cast<int>(removal[g.id].size()), removal[g.id]});
  }
  Network<T> pruned = apply_pruning(net, graph, removal);
  rec.params_after = pruned.parameter_count();
  if (record) *record = std::move(rec);
  return pruned;
}

}  // namespace dtp
