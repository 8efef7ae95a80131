#pragma once

// Checkpoint file: "DTPCKPT1", little-endian uint64 metadata length, JSON
// metadata, then raw float32 tensors in the order of the metadata table.

#include <bit>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtp/error.hpp"
#include "dtp/image_io.hpp"
#include "dtp/network.hpp"
#include "dtp/pruning.hpp"
#include "dtp/training.hpp"

namespace dtp {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'D', 'T', 'P', 'C', 'K', 'P', 'T', '1'};

inline std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Hash of a run configuration, independent of key order.
inline std::string config_hash(const nlohmann::json& run_config) { return fnv1a_hex(nlohmann::json(run_config).dump()); }

struct OptimizerState {
  OptimizerConfig config;
  std::int64_t steps = 0;
  std::vector<Tensor<float>> m;
  std::vector<Tensor<float>> v;
};

struct Checkpoint {
  Network<float> network;
  std::vector<PruneRecord> prune_history;
  std::optional<OptimizerState> optimizer;
  nlohmann::json counters = nlohmann::json::object();  // phase, round, epoch
  std::string config_hash;
  nlohmann::json extra = nlohmann::json::object();     // run config, metrics, normalization

  explicit Checkpoint(Network<float> net) : network(std::move(net)) {}
};

namespace detail {

struct NamedTensor {
  std::string name;
  const Tensor<float>* t;
};

inline std::vector<NamedTensor> state_tensors(const Network<float>& net) {
  std::vector<NamedTensor> out;
  const auto& cfg = net.config();
  for (int i = 0; i < cfg.size(); ++i) {
    const LayerSpec& l = cfg.layers[i];
    const LayerParams<float>& p = net.layers()[i];
    if (l.has_weights()) {
      out.push_back({l.name + ".weight", &p.weight});
      if (l.bias) out.push_back({l.name + ".bias", &p.bias});
    } else if (l.is_norm()) {
      out.push_back({l.name + ".gamma", &p.gamma});
      out.push_back({l.name + ".beta", &p.beta});
      out.push_back({l.name + ".running_mean", &p.running_mean});
      out.push_back({l.name + ".running_var", &p.running_var});
    }
  }
  return out;
}

inline std::vector<Tensor<float>*> mutable_state_tensors(Network<float>& net) {
  std::vector<Tensor<float>*> out;
  for (const auto& nt : state_tensors(net)) out.push_back(const_cast<Tensor<float>*>(nt.t));
  return out;
}

}  // namespace detail

inline Bytes encode_checkpoint(const Checkpoint& ck) {
  nlohmann::ordered_json meta;
  meta["format"] = "dtp-checkpoint";
  meta["version"] = 1;
  meta["config"] = to_json(ck.network.config());
  meta["norm"] = {{"eps", ck.network.norm_settings().eps}, {"momentum", ck.network.norm_settings().momentum}};
  meta["prune_history"] = nlohmann::ordered_json::array();
  for (const auto& r : ck.prune_history) meta["prune_history"].push_back(to_json(r));
  meta["counters"] = ck.counters;
  meta["config_hash"] = ck.config_hash;
  meta["extra"] = ck.extra;

  std::vector<std::pair<std::string, const Tensor<float>*>> table;
  for (const auto& nt : detail::state_tensors(ck.network)) table.emplace_back(nt.name, nt.t);
  if (ck.optimizer) {
    const auto& o = *ck.optimizer;
    if (o.m.size() != o.v.size()) throw ConfigError("optimizer moment lists differ in length");
    meta["optimizer"] = {{"config", to_json(o.config)}, {"steps", o.steps}, {"moments", o.m.size()}};
    for (std::size_t k = 0; k < o.m.size(); ++k) table.emplace_back("optimizer.m." + std::to_string(k), &o.m[k]);
    for (std::size_t k = 0; k < o.v.size(); ++k) table.emplace_back("optimizer.v." + std::to_string(k), &o.v[k]);
  }
  meta["tensors"] = nlohmann::ordered_json::array();
  std::size_t payload = 0;
  for (const auto& [name, t] : table) {
    meta["tensors"].push_back({{"name", name}, {"shape", t->shape()}});
    payload += t->size() * sizeof(float);
  }

  const std::string text = meta.dump();
  const std::uint64_t len = text.size();
  Bytes out(16 + text.size() + payload);
  std::memcpy(out.data(), kCheckpointMagic, 8);
  std::memcpy(out.data() + 8, &len, 8);
  std::memcpy(out.data() + 16, text.data(), text.size());
  std::size_t offset = 16 + text.size();
  for (const auto& [name, t] : table) {
    std::memcpy(out.data() + offset, t->data(), t->size() * sizeof(float));
    offset += t->size() * sizeof(float);
  }
  return out;
}

inline Checkpoint decode_checkpoint(const Bytes& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw FormatError("not a DTP checkpoint (bad magic)", 0);
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 8);
  if (len > bytes.size() - 16) throw FormatError("checkpoint metadata length exceeds file size", 8);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what(), 16);
  }
  try {
    NormSettings norm;
    if (meta.contains("norm")) {
      norm.eps = meta["norm"].value("eps", norm.eps);
      norm.momentum = meta["norm"].value("momentum", norm.momentum);
    }
    Checkpoint ck(Network<float>(model_config_from_json(meta.at("config")), norm));
    for (const auto& r : meta.value("prune_history", nlohmann::json::array())) ck.prune_history.push_back(prune_record_from_json(r));
    ck.counters = meta.value("counters", nlohmann::json::object());
    ck.config_hash = meta.value("config_hash", std::string());
    ck.extra = meta.value("extra", nlohmann::json::object());

    std::vector<Tensor<float>*> targets = detail::mutable_state_tensors(ck.network);
    const auto names = detail::state_tensors(ck.network);
    if (meta.contains("optimizer")) {
      const auto& o = meta["optimizer"];
      OptimizerState st;
      st.config = optimizer_config_from_json(o.at("config"));
      st.steps = o.at("steps").get<std::int64_t>();
      const auto n = o.at("moments").get<std::size_t>();
      st.m.resize(n);
      st.v.resize(n);
      ck.optimizer = std::move(st);
    }
    const auto& table = meta.at("tensors");
    std::size_t offset = 16 + len;
    std::size_t k = 0;
    for (const auto& entry : table) {
      const auto name = entry.at("name").get<std::string>();
      const Shape shape = entry.at("shape").get<Shape>();
      Tensor<float>* dst = nullptr;
      if (k < targets.size()) {
        if (name != names[k].name) throw FormatError("checkpoint tensor '" + name + "' where '" + names[k].name + "' was expected", offset);
        require_shape(shape, targets[k]->shape(), "checkpoint tensor " + name);
        dst = targets[k];
      } else {
        const std::size_t j = k - targets.size();
        if (!ck.optimizer || j >= 2 * ck.optimizer->m.size()) throw FormatError("unexpected checkpoint tensor '" + name + "'", offset);
        auto& list = j < ck.optimizer->m.size() ? ck.optimizer->m : ck.optimizer->v;
        auto& slot = list[j % ck.optimizer->m.size()];
        slot = Tensor<float>(shape);
        dst = &slot;
      }
      const std::size_t nbytes = dst->size() * sizeof(float);
      if (offset + nbytes > bytes.size()) throw FormatError("checkpoint truncated in tensor '" + name + "'", bytes.size());
      std::memcpy(dst->data(), bytes.data() + offset, nbytes);
      offset += nbytes;
      ++k;
    }
    const std::size_t expected = targets.size() + (ck.optimizer ? 2 * ck.optimizer->m.size() : 0);
    if (k != expected) throw FormatError("checkpoint tensor table has " + std::to_string(k) + " entries, expected " + std::to_string(expected), 16);
    if (offset != bytes.size()) throw FormatError("trailing bytes after checkpoint payload", offset);
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what(), 16);
  }
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) { write_file(path, encode_checkpoint(ck)); }
inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

inline OptimizerState optimizer_state(const AdamW<float>& opt) {
  return {opt.config(), opt.steps(), opt.first_moments(), opt.second_moments()};
}

inline AdamW<float> restore_optimizer(const OptimizerState& st) {
  AdamW<float> opt(st.config);
  opt.set_steps(st.steps);
  opt.first_moments() = st.m;
  opt.second_moments() = st.v;
  return opt;
}

}  // namespace dtp
