#pragma once

// Command implementations behind tools/dtp_cli. Each takes a resolved
// RunConfig and writes its artifacts under an output directory.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtp/checkpoint.hpp"
#include "dtp/datasets.hpp"
#include "dtp/image_io.hpp"
#include "dtp/metrics.hpp"
#include "dtp/pruning.hpp"
#include "dtp/run_config.hpp"
#include "dtp/training.hpp"
#include "dtp/visualize.hpp"

namespace dtp {

namespace fs = std::filesystem;

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitData = 3, kExitNumeric = 4 };

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const FormatError*>(&e)) return kExitData;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DomainError*>(&e) ||
      dynamic_cast<const ShapeError*>(&e) || dynamic_cast<const AnalysisError*>(&e)) {
    return kExitConfig;
  }
  return kExitFailure;
}

/// "HxW" or "WxH"-agnostic parsing is not attempted: the first number is the height.
inline std::pair<int, int> parse_resolution(const std::string& text) {
  static const std::regex re(R"(^\s*(\d+)\s*[xX]\s*(\d+)\s*$)");
  std::smatch m;
  if (!std::regex_match(text, m, re)) throw DomainError("resolution '" + text + "' is not HxW");
  const long h = std::stol(m[1]), w = std::stol(m[2]);
  if (h <= 0 || w <= 0 || h > 16384 || w > 16384) throw DomainError("resolution '" + text + "' out of range");
  return {static_cast<int>(h), static_cast<int>(w)};
}

/// --out, then DTP_OUT_DIR, then the config's output_dir.
inline fs::path output_directory(const RunConfig& cfg, const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("DTP_OUT_DIR"); env && *env) return env;
  return cfg.output_dir;
}

struct CommandIO {
  std::ostream& out = std::cout;  // results
  std::ostream& log = std::cerr;  // progress
  bool quiet = false;
};

namespace detail {

inline void require_dataset_paths(const DatasetSpec& s) {
  if (s.kind != DatasetKind::synthetic && !fs::exists(s.root)) {
    throw DataError("dataset root '" + s.root + "' does not exist");
  }
}

class JsonLines {
 public:
  explicit JsonLines(const fs::path& path) : out_(path) {
    if (!out_) throw DataError("cannot write '" + path.string() + "'");
  }
  void write(const nlohmann::ordered_json& j) { out_ << j.dump() << '\n' << std::flush; }

 private:
  std::ofstream out_;
};

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

inline void write_json(const fs::path& path, const nlohmann::ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

inline Checkpoint make_checkpoint(const Network<float>& net, const RunConfig& cfg, const std::string& role,
                                  std::vector<PruneRecord> history, const AdamW<float>* opt,
                                  nlohmann::json counters, const nlohmann::ordered_json& metrics) {
  Checkpoint ck(net);
  ck.prune_history = std::move(history);
  if (opt) ck.optimizer = optimizer_state(*opt);
  ck.counters = std::move(counters);
  ck.config_hash = run_config_hash(cfg);
  ck.extra = {{"role", role},
               {"run_config", nlohmann::json::parse(to_json(cfg).dump())},
               {"metrics", nlohmann::json::parse(metrics.dump())}};
  return ck;
}

inline void progress(const CommandIO& io, const EpochLog& e) {
  if (io.quiet) return;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-8s round %d epoch %3d  loss %.4f  train EPE %.3f%s  (%.1fs)\n", e.phase.c_str(),
                e.round, e.epoch, e.loss, e.train_epe.value_or(NAN),
                e.val_epe ? (" val EPE " + std::to_string(*e.val_epe)).c_str() : "", e.seconds);
  io.log << buf << std::flush;
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// Supervised teacher training. Writes teacher.ckpt, teacher_log.jsonl and
/// teacher_metrics.json.
inline MetricReport cmd_train_teacher(const RunConfig& cfg, const fs::path& out_dir, const CommandIO& io = {}) {
  validate(cfg);
  detail::require_dataset_paths(cfg.train);
  detail::require_dataset_paths(cfg.val);
  fs::create_directories(out_dir);
  StereoDataset train(cfg.train), val(cfg.val);
  Network<float> net(cfg.teacher_config());
  net.initialize(detail::mix(cfg.seed, 0x7eac4e7ULL));

  RunSettings run;
  run.seed = cfg.seed;
  run.norm = cfg.normalization;
  run.optimizer = cfg.optimizer;
  detail::JsonLines log(out_dir / "teacher_log.jsonl");
  TrainHooks hooks;
  hooks.eval_every_epoch = true;
  hooks.on_epoch = [&](const EpochLog& e) {
    log.write(to_json(e));
    detail::progress(io, e);
  };
  MetricReport report;
  hooks.on_phase = [&](const PhaseResult& r, const Network<float>& n, const AdamW<float>& opt) {
    report = r.val;
    nlohmann::ordered_json metrics{{"phase", "teacher"}, {"params", n.parameter_count()}, {"val", to_json(r.val)}};
    save_checkpoint((out_dir / "teacher.ckpt").string(),
                    detail::make_checkpoint(n, cfg, "teacher", {}, &opt, {{"phase", "teacher"}, {"epoch", cfg.plan.teacher_epochs}}, metrics));
    detail::write_json(out_dir / "teacher_metrics.json", metrics);
  };
  train_teacher(net, train, &val, cfg.plan, run, hooks);
  io.out << "teacher: params " << net.parameter_count() << "  val EPE " << report.epe.value_or(NAN) << "  D1 "
         << report.d1.value_or(NAN) << "%\n";
  return report;
}

struct DtpSummary {
  std::vector<PhaseResult> phases;
  nlohmann::ordered_json final_record;
};

/// Distill-then-prune from a teacher checkpoint. Writes dtp_round_<k>.ckpt
/// for k = 0 (after distillation) .. E, dtp_log.jsonl, accounting tables for
/// the initial and final student and final_metrics.json.
inline DtpSummary cmd_dtp(const RunConfig& cfg, const fs::path& teacher_path, const fs::path& out_dir,
                          const CommandIO& io = {}) {
  validate(cfg);
  detail::require_dataset_paths(cfg.train);
  detail::require_dataset_paths(cfg.val);
  if (!fs::exists(teacher_path)) throw DataError("teacher checkpoint '" + teacher_path.string() + "' not found");
  Checkpoint teacher_ck = load_checkpoint(teacher_path.string());
  const ModelConfig student_cfg = cfg.student_config();
  if (teacher_ck.network.config().d_max != student_cfg.d_max) {
    throw ConfigError("teacher d_max " + std::to_string(teacher_ck.network.config().d_max) + " != student d_max " +
                      std::to_string(student_cfg.d_max));
  }
  fs::create_directories(out_dir);
  StereoDataset train(cfg.train), val(cfg.val);
  Network<float> student(student_cfg);
  student.initialize(detail::mix(cfg.seed, 0x5714de47ULL));

  const auto [ah, aw] = padded_resolution(student_cfg, cfg.resolution[0], cfg.resolution[1]);
  const AccountingTable before = count_flops(student_cfg, ah, aw);
  detail::write_text(out_dir / "accounting_initial.txt", format_table(before));

  RunSettings run;
  run.seed = cfg.seed;
  run.norm = cfg.normalization;
  run.optimizer = cfg.optimizer;
  run.distill = cfg.distill;
  run.schedule = cfg.schedule;

  detail::JsonLines log(out_dir / "dtp_log.jsonl");
  std::vector<PruneRecord> history;
  TrainHooks hooks;
  hooks.log = io.quiet ? nullptr : &io.log;
  hooks.on_epoch = [&](const EpochLog& e) {
    log.write(to_json(e));
    detail::progress(io, e);
  };
  hooks.on_phase = [&](const PhaseResult& r, const Network<float>& n, const AdamW<float>& opt) {
    if (r.prune) history.push_back(*r.prune);
    log.write(to_json(r));
    save_checkpoint((out_dir / ("dtp_round_" + std::to_string(r.round) + ".ckpt")).string(),
                    detail::make_checkpoint(n, cfg, "student", history, &opt, {{"phase", r.phase}, {"round", r.round}},
                                            to_json(r)));
    if (!io.quiet) {
      io.log << r.phase << " " << r.round << ": params " << r.params << "  val EPE " << r.val.epe.value_or(NAN)
             << "\n";
    }
  };
  DtpResult result = dtp_train(cfg.plan, teacher_ck.network, std::move(student), train, &val, run, hooks);

  const AccountingTable after = count_flops(result.student.config(), ah, aw);
  detail::write_text(out_dir / "accounting_final.txt", format_table(after));

  DtpSummary summary;
  summary.phases = result.phases;
  const PhaseResult& last = result.phases.back();
  nlohmann::ordered_json rec;
  rec["config_hash"] = run_config_hash(cfg);
  rec["teacher_val"] = teacher_ck.extra.contains("metrics") ? teacher_ck.extra["metrics"].value("val", nlohmann::json())
                                                             : nlohmann::json();
  rec["params_initial"] = before.total.params;
  rec["params_final"] = after.total.params;
  rec["param_reduction"] = 1.0 - static_cast<double>(after.total.params) / static_cast<double>(before.total.params);
  rec["macs_initial"] = before.total.macs;
  rec["macs_final"] = after.total.macs;
  rec["accounting_resolution"] = {ah, aw};
  rec["val"] = to_json(last.val);
  rec["phases"] = nlohmann::ordered_json::array();
  for (const auto& p : result.phases)
    rec["phases"].push_back({{"phase", p.phase}, {"round", p.round}, {"params", p.params}, {"val", to_json(p.val)}});
  detail::write_json(out_dir / "final_metrics.json", rec);
  summary.final_record = rec;

  io.out << "accounting before pruning (" << ah << "x" << aw << ")\n" << format_table(before, false)
         << "accounting after pruning\n" << format_table(after, false);
  io.out << "final: params " << after.total.params << " (" << 100.0 * rec["param_reduction"].get<double>()
         << "% removed)  val EPE " << last.val.epe.value_or(NAN) << "  D1 " << last.val.d1.value_or(NAN) << "%\n";
  return summary;
}

/// Evaluates a checkpoint on the configured validation split; writes the
/// first cfg.eval_images colorized disparity and error maps plus metrics.json.
inline MetricReport cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& out_dir,
                             const CommandIO& io = {}) {
  if (!fs::exists(checkpoint)) throw DataError("checkpoint '" + checkpoint.string() + "' not found");
  detail::require_dataset_paths(cfg.val);
  const Checkpoint ck = load_checkpoint(checkpoint.string());
  DatasetSpec spec = cfg.val;
  spec.d_max = ck.network.config().d_max;
  StereoDataset val(spec);
  fs::create_directories(out_dir);
  const float scale = static_cast<float>(ck.network.config().d_max - 1);
  const auto report = evaluate(ck.network, val, cfg.normalization, cfg.kitti_official_d1,
                               [&](std::size_t i, const Tensor<float>& pred) {
                                 if (static_cast<int>(i) >= cfg.eval_images) return;
                                 const StereoSample s = val.get(i);
                                 char stem[32];
                                 std::snprintf(stem, sizeof stem, "%04zu", i);
                                 const Tensor<float> d({pred.dim(1), pred.dim(2)}, pred.storage());
                                 write_file((out_dir / (std::string("disparity_") + stem + ".png")).string(),
                                            write_png_rgb(colorize_disparity(d, scale)));
                                 write_file((out_dir / (std::string("error_") + stem + ".png")).string(),
                                            write_png_rgb(error_map(d, s.gt, s.valid)));
                               });
  detail::write_json(out_dir / "metrics.json", to_json(report, true));
  io.out << "EPE " << report.epe.value_or(NAN) << " px  D1 " << report.d1.value_or(NAN) << "%  over "
         << report.valid_pixel_count << " valid pixels in " << val.size() << " images\n";
  return report;
}

/// Parameter/MAC table for a model config (or checkpoint) at a resolution;
/// sizes are padded up to a multiple of the downsample factor.
inline AccountingTable cmd_flops(const ModelConfig& config, int height, int width, bool json_lines,
                                 const CommandIO& io = {}) {
  if (height <= 0 || width <= 0) throw DomainError("resolution must be positive");
  const auto [h, w] = padded_resolution(config, height, width);
  const AccountingTable t = count_flops(config, h, w);
  if (json_lines) {
    io.out << format_records(t);
  } else {
    if (h != height || w != width) io.out << "(input padded from " << height << "x" << width << ")\n";
    io.out << format_table(t);
  }
  return t;
}

inline LatencyReport cmd_bench(const Network<float>& net, int height, int width, int warmup, int iterations,
                               const CommandIO& io = {}) {
  if (height <= 0 || width <= 0) throw DomainError("resolution must be positive");
  const auto [h, w] = padded_resolution(net.config(), height, width);
  const LatencyReport r = latency_bench(net, h, w, 1, warmup, iterations);
  cmd_flops(net.config(), h, w, false, io);
  io.out << to_json(r).dump() << "\n";
  return r;
}

/// Flat export: weights.json (config and tensor table with byte offsets)
/// and weights.bin (little-endian float32, eval-mode tensors).
inline void cmd_export_weights(const fs::path& checkpoint, const fs::path& out_dir, const CommandIO& io = {}) {
  if (!fs::exists(checkpoint)) throw DataError("checkpoint '" + checkpoint.string() + "' not found");
  const Checkpoint ck = load_checkpoint(checkpoint.string());
  fs::create_directories(out_dir);
  nlohmann::ordered_json meta;
  meta["config"] = to_json(ck.network.config());
  meta["bn_eps"] = ck.network.norm_settings().eps;
  meta["tensors"] = nlohmann::ordered_json::array();
  Bytes blob;
  for (const auto& nt : detail::state_tensors(ck.network)) {
    meta["tensors"].push_back({{"name", nt.name}, {"shape", nt.t->shape()}, {"offset", blob.size()}});
    const auto* p = reinterpret_cast<const std::uint8_t*>(nt.t->data());
    blob.insert(blob.end(), p, p + nt.t->size() * sizeof(float));
  }
  write_file((out_dir / "weights.bin").string(), blob);
  detail::write_json(out_dir / "weights.json", meta);
  io.out << "exported " << meta["tensors"].size() << " tensors (" << blob.size() << " bytes) to " << out_dir.string()
         << "\n";
}

}  // namespace dtp
