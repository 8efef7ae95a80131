// dtp: teacher training, distill-then-prune, evaluation and accounting.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dtp/commands.hpp"

namespace {

struct Common {
  std::string config;
  std::string preset;
  std::string out;
  std::string checkpoint;
  std::string resolution;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c, bool wants_checkpoint) {
  cmd->add_option("--config", c.config, "Run config (JSON)");
  cmd->add_option("--preset", c.preset, "Base preset: desk, sceneflow, kitti");
  cmd->add_option("--out", c.out, "Output directory (overrides DTP_OUT_DIR and the config)");
  cmd->add_option("--seed", c.seed, "Seed override");
  cmd->add_option("--set", c.overrides, "Scalar override, e.g. plan.prune_rate=0.2")->take_all();
  cmd->add_flag("-q,--quiet", c.quiet, "Suppress progress output");
  if (wants_checkpoint) cmd->add_option("--checkpoint", c.checkpoint, "Checkpoint file");
}

dtp::RunConfig resolve(const Common& c) {
  std::vector<std::string> overrides = c.overrides;
  if (c.seed) overrides.push_back("seed=" + std::to_string(*c.seed));
  if (c.preset.empty() && c.config.empty()) return dtp::resolve_run_config("desk", "", overrides);
  return dtp::resolve_run_config(c.preset, c.config, overrides);
}

std::pair<int, int> resolution_or(const Common& c, const dtp::RunConfig& cfg) {
  if (!c.resolution.empty()) return dtp::parse_resolution(c.resolution);
  return {cfg.resolution[0], cfg.resolution[1]};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distill-then-prune stereo matching"};
  app.require_subcommand(1);

  Common teacher, dtp_opts, eval, flops, bench, exportw;
  auto* c_teacher = app.add_subcommand("train-teacher", "Supervised training of the teacher network");
  add_common(c_teacher, teacher, false);

  auto* c_dtp = app.add_subcommand("dtp", "Distill from a teacher checkpoint, then prune and finetune");
  add_common(c_dtp, dtp_opts, true);
  c_dtp->get_option("--checkpoint")->description("Teacher checkpoint")->required();

  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint and write disparity/error images");
  add_common(c_eval, eval, true);
  c_eval->get_option("--checkpoint")->required();

  auto* c_flops = app.add_subcommand("flops", "Parameter and MAC table");
  add_common(c_flops, flops, true);
  c_flops->add_option("--resolution", flops.resolution, "HxW (default from config, 540x960 for presets without one)");
  bool flops_json = false;
  bool flops_teacher = false;
  c_flops->add_flag("--json", flops_json, "One JSON record per row");
  c_flops->add_flag("--teacher", flops_teacher, "Account the teacher config instead of the student");

  auto* c_bench = app.add_subcommand("bench", "Latency benchmark");
  add_common(c_bench, bench, true);
  c_bench->add_option("--resolution", bench.resolution, "HxW");

  auto* c_export = app.add_subcommand("export-weights", "Write weights.json + weights.bin from a checkpoint");
  add_common(c_export, exportw, true);
  c_export->get_option("--checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : dtp::kExitConfig;
  }

  try {
    if (*c_teacher) {
      const auto cfg = resolve(teacher);
      dtp::cmd_train_teacher(cfg, dtp::output_directory(cfg, teacher.out), {std::cout, std::cerr, teacher.quiet});
    } else if (*c_dtp) {
      const auto cfg = resolve(dtp_opts);
      dtp::cmd_dtp(cfg, dtp_opts.checkpoint, dtp::output_directory(cfg, dtp_opts.out),
                   {std::cout, std::cerr, dtp_opts.quiet});
    } else if (*c_eval) {
      const auto cfg = resolve(eval);
      dtp::cmd_eval(cfg, eval.checkpoint, dtp::output_directory(cfg, eval.out) / "eval", {std::cout, std::cerr, eval.quiet});
    } else if (*c_flops) {
      const auto cfg = resolve(flops);
      const auto [h, w] = flops.resolution.empty() ? std::pair{540, 960} : dtp::parse_resolution(flops.resolution);
      dtp::ModelConfig model = flops_teacher ? cfg.teacher_config() : cfg.student_config();
      if (!flops.checkpoint.empty()) model = dtp::load_checkpoint(flops.checkpoint).network.config();
      dtp::cmd_flops(model, h, w, flops_json, {std::cout, std::cerr, flops.quiet});
    } else if (*c_bench) {
      const auto cfg = resolve(bench);
      const auto [h, w] = resolution_or(bench, cfg);
      if (bench.checkpoint.empty()) {
        dtp::Network<float> net(cfg.student_config());
        net.initialize(cfg.seed);
        dtp::cmd_bench(net, h, w, cfg.bench_warmup, cfg.bench_iterations, {std::cout, std::cerr, bench.quiet});
      } else {
        const auto ck = dtp::load_checkpoint(bench.checkpoint);
        dtp::cmd_bench(ck.network, h, w, cfg.bench_warmup, cfg.bench_iterations, {std::cout, std::cerr, bench.quiet});
      }
    } else if (*c_export) {
      const auto cfg = resolve(exportw);
      dtp::cmd_export_weights(exportw.checkpoint, dtp::output_directory(cfg, exportw.out) / "export",
                              {std::cout, std::cerr, exportw.quiet});
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return dtp::exit_code_for(e);
  }
  return dtp::kExitOk;
}
