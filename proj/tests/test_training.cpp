#include <catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "dtp/checkpoint.hpp"
#include "dtp/training.hpp"

using namespace dtp;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ModelConfig tiny(int d_max = 16) { return build_model_config(d_max, Setting::setting3, Widths{4, 6, 4, 4, 0}); }

DatasetSpec synth(const std::string& split, int count) {
  DatasetSpec s;
  s.split = split;
  s.seed = 3;
  s.height = 32;
  s.width = 48;
  s.max_d = 8;
  s.count = count;
  s.d_max = 16;
  return s;
}

template <typename T>
Network<T> init(ModelConfig cfg, std::uint64_t seed) {
  Network<T> net(std::move(cfg));
  net.initialize(seed);
  return net;
}

bool same_weights(const Network<float>& a, const Network<float>& b) { return a.layers() == b.layers(); }

}  // namespace

TEST_CASE("AdamW matches a scalar reference", "[optimizer]") {
  auto net = init<double>(tiny(), 1);
  OptimizerConfig oc;
  oc.lr = 0.01;
  oc.weight_decay = 0.1;
  AdamW<double> opt(oc);

  std::vector<std::vector<double>> w, m, v;
  for (auto& p : net.parameters()) {
    w.push_back(p.value->storage());
    m.emplace_back(p.value->size(), 0.0);
    v.emplace_back(p.value->size(), 0.0);
  }
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 1);
  for (int t = 1; t <= 4; ++t) {
    auto params = net.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      for (std::size_t i = 0; i < params[k].grad->size(); ++i) {
        const double g = n(rng);
        (*params[k].grad)[i] = g;
        w[k][i] -= oc.lr * oc.weight_decay * w[k][i];
        m[k][i] = oc.beta1 * m[k][i] + (1 - oc.beta1) * g;
        v[k][i] = oc.beta2 * v[k][i] + (1 - oc.beta2) * g * g;
        const double mh = m[k][i] / (1 - std::pow(oc.beta1, t));
        const double vh = v[k][i] / (1 - std::pow(oc.beta2, t));
        w[k][i] -= oc.lr * mh / (std::sqrt(vh) + oc.eps);
      }
    }
    opt.step(net, oc.lr);
  }
  CHECK(opt.steps() == 4);
  auto params = net.parameters();
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i = 0; i < w[k].size(); ++i) REQUIRE_THAT((*params[k].value)[i], WithinAbs(w[k][i], 1e-12));
}

TEST_CASE("learning-rate decay and config validation", "[optimizer]") {
  OptimizerConfig c;
  CHECK(c.lr_at(100) == 1e-3);
  c.decay_epoch = 10;
  CHECK(c.lr_at(9) == 1e-3);
  CHECK(c.lr_at(10) == 1e-4);
  CHECK(optimizer_config_from_json(to_json(c)).decay_epoch == 10);
  c.lr = -1;
  CHECK_THROWS_AS(validate(c), ConfigError);
  CHECK_THROWS_AS(optimizer_config_from_json(nlohmann::json{{"kind", "sgd"}}), ConfigError);
  TrainingPlan p;
  CHECK(training_plan_from_json(to_json(p)).prune_rounds == 5);
  p.prune_rate = 1.0;
  CHECK_THROWS_AS(validate(p), ConfigError);
}

TEST_CASE("supervised training lowers the loss", "[training]") {
  StereoDataset train(synth("train", 8));
  auto net = init<float>(tiny(), 4);
  AdamW<float> opt;
  std::vector<double> losses;
  for (int e = 0; e < 6; ++e) losses.push_back(supervised_epoch(net, opt, train, {7, e, 4, {}, 3e-3}).loss);
  CHECK(losses.back() < losses.front());
  for (double l : losses) CHECK(std::isfinite(l));
}

TEST_CASE("non-finite weights abort training with a numeric error", "[training]") {
  StereoDataset train(synth("train", 4));
  auto net = init<float>(tiny(), 4);
  net.layers()[net.config().size() - 2].weight.fill(std::numeric_limits<float>::quiet_NaN());
  AdamW<float> opt;
  CHECK_THROWS_AS(supervised_epoch(net, opt, train, {0, 0, 4, {}, 1e-3}), NumericError);
}

TEST_CASE("cached teacher logits equal on-the-fly logits", "[distill]") {
  StereoDataset train(synth("train", 5));
  const auto teacher = init<float>(tiny(), 9);
  TeacherLogits live(teacher, false), cached(teacher, true);
  const auto order = epoch_order(train.size(), 1, 0);
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t first = 0; first < order.size(); first += 2) {
      const Batch b = training_batch(train, order, first, 2, 1, pass, {});
      std::vector<std::size_t> idx(order.begin() + first, order.begin() + first + b.size());
      auto a = live(b, idx);
      auto c = cached(b, idx);
      REQUIRE(a.shape() == c.shape());
      for (std::size_t k = 0; k < a.size(); ++k) REQUIRE(a[k] == c[k]);
    }
  }
}

TEST_CASE("distill-then-prune driver", "[dtp]") {
  StereoDataset train(synth("train", 6)), val(synth("val", 3));
  const auto teacher = init<float>(tiny(), 11);
  const auto teacher_copy = teacher;
  TrainingPlan plan;
  plan.distill_epochs = 2;
  plan.prune_rounds = 3;
  plan.prune_rate = 0.25;
  plan.finetune_epochs = 1;
  plan.batch_size = 3;
  RunSettings run;
  run.seed = 5;

  std::vector<EpochLog> epochs;
  std::vector<std::pair<std::string, int>> phases;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochLog& e) { epochs.push_back(e); };
  hooks.on_phase = [&](const PhaseResult& r, const Network<float>& net, const AdamW<float>& opt) {
    phases.emplace_back(r.phase, r.round);
    CHECK(r.params == net.parameter_count());
    CHECK(opt.steps() > 0);
  };
  auto result = dtp_train(plan, teacher, init<float>(tiny(), 12), train, &val, run, hooks);

  CHECK(same_weights(teacher, teacher_copy));
  REQUIRE(result.phases.size() == 4);
  CHECK(phases.front() == std::make_pair(std::string("distill"), 0));
  CHECK(phases.back() == std::make_pair(std::string("round"), 3));
  REQUIRE(epochs.size() == 5);
  CHECK(*epochs[0].temperature == 0.5);
  CHECK(*epochs[1].temperature == 1.0);
  for (std::size_t i = 1; i < result.phases.size(); ++i) {
    const auto& prev = result.phases[i - 1];
    const auto& cur = result.phases[i];
    CHECK(cur.params < prev.params);
    REQUIRE(cur.prune);
    CHECK(cur.prune->params_before == prev.params);
    CHECK(cur.prune->params_after == cur.params);
    REQUIRE(cur.group_sizes.size() == prev.group_sizes.size());
    for (std::size_t g = 0; g < cur.group_sizes.size(); ++g) CHECK(cur.group_sizes[g] <= prev.group_sizes[g]);
    CHECK(cur.val.epe.has_value());
  }
  CHECK(result.student.parameter_count() == result.phases.back().params);

  SECTION("same seed reproduces the run") {
    auto again = dtp_train(plan, teacher, init<float>(tiny(), 12), train, &val, run);
    CHECK(same_weights(again.student, result.student));
    CHECK(again.phases.back().val.epe == result.phases.back().val.epe);
  }
  SECTION("teacher caching does not change the result") {
    RunSettings cached = run;
    cached.distill.cache_teacher = true;
    auto again = dtp_train(plan, teacher, init<float>(tiny(), 12), train, &val, cached);
    CHECK(same_weights(again.student, result.student));
  }
  SECTION("mismatched d_max is rejected") {
    CHECK_THROWS_AS(dtp_train(plan, init<float>(tiny(32), 1), init<float>(tiny(), 12), train, &val, run), ConfigError);
  }
}

TEST_CASE("checkpoint round trip is bit exact", "[checkpoint]") {
  StereoDataset train(synth("train", 4)), val(synth("val", 2));
  auto net = init<float>(tiny(), 21);
  AdamW<float> opt;
  supervised_epoch(net, opt, train, {1, 0, 2, {}, 1e-3});
  PruneRecord rec;
  net = prune_step(net, 0.2, &rec);
  supervised_epoch(net, opt = AdamW<float>(), train, {1, 1, 2, {}, 1e-3});

  Checkpoint ck(net);
  ck.prune_history.push_back(rec);
  ck.optimizer = optimizer_state(opt);
  ck.counters = {{"phase", "round"}, {"round", 1}};
  ck.config_hash = config_hash(nlohmann::json{{"b", 1}, {"a", 2}});
  const auto path = (std::filesystem::temp_directory_path() / "dtp_test.ckpt").string();
  save_checkpoint(path, ck);
  auto back = load_checkpoint(path);
  std::filesystem::remove(path);

  CHECK(back.network.config() == net.config());
  CHECK(same_weights(back.network, net));
  CHECK(back.prune_history.size() == 1);
  CHECK(back.prune_history[0].params_after == rec.params_after);
  CHECK(back.config_hash == config_hash(nlohmann::json{{"a", 2}, {"b", 1}}));
  REQUIRE(back.optimizer);
  CHECK(back.optimizer->steps == opt.steps());
  auto restored = restore_optimizer(*back.optimizer);
  REQUIRE(restored.first_moments().size() == opt.first_moments().size());
  for (std::size_t k = 0; k < opt.first_moments().size(); ++k) {
    CHECK(restored.first_moments()[k].storage() == opt.first_moments()[k].storage());
    CHECK(restored.second_moments()[k].storage() == opt.second_moments()[k].storage());
  }
  const auto r1 = evaluate(net, val);
  const auto r2 = evaluate(back.network, val);
  CHECK(r1.epe == r2.epe);
  CHECK(r1.d1 == r2.d1);
}

TEST_CASE("corrupt checkpoints are rejected", "[checkpoint]") {
  Checkpoint ck(init<float>(tiny(), 1));
  Bytes good = encode_checkpoint(ck);
  CHECK_NOTHROW(decode_checkpoint(good));
  Bytes bad = good;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  Bytes truncated(good.begin(), good.end() - 5);
  CHECK_THROWS_AS(decode_checkpoint(truncated), FormatError);
  Bytes trailing = good;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(trailing), FormatError);
}
