#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "clipvos/training.hpp"

using namespace clipvos;
using TD = Tensor<double>;

namespace {

PipelineConfig tiny_config() {
  PipelineConfig cfg = desk_preset();
  cfg.encoder.key_channels = 4;
  cfg.encoder.value_channels = 4;
  cfg.encoder.intra_key_channels = 4;
  cfg.encoder.key_stage_channels = {4, 4, 4};
  cfg.encoder.value_stage_channels = {4, 4};
  cfg.encoder.decoder_channels = {4, 4, 4};
  cfg.icr.width = 4;
  cfg.icr.spatial_window = 3;
  cfg.data.width = cfg.data.height = 16;
  cfg.data.min_size = 3;
  cfg.data.max_size = 4;
  cfg.data.length = 12;
  cfg.validate();
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("dice examples") {
  const TD gt({1, 4}, {1, 1, 0, 0});
  CHECK(dice_clip_loss(gt, gt).item() == doctest::Approx(0.0).epsilon(1e-5));
  CHECK(dice_clip_loss(TD({1, 4}, {0, 0, 1, 1}), gt).item() == doctest::Approx(1.0).epsilon(1e-5));
  // pred = {a}, gt = {a, b}: dice 2/3.
  CHECK(dice_clip_loss(TD({1, 4}, {1, 0, 0, 0}), gt).item() == doctest::Approx(1.0 / 3).epsilon(1e-5));
  const TD two({2, 3}, {1, 0, 0, 0, 1, 1});
  const TD swapped({2, 3}, {0, 1, 1, 1, 0, 0});
  CHECK(dice_clip_loss(swapped, two).item() == doctest::Approx(2.0).epsilon(1e-5));
  // An empty object predicted empty costs 1, not NaN.
  CHECK(std::isfinite(dice_clip_loss(TD::zeros({1, 4}), TD::zeros({1, 4})).item()));
}

TEST_CASE("dice is bounded and moves with the predicted mass") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + rng() % 3, m = 1 + rng() % 20;
    std::vector<double> p(k * m), g(k * m);
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = u(rng);
      g[i] = u(rng) < 0.5 ? 1.0 : 0.0;
    }
    const double d = dice_clip_loss(TD({k, m}, p), TD({k, m}, g)).item();
    CHECK(d >= 0.0);
    CHECK(d <= static_cast<double>(k));
  }
  // Two pixels, object on pixel 0: shifting mass onto it lowers the loss.
  double previous = 2;
  for (int i = 0; i <= 10; ++i) {
    const double a = 0.1 * i;
    const double d = dice_clip_loss(TD({1, 2}, {a, 1 - a}), TD({1, 2}, {1, 0})).item();
    CHECK(d < previous);
    previous = d;
  }
}

TEST_CASE("bootstrapped cross-entropy") {
  // Per-pixel losses 0.1 .. 0.4 on label 1.
  std::vector<double> probs(8);
  const double losses[] = {0.3, 0.1, 0.4, 0.2};
  for (std::size_t i = 0; i < 4; ++i) {
    probs[4 + i] = std::exp(-losses[i]);
    probs[i] = 1 - probs[4 + i];
  }
  const TD p({2, 4}, probs);
  const std::vector<std::uint8_t> labels(4, 1);
  CHECK(bootstrap_ce_loss(p, labels, 0.5, 10, 5).item() == doctest::Approx(0.35).epsilon(1e-9));
  CHECK(bootstrap_ce_loss(p, labels, 0.5, 4, 5).item() == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(bootstrap_ce_loss(p, labels, 1.0, 10, 5).item() == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(bootstrap_ce_loss(p, labels, 0.01, 10, 5).item() == doctest::Approx(0.4).epsilon(1e-9));
}

TEST_CASE("total loss composition") {
  TrainConfig cfg;
  // K=1, L=1, 4 pixels; labels 1 1 0 0.
  const std::vector<std::uint8_t> labels{1, 1, 0, 0};
  const TD perfect({2, 1, 2, 2}, {0, 0, 1, 1, 1, 1, 0, 0});
  const auto ok = total_loss(perfect, labels, cfg, 0, 10);
  CHECK(ok.total.item() == doctest::Approx(0.0).epsilon(1e-4));

  const TD wrong({2, 1, 2, 2}, {0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5});
  const auto l = total_loss(wrong, labels, cfg, 0, 10);
  CHECK(l.image.item() == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  CHECK(l.clip.item() == doctest::Approx(0.5).epsilon(1e-5));
  CHECK(l.total.item() == doctest::Approx(l.clip.item() + l.image.item()));

  cfg.clip_loss_weight = 2;
  cfg.image_loss_weight = 0.5;
  CHECK(total_loss(wrong, labels, cfg, 0, 10).total.item() ==
        doctest::Approx(2 * l.clip.item() + 0.5 * l.image.item()));
  cfg.frame_wise = true;
  CHECK(total_loss(wrong, labels, cfg, 0, 10).total.item() == doctest::Approx(0.5 * l.image.item()));
}

TEST_CASE("gap curriculum") {
  TrainConfig cfg;
  std::size_t peak = 0;
  for (std::size_t s = 0; s < 1000; ++s) peak = std::max(peak, scheduled_inter_gap(cfg, s, 1000));
  CHECK(peak == 15);
  CHECK(scheduled_inter_gap(cfg, 0, 1000) == 5);
  CHECK(scheduled_inter_gap(cfg, 999, 1000) == 5);
  CHECK(scheduled_inter_gap(cfg, 0, 1) == 5);
}

TEST_CASE("training samples satisfy the spacing invariants") {
  TrainConfig cfg;
  std::mt19937_64 rng(43);
  const std::size_t total = 1000;
  std::size_t reductions = 0;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t step = rng() % total, n = 1 + rng() % 3, len = 2 * n + 1 + rng() % 40;
    const auto s = sample_training_example(len, n, cfg, step, total, rng, &reductions);
    const auto idx = s.indices();
    REQUIRE(idx.size() == 2 * n + 1);
    REQUIRE(s.clip1.size() == n);
    REQUIRE(s.clip2.size() == n);
    const std::size_t gap = scheduled_inter_gap(cfg, step, total);
    for (std::size_t j = 1; j < idx.size(); ++j) CHECK(idx[j] > idx[j - 1]);
    CHECK(idx.back() < len);
    CHECK(s.clip1.front() - s.ref <= gap);
    CHECK(s.clip2.front() - s.clip1.back() <= gap);
    for (std::size_t j = 1; j < n; ++j) {
      CHECK(s.clip1[j] - s.clip1[j - 1] <= cfg.intra_gap_max);
      CHECK(s.clip2[j] - s.clip2[j - 1] <= cfg.intra_gap_max);
    }
  }
  // Minimal-length sequences force the limits down.
  CHECK(reductions > 0);
  const auto tight = sample_training_example(7, 3, cfg, 500, 1000, rng);
  CHECK(tight.indices() == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6});
  CHECK_THROWS_AS(sample_training_example(6, 3, cfg, 0, 10, rng), std::invalid_argument);
}

TEST_CASE("optimizer") {
  for (const auto kind : {OptimizerKind::adam, OptimizerKind::sgd}) {
    TrainConfig cfg;
    cfg.optimizer = kind;
    cfg.learning_rate = 0.1;
    std::vector<Param<double>> params{{"a", TD({2}, {1.0, -1.0})}, {"b", TD({1}, {3.0})}};
    for (auto& q : params) q.value.set_requires_grad(true);
    Optimizer<double> opt(params, cfg);
    {
      GradTape tape;
      TapeScope scope(tape);
      tape.backward(sum(mul(params[0].value, params[0].value)));
    }
    opt.step();
    CHECK(std::abs(params[0].value.data()[0]) < 1.0);
    CHECK(std::abs(params[0].value.data()[1]) < 1.0);
    CHECK(params[1].value.data()[0] == 3.0);
    CHECK(!params[0].value.has_grad());
  }
}

TEST_CASE("training step mechanics") {
  const PipelineConfig cfg = tiny_config();
  SynthConfig data = cfg.data;
  data.seed = 3;
  const VideoSequence seq = generate_sequence(data);
  Model<double> model(cfg, 44);
  TrainConfig train = cfg.train;
  train.learning_rate = 2e-4;
  Trainer<double> trainer(model, train);
  TrainingSample sample{0, {2, 3, 4}, {6, 7, 9}};

  const StepMetrics m = trainer.video_loss(seq, sample, 0, 100, false);
  CHECK(m.memory_frames_second_clip == 2);
  CHECK(m.total == doctest::Approx(m.clip_loss + m.image_loss));
  for (const auto& p : model.parameters()) CHECK(!p.value.has_grad());
  CHECK_THROWS(trainer.video_loss(seq, TrainingSample{3, {2, 4, 5}, {6, 7, 8}}, 0, 100, false));

  // Fixed sample before the bootstrap warm-up: the loss decreases every step.
  double previous = m.total;
  for (int step = 0; step < 50; ++step) {
    const StepMetrics s = trainer.train_step(seq, sample, 0, 100);
    CHECK(s.total <= previous);
    previous = s.total;
  }
  CHECK(trainer.video_loss(seq, sample, 0, 100, false).total < m.total);
}

TEST_CASE("frame-wise scheme uses the image loss only") {
  PipelineConfig cfg = tiny_config();
  cfg.train.frame_wise = true;
  cfg.train.clip_frames = 1;
  SynthConfig data = cfg.data;
  data.seed = 4;
  const VideoSequence seq = generate_sequence(data);
  Model<double> model(cfg, 45);
  Trainer<double> trainer(model, cfg.train);
  const StepMetrics m = trainer.video_loss(seq, TrainingSample{0, {2}, {4}}, 0, 100, false);
  CHECK(m.total == doctest::Approx(m.image_loss));
  CHECK(m.memory_frames_second_clip == 2);
}

TEST_CASE("training is deterministic and logs metrics") {
  PipelineConfig cfg = tiny_config();
  cfg.train.pretrain_steps = 3;
  cfg.train.steps = 3;
  const auto videos = generate_dataset(cfg.data, 2, 5);
  const auto dir = std::filesystem::temp_directory_path() / "clipvos_test_training";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  std::vector<std::string> logs;
  for (int run = 0; run < 2; ++run) {
    Model<float> model(cfg, cfg.seed);
    TrainLoopOptions opts;
    opts.metrics_csv = dir / ("run" + std::to_string(run) + ".csv");
    std::size_t calls = 0;
    opts.on_step = [&](const StepMetrics&) { ++calls; };
    pretrain(model, cfg.train, videos, opts);
    finetune(model, cfg.train, videos, opts);
    CHECK(calls == 6);
    logs.push_back(slurp(opts.metrics_csv));
  }
  CHECK(logs[0] == logs[1]);
  CHECK(logs[0].rfind("step,L_clip,L_image,total\n", 0) == 0);
  CHECK(std::count(logs[0].begin(), logs[0].end(), '\n') == 7);
}
