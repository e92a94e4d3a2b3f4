// End-to-end acceptance run: one PASS/FAIL line per criterion.
//
//   clipvos_acceptance [--work DIR] [--only 1,2,...] [--threads N]
//
// Criteria 7-9 train two desk models (with and without refinement) from
// scratch, which takes most of the runtime.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "clipvos/eval.hpp"
#include "clipvos/grad_suite.hpp"
#include "clipvos/pipeline.hpp"
#include "clipvos/training.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace clipvos;

namespace {

// Tolerances and limits, pinned.
constexpr double kReadTol = 1e-5;
constexpr double kReadSeconds = 5.0;
constexpr double kRowSumTol = 1e-6;
constexpr double kPmmTol = 1e-6;
constexpr double kIcrTol = 1e-5;
constexpr double kGradSeconds = 120.0;
constexpr double kDiceTol = 1e-4;
constexpr double kAggregateTol = 1e-6;
// Held-out J&F floor at L=5: the reference machine measured 0.874, frozen
// here minus 0.05 slack (never below the required 0.75).
constexpr double kJfFloor = 0.82;
constexpr double kTrainMinutes = 30.0;
constexpr double kFpsRatio = 1.5;
constexpr std::size_t kTrainSequences = 32;
constexpr std::size_t kValSequences = 8;
constexpr std::size_t kDeterminismSteps = 20;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome criterion_read() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> dim(1, 64), chan(1, 16);
  const auto start = Clock::now();
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = dim(rng), m = dim(rng), ck = chan(rng), cv = chan(rng);
    const auto kq = oracle::random_tensor({n, ck}, rng).cast<float>();
    const auto km = oracle::random_tensor({m, ck}, rng).cast<float>();
    const auto vm = oracle::random_tensor({m, cv}, rng).cast<float>();
    const auto got = read(kq, km, vm);
    const auto expect = oracle::readout(kq, km, vm);
    for (std::size_t i = 0; i < got.numel(); ++i) {
      worst = std::max(worst, std::abs(static_cast<double>(got.data()[i]) - expect.data()[i]));
    }
  }
  const double secs = seconds_since(start);
  return {worst <= kReadTol && secs < kReadSeconds,
          fmt("100 instances, max abs err %.3g (tol %g), %.2fs (limit %gs)", worst, kReadTol, secs, kReadSeconds)};
}

Outcome criterion_affinity() {
  std::mt19937_64 rng(102);
  std::uniform_int_distribution<std::size_t> dim(1, 48);
  double worst_sum = 0;
  std::size_t violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = dim(rng), m = dim(rng);
    const double scale = std::uniform_real_distribution<double>(0.1, 20)(rng);
    const auto sim = oracle::random_tensor({n, m}, rng, -scale, 0).cast<float>();
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, m + 4)(rng);
    const auto full = affinity(sim);
    const auto filtered = affinity(sim, k);
    const auto one = affinity(sim, 1);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0, s_k = 0;
      std::size_t nonzero = 0, arg = 0;
      for (std::size_t j = 0; j < m; ++j) {
        const float a = full.data()[i * m + j], b = filtered.data()[i * m + j];
        violations += a < 0 || b < 0;
        s += a;
        s_k += b;
        nonzero += b != 0;
        if (sim.data()[i * m + j] > sim.data()[i * m + arg]) arg = j;
      }
      worst_sum = std::max({worst_sum, std::abs(s - 1), std::abs(s_k - 1)});
      violations += nonzero > k;
      for (std::size_t j = 0; j < m; ++j) violations += one.data()[i * m + j] != (j == arg ? 1.0f : 0.0f);
    }
    if (k >= m) {
      for (std::size_t i = 0; i < full.numel(); ++i) violations += full.data()[i] != filtered.data()[i];
    }
  }
  return {worst_sum <= kRowSumTol && violations == 0,
          fmt("1000 cases, max |row sum - 1| %.3g (tol %g), %zu violations", worst_sum, kRowSumTol, violations)};
}

Outcome criterion_pmm() {
  std::mt19937_64 rng(103);
  const std::size_t hw = 12, ck = 4, cv = 6;
  std::size_t violations = 0;
  double worst = 0;
  for (int trial = 0; trial < 40; ++trial) {
    MemoryBank<double> bank;
    const std::size_t mem = 1 + trial % 3;
    for (std::size_t i = 0; i < mem; ++i) {
      bank.append(oracle::random_tensor({hw, ck}, rng, -2, 2), oracle::random_tensor({hw, cv}, rng),
                  MemoryTier::permanent);
    }
    const auto keys = bank.keys(), values = bank.values();
    const std::optional<std::size_t> top_k = trial % 2 ? std::optional<std::size_t>(5) : std::nullopt;
    // Several clips in a row, each checked against the post-state invariant.
    for (const std::size_t len : {std::size_t{4}, std::size_t{1 + rng() % 9}, std::size_t{4}}) {
      const auto kq = oracle::random_tensor({len * hw, ck}, rng, -2, 2);
      const auto plain = read_bank(kq, bank, top_k);
      const auto same = progressive_read(kq, len, bank, {true, len}, top_k);
      for (std::size_t i = 0; i < plain.numel(); ++i) violations += plain.data()[i] != same.data()[i];
      if (len == 4) {
        const auto prog = progressive_read(kq, 4, bank, {true, 2}, top_k);
        const auto expect = oracle::sequential_pmm(kq, 4, keys, values, 2, top_k);
        for (std::size_t i = 0; i < prog.numel(); ++i) worst = std::max(worst, std::abs(prog.data()[i] - expect.data()[i]));
      }
      violations += bank.temporary_frames() != 0 || bank.permanent_frames() != mem;
      const auto k_after = bank.keys(), v_after = bank.values();
      for (std::size_t i = 0; i < keys.numel(); ++i) violations += keys.data()[i] != k_after.data()[i];
      for (std::size_t i = 0; i < values.numel(); ++i) violations += values.data()[i] != v_after.data()[i];
    }
  }
  return {worst <= kPmmTol && violations == 0,
          fmt("40 banks x 3 clips, L=4 F=2 max err %.3g (tol %g), %zu bitwise/post-state violations", worst, kPmmTol,
              violations)};
}

Outcome criterion_icr() {
  std::mt19937_64 rng(104);
  double worst = 0;
  std::size_t leaks = 0, roundtrip = 0, insensitive = 0;
  for (int trial = 0; trial < 6; ++trial) {
    IcrConfig cfg;
    cfg.width = 4 + 2 * static_cast<std::size_t>(trial % 3);
    ParamRegistry<double> reg(200 + trial);
    const std::size_t ck = 3 + trial % 2, cv = 5;
    IcrLayer<double> layer(reg, "l", cfg, cv, ck);
    for (double& w : layer.out_proj.mutable_data()) w = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    const ClipGeometry g{1 + static_cast<std::size_t>(trial % 3), 3 + static_cast<std::size_t>(trial % 2), 4};
    const std::size_t k_obj = 1 + trial % 2;
    const auto vq = oracle::random_tensor({g.tokens(), k_obj, cv}, rng);
    const auto k = oracle::random_tensor({g.tokens(), ck}, rng);
    const auto out = layer(vq, k, make_window_layout(g, {g.frames, g.height, g.width}, {0, 0, 0}));
    const auto expect = oracle::dense_icr_layer(layer, vq, k, cfg.width);
    for (std::size_t i = 0; i < out.numel(); ++i) worst = std::max(worst, std::abs(out.data()[i] - expect.data()[i]));

    // Perturb one token; only its own window may change.
    const ClipGeometry big{4, 6, 6};
    const auto layout = make_window_layout(big, {2, 3, 3}, {0, 0, 0});
    const auto owner = oracle::window_of(layout);
    const auto bq = oracle::random_tensor({big.tokens(), k_obj, cv}, rng);
    const auto bk = oracle::random_tensor({big.tokens(), ck}, rng);
    const auto base = layer(bq, bk, layout);
    const std::size_t token = rng() % big.tokens(), row = k_obj * cv;
    auto bq2 = bq.clone();
    auto bk2 = bk.clone();
    for (std::size_t c = 0; c < row; ++c) bq2.mutable_data()[token * row + c] += 0.9;
    for (std::size_t c = 0; c < ck; ++c) bk2.mutable_data()[token * ck + c] -= 0.7;
    const auto moved = layer(bq2, bk2, layout);
    std::size_t changed = 0;
    for (std::size_t t = 0; t < big.tokens(); ++t) {
      bool differs = false;
      for (std::size_t c = 0; c < row; ++c) differs = differs || moved.data()[t * row + c] != base.data()[t * row + c];
      if (owner[t] != owner[token]) leaks += differs;
      changed += differs && owner[t] == owner[token];
    }
    insensitive += changed < 2;

    for (const Extent3 shift : {Extent3{0, 0, 0}, Extent3{1, 1, 1}, Extent3{1, 2, 0}}) {
      const ClipGeometry rg{3, 5 + static_cast<std::size_t>(trial), 7};
      const auto x = oracle::random_tensor({rg.frames, rg.height, rg.width, 3}, rng);
      const Extent3 window{2, 3, 4};
      const auto back = window_reverse(window_partition(x, window, shift).windows, rg, window, shift);
      for (std::size_t i = 0; i < x.numel(); ++i) roundtrip += back.data()[i] != x.data()[i];
    }
  }
  return {worst <= kIcrTol && leaks == 0 && insensitive == 0 && roundtrip == 0,
          fmt("dense max err %.3g (tol %g), %zu cross-window leaks, %zu round-trip mismatches", worst, kIcrTol, leaks,
              roundtrip)};
}

Outcome criterion_gradients() {
  const auto start = Clock::now();
  GradCheckOptions options;
  options.eps = 1e-5;
  options.tol = 1e-4;
  auto reports = check_core_op_gradients(options);
  for (auto& r : check_model_gradients(options)) reports.push_back(std::move(r));
  const double secs = seconds_since(start);
  double worst = 0;
  std::string failed;
  for (const auto& r : reports) {
    worst = std::max(worst, r.report.max_rel_error);
    if (!r.report.passed) failed += " " + r.name;
  }
  return {failed.empty() && secs < kGradSeconds,
          fmt("%zu checks, max rel err %.3g (tol 1e-4), %.1fs (limit %gs)%s%s", reports.size(), worst, secs,
              kGradSeconds, failed.empty() ? "" : ", failed:", failed.c_str())};
}

Outcome criterion_loss_bounds() {
  std::mt19937_64 rng(106);
  std::uniform_real_distribution<double> u(0, 1);
  std::size_t violations = 0;
  double worst_perfect = 0, worst_disjoint = 0, worst_agg = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t k = 1 + rng() % 3, m = 2 + rng() % 30;
    std::vector<double> p(k * m), g(k * m), anti(k * m);
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = u(rng);
      g[i] = i % m == 0 || u(rng) < 0.4 ? 1.0 : 0.0;
      anti[i] = 1 - g[i];
    }
    const double d = dice_clip_loss(Tensor<double>({k, m}, p), Tensor<double>({k, m}, g)).item();
    violations += d < 0 || d > static_cast<double>(k);
    worst_perfect = std::max(worst_perfect, dice_clip_loss(Tensor<double>({k, m}, g), Tensor<double>({k, m}, g)).item());
    // A mask of all ones has no disjoint complement; only score proper subsets.
    bool proper = true;
    for (std::size_t o = 0; o < k; ++o) {
      proper = proper && std::any_of(anti.begin() + o * m, anti.begin() + (o + 1) * m, [](double x) { return x > 0; });
    }
    if (proper) {
      const double dis = dice_clip_loss(Tensor<double>({k, m}, anti), Tensor<double>({k, m}, g)).item();
      worst_disjoint = std::max(worst_disjoint, std::abs(dis - static_cast<double>(k)));
    }

    const auto probs = soft_aggregate(oracle::random_tensor({k, 3, m}, rng, 0, 1).cast<float>());
    for (std::size_t px = 0; px < 3 * m; ++px) {
      double s = 0;
      for (std::size_t c = 0; c <= k; ++c) {
        const float v = probs.data()[c * 3 * m + px];
        violations += v < 0;
        s += v;
      }
      worst_agg = std::max(worst_agg, std::abs(s - 1));
    }
  }
  return {violations == 0 && worst_perfect <= kDiceTol && worst_disjoint <= kDiceTol && worst_agg <= kAggregateTol,
          fmt("perfect max %.3g, |disjoint - K| max %.3g (tol %g), aggregation |sum - 1| max %.3g (tol %g), %zu "
              "bound violations",
              worst_perfect, worst_disjoint, kDiceTol, worst_agg, kAggregateTol, violations)};
}

struct Trained {
  std::unique_ptr<Model<float>> model;
  double minutes = 0;
};

Trained train_model(const PipelineConfig& cfg, const std::vector<VideoSequence>& train, const fs::path& dir) {
  fs::create_directories(dir);
  fs::remove(dir / "metrics.csv");
  TrainLoopOptions opts;
  opts.metrics_csv = dir / "metrics.csv";
  opts.log_every = 500;
  const auto start = Clock::now();
  auto model = std::make_unique<Model<float>>(cfg, cfg.seed);
  pretrain(*model, cfg.train, train, opts);
  finetune(*model, cfg.train, train, opts);
  Trained out{std::move(model), seconds_since(start) / 60};
  save_checkpoint(*out.model, dir / "model.bin");
  return out;
}

double held_out_jf(const Model<float>& model, const std::vector<VideoSequence>& val, PipelineConfig cfg,
                   std::size_t clip_length, bool pmm) {
  cfg.clip_length = clip_length;
  cfg.pmm.enabled = pmm;
  std::vector<std::vector<ObjectScore>> scores;
  for (const auto& seq : val) scores.push_back(evaluate_sequence(run_inference(model, seq, seq.masks[0], cfg), seq));
  return jf_overall(scores).jf;
}

struct Stage {
  PipelineConfig cfg;
  std::vector<VideoSequence> train, val;
  Trained full, no_icr;
  double data_minutes = 0;
};

Outcome criterion_learning(Stage& s, const fs::path& work) {
  const auto start = Clock::now();
  s.train = generate_dataset(s.cfg.data, kTrainSequences, s.cfg.data.seed);
  s.val = generate_dataset(s.cfg.data, kValSequences, s.cfg.data.seed + 100000);
  s.data_minutes = seconds_since(start) / 60;
  std::fprintf(stderr, "training the full model (%zu + %zu steps)\n", s.cfg.train.pretrain_steps, s.cfg.train.steps);
  s.full = train_model(s.cfg, s.train, work / "full");
  const double jf = held_out_jf(*s.full.model, s.val, s.cfg, 5, true);
  const double minutes = s.data_minutes + s.full.minutes;
  return {jf >= kJfFloor && minutes <= kTrainMinutes,
          fmt("J&F %.4f at L=5 (floor %.2f), data + training %.1f min (limit %.0f)", jf, kJfFloor, minutes,
              kTrainMinutes)};
}

Outcome criterion_ablation(Stage& s, const fs::path& work) {
  PipelineConfig plain = s.cfg;
  plain.icr.enabled = false;
  std::fprintf(stderr, "training the model without refinement\n");
  s.no_icr = train_model(plain, s.train, work / "no_icr");
  const Model<float>& a = *s.full.model;
  const Model<float>& b = *s.no_icr.model;
  const double full5 = held_out_jf(a, s.val, s.cfg, 5, true), full15 = held_out_jf(a, s.val, s.cfg, 15, true);
  const double no_pmm15 = held_out_jf(a, s.val, s.cfg, 15, false);
  const double no_icr15 = held_out_jf(b, s.val, plain, 15, true);
  const double none5 = held_out_jf(b, s.val, plain, 5, false), none15 = held_out_jf(b, s.val, plain, 15, false);
  std::ofstream(work / "ablation.csv") << "arm,L5,L15\nfull," << full5 << "," << full15 << "\npmm_off,,"
                                       << no_pmm15 << "\nicr_off,," << no_icr15 << "\nnone," << none5 << ","
                                       << none15 << "\n";
  const bool pmm_helps = full15 > no_pmm15, icr_helps = full15 > no_icr15;
  const bool degrades_less = full5 - full15 < none5 - none15;
  return {pmm_helps && icr_helps && degrades_less,
          fmt("L=15: full %.4f, PMM off %.4f, ICR off %.4f; drop L5->L15 full %.4f vs none %.4f (%.4f->%.4f)",
              full15, no_pmm15, no_icr15, full5 - full15, none5 - none15, none5, none15)};
}

Outcome criterion_throughput(Stage& s, const fs::path& work) {
  const auto rows = benchmark_fps(*s.full.model, s.val, {1, 5, 10, 15}, s.cfg, 3);
  write_benchmark_csv(rows, work / "bench.csv");
  bool monotone = true;
  std::string fps;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    fps += fmt("%s%zu:%.1f", i ? " " : "", rows[i].clip_length, rows[i].fps);
    if (i > 0 && rows[i].fps < rows[i - 1].fps) monotone = false;
  }
  const double ratio = rows.back().fps / rows.front().fps;
  return {monotone && ratio >= kFpsRatio,
          fmt("fps by L {%s}, FPS(15)/FPS(1) %.2f (min %.1f), %zu thread(s), medians of 3", fps.c_str(), ratio,
              kFpsRatio, rows.front().threads)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome criterion_determinism(const PipelineConfig& base, const fs::path& work) {
  PipelineConfig cfg = base;
  cfg.train.pretrain_steps = kDeterminismSteps;
  cfg.train.steps = kDeterminismSteps;
  const auto train = generate_dataset(cfg.data, 4, cfg.data.seed);
  const auto val = generate_dataset(cfg.data, 2, cfg.data.seed + 100000);
  std::vector<std::string> csv;
  std::vector<std::vector<Bytes>> masks;
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = work / ("determinism" + std::to_string(run));
    const Trained t = train_model(cfg, train, dir);
    csv.push_back(slurp(dir / "metrics.csv"));
    std::vector<Bytes> all;
    for (const auto& seq : val) {
      for (auto& m : run_inference(*t.model, seq, seq.masks[0], cfg)) all.push_back(std::move(m));
    }
    masks.push_back(std::move(all));
  }
  const bool same_csv = !csv[0].empty() && csv[0] == csv[1], same_masks = masks[0] == masks[1];
  return {same_csv && same_masks,
          fmt("two %zu+%zu-step runs: metrics CSV %s (%zu bytes), inference masks %s", kDeterminismSteps,
              kDeterminismSteps, same_csv ? "identical" : "DIFFER", csv[0].size(), same_masks ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Acceptance checks"};
  std::string work = "acceptance_work";
  std::string only;
  std::size_t threads = 1;
  app.add_option("--work", work, "Directory for checkpoints, metrics and benchmark output");
  app.add_option("--only", only, "Comma list of criteria to run (default all)");
  app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  {
    std::stringstream ss(only);
    std::string item;
    while (std::getline(ss, item, ',')) selected.insert(std::stoi(item));
  }
  auto wanted = [&](int c) { return selected.empty() || selected.count(c) > 0; };

  Stage stage;
  stage.cfg = desk_preset();
  stage.cfg.threads = threads;
  set_compute_threads(effective_threads(stage.cfg));
  const fs::path dir = work;
  fs::create_directories(dir);

  const std::map<int, std::function<Outcome()>> criteria = {
      {1, [] { return criterion_read(); }},
      {2, [] { return criterion_affinity(); }},
      {3, [] { return criterion_pmm(); }},
      {4, [] { return criterion_icr(); }},
      {5, [] { return criterion_gradients(); }},
      {6, [] { return criterion_loss_bounds(); }},
      {7, [&] { return criterion_learning(stage, dir); }},
      {8, [&] { return criterion_ablation(stage, dir); }},
      {9, [&] { return criterion_throughput(stage, dir); }},
      {10, [&] { return criterion_determinism(stage.cfg, dir); }},
  };
  // 8 and 9 reuse the model trained for 7.
  if ((wanted(8) || wanted(9)) && !wanted(7)) selected.insert(7);

  int failures = 0;
  for (const auto& [id, run] : criteria) {
    if (!wanted(id)) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %2d %s  %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
