#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "clipvos/eval.hpp"
#include "clipvos/grad_suite.hpp"
#include "clipvos/pipeline.hpp"
#include "clipvos/training.hpp"

namespace fs = std::filesystem;
using namespace clipvos;

namespace {

struct GlobalFlags {
  std::string config;
  std::string clip_length;
  std::optional<std::size_t> segment_length;
  bool no_icr = false;
  bool no_pmm = false;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string out = ".";
  bool frame_wise = false;
};

std::vector<std::size_t> parse_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != item.size() || v == 0) throw CLI::ValidationError("--clip-length", "bad value '" + item + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw CLI::ValidationError("--clip-length", "empty list");
  return out;
}

PipelineConfig resolve_config(const GlobalFlags& f, bool allow_list) {
  PipelineConfig cfg = f.preset.empty() ? desk_preset() : preset_by_name(f.preset);
  if (!f.config.empty()) cfg = load_config(f.config, cfg);
  if (!f.clip_length.empty()) {
    const auto lengths = parse_list(f.clip_length);
    if (lengths.size() > 1 && !allow_list) {
      throw CLI::ValidationError("--clip-length", "a list is only accepted by bench");
    }
    cfg.clip_length = lengths.front();
  }
  if (f.segment_length) cfg.pmm.segment_length = *f.segment_length;
  if (f.no_icr) cfg.icr.enabled = false;
  if (f.no_pmm) cfg.pmm.enabled = false;
  if (f.seed) {
    cfg.seed = *f.seed;
    cfg.train.seed = *f.seed;
  }
  if (f.threads) cfg.threads = *f.threads;
  if (f.frame_wise) cfg.train.frame_wise = true;
  cfg.validate();
  set_compute_threads(effective_threads(cfg));
  return cfg;
}

TrainLoopOptions loop_options(const fs::path& csv) {
  TrainLoopOptions o;
  o.metrics_csv = csv;
  o.log_every = 100;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"clipvos: clip-wise memory video object segmentation"};
  app.require_subcommand(1);
  GlobalFlags g;
  app.add_option("--config", g.config, "Key-value config file")->check(CLI::ExistingFile);
  app.add_option("--clip-length", g.clip_length, "Clip length L (bench accepts a comma list)");
  app.add_option("--segment-length", g.segment_length, "Progressive matching segment length F");
  app.add_flag("--no-icr", g.no_icr, "Disable intra-clip refinement");
  app.add_flag("--no-pmm", g.no_pmm, "Disable progressive memory matching");
  app.add_option("--preset", g.preset, "Model preset")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--seed", g.seed, "Seed for model init, training and data");
  app.add_option("--threads", g.threads, "Worker threads");
  app.add_option("--out", g.out, "Output directory");
  app.add_flag("--frame-wise-training", g.frame_wise, "Train frame by frame with image loss only");
  app.fallthrough();

  auto* gen = app.add_subcommand("gen-data", "Generate synthetic train/val sequences");
  std::size_t n_train = 32, n_val = 8;
  gen->add_option("--train", n_train, "Training sequences")->capture_default_str();
  gen->add_option("--val", n_val, "Held-out sequences")->capture_default_str();

  auto* pre = app.add_subcommand("pretrain", "Pretrain on deformed stills");
  std::string data_dir;
  std::optional<std::size_t> steps;
  pre->add_option("--data", data_dir, "Directory of training sequences")->required();
  pre->add_option("--steps", steps, "Override train.pretrain_steps");

  auto* train = app.add_subcommand("train", "Fine-tune on video clips");
  std::string init;
  train->add_option("--data", data_dir, "Directory of training sequences")->required();
  train->add_option("--init", init, "Checkpoint to start from")->check(CLI::ExistingFile);
  train->add_option("--steps", steps, "Override train.steps");

  auto* infer = app.add_subcommand("infer", "Segment one sequence");
  std::string model_path, sequence_dir;
  infer->add_option("--model", model_path, "Checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("--sequence", sequence_dir, "Sequence directory (frame 0 mask is used)")->required();

  auto* ev = app.add_subcommand("eval", "Score predicted sequences against ground truth");
  std::string pred_dir, gt_dir;
  ev->add_option("--pred", pred_dir, "Predicted sequence or dataset directory")->required();
  ev->add_option("--gt", gt_dir, "Ground-truth sequence or dataset directory")->required();

  auto* bench = app.add_subcommand("bench", "FPS and J&F over clip lengths");
  std::size_t repeats = 3;
  bench->add_option("--model", model_path, "Checkpoint")->required()->check(CLI::ExistingFile);
  bench->add_option("--data", data_dir, "Directory of evaluation sequences")->required();
  bench->add_option("--repeats", repeats, "Timed runs per clip length")->capture_default_str();

  auto* grad = app.add_subcommand("grad-check", "Finite-difference gradient checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    const fs::path out = g.out;
    if (*gen) {
      const PipelineConfig cfg = resolve_config(g, false);
      save_dataset(generate_dataset(cfg.data, n_train, cfg.data.seed), out / "train");
      save_dataset(generate_dataset(cfg.data, n_val, cfg.data.seed + 100000), out / "val");
      std::printf("wrote %zu train and %zu val sequences to %s\n", n_train, n_val, out.c_str());
    } else if (*pre) {
      PipelineConfig cfg = resolve_config(g, false);
      if (steps) cfg.train.pretrain_steps = *steps;
      Model<float> model(cfg, cfg.seed);
      fs::create_directories(out);
      pretrain(model, cfg.train, load_dataset(data_dir), loop_options(out / "metrics_pretrain.csv"));
      save_checkpoint(model, out / "pretrain.bin");
      std::printf("saved %s\n", (out / "pretrain.bin").c_str());
    } else if (*train) {
      PipelineConfig cfg = resolve_config(g, false);
      if (steps) cfg.train.steps = *steps;
      std::unique_ptr<Model<float>> model =
          init.empty() ? std::make_unique<Model<float>>(cfg, cfg.seed) : load_checkpoint(init, cfg);
      fs::create_directories(out);
      finetune(*model, cfg.train, load_dataset(data_dir), loop_options(out / "metrics_train.csv"));
      save_checkpoint(*model, out / "model.bin");
      std::printf("saved %s\n", (out / "model.bin").c_str());
    } else if (*infer) {
      const PipelineConfig cfg = resolve_config(g, false);
      const auto model = load_checkpoint(model_path, cfg);
      VideoSequence seq = load_sequence(sequence_dir);
      InferenceStats stats;
      seq.masks = run_inference(*model, seq, seq.masks.at(0), cfg, &stats);
      save_sequence(seq, out);
      std::printf("%zu frames, %zu clips, wrote %s\n", seq.length(), stats.clips, out.c_str());
    } else if (*ev) {
      const bool dataset = !fs::exists(fs::path(gt_dir) / "frames");
      const auto preds = dataset ? load_dataset(pred_dir) : std::vector<VideoSequence>{load_sequence(pred_dir)};
      const auto gts = dataset ? load_dataset(gt_dir) : std::vector<VideoSequence>{load_sequence(gt_dir)};
      if (preds.size() != gts.size()) throw std::runtime_error("eval: prediction and ground-truth counts differ");
      std::vector<std::vector<ObjectScore>> scores;
      for (std::size_t i = 0; i < gts.size(); ++i) scores.push_back(evaluate_sequence(preds[i].masks, gts[i]));
      const JFScores s = jf_overall(scores);
      std::printf("J %.4f  F %.4f  J&F %.4f\n", s.j, s.f, s.jf);
    } else if (*bench) {
      const PipelineConfig cfg = resolve_config(g, true);
      const auto lengths = g.clip_length.empty() ? std::vector<std::size_t>{1, 5, 10, 15} : parse_list(g.clip_length);
      const auto model = load_checkpoint(model_path, cfg);
      const auto rows = benchmark_fps(*model, load_dataset(data_dir), lengths, cfg, repeats);
      fs::create_directories(out);
      write_benchmark_csv(rows, out / "bench.csv");
      for (const auto& r : rows) {
        std::printf("L=%zu F=%zu threads=%zu fps=%.2f J&F=%.4f\n", r.clip_length, r.segment_length, r.threads, r.fps,
                    r.scores.jf);
      }
    } else if (*grad) {
      bool ok = true;
      auto reports = check_core_op_gradients();
      for (auto& r : check_model_gradients()) reports.push_back(std::move(r));
      for (const auto& r : reports) {
        std::printf("%-24s %s  max rel err %.3g (%zu entries, %zu skipped at kinks)\n", r.name.c_str(),
                    r.report.passed ? "ok  " : "FAIL", r.report.max_rel_error, r.report.entries_checked,
                    r.report.entries_skipped);
        ok = ok && r.report.passed;
      }
      return ok ? 0 : 2;
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << "\n" << app.help();
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
