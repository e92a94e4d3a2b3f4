#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "clipvos/eval.hpp"
#include "clipvos/pipeline.hpp"

using namespace clipvos;
namespace fs = std::filesystem;

namespace {

PipelineConfig small_config() {
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
  cfg.data.length = 11;
  cfg.data.max_objects = 2;
  cfg.data.min_objects = 2;
  cfg.validate();
  return cfg;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CLIPVOS_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "clipvos_test_pipeline" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("clip scheduling and memory growth") {
  const PipelineConfig base = small_config();
  const Model<float> model(base, 3);
  SynthConfig data = base.data;
  data.seed = 2;
  const VideoSequence seq = generate_sequence(data);
  const std::size_t t = seq.length();

  for (const std::size_t l : {std::size_t{1}, std::size_t{3}, std::size_t{5}, t - 1, t + 4}) {
    PipelineConfig cfg = base;
    cfg.clip_length = l;
    InferenceStats stats;
    const auto masks = run_inference(model, seq, seq.masks[0], cfg, &stats);
    REQUIRE(masks.size() == t);
    CHECK(masks[0] == seq.masks[0]);
    const std::size_t clips = (t - 1 + l - 1) / l;
    CHECK(stats.clips == clips);
    CHECK(stats.permanent_frames == 1 + clips);
    for (const auto& m : masks) {
      for (const auto v : m) CHECK(v <= 2);
    }
  }
}

TEST_CASE("degenerate sequences and inputs") {
  const PipelineConfig cfg = small_config();
  const Model<float> model(cfg, 4);
  VideoSequence one = generate_sequence(cfg.data);
  one.frames.resize(1);
  one.masks.resize(1);
  InferenceStats stats;
  const auto out = run_inference(model, one, one.masks[0], cfg, &stats);
  REQUIRE(out.size() == 1);
  CHECK(out[0] == one.masks[0]);
  CHECK(stats.clips == 0);

  const VideoSequence seq = generate_sequence(cfg.data);
  CHECK_THROWS(run_inference(model, seq, Bytes{}, cfg));
  PipelineConfig bad = cfg;
  bad.clip_length = 0;
  CHECK_THROWS(run_inference(model, seq, seq.masks[0], bad));
}

TEST_CASE("one checkpoint runs under any clip length and inference is repeatable") {
  PipelineConfig cfg = small_config();
  const Model<float> model(cfg, 5);
  const VideoSequence seq = generate_sequence(cfg.data);
  for (const std::size_t l : {1, 2, 5, 10}) {
    cfg.clip_length = l;
    for (const bool pmm : {false, true}) {
      cfg.pmm.enabled = pmm;
      cfg.pmm.segment_length = 2;
      const auto a = run_inference(model, seq, seq.masks[0], cfg);
      const auto b = run_inference(model, seq, seq.masks[0], cfg);
      CHECK(a == b);
    }
  }
}

TEST_CASE("checkpoints restore the architecture") {
  PipelineConfig cfg = small_config();
  cfg.icr.enabled = false;
  const Model<float> model(cfg, 6);
  const fs::path path = temp_dir("ckpt") / "m.bin";
  save_checkpoint(model, path);
  CHECK(fs::exists(path.string() + ".ini"));
  const auto loaded = load_checkpoint(path, desk_preset());
  CHECK(!loaded->has_icr());
  CHECK(loaded->config().encoder.value_channels == 4);
  const VideoSequence seq = generate_sequence(cfg.data);
  CHECK(run_inference(model, seq, seq.masks[0], cfg) == run_inference(*loaded, seq, seq.masks[0], cfg));
}

TEST_CASE("benchmark rows and CSV") {
  const PipelineConfig cfg = small_config();
  const Model<float> model(cfg, 7);
  const auto seqs = generate_dataset(cfg.data, 2, 30);
  const auto rows = benchmark_fps(model, seqs, {1, 5}, cfg, 1);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].clip_length == 1);
  CHECK(rows[1].clip_length == 5);
  CHECK(rows[1].segment_length == cfg.pmm.segment_length);
  for (const auto& r : rows) {
    CHECK(r.fps > 0);
    CHECK(r.threads >= 1);
    CHECK(r.scores.jf >= 0);
    CHECK(r.scores.jf <= 1);
  }
  const fs::path csv = temp_dir("bench") / "bench.csv";
  write_benchmark_csv(rows, csv);
  std::ifstream in(csv);
  std::string header, line;
  std::getline(in, header);
  CHECK(header.find("threads") != std::string::npos);
  std::size_t n = 0;
  while (std::getline(in, line)) n += !line.empty();
  CHECK(n == 2);
  CHECK_THROWS(benchmark_fps(model, {}, {1}, cfg, 1));
}

TEST_CASE("command line exit codes") {
  const fs::path dir = temp_dir("cli");
  CHECK(run_cli("") == 1);
  CHECK(run_cli("--bogus gen-data") == 1);
  CHECK(run_cli("gen-data --preset huge") == 1);
  CHECK(run_cli("infer --clip-length 5,10 --model x --sequence y") == 1);
  CHECK(run_cli("--help") == 0);

  const std::string out = "--out " + dir.string();
  // Small model and data through the CLI: config file for the widths.
  PipelineConfig cfg = small_config();
  cfg.train.pretrain_steps = 2;
  cfg.train.steps = 2;
  save_config(cfg, dir / "small.ini");
  const std::string conf = "--config " + (dir / "small.ini").string() + " ";
  REQUIRE(run_cli(conf + out + " gen-data --train 2 --val 2") == 0);
  CHECK(load_dataset(dir / "val").size() == 2);
  REQUIRE(run_cli(conf + out + " pretrain --data " + (dir / "train").string()) == 0);
  REQUIRE(run_cli(conf + out + " train --data " + (dir / "train").string() + " --init " +
                  (dir / "pretrain.bin").string()) == 0);
  const std::string model = (dir / "model.bin").string();
  const std::string seq = (dir / "val" / "000").string();
  CHECK(run_cli(conf + "--clip-length 3 --out " + (dir / "pred").string() + " infer --model " + model +
                " --sequence " + seq) == 0);
  CHECK(load_sequence(dir / "pred").length() == load_sequence(seq).length());
  CHECK(run_cli("eval --pred " + (dir / "pred").string() + " --gt " + seq) == 0);
  CHECK(run_cli(conf + out + " --clip-length 1,3 bench --repeats 1 --model " + model + " --data " +
                (dir / "val").string()) == 0);
  CHECK(fs::exists(dir / "bench.csv"));
  CHECK(run_cli("infer --model " + model + " --sequence " + (dir / "missing").string()) == 2);
}
