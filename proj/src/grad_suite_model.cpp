#include <random>

#include "clipvos/grad_suite.hpp"
#include "clipvos/training.hpp"

namespace clipvos {

namespace {

using TD = Tensor<double>;

TD uniform(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = dist(rng);
  return TD(shape, std::move(v));
}

PipelineConfig tiny_config() {
  PipelineConfig cfg = desk_preset();
  cfg.encoder.feature_stride = 4;
  cfg.encoder.key_channels = 4;
  cfg.encoder.value_channels = 4;
  cfg.encoder.intra_key_channels = 4;
  cfg.encoder.key_stage_channels = {4, 4, 4};
  cfg.encoder.value_stage_channels = {4, 4};
  cfg.encoder.decoder_channels = {4, 4, 4};
  cfg.icr.width = 4;
  cfg.icr.num_layers = 2;
  cfg.validate();
  return cfg;
}

std::vector<TD> with_params(std::vector<TD> inputs, const std::vector<Param<double>>& params) {
  for (const auto& p : params) inputs.push_back(p.value);
  return inputs;
}

}  // namespace

std::vector<NamedGradReport> check_model_gradients(const GradCheckOptions& options) {
  std::mt19937_64 rng(options.seed);
  std::vector<NamedGradReport> out;
  GradCheckOptions sampled = options;
  if (sampled.max_entries_per_input == 0) sampled.max_entries_per_input = 12;
  sampled.skip_kinks = true;

  {
    // Two layers so the shifted variant is covered; 2 heads with position bias.
    IcrConfig icr;
    icr.num_layers = 2;
    icr.width = 4;
    icr.heads = 2;
    icr.temporal_window = 2;
    icr.spatial_window = 3;
    icr.position_bias = true;
    ParamRegistry<double> reg(options.seed);
    IntraClipRefiner<double> refiner(reg, icr, 4, 5);
    for (auto& p : reg.params()) {
      if (p.name.find("position_bias") != std::string::npos) {
        for (double& x : p.value.mutable_data()) x = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
      }
    }
    const ClipGeometry g{2, 4, 4};
    const TD w = uniform({g.tokens(), 2, 4}, rng);
    ScalarFn f = [&](const std::vector<TD>& in) { return sum(mul(refiner(in[0], in[1], g), w)); };
    out.push_back({"icr_stack", grad_check(f, with_params({uniform({g.tokens(), 2, 4}, rng),
                                                           uniform({g.tokens(), 5}, rng)}, reg.params()),
                                           sampled)});
  }

  {
    const PipelineConfig cfg = tiny_config();
    ParamRegistry<double> reg(options.seed + 1);
    KeyEncoder<double> keys(reg, cfg.encoder);
    Decoder<double> decoder(reg, cfg.encoder);
    const std::size_t objects = 2, frames = 2;
    const KeyFeatures<double> feats = [&] {
      NoGradScope no_grad;
      return keys(uniform({frames, 3, 8, 8}, rng));
    }();
    const TD w = uniform({objects * frames, 1, 8, 8}, rng);
    const std::size_t n_skips = feats.skips.size();
    ScalarFn f = [&](const std::vector<TD>& in) {
      const std::vector<TD> skips(in.begin() + 1, in.begin() + 1 + static_cast<std::ptrdiff_t>(n_skips));
      return sum(mul(decoder(in[0], skips, objects), w));
    };
    std::vector<TD> inputs{uniform({objects * frames, cfg.encoder.value_channels, 2, 2}, rng)};
    for (const auto& s : feats.skips) inputs.push_back(s.clone());
    std::vector<Param<double>> decoder_params;
    for (const auto& p : reg.params()) {
      if (p.name.rfind("decoder.", 0) == 0) decoder_params.push_back(p);
    }
    out.push_back({"decoder", grad_check(f, with_params(std::move(inputs), decoder_params), sampled)});
  }

  {
    // Reference frame with its mask, then one two-frame clip, one object.
    const PipelineConfig cfg = tiny_config();
    Model<double> model(cfg, options.seed + 2);
    TrainConfig train = cfg.train;
    const std::size_t hw = 64;
    std::vector<std::uint8_t> ref_mask(hw, 0), labels(2 * hw, 0);
    for (std::size_t y = 2; y < 6; ++y) {
      for (std::size_t x = 1; x < 5; ++x) {
        ref_mask[y * 8 + x] = 1;
        labels[y * 8 + x + 1] = 1;
        labels[hw + y * 8 + x + 2] = 1;
      }
    }
    for (const std::size_t step : {std::size_t{0}, std::size_t{100}}) {
      ScalarFn f = [&](const std::vector<TD>& in) {
        const KeyFeatures<double> feats = model.encode_key(in[0]);
        MemoryBank<double> bank;
        const auto entry = model.memory_entry(slice(in[0], 0, 0, 1), feats.slice(0, 1),
                                              one_hot_objects<double>(ref_mask, 8, 8, 1));
        bank.append(entry.key, entry.value, MemoryTier::permanent);
        InferenceOptions opts;
        opts.pmm.enabled = false;
        const auto pred = model.forward_clip(feats.slice(1, 3), bank, opts);
        return total_loss(pred.probs, labels, train, step, 100).total;
      };
      out.push_back({step == 0 ? "total_loss" : "total_loss_bootstrap",
                     grad_check(f, with_params({uniform({3, 3, 8, 8}, rng)}, model.parameters()), sampled)});
    }
  }
  return out;
}

}  // namespace clipvos
