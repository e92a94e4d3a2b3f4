#include "clipvos/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace clipvos {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("config: " + what);
}

bool is_power_of_two(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

std::string join(const std::vector<std::size_t>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::vector<std::size_t> split_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(std::stoul(item));
  }
  return out;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw std::invalid_argument("config: not a boolean: " + s);
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw std::invalid_argument("config: unknown optimizer " + s);
}

// Section/key binding table shared by load and save.
struct Binding {
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

template <typename Member>
Binding size_field(Member member) {
  return {[member](PipelineConfig& c, const std::string& v) { member(c) = std::stoul(v); },
          [member](const PipelineConfig& c) {
            return std::to_string(member(const_cast<PipelineConfig&>(c)));
          }};
}

template <typename Member>
Binding double_field(Member member) {
  return {[member](PipelineConfig& c, const std::string& v) { member(c) = std::stod(v); },
          [member](const PipelineConfig& c) {
            std::ostringstream os;
            os.precision(17);
            os << member(const_cast<PipelineConfig&>(c));
            return os.str();
          }};
}

template <typename Member>
Binding bool_field(Member member) {
  return {[member](PipelineConfig& c, const std::string& v) { member(c) = parse_bool(v); },
          [member](const PipelineConfig& c) {
            return std::string(member(const_cast<PipelineConfig&>(c)) ? "true" : "false");
          }};
}

template <typename Member>
Binding list_field(Member member) {
  return {[member](PipelineConfig& c, const std::string& v) { member(c) = split_sizes(v); },
          [member](const PipelineConfig& c) { return join(member(const_cast<PipelineConfig&>(c))); }};
}

const std::map<std::string, Binding>& bindings() {
  static const std::map<std::string, Binding> table = [] {
    std::map<std::string, Binding> t;
    t["pipeline.preset"] = {[](PipelineConfig& c, const std::string& v) { c.preset = v; },
                            [](const PipelineConfig& c) { return c.preset; }};
    t["pipeline.clip_length"] = size_field([](PipelineConfig& c) -> auto& { return c.clip_length; });
    t["pipeline.top_k"] = {
        [](PipelineConfig& c, const std::string& v) {
          const std::size_t k = std::stoul(v);
          c.top_k = k == 0 ? std::nullopt : std::optional<std::size_t>(k);
        },
        [](const PipelineConfig& c) { return std::to_string(c.top_k.value_or(0)); }};
    t["pipeline.threads"] = size_field([](PipelineConfig& c) -> auto& { return c.threads; });
    t["pipeline.seed"] = size_field([](PipelineConfig& c) -> auto& { return c.seed; });

    t["encoder.feature_stride"] = size_field([](PipelineConfig& c) -> auto& { return c.encoder.feature_stride; });
    t["encoder.key_channels"] = size_field([](PipelineConfig& c) -> auto& { return c.encoder.key_channels; });
    t["encoder.value_channels"] = size_field([](PipelineConfig& c) -> auto& { return c.encoder.value_channels; });
    t["encoder.intra_key_channels"] =
        size_field([](PipelineConfig& c) -> auto& { return c.encoder.intra_key_channels; });
    t["encoder.key_stage_channels"] =
        list_field([](PipelineConfig& c) -> auto& { return c.encoder.key_stage_channels; });
    t["encoder.value_stage_channels"] =
        list_field([](PipelineConfig& c) -> auto& { return c.encoder.value_stage_channels; });
    t["encoder.decoder_channels"] =
        list_field([](PipelineConfig& c) -> auto& { return c.encoder.decoder_channels; });
    t["encoder.use_others_mask"] = bool_field([](PipelineConfig& c) -> auto& { return c.encoder.use_others_mask; });
    t["encoder.intra_key_shares_trunk"] =
        bool_field([](PipelineConfig& c) -> auto& { return c.encoder.intra_key_shares_trunk; });

    t["icr.enabled"] = bool_field([](PipelineConfig& c) -> auto& { return c.icr.enabled; });
    t["icr.num_layers"] = size_field([](PipelineConfig& c) -> auto& { return c.icr.num_layers; });
    t["icr.width"] = size_field([](PipelineConfig& c) -> auto& { return c.icr.width; });
    t["icr.temporal_window"] = size_field([](PipelineConfig& c) -> auto& { return c.icr.temporal_window; });
    t["icr.spatial_window"] = size_field([](PipelineConfig& c) -> auto& { return c.icr.spatial_window; });
    t["icr.heads"] = size_field([](PipelineConfig& c) -> auto& { return c.icr.heads; });
    t["icr.ffn_ratio"] = size_field([](PipelineConfig& c) -> auto& { return c.icr.ffn_ratio; });
    t["icr.position_bias"] = bool_field([](PipelineConfig& c) -> auto& { return c.icr.position_bias; });

    t["pmm.enabled"] = bool_field([](PipelineConfig& c) -> auto& { return c.pmm.enabled; });
    t["pmm.segment_length"] = size_field([](PipelineConfig& c) -> auto& { return c.pmm.segment_length; });

    t["train.clip_frames"] = size_field([](PipelineConfig& c) -> auto& { return c.train.clip_frames; });
    t["train.inter_gap_start"] = size_field([](PipelineConfig& c) -> auto& { return c.train.inter_gap_start; });
    t["train.inter_gap_peak"] = size_field([](PipelineConfig& c) -> auto& { return c.train.inter_gap_peak; });
    t["train.inter_gap_end"] = size_field([](PipelineConfig& c) -> auto& { return c.train.inter_gap_end; });
    t["train.intra_gap_max"] = size_field([](PipelineConfig& c) -> auto& { return c.train.intra_gap_max; });
    t["train.bootstrap_ratio"] = double_field([](PipelineConfig& c) -> auto& { return c.train.bootstrap_ratio; });
    t["train.warmup_fraction"] = double_field([](PipelineConfig& c) -> auto& { return c.train.warmup_fraction; });
    t["train.clip_loss_weight"] = double_field([](PipelineConfig& c) -> auto& { return c.train.clip_loss_weight; });
    t["train.image_loss_weight"] = double_field([](PipelineConfig& c) -> auto& { return c.train.image_loss_weight; });
    t["train.optimizer"] = {[](PipelineConfig& c, const std::string& v) { c.train.optimizer = parse_optimizer(v); },
                            [](const PipelineConfig& c) { return to_string(c.train.optimizer); }};
    t["train.learning_rate"] = double_field([](PipelineConfig& c) -> auto& { return c.train.learning_rate; });
    t["train.momentum"] = double_field([](PipelineConfig& c) -> auto& { return c.train.momentum; });
    t["train.pretrain_steps"] = size_field([](PipelineConfig& c) -> auto& { return c.train.pretrain_steps; });
    t["train.steps"] = size_field([](PipelineConfig& c) -> auto& { return c.train.steps; });
    t["train.pretrain_frames"] = size_field([](PipelineConfig& c) -> auto& { return c.train.pretrain_frames; });
    t["train.frame_wise"] = bool_field([](PipelineConfig& c) -> auto& { return c.train.frame_wise; });
    t["train.seed"] = size_field([](PipelineConfig& c) -> auto& { return c.train.seed; });

    t["data.width"] = size_field([](PipelineConfig& c) -> auto& { return c.data.width; });
    t["data.height"] = size_field([](PipelineConfig& c) -> auto& { return c.data.height; });
    t["data.min_objects"] = size_field([](PipelineConfig& c) -> auto& { return c.data.min_objects; });
    t["data.max_objects"] = size_field([](PipelineConfig& c) -> auto& { return c.data.max_objects; });
    t["data.length"] = size_field([](PipelineConfig& c) -> auto& { return c.data.length; });
    t["data.min_size"] = double_field([](PipelineConfig& c) -> auto& { return c.data.min_size; });
    t["data.max_size"] = double_field([](PipelineConfig& c) -> auto& { return c.data.max_size; });
    t["data.max_speed"] = double_field([](PipelineConfig& c) -> auto& { return c.data.max_speed; });
    t["data.occlusion_probability"] =
        double_field([](PipelineConfig& c) -> auto& { return c.data.occlusion_probability; });
    t["data.noise"] = double_field([](PipelineConfig& c) -> auto& { return c.data.noise; });
    t["data.color_drift"] = double_field([](PipelineConfig& c) -> auto& { return c.data.color_drift; });
    t["data.seed"] = size_field([](PipelineConfig& c) -> auto& { return c.data.seed; });
    return t;
  }();
  return table;
}

}  // namespace

std::size_t EncoderConfig::downsample_stages() const {
  std::size_t n = 0;
  for (std::size_t s = feature_stride; s > 1; s >>= 1) ++n;
  return n;
}

void EncoderConfig::validate() const {
  require(is_power_of_two(feature_stride) && feature_stride >= 2,
          "encoder.feature_stride must be a power of two >= 2");
  require(key_channels >= 1 && value_channels >= 1 && intra_key_channels >= 1,
          "encoder channel widths must be >= 1");
  const std::size_t n = downsample_stages();
  require(key_stage_channels.size() == n + 1,
          "encoder.key_stage_channels needs " + std::to_string(n + 1) + " entries");
  require(value_stage_channels.size() == n,
          "encoder.value_stage_channels needs " + std::to_string(n) + " entries");
  require(decoder_channels.size() == n + 1,
          "encoder.decoder_channels needs " + std::to_string(n + 1) + " entries");
  for (auto* list : {&key_stage_channels, &value_stage_channels, &decoder_channels}) {
    for (std::size_t c : *list) require(c >= 1, "encoder stage widths must be >= 1");
  }
}

void IcrConfig::validate() const {
  require(num_layers >= 1, "icr.num_layers must be >= 1");
  require(width >= 1 && heads >= 1 && width % heads == 0, "icr.width must be divisible by icr.heads");
  require(temporal_window >= 1 && spatial_window >= 1, "icr windows must be >= 1");
  require(ffn_ratio >= 1, "icr.ffn_ratio must be >= 1");
}

void PmmConfig::validate() const { require(segment_length >= 1, "pmm.segment_length must be >= 1"); }

void TrainConfig::validate() const {
  require(clip_frames >= 1, "train.clip_frames must be >= 1");
  require(inter_gap_start >= 1 && inter_gap_peak >= 1 && inter_gap_end >= 1 && intra_gap_max >= 1,
          "train gaps must be >= 1");
  require(bootstrap_ratio > 0 && bootstrap_ratio <= 1, "train.bootstrap_ratio must be in (0, 1]");
  require(warmup_fraction >= 0 && warmup_fraction <= 1, "train.warmup_fraction must be in [0, 1]");
  require(learning_rate > 0, "train.learning_rate must be positive");
  require(momentum >= 0 && momentum < 1, "train.momentum must be in [0, 1)");
  require(pretrain_frames >= 2, "train.pretrain_frames must be >= 2");
}

void SynthConfig::validate() const {
  require(width >= 8 && height >= 8, "data resolution must be at least 8x8");
  require(min_objects >= 1 && min_objects <= max_objects && max_objects <= 3,
          "data objects must satisfy 1 <= min_objects <= max_objects <= 3");
  require(length >= 1, "data.length must be >= 1");
  require(min_size > 0 && min_size <= max_size, "data sizes must satisfy 0 < min_size <= max_size");
  require(occlusion_probability >= 0 && occlusion_probability <= 1,
          "data.occlusion_probability must be in [0, 1]");
  require(noise >= 0 && color_drift >= 0 && max_speed >= 0, "data noise, drift and speed must be >= 0");
}

void PipelineConfig::validate() const {
  require(clip_length >= 1, "pipeline.clip_length must be >= 1");
  require(!top_k || *top_k >= 1, "pipeline.top_k must be >= 1 when set");
  encoder.validate();
  icr.validate();
  pmm.validate();
  train.validate();
  data.validate();
}

PipelineConfig desk_preset() { return PipelineConfig{}; }

PipelineConfig paper_preset() {
  PipelineConfig c;
  c.preset = "paper";
  c.encoder.key_channels = 64;
  c.encoder.value_channels = 512;
  c.encoder.intra_key_channels = 256;
  c.encoder.key_stage_channels = {64, 128, 256};
  c.encoder.value_stage_channels = {64, 256};
  c.encoder.decoder_channels = {256, 128, 64};
  c.icr.width = 256;
  return c;
}

PipelineConfig preset_by_name(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "paper") return paper_preset();
  throw std::invalid_argument("config: unknown preset " + name + " (expected desk or paper)");
}

PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw std::invalid_argument("config: " + std::string(e.what()));
  }
  // A preset line resets every other field before the remaining keys apply.
  if (auto preset = tree.get_optional<std::string>("pipeline.preset")) base = preset_by_name(*preset);
  const auto& table = bindings();
  for (const auto& [section, keys] : tree) {
    if (keys.empty()) {
      throw std::invalid_argument("config: key outside a section: " + section);
    }
    for (const auto& [key, value] : keys) {
      const std::string full = section + "." + key;
      auto it = table.find(full);
      if (it == table.end()) throw std::invalid_argument("config: unknown key " + full);
      try {
        it->second.set(base, value.data());
      } catch (const std::logic_error& e) {
        throw std::invalid_argument("config: bad value for " + full + ": " + value.data());
      }
    }
  }
  base.validate();
  return base;
}

void save_config(const PipelineConfig& config, const std::filesystem::path& path) {
  boost::property_tree::ptree tree;
  for (const auto& [key, binding] : bindings()) tree.put(key, binding.get(config));
  boost::property_tree::write_ini(path.string(), tree);
}

std::size_t effective_threads(const PipelineConfig& config) {
  if (const char* env = std::getenv("CLIPVOS_THREADS")) {
    try {
      const std::size_t n = std::stoul(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    throw std::invalid_argument("CLIPVOS_THREADS must be a positive integer, got " + std::string(env));
  }
  return config.threads;
}

}  // namespace clipvos
