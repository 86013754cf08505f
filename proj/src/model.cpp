#include "scouter/model.hpp"

#include "scouter/text.hpp"

#include <cmath>
#include <stdexcept>

namespace scouter {

std::string to_string(HeadKind kind) { return kind == HeadKind::fc ? "fc" : "slot"; }

HeadKind parse_head_kind(const std::string& text) {
  if (text == "fc") return HeadKind::fc;
  if (text == "slot") return HeadKind::slot;
  throw std::invalid_argument("unknown head kind '" + text + "' (expected fc or slot)");
}

void ModelConfig::validate() const {
  backbone.validate();
  slot.validate();
  const Index f = backbone.total_downsample();
  if (image_height % f != 0 || image_width % f != 0)
    throw std::invalid_argument("model: image size not divisible by backbone downsample factor");
  if (!(input_std > 0.0) || !std::isfinite(input_mean)) throw std::invalid_argument("model: input_std must be > 0");
  if (image_height / f < 2 || image_width / f < 2) throw std::invalid_argument("model: feature map smaller than 2x2");
  if (head == HeadKind::slot && backbone.output_channels() < slot.slot_dim)
    throw std::invalid_argument("model: backbone channels must be >= slot_dim");
}

KeyValues ModelConfig::to_key_values() const {
  return {
      {"model.image_height", std::to_string(image_height)},
      {"model.image_width", std::to_string(image_width)},
      {"model.input_channels", std::to_string(backbone.input_channels)},
      {"model.stage_channels", join_indices(backbone.stage_channels)},
      {"model.kernel_size", std::to_string(backbone.kernel_size)},
      {"model.downsample", join_indices(backbone.downsample)},
      {"model.convs_per_stage", std::to_string(backbone.convs_per_stage)},
      {"model.head", to_string(head)},
      {"model.num_classes", std::to_string(slot.num_classes)},
      {"model.slot_dim", std::to_string(slot.slot_dim)},
      {"model.iterations", std::to_string(slot.iterations)},
      {"model.sign", std::to_string(slot.sign)},
      {"model.use_pe", slot.use_pe ? "1" : "0"},
      {"model.use_gru", slot.use_gru ? "1" : "0"},
      {"model.input_mean", format_exact(input_mean)},
      {"model.input_std", format_exact(input_std)},
  };
}

ModelConfig ModelConfig::from_key_values(const KeyValues& kv) {
  auto get = [&kv](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument("model config: missing key " + key);
    return it->second;
  };
  ModelConfig c;
  c.image_height = parse_index(get("model.image_height"));
  c.image_width = parse_index(get("model.image_width"));
  c.backbone.input_channels = parse_index(get("model.input_channels"));
  c.backbone.stage_channels = parse_index_list(get("model.stage_channels"));
  c.backbone.kernel_size = parse_index(get("model.kernel_size"));
  c.backbone.downsample = parse_index_list(get("model.downsample"));
  c.backbone.convs_per_stage = parse_index(get("model.convs_per_stage"));
  c.head = parse_head_kind(get("model.head"));
  c.slot.num_classes = parse_index(get("model.num_classes"));
  c.slot.slot_dim = parse_index(get("model.slot_dim"));
  c.slot.iterations = parse_index(get("model.iterations"));
  c.slot.sign = int(parse_index(get("model.sign")));
  c.slot.use_pe = get("model.use_pe") == "1";
  c.slot.use_gru = get("model.use_gru") == "1";
  c.input_mean = parse_double(get("model.input_mean"));
  c.input_std = parse_double(get("model.input_std"));
  c.validate();
  return c;
}

Model::Model(ModelConfig config, std::uint64_t seed) : Model(std::move(config), Rng(seed)) {}

Model::Model(ModelConfig config, Rng rng)
    : config_((config.validate(), std::move(config))), init_rng_(std::move(rng)), backbone_(config_.backbone, init_rng_) {
  if (config_.head == HeadKind::fc) {
    fc_ = FcBaselineHead::create(config_.num_classes(), config_.backbone.output_channels(), init_rng_);
  } else {
    slot_ = SlotHeadParams::create(config_.slot, config_.backbone.output_channels(), init_rng_);
    if (config_.slot.use_pe) {
      auto [h, w] = backbone_.output_size(config_.image_height, config_.image_width);
      pe_ = build_pe(h, w, config_.slot.slot_dim);
    }
  }
}

ModelOutput Model::forward(const Tensor& images) const {
  const bool identity = config_.input_mean == 0.0 && config_.input_std == 1.0;
  Tensor f =
      backbone_.forward(identity ? images : scale(add_scalar(images, -config_.input_mean), 1.0 / config_.input_std));
  if (fc_) return {fc_->forward(f), std::nullopt, f.dim(1), f.dim(2)};
  HeadOutput out = head_forward(f, *slot_, positional_embedding(), config_.slot);
  return {out.confidences, out.attention, out.height, out.width};
}

ParameterList Model::parameters() const {
  ParameterList out = backbone_.parameters();
  ParameterList head = fc_ ? fc_->parameters() : slot_->parameters();
  out.insert(out.end(), head.begin(), head.end());
  return out;
}

}  // namespace scouter
