#pragma once

#include "scouter/backbone.hpp"
#include "scouter/head.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>

namespace scouter {

enum class HeadKind { fc, slot };

using KeyValues = std::map<std::string, std::string>;

struct ModelConfig {
  Index image_height = 28;
  Index image_width = 28;
  BackboneConfig backbone;
  HeadKind head = HeadKind::slot;
  SlotHeadConfig slot;  // num_classes is read from here for both heads
  /// Pixels enter the backbone as (x − input_mean) / input_std.
  double input_mean = 0.0;
  double input_std = 1.0;

  Index num_classes() const { return slot.num_classes; }
  void validate() const;
  KeyValues to_key_values() const;
  static ModelConfig from_key_values(const KeyValues& kv);
};

struct ModelOutput {
  Tensor logits;                   // [N×n]
  std::optional<Tensor> attention;  // [N×n×s], slot head only
  Index height = 0, width = 0;     // feature grid
};

/// Backbone plus either classifier head. Parameters are shared handles, so
/// the model is move-only.
class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// images [N×H×W×ch]
  ModelOutput forward(const Tensor& images) const;
  Tensor features(const Tensor& images) const { return backbone_.forward(images); }

  const ModelConfig& config() const { return config_; }
  const Backbone& backbone() const { return backbone_; }
  const SlotHeadParams* slot_head() const { return slot_ ? &*slot_ : nullptr; }
  const PositionalEmbedding* positional_embedding() const { return pe_ ? &*pe_ : nullptr; }
  ParameterList parameters() const;

 private:
  Model(ModelConfig config, Rng rng);

  ModelConfig config_;
  Rng init_rng_;
  Backbone backbone_;
  std::optional<FcBaselineHead> fc_;
  std::optional<SlotHeadParams> slot_;
  std::optional<PositionalEmbedding> pe_;
};

std::string to_string(HeadKind kind);
HeadKind parse_head_kind(const std::string& text);

}  // namespace scouter
