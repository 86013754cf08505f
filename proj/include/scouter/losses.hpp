#pragma once

#include "scouter/ops.hpp"

#include <span>
#include <string>

namespace scouter {

/// How the area term is reduced over one sample's n×s attention entries
/// before weighting by λ.
enum class AreaReduction {
  sum,        // Σ_l Σ_p ā_lp
  positions,  // Σ_l Σ_p ā_lp / s
  entries,    // Σ_l Σ_p ā_lp / (n·s)
};

struct LossConfig {
  double lambda = 0.0;  // area-loss weight
  int sign = +1;        // mirrors SlotHeadConfig::sign
  AreaReduction reduction = AreaReduction::positions;

  void validate() const;
};

/// −log softmax(o)[y], averaged over rows for batched confidences.
Tensor cross_entropy_loss(const Tensor& confidences, std::span<const Index> labels);

/// Σ over categories and positions of Ā, averaged over the batch for [N×n×s].
Tensor area_loss(const Tensor& attention);

/// area_loss rescaled per `reduction`.
Tensor reduced_area_loss(const Tensor& attention, AreaReduction reduction);

std::string to_string(AreaReduction r);
AreaReduction parse_area_reduction(const std::string& text);

Tensor total_loss(const Tensor& confidences, std::span<const Index> labels, const Tensor& attention,
                  const LossConfig& config);

}  // namespace scouter
