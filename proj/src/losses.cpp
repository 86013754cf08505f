#include "scouter/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace scouter {

void LossConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("loss: lambda must be >= 0");
  if (sign != 1 && sign != -1) throw std::invalid_argument("loss: sign must be +1 or -1");
}

Tensor cross_entropy_loss(const Tensor& confidences, std::span<const Index> labels) {
  return cross_entropy(confidences, labels);
}

Tensor area_loss(const Tensor& attention) {
  Tensor total = sum(attention);
  if (attention.rank() == 3 && attention.dim(0) > 1) return scale(total, 1.0 / double(attention.dim(0)));
  return total;
}

Tensor reduced_area_loss(const Tensor& attention, AreaReduction reduction) {
  if (reduction == AreaReduction::sum) return area_loss(attention);
  if (attention.rank() < 2) throw ShapeError("area_loss: attention must be [n x s] or [N x n x s]");
  const double s = double(attention.dim(-1)), n = double(attention.dim(-2));
  return scale(area_loss(attention), 1.0 / (reduction == AreaReduction::positions ? s : n * s));
}

std::string to_string(AreaReduction r) {
  switch (r) {
    case AreaReduction::sum: return "sum";
    case AreaReduction::positions: return "positions";
    case AreaReduction::entries: return "entries";
  }
  return "?";
}

AreaReduction parse_area_reduction(const std::string& text) {
  if (text == "sum") return AreaReduction::sum;
  if (text == "positions") return AreaReduction::positions;
  if (text == "entries") return AreaReduction::entries;
  throw std::invalid_argument("unknown area reduction '" + text + "'");
}

Tensor total_loss(const Tensor& confidences, std::span<const Index> labels, const Tensor& attention,
                  const LossConfig& config) {
  config.validate();
  Tensor ce = cross_entropy_loss(confidences, labels);
  if (config.lambda == 0.0) return ce;
  return add(ce, scale(reduced_area_loss(attention, config.reduction), config.lambda));
}

}  // namespace scouter
