#pragma once

#include "scouter/common.hpp"

#include <utility>
#include <vector>

namespace scouter {

struct BackboneConfig {
  Index input_channels = 1;
  std::vector<Index> stage_channels{16, 32, 64};
  Index kernel_size = 3;
  std::vector<Index> downsample{2, 2, 1};  // stride per stage
  Index convs_per_stage = 1;               // the first conv of a stage carries its stride

  Index output_channels() const { return stage_channels.empty() ? input_channels : stage_channels.back(); }
  Index total_downsample() const;
  void validate() const;
};

/// Stages of conv(k×k) + ReLU layers over NHWC images, padding k/2.
class Backbone {
 public:
  Backbone(BackboneConfig config, Rng& rng);

  /// [N×H×W×ch] -> [N×h×w×c]
  Tensor forward(const Tensor& images) const;
  /// Spatial size of the feature map for an H×W input.
  std::pair<Index, Index> output_size(Index height, Index width) const;

  const BackboneConfig& config() const { return config_; }
  ParameterList parameters() const;

 private:
  BackboneConfig config_;
  std::vector<Tensor> kernels_;
  std::vector<Tensor> biases_;
  std::vector<Index> strides_;
};

/// Global-average-pool + affine classifier, the accuracy baseline.
struct FcBaselineHead {
  Tensor weight;  // [n×c]
  Tensor bias;    // [n]

  static FcBaselineHead create(Index num_classes, Index channels, Rng& rng);
  /// features [N×h×w×c] -> confidences [N×n]
  Tensor forward(const Tensor& features) const;
  ParameterList parameters() const;
};

}  // namespace scouter
