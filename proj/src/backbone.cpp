#include "scouter/backbone.hpp"

#include "scouter/ops.hpp"

#include <cmath>
#include <string>

namespace scouter {

Index BackboneConfig::total_downsample() const {
  Index f = 1;
  for (Index s : downsample) f *= s;
  return f;
}

void BackboneConfig::validate() const {
  if (input_channels < 1) throw std::invalid_argument("backbone: input_channels must be >= 1");
  if (stage_channels.size() != downsample.size())
    throw std::invalid_argument("backbone: one stride per stage required");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw std::invalid_argument("backbone: kernel_size must be odd");
  if (convs_per_stage < 1) throw std::invalid_argument("backbone: convs_per_stage must be >= 1");
  for (std::size_t i = 0; i < stage_channels.size(); ++i)
    if (stage_channels[i] < 1 || downsample[i] < 1)
      throw std::invalid_argument("backbone: stage " + std::to_string(i) + " needs channels >= 1 and stride >= 1");
}

Backbone::Backbone(BackboneConfig config, Rng& rng) : config_(std::move(config)) {
  config_.validate();
  Index cin = config_.input_channels;
  const Index k = config_.kernel_size;
  for (std::size_t stage = 0; stage < config_.stage_channels.size(); ++stage)
    for (Index j = 0; j < config_.convs_per_stage; ++j) {
      const Index cout = config_.stage_channels[stage];
      const double bound = std::sqrt(6.0 / double(k * k * cin));  // He-uniform for the ReLU stack
      kernels_.push_back(uniform_tensor({k, k, cin, cout}, bound, rng));
      biases_.push_back(Tensor::zeros({cout}, true));
      strides_.push_back(j == 0 ? config_.downsample[stage] : 1);
      cin = cout;
    }
}

std::pair<Index, Index> Backbone::output_size(Index height, Index width) const {
  for (Index s : config_.downsample) {
    height /= s;
    width /= s;
  }
  return {height, width};
}

Tensor Backbone::forward(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(3) != config_.input_channels)
    throw ShapeError("backbone: expected [N x H x W x " + std::to_string(config_.input_channels) + "], got " +
                     to_string(images.shape()));
  const Index f = config_.total_downsample();
  if (images.dim(1) % f != 0 || images.dim(2) % f != 0)
    throw ShapeError("backbone: image size " + std::to_string(images.dim(1)) + "x" + std::to_string(images.dim(2)) +
                     " not divisible by downsample factor " + std::to_string(f));
  Tensor x = images;
  for (std::size_t i = 0; i < kernels_.size(); ++i)
    x = relu(add_tiled(conv2d(x, kernels_[i], strides_[i], config_.kernel_size / 2), biases_[i]));
  return x;
}

ParameterList Backbone::parameters() const {
  ParameterList out;
  for (std::size_t i = 0; i < kernels_.size(); ++i) {
    out.push_back({"backbone.conv" + std::to_string(i) + ".weight", kernels_[i]});
    out.push_back({"backbone.conv" + std::to_string(i) + ".bias", biases_[i]});
  }
  return out;
}

FcBaselineHead FcBaselineHead::create(Index num_classes, Index channels, Rng& rng) {
  return {uniform_tensor({num_classes, channels}, std::sqrt(1.0 / double(channels)), rng),
          Tensor::zeros({num_classes}, true)};
}

Tensor FcBaselineHead::forward(const Tensor& features) const {
  return add_tiled(matmul_nt(global_avg_pool(features), weight), bias);
}

ParameterList FcBaselineHead::parameters() const { return {{"fc.weight", weight}, {"fc.bias", bias}}; }

}  // namespace scouter
