#pragma once

#include "scouter/common.hpp"

#include <cstdint>
#include <vector>

namespace scouter {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

struct AdamMoments {
  Eigen::VectorXd first;
  Eigen::VectorXd second;
};

/// One decoupled-weight-decay Adam update in place. `step` is 1-based and
/// drives the bias correction:
///   θ ← θ − lr·wd·θ
///   m ← β1 m + (1−β1) g,  v ← β2 v + (1−β2) g²
///   θ ← θ − lr · m̂ / (√v̂ + ε)
void adamw_step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grads,
                AdamMoments& moments, std::int64_t step, double lr, const AdamWConfig& config);

class AdamW {
 public:
  AdamW(ParameterList params, AdamWConfig config);

  /// Applies one update using the accumulated grads.
  void step(double lr);
  void zero_grad();

  std::int64_t steps() const { return steps_; }
  void set_steps(std::int64_t steps) { steps_ = steps; }
  const ParameterList& parameters() const { return params_; }
  std::vector<AdamMoments>& moments() { return moments_; }
  const std::vector<AdamMoments>& moments() const { return moments_; }
  const AdamWConfig& config() const { return config_; }

 private:
  ParameterList params_;
  AdamWConfig config_;
  std::vector<AdamMoments> moments_;
  std::int64_t steps_ = 0;
};

}  // namespace scouter
