#include "scouter/optim.hpp"

#include <cmath>

namespace scouter {

void adamw_step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grads,
                AdamMoments& moments, std::int64_t step, double lr, const AdamWConfig& config) {
  if (grads.size() != params.size()) throw ShapeError("adamw_step: grads and params differ in size");
  if (moments.first.size() != params.size()) moments.first = Eigen::VectorXd::Zero(params.size());
  if (moments.second.size() != params.size()) moments.second = Eigen::VectorXd::Zero(params.size());
  if (step < 1) throw std::invalid_argument("adamw_step: step is 1-based");

  params *= 1.0 - lr * config.weight_decay;
  moments.first = config.beta1 * moments.first + (1.0 - config.beta1) * grads;
  moments.second = config.beta2 * moments.second + (1.0 - config.beta2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(config.beta1, double(step));
  const double c2 = 1.0 - std::pow(config.beta2, double(step));
  params.array() -= lr * (moments.first.array() / c1) / ((moments.second.array() / c2).sqrt() + config.eps);
  if (!params.allFinite()) throw NumericError("adamw_step: parameters became non-finite");
}

AdamW::AdamW(ParameterList params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  moments_.reserve(params_.size());
  for (const auto& p : params_)
    moments_.push_back({Eigen::VectorXd::Zero(p.tensor.size()), Eigen::VectorXd::Zero(p.tensor.size())});
}

void AdamW::step(double lr) {
  ++steps_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i].tensor;
    adamw_step(t.mutable_value(), t.grad(), moments_[i], steps_, lr, config_);
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

}  // namespace scouter
