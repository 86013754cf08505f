#pragma once

#include "scouter/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace scouter {

using Rng = std::mt19937_64;

/// Named handle onto a trainable tensor; the handle aliases the owner's storage.
struct Parameter {
  std::string name;
  Tensor tensor;
};

using ParameterList = std::vector<Parameter>;

/// splitmix64 finalizer; derives independent stream seeds from (seed, index).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Uniform in [-bound, bound].
inline Tensor uniform_tensor(Shape shape, double bound, Rng& rng, bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor::Vector v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline Tensor normal_tensor(Shape shape, double stddev, Rng& rng, bool requires_grad = true) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor::Vector v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

/// 64-bit FNV-1a, used for config hashes in manifests.
inline std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace scouter
