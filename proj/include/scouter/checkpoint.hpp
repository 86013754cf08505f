#pragma once

#include "scouter/model.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace scouter {

struct TensorRecord {
  std::string name;
  Shape shape;
  Eigen::VectorXd data;
};

/// Self-describing binary container:
///   "SCOUTCKP" | u32 version | u64 length, "key=value\n" config text |
///   u32 count | per tensor: u32 name length, name, u8 dtype (1 = f64),
///   u32 rank, u64 dims..., little-endian payload
/// All integers are little-endian.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  KeyValues config;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const;
  const std::string& get(const std::string& key) const;

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Copies checkpoint tensors named like the model's parameters into it.
void load_parameters(const Checkpoint& ckpt, const ParameterList& params);
void store_parameters(const ParameterList& params, Checkpoint& ckpt);

/// Rebuilds a model from the config block and parameter records.
Model model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace scouter
