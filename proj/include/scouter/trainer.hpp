#pragma once

#include "scouter/checkpoint.hpp"
#include "scouter/dataset.hpp"
#include "scouter/losses.hpp"
#include "scouter/model.hpp"
#include "scouter/optim.hpp"

#include <functional>
#include <string>
#include <vector>

namespace scouter {

struct TrainConfig {
  Index epochs = 20;
  Index batch_size = 64;
  double lr = 1e-3;
  Index lr_drop_epoch = 15;  // epochs with index >= this use lr · lr_drop_factor
  double lr_drop_factor = 0.1;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  bool augment_hflip = false;
  /// λ ramps linearly from 0 over this many epochs (0 = full λ from the start).
  Index lambda_warmup_epochs = 4;

  void validate() const;
  double learning_rate(Index epoch) const { return epoch >= lr_drop_epoch ? lr * lr_drop_factor : lr; }
  /// Multiplier on λ at a fractional epoch position.
  double lambda_scale(double epoch) const;
  KeyValues to_key_values() const;
  static TrainConfig from_key_values(const KeyValues& kv);
};

struct EpochLog {
  Index epoch = 0;  // 1-based
  double loss = 0.0;
  double val_acc = 0.0;
  double mean_area = 0.0;
};

/// epoch,loss,val_acc,mean_area
std::string metrics_csv(const std::vector<EpochLog>& log);

struct Evaluation {
  double accuracy = 0.0;
  /// Mean area size over the evaluated samples: the ground-truth map for the
  /// positive variant, the average non-ground-truth map for the negative one.
  /// NaN for the FC head.
  double mean_area = 0.0;
  /// Per-sample sums of the feature-level attention: the ground-truth row and
  /// the average over the other rows. NaN for the FC head.
  double mean_gt_attention = 0.0;
  double mean_other_attention = 0.0;
  /// Mean Precision of the ground-truth map; positive slot head with masks only, else NaN.
  double mean_precision = 0.0;
};

Evaluation evaluate(const Model& model, const LabeledDataset& data, Index batch_size = 200);

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Owns model, optimizer and run RNG; one instance per training run.
class Trainer {
 public:
  Trainer(ModelConfig model, LossConfig loss, TrainConfig train);
  static Trainer resume(const Checkpoint& ckpt);

  /// Runs one epoch over `train` and, when given, evaluates on `val`.
  const EpochLog& run_epoch(const LabeledDataset& train, const LabeledDataset* val);
  /// Trains until the configured epoch count; `on_epoch` sees each log entry.
  void fit(const LabeledDataset& train, const LabeledDataset* val,
           const std::function<void(const EpochLog&)>& on_epoch = {});
  /// Loss of a single optimizer step on the given samples (the step is applied),
  /// with the area weight multiplied by `lambda_scale`.
  double step(const LabeledDataset& data, std::span<const Index> indices, double lr, double lambda_scale = 1.0);

  Checkpoint checkpoint() const;
  const Model& model() const { return model_; }
  Index epoch() const { return epoch_; }
  const std::vector<EpochLog>& log() const { return log_; }
  const TrainConfig& train_config() const { return train_; }
  const LossConfig& loss_config() const { return loss_; }

 private:
  ModelConfig model_config_;
  LossConfig loss_;
  TrainConfig train_;
  Model model_;
  AdamW optimizer_;
  Rng rng_;
  Index epoch_ = 0;
  std::vector<EpochLog> log_;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
};

TrainResult train(const LabeledDataset& train_set, const LabeledDataset& val_set, const ModelConfig& model,
                  const LossConfig& loss, const TrainConfig& config);

}  // namespace scouter
