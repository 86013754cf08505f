#pragma once

// Bridges a trained model to the metric suite: confidences, relevance maps
// at input resolution, and per-sample metric reports.

#include "scouter/metrics.hpp"
#include "scouter/model.hpp"

#include <span>

namespace scouter {

class ModelExplainer {
 public:
  explicit ModelExplainer(const Model& model, Index max_batch = 128) : model_(model), max_batch_(max_batch) {}

  /// Softmax probabilities, one row per image.
  RowMatrix<double> probabilities(std::span<const Image> images) const;
  /// Slot-head confidences and attention for one image.
  ExplanationResult explain(const Image& image) const;
  /// ā_l resized to the image resolution.
  Eigen::MatrixXd relevance(const Image& image, Index category) const;

  ConfidenceFn confidence_for(Index category) const;
  ExplainerFn explainer_for(Index category) const;

  const Model& model() const { return model_; }

 private:
  const Model& model_;
  Index max_batch_;
};

struct MetricOptions {
  Index steps = 100;
  Index infidelity_draws = 50;
  double sigma = 0.2;
  double stability_noise = 0.01;
  Index stability_draws = 5;
  std::uint64_t seed = 0;
  bool uniform_baseline = false;  // constant relevance instead of the model's maps
  bool precision = true;          // needs masks
  bool curves = true;             // insertion and deletion
  bool infidelity = true;
  bool stability = true;
  bool time = true;
  Index workers = 1;
};

/// Per-sample metrics for the ground-truth category (positive models) or the
/// least similar category (negative models, `similarity` required). Each
/// sample draws from its own RNG seeded by (seed, sample index), so results
/// do not depend on the worker count.
MetricReport evaluate_explanations(const Model& model, const LabeledDataset& data,
                                   const CategorySimilaritySource* similarity, const MetricOptions& options);

/// Mean pooled backbone feature of each category's samples.
CategoryEmbeddings class_mean_embeddings(const Model& model, const LabeledDataset& data, Index batch_size = 200);

}  // namespace scouter
