#pragma once

// Explanation-quality metrics over (confidence function, image, relevance
// map). Relevance maps are H×W at input resolution; confidences are the
// softmax probability of the target category.

#include "scouter/dataset.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace scouter {

/// Bilinear resampling with corner pixel centres aligned
/// (src = dst·(h−1)/(H−1)); a 1-pixel source axis is replicated.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> resize_bilinear(
    const Eigen::MatrixBase<Derived>& map, Index out_rows, Index out_cols) {
  using Scalar = typename Derived::Scalar;
  const Index h = map.rows(), w = map.cols();
  if (h < 1 || w < 1) throw ShapeError("resize_bilinear: empty source map");
  auto coordinate = [](Index dst, Index src_len, Index dst_len, Index& lo, Index& hi, Scalar& frac) {
    const Scalar pos = dst_len > 1 ? Scalar(dst) * Scalar(src_len - 1) / Scalar(dst_len - 1) : Scalar(0);
    lo = std::min<Index>(Index(std::floor(pos)), src_len - 1);
    hi = std::min<Index>(lo + 1, src_len - 1);
    frac = pos - Scalar(lo);
  };
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(out_rows, out_cols);
  for (Index y = 0; y < out_rows; ++y) {
    Index y0, y1;
    Scalar fy;
    coordinate(y, h, out_rows, y0, y1, fy);
    for (Index x = 0; x < out_cols; ++x) {
      Index x0, x1;
      Scalar fx;
      coordinate(x, w, out_cols, x0, x1, fx);
      const Scalar top = (Scalar(1) - fx) * map(y0, x0) + fx * map(y0, x1);
      const Scalar bottom = (Scalar(1) - fx) * map(y1, x0) + fx * map(y1, x1);
      out(y, x) = (Scalar(1) - fy) * top + fy * bottom;
    }
  }
  return out;
}

struct PrecisionResult {
  double value = 0.0;
  bool zero_relevance = false;  // Σr = 0; value reported as 0
};

/// Share of relevance mass inside the mask.
template <typename Derived>
PrecisionResult precision(const Eigen::DenseBase<Derived>& relevance, const RegionMask& mask) {
  if (relevance.rows() != mask.rows() || relevance.cols() != mask.cols())
    throw ShapeError("precision: relevance and mask dims differ");
  double inside = 0.0, total = 0.0;
  for (Index y = 0; y < mask.rows(); ++y)
    for (Index x = 0; x < mask.cols(); ++x) {
      const double r = double(relevance(y, x));
      total += r;
      if (mask(y, x)) inside += r;
    }
  if (total == 0.0) return {0.0, true};
  return {inside / total, false};
}

/// Mean relevance per pixel; used both as strength of explanation and as area size.
template <typename Derived>
double mean_relevance(const Eigen::DenseBase<Derived>& relevance) {
  if (relevance.size() == 0) throw ShapeError("mean_relevance: empty map");
  return double(relevance.sum()) / double(relevance.size());
}

template <typename Derived>
double strength_of_explanation(const Eigen::DenseBase<Derived>& relevance) {
  return mean_relevance(relevance);
}

template <typename Derived>
double area_size(const Eigen::DenseBase<Derived>& relevance) {
  return mean_relevance(relevance);
}

/// Confidence of a fixed target category for each image of a batch.
using ConfidenceFn = std::function<Eigen::VectorXd(std::span<const Image>)>;
/// Relevance map at input resolution for a fixed target category.
using ExplainerFn = std::function<Eigen::MatrixXd(const Image&)>;

struct CurveResult {
  std::vector<double> confidences;  // steps + 1 points, fraction 0 .. 1
  double auc = 0.0;
};

/// Pixel indices (row-major) by descending relevance; equal relevance keeps
/// row-major order.
std::vector<Index> relevance_order(const Eigen::MatrixXd& relevance);

/// Trapezoid rule over points evenly spaced on [0,1].
double trapezoid_auc(std::span<const double> ys);

/// Reveals the most relevant pixels onto a zero canvas; after step k the top
/// ⌊k·|x|/steps⌋ pixels are visible.
CurveResult insertion_curve(const ConfidenceFn& confidence, const Image& image, const Eigen::MatrixXd& relevance,
                            Index steps = 100);
/// Zeroes the most relevant pixels of the image, same schedule as insertion.
CurveResult deletion_curve(const ConfidenceFn& confidence, const Image& image, const Eigen::MatrixXd& relevance,
                           Index steps = 100);

/// Monte-Carlo E[(φᵀr − (c(x) − c(x−φ)))²], φ ~ N(0, σ²) per pixel,
/// broadcast over channels.
double infidelity(const ConfidenceFn& confidence, const Image& image, const Eigen::MatrixXd& relevance,
                  Index num_draws, double sigma, Rng& rng);

/// Mean ‖r(x) − r(x′)‖ / ‖x − x′‖ over draws of x′ = x + N(0, (scale·range)²),
/// where range is the image's dynamic range (1 when flat).
double stability(const ExplainerFn& explainer, const Image& image, double noise_scale, Index num_draws, Rng& rng);

/// Mean wall-clock seconds of `explain_one(i)` over i < count.
double timed_explain(const std::function<void(Index)>& explain_one, Index count);

/// Rooted category tree; the root has depth 1.
class Taxonomy {
 public:
  Index add_node(const std::string& name, Index parent = -1);
  Index node(const std::string& name) const;
  void assign(Index category, Index node);

  Index depth(Index node) const;
  Index lowest_common_ancestor(Index a, Index b) const;
  bool has_category(Index category) const;
  Index category_node(Index category) const;
  Index num_categories() const { return Index(category_nodes_.size()); }
  /// 2·depth(lca) / (depth(a) + depth(b)).
  double wu_palmer(Index category_a, Index category_b) const;

  /// Lines: "node <name> <parent|->" and "category <index> <node name>";
  /// '#' starts a comment.
  static Taxonomy parse(const std::string& text);

 private:
  std::vector<std::string> names_;
  std::vector<Index> parents_;
  std::vector<Index> category_nodes_;  // -1 unassigned
};

struct CategoryEmbeddings {
  RowMatrix<double> vectors;  // one row per category
};

using CategorySimilaritySource = std::variant<Taxonomy, CategoryEmbeddings>;

double category_similarity(Index a, Index b, const CategorySimilaritySource& source);
/// Least similar category to y, excluding y; ties go to the smaller index.
Index least_similar_category(Index y, const CategorySimilaritySource& source);

struct MetricRow {
  Index sample_id = 0;
  Index category = 0;  // ground truth
  Index target = 0;    // explained category
  std::string metric;
  double value = 0.0;
};

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;
  Index count = 0;
};

struct MetricReport {
  std::vector<MetricRow> rows;

  std::map<std::string, MetricSummary> aggregate() const;
  /// sample_id,category,target,metric,value: per-sample rows followed by
  /// "mean" and "std" rows per metric.
  std::string to_csv() const;
  static MetricReport from_csv(const std::string& text);
};

}  // namespace scouter
