#pragma once

// Slot-attention classifier head.
//
//   F* = ReLU(Conv1x1(F))            V = flatten(F*)        [s×d], s = h·w
//   F̃  = flatten(F* + PE)  (or F* when PE is disabled)
//   for t = 1..T:
//     A(t)  = σ(Q(W(t)) K(F̃)ᵀ)                               [n×s]
//     Ā(t)  = row-wise A / (A·1 + 1)
//     U(t)  = Ā(t) V                                         [n×d]
//     W(t+1) = GRU(U(t), W(t))
//   o = e · U(T) 1
//
// Without the GRU the loop runs once. Each row of the returned attention is
// the explanation map of one category.

#include "scouter/common.hpp"
#include "scouter/ops.hpp"

#include <optional>

namespace scouter {

struct SlotHeadConfig {
  Index num_classes = 10;  // n
  Index slot_dim = 64;     // d
  Index iterations = 3;    // T
  int sign = +1;           // e
  bool use_pe = true;
  bool use_gru = true;

  Index effective_iterations() const { return use_gru ? iterations : 1; }
  void validate() const;
};

/// Three affine layers of width d with ReLU between them.
struct Mlp3 {
  Tensor w1, b1, w2, b2, w3, b3;

  static Mlp3 create(Index width, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void append_parameters(const std::string& prefix, ParameterList& out) const;
};

struct SlotHeadParams {
  Tensor conv_weight;  // [c×d]
  Tensor conv_bias;    // [d]
  Tensor slots;        // W(1), [n×d]
  Mlp3 query;
  Mlp3 key;
  std::optional<GruWeights> gru;

  static SlotHeadParams create(const SlotHeadConfig& config, Index feature_channels, Rng& rng);
  ParameterList parameters() const;
};

/// Fixed 2-d sinusoidal table [h×w×d]: the first d/2 channels encode the row,
/// the last d/2 the column, alternating sin/cos over geometric frequencies.
struct PositionalEmbedding {
  Tensor table;
  Index height = 0, width = 0, dim = 0;
};

PositionalEmbedding build_pe(Index height, Index width, Index dim);

struct HeadOutput {
  Tensor confidences;  // o, [N×n]
  Tensor attention;    // Ā(T), [N×n×s]
  Index height = 0, width = 0;
};

HeadOutput head_forward(const Tensor& features, const SlotHeadParams& params, const PositionalEmbedding* pe,
                        const SlotHeadConfig& config);

/// One sample's detached head output.
struct ExplanationResult {
  Eigen::VectorXd confidences;     // [n]
  RowMatrix<double> attention;     // [n×s]
  Index height = 0, width = 0;
};

ExplanationResult explanation_at(const HeadOutput& out, Index sample);

/// Row l of Ā reshaped to the h×w feature grid.
Eigen::MatrixXd explanation_map(const ExplanationResult& result, Index category);

}  // namespace scouter
