#include "scouter/head.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace scouter {

void SlotHeadConfig::validate() const {
  if (num_classes < 2) throw std::invalid_argument("slot head: need at least 2 categories");
  if (slot_dim < 1) throw std::invalid_argument("slot head: slot_dim must be >= 1");
  if (use_gru && iterations < 1) throw std::invalid_argument("slot head: iterations must be >= 1");
  if (sign != 1 && sign != -1) throw std::invalid_argument("slot head: sign must be +1 or -1");
  if (use_pe && slot_dim % 2 != 0) throw std::invalid_argument("slot head: positional embedding needs even slot_dim");
}

namespace {

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add_tiled(matmul(x, w), b); }

void make_linear(Index in, Index out, Rng& rng, Tensor& w, Tensor& b) {
  w = uniform_tensor({in, out}, std::sqrt(1.0 / double(in)), rng);
  b = Tensor::zeros({out}, true);
}

}  // namespace

Mlp3 Mlp3::create(Index width, Rng& rng) {
  Mlp3 m;
  make_linear(width, width, rng, m.w1, m.b1);
  make_linear(width, width, rng, m.w2, m.b2);
  make_linear(width, width, rng, m.w3, m.b3);
  return m;
}

Tensor Mlp3::forward(const Tensor& x) const {
  return linear(relu(linear(relu(linear(x, w1, b1)), w2, b2)), w3, b3);
}

void Mlp3::append_parameters(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".fc1.weight", w1});
  out.push_back({prefix + ".fc1.bias", b1});
  out.push_back({prefix + ".fc2.weight", w2});
  out.push_back({prefix + ".fc2.bias", b2});
  out.push_back({prefix + ".fc3.weight", w3});
  out.push_back({prefix + ".fc3.bias", b3});
}

SlotHeadParams SlotHeadParams::create(const SlotHeadConfig& config, Index feature_channels, Rng& rng) {
  config.validate();
  const Index d = config.slot_dim;
  SlotHeadParams p;
  make_linear(feature_channels, d, rng, p.conv_weight, p.conv_bias);
  p.slots = normal_tensor({config.num_classes, d}, 1.0 / std::sqrt(double(d)), rng);
  p.query = Mlp3::create(d, rng);
  p.key = Mlp3::create(d, rng);
  if (config.use_gru) {
    GruWeights g;
    make_linear(d, d, rng, g.w_ir, g.b_ir);
    make_linear(d, d, rng, g.w_iz, g.b_iz);
    make_linear(d, d, rng, g.w_in, g.b_in);
    make_linear(d, d, rng, g.w_hr, g.b_hr);
    make_linear(d, d, rng, g.w_hz, g.b_hz);
    make_linear(d, d, rng, g.w_hn, g.b_hn);
    p.gru = std::move(g);
  }
  return p;
}

ParameterList SlotHeadParams::parameters() const {
  ParameterList out{{"head.conv.weight", conv_weight}, {"head.conv.bias", conv_bias}, {"head.slots", slots}};
  query.append_parameters("head.query", out);
  key.append_parameters("head.key", out);
  if (gru) {
    const auto& g = *gru;
    for (auto [name, t] : {std::pair{"w_ir", g.w_ir}, {"w_iz", g.w_iz}, {"w_in", g.w_in}, {"w_hr", g.w_hr},
                           {"w_hz", g.w_hz}, {"w_hn", g.w_hn}, {"b_ir", g.b_ir}, {"b_iz", g.b_iz},
                           {"b_in", g.b_in}, {"b_hr", g.b_hr}, {"b_hz", g.b_hz}, {"b_hn", g.b_hn}})
      out.push_back({std::string("head.gru.") + name, t});
  }
  return out;
}

PositionalEmbedding build_pe(Index height, Index width, Index dim) {
  if (dim <= 0 || dim % 2 != 0) throw std::invalid_argument("build_pe: dimension must be positive and even");
  if (height < 1 || width < 1) throw std::invalid_argument("build_pe: empty grid");
  const Index half = dim / 2;
  Tensor::Vector v(height * width * dim);
  auto channel = [half](Index pos, Index j) {
    const Index k = j / 2;
    const double freq = std::pow(10000.0, -2.0 * double(k) / double(half));
    return j % 2 == 0 ? std::sin(double(pos) * freq) : std::cos(double(pos) * freq);
  };
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) {
      double* cell = v.data() + (y * width + x) * dim;
      for (Index j = 0; j < half; ++j) {
        cell[j] = channel(y, j);
        cell[half + j] = channel(x, j);
      }
    }
  return {Tensor({height, width, dim}, std::move(v)), height, width, dim};
}

HeadOutput head_forward(const Tensor& features, const SlotHeadParams& params, const PositionalEmbedding* pe,
                        const SlotHeadConfig& config) {
  if (features.rank() != 4) throw ShapeError("head_forward: features must be [N x h x w x c]");
  const Index batch = features.dim(0), h = features.dim(1), w = features.dim(2), s = h * w;
  const Index n = config.num_classes, d = config.slot_dim;
  if (params.conv_weight.dim(0) != features.dim(3))
    throw ShapeError("head_forward: feature channels " + std::to_string(features.dim(3)) + " vs conv input " +
                     std::to_string(params.conv_weight.dim(0)));
  if (params.slots.dim(0) != n || params.slots.dim(1) != d) throw ShapeError("head_forward: slot table shape");

  // [N·s × d]
  Tensor fstar = relu(linear(reshape(features, {batch * s, features.dim(3)}), params.conv_weight, params.conv_bias));
  Tensor values = reshape(fstar, {batch, s, d});
  Tensor keyed = fstar;
  if (config.use_pe) {
    if (pe == nullptr || pe->height != h || pe->width != w || pe->dim != d)
      throw ShapeError("head_forward: positional embedding does not match the feature grid");
    keyed = reshape(add_tiled(values, reshape(pe->table, {s, d})), {batch * s, d});
  }
  Tensor keys = reshape(params.key.forward(keyed), {batch, s, d});

  Tensor slots = repeat(params.slots, batch);  // [N·n × d]
  Tensor attention, updates;
  const Index iterations = config.effective_iterations();
  for (Index t = 0; t < iterations; ++t) {
    Tensor queries = reshape(params.query.forward(slots), {batch, n, d});
    attention = normalize_attention(sigmoid(bmm(queries, keys, /*transpose_b=*/true)));
    updates = bmm(attention, values);  // [N×n×d]
    if (t + 1 < iterations) slots = gru_cell(reshape(updates, {batch * n, d}), slots, *params.gru);
  }
  Tensor confidences = sum_axis(updates, 2);
  if (config.sign < 0) confidences = scale(confidences, -1.0);
  return {confidences, attention, h, w};
}

ExplanationResult explanation_at(const HeadOutput& out, Index sample) {
  const Index n = out.confidences.dim(1), s = out.attention.dim(2);
  if (sample < 0 || sample >= out.confidences.dim(0)) throw std::out_of_range("explanation_at: sample index");
  ExplanationResult r;
  r.confidences = out.confidences.value().segment(sample * n, n);
  r.attention = Eigen::Map<const RowMatrix<double>>(out.attention.value().data() + sample * n * s, n, s);
  r.height = out.height;
  r.width = out.width;
  return r;
}

Eigen::MatrixXd explanation_map(const ExplanationResult& result, Index category) {
  if (category < 0 || category >= result.attention.rows())
    throw std::out_of_range("explanation_map: category " + std::to_string(category) + " out of range");
  return Eigen::Map<const RowMatrix<double>>(result.attention.row(category).data(), result.height, result.width);
}

}  // namespace scouter
