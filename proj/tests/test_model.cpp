#include "oracles.hpp"
#include "support.hpp"

#include "scouter/backbone.hpp"
#include "scouter/checkpoint.hpp"
#include "scouter/head.hpp"
#include "scouter/model.hpp"

#include <doctest.h>

using namespace scouter;
using namespace scouter::testing;

TEST_CASE("backbone shapes and validation") {
  Rng rng(1);
  BackboneConfig c;
  c.stage_channels = {4, 6};
  c.downsample = {2, 2};
  const Backbone b(c, rng);
  CHECK(b.output_size(28, 28) == std::pair<Index, Index>{7, 7});
  const Tensor f = b.forward(random_tensor({2, 28, 28, 1}, rng, 0, 1, false));
  CHECK(f.shape() == Shape{2, 7, 7, 6});

  ModelConfig m;
  m.image_height = m.image_width = 30;  // 30 is not divisible by 4
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);
  m = ModelConfig{};
  m.slot.slot_dim = 128;  // wider than the 64 backbone channels
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);
  m = ModelConfig{};
  m.input_std = 0.0;
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);
}

TEST_CASE("zero image with zero biases gives zero features") {
  Rng rng(2);
  const Backbone b(BackboneConfig{}, rng);
  const Tensor f = b.forward(Tensor::zeros({1, 28, 28, 1}));
  CHECK(f.value().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backbone is deterministic for a fixed seed") {
  Rng r1(3), r2(3), data(4);
  const Backbone a(BackboneConfig{}, r1), b(BackboneConfig{}, r2);
  const Tensor x = random_tensor({2, 28, 28, 1}, data, 0, 1, false);
  CHECK(a.forward(x).value() == b.forward(x).value());
}

TEST_CASE("deeper stages stride only on their first conv") {
  Rng rng(5);
  BackboneConfig c;
  c.stage_channels = {4, 8};
  c.downsample = {2, 1};
  c.convs_per_stage = 2;
  const Backbone b(c, rng);
  CHECK(b.parameters().size() == 8);
  CHECK(b.forward(Tensor::zeros({1, 8, 8, 1})).shape() == Shape{1, 4, 4, 8});
}

TEST_CASE("fc baseline head") {
  Rng rng(6);
  FcBaselineHead head = FcBaselineHead::create(3, 4, rng);
  head.bias.mutable_value() << 0.5, -1.0, 2.0;

  SUBCASE("zero features return the bias") {
    const Tensor o = head.forward(Tensor::zeros({1, 2, 2, 4}));
    CHECK(o.value() == head.bias.value());
  }
  SUBCASE("constant features pool to the constant") {
    Tensor f = Tensor::zeros({1, 3, 3, 4});
    f.mutable_value().setConstant(0.7);
    const Tensor o = head.forward(f);
    const auto w = head.weight.matrix(3, 4);
    for (Index l = 0; l < 3; ++l) CHECK(o[l] == doctest::Approx(0.7 * w.row(l).sum() + head.bias[l]).epsilon(1e-14));
  }
  SUBCASE("random features against a direct loop") {
    const Tensor f = random_tensor({2, 3, 2, 4}, rng, -1, 1, false);
    const Tensor o = head.forward(f);
    for (Index b = 0; b < 2; ++b)
      for (Index l = 0; l < 3; ++l) {
        double acc = head.bias[l];
        for (Index k = 0; k < 4; ++k) {
          double pooled = 0.0;
          for (Index p = 0; p < 6; ++p) pooled += f.value()[(b * 6 + p) * 4 + k];
          acc += head.weight.value()[l * 4 + k] * pooled / 6.0;
        }
        CHECK(o.value()[b * 3 + l] == doctest::Approx(acc).epsilon(1e-13));
      }
  }
}

TEST_CASE("positional embedding") {
  const PositionalEmbedding pe = build_pe(4, 5, 8);
  CHECK(pe.table.shape() == Shape{4, 5, 8});
  const auto& v = pe.table.value();
  for (Index j = 0; j < 8; ++j) CHECK(v[j] == (j % 2 == 0 ? 0.0 : 1.0));
  CHECK(v.cwiseAbs().maxCoeff() <= 1.0);
  CHECK(build_pe(4, 5, 8).table.value() == v);
  // first half follows the row only, second half the column only
  for (Index x = 1; x < 5; ++x)
    for (Index j = 0; j < 4; ++j) CHECK(v[(2 * 5 + x) * 8 + j] == v[(2 * 5 + 0) * 8 + j]);
  for (Index y = 1; y < 4; ++y)
    for (Index j = 4; j < 8; ++j) CHECK(v[(y * 5 + 3) * 8 + j] == v[(0 * 5 + 3) * 8 + j]);
  CHECK_THROWS_AS(build_pe(4, 5, 7), std::invalid_argument);
  CHECK_THROWS_AS(build_pe(0, 5, 8), std::invalid_argument);
}

TEST_CASE("normalized attention rows stay below one and grow with their entry") {
  Rng rng(7);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Index s = 1 + Index(rng() % 30);
    Tensor a = random_tensor({1, s}, rng, 0.0, trial % 2 ? 1.0 : 50.0, false);
    const Tensor n = normalize_attention(a);
    CHECK(n.value().minCoeff() >= 0.0);
    CHECK(n.value().maxCoeff() < 1.0);
    CHECK(n.value().sum() == doctest::Approx(a.value().sum() / (a.value().sum() + 1.0)).epsilon(1e-13));
    CHECK(n.value().sum() < 1.0);
    const Index j = Index(rng() % std::uint64_t(s));
    Tensor raised = a.clone();
    raised.mutable_value()[j] += u(rng) + 1e-3;
    CHECK(normalize_attention(raised).value()[j] > n.value()[j]);
  }
}

TEST_CASE("head forward matches the scalar-loop oracle") {
  Rng rng(8);
  SlotHeadConfig config;
  config.num_classes = 3;
  config.slot_dim = 4;
  config.iterations = 2;
  SlotHeadParams p = SlotHeadParams::create(config, 4, rng);
  for (const auto& param : p.parameters()) {
    Tensor t = param.tensor;
    t.mutable_value() = random_tensor(t.shape(), rng, -1, 1, false).value();
  }
  const PositionalEmbedding pe = build_pe(2, 2, 4);
  const Tensor f = random_tensor({1, 2, 2, 4}, rng, -1, 1, false);
  const HeadOutput out = head_forward(f, p, &pe, config);
  const HeadOracle ref = head_oracle(to_mat(f, 4, 4), p, &pe, config);
  for (Index l = 0; l < 3; ++l) {
    CHECK(out.confidences[l] == doctest::Approx(ref.confidences[std::size_t(l)]).epsilon(1e-12));
    for (Index i = 0; i < 4; ++i)
      CHECK(std::abs(out.attention.value()[l * 4 + i] - ref.attention[std::size_t(l)][std::size_t(i)]) < 1e-12);
  }

  Rng many(9);
  for (int trial = 0; trial < 25; ++trial) {
    const HeadInstance inst = random_head_instance(many);
    const HeadOutput o = head_forward(inst.features, inst.params, inst.pe ? &*inst.pe : nullptr, inst.config);
    const Index s = inst.features.dim(1) * inst.features.dim(2), c = inst.features.dim(3);
    const Tensor first = Tensor({s, c}, inst.features.value().head(s * c));
    const HeadOracle r = head_oracle(to_mat(first, s, c), inst.params, inst.pe ? &*inst.pe : nullptr, inst.config);
    for (Index l = 0; l < inst.config.num_classes; ++l)
      CHECK(std::abs(o.confidences.value()[l] - r.confidences[std::size_t(l)]) < 1e-10);
  }
}

TEST_CASE("head invariants") {
  Rng rng(10);
  SlotHeadConfig config;
  config.num_classes = 4;
  config.slot_dim = 6;

  SUBCASE("confidences carry the sign and equal attention times value sums") {
    for (int sign : {1, -1}) {
      config.sign = sign;
      const SlotHeadParams p = SlotHeadParams::create(config, 6, rng);
      const PositionalEmbedding pe = build_pe(3, 3, 6);
      const Tensor f = random_tensor({2, 3, 3, 6}, rng, -1, 1, false);
      const HeadOutput out = head_forward(f, p, &pe, config);
      CHECK((out.confidences.value() * double(sign)).minCoeff() >= 0.0);
      CHECK(out.attention.value().maxCoeff() < 1.0);
      // |o_l| = ā_l · V · 1 with V = relu(F W + b)
      const auto F = f.matrix(18, 6);
      const auto W = p.conv_weight.matrix(6, 6);
      RowMatrix<double> V = ((F * W).rowwise() + p.conv_bias.value().transpose()).cwiseMax(0.0);
      const Eigen::VectorXd vsum = V.rowwise().sum();
      for (Index b = 0; b < 2; ++b)
        for (Index l = 0; l < 4; ++l) {
          double expect = 0.0;
          for (Index i = 0; i < 9; ++i) expect += out.attention.value()[(b * 4 + l) * 9 + i] * vsum[b * 9 + i];
          CHECK(std::abs(out.confidences.value()[b * 4 + l]) == doctest::Approx(expect).epsilon(1e-12));
        }
    }
  }
  SUBCASE("very negative logits annihilate the output") {
    SlotHeadParams p = SlotHeadParams::create(config, 6, rng);
    // V large and positive
    p.conv_weight.mutable_value().setConstant(5.0);
    // keys constant positive, queries constant very negative
    for (Tensor* t : {&p.key.w1, &p.key.w2, &p.key.w3, &p.query.w1, &p.query.w2, &p.query.w3})
      t->mutable_value().setZero();
    p.key.b3.mutable_value().setConstant(1.0);
    p.query.b3.mutable_value().setConstant(-200.0);
    config.use_pe = false;
    const HeadOutput out = head_forward(random_tensor({1, 2, 2, 6}, rng, 0, 1, false), p, nullptr, config);
    CHECK(out.attention.value().maxCoeff() < 1e-200);
    CHECK(out.confidences.value().cwiseAbs().maxCoeff() < 1e-190);
  }
  SUBCASE("single position bound") {
    config.use_pe = false;
    const SlotHeadParams p = SlotHeadParams::create(config, 6, rng);
    const Tensor f = random_tensor({1, 1, 1, 6}, rng, 0, 1, false);
    const HeadOutput out = head_forward(f, p, nullptr, config);
    const auto F = f.matrix(1, 6);
    const double vsum = ((F * p.conv_weight.matrix(6, 6)).transpose() + p.conv_bias.value()).cwiseMax(0.0).sum();
    for (Index l = 0; l < 4; ++l) {
      CHECK(out.confidences[l] < vsum);
      CHECK(out.attention[l] < 1.0);
    }
  }
  SUBCASE("without the GRU the iteration count is irrelevant") {
    config.use_gru = false;
    Rng r1(11), r2(11);
    SlotHeadConfig c1 = config, c2 = config;
    c1.iterations = 1;
    c2.iterations = 5;
    const SlotHeadParams p = SlotHeadParams::create(c1, 6, r1);
    CHECK_FALSE(p.gru.has_value());
    const PositionalEmbedding pe = build_pe(2, 3, 6);
    const Tensor f = random_tensor({2, 2, 3, 6}, r2, -1, 1, false);
    CHECK(head_forward(f, p, &pe, c1).confidences.value() == head_forward(f, p, &pe, c2).confidences.value());
  }
  SUBCASE("bit-identical reruns") {
    const SlotHeadParams p = SlotHeadParams::create(config, 6, rng);
    const PositionalEmbedding pe = build_pe(2, 2, 6);
    const Tensor f = random_tensor({1, 2, 2, 6}, rng, -1, 1, false);
    const HeadOutput a = head_forward(f, p, &pe, config), b = head_forward(f, p, &pe, config);
    CHECK(a.attention.value() == b.attention.value());
    CHECK(a.confidences.value() == b.confidences.value());
  }
  SUBCASE("shape errors") {
    const SlotHeadParams p = SlotHeadParams::create(config, 6, rng);
    const PositionalEmbedding pe = build_pe(2, 2, 6);
    CHECK_THROWS_AS(head_forward(Tensor::zeros({1, 2, 2, 5}), p, &pe, config), ShapeError);
    CHECK_THROWS_AS(head_forward(Tensor::zeros({1, 3, 2, 6}), p, &pe, config), ShapeError);
    CHECK_THROWS_AS(head_forward(Tensor::zeros({1, 2, 2, 6}), p, nullptr, config), ShapeError);
  }
}

TEST_CASE("explanation maps") {
  Rng rng(12);
  SlotHeadConfig config;
  config.num_classes = 3;
  config.slot_dim = 4;
  const SlotHeadParams p = SlotHeadParams::create(config, 4, rng);
  const PositionalEmbedding pe = build_pe(2, 3, 4);
  const HeadOutput out = head_forward(random_tensor({2, 2, 3, 4}, rng, -1, 1, false), p, &pe, config);
  const ExplanationResult r = explanation_at(out, 1);
  for (Index l = 0; l < 3; ++l) {
    const Eigen::MatrixXd m = explanation_map(r, l);
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 3);
    CHECK(m.minCoeff() >= 0.0);
    CHECK(m.maxCoeff() < 1.0);
    CHECK(m.sum() < 1.0);
    for (Index y = 0; y < 2; ++y)
      for (Index x = 0; x < 3; ++x) CHECK(m(y, x) == out.attention.value()[((1 * 3) + l) * 6 + y * 3 + x]);
  }
  CHECK_THROWS_AS(explanation_map(r, 3), std::out_of_range);
  CHECK_THROWS_AS(explanation_at(out, 2), std::out_of_range);
}

TEST_CASE("model input standardization and checkpoint rebuild") {
  ModelConfig c = tiny_model_config(1);
  c.input_mean = 0.25;
  c.input_std = 0.5;
  const Model m(c, 3);
  Rng rng(4);
  const Tensor x = random_tensor({2, 8, 8, 1}, rng, 0, 1, false);
  const Tensor shifted = Tensor(x.shape(), ((x.value().array() - 0.25) / 0.5).matrix());
  const HeadOutput direct = head_forward(m.features(shifted), *m.slot_head(), m.positional_embedding(), c.slot);
  CHECK(m.forward(x).logits.value() == direct.confidences.value());
  Checkpoint ck;
  ck.config = c.to_key_values();
  store_parameters(m.parameters(), ck);
  const Model back = model_from_checkpoint(ck);
  CHECK(back.config().input_std == 0.5);
  CHECK(back.forward(x).logits.value() == m.forward(x).logits.value());
}
