#include "scouter/explain.hpp"

#include "scouter/dataset.hpp"
#include "scouter/parallel.hpp"

#include <numeric>
#include <stdexcept>

namespace scouter {

RowMatrix<double> ModelExplainer::probabilities(std::span<const Image> images) const {
  const Index n = model_.config().num_classes();
  RowMatrix<double> out(Index(images.size()), n);
  for (std::size_t start = 0; start < images.size(); start += std::size_t(max_batch_)) {
    const std::size_t count = std::min<std::size_t>(std::size_t(max_batch_), images.size() - start);
    const ModelOutput o = model_.forward(make_batch(images.subspan(start, count)));
    out.middleRows(Index(start), Index(count)) = softmax(o.logits).matrix(Index(count), n);
  }
  return out;
}

ExplanationResult ModelExplainer::explain(const Image& image) const {
  if (model_.config().head != HeadKind::slot) throw std::logic_error("explain: model has no slot head");
  const ModelOutput o = model_.forward(make_batch(std::span<const Image>(&image, 1)));
  return explanation_at({o.logits, *o.attention, o.height, o.width}, 0);
}

Eigen::MatrixXd ModelExplainer::relevance(const Image& image, Index category) const {
  return resize_bilinear(explanation_map(explain(image), category), image.height, image.width);
}

ConfidenceFn ModelExplainer::confidence_for(Index category) const {
  if (category < 0 || category >= model_.config().num_classes())
    throw std::out_of_range("confidence_for: category out of range");
  return [this, category](std::span<const Image> images) -> Eigen::VectorXd {
    return probabilities(images).col(category);
  };
}

ExplainerFn ModelExplainer::explainer_for(Index category) const {
  return [this, category](const Image& image) { return relevance(image, category); };
}

MetricReport evaluate_explanations(const Model& model, const LabeledDataset& data,
                                   const CategorySimilaritySource* similarity, const MetricOptions& options) {
  const bool negative = model.config().head == HeadKind::slot && model.config().slot.sign < 0;
  if (negative && similarity == nullptr)
    throw std::invalid_argument("metrics: negative explanations need a category similarity source");
  if (model.config().head != HeadKind::slot && !options.uniform_baseline)
    throw std::invalid_argument("metrics: FC models only support the uniform baseline");
  if (options.precision && !data.masks) throw std::invalid_argument("metrics: Precision requested but dataset has no masks");

  const ModelExplainer explainer(model);
  std::vector<std::vector<MetricRow>> per_sample(std::size_t(data.size()));
  parallel_for(data.size(), options.workers, [&](Index i) {
    const Image& x = data.images[std::size_t(i)];
    const Index y = data.labels[std::size_t(i)];
    const Index target = negative ? least_similar_category(y, *similarity) : y;
    Rng rng(mix_seed(options.seed, std::uint64_t(i)));
    auto& rows = per_sample[std::size_t(i)];
    auto emit = [&](const char* metric, double v) { rows.push_back({i, y, target, metric, v}); };

    const ExplainerFn explain_fn =
        options.uniform_baseline
            ? ExplainerFn([](const Image& im) { return Eigen::MatrixXd::Ones(im.height, im.width).eval(); })
            : explainer.explainer_for(target);
    double seconds = 0.0;
    Eigen::MatrixXd r;
    seconds = timed_explain([&](Index) { r = explain_fn(x); }, 1);
    const ConfidenceFn conf = explainer.confidence_for(target);

    if (options.precision) emit("precision", precision(r, (*data.masks)[std::size_t(i)]).value);
    if (options.curves) {
      emit("insertion", insertion_curve(conf, x, r, options.steps).auc);
      emit("deletion", deletion_curve(conf, x, r, options.steps).auc);
    }
    if (options.infidelity) emit("infidelity", infidelity(conf, x, r, options.infidelity_draws, options.sigma, rng));
    if (options.stability)
      emit("stability", stability(explain_fn, x, options.stability_noise, options.stability_draws, rng));
    emit("se", strength_of_explanation(r));
    emit("area_size", area_size(r));
    if (options.time) emit("time", seconds);
  });

  MetricReport report;
  for (auto& rows : per_sample) report.rows.insert(report.rows.end(), rows.begin(), rows.end());
  return report;
}

CategoryEmbeddings class_mean_embeddings(const Model& model, const LabeledDataset& data, Index batch_size) {
  const Index n = model.config().num_classes();
  const Index c = model.config().backbone.output_channels();
  RowMatrix<double> sums = RowMatrix<double>::Zero(n, c);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(n);
  for (Index start = 0; start < data.size(); start += batch_size) {
    const Index count = std::min(batch_size, data.size() - start);
    std::vector<Index> idx(static_cast<std::size_t>(count));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor pooled = global_avg_pool(model.features(make_batch(data, idx)));
    const auto m = pooled.matrix(count, c);
    for (Index i = 0; i < count; ++i) {
      const Index y = data.labels[std::size_t(start + i)];
      sums.row(y) += m.row(i);
      counts[y] += 1.0;
    }
  }
  for (Index l = 0; l < n; ++l) {
    if (counts[l] == 0.0) throw std::invalid_argument("class_mean_embeddings: category without samples");
    sums.row(l) /= counts[l];
  }
  return {sums};
}

}  // namespace scouter
