#include "scouter/metrics.hpp"

#include "scouter/text.hpp"

#include <limits>
#include <sstream>
#include <stdexcept>

namespace scouter {

std::vector<Index> relevance_order(const Eigen::MatrixXd& relevance) {
  const Index h = relevance.rows(), w = relevance.cols();
  std::vector<Index> order(std::size_t(h * w));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return relevance(a / w, a % w) > relevance(b / w, b % w); });
  return order;
}

double trapezoid_auc(std::span<const double> ys) {
  if (ys.size() < 2) throw std::invalid_argument("trapezoid_auc: need at least two points");
  const double dx = 1.0 / double(ys.size() - 1);
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < ys.size(); ++i) area += 0.5 * (ys[i] + ys[i + 1]) * dx;
  return area;
}

namespace {

void check_map(const Image& image, const Eigen::MatrixXd& relevance, const char* who) {
  if (relevance.rows() != image.height || relevance.cols() != image.width)
    throw ShapeError(std::string(who) + ": relevance map must match the image resolution");
}

void copy_pixel(const Image& from, Image& to, Index pixel) {
  const Index c = from.channels;
  to.pixels.segment(pixel * c, c) = from.pixels.segment(pixel * c, c);
}

CurveResult run_curve(const ConfidenceFn& confidence, const Image& image, const Eigen::MatrixXd& relevance,
                      Index steps, bool insertion) {
  if (steps < 2) throw std::invalid_argument("insertion/deletion: steps must be >= 2");
  check_map(image, relevance, insertion ? "insertion_curve" : "deletion_curve");
  const auto order = relevance_order(relevance);
  const Index total = image.pixel_count();
  std::vector<Image> frames;
  frames.reserve(std::size_t(steps + 1));
  Image canvas = insertion ? Image(image.height, image.width, image.channels) : image;
  const Image blank(image.height, image.width, image.channels);
  Index done = 0;
  for (Index k = 0; k <= steps; ++k) {
    const Index target = k * total / steps;
    for (; done < target; ++done) copy_pixel(insertion ? image : blank, canvas, order[std::size_t(done)]);
    frames.push_back(canvas);
  }
  const Eigen::VectorXd c = confidence(frames);
  if (c.size() != steps + 1) throw ShapeError("confidence function returned the wrong number of values");
  CurveResult out;
  out.confidences.assign(c.data(), c.data() + c.size());
  out.auc = trapezoid_auc(out.confidences);
  return out;
}

}  // namespace

CurveResult insertion_curve(const ConfidenceFn& confidence, const Image& image, const Eigen::MatrixXd& relevance,
                            Index steps) {
  return run_curve(confidence, image, relevance, steps, true);
}

CurveResult deletion_curve(const ConfidenceFn& confidence, const Image& image, const Eigen::MatrixXd& relevance,
                           Index steps) {
  return run_curve(confidence, image, relevance, steps, false);
}

double infidelity(const ConfidenceFn& confidence, const Image& image, const Eigen::MatrixXd& relevance,
                  Index num_draws, double sigma, Rng& rng) {
  if (num_draws < 1) throw std::invalid_argument("infidelity: num_draws must be >= 1");
  check_map(image, relevance, "infidelity");
  std::normal_distribution<double> noise(0.0, sigma);
  const Index c = image.channels;
  std::vector<Image> batch{image};
  std::vector<double> explained;
  for (Index k = 0; k < num_draws; ++k) {
    Image perturbed = image;
    double dot = 0.0;
    for (Index y = 0; y < image.height; ++y)
      for (Index x = 0; x < image.width; ++x) {
        const double phi = noise(rng);
        dot += phi * relevance(y, x);
        for (Index ch = 0; ch < c; ++ch) perturbed.at(y, x, ch) -= phi;
      }
    explained.push_back(dot);
    batch.push_back(std::move(perturbed));
  }
  const Eigen::VectorXd conf = confidence(batch);
  if (conf.size() != num_draws + 1) throw ShapeError("confidence function returned the wrong number of values");
  double total = 0.0;
  for (Index k = 0; k < num_draws; ++k) {
    const double gap = explained[std::size_t(k)] - (conf[0] - conf[k + 1]);
    total += gap * gap;
  }
  return total / double(num_draws);
}

double stability(const ExplainerFn& explainer, const Image& image, double noise_scale, Index num_draws, Rng& rng) {
  if (!(noise_scale > 0.0)) throw std::invalid_argument("stability: noise_scale must be > 0");
  if (num_draws < 1) throw std::invalid_argument("stability: num_draws must be >= 1");
  const double range = image.pixels.size() ? image.pixels.maxCoeff() - image.pixels.minCoeff() : 0.0;
  std::normal_distribution<double> noise(0.0, noise_scale * (range > 0.0 ? range : 1.0));
  const Eigen::MatrixXd base = explainer(image);
  double total = 0.0;
  for (Index k = 0; k < num_draws; ++k) {
    Image moved = image;
    for (Index i = 0; i < moved.pixels.size(); ++i) moved.pixels[i] += noise(rng);
    const double denom = (moved.pixels - image.pixels).norm();
    if (denom == 0.0) {
      --k;  // resample
      continue;
    }
    total += (explainer(moved) - base).norm() / denom;
  }
  return total / double(num_draws);
}

double timed_explain(const std::function<void(Index)>& explain_one, Index count) {
  if (count < 1) throw std::invalid_argument("timed_explain: need at least one sample");
  double seconds = 0.0;
  for (Index i = 0; i < count; ++i) {
    const auto start = std::chrono::steady_clock::now();
    explain_one(i);
    seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return seconds / double(count);
}

// --- category similarity ------------------------------------------------------

Index Taxonomy::add_node(const std::string& name, Index parent) {
  if (parent < -1 || parent >= Index(names_.size())) throw std::out_of_range("taxonomy: unknown parent");
  if (parent == -1 && !names_.empty()) throw std::invalid_argument("taxonomy: a second root '" + name + "'");
  for (const auto& n : names_)
    if (n == name) throw std::invalid_argument("taxonomy: duplicate node '" + name + "'");
  names_.push_back(name);
  parents_.push_back(parent);
  return Index(names_.size()) - 1;
}

Index Taxonomy::node(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return Index(i);
  throw std::out_of_range("taxonomy: unknown node '" + name + "'");
}

void Taxonomy::assign(Index category, Index node) {
  if (category < 0) throw std::out_of_range("taxonomy: negative category");
  if (node < 0 || node >= Index(names_.size())) throw std::out_of_range("taxonomy: unknown node");
  if (Index(category_nodes_.size()) <= category) category_nodes_.resize(std::size_t(category + 1), -1);
  category_nodes_[std::size_t(category)] = node;
}

Index Taxonomy::depth(Index node) const {
  Index d = 0;
  for (; node != -1; node = parents_.at(std::size_t(node))) ++d;
  return d;
}

Index Taxonomy::lowest_common_ancestor(Index a, Index b) const {
  Index da = depth(a), db = depth(b);
  while (da > db) a = parents_[std::size_t(a)], --da;
  while (db > da) b = parents_[std::size_t(b)], --db;
  while (a != b) {
    a = parents_[std::size_t(a)];
    b = parents_[std::size_t(b)];
  }
  return a;
}

bool Taxonomy::has_category(Index category) const {
  return category >= 0 && category < Index(category_nodes_.size()) && category_nodes_[std::size_t(category)] >= 0;
}

Index Taxonomy::category_node(Index category) const {
  if (!has_category(category)) throw std::out_of_range("taxonomy: category " + std::to_string(category) + " not present");
  return category_nodes_[std::size_t(category)];
}

double Taxonomy::wu_palmer(Index category_a, Index category_b) const {
  const Index a = category_node(category_a), b = category_node(category_b);
  return 2.0 * double(depth(lowest_common_ancestor(a, b))) / double(depth(a) + depth(b));
}

Taxonomy Taxonomy::parse(const std::string& text) {
  Taxonomy t;
  std::istringstream in(text);
  Index line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind, a, b;
    ls >> kind >> a >> b;
    if (kind == "node" && !a.empty() && !b.empty()) {
      t.add_node(a, b == "-" ? -1 : t.node(b));
    } else if (kind == "category" && !a.empty() && !b.empty()) {
      t.assign(parse_index(a), t.node(b));
    } else {
      throw std::invalid_argument("taxonomy line " + std::to_string(line_no) + ": cannot parse '" + line + "'");
    }
  }
  return t;
}

double category_similarity(Index a, Index b, const CategorySimilaritySource& source) {
  if (const auto* tax = std::get_if<Taxonomy>(&source)) return tax->wu_palmer(a, b);
  const auto& emb = std::get<CategoryEmbeddings>(source).vectors;
  if (a < 0 || b < 0 || a >= emb.rows() || b >= emb.rows()) throw std::out_of_range("embeddings: category out of range");
  const double na = emb.row(a).norm(), nb = emb.row(b).norm();
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("embeddings: zero vector");
  return emb.row(a).dot(emb.row(b)) / (na * nb);
}

Index least_similar_category(Index y, const CategorySimilaritySource& source) {
  Index n = 0;
  if (const auto* tax = std::get_if<Taxonomy>(&source)) {
    if (!tax->has_category(y)) throw std::out_of_range("least_similar_category: category missing from taxonomy");
    n = tax->num_categories();
  } else {
    n = std::get<CategoryEmbeddings>(source).vectors.rows();
    if (y < 0 || y >= n) throw std::out_of_range("least_similar_category: category missing from embeddings");
  }
  if (n < 2) throw std::invalid_argument("least_similar_category: need at least two categories");
  Index best = -1;
  double best_sim = std::numeric_limits<double>::infinity();
  for (Index l = 0; l < n; ++l) {
    if (l == y) continue;
    if (const auto* tax = std::get_if<Taxonomy>(&source); tax && !tax->has_category(l)) continue;
    const double s = category_similarity(y, l, source);
    if (s < best_sim) {
      best_sim = s;
      best = l;
    }
  }
  return best;
}

// --- reports -------------------------------------------------------------------

std::map<std::string, MetricSummary> MetricReport::aggregate() const {
  std::map<std::string, std::vector<double>> values;
  for (const auto& r : rows) values[r.metric].push_back(r.value);
  std::map<std::string, MetricSummary> out;
  for (const auto& [metric, v] : values) {
    MetricSummary s;
    s.count = Index(v.size());
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
    if (v.size() > 1) {
      double ss = 0.0;
      for (double x : v) ss += (x - s.mean) * (x - s.mean);
      s.stddev = std::sqrt(ss / double(v.size() - 1));
    }
    out[metric] = s;
  }
  return out;
}

std::string MetricReport::to_csv() const {
  std::string out = "sample_id,category,target,metric,value\n";
  for (const auto& r : rows)
    out += std::to_string(r.sample_id) + "," + std::to_string(r.category) + "," + std::to_string(r.target) + "," +
           r.metric + "," + format_exact(r.value) + "\n";
  for (const auto& [metric, s] : aggregate()) {
    out += "mean,-,-," + metric + "," + format_exact(s.mean) + "\n";
    out += "std,-,-," + metric + "," + format_exact(s.stddev) + "\n";
  }
  return out;
}

MetricReport MetricReport::from_csv(const std::string& text) {
  MetricReport report;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 5) throw std::invalid_argument("metric csv: bad row '" + line + "'");
    if (f[0] == "mean" || f[0] == "std") continue;
    report.rows.push_back({parse_index(f[0]), parse_index(f[1]), parse_index(f[2]), f[3], parse_double(f[4])});
  }
  return report;
}

}  // namespace scouter
