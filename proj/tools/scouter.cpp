// scouter: train slot-attention classifiers, export explanations, score them.

#include "scouter/checkpoint.hpp"
#include "scouter/dataset.hpp"
#include "scouter/explain.hpp"
#include "scouter/image_io.hpp"
#include "scouter/parallel.hpp"
#include "scouter/text.hpp"
#include "scouter/trainer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using namespace scouter;

namespace {

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DataFlags {
  std::string where;
  Index train_limit = 0, val_limit = 0;
  Index shapes_train = 2000, shapes_val = 500, shapes_size = 28;
  std::uint64_t shapes_seed = 0;

  void add(CLI::App* app, bool required) {
    auto* o = app->add_option("--data", where, "IDX directory, image directory with train/ and val/, or 'shapes'");
    if (required) o->required();
    app->add_option("--train-limit", train_limit, "Use only the first N training samples (0 = all)");
    app->add_option("--val-limit", val_limit, "Use only the first N validation samples (0 = all)");
    app->add_option("--shapes-train", shapes_train, "Synthetic training set size");
    app->add_option("--shapes-val", shapes_val, "Synthetic validation set size");
    app->add_option("--shapes-size", shapes_size, "Synthetic image side length");
    app->add_option("--shapes-seed", shapes_seed, "Synthetic generator seed");
  }
  DataSplits load() const {
    DataSourceOptions o;
    o.train_limit = train_limit;
    o.val_limit = val_limit;
    o.shapes_train = shapes_train;
    o.shapes_val = shapes_val;
    o.shapes_size = shapes_size;
    o.shapes_seed = shapes_seed;
    return load_data_source(where, o);
  }
  KeyValues key_values() const {
    return {{"data.where", where},
            {"data.train_limit", std::to_string(train_limit)},
            {"data.val_limit", std::to_string(val_limit)},
            {"data.shapes_train", std::to_string(shapes_train)},
            {"data.shapes_val", std::to_string(shapes_val)},
            {"data.shapes_size", std::to_string(shapes_size)},
            {"data.shapes_seed", std::to_string(shapes_seed)}};
  }
};

struct ModelFlags {
  std::string head = "slot";
  int sign = 1;
  double lambda = 0.0;
  std::string area_reduction = "positions";
  Index slot_dim = 64, iterations = 3;
  bool no_gru = false, no_pe = false;
  std::string channels = "16,32,64", downsample = "2,2,1";
  Index kernel = 3, convs_per_stage = 1;
  TrainConfig train;

  void add(CLI::App* app, bool with_grid_fields) {
    app->add_option("--head", head, "Classifier head: slot or fc")->check(CLI::IsMember({"slot", "fc"}));
    if (with_grid_fields) {
      app->add_option("--e", sign, "Explanation sign: +1 positive, -1 negative");
      app->add_option("--lambda", lambda, "Area-loss weight (>= 0)");
      app->add_flag("--no-gru", no_gru, "Single attention pass without the GRU update");
      app->add_flag("--no-pe", no_pe, "Drop the positional embedding");
    }
    app->add_option("--area-reduction", area_reduction, "Area-loss reduction per sample: sum, positions or entries")
        ->check(CLI::IsMember({"sum", "positions", "entries"}));
    app->add_option("--slot-dim", slot_dim, "Slot / key dimension d");
    app->add_option("--iterations", iterations, "Slot attention iterations T");
    app->add_option("--channels", channels, "Backbone stage widths, comma separated");
    app->add_option("--downsample", downsample, "Backbone per-stage strides, comma separated");
    app->add_option("--kernel", kernel, "Backbone kernel size");
    app->add_option("--convs-per-stage", convs_per_stage, "Conv layers per backbone stage");
    app->add_option("--epochs", train.epochs, "Training epochs");
    app->add_option("--batch-size", train.batch_size, "Mini-batch size");
    app->add_option("--lr", train.lr, "AdamW learning rate");
    app->add_option("--lr-drop-epoch", train.lr_drop_epoch, "Epoch index from which the learning rate is dropped");
    app->add_option("--lr-drop-factor", train.lr_drop_factor, "Multiplier applied at the drop");
    app->add_option("--weight-decay", train.weight_decay, "Decoupled weight decay");
    app->add_flag("--hflip", train.augment_hflip, "Random horizontal flips");
    app->add_option("--lambda-warmup", train.lambda_warmup_epochs, "Epochs over which lambda ramps up from 0");
  }

  /// `sample` is the training split; it also fixes the input standardization.
  ModelConfig model_config(const LabeledDataset& sample) const {
    ModelConfig m;
    const PixelStatistics stats = pixel_statistics(sample);
    m.input_mean = stats.mean;
    m.input_std = stats.std;
    m.image_height = sample.images.at(0).height;
    m.image_width = sample.images.at(0).width;
    m.backbone.input_channels = sample.images.at(0).channels;
    m.backbone.stage_channels = parse_index_list(channels);
    m.backbone.downsample = parse_index_list(downsample);
    m.backbone.kernel_size = kernel;
    m.backbone.convs_per_stage = convs_per_stage;
    m.head = parse_head_kind(head);
    m.slot.num_classes = sample.num_classes;
    m.slot.slot_dim = slot_dim;
    m.slot.iterations = iterations;
    m.slot.sign = sign;
    m.slot.use_gru = !no_gru;
    m.slot.use_pe = !no_pe;
    m.validate();
    return m;
  }
  LossConfig loss_config() const {
    LossConfig l;
    l.lambda = lambda;
    l.sign = sign;
    l.reduction = parse_area_reduction(area_reduction);
    l.validate();
    return l;
  }
};

std::string hash_hex(const KeyValues& kv) {
  std::string text;
  for (const auto& [k, v] : kv) text += k + "=" + v + "\n";
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text)));
  return buf;
}

/// Records artifacts of one command invocation under `dir`.
class Manifest {
 public:
  explicit Manifest(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }
  fs::path path(const std::string& name) const { return dir_ / name; }
  void add(const std::string& name, const std::string& config_hash) { entries_.emplace_back(name, config_hash); }
  void write() const {
    std::string text = "# artifact config_hash\n";
    for (const auto& [name, h] : entries_) text += name + " " + h + "\n";
    write_text(dir_ / "manifest.txt", text);
  }
  static void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + p.string());
  }

 private:
  fs::path dir_;
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Applies a flat key=value file to options not given on the command line.
void apply_config_file(CLI::App* app, const std::string& file) {
  if (file.empty()) return;
  std::istringstream lines(read_text(file));
  std::string line;
  while (std::getline(lines, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw UsageError("config: expected key=value, got '" + t + "'");
    const std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
    CLI::Option* opt = app->get_option_no_throw("--" + key);
    if (opt == nullptr || key == "config") throw UsageError("config: unknown key '" + key + "'");
    if (opt->count() == 0) {
      opt->add_result(value);
      opt->run_callback();
    }
  }
}

KeyValues merged(std::initializer_list<KeyValues> parts) {
  KeyValues out;
  for (const auto& p : parts) out.insert(p.begin(), p.end());
  return out;
}

// ---- train ----------------------------------------------------------------

struct TrainCmd {
  DataFlags data;
  ModelFlags model;
  std::string out, config;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    data.add(app, true);
    model.add(app, true);
    app->add_option("--seed", seed, "Seed for initialization and shuffling");
    app->add_option("--out", out, "Output directory")->required();
    app->add_option("--config", config, "Flat key=value file; flags override its keys");
  }

  int run() {
    model.train.seed = seed;
    model.train.validate();
    const LossConfig loss = model.loss_config();
    const DataSplits splits = data.load();
    const ModelConfig mc = model.model_config(splits.train);

    Trainer trainer(mc, loss, model.train);
    trainer.fit(splits.train, &splits.val, [](const EpochLog& e) {
      std::cerr << "epoch " << e.epoch << " loss " << format_fixed(e.loss, 6) << " val_acc "
                << format_fixed(e.val_acc, 4) << " mean_area " << format_fixed(e.mean_area, 6) << "\n";
    });

    Manifest manifest(out);
    const Checkpoint ckpt = trainer.checkpoint();
    const std::string h = hash_hex(merged({ckpt_config_without_state(ckpt), data.key_values()}));
    ckpt.save(manifest.path("model.ckpt"));
    manifest.add("model.ckpt", h);
    Manifest::write_text(manifest.path("metrics.csv"), metrics_csv(trainer.log()));
    manifest.add("metrics.csv", h);
    manifest.write();

    const EpochLog& last = trainer.log().back();
    std::cout << "final epoch=" << last.epoch << " loss=" << format_fixed(last.loss, 6)
              << " val_acc=" << format_fixed(last.val_acc, 6) << " mean_area=" << format_fixed(last.mean_area, 6)
              << " config_hash=" << h << "\n";
    return 0;
  }

  static KeyValues ckpt_config_without_state(const Checkpoint& ckpt) {
    KeyValues kv;
    for (const auto& [k, v] : ckpt.config)
      if (k.rfind("state.", 0) != 0) kv.emplace(k, v);
    return kv;
  }
};

// ---- explain --------------------------------------------------------------

struct ExplainCmd {
  DataFlags data;
  std::string checkpoint, out, split = "val", images = "0", category = "pred", image_file, config;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    app->add_option("--checkpoint", checkpoint, "Trained model")->required();
    data.add(app, false);
    app->add_option("--split", split, "Dataset split to draw images from")->check(CLI::IsMember({"train", "val"}));
    app->add_option("--images", images, "Comma-separated sample indices");
    app->add_option("--image", image_file, "Explain a single PGM/PNG file instead of dataset samples");
    app->add_option("--category", category, "Category index list, 'pred', 'gt' or 'all'");
    app->add_option("--seed", seed, "Unused by explain; accepted for uniformity");
    app->add_option("--out", out, "Output directory")->required();
    app->add_option("--config", config, "Flat key=value file; flags override its keys");
  }

  int run() {
    if (!fs::exists(checkpoint)) throw std::runtime_error("checkpoint not found: " + checkpoint);
    const Checkpoint ckpt = Checkpoint::load(checkpoint);
    const Model model = model_from_checkpoint(ckpt);
    if (model.config().head != HeadKind::slot) throw std::runtime_error("explain: checkpoint has an FC head");
    const ModelExplainer explainer(model);
    const Index n = model.config().num_classes();
    const std::string suffix = model.config().slot.sign > 0 ? "pos" : "neg";

    std::vector<std::pair<std::string, Image>> inputs;
    std::vector<Index> truth;
    if (!image_file.empty()) {
      inputs.emplace_back(fs::path(image_file).stem().string(), read_image(image_file));
      truth.push_back(-1);
    } else {
      if (data.where.empty()) throw UsageError("explain: --data or --image is required");
      const DataSplits splits = data.load();
      const LabeledDataset& set = split == "train" ? splits.train : splits.val;
      for (Index i : parse_index_list(images)) {
        if (i < 0 || i >= set.size()) throw std::out_of_range("explain: image index " + std::to_string(i) + " out of range");
        inputs.emplace_back(split + std::to_string(i), set.images[std::size_t(i)]);
        truth.push_back(set.labels[std::size_t(i)]);
      }
    }

    Manifest manifest(out);
    const std::string h = hash_hex(ckpt.config);
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const auto& [name, image] = inputs[k];
      const ExplanationResult ex = explainer.explain(image);
      std::vector<Index> cats;
      if (category == "all") {
        for (Index l = 0; l < n; ++l) cats.push_back(l);
      } else if (category == "pred") {
        Index p = 0;
        ex.confidences.maxCoeff(&p);
        cats.push_back(p);
      } else if (category == "gt") {
        if (truth[k] < 0) throw UsageError("explain: --category gt needs dataset images");
        cats.push_back(truth[k]);
      } else {
        cats = parse_index_list(category);
      }
      for (Index l : cats) {
        if (l < 0 || l >= n) throw std::out_of_range("explain: category " + std::to_string(l) + " out of range");
        const Eigen::MatrixXd r = resize_bilinear(explanation_map(ex, l), image.height, image.width);
        const double peak = r.maxCoeff();
        const std::string stem = name + "_" + std::to_string(l) + "_" + suffix;
        write_pgm(manifest.path(stem + ".pgm"), peak > 0.0 ? Eigen::MatrixXd(r / peak) : r);
        std::string csv;
        for (Index y = 0; y < r.rows(); ++y) {
          for (Index x = 0; x < r.cols(); ++x) csv += (x ? "," : "") + format_exact(r(y, x));
          csv += "\n";
        }
        Manifest::write_text(manifest.path(stem + ".csv"), csv);
        manifest.add(stem + ".pgm", h);
        manifest.add(stem + ".csv", h);
        std::cout << stem << " confidence=" << format_fixed(ex.confidences[l], 6) << "\n";
      }
    }
    manifest.write();
    return 0;
  }
};

// ---- metrics --------------------------------------------------------------

struct MetricsCmd {
  DataFlags data;
  std::string checkpoint, out, split = "val", baseline = "model", taxonomy, config;
  Index limit = 100;
  MetricOptions options;
  bool skip_time = false, no_precision = false;

  void add(CLI::App* app) {
    app->add_option("--checkpoint", checkpoint, "Trained model")->required();
    data.add(app, true);
    app->add_option("--split", split, "Dataset split to evaluate")->check(CLI::IsMember({"train", "val"}));
    app->add_option("--limit", limit, "Evaluate the first N samples (0 = all)");
    app->add_option("--baseline", baseline, "Relevance source: model or uniform")
        ->check(CLI::IsMember({"model", "uniform"}));
    app->add_option("--taxonomy", taxonomy, "Category tree for least-similar-category selection");
    app->add_option("--steps", options.steps, "Insertion/deletion steps");
    app->add_option("--infidelity-draws", options.infidelity_draws, "Monte-Carlo draws for infidelity");
    app->add_option("--sigma", options.sigma, "Infidelity perturbation std");
    app->add_option("--stability-noise", options.stability_noise, "Stability noise, fraction of dynamic range");
    app->add_option("--stability-draws", options.stability_draws, "Stability draws");
    app->add_flag("--skip-time", skip_time, "Omit wall-clock timing rows (byte-identical reruns)");
    app->add_flag("--no-precision", no_precision, "Skip Precision (datasets without masks)");
    app->add_option("--seed", options.seed, "Seed for perturbation draws");
    app->add_option("--out", out, "Output directory")->required();
    app->add_option("--config", config, "Flat key=value file; flags override its keys");
  }

  int run() {
    if (!fs::exists(checkpoint)) throw std::runtime_error("checkpoint not found: " + checkpoint);
    const Checkpoint ckpt = Checkpoint::load(checkpoint);
    const Model model = model_from_checkpoint(ckpt);
    const DataSplits splits = data.load();
    LabeledDataset set = split == "train" ? splits.train : splits.val;
    if (limit > 0) set = set.head(limit);

    options.uniform_baseline = baseline == "uniform";
    options.time = !skip_time;
    options.precision = !no_precision;
    options.workers = worker_count();
    std::optional<CategorySimilaritySource> similarity;
    if (!taxonomy.empty())
      similarity = Taxonomy::parse(read_text(taxonomy));
    else if (model.config().head == HeadKind::slot && model.config().slot.sign < 0)
      similarity = class_mean_embeddings(model, splits.train);

    const MetricReport report =
        evaluate_explanations(model, set, similarity ? &*similarity : nullptr, options);
    Manifest manifest(out);
    KeyValues kv = ckpt.config;
    kv["metrics.baseline"] = baseline;
    kv["metrics.seed"] = std::to_string(options.seed);
    kv["metrics.steps"] = std::to_string(options.steps);
    kv["metrics.limit"] = std::to_string(limit);
    Manifest::write_text(manifest.path("metrics.csv"), report.to_csv());
    manifest.add("metrics.csv", hash_hex(merged({kv, data.key_values()})));
    manifest.write();
    for (const auto& [metric, s] : report.aggregate())
      std::cout << metric << " mean=" << format_fixed(s.mean, 6) << " std=" << format_fixed(s.stddev, 6) << " n=" << s.count
                << "\n";
    return 0;
  }
};

// ---- sweep ----------------------------------------------------------------

struct SweepCmd {
  DataFlags data;
  ModelFlags model;
  std::string out, lambdas = "0,1,3,10", variants = "+1", gru = "on", pe = "on", config;
  Index seeds = 5;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    data.add(app, true);
    model.add(app, false);
    app->add_option("--lambdas", lambdas, "Area-loss weights, comma separated");
    app->add_option("--variants", variants, "Explanation signs, subset of +1,-1");
    app->add_option("--gru", gru, "GRU settings, subset of on,off");
    app->add_option("--pe", pe, "Positional embedding settings, subset of on,off");
    app->add_option("--seeds", seeds, "Seeds per grid point, counted up from --seed");
    app->add_option("--seed", seed, "First seed");
    app->add_option("--out", out, "Output directory; an existing sweep.csv is resumed")->required();
    app->add_option("--config", config, "Flat key=value file; flags override its keys");
  }

  static std::vector<bool> switches(const std::string& text, const char* what) {
    std::vector<bool> out;
    for (const auto& s : split(text, ',')) {
      const std::string t = trim(s);
      if (t == "on") out.push_back(true);
      else if (t == "off") out.push_back(false);
      else throw UsageError(std::string("sweep: --") + what + " takes on/off values");
    }
    return out;
  }

  int run() {
    if (seeds < 1) throw UsageError("sweep: --seeds must be >= 1");
    const std::vector<double> grid = parse_double_list(lambdas);
    std::vector<int> signs;
    for (const auto& s : split(variants, ',')) {
      const Index v = parse_index(trim(s));
      if (v != 1 && v != -1) throw UsageError("sweep: --variants takes +1/-1");
      signs.push_back(int(v));
    }
    const std::vector<bool> grus = switches(gru, "gru"), pes = switches(pe, "pe");
    for (double l : grid)
      if (!(l >= 0.0)) throw UsageError("sweep: lambda must be >= 0");

    Manifest manifest(out);
    const fs::path csv_path = manifest.path("sweep.csv");
    const std::string header = "lambda,sign,gru,pe,seed,val_acc,mean_area,mean_precision,config_hash";
    std::set<std::string> done;
    if (fs::exists(csv_path)) {
      std::istringstream lines(read_text(csv_path));
      std::string line;
      std::getline(lines, line);
      if (trim(line) != header) throw std::runtime_error("sweep: existing sweep.csv has a different header");
      while (std::getline(lines, line)) {
        const auto f = split(line, ',');
        if (f.size() == 9) done.insert(f[0] + "," + f[1] + "," + f[2] + "," + f[3] + "," + f[4]);
      }
    } else {
      Manifest::write_text(csv_path, header + "\n");
    }

    const DataSplits splits = data.load();
    fs::create_directories(manifest.path("points"));
    Index trained = 0, skipped = 0;
    for (int sign : signs)
      for (bool g : grus)
        for (bool p : pes)
          for (double l : grid)
            for (Index k = 0; k < seeds; ++k) {
              const std::uint64_t s = seed + std::uint64_t(k);
              const std::string key = format_exact(l) + "," + std::to_string(sign) + "," + (g ? "on" : "off") + "," +
                                      (p ? "on" : "off") + "," + std::to_string(s);
              if (done.count(key)) {
                ++skipped;
                continue;
              }
              ModelFlags point = model;
              point.sign = sign;
              point.lambda = l;
              point.no_gru = !g;
              point.no_pe = !p;
              point.train.seed = s;
              const TrainResult r =
                  scouter::train(splits.train, splits.val, point.model_config(splits.train), point.loss_config(), point.train);
              const Model m = model_from_checkpoint(r.checkpoint);
              const Evaluation ev = evaluate(m, splits.val);
              const std::string h = hash_hex(merged({TrainCmd::ckpt_config_without_state(r.checkpoint), data.key_values()}));
              r.checkpoint.save(manifest.path("points/" + h + ".ckpt"));
              std::ofstream app_out(csv_path, std::ios::binary | std::ios::app);
              app_out << key << "," << format_fixed(ev.accuracy, 6) << "," << format_fixed(ev.mean_area, 8) << ","
                      << format_fixed(ev.mean_precision, 8) << "," << h << "\n";
              if (!app_out) throw std::runtime_error("cannot append to " + csv_path.string());
              std::cerr << "point " << key << " val_acc " << format_fixed(ev.accuracy, 4) << "\n";
              ++trained;
            }

    // Manifest covers every finished point, including resumed ones.
    std::istringstream lines(read_text(csv_path));
    std::string line;
    std::getline(lines, line);
    while (std::getline(lines, line)) {
      const auto f = split(line, ',');
      if (f.size() == 9) manifest.add("points/" + f[8] + ".ckpt", f[8]);
    }
    manifest.add("sweep.csv", hash_hex(merged({data.key_values(), {{"sweep.lambdas", lambdas}, {"sweep.variants", variants},
                                                                   {"sweep.gru", gru}, {"sweep.pe", pe},
                                                                   {"sweep.seeds", std::to_string(seeds)},
                                                                   {"sweep.seed", std::to_string(seed)}}})));
    manifest.write();
    std::cout << "sweep trained=" << trained << " skipped=" << skipped << "\n";
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  retain_heap_memory();
  CLI::App app{"Slot-attention classifier with positive and negative explanations"};
  app.require_subcommand(1);

  TrainCmd train_cmd;
  ExplainCmd explain_cmd;
  MetricsCmd metrics_cmd;
  SweepCmd sweep_cmd;
  CLI::App* train_app = app.add_subcommand("train", "Train a model; writes model.ckpt and metrics.csv");
  CLI::App* explain_app = app.add_subcommand("explain", "Write relevance maps as PGM plus raw CSV");
  CLI::App* metrics_app = app.add_subcommand("metrics", "Score explanations; writes metrics.csv");
  CLI::App* sweep_app = app.add_subcommand("sweep", "Train a grid of lambda / sign / ablation points");
  train_cmd.add(train_app);
  explain_cmd.add(explain_app);
  metrics_cmd.add(metrics_app);
  sweep_cmd.add(sweep_app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (train_app->parsed()) {
      apply_config_file(train_app, train_cmd.config);
      return train_cmd.run();
    }
    if (explain_app->parsed()) {
      apply_config_file(explain_app, explain_cmd.config);
      return explain_cmd.run();
    }
    if (metrics_app->parsed()) {
      apply_config_file(metrics_app, metrics_cmd.config);
      return metrics_cmd.run();
    }
    apply_config_file(sweep_app, sweep_cmd.config);
    return sweep_cmd.run();
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    // Config validation failures are usage errors.
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
