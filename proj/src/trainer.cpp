#include "scouter/trainer.hpp"

#include "scouter/metrics.hpp"
#include "scouter/text.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace scouter {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be > 0");
  if (!(lr_drop_factor > 0.0)) throw std::invalid_argument("train: lr_drop_factor must be > 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("train: weight_decay must be >= 0");
  if (lambda_warmup_epochs < 0) throw std::invalid_argument("train: lambda_warmup_epochs must be >= 0");
}

double TrainConfig::lambda_scale(double epoch) const {
  if (lambda_warmup_epochs == 0) return 1.0;
  return std::clamp(epoch / double(lambda_warmup_epochs), 0.0, 1.0);
}

KeyValues TrainConfig::to_key_values() const {
  return {{"train.epochs", std::to_string(epochs)},
          {"train.batch_size", std::to_string(batch_size)},
          {"train.lr", format_exact(lr)},
          {"train.lr_drop_epoch", std::to_string(lr_drop_epoch)},
          {"train.lr_drop_factor", format_exact(lr_drop_factor)},
          {"train.weight_decay", format_exact(weight_decay)},
          {"train.seed", std::to_string(seed)},
          {"train.augment_hflip", augment_hflip ? "1" : "0"},
          {"train.lambda_warmup_epochs", std::to_string(lambda_warmup_epochs)}};
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) {
  auto get = [&kv](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw std::invalid_argument("train config: missing key " + k);
    return it->second;
  };
  TrainConfig c;
  c.epochs = parse_index(get("train.epochs"));
  c.batch_size = parse_index(get("train.batch_size"));
  c.lr = parse_double(get("train.lr"));
  c.lr_drop_epoch = parse_index(get("train.lr_drop_epoch"));
  c.lr_drop_factor = parse_double(get("train.lr_drop_factor"));
  c.weight_decay = parse_double(get("train.weight_decay"));
  c.seed = std::stoull(get("train.seed"));
  c.augment_hflip = get("train.augment_hflip") == "1";
  c.lambda_warmup_epochs = parse_index(get("train.lambda_warmup_epochs"));
  return c;
}

std::string metrics_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,loss,val_acc,mean_area\n";
  for (const auto& e : log)
    out += std::to_string(e.epoch) + "," + format_fixed(e.loss, 8) + "," + format_fixed(e.val_acc, 6) + "," +
           format_fixed(e.mean_area, 8) + "\n";
  return out;
}

Evaluation evaluate(const Model& model, const LabeledDataset& data, Index batch_size) {
  if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  const Index n = model.config().num_classes();
  const bool slot = model.config().head == HeadKind::slot;
  const int sign = model.config().slot.sign;
  const Index H = model.config().image_height, W = model.config().image_width;
  const bool with_precision = slot && sign > 0 && data.masks.has_value();
  Index correct = 0;
  double area = 0.0, gt_mass = 0.0, other_mass = 0.0, prec = 0.0;
  for (Index start = 0; start < data.size(); start += batch_size) {
    const Index count = std::min(batch_size, data.size() - start);
    std::vector<Index> idx(static_cast<std::size_t>(count));
    std::iota(idx.begin(), idx.end(), start);
    const ModelOutput out = model.forward(make_batch(data, idx));
    const auto logits = out.logits.matrix(count, n);
    for (Index i = 0; i < count; ++i) {
      Index pred = 0;
      logits.row(i).maxCoeff(&pred);
      const Index y = data.labels[std::size_t(start + i)];
      if (pred == y) ++correct;
      if (!slot) continue;
      const Index s = out.height * out.width;
      const double* rows = out.attention->value().data() + i * n * s;
      auto map_of = [&](Index l) {
        return resize_bilinear(Eigen::Map<const RowMatrix<double>>(rows + l * s, out.height, out.width), H, W);
      };
      const Eigen::Map<const RowMatrix<double>> a(rows, n, s);
      gt_mass += a.row(y).sum();
      other_mass += (a.sum() - a.row(y).sum()) / double(n - 1);
      if (sign > 0) {
        const Eigen::MatrixXd r = map_of(y);
        area += area_size(r);
        if (with_precision) prec += precision(r, (*data.masks)[std::size_t(start + i)]).value;
      } else {
        double acc = 0.0;
        for (Index l = 0; l < n; ++l)
          if (l != y) acc += area_size(map_of(l));
        area += acc / double(n - 1);
      }
    }
  }
  Evaluation e;
  e.accuracy = double(correct) / double(data.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double count = double(data.size());
  e.mean_area = slot ? area / count : nan;
  e.mean_gt_attention = slot ? gt_mass / count : nan;
  e.mean_other_attention = slot ? other_mass / count : nan;
  e.mean_precision = with_precision ? prec / count : nan;
  return e;
}

namespace {

AdamWConfig adam_config(const TrainConfig& t) {
  AdamWConfig c;
  c.weight_decay = t.weight_decay;
  return c;
}

}  // namespace

Trainer::Trainer(ModelConfig model, LossConfig loss, TrainConfig train)
    : model_config_(std::move(model)),
      loss_(loss),
      train_(train),
      model_((train_.validate(), loss_.validate(), model_config_), mix_seed(train_.seed, 0)),
      optimizer_(model_.parameters(), adam_config(train_)),
      rng_(mix_seed(train_.seed, 1)) {
  if (model_config_.head == HeadKind::slot && loss_.sign != model_config_.slot.sign)
    throw std::invalid_argument("trainer: loss sign must match the head sign");
}

double Trainer::step(const LabeledDataset& data, std::span<const Index> indices, double lr, double lambda_scale) {
  std::vector<bool> flips;
  if (train_.augment_hflip) {
    flips.resize(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) flips[i] = (rng_() >> 63) != 0;
  }
  std::vector<Index> labels;
  labels.reserve(indices.size());
  for (Index i : indices) labels.push_back(data.labels[std::size_t(i)]);
  const Tensor batch = make_batch(data, indices, train_.augment_hflip ? &flips : nullptr);

  Tape tape;
  try {
    const ModelOutput out = model_.forward(batch);
    LossConfig loss_config = loss_;
    loss_config.lambda *= lambda_scale;
    const Tensor loss = out.attention ? total_loss(out.logits, labels, *out.attention, loss_config)
                                      : cross_entropy_loss(out.logits, labels);
    optimizer_.zero_grad();
    backward(loss);
    optimizer_.step(lr);
    return loss.item();
  } catch (const NumericError& e) {
    throw TrainingDiverged(std::string("training diverged: ") + e.what());
  }
}

const EpochLog& Trainer::run_epoch(const LabeledDataset& train, const LabeledDataset* val) {
  if (train.size() == 0) throw std::invalid_argument("trainer: empty training set");
  if (train.num_classes > model_config_.num_classes())
    throw std::invalid_argument("trainer: dataset has more classes than the model");
  std::vector<Index> order(std::size_t(train.size()));
  std::iota(order.begin(), order.end(), Index{0});
  for (Index i = train.size() - 1; i > 0; --i)
    std::swap(order[std::size_t(i)], order[std::size_t(rng_() % std::uint64_t(i + 1))]);

  const double lr = train_.learning_rate(epoch_);
  double total = 0.0;
  Index batches = 0;
  for (Index start = 0; start < train.size(); start += train_.batch_size) {
    const Index count = std::min(train_.batch_size, train.size() - start);
    const double position = double(epoch_) + double(start) / double(train.size());
    try {
      total += step(train, std::span<const Index>(order.data() + start, std::size_t(count)), lr,
                    train_.lambda_scale(position));
    } catch (const NumericError& e) {
      throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch_ + 1) + ", batch " +
                             std::to_string(batches + 1) + ": " + e.what());
    } catch (const TrainingDiverged& e) {
      throw TrainingDiverged(std::string(e.what()) + " at epoch " + std::to_string(epoch_ + 1) + ", batch " +
                             std::to_string(batches + 1));
    }
    ++batches;
  }
  ++epoch_;
  EpochLog entry;
  entry.epoch = epoch_;
  entry.loss = total / double(batches);
  if (val && val->size() > 0) {
    const Evaluation ev = evaluate(model_, *val);
    entry.val_acc = ev.accuracy;
    entry.mean_area = ev.mean_area;
  } else {
    entry.val_acc = std::numeric_limits<double>::quiet_NaN();
    entry.mean_area = std::numeric_limits<double>::quiet_NaN();
  }
  log_.push_back(entry);
  return log_.back();
}

void Trainer::fit(const LabeledDataset& train, const LabeledDataset* val,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  while (epoch_ < train_.epochs) {
    const EpochLog& e = run_epoch(train, val);
    if (on_epoch) on_epoch(e);
  }
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.config = model_config_.to_key_values();
  for (auto& [k, v] : train_.to_key_values()) ck.config[k] = v;
  ck.config["loss.lambda"] = format_exact(loss_.lambda);
  ck.config["loss.sign"] = std::to_string(loss_.sign);
  ck.config["loss.reduction"] = to_string(loss_.reduction);
  ck.config["state.epoch"] = std::to_string(epoch_);
  ck.config["state.optimizer_steps"] = std::to_string(optimizer_.steps());
  std::ostringstream rng_text;
  rng_text << rng_;
  ck.config["state.rng"] = rng_text.str();
  std::string log_text;
  for (const auto& e : log_)
    log_text += (log_text.empty() ? "" : ";") + std::to_string(e.epoch) + ":" + format_exact(e.loss) + ":" +
                format_exact(e.val_acc) + ":" + format_exact(e.mean_area);
  ck.config["state.log"] = log_text;

  const ParameterList params = model_.parameters();
  store_parameters(params, ck);
  const auto& moments = optimizer_.moments();
  for (std::size_t i = 0; i < params.size(); ++i) {
    ck.tensors.push_back({"optim.m." + params[i].name, params[i].tensor.shape(), moments[i].first});
    ck.tensors.push_back({"optim.v." + params[i].name, params[i].tensor.shape(), moments[i].second});
  }
  return ck;
}

Trainer Trainer::resume(const Checkpoint& ck) {
  LossConfig loss;
  loss.lambda = parse_double(ck.get("loss.lambda"));
  loss.sign = int(parse_index(ck.get("loss.sign")));
  loss.reduction = parse_area_reduction(ck.get("loss.reduction"));
  Trainer t(ModelConfig::from_key_values(ck.config), loss, TrainConfig::from_key_values(ck.config));
  const ParameterList params = t.model_.parameters();
  load_parameters(ck, params);
  auto& moments = t.optimizer_.moments();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* m = ck.find("optim.m." + params[i].name);
    const auto* v = ck.find("optim.v." + params[i].name);
    if (!m || !v) throw CheckpointError("checkpoint: missing optimizer state for " + params[i].name);
    moments[i].first = m->data;
    moments[i].second = v->data;
  }
  t.optimizer_.set_steps(parse_index(ck.get("state.optimizer_steps")));
  t.epoch_ = parse_index(ck.get("state.epoch"));
  std::istringstream rng_text(ck.get("state.rng"));
  rng_text >> t.rng_;
  const std::string& log_text = ck.get("state.log");
  if (!log_text.empty())
    for (const auto& item : split(log_text, ';')) {
      const auto f = split(item, ':');
      if (f.size() != 4) throw CheckpointError("checkpoint: malformed training log");
      t.log_.push_back({parse_index(f[0]), parse_double(f[1]), parse_double(f[2]), parse_double(f[3])});
    }
  return t;
}

TrainResult train(const LabeledDataset& train_set, const LabeledDataset& val_set, const ModelConfig& model,
                  const LossConfig& loss, const TrainConfig& config) {
  Trainer t(model, loss, config);
  t.fit(train_set, &val_set);
  return {t.checkpoint(), t.log()};
}

}  // namespace scouter
