#include "symclone/downstream.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "symclone/ops.hpp"

namespace symclone {

Dataset make_translated_dataset(const Dataset& dataset, SeededRng& rng, int max_shift) {
  dataset.validate();
  if (max_shift < 0) throw Error("max_shift must be non-negative");
  Dataset out = dataset;
  out.meta.assign(static_cast<std::size_t>(dataset.size()), TransformMeta{});
  const std::int64_t plane = dataset.height() * dataset.width();
  auto dst = out.images.data<float>();
  for (std::int64_t i = 0; i < dataset.size(); ++i) {
    T2Element g;
    g.dy = static_cast<int>(rng.uniform_int(-max_shift, max_shift));
    g.dx = static_cast<int>(rng.uniform_int(-max_shift, max_shift));
    out.meta[static_cast<std::size_t>(i)] = {g.dy, g.dx, 0};
    Tensor img({dataset.height(), dataset.width()});
    auto src = dataset.images.data<float>();
    std::copy(src.begin() + i * plane, src.begin() + (i + 1) * plane, img.data<float>().begin());
    const Tensor moved = translate_image(img, g, Padding::zero_fill);
    std::copy(moved.data<float>().begin(), moved.data<float>().end(), dst.begin() + i * plane);
  }
  return out;
}

Dataset make_rotated_dataset(const Dataset& dataset, SeededRng& rng) {
  dataset.validate();
  if (dataset.height() != dataset.width()) throw ShapeError("rotated datasets need square images");
  Dataset out = dataset;
  out.meta.assign(static_cast<std::size_t>(dataset.size()), TransformMeta{});
  const std::int64_t plane = dataset.height() * dataset.width();
  auto dst = out.images.data<float>();
  for (std::int64_t i = 0; i < dataset.size(); ++i) {
    const C4Element g(static_cast<int>(rng.uniform_int(0, 3)));
    out.meta[static_cast<std::size_t>(i)] = {0, 0, g.k()};
    Tensor img({dataset.height(), dataset.width()});
    auto src = dataset.images.data<float>();
    std::copy(src.begin() + i * plane, src.begin() + (i + 1) * plane, img.data<float>().begin());
    const Tensor turned = rotate90_image(img, g);
    std::copy(turned.data<float>().begin(), turned.data<float>().end(), dst.begin() + i * plane);
  }
  return out;
}

int relabel_translation(int y, int dx) {
  if (y < 0 || y > 9) throw Error("digit label must be in 0..9, got " + std::to_string(y));
  return dx < 0 ? y : y + 10;
}

int relabel_rotation(int y, int k) {
  if (y < 0 || y > 9) throw Error("digit label must be in 0..9, got " + std::to_string(y));
  if (k < 0 || k > 3) throw Error("quarter-turn index must be in 0..3, got " + std::to_string(k));
  return k <= 1 ? y : y + 10;
}

TaskId parse_task_id(const std::string& name) {
  if (name == "t2-sym") return TaskId::t2_sym;
  if (name == "t2-break") return TaskId::t2_break;
  if (name == "c4-sym") return TaskId::c4_sym;
  if (name == "c4-break") return TaskId::c4_break;
  throw Error("unknown task '" + name + "'");
}

std::string to_string(TaskId id) {
  switch (id) {
    case TaskId::t2_sym: return "t2-sym";
    case TaskId::t2_break: return "t2-break";
    case TaskId::c4_sym: return "c4-sym";
    case TaskId::c4_break: return "c4-break";
  }
  return "?";
}

BenchmarkTask make_task(TaskId id, const Dataset& train, const Dataset& test, std::uint64_t seed, int max_shift) {
  BenchmarkTask task;
  task.id = id;
  task.group = id == TaskId::t2_sym || id == TaskId::t2_break ? GroupKind::t2 : GroupKind::c4;
  task.breaking = id == TaskId::t2_break || id == TaskId::c4_break;
  task.classes = task.breaking ? 20 : 10;
  SeededRng train_rng = SeededRng::stream(seed, 11);
  SeededRng test_rng = SeededRng::stream(seed, 12);
  const auto transform = [&](const Dataset& d, SeededRng& rng) {
    return task.group == GroupKind::t2 ? make_translated_dataset(d, rng, max_shift) : make_rotated_dataset(d, rng);
  };
  const auto relabel = [&](Dataset& d) {
    for (std::size_t i = 0; i < d.labels.size(); ++i) {
      d.labels[i] = task.group == GroupKind::t2 ? relabel_translation(d.labels[i], d.meta[i].dx)
                                                : relabel_rotation(d.labels[i], d.meta[i].k);
    }
  };
  if (task.breaking) {
    task.train = transform(train, train_rng);
    relabel(task.train);
    task.test = transform(test, test_rng);
    relabel(task.test);
  } else {
    task.train = train;
    task.test = transform(test, test_rng);
  }
  return task;
}

KlPenalty::KlPenalty(std::vector<ParamPtr> params, KlRegConfig config) : config_(config) {
  if (!(config_.beta >= 0.0)) throw Error("KL beta must be non-negative");
  if (!(config_.var_floor > 0.0)) throw Error("KL variance floor must be positive");
  for (const auto& p : params) {
    const double n = static_cast<double>(p->value.numel());
    double mean = 0.0;
    for (std::int64_t i = 0; i < p->value.numel(); ++i) mean += p->value.at(i);
    mean /= n;
    double var = 0.0;
    for (std::int64_t i = 0; i < p->value.numel(); ++i) var += (p->value.at(i) - mean) * (p->value.at(i) - mean);
    if (var / n <= config_.var_floor) continue;
    params_.push_back(p);
    mean0_.push_back(mean);
    var0_.push_back(var / n);
  }
}

Var KlPenalty::penalty(Tape& tape) const {
  if (params_.empty()) return tape.constant(Tensor::scalar(0.0));
  Var total;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Var theta = tape.param(params_[i]);
    const Var mu = ops::mean(theta);
    const Var var = ops::clamp_min(ops::mean(ops::square(ops::sub_broadcast(theta, mu))), config_.var_floor);
    const double v0 = var0_[i];
    const Var spread = ops::scale(ops::log(var), -0.5);
    const Var drift = ops::scale(ops::add(var, ops::square(ops::add_scalar(mu, -mean0_[i]))), 1.0 / (2.0 * v0));
    const Var kl = ops::add_scalar(ops::add(spread, drift), 0.5 * std::log(v0) - 0.5);
    total = total.valid() ? ops::add(total, kl) : kl;
  }
  return total;
}

double KlPenalty::value() const {
  Tape tape;
  return penalty(tape).value().item();
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train.epochs", "must be non-negative");
  if (batch < 1) throw ConfigError("train.batch", "must be positive");
  if (eval_batch < 1) throw ConfigError("train.eval_batch", "must be positive");
  if (!(optimizer.learning_rate > 0.0)) throw ConfigError("train.lr", "must be positive");
  if (!(kl.beta >= 0.0)) throw ConfigError("train.beta", "must be non-negative");
  if (!(kl.var_floor > 0.0)) throw ConfigError("train.var_floor", "must be positive");
  if (!(structure_lr_scale > 0.0)) throw ConfigError("train.structure_lr_scale", "must be positive");
}

namespace {

std::vector<std::int64_t> range(std::int64_t begin, std::int64_t end) {
  std::vector<std::int64_t> out;
  for (std::int64_t i = begin; i < end; ++i) out.push_back(i);
  return out;
}

std::int64_t count_correct(const Tensor& logits, std::span<const int> labels) {
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  std::int64_t correct = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t best = 0;
    for (std::int64_t j = 1; j < k; ++j) {
      if (logits.at(i * k + j) > logits.at(i * k + best)) best = j;
    }
    correct += best == labels[static_cast<std::size_t>(i)];
  }
  return correct;
}

}  // namespace

std::pair<double, double> evaluate(Classifier& model, const Dataset& data, std::int64_t batch) {
  if (data.size() == 0) throw Error("cannot evaluate on an empty dataset");
  double loss = 0.0;
  std::int64_t correct = 0;
  for (std::int64_t begin = 0; begin < data.size(); begin += batch) {
    const std::int64_t end = std::min(data.size(), begin + batch);
    const auto idx = range(begin, end);
    const std::span<const int> labels(data.labels.data() + begin, static_cast<std::size_t>(end - begin));
    Tape tape;
    const Var logits = model.forward(tape, tape.constant(data.batch_images(idx)));
    loss += ops::cross_entropy(logits, labels).value().item() * static_cast<double>(end - begin);
    correct += count_correct(logits.value(), labels);
  }
  return {loss / static_cast<double>(data.size()), static_cast<double>(correct) / static_cast<double>(data.size())};
}

TrainReport train_on_task(Classifier& model, const BenchmarkTask& task, const TrainConfig& config) {
  config.validate();
  task.train.validate();
  task.test.validate();
  if (model.classes() != task.classes) {
    throw ShapeError("model head has " + std::to_string(model.classes()) + " classes, task " + to_string(task.id) +
                     " needs " + std::to_string(task.classes));
  }
  if (task.train.size() == 0) throw Error("task has no training samples");
  const auto start = std::chrono::steady_clock::now();
  const auto params = model.parameters();
  apply_train_mode(params, config.mode);
  std::vector<ParamPtr> trainable, structure, rest;
  for (const auto& p : params) {
    if (p->trainable) trainable.push_back(p);
    (p->role == ParamRole::structure ? structure : rest).push_back(p);
  }
  OptimizerConfig structure_cfg = config.optimizer;
  structure_cfg.learning_rate *= config.structure_lr_scale;
  Optimizer optimizer(config.optimizer, rest);
  Optimizer structure_optimizer(structure_cfg, structure);
  const bool use_kl = config.mode == TrainMode::unfreeze && config.kl.beta > 0.0;
  std::unique_ptr<KlPenalty> kl;
  if (use_kl) kl = std::make_unique<KlPenalty>(trainable, config.kl);
  if (kl && kl->params().empty()) kl.reset();

  TrainReport report;
  const std::int64_t n = task.train.size();
  for (std::int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
    SeededRng order_rng = SeededRng::stream(config.seed, 100 + static_cast<std::uint64_t>(epoch));
    const auto perm = random_permutation(order_rng, n);
    double loss_sum = 0.0;
    std::int64_t correct = 0;
    for (std::int64_t begin = 0; begin < n; begin += config.batch) {
      const std::int64_t end = std::min(n, begin + config.batch);
      const std::vector<std::int64_t> idx(perm.begin() + begin, perm.begin() + end);
      std::vector<int> labels;
      for (auto j : idx) labels.push_back(task.train.labels[static_cast<std::size_t>(j)]);
      Tape tape;
      const Var logits = model.forward(tape, tape.constant(task.train.batch_images(idx)));
      const Var loss = ops::cross_entropy(logits, labels);
      const double lv = loss.value().item();
      if (!std::isfinite(lv)) {
        throw NumericError("non-finite training loss in epoch " + std::to_string(epoch) + " (seed " +
                           std::to_string(config.seed) + ")");
      }
      loss_sum += lv * static_cast<double>(end - begin);
      correct += count_correct(logits.value(), labels);
      optimizer.zero_grad();
      structure_optimizer.zero_grad();
      tape.backward(loss);
      optimizer.step();
      structure_optimizer.step();
      if (kl) {
        Tape kl_tape;
        for (const auto& p : trainable) p->zero_grad();
        kl_tape.backward(kl->penalty(kl_tape));
        for (const auto& p : trainable) {
          Tensor step = p->grad;
          step.scale_(-config.kl.beta);
          p->value.add_(step);
        }
      }
    }
    const double kl_value = kl ? kl->value() : 0.0;
    const double train_acc = static_cast<double>(correct) / static_cast<double>(n);
    report.rows.push_back({epoch, "train", train_acc, loss_sum / static_cast<double>(n), kl_value});
    const auto [test_loss, test_acc] = evaluate(model, task.test, config.eval_batch);
    report.rows.push_back({epoch, "test", test_acc, test_loss, kl_value});
    report.final_train_accuracy = train_acc;
    report.final_test_accuracy = test_acc;
  }
  if (config.epochs == 0) {
    const auto [test_loss, test_acc] = evaluate(model, task.test, config.eval_batch);
    report.rows.push_back({0, "test", test_acc, test_loss, 0.0});
    report.final_test_accuracy = test_acc;
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

void write_accuracy_csv(const TrainReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(9);
  out << "epoch,split,accuracy,loss,kl_penalty\n";
  for (const auto& r : report.rows) {
    out << r.epoch << ',' << r.split << ',' << r.accuracy << ',' << r.loss << ',' << r.kl_penalty << '\n';
  }
}

}  // namespace symclone
