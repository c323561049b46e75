#include "symclone/cloning.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "symclone/ops.hpp"

namespace symclone {

TeacherKind parse_teacher_kind(const std::string& name) {
  if (name == "conv") return TeacherKind::conv;
  if (name == "lifting") return TeacherKind::lifting;
  if (name == "groupconv") return TeacherKind::groupconv;
  throw Error("unknown teacher kind '" + name + "'");
}

std::string to_string(TeacherKind kind) {
  switch (kind) {
    case TeacherKind::conv: return "conv";
    case TeacherKind::lifting: return "lifting";
    case TeacherKind::groupconv: return "groupconv";
  }
  return "?";
}

Shape TeacherSpec::input_shape() const {
  return kind == TeacherKind::groupconv ? Shape{4, size()} : Shape{size()};
}

Shape TeacherSpec::kernel_shape() const { return kind == TeacherKind::groupconv ? Shape{4, 9} : Shape{9}; }

Shape TeacherSpec::output_shape() const { return kind == TeacherKind::conv ? Shape{size()} : Shape{4, size()}; }

namespace {

Shape with_batch(std::int64_t n, const Shape& tail) {
  Shape s{n};
  s.insert(s.end(), tail.begin(), tail.end());
  return s;
}

Tensor slice(const Tensor& t, std::int64_t i, const Shape& shape) {
  const std::int64_t per = shape_numel(shape);
  Tensor out(shape, t.dtype());
  dispatch(t.dtype(), [&]<typename T>() {
    auto src = t.data<T>();
    std::copy(src.begin() + i * per, src.begin() + (i + 1) * per, out.data<T>().begin());
  });
  return out;
}

void put(Tensor& t, std::int64_t i, const Tensor& part) {
  const std::int64_t per = part.numel();
  dispatch(t.dtype(), [&]<typename T>() {
    auto src = part.data<T>();
    std::copy(src.begin(), src.end(), t.data<T>().begin() + i * per);
  });
}

}  // namespace

Tensor TeacherSpec::forward(const Tensor& x, const Tensor& tau) const {
  if (x.rank() == 0 || x.shape() != with_batch(x.dim(0), input_shape())) {
    throw ShapeError("teacher " + to_string(kind) + " expects inputs " + shape_string(with_batch(x.dim(0), input_shape())) +
                     ", got " + shape_string(x.shape()));
  }
  const std::int64_t n = x.dim(0);
  if (tau.shape() != with_batch(n, kernel_shape())) {
    throw ShapeError("teacher kernels " + shape_string(tau.shape()) + " do not match " +
                     shape_string(with_batch(n, kernel_shape())));
  }
  if (x.dtype() != dtype || tau.dtype() != dtype) throw ShapeError("teacher inputs must use the teacher dtype");
  Tensor y(with_batch(n, output_shape()), dtype);
  Tape tape;
  for (std::int64_t i = 0; i < n; ++i) {
    tape.clear();
    Tensor out;
    if (kind == TeacherKind::groupconv) {
      const Var f = tape.constant(slice(x, i, {1, 1, 4, height, width}));
      const Var psi = tape.constant(slice(tau, i, {1, 1, 4, 3, 3}));
      out = group_conv(f, psi, padding).value();
    } else {
      const Var xi = tape.constant(slice(x, i, {1, 1, height, width}));
      const Var w = tape.constant(slice(tau, i, {1, 1, 3, 3}));
      out = kind == TeacherKind::conv ? ops::conv2d(xi, w, std::nullopt, padding).value()
                                      : lifting_conv(xi, w, padding).value();
    }
    put(y, i, out);
  }
  return y;
}

void check_compatible(const StudentLayer& student, const TeacherSpec& teacher) {
  const auto& s = student.spec();
  if (s.height != teacher.height || s.width != teacher.width) {
    throw ShapeError("student grid " + std::to_string(s.height) + "x" + std::to_string(s.width) +
                     " differs from teacher grid " + std::to_string(teacher.height) + "x" + std::to_string(teacher.width));
  }
  if (s.dtype != teacher.dtype) throw ShapeError("student and teacher dtypes differ");
  const bool four = student.subunits() == 4;
  if (teacher.kind == TeacherKind::conv && four) {
    throw ShapeError("a conv teacher needs a blockmlp student, got " + to_string(s.kind));
  }
  if (teacher.kind != TeacherKind::conv && !four) {
    throw ShapeError("a " + to_string(teacher.kind) + " teacher needs an mlp2gcnn student, got " + to_string(s.kind));
  }
}

CloneBatch sample_clone_batch(SeededRng& rng, const TeacherSpec& teacher, std::int64_t batch) {
  if (batch < 1) throw Error("clone batch must be positive");
  CloneBatch b;
  b.x = sample_standard_normal(rng, with_batch(batch, teacher.input_shape()), teacher.dtype);
  b.tau = sample_standard_normal(rng, with_batch(batch, teacher.kernel_shape()), teacher.dtype);
  b.y = teacher.forward(b.x, b.tau);
  return b;
}

Var student_predict(Tape& tape, const StudentLayer& student, const TeacherSpec& teacher, const Var& x,
                    const Var& tau) {
  check_compatible(student, teacher);
  if (teacher.kind == TeacherKind::groupconv) return student.forward_group(tape, x, tau);
  return student.forward(tape, x, tau);
}

double clone_step(const StudentLayer& student, const TeacherSpec& teacher, const CloneBatch& batch,
                  Optimizer& optimizer) {
  Tape tape;
  const Var pred = student_predict(tape, student, teacher, tape.constant(batch.x), tape.constant(batch.tau));
  const Var loss = ops::mse_loss(pred, tape.constant(batch.y));
  const double value = loss.value().item();
  if (!std::isfinite(value)) throw NumericError("non-finite clone loss");
  optimizer.zero_grad();
  tape.backward(loss);
  optimizer.step();
  return value;
}

double relative_mse(const StudentLayer& student, const TeacherSpec& teacher, const CloneBatch& batch) {
  Tape tape;
  const Tensor pred =
      student_predict(tape, student, teacher, tape.constant(batch.x), tape.constant(batch.tau)).value();
  double num = 0.0, den = 0.0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    const double y = batch.y.at(i), d = pred.at(i) - y;
    num += d * d;
    den += y * y;
  }
  return den > 0.0 ? num / den : (num > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
}

void CloneConfig::validate() const {
  if (batch < 1) throw ConfigError("clone.batch", "must be positive");
  if (max_steps < 0) throw ConfigError("clone.max_steps", "must be non-negative");
  if (window < 1) throw ConfigError("clone.window", "must be at least 1");
  if (!(eps_rel > 0.0)) throw ConfigError("clone.eps_rel", "must be positive");
  if (eval_interval < 1) throw ConfigError("clone.eval_interval", "must be positive");
  if (eval_batch < 1) throw ConfigError("clone.eval_batch", "must be positive");
  if (eval_equiv_samples < 0) throw ConfigError("clone.eval_equiv_samples", "must be non-negative");
  if (equiv_samples < 1) throw ConfigError("clone.equiv_samples", "must be positive");
  if (!(optimizer.learning_rate > 0.0)) throw ConfigError("clone.lr", "must be positive");
}

EquivarianceReport student_equivariance(const StudentLayer* student, const TeacherSpec& teacher, GroupKind group,
                                        std::int64_t samples, SeededRng& rng) {
  if (student) check_compatible(*student, teacher);
  const std::int64_t h = teacher.height, w = teacher.width;
  auto tau = std::make_shared<Tensor>();
  EquivarianceProbe probe;
  probe.input = teacher.kind == TeacherKind::groupconv ? Geometry::lifted : Geometry::planar;
  probe.output = teacher.kind == TeacherKind::conv ? Geometry::planar : Geometry::lifted;
  probe.input_shape = teacher.kind == TeacherKind::groupconv ? Shape{4, h, w} : Shape{h, w};
  probe.resample = [tau, &teacher](SeededRng& r) {
    *tau = sample_standard_normal(r, with_batch(1, teacher.kernel_shape()), teacher.dtype);
  };
  probe.model = [tau, student, &teacher](const Tensor& x) {
    const Tensor xin = x.to(teacher.dtype).reshaped(with_batch(1, teacher.input_shape()));
    Tensor y;
    if (student) {
      Tape tape;
      y = student_predict(tape, *student, teacher, tape.constant(xin), tape.constant(*tau)).value();
    } else {
      y = teacher.forward(xin, *tau);
    }
    Shape out = teacher.kind == TeacherKind::conv ? Shape{teacher.height, teacher.width}
                                                  : Shape{4, teacher.height, teacher.width};
    return std::move(y).to(DType::f64).reshaped(out);
  };
  return equivariance_error(probe, group, samples, rng);
}

CloneReport clone_until_converged(const StudentLayer& student, const TeacherSpec& teacher, const CloneConfig& config) {
  config.validate();
  check_compatible(student, teacher);
  const auto start = std::chrono::steady_clock::now();
  SeededRng train_rng = SeededRng::stream(config.seed, 1);
  SeededRng val_rng = SeededRng::stream(config.seed, 2);
  const CloneBatch validation = sample_clone_batch(val_rng, teacher, config.eval_batch);

  CloneReport report;
  {
    SeededRng eq = SeededRng::stream(config.seed, 3);
    report.initial_equivariance = student_equivariance(&student, teacher, teacher.group(), config.equiv_samples, eq);
  }
  Optimizer optimizer(config.optimizer, student.parameters());
  std::vector<double> history;
  for (std::int64_t step = 0;; ++step) {
    CloneRow row;
    row.step = step;
    if (step % config.eval_interval == 0 || step == config.max_steps) {
      row.rel_mse = relative_mse(student, teacher, validation);
      if (config.eval_equiv_samples > 0) {
        SeededRng eq = SeededRng::stream(config.seed, 4);
        row.equiv_error = student_equivariance(&student, teacher, teacher.group(), config.eval_equiv_samples, eq).mean;
      }
      history.push_back(row.rel_mse);
      report.final_rel_mse = row.rel_mse;
      const std::size_t k = std::min<std::size_t>(history.size(), static_cast<std::size_t>(config.window));
      double mean = 0.0;
      for (std::size_t i = history.size() - k; i < history.size(); ++i) mean += history[i];
      mean /= static_cast<double>(k);
      if (mean < config.eps_rel) report.converged = true;
    }
    if (report.converged || step == config.max_steps) {
      report.curve.push_back(row);
      report.steps = step;
      break;
    }
    const CloneBatch batch = sample_clone_batch(train_rng, teacher, config.batch);
    try {
      row.loss = clone_step(student, teacher, batch, optimizer);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at step " + std::to_string(step) + " (seed " +
                         std::to_string(config.seed) + ")");
    }
    report.curve.push_back(row);
  }
  {
    SeededRng eq = SeededRng::stream(config.seed, 3);
    report.final_equivariance = student_equivariance(&student, teacher, teacher.group(), config.equiv_samples, eq);
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

void write_loss_csv(const CloneReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(9);
  out << "step,loss,rel_mse,equiv_error\n";
  const auto cell = [&](double v) {
    if (!std::isnan(v)) out << v;
  };
  for (const auto& r : report.curve) {
    out << r.step << ',';
    cell(r.loss);
    out << ',';
    cell(r.rel_mse);
    out << ',';
    cell(r.equiv_error);
    out << '\n';
  }
}

}  // namespace symclone
