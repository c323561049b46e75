#include <gtest/gtest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "symclone/downstream.hpp"
#include "symclone/ops.hpp"

using namespace symclone;

namespace {

Dataset random_dataset(std::int64_t n, std::int64_t side, std::uint64_t seed, int classes = 10) {
  SeededRng rng(seed);
  Dataset d;
  d.images = Tensor({n, side, side});
  for (std::int64_t i = 0; i < d.images.numel(); ++i) d.images.set(i, rng.uniform());
  for (std::int64_t i = 0; i < n; ++i) d.labels.push_back(static_cast<int>(rng.uniform_int(0, classes - 1)));
  return d;
}

Tensor plane(const Dataset& d, std::int64_t i) {
  const std::int64_t p = d.height() * d.width();
  Tensor out({d.height(), d.width()});
  for (std::int64_t j = 0; j < p; ++j) out.set(j, d.images.at(i * p + j));
  return out;
}

std::unique_ptr<Classifier> small_student(std::uint64_t seed) {
  StudentSpec spec;
  spec.height = spec.width = 4;
  SeededRng rng(seed);
  StudentLayer unit(spec, rng);
  StudentClassifierSpec cs;
  cs.channels = {2, 2};
  cs.head_hidden = 4;
  return assemble_student_classifier(unit, cs, rng);
}

BenchmarkTask tiny_task() {
  BenchmarkTask t;
  t.train = random_dataset(24, 4, 1);
  t.test = random_dataset(8, 4, 2);
  return t;
}

}  // namespace

TEST(TranslatedDataset, ShiftsWithinRangeAndRecorded) {
  const Dataset d = random_dataset(200, 6, 3);
  SeededRng rng(4);
  const Dataset t = make_translated_dataset(d, rng, 2);
  bool saw_zero = false;
  for (std::int64_t i = 0; i < d.size(); ++i) {
    const auto& m = t.meta[static_cast<std::size_t>(i)];
    EXPECT_LE(std::abs(m.dx), 2);
    EXPECT_LE(std::abs(m.dy), 2);
    const Tensor want = translate_image(plane(d, i), {m.dy, m.dx}, Padding::zero_fill);
    EXPECT_TRUE(plane(t, i).bit_equal(want));
    if (m.dx == 0 && m.dy == 0) {
      saw_zero = true;
      EXPECT_TRUE(plane(t, i).bit_equal(plane(d, i)));
    }
  }
  EXPECT_TRUE(saw_zero);
}

TEST(TranslatedDataset, DefaultRangeAndDeterminism) {
  const Dataset d = random_dataset(300, 4, 5);
  SeededRng a(6), b(6);
  const Dataset x = make_translated_dataset(d, a), y = make_translated_dataset(d, b);
  EXPECT_TRUE(x.images.bit_equal(y.images));
  EXPECT_EQ(x.meta, y.meta);
  for (const auto& m : x.meta) {
    EXPECT_LE(std::abs(m.dx), 7);
    EXPECT_LE(std::abs(m.dy), 7);
  }
}

TEST(RotatedDataset, InverseRestoresAndDeterministic) {
  const Dataset d = random_dataset(40, 5, 7);
  SeededRng a(8), b(8);
  const Dataset r = make_rotated_dataset(d, a);
  EXPECT_TRUE(r.images.bit_equal(make_rotated_dataset(d, b).images));
  for (std::int64_t i = 0; i < d.size(); ++i) {
    const C4Element g(r.meta[static_cast<std::size_t>(i)].k);
    if (g.k() == 0) EXPECT_TRUE(plane(r, i).bit_equal(plane(d, i)));
    EXPECT_TRUE(rotate90_image(plane(r, i), g.inverse()).bit_equal(plane(d, i)));
  }
}

TEST(Relabel, Translation) {
  EXPECT_EQ(relabel_translation(3, -2), 3);
  EXPECT_EQ(relabel_translation(3, 2), 13);
  EXPECT_EQ(relabel_translation(7, 0), 17);
  EXPECT_THROW(relabel_translation(10, 1), Error);
}

TEST(Relabel, Rotation) {
  EXPECT_EQ(relabel_rotation(5, 0), 5);
  EXPECT_EQ(relabel_rotation(5, 2), 15);
  EXPECT_EQ(relabel_rotation(0, 1), 0);
  EXPECT_EQ(relabel_rotation(0, 3), 10);
}

TEST(MakeTask, SymmetricAndBreaking) {
  const Dataset train = random_dataset(30, 6, 9), test = random_dataset(20, 6, 10);
  const BenchmarkTask sym = make_task(TaskId::c4_sym, train, test, 0);
  EXPECT_EQ(sym.classes, 10);
  EXPECT_TRUE(sym.train.images.bit_equal(train.images));
  EXPECT_EQ(sym.test.labels, test.labels);
  const BenchmarkTask brk = make_task(TaskId::t2_break, train, test, 0);
  EXPECT_EQ(brk.classes, 20);
  for (std::size_t i = 0; i < brk.train.labels.size(); ++i) {
    EXPECT_EQ(brk.train.labels[i], relabel_translation(train.labels[i], brk.train.meta[i].dx));
  }
  EXPECT_EQ(parse_task_id("c4-break"), TaskId::c4_break);
  EXPECT_THROW(parse_task_id("c8-sym"), Error);
}

TEST(KlPenalty, ZeroAtSnapshot) {
  SeededRng rng(11);
  auto p = make_param("p", sample_standard_normal(rng, {50}, DType::f64));
  EXPECT_NEAR(KlPenalty({p}, {}).value(), 0.0, 1e-12);
}

TEST(KlPenalty, ShiftedMeanGivesHalf) {
  auto a = make_param("a", Tensor::from({2}, {-1, 1}, DType::f64));
  auto b = make_param("b", Tensor::from({4}, {-1, 1, -1, 1}, DType::f64));
  KlPenalty kl({a, b}, {});
  for (auto& p : {a, b}) p->value.add_(Tensor::full(p->value.shape(), 1.0, DType::f64));
  EXPECT_NEAR(kl.value(), 2 * 0.5, 1e-12);
}

TEST(KlPenalty, MatchesClosedForm) {
  SeededRng rng(12);
  auto p = make_param("p", sample_standard_normal(rng, {40}, DType::f64));
  KlPenalty kl({p}, {});
  const auto moments = [](const Tensor& t) {
    double m = 0, v = 0;
    for (auto x : t.to_vector()) m += x;
    m /= t.numel();
    for (auto x : t.to_vector()) v += (x - m) * (x - m);
    return std::pair{m, v / t.numel()};
  };
  const auto [m0, v0] = moments(p->value);
  p->value.scale_(1.7);
  p->value.add_(Tensor::full({40}, 0.3, DType::f64));
  const auto [mt, vt] = moments(p->value);
  const double want = std::log(std::sqrt(v0) / std::sqrt(vt)) + (vt + (mt - m0) * (mt - m0)) / (2 * v0) - 0.5;
  EXPECT_NEAR(kl.value(), want, 1e-10);
}

TEST(KlPenalty, GradientCheck) {
  SeededRng rng(13);
  auto p = make_param("p", sample_standard_normal(rng, {12}, DType::f64));
  auto q = make_param("q", sample_standard_normal(rng, {3, 3}, DType::f64));
  KlPenalty kl({p, q}, {});
  p->value.scale_(0.8);
  q->value.add_(Tensor::full({3, 3}, 0.4, DType::f64));
  const auto check = oracle::finite_difference_check({p, q}, [&](Tape& t) { return kl.penalty(t); });
  EXPECT_LT(check.worst, 1e-4) << check.name;
}

TEST(KlPenalty, ConstantTensorsExcluded) {
  auto bias = make_param("bias", Tensor({4}, DType::f64));
  auto w = make_param("w", Tensor::from({2}, {-1, 1}, DType::f64));
  KlPenalty kl({bias, w}, {});
  ASSERT_EQ(kl.params().size(), 1u);
  bias->value.fill(3.0);
  EXPECT_NEAR(kl.value(), 0.0, 1e-12);
}

TEST(Train, FreezeKeepsBlocksBitIdentical) {
  auto model = small_student(14);
  std::vector<Tensor> before;
  for (const auto& p : model->parameters()) {
    if (p->role == ParamRole::structure) before.push_back(p->value);
  }
  TrainConfig cfg;
  cfg.mode = TrainMode::freeze;
  cfg.epochs = 2;
  cfg.batch = 8;
  train_on_task(*model, tiny_task(), cfg);
  std::size_t i = 0;
  bool kernel_moved = false;
  for (const auto& p : model->parameters()) {
    if (p->role == ParamRole::structure) EXPECT_TRUE(p->value.bit_equal(before[i++])) << p->name;
    if (p->role == ParamRole::kernel && l2_norm(p->grad) > 0) kernel_moved = true;
  }
  EXPECT_TRUE(kernel_moved);
}

TEST(Train, BetaZeroIsPlainFineTuning) {
  const BenchmarkTask task = tiny_task();
  TrainConfig cfg;
  cfg.mode = TrainMode::unfreeze;
  cfg.epochs = 2;
  cfg.batch = 8;
  cfg.kl = {0.0, 1e-8};
  auto model = small_student(15);
  train_on_task(*model, task, cfg);

  // Independent loop: same batch order, one Adam over every parameter.
  auto plain = small_student(15);
  const auto params = plain->parameters();
  Optimizer opt(cfg.optimizer, params);
  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    SeededRng order = SeededRng::stream(cfg.seed, 100 + static_cast<std::uint64_t>(epoch));
    const auto perm = random_permutation(order, task.train.size());
    for (std::int64_t b = 0; b < task.train.size(); b += cfg.batch) {
      const std::vector<std::int64_t> idx(perm.begin() + b, perm.begin() + std::min(task.train.size(), b + cfg.batch));
      std::vector<int> labels;
      for (auto j : idx) labels.push_back(task.train.labels[static_cast<std::size_t>(j)]);
      Tape tape;
      opt.zero_grad();
      tape.backward(ops::cross_entropy(plain->forward(tape, tape.constant(task.train.batch_images(idx))), labels));
      opt.step();
    }
  }
  const auto trained = model->parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    EXPECT_TRUE(trained[i]->value.bit_equal(params[i]->value)) << params[i]->name;
  }
}

TEST(Train, KlChangesTrajectoryAndIsReported) {
  const BenchmarkTask task = tiny_task();
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch = 8;
  cfg.kl = {0.5, 1e-8};
  auto a = small_student(16), b = small_student(16);
  const TrainReport with = train_on_task(*a, task, cfg);
  cfg.kl.beta = 0.0;
  train_on_task(*b, task, cfg);
  EXPECT_GT(with.rows.front().kl_penalty, 0.0);
  EXPECT_FALSE(a->parameters().front()->value.bit_equal(b->parameters().front()->value));
}

TEST(Train, ClassMismatchRejected) {
  auto model = small_student(17);
  BenchmarkTask task = tiny_task();
  task.classes = 20;
  EXPECT_THROW(train_on_task(*model, task, TrainConfig{}), ShapeError);
}

TEST(Train, Deterministic) {
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch = 8;
  auto a = small_student(18), b = small_student(18);
  const auto ra = train_on_task(*a, tiny_task(), cfg), rb = train_on_task(*b, tiny_task(), cfg);
  EXPECT_EQ(ra.final_test_accuracy, rb.final_test_accuracy);
  EXPECT_EQ(ra.rows.back().loss, rb.rows.back().loss);
}
