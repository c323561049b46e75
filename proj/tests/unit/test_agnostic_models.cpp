#include <gtest/gtest.h>

#include "support/oracles.hpp"
#include "symclone/agnostic.hpp"
#include "symclone/cloning.hpp"
#include "symclone/ops.hpp"

using namespace symclone;

namespace {

StudentSpec spec_of(StudentKind kind, std::int64_t side, std::int64_t blocks = 9) {
  StudentSpec s;
  s.kind = kind;
  s.height = s.width = side;
  s.blocks = blocks;
  s.embed_dim = 8;
  return s;
}

ConvKernel kernel_from(const Tensor& tau, Padding padding) {
  ConvKernel k;
  k.weight = make_param("w", tau.reshaped({1, 1, 3, 3}));
  k.padding = padding;
  return k;
}

/// Copies non-structure parameters of `from` into `to` in order.
void copy_weights(const std::vector<ParamPtr>& from, const std::vector<ParamPtr>& to) {
  std::vector<ParamPtr> src;
  for (const auto& p : from) {
    if (p->role != ParamRole::structure) src.push_back(p);
  }
  ASSERT_EQ(src.size(), to.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    ASSERT_EQ(src[i]->value.numel(), to[i]->value.numel()) << to[i]->name;
    to[i]->value = src[i]->value.reshaped(to[i]->value.shape());
  }
}

}  // namespace

TEST(StudentLayer, ZeroKernelGivesZero) {
  SeededRng rng(0);
  for (auto kind : {StudentKind::blockmlp9, StudentKind::mlp2gcnn}) {
    StudentLayer s(spec_of(kind, 4), rng);
    const Tensor y = s.apply(sample_standard_normal(rng, {16}), Tensor({9}));
    EXPECT_EQ(l2_norm(y), 0.0);
  }
}

TEST(StudentLayer, OracleMatchesConv) {
  SeededRng rng(1);
  for (Padding p : {Padding::zero_fill, Padding::circular}) {
    const StudentLayer s = StudentLayer::oracle(spec_of(StudentKind::blockmlp9, 5), p);
    const Tensor x = sample_standard_normal(rng, {1, 5, 5});
    const Tensor tau = sample_standard_normal(rng, {3, 3});
    const Tensor y = s.apply(x.reshaped({25}), tau.reshaped({9}));
    const Tensor want = conv2d(x, kernel_from(tau, p)).reshaped({25});
    EXPECT_LE(max_abs_diff(y, want), 1e-5);
  }
}

TEST(StudentLayer, OracleMatchesLifting) {
  SeededRng rng(2);
  const StudentLayer s = StudentLayer::oracle(spec_of(StudentKind::mlp2gcnn, 6), Padding::zero_fill);
  const Tensor x = sample_standard_normal(rng, {1, 6, 6});
  const Tensor tau = sample_standard_normal(rng, {3, 3});
  const Tensor y = s.apply(x.reshaped({36}), tau.reshaped({9}));
  EXPECT_EQ(y.shape(), (Shape{4, 36}));
  EXPECT_LE(max_abs_diff(y, lifting_conv(x, tau, Padding::zero_fill).reshaped({4, 36})), 1e-5);
}

TEST(StudentLayer, OracleMatchesGroupConv) {
  SeededRng rng(3);
  const StudentLayer s = StudentLayer::oracle(spec_of(StudentKind::mlp2gcnn, 5), Padding::circular);
  const Tensor f = sample_standard_normal(rng, {4, 5, 5});
  const Tensor psi = sample_standard_normal(rng, {4, 3, 3});
  const Tensor y = s.apply_group(f.reshaped({4, 25}), psi.reshaped({4, 9}));
  EXPECT_LE(max_abs_diff(y, group_conv(f, psi, Padding::circular).reshaped({4, 25})), 1e-5);
}

TEST(StudentLayer, LiftingShape) {
  SeededRng rng(4);
  StudentLayer s(spec_of(StudentKind::mlp2gcnn_approx, 8, 8), rng);
  EXPECT_EQ(s.apply(sample_standard_normal(rng, {64}), sample_standard_normal(rng, {9})).shape(), (Shape{4, 64}));
}

TEST(StudentLayer, RandomInitIsNotEquivariant) {
  SeededRng rng(5);
  StudentLayer s(spec_of(StudentKind::blockmlp9, 6), rng);
  TeacherSpec t;
  t.height = t.width = 6;
  t.padding = Padding::circular;
  SeededRng probe(6);
  EXPECT_GT(student_equivariance(&s, t, GroupKind::t2, 50, probe).mean, 0.1);
}

TEST(StudentLayer, InvalidSpecs) {
  SeededRng rng(7);
  EXPECT_THROW(StudentLayer(spec_of(StudentKind::blockmlp9, 4, 8), rng), Error);
  EXPECT_THROW(StudentLayer(spec_of(StudentKind::blockmlp_approx, 4, 11), rng), Error);
  EXPECT_THROW(StudentLayer::oracle(spec_of(StudentKind::blockmlp_approx, 4, 8), Padding::circular), ShapeError);
}

TEST(StudentLayer, CloneIsDeep) {
  SeededRng rng(8);
  StudentLayer a(spec_of(StudentKind::blockmlp_approx, 3, 7), rng);
  StudentLayer b = a.clone();
  b.block_param(0)->value.fill(0.0);
  EXPECT_GT(l2_norm(a.block_param(0)->value), 0.0);
}

TEST(StudentLayer, GradientCheckGroupMode) {
  StudentSpec spec = spec_of(StudentKind::mlp2gcnn_approx, 3, 8);
  spec.dtype = DType::f64;
  SeededRng rng(9);
  StudentLayer s(spec, rng);
  const Tensor f = sample_standard_normal(rng, {2, 4, 9}, DType::f64);
  const Tensor psi = sample_standard_normal(rng, {2, 4, 9}, DType::f64);
  const auto check = oracle::finite_difference_check(s.parameters(), [&](Tape& t) {
    return ops::mean(ops::square(s.forward_group(t, t.constant(f), t.constant(psi))));
  });
  EXPECT_LT(check.worst, 1e-4) << check.name;
}

TEST(StudentClassifier, LogitShape) {
  SeededRng rng(10);
  StudentLayer unit(spec_of(StudentKind::blockmlp9, 28), rng);
  StudentClassifierSpec cs;
  cs.channels = {2, 2};
  cs.classes = 20;
  auto model = assemble_student_classifier(unit, cs, rng);
  EXPECT_EQ(model->logits(sample_standard_normal(rng, {3, 1, 28, 28})).shape(), (Shape{3, 20}));
}

TEST(StudentClassifier, TrainModes) {
  SeededRng rng(11);
  StudentLayer unit(spec_of(StudentKind::mlp2gcnn_approx, 4, 8), rng);
  auto model = assemble_student_classifier(unit, StudentClassifierSpec{}, rng);
  apply_train_mode(model->parameters(), TrainMode::freeze);
  for (const auto& p : model->parameters()) EXPECT_EQ(p->trainable, p->role != ParamRole::structure) << p->name;
  apply_train_mode(model->parameters(), TrainMode::unfreeze);
  for (const auto& p : model->parameters()) EXPECT_TRUE(p->trainable) << p->name;
}

TEST(StudentClassifier, FreezeNeedsKernels) {
  auto p = make_param("m", Tensor({2}), ParamRole::structure);
  EXPECT_THROW(apply_train_mode({p}, TrainMode::freeze), Error);
}

TEST(StudentClassifier, OracleStackEqualsCnn) {
  SeededRng rng(12);
  const StudentLayer unit = StudentLayer::oracle(spec_of(StudentKind::blockmlp9, 6), Padding::zero_fill);
  StudentClassifierSpec cs;
  cs.channels = {3, 2};
  cs.head_hidden = 5;
  auto student = assemble_student_classifier(unit, cs, rng);
  ClassifierSpec rs;
  rs.kind = ClassifierKind::cnn;
  rs.height = rs.width = 6;
  rs.channels = cs.channels;
  rs.head_hidden = cs.head_hidden;
  auto reference = build_reference_classifier(rs, rng);
  copy_weights(student->parameters(), reference->parameters());
  const Tensor x = sample_standard_normal(rng, {2, 1, 6, 6});
  EXPECT_LE(max_abs_diff(student->logits(x), reference->logits(x)), 1e-4);
}

TEST(StudentClassifier, PooledOracleStackEqualsGcnn) {
  SeededRng rng(13);
  std::vector<StudentLayer> units;
  units.push_back(StudentLayer::oracle(spec_of(StudentKind::mlp2gcnn, 8), Padding::zero_fill));
  units.push_back(StudentLayer::oracle(spec_of(StudentKind::mlp2gcnn, 4), Padding::zero_fill));
  StudentClassifierSpec cs;
  cs.channels = {2, 3, 2};
  cs.pool_after = {0};
  cs.head_hidden = 4;
  auto student = assemble_student_classifier(units, cs, rng);
  ClassifierSpec rs;
  rs.kind = ClassifierKind::gcnn;
  rs.height = rs.width = 8;
  rs.channels = cs.channels;
  rs.pool_after = cs.pool_after;
  rs.head_hidden = cs.head_hidden;
  auto reference = build_reference_classifier(rs, rng);
  copy_weights(student->parameters(), reference->parameters());
  const Tensor x = sample_standard_normal(rng, {2, 1, 8, 8});
  EXPECT_LE(max_abs_diff(student->logits(x), reference->logits(x)), 1e-4);
}

TEST(StudentClassifier, MissingResolutionRejected) {
  SeededRng rng(14);
  StudentLayer unit(spec_of(StudentKind::mlp2gcnn, 8), rng);
  StudentClassifierSpec cs;
  cs.channels = {2, 2};
  cs.pool_after = {0};
  EXPECT_THROW(assemble_student_classifier(unit, cs, rng), ShapeError);
}

TEST(StudentClassifier, GradientCheck) {
  StudentSpec spec = spec_of(StudentKind::blockmlp_approx, 4, 8);
  spec.dtype = DType::f64;
  SeededRng rng(15);
  std::vector<StudentLayer> units;
  units.emplace_back(spec, rng);
  spec.height = spec.width = 2;
  units.emplace_back(spec, rng);
  StudentClassifierSpec cs;
  cs.channels = {2, 2};
  cs.pool_after = {0};
  cs.head_hidden = 3;
  cs.classes = 3;
  auto model = assemble_student_classifier(units, cs, rng);
  const Tensor x = sample_standard_normal(rng, {2, 1, 4, 4}, DType::f64);
  const std::vector<int> labels{1, 2};
  const auto check = oracle::finite_difference_check(model->parameters(), [&](Tape& t) {
    return ops::cross_entropy(model->forward(t, t.constant(x)), labels);
  });
  EXPECT_LT(check.worst, 1e-4) << check.name;
}
