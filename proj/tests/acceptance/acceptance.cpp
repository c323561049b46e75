#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "support/oracles.hpp"
#include "symclone/agnostic.hpp"
#include "symclone/checkpoint.hpp"
#include "symclone/downstream.hpp"
#include "symclone/equivariant.hpp"
#include "symclone/metrics.hpp"
#include "symclone/ops.hpp"
#include "symclone/toeplitz.hpp"

using namespace symclone;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Pinned tolerances.
constexpr double kEquivTol = 1e-5;
constexpr int kEquivSamples = 200;
constexpr double kEquivSeconds = 10.0;
constexpr double kToeplitzOracleTol = 1e-6;
constexpr double kToeplitzOracleSeconds = 5.0;
constexpr double kGradTol = 1e-4;
constexpr double kGradSeconds = 60.0;
constexpr double kToeplitzRecovery = 0.05;
constexpr int kCloneBudget = 50000;
constexpr double kCloneSeconds = 15 * 60.0;
constexpr double kGapFactor = 10.0;
constexpr double kSymGapT2 = 30.0, kSymGapC4 = 25.0;
constexpr double kBreakGapT2 = 15.0, kBreakGapC4 = 20.0;
constexpr double kFreezeWithin = 5.0;
constexpr double kUnfreezeFloor = 90.0;
constexpr double kGridSeconds = 2 * 3600.0;
// The approximate students plateau near rel MSE 0.12, so the grid caps
// their cloning budget.
constexpr int kGridCloneSteps = 4000;

int failures = 0;

void report(const std::string& id, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << (pass ? "PASS " : "FAIL ") << id << ": " << detail << std::endl;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

double since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

struct Paths {
  fs::path cli;
  fs::path root;
};

int cli(const Paths& p, const std::string& args, const std::string& log) {
  const std::string cmd = p.cli.string() + " " + args + " > " + (p.root / (log + ".log")).string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  return json::parse(in, nullptr, false);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

double csv_mean(const fs::path& csv, const std::string& metric) {
  std::ifstream in(csv);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(metric + ",", 0) == 0) return std::stod(line.substr(metric.size() + 1));
  }
  return -1.0;
}

void criterion1() {
  const auto start = std::chrono::steady_clock::now();
  SeededRng rng(101);
  ConvKernel k;
  k.weight = make_param("w", sample_standard_normal(rng, {1, 1, 3, 3}, DType::f64));
  k.padding = Padding::circular;
  EquivarianceProbe t2;
  t2.input_shape = {1, 8, 8};
  t2.dtype = DType::f64;
  t2.model = [k](const Tensor& x) { return conv2d(x, k); };
  const double e_t2 = equivariance_error(t2, GroupKind::t2, kEquivSamples, rng).mean;

  const Tensor tau = sample_standard_normal(rng, {3, 3}, DType::f64);
  const Tensor psi = sample_standard_normal(rng, {4, 3, 3}, DType::f64);
  EquivarianceProbe c4;
  c4.input_shape = {1, 8, 8};
  c4.dtype = DType::f64;
  c4.output = Geometry::lifted;
  c4.model = [tau, psi](const Tensor& x) {
    return group_conv(lifting_conv(x, tau, Padding::circular), psi, Padding::circular);
  };
  const double e_c4 = equivariance_error(c4, GroupKind::c4, kEquivSamples, rng).mean;
  const double secs = since(start);
  report("1 exact teacher equivariance",
         e_t2 <= kEquivTol && e_c4 <= kEquivTol && secs < kEquivSeconds,
         "T2 conv " + fmt(e_t2) + ", C4 lifting+group conv " + fmt(e_c4) + " (<= " + fmt(kEquivTol) + "), " +
             fmt(secs, 3) + " s (< " + fmt(kEquivSeconds) + " s)");
}

void criterion2() {
  const auto start = std::chrono::steady_clock::now();
  SeededRng rng(202);
  double worst = 0.0;
  int cases = 0;
  const std::vector<std::pair<int, int>> grids{{1, 1}, {3, 3}, {4, 6}, {7, 5}, {8, 8}};
  for (Padding p : {Padding::zero_fill, Padding::circular}) {
    for (auto [h, w] : grids) {
      const ToeplitzOracle o = toeplitz_unroll(h, w, p, DType::f64);
      for (int trial = 0; trial < 100; ++trial, ++cases) {
        const Tensor x = sample_standard_normal(rng, {static_cast<std::int64_t>(h * w)}, DType::f64);
        const Tensor t = sample_standard_normal(rng, {9}, DType::f64);
        const Tensor y = o.apply(x, t);
        const auto want = oracle::naive_conv(x.to_vector(), t.to_vector(), h, w, p);
        for (int i = 0; i < h * w; ++i) worst = std::max(worst, std::abs(y.at(i) - want[static_cast<std::size_t>(i)]));
      }
    }
  }
  const double secs = since(start);
  report("2 Toeplitz oracle", worst <= kToeplitzOracleTol && secs < kToeplitzOracleSeconds,
         std::to_string(cases) + " cases up to 8x8, max abs diff " + fmt(worst) + " (<= " + fmt(kToeplitzOracleTol) +
             "), " + fmt(secs, 3) + " s (< " + fmt(kToeplitzOracleSeconds) + " s)");
}

void criterion3() {
  const auto start = std::chrono::steady_clock::now();
  SeededRng rng(303);
  std::vector<std::pair<std::string, double>> checks;
  const auto normal = [&](const Shape& s) { return sample_standard_normal(rng, s, DType::f64); };
  const auto add = [&](const std::string& name, const std::vector<ParamPtr>& params,
                       const std::function<Var(Tape&)>& loss) {
    checks.emplace_back(name, oracle::finite_difference_check(params, loss).worst);
  };
  // Zero-initialised biases can leave ReLU inputs exactly at the kink.
  const auto jitter = [&](const std::vector<ParamPtr>& params) {
    for (const auto& q : params) {
      Tensor n = normal(q->value.shape());
      n.scale_(0.1);
      q->value.add_(n);
    }
  };

  for (Padding p : {Padding::zero_fill, Padding::circular}) {
    const std::string tag = p == Padding::circular ? " circular" : " zero-fill";
    auto x = make_param("x", normal({2, 2, 5, 5}));
    ConvKernel k = make_conv_kernel("conv", 3, 2, p, rng, DType::f64);
    std::vector<ParamPtr> conv_params{x, k.weight};
    if (k.bias) conv_params.push_back(k.bias);
    add("conv" + tag, conv_params, [&](Tape& t) { return ops::mean(ops::square(conv2d(t, t.param(x), k))); });

    auto img = make_param("x", normal({2, 1, 5, 5}));
    auto tau = make_param("tau", normal({2, 1, 3, 3}));
    add("lifting" + tag, {img, tau},
        [&](Tape& t) { return ops::mean(ops::square(lifting_conv(t.param(img), t.param(tau), p))); });

    auto f = make_param("f", normal({2, 2, 4, 5, 5}));
    auto psi = make_param("psi", normal({3, 2, 4, 3, 3}));
    add("group conv" + tag, {f, psi},
        [&](Tape& t) { return ops::mean(ops::square(group_conv(t.param(f), t.param(psi), p))); });
  }

  for (auto [kind, blocks] : {std::pair{StudentKind::blockmlp9, 9}, std::pair{StudentKind::blockmlp_approx, 8},
                              std::pair{StudentKind::mlp2gcnn, 9}, std::pair{StudentKind::mlp2gcnn_approx, 8}}) {
    StudentSpec spec;
    spec.kind = kind;
    spec.height = spec.width = 4;
    spec.blocks = blocks;
    spec.embed_dim = 5;
    spec.dtype = DType::f64;
    const StudentLayer unit(spec, rng);
    const Tensor x = normal({2, 16});
    auto tau = make_param("tau", normal({2, 9}));
    auto params = unit.parameters();
    params.push_back(tau);
    add(to_string(kind), params, [&](Tape& t) { return ops::mean(ops::square(unit.forward(t, t.constant(x), t.param(tau)))); });
    if (kind == StudentKind::mlp2gcnn || kind == StudentKind::mlp2gcnn_approx) {
      const Tensor f = normal({2, 4, 16});
      auto psi = make_param("psi", normal({2, 4, 9}));
      auto gparams = unit.parameters();
      gparams.push_back(psi);
      add(to_string(kind) + " group mode", gparams,
          [&](Tape& t) { return ops::mean(ops::square(unit.forward_group(t, t.constant(f), t.param(psi)))); });
    }
  }

  {
    auto a = make_param("a", normal({3, 4}));
    auto b = make_param("b", normal({6}));
    const KlPenalty kl({a, b}, {1.0, 1e-8});
    a->value.scale_(1.3);
    for (std::int64_t i = 0; i < 6; ++i) b->value.set(i, b->value.at(i) + 0.1 * static_cast<double>(i));
    add("KL penalty", {a, b}, [&](Tape& t) { return kl.penalty(t); });
  }

  const Tensor images = normal({2, 1, 6, 6});
  const std::vector<int> labels{0, 2};
  for (auto kind : {ClassifierKind::mlp, ClassifierKind::cnn, ClassifierKind::gcnn}) {
    ClassifierSpec spec;
    spec.kind = kind;
    spec.height = spec.width = 6;
    spec.channels = {2, 2};
    spec.mlp_hidden = {5};
    spec.pool_after = {0};
    spec.head_hidden = 3;
    spec.classes = 3;
    spec.dtype = DType::f64;
    auto model = build_reference_classifier(spec, rng);
    jitter(model->parameters());
    add(to_string(kind) + " classifier", model->parameters(),
        [&](Tape& t) { return ops::cross_entropy(model->forward(t, t.constant(images)), labels); });
  }
  for (auto kind : {StudentKind::blockmlp9, StudentKind::blockmlp_approx, StudentKind::mlp2gcnn,
                    StudentKind::mlp2gcnn_approx}) {
    std::vector<StudentLayer> units;
    for (std::int64_t side : {6, 3}) {
      StudentSpec spec;
      spec.kind = kind;
      spec.height = spec.width = side;
      spec.blocks = kind == StudentKind::blockmlp9 || kind == StudentKind::mlp2gcnn ? 9 : 8;
      spec.embed_dim = 4;
      spec.dtype = DType::f64;
      units.emplace_back(spec, rng);
    }
    StudentClassifierSpec cs;
    cs.channels = {2, 2};
    cs.pool_after = {0};
    cs.head_hidden = 3;
    cs.classes = 3;
    auto model = assemble_student_classifier(units, cs, rng);
    jitter(model->parameters());
    add(to_string(kind) + " student classifier", model->parameters(),
        [&](Tape& t) { return ops::cross_entropy(model->forward(t, t.constant(images)), labels); });
  }

  double worst = 0.0;
  std::string worst_name;
  for (const auto& [name, err] : checks) {
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
  }
  const double secs = since(start);
  report("3 gradient checks", worst <= kGradTol && secs < kGradSeconds,
         std::to_string(checks.size()) + " layer checks, worst " + fmt(worst) + " (" + worst_name + ", <= " +
             fmt(kGradTol) + "), " + fmt(secs, 3) + " s (< " + fmt(kGradSeconds) + " s)");
}

/// Returns the clone output directory.
fs::path criterion4(const Paths& p) {
  const fs::path out = p.root / "c4_toeplitz";
  const auto start = std::chrono::steady_clock::now();
  const int code = cli(p, "clone -o " + out.string() + " --set student.height=8 student.width=8 clone.max_steps=" +
                              std::to_string(kCloneBudget),
                       "c4_toeplitz");
  const double secs = since(start);
  const json r = read_json(out / "clone_report.json");
  const bool ok = code == 0 && r.is_object() && r.contains("toeplitz_error");
  const double err = ok ? r["toeplitz_error"].get<double>() : -1.0;
  report("4 Toeplitz recovery", ok && err <= kToeplitzRecovery && secs <= kCloneSeconds,
         "8x8 9-block clone exit " + std::to_string(code) + ", " + (ok ? std::to_string(r["steps"].get<int>()) : "?") +
             " steps (budget " + std::to_string(kCloneBudget) + "), toeplitz_error " + fmt(err) + " (<= " +
             fmt(kToeplitzRecovery) + "), " + fmt(secs, 3) + " s");
  return out;
}

void criterion5(const Paths& p) {
  std::string detail;
  bool pass = true;
  for (auto [name, flags] : {std::pair<std::string, std::string>{"T2", "--set teacher.padding=circular"},
                             std::pair<std::string, std::string>{"C4", "--student mlp2gcnn --teacher lifting"}}) {
    const fs::path out = p.root / ("c5_" + name);
    const std::string common = " --set student.height=8 student.width=8 clone.equiv_samples=" +
                               std::to_string(kEquivSamples);
    const int code = cli(p, "clone " + flags + common + " -o " + out.string(), "c5_clone_" + name);
    const int eval = cli(p, "eval-equiv --checkpoint " + (out / "student.ckpt").string() + common + " -o " +
                                (out / "equiv").string(),
                         "c5_equiv_" + name);
    const fs::path csv = out / "equiv" / "equivariance.csv";
    const double cloned = csv_mean(csv, "student"), random = csv_mean(csv, "random_student");
    const bool ok = code == 0 && eval == 0 && cloned >= 0.0 && random > 0.0 && random >= kGapFactor * cloned;
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += name + " cloned " + fmt(cloned) + " vs random " + fmt(random) + " (" +
              fmt(cloned > 0 ? random / cloned : 0.0, 3) + "x)";
  }
  report("5 cloned equivariance gap", pass, detail + ", need >= " + fmt(kGapFactor) + "x over " +
                                               std::to_string(kEquivSamples) + " samples");
}

std::map<std::string, double> read_summary(const fs::path& csv) {
  std::map<std::string, double> acc;
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::stringstream s(line);
    std::string task, model, blocks, test;
    std::getline(s, task, ',');
    std::getline(s, model, ',');
    std::getline(s, blocks, ',');
    std::getline(s, test, ',');
    std::string key = task + "/" + model;
    if (model.rfind("cloned-", 0) == 0) key += "-b" + blocks;
    acc[key] = 100.0 * std::stod(test);
  }
  return acc;
}

bool run_grid(const Paths& p, const fs::path& out, const std::string& log, double& secs) {
  const auto start = std::chrono::steady_clock::now();
  const int code = cli(p, "bench --all -o " + out.string() + " --set clone.max_steps=" + std::to_string(kGridCloneSteps), log);
  secs = since(start);
  return code == 0 && fs::exists(out / "summary.csv");
}

void criterion6(const Paths& p, const fs::path& grid, bool ran, double secs) {
  std::map<std::string, double> a = ran ? read_summary(grid / "summary.csv") : std::map<std::string, double>{};
  const auto at = [&](const std::string& k) { return a.count(k) ? a.at(k) : -1.0; };
  const bool complete = a.size() == 18;
  const auto pts = [](double v) { return fmt(v, 4); };

  const double t2_sym_gap = at("t2-sym/cnn") - at("t2-sym/mlp"), c4_sym_gap = at("c4-sym/gcnn") - at("c4-sym/mlp");
  report("6a symmetric tasks favour equivariant baselines",
         complete && t2_sym_gap >= kSymGapT2 && c4_sym_gap >= kSymGapC4,
         "t2-sym CNN " + pts(at("t2-sym/cnn")) + " - MLP " + pts(at("t2-sym/mlp")) + " = " + pts(t2_sym_gap) +
             " (>= " + fmt(kSymGapT2) + "); c4-sym GCNN " + pts(at("c4-sym/gcnn")) + " - MLP " +
             pts(at("c4-sym/mlp")) + " = " + pts(c4_sym_gap) + " (>= " + fmt(kSymGapC4) + ")");

  const double t2_brk_gap = at("t2-break/mlp") - at("t2-break/cnn"), c4_brk_gap = at("c4-break/mlp") - at("c4-break/gcnn");
  report("6b symmetry-breaking tasks favour the MLP",
         complete && t2_brk_gap >= kBreakGapT2 && c4_brk_gap >= kBreakGapC4,
         "t2-break MLP " + pts(at("t2-break/mlp")) + " - CNN " + pts(at("t2-break/cnn")) + " = " + pts(t2_brk_gap) +
             " (>= " + fmt(kBreakGapT2) + "); c4-break MLP " + pts(at("c4-break/mlp")) + " - GCNN " +
             pts(at("c4-break/gcnn")) + " = " + pts(c4_brk_gap) + " (>= " + fmt(kBreakGapC4) + ")");

  const double d_t2 = std::abs(at("t2-sym/cloned-freeze-b9") - at("t2-sym/cnn"));
  const double d_c4 = std::abs(at("c4-sym/cloned-freeze-b9") - at("c4-sym/gcnn"));
  report("6c 9-block freeze tracks its teacher baseline", complete && d_t2 <= kFreezeWithin && d_c4 <= kFreezeWithin,
         "t2-sym " + pts(at("t2-sym/cloned-freeze-b9")) + " vs CNN " + pts(at("t2-sym/cnn")) + " (|d| " + pts(d_t2) +
             "); c4-sym " + pts(at("c4-sym/cloned-freeze-b9")) + " vs GCNN " + pts(at("c4-sym/gcnn")) + " (|d| " +
             pts(d_c4) + "), need <= " + fmt(kFreezeWithin));

  const double u_t2 = at("t2-break/cloned-unfreeze-b9"), u_c4 = at("c4-break/cloned-unfreeze-b9");
  report("6d unfreeze solves symmetry-breaking tasks", complete && u_t2 >= kUnfreezeFloor && u_c4 >= kUnfreezeFloor,
         "t2-break " + pts(u_t2) + ", c4-break " + pts(u_c4) + " (>= " + fmt(kUnfreezeFloor) + " each)");

  const double b9 = at("t2-sym/cloned-freeze-b9"), b8 = at("t2-sym/cloned-freeze-b8"), b7 = at("t2-sym/cloned-freeze-b7");
  report("6e freeze ordering 9 >= 8 >= 7 blocks on t2-sym", complete && b9 >= b8 && b8 >= b7,
         "b9 " + pts(b9) + ", b8 " + pts(b8) + ", b7 " + pts(b7));

  report("6 grid runtime", ran && secs <= kGridSeconds,
         std::to_string(a.size()) + " cells in " + fmt(secs / 60.0, 3) + " min (<= " + fmt(kGridSeconds / 60.0) +
             " min)");
}

std::map<std::string, std::string> csv_files(const fs::path& root) {
  std::map<std::string, std::string> files;
  if (!fs::exists(root)) return files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().extension() == ".csv") {
      files[fs::relative(e.path(), root).string()] = slurp(e.path());
    }
  }
  return files;
}

void criterion7(const Paths& p, const fs::path& first, bool ran_first) {
  const fs::path second = p.root / "grid_repeat";
  fs::remove_all(second);
  double secs = 0.0;
  const bool ran = ran_first && run_grid(p, second, "grid_repeat", secs);
  const auto a = csv_files(first), b = csv_files(second);
  std::size_t same = 0;
  std::string first_diff;
  for (const auto& [name, bytes] : a) {
    auto it = b.find(name);
    if (it != b.end() && it->second == bytes) {
      ++same;
    } else if (first_diff.empty()) {
      first_diff = name;
    }
  }
  const bool pass = ran && !a.empty() && a.size() == b.size() && same == a.size();
  report("7 determinism", pass,
         std::to_string(same) + "/" + std::to_string(a.size()) + " CSVs bit-identical across two full grid runs" +
             (first_diff.empty() ? "" : ", first mismatch " + first_diff));
}

void criterion8(const Paths& p, const fs::path& cloned8) {
  std::vector<std::string> problems;
  const fs::path dir = p.root / "c8_persistence";
  fs::create_directories(dir);

  for (const fs::path& src : {cloned8 / "student.ckpt", p.root / "c5_C4" / "student.ckpt"}) {
    try {
      const StudentLayer s = load_student(src);
      const Checkpoint ck = load_checkpoint(src);
      const fs::path copy = dir / ("copy_" + src.parent_path().filename().string() + ".ckpt");
      save_checkpoint(ck, copy);
      const StudentLayer t = load_student(copy);
      const auto a = s.parameters(), b = t.parameters();
      bool same = a.size() == b.size();
      for (std::size_t i = 0; same && i < a.size(); ++i) same = a[i]->value.bit_equal(b[i]->value) && a[i]->role == b[i]->role;
      if (!same) problems.push_back("parameters differ after round trip of " + src.string());
      if (slurp(copy) != slurp(src)) problems.push_back("bytes differ after round trip of " + src.string());
    } catch (const std::exception& e) {
      problems.push_back(e.what());
    }
  }

  const fs::path c14 = dir / "clone14";
  if (cli(p, "clone -o " + c14.string(), "c8_clone") != 0) problems.push_back("clone on 14x14 failed");
  const std::string ckpt = (c14 / "student.ckpt").string();
  if (cli(p, "bench --task t2-sym --model cloned-freeze --checkpoint " + ckpt + " -o " + (dir / "bench").string() +
                 " --set task.train_limit=1000 train.epochs=1",
          "c8_bench") != 0 ||
      !fs::exists(dir / "bench" / "accuracy.csv")) {
    problems.push_back("bench did not consume the cloned checkpoint");
  }
  if (cli(p, "inspect-toeplitz --checkpoint " + ckpt + " -o " + (dir / "toeplitz").string(), "c8_toeplitz") != 0) {
    problems.push_back("inspect-toeplitz did not consume the cloned checkpoint");
  } else {
    const double inspected = csv_mean(dir / "toeplitz" / "toeplitz.csv", "toeplitz_error");
    const json r = read_json(c14 / "clone_report.json");
    if (!r.is_object() || std::abs(inspected - r.value("toeplitz_error", -9.0)) > 1e-6) {
      problems.push_back("inspect-toeplitz disagrees with the clone report");
    }
  }
  report("8 persistence", problems.empty(),
         problems.empty() ? "bit-exact round trips; clone checkpoint consumed by bench and inspect-toeplitz"
                          : problems.front());
}

}  // namespace

int main(int argc, char** argv) {
  Paths p;
  p.cli = SYMCLONE_CLI_PATH;
  p.root = fs::temp_directory_path() / "symclone_acceptance";
  bool grid = true;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--skip-grid") {
      grid = false;
    } else if (a == "--out" && i + 1 < argc) {
      p.root = argv[++i];
    } else {
      std::cerr << "usage: acceptance [--skip-grid] [--out DIR]\n";
      return 2;
    }
  }
  fs::remove_all(p.root);
  fs::create_directories(p.root);

  criterion1();
  criterion2();
  criterion3();
  const fs::path cloned8 = criterion4(p);
  criterion5(p);
  if (grid) {
    const fs::path first = p.root / "grid";
    double secs = 0.0;
    const bool ran = run_grid(p, first, "grid", secs);
    criterion6(p, first, ran, secs);
    criterion7(p, first, ran);
  } else {
    std::cout << "SKIP 6 and 7 (--skip-grid)" << std::endl;
  }
  criterion8(p, cloned8);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
