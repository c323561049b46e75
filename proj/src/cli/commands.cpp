#include "symclone/cli.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "symclone/checkpoint.hpp"
#include "symclone/fetch.hpp"
#include "symclone/groups.hpp"
#include "symclone/metrics.hpp"

namespace symclone {

namespace fs = std::filesystem;
using nlohmann::json;

int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

/// Collects produced files; finish() writes effective_config.json and a
/// manifest with size and SHA-256 of every file.
class RunOutput {
 public:
  RunOutput(const RunConfig& config, std::string command) : dir_(config.output.dir), command_(std::move(command)) {
    fs::create_directories(dir_);
    const auto path = dir_ / "effective_config.json";
    std::ofstream(path) << config.to_json().dump(2) << "\n";
    files_.push_back(path);
  }

  const fs::path& dir() const noexcept { return dir_; }
  fs::path add(const std::string& name) {
    files_.push_back(dir_ / name);
    return files_.back();
  }
  void add_path(const fs::path& path) { files_.push_back(path); }

  void finish() const {
    json entries = json::array();
    for (const auto& f : files_) {
      if (!fs::exists(f)) continue;
      entries.push_back({{"path", fs::relative(f, dir_).generic_string()},
                         {"bytes", fs::file_size(f)},
                         {"sha256", sha256_file(f)}});
    }
    std::ofstream(dir_ / "manifest.json") << json{{"command", command_}, {"files", entries}}.dump(2) << "\n";
  }

 private:
  fs::path dir_;
  std::string command_;
  std::vector<fs::path> files_;
};

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump(2) << "\n";
}

json report_json(const EquivarianceReport& r) {
  return {{"group", r.group}, {"samples", r.samples}, {"mean", r.mean}, {"max", r.max}, {"std", r.std}};
}

GroupKind student_group(StudentKind kind) {
  return kind == StudentKind::blockmlp9 || kind == StudentKind::blockmlp_approx ? GroupKind::t2 : GroupKind::c4;
}

/// Teacher recorded in a checkpoint, falling back to the config.
TeacherSpec teacher_for(const RunConfig& config, const Checkpoint& ckpt, const StudentLayer& student) {
  TeacherSpec t = config.teacher_spec();
  const auto& meta = ckpt.meta;
  if (meta.contains("teacher_kind")) {
    t.kind = parse_teacher_kind(meta["teacher_kind"].get<std::string>());
  } else {
    t.kind = student.subunits() == 4 ? TeacherKind::lifting : TeacherKind::conv;
  }
  if (meta.contains("teacher_padding")) {
    t.padding = meta["teacher_padding"].get<std::string>() == "circular" ? Padding::circular : Padding::zero_fill;
  }
  t.height = student.spec().height;
  t.width = student.spec().width;
  return t;
}

std::string padding_name(Padding p) { return p == Padding::circular ? "circular" : "zero_fill"; }

struct LoadedStudent {
  Checkpoint checkpoint;
  StudentLayer student;
};

LoadedStudent load_checkpoint_file(const std::string& path, std::optional<StudentKind> expected) {
  if (!fs::exists(path)) throw ConfigError("task.checkpoint", "no such file '" + path + "'");
  Checkpoint ckpt = load_checkpoint(path);
  try {
    StudentLayer s = student_from_checkpoint(ckpt, expected);
    return {std::move(ckpt), std::move(s)};
  } catch (const FormatError& e) {
    if (expected) throw ConfigError("task.checkpoint", e.what());
    throw;
  }
}

/// The single checkpoint of commands that inspect one cloned unit.
LoadedStudent load_checkpoint_arg(const RunConfig& config, std::optional<StudentKind> expected = std::nullopt) {
  if (config.task.checkpoint.empty()) throw ConfigError("task.checkpoint", "a student checkpoint is required");
  if (config.task.checkpoint.size() > 1) throw ConfigError("task.checkpoint", "expected a single checkpoint");
  return load_checkpoint_file(config.task.checkpoint.front(), expected);
}

/// Input grid side of every layer under a pooling schedule, largest first,
/// without repeats.
std::vector<std::int64_t> layer_sides(std::int64_t side, std::size_t layers, const std::vector<std::int64_t>& pool) {
  std::vector<std::int64_t> sides;
  for (std::size_t i = 0; i < layers; ++i) {
    const std::int64_t s = i == 0 ? side : pooled_side(side, pool, static_cast<std::int64_t>(i) - 1);
    if (std::find(sides.begin(), sides.end(), s) == sides.end()) sides.push_back(s);
  }
  return sides;
}

struct CloneOutcome {
  CloneReport report;
  StudentLayer student;
};

CloneOutcome clone_student(const StudentSpec& spec, const TeacherSpec& teacher, const CloneConfig& cc) {
  SeededRng init = SeededRng::stream(cc.seed, 0);
  StudentLayer student(spec, init);
  CloneReport report = clone_until_converged(student, teacher, cc);
  return {std::move(report), std::move(student)};
}

json clone_meta(const TeacherSpec& teacher, const CloneConfig& cc, const CloneReport& report) {
  return {{"teacher_kind", to_string(teacher.kind)},
          {"teacher_padding", padding_name(teacher.padding)},
          {"seed", cc.seed},
          {"converged", report.converged},
          {"steps", report.steps},
          {"final_rel_mse", report.final_rel_mse}};
}

// ---- data -------------------------------------------------------------

fs::path data_file(const std::string& configured, const std::string& key, const char* fallback) {
  const fs::path p = configured.empty() ? default_data_dir() / "mnist10k" / fallback : fs::path(configured);
  if (!fs::exists(p)) throw ConfigError(key, "cannot find '" + p.string() + "' (set " + key + " or run fetch-data)");
  return p;
}

Dataset load_configured_dataset(const RunConfig& config) {
  return load_mnist_idx(data_file(config.task.images, "task.images", "images-idx3-ubyte.gz"),
                        data_file(config.task.labels, "task.labels", "labels-idx1-ubyte.gz"));
}

BenchmarkTask load_task(const RunConfig& config, TaskId id) {
  const Dataset all = load_configured_dataset(config);
  auto parts = deterministic_split(all, config.task.split, config.seeds.data);
  Dataset train = std::move(parts[0]);
  if (config.task.train_limit > 0 && config.task.train_limit < train.size()) {
    std::vector<std::int64_t> idx;
    for (std::int64_t i = 0; i < config.task.train_limit; ++i) idx.push_back(i);
    train = train.subset(idx);
  }
  BenchmarkTask task = make_task(id, train, parts[1], config.seeds.data, static_cast<int>(config.task.max_shift));
  if (config.task.downsample > 1) {
    task.train = downsample(task.train, config.task.downsample);
    task.test = downsample(task.test, config.task.downsample);
  }
  return task;
}

// ---- bench ------------------------------------------------------------

struct CellResult {
  BenchCell cell;
  TrainReport report;
};

/// `units` are cloned units ordered by decreasing grid, the first matching
/// the task images.
std::unique_ptr<Classifier> build_model(const RunConfig& config, const BenchmarkTask& task, const std::string& model,
                                        const std::vector<StudentLayer>* units) {
  SeededRng rng = SeededRng::stream(config.seeds.train, 7);
  const bool t2 = task.group == GroupKind::t2;
  if (model == "mlp" || model == "cnn" || model == "gcnn") {
    ClassifierSpec spec;
    spec.kind = parse_classifier_kind(model);
    spec.height = task.train.height();
    spec.width = task.train.width();
    const bool gcnn = spec.kind == ClassifierKind::gcnn;
    spec.channels = gcnn ? config.train.gcnn_channels : config.train.channels;
    spec.pool_after = gcnn ? config.train.gcnn_pool_after : config.train.pool_after;
    spec.mlp_hidden = config.train.mlp_hidden;
    spec.head_hidden = config.train.head_hidden;
    spec.classes = task.classes;
    return build_reference_classifier(spec, rng);
  }
  if (!units || units->empty()) throw ConfigError("task.checkpoint", "model " + model + " needs a cloned checkpoint");
  for (const auto& unit : *units) {
    if (student_group(unit.spec().kind) != task.group) {
      throw ConfigError("task.checkpoint", "a " + to_string(unit.spec().kind) + " student cannot serve task " +
                                               to_string(task.id) + " (" +
                                               (t2 ? "T2 needs blockmlp" : "C4 needs mlp2gcnn") + ")");
    }
  }
  const StudentLayer& top = units->front();
  if (top.spec().height != task.train.height() || top.spec().width != task.train.width()) {
    throw ConfigError("task.checkpoint", "student grid " + std::to_string(top.spec().height) + "x" +
                                             std::to_string(top.spec().width) + " differs from the " +
                                             std::to_string(task.train.height()) + "x" +
                                             std::to_string(task.train.width()) + " task images");
  }
  StudentClassifierSpec spec;
  spec.channels = t2 ? config.train.channels : config.train.gcnn_channels;
  spec.pool_after = t2 ? config.train.pool_after : config.train.gcnn_pool_after;
  spec.head_hidden = config.train.head_hidden;
  spec.classes = task.classes;
  try {
    return assemble_student_classifier(*units, spec, rng);
  } catch (const ShapeError& e) {
    throw ConfigError("task.checkpoint", e.what());
  }
}

void check_model_name(const std::string& model) {
  static const std::vector<std::string> models{"mlp", "cnn", "gcnn", "cloned-freeze", "cloned-unfreeze"};
  if (std::find(models.begin(), models.end(), model) == models.end()) {
    throw ConfigError("task.model", "unknown model '" + model + "'");
  }
}

TrainReport train_cell(const RunConfig& config, const BenchmarkTask& task, const std::string& model,
                       const std::vector<StudentLayer>* units) {
  auto classifier = build_model(config, task, model, units);
  const TrainMode mode = model == "cloned-freeze" ? TrainMode::freeze : TrainMode::unfreeze;
  return train_on_task(*classifier, task, config.train_config(mode, model == "cloned-unfreeze"));
}

std::string percent(double a) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * a;
  return s.str();
}

void write_summary(const std::vector<CellResult>& rows, const fs::path& csv, const fs::path& md) {
  {
    std::ofstream out(csv);
    if (!out) throw Error("cannot write " + csv.string());
    out << "task,model,blocks,test_accuracy,train_accuracy\n";
    out.precision(9);
    for (const auto& r : rows) {
      out << r.cell.task << ',' << r.cell.model << ',' << r.cell.blocks << ',' << r.report.final_test_accuracy << ','
          << r.report.final_train_accuracy << '\n';
    }
  }
  // Table layout: one row per model, symmetric / symmetry-breaking columns
  // for the translated and rotated tasks.
  std::map<std::string, std::map<std::string, double>> table;
  std::vector<std::string> order;
  const auto row_name = [](const BenchCell& c, bool rotated) {
    if (c.model == "mlp") return std::string("MLP");
    if (c.model == "cnn" || c.model == "gcnn") return std::string("CNN / GCNN");
    const std::string base = rotated ? "mlp2gcnn" : "mlp2cnn";
    (void)base;
    if (c.model == "cloned-freeze") return "cloned freeze, " + std::to_string(c.blocks) + " blocks";
    return "cloned unfreeze, " + std::to_string(c.blocks) + " blocks";
  };
  for (const auto& r : rows) {
    const bool rotated = r.cell.task.rfind("c4", 0) == 0;
    const std::string name = row_name(r.cell, rotated);
    if (!table.count(name)) order.push_back(name);
    table[name][r.cell.task] = r.report.final_test_accuracy;
  }
  std::ofstream out(md);
  if (!out) throw Error("cannot write " + md.string());
  out << "| Model | t2-sym | t2-break | c4-sym | c4-break |\n|---|---:|---:|---:|---:|\n";
  for (const auto& name : order) {
    out << "| " << name;
    for (const char* t : {"t2-sym", "t2-break", "c4-sym", "c4-break"}) {
      const auto it = table[name].find(t);
      out << " | " << (it == table[name].end() ? "-" : percent(it->second));
    }
    out << " |\n";
  }
}

std::string checkpoint_name(GroupKind group, std::int64_t blocks, std::int64_t height, std::int64_t width) {
  const std::string kind = group == GroupKind::t2 ? (blocks == 9 ? "blockmlp9" : "blockmlp_approx")
                                                  : (blocks == 9 ? "mlp2gcnn" : "mlp2gcnn_approx");
  return std::string(group == GroupKind::t2 ? "t2" : "c4") + "-" + kind + "-b" + std::to_string(blocks) + "-" +
         std::to_string(height) + "x" + std::to_string(width) + ".ckpt";
}

/// Loads the cloned unit for (group, blocks) from `dir`, cloning and saving
/// it first when missing.
StudentLayer grid_student(const RunConfig& config, GroupKind group, std::int64_t blocks, const fs::path& dir,
                          std::int64_t height, std::int64_t width, std::ostream& log) {
  const fs::path path = dir / checkpoint_name(group, blocks, height, width);
  StudentSpec spec = config.student_spec();
  spec.kind = group == GroupKind::t2 ? (blocks == 9 ? StudentKind::blockmlp9 : StudentKind::blockmlp_approx)
                                     : (blocks == 9 ? StudentKind::mlp2gcnn : StudentKind::mlp2gcnn_approx);
  spec.blocks = blocks;
  spec.height = height;
  spec.width = width;
  if (fs::exists(path)) {
    StudentLayer s = load_student(path, spec.kind);
    if (s.spec().blocks != blocks || s.spec().height != height || s.spec().width != width) {
      throw ConfigError("--checkpoint-dir", path.string() + " does not match the grid cell");
    }
    log << "reusing " << path.string() << "\n";
    return s;
  }
  TeacherSpec teacher = config.teacher_spec();
  teacher.kind = group == GroupKind::t2 ? TeacherKind::conv : TeacherKind::lifting;
  teacher.height = height;
  teacher.width = width;
  const CloneConfig cc = config.clone_config();
  const auto start = std::chrono::steady_clock::now();
  auto outcome = clone_student(spec, teacher, cc);
  fs::create_directories(dir);
  save_student(outcome.student, path, clone_meta(teacher, cc, outcome.report));
  write_loss_csv(outcome.report, dir / (path.stem().string() + "-loss.csv"));
  log << "cloned " << path.filename().string() << ": rel_mse " << outcome.report.final_rel_mse << " after "
      << outcome.report.steps << " steps" << (outcome.report.converged ? "" : " (not converged)") << ", "
      << std::setprecision(3) << seconds_since(start) << " s\n";
  return std::move(outcome.student);
}

}  // namespace

std::string BenchCell::label() const {
  return task + "_" + model + (blocks > 0 ? "-b" + std::to_string(blocks) : "");
}

std::vector<BenchCell> bench_grid() {
  std::vector<BenchCell> cells;
  for (const char* group : {"t2", "c4"}) {
    const std::string base = std::string(group) == "t2" ? "cnn" : "gcnn";
    const std::string sym = std::string(group) + "-sym", brk = std::string(group) + "-break";
    cells.push_back({sym, "mlp", 0});
    cells.push_back({sym, base, 0});
    for (std::int64_t b : {9, 8, 7}) cells.push_back({sym, "cloned-freeze", b});
    cells.push_back({sym, "cloned-unfreeze", 9});
    cells.push_back({brk, "mlp", 0});
    cells.push_back({brk, base, 0});
    cells.push_back({brk, "cloned-unfreeze", 9});
  }
  return cells;
}

int run_clone(const RunConfig& config, std::ostream& log) {
  const StudentSpec spec = config.student_spec();
  const TeacherSpec teacher = config.teacher_spec();
  const CloneConfig cc = config.clone_config();
  {
    SeededRng probe(0);
    check_compatible(StudentLayer(spec, probe), teacher);
  }
  RunOutput out(config, "clone");
  const auto start = std::chrono::steady_clock::now();
  auto [report, student] = clone_student(spec, teacher, cc);
  save_student(student, out.add("student.ckpt"), clone_meta(teacher, cc, report));
  write_loss_csv(report, out.add("loss.csv"));
  json doc{{"converged", report.converged},
           {"steps", report.steps},
           {"final_rel_mse", report.final_rel_mse},
           {"eps_rel", cc.eps_rel},
           {"window", cc.window},
           {"student_kind", to_string(spec.kind)},
           {"blocks", spec.blocks},
           {"teacher_kind", to_string(teacher.kind)},
           {"teacher_padding", padding_name(teacher.padding)},
           {"initial_equivariance", report_json(report.initial_equivariance)},
           {"final_equivariance", report_json(report.final_equivariance)}};
  if (spec.kind == StudentKind::blockmlp9) {
    doc["toeplitz_error"] =
        toeplitz_error(student.block_param(0)->value, toeplitz_unroll(spec.height, spec.width, teacher.padding));
  }
  write_json(out.add("clone_report.json"), doc);
  out.finish();
  log << (report.converged ? "converged" : "did not converge") << " after " << report.steps << " steps, rel_mse "
      << report.final_rel_mse << ", " << std::setprecision(3) << seconds_since(start) << " s\n";
  return report.converged ? kExitOk : kExitNotConverged;
}

int run_eval_equiv(const RunConfig& config, std::ostream& log) {
  std::optional<LoadedStudent> loaded;
  if (!config.task.checkpoint.empty()) loaded = load_checkpoint_arg(config);
  StudentSpec spec = loaded ? loaded->student.spec() : config.student_spec();
  TeacherSpec teacher = loaded ? teacher_for(config, loaded->checkpoint, loaded->student) : config.teacher_spec();
  SeededRng init = SeededRng::stream(config.seeds.clone, 21);
  const StudentLayer random(spec, init);
  check_compatible(random, teacher);
  const GroupKind group = teacher.group();
  const std::int64_t n = config.clone.equiv_samples;

  std::vector<std::pair<std::string, EquivarianceReport>> rows;
  const auto measure = [&](const StudentLayer* s) {
    SeededRng rng = SeededRng::stream(config.seeds.clone, 3);
    return student_equivariance(s, teacher, group, n, rng);
  };
  rows.emplace_back("teacher", measure(nullptr));
  if (loaded) rows.emplace_back("student", measure(&loaded->student));
  rows.emplace_back("random_student", measure(&random));

  RunOutput out(config, "eval-equiv");
  const fs::path csv = out.add("equivariance.csv");
  fs::remove(csv);
  write_metric_csv(csv, rows);
  out.finish();
  for (const auto& [name, r] : rows) log << name << " " << r.group << " mean " << r.mean << "\n";
  return kExitOk;
}

int run_bench(const RunConfig& config, const BenchOptions& options, std::ostream& log) {
  std::vector<BenchCell> cells;
  if (options.all) {
    cells = bench_grid();
  } else {
    check_model_name(config.task.model);
    cells.push_back({config.task.name, config.task.model, 0});
  }
  std::vector<StudentLayer> given_units;
  if (!options.all && config.task.model.rfind("cloned-", 0) == 0) {
    if (config.task.checkpoint.empty()) throw ConfigError("task.checkpoint", "a student checkpoint is required");
    for (const auto& path : config.task.checkpoint) given_units.push_back(load_checkpoint_file(path, std::nullopt).student);
    std::stable_sort(given_units.begin(), given_units.end(), [](const StudentLayer& a, const StudentLayer& b) {
      return a.spec().height * a.spec().width > b.spec().height * b.spec().width;
    });
    cells[0].blocks = given_units.front().spec().blocks;
  }
  RunOutput out(config, options.all ? "bench --all" : "bench");
  const fs::path ckpt_dir = options.checkpoint_dir.empty() ? out.dir() / "checkpoints" : options.checkpoint_dir;

  std::map<std::string, BenchmarkTask> tasks;
  std::vector<CellResult> results;
  const auto grid_start = std::chrono::steady_clock::now();
  for (const auto& cell : cells) {
    if (!tasks.count(cell.task)) tasks.emplace(cell.task, load_task(config, parse_task_id(cell.task)));
    const BenchmarkTask& task = tasks.at(cell.task);
    std::vector<StudentLayer> units;
    if (cell.model.rfind("cloned-", 0) == 0) {
      if (!given_units.empty()) {
        for (const auto& u : given_units) units.push_back(u.clone());
      } else {
        const bool t2 = task.group == GroupKind::t2;
        const auto& channels = t2 ? config.train.channels : config.train.gcnn_channels;
        const auto& pool = t2 ? config.train.pool_after : config.train.gcnn_pool_after;
        const std::int64_t h = task.train.height(), w = task.train.width();
        for (std::int64_t side : layer_sides(h, channels.size(), pool)) {
          const std::int64_t sh = side, sw = side * w / h;
          units.push_back(grid_student(config, task.group, cell.blocks, ckpt_dir, sh, sw, log));
        }
      }
    }
    const auto start = std::chrono::steady_clock::now();
    TrainReport report = train_cell(config, task, cell.model, units.empty() ? nullptr : &units);
    const fs::path csv = out.add(options.all ? cell.label() + ".csv" : "accuracy.csv");
    write_accuracy_csv(report, csv);
    log << cell.label() << ": test " << percent(report.final_test_accuracy) << "% train "
        << percent(report.final_train_accuracy) << "% (" << std::setprecision(3) << seconds_since(start) << " s)\n";
    results.push_back({cell, std::move(report)});
  }
  if (options.all) {
    for (const auto& entry : fs::directory_iterator(ckpt_dir)) {
      if (fs::relative(entry.path(), out.dir()).string().rfind("..", 0) != 0) out.add_path(entry.path());
    }
  }
  write_summary(results, out.add("summary.csv"), out.add("summary.md"));
  out.finish();
  log << "bench finished in " << std::setprecision(4) << seconds_since(grid_start) << " s\n";
  return kExitOk;
}

int run_inspect_toeplitz(const RunConfig& config, std::ostream& log) {
  auto [ckpt, student] = load_checkpoint_arg(config, StudentKind::blockmlp9);
  const TeacherSpec teacher = teacher_for(config, ckpt, student);
  const ToeplitzOracle oracle = toeplitz_unroll(student.spec().height, student.spec().width, teacher.padding);
  const Tensor& blocks = student.block_param(0)->value;
  const double err = toeplitz_error(blocks, oracle);

  const std::int64_t n = student.size();
  const auto montage = [n](const Tensor& stack) {
    Tensor img({3 * n, 3 * n});
    for (std::int64_t k = 0; k < 9; ++k) {
      const std::int64_t r0 = (k / 3) * n, c0 = (k % 3) * n;
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < n; ++j) img.set((r0 + i) * 3 * n + c0 + j, stack.at((k * n + i) * n + j));
      }
    }
    return img;
  };
  const Tensor learned = montage(blocks), reference = montage(oracle.selectors);
  const std::int64_t gap = 8, side = 3 * n;
  Tensor both({side, 2 * side + gap});
  for (std::int64_t i = 0; i < side; ++i) {
    for (std::int64_t j = 0; j < side; ++j) {
      both.set(i * (2 * side + gap) + j, learned.at(i * side + j));
      both.set(i * (2 * side + gap) + side + gap + j, reference.at(i * side + j));
    }
  }
  RunOutput out(config, "inspect-toeplitz");
  write_pgm(out.add("learned.pgm"), learned);
  write_pgm(out.add("oracle.pgm"), reference);
  write_pgm(out.add("side_by_side.pgm"), both);
  {
    std::ofstream csv(out.add("toeplitz.csv"));
    csv.precision(9);
    csv << "metric,mean,max,std,n\n";
    csv << "toeplitz_error," << err << ',' << err << ",0,1\n";
    for (std::int64_t k = 0; k < 9; ++k) {
      double num = 0.0, den = 0.0;
      for (std::int64_t i = 0; i < n * n; ++i) {
        const double p = oracle.selectors.at(k * n * n + i), d = blocks.at(k * n * n + i) - p;
        num += d * d;
        den += p * p;
      }
      const double e = den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
      csv << "block_" << k << "_error," << e << ',' << e << ",0,1\n";
    }
  }
  out.finish();
  log << "toeplitz_error " << err << "\n";
  return kExitOk;
}

int run_export_maps(const RunConfig& config, std::int64_t samples, std::ostream& log) {
  if (samples < 1) throw ConfigError("--samples", "must be positive");
  auto [ckpt, student] = load_checkpoint_arg(config);
  const TeacherSpec teacher = teacher_for(config, ckpt, student);
  const std::int64_t h = student.spec().height, w = student.spec().width;
  Dataset data = load_configured_dataset(config);
  if (data.height() != h) {
    if (data.height() % h != 0) {
      throw ConfigError("student.height", "dataset images do not downsample to the student grid");
    }
    data = downsample(data, data.height() / h);
  }
  if (data.height() != h || data.width() != w) throw ConfigError("student.height", "grid does not match the dataset");
  const bool t2 = teacher.kind == TeacherKind::conv;

  SeededRng kernel_rng = SeededRng::stream(config.seeds.clone, 9);
  const Tensor tau = sample_standard_normal(kernel_rng, {1, 9});
  SeededRng init = SeededRng::stream(config.seeds.clone, 21);
  const StudentLayer random(student.spec(), init);

  const auto planar = [h, w](const Tensor& y) {
    if (y.numel() == h * w) return y.reshaped({h, w});
    return group_pool(y.reshaped({1, 4, h, w})).reshaped({h, w});
  };
  std::vector<FeatureMapModel> models;
  models.push_back({t2 ? "cnn" : "gcnn", [&](const Tensor& x) {
                      return planar(teacher.forward(x.reshaped({1, h * w}), tau));
                    }});
  models.push_back({"cloned", [&](const Tensor& x) { return planar(student.apply(x.reshaped({1, h * w}), tau)); }});
  models.push_back({"random", [&](const Tensor& x) { return planar(random.apply(x.reshaped({1, h * w}), tau)); }});

  std::vector<Tensor> inputs;
  const std::int64_t count = std::min(samples, data.size());
  for (std::int64_t i = 0; i < count; ++i) {
    Tensor img({h, w});
    for (std::int64_t j = 0; j < h * w; ++j) img.set(j, data.images.at(i * h * w + j));
    inputs.push_back(img);
    inputs.push_back(t2 ? translate_image(img, T2Element{static_cast<int>(h / 7), static_cast<int>(w / 7)}, Padding::zero_fill)
                        : rotate90_image(img, C4Element{1}));
  }
  RunOutput out(config, "export-maps");
  for (const auto& p : export_feature_maps(models, inputs, out.dir() / "maps")) out.add_path(p);
  out.finish();
  log << "wrote " << inputs.size() << " rows to " << (out.dir() / "maps").string() << "\n";
  return kExitOk;
}

int run_fetch_data(const fs::path& directory, const std::string& mirror, std::ostream& log) {
  for (const auto& p : fetch_mnist(directory, mirror)) log << "verified " << p.string() << "\n";
  return kExitOk;
}

}  // namespace symclone
