#include "symclone/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>

#ifndef SYMCLONE_DATA_DIR
#define SYMCLONE_DATA_DIR "data"
#endif

namespace symclone {

using nlohmann::json;

std::filesystem::path default_data_dir() { return SYMCLONE_DATA_DIR; }

namespace {

void read(const json& v, const std::string& key, std::string& out) {
  if (!v.is_string()) throw ConfigError(key, "expected a string");
  out = v.get<std::string>();
}

void read(const json& v, const std::string& key, std::int64_t& out) {
  if (!v.is_number_integer()) throw ConfigError(key, "expected an integer");
  out = v.get<std::int64_t>();
}

void read(const json& v, const std::string& key, std::uint64_t& out) {
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ConfigError(key, "expected a non-negative integer");
  out = v.get<std::uint64_t>();
}

void read(const json& v, const std::string& key, double& out) {
  if (!v.is_number()) throw ConfigError(key, "expected a number");
  out = v.get<double>();
}

void read(const json& v, const std::string& key, std::vector<double>& out) {
  if (!v.is_array()) throw ConfigError(key, "expected an array of numbers");
  out.clear();
  for (const auto& e : v) {
    if (!e.is_number()) throw ConfigError(key, "expected an array of numbers");
    out.push_back(e.get<double>());
  }
}

void read(const json& v, const std::string& key, std::vector<std::int64_t>& out) {
  if (!v.is_array()) throw ConfigError(key, "expected an array of integers");
  out.clear();
  for (const auto& e : v) {
    if (!e.is_number_integer()) throw ConfigError(key, "expected an array of integers");
    out.push_back(e.get<std::int64_t>());
  }
}

void read(const json& v, const std::string& key, std::vector<std::string>& out) {
  out.clear();
  if (v.is_string()) {
    if (!v.get<std::string>().empty()) out.push_back(v.get<std::string>());
    return;
  }
  if (!v.is_array()) throw ConfigError(key, "expected a string or an array of strings");
  for (const auto& e : v) {
    if (!e.is_string()) throw ConfigError(key, "expected a string or an array of strings");
    out.push_back(e.get<std::string>());
  }
}

using Setter = std::function<void(const json&)>;
using Section = std::map<std::string, Setter>;

template <class T>
std::pair<const std::string, Setter> field(const std::string& section, const std::string& key, T& target) {
  const std::string full = section + "." + key;
  return {key, [full, &target](const json& v) { read(v, full, target); }};
}

template <class Fn>
void expect(bool ok, const std::string& key, Fn&& message) {
  if (!ok) throw ConfigError(key, message());
}

}  // namespace

void RunConfig::merge(const json& doc) {
  if (!doc.is_object()) throw ConfigError("<root>", "config document must be a JSON object");
  std::map<std::string, Section> sections{
      {"teacher", {field("teacher", "kind", teacher.kind), field("teacher", "padding", teacher.padding)}},
      {"student",
       {field("student", "kind", student.kind), field("student", "blocks", student.blocks),
        field("student", "embed_dim", student.embed_dim), field("student", "height", student.height),
        field("student", "width", student.width)}},
      {"clone",
       {field("clone", "batch", clone.batch), field("clone", "optimizer", clone.optimizer),
        field("clone", "lr", clone.lr), field("clone", "max_steps", clone.max_steps),
        field("clone", "window", clone.window), field("clone", "eps_rel", clone.eps_rel),
        field("clone", "eval_interval", clone.eval_interval), field("clone", "eval_batch", clone.eval_batch),
        field("clone", "eval_equiv_samples", clone.eval_equiv_samples),
        field("clone", "equiv_samples", clone.equiv_samples)}},
      {"task",
       {field("task", "name", task.name), field("task", "model", task.model),
        field("task", "checkpoint", task.checkpoint), field("task", "images", task.images),
        field("task", "labels", task.labels), field("task", "split", task.split),
        field("task", "max_shift", task.max_shift), field("task", "downsample", task.downsample),
        field("task", "train_limit", task.train_limit)}},
      {"train",
       {field("train", "epochs", train.epochs), field("train", "batch", train.batch),
        field("train", "optimizer", train.optimizer), field("train", "lr", train.lr), field("train", "beta", train.beta),
        field("train", "var_floor", train.var_floor),
        field("train", "structure_lr_scale", train.structure_lr_scale), field("train", "channels", train.channels),
        field("train", "pool_after", train.pool_after), field("train", "gcnn_channels", train.gcnn_channels),
        field("train", "gcnn_pool_after", train.gcnn_pool_after), field("train", "head_hidden", train.head_hidden),
        field("train", "mlp_hidden", train.mlp_hidden), field("train", "eval_batch", train.eval_batch)}},
      {"seeds", {field("seeds", "clone", seeds.clone), field("seeds", "data", seeds.data), field("seeds", "train", seeds.train)}},
      {"output", {field("output", "dir", output.dir)}},
  };
  for (const auto& [name, body] : doc.items()) {
    const auto sec = sections.find(name);
    if (sec == sections.end()) throw ConfigError(name, "unknown config section");
    if (!body.is_object()) throw ConfigError(name, "section must be a JSON object");
    for (const auto& [key, value] : body.items()) {
      const auto setter = sec->second.find(key);
      if (setter == sec->second.end()) throw ConfigError(name + "." + key, "unknown config key");
      setter->second(value);
    }
  }
}

void RunConfig::validate() const {
  const auto enum_check = [](const std::string& key, auto&& parse) {
    try {
      parse();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(key, e.what());
    }
  };
  enum_check("teacher.kind", [&] { parse_teacher_kind(teacher.kind); });
  expect(teacher.padding == "zero_fill" || teacher.padding == "circular", "teacher.padding",
         [&] { return "expected zero_fill or circular, got '" + teacher.padding + "'"; });
  enum_check("student.kind", [&] { parse_student_kind(student.kind); });
  enum_check("clone.optimizer", [&] { parse_optimizer_kind(clone.optimizer); });
  enum_check("train.optimizer", [&] { parse_optimizer_kind(train.optimizer); });
  enum_check("task.name", [&] { parse_task_id(task.name); });
  static const std::vector<std::string> models{"mlp", "cnn", "gcnn", "cloned-freeze", "cloned-unfreeze"};
  expect(std::find(models.begin(), models.end(), task.model) != models.end(), "task.model",
         [&] { return "unknown model '" + task.model + "'"; });
  const StudentKind sk = parse_student_kind(student.kind);
  const bool approx = sk == StudentKind::blockmlp_approx || sk == StudentKind::mlp2gcnn_approx;
  expect(approx ? student.blocks >= 7 && student.blocks <= 10 : student.blocks == 9, "student.blocks",
         [&] { return "block count " + std::to_string(student.blocks) + " is invalid for " + student.kind; });
  expect(student.embed_dim >= 1, "student.embed_dim", [] { return "must be positive"; });
  expect(student.height >= 1 && student.width >= 1, "student.height", [] { return "grid must be at least 1x1"; });
  try {
    clone_config().validate();
    train_config(TrainMode::unfreeze, true).validate();
  } catch (const ConfigError&) {
    throw;
  }
  expect(task.max_shift >= 0, "task.max_shift", [] { return "must be non-negative"; });
  expect(task.downsample >= 1, "task.downsample", [] { return "must be positive"; });
  expect(task.train_limit >= 0, "task.train_limit", [] { return "must be non-negative"; });
  expect(task.split.size() == 2, "task.split", [] { return "expected [train_fraction, test_fraction]"; });
  expect(std::abs(task.split[0] + task.split[1] - 1.0) < 1e-9 && task.split[0] > 0 && task.split[1] > 0, "task.split",
         [] { return "fractions must be positive and sum to 1"; });
  const auto positive = [](const std::vector<std::int64_t>& v) {
    return !v.empty() && std::all_of(v.begin(), v.end(), [](std::int64_t c) { return c > 0; });
  };
  expect(positive(train.channels), "train.channels", [] { return "expected a non-empty list of positive counts"; });
  expect(positive(train.gcnn_channels), "train.gcnn_channels",
         [] { return "expected a non-empty list of positive counts"; });
  expect(positive(train.mlp_hidden), "train.mlp_hidden", [] { return "expected a non-empty list of positive widths"; });
  const auto schedule = [](const std::vector<std::int64_t>& pool, std::size_t layers) {
    return std::all_of(pool.begin(), pool.end(), [&](std::int64_t i) { return i >= 0 && i < static_cast<std::int64_t>(layers); });
  };
  expect(schedule(train.pool_after, train.channels.size()), "train.pool_after",
         [] { return "layer indices must lie within train.channels"; });
  expect(schedule(train.gcnn_pool_after, train.gcnn_channels.size()), "train.gcnn_pool_after",
         [] { return "layer indices must lie within train.gcnn_channels"; });
  expect(train.head_hidden >= 0, "train.head_hidden", [] { return "must be non-negative"; });
  expect(!output.dir.empty(), "output.dir", [] { return "must not be empty"; });
}

json RunConfig::to_json() const {
  return json{
      {"teacher", {{"kind", teacher.kind}, {"padding", teacher.padding}}},
      {"student",
       {{"kind", student.kind}, {"blocks", student.blocks}, {"embed_dim", student.embed_dim},
        {"height", student.height}, {"width", student.width}}},
      {"clone",
       {{"batch", clone.batch}, {"optimizer", clone.optimizer}, {"lr", clone.lr}, {"max_steps", clone.max_steps},
        {"window", clone.window}, {"eps_rel", clone.eps_rel}, {"eval_interval", clone.eval_interval},
        {"eval_batch", clone.eval_batch}, {"eval_equiv_samples", clone.eval_equiv_samples},
        {"equiv_samples", clone.equiv_samples}}},
      {"task",
       {{"name", task.name}, {"model", task.model}, {"checkpoint", task.checkpoint}, {"images", task.images},
        {"labels", task.labels}, {"split", task.split}, {"max_shift", task.max_shift},
        {"downsample", task.downsample}, {"train_limit", task.train_limit}}},
      {"train",
       {{"epochs", train.epochs}, {"batch", train.batch}, {"optimizer", train.optimizer}, {"lr", train.lr},
        {"beta", train.beta}, {"var_floor", train.var_floor},
        {"structure_lr_scale", train.structure_lr_scale}, {"channels", train.channels},
        {"pool_after", train.pool_after}, {"gcnn_channels", train.gcnn_channels},
        {"gcnn_pool_after", train.gcnn_pool_after}, {"head_hidden", train.head_hidden}, {"mlp_hidden", train.mlp_hidden},
        {"eval_batch", train.eval_batch}}},
      {"seeds", {{"clone", seeds.clone}, {"data", seeds.data}, {"train", seeds.train}}},
      {"output", {{"dir", output.dir}}},
  };
}

StudentSpec RunConfig::student_spec() const {
  StudentSpec s;
  s.kind = parse_student_kind(student.kind);
  s.blocks = student.blocks;
  s.embed_dim = student.embed_dim;
  s.height = student.height;
  s.width = student.width;
  return s;
}

TeacherSpec RunConfig::teacher_spec() const {
  TeacherSpec t;
  t.kind = parse_teacher_kind(teacher.kind);
  t.padding = teacher.padding == "circular" ? Padding::circular : Padding::zero_fill;
  t.height = student.height;
  t.width = student.width;
  return t;
}

CloneConfig RunConfig::clone_config() const {
  CloneConfig c;
  c.batch = clone.batch;
  c.optimizer.kind = parse_optimizer_kind(clone.optimizer);
  c.optimizer.learning_rate = clone.lr;
  c.max_steps = clone.max_steps;
  c.window = clone.window;
  c.eps_rel = clone.eps_rel;
  c.eval_interval = clone.eval_interval;
  c.eval_batch = clone.eval_batch;
  c.eval_equiv_samples = clone.eval_equiv_samples;
  c.equiv_samples = clone.equiv_samples;
  c.seed = seeds.clone;
  return c;
}

TrainConfig RunConfig::train_config(TrainMode mode, bool with_kl) const {
  TrainConfig c;
  c.mode = mode;
  c.epochs = train.epochs;
  c.batch = train.batch;
  c.optimizer.kind = parse_optimizer_kind(train.optimizer);
  c.optimizer.learning_rate = train.lr;
  c.kl = {with_kl ? train.beta : 0.0, train.var_floor};
  c.structure_lr_scale = train.structure_lr_scale;
  c.eval_batch = train.eval_batch;
  c.seed = seeds.train;
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  RunConfig config;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("--config", "cannot read " + path.string());
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("--config", std::string("invalid JSON: ") + e.what());
    }
    config.merge(doc);
  }
  config.validate();
  return config;
}

}  // namespace symclone
