#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "symclone/cli.hpp"
#include "symclone/fetch.hpp"

using namespace symclone;

namespace {

/// "section.key=value"; the value is parsed as JSON when possible, else
/// taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError(assignment, "expected --set section.key=value");
  }
  const std::string section = assignment.substr(0, dot), key = assignment.substr(dot + 1, eq - dot - 1);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  doc[section][key] = value;
}

struct CommonFlags {
  std::string config;
  std::string out;
  std::vector<std::string> checkpoint;
  std::vector<std::string> sets;

  void add_to(CLI::App* app, bool with_checkpoint) {
    app->add_option("-c,--config", config, "JSON config file merged over the defaults");
    app->add_option("-o,--out", out, "output directory (output.dir)");
    if (with_checkpoint) {
      app->add_option("--checkpoint", checkpoint, "student checkpoint (task.checkpoint); repeat for pooled stacks");
    }
    app->add_option("--set", sets, "override a config entry, e.g. --set clone.max_steps=2000")->take_all();
  }

  /// Defaults, then the config file, then flags.
  RunConfig resolve() const {
    RunConfig cfg;
    if (!config.empty()) {
      std::ifstream in(config);
      if (!in) throw ConfigError("--config", "cannot read " + config);
      const auto doc = nlohmann::json::parse(in, nullptr, false);
      if (doc.is_discarded()) throw ConfigError("--config", config + " is not valid JSON");
      cfg.merge(doc);
    }
    nlohmann::json flags = nlohmann::json::object();
    for (const auto& s : sets) apply_override(flags, s);
    if (!out.empty()) flags["output"]["dir"] = out;
    if (!checkpoint.empty()) flags["task"]["checkpoint"] = checkpoint;
    cfg.merge(flags);
    cfg.validate();
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  std::cout << std::unitbuf;
  CLI::App app{"symclone: symmetry-cloning of equivariant layers into group-agnostic students"};
  app.require_subcommand(1);

  CommonFlags clone_flags, equiv_flags, bench_flags, toeplitz_flags, maps_flags;
  auto* clone = app.add_subcommand("clone", "clone a student against an equivariant teacher");
  clone_flags.add_to(clone, false);
  clone->add_option_function<std::string>("--student", [&](const std::string& v) {
    clone_flags.sets.push_back("student.kind=\"" + v + "\"");
  }, "student kind");
  clone->add_option_function<std::string>("--teacher", [&](const std::string& v) {
    clone_flags.sets.push_back("teacher.kind=\"" + v + "\"");
  }, "teacher kind");

  auto* equiv = app.add_subcommand("eval-equiv", "equivariance error of teacher, student and random student");
  equiv_flags.add_to(equiv, true);

  auto* bench = app.add_subcommand("bench", "train and evaluate one task/model cell or the full grid");
  bench_flags.add_to(bench, true);
  BenchOptions bench_options;
  std::string checkpoint_dir;
  bench->add_flag("--all", bench_options.all, "run the full grid, cloning missing checkpoints");
  bench->add_option("--checkpoint-dir", checkpoint_dir, "cloned checkpoints for --all (default <out>/checkpoints)");
  bench->add_option_function<std::string>("--task", [&](const std::string& v) {
    bench_flags.sets.push_back("task.name=\"" + v + "\"");
  }, "t2-sym, t2-break, c4-sym or c4-break");
  bench->add_option_function<std::string>("--model", [&](const std::string& v) {
    bench_flags.sets.push_back("task.model=\"" + v + "\"");
  }, "mlp, cnn, gcnn, cloned-freeze or cloned-unfreeze");

  auto* toeplitz = app.add_subcommand("inspect-toeplitz", "compare learned blocks with the unrolled convolution");
  toeplitz_flags.add_to(toeplitz, true);

  auto* maps = app.add_subcommand("export-maps", "feature-map PGMs of teacher, cloned and random layers");
  maps_flags.add_to(maps, true);
  std::int64_t samples = 4;
  maps->add_option("--samples", samples, "number of dataset images");

  auto* fetch = app.add_subcommand("fetch-data", "download and verify the MNIST archives");
  std::string fetch_dir = (default_data_dir() / "mnist").string();
  std::string mirror = kMnistMirror;
  fetch->add_option("--dir", fetch_dir, "destination directory");
  fetch->add_option("--mirror", mirror, "base URL");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  std::ostream& log = std::cout;
  return guarded(std::cerr, [&]() -> int {
    if (clone->parsed()) return run_clone(clone_flags.resolve(), log);
    if (equiv->parsed()) return run_eval_equiv(equiv_flags.resolve(), log);
    if (bench->parsed()) {
      bench_options.checkpoint_dir = checkpoint_dir;
      return run_bench(bench_flags.resolve(), bench_options, log);
    }
    if (toeplitz->parsed()) return run_inspect_toeplitz(toeplitz_flags.resolve(), log);
    if (maps->parsed()) return run_export_maps(maps_flags.resolve(), samples, log);
    if (fetch->parsed()) return run_fetch_data(fetch_dir, mirror, log);
    return kExitConfig;
  });
}
