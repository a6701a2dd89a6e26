#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lwfs/checkpoint.hpp"
#include "lwfs/config.hpp"
#include "lwfs/experiment.hpp"
#include "lwfs/gradcheck.hpp"
#include "lwfs/graph.hpp"
#include "lwfs/report.hpp"

namespace {

using namespace lwfs;

struct RunArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> precision;
  std::optional<std::size_t> workers;
};

// LWFS_WORKERS wins over --workers, which wins over the config file.
void apply_overrides(RunConfig& cfg, const RunArgs& a) {
  if (a.seed) {
    cfg.train.seed = *a.seed;
    cfg.probe.seed = *a.seed;
    cfg.fine_tune_cfg.seed = *a.seed;
  }
  if (a.precision) cfg.precision = precision_from_string(*a.precision);
  if (a.workers) cfg.train.workers = *a.workers;
  if (const char* env = std::getenv("LWFS_WORKERS"); env != nullptr && *env != '\0') {
    try {
      cfg.train.workers = static_cast<std::size_t>(std::stoul(env));
    } catch (const std::exception&) {
      throw ConfigFileError(exit_code::kInvalid, std::string("LWFS_WORKERS is not a number: ") + env);
    }
  }
  cfg.validate();
}

int cmd_run(const RunArgs& a) {
  RunConfig cfg = parse_config(a.config);
  apply_overrides(cfg, a);
  std::string out = a.out;
  if (out.empty() && cfg.out_dir) out = *cfg.out_dir;
  if (out.empty()) {
    std::cerr << "run: no output directory (use --out or out_dir in the config)\n";
    return exit_code::kUsage;
  }
  const ExperimentOutcome res = run_experiment(cfg, out);
  if (res.failed_round) {
    std::cerr << "run aborted: numeric failure in round " << *res.failed_round << " (see " << out
              << "/summary.json)\n";
    return res.exit_code;
  }
  std::cout << "run complete: " << out;
  if (res.probe) std::printf("  probe accuracy %.4f", res.probe->accuracy);
  if (res.baseline) std::printf("  (untrained %.4f)", res.baseline->accuracy);
  std::cout << std::endl;
  return res.exit_code;
}

int cmd_partition(const RunArgs& a) {
  RunConfig cfg = parse_config(a.config);
  apply_overrides(cfg, a);
  const PreparedData<float> data = prepare_data<float>(cfg);
  const std::string json = data.partition.to_json();
  if (a.out.empty()) {
    std::cout << json << "\n";
  } else {
    std::ofstream(a.out, std::ios::binary) << json << "\n";
    std::cout << "wrote " << data.partition.num_clients() << " client index lists to " << a.out << "\n";
  }
  return exit_code::kOk;
}

template <typename T>
int eval_typed(const RunConfig& cfg, const std::string& checkpoint, bool fine, const std::string& out) {
  const ModelState<T> model = load_checkpoint<T>(checkpoint);
  const PreparedData<T> data = prepare_data<T>(cfg);
  EvalReport rep = fine ? fine_tune(model, data.eval, cfg.fine_tune_cfg,
                                    stratified_split(data.eval.labels, cfg.fine_tune_cfg.test_fraction,
                                                     cfg.fine_tune_cfg.seed))
                        : linear_probe(extract_features(model, data.eval), data.eval.labels, cfg.probe);
  rep.encoder_id = checkpoint;
  const std::string json = rep.to_json();
  if (out.empty()) {
    std::cout << json << "\n";
  } else {
    std::ofstream(out, std::ios::binary) << json << "\n";
    std::printf("%s accuracy %.4f (%zu/%zu), written to %s\n", rep.mode.c_str(), rep.accuracy, rep.correct,
                rep.total, out.c_str());
  }
  return exit_code::kOk;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& csv_dir) {
  std::vector<RunDigest> runs;
  for (const auto& d : dirs) runs.push_back(load_run(d));
  const ComparisonReport rep = compare_runs(runs);
  std::cout << rep.text;
  if (!csv_dir.empty()) {
    std::filesystem::create_directories(csv_dir);
    std::ofstream(std::filesystem::path(csv_dir) / "report.csv", std::ios::binary) << rep.table_csv;
    std::ofstream(std::filesystem::path(csv_dir) / "curves.csv", std::ios::binary) << rep.curves_csv;
    std::cout << "csv written to " << csv_dir << "\n";
  } else {
    std::cout << "\n" << rep.table_csv;
  }
  return exit_code::kOk;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& corrupt) {
  if (!corrupt.empty()) testing::set_corrupted_op(op_from_name(corrupt));
  GradCheckOptions opt;
  opt.seed = seed;
  const GradCheckReport rep = run_gradcheck_suite(opt);
  for (const auto& c : rep.worst_per_name()) {
    std::printf("%-18s max_rel_error %.3e  %s\n", c.name.c_str(), c.max_rel_error,
                c.max_rel_error <= rep.tolerance ? "ok" : "FAIL");
  }
  const GradCheckCase& w = rep.worst();
  std::printf("%zu cases, worst offender: %s case %zu, rel error %.3e (tolerance %.0e)\n", rep.cases.size(),
              w.name.c_str(), w.index, w.max_rel_error, rep.tolerance);
  if (rep.passed()) return exit_code::kOk;
  for (const auto& name : rep.failing_names()) std::fprintf(stderr, "gradcheck failed: %s\n", name.c_str());
  return exit_code::kGradcheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layer-wise federated self-supervised learning simulator"};
  app.require_subcommand(1);

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Run a federated experiment from a TOML config");
  run->add_option("config", run_args.config, "Config file")->required();
  run->add_option("--out", run_args.out, "Output directory");
  run->add_option("--seed", run_args.seed, "Override the config seed");
  run->add_option("--precision", run_args.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  run->add_option("--workers", run_args.workers, "Client worker threads (LWFS_WORKERS overrides)");

  RunArgs part_args;
  auto* part = app.add_subcommand("partition", "Write the client partition of a config as JSON");
  part->add_option("config", part_args.config, "Config file")->required();
  part->add_option("--out", part_args.out, "Output JSON file (stdout when omitted)");
  part->add_option("--seed", part_args.seed, "Override the config seed");

  RunArgs eval_args;
  std::string checkpoint;
  bool fine = false;
  auto* ev = app.add_subcommand("eval", "Probe or fine-tune a checkpoint on the config's labeled data");
  ev->add_option("checkpoint", checkpoint, "Checkpoint file")->required();
  ev->add_option("--config", eval_args.config, "Config file describing the data")->required();
  ev->add_option("--out", eval_args.out, "Output JSON file (stdout when omitted)");
  ev->add_option("--seed", eval_args.seed, "Override the config seed");
  ev->add_option("--precision", eval_args.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  ev->add_flag("--fine-tune", fine, "Fine-tune instead of a linear probe");

  std::vector<std::string> report_dirs;
  std::string csv_dir;
  auto* rep = app.add_subcommand("report", "Compare completed runs");
  rep->add_option("runs", report_dirs, "Run directories")->required();
  rep->add_option("--csv-dir", csv_dir, "Directory for report.csv and curves.csv");

  std::uint64_t gc_seed = 0;
  std::string corrupt;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every gradient rule");
  gc->add_option("--seed", gc_seed, "Random seed");
  gc->add_option("--corrupt-op", corrupt, "Scale one op's gradient (negative control)")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? exit_code::kOk : exit_code::kUsage;
  }

  try {
    if (*run) return cmd_run(run_args);
    if (*part) return cmd_partition(part_args);
    if (*ev) {
      RunConfig cfg = parse_config(eval_args.config);
      apply_overrides(cfg, eval_args);
      return cfg.precision == Precision::kF32 ? eval_typed<float>(cfg, checkpoint, fine, eval_args.out)
                                              : eval_typed<double>(cfg, checkpoint, fine, eval_args.out);
    }
    if (*rep) return cmd_report(report_dirs, csv_dir);
    if (*gc) return cmd_gradcheck(gc_seed, corrupt);
  } catch (const ConfigFileError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return e.code();
  } catch (const ReportError& e) {
    std::cerr << "report error: " << e.what() << "\n";
    return exit_code::kReport;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_code::kInvalid;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return exit_code::kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code::kUsage;
  }
  return exit_code::kUsage;
}
