#include "lwfs/experiment.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "lwfs/checkpoint.hpp"
#include "lwfs/rng.hpp"

namespace lwfs {

namespace {

// Sub-streams of the run seed for the datasets.
constexpr std::uint64_t kCentersStream = 101;
constexpr std::uint64_t kTrainStream = 102;
constexpr std::uint64_t kEvalStream = 103;
constexpr std::uint64_t kAuxStream = 104;

}  // namespace

template <typename T>
PreparedData<T> prepare_data(const RunConfig& cfg) {
  const DataConfig& d = cfg.data;
  const std::uint64_t seed = cfg.train.seed;
  PreparedData<T> out;
  if (d.source == DataSource::kSynthetic) {
    SyntheticSpec s;
    s.n = d.samples;
    s.classes = d.classes;
    s.dim = cfg.train.model.input_dim;
    s.cluster_sep = d.cluster_sep;
    s.center_seed = mix_seed(seed, {kCentersStream});
    s.seed = mix_seed(seed, {kTrainStream});
    out.train = gen_synthetic<T>(s);
    s.n = d.eval_samples;
    s.seed = mix_seed(seed, {kEvalStream});
    out.eval = gen_synthetic<T>(s);
  } else {
    out.train = load_cifar10_bin<T>(d.path);
    out.eval = load_cifar10_bin<T>(d.eval_path.empty() ? d.path : d.eval_path);
  }

  const std::size_t n_clients = cfg.train.fed.num_clients;
  const std::uint64_t part_seed = mix_seed(seed, {seed_tag::kPartition});
  out.partition = d.partition == PartitionKind::kUniform
                      ? partition_uniform(out.train.size(), n_clients, part_seed)
                      : partition_dirichlet(out.train.labels, n_clients, d.beta, part_seed, d.min_per_client);
  out.partition.validate(out.train.size());
  for (const auto& idx : out.partition.clients) {
    Dataset<T> local = out.train.subset(idx);
    local.labels.clear();  // clients train without labels
    out.fed.clients.push_back(std::move(local));
  }

  if (cfg.train.calibration_active()) {
    if (d.aux_source == AuxSource::kSynthetic) {
      SyntheticSpec s;
      s.n = d.aux_samples;
      s.classes = d.classes;
      s.dim = cfg.train.model.input_dim;
      s.cluster_sep = d.cluster_sep;
      s.center_seed = mix_seed(seed, {kCentersStream});
      s.center_shift = d.aux_center_shift;
      s.seed = mix_seed(seed, {kAuxStream});
      Dataset<T> aux = gen_synthetic<T>(s);
      aux.labels.clear();
      aux.provenance += " (auxiliary)";
      out.fed.auxiliary = std::move(aux);
    } else if (d.aux_source == AuxSource::kSample) {
      out.fed.auxiliary = sample_auxiliary(out.train, d.aux_ratio, mix_seed(seed, {kAuxStream}));
    }
  }
  return out;
}

CommTotals comm_totals(const ModelSpec& spec, const StageSchedule& schedule) {
  CommTotals t;
  for (std::size_t r = 1; r <= schedule.total_rounds(); ++r) {
    const CommCount c = comm_round(spec, schedule, r);
    t.bytes_down += c.bytes_down;
    t.bytes_up += c.bytes_up;
    t.encoder_down += c.encoder_down;
    t.encoder_up += c.encoder_up;
  }
  return t;
}

namespace {

std::string round_file(std::size_t round) {
  std::string s = std::to_string(round);
  return "round_" + std::string(4 - std::min<std::size_t>(4, s.size()), '0') + s + ".lwfs";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

nlohmann::ordered_json report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["accuracy"] = r.accuracy;
  j["correct"] = r.correct;
  j["total"] = r.total;
  j["per_class_accuracy"] = r.per_class_accuracy();
  return j;
}

template <typename T>
ExperimentOutcome run_typed(const RunConfig& cfg, const std::filesystem::path& out_dir,
                            const ExperimentOptions& options) {
  namespace fs = std::filesystem;
  const TrainingConfig& t = cfg.train;
  const StageSchedule schedule = make_schedule(t.fed.strategy, t.model.num_layers, t.fed.rounds, t.fed.allocation);
  PreparedData<T> data = prepare_data<T>(cfg);

  fs::create_directories(out_dir / "checkpoints");
  write_text(out_dir / "partition.json", data.partition.to_json());
  std::ofstream jsonl(out_dir / "run.jsonl", std::ios::binary);
  std::vector<ResourceEntry> ledger;

  nlohmann::ordered_json summary;
  summary["strategy"] = to_string(t.fed.strategy);
  summary["seed"] = t.seed;
  summary["precision"] = to_string(cfg.precision);
  summary["config"] = cfg.to_toml();

  ExperimentOutcome outcome;
  std::optional<ModelState<T>> final_model;
  std::size_t completed = 0;
  try {
    auto observer = [&](const RoundRecord& rec, const ModelState<T>& model) {
      jsonl << rec.to_json() << '\n';
      jsonl.flush();
      ledger.insert(ledger.end(), rec.resources.begin(), rec.resources.end());
      completed = rec.round;
      const bool stage_end = rec.round == schedule.total_rounds() || schedule.stage_of(rec.round + 1) != rec.stage;
      if (options.stage_checkpoints && stage_end) {
        save_checkpoint(model, out_dir / "checkpoints" / round_file(rec.round));
      }
    };
    FederationResult<T> res = run_federation<T>(t, data.fed, observer);
    final_model = std::move(res.model);
  } catch (const RoundAborted& e) {
    outcome.exit_code = exit_code::kNumeric;
    outcome.failed_round = e.round();
    summary["status"] = "numeric_error";
    summary["failed_round"] = e.round();
    summary["error"] = e.what();
  }
  {
    std::ofstream csv(out_dir / "ledger.csv", std::ios::binary);
    write_ledger_csv(csv, ledger);
  }
  summary["rounds_completed"] = completed;

  const LedgerTotals clients = ledger_totals(ledger);
  const LedgerTotals server = ledger_totals(ledger, kServerActor);
  const LedgerTotals client0 = ledger_totals(ledger, 0);
  const CommTotals comm = comm_totals(t.model, schedule);
  summary["resources"] = {
      {"client0", {{"flops_fwd", client0.flops_fwd}, {"flops_bwd", client0.flops_bwd},
                   {"bytes_down", client0.bytes_down}, {"bytes_up", client0.bytes_up},
                   {"peak_mem_model", client0.peak_mem_model}}},
      {"all_clients", {{"flops_fwd", clients.flops_fwd}, {"flops_bwd", clients.flops_bwd},
                       {"bytes_down", clients.bytes_down}, {"bytes_up", clients.bytes_up},
                       {"peak_mem_model", clients.peak_mem_model}}},
      {"server", {{"flops_fwd", server.flops_fwd}, {"flops_bwd", server.flops_bwd},
                  {"peak_mem_model", server.peak_mem_model}}},
      {"schedule_per_client", {{"bytes_down", comm.bytes_down}, {"bytes_up", comm.bytes_up},
                               {"encoder_down", comm.encoder_down}, {"encoder_up", comm.encoder_up}}},
  };

  if (final_model) {
    save_checkpoint(*final_model, out_dir / "checkpoints" / "final.lwfs");
    summary["status"] = "ok";
    summary["checkpoint"] = "checkpoints/final.lwfs";
    const Tensor<T> features = extract_features(*final_model, data.eval);
    EvalReport probe = linear_probe(features, data.eval.labels, cfg.probe);
    probe.encoder_id = "checkpoints/final.lwfs";
    summary["probe"] = report_json(probe);
    nlohmann::ordered_json eval_doc;
    eval_doc["probe"] = nlohmann::ordered_json::parse(probe.to_json());
    if (options.probe_baseline) {
      const ModelState<T> untrained = build_model<T>(t.model, t.seed, final_model->active_depth());
      EvalReport base = linear_probe(extract_features(untrained, data.eval), data.eval.labels, cfg.probe);
      base.encoder_id = "untrained";
      summary["baseline_probe"] = report_json(base);
      eval_doc["baseline_probe"] = nlohmann::ordered_json::parse(base.to_json());
      outcome.baseline = std::move(base);
    }
    if (cfg.fine_tune) {
      const Split split = stratified_split(data.eval.labels, cfg.fine_tune_cfg.test_fraction, cfg.fine_tune_cfg.seed);
      EvalReport ft = fine_tune(*final_model, data.eval, cfg.fine_tune_cfg, split);
      ft.encoder_id = "checkpoints/final.lwfs";
      summary["fine_tune"] = report_json(ft);
      eval_doc["fine_tune"] = nlohmann::ordered_json::parse(ft.to_json());
    }
    write_text(out_dir / "eval.json", eval_doc.dump(2) + "\n");
    outcome.probe = std::move(probe);
  }
  outcome.summary_json = summary.dump(2) + "\n";
  write_text(out_dir / "summary.json", outcome.summary_json);
  return outcome;
}

}  // namespace

ExperimentOutcome run_experiment(const RunConfig& cfg, const std::filesystem::path& out_dir,
                                 const ExperimentOptions& options) {
  cfg.validate();
  return cfg.precision == Precision::kF32 ? run_typed<float>(cfg, out_dir, options)
                                          : run_typed<double>(cfg, out_dir, options);
}

template PreparedData<float> prepare_data<float>(const RunConfig&);
template PreparedData<double> prepare_data<double>(const RunConfig&);

}  // namespace lwfs
