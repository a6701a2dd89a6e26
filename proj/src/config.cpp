#include "lwfs/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#define TOML_EXCEPTIONS 1
#include "toml.hpp"

namespace lwfs {

std::string to_string(Precision p) { return p == Precision::kF32 ? "f32" : "f64"; }

Precision precision_from_string(const std::string& name) {
  if (name == "f32") return Precision::kF32;
  if (name == "f64") return Precision::kF64;
  throw ConfigError("unknown precision '" + name + "' (expected f32 or f64)");
}

namespace {

std::string source_name(DataSource s) { return s == DataSource::kSynthetic ? "synthetic" : "cifar10"; }
std::string partition_name(PartitionKind p) { return p == PartitionKind::kUniform ? "uniform" : "dirichlet"; }
std::string aux_name(AuxSource a) {
  switch (a) {
    case AuxSource::kNone: return "none";
    case AuxSource::kSynthetic: return "synthetic";
    case AuxSource::kSample: return "sample";
  }
  return "?";
}

[[noreturn]] void invalid(const std::string& what) { throw ConfigFileError(exit_code::kInvalid, what); }

// Reads one TOML table, rejecting keys it was not told about.
class TableReader {
 public:
  TableReader(const toml::table* table, std::string path, std::set<std::string> allowed)
      : table_(table), path_(std::move(path)) {
    if (table_ == nullptr) return;
    for (const auto& [key, node] : *table_) {
      const std::string k(key.str());
      if (!allowed.contains(k)) {
        throw ConfigFileError(exit_code::kUnknownKey, "unknown key '" + qualified(k) + "'");
      }
    }
  }

  const toml::table* subtable(const std::string& key) const {
    const toml::node* n = find(key);
    if (n == nullptr) return nullptr;
    if (!n->is_table()) type_error(key, "a table");
    return n->as_table();
  }

  void read(const std::string& key, std::size_t& out) const {
    const toml::node* n = find(key);
    if (n == nullptr) return;
    if (!n->is_integer()) type_error(key, "an integer");
    const std::int64_t v = n->as_integer()->get();
    if (v < 0) invalid("'" + qualified(key) + "' must be >= 0");
    out = static_cast<std::size_t>(v);
  }

  void read(const std::string& key, std::uint64_t& out, bool) const {
    const toml::node* n = find(key);
    if (n == nullptr) return;
    if (!n->is_integer()) type_error(key, "an integer");
    const std::int64_t v = n->as_integer()->get();
    if (v < 0) invalid("'" + qualified(key) + "' must be >= 0");
    out = static_cast<std::uint64_t>(v);
  }

  void read(const std::string& key, double& out) const {
    const toml::node* n = find(key);
    if (n == nullptr) return;
    if (n->is_floating_point()) {
      out = n->as_floating_point()->get();
    } else if (n->is_integer()) {
      out = static_cast<double>(n->as_integer()->get());
    } else {
      type_error(key, "a number");
    }
  }

  void read(const std::string& key, bool& out) const {
    const toml::node* n = find(key);
    if (n == nullptr) return;
    if (!n->is_boolean()) type_error(key, "a boolean");
    out = n->as_boolean()->get();
  }

  void read(const std::string& key, std::string& out) const {
    const toml::node* n = find(key);
    if (n == nullptr) return;
    if (!n->is_string()) type_error(key, "a string");
    out = n->as_string()->get();
  }

  template <typename Enum, typename Parse>
  void read_enum(const std::string& key, Enum& out, Parse parse) const {
    std::string s;
    read(key, s);
    if (s.empty()) return;
    try {
      out = parse(s);
    } catch (const ConfigError& e) {
      invalid("'" + qualified(key) + "': " + e.what());
    }
  }

 private:
  const toml::node* find(const std::string& key) const { return table_ == nullptr ? nullptr : table_->get(key); }
  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  [[noreturn]] void type_error(const std::string& key, const std::string& expected) const {
    throw ConfigFileError(exit_code::kSyntax, "'" + qualified(key) + "' must be " + expected);
  }

  const toml::table* table_;
  std::string path_;
};

DataSource data_source_from(const std::string& s) {
  if (s == "synthetic") return DataSource::kSynthetic;
  if (s == "cifar10") return DataSource::kCifar10;
  throw ConfigError("expected synthetic or cifar10, got '" + s + "'");
}

PartitionKind partition_from(const std::string& s) {
  if (s == "uniform") return PartitionKind::kUniform;
  if (s == "dirichlet") return PartitionKind::kDirichlet;
  throw ConfigError("expected uniform or dirichlet, got '" + s + "'");
}

AuxSource aux_from(const std::string& s) {
  if (s == "none") return AuxSource::kNone;
  if (s == "synthetic") return AuxSource::kSynthetic;
  if (s == "sample") return AuxSource::kSample;
  throw ConfigError("expected none, synthetic or sample, got '" + s + "'");
}

void read_probe(const TableReader& t, ProbeConfig& p) {
  t.read("epochs", p.epochs);
  t.read("batch_size", p.batch_size);
  t.read("base_lr", p.base_lr);
  t.read("weight_decay", p.weight_decay);
  t.read("warmup_epochs", p.warmup_epochs);
  t.read("test_fraction", p.test_fraction);
}

const std::set<std::string> kProbeKeys = {"epochs", "batch_size", "base_lr", "weight_decay", "warmup_epochs",
                                          "test_fraction"};

bool is_square(std::size_t n) {
  const auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  return r * r == n;
}

RunConfig from_table(const toml::table& root) {
  RunConfig c;
  TrainingConfig& t = c.train;
  TableReader top(&root, "",
                  {"strategy", "seed", "precision", "out_dir", "workers", "federation", "model", "ssl", "augment",
                   "optim", "data", "probe", "fine_tune"});
  top.read_enum("strategy", t.fed.strategy, strategy_from_string);
  top.read("seed", t.seed, true);
  top.read_enum("precision", c.precision, precision_from_string);
  std::string out;
  top.read("out_dir", out);
  if (!out.empty()) c.out_dir = out;
  top.read("workers", t.workers);

  TableReader fed(top.subtable("federation"), "federation",
                  {"clients", "rounds", "allocation", "weight_transfer", "calibration_epochs", "client_fraction",
                   "calibration_order"});
  fed.read("clients", t.fed.num_clients);
  fed.read("rounds", t.fed.rounds);
  fed.read_enum("allocation", t.fed.allocation, allocation_from_string);
  fed.read("weight_transfer", t.fed.weight_transfer);
  fed.read("calibration_epochs", t.fed.calibration_epochs);
  fed.read("client_fraction", t.fed.client_fraction);
  fed.read_enum("calibration_order", t.fed.calibration_order, calibration_order_from_string);

  TableReader model(top.subtable("model"), "model",
                    {"input_dim", "layers", "block_hidden", "block_out", "proj_hidden", "proj_out", "pred_hidden"});
  model.read("input_dim", t.model.input_dim);
  model.read("layers", t.model.num_layers);
  model.read("block_hidden", t.model.block_hidden_dim);
  model.read("block_out", t.model.block_out_dim);
  model.read("proj_hidden", t.model.proj_hidden);
  model.read("proj_out", t.model.proj_out);
  model.read("pred_hidden", t.model.pred_hidden);

  TableReader ssl(top.subtable("ssl"), "ssl",
                  {"temperature", "momentum", "align_weight", "local_epochs", "batch_size", "normalize_alignment"});
  ssl.read("temperature", t.ssl.temperature);
  ssl.read("momentum", t.ssl.momentum);
  ssl.read("align_weight", t.ssl.align_weight);
  ssl.read("local_epochs", t.ssl.local_epochs);
  ssl.read("batch_size", t.ssl.batch_size);
  ssl.read("normalize_alignment", t.ssl.normalize_alignment);

  TableReader aug(top.subtable("augment"), "augment", {"crop_pad", "flip_prob", "jitter_sigma", "cutout_frac"});
  aug.read("crop_pad", t.augment.crop_pad);
  aug.read("flip_prob", t.augment.flip_prob);
  aug.read("jitter_sigma", t.augment.jitter_sigma);
  aug.read("cutout_frac", t.augment.cutout_frac);

  TableReader opt(top.subtable("optim"), "optim", {"lr_schedule", "base_lr", "weight_decay", "beta1", "beta2", "eps"});
  opt.read_enum("lr_schedule", t.lr_kind, lr_kind_from_string);
  opt.read("base_lr", t.base_lr);
  opt.read("weight_decay", t.adamw.weight_decay);
  opt.read("beta1", t.adamw.beta1);
  opt.read("beta2", t.adamw.beta2);
  opt.read("eps", t.adamw.eps);

  DataConfig& d = c.data;
  TableReader data(top.subtable("data"), "data",
                   {"source", "path", "samples", "classes", "cluster_sep", "eval_samples", "eval_path", "partition",
                    "beta", "min_per_client", "aux"});
  data.read_enum("source", d.source, data_source_from);
  data.read("path", d.path);
  data.read("samples", d.samples);
  data.read("classes", d.classes);
  data.read("cluster_sep", d.cluster_sep);
  data.read("eval_samples", d.eval_samples);
  data.read("eval_path", d.eval_path);
  data.read_enum("partition", d.partition, partition_from);
  data.read("beta", d.beta);
  data.read("min_per_client", d.min_per_client);
  TableReader aux(data.subtable("aux"), "data.aux", {"source", "samples", "ratio", "center_shift"});
  aux.read_enum("source", d.aux_source, aux_from);
  aux.read("samples", d.aux_samples);
  aux.read("ratio", d.aux_ratio);
  aux.read("center_shift", d.aux_center_shift);

  read_probe(TableReader(top.subtable("probe"), "probe", kProbeKeys), c.probe);
  auto ft_keys = kProbeKeys;
  ft_keys.insert("enabled");
  TableReader ft(top.subtable("fine_tune"), "fine_tune", ft_keys);
  ft.read("enabled", c.fine_tune);
  read_probe(ft, c.fine_tune_cfg);

  c.probe.seed = t.seed;
  c.fine_tune_cfg.seed = t.seed;
  return c;
}

std::string fmt(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, end);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch;
  }
  return out + "\"";
}

void write_probe(std::ostream& o, const ProbeConfig& p) {
  o << "epochs = " << p.epochs << "\nbatch_size = " << p.batch_size << "\nbase_lr = " << fmt(p.base_lr)
    << "\nweight_decay = " << fmt(p.weight_decay) << "\nwarmup_epochs = " << p.warmup_epochs
    << "\ntest_fraction = " << fmt(p.test_fraction) << "\n";
}

}  // namespace

void RunConfig::validate() const {
  const TrainingConfig& t = train;
  try {
    t.validate();
    probe.validate();
    if (fine_tune) fine_tune_cfg.validate();
  } catch (const ConfigFileError&) {
    throw;
  } catch (const ConfigError& e) {
    invalid(e.what());
  }
  if (probe.epochs < 1) invalid("probe: epochs must be >= 1");
  const std::size_t s = t.model.num_layers;
  if (is_staged(t.fed.strategy) && t.fed.rounds < s) {
    invalid("R < S (rounds " + std::to_string(t.fed.rounds) + " < layers " + std::to_string(s) + ")");
  }
  if (data.source == DataSource::kSynthetic) {
    if (data.classes < 1) invalid("data: classes must be >= 1");
    if (data.samples < data.classes) invalid("data: samples must be >= classes");
    if (data.eval_samples < 2 * data.classes) invalid("data: eval_samples must be >= 2 * classes");
    if (data.samples < t.fed.num_clients) invalid("data: fewer samples than clients");
    if (t.augment.needs_image() && !is_square(t.model.input_dim)) {
      invalid("augment: crop/flip/cutout need square image rows but input_dim " + std::to_string(t.model.input_dim) +
              " is not a perfect square");
    }
  } else {
    if (data.path.empty()) invalid("data: cifar10 source needs a path");
    if (t.model.input_dim != 3072) invalid("data: cifar10 rows have 3072 features; set model.input_dim = 3072");
  }
  if (data.partition == PartitionKind::kDirichlet && !(data.beta > 0)) invalid("data: beta must be > 0");
  if (t.calibration_active()) {
    if (data.aux_source == AuxSource::kNone) invalid("lw_fedssl with calibration_epochs > 0 needs data.aux");
    if (data.aux_source == AuxSource::kSynthetic && data.source != DataSource::kSynthetic) {
      invalid("data.aux: synthetic auxiliary data needs a synthetic main source");
    }
    if (data.aux_source == AuxSource::kSynthetic && data.aux_samples < 2) invalid("data.aux: samples must be >= 2");
    if (data.aux_source == AuxSource::kSample && !(data.aux_ratio > 0 && data.aux_ratio <= 1)) {
      invalid("data.aux: ratio must be in (0, 1]");
    }
  }
}

std::string RunConfig::to_toml() const {
  const TrainingConfig& t = train;
  std::ostringstream o;
  o << "strategy = " << quote(to_string(t.fed.strategy)) << "\nseed = " << t.seed
    << "\nprecision = " << quote(to_string(precision)) << "\n";
  if (out_dir) o << "out_dir = " << quote(*out_dir) << "\n";
  o << "\n[federation]\nclients = " << t.fed.num_clients << "\nrounds = " << t.fed.rounds
    << "\nallocation = " << quote(to_string(t.fed.allocation))
    << "\nweight_transfer = " << (t.fed.weight_transfer ? "true" : "false")
    << "\ncalibration_epochs = " << t.fed.calibration_epochs << "\nclient_fraction = " << fmt(t.fed.client_fraction)
    << "\ncalibration_order = " << quote(to_string(t.fed.calibration_order)) << "\n";
  o << "\n[model]\ninput_dim = " << t.model.input_dim << "\nlayers = " << t.model.num_layers
    << "\nblock_hidden = " << t.model.block_hidden_dim << "\nblock_out = " << t.model.block_out_dim
    << "\nproj_hidden = " << t.model.proj_hidden << "\nproj_out = " << t.model.proj_out
    << "\npred_hidden = " << t.model.pred_hidden << "\n";
  o << "\n[ssl]\ntemperature = " << fmt(t.ssl.temperature) << "\nmomentum = " << fmt(t.ssl.momentum)
    << "\nalign_weight = " << fmt(t.ssl.align_weight) << "\nlocal_epochs = " << t.ssl.local_epochs
    << "\nbatch_size = " << t.ssl.batch_size
    << "\nnormalize_alignment = " << (t.ssl.normalize_alignment ? "true" : "false") << "\n";
  o << "\n[augment]\ncrop_pad = " << t.augment.crop_pad << "\nflip_prob = " << fmt(t.augment.flip_prob)
    << "\njitter_sigma = " << fmt(t.augment.jitter_sigma) << "\ncutout_frac = " << fmt(t.augment.cutout_frac) << "\n";
  o << "\n[optim]\nlr_schedule = " << quote(to_string(t.lr_kind)) << "\nbase_lr = " << fmt(t.base_lr)
    << "\nweight_decay = " << fmt(t.adamw.weight_decay) << "\nbeta1 = " << fmt(t.adamw.beta1)
    << "\nbeta2 = " << fmt(t.adamw.beta2) << "\neps = " << fmt(t.adamw.eps) << "\n";
  o << "\n[data]\nsource = " << quote(source_name(data.source)) << "\npath = " << quote(data.path)
    << "\nsamples = " << data.samples << "\nclasses = " << data.classes << "\ncluster_sep = " << fmt(data.cluster_sep)
    << "\neval_samples = " << data.eval_samples << "\neval_path = " << quote(data.eval_path)
    << "\npartition = " << quote(partition_name(data.partition)) << "\nbeta = " << fmt(data.beta)
    << "\nmin_per_client = " << data.min_per_client << "\n";
  o << "\n[data.aux]\nsource = " << quote(aux_name(data.aux_source)) << "\nsamples = " << data.aux_samples
    << "\nratio = " << fmt(data.aux_ratio) << "\ncenter_shift = " << fmt(data.aux_center_shift) << "\n";
  o << "\n[probe]\n";
  write_probe(o, probe);
  o << "\n[fine_tune]\nenabled = " << (fine_tune ? "true" : "false") << "\n";
  write_probe(o, fine_tune_cfg);
  return o.str();
}

RunConfig parse_config_text(const std::string& text, const std::string& source) {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << source << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
    throw ConfigFileError(exit_code::kSyntax, msg.str());
  }
  RunConfig c = from_table(root);
  c.validate();
  return c;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigFileError(exit_code::kMissingFile, "cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

}  // namespace lwfs
