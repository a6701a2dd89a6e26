#include "lwfs/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace lwfs {

RunDigest load_run(const std::filesystem::path& dir) {
  std::vector<std::string> missing;
  for (const char* f : {"summary.json", "ledger.csv", "run.jsonl"}) {
    if (!std::filesystem::is_regular_file(dir / f)) missing.push_back(f);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw ReportError("incomplete run directory " + dir.string() + ": missing " + list);
  }
  RunDigest d;
  d.dir = dir.string();
  nlohmann::json s;
  try {
    std::ifstream in(dir / "summary.json");
    s = nlohmann::json::parse(in);
    d.strategy = s.at("strategy").get<std::string>();
    d.status = s.value("status", "unknown");
    if (s.contains("probe")) d.probe_accuracy = s["probe"].at("accuracy").get<double>();
    const auto& res = s.at("resources");
    const auto& c0 = res.at("client0");
    d.peak_mem_model = c0.at("peak_mem_model").get<std::uint64_t>();
    d.flops_total = c0.at("flops_fwd").get<std::uint64_t>() + c0.at("flops_bwd").get<std::uint64_t>();
    d.bytes_down = c0.at("bytes_down").get<std::uint64_t>();
    d.bytes_up = c0.at("bytes_up").get<std::uint64_t>();
    const auto& sch = res.at("schedule_per_client");
    d.encoder_down = sch.at("encoder_down").get<std::uint64_t>();
    d.encoder_up = sch.at("encoder_up").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ReportError("malformed summary.json in " + dir.string() + ": " + e.what());
  }
  std::ifstream csv(dir / "ledger.csv");
  try {
    d.ledger = read_ledger_csv(csv);
  } catch (const FormatError& e) {
    throw ReportError(dir.string() + ": " + e.what());
  }
  return d;
}

namespace {

std::string ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", static_cast<double>(num) / static_cast<double>(den));
  return buf;
}

std::string mib(std::uint64_t bytes) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", static_cast<double>(bytes) / (1024.0 * 1024.0));
  return buf;
}

std::string acc(const std::optional<double>& a) {
  if (!a) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", *a);
  return buf;
}

std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s + " " : s + std::string(w - s.size(), ' '); }

}  // namespace

ComparisonReport compare_runs(const std::vector<RunDigest>& runs) {
  if (runs.empty()) throw ReportError("report: at least one run directory required");
  ComparisonReport rep;
  const RunDigest& ref = runs.front();
  std::ostringstream text, table, curves;
  const std::vector<std::pair<std::string, std::size_t>> cols = {
      {"run", 24},      {"strategy", 13}, {"mem_MiB", 10},  {"GFLOPs", 12},  {"down_MiB", 10},
      {"up_MiB", 10},   {"probe_acc", 10}, {"enc_up_x", 9}, {"enc_down_x", 11}, {"flops_x", 8}, {"mem_x", 6}};
  for (const auto& [name, w] : cols) text << pad(name, w);
  text << "\n";
  table << "run,strategy,mem_model_bytes,flops_total,bytes_down,bytes_up,probe_accuracy,encoder_up_ratio,"
           "encoder_down_ratio,flops_ratio,mem_ratio\n";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const RunDigest& r = runs[i];
    const bool first = i == 0;
    const std::string up = first ? "" : ratio(ref.encoder_up, r.encoder_up);
    const std::string down = first ? "" : ratio(ref.encoder_down, r.encoder_down);
    const std::string fl = first ? "" : ratio(ref.flops_total, r.flops_total);
    const std::string mem = first ? "" : ratio(ref.peak_mem_model, r.peak_mem_model);
    char gflops[32];
    std::snprintf(gflops, sizeof(gflops), "%.4f", static_cast<double>(r.flops_total) / 1e9);
    const std::vector<std::string> cells = {r.dir,          r.strategy,       mib(r.peak_mem_model), gflops,
                                            mib(r.bytes_down), mib(r.bytes_up), acc(r.probe_accuracy), up,
                                            down,           fl,               mem};
    for (std::size_t c = 0; c < cells.size(); ++c) text << pad(cells[c], cols[c].second);
    text << "\n";
    table << r.dir << ',' << r.strategy << ',' << r.peak_mem_model << ',' << r.flops_total << ',' << r.bytes_down
          << ',' << r.bytes_up << ',' << acc(r.probe_accuracy) << ',' << up << ',' << down << ',' << fl << ',' << mem
          << '\n';
  }
  if (runs.size() > 1) {
    text << "\nratios are " << ref.dir << " (" << ref.strategy << ") divided by each run\n";
    for (std::size_t i = 1; i < runs.size(); ++i) {
      text << "  " << ref.strategy << " / " << runs[i].strategy << ": encoder upload ratio "
           << ratio(ref.encoder_up, runs[i].encoder_up) << ", encoder download ratio "
           << ratio(ref.encoder_down, runs[i].encoder_down) << "\n";
    }
  }
  curves << "run,round,stage,flops_fwd,flops_bwd,bytes_down,bytes_up,mem_model\n";
  for (const auto& r : runs) {
    for (const auto& e : r.ledger) {
      if (e.actor != 0) continue;
      curves << r.dir << ',' << e.round << ',' << e.stage << ',' << e.flops_fwd << ',' << e.flops_bwd << ','
             << e.bytes_down << ',' << e.bytes_up << ',' << e.mem_model << '\n';
    }
  }
  rep.text = text.str();
  rep.table_csv = table.str();
  rep.curves_csv = curves.str();
  return rep;
}

}  // namespace lwfs
