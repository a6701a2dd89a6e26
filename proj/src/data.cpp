#include "lwfs/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>
#include "lwfs/checkpoint.hpp"
#include "lwfs/rng.hpp"

namespace lwfs {

template <typename T>
std::size_t Dataset<T>::num_classes() const {
  if (labels.empty()) return 0;
  return static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
}

template <typename T>
Dataset<T> Dataset<T>::subset(std::span<const std::size_t> index) const {
  Dataset out;
  out.features = gather_rows(features, index);
  if (labeled()) {
    out.labels.reserve(index.size());
    for (auto i : index) out.labels.push_back(labels[i]);
  }
  out.image = image;
  out.provenance = provenance;
  return out;
}

template <typename T>
Dataset<T> gen_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 1 || spec.n < spec.classes) throw ConfigError("gen_synthetic: need n >= classes >= 1");
  if (spec.dim < 1) throw ConfigError("gen_synthetic: dim must be >= 1");
  if (spec.cluster_sep < 0) throw ConfigError("gen_synthetic: cluster_sep must be >= 0");
  std::normal_distribution<double> normal(0.0, 1.0);

  Rng center_rng(mix_seed(spec.center_seed.value_or(spec.seed), {0xC3A7}));
  std::vector<std::vector<double>> centers(spec.classes, std::vector<double>(spec.dim));
  for (auto& c : centers) {
    double norm = 0;
    for (auto& v : c) {
      v = normal(center_rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : c) v = norm > 0 ? v / norm * spec.cluster_sep : 0.0;
  }
  if (spec.center_shift > 0) {
    Rng shift_rng(mix_seed(spec.seed, {0x5A1F}));
    for (auto& c : centers) {
      for (auto& v : c) v += spec.center_shift * normal(shift_rng);
    }
  }

  Rng rng(mix_seed(spec.seed, {0xDA7A}));
  Dataset<T> ds;
  ds.features = Tensor<T>({spec.n, spec.dim});
  ds.labels.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const std::size_t c = i % spec.classes;
    ds.labels[i] = static_cast<int>(c);
    for (std::size_t j = 0; j < spec.dim; ++j) ds.features.at(i, j) = static_cast<T>(centers[c][j] + normal(rng));
  }
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(spec.dim))));
  if (side * side == spec.dim) ds.image = ImageShape{1, side, side};
  ds.provenance = "synthetic(n=" + std::to_string(spec.n) + ",C=" + std::to_string(spec.classes) +
                  ",D=" + std::to_string(spec.dim) + ",seed=" + std::to_string(spec.seed) + ")";
  return ds;
}

template <typename T>
Dataset<T> parse_cifar10_bin(std::span<const std::uint8_t> bytes, const std::string& provenance) {
  constexpr std::size_t kRecord = 3073;
  if (bytes.empty() || bytes.size() % kRecord != 0) {
    throw FormatError("cifar10: size " + std::to_string(bytes.size()) + " is not a multiple of 3073-byte records");
  }
  const std::size_t n = bytes.size() / kRecord;
  Dataset<T> ds;
  ds.features = Tensor<T>({n, 3072});
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* rec = bytes.data() + i * kRecord;
    if (rec[0] > 9) throw FormatError("cifar10: record " + std::to_string(i) + " has label byte " + std::to_string(rec[0]));
    ds.labels[i] = rec[0];
    for (std::size_t j = 0; j < 3072; ++j) ds.features.at(i, j) = static_cast<T>(rec[1 + j]) / static_cast<T>(255);
  }
  ds.image = ImageShape{3, 32, 32};
  ds.provenance = provenance;
  return ds;
}

template <typename T>
Dataset<T> load_cifar10_bin(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_cifar10_bin<T>(bytes, "cifar10:" + path.filename().string());
}

std::size_t Partition::total() const {
  std::size_t n = 0;
  for (const auto& c : clients) n += c.size();
  return n;
}

void Partition::validate(std::size_t parent_size) const {
  std::vector<bool> seen(parent_size, false);
  for (std::size_t i = 0; i < clients.size(); ++i) {
    if (clients[i].empty()) throw PartitionError("partition: client " + std::to_string(i) + " is empty");
    for (auto idx : clients[i]) {
      if (idx >= parent_size) throw PartitionError("partition: index " + std::to_string(idx) + " out of range");
      if (seen[idx]) throw PartitionError("partition: index " + std::to_string(idx) + " assigned twice");
      seen[idx] = true;
    }
  }
}

std::string Partition::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["beta"] = beta ? nlohmann::json(*beta) : nlohmann::json(nullptr);
  nlohmann::json cl = nlohmann::json::object();
  for (std::size_t i = 0; i < clients.size(); ++i) cl[std::to_string(i)] = clients[i];
  j["clients"] = std::move(cl);
  return j.dump();
}

Partition Partition::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    Partition p;
    p.seed = j.at("seed").get<std::uint64_t>();
    if (!j.at("beta").is_null()) p.beta = j.at("beta").get<double>();
    const auto& cl = j.at("clients");
    p.clients.resize(cl.size());
    for (const auto& [key, value] : cl.items()) {
      const std::size_t id = std::stoul(key);
      if (id >= p.clients.size()) throw FormatError("partition: client ids must be 0..N-1");
      p.clients[id] = value.get<std::vector<std::size_t>>();
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("partition: malformed JSON: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw FormatError("partition: client ids must be integers");
  }
}

std::vector<std::size_t> largest_remainder(std::span<const double> weights, std::size_t total) {
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> counts(weights.size(), 0);
  if (weights.empty() || total == 0) return counts;
  if (!(wsum > 0)) throw ContractError("largest_remainder: weights must have positive sum");
  std::vector<double> frac(weights.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double quota = weights[i] / wsum * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(quota));
    frac[i] = quota - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  // Guard against floor() overshooting through round-off.
  while (assigned > total) {
    auto it = std::max_element(counts.begin(), counts.end());
    --*it;
    --assigned;
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t k = 0; assigned < total; k = (k + 1) % order.size()) {
    ++counts[order[k]];
    ++assigned;
  }
  return counts;
}

Partition partition_uniform(std::size_t n, std::size_t num_clients, std::uint64_t seed) {
  if (num_clients < 1) throw ConfigError("partition_uniform: need at least one client");
  if (n < num_clients) {
    throw ConfigError("partition_uniform: " + std::to_string(n) + " samples for " + std::to_string(num_clients) +
                      " clients");
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(mix_seed(seed, {seed_tag::kPartition}));
  std::shuffle(idx.begin(), idx.end(), rng);
  Partition p;
  p.seed = seed;
  p.clients.resize(num_clients);
  const std::size_t base = n / num_clients, extra = n % num_clients;
  std::size_t pos = 0;
  for (std::size_t c = 0; c < num_clients; ++c) {
    const std::size_t len = base + (c < extra ? 1 : 0);
    p.clients[c].assign(idx.begin() + pos, idx.begin() + pos + len);
    pos += len;
  }
  return p;
}

Partition partition_dirichlet(std::span<const int> labels, std::size_t num_clients, double beta, std::uint64_t seed,
                              std::size_t min_per_client, std::size_t max_retries) {
  if (labels.empty()) throw ConfigError("partition_dirichlet: dataset must be labeled");
  if (!(beta > 0)) throw ConfigError("partition_dirichlet: beta must be > 0");
  if (num_clients < 1) throw ConfigError("partition_dirichlet: need at least one client");
  std::size_t classes = 0;
  for (int l : labels) {
    if (l < 0) throw ConfigError("partition_dirichlet: negative label");
    classes = std::max(classes, static_cast<std::size_t>(l) + 1);
  }
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);

  for (std::size_t attempt = 0; attempt < max_retries; ++attempt) {
    Rng rng(mix_seed(seed, {seed_tag::kPartition, attempt}));
    // libstdc++ draws Gamma with Marsaglia-Tsang, boosted for shape < 1.
    std::gamma_distribution<double> gamma(beta, 1.0);
    Partition p;
    p.seed = seed;
    p.beta = beta;
    p.clients.resize(num_clients);
    for (const auto& members : by_class) {
      if (members.empty()) continue;
      std::vector<double> share(num_clients);
      double total = 0;
      for (auto& s : share) {
        s = gamma(rng);
        total += s;
      }
      if (!(total > 0)) {
        // Every draw underflowed (tiny beta): give the class to one client.
        std::fill(share.begin(), share.end(), 0.0);
        share[std::uniform_int_distribution<std::size_t>(0, num_clients - 1)(rng)] = 1.0;
      }
      std::vector<std::size_t> shuffled = members;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      const auto counts = largest_remainder(share, shuffled.size());
      std::size_t pos = 0;
      for (std::size_t c = 0; c < num_clients; ++c) {
        p.clients[c].insert(p.clients[c].end(), shuffled.begin() + pos, shuffled.begin() + pos + counts[c]);
        pos += counts[c];
      }
    }
    const bool ok = std::all_of(p.clients.begin(), p.clients.end(),
                                [&](const auto& c) { return c.size() >= std::max<std::size_t>(min_per_client, 1); });
    if (ok) {
      for (auto& c : p.clients) std::sort(c.begin(), c.end());
      return p;
    }
  }
  throw PartitionError("partition_dirichlet: no partition with >= " + std::to_string(min_per_client) +
                       " samples per client after " + std::to_string(max_retries) +
                       " draws; use a larger beta or fewer clients");
}

template <typename T>
Dataset<T> sample_auxiliary(const Dataset<T>& ds, double ratio, std::uint64_t seed) {
  if (!(ratio > 0) || ratio > 1) throw ConfigError("sample_auxiliary: ratio must be in (0, 1]");
  const std::size_t n = ds.size();
  const auto want = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
  if (want == 0) throw ConfigError("sample_auxiliary: empty auxiliary sample");
  Rng rng(mix_seed(seed, {seed_tag::kSampling}));
  std::vector<std::size_t> picked;
  if (ds.labeled()) {
    std::vector<std::vector<std::size_t>> by_class(ds.num_classes());
    for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    std::vector<double> sizes;
    for (const auto& c : by_class) sizes.push_back(static_cast<double>(c.size()));
    const auto counts = largest_remainder(sizes, want);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
      auto members = by_class[c];
      std::shuffle(members.begin(), members.end(), rng);
      picked.insert(picked.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(counts[c]));
    }
  } else {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    picked.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(want));
  }
  std::sort(picked.begin(), picked.end());
  Dataset<T> out = ds.subset(picked);
  out.labels.clear();
  out.provenance = ds.provenance + "/aux";
  return out;
}

#define LWFS_INSTANTIATE(T)                                                                 \
  template struct Dataset<T>;                                                               \
  template Dataset<T> gen_synthetic<T>(const SyntheticSpec&);                               \
  template Dataset<T> parse_cifar10_bin<T>(std::span<const std::uint8_t>, const std::string&); \
  template Dataset<T> load_cifar10_bin<T>(const std::filesystem::path&);                    \
  template Dataset<T> sample_auxiliary(const Dataset<T>&, double, std::uint64_t);

LWFS_INSTANTIATE(float)
LWFS_INSTANTIATE(double)

}  // namespace lwfs
