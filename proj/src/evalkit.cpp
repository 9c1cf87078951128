#include "rolegen/evalkit.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

namespace rolegen {

namespace {

void require_instances(const std::vector<EvalInstance>& instances) {
  if (instances.empty()) throw std::invalid_argument("no eval instances");
}

std::vector<int> prefix_of(const Sid& sid, int level) {
  if (level < 1 || level > static_cast<int>(sid.codes.size())) {
    throw std::invalid_argument("bad prefix level");
  }
  return std::vector<int>(sid.codes.begin(), sid.codes.begin() + level);
}

// Dedup rank (1-based) of the truth prefix in the projected candidate list,
// or 0 when absent.
int prefix_rank(const EvalInstance& inst, int level) {
  const std::vector<int> truth = prefix_of(inst.truth, level);
  std::set<std::vector<int>> seen;
  int rank = 0;
  for (const auto& cand : inst.candidates) {
    std::vector<int> p = prefix_of(cand, level);
    if (!seen.insert(p).second) continue;
    ++rank;
    if (p == truth) return rank;
  }
  return 0;
}

}  // namespace

double hit_item_at_k(const std::vector<EvalInstance>& instances, int k) {
  require_instances(instances);
  if (k < 1) throw std::invalid_argument("K must be >= 1");
  std::size_t hits = 0;
  for (const auto& inst : instances) {
    const std::size_t top = std::min<std::size_t>(
        static_cast<std::size_t>(k), inst.candidates.size());
    for (std::size_t i = 0; i < top; ++i) {
      if (inst.candidates[i] == inst.truth) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(instances.size());
}

double hit_sid_at_k(const std::vector<EvalInstance>& instances, int level,
                    int k) {
  require_instances(instances);
  if (k < 1) throw std::invalid_argument("K must be >= 1");
  std::size_t hits = 0;
  for (const auto& inst : instances) {
    int rank = prefix_rank(inst, level);
    if (rank > 0 && rank <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(instances.size());
}

double mrr_sid_at_k(const std::vector<EvalInstance>& instances, int level,
                    int k) {
  require_instances(instances);
  if (k < 1) throw std::invalid_argument("K must be >= 1");
  double total = 0.0;
  for (const auto& inst : instances) {
    int rank = prefix_rank(inst, level);
    if (rank > 0 && rank <= k) total += 1.0 / rank;
  }
  return total / static_cast<double>(instances.size());
}

OodSplit ood_split(const std::vector<EvalInstance>& instances) {
  OodSplit split;
  for (const auto& inst : instances) {
    bool seen = false;
    for (const auto& sid : inst.history) {
      if (!sid.codes.empty() && sid.codes[0] == inst.truth.codes.at(0)) {
        seen = true;
        break;
      }
    }
    (seen ? split.in_distribution : split.out_of_distribution).push_back(inst);
  }
  return split;
}

std::vector<double> popularity_quintile_edges(
    const std::map<std::string, double>& popularity) {
  std::vector<double> values;
  for (const auto& [id, v] : popularity) values.push_back(v);
  std::sort(values.begin(), values.end());
  std::vector<double> edges;
  for (std::size_t q = 1; q < 5; ++q) {
    // ceil(q * n / 5) in exact integer arithmetic.
    std::size_t rank = (q * values.size() + 4) / 5;
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    edges.push_back(values[rank - 1]);
  }
  return edges;
}

std::vector<ExposureBucketRatio> exposure_ratio_buckets(
    const std::vector<std::string>& exposures_with,
    const std::vector<std::string>& exposures_without,
    const std::map<std::string, double>& popularity,
    const std::vector<double>& bucket_edges) {
  const std::size_t n_buckets = bucket_edges.size() + 1;
  auto bucket_of = [&](double pop) {
    std::size_t b = 0;
    while (b < bucket_edges.size() && pop >= bucket_edges[b]) ++b;
    return b;
  };

  std::vector<std::set<std::string>> with_items(n_buckets);
  std::vector<std::set<std::string>> without_items(n_buckets);
  auto fill = [&](const std::vector<std::string>& exposures,
                  std::vector<std::set<std::string>>& buckets) {
    for (const auto& id : exposures) {
      auto it = popularity.find(id);
      if (it == popularity.end()) {
        throw std::invalid_argument("exposed item with unknown popularity: " +
                                    id);
      }
      buckets[bucket_of(it->second)].insert(id);
    }
  };
  fill(exposures_with, with_items);
  fill(exposures_without, without_items);

  std::vector<ExposureBucketRatio> out(n_buckets);
  for (std::size_t b = 0; b < n_buckets; ++b) {
    auto& r = out[b];
    r.lower_popularity =
        b == 0 ? -std::numeric_limits<double>::infinity() : bucket_edges[b - 1];
    r.upper_popularity = b < bucket_edges.size()
                             ? bucket_edges[b]
                             : std::numeric_limits<double>::infinity();
    r.with_count = with_items[b].size();
    r.without_count = without_items[b].size();
    if (r.without_count > 0) {
      r.defined = true;
      r.ratio = static_cast<double>(r.with_count) /
                static_cast<double>(r.without_count);
    } else if (r.with_count > 0) {
      r.defined = true;
      r.ratio = std::numeric_limits<double>::infinity();
    }
  }
  return out;
}

std::vector<std::pair<std::string, std::int64_t>> popularity_baseline(
    const std::vector<UserSequence>& train_sequences, std::size_t k) {
  if (train_sequences.empty()) {
    throw std::invalid_argument("no training sequences");
  }
  std::map<std::string, std::int64_t> counts;
  for (const auto& seq : train_sequences) {
    for (const auto& x : seq.interactions) ++counts[x.item_id];
  }
  std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(),
                                                           counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (ranked.size() > k) ranked.resize(k);
  return ranked;
}

MetricReport compute_report(const std::vector<EvalInstance>& instances,
                            double mean_loss) {
  require_instances(instances);
  MetricReport report;
  report.instances = instances.size();
  report.mean_loss = mean_loss;
  for (int k : report.k_values) {
    report.hit_item[k] = hit_item_at_k(instances, k);
  }
  const int max_level = static_cast<int>(instances.front().truth.codes.size());
  for (int l = 1; l <= max_level; ++l) {
    for (int k : {10, 20}) {
      report.hit_sid[{l, k}] = hit_sid_at_k(instances, l, k);
      report.mrr_sid[{l, k}] = mrr_sid_at_k(instances, l, k);
    }
  }
  return report;
}

void save_report_json(const MetricReport& report, std::ostream& out) {
  using nlohmann::json;
  json j;
  j["instances"] = report.instances;
  j["mean_loss"] = report.mean_loss;
  for (const auto& [k, v] : report.hit_item) {
    j["hit_item"]["@" + std::to_string(k)] = v;
  }
  for (const auto& [lk, v] : report.hit_sid) {
    j["hit_sid"]["l" + std::to_string(lk.first) + "@" +
      std::to_string(lk.second)] = v;
  }
  for (const auto& [lk, v] : report.mrr_sid) {
    j["mrr_sid"]["l" + std::to_string(lk.first) + "@" +
      std::to_string(lk.second)] = v;
  }
  out << j.dump(2) << '\n';
}

std::string render_report_table(const MetricReport& report) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << std::left << std::setw(14) << "metric" << std::right << std::setw(10)
      << "value" << '\n';
  for (const auto& [k, v] : report.hit_item) {
    out << std::left << std::setw(14) << ("HI@" + std::to_string(k))
        << std::right << std::setw(10) << v << '\n';
  }
  for (const auto& [lk, v] : report.hit_sid) {
    out << std::left << std::setw(14)
        << ("HS" + std::to_string(lk.first) + "@" + std::to_string(lk.second))
        << std::right << std::setw(10) << v << '\n';
  }
  for (const auto& [lk, v] : report.mrr_sid) {
    out << std::left << std::setw(14)
        << ("MS" + std::to_string(lk.first) + "@" + std::to_string(lk.second))
        << std::right << std::setw(10) << v << '\n';
  }
  out << std::left << std::setw(14) << "Loss" << std::right << std::setw(10)
      << report.mean_loss << '\n';
  return out.str();
}

}  // namespace rolegen
