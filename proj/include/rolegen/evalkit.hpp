#pragma once

#include "rolegen/types.hpp"

#include <iosfwd>
#include <map>

namespace rolegen {

struct EvalInstance {
  std::string user_id;
  std::vector<Sid> history;
  Sid truth;
  std::vector<Sid> candidates;  // ranked, best first (1-based ranks)
};

struct MetricReport {
  std::vector<int> k_values = {1, 10, 100, 500, 2000};
  std::map<int, double> hit_item;                   // HI@K
  std::map<std::pair<int, int>, double> hit_sid;    // (level, K) -> HS_l@K
  std::map<std::pair<int, int>, double> mrr_sid;    // (level, K) -> MS_l@K
  double mean_loss = 0.0;
  std::size_t instances = 0;
};

// Fraction of instances whose full Sid appears in the top-K candidates.
double hit_item_at_k(const std::vector<EvalInstance>& instances, int k);

// Candidates projected to their level-l prefix, deduplicated keeping the
// best rank, then top-K membership of the truth prefix. Levels are 1-based.
double hit_sid_at_k(const std::vector<EvalInstance>& instances, int level,
                    int k);

// 1/rank of the truth prefix in the deduplicated projected list when rank
// <= K, else 0; averaged over instances.
double mrr_sid_at_k(const std::vector<EvalInstance>& instances, int level,
                    int k);

// OOD iff the target's SID_1 never occurs in the history.
struct OodSplit {
  std::vector<EvalInstance> in_distribution;
  std::vector<EvalInstance> out_of_distribution;
};
OodSplit ood_split(const std::vector<EvalInstance>& instances);

// Per popularity bucket: distinct items exposed with guidance over distinct
// items exposed without. 0/0 is reported as undefined, x/0 as +infinity.
struct ExposureBucketRatio {
  double lower_popularity;  // bucket edge, inclusive
  double upper_popularity;  // exclusive except for the last bucket
  std::size_t with_count = 0;
  std::size_t without_count = 0;
  bool defined = false;
  double ratio = 0.0;  // +inf marker when without_count == 0 and with > 0
};

std::vector<ExposureBucketRatio> exposure_ratio_buckets(
    const std::vector<std::string>& exposures_with,
    const std::vector<std::string>& exposures_without,
    const std::map<std::string, double>& popularity,
    const std::vector<double>& bucket_edges);

// Quintile edges of the popularity values (5 buckets by default).
std::vector<double> popularity_quintile_edges(
    const std::map<std::string, double>& popularity);

// Items ranked by interaction count over the training sequences, ties
// lexicographic by item id.
std::vector<std::pair<std::string, std::int64_t>> popularity_baseline(
    const std::vector<UserSequence>& train_sequences, std::size_t k);

MetricReport compute_report(const std::vector<EvalInstance>& instances,
                            double mean_loss = 0.0);

// Structured JSON report plus an aligned plain-text metric table.
void save_report_json(const MetricReport& report, std::ostream& out);
std::string render_report_table(const MetricReport& report);

}  // namespace rolegen
