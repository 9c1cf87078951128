#include "rolegen/evalkit.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <sstream>

using namespace rolegen;

namespace {

Sid sid(int a, int b, int c) { return Sid{{a, b, c}}; }

// Scan oracles reimplemented from the metric definitions.
double oracle_hit_item(const std::vector<EvalInstance>& xs, int k) {
  double hits = 0;
  for (const auto& x : xs) {
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(k),
                                         x.candidates.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (x.candidates[i] == x.truth) {
        hits += 1;
        break;
      }
    }
  }
  return xs.empty() ? 0.0 : hits / static_cast<double>(xs.size());
}

// Dedup by prefix keeping the best (earliest) rank, then top-K membership
// and reciprocal rank of the truth prefix.
std::pair<double, double> oracle_sid(const std::vector<EvalInstance>& xs,
                                     int level, int k) {
  double hits = 0, mrr = 0;
  for (const auto& x : xs) {
    std::vector<std::vector<int>> seen;
    std::vector<int> want(x.truth.codes.begin(),
                          x.truth.codes.begin() + level);
    std::size_t rank = 0;
    for (const auto& c : x.candidates) {
      std::vector<int> prefix(c.codes.begin(), c.codes.begin() + level);
      if (std::find(seen.begin(), seen.end(), prefix) != seen.end()) continue;
      seen.push_back(prefix);
      if (prefix == want && rank < static_cast<std::size_t>(k)) {
        hits += 1;
        mrr += 1.0 / static_cast<double>(seen.size());
        break;
      }
      ++rank;
      if (rank >= static_cast<std::size_t>(k)) break;
    }
  }
  const double n = xs.empty() ? 1.0 : static_cast<double>(xs.size());
  return {hits / n, mrr / n};
}

std::vector<EvalInstance> random_instances(std::size_t n, std::mt19937_64& rng) {
  std::vector<EvalInstance> xs;
  for (std::size_t i = 0; i < n; ++i) {
    EvalInstance x;
    x.user_id = "u" + std::to_string(i);
    const int hist = static_cast<int>(rng() % 4);
    for (int h = 0; h < hist; ++h) {
      x.history.push_back(sid(static_cast<int>(rng() % 3),
                              static_cast<int>(rng() % 3),
                              static_cast<int>(rng() % 3)));
    }
    x.truth = sid(static_cast<int>(rng() % 3), static_cast<int>(rng() % 3),
                  static_cast<int>(rng() % 3));
    const int cands = static_cast<int>(rng() % 12);
    for (int c = 0; c < cands; ++c) {
      x.candidates.push_back(sid(static_cast<int>(rng() % 3),
                                 static_cast<int>(rng() % 3),
                                 static_cast<int>(rng() % 3)));
    }
    xs.push_back(std::move(x));
  }
  return xs;
}

}  // namespace

TEST_CASE("prefix dedup keeps the best rank") {
  // Candidates project at level 1 to [5, 9]; the duplicate 5 is dropped, so
  // the truth prefix 9 sits at rank 2 and HS_1@2 hits.
  EvalInstance x;
  x.truth = sid(9, 0, 0);
  x.candidates = {sid(5, 1, 1), sid(5, 2, 2), sid(9, 3, 3)};
  std::vector<EvalInstance> xs = {x};
  CHECK(hit_sid_at_k(xs, 1, 2) == 1.0);
  CHECK(hit_sid_at_k(xs, 1, 1) == 0.0);
  CHECK(mrr_sid_at_k(xs, 1, 2) == 0.5);
  // Without dedup the raw rank would be 3 and @2 would miss.
  CHECK(hit_item_at_k(xs, 3) == 0.0);

  x.candidates = {sid(9, 3, 3), sid(9, 3, 3)};
  x.truth = sid(9, 3, 3);
  CHECK(hit_item_at_k({x}, 1) == 1.0);
  CHECK(mrr_sid_at_k({x}, 3, 10) == 1.0);
}

TEST_CASE("metrics agree with scan oracles on random instances") {
  std::mt19937_64 rng(3);
  auto xs = random_instances(1000, rng);
  for (int k : {1, 2, 5, 10}) {
    CHECK(hit_item_at_k(xs, k) == doctest::Approx(oracle_hit_item(xs, k)));
    for (int level : {1, 2, 3}) {
      auto [hit, mrr] = oracle_sid(xs, level, k);
      CHECK(hit_sid_at_k(xs, level, k) == doctest::Approx(hit));
      CHECK(mrr_sid_at_k(xs, level, k) == doctest::Approx(mrr));
    }
  }
}

TEST_CASE("hit rates are monotone in K and coarser levels dominate") {
  std::mt19937_64 rng(5);
  auto xs = random_instances(400, rng);
  double prev = 0.0;
  for (int k : {1, 2, 3, 5, 8, 12}) {
    double hi = hit_item_at_k(xs, k);
    CHECK(hi >= prev);
    prev = hi;
    CHECK(hit_sid_at_k(xs, 1, k) >= hit_sid_at_k(xs, 3, k));
    CHECK(hit_sid_at_k(xs, 3, k) >= hi);
  }
}

TEST_CASE("ood split keys on the level-1 prefix of the truth") {
  EvalInstance seen;
  seen.history = {sid(1, 0, 0), sid(2, 2, 2)};
  seen.truth = sid(1, 9, 9);
  EvalInstance unseen = seen;
  unseen.truth = sid(7, 0, 0);
  EvalInstance empty_hist;
  empty_hist.truth = sid(0, 0, 0);

  OodSplit split = ood_split({seen, unseen, empty_hist});
  REQUIRE(split.in_distribution.size() == 1);
  REQUIRE(split.out_of_distribution.size() == 2);
  CHECK(split.in_distribution[0].truth == seen.truth);
}

TEST_CASE("exposure ratios count distinct items per popularity bucket") {
  std::map<std::string, double> pop = {
      {"a", 1.0}, {"b", 2.0}, {"c", 10.0}, {"d", 11.0}};
  std::vector<double> edges = {5.0};  // two buckets: [.., 5) and [5, ..)

  // Duplicates collapse: {a, b, a} vs {a}.
  auto buckets = exposure_ratio_buckets({"a", "b", "a", "c"}, {"a", "c", "d"},
                                        pop, edges);
  REQUIRE(buckets.size() == 2);
  CHECK(buckets[0].with_count == 2);
  CHECK(buckets[0].without_count == 1);
  CHECK(buckets[0].defined);
  CHECK(buckets[0].ratio == 2.0);
  CHECK(buckets[1].with_count == 1);
  CHECK(buckets[1].without_count == 2);
  CHECK(buckets[1].ratio == 0.5);

  auto identical = exposure_ratio_buckets({"a"}, {"a"}, pop, edges);
  CHECK(identical[0].ratio == 1.0);

  // x/0 is +inf, 0/0 undefined.
  auto lopsided = exposure_ratio_buckets({"a"}, {}, pop, edges);
  CHECK(lopsided[0].defined);
  CHECK(std::isinf(lopsided[0].ratio));
  CHECK_FALSE(lopsided[1].defined);

  CHECK_THROWS(exposure_ratio_buckets({"zz"}, {}, pop, edges));
}

TEST_CASE("quintile edges are lower inclusive quantiles of popularity") {
  std::map<std::string, double> pop;
  for (int i = 1; i <= 10; ++i) {
    pop["i" + std::to_string(i)] = static_cast<double>(i);
  }
  auto edges = popularity_quintile_edges(pop);
  // Q20 rank ceil(.2*10)=2, Q40 -> 4, Q60 -> 6, Q80 -> 8.
  REQUIRE(edges.size() == 4);
  CHECK(edges[0] == 2.0);
  CHECK(edges[1] == 4.0);
  CHECK(edges[2] == 6.0);
  CHECK(edges[3] == 8.0);
}

TEST_CASE("popularity baseline counts every interaction, ties by item id") {
  UserSequence u1{"u1",
                  {{"b", Behavior::View, 1},
                   {"a", Behavior::Click, 2},
                   {"a", Behavior::Purchase, 3}},
                  ""};
  UserSequence u2{"u2", {{"b", Behavior::View, 1}, {"c", Behavior::View, 2}}, ""};
  auto top = popularity_baseline({u1, u2}, 10);
  REQUIRE(top.size() == 3);
  CHECK(top[0] == std::pair<std::string, std::int64_t>{"a", 2});
  CHECK(top[1] == std::pair<std::string, std::int64_t>{"b", 2});
  CHECK(top[2] == std::pair<std::string, std::int64_t>{"c", 1});
  CHECK(popularity_baseline({u1, u2}, 2).size() == 2);
}

TEST_CASE("report carries every configured cut and serializes stably") {
  std::mt19937_64 rng(7);
  auto xs = random_instances(50, rng);
  MetricReport report = compute_report(xs, 1.25);
  CHECK(report.instances == 50);
  CHECK(report.mean_loss == 1.25);
  for (int k : report.k_values) {
    CHECK(report.hit_item.count(k) == 1);
  }
  for (int k : {10, 20}) {
    for (int level : {1, 2, 3}) {
      CHECK(report.hit_sid.count({level, k}) == 1);
      CHECK(report.mrr_sid.count({level, k}) == 1);
    }
  }

  std::stringstream a, b;
  save_report_json(report, a);
  save_report_json(report, b);
  CHECK(a.str() == b.str());
  CHECK_FALSE(a.str().empty());

  std::string table = render_report_table(report);
  CHECK(table.find("HI@10") != std::string::npos);
  CHECK(table.find("HS1@10") != std::string::npos);
}

TEST_CASE("wrong sid widths are rejected") {
  EvalInstance x;
  x.truth = Sid{{1, 2}};
  x.candidates = {sid(1, 2, 3)};
  CHECK_THROWS(hit_sid_at_k({x}, 3, 10));
  CHECK_THROWS(hit_sid_at_k({x}, 0, 10));
  CHECK_THROWS(hit_item_at_k({x}, 0));
}
