#include "rolegen/reasoner.hpp"

#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>

using namespace rolegen;

namespace {

struct Fixture {
  Catalog catalog;
  CategoryGraph graph;
  std::map<std::string, Sid> sid_map;
  CategoryStats stats;
  RoleThresholds thresholds;

  Fixture() {
    auto add = [&](const std::string& id, const std::string& leaf,
                   std::int64_t price, std::int64_t sales, int code) {
      Item item;
      item.item_id = id;
      item.title = "title of " + id;
      item.price = price;
      item.category = {"Root", "Mid", leaf};
      item.sales_30d = sales;
      item.embedding = Vector::Zero(1);
      catalog.add(item);
      sid_map[id] = Sid{{code % 4, (code / 4) % 4, code / 16}};
    };
    // "Phone": durable anchors. "Stand": complements of Phone.
    add("P1", "Phone", 500, 5, 0);
    add("P2", "Phone", 900, 50, 1);
    add("S1", "Stand", 30, 100, 2);
    add("S2", "Stand", 40, 80, 3);
    add("S3", "Stand", 50, 60, 4);
    graph.add_edge("Phone", "Stand", Relation::Complement, 2.0);
    stats = CategoryStats::build(catalog);
  }

  UserSequence sequence() const {
    UserSequence seq;
    seq.user_id = "u1";
    seq.interactions = {{"P2", Behavior::Click, 10},
                        {"S1", Behavior::View, 20},
                        {"S2", Behavior::Purchase, 30}};
    return seq;
  }

  InterestProfile profile(const UserSequence& seq) const {
    return compute_interest_profile(seq, catalog, BehaviorWeights{});
  }

  RoleTrajectory trajectory(const UserSequence& seq,
                            const InterestProfile& prof) const {
    auto roles =
        assign_sequence_roles(seq, catalog, stats, thresholds, prof, graph);
    auto keys = extract_key_items(seq, roles, thresholds.max_key_items);
    return build_role_trajectory(keys, roles);
  }
};

}  // namespace

TEST_CASE("history serialization lists behavior and sid pairs oldest first") {
  Fixture fx;
  UserSequence seq = fx.sequence();
  std::string hist = serialize_history(seq, fx.sid_map);
  CHECK(hist ==
        "(click, <sid_begin>s1_1 s2_0 s3_0<sid_end>) "
        "(view, <sid_begin>s1_2 s2_0 s3_0<sid_end>) "
        "(purchase, <sid_begin>s1_3 s2_0 s3_0<sid_end>)");
  CHECK_THROWS(serialize_history(
      UserSequence{"u", {{"missing", Behavior::View, 1}}, ""}, fx.sid_map));
}

TEST_CASE("think content re-parses to the same profile, roles and target") {
  Fixture fx;
  UserSequence seq = fx.sequence();
  auto prof = fx.profile(seq);
  auto traj = fx.trajectory(seq, prof);
  REQUIRE_FALSE(traj.entries.empty());

  FunctionalRole target;
  target.pop = Popularity::Booming;
  target.repl = Replenishment::FMCG;
  target.cost = DecisionCost::Trial;
  target.rel = ContextualRole{"Phone", Relation::Complement};

  std::string think = render_think_content(prof, traj, fx.sid_map, target);
  ParsedThink parsed = parse_think_content(think);
  REQUIRE(parsed.profile.size() == prof.size());
  for (std::size_t i = 0; i < prof.size(); ++i) {
    CHECK(parsed.profile[i].category == prof[i].category);
    CHECK(parsed.profile[i].score == prof[i].score);
  }
  REQUIRE(parsed.trajectory.size() == traj.entries.size());
  for (std::size_t i = 0; i < traj.entries.size(); ++i) {
    CHECK(parsed.trajectory[i].first == fx.sid_map.at(traj.entries[i].first));
    CHECK(parsed.trajectory[i].second == traj.entries[i].second);
  }
  CHECK(parsed.target_role == target);

  // Empty profile and trajectory render as "none" and parse back empty.
  std::string bare =
      render_think_content({}, RoleTrajectory{}, fx.sid_map, target);
  ParsedThink p2 = parse_think_content(bare);
  CHECK(p2.profile.empty());
  CHECK(p2.trajectory.empty());

  CHECK_THROWS(parse_think_content("not think content"));
}

TEST_CASE("alignment records: three per item, each re-parses") {
  Fixture fx;
  auto records = build_alignment_records(fx.catalog, fx.sid_map);
  REQUIRE(records.size() == 3 * fx.catalog.size());

  std::size_t indexing = 0, title = 0, category = 0;
  for (const auto& r : records) {
    ParsedRecord parsed = parse_record(r);
    CHECK(parsed.task == r.task);
    if (r.task == TaskKind::ItemIndexing) ++indexing;
    if (r.task == TaskKind::ItemProfileTitle) ++title;
    if (r.task == TaskKind::ItemProfileCategory) ++category;
  }
  CHECK(indexing == fx.catalog.size());
  CHECK(title == fx.catalog.size());
  CHECK(category == fx.catalog.size());

  // Indexing prompts carry the full item card; the target is the sid token.
  const auto& first = records[0];
  CHECK(first.task == TaskKind::ItemIndexing);
  CHECK(first.prompt.find("Title: ") != std::string::npos);
  CHECK(first.prompt.find("Price: ") != std::string::npos);
  CHECK(first.prompt.find("Category Path: ") != std::string::npos);
  CHECK(sid_from_token_string(first.target).has_value());

  std::map<std::string, Sid> incomplete;
  CHECK_THROWS(build_alignment_records(fx.catalog, incomplete));
}

TEST_CASE("frcot record pairs the think span with the target sid") {
  Fixture fx;
  UserSequence seq = fx.sequence();
  auto prof = fx.profile(seq);
  auto traj = fx.trajectory(seq, prof);
  FunctionalRole target_role;
  target_role.rel = ContextualRole{"Phone", Relation::Complement};

  PromptRecord rec =
      build_frcot_record(seq, prof, traj, fx.sid_map, "S3", target_role);
  CHECK(rec.task == TaskKind::FrCot);
  CHECK(rec.target.rfind("<think>", 0) == 0);
  const std::string tail = "</think>" + sid_to_token_string(fx.sid_map.at("S3"));
  CHECK(rec.target.size() >= tail.size());
  CHECK(rec.target.compare(rec.target.size() - tail.size(), tail.size(),
                           tail) == 0);

  ParsedRecord parsed = parse_record(rec);
  CHECK(parsed.task == TaskKind::FrCot);

  CHECK_THROWS_WITH(
      build_frcot_record(seq, prof, traj, fx.sid_map, "S2", target_role),
      "target item appears in history: S2");
}

TEST_CASE("stepwise decomposition yields five parseable records") {
  Fixture fx;
  UserSequence seq = fx.sequence();
  auto prof = fx.profile(seq);
  auto traj = fx.trajectory(seq, prof);
  FunctionalRole target_role;

  auto records = build_stepwise_records(seq, prof, traj, fx.sid_map,
                                        fx.catalog, "S3", target_role);
  REQUIRE(records.size() == 5);
  std::map<TaskKind, int> by_task;
  for (const auto& r : records) {
    ++by_task[r.task];
    CHECK_NOTHROW(parse_record(r));
  }
  CHECK(by_task[TaskKind::SubKeyItems] == 1);
  CHECK(by_task[TaskKind::SubRoleInterpret] == 1);
  CHECK(by_task[TaskKind::SubJointReason] == 1);
  CHECK(by_task[TaskKind::StandardNextItem] == 2);
}

TEST_CASE("reflection record lists both candidate pools") {
  Fixture fx;
  UserSequence seq = fx.sequence();
  std::vector<ScoredSid> reasoner_cands = {{fx.sid_map.at("S1"), 1.0}};
  std::vector<ScoredSid> backbone_cands = {{fx.sid_map.at("S2"), -0.5},
                                           {fx.sid_map.at("S3"), -0.9}};
  PromptRecord rec = build_reflection_record(seq, fx.sid_map, reasoner_cands,
                                             backbone_cands, "S3");
  CHECK(rec.task == TaskKind::Reflection);
  CHECK(rec.prompt.find("Reasoner Candidates: ") != std::string::npos);
  CHECK(rec.prompt.find("Backbone Candidates: ") != std::string::npos);
  CHECK(rec.target == sid_to_token_string(fx.sid_map.at("S3")));
  CHECK_NOTHROW(parse_record(rec));

  PromptRecord empty = build_reflection_record(seq, fx.sid_map, {}, {}, "S3");
  CHECK(empty.prompt.find("none") != std::string::npos);
}

TEST_CASE("records survive a save and load round trip") {
  Fixture fx;
  auto records = build_alignment_records(fx.catalog, fx.sid_map);
  std::stringstream buf;
  save_records(records, buf);
  auto loaded = load_records(buf);
  REQUIRE(loaded.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(loaded[i].task == records[i].task);
    CHECK(loaded[i].instruction == records[i].instruction);
    CHECK(loaded[i].prompt == records[i].prompt);
    CHECK(loaded[i].target == records[i].target);
  }
}

TEST_CASE("parse_record rejects tampered targets") {
  Fixture fx;
  auto records = build_alignment_records(fx.catalog, fx.sid_map);
  PromptRecord broken = records[0];
  broken.target = "not a sid";
  CHECK_THROWS(parse_record(broken));
}

TEST_CASE("global role table ranks by count then class order") {
  GlobalRoleTable table;
  RoleClass a{Popularity::Booming, Replenishment::FMCG, DecisionCost::Trial,
              std::nullopt};
  RoleClass b{Popularity::LongTail, Replenishment::Durable, DecisionCost::Core,
              Relation::Complement};
  RoleClass c{Popularity::Evergreen, Replenishment::FMCG, DecisionCost::Core,
              std::nullopt};
  table.add(a, 3);
  table.add(b, 5);
  table.add(c, 3);

  auto top = table.top_roles(2);
  REQUIRE(top.size() == 2);
  CHECK(top[0] == b);
  // a and c tie at 3; the smaller class wins.
  CHECK(top[1] == std::min(a, c));
  CHECK(table.top_roles(10).size() == 3);
  CHECK(table.count(a) == 3);
  CHECK(table.count(RoleClass{}) == 0);
  CHECK_THROWS(table.add(a, -1));

  std::stringstream buf;
  table.save(buf);
  GlobalRoleTable loaded = GlobalRoleTable::load(buf);
  CHECK(loaded.counts() == table.counts());
}

TEST_CASE("candidate roles union trajectory classes with global top") {
  Fixture fx;
  UserSequence seq = fx.sequence();
  auto prof = fx.profile(seq);
  auto traj = fx.trajectory(seq, prof);
  REQUIRE_FALSE(traj.entries.empty());

  GlobalRoleTable table;
  RoleClass global_only{Popularity::Booming, Replenishment::Durable,
                        DecisionCost::Premium, std::nullopt};
  table.add(global_only, 7);
  table.add(role_class_of(traj.entries[0].second), 2);

  auto cands = build_candidate_roles(traj, table, 10);
  CHECK(std::is_sorted(cands.begin(), cands.end()));
  CHECK(std::adjacent_find(cands.begin(), cands.end()) == cands.end());
  CHECK(std::find(cands.begin(), cands.end(), global_only) != cands.end());
  for (const auto& [item, role] : traj.entries) {
    CHECK(std::find(cands.begin(), cands.end(), role_class_of(role)) !=
          cands.end());
  }
}

TEST_CASE("counterfactual sampling is deterministic and covers the pool") {
  Fixture fx;
  UserSequence seq = fx.sequence();
  auto prof = fx.profile(seq);
  auto traj = fx.trajectory(seq, prof);

  GlobalRoleTable table;
  std::vector<RoleClass> candidates = build_candidate_roles(traj, table, 0);
  RoleClass extra{Popularity::LongTail, Replenishment::Durable,
                  DecisionCost::Premium, std::nullopt};
  candidates.push_back(extra);
  std::sort(candidates.begin(), candidates.end());

  auto qs = sample_counterfactuals(seq, prof, traj, fx.sid_map, candidates,
                                   table, candidates.size(), 42);
  REQUIRE(qs.size() == candidates.size());
  // n == |pool|: every class appears exactly once.
  std::vector<RoleClass> drawn;
  for (const auto& q : qs) drawn.push_back(q.intervened_role);
  std::sort(drawn.begin(), drawn.end());
  CHECK(drawn == candidates);

  auto qs2 = sample_counterfactuals(seq, prof, traj, fx.sid_map, candidates,
                                    table, candidates.size(), 42);
  for (std::size_t i = 0; i < qs.size(); ++i) {
    CHECK(qs[i].intervened_role == qs2[i].intervened_role);
    CHECK(qs[i].prompt == qs2[i].prompt);
  }

  for (const auto& q : qs) {
    CHECK(q.user_id == "u1");
    bool observed = false;
    for (const auto& [item, role] : traj.entries) {
      if (role_class_of(role) == q.intervened_role) observed = true;
    }
    CHECK(q.provenance == (observed ? QueryProvenance::TrajectoryObserved
                                    : QueryProvenance::GlobalFrequent));
    // The prompt embeds exactly the intervened role as the target line.
    CHECK(q.prompt.find("Target role: " +
                        role_class_to_string(q.intervened_role)) !=
          std::string::npos);
    CHECK(q.prompt.find("<think>") != std::string::npos);
    CHECK(q.prompt.find("</think>") != std::string::npos);
  }

  CHECK_THROWS_WITH(
      sample_counterfactuals(seq, prof, traj, fx.sid_map, {}, table, 1, 1),
      "empty counterfactual candidate set; fall back to the factual FR-CoT "
      "record for this user");
  CHECK_THROWS(sample_counterfactuals(seq, prof, traj, fx.sid_map, candidates,
                                      table, 0, 1));
}

TEST_CASE("replacement draws follow the smoothed conversion weights") {
  Fixture fx;
  UserSequence seq = fx.sequence();
  InterestProfile prof;
  RoleTrajectory traj;

  RoleClass rare{Popularity::LongTail, Replenishment::Durable,
                 DecisionCost::Core, std::nullopt};
  RoleClass frequent{Popularity::Booming, Replenishment::FMCG,
                     DecisionCost::Trial, std::nullopt};
  GlobalRoleTable table;
  table.add(frequent, 9);  // weights 10 vs 1 after smoothing

  const std::size_t n = 2 + 4000;
  auto qs = sample_counterfactuals(seq, prof, traj, fx.sid_map,
                                   {rare, frequent}, table, n, 7);
  REQUIRE(qs.size() == n);
  std::size_t hits = 0;
  for (std::size_t i = 2; i < n; ++i) {
    if (qs[i].intervened_role == frequent) ++hits;
  }
  const double p = 10.0 / 11.0;
  const double sigma = std::sqrt(p * (1 - p) / 4000.0);
  CHECK(std::abs(static_cast<double>(hits) / 4000.0 - p) < 3 * sigma);
}

TEST_CASE("mock reasoner returns role-faithful items by popularity") {
  Fixture fx;
  UserSequence train = fx.sequence();
  MockOracle oracle = MockOracle::build(fx.catalog, fx.stats, fx.thresholds,
                                        fx.graph, fx.sid_map, {train});

  CounterfactualQuery q;
  q.user_id = "u1";
  q.profile = {{"Phone", 4.0}};
  // All stands share an intrinsic class profile within their category; pick
  // the class of S1 and require the complement relation from Phone.
  IntrinsicRole s1 =
      assign_intrinsic_roles(fx.catalog.at("S1"), fx.stats, fx.thresholds);
  q.intervened_role =
      RoleClass{s1.pop, s1.repl, s1.cost, Relation::Complement};

  ReasonerOutput out = mock_reason(q, oracle, 10);
  REQUIRE_FALSE(out.candidates.empty());
  for (std::size_t i = 0; i < out.candidates.size(); ++i) {
    // Every returned sid belongs to a Stand item with the requested class.
    bool matched = false;
    for (const auto& info : oracle.items()) {
      if (info.sid == out.candidates[i].sid) {
        CHECK(info.category == "Stand");
        CHECK(info.intrinsic.pop == q.intervened_role.pop);
        matched = true;
      }
    }
    CHECK(matched);
    if (i > 0) CHECK(out.candidates[i - 1].score >= out.candidates[i].score);
  }

  // Without any profiled anchor nothing is reachable.
  q.profile = {{"Stand", 4.0}};
  CHECK(mock_reason(q, oracle, 10).candidates.empty());

  // Relation-free classes ignore the graph.
  q.intervened_role.relation = std::nullopt;
  CHECK_FALSE(mock_reason(q, oracle, 10).candidates.empty());

  CHECK(mock_reason(q, oracle, 1).candidates.size() <= 1);
  CHECK_THROWS(mock_reason(q, oracle, 0));

  oracle.add_feedback("S1", 5);
  CHECK_THROWS(oracle.add_feedback("nope"));
}

TEST_CASE("completion parsing extracts ranked unique sids") {
  auto out = parse_completions({
      "I think <sid_begin>s1_1 s2_2 s3_3<sid_end> fits",
      "garbage with no token",
      "pick <sid_begin>s1_1 s2_2 s3_3<sid_end> again",
      "<sid_begin>s1_0 s2_0 s3_0<sid_end>",
  });
  REQUIRE(out.candidates.size() == 2);
  CHECK(out.candidates[0].sid == Sid{{1, 2, 3}});
  CHECK(out.candidates[1].sid == Sid{{0, 0, 0}});
  CHECK(out.candidates[0].score == 1.0);
  CHECK(out.candidates[1].score == 0.5);
  CHECK(out.parse_failures == 1);
  CHECK(parse_completions({}).candidates.empty());
}

TEST_CASE("unreachable endpoint raises a transient error") {
  RemoteEndpointConfig cfg;
  cfg.host = "127.0.0.1";
  cfg.port = 1;  // nothing listens here
  cfg.timeout_seconds = 1;
  CounterfactualQuery q;
  CHECK_THROWS_AS(remote_reason(q, cfg, 2), TransientNetworkError);
}

TEST_CASE("reasoner cache round-trips") {
  std::vector<ReasonerCacheEntry> entries = {
      {"u1", {{Sid{{1, 2, 3}}, 0.9}, {Sid{{0, 0, 1}}, 0.4}}, 1700000000},
      {"u2", {}, 1700000100},
  };
  std::stringstream buf;
  save_reasoner_cache(entries, buf);
  auto loaded = load_reasoner_cache(buf);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].user_id == "u1");
  CHECK(loaded[0].generated_at == 1700000000);
  REQUIRE(loaded[0].candidates.size() == 2);
  CHECK(loaded[0].candidates[0].sid == Sid{{1, 2, 3}});
  CHECK(loaded[0].candidates[0].score == 0.9);
  CHECK(loaded[1].candidates.empty());
}
