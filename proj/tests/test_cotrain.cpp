#include "rolegen/cotrain.hpp"

#include "rolegen/codebook.hpp"
#include "rolegen/synthworld.hpp"

#include <doctest.h>

#include <set>
#include <sstream>

using namespace rolegen;

namespace {

struct LoopFixture {
  World world;
  std::map<std::string, Sid> sid_map;
  BackboneConfig bcfg;
  LoopInputs inputs;

  LoopFixture() {
    WorldConfig wcfg = WorldConfig::desk_default();
    wcfg.n_categories = 6;
    wcfg.items_per_category = 12;
    wcfg.n_users = 60;
    wcfg.steps_per_user = 12;
    wcfg.seed = 9;
    wcfg.edges.clear();
    wcfg.edges.push_back({0, 4, Relation::Complement, 2.0});
    wcfg.edges.push_back({1, 5, Relation::Complement, 2.0});
    world = generate_world(wcfg);

    Matrix embeddings(world.catalog.size(), world.catalog.embedding_dim());
    for (std::size_t i = 0; i < world.catalog.size(); ++i) {
      embeddings.row(static_cast<long>(i)) =
          world.catalog.items[i].embedding.transpose();
    }
    CodebookTrainConfig ccfg;
    ccfg.num_levels = 3;
    ccfg.level_sizes = {4};
    ccfg.iters = 10;
    ccfg.seed = 1;
    Codebook codebook = train_codebook(embeddings, ccfg);
    sid_map = assign_catalog(codebook, world.catalog).sids;

    bcfg.d_model = 16;
    bcfg.n_layers = 1;
    bcfg.n_heads = 2;
    bcfg.d_ff = 32;
    bcfg.level_sizes = {4, 4, 4};
    bcfg.max_ctx_items = 16;
    bcfg.seed = 2;

    inputs.catalog = world.catalog;
    inputs.graph = world.graph;
    inputs.sid_map = sid_map;
    inputs.train_sequences = world.sequences;

    std::set<std::string> dormant(world.truth.dormant_users.begin(),
                                  world.truth.dormant_users.end());
    for (const auto& seq : world.sequences) {
      if (!dormant.count(seq.user_id)) continue;
      if (seq.interactions.size() < 2) continue;
      UserSequence held = seq;
      Interaction target = held.interactions.back();
      held.interactions.pop_back();
      inputs.histories.push_back(held);
      inputs.next_item[seq.user_id] = target.item_id;
    }
  }

  LoopConfig config() const {
    LoopConfig cfg;
    cfg.rounds = 1;
    cfg.users_per_round = 10;
    cfg.reasoner_beam = 8;
    cfg.backbone_beam = 16;
    cfg.queries_per_user = 2;
    cfg.seed = 4;
    return cfg;
  }
};

}  // namespace

TEST_CASE("loop config validation") {
  LoopConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.rounds = 0;
  CHECK_THROWS(cfg.validate());
  cfg = LoopConfig{};
  cfg.queries_per_user = 0;
  CHECK_THROWS(cfg.validate());
  cfg = LoopConfig{};
  cfg.backbone_beam = 0;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("init seeds the conversion table from purchases") {
  LoopFixture fx;
  Backbone backbone(fx.bcfg);
  LoopState state = init_loop(fx.inputs, &backbone);

  CHECK_FALSE(state.table.counts().empty());
  long total = 0;
  std::size_t purchases = 0;
  for (const auto& [rc, count] : state.table.counts()) {
    CHECK_FALSE(rc.relation.has_value());
    total += count;
  }
  for (const auto& seq : fx.inputs.train_sequences) {
    for (const auto& x : seq.interactions) {
      if (x.behavior == Behavior::Purchase) ++purchases;
    }
  }
  CHECK(total == static_cast<long>(purchases));
}

TEST_CASE("a round fans out queries and records feedback per user") {
  LoopFixture fx;
  Backbone backbone(fx.bcfg);
  LoopState state = init_loop(fx.inputs, &backbone);
  LoopConfig cfg = fx.config();

  RoundReport report = run_round(state, cfg);
  CHECK(report.round == 1);
  CHECK(report.users == 10);
  CHECK(report.queries == 10 * cfg.queries_per_user);
  CHECK(report.reflections == 10);
  // Synthetic environment: ground truth is always observable.
  CHECK(report.feedback_with_truth == 10);
  CHECK(state.feedback_log.size() == 10);
  CHECK(state.reflections.size() == 10);
  REQUIRE(state.round_examples.size() == 1);
  CHECK(state.round_examples[0].size() == 10);
  CHECK(state.rounds_done == 1);

  for (const auto& event : state.feedback_log) {
    CHECK(event.exposed.size() <= static_cast<std::size_t>(cfg.backbone_beam));
    REQUIRE(event.ground_truth_item.has_value());
    CHECK(fx.inputs.next_item.at(event.user_id) == *event.ground_truth_item);
  }
  for (const auto& rec : state.reflections) {
    CHECK(rec.task == TaskKind::Reflection);
  }
  for (const auto& ex : state.round_examples[0]) {
    CHECK(ex.guidance.present);
  }

  // Oracle recount: each truth item added one conversion to the table.
  Backbone backbone2(fx.bcfg);
  LoopState fresh = init_loop(fx.inputs, &backbone2);
  long before = 0, after = 0;
  for (const auto& [rc, c] : fresh.table.counts()) before += c;
  for (const auto& [rc, c] : state.table.counts()) after += c;
  CHECK(after == before + 10);
}

TEST_CASE("log replay only reveals truths the beam exposed") {
  LoopFixture fx;
  Backbone backbone(fx.bcfg);
  LoopState state = init_loop(fx.inputs, &backbone);
  LoopConfig cfg = fx.config();
  cfg.feedback = FeedbackSource::LogReplay;

  RoundReport report = run_round(state, cfg);
  CHECK(report.users == 10);
  std::size_t with_truth = 0;
  for (const auto& event : state.feedback_log) {
    const Sid truth = fx.sid_map.at(fx.inputs.next_item.at(event.user_id));
    const bool exposed = std::find(event.exposed.begin(), event.exposed.end(),
                                   truth) != event.exposed.end();
    CHECK(event.ground_truth_item.has_value() == exposed);
    if (exposed) ++with_truth;
  }
  CHECK(report.feedback_with_truth == with_truth);
  CHECK(report.reflections == with_truth);
  CHECK(state.reflections.size() == with_truth);
}

TEST_CASE("rounds are deterministic under seed") {
  LoopFixture fx;
  LoopConfig cfg = fx.config();
  cfg.rounds = 2;
  cfg.fine_tune_between_rounds = true;
  cfg.fine_tune.epochs = 1;
  cfg.fine_tune.batch_size = 8;
  cfg.fine_tune.peak_lr = 1e-3;

  Backbone a(fx.bcfg);
  LoopState sa = init_loop(fx.inputs, &a);
  auto ra = run_loop(sa, cfg);

  Backbone b(fx.bcfg);
  LoopState sb = init_loop(fx.inputs, &b);
  auto rb = run_loop(sb, cfg);

  REQUIRE(ra.size() == 2);
  REQUIRE(rb.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(ra[i].hit_at_1 == rb[i].hit_at_1);
    CHECK(ra[i].hit_at_10 == rb[i].hit_at_10);
    CHECK(ra[i].queries == rb[i].queries);
    CHECK(ra[i].reasoner_candidates == rb[i].reasoner_candidates);
  }
  REQUIRE(sa.feedback_log.size() == sb.feedback_log.size());
  for (std::size_t i = 0; i < sa.feedback_log.size(); ++i) {
    CHECK(sa.feedback_log[i].exposed == sb.feedback_log[i].exposed);
  }
}

TEST_CASE("run_loop with one round matches a single run_round") {
  LoopFixture fx;
  LoopConfig cfg = fx.config();

  Backbone a(fx.bcfg);
  LoopState sa = init_loop(fx.inputs, &a);
  auto reports = run_loop(sa, cfg);
  REQUIRE(reports.size() == 1);

  Backbone b(fx.bcfg);
  LoopState sb = init_loop(fx.inputs, &b);
  RoundReport single = run_round(sb, cfg);

  CHECK(reports[0].hit_at_1 == single.hit_at_1);
  CHECK(reports[0].hit_at_10 == single.hit_at_10);
  CHECK(reports[0].queries == single.queries);
  CHECK(reports[0].feedback_with_truth == single.feedback_with_truth);
}

TEST_CASE("round reports round-trip through their file form") {
  std::vector<RoundReport> reports(2);
  reports[0].round = 1;
  reports[0].users = 10;
  reports[0].queries = 30;
  reports[0].reasoner_candidates = 55;
  reports[0].feedback_with_truth = 9;
  reports[0].reflections = 9;
  reports[0].hit_at_1 = 0.1;
  reports[0].hit_at_10 = 0.4;
  reports[1].round = 2;
  reports[1].hit_at_10 = 0.5;

  std::stringstream buf;
  save_round_reports(reports, buf);
  auto loaded = load_round_reports(buf);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].round == 1);
  CHECK(loaded[0].users == 10);
  CHECK(loaded[0].queries == 30);
  CHECK(loaded[0].reasoner_candidates == 55);
  CHECK(loaded[0].feedback_with_truth == 9);
  CHECK(loaded[0].reflections == 9);
  CHECK(loaded[0].hit_at_1 == 0.1);
  CHECK(loaded[0].hit_at_10 == 0.4);
  CHECK(loaded[1].round == 2);
  CHECK(loaded[1].hit_at_10 == 0.5);
}

TEST_CASE("an empty cohort is rejected") {
  LoopFixture fx;
  fx.inputs.histories.clear();
  Backbone backbone(fx.bcfg);
  LoopState state = init_loop(fx.inputs, &backbone);
  LoopConfig cfg = fx.config();
  CHECK_THROWS_WITH(run_round(state, cfg), "empty dormant cohort");
}
