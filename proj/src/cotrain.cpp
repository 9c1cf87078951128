#include "rolegen/cotrain.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>

namespace rolegen {

using nlohmann::json;

void LoopConfig::validate() const {
  if (rounds < 1) throw std::invalid_argument("rounds must be >= 1");
  if (users_per_round < 1) {
    throw std::invalid_argument("users_per_round must be >= 1");
  }
  if (reasoner_beam < 1 || backbone_beam < 1) {
    throw std::invalid_argument("beam widths must be >= 1");
  }
  if (queries_per_user < 1) {
    throw std::invalid_argument("queries_per_user must be >= 1");
  }
}

LoopState init_loop(LoopInputs inputs, Backbone* backbone) {
  if (!backbone) throw std::invalid_argument("backbone is null");
  LoopState state;
  state.inputs = std::move(inputs);
  state.stats = CategoryStats::build(state.inputs.catalog);
  state.backbone = backbone;
  state.oracle = MockOracle::build(state.inputs.catalog, state.stats,
                                   state.inputs.thresholds, state.inputs.graph,
                                   state.inputs.sid_map,
                                   state.inputs.train_sequences);

  // Conversion priors: role classes of purchased items, intrinsic fields
  // only (the anchor is user-specific).
  for (const auto& seq : state.inputs.train_sequences) {
    for (const auto& x : seq.interactions) {
      if (x.behavior != Behavior::Purchase) continue;
      const Item* item = state.inputs.catalog.find(x.item_id);
      if (!item) continue;
      IntrinsicRole ir =
          assign_intrinsic_roles(*item, state.stats, state.inputs.thresholds);
      state.table.add(RoleClass{ir.pop, ir.repl, ir.cost, {}});
    }
  }
  return state;
}

namespace {

std::vector<Sid> exposed_sids(const std::vector<BeamCandidate>& beam) {
  std::vector<Sid> out;
  out.reserve(beam.size());
  for (const auto& c : beam) out.push_back(c.sid);
  return out;
}

bool hit_within(const std::vector<Sid>& exposed, const Sid& truth,
                std::size_t k) {
  for (std::size_t i = 0; i < exposed.size() && i < k; ++i) {
    if (exposed[i] == truth) return true;
  }
  return false;
}

}  // namespace

RoundReport run_round(LoopState& state, const LoopConfig& cfg) {
  cfg.validate();
  if (state.inputs.histories.empty()) {
    throw std::invalid_argument("empty dormant cohort");
  }

  const int round = state.rounds_done + 1;
  RoundReport report;
  report.round = round;

  // Leak-free fine-tuning: only examples from rounds < this one.
  if (cfg.fine_tune_between_rounds && round > 1) {
    std::vector<BackboneExample> past;
    for (const auto& block : state.round_examples) {
      past.insert(past.end(), block.begin(), block.end());
    }
    if (!past.empty()) {
      TrainConfig tcfg = cfg.fine_tune;
      tcfg.shuffle_seed = cfg.seed + static_cast<std::uint64_t>(round);
      state.backbone->train(past, tcfg);
    }
  }

  const std::size_t cohort = std::min<std::size_t>(
      state.inputs.histories.size(), static_cast<std::size_t>(cfg.users_per_round));
  const BackboneConfig& bcfg = state.backbone->config();

  std::vector<BackboneExample> new_examples;
  std::size_t with_truth = 0, hit1 = 0, hit10 = 0;

  for (std::size_t ui = 0; ui < cohort; ++ui) {
    const UserSequence& seq = state.inputs.histories[ui];
    InterestProfile profile =
        compute_interest_profile(seq, state.inputs.catalog, state.inputs.weights);
    auto roles = assign_sequence_roles(seq, state.inputs.catalog, state.stats,
                                       state.inputs.thresholds, profile,
                                       state.inputs.graph);
    auto key_items =
        extract_key_items(seq, roles, state.inputs.thresholds.max_key_items);
    RoleTrajectory trajectory = build_role_trajectory(key_items, roles);

    auto candidate_roles =
        build_candidate_roles(trajectory, state.table, cfg.top_g);
    if (candidate_roles.empty()) continue;

    std::uint64_t user_seed =
        cfg.seed + 0x9E3779B97F4A7C15ULL *
                       (static_cast<std::uint64_t>(round) * 100003ULL + ui + 1);
    auto queries = sample_counterfactuals(
        seq, profile, trajectory, state.inputs.sid_map, candidate_roles,
        state.table, cfg.queries_per_user, user_seed);
    report.queries += queries.size();

    std::vector<ScoredSid> reasoner_candidates;
    std::vector<Sid> guidance_sids;
    for (const auto& q : queries) {
      ReasonerOutput out = mock_reason(q, state.oracle, cfg.reasoner_beam);
      for (const auto& c : out.candidates) {
        if (std::find(guidance_sids.begin(), guidance_sids.end(), c.sid) ==
            guidance_sids.end()) {
          guidance_sids.push_back(c.sid);
          reasoner_candidates.push_back(c);
        }
      }
    }
    report.reasoner_candidates += reasoner_candidates.size();

    BackboneExample ex;
    ex.user_bucket = hash_user_bucket(seq.user_id, bcfg.user_buckets);
    for (const auto& x : seq.interactions) {
      auto it = state.inputs.sid_map.find(x.item_id);
      if (it != state.inputs.sid_map.end()) ex.history.push_back(it->second);
    }
    if (static_cast<int>(ex.history.size()) > bcfg.max_ctx_items) {
      ex.history.erase(ex.history.begin(),
                       ex.history.end() - bcfg.max_ctx_items);
    }
    ex.guidance = build_guidance(guidance_sids, bcfg);

    ContextCache cache = state.backbone->encode_context(ex);
    auto beam = state.backbone->beam_search(cache, cfg.backbone_beam);

    FeedbackEvent event;
    event.user_id = seq.user_id;
    event.exposed = exposed_sids(beam);

    auto next_it = state.inputs.next_item.find(seq.user_id);
    if (next_it != state.inputs.next_item.end()) {
      const std::string& gt = next_it->second;
      const Sid& gt_sid = state.inputs.sid_map.at(gt);
      const bool exposed =
          hit_within(event.exposed, gt_sid, event.exposed.size());
      if (cfg.feedback == FeedbackSource::SyntheticEnv || exposed) {
        event.ground_truth_item = gt;
      }
    }

    if (event.ground_truth_item) {
      const std::string& gt = *event.ground_truth_item;
      const Sid& gt_sid = state.inputs.sid_map.at(gt);
      ++with_truth;
      if (hit_within(event.exposed, gt_sid, 1)) ++hit1;
      if (hit_within(event.exposed, gt_sid, 10)) ++hit10;

      std::vector<ScoredSid> backbone_candidates;
      for (const auto& c : beam) {
        backbone_candidates.push_back(ScoredSid{c.sid, c.logp});
      }
      state.reflections.push_back(
          build_reflection_record(seq, state.inputs.sid_map,
                                  reasoner_candidates, backbone_candidates, gt));
      ++report.reflections;

      FunctionalRole gt_role =
          assign_role(state.inputs.catalog.at(gt), state.stats,
                      state.inputs.thresholds, profile, state.inputs.graph);
      state.table.add(role_class_of(gt_role));
      state.oracle.add_feedback(gt);

      BackboneExample guided = ex;
      guided.target = gt_sid;
      new_examples.push_back(std::move(guided));
    }

    state.feedback_log.push_back(std::move(event));
    ++report.users;
  }

  report.feedback_with_truth = with_truth;
  if (with_truth > 0) {
    report.hit_at_1 = static_cast<double>(hit1) / static_cast<double>(with_truth);
    report.hit_at_10 =
        static_cast<double>(hit10) / static_cast<double>(with_truth);
  }
  state.round_examples.push_back(std::move(new_examples));
  ++state.rounds_done;
  return report;
}

std::vector<RoundReport> run_loop(LoopState& state, const LoopConfig& cfg) {
  cfg.validate();
  std::vector<RoundReport> reports;
  for (int r = 0; r < cfg.rounds; ++r) reports.push_back(run_round(state, cfg));
  return reports;
}

void save_round_reports(const std::vector<RoundReport>& reports,
                        std::ostream& out) {
  for (const auto& r : reports) {
    json j;
    j["round"] = r.round;
    j["users"] = r.users;
    j["queries"] = r.queries;
    j["reasoner_candidates"] = r.reasoner_candidates;
    j["feedback_with_truth"] = r.feedback_with_truth;
    j["reflections"] = r.reflections;
    j["hit_at_1"] = r.hit_at_1;
    j["hit_at_10"] = r.hit_at_10;
    out << j.dump() << '\n';
  }
}

std::vector<RoundReport> load_round_reports(std::istream& in) {
  std::vector<RoundReport> reports;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    RoundReport r;
    r.round = j.at("round").get<int>();
    r.users = j.at("users").get<std::size_t>();
    r.queries = j.at("queries").get<std::size_t>();
    r.reasoner_candidates = j.at("reasoner_candidates").get<std::size_t>();
    r.feedback_with_truth = j.at("feedback_with_truth").get<std::size_t>();
    r.reflections = j.at("reflections").get<std::size_t>();
    r.hit_at_1 = j.at("hit_at_1").get<double>();
    r.hit_at_10 = j.at("hit_at_10").get<double>();
    reports.push_back(r);
  }
  return reports;
}

}  // namespace rolegen
