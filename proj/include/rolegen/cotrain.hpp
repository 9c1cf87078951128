#pragma once

#include "rolegen/backbone.hpp"
#include "rolegen/reasoner.hpp"
#include "rolegen/roles.hpp"

#include <iosfwd>

namespace rolegen {

// Closed reasoning-execution-feedback-reflection loop: counterfactual
// queries drive the mock reasoner, its candidates guide the backbone's beam
// search, observed feedback updates the oracle's conversion table and is
// replayed as reflection records.

enum class FeedbackSource { SyntheticEnv, LogReplay };

struct LoopConfig {
  int rounds = 1;
  int users_per_round = 200;
  int reasoner_beam = 25;
  int backbone_beam = 64;
  std::size_t queries_per_user = 3;
  std::size_t top_g = 10;  // global role classes mixed into the candidate set
  FeedbackSource feedback = FeedbackSource::SyntheticEnv;
  bool fine_tune_between_rounds = false;
  TrainConfig fine_tune;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FeedbackEvent {
  std::string user_id;
  std::vector<Sid> exposed;  // backbone top-k, rank order
  std::optional<std::string> ground_truth_item;
};

struct RoundReport {
  int round = 0;  // 1-based
  std::size_t users = 0;
  std::size_t queries = 0;
  std::size_t reasoner_candidates = 0;
  std::size_t feedback_with_truth = 0;
  std::size_t reflections = 0;
  double hit_at_1 = 0.0;
  double hit_at_10 = 0.0;
};

struct LoopInputs {
  Catalog catalog;
  CategoryGraph graph;
  std::map<std::string, Sid> sid_map;
  std::vector<UserSequence> histories;           // dormant cohort, target held out
  std::map<std::string, std::string> next_item;  // user -> true next item
  std::vector<UserSequence> train_sequences;
  RoleThresholds thresholds;
  BehaviorWeights weights;
};

struct LoopState {
  LoopInputs inputs;
  CategoryStats stats;
  Backbone* backbone = nullptr;  // not owned
  MockOracle oracle;
  GlobalRoleTable table;
  std::vector<PromptRecord> reflections;
  std::vector<FeedbackEvent> feedback_log;
  // Guided examples per completed round, for leak-free fine-tuning.
  std::vector<std::vector<BackboneExample>> round_examples;
  int rounds_done = 0;
};

// Seeds the conversion table from purchased-item role classes in the
// training data so the first round has a non-empty candidate set.
LoopState init_loop(LoopInputs inputs, Backbone* backbone);

RoundReport run_round(LoopState& state, const LoopConfig& cfg);

std::vector<RoundReport> run_loop(LoopState& state, const LoopConfig& cfg);

void save_round_reports(const std::vector<RoundReport>& reports,
                        std::ostream& out);
std::vector<RoundReport> load_round_reports(std::istream& in);

}  // namespace rolegen
