#pragma once

#include "rolegen/category_graph.hpp"
#include "rolegen/types.hpp"

#include <iosfwd>

namespace rolegen {

// Synthetic e-commerce world with planted roles and planted role-transition
// dynamics. Every acceptance experiment runs against a generated world, so
// generation is deterministic under seed and emits the same file formats the
// ingestion side reads.

struct WorldConfig {
  int n_categories = 50;
  int items_per_category = 40;
  int embedding_dim = 16;
  double cluster_spread = 0.15;

  struct EdgeSpec {
    int src = 0;  // category index
    int dst = 0;
    Relation relation = Relation::Complement;
    double weight = 1.0;
  };
  std::vector<EdgeSpec> edges;

  // Markov chain over role classes. Rows of transitions sum to 1.
  std::vector<RoleClass> states;
  std::vector<std::vector<double>> transitions;
  std::vector<double> initial;
  std::vector<std::size_t> terminal_states;  // purchase probability boosted

  double p_view = 0.70;
  double p_click = 0.25;
  double p_purchase = 0.05;
  double terminal_purchase_boost = 4.0;

  // Probability the next item follows the planted item-level chain instead
  // of a uniform draw from the eligible set.
  double chain_fidelity = 0.9;

  int steps_per_user = 20;
  int n_users = 5000;
  double dormant_fraction = 0.5;
  int dormancy_window_days = 30;
  std::int64_t now_ts = 1700000000;
  std::int64_t step_seconds = 6 * 3600;
  std::uint64_t seed = 1;

  void validate() const;

  // 50 categories, 2000 items, complement ring into durable categories.
  static WorldConfig desk_default();
};

struct WorldTruth {
  struct Step {
    std::size_t state = 0;  // index into WorldConfig::states
    std::string item_id;
  };
  std::map<std::string, FunctionalRole> item_roles;  // rel always absent
  std::map<std::string, std::vector<Step>> user_paths;
  std::vector<std::string> dormant_users;
  std::vector<RoleClass> states;
};

struct World {
  Catalog catalog;
  std::vector<UserSequence> sequences;
  CategoryGraph graph;
  WorldTruth truth;
};

World generate_world(const WorldConfig& cfg);

FunctionalRole world_role_oracle(const WorldTruth& truth,
                                 const std::string& item_id);

// Truth file: one row per item role, then one row per user path.
void save_truth(const WorldTruth& truth, std::ostream& out);
WorldTruth load_truth(std::istream& in);

}  // namespace rolegen
