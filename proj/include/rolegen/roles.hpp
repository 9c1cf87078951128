#pragma once

#include "rolegen/category_graph.hpp"
#include "rolegen/types.hpp"

#include <iosfwd>
#include <map>

namespace rolegen {

struct InterestEntry {
  std::string category;
  double score;
};

// Categories ranked by behavior-weighted interaction score, descending.
using InterestProfile = std::vector<InterestEntry>;

struct BehaviorWeights {
  double view = 1.0;
  double click = 2.0;
  double purchase = 4.0;

  double of(Behavior b) const {
    switch (b) {
      case Behavior::View: return view;
      case Behavior::Click: return click;
      case Behavior::Purchase: return purchase;
    }
    throw std::logic_error("bad Behavior");
  }
};

struct RoleThresholds {
  double pop_booming_pct = 0.90;   // sales >= Q90 of category sales
  double pop_evergreen_pct = 0.40; // sales >= Q40
  double cost_trial_pct = 0.25;    // price <  Q25 of category prices
  double cost_core_pct = 0.80;     // price <= Q80
  std::size_t max_key_items = 16;
};

// Per-category sales and price distributions plus the global median of
// category sales totals, the normalizers behind the intrinsic roles.
class CategoryStats {
 public:
  static CategoryStats build(const Catalog& catalog);

  // Lower inclusive quantile of the category's per-item sales / prices:
  // sorted ascending, element at rank ceil(p*n).
  double sales_quantile(const std::string& category, double p) const;
  double price_quantile(const std::string& category, double p) const;
  double category_total_sales(const std::string& category) const;
  double global_median_total() const { return global_median_total_; }
  bool has_category(const std::string& category) const {
    return sales_.count(category) > 0;
  }

 private:
  std::map<std::string, std::vector<double>> sales_;   // sorted ascending
  std::map<std::string, std::vector<double>> prices_;  // sorted ascending
  std::map<std::string, double> totals_;
  double global_median_total_ = 0.0;
};

// Score_u(c) summed with the behavior weights over interactions whose item
// has leaf category c; descending by score, ties by earliest first
// interaction then lexicographic category.
InterestProfile compute_interest_profile(const UserSequence& seq,
                                         const Catalog& catalog,
                                         const BehaviorWeights& weights);

struct IntrinsicRole {
  Popularity pop;
  Replenishment repl;
  DecisionCost cost;
};

IntrinsicRole assign_intrinsic_roles(const Item& item,
                                     const CategoryStats& stats,
                                     const RoleThresholds& thresholds);

// Eq.-style dominant-relation argmax over the profile; ties break toward the
// higher-ranked profile entry, then lexicographic category.
std::optional<ContextualRole> assign_contextual_role(const Item& item,
                                                     const InterestProfile& profile,
                                                     const CategoryGraph& graph);

FunctionalRole assign_role(const Item& item, const CategoryStats& stats,
                           const RoleThresholds& thresholds,
                           const InterestProfile& profile,
                           const CategoryGraph& graph);

// Items of the sequence whose contextual role is present, original order,
// capped to the most recent max_key_items.
std::vector<std::string> extract_key_items(
    const UserSequence& seq,
    const std::map<std::string, FunctionalRole>& roles_by_item,
    std::size_t max_key_items);

RoleTrajectory build_role_trajectory(
    const std::vector<std::string>& key_items,
    const std::map<std::string, FunctionalRole>& roles_by_item);

// Roles of every item of a sequence against that sequence's profile.
std::map<std::string, FunctionalRole> assign_sequence_roles(
    const UserSequence& seq, const Catalog& catalog,
    const CategoryStats& stats, const RoleThresholds& thresholds,
    const InterestProfile& profile, const CategoryGraph& graph);

// Line-delimited role dump for inspection and prompt building.
void save_role_dump(const std::string& user_id,
                    const std::map<std::string, FunctionalRole>& roles,
                    std::ostream& out);

}  // namespace rolegen
