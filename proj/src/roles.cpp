#include "rolegen/roles.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace rolegen {

namespace {

double lower_quantile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw std::logic_error("quantile of empty vector");
  const auto n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(p * n));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

}  // namespace

CategoryStats CategoryStats::build(const Catalog& catalog) {
  CategoryStats stats;
  for (const auto& item : catalog.items) {
    const std::string& c = item.leaf_category();
    stats.sales_[c].push_back(static_cast<double>(item.sales_30d));
    stats.prices_[c].push_back(static_cast<double>(item.price));
    stats.totals_[c] += static_cast<double>(item.sales_30d);
  }
  for (auto& [c, v] : stats.sales_) std::sort(v.begin(), v.end());
  for (auto& [c, v] : stats.prices_) std::sort(v.begin(), v.end());
  std::vector<double> totals;
  for (const auto& [c, t] : stats.totals_) totals.push_back(t);
  std::sort(totals.begin(), totals.end());
  if (!totals.empty()) {
    stats.global_median_total_ = lower_quantile(totals, 0.5);
  }
  return stats;
}

double CategoryStats::sales_quantile(const std::string& category,
                                     double p) const {
  auto it = sales_.find(category);
  if (it == sales_.end()) {
    throw std::out_of_range("unknown category: " + category);
  }
  return lower_quantile(it->second, p);
}

double CategoryStats::price_quantile(const std::string& category,
                                     double p) const {
  auto it = prices_.find(category);
  if (it == prices_.end()) {
    throw std::out_of_range("unknown category: " + category);
  }
  return lower_quantile(it->second, p);
}

double CategoryStats::category_total_sales(const std::string& category) const {
  auto it = totals_.find(category);
  if (it == totals_.end()) {
    throw std::out_of_range("unknown category: " + category);
  }
  return it->second;
}

InterestProfile compute_interest_profile(const UserSequence& seq,
                                         const Catalog& catalog,
                                         const BehaviorWeights& weights) {
  if (weights.view < 0 || weights.click < 0 || weights.purchase < 0) {
    throw std::invalid_argument("behavior weights must be >= 0");
  }
  std::map<std::string, double> scores;
  std::map<std::string, std::int64_t> first_ts;
  for (const auto& x : seq.interactions) {
    const std::string& c = catalog.at(x.item_id).leaf_category();
    scores[c] += weights.of(x.behavior);
    if (!first_ts.count(c)) first_ts[c] = x.ts;
  }
  InterestProfile profile;
  for (const auto& [c, s] : scores) profile.push_back({c, s});
  std::sort(profile.begin(), profile.end(),
            [&](const InterestEntry& a, const InterestEntry& b) {
              if (a.score != b.score) return a.score > b.score;
              if (first_ts[a.category] != first_ts[b.category]) {
                return first_ts[a.category] < first_ts[b.category];
              }
              return a.category < b.category;
            });
  return profile;
}

IntrinsicRole assign_intrinsic_roles(const Item& item,
                                     const CategoryStats& stats,
                                     const RoleThresholds& thresholds) {
  const std::string& c = item.leaf_category();
  if (!stats.has_category(c)) {
    throw std::out_of_range("unknown category: " + c);
  }
  IntrinsicRole role{};

  const auto sales = static_cast<double>(item.sales_30d);
  if (sales >= stats.sales_quantile(c, thresholds.pop_booming_pct)) {
    role.pop = Popularity::Booming;
  } else if (sales >= stats.sales_quantile(c, thresholds.pop_evergreen_pct)) {
    role.pop = Popularity::Evergreen;
  } else {
    role.pop = Popularity::LongTail;
  }

  role.repl = stats.category_total_sales(c) >= stats.global_median_total()
                  ? Replenishment::FMCG
                  : Replenishment::Durable;

  const auto price = static_cast<double>(item.price);
  if (price < stats.price_quantile(c, thresholds.cost_trial_pct)) {
    role.cost = DecisionCost::Trial;
  } else if (price <= stats.price_quantile(c, thresholds.cost_core_pct)) {
    role.cost = DecisionCost::Core;
  } else {
    role.cost = DecisionCost::Premium;
  }
  return role;
}

std::optional<ContextualRole> assign_contextual_role(
    const Item& item, const InterestProfile& profile,
    const CategoryGraph& graph) {
  const std::string& target = item.leaf_category();
  const InterestEntry* best = nullptr;
  std::optional<CategoryGraph::Edge> best_edge;
  // Profile order already encodes the tie-break (rank, then lexicographic),
  // so a strict > scan picks the right anchor.
  for (const auto& entry : profile) {
    auto edge = graph.query(entry.category, target);
    if (!edge) continue;
    if (!best || entry.score > best->score) {
      best = &entry;
      best_edge = edge;
    }
  }
  if (!best) return std::nullopt;
  return ContextualRole{best->category, best_edge->relation};
}

FunctionalRole assign_role(const Item& item, const CategoryStats& stats,
                           const RoleThresholds& thresholds,
                           const InterestProfile& profile,
                           const CategoryGraph& graph) {
  IntrinsicRole intrinsic = assign_intrinsic_roles(item, stats, thresholds);
  FunctionalRole role;
  role.pop = intrinsic.pop;
  role.repl = intrinsic.repl;
  role.cost = intrinsic.cost;
  role.rel = assign_contextual_role(item, profile, graph);
  return role;
}

std::vector<std::string> extract_key_items(
    const UserSequence& seq,
    const std::map<std::string, FunctionalRole>& roles_by_item,
    std::size_t max_key_items) {
  std::vector<std::string> keys;
  for (const auto& x : seq.interactions) {
    auto it = roles_by_item.find(x.item_id);
    if (it != roles_by_item.end() && it->second.rel &&
        std::find(keys.begin(), keys.end(), x.item_id) == keys.end()) {
      keys.push_back(x.item_id);
    }
  }
  // Most recent key items win when the cap bites.
  if (keys.size() > max_key_items) {
    keys.erase(keys.begin(),
               keys.begin() + static_cast<long>(keys.size() - max_key_items));
  }
  return keys;
}

RoleTrajectory build_role_trajectory(
    const std::vector<std::string>& key_items,
    const std::map<std::string, FunctionalRole>& roles_by_item) {
  RoleTrajectory traj;
  for (const auto& id : key_items) {
    auto it = roles_by_item.find(id);
    if (it == roles_by_item.end()) {
      throw std::invalid_argument("no role for key item: " + id);
    }
    if (!it->second.rel) {
      throw std::invalid_argument("key item lacks contextual role: " + id);
    }
    traj.entries.emplace_back(id, it->second);
  }
  return traj;
}

std::map<std::string, FunctionalRole> assign_sequence_roles(
    const UserSequence& seq, const Catalog& catalog,
    const CategoryStats& stats, const RoleThresholds& thresholds,
    const InterestProfile& profile, const CategoryGraph& graph) {
  std::map<std::string, FunctionalRole> roles;
  for (const auto& x : seq.interactions) {
    if (roles.count(x.item_id)) continue;
    roles.emplace(x.item_id, assign_role(catalog.at(x.item_id), stats,
                                         thresholds, profile, graph));
  }
  return roles;
}

void save_role_dump(const std::string& user_id,
                    const std::map<std::string, FunctionalRole>& roles,
                    std::ostream& out) {
  using nlohmann::json;
  for (const auto& [item_id, role] : roles) {
    json rec;
    rec["user_id"] = user_id;
    rec["item_id"] = item_id;
    rec["pop"] = to_string(role.pop);
    rec["repl"] = to_string(role.repl);
    rec["cost"] = to_string(role.cost);
    if (role.rel) {
      rec["rel"] = {{"anchor", role.rel->anchor_category},
                    {"relation", to_string(role.rel->relation)}};
    } else {
      rec["rel"] = nullptr;
    }
    out << rec.dump() << '\n';
  }
}

}  // namespace rolegen
