#include "rolegen/synthworld.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace rolegen {

using nlohmann::json;

namespace {

double unit_draw(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
}

std::size_t pick(const std::vector<double>& dist, std::mt19937_64& rng) {
  double r = unit_draw(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    acc += dist[i];
    if (r <= acc) return i;
  }
  return dist.size() - 1;
}

std::string pad5(int n) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05d", n);
  return buf;
}

struct Triple {
  Popularity pop;
  Replenishment repl;
  DecisionCost cost;
  bool operator<(const Triple& o) const {
    return std::tie(pop, repl, cost) < std::tie(o.pop, o.repl, o.cost);
  }
};

// Lower inclusive quantile rank over n sorted values, 1-based.
int quantile_rank(double p, int n) {
  int r = static_cast<int>(std::ceil(p * n));
  return std::clamp(r, 1, n);
}

}  // namespace

void WorldConfig::validate() const {
  if (n_categories < 1) throw std::invalid_argument("n_categories must be >= 1");
  if (items_per_category < 1) {
    throw std::invalid_argument("items_per_category must be >= 1");
  }
  if (embedding_dim < 1) throw std::invalid_argument("embedding_dim must be >= 1");
  if (cluster_spread <= 0.0) {
    throw std::invalid_argument("cluster_spread must be > 0");
  }
  if (states.empty()) throw std::invalid_argument("states must be non-empty");
  if (transitions.size() != states.size()) {
    throw std::invalid_argument("transitions must have one row per state");
  }
  for (const auto& row : transitions) {
    if (row.size() != states.size()) {
      throw std::invalid_argument("transition row width mismatch");
    }
    double sum = 0.0;
    for (double p : row) {
      if (p < 0.0) throw std::invalid_argument("negative transition mass");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw std::invalid_argument("transition row does not sum to 1");
    }
  }
  if (initial.size() != states.size()) {
    throw std::invalid_argument("initial distribution width mismatch");
  }
  double init_sum = 0.0;
  for (double p : initial) {
    if (p < 0.0) throw std::invalid_argument("negative initial mass");
    init_sum += p;
  }
  if (std::abs(init_sum - 1.0) > 1e-9) {
    throw std::invalid_argument("initial distribution does not sum to 1");
  }
  for (std::size_t s : terminal_states) {
    if (s >= states.size()) throw std::invalid_argument("terminal state out of range");
  }
  for (const auto& e : edges) {
    if (e.src < 0 || e.src >= n_categories || e.dst < 0 ||
        e.dst >= n_categories) {
      throw std::invalid_argument("edge references undeclared category");
    }
    if (e.src == e.dst) throw std::invalid_argument("edge is a self-loop");
    if (e.weight <= 0.0) throw std::invalid_argument("edge weight must be > 0");
  }
  if (p_view < 0 || p_click < 0 || p_purchase < 0 ||
      std::abs(p_view + p_click + p_purchase - 1.0) > 1e-9) {
    throw std::invalid_argument("behavior probabilities must sum to 1");
  }
  if (terminal_purchase_boost < 1.0) {
    throw std::invalid_argument("terminal_purchase_boost must be >= 1");
  }
  if (chain_fidelity < 0.0 || chain_fidelity > 1.0) {
    throw std::invalid_argument("chain_fidelity must be in [0,1]");
  }
  if (steps_per_user < 2) throw std::invalid_argument("steps_per_user must be >= 2");
  if (n_users < 1) throw std::invalid_argument("n_users must be >= 1");
  if (dormant_fraction < 0.0 || dormant_fraction > 1.0) {
    throw std::invalid_argument("dormant_fraction must be in [0,1]");
  }
  if (dormancy_window_days < 1 || step_seconds < 1) {
    throw std::invalid_argument("bad time configuration");
  }
}

WorldConfig WorldConfig::desk_default() {
  WorldConfig cfg;
  // Categories n_fmcg.. are durable; see generate_world's replenishment split.
  int n_durable = (cfg.n_categories + 1) / 2 - 1;
  int n_fmcg = cfg.n_categories - n_durable;

  for (int i = 0; i < n_fmcg; ++i) {
    cfg.edges.push_back({i, n_fmcg + i % n_durable, Relation::Complement, 2.0});
    if (n_fmcg > 1) {
      cfg.edges.push_back({i, (i + 1) % n_fmcg, Relation::Substitute, 1.5});
    }
  }
  for (int j = 0; j < n_durable; ++j) {
    cfg.edges.push_back(
        {n_fmcg + j, j % n_fmcg, Relation::AudienceOverlap, 0.5});
  }

  // Daily necessity -> habitual staple -> scenario complement -> high value.
  cfg.states = {
      {Popularity::LongTail, Replenishment::FMCG, DecisionCost::Trial, {}},
      {Popularity::Evergreen, Replenishment::FMCG, DecisionCost::Core, {}},
      {Popularity::Evergreen, Replenishment::Durable, DecisionCost::Core,
       Relation::Complement},
      {Popularity::Booming, Replenishment::Durable, DecisionCost::Premium,
       Relation::Complement},
  };
  cfg.transitions = {
      {0.20, 0.50, 0.25, 0.05},
      {0.10, 0.30, 0.45, 0.15},
      {0.05, 0.15, 0.30, 0.50},
      {0.40, 0.30, 0.20, 0.10},
  };
  cfg.initial = {0.55, 0.30, 0.10, 0.05};
  cfg.terminal_states = {3};
  return cfg;
}

World generate_world(const WorldConfig& cfg) {
  cfg.validate();
  World world;

  const int n_cat = cfg.n_categories;
  const int per_cat = cfg.items_per_category;
  const int n_durable = (n_cat + 1) / 2 - 1;
  const int n_fmcg = n_cat - n_durable;

  std::vector<std::string> leaves(n_cat);
  for (int c = 0; c < n_cat; ++c) leaves[c] = "C" + pad5(c).substr(2);

  std::mt19937_64 world_rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Per-category embedding centers.
  std::vector<Vector> centers(n_cat);
  for (int c = 0; c < n_cat; ++c) {
    centers[c] = Vector(cfg.embedding_dim);
    for (int d = 0; d < cfg.embedding_dim; ++d) centers[c][d] = gauss(world_rng);
  }

  // Items: one shuffled rank per item drives both sales and price so every
  // (pop, cost) corner used by the default chain is populated per category.
  const int booming_rank = quantile_rank(0.90, per_cat);
  const int evergreen_rank = quantile_rank(0.40, per_cat);
  const int trial_rank = quantile_rank(0.25, per_cat);
  const int core_rank = quantile_rank(0.80, per_cat);

  std::map<Triple, std::vector<std::size_t>> global_pool;
  std::vector<std::map<Triple, std::vector<std::size_t>>> cat_pool(n_cat);
  std::vector<int> item_category;

  int item_counter = 0;
  for (int c = 0; c < n_cat; ++c) {
    const bool fmcg = c < n_fmcg;
    std::vector<int> ranks(per_cat);
    for (int i = 0; i < per_cat; ++i) ranks[i] = i + 1;
    for (int i = per_cat - 1; i > 0; --i) {
      std::swap(ranks[i], ranks[world_rng() % static_cast<std::size_t>(i + 1)]);
    }
    for (int i = 0; i < per_cat; ++i) {
      const int r = ranks[i];
      Item item;
      item.item_id = "I" + pad5(item_counter);
      item.title = leaves[c] + " product " + pad5(item_counter);
      item.category = {"Goods", fmcg ? "Consumable" : "Hardware", leaves[c]};
      item.sales_30d = (fmcg ? 1000 : 10) + 10 * r +
                       static_cast<std::int64_t>(world_rng() % 10);
      item.orders_total = item.sales_30d;
      item.price = 100 + 50 * r + static_cast<std::int64_t>(world_rng() % 50);
      item.embedding = centers[c];
      for (int d = 0; d < cfg.embedding_dim; ++d) {
        item.embedding[d] += cfg.cluster_spread * gauss(world_rng);
      }

      FunctionalRole role;
      role.pop = r >= booming_rank ? Popularity::Booming
                 : r >= evergreen_rank ? Popularity::Evergreen
                                       : Popularity::LongTail;
      role.repl = fmcg ? Replenishment::FMCG : Replenishment::Durable;
      role.cost = r < trial_rank ? DecisionCost::Trial
                  : r <= core_rank ? DecisionCost::Core
                                   : DecisionCost::Premium;
      world.truth.item_roles[item.item_id] = role;

      Triple triple{role.pop, role.repl, role.cost};
      std::size_t idx = world.catalog.size();
      global_pool[triple].push_back(idx);
      cat_pool[c][triple].push_back(idx);
      item_category.push_back(c);
      world.catalog.add(std::move(item));
      ++item_counter;
    }
  }

  for (const auto& e : cfg.edges) {
    world.graph.add_edge(leaves[e.src], leaves[e.dst], e.relation, e.weight);
  }

  // Relation reachability: dst categories per (src, relation) and globally.
  std::map<std::pair<int, Relation>, std::vector<int>> reach;
  std::map<Relation, std::vector<int>> any_dst;
  for (const auto& e : cfg.edges) {
    reach[{e.src, e.relation}].push_back(e.dst);
    any_dst[e.relation].push_back(e.dst);
  }

  // Feasibility: every state must have a non-empty global pool.
  for (const auto& rc : cfg.states) {
    Triple triple{rc.pop, rc.repl, rc.cost};
    bool ok = false;
    if (!rc.relation) {
      ok = global_pool.count(triple) > 0;
    } else {
      for (int dst : any_dst[*rc.relation]) {
        if (cat_pool[dst].count(triple)) {
          ok = true;
          break;
        }
      }
    }
    if (!ok) {
      throw std::invalid_argument("role class " + role_class_to_string(rc) +
                                  ": no eligible items");
    }
  }

  world.truth.states = cfg.states;
  const std::int64_t window =
      static_cast<std::int64_t>(cfg.dormancy_window_days) * 86400;
  const int n_dormant =
      static_cast<int>(std::lround(cfg.dormant_fraction * cfg.n_users));

  std::vector<std::size_t> terminal_mask(cfg.states.size(), 0);
  for (std::size_t s : cfg.terminal_states) terminal_mask[s] = 1;

  for (int u = 0; u < cfg.n_users; ++u) {
    std::mt19937_64 rng(cfg.seed + 0x9E3779B97F4A7C15ULL *
                                       (static_cast<std::uint64_t>(u) + 1));
    const bool dormant = u < n_dormant;
    const int home = static_cast<int>(rng() % static_cast<std::size_t>(n_fmcg));

    UserSequence seq;
    seq.user_id = "U" + pad5(u);
    seq.profile_text = "Shopper focused on " + leaves[home];
    std::vector<WorldTruth::Step> path;

    int anchor = home;
    std::size_t state = pick(cfg.initial, rng);
    std::size_t prev_item = 0;
    bool has_prev = false;
    bool purchased_in_window = false;

    for (int t = 0; t < cfg.steps_per_user; ++t) {
      const RoleClass& rc = cfg.states[state];
      const Triple triple{rc.pop, rc.repl, rc.cost};

      const std::vector<std::size_t>* pool = nullptr;
      std::vector<std::size_t> merged;
      if (rc.relation) {
        auto it = reach.find({anchor, *rc.relation});
        const std::vector<int>& dsts =
            it != reach.end() ? it->second : any_dst[*rc.relation];
        for (int dst : dsts) {
          auto pit = cat_pool[dst].find(triple);
          if (pit != cat_pool[dst].end()) {
            merged.insert(merged.end(), pit->second.begin(), pit->second.end());
          }
        }
        if (merged.empty()) {
          for (int dst : any_dst[*rc.relation]) {
            auto pit = cat_pool[dst].find(triple);
            if (pit != cat_pool[dst].end()) {
              merged.insert(merged.end(), pit->second.begin(),
                            pit->second.end());
            }
          }
        }
        pool = &merged;
      } else {
        if (cat_pool[anchor].count(triple)) {
          pool = &cat_pool[anchor].at(triple);
        } else if (cat_pool[home].count(triple)) {
          pool = &cat_pool[home].at(triple);
        } else {
          pool = &global_pool.at(triple);
        }
      }

      std::size_t chosen;
      if (has_prev && unit_draw(rng) < cfg.chain_fidelity) {
        chosen = (*pool)[(prev_item * 2654435761ULL) % pool->size()];
      } else {
        chosen = (*pool)[rng() % pool->size()];
      }

      double pp = cfg.p_purchase *
                  (terminal_mask[state] ? cfg.terminal_purchase_boost : 1.0);
      double norm = cfg.p_view + cfg.p_click + pp;
      std::size_t b =
          pick({cfg.p_view / norm, cfg.p_click / norm, pp / norm}, rng);
      Behavior behavior = b == 0   ? Behavior::View
                          : b == 1 ? Behavior::Click
                                   : Behavior::Purchase;

      Interaction x;
      x.item_id = world.catalog.items[chosen].item_id;
      x.ts = cfg.now_ts -
             static_cast<std::int64_t>(cfg.steps_per_user - 1 - t) *
                 cfg.step_seconds;
      const bool in_window = x.ts >= cfg.now_ts - window;
      if (dormant && behavior == Behavior::Purchase && in_window) {
        behavior = Behavior::Click;
      }
      if (behavior == Behavior::Purchase && in_window) {
        purchased_in_window = true;
      }
      x.behavior = behavior;
      seq.interactions.push_back(std::move(x));
      path.push_back({state, world.catalog.items[chosen].item_id});

      anchor = item_category[chosen];
      prev_item = chosen;
      has_prev = true;
      state = pick(cfg.transitions[state], rng);
    }

    if (!dormant && !purchased_in_window) {
      seq.interactions.back().behavior = Behavior::Purchase;
    }
    if (dormant) world.truth.dormant_users.push_back(seq.user_id);
    world.truth.user_paths[seq.user_id] = std::move(path);
    world.sequences.push_back(std::move(seq));
  }

  return world;
}

FunctionalRole world_role_oracle(const WorldTruth& truth,
                                 const std::string& item_id) {
  auto it = truth.item_roles.find(item_id);
  if (it == truth.item_roles.end()) {
    throw std::invalid_argument("unknown item: " + item_id);
  }
  return it->second;
}

void save_truth(const WorldTruth& truth, std::ostream& out) {
  {
    json j;
    j["type"] = "states";
    j["states"] = json::array();
    for (const auto& rc : truth.states) {
      j["states"].push_back(role_class_to_string(rc));
    }
    out << j.dump() << '\n';
  }
  for (const auto& [item_id, role] : truth.item_roles) {
    json j;
    j["type"] = "item";
    j["item_id"] = item_id;
    j["role"] = role_to_string(role);
    out << j.dump() << '\n';
  }
  std::vector<std::string> dormant(truth.dormant_users);
  std::sort(dormant.begin(), dormant.end());
  for (const auto& [user_id, path] : truth.user_paths) {
    json j;
    j["type"] = "user";
    j["user_id"] = user_id;
    j["dormant"] =
        std::binary_search(dormant.begin(), dormant.end(), user_id);
    j["path"] = json::array();
    for (const auto& step : path) {
      j["path"].push_back({{"state", step.state}, {"item", step.item_id}});
    }
    out << j.dump() << '\n';
  }
}

WorldTruth load_truth(std::istream& in) {
  WorldTruth truth;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    const std::string type = j.at("type").get<std::string>();
    if (type == "states") {
      for (const auto& s : j.at("states")) {
        truth.states.push_back(role_class_from_string(s.get<std::string>()));
      }
    } else if (type == "item") {
      truth.item_roles[j.at("item_id").get<std::string>()] =
          role_from_string(j.at("role").get<std::string>());
    } else if (type == "user") {
      const std::string user_id = j.at("user_id").get<std::string>();
      if (j.at("dormant").get<bool>()) {
        truth.dormant_users.push_back(user_id);
      }
      std::vector<WorldTruth::Step> path;
      for (const auto& step : j.at("path")) {
        path.push_back({step.at("state").get<std::size_t>(),
                        step.at("item").get<std::string>()});
      }
      truth.user_paths[user_id] = std::move(path);
    } else {
      throw std::invalid_argument("unknown truth row type: " + type);
    }
  }
  return truth;
}

}  // namespace rolegen
