#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rolegen {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Interaction log
// ---------------------------------------------------------------------------

enum class Behavior { View, Click, Purchase };

const char* to_string(Behavior b);
Behavior behavior_from_string(const std::string& s);

struct Interaction {
  std::string item_id;
  Behavior behavior = Behavior::View;
  std::int64_t ts = 0;  // seconds since epoch, UTC
};

struct UserSequence {
  std::string user_id;
  std::vector<Interaction> interactions;  // sorted by ts, stable on ties
  std::string profile_text;
};

// ---------------------------------------------------------------------------
// Catalog
// ---------------------------------------------------------------------------

struct Item {
  std::string item_id;
  std::string title;
  std::int64_t price = 0;  // minor currency units, > 0
  std::array<std::string, 3> category;
  std::int64_t sales_30d = 0;
  std::int64_t orders_total = 0;
  Vector embedding;

  // Leaf category, the unit of the interest profile and the category graph.
  const std::string& leaf_category() const { return category[2]; }
  std::string category_path() const {
    return category[0] + " > " + category[1] + " > " + category[2];
  }
};

struct Catalog {
  std::vector<Item> items;
  std::map<std::string, std::size_t> index;  // item_id -> position

  void add(Item item);
  const Item* find(const std::string& item_id) const;
  const Item& at(const std::string& item_id) const;
  std::size_t size() const { return items.size(); }
  int embedding_dim() const;
};

// ---------------------------------------------------------------------------
// Semantic IDs
// ---------------------------------------------------------------------------

struct Sid {
  std::vector<int> codes;  // exactly L entries, codes[l] in [0, K_l)

  bool operator==(const Sid& o) const { return codes == o.codes; }
  bool operator!=(const Sid& o) const { return codes != o.codes; }
  bool operator<(const Sid& o) const { return codes < o.codes; }
};

// Text form shared by prompts and the token vocabulary:
// "<sid_begin>s1_a s2_b s3_c<sid_end>".
std::string sid_to_token_string(const Sid& sid);
std::optional<Sid> sid_from_token_string(const std::string& text);

// ---------------------------------------------------------------------------
// Functional roles
// ---------------------------------------------------------------------------

enum class Popularity { Booming, Evergreen, LongTail };
enum class Replenishment { FMCG, Durable };
enum class DecisionCost { Trial, Core, Premium };
enum class Relation { Complement, Substitute, AudienceOverlap };

const char* to_string(Popularity v);
const char* to_string(Replenishment v);
const char* to_string(DecisionCost v);
const char* to_string(Relation v);
Popularity popularity_from_string(const std::string& s);
Replenishment replenishment_from_string(const std::string& s);
DecisionCost cost_from_string(const std::string& s);
Relation relation_from_string(const std::string& s);

struct ContextualRole {
  std::string anchor_category;
  Relation relation = Relation::Complement;

  bool operator==(const ContextualRole& o) const {
    return anchor_category == o.anchor_category && relation == o.relation;
  }
};

struct FunctionalRole {
  Popularity pop = Popularity::LongTail;
  Replenishment repl = Replenishment::Durable;
  DecisionCost cost = DecisionCost::Core;
  std::optional<ContextualRole> rel;

  bool operator==(const FunctionalRole& o) const {
    return pop == o.pop && repl == o.repl && cost == o.cost && rel == o.rel;
  }
};

// Anchor-free equivalence class used by the counterfactual candidate set and
// the global conversion table: the anchor category is user-specific, the
// class transfers across users.
struct RoleClass {
  Popularity pop = Popularity::LongTail;
  Replenishment repl = Replenishment::Durable;
  DecisionCost cost = DecisionCost::Core;
  std::optional<Relation> relation;

  bool operator==(const RoleClass& o) const {
    return pop == o.pop && repl == o.repl && cost == o.cost &&
           relation == o.relation;
  }
  bool operator<(const RoleClass& o) const;
};

RoleClass role_class_of(const FunctionalRole& role);

// Compact text form, e.g. "Booming|FMCG|Trial|Complement@Phone" or
// "LongTail|Durable|Core|none". Used in prompts; must re-parse exactly.
std::string role_to_string(const FunctionalRole& role);
FunctionalRole role_from_string(const std::string& text);
std::string role_class_to_string(const RoleClass& rc);
RoleClass role_class_from_string(const std::string& text);

struct RoleTrajectory {
  // (key item id, role with rel always present), in interaction order.
  std::vector<std::pair<std::string, FunctionalRole>> entries;
};

}  // namespace rolegen
