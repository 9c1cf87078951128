#pragma once

#include "rolegen/category_graph.hpp"
#include "rolegen/codebook.hpp"
#include "rolegen/roles.hpp"
#include "rolegen/types.hpp"

#include <iosfwd>
#include <map>

namespace rolegen {

// ---------------------------------------------------------------------------
// Instruction-tuning records
// ---------------------------------------------------------------------------

enum class TaskKind {
  ItemIndexing,
  ItemProfileTitle,
  ItemProfileCategory,
  StandardNextItem,
  FrCot,
  SubKeyItems,
  SubRoleInterpret,
  SubJointReason,
  Reflection,
};

const char* to_string(TaskKind t);
TaskKind task_from_string(const std::string& s);

struct PromptRecord {
  TaskKind task;
  std::string instruction;
  std::string prompt;
  std::string target;
};

// "(behavior, sid)" pairs, space separated, oldest first.
std::string serialize_history(const UserSequence& seq,
                              const std::map<std::string, Sid>& sid_map);

// Structured, machine-generated think content: profile summary, key items
// with roles, inferred target role. Re-parses exactly.
std::string render_think_content(const InterestProfile& profile,
                                 const RoleTrajectory& trajectory,
                                 const std::map<std::string, Sid>& sid_map,
                                 const FunctionalRole& target_role);

struct ParsedThink {
  InterestProfile profile;
  std::vector<std::pair<Sid, FunctionalRole>> trajectory;
  FunctionalRole target_role;
};
ParsedThink parse_think_content(const std::string& think);

// One ItemIndexing and two ItemProfile records per item.
std::vector<PromptRecord> build_alignment_records(
    const Catalog& catalog, const std::map<std::string, Sid>& sid_map);

PromptRecord build_frcot_record(const UserSequence& seq,
                                const InterestProfile& profile,
                                const RoleTrajectory& trajectory,
                                const std::map<std::string, Sid>& sid_map,
                                const std::string& target_item_id,
                                const FunctionalRole& target_role);

// Three stepwise sub-task records plus the two standard next-item records.
std::vector<PromptRecord> build_stepwise_records(
    const UserSequence& seq, const InterestProfile& profile,
    const RoleTrajectory& trajectory,
    const std::map<std::string, Sid>& sid_map, const Catalog& catalog,
    const std::string& target_item_id, const FunctionalRole& target_role);

struct ScoredSid {
  Sid sid;
  double score;
};

PromptRecord build_reflection_record(const UserSequence& seq,
                                     const std::map<std::string, Sid>& sid_map,
                                     const std::vector<ScoredSid>& reasoner_candidates,
                                     const std::vector<ScoredSid>& backbone_candidates,
                                     const std::string& ground_truth_item_id);

// Field-level parse-back used by the round-trip checks. Throws on records
// that do not match their task's template.
struct ParsedRecord {
  TaskKind task;
  std::map<std::string, std::string> fields;
};
ParsedRecord parse_record(const PromptRecord& record);

// SFT dataset: {"task","instruction","prompt","target"} per line.
void save_records(const std::vector<PromptRecord>& records, std::ostream& out);
std::vector<PromptRecord> load_records(std::istream& in);

// ---------------------------------------------------------------------------
// Counterfactual role intervention
// ---------------------------------------------------------------------------

// Conversion frequency per role class across successful dormant-to-active
// transitions.
class GlobalRoleTable {
 public:
  void add(const RoleClass& rc, long count = 1);
  long count(const RoleClass& rc) const;
  std::vector<RoleClass> top_roles(std::size_t top_g) const;
  const std::map<RoleClass, long>& counts() const { return counts_; }

  void save(std::ostream& out) const;
  static GlobalRoleTable load(std::istream& in);

 private:
  std::map<RoleClass, long> counts_;
};

// Union of the trajectory's role classes and the top_g global classes,
// deduplicated, in deterministic sorted order.
std::vector<RoleClass> build_candidate_roles(const RoleTrajectory& trajectory,
                                             const GlobalRoleTable& table,
                                             std::size_t top_g);

enum class QueryProvenance { TrajectoryObserved, GlobalFrequent };

struct CounterfactualQuery {
  std::string user_id;
  InterestProfile profile;
  RoleClass intervened_role;
  QueryProvenance provenance;
  std::string instruction;
  std::string prompt;  // FR-CoT prompt with the role substituted
};

// n draws from P(candidates) proportional to global count + 1 (Laplace
// smoothing): without replacement while n <= |candidates|, then with
// replacement for the remainder. Deterministic under seed.
std::vector<CounterfactualQuery> sample_counterfactuals(
    const UserSequence& seq, const InterestProfile& profile,
    const RoleTrajectory& trajectory,
    const std::map<std::string, Sid>& sid_map,
    const std::vector<RoleClass>& candidates, const GlobalRoleTable& table,
    std::size_t n, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Mock reasoner: role-conditioned popularity oracle
// ---------------------------------------------------------------------------

struct ReasonerOutput {
  std::vector<ScoredSid> candidates;  // scores non-increasing
  std::size_t parse_failures = 0;
};

class MockOracle {
 public:
  static MockOracle build(const Catalog& catalog, const CategoryStats& stats,
                          const RoleThresholds& thresholds,
                          const CategoryGraph& graph,
                          const std::map<std::string, Sid>& sid_map,
                          const std::vector<UserSequence>& train_sequences);

  void add_feedback(const std::string& item_id, long count = 1);
  const CategoryGraph& graph() const { return *graph_; }
  // Popularity, intrinsic class, category and sid of every item.
  struct ItemInfo {
    std::string item_id;
    std::string category;
    IntrinsicRole intrinsic;
    Sid sid;
    long popularity = 0;
  };
  const std::vector<ItemInfo>& items() const { return items_; }

 private:
  std::vector<ItemInfo> items_;
  std::map<std::string, std::size_t> index_;
  const CategoryGraph* graph_ = nullptr;
  friend ReasonerOutput mock_reason(const CounterfactualQuery&,
                                    const MockOracle&, int);
};

// Top-beam items whose intrinsic role matches the intervened class and,
// when the class carries a relation, whose category is reachable from a
// profiled category by an edge of that relation type. Ranked by popularity,
// ties by item id.
ReasonerOutput mock_reason(const CounterfactualQuery& query,
                           const MockOracle& oracle, int beam);

// ---------------------------------------------------------------------------
// Remote reasoner: chat-completion endpoint client
// ---------------------------------------------------------------------------

struct RemoteEndpointConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string path = "/v1/chat/completions";
  std::string model = "reasoner";
  std::string auth_header;  // sent as Authorization when non-empty
  double temperature = 0.95;
  int timeout_seconds = 30;
};

// Network or timeout failure; callers may retry.
struct TransientNetworkError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

ReasonerOutput remote_reason(const CounterfactualQuery& query,
                             const RemoteEndpointConfig& cfg, int beam);

// Extracts ranked Sids from completion texts; malformed completions are
// counted, not fatal.
ReasonerOutput parse_completions(const std::vector<std::string>& completions);

// Reasoner cache rows: {"user_id", "candidates": [{"sid": [...], "score":
// ...}], "generated_at"}.
struct ReasonerCacheEntry {
  std::string user_id;
  std::vector<ScoredSid> candidates;
  std::int64_t generated_at = 0;
};
void save_reasoner_cache(const std::vector<ReasonerCacheEntry>& entries,
                         std::ostream& out);
std::vector<ReasonerCacheEntry> load_reasoner_cache(std::istream& in);

}  // namespace rolegen
