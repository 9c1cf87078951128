#include "rolegen/reasoner.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <random>
#include <sstream>

namespace rolegen {

using nlohmann::json;

const char* to_string(TaskKind t) {
  switch (t) {
    case TaskKind::ItemIndexing: return "item_indexing";
    case TaskKind::ItemProfileTitle: return "item_profile_title";
    case TaskKind::ItemProfileCategory: return "item_profile_category";
    case TaskKind::StandardNextItem: return "standard_next_item";
    case TaskKind::FrCot: return "fr_cot";
    case TaskKind::SubKeyItems: return "sub_key_items";
    case TaskKind::SubRoleInterpret: return "sub_role_interpret";
    case TaskKind::SubJointReason: return "sub_joint_reason";
    case TaskKind::Reflection: return "reflection";
  }
  throw std::logic_error("bad TaskKind");
}

TaskKind task_from_string(const std::string& s) {
  for (TaskKind t : {TaskKind::ItemIndexing, TaskKind::ItemProfileTitle,
                     TaskKind::ItemProfileCategory, TaskKind::StandardNextItem,
                     TaskKind::FrCot, TaskKind::SubKeyItems,
                     TaskKind::SubRoleInterpret, TaskKind::SubJointReason,
                     TaskKind::Reflection}) {
    if (s == to_string(t)) return t;
  }
  throw std::invalid_argument("unknown task: " + s);
}

namespace {

const Sid& sid_of(const std::map<std::string, Sid>& sid_map,
                  const std::string& item_id) {
  auto it = sid_map.find(item_id);
  if (it == sid_map.end()) {
    throw std::invalid_argument("item has no assigned sid: " + item_id);
  }
  return it->second;
}

std::string format_score(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

std::string serialize_candidates(const std::vector<ScoredSid>& candidates) {
  if (candidates.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (i) out += ' ';
    out += sid_to_token_string(candidates[i].sid);
  }
  return out;
}

// Line starting with the given prefix; throws when absent.
std::string line_after(const std::string& text, const std::string& prefix) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.compare(0, prefix.size(), prefix) == 0) {
      return line.substr(prefix.size());
    }
  }
  throw std::invalid_argument("missing line: " + prefix);
}

std::vector<std::string> split_on(const std::string& text,
                                  const std::string& sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    std::size_t at = text.find(sep, start);
    if (at == std::string::npos) {
      parts.push_back(text.substr(start));
      return parts;
    }
    parts.push_back(text.substr(start, at - start));
    start = at + sep.size();
  }
}

Sid parse_sid_or_throw(const std::string& text) {
  auto sid = sid_from_token_string(text);
  if (!sid) throw std::invalid_argument("bad sid token string: " + text);
  return *sid;
}

constexpr const char* kProfilePrefix = "Interest profile: ";
constexpr const char* kKeyItemsPrefix = "Key items and roles: ";
constexpr const char* kTargetRolePrefix = "Target role: ";

}  // namespace

std::string serialize_history(const UserSequence& seq,
                              const std::map<std::string, Sid>& sid_map) {
  std::string out;
  for (std::size_t i = 0; i < seq.interactions.size(); ++i) {
    const auto& x = seq.interactions[i];
    if (i) out += ' ';
    out += "(" + std::string(to_string(x.behavior)) + ", " +
           sid_to_token_string(sid_of(sid_map, x.item_id)) + ")";
  }
  return out;
}

std::string render_think_content(const InterestProfile& profile,
                                 const RoleTrajectory& trajectory,
                                 const std::map<std::string, Sid>& sid_map,
                                 const FunctionalRole& target_role) {
  std::string out = kProfilePrefix;
  if (profile.empty()) {
    out += "none";
  } else {
    for (std::size_t i = 0; i < profile.size(); ++i) {
      if (i) out += " > ";
      out += profile[i].category + "(" + format_score(profile[i].score) + ")";
    }
  }
  out += "\n";
  out += kKeyItemsPrefix;
  if (trajectory.entries.empty()) {
    out += "none";
  } else {
    for (std::size_t i = 0; i < trajectory.entries.size(); ++i) {
      if (i) out += "; ";
      out += sid_to_token_string(sid_of(sid_map, trajectory.entries[i].first)) +
             "=" + role_to_string(trajectory.entries[i].second);
    }
  }
  out += "\n";
  out += kTargetRolePrefix + role_to_string(target_role);
  return out;
}

ParsedThink parse_think_content(const std::string& think) {
  ParsedThink parsed;
  std::string profile_line = line_after(think, kProfilePrefix);
  if (profile_line != "none") {
    for (const auto& entry : split_on(profile_line, " > ")) {
      std::size_t open = entry.rfind('(');
      if (open == std::string::npos || entry.back() != ')') {
        throw std::invalid_argument("bad profile entry: " + entry);
      }
      InterestEntry e;
      e.category = entry.substr(0, open);
      e.score = std::stod(entry.substr(open + 1,
                                       entry.size() - open - 2));
      parsed.profile.push_back(std::move(e));
    }
  }
  std::string keys_line = line_after(think, kKeyItemsPrefix);
  if (keys_line != "none") {
    for (const auto& entry : split_on(keys_line, "; ")) {
      std::size_t eq = entry.find('=');
      if (eq == std::string::npos) {
        throw std::invalid_argument("bad trajectory entry: " + entry);
      }
      parsed.trajectory.emplace_back(parse_sid_or_throw(entry.substr(0, eq)),
                                     role_from_string(entry.substr(eq + 1)));
    }
  }
  parsed.target_role = role_from_string(line_after(think, kTargetRolePrefix));
  return parsed;
}

// ---------------------------------------------------------------------------
// Record builders
// ---------------------------------------------------------------------------

namespace {

const char* kIndexingInstruction =
    "You are a semantic indexing module responsible for mapping product "
    "metadata from the e-commerce platform to discrete Semantic ID (SID) "
    "tokens.";

const char* kProfileTitleInstruction =
    "You are an e-commerce index-to-text mapper. Given an internal Semantic "
    "ID (SID) token, you must generate the corresponding product title in "
    "the style commonly used on e-commerce platforms.";

const char* kProfileCategoryInstruction =
    "You are a category prediction module responsible for decoding the "
    "product category from Semantic ID (SID) tokens in an e-commerce "
    "recommendation system.";

const char* kStandardInstruction =
    "You are a senior expert in e-commerce recommendation algorithms. Given "
    "the user's personal profile and historical interaction sequence, "
    "predict the next item. Exclude items previously interacted with in the "
    "history and recommend a novel item that best aligns with the user's "
    "current intent.";

const char* kFrCotInstruction =
    "You are an e-commerce recommendation expert specializing in user intent "
    "understanding. Predict the SID of the next item for the user based on "
    "their profile and interaction history. Reason within <think> tags: "
    "summarize the user's core preference categories, identify the "
    "functional roles of key items, infer the functional role of the target "
    "item, then output the predicted item SID on a new line. The "
    "recommendation must be novel and must not duplicate any item in the "
    "historical sequence.";

const char* kSubKeyItemsInstruction =
    "You are an e-commerce data analyst. Analyze the user profile and "
    "interaction history to extract the key items most informative for "
    "predicting the user's next action. List the SIDs of the selected items "
    "in chronological order of interaction, one SID per line.";

const char* kSubRoleInstruction =
    "You are a recommendation expert on an e-commerce platform. Analyze the "
    "functional role of each given key item, combining its intrinsic "
    "attributes (sales, price, durability) with the user's core preference "
    "categories.";

const char* kSubJointInstruction =
    "As an expert in e-commerce intent inference, analyze the user's "
    "interaction history and build a logical chain leading to the user's "
    "next decision: extract key items, decode their functional roles, and "
    "predict the functional role of the next item.";

const char* kReflectionInstruction =
    "You are a recommendation reflection module. Given the user's "
    "interaction history and the candidate items proposed by the reasoning "
    "module and the behavioral backbone, identify the item the user "
    "actually chose.";

std::string frcot_prompt(const UserSequence& seq,
                         const std::map<std::string, Sid>& sid_map) {
  return "User Profile: " + seq.profile_text +
         "\nInteraction Sequence: " + serialize_history(seq, sid_map) +
         "\nPlease reason: What functional need is reflected by the key "
         "items the user has recently engaged with? Based on this need, "
         "what is the most reasonable next item?\nOutput your reasoning "
         "process followed by the SID.";
}

}  // namespace

std::vector<PromptRecord> build_alignment_records(
    const Catalog& catalog, const std::map<std::string, Sid>& sid_map) {
  std::vector<PromptRecord> records;
  records.reserve(catalog.size() * 3);
  for (const auto& item : catalog.items) {
    const std::string sid = sid_to_token_string(sid_of(sid_map, item.item_id));

    PromptRecord indexing;
    indexing.task = TaskKind::ItemIndexing;
    indexing.instruction = kIndexingInstruction;
    indexing.prompt =
        "Generate a Semantic ID (SID) token that represents the given item "
        "based on the following product information:\nTitle: " +
        item.title + "\nPrice: " + std::to_string(item.price) +
        "\nCategory Path: " + item.category_path() +
        "\nOutput only the SID token.";
    indexing.target = sid;
    records.push_back(std::move(indexing));

    PromptRecord title;
    title.task = TaskKind::ItemProfileTitle;
    title.instruction = kProfileTitleInstruction;
    title.prompt =
        "Please generate the original e-commerce product title "
        "corresponding to the following SID.\nSID: " +
        sid + "\nTitle:";
    title.target = item.title;
    records.push_back(std::move(title));

    PromptRecord category;
    category.task = TaskKind::ItemProfileCategory;
    category.instruction = kProfileCategoryInstruction;
    category.prompt =
        "Given a product Semantic ID (SID), infer its category path in the "
        "format: \"Level-1 Category > Level-2 Category > Level-3 "
        "Category\".\nSID: " +
        sid + "\nCategory Path:";
    category.target = item.category_path();
    records.push_back(std::move(category));
  }
  return records;
}

PromptRecord build_frcot_record(const UserSequence& seq,
                                const InterestProfile& profile,
                                const RoleTrajectory& trajectory,
                                const std::map<std::string, Sid>& sid_map,
                                const std::string& target_item_id,
                                const FunctionalRole& target_role) {
  for (const auto& x : seq.interactions) {
    if (x.item_id == target_item_id) {
      throw std::invalid_argument("target item appears in history: " +
                                  target_item_id);
    }
  }
  PromptRecord record;
  record.task = TaskKind::FrCot;
  record.instruction = kFrCotInstruction;
  record.prompt = frcot_prompt(seq, sid_map);
  record.target =
      "<think>" +
      render_think_content(profile, trajectory, sid_map, target_role) +
      "</think>" + sid_to_token_string(sid_of(sid_map, target_item_id));
  return record;
}

std::vector<PromptRecord> build_stepwise_records(
    const UserSequence& seq, const InterestProfile& profile,
    const RoleTrajectory& trajectory,
    const std::map<std::string, Sid>& sid_map, const Catalog& catalog,
    const std::string& target_item_id, const FunctionalRole& target_role) {
  const std::string history = serialize_history(seq, sid_map);
  const std::string profile_block =
      "User Profile: " + seq.profile_text + "\nInteraction History: " + history;

  std::string key_items_str;
  std::string roles_str;
  for (std::size_t i = 0; i < trajectory.entries.size(); ++i) {
    const auto& [item_id, role] = trajectory.entries[i];
    if (i) {
      key_items_str += '\n';
      roles_str += '\n';
    }
    key_items_str += sid_to_token_string(sid_of(sid_map, item_id));
    roles_str += sid_to_token_string(sid_of(sid_map, item_id)) + "=" +
                 role_to_string(role);
  }
  if (trajectory.entries.empty()) {
    key_items_str = "none";
    roles_str = "none";
  }

  std::vector<PromptRecord> records;

  PromptRecord keys;
  keys.task = TaskKind::SubKeyItems;
  keys.instruction = kSubKeyItemsInstruction;
  keys.prompt = profile_block +
                "\nPlease filter the interaction sequence based on the user "
                "profile to identify Key Items:";
  keys.target = key_items_str;
  records.push_back(std::move(keys));

  PromptRecord roles;
  roles.task = TaskKind::SubRoleInterpret;
  roles.instruction = kSubRoleInstruction;
  roles.prompt = profile_block + "\nKey Items:\n" + key_items_str +
                 "\nInfer the functional roles provided by these key items:";
  roles.target = roles_str;
  records.push_back(std::move(roles));

  PromptRecord joint;
  joint.task = TaskKind::SubJointReason;
  joint.instruction = kSubJointInstruction;
  joint.prompt = profile_block +
                 "\nReasoning Task: Identify key items, analyze their "
                 "functional roles, and ultimately predict the functional "
                 "role of the next item.";
  joint.target = render_think_content(profile, trajectory, sid_map, target_role);
  records.push_back(std::move(joint));

  const std::string standard_prompt =
      "User interactions are recorded as (behavior, item SID) pairs. Based "
      "on the user profile and recent interaction history, predict the next "
      "item they will interact with.\nProfile: " +
      seq.profile_text + "\nHistory: " + history;

  PromptRecord next_sid;
  next_sid.task = TaskKind::StandardNextItem;
  next_sid.instruction = kStandardInstruction;
  next_sid.prompt = standard_prompt +
                    "\nOutput only one item SID token (must be a new item "
                    "not appearing in the history).";
  next_sid.target = sid_to_token_string(sid_of(sid_map, target_item_id));
  records.push_back(std::move(next_sid));

  PromptRecord next_title;
  next_title.task = TaskKind::StandardNextItem;
  next_title.instruction = kStandardInstruction;
  next_title.prompt = standard_prompt + "\nOutput only the item title.";
  next_title.target = catalog.at(target_item_id).title;
  records.push_back(std::move(next_title));

  return records;
}

PromptRecord build_reflection_record(
    const UserSequence& seq, const std::map<std::string, Sid>& sid_map,
    const std::vector<ScoredSid>& reasoner_candidates,
    const std::vector<ScoredSid>& backbone_candidates,
    const std::string& ground_truth_item_id) {
  PromptRecord record;
  record.task = TaskKind::Reflection;
  record.instruction = kReflectionInstruction;
  record.prompt =
      "Interaction Sequence: " + serialize_history(seq, sid_map) +
      "\nReasoner Candidates: " + serialize_candidates(reasoner_candidates) +
      "\nBackbone Candidates: " + serialize_candidates(backbone_candidates) +
      "\nOutput only the ground-truth item SID token.";
  record.target = sid_to_token_string(sid_of(sid_map, ground_truth_item_id));
  return record;
}

// ---------------------------------------------------------------------------
// Parse-back
// ---------------------------------------------------------------------------

namespace {

std::pair<std::string, std::string> split_think_target(
    const std::string& target) {
  const std::string open = "<think>";
  const std::string close = "</think>";
  if (target.compare(0, open.size(), open) != 0) {
    throw std::invalid_argument("target missing <think>");
  }
  std::size_t end = target.find(close);
  if (end == std::string::npos) {
    throw std::invalid_argument("target missing </think>");
  }
  if (target.find(open, open.size()) != std::string::npos ||
      target.find(close, end + close.size()) != std::string::npos) {
    throw std::invalid_argument("target has multiple think spans");
  }
  return {target.substr(open.size(), end - open.size()),
          target.substr(end + close.size())};
}

}  // namespace

ParsedRecord parse_record(const PromptRecord& record) {
  ParsedRecord parsed;
  parsed.task = record.task;
  auto& f = parsed.fields;
  switch (record.task) {
    case TaskKind::ItemIndexing: {
      f["title"] = line_after(record.prompt, "Title: ");
      f["price"] = line_after(record.prompt, "Price: ");
      f["category_path"] = line_after(record.prompt, "Category Path: ");
      parse_sid_or_throw(record.target);
      f["sid"] = record.target;
      break;
    }
    case TaskKind::ItemProfileTitle: {
      f["sid"] = line_after(record.prompt, "SID: ");
      parse_sid_or_throw(f["sid"]);
      f["title"] = record.target;
      break;
    }
    case TaskKind::ItemProfileCategory: {
      f["sid"] = line_after(record.prompt, "SID: ");
      parse_sid_or_throw(f["sid"]);
      f["category_path"] = record.target;
      break;
    }
    case TaskKind::StandardNextItem: {
      f["profile"] = line_after(record.prompt, "Profile: ");
      f["history"] = line_after(record.prompt, "History: ");
      f["target"] = record.target;
      break;
    }
    case TaskKind::FrCot: {
      f["profile"] = line_after(record.prompt, "User Profile: ");
      f["history"] = line_after(record.prompt, "Interaction Sequence: ");
      auto [think, sid] = split_think_target(record.target);
      parse_think_content(think);  // must be well-formed
      parse_sid_or_throw(sid);
      f["think"] = think;
      f["sid"] = sid;
      break;
    }
    case TaskKind::SubKeyItems: {
      f["profile"] = line_after(record.prompt, "User Profile: ");
      f["history"] = line_after(record.prompt, "Interaction History: ");
      if (record.target != "none") {
        std::istringstream in(record.target);
        std::string line;
        while (std::getline(in, line)) parse_sid_or_throw(line);
      }
      f["key_items"] = record.target;
      break;
    }
    case TaskKind::SubRoleInterpret: {
      f["history"] = line_after(record.prompt, "Interaction History: ");
      if (record.target != "none") {
        std::istringstream in(record.target);
        std::string line;
        while (std::getline(in, line)) {
          std::size_t eq = line.find('=');
          if (eq == std::string::npos) {
            throw std::invalid_argument("bad role line: " + line);
          }
          parse_sid_or_throw(line.substr(0, eq));
          role_from_string(line.substr(eq + 1));
        }
      }
      f["roles"] = record.target;
      break;
    }
    case TaskKind::SubJointReason: {
      f["history"] = line_after(record.prompt, "Interaction History: ");
      parse_think_content(record.target);
      f["think"] = record.target;
      break;
    }
    case TaskKind::Reflection: {
      f["history"] = line_after(record.prompt, "Interaction Sequence: ");
      f["reasoner_candidates"] =
          line_after(record.prompt, "Reasoner Candidates: ");
      f["backbone_candidates"] =
          line_after(record.prompt, "Backbone Candidates: ");
      parse_sid_or_throw(record.target);
      f["sid"] = record.target;
      break;
    }
  }
  return parsed;
}

void save_records(const std::vector<PromptRecord>& records,
                  std::ostream& out) {
  for (const auto& record : records) {
    json j;
    j["task"] = to_string(record.task);
    j["instruction"] = record.instruction;
    j["prompt"] = record.prompt;
    j["target"] = record.target;
    out << j.dump() << '\n';
  }
}

std::vector<PromptRecord> load_records(std::istream& in) {
  std::vector<PromptRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    PromptRecord record;
    record.task = task_from_string(j.at("task").get<std::string>());
    record.instruction = j.at("instruction").get<std::string>();
    record.prompt = j.at("prompt").get<std::string>();
    record.target = j.at("target").get<std::string>();
    records.push_back(std::move(record));
  }
  return records;
}

// ---------------------------------------------------------------------------
// Counterfactual role intervention
// ---------------------------------------------------------------------------

void GlobalRoleTable::add(const RoleClass& rc, long count) {
  if (count < 0) throw std::invalid_argument("negative count");
  counts_[rc] += count;
}

long GlobalRoleTable::count(const RoleClass& rc) const {
  auto it = counts_.find(rc);
  return it == counts_.end() ? 0 : it->second;
}

std::vector<RoleClass> GlobalRoleTable::top_roles(std::size_t top_g) const {
  std::vector<std::pair<RoleClass, long>> ranked(counts_.begin(),
                                                 counts_.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<RoleClass> out;
  for (const auto& [rc, n] : ranked) {
    if (out.size() >= top_g) break;
    out.push_back(rc);
  }
  return out;
}

void GlobalRoleTable::save(std::ostream& out) const {
  for (const auto& [rc, n] : counts_) {
    json j;
    j["role"] = role_class_to_string(rc);
    j["count"] = n;
    out << j.dump() << '\n';
  }
}

GlobalRoleTable GlobalRoleTable::load(std::istream& in) {
  GlobalRoleTable table;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    table.add(role_class_from_string(j.at("role").get<std::string>()),
              j.at("count").get<long>());
  }
  return table;
}

std::vector<RoleClass> build_candidate_roles(const RoleTrajectory& trajectory,
                                             const GlobalRoleTable& table,
                                             std::size_t top_g) {
  std::vector<RoleClass> out;
  auto push_unique = [&out](const RoleClass& rc) {
    if (std::find(out.begin(), out.end(), rc) == out.end()) out.push_back(rc);
  };
  for (const auto& [item, role] : trajectory.entries) {
    push_unique(role_class_of(role));
  }
  for (const auto& rc : table.top_roles(top_g)) push_unique(rc);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<CounterfactualQuery> sample_counterfactuals(
    const UserSequence& seq, const InterestProfile& profile,
    const RoleTrajectory& trajectory,
    const std::map<std::string, Sid>& sid_map,
    const std::vector<RoleClass>& candidates, const GlobalRoleTable& table,
    std::size_t n, std::uint64_t seed) {
  if (candidates.empty()) {
    throw std::invalid_argument(
        "empty counterfactual candidate set; fall back to the factual FR-CoT "
        "record for this user");
  }
  if (n < 1) throw std::invalid_argument("n must be >= 1");

  std::vector<RoleClass> trajectory_classes;
  for (const auto& [item, role] : trajectory.entries) {
    trajectory_classes.push_back(role_class_of(role));
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto weighted_pick = [&](const std::vector<std::pair<RoleClass, double>>& pool) {
    double total = 0.0;
    for (const auto& [rc, w] : pool) total += w;
    double r = unit(rng) * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      acc += pool[i].second;
      if (r <= acc) return i;
    }
    return pool.size() - 1;
  };

  // Laplace-smoothed conversion frequencies.
  std::vector<std::pair<RoleClass, double>> full_pool;
  for (const auto& rc : candidates) {
    full_pool.emplace_back(rc, static_cast<double>(table.count(rc)) + 1.0);
  }

  std::vector<RoleClass> picks;
  std::vector<std::pair<RoleClass, double>> pool = full_pool;
  while (picks.size() < n && !pool.empty()) {
    std::size_t i = weighted_pick(pool);
    picks.push_back(pool[i].first);
    pool.erase(pool.begin() + static_cast<long>(i));
  }
  while (picks.size() < n) {  // remainder with replacement
    picks.push_back(full_pool[weighted_pick(full_pool)].first);
  }

  std::vector<CounterfactualQuery> queries;
  for (const auto& rc : picks) {
    CounterfactualQuery q;
    q.user_id = seq.user_id;
    q.profile = profile;
    q.intervened_role = rc;
    q.provenance = std::find(trajectory_classes.begin(),
                             trajectory_classes.end(),
                             rc) != trajectory_classes.end()
                       ? QueryProvenance::TrajectoryObserved
                       : QueryProvenance::GlobalFrequent;
    q.instruction = kFrCotInstruction;

    // The FR-CoT prompt with the inferred target role replaced by the
    // intervened one inside the think span.
    std::string think = kProfilePrefix;
    if (profile.empty()) {
      think += "none";
    } else {
      for (std::size_t i = 0; i < profile.size(); ++i) {
        if (i) think += " > ";
        think += profile[i].category + "(" + format_score(profile[i].score) +
                 ")";
      }
    }
    think += std::string("\n") + kKeyItemsPrefix;
    if (trajectory.entries.empty()) {
      think += "none";
    } else {
      for (std::size_t i = 0; i < trajectory.entries.size(); ++i) {
        if (i) think += "; ";
        think +=
            sid_to_token_string(sid_of(sid_map, trajectory.entries[i].first)) +
            "=" + role_to_string(trajectory.entries[i].second);
      }
    }
    think += std::string("\n") + kTargetRolePrefix + role_class_to_string(rc);
    q.prompt = frcot_prompt(seq, sid_map) + "\n<think>" + think + "</think>";
    queries.push_back(std::move(q));
  }
  return queries;
}

// ---------------------------------------------------------------------------
// Mock reasoner
// ---------------------------------------------------------------------------

MockOracle MockOracle::build(const Catalog& catalog,
                             const CategoryStats& stats,
                             const RoleThresholds& thresholds,
                             const CategoryGraph& graph,
                             const std::map<std::string, Sid>& sid_map,
                             const std::vector<UserSequence>& train_sequences) {
  MockOracle oracle;
  oracle.graph_ = &graph;
  std::map<std::string, long> popularity;
  for (const auto& seq : train_sequences) {
    for (const auto& x : seq.interactions) {
      if (x.behavior != Behavior::View) ++popularity[x.item_id];
    }
  }
  for (const auto& item : catalog.items) {
    ItemInfo info;
    info.item_id = item.item_id;
    info.category = item.leaf_category();
    info.intrinsic = assign_intrinsic_roles(item, stats, thresholds);
    info.sid = sid_of(sid_map, item.item_id);
    auto it = popularity.find(item.item_id);
    info.popularity = it == popularity.end() ? 0 : it->second;
    oracle.index_.emplace(info.item_id, oracle.items_.size());
    oracle.items_.push_back(std::move(info));
  }
  return oracle;
}

void MockOracle::add_feedback(const std::string& item_id, long count) {
  auto it = index_.find(item_id);
  if (it == index_.end()) {
    throw std::invalid_argument("feedback for unknown item: " + item_id);
  }
  items_[it->second].popularity += count;
}

ReasonerOutput mock_reason(const CounterfactualQuery& query,
                           const MockOracle& oracle, int beam) {
  if (beam < 1) throw std::invalid_argument("beam must be >= 1");
  const RoleClass& rc = query.intervened_role;

  std::vector<const MockOracle::ItemInfo*> matches;
  for (const auto& info : oracle.items_) {
    if (info.intrinsic.pop != rc.pop || info.intrinsic.repl != rc.repl ||
        info.intrinsic.cost != rc.cost) {
      continue;
    }
    if (rc.relation) {
      bool reachable = false;
      for (const auto& entry : query.profile) {
        auto edge = oracle.graph().query(entry.category, info.category);
        if (edge && edge->relation == *rc.relation) {
          reachable = true;
          break;
        }
      }
      if (!reachable) continue;
    }
    matches.push_back(&info);
  }
  std::sort(matches.begin(), matches.end(),
            [](const MockOracle::ItemInfo* a, const MockOracle::ItemInfo* b) {
              if (a->popularity != b->popularity) {
                return a->popularity > b->popularity;
              }
              return a->item_id < b->item_id;
            });
  if (static_cast<int>(matches.size()) > beam) {
    matches.resize(static_cast<size_t>(beam));
  }
  ReasonerOutput out;
  for (const auto* info : matches) {
    out.candidates.push_back(
        ScoredSid{info->sid, static_cast<double>(info->popularity)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Remote reasoner
// ---------------------------------------------------------------------------

ReasonerOutput parse_completions(const std::vector<std::string>& completions) {
  ReasonerOutput out;
  std::vector<Sid> seen;
  for (const auto& text : completions) {
    std::optional<Sid> found;
    std::size_t at = 0;
    while ((at = text.find("<sid_begin>", at)) != std::string::npos) {
      std::size_t end = text.find("<sid_end>", at);
      if (end == std::string::npos) break;
      auto sid = sid_from_token_string(
          text.substr(at, end + std::string("<sid_end>").size() - at));
      if (sid) {
        found = sid;
        break;
      }
      at = end + 1;
    }
    if (!found) {
      ++out.parse_failures;
      continue;
    }
    if (std::find(seen.begin(), seen.end(), *found) != seen.end()) continue;
    seen.push_back(*found);
    out.candidates.push_back(ScoredSid{
        *found, 1.0 / static_cast<double>(out.candidates.size() + 1)});
  }
  return out;
}

ReasonerOutput remote_reason(const CounterfactualQuery& query,
                             const RemoteEndpointConfig& cfg, int beam) {
  if (beam < 1) throw std::invalid_argument("beam must be >= 1");
  httplib::Client client(cfg.host, cfg.port);
  client.set_connection_timeout(cfg.timeout_seconds, 0);
  client.set_read_timeout(cfg.timeout_seconds, 0);
  if (!cfg.auth_header.empty()) {
    client.set_default_headers({{"Authorization", cfg.auth_header}});
  }

  json body;
  body["model"] = cfg.model;
  body["temperature"] = cfg.temperature;
  body["n"] = beam;
  body["messages"] = {{{"role", "system"}, {"content", query.instruction}},
                      {{"role", "user"}, {"content", query.prompt}}};

  auto res = client.Post(cfg.path, body.dump(), "application/json");
  if (!res) {
    throw TransientNetworkError("endpoint unreachable: " + cfg.host + ":" +
                                std::to_string(cfg.port));
  }
  if (res->status != 200) {
    throw std::runtime_error("endpoint returned status " +
                             std::to_string(res->status));
  }
  json reply = json::parse(res->body);
  std::vector<std::string> completions;
  for (const auto& choice : reply.at("choices")) {
    completions.push_back(
        choice.at("message").at("content").get<std::string>());
  }
  return parse_completions(completions);
}

void save_reasoner_cache(const std::vector<ReasonerCacheEntry>& entries,
                         std::ostream& out) {
  for (const auto& entry : entries) {
    json j;
    j["user_id"] = entry.user_id;
    j["generated_at"] = entry.generated_at;
    j["candidates"] = json::array();
    for (const auto& c : entry.candidates) {
      j["candidates"].push_back({{"sid", c.sid.codes}, {"score", c.score}});
    }
    out << j.dump() << '\n';
  }
}

std::vector<ReasonerCacheEntry> load_reasoner_cache(std::istream& in) {
  std::vector<ReasonerCacheEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    ReasonerCacheEntry entry;
    entry.user_id = j.at("user_id").get<std::string>();
    entry.generated_at = j.at("generated_at").get<std::int64_t>();
    for (const auto& c : j.at("candidates")) {
      ScoredSid s;
      s.sid.codes = c.at("sid").get<std::vector<int>>();
      s.score = c.at("score").get<double>();
      entry.candidates.push_back(std::move(s));
    }
    entries.push_back(std::move(entry));
  }
  return entries;
}

}  // namespace rolegen
