#include "rolegen/types.hpp"

#include <sstream>
#include <tuple>

namespace rolegen {

const char* to_string(Behavior b) {
  switch (b) {
    case Behavior::View: return "view";
    case Behavior::Click: return "click";
    case Behavior::Purchase: return "purchase";
  }
  throw std::logic_error("bad Behavior");
}

Behavior behavior_from_string(const std::string& s) {
  if (s == "view") return Behavior::View;
  if (s == "click") return Behavior::Click;
  if (s == "purchase") return Behavior::Purchase;
  throw std::invalid_argument("unknown behavior: " + s);
}

void Catalog::add(Item item) {
  if (item.item_id.empty()) throw std::invalid_argument("empty item_id");
  if (index.count(item.item_id)) {
    throw std::invalid_argument("duplicate item_id: " + item.item_id);
  }
  index.emplace(item.item_id, items.size());
  items.push_back(std::move(item));
}

const Item* Catalog::find(const std::string& item_id) const {
  auto it = index.find(item_id);
  return it == index.end() ? nullptr : &items[it->second];
}

const Item& Catalog::at(const std::string& item_id) const {
  const Item* item = find(item_id);
  if (!item) throw std::out_of_range("unknown item: " + item_id);
  return *item;
}

int Catalog::embedding_dim() const {
  return items.empty() ? 0 : static_cast<int>(items.front().embedding.size());
}

std::string sid_to_token_string(const Sid& sid) {
  std::ostringstream out;
  out << "<sid_begin>";
  for (std::size_t l = 0; l < sid.codes.size(); ++l) {
    if (l) out << ' ';
    out << 's' << (l + 1) << '_' << sid.codes[l];
  }
  out << "<sid_end>";
  return out.str();
}

std::optional<Sid> sid_from_token_string(const std::string& text) {
  const std::string begin = "<sid_begin>";
  const std::string end = "<sid_end>";
  if (text.size() < begin.size() + end.size()) return std::nullopt;
  if (text.compare(0, begin.size(), begin) != 0) return std::nullopt;
  if (text.compare(text.size() - end.size(), end.size(), end) != 0) {
    return std::nullopt;
  }
  std::string body =
      text.substr(begin.size(), text.size() - begin.size() - end.size());
  std::istringstream in(body);
  Sid sid;
  std::string tok;
  while (in >> tok) {
    const std::size_t level = sid.codes.size() + 1;
    const std::string prefix = "s" + std::to_string(level) + "_";
    if (tok.compare(0, prefix.size(), prefix) != 0) return std::nullopt;
    try {
      std::size_t pos = 0;
      int code = std::stoi(tok.substr(prefix.size()), &pos);
      if (pos != tok.size() - prefix.size() || code < 0) return std::nullopt;
      sid.codes.push_back(code);
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }
  if (sid.codes.empty()) return std::nullopt;
  return sid;
}

const char* to_string(Popularity v) {
  switch (v) {
    case Popularity::Booming: return "Booming";
    case Popularity::Evergreen: return "Evergreen";
    case Popularity::LongTail: return "LongTail";
  }
  throw std::logic_error("bad Popularity");
}

const char* to_string(Replenishment v) {
  switch (v) {
    case Replenishment::FMCG: return "FMCG";
    case Replenishment::Durable: return "Durable";
  }
  throw std::logic_error("bad Replenishment");
}

const char* to_string(DecisionCost v) {
  switch (v) {
    case DecisionCost::Trial: return "Trial";
    case DecisionCost::Core: return "Core";
    case DecisionCost::Premium: return "Premium";
  }
  throw std::logic_error("bad DecisionCost");
}

const char* to_string(Relation v) {
  switch (v) {
    case Relation::Complement: return "Complement";
    case Relation::Substitute: return "Substitute";
    case Relation::AudienceOverlap: return "AudienceOverlap";
  }
  throw std::logic_error("bad Relation");
}

Popularity popularity_from_string(const std::string& s) {
  if (s == "Booming") return Popularity::Booming;
  if (s == "Evergreen") return Popularity::Evergreen;
  if (s == "LongTail") return Popularity::LongTail;
  throw std::invalid_argument("unknown popularity: " + s);
}

Replenishment replenishment_from_string(const std::string& s) {
  if (s == "FMCG") return Replenishment::FMCG;
  if (s == "Durable") return Replenishment::Durable;
  throw std::invalid_argument("unknown replenishment: " + s);
}

DecisionCost cost_from_string(const std::string& s) {
  if (s == "Trial") return DecisionCost::Trial;
  if (s == "Core") return DecisionCost::Core;
  if (s == "Premium") return DecisionCost::Premium;
  throw std::invalid_argument("unknown decision cost: " + s);
}

Relation relation_from_string(const std::string& s) {
  if (s == "Complement") return Relation::Complement;
  if (s == "Substitute") return Relation::Substitute;
  if (s == "AudienceOverlap") return Relation::AudienceOverlap;
  throw std::invalid_argument("unknown relation: " + s);
}

bool RoleClass::operator<(const RoleClass& o) const {
  auto key = [](const RoleClass& r) {
    return std::make_tuple(static_cast<int>(r.pop), static_cast<int>(r.repl),
                           static_cast<int>(r.cost), r.relation.has_value(),
                           r.relation ? static_cast<int>(*r.relation) : 0);
  };
  return key(*this) < key(o);
}

RoleClass role_class_of(const FunctionalRole& role) {
  RoleClass rc;
  rc.pop = role.pop;
  rc.repl = role.repl;
  rc.cost = role.cost;
  if (role.rel) rc.relation = role.rel->relation;
  return rc;
}

std::string role_to_string(const FunctionalRole& role) {
  std::string out = std::string(to_string(role.pop)) + "|" +
                    to_string(role.repl) + "|" + to_string(role.cost) + "|";
  if (role.rel) {
    out += std::string(to_string(role.rel->relation)) + "@" +
           role.rel->anchor_category;
  } else {
    out += "none";
  }
  return out;
}

namespace {

std::vector<std::string> split_pipe(const std::string& text) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    std::size_t bar = text.find('|', start);
    if (bar == std::string::npos) {
      parts.push_back(text.substr(start));
      break;
    }
    parts.push_back(text.substr(start, bar - start));
    start = bar + 1;
  }
  return parts;
}

}  // namespace

FunctionalRole role_from_string(const std::string& text) {
  auto parts = split_pipe(text);
  if (parts.size() != 4) {
    throw std::invalid_argument("bad role string: " + text);
  }
  FunctionalRole role;
  role.pop = popularity_from_string(parts[0]);
  role.repl = replenishment_from_string(parts[1]);
  role.cost = cost_from_string(parts[2]);
  if (parts[3] != "none") {
    std::size_t at = parts[3].find('@');
    if (at == std::string::npos) {
      throw std::invalid_argument("bad contextual role: " + parts[3]);
    }
    ContextualRole rel;
    rel.relation = relation_from_string(parts[3].substr(0, at));
    rel.anchor_category = parts[3].substr(at + 1);
    role.rel = rel;
  }
  return role;
}

std::string role_class_to_string(const RoleClass& rc) {
  std::string out = std::string(to_string(rc.pop)) + "|" +
                    to_string(rc.repl) + "|" + to_string(rc.cost) + "|";
  out += rc.relation ? to_string(*rc.relation) : "none";
  return out;
}

RoleClass role_class_from_string(const std::string& text) {
  auto parts = split_pipe(text);
  if (parts.size() != 4) {
    throw std::invalid_argument("bad role class string: " + text);
  }
  RoleClass rc;
  rc.pop = popularity_from_string(parts[0]);
  rc.repl = replenishment_from_string(parts[1]);
  rc.cost = cost_from_string(parts[2]);
  if (parts[3] != "none") rc.relation = relation_from_string(parts[3]);
  return rc;
}

}  // namespace rolegen
