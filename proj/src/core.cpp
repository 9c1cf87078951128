#include "rolegen/core.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

namespace rolegen {

using nlohmann::json;

namespace {

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  return in;
}

}  // namespace

IngestResult ingest_interactions(std::istream& log_stream,
                                 const Catalog& catalog,
                                 const IngestConfig& cfg) {
  if (cfg.keep_view_rate < 0.0 || cfg.keep_view_rate > 1.0) {
    throw std::invalid_argument("keep_view_rate must be in [0,1]");
  }
  IngestResult result;
  std::map<std::string, std::size_t> user_index;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(log_stream, line)) {
    ++line_no;
    if (line.empty()) continue;
    ++result.stats.records_read;

    std::string user_id, item_id;
    Behavior behavior;
    std::int64_t ts;
    try {
      json rec = json::parse(line);
      user_id = rec.at("user_id").get<std::string>();
      item_id = rec.at("item_id").get<std::string>();
      behavior = behavior_from_string(rec.at("behavior").get<std::string>());
      ts = rec.at("ts").get<std::int64_t>();
      if (user_id.empty() || item_id.empty() || ts < 0) {
        throw std::invalid_argument("field out of range");
      }
    } catch (const std::exception&) {
      ++result.stats.malformed;
      result.stats.malformed_lines.push_back(line_no);
      continue;
    }

    // View down-sampling draws before any drop decision so the kept set is a
    // pure function of (input order, seed).
    bool keep = true;
    if (behavior == Behavior::View) {
      keep = unit(rng) < cfg.keep_view_rate;
    }
    if (!catalog.find(item_id)) {
      ++result.stats.unknown_item;
      continue;
    }
    if (!keep) {
      ++result.stats.views_dropped;
      continue;
    }

    auto [it, inserted] = user_index.emplace(user_id, result.sequences.size());
    if (inserted) {
      result.sequences.push_back(UserSequence{user_id, {}, ""});
    }
    result.sequences[it->second].interactions.push_back(
        Interaction{item_id, behavior, ts});
  }

  for (auto& seq : result.sequences) {
    std::stable_sort(seq.interactions.begin(), seq.interactions.end(),
                     [](const Interaction& a, const Interaction& b) {
                       return a.ts < b.ts;
                     });
  }
  return result;
}

IngestResult ingest_interactions_file(const std::string& path,
                                      const Catalog& catalog,
                                      const IngestConfig& cfg) {
  std::ifstream in = open_or_throw(path);
  return ingest_interactions(in, catalog, cfg);
}

bool classify_dormant(const UserSequence& seq, const DormancyConfig& cfg) {
  if (cfg.delta_t_days <= 0) {
    throw std::invalid_argument("delta_t_days must be > 0");
  }
  const std::int64_t window_start =
      cfg.now_ts - static_cast<std::int64_t>(cfg.delta_t_days) * 86400;
  for (const auto& x : seq.interactions) {
    if (x.behavior == Behavior::Purchase && x.ts >= window_start &&
        x.ts <= cfg.now_ts) {
      return false;
    }
  }
  return true;
}

UserSequence truncate_sequence(const UserSequence& seq, std::size_t max_len) {
  if (max_len < 1) throw std::invalid_argument("max_len must be >= 1");
  UserSequence out;
  out.user_id = seq.user_id;
  out.profile_text = seq.profile_text;
  const std::size_t n = seq.interactions.size();
  const std::size_t start = n > max_len ? n - max_len : 0;
  out.interactions.assign(seq.interactions.begin() + start,
                          seq.interactions.end());
  return out;
}

std::vector<const Item*> filter_high_quality(const Catalog& catalog,
                                             std::int64_t min_orders) {
  if (min_orders < 0) throw std::invalid_argument("min_orders must be >= 0");
  std::vector<const Item*> out;
  for (const auto& item : catalog.items) {
    if (item.orders_total > min_orders) out.push_back(&item);
  }
  return out;
}

Catalog load_catalog(std::istream& in) {
  Catalog catalog;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json rec = json::parse(line);
      Item item;
      item.item_id = rec.at("item_id").get<std::string>();
      item.title = rec.at("title").get<std::string>();
      item.price = rec.at("price").get<std::int64_t>();
      auto cats = rec.at("category");
      if (!cats.is_array() || cats.size() != 3) {
        throw std::invalid_argument("category must have 3 levels");
      }
      for (int l = 0; l < 3; ++l) {
        item.category[l] = cats[l].get<std::string>();
        if (item.category[l].empty()) {
          throw std::invalid_argument("empty category level");
        }
      }
      item.sales_30d = rec.at("sales_30d").get<std::int64_t>();
      item.orders_total = rec.at("orders_total").get<std::int64_t>();
      auto emb = rec.at("embedding");
      item.embedding.resize(static_cast<Eigen::Index>(emb.size()));
      for (std::size_t i = 0; i < emb.size(); ++i) {
        item.embedding[static_cast<Eigen::Index>(i)] = emb[i].get<double>();
      }
      if (item.price <= 0) throw std::invalid_argument("price must be > 0");
      if (item.sales_30d < 0 || item.orders_total < 0) {
        throw std::invalid_argument("negative counters");
      }
      if (!catalog.items.empty() &&
          item.embedding.size() != catalog.items.front().embedding.size()) {
        throw std::invalid_argument("embedding dimension mismatch");
      }
      catalog.add(std::move(item));
    } catch (const std::exception& e) {
      throw std::runtime_error("catalog line " + std::to_string(line_no) +
                               ": " + e.what());
    }
  }
  return catalog;
}

Catalog load_catalog_file(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  return load_catalog(in);
}

void save_catalog(const Catalog& catalog, std::ostream& out) {
  for (const auto& item : catalog.items) {
    json rec;
    rec["item_id"] = item.item_id;
    rec["title"] = item.title;
    rec["price"] = item.price;
    rec["category"] = {item.category[0], item.category[1], item.category[2]};
    rec["sales_30d"] = item.sales_30d;
    rec["orders_total"] = item.orders_total;
    std::vector<double> emb(item.embedding.data(),
                            item.embedding.data() + item.embedding.size());
    rec["embedding"] = emb;
    out << rec.dump() << '\n';
  }
}

void save_interactions(const std::vector<UserSequence>& sequences,
                       std::ostream& out) {
  for (const auto& seq : sequences) {
    for (const auto& x : seq.interactions) {
      json rec;
      rec["user_id"] = seq.user_id;
      rec["item_id"] = x.item_id;
      rec["behavior"] = to_string(x.behavior);
      rec["ts"] = x.ts;
      out << rec.dump() << '\n';
    }
  }
}

}  // namespace rolegen
