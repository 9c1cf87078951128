#pragma once

#include "rolegen/types.hpp"

#include <iosfwd>

namespace rolegen {

struct DormancyConfig {
  int delta_t_days = 30;
  std::int64_t now_ts = 0;
};

struct IngestConfig {
  double keep_view_rate = 0.2;  // clicks and purchases are always kept
  std::uint64_t seed = 0;
};

struct IngestStats {
  std::size_t records_read = 0;
  std::size_t malformed = 0;       // with first offending line number below
  std::size_t unknown_item = 0;
  std::size_t views_dropped = 0;
  std::vector<std::size_t> malformed_lines;
};

struct IngestResult {
  std::vector<UserSequence> sequences;  // ordered by first appearance
  IngestStats stats;
};

// Line-delimited interaction records:
//   {"user_id": str, "item_id": str, "behavior": "view"|"click"|"purchase",
//    "ts": int}
// Malformed lines and unknown items are counted, never fatal. View events are
// kept with probability keep_view_rate, decided by a per-record draw from a
// generator seeded with cfg.seed, in input order. Sequences come out sorted
// by ts, stable for equal timestamps.
IngestResult ingest_interactions(std::istream& log_stream,
                                 const Catalog& catalog,
                                 const IngestConfig& cfg);
IngestResult ingest_interactions_file(const std::string& path,
                                      const Catalog& catalog,
                                      const IngestConfig& cfg);

// True iff no purchase falls inside [now_ts - delta_t_days, now_ts].
bool classify_dormant(const UserSequence& seq, const DormancyConfig& cfg);

// Keeps the most recent max_len interactions, order preserved.
UserSequence truncate_sequence(const UserSequence& seq, std::size_t max_len);

// Items with orders_total strictly greater than min_orders.
std::vector<const Item*> filter_high_quality(const Catalog& catalog,
                                             std::int64_t min_orders);

// Catalog records:
//   {"item_id": str, "title": str, "price": int, "category": [str,str,str],
//    "sales_30d": int, "orders_total": int, "embedding": [float,...]}
Catalog load_catalog(std::istream& in);
Catalog load_catalog_file(const std::string& path);
void save_catalog(const Catalog& catalog, std::ostream& out);

void save_interactions(const std::vector<UserSequence>& sequences,
                       std::ostream& out);

}  // namespace rolegen
