#pragma once

#include "rolegen/types.hpp"

#include <iosfwd>
#include <map>

namespace rolegen {

// Directed category-level decision graph with a single dominant relation per
// ordered (src, dst) pair. Categories are leaf category names.
class CategoryGraph {
 public:
  struct Edge {
    Relation relation;
    double weight;
  };

  void add_edge(const std::string& src, const std::string& dst,
                Relation relation, double weight);
  std::optional<Edge> query(const std::string& src,
                            const std::string& dst) const;
  const std::map<std::pair<std::string, std::string>, Edge>& edges() const {
    return edges_;
  }
  std::size_t size() const { return edges_.size(); }

 private:
  std::map<std::pair<std::string, std::string>, Edge> edges_;
};

struct GraphMineConfig {
  std::int64_t window_seconds = 7 * 86400;
  double complement_threshold = 1.5;   // lift
  double substitute_threshold = 1.5;   // lift difference
  double audience_threshold = 0.2;     // Jaccard
  double lambda = 1.0;                 // co-purchase penalty in substitution
};

// Per ordered pair of distinct leaf categories, three user-level scores:
//   complement  lift of "click in src is followed within the window by a
//               click or purchase in dst": U * F / (A_src * B_dst), where
//               F counts users with such a follow, A counts users clicking
//               src, B counts users clicking or purchasing dst;
//   substitute  symmetric co-click lift minus lambda * co-purchase lift;
//   audience    Jaccard overlap of the user cohorts interacting with src
//               and dst under any behavior.
// The max-scoring relation whose score clears its threshold is emitted with
// the score as weight. The paper names the relations but not the mining
// statistics; these rules are artifact-level choices.
CategoryGraph mine_graph(const std::vector<UserSequence>& sequences,
                         const Catalog& catalog, const GraphMineConfig& cfg);

// Line-delimited {"src": str, "dst": str, "rel": ..., "weight": float}.
void save_graph(const CategoryGraph& g, std::ostream& out);
void save_graph_file(const CategoryGraph& g, const std::string& path);
CategoryGraph load_graph(std::istream& in);
CategoryGraph load_graph_file(const std::string& path);

std::string relation_file_tag(Relation r);
Relation relation_from_file_tag(const std::string& s);

}  // namespace rolegen
