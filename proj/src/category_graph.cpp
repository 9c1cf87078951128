#include "rolegen/category_graph.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <set>

namespace rolegen {

void CategoryGraph::add_edge(const std::string& src, const std::string& dst,
                             Relation relation, double weight) {
  if (src == dst) throw std::invalid_argument("self-loop edge: " + src);
  if (weight <= 0.0) throw std::invalid_argument("edge weight must be > 0");
  auto key = std::make_pair(src, dst);
  if (edges_.count(key)) {
    throw std::invalid_argument("duplicate edge: " + src + " -> " + dst);
  }
  edges_.emplace(std::move(key), Edge{relation, weight});
}

std::optional<CategoryGraph::Edge> CategoryGraph::query(
    const std::string& src, const std::string& dst) const {
  auto it = edges_.find(std::make_pair(src, dst));
  if (it == edges_.end()) return std::nullopt;
  return it->second;
}

CategoryGraph mine_graph(const std::vector<UserSequence>& sequences,
                         const Catalog& catalog, const GraphMineConfig& cfg) {
  if (sequences.empty()) throw std::invalid_argument("sequences empty");

  const std::size_t n_users = sequences.size();

  // Per-user category cohorts.
  std::map<std::string, std::set<std::string>> clicked;      // cat -> users
  std::map<std::string, std::set<std::string>> click_or_buy; // cat -> users
  std::map<std::string, std::set<std::string>> purchased;    // cat -> users
  std::map<std::string, std::set<std::string>> touched;      // any behavior
  // Ordered pair follow cohorts: click in src then click/purchase in dst
  // within the window.
  std::map<std::pair<std::string, std::string>, std::set<std::string>> follow;

  for (const auto& seq : sequences) {
    const auto& xs = seq.interactions;
    for (std::size_t a = 0; a < xs.size(); ++a) {
      const std::string& ca = catalog.at(xs[a].item_id).leaf_category();
      touched[ca].insert(seq.user_id);
      if (xs[a].behavior == Behavior::Click) clicked[ca].insert(seq.user_id);
      if (xs[a].behavior == Behavior::Click ||
          xs[a].behavior == Behavior::Purchase) {
        click_or_buy[ca].insert(seq.user_id);
      }
      if (xs[a].behavior == Behavior::Purchase) {
        purchased[ca].insert(seq.user_id);
      }
      if (xs[a].behavior != Behavior::Click) continue;
      for (std::size_t b = a + 1; b < xs.size(); ++b) {
        if (xs[b].ts - xs[a].ts > cfg.window_seconds) break;
        if (xs[b].ts <= xs[a].ts) continue;
        if (xs[b].behavior == Behavior::View) continue;
        const std::string& cb = catalog.at(xs[b].item_id).leaf_category();
        if (cb == ca) continue;
        follow[{ca, cb}].insert(seq.user_id);
      }
    }
  }

  auto cohort_size = [](const std::map<std::string, std::set<std::string>>& m,
                        const std::string& c) -> double {
    auto it = m.find(c);
    return it == m.end() ? 0.0 : static_cast<double>(it->second.size());
  };
  auto intersection_size = [](const std::set<std::string>& a,
                              const std::set<std::string>& b) {
    std::size_t n = 0;
    for (const auto& x : a) n += b.count(x);
    return static_cast<double>(n);
  };

  std::set<std::string> categories;
  for (const auto& [c, _] : touched) categories.insert(c);

  CategoryGraph g;
  for (const auto& src : categories) {
    for (const auto& dst : categories) {
      if (src == dst) continue;

      double complement = 0.0;
      {
        auto it = follow.find({src, dst});
        double f = it == follow.end()
                       ? 0.0
                       : static_cast<double>(it->second.size());
        double a = cohort_size(clicked, src);
        double b = cohort_size(click_or_buy, dst);
        if (f > 0.0 && a > 0.0 && b > 0.0) {
          complement = static_cast<double>(n_users) * f / (a * b);
        }
      }

      double substitute = 0.0;
      {
        double a_src = cohort_size(clicked, src);
        double a_dst = cohort_size(clicked, dst);
        double cc = (a_src > 0.0 && a_dst > 0.0)
                        ? intersection_size(clicked.at(src), clicked.at(dst))
                        : 0.0;
        double lift_cc =
            cc > 0.0 ? static_cast<double>(n_users) * cc / (a_src * a_dst)
                     : 0.0;
        double p_src = cohort_size(purchased, src);
        double p_dst = cohort_size(purchased, dst);
        double cp =
            (p_src > 0.0 && p_dst > 0.0)
                ? intersection_size(purchased.at(src), purchased.at(dst))
                : 0.0;
        double lift_cp =
            cp > 0.0 ? static_cast<double>(n_users) * cp / (p_src * p_dst)
                     : 0.0;
        substitute = lift_cc - cfg.lambda * lift_cp;
      }

      double audience = 0.0;
      {
        const auto& ts = touched.at(src);
        const auto& td = touched.at(dst);
        double inter = intersection_size(ts, td);
        double uni = static_cast<double>(ts.size() + td.size()) - inter;
        if (uni > 0.0) audience = inter / uni;
      }

      struct Scored {
        Relation rel;
        double score;
        double threshold;
      };
      const Scored scored[] = {
          {Relation::Complement, complement, cfg.complement_threshold},
          {Relation::Substitute, substitute, cfg.substitute_threshold},
          {Relation::AudienceOverlap, audience, cfg.audience_threshold},
      };
      const Scored* best = nullptr;
      for (const auto& s : scored) {
        if (s.score >= s.threshold && s.score > 0.0 &&
            (!best || s.score > best->score)) {
          best = &s;
        }
      }
      if (best) g.add_edge(src, dst, best->rel, best->score);
    }
  }
  return g;
}

std::string relation_file_tag(Relation r) {
  switch (r) {
    case Relation::Complement: return "complement";
    case Relation::Substitute: return "substitute";
    case Relation::AudienceOverlap: return "audience";
  }
  throw std::logic_error("bad Relation");
}

Relation relation_from_file_tag(const std::string& s) {
  if (s == "complement") return Relation::Complement;
  if (s == "substitute") return Relation::Substitute;
  if (s == "audience") return Relation::AudienceOverlap;
  throw std::invalid_argument("unknown relation tag: " + s);
}

void save_graph(const CategoryGraph& g, std::ostream& out) {
  using nlohmann::json;
  for (const auto& [key, edge] : g.edges()) {
    json rec;
    rec["src"] = key.first;
    rec["dst"] = key.second;
    rec["rel"] = relation_file_tag(edge.relation);
    rec["weight"] = edge.weight;
    out << rec.dump() << '\n';
  }
}

void save_graph_file(const CategoryGraph& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  save_graph(g, out);
}

CategoryGraph load_graph(std::istream& in) {
  using nlohmann::json;
  CategoryGraph g;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json rec = json::parse(line);
      g.add_edge(rec.at("src").get<std::string>(),
                 rec.at("dst").get<std::string>(),
                 relation_from_file_tag(rec.at("rel").get<std::string>()),
                 rec.at("weight").get<double>());
    } catch (const std::exception& e) {
      throw std::runtime_error("graph line " + std::to_string(line_no) + ": " +
                               e.what());
    }
  }
  return g;
}

CategoryGraph load_graph_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  return load_graph(in);
}

}  // namespace rolegen
