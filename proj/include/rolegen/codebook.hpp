#pragma once

#include "rolegen/types.hpp"

#include <iosfwd>
#include <map>

namespace rolegen {

// Three-level residual k-means codebook over item embeddings. Level 1
// clusters the raw vectors; each deeper level clusters the residuals left by
// the levels above it.
struct Codebook {
  std::vector<Matrix> levels;  // levels[l]: K_l x dim centroid matrix
  std::uint64_t train_seed = 0;

  int num_levels() const { return static_cast<int>(levels.size()); }
  int dim() const {
    return levels.empty() ? 0 : static_cast<int>(levels.front().cols());
  }
  int level_size(int l) const { return static_cast<int>(levels[l].rows()); }
};

struct CodebookTrainConfig {
  int num_levels = 3;
  std::vector<int> level_sizes;  // K_l; a single entry is reused per level
  int iters = 25;
  std::uint64_t seed = 0;

  int level_size(int l) const {
    if (level_sizes.empty()) throw std::invalid_argument("level_sizes empty");
    return level_sizes.size() == 1 ? level_sizes[0]
                                   : level_sizes.at(static_cast<size_t>(l));
  }
};

// Squared-Euclidean RQ-KMeans with seeded k-means++ initialization. An empty
// cluster is reseeded to the point farthest from its assigned centroid.
// Throws if any level has fewer distinct points than centroids or the input
// contains non-finite values.
Codebook train_codebook(const Matrix& embeddings,
                        const CodebookTrainConfig& cfg);

// Greedy nearest centroid per level on the running residual; distance ties
// break toward the lowest centroid index.
Sid encode(const Codebook& cb, const Vector& x);

// Sum of the selected centroids.
Vector decode(const Codebook& cb, const Sid& sid);

// Mean squared residual norm after each level on the given data.
std::vector<double> residual_energy(const Codebook& cb, const Matrix& data);

struct CollisionReport {
  // Sids carried by more than one item, with their item counts.
  std::map<Sid, int> collisions;
  std::size_t total_items = 0;
  std::size_t distinct_sids = 0;
};

struct CatalogAssignment {
  std::map<std::string, Sid> sids;  // item_id -> Sid
  CollisionReport report;
};

CatalogAssignment assign_catalog(const Codebook& cb, const Catalog& catalog);

// -----------------------------------------------------------------------
// Token vocabulary shared by prompts and the backbone: per-level code
// ranges, then <sid_begin>, <sid_end>, and BOS.
// -----------------------------------------------------------------------
struct SidVocabulary {
  std::vector<int> level_sizes;
  std::vector<int> level_offsets;
  int sid_begin_token = 0;
  int sid_end_token = 0;
  int bos_token = 0;
  int total_tokens = 0;

  explicit SidVocabulary(std::vector<int> sizes);
  int token_of(int level, int code) const;  // level 0-based
};

// Versioned text persistence.
void save_codebook(const Codebook& cb, std::ostream& out);
void save_codebook_file(const Codebook& cb, const std::string& path);
Codebook load_codebook(std::istream& in);
Codebook load_codebook_file(const std::string& path);

void save_sid_map(const std::map<std::string, Sid>& sids, std::ostream& out);
std::map<std::string, Sid> load_sid_map(std::istream& in);
std::map<std::string, Sid> load_sid_map_file(const std::string& path);

}  // namespace rolegen
