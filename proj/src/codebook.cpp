#include "rolegen/codebook.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

namespace rolegen {

namespace {

// Nearest centroid by squared Euclidean distance, ties to the lowest index.
int nearest_centroid(const Matrix& centroids, const Vector& x) {
  int best = 0;
  double best_d = (centroids.row(0).transpose() - x).squaredNorm();
  for (int k = 1; k < centroids.rows(); ++k) {
    double d = (centroids.row(k).transpose() - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

Matrix kmeans_pp_init(const Matrix& data, int k, std::mt19937_64& rng) {
  const int n = static_cast<int>(data.rows());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Matrix centroids(k, data.cols());

  std::uniform_int_distribution<int> first(0, n - 1);
  centroids.row(0) = data.row(first(rng));

  Vector d2(n);
  for (int i = 0; i < n; ++i) {
    d2[i] = (data.row(i) - centroids.row(0)).squaredNorm();
  }
  for (int c = 1; c < k; ++c) {
    double total = d2.sum();
    int pick;
    if (total <= 0.0) {
      pick = first(rng);  // all mass on existing centroids
    } else {
      double r = unit(rng) * total;
      double acc = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += d2[i];
        if (r <= acc) {
          pick = i;
          break;
        }
      }
    }
    centroids.row(c) = data.row(pick);
    for (int i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (data.row(i) - centroids.row(c)).squaredNorm());
    }
  }
  return centroids;
}

Matrix kmeans(const Matrix& data, int k, int iters, std::mt19937_64& rng,
              int level_for_errors) {
  const int n = static_cast<int>(data.rows());
  std::set<std::vector<double>> distinct;
  for (int i = 0; i < n && static_cast<int>(distinct.size()) < k; ++i) {
    distinct.insert(std::vector<double>(data.row(i).begin(), data.row(i).end()));
  }
  if (static_cast<int>(distinct.size()) < k) {
    throw std::invalid_argument(
        "level " + std::to_string(level_for_errors) + ": " +
        std::to_string(distinct.size()) + " distinct points for k=" +
        std::to_string(k));
  }

  Matrix centroids = kmeans_pp_init(data, k, rng);
  std::vector<int> assign(n, 0);
  for (int it = 0; it < iters; ++it) {
    for (int i = 0; i < n; ++i) {
      assign[i] = nearest_centroid(centroids, data.row(i).transpose());
    }
    Matrix sums = Matrix::Zero(k, data.cols());
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      sums.row(assign[i]) += data.row(i);
      ++counts[assign[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        centroids.row(c) = sums.row(c) / counts[c];
      } else {
        // Reseed to the point farthest from its own centroid.
        int far = 0;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
          double d = (data.row(i) - centroids.row(assign[i])).squaredNorm();
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        centroids.row(c) = data.row(far);
        assign[far] = c;
      }
    }
  }
  return centroids;
}

}  // namespace

Codebook train_codebook(const Matrix& embeddings,
                        const CodebookTrainConfig& cfg) {
  if (cfg.iters < 1) throw std::invalid_argument("iters must be >= 1");
  if (cfg.num_levels < 1) throw std::invalid_argument("num_levels must be >= 1");
  if (!embeddings.allFinite()) {
    throw std::invalid_argument("non-finite value in embeddings");
  }

  Codebook cb;
  cb.train_seed = cfg.seed;
  std::mt19937_64 rng(cfg.seed);
  Matrix residual = embeddings;
  for (int l = 0; l < cfg.num_levels; ++l) {
    const int k = cfg.level_size(l);
    if (k < 1) throw std::invalid_argument("K must be >= 1");
    Matrix centroids = kmeans(residual, k, cfg.iters, rng, l + 1);
    for (int i = 0; i < residual.rows(); ++i) {
      int c = nearest_centroid(centroids, residual.row(i).transpose());
      residual.row(i) -= centroids.row(c);
    }
    cb.levels.push_back(std::move(centroids));
  }
  return cb;
}

Sid encode(const Codebook& cb, const Vector& x) {
  if (x.size() != cb.dim()) {
    throw std::invalid_argument("embedding dimension " +
                                std::to_string(x.size()) +
                                " does not match codebook dimension " +
                                std::to_string(cb.dim()));
  }
  Sid sid;
  Vector residual = x;
  for (const auto& level : cb.levels) {
    int c = nearest_centroid(level, residual);
    sid.codes.push_back(c);
    residual -= level.row(c).transpose();
  }
  return sid;
}

Vector decode(const Codebook& cb, const Sid& sid) {
  if (static_cast<int>(sid.codes.size()) != cb.num_levels()) {
    throw std::invalid_argument("sid level count mismatch");
  }
  Vector out = Vector::Zero(cb.dim());
  for (int l = 0; l < cb.num_levels(); ++l) {
    int c = sid.codes[static_cast<size_t>(l)];
    if (c < 0 || c >= cb.level_size(l)) {
      throw std::out_of_range("sid code out of range at level " +
                              std::to_string(l + 1));
    }
    out += cb.levels[static_cast<size_t>(l)].row(c).transpose();
  }
  return out;
}

std::vector<double> residual_energy(const Codebook& cb, const Matrix& data) {
  std::vector<double> energy;
  Matrix residual = data;
  for (const auto& level : cb.levels) {
    for (int i = 0; i < residual.rows(); ++i) {
      int c = nearest_centroid(level, residual.row(i).transpose());
      residual.row(i) -= level.row(c);
    }
    energy.push_back(residual.squaredNorm() / residual.rows());
  }
  return energy;
}

CatalogAssignment assign_catalog(const Codebook& cb, const Catalog& catalog) {
  CatalogAssignment out;
  std::map<Sid, int> counts;
  for (const auto& item : catalog.items) {
    Sid sid = encode(cb, item.embedding);
    ++counts[sid];
    out.sids.emplace(item.item_id, std::move(sid));
  }
  out.report.total_items = catalog.size();
  out.report.distinct_sids = counts.size();
  for (const auto& [sid, n] : counts) {
    if (n > 1) out.report.collisions.emplace(sid, n);
  }
  return out;
}

SidVocabulary::SidVocabulary(std::vector<int> sizes)
    : level_sizes(std::move(sizes)) {
  int offset = 0;
  for (int k : level_sizes) {
    if (k < 1) throw std::invalid_argument("level size must be >= 1");
    level_offsets.push_back(offset);
    offset += k;
  }
  sid_begin_token = offset;
  sid_end_token = offset + 1;
  bos_token = offset + 2;
  total_tokens = offset + 3;
}

int SidVocabulary::token_of(int level, int code) const {
  if (level < 0 || level >= static_cast<int>(level_sizes.size()) || code < 0 ||
      code >= level_sizes[static_cast<size_t>(level)]) {
    throw std::out_of_range("token_of: bad level/code");
  }
  return level_offsets[static_cast<size_t>(level)] + code;
}

namespace {
constexpr const char* kCodebookMagic = "rolegen-codebook v1";
}

void save_codebook(const Codebook& cb, std::ostream& out) {
  out << kCodebookMagic << '\n';
  out << cb.num_levels() << ' ' << cb.dim() << ' ' << cb.train_seed << '\n';
  out.precision(17);
  for (const auto& level : cb.levels) {
    out << level.rows() << '\n';
    for (int r = 0; r < level.rows(); ++r) {
      for (int c = 0; c < level.cols(); ++c) {
        if (c) out << ' ';
        out << level(r, c);
      }
      out << '\n';
    }
  }
}

void save_codebook_file(const Codebook& cb, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  save_codebook(cb, out);
}

Codebook load_codebook(std::istream& in) {
  std::string magic;
  std::getline(in, magic);
  if (magic != kCodebookMagic) {
    throw std::runtime_error("bad codebook header: " + magic);
  }
  int levels = 0, dim = 0;
  std::uint64_t seed = 0;
  in >> levels >> dim >> seed;
  if (!in || levels < 1 || dim < 1) {
    throw std::runtime_error("bad codebook metadata");
  }
  Codebook cb;
  cb.train_seed = seed;
  for (int l = 0; l < levels; ++l) {
    int k = 0;
    in >> k;
    if (!in || k < 1) throw std::runtime_error("bad codebook level size");
    Matrix level(k, dim);
    for (int r = 0; r < k; ++r) {
      for (int c = 0; c < dim; ++c) {
        in >> level(r, c);
      }
    }
    if (!in) throw std::runtime_error("truncated codebook");
    cb.levels.push_back(std::move(level));
  }
  return cb;
}

Codebook load_codebook_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  return load_codebook(in);
}

void save_sid_map(const std::map<std::string, Sid>& sids, std::ostream& out) {
  using nlohmann::json;
  for (const auto& [item_id, sid] : sids) {
    json rec;
    rec["item_id"] = item_id;
    rec["sid"] = sid.codes;
    out << rec.dump() << '\n';
  }
}

std::map<std::string, Sid> load_sid_map(std::istream& in) {
  using nlohmann::json;
  std::map<std::string, Sid> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    Sid sid;
    sid.codes = rec.at("sid").get<std::vector<int>>();
    out.emplace(rec.at("item_id").get<std::string>(), std::move(sid));
  }
  return out;
}

std::map<std::string, Sid> load_sid_map_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  return load_sid_map(in);
}

}  // namespace rolegen
