#include "rolegen/backbone.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

namespace rolegen {

namespace {
constexpr double kMaskNegative = -1e30;
}

void BackboneConfig::validate() const {
  if (d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1) {
    throw std::invalid_argument("backbone dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("d_model must be divisible by n_heads");
  }
  if (level_sizes.empty()) {
    throw std::invalid_argument("level_sizes empty");
  }
  for (int k : level_sizes) {
    if (k < 1) throw std::invalid_argument("level size must be >= 1");
  }
  if (max_ctx_items < 1 || user_buckets < 1) {
    throw std::invalid_argument("context sizes must be positive");
  }
}

int hash_user_bucket(const std::string& user_id, int buckets) {
  return static_cast<int>(std::hash<std::string>{}(user_id) %
                          static_cast<std::size_t>(buckets));
}

GuidanceFeatures build_guidance(const std::vector<Sid>& candidates,
                                const BackboneConfig& cfg, int top_n) {
  GuidanceFeatures g;
  g.hist1.assign(static_cast<size_t>(cfg.level_sizes[0]), 0);
  g.hist2.assign(static_cast<size_t>(cfg.level_sizes.size() > 1
                                         ? cfg.level_sizes[1]
                                         : 1),
                 0);
  if (candidates.empty()) {
    g.hist1_q = g.hist1;
    g.hist2_q = g.hist2;
    return g;  // absent
  }
  for (const auto& sid : candidates) {
    if (static_cast<int>(sid.codes.size()) != cfg.num_levels()) {
      throw std::invalid_argument("guidance candidate has wrong level count");
    }
    for (int l = 0; l < cfg.num_levels(); ++l) {
      if (sid.codes[static_cast<size_t>(l)] < 0 ||
          sid.codes[static_cast<size_t>(l)] >= cfg.level_sizes[static_cast<size_t>(l)]) {
        throw std::invalid_argument("guidance candidate code out of range");
      }
    }
    g.candidates.push_back(sid);
    if (static_cast<int>(g.candidates.size()) >= top_n) break;
  }
  const int n = static_cast<int>(g.candidates.size());
  for (const auto& sid : g.candidates) {
    ++g.hist1[static_cast<size_t>(sid.codes[0])];
    if (sid.codes.size() > 1) ++g.hist2[static_cast<size_t>(sid.codes[1])];
  }
  // Count c quantized to one of 8 buckets: 0 stays 0, otherwise
  // ceil(7c/n) in 1..7.
  auto quantize = [n](const std::vector<int>& h) {
    std::vector<int> q(h.size(), 0);
    for (std::size_t i = 0; i < h.size(); ++i) {
      if (h[i] > 0) q[i] = std::min(7, (7 * h[i] + n - 1) / n);
    }
    return q;
  };
  g.hist1_q = quantize(g.hist1);
  g.hist2_q = quantize(g.hist2);
  g.present = true;
  return g;
}

Backbone::Backbone(BackboneConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  init_params();
}

void Backbone::init_params() {
  std::mt19937_64 rng(cfg_.seed);
  std::normal_distribution<double> gauss(0.0, 0.02);
  auto randn = [&](int rows, int cols) {
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) m(r, c) = gauss(rng);
    }
    return m;
  };
  const int d = cfg_.d_model;

  for (int l = 0; l < cfg_.num_levels(); ++l) {
    params_["embed.level" + std::to_string(l + 1)] =
        randn(cfg_.level_sizes[static_cast<size_t>(l)], d);
  }
  params_["embed.bos"] = randn(1, d);
  params_["embed.user"] = randn(cfg_.user_buckets, d);
  params_["embed.ctx_pos"] = randn(1 + 3 * cfg_.max_ctx_items, d);
  params_["embed.dec_pos"] = randn(cfg_.num_levels(), d);

  // Guidance path: zero so presence/absence of guidance is a no-op until
  // warm-start fine-tuning moves it.
  const int hist_dim = cfg_.level_sizes[0] +
                       (cfg_.num_levels() > 1 ? cfg_.level_sizes[1] : 1);
  params_["guide.hist"] = Matrix::Zero(hist_dim, d);
  params_["guide.cand"] = Matrix::Zero(d, d);

  params_["ctx.norm"] = Matrix::Ones(1, d);
  params_["ctx.wk"] = randn(d, d);
  params_["ctx.wv"] = randn(d, d);

  for (int i = 0; i < cfg_.n_layers; ++i) {
    const std::string p = "l" + std::to_string(i) + ".";
    params_[p + "cross.norm"] = Matrix::Ones(1, d);
    params_[p + "cross.wq"] = randn(d, d);
    params_[p + "cross.wo"] = randn(d, d);
    params_[p + "self.norm"] = Matrix::Ones(1, d);
    params_[p + "self.wq"] = randn(d, d);
    params_[p + "self.wk"] = randn(d, d);
    params_[p + "self.wv"] = randn(d, d);
    params_[p + "self.wo"] = randn(d, d);
    params_[p + "ffn.norm"] = Matrix::Ones(1, d);
    params_[p + "ffn.w1"] = randn(d, cfg_.d_ff);
    params_[p + "ffn.b1"] = Matrix::Zero(1, cfg_.d_ff);
    params_[p + "ffn.w2"] = randn(cfg_.d_ff, d);
    params_[p + "ffn.b2"] = Matrix::Zero(1, d);
  }
  params_["out.norm"] = Matrix::Ones(1, d);
  for (int l = 0; l < cfg_.num_levels(); ++l) {
    params_["out.head" + std::to_string(l + 1)] =
        randn(d, cfg_.level_sizes[static_cast<size_t>(l)]);
  }
}

int Backbone::context_token_count(const BackboneExample& ex) const {
  return 1 + cfg_.num_levels() * static_cast<int>(ex.history.size());
}

// ---------------------------------------------------------------------------
// Tape graph (training path)
// ---------------------------------------------------------------------------

struct Backbone::GraphParams {
  std::map<std::string, Tape::Id> ids;
  Tape::Id at(const std::string& name) const { return ids.at(name); }
};

namespace {

// Multi-head attention from precomputed q/k/v nodes; mask may be -1.
Tape::Id attention(Tape& tape, Tape::Id q, Tape::Id k, Tape::Id v, int heads,
                   Tape::Id mask) {
  const int d = static_cast<int>(tape.value(q).cols());
  const int dh = d / heads;
  std::vector<Tape::Id> outs;
  for (int h = 0; h < heads; ++h) {
    Tape::Id qh = tape.slice_cols(q, h * dh, dh);
    Tape::Id kh = tape.slice_cols(k, h * dh, dh);
    Tape::Id vh = tape.slice_cols(v, h * dh, dh);
    Tape::Id scores =
        tape.scale(tape.matmul(qh, tape.transpose(kh)), 1.0 / std::sqrt(dh));
    Tape::Id weights = tape.softmax_rows(scores, mask);
    outs.push_back(tape.matmul(weights, vh));
  }
  return tape.concat_cols(outs);
}

}  // namespace

Tape::Id Backbone::build_context(Tape& tape, const GraphParams& gp,
                                 const BackboneExample& ex, Tape::Id* k_out,
                                 Tape::Id* v_out) const {
  const int n_hist = static_cast<int>(ex.history.size());
  if (n_hist > cfg_.max_ctx_items) {
    throw std::invalid_argument(
        "context overflow: " + std::to_string(n_hist) + " history items, max " +
        std::to_string(cfg_.max_ctx_items));
  }

  // Token 0: user static features; tokens 1..: per-item level tokens.
  std::vector<Tape::Id> rows;
  rows.push_back(tape.gather_rows(gp.at("embed.user"), {ex.user_bucket}));
  for (const auto& sid : ex.history) {
    if (static_cast<int>(sid.codes.size()) != cfg_.num_levels()) {
      throw std::invalid_argument("history sid has wrong level count");
    }
    for (int l = 0; l < cfg_.num_levels(); ++l) {
      rows.push_back(tape.gather_rows(
          gp.at("embed.level" + std::to_string(l + 1)),
          {sid.codes[static_cast<size_t>(l)]}));
    }
  }
  // Stack rows via concat on the transpose.
  std::vector<Tape::Id> cols;
  cols.reserve(rows.size());
  for (Tape::Id r : rows) cols.push_back(tape.transpose(r));
  Tape::Id x = tape.transpose(tape.concat_cols(cols));

  std::vector<int> pos(static_cast<size_t>(context_token_count(ex)));
  std::iota(pos.begin(), pos.end(), 0);
  x = tape.add(x, tape.gather_rows(gp.at("embed.ctx_pos"), pos));

  if (ex.guidance.present) {
    // Quantized histogram features through the zero-initialized projection.
    const int hist_dim = static_cast<int>(params_.at("guide.hist").rows());
    Matrix phi = Matrix::Zero(1, hist_dim);
    for (std::size_t i = 0; i < ex.guidance.hist1_q.size(); ++i) {
      phi(0, static_cast<int>(i)) = ex.guidance.hist1_q[i] / 7.0;
    }
    for (std::size_t i = 0; i < ex.guidance.hist2_q.size(); ++i) {
      phi(0, static_cast<int>(ex.guidance.hist1_q.size() + i)) =
          ex.guidance.hist2_q[i] / 7.0;
    }
    Tape::Id g = tape.matmul(tape.input(std::move(phi)), gp.at("guide.hist"));

    // Mean candidate embedding through its own zero-initialized projection.
    if (!ex.guidance.candidates.empty()) {
      std::vector<Tape::Id> embs;
      for (const auto& sid : ex.guidance.candidates) {
        for (int l = 0; l < cfg_.num_levels(); ++l) {
          embs.push_back(tape.transpose(tape.gather_rows(
              gp.at("embed.level" + std::to_string(l + 1)),
              {sid.codes[static_cast<size_t>(l)]})));
        }
      }
      Tape::Id stacked = tape.transpose(tape.concat_cols(embs));
      Tape::Id mean_emb = tape.scale(
          tape.sum_rows(stacked),
          1.0 / static_cast<double>(ex.guidance.candidates.size()));
      g = tape.add(g, tape.matmul(mean_emb, gp.at("guide.cand")));
    }

    // Additive injection into the static-feature token: with the guidance
    // projections at zero the context is bit-identical to the unguided one.
    Matrix sel = Matrix::Zero(static_cast<int>(tape.value(x).rows()), 1);
    sel(0, 0) = 1.0;
    x = tape.add(x, tape.matmul(tape.input(std::move(sel)), g));
  }

  Tape::Id xn = tape.cwise_mul_row_broadcast(tape.rmsnorm(x), gp.at("ctx.norm"));
  *k_out = tape.matmul(xn, gp.at("ctx.wk"));
  *v_out = tape.matmul(xn, gp.at("ctx.wv"));
  return x;
}

Tape::Id Backbone::build_decoder(Tape& tape, const GraphParams& gp,
                                 const BackboneExample& ex,
                                 const std::vector<int>& dec_tokens) const {
  Tape::Id ctx_k = -1, ctx_v = -1;
  build_context(tape, gp, ex, &ctx_k, &ctx_v);

  // Decoder inputs: BOS then the already-generated level codes.
  const int steps = static_cast<int>(dec_tokens.size()) + 1;
  std::vector<Tape::Id> cols;
  cols.push_back(tape.transpose(tape.gather_rows(gp.at("embed.bos"), {0})));
  for (std::size_t l = 0; l < dec_tokens.size(); ++l) {
    cols.push_back(tape.transpose(
        tape.gather_rows(gp.at("embed.level" + std::to_string(l + 1)),
                         {dec_tokens[l]})));
  }
  Tape::Id x = tape.transpose(tape.concat_cols(cols));
  std::vector<int> pos(static_cast<size_t>(steps));
  std::iota(pos.begin(), pos.end(), 0);
  x = tape.add(x, tape.gather_rows(gp.at("embed.dec_pos"), pos));

  Matrix mask = Matrix::Zero(steps, steps);
  for (int r = 0; r < steps; ++r) {
    for (int c = r + 1; c < steps; ++c) mask(r, c) = kMaskNegative;
  }
  Tape::Id causal = tape.input(std::move(mask));

  for (int i = 0; i < cfg_.n_layers; ++i) {
    const std::string p = "l" + std::to_string(i) + ".";

    // Lazy cross attention over the static cache: the cache never sees the
    // per-layer query projection, it was built once from the context.
    Tape::Id h =
        tape.cwise_mul_row_broadcast(tape.rmsnorm(x), gp.at(p + "cross.norm"));
    Tape::Id q = tape.matmul(h, gp.at(p + "cross.wq"));
    Tape::Id cross = attention(tape, q, ctx_k, ctx_v, cfg_.n_heads, -1);
    x = tape.add(x, tape.matmul(cross, gp.at(p + "cross.wo")));

    h = tape.cwise_mul_row_broadcast(tape.rmsnorm(x), gp.at(p + "self.norm"));
    Tape::Id sq = tape.matmul(h, gp.at(p + "self.wq"));
    Tape::Id sk = tape.matmul(h, gp.at(p + "self.wk"));
    Tape::Id sv = tape.matmul(h, gp.at(p + "self.wv"));
    Tape::Id self = attention(tape, sq, sk, sv, cfg_.n_heads, causal);
    x = tape.add(x, tape.matmul(self, gp.at(p + "self.wo")));

    h = tape.cwise_mul_row_broadcast(tape.rmsnorm(x), gp.at(p + "ffn.norm"));
    Tape::Id ff = tape.gelu(
        tape.add_row_broadcast(tape.matmul(h, gp.at(p + "ffn.w1")),
                               gp.at(p + "ffn.b1")));
    x = tape.add(x, tape.add_row_broadcast(tape.matmul(ff, gp.at(p + "ffn.w2")),
                                           gp.at(p + "ffn.b2")));
  }
  return tape.cwise_mul_row_broadcast(tape.rmsnorm(x), gp.at("out.norm"));
}

Tape::Id Backbone::example_loss(Tape& tape, const GraphParams& gp,
                                const BackboneExample& ex) const {
  if (static_cast<int>(ex.target.codes.size()) != cfg_.num_levels()) {
    throw std::invalid_argument("target sid has wrong level count");
  }
  for (int l = 0; l < cfg_.num_levels(); ++l) {
    int code = ex.target.codes[static_cast<size_t>(l)];
    if (code < 0 || code >= cfg_.level_sizes[static_cast<size_t>(l)]) {
      throw std::invalid_argument("target code out of range at level " +
                                  std::to_string(l + 1));
    }
  }
  std::vector<int> teacher(ex.target.codes.begin(), ex.target.codes.end() - 1);
  Tape::Id hidden = build_decoder(tape, gp, ex, teacher);

  std::vector<Tape::Id> level_losses;
  for (int l = 0; l < cfg_.num_levels(); ++l) {
    Tape::Id row = tape.slice_cols(tape.transpose(hidden), l, 1);
    Tape::Id logits = tape.matmul(
        tape.transpose(row), gp.at("out.head" + std::to_string(l + 1)));
    level_losses.push_back(tape.cross_entropy(
        logits, {ex.target.codes[static_cast<size_t>(l)]}));
  }
  return tape.mean(level_losses);
}

double Backbone::loss(const std::vector<BackboneExample>& batch) const {
  std::map<std::string, Matrix> grads;
  // Single code path; the gradient work is the same graph walked backwards
  // and is cheap relative to forward at these sizes.
  return loss_and_grad(batch, grads);
}

double Backbone::loss_and_grad(const std::vector<BackboneExample>& batch,
                               std::map<std::string, Matrix>& grads) const {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  Tape tape;
  GraphParams gp;
  for (const auto& [name, value] : params_) {
    gp.ids[name] = tape.input(value);
  }
  std::vector<Tape::Id> losses;
  losses.reserve(batch.size());
  for (const auto& ex : batch) {
    losses.push_back(example_loss(tape, gp, ex));
  }
  Tape::Id total = tape.mean(losses);
  tape.backward(total);
  grads.clear();
  for (const auto& [name, id] : gp.ids) {
    grads[name] = tape.grad(id);
  }
  return tape.value(total)(0, 0);
}

// ---------------------------------------------------------------------------
// Plain inference path (no tape). Mirrors the graph math exactly; a unit
// test pins the two paths together.
// ---------------------------------------------------------------------------

namespace {

Matrix rmsnorm_rows(const Matrix& x, double eps = 1e-6) {
  Matrix y(x.rows(), x.cols());
  const auto n = static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    y.row(r) = x.row(r) / std::sqrt(x.row(r).squaredNorm() / n + eps);
  }
  return y;
}

Matrix softmax_rows_plain(Matrix z) {
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    Eigen::RowVectorXd e = (z.row(r).array() - z.row(r).maxCoeff()).exp();
    z.row(r) = e / e.sum();
  }
  return z;
}

Matrix attention_plain(const Matrix& q, const Matrix& k, const Matrix& v,
                       int heads, const Matrix* mask) {
  const int d = static_cast<int>(q.cols());
  const int dh = d / heads;
  Matrix out(q.rows(), d);
  for (int h = 0; h < heads; ++h) {
    Matrix scores = q.middleCols(h * dh, dh) *
                    k.middleCols(h * dh, dh).transpose() / std::sqrt(dh);
    if (mask) scores += *mask;
    out.middleCols(h * dh, dh) =
        softmax_rows_plain(std::move(scores)) * v.middleCols(h * dh, dh);
  }
  return out;
}

Matrix gelu_plain(Matrix x) {
  x = (0.5 * x.array() * (1.0 + (x.array() / std::sqrt(2.0)).unaryExpr([](double v) { return std::erf(v); }))).matrix();
  return x;
}

}  // namespace

ContextCache Backbone::encode_context(const BackboneExample& ex) const {
  const int n_hist = static_cast<int>(ex.history.size());
  if (n_hist > cfg_.max_ctx_items) {
    throw std::invalid_argument(
        "context overflow: " + std::to_string(n_hist) + " history items, max " +
        std::to_string(cfg_.max_ctx_items));
  }
  const int d = cfg_.d_model;
  const int tokens = context_token_count(ex);
  Matrix x(tokens, d);
  x.row(0) = params_.at("embed.user").row(ex.user_bucket);
  int at = 1;
  for (const auto& sid : ex.history) {
    for (int l = 0; l < cfg_.num_levels(); ++l) {
      x.row(at++) = params_.at("embed.level" + std::to_string(l + 1))
                        .row(sid.codes[static_cast<size_t>(l)]);
    }
  }
  x += params_.at("embed.ctx_pos").topRows(tokens);

  if (ex.guidance.present) {
    const Matrix& w_hist = params_.at("guide.hist");
    Eigen::RowVectorXd phi = Eigen::RowVectorXd::Zero(w_hist.rows());
    for (std::size_t i = 0; i < ex.guidance.hist1_q.size(); ++i) {
      phi[static_cast<Eigen::Index>(i)] = ex.guidance.hist1_q[i] / 7.0;
    }
    for (std::size_t i = 0; i < ex.guidance.hist2_q.size(); ++i) {
      phi[static_cast<Eigen::Index>(ex.guidance.hist1_q.size() + i)] =
          ex.guidance.hist2_q[i] / 7.0;
    }
    Eigen::RowVectorXd g = phi * w_hist;
    if (!ex.guidance.candidates.empty()) {
      Eigen::RowVectorXd mean_emb = Eigen::RowVectorXd::Zero(d);
      for (const auto& sid : ex.guidance.candidates) {
        for (int l = 0; l < cfg_.num_levels(); ++l) {
          mean_emb += params_.at("embed.level" + std::to_string(l + 1))
                          .row(sid.codes[static_cast<size_t>(l)]);
        }
      }
      mean_emb /= static_cast<double>(ex.guidance.candidates.size());
      g += mean_emb * params_.at("guide.cand");
    }
    x.row(0) += g;
  }

  Matrix xn = rmsnorm_rows(x);
  xn.array().rowwise() *= params_.at("ctx.norm").row(0).array();
  ContextCache cache;
  cache.keys = xn * params_.at("ctx.wk");
  cache.values = xn * params_.at("ctx.wv");
  return cache;
}

Vector Backbone::forward(const ContextCache& cache,
                         const std::vector<int>& prefix) const {
  const int levels = cfg_.num_levels();
  if (static_cast<int>(prefix.size()) >= levels) {
    throw std::invalid_argument("sequence complete: prefix already has " +
                                std::to_string(prefix.size()) + " codes");
  }
  const int steps = static_cast<int>(prefix.size()) + 1;
  const int d = cfg_.d_model;

  Matrix x(steps, d);
  x.row(0) = params_.at("embed.bos").row(0);
  for (std::size_t l = 0; l < prefix.size(); ++l) {
    int code = prefix[l];
    if (code < 0 || code >= cfg_.level_sizes[l]) {
      throw std::invalid_argument("prefix code out of range");
    }
    x.row(static_cast<Eigen::Index>(l + 1)) =
        params_.at("embed.level" + std::to_string(l + 1)).row(code);
  }
  x += params_.at("embed.dec_pos").topRows(steps);

  Matrix causal = Matrix::Zero(steps, steps);
  for (int r = 0; r < steps; ++r) {
    for (int c = r + 1; c < steps; ++c) causal(r, c) = kMaskNegative;
  }

  for (int i = 0; i < cfg_.n_layers; ++i) {
    const std::string p = "l" + std::to_string(i) + ".";
    Matrix h = rmsnorm_rows(x);
    h.array().rowwise() *= params_.at(p + "cross.norm").row(0).array();
    Matrix q = h * params_.at(p + "cross.wq");
    x += attention_plain(q, cache.keys, cache.values, cfg_.n_heads, nullptr) *
         params_.at(p + "cross.wo");

    h = rmsnorm_rows(x);
    h.array().rowwise() *= params_.at(p + "self.norm").row(0).array();
    Matrix sq = h * params_.at(p + "self.wq");
    Matrix sk = h * params_.at(p + "self.wk");
    Matrix sv = h * params_.at(p + "self.wv");
    x += attention_plain(sq, sk, sv, cfg_.n_heads, &causal) *
         params_.at(p + "self.wo");

    h = rmsnorm_rows(x);
    h.array().rowwise() *= params_.at(p + "ffn.norm").row(0).array();
    Matrix ff = gelu_plain(
        (h * params_.at(p + "ffn.w1")).rowwise() +
        params_.at(p + "ffn.b1").row(0));
    x += (ff * params_.at(p + "ffn.w2")).rowwise() +
         params_.at(p + "ffn.b2").row(0);
  }
  Matrix h = rmsnorm_rows(x);
  h.array().rowwise() *= params_.at("out.norm").row(0).array();
  Vector logits =
      (h.row(steps - 1) *
       params_.at("out.head" + std::to_string(steps)))
          .transpose();
  if (!logits.allFinite()) throw std::runtime_error("non-finite logits");
  return logits;
}

std::vector<BeamCandidate> Backbone::beam_search(const ContextCache& cache,
                                                 int beam_width) const {
  if (beam_width < 1) throw std::invalid_argument("beam_width must be >= 1");
  struct Hyp {
    std::vector<int> codes;
    double logp;
  };
  std::vector<Hyp> beam{{{}, 0.0}};
  for (int level = 0; level < cfg_.num_levels(); ++level) {
    std::vector<Hyp> expanded;
    expanded.reserve(beam.size() *
                     static_cast<size_t>(cfg_.level_sizes[static_cast<size_t>(level)]));
    for (const auto& hyp : beam) {
      Vector logits = forward(cache, hyp.codes);
      // log-softmax
      const double m = logits.maxCoeff();
      const double lse = m + std::log((logits.array() - m).exp().sum());
      for (int code = 0; code < logits.size(); ++code) {
        Hyp next = hyp;
        next.codes.push_back(code);
        next.logp += logits[code] - lse;
        expanded.push_back(std::move(next));
      }
    }
    std::sort(expanded.begin(), expanded.end(), [](const Hyp& a, const Hyp& b) {
      if (a.logp != b.logp) return a.logp > b.logp;
      return a.codes < b.codes;
    });
    if (static_cast<int>(expanded.size()) > beam_width) {
      expanded.resize(static_cast<size_t>(beam_width));
    }
    beam = std::move(expanded);
  }
  std::vector<BeamCandidate> out;
  out.reserve(beam.size());
  for (auto& hyp : beam) {
    out.push_back(BeamCandidate{Sid{std::move(hyp.codes)}, hyp.logp});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

TrainReport Backbone::train(const std::vector<BackboneExample>& dataset,
                            const TrainConfig& tcfg) {
  if (dataset.empty()) throw std::invalid_argument("empty dataset");
  if (tcfg.epochs < 1 || tcfg.batch_size < 1) {
    throw std::invalid_argument("bad train config");
  }
  TrainReport report;
  {
    // Chunked so the graph never holds more than one batch.
    double sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t start = 0; start < dataset.size();
         start += static_cast<std::size_t>(tcfg.batch_size)) {
      const std::size_t stop =
          std::min(dataset.size(), start + static_cast<std::size_t>(tcfg.batch_size));
      std::vector<BackboneExample> chunk(dataset.begin() + static_cast<long>(start),
                                         dataset.begin() + static_cast<long>(stop));
      sum += loss(chunk) * static_cast<double>(chunk.size());
      counted += chunk.size();
    }
    report.initial_loss = sum / static_cast<double>(counted);
  }

  if (adam_m_.empty()) {
    for (const auto& [name, value] : params_) {
      adam_m_[name] = Matrix::Zero(value.rows(), value.cols());
      adam_v_[name] = Matrix::Zero(value.rows(), value.cols());
    }
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(tcfg.shuffle_seed);

  const long steps_per_epoch =
      (static_cast<long>(dataset.size()) + tcfg.batch_size - 1) /
      tcfg.batch_size;
  const long total_steps = steps_per_epoch * tcfg.epochs;

  std::map<std::string, Matrix> last_good = params_;
  auto last_good_m = adam_m_;
  auto last_good_v = adam_v_;
  long step = 0;

  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    long batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<size_t>(tcfg.batch_size)) {
      std::vector<BackboneExample> batch;
      for (std::size_t i = start;
           i < std::min(order.size(), start + static_cast<size_t>(tcfg.batch_size));
           ++i) {
        batch.push_back(dataset[order[i]]);
      }
      std::map<std::string, Matrix> grads;
      double batch_loss = loss_and_grad(batch, grads);
      if (!std::isfinite(batch_loss)) {
        params_ = last_good;
        adam_m_ = last_good_m;
        adam_v_ = last_good_v;
        report.diverged = true;
        return report;
      }
      epoch_loss += batch_loss;
      ++batches;

      const double lr =
          tcfg.peak_lr * 0.5 *
          (1.0 + std::cos(M_PI * static_cast<double>(step) /
                          static_cast<double>(total_steps)));
      ++step;
      ++adam_t_;
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(adam_t_));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(adam_t_));
      for (auto& [name, value] : params_) {
        const Matrix& g = grads.at(name);
        Matrix& m = adam_m_.at(name);
        Matrix& v = adam_v_.at(name);
        m = kBeta1 * m + (1.0 - kBeta1) * g;
        v = kBeta2 * v.array().matrix() +
            (1.0 - kBeta2) * g.array().square().matrix();
        value.array() -= lr * (m.array() / bc1) /
                         ((v.array() / bc2).sqrt() + kEps);
      }
    }
    report.epoch_losses.push_back(epoch_loss / static_cast<double>(batches));
    last_good = params_;
    last_good_m = adam_m_;
    last_good_v = adam_v_;
  }
  return report;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {
constexpr const char* kCheckpointMagic = "rolegen-backbone v1";
}

void Backbone::save(std::ostream& out) const {
  using nlohmann::json;
  out << kCheckpointMagic << '\n';
  json meta;
  meta["d_model"] = cfg_.d_model;
  meta["n_layers"] = cfg_.n_layers;
  meta["n_heads"] = cfg_.n_heads;
  meta["d_ff"] = cfg_.d_ff;
  meta["level_sizes"] = cfg_.level_sizes;
  meta["max_ctx_items"] = cfg_.max_ctx_items;
  meta["user_buckets"] = cfg_.user_buckets;
  meta["learning_rate"] = cfg_.learning_rate;
  meta["seed"] = cfg_.seed;
  out << meta.dump() << '\n';
  out.precision(17);
  out << params_.size() << '\n';
  for (const auto& [name, value] : params_) {
    out << name << ' ' << value.rows() << ' ' << value.cols() << '\n';
    for (Eigen::Index r = 0; r < value.rows(); ++r) {
      for (Eigen::Index c = 0; c < value.cols(); ++c) {
        if (c) out << ' ';
        out << value(r, c);
      }
      out << '\n';
    }
  }
}

void Backbone::save_file(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  save(out);
}

Backbone Backbone::load(std::istream& in) {
  using nlohmann::json;
  std::string magic;
  std::getline(in, magic);
  if (magic != kCheckpointMagic) {
    throw std::runtime_error("bad checkpoint header: " + magic);
  }
  std::string meta_line;
  std::getline(in, meta_line);
  json meta = json::parse(meta_line);
  BackboneConfig cfg;
  cfg.d_model = meta.at("d_model").get<int>();
  cfg.n_layers = meta.at("n_layers").get<int>();
  cfg.n_heads = meta.at("n_heads").get<int>();
  cfg.d_ff = meta.at("d_ff").get<int>();
  cfg.level_sizes = meta.at("level_sizes").get<std::vector<int>>();
  cfg.max_ctx_items = meta.at("max_ctx_items").get<int>();
  cfg.user_buckets = meta.at("user_buckets").get<int>();
  cfg.learning_rate = meta.at("learning_rate").get<double>();
  cfg.seed = meta.at("seed").get<std::uint64_t>();

  Backbone model(cfg);
  std::size_t count = 0;
  in >> count;
  for (std::size_t i = 0; i < count; ++i) {
    std::string name;
    Eigen::Index rows = 0, cols = 0;
    in >> name >> rows >> cols;
    if (!in) throw std::runtime_error("truncated checkpoint");
    Matrix value(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) in >> value(r, c);
    }
    auto it = model.params_.find(name);
    if (it == model.params_.end()) {
      throw std::runtime_error("unknown tensor in checkpoint: " + name);
    }
    if (it->second.rows() != rows || it->second.cols() != cols) {
      throw std::runtime_error("tensor shape mismatch: " + name);
    }
    it->second = std::move(value);
  }
  if (!in) throw std::runtime_error("truncated checkpoint");
  return model;
}

Backbone Backbone::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  return load(in);
}

}  // namespace rolegen
