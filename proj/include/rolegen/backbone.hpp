#pragma once

#include "rolegen/tape.hpp"
#include "rolegen/types.hpp"

#include <iosfwd>
#include <map>
#include <random>

namespace rolegen {

struct BackboneConfig {
  int d_model = 64;
  int n_layers = 6;
  int n_heads = 4;
  int d_ff = 128;
  std::vector<int> level_sizes = {16, 16, 16};  // K_l
  int max_ctx_items = 128;   // history items; each expands to 3 tokens
  int user_buckets = 64;     // hashed static-feature vocabulary
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;

  int num_levels() const { return static_cast<int>(level_sizes.size()); }
  void validate() const;
};

// Reasoner candidates plus coarse-level SID histograms, injected into the
// context through zero-initialized projections so a fresh guidance path is
// behavior-preserving.
struct GuidanceFeatures {
  std::vector<Sid> candidates;     // top-N, rank order
  std::vector<int> hist1, hist2;   // raw per-code candidate counts
  std::vector<int> hist1_q, hist2_q;  // counts quantized to 8 buckets (0..7)
  bool present = false;
};

GuidanceFeatures build_guidance(const std::vector<Sid>& candidates,
                                const BackboneConfig& cfg, int top_n = 25);

struct BackboneExample {
  int user_bucket = 0;
  std::vector<Sid> history;  // oldest first; truncated to max_ctx_items
  GuidanceFeatures guidance;
  Sid target;
};

int hash_user_bucket(const std::string& user_id, int buckets);

// Static key/value memory computed once per example and reused by every
// decoder step.
struct ContextCache {
  Matrix keys;    // T x d_model
  Matrix values;  // T x d_model
};

struct BeamCandidate {
  Sid sid;
  double logp;
};

struct TrainConfig {
  int epochs = 3;
  int batch_size = 32;
  double peak_lr = 1e-4;  // cosine decay to 0 over all steps
  std::uint64_t shuffle_seed = 0;
};

struct TrainReport {
  double initial_loss = 0.0;
  std::vector<double> epoch_losses;
  bool diverged = false;  // params rolled back to last finite epoch
};

class Backbone {
 public:
  explicit Backbone(BackboneConfig cfg);

  const BackboneConfig& config() const { return cfg_; }
  std::map<std::string, Matrix>& params() { return params_; }
  const std::map<std::string, Matrix>& params() const { return params_; }

  ContextCache encode_context(const BackboneExample& ex) const;

  // Logits over the level-(prefix.size()+1) vocabulary; prefix length 0..2.
  Vector forward(const ContextCache& cache,
                 const std::vector<int>& prefix) const;

  // Eq.-8 style objective: mean over the batch of the mean over levels of
  // the teacher-forced negative log-likelihood.
  double loss(const std::vector<BackboneExample>& batch) const;

  // Loss plus analytic gradients for every parameter tensor.
  double loss_and_grad(const std::vector<BackboneExample>& batch,
                       std::map<std::string, Matrix>& grads) const;

  TrainReport train(const std::vector<BackboneExample>& dataset,
                    const TrainConfig& tcfg);

  // Level-synchronous beam search; results sorted by logp descending, ties
  // by lexicographic codes. Returns min(beam_width, K1*K2*K3) hypotheses.
  std::vector<BeamCandidate> beam_search(const ContextCache& cache,
                                         int beam_width) const;

  void save(std::ostream& out) const;
  void save_file(const std::string& path) const;
  static Backbone load(std::istream& in);
  static Backbone load_file(const std::string& path);

 private:
  struct GraphParams;  // per-graph leaf ids

  void init_params();
  int context_token_count(const BackboneExample& ex) const;
  // Shared graph builder: returns the final hidden states (rows = decoder
  // positions) for a teacher-forced pass.
  Tape::Id build_decoder(Tape& tape, const GraphParams& gp,
                         const BackboneExample& ex,
                         const std::vector<int>& dec_tokens) const;
  Tape::Id build_context(Tape& tape, const GraphParams& gp,
                         const BackboneExample& ex, Tape::Id* k_out,
                         Tape::Id* v_out) const;
  Tape::Id example_loss(Tape& tape, const GraphParams& gp,
                        const BackboneExample& ex) const;

  BackboneConfig cfg_;
  std::map<std::string, Matrix> params_;

  // Adam state, keyed like params_.
  std::map<std::string, Matrix> adam_m_, adam_v_;
  long adam_t_ = 0;
};

}  // namespace rolegen
