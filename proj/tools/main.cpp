// Pipeline driver: every stage reads declared inputs from --out-dir, writes
// its outputs atomically, and exits nonzero with a one-line error on any
// failure.

#include "rolegen/cotrain.hpp"
#include "rolegen/core.hpp"
#include "rolegen/evalkit.hpp"
#include "rolegen/synthworld.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rolegen;

namespace {

struct Ctx {
  fs::path out_dir = ".";
  json cfg = json::object();
  std::optional<std::uint64_t> seed_override;

  json section(const std::string& name) const {
    return cfg.contains(name) ? cfg.at(name) : json::object();
  }
  std::uint64_t seed(const json& s, std::uint64_t fallback) const {
    if (seed_override) return *seed_override;
    return s.value("seed", fallback);
  }
  fs::path path(const std::string& name) const { return out_dir / name; }
};

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  return j.value(key, fallback);
}

void write_atomic(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot open " + tmp.string());
    out << content;
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

template <typename Fn>
void write_atomic_with(const fs::path& path, Fn fn) {
  std::ostringstream out;
  fn(out);
  write_atomic(path, out.str());
}

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing input: " + path.string());
  return in;
}

std::vector<UserSequence> load_sequences(const Ctx& ctx,
                                         const Catalog& catalog) {
  IngestConfig icfg;
  icfg.keep_view_rate = 1.0;  // pipeline-internal logs are already sampled
  auto in = open_input(ctx.path("interactions.jsonl"));
  return ingest_interactions(in, catalog, icfg).sequences;
}

std::map<std::string, Sid> load_sids(const Ctx& ctx) {
  auto in = open_input(ctx.path("sid_map.jsonl"));
  return load_sid_map(in);
}

// Shared split: the last interaction is the held-out target, the rest is
// history.
struct UserSplit {
  UserSequence history;
  Interaction target;
};

std::optional<UserSplit> split_last(const UserSequence& seq) {
  if (seq.interactions.size() < 2) return std::nullopt;
  UserSplit split;
  split.history = seq;
  split.target = split.history.interactions.back();
  split.history.interactions.pop_back();
  return split;
}

BackboneConfig backbone_config(const Ctx& ctx, const Codebook& cb) {
  json s = ctx.section("backbone");
  BackboneConfig cfg;
  cfg.d_model = get_or(s, "d_model", cfg.d_model);
  cfg.n_layers = get_or(s, "n_layers", cfg.n_layers);
  cfg.n_heads = get_or(s, "n_heads", cfg.n_heads);
  cfg.d_ff = get_or(s, "d_ff", cfg.d_ff);
  cfg.max_ctx_items = get_or(s, "max_ctx_items", cfg.max_ctx_items);
  cfg.user_buckets = get_or(s, "user_buckets", cfg.user_buckets);
  cfg.learning_rate = get_or(s, "learning_rate", cfg.learning_rate);
  cfg.level_sizes.clear();
  for (int l = 0; l < cb.num_levels(); ++l) {
    cfg.level_sizes.push_back(cb.level_size(l));
  }
  cfg.seed = ctx.seed(s, 0);
  return cfg;
}

std::map<std::string, std::vector<Sid>> load_guidance_map(const Ctx& ctx) {
  std::map<std::string, std::vector<Sid>> out;
  auto path = ctx.path("reasoner_cache.jsonl");
  if (!fs::exists(path)) return out;
  auto in = open_input(path);
  for (const auto& entry : load_reasoner_cache(in)) {
    auto& sids = out[entry.user_id];
    for (const auto& c : entry.candidates) sids.push_back(c.sid);
  }
  return out;
}

BackboneExample make_example(const UserSequence& history,
                             const std::map<std::string, Sid>& sid_map,
                             const BackboneConfig& bcfg,
                             const std::vector<Sid>& guidance_sids) {
  BackboneExample ex;
  ex.user_bucket = hash_user_bucket(history.user_id, bcfg.user_buckets);
  for (const auto& x : history.interactions) {
    auto it = sid_map.find(x.item_id);
    if (it != sid_map.end()) ex.history.push_back(it->second);
  }
  if (static_cast<int>(ex.history.size()) > bcfg.max_ctx_items) {
    ex.history.erase(ex.history.begin(), ex.history.end() - bcfg.max_ctx_items);
  }
  ex.guidance = build_guidance(guidance_sids, bcfg);
  return ex;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

void cmd_gen_world(const Ctx& ctx) {
  json s = ctx.section("world");
  WorldConfig cfg = WorldConfig::desk_default();
  cfg.n_categories = get_or(s, "n_categories", cfg.n_categories);
  cfg.items_per_category = get_or(s, "items_per_category", cfg.items_per_category);
  cfg.embedding_dim = get_or(s, "embedding_dim", cfg.embedding_dim);
  cfg.n_users = get_or(s, "n_users", cfg.n_users);
  cfg.steps_per_user = get_or(s, "steps_per_user", cfg.steps_per_user);
  cfg.dormant_fraction = get_or(s, "dormant_fraction", cfg.dormant_fraction);
  cfg.chain_fidelity = get_or(s, "chain_fidelity", cfg.chain_fidelity);
  cfg.seed = ctx.seed(s, cfg.seed);
  if (cfg.n_categories != 50) {
    WorldConfig re = WorldConfig::desk_default();  // defaults assume 50
    re = cfg;
    re.edges.clear();
    cfg = re;
    int n_durable = (cfg.n_categories + 1) / 2 - 1;
    int n_fmcg = cfg.n_categories - n_durable;
    for (int i = 0; i < n_fmcg; ++i) {
      if (n_durable > 0) {
        cfg.edges.push_back(
            {i, n_fmcg + i % n_durable, Relation::Complement, 2.0});
      }
      if (n_fmcg > 1) {
        cfg.edges.push_back({i, (i + 1) % n_fmcg, Relation::Substitute, 1.5});
      }
    }
    for (int j = 0; j < n_durable; ++j) {
      cfg.edges.push_back(
          {n_fmcg + j, j % n_fmcg, Relation::AudienceOverlap, 0.5});
    }
  }

  World world = generate_world(cfg);
  write_atomic_with(ctx.path("catalog.jsonl"),
                    [&](std::ostream& o) { save_catalog(world.catalog, o); });
  write_atomic_with(ctx.path("interactions.jsonl"), [&](std::ostream& o) {
    save_interactions(world.sequences, o);
  });
  write_atomic_with(ctx.path("graph.jsonl"),
                    [&](std::ostream& o) { save_graph(world.graph, o); });
  write_atomic_with(ctx.path("truth.jsonl"),
                    [&](std::ostream& o) { save_truth(world.truth, o); });
  std::cerr << "gen-world: " << world.catalog.size() << " items, "
            << world.sequences.size() << " users\n";
}

void cmd_build_codebook(const Ctx& ctx) {
  json s = ctx.section("codebook");
  Catalog catalog = load_catalog_file(ctx.path("catalog.jsonl").string());
  CodebookTrainConfig cfg;
  cfg.num_levels = get_or(s, "num_levels", 3);
  cfg.level_sizes = get_or(s, "level_sizes", std::vector<int>{16});
  cfg.iters = get_or(s, "iters", 25);
  cfg.seed = ctx.seed(s, 0);

  Matrix embeddings(catalog.size(), catalog.embedding_dim());
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    embeddings.row(static_cast<long>(i)) = catalog.items[i].embedding;
  }
  Codebook cb = train_codebook(embeddings, cfg);
  CatalogAssignment assignment = assign_catalog(cb, catalog);

  write_atomic_with(ctx.path("codebook.txt"),
                    [&](std::ostream& o) { save_codebook(cb, o); });
  write_atomic_with(ctx.path("sid_map.jsonl"), [&](std::ostream& o) {
    save_sid_map(assignment.sids, o);
  });
  std::cerr << "build-codebook: " << assignment.report.distinct_sids
            << " distinct sids over " << assignment.report.total_items
            << " items\n";
}

void cmd_mine_graph(const Ctx& ctx) {
  json s = ctx.section("graph");
  Catalog catalog = load_catalog_file(ctx.path("catalog.jsonl").string());
  auto sequences = load_sequences(ctx, catalog);
  GraphMineConfig cfg;
  cfg.window_seconds = get_or(s, "window_seconds", cfg.window_seconds);
  cfg.complement_threshold =
      get_or(s, "complement_threshold", cfg.complement_threshold);
  cfg.substitute_threshold =
      get_or(s, "substitute_threshold", cfg.substitute_threshold);
  cfg.audience_threshold =
      get_or(s, "audience_threshold", cfg.audience_threshold);
  cfg.lambda = get_or(s, "lambda", cfg.lambda);
  CategoryGraph mined = mine_graph(sequences, catalog, cfg);
  write_atomic_with(ctx.path("mined_graph.jsonl"),
                    [&](std::ostream& o) { save_graph(mined, o); });
  std::cerr << "mine-graph: " << mined.size() << " edges\n";
}

void cmd_label_roles(const Ctx& ctx) {
  Catalog catalog = load_catalog_file(ctx.path("catalog.jsonl").string());
  CategoryGraph graph = load_graph_file(ctx.path("graph.jsonl").string());
  auto sequences = load_sequences(ctx, catalog);
  CategoryStats stats = CategoryStats::build(catalog);
  RoleThresholds thresholds;
  BehaviorWeights weights;

  write_atomic_with(ctx.path("roles.jsonl"), [&](std::ostream& o) {
    for (const auto& seq : sequences) {
      InterestProfile profile = compute_interest_profile(seq, catalog, weights);
      auto roles =
          assign_sequence_roles(seq, catalog, stats, thresholds, profile, graph);
      save_role_dump(seq.user_id, roles, o);
    }
  });
  std::cerr << "label-roles: " << sequences.size() << " users\n";
}

void cmd_emit_sft(const Ctx& ctx) {
  Catalog catalog = load_catalog_file(ctx.path("catalog.jsonl").string());
  CategoryGraph graph = load_graph_file(ctx.path("graph.jsonl").string());
  auto sid_map = load_sids(ctx);
  auto sequences = load_sequences(ctx, catalog);
  CategoryStats stats = CategoryStats::build(catalog);
  RoleThresholds thresholds;
  BehaviorWeights weights;

  std::vector<PromptRecord> records = build_alignment_records(catalog, sid_map);
  std::size_t skipped = 0;
  for (const auto& seq : sequences) {
    auto split = split_last(seq);
    if (!split) continue;
    const std::string& target = split->target.item_id;
    if (!sid_map.count(target)) continue;
    InterestProfile profile =
        compute_interest_profile(split->history, catalog, weights);
    auto roles = assign_sequence_roles(split->history, catalog, stats,
                                       thresholds, profile, graph);
    auto key_items =
        extract_key_items(split->history, roles, thresholds.max_key_items);
    RoleTrajectory trajectory = build_role_trajectory(key_items, roles);
    FunctionalRole target_role =
        assign_role(catalog.at(target), stats, thresholds, profile, graph);
    try {
      records.push_back(build_frcot_record(split->history, profile, trajectory,
                                           sid_map, target, target_role));
    } catch (const std::invalid_argument&) {
      ++skipped;  // target repeats inside the history
    }
    auto stepwise =
        build_stepwise_records(split->history, profile, trajectory, sid_map,
                               catalog, target, target_role);
    records.insert(records.end(), stepwise.begin(), stepwise.end());
  }
  write_atomic_with(ctx.path("sft.jsonl"),
                    [&](std::ostream& o) { save_records(records, o); });
  std::cerr << "emit-sft: " << records.size() << " records, " << skipped
            << " users without a novel target\n";
}

void cmd_reason(const Ctx& ctx) {
  json s = ctx.section("reasoner");
  Catalog catalog = load_catalog_file(ctx.path("catalog.jsonl").string());
  CategoryGraph graph = load_graph_file(ctx.path("graph.jsonl").string());
  auto sid_map = load_sids(ctx);
  auto sequences = load_sequences(ctx, catalog);
  CategoryStats stats = CategoryStats::build(catalog);
  RoleThresholds thresholds;
  BehaviorWeights weights;

  DormancyConfig dcfg;
  dcfg.delta_t_days = get_or(s, "delta_t_days", 30);
  dcfg.now_ts = get_or(s, "now_ts", std::int64_t{0});
  if (dcfg.now_ts == 0) {
    for (const auto& seq : sequences) {
      for (const auto& x : seq.interactions) dcfg.now_ts = std::max(dcfg.now_ts, x.ts);
    }
  }
  const int beam = get_or(s, "beam", 25);
  const std::size_t n_queries = get_or(s, "queries_per_user", std::size_t{3});
  const std::size_t top_g = get_or(s, "top_g", std::size_t{10});
  const std::uint64_t seed = ctx.seed(s, 0);
  const std::string mode = get_or(s, "mode", std::string("mock"));

  MockOracle oracle =
      MockOracle::build(catalog, stats, thresholds, graph, sid_map, sequences);
  GlobalRoleTable table;
  for (const auto& seq : sequences) {
    for (const auto& x : seq.interactions) {
      if (x.behavior != Behavior::Purchase) continue;
      const Item* item = catalog.find(x.item_id);
      if (!item) continue;
      IntrinsicRole ir = assign_intrinsic_roles(*item, stats, thresholds);
      table.add(RoleClass{ir.pop, ir.repl, ir.cost, {}});
    }
  }

  RemoteEndpointConfig remote;
  if (mode == "remote") {
    json r = s.value("endpoint", json::object());
    remote.host = get_or(r, "host", remote.host);
    remote.port = get_or(r, "port", remote.port);
    remote.path = get_or(r, "path", remote.path);
    remote.model = get_or(r, "model", remote.model);
    remote.auth_header = get_or(r, "auth_header", remote.auth_header);
    remote.temperature = get_or(r, "temperature", remote.temperature);
  }

  std::vector<ReasonerCacheEntry> cache;
  std::size_t user_index = 0;
  for (const auto& seq : sequences) {
    ++user_index;
    if (!classify_dormant(seq, dcfg)) continue;
    InterestProfile profile = compute_interest_profile(seq, catalog, weights);
    auto roles =
        assign_sequence_roles(seq, catalog, stats, thresholds, profile, graph);
    auto key_items = extract_key_items(seq, roles, thresholds.max_key_items);
    RoleTrajectory trajectory = build_role_trajectory(key_items, roles);
    auto candidate_roles = build_candidate_roles(trajectory, table, top_g);
    if (candidate_roles.empty()) continue;
    auto queries = sample_counterfactuals(
        seq, profile, trajectory, sid_map, candidate_roles, table, n_queries,
        seed + 0x9E3779B97F4A7C15ULL * user_index);

    ReasonerCacheEntry entry;
    entry.user_id = seq.user_id;
    entry.generated_at = dcfg.now_ts;
    for (const auto& q : queries) {
      ReasonerOutput out = mode == "remote" ? remote_reason(q, remote, beam)
                                            : mock_reason(q, oracle, beam);
      for (const auto& c : out.candidates) {
        bool dup = false;
        for (const auto& have : entry.candidates) {
          if (have.sid == c.sid) {
            dup = true;
            break;
          }
        }
        if (!dup) entry.candidates.push_back(c);
      }
    }
    cache.push_back(std::move(entry));
  }
  write_atomic_with(ctx.path("reasoner_cache.jsonl"), [&](std::ostream& o) {
    save_reasoner_cache(cache, o);
  });
  std::cerr << "reason: " << cache.size() << " dormant users\n";
}

void cmd_train_backbone(const Ctx& ctx) {
  json s = ctx.section("train");
  Catalog catalog = load_catalog_file(ctx.path("catalog.jsonl").string());
  Codebook cb = load_codebook_file(ctx.path("codebook.txt").string());
  auto sid_map = load_sids(ctx);
  auto sequences = load_sequences(ctx, catalog);
  const bool guided = get_or(s, "guided", false);
  auto guidance_map = guided ? load_guidance_map(ctx)
                             : std::map<std::string, std::vector<Sid>>{};

  BackboneConfig bcfg = backbone_config(ctx, cb);
  TrainConfig tcfg;
  tcfg.epochs = get_or(s, "epochs", tcfg.epochs);
  tcfg.batch_size = get_or(s, "batch_size", tcfg.batch_size);
  tcfg.peak_lr = get_or(s, "peak_lr", tcfg.peak_lr);
  tcfg.shuffle_seed = ctx.seed(s, 0);

  std::vector<BackboneExample> dataset;
  static const std::vector<Sid> kNoGuidance;
  for (const auto& seq : sequences) {
    auto split = split_last(seq);
    if (!split || !sid_map.count(split->target.item_id)) continue;
    auto git = guidance_map.find(seq.user_id);
    BackboneExample ex = make_example(
        split->history, sid_map, bcfg,
        git != guidance_map.end() ? git->second : kNoGuidance);
    ex.target = sid_map.at(split->target.item_id);
    dataset.push_back(std::move(ex));
  }
  if (dataset.empty()) throw std::runtime_error("no trainable examples");

  const std::string warm_start = get_or(s, "warm_start", std::string());
  Backbone model = warm_start.empty()
                       ? Backbone(bcfg)
                       : Backbone::load_file((ctx.out_dir / warm_start).string());
  TrainReport report = model.train(dataset, tcfg);
  model.save_file(ctx.path("backbone.ckpt").string());

  json out;
  out["initial_loss"] = report.initial_loss;
  out["epoch_losses"] = report.epoch_losses;
  out["diverged"] = report.diverged;
  out["examples"] = dataset.size();
  write_atomic(ctx.path("train_report.json"), out.dump(2) + "\n");
  std::cerr << "train-backbone: " << dataset.size() << " examples, final loss "
            << (report.epoch_losses.empty() ? report.initial_loss
                                            : report.epoch_losses.back())
            << "\n";
}

void cmd_infer(const Ctx& ctx) {
  json s = ctx.section("infer");
  Catalog catalog = load_catalog_file(ctx.path("catalog.jsonl").string());
  auto sid_map = load_sids(ctx);
  auto sequences = load_sequences(ctx, catalog);
  Backbone model = Backbone::load_file(ctx.path("backbone.ckpt").string());
  const bool guided = get_or(s, "guided", false);
  auto guidance_map = guided ? load_guidance_map(ctx)
                             : std::map<std::string, std::vector<Sid>>{};
  const int beam = get_or(s, "beam", 100);

  write_atomic_with(ctx.path("candidates.jsonl"), [&](std::ostream& o) {
    static const std::vector<Sid> kNoGuidance;
    for (const auto& seq : sequences) {
      auto split = split_last(seq);
      if (!split) continue;
      auto git = guidance_map.find(seq.user_id);
      BackboneExample ex = make_example(
          split->history, sid_map, model.config(),
          git != guidance_map.end() ? git->second : kNoGuidance);
      ContextCache cache = model.encode_context(ex);
      auto hypotheses = model.beam_search(cache, beam);
      json j;
      j["user_id"] = seq.user_id;
      j["candidates"] = json::array();
      for (const auto& h : hypotheses) {
        j["candidates"].push_back({{"sid", h.sid.codes}, {"logp", h.logp}});
      }
      o << j.dump() << '\n';
    }
  });
  std::cerr << "infer: beam " << beam << " over " << sequences.size()
            << " users\n";
}

void cmd_evaluate(const Ctx& ctx) {
  json s = ctx.section("eval");
  Catalog catalog = load_catalog_file(ctx.path("catalog.jsonl").string());
  auto sid_map = load_sids(ctx);
  auto sequences = load_sequences(ctx, catalog);
  const std::string source = get_or(s, "source", std::string("candidates"));

  std::map<std::string, std::vector<Sid>> ranked;
  if (source == "popularity") {
    std::vector<UserSequence> train;
    for (const auto& seq : sequences) {
      auto split = split_last(seq);
      if (split) train.push_back(split->history);
    }
    std::vector<Sid> global;
    for (const auto& [item_id, count] :
         popularity_baseline(train, get_or(s, "k", std::size_t{100}))) {
      if (sid_map.count(item_id)) global.push_back(sid_map.at(item_id));
    }
    for (const auto& seq : sequences) ranked[seq.user_id] = global;
  } else {
    auto in = open_input(ctx.path("candidates.jsonl"));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      auto& sids = ranked[j.at("user_id").get<std::string>()];
      for (const auto& c : j.at("candidates")) {
        Sid sid;
        sid.codes = c.at("sid").get<std::vector<int>>();
        sids.push_back(sid);
      }
    }
  }

  std::vector<EvalInstance> instances;
  for (const auto& seq : sequences) {
    auto split = split_last(seq);
    if (!split || !sid_map.count(split->target.item_id)) continue;
    auto rit = ranked.find(seq.user_id);
    if (rit == ranked.end() || rit->second.empty()) continue;
    EvalInstance inst;
    inst.user_id = seq.user_id;
    for (const auto& x : split->history.interactions) {
      auto it = sid_map.find(x.item_id);
      if (it != sid_map.end()) inst.history.push_back(it->second);
    }
    inst.truth = sid_map.at(split->target.item_id);
    inst.candidates = rit->second;
    instances.push_back(std::move(inst));
  }
  if (instances.empty()) throw std::runtime_error("no evaluable instances");

  MetricReport report = compute_report(instances);
  write_atomic_with(ctx.path("report.json"),
                    [&](std::ostream& o) { save_report_json(report, o); });
  std::string table = render_report_table(report);
  write_atomic(ctx.path("report.txt"), table);
  std::cout << table;
}

void cmd_cotrain(const Ctx& ctx) {
  json s = ctx.section("loop");
  Catalog catalog = load_catalog_file(ctx.path("catalog.jsonl").string());
  CategoryGraph graph = load_graph_file(ctx.path("graph.jsonl").string());
  auto sid_map = load_sids(ctx);
  auto sequences = load_sequences(ctx, catalog);
  Backbone model = Backbone::load_file(ctx.path("backbone.ckpt").string());

  DormancyConfig dcfg;
  dcfg.delta_t_days = get_or(s, "delta_t_days", 30);
  for (const auto& seq : sequences) {
    for (const auto& x : seq.interactions) dcfg.now_ts = std::max(dcfg.now_ts, x.ts);
  }

  LoopInputs inputs;
  inputs.catalog = catalog;
  inputs.graph = graph;
  inputs.sid_map = sid_map;
  inputs.train_sequences = sequences;
  for (const auto& seq : sequences) {
    if (!classify_dormant(seq, dcfg)) continue;
    auto split = split_last(seq);
    if (!split || !sid_map.count(split->target.item_id)) continue;
    inputs.next_item[seq.user_id] = split->target.item_id;
    inputs.histories.push_back(std::move(split->history));
  }

  LoopConfig cfg;
  cfg.rounds = get_or(s, "rounds", cfg.rounds);
  cfg.users_per_round = get_or(s, "users_per_round", cfg.users_per_round);
  cfg.reasoner_beam = get_or(s, "reasoner_beam", cfg.reasoner_beam);
  cfg.backbone_beam = get_or(s, "backbone_beam", cfg.backbone_beam);
  cfg.queries_per_user = get_or(s, "queries_per_user", cfg.queries_per_user);
  cfg.top_g = get_or(s, "top_g", cfg.top_g);
  cfg.fine_tune_between_rounds = get_or(s, "fine_tune_between_rounds", false);
  cfg.feedback = get_or(s, "feedback", std::string("synthetic")) == "replay"
                     ? FeedbackSource::LogReplay
                     : FeedbackSource::SyntheticEnv;
  cfg.seed = ctx.seed(s, 0);

  LoopState state = init_loop(std::move(inputs), &model);
  auto reports = run_loop(state, cfg);

  write_atomic_with(ctx.path("rounds.jsonl"), [&](std::ostream& o) {
    save_round_reports(reports, o);
  });
  write_atomic_with(ctx.path("reflections.jsonl"), [&](std::ostream& o) {
    save_records(state.reflections, o);
  });
  model.save_file(ctx.path("backbone.ckpt").string());
  for (const auto& r : reports) {
    std::cerr << "cotrain round " << r.round << ": HI@10 " << r.hit_at_10
              << " over " << r.feedback_with_truth << " feedback events\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rolegen pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".";
  std::optional<std::uint64_t> seed;

  struct Cmd {
    const char* name;
    const char* help;
    void (*fn)(const Ctx&);
  };
  const Cmd cmds[] = {
      {"gen-world", "generate the synthetic world", cmd_gen_world},
      {"build-codebook", "train the residual codebook and assign sids",
       cmd_build_codebook},
      {"mine-graph", "mine category relations from interactions",
       cmd_mine_graph},
      {"label-roles", "assign functional roles per user", cmd_label_roles},
      {"emit-sft", "emit the instruction-tuning dataset", cmd_emit_sft},
      {"reason", "run counterfactual reasoning for dormant users", cmd_reason},
      {"train-backbone", "train the generative backbone", cmd_train_backbone},
      {"infer", "beam-search candidates for every user", cmd_infer},
      {"evaluate", "compute and print the metric report", cmd_evaluate},
      {"cotrain", "run the closed reasoning-execution-feedback loop",
       cmd_cotrain},
  };

  std::map<std::string, void (*)(const Ctx&)> dispatch;
  for (const auto& c : cmds) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--out-dir", out_dir, "working directory");
    sub->add_option("--seed", seed, "override the stage seed");
    dispatch[c.name] = c.fn;
  }

  CLI11_PARSE(app, argc, argv);

  try {
    Ctx ctx;
    ctx.out_dir = out_dir;
    ctx.seed_override = seed;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw std::runtime_error("missing config: " + config_path);
      in >> ctx.cfg;
    }
    fs::create_directories(ctx.out_dir);
    dispatch.at(app.get_subcommands().front()->get_name())(ctx);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& ch : msg) {
      if (ch == '\n') ch = ' ';
    }
    std::cerr << "error: " << msg << "\n";
    return 1;
  }
  return 0;
}
