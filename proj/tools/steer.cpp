// steer: align local embeddings to a server space, retrieve, and evaluate.
//
// Exit codes: 0 success, 2 input or validation error, 3 numerical failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "steer/steer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

const std::vector<std::size_t> kDefaultKGrid{5, 20, 50, 100, 200, 300};

// Flags that override fields of a --config file. Each flag only takes
// effect when given on the command line.
struct ConfigFlags {
  std::string config_path;
  steer::CliConfig values;
  std::string metric;
  std::vector<std::size_t> hidden;
  std::vector<std::pair<CLI::Option*, std::function<void(steer::CliConfig&)>>> setters;

  template <typename T>
  void bind(CLI::App* app, const std::string& name, T& slot, T steer::TrainConfig::*field, const std::string& help) {
    auto* opt = app->add_option(name, slot, help);
    setters.emplace_back(opt, [&slot, field](steer::CliConfig& c) { c.train.*field = slot; });
  }

  void attach(CLI::App* app, bool training) {
    app->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    auto* ridge = app->add_option("--ridge", values.ridge_lambda, "ridge lambda for linear alignment");
    setters.emplace_back(ridge, [this](steer::CliConfig& c) { c.ridge_lambda = values.ridge_lambda; });
    auto* metric_opt = app->add_option("--metric", metric, "cosine, dot or euclidean");
    setters.emplace_back(metric_opt, [this](steer::CliConfig& c) { c.metric = steer::parse_metric(metric); });
    auto* normalize = app->add_flag("--normalize,!--no-normalize", values.normalize, "L2-normalize inputs");
    setters.emplace_back(normalize, [this](steer::CliConfig& c) { c.normalize = values.normalize; });
    if (!training) return;
    auto& t = values.train;
    bind(app, "--alpha", t.alpha, &steer::TrainConfig::alpha, "cosine-distance weight");
    bind(app, "--beta", t.beta, &steer::TrainConfig::beta, "Huber weight");
    bind(app, "--gamma", t.gamma, &steer::TrainConfig::gamma, "similarity-penalty weight");
    bind(app, "--tau", t.tau, &steer::TrainConfig::tau, "similarity-penalty threshold");
    bind(app, "--huber-delta", t.huber_delta, &steer::TrainConfig::huber_delta, "Huber delta");
    bind(app, "--lr", t.learning_rate, &steer::TrainConfig::learning_rate, "Adam learning rate");
    bind(app, "--adam-beta1", t.adam_beta1, &steer::TrainConfig::adam_beta1, "Adam beta1");
    bind(app, "--adam-beta2", t.adam_beta2, &steer::TrainConfig::adam_beta2, "Adam beta2");
    bind(app, "--adam-eps", t.adam_epsilon, &steer::TrainConfig::adam_epsilon, "Adam epsilon");
    bind(app, "--epochs", t.epochs, &steer::TrainConfig::epochs, "training epochs");
    bind(app, "--batch-size", t.batch_size, &steer::TrainConfig::batch_size, "minibatch size");
    bind(app, "--seed", t.seed, &steer::TrainConfig::seed, "init and shuffle seed");
    auto* shuffle = app->add_flag("--shuffle,!--no-shuffle", t.shuffle, "shuffle pairs each epoch");
    setters.emplace_back(shuffle, [this](steer::CliConfig& c) { c.train.shuffle = values.train.shuffle; });
    auto* hidden_opt = app->add_option("--hidden", hidden, "hidden widths, overriding the preset")->delimiter(',');
    setters.emplace_back(hidden_opt, [this](steer::CliConfig& c) { c.hidden_dims = hidden; });
  }

  steer::CliConfig effective() const {
    steer::CliConfig c;
    if (!config_path.empty()) {
      json j;
      try {
        j = json::parse(steer::detail::read_file(config_path));
      } catch (const json::exception& e) {
        throw steer::Error(steer::ErrorCode::kParse, "config: " + std::string(e.what()));
      }
      c = steer::cli_config_from_json(j);
    }
    for (const auto& [opt, apply] : setters) {
      if (opt->count() > 0) apply(c);
    }
    c.train.check();
    if (!(c.ridge_lambda >= 0.0)) throw steer::Error(steer::ErrorCode::kInvalidInput, "ridge must be >= 0");
    return c;
  }
};

std::vector<std::size_t> k_grid(const std::vector<std::size_t>& given, std::size_t limit, const char* what) {
  if (!given.empty()) return given;
  std::vector<std::size_t> out;
  for (std::size_t k : kDefaultKGrid) {
    if (k <= limit) out.push_back(k);
  }
  if (out.size() < kDefaultKGrid.size()) {
    std::cerr << "note: default k values above " << what << " (" << limit << ") skipped\n";
  }
  if (out.empty()) throw steer::Error(steer::ErrorCode::kInvalidInput, std::string("no default k fits the ") + what);
  return out;
}

void write_text(const fs::path& path, const std::string& text) { steer::detail::write_file_atomic(path, text); }

fs::path with_suffix(const fs::path& path, const std::string& suffix) {
  fs::path out = path;
  out += suffix;
  return out;
}

// ---------------------------------------------------------------------------

struct AlignArgs {
  std::string local, server, method, out, log;
  ConfigFlags flags;
};

void run_align(const AlignArgs& a) {
  const steer::CliConfig cfg = a.flags.effective();
  steer::AlignmentPairs pairs{steer::read_emb(a.local, "local"), steer::read_emb(a.server, "server")};
  steer::require_valid(pairs);
  if (cfg.normalize) pairs = {steer::l2_normalize(pairs.local), steer::l2_normalize(pairs.server)};

  json metadata{{"method", a.method}, {"config", steer::to_json(cfg)}, {"normalize", cfg.normalize},
                {"pairs", pairs.local.size()}};
  std::string log = "# method=" + a.method + "\tconfig=" + steer::to_json(cfg).dump() + "\n";
  steer::StoredModel stored;
  if (a.method == "linear") {
    auto fit = steer::fit_linear(pairs, cfg.ridge_lambda);
    for (const auto& w : fit.warnings) std::cerr << "warning: " << w.message << '\n';
    metadata["residual_mse"] = fit.residual_mse;
    log += "# statistic\tvalue\nresidual_mse\t" + steer::format_double(fit.residual_mse) + '\n';
    stored.model = std::move(fit.map);
  } else {
    const std::string preset = a.method.substr(4);
    auto dims = steer::architecture(preset, pairs.local.dim(), pairs.server.dim(), cfg.hidden_dims);
    auto result = steer::train_mlp(pairs, std::move(dims), cfg.train, preset);
    if (!result.history.empty()) metadata["final_loss"] = result.history.back().total;
    log += steer::loss_log_tsv(result.history);
    stored.model = steer::TrainedMlp{std::move(result.model), cfg.train};
  }
  stored.metadata = std::move(metadata);
  steer::write_model(a.out, stored);
  write_text(a.log.empty() ? with_suffix(a.out, ".log.tsv") : fs::path(a.log), log);
}

struct TransformArgs {
  std::string model, in, out;
};

void run_transform(const TransformArgs& a) {
  const steer::StoredModel stored = steer::read_model(a.model);
  steer::EmbeddingSet input = steer::read_emb(a.in, "local");
  const bool normalize = stored.metadata.is_object() && stored.metadata.value("normalize", false);
  if (normalize) input = steer::l2_normalize(input);
  const steer::EmbeddingSet approx = steer::apply_model(stored.model, input);
  steer::write_emb(a.out, approx);
  const json echo{{"model", a.model}, {"input", a.in}, {"normalize", normalize}, {"model_metadata", stored.metadata}};
  write_text(with_suffix(a.out, ".json"), echo.dump(2) + "\n");
}

struct SearchArgs {
  std::string corpus, queries, out, metric = "cosine";
  std::size_t k = 100;
  std::size_t threads = 0;
};

void run_search(const SearchArgs& a) {
  const steer::Metric metric = steer::parse_metric(a.metric);
  const steer::EmbeddingSet corpus = steer::read_emb(a.corpus, "server");
  const steer::EmbeddingSet queries = steer::read_emb(a.queries, "approx");
  const auto run = steer::search_topk(corpus, queries, a.k, metric, a.threads);
  const json config{{"corpus", a.corpus}, {"queries", a.queries}, {"k", a.k}, {"metric", steer::to_string(metric)}};
  steer::write_run(a.out, run, config);
}

struct RecallArgs {
  std::string run, qrels, compare, out;
  std::vector<std::size_t> k;
};

steer::Qrels load_qrels(const std::string& path) {
  auto load = steer::read_qrels(path);
  if (load.dropped_nonpositive > 0) {
    std::cerr << "note: " << load.dropped_nonpositive << " qrels lines with relevance <= 0 ignored\n";
  }
  return std::move(load.qrels);
}

void run_recall(const RecallArgs& a) {
  const auto run = steer::read_run(a.run);
  const auto qrels = load_qrels(a.qrels);
  const auto ks = k_grid(a.k, run.k, "run depth");
  const json config{{"run", a.run}, {"qrels", a.qrels}, {"k", ks}, {"compare", a.compare}};
  std::string tsv;
  json report;
  if (a.compare.empty()) {
    std::vector<steer::RecallReport> reports;
    json rows = json::array();
    for (std::size_t k : ks) {
      reports.push_back(steer::recall_at_k(run, qrels, k));
      rows.push_back({{"k", k}, {"recall", reports.back().mean}, {"per_query", reports.back().per_query}});
    }
    if (!reports.front().missing_qrels.empty()) {
      std::cerr << "note: " << reports.front().missing_qrels.size() << " queries have no qrels and are excluded\n";
    }
    tsv = steer::recall_table_tsv(reports);
    report = {{"rows", rows}, {"missing_qrels", reports.front().missing_qrels}, {"config", config}};
  } else {
    const auto other = steer::read_run(a.compare);
    const auto cmp = steer::compare_runs(run, other, qrels, ks);
    tsv = steer::comparison_tsv(cmp);
    report = steer::to_json(cmp, config);
  }
  std::cout << tsv;
  if (!a.out.empty()) {
    write_text(with_suffix(a.out, ".tsv"), "# config=" + config.dump() + "\n" + tsv);
    write_text(with_suffix(a.out, ".json"), report.dump(2) + "\n");
  }
}

struct PrivacyArgs {
  std::string approx, truth, out;
  double tau = 0.9;
};

void run_privacy(const PrivacyArgs& a) {
  const auto approx = steer::read_emb(a.approx, "approx");
  const auto truth = steer::read_emb(a.truth, "server");
  const auto report = steer::deviation_report(approx, truth, a.tau);
  const json config{{"approx", a.approx}, {"truth", a.truth}, {"tau", a.tau}};
  const std::string tsv = steer::deviation_tsv(report);
  std::cout << tsv;
  if (!a.out.empty()) {
    write_text(with_suffix(a.out, ".tsv"), "# config=" + config.dump() + "\n" + tsv);
    write_text(with_suffix(a.out, ".json"), steer::to_json(report, config).dump(2) + "\n");
  }
}

struct MatchedArgs {
  std::string corpus, truth, aligned, qrels, out, metric = "cosine";
  std::vector<std::size_t> k;
  std::uint64_t seed = 0;
  std::size_t threads = 0;
};

void run_matched(const MatchedArgs& a) {
  const steer::Metric metric = steer::parse_metric(a.metric);
  const auto corpus = steer::read_emb(a.corpus, "server");
  const auto truth = steer::read_emb(a.truth, "server");
  const auto aligned = steer::read_emb(a.aligned, "approx");
  const auto qrels = load_qrels(a.qrels);
  const auto ks = k_grid(a.k, corpus.size(), "corpus size");
  const auto result = steer::matched_exposure_comparison(corpus, truth, aligned, qrels, ks, a.seed, metric, a.threads);
  const json config{{"corpus", a.corpus}, {"queries_true", a.truth}, {"queries_aligned", a.aligned},
                    {"qrels", a.qrels},   {"k", ks},                 {"seed", a.seed},
                    {"metric", steer::to_string(metric)}};
  const std::string tsv = steer::matched_tsv(result);
  std::cout << tsv;
  if (!a.out.empty()) {
    write_text(with_suffix(a.out, ".tsv"), "# config=" + config.dump() + "\n" + tsv);
    write_text(with_suffix(a.out, ".json"), steer::to_json(result, config).dump(2) + "\n");
  }
}

struct SynthArgs {
  std::string spec_path, out_dir;
  steer::SynthSpec values;
  std::string map_kind;
  std::vector<std::pair<CLI::Option*, std::function<void(steer::SynthSpec&)>>> setters;

  template <typename T>
  void bind(CLI::App* app, const std::string& name, T steer::SynthSpec::*field, const std::string& help) {
    auto* opt = app->add_option(name, values.*field, help);
    setters.emplace_back(opt, [this, field](steer::SynthSpec& s) { s.*field = values.*field; });
  }

  steer::SynthSpec effective() const {
    steer::SynthSpec s;
    if (!spec_path.empty()) {
      json j;
      try {
        j = json::parse(steer::detail::read_file(spec_path));
      } catch (const json::exception& e) {
        throw steer::Error(steer::ErrorCode::kParse, "spec: " + std::string(e.what()));
      }
      s = steer::synth_spec_from_json(j);
    }
    for (const auto& [opt, apply] : setters) {
      if (opt->count() > 0) apply(s);
    }
    s.check();
    return s;
  }
};

void run_synth(const SynthArgs& a) {
  const steer::SynthSpec spec = a.effective();
  const fs::path dir = a.out_dir;
  fs::create_directories(dir);
  const auto pairs = steer::generate_pairs(spec);
  const auto task = steer::generate_retrieval_task(spec);
  steer::write_emb(dir / "pairs_local.emb", pairs.pairs.local);
  steer::write_emb(dir / "pairs_server.emb", pairs.pairs.server);
  steer::write_emb(dir / "corpus.emb", task.corpus);
  steer::write_emb(dir / "queries_local.emb", task.queries_local);
  steer::write_emb(dir / "queries_server.emb", task.queries_server);
  steer::write_qrels(dir / "qrels.tsv", task.qrels);
  steer::StoredModel truth{pairs.truth.as_linear(),
                           {{"map_kind", steer::to_string(pairs.truth.kind)},
                            {"nonlinearity_strength", pairs.truth.strength},
                            {"linear_part_only", pairs.truth.kind == steer::MapKind::kNonlinear},
                            {"spec", steer::to_json(spec)}}};
  steer::write_model(dir / "ground_truth.model", truth);
  write_text(dir / "spec.json", steer::to_json(spec).dump(2) + "\n");
}

struct ConvertArgs {
  std::string in, out, ids, prefix = "r";
};

void run_convert(const ConvertArgs& a) {
  steer::RowMatrix matrix = steer::read_text_matrix(a.in);
  std::vector<std::string> ids;
  if (!a.ids.empty()) {
    ids = steer::decode_ids(steer::detail::read_file(a.ids));
  } else {
    for (Eigen::Index i = 0; i < matrix.rows(); ++i) ids.push_back(steer::detail::numbered(a.prefix, static_cast<std::size_t>(i)));
  }
  if (ids.size() != static_cast<std::size_t>(matrix.rows())) {
    throw steer::Error(steer::ErrorCode::kIdCountMismatch, std::to_string(ids.size()) + " ids for " +
                                                                std::to_string(matrix.rows()) + " rows");
  }
  steer::write_emb(a.out, steer::EmbeddingSet(std::move(ids), std::move(matrix)));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"steer: embedding alignment, retrieval and exposure evaluation"};
  app.require_subcommand(1);

  AlignArgs align;
  auto* align_cmd = app.add_subcommand("align", "fit a local-to-server alignment");
  align_cmd->add_option("--pairs-local", align.local, "local-space pair embeddings")->required();
  align_cmd->add_option("--pairs-server", align.server, "server-space pair embeddings")->required();
  align_cmd->add_option("--method", align.method, "alignment method")
      ->required()
      ->check(CLI::IsMember({"linear", "mlp-small", "mlp-medium", "mlp-base", "mlp-custom"}));
  align_cmd->add_option("--out", align.out, "model file")->required();
  align_cmd->add_option("--log", align.log, "training log (default <out>.log.tsv)");
  align.flags.attach(align_cmd, true);

  TransformArgs transform;
  auto* transform_cmd = app.add_subcommand("transform", "map local embeddings into the server space");
  transform_cmd->add_option("--model", transform.model, "model file")->required();
  transform_cmd->add_option("--in", transform.in, "local embeddings")->required();
  transform_cmd->add_option("--out", transform.out, "approximate embeddings")->required();

  SearchArgs search;
  auto* search_cmd = app.add_subcommand("search", "exact top-k retrieval");
  search_cmd->add_option("--corpus", search.corpus, "server-space corpus")->required();
  search_cmd->add_option("--queries", search.queries, "query embeddings")->required();
  search_cmd->add_option("--k", search.k, "list depth")->capture_default_str();
  search_cmd->add_option("--metric", search.metric, "cosine, dot or euclidean")->capture_default_str();
  search_cmd->add_option("--threads", search.threads, "worker threads (0 = STEER_THREADS or all cores)");
  search_cmd->add_option("--out", search.out, "run file")->required();

  auto* eval_cmd = app.add_subcommand("eval", "evaluate runs and exposure");
  eval_cmd->require_subcommand(1);

  RecallArgs recall;
  auto* recall_cmd = eval_cmd->add_subcommand("recall", "Recall@k table for a run");
  recall_cmd->add_option("--run", recall.run, "run file")->required();
  recall_cmd->add_option("--qrels", recall.qrels, "qrels TSV")->required();
  recall_cmd->add_option("--k", recall.k, "k values (default 5,20,50,100,200,300)")->delimiter(',');
  recall_cmd->add_option("--compare", recall.compare, "second run to compare against");
  recall_cmd->add_option("--out", recall.out, "output prefix for .tsv and .json");

  PrivacyArgs privacy;
  auto* privacy_cmd = eval_cmd->add_subcommand("privacy", "cosine deviation of approximations from the truth");
  privacy_cmd->add_option("--approx", privacy.approx, "approximate embeddings")->required();
  privacy_cmd->add_option("--truth", privacy.truth, "true server embeddings")->required();
  privacy_cmd->add_option("--tau", privacy.tau, "exposure threshold")->capture_default_str();
  privacy_cmd->add_option("--out", privacy.out, "output prefix for .tsv and .json");

  MatchedArgs matched;
  auto* matched_cmd = eval_cmd->add_subcommand("matched", "aligned vs matched-exposure Gaussian noise");
  matched_cmd->add_option("--corpus", matched.corpus, "server-space corpus")->required();
  matched_cmd->add_option("--queries-true", matched.truth, "true server query embeddings")->required();
  matched_cmd->add_option("--queries-aligned", matched.aligned, "aligned query embeddings")->required();
  matched_cmd->add_option("--qrels", matched.qrels, "qrels TSV")->required();
  matched_cmd->add_option("--k", matched.k, "k values (default 5,20,50,100,200,300)")->delimiter(',');
  matched_cmd->add_option("--seed", matched.seed, "noise seed")->capture_default_str();
  matched_cmd->add_option("--metric", matched.metric, "cosine, dot or euclidean")->capture_default_str();
  matched_cmd->add_option("--threads", matched.threads, "worker threads");
  matched_cmd->add_option("--out", matched.out, "output prefix for .tsv and .json");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic alignment and retrieval task");
  synth_cmd->add_option("--spec", synth.spec_path, "JSON spec")->check(CLI::ExistingFile);
  synth_cmd->add_option("--out-dir", synth.out_dir, "output directory")->required();
  synth.bind(synth_cmd, "--m", &steer::SynthSpec::m, "alignment pairs");
  synth.bind(synth_cmd, "--p", &steer::SynthSpec::p, "local dim");
  synth.bind(synth_cmd, "--q", &steer::SynthSpec::q, "server dim");
  auto* kind_opt = synth_cmd->add_option("--map-kind", synth.map_kind, "linear-orthogonal, linear-random or nonlinear");
  synth.setters.emplace_back(kind_opt, [&synth](steer::SynthSpec& s) { s.map_kind = steer::parse_map_kind(synth.map_kind); });
  synth.bind(synth_cmd, "--noise-sigma", &steer::SynthSpec::noise_sigma, "server-side noise std");
  synth.bind(synth_cmd, "--nonlinearity", &steer::SynthSpec::nonlinearity_strength, "tanh mixing strength");
  synth.bind(synth_cmd, "--seed", &steer::SynthSpec::seed, "generator seed");
  synth.bind(synth_cmd, "--corpus-size", &steer::SynthSpec::corpus_size, "documents, planted included");
  synth.bind(synth_cmd, "--queries", &steer::SynthSpec::query_count, "query count");
  synth.bind(synth_cmd, "--relevant", &steer::SynthSpec::relevant_per_query, "planted documents per query");

  ConvertArgs convert;
  auto* convert_cmd = app.add_subcommand("convert", "text matrix (one row per line) to an embedding file");
  convert_cmd->add_option("--in", convert.in, "whitespace-separated text matrix")->required();
  convert_cmd->add_option("--out", convert.out, "embedding file")->required();
  convert_cmd->add_option("--ids", convert.ids, "id file, one per line (default generated)");
  convert_cmd->add_option("--id-prefix", convert.prefix, "prefix for generated ids")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitInput;
  }

  try {
    if (*align_cmd) run_align(align);
    else if (*transform_cmd) run_transform(transform);
    else if (*search_cmd) run_search(search);
    else if (*recall_cmd) run_recall(recall);
    else if (*privacy_cmd) run_privacy(privacy);
    else if (*matched_cmd) run_matched(matched);
    else if (*synth_cmd) run_synth(synth);
    else if (*convert_cmd) run_convert(convert);
  } catch (const steer::Error& e) {
    std::cerr << "error " << e.what() << '\n';
    return steer::is_numerical(e.code()) ? kExitNumerical : kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  }
  return 0;
}
