// Acceptance suite: one PASS/FAIL line per top-level criterion.
//
// Exit status is 0 when every criterion passes or fails only where listed
// with --expect-fail, 1 otherwise.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "gradient_check.hpp"
#include "steer/steer.hpp"
#include "test_support.hpp"

namespace {

using steer::EmbeddingSet;
using steer::RowMatrix;
using steer::RowMatrixD;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n == 0) return 0.0;
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int run_cli(const std::filesystem::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && '" STEER_CLI_PATH "' " + args + " > cli.log 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// ---------------------------------------------------------------------------

Outcome exact_recovery() {
  testing_support::TempDir dir("acceptance-exact");
  const auto start = std::chrono::steady_clock::now();
  const std::string steps[] = {
      "synth --out-dir s --map-kind linear-random --noise-sigma 0 --m 500 --p 64 --q 96 --corpus-size 2000 "
      "--queries 50 --seed 7",
      "align --pairs-local s/pairs_local.emb --pairs-server s/pairs_server.emb --method linear --ridge 0 --out a.model",
      "transform --model a.model --in s/queries_local.emb --out q.emb",
      "search --corpus s/corpus.emb --queries q.emb --k 20 --out aligned.run",
      "search --corpus s/corpus.emb --queries s/queries_server.emb --k 20 --out truth.run",
      "eval recall --run truth.run --qrels s/qrels.tsv --compare aligned.run --k 1,5,20 --out cmp",
  };
  for (const auto& step : steps) {
    if (run_cli(dir.path(), step) != 0) {
      return {false, "step failed: " + step + ": " + steer::detail::read_file(dir / "cli.log")};
    }
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const auto truth = steer::read_run(dir / "truth.run");
  const auto aligned = steer::read_run(dir / "aligned.run");
  std::size_t mismatched = 0;
  for (std::size_t k : {1u, 5u, 20u}) {
    for (std::size_t qi = 0; qi < truth.queries.size(); ++qi) {
      for (std::size_t r = 0; r < k; ++r) {
        if (truth.queries[qi].hits[r].doc_id != aligned.queries[qi].hits[r].doc_id) {
          ++mismatched;
          break;
        }
      }
    }
  }
  const auto fitted = steer::read_linear_model(dir / "a.model");
  const auto truth_map = steer::read_linear_model(dir / "s" / "ground_truth.model");
  const double frob = (fitted.matrix.cast<double>() - truth_map.matrix.cast<double>()).norm();
  const bool pass = mismatched == 0 && aligned.queries.size() == 50 && frob < 1e-5 && seconds < 60.0;
  return {pass, "mismatched top-k lists " + std::to_string(mismatched) + " over k in {1,5,20}, ||A - A_true||_F " +
                    fmt(frob, 3) + ", runtime " + fmt(seconds, 3) + " s"};
}

Outcome residual_orthogonality() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    steer::SynthSpec spec;
    spec.map_kind = steer::MapKind::kNonlinear;
    spec.nonlinearity_strength = 0.5;
    spec.noise_sigma = 0.1;
    spec.m = 400;
    spec.p = 24;
    spec.q = 36;
    spec.seed = 1000 + seed;
    const auto pairs = steer::generate_pairs(spec).pairs;
    const auto fit = steer::fit_linear(pairs, 0.0);
    const Eigen::MatrixXd el = pairs.local.vectors().cast<double>();
    const Eigen::MatrixXd es = pairs.server.vectors().cast<double>();
    const double lhs = (el.transpose() * (el * fit.map.matrix.cast<double>() - es)).cwiseAbs().maxCoeff();
    const double rhs = std::max(1.0, (el.transpose() * es).cwiseAbs().maxCoeff());
    worst = std::max(worst, lhs / rhs);
  }
  return {worst <= 1e-4, "worst normalised residual correlation " + fmt(worst, 3) + " over 20 seeds (bound 1e-4)"};
}

Outcome gradient_correctness() {
  double worst = 0.0;
  std::size_t max_params = 0;
  bool all_active = true;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto c = testing_support::make_gradient_case(500 + seed);
    const auto r = testing_support::check_gradient(c);
    worst = std::max(worst, r.max_rel_error);
    max_params = std::max(max_params, r.params);
    all_active = all_active && r.loss.mse > 0 && r.loss.cos_dist > 0 && r.loss.huber > 0 && r.loss.sim_penalty > 0;
  }
  const bool pass = worst < 1e-3 && max_params <= 1000 && all_active;
  return {pass, "max relative error " + fmt(worst, 3) + " over 20 models (<= " + std::to_string(max_params) +
                    " params), all four terms active: " + (all_active ? "yes" : "no")};
}

Outcome loss_unit_checks() {
  const auto ids = testing_support::make_ids(4);
  // rows at cosine 0.9 to the unit target e_1
  RowMatrixD target = RowMatrixD::Zero(4, 2);
  RowMatrixD pred(4, 2);
  for (Eigen::Index i = 0; i < 4; ++i) {
    target(i, 0) = 1.0;
    pred(i, 0) = 0.9;
    pred(i, 1) = std::sqrt(1.0 - 0.81);
  }
  steer::TrainConfig cfg;
  cfg.tau = 1.0;
  const double at_tau_one = steer::loss_from_outputs(target, target, cfg).sim_penalty;
  cfg.tau = 0.8;
  const double at_point_nine = steer::loss_from_outputs(pred, target, cfg).sim_penalty;
  cfg.huber_delta = 1.0;
  const RowMatrixD shifted = target.array() + 0.5;
  const double huber = steer::loss_from_outputs(shifted, target, cfg).huber;
  const bool pass = std::abs(at_tau_one) <= 1e-9 && std::abs(at_point_nine - 0.1) <= 1e-9 && std::abs(huber - 0.125) <= 1e-9;
  return {pass, "sim(tau=1) " + fmt(at_tau_one, 17) + ", sim(cos .9, tau .8) " + fmt(at_point_nine, 17) +
                    ", huber(0.5, delta 1) " + fmt(huber, 17)};
}

// Nonlinear pipeline shared by the two alignment-quality criteria.
struct NonlinearSetup {
  std::size_t seeds = 10;
  double strength = 0.7;
  std::size_t m = 2000;
  std::size_t p = 32;
  std::size_t q = 48;
  std::size_t corpus = 2000;
  std::size_t queries = 50;
  std::vector<std::size_t> hidden{256, 256};
  std::size_t epochs = 100;
};

struct SeedResult {
  double recall_mlp = 0.0;
  double recall_linear = 0.0;
  double recall_noise = 0.0;
  double cos_mlp = 0.0;
  double cos_noise = 0.0;
};

std::vector<SeedResult> run_nonlinear(const NonlinearSetup& setup, double strength) {
  std::vector<SeedResult> out;
  for (std::uint64_t seed = 0; seed < setup.seeds; ++seed) {
    steer::SynthSpec spec;
    spec.map_kind = steer::MapKind::kNonlinear;
    spec.nonlinearity_strength = strength;
    spec.m = setup.m;
    spec.p = setup.p;
    spec.q = setup.q;
    spec.corpus_size = setup.corpus;
    spec.query_count = setup.queries;
    spec.seed = 2000 + seed;
    const auto pairs = steer::generate_pairs(spec).pairs;
    const auto task = steer::generate_retrieval_task(spec);

    steer::TrainConfig cfg;
    cfg.epochs = setup.epochs;
    cfg.seed = seed;
    auto dims = steer::architecture("base", spec.p, spec.q, setup.hidden);
    const auto mlp = steer::train_mlp(pairs, dims, cfg, "base");
    const auto aligned = steer::apply_mlp(mlp.model, task.queries_local);
    const auto linear = steer::apply_linear(steer::fit_linear(pairs, 1e-6).map, task.queries_local);

    const auto matched = steer::matched_exposure_comparison(task.corpus, task.queries_server, aligned, task.qrels, {20},
                                                            3000 + seed);
    SeedResult r;
    r.recall_mlp = matched.rows[0].recall_aligned;
    r.recall_noise = matched.rows[0].recall_noise;
    r.cos_mlp = matched.target_cos;
    r.cos_noise = matched.achieved_cos;
    r.recall_linear = steer::recall_at_k(steer::search_topk(task.corpus, linear, 20), task.qrels, 20).mean;
    out.push_back(r);
  }
  return out;
}

Outcome structured_beats_noise(const std::vector<SeedResult>& results) {
  std::vector<double> mlp, noise, advantage;
  bool matched = true;
  for (const auto& r : results) {
    mlp.push_back(r.recall_mlp);
    noise.push_back(r.recall_noise);
    advantage.push_back(r.recall_mlp - r.recall_noise);
    matched = matched && std::abs(r.cos_mlp - r.cos_noise) <= steer::kMatchTolerance;
  }
  const bool pass = matched && mean_of(mlp) > mean_of(noise) && median_of(advantage) >= 0.10;
  return {pass, "mean Recall@20 mlp-base " + fmt(mean_of(mlp)) + " vs matched noise " + fmt(mean_of(noise)) +
                    ", median advantage " + fmt(median_of(advantage)) + " (need >= 0.10), mean cos " +
                    fmt(mean_of([&] {
                      std::vector<double> c;
                      for (const auto& r : results) c.push_back(r.cos_mlp);
                      return c;
                    }())) +
                    ", all matched within 0.01: " + (matched ? "yes" : "no")};
}

Outcome nonlinear_beats_linear(const std::vector<SeedResult>& results) {
  std::vector<double> mlp, linear;
  for (const auto& r : results) {
    mlp.push_back(r.recall_mlp);
    linear.push_back(r.recall_linear);
  }
  return {mean_of(mlp) >= mean_of(linear),
          "mean Recall@20 mlp-base " + fmt(mean_of(mlp)) + " vs linear " + fmt(mean_of(linear))};
}

// Independent ranking: full sort of every document by a long double score.
std::vector<std::string> sorted_ids(const EmbeddingSet& corpus, const RowMatrix& query, std::size_t k,
                                    steer::Metric metric) {
  std::vector<std::pair<long double, std::size_t>> scored;
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    long double dot = 0, qq = 0, dd = 0, sq = 0;
    for (Eigen::Index j = 0; j < query.cols(); ++j) {
      const long double a = query(0, j);
      const long double b = corpus.vectors()(static_cast<Eigen::Index>(d), j);
      dot += a * b;
      qq += a * a;
      dd += b * b;
      sq += (a - b) * (a - b);
    }
    long double key = 0;
    switch (metric) {
      case steer::Metric::kCosine: key = -dot / (std::sqrt(qq) * std::sqrt(dd)); break;
      case steer::Metric::kDot: key = -dot; break;
      case steer::Metric::kEuclidean: key = sq; break;
    }
    scored.emplace_back(key, d);
  }
  std::sort(scored.begin(), scored.end());
  std::vector<std::string> ids;
  for (std::size_t r = 0; r < k; ++r) ids.push_back(corpus.ids()[scored[r].second]);
  return ids;
}

Outcome retrieval_oracle() {
  std::mt19937_64 rng(77);
  std::size_t mismatches = 0, non_monotone = 0;
  const steer::Metric metrics[] = {steer::Metric::kCosine, steer::Metric::kDot, steer::Metric::kEuclidean};
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t docs = 20 + rng() % 981;
    const std::size_t dim = 2 + rng() % 63;
    const std::size_t nq = 1 + rng() % 10;
    const std::size_t k = 1 + rng() % std::min<std::size_t>(docs, 50);
    const auto metric = metrics[trial % 3];
    const auto corpus = testing_support::random_set(rng, docs, dim, "d");
    const auto queries = testing_support::random_set(rng, nq, dim, "q");
    const auto run = steer::search_topk(corpus, queries, k, metric);
    for (std::size_t qi = 0; qi < nq; ++qi) {
      const auto expected = sorted_ids(corpus, queries.vectors().row(static_cast<Eigen::Index>(qi)), k, metric);
      for (std::size_t r = 0; r < k; ++r) {
        if (run.queries[qi].hits[r].doc_id != expected[r]) {
          ++mismatches;
          break;
        }
      }
    }
    steer::Qrels qrels;
    for (std::size_t qi = 0; qi < nq; ++qi) {
      const std::size_t rel = 1 + rng() % 5;
      for (std::size_t r = 0; r < rel; ++r) qrels[queries.ids()[qi]].insert(corpus.ids()[rng() % docs]);
    }
    double previous = -1.0;
    for (std::size_t kk = 1; kk <= k; ++kk) {
      const double recall = steer::recall_at_k(run, qrels, kk).mean;
      if (recall < previous) ++non_monotone;
      previous = recall;
    }
  }
  return {mismatches == 0 && non_monotone == 0, "queries differing from exhaustive sort " + std::to_string(mismatches) +
                                                    " over 50 corpora, recall decreases in k " +
                                                    std::to_string(non_monotone)};
}

std::optional<steer::ErrorCode> code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const steer::Error& e) {
    return e.code();
  }
  return std::nullopt;
}

RowMatrix bit_noise(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    float v;
    do {
      v = std::bit_cast<float>(static_cast<std::uint32_t>(rng()));
    } while (!std::isfinite(v));
    m.data()[i] = v;
  }
  return m;
}

Outcome io_round_trips() {
  testing_support::TempDir dir("acceptance-io");
  std::mt19937_64 rng(88);
  std::size_t emb_ok = 0, model_ok = 0;
  for (int i = 0; i < 100; ++i) {
    const auto rows = static_cast<Eigen::Index>(1 + rng() % 50);
    const auto cols = static_cast<Eigen::Index>(1 + rng() % 100);
    const EmbeddingSet set(testing_support::make_ids(static_cast<std::size_t>(rows), "e"), bit_noise(rng, rows, cols));
    const auto path = dir / "x.emb";
    steer::write_emb(path, set);
    const auto back = steer::read_emb(path);
    if (back.ids() == set.ids() && back.vectors().rows() == rows && back.vectors().cols() == cols &&
        std::memcmp(back.vectors().data(), set.vectors().data(), static_cast<std::size_t>(rows * cols) * 4) == 0) {
      ++emb_ok;
    }

    steer::StoredModel stored;
    if (i % 2 == 0) {
      stored.model = steer::LinearMap{bit_noise(rng, 1 + rng() % 16, 1 + rng() % 16), 1e-6};
    } else {
      std::vector<std::size_t> dims{1 + rng() % 8};
      for (std::size_t h = rng() % 3; h > 0; --h) dims.push_back(1 + rng() % 8);
      dims.push_back(1 + rng() % 8);
      steer::TrainConfig cfg;
      cfg.seed = rng();
      stored.model = steer::TrainedMlp{steer::MlpModel::kaiming(dims, rng(), "custom"), cfg};
    }
    stored.metadata = {{"instance", i}};
    steer::write_model(dir / "x.model", stored);
    const std::string bytes = steer::detail::read_file(dir / "x.model");
    if (steer::encode_model(steer::read_model(dir / "x.model")) == bytes && bytes == steer::encode_model(stored)) {
      ++model_ok;
    }
  }

  const auto sample = testing_support::random_set(rng, 3, 4);
  const std::string good = steer::encode_emb(sample);
  std::string wrong_version = good;
  wrong_version[8] = 9;
  const std::string model = steer::encode_model({steer::LinearMap{bit_noise(rng, 3, 3), 0.0}, {}});
  std::string short_model = model.substr(0, model.size() - 4);
  std::string bad_kind = model;
  bad_kind.replace(bad_kind.find("\"linear\""), 8, "\"forest\"");
  const std::vector<std::pair<steer::ErrorCode, std::function<void()>>> corrupted = {
      {steer::ErrorCode::kBadMagic, [&] { steer::decode_emb("NOTSTEER" + good.substr(8)); }},
      {steer::ErrorCode::kVersionMismatch, [&] { steer::decode_emb(wrong_version); }},
      {steer::ErrorCode::kTruncated, [&] { steer::decode_emb(good.substr(0, good.size() - 1)); }},
      {steer::ErrorCode::kTrailingData, [&] { steer::decode_emb(good + "x"); }},
      {steer::ErrorCode::kParamCountMismatch, [&] { steer::decode_model(short_model); }},
      {steer::ErrorCode::kKindMismatch, [&] { steer::decode_model(bad_kind); }},
      {steer::ErrorCode::kParse, [&] { steer::decode_model("{not json\n"); }},
  };
  std::size_t taxonomy_ok = 0;
  for (const auto& [expected, fn] : corrupted) taxonomy_ok += code_of(fn) == expected ? 1 : 0;
  const bool pass = emb_ok == 100 && model_ok == 100 && taxonomy_ok == corrupted.size();
  return {pass, "EmbFile " + std::to_string(emb_ok) + "/100, ModelFile " + std::to_string(model_ok) +
                    "/100 bitwise, corrupted inputs classified " + std::to_string(taxonomy_ok) + "/" +
                    std::to_string(corrupted.size())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  std::vector<std::string> expect_fail;
  NonlinearSetup setup;
  app.add_option("--expect-fail", expect_fail, "criterion names whose FAIL does not fail the run");
  app.add_option("--seeds", setup.seeds)->capture_default_str();
  app.add_option("--pairs", setup.m)->capture_default_str();
  app.add_option("--epochs", setup.epochs)->capture_default_str();
  app.add_option("--hidden", setup.hidden, "mlp-base hidden widths")->delimiter(',')->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  int unexpected = 0;
  auto report = [&](const std::string& name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const bool tolerated = std::find(expect_fail.begin(), expect_fail.end(), name) != expect_fail.end();
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail
              << (!o.pass && tolerated ? " [known failure]" : "") << std::endl;
    if (!o.pass && !tolerated) ++unexpected;
  };

  report("exact_recovery", exact_recovery);
  report("least_squares_orthogonality", residual_orthogonality);
  report("gradient_correctness", gradient_correctness);
  report("loss_unit_checks", loss_unit_checks);
  std::vector<SeedResult> nonlinear;
  std::string nonlinear_error;
  try {
    nonlinear = run_nonlinear(setup, setup.strength);
  } catch (const std::exception& e) {
    nonlinear_error = e.what();
  }
  auto guarded = [&](Outcome (*fn)(const std::vector<SeedResult>&)) {
    return [&, fn]() -> Outcome {
      if (!nonlinear_error.empty()) return {false, "error: " + nonlinear_error};
      return fn(nonlinear);
    };
  };
  report("structured_beats_noise", guarded(structured_beats_noise));
  report("nonlinear_beats_linear", guarded(nonlinear_beats_linear));
  report("retrieval_oracle", retrieval_oracle);
  report("io_round_trips", io_round_trips);
  return unexpected == 0 ? 0 : 1;
}
