#include <gtest/gtest.h>

#include "steer/linear_map.hpp"
#include "steer/retrieval.hpp"
#include "steer/synth.hpp"

using steer::MapKind;
using steer::SynthSpec;

namespace {

SynthSpec spec_of(MapKind kind, std::size_t p, std::size_t q, std::uint64_t seed) {
  SynthSpec s;
  s.map_kind = kind;
  s.p = p;
  s.q = q;
  s.m = 300;
  s.corpus_size = 500;
  s.query_count = 25;
  s.seed = seed;
  return s;
}

}  // namespace

TEST(Synth, OrthogonalPreservesNorms) {
  const auto out = steer::generate_pairs(spec_of(MapKind::kLinearOrthogonal, 16, 16, 1));
  for (std::size_t i = 0; i < out.pairs.local.size(); ++i) {
    EXPECT_NEAR(steer::norm(out.pairs.server.row(i)), steer::norm(out.pairs.local.row(i)), 1e-5);
  }
}

TEST(Synth, OrthogonalShapes) {
  for (auto [p, q] : {std::pair<std::size_t, std::size_t>{6, 10}, {10, 6}}) {
    const auto map = steer::ground_truth_map(spec_of(MapKind::kLinearOrthogonal, p, q, 2));
    const Eigen::MatrixXd a = map.matrix.cast<double>();
    const Eigen::MatrixXd gram = p <= q ? Eigen::MatrixXd(a * a.transpose()) : Eigen::MatrixXd(a.transpose() * a);
    EXPECT_LE((gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Synth, Reproducible) {
  auto spec = spec_of(MapKind::kNonlinear, 8, 12, 3);
  spec.noise_sigma = 0.1;
  const auto a = steer::generate_pairs(spec);
  const auto b = steer::generate_pairs(spec);
  EXPECT_EQ(a.pairs.local.vectors(), b.pairs.local.vectors());
  EXPECT_EQ(a.pairs.server.vectors(), b.pairs.server.vectors());
  const auto ta = steer::generate_retrieval_task(spec);
  const auto tb = steer::generate_retrieval_task(spec);
  EXPECT_EQ(ta.corpus.vectors(), tb.corpus.vectors());
  EXPECT_EQ(ta.corpus.ids(), tb.corpus.ids());
  EXPECT_EQ(ta.qrels, tb.qrels);
  spec.seed = 4;
  EXPECT_NE(steer::generate_pairs(spec).pairs.local.vectors(), a.pairs.local.vectors());
}

TEST(Synth, ZeroStrengthNonlinearIsLinear) {
  auto nonlinear = spec_of(MapKind::kNonlinear, 8, 12, 5);
  nonlinear.nonlinearity_strength = 0.0;
  const auto linear = spec_of(MapKind::kLinearRandom, 8, 12, 5);
  const auto a = steer::generate_pairs(nonlinear);
  const auto b = steer::generate_pairs(linear);
  EXPECT_LE((a.pairs.server.vectors() - b.pairs.server.vectors()).cwiseAbs().maxCoeff(), 1e-6f);
}

TEST(Synth, NoiseDoesNotShiftStream) {
  auto clean = spec_of(MapKind::kLinearRandom, 8, 12, 6);
  auto noisy = clean;
  noisy.noise_sigma = 0.2;
  EXPECT_EQ(steer::generate_pairs(clean).pairs.local.vectors(), steer::generate_pairs(noisy).pairs.local.vectors());
}

TEST(Synth, PlantedRecallIsPerfect) {
  for (std::size_t rel : {1u, 3u}) {
    auto spec = spec_of(MapKind::kNonlinear, 8, 12, 7);
    spec.relevant_per_query = rel;
    const auto task = steer::generate_retrieval_task(spec);
    EXPECT_EQ(task.corpus.size(), spec.corpus_size);
    EXPECT_EQ(task.qrels.size(), spec.query_count);
    const auto run = steer::search_topk(task.corpus, task.queries_server, rel);
    EXPECT_DOUBLE_EQ(steer::recall_at_k(run, task.qrels, rel).mean, 1.0);
  }
}

TEST(Synth, CorpusOrderDoesNotMatter) {
  const auto task = steer::generate_retrieval_task(spec_of(MapKind::kLinearRandom, 8, 12, 8));
  std::vector<std::string> ids(task.corpus.ids().rbegin(), task.corpus.ids().rend());
  const steer::EmbeddingSet reversed(ids, task.corpus.vectors().colwise().reverse());
  const auto a = steer::search_topk(task.corpus, task.queries_server, 10);
  const auto b = steer::search_topk(reversed, task.queries_server, 10);
  for (std::size_t k : {1u, 5u, 10u}) {
    EXPECT_EQ(steer::recall_at_k(a, task.qrels, k).mean, steer::recall_at_k(b, task.qrels, k).mean);
  }
}

TEST(Synth, ExactRecoveryPipeline) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto spec = spec_of(MapKind::kLinearRandom, 16, 24, seed);
    const auto pairs = steer::generate_pairs(spec);
    const auto task = steer::generate_retrieval_task(spec);
    const auto fit = steer::fit_linear(pairs.pairs, 0.0);
    const auto aligned = steer::apply_linear(fit.map, task.queries_local);
    const auto truth_run = steer::search_topk(task.corpus, task.queries_server, 20);
    const auto aligned_run = steer::search_topk(task.corpus, aligned, 20);
    for (std::size_t qi = 0; qi < spec.query_count; ++qi) {
      for (std::size_t r = 0; r < 20; ++r) {
        ASSERT_EQ(truth_run.queries[qi].hits[r].doc_id, aligned_run.queries[qi].hits[r].doc_id) << "seed " << seed;
      }
    }
  }
}

TEST(Synth, LinearRecallDegradesWithNoise) {
  double previous = 1.0 + 1e-12;
  for (double sigma : {0.0, 0.3, 0.6, 1.0}) {
    double mean = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto spec = spec_of(MapKind::kLinearRandom, 16, 24, seed);
      spec.m = 40;
      spec.noise_sigma = sigma;
      const auto fit = steer::fit_linear(steer::generate_pairs(spec).pairs, 0.0);
      const auto task = steer::generate_retrieval_task(spec);
      const auto run = steer::search_topk(task.corpus, steer::apply_linear(fit.map, task.queries_local), 20);
      mean += steer::recall_at_k(run, task.qrels, 20).mean / 10.0;
    }
    EXPECT_LE(mean, previous) << "sigma " << sigma;
    previous = mean;
  }
}

TEST(Synth, SpecValidation) {
  SynthSpec s;
  s.corpus_size = 10;
  s.query_count = 5;
  s.relevant_per_query = 3;
  EXPECT_THROW(s.check(), steer::Error);
  s = SynthSpec{};
  s.nonlinearity_strength = 1.5;
  EXPECT_THROW(s.check(), steer::Error);
  EXPECT_THROW(steer::parse_map_kind("quadratic"), steer::Error);
}
