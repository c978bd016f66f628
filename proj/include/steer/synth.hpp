#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "steer/embedding.hpp"
#include "steer/error.hpp"
#include "steer/linear_map.hpp"
#include "steer/retrieval.hpp"

namespace steer {

enum class MapKind { kLinearOrthogonal, kLinearRandom, kNonlinear };

constexpr std::string_view to_string(MapKind kind) {
  switch (kind) {
    case MapKind::kLinearOrthogonal: return "linear-orthogonal";
    case MapKind::kLinearRandom: return "linear-random";
    case MapKind::kNonlinear: return "nonlinear";
  }
  return "linear-random";
}

inline MapKind parse_map_kind(std::string_view name) {
  if (name == "linear-orthogonal") return MapKind::kLinearOrthogonal;
  if (name == "linear-random") return MapKind::kLinearRandom;
  if (name == "nonlinear") return MapKind::kNonlinear;
  throw Error(ErrorCode::kInvalidInput, "unknown map kind '" + std::string(name) + "'");
}

struct SynthSpec {
  std::size_t m = 1000;  // alignment pairs
  std::size_t p = 32;    // local dim
  std::size_t q = 48;    // server dim
  MapKind map_kind = MapKind::kLinearRandom;
  double noise_sigma = 0.0;
  double nonlinearity_strength = 0.5;
  std::uint64_t seed = 0;
  std::size_t corpus_size = 2000;  // total docs, planted ones included
  std::size_t query_count = 50;
  std::size_t relevant_per_query = 1;

  void check() const {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidInput, "synth spec: " + what); };
    if (m == 0 || p == 0 || q == 0 || corpus_size == 0 || query_count == 0) {
      fail("m, p, q, corpus_size and query_count must be positive");
    }
    if (!(noise_sigma >= 0.0)) fail("noise_sigma must be >= 0");
    if (!(nonlinearity_strength >= 0.0 && nonlinearity_strength <= 1.0)) fail("nonlinearity_strength must be in [0, 1]");
    if (relevant_per_query == 0) fail("relevant_per_query must be >= 1");
    if (query_count * relevant_per_query > corpus_size) fail("corpus_size too small for the planted documents");
  }
};

/// The hidden map from local to server space:
///   linear kinds:  x·A
///   nonlinear:     (1 - s)·x·A + s·tanh(x·A)
struct GroundTruthMap {
  MapKind kind = MapKind::kLinearRandom;
  RowMatrix matrix;  // p × q
  double strength = 0.0;

  RowMatrixD apply(const RowMatrixD& local) const {
    const RowMatrixD linear = local * matrix.cast<double>();
    if (kind != MapKind::kNonlinear) return linear;
    return (1.0 - strength) * linear + strength * linear.array().tanh().matrix();
  }

  /// The linear part as a LinearMap (exact for the linear kinds).
  LinearMap as_linear() const { return LinearMap{matrix, 0.0}; }
};

struct SynthPairs {
  AlignmentPairs pairs;
  GroundTruthMap truth;
};

struct RetrievalTask {
  EmbeddingSet corpus;          // server space
  EmbeddingSet queries_local;   // local space
  EmbeddingSet queries_server;  // true server embeddings of the same queries
  Qrels qrels;
};

namespace detail {

inline std::mt19937_64 stream(std::uint64_t seed, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag};
  return std::mt19937_64(seq);
}

inline RowMatrixD gaussian(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double sigma = 1.0) {
  std::normal_distribution<double> dist(0.0, 1.0);
  RowMatrixD out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = sigma * dist(rng);
  return out;
}

/// Local vectors are rounded to float before mapping so the stored pairs are
/// exactly consistent with the hidden map.
inline RowMatrixD gaussian_float(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  return gaussian(rng, rows, cols).cast<float>().cast<double>();
}

inline std::string numbered(std::string_view prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return std::string(prefix) + buf;
}

/// Transform plus server-side noise. Standard normals are always drawn so the
/// random stream does not depend on noise_sigma.
inline RowMatrix to_server(const GroundTruthMap& map, const RowMatrixD& local, double noise_sigma,
                           std::mt19937_64& rng) {
  RowMatrixD server = map.apply(local);
  server += gaussian(rng, static_cast<std::size_t>(server.rows()), static_cast<std::size_t>(server.cols()), noise_sigma);
  return server.cast<float>();
}

}  // namespace detail

/// Draws the hidden map for a spec. Random maps have N(0, 1/p) entries so a
/// standard-normal input maps to unit-variance coordinates. Orthogonal maps
/// have orthonormal rows (p <= q) or columns (p > q).
inline GroundTruthMap ground_truth_map(const SynthSpec& spec) {
  spec.check();
  auto rng = detail::stream(spec.seed, 0);
  const RowMatrixD raw = detail::gaussian(rng, spec.p, spec.q);
  GroundTruthMap map;
  map.kind = spec.map_kind;
  map.strength = spec.map_kind == MapKind::kNonlinear ? spec.nonlinearity_strength : 0.0;
  if (spec.map_kind == MapKind::kLinearOrthogonal) {
    const bool wide = spec.p <= spec.q;
    const Eigen::MatrixXd tall = wide ? Eigen::MatrixXd(raw.transpose()) : Eigen::MatrixXd(raw);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(tall);
    Eigen::MatrixXd basis = qr.householderQ() * Eigen::MatrixXd::Identity(tall.rows(), tall.cols());
    // fix column signs so the basis is a deterministic function of raw
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < basis.cols(); ++j) {
      if (r(j, j) < 0.0) basis.col(j) *= -1.0;
    }
    map.matrix = wide ? RowMatrix(basis.transpose().cast<float>()) : RowMatrix(basis.cast<float>());
  } else {
    map.matrix = (raw / std::sqrt(static_cast<double>(spec.p))).cast<float>();
  }
  return map;
}

/// Alignment pairs: Gaussian local vectors and their noisy server images.
inline SynthPairs generate_pairs(const SynthSpec& spec) {
  GroundTruthMap map = ground_truth_map(spec);
  auto rng = detail::stream(spec.seed, 1);
  const RowMatrixD local = detail::gaussian_float(rng, spec.m, spec.p);
  RowMatrix server = detail::to_server(map, local, spec.noise_sigma, rng);

  std::vector<std::string> ids(spec.m);
  for (std::size_t i = 0; i < spec.m; ++i) ids[i] = detail::numbered("x", i);
  return SynthPairs{AlignmentPairs{EmbeddingSet(ids, local.cast<float>(), "local"),
                                   EmbeddingSet(ids, std::move(server), "server")},
                    std::move(map)};
}

/// Planted-relevance perturbation: per-coordinate std chosen so the expected
/// perturbation norm is this fraction of the mean background-doc norm.
inline constexpr double kPlantedPerturbation = 0.05;

/// A server-space corpus with relevant documents planted next to each
/// query's true server embedding, plus the queries in both spaces.
inline RetrievalTask generate_retrieval_task(const SynthSpec& spec) {
  const GroundTruthMap map = ground_truth_map(spec);
  auto rng = detail::stream(spec.seed, 2);
  const std::size_t planted = spec.query_count * spec.relevant_per_query;
  const std::size_t background = spec.corpus_size - planted;

  const RowMatrixD bg_local = detail::gaussian_float(rng, background, spec.p);
  const RowMatrix bg_server = detail::to_server(map, bg_local, spec.noise_sigma, rng);
  const RowMatrixD q_local = detail::gaussian_float(rng, spec.query_count, spec.p);
  const RowMatrix q_server = detail::to_server(map, q_local, spec.noise_sigma, rng);

  const RowMatrixD norm_source = background > 0 ? bg_server.cast<double>() : q_server.cast<double>();
  const double mean_norm = norm_source.rowwise().norm().mean();
  const double sigma = kPlantedPerturbation * mean_norm / std::sqrt(static_cast<double>(spec.q));

  RowMatrix docs(static_cast<Eigen::Index>(spec.corpus_size), static_cast<Eigen::Index>(spec.q));
  docs.topRows(static_cast<Eigen::Index>(background)) = bg_server;
  std::vector<std::size_t> owner(spec.corpus_size, spec.query_count);  // query index, or query_count for background
  for (std::size_t qi = 0; qi < spec.query_count; ++qi) {
    const RowMatrixD jitter = detail::gaussian(rng, spec.relevant_per_query, spec.q, sigma);
    for (std::size_t r = 0; r < spec.relevant_per_query; ++r) {
      const std::size_t row = background + qi * spec.relevant_per_query + r;
      docs.row(static_cast<Eigen::Index>(row)) =
          (q_server.row(static_cast<Eigen::Index>(qi)).cast<double>() + jitter.row(static_cast<Eigen::Index>(r)))
              .cast<float>();
      owner[row] = qi;
    }
  }

  // Shuffle so that doc ids (assigned by final position) carry no signal.
  std::vector<std::size_t> perm(spec.corpus_size);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  RowMatrix shuffled(docs.rows(), docs.cols());
  std::vector<std::string> doc_ids(spec.corpus_size);
  std::vector<std::string> query_ids(spec.query_count);
  for (std::size_t qi = 0; qi < spec.query_count; ++qi) query_ids[qi] = detail::numbered("q", qi);
  Qrels qrels;
  for (std::size_t pos = 0; pos < spec.corpus_size; ++pos) {
    shuffled.row(static_cast<Eigen::Index>(pos)) = docs.row(static_cast<Eigen::Index>(perm[pos]));
    doc_ids[pos] = detail::numbered("d", pos);
    if (owner[perm[pos]] < spec.query_count) qrels[query_ids[owner[perm[pos]]]].insert(doc_ids[pos]);
  }

  return RetrievalTask{EmbeddingSet(std::move(doc_ids), std::move(shuffled), "server"),
                       EmbeddingSet(query_ids, q_local.cast<float>(), "local"),
                       EmbeddingSet(query_ids, q_server, "server"), std::move(qrels)};
}

}  // namespace steer
