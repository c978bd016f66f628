#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "steer/embedding.hpp"
#include "steer/error.hpp"
#include "steer/retrieval.hpp"

namespace steer {

inline constexpr std::array<int, 5> kReportQuantiles{5, 25, 50, 75, 95};

struct DeviationSummary {
  double mean = 0.0;
  double std = 0.0;  // population
  double min = 0.0;
  double max = 0.0;
  std::array<double, kReportQuantiles.size()> quantiles{};  // matches kReportQuantiles
};

/// Cosine between approximate and true server embeddings, per id and in
/// aggregate. A proxy for how much an inversion attacker could recover.
struct DeviationReport {
  std::vector<std::pair<std::string, double>> per_id;
  DeviationSummary summary;
  double tau = 0.9;
  double fraction_above_tau = 0.0;
};

/// Linear-interpolated quantile of sorted data, q in [0, 1].
inline double sorted_quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline std::vector<double> rowwise_cosine(const EmbeddingSet& a, const EmbeddingSet& b) {
  require_same_ids(a, b);
  if (a.dim() != b.dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "dims " + std::to_string(a.dim()) + " and " + std::to_string(b.dim()));
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    try {
      out[i] = cosine_similarity(a.row(i), b.row(i));
    } catch (const Error& e) {
      throw Error(e.code(), std::string(e.what()) + " (id '" + a.ids()[i] + "')");
    }
  }
  return out;
}

inline double mean_cosine(const EmbeddingSet& a, const EmbeddingSet& b) {
  const auto c = rowwise_cosine(a, b);
  double sum = 0.0;
  for (double v : c) sum += v;
  return sum / static_cast<double>(c.size());
}

inline DeviationReport deviation_report(const EmbeddingSet& approx, const EmbeddingSet& truth, double tau = 0.9) {
  const std::vector<double> cosines = rowwise_cosine(approx, truth);
  DeviationReport report;
  report.tau = tau;
  report.per_id.reserve(cosines.size());
  for (std::size_t i = 0; i < cosines.size(); ++i) report.per_id.emplace_back(approx.ids()[i], cosines[i]);

  std::vector<double> sorted = cosines;
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  double sum = 0.0;
  std::size_t above = 0;
  for (double c : sorted) {
    sum += c;
    above += c > tau ? 1 : 0;
  }
  DeviationSummary& s = report.summary;
  s.mean = sum / n;
  double sq = 0.0;
  for (double c : sorted) sq += (c - s.mean) * (c - s.mean);
  s.std = std::sqrt(sq / n);
  s.min = sorted.front();
  s.max = sorted.back();
  for (std::size_t i = 0; i < kReportQuantiles.size(); ++i) {
    s.quantiles[i] = sorted_quantile(sorted, kReportQuantiles[i] / 100.0);
  }
  report.fraction_above_tau = static_cast<double>(above) / n;
  return report;
}

/// Adds i.i.d. N(0, sigma²) noise to every raw coordinate.
inline EmbeddingSet add_gaussian_noise(const EmbeddingSet& set, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw Error(ErrorCode::kInvalidInput, "sigma must be >= 0");
  RowMatrix out = set.vectors();
  if (sigma > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, sigma);
    for (Eigen::Index i = 0; i < out.size(); ++i) {
      out.data()[i] = static_cast<float>(static_cast<double>(out.data()[i]) + noise(rng));
    }
  }
  return EmbeddingSet(EmbeddingSet::Unchecked{}, set.ids(), std::move(out), "approx");
}

// ---------------------------------------------------------------------------
// Matched-exposure comparison

struct MatchedRow {
  std::size_t k = 0;
  double recall_truth = 0.0;
  double recall_aligned = 0.0;
  double recall_noise = 0.0;
  double delta = 0.0;  // aligned - noise
};

struct MatchedExposure {
  double target_cos = 0.0;    // mean cos(aligned, truth)
  double achieved_cos = 0.0;  // mean cos(truth + noise, truth)
  double sigma = 0.0;
  std::size_t iterations = 0;
  std::vector<MatchedRow> rows;
};

inline constexpr double kMatchTolerance = 0.01;
inline constexpr int kMatchIterations = 40;

/// Finds the noise level at which noisy true queries sit at the same mean
/// cosine to the truth as the aligned queries, then retrieves with both.
/// The noise draw is fixed by seed for every trial, which keeps the mean
/// cosine monotone in sigma and the bisection well posed.
inline MatchedExposure matched_exposure_comparison(const EmbeddingSet& corpus, const EmbeddingSet& truth_queries,
                                                   const EmbeddingSet& aligned_queries, const Qrels& qrels,
                                                   const std::vector<std::size_t>& k_list, std::uint64_t seed,
                                                   Metric metric = Metric::kCosine, std::size_t threads = 0) {
  if (k_list.empty()) throw Error(ErrorCode::kInvalidInput, "empty k list");
  MatchedExposure out;
  out.target_cos = mean_cosine(aligned_queries, truth_queries);
  auto cos_at = [&](double sigma) { return mean_cosine(add_gaussian_noise(truth_queries, sigma, seed), truth_queries); };

  double max_norm = 0.0;
  for (std::size_t i = 0; i < truth_queries.size(); ++i) max_norm = std::max(max_norm, norm(truth_queries.row(i)));
  double lo = 0.0;
  double hi = 10.0 * max_norm;
  const double cos_hi = cos_at(hi);
  if (out.target_cos < cos_hi - kMatchTolerance) {
    throw Error(ErrorCode::kUnreachable, "target mean cos " + std::to_string(out.target_cos) +
                                             " below reachable range [" + std::to_string(cos_hi) + ", 1]");
  }

  double best_sigma = 0.0;
  double best_cos = cos_at(0.0);
  if (out.target_cos < best_cos) {
    double cos_lo = best_cos;
    double cos_hi_bracket = cos_hi;
    for (int it = 0; it < kMatchIterations; ++it) {
      ++out.iterations;
      const double mid = 0.5 * (lo + hi);
      const double c = cos_at(mid);
      if (c > out.target_cos) {
        lo = mid;
        cos_lo = c;
      } else {
        hi = mid;
        cos_hi_bracket = c;
      }
      if (std::abs(c - out.target_cos) < 1e-9) break;
    }
    const bool take_lo = std::abs(cos_lo - out.target_cos) <= std::abs(cos_hi_bracket - out.target_cos);
    best_sigma = take_lo ? lo : hi;
    best_cos = take_lo ? cos_lo : cos_hi_bracket;
  }
  if (std::abs(best_cos - out.target_cos) > kMatchTolerance) {
    throw Error(ErrorCode::kUnreachable, "noise search reached mean cos " + std::to_string(best_cos) +
                                             " for target " + std::to_string(out.target_cos));
  }
  out.sigma = best_sigma;
  out.achieved_cos = best_cos;

  const std::size_t k_max = *std::max_element(k_list.begin(), k_list.end());
  const EmbeddingSet noisy = add_gaussian_noise(truth_queries, best_sigma, seed);
  const RetrievalRun run_truth = search_topk(corpus, truth_queries, k_max, metric, threads);
  const RetrievalRun run_aligned = search_topk(corpus, aligned_queries, k_max, metric, threads);
  const RetrievalRun run_noise = search_topk(corpus, noisy, k_max, metric, threads);
  for (std::size_t k : k_list) {
    MatchedRow row;
    row.k = k;
    row.recall_truth = recall_at_k(run_truth, qrels, k).mean;
    row.recall_aligned = recall_at_k(run_aligned, qrels, k).mean;
    row.recall_noise = recall_at_k(run_noise, qrels, k).mean;
    row.delta = row.recall_aligned - row.recall_noise;
    out.rows.push_back(row);
  }
  return out;
}

}  // namespace steer
