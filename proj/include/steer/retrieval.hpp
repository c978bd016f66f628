#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "steer/embedding.hpp"
#include "steer/error.hpp"
#include "steer/parallel.hpp"

namespace steer {

enum class Metric { kCosine, kDot, kEuclidean };

constexpr std::string_view to_string(Metric metric) {
  switch (metric) {
    case Metric::kCosine: return "cosine";
    case Metric::kDot: return "dot";
    case Metric::kEuclidean: return "euclidean";
  }
  return "cosine";
}

inline Metric parse_metric(std::string_view name) {
  if (name == "cosine") return Metric::kCosine;
  if (name == "dot") return Metric::kDot;
  if (name == "euclidean") return Metric::kEuclidean;
  throw Error(ErrorCode::kInvalidInput, "unknown metric '" + std::string(name) + "'");
}

/// Relevance judgments: query id -> relevant doc ids.
using Qrels = std::map<std::string, std::set<std::string>>;

struct ScoredDoc {
  std::string doc_id;
  double score = 0.0;  // similarity, or distance for euclidean
};

struct QueryResult {
  std::string query_id;
  std::vector<ScoredDoc> hits;  // best first
};

struct RetrievalRun {
  Metric metric = Metric::kCosine;
  std::size_t k = 0;
  std::vector<QueryResult> queries;
};

/// Exact top-k by exhaustive scan. Ties go to the lexicographically smaller
/// doc id. Queries are independent, so threads only split the query list.
inline RetrievalRun search_topk(const EmbeddingSet& corpus, const EmbeddingSet& queries, std::size_t k,
                                Metric metric = Metric::kCosine, std::size_t threads = 0) {
  if (corpus.dim() != queries.dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "corpus dim " + std::to_string(corpus.dim()) + " vs query dim " +
                                                   std::to_string(queries.dim()));
  }
  if (k < 1 || k > corpus.size()) {
    throw Error(ErrorCode::kOutOfRange,
                "k = " + std::to_string(k) + " outside [1, " + std::to_string(corpus.size()) + "]");
  }

  const std::size_t n_docs = corpus.size();
  std::vector<double> doc_norms(n_docs);
  for (std::size_t d = 0; d < n_docs; ++d) {
    doc_norms[d] = norm(corpus.row(d));
    if (metric == Metric::kCosine && doc_norms[d] == 0.0) {
      throw Error(ErrorCode::kDegenerate, "zero-norm corpus vector '" + corpus.ids()[d] + "' under cosine");
    }
  }

  RetrievalRun run;
  run.metric = metric;
  run.k = k;
  run.queries.resize(queries.size());

  parallel_for(queries.size(), threads, [&](std::size_t begin, std::size_t end) {
    std::vector<double> scores(n_docs);
    std::vector<std::size_t> order(n_docs);
    for (std::size_t qi = begin; qi < end; ++qi) {
      const auto query = queries.row(qi);
      const double qn = norm(query);
      if (metric == Metric::kCosine && qn == 0.0) {
        throw Error(ErrorCode::kDegenerate, "zero-norm query vector '" + queries.ids()[qi] + "' under cosine");
      }
      for (std::size_t d = 0; d < n_docs; ++d) {
        const auto doc = corpus.row(d);
        switch (metric) {
          case Metric::kCosine: scores[d] = dot(query, doc) / (qn * doc_norms[d]); break;
          case Metric::kDot: scores[d] = dot(query, doc); break;
          case Metric::kEuclidean: {
            double sq = 0.0;
            for (std::size_t j = 0; j < doc.size(); ++j) {
              const double diff = static_cast<double>(query[j]) - static_cast<double>(doc[j]);
              sq += diff * diff;
            }
            scores[d] = std::sqrt(sq);
            break;
          }
        }
      }
      std::iota(order.begin(), order.end(), std::size_t{0});
      const bool ascending = metric == Metric::kEuclidean;
      auto better = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return ascending ? scores[a] < scores[b] : scores[a] > scores[b];
        return corpus.ids()[a] < corpus.ids()[b];
      };
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);

      QueryResult& out = run.queries[qi];
      out.query_id = queries.ids()[qi];
      out.hits.reserve(k);
      for (std::size_t r = 0; r < k; ++r) out.hits.push_back({corpus.ids()[order[r]], scores[order[r]]});
    }
  });
  return run;
}

// ---------------------------------------------------------------------------
// Recall@k

struct RecallReport {
  std::size_t k = 0;
  double mean = 0.0;                                      // over evaluated queries
  std::vector<std::pair<std::string, double>> per_query;  // in run order
  std::vector<std::string> missing_qrels;                 // excluded from the mean
};

inline double recall_of(const QueryResult& result, const std::set<std::string>& relevant, std::size_t k) {
  std::size_t found = 0;
  const std::size_t depth = std::min(k, result.hits.size());
  for (std::size_t r = 0; r < depth; ++r) found += relevant.count(result.hits[r].doc_id);
  return static_cast<double>(found) / static_cast<double>(relevant.size());
}

/// |retrieved@k ∩ relevant| / |relevant| per query, averaged over the queries
/// that have judgments. Queries absent from qrels are listed, not scored.
inline RecallReport recall_at_k(const RetrievalRun& run, const Qrels& qrels, std::size_t k) {
  if (k < 1 || k > run.k) {
    throw Error(ErrorCode::kOutOfRange,
                "recall depth " + std::to_string(k) + " outside [1, " + std::to_string(run.k) + "]");
  }
  RecallReport report;
  report.k = k;
  double sum = 0.0;
  for (const auto& result : run.queries) {
    const auto it = qrels.find(result.query_id);
    if (it == qrels.end() || it->second.empty()) {
      report.missing_qrels.push_back(result.query_id);
      continue;
    }
    const double r = recall_of(result, it->second, k);
    report.per_query.emplace_back(result.query_id, r);
    sum += r;
  }
  report.mean = report.per_query.empty() ? 0.0 : sum / static_cast<double>(report.per_query.size());
  return report;
}

// ---------------------------------------------------------------------------
// Run comparison

struct ComparisonRow {
  std::size_t k = 0;
  double recall_a = 0.0;
  double recall_b = 0.0;
  double delta = 0.0;         // recall_b - recall_a
  double mean_overlap = 0.0;  // mean Jaccard of the two top-k sets
  std::vector<double> overlap;  // per query, in run_a order
};

struct RunComparison {
  std::vector<std::string> query_ids;
  std::vector<ComparisonRow> rows;
  std::vector<std::string> missing_qrels;
};

inline double topk_jaccard(const QueryResult& a, const QueryResult& b, std::size_t k) {
  std::unordered_set<std::string_view> set_a;
  const std::size_t depth_a = std::min(k, a.hits.size());
  const std::size_t depth_b = std::min(k, b.hits.size());
  for (std::size_t r = 0; r < depth_a; ++r) set_a.insert(a.hits[r].doc_id);
  std::unordered_set<std::string_view> set_b;
  std::size_t shared = 0;
  for (std::size_t r = 0; r < depth_b; ++r) {
    if (set_b.insert(b.hits[r].doc_id).second) shared += set_a.count(b.hits[r].doc_id);
  }
  const std::size_t uni = set_a.size() + set_b.size() - shared;
  return uni == 0 ? 1.0 : static_cast<double>(shared) / static_cast<double>(uni);
}

/// Paired Recall@k for two runs over the same queries, plus per-query top-k
/// overlap. Typical use: ground-truth queries as run_a, aligned as run_b.
inline RunComparison compare_runs(const RetrievalRun& run_a, const RetrievalRun& run_b, const Qrels& qrels,
                                  const std::vector<std::size_t>& k_list) {
  if (run_a.queries.size() != run_b.queries.size()) {
    throw Error(ErrorCode::kIdMismatch, "runs cover different numbers of queries");
  }
  std::map<std::string_view, const QueryResult*> by_id;
  for (const auto& q : run_b.queries) by_id.emplace(q.query_id, &q);

  RunComparison out;
  for (const auto& q : run_a.queries) {
    if (!by_id.contains(q.query_id)) throw Error(ErrorCode::kIdMismatch, "query '" + q.query_id + "' missing from second run");
    out.query_ids.push_back(q.query_id);
  }
  for (std::size_t k : k_list) {
    const RecallReport ra = recall_at_k(run_a, qrels, k);
    const RecallReport rb = recall_at_k(run_b, qrels, k);
    ComparisonRow row;
    row.k = k;
    row.recall_a = ra.mean;
    row.recall_b = rb.mean;
    row.delta = rb.mean - ra.mean;
    double sum = 0.0;
    for (const auto& q : run_a.queries) {
      row.overlap.push_back(topk_jaccard(q, *by_id.at(q.query_id), k));
      sum += row.overlap.back();
    }
    row.mean_overlap = out.query_ids.empty() ? 1.0 : sum / static_cast<double>(out.query_ids.size());
    out.rows.push_back(std::move(row));
    if (out.missing_qrels.empty()) out.missing_qrels = ra.missing_qrels;
  }
  return out;
}

}  // namespace steer
