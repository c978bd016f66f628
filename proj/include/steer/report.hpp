#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "steer/io.hpp"
#include "steer/privacy.hpp"
#include "steer/retrieval.hpp"

namespace steer {

// Tabular output is TSV with a '#'-prefixed header line.

inline std::string recall_table_tsv(const std::vector<RecallReport>& reports) {
  std::string out = "# k\trecall\tevaluated\tmissing_qrels\n";
  for (const auto& r : reports) {
    out += std::to_string(r.k) + '\t' + format_double(r.mean) + '\t' + std::to_string(r.per_query.size()) + '\t' +
           std::to_string(r.missing_qrels.size()) + '\n';
  }
  return out;
}

inline std::string comparison_tsv(const RunComparison& cmp) {
  std::string out = "# k\trecall_a\trecall_b\tdelta\tmean_jaccard\n";
  for (const auto& row : cmp.rows) {
    out += std::to_string(row.k) + '\t' + format_double(row.recall_a) + '\t' + format_double(row.recall_b) + '\t' +
           format_double(row.delta) + '\t' + format_double(row.mean_overlap) + '\n';
  }
  return out;
}

inline nlohmann::json to_json(const RunComparison& cmp, const nlohmann::json& config = nullptr) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : cmp.rows) {
    nlohmann::json per_query = nlohmann::json::object();
    for (std::size_t i = 0; i < cmp.query_ids.size(); ++i) per_query[cmp.query_ids[i]] = row.overlap[i];
    rows.push_back({{"k", row.k},
                    {"recall_a", row.recall_a},
                    {"recall_b", row.recall_b},
                    {"delta", row.delta},
                    {"mean_jaccard", row.mean_overlap},
                    {"jaccard", per_query}});
  }
  return {{"rows", rows}, {"missing_qrels", cmp.missing_qrels}, {"config", config}};
}

inline constexpr const char* kProxyNote =
    "cosine to the true server embedding is a proxy for inversion exposure, not an attack result";

inline std::string deviation_tsv(const DeviationReport& r) {
  std::string out = "# proxy: " + std::string(kProxyNote) + "\n# statistic\tvalue\n";
  const auto& s = r.summary;
  out += "count\t" + std::to_string(r.per_id.size()) + '\n';
  out += "mean\t" + format_double(s.mean) + '\n';
  out += "std\t" + format_double(s.std) + '\n';
  out += "min\t" + format_double(s.min) + '\n';
  out += "max\t" + format_double(s.max) + '\n';
  for (std::size_t i = 0; i < kReportQuantiles.size(); ++i) {
    out += "q" + std::to_string(kReportQuantiles[i]) + '\t' + format_double(s.quantiles[i]) + '\n';
  }
  out += "tau\t" + format_double(r.tau) + '\n';
  out += "fraction_above_tau\t" + format_double(r.fraction_above_tau) + '\n';
  return out;
}

inline nlohmann::json to_json(const DeviationReport& r, const nlohmann::json& config = nullptr) {
  nlohmann::json per_id = nlohmann::json::array();
  for (const auto& [id, c] : r.per_id) per_id.push_back({{"id", id}, {"cos", c}});
  nlohmann::json quantiles = nlohmann::json::object();
  for (std::size_t i = 0; i < kReportQuantiles.size(); ++i) {
    quantiles[std::to_string(kReportQuantiles[i])] = r.summary.quantiles[i];
  }
  return {{"per_id", per_id},
          {"summary",
           {{"mean", r.summary.mean},
            {"std", r.summary.std},
            {"min", r.summary.min},
            {"max", r.summary.max},
            {"quantiles", quantiles},
            {"tau", r.tau},
            {"fraction_above_tau", r.fraction_above_tau},
            {"note", kProxyNote}}},
          {"config", config}};
}

inline std::string matched_tsv(const MatchedExposure& m) {
  std::string out = "# proxy: " + std::string(kProxyNote) + "\n";
  out += "# target_cos=" + format_double(m.target_cos) + "\tachieved_cos=" + format_double(m.achieved_cos) +
         "\tsigma=" + format_double(m.sigma) + "\n";
  out += "# k\trecall_truth\trecall_aligned\trecall_noise\tdelta\n";
  for (const auto& row : m.rows) {
    out += std::to_string(row.k) + '\t' + format_double(row.recall_truth) + '\t' + format_double(row.recall_aligned) +
           '\t' + format_double(row.recall_noise) + '\t' + format_double(row.delta) + '\n';
  }
  return out;
}

inline nlohmann::json to_json(const MatchedExposure& m, const nlohmann::json& config = nullptr) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : m.rows) {
    rows.push_back({{"k", row.k},
                    {"recall_truth", row.recall_truth},
                    {"recall_aligned", row.recall_aligned},
                    {"recall_noise", row.recall_noise},
                    {"delta", row.delta}});
  }
  return {{"summary",
           {{"target_cos", m.target_cos},
            {"achieved_cos", m.achieved_cos},
            {"sigma", m.sigma},
            {"iterations", m.iterations},
            {"note", kProxyNote}}},
          {"rows", rows},
          {"config", config}};
}

inline std::string loss_log_tsv(const std::vector<LossBreakdown>& history) {
  std::string out = "# epoch\tmse\tcos_dist\thuber\tsim_penalty\ttotal\n";
  for (std::size_t e = 0; e < history.size(); ++e) {
    const auto& l = history[e];
    out += std::to_string(e + 1) + '\t' + format_double(l.mse) + '\t' + format_double(l.cos_dist) + '\t' +
           format_double(l.huber) + '\t' + format_double(l.sim_penalty) + '\t' + format_double(l.total) + '\n';
  }
  return out;
}

}  // namespace steer
