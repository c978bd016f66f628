#pragma once

#include <initializer_list>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "steer/error.hpp"
#include "steer/mlp.hpp"
#include "steer/retrieval.hpp"
#include "steer/synth.hpp"

namespace steer {

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<std::string_view> known,
                                std::string_view what) {
  if (!j.is_object()) throw Error(ErrorCode::kParse, std::string(what) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool found = false;
    for (std::string_view k : known) found = found || key == k;
    if (!found) throw Error(ErrorCode::kInvalidInput, std::string(what) + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::kParse, std::string("bad value for '") + key + "': " + j.at(key).dump());
  }
}

}  // namespace detail

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"alpha", c.alpha},
          {"beta", c.beta},
          {"gamma", c.gamma},
          {"tau", c.tau},
          {"huber_delta", c.huber_delta},
          {"learning_rate", c.learning_rate},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_epsilon", c.adam_epsilon},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"shuffle", c.shuffle}};
}

#define STEER_TRAIN_KEYS                                                                                   \
  "alpha", "beta", "gamma", "tau", "huber_delta", "learning_rate", "adam_beta1", "adam_beta2", "adam_epsilon", \
      "epochs", "batch_size", "seed", "shuffle"

inline void apply_train_keys(const nlohmann::json& j, TrainConfig& c) {
  detail::read_opt(j, "alpha", c.alpha);
  detail::read_opt(j, "beta", c.beta);
  detail::read_opt(j, "gamma", c.gamma);
  detail::read_opt(j, "tau", c.tau);
  detail::read_opt(j, "huber_delta", c.huber_delta);
  detail::read_opt(j, "learning_rate", c.learning_rate);
  detail::read_opt(j, "adam_beta1", c.adam_beta1);
  detail::read_opt(j, "adam_beta2", c.adam_beta2);
  detail::read_opt(j, "adam_epsilon", c.adam_epsilon);
  detail::read_opt(j, "epochs", c.epochs);
  detail::read_opt(j, "batch_size", c.batch_size);
  detail::read_opt(j, "seed", c.seed);
  detail::read_opt(j, "shuffle", c.shuffle);
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j, {STEER_TRAIN_KEYS}, "train config");
  TrainConfig c;
  apply_train_keys(j, c);
  c.check();
  return c;
}

/// Everything a CLI run can be configured with. Loaded from JSON, then
/// individual flags override fields.
struct CliConfig {
  TrainConfig train;
  double ridge_lambda = 1e-6;
  Metric metric = Metric::kCosine;
  bool normalize = false;
  std::optional<std::vector<std::size_t>> hidden_dims;  // overrides preset widths
};

inline nlohmann::json to_json(const CliConfig& c) {
  nlohmann::json j = to_json(c.train);
  j["ridge_lambda"] = c.ridge_lambda;
  j["metric"] = to_string(c.metric);
  j["normalize"] = c.normalize;
  j["hidden_dims"] = c.hidden_dims ? nlohmann::json(*c.hidden_dims) : nlohmann::json(nullptr);
  return j;
}

inline CliConfig cli_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j, {STEER_TRAIN_KEYS, "ridge_lambda", "metric", "normalize", "hidden_dims"}, "config");
  CliConfig c;
  apply_train_keys(j, c.train);
  detail::read_opt(j, "ridge_lambda", c.ridge_lambda);
  detail::read_opt(j, "normalize", c.normalize);
  if (j.contains("metric")) {
    std::string metric;
    detail::read_opt(j, "metric", metric);
    c.metric = parse_metric(metric);
  }
  if (j.contains("hidden_dims") && !j.at("hidden_dims").is_null()) {
    std::vector<std::size_t> dims;
    detail::read_opt(j, "hidden_dims", dims);
    c.hidden_dims = std::move(dims);
  }
  c.train.check();
  if (!(c.ridge_lambda >= 0.0)) throw Error(ErrorCode::kInvalidInput, "ridge_lambda must be >= 0");
  return c;
}

#undef STEER_TRAIN_KEYS

inline nlohmann::json to_json(const SynthSpec& s) {
  return {{"m", s.m},
          {"p", s.p},
          {"q", s.q},
          {"map_kind", to_string(s.map_kind)},
          {"noise_sigma", s.noise_sigma},
          {"nonlinearity_strength", s.nonlinearity_strength},
          {"seed", s.seed},
          {"corpus_size", s.corpus_size},
          {"query_count", s.query_count},
          {"relevant_per_query", s.relevant_per_query}};
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j,
                              {"m", "p", "q", "map_kind", "noise_sigma", "nonlinearity_strength", "seed", "corpus_size",
                               "query_count", "relevant_per_query"},
                              "synth spec");
  SynthSpec s;
  detail::read_opt(j, "m", s.m);
  detail::read_opt(j, "p", s.p);
  detail::read_opt(j, "q", s.q);
  if (j.contains("map_kind")) {
    std::string kind;
    detail::read_opt(j, "map_kind", kind);
    s.map_kind = parse_map_kind(kind);
  }
  detail::read_opt(j, "noise_sigma", s.noise_sigma);
  detail::read_opt(j, "nonlinearity_strength", s.nonlinearity_strength);
  detail::read_opt(j, "seed", s.seed);
  detail::read_opt(j, "corpus_size", s.corpus_size);
  detail::read_opt(j, "query_count", s.query_count);
  detail::read_opt(j, "relevant_per_query", s.relevant_per_query);
  s.check();
  return s;
}

}  // namespace steer
