#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

#include "steer/config.hpp"
#include "steer/embedding.hpp"
#include "steer/error.hpp"
#include "steer/linear_map.hpp"
#include "steer/mlp.hpp"
#include "steer/retrieval.hpp"

namespace steer {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Little-endian primitives. The on-disk layout never depends on the host.

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

inline float get_f32(const char* p) { return std::bit_cast<float>(get_u32(p)); }

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

/// Writes via a temporary sibling and a rename so readers never observe a
/// half-written file.
inline void write_file_atomic(const fs::path& path, std::string_view bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::kIo, "write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Embedding files: <name>.emb holds the vectors, <name>.ids one id per line.

inline constexpr std::array<char, 8> kEmbMagic{'S', 'T', 'E', 'E', 'R', 'V', '1', '\0'};
inline constexpr std::uint32_t kEmbVersion = 1;
inline constexpr std::size_t kEmbHeaderSize = 24;

inline fs::path ids_path(const fs::path& emb_path) {
  fs::path p = emb_path;
  return p.replace_extension(".ids");
}

inline std::string encode_emb(const EmbeddingSet& set) {
  std::string out;
  out.reserve(kEmbHeaderSize + set.size() * set.dim() * 4);
  out.append(kEmbMagic.data(), kEmbMagic.size());
  detail::put_u32(out, kEmbVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(set.dim()));
  detail::put_u64(out, static_cast<std::uint64_t>(set.size()));
  const RowMatrix& v = set.vectors();
  for (Eigen::Index i = 0; i < v.size(); ++i) detail::put_f32(out, v.data()[i]);
  return out;
}

inline std::string encode_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (const auto& id : ids) {
    if (id.empty() || id.find_first_of("\r\n") != std::string::npos) {
      throw Error(ErrorCode::kInvalidInput, "ids must be non-empty single-line strings");
    }
    out += id;
    out += '\n';
  }
  return out;
}

inline void write_emb(const fs::path& path, const EmbeddingSet& set) {
  if (set.dim() > std::numeric_limits<std::uint32_t>::max()) throw Error(ErrorCode::kInvalidInput, "dim too large");
  const std::string ids = encode_ids(set.ids());
  detail::write_file_atomic(path, encode_emb(set));
  detail::write_file_atomic(ids_path(path), ids);
}

/// Parses the binary part of an embedding file. Every malformation maps to
/// its own error code.
inline RowMatrix decode_emb(std::string_view bytes) {
  if (bytes.size() < kEmbMagic.size() || std::memcmp(bytes.data(), kEmbMagic.data(), kEmbMagic.size()) != 0) {
    throw Error(ErrorCode::kBadMagic, "not a STEERV1 embedding file");
  }
  if (bytes.size() < kEmbHeaderSize) {
    throw Error(ErrorCode::kTruncated, "header needs " + std::to_string(kEmbHeaderSize) + " bytes, file has " +
                                           std::to_string(bytes.size()));
  }
  const std::uint32_t version = detail::get_u32(bytes.data() + 8);
  if (version != kEmbVersion) {
    throw Error(ErrorCode::kVersionMismatch, "file version " + std::to_string(version) + ", expected " +
                                                 std::to_string(kEmbVersion));
  }
  const std::uint64_t dim = detail::get_u32(bytes.data() + 12);
  const std::uint64_t count = detail::get_u64(bytes.data() + 16);
  if (dim == 0) throw Error(ErrorCode::kInvalidInput, "embedding dim is 0");
  if (count > (std::numeric_limits<std::uint64_t>::max() / 4) / dim) {
    throw Error(ErrorCode::kTruncated, "declared size overflows");
  }
  const std::uint64_t expected = count * dim * 4;
  const std::uint64_t actual = bytes.size() - kEmbHeaderSize;
  if (actual < expected) {
    throw Error(ErrorCode::kTruncated, "payload has " + std::to_string(actual) + " bytes, expected " +
                                           std::to_string(expected));
  }
  if (actual > expected) {
    throw Error(ErrorCode::kTrailingData, "payload has " + std::to_string(actual) + " bytes, expected " +
                                              std::to_string(expected));
  }
  RowMatrix v(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  const char* p = bytes.data() + kEmbHeaderSize;
  for (Eigen::Index i = 0; i < v.size(); ++i, p += 4) v.data()[i] = detail::get_f32(p);
  return v;
}

inline std::vector<std::string> decode_ids(std::string_view text) {
  std::vector<std::string> ids;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ids.emplace_back(line);
    start = end + 1;
  }
  return ids;
}

/// Loads an embedding file and its id sidecar. Contents are not validated
/// beyond shape, so callers can diagnose duplicates and non-finite rows.
inline EmbeddingSet read_emb(const fs::path& path, std::string space_label = {}) {
  RowMatrix vectors = decode_emb(detail::read_file(path));
  const fs::path sidecar = ids_path(path);
  if (!fs::exists(sidecar)) throw Error(ErrorCode::kIo, "missing id file '" + sidecar.string() + "'");
  std::vector<std::string> ids = decode_ids(detail::read_file(sidecar));
  if (ids.size() != static_cast<std::size_t>(vectors.rows())) {
    throw Error(ErrorCode::kIdCountMismatch, sidecar.string() + " lists " + std::to_string(ids.size()) + " ids for " +
                                                 std::to_string(vectors.rows()) + " vectors");
  }
  return EmbeddingSet(EmbeddingSet::Unchecked{}, std::move(ids), std::move(vectors), std::move(space_label));
}

// ---------------------------------------------------------------------------
// Model files: one line of compact JSON header, then raw LE float32 params.

struct TrainedMlp {
  MlpModel model;
  TrainConfig config;
};

using AlignmentModel = std::variant<LinearMap, TrainedMlp>;

struct StoredModel {
  AlignmentModel model;
  nlohmann::json metadata = nlohmann::json::object();
};

inline constexpr int kModelVersion = 1;

inline std::string encode_model(const StoredModel& stored) {
  nlohmann::json header;
  header["format"] = "STEER-MODEL";
  header["version"] = kModelVersion;
  std::string payload;
  if (const auto* linear = std::get_if<LinearMap>(&stored.model)) {
    linear->check();
    header["kind"] = "linear";
    header["source_dim"] = linear->source_dim();
    header["target_dim"] = linear->target_dim();
    header["ridge_lambda"] = linear->ridge_lambda;
    header["param_count"] = static_cast<std::size_t>(linear->matrix.size());
    for (Eigen::Index i = 0; i < linear->matrix.size(); ++i) detail::put_f32(payload, linear->matrix.data()[i]);
  } else {
    const auto& mlp = std::get<TrainedMlp>(stored.model);
    header["kind"] = "mlp";
    header["source_dim"] = mlp.model.input_dim();
    header["target_dim"] = mlp.model.output_dim();
    header["layer_dims"] = mlp.model.layer_dims();
    header["activation"] = MlpModel::activation();
    header["preset"] = mlp.model.preset();
    header["train_config"] = to_json(mlp.config);
    header["seed"] = mlp.config.seed;
    header["param_count"] = mlp.model.param_count();
    for (const auto& layer : mlp.model.layers()) {
      for (Eigen::Index i = 0; i < layer.weight.size(); ++i) detail::put_f32(payload, layer.weight.data()[i]);
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) detail::put_f32(payload, layer.bias(i));
    }
  }
  header["metadata"] = stored.metadata;
  std::string out = header.dump();
  out += '\n';
  out += payload;
  return out;
}

inline StoredModel decode_model(std::string_view bytes) {
  const std::size_t newline = bytes.find('\n');
  if (newline == std::string_view::npos) throw Error(ErrorCode::kParse, "model file has no header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, newline));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("model header: ") + e.what());
  }
  const std::string_view payload = bytes.substr(newline + 1);
  try {
    if (header.value("format", "") != "STEER-MODEL") throw Error(ErrorCode::kBadMagic, "not a STEER model file");
    if (header.at("version").get<int>() != kModelVersion) {
      throw Error(ErrorCode::kVersionMismatch, "model version " + header.at("version").dump());
    }
    const auto declared = header.at("param_count").get<std::uint64_t>();
    if (payload.size() % 4 != 0 || payload.size() / 4 != declared) {
      throw Error(ErrorCode::kParamCountMismatch, "header declares " + std::to_string(declared) +
                                                      " params, payload holds " + std::to_string(payload.size() / 4) +
                                                      (payload.size() % 4 ? " (plus a partial value)" : ""));
    }
    const std::string kind = header.at("kind").get<std::string>();
    StoredModel stored;
    stored.metadata = header.value("metadata", nlohmann::json::object());
    const char* p = payload.data();
    if (kind == "linear") {
      const auto rows = header.at("source_dim").get<Eigen::Index>();
      const auto cols = header.at("target_dim").get<Eigen::Index>();
      if (rows < 1 || cols < 1 || static_cast<std::uint64_t>(rows * cols) != declared) {
        throw Error(ErrorCode::kParamCountMismatch, "linear shape does not match param_count");
      }
      LinearMap map{RowMatrix(rows, cols), header.at("ridge_lambda").get<double>()};
      for (Eigen::Index i = 0; i < map.matrix.size(); ++i, p += 4) map.matrix.data()[i] = detail::get_f32(p);
      map.check();
      stored.model = std::move(map);
    } else if (kind == "mlp") {
      if (header.value("activation", "relu") != MlpModel::activation()) {
        throw Error(ErrorCode::kInvalidInput, "unsupported activation " + header.at("activation").dump());
      }
      TrainedMlp mlp{MlpModel(header.at("layer_dims").get<std::vector<std::size_t>>(), header.value("preset", "custom")),
                     train_config_from_json(header.at("train_config"))};
      if (mlp.model.param_count() != declared) {
        throw Error(ErrorCode::kParamCountMismatch, "layer_dims imply " + std::to_string(mlp.model.param_count()) +
                                                        " params, header declares " + std::to_string(declared));
      }
      for (auto& layer : mlp.model.layers()) {
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i, p += 4) layer.weight.data()[i] = detail::get_f32(p);
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i, p += 4) layer.bias(i) = detail::get_f32(p);
      }
      stored.model = std::move(mlp);
    } else {
      throw Error(ErrorCode::kKindMismatch, "unknown model kind '" + kind + "'");
    }
    return stored;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("model header: ") + e.what());
  }
}

inline void write_model(const fs::path& path, const StoredModel& stored) {
  detail::write_file_atomic(path, encode_model(stored));
}

inline StoredModel read_model(const fs::path& path) { return decode_model(detail::read_file(path)); }

inline LinearMap read_linear_model(const fs::path& path) {
  StoredModel stored = read_model(path);
  if (auto* map = std::get_if<LinearMap>(&stored.model)) return std::move(*map);
  throw Error(ErrorCode::kKindMismatch, "'" + path.string() + "' holds an mlp model, expected linear");
}

inline TrainedMlp read_mlp_model(const fs::path& path) {
  StoredModel stored = read_model(path);
  if (auto* mlp = std::get_if<TrainedMlp>(&stored.model)) return std::move(*mlp);
  throw Error(ErrorCode::kKindMismatch, "'" + path.string() + "' holds a linear model, expected mlp");
}

inline EmbeddingSet apply_model(const AlignmentModel& model, const EmbeddingSet& set) {
  if (const auto* linear = std::get_if<LinearMap>(&model)) return apply_linear(*linear, set);
  return apply_mlp(std::get<TrainedMlp>(model).model, set);
}

// ---------------------------------------------------------------------------
// Qrels: query_id<TAB>doc_id<TAB>relevance, relevance > 0 means relevant.

struct QrelsLoad {
  Qrels qrels;
  std::size_t dropped_nonpositive = 0;
  std::size_t duplicates = 0;
};

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return fields;
}

/// Blank lines and lines starting with '#' are skipped.
inline QrelsLoad parse_qrels(std::string_view text) {
  QrelsLoad out;
  std::size_t line_no = 0;
  for (std::string_view line : decode_ids(text)) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty()) {
      throw Error(ErrorCode::kParse, "qrels line " + std::to_string(line_no) + ": expected 3 tab-separated fields, got " +
                                         std::to_string(fields.size()));
    }
    double relevance = 0.0;
    try {
      std::size_t used = 0;
      relevance = std::stod(std::string(fields[2]), &used);
      if (used != fields[2].size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw Error(ErrorCode::kParse, "qrels line " + std::to_string(line_no) + ": bad relevance '" +
                                         std::string(fields[2]) + "'");
    }
    if (!(relevance > 0.0)) {
      ++out.dropped_nonpositive;
      continue;
    }
    if (!out.qrels[std::string(fields[0])].insert(std::string(fields[1])).second) ++out.duplicates;
  }
  return out;
}

inline QrelsLoad read_qrels(const fs::path& path) { return parse_qrels(detail::read_file(path)); }

inline void write_qrels(const fs::path& path, const Qrels& qrels) {
  std::string out = "# query_id\tdoc_id\trelevance\n";
  for (const auto& [query, docs] : qrels) {
    for (const auto& doc : docs) out += query + '\t' + doc + "\t1\n";
  }
  detail::write_file_atomic(path, out);
}

// ---------------------------------------------------------------------------
// Run files: query_id<TAB>rank<TAB>doc_id<TAB>score, ranks from 1.

inline std::string format_double(double v, int precision = 10) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

inline std::string encode_run(const RetrievalRun& run, const nlohmann::json& config = nullptr) {
  std::string out = "# metric=" + std::string(to_string(run.metric)) + "\tk=" + std::to_string(run.k) + "\n";
  if (!config.is_null()) out += "# config=" + config.dump() + "\n";
  out += "# query_id\trank\tdoc_id\tscore\n";
  for (const auto& q : run.queries) {
    for (std::size_t r = 0; r < q.hits.size(); ++r) {
      out += q.query_id + '\t' + std::to_string(r + 1) + '\t' + q.hits[r].doc_id + '\t' + format_double(q.hits[r].score, 17) +
             '\n';
    }
  }
  return out;
}

inline void write_run(const fs::path& path, const RetrievalRun& run, const nlohmann::json& config = nullptr) {
  detail::write_file_atomic(path, encode_run(run, config));
}

inline RetrievalRun parse_run(std::string_view text) {
  RetrievalRun run;
  std::size_t line_no = 0;
  std::size_t declared_k = 0;
  for (std::string_view line : decode_ids(text)) {
    ++line_no;
    if (line.empty()) continue;
    if (line.front() == '#') {
      for (std::string_view field : split_tabs(line.substr(1))) {
        while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
        if (field.starts_with("metric=")) run.metric = parse_metric(field.substr(7));
        if (field.starts_with("k=")) {
          try {
            declared_k = std::stoul(std::string(field.substr(2)));
          } catch (const std::exception&) {
            throw Error(ErrorCode::kParse, "run line " + std::to_string(line_no) + ": bad k");
          }
        }
      }
      continue;
    }
    const auto fields = split_tabs(line);
    if (fields.size() != 4) {
      throw Error(ErrorCode::kParse, "run line " + std::to_string(line_no) + ": expected 4 fields");
    }
    if (run.queries.empty() || run.queries.back().query_id != fields[0]) {
      run.queries.push_back({std::string(fields[0]), {}});
    }
    try {
      const std::size_t rank = std::stoul(std::string(fields[1]));
      if (rank != run.queries.back().hits.size() + 1) throw std::invalid_argument("rank out of order");
      run.queries.back().hits.push_back({std::string(fields[2]), std::stod(std::string(fields[3]))});
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kParse, "run line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  std::size_t longest = 0;
  for (const auto& q : run.queries) longest = std::max(longest, q.hits.size());
  run.k = declared_k > 0 ? declared_k : longest;
  return run;
}

inline RetrievalRun read_run(const fs::path& path) { return parse_run(detail::read_file(path)); }

// ---------------------------------------------------------------------------
// Whitespace-separated text matrices, one row per line.

inline RowMatrix parse_text_matrix(std::string_view text) {
  std::vector<std::vector<float>> rows;
  std::size_t line_no = 0;
  for (std::string_view line : decode_ids(text)) {
    ++line_no;
    std::istringstream in{std::string(line)};
    std::vector<float> row;
    std::string token;
    while (in >> token) {
      try {
        std::size_t used = 0;
        row.push_back(std::stof(token, &used));
        if (used != token.size()) throw std::invalid_argument(token);
      } catch (const std::exception&) {
        throw Error(ErrorCode::kParse, "matrix line " + std::to_string(line_no) + ": bad number '" + token + "'");
      }
    }
    if (row.empty()) continue;
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw Error(ErrorCode::kParse, "matrix line " + std::to_string(line_no) + ": " + std::to_string(row.size()) +
                                         " columns, expected " + std::to_string(rows.front().size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorCode::kParse, "matrix has no rows");
  RowMatrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return out;
}

inline RowMatrix read_text_matrix(const fs::path& path) { return parse_text_matrix(detail::read_file(path)); }

}  // namespace steer
