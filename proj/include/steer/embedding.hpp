#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "steer/error.hpp"

namespace steer {

template <typename T>
using RowMatrixT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrix = RowMatrixT<float>;
using RowMatrixD = RowMatrixT<double>;

// ---------------------------------------------------------------------------
// Vector math. Reductions accumulate in double regardless of storage type.

template <typename T, typename U>
double dot(std::span<const T> a, std::span<const U> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return sum;
}

template <typename T>
double norm(std::span<const T> a) {
  return std::sqrt(dot(a, a));
}

/// Cosine of the angle between a and b. Zero-norm inputs are an error rather
/// than a silent 0 so that they cannot leak into rankings.
template <typename T, typename U>
double cosine_similarity(std::span<const T> a, std::span<const U> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "cosine of vectors with dims " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::kDegenerate, "cosine similarity of a zero-norm vector");
  const double c = dot(a, b) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

inline double cosine_similarity(std::initializer_list<double> a, std::initializer_list<double> b) {
  return cosine_similarity(std::span<const double>(a.begin(), a.size()), std::span<const double>(b.begin(), b.size()));
}

template <typename Derived>
std::span<const typename Derived::Scalar> row_span(const Eigen::MatrixBase<Derived>& m, Eigen::Index r) {
  static_assert(Derived::IsRowMajor, "row_span needs row-major storage");
  return {m.derived().data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

// ---------------------------------------------------------------------------

/// An ordered set of embeddings in one space. Immutable once built.
class EmbeddingSet {
 public:
  /// Tag for construction that checks shape only. Used when loading data
  /// that still has to be diagnosed (duplicates, non-finite rows).
  struct Unchecked {};

  EmbeddingSet(std::vector<std::string> ids, RowMatrix vectors, std::string space_label = {})
      : EmbeddingSet(Unchecked{}, std::move(ids), std::move(vectors), std::move(space_label)) {
    std::unordered_set<std::string_view> seen;
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (!seen.insert(ids_[i]).second) throw Error(ErrorCode::kInvalidInput, "duplicate id '" + ids_[i] + "'");
      if (!vectors_.row(static_cast<Eigen::Index>(i)).allFinite()) {
        throw Error(ErrorCode::kInvalidInput, "non-finite vector for id '" + ids_[i] + "'");
      }
    }
  }

  EmbeddingSet(Unchecked, std::vector<std::string> ids, RowMatrix vectors, std::string space_label = {})
      : ids_(std::move(ids)), vectors_(std::move(vectors)), space_label_(std::move(space_label)) {
    if (ids_.empty()) throw Error(ErrorCode::kInvalidInput, "embedding set must hold at least one vector");
    if (static_cast<std::size_t>(vectors_.rows()) != ids_.size()) {
      throw Error(ErrorCode::kIdCountMismatch, std::to_string(ids_.size()) + " ids for " +
                                                   std::to_string(vectors_.rows()) + " vectors");
    }
    if (vectors_.cols() < 1) throw Error(ErrorCode::kInvalidInput, "embedding dim must be at least 1");
  }

  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const RowMatrix& vectors() const noexcept { return vectors_; }
  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(vectors_.cols()); }
  const std::string& space_label() const noexcept { return space_label_; }

  std::span<const float> row(std::size_t i) const { return row_span(vectors_, static_cast<Eigen::Index>(i)); }

  EmbeddingSet relabeled(std::string label) const {
    return EmbeddingSet(Unchecked{}, ids_, vectors_, std::move(label));
  }

 private:
  std::vector<std::string> ids_;
  RowMatrix vectors_;
  std::string space_label_;
};

/// Training pairs for an alignment map: the same texts encoded in two spaces.
struct AlignmentPairs {
  EmbeddingSet local;
  EmbeddingSet server;
};

// ---------------------------------------------------------------------------
// Validation

enum class DiagnosticKind {
  kSizeMismatch,
  kIdOrderMismatch,
  kDuplicateId,
  kNonFinite,
  kUnderdetermined,
};

struct Diagnostic {
  DiagnosticKind kind;
  std::string message;
  std::optional<std::size_t> row;
};

struct Validation {
  std::vector<Diagnostic> diagnostics;

  bool ok() const noexcept { return diagnostics.empty(); }
  bool has(DiagnosticKind kind) const {
    for (const auto& d : diagnostics) {
      if (d.kind == kind) return true;
    }
    return false;
  }
};

/// Duplicate ids and non-finite rows within one set.
inline void diagnose_set(const EmbeddingSet& set, std::string_view which, std::vector<Diagnostic>& out) {
  std::unordered_set<std::string_view> seen;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const std::string& id = set.ids()[i];
    if (!seen.insert(id).second) {
      out.push_back({DiagnosticKind::kDuplicateId,
                     std::string(which) + " set: duplicate id '" + id + "' at row " + std::to_string(i), i});
    }
    if (!set.vectors().row(static_cast<Eigen::Index>(i)).allFinite()) {
      out.push_back({DiagnosticKind::kNonFinite,
                     std::string(which) + " set: non-finite value in row " + std::to_string(i) + " (id '" + id + "')",
                     i});
    }
  }
}

inline Validation validate_pairs(const AlignmentPairs& pairs) {
  Validation result;
  diagnose_set(pairs.local, "local", result.diagnostics);
  diagnose_set(pairs.server, "server", result.diagnostics);
  if (pairs.local.size() != pairs.server.size()) {
    result.diagnostics.push_back({DiagnosticKind::kSizeMismatch,
                                  "local set has " + std::to_string(pairs.local.size()) + " rows, server set has " +
                                      std::to_string(pairs.server.size()),
                                  std::nullopt});
    return result;
  }
  for (std::size_t i = 0; i < pairs.local.size(); ++i) {
    if (pairs.local.ids()[i] != pairs.server.ids()[i]) {
      result.diagnostics.push_back({DiagnosticKind::kIdOrderMismatch,
                                    "id mismatch at row " + std::to_string(i) + ": local '" + pairs.local.ids()[i] +
                                        "' vs server '" + pairs.server.ids()[i] + "'",
                                    i});
      break;  // one report is enough; the rest usually cascades
    }
  }
  return result;
}

/// Throws the first diagnostic as an Error if the pairs are not usable.
inline void require_valid(const AlignmentPairs& pairs) {
  const Validation v = validate_pairs(pairs);
  if (v.ok()) return;
  const Diagnostic& first = v.diagnostics.front();
  const ErrorCode code = (first.kind == DiagnosticKind::kIdOrderMismatch || first.kind == DiagnosticKind::kSizeMismatch)
                             ? ErrorCode::kIdMismatch
                             : ErrorCode::kInvalidInput;
  throw Error(code, first.message);
}

/// Checks that two sets list the same ids in the same order.
inline void require_same_ids(const EmbeddingSet& a, const EmbeddingSet& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kIdMismatch,
                "sets have " + std::to_string(a.size()) + " and " + std::to_string(b.size()) + " rows");
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.ids()[i] != b.ids()[i]) {
      throw Error(ErrorCode::kIdMismatch,
                  "id mismatch at row " + std::to_string(i) + ": '" + a.ids()[i] + "' vs '" + b.ids()[i] + "'");
    }
  }
}

/// Scales every row to unit Euclidean norm.
inline EmbeddingSet l2_normalize(const EmbeddingSet& set) {
  RowMatrix out(set.vectors().rows(), set.vectors().cols());
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const double n = norm(set.row(i));
    if (n == 0.0) throw Error(ErrorCode::kDegenerate, "cannot normalize zero-norm row for id '" + set.ids()[i] + "'");
    out.row(r) = (set.vectors().row(r).cast<double>() / n).cast<float>();
  }
  return EmbeddingSet(EmbeddingSet::Unchecked{}, set.ids(), std::move(out), set.space_label());
}

}  // namespace steer
