#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "steer/embedding.hpp"
#include "steer/error.hpp"

namespace steer {

/// Linear alignment map in row-vector convention: server ≈ local · matrix,
/// with matrix of shape source_dim × target_dim.
struct LinearMap {
  RowMatrix matrix;
  double ridge_lambda = 0.0;

  std::size_t source_dim() const noexcept { return static_cast<std::size_t>(matrix.rows()); }
  std::size_t target_dim() const noexcept { return static_cast<std::size_t>(matrix.cols()); }

  void check() const {
    if (matrix.rows() < 1 || matrix.cols() < 1) throw Error(ErrorCode::kInvalidInput, "linear map has an empty shape");
    if (!matrix.allFinite()) throw Error(ErrorCode::kInvalidInput, "linear map has non-finite entries");
    if (!(ridge_lambda >= 0.0)) throw Error(ErrorCode::kInvalidInput, "ridge_lambda must be non-negative");
  }
};

struct LinearFit {
  LinearMap map;
  double residual_mse = 0.0;  // (1/m) Σ ‖e_L·A − e_S‖²
  std::vector<Diagnostic> warnings;
};

/// Ratio |R_min| / |R_max| of the pivoted QR below which E_L is treated as
/// numerically rank deficient. Inputs are float32, so dependencies only hold
/// up to float rounding; the cutoff scales float epsilon by max(m, p).
inline double rank_tolerance(Eigen::Index m, Eigen::Index p) {
  return static_cast<double>(std::max(m, p)) * static_cast<double>(std::numeric_limits<float>::epsilon());
}

/// Least-squares fit of A minimising ‖E_L A − E_S‖²_F + λ‖A‖²_F.
///
/// The ridge problem is solved as the stacked system [E_L; √λ I] A = [E_S; 0]
/// with a Householder QR in double precision, so the normal matrix E_LᵀE_L is
/// never formed or inverted. With λ = 0 the pivoted QR also reports rank.
inline LinearFit fit_linear(const AlignmentPairs& pairs, double ridge_lambda) {
  require_valid(pairs);
  if (!(ridge_lambda >= 0.0) || !std::isfinite(ridge_lambda)) {
    throw Error(ErrorCode::kInvalidInput, "ridge_lambda must be a finite non-negative number");
  }
  const Eigen::Index m = pairs.local.vectors().rows();
  const Eigen::Index p = pairs.local.vectors().cols();
  const Eigen::Index q = pairs.server.vectors().cols();

  LinearFit fit;
  if (m < p) {
    fit.warnings.push_back({DiagnosticKind::kUnderdetermined,
                            "only " + std::to_string(m) + " pairs for source dim " + std::to_string(p) +
                                "; the fit is underdetermined and leans on the ridge term",
                            std::nullopt});
  }

  Eigen::MatrixXd design(m + (ridge_lambda > 0.0 ? p : 0), p);
  Eigen::MatrixXd target = Eigen::MatrixXd::Zero(design.rows(), q);
  design.topRows(m) = pairs.local.vectors().cast<double>();
  target.topRows(m) = pairs.server.vectors().cast<double>();
  if (ridge_lambda > 0.0) {
    design.bottomRows(p) = std::sqrt(ridge_lambda) * Eigen::MatrixXd::Identity(p, p);
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  const auto diag = qr.matrixQR().diagonal().cwiseAbs();
  const double largest = diag.size() > 0 ? diag(0) : 0.0;
  const double smallest = diag.size() > 0 ? diag.minCoeff() : 0.0;
  if (design.rows() < p || largest == 0.0 || smallest < rank_tolerance(m, p) * largest) {
    throw Error(ErrorCode::kRankDeficient,
                "normal matrix E_L^T E_L is singular or ill-conditioned (|R| ratio " +
                    std::to_string(largest == 0.0 ? 0.0 : smallest / largest) +
                    "); retry with a positive ridge_lambda");
  }
  const Eigen::MatrixXd solution = qr.solve(target);

  fit.map.matrix = solution.cast<float>();
  fit.map.ridge_lambda = ridge_lambda;
  fit.map.check();

  const Eigen::MatrixXd residual =
      pairs.local.vectors().cast<double>() * fit.map.matrix.cast<double>() - pairs.server.vectors().cast<double>();
  fit.residual_mse = residual.squaredNorm() / static_cast<double>(m);
  return fit;
}

/// Maps every row of set through the linear map (products accumulate in double).
inline EmbeddingSet apply_linear(const LinearMap& map, const EmbeddingSet& set) {
  if (set.dim() != map.source_dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "input dim " + std::to_string(set.dim()) +
                                                   " does not match map source dim " +
                                                   std::to_string(map.source_dim()));
  }
  RowMatrix out = (set.vectors().cast<double>() * map.matrix.cast<double>()).cast<float>();
  return EmbeddingSet(EmbeddingSet::Unchecked{}, set.ids(), std::move(out), "approx");
}

}  // namespace steer
