#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "steer/embedding.hpp"
#include "steer/error.hpp"

namespace steer {

template <typename T>
using RowVectorT = Eigen::Matrix<T, 1, Eigen::Dynamic>;

// ---------------------------------------------------------------------------
// Configuration

/// Hyperparameters for MLP alignment. The loss weights follow
///   total = mse + alpha·cos_dist + beta·huber + gamma·sim_penalty
/// and tau is the cosine level above which sim_penalty starts to bite.
struct TrainConfig {
  double alpha = 0.5;
  double beta = 0.1;
  double gamma = 0.1;
  double tau = 0.9;
  double huber_delta = 1.0;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  bool shuffle = true;

  void check() const {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidInput, what); };
    if (!(alpha >= 0.0) || !(beta >= 0.0) || !(gamma >= 0.0)) fail("alpha, beta and gamma must be >= 0");
    if (!(tau >= -1.0 && tau <= 1.0)) fail("tau must lie in [-1, 1]");
    if (!(huber_delta > 0.0)) fail("huber_delta must be > 0");
    if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
      fail("adam betas must lie in [0, 1)");
    }
    if (!(adam_epsilon > 0.0)) fail("adam_epsilon must be > 0");
    if (batch_size == 0) fail("batch_size must be >= 1");
  }
};

struct LossBreakdown {
  double mse = 0.0;
  double cos_dist = 0.0;
  double huber = 0.0;
  double sim_penalty = 0.0;
  double total = 0.0;
};

// ---------------------------------------------------------------------------
// Model

template <typename T>
struct DenseLayer {
  RowMatrixT<T> weight;  // fan_in × fan_out
  RowVectorT<T> bias;    // 1 × fan_out
};

/// Fully connected network with ReLU after every layer but the last.
template <typename T>
class BasicMlp {
 public:
  BasicMlp() = default;

  /// Zero-initialised network with the given layer widths [p, h1, ..., q].
  explicit BasicMlp(std::vector<std::size_t> layer_dims, std::string preset = "custom")
      : dims_(std::move(layer_dims)), preset_(std::move(preset)) {
    if (dims_.size() < 2) throw Error(ErrorCode::kInvalidInput, "an MLP needs at least input and output dims");
    for (std::size_t d : dims_) {
      if (d == 0) throw Error(ErrorCode::kInvalidInput, "MLP layer widths must be positive");
    }
    layers_.resize(dims_.size() - 1);
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      layers_[l].weight = RowMatrixT<T>::Zero(static_cast<Eigen::Index>(dims_[l]), static_cast<Eigen::Index>(dims_[l + 1]));
      layers_[l].bias = RowVectorT<T>::Zero(static_cast<Eigen::Index>(dims_[l + 1]));
    }
  }

  /// Kaiming-uniform weights (bound √(6/fan_in)) and biases in ±1/√fan_in.
  static BasicMlp kaiming(std::vector<std::size_t> layer_dims, std::uint64_t seed, std::string preset = "custom") {
    BasicMlp model(std::move(layer_dims), std::move(preset));
    std::mt19937_64 rng(seed);
    for (auto& layer : model.layers_) {
      const double fan_in = static_cast<double>(layer.weight.rows());
      std::uniform_real_distribution<double> w(-std::sqrt(6.0 / fan_in), std::sqrt(6.0 / fan_in));
      std::uniform_real_distribution<double> b(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
      for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = static_cast<T>(w(rng));
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = static_cast<T>(b(rng));
    }
    return model;
  }

  const std::vector<std::size_t>& layer_dims() const noexcept { return dims_; }
  std::size_t input_dim() const noexcept { return dims_.front(); }
  std::size_t output_dim() const noexcept { return dims_.back(); }
  const std::string& preset() const noexcept { return preset_; }
  static constexpr std::string_view activation() { return "relu"; }

  const std::vector<DenseLayer<T>>& layers() const noexcept { return layers_; }
  std::vector<DenseLayer<T>>& layers() noexcept { return layers_; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers_) n += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
    return n;
  }

  bool all_finite() const {
    return std::all_of(layers_.begin(), layers_.end(),
                       [](const DenseLayer<T>& l) { return l.weight.allFinite() && l.bias.allFinite(); });
  }

  template <typename U>
  BasicMlp<U> cast() const {
    BasicMlp<U> out(dims_, preset_);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      out.layers()[l].weight = layers_[l].weight.template cast<U>();
      out.layers()[l].bias = layers_[l].bias.template cast<U>();
    }
    return out;
  }

 private:
  std::vector<std::size_t> dims_;
  std::vector<DenseLayer<T>> layers_;
  std::string preset_ = "custom";
};

using MlpModel = BasicMlp<float>;

// ---------------------------------------------------------------------------
// Capacity presets. Widths are defaults; callers may override them.

inline std::vector<std::size_t> preset_hidden_dims(std::string_view preset) {
  if (preset == "small") return {1024};
  if (preset == "medium") return {2048};
  if (preset == "base") return {4096, 4096};
  throw Error(ErrorCode::kInvalidInput, "unknown MLP preset '" + std::string(preset) + "'");
}

/// Full layer dims [p, hidden..., q] for a preset, or for "custom" with the
/// hidden widths supplied (an empty list gives a single linear layer).
inline std::vector<std::size_t> architecture(std::string_view preset, std::size_t p, std::size_t q,
                                             const std::optional<std::vector<std::size_t>>& hidden = std::nullopt) {
  std::vector<std::size_t> dims{p};
  if (hidden) {
    dims.insert(dims.end(), hidden->begin(), hidden->end());
  } else if (preset == "custom") {
    throw Error(ErrorCode::kInvalidInput, "custom MLP needs explicit hidden dims");
  } else {
    const auto h = preset_hidden_dims(preset);
    dims.insert(dims.end(), h.begin(), h.end());
  }
  dims.push_back(q);
  return dims;
}

// ---------------------------------------------------------------------------
// Forward pass

/// Per-layer outputs kept for backprop: activations[0] is the input batch and
/// activations.back() is the network output.
template <typename T>
struct ForwardTrace {
  std::vector<RowMatrixT<T>> activations;
};

template <typename T>
ForwardTrace<T> mlp_forward_trace(const BasicMlp<T>& model, const RowMatrixT<T>& batch) {
  if (static_cast<std::size_t>(batch.cols()) != model.input_dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "batch has " + std::to_string(batch.cols()) +
                                                   " columns, model expects " + std::to_string(model.input_dim()));
  }
  ForwardTrace<T> trace;
  trace.activations.reserve(model.layers().size() + 1);
  trace.activations.push_back(batch);
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    const auto& layer = model.layers()[l];
    RowMatrixT<T> z = trace.activations.back() * layer.weight;
    z.rowwise() += layer.bias;
    if (l + 1 < model.layers().size()) z = z.cwiseMax(T(0));
    trace.activations.push_back(std::move(z));
  }
  return trace;
}

template <typename T>
RowMatrixT<T> mlp_forward(const BasicMlp<T>& model, const RowMatrixT<T>& batch) {
  return std::move(mlp_forward_trace(model, batch).activations.back());
}

// ---------------------------------------------------------------------------
// Loss

/// Evaluates every loss term on predictions vs targets. When grad is given it
/// receives d total / d prediction. All arithmetic is in double.
template <typename Pred, typename Target>
LossBreakdown loss_from_outputs(const Eigen::MatrixBase<Pred>& prediction, const Eigen::MatrixBase<Target>& target,
                                const TrainConfig& cfg, RowMatrixD* grad = nullptr) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "prediction and target shapes differ");
  }
  const Eigen::Index m = prediction.rows();
  const Eigen::Index q = prediction.cols();
  if (m == 0) throw Error(ErrorCode::kInvalidInput, "loss over an empty batch");
  const RowMatrixD pred = prediction.template cast<double>();
  const RowMatrixD tgt = target.template cast<double>();
  const RowMatrixD diff = pred - tgt;
  const double inv_m = 1.0 / static_cast<double>(m);
  const double inv_mq = inv_m / static_cast<double>(q);
  const double delta = cfg.huber_delta;

  LossBreakdown out;
  if (grad != nullptr) grad->setZero(m, q);

  for (Eigen::Index i = 0; i < m; ++i) {
    const auto p_row = pred.row(i);
    const auto t_row = tgt.row(i);
    const auto d_row = diff.row(i);

    out.mse += d_row.squaredNorm() * inv_m;

    double huber_row = 0.0;
    for (Eigen::Index j = 0; j < q; ++j) {
      const double r = d_row(j);
      huber_row += std::abs(r) <= delta ? 0.5 * r * r : delta * (std::abs(r) - 0.5 * delta);
    }
    out.huber += huber_row * inv_mq;

    const double pn = p_row.norm();
    const double tn = t_row.norm();
    if (pn == 0.0 || tn == 0.0) {
      throw Error(ErrorCode::kDegenerate, "zero-norm " + std::string(pn == 0.0 ? "prediction" : "target") +
                                              " at row " + std::to_string(i) + " while computing cosine loss");
    }
    const double c = std::clamp(p_row.dot(t_row) / (pn * tn), -1.0, 1.0);
    out.cos_dist += (1.0 - c) * inv_m;
    const bool penalised = c > cfg.tau;
    if (penalised) out.sim_penalty += (c - cfg.tau) * inv_m;

    if (grad != nullptr) {
      auto g = grad->row(i);
      g = (2.0 * inv_m) * d_row;
      for (Eigen::Index j = 0; j < q; ++j) {
        const double r = d_row(j);
        g(j) += cfg.beta * inv_mq * (std::abs(r) <= delta ? r : std::copysign(delta, r));
      }
      // d cos / d pred = t / (|p||t|) - cos · p / |p|²
      const double cos_weight = (penalised ? cfg.gamma : 0.0) - cfg.alpha;
      if (cos_weight != 0.0) {
        g += (cos_weight * inv_m) * (t_row / (pn * tn) - (c / (pn * pn)) * p_row);
      }
    }
  }
  out.total = out.mse + cfg.alpha * out.cos_dist + cfg.beta * out.huber + cfg.gamma * out.sim_penalty;
  return out;
}

template <typename T>
void check_batch_shapes(const BasicMlp<T>& model, const RowMatrixT<T>& local, const RowMatrixT<T>& server) {
  if (local.rows() != server.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "local and server batches have different row counts");
  }
  if (static_cast<std::size_t>(local.cols()) != model.input_dim() ||
      static_cast<std::size_t>(server.cols()) != model.output_dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "batch dims do not match model dims");
  }
}

template <typename T>
LossBreakdown loss(const BasicMlp<T>& model, const RowMatrixT<T>& local, const RowMatrixT<T>& server,
                   const TrainConfig& cfg) {
  check_batch_shapes(model, local, server);
  return loss_from_outputs(mlp_forward(model, local), server, cfg);
}

// ---------------------------------------------------------------------------
// Gradient

template <typename T>
struct MlpGradients {
  std::vector<RowMatrixT<T>> weight;
  std::vector<RowVectorT<T>> bias;
};

template <typename T>
struct LossAndGradient {
  LossBreakdown loss;
  MlpGradients<T> grad;
};

/// Reverse-mode gradient of the total loss with respect to every parameter.
template <typename T>
LossAndGradient<T> loss_gradient(const BasicMlp<T>& model, const RowMatrixT<T>& local, const RowMatrixT<T>& server,
                                 const TrainConfig& cfg) {
  check_batch_shapes(model, local, server);
  const ForwardTrace<T> trace = mlp_forward_trace(model, local);
  RowMatrixD d_out;
  LossAndGradient<T> result;
  result.loss = loss_from_outputs(trace.activations.back(), server, cfg, &d_out);

  const std::size_t n_layers = model.layers().size();
  result.grad.weight.resize(n_layers);
  result.grad.bias.resize(n_layers);
  RowMatrixT<T> upstream = d_out.cast<T>();
  for (std::size_t l = n_layers; l-- > 0;) {
    const RowMatrixT<T>& input = trace.activations[l];
    result.grad.weight[l].noalias() = input.transpose() * upstream;
    result.grad.bias[l] = upstream.colwise().sum();
    if (l == 0) break;
    RowMatrixT<T> d_input = upstream * model.layers()[l].weight.transpose();
    // input is a ReLU output, so input > 0 exactly where the unit was active
    upstream = (input.array() > T(0)).select(d_input, T(0));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
  MlpModel model;
  std::vector<LossBreakdown> history;  // one entry per epoch
};

namespace detail {

template <typename T>
struct AdamState {
  std::vector<RowMatrixT<T>> m_w, v_w;
  std::vector<RowVectorT<T>> m_b, v_b;
  std::uint64_t step = 0;

  explicit AdamState(const BasicMlp<T>& model) {
    for (const auto& layer : model.layers()) {
      m_w.push_back(RowMatrixT<T>::Zero(layer.weight.rows(), layer.weight.cols()));
      v_w.push_back(m_w.back());
      m_b.push_back(RowVectorT<T>::Zero(layer.bias.size()));
      v_b.push_back(m_b.back());
    }
  }

  template <typename Param, typename Grad, typename Moment>
  static void update(Param& param, const Grad& g, Moment& m, Moment& v, const TrainConfig& cfg, double lr_t) {
    const T b1 = static_cast<T>(cfg.adam_beta1);
    const T b2 = static_cast<T>(cfg.adam_beta2);
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
    param.array() -= static_cast<T>(lr_t) * m.array() / (v.array().sqrt() + static_cast<T>(cfg.adam_epsilon));
  }

  void apply(BasicMlp<T>& model, const MlpGradients<T>& grad, const TrainConfig& cfg) {
    ++step;
    const double s = static_cast<double>(step);
    // bias correction folded into the step size
    const double lr_t = cfg.learning_rate * std::sqrt(1.0 - std::pow(cfg.adam_beta2, s)) /
                        (1.0 - std::pow(cfg.adam_beta1, s));
    for (std::size_t l = 0; l < model.layers().size(); ++l) {
      update(model.layers()[l].weight, grad.weight[l], m_w[l], v_w[l], cfg, lr_t);
      update(model.layers()[l].bias, grad.bias[l], m_b[l], v_b[l], cfg, lr_t);
    }
  }
};

}  // namespace detail

/// Trains an MLP mapping pairs.local onto pairs.server with Adam on the
/// composite loss. Deterministic for fixed inputs, dims and cfg.seed.
inline TrainResult train_mlp(const AlignmentPairs& pairs, std::vector<std::size_t> layer_dims, const TrainConfig& cfg,
                             std::string preset = "custom") {
  require_valid(pairs);
  cfg.check();
  if (layer_dims.size() < 2 || layer_dims.front() != pairs.local.dim() || layer_dims.back() != pairs.server.dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "layer dims must start at the local dim (" +
                                                   std::to_string(pairs.local.dim()) + ") and end at the server dim (" +
                                                   std::to_string(pairs.server.dim()) + ")");
  }

  TrainResult result{MlpModel::kaiming(std::move(layer_dims), cfg.seed, std::move(preset)), {}};
  detail::AdamState<float> adam(result.model);
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  const std::size_t m = pairs.local.size();
  const std::size_t batch = std::min(cfg.batch_size, m);
  const RowMatrix& local = pairs.local.vectors();
  const RowMatrix& server = pairs.server.vectors();
  std::vector<Eigen::Index> order(m);
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  RowMatrix batch_local, batch_server;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) std::shuffle(order.begin(), order.end(), shuffle_rng);
    LossBreakdown epoch_loss;
    for (std::size_t start = 0, b = 0; start < m; start += batch, ++b) {
      const std::size_t rows = std::min(batch, m - start);
      batch_local.resize(static_cast<Eigen::Index>(rows), local.cols());
      batch_server.resize(static_cast<Eigen::Index>(rows), server.cols());
      for (std::size_t r = 0; r < rows; ++r) {
        batch_local.row(static_cast<Eigen::Index>(r)) = local.row(order[start + r]);
        batch_server.row(static_cast<Eigen::Index>(r)) = server.row(order[start + r]);
      }
      const auto step = loss_gradient(result.model, batch_local, batch_server, cfg);
      if (!std::isfinite(step.loss.total)) {
        throw Error(ErrorCode::kDivergence, "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                                std::to_string(b));
      }
      adam.apply(result.model, step.grad, cfg);
      if (!result.model.all_finite()) {
        throw Error(ErrorCode::kDivergence, "non-finite parameters after epoch " + std::to_string(epoch) +
                                                ", batch " + std::to_string(b));
      }
      const double w = static_cast<double>(rows) / static_cast<double>(m);
      epoch_loss.mse += w * step.loss.mse;
      epoch_loss.cos_dist += w * step.loss.cos_dist;
      epoch_loss.huber += w * step.loss.huber;
      epoch_loss.sim_penalty += w * step.loss.sim_penalty;
      epoch_loss.total += w * step.loss.total;
    }
    result.history.push_back(epoch_loss);
  }
  return result;
}

/// Whether the trailing-window moving average of total loss never rises by
/// more than rel_tol (relative). A rise flags divergence.
inline bool smoothed_loss_nonincreasing(const std::vector<LossBreakdown>& history, std::size_t window = 10,
                                        double rel_tol = 0.0) {
  if (history.size() <= window) return true;
  double previous = 0.0;
  for (std::size_t i = 0; i < window; ++i) previous += history[i].total;
  previous /= static_cast<double>(window);
  for (std::size_t end = window + 1; end <= history.size(); ++end) {
    const double current =
        previous + (history[end - 1].total - history[end - 1 - window].total) / static_cast<double>(window);
    if (current > previous * (1.0 + rel_tol)) return false;
    previous = current;
  }
  return true;
}

/// Applies a trained model to every row (in chunks to bound memory).
inline EmbeddingSet apply_mlp(const MlpModel& model, const EmbeddingSet& set, Eigen::Index chunk = 4096) {
  if (set.dim() != model.input_dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "input dim " + std::to_string(set.dim()) +
                                                   " does not match model input dim " +
                                                   std::to_string(model.input_dim()));
  }
  const RowMatrix& in = set.vectors();
  RowMatrix out(in.rows(), static_cast<Eigen::Index>(model.output_dim()));
  for (Eigen::Index start = 0; start < in.rows(); start += chunk) {
    const Eigen::Index rows = std::min(chunk, in.rows() - start);
    out.middleRows(start, rows) = mlp_forward<float>(model, in.middleRows(start, rows));
  }
  return EmbeddingSet(EmbeddingSet::Unchecked{}, set.ids(), std::move(out), "approx");
}

}  // namespace steer
