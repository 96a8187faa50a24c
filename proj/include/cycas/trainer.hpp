#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cycas/association.hpp"
#include "cycas/matrix.hpp"
#include "cycas/simulator.hpp"

namespace cycas {

/// Anything that maps instances to unit embedding columns.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual EmbeddingMatrix embed(std::span<const Instance> instances) const = 0;
};

/// One affine map, or two with tanh between them, followed by column
/// normalization. Parameters are stored as [W1, b1] or [W1, b1, W2, b2];
/// biases are column vectors.
class LearnedEmbedder final : public Embedder {
 public:
  struct Cache {
    Matrix input{1, 1};
    Matrix hidden{1, 1};  // tanh output, two-layer models only
  };

  /// hidden == 0 builds the single-layer model.
  static LearnedEmbedder random(std::size_t input_dim, std::size_t output_dim, std::size_t hidden, Rng& rng);
  static LearnedEmbedder identity(std::size_t dim);
  /// Validates shapes; accepts 2 or 4 matrices.
  static LearnedEmbedder from_parameters(std::vector<Matrix> params);

  std::size_t input_dim() const noexcept { return params_.front().cols(); }
  std::size_t output_dim() const noexcept { return params_[params_.size() - 2].rows(); }
  bool two_layer() const noexcept { return params_.size() == 4; }
  std::size_t parameter_count() const noexcept;

  const std::vector<Matrix>& parameters() const noexcept { return params_; }
  std::vector<Matrix>& parameters() noexcept { return params_; }

  /// Pre-normalization features, output_dim × K.
  Matrix features(const Matrix& observations, Cache* cache = nullptr) const;
  /// Parameter gradients given d(loss)/d(features).
  std::vector<Matrix> backward(const Cache& cache, const Matrix& d_features) const;

  EmbeddingMatrix embed(const Matrix& observations) const;
  EmbeddingMatrix embed(std::span<const Instance> instances) const override;

  friend bool operator==(const LearnedEmbedder& a, const LearnedEmbedder& b) { return a.params_ == b.params_; }

 private:
  explicit LearnedEmbedder(std::vector<Matrix> params) : params_(std::move(params)) {}
  std::vector<Matrix> params_;
};

/// Embedder that discards the nuisance coordinates of `world` exactly:
/// W = first min(output_dim, obs_dim − rank) signal rows of Rᵀ, zero bias.
LearnedEmbedder ideal_embedder(const IdentityWorld& world, std::size_t output_dim);

enum class OptimizerKind { sgd, adam };

const char* to_string(OptimizerKind kind) noexcept;
OptimizerKind parse_optimizer_kind(const std::string& s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg);
  void step(std::vector<Matrix>& params, const std::vector<Matrix>& grads);
  std::size_t steps_taken() const noexcept { return t_; }

 private:
  OptimizerConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::size_t t_ = 0;
};

/// What stage 2 trains on.
enum class Stage2Mode { mixed, inter_only };

const char* to_string(Stage2Mode mode) noexcept;
Stage2Mode parse_stage2_mode(const std::string& s);

struct TrainConfig {
  std::size_t pairs_per_batch = 8;
  std::size_t instances_per_frame = 8;
  std::size_t stage1_iters = 300;
  std::size_t stage2_iters = 1200;
  std::size_t frame_gap = 1;
  OptimizerConfig optimizer;
  LossConfig loss;
  SymmetrySchedule schedule;
  Stage2Mode stage2_mode = Stage2Mode::mixed;
  std::uint64_t seed = 1;
  /// Wall time makes logs run-dependent; off by default so logs reproduce byte for byte.
  bool record_wall_time = false;

  void validate() const;
};

class NumericalAbort : public std::runtime_error {
 public:
  NumericalAbort(const std::string& what, std::size_t iteration)
      : std::runtime_error(what), iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

struct StepResult {
  double loss = 0.0;
  double loss_intra = 0.0;
  double loss_inter = 0.0;
  std::size_t n_intra = 0;
  std::size_t n_inter = 0;
  double hard_cc_rate = 0.0;
};

/// Batch loss is mean(intra) + mean(inter); a batch without inter pairs
/// contributes only the intra mean. Applies exactly one optimizer step.
StepResult train_step(LearnedEmbedder& model, std::span<const FramePair> batch, const LossConfig& loss,
                      Optimizer& optimizer, std::size_t iteration = 0);

/// Loss of a batch and its parameter gradients without updating anything.
StepResult batch_gradient(const LearnedEmbedder& model, std::span<const FramePair> batch, const LossConfig& loss,
                          std::vector<Matrix>* grads);

struct TrainRecord {
  std::size_t iteration = 0;
  int stage = 1;
  StepResult step;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<TrainRecord> records;
  /// FNV-1a digest of every sampled pair, for controlled-experiment checks.
  std::uint64_t data_digest = 0;

  /// Columns: iter,stage,loss_intra,loss_inter,hard_cc_rate,seconds. A loss
  /// field is empty when the batch had no pairs of that kind.
  void write_csv(std::ostream& out) const;
};

struct TrainResult {
  LearnedEmbedder model;
  TrainLog log;
};

/// Draws the batch for one iteration from the data stream.
std::vector<FramePair> sample_batch(const IdentityWorld& world, const TrainConfig& cfg, int stage, Rng& rng);

/// Stage I: intra pairs only. Stage II: half intra, half inter (or all inter
/// in inter_only mode), weighted 1:1. τ is drawn per batch from the schedule.
TrainResult train_two_stage(const IdentityWorld& world, LearnedEmbedder model, const TrainConfig& cfg);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(std::ostream& out, const LearnedEmbedder& model);
LearnedEmbedder load_checkpoint(std::istream& in);

}  // namespace cycas
