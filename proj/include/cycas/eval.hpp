#pragma once

// Cross-camera retrieval metrics, the trivial-solution audit, and the
// symmetry / loss / schedule experiments built on top of them.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cycas/simulator.hpp"
#include "cycas/trainer.hpp"

namespace cycas {

struct RetrievalMetrics {
  double rank1 = 0.0;
  double mAP = 0.0;
  std::size_t n_queries = 0;
};

/// Average precision of a ranking by descending score (ties keep index
/// order). Returns 0 when nothing is relevant.
double average_precision(std::span<const double> scores, std::span<const char> relevant);

/// Ranks every gallery item by cosine to each query. A gallery item is
/// relevant when it shares the query identity and comes from another camera;
/// same-identity items from the query's own camera are skipped.
RetrievalMetrics retrieval_metrics(const EmbeddingMatrix& queries, std::span<const Instance> query_info,
                                   const EmbeddingMatrix& gallery, std::span<const Instance> gallery_info);

/// Single-query protocol. Camera 0 supplies one query for each of `n_ids`
/// randomly chosen identities. The gallery holds one observation of every
/// identity in every other camera, plus camera-0 observations of identities
/// that are not queried.
RetrievalMetrics evaluate_retrieval(const Embedder& model, const IdentityWorld& world, std::size_t n_ids, Rng& rng);

struct TrivialReport {
  double consistency = 0.0;
  double identity_match = 0.0;
  bool flagged = false;
};

struct TrivialAuditOptions {
  std::size_t pairs = 20;
  /// 0 puts every identity in both frames, so any shift is a full permutation.
  std::size_t instances = 0;
  std::uint64_t seed = 0x7121;
};

/// Hungarian matching on symmetric inter-camera pairs. Flags a solution that
/// is cycle-consistent (> 0.9) while mostly matching the wrong people (< 0.5).
TrivialReport detect_trivial_solution(const Embedder& model, const IdentityWorld& world,
                                      const TrivialAuditOptions& options = {});

/// Test fixture embedders that read the hidden labels directly.
class LabelEmbedder final : public Embedder {
 public:
  /// Camera c maps identity i to one-hot((i + shift·c) mod N).
  LabelEmbedder(std::size_t identities, std::size_t shift_per_camera)
      : identities_(identities), shift_(shift_per_camera) {}
  EmbeddingMatrix embed(std::span<const Instance> instances) const override;

 private:
  std::size_t identities_;
  std::size_t shift_;
};

struct ModelConfig {
  std::size_t embed_dim = 16;
  std::size_t hidden = 0;
};

/// Everything needed to train one model from scratch and score it.
struct ExperimentSettings {
  TrainConfig train;
  ModelConfig model;
  std::size_t eval_queries = 32;
};

struct RunOutcome {
  std::uint64_t seed = 0;
  RetrievalMetrics metrics;
  RetrievalMetrics untrained;
  TrivialReport trivial;
  TrainResult result;
};

/// Model init, data stream and evaluation draws are all derived from `seed`.
LearnedEmbedder initial_model(const IdentityWorld& world, const ModelConfig& model, std::uint64_t seed);
RunOutcome run_experiment(const IdentityWorld& world, const ExperimentSettings& settings, std::uint64_t seed);
RetrievalMetrics evaluate_for_seed(const Embedder& model, const IdentityWorld& world, std::size_t n_ids,
                                   std::uint64_t seed);

enum class SweepAxis { alpha, beta };

const char* to_string(SweepAxis axis) noexcept;
SweepAxis parse_sweep_axis(const std::string& s);

struct SweepPoint {
  double tau_mean = 0.0;
  std::uint64_t seed = 0;
  RetrievalMetrics metrics;
};

struct SweepResult {
  SweepAxis axis = SweepAxis::alpha;
  std::vector<SweepPoint> grid;

  struct Summary {
    double tau_mean;
    double mean_rank1;
    double se_rank1;
    double mean_map;
    std::size_t n;
  };
  /// Per grid value, in first-seen order.
  std::vector<Summary> summarize() const;
};

/// Trains `n_seeds` models per grid value (seeds settings.train.seed + s)
/// with the swept mean perturbed per batch and the other axis fixed.
SweepResult sweep_symmetry(const IdentityWorld& world, const ExperimentSettings& settings, SweepAxis axis,
                           std::span<const double> grid, double fixed_other, std::size_t n_seeds);

/// One grid point with one seed; what sweep_symmetry runs per cell.
SweepPoint sweep_cell(const IdentityWorld& world, const ExperimentSettings& settings, SweepAxis axis, double tau_mean,
                      double fixed_other, std::uint64_t seed);

struct TrendCheck {
  double value = 0.0;  // endpoint gap, or number of inversions
  bool passed = false;
};

/// |mean rank-1 at the first grid value − mean rank-1 at the last| ≤ tolerance.
TrendCheck endpoint_gap_check(std::span<const SweepResult::Summary> summary, double tolerance = 0.05);

/// Mean rank-1 non-decreasing along the grid, except for at most one step
/// down no larger than the larger standard error of the two points.
TrendCheck monotone_check(std::span<const SweepResult::Summary> summary);

enum class DataSymmetry { symmetric, asymmetric };

struct LossComparisonRow {
  LossKind kind = LossKind::asymmetric;
  RetrievalMetrics metrics;
  TrivialReport trivial;
  std::uint64_t data_digest = 0;
};

/// Trains the same seed and data stream twice, once per loss kind.
/// Symmetric data fixes τ = (1, 1); asymmetric data fixes τ = (0.9, 0.6).
std::vector<LossComparisonRow> compare_losses(const IdentityWorld& world, const ExperimentSettings& settings,
                                              DataSymmetry data, std::uint64_t seed);

}  // namespace cycas
