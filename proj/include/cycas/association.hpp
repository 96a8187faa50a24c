#pragma once

// Cycle association: affinity, size-adaptive soft assignment, the cycle
// matrix, the symmetric and margin-relaxed losses with exact gradients, and a
// discrete Hungarian oracle for evaluation.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "cycas/matrix.hpp"

namespace cycas {

/// D×K matrix whose columns are unit vectors.
class EmbeddingMatrix {
 public:
  /// Takes columns that are already unit-norm (within 1e-9); throws otherwise.
  explicit EmbeddingMatrix(Matrix unit_columns);
  /// Normalizes arbitrary nonzero columns.
  static EmbeddingMatrix from_raw(const Matrix& columns);

  std::size_t dim() const noexcept { return m_.rows(); }
  std::size_t count() const noexcept { return m_.cols(); }
  const Matrix& matrix() const noexcept { return m_; }

 private:
  Matrix m_;
};

/// Pairwise cosine similarities, K1×K2.
class AffinityMatrix {
 public:
  explicit AffinityMatrix(Matrix s);
  const Matrix& matrix() const noexcept { return s_; }
  std::size_t rows() const noexcept { return s_.rows(); }
  std::size_t cols() const noexcept { return s_.cols(); }
  AffinityMatrix transposed() const { return AffinityMatrix(s_.transposed()); }

 private:
  Matrix s_;
};

enum class AssignmentKind { soft, hard };

class AssignmentMatrix {
 public:
  /// soft: nonnegative rows summing to 1; hard: 0/1 with at most one 1 per row and column.
  AssignmentMatrix(Matrix a, AssignmentKind kind);
  const Matrix& matrix() const noexcept { return a_; }
  AssignmentKind kind() const noexcept { return kind_; }

 private:
  Matrix a_;
  AssignmentKind kind_;
};

/// Square row-stochastic matrix A·A′.
class CycleMatrix {
 public:
  explicit CycleMatrix(Matrix c);
  const Matrix& matrix() const noexcept { return c_; }
  std::size_t size() const noexcept { return c_.rows(); }

 private:
  Matrix c_;
};

struct TemperatureConfig {
  double epsilon = 0.1;
  double delta = 0.5;

  void validate() const;
};

enum class LossKind { symmetric, asymmetric };

const char* to_string(LossKind kind) noexcept;
LossKind parse_loss_kind(const std::string& s);

struct LossConfig {
  LossKind kind = LossKind::asymmetric;
  double margin = 0.5;
  TemperatureConfig temperature;

  void validate() const;
};

AffinityMatrix affinity(const EmbeddingMatrix& x1, const EmbeddingMatrix& x2);

/// (1/ε)·ln[(δ(K−1)+1)/(1−δ)]; equals (1/ε)·ln(K+1) when δ = 0.5.
double adaptive_temperature(std::size_t k, const TemperatureConfig& cfg);

AssignmentMatrix soft_assign(const AffinityMatrix& s, double temperature);

CycleMatrix cycle(const AssignmentMatrix& forward, const AssignmentMatrix& backward);

/// (1/K²)·‖C − I‖₁.
double loss_symmetric(const CycleMatrix& c);
Matrix loss_symmetric_backward(const Matrix& c);

/// Mean over rows of the two hinge terms: the largest off-diagonal entry in
/// row i and in column i must sit at least `margin` below C[i][i].
/// A 1×1 cycle matrix has no competitors and scores 0.
double loss_asymmetric(const CycleMatrix& c, double margin);
/// Subgradient at ties goes to the first maximizer in row-major order.
Matrix loss_asymmetric_backward(const Matrix& c, double margin);

/// Everything the backward pass needs. Matrices are stored in the swapped
/// orientation (K1 ≤ K2); `swapped` records whether the caller's arguments
/// were exchanged.
struct CycleTape {
  LossConfig config;
  bool swapped = false;
  Matrix x1{1, 1};
  Matrix x2{1, 1};
  Matrix n1{1, 1};
  Matrix n2{1, 1};
  Matrix s{1, 1};
  Matrix a{1, 1};
  Matrix a_back{1, 1};
  Matrix c{1, 1};
  double t_forward = 0.0;
  double t_backward = 0.0;
};

struct CycleForward {
  double loss = 0.0;
  CycleTape tape;
  /// Set when the batch carries no training signal (single-instance asymmetric case).
  std::optional<std::string> warning;
};

struct GradientPair {
  Matrix dx1;
  Matrix dx2;
};

/// Full objective on raw D×K1 and D×K2 features. Columns are normalized
/// internally, so gradients are taken w.r.t. the unnormalized inputs.
CycleForward cycas_forward(const Matrix& x1, const Matrix& x2, const LossConfig& cfg);

/// Gradients w.r.t. the caller's (pre-swap) x1 and x2.
GradientPair cycas_backward(const CycleTape& tape);

/// One-to-one matching. col_of_row[i] is -1 when row i is unassigned, which
/// only happens when there are more rows than columns.
struct Matching {
  std::vector<int> col_of_row;
  std::size_t cols = 0;
  double total = 0.0;

  AssignmentMatrix assignment() const;
};

/// Maximum-similarity one-to-one assignment. Among optimal assignments the one
/// whose column sequence is lexicographically smallest is returned. When
/// rows exceed columns the transposed problem is solved.
Matching hungarian(const AffinityMatrix& s);

/// Fraction of rows that return to themselves after a Hungarian forward
/// match on S and a Hungarian backward match on Sᵀ. Like the soft loss, the
/// smaller set plays the role of the rows.
double hard_cycle_consistency(const AffinityMatrix& s);

}  // namespace cycas
