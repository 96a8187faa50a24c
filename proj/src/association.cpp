#include "cycas/association.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace cycas {

namespace {

constexpr double kUnitTol = 1e-9;
constexpr double kStochasticTol = 1e-12;

void require_row_stochastic(const Matrix& m, const char* what) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double sum = 0.0;
    for (double v : m.row(r)) {
      if (!(v >= 0.0)) throw std::invalid_argument(std::string(what) + ": negative or NaN entry");
      sum += v;
    }
    // Accumulated rounding grows with row length; 1e-12 per unit of length.
    const double tol = kStochasticTol * std::max<std::size_t>(1, m.cols());
    if (std::abs(sum - 1.0) > tol) {
      throw std::invalid_argument(std::string(what) + ": row " + std::to_string(r) + " does not sum to 1");
    }
  }
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(Matrix unit_columns) : m_(std::move(unit_columns)) {
  for (std::size_t c = 0; c < m_.cols(); ++c) {
    if (std::abs(detail::column_norm(m_, c) - 1.0) > kUnitTol) {
      throw std::invalid_argument("EmbeddingMatrix: column " + std::to_string(c) + " is not unit-norm");
    }
  }
}

EmbeddingMatrix EmbeddingMatrix::from_raw(const Matrix& columns) {
  return EmbeddingMatrix(l2_normalize_columns(columns));
}

AffinityMatrix::AffinityMatrix(Matrix s) : s_(std::move(s)) {
  for (double v : s_.data()) {
    if (!(v >= -1.0 - kUnitTol && v <= 1.0 + kUnitTol)) {
      throw std::invalid_argument("AffinityMatrix: entry outside cosine range");
    }
  }
}

AssignmentMatrix::AssignmentMatrix(Matrix a, AssignmentKind kind) : a_(std::move(a)), kind_(kind) {
  if (kind_ == AssignmentKind::soft) {
    require_row_stochastic(a_, "soft assignment");
    return;
  }
  std::vector<int> col_count(a_.cols(), 0);
  for (std::size_t r = 0; r < a_.rows(); ++r) {
    int row_count = 0;
    for (std::size_t c = 0; c < a_.cols(); ++c) {
      const double v = a_(r, c);
      if (v != 0.0 && v != 1.0) throw std::invalid_argument("hard assignment: entries must be 0 or 1");
      if (v == 1.0) {
        ++row_count;
        ++col_count[c];
      }
    }
    if (row_count > 1) throw std::invalid_argument("hard assignment: row assigned twice");
  }
  if (std::any_of(col_count.begin(), col_count.end(), [](int n) { return n > 1; })) {
    throw std::invalid_argument("hard assignment: column assigned twice");
  }
}

CycleMatrix::CycleMatrix(Matrix c) : c_(std::move(c)) {
  if (c_.rows() != c_.cols()) throw ShapeError("cycle matrix must be square");
  require_row_stochastic(c_, "cycle matrix");
}

void TemperatureConfig::validate() const {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("temperature epsilon must lie in (0,1)");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("temperature delta must lie in (0,1)");
}

const char* to_string(LossKind kind) noexcept {
  return kind == LossKind::symmetric ? "symmetric" : "asymmetric";
}

LossKind parse_loss_kind(const std::string& s) {
  if (s == "symmetric") return LossKind::symmetric;
  if (s == "asymmetric") return LossKind::asymmetric;
  throw std::invalid_argument("unknown loss kind '" + s + "'");
}

void LossConfig::validate() const {
  if (!(margin > 0.0 && margin < 1.0)) throw std::invalid_argument("loss margin must lie in (0,1)");
  temperature.validate();
}

AffinityMatrix affinity(const EmbeddingMatrix& x1, const EmbeddingMatrix& x2) {
  if (x1.dim() != x2.dim()) throw ShapeError("affinity: embedding dimensions differ");
  Matrix s = matmul(x1.matrix().transposed(), x2.matrix());
  // Rounding can push |cos| a hair past 1.
  for (auto& v : s.data()) v = std::clamp(v, -1.0, 1.0);
  return AffinityMatrix(std::move(s));
}

double adaptive_temperature(std::size_t k, const TemperatureConfig& cfg) {
  cfg.validate();
  if (k < 1) throw std::invalid_argument("adaptive_temperature: K must be at least 1");
  const double kk = static_cast<double>(k);
  return std::log((cfg.delta * (kk - 1.0) + 1.0) / (1.0 - cfg.delta)) / cfg.epsilon;
}

AssignmentMatrix soft_assign(const AffinityMatrix& s, double temperature) {
  return AssignmentMatrix(row_softmax(s.matrix(), temperature), AssignmentKind::soft);
}

CycleMatrix cycle(const AssignmentMatrix& forward, const AssignmentMatrix& backward) {
  if (forward.matrix().cols() != backward.matrix().rows() ||
      forward.matrix().rows() != backward.matrix().cols()) {
    throw ShapeError("cycle: assignment shapes do not compose to a square matrix");
  }
  return CycleMatrix(matmul(forward.matrix(), backward.matrix()));
}

namespace {

double symmetric_value(const Matrix& c) {
  if (c.rows() != c.cols()) throw ShapeError("loss_symmetric: cycle matrix must be square");
  double sum = 0.0;
  for (std::size_t i = 0; i < c.rows(); ++i)
    for (std::size_t j = 0; j < c.cols(); ++j) sum += std::abs(c(i, j) - (i == j ? 1.0 : 0.0));
  const double k = static_cast<double>(c.rows());
  return sum / (k * k);
}

struct Competitor {
  double value = 0.0;
  std::size_t index = 0;
  bool exists = false;
};

Competitor row_competitor(const Matrix& c, std::size_t i) {
  Competitor best;
  for (std::size_t j = 0; j < c.cols(); ++j) {
    if (j == i) continue;
    if (!best.exists || c(i, j) > best.value) best = {c(i, j), j, true};
  }
  return best;
}

Competitor col_competitor(const Matrix& c, std::size_t i) {
  Competitor best;
  for (std::size_t k = 0; k < c.rows(); ++k) {
    if (k == i) continue;
    if (!best.exists || c(k, i) > best.value) best = {c(k, i), k, true};
  }
  return best;
}

void check_margin(double margin) {
  if (!(margin > 0.0 && margin < 1.0)) throw std::invalid_argument("margin must lie in (0,1)");
}

double asymmetric_value(const Matrix& c, double margin) {
  if (c.rows() != c.cols()) throw ShapeError("loss_asymmetric: cycle matrix must be square");
  check_margin(margin);
  const std::size_t k = c.rows();
  if (k == 1) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    sum += std::max(0.0, row_competitor(c, i).value - c(i, i) + margin);
    sum += std::max(0.0, col_competitor(c, i).value - c(i, i) + margin);
  }
  return sum / static_cast<double>(k);
}

}  // namespace

double loss_symmetric(const CycleMatrix& c) { return symmetric_value(c.matrix()); }

Matrix loss_symmetric_backward(const Matrix& c) {
  if (c.rows() != c.cols()) throw ShapeError("loss_symmetric_backward: cycle matrix must be square");
  const double k = static_cast<double>(c.rows());
  Matrix g(c.rows(), c.cols());
  for (std::size_t i = 0; i < c.rows(); ++i) {
    for (std::size_t j = 0; j < c.cols(); ++j) {
      const double d = c(i, j) - (i == j ? 1.0 : 0.0);
      g(i, j) = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / (k * k);
    }
  }
  return g;
}

double loss_asymmetric(const CycleMatrix& c, double margin) { return asymmetric_value(c.matrix(), margin); }

Matrix loss_asymmetric_backward(const Matrix& c, double margin) {
  if (c.rows() != c.cols()) throw ShapeError("loss_asymmetric_backward: cycle matrix must be square");
  check_margin(margin);
  const std::size_t k = c.rows();
  Matrix g(k, k);
  if (k == 1) return g;
  const double w = 1.0 / static_cast<double>(k);
  for (std::size_t i = 0; i < k; ++i) {
    const Competitor r = row_competitor(c, i);
    if (r.value - c(i, i) + margin > 0.0) {
      g(i, r.index) += w;
      g(i, i) -= w;
    }
    const Competitor col = col_competitor(c, i);
    if (col.value - c(i, i) + margin > 0.0) {
      g(col.index, i) += w;
      g(i, i) -= w;
    }
  }
  return g;
}

CycleForward cycas_forward(const Matrix& x1, const Matrix& x2, const LossConfig& cfg) {
  cfg.validate();
  if (x1.rows() != x2.rows()) throw ShapeError("cycas_forward: embedding dimensions differ");

  CycleForward out;
  CycleTape& t = out.tape;
  t.config = cfg;
  t.swapped = x1.cols() > x2.cols();
  t.x1 = t.swapped ? x2 : x1;
  t.x2 = t.swapped ? x1 : x2;
  t.n1 = l2_normalize_columns(t.x1);
  t.n2 = l2_normalize_columns(t.x2);
  t.s = matmul(t.n1.transposed(), t.n2);

  const std::size_t k1 = t.s.rows();
  const std::size_t k2 = t.s.cols();
  t.t_forward = adaptive_temperature(k2, cfg.temperature);
  t.t_backward = adaptive_temperature(k1, cfg.temperature);
  t.a = row_softmax(t.s, t.t_forward);
  t.a_back = row_softmax(t.s.transposed(), t.t_backward);
  t.c = matmul(t.a, t.a_back);

  if (cfg.kind == LossKind::symmetric) {
    out.loss = symmetric_value(t.c);
  } else {
    out.loss = asymmetric_value(t.c, cfg.margin);
    if (k1 == 1) out.warning = "single-instance frame: asymmetric loss has no competitors and is 0";
  }
  if (!std::isfinite(out.loss)) throw std::domain_error("cycas_forward: non-finite loss");
  return out;
}

GradientPair cycas_backward(const CycleTape& t) {
  const std::size_t k1 = t.x1.cols();
  const std::size_t k2 = t.x2.cols();
  const bool consistent = t.x1.rows() == t.x2.rows() && t.n1.same_shape(t.x1) && t.n2.same_shape(t.x2) &&
                          t.s.rows() == k1 && t.s.cols() == k2 && t.a.same_shape(t.s) &&
                          t.a_back.rows() == k2 && t.a_back.cols() == k1 && t.c.rows() == k1 &&
                          t.c.cols() == k1 && t.t_forward > 0.0 && t.t_backward > 0.0;
  if (!consistent) throw std::invalid_argument("cycas_backward: tape is not from cycas_forward");

  const Matrix dc = t.config.kind == LossKind::symmetric ? loss_symmetric_backward(t.c)
                                                          : loss_asymmetric_backward(t.c, t.config.margin);
  auto [da, da_back] = matmul_backward(t.a, t.a_back, dc);
  Matrix ds = row_softmax_backward(t.a, da, t.t_forward);
  ds += row_softmax_backward(t.a_back, da_back, t.t_backward).transposed();

  // S = N1ᵀN2
  Matrix dn1 = matmul(t.n2, ds.transposed());
  Matrix dn2 = matmul(t.n1, ds);
  Matrix dx1 = l2_normalize_backward(t.x1, dn1);
  Matrix dx2 = l2_normalize_backward(t.x2, dn2);
  if (t.swapped) return {std::move(dx2), std::move(dx1)};
  return {std::move(dx1), std::move(dx2)};
}

// ---------------------------------------------------------------------------
// Hungarian oracle

namespace {

struct LapResult {
  std::vector<int> col_of_row;  // local column index per local row
  std::vector<double> u;        // row potentials
  std::vector<double> v;        // column potentials, all <= 0, 0 on unmatched columns
  double cost = 0.0;
};

// Shortest augmenting path with potentials; rows.size() <= cols.size().
LapResult solve_min_cost(const Matrix& cost, const std::vector<std::size_t>& rows,
                         const std::vector<std::size_t>& cols) {
  const std::size_t n = rows.size();
  const std::size_t m = cols.size();
  LapResult res;
  res.col_of_row.assign(n, -1);
  res.u.assign(n, 0.0);
  res.v.assign(m, 0.0);
  if (n == 0) return res;

  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based internals; index 0 is the virtual root.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  auto a = [&](std::size_t i, std::size_t j) { return cost(rows[i - 1], cols[j - 1]); };

  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) res.col_of_row[p[j] - 1] = static_cast<int>(j - 1);
  }
  for (std::size_t i = 0; i < n; ++i) {
    res.u[i] = u[i + 1];
    res.cost += a(i + 1, static_cast<std::size_t>(res.col_of_row[i]) + 1);
  }
  for (std::size_t j = 0; j < m; ++j) res.v[j] = v[j + 1];
  return res;
}

// Lexicographically smallest optimal assignment for rows <= cols.
std::vector<int> lexmin_assignment(const Matrix& cost) {
  const std::size_t n = cost.rows();
  const std::size_t m = cost.cols();
  double scale = 1.0;
  for (double c : cost.data()) scale = std::max(scale, std::abs(c));
  const double tol = 1e-9 * scale;

  std::vector<std::size_t> rows(n), cols(m);
  std::iota(rows.begin(), rows.end(), 0);
  std::iota(cols.begin(), cols.end(), 0);
  LapResult sol = solve_min_cost(cost, rows, cols);

  std::vector<int> result(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    // sol covers rows i..n-1 (local row 0 is i) over the free columns `cols`.
    const std::size_t current_local = static_cast<std::size_t>(sol.col_of_row[0]);
    const std::size_t current = cols[current_local];
    std::size_t chosen_local = current_local;
    std::vector<std::size_t> rest_rows(rows.begin() + 1, rows.end());
    std::optional<LapResult> replacement;

    for (std::size_t jl = 0; jl < cols.size() && cols[jl] < current; ++jl) {
      const double reduced = cost(i, cols[jl]) - sol.u[0] - sol.v[jl];
      if (reduced > tol) continue;
      std::vector<std::size_t> rest_cols = cols;
      rest_cols.erase(rest_cols.begin() + static_cast<std::ptrdiff_t>(jl));
      LapResult sub = solve_min_cost(cost, rest_rows, rest_cols);
      if (cost(i, cols[jl]) + sub.cost <= sol.cost + tol) {
        chosen_local = jl;
        replacement = std::move(sub);
        break;
      }
    }

    result[i] = static_cast<int>(cols[chosen_local]);
    if (replacement) {
      sol = std::move(*replacement);
    } else {
      // Dropping an optimally matched row keeps the remaining potentials feasible.
      LapResult rest;
      rest.cost = sol.cost - cost(i, current);
      rest.u.assign(sol.u.begin() + 1, sol.u.end());
      for (std::size_t jl = 0; jl < cols.size(); ++jl) {
        if (jl != current_local) rest.v.push_back(sol.v[jl]);
      }
      for (std::size_t r = 1; r < sol.col_of_row.size(); ++r) {
        const int c = sol.col_of_row[r];
        rest.col_of_row.push_back(c > static_cast<int>(current_local) ? c - 1 : c);
      }
      sol = std::move(rest);
    }
    cols.erase(cols.begin() + static_cast<std::ptrdiff_t>(chosen_local));
    rows = std::move(rest_rows);
  }
  return result;
}

}  // namespace

AssignmentMatrix Matching::assignment() const {
  Matrix a(col_of_row.size(), cols);
  for (std::size_t r = 0; r < col_of_row.size(); ++r) {
    if (col_of_row[r] >= 0) a(r, static_cast<std::size_t>(col_of_row[r])) = 1.0;
  }
  return AssignmentMatrix(std::move(a), AssignmentKind::hard);
}

Matching hungarian(const AffinityMatrix& s) {
  const Matrix& sim = s.matrix();
  Matching out;
  out.cols = sim.cols();
  const bool transpose = sim.rows() > sim.cols();
  const Matrix work = transpose ? sim.transposed() : sim;

  double mx = -std::numeric_limits<double>::infinity();
  for (double v : work.data()) mx = std::max(mx, v);
  Matrix cost(work.rows(), work.cols());
  for (std::size_t i = 0; i < work.size(); ++i) cost.data()[i] = mx - work.data()[i];

  const std::vector<int> assigned = lexmin_assignment(cost);
  if (!transpose) {
    out.col_of_row = assigned;
  } else {
    out.col_of_row.assign(sim.rows(), -1);
    for (std::size_t c = 0; c < assigned.size(); ++c) {
      out.col_of_row[static_cast<std::size_t>(assigned[c])] = static_cast<int>(c);
    }
  }
  for (std::size_t r = 0; r < out.col_of_row.size(); ++r) {
    if (out.col_of_row[r] >= 0) out.total += sim(r, static_cast<std::size_t>(out.col_of_row[r]));
  }
  return out;
}

double hard_cycle_consistency(const AffinityMatrix& s_in) {
  if (s_in.rows() > s_in.cols()) return hard_cycle_consistency(s_in.transposed());
  const AffinityMatrix& s = s_in;
  const Matching fwd = hungarian(s);
  const Matching bwd = hungarian(s.transposed());
  std::size_t back_home = 0;
  for (std::size_t i = 0; i < fwd.col_of_row.size(); ++i) {
    const int j = fwd.col_of_row[i];
    if (j >= 0 && bwd.col_of_row[static_cast<std::size_t>(j)] == static_cast<int>(i)) ++back_home;
  }
  return static_cast<double>(back_home) / static_cast<double>(s.rows());
}

}  // namespace cycas
