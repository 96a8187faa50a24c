#include "cycas/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>

#include "cycas/association.hpp"
#include "cycas/simulator.hpp"
#include "cycas/trainer.hpp"

namespace cycas {

namespace {

Matrix gaussian(std::size_t r, std::size_t c, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(r, c);
  for (auto& v : m.data()) v = normal(rng);
  return m;
}

std::size_t uniform(std::size_t lo, std::size_t hi, Rng& rng) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

double weighted_sum(const Matrix& w, const Matrix& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w.data()[i] * y.data()[i];
  return s;
}

class Checker {
 public:
  Checker(const GradcheckOptions& opt, std::string op) : opt_(opt) { entry_.op = std::move(op); }

  void check(const std::function<double(const Matrix&)>& f, const Matrix& x, Matrix analytic) {
    if (entry_.op == opt_.inject_sign_flip) analytic *= -1.0;
    entry_.max_rel_error = std::max(entry_.max_rel_error, finite_difference_check(f, x, analytic, opt_.step));
  }
  void count() { ++entry_.instances; }
  std::size_t instances() const noexcept { return entry_.instances; }
  void reject() { ++entry_.rejected; }

  GradcheckEntry finish() {
    entry_.passed = entry_.max_rel_error < opt_.tolerance;
    return entry_;
  }

 private:
  const GradcheckOptions& opt_;
  GradcheckEntry entry_;
};

GradcheckEntry check_normalize(const GradcheckOptions& opt, Rng& rng) {
  Checker ck(opt, "l2_normalize");
  for (std::size_t n = 0; n < opt.instances; ++n) {
    const Matrix x = gaussian(uniform(2, 16, rng), uniform(2, 8, rng), rng);
    const Matrix w = gaussian(x.rows(), x.cols(), rng);
    ck.check([&](const Matrix& p) { return weighted_sum(w, l2_normalize_columns(p)); }, x,
             l2_normalize_backward(x, w));
    ck.count();
  }
  return ck.finish();
}

GradcheckEntry check_matmul(const GradcheckOptions& opt, Rng& rng) {
  Checker ck(opt, "matmul");
  for (std::size_t n = 0; n < opt.instances; ++n) {
    const std::size_t r = uniform(2, 8, rng), k = uniform(2, 8, rng), c = uniform(2, 8, rng);
    const Matrix a = gaussian(r, k, rng), b = gaussian(k, c, rng), w = gaussian(r, c, rng);
    const auto [da, db] = matmul_backward(a, b, w);
    ck.check([&](const Matrix& p) { return weighted_sum(w, matmul(p, b)); }, a, da);
    ck.check([&](const Matrix& p) { return weighted_sum(w, matmul(a, p)); }, b, db);
    ck.count();
  }
  return ck.finish();
}

GradcheckEntry check_softmax(const GradcheckOptions& opt, Rng& rng) {
  Checker ck(opt, "row_softmax");
  std::uniform_real_distribution<double> temp(0.5, 25.0);
  for (std::size_t n = 0; n < opt.instances; ++n) {
    const Matrix m = gaussian(uniform(2, 8, rng), uniform(2, 8, rng), rng) * 0.2;
    const Matrix w = gaussian(m.rows(), m.cols(), rng);
    const double t = temp(rng);
    ck.check([&](const Matrix& p) { return weighted_sum(w, row_softmax(p, t)); }, m,
             row_softmax_backward(row_softmax(m, t), w, t));
    ck.count();
  }
  return ck.finish();
}

GradcheckEntry check_loss(const GradcheckOptions& opt, LossKind kind, Rng& rng) {
  Checker ck(opt, kind == LossKind::symmetric ? "loss_symmetric" : "loss_asymmetric");
  LossConfig cfg;
  cfg.kind = kind;
  while (ck.instances() < opt.instances) {
    const std::size_t d = uniform(2, 16, rng);
    const Matrix x1 = gaussian(d, uniform(2, 8, rng), rng);
    const Matrix x2 = gaussian(d, uniform(2, 8, rng), rng);
    const CycleForward fwd = cycas_forward(x1, x2, cfg);
    if (kind == LossKind::asymmetric && near_margin_tie(fwd.tape.c, cfg.margin)) {
      ck.reject();
      continue;
    }
    const GradientPair g = cycas_backward(fwd.tape);
    ck.check([&](const Matrix& p) { return cycas_forward(p, x2, cfg).loss; }, x1, g.dx1);
    ck.check([&](const Matrix& p) { return cycas_forward(x1, p, cfg).loss; }, x2, g.dx2);
    ck.count();
  }
  return ck.finish();
}

Instance random_instance(std::size_t dim, std::size_t id, Rng& rng) {
  Instance inst;
  const Matrix v = gaussian(dim, 1, rng);
  inst.observation.assign(v.data().begin(), v.data().end());
  inst.identity = id;
  return inst;
}

GradcheckEntry check_embedder(const GradcheckOptions& opt, bool two_layer, Rng& rng) {
  Checker ck(opt, two_layer ? "embedder_two_layer" : "embedder_single");
  while (ck.instances() < opt.instances) {
    const std::size_t obs = uniform(2, 8, rng), out = uniform(2, 8, rng);
    LearnedEmbedder model = LearnedEmbedder::random(obs, out, two_layer ? uniform(2, 6, rng) : 0, rng);
    LossConfig cfg;
    cfg.kind = uniform(0, 1, rng) ? LossKind::symmetric : LossKind::asymmetric;

    std::vector<FramePair> batch(uniform(1, 3, rng));
    bool tie = false;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      auto& p = batch[b];
      p.kind = b % 2 ? PairKind::inter : PairKind::intra;
      const std::size_t k1 = uniform(2, 5, rng), k2 = uniform(2, 5, rng);
      for (std::size_t i = 0; i < k1; ++i) p.set1.push_back(random_instance(obs, i, rng));
      for (std::size_t i = 0; i < k2; ++i) p.set2.push_back(random_instance(obs, i, rng));
      const CycleForward fwd = cycas_forward(model.features(observation_matrix(p.set1)),
                                             model.features(observation_matrix(p.set2)), cfg);
      tie = tie || (cfg.kind == LossKind::asymmetric && near_margin_tie(fwd.tape.c, cfg.margin));
    }
    if (tie) {
      ck.reject();
      continue;
    }

    std::vector<Matrix> grads;
    batch_gradient(model, batch, cfg, &grads);
    for (std::size_t i = 0; i < grads.size(); ++i) {
      auto f = [&](const Matrix& p) {
        LearnedEmbedder probe = model;
        probe.parameters()[i] = p;
        return batch_gradient(probe, batch, cfg, nullptr).loss;
      };
      ck.check(f, model.parameters()[i], grads[i]);
    }
    ck.count();
  }
  return ck.finish();
}

}  // namespace

bool GradcheckReport::passed() const {
  return !entries.empty() && std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

std::vector<std::string> gradient_suite_ops() {
  return {"l2_normalize",    "matmul",          "row_softmax",       "loss_symmetric",
          "loss_asymmetric", "embedder_single", "embedder_two_layer"};
}

GradcheckReport run_gradient_suite(const GradcheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(options.seed);
  GradcheckReport rep;
  rep.entries.push_back(check_normalize(options, rng));
  rep.entries.push_back(check_matmul(options, rng));
  rep.entries.push_back(check_softmax(options, rng));
  rep.entries.push_back(check_loss(options, LossKind::symmetric, rng));
  rep.entries.push_back(check_loss(options, LossKind::asymmetric, rng));
  rep.entries.push_back(check_embedder(options, false, rng));
  rep.entries.push_back(check_embedder(options, true, rng));
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

bool near_margin_tie(const Matrix& c, double margin, double gap) {
  const std::size_t k = c.rows();
  if (k < 2) return false;
  auto ambiguous = [&](auto&& at) {
    double first = -1.0, second = -1.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double v = at(j);
      if (v > first) {
        second = first;
        first = v;
      } else if (v > second) {
        second = v;
      }
    }
    return second >= 0.0 && first - second < gap;
  };
  for (std::size_t i = 0; i < k; ++i) {
    const double row_hinge = [&] {
      double m = -1.0;
      for (std::size_t j = 0; j < k; ++j) if (j != i) m = std::max(m, c(i, j));
      return m;
    }() - c(i, i) + margin;
    const double col_hinge = [&] {
      double m = -1.0;
      for (std::size_t j = 0; j < k; ++j) if (j != i) m = std::max(m, c(j, i));
      return m;
    }() - c(i, i) + margin;
    if (std::abs(row_hinge) < gap || std::abs(col_hinge) < gap) return true;
    // Competitor ties only matter when the hinge is active.
    if (row_hinge > 0.0 && ambiguous([&](std::size_t j) { return j == i ? -1.0 : c(i, j); })) return true;
    if (col_hinge > 0.0 && ambiguous([&](std::size_t j) { return j == i ? -1.0 : c(j, i); })) return true;
  }
  return false;
}

}  // namespace cycas
