#include "cycas/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace cycas {

double average_precision(std::span<const double> scores, std::span<const char> relevant) {
  if (scores.size() != relevant.size()) throw std::invalid_argument("average_precision: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (!relevant[order[rank]]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
  }
  return hits ? sum / static_cast<double>(hits) : 0.0;
}

RetrievalMetrics retrieval_metrics(const EmbeddingMatrix& queries, std::span<const Instance> query_info,
                                   const EmbeddingMatrix& gallery, std::span<const Instance> gallery_info) {
  if (queries.count() != query_info.size() || gallery.count() != gallery_info.size()) {
    throw std::invalid_argument("retrieval_metrics: embeddings and instance lists disagree");
  }
  if (queries.dim() != gallery.dim()) throw ShapeError("retrieval_metrics: embedding dimensions differ");
  const Matrix sim = matmul(queries.matrix().transposed(), gallery.matrix());

  RetrievalMetrics m;
  std::vector<double> scores;
  std::vector<char> relevant;
  for (std::size_t q = 0; q < query_info.size(); ++q) {
    scores.clear();
    relevant.clear();
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < gallery_info.size(); ++g) {
      const bool same_id = gallery_info[g].identity == query_info[q].identity;
      if (same_id && gallery_info[g].camera == query_info[q].camera) continue;
      scores.push_back(sim(q, g));
      relevant.push_back(same_id ? 1 : 0);
      if (sim(q, g) > best_score) {
        best_score = sim(q, g);
        best = relevant.size() - 1;
      }
    }
    if (std::find(relevant.begin(), relevant.end(), 1) == relevant.end()) continue;
    ++m.n_queries;
    m.rank1 += relevant[best] ? 1.0 : 0.0;
    m.mAP += average_precision(scores, relevant);
  }
  if (m.n_queries) {
    m.rank1 /= static_cast<double>(m.n_queries);
    m.mAP /= static_cast<double>(m.n_queries);
  }
  return m;
}

RetrievalMetrics evaluate_retrieval(const Embedder& model, const IdentityWorld& world, std::size_t n_ids, Rng& rng) {
  if (world.camera_count() < 2) throw std::invalid_argument("evaluate_retrieval: need at least 2 cameras");
  if (n_ids < 2 || world.identities < 2) throw std::invalid_argument("evaluate_retrieval: need at least 2 identities");
  n_ids = std::min(n_ids, world.identities);

  std::vector<std::size_t> ids(world.identities);
  std::iota(ids.begin(), ids.end(), 0);
  for (std::size_t i = 0; i < n_ids; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, ids.size() - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  std::vector<char> is_query(world.identities, 0);
  std::vector<Instance> queries, gallery;
  for (std::size_t i = 0; i < n_ids; ++i) {
    is_query[ids[i]] = 1;
    queries.push_back(observe(world, ids[i], 0, rng));
  }
  for (std::size_t id = 0; id < world.identities; ++id) {
    for (std::size_t cam = is_query[id] ? 1 : 0; cam < world.camera_count(); ++cam) {
      gallery.push_back(observe(world, id, cam, rng));
    }
  }
  return retrieval_metrics(model.embed(queries), queries, model.embed(gallery), gallery);
}

TrivialReport detect_trivial_solution(const Embedder& model, const IdentityWorld& world,
                                      const TrivialAuditOptions& options) {
  Rng rng(derive_seed(world.seed, options.seed));
  const std::size_t k = options.instances ? std::min(options.instances, world.identities) : world.identities;
  TrivialReport rep;
  for (std::size_t p = 0; p < options.pairs; ++p) {
    const FramePair pair = inter_sample(world, k, 1.0, rng);
    const AffinityMatrix s = affinity(model.embed(pair.set1), model.embed(pair.set2));
    const Matching fwd = hungarian(s);
    std::size_t same = 0;
    for (std::size_t i = 0; i < fwd.col_of_row.size(); ++i) {
      const int j = fwd.col_of_row[i];
      if (j >= 0 && pair.set2[static_cast<std::size_t>(j)].identity == pair.set1[i].identity) ++same;
    }
    rep.consistency += hard_cycle_consistency(s);
    rep.identity_match += static_cast<double>(same) / static_cast<double>(k);
  }
  const double n = static_cast<double>(std::max<std::size_t>(options.pairs, 1));
  rep.consistency /= n;
  rep.identity_match /= n;
  rep.flagged = rep.consistency > 0.9 && rep.identity_match < 0.5;
  return rep;
}

EmbeddingMatrix LabelEmbedder::embed(std::span<const Instance> instances) const {
  Matrix m(identities_, instances.size());
  for (std::size_t k = 0; k < instances.size(); ++k) {
    m((instances[k].identity + shift_ * instances[k].camera) % identities_, k) = 1.0;
  }
  return EmbeddingMatrix(std::move(m));
}

LearnedEmbedder initial_model(const IdentityWorld& world, const ModelConfig& model, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x30DE1));
  return LearnedEmbedder::random(world.obs_dim, model.embed_dim, model.hidden, rng);
}

RetrievalMetrics evaluate_for_seed(const Embedder& model, const IdentityWorld& world, std::size_t n_ids,
                                   std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xE7A1));
  return evaluate_retrieval(model, world, n_ids, rng);
}

RunOutcome run_experiment(const IdentityWorld& world, const ExperimentSettings& settings, std::uint64_t seed) {
  TrainConfig cfg = settings.train;
  cfg.seed = seed;
  LearnedEmbedder model = initial_model(world, settings.model, seed);
  RunOutcome out{.seed = seed,
                 .metrics = {},
                 .untrained = evaluate_for_seed(model, world, settings.eval_queries, seed),
                 .trivial = {},
                 .result = train_two_stage(world, std::move(model), cfg)};
  out.metrics = evaluate_for_seed(out.result.model, world, settings.eval_queries, seed);
  out.trivial = detect_trivial_solution(out.result.model, world);
  return out;
}

const char* to_string(SweepAxis axis) noexcept { return axis == SweepAxis::alpha ? "alpha" : "beta"; }

SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "alpha") return SweepAxis::alpha;
  if (s == "beta") return SweepAxis::beta;
  throw std::invalid_argument("unknown sweep axis '" + s + "'");
}

std::vector<SweepResult::Summary> SweepResult::summarize() const {
  std::vector<Summary> out;
  std::vector<std::vector<const SweepPoint*>> groups;
  for (const auto& p : grid) {
    auto it = std::find_if(out.begin(), out.end(), [&](const Summary& s) { return s.tau_mean == p.tau_mean; });
    if (it == out.end()) {
      out.push_back({p.tau_mean, 0.0, 0.0, 0.0, 0});
      groups.emplace_back();
      it = out.end() - 1;
    }
    groups[static_cast<std::size_t>(it - out.begin())].push_back(&p);
  }
  for (std::size_t g = 0; g < out.size(); ++g) {
    const auto& pts = groups[g];
    const double n = static_cast<double>(pts.size());
    double mean = 0.0, map = 0.0;
    for (const auto* p : pts) {
      mean += p->metrics.rank1;
      map += p->metrics.mAP;
    }
    mean /= n;
    map /= n;
    double var = 0.0;
    for (const auto* p : pts) var += (p->metrics.rank1 - mean) * (p->metrics.rank1 - mean);
    out[g].mean_rank1 = mean;
    out[g].mean_map = map;
    out[g].n = pts.size();
    out[g].se_rank1 = pts.size() > 1 ? std::sqrt(var / (n - 1.0) / n) : 0.0;
  }
  return out;
}

SweepPoint sweep_cell(const IdentityWorld& world, const ExperimentSettings& settings, SweepAxis axis, double tau_mean,
                      double fixed_other, std::uint64_t seed) {
  if (!(tau_mean > 0.0 && tau_mean <= 1.0)) throw std::invalid_argument("sweep grid values must lie in (0,1]");
  ExperimentSettings s = settings;
  s.train.seed = seed;
  if (axis == SweepAxis::alpha) {
    s.train.schedule.tau_alpha_mean = tau_mean;
    s.train.schedule.tau_beta_mean = fixed_other;
  } else {
    s.train.schedule.tau_beta_mean = tau_mean;
    s.train.schedule.tau_alpha_mean = fixed_other;
  }
  const LearnedEmbedder model = initial_model(world, s.model, seed);
  const TrainResult trained = train_two_stage(world, model, s.train);
  return {tau_mean, seed, evaluate_for_seed(trained.model, world, s.eval_queries, seed)};
}

SweepResult sweep_symmetry(const IdentityWorld& world, const ExperimentSettings& settings, SweepAxis axis,
                           std::span<const double> grid, double fixed_other, std::size_t n_seeds) {
  if (grid.empty()) throw std::invalid_argument("sweep grid is empty");
  SweepResult res;
  res.axis = axis;
  for (double tau : grid) {
    for (std::size_t s = 0; s < n_seeds; ++s) {
      res.grid.push_back(sweep_cell(world, settings, axis, tau, fixed_other, settings.train.seed + s));
    }
  }
  return res;
}

TrendCheck endpoint_gap_check(std::span<const SweepResult::Summary> summary, double tolerance) {
  if (summary.empty()) throw std::invalid_argument("endpoint_gap_check: empty sweep");
  const double gap = std::abs(summary.front().mean_rank1 - summary.back().mean_rank1);
  return {gap, gap <= tolerance};
}

TrendCheck monotone_check(std::span<const SweepResult::Summary> summary) {
  if (summary.empty()) throw std::invalid_argument("monotone_check: empty sweep");
  std::size_t inversions = 0;
  bool within_noise = true;
  for (std::size_t i = 1; i < summary.size(); ++i) {
    const double drop = summary[i - 1].mean_rank1 - summary[i].mean_rank1;
    if (drop <= 0.0) continue;
    ++inversions;
    within_noise = within_noise && drop <= std::max(summary[i - 1].se_rank1, summary[i].se_rank1);
  }
  return {static_cast<double>(inversions), inversions <= 1 && within_noise};
}

std::vector<LossComparisonRow> compare_losses(const IdentityWorld& world, const ExperimentSettings& settings,
                                              DataSymmetry data, std::uint64_t seed) {
  std::vector<LossComparisonRow> rows;
  for (LossKind kind : {LossKind::symmetric, LossKind::asymmetric}) {
    ExperimentSettings s = settings;
    s.train.seed = seed;
    s.train.loss.kind = kind;
    s.train.schedule.variance = 0.0;
    s.train.schedule.tau_alpha_mean = data == DataSymmetry::symmetric ? 1.0 : 0.9;
    s.train.schedule.tau_beta_mean = data == DataSymmetry::symmetric ? 1.0 : 0.6;
    const TrainResult trained = train_two_stage(world, initial_model(world, s.model, seed), s.train);
    rows.push_back({kind, evaluate_for_seed(trained.model, world, s.eval_queries, seed),
                    detect_trivial_solution(trained.model, world), trained.log.data_digest});
  }
  return rows;
}

}  // namespace cycas
