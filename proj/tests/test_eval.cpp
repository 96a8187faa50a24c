#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "cycas/eval.hpp"

using namespace cycas;

namespace {

std::vector<Instance> instances(std::initializer_list<std::pair<std::size_t, std::size_t>> id_cam) {
  std::vector<Instance> out;
  for (auto [id, cam] : id_cam) out.push_back(Instance{{0.0}, id, cam, 0});
  return out;
}

SweepResult::Summary point(double tau, double mean, double se) { return {tau, mean, se, 0.0, 5}; }

ExperimentSettings quick_settings() {
  ExperimentSettings s;
  s.train.stage1_iters = 5;
  s.train.stage2_iters = 5;
  return s;
}

}  // namespace

TEST(AveragePrecision, HandComputed) {
  const std::vector<double> scores = {0.9, 0.8, 0.7, 0.6};
  EXPECT_DOUBLE_EQ(average_precision(scores, std::vector<char>{1, 0, 0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(average_precision(scores, std::vector<char>{0, 1, 0, 0}), 0.5);
  // Hits at ranks 1 and 3: (1/1 + 2/3) / 2.
  EXPECT_DOUBLE_EQ(average_precision(scores, std::vector<char>{1, 0, 1, 0}), (1.0 + 2.0 / 3.0) / 2.0);
  EXPECT_DOUBLE_EQ(average_precision(scores, std::vector<char>{0, 0, 0, 0}), 0.0);
}

TEST(AveragePrecision, RanksByScoreNotPosition) {
  const std::vector<double> scores = {0.1, 0.9, 0.5};
  EXPECT_DOUBLE_EQ(average_precision(scores, std::vector<char>{1, 0, 0}), 1.0 / 3.0);
}

TEST(AveragePrecision, TiesKeepIndexOrder) {
  const std::vector<double> scores = {0.5, 0.5};
  EXPECT_DOUBLE_EQ(average_precision(scores, std::vector<char>{0, 1}), 0.5);
  EXPECT_DOUBLE_EQ(average_precision(scores, std::vector<char>{1, 0}), 1.0);
}

TEST(AveragePrecision, SizeMismatch) {
  EXPECT_THROW(average_precision(std::vector<double>{1.0}, std::vector<char>{1, 0}), std::invalid_argument);
}

TEST(RetrievalMetrics, HandBuiltEmbeddings) {
  // Two queries from camera 0. Query 0 finds its match first; query 1 ranks
  // a distractor above its match.
  const EmbeddingMatrix q(Matrix{{1.0, 0.0}, {0.0, 1.0}});
  const EmbeddingMatrix g(Matrix{{1.0, 0.0, 0.6}, {0.0, 1.0, 0.8}});
  const auto qi = instances({{0, 0}, {1, 0}});
  const auto gi = instances({{0, 1}, {1, 1}, {2, 1}});
  RetrievalMetrics m = retrieval_metrics(q, qi, g, gi);
  EXPECT_EQ(m.rank1, 1.0);
  EXPECT_EQ(m.mAP, 1.0);
  EXPECT_EQ(m.n_queries, 2u);

  const EmbeddingMatrix g2(Matrix{{1.0, 0.0, 0.0}, {0.0, 1.0, 1.0}});
  const auto gi2 = instances({{0, 1}, {2, 1}, {1, 1}});
  // Query 1 ties between gallery 1 (distractor) and gallery 2 (match); index order puts the distractor first.
  m = retrieval_metrics(q, qi, g2, gi2);
  EXPECT_EQ(m.rank1, 0.5);
  EXPECT_DOUBLE_EQ(m.mAP, (1.0 + 0.5) / 2.0);
}

TEST(RetrievalMetrics, SameCameraSameIdentitySkipped) {
  const EmbeddingMatrix q(Matrix{{1.0}, {0.0}});
  const EmbeddingMatrix g(Matrix{{1.0, 0.6}, {0.0, 0.8}});
  // Gallery 0 is the query identity in the query's own camera: ignored.
  const RetrievalMetrics m = retrieval_metrics(q, instances({{0, 0}}), g, instances({{0, 0}, {0, 1}}));
  EXPECT_EQ(m.rank1, 1.0);
  EXPECT_EQ(m.mAP, 1.0);
}

TEST(RetrievalMetrics, ShapeErrors) {
  const EmbeddingMatrix q(Matrix{{1.0}, {0.0}});
  EXPECT_THROW(retrieval_metrics(q, instances({{0, 0}, {1, 0}}), q, instances({{0, 1}})), std::invalid_argument);
  const EmbeddingMatrix g3(Matrix{{1.0}, {0.0}, {0.0}});
  EXPECT_THROW(retrieval_metrics(q, instances({{0, 0}}), g3, instances({{0, 1}})), ShapeError);
}

TEST(EvaluateRetrieval, LabelEmbedderIsPerfect) {
  const IdentityWorld w = make_world(32, 16, 2, 0.05, 7);
  Rng rng(1);
  const RetrievalMetrics m = evaluate_retrieval(LabelEmbedder(32, 0), w, 32, rng);
  EXPECT_EQ(m.rank1, 1.0);
  EXPECT_EQ(m.mAP, 1.0);
  EXPECT_EQ(m.n_queries, 32u);
}

TEST(EvaluateRetrieval, ShiftedLabelsScoreZero) {
  const IdentityWorld w = make_world(32, 16, 2, 0.05, 7);
  Rng rng(2);
  EXPECT_EQ(evaluate_retrieval(LabelEmbedder(32, 1), w, 32, rng).rank1, 0.0);
}

TEST(EvaluateRetrieval, IdealEmbedderNoiseFree) {
  const IdentityWorld w = make_world(32, 16, 2, 0.0, 7);
  EXPECT_EQ(evaluate_for_seed(ideal_embedder(w, 16), w, 32, 1).rank1, 1.0);
}

TEST(EvaluateRetrieval, SameSeedSameResult) {
  const IdentityWorld w = make_world(32, 16, 2, 0.05, 7);
  const LearnedEmbedder m = initial_model(w, {}, 3);
  const RetrievalMetrics a = evaluate_for_seed(m, w, 32, 9), b = evaluate_for_seed(m, w, 32, 9);
  EXPECT_EQ(a.rank1, b.rank1);
  EXPECT_EQ(a.mAP, b.mAP);
}

TEST(EvaluateRetrieval, Errors) {
  const IdentityWorld w = make_world(32, 16, 2, 0.05, 7);
  Rng rng(3);
  EXPECT_THROW(evaluate_retrieval(LabelEmbedder(32, 0), w, 1, rng), std::invalid_argument);
}

TEST(TrivialAudit, CyclicShiftAdversaryIsFlagged) {
  const IdentityWorld w = make_world(32, 16, 2, 0.05, 7);
  const TrivialReport r = detect_trivial_solution(LabelEmbedder(32, 1), w);
  EXPECT_EQ(r.consistency, 1.0);
  EXPECT_EQ(r.identity_match, 0.0);
  EXPECT_TRUE(r.flagged);
}

TEST(TrivialAudit, CorrectLabelsAreNotFlagged) {
  const IdentityWorld w = make_world(32, 16, 2, 0.05, 7);
  const TrivialReport r = detect_trivial_solution(LabelEmbedder(32, 0), w);
  EXPECT_EQ(r.consistency, 1.0);
  EXPECT_EQ(r.identity_match, 1.0);
  EXPECT_FALSE(r.flagged);
}

TEST(TrivialAudit, IdealEmbedderIsNotFlagged) {
  const IdentityWorld w = make_world(32, 16, 2, 0.0, 7);
  EXPECT_FALSE(detect_trivial_solution(ideal_embedder(w, 16), w).flagged);
}

TEST(Trends, EndpointGap) {
  const std::vector<SweepResult::Summary> close = {point(0.3, 0.97, 0.01), point(1.0, 0.99, 0.01)};
  TrendCheck t = endpoint_gap_check(close);
  EXPECT_NEAR(t.value, 0.02, 1e-15);
  EXPECT_TRUE(t.passed);
  const std::vector<SweepResult::Summary> far = {point(0.3, 0.5, 0.01), point(1.0, 0.99, 0.01)};
  EXPECT_FALSE(endpoint_gap_check(far).passed);
}

TEST(Trends, MonotoneAllowsOneSmallInversion) {
  const std::vector<SweepResult::Summary> up = {point(0.2, 0.3, 0.02), point(0.6, 0.9, 0.02), point(1.0, 0.95, 0.02)};
  EXPECT_TRUE(monotone_check(up).passed);
  EXPECT_EQ(monotone_check(up).value, 0.0);

  const std::vector<SweepResult::Summary> dip = {point(0.2, 0.3, 0.02), point(0.6, 1.0, 0.0),
                                                 point(1.0, 0.9875, 0.0125)};
  EXPECT_TRUE(monotone_check(dip).passed);
  EXPECT_EQ(monotone_check(dip).value, 1.0);

  const std::vector<SweepResult::Summary> big_dip = {point(0.2, 0.3, 0.02), point(0.6, 1.0, 0.0),
                                                     point(1.0, 0.9, 0.01)};
  EXPECT_FALSE(monotone_check(big_dip).passed);

  const std::vector<SweepResult::Summary> two_dips = {point(0.2, 0.5, 0.05), point(0.4, 0.48, 0.05),
                                                      point(0.6, 0.9, 0.05), point(1.0, 0.88, 0.05)};
  EXPECT_FALSE(monotone_check(two_dips).passed);
}

TEST(Sweep, SummaryMeanAndStandardError) {
  SweepResult r;
  for (double v : {0.5, 0.7, 0.9}) r.grid.push_back({0.3, 0, {v, v / 2.0, 32}});
  r.grid.push_back({1.0, 0, {1.0, 1.0, 32}});
  const auto s = r.summarize();
  ASSERT_EQ(s.size(), 2u);
  EXPECT_NEAR(s[0].mean_rank1, 0.7, 1e-15);
  // Sample sd of {0.5, 0.7, 0.9} is 0.2; SE = 0.2 / sqrt(3).
  EXPECT_NEAR(s[0].se_rank1, 0.2 / std::sqrt(3.0), 1e-15);
  EXPECT_NEAR(s[0].mean_map, 0.35, 1e-15);
  EXPECT_EQ(s[0].n, 3u);
  EXPECT_EQ(s[1].se_rank1, 0.0);
}

TEST(Sweep, CellsMatchFullSweep) {
  const IdentityWorld w = make_world(32, 16, 2, 0.02, 7);
  const ExperimentSettings s = quick_settings();
  const std::vector<double> grid = {0.5, 1.0};
  const SweepResult full = sweep_symmetry(w, s, SweepAxis::beta, grid, 0.9, 2);
  ASSERT_EQ(full.grid.size(), 4u);
  const SweepPoint cell = sweep_cell(w, s, SweepAxis::beta, 1.0, 0.9, s.train.seed + 1);
  EXPECT_EQ(full.grid[3].metrics.rank1, cell.metrics.rank1);
  EXPECT_EQ(full.grid[3].metrics.mAP, cell.metrics.mAP);
  EXPECT_THROW(sweep_cell(w, s, SweepAxis::beta, 0.0, 0.9, 1), std::invalid_argument);
}

TEST(Experiment, RunIsDeterministic) {
  const IdentityWorld w = make_world(32, 16, 2, 0.02, 7);
  const RunOutcome a = run_experiment(w, quick_settings(), 4), b = run_experiment(w, quick_settings(), 4);
  EXPECT_EQ(a.metrics.rank1, b.metrics.rank1);
  EXPECT_EQ(a.metrics.mAP, b.metrics.mAP);
  EXPECT_EQ(a.result.model, b.result.model);
  EXPECT_EQ(a.untrained.rank1, evaluate_for_seed(initial_model(w, {}, 4), w, 32, 4).rank1);
}

TEST(Experiment, LossComparisonSharesDataStream) {
  const IdentityWorld w = make_world(32, 16, 2, 0.02, 7);
  for (DataSymmetry d : {DataSymmetry::symmetric, DataSymmetry::asymmetric}) {
    const auto rows = compare_losses(w, quick_settings(), d, 2);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_NE(rows[0].kind, rows[1].kind);
    EXPECT_EQ(rows[0].data_digest, rows[1].data_digest);
  }
}
