#include "cycas/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "text_io.hpp"

namespace cycas {

namespace {

Matrix row_sums(const Matrix& m) {
  Matrix out(m.rows(), 1);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (double v : m.row(r)) out(r, 0) += v;
  return out;
}

Matrix add_bias(Matrix m, const Matrix& bias) {
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (auto& v : m.row(r)) v += bias(r, 0);
  return m;
}

Matrix random_weight(std::size_t out, std::size_t in, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
  Matrix w(out, in);
  for (auto& v : w.data()) v = normal(rng);
  return w;
}

class Fnv1a {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= b[i];
      h_ *= 0x100000001B3ull;
    }
  }
  template <typename T>
  void value(T v) {
    bytes(&v, sizeof v);
  }
  std::uint64_t digest() const noexcept { return h_; }
  void reset(std::uint64_t h) noexcept { h_ = h; }

 private:
  std::uint64_t h_ = 0xCBF29CE484222325ull;
};

void hash_pair(Fnv1a& h, const FramePair& p) {
  h.value(static_cast<int>(p.kind));
  for (const auto* set : {&p.set1, &p.set2}) {
    h.value(set->size());
    for (const auto& inst : *set) {
      h.value(inst.identity);
      h.value(inst.camera);
      for (double x : inst.observation) h.value(x);
    }
  }
}

}  // namespace

LearnedEmbedder LearnedEmbedder::random(std::size_t input_dim, std::size_t output_dim, std::size_t hidden, Rng& rng) {
  if (input_dim == 0 || output_dim == 0) throw std::invalid_argument("embedder dimensions must be positive");
  std::vector<Matrix> p;
  if (hidden == 0) {
    p.push_back(random_weight(output_dim, input_dim, rng));
    p.emplace_back(output_dim, 1);
  } else {
    p.push_back(random_weight(hidden, input_dim, rng));
    p.emplace_back(hidden, 1);
    p.push_back(random_weight(output_dim, hidden, rng));
    p.emplace_back(output_dim, 1);
  }
  return LearnedEmbedder(std::move(p));
}

LearnedEmbedder LearnedEmbedder::identity(std::size_t dim) {
  return LearnedEmbedder({Matrix::identity(dim), Matrix(dim, 1)});
}

LearnedEmbedder LearnedEmbedder::from_parameters(std::vector<Matrix> params) {
  if (params.size() != 2 && params.size() != 4) throw ShapeError("embedder needs 2 or 4 parameter matrices");
  for (std::size_t l = 0; l < params.size(); l += 2) {
    const Matrix& w = params[l];
    const Matrix& b = params[l + 1];
    if (b.cols() != 1 || b.rows() != w.rows()) throw ShapeError("embedder bias shape mismatch");
    if (l > 0 && w.cols() != params[l - 2].rows()) throw ShapeError("embedder layer shapes do not chain");
    if (!w.all_finite() || !b.all_finite()) throw std::invalid_argument("embedder parameters must be finite");
  }
  return LearnedEmbedder(std::move(params));
}

std::size_t LearnedEmbedder::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

Matrix LearnedEmbedder::features(const Matrix& observations, Cache* cache) const {
  if (observations.rows() != input_dim()) {
    throw ShapeError("embedder expects " + std::to_string(input_dim()) + "-dimensional observations, got " +
                     std::to_string(observations.rows()));
  }
  if (cache) cache->input = observations;
  Matrix z = add_bias(matmul(params_[0], observations), params_[1]);
  if (!two_layer()) return z;
  for (auto& v : z.data()) v = std::tanh(v);
  if (cache) cache->hidden = z;
  return add_bias(matmul(params_[2], z), params_[3]);
}

std::vector<Matrix> LearnedEmbedder::backward(const Cache& cache, const Matrix& d_features) const {
  std::vector<Matrix> grads;
  if (!two_layer()) {
    grads.push_back(matmul(d_features, cache.input.transposed()));
    grads.push_back(row_sums(d_features));
    return grads;
  }
  Matrix dz = matmul(params_[2].transposed(), d_features);
  for (std::size_t i = 0; i < dz.size(); ++i) {
    const double h = cache.hidden.data()[i];
    dz.data()[i] *= 1.0 - h * h;
  }
  grads.push_back(matmul(dz, cache.input.transposed()));
  grads.push_back(row_sums(dz));
  grads.push_back(matmul(d_features, cache.hidden.transposed()));
  grads.push_back(row_sums(d_features));
  return grads;
}

EmbeddingMatrix LearnedEmbedder::embed(const Matrix& observations) const {
  return EmbeddingMatrix(l2_normalize_columns(features(observations)));
}

EmbeddingMatrix LearnedEmbedder::embed(std::span<const Instance> instances) const {
  return embed(observation_matrix(instances));
}

LearnedEmbedder ideal_embedder(const IdentityWorld& world, std::size_t output_dim) {
  const std::size_t signal = world.obs_dim - world.nuisance_rank;
  Matrix w(output_dim, world.obs_dim);
  // Latent coordinate k of an observation is row k of Rᵀ applied to it.
  for (std::size_t k = 0; k < std::min(output_dim, signal); ++k)
    for (std::size_t c = 0; c < world.obs_dim; ++c) w(k, c) = world.sensor(c, k);
  return LearnedEmbedder::from_parameters({std::move(w), Matrix(output_dim, 1)});
}

const char* to_string(OptimizerKind kind) noexcept { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer '" + s + "'");
}

Optimizer::Optimizer(OptimizerConfig cfg) : cfg_(cfg) {
  if (!(cfg_.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
}

void Optimizer::step(std::vector<Matrix>& params, const std::vector<Matrix>& grads) {
  if (params.size() != grads.size()) throw ShapeError("optimizer: parameter/gradient count mismatch");
  ++t_;
  if (cfg_.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!params[i].same_shape(grads[i])) throw ShapeError("optimizer: gradient shape mismatch");
      for (std::size_t k = 0; k < params[i].size(); ++k) params[i].data()[k] -= cfg_.learning_rate * grads[i].data()[k];
    }
    return;
  }
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.rows(), p.cols());
      v_.emplace_back(p.rows(), p.cols());
    }
  }
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].same_shape(grads[i]) || !params[i].same_shape(m_[i])) {
      throw ShapeError("optimizer: gradient shape mismatch");
    }
    auto p = params[i].data();
    auto g = grads[i].data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      p[k] -= cfg_.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
    }
  }
}

const char* to_string(Stage2Mode mode) noexcept { return mode == Stage2Mode::mixed ? "mixed" : "inter_only"; }

Stage2Mode parse_stage2_mode(const std::string& s) {
  if (s == "mixed") return Stage2Mode::mixed;
  if (s == "inter_only") return Stage2Mode::inter_only;
  throw std::invalid_argument("unknown stage-2 mode '" + s + "'");
}

void TrainConfig::validate() const {
  if (pairs_per_batch < 1) throw std::invalid_argument("pairs_per_batch must be at least 1");
  if (instances_per_frame < 1) throw std::invalid_argument("instances_per_frame must be at least 1");
  if (frame_gap < 1) throw std::invalid_argument("frame_gap must be at least 1");
  if (!(optimizer.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (stage2_mode == Stage2Mode::mixed && stage2_iters > 0 && pairs_per_batch < 2) {
    throw std::invalid_argument("a mixed stage-2 batch needs at least 2 pairs");
  }
  loss.validate();
  schedule.validate();
}

StepResult batch_gradient(const LearnedEmbedder& model, std::span<const FramePair> batch, const LossConfig& loss,
                          std::vector<Matrix>* grads) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  StepResult res;
  for (const auto& p : batch) (p.kind == PairKind::intra ? res.n_intra : res.n_inter)++;

  if (grads) {
    grads->clear();
    for (const auto& p : model.parameters()) grads->emplace_back(p.rows(), p.cols());
  }
  double cc = 0.0;
  for (const auto& pair : batch) {
    LearnedEmbedder::Cache c1, c2;
    const Matrix f1 = model.features(observation_matrix(pair.set1), &c1);
    const Matrix f2 = model.features(observation_matrix(pair.set2), &c2);
    if (!f1.all_finite() || !f2.all_finite()) throw std::domain_error("non-finite embedder output");
    const CycleForward fwd = cycas_forward(f1, f2, loss);
    const bool intra = pair.kind == PairKind::intra;
    const double weight = 1.0 / static_cast<double>(intra ? res.n_intra : res.n_inter);
    (intra ? res.loss_intra : res.loss_inter) += weight * fwd.loss;
    cc += hard_cycle_consistency(AffinityMatrix(fwd.tape.s));

    if (grads) {
      const GradientPair g = cycas_backward(fwd.tape);
      const auto g1 = model.backward(c1, g.dx1);
      const auto g2 = model.backward(c2, g.dx2);
      for (std::size_t i = 0; i < grads->size(); ++i) {
        (*grads)[i] += weight * g1[i];
        (*grads)[i] += weight * g2[i];
      }
    }
  }
  res.loss = res.loss_intra + res.loss_inter;
  res.hard_cc_rate = cc / static_cast<double>(batch.size());
  return res;
}

StepResult train_step(LearnedEmbedder& model, std::span<const FramePair> batch, const LossConfig& loss,
                      Optimizer& optimizer, std::size_t iteration) {
  std::vector<Matrix> grads;
  StepResult res;
  try {
    res = batch_gradient(model, batch, loss, &grads);
  } catch (const std::domain_error& e) {
    throw NumericalAbort(std::string(e.what()) + " at iteration " + std::to_string(iteration), iteration);
  }
  if (!std::isfinite(res.loss)) {
    throw NumericalAbort("non-finite loss at iteration " + std::to_string(iteration), iteration);
  }
  for (const auto& g : grads) {
    if (!g.all_finite()) throw NumericalAbort("non-finite gradient at iteration " + std::to_string(iteration), iteration);
  }
  optimizer.step(model.parameters(), grads);
  return res;
}

std::vector<FramePair> sample_batch(const IdentityWorld& world, const TrainConfig& cfg, int stage, Rng& rng) {
  const double tau_alpha = cfg.schedule.draw_alpha(rng);
  const double tau_beta = cfg.schedule.draw_beta(rng);
  std::size_t n_intra = cfg.pairs_per_batch;
  if (stage == 2) n_intra = cfg.stage2_mode == Stage2Mode::mixed ? cfg.pairs_per_batch / 2 : 0;
  std::vector<FramePair> batch;
  batch.reserve(cfg.pairs_per_batch);
  for (std::size_t i = 0; i < n_intra; ++i) {
    batch.push_back(intra_sample(world, cfg.instances_per_frame, tau_alpha, cfg.frame_gap, rng));
  }
  for (std::size_t i = n_intra; i < cfg.pairs_per_batch; ++i) {
    batch.push_back(inter_sample(world, cfg.instances_per_frame, tau_beta, rng));
  }
  return batch;
}

TrainResult train_two_stage(const IdentityWorld& world, LearnedEmbedder model, const TrainConfig& cfg) {
  cfg.validate();
  if (model.input_dim() != world.obs_dim) throw ShapeError("model input dimension does not match the world");

  Rng data_rng(derive_seed(cfg.seed, 0xDA7A));
  Optimizer optimizer(cfg.optimizer);
  TrainLog log;
  Fnv1a digest;
  const auto start = std::chrono::steady_clock::now();

  std::size_t iteration = 0;
  for (int stage : {1, 2}) {
    const std::size_t iters = stage == 1 ? cfg.stage1_iters : cfg.stage2_iters;
    for (std::size_t i = 0; i < iters; ++i, ++iteration) {
      const std::vector<FramePair> batch = sample_batch(world, cfg, stage, data_rng);
      for (const auto& p : batch) hash_pair(digest, p);
      TrainRecord rec;
      rec.iteration = iteration;
      rec.stage = stage;
      rec.step = train_step(model, batch, cfg.loss, optimizer, iteration);
      if (cfg.record_wall_time) {
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      }
      log.records.push_back(rec);
    }
  }
  log.data_digest = digest.digest();
  return {std::move(model), std::move(log)};
}

void TrainLog::write_csv(std::ostream& out) const {
  out << "iter,stage,loss_intra,loss_inter,hard_cc_rate,seconds\n";
  std::ostringstream line;
  line << std::setprecision(17);
  for (const auto& r : records) {
    line.str("");
    line << r.iteration << ',' << r.stage << ',';
    if (r.step.n_intra) line << r.step.loss_intra;
    line << ',';
    if (r.step.n_inter) line << r.step.loss_inter;
    line << ',' << r.step.hard_cc_rate << ',' << r.seconds << '\n';
    out << line.str();
  }
}

namespace {
constexpr const char* kCheckpointMagic = "cycas-checkpoint";
constexpr int kCheckpointVersion = 1;

std::uint64_t text_digest(const std::string& s) {
  Fnv1a h;
  h.bytes(s.data(), s.size());
  return h.digest();
}
}  // namespace

void save_checkpoint(std::ostream& out, const LearnedEmbedder& model) {
  std::ostringstream body;
  body << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  body << "matrices " << model.parameters().size() << '\n';
  for (const auto& p : model.parameters()) text_io::write_matrix(body, p);
  const std::string payload = body.str();
  out << payload << "checksum " << std::hex << std::setw(16) << std::setfill('0') << text_digest(payload) << std::dec
      << '\n';
}

LearnedEmbedder load_checkpoint(std::istream& in) {
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto pos = text.rfind("checksum ");
  if (pos == std::string::npos) throw CheckpointError("checkpoint has no checksum line");
  const std::string payload = text.substr(0, pos);
  std::istringstream tail(text.substr(pos + 9));
  std::string hex;
  tail >> hex;
  std::uint64_t stored = 0;
  try {
    std::size_t used = 0;
    stored = std::stoull(hex, &used, 16);
    if (used != hex.size()) throw std::invalid_argument("trailing characters");
  } catch (const std::exception&) {
    throw CheckpointError("checkpoint checksum is malformed");
  }
  if (stored != text_digest(payload)) throw CheckpointError("checkpoint checksum mismatch (file corrupted?)");

  std::istringstream body(payload);
  try {
    text_io::expect(body, kCheckpointMagic);
    if (text_io::read_count(body) != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version");
    text_io::expect(body, "matrices");
    const auto n = text_io::read_count(body);
    if (n != 2 && n != 4) throw CheckpointError("checkpoint must hold 2 or 4 matrices");
    std::vector<Matrix> params;
    for (std::size_t i = 0; i < n; ++i) params.push_back(text_io::read_matrix(body));
    return LearnedEmbedder::from_parameters(std::move(params));
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace cycas
