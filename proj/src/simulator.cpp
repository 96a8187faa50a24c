#include "cycas/simulator.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <unordered_set>

#include "text_io.hpp"

namespace cycas {

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace {

std::vector<double> gaussian_vector(std::size_t n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = normal(rng);
  return v;
}

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

// Haar-ish random orthogonal matrix by Gram-Schmidt on Gaussian rows.
Matrix random_orthogonal(std::size_t n, Rng& rng) {
  Matrix q(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    for (;;) {
      std::vector<double> v = gaussian_vector(n, rng);
      for (std::size_t k = 0; k < r; ++k) {
        const double proj = dot(v, q.row(k));
        for (std::size_t c = 0; c < n; ++c) v[c] -= proj * q(k, c);
      }
      const double norm = std::sqrt(dot(v, v));
      if (norm < 1e-6) continue;
      for (std::size_t c = 0; c < n; ++c) q(r, c) = v[c] / norm;
      break;
    }
  }
  return q;
}

Matrix sample_prototypes(std::size_t n, std::size_t dim, const WorldOptions& opt, Rng& rng) {
  Matrix protos(dim, n);
  std::size_t attempts = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (;;) {
      if (++attempts > opt.max_attempts) {
        throw InfeasibleWorld("cannot place " + std::to_string(n) + " prototypes in " + std::to_string(dim) +
                              " dimensions with pairwise cosine <= " + std::to_string(opt.max_prototype_cosine));
      }
      std::vector<double> v = gaussian_vector(dim, rng);
      const double norm = std::sqrt(dot(v, v));
      if (norm < 1e-9) continue;
      for (auto& x : v) x /= norm;
      bool ok = true;
      for (std::size_t j = 0; j < i && ok; ++j) {
        double c = 0.0;
        for (std::size_t d = 0; d < dim; ++d) c += v[d] * protos(d, j);
        ok = c <= opt.max_prototype_cosine;
      }
      if (!ok) continue;
      for (std::size_t d = 0; d < dim; ++d) protos(d, i) = v[d];
      break;
    }
  }
  return protos;
}

Camera sample_camera(const Matrix& sensor, std::size_t rank, const WorldOptions& opt, Rng& rng) {
  const std::size_t dim = sensor.rows();
  const std::size_t sig = dim - rank;
  std::uniform_real_distribution<double> gain_jitter(0.75, 1.25);
  std::uniform_real_distribution<double> noise_jitter(0.8, 1.2);
  std::size_t attempts = 0;
  for (;;) {
    if (++attempts > opt.max_attempts) {
      throw InfeasibleWorld("cannot draw a camera transform with condition number <= " +
                            std::to_string(opt.max_condition));
    }
    Matrix latent = Matrix::identity(dim);
    if (rank > 0) {
      const Matrix q = random_orthogonal(rank, rng);
      std::vector<double> gains(rank);
      for (auto& g : gains) g = opt.nuisance_gain * gain_jitter(rng);
      for (std::size_t r = 0; r < rank; ++r)
        for (std::size_t c = 0; c < rank; ++c) latent(sig + r, sig + c) = q(r, c) * gains[c];
    }
    Camera cam;
    cam.transform = matmul(sensor, latent);
    Matrix latent_bias(dim, 1);
    const std::vector<double> b = gaussian_vector(rank, rng);
    for (std::size_t r = 0; r < rank; ++r) latent_bias(sig + r, 0) = opt.bias_scale * b[r];
    const Matrix bias = matmul(sensor, latent_bias);
    cam.bias.assign(bias.data().begin(), bias.data().end());
    cam.noise_scale = noise_jitter(rng);
    if (condition_number(cam.transform) <= opt.max_condition) return cam;
  }
}

std::vector<std::size_t> sample_distinct(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(k);
  return ids;
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(v[i - 1], v[pick(rng)]);
  }
}

FramePair sample_pair(const IdentityWorld& world, std::size_t k, double tau, std::size_t cam1, std::size_t cam2,
                      double noise_multiplier, std::size_t frame2, PairKind kind, Rng& rng) {
  if (k < 1 || k > world.identities) throw std::invalid_argument("pair size must lie in [1, identities]");
  const std::size_t shared = shared_count(tau, k);
  if (world.identities - k < k - shared) {
    throw std::invalid_argument("not enough identities outside the first frame to replace " +
                                std::to_string(k - shared) + " instances");
  }

  std::vector<std::size_t> first = sample_distinct(world.identities, k, rng);
  std::vector<std::size_t> kept = first;
  shuffle(kept, rng);
  kept.resize(shared);

  std::unordered_set<std::size_t> in_first(first.begin(), first.end());
  std::vector<std::size_t> outside;
  for (std::size_t id = 0; id < world.identities; ++id)
    if (!in_first.contains(id)) outside.push_back(id);
  shuffle(outside, rng);

  std::vector<std::size_t> second = kept;
  second.insert(second.end(), outside.begin(), outside.begin() + static_cast<std::ptrdiff_t>(k - shared));
  shuffle(second, rng);

  FramePair pair;
  pair.kind = kind;
  for (std::size_t id : first) pair.set1.push_back(observe(world, id, cam1, rng, noise_multiplier, 0));
  for (std::size_t id : second) pair.set2.push_back(observe(world, id, cam2, rng, noise_multiplier, frame2));
  pair.tau = measure_symmetry(pair.set1, pair.set2);
  return pair;
}

}  // namespace

double condition_number(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) e(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = m(r, c);
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(e);
  const auto& s = svd.singularValues();
  const double smallest = s(s.size() - 1);
  if (smallest <= 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / smallest;
}

IdentityWorld make_world(std::size_t identities, std::size_t obs_dim, std::size_t n_cameras, double sigma_intra,
                         std::uint64_t seed, const WorldOptions& options) {
  if (identities < 2) throw std::invalid_argument("make_world: need at least 2 identities");
  if (obs_dim < 2) throw std::invalid_argument("make_world: observation dimension must be at least 2");
  if (n_cameras < 2) throw std::invalid_argument("make_world: need at least 2 cameras");
  if (!(sigma_intra >= 0.0)) throw std::invalid_argument("make_world: sigma_intra must be nonnegative");
  if (!(options.max_condition >= 1.0)) throw std::invalid_argument("make_world: max_condition must be >= 1");

  Rng rng(seed);
  IdentityWorld w;
  w.identities = identities;
  w.obs_dim = obs_dim;
  w.nuisance_rank = std::min(options.nuisance_rank, obs_dim / 2);
  w.sigma_intra = sigma_intra;
  w.seed = seed;
  w.options = options;
  w.prototypes = sample_prototypes(identities, obs_dim, options, rng);
  w.sensor = random_orthogonal(obs_dim, rng);
  for (std::size_t c = 0; c < n_cameras; ++c) w.cameras.push_back(sample_camera(w.sensor, w.nuisance_rank, options, rng));
  return w;
}

double max_prototype_cosine(const IdentityWorld& world) {
  const Matrix gram = matmul(world.prototypes.transposed(), world.prototypes);
  double worst = -1.0;
  for (std::size_t i = 0; i < gram.rows(); ++i)
    for (std::size_t j = i + 1; j < gram.cols(); ++j) worst = std::max(worst, gram(i, j));
  return worst;
}

std::vector<double> camera_view(const IdentityWorld& world, std::size_t identity, std::size_t camera) {
  if (identity >= world.identities) throw std::out_of_range("identity index out of range");
  if (camera >= world.cameras.size()) throw std::out_of_range("camera index out of range");
  const Camera& cam = world.cameras[camera];
  std::vector<double> obs = cam.bias;
  for (std::size_t r = 0; r < world.obs_dim; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < world.obs_dim; ++c) s += cam.transform(r, c) * world.prototypes(c, identity);
    obs[r] += s;
  }
  return obs;
}

Instance observe(const IdentityWorld& world, std::size_t identity, std::size_t camera, Rng& rng,
                 double noise_multiplier, std::size_t frame) {
  Instance inst;
  inst.observation = camera_view(world, identity, camera);
  inst.identity = identity;
  inst.camera = camera;
  inst.frame = frame;
  const double sigma = world.sigma_intra * world.cameras[camera].noise_scale * noise_multiplier;
  if (sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, sigma);
    for (auto& x : inst.observation) x += noise(rng);
  }
  return inst;
}

Matrix observation_matrix(std::span<const Instance> instances) {
  if (instances.empty()) throw std::invalid_argument("observation_matrix: no instances");
  const std::size_t dim = instances.front().observation.size();
  Matrix m(dim, instances.size());
  for (std::size_t k = 0; k < instances.size(); ++k) {
    if (instances[k].observation.size() != dim) throw ShapeError("observation_matrix: ragged observations");
    for (std::size_t d = 0; d < dim; ++d) m(d, k) = instances[k].observation[d];
  }
  return m;
}

const char* to_string(PairKind kind) noexcept { return kind == PairKind::intra ? "intra" : "inter"; }

double measure_symmetry(std::span<const Instance> set1, std::span<const Instance> set2) {
  if (set1.empty() || set2.empty()) throw std::invalid_argument("measure_symmetry: empty instance set");
  std::unordered_set<std::size_t> ids1, shared;
  for (const auto& inst : set1) ids1.insert(inst.identity);
  for (const auto& inst : set2)
    if (ids1.contains(inst.identity)) shared.insert(inst.identity);
  return static_cast<double>(shared.size()) / static_cast<double>(std::max(set1.size(), set2.size()));
}

std::size_t shared_count(double tau, std::size_t k) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("symmetry must lie in [0,1]");
  // nearbyint under the default rounding mode rounds half to even.
  const double r = std::nearbyint(tau * static_cast<double>(k));
  return std::min(k, static_cast<std::size_t>(r));
}

FramePair intra_sample(const IdentityWorld& world, std::size_t k, double tau_alpha, std::size_t frame_gap,
                       Rng& rng) {
  if (!(tau_alpha > 0.0 && tau_alpha <= 1.0)) throw std::invalid_argument("intra_sample: tau_alpha must lie in (0,1]");
  if (frame_gap < 1) throw std::invalid_argument("intra_sample: frame_gap must be at least 1");
  std::uniform_int_distribution<std::size_t> pick(0, world.cameras.size() - 1);
  const std::size_t cam = pick(rng);
  return sample_pair(world, k, tau_alpha, cam, cam, static_cast<double>(frame_gap), frame_gap, PairKind::intra, rng);
}

FramePair inter_sample(const IdentityWorld& world, std::size_t k, double tau_beta, Rng& rng) {
  if (world.cameras.size() < 2) throw std::invalid_argument("inter_sample: need at least 2 cameras");
  if (!(tau_beta >= 0.0 && tau_beta <= 1.0)) throw std::invalid_argument("inter_sample: tau_beta must lie in [0,1]");
  std::uniform_int_distribution<std::size_t> pick(0, world.cameras.size() - 1);
  const std::size_t cam1 = pick(rng);
  std::uniform_int_distribution<std::size_t> other(0, world.cameras.size() - 2);
  std::size_t cam2 = other(rng);
  if (cam2 >= cam1) ++cam2;
  return sample_pair(world, k, tau_beta, cam1, cam2, 1.0, 0, PairKind::inter, rng);
}

void SymmetrySchedule::validate() const {
  if (!(tau_alpha_mean > 0.0 && tau_alpha_mean <= 1.0)) throw std::invalid_argument("tau_alpha mean must lie in (0,1]");
  if (!(tau_beta_mean > 0.0 && tau_beta_mean <= 1.0)) throw std::invalid_argument("tau_beta mean must lie in (0,1]");
  if (!(variance >= 0.0)) throw std::invalid_argument("symmetry variance must be nonnegative");
}

double SymmetrySchedule::draw(double mean, Rng& rng) const {
  if (variance == 0.0) return mean;
  std::normal_distribution<double> normal(mean, std::sqrt(variance));
  constexpr double floor = 1e-6;
  return std::clamp(normal(rng), floor, 1.0);
}

namespace {
constexpr const char* kWorldMagic = "cycas-world";
constexpr int kWorldVersion = 1;
}  // namespace

void save_world(std::ostream& out, const IdentityWorld& w) {
  using text_io::hex_real;
  out << kWorldMagic << ' ' << kWorldVersion << '\n';
  out << "identities " << w.identities << '\n';
  out << "obs_dim " << w.obs_dim << '\n';
  out << "nuisance_rank " << w.nuisance_rank << '\n';
  out << "sigma_intra " << hex_real(w.sigma_intra) << '\n';
  out << "seed " << w.seed << '\n';
  out << "options " << w.options.nuisance_rank << ' ' << hex_real(w.options.nuisance_gain) << ' '
      << hex_real(w.options.bias_scale) << ' ' << hex_real(w.options.max_prototype_cosine) << ' '
      << hex_real(w.options.max_condition) << ' ' << w.options.max_attempts << '\n';
  out << "prototypes ";
  text_io::write_matrix(out, w.prototypes);
  out << "sensor ";
  text_io::write_matrix(out, w.sensor);
  out << "cameras " << w.cameras.size() << '\n';
  for (const auto& cam : w.cameras) {
    out << "camera " << hex_real(cam.noise_scale) << '\n';
    text_io::write_matrix(out, cam.transform);
    for (std::size_t i = 0; i < cam.bias.size(); ++i) out << (i ? " " : "") << hex_real(cam.bias[i]);
    out << '\n';
  }
  out << "end\n";
}

IdentityWorld load_world(std::istream& in) {
  using namespace text_io;
  expect(in, kWorldMagic);
  if (read_count(in) != kWorldVersion) throw FormatError("unsupported world snapshot version");
  IdentityWorld w;
  expect(in, "identities");
  w.identities = read_count(in);
  expect(in, "obs_dim");
  w.obs_dim = read_count(in);
  expect(in, "nuisance_rank");
  w.nuisance_rank = read_count(in);
  expect(in, "sigma_intra");
  w.sigma_intra = read_real(in);
  expect(in, "seed");
  w.seed = read_count(in);
  expect(in, "options");
  w.options.nuisance_rank = read_count(in);
  w.options.nuisance_gain = read_real(in);
  w.options.bias_scale = read_real(in);
  w.options.max_prototype_cosine = read_real(in);
  w.options.max_condition = read_real(in);
  w.options.max_attempts = read_count(in);
  expect(in, "prototypes");
  w.prototypes = read_matrix(in);
  expect(in, "sensor");
  w.sensor = read_matrix(in);
  expect(in, "cameras");
  const auto n_cameras = read_count(in);
  if (n_cameras > 4096) throw FormatError("implausible camera count");
  for (std::size_t c = 0; c < n_cameras; ++c) {
    expect(in, "camera");
    Camera cam;
    cam.noise_scale = read_real(in);
    cam.transform = read_matrix(in);
    cam.bias.resize(w.obs_dim);
    for (auto& b : cam.bias) b = read_real(in);
    w.cameras.push_back(std::move(cam));
  }
  expect(in, "end");
  if (w.prototypes.rows() != w.obs_dim || w.prototypes.cols() != w.identities ||
      w.sensor.rows() != w.obs_dim || w.sensor.cols() != w.obs_dim) {
    throw FormatError("world snapshot shapes are inconsistent");
  }
  for (const auto& cam : w.cameras) {
    if (cam.transform.rows() != w.obs_dim || cam.transform.cols() != w.obs_dim) {
      throw FormatError("camera transform shape is inconsistent");
    }
  }
  return w;
}

}  // namespace cycas
