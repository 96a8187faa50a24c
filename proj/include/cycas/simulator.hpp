#pragma once

// Synthetic identity world. Each identity is a unit prototype in a latent
// appearance space; a camera sees it through a sensor mixing R and a
// camera-specific distortion that only touches the last `nuisance_rank`
// latent coordinates:
//
//   obs = R · [ p_sig ; Q_c · diag(g_c) · p_nui + b_c ] + noise
//
// so an embedder that discards the nuisance coordinates is camera-invariant,
// while raw observations of one person from two cameras are barely related.

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cycas/matrix.hpp"

namespace cycas {

using Rng = std::mt19937_64;

/// Independent stream seed derived from (master, stream) with splitmix64.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept;

class InfeasibleWorld : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Camera {
  Matrix transform{1, 1};  // obs_dim × obs_dim
  std::vector<double> bias;
  double noise_scale = 1.0;
};

struct WorldOptions {
  std::size_t nuisance_rank = 4;
  double nuisance_gain = 7.5;
  double bias_scale = 7.0;
  double max_prototype_cosine = 0.8;
  double max_condition = 10.0;
  std::size_t max_attempts = 10000;
};

struct IdentityWorld {
  std::size_t identities = 0;
  std::size_t obs_dim = 0;
  std::size_t nuisance_rank = 0;
  Matrix prototypes{1, 1};  // latent, obs_dim × identities, unit columns
  Matrix sensor{1, 1};      // R, orthogonal
  std::vector<Camera> cameras;
  double sigma_intra = 0.0;
  std::uint64_t seed = 0;
  WorldOptions options;

  std::size_t camera_count() const noexcept { return cameras.size(); }
};

IdentityWorld make_world(std::size_t identities, std::size_t obs_dim, std::size_t n_cameras, double sigma_intra,
                         std::uint64_t seed, const WorldOptions& options = {});

/// Largest over smallest singular value.
double condition_number(const Matrix& m);

/// Smallest angle between prototypes, reported as the largest pairwise cosine.
double max_prototype_cosine(const IdentityWorld& world);

struct Instance {
  std::vector<double> observation;
  std::size_t identity = 0;
  std::size_t camera = 0;
  std::size_t frame = 0;

  friend bool operator==(const Instance&, const Instance&) = default;
};

/// Noise-free camera view of an identity.
std::vector<double> camera_view(const IdentityWorld& world, std::size_t identity, std::size_t camera);

/// camera_view plus Gaussian noise of std sigma_intra · camera noise scale · noise_multiplier.
Instance observe(const IdentityWorld& world, std::size_t identity, std::size_t camera, Rng& rng,
                 double noise_multiplier = 1.0, std::size_t frame = 0);

/// Observations as columns, obs_dim × K.
Matrix observation_matrix(std::span<const Instance> instances);

enum class PairKind { intra, inter };

const char* to_string(PairKind kind) noexcept;

struct FramePair {
  std::vector<Instance> set1;
  std::vector<Instance> set2;
  PairKind kind = PairKind::intra;
  double tau = 0.0;

  friend bool operator==(const FramePair&, const FramePair&) = default;
};

/// #shared identities / max(|set1|, |set2|).
double measure_symmetry(std::span<const Instance> set1, std::span<const Instance> set2);

/// Number of identities kept when replacing to reach symmetry tau on K
/// instances: round-half-to-even of tau·K.
std::size_t shared_count(double tau, std::size_t k);

/// Two frames of one camera `frame_gap` apart. set2 keeps shared_count(tau)
/// of set1's identities and replaces the rest with identities absent from set1.
/// Observation noise scales linearly with frame_gap.
FramePair intra_sample(const IdentityWorld& world, std::size_t k, double tau_alpha, std::size_t frame_gap,
                       Rng& rng);

/// Time-aligned frames from two distinct cameras.
FramePair inter_sample(const IdentityWorld& world, std::size_t k, double tau_beta, Rng& rng);

struct SymmetrySchedule {
  double tau_alpha_mean = 0.9;
  double tau_beta_mean = 0.6;
  /// 0 turns the perturbation off and uses the means directly.
  double variance = 0.01;

  void validate() const;
  /// Draws from N(mean, variance), truncated to (0, 1].
  double draw(double mean, Rng& rng) const;
  double draw_alpha(Rng& rng) const { return draw(tau_alpha_mean, rng); }
  double draw_beta(Rng& rng) const { return draw(tau_beta_mean, rng); }
};

/// Versioned text snapshot; reals are written as hex floats so a round trip is exact.
void save_world(std::ostream& out, const IdentityWorld& world);
IdentityWorld load_world(std::istream& in);

}  // namespace cycas
