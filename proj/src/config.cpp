#include "cycas/config.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace cycas {

namespace {

using enum ValueType;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  errno = 0;
  const unsigned long long x = std::strtoull(v.c_str(), nullptr, 10);
  if (errno == ERANGE) throw ConfigError(key + ": integer out of range '" + v + "'");
  return x;
}

double parse_real(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(x)) {
    throw ConfigError(key + ": expected a finite number, got '" + v + "'");
  }
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_real(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list of numbers");
  return out;
}

const ConfigKey& lookup(const std::string& key) {
  const auto& schema = config_schema();
  const auto it = std::find_if(schema.begin(), schema.end(), [&](const ConfigKey& k) { return k.key == key; });
  if (it == schema.end()) throw ConfigError("unknown config key '" + key + "'");
  return *it;
}

void check_value(const ConfigKey& k, const std::string& v) {
  switch (k.type) {
    case count:
    case u64: parse_u64(k.key, v); break;
    case real: parse_real(k.key, v); break;
    case boolean: parse_bool(k.key, v); break;
    case real_list: parse_list(k.key, v); break;
    case choice:
      if (std::find(k.choices.begin(), k.choices.end(), v) == k.choices.end()) {
        throw ConfigError(k.key + ": '" + v + "' is not one of the allowed values");
      }
      break;
    case text:
      if (v.empty()) throw ConfigError(k.key + ": must not be empty");
      break;
  }
}

}  // namespace

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = {
      {"seed", "seed", u64, "1", {}, "training seed; model init, data stream and evaluation derive from it"},
      {"out", "out", text, "out", {}, "output directory"},
      {"world.identities", "identities", count, "32", {}, "number of identities N"},
      {"world.obs_dim", "obs-dim", count, "16", {}, "observation dimension"},
      {"world.cameras", "cameras", count, "2", {}, "number of cameras"},
      {"world.sigma_intra", "sigma-intra", real, "0.02", {}, "observation noise std per unit frame gap"},
      {"world.seed", "world-seed", u64, "7", {}, "seed of the world (prototypes, sensor, cameras)"},
      {"world.nuisance_rank", "nuisance-rank", count, "4", {}, "latent coordinates each camera distorts"},
      {"world.nuisance_gain", "nuisance-gain", real, "7.5", {}, "scale of the per-camera distortion"},
      {"world.bias_scale", "bias-scale", real, "7", {}, "std of the per-camera offset"},
      {"model.embed_dim", "embed-dim", count, "16", {}, "embedding dimension"},
      {"model.hidden", "hidden", count, "0", {}, "hidden width; 0 for a single affine layer"},
      {"train.pairs_per_batch", "pairs-per-batch", count, "8", {}, "frame pairs per batch"},
      {"train.instances_per_frame", "instances-per-frame", count, "8", {}, "instances per frame"},
      {"train.stage1_iters", "stage1-iters", count, "300", {}, "intra-only warm-up iterations"},
      {"train.stage2_iters", "stage2-iters", count, "1200", {}, "joint intra + inter iterations"},
      {"train.stage2_mode", "stage2-mode", choice, "mixed", {"mixed", "inter_only"}, "stage-2 batch composition"},
      {"train.frame_gap", "frame-gap", count, "1", {}, "frames between intra-sampled frames"},
      {"train.optimizer", "optimizer", choice, "adam", {"adam", "sgd"}, "optimizer"},
      {"train.learning_rate", "lr", real, "0.01", {}, "learning rate"},
      {"train.record_wall_time", "record-wall-time", boolean, "false", {}, "fill the seconds column of log.csv"},
      {"loss.kind", "loss", choice, "asymmetric", {"asymmetric", "symmetric"}, "cycle loss"},
      {"loss.margin", "margin", real, "0.5", {}, "margin of the asymmetric loss"},
      {"temperature.epsilon", "epsilon", real, "0.1", {}, "target gap of the adaptive temperature"},
      {"temperature.delta", "delta", real, "0.5", {}, "target max probability share"},
      {"schedule.tau_alpha", "tau-alpha", real, "0.9", {}, "mean symmetry of intra pairs"},
      {"schedule.tau_beta", "tau-beta", real, "0.6", {}, "mean symmetry of inter pairs"},
      {"schedule.variance", "tau-variance", real, "0.01", {}, "per-batch variance of drawn symmetry; 0 fixes it"},
      {"eval.queries", "eval-queries", count, "32", {}, "query identities in evaluation"},
      {"sweep.axis", "sweep-axis", choice, "alpha", {"alpha", "beta"}, "swept symmetry"},
      {"sweep.grid", "sweep-grid", real_list, "0.3,1.0", {}, "swept mean symmetry values"},
      {"sweep.fixed_other", "sweep-fixed", real, "0.6", {}, "mean symmetry of the other axis"},
      {"sweep.seeds", "sweep-seeds", count, "5", {}, "seeds per grid value, starting at seed"},
      {"gradcheck.instances", "gradcheck-instances", count, "100", {}, "random instances per op"},
      {"gradcheck.seed", "gradcheck-seed", u64, "2024", {}, "seed of the gradient suite"},
      {"gradcheck.tolerance", "gradcheck-tolerance", real, "1e-5", {}, "maximum relative error"},
  };
  return schema;
}

ExperimentConfig::ExperimentConfig() {
  for (const auto& k : config_schema()) values_[k.key] = k.default_value;
}

ExperimentConfig ExperimentConfig::parse(std::istream& in, const std::string& source) {
  ExperimentConfig cfg;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      cfg.set_assignment(line);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse(in, path);
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const ConfigKey& k = lookup(key);
  const std::string v = trim(value);
  check_value(k, v);
  values_[k.key] = v;
}

void ExperimentConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

const std::string& ExperimentConfig::get(const std::string& key) const {
  lookup(key);
  return values_.at(key);
}

std::size_t ExperimentConfig::get_count(const std::string& key) const { return parse_u64(key, get(key)); }
std::uint64_t ExperimentConfig::get_u64(const std::string& key) const { return parse_u64(key, get(key)); }
double ExperimentConfig::get_real(const std::string& key) const { return parse_real(key, get(key)); }
bool ExperimentConfig::get_bool(const std::string& key) const { return parse_bool(key, get(key)); }
std::vector<double> ExperimentConfig::get_real_list(const std::string& key) const {
  return parse_list(key, get(key));
}

void ExperimentConfig::write(std::ostream& out) const {
  out << "# cycas " << kToolVersion << " resolved config\n";
  for (const auto& k : config_schema()) out << k.key << " = " << values_.at(k.key) << '\n';
}

IdentityWorld ExperimentConfig::make_world() const {
  WorldOptions opt;
  opt.nuisance_rank = get_count("world.nuisance_rank");
  opt.nuisance_gain = get_real("world.nuisance_gain");
  opt.bias_scale = get_real("world.bias_scale");
  try {
    return cycas::make_world(get_count("world.identities"), get_count("world.obs_dim"), get_count("world.cameras"),
                             get_real("world.sigma_intra"), get_u64("world.seed"), opt);
  } catch (const InfeasibleWorld&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

ExperimentSettings ExperimentConfig::settings() const {
  ExperimentSettings s;
  TrainConfig& t = s.train;
  t.pairs_per_batch = get_count("train.pairs_per_batch");
  t.instances_per_frame = get_count("train.instances_per_frame");
  t.stage1_iters = get_count("train.stage1_iters");
  t.stage2_iters = get_count("train.stage2_iters");
  t.stage2_mode = parse_stage2_mode(get("train.stage2_mode"));
  t.frame_gap = get_count("train.frame_gap");
  t.optimizer.kind = parse_optimizer_kind(get("train.optimizer"));
  t.optimizer.learning_rate = get_real("train.learning_rate");
  t.record_wall_time = get_bool("train.record_wall_time");
  t.loss.kind = parse_loss_kind(get("loss.kind"));
  t.loss.margin = get_real("loss.margin");
  t.loss.temperature.epsilon = get_real("temperature.epsilon");
  t.loss.temperature.delta = get_real("temperature.delta");
  t.schedule.tau_alpha_mean = get_real("schedule.tau_alpha");
  t.schedule.tau_beta_mean = get_real("schedule.tau_beta");
  t.schedule.variance = get_real("schedule.variance");
  t.seed = seed();
  s.model.embed_dim = get_count("model.embed_dim");
  s.model.hidden = get_count("model.hidden");
  s.eval_queries = get_count("eval.queries");
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (s.model.embed_dim == 0) throw ConfigError("model.embed_dim must be positive");
  if (s.eval_queries < 2) throw ConfigError("eval.queries must be at least 2");
  return s;
}

GradcheckOptions ExperimentConfig::gradcheck_options() const {
  GradcheckOptions g;
  g.instances = get_count("gradcheck.instances");
  g.seed = get_u64("gradcheck.seed");
  g.tolerance = get_real("gradcheck.tolerance");
  if (g.instances == 0) throw ConfigError("gradcheck.instances must be positive");
  if (!(g.tolerance > 0.0)) throw ConfigError("gradcheck.tolerance must be positive");
  return g;
}

}  // namespace cycas
