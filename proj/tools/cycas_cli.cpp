// Command-line front end: gradcheck, train, sweep, eval.
//
// Exit codes: 0 success, 1 verification failure, 2 config or input error,
// 3 numerical abort.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cycas/config.hpp"
#include "cycas/eval.hpp"
#include "cycas/gradcheck.hpp"
#include "cycas/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace cycas;

namespace {

enum Exit { kOk = 0, kVerifyFailed = 1, kInputError = 2, kNumericalAbort = 3 };

constexpr int kSchemaVersion = 1;

struct Overrides {
  std::string config_path;
  std::vector<std::string> assignments;
  std::map<std::string, std::string> flags;  // config key -> value
  std::map<std::string, CLI::Option*> options;
};

void add_config_options(CLI::App& sub, Overrides& ov) {
  sub.add_option("--config", ov.config_path, "key = value config file")->check(CLI::ExistingFile);
  sub.add_option("--set", ov.assignments, "override any config key, key=value (repeatable)");
  for (const auto& k : config_schema()) {
    ov.options[k.key] = sub.add_option("--" + k.flag, ov.flags[k.key], k.doc + " [" + k.key + "]");
  }
}

ExperimentConfig resolve(const Overrides& ov) {
  ExperimentConfig cfg = ov.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(ov.config_path);
  for (const auto& a : ov.assignments) cfg.set_assignment(a);
  for (const auto& [key, opt] : ov.options) {
    if (opt->count()) cfg.set(key, ov.flags.at(key));
  }
  return cfg;
}

std::string config_text(const ExperimentConfig& cfg) {
  std::ostringstream ss;
  cfg.write(ss);
  return ss.str();
}

fs::path prepare_out(const ExperimentConfig& cfg) {
  const fs::path dir = cfg.out_dir();
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

json metrics_json(const RetrievalMetrics& m) {
  return {{"rank1", m.rank1}, {"mAP", m.mAP}, {"n_queries", m.n_queries}};
}

json trivial_json(const TrivialReport& t) {
  return {{"consistency", t.consistency}, {"identity_match", t.identity_match}, {"flagged", t.flagged}};
}

json header(const char* schema, const ExperimentConfig& cfg) {
  return {{"schema", schema}, {"version", kSchemaVersion}, {"tool_version", kToolVersion}, {"seed", cfg.seed()}};
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string real_field(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int cmd_gradcheck(const ExperimentConfig& cfg, const std::string& sign_flip) {
  GradcheckOptions opt = cfg.gradcheck_options();
  opt.inject_sign_flip = sign_flip;
  const GradcheckReport rep = run_gradient_suite(opt);
  std::printf("%-20s %14s %10s %9s  %s\n", "op", "max_rel_error", "instances", "rejected", "status");
  for (const auto& e : rep.entries) {
    std::printf("%-20s %14.3e %10zu %9zu  %s\n", e.op.c_str(), e.max_rel_error, e.instances, e.rejected,
                e.passed ? "ok" : "FAIL");
  }
  std::printf("tolerance %.1e, %.2f s: %s\n", opt.tolerance, rep.seconds, rep.passed() ? "passed" : "FAILED");
  return rep.passed() ? kOk : kVerifyFailed;
}

int cmd_train(const ExperimentConfig& cfg) {
  const IdentityWorld world = cfg.make_world();
  const ExperimentSettings settings = cfg.settings();
  const fs::path dir = prepare_out(cfg);
  write_file(dir / "config.txt", config_text(cfg));

  const RunOutcome run = run_experiment(world, settings, cfg.seed());

  std::ostringstream csv;
  run.result.log.write_csv(csv);
  write_file(dir / "log.csv", csv.str());
  std::ostringstream ckpt;
  save_checkpoint(ckpt, run.result.model);
  write_file(dir / "model.ckpt", ckpt.str());

  json j = header("cycas-train-metrics", cfg);
  j["final"] = metrics_json(run.metrics);
  j["untrained"] = metrics_json(run.untrained);
  j["trivial"] = trivial_json(run.trivial);
  j["iterations"] = {{"stage1", settings.train.stage1_iters}, {"stage2", settings.train.stage2_iters}};
  j["data_digest"] = hex64(run.result.log.data_digest);
  write_file(dir / "metrics.json", j.dump(2) + "\n");

  std::printf("rank1 %.4f  mAP %.4f  (untrained rank1 %.4f)  trivial %s\n", run.metrics.rank1, run.metrics.mAP,
              run.untrained.rank1, run.trivial.flagged ? "FLAGGED" : "no");
  std::printf("wrote %s\n", dir.string().c_str());
  return kOk;
}

constexpr const char* kSweepHeader = "axis,tau_mean,fixed_other,seed,rank1,mAP,n_queries";

std::string sweep_row(SweepAxis axis, double fixed_other, const SweepPoint& p) {
  return std::string(to_string(axis)) + ',' + real_field(p.tau_mean) + ',' + real_field(fixed_other) + ',' +
         std::to_string(p.seed) + ',' + real_field(p.metrics.rank1) + ',' + real_field(p.metrics.mAP) + ',' +
         std::to_string(p.metrics.n_queries);
}

// Reads the complete rows of an earlier run of the same sweep.
std::vector<SweepPoint> read_sweep_rows(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<SweepPoint> rows;
  std::size_t pos = text.find('\n');
  if (pos == std::string::npos || text.substr(0, pos) != kSweepHeader) return rows;
  for (std::size_t next; (next = text.find('\n', pos + 1)) != std::string::npos; pos = next) {
    std::stringstream line(text.substr(pos + 1, next - pos - 1));
    std::vector<std::string> f;
    for (std::string cell; std::getline(line, cell, ',');) f.push_back(cell);
    if (f.size() != 7) break;
    SweepPoint p;
    p.tau_mean = std::stod(f[1]);
    p.seed = std::stoull(f[3]);
    p.metrics = {std::stod(f[4]), std::stod(f[5]), std::stoull(f[6])};
    rows.push_back(p);
  }
  return rows;
}

int cmd_sweep(const ExperimentConfig& cfg) {
  const IdentityWorld world = cfg.make_world();
  const ExperimentSettings settings = cfg.settings();
  const SweepAxis axis = parse_sweep_axis(cfg.get("sweep.axis"));
  const std::vector<double> grid = cfg.get_real_list("sweep.grid");
  const double fixed_other = cfg.get_real("sweep.fixed_other");
  const std::size_t n_seeds = cfg.get_count("sweep.seeds");
  for (double t : grid) {
    if (!(t > 0.0 && t <= 1.0)) throw ConfigError("sweep.grid values must lie in (0,1]");
  }
  if (!(fixed_other >= 0.0 && fixed_other <= 1.0)) throw ConfigError("sweep.fixed_other must lie in [0,1]");
  if (n_seeds == 0) throw ConfigError("sweep.seeds must be positive");

  const fs::path dir = prepare_out(cfg);
  const fs::path csv_path = dir / "sweep.csv";
  const std::string resolved = config_text(cfg);
  std::vector<SweepPoint> done;
  if (fs::exists(csv_path)) {
    std::ifstream prev(dir / "config.txt", std::ios::binary);
    const std::string prev_text((std::istreambuf_iterator<char>(prev)), std::istreambuf_iterator<char>());
    if (prev_text != resolved) {
      throw ConfigError(dir.string() + " holds a sweep with a different config; choose another --out");
    }
    done = read_sweep_rows(csv_path);
  }
  write_file(dir / "config.txt", resolved);

  // Rewrite the finished rows so a half-written final line is dropped.
  std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
  csv << kSweepHeader << '\n';
  for (const auto& p : done) csv << sweep_row(axis, fixed_other, p) << '\n';
  csv.flush();

  SweepResult result;
  result.axis = axis;
  std::size_t resumed = 0;
  for (double tau : grid) {
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const std::uint64_t seed = cfg.seed() + s;
      const auto it = std::find_if(done.begin(), done.end(),
                                   [&](const SweepPoint& p) { return p.tau_mean == tau && p.seed == seed; });
      if (it != done.end()) {
        result.grid.push_back(*it);
        ++resumed;
        continue;
      }
      const SweepPoint p = sweep_cell(world, settings, axis, tau, fixed_other, seed);
      csv << sweep_row(axis, fixed_other, p) << '\n';
      csv.flush();
      if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
      result.grid.push_back(p);
      std::printf("%s=%.3f seed %llu: rank1 %.4f mAP %.4f\n", to_string(axis), tau,
                  static_cast<unsigned long long>(seed), p.metrics.rank1, p.metrics.mAP);
    }
  }

  const auto summary = result.summarize();
  json j = header("cycas-sweep-summary", cfg);
  j["axis"] = to_string(axis);
  j["fixed_other"] = fixed_other;
  j["seeds"] = n_seeds;
  j["points"] = json::array();
  for (const auto& s : summary) {
    j["points"].push_back({{"tau_mean", s.tau_mean},
                           {"mean_rank1", s.mean_rank1},
                           {"se_rank1", s.se_rank1},
                           {"mean_mAP", s.mean_map},
                           {"n", s.n}});
  }
  if (axis == SweepAxis::alpha) {
    const TrendCheck c = endpoint_gap_check(summary);
    j["criterion"] = {{"name", "endpoint_gap"}, {"value", c.value}, {"threshold", 0.05}, {"passed", c.passed}};
    std::printf("endpoint gap %.4f (<= 0.05): %s\n", c.value, c.passed ? "pass" : "fail");
  } else {
    const TrendCheck c = monotone_check(summary);
    j["criterion"] = {{"name", "monotone"}, {"value", c.value}, {"threshold", 1}, {"passed", c.passed}};
    std::printf("inversions %.0f (at most 1 within one SE): %s\n", c.value, c.passed ? "pass" : "fail");
  }
  write_file(dir / "summary.json", j.dump(2) + "\n");
  if (resumed) std::printf("resumed %zu finished rows\n", resumed);
  std::printf("wrote %s\n", dir.string().c_str());
  return kOk;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint, bool ideal) {
  const IdentityWorld world = cfg.make_world();
  const ExperimentSettings settings = cfg.settings();
  if (ideal == !checkpoint.empty()) throw ConfigError("eval needs exactly one of --checkpoint or --ideal");

  LearnedEmbedder model = LearnedEmbedder::identity(1);
  if (ideal) {
    model = ideal_embedder(world, settings.model.embed_dim);
  } else {
    std::ifstream in(checkpoint, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint '" + checkpoint + "'");
    model = load_checkpoint(in);
    if (model.input_dim() != world.obs_dim) {
      throw CheckpointError("checkpoint expects observations of dimension " + std::to_string(model.input_dim()) +
                            " but the configured world has " + std::to_string(world.obs_dim));
    }
  }
  const RetrievalMetrics m = evaluate_for_seed(model, world, settings.eval_queries, cfg.seed());
  const TrivialReport t = detect_trivial_solution(model, world);

  const fs::path dir = prepare_out(cfg);
  write_file(dir / "config.txt", config_text(cfg));
  json j = header("cycas-eval", cfg);
  j["model"] = ideal ? std::string("ideal") : checkpoint;
  j["metrics"] = metrics_json(m);
  j["trivial"] = trivial_json(t);
  write_file(dir / "eval.json", j.dump(2) + "\n");
  std::printf("rank1 %.4f  mAP %.4f  queries %zu\n", m.rank1, m.mAP, m.n_queries);
  std::printf("trivial audit: consistency %.4f  identity_match %.4f  %s\n", t.consistency, t.identity_match,
              t.flagged ? "FLAGGED" : "ok");
  std::printf("wrote %s\n", (dir / "eval.json").string().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cycle-association embedding experiments on a synthetic multi-camera world"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  Overrides gc_ov, train_ov, sweep_ov, eval_ov;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every backward pass");
  add_config_options(*gc, gc_ov);
  std::string sign_flip;
#ifdef CYCAS_FAULT_INJECTION
  gc->add_option("--inject-sign-flip", sign_flip, "negate the analytic gradient of one op")
      ->check(CLI::IsMember(gradient_suite_ops()));
#endif
  auto* train = app.add_subcommand("train", "two-stage training, writes log, checkpoint and metrics");
  add_config_options(*train, train_ov);
  auto* sweep = app.add_subcommand("sweep", "symmetry sweep over a grid of mean tau values");
  add_config_options(*sweep, sweep_ov);
  auto* eval = app.add_subcommand("eval", "score a checkpoint on the configured world");
  add_config_options(*eval, eval_ov);
  std::string checkpoint;
  bool ideal = false;
  eval->add_option("--checkpoint", checkpoint, "model checkpoint written by train");
  eval->add_flag("--ideal", ideal, "score the camera-invariant reference embedder instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInputError;
  }

  try {
    if (gc->parsed()) return cmd_gradcheck(resolve(gc_ov), sign_flip);
    if (train->parsed()) return cmd_train(resolve(train_ov));
    if (sweep->parsed()) return cmd_sweep(resolve(sweep_ov));
    if (eval->parsed()) return cmd_eval(resolve(eval_ov), checkpoint, ideal);
  } catch (const NumericalAbort& e) {
    std::fprintf(stderr, "numerical abort: %s\n", e.what());
    return kNumericalAbort;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInputError;
  }
  return kInputError;
}
