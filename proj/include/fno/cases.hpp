#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fno/coupling.hpp"

namespace fno {

/// Configuration or runtime failure of a case run (missing checkpoint,
/// unknown config key, bad state file). The CLI maps these to nonzero exits.
struct CaseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Flat view of an INI-style config file: `[section]` headers, `key = value`
/// lines, `#` comments. Keys are addressed as "section.key".
struct ConfigMap {
  std::map<std::string, std::string> values;

  bool has(const std::string& key) const { return values.count(key) != 0; }
  std::string str(const std::string& key, const std::string& fallback) const;
  double num(const std::string& key, double fallback) const;
  int integer(const std::string& key, int fallback) const;
};

ConfigMap parse_config_text(const std::string& text);
ConfigMap load_config_file(const std::string& path);

enum class CaseId { static_elastic, quasi_static_hyper, elastodynamic, expansion, cylinder };
enum class RunMode { fe_fe, fe_no };

CaseId case_id_from_name(const std::string& name);
RunMode run_mode_from_name(const std::string& name);
std::string to_string(CaseId id);
std::string to_string(RunMode mode);

/// One resolved case setup. Defaults depend on the case id; a config file
/// overrides individual fields. All lengths and times are nondimensional.
struct CaseConfig {
  CaseId id = CaseId::static_elastic;
  RunMode mode = RunMode::fe_fe;
  std::string out_dir;
  unsigned long long seed = 1;

  // material
  double E = 1000.0, nu = 0.3, rho = 5.0;

  // loading and time stepping
  int steps = 1;
  double load = 0.01;       // magnitude; the hyperelastic case scales it by (n+1)
  double dt = 1.0;          // printed step size
  double time_scale = 1.0;  // effective step = dt * time_scale
  int state_steps = 30;     // expansion: single-region pre-roll length
  std::string state_file;   // expansion: stored state to continue from

  // coupling
  double eps = 1e-3;
  double eps_inner = 1e-5;
  double relaxation = 0.0;
  int max_inner = 200;

  // mesh scale
  int divisions = 24;         // square lattice per side (static/hyper)
  int rings = 7;              // disk rings (static/hyper)
  int dyn_divisions = 40;     // square lattice per side (dynamic cases)
  int square_divisions = 14;  // surrogate-square lattice (dynamic cases)
  int annulus_res = 10;       // radial divisions of the full annulus (cylinder)
  int fine_res = 10;          // radial divisions of the fine inner window (cylinder)
  int interface_points = 48;  // operator boundary points on the circular/arc interface
  int arc_fixed_points = 32;  // cylinder: points carrying the fixed inner-arc loading
  int rim_points = 40;        // operator boundary points on the square rim (multiple of 4)

  // boundary-sample statistics for training data
  double grf_length = 2.0;
  double grf_sigma = 0.01;
  int grf_samples = 64;  // static cases: boundary samples; dynamic cases: FE runs
  int record_steps = 8;  // dynamic cases: recorded steps per FE run
  int skip_steps = 24;   // dynamic cases: warm-up steps before recording (alternating runs)

  // network scale and training
  int q = 32;
  int width = 48;
  int depth = 2;
  int grid_n = 16;
  int cnn_hidden = 32;
  int iterations = 4000;
  int batch = 8;
  int collocation = 100;
  double lr = 1e-3;
  double lr_final = 0;  // 0 selects lr/100
  int history_every = 50;
  int holdout = 8;
  std::string checkpoint;
  std::string checkpoint_second;    // expansion: transferred lower model
  std::string checkpoint_baseline;  // elastodynamic: data-driven rollout baseline

  double dt_eff() const { return dt * time_scale; }
};

CaseConfig default_case_config(CaseId id);

/// Defaults for `case.id`, overridden by every key present in the map.
/// Unknown keys and unknown case/mode names raise CaseError.
CaseConfig case_config_from_map(const ConfigMap& m);

/// Summary written as metrics.json next to the run artifacts.
struct RunMetrics {
  std::string case_name;
  std::string mode;
  bool converged = false;
  int steps = 0;
  int iterations = 0;  // total inner iterations over all steps
  std::vector<int> iterations_per_step;
  double l2_rel_error = 0.0;  // final step, against the monolithic oracle
  std::vector<double> error_per_step;
  double eps = 0.0, eps_inner = 0.0, relaxation = 0.0;
  int newton_iterations_max = 0;  // quasi-static only
  unsigned long long seed = 0;
  double seconds = 0.0;

  std::string to_json() const;
};

struct TrainMetrics {
  std::string case_name;
  int iterations = 0;
  double initial_loss = 0.0, final_loss = 0.0;
  double holdout_rel_error = 0.0;  // mean over fresh boundary samples
  double holdout_rel_error_second = 0.0;
  double seconds = 0.0;
  std::string checkpoint;

  std::string to_json() const;
};

struct CompareReport {
  RunMetrics first, second;
  std::vector<double> rollout_error_per_step;   // dynamic: boundary-fed operator
  std::vector<double> baseline_error_per_step;  // dynamic: data-driven rollout

  std::string to_json() const;
};

/// Solves the configured case in cfg.mode, writes per-step fields, stresses,
/// the convergence record, gnuplot data and metrics.json under cfg.out_dir,
/// and returns the metrics. Missing checkpoints raise CaseError; a
/// non-converged run is returned (and written) with converged = false.
RunMetrics run_case(const CaseConfig& cfg);

/// Solves the intact-domain reference problem only and writes its fields.
RunMetrics run_oracle(const CaseConfig& cfg);

/// Trains the case's operator model(s), writes checkpoint(s) and loss-history
/// CSV(s), evaluates held-out boundary samples, and writes metrics.json.
TrainMetrics train_model(const CaseConfig& cfg);

/// Runs the case in two modes and writes a side-by-side report. For dynamic
/// cases a data-driven rollout error curve is added when a baseline
/// checkpoint exists.
CompareReport compare_modes(const CaseConfig& cfg, RunMode first = RunMode::fe_fe,
                            RunMode second = RunMode::fe_no);

/// Writes the case's meshes as text files plus gnuplot wireframe data.
void write_case_meshes(const CaseConfig& cfg);

}  // namespace fno
