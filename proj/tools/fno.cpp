#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>

#include "fno/cases.hpp"

namespace {

struct CliOverrides {
  std::string case_name, config_path, mode, out_dir, state_file;
  long long seed = -1;
  int steps = -1;
};

void add_common(CLI::App* cmd, CliOverrides& o, bool with_mode, bool with_steps) {
  cmd->add_option("--case", o.case_name,
                  "case id: static_elastic, quasi_static_hyper, elastodynamic, expansion, "
                  "cylinder");
  cmd->add_option("--config", o.config_path, "config file with [section] key = value entries")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "random seed")->check(CLI::NonNegativeNumber);
  cmd->add_option("--out", o.out_dir, "output directory");
  if (with_mode)
    cmd->add_option("--mode", o.mode, "solver pairing: fe_fe or fe_no")
        ->check(CLI::IsMember({"fe_fe", "fe_no"}));
  if (with_steps)
    cmd->add_option("--steps", o.steps, "number of time or load steps")
        ->check(CLI::PositiveNumber);
  if (with_steps) cmd->add_option("--state", o.state_file, "state csv to continue from");
}

fno::CaseConfig resolve_config(const CliOverrides& o) {
  fno::ConfigMap m;
  if (!o.config_path.empty()) m = fno::load_config_file(o.config_path);
  if (!o.case_name.empty()) m.values["case.id"] = o.case_name;
  if (!o.mode.empty()) m.values["case.mode"] = o.mode;
  if (o.seed >= 0) m.values["case.seed"] = std::to_string(o.seed);
  if (!o.out_dir.empty()) m.values["case.out"] = o.out_dir;
  if (o.steps > 0) m.values["case.steps"] = std::to_string(o.steps);
  if (!o.state_file.empty()) m.values["case.state_file"] = o.state_file;
  if (!m.has("case.id"))
    throw fno::CaseError("no case selected: pass --case or a config with case.id");
  return fno::case_config_from_map(m);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coupled finite-element / neural-operator elasticity runner"};
  app.require_subcommand(1);

  CliOverrides o_mesh, o_train, o_run, o_cmp, o_oracle;
  CLI::App* c_mesh = app.add_subcommand("mesh", "write the case meshes and plot scripts");
  add_common(c_mesh, o_mesh, false, false);
  CLI::App* c_train = app.add_subcommand("train", "train the neural operator for a case");
  add_common(c_train, o_train, false, false);
  CLI::App* c_run = app.add_subcommand("run", "run the coupled solver for a case");
  add_common(c_run, o_run, true, true);
  CLI::App* c_cmp = app.add_subcommand("compare", "run fe_fe and fe_no and report both");
  add_common(c_cmp, o_cmp, false, true);
  CLI::App* c_oracle = app.add_subcommand("oracle", "run the single-domain reference solver");
  add_common(c_oracle, o_oracle, false, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_mesh->parsed()) {
      fno::CaseConfig cfg = resolve_config(o_mesh);
      fno::write_case_meshes(cfg);
      std::cout << "meshes written to " << cfg.out_dir << "\n";
      return 0;
    }
    if (c_train->parsed()) {
      fno::CaseConfig cfg = resolve_config(o_train);
      fno::TrainMetrics tm = fno::train_model(cfg);
      std::cout << tm.to_json();
      return 0;
    }
    if (c_run->parsed()) {
      fno::CaseConfig cfg = resolve_config(o_run);
      fno::RunMetrics m = fno::run_case(cfg);
      std::cout << m.to_json();
      return m.converged ? 0 : 3;
    }
    if (c_cmp->parsed()) {
      fno::CaseConfig cfg = resolve_config(o_cmp);
      fno::CompareReport rep = fno::compare_modes(cfg);
      std::cout << rep.to_json();
      return rep.first.converged && rep.second.converged ? 0 : 3;
    }
    if (c_oracle->parsed()) {
      fno::CaseConfig cfg = resolve_config(o_oracle);
      fno::RunMetrics m = fno::run_oracle(cfg);
      std::cout << m.to_json();
      return 0;
    }
  } catch (const fno::CaseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
