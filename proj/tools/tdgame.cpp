// tdgame: scenario-driven batch runner.
//
//   tdgame simulate|solve|reach|verify|repro [--scenario f.ini] [--preset name]
//          [--out dir] [--seed n] [--threads n]
//
// Exit codes: 0 ok, 1 verification failed, 2 bad configuration,
// 3 simulation diverged, 4 HJ solver instability.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "tdgame/commands.hpp"

namespace {

struct Common {
  std::string scenario_file;
  std::string preset;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  int threads = 0;
  std::string value_file;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--scenario", c.scenario_file, "INI scenario file")->check(CLI::ExistingFile);
  cmd->add_option("--preset", c.preset, "start from a shipped preset (smoke, fig2..fig5, theorem2)");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--seed", c.seed, "override the scenario seed");
  cmd->add_option("--threads", c.threads, "worker threads (0 = runtime default)");
}

tdgame::Scenario resolve(const Common& c, const std::string& fallback) {
  tdgame::Scenario s;
  if (!c.scenario_file.empty()) {
    std::ifstream in(c.scenario_file);
    if (!in) throw tdgame::ConfigError("cannot open scenario '" + c.scenario_file + "'");
    s = tdgame::load_scenario(in);
    if (!c.preset.empty()) throw tdgame::ConfigError("--preset and --scenario are exclusive");
  } else {
    s = tdgame::preset(c.preset.empty() ? fallback : c.preset);
  }
  if (c.seed) s.seed = *c.seed;
  if (!c.value_file.empty()) s.value_file = c.value_file;
  s.validate();
#ifdef _OPENMP
  if (c.threads > 0) omp_set_num_threads(c.threads);
#endif
  if (c.threads < 0) throw tdgame::ConfigError("--threads must be >= 0");
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Delay-robust coupled-system games: simulation, HJI solves and checks"};
  app.require_subcommand(1);

  Common sim, sol, rea, ver, rep;
  auto* c_sim = app.add_subcommand("simulate", "roll out the true delayed system");
  add_common(c_sim, sim);
  c_sim->add_option("--value", sim.value_file, "value dump to derive feedback from");

  auto* c_sol = app.add_subcommand("solve", "solve the stabilization game");
  add_common(c_sol, sol);

  auto* c_rea = app.add_subcommand("reach", "closed-loop terminal problem and safe set");
  add_common(c_rea, rea);
  c_rea->add_option("--value", rea.value_file, "step-one value dump");

  std::string which = "all";
  auto* c_ver = app.add_subcommand("verify", "run an oracle suite");
  add_common(c_ver, ver);
  c_ver->add_option("which", which, "lemma1|theorem2|lk|hamiltonian|dde|all")
      ->check(CLI::IsMember({"lemma1", "theorem2", "lk", "hamiltonian", "dde", "all"}));

  std::string figure;
  auto* c_rep = app.add_subcommand("repro", "full pipeline for one figure");
  add_common(c_rep, rep);
  c_rep->add_option("figure", figure, "fig2|fig3|fig4|fig5")
      ->required()
      ->check(CLI::IsMember({"fig2", "fig3", "fig4", "fig5"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (c_sim->parsed()) {
      const auto s = resolve(sim, "custom");
      tdgame::OutputDir out(sim.out);
      tdgame::cmd_simulate(s, out);
    } else if (c_sol->parsed()) {
      const auto s = resolve(sol, "custom");
      tdgame::OutputDir out(sol.out);
      tdgame::cmd_solve(s, out);
    } else if (c_rea->parsed()) {
      const auto s = resolve(rea, "fig4");
      tdgame::OutputDir out(rea.out);
      tdgame::cmd_reach(s, out);
    } else if (c_ver->parsed()) {
      const auto s = resolve(ver, which == "theorem2" || which == "all" ? "theorem2" : "custom");
      tdgame::OutputDir out(ver.out);
      const auto checks = tdgame::cmd_verify(s, which, &out);
      tdgame::print_checks(std::cout, checks);
      return tdgame::all_pass(checks) ? 0 : 1;
    } else if (c_rep->parsed()) {
      const auto s = resolve(rep, figure);
      tdgame::OutputDir out(rep.out);
      tdgame::print_checks(std::cout, tdgame::cmd_repro(s, figure, out));
    }
  } catch (const tdgame::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const tdgame::DivergenceError& e) {
    std::cerr << "diverged at t=" << e.time() << ": " << e.what() << '\n';
    return 3;
  } catch (const tdgame::InstabilityError& e) {
    std::cerr << "solver instability: " << e.what() << '\n';
    return 4;
  } catch (const tdgame::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
