#pragma once

// Bodies of the command-line subcommands. Each writes into an OutputDir,
// finishes its manifest, and returns PASS/FAIL lines where it has any.
// Library exceptions propagate; the executable maps them to exit codes.

#include <fstream>
#include <iostream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tdgame/experiments.hpp"
#include "tdgame/manifest.hpp"

namespace tdgame {

using json = nlohmann::ordered_json;

inline json verdict_json(const StabilityVerdict& v) {
  return {{"class", to_string(v.cls)},
          {"envelope_ratio", format_number(v.envelope_ratio)},
          {"final_error", format_number(v.final_error)},
          {"peaks", v.peaks}};
}

inline json checks_json(const std::vector<CheckLine>& checks) {
  json a = json::array();
  for (const CheckLine& c : checks) a.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
  return a;
}

inline void print_checks(std::ostream& os, const std::vector<CheckLine>& checks) {
  for (const CheckLine& c : checks)
    os << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
}

inline bool all_pass(const std::vector<CheckLine>& checks) {
  for (const CheckLine& c : checks)
    if (!c.pass) return false;
  return true;
}

inline std::shared_ptr<const ValueFunction> load_value_file(const std::string& path) {
  if (path.empty()) throw ConfigError("no value file given");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open value file '" + path + "'");
  return std::make_shared<ValueFunction>(read_value_dump(in));
}

// ---------------------------------------------------------------------------
// gnuplot scripts

inline std::string gp_trajectory(const std::string& csv, const std::string& title) {
  return "set datafile separator ','\n"
         "set key autotitle columnhead\n"
         "set xlabel 't'\n"
         "set title '" + title + "'\n"
         "plot '" + csv + "' using 1:2 with lines title 'e_p', \\\n"
         "     '' using 1:3 with lines title 'e_v', \\\n"
         "     '' using 1:5 with steps title 'u'\n"
         "pause -1\n";
}

inline std::string gp_slice(const std::string& csv, const std::string& title, double threshold) {
  return "set datafile separator ','\n"
         "set xlabel 'e_p'\nset ylabel 'e_v'\n"
         "set title '" + title + "'\n"
         "set view map\nset contour base\n"
         "set cntrparam levels discrete " + format_number(threshold) + "\n"
         "set dgrid3d\n"
         "splot '" + csv + "' using 1:2:4 with pm3d notitle\n"
         "pause -1\n";
}

// ---------------------------------------------------------------------------

inline void write_phase_run(OutputDir& out, const Trajectory& traj, const std::vector<double>& phase,
                            const CoupledTdsModel& model) {
  std::vector<ExtraColumn> extra;
  if (!phase.empty()) extra.push_back({"phase", phase});
  out.write_with("trajectory.csv", [&](std::ostream& os) { write_trajectory_csv(os, traj, extra); });
  out.write_with("residual.csv", [&](std::ostream& os) { write_residual_csv(os, residual_w(model, traj)); });
  out.write("trajectory.gp", gp_trajectory("trajectory.csv", "error trajectory"));
}

inline std::vector<double> phase_column(const Scenario& s, const Trajectory& traj, bool controlled) {
  if (!(s.delay_on > 0.0) && !(controlled && s.control_on > 0.0)) return {};
  std::vector<double> phase;
  for (double t : traj.times) phase.push_back(t < s.delay_on ? 0.0 : (controlled && t >= s.control_on ? 2.0 : 1.0));
  return phase;
}

// Rolls out the true delayed system. Control comes from the scenario's value
// file when one is set, and is zero otherwise.
inline StabilityVerdict cmd_simulate(const Scenario& s, OutputDir& out, std::ostream& log = std::cerr) {
  const CoupledTdsModel model = double_integrator_pair(s.model);
  ControlPolicy policy;
  if (!s.value_file.empty()) {
    policy = ControlPolicy::from_value(load_value_file(s.value_file), s.model.u_max, s.dt_ctrl, s.control_on);
    policy.provenance = s.value_file;
  }
  const bool controlled = policy.source != PolicySource::zero;
  const DelaySignal sig = s.delay_signal();
  Trajectory traj;
  try {
    traj = simulate(model, state_from_error({s.e_p0, s.e_v0}), sig, sig, make_dde_controller(policy),
                    s.sim_horizon, s.dt);
  } catch (const DivergenceError& e) {
    const Trajectory& part = e.partial();
    std::vector<ExtraColumn> extra;
    const auto phase = phase_column(s, part, controlled);
    if (!phase.empty()) extra.push_back({"phase", phase});
    out.write_with("trajectory.csv", [&](std::ostream& os) { write_trajectory_csv(os, part, extra); });
    out.finish("simulate", scenario_json(s),
               {{"diverged_at", format_number(e.time())}, {"message", e.what()}});
    throw;
  }
  const StabilityVerdict v = classify_stability(traj);
  write_phase_run(out, traj, phase_column(s, traj, controlled), model);
  json summary = verdict_json(v);
  summary["controlled"] = controlled;
  if (controlled) summary["value_file"] = s.value_file;
  out.finish("simulate", scenario_json(s), summary);
  log << "verdict: " << to_string(v.cls) << " (envelope_ratio " << format_number(v.envelope_ratio)
      << ", final_error " << format_number(v.final_error) << ")\n";
  return v;
}

inline void write_value_outputs(OutputDir& out, const ValueFunction& V, const std::string& stem,
                                double threshold) {
  out.write_with(stem + ".bin", [&](std::ostream& os) { write_value_dump(os, V); });
  const int nd = V.grid.count(2);
  for (int k : {0, nd / 2, nd - 1}) {
    const std::string name = stem + "_slice_k" + std::to_string(k) + ".csv";
    out.write_with(name, [&](std::ostream& os) { write_slice_csv(os, V, k); });
    out.write(stem + "_slice_k" + std::to_string(k) + ".gp",
              gp_slice(name, stem + " at d=" + format_number(V.grid.axes[2].coord(k)), threshold));
  }
}

inline json solve_metadata(const HjiSolution& sol, const Grid& g, const std::string& cost) {
  json dts = json::array(), cfls = json::array();
  for (double d : sol.dt_history) dts.push_back(format_number(d));
  for (double c : sol.cfl_history) cfls.push_back(format_number(c));
  return {{"grid", {{"counts", {g.count(0), g.count(1), g.count(2)}},
                    {"mins", {g.axes[0].min, g.axes[1].min, g.axes[2].min}},
                    {"maxs", {g.axes[0].max, g.axes[1].max, g.axes[2].max}}}},
          {"cost", cost},
          {"steps", sol.steps},
          {"dt_history", dts},
          {"cfl_history", cfls}};
}

inline void warn_grid_size(const Grid& g, std::ostream& log) {
  if (g.size() > 10'000'000)
    log << "warning: grid has " << g.size() << " nodes; memory use may be large\n";
}

// Step one: stabilizing value function with stage cost e_v^2.
inline std::shared_ptr<const ValueFunction> cmd_solve(const Scenario& s, OutputDir& out,
                                                      std::ostream& log = std::cerr) {
  warn_grid_size(s.grid(), log);
  if (s.cfl > 1.0) log << "warning: cfl " << s.cfl << " exceeds 1; the solve may go unstable\n";
  const HjiSolution sol = solve_stabilization(s, [&](const std::string& m) { log << m << '\n'; });
  auto V = std::make_shared<ValueFunction>(sol.final_value());
  write_value_outputs(out, *V, "value", s.threshold);
  out.write("solve.json", solve_metadata(sol, V->grid, "stage e_v^2").dump(2) + "\n");
  out.finish("solve", scenario_json(s), {{"steps", sol.steps}, {"value_min", format_number(V->min())},
                                         {"value_max", format_number(V->max())}});
  return V;
}

inline void write_safe_set(OutputDir& out, const ValueFunction& V, const SafeSet& safe) {
  out.write_with("safe_areas.csv", [&](std::ostream& os) {
    os << "d,area\n";
    for (std::size_t k = 0; k < safe.slice_area.size(); ++k)
      os << format_number(safe.slice_d[k]) << ',' << format_number(safe.slice_area[k]) << '\n';
  });
  out.write_with("safe_mask.csv", [&](std::ostream& os) {
    const Grid& g = V.grid;
    os << "e_p,e_v,d,V,safe\n";
    for (int k = 0; k < g.count(2); ++k)
      for (int i = 0; i < g.count(0); ++i)
        for (int j = 0; j < g.count(1); ++j) {
          const Point x = g.point(i, j, k);
          os << format_number(x[0]) << ',' << format_number(x[1]) << ',' << format_number(x[2]) << ','
             << format_number(V.at(i, j, k)) << ',' << int(safe.mask[g.index(i, j, k)]) << '\n';
        }
  });
}

// Step two: terminal |e_p| under the step-one feedback, then the safe set.
inline SafeSet cmd_reach(const Scenario& s, OutputDir& out, std::ostream& log = std::cerr) {
  const auto step1 = load_value_file(s.value_file);
  if (!step1->grid.same_shape(s.grid()))
    log << "note: using the value file's grid rather than the scenario grid\n";
  Scenario sg = s;
  const Grid& g = step1->grid;
  sg.n_ep = g.count(0);
  sg.n_ev = g.count(1);
  sg.n_d = g.count(2);
  sg.ep_max = g.axes[0].max;
  sg.ev_max = g.axes[1].max;
  sg.tstar = g.axes[2].max;
  const ValueFunction V2 =
      solve_closed_loop_step(sg, *step1, [&](const std::string& m) { log << m << '\n'; });
  const SafeSet safe = extract_safe_set(V2, s.threshold);
  write_value_outputs(out, V2, "reach_value", s.threshold);
  write_safe_set(out, V2, safe);
  json areas = json::array();
  for (double a : safe.slice_area) areas.push_back(format_number(a));
  out.finish("reach", scenario_json(s), {{"threshold", format_number(s.threshold)}, {"slice_area", areas}});
  return safe;
}

// ---------------------------------------------------------------------------

inline std::vector<CheckLine> cmd_verify(const Scenario& s, const std::string& which, OutputDir* out,
                                         std::ostream& log = std::cerr) {
  auto lg = [&](const std::string& m) { log << m << '\n'; };
  std::vector<CheckLine> checks;
  json summary = json::object();
  auto add = [&](const std::vector<CheckLine>& c) { checks.insert(checks.end(), c.begin(), c.end()); };
  const bool all = which == "all";
  bool known = all;
  if (all || which == "dde") {
    known = true;
    add(run_dde_oracle().checks);
  }
  if (all || which == "hamiltonian") {
    known = true;
    add(run_hamiltonian_oracle(s.seed).checks);
  }
  if (all || which == "lk") {
    known = true;
    add(run_lk_oracle().checks);
  }
  if (all || which == "lemma1") {
    known = true;
    const Lemma1Result r = run_lemma1(s.model);
    add(r.checks);
    if (out)
      out->write_with("residual_fit.csv", [&](std::ostream& os) {
        os << "d,max_w\n";
        for (std::size_t i = 0; i < r.fit.delays.size(); ++i)
          os << format_number(r.fit.delays[i]) << ',' << format_number(r.fit.max_norms[i]) << '\n';
      });
  }
  if (all || which == "theorem2") {
    known = true;
    const Theorem2Result r = run_theorem2(s, lg);
    add(r.checks);
    if (out) {
      out->write_with("sandwich.csv", [&](std::ostream& os) { write_sandwich_csv(os, r.sandwich); });
      out->write_with("gap.csv", [&](std::ostream& os) {
        os << "d_max,worst_gap,fit\n";
        for (std::size_t i = 0; i < r.gap.d_max.size(); ++i)
          os << format_number(r.gap.d_max[i]) << ',' << format_number(r.gap.worst_gap[i]) << ','
             << format_number(r.gap.slope * r.gap.d_max[i]) << '\n';
      });
    }
  }
  if (!known) throw ConfigError("verify: unknown suite '" + which + "'");
  if (out) out->finish("verify " + which, scenario_json(s), {{"checks", checks_json(checks)}});
  return checks;
}

// ---------------------------------------------------------------------------

inline std::vector<CheckLine> repro_fig2(const Scenario& s, OutputDir& out, const Log& log) {
  const Fig2Result r = run_fig2(s, log);
  out.write_with("sweep.csv", [&](std::ostream& os) { write_sweep_csv(os, r.rows); });
  out.write("sweep.gp",
            "set datafile separator ','\n"
            "set xlabel 'k'\nset ylabel 'b'\nset zlabel 'T*'\n"
            "splot 'sweep.csv' using 1:2:($6==1?$3:1/0) title 'certified' with points pt 7, \\\n"
            "      '' using 1:2:(strcol(7) eq 'converged'?$3:1/0) title 'converged' with points pt 6\n"
            "pause -1\n");
  return r.checks;
}

inline std::vector<CheckLine> repro_fig3(const Scenario& s, OutputDir& out, const Log& log) {
  const Fig3Result r = run_fig3(s, log);
  write_value_outputs(out, *r.value, "value", s.threshold);
  write_phase_run(out, r.traj, r.phase, double_integrator_pair(s.model));
  return r.checks;
}

inline std::vector<CheckLine> repro_fig4(const Scenario& s, OutputDir& out, const Log& log) {
  const Fig4Result r = run_fig4(s, log);
  write_value_outputs(out, *r.step1, "value", s.threshold);
  write_value_outputs(out, r.step2, "reach_value", s.threshold);
  write_safe_set(out, r.step2, r.safe);
  return r.checks;
}

inline std::vector<CheckLine> repro_fig5(const Scenario& s, OutputDir& out, const Log& log) {
  const Fig5Result r = run_fig5(s, log);
  write_value_outputs(out, *r.value, "value", s.threshold);
  const CoupledTdsModel model = double_integrator_pair(s.model);
  std::string gp = "set datafile separator ','\nset xlabel 'e_p'\nset ylabel 'e_v'\nplot \\\n";
  for (std::size_t i = 0; i < r.runs.size(); ++i) {
    const FanRun& run = r.runs[i];
    const std::string stem = "fan_" + run.kind + "_" + std::to_string(i % 9);
    out.write_with(stem + ".csv", [&](std::ostream& os) { write_trajectory_csv(os, run.traj); });
    out.write_with(stem + "_residual.csv",
                   [&](std::ostream& os) { write_residual_csv(os, residual_w(model, run.traj)); });
    gp += "  '" + stem + ".csv' using 2:3 with lines lc " + (run.kind == "constant" ? "1" : "2") +
          " notitle" + (i + 1 < r.runs.size() ? ", \\\n" : "\n");
  }
  gp += "pause -1\n";
  out.write("fan.gp", gp);
  out.write_with("settling.csv", [&](std::ostream& os) {
    os << "kind,e_p0,e_v0,settled,settle_time,max_abs_u,max_w_over_d\n";
    for (const FanRun& run : r.runs)
      os << run.kind << ',' << format_number(run.x0.e_p) << ',' << format_number(run.x0.e_v) << ','
         << (run.settle.settled ? 1 : 0) << ',' << format_number(run.settle.time) << ','
         << format_number(run.max_abs_u) << ',' << format_number(run.worst_w_ratio) << '\n';
  });
  return r.checks;
}

inline std::vector<CheckLine> cmd_repro(const Scenario& s, const std::string& figure, OutputDir& out,
                                        std::ostream& log = std::cerr) {
  auto lg = [&](const std::string& m) { log << m << '\n'; };
  std::vector<CheckLine> checks;
  if (figure == "fig2") checks = repro_fig2(s, out, lg);
  else if (figure == "fig3") checks = repro_fig3(s, out, lg);
  else if (figure == "fig4") checks = repro_fig4(s, out, lg);
  else if (figure == "fig5") checks = repro_fig5(s, out, lg);
  else throw ConfigError("repro: unknown figure '" + figure + "'");
  out.finish("repro " + figure, scenario_json(s), {{"checks", checks_json(checks)}});
  return checks;
}

}  // namespace tdgame
