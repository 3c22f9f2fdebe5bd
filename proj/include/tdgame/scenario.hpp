#pragma once

// Flat key-value scenario files (INI sections) and the shipped presets.
//
//   [model]    k, b, u_max, L_w, w_rate_max, adversary_w, adversary_delay
//   [delay]    kind, tstar, omega, phase, t_on
//   [grid]     n_ep, n_ev, n_d, ep_max, ev_max
//   [solve]    horizon, cfl, slice_stride
//   [simulate] horizon, dt, dt_ctrl, control_on, e_p0, e_v0
//   [reach]    threshold, value_file
//   [verify]   samples, seed, which
//
// Unknown keys are rejected so typos do not silently fall back to defaults.

#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "tdgame/dde_sim.hpp"
#include "tdgame/errors.hpp"
#include "tdgame/hji.hpp"
#include "tdgame/models.hpp"

namespace tdgame {

struct Scenario {
  std::string name = "custom";

  CouplingParams model;
  double L_w = 5.0;
  double w_rate_max = 20.0;
  bool adversary_w = true;
  bool adversary_delay = true;

  std::string delay_kind = "constant";  // none | constant | sinusoidal
  double tstar = 0.25;
  double omega = 0.5;
  double phase = 0.0;
  double delay_on = 0.0;

  int n_ep = 101;
  int n_ev = 101;
  int n_d = 21;
  double ep_max = 2.4;
  double ev_max = 5.0;

  double solve_horizon = 10.0;
  double cfl = 0.5;
  int slice_stride = 10;

  double sim_horizon = 60.0;
  double dt = 0.01;
  double dt_ctrl = 0.05;
  double control_on = 0.0;
  double e_p0 = 1.0;
  double e_v0 = 0.0;

  double threshold = 1.5;
  std::string value_file;

  int samples = 100;
  std::uint64_t seed = 1;
  std::string which = "all";

  HamiltonianSpec hamiltonian_spec() const {
    HamiltonianSpec s;
    s.model = model;
    s.d_max = tstar;
    s.L_w = L_w;
    s.w_rate_max = w_rate_max;
    s.adversary_w = adversary_w;
    s.adversary_delay = adversary_delay;
    return s;
  }

  Grid grid() const {
    return Grid::make({-ep_max, ep_max, n_ep}, {-ev_max, ev_max, n_ev}, {0.0, tstar, n_d});
  }

  DelaySignal delay_signal() const {
    if (delay_kind == "none") return DelaySignal::none();
    if (delay_kind == "constant") return DelaySignal::constant(tstar, delay_on);
    if (delay_kind == "sinusoidal") return DelaySignal::sinusoidal(tstar, omega, phase, delay_on);
    throw ConfigError("scenario: unknown delay kind '" + delay_kind + "'");
  }

  void validate() const {
    model.validate();
    hamiltonian_spec().validate();
    if (!(tstar >= 0.0)) throw ConfigError("scenario: tstar must be >= 0");
    if (n_ep < 3 || n_ev < 3 || n_d < 3) throw ConfigError("scenario: grid needs >= 3 nodes per axis");
    if (!(ep_max > 0.0) || !(ev_max > 0.0)) throw ConfigError("scenario: grid extents must be positive");
    if (!(solve_horizon > 0.0) || !(sim_horizon > 0.0)) throw ConfigError("scenario: horizons must be positive");
    if (!(dt > 0.0)) throw ConfigError("scenario: dt must be positive");
    if (!(cfl > 0.0)) throw ConfigError("scenario: cfl must be positive");
    if (samples < 1) throw ConfigError("scenario: samples must be >= 1");
    delay_signal();
  }
};

namespace detail {

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ConfigError("scenario: '" + key + "' expects a number, got '" + v + "'");
  }
  if (used != v.size()) throw ConfigError("scenario: trailing characters in '" + key + "'");
  return out;
}

inline int parse_int(const std::string& key, const std::string& v) {
  const double d = parse_double(key, v);
  if (d != static_cast<int>(d)) throw ConfigError("scenario: '" + key + "' expects an integer");
  return static_cast<int>(d);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("scenario: '" + key + "' expects a boolean");
}

using Setter = std::function<void(Scenario&, const std::string& key, const std::string& v)>;

inline const std::map<std::string, Setter>& scenario_setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto num = [&t](const std::string& k, double Scenario::*m) {
      t[k] = [m](Scenario& s, const std::string& key, const std::string& v) { s.*m = parse_double(key, v); };
    };
    auto integer = [&t](const std::string& k, int Scenario::*m) {
      t[k] = [m](Scenario& s, const std::string& key, const std::string& v) { s.*m = parse_int(key, v); };
    };
    auto flag = [&t](const std::string& k, bool Scenario::*m) {
      t[k] = [m](Scenario& s, const std::string& key, const std::string& v) { s.*m = parse_bool(key, v); };
    };
    auto text = [&t](const std::string& k, std::string Scenario::*m) {
      t[k] = [m](Scenario& s, const std::string&, const std::string& v) { s.*m = v; };
    };
    t["model.k"] = [](Scenario& s, const std::string& key, const std::string& v) { s.model.k = parse_double(key, v); };
    t["model.b"] = [](Scenario& s, const std::string& key, const std::string& v) { s.model.b = parse_double(key, v); };
    t["model.u_max"] = [](Scenario& s, const std::string& key, const std::string& v) { s.model.u_max = parse_double(key, v); };
    num("model.L_w", &Scenario::L_w);
    num("model.w_rate_max", &Scenario::w_rate_max);
    flag("model.adversary_w", &Scenario::adversary_w);
    flag("model.adversary_delay", &Scenario::adversary_delay);
    text("delay.kind", &Scenario::delay_kind);
    num("delay.tstar", &Scenario::tstar);
    num("delay.omega", &Scenario::omega);
    num("delay.phase", &Scenario::phase);
    num("delay.t_on", &Scenario::delay_on);
    integer("grid.n_ep", &Scenario::n_ep);
    integer("grid.n_ev", &Scenario::n_ev);
    integer("grid.n_d", &Scenario::n_d);
    num("grid.ep_max", &Scenario::ep_max);
    num("grid.ev_max", &Scenario::ev_max);
    num("solve.horizon", &Scenario::solve_horizon);
    num("solve.cfl", &Scenario::cfl);
    integer("solve.slice_stride", &Scenario::slice_stride);
    num("simulate.horizon", &Scenario::sim_horizon);
    num("simulate.dt", &Scenario::dt);
    num("simulate.dt_ctrl", &Scenario::dt_ctrl);
    num("simulate.control_on", &Scenario::control_on);
    num("simulate.e_p0", &Scenario::e_p0);
    num("simulate.e_v0", &Scenario::e_v0);
    num("reach.threshold", &Scenario::threshold);
    text("reach.value_file", &Scenario::value_file);
    integer("verify.samples", &Scenario::samples);
    text("verify.which", &Scenario::which);
    t["verify.seed"] = [](Scenario& s, const std::string& key, const std::string& v) {
      try {
        s.seed = std::stoull(v);
      } catch (const std::exception&) {
        throw ConfigError("scenario: '" + key + "' expects an unsigned integer");
      }
    };
    t["scenario.name"] = [](Scenario& s, const std::string&, const std::string& v) { s.name = v; };
    return t;
  }();
  return table;
}

}  // namespace detail

inline void apply_setting(Scenario& s, const std::string& key, const std::string& value) {
  const auto& table = detail::scenario_setters();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("scenario: unknown key '" + key + "'");
  it->second(s, key, value);
}

// Presets mirror the figure setups; a file may start from one with
// `preset = figN` in [scenario].
inline Scenario preset(const std::string& name) {
  Scenario s;
  s.name = name;
  if (name == "smoke") {
    s.n_ep = s.n_ev = s.n_d = 11;
    s.solve_horizon = 1.0;
    s.sim_horizon = 5.0;
    s.samples = 6;
  } else if (name == "fig2") {
    s.model = {0.06, 0.15, 0.0};
    s.delay_kind = "sinusoidal";
    s.sim_horizon = 300.0;
  } else if (name == "fig3") {
    s.model = {1.0, 0.15, 0.4};
    s.tstar = 0.25;
    s.adversary_w = false;  // no truncation bound is given for this setup
    s.delay_kind = "constant";
    s.delay_on = 25.0;
    s.control_on = 45.0;
    s.sim_horizon = 100.0;
  } else if (name == "fig4") {
    s.model = {1.0, 0.15, 0.4};
    s.tstar = 0.5;
    s.adversary_w = false;
    s.solve_horizon = 10.0;
  } else if (name == "fig5") {
    s.model = {1.0, 0.0, 0.4};
    s.tstar = 0.24;
    s.L_w = 5.0;
    s.delay_kind = "constant";
    s.sim_horizon = 60.0;
  } else if (name == "theorem2") {
    s.model = {1.0, 0.0, 0.4};
    s.tstar = 0.24;
    s.L_w = 5.0;
    s.solve_horizon = 5.0;
  } else if (name != "custom") {
    throw ConfigError("unknown preset '" + name + "'");
  }
  return s;
}

inline Scenario load_scenario(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("scenario: ") + e.message() + " at line " +
                      std::to_string(e.line()));
  }
  Scenario s;
  if (auto sec = tree.get_child_optional("scenario")) {
    if (auto p = sec->get_optional<std::string>("preset")) s = preset(*p);
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError("scenario: key '" + section + "' must live inside a section");
    for (const auto& [key, node] : body) {
      if (section == "scenario" && key == "preset") continue;
      apply_setting(s, section + "." + key, node.get_value<std::string>());
    }
  }
  s.validate();
  return s;
}

inline Scenario load_scenario_text(const std::string& text) {
  std::istringstream in(text);
  return load_scenario(in);
}

inline nlohmann::ordered_json scenario_json(const Scenario& s) {
  nlohmann::ordered_json j;
  j["name"] = s.name;
  j["model"] = {{"k", s.model.k},
                {"b", s.model.b},
                {"u_max", s.model.u_max},
                {"L_w", s.L_w},
                {"w_rate_max", s.w_rate_max},
                {"adversary_w", s.adversary_w},
                {"adversary_delay", s.adversary_delay}};
  j["delay"] = {{"kind", s.delay_kind},
                {"tstar", s.tstar},
                {"omega", s.omega},
                {"phase", s.phase},
                {"t_on", s.delay_on}};
  j["grid"] = {{"n_ep", s.n_ep}, {"n_ev", s.n_ev}, {"n_d", s.n_d}, {"ep_max", s.ep_max}, {"ev_max", s.ev_max}};
  j["solve"] = {{"horizon", s.solve_horizon}, {"cfl", s.cfl}, {"slice_stride", s.slice_stride}};
  j["simulate"] = {{"horizon", s.sim_horizon},
                   {"dt", s.dt},
                   {"dt_ctrl", s.dt_ctrl},
                   {"control_on", s.control_on},
                   {"e_p0", s.e_p0},
                   {"e_v0", s.e_v0}};
  j["reach"] = {{"threshold", s.threshold}, {"value_file", s.value_file}};
  j["verify"] = {{"samples", s.samples}, {"seed", s.seed}, {"which", s.which}};
  return j;
}

}  // namespace tdgame
