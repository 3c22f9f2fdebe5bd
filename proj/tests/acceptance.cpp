// End-to-end acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance <out_dir> [--expect-fail N ...]
//
// Exit status is 0 when every failing criterion was listed with
// --expect-fail, 1 otherwise. FAIL lines are printed either way.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "tdgame/commands.hpp"

using namespace tdgame;
namespace fs = std::filesystem;

namespace {

struct Criterion {
  int id;
  std::string name;
  std::vector<CheckLine> checks;
  double seconds = 0.0;
  bool pass() const { return !checks.empty() && all_pass(checks); }
};

std::string join_details(const std::vector<CheckLine>& checks) {
  std::string s;
  for (const CheckLine& c : checks) {
    if (!s.empty()) s += "; ";
    s += (c.pass ? "" : "[x] ") + c.detail;
  }
  return s;
}

std::map<std::string, std::string> csv_files(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".csv") continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    out[e.path().filename().string()] = os.str();
  }
  return out;
}

template <class Fn>
Criterion timed(int id, std::string name, Fn fn) {
  const auto t0 = std::chrono::steady_clock::now();
  Criterion c{id, std::move(name), fn()};
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance <out_dir> [--expect-fail N ...]\n";
    return 2;
  }
  const fs::path root = argv[1];
  std::set<int> expected_fail;
  for (int i = 2; i < argc; ++i) {
    if (std::string(argv[i]) == "--expect-fail" && i + 1 < argc) expected_fail.insert(std::stoi(argv[++i]));
  }
  fs::remove_all(root);
  std::ostringstream quiet;
  Log log = [](const std::string& m) { std::cerr << "  " << m << '\n'; };

  fs::create_directories(root);
  std::ofstream summary(root / "summary.txt");
  std::vector<Criterion> results;
  auto report = [&](const Criterion& c) {
    std::ostringstream line;
    line << (c.pass() ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): "
         << join_details(c.checks) << fmt(" [%.1fs]", c.seconds) << '\n';
    std::cout << line.str() << std::flush;
    summary << line.str() << std::flush;
    results.push_back(c);
  };

  report(timed(1, "dde method-of-steps oracle", [] { return run_dde_oracle().checks; }));
  report(timed(2, "three-phase delay run", [&] { return run_fig3(preset("fig3"), log).checks; }));
  report(timed(3, "safe-set slices", [&] { return run_fig4(preset("fig4"), log).checks; }));

  // The first fig5 repro feeds criteria 4, 5 (residual bound) and 9.
  std::vector<CheckLine> fan;
  const Criterion c4 = timed(4, "controlled fan settling", [&] {
    OutputDir out(root / "fig5_a");
    fan = cmd_repro(preset("fig5"), "fig5", out, quiet);
    return std::vector<CheckLine>(fan.begin(), fan.begin() + 3);
  });
  report(c4);
  report(timed(5, "residual scaling and bound", [&] {
    std::vector<CheckLine> c = run_lemma1().checks;
    c.push_back(fan.at(3));
    return c;
  }));
  report(timed(6, "value sandwich and gap", [&] { return run_theorem2(preset("theorem2"), log).checks; }));
  report(timed(7, "certificate consistency sweep", [&] { return run_fig2(preset("fig2"), log).checks; }));
  report(timed(8, "hamiltonian and advection oracle", [] { return run_hamiltonian_oracle().checks; }));
  report(timed(9, "repro determinism", [&] {
    OutputDir out(root / "fig5_b");
    cmd_repro(preset("fig5"), "fig5", out, quiet);
    const auto a = csv_files(root / "fig5_a"), b = csv_files(root / "fig5_b");
    std::size_t differing = 0;
    for (const auto& [name, bytes] : a) {
      const auto it = b.find(name);
      if (it == b.end() || it->second != bytes) ++differing;
    }
    const bool same = !a.empty() && a.size() == b.size() && differing == 0;
    return std::vector<CheckLine>{
        {"fig5 csv outputs byte-identical", same,
         fmtn("%zu csv files, %zu differ", a.size(), differing + (a.size() != b.size() ? 1 : 0))}};
  }));

  int unexpected = 0;
  for (const Criterion& c : results) {
    if (c.pass()) continue;
    if (expected_fail.count(c.id)) {
      std::cout << "note: criterion " << c.id << " failure is a known result\n";
      summary << "note: criterion " << c.id << " failure is a known result\n";
    } else {
      ++unexpected;
    }
  }
  std::cout << (unexpected == 0 ? "acceptance: no unexpected failures" : "acceptance: unexpected failures")
            << '\n';
  return unexpected == 0 ? 0 : 1;
}
