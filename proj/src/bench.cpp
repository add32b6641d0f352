#include "mpfc/bench.hpp"

#include "mpfc/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>

namespace mpfc {

namespace {

Foothold slab(double x0, double x1, double y0, double y1, double z) {
  return lift_to_foothold({Vec2(x0, y0), Vec2(x1, y0), Vec2(x1, y1), Vec2(x0, y1)},
                          Plane{0.0, 0.0, z});
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

MpfcProblem generate_bench_problem(std::mt19937_64& rng, const MpfcConfig& cfg,
                                   int num_footholds) {
  if (num_footholds < 1) throw ConfigError("bench: need at least one foothold");
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

  GaitCommand cmd;
  cmd.velocity = Vec2(uni(0.1, 0.75), uni(-0.2, 0.2));
  cmd.stance_width = uni(0.15, 0.25);
  const Stance stance = u01(rng) < 0.5 ? Stance::kLeft : Stance::kRight;
  const double t_rem = uni(0.02, cfg.timing.single_stance);
  const Vec3 p0 = Vec3::Zero();
  const ReferenceTrajectory ref = reference_trajectory(cmd, stance, p0, t_rem, cfg);

  double xmax = 0, ymin = 0, ymax = 0;
  for (const Vec3& p : ref.p) {
    xmax = std::max(xmax, p.x());
    ymin = std::min(ymin, p.y());
    ymax = std::max(ymax, p.y());
  }
  const double x0 = -0.2, x1 = xmax + 0.35, y0 = ymin - 0.3, y1 = ymax + 0.3;
  const double gap = 0.05;

  // Random slab lengths, each at least a tenth of the mean.
  std::vector<double> len(num_footholds);
  for (double& l : len) l = uni(0.1, 1.0);
  double total = 0;
  for (double l : len) total += l;
  const double usable = (x1 - x0) - gap * (num_footholds - 1);
  std::vector<Foothold> fhs;
  double x = x0;
  for (int i = 0; i < num_footholds; ++i) {
    const double w = usable * len[i] / total;
    fhs.push_back(slab(x, x + w, y0, y1, i == 0 ? 0.0 : uni(-0.05, 0.1)));
    x += w + gap;
  }
  // The stance foot stands on the first slab.
  const double first_end = x0 + usable * len[0] / total;
  Vec3 p0_on = p0;
  if (first_end < 0.05) p0_on.x() = x0 + 0.5 * (first_end - x0);

  AlipState x_start = reference_trajectory(cmd, stance, p0_on, t_rem, cfg).x[0];
  x_start += Vec4(uni(-0.03, 0.03), uni(-0.02, 0.02), uni(-1.5, 1.5), uni(-2.0, 2.0));
  return make_problem(x_start, p0_on, stance, std::move(fhs), cmd, t_rem, cfg);
}

bool boundary_active(const MpfcProblem& prob, const MpfcSolution& sol, double tol) {
  for (size_t n = 1; n < sol.footsteps.size(); ++n) {
    const int a = sol.assignment[n];
    if (a < 0) continue;
    const Foothold& fh = prob.footholds[static_cast<size_t>(a)];
    if ((fh.F * sol.footsteps[n] - fh.c).maxCoeff() >= -tol) return true;
  }
  return false;
}

BenchSample bench_one(const MpfcProblem& prob, const MpfcConfig& cfg) {
  BenchSample s;
  s.num_footholds = static_cast<int>(prob.footholds.size());
  try {
    const MpfcSolution sol = solve_mpfc(prob, cfg);
    s.feasible = true;
    s.wall_time = sol.stats.wall_time;
    s.nodes = sol.stats.nodes_explored;
    s.boundary_active = boundary_active(prob, sol);
  } catch (const AllNodesInfeasible&) {
  }
  return s;
}

std::vector<BenchSample> run_generated_bench(const MpfcConfig& cfg,
                                             const std::vector<int>& counts,
                                             int instances_per_count,
                                             unsigned long seed) {
  std::vector<std::vector<MpfcProblem>> problems;
  for (int count : counts) {
    std::mt19937_64 rng(seed + 7919ul * static_cast<unsigned long>(count));
    auto& batch = problems.emplace_back();
    for (int i = 0; i < instances_per_count; ++i) {
      batch.push_back(generate_bench_problem(rng, cfg, count));
    }
  }
  // Timed round-robin across counts so load spikes are shared.
  const size_t k = counts.size(), n = static_cast<size_t>(instances_per_count);
  std::vector<BenchSample> out(k * n);
  for (size_t i = 0; i < n; ++i) {
    for (size_t c = 0; c < k; ++c) out[c * n + i] = bench_one(problems[c][i], cfg);
  }
  return out;
}

std::vector<MpfcProblem> read_problem_replay(std::istream& in, const std::string& source) {
  std::vector<MpfcProblem> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const Json j = parse_json(line, source + ":" + std::to_string(n));
    try {
      out.push_back(j.get<MpfcProblem>());
    } catch (const Json::exception& e) {
      throw ConfigError(source + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

std::vector<BenchSample> run_replay_bench(const std::vector<MpfcProblem>& problems,
                                          const MpfcConfig& cfg, const std::vector<int>& counts) {
  std::vector<BenchSample> out;
  for (const MpfcProblem& p : problems) {
    const int count = static_cast<int>(p.footholds.size());
    if (!counts.empty() && std::find(counts.begin(), counts.end(), count) == counts.end()) continue;
    out.push_back(bench_one(p, cfg));
  }
  return out;
}

BenchReport summarize(const std::vector<BenchSample>& samples) {
  std::map<int, std::vector<const BenchSample*>> by_count;
  for (const auto& s : samples) by_count[s.num_footholds].push_back(&s);
  BenchReport rep;
  std::vector<double> all_active, all_inactive;
  double sum = 0;
  int solved = 0;
  for (const auto& [count, group] : by_count) {
    BenchRow row;
    row.num_footholds = count;
    std::vector<double> t, active, inactive;
    double nodes = 0;
    for (const BenchSample* s : group) {
      if (!s->feasible) {
        ++row.infeasible;
        continue;
      }
      t.push_back(s->wall_time);
      nodes += s->nodes;
      (s->boundary_active ? active : inactive).push_back(s->wall_time);
    }
    row.solved = static_cast<int>(t.size());
    if (!t.empty()) {
      double m = 0;
      for (double v : t) m += v;
      sum += m;
      solved += row.solved;
      row.mean = m / static_cast<double>(t.size());
      row.min = *std::min_element(t.begin(), t.end());
      row.max = *std::max_element(t.begin(), t.end());
      row.p90 = quantile(t, 0.9);
      row.mean_nodes = nodes / static_cast<double>(t.size());
      row.active_fraction = static_cast<double>(active.size()) / static_cast<double>(t.size());
    }
    row.median_active = quantile(active, 0.5);
    row.median_inactive = quantile(inactive, 0.5);
    all_active.insert(all_active.end(), active.begin(), active.end());
    all_inactive.insert(all_inactive.end(), inactive.begin(), inactive.end());
    rep.rows.push_back(row);
  }
  rep.median_active = quantile(all_active, 0.5);
  rep.median_inactive = quantile(all_inactive, 0.5);
  rep.mean = solved ? sum / solved : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

std::string format_report(const BenchReport& rep) {
  std::string out;
  char line[256];
  out += "solve time by foothold count (ms)\n";
  std::snprintf(line, sizeof line, "%9s %7s %6s %8s %8s %8s %8s %7s\n", "footholds", "solved",
                "infeas", "min", "mean", "p90", "max", "nodes");
  out += line;
  for (const auto& r : rep.rows) {
    std::snprintf(line, sizeof line, "%9d %7d %6d %8.3f %8.3f %8.3f %8.3f %7.2f\n",
                  r.num_footholds, r.solved, r.infeasible, 1e3 * r.min, 1e3 * r.mean,
                  1e3 * r.p90, 1e3 * r.max, r.mean_nodes);
    out += line;
  }
  out += "\nboundary-active solves\n";
  std::snprintf(line, sizeof line, "%9s %8s %14s %16s\n", "footholds", "active",
                "median active", "median interior");
  out += line;
  for (const auto& r : rep.rows) {
    std::snprintf(line, sizeof line, "%9d %7.1f%% %14.3f %16.3f\n", r.num_footholds,
                  100.0 * r.active_fraction, 1e3 * r.median_active, 1e3 * r.median_inactive);
    out += line;
  }
  std::snprintf(line, sizeof line, "%9s %8s %14.3f %16.3f\n", "all", "", 1e3 * rep.median_active,
                1e3 * rep.median_inactive);
  out += line;
  return out;
}

}  // namespace mpfc
