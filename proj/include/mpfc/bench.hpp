#pragma once

#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "mpfc/mpfc.hpp"

namespace mpfc {

/// Random walking instance: a walkway around the nominal footsteps cut
/// crosswise into num_footholds slabs of random length and height separated
/// by small gaps. The state is perturbed off the reference.
MpfcProblem generate_bench_problem(std::mt19937_64& rng, const MpfcConfig& cfg,
                                   int num_footholds);

/// True when some planned footstep lies on an edge of its foothold.
bool boundary_active(const MpfcProblem& prob, const MpfcSolution& sol,
                     double tol = 1e-6);

struct BenchSample {
  int num_footholds = 0;
  bool feasible = false;
  bool boundary_active = false;
  double wall_time = 0.0;  // s
  int nodes = 0;
};

struct BenchRow {
  int num_footholds = 0;
  int solved = 0;
  int infeasible = 0;
  double min = 0, mean = 0, p90 = 0, max = 0;  // s
  double mean_nodes = 0;
  double active_fraction = 0;
  double median_active = 0, median_inactive = 0;  // s, NaN when empty
};

struct BenchReport {
  std::vector<BenchRow> rows;
  double median_active = 0, median_inactive = 0;
  double mean = 0;  // over every solved instance
};

BenchSample bench_one(const MpfcProblem& prob, const MpfcConfig& cfg);

BenchReport summarize(const std::vector<BenchSample>& samples);

/// Generates instances_per_count problems for every count and solves them.
std::vector<BenchSample> run_generated_bench(const MpfcConfig& cfg,
                                             const std::vector<int>& counts,
                                             int instances_per_count,
                                             unsigned long seed);

/// One MpfcProblem JSON document per line; blank lines are skipped.
std::vector<MpfcProblem> read_problem_replay(std::istream& in,
                                             const std::string& source = "<replay>");

/// Solves the recorded problems whose foothold count is listed in counts
/// (all of them when counts is empty).
std::vector<BenchSample> run_replay_bench(const std::vector<MpfcProblem>& problems,
                                          const MpfcConfig& cfg, const std::vector<int>& counts);

/// Two tables: solve time per foothold count, and boundary-active versus
/// interior solves.
std::string format_report(const BenchReport& report);

}  // namespace mpfc
