#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include <CLI11.hpp>

#include "mpfc/bench.hpp"
#include "mpfc/io.hpp"
#include "mpfc/sim.hpp"
#include "mpfc/teleop.hpp"
#include "mpfc/terrain.hpp"

namespace fs = std::filesystem;
using namespace mpfc;

namespace {

constexpr int kOk = 0;
constexpr int kControllerFailure = 1;
constexpr int kConfigError = 2;

std::atomic<bool> g_interrupted{false};

std::string parent_dir(const std::string& file) {
  const fs::path p = fs::path(file).parent_path();
  return p.empty() ? "." : p.string();
}

SimConfig load_scenario(const std::string& file, std::optional<std::uint64_t> seed) {
  SimConfig cfg = scenario_from_json(read_json_file(file), parent_dir(file));
  if (seed) cfg.seed = *seed;
  return cfg;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  return out;
}

int cmd_run(const std::string& config, const std::string& out_dir,
            std::optional<std::uint64_t> seed, bool log_timing, bool record_problems) {
  const SimConfig cfg = load_scenario(config, seed);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw ConfigError("cannot create " + out_dir + ": " + ec.message());
  const fs::path dir(out_dir);
  std::ofstream log = open_out(dir / "log.jsonl");
  std::optional<std::ofstream> problems;
  if (record_problems) problems = open_out(dir / "problems.jsonl");
  const SimResult res = run_scenario(cfg, &log, true, log_timing, problems ? &*problems : nullptr);
  std::ofstream csv = open_out(dir / "summary.csv");
  write_csv(res, csv);
  open_out(dir / "summary.json") << summary_json(res).dump(2) << '\n';

  std::printf("steps %d  duration %.2f s  mean velocity (%.3f, %.3f) m/s\n", res.steps,
              res.duration, res.mean_velocity.x(), res.mean_velocity.y());
  std::printf("solves %d  fallbacks %d  mean solve %.3f ms  max solve %.3f ms\n", res.solves,
              res.fallbacks, 1e3 * res.mean_solve_time, 1e3 * res.max_solve_time);
  if (!res.success) {
    std::fprintf(stderr, "controller failure at t = %.3f s: %s\n", res.failure_time,
                 res.failure.c_str());
    return kControllerFailure;
  }
  return kOk;
}

int cmd_decompose(const std::string& heightmap, const std::string& config,
                  const std::string& out_file) {
  SegmentationConfig seg;
  if (!config.empty()) {
    const Json j = read_json_file(config);
    try {
      seg = (j.is_object() && j.contains("segmentation") ? j.at("segmentation") : j)
                .get<SegmentationConfig>();
    } catch (const Json::exception& e) {
      throw ConfigError(config + ": " + e.what());
    }
  }
  seg.validate();
  const HeightMap map = read_esri_ascii_file(heightmap);
  const std::vector<Foothold> footholds = decompose_terrain(map, seg);
  double total = 0.0;
  for (const Foothold& fh : footholds) total += fh.area();
  open_out(out_file) << Json{{"footholds", footholds}}.dump(1) << '\n';
  std::printf("polygons %zu\narea %.4f m^2\n", footholds.size(), total);
  return kOk;
}

int cmd_bench(const std::string& config, const std::string& replay, std::vector<int> counts,
              int instances, std::uint64_t seed, const std::string& out_file) {
  MpfcConfig mc;
  if (!config.empty()) {
    const Json j = read_json_file(config);
    try {
      if (j.contains("controller")) mc = j.at("controller").get<MpfcConfig>();
      if (counts.empty() && j.contains("counts")) counts = j.at("counts").get<std::vector<int>>();
      if (j.contains("instances")) instances = j.at("instances").get<int>();
      if (j.contains("seed")) seed = j.at("seed").get<std::uint64_t>();
    } catch (const Json::exception& e) {
      throw ConfigError(config + ": " + e.what());
    }
  }
  mc.validate();
  std::vector<BenchSample> samples;
  if (!replay.empty()) {
    std::ifstream in(replay);
    if (!in) throw ConfigError("cannot read " + replay);
    samples = run_replay_bench(read_problem_replay(in, replay), mc, counts);
  } else {
    if (counts.empty()) counts = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    if (instances < 1) throw ConfigError("bench: instances must be positive");
    samples = run_generated_bench(mc, counts, instances, seed);
  }
  const BenchReport rep = summarize(samples);
  std::fputs(format_report(rep).c_str(), stdout);
  std::printf("\nmean solve time %.3f ms over %zu instances\n", 1e3 * rep.mean, samples.size());
  if (!out_file.empty()) {
    Json rows = Json::array();
    for (const BenchRow& r : rep.rows) {
      rows.push_back({{"footholds", r.num_footholds}, {"solved", r.solved},
                      {"infeasible", r.infeasible}, {"min", r.min}, {"mean", r.mean},
                      {"p90", r.p90}, {"max", r.max}, {"mean_nodes", r.mean_nodes},
                      {"active_fraction", r.active_fraction},
                      {"median_active", r.median_active},
                      {"median_inactive", r.median_inactive}});
    }
    open_out(out_file) << Json{{"rows", rows},
                               {"mean", rep.mean},
                               {"median_active", rep.median_active},
                               {"median_inactive", rep.median_inactive}}
                              .dump(2)
                       << '\n';
  }
  return kOk;
}

int cmd_teleop(const std::string& config, std::optional<std::uint64_t> seed, TeleopOptions opt,
               double run_for) {
  const Json doc = read_json_file(config);
  SimConfig cfg = scenario_from_json(doc, parent_dir(config));
  if (seed) cfg.seed = *seed;
  std::map<std::string, std::vector<Foothold>> terrains;
  terrains["flat"] = {box_foothold(Vec2(-5, -5), Vec2(50, 5), 0.0)};
  terrains["stairs"] = stair_footholds(1.0, 0.15, 3, 3, 2.0, 2.0, 3.0, 0.05);
  if (doc.contains("terrains")) {
    for (const auto& [name, t] : doc.at("terrains").items()) {
      terrains[name] = terrain_from_json(t, parent_dir(config));
    }
  }
  TeleopServer server(std::move(cfg), std::move(terrains), opt);
  std::printf("teleop listening on http://%s:%u/ (websocket /ws)\n", opt.address.c_str(),
              server.port());
  std::fflush(stdout);
  std::signal(SIGINT, [](int) { g_interrupted.store(true); });
  std::signal(SIGTERM, [](int) { g_interrupted.store(true); });
  server.start();
  const auto start = std::chrono::steady_clock::now();
  while (!g_interrupted.load()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    if (run_for > 0 && std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                               .count() >= run_for) {
      break;
    }
  }
  server.stop();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model predictive footstep control: simulation, terrain and benchmarks"};
  app.require_subcommand(1);

  std::string config, out, heightmap, replay, static_dir = "ui", address = "127.0.0.1";
  std::optional<std::uint64_t> seed;
  std::uint64_t bench_seed = 1;
  std::vector<int> counts;
  int instances = 200;
  bool log_timing = false, record_problems = false;
  unsigned short port = 8080;
  double speed = 1.0, run_for = 0.0;

  auto* run = app.add_subcommand("run", "Run a scenario and write logs");
  run->add_option("--config", config, "Scenario JSON")->required();
  run->add_option("--out", out, "Output directory")->required();
  run->add_option("--seed", seed, "Override the scenario seed");
  run->add_flag("--log-timing", log_timing, "Include solve times in log.jsonl");
  run->add_flag("--record-problems", record_problems, "Write problems.jsonl for bench --replay");

  auto* dec = app.add_subcommand("decompose", "Heightmap to convex footholds");
  dec->add_option("heightmap,--heightmap", heightmap, "ESRI ASCII grid")->required();
  dec->add_option("--config", config, "Segmentation JSON");
  dec->add_option("--out", out, "Foothold JSON")->required();

  auto* bench = app.add_subcommand("bench", "Solve-time benchmark");
  bench->add_option("--config", config, "Generator spec JSON");
  bench->add_option("--replay", replay, "problems.jsonl from run --record-problems");
  bench->add_option("--counts", counts, "Foothold counts")->delimiter(',');
  bench->add_option("--instances", instances, "Instances per count");
  bench->add_option("--seed", bench_seed, "Generator seed");
  bench->add_option("--out", out, "Report JSON");

  auto* tele = app.add_subcommand("teleop", "Websocket teleoperation server");
  tele->add_option("--config", config, "Scenario JSON")->required();
  tele->add_option("--port", port, "TCP port (0 picks one)");
  tele->add_option("--address", address, "Bind address");
  tele->add_option("--static", static_dir, "UI asset directory");
  tele->add_option("--seed", seed, "Override the scenario seed");
  tele->add_option("--speed", speed, "Simulated seconds per wall second");
  tele->add_option("--for", run_for, "Exit after this many wall seconds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) return cmd_run(config, out, seed, log_timing, record_problems);
    if (*dec) return cmd_decompose(heightmap, config, out);
    if (*bench) return cmd_bench(config, replay, counts, instances, bench_seed, out);
    if (*tele) {
      TeleopOptions opt;
      opt.address = address;
      opt.port = port;
      opt.static_dir = static_dir;
      opt.speed = speed;
      return cmd_teleop(config, seed, opt, run_for);
    }
  } catch (const BindError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigError;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigError;
  } catch (const ControllerFailure& e) {
    std::fprintf(stderr, "controller failure: %s\n", e.what());
    return kControllerFailure;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigError;
  }
  return kOk;
}
