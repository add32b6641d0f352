#include "mpfc/io.hpp"

#include <fstream>
#include <sstream>

namespace mpfc {

namespace {

template <typename T>
void get(const Json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

void require_object(const Json& j, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + ": expected an object");
}

}  // namespace

Json vec_to_json(const VecX& v) {
  Json j = Json::array();
  for (double x : v) j.push_back(x);
  return j;
}

VecX vec_from_json(const Json& j, Eigen::Index expected) {
  if (!j.is_array()) throw ConfigError("expected an array of numbers");
  if (expected >= 0 && static_cast<Eigen::Index>(j.size()) != expected) {
    throw ConfigError("expected " + std::to_string(expected) + " numbers, got " +
                      std::to_string(j.size()));
  }
  VecX v(static_cast<Eigen::Index>(j.size()));
  for (size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

Json mat_to_json(const MatX& m) {
  Json j = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) j.push_back(vec_to_json(m.row(r).transpose()));
  return j;
}

MatX mat_from_json(const Json& j) {
  if (!j.is_array()) throw ConfigError("expected an array of rows");
  if (j.empty()) return MatX(0, 0);
  const Eigen::Index cols = static_cast<Eigen::Index>(j[0].size());
  MatX m(static_cast<Eigen::Index>(j.size()), cols);
  for (size_t r = 0; r < j.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = vec_from_json(j[r], cols);
  return m;
}

void to_json(Json& j, const AlipParams& v) {
  j = {{"mass", v.mass}, {"com_height", v.com_height}, {"gravity", v.gravity}};
}
void from_json(const Json& j, AlipParams& v) {
  require_object(j, "params");
  get(j, "mass", v.mass);
  get(j, "com_height", v.com_height);
  get(j, "gravity", v.gravity);
}

void to_json(Json& j, const GaitTiming& v) {
  j = {{"single_stance", v.single_stance}, {"double_stance", v.double_stance},
       {"knots", v.knots}, {"horizon", v.horizon}};
}
void from_json(const Json& j, GaitTiming& v) {
  require_object(j, "timing");
  get(j, "single_stance", v.single_stance);
  get(j, "double_stance", v.double_stance);
  get(j, "knots", v.knots);
  get(j, "horizon", v.horizon);
}

void to_json(Json& j, Stance v) { j = v == Stance::kLeft ? "left" : "right"; }
void from_json(const Json& j, Stance& v) {
  const std::string s = j.get<std::string>();
  if (s == "left") {
    v = Stance::kLeft;
  } else if (s == "right") {
    v = Stance::kRight;
  } else {
    throw ConfigError("stance must be \"left\" or \"right\", got \"" + s + "\"");
  }
}

void to_json(Json& j, const GaitCommand& v) {
  j = {{"velocity", v.velocity}, {"stance_width", v.stance_width}, {"stance", v.stance}};
}
void from_json(const Json& j, GaitCommand& v) {
  require_object(j, "command");
  get(j, "velocity", v.velocity);
  get(j, "stance_width", v.stance_width);
  get(j, "stance", v.stance);
}

void to_json(Json& j, const Foothold& v) {
  j = {{"F", mat_to_json(v.F)}, {"c", vec_to_json(v.c)}, {"f", v.f}, {"b", v.b},
       {"verts", v.verts}};
}
void from_json(const Json& j, Foothold& v) {
  require_object(j, "foothold");
  if (!j.contains("F") && j.contains("polygon")) {
    // Short form: planar polygon plus z = kx x + ky y + z0.
    Ring ring;
    for (const auto& p : j.at("polygon")) ring.push_back(vec_from_json(p, 2));
    Plane plane;
    if (j.contains("plane")) {
      const Vec3 k = vec_from_json(j.at("plane"), 3);
      plane = Plane{k(0), k(1), k(2)};
    } else if (j.contains("height")) {
      plane.z0 = j.at("height").get<double>();
    }
    v = lift_to_foothold(ring, plane);
    return;
  }
  v.F = mat_from_json(j.at("F"));
  v.c = vec_from_json(j.at("c"), v.F.rows());
  if (v.F.rows() && v.F.cols() != 3) throw ConfigError("foothold: F must have 3 columns");
  v.f = j.at("f").get<Vec3>();
  v.b = j.at("b").get<double>();
  v.verts.clear();
  get(j, "verts", v.verts);
}

std::vector<Foothold> read_footholds(const Json& j) {
  const Json& list = j.is_object() && j.contains("footholds") ? j.at("footholds") : j;
  if (!list.is_array()) throw ConfigError("footholds: expected an array");
  std::vector<Foothold> out;
  for (const auto& item : list) out.push_back(item.get<Foothold>());
  for (const auto& fh : out) fh.validate();
  return out;
}

void to_json(Json& j, const SegmentationConfig& v) {
  j = {{"inclination_max", v.inclination_max}, {"roughness_max", v.roughness_max},
       {"neighborhood_radius", v.neighborhood_radius}, {"margin", v.margin},
       {"min_area", v.min_area}, {"acd_tau", v.acd_tau}, {"blur_sigma", v.blur_sigma},
       {"erosion_radius", v.erosion_radius}, {"median_radius", v.median_radius}};
}
void from_json(const Json& j, SegmentationConfig& v) {
  require_object(j, "segmentation");
  get(j, "inclination_max", v.inclination_max);
  get(j, "roughness_max", v.roughness_max);
  get(j, "neighborhood_radius", v.neighborhood_radius);
  get(j, "margin", v.margin);
  get(j, "min_area", v.min_area);
  get(j, "acd_tau", v.acd_tau);
  get(j, "blur_sigma", v.blur_sigma);
  get(j, "erosion_radius", v.erosion_radius);
  get(j, "median_radius", v.median_radius);
}

void to_json(Json& j, const MpfcConfig& v) {
  j = {{"params", v.params},
       {"timing", v.timing},
       {"Q", mat_to_json(v.Q)},
       {"R", v.R},
       {"Q_f", mat_to_json(v.Q_f)},
       {"u_max", v.u_max},
       {"com_max", v.com_max},
       {"crossover_margin", v.crossover_margin},
       {"big_m", v.big_m},
       {"rate_limit_halfwidth", v.rate_limit_halfwidth},
       {"rate_limit_window", v.rate_limit_window},
       {"bound_tol", v.bound_tol},
       {"qp", {{"tol_feas", v.qp.tol_feas}, {"tol_opt", v.qp.tol_opt},
               {"max_iter", v.qp.max_iter}, {"polish", v.qp.polish}}}};
}
void from_json(const Json& j, MpfcConfig& v) {
  require_object(j, "controller");
  get(j, "params", v.params);
  get(j, "timing", v.timing);
  // Weights may be given as a diagonal.
  auto weight = [&](const char* key, Mat4& W) {
    if (!j.contains(key)) return;
    const Json& w = j.at(key);
    if (w.is_array() && !w.empty() && w[0].is_number()) {
      W = vec_from_json(w, 4).asDiagonal();
    } else {
      W = w.get<Mat4>();
    }
  };
  weight("Q", v.Q);
  weight("Q_f", v.Q_f);
  get(j, "R", v.R);
  get(j, "u_max", v.u_max);
  get(j, "com_max", v.com_max);
  get(j, "crossover_margin", v.crossover_margin);
  get(j, "big_m", v.big_m);
  get(j, "rate_limit_halfwidth", v.rate_limit_halfwidth);
  get(j, "rate_limit_window", v.rate_limit_window);
  get(j, "bound_tol", v.bound_tol);
  if (j.contains("qp")) {
    const Json& q = j.at("qp");
    get(q, "tol_feas", v.qp.tol_feas);
    get(q, "tol_opt", v.qp.tol_opt);
    get(q, "max_iter", v.qp.max_iter);
    get(q, "polish", v.qp.polish);
  }
}

void to_json(Json& j, const SolveStats& v) {
  j = {{"nodes_explored", v.nodes_explored}, {"qp_solves", v.qp_solves},
       {"qp_max_iter", v.qp_max_iter}, {"wall_time", v.wall_time},
       {"relaxation_was_integral", v.relaxation_was_integral}};
}
void from_json(const Json& j, SolveStats& v) {
  get(j, "nodes_explored", v.nodes_explored);
  get(j, "qp_solves", v.qp_solves);
  get(j, "qp_max_iter", v.qp_max_iter);
  get(j, "wall_time", v.wall_time);
  get(j, "relaxation_was_integral", v.relaxation_was_integral);
}

void to_json(Json& j, const MpfcSolution& v) {
  j = {{"horizon", v.horizon},     {"knots", v.knots},
       {"stance", v.stance},       {"time_remaining", v.time_remaining},
       {"x_traj", v.x_traj},       {"u_traj", v.u_traj},
       {"footsteps", v.footsteps}, {"assignment", v.assignment},
       {"objective", v.objective}, {"stats", v.stats}};
}
void from_json(const Json& j, MpfcSolution& v) {
  v.horizon = j.at("horizon").get<int>();
  v.knots = j.at("knots").get<int>();
  v.stance = j.at("stance").get<Stance>();
  v.time_remaining = j.at("time_remaining").get<double>();
  v.x_traj = j.at("x_traj").get<std::vector<AlipState>>();
  v.u_traj = j.at("u_traj").get<std::vector<double>>();
  v.footsteps = j.at("footsteps").get<std::vector<Vec3>>();
  v.assignment = j.at("assignment").get<std::vector<int>>();
  v.objective = j.at("objective").get<double>();
  get(j, "stats", v.stats);
  if (static_cast<int>(v.x_traj.size()) != v.horizon * v.knots ||
      static_cast<int>(v.footsteps.size()) != v.horizon) {
    throw ConfigError("solution: trajectory sizes do not match the horizon");
  }
}

void to_json(Json& j, const MpfcProblem& v) {
  j = {{"x0", v.x0},
       {"p0", v.p0},
       {"stance", v.stance},
       {"footholds", v.footholds},
       {"x_ref", v.x_ref},
       {"p_ref", v.p_ref},
       {"time_remaining", v.time_remaining},
       {"foothold_source", v.foothold_source}};
  if (v.previous_solution) j["previous_solution"] = *v.previous_solution;
}
void from_json(const Json& j, MpfcProblem& v) {
  v.x0 = j.at("x0").get<AlipState>();
  v.p0 = j.at("p0").get<Vec3>();
  v.stance = j.at("stance").get<Stance>();
  v.footholds = read_footholds(j.at("footholds"));
  v.x_ref = j.at("x_ref").get<std::vector<AlipState>>();
  v.p_ref = j.at("p_ref").get<std::vector<Vec3>>();
  v.time_remaining = j.at("time_remaining").get<double>();
  v.foothold_source.clear();
  get(j, "foothold_source", v.foothold_source);
  if (v.foothold_source.empty()) {
    for (size_t i = 0; i < v.footholds.size(); ++i) v.foothold_source.push_back(static_cast<int>(i));
  }
  v.previous_solution.reset();
  if (j.contains("previous_solution") && !j.at("previous_solution").is_null()) {
    v.previous_solution = j.at("previous_solution").get<MpfcSolution>();
  }
}

Json parse_json(const std::string& text, const std::string& source) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(source + ": " + e.what());
  }
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_json(ss.str(), path);
}

}  // namespace mpfc
