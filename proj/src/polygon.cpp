#define BOOST_GEOMETRY_NO_ROBUSTNESS
#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <boost/geometry.hpp>
#include <boost/geometry/geometries/point_xy.hpp>
#include <boost/geometry/geometries/polygon.hpp>
#include <boost/geometry/algorithms/point_on_surface.hpp>

#include "mpfc/terrain.hpp"

namespace mpfc {

namespace bg = boost::geometry;
using BgPoint = bg::model::d2::point_xy<double>;
using BgPolygon = bg::model::polygon<BgPoint, false, true>;  // ccw, closed
using BgMulti = bg::model::multi_polygon<BgPolygon>;

namespace {

constexpr double kPi = 3.14159265358979323846;

double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

double segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

// Proper or touching intersection of closed segments.
bool segments_intersect(const Vec2& p1, const Vec2& p2, const Vec2& q1,
                        const Vec2& q2) {
  auto orient = [](const Vec2& a, const Vec2& b, const Vec2& c) {
    const double v = cross(b - a, c - a);
    return (v > 0) - (v < 0);
  };
  auto on_seg = [](const Vec2& a, const Vec2& b, const Vec2& p) {
    return std::min(a.x(), b.x()) <= p.x() && p.x() <= std::max(a.x(), b.x()) &&
           std::min(a.y(), b.y()) <= p.y() && p.y() <= std::max(a.y(), b.y());
  };
  const int o1 = orient(p1, p2, q1), o2 = orient(p1, p2, q2);
  const int o3 = orient(q1, q2, p1), o4 = orient(q1, q2, p2);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_seg(p1, p2, q1)) return true;
  if (o2 == 0 && on_seg(p1, p2, q2)) return true;
  if (o3 == 0 && on_seg(q1, q2, p1)) return true;
  if (o4 == 0 && on_seg(q1, q2, p2)) return true;
  return false;
}

bool point_in_ring(const Ring& ring, const Vec2& p) {
  bool in = false;
  const size_t n = ring.size();
  for (size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2& a = ring[i];
    const Vec2& b = ring[j];
    if ((a.y() > p.y()) != (b.y() > p.y()) &&
        p.x() < (b.x() - a.x()) * (p.y() - a.y()) / (b.y() - a.y()) + a.x()) {
      in = !in;
    }
  }
  return in;
}

BgPolygon to_bg(const Polygon2D& poly) {
  BgPolygon out;
  for (const Vec2& v : poly.outer) out.outer().emplace_back(v.x(), v.y());
  for (const Ring& h : poly.holes) {
    out.inners().emplace_back();
    for (const Vec2& v : h) out.inners().back().emplace_back(v.x(), v.y());
  }
  bg::correct(out);
  return out;
}

Ring from_bg_ring(const bg::model::ring<BgPoint, false, true>& r) {
  Ring out;
  for (size_t i = 0; i + 1 < r.size(); ++i) out.emplace_back(r[i].x(), r[i].y());
  return simplify_ring(out);
}

std::vector<Polygon2D> from_bg(const BgMulti& multi, double min_area) {
  std::vector<Polygon2D> out;
  for (const BgPolygon& p : multi) {
    Polygon2D poly;
    poly.outer = from_bg_ring(p.outer());
    if (poly.outer.size() < 3 || signed_area(poly.outer) <= min_area) continue;
    for (const auto& h : p.inners()) {
      Ring hole = from_bg_ring(h);
      if (hole.size() >= 3 && -signed_area(hole) > min_area) {
        poly.holes.push_back(std::move(hole));
      }
    }
    out.push_back(std::move(poly));
  }
  return out;
}

}  // namespace

// ----------------------------------------------------------------- geometry

double signed_area(const Ring& ring) {
  double a = 0.0;
  for (size_t i = 0, n = ring.size(); i < n; ++i) {
    a += cross(ring[i], ring[(i + 1) % n]);
  }
  return 0.5 * a;
}

double area(const Polygon2D& poly) {
  double a = std::abs(signed_area(poly.outer));
  for (const Ring& h : poly.holes) a -= std::abs(signed_area(h));
  return a;
}

Vec2 centroid(const Ring& ring) {
  const double a = signed_area(ring);
  if (std::abs(a) < 1e-300) {
    Vec2 s = Vec2::Zero();
    for (const Vec2& v : ring) s += v;
    return ring.empty() ? s : Vec2(s / static_cast<double>(ring.size()));
  }
  // Relative to the first vertex for accuracy far from the origin.
  const Vec2 o = ring.front();
  Vec2 c = Vec2::Zero();
  for (size_t i = 0, n = ring.size(); i < n; ++i) {
    const Vec2 p = ring[i] - o, q = ring[(i + 1) % n] - o;
    c += (p + q) * cross(p, q);
  }
  return o + c / (6.0 * a);
}

Ring convex_hull(const Ring& points) {
  Ring pts = points;
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return std::tie(a.x(), a.y()) < std::tie(b.x(), b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  Ring hull(2 * pts.size());
  size_t k = 0;
  for (size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross(hull[k - 1] - hull[k - 2], pts[i] - hull[k - 2]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 1] - hull[k - 2], pts[i] - hull[k - 2]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

Ring simplify_ring(const Ring& ring, double tol) {
  Ring out = ring;
  bool changed = true;
  while (changed && out.size() >= 3) {
    changed = false;
    for (size_t i = 0; i < out.size() && out.size() >= 3; ++i) {
      const size_t n = out.size();
      const Vec2& prev = out[(i + n - 1) % n];
      const Vec2& cur = out[i];
      const Vec2& next = out[(i + 1) % n];
      const double scale = std::max((cur - prev).norm(), (next - cur).norm());
      if ((cur - prev).norm() <= tol ||
          std::abs(cross(cur - prev, next - cur)) <= tol * scale * scale) {
        out.erase(out.begin() + static_cast<long>(i));
        changed = true;
        --i;
      }
    }
  }
  return out.size() >= 3 ? out : Ring{};
}

// ----------------------------------------------------------------- foothold

double Foothold::violation(const Vec3& p) const {
  double v = std::abs(f.dot(p) - b);
  if (c.size()) v = std::max(v, (F * p - c).maxCoeff());
  return std::max(v, 0.0);
}

Vec3 Foothold::centroid() const {
  Ring xy;
  for (const Vec3& v : verts) xy.emplace_back(v.x(), v.y());
  const Vec2 c2 = mpfc::centroid(xy);
  return Vec3(c2.x(), c2.y(), (b - f.x() * c2.x() - f.y() * c2.y()) / f.z());
}

double Foothold::area() const {
  Vec3 s = Vec3::Zero();
  for (size_t i = 0, n = verts.size(); i < n; ++i) {
    s += (verts[i] - verts[0]).cross(verts[(i + 1) % n] - verts[0]);
  }
  return 0.5 * s.norm();
}

void Foothold::validate() const {
  if (F.rows() != c.size() || F.cols() != 3) {
    throw Error("Foothold: F must be k x 3 with k = size(c)");
  }
  if (F.rows() < 3 || verts.size() < 3) {
    throw Error("Foothold: need at least three faces and vertices");
  }
  for (Eigen::Index i = 0; i < F.rows(); ++i) {
    if (std::abs(F.row(i).norm() - 1.0) > 1e-9) {
      throw Error("Foothold: constraint rows must be unit norm");
    }
  }
  if (std::abs(f.norm() - 1.0) > 1e-9 || std::abs(f.z()) < 1e-6) {
    throw Error("Foothold: plane normal must be unit norm and non-vertical");
  }
  for (const Vec3& v : verts) {
    if (!contains(v, 1e-9)) throw Error("Foothold: vertex violates constraints");
  }
  if (!(area() > 0.0)) throw Error("Foothold: empty polygon");
}

// --------------------------------------------------------------- extraction

void remove_diagonal_pinches(CellMask& mask) {
  bool changed = true;
  while (changed) {
    changed = false;
    for (int r = 0; r + 1 < mask.rows; ++r) {
      for (int c = 0; c + 1 < mask.cols; ++c) {
        const bool a = mask(r, c), b = mask(r, c + 1);
        const bool d = mask(r + 1, c), e = mask(r + 1, c + 1);
        if (a && e && !b && !d) {
          mask(r + 1, c + 1) = 0;
          changed = true;
        } else if (b && d && !a && !e) {
          mask(r + 1, c) = 0;
          changed = true;
        }
      }
    }
  }
}

Grid<int> label_components(const CellMask& mask, int* count) {
  Grid<int> labels(mask.rows, mask.cols, -1);
  int next = 0;
  std::vector<std::pair<int, int>> stack;
  for (int r = 0; r < mask.rows; ++r) {
    for (int c = 0; c < mask.cols; ++c) {
      if (!mask(r, c) || labels(r, c) >= 0) continue;
      labels(r, c) = next;
      stack.assign(1, {r, c});
      while (!stack.empty()) {
        auto [cr, cc] = stack.back();
        stack.pop_back();
        const int nb[4][2] = {{cr - 1, cc}, {cr + 1, cc}, {cr, cc - 1}, {cr, cc + 1}};
        for (const auto& n : nb) {
          if (mask.inside(n[0], n[1]) && mask(n[0], n[1]) &&
              labels(n[0], n[1]) < 0) {
            labels(n[0], n[1]) = next;
            stack.emplace_back(n[0], n[1]);
          }
        }
      }
      ++next;
    }
  }
  if (count) *count = next;
  return labels;
}

std::vector<Ring> trace_boundaries(const CellMask& mask, const HeightMap& map) {
  const int vc = mask.cols + 1;
  auto vid = [vc](int r, int c) { return r * vc + c; };
  std::vector<int> next((mask.rows + 1) * vc, -1);
  auto in = [&](int r, int c) { return mask.inside(r, c) && mask(r, c); };
  auto add = [&](int from, int to) {
    if (next[from] >= 0) throw Error("trace_boundaries: diagonal pinch in mask");
    next[from] = to;
  };
  for (int r = 0; r < mask.rows; ++r) {
    for (int c = 0; c < mask.cols; ++c) {
      if (!in(r, c)) continue;
      if (!in(r - 1, c)) add(vid(r, c), vid(r, c + 1));
      if (!in(r, c + 1)) add(vid(r, c + 1), vid(r + 1, c + 1));
      if (!in(r + 1, c)) add(vid(r + 1, c + 1), vid(r + 1, c));
      if (!in(r, c - 1)) add(vid(r + 1, c), vid(r, c));
    }
  }
  std::vector<Ring> rings;
  for (int start = 0; start < static_cast<int>(next.size()); ++start) {
    if (next[start] < 0) continue;
    Ring ring;
    int v = start;
    while (next[v] >= 0) {
      ring.push_back(map.origin + map.resolution * Vec2(v % vc, v / vc));
      const int n = next[v];
      next[v] = -1;
      v = n;
    }
    rings.push_back(simplify_ring(ring));
  }
  return rings;
}

std::vector<Polygon2D> inset_polygon(const Polygon2D& poly, double margin) {
  BgMulti result;
  if (margin <= 0.0) {
    result.push_back(to_bg(poly));
  } else {
    bg::strategy::buffer::distance_symmetric<double> distance(-margin);
    bg::strategy::buffer::side_straight side;
    bg::strategy::buffer::join_miter join(2.0);
    bg::strategy::buffer::end_flat end;
    bg::strategy::buffer::point_square point;
    bg::buffer(to_bg(poly), result, distance, side, join, end, point);
  }
  return from_bg(result, 1e-12);
}

Plane fit_plane(const std::vector<Vec3>& points) {
  if (points.size() < 3) throw Error("fit_plane: need at least three points");
  Vec3 mean = Vec3::Zero();
  for (const Vec3& p : points) mean += p;
  mean /= static_cast<double>(points.size());
  Mat3 m = Mat3::Zero();
  Vec3 rhs = Vec3::Zero();
  for (const Vec3& p : points) {
    const Vec3 row(p.x() - mean.x(), p.y() - mean.y(), 1.0);
    m += row * row.transpose();
    rhs += row * (p.z() - mean.z());
  }
  const Vec3 k = m.ldlt().solve(rhs);
  Plane plane;
  plane.k_x = k(0);
  plane.k_y = k(1);
  plane.z0 = mean.z() + k(2) - k(0) * mean.x() - k(1) * mean.y();
  return plane;
}

std::vector<Region> extract_polygons(const CellMask& steppable,
                                     const HeightMap& map,
                                     const SegmentationConfig& cfg) {
  if (steppable.rows != map.rows() || steppable.cols != map.cols()) {
    throw Error("extract_polygons: mask and map sizes differ");
  }
  std::vector<Region> regions;
  int count = 0;
  const Grid<int> labels = label_components(steppable, &count);
  for (int k = 0; k < count; ++k) {
    CellMask comp(steppable.rows, steppable.cols, 0);
    for (size_t i = 0; i < comp.data.size(); ++i) comp.data[i] = labels.data[i] == k;
    remove_diagonal_pinches(comp);
    int sub_count = 0;
    const Grid<int> sub = label_components(comp, &sub_count);
    for (int s = 0; s < sub_count; ++s) {
      CellMask part(comp.rows, comp.cols, 0);
      std::vector<Vec3> cells;
      for (int r = 0; r < part.rows; ++r) {
        for (int c = 0; c < part.cols; ++c) {
          if (sub(r, c) != s) continue;
          part(r, c) = 1;
          const Vec2 p = map.cell_center(r, c);
          cells.emplace_back(p.x(), p.y(), map.heights(r, c));
        }
      }
      if (cells.size() < 3) continue;
      Polygon2D poly;
      for (Ring& ring : trace_boundaries(part, map)) {
        if (ring.empty()) continue;
        if (signed_area(ring) > 0) {
          poly.outer = std::move(ring);
        } else {
          poly.holes.push_back(std::move(ring));
        }
      }
      if (poly.outer.empty()) continue;
      const Plane plane = fit_plane(cells);
      for (Polygon2D& piece : inset_polygon(poly, cfg.margin)) {
        regions.push_back({std::move(piece), plane});
      }
    }
  }
  return regions;
}

// ---------------------------------------------------------------------- acd

namespace {

// Concavity of every vertex: distance to the hull edge bridging its pocket,
// zero on the hull.
std::vector<double> vertex_concavity(const Ring& ring) {
  const size_t n = ring.size();
  std::vector<double> conc(n, 0.0);
  const Ring hull = convex_hull(ring);
  std::vector<size_t> on_hull;
  for (size_t i = 0; i < n; ++i) {
    if (std::find(hull.begin(), hull.end(), ring[i]) != hull.end()) {
      on_hull.push_back(i);
    }
  }
  if (on_hull.size() < 2) return conc;
  for (size_t h = 0; h < on_hull.size(); ++h) {
    const size_t a = on_hull[h], b = on_hull[(h + 1) % on_hull.size()];
    for (size_t i = (a + 1) % n; i != b; i = (i + 1) % n) {
      conc[i] = segment_distance(ring[i], ring[a], ring[b]);
    }
  }
  return conc;
}

bool valid_diagonal(const Ring& ring, size_t i, size_t j) {
  const size_t n = ring.size();
  if (i == j || (i + 1) % n == j || (j + 1) % n == i) return false;
  const Vec2& a = ring[i];
  const Vec2& b = ring[j];
  const double len = (b - a).norm();
  for (size_t k = 0; k < n; ++k) {
    const size_t k1 = (k + 1) % n;
    if (k == i || k == j || k1 == i || k1 == j) continue;
    if (segments_intersect(a, b, ring[k], ring[k1])) return false;
  }
  for (size_t k = 0; k < n; ++k) {
    if (k != i && k != j && segment_distance(ring[k], a, b) <= 1e-12 * len) {
      return false;
    }
  }
  return point_in_ring(ring, 0.5 * (a + b));
}

void acd_simple(const Ring& input, double tau, std::vector<Ring>& out) {
  const Ring ring = simplify_ring(input);
  if (ring.size() < 3 || signed_area(ring) <= 1e-14) return;
  const std::vector<double> conc = vertex_concavity(ring);
  const size_t v = std::max_element(conc.begin(), conc.end()) - conc.begin();
  if (conc[v] <= tau) {
    out.push_back(ring);
    return;
  }
  size_t best = v;
  double best_score = -1.0;
  for (size_t j = 0; j < ring.size(); ++j) {
    if (!valid_diagonal(ring, v, j)) continue;
    const double score = (1.0 + conc[j] / tau) / ((ring[j] - ring[v]).norm() + tau);
    if (score > best_score) {
      best_score = score;
      best = j;
    }
  }
  if (best == v) {
    out.push_back(ring);
    return;
  }
  Ring first, second;
  for (size_t k = v;; k = (k + 1) % ring.size()) {
    first.push_back(ring[k]);
    if (k == best) break;
  }
  for (size_t k = best;; k = (k + 1) % ring.size()) {
    second.push_back(ring[k]);
    if (k == v) break;
  }
  acd_simple(first, tau, out);
  acd_simple(second, tau, out);
}

// Opens a hole by splitting the polygon along the line through a point
// inside the hole and the nearest outer vertex.
std::vector<Polygon2D> split_at_hole(const Polygon2D& poly) {
  BgPolygon hole_poly;
  for (const Vec2& v : poly.holes.front()) hole_poly.outer().emplace_back(v.x(), v.y());
  bg::correct(hole_poly);
  BgPoint inside(0.0, 0.0);
  bg::point_on_surface(hole_poly, inside);
  const Vec2 p(inside.x(), inside.y());
  Vec2 target = poly.outer.front();
  for (const Vec2& v : poly.outer) {
    if ((v - p).squaredNorm() < (target - p).squaredNorm()) target = v;
  }
  Vec2 dir = (target - p).normalized();
  const Vec2 normal(-dir.y(), dir.x());

  double extent = 1.0;
  for (const Vec2& v : poly.outer) extent = std::max(extent, (v - p).norm());
  extent *= 4.0;

  const BgPolygon shape = to_bg(poly);
  std::vector<Polygon2D> pieces;
  for (double side : {1.0, -1.0}) {
    const Vec2 n = side * normal;
    Polygon2D half;
    half.outer = {p - extent * dir, p + extent * dir,
                  p + extent * dir + extent * n, p - extent * dir + extent * n};
    if (signed_area(half.outer) < 0) std::reverse(half.outer.begin(), half.outer.end());
    BgMulti result;
    bg::intersection(shape, to_bg(half), result);
    for (Polygon2D& piece : from_bg(result, 1e-14)) pieces.push_back(std::move(piece));
  }
  return pieces;
}

}  // namespace

double concavity(const Ring& ring) {
  const std::vector<double> conc = vertex_concavity(simplify_ring(ring));
  return conc.empty() ? 0.0 : *std::max_element(conc.begin(), conc.end());
}

std::vector<Ring> acd(const Polygon2D& poly, double tau) {
  if (!(area(poly) > 1e-14)) throw DegeneratePolygon("acd: zero-area polygon");
  std::vector<Ring> out;
  std::vector<Polygon2D> todo{poly};
  while (!todo.empty()) {
    Polygon2D cur = std::move(todo.back());
    todo.pop_back();
    if (cur.holes.empty()) {
      acd_simple(cur.outer, tau, out);
      continue;
    }
    std::vector<Polygon2D> pieces = split_at_hole(cur);
    for (auto it = pieces.rbegin(); it != pieces.rend(); ++it) {
      todo.push_back(std::move(*it));
    }
  }
  return out;
}

// ---------------------------------------------------------------- whittling

double cut_loss(const Ring& poly, const Vec2& v, const Vec2& a) {
  double loss = 0.0;
  for (const Vec2& p : poly) {
    const double s = a.dot(p - v);
    if (s > 0) loss += s * s;
  }
  return loss;
}

Vec2 make_cut(const Ring& poly, const Vec2& v) {
  // The loss is a quadratic form a'Ma on each arc where the set of vertices
  // in front of a is constant. The minimum is at an arc end or at the
  // eigenvector of M with the smallest eigenvalue.
  std::vector<double> breaks;
  for (const Vec2& p : poly) {
    const Vec2 d = p - v;
    if (d.squaredNorm() == 0.0) continue;
    const double phi = std::atan2(d.y(), d.x());
    for (double b : {phi + 0.5 * kPi, phi - 0.5 * kPi}) {
      breaks.push_back(std::fmod(b + 4.0 * kPi, 2.0 * kPi));
    }
  }
  std::sort(breaks.begin(), breaks.end());
  std::vector<Vec2> candidates;
  for (size_t i = 0; i < breaks.size(); ++i) {
    const double lo = breaks[i];
    const double hi = i + 1 < breaks.size() ? breaks[i + 1] : breaks[0] + 2.0 * kPi;
    candidates.emplace_back(std::cos(lo), std::sin(lo));
    const double mid = 0.5 * (lo + hi);
    const Vec2 am(std::cos(mid), std::sin(mid));
    Mat2 m = Mat2::Zero();
    for (const Vec2& p : poly) {
      const Vec2 d = p - v;
      if (am.dot(d) > 0) m += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat2> es(m);
    const Vec2 e = es.eigenvectors().col(0);
    candidates.push_back(e);
    candidates.push_back(-e);
  }
  if (candidates.empty()) return Vec2::UnitX();
  Vec2 best = candidates.front();
  double best_loss = cut_loss(poly, v, best);
  for (const Vec2& a : candidates) {
    const double l = cut_loss(poly, v, a);
    if (l < best_loss) {
      best_loss = l;
      best = a;
    }
  }
  return best.normalized();
}

Ring clip_halfplane(const Ring& poly, const Vec2& a, const Vec2& v) {
  Ring out;
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % n];
    const double sp = a.dot(p - v), sq = a.dot(q - v);
    if (sp <= 0) out.push_back(p);
    if ((sp < 0 && sq > 0) || (sp > 0 && sq < 0)) {
      out.push_back(p + (sp / (sp - sq)) * (q - p));
    }
  }
  return simplify_ring(out);
}

bool strictly_inside(const Ring& poly, const Vec2& p, double tol) {
  const size_t n = poly.size();
  if (n < 3) return false;
  for (size_t i = 0; i < n; ++i) {
    const Vec2 e = poly[(i + 1) % n] - poly[i];
    if (cross(e, p - poly[i]) / e.norm() <= tol) return false;
  }
  return true;
}

Ring whittle(const Ring& vertices) {
  Ring poly = convex_hull(vertices);
  if (poly.size() < 3) throw EmptyResult("whittle: degenerate convex hull");
  for (const Vec2& v : vertices) {
    if (!strictly_inside(poly, v)) continue;
    poly = clip_halfplane(poly, make_cut(poly, v), v);
    if (poly.size() < 3 || signed_area(poly) <= 1e-14) {
      throw EmptyResult("whittle: cuts eliminated the polygon");
    }
  }
  return poly;
}

Foothold lift_to_foothold(const Ring& poly, const Plane& plane) {
  const size_t n = poly.size();
  if (n < 3) throw DegeneratePolygon("lift_to_foothold: fewer than 3 vertices");
  Foothold fh;
  fh.F.resize(static_cast<Eigen::Index>(n), 3);
  fh.c.resize(static_cast<Eigen::Index>(n));
  for (size_t i = 0; i < n; ++i) {
    const Vec2 e = poly[(i + 1) % n] - poly[i];
    const Vec2 normal = Vec2(e.y(), -e.x()).normalized();
    fh.F.row(static_cast<Eigen::Index>(i)) << normal.x(), normal.y(), 0.0;
    fh.c(static_cast<Eigen::Index>(i)) = normal.dot(poly[i]);
  }
  const Vec3 raw(-plane.k_x, -plane.k_y, 1.0);
  fh.f = raw / raw.norm();
  fh.b = plane.z0 / raw.norm();
  for (const Vec2& p : poly) fh.verts.emplace_back(p.x(), p.y(), plane.height(p));
  return fh;
}

std::vector<Foothold> decompose_terrain(const HeightMap& map,
                                        const SegmentationConfig& cfg) {
  const HeightMap filtered = filter_map(map, cfg);
  const CellMask steppable = classify_steppable(filtered, cfg);
  std::vector<Foothold> out;
  for (const Region& region : extract_polygons(steppable, filtered, cfg)) {
    for (const Ring& piece : acd(region.polygon, cfg.acd_tau)) {
      if (std::abs(signed_area(piece)) < cfg.min_area) continue;
      try {
        out.push_back(lift_to_foothold(whittle(piece), region.plane));
      } catch (const EmptyResult&) {
      }
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const Foothold& a, const Foothold& b) {
    const Vec3 ca = a.centroid(), cb = b.centroid();
    return std::make_tuple(ca.x(), ca.y(), a.area()) <
           std::make_tuple(cb.x(), cb.y(), b.area());
  });
  return out;
}

}  // namespace mpfc
