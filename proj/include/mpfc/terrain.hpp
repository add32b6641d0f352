#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <vector>

#include "mpfc/types.hpp"

namespace mpfc {

/// Row-major grid. Row 0 is the southern-most row (smallest y).
template <typename T>
struct Grid {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int r, int c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}

  T& operator()(int r, int c) { return data[r * cols + c]; }
  const T& operator()(int r, int c) const { return data[r * cols + c]; }
  bool inside(int r, int c) const {
    return r >= 0 && c >= 0 && r < rows && c < cols;
  }
};

using CellMask = Grid<std::uint8_t>;

struct HeightMap {
  double resolution = 0.05;  // m per cell
  Vec2 origin = Vec2::Zero();  // south-west corner of cell (0, 0)
  Grid<double> heights;
  CellMask valid;

  HeightMap() = default;
  HeightMap(int rows, int cols, double resolution, Vec2 origin,
            double fill = 0.0);

  int rows() const { return heights.rows; }
  int cols() const { return heights.cols; }
  bool is_valid(int r, int c) const { return valid(r, c) != 0; }
  Vec2 cell_center(int r, int c) const {
    return origin + resolution * Vec2(c + 0.5, r + 0.5);
  }
  void validate() const;
};

class GridFormatError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// ESRI ASCII grid. Cells equal to NODATA_value are marked invalid.
HeightMap read_esri_ascii(std::istream& in);
HeightMap read_esri_ascii_file(const std::string& path);
void write_esri_ascii(std::ostream& out, const HeightMap& map,
                      double nodata = -9999.0);

using Ring = std::vector<Vec2>;

/// Outer ring counter-clockwise, holes clockwise. Rings are open (the first
/// vertex is not repeated).
struct Polygon2D {
  Ring outer;
  std::vector<Ring> holes;
};

double signed_area(const Ring& ring);
double area(const Polygon2D& poly);
Vec2 centroid(const Ring& ring);
/// Andrew's monotone chain; counter-clockwise, no collinear points.
Ring convex_hull(const Ring& points);
/// Drops repeated and collinear vertices.
Ring simplify_ring(const Ring& ring, double tol = 1e-12);

/// z = k_x x + k_y y + z0
struct Plane {
  double k_x = 0.0;
  double k_y = 0.0;
  double z0 = 0.0;

  double height(const Vec2& p) const { return k_x * p.x() + k_y * p.y() + z0; }
};

/// {p | F p <= c, f'p = b}
struct Foothold {
  MatX F;  // k x 3
  VecX c;
  Vec3 f = Vec3::UnitZ();
  double b = 0.0;
  std::vector<Vec3> verts;

  int num_faces() const { return static_cast<int>(c.size()); }
  /// Largest constraint violation of p (0 when inside).
  double violation(const Vec3& p) const;
  bool contains(const Vec3& p, double tol = 1e-9) const {
    return violation(p) <= tol;
  }
  Vec3 centroid() const;
  double area() const;
  /// Checks unit-norm rows, boundedness and vertex consistency.
  void validate() const;
};

struct SegmentationConfig {
  double inclination_max = 0.35;  // rad
  double roughness_max = 0.02;    // m
  int neighborhood_radius = 2;    // cells
  double margin = 0.05;           // m
  double min_area = 0.1;          // m^2
  double acd_tau = 0.05;          // m
  double blur_sigma = 1.0;        // cells
  int erosion_radius = 1;         // cells
  int median_radius = 1;          // cells

  void validate() const;
};

class DegeneratePolygon : public Error {
 public:
  using Error::Error;
};

class EmptyResult : public Error {
 public:
  using Error::Error;
};

HeightMap median_filter(const HeightMap& map, int radius);
HeightMap erosion_filter(const HeightMap& map, int radius);
/// Normalized over the valid cells of a square window of radius
/// ceil(3 sigma).
HeightMap gaussian_blur(const HeightMap& map, double sigma);
/// Median, then erosion, then Gaussian blur. Invalid cells are excluded
/// from every kernel and stay invalid.
HeightMap filter_map(const HeightMap& map, const SegmentationConfig& cfg);

struct CellFit {
  double inclination = 0.0;  // rad
  double roughness = std::numeric_limits<double>::infinity();  // m
};

/// Least-squares plane over the valid cells of the neighborhood. Cells with
/// fewer than three non-collinear neighbors get infinite roughness.
Grid<CellFit> fit_cells(const HeightMap& map, int radius);
CellMask classify_steppable(const HeightMap& map,
                            const SegmentationConfig& cfg);

struct Region {
  Polygon2D polygon;
  Plane plane;
};

/// Rings traced along cell edges of a mask, in world coordinates. Diagonal
/// pinches must have been removed.
std::vector<Ring> trace_boundaries(const CellMask& mask, const HeightMap& map);
/// Clears cells until no 2x2 block holds exactly two diagonal cells.
void remove_diagonal_pinches(CellMask& mask);
/// 4-connected labels, -1 for cells outside the mask.
Grid<int> label_components(const CellMask& mask, int* count = nullptr);
/// Inward offset by margin with mitered corners. May split or vanish.
std::vector<Polygon2D> inset_polygon(const Polygon2D& poly, double margin);
Plane fit_plane(const std::vector<Vec3>& points);

std::vector<Region> extract_polygons(const CellMask& steppable,
                                     const HeightMap& map,
                                     const SegmentationConfig& cfg);

/// Largest distance from a ring vertex to the hull edge bridging its pocket.
double concavity(const Ring& ring);
std::vector<Ring> acd(const Polygon2D& poly, double tau);

/// Unit a minimizing sum_i max(a'(p_i - v), 0)^2 over the vertices of P.
Vec2 make_cut(const Ring& convex_poly, const Vec2& v);
double cut_loss(const Ring& convex_poly, const Vec2& v, const Vec2& a);
/// Keeps {x | a'(x - v) <= 0}.
Ring clip_halfplane(const Ring& convex_poly, const Vec2& a, const Vec2& v);
/// True when p is inside the convex ring by more than tol from every edge.
bool strictly_inside(const Ring& convex_poly, const Vec2& p,
                     double tol = 1e-9);
Ring whittle(const Ring& vertices);

Foothold lift_to_foothold(const Ring& convex_poly, const Plane& plane);

std::vector<Foothold> decompose_terrain(const HeightMap& map,
                                        const SegmentationConfig& cfg);

}  // namespace mpfc
