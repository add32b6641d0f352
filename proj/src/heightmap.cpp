#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include <Eigen/Cholesky>

#include "mpfc/terrain.hpp"

namespace mpfc {

HeightMap::HeightMap(int rows, int cols, double res, Vec2 org, double fill)
    : resolution(res),
      origin(std::move(org)),
      heights(rows, cols, fill),
      valid(rows, cols, 1) {}

void HeightMap::validate() const {
  if (!(resolution > 0.0)) throw ConfigError("HeightMap: resolution must be > 0");
  if (rows() < 2 || cols() < 2) {
    throw ConfigError("HeightMap: grid must be at least 2x2");
  }
  if (valid.rows != rows() || valid.cols != cols()) {
    throw ConfigError("HeightMap: validity mask does not match the grid");
  }
}

void SegmentationConfig::validate() const {
  if (inclination_max < 0 || roughness_max < 0 || neighborhood_radius < 0 ||
      margin < 0 || min_area < 0 || acd_tau < 0 || blur_sigma < 0 ||
      erosion_radius < 0 || median_radius < 0) {
    throw ConfigError("SegmentationConfig: all fields must be non-negative");
  }
  if (!(acd_tau > 0)) throw ConfigError("SegmentationConfig: acd_tau must be > 0");
}

// ---------------------------------------------------------------- ESRI grid

HeightMap read_esri_ascii(std::istream& in) {
  std::map<std::string, double> header;
  std::string key;
  // Header lines are "key value"; the first numeric token starts the data.
  while (in >> std::ws && in.peek() != EOF &&
         std::isalpha(static_cast<unsigned char>(in.peek()))) {
    double value;
    in >> key;
    if (!(in >> value)) {
      throw GridFormatError("grid header: missing value for '" + key + "'");
    }
    std::transform(key.begin(), key.end(), key.begin(),
                   [](unsigned char ch) { return std::tolower(ch); });
    header[key] = value;
  }
  auto need = [&](const std::string& k) {
    auto it = header.find(k);
    if (it == header.end()) throw GridFormatError("grid header: missing " + k);
    return it->second;
  };
  const double ncols = need("ncols");
  const double nrows = need("nrows");
  const double cell = need("cellsize");
  if (ncols < 2 || nrows < 2 || ncols != std::floor(ncols) ||
      nrows != std::floor(nrows)) {
    throw GridFormatError("grid header: ncols and nrows must be integers >= 2");
  }
  if (!(cell > 0)) throw GridFormatError("grid header: cellsize must be > 0");

  Vec2 origin;
  for (int axis = 0; axis < 2; ++axis) {
    const std::string a = axis == 0 ? "x" : "y";
    if (header.count(a + "llcorner")) {
      origin(axis) = header[a + "llcorner"];
    } else if (header.count(a + "llcenter")) {
      origin(axis) = header[a + "llcenter"] - 0.5 * cell;
    } else {
      throw GridFormatError("grid header: missing " + a + "llcorner");
    }
  }
  const bool has_nodata = header.count("nodata_value") > 0;
  const double nodata = has_nodata ? header["nodata_value"] : 0.0;

  HeightMap map(static_cast<int>(nrows), static_cast<int>(ncols), cell, origin);
  for (int row = map.rows() - 1; row >= 0; --row) {
    for (int c = 0; c < map.cols(); ++c) {
      double h;
      if (!(in >> h)) {
        std::ostringstream os;
        os << "grid data: expected " << map.rows() * map.cols()
           << " values, short at row " << map.rows() - 1 - row << " col " << c;
        throw GridFormatError(os.str());
      }
      const bool ok = !(has_nodata && h == nodata) && std::isfinite(h);
      map.heights(row, c) = ok ? h : 0.0;
      map.valid(row, c) = ok;
    }
  }
  return map;
}

HeightMap read_esri_ascii_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw GridFormatError("cannot open grid file " + path);
  return read_esri_ascii(in);
}

void write_esri_ascii(std::ostream& out, const HeightMap& map, double nodata) {
  out << "ncols " << map.cols() << "\nnrows " << map.rows() << '\n'
      << std::setprecision(17) << "xllcorner " << map.origin.x()
      << "\nyllcorner " << map.origin.y() << "\ncellsize " << map.resolution
      << "\nNODATA_value " << nodata << '\n';
  for (int r = map.rows() - 1; r >= 0; --r) {
    for (int c = 0; c < map.cols(); ++c) {
      if (c) out << ' ';
      out << (map.is_valid(r, c) ? map.heights(r, c) : nodata);
    }
    out << '\n';
  }
}

// ------------------------------------------------------------------ filters

namespace {

template <typename Reduce>
HeightMap window_filter(const HeightMap& map, int radius, Reduce reduce) {
  HeightMap out = map;
  if (radius <= 0) return out;
  std::vector<double> window;
  for (int r = 0; r < map.rows(); ++r) {
    for (int c = 0; c < map.cols(); ++c) {
      if (!map.is_valid(r, c)) continue;
      window.clear();
      for (int dr = -radius; dr <= radius; ++dr) {
        for (int dc = -radius; dc <= radius; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (map.heights.inside(rr, cc) && map.is_valid(rr, cc)) {
            window.push_back(map.heights(rr, cc));
          }
        }
      }
      out.heights(r, c) = reduce(window);
    }
  }
  return out;
}

}  // namespace

HeightMap median_filter(const HeightMap& map, int radius) {
  return window_filter(map, radius, [](std::vector<double>& w) {
    std::sort(w.begin(), w.end());
    const size_t n = w.size();
    return n % 2 ? w[n / 2] : 0.5 * (w[n / 2 - 1] + w[n / 2]);
  });
}

HeightMap erosion_filter(const HeightMap& map, int radius) {
  return window_filter(map, radius, [](std::vector<double>& w) {
    return *std::min_element(w.begin(), w.end());
  });
}

HeightMap gaussian_blur(const HeightMap& map, double sigma) {
  HeightMap out = map;
  if (!(sigma > 0)) return out;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> g(2 * radius + 1);
  for (int d = -radius; d <= radius; ++d) {
    g[d + radius] = std::exp(-0.5 * d * d / (sigma * sigma));
  }
  for (int r = 0; r < map.rows(); ++r) {
    for (int c = 0; c < map.cols(); ++c) {
      if (!map.is_valid(r, c)) continue;
      double num = 0.0, den = 0.0;
      for (int dr = -radius; dr <= radius; ++dr) {
        const int rr = r + dr;
        if (rr < 0 || rr >= map.rows()) continue;
        for (int dc = -radius; dc <= radius; ++dc) {
          const int cc = c + dc;
          if (cc < 0 || cc >= map.cols() || !map.is_valid(rr, cc)) continue;
          const double w = g[dr + radius] * g[dc + radius];
          num += w * map.heights(rr, cc);
          den += w;
        }
      }
      out.heights(r, c) = num / den;
    }
  }
  return out;
}

HeightMap filter_map(const HeightMap& map, const SegmentationConfig& cfg) {
  map.validate();
  cfg.validate();
  return gaussian_blur(
      erosion_filter(median_filter(map, cfg.median_radius), cfg.erosion_radius),
      cfg.blur_sigma);
}

// ---------------------------------------------------------- steppability

Grid<CellFit> fit_cells(const HeightMap& map, int radius) {
  Grid<CellFit> fits(map.rows(), map.cols());
  std::vector<Vec3> pts;
  for (int r = 0; r < map.rows(); ++r) {
    for (int c = 0; c < map.cols(); ++c) {
      if (!map.is_valid(r, c)) continue;
      pts.clear();
      for (int dr = -radius; dr <= radius; ++dr) {
        for (int dc = -radius; dc <= radius; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (map.heights.inside(rr, cc) && map.is_valid(rr, cc)) {
            pts.emplace_back(dc * map.resolution, dr * map.resolution,
                             map.heights(rr, cc));
          }
        }
      }
      if (pts.size() < 3) continue;
      // Normal equations in coordinates centered on the cell.
      Mat3 m = Mat3::Zero();
      Vec3 rhs = Vec3::Zero();
      for (const Vec3& p : pts) {
        const Vec3 row(p.x(), p.y(), 1.0);
        m += row * row.transpose();
        rhs += row * p.z();
      }
      Eigen::LDLT<Mat3> ldlt(m);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
          ldlt.vectorD().minCoeff() <= 1e-12 * ldlt.vectorD().maxCoeff()) {
        continue;
      }
      const Vec3 k = ldlt.solve(rhs);
      double rough = 0.0;
      for (const Vec3& p : pts) {
        rough = std::max(rough, std::abs(p.z() - (k(0) * p.x() + k(1) * p.y() + k(2))));
      }
      fits(r, c).inclination = std::atan(std::hypot(k(0), k(1)));
      fits(r, c).roughness = rough;
    }
  }
  return fits;
}

CellMask classify_steppable(const HeightMap& map,
                            const SegmentationConfig& cfg) {
  map.validate();
  const Grid<CellFit> fits = fit_cells(map, cfg.neighborhood_radius);
  CellMask mask(map.rows(), map.cols(), 0);
  for (int r = 0; r < map.rows(); ++r) {
    for (int c = 0; c < map.cols(); ++c) {
      const CellFit& f = fits(r, c);
      mask(r, c) = map.is_valid(r, c) && f.inclination <= cfg.inclination_max &&
                   f.roughness <= cfg.roughness_max;
    }
  }
  return mask;
}

}  // namespace mpfc
