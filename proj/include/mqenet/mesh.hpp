#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "mqenet/error.hpp"

namespace mqenet {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

// 2D curvilinear grid of node coordinates. Node (i, j) lives at index
// j*ni + i; cell (ci, cj) at index cj*(ni-1) + ci. Cells are the quads
// bounded by nodes (ci..ci+1, cj..cj+1).
struct StructuredMesh {
  int ni = 0;
  int nj = 0;
  std::vector<Point2> coords;  // size ni*nj, i fastest
  std::string name;

  int node_count() const { return ni * nj; }
  int cell_count() const { return (ni - 1) * (nj - 1); }
  int cells_i() const { return ni - 1; }
  int cells_j() const { return nj - 1; }

  const Point2& node(int i, int j) const { return coords[static_cast<std::size_t>(j) * ni + i]; }
  Point2& node(int i, int j) { return coords[static_cast<std::size_t>(j) * ni + i]; }

  // Throws if dimensions or coordinates violate the type invariants.
  void validate() const;
};

struct CellQuality {
  double area = 0.0;
  double aspect_ratio = 0.0;
  double skewness = 0.0;           // in [0, 1]
  double orthogonality_dev = 0.0;  // max |corner angle - 90| in degrees
  double smoothness = 0.0;         // max area ratio vs edge-neighbors
  double distribution = 0.0;       // centroid-spacing variation vs neighbors

  std::array<double, 6> as_array() const {
    return {area, aspect_ratio, skewness, orthogonality_dev, smoothness, distribution};
  }
};

inline constexpr double kDegenerateAreaEps = 1e-14;

// Plot3D 2D ASCII, single block: "1\nni nj\n x... y...", j-major order.
StructuredMesh parse_plot3d(const std::string& text);
std::string write_plot3d(const StructuredMesh& mesh);

// Native JSON document {name, ni, nj, x:[...], y:[...]}.
StructuredMesh parse_native(const std::string& text);
std::string write_native(const StructuredMesh& mesh);

StructuredMesh load_mesh_file(const std::string& path);  // dispatches on extension

// Triangle aspect ratio: longest side / (4*sqrt(3)*area), area by Heron.
double aspect_ratio_tri(double l0, double l1, double l2);

// Angle-based skewness, clamped to [0, 1].
double skewness(double q_max, double q_min, double q_ideal);

// The 6 per-element features, fixed order:
// [area, aspect_ratio, skewness, orthogonality_dev, smoothness, distribution]
std::array<double, 6> cell_features(const StructuredMesh& mesh, int ci, int cj);

struct QualityAggregate {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
};

struct QualityReport {
  std::vector<CellQuality> rows;  // row-major over cells
  std::array<QualityAggregate, 6> aggregates;
};

QualityReport mesh_quality_report(const StructuredMesh& mesh);

// CSV with header ci,cj,area,aspect_ratio,skewness,orthogonality_dev,smoothness,distribution
std::string report_to_csv(const StructuredMesh& mesh, const QualityReport& report);

// Shortest-round-trip decimal formatting for doubles; shared by all writers.
std::string format_double(double v);

}  // namespace mqenet
