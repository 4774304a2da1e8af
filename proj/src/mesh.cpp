#include "mqenet/mesh.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace mqenet {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Tokenizer {
  const char* pos;
  const char* end;

  explicit Tokenizer(const std::string& text)
      : pos(text.data()), end(text.data() + text.size()) {}

  bool next(std::string_view& out) {
    while (pos != end && std::isspace(static_cast<unsigned char>(*pos))) ++pos;
    if (pos == end) return false;
    const char* start = pos;
    while (pos != end && !std::isspace(static_cast<unsigned char>(*pos))) ++pos;
    out = std::string_view(start, static_cast<std::size_t>(pos - start));
    return true;
  }
};

long parse_int_token(std::string_view tok, ErrorCode code, const char* what) {
  long value = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw Error(code, std::string(what) + " '" + std::string(tok) + "'");
  }
  return value;
}

double parse_double_token(std::string_view tok) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec == std::errc::result_out_of_range || !std::isfinite(value)) {
    throw Error(ErrorCode::NonFiniteCoordinate, "value '" + std::string(tok) + "'");
  }
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw Error(ErrorCode::TruncatedData, "unparsable numeric token '" + std::string(tok) + "'");
  }
  return value;
}

double dist(const Point2& a, const Point2& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

// Interior angle at corner c formed by rays to a and b, in degrees.
double corner_angle_deg(const Point2& c, const Point2& a, const Point2& b) {
  const double v1x = a.x - c.x, v1y = a.y - c.y;
  const double v2x = b.x - c.x, v2y = b.y - c.y;
  const double cross = v1x * v2y - v1y * v2x;
  const double dot = v1x * v2x + v1y * v2y;
  return std::atan2(std::fabs(cross), dot) * 180.0 / kPi;
}

double quad_signed_area(const Point2& p0, const Point2& p1, const Point2& p2, const Point2& p3) {
  return 0.5 * ((p0.x * p1.y - p1.x * p0.y) + (p1.x * p2.y - p2.x * p1.y) +
                (p2.x * p3.y - p3.x * p2.y) + (p3.x * p0.y - p0.x * p3.y));
}

struct CellGeom {
  Point2 p00, p10, p11, p01;  // counter-clockwise for positively oriented cells
  double area;
  Point2 centroid;
};

CellGeom cell_geom(const StructuredMesh& mesh, int ci, int cj) {
  CellGeom g;
  g.p00 = mesh.node(ci, cj);
  g.p10 = mesh.node(ci + 1, cj);
  g.p11 = mesh.node(ci + 1, cj + 1);
  g.p01 = mesh.node(ci, cj + 1);
  g.area = quad_signed_area(g.p00, g.p10, g.p11, g.p01);
  g.centroid = {(g.p00.x + g.p10.x + g.p11.x + g.p01.x) / 4.0,
                (g.p00.y + g.p10.y + g.p11.y + g.p01.y) / 4.0};
  return g;
}

void require_cell_in_range(const StructuredMesh& mesh, int ci, int cj) {
  if (ci < 0 || cj < 0 || ci >= mesh.cells_i() || cj >= mesh.cells_j()) {
    throw Error(ErrorCode::IndexOutOfRange,
                "cell (" + std::to_string(ci) + "," + std::to_string(cj) + ") outside " +
                    std::to_string(mesh.cells_i()) + "x" + std::to_string(mesh.cells_j()));
  }
}

double cell_area_checked(const StructuredMesh& mesh, int ci, int cj) {
  const CellGeom g = cell_geom(mesh, ci, cj);
  if (!(std::fabs(g.area) > kDegenerateAreaEps)) {
    throw Error(ErrorCode::DegenerateCell,
                "cell (" + std::to_string(ci) + "," + std::to_string(cj) + ") area " +
                    format_double(g.area));
  }
  return std::fabs(g.area);
}

double quad_aspect_ratio(const CellGeom& g) {
  const auto tri = [](const Point2& a, const Point2& b, const Point2& c) {
    return aspect_ratio_tri(dist(a, b), dist(b, c), dist(c, a));
  };
  // Both diagonal splits, worst triangle wins.
  double ar = tri(g.p00, g.p10, g.p11);
  ar = std::max(ar, tri(g.p00, g.p11, g.p01));
  ar = std::max(ar, tri(g.p00, g.p10, g.p01));
  ar = std::max(ar, tri(g.p10, g.p11, g.p01));
  return ar;
}

}  // namespace

void StructuredMesh::validate() const {
  if (ni < 2 || nj < 2) {
    throw Error(ErrorCode::DomainError,
                "mesh dimensions " + std::to_string(ni) + "x" + std::to_string(nj) +
                    " (need at least 2x2)");
  }
  if (coords.size() != static_cast<std::size_t>(ni) * nj) {
    throw Error(ErrorCode::LengthMismatch,
                "coords size " + std::to_string(coords.size()) + " != ni*nj");
  }
  for (const Point2& p : coords) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw Error(ErrorCode::NonFiniteCoordinate, "mesh '" + name + "'");
    }
  }
}

StructuredMesh parse_plot3d(const std::string& text) {
  Tokenizer tok(text);
  std::string_view t;
  if (!tok.next(t)) throw Error(ErrorCode::MalformedHeader, "empty input");
  const long blocks = parse_int_token(t, ErrorCode::MalformedHeader, "block count");
  if (blocks != 1) {
    throw Error(ErrorCode::MalformedHeader, "block count " + std::to_string(blocks) + " != 1");
  }
  if (!tok.next(t)) throw Error(ErrorCode::MalformedHeader, "missing dimensions");
  const long ni = parse_int_token(t, ErrorCode::MalformedHeader, "ni");
  if (!tok.next(t)) throw Error(ErrorCode::MalformedHeader, "missing nj");
  const long nj = parse_int_token(t, ErrorCode::MalformedHeader, "nj");
  if (ni < 2 || nj < 2) {
    throw Error(ErrorCode::MalformedHeader,
                "dimensions " + std::to_string(ni) + "x" + std::to_string(nj));
  }

  StructuredMesh mesh;
  mesh.ni = static_cast<int>(ni);
  mesh.nj = static_cast<int>(nj);
  const std::size_t n = static_cast<std::size_t>(ni) * nj;
  mesh.coords.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (!tok.next(t)) {
      throw Error(ErrorCode::TruncatedData,
                  "expected " + std::to_string(2 * n) + " values, got " + std::to_string(k));
    }
    mesh.coords[k].x = parse_double_token(t);
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (!tok.next(t)) {
      throw Error(ErrorCode::TruncatedData,
                  "expected " + std::to_string(2 * n) + " values, got " + std::to_string(n + k));
    }
    mesh.coords[k].y = parse_double_token(t);
  }
  mesh.validate();
  return mesh;
}

std::string format_double(double v) {
  char buf[32];
  // Shortest representation that round-trips.
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

std::string write_plot3d(const StructuredMesh& mesh) {
  std::string out = "1\n" + std::to_string(mesh.ni) + " " + std::to_string(mesh.nj) + "\n";
  const auto dump = [&](auto get) {
    for (std::size_t k = 0; k < mesh.coords.size(); ++k) {
      out += format_double(get(mesh.coords[k]));
      out += ((k + 1) % 5 == 0 || k + 1 == mesh.coords.size()) ? '\n' : ' ';
    }
  };
  dump([](const Point2& p) { return p.x; });
  dump([](const Point2& p) { return p.y; });
  return out;
}

StructuredMesh parse_native(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, e.what());
  }
  if (!doc.is_object() || !doc.contains("ni") || !doc.contains("nj") || !doc.contains("x") ||
      !doc.contains("y") || !doc["ni"].is_number_integer() || !doc["nj"].is_number_integer() ||
      !doc["x"].is_array() || !doc["y"].is_array()) {
    throw Error(ErrorCode::SchemaError, "expected {name?, ni, nj, x[], y[]}");
  }
  StructuredMesh mesh;
  mesh.ni = doc["ni"].get<int>();
  mesh.nj = doc["nj"].get<int>();
  mesh.name = doc.value("name", std::string());
  if (mesh.ni < 2 || mesh.nj < 2) {
    throw Error(ErrorCode::SchemaError,
                "dimensions " + std::to_string(mesh.ni) + "x" + std::to_string(mesh.nj));
  }
  const std::size_t n = static_cast<std::size_t>(mesh.ni) * mesh.nj;
  const auto& xs = doc["x"];
  const auto& ys = doc["y"];
  if (xs.size() != n || ys.size() != n) {
    throw Error(ErrorCode::LengthMismatch,
                "x/y lengths " + std::to_string(xs.size()) + "/" + std::to_string(ys.size()) +
                    " != ni*nj = " + std::to_string(n));
  }
  mesh.coords.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (!xs[k].is_number() || !ys[k].is_number()) {
      throw Error(ErrorCode::NonFiniteCoordinate, "non-numeric coordinate at index " + std::to_string(k));
    }
    mesh.coords[k] = {xs[k].get<double>(), ys[k].get<double>()};
  }
  mesh.validate();
  return mesh;
}

std::string write_native(const StructuredMesh& mesh) {
  nlohmann::json doc;
  doc["name"] = mesh.name;
  doc["ni"] = mesh.ni;
  doc["nj"] = mesh.nj;
  nlohmann::json xs = nlohmann::json::array();
  nlohmann::json ys = nlohmann::json::array();
  for (const Point2& p : mesh.coords) {
    xs.push_back(p.x);
    ys.push_back(p.y);
  }
  doc["x"] = std::move(xs);
  doc["y"] = std::move(ys);
  return doc.dump();
}

StructuredMesh load_mesh_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string ext = std::filesystem::path(path).extension().string();
  StructuredMesh mesh = (ext == ".json" || ext == ".mqem") ? parse_native(ss.str())
                                                           : parse_plot3d(ss.str());
  if (mesh.name.empty()) mesh.name = std::filesystem::path(path).stem().string();
  return mesh;
}

double aspect_ratio_tri(double l0, double l1, double l2) {
  if (!(l0 > 0.0) || !(l1 > 0.0) || !(l2 > 0.0)) {
    throw Error(ErrorCode::DegenerateTriangle, "non-positive side length");
  }
  const double s = (l0 + l1 + l2) / 2.0;
  const double under = s * (s - l0) * (s - l1) * (s - l2);
  if (!(under > 0.0)) {
    throw Error(ErrorCode::DegenerateTriangle, "triangle inequality violated");
  }
  const double area = std::sqrt(under);
  return std::max({l0, l1, l2}) / (4.0 * std::sqrt(3.0) * area);
}

double skewness(double q_max, double q_min, double q_ideal) {
  if (!(q_min >= 0.0) || !(q_min <= q_ideal) || !(q_ideal <= q_max) || !(q_max <= 360.0) ||
      !(q_ideal > 0.0) || !(q_ideal < 180.0)) {
    throw Error(ErrorCode::DomainError,
                "angles (max=" + format_double(q_max) + ", min=" + format_double(q_min) +
                    ", ideal=" + format_double(q_ideal) + ")");
  }
  const double s = std::max((q_max - q_ideal) / (180.0 - q_ideal), (q_ideal - q_min) / q_ideal);
  return std::clamp(s, 0.0, 1.0);
}

std::array<double, 6> cell_features(const StructuredMesh& mesh, int ci, int cj) {
  require_cell_in_range(mesh, ci, cj);
  const CellGeom g = cell_geom(mesh, ci, cj);
  const double area = cell_area_checked(mesh, ci, cj);

  double ar;
  try {
    ar = quad_aspect_ratio(g);
  } catch (const Error&) {
    throw Error(ErrorCode::DegenerateCell,
                "cell (" + std::to_string(ci) + "," + std::to_string(cj) + ") collinear corners");
  }

  const double angles[4] = {
      corner_angle_deg(g.p00, g.p10, g.p01),
      corner_angle_deg(g.p10, g.p11, g.p00),
      corner_angle_deg(g.p11, g.p01, g.p10),
      corner_angle_deg(g.p01, g.p00, g.p11),
  };
  const double q_max = *std::max_element(angles, angles + 4);
  const double q_min = *std::min_element(angles, angles + 4);
  const double skew = skewness(q_max, q_min, 90.0);
  double ortho_dev = 0.0;
  for (double a : angles) ortho_dev = std::max(ortho_dev, std::fabs(a - 90.0));

  // Edge-neighbors in the index lattice.
  const int di[4] = {-1, 1, 0, 0};
  const int dj[4] = {0, 0, -1, 1};
  double smooth = 1.0;
  std::vector<double> centroid_dists;
  for (int k = 0; k < 4; ++k) {
    const int nci = ci + di[k], ncj = cj + dj[k];
    if (nci < 0 || ncj < 0 || nci >= mesh.cells_i() || ncj >= mesh.cells_j()) continue;
    const double narea = cell_area_checked(mesh, nci, ncj);
    smooth = std::max({smooth, area / narea, narea / area});
    const CellGeom ng = cell_geom(mesh, nci, ncj);
    centroid_dists.push_back(dist(g.centroid, ng.centroid));
  }
  double distribution = 0.0;
  if (centroid_dists.size() >= 2) {
    double mean = 0.0;
    for (double d : centroid_dists) mean += d;
    mean /= static_cast<double>(centroid_dists.size());
    double var = 0.0;
    for (double d : centroid_dists) var += (d - mean) * (d - mean);
    var /= static_cast<double>(centroid_dists.size());
    distribution = mean > 0.0 ? std::sqrt(var) / mean : 0.0;
  }

  return {area, ar, skew, ortho_dev, smooth, distribution};
}

QualityReport mesh_quality_report(const StructuredMesh& mesh) {
  mesh.validate();
  QualityReport report;
  report.rows.reserve(static_cast<std::size_t>(mesh.cell_count()));
  for (int cj = 0; cj < mesh.cells_j(); ++cj) {
    for (int ci = 0; ci < mesh.cells_i(); ++ci) {
      const auto f = cell_features(mesh, ci, cj);
      report.rows.push_back({f[0], f[1], f[2], f[3], f[4], f[5]});
    }
  }
  for (int m = 0; m < 6; ++m) {
    QualityAggregate agg;
    agg.min = std::numeric_limits<double>::infinity();
    agg.max = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (const CellQuality& q : report.rows) {
      const double v = q.as_array()[static_cast<std::size_t>(m)];
      agg.min = std::min(agg.min, v);
      agg.max = std::max(agg.max, v);
      sum += v;
    }
    agg.mean = sum / static_cast<double>(report.rows.size());
    report.aggregates[static_cast<std::size_t>(m)] = agg;
  }
  return report;
}

std::string report_to_csv(const StructuredMesh& mesh, const QualityReport& report) {
  std::string out = "ci,cj,area,aspect_ratio,skewness,orthogonality_dev,smoothness,distribution\n";
  std::size_t k = 0;
  for (int cj = 0; cj < mesh.cells_j(); ++cj) {
    for (int ci = 0; ci < mesh.cells_i(); ++ci, ++k) {
      const auto f = report.rows[k].as_array();
      out += std::to_string(ci) + "," + std::to_string(cj);
      for (double v : f) {
        out += ",";
        out += format_double(v);
      }
      out += "\n";
    }
  }
  return out;
}

}  // namespace mqenet
