#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "mqenet/mesh.hpp"

using namespace mqenet;

namespace {

StructuredMesh unit_grid(int ni, int nj) {
  StructuredMesh m;
  m.ni = ni;
  m.nj = nj;
  m.coords.resize(static_cast<std::size_t>(ni) * nj);
  for (int j = 0; j < nj; ++j) {
    for (int i = 0; i < ni; ++i) {
      m.node(i, j) = {static_cast<double>(i), static_cast<double>(j)};
    }
  }
  return m;
}

}  // namespace

TEST_CASE("triangle aspect ratio matches hand-computed values") {
  // Equilateral: longest/(4*sqrt(3)*area) = 1/(4*sqrt(3)*(sqrt(3)/4)) = 1/3.
  CHECK(aspect_ratio_tri(1.0, 1.0, 1.0) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  // 3-4-5 right triangle: area 6, AR = 5/(24*sqrt(3)).
  CHECK(aspect_ratio_tri(3.0, 4.0, 5.0) ==
        doctest::Approx(5.0 / (24.0 * std::sqrt(3.0))).epsilon(1e-14));
  // Length/area measure: doubling every side halves it.
  CHECK(aspect_ratio_tri(2.0, 2.0, 2.0) == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
}

TEST_CASE("degenerate triangles are rejected") {
  CHECK_THROWS_AS(aspect_ratio_tri(1.0, 1.0, 2.0), Error);  // collinear
  CHECK_THROWS_AS(aspect_ratio_tri(0.0, 1.0, 1.0), Error);
  CHECK_THROWS_AS(aspect_ratio_tri(1.0, 1.0, 5.0), Error);  // inequality violated
}

TEST_CASE("skewness of known angle sets") {
  CHECK(skewness(90.0, 90.0, 90.0) == 0.0);
  CHECK(skewness(120.0, 60.0, 90.0) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(skewness(180.0, 0.0, 90.0) == 1.0);
  // Asymmetric: max((100-90)/90, (90-80)/90) = 1/9.
  CHECK(skewness(100.0, 80.0, 90.0) == doctest::Approx(1.0 / 9.0).epsilon(1e-14));
  CHECK_THROWS_AS(skewness(80.0, 100.0, 90.0), Error);  // max < min
}

TEST_CASE("unit square cell features") {
  const StructuredMesh m = unit_grid(2, 2);
  const auto f = cell_features(m, 0, 0);
  CHECK(f[0] == doctest::Approx(1.0).epsilon(1e-14));  // area
  // Right isoceles triangle (1, 1, sqrt2): AR = sqrt(2)/(4*sqrt(3)*0.5).
  CHECK(f[1] == doctest::Approx(std::sqrt(2.0) / (2.0 * std::sqrt(3.0))).epsilon(1e-14));
  CHECK(f[2] == doctest::Approx(0.0));          // skewness
  CHECK(f[3] == doctest::Approx(0.0));          // orthogonality deviation
  CHECK(f[4] == doctest::Approx(1.0));          // smoothness (no neighbors)
  CHECK(f[5] == doctest::Approx(0.0));          // distribution (<2 neighbors)
}

TEST_CASE("sheared parallelogram angles and skewness") {
  // (0,0) (1,0) (1.5,1) (0.5,1): interior angles 63.4349.. and 116.5650..
  StructuredMesh m;
  m.ni = 2;
  m.nj = 2;
  m.coords = {{0.0, 0.0}, {1.0, 0.0}, {0.5, 1.0}, {1.5, 1.0}};
  const auto f = cell_features(m, 0, 0);
  const double dev = 90.0 - std::atan2(1.0, 0.5) * 180.0 / 3.14159265358979323846;
  CHECK(f[3] == doctest::Approx(dev).epsilon(1e-12));
  CHECK(f[2] == doctest::Approx(dev / 90.0).epsilon(1e-12));
  CHECK(f[0] == doctest::Approx(1.0).epsilon(1e-14));  // base 1, height 1
}

TEST_CASE("smoothness and distribution respond to uneven neighbors") {
  // 3x2 cells of widths 1, 3, 1: middle cell has area ratio 3 both ways.
  StructuredMesh m;
  m.ni = 4;
  m.nj = 2;
  m.coords = {{0, 0}, {1, 0}, {4, 0}, {5, 0}, {0, 1}, {1, 1}, {4, 1}, {5, 1}};
  const auto mid = cell_features(m, 1, 0);
  CHECK(mid[4] == doctest::Approx(3.0).epsilon(1e-14));
  // centroids at x=0.5, 2.5, 4.5 -> distances 2 and 2 -> zero dispersion
  CHECK(mid[5] == doctest::Approx(0.0));
  const auto left = cell_features(m, 0, 0);
  CHECK(left[4] == doctest::Approx(3.0).epsilon(1e-14));

  // Uneven centroid spacing: widths 1, 1, 3 -> middle sees 1 and 2.
  StructuredMesh m2 = m;
  m2.coords = {{0, 0}, {1, 0}, {2, 0}, {5, 0}, {0, 1}, {1, 1}, {2, 1}, {5, 1}};
  const auto mid2 = cell_features(m2, 1, 0);
  // distances {1, 2}: mean 1.5, std 0.5 -> 1/3
  CHECK(mid2[5] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("degenerate cell throws with its location") {
  StructuredMesh m = unit_grid(3, 2);
  m.node(1, 1) = m.node(1, 0);  // collapse one edge
  m.node(2, 1) = m.node(2, 0);
  CHECK_THROWS_WITH_AS(cell_features(m, 1, 0), doctest::Contains("(1,0)"), Error);
}

TEST_CASE("plot3d parse maps i fastest within j") {
  const std::string text = "1\n3 2\n0 1 2 0 1 2\n5 5 5 6 6 6\n";
  const StructuredMesh m = parse_plot3d(text);
  CHECK(m.ni == 3);
  CHECK(m.nj == 2);
  CHECK(m.node(1, 0).x == 1.0);
  CHECK(m.node(1, 0).y == 5.0);
  CHECK(m.node(2, 1).x == 2.0);
  CHECK(m.node(2, 1).y == 6.0);
}

TEST_CASE("plot3d round trip is exact") {
  StructuredMesh m = unit_grid(4, 3);
  m.node(2, 1).x = 0.1 + 0.2;  // not exactly representable sum
  m.node(1, 2).y = -1.0 / 3.0;
  const StructuredMesh back = parse_plot3d(write_plot3d(m));
  REQUIRE(back.coords.size() == m.coords.size());
  for (std::size_t k = 0; k < m.coords.size(); ++k) {
    CHECK(back.coords[k].x == m.coords[k].x);
    CHECK(back.coords[k].y == m.coords[k].y);
  }
}

TEST_CASE("plot3d rejects malformed input") {
  CHECK_THROWS_AS(parse_plot3d(""), Error);
  CHECK_THROWS_AS(parse_plot3d("2\n2 2\n0 0 0 0 0 0 0 0"), Error);  // multi-block
  CHECK_THROWS_AS(parse_plot3d("1\n2 2\n0 1 0 1 0 0"), Error);      // truncated
  CHECK_THROWS_AS(parse_plot3d("1\n1 2\n0 0 0 0"), Error);          // ni too small
  CHECK_THROWS_AS(parse_plot3d("1\n2 2\n0 1 0 1 0 0 1e999 1"), Error);  // overflow
  try {
    parse_plot3d("1\n2 2\n0 1 0 1 0 0");
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TruncatedData);
  }
}

TEST_CASE("native json round trip is exact") {
  StructuredMesh m = unit_grid(3, 3);
  m.name = "sample";
  m.node(1, 1).x = 0.30000000000000004;
  const StructuredMesh back = parse_native(write_native(m));
  CHECK(back.name == "sample");
  CHECK(back.node(1, 1).x == m.node(1, 1).x);
  CHECK_THROWS_AS(parse_native("{\"ni\": 2, \"nj\": 2}"), Error);
  CHECK_THROWS_AS(parse_native("not json"), Error);
  CHECK_THROWS_AS(parse_native("{\"ni\":2,\"nj\":2,\"x\":[0,1,0],\"y\":[0,0,1,1]}"), Error);
}

TEST_CASE("mesh validate catches bad shapes") {
  StructuredMesh m = unit_grid(3, 3);
  m.coords.pop_back();
  CHECK_THROWS_AS(m.validate(), Error);
  StructuredMesh tiny;
  tiny.ni = 1;
  tiny.nj = 3;
  tiny.coords.resize(3);
  CHECK_THROWS_AS(tiny.validate(), Error);
  StructuredMesh nan_mesh = unit_grid(2, 2);
  nan_mesh.coords[0].x = std::nan("");
  CHECK_THROWS_AS(nan_mesh.validate(), Error);
}

TEST_CASE("quality report aggregates min/max/mean") {
  const StructuredMesh m = unit_grid(4, 4);
  const QualityReport rep = mesh_quality_report(m);
  CHECK(rep.rows.size() == 9);
  CHECK(rep.aggregates[0].min == doctest::Approx(1.0));
  CHECK(rep.aggregates[0].max == doctest::Approx(1.0));
  CHECK(rep.aggregates[0].mean == doctest::Approx(1.0));
  CHECK(rep.aggregates[3].max == doctest::Approx(0.0));

  const std::string csv = report_to_csv(m, rep);
  CHECK(csv.substr(0, csv.find('\n')) ==
        "ci,cj,area,aspect_ratio,skewness,orthogonality_dev,smoothness,distribution");
  // header + one row per cell
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 10);
}

TEST_CASE("format_double round-trips shortest decimal") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1.0) == "1");
  CHECK(format_double(-2.5e-7) == "-2.5e-07");
  const double v = 0.30000000000000004;
  CHECK(std::stod(format_double(v)) == v);
}
