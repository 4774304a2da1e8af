#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mqenet/mesh.hpp"

namespace mqenet {

enum class GraphMode : std::uint8_t { point = 0, element = 1 };

const char* graph_mode_name(GraphMode mode);
GraphMode graph_mode_from_name(const std::string& name);

using Edge = std::pair<std::int32_t, std::int32_t>;

// Node features + COO adjacency. Edges are stored directed, both
// orientations present, sorted lexicographically, no self loops, no
// duplicates.
struct SparseGraph {
  std::int32_t n = 0;
  std::int32_t f = 0;
  GraphMode mode = GraphMode::point;
  std::vector<double> features;  // n*f row-major
  std::vector<Edge> edges;
  int label = -1;  // -1 = unlabeled
  std::string name;

  double feature(std::int32_t node, std::int32_t k) const {
    return features[static_cast<std::size_t>(node) * f + k];
  }

  void validate() const;
};

// Node -> element incidence: column j holds the 4 corner node indices of
// cell j (row-major cell order).
struct IncidenceMatrix {
  std::int32_t node_count = 0;
  std::int32_t element_count = 0;
  std::vector<std::array<std::int32_t, 4>> corners;  // per element

  std::vector<std::vector<int>> to_dense() const;
};

// Symmetric integer matrix S = E^T * A_N * E stored as sorted COO.
struct StrengthMatrix {
  std::int32_t element_count = 0;
  std::vector<std::tuple<std::int32_t, std::int32_t, std::int32_t>> entries;  // (row, col, value)

  int at(std::int32_t i, std::int32_t j) const;
  std::vector<std::vector<int>> to_dense() const;
};

// Grid-neighbor adjacency over deduplicated mesh nodes (A_S / A_N).
// Features per node: [x, y, boundary_flag].
SparseGraph build_node_adjacency(const StructuredMesh& mesh);

// All unordered pairs {i, j} with strict Euclidean distance < r_p, found
// with a uniform grid hash of cell size r_p. Pairs returned with i < j,
// sorted.
std::vector<Edge> proximity_edges(const std::vector<Point2>& points, double r_p);

// A = A_S ∪ A_P.
SparseGraph build_point_graph(const StructuredMesh& mesh, double r_p);

IncidenceMatrix build_incidence(const StructuredMesh& mesh);

StrengthMatrix strength_matrix(const IncidenceMatrix& e, const SparseGraph& a_n);

// A_ij = 1 iff S_ij == 6 (i != j); returned as directed sorted edge list.
std::vector<Edge> threshold_adjacency(const StrengthMatrix& s);

SparseGraph build_element_graph(const StructuredMesh& mesh);

// 1.5 x minimum grid edge length.
double default_proximity_radius(const StructuredMesh& mesh);

// Serialization.
std::string graph_to_json(const SparseGraph& g);
SparseGraph graph_from_json(const std::string& text);
std::vector<std::uint8_t> graph_to_binary(const SparseGraph& g);
SparseGraph graph_from_binary(const std::vector<std::uint8_t>& bytes);
SparseGraph load_graph_file(const std::string& path);
void save_graph_file(const SparseGraph& g, const std::string& path);

// Timing-only variant used by bench-convert: builds the element adjacency
// with diagonal-ones node adjacency (strength 8 = shared edge).
SparseGraph build_element_graph_diag_ones(const StructuredMesh& mesh);

}  // namespace mqenet
