#include "mqenet/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <unordered_map>

#include <json.hpp>

namespace mqenet {

namespace {

void sort_unique(std::vector<Edge>& edges) {
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
}

std::vector<Edge> symmetrize(const std::vector<Edge>& undirected) {
  std::vector<Edge> out;
  out.reserve(undirected.size() * 2);
  for (const Edge& e : undirected) {
    out.emplace_back(e.first, e.second);
    out.emplace_back(e.second, e.first);
  }
  sort_unique(out);
  return out;
}

// Shared core of the element-graph build; diag_ones reproduces the
// baseline formulation (node self-adjacency included, threshold 8) and
// exists only for the conversion benchmark.
SparseGraph element_graph_impl(const StructuredMesh& mesh, bool diag_ones) {
  mesh.validate();
  const IncidenceMatrix e = build_incidence(mesh);
  SparseGraph a_n = build_node_adjacency(mesh);
  if (diag_ones) {
    for (std::int32_t i = 0; i < a_n.n; ++i) a_n.edges.emplace_back(i, i);
    std::sort(a_n.edges.begin(), a_n.edges.end());
  }
  const StrengthMatrix s = strength_matrix(e, a_n);

  const int threshold = diag_ones ? 8 : 6;
  std::vector<Edge> edges;
  for (const auto& [i, j, v] : s.entries) {
    if (i != j && v == threshold) edges.emplace_back(i, j);
  }
  sort_unique(edges);

  SparseGraph g;
  g.mode = GraphMode::element;
  g.n = e.element_count;
  g.f = 6;
  g.name = mesh.name;
  g.features.resize(static_cast<std::size_t>(g.n) * 6);
  for (int cj = 0; cj < mesh.cells_j(); ++cj) {
    for (int ci = 0; ci < mesh.cells_i(); ++ci) {
      const auto feat = cell_features(mesh, ci, cj);
      const std::size_t row = static_cast<std::size_t>(cj) * mesh.cells_i() + ci;
      std::copy(feat.begin(), feat.end(), g.features.begin() + row * 6);
    }
  }
  g.edges = std::move(edges);
  return g;
}

}  // namespace

const char* graph_mode_name(GraphMode mode) {
  return mode == GraphMode::point ? "point" : "element";
}

GraphMode graph_mode_from_name(const std::string& name) {
  if (name == "point") return GraphMode::point;
  if (name == "element") return GraphMode::element;
  throw Error(ErrorCode::SchemaError, "unknown graph mode '" + name + "'");
}

void SparseGraph::validate() const {
  if (n < 0 || f < 0 || features.size() != static_cast<std::size_t>(n) * f) {
    throw Error(ErrorCode::ShapeMismatch, "feature matrix size mismatch");
  }
  for (double v : features) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteCoordinate, "non-finite feature");
  }
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const auto& [r, c] = edges[k];
    if (r < 0 || c < 0 || r >= n || c >= n) {
      throw Error(ErrorCode::IndexOutOfRange, "edge index out of range");
    }
    if (r == c) throw Error(ErrorCode::SchemaError, "self loop stored in graph");
    if (k > 0 && !(edges[k - 1] < edges[k])) {
      throw Error(ErrorCode::SchemaError, "edges not sorted/unique");
    }
  }
  // Symmetry: each directed pair must have its reverse present.
  for (const Edge& e : edges) {
    if (!std::binary_search(edges.begin(), edges.end(), Edge{e.second, e.first})) {
      throw Error(ErrorCode::SchemaError, "asymmetric edge list");
    }
  }
}

SparseGraph build_node_adjacency(const StructuredMesh& mesh) {
  mesh.validate();
  SparseGraph g;
  g.mode = GraphMode::point;
  g.n = mesh.node_count();
  g.f = 3;
  g.name = mesh.name;
  g.features.resize(static_cast<std::size_t>(g.n) * 3);
  for (int j = 0; j < mesh.nj; ++j) {
    for (int i = 0; i < mesh.ni; ++i) {
      const std::size_t idx = static_cast<std::size_t>(j) * mesh.ni + i;
      const Point2& p = mesh.node(i, j);
      const bool boundary = (i == 0 || i == mesh.ni - 1 || j == 0 || j == mesh.nj - 1);
      g.features[idx * 3 + 0] = p.x;
      g.features[idx * 3 + 1] = p.y;
      g.features[idx * 3 + 2] = boundary ? 1.0 : 0.0;
    }
  }
  std::vector<Edge> und;
  und.reserve(static_cast<std::size_t>(mesh.nj) * (mesh.ni - 1) +
              static_cast<std::size_t>(mesh.ni) * (mesh.nj - 1));
  for (int j = 0; j < mesh.nj; ++j) {
    for (int i = 0; i + 1 < mesh.ni; ++i) {
      und.emplace_back(j * mesh.ni + i, j * mesh.ni + i + 1);
    }
  }
  for (int j = 0; j + 1 < mesh.nj; ++j) {
    for (int i = 0; i < mesh.ni; ++i) {
      und.emplace_back(j * mesh.ni + i, (j + 1) * mesh.ni + i);
    }
  }
  g.edges = symmetrize(und);
  return g;
}

std::vector<Edge> proximity_edges(const std::vector<Point2>& points, double r_p) {
  if (!(r_p > 0.0)) throw Error(ErrorCode::NonPositiveRadius, "r_p = " + format_double(r_p));
  for (const Point2& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw Error(ErrorCode::NonFiniteCoordinate, "proximity query point");
    }
  }

  // Uniform grid hash, bucket size r_p: candidates live in the 3x3
  // neighborhood of a point's bucket.
  const auto key = [r_p](const Point2& p) {
    return std::pair<std::int64_t, std::int64_t>{
        static_cast<std::int64_t>(std::floor(p.x / r_p)),
        static_cast<std::int64_t>(std::floor(p.y / r_p))};
  };
  struct KeyHash {
    std::size_t operator()(const std::pair<std::int64_t, std::int64_t>& k) const {
      return std::hash<std::int64_t>()(k.first * 0x9E3779B97F4A7C15LL + k.second);
    }
  };
  std::unordered_map<std::pair<std::int64_t, std::int64_t>, std::vector<std::int32_t>, KeyHash>
      buckets;
  for (std::size_t i = 0; i < points.size(); ++i) {
    buckets[key(points[i])].push_back(static_cast<std::int32_t>(i));
  }

  const double r2 = r_p * r_p;
  std::vector<Edge> out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto [bx, by] = key(points[i]);
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        const auto it = buckets.find({bx + dx, by + dy});
        if (it == buckets.end()) continue;
        for (std::int32_t j : it->second) {
          if (j <= static_cast<std::int32_t>(i)) continue;
          const double ddx = points[i].x - points[j].x;
          const double ddy = points[i].y - points[j].y;
          if (ddx * ddx + ddy * ddy < r2) {
            out.emplace_back(static_cast<std::int32_t>(i), j);
          }
        }
      }
    }
  }
  sort_unique(out);
  return out;
}

SparseGraph build_point_graph(const StructuredMesh& mesh, double r_p) {
  SparseGraph g = build_node_adjacency(mesh);
  const std::vector<Edge> prox = proximity_edges(mesh.coords, r_p);
  std::vector<Edge> all = g.edges;
  for (const Edge& e : prox) {
    all.emplace_back(e.first, e.second);
    all.emplace_back(e.second, e.first);
  }
  sort_unique(all);
  g.edges = std::move(all);
  return g;
}

IncidenceMatrix build_incidence(const StructuredMesh& mesh) {
  mesh.validate();
  IncidenceMatrix e;
  e.node_count = mesh.node_count();
  e.element_count = mesh.cell_count();
  e.corners.reserve(static_cast<std::size_t>(e.element_count));
  for (int cj = 0; cj < mesh.cells_j(); ++cj) {
    for (int ci = 0; ci < mesh.cells_i(); ++ci) {
      e.corners.push_back({cj * mesh.ni + ci, cj * mesh.ni + ci + 1,
                           (cj + 1) * mesh.ni + ci, (cj + 1) * mesh.ni + ci + 1});
    }
  }
  return e;
}

std::vector<std::vector<int>> IncidenceMatrix::to_dense() const {
  std::vector<std::vector<int>> m(static_cast<std::size_t>(node_count),
                                  std::vector<int>(static_cast<std::size_t>(element_count), 0));
  for (std::int32_t j = 0; j < element_count; ++j) {
    for (std::int32_t node : corners[static_cast<std::size_t>(j)]) {
      m[static_cast<std::size_t>(node)][static_cast<std::size_t>(j)] = 1;
    }
  }
  return m;
}

int StrengthMatrix::at(std::int32_t i, std::int32_t j) const {
  for (const auto& [r, c, v] : entries) {
    if (r == i && c == j) return v;
  }
  return 0;
}

std::vector<std::vector<int>> StrengthMatrix::to_dense() const {
  std::vector<std::vector<int>> m(static_cast<std::size_t>(element_count),
                                  std::vector<int>(static_cast<std::size_t>(element_count), 0));
  for (const auto& [r, c, v] : entries) {
    m[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = v;
  }
  return m;
}

StrengthMatrix strength_matrix(const IncidenceMatrix& e, const SparseGraph& a_n) {
  if (a_n.n != e.node_count) {
    throw Error(ErrorCode::DimensionMismatch,
                "A_N has " + std::to_string(a_n.n) + " nodes, E has " +
                    std::to_string(e.node_count));
  }

  // node -> elements containing it (<= 4 each for a structured quad mesh)
  std::vector<std::vector<std::int32_t>> node_elems(static_cast<std::size_t>(e.node_count));
  for (std::int32_t j = 0; j < e.element_count; ++j) {
    for (std::int32_t node : e.corners[static_cast<std::size_t>(j)]) {
      node_elems[static_cast<std::size_t>(node)].push_back(j);
    }
  }

  // CSR-style adjacency offsets over the sorted edge list.
  std::vector<std::size_t> offsets(static_cast<std::size_t>(a_n.n) + 1, 0);
  for (const Edge& ed : a_n.edges) offsets[static_cast<std::size_t>(ed.first) + 1]++;
  for (std::size_t i = 1; i < offsets.size(); ++i) offsets[i] += offsets[i - 1];

  // S = E^T (A_N E): for every element j, walk its corner nodes' A_N
  // neighborhoods and scatter into the elements containing each neighbor.
  // Never densified; the accumulator only touches elements sharing nodes.
  StrengthMatrix s;
  s.element_count = e.element_count;
  std::unordered_map<std::int32_t, int> row_acc;
  for (std::int32_t j = 0; j < e.element_count; ++j) {
    row_acc.clear();
    for (std::int32_t u : e.corners[static_cast<std::size_t>(j)]) {
      for (std::size_t k = offsets[static_cast<std::size_t>(u)];
           k < offsets[static_cast<std::size_t>(u) + 1]; ++k) {
        const std::int32_t v = a_n.edges[k].second;
        for (std::int32_t other : node_elems[static_cast<std::size_t>(v)]) {
          row_acc[other] += 1;
        }
      }
    }
    std::vector<std::pair<std::int32_t, int>> row(row_acc.begin(), row_acc.end());
    std::sort(row.begin(), row.end());
    for (const auto& [col, val] : row) s.entries.emplace_back(j, col, val);
  }
  return s;
}

std::vector<Edge> threshold_adjacency(const StrengthMatrix& s) {
  std::vector<Edge> edges;
  for (const auto& [i, j, v] : s.entries) {
    if (i != j && v == 6) edges.emplace_back(i, j);
  }
  sort_unique(edges);
  return edges;
}

SparseGraph build_element_graph(const StructuredMesh& mesh) {
  return element_graph_impl(mesh, false);
}

SparseGraph build_element_graph_diag_ones(const StructuredMesh& mesh) {
  return element_graph_impl(mesh, true);
}

double default_proximity_radius(const StructuredMesh& mesh) {
  mesh.validate();
  double min_len = std::numeric_limits<double>::infinity();
  for (int j = 0; j < mesh.nj; ++j) {
    for (int i = 0; i < mesh.ni; ++i) {
      if (i + 1 < mesh.ni) {
        min_len = std::min(min_len, std::hypot(mesh.node(i + 1, j).x - mesh.node(i, j).x,
                                               mesh.node(i + 1, j).y - mesh.node(i, j).y));
      }
      if (j + 1 < mesh.nj) {
        min_len = std::min(min_len, std::hypot(mesh.node(i, j + 1).x - mesh.node(i, j).x,
                                               mesh.node(i, j + 1).y - mesh.node(i, j).y));
      }
    }
  }
  return 1.5 * min_len;
}

std::string graph_to_json(const SparseGraph& g) {
  nlohmann::json doc;
  doc["mode"] = graph_mode_name(g.mode);
  doc["n"] = g.n;
  doc["f"] = g.f;
  doc["name"] = g.name;
  doc["features"] = g.features;
  nlohmann::json edges = nlohmann::json::array();
  for (const Edge& e : g.edges) {
    edges.push_back(e.first);
    edges.push_back(e.second);
  }
  doc["edges"] = std::move(edges);
  if (g.label >= 0) doc["label"] = g.label;
  return doc.dump();
}

SparseGraph graph_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, e.what());
  }
  if (!doc.is_object() || !doc.contains("mode") || !doc.contains("n") || !doc.contains("f") ||
      !doc.contains("features") || !doc.contains("edges")) {
    throw Error(ErrorCode::SchemaError, "expected {mode, n, f, features, edges, label?, name?}");
  }
  SparseGraph g;
  g.mode = graph_mode_from_name(doc["mode"].get<std::string>());
  g.n = doc["n"].get<std::int32_t>();
  g.f = doc["f"].get<std::int32_t>();
  g.name = doc.value("name", std::string());
  g.label = doc.value("label", -1);
  g.features = doc["features"].get<std::vector<double>>();
  const auto& flat = doc["edges"];
  if (flat.size() % 2 != 0) throw Error(ErrorCode::SchemaError, "odd edge array length");
  g.edges.reserve(flat.size() / 2);
  for (std::size_t k = 0; k + 1 < flat.size(); k += 2) {
    g.edges.emplace_back(flat[k].get<std::int32_t>(), flat[k + 1].get<std::int32_t>());
  }
  g.validate();
  return g;
}

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T take(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw Error(ErrorCode::TruncatedData, "binary graph");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::vector<std::uint8_t> graph_to_binary(const SparseGraph& g) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'M', 'Q', 'E', 'G'});
  put<std::uint32_t>(out, static_cast<std::uint32_t>(g.n));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(g.f));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(g.mode));
  for (double v : g.features) put<double>(out, v);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(g.edges.size()));
  for (const Edge& e : g.edges) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.first));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.second));
  }
  return out;
}

SparseGraph graph_from_binary(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "MQEG", 4) != 0) {
    throw Error(ErrorCode::MalformedHeader, "missing MQEG magic");
  }
  std::size_t pos = 4;
  SparseGraph g;
  g.n = static_cast<std::int32_t>(take<std::uint32_t>(bytes, pos));
  g.f = static_cast<std::int32_t>(take<std::uint32_t>(bytes, pos));
  const std::uint8_t mode = take<std::uint8_t>(bytes, pos);
  if (mode > 1) throw Error(ErrorCode::SchemaError, "bad graph mode byte");
  g.mode = static_cast<GraphMode>(mode);
  g.features.resize(static_cast<std::size_t>(g.n) * g.f);
  for (double& v : g.features) v = take<double>(bytes, pos);
  const std::uint32_t ne = take<std::uint32_t>(bytes, pos);
  g.edges.reserve(ne);
  for (std::uint32_t k = 0; k < ne; ++k) {
    const auto r = static_cast<std::int32_t>(take<std::uint32_t>(bytes, pos));
    const auto c = static_cast<std::int32_t>(take<std::uint32_t>(bytes, pos));
    g.edges.emplace_back(r, c);
  }
  g.validate();
  return g;
}

SparseGraph load_graph_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  SparseGraph g;
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), "MQEG", 4) == 0) {
    g = graph_from_binary(bytes);
  } else {
    g = graph_from_json(std::string(bytes.begin(), bytes.end()));
  }
  if (g.name.empty()) g.name = std::filesystem::path(path).stem().string();
  return g;
}

void save_graph_file(const SparseGraph& g, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open '" + path + "' for writing");
  if (std::filesystem::path(path).extension() == ".mqeg") {
    const auto bytes = graph_to_binary(g);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  } else {
    out << graph_to_json(g);
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for '" + path + "'");
}

}  // namespace mqenet
