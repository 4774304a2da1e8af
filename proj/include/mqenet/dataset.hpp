#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mqenet/graph.hpp"
#include "mqenet/mesh.hpp"

namespace mqenet {

// Label order matches the 8 quality classes: W (no defect) then every
// combination of poor orthogonality (O), smoothness (S), distribution (D).
inline const std::array<std::string, 8> kLabelNames = {"W",    "N-O",  "N-S",  "N-D",
                                                       "N-OS", "N-OD", "N-SD", "N-OSD"};

struct DefectFlags {
  bool ortho = false;
  bool smooth = false;
  bool distrib = false;
};

int label_from_flags(const DefectFlags& flags);
DefectFlags flags_from_label(int label);
int label_from_name(const std::string& name);

struct LabeledGraphDataset {
  std::vector<SparseGraph> items;  // each carries its label
  std::vector<std::string> label_names{kLabelNames.begin(), kLabelNames.end()};
  std::string provenance;

  std::size_t size() const { return items.size(); }
};

enum class GridProfile { rect, annulus };

GridProfile grid_profile_from_name(const std::string& name);

// rect: uniform Cartesian on [0,1]^2. annulus: polar sector, radii 1..2,
// quarter turn, i = angular, j = radial.
StructuredMesh gen_base_grid(int ni, int nj, GridProfile profile);

// ortho: shear a contiguous band of j-rows; smooth: alternate j-spacing
// multipliers (1 +/- magnitude); distrib: power-law clustering of the
// i-family. Retries at half magnitude (up to 3 times) if the result
// degenerates.
StructuredMesh inject_defects(const StructuredMesh& mesh, const DefectFlags& flags,
                              double magnitude, std::uint64_t seed);

struct SyntheticSpec {
  int count_per_label = 4;
  int ni = 17;
  int nj = 17;
  GridProfile profile = GridProfile::annulus;
  std::uint64_t seed = 0;
};

LabeledGraphDataset make_synthetic(const SyntheticSpec& spec);

// Per-property aggregate thresholds used by the rule-based reference
// classifier (and by the synthetic-label consistency check).
struct MetricThresholds {
  double max_ortho_dev = 15.0;    // degrees
  double mean_smoothness = 1.9;   // area ratio
  double mean_distribution = 0.17;
};

// Measures the three quality aggregates of a mesh and thresholds them.
DefectFlags classify_by_metrics(const StructuredMesh& mesh,
                                const MetricThresholds& thresholds = {});

struct LoadReport {
  std::size_t loaded = 0;
  std::size_t skipped = 0;
  std::vector<std::string> messages;
};

// Graph dataset directory: manifest.json + one graph file per item.
void save_dataset(const LabeledGraphDataset& ds, const std::string& dir);
LabeledGraphDataset load_graph_dataset(const std::string& dir, LoadReport* report = nullptr);

// Mesh ingestion (NACA-Market layout): a manifest.json mapping relative
// mesh paths to label names, or per-label subdirectories. Each mesh is
// converted to an element-mode graph; unparsable files are skipped and
// reported.
LabeledGraphDataset load_mesh_dataset(const std::string& dir, LoadReport* report = nullptr);

}  // namespace mqenet
