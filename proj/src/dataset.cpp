#include "mqenet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mqenet/rng.hpp"

namespace fs = std::filesystem;

namespace mqenet {

namespace {

constexpr double kPi = 3.14159265358979323846;

bool mesh_is_valid(const StructuredMesh& mesh) {
  try {
    mesh.validate();
    for (int cj = 0; cj < mesh.cells_j(); ++cj) {
      for (int ci = 0; ci < mesh.cells_i(); ++ci) {
        cell_features(mesh, ci, cj);
      }
    }
  } catch (const Error&) {
    return false;
  }
  return true;
}

// Shear a contiguous band of j-rows along the local i-tangent; rows above
// the band are translated rigidly so only band cells deform.
void apply_ortho_defect(StructuredMesh& mesh, double magnitude, SplitMix64& rng) {
  const int band = std::max(2, mesh.nj / 3);
  const int j0 = 1 + static_cast<int>(rng.next_below(
                         static_cast<std::uint64_t>(std::max(1, mesh.nj - band - 1))));
  const int j1 = std::min(mesh.nj - 1, j0 + band);
  const double shear = std::tan(45.0 * magnitude * kPi / 180.0);

  const StructuredMesh base = mesh;
  std::vector<double> offset(static_cast<std::size_t>(mesh.ni), 0.0);
  for (int j = j0; j < mesh.nj; ++j) {
    for (int i = 0; i < mesh.ni; ++i) {
      if (j <= j1) {
        const Point2& below = base.node(i, j - 1);
        const Point2& here = base.node(i, j);
        offset[static_cast<std::size_t>(i)] += shear * std::hypot(here.x - below.x, here.y - below.y);
      }
      // local i-tangent (central difference where possible)
      const int il = std::max(0, i - 1), ir = std::min(mesh.ni - 1, i + 1);
      const Point2& a = base.node(il, j);
      const Point2& b = base.node(ir, j);
      const double len = std::hypot(b.x - a.x, b.y - a.y);
      if (len <= 0.0) continue;
      mesh.node(i, j).x += offset[static_cast<std::size_t>(i)] * (b.x - a.x) / len;
      mesh.node(i, j).y += offset[static_cast<std::size_t>(i)] * (b.y - a.y) / len;
    }
  }
}

// Reparameterize each i-column along its polyline with alternating
// spacing multipliers; creates abrupt area jumps between adjacent rows.
void apply_smooth_defect(StructuredMesh& mesh, double magnitude) {
  const StructuredMesh base = mesh;
  const std::size_t nseg = static_cast<std::size_t>(mesh.nj - 1);
  for (int i = 0; i < mesh.ni; ++i) {
    std::vector<double> seg_len(nseg), t_orig(static_cast<std::size_t>(mesh.nj), 0.0);
    for (int j = 0; j + 1 < mesh.nj; ++j) {
      const Point2& a = base.node(i, j);
      const Point2& b = base.node(i, j + 1);
      seg_len[static_cast<std::size_t>(j)] = std::hypot(b.x - a.x, b.y - a.y);
      t_orig[static_cast<std::size_t>(j) + 1] =
          t_orig[static_cast<std::size_t>(j)] + seg_len[static_cast<std::size_t>(j)];
    }
    const double total = t_orig.back();
    if (total <= 0.0) continue;
    std::vector<double> t_new(static_cast<std::size_t>(mesh.nj), 0.0);
    for (std::size_t j = 0; j < nseg; ++j) {
      const double w = j % 2 == 0 ? 1.0 + magnitude : 1.0 - magnitude;
      t_new[j + 1] = t_new[j] + seg_len[j] * w;
    }
    const double ratio = total / t_new.back();
    for (double& t : t_new) t *= ratio;
    // Place interior rows at the new arclengths along the original polyline.
    for (int j = 1; j + 1 < mesh.nj; ++j) {
      const double target = t_new[static_cast<std::size_t>(j)];
      std::size_t s = 0;
      while (s + 1 < nseg && t_orig[s + 1] < target) ++s;
      const double local = seg_len[s] > 0.0 ? (target - t_orig[s]) / seg_len[s] : 0.0;
      const Point2& a = base.node(i, static_cast<int>(s));
      const Point2& b = base.node(i, static_cast<int>(s) + 1);
      mesh.node(i, j) = {a.x + local * (b.x - a.x), a.y + local * (b.y - a.y)};
    }
  }
}

// Power-law clustering of the i-family: index fraction u -> u^(1+2m).
void apply_distrib_defect(StructuredMesh& mesh, double magnitude) {
  const StructuredMesh base = mesh;
  const double p = 1.0 + 2.0 * magnitude;
  const std::size_t nseg = static_cast<std::size_t>(mesh.ni - 1);
  for (int j = 0; j < mesh.nj; ++j) {
    std::vector<double> seg_len(nseg), t_orig(static_cast<std::size_t>(mesh.ni), 0.0);
    for (int i = 0; i + 1 < mesh.ni; ++i) {
      const Point2& a = base.node(i, j);
      const Point2& b = base.node(i + 1, j);
      seg_len[static_cast<std::size_t>(i)] = std::hypot(b.x - a.x, b.y - a.y);
      t_orig[static_cast<std::size_t>(i) + 1] =
          t_orig[static_cast<std::size_t>(i)] + seg_len[static_cast<std::size_t>(i)];
    }
    const double total = t_orig.back();
    if (total <= 0.0) continue;
    for (int i = 1; i + 1 < mesh.ni; ++i) {
      const double u = static_cast<double>(i) / static_cast<double>(mesh.ni - 1);
      const double target = total * std::pow(u, p);
      std::size_t s = 0;
      while (s + 1 < nseg && t_orig[s + 1] < target) ++s;
      const double local = seg_len[s] > 0.0 ? (target - t_orig[s]) / seg_len[s] : 0.0;
      const Point2& a = base.node(static_cast<int>(s), j);
      const Point2& b = base.node(static_cast<int>(s) + 1, j);
      mesh.node(i, j) = {a.x + local * (b.x - a.x), a.y + local * (b.y - a.y)};
    }
  }
}

std::string label_dir_name(int label) {
  std::string name = kLabelNames[static_cast<std::size_t>(label)];
  std::replace(name.begin(), name.end(), '-', '_');
  return name;
}

}  // namespace

int label_from_flags(const DefectFlags& f) {
  if (!f.ortho && !f.smooth && !f.distrib) return 0;
  if (f.ortho && !f.smooth && !f.distrib) return 1;
  if (!f.ortho && f.smooth && !f.distrib) return 2;
  if (!f.ortho && !f.smooth && f.distrib) return 3;
  if (f.ortho && f.smooth && !f.distrib) return 4;
  if (f.ortho && !f.smooth && f.distrib) return 5;
  if (!f.ortho && f.smooth && f.distrib) return 6;
  return 7;
}

DefectFlags flags_from_label(int label) {
  switch (label) {
    case 0: return {false, false, false};
    case 1: return {true, false, false};
    case 2: return {false, true, false};
    case 3: return {false, false, true};
    case 4: return {true, true, false};
    case 5: return {true, false, true};
    case 6: return {false, true, true};
    case 7: return {true, true, true};
    default: throw Error(ErrorCode::InvalidTarget, "label " + std::to_string(label));
  }
}

int label_from_name(const std::string& name) {
  for (std::size_t k = 0; k < kLabelNames.size(); ++k) {
    if (name == kLabelNames[k] || name == label_dir_name(static_cast<int>(k))) {
      return static_cast<int>(k);
    }
  }
  throw Error(ErrorCode::SchemaError, "unknown label '" + name + "'");
}

GridProfile grid_profile_from_name(const std::string& name) {
  if (name == "rect") return GridProfile::rect;
  if (name == "annulus") return GridProfile::annulus;
  throw Error(ErrorCode::SchemaError, "unknown grid profile '" + name + "'");
}

StructuredMesh gen_base_grid(int ni, int nj, GridProfile profile) {
  if (ni < 3 || nj < 3) {
    throw Error(ErrorCode::DimensionTooSmall,
                std::to_string(ni) + "x" + std::to_string(nj) + " (need at least 3x3)");
  }
  StructuredMesh mesh;
  mesh.ni = ni;
  mesh.nj = nj;
  mesh.coords.resize(static_cast<std::size_t>(ni) * nj);
  for (int j = 0; j < nj; ++j) {
    for (int i = 0; i < ni; ++i) {
      if (profile == GridProfile::rect) {
        mesh.node(i, j) = {static_cast<double>(i) / (ni - 1), static_cast<double>(j) / (nj - 1)};
      } else {
        // Sector arc chosen so mid-radius cells are square: arc length at
        // r = 1.5 equals the radial extent.
        const double r = 1.0 + static_cast<double>(j) / (nj - 1);
        const double theta = (2.0 / 3.0) * static_cast<double>(i) / (ni - 1);
        mesh.node(i, j) = {r * std::cos(theta), r * std::sin(theta)};
      }
    }
  }
  mesh.name = profile == GridProfile::rect ? "rect" : "annulus";
  return mesh;
}

StructuredMesh inject_defects(const StructuredMesh& mesh, const DefectFlags& flags,
                              double magnitude, std::uint64_t seed) {
  if (!(magnitude > 0.0 && magnitude <= 1.0)) {
    throw Error(ErrorCode::DomainError, "magnitude must be in (0, 1]");
  }
  mesh.validate();
  if (!flags.ortho && !flags.smooth && !flags.distrib) return mesh;

  double m = magnitude;
  for (int attempt = 0; attempt < 3; ++attempt, m *= 0.5) {
    StructuredMesh out = mesh;
    SplitMix64 rng(seed);
    if (flags.distrib) apply_distrib_defect(out, m);
    if (flags.smooth) apply_smooth_defect(out, m);
    if (flags.ortho) apply_ortho_defect(out, m, rng);
    if (mesh_is_valid(out)) return out;
  }
  throw Error(ErrorCode::DefectCollapse, "mesh '" + mesh.name + "' at magnitude " +
                                             format_double(magnitude));
}

LabeledGraphDataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.count_per_label < 1) {
    throw Error(ErrorCode::DomainError, "count_per_label must be >= 1");
  }
  LabeledGraphDataset ds;
  {
    std::ostringstream prov;
    prov << "synthetic(seed=" << spec.seed << ", grid=" << spec.ni << "x" << spec.nj
         << ", profile=" << (spec.profile == GridProfile::rect ? "rect" : "annulus")
         << ", per_label=" << spec.count_per_label << ")";
    ds.provenance = prov.str();
  }
  const StructuredMesh base = gen_base_grid(spec.ni, spec.nj, spec.profile);
  const double min_len = default_proximity_radius(base) / 1.5;

  std::uint64_t index = 0;
  for (int label = 0; label < 8; ++label) {
    for (int k = 0; k < spec.count_per_label; ++k, ++index) {
      const std::uint64_t item_seed = spec.seed ^ (0x9E3779B97F4A7C15ULL * (index + 1));
      SplitMix64 rng(item_seed);
      const double magnitude = rng.uniform(0.4, 0.65);

      // Small coordinate jitter so same-label items differ.
      StructuredMesh mesh = base;
      for (int j = 1; j + 1 < mesh.nj; ++j) {
        for (int i = 1; i + 1 < mesh.ni; ++i) {
          mesh.node(i, j).x += rng.uniform(-0.03, 0.03) * min_len;
          mesh.node(i, j).y += rng.uniform(-0.03, 0.03) * min_len;
        }
      }
      mesh = inject_defects(mesh, flags_from_label(label), magnitude, rng.next_u64());
      mesh.name = "synth-" + kLabelNames[static_cast<std::size_t>(label)] + "-" +
                  std::to_string(k);
      SparseGraph g = build_element_graph(mesh);
      g.label = label;
      ds.items.push_back(std::move(g));
    }
  }
  return ds;
}

DefectFlags classify_by_metrics(const StructuredMesh& mesh, const MetricThresholds& t) {
  const QualityReport report = mesh_quality_report(mesh);
  DefectFlags flags;
  flags.ortho = report.aggregates[3].max > t.max_ortho_dev;
  flags.smooth = report.aggregates[4].mean > t.mean_smoothness;
  flags.distrib = report.aggregates[5].mean > t.mean_distribution;
  return flags;
}

void save_dataset(const LabeledGraphDataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["label_names"] = ds.label_names;
  manifest["provenance"] = ds.provenance;
  nlohmann::json items = nlohmann::json::array();
  for (std::size_t k = 0; k < ds.items.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "item_%05zu.json", k);
    save_graph_file(ds.items[k], (fs::path(dir) / name).string());
    items.push_back({{"file", name}, {"label", ds.items[k].label}});
  }
  manifest["items"] = std::move(items);
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw Error(ErrorCode::IoError, "cannot write manifest in '" + dir + "'");
}

LabeledGraphDataset load_graph_dataset(const std::string& dir, LoadReport* report) {
  const fs::path manifest_path = fs::path(dir) / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw Error(ErrorCode::MissingManifest, manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, e.what());
  }
  LabeledGraphDataset ds;
  if (manifest.contains("label_names")) {
    ds.label_names = manifest["label_names"].get<std::vector<std::string>>();
  }
  ds.provenance = manifest.value("provenance", std::string());
  LoadReport local;
  for (const auto& item : manifest["items"]) {
    const std::string file = item["file"].get<std::string>();
    try {
      SparseGraph g = load_graph_file((fs::path(dir) / file).string());
      g.label = item["label"].get<int>();
      if (g.label < 0 || g.label >= static_cast<int>(ds.label_names.size())) {
        throw Error(ErrorCode::InvalidTarget, "label " + std::to_string(g.label));
      }
      ds.items.push_back(std::move(g));
      ++local.loaded;
    } catch (const Error& e) {
      ++local.skipped;
      local.messages.push_back(file + ": " + e.what());
    }
  }
  if (ds.items.empty()) throw Error(ErrorCode::NoParsableFiles, dir);
  if (report) *report = std::move(local);
  return ds;
}

LabeledGraphDataset load_mesh_dataset(const std::string& dir, LoadReport* report) {
  LabeledGraphDataset ds;
  ds.provenance = "mesh-dir(" + dir + ")";
  LoadReport local;

  std::vector<std::pair<std::string, int>> files;  // path, label
  const fs::path manifest_path = fs::path(dir) / "manifest.json";
  if (fs::exists(manifest_path)) {
    std::ifstream in(manifest_path);
    nlohmann::json manifest;
    try {
      in >> manifest;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::SchemaError, e.what());
    }
    for (const auto& [path, label] : manifest.items()) {
      files.emplace_back((fs::path(dir) / path).string(),
                         label_from_name(label.get<std::string>()));
    }
  } else {
    for (int label = 0; label < 8; ++label) {
      for (const std::string& sub :
           {std::string(kLabelNames[static_cast<std::size_t>(label)]), label_dir_name(label)}) {
        const fs::path subdir = fs::path(dir) / sub;
        if (!fs::is_directory(subdir)) continue;
        std::vector<std::string> paths;
        for (const auto& entry : fs::directory_iterator(subdir)) {
          if (entry.is_regular_file()) paths.push_back(entry.path().string());
        }
        std::sort(paths.begin(), paths.end());
        for (const std::string& p : paths) files.emplace_back(p, label);
        break;
      }
    }
    if (files.empty()) {
      throw Error(ErrorCode::MissingManifest,
                  "no manifest.json and no per-label subdirectories in '" + dir + "'");
    }
  }

  for (const auto& [path, label] : files) {
    try {
      const StructuredMesh mesh = load_mesh_file(path);
      SparseGraph g = build_element_graph(mesh);
      g.label = label;
      ds.items.push_back(std::move(g));
      ++local.loaded;
    } catch (const Error& e) {
      ++local.skipped;
      local.messages.push_back(path + ": " + e.what());
    }
  }
  if (ds.items.empty()) throw Error(ErrorCode::NoParsableFiles, dir);
  if (report) *report = std::move(local);
  return ds;
}

}  // namespace mqenet
