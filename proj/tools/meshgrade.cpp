// meshgrade: structured-mesh quality tooling.
//
// Subcommands: convert, metrics, synth, train, eval, bench-convert.
// Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
// Errors go to stderr as a single line; partially written outputs are
// removed before exiting.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mqenet/dataset.hpp"
#include "mqenet/graph.hpp"
#include "mqenet/mesh.hpp"
#include "mqenet/model.hpp"
#include "mqenet/train.hpp"

namespace fs = std::filesystem;
using namespace mqenet;

namespace {

// Outputs created by the running subcommand; removed on failure.
std::vector<fs::path> g_outputs;

void track_output(const fs::path& p) { g_outputs.push_back(p); }

void remove_partial_outputs() {
  for (const fs::path& p : g_outputs) {
    std::error_code ec;
    fs::remove_all(p, ec);
  }
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonFiniteCoordinate:
    case ErrorCode::DegenerateTriangle:
    case ErrorCode::DegenerateCell:
    case ErrorCode::DefectCollapse:
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::NondeterministicFunction:
      return 3;
    default:
      return 2;
  }
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed for '" + path.string() + "'");
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- convert ----

struct ConvertArgs {
  std::string mode = "element";
  double radius = 0.0;  // 0 = auto (1.5x min edge length)
  int jobs = 1;
  std::vector<std::string> inputs;
  std::string out_dir;
};

int cmd_convert(const ConvertArgs& args) {
  const GraphMode mode = graph_mode_from_name(args.mode);
  fs::create_directories(args.out_dir);

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::vector<std::string> errors(args.inputs.size());
  std::vector<fs::path> written(args.inputs.size());

  auto worker = [&]() {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= args.inputs.size() || failed.load()) break;
      try {
        const StructuredMesh mesh = load_mesh_file(args.inputs[k]);
        SparseGraph g;
        if (mode == GraphMode::element) {
          g = build_element_graph(mesh);
        } else {
          const double r = args.radius > 0.0 ? args.radius : default_proximity_radius(mesh);
          g = build_point_graph(mesh, r);
        }
        const fs::path out =
            fs::path(args.out_dir) / (fs::path(args.inputs[k]).stem().string() + ".graph.json");
        write_text_file(out, graph_to_json(g));
        written[k] = out;
      } catch (const std::exception& e) {
        errors[k] = one_line(e.what());
        failed.store(true);
      }
    }
  };

  const int jobs = std::max(1, args.jobs);
  std::vector<std::thread> pool;
  for (int t = 1; t < jobs; ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();

  for (std::size_t k = 0; k < args.inputs.size(); ++k) {
    if (!errors[k].empty()) {
      for (const fs::path& p : written) {
        if (!p.empty()) track_output(p);
      }
      throw Error(ErrorCode::IoError, "convert '" + args.inputs[k] + "': " + errors[k]);
    }
  }
  std::cout << "converted " << args.inputs.size() << " mesh(es) to " << args.out_dir << "\n";
  return 0;
}

// ---- train config ----

void apply_train_config(const fs::path& path, ModelConfig& mc, TrainConfig& tc) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("config: ") + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::SchemaError, "config root must be an object");
  for (const auto& [key, value] : doc.items()) {
    if (key == "in_features") mc.in_features = value.get<int>();
    else if (key == "out_classes") mc.out_classes = value.get<int>();
    else if (key == "num_levels") mc.num_levels = value.get<int>();
    else if (key == "hidden") mc.hidden = value.get<int>();
    else if (key == "pooling_ratio") mc.pooling_ratio = value.get<double>();
    else if (key == "activation") mc.activation = activation_from_name(value.get<std::string>());
    else if (key == "conv_kind") mc.conv_kind = conv_kind_from_name(value.get<std::string>());
    else if (key == "lr") tc.lr = value.get<double>();
    else if (key == "weight_decay") tc.weight_decay = value.get<double>();
    else if (key == "batch_size") tc.batch_size = value.get<int>();
    else if (key == "max_epochs") tc.max_epochs = value.get<int>();
    else if (key == "clip_norm") tc.clip_norm = value.get<double>();
    else if (key == "early_stop_patience") tc.early_stop_patience = value.get<int>();
    else if (key == "plateau_factor") tc.plateau_factor = value.get<double>();
    else if (key == "plateau_patience") tc.plateau_patience = value.get<int>();
    else if (key == "min_lr") tc.min_lr = value.get<double>();
    else if (key == "seed") tc.seed = value.get<std::uint64_t>();
    else throw Error(ErrorCode::SchemaError, "config: unknown key '" + key + "'");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"structured-mesh quality grading toolkit"};
  app.require_subcommand(1);

  // convert
  ConvertArgs conv;
  CLI::App* sc_convert = app.add_subcommand("convert", "convert meshes to graph files");
  sc_convert->add_option("--mode", conv.mode, "graph mode: point or element")
      ->check(CLI::IsMember({"point", "element"}))
      ->capture_default_str();
  sc_convert->add_option("--radius", conv.radius,
                         "proximity radius for point mode (default: 1.5x min edge length)");
  sc_convert->add_option("--jobs", conv.jobs, "parallel conversion workers")->capture_default_str();
  sc_convert->add_option("inputs", conv.inputs, "mesh files (.json or Plot3D)")->required();
  sc_convert->add_option("--out", conv.out_dir, "output directory")->required();

  // metrics
  std::string metrics_in, metrics_out;
  CLI::App* sc_metrics = app.add_subcommand("metrics", "per-cell quality metrics CSV");
  sc_metrics->add_option("input", metrics_in, "mesh file")->required();
  sc_metrics->add_option("--out", metrics_out, "output CSV path")->required();

  // synth
  int synth_per_label = 4;
  std::string synth_grid = "17x17";
  std::string synth_profile = "annulus";
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  CLI::App* sc_synth = app.add_subcommand("synth", "generate a labeled synthetic dataset");
  sc_synth->add_option("--per-label", synth_per_label, "items per label")->capture_default_str();
  sc_synth->add_option("--grid", synth_grid, "node grid size WxH")->capture_default_str();
  sc_synth->add_option("--profile", synth_profile, "base grid: rect or annulus")
      ->check(CLI::IsMember({"rect", "annulus"}))
      ->capture_default_str();
  sc_synth->add_option("--seed", synth_seed, "generator seed")->capture_default_str();
  sc_synth->add_option("--out", synth_out, "output dataset directory")->required();

  // train
  std::string train_data, train_config, train_ckpt, train_log;
  CLI::App* sc_train = app.add_subcommand("train", "train a classifier on a graph dataset");
  sc_train->add_option("--data", train_data, "graph dataset directory")->required();
  sc_train->add_option("--config", train_config, "JSON training config");
  sc_train->add_option("--out", train_ckpt, "checkpoint output path")->required();
  sc_train->add_option("--log", train_log, "training log CSV path");

  // eval
  std::string eval_ckpt, eval_data, eval_split = "test", eval_out;
  std::uint64_t eval_seed = 0;
  CLI::App* sc_eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  sc_eval->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  sc_eval->add_option("--data", eval_data, "graph dataset directory")->required();
  sc_eval->add_option("--split", eval_split, "train, val, test, or all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}))
      ->capture_default_str();
  sc_eval->add_option("--seed", eval_seed, "split seed (must match training)")->capture_default_str();
  sc_eval->add_option("--out", eval_out, "report CSV path")->required();

  // bench-convert
  std::string bench_in;
  int bench_repeat = 5;
  bool bench_compare_diag = false;
  CLI::App* sc_bench = app.add_subcommand("bench-convert", "time element-graph conversion");
  sc_bench->add_option("input", bench_in, "mesh file")->required();
  sc_bench->add_option("--repeat", bench_repeat, "number of timed runs")->capture_default_str();
  sc_bench->add_flag("--compare-diag", bench_compare_diag,
                     "also time the diagonal-ones adjacency variant");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "meshgrade: usage: " << one_line(e.what()) << "\n";
    return 1;
  }

  try {
    if (*sc_convert) {
      return cmd_convert(conv);
    }

    if (*sc_metrics) {
      const StructuredMesh mesh = load_mesh_file(metrics_in);
      const QualityReport report = mesh_quality_report(mesh);
      track_output(metrics_out);
      write_text_file(metrics_out, report_to_csv(mesh, report));
      std::cout << "wrote " << metrics_out << " (" << mesh.cell_count() << " cells)\n";
      return 0;
    }

    if (*sc_synth) {
      SyntheticSpec spec;
      spec.count_per_label = synth_per_label;
      spec.seed = synth_seed;
      spec.profile = grid_profile_from_name(synth_profile);
      const std::size_t x = synth_grid.find('x');
      if (x == std::string::npos) {
        throw Error(ErrorCode::SchemaError, "--grid must look like 17x17");
      }
      spec.ni = std::stoi(synth_grid.substr(0, x));
      spec.nj = std::stoi(synth_grid.substr(x + 1));
      const LabeledGraphDataset ds = make_synthetic(spec);
      track_output(synth_out);
      save_dataset(ds, synth_out);
      std::cout << "wrote " << ds.size() << " graphs to " << synth_out << "\n";
      return 0;
    }

    if (*sc_train) {
      ModelConfig mc;
      TrainConfig tc;
      if (!train_config.empty()) apply_train_config(train_config, mc, tc);
      const LabeledGraphDataset ds = load_graph_dataset(train_data);
      const SplitIndices split = split_dataset(ds, tc.seed);
      const TrainResult result = train(ds, split, mc, tc);
      track_output(train_ckpt);
      save_checkpoint(result.params, train_ckpt);
      if (!train_log.empty()) {
        track_output(train_log);
        write_text_file(train_log, training_log_to_csv(result.log));
      }
      std::cout << "best_epoch=" << result.best_epoch
                << " best_val_loss=" << format_double(result.best_val_loss) << "\n";
      return 0;
    }

    if (*sc_eval) {
      ModelParams params = load_checkpoint(eval_ckpt);
      const LabeledGraphDataset ds = load_graph_dataset(eval_data);
      std::vector<std::size_t> indices;
      if (eval_split == "all") {
        indices.resize(ds.size());
        for (std::size_t k = 0; k < ds.size(); ++k) indices[k] = k;
      } else {
        const SplitIndices split = split_dataset(ds, eval_seed);
        indices = eval_split == "train" ? split.train
                : eval_split == "val"   ? split.val
                                        : split.test;
      }
      const EvalReport report = evaluate(params, ds, indices);
      track_output(eval_out);
      write_text_file(eval_out, eval_report_to_csv(report));
      std::cout << "accuracy=" << format_double(report.accuracy) << " split=" << eval_split
                << " items=" << indices.size() << "\n";
      return 0;
    }

    if (*sc_bench) {
      if (bench_repeat < 1) throw Error(ErrorCode::DomainError, "--repeat must be >= 1");
      const StructuredMesh mesh = load_mesh_file(bench_in);
      auto time_variant = [&](bool diag_ones) {
        std::vector<double> samples;
        for (int r = 0; r < bench_repeat; ++r) {
          const auto t0 = std::chrono::steady_clock::now();
          const SparseGraph g =
              diag_ones ? build_element_graph_diag_ones(mesh) : build_element_graph(mesh);
          const auto t1 = std::chrono::steady_clock::now();
          if (g.n != mesh.cell_count()) {
            throw Error(ErrorCode::ShapeMismatch, "conversion produced wrong node count");
          }
          samples.push_back(std::chrono::duration<double>(t1 - t0).count());
        }
        double mean = 0.0;
        for (double s : samples) mean += s;
        mean /= static_cast<double>(samples.size());
        double var = 0.0;
        for (double s : samples) var += (s - mean) * (s - mean);
        var /= static_cast<double>(samples.size());
        return std::pair<double, double>(mean, std::sqrt(var));
      };
      std::cout << "variant,cells,repeat,mean_seconds,stddev_seconds\n";
      const auto [mean, sd] = time_variant(false);
      std::cout << "zero_diag," << mesh.cell_count() << "," << bench_repeat << ","
                << format_double(mean) << "," << format_double(sd) << "\n";
      if (bench_compare_diag) {
        const auto [dmean, dsd] = time_variant(true);
        std::cout << "diag_ones," << mesh.cell_count() << "," << bench_repeat << ","
                  << format_double(dmean) << "," << format_double(dsd) << "\n";
      }
      return 0;
    }
  } catch (const Error& e) {
    remove_partial_outputs();
    std::cerr << "meshgrade: error: " << one_line(e.what()) << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    remove_partial_outputs();
    std::cerr << "meshgrade: error: " << one_line(e.what()) << "\n";
    return 2;
  }
  return 1;
}
