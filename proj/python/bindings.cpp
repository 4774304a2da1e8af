// Python bindings for the mesh-quality toolkit. Exposes the main
// operations: mesh I/O + metrics, graph conversion, synthetic data,
// training, and inference.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mqenet/dataset.hpp"
#include "mqenet/graph.hpp"
#include "mqenet/mesh.hpp"
#include "mqenet/model.hpp"
#include "mqenet/train.hpp"

namespace py = pybind11;
using namespace mqenet;

PYBIND11_MODULE(_mqenet, m) {
  m.doc() = "structured-mesh quality evaluation core";

  py::register_exception<Error>(m, "MeshError");

  py::class_<StructuredMesh>(m, "StructuredMesh")
      .def(py::init<>())
      .def_readwrite("ni", &StructuredMesh::ni)
      .def_readwrite("nj", &StructuredMesh::nj)
      .def_readwrite("name", &StructuredMesh::name)
      .def_property_readonly("cell_count", &StructuredMesh::cell_count)
      .def_property_readonly("node_count", &StructuredMesh::node_count)
      .def("node",
           [](const StructuredMesh& mesh, int i, int j) {
             const Point2& p = mesh.node(i, j);
             return std::make_pair(p.x, p.y);
           })
      .def("validate", &StructuredMesh::validate);

  py::class_<SparseGraph>(m, "SparseGraph")
      .def_readonly("n", &SparseGraph::n)
      .def_readonly("f", &SparseGraph::f)
      .def_readonly("features", &SparseGraph::features)
      .def_readonly("edges", &SparseGraph::edges)
      .def_readonly("label", &SparseGraph::label)
      .def_readonly("name", &SparseGraph::name)
      .def_property_readonly("mode",
                             [](const SparseGraph& g) { return graph_mode_name(g.mode); });

  m.def("parse_plot3d", &parse_plot3d);
  m.def("write_plot3d", &write_plot3d);
  m.def("parse_native", &parse_native);
  m.def("write_native", &write_native);
  m.def("load_mesh_file", &load_mesh_file);
  m.def("cell_features", &cell_features, py::arg("mesh"), py::arg("ci"), py::arg("cj"));
  m.def("quality_csv",
        [](const StructuredMesh& mesh) { return report_to_csv(mesh, mesh_quality_report(mesh)); });

  m.def("build_element_graph", &build_element_graph);
  m.def("build_point_graph", &build_point_graph, py::arg("mesh"), py::arg("radius"));
  m.def("default_proximity_radius", &default_proximity_radius);
  m.def("graph_to_json", &graph_to_json);
  m.def("graph_from_json", &graph_from_json);

  py::class_<SyntheticSpec>(m, "SyntheticSpec")
      .def(py::init<>())
      .def_readwrite("count_per_label", &SyntheticSpec::count_per_label)
      .def_readwrite("ni", &SyntheticSpec::ni)
      .def_readwrite("nj", &SyntheticSpec::nj)
      .def_readwrite("seed", &SyntheticSpec::seed);

  py::class_<LabeledGraphDataset>(m, "LabeledGraphDataset")
      .def_readonly("items", &LabeledGraphDataset::items)
      .def_readonly("label_names", &LabeledGraphDataset::label_names)
      .def("__len__", &LabeledGraphDataset::size);

  m.def("make_synthetic", &make_synthetic);
  m.def("save_dataset", &save_dataset);
  m.def("load_graph_dataset",
        [](const std::string& dir) { return load_graph_dataset(dir, nullptr); });
  m.def("label_names", [] { return std::vector<std::string>(kLabelNames.begin(), kLabelNames.end()); });

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("in_features", &ModelConfig::in_features)
      .def_readwrite("out_classes", &ModelConfig::out_classes)
      .def_readwrite("num_levels", &ModelConfig::num_levels)
      .def_readwrite("hidden", &ModelConfig::hidden)
      .def_readwrite("pooling_ratio", &ModelConfig::pooling_ratio)
      .def_property(
          "activation",
          [](const ModelConfig& c) { return std::string(activation_name(c.activation)); },
          [](ModelConfig& c, const std::string& s) { c.activation = activation_from_name(s); })
      .def_property(
          "conv_kind",
          [](const ModelConfig& c) { return std::string(conv_kind_name(c.conv_kind)); },
          [](ModelConfig& c, const std::string& s) { c.conv_kind = conv_kind_from_name(s); });

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("max_epochs", &TrainConfig::max_epochs)
      .def_readwrite("early_stop_patience", &TrainConfig::early_stop_patience)
      .def_readwrite("seed", &TrainConfig::seed);

  py::class_<ModelParams>(m, "ModelParams")
      .def("to_json", &checkpoint_to_json)
      .def_static("from_json", &checkpoint_from_json);

  py::class_<EvalReport>(m, "EvalReport")
      .def_readonly("accuracy", &EvalReport::accuracy)
      .def_readonly("confusion", &EvalReport::confusion)
      .def_readonly("per_class_recall", &EvalReport::per_class_recall)
      .def("to_csv", [](const EvalReport& r) { return eval_report_to_csv(r); });

  m.def(
      "train_model",
      [](const LabeledGraphDataset& ds, const ModelConfig& mc, const TrainConfig& tc) {
        const SplitIndices split = split_dataset(ds, tc.seed);
        TrainResult result = train(ds, split, mc, tc);
        EvalReport report = evaluate(result.params, ds, split.test);
        return std::make_tuple(std::move(result.params), report, result.best_val_loss);
      },
      py::arg("dataset"), py::arg("model_config") = ModelConfig(),
      py::arg("train_config") = TrainConfig(),
      "Split 60/20/20, train, and return (params, test_report, best_val_loss).");

  m.def("predict_log_probs",
        [](const SparseGraph& g, ModelParams& params) { return predict_log_probs(g, params); });
  m.def("save_checkpoint", &save_checkpoint);
  m.def("load_checkpoint", &load_checkpoint);
}
