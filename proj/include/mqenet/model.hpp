#pragma once

#include <string>
#include <vector>

#include "mqenet/graph.hpp"
#include "mqenet/tensor.hpp"

namespace mqenet {

enum class Activation { leaky_relu, elu, relu, gelu };
enum class ConvKind { gatv2, gat, gcn };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);
const char* conv_kind_name(ConvKind k);
ConvKind conv_kind_from_name(const std::string& name);

struct ModelConfig {
  int in_features = 6;
  int out_classes = 8;
  int num_levels = 4;
  int hidden = 12;
  double pooling_ratio = 0.3;
  Activation activation = Activation::leaky_relu;
  ConvKind conv_kind = ConvKind::gatv2;

  void validate() const;
  int jk_width() const { return num_levels * 2 * hidden; }
};

// One attention convolution. w is d_out x 2*d_in (left half scores the
// query, right half the key; the right half doubles as the value
// projection). b is the attention projection: d_out for gatv2,
// 2*d_out for the static gat variant, unused for gcn.
struct ConvParams {
  TensorPtr w;
  TensorPtr b;
  TensorPtr w_res;  // d_out x d_in, null when d_in == d_out
  TensorPtr norm_gain;  // 1 x d_in layer-norm affine
  TensorPtr norm_bias;  // 1 x d_in
};

struct PoolParams {
  TensorPtr w_att;  // f x 1
};

struct LinearParams {
  TensorPtr w;  // in x out
  TensorPtr b;  // 1 x out
};

struct BatchNormState {
  TensorPtr gamma;  // 1 x f
  TensorPtr beta;   // 1 x f
  std::vector<double> running_mean;
  std::vector<double> running_var;
};

struct LevelParams {
  ConvParams conv;
  PoolParams pool;
};

struct ModelParams {
  ModelConfig cfg;
  std::vector<LevelParams> levels;
  LinearParams fc1, fc2, fc3;  // jk -> jk/2 -> jk/4 -> out_classes
  BatchNormState bn1, bn2;

  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);
  ModelParams clone() const;

  // Stable (name, tensor) enumeration; order defines checkpoint and
  // optimizer-state layout.
  std::vector<std::pair<std::string, TensorPtr>> named_parameters() const;
};

// Block-diagonal batch of graphs. graph_ids are sorted; node ranges of
// each graph are contiguous.
struct GraphBatch {
  std::int32_t n = 0;
  std::int32_t f = 0;
  std::vector<double> features;
  std::vector<Edge> edges;
  std::vector<std::int32_t> graph_ids;
  std::int32_t n_graphs = 0;
};

GraphBatch batch_graphs(const std::vector<const SparseGraph*>& graphs);
GraphBatch batch_single(const SparseGraph& g);

// ---- single-pair attention scores (ablation analysis + tests) ----
double gat_score_static(const std::vector<double>& h_i, const std::vector<double>& h_j,
                        const ConvParams& p);
double gatv2_score(const std::vector<double>& h_i, const std::vector<double>& h_j,
                   const ConvParams& p);

// ---- layers ----
// LayerNorm -> activation -> attention conv (self loops added) -> +skip.
TensorPtr conv_layer(Tape& tp, const TensorPtr& x, const std::vector<Edge>& edges,
                     const ConvParams& p, const ModelConfig& cfg);

// Z = tanh(D^-1/2 (A+I) D^-1/2 X W_att), Nx1.
TensorPtr sagpool_scores(Tape& tp, const TensorPtr& x, const std::vector<Edge>& edges,
                         const PoolParams& p);

// Indices of the ceil(k*n) largest scores; ties to the smaller index;
// result sorted ascending.
std::vector<std::int32_t> top_rank(const std::vector<double>& z, double k);

struct PooledGraph {
  TensorPtr x;  // gated features
  std::vector<Edge> edges;  // induced subgraph, relabeled
  std::vector<std::int32_t> kept;  // original indices, ascending
};

PooledGraph pool_apply(Tape& tp, const TensorPtr& x, const std::vector<Edge>& edges,
                       const TensorPtr& z, const std::vector<std::int32_t>& idx);

// [column-mean || column-max] per graph segment; n_graphs x 2f.
TensorPtr readout(Tape& tp, const TensorPtr& x, const std::vector<std::int32_t>& graph_ids,
                  std::int32_t n_graphs);

// Full MQENet forward over a batch: per level conv -> pool-score ->
// top-rank (per graph) -> pool -> readout; JK concat of level readouts;
// MLP with batch norm; row-wise log-softmax. Returns n_graphs x 8.
// Training mode uses batch statistics and updates running stats.
TensorPtr model_forward(Tape& tp, const GraphBatch& batch, ModelParams& params, bool training);

// Convenience: eval-mode log-probs for one graph (1 x out_classes).
std::vector<double> predict_log_probs(const SparseGraph& g, ModelParams& params);

}  // namespace mqenet
