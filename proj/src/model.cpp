#include "mqenet/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mqenet/rng.hpp"

namespace mqenet {

namespace {

constexpr double kAttnSlope = 0.2;   // LeakyReLU inside attention scoring
constexpr double kActSlope = 0.01;   // inter-layer LeakyReLU
constexpr double kNormEps = 1e-5;
constexpr double kBnMomentum = 0.1;

TensorPtr glorot(SplitMix64& rng, std::size_t rows, std::size_t cols, std::size_t fan_in,
                 std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> data(rows * cols);
  for (double& v : data) v = rng.uniform(-limit, limit);
  return make_tensor(rows, cols, std::move(data), true);
}

TensorPtr constant_fill(std::size_t rows, std::size_t cols, double v) {
  return make_tensor(rows, cols, std::vector<double>(rows * cols, v), true);
}

TensorPtr apply_activation(Tape& tp, const TensorPtr& x, Activation act) {
  switch (act) {
    case Activation::leaky_relu: return leaky_relu(tp, x, kActSlope);
    case Activation::elu: return elu(tp, x);
    case Activation::relu: return relu(tp, x);
    case Activation::gelu: return gelu(tp, x);
  }
  throw Error(ErrorCode::DomainError, "unknown activation");
}

TensorPtr layer_norm(Tape& tp, const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias) {
  if (gain->cols != x->cols || bias->cols != x->cols) {
    throw Error(ErrorCode::ShapeMismatch, "layer-norm affine width");
  }
  TensorPtr mean = row_mean(tp, x);
  TensorPtr centered = sub_colvec(tp, x, mean);
  TensorPtr var = row_mean(tp, mul(tp, centered, centered));
  TensorPtr rstd = power_scalar(tp, add_scalar(tp, var, kNormEps), -0.5);
  TensorPtr normed = mul_colvec(tp, centered, rstd);
  return add_rowvec(tp, mul_rowvec(tp, normed, gain), bias);
}

std::vector<Edge> with_self_loops(const std::vector<Edge>& edges, std::int32_t n) {
  std::vector<Edge> out = edges;
  out.reserve(out.size() + static_cast<std::size_t>(n));
  for (std::int32_t i = 0; i < n; ++i) out.emplace_back(i, i);
  std::sort(out.begin(), out.end());
  return out;
}

// Symmetric-normalized per-edge weights 1/sqrt(d_i d_j) over A+I.
TensorPtr sym_norm_values(const std::vector<Edge>& edges_sl, std::int32_t n) {
  std::vector<double> deg(static_cast<std::size_t>(n), 0.0);
  for (const Edge& e : edges_sl) deg[static_cast<std::size_t>(e.first)] += 1.0;
  std::vector<double> vals(edges_sl.size());
  for (std::size_t k = 0; k < edges_sl.size(); ++k) {
    vals[k] = 1.0 / std::sqrt(deg[static_cast<std::size_t>(edges_sl[k].first)] *
                              deg[static_cast<std::size_t>(edges_sl[k].second)]);
  }
  return make_tensor(edges_sl.size(), 1, std::move(vals), false);
}

double leaky(double x, double slope) { return x > 0.0 ? x : slope * x; }

}  // namespace

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::elu: return "elu";
    case Activation::relu: return "relu";
    case Activation::gelu: return "gelu";
  }
  return "?";
}

Activation activation_from_name(const std::string& name) {
  if (name == "leaky_relu") return Activation::leaky_relu;
  if (name == "elu") return Activation::elu;
  if (name == "relu") return Activation::relu;
  if (name == "gelu") return Activation::gelu;
  throw Error(ErrorCode::SchemaError, "unknown activation '" + name + "'");
}

const char* conv_kind_name(ConvKind k) {
  switch (k) {
    case ConvKind::gatv2: return "gatv2";
    case ConvKind::gat: return "gat";
    case ConvKind::gcn: return "gcn";
  }
  return "?";
}

ConvKind conv_kind_from_name(const std::string& name) {
  if (name == "gatv2") return ConvKind::gatv2;
  if (name == "gat") return ConvKind::gat;
  if (name == "gcn") return ConvKind::gcn;
  throw Error(ErrorCode::SchemaError, "unknown conv kind '" + name + "'");
}

void ModelConfig::validate() const {
  if (in_features < 1 || out_classes < 2 || num_levels < 1 || hidden < 1) {
    throw Error(ErrorCode::DomainError, "model config dimensions");
  }
  if (!(pooling_ratio > 0.0 && pooling_ratio <= 1.0)) {
    throw Error(ErrorCode::DomainError, "pooling ratio must be in (0, 1]");
  }
}

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SplitMix64 rng(seed);
  ModelParams p;
  p.cfg = cfg;
  for (int l = 0; l < cfg.num_levels; ++l) {
    const std::size_t d_in = l == 0 ? static_cast<std::size_t>(cfg.in_features)
                                    : static_cast<std::size_t>(cfg.hidden);
    const std::size_t d_out = static_cast<std::size_t>(cfg.hidden);
    LevelParams lv;
    lv.conv.w = glorot(rng, d_out, 2 * d_in, 2 * d_in, d_out);
    const std::size_t b_len = cfg.conv_kind == ConvKind::gat ? 2 * d_out : d_out;
    lv.conv.b = glorot(rng, b_len, 1, b_len, 1);
    if (d_in != d_out) lv.conv.w_res = glorot(rng, d_out, d_in, d_in, d_out);
    lv.conv.norm_gain = constant_fill(1, d_in, 1.0);
    lv.conv.norm_bias = constant_fill(1, d_in, 0.0);
    lv.pool.w_att = glorot(rng, d_out, 1, d_out, 1);
    p.levels.push_back(std::move(lv));
  }
  const std::size_t jk = static_cast<std::size_t>(cfg.jk_width());
  const std::size_t h1 = std::max<std::size_t>(jk / 2, 8);
  const std::size_t h2 = std::max<std::size_t>(jk / 4, 8);
  const std::size_t nc = static_cast<std::size_t>(cfg.out_classes);
  p.fc1 = {glorot(rng, jk, h1, jk, h1), constant_fill(1, h1, 0.0)};
  p.bn1 = {constant_fill(1, h1, 1.0), constant_fill(1, h1, 0.0), std::vector<double>(h1, 0.0),
           std::vector<double>(h1, 1.0)};
  p.fc2 = {glorot(rng, h1, h2, h1, h2), constant_fill(1, h2, 0.0)};
  p.bn2 = {constant_fill(1, h2, 1.0), constant_fill(1, h2, 0.0), std::vector<double>(h2, 0.0),
           std::vector<double>(h2, 1.0)};
  p.fc3 = {glorot(rng, h2, nc, h2, nc), constant_fill(1, nc, 0.0)};
  return p;
}

namespace {

TensorPtr copy_tensor(const TensorPtr& t) {
  if (!t) return nullptr;
  return make_tensor(t->rows, t->cols, t->data, t->requires_grad);
}

}  // namespace

ModelParams ModelParams::clone() const {
  ModelParams p;
  p.cfg = cfg;
  for (const LevelParams& lv : levels) {
    LevelParams c;
    c.conv.w = copy_tensor(lv.conv.w);
    c.conv.b = copy_tensor(lv.conv.b);
    c.conv.w_res = copy_tensor(lv.conv.w_res);
    c.conv.norm_gain = copy_tensor(lv.conv.norm_gain);
    c.conv.norm_bias = copy_tensor(lv.conv.norm_bias);
    c.pool.w_att = copy_tensor(lv.pool.w_att);
    p.levels.push_back(std::move(c));
  }
  p.fc1 = {copy_tensor(fc1.w), copy_tensor(fc1.b)};
  p.fc2 = {copy_tensor(fc2.w), copy_tensor(fc2.b)};
  p.fc3 = {copy_tensor(fc3.w), copy_tensor(fc3.b)};
  p.bn1 = {copy_tensor(bn1.gamma), copy_tensor(bn1.beta), bn1.running_mean, bn1.running_var};
  p.bn2 = {copy_tensor(bn2.gamma), copy_tensor(bn2.beta), bn2.running_mean, bn2.running_var};
  return p;
}

std::vector<std::pair<std::string, TensorPtr>> ModelParams::named_parameters() const {
  std::vector<std::pair<std::string, TensorPtr>> out;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const std::string prefix = "level" + std::to_string(l) + ".";
    const LevelParams& lv = levels[l];
    out.emplace_back(prefix + "conv.w", lv.conv.w);
    out.emplace_back(prefix + "conv.b", lv.conv.b);
    if (lv.conv.w_res) out.emplace_back(prefix + "conv.w_res", lv.conv.w_res);
    out.emplace_back(prefix + "conv.norm_gain", lv.conv.norm_gain);
    out.emplace_back(prefix + "conv.norm_bias", lv.conv.norm_bias);
    out.emplace_back(prefix + "pool.w_att", lv.pool.w_att);
  }
  out.emplace_back("fc1.w", fc1.w);
  out.emplace_back("fc1.b", fc1.b);
  out.emplace_back("bn1.gamma", bn1.gamma);
  out.emplace_back("bn1.beta", bn1.beta);
  out.emplace_back("fc2.w", fc2.w);
  out.emplace_back("fc2.b", fc2.b);
  out.emplace_back("bn2.gamma", bn2.gamma);
  out.emplace_back("bn2.beta", bn2.beta);
  out.emplace_back("fc3.w", fc3.w);
  out.emplace_back("fc3.b", fc3.b);
  return out;
}

GraphBatch batch_graphs(const std::vector<const SparseGraph*>& graphs) {
  if (graphs.empty()) throw Error(ErrorCode::EmptyGraph, "batch of zero graphs");
  GraphBatch b;
  b.f = graphs[0]->f;
  b.n_graphs = static_cast<std::int32_t>(graphs.size());
  for (const SparseGraph* g : graphs) {
    if (g->f != b.f) {
      throw Error(ErrorCode::MixedFeatureWidth,
                  std::to_string(g->f) + " vs " + std::to_string(b.f));
    }
  }
  std::int32_t offset = 0;
  for (std::size_t k = 0; k < graphs.size(); ++k) {
    const SparseGraph* g = graphs[k];
    b.features.insert(b.features.end(), g->features.begin(), g->features.end());
    for (const Edge& e : g->edges) b.edges.emplace_back(e.first + offset, e.second + offset);
    b.graph_ids.insert(b.graph_ids.end(), static_cast<std::size_t>(g->n),
                       static_cast<std::int32_t>(k));
    offset += g->n;
  }
  b.n = offset;
  return b;
}

GraphBatch batch_single(const SparseGraph& g) { return batch_graphs({&g}); }

double gatv2_score(const std::vector<double>& h_i, const std::vector<double>& h_j,
                   const ConvParams& p) {
  const std::size_t d = h_i.size();
  if (h_j.size() != d || p.w->cols != 2 * d || p.b->rows != p.w->rows) {
    throw Error(ErrorCode::ShapeMismatch, "gatv2_score");
  }
  double score = 0.0;
  for (std::size_t r = 0; r < p.w->rows; ++r) {
    double pre = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      pre += p.w->at(r, c) * h_i[c] + p.w->at(r, d + c) * h_j[c];
    }
    score += p.b->data[r] * leaky(pre, kAttnSlope);
  }
  return score;
}

double gat_score_static(const std::vector<double>& h_i, const std::vector<double>& h_j,
                        const ConvParams& p) {
  const std::size_t d = h_i.size();
  const std::size_t d_out = p.w->rows;
  if (h_j.size() != d || p.w->cols != 2 * d || p.b->rows != 2 * d_out) {
    throw Error(ErrorCode::ShapeMismatch, "gat_score_static");
  }
  double pre = 0.0;
  for (std::size_t r = 0; r < d_out; ++r) {
    double li = 0.0, rj = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      li += p.w->at(r, c) * h_i[c];
      rj += p.w->at(r, d + c) * h_j[c];
    }
    pre += p.b->data[r] * li + p.b->data[d_out + r] * rj;
  }
  return leaky(pre, kAttnSlope);
}

TensorPtr conv_layer(Tape& tp, const TensorPtr& x, const std::vector<Edge>& edges,
                     const ConvParams& p, const ModelConfig& cfg) {
  const std::size_t d_in = x->cols;
  const std::size_t d_out = p.w->rows;
  if (p.w->cols != 2 * d_in) {
    throw Error(ErrorCode::ShapeMismatch,
                "conv weight expects 2*" + std::to_string(p.w->cols / 2) + " input features, got " +
                    std::to_string(d_in));
  }
  const std::int32_t n = static_cast<std::int32_t>(x->rows);

  TensorPtr normed = layer_norm(tp, x, p.norm_gain, p.norm_bias);
  TensorPtr act = apply_activation(tp, normed, cfg.activation);

  const std::vector<Edge> edges_sl = with_self_loops(edges, n);
  std::vector<std::int32_t> dst(edges_sl.size()), src(edges_sl.size());
  for (std::size_t k = 0; k < edges_sl.size(); ++k) {
    dst[k] = edges_sl[k].first;
    src[k] = edges_sl[k].second;
  }

  // Left half scores queries, right half scores keys and carries values.
  TensorPtr wl = slice_cols(tp, p.w, 0, d_in);
  TensorPtr wr = slice_cols(tp, p.w, d_in, 2 * d_in);
  TensorPtr left = matmul(tp, act, transpose(tp, wl));    // n x d_out
  TensorPtr right = matmul(tp, act, transpose(tp, wr));   // n x d_out

  TensorPtr alpha;
  if (cfg.conv_kind == ConvKind::gcn) {
    alpha = sym_norm_values(edges_sl, n);
  } else {
    TensorPtr gl = gather_rows(tp, left, dst);
    TensorPtr gr = gather_rows(tp, right, src);
    TensorPtr scores;
    if (cfg.conv_kind == ConvKind::gatv2) {
      scores = matmul(tp, leaky_relu(tp, add(tp, gl, gr), kAttnSlope), p.b);
    } else {
      scores = leaky_relu(tp, matmul(tp, concat_cols(tp, gl, gr), p.b), kAttnSlope);
    }
    alpha = softmax_segmented(tp, scores, dst);
  }

  TensorPtr aggregated = spmm(tp, edges_sl, alpha, right, n);

  TensorPtr skip;
  if (d_in == d_out) {
    skip = x;
  } else {
    if (!p.w_res || p.w_res->rows != d_out || p.w_res->cols != d_in) {
      throw Error(ErrorCode::ShapeMismatch, "missing or misshapen residual projection");
    }
    skip = matmul(tp, x, transpose(tp, p.w_res));
  }
  return add(tp, aggregated, skip);
}

TensorPtr sagpool_scores(Tape& tp, const TensorPtr& x, const std::vector<Edge>& edges,
                         const PoolParams& p) {
  if (p.w_att->rows != x->cols || p.w_att->cols != 1) {
    throw Error(ErrorCode::ShapeMismatch, "pool projection width");
  }
  const std::int32_t n = static_cast<std::int32_t>(x->rows);
  const std::vector<Edge> edges_sl = with_self_loops(edges, n);
  TensorPtr norm = sym_norm_values(edges_sl, n);
  TensorPtr agg = spmm(tp, edges_sl, norm, x, n);
  return tanh_op(tp, matmul(tp, agg, p.w_att));
}

std::vector<std::int32_t> top_rank(const std::vector<double>& z, double k) {
  if (z.empty()) throw Error(ErrorCode::EmptyGraph, "top_rank on empty score vector");
  if (!(k > 0.0 && k <= 1.0)) throw Error(ErrorCode::DomainError, "pooling ratio");
  const std::size_t keep =
      static_cast<std::size_t>(std::ceil(k * static_cast<double>(z.size())));
  std::vector<std::int32_t> order(z.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&z](std::int32_t a, std::int32_t b) {
    if (z[static_cast<std::size_t>(a)] != z[static_cast<std::size_t>(b)]) {
      return z[static_cast<std::size_t>(a)] > z[static_cast<std::size_t>(b)];
    }
    return a < b;  // ties to the smaller index
  });
  order.resize(std::min(std::max<std::size_t>(keep, 1), z.size()));
  std::sort(order.begin(), order.end());
  return order;
}

PooledGraph pool_apply(Tape& tp, const TensorPtr& x, const std::vector<Edge>& edges,
                       const TensorPtr& z, const std::vector<std::int32_t>& idx) {
  PooledGraph out;
  out.kept = idx;
  TensorPtr xk = gather_rows(tp, x, idx);
  TensorPtr zk = gather_rows(tp, z, idx);
  out.x = row_scale(tp, xk, zk);

  std::vector<std::int32_t> relabel(x->rows, -1);
  for (std::size_t k = 0; k < idx.size(); ++k) relabel[static_cast<std::size_t>(idx[k])] =
      static_cast<std::int32_t>(k);
  for (const Edge& e : edges) {
    const std::int32_t a = relabel[static_cast<std::size_t>(e.first)];
    const std::int32_t b = relabel[static_cast<std::size_t>(e.second)];
    if (a >= 0 && b >= 0) out.edges.emplace_back(a, b);
  }
  std::sort(out.edges.begin(), out.edges.end());
  return out;
}

TensorPtr readout(Tape& tp, const TensorPtr& x, const std::vector<std::int32_t>& graph_ids,
                  std::int32_t n_graphs) {
  if (x->rows == 0) throw Error(ErrorCode::EmptyGraph, "readout of empty graph");
  TensorPtr mean = segment_mean_rows(tp, x, graph_ids, n_graphs);
  TensorPtr mx = segment_max_rows(tp, x, graph_ids, n_graphs);
  return concat_cols(tp, mean, mx);
}

namespace {

TensorPtr batch_norm(Tape& tp, const TensorPtr& x, BatchNormState& bn, bool training) {
  if (bn.gamma->cols != x->cols) throw Error(ErrorCode::ShapeMismatch, "batch-norm width");
  if (training) {
    TensorPtr mean = mean_rows(tp, x);
    TensorPtr centered = sub_rowvec(tp, x, mean);
    TensorPtr var = mean_rows(tp, mul(tp, centered, centered));
    TensorPtr rstd = power_scalar(tp, add_scalar(tp, var, kNormEps), -0.5);
    for (std::size_t c = 0; c < x->cols; ++c) {
      bn.running_mean[c] = (1.0 - kBnMomentum) * bn.running_mean[c] + kBnMomentum * mean->data[c];
      bn.running_var[c] = (1.0 - kBnMomentum) * bn.running_var[c] + kBnMomentum * var->data[c];
    }
    TensorPtr normed = mul_rowvec(tp, centered, rstd);
    return add_rowvec(tp, mul_rowvec(tp, normed, bn.gamma), bn.beta);
  }
  std::vector<double> rm = bn.running_mean;
  std::vector<double> rs(x->cols);
  for (std::size_t c = 0; c < x->cols; ++c) rs[c] = 1.0 / std::sqrt(bn.running_var[c] + kNormEps);
  TensorPtr mean = make_tensor(1, x->cols, std::move(rm), false);
  TensorPtr rstd = make_tensor(1, x->cols, std::move(rs), false);
  TensorPtr normed = mul_rowvec(tp, sub_rowvec(tp, x, mean), rstd);
  return add_rowvec(tp, mul_rowvec(tp, normed, bn.gamma), bn.beta);
}

}  // namespace

TensorPtr model_forward(Tape& tp, const GraphBatch& batch, ModelParams& params, bool training) {
  const ModelConfig& cfg = params.cfg;
  cfg.validate();
  if (batch.f != cfg.in_features) {
    throw Error(ErrorCode::ShapeMismatch, "batch feature width " + std::to_string(batch.f) +
                                              " != configured " + std::to_string(cfg.in_features));
  }
  if (batch.n <= 0) throw Error(ErrorCode::EmptyGraph, "empty batch");

  TensorPtr x = make_tensor(static_cast<std::size_t>(batch.n), static_cast<std::size_t>(batch.f),
                            batch.features, false);
  std::vector<Edge> edges = batch.edges;
  std::vector<std::int32_t> graph_ids = batch.graph_ids;

  std::vector<TensorPtr> level_readouts;
  for (int l = 0; l < cfg.num_levels; ++l) {
    LevelParams& lv = params.levels[static_cast<std::size_t>(l)];
    x = conv_layer(tp, x, edges, lv.conv, cfg);
    TensorPtr z = sagpool_scores(tp, x, edges, lv.pool);

    // Per-graph top rank over the contiguous node ranges.
    std::vector<std::int32_t> kept;
    std::size_t start = 0;
    while (start < graph_ids.size()) {
      std::size_t end = start;
      while (end < graph_ids.size() && graph_ids[end] == graph_ids[start]) ++end;
      std::vector<double> local(z->data.begin() + static_cast<std::ptrdiff_t>(start),
                                z->data.begin() + static_cast<std::ptrdiff_t>(end));
      for (std::int32_t i : top_rank(local, cfg.pooling_ratio)) {
        kept.push_back(static_cast<std::int32_t>(start) + i);
      }
      start = end;
    }

    PooledGraph pooled = pool_apply(tp, x, edges, z, kept);
    x = pooled.x;
    edges = std::move(pooled.edges);
    std::vector<std::int32_t> new_ids;
    new_ids.reserve(kept.size());
    for (std::int32_t i : kept) new_ids.push_back(graph_ids[static_cast<std::size_t>(i)]);
    graph_ids = std::move(new_ids);

    level_readouts.push_back(readout(tp, x, graph_ids, batch.n_graphs));
  }

  TensorPtr jk = level_readouts[0];
  for (std::size_t l = 1; l < level_readouts.size(); ++l) {
    jk = concat_cols(tp, jk, level_readouts[l]);
  }

  TensorPtr h = add_rowvec(tp, matmul(tp, jk, params.fc1.w), params.fc1.b);
  h = batch_norm(tp, h, params.bn1, training);
  h = apply_activation(tp, h, cfg.activation);
  h = add_rowvec(tp, matmul(tp, h, params.fc2.w), params.fc2.b);
  h = batch_norm(tp, h, params.bn2, training);
  h = apply_activation(tp, h, cfg.activation);
  TensorPtr logits = add_rowvec(tp, matmul(tp, h, params.fc3.w), params.fc3.b);
  return log_softmax_rows(tp, logits);
}

std::vector<double> predict_log_probs(const SparseGraph& g, ModelParams& params) {
  Tape tp;
  GraphBatch batch = batch_single(g);
  TensorPtr out = model_forward(tp, batch, params, false);
  return out->data;
}

}  // namespace mqenet
