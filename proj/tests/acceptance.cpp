// Acceptance gate: one test case per release criterion. Each case states
// its budget (tolerance, runtime) up front; a red case here blocks release.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mqenet/dataset.hpp"
#include "mqenet/graph.hpp"
#include "mqenet/mesh.hpp"
#include "mqenet/model.hpp"
#include "mqenet/rng.hpp"
#include "mqenet/train.hpp"

using namespace mqenet;
namespace fs = std::filesystem;

namespace {

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

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

std::vector<Edge> shared_side_oracle(const IncidenceMatrix& e) {
  std::vector<Edge> out;
  for (std::int32_t a = 0; a < e.element_count; ++a) {
    for (std::int32_t b = 0; b < e.element_count; ++b) {
      if (a == b) continue;
      int shared = 0;
      for (std::int32_t u : e.corners[static_cast<std::size_t>(a)]) {
        for (std::int32_t v : e.corners[static_cast<std::size_t>(b)]) {
          if (u == v) ++shared;
        }
      }
      if (shared == 2) out.emplace_back(a, b);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

SparseGraph random_element_graph(SplitMix64& rng, std::int32_t n) {
  SparseGraph g;
  g.n = n;
  g.f = 6;
  g.mode = GraphMode::element;
  g.features.resize(static_cast<std::size_t>(n) * 6);
  for (double& v : g.features) v = rng.uniform(-1.0, 1.0);
  std::vector<Edge> und;
  for (std::int32_t i = 0; i + 1 < n; ++i) und.emplace_back(i, i + 1);  // path: connected
  for (std::int32_t i = 0; i < n; ++i) {
    for (std::int32_t j = i + 2; j < n; ++j) {
      if (rng.uniform(0.0, 1.0) < 0.3) und.emplace_back(i, j);
    }
  }
  for (const Edge& e : und) {
    g.edges.emplace_back(e.first, e.second);
    g.edges.emplace_back(e.second, e.first);
  }
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
  return g;
}

std::vector<double> random_vec(SplitMix64& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MESHGRADE_BIN) + " " + args + " > /dev/null 2>&1";
  return WEXITSTATUS(std::system(cmd.c_str()));
}

struct TempDir {
  fs::path path;
  explicit TempDir(const char* tag) {
    const auto ticks =
        static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count());
    path = fs::temp_directory_path() /
           (std::string("mq_accept_") + tag + "_" + std::to_string(ticks % 100000000));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const std::string& rel) const { return (path / rel).string(); }
};

}  // namespace

TEST_CASE("criterion 1: 3x3 worked example reproduces E, S, A bit-exactly") {
  const auto t0 = std::chrono::steady_clock::now();
  const StructuredMesh m = unit_grid(3, 3);
  const IncidenceMatrix e = build_incidence(m);

  const int expected_e[9][4] = {{1, 0, 0, 0}, {1, 1, 0, 0}, {0, 1, 0, 0},
                                {1, 0, 1, 0}, {1, 1, 1, 1}, {0, 1, 0, 1},
                                {0, 0, 1, 0}, {0, 0, 1, 1}, {0, 0, 0, 1}};
  const auto dense_e = e.to_dense();
  for (int r = 0; r < 9; ++r) {
    for (int c = 0; c < 4; ++c) {
      REQUIRE(dense_e[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] ==
              expected_e[r][c]);
    }
  }

  const StrengthMatrix s = strength_matrix(e, build_node_adjacency(m));
  const int expected_s[4][4] = {{8, 6, 6, 4}, {6, 8, 4, 6}, {6, 4, 8, 6}, {4, 6, 6, 8}};
  const auto dense_s = s.to_dense();
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      REQUIRE(dense_s[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] ==
              expected_s[r][c]);
    }
  }

  const std::vector<Edge> expected_a = {{0, 1}, {0, 2}, {1, 0}, {1, 3},
                                        {2, 0}, {2, 3}, {3, 1}, {3, 2}};
  REQUIRE(threshold_adjacency(s) == expected_a);
  CHECK(seconds_since(t0) < 1.0);
}

TEST_CASE("criterion 2: adjacency equals the shared-side oracle on 200 random grids") {
  const auto t0 = std::chrono::steady_clock::now();
  SplitMix64 rng(20240601);
  for (int trial = 0; trial < 200; ++trial) {
    const int ni = 2 + static_cast<int>(rng.next_below(19));  // up to 20 nodes per side
    const int nj = 2 + static_cast<int>(rng.next_below(19));
    StructuredMesh m = unit_grid(ni, nj);
    for (Point2& p : m.coords) {
      p.x += rng.uniform(-0.25, 0.25);
      p.y += rng.uniform(-0.25, 0.25);
    }
    const IncidenceMatrix e = build_incidence(m);
    const StrengthMatrix s = strength_matrix(e, build_node_adjacency(m));
    REQUIRE(threshold_adjacency(s) == shared_side_oracle(e));
  }
  CHECK(seconds_since(t0) < 10.0);
}

TEST_CASE("criterion 3: every layer and the full forward pass match central differences") {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr double kTol = 1e-4;
  constexpr double kEps = 1e-5;
  SplitMix64 rng(31337);

  for (int trial = 0; trial < 10; ++trial) {
    const SparseGraph g = random_element_graph(rng, 6);
    const TensorPtr x0 = make_tensor(6, 6, g.features);

    ModelConfig cfg;
    cfg.hidden = 4;

    // attention convolutions: scoring + softmax + aggregation + skip
    for (ConvKind kind : {ConvKind::gatv2, ConvKind::gat, ConvKind::gcn}) {
      cfg.conv_kind = kind;
      ConvParams p;
      p.w = make_tensor(4, 12, random_vec(rng, 48), true);
      p.b = make_tensor(kind == ConvKind::gat ? 8 : 4, 1,
                        random_vec(rng, kind == ConvKind::gat ? 8 : 4), true);
      p.w_res = make_tensor(4, 6, random_vec(rng, 24), true);
      p.norm_gain = make_tensor(1, 6, random_vec(rng, 6), true);
      p.norm_bias = make_tensor(1, 6, random_vec(rng, 6), true);
      const double err = grad_check(
          [&](Tape& tp, const TensorPtr& t) {
            return sum_all(tp, mul(tp, conv_layer(tp, t, g.edges, p, cfg),
                                   conv_layer(tp, t, g.edges, p, cfg)));
          },
          x0, kEps);
      REQUIRE(err < kTol);
    }

    // layer normalization with affine parameters
    {
      const TensorPtr gain = make_tensor(1, 6, random_vec(rng, 6));
      const TensorPtr bias = make_tensor(1, 6, random_vec(rng, 6));
      const double err = grad_check(
          [&](Tape& tp, const TensorPtr& t) {
            TensorPtr mean = row_mean(tp, t);
            TensorPtr centered = sub_colvec(tp, t, mean);
            TensorPtr var = row_mean(tp, mul(tp, centered, centered));
            TensorPtr rstd = power_scalar(tp, add_scalar(tp, var, 1e-5), -0.5);
            TensorPtr normed = mul_colvec(tp, centered, rstd);
            TensorPtr out = add_rowvec(tp, mul_rowvec(tp, normed, gain), bias);
            return sum_all(tp, mul(tp, out, out));
          },
          x0, kEps);
      REQUIRE(err < kTol);
    }

    // SAGPool scoring + gated pooling
    {
      PoolParams p;
      p.w_att = make_tensor(6, 1, random_vec(rng, 6), true);
      const double err = grad_check(
          [&](Tape& tp, const TensorPtr& t) {
            TensorPtr z = sagpool_scores(tp, t, g.edges, p);
            const std::vector<std::int32_t> kept = top_rank(z->data, 0.5);
            PooledGraph pooled = pool_apply(tp, t, g.edges, z, kept);
            return sum_all(tp, mul(tp, pooled.x, pooled.x));
          },
          x0, kEps);
      REQUIRE(err < kTol);
    }

    // readout (mean || max per graph segment)
    {
      const std::vector<std::int32_t> ids = {0, 0, 0, 1, 1, 1};
      const double err = grad_check(
          [&](Tape& tp, const TensorPtr& t) {
            TensorPtr r = readout(tp, t, ids, 2);
            return sum_all(tp, mul(tp, r, r));
          },
          x0, kEps);
      REQUIRE(err < kTol);
    }

    // MLP head with log-softmax and NLL
    {
      const TensorPtr w1 = make_tensor(6, 5, random_vec(rng, 30));
      const TensorPtr b1 = make_tensor(1, 5, random_vec(rng, 5));
      const TensorPtr w2 = make_tensor(5, 3, random_vec(rng, 15));
      const std::vector<std::int32_t> targets = {0, 2, 1, 0, 2, 1};
      const double err = grad_check(
          [&](Tape& tp, const TensorPtr& t) {
            TensorPtr h = elu(tp, add_rowvec(tp, matmul(tp, t, w1), b1));
            TensorPtr lp = log_softmax_rows(tp, matmul(tp, h, w2));
            return nll_from_log_probs(tp, lp, targets);
          },
          x0, kEps);
      REQUIRE(err < kTol);
    }

    // end-to-end: NLL of the full forward pass w.r.t. a conv weight
    {
      ModelConfig full;  // 4 levels, hidden 12, gatv2
      ModelParams params = ModelParams::init(full, rng.next_u64());
      const std::vector<std::int32_t> target = {static_cast<std::int32_t>(rng.next_below(8))};
      const TensorPtr w = params.levels[0].conv.w;
      const double err = grad_check(
          [&](Tape& tp, const TensorPtr& t) {
            ModelParams probe = params.clone();
            probe.levels[0].conv.w = t;
            GraphBatch batch = batch_single(g);
            TensorPtr lp = model_forward(tp, batch, probe, false);
            return nll_from_log_probs(tp, lp, target);
          },
          w, kEps);
      REQUIRE(err < kTol);
    }
  }
  CHECK(seconds_since(t0) < 60.0);
}

TEST_CASE("criterion 4: static attention ranks globally, dynamic attention per query") {
  const auto t0 = std::chrono::steady_clock::now();
  SplitMix64 rng(44);

  // (a) 100 random draws: identical key argsort for every query, exactly.
  for (int trial = 0; trial < 100; ++trial) {
    ConvParams p;
    p.w = make_tensor(3, 8, random_vec(rng, 24));
    p.b = make_tensor(6, 1, random_vec(rng, 6));
    std::vector<std::vector<double>> queries, keys;
    for (int k = 0; k < 6; ++k) queries.push_back(random_vec(rng, 4));
    for (int k = 0; k < 7; ++k) keys.push_back(random_vec(rng, 4));

    std::vector<std::size_t> ref;
    for (std::size_t q = 0; q < queries.size(); ++q) {
      std::vector<double> scores;
      for (const auto& key : keys) scores.push_back(gat_score_static(queries[q], key, p));
      std::vector<std::size_t> order(keys.size());
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(),
                [&scores](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
      if (q == 0) {
        ref = order;
      } else {
        REQUIRE(order == ref);
      }
    }
  }

  // (b) constructed counterexample: per-query argmax keys differ under gatv2.
  ConvParams p;
  p.w = make_tensor(2, 4, {1, 0, 1, 0, 0, 1, 0, 1});
  p.b = make_tensor(2, 1, {1.0, 1.0});
  const std::vector<double> q0 = {10.0, -10.0}, q1 = {-10.0, 10.0};
  const std::vector<double> k0 = {1.0, 0.0}, k1 = {0.0, 1.0};
  REQUIRE(gatv2_score(q0, k0, p) > gatv2_score(q0, k1, p));
  REQUIRE(gatv2_score(q1, k1, p) > gatv2_score(q1, k0, p));
  CHECK(seconds_since(t0) < 5.0);
}

TEST_CASE("criterion 5: pooling keeps ceil(kN), induces subgraphs, ties to low indices") {
  const auto t0 = std::chrono::steady_clock::now();
  SplitMix64 rng(55);
  for (int trial = 0; trial < 30; ++trial) {
    const std::int32_t n = 3 + static_cast<std::int32_t>(rng.next_below(20));
    const SparseGraph g = random_element_graph(rng, n);
    Tape tp;
    TensorPtr x = make_tensor(static_cast<std::size_t>(n), 6, g.features);
    TensorPtr z = make_tensor(static_cast<std::size_t>(n), 1,
                              random_vec(rng, static_cast<std::size_t>(n)));
    for (double k : {0.2, 0.3, 0.4, 1.0}) {
      const std::vector<std::int32_t> kept = top_rank(z->data, k);
      REQUIRE(kept.size() == static_cast<std::size_t>(std::ceil(k * n)));
      REQUIRE(std::is_sorted(kept.begin(), kept.end()));

      const PooledGraph pooled = pool_apply(tp, x, g.edges, z, kept);
      // Induced subgraph oracle.
      std::vector<Edge> expected;
      for (const Edge& e : g.edges) {
        const auto a = std::find(kept.begin(), kept.end(), e.first);
        const auto b = std::find(kept.begin(), kept.end(), e.second);
        if (a != kept.end() && b != kept.end()) {
          expected.emplace_back(static_cast<std::int32_t>(a - kept.begin()),
                                static_cast<std::int32_t>(b - kept.begin()));
        }
      }
      std::sort(expected.begin(), expected.end());
      REQUIRE(pooled.edges == expected);
    }

    // All-equal scores: the lowest indices survive.
    const std::vector<double> flat(static_cast<std::size_t>(n), 0.25);
    for (double k : {0.2, 0.3, 0.4, 1.0}) {
      const std::vector<std::int32_t> kept = top_rank(flat, k);
      for (std::size_t i = 0; i < kept.size(); ++i) {
        REQUIRE(kept[i] == static_cast<std::int32_t>(i));
      }
    }
  }
  CHECK(seconds_since(t0) < 5.0);
}

TEST_CASE("criterion 6: desk-scale training reaches 75% and dynamic beats constant weights") {
  const auto t0 = std::chrono::steady_clock::now();
  SyntheticSpec spec;
  spec.count_per_label = 64;
  spec.ni = 17;
  spec.nj = 17;
  spec.profile = GridProfile::annulus;
  spec.seed = 42;
  const LabeledGraphDataset ds = make_synthetic(spec);
  REQUIRE(ds.size() == 512);
  const SplitIndices split = split_dataset(ds, 0);

  TrainConfig tc;  // defaults: lr 1e-2, batch 32, early stop 20
  ModelConfig gatv2_cfg;  // defaults: 4 levels, hidden 12, k=0.3, LeakyReLU, gatv2
  TrainResult gatv2_run = train(ds, split, gatv2_cfg, tc);
  const double gatv2_acc = evaluate(gatv2_run.params, ds, split.test).accuracy;

  ModelConfig gcn_cfg = gatv2_cfg;
  gcn_cfg.conv_kind = ConvKind::gcn;
  TrainResult gcn_run = train(ds, split, gcn_cfg, tc);
  const double gcn_acc = evaluate(gcn_run.params, ds, split.test).accuracy;

  MESSAGE("gatv2 test accuracy: ", gatv2_acc, ", gcn test accuracy: ", gcn_acc);
  REQUIRE(gatv2_acc >= 0.75);
  REQUIRE(gatv2_acc - gcn_acc >= 0.03);
  CHECK(seconds_since(t0) < 900.0);
}

TEST_CASE("criterion 7: 30,400-cell conversion under 2 s; sparse path not slower") {
  const StructuredMesh mesh = unit_grid(191, 161);
  REQUIRE(mesh.cell_count() == 30400);

  const auto time_once = [&mesh](bool diag_ones) {
    const auto t0 = std::chrono::steady_clock::now();
    const SparseGraph g =
        diag_ones ? build_element_graph_diag_ones(mesh) : build_element_graph(mesh);
    const double dt = seconds_since(t0);
    REQUIRE(g.n == 30400);
    return dt;
  };

  double zero_diag = 0.0, diag_ones = 0.0;
  const int repeat = 7;
  for (int r = 0; r < repeat; ++r) {
    zero_diag += time_once(false);
    diag_ones += time_once(true);
  }
  zero_diag /= repeat;
  diag_ones /= repeat;
  MESSAGE("zero-diag mean: ", zero_diag, " s, diag-ones mean: ", diag_ones, " s");
  REQUIRE(zero_diag <= 2.0);
  REQUIRE(zero_diag <= diag_ones * 1.05);
}

TEST_CASE("criterion 8: activation x pooling-ratio grid trains without NaN") {
  SyntheticSpec spec;
  spec.count_per_label = 6;
  spec.ni = 9;
  spec.nj = 9;
  spec.seed = 8;
  const LabeledGraphDataset ds = make_synthetic(spec);
  const SplitIndices split = split_dataset(ds, 0);

  const Activation acts[4] = {Activation::elu, Activation::relu, Activation::gelu,
                              Activation::leaky_relu};
  const double ratios[3] = {0.2, 0.3, 0.4};

  std::string csv = "activation,k_0.2,k_0.3,k_0.4\n";
  for (const Activation act : acts) {
    csv += activation_name(act);
    for (const double ratio : ratios) {
      ModelConfig cfg;
      cfg.activation = act;
      cfg.pooling_ratio = ratio;
      TrainConfig tc;
      tc.max_epochs = 4;
      TrainResult result = train(ds, split, cfg, tc);  // throws on non-finite loss
      for (const EpochLog& e : result.log) {
        REQUIRE(std::isfinite(e.train_loss));
        REQUIRE(std::isfinite(e.val_loss));
      }
      const double acc = evaluate(result.params, ds, split.test).accuracy;
      REQUIRE(std::isfinite(acc));
      csv += "," + format_double(acc);
    }
    csv += "\n";
  }
  std::ofstream out("ablation_grid.csv");
  out << csv;
  REQUIRE(static_cast<bool>(out));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);  // header + 4 activation rows
}

TEST_CASE("criterion 9: synth + train + eval is byte-identical across runs") {
  TempDir tmp("det");
  const std::string cfg_path = tmp.str("cfg.json");
  {
    std::ofstream cfg(cfg_path);
    cfg << R"({"max_epochs": 10, "seed": 3})";
  }
  for (const char* tag : {"a", "b"}) {
    const std::string d = tmp.str(tag);
    REQUIRE(run_cli("synth --per-label 5 --grid 9x9 --seed 21 --out " + d + "/ds") == 0);
    REQUIRE(run_cli("train --data " + d + "/ds --config " + cfg_path + " --out " + d +
                    "/ckpt.json --log " + d + "/log.csv") == 0);
    REQUIRE(run_cli("eval --ckpt " + d + "/ckpt.json --data " + d + "/ds --seed 3" +
                    " --split test --out " + d + "/report.csv") == 0);
  }
  REQUIRE(slurp(tmp.path / "a" / "ds" / "manifest.json") ==
          slurp(tmp.path / "b" / "ds" / "manifest.json"));
  REQUIRE(slurp(tmp.path / "a" / "ds" / "item_00012.json") ==
          slurp(tmp.path / "b" / "ds" / "item_00012.json"));
  const std::string ckpt_a = slurp(tmp.path / "a" / "ckpt.json");
  REQUIRE(!ckpt_a.empty());
  REQUIRE(ckpt_a == slurp(tmp.path / "b" / "ckpt.json"));
  REQUIRE(slurp(tmp.path / "a" / "log.csv") == slurp(tmp.path / "b" / "log.csv"));
  const std::string report_a = slurp(tmp.path / "a" / "report.csv");
  REQUIRE(!report_a.empty());
  REQUIRE(report_a == slurp(tmp.path / "b" / "report.csv"));
}
