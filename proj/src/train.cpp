#include "mqenet/train.hpp"

#include <algorithm>
#include <chrono>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mqenet/rng.hpp"

namespace mqenet {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

void shuffle_indices(std::vector<std::size_t>& idx, SplitMix64& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_below(i));
    std::swap(idx[i - 1], idx[j]);
  }
}

// Largest-remainder apportionment of n into 60/20/20.
std::array<std::size_t, 3> apportion(std::size_t n) {
  const double props[3] = {0.6, 0.2, 0.2};
  std::array<std::size_t, 3> counts{};
  double rem[3];
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = props[k] * static_cast<double>(n);
    counts[static_cast<std::size_t>(k)] = static_cast<std::size_t>(std::floor(exact));
    rem[k] = exact - std::floor(exact);
    assigned += counts[static_cast<std::size_t>(k)];
  }
  while (assigned < n) {
    int best = 0;
    for (int k = 1; k < 3; ++k) {
      if (rem[k] > rem[best]) best = k;
    }
    counts[static_cast<std::size_t>(best)] += 1;
    rem[best] = -1.0;
    ++assigned;
  }
  return counts;
}

double mean_nll_eval(ModelParams& params, const LabeledGraphDataset& ds,
                     const std::vector<std::size_t>& indices, int batch_size) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(indices.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const SparseGraph*> graphs;
    std::vector<std::int32_t> targets;
    for (std::size_t k = start; k < end; ++k) {
      graphs.push_back(&ds.items[indices[k]]);
      targets.push_back(ds.items[indices[k]].label);
    }
    Tape tp;
    GraphBatch batch = batch_graphs(graphs);
    TensorPtr lp = model_forward(tp, batch, params, false);
    TensorPtr loss = nll_from_log_probs(tp, lp, targets);
    total += loss->scalar() * static_cast<double>(graphs.size());
    count += graphs.size();
  }
  return total / static_cast<double>(count);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !(weight_decay >= 0.0) || batch_size < 1 || max_epochs < 1 ||
      !(clip_norm > 0.0) || early_stop_patience < 1 || plateau_patience < 1 || !(min_lr > 0.0)) {
    throw Error(ErrorCode::DomainError, "train config values must be positive");
  }
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) {
    throw Error(ErrorCode::DomainError, "plateau_factor must be in (0, 1)");
  }
}

OptimizerState OptimizerState::init(const ModelParams& params) {
  OptimizerState s;
  for (const auto& [name, t] : params.named_parameters()) {
    (void)name;
    s.m.emplace_back(t->size(), 0.0);
    s.v.emplace_back(t->size(), 0.0);
    s.v_max.emplace_back(t->size(), 0.0);
  }
  return s;
}

SplitIndices split_dataset(const LabeledGraphDataset& ds, std::uint64_t seed) {
  if (ds.size() < 5) {
    throw Error(ErrorCode::DatasetTooSmall, std::to_string(ds.size()) + " items (need >= 5)");
  }
  // Group by label, shuffle each group, apportion per group.
  std::vector<std::vector<std::size_t>> groups(ds.label_names.size());
  for (std::size_t k = 0; k < ds.items.size(); ++k) {
    groups[static_cast<std::size_t>(ds.items[k].label)].push_back(k);
  }
  SplitIndices split;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto& idx = groups[g];
    if (idx.empty()) continue;
    SplitMix64 rng(seed ^ (0xA0761D6478BD642FULL * (g + 1)));
    shuffle_indices(idx, rng);
    const auto counts = apportion(idx.size());
    std::size_t pos = 0;
    for (std::size_t k = 0; k < counts[0]; ++k) split.train.push_back(idx[pos++]);
    for (std::size_t k = 0; k < counts[1]; ++k) split.val.push_back(idx[pos++]);
    for (std::size_t k = 0; k < counts[2]; ++k) split.test.push_back(idx[pos++]);
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

double nll_loss(const std::vector<double>& log_probs, int target) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : log_probs) m = std::max(m, v);
  double sum = 0.0;
  for (double v : log_probs) sum += std::exp(v - m);
  const double lse = m + std::log(sum);
  if (std::fabs(lse) > 1e-6) {
    throw Error(ErrorCode::UnnormalizedInput, "logsumexp = " + format_double(lse));
  }
  if (target < 0 || static_cast<std::size_t>(target) >= log_probs.size()) {
    throw Error(ErrorCode::InvalidTarget, std::to_string(target));
  }
  return -log_probs[static_cast<std::size_t>(target)];
}

double clip_gradients(ModelParams& params, double clip_norm) {
  if (!(clip_norm > 0.0)) throw Error(ErrorCode::DomainError, "clip_norm must be positive");
  double sq = 0.0;
  const auto named = params.named_parameters();
  for (const auto& [name, t] : named) {
    (void)name;
    t->ensure_grad();
    for (double g : t->grad) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > clip_norm) {
    const double s = clip_norm / norm;
    for (const auto& [name, t] : named) {
      (void)name;
      for (double& g : t->grad) g *= s;
    }
  }
  return norm;
}

void amsgrad_step(ModelParams& params, OptimizerState& state, const TrainConfig& cfg, double lr) {
  const auto named = params.named_parameters();
  if (named.size() != state.m.size()) {
    throw Error(ErrorCode::ShapeMismatch, "optimizer state does not match parameter list");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < named.size(); ++p) {
    TensorPtr t = named[p].second;
    t->ensure_grad();
    if (t->size() != state.m[p].size()) {
      throw Error(ErrorCode::ShapeMismatch, "optimizer slot size for " + named[p].first);
    }
    for (std::size_t i = 0; i < t->size(); ++i) {
      const double g = t->grad[i] + cfg.weight_decay * t->data[i];
      state.m[p][i] = kBeta1 * state.m[p][i] + (1.0 - kBeta1) * g;
      state.v[p][i] = kBeta2 * state.v[p][i] + (1.0 - kBeta2) * g * g;
      state.v_max[p][i] = std::max(state.v_max[p][i], state.v[p][i]);
      const double m_hat = state.m[p][i] / bc1;
      const double v_hat = state.v_max[p][i] / bc2;
      t->data[i] -= lr * m_hat / (std::sqrt(v_hat) + kAdamEps);
    }
  }
}

TrainResult train(const LabeledGraphDataset& ds, const SplitIndices& split,
                  const ModelConfig& model_cfg, const TrainConfig& train_cfg) {
  model_cfg.validate();
  train_cfg.validate();
  if (split.train.empty() || split.val.empty()) {
    throw Error(ErrorCode::EmptySplit, "train/val split is empty");
  }

  ModelParams params = ModelParams::init(model_cfg, train_cfg.seed);
  OptimizerState state = OptimizerState::init(params);

  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  ModelParams best = params.clone();

  double lr = train_cfg.lr;
  int epochs_since_best = 0;
  int epochs_since_plateau = 0;

  std::vector<std::size_t> order = split.train;
  for (int epoch = 0; epoch < train_cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    SplitMix64 rng(train_cfg.seed ^ (0xBF58476D1CE4E5B9ULL * (static_cast<std::uint64_t>(epoch) + 1)));
    shuffle_indices(order, rng);

    double train_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(train_cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(train_cfg.batch_size));
      std::vector<const SparseGraph*> graphs;
      std::vector<std::int32_t> targets;
      for (std::size_t k = start; k < end; ++k) {
        graphs.push_back(&ds.items[order[k]]);
        targets.push_back(ds.items[order[k]].label);
      }
      Tape tp;
      GraphBatch batch = batch_graphs(graphs);
      TensorPtr lp = model_forward(tp, batch, params, true);
      TensorPtr loss = nll_from_log_probs(tp, lp, targets);
      if (!std::isfinite(loss->scalar())) {
        throw Error(ErrorCode::NonFiniteLoss,
                    "epoch " + std::to_string(epoch) + ", batch at " + std::to_string(start));
      }
      train_loss += loss->scalar() * static_cast<double>(graphs.size());
      seen += graphs.size();

      tp.backward(loss);
      clip_gradients(params, train_cfg.clip_norm);
      amsgrad_step(params, state, train_cfg, lr);
      for (const auto& [name, t] : params.named_parameters()) {
        (void)name;
        t->grad.clear();
      }
    }
    train_loss /= static_cast<double>(seen);

    const double val_loss = mean_nll_eval(params, ds, split.val, train_cfg.batch_size);
    const auto t1 = std::chrono::steady_clock::now();

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = train_loss;
    entry.val_loss = val_loss;
    entry.lr = lr;
    entry.seconds = std::chrono::duration<double>(t1 - t0).count();
    result.log.push_back(entry);

    if (val_loss < result.best_val_loss) {
      result.best_val_loss = val_loss;
      result.best_epoch = epoch;
      best = params.clone();
      epochs_since_best = 0;
      epochs_since_plateau = 0;
    } else {
      ++epochs_since_best;
      ++epochs_since_plateau;
    }
    if (epochs_since_best >= train_cfg.early_stop_patience) break;
    if (epochs_since_plateau >= train_cfg.plateau_patience) {
      lr = std::max(train_cfg.min_lr, lr * train_cfg.plateau_factor);
      epochs_since_plateau = 0;
    }
  }

  result.params = std::move(best);
  return result;
}

std::vector<int> predict_labels(ModelParams& params, const LabeledGraphDataset& ds,
                                const std::vector<std::size_t>& indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  constexpr std::size_t kEvalBatch = 64;
  for (std::size_t start = 0; start < indices.size(); start += kEvalBatch) {
    const std::size_t end = std::min(indices.size(), start + kEvalBatch);
    std::vector<const SparseGraph*> graphs;
    for (std::size_t k = start; k < end; ++k) graphs.push_back(&ds.items[indices[k]]);
    Tape tp;
    GraphBatch batch = batch_graphs(graphs);
    TensorPtr lp = model_forward(tp, batch, params, false);
    for (std::size_t r = 0; r < lp->rows; ++r) {
      int arg = 0;
      for (std::size_t c = 1; c < lp->cols; ++c) {
        if (lp->at(r, c) > lp->at(r, static_cast<std::size_t>(arg))) arg = static_cast<int>(c);
      }
      out.push_back(arg);
    }
  }
  return out;
}

EvalReport evaluate(ModelParams& params, const LabeledGraphDataset& ds,
                    const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw Error(ErrorCode::EmptySplit, "evaluate on empty split");
  const std::vector<int> predicted = predict_labels(params, ds, indices);

  EvalReport report;
  std::array<std::array<std::size_t, 8>, 8> counts{};
  std::size_t correct = 0;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const int truth = ds.items[indices[k]].label;
    counts[static_cast<std::size_t>(truth)][static_cast<std::size_t>(predicted[k])] += 1;
    if (truth == predicted[k]) ++correct;
  }
  report.accuracy = static_cast<double>(correct) / static_cast<double>(indices.size());
  for (std::size_t r = 0; r < 8; ++r) {
    std::size_t row_total = 0;
    for (std::size_t c = 0; c < 8; ++c) row_total += counts[r][c];
    if (row_total == 0) continue;  // class absent from this split
    for (std::size_t c = 0; c < 8; ++c) {
      report.confusion[r][c] =
          100.0 * static_cast<double>(counts[r][c]) / static_cast<double>(row_total);
    }
    report.per_class_recall[r] =
        static_cast<double>(counts[r][r]) / static_cast<double>(row_total);
  }
  return report;
}

std::string eval_report_to_csv(const EvalReport& report) {
  std::string out = "label";
  for (const std::string& name : report.label_names) out += "," + name;
  out += "\n";
  for (std::size_t r = 0; r < 8; ++r) {
    out += report.label_names[r];
    for (std::size_t c = 0; c < 8; ++c) out += "," + format_double(report.confusion[r][c]);
    out += "\n";
  }
  out += "accuracy,recall_orthogonality,recall_smoothing,recall_distribution\n";
  out += format_double(report.accuracy) + "," + format_double(report.per_class_recall[1]) + "," +
         format_double(report.per_class_recall[2]) + "," +
         format_double(report.per_class_recall[3]) + "\n";
  return out;
}

std::string training_log_to_csv(const std::vector<EpochLog>& log) {
  // Wall time is tracked in EpochLog but deliberately left out of the CSV
  // so identical seeds give identical files.
  std::string out = "epoch,train_loss,val_loss,lr\n";
  for (const EpochLog& e : log) {
    out += std::to_string(e.epoch) + "," + format_double(e.train_loss) + "," +
           format_double(e.val_loss) + "," + format_double(e.lr) + "\n";
  }
  return out;
}

namespace {

nlohmann::json doubles_to_strings(const std::vector<double>& values) {
  nlohmann::json arr = nlohmann::json::array();
  for (double v : values) arr.push_back(format_double(v));
  return arr;
}

std::vector<double> strings_to_doubles(const nlohmann::json& arr) {
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& item : arr) {
    const std::string s = item.get<std::string>();
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw Error(ErrorCode::SchemaError, "bad numeric string '" + s + "'");
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace

std::string checkpoint_to_json(const ModelParams& params) {
  nlohmann::json doc;
  doc["model_config"] = {{"in_features", params.cfg.in_features},
                         {"out_classes", params.cfg.out_classes},
                         {"num_levels", params.cfg.num_levels},
                         {"hidden", params.cfg.hidden},
                         {"pooling_ratio", format_double(params.cfg.pooling_ratio)},
                         {"activation", activation_name(params.cfg.activation)},
                         {"conv_kind", conv_kind_name(params.cfg.conv_kind)}};
  nlohmann::json tensors;
  for (const auto& [name, t] : params.named_parameters()) {
    tensors[name] = {{"rows", t->rows}, {"cols", t->cols}, {"data", doubles_to_strings(t->data)}};
  }
  doc["params"] = std::move(tensors);
  doc["batch_norm"] = {{"bn1",
                        {{"mean", doubles_to_strings(params.bn1.running_mean)},
                         {"var", doubles_to_strings(params.bn1.running_var)}}},
                       {"bn2",
                        {{"mean", doubles_to_strings(params.bn2.running_mean)},
                         {"var", doubles_to_strings(params.bn2.running_var)}}}};
  return doc.dump(2);
}

ModelParams checkpoint_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, e.what());
  }
  if (!doc.contains("model_config") || !doc.contains("params")) {
    throw Error(ErrorCode::SchemaError, "checkpoint missing model_config/params");
  }
  const auto& mc = doc["model_config"];
  ModelConfig cfg;
  cfg.in_features = mc["in_features"].get<int>();
  cfg.out_classes = mc["out_classes"].get<int>();
  cfg.num_levels = mc["num_levels"].get<int>();
  cfg.hidden = mc["hidden"].get<int>();
  {
    const std::string s = mc["pooling_ratio"].get<std::string>();
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), cfg.pooling_ratio);
    if (ec != std::errc()) throw Error(ErrorCode::SchemaError, "pooling_ratio");
  }
  cfg.activation = activation_from_name(mc["activation"].get<std::string>());
  cfg.conv_kind = conv_kind_from_name(mc["conv_kind"].get<std::string>());

  ModelParams params = ModelParams::init(cfg, 0);
  for (const auto& [name, t] : params.named_parameters()) {
    if (!doc["params"].contains(name)) {
      throw Error(ErrorCode::SchemaError, "checkpoint missing tensor '" + name + "'");
    }
    const auto& entry = doc["params"][name];
    const std::vector<double> data = strings_to_doubles(entry["data"]);
    if (entry["rows"].get<std::size_t>() != t->rows ||
        entry["cols"].get<std::size_t>() != t->cols || data.size() != t->size()) {
      throw Error(ErrorCode::ShapeMismatch, "checkpoint tensor '" + name + "'");
    }
    t->data = data;
  }
  if (doc.contains("batch_norm")) {
    params.bn1.running_mean = strings_to_doubles(doc["batch_norm"]["bn1"]["mean"]);
    params.bn1.running_var = strings_to_doubles(doc["batch_norm"]["bn1"]["var"]);
    params.bn2.running_mean = strings_to_doubles(doc["batch_norm"]["bn2"]["mean"]);
    params.bn2.running_var = strings_to_doubles(doc["batch_norm"]["bn2"]["var"]);
  }
  return params;
}

void save_checkpoint(const ModelParams& params, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot open '" + path + "' for writing");
  out << checkpoint_to_json(params) << "\n";
  if (!out) throw Error(ErrorCode::IoError, "write failed for '" + path + "'");
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace mqenet
