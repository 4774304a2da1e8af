#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mqenet/dataset.hpp"
#include "mqenet/model.hpp"

namespace mqenet {

struct TrainConfig {
  double lr = 1e-2;
  double weight_decay = 1e-4;
  int batch_size = 32;
  int max_epochs = 200;
  double clip_norm = 1.0;
  int early_stop_patience = 20;
  double plateau_factor = 0.5;
  int plateau_patience = 10;
  double min_lr = 1e-5;
  std::uint64_t seed = 0;

  void validate() const;
};

// AMS-Grad moments, one slot per parameter tensor (named_parameters order).
struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::vector<std::vector<double>> v_max;
  long step = 0;

  static OptimizerState init(const ModelParams& params);
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

// Stratified 60/20/20 split (largest-remainder rounding), deterministic
// per seed.
SplitIndices split_dataset(const LabeledGraphDataset& ds, std::uint64_t seed);

// Scalar NLL for one already-normalized log-prob vector.
double nll_loss(const std::vector<double>& log_probs, int target);

// Coupled L2 decay is added to the gradient before the moment updates.
void amsgrad_step(ModelParams& params, OptimizerState& state, const TrainConfig& cfg, double lr);

// Scales every parameter gradient by clip_norm/g when the global L2 norm
// g exceeds clip_norm. Returns the pre-clip norm.
double clip_gradients(ModelParams& params, double clip_norm);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  ModelParams params;  // best-validation checkpoint
  std::vector<EpochLog> log;
  double best_val_loss = 0.0;
  int best_epoch = -1;
};

TrainResult train(const LabeledGraphDataset& ds, const SplitIndices& split,
                  const ModelConfig& model_cfg, const TrainConfig& train_cfg);

struct EvalReport {
  std::array<std::array<double, 8>, 8> confusion{};  // row-normalized percentages
  std::array<double, 8> per_class_recall{};
  double accuracy = 0.0;
  std::vector<std::string> label_names{kLabelNames.begin(), kLabelNames.end()};
};

EvalReport evaluate(ModelParams& params, const LabeledGraphDataset& ds,
                    const std::vector<std::size_t>& indices);

// Eval-mode argmax class per graph (batched).
std::vector<int> predict_labels(ModelParams& params, const LabeledGraphDataset& ds,
                                const std::vector<std::size_t>& indices);

std::string eval_report_to_csv(const EvalReport& report);
std::string training_log_to_csv(const std::vector<EpochLog>& log);

// Checkpoints store doubles as decimal strings (round-trip exact).
std::string checkpoint_to_json(const ModelParams& params);
ModelParams checkpoint_from_json(const std::string& text);
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace mqenet
