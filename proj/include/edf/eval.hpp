#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "edf/distill.hpp"

namespace edf::eval {

struct EvalOptions {
  int epochs = 300;
  int repeats = 3;
  int batch_size = 256;
  /// Step size of the fresh models; 0 uses the synthetic set's learned one.
  double lr = 0.0;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double lr_decay = 0.1;
  bool augment = true;
};

struct EvalReport {
  std::vector<double> accuracies;
  double mean = 0.0;
  double stddev = 0.0;
  int diverged = 0;
};

/// Trains `repeats` fresh models on (images, soft targets) and reports top-1
/// accuracy on `val`. Images are in pixel space.
EvalReport evaluate(const Tensor& images, const Tensor& targets, const nets::ModelSpec& spec,
                    const data::ChannelStats& stats, const data::LabeledDataset& val,
                    const EvalOptions& options, double lr, std::uint64_t seed);

EvalReport evaluate(const matcher::SyntheticDataset& syn, const nets::ModelSpec& spec,
                    const data::ChannelStats& stats, const data::LabeledDataset& val,
                    const EvalOptions& options, std::uint64_t seed);

/// 100 * distilled / full.
double recovery_ratio(double distilled_acc, double full_acc);

/// IPC random real images per class with one-hot labels.
EvalReport baseline_random(const data::LabeledDataset& dataset, int ipc, std::uint64_t seed,
                           const nets::ModelSpec& spec, const data::ChannelStats& stats,
                           const data::LabeledDataset& val, const EvalOptions& options, double lr);

struct AblationRow {
  cpd::Strategy strategy;
  EvalReport report;
  double final_kept_loss = 0.0;
  std::map<int, long> dropped_layers;  // layer -> times dropped
};

/// One distillation run and evaluation per dropout strategy, everything else shared.
std::vector<AblationRow> strategy_ablation(distill::DistillConfig config,
                                           const std::vector<experts::Trajectory>& trajectories,
                                           const cam::CamModel* cam_model, const data::ChannelStats& stats,
                                           const data::LabeledDataset& real, const data::LabeledDataset& val,
                                           const EvalOptions& options,
                                           const std::vector<cpd::Strategy>& strategies = cpd::all_strategies());

std::string ablation_csv(const std::vector<AblationRow>& rows);

/// Mean Euclidean distance over all pairs of rows with different labels.
double interclass_distance(const Tensor& features, const std::vector<int>& labels);

}  // namespace edf::eval
