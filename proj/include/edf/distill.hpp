#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "edf/cam.hpp"
#include "edf/cpd.hpp"
#include "edf/expert_buffer.hpp"
#include "edf/matcher.hpp"

namespace edf::distill {

enum class Backbone {
  Mtt,  // plain trajectory matching: no dropout, no gradient enhancement
  Edf,
};

std::string backbone_name(Backbone b);
Backbone parse_backbone(const std::string& s);

struct DistillConfig {
  Backbone backbone = Backbone::Edf;
  int iterations = 500;      // T
  double alpha = 0.25;       // dropout ratio
  double beta = 1.0;         // enhancement factor
  int refresh = 50;          // K
  int syn_steps = 5;         // N
  int expert_epochs = 1;     // M
  int max_start_epoch = 4;   // t_max
  int ipc = 5;
  int batch_syn = 0;         // 0 = whole synthetic set
  double lr_pixel = 5.0;
  double lr_label = 5.0;
  double lr_lr = 1e-6;
  double lr_teacher = 0.02;  // initial student step size
  double momentum = 0.5;
  bool soft_labels = true;
  cpd::Strategy strategy = cpd::Strategy::LossSorted;
  cpd::SortKey sort_key = cpd::SortKey::Normalized;
  cpd::Scope scope = cpd::Scope::Kept;
  int checkpoint_every = 100;
  std::uint64_t seed = 0;

  void validate() const;
  double effective_alpha() const { return backbone == Backbone::Mtt ? 0.0 : alpha; }
  bool enhance() const { return backbone == Backbone::Edf; }
};

/// IPC random exemplars per class, in class order. Label logits are the log of
/// a smoothed one-hot row with 0.9 on the true class.
matcher::SyntheticDataset init_synthetic(const data::LabeledDataset& dataset, int ipc, double inner_lr,
                                         bool soft_labels, std::uint64_t seed);

struct Gradients {
  Tensor images;
  Tensor label_logits;  // undefined when labels are fixed
  Tensor inner_lr;
};

struct MomentumState {
  Tensor images;
  Tensor label_logits;
};

constexpr double kMinInnerLr = 1e-6;

/// v <- momentum * v + g, x <- x - lr * v for pixels and label logits; plain
/// SGD on the step size, which is kept >= kMinInnerLr.
matcher::SyntheticDataset apply_outer_update(const matcher::SyntheticDataset& syn, const Gradients& grads,
                                             double lr_pixel, double lr_label, double lr_lr,
                                             MomentumState& state, double momentum = 0.5);

struct IterationRecord {
  long iter = 0;
  bool skipped = false;
  std::string error;
  int start_epoch = 0;
  double total_loss = 0.0;
  double kept_loss = 0.0;
  std::vector<std::size_t> dropped;
  std::vector<int> dropped_layers;
  double inner_lr = 0.0;
  double grad_norm = 0.0;  // L2 norm of the (rescaled) image gradient
  std::optional<double> mean_discriminative_area;
  bool refreshed = false;
};

std::string to_jsonl(const IterationRecord& r);

struct RunHooks {
  /// Checkpoints go to out_dir/ckpt_NNNNNN when set.
  std::filesystem::path out_dir;
  std::function<void(const IterationRecord&)> on_iteration;
};

struct RunResult {
  matcher::SyntheticDataset initial;
  matcher::SyntheticDataset syn;
  std::vector<IterationRecord> log;
  int refresh_count = 0;
  std::optional<cam::ActivationMapSet> maps;  // last extracted maps
};

/// The outer loop. `cam_model` may be null for the Mtt backbone.
RunResult run(const DistillConfig& config, const std::vector<experts::Trajectory>& trajectories,
              const cam::CamModel* cam_model, const data::ChannelStats& stats,
              const data::LabeledDataset& real, const RunHooks& hooks = {});

/// Full-precision synthetic set file ("EDFS").
void save_synthetic(const matcher::SyntheticDataset& syn, const std::filesystem::path& path);
matcher::SyntheticDataset load_synthetic(const std::filesystem::path& path);

/// Writes syn.edfs, images.u8/labels.u8 (clamped to [0,1]) and image dumps.
void write_checkpoint(const matcher::SyntheticDataset& syn, const std::filesystem::path& dir);

}  // namespace edf::distill
