#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "edf/tensor.hpp"

namespace edf::nets {

enum class Arch { ConvNet, Mlp };

std::string arch_name(Arch a);
Arch parse_arch(const std::string& s);

/// Architecture of a small classifier.
///
/// ConvNet: `depth` blocks of conv(kernel, same padding) -> ReLU -> 2x2 avg
/// pool, then a linear head. Mlp: flatten, `depth` hidden ReLU layers of
/// `width` units, then a linear head.
struct ModelSpec {
  Arch arch = Arch::ConvNet;
  int depth = 3;
  int width = 8;
  int kernel = 3;
  int channels = 3;
  int height = 32;
  int image_width = 32;
  int classes = 4;

  /// Throws ConfigError when the spec cannot be built.
  void validate() const;
  /// Spatial size of the last block's pooled output.
  std::pair<int, int> final_spatial() const;
  bool operator==(const ModelSpec&) const = default;
};

struct Param {
  std::string name;
  int layer = 0;  // 1-based layer index; weight and bias of a layer share it
  Tensor value;
};

/// Ordered parameter tensors. For a ConvNet the order is
/// conv1.weight, conv1.bias, ..., convD.bias, fc.weight, fc.bias; an Mlp is
/// fc1.weight, fc1.bias, ..., head.weight, head.bias.
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(std::vector<Param> params) : params_(std::move(params)) {}

  std::size_t size() const { return params_.size(); }
  const Param& operator[](std::size_t i) const { return params_.at(i); }
  Param& operator[](std::size_t i) { return params_.at(i); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::vector<Tensor> tensors() const;
  /// Same names, layers and shapes, new values.
  ParamSet with_values(const std::vector<Tensor>& values) const;
  bool same_structure(const ParamSet& other) const;
  ParamSet detached() const;
  std::size_t scalar_count() const;

 private:
  std::vector<Param> params_;
};

bool bit_equal(const ParamSet& a, const ParamSet& b);

/// Fan-in scaled uniform init U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
ParamSet init_params(const ModelSpec& spec, std::uint64_t seed);

struct ForwardResult {
  Tensor logits;                    // [B, classes]
  std::vector<Tensor> feature_maps;  // post-ReLU map of each conv block
  Tensor features;                  // penultimate (flattened) representation
};

ForwardResult forward(const ModelSpec& spec, const ParamSet& params, const Tensor& batch);

/// One differentiable SGD step on soft-target cross-entropy:
/// params - step_size * grad. Parameters not yet on the active tape are
/// watched first, so the result stays differentiable with respect to the
/// batch, the targets and the step size.
ParamSet sgd_step_on_tape(const ModelSpec& spec, const ParamSet& params, const Tensor& batch,
                          const Tensor& soft_targets, const Tensor& step_size);

Tensor one_hot(const std::vector<int>& labels, int classes);
double accuracy(const Tensor& logits, const std::vector<int>& labels);

/// Plain minibatch training outside of any meta-gradient.
struct TrainOptions {
  int epochs = 20;
  int batch_size = 64;
  double lr = 0.01;
  double momentum = 0.0;
  double weight_decay = 0.0;
  /// Multiply lr by this at half of the epochs (1 = constant).
  double lr_decay = 1.0;
  bool augment = false;
  std::uint64_t seed = 0;
};

struct TrainResult {
  ParamSet params;
  std::vector<ParamSet> epoch_snapshots;  // index 0 is the initialization
  std::vector<double> epoch_losses;
};

/// `inputs` are already model-normalized, `targets` are probability rows.
TrainResult train_classifier(const ModelSpec& spec, ParamSet init, const Tensor& inputs,
                             const Tensor& targets, const TrainOptions& options,
                             bool keep_snapshots = false);

/// Logits for `inputs`, evaluated in chunks without recording.
Tensor predict(const ModelSpec& spec, const ParamSet& params, const Tensor& inputs,
               std::size_t chunk = 256);

/// Random horizontal flip and integer shift of up to `max_shift` pixels
/// (zero fill), independently per image.
Tensor augment_flip_shift(const Tensor& batch, int max_shift, std::mt19937_64& rng);

}  // namespace edf::nets
