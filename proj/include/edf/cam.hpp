#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "edf/data_io.hpp"
#include "edf/nets.hpp"

namespace edf::cam {

/// Frozen feature model used for activation maps, with the input statistics
/// it was trained under.
struct CamModel {
  nets::ModelSpec spec;
  nets::ParamSet params;
  data::ChannelStats stats;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
};

CamModel train_cam_model(const data::LabeledDataset& dataset, const data::LabeledDataset* val,
                         const data::ChannelStats& stats, const nets::ModelSpec& spec,
                         const nets::TrainOptions& options, std::uint64_t seed);

void save_cam_model(const CamModel& model, const std::filesystem::path& path);
CamModel load_cam_model(const std::filesystem::path& path);

/// Per-image maps in [0,1] at input resolution.
struct ActivationMapSet {
  Tensor maps;  // [S, H, W]
  std::vector<double> means;
  /// Images whose fused map was all zero; their map is zeros with mean 0.
  std::vector<bool> degenerate;
  long iteration = -1;

  std::size_t size() const { return means.size(); }
  Tensor map(std::size_t i) const;
  std::size_t degenerate_count() const;
};

/// Grad-CAM for class `targets[i]` of image i, fused over all conv blocks:
/// each block map is upsampled (nearest) and max-normalized, the block maps
/// are averaged and the result max-normalized again. Images are in pixel
/// space; the model's input normalization is applied here.
ActivationMapSet extract_maps(const CamModel& model, const Tensor& images,
                              const std::vector<int>& targets, std::size_t chunk = 64);

/// Grad-CAM of one block: relu(sum_c alpha_c A_c) with alpha_c the spatial
/// mean of dy/dA_c. Both tensors are [B, C, h, w]; returns [B, h, w].
Tensor block_cam(const Tensor& feature_map, const Tensor& gradient);

/// Arithmetic mean, clamped into [min, max] of the values.
double clamped_mean(std::span<const double> v);

/// 1 - fraction of pixels >= threshold.
double image_complexity(const Tensor& map, double threshold = 0.5);
/// Fraction of pixels strictly above the map's mean.
double discriminative_area(const Tensor& map);

struct ComplexityReport {
  std::vector<double> per_image;
  std::vector<double> per_class;
  double threshold = 0.5;
};

struct Curation {
  std::vector<int> easy;  // least complex first
  std::vector<int> hard;  // most complex first
  std::vector<int> ranking;  // all classes, descending complexity
  double easy_complexity = 0.0;
  double hard_complexity = 0.0;
  ComplexityReport report;
};

/// Ranks classes by mean image complexity (maps for the true labels);
/// hard = the k most complex classes, easy = the k least complex.
Curation curate_subsets(const data::LabeledDataset& dataset, const CamModel& model, int k,
                        double threshold = 0.5);

}  // namespace edf::cam
