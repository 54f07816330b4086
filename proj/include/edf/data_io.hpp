#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "edf/tensor.hpp"

namespace edf::data {

enum class Split { Train, Val };

struct ImageDims {
  int channels = 3;
  int height = 32;
  int width = 32;
  std::size_t pixels() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
};

/// Images [N,C,H,W] with values in [0,1] and integer labels.
struct LabeledDataset {
  Tensor images;
  std::vector<int> labels;
  int classes = 0;
  Split split = Split::Train;
  /// Pixel area of the true object per image; empty for loaded data.
  std::vector<double> object_area;

  std::size_t size() const { return labels.size(); }
  ImageDims dims() const;
  /// Checks label range, pixel range and (for train) non-empty classes.
  void validate() const;
  std::vector<std::vector<std::size_t>> indices_by_class() const;
  LabeledDataset subset(const std::vector<std::size_t>& rows) const;
};

/// Procedural "cluttered object" images: each class is a texture pattern
/// drawn inside a rectangular object region placed on a background covered
/// with random solid clutter rectangles and pixel noise. Object and clutter
/// colors are random per image, so only the texture identifies the class.
struct ToyGenSpec {
  int classes = 4;
  int per_class = 100;
  ImageDims dims{};
  /// Object area as a fraction of the image area, sampled uniformly.
  double object_fraction_min = 0.3;
  double object_fraction_max = 0.6;
  /// Optional per-class [min, max] overrides of the object fraction.
  std::vector<std::pair<double, double>> class_fraction;
  /// Fraction of the image area covered by clutter rectangles.
  double clutter = 0.5;
  double noise = 0.05;
  std::uint64_t seed = 0;
  Split split = Split::Train;
};

constexpr int kToyPatternCount = 8;

LabeledDataset generate_toy(const ToyGenSpec& spec);

/// Raw files: u8 planar C*H*W per image, back to back; one u8 label per image.
LabeledDataset load_raw(const std::filesystem::path& images, const std::filesystem::path& labels,
                        const ImageDims& dims, int classes = 0, Split split = Split::Train);
void save_raw(const LabeledDataset& ds, const std::filesystem::path& images,
              const std::filesystem::path& labels);

std::uint8_t to_byte(double v);

/// Writes one binary PGM (C=1) or PPM (C=3) per image; values are clamped to
/// [0,1] and scaled to 8 bits. Returns the written paths.
std::vector<std::filesystem::path> dump_images(const Tensor& images, const std::filesystem::path& dir,
                                               const std::string& prefix);
/// Reads a binary PGM/PPM into [C,H,W] with values in [0,1].
Tensor read_pnm(const std::filesystem::path& path);

/// Per-channel statistics used to normalize model inputs.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;
};

ChannelStats channel_stats(const Tensor& images);
/// (x - mean) / std, differentiable in x.
Tensor normalize(const Tensor& images, const ChannelStats& stats);

}  // namespace edf::data
