#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "edf/cam.hpp"
#include "edf/data_io.hpp"
#include "edf/distill.hpp"
#include "edf/eval.hpp"
#include "edf/expert_buffer.hpp"

namespace edf::config {

struct DataConfig {
  std::string source = "toy";  // toy | raw
  data::ToyGenSpec toy{};
  int val_per_class = 100;
  std::uint64_t val_seed = 1;
  // raw source
  std::string train_images, train_labels, val_images, val_labels;
};

struct CurateConfig {
  int classes_per_subset = 2;
  double threshold = 0.5;
};

/// Everything a run needs. Text form: `[section]` headers and `key = value`
/// lines; `#` starts a comment. Unknown keys are errors.
struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  nets::ModelSpec model;
  experts::ExpertOptions experts;
  nets::TrainOptions cam_train;
  distill::DistillConfig distill;
  eval::EvalOptions eval;
  CurateConfig curate;

  RunConfig();
  /// Fills derived fields (model input dims and classes from the data section).
  void resolve();
  void validate() const;
  /// Every key with its current value, parseable by `parse`.
  std::string to_text() const;

  static RunConfig parse(const std::string& text, const std::string& origin = "config");
  static RunConfig load(const std::filesystem::path& path);
  /// Applies one `section.key=value` override.
  void set(const std::string& dotted_key, const std::string& value);
};

struct Datasets {
  data::LabeledDataset train;
  data::LabeledDataset val;
};

/// Train and val splits of the toy source, seeded from the data section and run.seed.
Datasets generate_toy_datasets(const RunConfig& cfg);

}  // namespace edf::config
