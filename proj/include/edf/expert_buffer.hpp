#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "edf/data_io.hpp"
#include "edf/nets.hpp"

namespace edf::experts {

/// Parameter snapshots of one agent model trained on real data; snapshot 0
/// is the initialization, snapshot e the parameters after epoch e.
struct Trajectory {
  nets::ModelSpec spec;
  std::vector<nets::ParamSet> snapshots;
  std::uint64_t seed = 0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;

  int epochs() const { return static_cast<int>(snapshots.size()) - 1; }
};

struct ExpertOptions {
  int epochs = 20;
  int count = 5;
  nets::TrainOptions train{};  // epochs/seed are overridden per expert
};

/// Trains `count` experts with seeds derived from `seed`. A diverging expert
/// (non-finite loss) is reported on stderr and left out of the result.
std::vector<Trajectory> train_experts(const data::LabeledDataset& dataset,
                                      const data::LabeledDataset* val,
                                      const data::ChannelStats& stats, const nets::ModelSpec& spec,
                                      const ExpertOptions& options, std::uint64_t seed);

struct Segment {
  const nets::ParamSet* start = nullptr;
  const nets::ParamSet* target = nullptr;
  int t = 0;
  std::size_t trajectory = 0;
};

/// Uniform trajectory and start epoch t in [0, t_max]; target is t + M.
Segment sample_segment(const std::vector<Trajectory>& trajectories, int t_max, int m,
                       std::mt19937_64& rng);

constexpr std::uint32_t kTrajectoryVersion = 1;

/// Little-endian "EDFT" file: version, model spec, epoch count, seed,
/// accuracies, then every snapshot as named f32 tensors with dims.
void save_trajectory(const Trajectory& traj, const std::filesystem::path& path);
Trajectory load_trajectory(const std::filesystem::path& path);

}  // namespace edf::experts
