#include "edf/expert_buffer.hpp"

#include <iostream>

#include "param_io.hpp"
#include "edf/ops.hpp"

namespace edf::experts {

std::vector<Trajectory> train_experts(const data::LabeledDataset& dataset,
                                      const data::LabeledDataset* val,
                                      const data::ChannelStats& stats, const nets::ModelSpec& spec,
                                      const ExpertOptions& options, std::uint64_t seed) {
  if (options.epochs < 1) throw ConfigError("expert epochs must be >= 1");
  if (options.count < 1) throw ConfigError("expert count must be >= 1");
  spec.validate();
  const Tensor inputs = data::normalize(dataset.images, stats).detach();
  const Tensor targets = nets::one_hot(dataset.labels, dataset.classes);
  std::vector<Trajectory> out;
  for (int k = 0; k < options.count; ++k) {
    const std::uint64_t expert_seed = seed * 1000003ULL + static_cast<std::uint64_t>(k) * 7919ULL + 1;
    nets::TrainOptions train = options.train;
    train.epochs = options.epochs;
    train.seed = expert_seed;
    try {
      auto result = nets::train_classifier(spec, nets::init_params(spec, expert_seed), inputs, targets,
                                           train, /*keep_snapshots=*/true);
      Trajectory traj;
      traj.spec = spec;
      traj.seed = expert_seed;
      traj.snapshots = std::move(result.epoch_snapshots);
      traj.train_accuracy = nets::accuracy(nets::predict(spec, result.params, inputs), dataset.labels);
      if (val != nullptr) {
        traj.val_accuracy = nets::accuracy(
            nets::predict(spec, result.params, data::normalize(val->images, stats)), val->labels);
      }
      out.push_back(std::move(traj));
    } catch (const NonFiniteError& e) {
      std::cerr << "expert " << k << " (seed " << expert_seed << ") diverged: " << e.what() << "\n";
    }
  }
  if (out.empty()) throw Error("every expert trajectory diverged");
  return out;
}

Segment sample_segment(const std::vector<Trajectory>& trajectories, int t_max, int m,
                       std::mt19937_64& rng) {
  if (trajectories.empty()) throw ConfigError("no expert trajectories to sample from");
  if (m < 1) throw ConfigError("segment length M must be >= 1 (start and target would coincide)");
  if (t_max < 0) throw ConfigError("t_max must be non-negative");
  for (const auto& t : trajectories) {
    if (t_max + m > t.epochs()) {
      throw ConfigError("t_max + M = " + std::to_string(t_max + m) + " exceeds the " +
                        std::to_string(t.epochs()) + " expert epochs");
    }
  }
  std::uniform_int_distribution<std::size_t> pick(0, trajectories.size() - 1);
  std::uniform_int_distribution<int> start(0, t_max);
  Segment s;
  s.trajectory = pick(rng);
  s.t = start(rng);
  const auto& traj = trajectories[s.trajectory];
  s.start = &traj.snapshots[static_cast<std::size_t>(s.t)];
  s.target = &traj.snapshots[static_cast<std::size_t>(s.t + m)];
  return s;
}

namespace {

constexpr char kMagic[] = "EDFT";

}  // namespace

void save_trajectory(const Trajectory& traj, const std::filesystem::path& path) {
  io::Writer w;
  w.raw(std::string(kMagic, 4));
  w.u32(kTrajectoryVersion);
  io::write_spec(w, traj.spec);
  w.u32(static_cast<std::uint32_t>(traj.epochs()));
  w.u64(traj.seed);
  w.f64(traj.train_accuracy);
  w.f64(traj.val_accuracy);
  w.u32(traj.snapshots.empty() ? 0 : static_cast<std::uint32_t>(traj.snapshots.front().size()));
  for (const auto& snap : traj.snapshots) {
    io::write_params(w, snap);
  }
  w.save(path);
}

Trajectory load_trajectory(const std::filesystem::path& path) {
  io::Reader r(path);
  if (r.remaining() < 4 || r.raw(4) != std::string(kMagic, 4)) {
    throw FormatError(path.string() + " is not a trajectory file");
  }
  const auto version = r.u32();
  if (version != kTrajectoryVersion) {
    throw FormatError("unsupported trajectory version " + std::to_string(version) + " (expected " +
                      std::to_string(kTrajectoryVersion) + ")");
  }
  Trajectory t;
  t.spec = io::read_spec(r);
  const auto epochs = r.u32();
  t.seed = r.u64();
  t.train_accuracy = r.f64();
  t.val_accuracy = r.f64();
  const auto count = r.u32();
  for (std::uint32_t e = 0; e <= epochs; ++e) {
    nets::ParamSet snap = io::read_params(r, count);
    if (!t.snapshots.empty() && !snap.same_structure(t.snapshots.front())) {
      throw FormatError(path.string() + ": snapshot " + std::to_string(e) + " differs in structure");
    }
    t.snapshots.push_back(std::move(snap));
  }
  if (r.remaining() != 0) throw FormatError(path.string() + ": trailing bytes after last snapshot");
  return t;
}

}  // namespace edf::experts
