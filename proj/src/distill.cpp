#include "edf/distill.hpp"

#include <cmath>
#include <cstdio>
#include <iostream>
#include <json.hpp>

#include "binary_io.hpp"
#include "edf/dae.hpp"
#include "edf/ops.hpp"
#include "edf/tape.hpp"

namespace edf::distill {

std::string backbone_name(Backbone b) { return b == Backbone::Mtt ? "mtt" : "edf"; }

Backbone parse_backbone(const std::string& s) {
  if (s == "mtt") return Backbone::Mtt;
  if (s == "edf") return Backbone::Edf;
  throw ConfigError("unknown backbone '" + s + "' (expected mtt or edf)");
}

void DistillConfig::validate() const {
  if (iterations < 1) throw ConfigError("T (iterations) must be >= 1");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("alpha must be in [0, 1)");
  if (!(beta > 0.0)) throw ConfigError("beta must be positive");
  if (refresh < 1) throw ConfigError("K (refresh period) must be >= 1");
  if (syn_steps < 1) throw ConfigError("syn_steps must be >= 1");
  if (expert_epochs < 1) throw ConfigError("expert_epochs (M) must be >= 1");
  if (max_start_epoch < 0) throw ConfigError("max_start_epoch must be non-negative");
  if (ipc < 1) throw ConfigError("ipc must be >= 1");
  if (batch_syn < 0) throw ConfigError("batch_syn must be non-negative");
  if (lr_pixel < 0.0 || lr_label < 0.0 || lr_lr < 0.0) throw ConfigError("learning rates must be non-negative");
  if (!(lr_teacher > 0.0)) throw ConfigError("lr_teacher must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
}

matcher::SyntheticDataset init_synthetic(const data::LabeledDataset& dataset, int ipc, double inner_lr,
                                         bool soft_labels, std::uint64_t seed) {
  if (ipc < 1) throw ConfigError("ipc must be >= 1");
  std::mt19937_64 rng(seed);
  auto by_class = dataset.indices_by_class();
  std::vector<std::size_t> rows;
  std::vector<int> labels;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.size() < static_cast<std::size_t>(ipc)) {
      throw ConfigError("class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                        " images, fewer than ipc=" + std::to_string(ipc));
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    for (int k = 0; k < ipc; ++k) {
      rows.push_back(idx[static_cast<std::size_t>(k)]);
      labels.push_back(static_cast<int>(c));
    }
  }
  matcher::SyntheticDataset syn;
  syn.classes = dataset.classes;
  syn.labels = labels;
  {
    NoRecordScope constant;
    syn.images = take_rows(dataset.images.detach(), rows);
  }
  syn.inner_lr = Tensor::scalar(inner_lr);
  if (soft_labels) {
    const auto k = static_cast<std::size_t>(dataset.classes);
    const double off = std::log(0.1 / static_cast<double>(k - 1));
    std::vector<double> v(labels.size() * k, off);
    for (std::size_t i = 0; i < labels.size(); ++i) v[i * k + static_cast<std::size_t>(labels[i])] = std::log(0.9);
    syn.label_logits = Tensor({labels.size(), k}, std::move(v));
  }
  return syn;
}

namespace {

double round_to_precision(double v) {
  return precision() == Precision::F32 ? static_cast<double>(static_cast<float>(v)) : v;
}

void require_finite(const Tensor& t, const char* what) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string("non-finite ") + what + " gradient");
  }
}

Tensor momentum_step(const Tensor& x, const Tensor& g, Tensor& velocity, double lr, double momentum) {
  if (g.shape() != x.shape()) throw ShapeError("outer update: gradient shape " + shape_str(g.shape()));
  const auto gv = g.values();
  std::vector<double> v(gv.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double prev = velocity.defined() ? velocity[i] : 0.0;
    v[i] = round_to_precision(momentum * prev + gv[i]);
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = round_to_precision(out[i] - lr * v[i]);
  velocity = Tensor(x.shape(), std::move(v));
  return Tensor(x.shape(), std::move(out));
}

}  // namespace

matcher::SyntheticDataset apply_outer_update(const matcher::SyntheticDataset& syn, const Gradients& grads,
                                             double lr_pixel, double lr_label, double lr_lr,
                                             MomentumState& state, double momentum) {
  require_finite(grads.images, "image");
  matcher::SyntheticDataset out = syn;
  out.images = momentum_step(syn.images.detach(), grads.images, state.images, lr_pixel, momentum);
  if (syn.label_logits.defined() && grads.label_logits.defined()) {
    require_finite(grads.label_logits, "label");
    out.label_logits =
        momentum_step(syn.label_logits.detach(), grads.label_logits, state.label_logits, lr_label, momentum);
  }
  if (grads.inner_lr.defined()) {
    require_finite(grads.inner_lr, "step size");
    const double next = round_to_precision(syn.inner_lr.item() - lr_lr * grads.inner_lr.item());
    out.inner_lr = Tensor::scalar(std::max(next, kMinInnerLr));
  }
  return out;
}

std::string to_jsonl(const IterationRecord& r) {
  nlohmann::json j;
  j["iter"] = r.iter;
  if (r.skipped) {
    j["skipped"] = true;
    j["error"] = r.error;
    return j.dump();
  }
  j["t"] = r.start_epoch;
  j["total_loss"] = r.total_loss;
  j["kept_loss"] = r.kept_loss;
  j["dropped_indices"] = r.dropped;
  j["dropped_layers"] = r.dropped_layers;
  j["inner_lr"] = r.inner_lr;
  j["grad_norm"] = r.grad_norm;
  j["mean_discriminative_area"] =
      r.mean_discriminative_area ? nlohmann::json(*r.mean_discriminative_area) : nlohmann::json(nullptr);
  if (r.refreshed) j["refreshed"] = true;
  return j.dump();
}

namespace {

double mean_area(const cam::ActivationMapSet& maps) {
  double s = 0.0;
  for (std::size_t i = 0; i < maps.size(); ++i) s += cam::discriminative_area(maps.map(i));
  return s / static_cast<double>(maps.size());
}

}  // namespace

RunResult run(const DistillConfig& config, const std::vector<experts::Trajectory>& trajectories,
              const cam::CamModel* cam_model, const data::ChannelStats& stats,
              const data::LabeledDataset& real, const RunHooks& hooks) {
  config.validate();
  if (trajectories.empty()) throw ConfigError("no expert trajectories");
  const nets::ModelSpec spec = trajectories.front().spec;
  for (const auto& t : trajectories) {
    if (!(t.spec == spec)) throw ConfigError("expert trajectories use different model specs");
  }
  if (spec.classes != real.classes) throw ConfigError("experts and dataset disagree on the class count");
  if (config.enhance()) {
    if (cam_model == nullptr) throw ConfigError("the edf backbone needs a CAM model");
    if (cam_model->spec.channels != spec.channels || cam_model->spec.height != spec.height ||
        cam_model->spec.image_width != spec.image_width) {
      throw ConfigError("CAM model input dims differ from the expert model");
    }
  }
  const double alpha = config.effective_alpha();
  if (config.backbone == Backbone::Edf && config.beta < 1.0) {
    std::cerr << "warning: beta=" << config.beta << " < 1 damps the discriminative area\n";
  }

  RunResult result;
  result.initial = init_synthetic(real, config.ipc, config.lr_teacher, config.soft_labels, config.seed);
  matcher::SyntheticDataset syn = result.initial;
  MomentumState momentum;
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::optional<cam::ActivationMapSet> maps;
  Tensor weights;
  int consecutive_failures = 0;
  const auto batch = static_cast<std::size_t>(config.batch_syn);

  auto checkpoint = [&](long it) {
    if (hooks.out_dir.empty()) return;
    char name[32];
    std::snprintf(name, sizeof name, "ckpt_%06ld", it);
    write_checkpoint(syn, hooks.out_dir / name);
  };

  for (long it = 0; it < config.iterations; ++it) {
    IterationRecord rec;
    rec.iter = it;
    try {
      if (config.enhance() && dae::refresh_due(it, config.refresh)) {
        maps = cam::extract_maps(*cam_model, syn.images, syn.labels);
        maps->iteration = it;
        if (maps->degenerate_count() > 0) {
          std::cerr << "iteration " << it << ": " << maps->degenerate_count()
                    << " all-zero activation maps, no enhancement for those images\n";
        }
        weights = dae::weights_from_map(*maps, config.beta);
        ++result.refresh_count;
        rec.refreshed = true;
      }
      const auto segment = experts::sample_segment(trajectories, config.max_start_epoch,
                                                   config.expert_epochs, rng);
      rec.start_epoch = segment.t;

      Tape tape;
      TapeScope scope(tape);
      matcher::SyntheticDataset live = syn;
      live.images = tape.watch(syn.images);
      if (syn.label_logits.defined()) live.label_logits = tape.watch(syn.label_logits);
      live.inner_lr = tape.watch(syn.inner_lr);

      const auto student =
          matcher::student_unroll(spec, *segment.start, live, stats, config.syn_steps, batch, rng);
      const auto arr = matcher::loss_array(student, *segment.start, *segment.target);
      rec.dropped = cpd::select_drop_indices(arr, alpha, config.strategy, rng, config.sort_key);
      for (auto i : rec.dropped) rec.dropped_layers.push_back(arr[i].layer);
      const Tensor kept = cpd::drop_and_reduce(arr, rec.dropped, config.scope);
      {
        NoRecordScope constant;
        rec.total_loss = matcher::total_loss(arr).item();
      }
      rec.kept_loss = kept.item();

      std::vector<Tensor> wrt{live.images, live.inner_lr};
      if (live.label_logits.defined()) wrt.push_back(live.label_logits);
      const auto g = tape.grad(kept, wrt);
      Gradients grads;
      grads.images = config.enhance() ? dae::rescale_gradients(g[0], weights) : g[0];
      grads.inner_lr = g[1];
      {
        double sq = 0.0;
        for (double v : grads.images.values()) sq += v * v;
        rec.grad_norm = std::sqrt(sq);
      }
      if (live.label_logits.defined()) grads.label_logits = g[2];
      syn = apply_outer_update(syn, grads, config.lr_pixel, config.lr_label, config.lr_lr, momentum,
                               config.momentum);
      rec.inner_lr = syn.inner_lr.item();
      if (maps) rec.mean_discriminative_area = mean_area(*maps);
      consecutive_failures = 0;
    } catch (const NonFiniteError& e) {
      rec = IterationRecord{};
      rec.iter = it;
      rec.skipped = true;
      rec.error = e.what();
      std::cerr << "iteration " << it << " skipped: " << e.what() << "\n";
      if (++consecutive_failures >= 10) {
        result.log.push_back(rec);
        if (hooks.on_iteration) hooks.on_iteration(rec);
        throw Error("aborting after 10 consecutive non-finite iterations (last: " + rec.error + ")");
      }
    }
    result.log.push_back(rec);
    if (hooks.on_iteration) hooks.on_iteration(rec);
    if (config.checkpoint_every > 0 && (it + 1) % config.checkpoint_every == 0) checkpoint(it + 1);
  }
  result.syn = syn;
  result.maps = maps;
  return result;
}

namespace {

constexpr char kSynMagic[] = "EDFS";
constexpr std::uint32_t kSynVersion = 1;

void write_f64_tensor(io::Writer& w, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : t.values()) w.f64(v);
}

Tensor read_f64_tensor(io::Reader& r) {
  Shape shape(r.u32());
  for (auto& d : shape) d = r.u32();
  const std::size_t n = shape_numel(shape);
  if (n * 8 > r.remaining()) throw FormatError("truncated file");
  std::vector<double> v(n);
  for (auto& x : v) x = r.f64();
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

void save_synthetic(const matcher::SyntheticDataset& syn, const std::filesystem::path& path) {
  syn.validate();
  io::Writer w;
  w.raw(std::string(kSynMagic, 4));
  w.u32(kSynVersion);
  w.u32(static_cast<std::uint32_t>(syn.classes));
  w.u32(static_cast<std::uint32_t>(syn.size()));
  for (int l : syn.labels) w.u32(static_cast<std::uint32_t>(l));
  write_f64_tensor(w, syn.images);
  w.u32(syn.label_logits.defined() ? 1 : 0);
  if (syn.label_logits.defined()) write_f64_tensor(w, syn.label_logits);
  w.f64(syn.inner_lr.item());
  w.save(path);
}

matcher::SyntheticDataset load_synthetic(const std::filesystem::path& path) {
  io::Reader r(path);
  if (r.remaining() < 4 || r.raw(4) != std::string(kSynMagic, 4)) {
    throw FormatError(path.string() + " is not a synthetic set file");
  }
  const auto version = r.u32();
  if (version != kSynVersion) throw FormatError("unsupported synthetic set version " + std::to_string(version));
  matcher::SyntheticDataset syn;
  syn.classes = static_cast<int>(r.u32());
  syn.labels.resize(r.u32());
  for (auto& l : syn.labels) l = static_cast<int>(r.u32());
  syn.images = read_f64_tensor(r);
  if (r.u32() != 0) syn.label_logits = read_f64_tensor(r);
  syn.inner_lr = Tensor::scalar(r.f64());
  if (r.remaining() != 0) throw FormatError(path.string() + ": trailing bytes");
  syn.validate();
  return syn;
}

void write_checkpoint(const matcher::SyntheticDataset& syn, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_synthetic(syn, dir / "syn.edfs");
  std::vector<double> clamped(syn.images.values().begin(), syn.images.values().end());
  for (auto& v : clamped) v = std::clamp(v, 0.0, 1.0);
  data::LabeledDataset ds;
  ds.images = Tensor(syn.images.shape(), std::move(clamped));
  ds.labels = syn.labels;
  ds.classes = syn.classes;
  data::save_raw(ds, dir / "images.u8", dir / "labels.u8");
  data::dump_images(ds.images, dir / "images", "syn");
}

}  // namespace edf::distill
