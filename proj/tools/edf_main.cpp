// Command-line front end: each subcommand reads and writes one run directory.

#include <CLI11.hpp>
#include <cstdlib>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "edf/config.hpp"
#include "edf/kernels.hpp"
#include "edf/ops.hpp"

using namespace edf;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string run_dir;
  std::string config_path;
  std::vector<std::string> overrides;
  long long seed = -1;
};

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  return json::parse(in);
}

class Run {
 public:
  explicit Run(const Common& c) : dir_(c.run_dir) {
    if (!c.config_path.empty()) {
      cfg_ = config::RunConfig::load(c.config_path);
    } else if (fs::exists(dir_ / "config.snapshot")) {
      cfg_ = config::RunConfig::load(dir_ / "config.snapshot");
    }
    for (const auto& o : c.overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + o + "'");
      cfg_.set(o.substr(0, eq), o.substr(eq + 1));
    }
    if (c.seed >= 0) cfg_.set("run.seed", std::to_string(c.seed));
    cfg_.resolve();
    cfg_.validate();
    fs::create_directories(dir_);
    write_text(dir_ / "config.snapshot", cfg_.to_text());
  }

  const config::RunConfig& cfg() const { return cfg_; }
  fs::path path(const std::string& rel) const { return dir_ / rel; }

  void require(const fs::path& p, const std::string& step) const {
    if (!fs::exists(p)) throw Error(p.string() + " is missing; run `" + step + "` first");
  }

  data::LabeledDataset train() const {
    require(path("data/train_images.u8"), "gen-data");
    return data::load_raw(path("data/train_images.u8"), path("data/train_labels.u8"), cfg_.data.toy.dims,
                          cfg_.data.toy.classes, data::Split::Train);
  }
  data::LabeledDataset val() const {
    require(path("data/val_images.u8"), "gen-data");
    return data::load_raw(path("data/val_images.u8"), path("data/val_labels.u8"), cfg_.data.toy.dims,
                          cfg_.data.toy.classes, data::Split::Val);
  }
  data::ChannelStats stats() const {
    require(path("data/stats.json"), "gen-data");
    const auto j = read_json(path("data/stats.json"));
    return {j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
  }
  std::vector<experts::Trajectory> trajectories() const {
    require(path("experts/summary.json"), "train-experts");
    std::vector<experts::Trajectory> out;
    const json summary = read_json(path("experts/summary.json"));
    for (const auto& f : summary.at("files")) {
      out.push_back(experts::load_trajectory(path("experts") / f.get<std::string>()));
    }
    return out;
  }
  cam::CamModel cam_model() const {
    require(path("cam/model.edfc"), "train-cam");
    return cam::load_cam_model(path("cam/model.edfc"));
  }
  /// "" is syn/final; a number N is syn/ckpt_N; other names are tried under syn/ first.
  fs::path checkpoint_dir(const std::string& checkpoint) const {
    if (checkpoint.empty()) return path("syn/final");
    if (checkpoint.find_first_not_of("0123456789") == std::string::npos) {
      char name[32];
      std::snprintf(name, sizeof name, "ckpt_%06ld", std::stol(checkpoint));
      return path("syn") / name;
    }
    if (fs::exists(path("syn") / checkpoint)) return path("syn") / checkpoint;
    return checkpoint;
  }
  matcher::SyntheticDataset synthetic(const std::string& checkpoint) const {
    const fs::path p = checkpoint_dir(checkpoint) / "syn.edfs";
    require(p, "distill");
    return distill::load_synthetic(p);
  }

 private:
  fs::path dir_;
  config::RunConfig cfg_;
};

json report_json(const eval::EvalReport& r) {
  return {{"accuracies", r.accuracies}, {"mean", r.mean}, {"std", r.stddev}, {"diverged", r.diverged}};
}

int gen_data(const Common& c) {
  Run run(c);
  const auto& cfg = run.cfg();
  data::LabeledDataset train, val;
  if (cfg.data.source == "toy") {
    auto sets = config::generate_toy_datasets(cfg);
    train = std::move(sets.train);
    val = std::move(sets.val);
  } else {
    train = data::load_raw(cfg.data.train_images, cfg.data.train_labels, cfg.data.toy.dims, cfg.data.toy.classes);
    run.require(cfg.data.val_images, "gen-data with data.val_images set");
    val = data::load_raw(cfg.data.val_images, cfg.data.val_labels, cfg.data.toy.dims, cfg.data.toy.classes,
                         data::Split::Val);
  }
  train.validate();
  data::save_raw(train, run.path("data/train_images.u8"), run.path("data/train_labels.u8"));
  data::save_raw(val, run.path("data/val_images.u8"), run.path("data/val_labels.u8"));
  // statistics of the stored (8-bit) pixels, so later steps see the same values
  const auto stored = run.train();
  const auto stats = data::channel_stats(stored.images);
  json j{{"mean", stats.mean}, {"std", stats.std}, {"train", train.size()}, {"val", val.size()}};
  if (!train.object_area.empty()) j["object_area"] = train.object_area;
  write_text(run.path("data/stats.json"), j.dump(2));
  std::cout << "wrote " << train.size() << " train / " << val.size() << " val images to " << run.path("data")
            << "\n";
  return 0;
}

int train_experts(const Common& c) {
  Run run(c);
  const auto train = run.train();
  const auto val = run.val();
  const auto trajs =
      experts::train_experts(train, &val, run.stats(), run.cfg().model, run.cfg().experts, run.cfg().seed);
  fs::create_directories(run.path("experts"));
  json summary{{"files", json::array()}, {"experts", json::array()}};
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "expert_%02zu.edft", i);
    experts::save_trajectory(trajs[i], run.path("experts") / name);
    summary["files"].push_back(name);
    summary["experts"].push_back(
        {{"seed", trajs[i].seed}, {"train_accuracy", trajs[i].train_accuracy}, {"val_accuracy", trajs[i].val_accuracy}});
    std::cout << name << ": train " << trajs[i].train_accuracy << " val " << trajs[i].val_accuracy << "\n";
  }
  write_text(run.path("experts/summary.json"), summary.dump(2));
  return 0;
}

int train_cam(const Common& c) {
  Run run(c);
  const auto train = run.train();
  const auto val = run.val();
  const auto model = cam::train_cam_model(train, &val, run.stats(), run.cfg().model, run.cfg().cam_train,
                                          run.cfg().seed * 31 + 5);
  fs::create_directories(run.path("cam"));
  cam::save_cam_model(model, run.path("cam/model.edfc"));
  std::cout << "CAM model: train " << model.train_accuracy << " val " << model.val_accuracy << "\n";
  return 0;
}

int distill_cmd(const Common& c) {
  Run run(c);
  const auto trajs = run.trajectories();
  std::optional<cam::CamModel> model;
  if (run.cfg().distill.enhance()) model = run.cam_model();
  const auto train = run.train();
  fs::create_directories(run.path("logs"));
  std::ofstream log(run.path("logs/run.jsonl"));
  distill::RunHooks hooks;
  hooks.out_dir = run.path("syn");
  hooks.on_iteration = [&](const distill::IterationRecord& r) {
    log << distill::to_jsonl(r) << "\n";
    if (r.iter % 50 == 0) std::cout << distill::to_jsonl(r) << std::endl;
  };
  const auto result = distill::run(run.cfg().distill, trajs, model ? &*model : nullptr, run.stats(), train, hooks);
  distill::write_checkpoint(result.syn, run.path("syn/final"));
  distill::write_checkpoint(result.initial, run.path("syn/init"));
  std::cout << "distilled " << result.syn.size() << " images in " << result.log.size() << " iterations ("
            << result.refresh_count << " map refreshes)\n";
  return 0;
}

int eval_cmd(const Common& c, const std::string& checkpoint, bool baseline, bool full) {
  Run run(c);
  const auto& cfg = run.cfg();
  const auto val = run.val();
  const auto stats = run.stats();
  json out;
  if (fs::exists(run.checkpoint_dir(checkpoint) / "syn.edfs") ||
      (!baseline && !full)) {
    const auto syn = run.synthetic(checkpoint);
    const auto r = eval::evaluate(syn, cfg.model, stats, val, cfg.eval, cfg.seed);
    out["distilled"] = report_json(r);
    std::cout << "distilled: " << r.mean << " +- " << r.stddev << "\n";
  }
  if (baseline) {
    const auto r = eval::baseline_random(run.train(), cfg.distill.ipc, cfg.seed, cfg.model, stats, val, cfg.eval,
                                         cfg.distill.lr_teacher);
    out["random"] = report_json(r);
    std::cout << "random IPC " << cfg.distill.ipc << ": " << r.mean << " +- " << r.stddev << "\n";
  }
  if (full) {
    const auto train = run.train();
    eval::EvalOptions o = cfg.eval;
    o.epochs = cfg.experts.epochs;
    o.lr = cfg.experts.train.lr;
    o.batch_size = cfg.experts.train.batch_size;
    const auto r = eval::evaluate(train.images, nets::one_hot(train.labels, train.classes), cfg.model, stats, val, o,
                                  o.lr, cfg.seed);
    out["full"] = report_json(r);
    std::cout << "full data: " << r.mean << " +- " << r.stddev << "\n";
    if (out.contains("distilled")) {
      out["recovery_ratio"] = eval::recovery_ratio(out["distilled"]["mean"].get<double>(), r.mean);
      std::cout << "recovery ratio: " << out["recovery_ratio"].get<double>() << "%\n";
    }
  }
  write_text(run.path("reports/eval.json"), out.dump(2));
  return 0;
}

int curate_cmd(const Common& c) {
  Run run(c);
  const auto train = run.train();
  const auto model = run.cam_model();
  const auto& cc = run.cfg().curate;
  const auto cur = cam::curate_subsets(train, model, cc.classes_per_subset, cc.threshold);
  json manifest{{"easy", cur.easy},
                {"hard", cur.hard},
                {"ranking", cur.ranking},
                {"easy_complexity", cur.easy_complexity},
                {"hard_complexity", cur.hard_complexity},
                {"threshold", cc.threshold},
                {"class_complexity", cur.report.per_class}};
  write_text(run.path("reports/curation.json"), manifest.dump(2));
  std::string csv = "class,complexity,rank,subset\n";
  for (std::size_t r = 0; r < cur.ranking.size(); ++r) {
    const int cls = cur.ranking[r];
    const bool hard = std::find(cur.hard.begin(), cur.hard.end(), cls) != cur.hard.end();
    const bool easy = std::find(cur.easy.begin(), cur.easy.end(), cls) != cur.easy.end();
    csv += std::to_string(cls) + "," + std::to_string(cur.report.per_class[static_cast<std::size_t>(cls)]) + "," +
           std::to_string(r + 1) + "," + (hard ? "hard" : easy ? "easy" : "") + "\n";
  }
  write_text(run.path("reports/complexity.csv"), csv);
  std::cout << "hard: " << json(cur.hard).dump() << " (" << cur.hard_complexity << ")  easy: " << json(cur.easy).dump()
            << " (" << cur.easy_complexity << ")\n";
  return 0;
}

int ablate_cmd(const Common& c) {
  Run run(c);
  const auto trajs = run.trajectories();
  const auto model = run.cam_model();
  auto dc = run.cfg().distill;
  dc.checkpoint_every = 0;
  const auto rows = eval::strategy_ablation(dc, trajs, &model, run.stats(), run.train(), run.val(), run.cfg().eval);
  const auto csv = eval::ablation_csv(rows);
  write_text(run.path("reports/ablation.csv"), csv);
  std::cout << csv;
  return 0;
}

int inspect_cmd(const Common& c, const std::string& checkpoint) {
  Run run(c);
  const auto syn = run.synthetic(checkpoint);
  const auto model = run.cam_model();
  const fs::path out = run.path("reports/inspect");
  std::vector<double> clamped(syn.images.values().begin(), syn.images.values().end());
  for (auto& v : clamped) v = std::clamp(v, 0.0, 1.0);
  data::dump_images(Tensor(syn.images.shape(), clamped), out / "images", "syn");
  const auto maps = cam::extract_maps(model, syn.images, syn.labels);
  const auto& s = maps.maps.shape();
  data::dump_images(reshape(maps.maps, {s[0], 1, s[1], s[2]}), out / "maps", "map");
  std::string csv = "image,class,mean_activation,discriminative_area,complexity,degenerate\n";
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const Tensor m = maps.map(i);
    csv += std::to_string(i) + "," + std::to_string(syn.labels[i]) + "," + std::to_string(maps.means[i]) + "," +
           std::to_string(cam::discriminative_area(m)) + "," +
           std::to_string(cam::image_complexity(m, run.cfg().curate.threshold)) + "," +
           (maps.degenerate[i] ? "1" : "0") + "\n";
  }
  write_text(out / "discriminative_area.csv", csv);
  std::cout << "wrote " << maps.size() << " image and map dumps to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* t = std::getenv("EDF_THREADS")) kernels::set_thread_count(std::atoi(t));

  CLI::App app{"Dataset distillation with trajectory matching, loss dropout and activation-map enhancement"};
  app.require_subcommand(1);
  Common common;
  std::string checkpoint;
  bool baseline = false, full = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--run-dir,-r", common.run_dir, "Run directory")->required();
    sub->add_option("--config,-c", common.config_path, "Config file (default: the run's config.snapshot)");
    sub->add_option("--set", common.overrides, "Override, e.g. --set distill.T=200");
    sub->add_option("--seed", common.seed, "Run seed");
  };
  auto* gen = app.add_subcommand("gen-data", "Generate or import the dataset");
  auto* te = app.add_subcommand("train-experts", "Train expert trajectories on real data");
  auto* tc = app.add_subcommand("train-cam", "Train the frozen activation-map model");
  auto* di = app.add_subcommand("distill", "Distill the synthetic set");
  auto* ev = app.add_subcommand("eval", "Evaluate a synthetic set by training fresh models");
  auto* cu = app.add_subcommand("curate", "Rank classes by complexity into easy/hard subsets");
  auto* ab = app.add_subcommand("ablate", "Compare dropout strategies at a fixed ratio");
  auto* in = app.add_subcommand("inspect", "Dump images, activation maps and area statistics");
  for (auto* s : {gen, te, tc, di, ev, cu, ab, in}) add_common(s);
  ev->add_option("--checkpoint", checkpoint, "Checkpoint directory (default: syn/final)");
  ev->add_flag("--baseline", baseline, "Also evaluate random real images at the same IPC");
  ev->add_flag("--full", full, "Also train on the full real set and report the recovery ratio");
  in->add_option("--checkpoint", checkpoint, "Checkpoint directory (default: syn/final)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    if (*gen) return gen_data(common);
    if (*te) return train_experts(common);
    if (*tc) return train_cam(common);
    if (*di) return distill_cmd(common);
    if (*ev) return eval_cmd(common, checkpoint, baseline, full);
    if (*cu) return curate_cmd(common);
    if (*ab) return ablate_cmd(common);
    if (*in) return inspect_cmd(common, checkpoint);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
