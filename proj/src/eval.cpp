#include "edf/eval.hpp"

#include <cmath>
#include <iostream>
#include <sstream>

#include "edf/ops.hpp"
#include "edf/tape.hpp"

namespace edf::eval {

EvalReport evaluate(const Tensor& images, const Tensor& targets, const nets::ModelSpec& spec,
                    const data::ChannelStats& stats, const data::LabeledDataset& val,
                    const EvalOptions& options, double lr, std::uint64_t seed) {
  if (options.repeats < 1) throw ConfigError("eval repeats must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("eval step size must be positive");
  const Tensor inputs = data::normalize(images.detach(), stats).detach();
  const Tensor val_inputs = data::normalize(val.images, stats).detach();
  EvalReport report;
  for (int r = 0; r < options.repeats; ++r) {
    const std::uint64_t s = seed * 7919ULL + static_cast<std::uint64_t>(r) * 104729ULL + 17;
    nets::TrainOptions train;
    train.epochs = options.epochs;
    train.batch_size = options.batch_size;
    train.lr = lr;
    train.momentum = options.momentum;
    train.weight_decay = options.weight_decay;
    train.lr_decay = options.lr_decay;
    train.augment = options.augment;
    train.seed = s;
    try {
      const auto result = nets::train_classifier(spec, nets::init_params(spec, s), inputs, targets.detach(), train);
      report.accuracies.push_back(nets::accuracy(nets::predict(spec, result.params, val_inputs), val.labels));
    } catch (const NonFiniteError& e) {
      ++report.diverged;
      std::cerr << "eval repeat " << r << " diverged and is excluded: " << e.what() << "\n";
    }
  }
  if (report.accuracies.empty()) throw Error("every evaluation repeat diverged");
  const double n = static_cast<double>(report.accuracies.size());
  for (double a : report.accuracies) report.mean += a / n;
  for (double a : report.accuracies) report.stddev += (a - report.mean) * (a - report.mean) / n;
  report.stddev = std::sqrt(report.stddev);
  return report;
}

EvalReport evaluate(const matcher::SyntheticDataset& syn, const nets::ModelSpec& spec,
                    const data::ChannelStats& stats, const data::LabeledDataset& val,
                    const EvalOptions& options, std::uint64_t seed) {
  syn.validate();
  Tensor targets;
  {
    NoRecordScope constant;
    targets = syn.targets();
  }
  const double lr = options.lr > 0.0 ? options.lr : syn.inner_lr.item();
  return evaluate(syn.images, targets, spec, stats, val, options, lr, seed);
}

double recovery_ratio(double distilled_acc, double full_acc) {
  if (!(full_acc > 0.0)) throw ConfigError("full-data accuracy must be positive");
  return 100.0 * distilled_acc / full_acc;
}

EvalReport baseline_random(const data::LabeledDataset& dataset, int ipc, std::uint64_t seed,
                           const nets::ModelSpec& spec, const data::ChannelStats& stats,
                           const data::LabeledDataset& val, const EvalOptions& options, double lr) {
  const auto syn = distill::init_synthetic(dataset, ipc, lr, /*soft_labels=*/false, seed);
  EvalOptions o = options;
  if (o.lr <= 0.0) o.lr = lr;
  return evaluate(syn, spec, stats, val, o, seed);
}

std::vector<AblationRow> strategy_ablation(distill::DistillConfig config,
                                           const std::vector<experts::Trajectory>& trajectories,
                                           const cam::CamModel* cam_model, const data::ChannelStats& stats,
                                           const data::LabeledDataset& real, const data::LabeledDataset& val,
                                           const EvalOptions& options,
                                           const std::vector<cpd::Strategy>& strategies) {
  if (trajectories.empty()) throw ConfigError("no expert trajectories");
  config.backbone = distill::Backbone::Edf;
  std::vector<AblationRow> rows;
  for (cpd::Strategy s : strategies) {
    config.strategy = s;
    const auto run = distill::run(config, trajectories, cam_model, stats, real);
    AblationRow row{s, evaluate(run.syn, trajectories.front().spec, stats, val, options, config.seed), 0.0, {}};
    for (const auto& rec : run.log) {
      if (rec.skipped) continue;
      row.final_kept_loss = rec.kept_loss;
      for (int l : rec.dropped_layers) ++row.dropped_layers[l];
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "strategy,mean_accuracy,std_accuracy,repeats,final_kept_loss,dropped_layers\n";
  for (const auto& r : rows) {
    out << cpd::strategy_name(r.strategy) << ',' << r.report.mean << ',' << r.report.stddev << ','
        << r.report.accuracies.size() << ',' << r.final_kept_loss << ',';
    bool first = true;
    for (const auto& [layer, count] : r.dropped_layers) {
      out << (first ? "" : ";") << layer << ':' << count;
      first = false;
    }
    out << '\n';
  }
  return out.str();
}

double interclass_distance(const Tensor& features, const std::vector<int>& labels) {
  if (features.rank() != 2 || features.dim(0) != labels.size()) {
    throw ShapeError("interclass_distance: features must be [N,d] with one label per row");
  }
  const std::size_t n = features.dim(0), d = features.dim(1);
  const auto f = features.values();
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (labels[i] == labels[j]) continue;
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = f[i * d + k] - f[j * d + k];
        s += diff * diff;
      }
      total += std::sqrt(s);
      ++pairs;
    }
  }
  if (pairs == 0) throw ConfigError("interclass_distance needs at least two classes");
  return total / static_cast<double>(pairs);
}

}  // namespace edf::eval
