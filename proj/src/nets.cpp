#include "edf/nets.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "edf/ops.hpp"
#include "edf/tape.hpp"

namespace edf::nets {

std::string arch_name(Arch a) { return a == Arch::ConvNet ? "convnet" : "mlp"; }

Arch parse_arch(const std::string& s) {
  if (s == "convnet") return Arch::ConvNet;
  if (s == "mlp") return Arch::Mlp;
  throw ConfigError("unknown architecture '" + s + "' (expected convnet or mlp)");
}

void ModelSpec::validate() const {
  if (channels < 1 || height < 1 || image_width < 1) throw ConfigError("model input dims must be positive");
  if (classes < 2) throw ConfigError("model needs at least 2 classes");
  if (width < 1) throw ConfigError("model width must be positive");
  if (arch == Arch::ConvNet) {
    if (depth < 1) throw ConfigError("convnet depth must be at least 1");
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("convnet kernel must be odd and positive");
    auto [h, w] = final_spatial();
    if (h < 1 || w < 1) {
      throw ConfigError("input " + std::to_string(height) + "x" + std::to_string(image_width) +
                        " is too small for " + std::to_string(depth) + " pooling blocks");
    }
  } else if (depth < 0) {
    throw ConfigError("mlp depth must be non-negative");
  }
}

std::pair<int, int> ModelSpec::final_spatial() const {
  if (arch != Arch::ConvNet) return {height, image_width};
  int h = height, w = image_width;
  for (int b = 0; b < depth; ++b) {
    h /= 2;
    w /= 2;
  }
  return {h, w};
}

std::vector<Tensor> ParamSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

ParamSet ParamSet::with_values(const std::vector<Tensor>& values) const {
  if (values.size() != params_.size()) throw ShapeError("with_values: parameter count mismatch");
  std::vector<Param> out = params_;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (values[i].shape() != out[i].value.shape()) {
      throw ShapeError("with_values: shape mismatch for " + out[i].name);
    }
    out[i].value = values[i];
  }
  return ParamSet(std::move(out));
}

bool ParamSet::same_structure(const ParamSet& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    const auto& a = params_[i];
    const auto& b = other.params_[i];
    if (a.name != b.name || a.layer != b.layer || a.value.shape() != b.value.shape()) return false;
  }
  return true;
}

ParamSet ParamSet::detached() const {
  std::vector<Param> out = params_;
  for (auto& p : out) p.value = p.value.detach();
  return ParamSet(std::move(out));
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

bool bit_equal(const ParamSet& a, const ParamSet& b) {
  if (!a.same_structure(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!edf::bit_equal(a[i].value, b[i].value)) return false;
  }
  return true;
}

namespace {

Tensor uniform_tensor(const Shape& shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<double>(static_cast<float>(dist(rng)));
  return Tensor(shape, std::move(v));
}

void add_layer(std::vector<Param>& out, const std::string& prefix, int layer, const Shape& wshape,
               std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  out.push_back({prefix + ".weight", layer, uniform_tensor(wshape, bound, rng)});
  out.push_back({prefix + ".bias", layer, uniform_tensor({wshape[0]}, bound, rng)});
}

}  // namespace

ParamSet init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::vector<Param> out;
  const auto k = static_cast<std::size_t>(spec.kernel);
  const auto width = static_cast<std::size_t>(spec.width);
  const auto classes = static_cast<std::size_t>(spec.classes);
  int layer = 1;
  if (spec.arch == Arch::ConvNet) {
    auto in = static_cast<std::size_t>(spec.channels);
    for (int b = 0; b < spec.depth; ++b) {
      add_layer(out, "conv" + std::to_string(b + 1), layer++, {width, in, k, k}, in * k * k, rng);
      in = width;
    }
    auto [h, w] = spec.final_spatial();
    const std::size_t feat = width * static_cast<std::size_t>(h * w);
    add_layer(out, "fc", layer, {classes, feat}, feat, rng);
  } else {
    auto in = static_cast<std::size_t>(spec.channels * spec.height * spec.image_width);
    for (int b = 0; b < spec.depth; ++b) {
      add_layer(out, "fc" + std::to_string(b + 1), layer++, {width, in}, in, rng);
      in = width;
    }
    add_layer(out, "head", layer, {classes, in}, in, rng);
  }
  return ParamSet(std::move(out));
}

ForwardResult forward(const ModelSpec& spec, const ParamSet& params, const Tensor& batch) {
  const Shape expected{batch.rank() == 4 ? batch.dim(0) : 0, static_cast<std::size_t>(spec.channels),
                       static_cast<std::size_t>(spec.height),
                       static_cast<std::size_t>(spec.image_width)};
  if (batch.rank() != 4 || batch.shape() != expected) {
    throw ShapeError("model expects [B," + std::to_string(spec.channels) + "," +
                     std::to_string(spec.height) + "," + std::to_string(spec.image_width) +
                     "], got " + shape_str(batch.shape()));
  }
  ForwardResult r;
  Tensor x = batch;
  std::size_t i = 0;
  if (spec.arch == Arch::ConvNet) {
    const auto pad = static_cast<std::size_t>(spec.kernel / 2);
    for (int b = 0; b < spec.depth; ++b, i += 2) {
      const Tensor& w = params[i].value;
      const Tensor& bias = params[i + 1].value;
      x = conv2d(x, w, pad);
      x = add(x, reshape(bias, {1, bias.numel(), 1, 1}));
      x = relu(x);
      r.feature_maps.push_back(x);
      x = avg_pool2d(x, 2);
    }
    x = flatten(x);
  } else {
    x = flatten(x);
    for (int b = 0; b < spec.depth; ++b, i += 2) {
      x = relu(add(matmul(x, transpose(params[i].value)), params[i + 1].value));
    }
  }
  r.features = x;
  r.logits = add(matmul(x, transpose(params[i].value)), params[i + 1].value);
  return r;
}

ParamSet sgd_step_on_tape(const ModelSpec& spec, const ParamSet& params, const Tensor& batch,
                          const Tensor& soft_targets, const Tensor& step_size) {
  Tape* tape = active_tape();
  if (tape == nullptr) throw TapeError("sgd_step_on_tape requires an active tape");
  if (step_size.numel() != 1) throw ShapeError("step size must be a scalar");
  if (step_size.item() < 0.0) throw ConfigError("step size must be non-negative");
  std::vector<Tensor> theta = params.tensors();
  for (auto& t : theta) {
    if (!tape->owns(t)) t = tape->watch(t);
  }
  const ParamSet live = params.with_values(theta);
  const Tensor loss = softmax_cross_entropy(forward(spec, live, batch).logits, soft_targets);
  const std::vector<Tensor> g = tape->grad(loss, theta, /*create_graph=*/true);
  const Tensor step = reshape(step_size, {});
  std::vector<Tensor> next;
  next.reserve(theta.size());
  for (std::size_t k = 0; k < theta.size(); ++k) next.push_back(sub(theta[k], mul(step, g[k])));
  return params.with_values(next);
}

Tensor one_hot(const std::vector<int>& labels, int classes) {
  std::vector<double> v(labels.size() * static_cast<std::size_t>(classes), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) throw ShapeError("label out of range");
    v[i * static_cast<std::size_t>(classes) + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return Tensor({labels.size(), static_cast<std::size_t>(classes)}, std::move(v));
}

double accuracy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) throw ShapeError("accuracy: shape mismatch");
  if (labels.empty()) return 0.0;
  const std::size_t k = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double* row = logits.vec().data() + i * k;
    const auto arg = static_cast<int>(std::max_element(row, row + k) - row);
    if (arg == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

Tensor augment_flip_shift(const Tensor& batch, int max_shift, std::mt19937_64& rng) {
  const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  std::vector<double> out(batch.numel(), 0.0);
  std::uniform_int_distribution<int> shift(-max_shift, max_shift);
  std::bernoulli_distribution flip(0.5);
  for (std::size_t i = 0; i < n; ++i) {
    const bool f = flip(rng);
    const int dy = shift(rng), dx = shift(rng);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (i * c + ch) * h * w;
      for (std::size_t y = 0; y < h; ++y) {
        const auto sy = static_cast<std::ptrdiff_t>(y) - dy;
        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t x = 0; x < w; ++x) {
          auto sx = static_cast<std::ptrdiff_t>(x) - dx;
          if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
          if (f) sx = static_cast<std::ptrdiff_t>(w) - 1 - sx;
          out[base + y * w + x] = batch[base + static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)];
        }
      }
    }
  }
  return Tensor(batch.shape(), std::move(out));
}

TrainResult train_classifier(const ModelSpec& spec, ParamSet init, const Tensor& inputs,
                             const Tensor& targets, const TrainOptions& options,
                             bool keep_snapshots) {
  const std::size_t n = inputs.dim(0);
  if (n == 0) throw ShapeError("train_classifier: empty training set");
  if (targets.rank() != 2 || targets.dim(0) != n) throw ShapeError("train_classifier: target shape");
  std::mt19937_64 rng(options.seed);
  TrainResult result;
  ParamSet params = init.detached();
  std::vector<Tensor> velocity;
  for (const auto& p : params) velocity.push_back(Tensor::zeros(p.value.shape()));
  if (keep_snapshots) result.epoch_snapshots.push_back(params);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(std::max(1, options.batch_size));
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const double lr =
        options.lr * (options.lr_decay != 1.0 && epoch >= options.epochs / 2 ? options.lr_decay : 1.0);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch)));
      Tensor x = take_rows(inputs, rows);
      if (options.augment) x = augment_flip_shift(x, 2, rng);
      const Tensor y = take_rows(targets, rows);
      std::vector<Tensor> g;
      {
        Tape tape;
        TapeScope scope(tape);
        std::vector<Tensor> theta;
        for (const auto& p : params) theta.push_back(tape.watch(p.value));
        const Tensor loss = softmax_cross_entropy(forward(spec, params.with_values(theta), x).logits, y);
        loss_sum += loss.item();
        g = tape.grad(loss, theta);
      }
      std::vector<Tensor> next;
      for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor step = g[k].detach();
        if (options.weight_decay != 0.0) step = add(step, scale(params[k].value, options.weight_decay));
        if (options.momentum != 0.0) {
          velocity[k] = add(scale(velocity[k], options.momentum), step);
          step = velocity[k];
        }
        next.push_back(sub(params[k].value, scale(step, lr)));
      }
      params = params.with_values(next);
      ++steps;
    }
    result.epoch_losses.push_back(loss_sum / static_cast<double>(steps));
    if (keep_snapshots) result.epoch_snapshots.push_back(params);
  }
  result.params = params;
  return result;
}

Tensor predict(const ModelSpec& spec, const ParamSet& params, const Tensor& inputs, std::size_t chunk) {
  NoRecordScope no_record;
  const std::size_t n = inputs.dim(0);
  std::vector<double> out;
  out.reserve(n * static_cast<std::size_t>(spec.classes));
  for (std::size_t start = 0; start < n; start += chunk) {
    std::vector<std::size_t> rows(std::min(chunk, n - start));
    std::iota(rows.begin(), rows.end(), start);
    const Tensor logits = forward(spec, params, take_rows(inputs, rows)).logits;
    out.insert(out.end(), logits.vec().begin(), logits.vec().end());
  }
  return Tensor({n, static_cast<std::size_t>(spec.classes)}, std::move(out));
}

}  // namespace edf::nets
