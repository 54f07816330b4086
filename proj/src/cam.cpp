#include "edf/cam.hpp"

#include <algorithm>
#include <numeric>

#include "edf/ops.hpp"
#include "edf/tape.hpp"
#include "param_io.hpp"

namespace edf::cam {

CamModel train_cam_model(const data::LabeledDataset& dataset, const data::LabeledDataset* val,
                         const data::ChannelStats& stats, const nets::ModelSpec& spec,
                         const nets::TrainOptions& options, std::uint64_t seed) {
  if (spec.arch != nets::Arch::ConvNet || spec.depth < 1) {
    throw ConfigError("CAM model requires conv blocks");
  }
  const Tensor inputs = data::normalize(dataset.images, stats).detach();
  nets::TrainOptions train = options;
  train.seed = seed;
  auto result = nets::train_classifier(spec, nets::init_params(spec, seed), inputs,
                                       nets::one_hot(dataset.labels, dataset.classes), train);
  CamModel model{spec, result.params.detached(), stats, 0.0, 0.0};
  model.train_accuracy = nets::accuracy(nets::predict(spec, model.params, inputs), dataset.labels);
  if (val != nullptr) {
    model.val_accuracy = nets::accuracy(
        nets::predict(spec, model.params, data::normalize(val->images, stats)), val->labels);
  }
  return model;
}

namespace {
constexpr char kMagic[] = "EDFC";
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_cam_model(const CamModel& model, const std::filesystem::path& path) {
  io::Writer w;
  w.raw(std::string(kMagic, 4));
  w.u32(kVersion);
  io::write_spec(w, model.spec);
  w.u32(static_cast<std::uint32_t>(model.stats.mean.size()));
  for (double v : model.stats.mean) w.f64(v);
  for (double v : model.stats.std) w.f64(v);
  w.f64(model.train_accuracy);
  w.f64(model.val_accuracy);
  w.u32(static_cast<std::uint32_t>(model.params.size()));
  io::write_params(w, model.params);
  w.save(path);
}

CamModel load_cam_model(const std::filesystem::path& path) {
  io::Reader r(path);
  if (r.remaining() < 4 || r.raw(4) != std::string(kMagic, 4)) {
    throw FormatError(path.string() + " is not a CAM model file");
  }
  const auto version = r.u32();
  if (version != kVersion) throw FormatError("unsupported CAM model version " + std::to_string(version));
  CamModel m;
  m.spec = io::read_spec(r);
  const auto c = r.u32();
  m.stats.mean.resize(c);
  m.stats.std.resize(c);
  for (auto& v : m.stats.mean) v = r.f64();
  for (auto& v : m.stats.std) v = r.f64();
  m.train_accuracy = r.f64();
  m.val_accuracy = r.f64();
  m.params = io::read_params(r, r.u32());
  if (r.remaining() != 0) throw FormatError(path.string() + ": trailing bytes");
  return m;
}

Tensor ActivationMapSet::map(std::size_t i) const {
  const std::size_t h = maps.dim(1), w = maps.dim(2);
  const auto v = maps.values().subspan(i * h * w, h * w);
  return Tensor({h, w}, std::vector<double>(v.begin(), v.end()));
}

std::size_t ActivationMapSet::degenerate_count() const {
  return static_cast<std::size_t>(std::count(degenerate.begin(), degenerate.end(), true));
}

Tensor block_cam(const Tensor& feature_map, const Tensor& gradient) {
  if (feature_map.rank() != 4 || feature_map.shape() != gradient.shape()) {
    throw ShapeError("block_cam: feature map and gradient must share a [B,C,h,w] shape");
  }
  const std::size_t b = feature_map.dim(0), c = feature_map.dim(1);
  const std::size_t hw = feature_map.dim(2) * feature_map.dim(3);
  const auto a = feature_map.values();
  const auto g = gradient.values();
  std::vector<double> out(b * hw, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    double* o = out.data() + i * hw;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (i * c + ch) * hw;
      double alpha = 0.0;
      for (std::size_t p = 0; p < hw; ++p) alpha += g[base + p];
      alpha /= static_cast<double>(hw);
      for (std::size_t p = 0; p < hw; ++p) o[p] += alpha * a[base + p];
    }
    for (std::size_t p = 0; p < hw; ++p) o[p] = std::max(o[p], 0.0);
  }
  return Tensor({b, feature_map.dim(2), feature_map.dim(3)}, std::move(out));
}

namespace {

// Divides by the maximum; returns false (and leaves zeros) when it is not positive.
bool max_normalize(double* v, std::size_t n) {
  const double mx = *std::max_element(v, v + n);
  if (!(mx > 0.0)) {
    std::fill(v, v + n, 0.0);
    return false;
  }
  for (std::size_t i = 0; i < n; ++i) v[i] /= mx;
  return true;
}

}  // namespace

double clamped_mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  // rounding can push the sum of a constant map just outside its range
  return std::clamp(s / static_cast<double>(v.size()), *lo, *hi);
}

ActivationMapSet extract_maps(const CamModel& model, const Tensor& images,
                              const std::vector<int>& targets, std::size_t chunk) {
  const auto& spec = model.spec;
  if (images.rank() != 4 || images.dim(1) != static_cast<std::size_t>(spec.channels) ||
      images.dim(2) != static_cast<std::size_t>(spec.height) ||
      images.dim(3) != static_cast<std::size_t>(spec.image_width)) {
    throw ShapeError("extract_maps: images " + shape_str(images.shape()) + " do not match the model input");
  }
  if (targets.size() != images.dim(0)) throw ShapeError("extract_maps: one target class per image");
  if (chunk == 0) chunk = 64;
  const std::size_t n = images.dim(0), h = images.dim(2), w = images.dim(3), hw = h * w;
  std::vector<double> maps(n * hw, 0.0);
  ActivationMapSet out;
  out.means.assign(n, 0.0);
  out.degenerate.assign(n, false);
  for (std::size_t lo = 0; lo < n; lo += chunk) {
    const std::size_t hi = std::min(n, lo + chunk);
    std::vector<std::size_t> rows(hi - lo);
    std::iota(rows.begin(), rows.end(), lo);
    std::vector<int> labels(targets.begin() + static_cast<std::ptrdiff_t>(lo),
                            targets.begin() + static_cast<std::ptrdiff_t>(hi));
    Tape tape;
    TapeScope scope(tape);
    Tensor x;
    {
      NoRecordScope constant;
      x = data::normalize(take_rows(images.detach(), rows), model.stats);
    }
    x = tape.watch(x);
    const auto fwd = nets::forward(spec, model.params, x);
    const Tensor y = sum(mul(fwd.logits, nets::one_hot(labels, spec.classes)));
    const auto grads = tape.grad(y, fwd.feature_maps);
    std::vector<double> fused((hi - lo) * hw, 0.0);
    for (std::size_t l = 0; l < fwd.feature_maps.size(); ++l) {
      const Tensor cam = block_cam(fwd.feature_maps[l].detach(), grads[l]);
      const std::size_t fh = cam.dim(1), fw = cam.dim(2);
      std::vector<double> up(hw);
      for (std::size_t i = 0; i < hi - lo; ++i) {
        const auto src = cam.values().subspan(i * fh * fw, fh * fw);
        for (std::size_t yy = 0; yy < h; ++yy) {
          for (std::size_t xx = 0; xx < w; ++xx) up[yy * w + xx] = src[(yy * fh / h) * fw + xx * fw / w];
        }
        max_normalize(up.data(), hw);
        for (std::size_t p = 0; p < hw; ++p) fused[i * hw + p] += up[p];
      }
    }
    const double blocks = static_cast<double>(fwd.feature_maps.size());
    for (std::size_t i = 0; i < hi - lo; ++i) {
      double* f = fused.data() + i * hw;
      for (std::size_t p = 0; p < hw; ++p) f[p] /= blocks;
      const bool ok = max_normalize(f, hw);
      out.degenerate[lo + i] = !ok;
      out.means[lo + i] = clamped_mean({f, hw});
      std::copy(f, f + hw, maps.begin() + static_cast<std::ptrdiff_t>((lo + i) * hw));
    }
  }
  out.maps = Tensor({n, h, w}, std::move(maps));
  return out;
}

double image_complexity(const Tensor& map, double threshold) {
  if (map.numel() == 0) throw ShapeError("image_complexity: empty map");
  std::size_t high = 0;
  for (double v : map.values()) high += v >= threshold ? 1 : 0;
  return 1.0 - static_cast<double>(high) / static_cast<double>(map.numel());
}

double discriminative_area(const Tensor& map) {
  if (map.numel() == 0) throw ShapeError("discriminative_area: empty map");
  const double mean = clamped_mean(map.values());
  std::size_t above = 0;
  for (double v : map.values()) above += v > mean ? 1 : 0;
  return static_cast<double>(above) / static_cast<double>(map.numel());
}

Curation curate_subsets(const data::LabeledDataset& dataset, const CamModel& model, int k,
                        double threshold) {
  if (k < 1) throw ConfigError("classes per subset must be >= 1");
  if (dataset.classes < 2 * k) {
    throw ConfigError("curation needs at least " + std::to_string(2 * k) + " classes, dataset has " +
                      std::to_string(dataset.classes));
  }
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("complexity threshold must be in (0, 1)");
  const auto maps = extract_maps(model, dataset.images, dataset.labels);
  Curation c;
  c.report.threshold = threshold;
  const auto classes = static_cast<std::size_t>(dataset.classes);
  std::vector<double> sum(classes, 0.0);
  std::vector<std::size_t> count(classes, 0);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const double v = image_complexity(maps.map(i), threshold);
    c.report.per_image.push_back(v);
    const auto cls = static_cast<std::size_t>(dataset.labels[i]);
    sum[cls] += v;
    ++count[cls];
  }
  for (std::size_t j = 0; j < classes; ++j) {
    if (count[j] == 0) throw ConfigError("class " + std::to_string(j) + " has no images to score");
    c.report.per_class.push_back(sum[j] / static_cast<double>(count[j]));
  }
  c.ranking.resize(classes);
  std::iota(c.ranking.begin(), c.ranking.end(), 0);
  const auto& pc = c.report.per_class;
  std::stable_sort(c.ranking.begin(), c.ranking.end(), [&](int a, int b) {
    return pc[static_cast<std::size_t>(a)] > pc[static_cast<std::size_t>(b)];
  });
  const auto ku = static_cast<std::size_t>(k);
  c.hard.assign(c.ranking.begin(), c.ranking.begin() + k);
  c.easy.assign(c.ranking.rbegin(), c.ranking.rbegin() + k);
  for (std::size_t j = 0; j < ku; ++j) {
    c.hard_complexity += pc[static_cast<std::size_t>(c.hard[j])] / static_cast<double>(ku);
    c.easy_complexity += pc[static_cast<std::size_t>(c.easy[j])] / static_cast<double>(ku);
  }
  return c;
}

}  // namespace edf::cam
