#include "edf/data_io.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include "edf/ops.hpp"

namespace edf::data {

ImageDims LabeledDataset::dims() const {
  if (images.rank() != 4) throw ShapeError("dataset images must be [N,C,H,W]");
  return {static_cast<int>(images.dim(1)), static_cast<int>(images.dim(2)), static_cast<int>(images.dim(3))};
}

void LabeledDataset::validate() const {
  if (images.rank() != 4 || images.dim(0) != labels.size()) {
    throw ShapeError("dataset: " + std::to_string(labels.size()) + " labels for images " +
                     shape_str(images.shape()));
  }
  std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(classes, 0)), 0);
  for (int l : labels) {
    if (l < 0 || l >= classes) {
      throw FormatError("label " + std::to_string(l) + " outside [0," + std::to_string(classes) + ")");
    }
    ++counts[static_cast<std::size_t>(l)];
  }
  for (double v : images.values()) {
    if (v < 0.0 || v > 1.0) throw FormatError("dataset pixel outside [0,1]");
  }
  if (split == Split::Train) {
    for (std::size_t c = 0; c < counts.size(); ++c) {
      if (counts[c] == 0) throw FormatError("class " + std::to_string(c) + " has no training images");
    }
  }
}

std::vector<std::vector<std::size_t>> LabeledDataset::indices_by_class() const {
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(classes));
  for (std::size_t i = 0; i < labels.size(); ++i) out[static_cast<std::size_t>(labels[i])].push_back(i);
  return out;
}

LabeledDataset LabeledDataset::subset(const std::vector<std::size_t>& rows) const {
  LabeledDataset out;
  out.images = take_rows(images, rows).detach();
  out.classes = classes;
  out.split = split;
  for (auto r : rows) {
    out.labels.push_back(labels.at(r));
    if (!object_area.empty()) out.object_area.push_back(object_area.at(r));
  }
  return out;
}

namespace {

bool pattern_on(int cls, int y, int x, int h, int w) {
  switch (cls) {
    case 0: return (y / 2) % 2 == 0;
    case 1: return (x / 2) % 2 == 0;
    case 2: return ((y / 2) + (x / 2)) % 2 == 0;
    case 3: return ((x + y) / 2) % 2 == 0;
    case 4: return ((x - y + 4 * (h + w)) / 2) % 2 == 0;
    case 5: return y % 4 < 2 && x % 4 < 2;
    case 6: {
      const int r = std::max(std::abs(2 * y - (h - 1)), std::abs(2 * x - (w - 1))) / 2;
      return (r / 2) % 2 == 0;
    }
    case 7: return y % 4 == 0 || x % 4 == 0;
    default: return false;
  }
}

}  // namespace

LabeledDataset generate_toy(const ToyGenSpec& spec) {
  if (spec.classes < 1 || spec.classes > kToyPatternCount) {
    throw ConfigError("toy generator supports 1.." + std::to_string(kToyPatternCount) + " classes");
  }
  if (spec.per_class < 1) throw ConfigError("toy generator needs at least one image per class");
  if (spec.dims.channels != 1 && spec.dims.channels != 3) throw ConfigError("toy images must have 1 or 3 channels");
  if (!spec.class_fraction.empty() && spec.class_fraction.size() != static_cast<std::size_t>(spec.classes)) {
    throw ConfigError("class_fraction needs one range per class");
  }
  const int H = spec.dims.height, W = spec.dims.width, C = spec.dims.channels;
  auto range_of = [&](int cls) {
    return spec.class_fraction.empty() ? std::pair{spec.object_fraction_min, spec.object_fraction_max}
                                       : spec.class_fraction[static_cast<std::size_t>(cls)];
  };
  for (int c = 0; c < spec.classes; ++c) {
    auto [lo, hi] = range_of(c);
    if (!(lo > 0.0 && hi <= 1.0 && lo <= hi)) throw ConfigError("object fraction must lie in (0,1]");
    if (std::lround(std::sqrt(lo) * std::min(H, W)) < 4) {
      throw ConfigError("image dims too small for object fraction " + std::to_string(lo));
    }
  }
  if (spec.clutter < 0.0 || spec.clutter > 1.0) throw ConfigError("clutter density must lie in [0,1]");

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  const std::size_t plane = static_cast<std::size_t>(H * W);
  const std::size_t n = static_cast<std::size_t>(spec.classes * spec.per_class);
  std::vector<double> pixels(n * static_cast<std::size_t>(C) * plane);
  LabeledDataset ds;
  ds.classes = spec.classes;
  ds.split = spec.split;
  ds.labels.reserve(n);
  ds.object_area.reserve(n);

  auto color = [&] {
    std::vector<double> c(static_cast<std::size_t>(C));
    for (auto& v : c) v = u01(rng);
    return c;
  };

  for (std::size_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % static_cast<std::size_t>(spec.classes));
    double* img = pixels.data() + i * static_cast<std::size_t>(C) * plane;
    auto put = [&](int y, int x, const std::vector<double>& c) {
      for (int ch = 0; ch < C; ++ch) img[static_cast<std::size_t>(ch) * plane + static_cast<std::size_t>(y * W + x)] = c[static_cast<std::size_t>(ch)];
    };

    const auto bg = color();
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) put(y, x, bg);

    // clutter: solid rectangles until the requested area is covered
    double covered = 0.0;
    const double target = spec.clutter * static_cast<double>(H * W);
    const int max_side = std::max(2, std::min(H, W) / 3);
    std::uniform_int_distribution<int> side(2, max_side);
    while (covered < target) {
      const int rh = side(rng), rw = side(rng);
      const int y0 = std::uniform_int_distribution<int>(0, H - rh)(rng);
      const int x0 = std::uniform_int_distribution<int>(0, W - rw)(rng);
      const auto c = color();
      for (int y = y0; y < y0 + rh; ++y)
        for (int x = x0; x < x0 + rw; ++x) put(y, x, c);
      covered += rh * rw;
    }

    auto [lo, hi] = range_of(cls);
    const double frac = lo + (hi - lo) * u01(rng);
    const int oh = std::clamp(static_cast<int>(std::lround(std::sqrt(frac) * H)), 4, H);
    const int ow = std::clamp(static_cast<int>(std::lround(std::sqrt(frac) * W)), 4, W);
    const int y0 = std::uniform_int_distribution<int>(0, H - oh)(rng);
    const int x0 = std::uniform_int_distribution<int>(0, W - ow)(rng);
    const auto on = color();
    std::vector<double> off(on.size());
    for (std::size_t ch = 0; ch < on.size(); ++ch) off[ch] = std::fmod(on[ch] + 0.5, 1.0);
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) put(y0 + y, x0 + x, pattern_on(cls, y, x, oh, ow) ? on : off);

    if (spec.noise > 0.0) {
      for (std::size_t k = 0; k < static_cast<std::size_t>(C) * plane; ++k) {
        img[k] = std::clamp(img[k] + spec.noise * noise(rng), 0.0, 1.0);
      }
    }
    ds.labels.push_back(cls);
    ds.object_area.push_back(static_cast<double>(oh * ow));
  }
  ds.images = Tensor({n, static_cast<std::size_t>(C), static_cast<std::size_t>(H), static_cast<std::size_t>(W)},
                     std::move(pixels));
  return ds;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

}  // namespace

LabeledDataset load_raw(const std::filesystem::path& images, const std::filesystem::path& labels,
                        const ImageDims& dims, int classes, Split split) {
  const auto img = read_bytes(images);
  const auto lab = read_bytes(labels);
  const std::size_t per = dims.pixels();
  if (per == 0) throw FormatError("image dims must be positive");
  if (img.empty()) throw FormatError("empty image file " + images.string());
  if (img.size() % per != 0) {
    throw FormatError("image file size " + std::to_string(img.size()) + " is not a multiple of " +
                      std::to_string(per));
  }
  const std::size_t n = img.size() / per;
  if (lab.size() != n) {
    throw FormatError("label/image count mismatch: " + std::to_string(lab.size()) + " labels, " +
                      std::to_string(n) + " images");
  }
  LabeledDataset ds;
  std::vector<double> v(img.size());
  for (std::size_t k = 0; k < img.size(); ++k) v[k] = static_cast<double>(img[k]) / 255.0;
  ds.images = Tensor({n, static_cast<std::size_t>(dims.channels), static_cast<std::size_t>(dims.height),
                      static_cast<std::size_t>(dims.width)},
                     std::move(v));
  int max_label = -1;
  for (auto b : lab) {
    ds.labels.push_back(b);
    max_label = std::max<int>(max_label, b);
  }
  ds.classes = classes > 0 ? classes : max_label + 1;
  ds.split = split;
  ds.validate();
  return ds;
}

void save_raw(const LabeledDataset& ds, const std::filesystem::path& images,
              const std::filesystem::path& labels) {
  std::vector<std::uint8_t> img(ds.images.numel());
  for (std::size_t k = 0; k < img.size(); ++k) img[k] = to_byte(ds.images[k]);
  std::vector<std::uint8_t> lab;
  for (int l : ds.labels) {
    if (l < 0 || l > 255) throw FormatError("label does not fit in a byte");
    lab.push_back(static_cast<std::uint8_t>(l));
  }
  write_bytes(images, img);
  write_bytes(labels, lab);
}

std::vector<std::filesystem::path> dump_images(const Tensor& images, const std::filesystem::path& dir,
                                               const std::string& prefix) {
  if (images.rank() != 4 || (images.dim(1) != 1 && images.dim(1) != 3)) {
    throw ShapeError("dump_images expects [N,1|3,H,W], got " + shape_str(images.shape()));
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw FormatError("cannot create " + dir.string() + ": " + ec.message());
  const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  std::vector<std::filesystem::path> written;
  for (std::size_t i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "_%04zu.%s", i, c == 1 ? "pgm" : "ppm");
    const auto path = dir / (prefix + name);
    const std::string header = (c == 1 ? "P5\n" : "P6\n") + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t ch = 0; ch < c; ++ch) bytes.push_back(to_byte(images[((i * c + ch) * h + y) * w + x]));
    write_bytes(path, bytes);
    written.push_back(path);
  }
  return written;
}

Tensor read_pnm(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  std::size_t pos = 0;
  auto token = [&] {
    std::string t;
    while (pos < bytes.size()) {
      const char ch = static_cast<char>(bytes[pos]);
      if (ch == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        ++pos;
      } else {
        break;
      }
    }
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P6") throw FormatError(path.string() + " is not a binary PGM/PPM");
  const std::size_t w = std::stoul(token()), h = std::stoul(token());
  if (std::stoul(token()) != 255) throw FormatError("only 8-bit PNM files are supported");
  ++pos;  // single whitespace after maxval
  const std::size_t c = magic == "P5" ? 1 : 3;
  if (bytes.size() < pos + c * h * w) throw FormatError(path.string() + " is truncated");
  std::vector<double> v(c * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) v[(ch * h + y) * w + x] = bytes[pos++] / 255.0;
  return Tensor({c, h, w}, std::move(v));
}

ChannelStats channel_stats(const Tensor& images) {
  if (images.rank() != 4 || images.dim(0) == 0) throw ShapeError("channel_stats expects non-empty [N,C,H,W]");
  const std::size_t n = images.dim(0), c = images.dim(1), plane = images.dim(2) * images.dim(3);
  ChannelStats s{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < plane; ++k) {
        const double v = images[(i * c + ch) * plane + k];
        sum += v;
        sq += v * v;
      }
    const double cnt = static_cast<double>(n * plane);
    s.mean[ch] = sum / cnt;
    s.std[ch] = std::sqrt(std::max(sq / cnt - s.mean[ch] * s.mean[ch], 1e-12));
  }
  return s;
}

Tensor normalize(const Tensor& images, const ChannelStats& stats) {
  const std::size_t c = stats.mean.size();
  if (images.rank() != 4 || images.dim(1) != c) throw ShapeError("normalize: channel mismatch");
  const Tensor mean({1, c, 1, 1}, stats.mean);
  const Tensor std({1, c, 1, 1}, stats.std);
  return div(sub(images, mean), std);
}

}  // namespace edf::data
