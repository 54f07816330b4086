#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "edf/data_io.hpp"
#include "edf/expert_buffer.hpp"
#include "edf/nets.hpp"
#include "edf/ops.hpp"
#include "edf/tape.hpp"
#include "gradcheck.hpp"

using namespace edf;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("edf_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("init_params is deterministic and shaped per layer") {
  nets::ModelSpec spec;
  spec.width = 32;
  const auto a = nets::init_params(spec, 11);
  const auto b = nets::init_params(spec, 11);
  CHECK(nets::bit_equal(a, b));
  CHECK_FALSE(nets::bit_equal(a, nets::init_params(spec, 12)));
  CHECK(a[0].name == "conv1.weight");
  CHECK(a[0].value.shape() == Shape{32, 3, 3, 3});
  CHECK(a[0].layer == 1);
  CHECK(a[1].layer == 1);
  CHECK(a.size() == 8);
  CHECK(a[7].name == "fc.bias");
}

TEST_CASE("mlp depth 2 width 16 has six parameter tensors") {
  nets::ModelSpec spec;
  spec.arch = nets::Arch::Mlp;
  spec.depth = 2;
  spec.width = 16;
  spec.classes = 10;
  const auto p = nets::init_params(spec, 0);
  // two hidden layers and the head, each a weight and a bias
  REQUIRE(p.size() == 6);
  CHECK(p[4].name == "head.weight");
  CHECK(p[4].value.shape() == Shape{10, 16});
  CHECK(p[5].layer == 3);
}

TEST_CASE("forward shape contract") {
  nets::ModelSpec spec;
  std::mt19937_64 rng(1);
  const auto params = nets::init_params(spec, 2);
  const Tensor batch = testing::random_tensor({3, 3, 32, 32}, rng);
  const auto out = nets::forward(spec, params, batch);
  CHECK(out.logits.shape() == Shape{3, 4});
  REQUIRE(out.feature_maps.size() == 3);
  CHECK(out.feature_maps[0].shape() == Shape{3, 8, 32, 32});
  CHECK(out.feature_maps[2].shape() == Shape{3, 8, 8, 8});
  CHECK(spec.final_spatial() == std::pair{4, 4});
  CHECK(out.features.shape() == Shape{3, 8 * 4 * 4});

  nets::ModelSpec mlp = spec;
  mlp.arch = nets::Arch::Mlp;
  mlp.depth = 1;
  const auto m = nets::forward(mlp, nets::init_params(mlp, 2), batch);
  CHECK(m.feature_maps.empty());
  CHECK(m.logits.shape() == Shape{3, 4});

  CHECK_THROWS_AS(nets::forward(spec, params, testing::random_tensor({1, 3, 16, 16}, rng)), ShapeError);
  nets::ModelSpec tiny = spec;
  tiny.height = 4;
  CHECK_THROWS_AS(tiny.validate(), ConfigError);
}

TEST_CASE("sgd_step_on_tape: zero step and closed-form linear update") {
  PrecisionScope f64(Precision::F64);
  nets::ModelSpec spec;
  spec.arch = nets::Arch::Mlp;
  spec.depth = 0;
  spec.channels = 1;
  spec.height = 1;
  spec.image_width = 1;
  spec.classes = 2;
  const nets::ParamSet params(std::vector<nets::Param>{
      {"head.weight", 1, Tensor({2, 1}, {0.3, -0.2})},
      {"head.bias", 1, Tensor({2}, {0.1, 0.05})},
  });
  const Tensor x({1, 1, 1, 1}, {1.5});
  const Tensor q({1, 2}, {1.0, 0.0});

  Tape tape;
  TapeScope scope(tape);
  const auto same = nets::sgd_step_on_tape(spec, params, x, q, Tensor::scalar(0.0));
  for (std::size_t i = 0; i < params.size(); ++i) CHECK(bit_equal(same[i].value.detach(), params[i].value));

  // logits z = W x + b, p = softmax(z); dL/dW = (p - q) x, dL/db = p - q
  const double eta = 0.4;
  const double z0 = 0.3 * 1.5 + 0.1, z1 = -0.2 * 1.5 + 0.05;
  const double p0 = std::exp(z0) / (std::exp(z0) + std::exp(z1));
  const double p1 = 1.0 - p0;
  const auto next = nets::sgd_step_on_tape(spec, params, x, q, Tensor::scalar(eta));
  CHECK(next[0].value[0] == doctest::Approx(0.3 - eta * (p0 - 1.0) * 1.5).epsilon(1e-12));
  CHECK(next[0].value[1] == doctest::Approx(-0.2 - eta * p1 * 1.5).epsilon(1e-12));
  CHECK(next[1].value[0] == doctest::Approx(0.1 - eta * (p0 - 1.0)).epsilon(1e-12));
  CHECK(next[1].value[1] == doctest::Approx(0.05 - eta * p1).epsilon(1e-12));
}

TEST_CASE("two tape steps equal a replay of the composition") {
  nets::ModelSpec spec;
  spec.height = spec.image_width = 8;
  spec.depth = 2;
  std::mt19937_64 rng(4);
  const Tensor x = testing::random_tensor({4, 3, 8, 8}, rng);
  const Tensor q = nets::one_hot({0, 1, 2, 3}, 4);
  const auto start = nets::init_params(spec, 9);
  auto twice = [&] {
    Tape tape;
    TapeScope scope(tape);
    auto p = nets::sgd_step_on_tape(spec, start, x, q, Tensor::scalar(0.05));
    p = nets::sgd_step_on_tape(spec, p, x, q, Tensor::scalar(0.05));
    return p.detached();
  };
  CHECK(nets::bit_equal(twice(), twice()));
}

TEST_CASE("sgd step decreases loss on a separable batch") {
  nets::ModelSpec spec;
  spec.arch = nets::Arch::Mlp;
  spec.depth = 1;
  spec.width = 4;
  spec.channels = 1;
  spec.height = 1;
  spec.image_width = 2;
  spec.classes = 2;
  const Tensor x({4, 1, 1, 2}, {1, 1, 2, 1.5, -1, -1, -2, -0.5});
  const Tensor q = nets::one_hot({0, 0, 1, 1}, 2);
  auto params = nets::init_params(spec, 3);
  auto loss = [&](const nets::ParamSet& p) {
    NoRecordScope off;
    return softmax_cross_entropy(nets::forward(spec, p, x).logits, q).item();
  };
  for (int s = 0; s < 20; ++s) {
    Tape tape;
    TapeScope scope(tape);
    const double before = loss(params);
    params = nets::sgd_step_on_tape(spec, params, x, q, Tensor::scalar(1e-2)).detached();
    CHECK(loss(params) < before);
  }
}

TEST_CASE("parameter enumeration survives serialization") {
  nets::ModelSpec spec;
  experts::Trajectory t;
  t.spec = spec;
  t.snapshots = {nets::init_params(spec, 1), nets::init_params(spec, 2)};
  const auto dir = scratch_dir("enum");
  experts::save_trajectory(t, dir / "t.edft");
  const auto back = experts::load_trajectory(dir / "t.edft");
  REQUIRE(back.snapshots.size() == 2);
  for (std::size_t i = 0; i < t.snapshots[0].size(); ++i) {
    CHECK(back.snapshots[1][i].name == t.snapshots[1][i].name);
    CHECK(back.snapshots[1][i].layer == t.snapshots[1][i].layer);
    CHECK(back.snapshots[1][i].value.shape() == t.snapshots[1][i].value.shape());
  }
}

TEST_CASE("toy generator construction") {
  data::ToyGenSpec g;
  g.object_fraction_min = g.object_fraction_max = 1.0;
  g.clutter = 0.0;
  g.per_class = 3;
  const auto full = data::generate_toy(g);
  for (double a : full.object_area) CHECK(a == 32.0 * 32.0);

  data::ToyGenSpec big;
  big.per_class = 500;
  big.seed = 5;
  const auto ds = data::generate_toy(big);
  CHECK(ds.size() == 2000);
  std::vector<int> count(4, 0);
  for (int l : ds.labels) ++count[static_cast<std::size_t>(l)];
  for (int c : count) CHECK(c == 500);
  CHECK(bit_equal(ds.images, data::generate_toy(big).images));
  ds.validate();

  data::ToyGenSpec tiny;
  tiny.dims = {3, 6, 6};
  tiny.object_fraction_min = 0.1;
  CHECK_THROWS_WITH_AS(data::generate_toy(tiny), doctest::Contains("too small"), ConfigError);
}

TEST_CASE("toy object area grows with the object fraction") {
  double previous = 0.0;
  for (double f : {0.1, 0.3, 0.6}) {
    data::ToyGenSpec g;
    g.classes = 4;
    g.per_class = 25;
    g.object_fraction_min = g.object_fraction_max = f;
    g.seed = 8;
    const auto ds = data::generate_toy(g);
    double mean = 0.0;
    for (double a : ds.object_area) mean += a / static_cast<double>(ds.size());
    CHECK(mean > previous);
    previous = mean;
  }
}

TEST_CASE("load_raw scaling and errors") {
  const auto dir = scratch_dir("raw");
  write_bytes(dir / "img.u8", {0, 255, 128, 64, 1, 2, 3, 4});
  write_bytes(dir / "lab.u8", {0, 1});
  const auto ds = data::load_raw(dir / "img.u8", dir / "lab.u8", {1, 2, 2}, 2);
  REQUIRE(ds.size() == 2);
  CHECK(ds.images[0] == 0.0);
  CHECK(ds.images[1] == 1.0);
  CHECK(ds.images[2] == doctest::Approx(0.50196).epsilon(1e-4));
  CHECK(ds.images[3] == doctest::Approx(0.25098).epsilon(1e-4));

  write_bytes(dir / "short.u8", {0});
  CHECK_THROWS_WITH(data::load_raw(dir / "img.u8", dir / "short.u8", {1, 2, 2}, 2),
                    doctest::Contains("label/image count mismatch"));
  write_bytes(dir / "empty.u8", {});
  CHECK_THROWS(data::load_raw(dir / "empty.u8", dir / "lab.u8", {1, 2, 2}, 2));
  CHECK_THROWS(data::load_raw(dir / "missing.u8", dir / "lab.u8", {1, 2, 2}, 2));

  data::save_raw(ds, dir / "img2.u8", dir / "lab2.u8");
  const auto again = data::load_raw(dir / "img2.u8", dir / "lab2.u8", {1, 2, 2}, 2);
  CHECK(bit_equal(again.images, ds.images));
}

TEST_CASE("image dumps are 8-bit and round trip") {
  const auto dir = scratch_dir("dump");
  auto files = data::dump_images(Tensor({2, 1, 1, 1}, {1.0, 0.0}), dir, "px");
  REQUIRE(files.size() == 2);
  CHECK(data::read_pnm(files[0])[0] == 1.0);
  CHECK(data::read_pnm(files[1])[0] == 0.0);
  {
    std::ifstream in(files[0], std::ios::binary);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(content.rfind("P5\n1 1\n255\n", 0) == 0);
    CHECK(static_cast<unsigned char>(content.back()) == 255);
  }

  std::mt19937_64 rng(2);
  const Tensor img = testing::random_tensor({1, 3, 5, 7}, rng, 0.0, 1.0);
  const auto rgb = data::dump_images(img, dir, "rgb");
  const Tensor back = data::read_pnm(rgb[0]);
  CHECK(back.shape() == Shape{3, 5, 7});
  for (std::size_t i = 0; i < img.numel(); ++i) CHECK(std::abs(back[i] - img[i]) <= 1.0 / 255.0);
}
