#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "edf/cam.hpp"
#include "edf/cpd.hpp"
#include "edf/dae.hpp"
#include "edf/ops.hpp"
#include "gradcheck.hpp"

using namespace edf;

namespace {

matcher::LossArray make_array(const std::vector<double>& n, const std::vector<double>& d) {
  matcher::LossArray arr;
  for (std::size_t i = 0; i < n.size(); ++i) {
    arr.entries.push_back({i, static_cast<int>(i / 2) + 1, "p" + std::to_string(i), Tensor::scalar(n[i]),
                           Tensor::scalar(d[i])});
  }
  return arr;
}

matcher::LossArray random_array(std::mt19937_64& rng, std::size_t p) {
  std::uniform_real_distribution<double> u(0.0, 2.0);
  std::vector<double> n(p), d(p);
  for (auto& v : n) v = u(rng);
  for (auto& v : d) v = u(rng) + 0.01;
  return make_array(n, d);
}

cam::ActivationMapSet map_set(const Tensor& maps) {
  cam::ActivationMapSet s;
  s.maps = maps;
  const std::size_t hw = maps.dim(1) * maps.dim(2);
  for (std::size_t i = 0; i < maps.dim(0); ++i) {
    s.means.push_back(cam::clamped_mean(maps.values().subspan(i * hw, hw)));
    s.degenerate.push_back(false);
  }
  return s;
}

}  // namespace

TEST_CASE("select_drop_indices examples") {
  PrecisionScope f64(Precision::F64);
  std::mt19937_64 rng(1);
  const auto eleven = make_array(std::vector<double>(11, 1.0), std::vector<double>(11, 1.0));
  CHECK(cpd::select_drop_indices(eleven, 0.0, cpd::Strategy::LossSorted, rng).empty());
  CHECK(cpd::select_drop_indices(eleven, 0.25, cpd::Strategy::LossSorted, rng).size() == 2);

  const auto three = make_array({3, 1, 2}, {1, 1, 1});
  CHECK(cpd::select_drop_indices(three, 1.0 / 3.0, cpd::Strategy::LossSorted, rng) == std::vector<std::size_t>{1});

  for (double a : {0.0, 0.125, 0.25, 0.375, 0.5, 0.75}) {
    CHECK_NOTHROW(cpd::select_drop_indices(eleven, a, cpd::Strategy::LossSorted, rng));
  }
  CHECK_THROWS_AS(cpd::select_drop_indices(eleven, 1.0, cpd::Strategy::LossSorted, rng), ConfigError);
  CHECK_THROWS_AS(cpd::select_drop_indices(eleven, -0.1, cpd::Strategy::LossSorted, rng), ConfigError);

  // ties go to the lower index
  CHECK(cpd::select_drop_indices(eleven, 0.25, cpd::Strategy::LossSorted, rng) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("positional strategies") {
  std::mt19937_64 rng(2);
  const auto arr = make_array(std::vector<double>(8, 1.0), std::vector<double>(8, 1.0));
  using V = std::vector<std::size_t>;
  CHECK(cpd::select_drop_indices(arr, 0.25, cpd::Strategy::First, rng) == V{0, 1});
  CHECK(cpd::select_drop_indices(arr, 0.25, cpd::Strategy::Last, rng) == V{6, 7});
  CHECK(cpd::select_drop_indices(arr, 0.25, cpd::Strategy::Middle, rng) == V{3, 4});
  CHECK(cpd::select_drop_indices(arr, 0.25, cpd::Strategy::Uniform, rng) == V{2, 6});
  const auto r = cpd::select_drop_indices(arr, 0.5, cpd::Strategy::Random, rng);
  CHECK(r.size() == 4);
  CHECK(std::is_sorted(r.begin(), r.end()));
  CHECK(std::adjacent_find(r.begin(), r.end()) == r.end());
  CHECK(cpd::parse_strategy("loss_sorted") == cpd::Strategy::LossSorted);
  CHECK_THROWS_AS(cpd::parse_strategy("lowest"), ConfigError);
  CHECK(cpd::all_strategies().size() == 6);
}

TEST_CASE("sort keys: normalized, raw and zero baselines") {
  const auto arr = make_array({1, 2, 0, 3}, {4, 1, 0, 0});
  const auto norm = cpd::entry_keys(arr, cpd::SortKey::Normalized);
  CHECK(norm[0] == 0.25);
  CHECK(norm[1] == 2.0);
  CHECK(norm[2] == 0.0);
  CHECK(std::isinf(norm[3]));
  const auto raw = cpd::entry_keys(arr, cpd::SortKey::Raw);
  CHECK(raw[1] == 2.0);
  std::mt19937_64 rng(3);
  CHECK(cpd::select_drop_indices(arr, 0.5, cpd::Strategy::LossSorted, rng) == std::vector<std::size_t>{0, 2});
  CHECK(cpd::select_drop_indices(arr, 0.5, cpd::Strategy::LossSorted, rng, cpd::SortKey::Raw) ==
        std::vector<std::size_t>{0, 2});
}

TEST_CASE("drop count and ordering over a random sweep") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> size(1, 40);
  std::uniform_real_distribution<double> ratio(0.0, 0.999);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto arr = random_array(rng, size(rng));
    const double alpha = ratio(rng);
    const auto drop = cpd::select_drop_indices(arr, alpha, cpd::Strategy::LossSorted, rng);
    REQUIRE(drop.size() == static_cast<std::size_t>(std::floor(alpha * static_cast<double>(arr.size()))));
    const auto keys = cpd::entry_keys(arr, cpd::SortKey::Normalized);
    double max_dropped = -1.0, min_kept = 1e300;
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const bool dropped = std::binary_search(drop.begin(), drop.end(), i);
      if (dropped) max_dropped = std::max(max_dropped, keys[i]);
      else min_kept = std::min(min_kept, keys[i]);
    }
    CHECK(max_dropped <= min_kept);
  }
}

TEST_CASE("drop_and_reduce") {
  PrecisionScope f64(Precision::F64);
  const auto arr = make_array({1, 4}, {1, 1});
  CHECK(cpd::drop_and_reduce(arr, {0}).item() == 4.0);
  CHECK(cpd::drop_and_reduce(arr, {0}, cpd::Scope::Full).item() == 2.0);
  CHECK(bit_equal(cpd::drop_and_reduce(arr, {}), matcher::total_loss(arr)));
  CHECK_THROWS(cpd::drop_and_reduce(arr, {0, 1}));
  CHECK_THROWS(cpd::drop_and_reduce(make_array({1, 1}, {0, 1}), {1}));

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_array(rng, 11);
    const auto drop = cpd::select_drop_indices(a, 0.375, cpd::Strategy::Random, rng);
    double n = 0.0, d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (std::binary_search(drop.begin(), drop.end(), i)) continue;
      n += a[i].numerator.item();
      d += a[i].denominator.item();
    }
    CHECK(std::abs(cpd::drop_and_reduce(a, drop).item() - n / d) <= 1e-12 * (n / d));
  }
}

TEST_CASE("image_complexity and discriminative_area") {
  CHECK(cam::image_complexity(Tensor::full({4, 4}, 0.7)) == 0.0);
  CHECK(cam::image_complexity(Tensor::full({4, 4}, 0.2)) == 1.0);
  CHECK(cam::image_complexity(Tensor({2, 2}, {0.5, 0.9, 0.1, 0.49})) == 0.5);
  CHECK(cam::discriminative_area(Tensor({2, 2}, {0, 0, 0, 1})) == 0.25);
  CHECK(cam::discriminative_area(Tensor::full({3, 3}, 0.4)) == 0.0);

  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor m = testing::random_tensor({7, 5}, rng, 0.0, 1.0);
    double mean = 0.0;
    for (double v : m.values()) mean += v / 35.0;
    int count = 0;
    for (double v : m.values()) count += v > mean;
    CHECK(cam::discriminative_area(m) == doctest::Approx(count / 35.0).epsilon(1e-12));

    // raising one pixel never raises complexity
    std::vector<double> raised = m.vec();
    raised[static_cast<std::size_t>(trial) % 35] = std::min(1.0, raised[static_cast<std::size_t>(trial) % 35] + 0.3);
    CHECK(cam::image_complexity(Tensor({7, 5}, raised)) <= cam::image_complexity(m));
  }
}

TEST_CASE("weights_from_map") {
  {
    const auto s = map_set(Tensor({1, 1, 2}, {0.7, 0.3}));
    const auto w = dae::weights_from_map(s, 1.0);
    CHECK(w[0] == doctest::Approx(1.7));
    CHECK(w[1] == 1.0);
  }
  {
    const auto s = map_set(Tensor::full({1, 2, 2}, 0.4));
    const auto w = dae::weights_from_map(s, 2.0);
    for (double v : w.values()) CHECK(v == doctest::Approx(2.4));
  }
  {
    // a pixel exactly at the mean takes the enhanced branch
    const auto s = map_set(Tensor({1, 1, 3}, {0.0, 0.5, 1.0}));
    CHECK(dae::weights_from_map(s, 1.0)[1] == doctest::Approx(1.5));
  }
  {
    auto s = map_set(Tensor::zeros({1, 2, 2}));
    s.degenerate[0] = true;
    const Tensor w = dae::weights_from_map(s, 5.0);
    for (double v : w.values()) CHECK(v == 1.0);
  }
  CHECK_THROWS_AS(dae::weights_from_map(map_set(Tensor::zeros({1, 1, 1})), 0.0), ConfigError);

  std::mt19937_64 rng(7);
  for (double beta : {0.5, 1.0, 2.0, 5.0, 10.0}) {
    const auto s = map_set(testing::random_tensor({3, 6, 6}, rng, 0.0, 1.0));
    const auto w = dae::weights_from_map(s, beta);
    for (double v : w.values()) CHECK((v == 1.0 || (v >= beta && v <= beta + 1.0)));
    if (beta >= 1.0) CHECK(*std::min_element(w.values().begin(), w.values().end()) == 1.0);
  }
}

TEST_CASE("rescale_gradients") {
  const Tensor g = Tensor::full({1, 3, 2, 2}, 2.0);
  CHECK(bit_equal(dae::rescale_gradients(g, Tensor::full({1, 2, 2}, 1.0)), g));
  const auto r = dae::rescale_gradients(g, Tensor({1, 2, 2}, {1, 1.7, 1, 1}));
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(r[c * 4 + 1] == doctest::Approx(3.4));
    CHECK(r[c * 4 + 0] == 2.0);
  }
  CHECK_THROWS_AS(dae::rescale_gradients(g, Tensor::full({1, 3, 3}, 1.0)), ShapeError);

  std::mt19937_64 rng(8);
  const Tensor gr = testing::random_tensor({4, 3, 5, 6}, rng);
  const Tensor w = testing::random_tensor({4, 5, 6}, rng, 1.0, 3.0);
  const Tensor out = dae::rescale_gradients(gr, w);
  double worst = 0.0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 5; ++y)
        for (std::size_t x = 0; x < 6; ++x) {
          const std::size_t gi = ((i * 3 + c) * 5 + y) * 6 + x;
          worst = std::max(worst, std::abs(out[gi] - gr[gi] * w[(i * 5 + y) * 6 + x]));
          CHECK(std::signbit(out[gi]) == std::signbit(gr[gi]));
        }
  CHECK(worst <= 1e-12);
}

TEST_CASE("refresh_due") {
  CHECK(dae::refresh_due(0, 50));
  CHECK_FALSE(dae::refresh_due(49, 50));
  CHECK(dae::refresh_due(50, 50));
  for (long k : {1L, 50L, 100L, 200L}) CHECK(dae::refresh_due(0, k));
  CHECK_THROWS_AS(dae::refresh_due(3, 0), ConfigError);
}

TEST_CASE("block_cam and extract_maps on small models") {
  PrecisionScope f64(Precision::F64);
  // constant activations and gradients give a uniform map
  const Tensor a = Tensor::full({1, 2, 3, 3}, 0.5);
  const Tensor g = Tensor::full({1, 2, 3, 3}, 0.2);
  const Tensor m = cam::block_cam(a, g);
  for (double v : m.values()) CHECK(v == doctest::Approx(0.2));

  nets::ModelSpec spec;
  spec.depth = 2;
  spec.height = spec.image_width = 8;
  cam::CamModel model{spec, nets::init_params(spec, 3), {{0.5, 0.5, 0.5}, {0.3, 0.3, 0.3}}, 0, 0};
  std::mt19937_64 rng(9);
  const Tensor images = testing::random_tensor({5, 3, 8, 8}, rng, 0.0, 1.0);
  const std::vector<int> targets{0, 1, 2, 3, 0};
  const auto maps = cam::extract_maps(model, images, targets, 2);
  CHECK(maps.maps.shape() == Shape{5, 8, 8});
  for (double v : maps.maps.values()) CHECK((v >= 0.0 && v <= 1.0));
  const auto again = cam::extract_maps(model, images, targets);
  CHECK(bit_equal(maps.maps, again.maps));
  for (std::size_t i = 0; i < 5; ++i) {
    double mean = 0.0;
    const Tensor mi = maps.map(i);
    for (double v : mi.values()) mean += v / 64.0;
    CHECK(maps.means[i] == doctest::Approx(mean).epsilon(1e-12));
  }
  CHECK_THROWS_AS(cam::extract_maps(model, images, {0, 1}), ShapeError);
}

TEST_CASE("CAM model training contract") {
  data::ToyGenSpec gen;
  gen.per_class = 10;
  gen.dims = {3, 8, 8};
  gen.object_fraction_min = 0.5;
  gen.object_fraction_max = 0.8;
  const auto ds = data::generate_toy(gen);
  const auto stats = data::channel_stats(ds.images);
  nets::ModelSpec spec;
  spec.depth = 1;
  spec.height = spec.image_width = 8;
  nets::TrainOptions opt;
  opt.epochs = 2;
  const auto a = cam::train_cam_model(ds, nullptr, stats, spec, opt, 4);
  const auto b = cam::train_cam_model(ds, nullptr, stats, spec, opt, 4);
  CHECK(nets::bit_equal(a.params, b.params));
  nets::ModelSpec mlp = spec;
  mlp.arch = nets::Arch::Mlp;
  CHECK_THROWS_WITH(cam::train_cam_model(ds, nullptr, stats, mlp, opt, 4),
                    doctest::Contains("CAM model requires conv blocks"));

  const auto path = std::filesystem::temp_directory_path() / "edf_test_cam.edfc";
  cam::save_cam_model(a, path);
  const auto back = cam::load_cam_model(path);
  CHECK(nets::bit_equal(back.params, a.params));
  CHECK(back.stats.std == a.stats.std);
}

TEST_CASE("curate_subsets with two classes") {
  data::ToyGenSpec gen;
  gen.classes = 2;
  gen.per_class = 6;
  gen.dims = {3, 8, 8};
  gen.object_fraction_min = 0.5;
  gen.object_fraction_max = 0.8;
  const auto ds = data::generate_toy(gen);
  nets::ModelSpec spec;
  spec.depth = 1;
  spec.classes = 2;
  spec.height = spec.image_width = 8;
  const cam::CamModel model{spec, nets::init_params(spec, 1), data::channel_stats(ds.images), 0, 0};
  const auto c = cam::curate_subsets(ds, model, 1);
  REQUIRE(c.easy.size() == 1);
  REQUIRE(c.hard.size() == 1);
  CHECK(c.easy[0] != c.hard[0]);
  CHECK(c.hard_complexity >= c.easy_complexity);
  CHECK(c.report.per_image.size() == 12);
  CHECK_THROWS_AS(cam::curate_subsets(ds, model, 2), ConfigError);
}
