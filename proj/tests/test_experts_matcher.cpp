#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "edf/expert_buffer.hpp"
#include "edf/matcher.hpp"
#include "edf/ops.hpp"
#include "edf/tape.hpp"
#include "gradcheck.hpp"

using namespace edf;
namespace fs = std::filesystem;

namespace {

nets::ParamSet constant_params(std::initializer_list<double> values) {
  std::vector<nets::Param> out;
  int layer = 1;
  for (double v : values) out.push_back({"p" + std::to_string(layer), layer, Tensor({1}, {v})}), ++layer;
  return nets::ParamSet(std::move(out));
}

experts::Trajectory fake_trajectory(int epochs, std::uint64_t seed) {
  nets::ModelSpec spec;
  spec.height = spec.image_width = 8;
  spec.depth = 1;
  experts::Trajectory t;
  t.spec = spec;
  t.seed = seed;
  for (int e = 0; e <= epochs; ++e) t.snapshots.push_back(nets::init_params(spec, seed * 100 + static_cast<std::uint64_t>(e)));
  return t;
}

data::LabeledDataset small_toy(int per_class, std::uint64_t seed, double frac = 0.8) {
  data::ToyGenSpec g;
  g.per_class = per_class;
  g.dims = {3, 16, 16};
  g.object_fraction_min = frac;
  g.object_fraction_max = std::min(1.0, frac + 0.1);
  g.clutter = 0.2;
  g.seed = seed;
  return data::generate_toy(g);
}

}  // namespace

TEST_CASE("train_experts: snapshot counts, seeding and accuracy") {
  const auto ds = small_toy(40, 1);
  const auto stats = data::channel_stats(ds.images);
  nets::ModelSpec spec;
  spec.height = spec.image_width = 16;
  spec.depth = 2;
  experts::ExpertOptions opt;
  opt.epochs = 1;
  opt.count = 2;
  opt.train.lr = 0.05;
  opt.train.batch_size = 32;
  const auto one = experts::train_experts(ds, nullptr, stats, spec, opt, 3);
  REQUIRE(one.size() == 2);
  CHECK(one[0].snapshots.size() == 2);
  CHECK(one[0].epochs() == 1);
  CHECK_FALSE(nets::bit_equal(one[0].snapshots[0], one[1].snapshots[0]));
  const auto again = experts::train_experts(ds, nullptr, stats, spec, opt, 3);
  CHECK(nets::bit_equal(again[1].snapshots[1], one[1].snapshots[1]));

  opt.epochs = 0;
  CHECK_THROWS_AS(experts::train_experts(ds, nullptr, stats, spec, opt, 3), ConfigError);
}

TEST_CASE("expert training converges on an easy toy task") {
  const auto ds = small_toy(100, 2, 0.8);
  const auto stats = data::channel_stats(ds.images);
  nets::ModelSpec spec;
  spec.height = spec.image_width = 16;
  spec.depth = 2;
  experts::ExpertOptions opt;
  opt.epochs = 20;
  opt.count = 1;
  opt.train.lr = 0.2;
  opt.train.batch_size = 32;
  const auto t = experts::train_experts(ds, nullptr, stats, spec, opt, 4).front();
  CHECK(t.train_accuracy > 0.9);

  // later snapshots should mostly lower the training loss
  const Tensor x = data::normalize(ds.images, stats).detach();
  const Tensor y = nets::one_hot(ds.labels, ds.classes);
  auto loss = [&](const nets::ParamSet& p) {
    return softmax_cross_entropy(nets::predict(spec, p, x), y).item();
  };
  int improving = 0;
  for (int e = 0; e < t.epochs(); ++e) improving += loss(t.snapshots[static_cast<std::size_t>(e) + 1]) <= loss(t.snapshots[static_cast<std::size_t>(e)]);
  CHECK(static_cast<double>(improving) / t.epochs() >= 0.8);
}

TEST_CASE("sample_segment") {
  std::mt19937_64 rng(5);
  const std::vector<experts::Trajectory> two{fake_trajectory(2, 1)};
  for (int k = 0; k < 5; ++k) {
    const auto s = experts::sample_segment(two, 0, 2, rng);
    CHECK(s.t == 0);
    CHECK(s.start == &two[0].snapshots[0]);
    CHECK(s.target == &two[0].snapshots[2]);
  }
  CHECK_THROWS_AS(experts::sample_segment(two, 0, 0, rng), ConfigError);
  CHECK_THROWS_AS(experts::sample_segment(two, 1, 2, rng), ConfigError);

  const std::vector<experts::Trajectory> many{fake_trajectory(5, 1), fake_trajectory(5, 2)};
  std::set<int> starts;
  std::set<std::size_t> trajs;
  for (int k = 0; k < 1000; ++k) {
    const auto s = experts::sample_segment(many, 3, 2, rng);
    starts.insert(s.t);
    trajs.insert(s.trajectory);
    CHECK(s.target == &many[s.trajectory].snapshots[static_cast<std::size_t>(s.t + 2)]);
  }
  CHECK(starts == std::set<int>{0, 1, 2, 3});
  CHECK(trajs.size() == 2);
}

TEST_CASE("trajectory files: round trip and format errors") {
  const auto dir = fs::temp_directory_path() / "edf_test_traj";
  fs::create_directories(dir);
  auto t = fake_trajectory(3, 7);
  t.train_accuracy = 0.75;
  t.val_accuracy = 0.5;
  experts::save_trajectory(t, dir / "a.edft");
  const auto back = experts::load_trajectory(dir / "a.edft");
  CHECK(back.spec == t.spec);
  CHECK(back.seed == 7);
  CHECK(back.val_accuracy == 0.5);
  REQUIRE(back.snapshots.size() == 4);
  for (std::size_t e = 0; e < 4; ++e) CHECK(nets::bit_equal(back.snapshots[e], t.snapshots[e]));

  std::string bytes;
  {
    std::ifstream in(dir / "a.edft", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream out(dir / name, std::ios::binary);
    out << content;
    return dir / name;
  };
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_WITH(experts::load_trajectory(write("m.edft", bad_magic)), doctest::Contains("not a trajectory file"));
  std::string bad_version = bytes;
  bad_version[4] = static_cast<char>(experts::kTrajectoryVersion + 1);
  CHECK_THROWS_WITH(experts::load_trajectory(write("v.edft", bad_version)),
                    doctest::Contains("unsupported trajectory version 2"));
  CHECK_THROWS_WITH(experts::load_trajectory(write("t.edft", bytes.substr(0, bytes.size() - 3))),
                    doctest::Contains("truncated"));
}

TEST_CASE("loss_array and total_loss hand cases") {
  PrecisionScope f64(Precision::F64);
  const auto start = constant_params({0, 0});
  const auto target = constant_params({2, 2});
  const auto mid = constant_params({1, 1});
  const auto arr = matcher::loss_array(mid, start, target);
  REQUIRE(arr.size() == 2);
  CHECK(arr[0].numerator.item() == 1.0);
  CHECK(arr[1].denominator.item() == 4.0);
  CHECK(arr[1].layer == 2);
  CHECK(matcher::total_loss(arr).item() == 0.25);

  CHECK(matcher::total_loss(matcher::loss_array(target, start, target)).item() == 0.0);
  const auto at_start = matcher::loss_array(start, start, target);
  for (const auto& e : at_start.entries) CHECK(e.numerator.item() == e.denominator.item());
  CHECK(matcher::total_loss(at_start).item() == 1.0);

  CHECK_THROWS_WITH(matcher::total_loss(matcher::loss_array(mid, start, start)), doctest::Contains("degenerate"));
  CHECK_THROWS_AS(matcher::loss_array(constant_params({1}), start, target), ShapeError);
}

TEST_CASE("total_loss equals the flattened-vector ratio") {
  PrecisionScope f64(Precision::F64);
  std::mt19937_64 rng(6);
  nets::ModelSpec spec;
  spec.height = spec.image_width = 8;
  spec.depth = 2;
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = nets::init_params(spec, rng());
    const auto b = nets::init_params(spec, rng());
    const auto c = nets::init_params(spec, rng());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      for (std::size_t k = 0; k < a[i].value.numel(); ++k) {
        num += std::pow(a[i].value[k] - c[i].value[k], 2);
        den += std::pow(c[i].value[k] - b[i].value[k], 2);
      }
    }
    const double got = matcher::total_loss(matcher::loss_array(a, b, c)).item();
    CHECK(std::abs(got - num / den) <= 1e-12 * std::max(1.0, num / den));

    // ratio form is invariant to a common rescaling
    auto scaled = [](const nets::ParamSet& p) {
      std::vector<Tensor> v;
      for (const auto& q : p) v.push_back(scale(q.value, -3.0));
      return p.with_values(v);
    };
    const double s = matcher::total_loss(matcher::loss_array(scaled(a), scaled(b), scaled(c))).item();
    CHECK(s == doctest::Approx(got).epsilon(1e-12));
  }
}

TEST_CASE("student_unroll") {
  nets::ModelSpec spec;
  spec.height = spec.image_width = 8;
  spec.depth = 1;
  std::mt19937_64 rng(7);
  matcher::SyntheticDataset syn;
  syn.images = testing::random_tensor({8, 3, 8, 8}, rng, 0.0, 1.0);
  syn.labels = {0, 1, 2, 3, 0, 1, 2, 3};
  syn.classes = 4;
  syn.inner_lr = Tensor::scalar(0.0);
  const data::ChannelStats stats{{0.5, 0.5, 0.5}, {0.25, 0.25, 0.25}};
  const auto start = nets::init_params(spec, 1);

  Tape tape;
  TapeScope scope(tape);
  std::mt19937_64 r0(1);
  const auto same = matcher::student_unroll(spec, start, syn, stats, 3, 4, r0);
  for (std::size_t i = 0; i < start.size(); ++i) CHECK(bit_equal(same[i].value.detach(), start[i].value));

  syn.inner_lr = Tensor::scalar(0.1);
  std::mt19937_64 r1(2), r2(2);
  const auto a = matcher::student_unroll(spec, start, syn, stats, 3, 4, r1).detached();
  const auto b = matcher::student_unroll(spec, start, syn, stats, 3, 4, r2).detached();
  CHECK(nets::bit_equal(a, b));

  // one full-batch step is the plain SGD update
  std::mt19937_64 r3(3);
  const auto one = matcher::student_unroll(spec, start, syn, stats, 1, 0, r3).detached();
  const auto direct =
      nets::sgd_step_on_tape(spec, start, data::normalize(syn.images, stats), syn.targets(), syn.inner_lr).detached();
  CHECK(nets::bit_equal(one, direct));

  std::mt19937_64 r4(4);
  CHECK_THROWS_AS(matcher::student_unroll(spec, start, syn, stats, 0, 4, r4), ConfigError);
  CHECK_THROWS_AS(matcher::student_unroll(spec, start, syn, stats, 1, 9, r4), ConfigError);
}

TEST_CASE("batch sampler visits every index once per pass") {
  std::mt19937_64 rng(8);
  matcher::BatchSampler s(10, 3, rng);
  std::multiset<std::size_t> seen;
  for (int k = 0; k < 3; ++k) {
    for (auto i : s.next()) seen.insert(i);
  }
  CHECK(seen.size() == 9);
  CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 9);
}

TEST_CASE("meta-gradient of the matching loss w.r.t. pixels matches finite differences") {
  PrecisionScope f64(Precision::F64);
  nets::ModelSpec spec;
  spec.height = spec.image_width = 4;
  spec.depth = 1;
  spec.width = 2;
  spec.channels = 1;
  spec.classes = 2;
  std::mt19937_64 rng(9);
  const Tensor pixels = testing::random_tensor({2, 1, 4, 4}, rng, 0.0, 1.0);
  const auto start = nets::init_params(spec, 1);
  const auto target = nets::init_params(spec, 2);
  const data::ChannelStats stats{{0.5}, {0.3}};

  auto body = [&](const std::vector<Tensor>& in) {
    matcher::SyntheticDataset syn;
    syn.images = in[0];
    syn.labels = {0, 1};
    syn.classes = 2;
    syn.inner_lr = Tensor::scalar(0.5);
    std::mt19937_64 r(1);
    const auto student = matcher::student_unroll(spec, start, syn, stats, 2, 0, r);
    return matcher::total_loss(matcher::loss_array(student, start, target));
  };
  auto standalone = [&](const std::vector<Tensor>& in) {
    Tape tape;
    TapeScope scope(tape);
    std::vector<Tensor> w{tape.watch(in[0])};
    return body(w).detach();
  };
  const auto analytic = testing::tape_gradient(body, {pixels});
  const auto numeric = testing::finite_difference(standalone, {pixels});
  CHECK(testing::max_rel_error(analytic[0], numeric[0], 1e-6) < 1e-4);
}
