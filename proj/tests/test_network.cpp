#include <cmath>
#include <cstdint>
#include <vector>

#include "cpn/network.hpp"
#include "cpn/patching.hpp"
#include "cpn/rng.hpp"
#include "cpn/tensor.hpp"
#include "doctest.h"

using cpn::Backbone;
using cpn::DatasetMean;
using cpn::Image;
using cpn::Rng;
using Tf = cpn::Tensor<float>;
using Td = cpn::Tensor<double>;

namespace {

Image random_image(Rng& rng, int h, int w) {
  Image im;
  im.height = h;
  im.width = w;
  im.values.resize(static_cast<size_t>(3) * h * w);
  for (auto& v : im.values) v = static_cast<float>(rng.uniform());
  return im;
}

}  // namespace

TEST_CASE("image tensors are mean-centred per channel") {
  Image im = Image::filled(2, 2, 0.8f, 0.5f, 0.2f);
  DatasetMean mean{{0.3f, 0.5f, 0.1f}};
  Tf t = cpn::image_to_tensor<float>(im, mean);
  REQUIRE(t.shape() == cpn::Shape{1, 3, 2, 2});
  CHECK(t.data()[0] == 0.8f - 0.3f);
  CHECK(t.data()[4] == 0.0f);  // green exactly cancels
  CHECK(t.data()[8] == doctest::Approx(0.1f));
  // Pixels equal to the mean become exact zeros.
  Image at_mean = Image::filled(2, 2, 0.3f, 0.5f, 0.1f);
  Tf z = cpn::image_to_tensor<float>(at_mean, mean);
  for (float v : z.data()) CHECK(v == 0.0f);
}

TEST_CASE("a zero input to a zero-bias backbone produces zero features") {
  Rng rng(1);
  Backbone net = Backbone::init(4, rng);
  Tf zero = Tf::zeros({1, 3, 32, 32});
  auto feats = net.forward_features(zero);
  for (float v : feats.stage3.data()) CHECK(v == 0.0f);
  for (float v : feats.stage4.data()) CHECK(v == 0.0f);
}

TEST_CASE("feature geometry follows the published stride") {
  Rng rng(2);
  Backbone net = Backbone::init(4, rng);
  Tf x = Tf::zeros({1, 3, 64, 64});
  auto feats = net.forward_features(x);
  CHECK(feats.stage4.shape() == cpn::Shape{1, 64, 16, 16});
  CHECK(feats.stage3.shape() == cpn::Shape{1, 64, 16, 16});
  CHECK(Backbone::kStride == 4);
  // Stride-indivisible extents are rejected rather than silently cropped.
  Tf bad = Tf::zeros({1, 3, 30, 32});
  CHECK_THROWS_AS(net.forward_features(bad), std::invalid_argument);
}

TEST_CASE("initialisation and the forward pass are bitwise deterministic") {
  Rng rng_a(7), rng_b(7);
  Backbone a = Backbone::init(4, rng_a);
  Backbone b = Backbone::init(4, rng_b);
  auto pa = a.named_parameters();
  auto pb = b.named_parameters();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(pa[i].second->data() == pb[i].second->data());
  }
  CHECK(a.parameter_count() > 0);

  Rng rng_img(8);
  Image im = random_image(rng_img, 32, 32);
  Tf x = cpn::image_to_tensor<float>(im);
  auto f1 = a.forward_features(x);
  auto f2 = a.forward_features(x);
  CHECK(f1.stage4.data() == f2.stage4.data());
}

TEST_CASE("class maps are linear contractions of the feature stack") {
  Rng rng(3);
  std::vector<double> fv(5 * 3 * 4);
  for (auto& v : fv) v = rng.uniform(-2.0, 2.0);
  Td feats = Td::from_data({5, 3, 4}, fv);

  // One-hot classifier row picks out its feature channel.
  std::vector<double> one_hot(2 * 5, 0.0);
  one_hot[0 * 5 + 3] = 1.0;  // class 0 reads feature 3
  Td theta = Td::from_data({2, 5}, one_hot);
  Td cam = cpn::cam_from_features(feats, theta);
  REQUIRE(cam.shape() == cpn::Shape{2, 3, 4});
  for (int i = 0; i < 12; ++i) {
    CHECK(cam.data()[static_cast<size_t>(i)] == doctest::Approx(fv[static_cast<size_t>(3 * 12 + i)]));
    CHECK(cam.data()[static_cast<size_t>(12 + i)] == 0.0);  // zero row stays zero
  }

  // Loop oracle for a dense classifier.
  std::vector<double> tv(2 * 5);
  for (auto& v : tv) v = rng.uniform(-1.0, 1.0);
  Td dense = Td::from_data({2, 5}, tv);
  Td cam2 = cpn::cam_from_features(feats, dense);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 12; ++i) {
      double acc = 0;
      for (int k = 0; k < 5; ++k) acc += tv[static_cast<size_t>(c) * 5 + k] * fv[static_cast<size_t>(k) * 12 + i];
      CHECK(cam2.data()[static_cast<size_t>(c) * 12 + i] == doctest::Approx(acc).epsilon(1e-10));
    }

  // Linearity in the classifier within float-oracle tolerance.
  std::vector<double> tv2(2 * 5);
  for (auto& v : tv2) v = rng.uniform(-1.0, 1.0);
  Td theta_sum = Td::from_data({2, 5}, [&] {
    std::vector<double> s(tv.size());
    for (size_t i = 0; i < s.size(); ++i) s[i] = tv[i] + tv2[i];
    return s;
  }());
  Td lhs = cpn::cam_from_features(feats, theta_sum);
  Td rhs = cpn::add(cpn::cam_from_features(feats, dense),
                    cpn::cam_from_features(feats, Td::from_data({2, 5}, tv2)));
  for (size_t i = 0; i < lhs.data().size(); ++i)
    CHECK(std::abs(lhs.data()[i] - rhs.data()[i]) < 1e-6);
}

TEST_CASE("normalisation scales peaks to one and erases absent classes") {
  Td raw = Td::from_data({3, 2, 2},
                         {5, 1, 0, -2,      // present, peak 5
                          2, 2, 2, 2,       // present but masked off
                          -1, -3, -2, -5});  // present, all negative
  Td out = cpn::normalize_and_mask(raw, {1, 0, 1});
  CHECK(out.data()[0] == 1.0);
  CHECK(out.data()[1] == doctest::Approx(0.2));
  CHECK(out.data()[2] == 0.0);
  CHECK(out.data()[3] == 0.0);  // negative clamps to zero before scaling
  for (int i = 4; i < 8; ++i) CHECK(out.data()[static_cast<size_t>(i)] == 0.0);  // masked
  for (int i = 8; i < 12; ++i) CHECK(out.data()[static_cast<size_t>(i)] == 0.0);  // all-negative
  CHECK_THROWS_AS(cpn::normalize_and_mask(raw, std::vector<uint8_t>{1, 0}), std::invalid_argument);
}

TEST_CASE("background channel complements the foreground peak") {
  Td fg = Td::from_data({2, 1, 3}, {1.0, 0.0, 0.5, 0.25, 0.0, 0.25});
  Td stack = cpn::background_map(fg, 1.0);
  REQUIRE(stack.shape() == cpn::Shape{3, 1, 3});
  CHECK(stack.data()[0] == 0.0);   // fg peak 1 -> bg 0
  CHECK(stack.data()[1] == 1.0);   // fg peak 0 -> bg 1
  CHECK(stack.data()[2] == 0.5);
  // Foreground rows ride along unchanged.
  for (int i = 0; i < 6; ++i) CHECK(stack.data()[static_cast<size_t>(3 + i)] == fg.data()[static_cast<size_t>(i)]);

  // The exponent sharpens the background.
  Td stack2 = cpn::background_map(fg, 2.0);
  CHECK(stack2.data()[2] == doctest::Approx(0.25));
  for (double v : stack2.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("branch scores equal the pooled raw class maps") {
  Rng rng(9);
  Backbone net = Backbone::init(4, rng);
  Image im = random_image(rng, 32, 32);
  DatasetMean mean{{0.5f, 0.5f, 0.5f}};
  auto out = cpn::run_branch(net, nullptr, im, {1, 1, 1}, 1.0f, mean);
  REQUIRE(out.scores.shape() == cpn::Shape{3});

  // Recompute the pooled scores directly from the feature path.
  Tf x = cpn::image_to_tensor<float>(im, mean);
  auto feats = net.forward_features(x);
  Tf cam = cpn::cam_from_features(
      cpn::reshape(feats.stage4, {feats.stage4.dim(1), feats.stage4.dim(2), feats.stage4.dim(3)}),
      net.theta);
  Tf pooled = cpn::global_avg_pool(cpn::reshape(cam, {1, 3, cam.dim(1), cam.dim(2)}));
  for (int c = 0; c < 3; ++c)
    CHECK(out.scores.data()[static_cast<size_t>(c)] == pooled.data()[static_cast<size_t>(c)]);

  // Without a refiner the refined view aliases the stack.
  CHECK(out.refined.data() == out.stack.data());
  // The stack has a background channel on top of one row per class.
  CHECK(out.stack.shape() == cpn::Shape{4, cam.dim(1), cam.dim(2)});
}

TEST_CASE("an empty hidden set reproduces the original branch bit for bit") {
  Rng rng(10);
  Backbone net = Backbone::init(4, rng);
  Image im = random_image(rng, 32, 32);
  cpn::PatchPartition part = cpn::grid_partition(im, {8}, rng);
  DatasetMean mean{{0.4f, 0.4f, 0.4f}};
  std::vector<uint8_t> hidden(static_cast<size_t>(part.num_patches), 0);
  cpn::CpPair pair = cpn::make_cp_pair_from_mask(im, part, hidden, mean);

  auto trip = cpn::triplet_forward(net, nullptr, im, pair, {1, 0, 1}, 1.0f, mean);
  CHECK(trip.hidden.stack.data() == trip.original.stack.data());
  CHECK(trip.hidden.scores.data() == trip.original.scores.data());
}

TEST_CASE("branch evaluation order cannot change the outputs") {
  Rng rng(11);
  Backbone net = Backbone::init(3, rng);
  Image im = random_image(rng, 32, 32);
  cpn::PatchPartition part = cpn::grid_partition(im, {8}, rng);
  DatasetMean mean{{0.5f, 0.45f, 0.55f}};
  cpn::CpPair pair = cpn::make_cp_pair(im, part, 0.5, mean, rng);
  std::vector<uint8_t> labels{1, 1};

  auto trip = cpn::triplet_forward(net, nullptr, im, pair, labels, 1.0f, mean);
  // Standalone single-branch runs, issued in reverse order, match bitwise.
  auto comp = cpn::run_branch(net, nullptr, pair.image_hbar, labels, 1.0f, mean);
  auto hid = cpn::run_branch(net, nullptr, pair.image_h, labels, 1.0f, mean);
  auto orig = cpn::run_branch(net, nullptr, im, labels, 1.0f, mean);
  CHECK(trip.original.stack.data() == orig.stack.data());
  CHECK(trip.hidden.stack.data() == hid.stack.data());
  CHECK(trip.complement.stack.data() == comp.stack.data());
  CHECK(trip.original.scores.data() == orig.scores.data());
  CHECK(trip.hidden.scores.data() == hid.scores.data());
  CHECK(trip.complement.scores.data() == comp.scores.data());
}
