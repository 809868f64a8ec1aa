#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "gmpseg/gmp.hpp"

using namespace gmpseg;

namespace {

Image2D random_image(int rows, int cols, std::mt19937& rng) {
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  Image2D img(rows, cols);
  for (auto& x : img.data) x = dist(rng);
  return img;
}

void add_disk(Image2D& img, int cr, int cc, int radius, float value) {
  for (int r = 0; r < img.rows; ++r)
    for (int c = 0; c < img.cols; ++c)
      if ((r - cr) * (r - cr) + (c - cc) * (c - cc) <= radius * radius) img.at(r, c) = value;
}

}  // namespace

TEST_CASE("translate by zero is the identity") {
  std::mt19937 rng(1);
  Image2D img = random_image(13, 17, rng);
  Image2D out = translate(img, 0, 0);
  REQUIRE(out.data == img.data);
}

TEST_CASE("translate leaves constants unchanged") {
  Image2D img(9, 9, 0.3f);
  for (auto [dr, dc] : {std::pair{3, -2}, {-8, 8}, {20, 0}}) {
    Image2D out = translate(img, dr, dc);
    REQUIRE(out.data == img.data);
  }
}

TEST_CASE("translate moves a marked pixel and replicates edges") {
  Image2D img(11, 11, 1.0f);
  img.at(5, 5) = 0.0f;
  Image2D out = translate(img, 0, 2);
  REQUIRE(out.at(5, 7) == 0.0f);
  REQUIRE(out.at(5, 5) == 1.0f);

  Image2D ramp(4, 4);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) ramp.at(r, c) = static_cast<float>(r);
  Image2D shifted = translate(ramp, 1, 0);
  for (int c = 0; c < 4; ++c) {
    REQUIRE(shifted.at(0, c) == 0.0f);  // replicated top row
    REQUIRE(shifted.at(1, c) == 0.0f);
    REQUIRE(shifted.at(3, c) == 2.0f);
  }
}

TEST_CASE("gmp with N=0 returns the input") {
  std::mt19937 rng(2);
  Image2D img = random_image(20, 20, rng);
  GmpParams p;
  p.N = 0;
  REQUIRE(gmp(img, 67.0, p).data == img.data);
  p.coalesce = Coalesce::max;
  REQUIRE(gmp(img, 67.0, p).data == img.data);
}

TEST_CASE("gmp smears a dark pixel into a horizontal run at theta 0") {
  Image2D img(11, 11, 1.0f);
  img.at(5, 5) = 0.0f;
  GmpParams p;
  p.N = 2;
  p.delta = 1;
  Image2D out = gmp(img, 0.0, p);
  for (int r = 0; r < 11; ++r)
    for (int c = 0; c < 11; ++c) {
      float expect = (r == 5 && c >= 3 && c <= 7) ? 0.0f : 1.0f;
      REQUIRE(out.at(r, c) == expect);
    }
}

TEST_CASE("gmp is monotone in N under min") {
  std::mt19937 rng(3);
  for (double theta : {0.0, 22.5, 90.0, 135.0}) {
    Image2D img = random_image(32, 32, rng);
    GmpParams small, big;
    small.N = 2;
    big.N = 5;
    Image2D a = gmp(img, theta, small);
    Image2D b = gmp(img, theta, big);
    for (size_t i = 0; i < a.data.size(); ++i) REQUIRE(b.data[i] <= a.data[i]);
    for (size_t i = 0; i < a.data.size(); ++i) REQUIRE(a.data[i] <= img.data[i]);
  }
}

TEST_CASE("max gmp is dual to min gmp under negation") {
  std::mt19937 rng(4);
  Image2D img = random_image(24, 31, rng);
  Image2D neg(img.rows, img.cols);
  for (size_t i = 0; i < img.data.size(); ++i) neg.data[i] = -img.data[i];

  GmpParams pmin, pmax;
  pmin.coalesce = Coalesce::min;
  pmax.coalesce = Coalesce::max;
  for (double theta : {10.0, 45.0, 112.5}) {
    Image2D hi = gmp(img, theta, pmax);
    Image2D lo = gmp(neg, theta, pmin);
    for (size_t i = 0; i < hi.data.size(); ++i) REQUIRE(hi.data[i] == -lo.data[i]);
  }
}

TEST_CASE("gmp is periodic in 180 degrees") {
  std::mt19937 rng(5);
  Image2D img = random_image(30, 30, rng);
  GmpParams p;
  for (double theta : {0.0, 22.5, 45.0, 67.5, 90.0, 112.5, 135.0, 157.5, 13.7}) {
    Image2D a = gmp(img, theta, p);
    Image2D b = gmp(img, theta + 180.0, p);
    REQUIRE(a.data == b.data);
  }
}

TEST_CASE("min cake planes never exceed the input") {
  std::mt19937 rng(6);
  Image2D img = random_image(40, 40, rng);
  Mask2D prior(40, 40, 1);
  GmpParams p;
  GmpCake c = cake(img, prior, p);
  REQUIRE(c.planes.size() == 8);
  for (const auto& plane : c.planes)
    for (size_t i = 0; i < plane.data.size(); ++i) REQUIRE(plane.data[i] <= img.data[i]);
}

TEST_CASE("trivial cake reproduces the input and carries the prior") {
  std::mt19937 rng(7);
  Image2D img = random_image(12, 12, rng);
  Mask2D prior(12, 12);
  prior.at(3, 4) = 1;
  GmpParams p;
  p.K = 1;
  p.N = 0;
  GmpCake c = cake(img, prior, p);
  REQUIRE(c.K == 1);
  REQUIRE(c.planes[0].data == img.data);
  REQUIRE(c.prior.data == prior.data);
}

TEST_CASE("cake with defaults produces eight 250x256 planes") {
  std::mt19937 rng(8);
  Image2D img = random_image(250, 256, rng);
  Mask2D prior(250, 256, 1);
  GmpCake c = cake(img, prior, GmpParams{});
  REQUIRE(c.rows == 250);
  REQUIRE(c.cols == 256);
  REQUIRE(c.K == 8);
  REQUIRE(c.planes.size() == 8);
  for (const auto& plane : c.planes) {
    REQUIRE(plane.rows == 250);
    REQUIRE(plane.cols == 256);
  }
}

TEST_CASE("cake rejects a mismatched prior") {
  Image2D img(10, 10, 0.0f);
  Mask2D prior(9, 10);
  try {
    cake(img, prior, GmpParams{});
    FAIL("expected DimMismatch");
  } catch (const error& e) {
    REQUIRE(e.code() == errc::dim_mismatch);
  }
}

TEST_CASE("sum_combine equals plane-by-plane accumulation") {
  std::mt19937 rng(9);
  Image2D img = random_image(26, 22, rng);
  Mask2D prior(26, 22, 1);
  GmpCake c = cake(img, prior, GmpParams{});
  Image2D got = sum_combine(c);

  std::vector<float> want(img.data.size(), 0.0f);
  for (const auto& plane : c.planes)
    for (size_t i = 0; i < want.size(); ++i) want[i] += plane.data[i];
  for (size_t i = 0; i < want.size(); ++i) REQUIRE(got.data[i] == Catch::Approx(want[i]));

  GmpCake same = c;
  for (auto& plane : same.planes) plane = c.planes[0];
  Image2D scaled = sum_combine(same);
  for (size_t i = 0; i < scaled.data.size(); ++i)
    REQUIRE(scaled.data[i] == Catch::Approx(8.0f * c.planes[0].data[i]));
}

TEST_CASE("min gmp stretches dark blobs and erases bright ones") {
  Image2D img(64, 64, 0.5f);
  add_disk(img, 20, 20, 3, 0.1f);
  add_disk(img, 40, 40, 3, 0.9f);
  GmpParams p;
  Image2D out = gmp(img, 0.0, p);

  int dark_in = 0, dark_out = 0;
  for (int c = 0; c < 64; ++c) {
    dark_in += img.at(20, c) == 0.1f;
    dark_out += out.at(20, c) == 0.1f;
  }
  REQUIRE(dark_out >= dark_in + 2 * p.N);

  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c) REQUIRE(out.at(r, c) <= 0.5f);
}
