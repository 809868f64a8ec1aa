#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "gmpseg/segmentation.hpp"

using namespace gmpseg;

namespace {

// 2x2 max downsample, the inverse direction of upsample_mask.
Mask2D downsample_oracle(const Mask2D& m) {
  Mask2D out(m.rows / 2, m.cols / 2);
  for (int r = 0; r < out.rows; ++r)
    for (int c = 0; c < out.cols; ++c) {
      int v = m.at(2 * r, 2 * c) | m.at(2 * r + 1, 2 * c) | m.at(2 * r, 2 * c + 1) |
              m.at(2 * r + 1, 2 * c + 1);
      out.at(r, c) = static_cast<std::uint8_t>(v);
    }
  return out;
}

}  // namespace

TEST_CASE("threshold uses the at-least convention") {
  Image2D prob(125, 128, 0.5f);
  Mask2D m = threshold_map(prob, 0.5f);
  REQUIRE(m.count() == m.data.size());
  m = threshold_map(prob, 0.5001f);
  REQUIRE(m.count() == 0);
}

TEST_CASE("threshold masks are nested") {
  std::mt19937 rng(1);
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  Image2D prob(60, 60);
  for (auto& x : prob.data) x = dist(rng);
  Mask2D loose = threshold_map(prob, 0.3f);
  Mask2D tight = threshold_map(prob, 0.7f);
  for (size_t i = 0; i < loose.data.size(); ++i) REQUIRE(tight.data[i] <= loose.data[i]);
}

TEST_CASE("upsample doubles pixels into 2x2 blocks") {
  Mask2D m(125, 128);
  m.at(10, 20) = 1;
  Mask2D up = upsample_mask(m);
  REQUIRE(up.rows == 250);
  REQUIRE(up.cols == 256);
  REQUIRE(up.count() == 4);
  REQUIRE(up.at(20, 40) == 1);
  REQUIRE(up.at(21, 41) == 1);

  Mask2D empty(125, 128);
  REQUIRE(upsample_mask(empty).count() == 0);
}

TEST_CASE("downsample of an upsampled mask is the identity") {
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Mask2D m(125, 128);
  for (auto& v : m.data) v = dist(rng) < 0.2 ? 1 : 0;
  REQUIRE(downsample_oracle(upsample_mask(m)).data == m.data);
}

TEST_CASE("kmeans separates two trivial clusters") {
  KmeansResult r = kmeans({0.0, 0.0, 10.0, 10.0}, 2);
  REQUIRE(r.labels == std::vector<int>{0, 0, 1, 1});
  REQUIRE(r.means[0] == Catch::Approx(0.0));
  REQUIRE(r.means[1] == Catch::Approx(10.0));
}

TEST_CASE("kmeans stops immediately on a converged input") {
  KmeansResult r = kmeans({0.0, 0.1, 9.9, 10.0}, 2);
  REQUIRE(r.iterations <= 2);
  REQUIRE(r.means[0] == Catch::Approx(0.05));
  REQUIRE(r.means[1] == Catch::Approx(9.95));
}

TEST_CASE("kmeans rejects inputs with too few distinct values") {
  try {
    kmeans({1.0, 1.0, 1.0, 1.0}, 2);
    FAIL("expected TooFewDistinctValues");
  } catch (const error& e) {
    REQUIRE(e.code() == errc::too_few_distinct_values);
  }
}

TEST_CASE("quantile-initialized kmeans is close to a restart oracle") {
  std::mt19937 rng(3);
  std::normal_distribution<double> a(0.2, 0.05), b(0.5, 0.05), c(0.9, 0.03);
  std::vector<double> values;
  for (int i = 0; i < 70; ++i) values.push_back(a(rng));
  for (int i = 0; i < 70; ++i) values.push_back(b(rng));
  for (int i = 0; i < 60; ++i) values.push_back(c(rng));

  KmeansResult det = kmeans(values, 3);
  KmeansResult oracle = kmeans_restart(values, 3, 100, 12345);
  double sse_det = detail::kmeans_sse(values, det);
  double sse_best = detail::kmeans_sse(values, oracle);
  REQUIRE(sse_det <= 1.05 * sse_best);
}

TEST_CASE("kmeans SSE is monotone over iterations") {
  // rerun lloyd step by step and check every prefix
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<double> values(200);
  for (auto& v : values) v = dist(rng);

  std::vector<double> sorted(values);
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> centers = {sorted[33], sorted[100], sorted[166]};

  double prev = std::numeric_limits<double>::infinity();
  for (int iters = 1; iters <= 12; ++iters) {
    KmeansResult r = detail::lloyd(values, centers, iters);
    double sse = detail::kmeans_sse(values, r);
    REQUIRE(sse <= prev + 1e-12);
    prev = sse;
  }
}

TEST_CASE("segment_slice returns empty for a flat low probability map") {
  Image2D prob(125, 128, 0.05f);
  Image2D roi(250, 256, 0.5f);
  Mask2D out = segment_slice(prob, roi, SegParams{});
  REQUIRE(out.count() == 0);
}

TEST_CASE("segment_slice keeps the dark cluster and drops the bright one") {
  Image2D prob(125, 128, 0.01f);
  Image2D roi(250, 256, 0.5f);

  // detected area spans a dark cyst, a bright false positive, and background
  for (int r = 20; r < 30; ++r)
    for (int c = 20; c < 30; ++c) prob.at(r, c) = 0.9f;
  for (int r = 60; r < 70; ++r)
    for (int c = 60; c < 70; ++c) prob.at(r, c) = 0.9f;
  for (int r = 90; r < 95; ++r)
    for (int c = 90; c < 95; ++c) prob.at(r, c) = 0.9f;

  std::mt19937 rng(5);
  std::normal_distribution<float> jitter(0.0f, 0.01f);
  for (int r = 40; r < 60; ++r)
    for (int c = 40; c < 60; ++c) roi.at(r, c) = 0.1f + jitter(rng);  // cyst
  for (int r = 120; r < 140; ++r)
    for (int c = 120; c < 140; ++c) roi.at(r, c) = 0.9f + jitter(rng);  // bright FP

  Mask2D out = segment_slice(prob, roi, SegParams{});
  REQUIRE(out.count() > 0);
  for (int r = 40; r < 60; ++r)
    for (int c = 40; c < 60; ++c) REQUIRE(out.at(r, c) == 1);
  for (int r = 120; r < 140; ++r)
    for (int c = 120; c < 140; ++c) REQUIRE(out.at(r, c) == 0);
  for (int r = 180; r < 190; ++r)
    for (int c = 180; c < 190; ++c) REQUIRE(out.at(r, c) == 0);
}

TEST_CASE("segment_slice output stays inside the detection region") {
  std::mt19937 rng(6);
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  Image2D prob(125, 128);
  Image2D roi(250, 256);
  for (auto& x : prob.data) x = dist(rng);
  for (auto& x : roi.data) x = dist(rng);

  Mask2D detection = upsample_mask(threshold_map(prob, 0.35f));
  Mask2D out = segment_slice(prob, roi, SegParams{});
  for (size_t i = 0; i < out.data.size(); ++i) REQUIRE(out.data[i] <= detection.data[i]);
}
