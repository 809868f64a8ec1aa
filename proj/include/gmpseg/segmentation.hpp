#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "gmpseg/error.hpp"
#include "gmpseg/image.hpp"

namespace gmpseg {

struct SegParams {
  float threshold = 0.35f;
  int k = 3;
  int retain = 1;
};

struct KmeansResult {
  std::vector<int> labels;
  std::vector<double> means;
  int iterations = 0;
};

inline Mask2D threshold_map(const Image2D& prob, float t) {
  Mask2D m(prob.rows, prob.cols);
  for (size_t i = 0; i < prob.data.size(); ++i) m.data[i] = prob.data[i] >= t ? 1 : 0;
  return m;
}

// Nearest-neighbor 2x upsampling back to ROI resolution.
inline Mask2D upsample_mask(const Mask2D& m) {
  Mask2D out(m.rows * 2, m.cols * 2);
  for (int r = 0; r < out.rows; ++r)
    for (int c = 0; c < out.cols; ++c) out.at(r, c) = m.at(r / 2, c / 2);
  return out;
}

namespace detail {

inline int count_distinct(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return static_cast<int>(std::unique(v.begin(), v.end()) - v.begin());
}

// Lloyd iterations from given centers. Assignment ties go to the lower index;
// a cluster that loses all members keeps its previous center.
inline KmeansResult lloyd(const std::vector<double>& values, std::vector<double> centers,
                          int max_iters) {
  const int k = static_cast<int>(centers.size());
  KmeansResult res;
  res.labels.assign(values.size(), -1);
  for (int it = 0; it < max_iters; ++it) {
    bool changed = false;
    for (size_t i = 0; i < values.size(); ++i) {
      int best = 0;
      double bd = std::abs(values[i] - centers[0]);
      for (int j = 1; j < k; ++j) {
        double d = std::abs(values[i] - centers[j]);
        if (d < bd) {
          bd = d;
          best = j;
        }
      }
      if (res.labels[i] != best) {
        res.labels[i] = best;
        changed = true;
      }
    }
    res.iterations = it + 1;
    if (!changed && it > 0) break;

    std::vector<double> sum(k, 0.0);
    std::vector<long long> cnt(k, 0);
    for (size_t i = 0; i < values.size(); ++i) {
      sum[res.labels[i]] += values[i];
      ++cnt[res.labels[i]];
    }
    for (int j = 0; j < k; ++j)
      if (cnt[j] > 0) centers[j] = sum[j] / cnt[j];
    if (!changed) break;
  }
  res.means = std::move(centers);
  return res;
}

inline double kmeans_sse(const std::vector<double>& values, const KmeansResult& r) {
  double sse = 0.0;
  for (size_t i = 0; i < values.size(); ++i) {
    double d = values[i] - r.means[r.labels[i]];
    sse += d * d;
  }
  return sse;
}

}  // namespace detail

// Deterministic 1D k-means: centers start at the (2i+1)/(2k) quantiles and
// Lloyd runs until assignments are stable (at most 100 iterations).
inline KmeansResult kmeans(const std::vector<double>& values, int k) {
  require(k >= 2, errc::value_out_of_range, "k must be at least 2");
  require(detail::count_distinct(values) >= k, errc::too_few_distinct_values,
          "need at least k distinct values");

  std::vector<double> sorted(values);
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> centers(k);
  for (int i = 0; i < k; ++i) {
    double q = (2.0 * i + 1.0) / (2.0 * k);
    double pos = q * (sorted.size() - 1);
    size_t lo = static_cast<size_t>(pos);
    size_t hi = std::min(lo + 1, sorted.size() - 1);
    double f = pos - lo;
    centers[i] = (1.0 - f) * sorted[lo] + f * sorted[hi];
  }
  return detail::lloyd(values, std::move(centers), 100);
}

// Seeded random-restart variant; used as an SSE oracle for the deterministic
// initialization.
inline KmeansResult kmeans_restart(const std::vector<double>& values, int k, int restarts,
                                   std::uint32_t seed) {
  require(k >= 2, errc::value_out_of_range, "k must be at least 2");
  require(detail::count_distinct(values) >= k, errc::too_few_distinct_values,
          "need at least k distinct values");
  std::mt19937 rng(seed);
  std::uniform_int_distribution<size_t> pick(0, values.size() - 1);
  KmeansResult best;
  double best_sse = std::numeric_limits<double>::infinity();
  for (int t = 0; t < restarts; ++t) {
    std::vector<double> centers;
    while (static_cast<int>(centers.size()) < k) {
      double v = values[pick(rng)];
      if (std::find(centers.begin(), centers.end(), v) == centers.end()) centers.push_back(v);
    }
    KmeansResult r = detail::lloyd(values, std::move(centers), 100);
    double sse = detail::kmeans_sse(values, r);
    if (sse < best_sse) {
      best_sse = sse;
      best = std::move(r);
    }
  }
  return best;
}

// Threshold, return to ROI resolution, then cluster the ROI intensities inside
// the detection and keep the `retain` lowest-mean clusters. Degenerate inputs
// (no detections, too few distinct intensities) give an empty mask.
inline Mask2D segment_slice(const Image2D& prob, const Image2D& roi, const SegParams& p) {
  require(roi.rows == prob.rows * 2 && roi.cols == prob.cols * 2, errc::dim_mismatch,
          "roi must be 2x the probability map");
  require(p.threshold > 0.0f && p.threshold < 1.0f, errc::value_out_of_range, "threshold");
  require(p.k >= 2 && p.retain >= 1 && p.retain < p.k, errc::value_out_of_range, "k/retain");

  Mask2D detection = upsample_mask(threshold_map(prob, p.threshold));
  Mask2D out(roi.rows, roi.cols);

  std::vector<double> values;
  std::vector<size_t> where;
  for (size_t i = 0; i < detection.data.size(); ++i)
    if (detection.data[i]) {
      values.push_back(roi.data[i]);
      where.push_back(i);
    }
  if (values.empty() || detail::count_distinct(values) < p.k) return out;

  KmeansResult km = kmeans(values, p.k);
  std::vector<int> order(p.k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return km.means[a] < km.means[b]; });
  std::vector<char> keep(p.k, 0);
  for (int i = 0; i < p.retain; ++i) keep[order[i]] = 1;

  for (size_t i = 0; i < values.size(); ++i)
    if (keep[km.labels[i]]) out.data[where[i]] = 1;
  return out;
}

}  // namespace gmpseg
