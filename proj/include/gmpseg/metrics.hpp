#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gmpseg/error.hpp"
#include "gmpseg/image.hpp"

namespace gmpseg {

struct Scores {
  double dice = 0.0;
  double jaccard = 0.0;
  double ppv = 0.0;
  double sensitivity = 0.0;
};

struct EvalReport {
  std::vector<std::string> ids;
  std::vector<Scores> per_volume;
  Scores mean;
  Scores stddev;
  std::string mode = "unmasked";
  std::string combiner = "intersection";
};

enum class GraderCombine { grader1, grader2, intersection, set_union };

namespace detail {

struct Tally {
  long long tp = 0, fp = 0, fn = 0;
};

inline Scores scores_from(const Tally& t) {
  Scores s;
  s.dice = (t.tp + t.fp + t.fn) == 0 ? 1.0 : 2.0 * t.tp / (2.0 * t.tp + t.fp + t.fn);
  s.jaccard = (t.tp + t.fp + t.fn) == 0 ? 1.0 : static_cast<double>(t.tp) / (t.tp + t.fp + t.fn);
  s.ppv = (t.tp + t.fp) == 0 ? 1.0 : static_cast<double>(t.tp) / (t.tp + t.fp);
  s.sensitivity = (t.tp + t.fn) == 0 ? 1.0 : static_cast<double>(t.tp) / (t.tp + t.fn);
  return s;
}

}  // namespace detail

inline double dice(const Mask2D& a, const Mask2D& b) {
  require(a.rows == b.rows && a.cols == b.cols, errc::dim_mismatch, "mask dims differ");
  long long inter = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    bool x = a.data[i] != 0, y = b.data[i] != 0;
    inter += x && y;
    na += x;
    nb += y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * inter / static_cast<double>(na + nb);
}

inline double jaccard(const Mask2D& a, const Mask2D& b) {
  require(a.rows == b.rows && a.cols == b.cols, errc::dim_mismatch, "mask dims differ");
  long long inter = 0, uni = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    bool x = a.data[i] != 0, y = b.data[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / uni;
}

inline std::pair<double, double> ppv_sensitivity(const Mask2D& pred, const Mask2D& gt) {
  require(pred.rows == gt.rows && pred.cols == gt.cols, errc::dim_mismatch, "mask dims differ");
  detail::Tally t;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    bool p = pred.data[i] != 0, g = gt.data[i] != 0;
    t.tp += p && g;
    t.fp += p && !g;
    t.fn += !p && g;
  }
  Scores s = detail::scores_from(t);
  return {s.ppv, s.sensitivity};
}

inline Mask2D combine_graders(const Mask2D& g1, const Mask2D& g2, GraderCombine mode) {
  require(g1.rows == g2.rows && g1.cols == g2.cols, errc::dim_mismatch, "grader dims differ");
  if (mode == GraderCombine::grader1) return g1;
  if (mode == GraderCombine::grader2) return g2;
  Mask2D out(g1.rows, g1.cols);
  for (size_t i = 0; i < out.data.size(); ++i) {
    bool a = g1.data[i] != 0, b = g2.data[i] != 0;
    out.data[i] = (mode == GraderCombine::intersection ? (a && b) : (a || b)) ? 1 : 0;
  }
  return out;
}

// En-face exclusion disk for the masked evaluation mode. The returned mask is
// indexed at(col, slice); a 1 means the whole A-scan is dropped from tallies.
// The disk center sits at the volume's (col, slice) center.
inline Mask2D central_mask(int cols, int slices, float spacing_col_mm, float spacing_slice_mm,
                           double radius_mm = 3.0) {
  require(spacing_col_mm > 0.0f && spacing_slice_mm > 0.0f, errc::non_positive_spacing,
          "spacing must be positive");
  Mask2D m(cols, slices);
  double cy = (cols - 1) / 2.0, cz = (slices - 1) / 2.0;
  for (int c = 0; c < cols; ++c)
    for (int z = 0; z < slices; ++z) {
      double dy = (c - cy) * spacing_col_mm;
      double dz = (z - cz) * spacing_slice_mm;
      if (dy * dy + dz * dz < radius_mm * radius_mm) m.at(c, z) = 1;
    }
  return m;
}

namespace detail {

// Pooled pixel tallies over the annotated slices; exclude is the en-face
// central mask or null for unmasked mode.
inline Tally tally_volume(const Volume& pred, const Volume& gt,
                          const std::vector<int>& annotated, const Mask2D* exclude) {
  require(pred.rows == gt.rows && pred.cols == gt.cols && pred.slices == gt.slices,
          errc::dim_mismatch, "volume dims differ");
  require(!annotated.empty(), errc::no_annotated_slices, "need at least one annotated slice");
  Tally t;
  for (int z : annotated) {
    require(z >= 0 && z < pred.slices, errc::value_out_of_range, "annotated slice index");
    for (int r = 0; r < pred.rows; ++r)
      for (int c = 0; c < pred.cols; ++c) {
        if (exclude && exclude->at(c, z) != 0) continue;
        bool p = pred.at(r, c, z) != 0.0f, g = gt.at(r, c, z) != 0.0f;
        t.tp += p && g;
        t.fp += p && !g;
        t.fn += !p && g;
      }
  }
  return t;
}

}  // namespace detail

inline Scores evaluate_volume(const Volume& pred, const Volume& gt,
                              const std::vector<int>& annotated,
                              const Mask2D* exclude = nullptr) {
  return detail::scores_from(detail::tally_volume(pred, gt, annotated, exclude));
}

// Mean and sample-like std (population form) across per-volume rows.
inline void summarize(EvalReport& report) {
  const size_t n = report.per_volume.size();
  if (n == 0) return;
  auto acc = [&](auto field) {
    double m = 0.0;
    for (const auto& s : report.per_volume) m += s.*field;
    m /= static_cast<double>(n);
    double v = 0.0;
    for (const auto& s : report.per_volume) v += (s.*field - m) * (s.*field - m);
    return std::pair<double, double>{m, std::sqrt(v / static_cast<double>(n))};
  };
  std::tie(report.mean.dice, report.stddev.dice) = acc(&Scores::dice);
  std::tie(report.mean.jaccard, report.stddev.jaccard) = acc(&Scores::jaccard);
  std::tie(report.mean.ppv, report.stddev.ppv) = acc(&Scores::ppv);
  std::tie(report.mean.sensitivity, report.stddev.sensitivity) = acc(&Scores::sensitivity);
}

}  // namespace gmpseg
