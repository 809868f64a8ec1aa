#pragma once

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "gmpseg/error.hpp"
#include "gmpseg/gmp.hpp"
#include "gmpseg/image.hpp"
#include "gmpseg/metrics.hpp"
#include "gmpseg/model.hpp"
#include "gmpseg/preprocess.hpp"
#include "gmpseg/segmentation.hpp"
#include "gmpseg/volume_io.hpp"

namespace gmpseg {

struct PipelineConfig {
  GmpParams gmp;
  SegParams seg;
  Hyperparams hp;
  float tv_lambda = 0.1f;
  int tv_iters = 50;
  int jobs = 1;
};

inline ModelConfig model_config(const PipelineConfig& cfg) {
  ModelConfig m;
  m.channels = cfg.gmp.K + 1;
  return m;
}

inline std::string config_echo(const PipelineConfig& c) {
  std::ostringstream os;
  os << "coalesce=" << (c.gmp.coalesce == Coalesce::min ? "min" : "max") << "\n"
     << "K=" << c.gmp.K << "\n"
     << "N=" << c.gmp.N << "\n"
     << "delta=" << c.gmp.delta << "\n"
     << "threshold=" << c.seg.threshold << "\n"
     << "kmeans_k=" << c.seg.k << "\n"
     << "retain=" << c.seg.retain << "\n"
     << "lr=" << c.hp.lr << "\n"
     << "momentum=" << c.hp.momentum << "\n"
     << "batch=" << c.hp.batch_size << "\n"
     << "epochs=" << c.hp.epochs << "\n"
     << "checkpoint_every=" << c.hp.checkpoint_every << "\n"
     << "seed=" << c.hp.seed << "\n"
     << "tv_lambda=" << c.tv_lambda << "\n"
     << "tv_iters=" << c.tv_iters << "\n"
     << "jobs=" << c.jobs << "\n";
  return os.str();
}

inline void apply_config_line(PipelineConfig& c, const std::string& key, const std::string& val) {
  try {
    if (key == "coalesce") {
      require(val == "min" || val == "max", errc::value_out_of_range, "coalesce");
      c.gmp.coalesce = val == "min" ? Coalesce::min : Coalesce::max;
    } else if (key == "K")
      c.gmp.K = std::stoi(val);
    else if (key == "N")
      c.gmp.N = std::stoi(val);
    else if (key == "delta")
      c.gmp.delta = std::stoi(val);
    else if (key == "threshold")
      c.seg.threshold = std::stof(val);
    else if (key == "kmeans_k")
      c.seg.k = std::stoi(val);
    else if (key == "retain")
      c.seg.retain = std::stoi(val);
    else if (key == "lr")
      c.hp.lr = std::stof(val);
    else if (key == "momentum")
      c.hp.momentum = std::stof(val);
    else if (key == "batch")
      c.hp.batch_size = std::stoi(val);
    else if (key == "epochs")
      c.hp.epochs = std::stoi(val);
    else if (key == "checkpoint_every")
      c.hp.checkpoint_every = std::stoi(val);
    else if (key == "seed")
      c.hp.seed = std::stoull(val);
    else if (key == "tv_lambda")
      c.tv_lambda = std::stof(val);
    else if (key == "tv_iters")
      c.tv_iters = std::stoi(val);
    else if (key == "jobs")
      c.jobs = std::stoi(val);
    else
      require(false, errc::value_out_of_range, "unknown config key: " + key);
  } catch (const std::invalid_argument&) {
    require(false, errc::value_out_of_range, "bad config value for " + key);
  } catch (const std::out_of_range&) {
    require(false, errc::value_out_of_range, "bad config value for " + key);
  }
}

// UTF-8 key=value lines; '#' starts a comment, blank lines are skipped.
inline PipelineConfig parse_config(const std::string& text, PipelineConfig base = {}) {
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos || line[start] == '#') continue;
    size_t eq = line.find('=', start);
    require(eq != std::string::npos && eq > start, errc::value_out_of_range,
            "config line needs key=value: " + line);
    std::string key = line.substr(start, eq - start);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    apply_config_line(base, key, line.substr(eq + 1));
  }
  return base;
}

inline std::uint64_t fnv1a64(const void* data, size_t n) {
  const auto* b = static_cast<const unsigned char*>(data);
  std::uint64_t h = 14695981039346656037ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t hash_file(const std::string& path) {
  Bytes b = read_bytes(path);
  return fnv1a64(b.data(), b.size());
}

inline std::string format_manifest(const std::string& command, const PipelineConfig& cfg,
                                   const std::vector<std::pair<std::string, std::uint64_t>>& inputs) {
  std::ostringstream os;
  os << "command=" << command << "\n" << config_echo(cfg);
  for (const auto& [name, hash] : inputs)
    os << "input." << name << "=" << std::hex << std::setw(16) << std::setfill('0') << hash
       << std::dec << "\n";
  return os.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  write_bytes(path, Bytes(text.begin(), text.end()));
}

inline std::string read_text(const std::string& path) {
  Bytes b = read_bytes(path);
  return std::string(b.begin(), b.end());
}

template <typename Fn>
inline void parallel_for(int n, int jobs, Fn&& fn) {
  if (jobs <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errs(jobs);
  int workers = std::min(jobs, n);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errs[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

// Slices resized to the standard frame, then standardized/denoised ROI + prior.
inline std::vector<RoiSlice> preprocess_volume(const Volume& v, const PipelineConfig& cfg) {
  require(v.slices > 0, errc::empty_volume, "volume has no slices");
  std::vector<RoiSlice> rois(v.slices);
  parallel_for(v.slices, cfg.jobs, [&](int z) {
    Image2D s = v.slice(z);
    if (s.rows != kStdRows || s.cols != kStdCols) s = resize_bilinear(s, kStdRows, kStdCols);
    rois[z] = preprocess_slice(s, cfg.tv_lambda, cfg.tv_iters);
  });
  return rois;
}

// Carries a ground-truth volume through the same frame + crop as its image.
inline std::vector<Mask2D> crop_gt_like(const Volume& gt, const std::vector<RoiSlice>& rois) {
  require(gt.slices == static_cast<int>(rois.size()), errc::dim_mismatch,
          "gt slices must match the preprocessed volume");
  std::vector<Mask2D> out(gt.slices);
  for (int z = 0; z < gt.slices; ++z) {
    Image2D s = gt.slice(z);
    if (s.rows != kStdRows || s.cols != kStdCols) s = resize_nearest(s, kStdRows, kStdCols);
    Mask2D m(kRoiRows, kStdCols);
    for (int r = 0; r < kRoiRows; ++r)
      for (int c = 0; c < kStdCols; ++c)
        m.at(r, c) = s.at(rois[z].x0 - kRoiRows / 2 + r, c) != 0.0f ? 1 : 0;
    out[z] = std::move(m);
  }
  return out;
}

inline std::vector<GmpCake> build_cakes(const std::vector<RoiSlice>& rois,
                                        const GmpParams& gp, int jobs = 1) {
  std::vector<GmpCake> cakes(rois.size());
  parallel_for(static_cast<int>(rois.size()), jobs, [&](int z) {
    cakes[z] = cake(rois[z].image, rois[z].prior, gp);
  });
  return cakes;
}

// Training samples from one volume; optionally only slices whose gt has cysts.
inline std::vector<SliceSample> collect_samples(const std::vector<GmpCake>& cakes,
                                                const std::vector<Mask2D>& gt_rois,
                                                bool cyst_bearing_only) {
  require(cakes.size() == gt_rois.size(), errc::dim_mismatch, "cakes vs gt slices");
  std::vector<SliceSample> samples;
  for (size_t z = 0; z < cakes.size(); ++z) {
    if (cyst_bearing_only && gt_rois[z].count() == 0) continue;
    SliceSample s = assemble_inputs(cakes, static_cast<int>(z));
    s.gt = downsample_gt(gt_rois[z]);
    samples.push_back(std::move(s));
  }
  return samples;
}

struct SegmentedVolume {
  Volume pre;   // thresholded probability map, full ROI resolution
  Volume post;  // after intensity clustering
};

inline SegmentedVolume segment_volume(const Volume& prob, const std::vector<RoiSlice>& rois,
                                      const SegParams& sp, int jobs = 1) {
  require(prob.slices == static_cast<int>(rois.size()), errc::dim_mismatch,
          "probability slices vs rois");
  SegmentedVolume out;
  out.pre = Volume(prob.rows * 2, prob.cols * 2, prob.slices);
  out.post = Volume(prob.rows * 2, prob.cols * 2, prob.slices);
  parallel_for(prob.slices, jobs, [&](int z) {
    Image2D p = prob.slice(z);
    Mask2D pre = upsample_mask(threshold_map(p, sp.threshold));
    Mask2D post = segment_slice(p, rois[z].image, sp);
    for (int r = 0; r < pre.rows; ++r)
      for (int c = 0; c < pre.cols; ++c) {
        out.pre.at(r, c, z) = pre.at(r, c);
        out.post.at(r, c, z) = post.at(r, c);
      }
  });
  return out;
}

inline Volume masks_to_volume(const std::vector<Mask2D>& masks) {
  require(!masks.empty(), errc::empty_volume, "no masks");
  Volume v(masks[0].rows, masks[0].cols, static_cast<int>(masks.size()));
  for (size_t z = 0; z < masks.size(); ++z)
    for (int r = 0; r < v.rows; ++r)
      for (int c = 0; c < v.cols; ++c) v.at(r, c, static_cast<int>(z)) = masks[z].at(r, c);
  return v;
}

inline std::vector<int> all_slices(const Volume& v) {
  std::vector<int> zs(v.slices);
  for (int z = 0; z < v.slices; ++z) zs[z] = z;
  return zs;
}

inline std::string format_scores_row(const std::string& id, const Scores& s) {
  std::ostringstream os;
  os << std::left << std::setw(16) << id << std::right << std::fixed << std::setprecision(4)
     << std::setw(8) << s.dice << std::setw(8) << s.jaccard << std::setw(8) << s.ppv
     << std::setw(8) << s.sensitivity;
  return os.str();
}

inline std::string format_eval_table(const EvalReport& rep) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "volume" << std::right << std::setw(8) << "DC"
     << std::setw(8) << "JI" << std::setw(8) << "PPV" << std::setw(8) << "Sens" << "\n";
  for (size_t i = 0; i < rep.per_volume.size(); ++i)
    os << format_scores_row(i < rep.ids.size() ? rep.ids[i] : std::to_string(i),
                            rep.per_volume[i])
       << "\n";
  os << format_scores_row("mean", rep.mean) << "\n"
     << format_scores_row("stddev", rep.stddev) << "\n";
  return os.str();
}

}  // namespace gmpseg
