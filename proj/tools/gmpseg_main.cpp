#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "gmpseg/checkpoint.hpp"
#include "gmpseg/error.hpp"
#include "gmpseg/phantom.hpp"
#include "gmpseg/pipeline.hpp"

namespace fs = std::filesystem;
using namespace gmpseg;

namespace {

// Config resolution: defaults, then --config file, then flags in command-line order.
struct CfgBinding {
  std::string config_file;
  std::vector<std::pair<std::string, std::string>> overrides;
};

void add_cfg_flag(CLI::App* sub, CfgBinding& b, const std::string& flag, const std::string& key,
                  const std::string& help) {
  sub->add_option_function<std::string>(
      flag, [&b, key](const std::string& v) { b.overrides.emplace_back(key, v); }, help);
}

void add_common_cfg(CLI::App* sub, CfgBinding& b) {
  sub->add_option("--config", b.config_file, "key=value config file; flags override it");
  add_cfg_flag(sub, b, "--seed", "seed", "seed for all randomness");
  add_cfg_flag(sub, b, "--jobs", "jobs", "worker threads for per-slice work");
}

void add_gmp_cfg(CLI::App* sub, CfgBinding& b) {
  add_cfg_flag(sub, b, "--K", "K", "number of motion-pattern directions");
  add_cfg_flag(sub, b, "--N", "N", "translation extent");
  add_cfg_flag(sub, b, "--delta", "delta", "translation step");
  add_cfg_flag(sub, b, "--coalesce", "coalesce", "coalescing function: min or max");
}

void add_train_cfg(CLI::App* sub, CfgBinding& b) {
  add_cfg_flag(sub, b, "--epochs", "epochs", "training epochs");
  add_cfg_flag(sub, b, "--lr", "lr", "learning rate");
  add_cfg_flag(sub, b, "--momentum", "momentum", "Nesterov momentum");
  add_cfg_flag(sub, b, "--batch", "batch", "minibatch size");
  add_cfg_flag(sub, b, "--checkpoint-every", "checkpoint_every",
               "write a snapshot every this many epochs (0 = off)");
}

void add_seg_cfg(CLI::App* sub, CfgBinding& b) {
  add_cfg_flag(sub, b, "--threshold", "threshold", "probability threshold");
  add_cfg_flag(sub, b, "--kmeans-k", "kmeans_k", "clusters for intensity grouping");
  add_cfg_flag(sub, b, "--retain", "retain", "darkest clusters kept");
}

PipelineConfig resolve_cfg(const CfgBinding& b) {
  PipelineConfig c;
  if (!b.config_file.empty()) c = parse_config(read_text(b.config_file));
  for (const auto& [k, v] : b.overrides) apply_config_line(c, k, v);
  return c;
}

void emit_manifest(const std::string& path, const std::string& command, const PipelineConfig& cfg,
                   const std::vector<std::string>& inputs) {
  std::vector<std::pair<std::string, std::uint64_t>> hashes;
  for (const auto& p : inputs) hashes.emplace_back(p, hash_file(p));
  write_text(path, format_manifest(command, cfg, hashes));
}

std::string zero_pad(int n, int width) {
  std::string s = std::to_string(n);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

Checkpoint load_checkpoint_file(const std::string& path) {
  require(fs::exists(path), errc::missing_checkpoint, path);
  return load_checkpoint(path);
}

// Paired <name>.ovf / <name>_gt.ovf files, sorted by name.
std::vector<std::pair<std::string, std::string>> scan_pairs(const std::string& dir) {
  std::vector<std::pair<std::string, std::string>> pairs;
  require(fs::is_directory(dir), errc::value_out_of_range, "not a directory: " + dir);
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string p = e.path().string();
    if (e.path().extension() != ".ovf") continue;
    std::string stem = e.path().stem().string();
    if (stem.size() >= 3 && stem.substr(stem.size() - 3) == "_gt") continue;
    std::string gt = (e.path().parent_path() / (stem + "_gt.ovf")).string();
    if (fs::exists(gt)) pairs.emplace_back(p, gt);
  }
  std::sort(pairs.begin(), pairs.end());
  require(!pairs.empty(), errc::empty_volume, "no <name>.ovf + <name>_gt.ovf pairs in " + dir);
  return pairs;
}

struct PreparedVolume {
  std::vector<RoiSlice> rois;
  std::vector<Mask2D> gt;
};

PreparedVolume prepare_pair(const std::string& image_path, const std::string& gt_path,
                            const PipelineConfig& cfg) {
  Volume img = load_volume(image_path);
  Volume gt = load_volume(gt_path);
  PreparedVolume pv;
  pv.rois = preprocess_volume(img, cfg);
  pv.gt = crop_gt_like(gt, pv.rois);
  return pv;
}

std::vector<SliceSample> gather_training_set(
    const std::vector<std::pair<std::string, std::string>>& pairs, const PipelineConfig& cfg,
    bool cyst_bearing_only) {
  std::vector<SliceSample> samples;
  for (const auto& [img_path, gt_path] : pairs) {
    PreparedVolume pv = prepare_pair(img_path, gt_path, cfg);
    std::vector<GmpCake> cakes = build_cakes(pv.rois, cfg.gmp, cfg.jobs);
    std::vector<SliceSample> s = collect_samples(cakes, pv.gt, cyst_bearing_only);
    for (auto& x : s) samples.push_back(std::move(x));
  }
  return samples;
}

struct EvalOutcome {
  double dice_pre = 0.0, dice_post = 0.0, jaccard_pre = 0.0, jaccard_post = 0.0;
};

// Mean per-volume scores of thresholded and clustered masks over image/gt pairs.
EvalOutcome evaluate_pairs(const ModelWeights& w,
                           const std::vector<std::pair<std::string, std::string>>& pairs,
                           const PipelineConfig& cfg) {
  EvalOutcome out;
  for (const auto& [img_path, gt_path] : pairs) {
    PreparedVolume pv = prepare_pair(img_path, gt_path, cfg);
    std::vector<GmpCake> cakes = build_cakes(pv.rois, cfg.gmp, cfg.jobs);
    Volume prob = infer_volume(w, cakes);
    SegmentedVolume seg = segment_volume(prob, pv.rois, cfg.seg, cfg.jobs);
    Volume gt = masks_to_volume(pv.gt);
    Scores pre = evaluate_volume(seg.pre, gt, all_slices(gt));
    Scores post = evaluate_volume(seg.post, gt, all_slices(gt));
    out.dice_pre += pre.dice;
    out.dice_post += post.dice;
    out.jaccard_pre += pre.jaccard;
    out.jaccard_post += post.jaccard;
  }
  double n = static_cast<double>(pairs.size());
  out.dice_pre /= n;
  out.dice_post /= n;
  out.jaccard_pre /= n;
  out.jaccard_post /= n;
  return out;
}

void run_train_to(const std::string& out_path,
                  const std::vector<std::pair<std::string, std::string>>& pairs,
                  const PipelineConfig& cfg, bool cyst_bearing_only) {
  std::vector<SliceSample> samples = gather_training_set(pairs, cfg, cyst_bearing_only);
  std::string stem = out_path;
  if (stem.size() > 5 && stem.substr(stem.size() - 5) == ".gmpc") stem.resize(stem.size() - 5);
  auto snapshot = [&](int epoch, const TrainResult& r) {
    save_checkpoint(stem + "_epoch" + zero_pad(epoch, 3) + ".gmpc",
                    to_checkpoint(r.weights, r.velocity));
  };
  TrainResult r = train(samples, model_config(cfg), cfg.hp, snapshot);
  save_checkpoint(out_path, to_checkpoint(r.weights, r.velocity));
  std::ostringstream loss;
  for (size_t e = 0; e < r.loss_history.size(); ++e)
    loss << e + 1 << " " << r.loss_history[e] << "\n";
  write_text(out_path + ".loss.txt", loss.str());
}

int dispatch(CLI::App& app, int argc, char** argv) {
  argv = app.ensure_utf8(argv);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::fprintf(stderr, "run with --help for usage\n");
    return 2;
  } catch (const error& e) {
    std::fprintf(stderr, "gmpseg: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "gmpseg: %s\n", e.what());
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"motion-pattern cyst segmentation pipeline"};
  app.require_subcommand(1);

  // ---- phantom ----------------------------------------------------------
  auto ph_opts = std::make_shared<PhantomParams>();
  auto ph_bind = std::make_shared<CfgBinding>();
  auto ph_dir = std::make_shared<std::string>();
  auto ph_count = std::make_shared<int>(1);
  {
    CLI::App* sub = app.add_subcommand("phantom", "generate synthetic volumes with ground truth");
    sub->add_option("--out-dir", *ph_dir, "output directory")->required();
    sub->add_option("--count", *ph_count, "number of volumes");
    sub->add_option("--rows", ph_opts->rows, "volume rows");
    sub->add_option("--cols", ph_opts->cols, "volume columns");
    sub->add_option("--slices", ph_opts->slices, "volume slices");
    sub->add_option("--cysts", ph_opts->cysts, "cysts per volume");
    sub->add_option("--cyst-rmin", ph_opts->cyst_rmin, "min cyst radius, px");
    sub->add_option("--cyst-rmax", ph_opts->cyst_rmax, "max cyst radius, px");
    sub->add_option("--drusen", ph_opts->drusen, "drusen per volume");
    sub->add_option("--speckle", ph_opts->speckle, "multiplicative noise std");
    add_common_cfg(sub, *ph_bind);
    sub->callback([=] {
      PipelineConfig cfg = resolve_cfg(*ph_bind);
      fs::create_directories(*ph_dir);
      for (int i = 0; i < *ph_count; ++i) {
        PhantomParams p = *ph_opts;
        p.seed = cfg.hp.seed + static_cast<std::uint64_t>(i);
        Phantom ph = generate_phantom(p);
        std::string base = (fs::path(*ph_dir) / ("phantom_" + zero_pad(i, 3))).string();
        save_volume(base + ".ovf", ph.image, Dtype::f32);
        save_volume(base + "_gt.ovf", ph.gt, Dtype::u8);
        std::ostringstream layers;
        for (int z = 0; z < p.slices; ++z) {
          layers << "ilm " << z;
          for (int v : ph.ilm[z]) layers << " " << v;
          layers << "\nrpe " << z;
          for (int v : ph.rpe[z]) layers << " " << v;
          layers << "\n";
        }
        write_text(base + "_layers.txt", layers.str());
      }
      emit_manifest((fs::path(*ph_dir) / "manifest.txt").string(), "phantom", cfg, {});
    });
  }

  // ---- preprocess -------------------------------------------------------
  auto pp_bind = std::make_shared<CfgBinding>();
  auto pp_in = std::make_shared<std::string>();
  auto pp_gt = std::make_shared<std::string>();
  auto pp_dir = std::make_shared<std::string>();
  {
    CLI::App* sub = app.add_subcommand("preprocess", "standardize, crop ROI, denoise, build prior");
    sub->add_option("--in", *pp_in, "input volume (OVF)")->required();
    sub->add_option("--gt", *pp_gt, "ground-truth volume carried through the same crop");
    sub->add_option("--out-dir", *pp_dir, "output directory")->required();
    add_common_cfg(sub, *pp_bind);
    add_cfg_flag(sub, *pp_bind, "--tv-lambda", "tv_lambda", "denoising fidelity weight");
    add_cfg_flag(sub, *pp_bind, "--tv-iters", "tv_iters", "denoising iterations");
    sub->callback([=] {
      PipelineConfig cfg = resolve_cfg(*pp_bind);
      fs::create_directories(*pp_dir);
      Volume v = load_volume(*pp_in);
      std::vector<RoiSlice> rois = preprocess_volume(v, cfg);
      Volume roi(kRoiRows, kStdCols, v.slices);
      Volume prior(kRoiRows, kStdCols, v.slices);
      std::ostringstream offsets;
      for (int z = 0; z < v.slices; ++z) {
        roi.set_slice(z, rois[z].image);
        for (int r = 0; r < kRoiRows; ++r)
          for (int c = 0; c < kStdCols; ++c) prior.at(r, c, z) = rois[z].prior.at(r, c);
        offsets << z << " " << rois[z].x0 << "\n";
      }
      fs::path d(*pp_dir);
      save_volume((d / "roi.ovf").string(), roi, Dtype::f32);
      save_volume((d / "prior.ovf").string(), prior, Dtype::u8);
      write_text((d / "offsets.txt").string(), offsets.str());
      std::vector<std::string> inputs = {*pp_in};
      if (!pp_gt->empty()) {
        Volume gt = load_volume(*pp_gt);
        save_volume((d / "gt_roi.ovf").string(), masks_to_volume(crop_gt_like(gt, rois)),
                    Dtype::u8);
        inputs.push_back(*pp_gt);
      }
      emit_manifest((d / "manifest.txt").string(), "preprocess", cfg, inputs);
    });
  }

  // ---- gmp --------------------------------------------------------------
  auto gm_bind = std::make_shared<CfgBinding>();
  auto gm_roi = std::make_shared<std::string>();
  auto gm_prior = std::make_shared<std::string>();
  auto gm_dir = std::make_shared<std::string>();
  {
    CLI::App* sub = app.add_subcommand("gmp", "build directional motion-pattern cakes");
    sub->add_option("--roi", *gm_roi, "preprocessed ROI volume")->required();
    sub->add_option("--prior", *gm_prior, "position-prior volume")->required();
    sub->add_option("--out-dir", *gm_dir, "output directory")->required();
    add_common_cfg(sub, *gm_bind);
    add_gmp_cfg(sub, *gm_bind);
    sub->callback([=] {
      PipelineConfig cfg = resolve_cfg(*gm_bind);
      fs::create_directories(*gm_dir);
      Volume roi = load_volume(*gm_roi);
      Volume prior = load_volume(*gm_prior);
      require(roi.rows == prior.rows && roi.cols == prior.cols && roi.slices == prior.slices,
              errc::dim_mismatch, "roi and prior dims differ");
      Volume planes(roi.rows, roi.cols, roi.slices * cfg.gmp.K);
      parallel_for(roi.slices, cfg.jobs, [&](int z) {
        GmpCake c = cake(roi.slice(z), mask_from_slice(prior.slice(z)), cfg.gmp);
        for (int k = 0; k < c.K; ++k) planes.set_slice(z * cfg.gmp.K + k, c.planes[k]);
      });
      fs::path d(*gm_dir);
      save_volume((d / "cake.ovf").string(), planes, Dtype::f32);
      emit_manifest((d / "manifest.txt").string(), "gmp", cfg, {*gm_roi, *gm_prior});
    });
  }

  // ---- train ------------------------------------------------------------
  auto tr_bind = std::make_shared<CfgBinding>();
  auto tr_dir = std::make_shared<std::string>();
  auto tr_out = std::make_shared<std::string>();
  auto tr_all = std::make_shared<bool>(false);
  {
    CLI::App* sub = app.add_subcommand("train", "train the network on paired volumes");
    sub->add_option("--data-dir", *tr_dir, "directory of <name>.ovf + <name>_gt.ovf pairs")
        ->required();
    sub->add_option("--out", *tr_out, "checkpoint path (.gmpc)")->required();
    sub->add_flag("--all-slices", *tr_all, "train on every slice, not only cyst-bearing ones");
    add_common_cfg(sub, *tr_bind);
    add_gmp_cfg(sub, *tr_bind);
    add_train_cfg(sub, *tr_bind);
    sub->callback([=] {
      PipelineConfig cfg = resolve_cfg(*tr_bind);
      auto pairs = scan_pairs(*tr_dir);
      run_train_to(*tr_out, pairs, cfg, !*tr_all);
      std::vector<std::string> inputs;
      for (const auto& [a, b] : pairs) {
        inputs.push_back(a);
        inputs.push_back(b);
      }
      emit_manifest(*tr_out + ".manifest", "train", cfg, inputs);
    });
  }

  // ---- infer ------------------------------------------------------------
  auto in_bind = std::make_shared<CfgBinding>();
  auto in_ck = std::make_shared<std::string>();
  auto in_vol = std::make_shared<std::string>();
  auto in_out = std::make_shared<std::string>();
  {
    CLI::App* sub = app.add_subcommand("infer", "probability map volume from a checkpoint");
    sub->add_option("--checkpoint", *in_ck, "trained checkpoint (.gmpc)")->required();
    sub->add_option("--in", *in_vol, "input volume (OVF)")->required();
    sub->add_option("--out", *in_out, "output probability volume (OVF f32)")->required();
    add_common_cfg(sub, *in_bind);
    add_gmp_cfg(sub, *in_bind);
    sub->callback([=] {
      PipelineConfig cfg = resolve_cfg(*in_bind);
      Checkpoint cp = load_checkpoint_file(*in_ck);
      ModelConfig mc = config_from_checkpoint(cp);
      ModelWeights w = weights_from_checkpoint(cp);
      cfg.gmp.K = mc.channels - 1;
      Volume v = load_volume(*in_vol);
      std::vector<RoiSlice> rois = preprocess_volume(v, cfg);
      Volume prob = infer_volume(w, build_cakes(rois, cfg.gmp, cfg.jobs));
      prob.spacing = v.spacing;
      save_volume(*in_out, prob, Dtype::f32);
      emit_manifest(*in_out + ".manifest", "infer", cfg, {*in_ck, *in_vol});
    });
  }

  // ---- segment ----------------------------------------------------------
  auto sg_bind = std::make_shared<CfgBinding>();
  auto sg_prob = std::make_shared<std::string>();
  auto sg_roi = std::make_shared<std::string>();
  auto sg_out = std::make_shared<std::string>();
  auto sg_pre = std::make_shared<std::string>();
  {
    CLI::App* sub = app.add_subcommand("segment", "threshold + cluster a probability volume");
    sub->add_option("--prob", *sg_prob, "probability volume from infer")->required();
    sub->add_option("--roi", *sg_roi, "preprocessed ROI volume")->required();
    sub->add_option("--out", *sg_out, "final mask volume (OVF u8)")->required();
    sub->add_option("--pre-out", *sg_pre, "also write the pre-clustering mask here");
    add_common_cfg(sub, *sg_bind);
    add_seg_cfg(sub, *sg_bind);
    sub->callback([=] {
      PipelineConfig cfg = resolve_cfg(*sg_bind);
      Volume prob = load_volume(*sg_prob);
      Volume roi = load_volume(*sg_roi);
      std::vector<RoiSlice> rois(roi.slices);
      for (int z = 0; z < roi.slices; ++z) rois[z].image = roi.slice(z);
      SegmentedVolume seg = segment_volume(prob, rois, cfg.seg, cfg.jobs);
      save_volume(*sg_out, seg.post, Dtype::u8);
      if (!sg_pre->empty()) save_volume(*sg_pre, seg.pre, Dtype::u8);
      emit_manifest(*sg_out + ".manifest", "segment", cfg, {*sg_prob, *sg_roi});
    });
  }

  // ---- eval -------------------------------------------------------------
  auto ev_bind = std::make_shared<CfgBinding>();
  auto ev_pred = std::make_shared<std::vector<std::string>>();
  auto ev_gt = std::make_shared<std::vector<std::string>>();
  auto ev_out = std::make_shared<std::string>("eval_table.txt");
  {
    CLI::App* sub = app.add_subcommand("eval", "score mask volumes against ground truth");
    sub->add_option("--pred", *ev_pred, "predicted mask volume(s)")->required();
    sub->add_option("--gt", *ev_gt, "ground-truth volume(s), one per --pred")->required();
    sub->add_option("--out", *ev_out, "output table path");
    add_common_cfg(sub, *ev_bind);
    sub->callback([=] {
      PipelineConfig cfg = resolve_cfg(*ev_bind);
      require(ev_pred->size() == ev_gt->size(), errc::dim_mismatch,
              "--pred and --gt counts differ");
      EvalReport rep;
      for (size_t i = 0; i < ev_pred->size(); ++i) {
        Volume pred = load_volume((*ev_pred)[i]);
        Volume gt = load_volume((*ev_gt)[i]);
        rep.ids.push_back(stem_of((*ev_pred)[i]));
        rep.per_volume.push_back(evaluate_volume(pred, gt, all_slices(gt)));
      }
      summarize(rep);
      std::string table = format_eval_table(rep);
      std::fputs(table.c_str(), stdout);
      write_text(*ev_out, table);
      std::vector<std::string> inputs = *ev_pred;
      inputs.insert(inputs.end(), ev_gt->begin(), ev_gt->end());
      emit_manifest(*ev_out + ".manifest", "eval", cfg, inputs);
    });
  }

  // ---- sweep ------------------------------------------------------------
  auto sw_bind = std::make_shared<CfgBinding>();
  auto sw_kind = std::make_shared<std::string>();
  auto sw_grid = std::make_shared<std::string>();
  auto sw_train_dir = std::make_shared<std::string>();
  auto sw_eval_dir = std::make_shared<std::string>();
  auto sw_ck_dir = std::make_shared<std::string>(".");
  auto sw_ck = std::make_shared<std::string>();
  auto sw_out = std::make_shared<std::string>("sweep_table.txt");
  auto sw_train = std::make_shared<bool>(false);
  {
    CLI::App* sub = app.add_subcommand("sweep", "grid experiments over K, N, or threshold");
    sub->add_option("--kind", *sw_kind, "K, N, or threshold")->required();
    sub->add_option("--grid", *sw_grid, "comma-separated grid values")->required();
    sub->add_option("--eval-dir", *sw_eval_dir, "evaluation pairs directory")->required();
    sub->add_option("--train-dir", *sw_train_dir, "training pairs directory (K/N sweeps)");
    sub->add_option("--checkpoint-dir", *sw_ck_dir, "where per-grid checkpoints live");
    sub->add_option("--checkpoint", *sw_ck, "single checkpoint (threshold sweep)");
    sub->add_option("--out", *sw_out, "output table path");
    sub->add_flag("--train", *sw_train, "train missing grid checkpoints");
    add_common_cfg(sub, *sw_bind);
    add_gmp_cfg(sub, *sw_bind);
    add_train_cfg(sub, *sw_bind);
    add_seg_cfg(sub, *sw_bind);
    sub->callback([=] {
      PipelineConfig cfg = resolve_cfg(*sw_bind);
      require(*sw_kind == "K" || *sw_kind == "N" || *sw_kind == "threshold",
              errc::value_out_of_range, "--kind must be K, N, or threshold");
      std::vector<std::string> values;
      {
        std::istringstream is(*sw_grid);
        std::string tok;
        while (std::getline(is, tok, ','))
          if (!tok.empty()) values.push_back(tok);
      }
      require(!values.empty(), errc::value_out_of_range, "empty --grid");
      auto eval_pairs_list = scan_pairs(*sw_eval_dir);
      std::ostringstream table;
      std::vector<double> dcs;

      if (*sw_kind == "threshold") {
        require(!sw_ck->empty(), errc::missing_checkpoint,
                "threshold sweep needs --checkpoint");
        Checkpoint cp = load_checkpoint_file(*sw_ck);
        ModelWeights w = weights_from_checkpoint(cp);
        cfg.gmp.K = config_from_checkpoint(cp).channels - 1;
        table << "threshold  DC_pre   JI_pre   DC_post  JI_post\n";
        for (const std::string& v : values) {
          PipelineConfig c = cfg;
          apply_config_line(c, "threshold", v);
          EvalOutcome r = evaluate_pairs(w, eval_pairs_list, c);
          table << std::left << std::setw(11) << v << std::fixed << std::setprecision(4)
                << std::setw(9) << r.dice_pre << std::setw(9) << r.jaccard_pre << std::setw(9)
                << r.dice_post << std::setw(9) << r.jaccard_post << "\n";
          dcs.push_back(r.dice_post);
        }
      } else {
        table << *sw_kind << "      DC\n";
        for (const std::string& v : values) {
          PipelineConfig c = cfg;
          apply_config_line(c, *sw_kind, v);
          std::string ck_path =
              (fs::path(*sw_ck_dir) / ("ck_" + *sw_kind + v + ".gmpc")).string();
          if (!fs::exists(ck_path)) {
            require(*sw_train && !sw_train_dir->empty(), errc::missing_checkpoint,
                    ck_path + " (rerun with --train and --train-dir)");
            fs::create_directories(*sw_ck_dir);
            run_train_to(ck_path, scan_pairs(*sw_train_dir), c, true);
          }
          ModelWeights w = weights_from_checkpoint(load_checkpoint_file(ck_path));
          EvalOutcome r = evaluate_pairs(w, eval_pairs_list, c);
          table << std::left << std::setw(7) << v << std::fixed << std::setprecision(4)
                << r.dice_post << "\n";
          dcs.push_back(r.dice_post);
        }
      }
      std::string text = table.str();
      std::fputs(text.c_str(), stdout);
      write_text(*sw_out, text);
      std::ostringstream trend;
      trend << "trend (informational):";
      for (double d : dcs) trend << " " << std::fixed << std::setprecision(4) << d;
      std::fprintf(stderr, "%s\n", trend.str().c_str());
      std::vector<std::string> inputs;
      for (const auto& [a, b] : eval_pairs_list) {
        inputs.push_back(a);
        inputs.push_back(b);
      }
      emit_manifest(*sw_out + ".manifest", "sweep", cfg, inputs);
    });
  }

  // ---- export -----------------------------------------------------------
  auto ex_bind = std::make_shared<CfgBinding>();
  auto ex_in = std::make_shared<std::string>();
  auto ex_dir = std::make_shared<std::string>();
  auto ex_prefix = std::make_shared<std::string>("slice");
  {
    CLI::App* sub = app.add_subcommand("export", "write one PGM per slice of a volume");
    sub->add_option("--in", *ex_in, "input volume (OVF)")->required();
    sub->add_option("--out-dir", *ex_dir, "output directory")->required();
    sub->add_option("--prefix", *ex_prefix, "output filename prefix");
    add_common_cfg(sub, *ex_bind);
    sub->callback([=] {
      PipelineConfig cfg = resolve_cfg(*ex_bind);
      Volume v = load_volume(*ex_in);
      fs::create_directories(*ex_dir);
      auto [lo, hi] = min_max(v.data);
      if (hi <= lo) hi = lo + 1.0f;
      for (int z = 0; z < v.slices; ++z)
        save_pgm((fs::path(*ex_dir) / (*ex_prefix + "_" + zero_pad(z, 3) + ".pgm")).string(),
                 v.slice(z), lo, hi);
      emit_manifest((fs::path(*ex_dir) / "manifest.txt").string(), "export", cfg, {*ex_in});
    });
  }

  return dispatch(app, argc, argv);
}
