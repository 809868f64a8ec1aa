#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "gmpseg/model.hpp"

using namespace gmpseg;

namespace {

template <typename T>
Tensor<T> randt(std::vector<int> dims, std::mt19937& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(std::move(dims));
  for (auto& x : t.data) x = static_cast<T>(dist(rng));
  return t;
}

std::vector<double> flatten(const NetParams<double>& p) {
  std::vector<double> v;
  for (const Tensor<double>* t : p.tensors()) v.insert(v.end(), t->data.begin(), t->data.end());
  return v;
}

void unflatten(NetParams<double>& p, const std::vector<double>& v) {
  size_t off = 0;
  for (Tensor<double>* t : p.tensors()) {
    std::copy(v.begin() + off, v.begin() + off + t->size(), t->data.begin());
    off += t->size();
  }
}

// Smallest top-1 margin over 2x2 pooling windows; finite differences stay on
// one side of every argmax when this is comfortably above the probe step.
template <typename T>
double min_top_gap(const Tensor<T>& x) {
  const int H = x.dim(0), W = x.dim(1);
  size_t rest = 1;
  for (int i = 2; i < x.rank(); ++i) rest *= static_cast<size_t>(x.dim(i));
  const size_t row = static_cast<size_t>(W) * rest;
  double worst = 1e30;
  for (int oh = 0; oh < H / 2; ++oh)
    for (int ow = 0; ow < W / 2; ++ow) {
      const T* base = x.data.data() + 2 * oh * row + 2 * ow * rest;
      for (size_t j = 0; j < rest; ++j) {
        double v[4] = {double(base[j]), double(base[rest + j]), double(base[row + j]),
                       double(base[row + rest + j])};
        std::sort(v, v + 4);
        worst = std::min(worst, v[3] - v[2]);
      }
    }
  return worst;
}

// Re-run the wiring layer by layer to expose the pre-activation tensors,
// which the trace does not keep.
template <typename T>
double min_preact_abs(const NetParams<T>& p, const Tensor<T>& in1, const Tensor<T>& in2) {
  auto act = [&](const Tensor<T>& t) { return p.cfg.relu_hidden ? relu(t) : t; };
  Tensor<T> pre1 = conv3d(in1, p.s1_w, p.s1_b, DepthPad::valid);
  Tensor<T> out2 = act(squeeze_depth(pre1));
  Pooled<T> pool1 = maxpool2x2(in1);
  Tensor<T> pre2a = conv3d(pool1.out, p.s2a_w, p.s2a_b, DepthPad::same);
  Tensor<T> pre2b = conv3d(act(pre2a), p.s2b_w, p.s2b_b, DepthPad::valid);
  Tensor<T> pre3 = conv2d(concat_channels(in2, out2), p.s3_w, p.s3_b);
  Pooled<T> pool3 = maxpool2x2(act(pre3));
  Tensor<T> pre4a = conv2d(concat_channels(pool3.out, act(squeeze_depth(pre2b))), p.s4a_w,
                           p.s4a_b);
  double m = 1e30;
  for (const Tensor<T>* t : {&pre1, &pre2a, &pre2b, &pre3, &pre4a})
    for (T v : t->data) m = std::min(m, std::abs(double(v)));
  return m;
}

ModelConfig miniature_config(bool relu = false) {
  ModelConfig cfg;
  cfg.channels = 3;
  cfg.big_kernel = 5;
  cfg.mid_kernel = 3;
  cfg.filters = 2;
  cfg.relu_hidden = relu;
  return cfg;
}

std::vector<GmpCake> tiny_cakes(int Z, int H, int W, int K, std::mt19937& rng) {
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  std::vector<GmpCake> cakes(Z);
  for (auto& c : cakes) {
    c.rows = H;
    c.cols = W;
    c.K = K;
    for (int k = 0; k < K; ++k) {
      Image2D img(H, W);
      for (auto& v : img.data) v = dist(rng);
      c.planes.push_back(std::move(img));
    }
    c.prior = Mask2D(H, W);
    for (int r = H / 4; r < 3 * H / 4; ++r)
      for (int col = 0; col < W; ++col) c.prior.at(r, col) = 1;
  }
  return cakes;
}

// One sample whose target is a function of input channel 0: dark square on a
// bright ground, labeled inside the square.
SliceSample memorizable_sample(const ModelConfig& cfg, std::mt19937& rng) {
  const int H = 16, W = 16, C = cfg.channels;
  SliceSample s;
  s.input1 = randt<float>({H, W, 3, C}, rng, -0.2, 0.2);
  s.input2 = Tensor<float>({H, W, C});
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      bool inside = r >= 4 && r < 12 && c >= 4 && c < 12;
      for (int d = 0; d < 3; ++d) s.input1.at(r, c, d, 0) = inside ? -2.0f : 1.0f;
      for (int ch = 0; ch < C; ++ch) s.input2.at(r, c, ch) = s.input1.at(r, c, 1, ch);
    }
  s.gt = Mask2D(H / 2, W / 2);
  for (int r = 2; r < 6; ++r)
    for (int c = 2; c < 6; ++c) s.gt.at(r, c) = 1;
  return s;
}

}  // namespace

TEST_CASE("forward reproduces every tabulated stage shape at full scale") {
  ModelConfig cfg;  // shipped defaults
  ModelWeights w = init_params<float>(cfg, 1);
  std::mt19937 rng(2);
  Tensor<float> in1 = randt<float>({250, 256, 3, 9}, rng);
  Tensor<float> in2 = randt<float>({250, 256, 9}, rng);
  ForwardTrace<float> tr = model_forward(w, std::move(in1), std::move(in2));

  REQUIRE(tr.input1.dims == std::vector<int>{250, 256, 3, 9});
  REQUIRE(tr.out2.dims == std::vector<int>{250, 256, 9});
  REQUIRE(tr.pool1.out.dims == std::vector<int>{125, 128, 3, 9});
  REQUIRE(tr.s2a_out.dims == std::vector<int>{125, 128, 3, 9});
  REQUIRE(tr.out6.dims == std::vector<int>{125, 128, 9});
  REQUIRE(tr.cat3.dims == std::vector<int>{250, 256, 18});
  REQUIRE(tr.s3_out.dims == std::vector<int>{250, 256, 8});
  REQUIRE(tr.pool3.out.dims == std::vector<int>{125, 128, 8});
  REQUIRE(tr.cat4.dims == std::vector<int>{125, 128, 17});
  REQUIRE(tr.s4a_out.dims == std::vector<int>{125, 128, 8});
  REQUIRE(tr.prob.dims == std::vector<int>{125, 128, 1});
  for (float v : tr.prob.data) {
    REQUIRE(v > 0.0f);
    REQUIRE(v < 1.0f);
  }
}

TEST_CASE("all-zero weights yield a uniform half map") {
  ModelConfig cfg = miniature_config();
  ModelWeights w = zero_params<float>(cfg);
  std::mt19937 rng(3);
  ForwardTrace<float> tr = model_forward(w, randt<float>({16, 16, 3, 3}, rng),
                                         randt<float>({16, 16, 3}, rng));
  for (float v : tr.prob.data) REQUIRE(v == 0.5f);
}

TEST_CASE("forward rejects malformed inputs") {
  ModelConfig cfg = miniature_config();
  ModelWeights w = zero_params<float>(cfg);
  std::mt19937 rng(4);
  try {
    model_forward(w, randt<float>({16, 16, 3, 3}, rng), randt<float>({16, 16, 2}, rng));
    FAIL("expected ShapeMismatch");
  } catch (const error& e) {
    REQUIRE(e.code() == errc::shape_mismatch);
  }
  try {
    model_forward(w, randt<float>({15, 16, 3, 3}, rng), randt<float>({15, 16, 3}, rng));
    FAIL("expected OddSpatialDim");
  } catch (const error& e) {
    REQUIRE(e.code() == errc::odd_spatial_dim);
  }
}

TEST_CASE("assemble_inputs normalizes planes and keeps the prior binary") {
  std::mt19937 rng(5);
  std::vector<GmpCake> cakes = tiny_cakes(3, 8, 6, 2, rng);
  SliceSample s = assemble_inputs(cakes, 1);
  REQUIRE(s.input1.dims == std::vector<int>{8, 6, 3, 3});
  REQUIRE(s.input2.dims == std::vector<int>{8, 6, 3});

  for (int depth = 0; depth < 3; ++depth)
    for (int k = 0; k < 2; ++k) {
      double sum = 0.0, sq = 0.0;
      for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 6; ++c) {
          double v = s.input1.at(r, c, depth, k);
          sum += v;
          sq += v * v;
        }
      double mean = sum / 48.0;
      double stdev = std::sqrt(sq / 48.0 - mean * mean);
      REQUIRE(std::abs(mean) <= 1e-5);
      REQUIRE(std::abs(stdev - 1.0) <= 1e-4);
    }

  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 6; ++c)
      for (int depth = 0; depth < 3; ++depth) {
        float v = s.input1.at(r, c, depth, 2);
        REQUIRE((v == 0.0f || v == 1.0f));
        REQUIRE(v == (cakes[depth].prior.at(r, c) ? 1.0f : 0.0f));
      }

  // input2 is the middle depth plane
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 6; ++c)
      for (int ch = 0; ch < 3; ++ch) REQUIRE(s.input2.at(r, c, ch) == s.input1.at(r, c, 1, ch));

  // interior slice pulls from its actual neighbors
  REQUIRE(s.input1.at(3, 3, 0, 0) != s.input1.at(3, 3, 1, 0));
}

TEST_CASE("assemble_inputs replicates edge slices") {
  std::mt19937 rng(6);
  std::vector<GmpCake> cakes = tiny_cakes(4, 8, 6, 2, rng);
  SliceSample first = assemble_inputs(cakes, 0);
  SliceSample last = assemble_inputs(cakes, 3);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 6; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        REQUIRE(first.input1.at(r, c, 0, ch) == first.input1.at(r, c, 1, ch));
        REQUIRE(last.input1.at(r, c, 2, ch) == last.input1.at(r, c, 1, ch));
      }

  REQUIRE_THROWS_AS(assemble_inputs({}, 0), error);
  REQUIRE_THROWS_AS(assemble_inputs(cakes, 4), error);
}

TEST_CASE("downsample_gt is a block-wise OR") {
  Mask2D zero(250, 256);
  REQUIRE(downsample_gt(zero).count() == 0);

  Mask2D one(250, 256);
  one.at(37, 41) = 1;
  Mask2D d = downsample_gt(one);
  REQUIRE(d.count() == 1);
  REQUIRE(d.at(18, 20) == 1);

  Mask2D checker(8, 8);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) checker.at(r, c) = (r + c) % 2;
  Mask2D dc = downsample_gt(checker);
  REQUIRE(dc.count() == dc.data.size());

  Mask2D odd(7, 8);
  try {
    downsample_gt(odd);
    FAIL("expected DimMismatch");
  } catch (const error& e) {
    REQUIRE(e.code() == errc::dim_mismatch);
  }
}

TEST_CASE("positive weight is the clamped background ratio") {
  Mask2D m(10, 10);
  for (int i = 0; i < 4; ++i) m.data[i] = 1;
  REQUIRE(positive_weight({&m}) == Catch::Approx(96.0 / 4.0));

  Mask2D sparse(128, 128);
  sparse.data[0] = 1;
  REQUIRE(positive_weight({&sparse}) == 500.0);

  Mask2D dense(10, 10, 1);
  REQUIRE(positive_weight({&dense}) == 1.0);

  Mask2D empty(10, 10);
  REQUIRE(positive_weight({&empty}) == 500.0);

  // pooled across the batch
  Mask2D a(10, 10), b(10, 10);
  for (int i = 0; i < 10; ++i) a.data[i] = 1;
  REQUIRE(positive_weight({&a, &b}) == Catch::Approx(190.0 / 10.0));
}

namespace {

// Deterministic search for an instance whose pooling argmaxes and (with relu)
// pre-activation signs cannot flip under the probe step.
struct GradInstance {
  NetParams<double> p;
  Tensor<double> in1, in2, gt;
};

GradInstance well_separated_instance(const ModelConfig& cfg, std::uint32_t base) {
  for (std::uint32_t tries = 0;; ++tries) {
    std::uint32_t s = base + tries;
    NetParams<double> p = init_params<float>(cfg, s).cast<double>();
    std::mt19937 rng(1000 + s);
    Tensor<double> in1 = randt<double>({16, 16, 3, 3}, rng);
    Tensor<double> in2 = randt<double>({16, 16, 3}, rng);
    ForwardTrace<double> tr = model_forward(p, in1, in2);
    if (min_top_gap(tr.input1) < 5e-4) continue;
    if (min_top_gap(tr.s3_out) < 2e-3) continue;
    if (cfg.relu_hidden && min_preact_abs(p, in1, in2) < 1e-3) continue;
    Tensor<double> gt({8, 8, 1});
    std::uniform_int_distribution<int> bit(0, 1);
    for (auto& v : gt.data) v = bit(rng);
    return {std::move(p), std::move(in1), std::move(in2), std::move(gt)};
  }
}

}  // namespace

TEST_CASE("end-to-end parameter gradients match finite differences") {
  for (bool relu : {false, true}) {
    ModelConfig cfg = miniature_config(relu);
    GradInstance gi = well_separated_instance(cfg, 11);
    const double wp = 7.0;

    ForwardTrace<double> tr = model_forward(gi.p, gi.in1, gi.in2);
    auto [loss, d_prob] = weighted_bce(tr.prob, gi.gt, wp);
    ModelGrads<double> mg = model_backward(gi.p, tr, d_prob);

    std::vector<double> x = flatten(gi.p);
    std::vector<double> analytic = flatten(mg.g);
    auto f = [&](const std::vector<double>& v) {
      NetParams<double> q = gi.p;
      unflatten(q, v);
      ForwardTrace<double> t = model_forward(q, gi.in1, gi.in2);
      return weighted_bce(t.prob, gi.gt, wp).first;
    };
    REQUIRE(grad_check(f, x, analytic, relu ? 1e-5 : 1e-4) < 1e-3);
  }
}

TEST_CASE("skipping input gradients leaves parameter gradients untouched") {
  for (bool relu : {false, true}) {
    ModelConfig cfg = miniature_config(relu);
    GradInstance gi = well_separated_instance(cfg, 17);
    ForwardTrace<double> tr = model_forward(gi.p, gi.in1, gi.in2);
    auto [loss, d_prob] = weighted_bce(tr.prob, gi.gt, 5.0);
    ModelGrads<double> full = model_backward(gi.p, tr, d_prob, true);
    ModelGrads<double> lean = model_backward(gi.p, tr, d_prob, false);
    REQUIRE(flatten(full.g) == flatten(lean.g));
    REQUIRE(lean.d_input1.size() == 0);
    REQUIRE(full.d_input1.size() == gi.in1.size());
  }
}

TEST_CASE("end-to-end input gradients match finite differences") {
  ModelConfig cfg = miniature_config();
  GradInstance gi = well_separated_instance(cfg, 21);

  ForwardTrace<double> tr = model_forward(gi.p, gi.in1, gi.in2);
  auto [loss, d_prob] = weighted_bce(tr.prob, gi.gt, 3.0);
  ModelGrads<double> mg = model_backward(gi.p, tr, d_prob);

  std::vector<double> x1 = gi.in1.data;
  auto f1 = [&](const std::vector<double>& v) {
    Tensor<double> t = gi.in1;
    t.data = v;
    return weighted_bce(model_forward(gi.p, t, gi.in2).prob, gi.gt, 3.0).first;
  };
  REQUIRE(grad_check(f1, x1, mg.d_input1.data, 1e-5) < 1e-3);

  std::vector<double> x2 = gi.in2.data;
  auto f2 = [&](const std::vector<double>& v) {
    Tensor<double> t = gi.in2;
    t.data = v;
    return weighted_bce(model_forward(gi.p, gi.in1, t).prob, gi.gt, 3.0).first;
  };
  REQUIRE(grad_check(f2, x2, mg.d_input2.data, 1e-5) < 1e-3);
}

TEST_CASE("training requires a cyst-bearing slice") {
  ModelConfig cfg = miniature_config();
  std::mt19937 rng(30);
  SliceSample s = memorizable_sample(cfg, rng);
  s.gt = Mask2D(8, 8);  // nothing labeled
  Hyperparams hp;
  hp.epochs = 1;
  try {
    train({s}, cfg, hp);
    FAIL("expected NoPositiveSamples");
  } catch (const error& e) {
    REQUIRE(e.code() == errc::no_positive_samples);
  }
}

TEST_CASE("lr = 0 leaves the weights at their initialization") {
  ModelConfig cfg = miniature_config();
  std::mt19937 rng(31);
  SliceSample s = memorizable_sample(cfg, rng);
  Hyperparams hp;
  hp.lr = 0.0;
  hp.epochs = 3;
  hp.seed = 5;
  TrainResult r = train({s}, cfg, hp);

  ModelWeights fresh = init_params<float>(cfg, 5);
  auto a = r.weights.tensors();
  auto b = fresh.tensors();
  for (int i = 0; i < 12; ++i) REQUIRE(a[i]->data == b[i]->data);
  REQUIRE(r.loss_history.size() == 3);
  REQUIRE(r.loss_history[0] == r.loss_history[1]);
  REQUIRE(r.loss_history[1] == r.loss_history[2]);
}

TEST_CASE("identical seeds reproduce training bit for bit") {
  ModelConfig cfg = miniature_config();
  std::mt19937 rng(32);
  std::vector<SliceSample> samples;
  for (int i = 0; i < 3; ++i) samples.push_back(memorizable_sample(cfg, rng));
  Hyperparams hp;
  hp.epochs = 2;
  hp.batch_size = 2;
  hp.seed = 77;
  hp.lr = 0.01;

  TrainResult r1 = train(samples, cfg, hp);
  TrainResult r2 = train(samples, cfg, hp);
  REQUIRE(r1.loss_history == r2.loss_history);
  auto a = r1.weights.tensors();
  auto b = r2.weights.tensors();
  for (int i = 0; i < 12; ++i) REQUIRE(a[i]->data == b[i]->data);

  hp.seed = 78;
  TrainResult r3 = train(samples, cfg, hp);
  REQUIRE(r3.loss_history != r1.loss_history);
}

TEST_CASE("a single sample is memorized") {
  ModelConfig cfg = miniature_config();
  std::mt19937 rng(33);
  SliceSample s = memorizable_sample(cfg, rng);
  Hyperparams hp;
  hp.epochs = 150;
  hp.lr = 0.05;
  hp.seed = 3;
  TrainResult r = train({s}, cfg, hp);

  REQUIRE(r.loss_history.back() < 0.5 * r.loss_history.front());
  for (size_t i = 11; i < r.loss_history.size(); ++i)
    REQUIRE(r.loss_history[i] <= r.loss_history[i - 1] * 1.05);
}

TEST_CASE("snapshot callback fires on the configured interval") {
  ModelConfig cfg = miniature_config();
  std::mt19937 rng(34);
  SliceSample s = memorizable_sample(cfg, rng);
  Hyperparams hp;
  hp.epochs = 4;
  hp.checkpoint_every = 2;
  std::vector<int> seen;
  train({s}, cfg, hp, [&](int epoch, const TrainResult&) { seen.push_back(epoch); });
  REQUIRE(seen == std::vector<int>{2});  // the final epoch is not double-written
}

TEST_CASE("weights survive the checkpoint round-trip with config intact") {
  ModelConfig cfg = miniature_config(true);
  ModelWeights w = init_params<float>(cfg, 9);
  ModelWeights vel = zero_params<float>(cfg);
  vel.s3_b.data[0] = 0.125f;

  const std::string path = "model_ckpt_test.gmpc";
  save_checkpoint(path, to_checkpoint(w, vel));
  Checkpoint cp = load_checkpoint(path);
  std::remove(path.c_str());
  std::remove((path + ".meta").c_str());
  ModelConfig back_cfg = config_from_checkpoint(cp);
  REQUIRE(back_cfg.channels == cfg.channels);
  REQUIRE(back_cfg.big_kernel == cfg.big_kernel);
  REQUIRE(back_cfg.mid_kernel == cfg.mid_kernel);
  REQUIRE(back_cfg.filters == cfg.filters);
  REQUIRE(back_cfg.relu_hidden == cfg.relu_hidden);

  ModelWeights back = weights_from_checkpoint(cp);
  auto a = back.tensors();
  auto b = w.tensors();
  for (int i = 0; i < 12; ++i) REQUIRE(a[i]->data == b[i]->data);

  ModelWeights bvel = velocity_from_checkpoint(cp, back_cfg);
  REQUIRE(bvel.s3_b.data[0] == 0.125f);

  cp.put("s3_conv.b", Tensor<float>({5}));
  try {
    weights_from_checkpoint(cp);
    FAIL("expected ShapeMismatch");
  } catch (const error& e) {
    REQUIRE(e.code() == errc::shape_mismatch);
  }
}

TEST_CASE("inference stacks per-slice maps into a half-scale volume") {
  ModelConfig cfg;
  cfg.channels = 3;
  cfg.big_kernel = 5;
  cfg.mid_kernel = 3;
  cfg.filters = 2;
  ModelWeights w = init_params<float>(cfg, 40);
  std::mt19937 rng(41);
  std::vector<GmpCake> cakes = tiny_cakes(5, 16, 12, 2, rng);

  Volume prob = infer_volume(w, cakes);
  REQUIRE(prob.rows == 8);
  REQUIRE(prob.cols == 6);
  REQUIRE(prob.slices == 5);
  for (float v : prob.data) {
    REQUIRE(v > 0.0f);
    REQUIRE(v < 1.0f);
  }

  Volume again = infer_volume(w, cakes);
  REQUIRE(prob.data == again.data);
  REQUIRE_THROWS_AS(infer_volume(w, {}), error);
}
