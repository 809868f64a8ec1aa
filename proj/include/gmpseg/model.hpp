#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gmpseg/checkpoint.hpp"
#include "gmpseg/error.hpp"
#include "gmpseg/gmp.hpp"
#include "gmpseg/image.hpp"
#include "gmpseg/nn.hpp"
#include "gmpseg/tensor.hpp"

namespace gmpseg {

// Architecture knobs. Defaults are the shipped network; tests shrink them to
// run finite-difference checks on the full wiring.
struct ModelConfig {
  int channels = 9;     // GMP planes + prior per depth plane
  int big_kernel = 25;  // stage-2/4 field of view (half scale)
  int mid_kernel = 10;  // stage-3 field of view (full scale)
  int filters = 8;
  bool relu_hidden = false;  // identity between stages by default
};

inline constexpr const char* kParamNames[12] = {
    "s1_conv.w", "s1_conv.b", "s2_conv_a.w", "s2_conv_a.b", "s2_conv_b.w", "s2_conv_b.b",
    "s3_conv.w", "s3_conv.b", "s4_conv_a.w", "s4_conv_a.b", "s4_conv_b.w", "s4_conv_b.b"};

template <typename T>
struct NetParams {
  ModelConfig cfg;
  Tensor<T> s1_w, s1_b;    // 1x1x3, channels -> channels
  Tensor<T> s2a_w, s2a_b;  // big x big x 3, depth-same
  Tensor<T> s2b_w, s2b_b;  // 1x1x3, depth-valid
  Tensor<T> s3_w, s3_b;    // mid x mid, 2*channels -> filters
  Tensor<T> s4a_w, s4a_b;  // big x big, filters+channels -> filters
  Tensor<T> s4b_w, s4b_b;  // 1x1, filters -> 1

  std::vector<Tensor<T>*> tensors() {
    return {&s1_w, &s1_b, &s2a_w, &s2a_b, &s2b_w, &s2b_b,
            &s3_w, &s3_b, &s4a_w, &s4a_b, &s4b_w, &s4b_b};
  }
  std::vector<const Tensor<T>*> tensors() const {
    return {&s1_w, &s1_b, &s2a_w, &s2a_b, &s2b_w, &s2b_b,
            &s3_w, &s3_b, &s4a_w, &s4a_b, &s4b_w, &s4b_b};
  }

  template <typename U>
  NetParams<U> cast() const {
    NetParams<U> out;
    out.cfg = cfg;
    auto src = tensors();
    auto dst = out.tensors();
    for (int i = 0; i < 12; ++i) *dst[i] = src[i]->template cast<U>();
    return out;
  }

  size_t param_count() const {
    size_t n = 0;
    for (const Tensor<T>* t : tensors()) n += t->size();
    return n;
  }
};

using ModelWeights = NetParams<float>;

template <typename T>
std::vector<std::vector<int>> param_shapes(const ModelConfig& cfg) {
  const int C = cfg.channels, B = cfg.big_kernel, M = cfg.mid_kernel, F = cfg.filters;
  return {{1, 1, 3, C, C}, {C}, {B, B, 3, C, C}, {C}, {1, 1, 3, C, C}, {C},
          {M, M, 2 * C, F}, {F}, {B, B, F + C, F}, {F}, {1, 1, F, 1},   {1}};
}

template <typename T>
NetParams<T> zero_params(const ModelConfig& cfg) {
  require(cfg.channels >= 2 && cfg.big_kernel >= 1 && cfg.mid_kernel >= 1 && cfg.filters >= 1,
          errc::value_out_of_range, "model config");
  NetParams<T> p;
  p.cfg = cfg;
  auto shapes = param_shapes<T>(cfg);
  auto ts = p.tensors();
  for (int i = 0; i < 12; ++i) *ts[i] = Tensor<T>(shapes[i]);
  return p;
}

// Glorot-uniform weights, zero biases, fixed layer order so a seed pins every
// parameter bit.
template <typename T = float>
NetParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  NetParams<T> p = zero_params<T>(cfg);
  std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  std::mt19937 rng(sq);
  for (Tensor<T>* w : {&p.s1_w, &p.s2a_w, &p.s2b_w}) {
    int field = w->dim(0) * w->dim(1) * w->dim(2);
    glorot_fill(*w, field * w->dim(3), field * w->dim(4), rng);
  }
  for (Tensor<T>* w : {&p.s3_w, &p.s4a_w, &p.s4b_w}) {
    int field = w->dim(0) * w->dim(1);
    glorot_fill(*w, field * w->dim(2), field * w->dim(3), rng);
  }
  return p;
}

// One training/inference unit: the cake tensors for a slice and its neighbors
// plus the half-resolution ground truth (empty mask when unlabeled).
struct SliceSample {
  Tensor<float> input1;  // [H, W, 3, C]
  Tensor<float> input2;  // [H, W, C] == input1's middle depth plane
  Mask2D gt;
  int z = 0;
};

namespace detail {

// Zero mean, unit variance in double; flat planes map to zero.
inline void store_normalized(const Image2D& img, Tensor<float>& dst, int depth, int channel) {
  double sum = 0.0;
  for (float v : img.data) sum += v;
  double mean = sum / static_cast<double>(img.size());
  double var = 0.0;
  for (float v : img.data) {
    double d = v - mean;
    var += d * d;
  }
  var /= static_cast<double>(img.size());
  double scale = var > 1e-24 ? 1.0 / std::sqrt(var) : 0.0;
  for (int r = 0; r < img.rows; ++r)
    for (int c = 0; c < img.cols; ++c)
      dst.at(r, c, depth, channel) = static_cast<float>((img.at(r, c) - mean) * scale);
}

}  // namespace detail

inline SliceSample assemble_inputs(const std::vector<GmpCake>& cakes, int z) {
  require(!cakes.empty(), errc::empty_volume, "no cakes");
  const int Z = static_cast<int>(cakes.size());
  require(z >= 0 && z < Z, errc::value_out_of_range, "slice index");
  const int H = cakes[z].rows, W = cakes[z].cols, K = cakes[z].K;

  SliceSample s;
  s.z = z;
  s.input1 = Tensor<float>({H, W, 3, K + 1});
  for (int depth = 0; depth < 3; ++depth) {
    int zz = std::clamp(z + depth - 1, 0, Z - 1);  // edge slices replicate
    const GmpCake& ck = cakes[zz];
    require(ck.rows == H && ck.cols == W && ck.K == K, errc::dim_mismatch, "cake dims");
    for (int k = 0; k < K; ++k) detail::store_normalized(ck.planes[k], s.input1, depth, k);
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c)
        s.input1.at(r, c, depth, K) = ck.prior.at(r, c) ? 1.0f : 0.0f;
  }
  s.input2 = Tensor<float>({H, W, K + 1});
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c)
      for (int ch = 0; ch <= K; ++ch) s.input2.at(r, c, ch) = s.input1.at(r, c, 1, ch);
  return s;
}

// Max-pool of a binary mask: the network output is half resolution.
inline Mask2D downsample_gt(const Mask2D& m) {
  require(m.rows % 2 == 0 && m.cols % 2 == 0, errc::dim_mismatch, "mask dims must be even");
  Mask2D out(m.rows / 2, m.cols / 2);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c)
      if (m.at(r, c)) out.at(r / 2, c / 2) = 1;
  return out;
}

template <typename T>
struct ForwardTrace {
  Tensor<T> input1, input2;
  Tensor<T> out2;    // stage 1 collapsed to 2D, full scale
  Pooled<T> pool1;
  Tensor<T> s2a_out;
  Tensor<T> out6;    // stage 2 result, half scale
  Tensor<T> cat3;
  Tensor<T> s3_out;
  Pooled<T> pool3;   // stage 3 result after pooling
  Tensor<T> cat4;
  Tensor<T> s4a_out;
  Tensor<T> prob;    // [H/2, W/2, 1]
};

template <typename T>
ForwardTrace<T> model_forward(const NetParams<T>& p, Tensor<T> input1, Tensor<T> input2) {
  const int C = p.cfg.channels;
  require(input1.rank() == 4 && input1.dim(2) == 3 && input1.dim(3) == C, errc::shape_mismatch,
          "input1 shape");
  const int H = input1.dim(0), W = input1.dim(1);
  require(input2.dims == std::vector<int>{H, W, C}, errc::shape_mismatch, "input2 shape");
  require(H % 2 == 0 && W % 2 == 0, errc::odd_spatial_dim, "input dims must be even");

  auto act = [&](Tensor<T> t) { return p.cfg.relu_hidden ? relu(t) : std::move(t); };

  ForwardTrace<T> tr;
  tr.input1 = std::move(input1);
  tr.input2 = std::move(input2);
  tr.out2 = act(squeeze_depth(conv3d(tr.input1, p.s1_w, p.s1_b, DepthPad::valid)));
  tr.pool1 = maxpool2x2(tr.input1);
  tr.s2a_out = act(conv3d(tr.pool1.out, p.s2a_w, p.s2a_b, DepthPad::same));
  tr.out6 = act(squeeze_depth(conv3d(tr.s2a_out, p.s2b_w, p.s2b_b, DepthPad::valid)));
  tr.cat3 = concat_channels(tr.input2, tr.out2);
  tr.s3_out = act(conv2d(tr.cat3, p.s3_w, p.s3_b));
  tr.pool3 = maxpool2x2(tr.s3_out);
  tr.cat4 = concat_channels(tr.pool3.out, tr.out6);
  tr.s4a_out = act(conv2d(tr.cat4, p.s4a_w, p.s4a_b));
  tr.prob = sigmoid(conv2d(tr.s4a_out, p.s4b_w, p.s4b_b));
  return tr;
}

template <typename T>
Image2D prob_map(const ForwardTrace<T>& tr) {
  Image2D img(tr.prob.dim(0), tr.prob.dim(1));
  for (size_t i = 0; i < img.size(); ++i) img.data[i] = static_cast<float>(tr.prob.data[i]);
  return img;
}

template <typename T>
struct ModelGrads {
  NetParams<T> g;
  Tensor<T> d_input1, d_input2;
};

template <typename T>
ModelGrads<T> model_backward(const NetParams<T>& p, const ForwardTrace<T>& tr,
                             const Tensor<T>& d_prob, bool want_input_grads = true) {
  auto actback = [&](const Tensor<T>& y, Tensor<T> d) {
    return p.cfg.relu_hidden ? relu_backward(y, d) : std::move(d);
  };

  Tensor<T> d_logit = sigmoid_backward(tr.prob, d_prob);
  ConvGrads<T> g4b = conv2d_backward(tr.s4a_out, p.s4b_w, d_logit);
  Tensor<T> d_s4a = actback(tr.s4a_out, std::move(g4b.d_x));
  ConvGrads<T> g4a = conv2d_backward(tr.cat4, p.s4a_w, d_s4a);
  auto [d_pool3, d_out6] = split_channels(g4a.d_x, p.cfg.filters);

  Tensor<T> d_out6a = actback(tr.out6, std::move(d_out6));
  ConvGrads<T> g2b = conv3d_backward(tr.s2a_out, p.s2b_w, unsqueeze_depth(d_out6a),
                                     DepthPad::valid);
  Tensor<T> d_s2a = actback(tr.s2a_out, std::move(g2b.d_x));
  ConvGrads<T> g2a = conv3d_backward(tr.pool1.out, p.s2a_w, d_s2a, DepthPad::same,
                                     want_input_grads);
  Tensor<T> d_input1;
  if (want_input_grads) d_input1 = maxpool2x2_backward(tr.pool1, g2a.d_x);

  Tensor<T> d_s3 = actback(tr.s3_out, maxpool2x2_backward(tr.pool3, d_pool3));
  ConvGrads<T> g3 = conv2d_backward(tr.cat3, p.s3_w, d_s3);
  auto [d_input2, d_out2] = split_channels(g3.d_x, p.cfg.channels);

  Tensor<T> d_out2a = actback(tr.out2, std::move(d_out2));
  ConvGrads<T> g1 = conv3d_backward(tr.input1, p.s1_w, unsqueeze_depth(d_out2a),
                                    DepthPad::valid, want_input_grads);
  if (want_input_grads)
    for (size_t i = 0; i < d_input1.size(); ++i) d_input1.data[i] += g1.d_x.data[i];

  ModelGrads<T> out;
  out.g.cfg = p.cfg;
  out.g.s1_w = std::move(g1.d_w);
  out.g.s1_b = std::move(g1.d_b);
  out.g.s2a_w = std::move(g2a.d_w);
  out.g.s2a_b = std::move(g2a.d_b);
  out.g.s2b_w = std::move(g2b.d_w);
  out.g.s2b_b = std::move(g2b.d_b);
  out.g.s3_w = std::move(g3.d_w);
  out.g.s3_b = std::move(g3.d_b);
  out.g.s4a_w = std::move(g4a.d_w);
  out.g.s4a_b = std::move(g4a.d_b);
  out.g.s4b_w = std::move(g4b.d_w);
  out.g.s4b_b = std::move(g4b.d_b);
  out.d_input1 = std::move(d_input1);
  out.d_input2 = std::move(d_input2);
  return out;
}

template <typename T>
Tensor<T> gt_tensor(const Mask2D& m) {
  Tensor<T> t({m.rows, m.cols, 1});
  for (size_t i = 0; i < m.data.size(); ++i) t.data[i] = m.data[i] ? T(1) : T(0);
  return t;
}

// Background/foreground pixel ratio over a batch, clamped to [1, 500].
inline double positive_weight(const std::vector<const Mask2D*>& gts) {
  size_t pos = 0, total = 0;
  for (const Mask2D* m : gts) {
    pos += m->count();
    total += m->data.size();
  }
  if (pos == 0) return 500.0;
  return std::clamp(static_cast<double>(total - pos) / static_cast<double>(pos), 1.0, 500.0);
}

struct Hyperparams {
  double lr = 0.001;
  double momentum = 0.75;
  int batch_size = 8;
  int epochs = 100;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs between snapshot callbacks; 0 disables
};

struct TrainResult {
  ModelWeights weights;
  ModelWeights velocity;
  std::vector<double> loss_history;
};

inline Checkpoint to_checkpoint(const ModelWeights& w, const ModelWeights& vel) {
  Checkpoint cp;
  auto ws = w.tensors();
  for (int i = 0; i < 12; ++i) cp.put(kParamNames[i], *ws[i]);
  auto vs = vel.tensors();
  for (int i = 0; i < 12; ++i) cp.put(std::string("vel.") + kParamNames[i], *vs[i]);
  cp.meta["channels"] = std::to_string(w.cfg.channels);
  cp.meta["big_kernel"] = std::to_string(w.cfg.big_kernel);
  cp.meta["mid_kernel"] = std::to_string(w.cfg.mid_kernel);
  cp.meta["filters"] = std::to_string(w.cfg.filters);
  cp.meta["relu_hidden"] = w.cfg.relu_hidden ? "1" : "0";
  return cp;
}

// Shapes pin the architecture, so the config is recovered from the arrays
// themselves; only the activation flag needs the sidecar.
inline ModelConfig config_from_checkpoint(const Checkpoint& cp) {
  ModelConfig cfg;
  cfg.channels = cp.at("s1_conv.w").dim(3);
  cfg.mid_kernel = cp.at("s3_conv.w").dim(0);
  cfg.filters = cp.at("s3_conv.w").dim(3);
  cfg.big_kernel = cp.at("s4_conv_a.w").dim(0);
  auto it = cp.meta.find("relu_hidden");
  cfg.relu_hidden = it != cp.meta.end() && it->second == "1";
  return cfg;
}

inline ModelWeights weights_from_checkpoint(const Checkpoint& cp) {
  ModelConfig cfg = config_from_checkpoint(cp);
  ModelWeights w = zero_params<float>(cfg);
  auto ts = w.tensors();
  for (int i = 0; i < 12; ++i) {
    const Tensor<float>& stored = cp.at(kParamNames[i]);
    require(stored.dims == ts[i]->dims, errc::shape_mismatch,
            std::string(kParamNames[i]) + " shape");
    *ts[i] = stored;
  }
  return w;
}

inline ModelWeights velocity_from_checkpoint(const Checkpoint& cp, const ModelConfig& cfg) {
  ModelWeights v = zero_params<float>(cfg);
  auto ts = v.tensors();
  for (int i = 0; i < 12; ++i) {
    if (const Tensor<float>* stored = cp.find(std::string("vel.") + kParamNames[i])) {
      require(stored->dims == ts[i]->dims, errc::shape_mismatch, "velocity shape");
      *ts[i] = *stored;
    }
  }
  return v;
}

inline TrainResult train(
    const std::vector<SliceSample>& samples, const ModelConfig& cfg, const Hyperparams& hp,
    const std::function<void(int, const TrainResult&)>& snapshot = {}) {
  require(hp.lr >= 0.0 && hp.momentum >= 0.0 && hp.momentum < 1.0 && hp.batch_size >= 1 &&
              hp.epochs >= 1,
          errc::value_out_of_range, "hyperparams");
  bool any_pos = false;
  for (const SliceSample& s : samples) any_pos = any_pos || s.gt.count() > 0;
  require(any_pos, errc::no_positive_samples, "training needs cyst-bearing slices");

  TrainResult r;
  r.weights = init_params<float>(cfg, hp.seed);
  r.velocity = zero_params<float>(cfg);

  std::seed_seq sq{static_cast<std::uint32_t>(hp.seed), static_cast<std::uint32_t>(hp.seed >> 32),
                   0x5e6du};
  std::mt19937 shuffle_rng(sq);
  std::vector<int> order(samples.size());
  std::iota(order.begin(), order.end(), 0);

  const int n = static_cast<int>(samples.size());
  for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (int start = 0; start < n; start += hp.batch_size) {
      int count = std::min(hp.batch_size, n - start);
      std::vector<const Mask2D*> gts(count);
      for (int i = 0; i < count; ++i) gts[i] = &samples[order[start + i]].gt;
      double wp = positive_weight(gts);

      NetParams<float> grads = zero_params<float>(cfg);
      for (int i = 0; i < count; ++i) {
        const SliceSample& s = samples[order[start + i]];
        ForwardTrace<float> tr = model_forward(r.weights, s.input1, s.input2);
        auto [loss, d_prob] = weighted_bce(tr.prob, gt_tensor<float>(s.gt), wp);
        epoch_loss += loss;
        ModelGrads<float> mg = model_backward(r.weights, tr, d_prob, false);
        auto gs = grads.tensors();
        auto ms = mg.g.tensors();
        for (int t = 0; t < 12; ++t)
          for (size_t j = 0; j < gs[t]->size(); ++j) gs[t]->data[j] += ms[t]->data[j];
      }

      float inv = 1.0f / static_cast<float>(count);
      auto gs = grads.tensors();
      auto ws = r.weights.tensors();
      auto vs = r.velocity.tensors();
      for (int t = 0; t < 12; ++t) {
        for (float& x : gs[t]->data) x *= inv;
        sgd_nesterov_step(*ws[t], *gs[t], *vs[t], hp.lr, hp.momentum);
      }
    }
    r.loss_history.push_back(epoch_loss / n);
    if (snapshot && hp.checkpoint_every > 0 && epoch % hp.checkpoint_every == 0 &&
        epoch != hp.epochs)
      snapshot(epoch, r);
  }
  return r;
}

// Per-slice forward over a cake sequence; returns the stacked probability
// maps as a volume at half the cake resolution.
inline Volume infer_volume(const ModelWeights& w, const std::vector<GmpCake>& cakes) {
  require(!cakes.empty(), errc::empty_volume, "no cakes");
  const int Z = static_cast<int>(cakes.size());
  Volume out;
  for (int z = 0; z < Z; ++z) {
    SliceSample s = assemble_inputs(cakes, z);
    ForwardTrace<float> tr = model_forward(w, std::move(s.input1), std::move(s.input2));
    if (z == 0) out = Volume(tr.prob.dim(0), tr.prob.dim(1), Z);
    Image2D m = prob_map(tr);
    out.set_slice(z, m);
  }
  return out;
}

}  // namespace gmpseg
