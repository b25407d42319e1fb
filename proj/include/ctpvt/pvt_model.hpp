#pragma once

// Four-stage pyramid vision transformer with a scalar regression head.
//
// Stage i: overlapping patch embedding (strided conv, kernel > stride, then
// LayerNorm) followed by depth_i pre-norm transformer blocks. Each block runs
// spatial-reduction attention (keys/values from an R×R strided-conv reduced
// grid) and a convolutional feed-forward (linear, 3×3 depthwise conv, GELU,
// linear). After stage 4 the tokens are normalized, averaged and mapped to one
// unbounded score per image.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ctpvt/checkpoint.hpp"
#include "ctpvt/error.hpp"
#include "ctpvt/ops.hpp"
#include "ctpvt/pvt_config.hpp"
#include "ctpvt/rng.hpp"
#include "ctpvt/tensor.hpp"

namespace ctpvt {

template <class T>
struct NamedParameter {
  std::string name;
  BasicTensor<T> tensor;
};

template <class T>
using ParameterList = std::vector<NamedParameter<T>>;

namespace init {

inline double truncated_normal(Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (;;) {
    const double v = dist(rng);
    if (std::abs(v) <= 2.0 * stddev) return v;
  }
}

template <class T>
BasicTensor<T> trunc_normal(Shape shape, Rng& rng, double stddev = 0.02) {
  BasicTensor<T> t(std::move(shape));
  for (T& v : t.mutable_data()) v = static_cast<T>(truncated_normal(rng, stddev));
  return t.set_requires_grad();
}

/// Normal with std sqrt(2 / fan_out), fan_out = kh·kw·out_channels / groups.
template <class T>
BasicTensor<T> conv_fan_out(Shape shape, std::size_t groups, Rng& rng) {
  const double fan_out = static_cast<double>(shape[0] * shape[2] * shape[3]) / static_cast<double>(groups);
  BasicTensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_out));
  for (T& v : t.mutable_data()) v = static_cast<T>(dist(rng));
  return t.set_requires_grad();
}

template <class T>
BasicTensor<T> constant(Shape shape, T value) {
  return BasicTensor<T>(std::move(shape), value).set_requires_grad();
}

}  // namespace init

template <class T>
struct Linear {
  BasicTensor<T> weight;  // [out × in]
  BasicTensor<T> bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng)
      : weight(init::trunc_normal<T>({out, in}, rng)), bias(init::constant<T>({out}, T(0))) {}

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return linear(x, weight, bias); }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

template <class T>
struct LayerNorm {
  BasicTensor<T> weight;
  BasicTensor<T> bias;
  double eps = 1e-6;

  LayerNorm() = default;
  LayerNorm(std::size_t dim, double eps_)
      : weight(init::constant<T>({dim}, T(1))), bias(init::constant<T>({dim}, T(0))), eps(eps_) {}

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return layer_norm(x, weight, bias, eps); }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

template <class T>
struct Conv2d {
  BasicTensor<T> weight;  // [out × in/groups × k × k]
  BasicTensor<T> bias;
  Conv2dOptions options;

  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, Conv2dOptions opt, Rng& rng)
      : weight(init::conv_fan_out<T>({out, in / opt.groups, kernel, kernel}, opt.groups, rng)),
        bias(init::constant<T>({out}, T(0))),
        options(opt) {}

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return conv2d(x, weight, bias, options); }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

template <class T>
struct PatchTokens {
  BasicTensor<T> tokens;  // [N × H·W × D]
  std::size_t height = 0;
  std::size_t width = 0;
};

/// Strided convolution with kernel > stride, flattened to tokens, then LayerNorm.
template <class T>
struct OverlapPatchEmbed {
  Conv2d<T> proj;
  LayerNorm<T> norm;

  OverlapPatchEmbed() = default;
  OverlapPatchEmbed(std::size_t in_channels, std::size_t dim, std::size_t kernel, std::size_t stride,
                    std::size_t padding, double eps, Rng& rng)
      : proj(in_channels, dim, kernel, {stride, padding, 1}, rng), norm(dim, eps) {
    if (kernel <= stride) throw config_error("patch embedding needs kernel > stride for overlap");
    if (padding != kernel / 2) throw config_error("patch embedding padding must be kernel/2");
  }

  PatchTokens<T> forward(const BasicTensor<T>& x) const {
    BasicTensor<T> grid = proj(x);
    const std::size_t h = grid.extent(2), w = grid.extent(3);
    return {norm(grid_to_tokens(grid)), h, w};
  }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    proj.collect(out, prefix + ".proj");
    norm.collect(out, prefix + ".norm");
  }
};

/// Multi-head attention whose keys and values come from the token grid
/// downsampled by an R×R stride-R convolution (plus LayerNorm). With R = 1 no
/// reduction is applied and this is ordinary multi-head self-attention.
template <class T>
struct SrAttention {
  std::size_t dim = 0;
  std::size_t heads = 1;
  std::size_t sr_ratio = 1;
  Linear<T> q, k, v, proj;
  Conv2d<T> sr;
  LayerNorm<T> sr_norm;

  SrAttention() = default;
  SrAttention(std::size_t dim_, std::size_t heads_, std::size_t sr_ratio_, double eps, Rng& rng)
      : dim(dim_), heads(heads_), sr_ratio(sr_ratio_) {
    if (heads == 0 || dim % heads != 0) throw config_error("attention dim not divisible by heads");
    if (sr_ratio == 0) throw config_error("sr_ratio must be positive");
    q = Linear<T>(dim, dim, rng);
    k = Linear<T>(dim, dim, rng);
    v = Linear<T>(dim, dim, rng);
    if (sr_ratio > 1) {
      sr = Conv2d<T>(dim, dim, sr_ratio, {sr_ratio, 0, 1}, rng);
      sr_norm = LayerNorm<T>(dim, eps);
    }
    proj = Linear<T>(dim, dim, rng);
  }

  std::size_t head_dim() const { return dim / heads; }

  /// x: [N × H·W × D]. When `attention` is non-null it receives the
  /// probabilities, shaped [N·heads × L × L/R²].
  BasicTensor<T> forward(const BasicTensor<T>& x, std::size_t height, std::size_t width,
                         BasicTensor<T>* attention = nullptr) const {
    if (x.rank() != 3 || x.extent(1) != height * width || x.extent(2) != dim) {
      throw shape_error("sr_attention: tokens " + shape_string(x.shape()) + " do not match grid " +
                        std::to_string(height) + "x" + std::to_string(width) + " of width " +
                        std::to_string(dim));
    }
    if (height % sr_ratio != 0 || width % sr_ratio != 0) {
      throw shape_error("sr_attention: sr_ratio " + std::to_string(sr_ratio) +
                        " does not divide the grid " + std::to_string(height) + "x" +
                        std::to_string(width));
    }
    const std::size_t n = x.extent(0), len = x.extent(1), dh = head_dim();
    BasicTensor<T> source = x;
    if (sr_ratio > 1) source = sr_norm(grid_to_tokens(sr(tokens_to_grid(x, height, width))));
    const std::size_t kv_len = source.extent(1);

    auto split = [&](const BasicTensor<T>& t, std::size_t l) {
      return reshape(permute(reshape(t, {n, l, heads, dh}), {0, 2, 1, 3}), {n * heads, l, dh});
    };
    const BasicTensor<T> qh = scale(split(q(x), len), static_cast<T>(1.0 / std::sqrt(double(dh))));
    const BasicTensor<T> kh = split(k(source), kv_len);
    const BasicTensor<T> vh = split(v(source), kv_len);
    BasicTensor<T> probs = softmax(bmm(qh, kh, /*transpose_rhs=*/true), 2);
    if (attention) *attention = probs;
    BasicTensor<T> ctx = bmm(probs, vh);
    ctx = reshape(permute(reshape(ctx, {n, heads, len, dh}), {0, 2, 1, 3}), {n, len, dim});
    return proj(ctx);
  }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    q.collect(out, prefix + ".q");
    k.collect(out, prefix + ".k");
    v.collect(out, prefix + ".v");
    if (sr_ratio > 1) {
      sr.collect(out, prefix + ".sr");
      sr_norm.collect(out, prefix + ".sr_norm");
    }
    proj.collect(out, prefix + ".proj");
  }
};

/// Linear D→mD, 3×3 depthwise conv on the grid, GELU, linear mD→D.
template <class T>
struct ConvFfn {
  Linear<T> fc1;
  Conv2d<T> dwconv;
  Linear<T> fc2;

  ConvFfn() = default;
  ConvFfn(std::size_t dim, std::size_t mlp_ratio, Rng& rng)
      : fc1(dim, dim * mlp_ratio, rng),
        dwconv(dim * mlp_ratio, dim * mlp_ratio, 3, {1, 1, dim * mlp_ratio}, rng),
        fc2(dim * mlp_ratio, dim, rng) {}

  BasicTensor<T> forward(const BasicTensor<T>& x, std::size_t height, std::size_t width) const {
    BasicTensor<T> h = fc1(x);
    h = grid_to_tokens(dwconv(tokens_to_grid(h, height, width)));
    return fc2(gelu(h));
  }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    fc1.collect(out, prefix + ".fc1");
    dwconv.collect(out, prefix + ".dwconv");
    fc2.collect(out, prefix + ".fc2");
  }
};

/// Pre-norm residual block: x + attn(LN(x)), then x + ffn(LN(x)).
template <class T>
struct TransformerBlock {
  LayerNorm<T> norm1;
  SrAttention<T> attn;
  LayerNorm<T> norm2;
  ConvFfn<T> ffn;

  TransformerBlock() = default;
  TransformerBlock(std::size_t dim, std::size_t heads, std::size_t sr_ratio, std::size_t mlp_ratio,
                   double eps, Rng& rng)
      : norm1(dim, eps), attn(dim, heads, sr_ratio, eps, rng), norm2(dim, eps), ffn(dim, mlp_ratio, rng) {}

  BasicTensor<T> forward(const BasicTensor<T>& x, std::size_t height, std::size_t width) const {
    BasicTensor<T> y = add(x, attn.forward(norm1(x), height, width));
    return add(y, ffn.forward(norm2(y), height, width));
  }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    norm1.collect(out, prefix + ".norm1");
    attn.collect(out, prefix + ".attn");
    norm2.collect(out, prefix + ".norm2");
    ffn.collect(out, prefix + ".ffn");
  }
};

template <class T>
struct PvtStage {
  OverlapPatchEmbed<T> embed;
  std::vector<TransformerBlock<T>> blocks;
};

/// Feature map produced by one stage: [N × C_i × H_i × W_i].
template <class T>
struct StageOutput {
  BasicTensor<T> feature_map;
};

/// The full classifier. Weights are shared handles: copying the model shares
/// them, clone() deep-copies.
template <class T>
class PvtClassifier {
 public:
  PvtClassifier(const PvtConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(derive_seed(seed, "init"));
    std::size_t in = config_.input_channels;
    for (std::size_t i = 0; i < kStages; ++i) {
      PvtStage<T> stage;
      stage.embed = OverlapPatchEmbed<T>(in, config_.embed_dims[i], config_.patch_kernels[i],
                                         config_.patch_strides[i], config_.patch_paddings[i],
                                         config_.norm_eps, rng);
      for (std::size_t b = 0; b < config_.depths[i]; ++b) {
        stage.blocks.emplace_back(config_.embed_dims[i], config_.num_heads[i], config_.sr_ratios[i],
                                  config_.mlp_ratios[i], config_.norm_eps, rng);
      }
      stages_.push_back(std::move(stage));
      in = config_.embed_dims[i];
    }
    norm_ = LayerNorm<T>(in, config_.norm_eps);
    head_ = Linear<T>(in, 1, rng);
  }

  const PvtConfig& config() const { return config_; }
  const std::vector<PvtStage<T>>& stages() const { return stages_; }
  std::vector<PvtStage<T>>& stages() { return stages_; }

  /// One unbounded score per image: x[N × C × R × R] → [N].
  BasicTensor<T> forward(const BasicTensor<T>& x) const {
    BasicTensor<T> tokens = run_stages(x, nullptr);
    BasicTensor<T> pooled = token_mean(norm_(tokens));
    return reshape(head_(pooled), {x.extent(0)});
  }

  /// Per-stage feature maps (stage 4 before the final norm).
  std::vector<StageOutput<T>> forward_stages(const BasicTensor<T>& x) const {
    std::vector<StageOutput<T>> out;
    run_stages(x, &out);
    return out;
  }

  ParameterList<T> named_parameters() const {
    ParameterList<T> out;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      const std::string prefix = "stage" + std::to_string(i + 1);
      stages_[i].embed.collect(out, prefix + ".patch_embed");
      for (std::size_t b = 0; b < stages_[i].blocks.size(); ++b)
        stages_[i].blocks[b].collect(out, prefix + ".block" + std::to_string(b + 1));
    }
    norm_.collect(out, "norm");
    head_.collect(out, "head");
    return out;
  }

  std::vector<BasicTensor<T>> parameters() const {
    std::vector<BasicTensor<T>> out;
    for (auto& p : named_parameters()) out.push_back(p.tensor);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& p : named_parameters()) total += p.tensor.numel();
    return total;
  }

  void zero_grad() const {
    for (const auto& p : named_parameters()) p.tensor.zero_grad();
  }

  /// Overwrites every parameter from name-matched values of identical shape.
  template <class U>
  void load_values(const std::vector<std::pair<std::string, BasicTensor<U>>>& values) {
    std::map<std::string, const BasicTensor<U>*> by_name;
    for (const auto& [name, tensor] : values) {
      if (!by_name.emplace(name, &tensor).second) throw format_error("duplicate parameter '" + name + "'");
    }
    auto params = named_parameters();
    if (by_name.size() != params.size()) {
      throw format_error("parameter count mismatch: model has " + std::to_string(params.size()) +
                         ", source has " + std::to_string(by_name.size()));
    }
    for (auto& p : params) {
      auto it = by_name.find(p.name);
      if (it == by_name.end()) throw format_error("missing parameter '" + p.name + "'");
      if (it->second->shape() != p.tensor.shape()) {
        throw format_error("parameter '" + p.name + "' has shape " +
                           shape_string(it->second->shape()) + ", model expects " +
                           shape_string(p.tensor.shape()));
      }
    }
    for (auto& p : params) {
      auto dst = p.tensor.mutable_data();
      auto src = by_name.at(p.name)->data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src[i]);
    }
  }

  /// Deep copy with independent weights.
  PvtClassifier clone() const {
    PvtClassifier copy = *this;
    copy.deep_copy_parameters();
    return copy;
  }

 private:
  BasicTensor<T> run_stages(const BasicTensor<T>& x, std::vector<StageOutput<T>>* outputs) const {
    const std::size_t res = config_.input_resolution;
    if (x.rank() != 4 || x.extent(1) != config_.input_channels || x.extent(2) != res ||
        x.extent(3) != res) {
      throw shape_error("backbone expects [N x " + std::to_string(config_.input_channels) + " x " +
                        std::to_string(res) + " x " + std::to_string(res) + "], got " +
                        shape_string(x.shape()));
    }
    BasicTensor<T> grid = x;
    BasicTensor<T> tokens;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      PatchTokens<T> pt = stages_[i].embed.forward(grid);
      tokens = pt.tokens;
      for (const auto& block : stages_[i].blocks) tokens = block.forward(tokens, pt.height, pt.width);
      if (outputs != nullptr || i + 1 < stages_.size()) grid = tokens_to_grid(tokens, pt.height, pt.width);
      if (outputs) outputs->push_back({grid});
    }
    return tokens;
  }

  template <class Fn>
  void for_each_parameter(Fn&& fn) {
    auto visit_linear = [&](Linear<T>& l) { fn(l.weight), fn(l.bias); };
    auto visit_norm = [&](LayerNorm<T>& l) { fn(l.weight), fn(l.bias); };
    auto visit_conv = [&](Conv2d<T>& l) { fn(l.weight), fn(l.bias); };
    for (auto& stage : stages_) {
      visit_conv(stage.embed.proj);
      visit_norm(stage.embed.norm);
      for (auto& b : stage.blocks) {
        visit_norm(b.norm1);
        visit_linear(b.attn.q);
        visit_linear(b.attn.k);
        visit_linear(b.attn.v);
        if (b.attn.sr_ratio > 1) {
          visit_conv(b.attn.sr);
          visit_norm(b.attn.sr_norm);
        }
        visit_linear(b.attn.proj);
        visit_norm(b.norm2);
        visit_linear(b.ffn.fc1);
        visit_conv(b.ffn.dwconv);
        visit_linear(b.ffn.fc2);
      }
    }
    visit_norm(norm_);
    visit_linear(head_);
  }

  void deep_copy_parameters() {
    for_each_parameter([](BasicTensor<T>& t) { t = t.clone(); });
  }

  PvtConfig config_;
  std::vector<PvtStage<T>> stages_;
  LayerNorm<T> norm_;
  Linear<T> head_;
};

/// Checkpoint entries for a float model, in parameter order.
inline std::vector<NamedTensor> checkpoint_entries(const PvtClassifier<float>& model) {
  std::vector<NamedTensor> out;
  for (const auto& p : model.named_parameters()) out.push_back({p.name, p.tensor});
  return out;
}

inline void load_checkpoint_entries(PvtClassifier<float>& model, const std::vector<NamedTensor>& entries) {
  std::vector<std::pair<std::string, Tensor>> values;
  for (const auto& e : entries) values.emplace_back(e.name, e.tensor);
  model.load_values(values);
}

/// Estimated floating-point operations of one spatial-reduction attention
/// forward over L tokens of width D with reduction ratio R (batch 1):
///   scores + weighted sum:   2 · L · (L/R²) · D · 2
///   q and output projection: 2 · 2 · L · D²
///   k and v projection:      2 · 2 · (L/R²) · D²
///   reduction conv (R > 1):  2 · (L/R²) · D² · R²
inline double count_flops_attention(double tokens, double dim, double sr_ratio) {
  const double kv = tokens / (sr_ratio * sr_ratio);
  double flops = 2.0 * tokens * kv * dim * 2.0;
  flops += 4.0 * tokens * dim * dim;
  flops += 4.0 * kv * dim * dim;
  if (sr_ratio > 1.0) flops += 2.0 * kv * dim * dim * sr_ratio * sr_ratio;
  return flops;
}

}  // namespace ctpvt
