#pragma once

// Decoder-only transformer used as the frozen language-model backbone:
// learned absolute positions, pre-layernorm blocks with causal multi-head
// attention and a GELU MLP, final layernorm. Every parameter is created with
// requires_grad=false; gradients still flow through it to upstream inputs.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "stocktime/nn.hpp"
#include "stocktime/rng.hpp"
#include "stocktime/tensor.hpp"

namespace stocktime {

struct BackboneConfig {
  std::size_t d_llm = 64;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t ff_dim = 256;
  std::size_t max_positions = 128;
  std::size_t vocab_size = 512;
  std::uint64_t seed = 1234;
  std::optional<std::string> weights_path;

  void validate() const {
    if (d_llm == 0 || num_heads == 0 || d_llm % num_heads != 0) {
      throw std::invalid_argument("backbone: d_llm=" + std::to_string(d_llm) + " must be a positive multiple of num_heads=" +
                                  std::to_string(num_heads));
    }
    if (num_layers == 0) throw std::invalid_argument("backbone: num_layers must be >= 1");
    if (ff_dim == 0 || max_positions == 0 || vocab_size == 0) {
      throw std::invalid_argument("backbone: ff_dim, max_positions and vocab_size must be positive");
    }
  }
};

class SequenceTooLong : public std::length_error {
 public:
  using std::length_error::length_error;
};

class FrozenBackbone {
 public:
  struct Block {
    Tensor ln1_gain, ln1_bias;
    Linear qkv;  // d -> 3d
    Linear attn_out;
    Tensor ln2_gain, ln2_bias;
    Linear fc1;  // d -> ff
    Linear fc2;  // ff -> d
  };

  FrozenBackbone() = default;

  /// Seeded random initialization: token table N(0,1), positions N(0,0.1),
  /// affine maps uniform(+-1/sqrt(fan_in)), layernorm gain 1 / bias 0.
  static FrozenBackbone init(const BackboneConfig& cfg) {
    cfg.validate();
    FrozenBackbone b;
    b.cfg_ = cfg;
    Rng rng(cfg.seed);
    const std::size_t d = cfg.d_llm;
    b.token_table_ = normal_init({cfg.vocab_size, d}, 1.0, rng, false);
    b.positions_ = normal_init({cfg.max_positions, d}, 0.1, rng, false);
    for (std::size_t i = 0; i < cfg.num_layers; ++i) {
      Block blk;
      blk.ln1_gain = Tensor::full({d}, 1.0);
      blk.ln1_bias = Tensor::zeros({d});
      blk.qkv = Linear::init(d, 3 * d, rng, false);
      blk.attn_out = Linear::init(d, d, rng, false);
      blk.ln2_gain = Tensor::full({d}, 1.0);
      blk.ln2_bias = Tensor::zeros({d});
      blk.fc1 = Linear::init(d, cfg.ff_dim, rng, false);
      blk.fc2 = Linear::init(cfg.ff_dim, d, rng, false);
      b.blocks_.push_back(std::move(blk));
    }
    b.lnf_gain_ = Tensor::full({d}, 1.0);
    b.lnf_bias_ = Tensor::zeros({d});
    return b;
  }

  const BackboneConfig& config() const { return cfg_; }
  std::size_t d_model() const { return cfg_.d_llm; }

  /// x: [B, n, d] token embeddings -> [B, n, d] output representations.
  Tensor forward(const Tensor& x) const {
    if (x.rank() != 3 || x.dim(2) != cfg_.d_llm) {
      throw ShapeError("backbone: expected [B,n," + std::to_string(cfg_.d_llm) + "] input, got " + shape_str(x.shape()));
    }
    const std::size_t n = x.dim(1);
    if (n > cfg_.max_positions) {
      throw SequenceTooLong("backbone: sequence of " + std::to_string(n) + " tokens exceeds max_positions=" +
                            std::to_string(cfg_.max_positions));
    }
    Tensor h = add(x, slice(positions_, 0, 0, n));
    const Tensor mask = causal_mask(n);
    for (const auto& blk : blocks_) {
      h = add(h, attention(blk, affine_norm(h, blk.ln1_gain, blk.ln1_bias), mask));
      const Tensor m = affine_norm(h, blk.ln2_gain, blk.ln2_bias);
      h = add(h, blk.fc2(gelu(blk.fc1(m))));
    }
    return affine_norm(h, lnf_gain_, lnf_bias_);
  }

  /// Token ids -> [1, T, d] rows of the token table.
  Tensor embed_tokens(std::span<const std::size_t> ids) const {
    const Tensor e = embedding(token_table_, ids);
    return reshape(e, {1, ids.size(), cfg_.d_llm});
  }

  ParamList parameters() const {
    ParamList out;
    out.push_back({"backbone.token_table", token_table_});
    out.push_back({"backbone.positions", positions_});
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const auto p = "backbone.block." + std::to_string(i);
      const auto& b = blocks_[i];
      out.push_back({p + ".ln1.gain", b.ln1_gain});
      out.push_back({p + ".ln1.bias", b.ln1_bias});
      b.qkv.collect(p + ".qkv", out);
      b.attn_out.collect(p + ".attn_out", out);
      out.push_back({p + ".ln2.gain", b.ln2_gain});
      out.push_back({p + ".ln2.bias", b.ln2_bias});
      b.fc1.collect(p + ".fc1", out);
      b.fc2.collect(p + ".fc2", out);
    }
    out.push_back({"backbone.lnf.gain", lnf_gain_});
    out.push_back({"backbone.lnf.bias", lnf_bias_});
    return out;
  }

  /// FNV-1a over parameter names and raw value bytes.
  std::uint64_t checksum() const {
    std::uint64_t h = fnv1a("");
    for (const auto& [name, t] : parameters()) {
      h = fnv1a(name, h);
      const auto v = t.values();
      h = fnv1a(std::string_view(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double)), h);
    }
    return h;
  }

 private:
  static Tensor affine_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    return add(mul(layernorm_last(x, 1e-5), gain), bias);
  }

  static Tensor causal_mask(std::size_t n) {
    std::vector<double> m(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = -std::numeric_limits<double>::infinity();
    return Tensor::from({n, n}, std::move(m));
  }

  Tensor attention(const Block& blk, const Tensor& x, const Tensor& mask) const {
    const std::size_t d = cfg_.d_llm;
    const std::size_t heads = cfg_.num_heads;
    const std::size_t dh = d / heads;
    const double scale = std::sqrt(static_cast<double>(dh));
    const Tensor qkv = blk.qkv(x);
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      const Tensor q = slice_last(qkv, h * dh, dh);
      const Tensor k = slice_last(qkv, d + h * dh, dh);
      const Tensor v = slice_last(qkv, 2 * d + h * dh, dh);
      const Tensor scores = add(div_scalar(matmul(q, transpose_last_two(k)), scale), mask);
      outs.push_back(matmul(softmax_last(scores), v));
    }
    return blk.attn_out(heads == 1 ? outs[0] : concat_last(outs));
  }

  BackboneConfig cfg_;
  Tensor token_table_;
  Tensor positions_;
  std::vector<Block> blocks_;
  Tensor lnf_gain_, lnf_bias_;
};

}  // namespace stocktime
