#pragma once

// The forecasting model: patch encoder -> (+ context embedding) -> frozen
// backbone -> projection to the next patch, with autoregressive rollout for
// arbitrary horizons.

#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "stocktime/backbone.hpp"
#include "stocktime/checkpoint.hpp"
#include "stocktime/context.hpp"
#include "stocktime/data.hpp"
#include "stocktime/nn.hpp"
#include "stocktime/patcher.hpp"
#include "stocktime/tensor.hpp"

namespace stocktime {

enum class EncoderKind { lstm, mlp, linear, none };

inline std::optional<EncoderKind> parse_encoder_kind(std::string_view s) {
  if (s == "lstm") return EncoderKind::lstm;
  if (s == "mlp") return EncoderKind::mlp;
  if (s == "linear") return EncoderKind::linear;
  if (s == "none") return EncoderKind::none;
  return std::nullopt;
}

inline std::string_view to_string(EncoderKind k) {
  switch (k) {
    case EncoderKind::lstm: return "lstm";
    case EncoderKind::mlp: return "mlp";
    case EncoderKind::linear: return "linear";
    case EncoderKind::none: return "none";
  }
  return "?";
}

enum class FusionMode { add, concat_project };

inline std::optional<FusionMode> parse_fusion_mode(std::string_view s) {
  if (s == "add") return FusionMode::add;
  if (s == "concat-project") return FusionMode::concat_project;
  return std::nullopt;
}

inline std::string_view to_string(FusionMode m) { return m == FusionMode::add ? "add" : "concat-project"; }

struct EncoderConfig {
  EncoderKind kind = EncoderKind::lstm;
  std::size_t hidden_dim = 256;
  std::size_t num_layers = 2;
  std::size_t d_llm = 64;

  void validate() const {
    if (kind == EncoderKind::none) {
      throw std::invalid_argument("encoder kind 'none' has no l -> d_llm adapter; use 'linear' for the encoder-free variant");
    }
    if (kind == EncoderKind::lstm && num_layers < 1) throw std::invalid_argument("lstm encoder needs num_layers >= 1");
    if ((kind == EncoderKind::lstm || kind == EncoderKind::mlp) && hidden_dim == 0) {
      throw std::invalid_argument("encoder hidden_dim must be positive");
    }
    if (d_llm == 0) throw std::invalid_argument("encoder d_llm must be positive");
  }
};

struct ModelConfig {
  std::size_t patch_len = 8;
  EncoderConfig encoder;
  BackboneConfig backbone;
  bool fusion_enabled = true;
  FusionMode fusion = FusionMode::add;
  bool stats_on_raw = false;
  bool rollout_context = true;
  std::uint64_t seed = 42;  // trainable initialization

  void validate() const {
    if (patch_len < 2) throw std::invalid_argument("patch_len must be >= 2");
    encoder.validate();
    backbone.validate();
    if (encoder.d_llm != backbone.d_llm) {
      throw std::invalid_argument("encoder output " + std::to_string(encoder.d_llm) + " != backbone d_llm " +
                                  std::to_string(backbone.d_llm));
    }
  }
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Maps patches [N, l] to price embeddings [N, d_llm].
class PatchEncoder {
 public:
  PatchEncoder() = default;

  static PatchEncoder init(const EncoderConfig& cfg, std::size_t patch_len, Rng& rng) {
    cfg.validate();
    PatchEncoder e;
    e.cfg_ = cfg;
    e.patch_len_ = patch_len;
    switch (cfg.kind) {
      case EncoderKind::lstm:
        e.lstm_ = Lstm::init(1, cfg.hidden_dim, cfg.num_layers, rng);
        e.head_ = Linear::init(cfg.hidden_dim, cfg.d_llm, rng);
        break;
      case EncoderKind::mlp:
        e.hidden_ = Linear::init(patch_len, cfg.hidden_dim, rng);
        e.head_ = Linear::init(cfg.hidden_dim, cfg.d_llm, rng);
        break;
      case EncoderKind::linear:
        e.head_ = Linear::init(patch_len, cfg.d_llm, rng);
        break;
      case EncoderKind::none:
        break;
    }
    return e;
  }

  const EncoderConfig& config() const { return cfg_; }
  std::size_t patch_len() const { return patch_len_; }

  Tensor forward(const Tensor& patches) const {
    if (patches.rank() != 2 || patches.dim(1) != patch_len_) {
      throw ShapeError("encoder: expected [N," + std::to_string(patch_len_) + "] patches, got " +
                       shape_str(patches.shape()));
    }
    for (double v : patches.values()) {
      if (std::isnan(v)) throw NumericError("encoder: NaN in patch input");
    }
    switch (cfg_.kind) {
      case EncoderKind::lstm: {
        // Each patch is read as l scalar time steps; the last layer's final
        // hidden state feeds the fully connected head.
        const auto states = lstm_.run(columns_as_steps(patches));
        return head_(states.back());
      }
      case EncoderKind::mlp:
        return head_(tanh(hidden_(patches)));
      case EncoderKind::linear:
        return head_(patches);
      case EncoderKind::none:
        break;
    }
    throw std::logic_error("encoder: kind none cannot encode");
  }

  ParamList parameters() const {
    ParamList out;
    if (cfg_.kind == EncoderKind::lstm) lstm_.collect("encoder.lstm", out);
    if (cfg_.kind == EncoderKind::mlp) hidden_.collect("encoder.hidden", out);
    if (head_.defined()) head_.collect("encoder.head", out);
    return out;
  }

 private:
  EncoderConfig cfg_;
  std::size_t patch_len_ = 0;
  Lstm lstm_;
  Linear hidden_;
  Linear head_;
};

/// Trainable encoder + projection around a shared frozen backbone.
class ModelBundle {
 public:
  /// Seeded construction. The backbone comes from `cfg.backbone.seed`, or
  /// from `weights_path` (backbone.* tensors in checkpoint format) when set.
  static ModelBundle create(const ModelConfig& cfg) {
    cfg.validate();
    ModelBundle m;
    m.cfg_ = cfg;
    auto backbone = FrozenBackbone::init(cfg.backbone);
    if (cfg.backbone.weights_path && !cfg.backbone.weights_path->empty()) {
      assign_parameters(backbone.parameters(), read_checkpoint(*cfg.backbone.weights_path), "backbone.");
    }
    m.backbone_ = std::make_shared<const FrozenBackbone>(std::move(backbone));
    Rng rng(cfg.seed);
    m.encoder_ = PatchEncoder::init(cfg.encoder, cfg.patch_len, rng);
    if (cfg.fusion == FusionMode::concat_project) m.fuse_proj_ = Linear::init(2 * cfg.backbone.d_llm, cfg.backbone.d_llm, rng);
    m.proj_ = Linear::init(cfg.backbone.d_llm, cfg.patch_len, rng);
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  std::size_t patch_len() const { return cfg_.patch_len; }
  std::size_t d_llm() const { return cfg_.backbone.d_llm; }

  const FrozenBackbone& backbone() const { return *backbone_; }
  std::shared_ptr<const FrozenBackbone> backbone_ptr() const { return backbone_; }
  const PatchEncoder& encoder() const { return encoder_; }
  const Linear& projection() const { return proj_; }
  const Linear& fusion_projection() const { return fuse_proj_; }

  ParamList trainable_parameters() const {
    ParamList out = encoder_.parameters();
    if (fuse_proj_.defined()) fuse_proj_.collect("encoder.fuse", out);
    proj_.collect("proj", out);
    return out;
  }
  ParamList backbone_parameters() const { return backbone_->parameters(); }
  ParamList all_parameters() const {
    ParamList out = backbone_parameters();
    for (auto& p : trainable_parameters()) out.push_back(std::move(p));
    return out;
  }

  std::uint64_t backbone_checksum() const { return backbone_->checksum(); }

  /// Fresh vocabulary-aware context embedder over this bundle's backbone.
  ContextEmbedder make_embedder(const Vocabulary& vocab) const { return ContextEmbedder(backbone_, vocab); }

 private:
  ModelConfig cfg_;
  std::shared_ptr<const FrozenBackbone> backbone_;
  PatchEncoder encoder_;
  Linear fuse_proj_;
  Linear proj_;
};

inline Vocabulary vocabulary_for(const Dataset& ds, std::size_t capacity) {
  Vocabulary v(capacity);
  for (const auto& [ticker, s] : ds) v.add_ticker(ticker);
  return v;
}

// ---------------------------------------------------------------------------
// Single-vector operations

inline std::vector<double> encode_patch(std::span<const double> patch, const ModelBundle& m) {
  if (patch.size() != m.patch_len()) {
    throw ShapeError("encode_patch: patch length " + std::to_string(patch.size()) + " != configured l=" +
                     std::to_string(m.patch_len()));
  }
  NoGradScope no_grad;
  return m.encoder().forward(Tensor::from({1, patch.size()}, {patch.begin(), patch.end()})).to_vector();
}

/// e = pe + ce when fusion is enabled, else e = pe.
inline std::vector<double> fuse(std::span<const double> pe, std::span<const double> ce, bool fusion_enabled) {
  if (!fusion_enabled) return {pe.begin(), pe.end()};
  if (pe.size() != ce.size()) {
    throw ShapeError("fuse: price embedding length " + std::to_string(pe.size()) + " != context embedding length " +
                     std::to_string(ce.size()));
  }
  std::vector<double> e(pe.size());
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = pe[i] + ce[i];
  return e;
}

inline std::vector<std::vector<double>> backbone_forward(const std::vector<std::vector<double>>& tokens,
                                                         const ModelBundle& m) {
  const std::size_t d = m.d_llm();
  std::vector<double> flat;
  for (const auto& t : tokens) {
    if (t.size() != d) throw ShapeError("backbone_forward: token of length " + std::to_string(t.size()));
    flat.insert(flat.end(), t.begin(), t.end());
  }
  NoGradScope no_grad;
  const Tensor out = m.backbone().forward(Tensor::from({1, tokens.size(), d}, std::move(flat)));
  std::vector<std::vector<double>> rows(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    rows[i].assign(out.values().begin() + static_cast<std::ptrdiff_t>(i * d),
                   out.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
  }
  return rows;
}

inline std::vector<double> project(std::span<const double> o, const ModelBundle& m) {
  NoGradScope no_grad;
  return m.projection()(Tensor::from({1, o.size()}, {o.begin(), o.end()})).to_vector();
}

// ---------------------------------------------------------------------------
// Context for windows

struct SeriesMeta {
  std::string ticker;
  std::string sector = "unknown";
  Frequency frequency = Frequency::daily;
};

/// One template per patch of `normalized` (or of `raw` when stats_on_raw).
inline std::vector<std::string> patch_templates(std::span<const double> normalized, std::span<const double> raw,
                                                std::span<const Timestamp> ts, std::size_t patch_len,
                                                const SeriesMeta& meta, bool stats_on_raw) {
  check_patchable(normalized.size(), patch_len);
  std::vector<std::string> out;
  const auto values = stats_on_raw ? raw : normalized;
  for (std::size_t i = 0; i < normalized.size(); i += patch_len) {
    const auto st = compute_patch_stats(values.subspan(i, patch_len), ts[i], ts[i + patch_len - 1]);
    out.push_back(render_template(st, meta.ticker, meta.sector, meta.frequency));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batched forward

struct Batch {
  std::size_t size = 0;
  std::size_t patches = 0;        // n
  Tensor inputs;                  // [B, n, l] normalized
  Tensor context;                 // [B, n, d] or undefined when fusion is off
  Tensor next_patch;              // [B, 1, l] normalized h_{n+1}; undefined if horizon < l
  std::vector<RevinStats> stats;
};

inline Batch make_batch(const std::vector<const Window*>& windows, const ModelBundle& m, ContextEmbedder* embedder) {
  Batch b;
  b.size = windows.size();
  if (windows.empty()) return b;
  const std::size_t l = m.patch_len();
  const std::size_t d = windows.front()->input.size();
  check_patchable(d, l);
  b.patches = d / l;
  const std::size_t dm = m.d_llm();
  std::vector<double> in, ctx, next;
  in.reserve(b.size * d);
  const bool want_ctx = m.config().fusion_enabled;
  if (want_ctx && !embedder) throw std::invalid_argument("make_batch: fusion enabled but no context embedder given");
  const bool have_next = windows.front()->target.size() >= l;
  for (const Window* w : windows) {
    if (w->input.size() != d) throw ShapeError("make_batch: windows of differing lookback");
    auto norm = revin_normalize(w->input);
    in.insert(in.end(), norm.values.begin(), norm.values.end());
    if (want_ctx) {
      const auto texts = patch_templates(norm.values, w->input, w->input_ts, l, {w->ticker, w->sector, w->frequency},
                                         m.config().stats_on_raw);
      for (const auto& t : texts) {
        const auto ce = embedder->embed(make_context_block(t, embedder->vocabulary()));
        ctx.insert(ctx.end(), ce.begin(), ce.end());
      }
    }
    if (have_next) {
      const auto nxt = revin_apply(std::span<const double>(w->target).first(l), norm.stats);
      next.insert(next.end(), nxt.begin(), nxt.end());
    }
    b.stats.push_back(norm.stats);
  }
  b.inputs = Tensor::from({b.size, b.patches, l}, std::move(in));
  if (want_ctx) b.context = Tensor::from({b.size, b.patches, dm}, std::move(ctx));
  if (have_next) b.next_patch = Tensor::from({b.size, 1, l}, std::move(next));
  return b;
}

/// Token embeddings e_i for patches [B, n, l] with context [B, n, d].
inline Tensor fused_tokens(const ModelBundle& m, const Tensor& patches, const Tensor& context) {
  const std::size_t B = patches.dim(0), n = patches.dim(1), l = patches.dim(2);
  const std::size_t dm = m.d_llm();
  const Tensor pe = reshape(m.encoder().forward(reshape(patches, {B * n, l})), {B, n, dm});
  if (!m.config().fusion_enabled || !context.defined()) return pe;
  if (context.shape() != pe.shape()) {
    throw ShapeError("fuse: context " + shape_str(context.shape()) + " vs price embeddings " + shape_str(pe.shape()));
  }
  if (m.config().fusion == FusionMode::add) return add(pe, context);
  return m.fusion_projection()(concat_last({pe, context}));
}

/// Row i of the result is the prediction for patch i+1 (from output o_i).
inline Tensor predict_next_patches(const ModelBundle& m, const Tensor& tokens) {
  return m.projection()(m.backbone().forward(tokens));
}

// ---------------------------------------------------------------------------
// Rollout

struct ForecastResult {
  std::vector<double> normalized;  // length x, RevIN scale of the input window
  std::vector<double> prices;      // length x, denormalized
  std::vector<Timestamp> timestamps;
  std::size_t rollout_steps = 0;
  RevinStats stats;
};

inline std::vector<Timestamp> extrapolate_timestamps(Timestamp last, Frequency f, std::size_t count) {
  std::vector<Timestamp> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    last = next_timestamp(last, f);
    out.push_back(last);
  }
  return out;
}

/// Batched autoregressive forecast. Each predicted patch is appended as a new
/// token through the same encoder path (with a context block built from the
/// predicted values when rollout_context is on) until `horizon` values exist.
inline std::vector<ForecastResult> forecast_batch(const std::vector<const Window*>& windows, std::size_t horizon,
                                                  const ModelBundle& m, ContextEmbedder* embedder) {
  if (horizon == 0) throw std::invalid_argument("forecast: horizon must be >= 1");
  std::vector<ForecastResult> results(windows.size());
  if (windows.empty()) return results;
  NoGradScope no_grad;
  const std::size_t l = m.patch_len();
  const std::size_t dm = m.d_llm();
  const std::size_t B = windows.size();
  const Batch batch = make_batch(windows, m, embedder);
  const std::size_t steps = (horizon + l - 1) / l;
  if (batch.patches + steps - 1 > m.backbone().config().max_positions) {
    throw SequenceTooLong("forecast: " + std::to_string(batch.patches) + " patches plus " + std::to_string(steps - 1) +
                          " rollout tokens exceed max_positions=" + std::to_string(m.backbone().config().max_positions));
  }
  Tensor tokens = fused_tokens(m, batch.inputs, batch.context);
  std::vector<Timestamp> last_ts(B);
  for (std::size_t b = 0; b < B; ++b) {
    results[b].stats = batch.stats[b];
    last_ts[b] = windows[b]->input_ts.back();
  }
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t n = tokens.dim(1);
    const Tensor out = m.backbone().forward(tokens);
    const Tensor next = m.projection()(reshape(slice(out, 1, n - 1, 1), {B, dm}));  // [B, l]
    for (double v : next.values()) {
      if (!std::isfinite(v)) throw NumericError("forecast: non-finite prediction at rollout step " + std::to_string(s + 1));
    }
    std::vector<std::vector<Timestamp>> patch_ts(B);
    for (std::size_t b = 0; b < B; ++b) {
      const auto v = next.values().subspan(b * l, l);
      results[b].normalized.insert(results[b].normalized.end(), v.begin(), v.end());
      patch_ts[b] = extrapolate_timestamps(last_ts[b], windows[b]->frequency, l);
      last_ts[b] = patch_ts[b].back();
    }
    results[0].rollout_steps = s + 1;
    if (s + 1 == steps) break;

    const Tensor pe_in = reshape(next, {B, 1, l});
    Tensor ctx;
    if (m.config().fusion_enabled && m.config().rollout_context) {
      std::vector<double> c;
      c.reserve(B * dm);
      for (std::size_t b = 0; b < B; ++b) {
        const auto v = next.values().subspan(b * l, l);
        const auto raw = revin_denormalize(v, batch.stats[b]);
        const auto texts = patch_templates(v, raw, patch_ts[b], l,
                                           {windows[b]->ticker, windows[b]->sector, windows[b]->frequency},
                                           m.config().stats_on_raw);
        const auto ce = embedder->embed(make_context_block(texts.front(), embedder->vocabulary()));
        c.insert(c.end(), ce.begin(), ce.end());
      }
      ctx = Tensor::from({B, 1, dm}, std::move(c));
    } else if (m.config().fusion_enabled && m.config().fusion == FusionMode::concat_project) {
      ctx = Tensor::zeros({B, 1, dm});
    }
    tokens = concat({tokens, fused_tokens(m, pe_in, ctx)}, 1);
  }
  for (std::size_t b = 0; b < B; ++b) {
    auto& r = results[b];
    r.rollout_steps = results[0].rollout_steps;
    r.normalized.resize(horizon);
    r.prices = revin_denormalize(r.normalized, r.stats);
    r.timestamps = extrapolate_timestamps(windows[b]->input_ts.back(), windows[b]->frequency, horizon);
  }
  return results;
}

/// Single-window forecast from raw prices d (d % l == 0) and their timestamps.
inline ForecastResult forecast(std::span<const double> prices, std::span<const Timestamp> timestamps,
                               const SeriesMeta& meta, std::size_t horizon, const ModelBundle& m,
                               ContextEmbedder* embedder) {
  if (prices.size() != timestamps.size()) throw std::invalid_argument("forecast: prices/timestamps length mismatch");
  Window w;
  w.ticker = meta.ticker;
  w.sector = meta.sector;
  w.frequency = meta.frequency;
  w.input.assign(prices.begin(), prices.end());
  w.input_ts.assign(timestamps.begin(), timestamps.end());
  return forecast_batch({&w}, horizon, m, embedder).front();
}

}  // namespace stocktime
