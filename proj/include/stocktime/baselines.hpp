#pragma once

// Recurrent baselines that map a normalized lookback window straight to the
// whole normalized horizon through a linear head.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string_view>
#include <vector>

#include "stocktime/nn.hpp"
#include "stocktime/optim.hpp"
#include "stocktime/train.hpp"

namespace stocktime {

enum class BaselineKind { rnn, lstm, alstm };

inline std::optional<BaselineKind> parse_baseline_kind(std::string_view s) {
  if (s == "rnn") return BaselineKind::rnn;
  if (s == "lstm") return BaselineKind::lstm;
  if (s == "alstm") return BaselineKind::alstm;
  return std::nullopt;
}

inline std::string_view to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::rnn: return "rnn";
    case BaselineKind::lstm: return "lstm";
    case BaselineKind::alstm: return "alstm";
  }
  return "?";
}

struct BaselineConfig {
  BaselineKind kind = BaselineKind::lstm;
  std::size_t hidden = 64;
  std::size_t layers = 1;
  std::size_t horizon = 8;
  std::uint64_t seed = 42;
};

class RecurrentBaseline {
 public:
  static RecurrentBaseline init(const BaselineConfig& cfg) {
    if (cfg.hidden == 0 || cfg.layers == 0 || cfg.horizon == 0) {
      throw std::invalid_argument("baseline: hidden, layers and horizon must be positive");
    }
    RecurrentBaseline b;
    b.cfg_ = cfg;
    Rng rng(cfg.seed);
    const std::size_t H = cfg.hidden;
    if (cfg.kind == BaselineKind::rnn) {
      b.rnn_ = Rnn::init(1, H, cfg.layers, rng);
    } else {
      b.lstm_ = Lstm::init(1, H, cfg.layers, rng);
    }
    if (cfg.kind == BaselineKind::alstm) {
      b.att_ = Linear::init(H, H, rng);
      b.att_v_ = uniform_init({H, 1}, H, rng, true);
      b.head_ = Linear::init(2 * H, cfg.horizon, rng);
    } else {
      b.head_ = Linear::init(H, cfg.horizon, rng);
    }
    return b;
  }

  const BaselineConfig& config() const { return cfg_; }

  /// [B, d] normalized windows -> [B, horizon].
  Tensor forward(const Tensor& x) const {
    const auto steps = columns_as_steps(x);
    const auto states = cfg_.kind == BaselineKind::rnn ? rnn_.run(steps) : lstm_.run(steps);
    if (cfg_.kind != BaselineKind::alstm) return head_(states.back());
    // Additive temporal attention over all hidden states, concatenated with
    // the final state.
    const std::size_t B = x.dim(0), T = states.size(), H = cfg_.hidden;
    std::vector<Tensor> cols;
    for (const auto& h : states) cols.push_back(reshape(h, {B, 1, H}));
    const Tensor hs = concat(cols, 1);                                        // [B, T, H]
    const Tensor score = matmul(tanh(att_(hs)), att_v_);                      // [B, T, 1]
    const Tensor alpha = softmax_last(reshape(score, {B, 1, T}));             // [B, 1, T]
    const Tensor ctx = reshape(matmul(alpha, hs), {B, H});                    // [B, H]
    return head_(concat_last({ctx, states.back()}));
  }

  ParamList parameters() const {
    ParamList out;
    if (cfg_.kind == BaselineKind::rnn) rnn_.collect("baseline.rnn", out);
    else lstm_.collect("baseline.lstm", out);
    if (att_.defined()) {
      att_.collect("baseline.att", out);
      out.push_back({"baseline.att_v", att_v_});
    }
    head_.collect("baseline.head", out);
    return out;
  }

  Forecaster forecaster() const {
    return [this](const std::vector<const Window*>& ws) {
      NoGradScope no_grad;
      const Tensor x = stack_inputs(ws);
      const Tensor y = forward(x);
      std::vector<std::vector<double>> out;
      const std::size_t h = cfg_.horizon;
      for (std::size_t b = 0; b < ws.size(); ++b) {
        const auto v = y.values().subspan(b * h, h);
        if (ws[b]->target.size() > h) throw std::invalid_argument("baseline: window horizon exceeds model horizon");
        out.emplace_back(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(ws[b]->target.size()));
      }
      return out;
    };
  }

  static Tensor stack_inputs(const std::vector<const Window*>& ws) {
    std::vector<double> v;
    const std::size_t d = ws.front()->input.size();
    for (const Window* w : ws) {
      const auto n = revin_normalize(w->input);
      v.insert(v.end(), n.values.begin(), n.values.end());
    }
    return Tensor::from({ws.size(), d}, std::move(v));
  }

 private:
  BaselineConfig cfg_;
  Rnn rnn_;
  Lstm lstm_;
  Linear att_;
  Tensor att_v_;
  Linear head_;
};

/// Mean squared error on normalized targets; same Adam schedule and
/// best-by-validation-IC selection as the main model.
inline TrainResult train_baseline(RecurrentBaseline& model, const std::vector<Window>& train_windows,
                                  const std::vector<Window>& valid_windows, const TrainConfig& cfg) {
  cfg.validate();
  if (train_windows.empty()) throw std::invalid_argument("train_baseline: no training windows");
  const ParamList params = model.parameters();
  Adam opt(params, {cfg.lr, cfg.beta1, cfg.beta2, cfg.eps});
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train_windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t h = model.config().horizon;

  TrainResult result;
  double best_ic = -std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t s = 0, bi = 0; s < order.size(); s += cfg.batch_size, ++bi) {
      std::vector<const Window*> chunk;
      for (std::size_t i = s; i < std::min(order.size(), s + cfg.batch_size); ++i) chunk.push_back(&train_windows[order[i]]);
      std::vector<double> tgt;
      for (const Window* w : chunk) {
        if (w->target.size() != h) throw std::invalid_argument("train_baseline: window horizon != model horizon");
        const auto t = revin_apply(w->target, revin_normalize(w->input).stats);
        tgt.insert(tgt.end(), t.begin(), t.end());
      }
      Tape tape;
      TapeScope scope(&tape);
      const Tensor pred = model.forward(RecurrentBaseline::stack_inputs(chunk));
      const Tensor diff = sub(pred, Tensor::from({chunk.size(), h}, std::move(tgt)));
      const Tensor loss = reduce_mean(mul(diff, diff));
      const double lv = loss.item();
      if (!std::isfinite(lv)) throw DivergenceError(epoch, bi);
      opt.zero_grad();
      backward(loss);
      opt.step();
      loss_sum += lv * static_cast<double>(chunk.size());
      seen += chunk.size();
    }
    EpochLog log{epoch, loss_sum / static_cast<double>(seen),
                 valid_windows.empty() ? 0.0 : evaluate(valid_windows, model.forecaster(), 64, cfg.tie_is_up).report.ic};
    result.curve.push_back(log);
    if (log.valid_ic > best_ic || result.best_epoch == 0) {
      best_ic = log.valid_ic;
      result.best_epoch = epoch;
      best.clear();
      for (const auto& p : params) best.push_back(p.tensor.to_vector());
    }
  }
  result.steps = opt.steps();
  if (cfg.select_best && !best.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor t = params[i].tensor;
      std::copy(best[i].begin(), best[i].end(), t.mutable_values().begin());
    }
  }
  return result;
}

}  // namespace stocktime
