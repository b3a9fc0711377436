#pragma once

// Training loop, the next-patch objective, and evaluation of any forecaster
// over a set of windows.

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stocktime/data.hpp"
#include "stocktime/metrics.hpp"
#include "stocktime/model.hpp"
#include "stocktime/optim.hpp"
#include "stocktime/rng.hpp"
#include "stocktime/tensor.hpp"

namespace stocktime {

// ---------------------------------------------------------------------------
// Objective

/// Reference form: `pred[i]` is the prediction for patch i+2 (0-based i over
/// 0..n-2) and `truth[i]` the corresponding patch. Returns
/// sum ||pred - truth||^2 / (n * l) with n = truth.size() + 1.
inline double next_patch_loss(const std::vector<std::vector<double>>& pred,
                              const std::vector<std::vector<double>>& truth, std::size_t l) {
  if (pred.size() != truth.size()) throw std::invalid_argument("next_patch_loss: patch count mismatch");
  if (truth.empty()) throw std::invalid_argument("next_patch_loss: n < 2 leaves no supervised patch");
  const std::size_t n = truth.size() + 1;
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].size() != l || truth[i].size() != l) throw std::invalid_argument("next_patch_loss: patch length");
    for (std::size_t j = 0; j < l; ++j) s += (pred[i][j] - truth[i][j]) * (pred[i][j] - truth[i][j]);
  }
  return s / static_cast<double>(n * l);
}

/// Batched differentiable objective. `predicted` is [B, n, l] with row i the
/// output for patch i+1, `inputs` the normalized patches [B, n, l]. Averages
/// the per-window loss over the batch. With `next_patch` given ([B, 1, l]),
/// the out-of-window prediction from o_n joins the sum.
inline Tensor batch_loss(const Tensor& predicted, const Tensor& inputs, const Tensor& next_patch = {}) {
  const std::size_t B = inputs.dim(0), n = inputs.dim(1), l = inputs.dim(2);
  if (n < 2 && !next_patch.defined()) throw std::invalid_argument("batch_loss: need at least two patches");
  Tensor diff;
  if (n >= 2) diff = sub(slice(predicted, 1, 0, n - 1), slice(inputs, 1, 1, n - 1));
  if (next_patch.defined()) {
    const Tensor extra = sub(slice(predicted, 1, n - 1, 1), next_patch);
    diff = diff.defined() ? concat({diff, extra}, 1) : extra;
  }
  return div_scalar(reduce_sum(mul(diff, diff)), static_cast<double>(B * n * l));
}

// ---------------------------------------------------------------------------
// Evaluation

/// Maps a batch of windows to normalized forecasts of target length, each on
/// the RevIN scale of its own input window.
using Forecaster = std::function<std::vector<std::vector<double>>(const std::vector<const Window*>&)>;

struct EvalDetail {
  MetricReport report;
  double raw_mse = 0.0;
  IcResult ic;
  Confusion confusion;
};

/// MSE on the normalized scale over every horizon step. IC compares relative
/// one-step changes (first forecast vs last observed price) across windows
/// sharing a target timestamp. ACC/MCC use the direction of that same step.
inline EvalDetail evaluate(const std::vector<Window>& windows, const Forecaster& f, std::size_t batch_size = 64,
                           bool tie_is_up = true) {
  if (windows.empty()) throw std::invalid_argument("evaluate: no windows");
  if (batch_size == 0) throw std::invalid_argument("evaluate: batch_size must be positive");
  std::vector<double> pn, tn, pr, tr, p1, t1, prev;
  std::vector<std::int64_t> groups;
  for (std::size_t s = 0; s < windows.size(); s += batch_size) {
    std::vector<const Window*> chunk;
    for (std::size_t i = s; i < std::min(windows.size(), s + batch_size); ++i) chunk.push_back(&windows[i]);
    const auto preds = f(chunk);
    if (preds.size() != chunk.size()) throw std::logic_error("evaluate: forecaster returned wrong batch size");
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const Window& w = *chunk[b];
      const auto stats = revin_normalize(w.input).stats;
      if (preds[b].size() != w.target.size()) throw std::logic_error("evaluate: forecast length != target length");
      const auto truth_n = revin_apply(w.target, stats);
      const auto pred_raw = revin_denormalize(preds[b], stats);
      pn.insert(pn.end(), preds[b].begin(), preds[b].end());
      tn.insert(tn.end(), truth_n.begin(), truth_n.end());
      pr.insert(pr.end(), pred_raw.begin(), pred_raw.end());
      tr.insert(tr.end(), w.target.begin(), w.target.end());
      const double last = w.last_input();
      p1.push_back(pred_raw.front());
      t1.push_back(w.target.front());
      prev.push_back(last);
      groups.push_back(w.target_ts.front().minutes());
    }
  }
  EvalDetail d;
  d.report.n_samples = windows.size();
  d.report.mse = compute_mse(pn, tn);
  d.raw_mse = compute_mse(pr, tr);
  std::vector<double> pc(p1.size()), tc(t1.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    pc[i] = (p1[i] - prev[i]) / prev[i];
    tc[i] = (t1[i] - prev[i]) / prev[i];
  }
  d.ic = compute_ic_detail(pc, tc, groups);
  d.report.ic = d.ic.ic;
  const auto mv = compute_movement_metrics(p1, t1, prev, tie_is_up);
  d.report.acc = mv.acc;
  d.report.mcc = mv.mcc;
  d.confusion = mv.confusion;
  return d;
}

inline Forecaster stocktime_forecaster(const ModelBundle& m, ContextEmbedder* embedder) {
  return [&m, embedder](const std::vector<const Window*>& ws) {
    const std::size_t x = ws.front()->target.size();
    std::vector<std::vector<double>> out;
    for (auto& r : forecast_batch(ws, x, m, embedder)) out.push_back(std::move(r.normalized));
    return out;
  };
}

/// Repeats the last observed (normalized) value.
inline Forecaster persistence_forecaster() {
  return [](const std::vector<const Window*>& ws) {
    std::vector<std::vector<double>> out;
    for (const Window* w : ws) {
      const auto n = revin_normalize(w->input);
      out.emplace_back(w->target.size(), n.values.back());
    }
    return out;
  };
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double lr = 1e-3;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 42;  // batch order
  bool supervise_horizon = false;
  bool select_best = true;
  bool tie_is_up = true;

  void validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be a finite non-negative number");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw std::invalid_argument("adam betas must lie in [0,1)");
    }
    if (!(eps > 0.0)) throw std::invalid_argument("adam eps must be positive");
  }
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double valid_ic = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> curve;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  std::size_t steps = 0;
};

class DivergenceError : public NumericError {
 public:
  DivergenceError(std::size_t epoch, std::size_t batch)
      : NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                     std::to_string(batch)),
        epoch_(epoch),
        batch_(batch) {}
  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  std::size_t epoch_, batch_;
};

/// One forward pass of the objective on a prepared batch (recorded on the
/// active tape, if any).
inline Tensor model_loss(const ModelBundle& m, const Batch& b, bool supervise_horizon) {
  const Tensor pred = predict_next_patches(m, fused_tokens(m, b.inputs, b.context));
  if (supervise_horizon && !b.next_patch.defined()) {
    throw std::invalid_argument("supervise_horizon needs a horizon of at least one patch");
  }
  return batch_loss(pred, b.inputs, supervise_horizon ? b.next_patch : Tensor{});
}

/// Adam over the trainable parameters only. Validation IC is computed after
/// every epoch; with select_best the parameters of the best epoch are
/// restored at the end. `on_epoch` sees each log line as it is produced.
inline TrainResult train(ModelBundle& m, ContextEmbedder* embedder, const std::vector<Window>& train_windows,
                         const std::vector<Window>& valid_windows, const TrainConfig& cfg,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  if (train_windows.empty()) throw std::invalid_argument("train: no training windows");
  const ParamList params = m.trainable_parameters();
  Adam opt(params, {cfg.lr, cfg.beta1, cfg.beta2, cfg.eps});
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train_windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

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
      const Batch batch = make_batch(chunk, m, embedder);
      Tape tape;
      TapeScope scope(&tape);
      const Tensor loss = model_loss(m, batch, cfg.supervise_horizon);
      const double lv = loss.item();
      if (!std::isfinite(lv)) throw DivergenceError(epoch, bi);
      opt.zero_grad();
      backward(loss);
      opt.step();
      loss_sum += lv * static_cast<double>(chunk.size());
      seen += chunk.size();
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(seen);
    log.valid_ic = valid_windows.empty()
                       ? 0.0
                       : evaluate(valid_windows, stocktime_forecaster(m, embedder), 64, cfg.tie_is_up).report.ic;
    result.curve.push_back(log);
    if (on_epoch) on_epoch(log);
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
  for (const auto& p : params) Tensor(p.tensor).zero_grad();
  return result;
}

}  // namespace stocktime
