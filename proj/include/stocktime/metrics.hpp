#pragma once

// Forecast metrics: MSE, cross-sectional rank IC, movement ACC and MCC.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stocktime/diagnostics.hpp"

namespace stocktime {

struct MetricReport {
  double mse = 0.0;
  double ic = 0.0;
  double acc = 0.0;
  double mcc = 0.0;
  std::size_t n_samples = 0;
};

inline double compute_mse(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("mse: length mismatch " + std::to_string(pred.size()) + " vs " +
                                std::to_string(truth.size()));
  }
  if (pred.empty()) throw std::invalid_argument("mse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return s / static_cast<double>(pred.size());
}

/// 1-based ranks; ties share the average of their positions.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// Spearman correlation (Pearson on average ranks); nullopt when either side
/// is constant.
inline std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("spearman: length mismatch");
  if (a.size() < 2) return std::nullopt;
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  return pearson(ra, rb);
}

struct IcResult {
  double ic = 0.0;
  std::size_t groups_used = 0;
  std::size_t groups_skipped = 0;
  std::size_t constant_groups = 0;  // subset of skipped: all-equal values
};

/// Mean over groups (timestamps) of the Spearman correlation between
/// predicted and realized changes within each cross-section. Groups with
/// fewer than two members or constant predictions/outcomes are skipped; the
/// latter raise one summary warning per call.
inline IcResult compute_ic_detail(std::span<const double> pred, std::span<const double> truth,
                                  std::span<const std::int64_t> groups) {
  if (pred.size() != truth.size() || pred.size() != groups.size()) throw std::invalid_argument("ic: length mismatch");
  std::map<std::int64_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < groups.size(); ++i) members[groups[i]].push_back(i);
  IcResult r;
  double sum = 0.0;
  for (const auto& [g, idx] : members) {
    if (idx.size() < 2) {
      ++r.groups_skipped;
      continue;
    }
    std::vector<double> p, t;
    for (std::size_t i : idx) {
      p.push_back(pred[i]);
      t.push_back(truth[i]);
    }
    const auto rho = spearman(p, t);
    if (!rho) {
      ++r.constant_groups;
      ++r.groups_skipped;
      continue;
    }
    sum += *rho;
    ++r.groups_used;
  }
  if (r.constant_groups > 0) {
    warn("ic: skipped " + std::to_string(r.constant_groups) +
         " cross-section(s) with constant predictions or outcomes");
  }
  r.ic = r.groups_used ? sum / static_cast<double>(r.groups_used) : 0.0;
  return r;
}

inline double compute_ic(std::span<const double> pred, std::span<const double> truth,
                         std::span<const std::int64_t> groups) {
  return compute_ic_detail(pred, truth, groups).ic;
}

struct Confusion {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::size_t total() const { return tp + tn + fp + fn; }
};

/// (TP*TN - FP*FN) / sqrt((TP+FP)(TP+FN)(TN+FP)(TN+FN)); 0 when any factor is 0.
inline double mcc_from_confusion(const Confusion& c) {
  const double tp = static_cast<double>(c.tp), tn = static_cast<double>(c.tn);
  const double fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
  const double a = tp + fp, b = tp + fn, cc = tn + fp, d = tn + fn;
  if (a == 0.0 || b == 0.0 || cc == 0.0 || d == 0.0) return 0.0;
  return std::clamp((tp * tn - fp * fn) / std::sqrt(a * b * cc * d), -1.0, 1.0);
}

struct MovementMetrics {
  double acc = 0.0;
  double mcc = 0.0;
  Confusion confusion;
};

/// Up iff price - prev >= 0 (or > 0 when tie_is_up is false), labelled
/// independently for prediction and truth. "Up" is the positive class.
inline MovementMetrics compute_movement_metrics(std::span<const double> pred, std::span<const double> truth,
                                                std::span<const double> prev, bool tie_is_up = true) {
  if (pred.size() != truth.size() || pred.size() != prev.size()) {
    throw std::invalid_argument("movement metrics: length mismatch");
  }
  auto up = [tie_is_up](double now, double before) { return tie_is_up ? now - before >= 0.0 : now - before > 0.0; };
  MovementMetrics m;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = up(pred[i], prev[i]);
    const bool t = up(truth[i], prev[i]);
    if (p && t) ++m.confusion.tp;
    else if (!p && !t) ++m.confusion.tn;
    else if (p && !t) ++m.confusion.fp;
    else ++m.confusion.fn;
  }
  const auto n = m.confusion.total();
  m.acc = n ? static_cast<double>(m.confusion.tp + m.confusion.tn) / static_cast<double>(n) : 0.0;
  m.mcc = mcc_from_confusion(m.confusion);
  return m;
}

}  // namespace stocktime
