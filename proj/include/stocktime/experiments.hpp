#pragma once

// Experiment harness: evaluation runs, ablation variants, parameter sweeps,
// and their CSV / SVG outputs.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "stocktime/baselines.hpp"
#include "stocktime/checkpoint.hpp"
#include "stocktime/config.hpp"
#include "stocktime/data.hpp"
#include "stocktime/model.hpp"
#include "stocktime/train.hpp"

namespace stocktime {

/// Shortest decimal form that round-trips; locale independent.
inline std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string format_fixed(double v, int digits) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, digits);
  return std::string(buf, res.ptr);
}

/// Writes `contents` to `path` through a temporary file and a rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << contents;
    if (!out) throw std::runtime_error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

/// CSV named by data_path, or the configured synthetic generator.
inline Dataset load_dataset(const RunConfig& cfg, std::size_t min_length) {
  if (!cfg.text("data_path").empty()) return load_csv(cfg.text("data_path"), cfg.frequency(), min_length);
  Dataset ds = generate_synthetic(cfg.synthetic_spec());
  for (auto it = ds.begin(); it != ds.end();) {
    if (it->second.size() < min_length) {
      warn("dropping series " + it->first + ": length " + std::to_string(it->second.size()) + " < min_length " +
           std::to_string(min_length));
      it = ds.erase(it);
    } else {
      ++it;
    }
  }
  return ds;
}

inline Dataset load_dataset(const RunConfig& cfg) { return load_dataset(cfg, cfg.min_length()); }

// ---------------------------------------------------------------------------
// Result tables

struct ResultRow {
  std::string run_id;
  std::string variant;
  std::size_t lookback = 0;
  std::size_t patch_len = 0;  // 0 for models without patches
  std::size_t encoder_layers = 0;
  MetricReport metrics;
  std::uint64_t seed = 0;
  double wall_secs = 0.0;
  // Detail columns, written to a separate file.
  double raw_mse = 0.0;
  IcResult ic;
  Confusion confusion;
  std::size_t best_epoch = 0;
};

inline constexpr std::string_view kResultsHeader =
    "run_id,variant,lookback,patch_len,encoder_layers,mse,ic,acc,mcc,seed,wall_secs";

inline std::string results_csv(const std::vector<ResultRow>& rows) {
  std::string out = std::string(kResultsHeader) + "\n";
  for (const auto& r : rows) {
    out += r.run_id + "," + r.variant + "," + std::to_string(r.lookback) + "," + std::to_string(r.patch_len) + "," +
           std::to_string(r.encoder_layers) + "," + format_number(r.metrics.mse) + "," + format_number(r.metrics.ic) +
           "," + format_number(r.metrics.acc) + "," + format_number(r.metrics.mcc) + "," + std::to_string(r.seed) + "," +
           format_number(r.wall_secs) + "\n";
  }
  return out;
}

inline std::string details_csv(const std::vector<ResultRow>& rows) {
  std::string out = "run_id,raw_mse,n_samples,ic_groups_used,ic_groups_skipped,tp,tn,fp,fn,best_epoch\n";
  for (const auto& r : rows) {
    out += r.run_id + "," + format_number(r.raw_mse) + "," + std::to_string(r.metrics.n_samples) + "," +
           std::to_string(r.ic.groups_used) + "," + std::to_string(r.ic.groups_skipped) + "," +
           std::to_string(r.confusion.tp) + "," + std::to_string(r.confusion.tn) + "," + std::to_string(r.confusion.fp) +
           "," + std::to_string(r.confusion.fn) + "," + std::to_string(r.best_epoch) + "\n";
  }
  return out;
}

inline std::string loss_curve_csv(const TrainResult& t) {
  std::string out = "epoch,train_loss,valid_ic\n";
  for (const auto& e : t.curve) {
    out += std::to_string(e.epoch) + "," + format_number(e.train_loss) + "," + format_number(e.valid_ic) + "\n";
  }
  return out;
}

inline void fill_metrics(ResultRow& row, const EvalDetail& d) {
  row.metrics = d.report;
  row.raw_mse = d.raw_mse;
  row.ic = d.ic;
  row.confusion = d.confusion;
}

// ---------------------------------------------------------------------------
// Single runs

struct StockTimeRun {
  std::optional<ModelBundle> bundle;
  TrainResult training;
  EvalDetail test;
  std::size_t context_misses = 0;  // backbone passes spent on context blocks
};

/// Trains (unless `checkpoint` is non-empty, in which case the parameters
/// are loaded) and scores on the test windows.
inline StockTimeRun run_stocktime(const Dataset& ds, const WindowSplits& splits, const ModelConfig& mc,
                                  const TrainConfig& tc, const std::string& checkpoint = "") {
  StockTimeRun run;
  run.bundle = ModelBundle::create(mc);
  ModelBundle& m = *run.bundle;
  auto embedder = m.make_embedder(vocabulary_for(ds, mc.backbone.vocab_size));
  ContextEmbedder* emb = &embedder;
  if (checkpoint.empty()) {
    run.training = train(m, emb, splits.train, splits.valid, tc);
  } else {
    assign_parameters(m.all_parameters(), read_checkpoint(checkpoint));
  }
  if (splits.test.empty()) throw std::runtime_error("no test windows; series too short for the split and lookback");
  run.test = evaluate(splits.test, stocktime_forecaster(m, emb), 64, tc.tie_is_up);
  run.context_misses = embedder.misses();
  return run;
}

struct BaselineRun {
  std::optional<RecurrentBaseline> model;
  TrainResult training;
  EvalDetail test;
};

inline BaselineRun run_baseline(const WindowSplits& splits, const BaselineConfig& bc, const TrainConfig& tc) {
  BaselineRun run;
  run.model = RecurrentBaseline::init(bc);
  run.training = train_baseline(*run.model, splits.train, splits.valid, tc);
  if (splits.test.empty()) throw std::runtime_error("no test windows; series too short for the split and lookback");
  run.test = evaluate(splits.test, run.model->forecaster(), 64, tc.tie_is_up);
  return run;
}

// ---------------------------------------------------------------------------
// Ablations and sweeps

enum class AblationVariant { full, mlp_encoder, no_encoder, no_fusion, backbone_swap };

inline std::optional<AblationVariant> parse_ablation_variant(std::string_view s) {
  if (s == "full") return AblationVariant::full;
  if (s == "mlp_encoder") return AblationVariant::mlp_encoder;
  if (s == "no_encoder") return AblationVariant::no_encoder;
  if (s == "no_fusion") return AblationVariant::no_fusion;
  if (s == "backbone_swap") return AblationVariant::backbone_swap;
  return std::nullopt;
}

inline std::string_view to_string(AblationVariant v) {
  switch (v) {
    case AblationVariant::full: return "full";
    case AblationVariant::mlp_encoder: return "mlp_encoder";
    case AblationVariant::no_encoder: return "no_encoder";
    case AblationVariant::no_fusion: return "no_fusion";
    case AblationVariant::backbone_swap: return "backbone_swap";
  }
  return "?";
}

/// no_encoder keeps a single linear l -> d_llm map (the smallest adapter that
/// still produces backbone-width tokens). backbone_swap substitutes a
/// shallower, differently seeded backbone of the same width.
inline ModelConfig apply_variant(ModelConfig m, AblationVariant v) {
  switch (v) {
    case AblationVariant::full: break;
    case AblationVariant::mlp_encoder: m.encoder.kind = EncoderKind::mlp; break;
    case AblationVariant::no_encoder: m.encoder.kind = EncoderKind::linear; break;
    case AblationVariant::no_fusion: m.fusion_enabled = false; break;
    case AblationVariant::backbone_swap:
      m.backbone.num_layers = 1;
      m.backbone.num_heads = m.backbone.d_llm % 2 == 0 ? 2 : 1;
      m.backbone.ff_dim = 2 * m.backbone.d_llm;
      m.backbone.seed = mix_seed(m.backbone.seed, 1);
      m.backbone.weights_path.reset();
      break;
  }
  return m;
}

struct Cell {
  std::string run_id;
  std::string variant;
  ModelConfig model;
  TrainConfig train;
  WindowOptions windows;
};

struct CellOutcome {
  ResultRow row;
  TrainResult training;
};

inline CellOutcome run_cell(const Dataset& ds, const Cell& cell, bool record_wall_time) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto splits = make_split_windows(ds, cell.windows);
  const auto run = run_stocktime(ds, splits, cell.model, cell.train);
  CellOutcome out;
  out.training = run.training;
  ResultRow& r = out.row;
  r.run_id = cell.run_id;
  r.variant = cell.variant;
  r.lookback = cell.windows.lookback;
  r.patch_len = cell.model.patch_len;
  r.encoder_layers = cell.model.encoder.kind == EncoderKind::lstm ? cell.model.encoder.num_layers : 0;
  r.seed = cell.model.seed;
  r.best_epoch = run.training.best_epoch;
  fill_metrics(r, run.test);
  if (record_wall_time) {
    r.wall_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return out;
}

/// Runs independent cells on up to `jobs` threads. Results keep cell order,
/// so output does not depend on scheduling.
inline std::vector<CellOutcome> run_cells(const Dataset& ds, const std::vector<Cell>& cells, std::size_t jobs,
                                          bool record_wall_time) {
  std::vector<std::optional<CellOutcome>> results(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        results[i] = run_cell(ds, cells[i], record_wall_time);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(jobs, cells.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<CellOutcome> out;
  for (auto& r : results) out.push_back(std::move(*r));
  return out;
}

/// Every variant uses the same base seed, so differences come from the
/// architecture alone.
inline std::vector<Cell> ablation_cells(const RunConfig& cfg) {
  std::vector<Cell> cells;
  for (const auto& name : cfg.list("ablation_variants")) {
    const auto v = parse_ablation_variant(name);
    if (!v) throw ConfigError("unknown ablation variant '" + name + "'");
    Cell c;
    c.run_id = "ablate-" + name;
    c.variant = name;
    c.model = apply_variant(cfg.model_config(), *v);
    c.train = cfg.train_config();
    c.windows = cfg.window_options();
    cells.push_back(std::move(c));
  }
  return cells;
}

/// One cell per sweep value, each with its own derived seed.
inline std::vector<Cell> sweep_cells(const RunConfig& cfg) {
  std::vector<Cell> cells;
  const auto axis = cfg.text("sweep_axis");
  for (const auto& value : cfg.list("sweep_values")) {
    const auto n = static_cast<std::size_t>(*detail::parse_uint(value));
    Cell c;
    c.run_id = "sweep-" + axis + "-" + value;
    c.variant = "full";
    c.model = cfg.model_config();
    c.train = cfg.train_config();
    c.windows = cfg.window_options();
    if (axis == "lookback") {
      c.windows.lookback = n;
    } else {
      c.model.encoder.num_layers = n;
    }
    const auto seed = derive_seed(cfg.u64("seed"), c.run_id);
    c.model.seed = seed;
    c.train.seed = seed;
    cells.push_back(std::move(c));
  }
  return cells;
}

/// Largest lookback any sweep cell needs, for series filtering.
inline std::size_t sweep_min_length(const RunConfig& cfg) {
  std::size_t d = cfg.lookback();
  if (cfg.text("sweep_axis") == "lookback") {
    for (const auto& v : cfg.list("sweep_values")) d = std::max<std::size_t>(d, *detail::parse_uint(v));
  }
  return std::max(cfg.min_length(), d + cfg.horizon() + 1);
}

// ---------------------------------------------------------------------------
// SVG line plots

struct PlotSeries {
  std::vector<double> x;
  std::vector<double> y;
};

inline std::string escape_xml(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

/// Plain line chart with labelled x positions at the data points and the y
/// range annotated at both ends. Points are evenly spaced along x so that
/// geometric grids (16, 32, 64, ...) stay readable.
inline std::string render_line_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                                   const PlotSeries& s) {
  constexpr double W = 640, H = 400, L = 80, R = 30, T = 50, B = 60;
  if (s.x.size() != s.y.size()) throw std::invalid_argument("plot: x and y lengths differ");
  auto f = [](double v) { return format_fixed(v, 2); };
  if (s.x.empty()) {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640.00\" height=\"400.00\" viewBox=\"0 0 640.00 400.00\">\n"
           "<rect x=\"0\" y=\"0\" width=\"640.00\" height=\"400.00\" fill=\"white\"/>\n"
           "<text x=\"320.00\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" +
           escape_xml(title) + " (no data)</text>\n</svg>\n";
  }
  double lo = *std::min_element(s.y.begin(), s.y.end());
  double hi = *std::max_element(s.y.begin(), s.y.end());
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  const std::size_t n = s.x.size();
  auto px = [&](std::size_t i) { return n == 1 ? L + (W - L - R) / 2 : L + (W - L - R) * static_cast<double>(i) / static_cast<double>(n - 1); };
  auto py = [&](double v) { return T + (H - T - B) * (1.0 - (v - lo) / (hi - lo)); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f(W) << "\" height=\"" << f(H) << "\" viewBox=\"0 0 "
    << f(W) << ' ' << f(H) << "\">\n";
  o << "<rect x=\"0\" y=\"0\" width=\"" << f(W) << "\" height=\"" << f(H) << "\" fill=\"white\"/>\n";
  o << "<text x=\"" << f(W / 2) << "\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
    << escape_xml(title) << "</text>\n";
  o << "<line x1=\"" << f(L) << "\" y1=\"" << f(H - B) << "\" x2=\"" << f(W - R) << "\" y2=\"" << f(H - B)
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << f(L) << "\" y1=\"" << f(T) << "\" x2=\"" << f(L) << "\" y2=\"" << f(H - B)
    << "\" stroke=\"black\"/>\n";
  for (double v : {lo, hi}) {
    o << "<text x=\"" << f(L - 6) << "\" y=\"" << f(py(v) + 4) << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
      << "font-size=\"11\">" << format_fixed(v, 4) << "</text>\n";
  }
  o << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < n; ++i) o << (i ? " " : "") << f(px(i)) << ',' << f(py(s.y[i]));
  o << "\"/>\n";
  for (std::size_t i = 0; i < n; ++i) {
    o << "<circle cx=\"" << f(px(i)) << "\" cy=\"" << f(py(s.y[i])) << "\" r=\"3.5\" fill=\"steelblue\"/>\n";
    o << "<text x=\"" << f(px(i)) << "\" y=\"" << f(H - B + 18) << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"11\">" << format_number(s.x[i]) << "</text>\n";
  }
  o << "<text x=\"" << f((L + W - R) / 2) << "\" y=\"" << f(H - 14) << "\" text-anchor=\"middle\" "
    << "font-family=\"sans-serif\" font-size=\"13\">" << escape_xml(x_label) << "</text>\n";
  o << "<text x=\"20\" y=\"" << f((T + H - B) / 2) << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
    << "font-size=\"13\" transform=\"rotate(-90 20 " << f((T + H - B) / 2) << ")\">" << escape_xml(y_label)
    << "</text>\n";
  o << "</svg>\n";
  return o.str();
}

}  // namespace stocktime
