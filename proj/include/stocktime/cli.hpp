#pragma once

// Command-line front end. run_cli() is callable in-process so tests can drive
// every command without spawning a shell.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "stocktime/baselines.hpp"
#include "stocktime/checkpoint.hpp"
#include "stocktime/config.hpp"
#include "stocktime/experiments.hpp"
#include "stocktime/model.hpp"
#include "stocktime/train.hpp"

namespace stocktime {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitRuntime = 2 };

namespace cli_detail {

namespace fs = std::filesystem;

struct Options {
  std::string config_path;
  std::string out_dir = "stocktime_out";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::vector<std::string> sets;
  // forecast / eval
  std::string checkpoint;
  std::string data;
  std::string ticker;
  std::optional<std::size_t> horizon;
};

inline void write_common(const fs::path& dir, const RunConfig& cfg) {
  fs::create_directories(dir);
  write_file_atomic(dir / "config.resolved", cfg.resolved_text());
}

inline int cmd_gen_data(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const Dataset ds = load_dataset(cfg);
  std::ostringstream csv;
  write_csv(csv, ds);
  write_common(dir, cfg);
  write_file_atomic(dir / "data.csv", csv.str());
  std::size_t rows = 0;
  for (const auto& [t, s] : ds) rows += s.size();
  out << "wrote " << ds.size() << " series, " << rows << " rows to " << (dir / "data.csv").string() << "\n";
  return kExitOk;
}

inline int cmd_train(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const Dataset ds = load_dataset(cfg);
  const auto splits = make_split_windows(ds, cfg.window_options());
  const ModelConfig mc = cfg.model_config();
  ModelBundle m = ModelBundle::create(mc);
  auto embedder = m.make_embedder(vocabulary_for(ds, mc.backbone.vocab_size));
  out << "train windows " << splits.train.size() << ", valid " << splits.valid.size() << ", test "
      << splits.test.size() << "\n";
  const auto result = train(m, &embedder, splits.train, splits.valid, cfg.train_config(), [&](const EpochLog& e) {
    out << "epoch " << e.epoch << " train_loss " << format_number(e.train_loss) << " valid_ic "
        << format_number(e.valid_ic) << "\n";
  });
  write_common(dir, cfg);
  write_checkpoint(dir / "checkpoint.bin", m.all_parameters());
  write_file_atomic(dir / "loss_curve.csv", loss_curve_csv(result));
  out << "best epoch " << result.best_epoch << "; checkpoint " << (dir / "checkpoint.bin").string() << "\n";
  return kExitOk;
}

inline int cmd_forecast(const RunConfig& cfg, const Options& opt, const fs::path& dir, std::ostream& out) {
  const std::string ckpt = cfg.text("checkpoint");
  const std::size_t horizon = opt.horizon.value_or(cfg.horizon());
  const Dataset ds = load_dataset(cfg, 0);
  auto it = ds.find(opt.ticker);
  if (it == ds.end()) throw std::runtime_error("unknown ticker '" + opt.ticker + "'");
  const PriceSeries& s = it->second;
  const std::size_t d = cfg.lookback();
  if (s.size() < d) {
    throw std::runtime_error("ticker " + s.ticker + " has " + std::to_string(s.size()) + " points, lookback needs " +
                             std::to_string(d));
  }
  const ModelConfig mc = cfg.model_config();
  ModelBundle m = ModelBundle::create(mc);
  assign_parameters(m.all_parameters(), read_checkpoint(ckpt));
  auto embedder = m.make_embedder(vocabulary_for(ds, mc.backbone.vocab_size));
  const auto off = static_cast<std::ptrdiff_t>(s.size() - d);
  const std::vector<double> prices(s.prices.begin() + off, s.prices.end());
  const std::vector<Timestamp> ts(s.timestamps.begin() + off, s.timestamps.end());
  const auto r = forecast(prices, ts, {s.ticker, s.sector, s.frequency}, horizon, m, &embedder);
  std::string csv = "timestamp,ticker,predicted_price\n";
  for (std::size_t i = 0; i < horizon; ++i) {
    csv += r.timestamps[i].to_string(s.frequency) + "," + s.ticker + "," + format_number(r.prices[i]) + "\n";
  }
  write_common(dir, cfg);
  write_file_atomic(dir / "forecast.csv", csv);
  out << "wrote " << horizon << " forecast rows for " << s.ticker << " to " << (dir / "forecast.csv").string() << "\n";
  return kExitOk;
}

inline int cmd_eval(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const Dataset ds = load_dataset(cfg);
  const auto splits = make_split_windows(ds, cfg.window_options());
  if (splits.test.empty()) throw std::runtime_error("no test windows; series too short for the split and lookback");
  const TrainConfig tc = cfg.train_config();
  const bool record = cfg.boolean("record_wall_time");
  std::vector<ResultRow> rows;
  std::optional<TrainResult> curve;
  for (const auto& name : cfg.list("eval_models")) {
    const auto t0 = std::chrono::steady_clock::now();
    ResultRow r;
    r.run_id = "eval-" + name;
    r.variant = name;
    r.lookback = cfg.lookback();
    r.seed = cfg.u64("seed");
    if (name == "stocktime") {
      const ModelConfig mc = cfg.model_config();
      const auto run = run_stocktime(ds, splits, mc, tc, cfg.text("checkpoint"));
      r.patch_len = mc.patch_len;
      r.encoder_layers = mc.encoder.kind == EncoderKind::lstm ? mc.encoder.num_layers : 0;
      r.best_epoch = run.training.best_epoch;
      fill_metrics(r, run.test);
      if (cfg.text("checkpoint").empty()) curve = run.training;
    } else if (name == "persistence") {
      fill_metrics(r, evaluate(splits.test, persistence_forecaster(), 64, tc.tie_is_up));
    } else {
      const auto bc = cfg.baseline_config(*parse_baseline_kind(name));
      const auto run = run_baseline(splits, bc, tc);
      r.encoder_layers = bc.layers;
      r.best_epoch = run.training.best_epoch;
      fill_metrics(r, run.test);
    }
    if (record) r.wall_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out << r.run_id << " mse " << format_number(r.metrics.mse) << " ic " << format_number(r.metrics.ic) << " acc "
        << format_number(r.metrics.acc) << " mcc " << format_number(r.metrics.mcc) << "\n";
    rows.push_back(std::move(r));
  }
  write_common(dir, cfg);
  write_file_atomic(dir / "results.csv", results_csv(rows));
  write_file_atomic(dir / "metrics_detail.csv", details_csv(rows));
  if (curve) write_file_atomic(dir / "loss_curve.csv", loss_curve_csv(*curve));
  return kExitOk;
}

inline void write_cells(const std::vector<Cell>& cells, const std::vector<CellOutcome>& outcomes, const fs::path& dir,
                        std::ostream& out) {
  std::vector<ResultRow> rows;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto& r = outcomes[i].row;
    out << r.run_id << " mse " << format_number(r.metrics.mse) << " ic " << format_number(r.metrics.ic) << "\n";
    write_file_atomic(dir / ("loss_curve_" + cells[i].run_id + ".csv"), loss_curve_csv(outcomes[i].training));
    rows.push_back(r);
  }
  write_file_atomic(dir / "results.csv", results_csv(rows));
  write_file_atomic(dir / "metrics_detail.csv", details_csv(rows));
}

inline int cmd_ablate(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const Dataset ds = load_dataset(cfg);
  const auto cells = ablation_cells(cfg);
  const auto outcomes = run_cells(ds, cells, cfg.uint("jobs"), cfg.boolean("record_wall_time"));
  write_common(dir, cfg);
  write_cells(cells, outcomes, dir, out);
  return kExitOk;
}

inline int cmd_sweep(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const Dataset ds = load_dataset(cfg, sweep_min_length(cfg));
  const auto cells = sweep_cells(cfg);
  const auto outcomes = run_cells(ds, cells, cfg.uint("jobs"), cfg.boolean("record_wall_time"));
  write_common(dir, cfg);
  write_cells(cells, outcomes, dir, out);
  const auto axis = cfg.text("sweep_axis");
  PlotSeries mse, ic;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const double x = axis == "lookback" ? static_cast<double>(cells[i].windows.lookback)
                                        : static_cast<double>(cells[i].model.encoder.num_layers);
    mse.x.push_back(x);
    mse.y.push_back(outcomes[i].row.metrics.mse);
    ic.x.push_back(x);
    ic.y.push_back(outcomes[i].row.metrics.ic);
  }
  write_file_atomic(dir / "sweep_mse.svg", render_line_svg("MSE by " + axis, axis, "MSE (normalized)", mse));
  write_file_atomic(dir / "sweep_ic.svg", render_line_svg("IC by " + axis, axis, "IC", ic));
  return kExitOk;
}

/// Config file (or, for forecast without --config, the resolved config saved
/// next to the checkpoint), then --set overrides, then dedicated flags.
inline RunConfig resolve_config(const Options& opt, const std::string& command) {
  std::string path = opt.config_path;
  if (path.empty() && command == "forecast" && !opt.checkpoint.empty()) {
    const auto candidate = fs::path(opt.checkpoint).parent_path() / "config.resolved";
    if (fs::exists(candidate)) path = candidate.string();
  }
  RunConfig cfg = path.empty() ? RunConfig() : RunConfig::load(path);
  for (const auto& kv : opt.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(detail::trim(std::string_view(kv).substr(0, eq)), detail::trim(std::string_view(kv).substr(eq + 1)));
  }
  if (opt.seed) cfg.set("seed", std::to_string(*opt.seed));
  if (opt.jobs) cfg.set("jobs", std::to_string(*opt.jobs));
  if (!opt.checkpoint.empty()) cfg.set("checkpoint", opt.checkpoint);
  if (!opt.data.empty()) cfg.set("data_path", opt.data);
  if (opt.horizon) cfg.set("horizon", std::to_string(*opt.horizon));
  cfg.validate();
  if (command == "forecast") {
    if (cfg.text("checkpoint").empty()) throw ConfigError("forecast needs --checkpoint");
    if (opt.ticker.empty()) throw ConfigError("forecast needs --ticker");
  }
  return cfg;
}

}  // namespace cli_detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace cli_detail;
  Options opt;
  CLI::App app{"Price forecasting with patch tokens through a frozen transformer backbone", "stocktime"};
  app.footer(RunConfig::describe_keys());
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.add_option("--config", opt.config_path, "flat key = value configuration file");
  app.add_option("--out", opt.out_dir, "output directory")->capture_default_str();
  app.add_option("--seed", opt.seed, "overrides the seed key");
  app.add_option("--jobs", opt.jobs, "worker threads for ablation and sweep cells")->check(CLI::PositiveNumber);
  app.add_option("--set", opt.sets, "override one config key (key=value); repeatable");

  struct Command {
    const char* name;
    const char* help;
  };
  const Command commands[] = {
      {"gen-data", "write a synthetic (or canonicalized) price CSV"},
      {"train", "train the model; writes checkpoint, loss curve and resolved config"},
      {"forecast", "forecast one ticker from a checkpoint"},
      {"eval", "score the model and baselines on the test split"},
      {"ablate", "train and score each ablation variant"},
      {"sweep", "train and score one model per sweep value; writes CSV and SVG plots"},
  };
  std::vector<CLI::App*> subs;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    sub->footer(RunConfig::describe_keys());
    subs.push_back(sub);
  }
  auto* forecast_cmd = app.get_subcommand("forecast");
  forecast_cmd->add_option("--checkpoint", opt.checkpoint, "checkpoint written by train");
  forecast_cmd->add_option("--data", opt.data, "price CSV (defaults to the configured data source)");
  forecast_cmd->add_option("--ticker", opt.ticker, "ticker to forecast");
  forecast_cmd->add_option("--horizon", opt.horizon, "number of future values")->check(CLI::PositiveNumber);
  app.get_subcommand("eval")->add_option("--checkpoint", opt.checkpoint, "score this checkpoint instead of training");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  std::string command;
  for (auto* s : subs)
    if (s->parsed()) command = s->get_name();

  RunConfig cfg;
  try {
    cfg = resolve_config(opt, command);
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  }

  const fs::path dir(opt.out_dir);
  try {
    if (command == "gen-data") return cmd_gen_data(cfg, dir, out);
    if (command == "train") return cmd_train(cfg, dir, out);
    if (command == "forecast") return cmd_forecast(cfg, opt, dir, out);
    if (command == "eval") return cmd_eval(cfg, dir, out);
    if (command == "ablate") return cmd_ablate(cfg, dir, out);
    if (command == "sweep") return cmd_sweep(cfg, dir, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  err << "unknown command\n";
  return kExitUsage;
}

}  // namespace stocktime
