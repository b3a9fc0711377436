#pragma once

// Price data: CSV ingestion, reversible instance normalization, lookback
// windows, chronological splits and synthetic generators.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "stocktime/diagnostics.hpp"
#include "stocktime/rng.hpp"
#include "stocktime/timestamp.hpp"

namespace stocktime {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::array<std::string_view, 11> kSectors = {
    "Information Technology", "Financials", "Health Care", "Energy",
    "Industrials", "Consumer Discretionary", "Consumer Staples", "Utilities",
    "Communication Services", "Materials", "Real Estate"};

inline bool is_valid_sector(std::string_view s) {
  return s == "unknown" || std::find(kSectors.begin(), kSectors.end(), s) != kSectors.end();
}

struct PriceSeries {
  std::string ticker;
  std::string sector = "unknown";
  Frequency frequency = Frequency::daily;
  std::vector<Timestamp> timestamps;
  std::vector<double> prices;

  std::size_t size() const { return prices.size(); }

  // Throws DataError when the series invariants do not hold.
  void validate() const {
    if (timestamps.size() != prices.size()) {
      throw DataError(ticker + ": " + std::to_string(timestamps.size()) + " timestamps vs " +
                      std::to_string(prices.size()) + " prices");
    }
    for (std::size_t i = 1; i < timestamps.size(); ++i) {
      if (!(timestamps[i - 1] < timestamps[i])) {
        throw DataError(ticker + ": timestamps not strictly increasing at index " + std::to_string(i));
      }
    }
    for (std::size_t i = 0; i < prices.size(); ++i) {
      if (!std::isfinite(prices[i]) || prices[i] <= 0.0) {
        throw DataError(ticker + ": non-positive or non-finite price at index " + std::to_string(i));
      }
    }
    if (!is_valid_sector(sector)) throw DataError(ticker + ": unknown sector '" + sector + "'");
  }
};

/// Ticker -> series, ordered by ticker.
using Dataset = std::map<std::string, PriceSeries>;

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  for (auto& f : out) {
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t')) f.pop_back();
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.erase(f.begin());
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace detail

/// Parses `ticker,timestamp,adj_close[,open,high,low,close,volume,sector]`
/// (any column order). Only adj_close feeds the dataset; the OHLCV columns
/// are validated as numbers and otherwise ignored. Series shorter than
/// `min_length` are dropped with a warning.
inline Dataset parse_csv(std::istream& in, Frequency frequency, std::size_t min_length = 0,
                         const std::string& source = "<stream>") {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw DataError(source + ": empty file, header required");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  const auto header = detail::split_csv_line(line);

  static constexpr std::array<std::string_view, 9> known = {"ticker", "timestamp", "adj_close", "open", "high",
                                                            "low",    "close",     "volume",    "sector"};
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (std::find(known.begin(), known.end(), header[i]) == known.end()) {
      throw DataError(source + ":1: unknown column '" + header[i] + "'");
    }
    if (!col.emplace(header[i], i).second) throw DataError(source + ":1: duplicate column '" + header[i] + "'");
  }
  for (const char* req : {"ticker", "timestamp", "adj_close"}) {
    if (!col.count(req)) throw DataError(source + ":1: missing required column '" + std::string(req) + "'");
  }

  struct Row {
    Timestamp ts;
    double price;
    std::size_t line;
  };
  std::map<std::string, std::vector<Row>> rows;
  std::map<std::string, std::string> sectors;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto fields = detail::split_csv_line(line);
    const auto where = source + ":" + std::to_string(line_no);
    if (fields.size() != header.size()) {
      throw DataError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    }
    const std::string& ticker = fields[col["ticker"]];
    if (ticker.empty()) throw DataError(where + ": empty ticker");
    const auto ts = Timestamp::parse(fields[col["timestamp"]], frequency);
    if (!ts) {
      throw DataError(where + ": malformed timestamp '" + fields[col["timestamp"]] + "' for " +
                      std::string(to_string(frequency)) + " data");
    }
    const auto price = detail::parse_double(fields[col["adj_close"]]);
    if (!price || !std::isfinite(*price)) throw DataError(where + ": malformed adj_close '" + fields[col["adj_close"]] + "'");
    if (*price <= 0.0) throw DataError(where + ": non-positive adj_close " + fields[col["adj_close"]]);
    for (const char* opt : {"open", "high", "low", "close", "volume"}) {
      auto it = col.find(opt);
      if (it != col.end() && !fields[it->second].empty() && !detail::parse_double(fields[it->second])) {
        throw DataError(where + ": malformed " + std::string(opt) + " '" + fields[it->second] + "'");
      }
    }
    if (auto it = col.find("sector"); it != col.end() && !fields[it->second].empty()) {
      const std::string& sec = fields[it->second];
      if (!is_valid_sector(sec)) throw DataError(where + ": unknown sector '" + sec + "'");
      auto [pos, inserted] = sectors.emplace(ticker, sec);
      if (!inserted && pos->second != sec) {
        throw DataError(where + ": sector '" + sec + "' conflicts with earlier '" + pos->second + "' for " + ticker);
      }
    }
    rows[ticker].push_back({*ts, *price, line_no});
  }

  Dataset ds;
  for (auto& [ticker, rs] : rows) {
    std::stable_sort(rs.begin(), rs.end(), [](const Row& a, const Row& b) { return a.ts < b.ts; });
    for (std::size_t i = 1; i < rs.size(); ++i) {
      if (rs[i].ts == rs[i - 1].ts) {
        throw DataError(source + ":" + std::to_string(rs[i].line) + ": duplicate timestamp for " + ticker);
      }
    }
    if (rs.size() < min_length) {
      warn("dropping " + ticker + ": " + std::to_string(rs.size()) + " rows, minimum length is " +
           std::to_string(min_length));
      continue;
    }
    PriceSeries s;
    s.ticker = ticker;
    s.frequency = frequency;
    if (auto it = sectors.find(ticker); it != sectors.end()) s.sector = it->second;
    for (const auto& r : rs) {
      s.timestamps.push_back(r.ts);
      s.prices.push_back(r.price);
    }
    ds.emplace(ticker, std::move(s));
  }
  return ds;
}

inline Dataset load_csv(const std::string& path, Frequency frequency, std::size_t min_length = 0) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return parse_csv(in, frequency, min_length, path);
}

/// Writes the canonical `ticker,timestamp,adj_close,sector` layout.
inline void write_csv(std::ostream& out, const Dataset& ds) {
  out << "ticker,timestamp,adj_close,sector\n";
  char buf[64];
  for (const auto& [ticker, s] : ds) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      // Shortest round-trip form, so a reload reproduces the prices exactly.
      const auto res = std::to_chars(buf, buf + sizeof buf, s.prices[i]);
      out << ticker << ',' << s.timestamps[i].to_string(s.frequency) << ',' << std::string_view(buf, res.ptr) << ','
          << (s.sector == "unknown" ? "" : s.sector) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Reversible instance normalization

struct RevinStats {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  double eps = 1e-8;
  bool degenerate = false;
};

struct Normalized {
  std::vector<double> values;
  RevinStats stats;
};

inline Normalized revin_normalize(std::span<const double> window, double eps = 1e-8) {
  if (window.size() < 2) throw std::invalid_argument("revin_normalize: window needs at least 2 values");
  RevinStats st;
  st.eps = eps;
  double sum = 0.0;
  for (double v : window) sum += v;
  st.mean = sum / static_cast<double>(window.size());
  double ss = 0.0;
  for (double v : window) ss += (v - st.mean) * (v - st.mean);
  st.std = std::sqrt(ss / static_cast<double>(window.size()));
  st.degenerate = st.std == 0.0;
  Normalized out;
  out.values.reserve(window.size());
  for (double v : window) out.values.push_back((v - st.mean) / (st.std + st.eps));
  if (st.degenerate) std::fill(out.values.begin(), out.values.end(), 0.0);
  out.stats = st;
  return out;
}

inline std::vector<double> revin_denormalize(std::span<const double> values, const RevinStats& st) {
  std::vector<double> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(v * (st.std + st.eps) + st.mean);
  return out;
}

/// Normalizes with existing statistics (targets of a window, predictions).
inline std::vector<double> revin_apply(std::span<const double> values, const RevinStats& st) {
  std::vector<double> out;
  out.reserve(values.size());
  for (double v : values) out.push_back((v - st.mean) / (st.std + st.eps));
  return out;
}

// ---------------------------------------------------------------------------
// Windows and splits

struct Window {
  std::string ticker;
  std::string sector = "unknown";
  Frequency frequency = Frequency::daily;
  std::size_t start = 0;  // index of the first input sample in the series
  std::vector<double> input;
  std::vector<double> target;
  std::vector<Timestamp> input_ts;
  std::vector<Timestamp> target_ts;

  Timestamp start_ts() const { return input_ts.front(); }
  double last_input() const { return input.back(); }
};

namespace detail {
inline Window cut_window(const PriceSeries& s, std::size_t start, std::size_t d, std::size_t x) {
  Window w;
  w.ticker = s.ticker;
  w.sector = s.sector;
  w.frequency = s.frequency;
  w.start = start;
  const auto b = static_cast<std::ptrdiff_t>(start);
  const auto m = static_cast<std::ptrdiff_t>(start + d);
  const auto e = static_cast<std::ptrdiff_t>(start + d + x);
  w.input.assign(s.prices.begin() + b, s.prices.begin() + m);
  w.target.assign(s.prices.begin() + m, s.prices.begin() + e);
  w.input_ts.assign(s.timestamps.begin() + b, s.timestamps.begin() + m);
  w.target_ts.assign(s.timestamps.begin() + m, s.timestamps.begin() + e);
  return w;
}
}  // namespace detail

/// Chronological windows: input of length d immediately followed by a target
/// of length x, starts advancing by `stride`.
inline std::vector<Window> make_windows(const PriceSeries& s, std::size_t d, std::size_t x, std::size_t stride) {
  if (d == 0 || x == 0 || stride == 0) throw std::invalid_argument("make_windows: d, x and stride must be positive");
  std::vector<Window> out;
  if (d + x > s.size()) {
    warn(s.ticker + ": series length " + std::to_string(s.size()) + " shorter than lookback+horizon " +
         std::to_string(d + x));
    return out;
  }
  for (std::size_t start = 0; start + d + x <= s.size(); start += stride) out.push_back(detail::cut_window(s, start, d, x));
  return out;
}

struct SplitSpec {
  double train_fraction = 0.7;
  double valid_fraction = 0.1;
  double test_fraction = 0.2;

  void validate() const {
    for (double f : {train_fraction, valid_fraction, test_fraction}) {
      if (!(f >= 0.0 && f <= 1.0)) throw std::invalid_argument("split fractions must lie in [0,1]");
    }
    if (std::abs(train_fraction + valid_fraction + test_fraction - 1.0) > 1e-9) {
      throw std::invalid_argument("split fractions must sum to 1");
    }
  }
};

/// Index boundaries [0, train_end) [train_end, valid_end) [valid_end, n).
struct SplitBounds {
  std::size_t train_end = 0;
  std::size_t valid_end = 0;
  std::size_t n = 0;
};

inline SplitBounds split_bounds(std::size_t n, const SplitSpec& spec) {
  spec.validate();
  SplitBounds b;
  b.n = n;
  b.train_end = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.train_fraction));
  b.valid_end = std::min(n, b.train_end + static_cast<std::size_t>(
                                             std::floor(static_cast<double>(n) * spec.valid_fraction)));
  return b;
}

struct SeriesSplit {
  PriceSeries train, valid, test;
};

inline SeriesSplit split_series(const PriceSeries& s, const SplitSpec& spec) {
  const auto b = split_bounds(s.size(), spec);
  auto part = [&](std::size_t from, std::size_t to) {
    PriceSeries p;
    p.ticker = s.ticker;
    p.sector = s.sector;
    p.frequency = s.frequency;
    p.timestamps.assign(s.timestamps.begin() + static_cast<std::ptrdiff_t>(from),
                        s.timestamps.begin() + static_cast<std::ptrdiff_t>(to));
    p.prices.assign(s.prices.begin() + static_cast<std::ptrdiff_t>(from), s.prices.begin() + static_cast<std::ptrdiff_t>(to));
    return p;
  };
  return {part(0, b.train_end), part(b.train_end, b.valid_end), part(b.valid_end, b.n)};
}

struct WindowSplits {
  std::vector<Window> train, valid, test;
};

struct WindowOptions {
  std::size_t lookback = 32;
  std::size_t horizon = 8;
  std::size_t train_stride = 8;
  std::size_t eval_stride = 8;
  SplitSpec split;
};

/// Assigns each window to the split segment that contains its whole target.
/// Inputs may reach back into earlier segments (past data only), so no
/// target of a later split is ever visible to an earlier one.
inline WindowSplits make_split_windows(const Dataset& ds, const WindowOptions& opt) {
  WindowSplits out;
  const std::size_t d = opt.lookback;
  const std::size_t x = opt.horizon;
  for (const auto& [ticker, s] : ds) {
    const auto b = split_bounds(s.size(), opt.split);
    auto fill = [&](std::vector<Window>& dst, std::size_t seg_begin, std::size_t seg_end, std::size_t stride) {
      // Target range [start+d, start+d+x) must sit inside [seg_begin, seg_end).
      std::size_t start = seg_begin >= d ? seg_begin - d : 0;
      for (; start + d + x <= seg_end; start += stride) {
        if (start + d < seg_begin) continue;
        dst.push_back(detail::cut_window(s, start, d, x));
      }
    };
    fill(out.train, 0, b.train_end, opt.train_stride);
    fill(out.valid, b.train_end, b.valid_end, opt.eval_stride);
    fill(out.test, b.valid_end, b.n, opt.eval_stride);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

enum class SyntheticKind { gbm, ar1, sector_factor };

inline std::optional<SyntheticKind> parse_synthetic_kind(std::string_view s) {
  if (s == "gbm") return SyntheticKind::gbm;
  if (s == "ar1") return SyntheticKind::ar1;
  if (s == "sector-factor") return SyntheticKind::sector_factor;
  return std::nullopt;
}

inline std::string_view to_string(SyntheticKind k) {
  switch (k) {
    case SyntheticKind::gbm: return "gbm";
    case SyntheticKind::ar1: return "ar1";
    case SyntheticKind::sector_factor: return "sector-factor";
  }
  return "?";
}

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::ar1;
  std::size_t stocks = 8;
  std::size_t length = 2048;
  std::uint64_t seed = 7;
  Frequency frequency = Frequency::daily;
  double phi = 0.9;            // ar1 coefficient; factor persistence for sector-factor
  double sigma = 0.02;         // innovation scale of log prices / returns
  double drift = 0.0;          // gbm drift per step
  double factor_weight = 0.7;  // loading on the shared sector factor
  std::size_t sectors = 3;     // number of synthetic sectors (<= 11)
  double start_price = 100.0;
};

/// Letters-only names (SYNA..SYNZ, SYNBA, ...) so every ticker is a single
/// word for the context tokenizer.
inline std::string synthetic_ticker(std::size_t k) {
  std::string digits;
  do {
    digits.insert(digits.begin(), static_cast<char>('A' + k % 26));
    k /= 26;
  } while (k > 0);
  return "SYN" + digits;
}

/// ar1: log price deviation x_t = phi x_{t-1} + sigma e_t, price = p0 exp(x_t).
/// gbm: log returns drift - sigma^2/2 + sigma e_t.
/// sector-factor: returns sigma (w f_{g,t} + sqrt(1-w^2) e_{s,t}) where f_g is
/// a unit-variance AR(1) factor shared by every stock in sector g.
inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.length < 64) throw std::invalid_argument("generate_synthetic: length must be >= 64");
  if (spec.stocks == 0) throw std::invalid_argument("generate_synthetic: need at least one stock");
  if (!(std::abs(spec.phi) < 1.0)) throw std::invalid_argument("generate_synthetic: |phi| must be < 1");
  if (!(spec.sigma > 0.0)) throw std::invalid_argument("generate_synthetic: sigma must be positive");
  if (!(spec.factor_weight >= 0.0 && spec.factor_weight <= 1.0)) {
    throw std::invalid_argument("generate_synthetic: factor weight must lie in [0,1]");
  }
  if (spec.sectors == 0 || spec.sectors > kSectors.size()) {
    throw std::invalid_argument("generate_synthetic: sectors must be in 1..11");
  }
  if (!(spec.start_price > 0.0)) throw std::invalid_argument("generate_synthetic: start price must be positive");

  Rng rng(spec.seed);
  std::vector<Timestamp> ts;
  ts.reserve(spec.length);
  Timestamp t = spec.frequency == Frequency::daily ? Timestamp::from_civil(2014, 6, 30)
                                                   : Timestamp::from_civil(2023, 6, 30, 9, 30);
  for (std::size_t i = 0; i < spec.length; ++i) {
    ts.push_back(t);
    t = next_timestamp(t, spec.frequency);
  }

  std::vector<std::vector<double>> factors;
  if (spec.kind == SyntheticKind::sector_factor) {
    const double innov = std::sqrt(1.0 - spec.phi * spec.phi);
    for (std::size_t g = 0; g < spec.sectors; ++g) {
      std::vector<double> f(spec.length);
      f[0] = rng.normal();
      for (std::size_t i = 1; i < spec.length; ++i) f[i] = spec.phi * f[i - 1] + innov * rng.normal();
      factors.push_back(std::move(f));
    }
  }

  Dataset ds;
  for (std::size_t k = 0; k < spec.stocks; ++k) {
    PriceSeries s;
    s.ticker = synthetic_ticker(k);
    s.sector = std::string(kSectors[k % spec.sectors]);
    s.frequency = spec.frequency;
    s.timestamps = ts;
    s.prices.resize(spec.length);
    switch (spec.kind) {
      case SyntheticKind::ar1: {
        double x = rng.normal() * spec.sigma / std::sqrt(1.0 - spec.phi * spec.phi);
        for (std::size_t i = 0; i < spec.length; ++i) {
          if (i > 0) x = spec.phi * x + spec.sigma * rng.normal();
          s.prices[i] = spec.start_price * std::exp(x);
        }
        break;
      }
      case SyntheticKind::gbm: {
        double logp = std::log(spec.start_price);
        for (std::size_t i = 0; i < spec.length; ++i) {
          if (i > 0) logp += spec.drift - 0.5 * spec.sigma * spec.sigma + spec.sigma * rng.normal();
          s.prices[i] = std::exp(logp);
        }
        break;
      }
      case SyntheticKind::sector_factor: {
        const auto& f = factors[k % spec.sectors];
        const double w = spec.factor_weight;
        const double idio = std::sqrt(1.0 - w * w);
        double logp = std::log(spec.start_price);
        for (std::size_t i = 0; i < spec.length; ++i) {
          if (i > 0) logp += spec.sigma * (w * f[i] + idio * rng.normal());
          s.prices[i] = std::exp(logp);
        }
        break;
      }
    }
    ds.emplace(s.ticker, std::move(s));
  }
  return ds;
}

}  // namespace stocktime
