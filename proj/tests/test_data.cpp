#include <gtest/gtest.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "stocktime/data.hpp"
#include "stocktime/diagnostics.hpp"

using namespace stocktime;

namespace {

std::string two_ticker_csv(bool shuffled) {
  std::vector<std::string> rows;
  for (const char* t : {"AAA", "BBB"}) {
    for (int i = 0; i < 10; ++i) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%s,2024-01-%02d,%d.5", t, i + 1, 10 + i);
      rows.emplace_back(buf);
    }
  }
  if (shuffled) {
    Rng rng(3);
    rng.shuffle(rows.begin(), rows.end());
  }
  std::string out = "ticker,timestamp,adj_close\n";
  for (const auto& r : rows) out += r + "\n";
  return out;
}

Dataset parse(const std::string& text, std::size_t min_length = 0, Frequency f = Frequency::daily) {
  std::istringstream in(text);
  return parse_csv(in, f, min_length);
}

PriceSeries ramp_series(std::size_t n) {
  PriceSeries s;
  s.ticker = "RAMP";
  for (std::size_t i = 0; i < n; ++i) {
    s.timestamps.push_back(Timestamp(Timestamp::from_civil(2024, 1, 1).minutes() + static_cast<std::int64_t>(i) * 1440));
    s.prices.push_back(1.0 + static_cast<double>(i));
  }
  return s;
}

double lag1_autocorrelation(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    den += (v[i] - mean) * (v[i] - mean);
    if (i > 0) num += (v[i] - mean) * (v[i - 1] - mean);
  }
  return num / den;
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(b.size());
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

std::vector<double> log_returns(const std::vector<double>& p) {
  std::vector<double> r;
  for (std::size_t i = 1; i < p.size(); ++i) r.push_back(std::log(p[i] / p[i - 1]));
  return r;
}

}  // namespace

TEST(Csv, TwoTickersTenRows) {
  const Dataset ds = parse(two_ticker_csv(false));
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.at("AAA").size(), 10u);
  EXPECT_EQ(ds.at("BBB").size(), 10u);
  EXPECT_EQ(ds.at("AAA").prices.front(), 10.5);
  EXPECT_EQ(ds.at("AAA").sector, "unknown");
}

TEST(Csv, ShuffledRowsGiveIdenticalDataset) {
  const Dataset a = parse(two_ticker_csv(false));
  const Dataset b = parse(two_ticker_csv(true));
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [t, s] : a) {
    EXPECT_EQ(s.prices, b.at(t).prices);
    EXPECT_EQ(s.timestamps, b.at(t).timestamps);
  }
}

TEST(Csv, ShortSeriesDroppedWithWarning) {
  std::string text = "ticker,timestamp,adj_close\n";
  for (int i = 1; i <= 5; ++i) text += "SHORT,2024-01-0" + std::to_string(i) + ",1\n";
  for (int i = 1; i <= 9; ++i) text += "LONG,2024-01-0" + std::to_string(i) + ",1\n";
  WarningCapture cap;
  const Dataset ds = parse(text, 8);
  EXPECT_EQ(ds.count("SHORT"), 0u);
  EXPECT_EQ(ds.count("LONG"), 1u);
  ASSERT_FALSE(cap.messages.empty());
  EXPECT_NE(cap.messages.front().find("SHORT"), std::string::npos);
}

TEST(Csv, MalformedRowReportsLineNumber) {
  const std::string text = "ticker,timestamp,adj_close\nA,2024-01-01,1\nA,2024-01-02,abc\n";
  try {
    parse(text);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
  }
}

TEST(Csv, NonPositivePriceRejected) {
  EXPECT_THROW(parse("ticker,timestamp,adj_close\nA,2024-01-01,0\n"), DataError);
  EXPECT_THROW(parse("ticker,timestamp,adj_close\nA,2024-01-01,-3\n"), DataError);
}

TEST(Csv, DuplicateTimestampRejected) {
  EXPECT_THROW(parse("ticker,timestamp,adj_close\nA,2024-01-01,1\nA,2024-01-01,2\n"), DataError);
}

TEST(Csv, OptionalColumnsAndSector) {
  const std::string text =
      "ticker,timestamp,open,high,low,close,volume,adj_close,sector\n"
      "X,2024-01-02,1,2,0.5,1.5,100,1.4,Energy\n"
      "X,2024-01-03,1,2,0.5,1.5,100,1.6,Energy\n";
  const Dataset ds = parse(text);
  EXPECT_EQ(ds.at("X").sector, "Energy");
  EXPECT_EQ(ds.at("X").prices, (std::vector<double>{1.4, 1.6}));
  EXPECT_THROW(parse("ticker,timestamp,adj_close,sector\nX,2024-01-02,1,Crypto\n"), DataError);
}

TEST(Csv, HourlyTimestamps) {
  const Dataset ds = parse("ticker,timestamp,adj_close\nH,2024-01-02T09:30,1\nH,2024-01-02T10:30,2\n", 0,
                           Frequency::hourly);
  EXPECT_EQ(ds.at("H").timestamps[0].to_string(Frequency::hourly), "2024-01-02T09:30");
  EXPECT_THROW(parse("ticker,timestamp,adj_close\nH,2024-01-02,1\n", 0, Frequency::hourly), DataError);
}

TEST(Csv, MissingHeaderColumn) { EXPECT_THROW(parse("ticker,adj_close\nA,1\n"), DataError); }

TEST(Csv, WriteThenParseRoundTrip) {
  SyntheticSpec spec;
  spec.stocks = 3;
  spec.length = 80;
  const Dataset ds = generate_synthetic(spec);
  std::ostringstream out;
  write_csv(out, ds);
  const Dataset back = parse(out.str());
  for (const auto& [t, s] : ds) {
    EXPECT_EQ(back.at(t).prices, s.prices);
    EXPECT_EQ(back.at(t).sector, s.sector);
  }
}

TEST(Revin, HandComputed) {
  const std::vector<double> w = {1, 2, 3};
  const auto n = revin_normalize(w);
  EXPECT_DOUBLE_EQ(n.stats.mean, 2.0);
  EXPECT_NEAR(n.stats.std, 0.8165, 1e-4);
  EXPECT_NEAR(n.values[0], -1.2247, 1e-4);
  EXPECT_NEAR(n.values[1], 0.0, 1e-15);
  EXPECT_NEAR(n.values[2], 1.2247, 1e-4);
  EXPECT_FALSE(n.stats.degenerate);
}

TEST(Revin, ConstantWindowIsDegenerate) {
  const std::vector<double> w = {5, 5, 5, 5};
  const auto n = revin_normalize(w);
  EXPECT_EQ(n.values, (std::vector<double>{0, 0, 0, 0}));
  EXPECT_TRUE(n.stats.degenerate);
  EXPECT_GT(n.stats.std + n.stats.eps, 0.0);
}

TEST(Revin, DenormalizeFormula) {
  RevinStats st{10.0, 2.0, 1e-8, false};
  const std::vector<double> z = {0, 0};
  EXPECT_NEAR(revin_denormalize(z, st)[0], 10.0, 1e-12);
  RevinStats unit{0.0, 1.0, 1e-8, false};
  const std::vector<double> one = {1.0};
  EXPECT_DOUBLE_EQ(revin_denormalize(one, unit)[0], 1.0 + 1e-8);
}

TEST(Revin, RoundTripKnownWindow) {
  const std::vector<double> w = {3, 1, 4, 1, 5};
  const auto n = revin_normalize(w);
  const auto back = revin_denormalize(n.values, n.stats);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(back[i], w[i], 1e-9);
}

TEST(Revin, RoundTripProperty) {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 2 + rng.next_u64() % 64;
    std::vector<double> w(d);
    for (auto& v : w) v = rng.uniform(0.5, 500.0);
    const auto n = revin_normalize(w);
    double mean = 0, ss = 0;
    for (double v : n.values) mean += v;
    mean /= static_cast<double>(d);
    for (double v : n.values) ss += (v - mean) * (v - mean);
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(std::sqrt(ss / static_cast<double>(d)), 1.0, 1e-6);
    const auto back = revin_denormalize(n.values, n.stats);
    for (std::size_t i = 0; i < d; ++i) ASSERT_NEAR(back[i], w[i], 1e-9);
  }
}

TEST(Revin, TooShortRejected) {
  const std::vector<double> w = {1.0};
  EXPECT_THROW(revin_normalize(w), std::invalid_argument);
}

TEST(Windows, CountsByHand) {
  EXPECT_EQ(make_windows(ramp_series(10), 4, 2, 4).size(), 2u);
  EXPECT_EQ(make_windows(ramp_series(6), 4, 2, 3).size(), 1u);
  for (std::size_t L : {6u, 10u, 37u}) EXPECT_EQ(make_windows(ramp_series(L), 4, 2, 1).size(), L - 4 - 2 + 1);
}

TEST(Windows, TooShortIsEmptyWithWarning) {
  WarningCapture cap;
  EXPECT_TRUE(make_windows(ramp_series(5), 4, 2, 1).empty());
  EXPECT_EQ(cap.messages.size(), 1u);
}

TEST(Windows, TargetFollowsInputWithoutOverlap) {
  const auto s = ramp_series(40);
  for (const auto& w : make_windows(s, 8, 3, 2)) {
    ASSERT_EQ(w.input.size(), 8u);
    ASSERT_EQ(w.target.size(), 3u);
    EXPECT_LT(w.input_ts.back(), w.target_ts.front());
    EXPECT_EQ(w.target.front(), w.input.back() + 1.0);
    EXPECT_EQ(w.start_ts(), s.timestamps[w.start]);
  }
}

TEST(Splits, ChronologicalPerStock) {
  SyntheticSpec spec;
  spec.stocks = 4;
  spec.length = 300;
  const Dataset ds = generate_synthetic(spec);
  for (const auto& [t, s] : ds) {
    const auto parts = split_series(s, SplitSpec{});
    EXPECT_EQ(parts.train.size() + parts.valid.size() + parts.test.size(), s.size());
    EXPECT_LT(parts.train.timestamps.back(), parts.valid.timestamps.front());
    EXPECT_LT(parts.valid.timestamps.back(), parts.test.timestamps.front());
  }
  WindowOptions opt;
  opt.lookback = 16;
  opt.horizon = 4;
  const auto w = make_split_windows(ds, opt);
  ASSERT_FALSE(w.train.empty());
  ASSERT_FALSE(w.valid.empty());
  ASSERT_FALSE(w.test.empty());
  for (const auto& [t, s] : ds) {
    Timestamp train_max, valid_min{INT64_MAX}, valid_max, test_min{INT64_MAX};
    for (const auto& x : w.train)
      if (x.ticker == t) train_max = std::max(train_max, x.target_ts.back());
    for (const auto& x : w.valid)
      if (x.ticker == t) {
        valid_min = std::min(valid_min, x.target_ts.front());
        valid_max = std::max(valid_max, x.target_ts.back());
      }
    for (const auto& x : w.test)
      if (x.ticker == t) test_min = std::min(test_min, x.target_ts.front());
    EXPECT_LT(train_max, valid_min);
    EXPECT_LT(valid_max, test_min);
  }
}

TEST(Splits, FractionsMustSumToOne) {
  SplitSpec bad{0.5, 0.2, 0.2};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Synthetic, SeededDeterminism) {
  SyntheticSpec spec;
  spec.phi = 0.9;
  spec.seed = 7;
  const Dataset a = generate_synthetic(spec);
  const Dataset b = generate_synthetic(spec);
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [t, s] : a) EXPECT_EQ(s.prices, b.at(t).prices);
  spec.seed = 8;
  EXPECT_NE(generate_synthetic(spec).begin()->second.prices, a.begin()->second.prices);
}

TEST(Synthetic, Ar1LagOneAutocorrelation) {
  SyntheticSpec spec;
  spec.kind = SyntheticKind::ar1;
  spec.phi = 0.9;
  spec.length = 4096;
  spec.stocks = 4;
  for (const auto& [t, s] : generate_synthetic(spec)) {
    const double r = lag1_autocorrelation(s.prices);
    EXPECT_GE(r, 0.85) << t;
    EXPECT_LE(r, 0.95) << t;
  }
}

TEST(Synthetic, ZeroFactorWeightGivesUncorrelatedReturns) {
  SyntheticSpec spec;
  spec.kind = SyntheticKind::sector_factor;
  spec.factor_weight = 0.0;
  spec.stocks = 6;
  spec.sectors = 2;
  spec.length = 4096;
  const Dataset ds = generate_synthetic(spec);
  std::vector<std::vector<double>> rets;
  for (const auto& [t, s] : ds) rets.push_back(log_returns(s.prices));
  for (std::size_t i = 0; i < rets.size(); ++i)
    for (std::size_t j = i + 1; j < rets.size(); ++j) EXPECT_LT(std::abs(correlation(rets[i], rets[j])), 0.08);
}

TEST(Synthetic, SectorFactorCorrelatesWithinSector) {
  SyntheticSpec spec;
  spec.kind = SyntheticKind::sector_factor;
  spec.factor_weight = 0.7;
  spec.stocks = 4;
  spec.sectors = 2;
  spec.length = 2048;
  const Dataset ds = generate_synthetic(spec);
  std::vector<const PriceSeries*> v;
  for (const auto& [t, s] : ds) v.push_back(&s);
  ASSERT_EQ(v[0]->sector, v[2]->sector);
  ASSERT_NE(v[0]->sector, v[1]->sector);
  EXPECT_GT(correlation(log_returns(v[0]->prices), log_returns(v[2]->prices)), 0.3);
  EXPECT_LT(std::abs(correlation(log_returns(v[0]->prices), log_returns(v[1]->prices))), 0.1);
}

TEST(Synthetic, InvalidParametersRejected) {
  SyntheticSpec spec;
  spec.phi = 1.0;
  EXPECT_THROW(generate_synthetic(spec), std::invalid_argument);
  spec.phi = 0.5;
  spec.length = 63;
  EXPECT_THROW(generate_synthetic(spec), std::invalid_argument);
}

TEST(Synthetic, TickersAreLettersOnlyAndSeriesValid) {
  SyntheticSpec spec;
  spec.stocks = 30;
  spec.length = 64;
  for (const auto& [t, s] : generate_synthetic(spec)) {
    EXPECT_TRUE(std::all_of(t.begin(), t.end(), [](char c) { return std::isupper(static_cast<unsigned char>(c)); })) << t;
    EXPECT_NO_THROW(s.validate());
  }
  EXPECT_EQ(synthetic_ticker(0), "SYNA");
  EXPECT_EQ(synthetic_ticker(25), "SYNZ");
  EXPECT_EQ(synthetic_ticker(26), "SYNBA");
}
