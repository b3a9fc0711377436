#include <gtest/gtest.h>

#include <cstring>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "stocktime/backbone.hpp"
#include "stocktime/context.hpp"
#include "stocktime/diagnostics.hpp"
#include "stocktime/patcher.hpp"

using namespace stocktime;

namespace {

std::shared_ptr<const FrozenBackbone> small_backbone() {
  BackboneConfig cfg;
  cfg.d_llm = 16;
  cfg.num_layers = 1;
  cfg.num_heads = 2;
  cfg.ff_dim = 32;
  return std::make_shared<const FrozenBackbone>(FrozenBackbone::init(cfg));
}

Vocabulary aapl_vocab() {
  Vocabulary v;
  v.add_ticker("AAPL");
  return v;
}

std::string aapl_template(const std::vector<double>& patch) {
  const auto st = compute_patch_stats(patch, Timestamp::from_civil(2024, 1, 2), Timestamp::from_civil(2024, 1, 4));
  return render_template(st, "AAPL", "Information Technology", Frequency::daily);
}

}  // namespace

TEST(Patcher, SixByThree) {
  const std::vector<double> w = {1, 2, 3, 4, 5, 6};
  const auto pw = patchify(w, 3);
  ASSERT_EQ(pw.count(), 2u);
  EXPECT_EQ(pw.patches[0], (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(pw.patches[1], (std::vector<double>{4, 5, 6}));
}

TEST(Patcher, SinglePatchEqualsWindow) {
  const std::vector<double> w = {0.5, -1.5, 2.5, 9.0};
  const auto pw = patchify(w, 4);
  ASSERT_EQ(pw.count(), 1u);
  EXPECT_EQ(pw.patches[0], w);
  EXPECT_EQ(unpatchify(pw), w);
}

TEST(Patcher, UnpatchifyConcatenates) {
  PatchWindow pw;
  pw.patches = {{1, 2}, {3, 4}};
  EXPECT_EQ(unpatchify(pw), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Patcher, RoundTripIsBitwise) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> w(32);
    for (auto& v : w) v = rng.normal();
    const auto pw = patchify(w, 8);
    EXPECT_EQ(pw.count(), 4u);
    const auto back = unpatchify(pw);
    ASSERT_EQ(std::memcmp(back.data(), w.data(), w.size() * sizeof(double)), 0);
  }
}

TEST(Patcher, IndivisibleLookbackNamesBoth) {
  const std::vector<double> w(30, 1.0);
  try {
    patchify(w, 8);
    FAIL() << "expected PatchError";
  } catch (const PatchError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("30"), std::string::npos);
    EXPECT_NE(msg.find("8"), std::string::npos);
  }
  const std::vector<double> w4(4, 1.0);
  EXPECT_THROW(patchify(w4, 1), PatchError);
}

TEST(Patcher, LookbackGridDivisibleByDefaultPatch) {
  for (std::size_t d : {16u, 32u, 64u, 128u, 256u}) {
    EXPECT_NO_THROW(check_patchable(d, 8));
    EXPECT_EQ(patchify(std::vector<double>(d, 0.0), 8).count(), d / 8);
  }
}

TEST(PatchStats, HandArithmetic) {
  const std::vector<double> p = {1, 2, 3};
  const auto st = compute_patch_stats(p, Timestamp(0), Timestamp(2));
  EXPECT_EQ(st.min, 1.0);
  EXPECT_EQ(st.max, 3.0);
  EXPECT_EQ(st.mean, 2.0);
  EXPECT_EQ(st.avg_rate_of_change, 1.0);
}

TEST(PatchStats, ConstantPatch) {
  const std::vector<double> p = {4, 4};
  const auto st = compute_patch_stats(p, Timestamp(0), Timestamp(1));
  EXPECT_EQ(st.min, 4.0);
  EXPECT_EQ(st.max, 4.0);
  EXPECT_EQ(st.mean, 4.0);
  EXPECT_EQ(st.avg_rate_of_change, 0.0);
}

TEST(PatchStats, ReversalNegatesRateAndOrderHolds) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> p(8);
    for (auto& v : p) v = rng.normal();
    std::vector<double> r(p.rbegin(), p.rend());
    const auto a = compute_patch_stats(p, Timestamp(0), Timestamp(7));
    const auto b = compute_patch_stats(r, Timestamp(0), Timestamp(7));
    EXPECT_EQ(a.avg_rate_of_change, -b.avg_rate_of_change);
    EXPECT_LE(a.min, a.mean);
    EXPECT_LE(a.mean, a.max);
  }
}

TEST(Template, ExactFormat) {
  EXPECT_EQ(aapl_template({1, 2, 3}),
            "freq=daily ticker=AAPL sector=Information Technology min=1.0000 max=3.0000 mean=2.0000 rate=1.0000 "
            "from=2024-01-02 to=2024-01-04");
}

TEST(Template, DeterministicAndUnknownSector) {
  EXPECT_EQ(aapl_template({0.1, -0.2}), aapl_template({0.1, -0.2}));
  const auto st = compute_patch_stats(std::vector<double>{1, 2}, Timestamp(0), Timestamp(60));
  const auto text = render_template(st, "ZZ", "unknown", Frequency::hourly);
  EXPECT_NE(text.find("sector=unknown"), std::string::npos);
  EXPECT_NE(text.find("freq=hourly"), std::string::npos);
  EXPECT_NE(text.find("from=1970-01-01T00:00 to=1970-01-01T01:00"), std::string::npos);
}

TEST(Template, FourDecimalRounding) {
  EXPECT_EQ(format_fixed4(0.00005), "0.0001");  // nearest double lies above the tie
  EXPECT_EQ(format_fixed4(0.125), "0.1250");
  EXPECT_EQ(format_fixed4(1.03125), "1.0312");  // exact tie rounds to even
  EXPECT_EQ(format_fixed4(-0.00001), "0.0000");
  EXPECT_EQ(format_fixed4(-1.5), "-1.5000");
}

TEST(Tokenize, DigitsSplit) {
  const Vocabulary v;
  const auto ids = tokenize("min=1.25", v);
  const std::vector<std::size_t> want = {v.id("min"), v.id("="), v.id("1"), v.id("."), v.id("2"), v.id("5")};
  EXPECT_EQ(ids, want);
  for (auto id : ids) EXPECT_NE(id, Vocabulary::kUnk);
  EXPECT_EQ(split_pieces("min=1.25"), (std::vector<std::string>{"min", "=", "1", ".", "2", "5"}));
}

TEST(Tokenize, EmptyText) { EXPECT_TRUE(tokenize("", Vocabulary()).empty()); }

TEST(Tokenize, UnknownWordMapsToUnk) {
  const Vocabulary v;
  EXPECT_EQ(tokenize("bogus", v), (std::vector<std::size_t>{Vocabulary::kUnk}));
}

TEST(Tokenize, TemplateGrammarHasNoUnk) {
  const Vocabulary v = aapl_vocab();
  for (auto id : tokenize(aapl_template({-1.5, 0.25, 3.0}), v)) EXPECT_NE(id, Vocabulary::kUnk);
  Vocabulary all;
  all.add_ticker("SYNA");
  for (auto sector : kSectors) {
    const auto st = compute_patch_stats(std::vector<double>{1, 2}, Timestamp(0), Timestamp(1440));
    for (auto id : tokenize(render_template(st, "SYNA", sector, Frequency::daily), all)) EXPECT_NE(id, Vocabulary::kUnk);
  }
}

TEST(Tokenize, InjectiveOnTemplateGrammar) {
  // Distinct templates (differing statistics, sectors, tickers, dates) map to
  // distinct id sequences.
  Vocabulary v;
  for (const char* t : {"SYNA", "SYNB", "AAPL"}) v.add_ticker(t);
  std::set<std::vector<std::size_t>> seen;
  std::set<std::string> texts;
  Rng rng(10);
  for (int i = 0; i < 300; ++i) {
    std::vector<double> p = {rng.normal(), rng.normal(), rng.normal()};
    const auto st = compute_patch_stats(p, Timestamp(i * 1440), Timestamp((i + 2) * 1440));
    const char* ticker = i % 3 == 0 ? "SYNA" : (i % 3 == 1 ? "SYNB" : "AAPL");
    const auto text = render_template(st, ticker, kSectors[static_cast<std::size_t>(i) % kSectors.size()], Frequency::daily);
    if (!texts.insert(text).second) continue;
    EXPECT_TRUE(seen.insert(tokenize(text, v)).second) << text;
  }
}

TEST(ContextBlock, SameTextSameTokens) {
  const Vocabulary v = aapl_vocab();
  const auto a = make_context_block(aapl_template({1, 2, 3}), v);
  const auto b = make_context_block(aapl_template({1, 2, 3}), v);
  EXPECT_EQ(a.token_ids, b.token_ids);
  EXPECT_EQ(a.cache_key, b.cache_key);
}

TEST(ContextEmbedder, CacheHitAndShape) {
  ContextEmbedder emb(small_backbone(), aapl_vocab());
  const auto a = emb.embed_text(aapl_template({1, 2, 3}));
  const auto b = emb.embed_text(aapl_template({1, 2, 3}));
  EXPECT_EQ(a.size(), 16u);
  EXPECT_EQ(a, b);
  EXPECT_EQ(emb.hits(), 1u);
  EXPECT_EQ(emb.misses(), 1u);
  EXPECT_EQ(emb.cache_size(), 1u);
}

TEST(ContextEmbedder, CachedEqualsUncached) {
  ContextEmbedder emb(small_backbone(), aapl_vocab());
  const auto block = make_context_block(aapl_template({0.3, -0.1, 0.7}), emb.vocabulary());
  const auto cached = emb.embed(block);
  EXPECT_EQ(emb.embed(block), emb.embed_uncached(block));
  EXPECT_EQ(cached, emb.embed_uncached(block));
}

TEST(ContextEmbedder, PerturbedStatisticChangesEmbedding) {
  ContextEmbedder emb(small_backbone(), aapl_vocab());
  const auto a = emb.embed_text(aapl_template({1, 2, 3}));
  const auto b = emb.embed_text(aapl_template({1, 2, 3.5}));
  EXPECT_NE(a, b);
}

TEST(ContextEmbedder, EmptyTemplateGivesZeroWithWarning) {
  ContextEmbedder emb(small_backbone(), aapl_vocab());
  WarningCapture cap;
  const auto z = emb.embed_text("");
  EXPECT_EQ(z, std::vector<double>(16, 0.0));
  EXPECT_EQ(cap.messages.size(), 1u);
}

TEST(ContextEmbedder, ConcurrentAccessIsConsistent) {
  ContextEmbedder emb(small_backbone(), aapl_vocab());
  std::vector<std::string> texts;
  for (int i = 0; i < 8; ++i) texts.push_back(aapl_template({0.0, static_cast<double>(i)}));
  std::vector<std::vector<std::vector<double>>> got(4);
  std::vector<std::thread> pool;
  for (int t = 0; t < 4; ++t) {
    pool.emplace_back([&, t] {
      for (int r = 0; r < 3; ++r)
        for (const auto& s : texts) got[static_cast<std::size_t>(t)].push_back(emb.embed_text(s));
    });
  }
  for (auto& th : pool) th.join();
  EXPECT_EQ(emb.cache_size(), texts.size());
  for (std::size_t t = 1; t < got.size(); ++t) EXPECT_EQ(got[t], got[0]);
}
