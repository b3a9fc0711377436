#pragma once

// Price-derived textual context: per-patch statistics rendered into a fixed
// one-line template, a closed-vocabulary tokenizer, and last-token embeddings
// from the frozen backbone with a process-wide cache.

#include <algorithm>
#include <array>
#include <atomic>
#include <cctype>
#include <charconv>
#include <cmath>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "stocktime/backbone.hpp"
#include "stocktime/data.hpp"
#include "stocktime/diagnostics.hpp"
#include "stocktime/rng.hpp"
#include "stocktime/timestamp.hpp"

namespace stocktime {

struct PatchStats {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double avg_rate_of_change = 0.0;  // (last - first) / (l - 1)
  Timestamp start_ts;
  Timestamp end_ts;
};

inline PatchStats compute_patch_stats(std::span<const double> patch, Timestamp start_ts, Timestamp end_ts) {
  if (patch.size() < 2) throw std::invalid_argument("compute_patch_stats: patch needs at least 2 values");
  PatchStats st;
  st.min = *std::min_element(patch.begin(), patch.end());
  st.max = *std::max_element(patch.begin(), patch.end());
  double sum = 0.0;
  for (double v : patch) sum += v;
  st.mean = std::clamp(sum / static_cast<double>(patch.size()), st.min, st.max);
  st.avg_rate_of_change = (patch.back() - patch.front()) / static_cast<double>(patch.size() - 1);
  st.start_ts = start_ts;
  st.end_ts = end_ts;
  return st;
}

/// Fixed-point with 4 decimals; ties resolve to even on the exact binary
/// value. Negative zero prints as 0.0000. Locale independent.
inline std::string format_fixed4(double v) {
  if (!std::isfinite(v)) return v != v ? "nan" : (v > 0 ? "inf" : "-inf");
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 4);
  std::string s(buf, res.ptr);
  if (s == "-0.0000") s = "0.0000";
  return s;
}

inline std::string render_template(const PatchStats& st, std::string_view ticker, std::string_view sector,
                                   Frequency freq) {
  std::string out;
  out.reserve(160);
  out += "freq=";
  out += to_string(freq);
  out += " ticker=";
  out += ticker;
  out += " sector=";
  out += sector;
  out += " min=" + format_fixed4(st.min);
  out += " max=" + format_fixed4(st.max);
  out += " mean=" + format_fixed4(st.mean);
  out += " rate=" + format_fixed4(st.avg_rate_of_change);
  out += " from=" + st.start_ts.to_string(freq);
  out += " to=" + st.end_ts.to_string(freq);
  return out;
}

/// Splits on whitespace; letter runs form words, every digit and every other
/// character is its own piece.
inline std::vector<std::string> split_pieces(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (std::isalpha(c)) {
      word.push_back(ch);
    } else {
      flush();
      out.emplace_back(1, ch);
    }
  }
  flush();
  return out;
}

/// Closed vocabulary for the template grammar. Id 0 is UNK. Ticker words are
/// placed by hash into a reserved bucket range so ids do not depend on which
/// other tickers a dataset happens to contain.
class Vocabulary {
 public:
  static constexpr std::size_t kUnk = 0;

  explicit Vocabulary(std::size_t capacity = 512) : capacity_(capacity) {
    static constexpr std::array<std::string_view, 12> keywords = {
        "freq", "daily", "hourly", "ticker", "sector", "unknown", "min", "max", "mean", "rate", "from", "to"};
    static constexpr std::array<std::string_view, 12> punct = {"=", ".", "-", ":", "+", "/", "&", "_", ",", "'", "(", ")"};
    add_fixed("<unk>");
    for (auto w : keywords) add_fixed(w);
    add_fixed("T");
    for (char c = '0'; c <= '9'; ++c) add_fixed(std::string(1, c));
    for (auto p : punct) add_fixed(p);
    for (auto sector : kSectorWords()) add_fixed(sector);
    if (fixed_.size() + 16 > capacity_) throw std::invalid_argument("vocabulary capacity too small");
    ticker_base_ = fixed_.size();
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t fixed_size() const { return fixed_.size(); }
  std::size_t ticker_buckets() const { return capacity_ - ticker_base_; }

  void add_ticker(std::string_view ticker) {
    for (auto& piece : split_pieces(ticker)) {
      if (piece.size() > 1 || std::isalpha(static_cast<unsigned char>(piece[0]))) {
        if (!ids_.count(piece)) tickers_.insert(piece);
      }
    }
  }

  std::size_t id(std::string_view word) const {
    if (auto it = ids_.find(std::string(word)); it != ids_.end()) return it->second;
    if (tickers_.count(std::string(word))) return ticker_base_ + fnv1a(word) % ticker_buckets();
    return kUnk;
  }

  bool contains(std::string_view word) const { return id(word) != kUnk; }

 private:
  static std::vector<std::string> kSectorWords() {
    std::vector<std::string> words;
    for (auto s : kSectors) {
      for (auto& w : split_pieces(s))
        if (std::find(words.begin(), words.end(), w) == words.end()) words.push_back(w);
    }
    return words;
  }

  void add_fixed(std::string_view w) {
    ids_.emplace(std::string(w), fixed_.size());
    fixed_.emplace_back(w);
  }

  std::size_t capacity_;
  std::size_t ticker_base_ = 0;
  std::vector<std::string> fixed_;
  std::unordered_map<std::string, std::size_t> ids_;
  std::unordered_set<std::string> tickers_;
};

inline std::vector<std::size_t> tokenize(std::string_view text, const Vocabulary& vocab) {
  std::vector<std::size_t> ids;
  for (const auto& piece : split_pieces(text)) ids.push_back(vocab.id(piece));
  return ids;
}

struct ContextBlock {
  std::string text;
  std::vector<std::size_t> token_ids;
  std::uint64_t cache_key = 0;
};

inline ContextBlock make_context_block(std::string text, const Vocabulary& vocab) {
  ContextBlock b;
  b.token_ids = tokenize(text, vocab);
  b.cache_key = fnv1a(text);
  b.text = std::move(text);
  return b;
}

/// ce = last-token hidden state of the frozen backbone run causally over the
/// template tokens. Results are cached by template text; the cache is safe
/// under concurrent readers and writers.
class ContextEmbedder {
 public:
  ContextEmbedder(std::shared_ptr<const FrozenBackbone> backbone, Vocabulary vocab)
      : backbone_(std::move(backbone)), vocab_(std::move(vocab)) {}

  const Vocabulary& vocabulary() const { return vocab_; }
  Vocabulary& vocabulary() { return vocab_; }

  std::vector<double> embed(const ContextBlock& block) {
    {
      std::shared_lock lock(mu_);
      if (auto it = cache_.find(block.text); it != cache_.end()) {
        ++hits_;
        return it->second;
      }
    }
    auto value = embed_uncached(block);
    std::unique_lock lock(mu_);
    ++misses_;
    cache_[block.text] = value;
    return value;
  }

  std::vector<double> embed_uncached(const ContextBlock& block) const {
    const std::size_t d = backbone_->d_model();
    if (block.token_ids.empty()) {
      warn("context template produced no tokens; using a zero embedding");
      return std::vector<double>(d, 0.0);
    }
    NoGradScope no_grad;
    const Tensor out = backbone_->forward(backbone_->embed_tokens(block.token_ids));
    const auto v = out.values();
    const std::size_t last = block.token_ids.size() - 1;
    return {v.begin() + static_cast<std::ptrdiff_t>(last * d), v.begin() + static_cast<std::ptrdiff_t>((last + 1) * d)};
  }

  std::vector<double> embed_text(const std::string& text) { return embed(make_context_block(text, vocab_)); }

  std::size_t hits() const { return hits_.load(); }
  std::size_t misses() const { return misses_.load(); }
  std::size_t cache_size() const {
    std::shared_lock lock(mu_);
    return cache_.size();
  }

 private:
  std::shared_ptr<const FrozenBackbone> backbone_;
  Vocabulary vocab_;
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, std::vector<double>> cache_;
  std::atomic<std::size_t> hits_{0};
  std::atomic<std::size_t> misses_{0};
};

}  // namespace stocktime
