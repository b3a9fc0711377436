#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stocktime/data.hpp"
#include "stocktime/timestamp.hpp"

namespace stocktime {

/// A normalized lookback window cut into n consecutive, non-overlapping
/// patches of length l (n * l == d).
struct PatchWindow {
  std::vector<std::vector<double>> patches;
  RevinStats stats;
  Timestamp start_timestamp;
  std::string ticker;

  std::size_t count() const { return patches.size(); }
  std::size_t patch_len() const { return patches.empty() ? 0 : patches.front().size(); }
};

class PatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void check_patchable(std::size_t d, std::size_t l) {
  if (l < 2) throw PatchError("patch length must be >= 2, got " + std::to_string(l));
  if (d == 0 || d % l != 0) {
    throw PatchError("lookback d=" + std::to_string(d) + " is not divisible by patch length l=" + std::to_string(l));
  }
}

inline PatchWindow patchify(std::span<const double> window, std::size_t l) {
  check_patchable(window.size(), l);
  PatchWindow pw;
  for (std::size_t i = 0; i < window.size(); i += l) pw.patches.emplace_back(window.begin() + i, window.begin() + i + l);
  return pw;
}

inline std::vector<double> unpatchify(const PatchWindow& pw) {
  std::vector<double> out;
  out.reserve(pw.count() * pw.patch_len());
  for (const auto& p : pw.patches) out.insert(out.end(), p.begin(), p.end());
  return out;
}

}  // namespace stocktime
