#pragma once

// Small shared fixtures for the test binaries.

#include <map>
#include <string>
#include <vector>

#include "stocktime/stocktime.hpp"

namespace stocktime::testing {

inline ModelConfig tiny_model_config(std::size_t l = 4, std::size_t d_llm = 16, std::size_t hidden = 8) {
  ModelConfig mc;
  mc.patch_len = l;
  mc.encoder.kind = EncoderKind::lstm;
  mc.encoder.hidden_dim = hidden;
  mc.encoder.num_layers = 1;
  mc.encoder.d_llm = d_llm;
  mc.backbone.d_llm = d_llm;
  mc.backbone.num_layers = 1;
  mc.backbone.num_heads = 2;
  mc.backbone.ff_dim = 2 * d_llm;
  mc.backbone.max_positions = 96;
  mc.backbone.vocab_size = 256;
  return mc;
}

inline Dataset tiny_dataset(SyntheticKind kind = SyntheticKind::ar1, std::size_t stocks = 3, std::size_t length = 200,
                            std::uint64_t seed = 7) {
  SyntheticSpec spec;
  spec.kind = kind;
  spec.stocks = stocks;
  spec.length = length;
  spec.seed = seed;
  return generate_synthetic(spec);
}

inline std::vector<const Window*> pointers(const std::vector<Window>& ws) {
  std::vector<const Window*> out;
  for (const auto& w : ws) out.push_back(&w);
  return out;
}

/// Name -> value snapshot of a parameter list.
inline std::map<std::string, std::vector<double>> snapshot(const ParamList& ps) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& p : ps) out[p.name] = p.tensor.to_vector();
  return out;
}

inline std::vector<double> flatten(const std::vector<std::vector<double>>& rows) {
  std::vector<double> out;
  for (const auto& r : rows) out.insert(out.end(), r.begin(), r.end());
  return out;
}

}  // namespace stocktime::testing
