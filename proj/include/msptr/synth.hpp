#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "msptr/corpus.hpp"

namespace msptr {

// Knobs for the synthetic product corpus. Each record has a brand, one
// salient modifier, some plain modifiers, a commodity (named directly or by a
// synonym) and filler; the short title is brand + salient modifier +
// commodity.
//
// By default every entity is a Latin pseudo-word, so each one is a single
// token; a bilingual brand's second variant is one CJK character. With
// `cjk_entities` the entities are two-character CJK words instead (the brands
// alternate between Latin and CJK), which the tokenizer splits per character.
struct SyntheticSpec {
  std::size_t brands = 40;
  std::size_t commodities = 20;
  std::size_t salient_modifiers = 20;
  std::size_t plain_modifiers = 40;
  std::size_t categories = 5;
  std::size_t records = 5000;
  // Probability that the short title uses canonical brand-modifier-commodity
  // order instead of the order the pieces take in the title.
  double reorder_prob = 0.65;
  // Probability that the title carries another brand instead of the real one.
  double brand_corruption_prob = 0.2;
  // Share of brands that have a Latin and a CJK alternative ("Latin/CJK").
  double bilingual_brand_prob = 0.3;
  bool cjk_entities = false;
  std::uint64_t seed = 7;

  void validate() const;
};

std::vector<Triplet> generate_synthetic(const SyntheticSpec& spec);

}  // namespace msptr
