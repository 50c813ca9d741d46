#include "msptr/synth.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <string>

namespace msptr {

namespace {

std::string utf8(char32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
  return out;
}

// Hands out distinct CJK characters so no two entities share a token.
class CharPool {
 public:
  explicit CharPool(std::mt19937_64& rng) {
    chars_.resize(0x9FA5 - 0x4E00);
    std::iota(chars_.begin(), chars_.end(), char32_t{0x4E00});
    std::shuffle(chars_.begin(), chars_.end(), rng);
  }

  std::string word(std::size_t length) {
    std::string out;
    for (std::size_t i = 0; i < length; ++i) {
      if (next_ >= chars_.size()) throw std::length_error("synthetic corpus exhausted the CJK pool");
      out += utf8(chars_[next_++]);
    }
    return out;
  }

 private:
  std::vector<char32_t> chars_;
  std::size_t next_ = 0;
};

std::string latin_name(std::mt19937_64& rng, std::set<std::string>& used, bool capitalize = true) {
  static constexpr std::string_view kConsonants = "bdfgklmnprstvz";
  static constexpr std::string_view kVowels = "aeiou";
  for (;;) {
    std::string name;
    for (int syllable = 0; syllable < 3; ++syllable) {
      name.push_back(kConsonants[rng() % kConsonants.size()]);
      name.push_back(kVowels[rng() % kVowels.size()]);
    }
    if (capitalize) name[0] = static_cast<char>(name[0] - 'a' + 'A');
    if (used.insert(name).second) return name;
  }
}

struct Brand {
  std::vector<std::string> variants;  // first is canonical
  std::string field() const {
    std::string out = variants[0];
    for (std::size_t i = 1; i < variants.size(); ++i) out += "/" + variants[i];
    return out;
  }
};

struct Piece {
  enum Kind { kBrand, kSalient, kCommodity, kOther } kind;
  std::string text;
};

}  // namespace

void SyntheticSpec::validate() const {
  if (brands < 2 || commodities == 0 || salient_modifiers == 0 || plain_modifiers == 0 || categories == 0 ||
      records == 0) {
    throw std::invalid_argument("synthetic counts must be positive (at least two brands)");
  }
  for (double p : {reorder_prob, brand_corruption_prob, bilingual_brand_prob})
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("synthetic probabilities must lie in [0, 1]");
}

std::vector<Triplet> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };

  CharPool pool(rng);
  std::set<std::string> used_names;
  auto word = [&] { return spec.cjk_entities ? pool.word(2) : latin_name(rng, used_names, false); };
  std::vector<Brand> brands(spec.brands);
  for (std::size_t b = 0; b < spec.brands; ++b) {
    const bool cjk_first = spec.cjk_entities && b % 2 == 1;
    brands[b].variants.push_back(cjk_first ? pool.word(2) : latin_name(rng, used_names));
    if (coin(rng) < spec.bilingual_brand_prob) {
      brands[b].variants.push_back(cjk_first ? latin_name(rng, used_names) : pool.word(spec.cjk_entities ? 2 : 1));
    }
  }
  std::vector<std::string> commodities, synonyms, salient, plain, fillers;
  for (std::size_t i = 0; i < spec.commodities; ++i) {
    commodities.push_back(word());
    synonyms.push_back(word());
  }
  for (std::size_t i = 0; i < spec.salient_modifiers; ++i) salient.push_back(word());
  for (std::size_t i = 0; i < spec.plain_modifiers; ++i) plain.push_back(word());
  for (int i = 0; i < 6; ++i) fillers.push_back(word());
  for (const char* code : {"X7", "V2", "Pro", "2019", "2020"}) fillers.emplace_back(code);

  std::vector<Triplet> out;
  out.reserve(spec.records);
  for (std::size_t r = 0; r < spec.records; ++r) {
    const std::size_t b = pick(brands.size());
    const std::size_t c = pick(commodities.size());
    const Brand& brand = brands[b];
    const std::string& brand_text = brand.variants[pick(brand.variants.size())];
    const bool corrupted = coin(rng) < spec.brand_corruption_prob;

    std::vector<Piece> pieces;
    if (corrupted) {
      std::size_t other = pick(brands.size() - 1);
      if (other >= b) ++other;
      const Brand& d = brands[other];
      pieces.push_back({Piece::kOther, d.variants[pick(d.variants.size())]});
    } else {
      pieces.push_back({Piece::kBrand, brand_text});
    }
    const std::string& modifier = salient[pick(salient.size())];
    pieces.push_back({Piece::kSalient, modifier});
    const std::size_t plain_count = 1 + pick(3);
    for (std::size_t k = 0; k < plain_count; ++k) pieces.push_back({Piece::kOther, plain[pick(plain.size())]});
    const bool direct_name = coin(rng) < 0.5;
    pieces.push_back({Piece::kCommodity, direct_name ? commodities[c] : synonyms[c]});
    const std::size_t filler_count = pick(3);
    for (std::size_t k = 0; k < filler_count; ++k) pieces.push_back({Piece::kOther, fillers[pick(fillers.size())]});
    std::shuffle(pieces.begin(), pieces.end(), rng);

    // Short title: brand, salient modifier, commodity name.
    const std::string short_brand = corrupted ? brand.variants[0] : brand_text;
    std::vector<std::string> short_parts = {short_brand, modifier, commodities[c]};
    if (coin(rng) >= spec.reorder_prob) {
      // Follow title order; a corrupted brand sits where its distractor does.
      auto position = [&](Piece::Kind kind) -> std::size_t {
        for (std::size_t i = 0; i < pieces.size(); ++i)
          if (pieces[i].kind == kind) return i;
        return 0;
      };
      std::vector<std::pair<std::size_t, std::string>> ordered = {
          {corrupted ? 0 : position(Piece::kBrand), short_brand},
          {position(Piece::kSalient), modifier},
          {position(Piece::kCommodity), commodities[c]}};
      if (corrupted) {
        for (std::size_t i = 0; i < pieces.size(); ++i)
          if (pieces[i].text != modifier && pieces[i].kind == Piece::kOther &&
              std::any_of(brands.begin(), brands.end(), [&](const Brand& x) {
                return std::find(x.variants.begin(), x.variants.end(), pieces[i].text) != x.variants.end();
              })) {
            ordered[0].first = i;
            break;
          }
      }
      std::stable_sort(ordered.begin(), ordered.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
      short_parts = {ordered[0].second, ordered[1].second, ordered[2].second};
    }

    Triplet t;
    t.id = "syn-" + std::to_string(r);
    for (std::size_t i = 0; i < pieces.size(); ++i) t.title += (i ? " " : "") + pieces[i].text;
    t.brand = brand.field();
    t.commodity = commodities[c];
    t.short_title = short_parts[0] + " " + short_parts[1] + " " + short_parts[2];
    t.category = "cat-" + std::to_string(c % spec.categories);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace msptr
