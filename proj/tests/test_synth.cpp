#include <doctest.h>

#include <set>

#include "msptr/metrics.hpp"
#include "msptr/synth.hpp"

using namespace msptr;

namespace {

SyntheticSpec small(double corruption, std::uint64_t seed = 1) {
  SyntheticSpec s;
  s.records = 300;
  s.brand_corruption_prob = corruption;
  s.seed = seed;
  return s;
}

std::vector<std::string> variants(const std::string& brand) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= brand.size()) {
    std::size_t end = brand.find('/', start);
    if (end == std::string::npos) end = brand.size();
    out.push_back(brand.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

}  // namespace

TEST_CASE("without corruption every title carries its brand") {
  for (const Triplet& t : generate_synthetic(small(0.0))) {
    CAPTURE(t.title);
    CHECK(brand_retained(t.title, t.brand));
    CHECK(brand_retained(t.short_title, t.brand));
  }
}

TEST_CASE("with full corruption no title carries its own brand") {
  for (const Triplet& t : generate_synthetic(small(1.0))) {
    CAPTURE(t.title);
    for (const auto& v : variants(t.brand)) CHECK(t.title.find(v) == std::string::npos);
    CHECK(brand_retained(t.short_title, t.brand));
  }
}

TEST_CASE("the default corruption rate is roughly honoured") {
  std::size_t missing = 0;
  const auto rows = generate_synthetic(small(0.2, 5));
  for (const Triplet& t : rows) missing += brand_retained(t.title, t.brand) ? 0 : 1;
  const double rate = static_cast<double>(missing) / static_cast<double>(rows.size());
  CHECK(rate > 0.12);
  CHECK(rate < 0.28);
}

TEST_CASE("generation is deterministic in the seed") {
  const auto a = generate_synthetic(small(0.2, 9));
  const auto b = generate_synthetic(small(0.2, 9));
  const auto c = generate_synthetic(small(0.2, 10));
  REQUIRE(a.size() == 300);
  std::string sa, sb, sc;
  for (const auto& t : a) sa += to_jsonl_line(t);
  for (const auto& t : b) sb += to_jsonl_line(t);
  for (const auto& t : c) sc += to_jsonl_line(t);
  CHECK(sa == sb);
  CHECK(sa != sc);
}

TEST_CASE("short titles are short and copyable") {
  const auto rows = generate_synthetic(small(0.2, 3));
  const Vocabulary vocab = build_vocabulary(rows, 2);
  std::set<std::string> ids, categories;
  for (const Triplet& t : rows) {
    ids.insert(t.id);
    categories.insert(t.category);
    CHECK(display_length(tokenize(t.short_title)) <= 10);
    CHECK(is_copyable(encode_example(t, vocab)));
  }
  CHECK(ids.size() == rows.size());
  CHECK(categories.size() == 5);
}

TEST_CASE("synthetic spec validation") {
  SyntheticSpec s;
  s.brands = 1;
  CHECK_THROWS(s.validate());
  s = SyntheticSpec{};
  s.brand_corruption_prob = 1.5;
  CHECK_THROWS(s.validate());
  s = SyntheticSpec{};
  s.records = 0;
  CHECK_THROWS(s.validate());
  CHECK_NOTHROW(SyntheticSpec{}.validate());
}

TEST_CASE("entity scripts") {
  SyntheticSpec latin = small(0.0, 4);
  for (const Triplet& t : generate_synthetic(latin)) {
    const auto short_tokens = tokenize(t.short_title);
    CHECK(short_tokens.size() == 3);
  }
  SyntheticSpec cjk = small(0.0, 4);
  cjk.cjk_entities = true;
  const auto rows = generate_synthetic(cjk);
  const Vocabulary vocab = build_vocabulary(rows, 2);
  std::size_t cjk_tokens = 0;
  for (const Triplet& t : rows) {
    for (const auto& tok : tokenize(t.short_title)) cjk_tokens += is_cjk_token(tok) ? 1 : 0;
    CHECK(is_copyable(encode_example(t, vocab)));
    CHECK(brand_retained(t.title, t.brand));
  }
  CHECK(cjk_tokens > rows.size() * 3);
}
