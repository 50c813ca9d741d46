#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "msptr/corpus.hpp"

using namespace msptr;
using Toks = std::vector<std::string>;

namespace {

Triplet figure_triplet() {
  return {"fig", "任天堂switch主机全新一代游戏机体感家用电视", "Nintendo/任天堂", "游戏机", "任天堂switch游戏机", "console"};
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("msptr_test_" + name);
}

}  // namespace

TEST_CASE("tokenizer splits CJK per character and keeps Latin runs") {
  CHECK(tokenize("任天堂Switch") == Toks{"任", "天", "堂", "Switch"});
  CHECK(tokenize("").empty());
  CHECK(tokenize("MOD-X真皮") == Toks{"MOD-X", "真", "皮"});
  CHECK(tokenize("Coca-Cola 330ml") == Toks{"Coca-Cola", "330ml"});
  CHECK(tokenize("Levi's,新款") == Toks{"Levi's", ",", "新", "款"});
  CHECK(tokenize("end- x") == Toks{"end", "-", "x"});
  CHECK(tokenize("Nintendo / 任天堂") == Toks{"Nintendo", "/", "任", "天", "堂"});
  CHECK(tokenize("  a\tb  ") == Toks{"a", "b"});
  CHECK(tokenize("v2.0版") == Toks{"v2.0", "版"});
}

TEST_CASE("tokenizer preserves non-whitespace content") {
  const std::string text = "美国 曼哈顿Manhattan Portage 邮差包, 单肩包（新）";
  std::string joined, stripped;
  for (const auto& t : tokenize(text)) joined += t;
  for (char c : text)
    if (c != ' ') stripped.push_back(c);
  CHECK(joined == stripped);
}

TEST_CASE("number filter keeps only numbers found in the brand") {
  CHECK(filter_numbers({"新", "2019", "款", "3.5"}, "Nike") == Toks{"新", "款"});
  CHECK(filter_numbers({"361", "跑", "鞋"}, "361度") == Toks{"361", "跑", "鞋"});
  CHECK(is_number_token("3.5"));
  CHECK_FALSE(is_number_token("."));
  CHECK_FALSE(is_number_token("X7"));
}

TEST_CASE("display length and surface joining") {
  const Toks t = tokenize("任天堂switch主机");
  CHECK(display_length(t) == 6);
  CHECK(join_surface(Toks{"MOD-X", "任", "天", "堂"}) == "MOD-X任天堂");
  CHECK(join_surface(Toks{"Manhattan", "Portage", "邮", "差", "包"}) == "Manhattan Portage邮差包");
  CHECK(join_surface(Toks{}).empty());
}

TEST_CASE("vocabulary threshold is strict and ordering deterministic") {
  const std::vector<Toks> streams{{"a", "a", "a", "b", "b", "c", "c", "c", "c", "c"}};
  const Vocabulary v = Vocabulary::build(streams, 2, 4);
  CHECK(v.find("c").has_value());
  CHECK(v.find("a").has_value());
  CHECK_FALSE(v.find("b").has_value());
  CHECK(*v.find("c") < *v.find("a"));
  CHECK(v.size() == Vocabulary::kFirstUnk + 4 + 2);
  CHECK(v == Vocabulary::build(streams, 2, 4));

  const std::vector<Toks> tie{{"y", "y", "y", "x", "x", "x"}};
  const Vocabulary t = Vocabulary::build(tie, 2, 4);
  CHECK(*t.find("x") < *t.find("y"));

  const Vocabulary empty = Vocabulary::build(std::vector<Toks>{}, 2, 4);
  CHECK(empty.size() == Vocabulary::kFirstUnk + 4);
  CHECK(*empty.find("/") == Vocabulary::kSep);
}

TEST_CASE("vocabulary built on training streams ignores validation-only tokens") {
  const std::vector<Toks> train{{"a", "a", "a"}};
  const Vocabulary v = Vocabulary::build(train, 2);
  CHECK_FALSE(v.find("x").has_value());
}

TEST_CASE("vocabulary file round trip") {
  const std::vector<Toks> streams{{"甲", "甲", "甲", "乙", "乙", "乙", "乙"}};
  const Vocabulary v = Vocabulary::build(streams, 2, 3);
  const auto path = temp_file("vocab.txt");
  v.save(path);
  std::ifstream in(path);
  std::string first;
  std::getline(in, first);
  CHECK(first == "<pad>");
  CHECK(Vocabulary::load(path) == v);
  std::filesystem::remove(path);
}

TEST_CASE("encode_example lays out title, knowledge and target") {
  const Triplet t = figure_triplet();
  const PreparedTokens p = prepare_tokens(t);
  const Vocabulary v = Vocabulary::build(std::vector<Toks>{p.title, p.title, p.title, p.brand, p.brand, p.brand}, 2);
  const IndexedExample ex = encode_example(t, v);

  CHECK(ex.title_ids.back() == Vocabulary::kEos);
  CHECK(ex.title_ids.size() == p.title.size() + 1);
  std::vector<int> expected;
  for (const auto& tok : tokenize("Nintendo / 任天堂")) expected.push_back(*v.find(tok));
  expected.push_back(Vocabulary::kSep);
  for (const auto& tok : tokenize("游戏机")) expected.push_back(*v.find(tok));
  CHECK(ex.knowledge_ids == expected);
  CHECK(ex.brand_length == 5);
  CHECK(ex.oov_surfaces.empty());
  CHECK(ex.target_ids.back() == Vocabulary::kEos);
  CHECK(is_copyable(ex));
  CHECK(decode_ids(std::span<const int>(ex.target_ids).first(ex.target_ids.size() - 1), ex, v) == p.short_title);
}

TEST_CASE("OOV tokens take pool slots in first-occurrence order") {
  const Vocabulary v = Vocabulary::build(std::vector<Toks>{{"包", "包", "包"}}, 2, 3);
  Triplet t{"x", "QQ包WW", "QQ", "包", "QQ包", "bag"};
  const IndexedExample ex = encode_example(t, v);
  CHECK(ex.oov_surfaces == Toks{"QQ", "WW"});
  CHECK(ex.title_ids[0] == v.unk_id(0));
  CHECK(ex.title_ids[2] == v.unk_id(1));
  CHECK(ex.knowledge_ids[0] == v.unk_id(0));
  CHECK(surface(v.unk_id(1), ex, v) == "WW");

  Triplet none{"y", "包包", "", "包", "包", "bag"};
  CHECK(encode_example(none, v).oov_surfaces.empty());

  Triplet many{"z", "AA BB CC DD EE", "AA", "包", "AA", "bag"};
  const IndexedExample over = encode_example(many, v);
  CHECK(over.oov_surfaces.size() == 3);
  CHECK(over.oov_overflow == 2);
  CHECK(over.title_ids[3] == v.unk_id(2));
  CHECK(over.title_ids[4] == v.unk_id(2));
}

TEST_CASE("encode_example rejects empty knowledge") {
  const Vocabulary v;
  CHECK_THROWS_AS(encode_example(Triplet{"e", "标题", "", "", "标题", "c"}, v), DataError);
  CHECK_THROWS_AS(encode_example(Triplet{"e", "标题", "/", "", "标题", "c"}, v), DataError);
}

TEST_CASE("stratified split counts") {
  std::vector<Triplet> ten(10, Triplet{"", "t", "b", "c", "s", "only"});
  const SplitIndices s = stratified_split(ten, {}, 1);
  CHECK(s.train.size() == 8);
  CHECK(s.valid.size() == 1);
  CHECK(s.test.size() == 1);

  std::vector<Triplet> two;
  for (int i = 0; i < 200; ++i) two.push_back({std::to_string(i), "t", "b", "c", "s", i % 2 ? "odd" : "even"});
  const SplitIndices a = stratified_split(two, {}, 9);
  auto tally = [&](const std::vector<std::size_t>& idx, const std::string& cat) {
    return std::count_if(idx.begin(), idx.end(), [&](std::size_t i) { return two[i].category == cat; });
  };
  for (const std::string cat : {"odd", "even"}) {
    CHECK(tally(a.train, cat) == 80);
    CHECK(tally(a.valid, cat) == 10);
    CHECK(tally(a.test, cat) == 10);
  }
  std::set<std::size_t> all(a.train.begin(), a.train.end());
  all.insert(a.valid.begin(), a.valid.end());
  all.insert(a.test.begin(), a.test.end());
  CHECK(all.size() == two.size());

  const SplitIndices b = stratified_split(two, {}, 9);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  CHECK(stratified_split(two, {}, 10).test != a.test);
}

TEST_CASE("small categories go to train") {
  std::vector<Triplet> d{{"a", "t", "b", "c", "s", "rare"}, {"b", "t", "b", "c", "s", "rare"}};
  const SplitIndices s = stratified_split(d, {}, 1);
  CHECK(s.train.size() == 2);
  CHECK(s.small_categories == Toks{"rare"});
}

TEST_CASE("padding and batching") {
  const std::vector<std::vector<int>> seqs{{5, 6, 7}, {5, 6, 7, 8, 9}};
  const PaddedSequences p = pad_sequences(seqs);
  CHECK(p.width == 5);
  CHECK(std::vector<unsigned char>(p.row_mask(0).begin(), p.row_mask(0).end()) ==
        std::vector<unsigned char>{1, 1, 1, 0, 0});
  CHECK(std::vector<unsigned char>(p.row_mask(1).begin(), p.row_mask(1).end()) ==
        std::vector<unsigned char>{1, 1, 1, 1, 1});
  CHECK(p.row_ids(0)[4] == Vocabulary::kPad);

  std::vector<IndexedExample> examples(300);
  for (auto& e : examples) {
    e.title_ids = {5, Vocabulary::kEos};
    e.knowledge_ids = {6};
    e.target_ids = {5, Vocabulary::kEos};
  }
  const auto batches = make_batches(examples, 128);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size() == 128);
  CHECK(batches[1].size() == 128);
  CHECK(batches[2].size() == 44);

  const auto single = make_batches(std::span<const IndexedExample>(examples).first(1), 128);
  REQUIRE(single.size() == 1);
  CHECK(single[0].size() == 1);
  CHECK(std::all_of(single[0].title.mask.begin(), single[0].title.mask.end(), [](unsigned char m) { return m == 1; }));
}

TEST_CASE("JSONL and TSV readers") {
  const std::string text =
      R"({"id":"p1","title":"任天堂switch","brand":"Nintendo/任天堂","commodity":"游戏机","short_title":"任天堂","category":"c"})"
      "\n\n"
      R"({"title":"b","brand":"x","commodity":"","short_title":"b","category":"d"})";
  const auto rows = parse_jsonl(text);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].id == "p1");
  CHECK(rows[0].brand == "Nintendo/任天堂");
  CHECK_FALSE(rows[1].id.empty());

  try {
    parse_jsonl(text + "\n{bad json}\n", "f.jsonl");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("f.jsonl:4") != std::string::npos);
  }

  CHECK_THROWS_WITH_AS(parse_jsonl(R"({"title":"a"})", "g.jsonl"), doctest::Contains("g.jsonl:1"), DataError);

  const auto path = temp_file("rows.jsonl");
  write_jsonl(path, rows);
  CHECK(read_triplets(path) == rows);
  std::filesystem::remove(path);

  const auto tsv = temp_file("rows.tsv");
  {
    std::ofstream out(tsv);
    out << "任天堂switch\tNintendo\t游戏机\t任天堂\tgame\n";
  }
  const auto t = read_triplets(tsv);
  REQUIRE(t.size() == 1);
  CHECK(t[0].commodity == "游戏机");
  CHECK(t[0].category == "game");
  std::filesystem::remove(tsv);
}

TEST_CASE("training filter drops long references") {
  std::vector<Triplet> rows{{"a", "t", "b", "c", "一二三四五六七八九十", "x"}, {"b", "t", "b", "c", "一二三四五六七八九十A", "x"}};
  const auto kept = filter_training_records(rows);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].id == "a");
}
