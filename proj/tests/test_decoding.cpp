#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>

#include "msptr/decoding.hpp"
#include "test_helpers.hpp"

using namespace msptr;
using msptr::testing::randomize;
using msptr::testing::tiny_config;

namespace {

ExampleInput make_input(std::vector<int> title, std::vector<int> know) {
  ExampleInput in;
  in.title_ids = std::move(title);
  in.title_mask.assign(in.title_ids.size(), 1);
  in.knowledge_ids = std::move(know);
  in.knowledge_mask.assign(in.knowledge_ids.size(), 1);
  return in;
}

struct Best {
  std::vector<int> tokens;
  double logprob = -INFINITY;
};

// Depth-first enumeration of every finished sequence within max_steps.
Best exhaustive(const ModelParams& m, const ExampleInput& in, std::size_t max_steps) {
  Tape tape;
  ForwardPass pass(tape, m, in);
  Best best;
  std::vector<int> path;
  std::function<void(const DecoderStep&, int, double)> dfs = [&](const DecoderStep& state, int prev, double lp) {
    if (path.size() == max_steps) return;
    const DecoderStep s = pass.step(state, prev);
    for (const WordProb& w : pass.distribution(s)) {
      if (!(w.prob > 0)) continue;
      const double next = lp + std::log(w.prob);
      path.push_back(w.id);
      if (w.id == Vocabulary::kEos) {
        const bool wins = next > best.logprob ||
                          (next == best.logprob && (path.size() < best.tokens.size() + 1 ||
                                                    (path.size() == best.tokens.size() + 1 &&
                                                     std::vector<int>(path.begin(), path.end() - 1) < best.tokens)));
        if (wins) {
          best.logprob = next;
          best.tokens.assign(path.begin(), path.end() - 1);
        }
      } else {
        dfs(s, w.id, next);
      }
      path.pop_back();
    }
  };
  dfs(pass.initial(), Vocabulary::kGo, 0.0);
  return best;
}

}  // namespace

TEST_CASE("a title holding only EOS decodes to the empty summary") {
  ModelParams m(tiny_config(Mode::kPtrNet));
  randomize(m, 1);
  const DecodeResult r = beam_search(m, make_input({Vocabulary::kEos}, {7}));
  CHECK(r.tokens.empty());
  CHECK(r.finished);
  CHECK(r.logprob == 0.0);
  CHECK(r.lambdas.empty());
}

TEST_CASE("emitted length is capped by max_steps") {
  ModelParams m(tiny_config(Mode::kPtrNet, 20));
  randomize(m, 2, 1.0);
  // A long title leaves room to run past the cap.
  std::vector<int> title;
  for (int k = 0; k < 14; ++k) title.push_back(5 + k % 12);
  title.push_back(Vocabulary::kEos);
  for (std::size_t beam : {1, 4}) {
    DecodeOptions opt;
    opt.beam = beam;
    const DecodeResult r = beam_search(m, make_input(title, {7}), opt);
    CHECK(r.tokens.size() <= 10);
    CHECK(r.lambdas.size() == r.tokens.size());
    CHECK(r.finished);
  }
}

TEST_CASE("greedy decoding equals beam one and is repeatable") {
  for (Mode mode : {Mode::kMsPointer, Mode::kPtrNet, Mode::kPtrConcat}) {
    ModelParams m(tiny_config(mode, 16));
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      randomize(m, seed, 1.0);
      const ExampleInput in = make_input({8, 9, 10, 11, Vocabulary::kEos}, {12, Vocabulary::kSep, 13});
      DecodeOptions one;
      one.beam = 1;
      const DecodeResult g = greedy_decode(m, in);
      const DecodeResult b = beam_search(m, in, one);
      CHECK(g.tokens == b.tokens);
      CHECK(g.logprob == b.logprob);
      CHECK(greedy_decode(m, in).tokens == g.tokens);
    }
  }
}

TEST_CASE("wide beams agree with exhaustive search on small instances") {
  ModelParams m(tiny_config(Mode::kMsPointer, 12));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    randomize(m, 100 + seed, 1.5);
    const ExampleInput in = make_input({5, 6, 7, Vocabulary::kEos}, {8, Vocabulary::kSep, 6});
    DecodeOptions opt;
    opt.beam = 5 * 5 * 5;
    opt.max_steps = 3;
    const DecodeResult r = beam_search(m, in, opt);
    const Best oracle = exhaustive(m, in, 3);
    CHECK(r.tokens == oracle.tokens);
    CHECK(r.logprob == oracle.logprob);
  }
}

TEST_CASE("decoded ids never include PAD or SEP and stay inside the inputs") {
  ModelParams m(tiny_config(Mode::kMsPointer, 16));
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    randomize(m, 300 + seed, 1.5);
    ExampleInput in = make_input({8, 9, 10, Vocabulary::kEos, 0, 0}, {12, Vocabulary::kSep, 13, 0});
    in.title_mask = {1, 1, 1, 1, 0, 0};
    in.knowledge_mask = {1, 1, 1, 0};
    const DecodeResult r = beam_search(m, in);
    for (int id : r.tokens) {
      CHECK(id != Vocabulary::kPad);
      CHECK(id != Vocabulary::kSep);
      CHECK((id == 8 || id == 9 || id == 10 || id == 12 || id == 13));
    }
  }
}

TEST_CASE("lambda traces") {
  ModelParams ptr(tiny_config(Mode::kPtrNet, 16));
  randomize(ptr, 4);
  const ExampleInput in = make_input({8, 9, 10, Vocabulary::kEos}, {12, Vocabulary::kSep, 13});
  const DecodeResult r = beam_search(ptr, in);
  for (double l : r.lambdas) CHECK(l == 1.0);
  const std::vector<int> tokens{9, 10};
  for (double l : lambda_trace(ptr, in, tokens)) CHECK(l == 1.0);

  ModelParams ms(tiny_config(Mode::kMsPointer, 16));
  randomize(ms, 5);
  const DecodeResult d = beam_search(ms, in);
  const auto trace = lambda_trace(ms, in, d.tokens);
  REQUIRE(trace.size() == d.tokens.size());
  for (std::size_t i = 0; i < trace.size(); ++i) {
    CHECK(trace[i] == doctest::Approx(d.lambdas[i]).epsilon(1e-12));
    CHECK(trace[i] > 0.0);
    CHECK(trace[i] < 1.0);
  }
}

TEST_CASE("resolve_surface maps ids back through the example") {
  const Triplet t{"t6", "任天堂Switch游戏机专用背夹电池MOD-X真皮保护套", "MOD-X", "背夹电池", "MOD-X任天堂Switch背夹电池", "c"};
  const Vocabulary v = Vocabulary::build(std::vector<std::vector<std::string>>{{"任", "任", "任", "天", "天", "天", "堂", "堂", "堂"}}, 2);
  const IndexedExample ex = encode_example(t, v);
  const std::vector<int> ids{ex.knowledge_ids[0], *v.find("任"), *v.find("天"), *v.find("堂")};
  CHECK(resolve_surface(ids, ex, v) == "MOD-X任天堂");
  CHECK(resolve_surface(std::vector<int>{}, ex, v).empty());

  const Triplet oov{"o", "XY12包", "XY12", "包", "XY12", "c"};
  const IndexedExample ox = encode_example(oov, v);
  REQUIRE(ox.oov_surfaces.size() >= 1);
  CHECK(ox.oov_surfaces[0] == "XY12");
  CHECK(resolve_surface(std::vector<int>{v.unk_id(0)}, ox, v) == "XY12");

  CHECK_THROWS_AS(resolve_surface(std::vector<int>{999}, ex, v), std::invalid_argument);
  CHECK_THROWS_AS(resolve_surface(std::vector<int>{Vocabulary::kSep}, ex, v), std::invalid_argument);
}

TEST_CASE("decode records round trip through JSON lines") {
  DecodedRecord r{"p1", "任天堂switch", {"任", "天", "堂", "switch"}, -1.25, {0.1, 0.2, 0.3, 0.9}};
  const std::string line = to_json_line(r);
  const DecodedRecord back = decoded_from_json_line(line);
  CHECK(back.id == r.id);
  CHECK(back.short_title == r.short_title);
  CHECK(back.tokens == r.tokens);
  CHECK(back.logprob == r.logprob);
  CHECK(back.lambdas == r.lambdas);

  const auto path = std::filesystem::temp_directory_path() / "msptr_decoded.jsonl";
  {
    std::ofstream out(path);
    out << line << "\n\nnot json\n";
  }
  CHECK_THROWS_WITH_AS(read_decoded(path), doctest::Contains(":3:"), DataError);
  std::filesystem::remove(path);
}
