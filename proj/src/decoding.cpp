#include "msptr/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

namespace msptr {

namespace {

struct Hypothesis {
  std::vector<int> tokens;  // includes the terminal EOS once finished
  std::vector<double> lambdas;
  double logprob = 0.0;
  bool finished = false;
  DecoderStep step;
};

double score(const Hypothesis& h, const DecodeOptions& options) {
  if (!options.length_normalize || h.tokens.empty()) return h.logprob;
  return h.logprob / static_cast<double>(h.tokens.size());
}

// Higher score first, then earlier finish (shorter), then smaller first-differing id.
bool better(const Hypothesis& a, const Hypothesis& b, const DecodeOptions& options) {
  const double sa = score(a, options), sb = score(b, options);
  if (sa != sb) return sa > sb;
  if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
  return a.tokens < b.tokens;
}

// Top-k words by probability, ties to the smaller id; zero-mass words are
// unreachable. On the final step only EOS may be emitted.
std::vector<WordProb> top_words(std::vector<WordProb> dist, std::size_t k, bool final_step) {
  std::erase_if(dist, [&](const WordProb& w) { return !(w.prob > 0.0) || (final_step && w.id != Vocabulary::kEos); });
  std::stable_sort(dist.begin(), dist.end(), [](const WordProb& a, const WordProb& b) {
    return a.prob != b.prob ? a.prob > b.prob : a.id < b.id;
  });
  if (dist.size() > k) dist.resize(k);
  return dist;
}

void check_copy_only(const ForwardPass& pass, std::span<const int> tokens) {
  auto live_in = [](const AttentionMemory& m, int id) {
    for (std::size_t i = 0; i < m.ids.size(); ++i)
      if (m.mask[i] && m.ids[i] == id) return true;
    return false;
  };
  for (int id : tokens) {
    const bool ok = live_in(pass.title_memory(), id) ||
                    (pass.knowledge_memory() && live_in(*pass.knowledge_memory(), id));
    if (!ok || id == Vocabulary::kPad || id == Vocabulary::kSep) {
      throw std::logic_error("decoder emitted id " + std::to_string(id) + " outside the copyable inputs");
    }
  }
}

DecodeResult to_result(const Hypothesis& h) {
  DecodeResult r;
  r.tokens = h.tokens;
  r.lambdas = h.lambdas;
  r.logprob = h.logprob;
  r.finished = h.finished;
  if (r.finished) {
    r.tokens.pop_back();
    r.lambdas.pop_back();
  }
  return r;
}

}  // namespace

DecodeResult beam_search(const ModelParams& params, const ExampleInput& input, const DecodeOptions& options) {
  if (options.beam == 0) throw std::invalid_argument("beam size must be positive");
  Tape tape;
  ForwardPass pass(tape, params, input);

  std::vector<Hypothesis> live(1);
  live[0].step = pass.initial();
  std::vector<Hypothesis> pool;
  auto order = [&](const Hypothesis& a, const Hypothesis& b) { return better(a, b, options); };

  for (std::size_t t = 0; t < options.max_steps && !live.empty(); ++t) {
    std::vector<Hypothesis> candidates;
    for (const Hypothesis& h : live) {
      const int prev = h.tokens.empty() ? Vocabulary::kGo : h.tokens.back();
      const DecoderStep step = pass.step(h.step, prev);
      const double lambda = pass.lambda(step);
      for (const WordProb& w : top_words(pass.distribution(step), options.beam, t + 1 == options.max_steps)) {
        Hypothesis next;
        next.tokens = h.tokens;
        next.tokens.push_back(w.id);
        next.lambdas = h.lambdas;
        next.lambdas.push_back(lambda);
        next.logprob = h.logprob + std::log(w.prob);
        next.finished = w.id == Vocabulary::kEos;
        next.step = step;
        candidates.push_back(std::move(next));
      }
    }
    std::sort(candidates.begin(), candidates.end(), order);
    if (candidates.size() > options.beam) candidates.resize(options.beam);

    live.clear();
    for (auto& c : candidates) (c.finished ? pool : live).push_back(std::move(c));
    std::sort(pool.begin(), pool.end(), order);
    if (pool.size() > options.beam) pool.resize(options.beam);

    // Log-probs only decrease, so once the pool is full nothing live can still win.
    if (!options.length_normalize && pool.size() == options.beam && !live.empty()) {
      const double best_live = std::max_element(live.begin(), live.end(), [](const auto& a, const auto& b) {
                                 return a.logprob < b.logprob;
                               })->logprob;
      if (best_live <= pool.back().logprob) live.clear();
    }
  }

  const Hypothesis* best = nullptr;
  for (const auto& h : pool)
    if (!best || better(h, *best, options)) best = &h;
  if (!best)
    for (const auto& h : live)
      if (!best || better(h, *best, options)) best = &h;
  if (!best) throw std::logic_error("beam search produced no hypothesis");
  check_copy_only(pass, best->tokens);
  return to_result(*best);
}

DecodeResult greedy_decode(const ModelParams& params, const ExampleInput& input, std::size_t max_steps) {
  Tape tape;
  ForwardPass pass(tape, params, input);
  DecoderStep step = pass.initial();
  Hypothesis h;
  for (std::size_t t = 0; t < max_steps; ++t) {
    step = pass.step(step, h.tokens.empty() ? Vocabulary::kGo : h.tokens.back());
    const auto top = top_words(pass.distribution(step), 1, t + 1 == max_steps);
    if (top.empty()) break;
    h.tokens.push_back(top[0].id);
    h.lambdas.push_back(pass.lambda(step));
    h.logprob += std::log(top[0].prob);
    if (top[0].id == Vocabulary::kEos) {
      h.finished = true;
      break;
    }
  }
  check_copy_only(pass, h.tokens);
  return to_result(h);
}

std::vector<double> lambda_trace(const ModelParams& params, const ExampleInput& input, std::span<const int> tokens) {
  Tape tape;
  ForwardPass pass(tape, params, input);
  DecoderStep step = pass.initial();
  std::vector<double> trace;
  int prev = Vocabulary::kGo;
  for (int id : tokens) {
    step = pass.step(step, prev);
    trace.push_back(pass.lambda(step));
    prev = id;
  }
  return trace;
}

std::string resolve_surface(std::span<const int> ids, const IndexedExample& example, const Vocabulary& vocab) {
  std::vector<std::string> words;
  for (int id : ids) {
    const bool in_title = std::find(example.title_ids.begin(), example.title_ids.end(), id) != example.title_ids.end();
    const bool in_knowledge =
        std::find(example.knowledge_ids.begin(), example.knowledge_ids.end(), id) != example.knowledge_ids.end();
    if ((!in_title && !in_knowledge) || id == Vocabulary::kEos || id == Vocabulary::kSep || id == Vocabulary::kPad) {
      throw std::invalid_argument("id " + std::to_string(id) + " is not a copyable token of example '" + example.id +
                                  "'");
    }
    words.push_back(surface(id, example, vocab));
  }
  return join_surface(words);
}

std::string to_json_line(const DecodedRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["short_title"] = r.short_title;
  j["tokens"] = r.tokens;
  j["logprob"] = r.logprob;
  j["lambdas"] = r.lambdas;
  return j.dump();
}

DecodedRecord decoded_from_json_line(std::string_view line) {
  const auto j = nlohmann::json::parse(line);
  DecodedRecord r;
  r.id = j.at("id").get<std::string>();
  r.short_title = j.at("short_title").get<std::string>();
  if (j.contains("tokens")) r.tokens = j.at("tokens").get<std::vector<std::string>>();
  if (j.contains("logprob")) r.logprob = j.at("logprob").get<double>();
  if (j.contains("lambdas")) r.lambdas = j.at("lambdas").get<std::vector<double>>();
  return r;
}

std::vector<DecodedRecord> read_decoded(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<DecodedRecord> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(decoded_from_json_line(line));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace msptr
