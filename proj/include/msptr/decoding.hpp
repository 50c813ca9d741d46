#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "msptr/corpus.hpp"
#include "msptr/model.hpp"

namespace msptr {

struct DecodeOptions {
  std::size_t beam = 4;
  std::size_t max_steps = 11;  // the final step is reserved for EOS
  // Rank finished hypotheses by log-prob / length instead of raw log-prob.
  bool length_normalize = false;
};

struct DecodeResult {
  std::vector<int> tokens;      // emitted content ids, EOS stripped
  std::vector<double> lambdas;  // one gate value per content token
  double logprob = 0.0;         // includes the EOS step when finished
  bool finished = false;
};

DecodeResult beam_search(const ModelParams& params, const ExampleInput& input, const DecodeOptions& options = {});

// Argmax per step, ties to the smaller id.
DecodeResult greedy_decode(const ModelParams& params, const ExampleInput& input, std::size_t max_steps = 11);

// Gate values obtained by feeding `tokens` back through the decoder.
std::vector<double> lambda_trace(const ModelParams& params, const ExampleInput& input, std::span<const int> tokens);

// Maps ids back to text using the example's OOV table. Throws
// std::invalid_argument for ids outside the example's title/knowledge.
std::string resolve_surface(std::span<const int> ids, const IndexedExample& example, const Vocabulary& vocab);

// Decode-file record: {id, short_title, tokens, logprob, lambdas}.
struct DecodedRecord {
  std::string id;
  std::string short_title;
  std::vector<std::string> tokens;
  double logprob = 0.0;
  std::vector<double> lambdas;
};

std::string to_json_line(const DecodedRecord& record);
DecodedRecord decoded_from_json_line(std::string_view line);
std::vector<DecodedRecord> read_decoded(const std::filesystem::path& path);

}  // namespace msptr
