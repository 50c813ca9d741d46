#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "msptr/corpus.hpp"

namespace msptr {

using Tokens = std::vector<std::string>;

// Corpus-level BLEU-n (x100): geometric mean of clipped k-gram precisions for
// k = 1..n times the brevity penalty. Counts are clipped against the maximum
// over each candidate's references; the reference length is the closest one
// (shorter wins ties). With `smooth`, k >= 2 precisions use add-one counts.
double bleu(std::span<const Tokens> candidates, std::span<const std::vector<Tokens>> references, int n,
            bool smooth = false);

enum class RougeVariant { kRouge1, kRouge2, kRougeL };

// ROUGE F1 (x100) for one candidate; the maximum over references.
double rouge(const Tokens& candidate, std::span<const Tokens> references, RougeVariant variant);

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

// An output is correct when one "/"-separated brand alternative appears
// intact as a substring of it (both sides normalized through the tokenizer).
bool brand_retained(std::string_view output, std::string_view brand);
double brand_retention_error(std::span<const std::string> outputs, std::span<const std::string> brands);

// Longest token prefix within `limit` display units.
Tokens truncate_tokens(std::span<const std::string> title_tokens, std::size_t limit = 10);
std::string truncation_baseline(std::span<const std::string> title_tokens, std::size_t limit = 10);

struct ExampleScores {
  std::string id;
  double bleu1 = 0, bleu2 = 0, bleu4 = 0, rouge1 = 0, rouge2 = 0, rougeL = 0;
  std::optional<bool> brand_ok;
};

struct EvalReport {
  double bleu1 = 0, bleu2 = 0, bleu4 = 0;
  double rouge1 = 0, rouge2 = 0, rougeL = 0;  // mean per-example F1
  std::optional<double> brand_error_rate;
  std::size_t count = 0;
  std::size_t brand_errors = 0;
  std::vector<ExampleScores> examples;
};

// Scores candidate texts against reference texts, both tokenized with the
// corpus tokenizer. `brands` may be empty to skip the brand check.
EvalReport evaluate(std::span<const std::string> ids, std::span<const std::string> candidates,
                    std::span<const std::string> references, std::span<const std::string> brands = {},
                    bool smooth = false);

std::string report_json(const EvalReport& report);
void write_report(const std::filesystem::path& json_path, const EvalReport& report);
void write_example_csv(const std::filesystem::path& csv_path, const EvalReport& report);

}  // namespace msptr
