#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "msptr/metrics.hpp"

namespace msptr::testing {

struct GoldenCase {
  std::string name;
  std::vector<Tokens> candidates;
  std::vector<std::vector<Tokens>> references;
  double expected[6];  // bleu1, bleu2, bleu4, rouge1, rouge2, rougeL
};

inline std::vector<GoldenCase> load_metric_golden() {
  std::ifstream in(std::string(MSPTR_GOLDEN_DIR) + "/metrics_golden.json");
  if (!in) throw std::runtime_error("cannot open metrics_golden.json");
  const nlohmann::json doc = nlohmann::json::parse(in);
  std::vector<GoldenCase> out;
  for (const auto& c : doc.at("cases")) {
    GoldenCase g;
    g.name = c.at("name").get<std::string>();
    for (const auto& s : c.at("cand")) g.candidates.push_back(tokenize(s.get<std::string>()));
    for (const auto& refs : c.at("refs")) {
      std::vector<Tokens> r;
      for (const auto& s : refs) r.push_back(tokenize(s.get<std::string>()));
      g.references.push_back(std::move(r));
    }
    const char* keys[] = {"bleu1", "bleu2", "bleu4", "rouge1", "rouge2", "rougeL"};
    for (int k = 0; k < 6; ++k) g.expected[k] = c.at(keys[k]).get<double>();
    out.push_back(std::move(g));
  }
  return out;
}

// Computes the six scores for a case. ROUGE is averaged over the case's
// candidates, BLEU is corpus-level.
inline std::vector<double> score_case(const GoldenCase& g) {
  std::vector<double> got{bleu(g.candidates, g.references, 1), bleu(g.candidates, g.references, 2),
                          bleu(g.candidates, g.references, 4)};
  for (RougeVariant v : {RougeVariant::kRouge1, RougeVariant::kRouge2, RougeVariant::kRougeL}) {
    double sum = 0.0;
    for (std::size_t i = 0; i < g.candidates.size(); ++i) sum += rouge(g.candidates[i], g.references[i], v);
    got.push_back(sum / static_cast<double>(g.candidates.size()));
  }
  return got;
}

}  // namespace msptr::testing
