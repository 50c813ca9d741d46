#include "msptr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace msptr {

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(std::span<const std::string> tokens, std::size_t k) {
  NgramCounts out;
  if (tokens.size() < k) return out;
  for (std::size_t i = 0; i + k <= tokens.size(); ++i) ++out[std::vector<std::string>(tokens.begin() + i, tokens.begin() + i + k)];
  return out;
}

std::size_t clipped_overlap(const NgramCounts& cand, const NgramCounts& ref) {
  std::size_t total = 0;
  for (const auto& [g, c] : cand) {
    auto it = ref.find(g);
    if (it != ref.end()) total += std::min(c, it->second);
  }
  return total;
}

double f1(double p, double r) { return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace

double bleu(std::span<const Tokens> candidates, std::span<const std::vector<Tokens>> references, int n, bool smooth) {
  if (candidates.empty()) throw std::invalid_argument("bleu: empty candidate set");
  if (candidates.size() != references.size()) throw std::invalid_argument("bleu: candidates and references misaligned");
  if (n < 1) throw std::invalid_argument("bleu: n must be >= 1");

  std::vector<double> matched(n, 0.0), total(n, 0.0);
  double cand_len = 0.0, ref_len = 0.0;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const Tokens& cand = candidates[s];
    const auto& refs = references[s];
    if (refs.empty()) throw std::invalid_argument("bleu: candidate without references");
    cand_len += static_cast<double>(cand.size());
    std::size_t closest = refs[0].size();
    for (const auto& r : refs) {
      const auto diff = [&](std::size_t len) { return std::abs(static_cast<long>(len) - static_cast<long>(cand.size())); };
      if (diff(r.size()) < diff(closest) || (diff(r.size()) == diff(closest) && r.size() < closest)) closest = r.size();
    }
    ref_len += static_cast<double>(closest);
    for (int k = 1; k <= n; ++k) {
      const NgramCounts c = ngrams(cand, k);
      NgramCounts max_ref;
      for (const auto& r : refs)
        for (const auto& [g, cnt] : ngrams(r, k)) max_ref[g] = std::max(max_ref[g], cnt);
      matched[k - 1] += static_cast<double>(clipped_overlap(c, max_ref));
      total[k - 1] += static_cast<double>(cand.size() >= static_cast<std::size_t>(k) ? cand.size() - k + 1 : 0);
    }
  }
  if (cand_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (int k = 0; k < n; ++k) {
    double m = matched[k], t = total[k];
    if (smooth && k > 0) {
      m += 1.0;
      t += 1.0;
    }
    if (m == 0.0 || t == 0.0) return 0.0;
    log_sum += std::log(m / t);
  }
  const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return 100.0 * bp * std::exp(log_sum / n);
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge(const Tokens& candidate, std::span<const Tokens> references, RougeVariant variant) {
  if (references.empty()) throw std::invalid_argument("rouge: no reference");
  double best = 0.0;
  for (const Tokens& ref : references) {
    if (ref.empty()) throw std::invalid_argument("rouge: empty reference");
    double overlap = 0.0, cand_units = 0.0, ref_units = 0.0;
    if (variant == RougeVariant::kRougeL) {
      overlap = static_cast<double>(lcs_length(candidate, ref));
      cand_units = static_cast<double>(candidate.size());
      ref_units = static_cast<double>(ref.size());
    } else {
      const std::size_t k = variant == RougeVariant::kRouge1 ? 1 : 2;
      overlap = static_cast<double>(clipped_overlap(ngrams(candidate, k), ngrams(ref, k)));
      cand_units = candidate.size() >= k ? static_cast<double>(candidate.size() - k + 1) : 0.0;
      ref_units = ref.size() >= k ? static_cast<double>(ref.size() - k + 1) : 0.0;
    }
    const double p = cand_units > 0 ? overlap / cand_units : 0.0;
    const double r = ref_units > 0 ? overlap / ref_units : 0.0;
    best = std::max(best, f1(p, r));
  }
  return 100.0 * best;
}

bool brand_retained(std::string_view output, std::string_view brand) {
  const std::string text = join_surface(tokenize(output));
  std::size_t start = 0;
  while (start <= brand.size()) {
    std::size_t end = brand.find('/', start);
    if (end == std::string_view::npos) end = brand.size();
    const std::string variant = join_surface(tokenize(brand.substr(start, end - start)));
    if (!variant.empty() && text.find(variant) != std::string::npos) return true;
    start = end + 1;
  }
  return false;
}

double brand_retention_error(std::span<const std::string> outputs, std::span<const std::string> brands) {
  if (outputs.size() != brands.size()) throw std::invalid_argument("brand_retention_error: misaligned inputs");
  if (outputs.empty()) return 0.0;
  std::size_t errors = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i)
    if (!brand_retained(outputs[i], brands[i])) ++errors;
  return static_cast<double>(errors) / static_cast<double>(outputs.size());
}

Tokens truncate_tokens(std::span<const std::string> title_tokens, std::size_t limit) {
  Tokens out;
  for (const auto& t : title_tokens) {
    if (out.size() + 1 > limit) break;
    out.push_back(t);
  }
  return out;
}

std::string truncation_baseline(std::span<const std::string> title_tokens, std::size_t limit) {
  return join_surface(truncate_tokens(title_tokens, limit));
}

EvalReport evaluate(std::span<const std::string> ids, std::span<const std::string> candidates,
                    std::span<const std::string> references, std::span<const std::string> brands, bool smooth) {
  if (candidates.size() != references.size() || ids.size() != candidates.size()) {
    throw std::invalid_argument("evaluate: candidates, references and ids must align");
  }
  if (!brands.empty() && brands.size() != candidates.size()) throw std::invalid_argument("evaluate: brands misaligned");
  if (candidates.empty()) throw std::invalid_argument("evaluate: nothing to score");

  EvalReport report;
  report.count = candidates.size();
  std::vector<Tokens> cand_tokens;
  std::vector<std::vector<Tokens>> ref_tokens;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    cand_tokens.push_back(tokenize(candidates[i]));
    ref_tokens.push_back({tokenize(references[i])});
  }
  report.bleu1 = bleu(cand_tokens, ref_tokens, 1, smooth);
  report.bleu2 = bleu(cand_tokens, ref_tokens, 2, smooth);
  report.bleu4 = bleu(cand_tokens, ref_tokens, 4, smooth);

  for (std::size_t i = 0; i < candidates.size(); ++i) {
    ExampleScores s;
    s.id = ids[i];
    const std::span<const Tokens> one_c(&cand_tokens[i], 1);
    const std::span<const std::vector<Tokens>> one_r(&ref_tokens[i], 1);
    s.bleu1 = bleu(one_c, one_r, 1, smooth);
    s.bleu2 = bleu(one_c, one_r, 2, smooth);
    s.bleu4 = bleu(one_c, one_r, 4, smooth);
    s.rouge1 = rouge(cand_tokens[i], ref_tokens[i], RougeVariant::kRouge1);
    s.rouge2 = rouge(cand_tokens[i], ref_tokens[i], RougeVariant::kRouge2);
    s.rougeL = rouge(cand_tokens[i], ref_tokens[i], RougeVariant::kRougeL);
    report.rouge1 += s.rouge1;
    report.rouge2 += s.rouge2;
    report.rougeL += s.rougeL;
    if (!brands.empty()) {
      s.brand_ok = brand_retained(candidates[i], brands[i]);
      if (!*s.brand_ok) ++report.brand_errors;
    }
    report.examples.push_back(std::move(s));
  }
  const double n = static_cast<double>(candidates.size());
  report.rouge1 /= n;
  report.rouge2 /= n;
  report.rougeL /= n;
  if (!brands.empty()) report.brand_error_rate = static_cast<double>(report.brand_errors) / n;
  return report;
}

std::string report_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["count"] = report.count;
  j["bleu1"] = report.bleu1;
  j["bleu2"] = report.bleu2;
  j["bleu4"] = report.bleu4;
  j["rouge1"] = report.rouge1;
  j["rouge2"] = report.rouge2;
  j["rougeL"] = report.rougeL;
  if (report.brand_error_rate) {
    j["brand_error_rate"] = *report.brand_error_rate;
    j["brand_errors"] = report.brand_errors;
  }
  return j.dump(2);
}

void write_report(const std::filesystem::path& json_path, const EvalReport& report) {
  std::ofstream out(json_path);
  if (!out) throw std::runtime_error("cannot write " + json_path.string());
  out << report_json(report) << '\n';
}

void write_example_csv(const std::filesystem::path& csv_path, const EvalReport& report) {
  std::ofstream out(csv_path);
  if (!out) throw std::runtime_error("cannot write " + csv_path.string());
  out.precision(8);
  out << "id,bleu1,bleu2,bleu4,rouge1,rouge2,rougeL,brand_ok\n";
  for (const auto& s : report.examples) {
    out << s.id << ',' << s.bleu1 << ',' << s.bleu2 << ',' << s.bleu4 << ',' << s.rouge1 << ',' << s.rouge2 << ','
        << s.rougeL << ',';
    if (s.brand_ok) out << (*s.brand_ok ? 1 : 0);
    out << '\n';
  }
}

}  // namespace msptr
