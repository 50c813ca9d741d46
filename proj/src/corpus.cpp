#include "msptr/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include <json.hpp>

namespace msptr {

namespace {

// Decodes one UTF-8 code point starting at text[pos]; returns its byte length.
// Malformed bytes decode to themselves with length 1.
std::size_t next_code_point(std::string_view text, std::size_t pos, char32_t& cp) {
  const auto b0 = static_cast<unsigned char>(text[pos]);
  auto cont = [&](std::size_t k) -> int {
    if (pos + k >= text.size()) return -1;
    const auto b = static_cast<unsigned char>(text[pos + k]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) {
    cp = b0;
    return 1;
  }
  std::size_t len = (b0 & 0xE0) == 0xC0 ? 2 : (b0 & 0xF0) == 0xE0 ? 3 : (b0 & 0xF8) == 0xF0 ? 4 : 0;
  if (len == 0) {
    cp = b0;
    return 1;
  }
  char32_t value = b0 & (0x7F >> len);
  for (std::size_t k = 1; k < len; ++k) {
    const int c = cont(k);
    if (c < 0) {
      cp = b0;
      return 1;
    }
    value = (value << 6) | static_cast<char32_t>(c);
  }
  cp = value;
  return len;
}

bool is_space(char32_t cp) {
  return cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r' || cp == U'\v' || cp == U'\f' || cp == 0xA0 ||
         cp == 0x3000 || (cp >= 0x2000 && cp <= 0x200B) || cp == 0x202F || cp == 0x205F || cp == 0xFEFF;
}

bool is_cjk(char32_t cp) {
  return (cp >= 0x3040 && cp <= 0x30FF) || (cp >= 0x3100 && cp <= 0x312F) || (cp >= 0x3400 && cp <= 0x4DBF) ||
         (cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0xAC00 && cp <= 0xD7AF) || (cp >= 0xF900 && cp <= 0xFAFF) ||
         (cp >= 0x20000 && cp <= 0x2FFFF);
}

bool is_word_char(char32_t cp) {
  if ((cp >= U'0' && cp <= U'9') || (cp >= U'a' && cp <= U'z') || (cp >= U'A' && cp <= U'Z')) return true;
  return cp >= 0xC0 && cp <= 0x24F && cp != 0xD7 && cp != 0xF7;
}

bool is_connector(char32_t cp) { return cp == U'-' || cp == U'.' || cp == U'\''; }

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

// ---------------------------------------------------------------------------
// Tokenization

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string run;
  auto flush = [&] {
    if (!run.empty()) tokens.push_back(std::move(run));
    run.clear();
  };
  std::size_t pos = 0;
  while (pos < text.size()) {
    char32_t cp;
    const std::size_t len = next_code_point(text, pos, cp);
    const std::string_view bytes = text.substr(pos, len);
    if (is_space(cp)) {
      flush();
    } else if (is_word_char(cp)) {
      run.append(bytes);
    } else if (is_connector(cp) && !run.empty() && pos + len < text.size()) {
      char32_t next;
      next_code_point(text, pos + len, next);
      if (is_word_char(next)) {
        run.append(bytes);
      } else {
        flush();
        tokens.emplace_back(bytes);
      }
    } else {
      flush();
      tokens.emplace_back(bytes);
    }
    pos += len;
  }
  flush();
  return tokens;
}

bool is_number_token(std::string_view token) {
  bool digit = false;
  for (char c : token) {
    if (c >= '0' && c <= '9') {
      digit = true;
    } else if (c != '.') {
      return false;
    }
  }
  return digit;
}

std::vector<std::string> filter_numbers(std::vector<std::string> tokens, std::string_view brand) {
  std::erase_if(tokens, [&](const std::string& t) { return is_number_token(t) && brand.find(t) == std::string_view::npos; });
  return tokens;
}

bool is_cjk_token(std::string_view token) {
  if (token.empty()) return false;
  char32_t cp;
  next_code_point(token, 0, cp);
  return is_cjk(cp);
}

std::string join_surface(std::span<const std::string> tokens) {
  std::string out;
  bool prev_latin = false;
  for (const auto& t : tokens) {
    const bool latin = !is_cjk_token(t);
    if (latin && prev_latin) out.push_back(' ');
    out += t;
    prev_latin = latin;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(std::size_t unk_pool) : unk_pool_(unk_pool) {
  if (unk_pool == 0) throw std::invalid_argument("UNK pool size must be positive");
  tokens_ = {"<pad>", "<eos>", std::string(kSepSurface), "<go>"};
  for (std::size_t k = 0; k < unk_pool; ++k) tokens_.push_back("<unk:" + std::to_string(k) + ">");
}

void Vocabulary::add_regular(const std::string& token) {
  if (token == kSepSurface) return;
  if (index_.count(token)) throw DataError("duplicate vocabulary token: " + token);
  index_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
}

Vocabulary Vocabulary::build(std::span<const std::vector<std::string>> token_streams, std::size_t min_count,
                             std::size_t unk_pool) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& stream : token_streams)
    for (const auto& t : stream) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [token, count] : counts)
    if (count > min_count && token != kSepSurface) kept.emplace_back(token, count);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocabulary vocab(unk_pool);
  for (const auto& [token, count] : kept) vocab.add_regular(token);
  return vocab;
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  if (token == kSepSurface) return kSep;
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("vocabulary id " + std::to_string(id) + " out of range");
  }
  return tokens_[id];
}

int Vocabulary::unk_id(std::size_t slot) const {
  if (slot >= unk_pool_) throw std::out_of_range("UNK slot out of range");
  return kFirstUnk + static_cast<int>(slot);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary file " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read vocabulary file " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  if (lines.size() < kFirstUnk + 1 || lines[kPad] != "<pad>" || lines[kEos] != "<eos>" || lines[kSep] != kSepSurface ||
      lines[kGo] != "<go>") {
    throw DataError("vocabulary file " + path.string() + " does not start with the special tokens");
  }
  std::size_t pool = 0;
  while (kFirstUnk + pool < lines.size() && lines[kFirstUnk + pool] == "<unk:" + std::to_string(pool) + ">") ++pool;
  if (pool == 0) throw DataError("vocabulary file " + path.string() + " has no UNK pool");
  Vocabulary vocab(pool);
  for (std::size_t i = kFirstUnk + pool; i < lines.size(); ++i) vocab.add_regular(lines[i]);
  return vocab;
}

// ---------------------------------------------------------------------------
// Encoding

PreparedTokens prepare_tokens(const Triplet& triplet) {
  PreparedTokens out;
  out.title = filter_numbers(tokenize(triplet.title), triplet.brand);
  out.brand = filter_numbers(tokenize(triplet.brand), triplet.brand);
  out.commodity = filter_numbers(tokenize(triplet.commodity), triplet.brand);
  out.short_title = filter_numbers(tokenize(triplet.short_title), triplet.brand);
  return out;
}

IndexedExample encode_example(const Triplet& triplet, const Vocabulary& vocab) {
  return encode_example(triplet, prepare_tokens(triplet), vocab);
}

IndexedExample encode_example(const Triplet& triplet, const PreparedTokens& tokens, const Vocabulary& vocab) {
  if (tokens.brand.empty() && tokens.commodity.empty()) {
    throw DataError("record '" + triplet.id + "' has neither brand nor commodity");
  }
  IndexedExample ex;
  ex.id = triplet.id;
  ex.category = triplet.category;

  std::map<std::string, std::size_t> oov;  // surface -> slot
  auto lookup = [&](const std::string& token) -> int {
    if (auto id = vocab.find(token)) return *id;
    auto it = oov.find(token);
    if (it != oov.end()) return vocab.unk_id(it->second);
    std::size_t slot = ex.oov_surfaces.size();
    if (slot >= vocab.unk_pool_size()) {
      slot = vocab.unk_pool_size() - 1;
      ++ex.oov_overflow;
    } else {
      ex.oov_surfaces.push_back(token);
    }
    oov.emplace(token, slot);
    return vocab.unk_id(slot);
  };

  for (const auto& t : tokens.title) ex.title_ids.push_back(lookup(t));
  ex.title_ids.push_back(Vocabulary::kEos);
  for (const auto& t : tokens.brand) ex.knowledge_ids.push_back(lookup(t));
  ex.brand_length = ex.knowledge_ids.size();
  ex.knowledge_ids.push_back(Vocabulary::kSep);
  for (const auto& t : tokens.commodity) ex.knowledge_ids.push_back(lookup(t));
  for (const auto& t : tokens.short_title) ex.target_ids.push_back(lookup(t));
  ex.target_ids.push_back(Vocabulary::kEos);

  const bool copyable_knowledge = std::any_of(ex.knowledge_ids.begin(), ex.knowledge_ids.end(),
                                              [](int id) { return id != Vocabulary::kSep; });
  if (!copyable_knowledge) throw DataError("record '" + triplet.id + "' has no usable knowledge tokens");
  return ex;
}

std::string surface(int id, const IndexedExample& example, const Vocabulary& vocab) {
  if (vocab.is_unk(id)) {
    const std::size_t slot = vocab.unk_slot(id);
    if (slot < example.oov_surfaces.size()) return example.oov_surfaces[slot];
  }
  return vocab.token(id);
}

std::vector<std::string> decode_ids(std::span<const int> ids, const IndexedExample& example,
                                    const Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(surface(id, example, vocab));
  return out;
}

Vocabulary build_vocabulary(std::span<const Triplet> records, std::size_t min_count, std::size_t unk_pool) {
  std::vector<std::vector<std::string>> streams;
  streams.reserve(records.size() * 4);
  for (const auto& r : records) {
    PreparedTokens p = prepare_tokens(r);
    streams.push_back(std::move(p.title));
    streams.push_back(std::move(p.brand));
    streams.push_back(std::move(p.commodity));
    streams.push_back(std::move(p.short_title));
  }
  return Vocabulary::build(streams, min_count, unk_pool);
}

std::vector<IndexedExample> encode_all(std::span<const Triplet> records, const Vocabulary& vocab) {
  std::vector<IndexedExample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(encode_example(r, vocab));
  return out;
}

bool is_copyable(const IndexedExample& example) {
  auto present = [&](int id) {
    return std::find(example.title_ids.begin(), example.title_ids.end(), id) != example.title_ids.end() ||
           (id != Vocabulary::kSep &&
            std::find(example.knowledge_ids.begin(), example.knowledge_ids.end(), id) != example.knowledge_ids.end());
  };
  return std::all_of(example.target_ids.begin(), example.target_ids.end(),
                     [&](int id) { return id != Vocabulary::kSep && id != Vocabulary::kPad && present(id); });
}

// ---------------------------------------------------------------------------
// Splitting and batching

SplitIndices stratified_split(std::span<const Triplet> dataset, const SplitRatios& ratios, std::uint64_t seed) {
  const double total = ratios.train + ratios.valid + ratios.test;
  if (ratios.train < 0 || ratios.valid < 0 || ratios.test < 0 || std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("split ratios must be non-negative and sum to 1");
  }
  std::map<std::string, std::vector<std::size_t>> by_category;
  for (std::size_t i = 0; i < dataset.size(); ++i) by_category[dataset[i].category].push_back(i);

  SplitIndices split;
  std::mt19937_64 rng(seed);
  for (auto& [category, members] : by_category) {
    if (members.size() < 3) {
      split.small_categories.push_back(category);
      split.train.insert(split.train.end(), members.begin(), members.end());
      continue;
    }
    std::shuffle(members.begin(), members.end(), rng);
    const auto n = static_cast<double>(members.size());
    const auto n_valid = static_cast<std::size_t>(std::llround(n * ratios.valid));
    const auto n_test = static_cast<std::size_t>(std::llround(n * ratios.test));
    const std::size_t n_train = members.size() - n_valid - n_test;
    split.train.insert(split.train.end(), members.begin(), members.begin() + n_train);
    split.valid.insert(split.valid.end(), members.begin() + n_train, members.begin() + n_train + n_valid);
    split.test.insert(split.test.end(), members.begin() + n_train + n_valid, members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.valid.begin(), split.valid.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

PaddedSequences pad_sequences(std::span<const std::vector<int>> sequences) {
  PaddedSequences out;
  out.rows = sequences.size();
  for (const auto& s : sequences) out.width = std::max(out.width, s.size());
  out.ids.assign(out.rows * out.width, 0);
  out.mask.assign(out.rows * out.width, 0);
  for (std::size_t r = 0; r < out.rows; ++r) {
    out.lengths.push_back(sequences[r].size());
    for (std::size_t c = 0; c < sequences[r].size(); ++c) {
      out.ids[r * out.width + c] = sequences[r][c];
      out.mask[r * out.width + c] = 1;
    }
  }
  return out;
}

std::vector<Batch> make_batches(std::span<const IndexedExample> examples, std::size_t batch_size,
                                std::span<const std::size_t> order) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  std::vector<std::size_t> identity;
  if (order.empty()) {
    identity.resize(examples.size());
    for (std::size_t i = 0; i < identity.size(); ++i) identity[i] = i;
    order = identity;
  }
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    Batch batch;
    std::vector<std::vector<int>> titles, knowledge, targets;
    for (std::size_t k = start; k < std::min(order.size(), start + batch_size); ++k) {
      const auto& ex = examples[order[k]];
      batch.indices.push_back(order[k]);
      titles.push_back(ex.title_ids);
      knowledge.push_back(ex.knowledge_ids);
      targets.push_back(ex.target_ids);
    }
    batch.title = pad_sequences(titles);
    batch.knowledge = pad_sequences(knowledge);
    batch.target = pad_sequences(targets);
    batches.push_back(std::move(batch));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// File formats

namespace {

Triplet triplet_from_json(const nlohmann::json& j, std::string_view source, std::size_t line_no) {
  auto where = [&] { return std::string(source) + ":" + std::to_string(line_no); };
  if (!j.is_object()) throw DataError(where() + ": expected a JSON object");
  auto field = [&](const char* name, bool required) -> std::string {
    auto it = j.find(name);
    if (it == j.end() || it->is_null()) {
      if (required) throw DataError(where() + ": missing field '" + name + "'");
      return {};
    }
    if (it->is_string()) return it->get<std::string>();
    if (it->is_number()) return it->dump();
    throw DataError(where() + ": field '" + name + "' must be a string");
  };
  Triplet t;
  t.id = field("id", false);
  if (t.id.empty()) t.id = std::to_string(line_no - 1);
  t.title = field("title", true);
  t.brand = field("brand", true);
  t.commodity = field("commodity", true);
  t.short_title = field("short_title", true);
  t.category = field("category", true);
  return t;
}

}  // namespace

std::vector<Triplet> parse_jsonl(std::string_view text, std::string_view source) {
  std::vector<Triplet> out;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    const std::string line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(std::string(source) + ":" + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
    }
    out.push_back(triplet_from_json(j, source, line_no));
  }
  return out;
}

std::vector<Triplet> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_jsonl(buffer.str(), path.string());
}

std::string to_jsonl_line(const Triplet& t) {
  nlohmann::ordered_json j;
  j["id"] = t.id;
  j["title"] = t.title;
  j["brand"] = t.brand;
  j["commodity"] = t.commodity;
  j["short_title"] = t.short_title;
  j["category"] = t.category;
  return j.dump();
}

void write_jsonl(const std::filesystem::path& path, std::span<const Triplet> triplets) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& t : triplets) out << to_jsonl_line(t) << '\n';
}

std::vector<Triplet> read_tsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<Triplet> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1)
      cols.push_back(line.substr(start, tab - start));
    cols.push_back(line.substr(start));
    if (cols.size() != 5) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 5 tab-separated columns, got " +
                      std::to_string(cols.size()));
    }
    out.push_back({std::to_string(line_no - 1), cols[0], cols[1], cols[2], cols[3], cols[4]});
  }
  return out;
}

std::vector<Triplet> read_triplets(const std::filesystem::path& path) {
  return path.extension() == ".tsv" ? read_tsv(path) : read_jsonl(path);
}

std::vector<Triplet> filter_training_records(std::span<const Triplet> records, std::size_t max_units) {
  std::vector<Triplet> kept;
  for (const auto& r : records) {
    const auto tokens = filter_numbers(tokenize(r.short_title), r.brand);
    if (display_length(tokens) <= max_units) kept.push_back(r);
  }
  return kept;
}

}  // namespace msptr
