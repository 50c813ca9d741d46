#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace msptr {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One product record: original title, background knowledge (brand +
// commodity), reference short title and a category label.
struct Triplet {
  std::string id;
  std::string title;
  std::string brand;
  std::string commodity;
  std::string short_title;
  std::string category;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

// ---------------------------------------------------------------------------
// Tokenization

// Han/kana/hangul code points are one token each; runs of Latin letters and
// digits (with inner '-', '.', '\'') form one token; any other visible code
// point is a token by itself. Whitespace only separates.
std::vector<std::string> tokenize(std::string_view text);

// True for tokens made only of digits and '.' (at least one digit).
bool is_number_token(std::string_view token);

// Drops number tokens that do not occur inside `brand`.
std::vector<std::string> filter_numbers(std::vector<std::string> tokens, std::string_view brand);

// One unit per token: a CJK character and a Latin word both count once.
inline std::size_t display_length(std::span<const std::string> tokens) { return tokens.size(); }

bool is_cjk_token(std::string_view token);

// Joins tokens for display: no separator around CJK tokens, one space between
// consecutive non-CJK tokens.
std::string join_surface(std::span<const std::string> tokens);

// ---------------------------------------------------------------------------
// Vocabulary

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kEos = 1;
  static constexpr int kSep = 2;
  static constexpr int kGo = 3;
  static constexpr int kFirstUnk = 4;
  static constexpr std::size_t kDefaultUnkPool = 32;
  static constexpr std::string_view kSepSurface = "/";

  explicit Vocabulary(std::size_t unk_pool = kDefaultUnkPool);

  // Keeps tokens whose training count is strictly greater than min_count,
  // ordered by descending count then by token bytes.
  static Vocabulary build(std::span<const std::vector<std::string>> token_streams, std::size_t min_count = 2,
                          std::size_t unk_pool = kDefaultUnkPool);

  std::size_t size() const { return tokens_.size(); }
  std::size_t unk_pool_size() const { return unk_pool_; }

  // The separator surface resolves to kSep. Specials' display names are not
  // looked up.
  std::optional<int> find(std::string_view token) const;
  const std::string& token(int id) const;

  int unk_id(std::size_t slot) const;
  bool is_unk(int id) const { return id >= kFirstUnk && id < kFirstUnk + static_cast<int>(unk_pool_); }
  std::size_t unk_slot(int id) const { return static_cast<std::size_t>(id - kFirstUnk); }
  bool is_special(int id) const { return id >= 0 && id < kFirstUnk + static_cast<int>(unk_pool_); }

  // One token per line, line number = id, specials first.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.unk_pool_ == b.unk_pool_;
  }

 private:
  void add_regular(const std::string& token);

  std::size_t unk_pool_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// ---------------------------------------------------------------------------
// Indexed examples

struct IndexedExample {
  std::string id;
  std::string category;
  std::vector<int> title_ids;      // ends with EOS
  std::vector<int> knowledge_ids;  // brand ++ SEP ++ commodity
  std::vector<int> target_ids;     // short-title ids ++ EOS
  std::size_t brand_length = 0;    // leading knowledge ids that belong to the brand
  std::vector<std::string> oov_surfaces;  // UNK-pool slot -> surface form
  std::size_t oov_overflow = 0;           // distinct OOVs that had to share the last slot

  std::span<const int> brand_ids() const { return std::span<const int>(knowledge_ids).first(brand_length); }
};

struct PreparedTokens {
  std::vector<std::string> title;
  std::vector<std::string> brand;
  std::vector<std::string> commodity;
  std::vector<std::string> short_title;
};

// Tokenizes every field and applies the number filter against the brand.
PreparedTokens prepare_tokens(const Triplet& triplet);

// Throws DataError when both brand and commodity are empty.
IndexedExample encode_example(const Triplet& triplet, const Vocabulary& vocab);
IndexedExample encode_example(const Triplet& triplet, const PreparedTokens& tokens, const Vocabulary& vocab);

// Surface form of an id in the context of one example.
std::string surface(int id, const IndexedExample& example, const Vocabulary& vocab);
std::vector<std::string> decode_ids(std::span<const int> ids, const IndexedExample& example,
                                    const Vocabulary& vocab);

// Vocabulary over the prepared title, brand, commodity and short-title tokens.
Vocabulary build_vocabulary(std::span<const Triplet> records, std::size_t min_count = 2,
                            std::size_t unk_pool = Vocabulary::kDefaultUnkPool);
std::vector<IndexedExample> encode_all(std::span<const Triplet> records, const Vocabulary& vocab);

// Every target id occurs among the copyable title/knowledge ids (EOS counts).
bool is_copyable(const IndexedExample& example);

// ---------------------------------------------------------------------------
// Splitting and batching

struct SplitRatios {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> valid;
  std::vector<std::size_t> test;
  std::vector<std::string> small_categories;  // sent wholly to train
};

// Per-category stratified split. Indices inside each split keep input order.
SplitIndices stratified_split(std::span<const Triplet> dataset, const SplitRatios& ratios, std::uint64_t seed);

struct PaddedSequences {
  std::size_t rows = 0;
  std::size_t width = 0;
  std::vector<int> ids;                // rows * width, PAD-filled
  std::vector<unsigned char> mask;     // 1 on real positions
  std::vector<std::size_t> lengths;

  std::span<const int> row_ids(std::size_t r) const { return std::span<const int>(ids).subspan(r * width, width); }
  std::span<const unsigned char> row_mask(std::size_t r) const {
    return std::span<const unsigned char>(mask).subspan(r * width, width);
  }
};

PaddedSequences pad_sequences(std::span<const std::vector<int>> sequences);

struct Batch {
  std::vector<std::size_t> indices;  // into the example list
  PaddedSequences title;
  PaddedSequences knowledge;
  PaddedSequences target;

  std::size_t size() const { return indices.size(); }
};

// Consecutive batches in the given order (identity when empty).
std::vector<Batch> make_batches(std::span<const IndexedExample> examples, std::size_t batch_size,
                                std::span<const std::size_t> order = {});

// ---------------------------------------------------------------------------
// File formats

// JSON lines with fields title, brand, commodity, short_title, category (and
// optional id). Errors name the offending line.
std::vector<Triplet> read_jsonl(const std::filesystem::path& path);
std::vector<Triplet> parse_jsonl(std::string_view text, std::string_view source = "<memory>");
void write_jsonl(const std::filesystem::path& path, std::span<const Triplet> triplets);
std::string to_jsonl_line(const Triplet& triplet);

// Five tab-separated columns in the JSONL field order.
std::vector<Triplet> read_tsv(const std::filesystem::path& path);

// Chooses the reader by extension (.tsv -> TSV, else JSONL).
std::vector<Triplet> read_triplets(const std::filesystem::path& path);

// Drops records whose reference exceeds `max_units` display units.
std::vector<Triplet> filter_training_records(std::span<const Triplet> records, std::size_t max_units = 10);

}  // namespace msptr
