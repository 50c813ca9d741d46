#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "msptr/corpus.hpp"
#include "msptr/tape.hpp"

namespace msptr {

enum class Mode { kMsPointer, kPtrNet, kPtrConcat };

std::string_view mode_name(Mode mode);
Mode parse_mode(std::string_view name);

struct ModelConfig {
  std::size_t embed_dim = 128;
  std::size_t hidden_dim = 256;
  bool bidirectional = false;
  Mode mode = Mode::kMsPointer;
  std::size_t unk_pool_size = Vocabulary::kDefaultUnkPool;
  std::size_t vocab_size = 0;
  // When set, the gate is replaced by this constant (ms_pointer only).
  std::optional<double> fixed_gate;

  void validate() const;
  bool uses_knowledge_encoder() const { return mode == Mode::kMsPointer; }

  // key=value lines, fixed key order.
  std::string to_text() const;
  static ModelConfig from_text(std::string_view text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LstmWeights {
  ParamRef W_f, W_i, W_z, W_o;  // hidden x (hidden + input), acting on [h_prev, x]
  ParamRef b_f, b_i, b_z, b_o;
};

struct AttentionWeights {
  ParamRef v, W_h, W_d, b;
};

struct GateWeights {
  ParamRef w_d, w_y, w_c, w_k;
};

struct EncoderWeights {
  LstmWeights forward;
  std::optional<LstmWeights> backward;
  std::optional<ParamRef> proj_W, proj_b;
};

// Learned weights plus the slot layout for one ModelConfig. The tensor order
// in `params()` is the checkpoint order.
class ModelParams {
 public:
  explicit ModelParams(ModelConfig config);  // zero-filled tensors

  const ModelConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  ParamRef embedding() const { return ref("embedding"); }
  EncoderWeights title_encoder() const { return encoder("title_enc"); }
  EncoderWeights knowledge_encoder() const { return encoder("know_enc"); }
  LstmWeights decoder() const { return lstm("decoder"); }
  ParamRef init_W() const { return ref("init.W"); }
  AttentionWeights title_attention() const { return attention("title_attn"); }
  AttentionWeights knowledge_attention() const { return attention("know_attn"); }
  GateWeights gate() const;

  ParamRef ref(std::string_view name) const { return param_ref(params_, params_.slot(name)); }

 private:
  LstmWeights lstm(const std::string& prefix) const;
  EncoderWeights encoder(const std::string& prefix) const;
  AttentionWeights attention(const std::string& prefix) const;
  void add_lstm(const std::string& prefix, std::size_t input_dim);
  void add_encoder(const std::string& prefix);
  void add_attention(const std::string& prefix);

  ModelConfig config_;
  ParameterSet params_;
};

// ---------------------------------------------------------------------------
// Building blocks (all record onto a Tape)

struct LstmState {
  Var h;
  Var z;
};

LstmState lstm_step(Tape& tape, const LstmWeights& w, Var x, LstmState prev);

struct EncoderOutput {
  Var states;       // length x hidden; PAD positions are zero rows
  Var final_state;  // hidden
  std::size_t length = 0;
};

// Runs over the positions with mask != 0, in order. Throws when none are real.
EncoderOutput encode(Tape& tape, const ModelParams& params, const EncoderWeights& weights,
                     std::span<const int> ids, std::span<const unsigned char> mask);

LstmState init_decoder(Tape& tape, const ModelParams& params, Var title_final, std::optional<Var> knowledge_final);

// Attention memory: encoder states, their W_h projections and the live mask.
struct AttentionMemory {
  Var states;
  Var keys;
  std::vector<unsigned char> mask;
  std::vector<int> ids;
};

AttentionMemory make_memory(Tape& tape, const EncoderOutput& encoded, const AttentionWeights& w,
                            std::span<const int> ids, std::vector<unsigned char> mask);

struct Attended {
  Var weights;
  Var context;
};

Attended attend(Tape& tape, Var d, const AttentionMemory& memory, const AttentionWeights& w);

Var gate(Tape& tape, const GateWeights& w, Var d, Var y_prev, Var context, Var knowledge_context);

// ---------------------------------------------------------------------------
// Output distribution

struct WordProb {
  int id;
  double prob;
};

// p(w) = lambda * sum_{title_i = w} a_i + (1 - lambda) * sum_{know_j = w} a'_j
// over the union of live ids, sorted by id. Throws when lambda is outside [0, 1].
std::vector<WordProb> output_distribution(std::span<const double> title_attention,
                                          std::span<const double> knowledge_attention, double lambda,
                                          std::span<const int> title_ids, std::span<const int> knowledge_ids,
                                          std::span<const unsigned char> title_mask = {},
                                          std::span<const unsigned char> knowledge_mask = {});

// ---------------------------------------------------------------------------
// Per-example forward pass

// Model input for one example: ids plus real-position masks (PAD allowed).
struct ExampleInput {
  std::vector<int> title_ids;
  std::vector<unsigned char> title_mask;
  std::vector<int> knowledge_ids;
  std::vector<unsigned char> knowledge_mask;

  static ExampleInput from(const IndexedExample& example);
  static ExampleInput from(const Batch& batch, std::size_t row);
};

struct DecoderStep {
  LstmState state;
  Var y_prev;            // embedding fed at this step (invalid for the initial state)
  Attended title;
  std::optional<Attended> knowledge;
  Var lambda;            // invalid for the initial state
};

class ForwardPass {
 public:
  ForwardPass(Tape& tape, const ModelParams& params, const ExampleInput& input);

  // d_0 plus the contexts obtained by attending with it.
  DecoderStep initial();
  DecoderStep step(const DecoderStep& prev, int prev_token);

  // Probability of `token` at this step. A token from the example's knowledge
  // that this mode cannot reach (ptr_net) has probability 0; a token absent
  // from the whole example throws DataError.
  Var probability(const DecoderStep& step, int token);
  std::vector<WordProb> distribution(const DecoderStep& step) const;
  double lambda(const DecoderStep& step) const;

  const AttentionMemory& title_memory() const { return title_; }
  const std::optional<AttentionMemory>& knowledge_memory() const { return knowledge_; }
  Tape& tape() { return tape_; }

 private:
  Tape& tape_;
  const ModelParams& params_;
  AttentionMemory title_;
  std::optional<AttentionMemory> knowledge_;
  Var title_final_;
  std::optional<Var> knowledge_final_;
  std::vector<int> unreachable_;  // live knowledge ids outside every attention memory
};

inline constexpr double kProbabilityFloor = 1e-12;

// Mean over target steps (terminal EOS included) of -log max(p, 1e-12), with
// teacher forcing. Throws DataError naming a target id absent from the inputs.
Var sequence_loss(Tape& tape, const ModelParams& params, const ExampleInput& input, std::span<const int> targets);

// Value-level record of one teacher-forced step.
struct StepRecord {
  std::vector<double> title_attention;
  std::vector<double> knowledge_attention;  // empty outside ms_pointer
  double lambda = 1.0;
  std::vector<WordProb> distribution;
};

std::vector<StepRecord> teacher_forced_steps(const ModelParams& params, const ExampleInput& input,
                                             std::span<const int> targets);

// ---------------------------------------------------------------------------
// Checkpoints

std::string checkpoint_bytes(const ModelParams& params);
ModelParams checkpoint_from_bytes(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace msptr
