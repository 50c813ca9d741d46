#include "msptr/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <sstream>

namespace msptr {

std::string_view mode_name(Mode mode) {
  switch (mode) {
    case Mode::kMsPointer: return "ms_pointer";
    case Mode::kPtrNet: return "ptr_net";
    case Mode::kPtrConcat: return "ptr_concat";
  }
  return "?";
}

Mode parse_mode(std::string_view name) {
  if (name == "ms_pointer") return Mode::kMsPointer;
  if (name == "ptr_net") return Mode::kPtrNet;
  if (name == "ptr_concat") return Mode::kPtrConcat;
  throw std::invalid_argument("unknown mode '" + std::string(name) + "' (expected ms_pointer, ptr_net or ptr_concat)");
}

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
  if (embed_dim == 0 || hidden_dim == 0) throw std::invalid_argument("model dimensions must be positive");
  if (unk_pool_size == 0) throw std::invalid_argument("unk_pool_size must be positive");
  if (vocab_size < Vocabulary::kFirstUnk + unk_pool_size) {
    throw std::invalid_argument("vocab_size " + std::to_string(vocab_size) + " smaller than the special tokens");
  }
  if (fixed_gate) {
    if (mode != Mode::kMsPointer) throw std::invalid_argument("fixed_gate only applies to ms_pointer");
    if (!(*fixed_gate >= 0.0 && *fixed_gate <= 1.0)) throw std::invalid_argument("fixed_gate must lie in [0, 1]");
  }
}

std::string ModelConfig::to_text() const {
  std::ostringstream out;
  out.precision(17);
  out << "embed_dim=" << embed_dim << '\n'
      << "hidden_dim=" << hidden_dim << '\n'
      << "bidirectional=" << (bidirectional ? 1 : 0) << '\n'
      << "mode=" << mode_name(mode) << '\n'
      << "unk_pool_size=" << unk_pool_size << '\n'
      << "vocab_size=" << vocab_size << '\n'
      << "fixed_gate=";
  if (fixed_gate) out << *fixed_gate;
  out << '\n';
  return out.str();
}

namespace {

std::size_t parse_size(std::string_view key, std::string_view value) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw std::invalid_argument("config key '" + std::string(key) + "' expects an integer, got '" +
                                std::string(value) + "'");
  }
  return out;
}

}  // namespace

ModelConfig ModelConfig::from_text(std::string_view text) {
  ModelConfig c;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("malformed config line: " + line);
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "embed_dim") c.embed_dim = parse_size(key, value);
    else if (key == "hidden_dim") c.hidden_dim = parse_size(key, value);
    else if (key == "bidirectional") c.bidirectional = parse_size(key, value) != 0;
    else if (key == "mode") c.mode = parse_mode(value);
    else if (key == "unk_pool_size") c.unk_pool_size = parse_size(key, value);
    else if (key == "vocab_size") c.vocab_size = parse_size(key, value);
    else if (key == "fixed_gate") c.fixed_gate = value.empty() ? std::nullopt : std::optional<double>(std::stod(value));
    else throw std::invalid_argument("unknown model config key: " + key);
  }
  return c;
}

// ---------------------------------------------------------------------------
// ModelParams

ModelParams::ModelParams(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const std::size_t E = config_.embed_dim, H = config_.hidden_dim;
  const bool ms = config_.uses_knowledge_encoder();
  params_.add("embedding", Tensor({config_.vocab_size, E}));
  add_encoder("title_enc");
  if (ms) add_encoder("know_enc");
  add_lstm("decoder", E + H + (ms ? H : 0));
  params_.add("init.W", Tensor({H, ms ? 2 * H : H}));
  add_attention("title_attn");
  if (ms) {
    add_attention("know_attn");
    params_.add("gate.w_d", Tensor({H}));
    params_.add("gate.w_y", Tensor({E}));
    params_.add("gate.w_c", Tensor({H}));
    params_.add("gate.w_k", Tensor({H}));
  }
}

void ModelParams::add_lstm(const std::string& prefix, std::size_t input_dim) {
  const std::size_t H = config_.hidden_dim;
  for (const char* g : {"W_f", "W_i", "W_z", "W_o"}) params_.add(prefix + "." + g, Tensor({H, H + input_dim}));
  for (const char* g : {"b_f", "b_i", "b_z", "b_o"}) params_.add(prefix + "." + g, Tensor({H}));
}

void ModelParams::add_encoder(const std::string& prefix) {
  add_lstm(prefix + ".fwd", config_.embed_dim);
  if (config_.bidirectional) {
    add_lstm(prefix + ".bwd", config_.embed_dim);
    params_.add(prefix + ".proj.W", Tensor({config_.hidden_dim, 2 * config_.hidden_dim}));
    params_.add(prefix + ".proj.b", Tensor({config_.hidden_dim}));
  }
}

void ModelParams::add_attention(const std::string& prefix) {
  const std::size_t H = config_.hidden_dim;
  params_.add(prefix + ".v", Tensor({H}));
  params_.add(prefix + ".W_h", Tensor({H, H}));
  params_.add(prefix + ".W_d", Tensor({H, H}));
  params_.add(prefix + ".b", Tensor({H}));
}

LstmWeights ModelParams::lstm(const std::string& p) const {
  return {ref(p + ".W_f"), ref(p + ".W_i"), ref(p + ".W_z"), ref(p + ".W_o"),
          ref(p + ".b_f"), ref(p + ".b_i"), ref(p + ".b_z"), ref(p + ".b_o")};
}

EncoderWeights ModelParams::encoder(const std::string& p) const {
  EncoderWeights w{lstm(p + ".fwd"), std::nullopt, std::nullopt, std::nullopt};
  if (config_.bidirectional) {
    w.backward = lstm(p + ".bwd");
    w.proj_W = ref(p + ".proj.W");
    w.proj_b = ref(p + ".proj.b");
  }
  return w;
}

AttentionWeights ModelParams::attention(const std::string& p) const {
  return {ref(p + ".v"), ref(p + ".W_h"), ref(p + ".W_d"), ref(p + ".b")};
}

GateWeights ModelParams::gate() const {
  return {ref("gate.w_d"), ref("gate.w_y"), ref("gate.w_c"), ref("gate.w_k")};
}

// ---------------------------------------------------------------------------
// Building blocks

LstmState lstm_step(Tape& tape, const LstmWeights& w, Var x, LstmState prev) {
  const Var hx = tape.concat({prev.h, x});
  const Var f = tape.sigmoid(tape.affine(w.W_f, hx, w.b_f));
  const Var i = tape.sigmoid(tape.affine(w.W_i, hx, w.b_i));
  const Var g = tape.tanh(tape.affine(w.W_z, hx, w.b_z));
  const Var o = tape.sigmoid(tape.affine(w.W_o, hx, w.b_o));
  const Var z = tape.add(tape.mul(f, prev.z), tape.mul(i, g));
  const Var h = tape.mul(o, tape.tanh(z));
  return {h, z};
}

EncoderOutput encode(Tape& tape, const ModelParams& params, const EncoderWeights& weights,
                     std::span<const int> ids, std::span<const unsigned char> mask) {
  if (ids.size() != mask.size()) throw ShapeError("encode: ids and mask lengths differ");
  std::vector<std::size_t> real;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (mask[i]) real.push_back(i);
  if (real.empty()) throw std::invalid_argument("encode: empty input sequence");

  const std::size_t H = weights.forward.W_f.tensor->shape()[0];
  const ParamRef table = params.embedding();

  std::vector<Var> inputs;
  inputs.reserve(real.size());
  for (std::size_t pos : real) inputs.push_back(tape.embed(table, static_cast<std::size_t>(ids[pos])));

  std::vector<Var> fwd(real.size());
  LstmState state{tape.zeros(H), tape.zeros(H)};
  for (std::size_t k = 0; k < real.size(); ++k) {
    state = lstm_step(tape, weights.forward, inputs[k], state);
    fwd[k] = state.h;
  }

  std::vector<Var> per_real(real.size());
  Var final_state = fwd.back();
  if (weights.backward) {
    std::vector<Var> bwd(real.size());
    LstmState back{tape.zeros(H), tape.zeros(H)};
    for (std::size_t k = real.size(); k-- > 0;) {
      back = lstm_step(tape, *weights.backward, inputs[k], back);
      bwd[k] = back.h;
    }
    for (std::size_t k = 0; k < real.size(); ++k)
      per_real[k] = tape.affine(*weights.proj_W, tape.concat({fwd[k], bwd[k]}), *weights.proj_b);
    final_state = tape.affine(*weights.proj_W, tape.concat({fwd.back(), bwd.front()}), *weights.proj_b);
  } else {
    per_real = fwd;
  }

  std::vector<Var> rows(ids.size());
  std::optional<Var> pad_row;
  for (std::size_t i = 0, k = 0; i < ids.size(); ++i) {
    if (k < real.size() && real[k] == i) {
      rows[i] = per_real[k++];
    } else {
      if (!pad_row) pad_row = tape.zeros(H);
      rows[i] = *pad_row;
    }
  }
  return {tape.stack(rows), final_state, ids.size()};
}

LstmState init_decoder(Tape& tape, const ModelParams& params, Var title_final, std::optional<Var> knowledge_final) {
  const Var joined = knowledge_final ? tape.concat({title_final, *knowledge_final}) : title_final;
  const Var d0 = tape.relu(tape.affine(params.init_W(), joined));
  return {d0, tape.zeros(tape.size(d0))};
}

AttentionMemory make_memory(Tape& tape, const EncoderOutput& encoded, const AttentionWeights& w,
                            std::span<const int> ids, std::vector<unsigned char> mask) {
  AttentionMemory m;
  m.states = encoded.states;
  m.keys = tape.affine_rows(w.W_h, encoded.states);
  m.mask = std::move(mask);
  m.ids.assign(ids.begin(), ids.end());
  return m;
}

Attended attend(Tape& tape, Var d, const AttentionMemory& memory, const AttentionWeights& w) {
  const Var query = tape.affine(w.W_d, d, w.b);
  const Var scores = tape.attention_scores(memory.keys, query, w.v);
  const Var weights = tape.masked_softmax(scores, memory.mask);
  return {weights, tape.weighted_sum(weights, memory.states)};
}

Var gate(Tape& tape, const GateWeights& w, Var d, Var y_prev, Var context, Var knowledge_context) {
  const Var terms[] = {tape.dot_param(w.w_d, d), tape.dot_param(w.w_y, y_prev), tape.dot_param(w.w_c, context),
                       tape.dot_param(w.w_k, knowledge_context)};
  return tape.sigmoid(tape.sum(terms));
}

// ---------------------------------------------------------------------------
// Output distribution

std::vector<WordProb> output_distribution(std::span<const double> title_attention,
                                          std::span<const double> knowledge_attention, double lambda,
                                          std::span<const int> title_ids, std::span<const int> knowledge_ids,
                                          std::span<const unsigned char> title_mask,
                                          std::span<const unsigned char> knowledge_mask) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("output_distribution: lambda outside [0, 1]");
  if (title_attention.size() != title_ids.size() || knowledge_attention.size() != knowledge_ids.size()) {
    throw ShapeError("output_distribution: attention and id lengths differ");
  }
  std::map<int, double> mass;
  for (std::size_t i = 0; i < title_ids.size(); ++i)
    if (title_mask.empty() || title_mask[i]) mass[title_ids[i]] += lambda * title_attention[i];
  for (std::size_t j = 0; j < knowledge_ids.size(); ++j)
    if (knowledge_mask.empty() || knowledge_mask[j]) mass[knowledge_ids[j]] += (1.0 - lambda) * knowledge_attention[j];
  std::vector<WordProb> out;
  out.reserve(mass.size());
  for (const auto& [id, p] : mass) out.push_back({id, p});
  return out;
}

// ---------------------------------------------------------------------------
// Forward pass

ExampleInput ExampleInput::from(const IndexedExample& example) {
  ExampleInput in;
  in.title_ids = example.title_ids;
  in.title_mask.assign(example.title_ids.size(), 1);
  in.knowledge_ids = example.knowledge_ids;
  in.knowledge_mask.assign(example.knowledge_ids.size(), 1);
  return in;
}

ExampleInput ExampleInput::from(const Batch& batch, std::size_t row) {
  ExampleInput in;
  const auto ti = batch.title.row_ids(row);
  const auto tm = batch.title.row_mask(row);
  const auto ki = batch.knowledge.row_ids(row);
  const auto km = batch.knowledge.row_mask(row);
  in.title_ids.assign(ti.begin(), ti.end());
  in.title_mask.assign(tm.begin(), tm.end());
  in.knowledge_ids.assign(ki.begin(), ki.end());
  in.knowledge_mask.assign(km.begin(), km.end());
  return in;
}

namespace {

std::vector<unsigned char> attention_mask(std::span<const int> ids, std::span<const unsigned char> real) {
  std::vector<unsigned char> mask(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i)
    mask[i] = real[i] && ids[i] != Vocabulary::kPad && ids[i] != Vocabulary::kSep;
  return mask;
}

std::vector<int> positions_of(const AttentionMemory& memory, int token) {
  std::vector<int> out;
  for (std::size_t i = 0; i < memory.ids.size(); ++i)
    if (memory.mask[i] && memory.ids[i] == token) out.push_back(static_cast<int>(i));
  return out;
}

}  // namespace

ForwardPass::ForwardPass(Tape& tape, const ModelParams& params, const ExampleInput& input)
    : tape_(tape), params_(params) {
  const ModelConfig& cfg = params.config();
  if (input.title_ids.size() != input.title_mask.size() || input.knowledge_ids.size() != input.knowledge_mask.size()) {
    throw ShapeError("ExampleInput: ids and masks differ in length");
  }
  if (cfg.mode == Mode::kPtrConcat) {
    // knowledge ++ SEP ++ title, then any padding from either side.
    std::vector<int> ids;
    std::vector<unsigned char> real;
    std::size_t pads = 0;
    for (std::size_t j = 0; j < input.knowledge_ids.size(); ++j) {
      if (input.knowledge_mask[j]) {
        ids.push_back(input.knowledge_ids[j]);
        real.push_back(1);
      } else {
        ++pads;
      }
    }
    ids.push_back(Vocabulary::kSep);
    real.push_back(1);
    for (std::size_t i = 0; i < input.title_ids.size(); ++i) {
      if (input.title_mask[i]) {
        ids.push_back(input.title_ids[i]);
        real.push_back(1);
      } else {
        ++pads;
      }
    }
    ids.insert(ids.end(), pads, Vocabulary::kPad);
    real.insert(real.end(), pads, 0);
    const EncoderOutput enc = encode(tape, params, params.title_encoder(), ids, real);
    title_ = make_memory(tape, enc, params.title_attention(), ids, attention_mask(ids, real));
    title_final_ = enc.final_state;
  } else {
    const EncoderOutput enc = encode(tape, params, params.title_encoder(), input.title_ids, input.title_mask);
    title_ = make_memory(tape, enc, params.title_attention(), input.title_ids,
                         attention_mask(input.title_ids, input.title_mask));
    title_final_ = enc.final_state;
    if (cfg.mode == Mode::kMsPointer) {
      const EncoderOutput kenc =
          encode(tape, params, params.knowledge_encoder(), input.knowledge_ids, input.knowledge_mask);
      knowledge_ = make_memory(tape, kenc, params.knowledge_attention(), input.knowledge_ids,
                               attention_mask(input.knowledge_ids, input.knowledge_mask));
      knowledge_final_ = kenc.final_state;
    } else {
      for (std::size_t j = 0; j < input.knowledge_ids.size(); ++j)
        if (input.knowledge_mask[j] && input.knowledge_ids[j] != Vocabulary::kSep)
          unreachable_.push_back(input.knowledge_ids[j]);
    }
  }
}

DecoderStep ForwardPass::initial() {
  DecoderStep s;
  s.state = init_decoder(tape_, params_, title_final_, knowledge_final_);
  s.title = attend(tape_, s.state.h, title_, params_.title_attention());
  if (knowledge_) s.knowledge = attend(tape_, s.state.h, *knowledge_, params_.knowledge_attention());
  return s;
}

DecoderStep ForwardPass::step(const DecoderStep& prev, int prev_token) {
  DecoderStep s;
  s.y_prev = tape_.embed(params_.embedding(), static_cast<std::size_t>(prev_token));
  const Var input = prev.knowledge ? tape_.concat({s.y_prev, prev.title.context, prev.knowledge->context})
                                   : tape_.concat({s.y_prev, prev.title.context});
  s.state = lstm_step(tape_, params_.decoder(), input, prev.state);
  s.title = attend(tape_, s.state.h, title_, params_.title_attention());
  if (knowledge_) {
    s.knowledge = attend(tape_, s.state.h, *knowledge_, params_.knowledge_attention());
    const auto& fixed = params_.config().fixed_gate;
    s.lambda = fixed ? tape_.scalar(*fixed)
                     : gate(tape_, params_.gate(), s.state.h, s.y_prev, s.title.context, s.knowledge->context);
  } else {
    s.lambda = tape_.scalar(1.0);
  }
  return s;
}

Var ForwardPass::probability(const DecoderStep& step, int token) {
  const auto title_pos = positions_of(title_, token);
  const auto know_pos = knowledge_ ? positions_of(*knowledge_, token) : std::vector<int>{};
  if (title_pos.empty() && know_pos.empty()) {
    if (std::find(unreachable_.begin(), unreachable_.end(), token) != unreachable_.end()) return tape_.scalar(0.0);
    throw DataError("target id " + std::to_string(token) + " is not copyable from the title or knowledge");
  }
  const Var from_title = tape_.gather_sum(step.title.weights, title_pos);
  if (!knowledge_) return from_title;
  const Var from_know = tape_.gather_sum(step.knowledge->weights, know_pos);
  return tape_.add(tape_.mul(step.lambda, from_title), tape_.mul(tape_.one_minus(step.lambda), from_know));
}

std::vector<WordProb> ForwardPass::distribution(const DecoderStep& step) const {
  if (!knowledge_) {
    return output_distribution(tape_.value(step.title.weights), {}, 1.0, title_.ids, {}, title_.mask, {});
  }
  return output_distribution(tape_.value(step.title.weights), tape_.value(step.knowledge->weights),
                             lambda(step), title_.ids, knowledge_->ids, title_.mask, knowledge_->mask);
}

double ForwardPass::lambda(const DecoderStep& step) const { return tape_.scalar_value(step.lambda); }

Var sequence_loss(Tape& tape, const ModelParams& params, const ExampleInput& input, std::span<const int> targets) {
  if (targets.empty()) throw std::invalid_argument("sequence_loss: empty target");
  ForwardPass pass(tape, params, input);
  DecoderStep s = pass.initial();
  int prev = Vocabulary::kGo;
  std::vector<Var> terms;
  terms.reserve(targets.size());
  for (int target : targets) {
    s = pass.step(s, prev);
    terms.push_back(tape.neg_log(pass.probability(s, target), kProbabilityFloor));
    prev = target;
  }
  return tape.scale(tape.sum(terms), 1.0 / static_cast<double>(targets.size()));
}

std::vector<StepRecord> teacher_forced_steps(const ModelParams& params, const ExampleInput& input,
                                             std::span<const int> targets) {
  Tape tape;
  ForwardPass pass(tape, params, input);
  DecoderStep s = pass.initial();
  int prev = Vocabulary::kGo;
  std::vector<StepRecord> out;
  for (int target : targets) {
    s = pass.step(s, prev);
    StepRecord r;
    const auto a = tape.value(s.title.weights);
    r.title_attention.assign(a.begin(), a.end());
    if (s.knowledge) {
      const auto k = tape.value(s.knowledge->weights);
      r.knowledge_attention.assign(k.begin(), k.end());
    }
    r.lambda = pass.lambda(s);
    r.distribution = pass.distribution(s);
    out.push_back(std::move(r));
    prev = target;
  }
  return out;
}

}  // namespace msptr
