// msptr: command-line entry point for corpus generation, training, decoding
// and evaluation.
//
// A --config file holds key=value lines named after long flags (without the
// leading dashes). Its values are applied first, so explicit flags win.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "msptr/corpus.hpp"
#include "msptr/decoding.hpp"
#include "msptr/grad_check.hpp"
#include "msptr/metrics.hpp"
#include "msptr/model.hpp"
#include "msptr/synth.hpp"
#include "msptr/training.hpp"

namespace fs = std::filesystem;
using namespace msptr;

namespace {

// ---------------------------------------------------------------------------
// Config files

std::vector<std::string> config_arguments(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::vector<std::string> args;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(path.string() + ":" + std::to_string(number) + ": expected key=value");
    }
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::replace(key.begin(), key.end(), '_', '-');
    const std::string value = trim(line.substr(eq + 1));
    if (key == "config") throw std::runtime_error(path.string() + ": config files cannot nest");
    if (value == "true") {
      args.push_back("--" + key);
    } else if (value != "false") {
      args.push_back("--" + key);
      args.push_back(value);
    }
  }
  return args;
}

// Splices config-file arguments in right after the subcommand name so that
// later (command-line) occurrences take precedence.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string path;
    std::size_t erase = 0;
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      erase = 2;
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      erase = 1;
    } else {
      continue;
    }
    args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i + erase));
    const auto extra = config_arguments(path);
    const std::size_t at = args.empty() ? 0 : 1;  // after the subcommand
    args.insert(args.begin() + static_cast<long>(at), extra.begin(), extra.end());
    break;
  }
  return args;
}

// ---------------------------------------------------------------------------
// Shared options

struct Shared {
  std::uint64_t seed = 1;
  std::string mode = "ms_pointer";
  std::size_t beam = 4;
  std::size_t max_steps = 11;
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
};

void add_shared(CLI::App* cmd, Shared& s) {
  cmd->add_option("--config", "key=value file; explicit flags override it");
  cmd->add_option("--seed", s.seed, "seed for every random choice")->capture_default_str();
  cmd->add_option("--mode", s.mode, "ms_pointer, ptr_net or ptr_concat")
      ->check(CLI::IsMember({"ms_pointer", "ptr_net", "ptr_concat"}))
      ->capture_default_str();
  cmd->add_option("--beam", s.beam, "beam width")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--max-steps", s.max_steps, "decoder steps including the final EOS")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--workers", s.workers, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
}

template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct LoadedModel {
  ModelParams params;
  Vocabulary vocab;
};

LoadedModel load_model_dir(const fs::path& dir) {
  return {load_checkpoint(dir / "model.ckpt"), Vocabulary::load(dir / "vocab.txt")};
}

struct Decoded {
  std::vector<DecodedRecord> records;
  std::vector<DecodeResult> results;
};

Decoded decode_records(const LoadedModel& model, std::span<const Triplet> rows, const Shared& shared) {
  const auto examples = encode_all(rows, model.vocab);
  DecodeOptions opt;
  opt.beam = shared.beam;
  opt.max_steps = shared.max_steps;
  Decoded out;
  out.records.resize(examples.size());
  out.results.resize(examples.size());
  parallel_for(examples.size(), shared.workers, [&](std::size_t i) {
    const DecodeResult r = beam_search(model.params, ExampleInput::from(examples[i]), opt);
    DecodedRecord& rec = out.records[i];
    rec.id = examples[i].id;
    rec.short_title = resolve_surface(r.tokens, examples[i], model.vocab);
    rec.tokens = decode_ids(r.tokens, examples[i], model.vocab);
    rec.logprob = r.logprob;
    rec.lambdas = r.lambdas;
    out.results[i] = r;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands

struct GenSynthArgs {
  SyntheticSpec spec;
  fs::path out;
};

int run_gen_synth(const GenSynthArgs& a, const Shared& shared) {
  SyntheticSpec spec = a.spec;
  spec.seed = shared.seed;
  const auto rows = generate_synthetic(spec);
  write_jsonl(a.out, rows);
  std::printf("wrote %zu records to %s\n", rows.size(), a.out.string().c_str());
  return 0;
}

struct TrainArgs {
  fs::path data, out;
  std::size_t embed_dim = 32, hidden_dim = 64;
  bool paper_dims = false, bidirectional = false;
  TrainConfig train;
  std::size_t min_count = 2, unk_pool = Vocabulary::kDefaultUnkPool, max_units = 10;
  SplitRatios ratios;
};

int run_train(TrainArgs a, const Shared& shared) {
  const auto all = read_triplets(a.data);
  const auto rows = filter_training_records(all, a.max_units);
  if (rows.size() != all.size()) {
    std::fprintf(stderr, "dropped %zu records whose reference exceeds %zu units\n", all.size() - rows.size(),
                 a.max_units);
  }
  const SplitIndices split = stratified_split(rows, a.ratios, shared.seed);
  auto gather = [&](const std::vector<std::size_t>& idx) {
    std::vector<Triplet> out;
    for (std::size_t i : idx) out.push_back(rows[i]);
    return out;
  };
  const auto train_rows = gather(split.train), valid_rows = gather(split.valid), test_rows = gather(split.test);
  if (train_rows.empty() || valid_rows.empty()) throw std::runtime_error("split left train or valid empty");

  fs::create_directories(a.out);
  write_jsonl(a.out / "train.jsonl", train_rows);
  write_jsonl(a.out / "valid.jsonl", valid_rows);
  write_jsonl(a.out / "test.jsonl", test_rows);

  const Vocabulary vocab = build_vocabulary(train_rows, a.min_count, a.unk_pool);
  vocab.save(a.out / "vocab.txt");
  const auto train_set = encode_all(train_rows, vocab);
  const auto valid_set = encode_all(valid_rows, vocab);

  ModelConfig mc;
  mc.embed_dim = a.paper_dims ? 128 : a.embed_dim;
  mc.hidden_dim = a.paper_dims ? 256 : a.hidden_dim;
  mc.bidirectional = a.bidirectional;
  mc.mode = parse_mode(shared.mode);
  mc.vocab_size = vocab.size();
  mc.unk_pool_size = vocab.unk_pool_size();

  TrainConfig tc = a.train;
  tc.seed = shared.seed + 1;
  tc.workers = shared.workers;
  std::printf("train %zu / valid %zu / test %zu, vocab %zu, %s %zux%zu\n", train_set.size(), valid_set.size(),
              test_rows.size(), vocab.size(), shared.mode.c_str(), mc.embed_dim, mc.hidden_dim);
  const TrainResult r = train(train_set, valid_set, mc, tc, std::nullopt, [](const EpochLog& e) {
    std::printf("epoch %zu  train %.5f  valid %.5f  %.1fs\n", e.epoch, e.train_loss, e.valid_loss, e.seconds);
    std::fflush(stdout);
  });
  save_checkpoint(a.out / "model.ckpt", r.best);
  write_training_log(a.out / "train_log.csv", r.log);
  std::printf("best epoch %zu; wrote %s\n", r.best_epoch, (a.out / "model.ckpt").string().c_str());
  return 0;
}

struct DecodeArgs {
  fs::path model, data, out;
};

int run_decode(const DecodeArgs& a, const Shared& shared) {
  const LoadedModel model = load_model_dir(a.model);
  const auto rows = read_triplets(a.data);
  const Decoded d = decode_records(model, rows, shared);
  std::ofstream out(a.out);
  if (!out) throw std::runtime_error("cannot write " + a.out.string());
  for (const auto& rec : d.records) out << to_json_line(rec) << '\n';
  std::printf("decoded %zu records to %s\n", d.records.size(), a.out.string().c_str());
  return 0;
}

struct EvaluateArgs {
  fs::path candidates, references, out, csv;
  std::string baseline;
  std::size_t limit = 10;
  bool smooth = false;
};

int run_evaluate(const EvaluateArgs& a) {
  const auto refs = read_triplets(a.references);
  std::vector<std::string> ids, cands, golds, brands;
  if (a.baseline == "trunc") {
    for (const auto& t : refs) {
      ids.push_back(t.id);
      cands.push_back(truncation_baseline(prepare_tokens(t).title, a.limit));
      golds.push_back(t.short_title);
      brands.push_back(t.brand);
    }
  } else {
    if (a.candidates.empty()) throw std::runtime_error("evaluate needs --candidates or --baseline trunc");
    std::map<std::string, const Triplet*> by_id;
    for (const auto& t : refs) by_id[t.id] = &t;
    for (const auto& rec : read_decoded(a.candidates)) {
      const auto it = by_id.find(rec.id);
      if (it == by_id.end()) throw std::runtime_error("candidate id '" + rec.id + "' has no reference");
      ids.push_back(rec.id);
      cands.push_back(rec.short_title);
      golds.push_back(it->second->short_title);
      brands.push_back(it->second->brand);
    }
  }
  const EvalReport report = evaluate(ids, cands, golds, brands, a.smooth);
  std::printf("%s\n", report_json(report).c_str());
  if (!a.out.empty()) write_report(a.out, report);
  if (!a.csv.empty()) write_example_csv(a.csv, report);
  return 0;
}

int run_brandtest(const DecodeArgs& a, const Shared& shared) {
  const LoadedModel model = load_model_dir(a.model);
  const auto rows = read_triplets(a.data);
  const Decoded d = decode_records(model, rows, shared);
  std::vector<std::string> outputs, brands;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    outputs.push_back(d.records[i].short_title);
    brands.push_back(rows[i].brand);
  }
  const double err = brand_retention_error(outputs, brands);
  std::printf("{\"count\": %zu, \"brand_error_rate\": %.6f, \"brand_errors\": %zu}\n", rows.size(), err,
              static_cast<std::size_t>(err * static_cast<double>(rows.size()) + 0.5));
  if (!a.out.empty()) {
    std::ofstream out(a.out);
    for (const auto& rec : d.records) out << to_json_line(rec) << '\n';
  }
  return 0;
}

struct GradcheckArgs {
  std::size_t embed_dim = 4, hidden_dim = 6, length = 5, instances = 3;
  double eps = 1e-3, scale = 0.5;
  bool bidirectional = false, two_point = false;
};

int run_gradcheck(const GradcheckArgs& a, const Shared& shared) {
  constexpr int kVocab = 14;
  ModelConfig mc;
  mc.embed_dim = a.embed_dim;
  mc.hidden_dim = a.hidden_dim;
  mc.bidirectional = a.bidirectional;
  mc.mode = parse_mode(shared.mode);
  mc.unk_pool_size = 2;
  mc.vocab_size = kVocab;

  std::mt19937_64 rng(shared.seed);
  std::uniform_real_distribution<double> u(-a.scale, a.scale);
  std::uniform_int_distribution<int> word(Vocabulary::kFirstUnk, kVocab - 1);
  double worst = 0.0;
  std::size_t done = 0, redrawn = 0;
  while (done < a.instances) {
    ModelParams m(mc);
    for (std::size_t s = 0; s < m.params().size(); ++s) {
      for (double& v : m.params()[s].values()) v = u(rng);
      m.params()[s].round_to_float32();
    }
    ExampleInput in;
    const std::size_t n = 1 + rng() % std::max<std::size_t>(1, a.length - 1);
    for (std::size_t i = 0; i < n; ++i) in.title_ids.push_back(word(rng));
    in.title_ids.push_back(Vocabulary::kEos);
    in.knowledge_ids = {word(rng), Vocabulary::kSep, word(rng)};
    in.title_mask.assign(in.title_ids.size(), 1);
    in.knowledge_mask.assign(in.knowledge_ids.size(), 1);

    // Skip instances whose initial-state ReLU sits within reach of the
    // finite-difference stencil; the loss is not differentiable there.
    ModelParams mirrored = m;
    for (double& v : mirrored.params()[mirrored.params().slot("init.W")].values()) v = -v;
    Tape ta, tb;
    ForwardPass pa(ta, m, in), pb(tb, mirrored, in);
    const auto pos = ta.value(pa.initial().state.h), neg = tb.value(pb.initial().state.h);
    bool near_kink = false;
    for (std::size_t i = 0; i < pos.size(); ++i) near_kink |= std::abs(pos[i] - neg[i]) <= 10 * a.eps;
    if (near_kink) {
      ++redrawn;
      continue;
    }

    std::vector<int> pool(in.title_ids.begin(), in.title_ids.end() - 1);
    if (mc.mode != Mode::kPtrNet) pool.insert(pool.end(), {in.knowledge_ids[0], in.knowledge_ids[2]});
    std::vector<int> target;
    for (std::size_t k = rng() % a.length; k > 0; --k) target.push_back(pool[rng() % pool.size()]);
    target.push_back(Vocabulary::kEos);

    const LossFunction loss = [&](const ParameterSet&, Gradients* g) {
      Tape tape;
      const Var l = sequence_loss(tape, m, in, target);
      if (g) tape.backward(l, *g);
      return tape.scalar_value(l);
    };
    GradCheckOptions opt;
    opt.eps = a.eps;
    opt.fourth_order = !a.two_point;
    const GradCheckResult r = grad_check(loss, m.params(), opt);
    std::printf("instance %zu: max relative error %.3e at %s[%zu] (analytic %.6e, numeric %.6e)\n", done,
                r.max_relative_error, r.worst_parameter.c_str(), r.worst_index, r.worst_analytic, r.worst_numeric);
    worst = std::max(worst, r.max_relative_error);
    ++done;
  }
  std::printf("max relative error %.3e over %zu instances (%zu redrawn near the ReLU kink)\n", worst, done, redrawn);
  return worst <= 1e-4 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-source pointer network for short product titles"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  Shared shared;

  GenSynthArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-synth", "write a synthetic JSONL corpus");
  add_shared(gen_cmd, shared);
  gen_cmd->add_option("--out", gen.out, "output JSONL")->required();
  gen_cmd->add_option("--records", gen.spec.records)->capture_default_str();
  gen_cmd->add_option("--brands", gen.spec.brands)->capture_default_str();
  gen_cmd->add_option("--commodities", gen.spec.commodities)->capture_default_str();
  gen_cmd->add_option("--salient-modifiers", gen.spec.salient_modifiers)->capture_default_str();
  gen_cmd->add_option("--plain-modifiers", gen.spec.plain_modifiers)->capture_default_str();
  gen_cmd->add_option("--categories", gen.spec.categories)->capture_default_str();
  gen_cmd->add_option("--reorder-prob", gen.spec.reorder_prob)->capture_default_str();
  gen_cmd->add_option("--corruption", gen.spec.brand_corruption_prob, "brand corruption probability")
      ->capture_default_str();
  gen_cmd->add_option("--bilingual-prob", gen.spec.bilingual_brand_prob)->capture_default_str();
  gen_cmd->add_flag("--cjk", gen.spec.cjk_entities, "two-character CJK entities instead of Latin words");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "split, build the vocabulary and train");
  add_shared(train_cmd, shared);
  train_cmd->add_option("--data", tr.data, "JSONL or TSV corpus")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", tr.out, "output directory")->required();
  train_cmd->add_option("--embed-dim", tr.embed_dim)->capture_default_str();
  train_cmd->add_option("--hidden-dim", tr.hidden_dim)->capture_default_str();
  train_cmd->add_flag("--paper-dims", tr.paper_dims, "embed 128 / hidden 256");
  train_cmd->add_flag("--bidirectional", tr.bidirectional, "bidirectional encoders");
  train_cmd->add_option("--batch-size", tr.train.batch_size)->capture_default_str();
  train_cmd->add_option("--lr", tr.train.learning_rate)->capture_default_str();
  train_cmd->add_option("--accumulator-init", tr.train.accumulator_init)->capture_default_str();
  train_cmd->add_option("--clip-norm", tr.train.clip_norm)->capture_default_str();
  train_cmd->add_option("--patience", tr.train.patience)->capture_default_str();
  train_cmd->add_option("--max-epochs", tr.train.max_epochs)->capture_default_str();
  train_cmd->add_option("--min-count", tr.min_count)->capture_default_str();
  train_cmd->add_option("--unk-pool", tr.unk_pool)->capture_default_str();
  train_cmd->add_option("--max-units", tr.max_units, "drop references longer than this")->capture_default_str();
  train_cmd->add_option("--train-ratio", tr.ratios.train)->capture_default_str();
  train_cmd->add_option("--valid-ratio", tr.ratios.valid)->capture_default_str();
  train_cmd->add_option("--test-ratio", tr.ratios.test)->capture_default_str();

  DecodeArgs dec;
  auto* decode_cmd = app.add_subcommand("decode", "beam-search short titles");
  add_shared(decode_cmd, shared);
  decode_cmd->add_option("--model", dec.model, "directory with model.ckpt and vocab.txt")
      ->required()
      ->check(CLI::ExistingDirectory);
  decode_cmd->add_option("--data", dec.data)->required()->check(CLI::ExistingFile);
  decode_cmd->add_option("--out", dec.out, "output JSONL")->required();

  EvaluateArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "BLEU, ROUGE and brand retention");
  eval_cmd->add_option("--candidates", ev.candidates, "decode JSONL")->check(CLI::ExistingFile);
  eval_cmd->add_option("--references", ev.references, "corpus with short_title and brand")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--baseline", ev.baseline, "score a baseline instead of candidates")
      ->check(CLI::IsMember({"trunc"}));
  eval_cmd->add_option("--limit", ev.limit, "truncation limit in display units")->capture_default_str();
  eval_cmd->add_flag("--smooth", ev.smooth, "add-one smoothing for BLEU n >= 2");
  eval_cmd->add_option("--out", ev.out, "report JSON");
  eval_cmd->add_option("--csv", ev.csv, "per-example CSV");
  eval_cmd->add_option("--config", "key=value file; explicit flags override it");

  DecodeArgs bt;
  auto* brand_cmd = app.add_subcommand("brandtest", "decode and report the brand retention error");
  add_shared(brand_cmd, shared);
  brand_cmd->add_option("--model", bt.model)->required()->check(CLI::ExistingDirectory);
  brand_cmd->add_option("--data", bt.data)->required()->check(CLI::ExistingFile);
  brand_cmd->add_option("--out", bt.out, "optional decode JSONL");

  GradcheckArgs gc;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of sequence_loss gradients");
  add_shared(grad_cmd, shared);
  grad_cmd->add_option("--embed-dim", gc.embed_dim)->capture_default_str();
  grad_cmd->add_option("--hidden-dim", gc.hidden_dim)->capture_default_str();
  grad_cmd->add_option("--length", gc.length, "maximum title and target length")->capture_default_str();
  grad_cmd->add_option("--instances", gc.instances)->capture_default_str();
  grad_cmd->add_option("--eps", gc.eps)->capture_default_str();
  grad_cmd->add_option("--scale", gc.scale, "parameters ~ U[-scale, scale]")->capture_default_str();
  grad_cmd->add_flag("--bidirectional", gc.bidirectional);
  grad_cmd->add_flag("--two-point", gc.two_point, "plain two-point stencil instead of five-point");

  try {
    std::vector<std::string> args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  try {
    if (*gen_cmd) return run_gen_synth(gen, shared);
    if (*train_cmd) return run_train(tr, shared);
    if (*decode_cmd) return run_decode(dec, shared);
    if (*eval_cmd) return run_evaluate(ev);
    if (*brand_cmd) return run_brandtest(bt, shared);
    if (*grad_cmd) return run_gradcheck(gc, shared);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
