#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "msptr/corpus.hpp"
#include "msptr/model.hpp"

namespace msptr {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t batch_size = 128;
  double learning_rate = 0.15;
  double accumulator_init = 0.1;
  double clip_norm = 2.0;
  std::uint64_t seed = 1;
  std::size_t patience = 3;
  std::size_t max_epochs = 30;
  std::size_t workers = 1;
  // Skips optimizer updates; used to exercise the early-stopping contract.
  bool freeze_parameters = false;

  void validate() const;
};

inline constexpr double kEmbeddingInitVariance = 1e-8;
inline constexpr double kUniformInitRange = 0.02;

// Embeddings ~ N(0, 1e-8); everything else ~ U[-0.02, 0.02]. Values are
// rounded to float32 and fully determined by `seed`.
ModelParams init_parameters(const ModelConfig& config, std::uint64_t seed);

// Rescales every buffer by threshold / norm when the global norm exceeds the
// threshold. Returns the norm before clipping. Throws TrainingError on a
// non-finite gradient.
double clip_gradients(Gradients& grads, double threshold = 2.0);

class Adagrad {
 public:
  Adagrad(const ParameterSet& params, double learning_rate = 0.15, double accumulator_init = 0.1);

  // acc += g^2; theta -= lr * g / sqrt(acc). Stored parameters stay float32-representable.
  void step(ParameterSet& params, const Gradients& grads);

  const Gradients& accumulators() const { return accumulators_; }
  double learning_rate() const { return learning_rate_; }

 private:
  double learning_rate_;
  Gradients accumulators_;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  ModelParams best;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  std::size_t validations = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Sum of per-example losses and their gradients over `examples`, split across
// `workers` threads and reduced in worker order.
double accumulate_loss_and_gradients(const ModelParams& params, std::span<const ExampleInput> inputs,
                                     std::span<const std::vector<int>> targets, Gradients* grads,
                                     std::size_t workers);

double mean_loss(const ModelParams& params, std::span<const IndexedExample> examples, std::size_t workers = 1);

// Teacher-forced Adagrad training with per-epoch validation and early
// stopping on validation NLL. `initial` defaults to init_parameters(model, seed).
TrainResult train(std::span<const IndexedExample> train_set, std::span<const IndexedExample> valid_set,
                  const ModelConfig& model, const TrainConfig& config,
                  std::optional<ModelParams> initial = std::nullopt, const EpochCallback& on_epoch = {});

void write_training_log(const std::filesystem::path& path, std::span<const EpochLog> log);

}  // namespace msptr
