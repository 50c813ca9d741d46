#include "msptr/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <thread>

namespace msptr {

void TrainConfig::validate() const {
  if (batch_size == 0 || max_epochs == 0 || patience == 0 || workers == 0) {
    throw std::invalid_argument("batch_size, max_epochs, patience and workers must be positive");
  }
  if (!(learning_rate > 0) || !(accumulator_init > 0) || !(clip_norm > 0)) {
    throw std::invalid_argument("learning rate, accumulator init and clip norm must be positive");
  }
}

ModelParams init_parameters(const ModelConfig& config, std::uint64_t seed) {
  ModelParams model(config);
  ParameterSet& params = model.params();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(kEmbeddingInitVariance));
  std::uniform_real_distribution<double> uniform(-kUniformInitRange, kUniformInitRange);
  const std::size_t embedding = params.slot("embedding");
  for (std::size_t slot = 0; slot < params.size(); ++slot) {
    for (double& v : params[slot].values()) v = slot == embedding ? normal(rng) : uniform(rng);
    params[slot].round_to_float32();
  }
  return model;
}

double clip_gradients(Gradients& grads, double threshold) {
  if (!grads.all_finite()) throw TrainingError("non-finite gradient encountered before clipping");
  const double norm = grads.norm();
  if (norm > threshold) grads.scale(threshold / norm);
  return norm;
}

Adagrad::Adagrad(const ParameterSet& params, double learning_rate, double accumulator_init)
    : learning_rate_(learning_rate), accumulators_(params) {
  for (std::size_t s = 0; s < accumulators_.size(); ++s)
    std::fill(accumulators_[s].begin(), accumulators_[s].end(), accumulator_init);
}

void Adagrad::step(ParameterSet& params, const Gradients& grads) {
  for (std::size_t s = 0; s < params.size(); ++s) {
    auto values = params[s].values();
    auto& acc = accumulators_[s];
    const auto& g = grads[s];
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (g[i] == 0.0) continue;
      acc[i] += g[i] * g[i];
      values[i] = static_cast<float>(values[i] - learning_rate_ * g[i] / std::sqrt(acc[i]));
    }
  }
}

// ---------------------------------------------------------------------------

double accumulate_loss_and_gradients(const ModelParams& params, std::span<const ExampleInput> inputs,
                                     std::span<const std::vector<int>> targets, Gradients* grads,
                                     std::size_t workers) {
  const std::size_t n = inputs.size();
  workers = std::max<std::size_t>(1, std::min(workers, n));
  std::vector<double> losses(workers, 0.0);
  std::vector<Gradients> partial;
  if (grads) partial.assign(workers, Gradients(params.params()));

  auto run = [&](std::size_t w) {
    Tape tape;
    const std::size_t begin = n * w / workers, end = n * (w + 1) / workers;
    for (std::size_t i = begin; i < end; ++i) {
      tape.clear();
      const Var loss = sequence_loss(tape, params, inputs[i], targets[i]);
      losses[w] += tape.scalar_value(loss);
      if (grads) tape.backward(loss, partial[w]);
    }
  };

  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      threads.emplace_back([&, w] {
        try {
          run(w);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  if (grads)
    for (const auto& p : partial) grads->add(p);
  return std::accumulate(losses.begin(), losses.end(), 0.0);
}

double mean_loss(const ModelParams& params, std::span<const IndexedExample> examples, std::size_t workers) {
  if (examples.empty()) throw std::invalid_argument("mean_loss: no examples");
  std::vector<ExampleInput> inputs;
  std::vector<std::vector<int>> targets;
  for (const auto& ex : examples) {
    inputs.push_back(ExampleInput::from(ex));
    targets.push_back(ex.target_ids);
  }
  return accumulate_loss_and_gradients(params, inputs, targets, nullptr, workers) /
         static_cast<double>(examples.size());
}

TrainResult train(std::span<const IndexedExample> train_set, std::span<const IndexedExample> valid_set,
                  const ModelConfig& model, const TrainConfig& config, std::optional<ModelParams> initial,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty() || valid_set.empty()) throw std::invalid_argument("train: empty train or validation set");
  for (const auto& ex : train_set)
    if (!is_copyable(ex)) throw DataError("training example '" + ex.id + "' has a target that cannot be copied");

  ModelParams params = initial ? std::move(*initial) : init_parameters(model, config.seed);
  if (!(params.config() == model)) throw std::invalid_argument("train: initial parameters disagree with config");
  Adagrad optimizer(params.params(), config.learning_rate, config.accumulator_init);

  TrainResult result{params, {}, 0, 0};
  double best_valid = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  Gradients grads(params.params());

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(config.seed + epoch);
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    for (const Batch& batch : make_batches(train_set, config.batch_size, order)) {
      std::vector<ExampleInput> inputs;
      std::vector<std::vector<int>> targets;
      for (std::size_t r = 0; r < batch.size(); ++r) {
        inputs.push_back(ExampleInput::from(batch, r));
        targets.push_back(train_set[batch.indices[r]].target_ids);
      }
      grads.zero();
      const double batch_sum = accumulate_loss_and_gradients(params, inputs, targets, &grads, config.workers);
      epoch_loss += batch_sum;
      grads.scale(1.0 / static_cast<double>(batch.size()));
      clip_gradients(grads, config.clip_norm);
      if (!config.freeze_parameters) optimizer.step(params.params(), grads);
    }

    const double valid_loss = mean_loss(params, valid_set, config.workers);
    ++result.validations;
    if (!std::isfinite(valid_loss)) {
      throw TrainingError("validation loss is not finite after epoch " + std::to_string(epoch));
    }
    EpochLog entry{epoch, epoch_loss / static_cast<double>(train_set.size()), valid_loss,
                   std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()};
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);

    if (valid_loss < best_valid) {
      best_valid = valid_loss;
      result.best = params;
      result.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  return result;
}

void write_training_log(const std::filesystem::path& path, std::span<const EpochLog> log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write training log " + path.string());
  out.precision(10);
  out << "epoch,train_loss,valid_loss,seconds\n";
  for (const auto& e : log) out << e.epoch << ',' << e.train_loss << ',' << e.valid_loss << ',' << e.seconds << '\n';
}

}  // namespace msptr
