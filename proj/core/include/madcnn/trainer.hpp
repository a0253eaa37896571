#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "madcnn/datapipe.hpp"
#include "madcnn/model.hpp"

namespace madcnn {

/// Mini-batch Adam on mean BCE. Defaults are the reference recipe.
struct TrainConfig {
  std::size_t batch_size = 1000;
  std::size_t epochs = 30;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  std::uint64_t seed = 42;

  void validate() const;
  nn::AdamConfig adam() const { return {learning_rate, beta1, beta2, epsilon}; }
};

struct TrainResult {
  ModelParameters params;
  std::vector<double> loss_history;  ///< mean per-frame training loss of each epoch
};

/// Called after every epoch with (epoch index from 1, mean loss).
using EpochCallback = std::function<void(std::size_t, double)>;

/// Initializes with build_model(config, tc.seed), reshuffles every epoch from
/// a seed derived from tc.seed, and applies one Adam step per batch with the
/// batch-mean gradient summed in frame order. The last short batch is kept.
/// Throws InputError on empty data and NumericError (with epoch and batch) on
/// a non-finite loss.
TrainResult train(const ModelConfig& config, std::span<const data::InputFrame> data,
                  const TrainConfig& tc, const EpochCallback& on_epoch = {});

/// Mean BCE over `data` with compensated summation; no mutation.
double evaluate_loss(const ModelParameters& params, std::span<const data::InputFrame> data);

/// CSV `epoch,mean_loss` with epochs numbered from 1.
void write_loss_history(const std::filesystem::path& path, std::span<const double> history);
std::vector<double> read_loss_history(const std::filesystem::path& path);

}  // namespace madcnn
