#pragma once

// Training loop: seeded batching and noise draws, data-parallel forward and
// backward passes over batch members with gradient accumulation in a fixed
// sample order, adaptive-moment updates with optional cosine learning-rate
// decay, and resumable checkpoint state.

#include <functional>
#include <string>
#include <vector>

#include "duet/checkpoint.hpp"
#include "duet/config.hpp"
#include "duet/motion.hpp"

namespace duet::train {

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;  // over steps that were not aborted
  double lr_scale = 1.0;
  int skipped_steps = 0;  // batches aborted by a non-finite loss
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Trains for config.epochs total epochs. When resume is non-null, training
// continues from its epoch counter and optimizer state; the resumed config
// and data hash must match.
checkpoint::TrainState train(const RunConfig& config,
                             const std::vector<motion::DyadicSample>& corpus,
                             const std::string& data_hash,
                             const EpochCallback& on_epoch,
                             checkpoint::TrainState* resume = nullptr);

}  // namespace duet::train
