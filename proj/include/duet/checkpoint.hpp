#pragma once

// Checkpoint blob + plain-text manifest. The blob holds named f64 parameter
// arrays (and optionally optimizer moments); the manifest records the full run
// config, seed, training-data hash, epoch counter, and parameter count.

#include <string>
#include <vector>

#include "duet/config.hpp"
#include "duet/denoiser.hpp"
#include "duet/motion.hpp"

namespace duet::checkpoint {

struct TrainState {
  RunConfig config;
  denoiser::DenoiserParams params;
  // Adam moments aligned with DenoiserParams::visit order; empty when absent.
  std::vector<std::vector<double>> adam_m, adam_v;
  std::int64_t adam_steps = 0;
  int epoch = 0;
  double last_loss = 0.0;
  std::string data_hash;
};

void save(const std::string& path, TrainState& state);
TrainState load(const std::string& path);

std::string manifest_path(const std::string& checkpoint_path);

}  // namespace duet::checkpoint
