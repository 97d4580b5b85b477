#pragma once

// Every tunable across modules, serialized in full into checkpoint manifests
// so any run is reconstructible from the manifest alone.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "duet/denoiser.hpp"

namespace duet {

struct RunConfig {
  std::string preset = "desk-m";
  denoiser::DenoiserConfig model;

  // diffusion
  int max_t = 200;
  int ddim_steps = 20;
  double guidance_w = 2.0;
  double mask_prob = 0.1;

  // training
  int epochs = 120;
  int batch = 8;
  double lr = 1e-3;
  bool cosine_lr = true;
  double clip_norm = 5.0;  // global gradient-norm clip; <= 0 disables
  double lambda_vel = 1.0;
  double lambda_rel = 1.0;
  int threads = 0;  // 0: hardware concurrency

  // data
  int n_samples = 200;
  int l_train = 40;
  int fps = 10;

  std::uint64_t seed = 1;

  // Named model-size presets; "paper" mirrors the full-scale setting.
  static RunConfig from_preset(const std::string& name);

  std::vector<std::pair<std::string, std::string>> to_entries() const;
  static RunConfig from_entries(
      const std::map<std::string, std::string>& entries);
};

}  // namespace duet
