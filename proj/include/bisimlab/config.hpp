#pragma once

#include <filesystem>

#include <json.hpp>

#include "bisimlab/ad/params.hpp"
#include "bisimlab/dynamics.hpp"
#include "bisimlab/env.hpp"
#include "bisimlab/objective.hpp"
#include "bisimlab/perception.hpp"

namespace bisimlab {

/// Every knob of a training run. Architecture defaults are sized for
/// 48x48 frames; `batch_size` and the step budgets are desk-scale.
struct RunConfig {
  std::uint64_t seed = 0;
  envs::EnvSpec env;

  Index seq_len = 16;
  double mask_ratio = 0.5;
  perception::CubeShape cube{8, 7, 7};
  double beta = 0.5;
  double momentum = 0.95;
  double gamma = 0.99;
  Index batch_size = 16;
  Index latent_dim = 50;

  std::vector<Index> conv_channels{32, 64, 64};
  std::vector<Index> conv_kernels{8, 4, 3};
  std::vector<Index> conv_strides{4, 2, 1};

  Index layers = 2;
  Index heads = 1;
  Index ff_width = 200;
  bool position_bias = true;

  ad::AdamConfig adam{1e-4, 0.9, 0.999, 1.5e-4, 10.0};
  objective::Weighting weighting = objective::Weighting::BetaOnBehavior;
  objective::Terms terms = objective::Terms::Full;

  long steps = 1000;
  long prefill_steps = 1000;
  long env_steps_per_update = 1;
  Index buffer_capacity = 100000;
  long checkpoint_every = 0;  // 0: final checkpoint only
  bool log_wall_time = false;

  perception::EncoderConfig encoder_config() const;
  dynamics::TransformerConfig transformer_config() const;

  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Missing keys take their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& cfg);

}  // namespace bisimlab
