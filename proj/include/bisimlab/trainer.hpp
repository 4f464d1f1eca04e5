#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "bisimlab/ad/checkpoint.hpp"
#include "bisimlab/config.hpp"
#include "bisimlab/replay.hpp"

namespace bisimlab::train {

struct MetricsRow {
  long step = 0;
  double l_behavior = 0.0;
  double l_reconstruction = 0.0;
  double l_total = 0.0;
  double latent_erank = 0.0;
  double grad_norm = 0.0;
  long wall_ms = 0;
};

inline constexpr const char* kMetricsHeader = "step,l_behavior,l_reconstruction,l_total,latent_erank,grad_norm,wall_ms";
std::string to_csv_row(const MetricsRow& row);

/// Raised when a loss turns non-finite or the latents degenerate so that the
/// cosine distance is undefined. Carries a snapshot of the failing step: the
/// reason, the losses, the sampled window starts and every parameter norm.
class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(const std::string& what, nlohmann::json snapshot)
      : std::runtime_error(what), snapshot_(std::move(snapshot)) {}
  const nlohmann::json& snapshot() const { return snapshot_; }

 private:
  nlohmann::json snapshot_;
};

/// Online encoder tensors ("encoder/...") out of a checkpoint map.
ad::ParameterSet<double> encoder_params(const ad::TensorMap& tensors, const std::string& prefix = "");

/// Latents [N, d] of a list of observations, encoded in chunks.
MatrixXd encode_observations(const perception::EncoderConfig& cfg, const ad::ParameterSet<double>& params,
                             const std::vector<const envs::Observation*>& obs);

/// Online encoder and transformer parameters at step 0 for this config.
ad::ParameterSet<double> initial_model(const RunConfig& cfg);

/// The training loop. Each step collects `env_steps_per_update`
/// environment steps with the uniform policy, samples `batch_size` windows
/// of length `seq_len`, masks them, encodes the masked windows with the
/// online encoder and the clean ones with the momentum encoder, runs the
/// transformer, takes one Adam step on the configured objective and
/// finally moves the momentum encoder toward the online one.
class Trainer {
 public:
  explicit Trainer(RunConfig cfg);

  const RunConfig& config() const { return cfg_; }
  long steps_done() const { return step_; }
  MetricsRow step();

  /// Online encoder plus transformer (trainable).
  const ad::ParameterSet<double>& model() const { return model_; }
  /// EMA encoder (not trainable).
  const ad::ParameterSet<double>& momentum() const { return momentum_; }

  /// model tensors under their own names, EMA tensors under "momentum/".
  ad::TensorMap checkpoint() const;

  const envs::PixelGridEnv& env() const { return env_; }
  const envs::ReplayBuffer& buffer() const { return buffer_; }

 private:
  RunConfig cfg_;
  perception::EncoderConfig ecfg_;
  dynamics::TransformerConfig tcfg_;
  envs::PixelGridEnv env_;
  envs::ReplayBuffer buffer_;
  ad::ParameterSet<double> model_;
  ad::ParameterSet<double> momentum_{false};
  ad::Adam<double> adam_;
  objective::RewardNormalizer normalizer_;
  Rng collect_rng_;
  Rng sample_rng_;
  long step_ = 0;
};

struct TrainResult {
  std::vector<MetricsRow> metrics;
  std::filesystem::path final_checkpoint;
};

/// Runs `cfg.steps` updates and writes into `out_dir`: config.json,
/// metrics.csv, model.bslb (final), checkpoints/step_XXXXXXXX.bslb when
/// `checkpoint_every` > 0, and run_log.json. On a non-finite loss the
/// snapshot goes to diagnostic.json and NonFiniteLoss propagates.
TrainResult train(const RunConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace bisimlab::train
