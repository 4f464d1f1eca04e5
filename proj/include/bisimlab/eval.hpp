#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bisimlab/metric.hpp"
#include "bisimlab/trainer.hpp"

namespace bisimlab::eval {

double pearson(const VectorXd& x, const VectorXd& y);
/// 1-based ranks, ties share their average rank.
VectorXd ranks(const VectorXd& x);
double spearman(const VectorXd& x, const VectorXd& y);

struct PermutationResult {
  double statistic = 0.0;
  double p_value = 1.0;
  long permutations = 0;
};

/// Two-sided test of Spearman rho = 0 by shuffling y.
PermutationResult spearman_permutation_test(const VectorXd& x, const VectorXd& y, long permutations,
                                            std::uint64_t seed);

/// One-sided paired test of rho(reference, a) > rho(reference, b). Both
/// candidates are rank-transformed, then each permutation swaps the two
/// candidate ranks of every pair with probability 1/2.
PermutationResult paired_spearman_test(const VectorXd& reference, const VectorXd& a, const VectorXd& b,
                                       long permutations, std::uint64_t seed);

/// An encoder ready for evaluation.
struct Encoder {
  perception::EncoderConfig config;
  ad::ParameterSet<double> params;

  MatrixXd encode(const std::vector<const envs::Observation*>& obs) const {
    return train::encode_observations(config, params, obs);
  }
};

/// Online encoder from a checkpoint, with the run config found next to it
/// (config.json in the checkpoint's directory or its parent).
Encoder load_encoder(const std::filesystem::path& checkpoint);
RunConfig find_run_config(const std::filesystem::path& checkpoint);

/// The encoder a run with this config starts from.
Encoder initial_encoder(const RunConfig& cfg);

/// Distinct unordered state pairs drawn uniformly with replacement.
std::vector<std::pair<Index, Index>> sample_state_pairs(Index n_states, Index n_pairs, std::uint64_t seed);

/// Exact on-policy metric of the environment under the uniform policy.
metric::FixedPointReport exact_metric(const envs::PixelGridEnv& env, double tol = 1e-6, long max_iter = 100000);

struct AlignmentReport {
  Index n_pairs = 0;
  double spearman = 0.0;
  double pearson = 0.0;
  double p_value_zero = 1.0;  // permutation test against rho = 0
  VectorXd learned;
  VectorXd exact;
};

nlohmann::json to_json(const AlignmentReport& r);

/// Cosine distances between canonical renders of each pair against the
/// exact metric.
AlignmentReport evaluate_metric_alignment(const Encoder& encoder, const envs::PixelGridEnv& env,
                                          const metric::MetricMatrix& exact,
                                          const std::vector<std::pair<Index, Index>>& pairs,
                                          long permutations = 2000, std::uint64_t seed = 0);

struct InvarianceReport {
  Index n_states = 0;
  double mean_distance = 0.0;
  double baseline_mean_distance = 0.0;
};

nlohmann::json to_json(const InvarianceReport& r);

/// For `n_states` sampled states, the cosine distance between the latent of
/// the clean render and of the distracted render at a random phase, for the
/// trained and the baseline encoder.
InvarianceReport evaluate_distractor_invariance(const Encoder& trained, const Encoder& baseline,
                                                const envs::PixelGridEnv& clean,
                                                const envs::PixelGridEnv& distracted, Index n_states,
                                                std::uint64_t seed);

}  // namespace bisimlab::eval
