#include "bisimlab/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

#include "bisimlab/erank.hpp"

namespace bisimlab::train {

namespace {

constexpr Index kEncodeChunk = 256;

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

std::string to_csv_row(const MetricsRow& r) {
  return std::to_string(r.step) + ',' + fmt(r.l_behavior) + ',' + fmt(r.l_reconstruction) + ',' + fmt(r.l_total) +
         ',' + fmt(r.latent_erank) + ',' + fmt(r.grad_norm) + ',' + std::to_string(r.wall_ms);
}

ad::ParameterSet<double> encoder_params(const ad::TensorMap& tensors, const std::string& prefix) {
  ad::ParameterSet<double> p;
  const std::string want = prefix + "encoder/";
  for (const auto& [name, t] : tensors)
    if (name.rfind(want, 0) == 0) p.add(name.substr(prefix.size()), t);
  require(!p.tensors().empty(), "encoder_params: checkpoint has no tensors under '" + want + "'");
  return p;
}

MatrixXd encode_observations(const perception::EncoderConfig& cfg, const ad::ParameterSet<double>& params,
                             const std::vector<const envs::Observation*>& obs) {
  MatrixXd out(static_cast<Index>(obs.size()), cfg.latent_dim);
  for (std::size_t begin = 0; begin < obs.size(); begin += kEncodeChunk) {
    const std::size_t end = std::min(obs.size(), begin + kEncodeChunk);
    const std::vector<const envs::Observation*> chunk(obs.begin() + static_cast<std::ptrdiff_t>(begin),
                                                      obs.begin() + static_cast<std::ptrdiff_t>(end));
    ad::Graph<double> g;
    std::map<std::string, ad::Var<double>> vars;
    for (const auto& [name, t] : params.tensors()) vars.emplace(name, g.constant(t));
    const auto z = perception::encoder_forward(
        cfg, vars, g.constant(envs::to_tensor(chunk, cfg.in_channels, cfg.frame_size)));
    out.middleRows(static_cast<Index>(begin), static_cast<Index>(end - begin)) =
        z.value().matrix(static_cast<Index>(end - begin), cfg.latent_dim);
  }
  return out;
}

ad::ParameterSet<double> initial_model(const RunConfig& cfg) {
  Rng init(cfg.seed);
  const std::uint64_t enc_seed = init.next_u64();
  const std::uint64_t dyn_seed = init.next_u64();
  ad::ParameterSet<double> model = perception::init_encoder<double>(cfg.encoder_config(), enc_seed);
  const auto dyn = dynamics::init_dynamics<double>(cfg.transformer_config(), dyn_seed);
  for (const auto& [name, t] : dyn.tensors()) model.add(name, t);
  return model;
}

Trainer::Trainer(RunConfig cfg)
    : cfg_((cfg.validate(), std::move(cfg))),
      ecfg_(cfg_.encoder_config()),
      tcfg_(cfg_.transformer_config()),
      env_(cfg_.env),
      buffer_(cfg_.buffer_capacity),
      adam_(cfg_.adam),
      normalizer_{env_.mdp().r_min(), env_.mdp().r_max()},
      collect_rng_(cfg_.seed ^ 0xc011ec7ULL),
      sample_rng_(cfg_.seed ^ 0x5a3b1eULL) {
  model_ = initial_model(cfg_);
  for (const auto& [name, t] : model_.tensors())
    if (name.rfind("encoder/", 0) == 0) momentum_.add(name, t);
  envs::collect(env_, cfg_.prefill_steps, buffer_, collect_rng_);
}

ad::TensorMap Trainer::checkpoint() const {
  ad::TensorMap out = model_.tensors();
  for (const auto& [name, t] : momentum_.tensors()) out.emplace("momentum/" + name, t);
  return out;
}

MetricsRow Trainer::step() {
  const auto t0 = std::chrono::steady_clock::now();
  envs::collect(env_, cfg_.env_steps_per_update, buffer_, collect_rng_);
  const Index B = cfg_.batch_size, K = cfg_.seq_len, d = cfg_.latent_dim;
  const Index C = cfg_.env.stack, S = cfg_.env.frame_size;
  const auto starts = buffer_.sample_starts(B, K, sample_rng_);

  std::vector<const envs::Observation*> obs;
  std::vector<Index> actions;
  Eigen::MatrixXd rewards(B, K);
  for (Index b = 0; b < B; ++b)
    for (Index k = 0; k < K; ++k) {
      const auto& tr = buffer_.at(starts[static_cast<std::size_t>(b)] + k);
      obs.push_back(&tr.obs);
      actions.push_back(tr.action);
      rewards(b, k) = normalizer_(tr.reward);
    }
  const auto frames = envs::to_tensor(obs, C, S);

  ad::Tensor<double> masked = frames;
  const Index per_window = K * C * S * S;
  for (Index b = 0; b < B; ++b) {
    const auto mask = perception::make_cube_mask(K, S, S, cfg_.mask_ratio, cfg_.cube, sample_rng_.next_u64());
    ad::Tensor<double> window({K, C, S, S}, frames.data.segment(b * per_window, per_window));
    masked.data.segment(b * per_window, per_window) = perception::apply_mask(window, mask).data;
  }

  ad::Tensor<double> target = [&] {
    ad::Graph<double> tg;
    std::map<std::string, ad::Var<double>> vars;
    for (const auto& [name, t] : momentum_.tensors()) vars.emplace(name, tg.constant(t));
    return perception::encoder_forward(ecfg_, vars, tg.constant(frames)).value().reshaped({B, K, d});
  }();

  ad::Graph<double> g;
  const auto vars = model_.bind(g);
  const auto z = ad::reshape(perception::encoder_forward(ecfg_, vars, g.constant(masked)), {B, K, d});
  const auto pred = dynamics::forward_dynamics(tcfg_, vars, z, actions);
  const auto diagnose = [&](const std::string& reason, double l_beh, double l_rec) {
    nlohmann::json snap{{"step", step_},
                        {"reason", reason},
                        {"l_behavior", l_beh},
                        {"l_reconstruction", l_rec},
                        {"window_starts", starts}};
    for (const auto& [name, t] : model_.tensors()) snap["parameter_norms"][name] = t.data.norm();
    return NonFiniteLoss("training diverged at step " + std::to_string(step_) + ": " + reason, snap);
  };
  ++step_;
  const auto rec = objective::reconstruction_loss(g.constant(std::move(target)), pred);
  const auto pairing = objective::sample_pairing(B, K - 1, sample_rng_);
  std::optional<ad::Var<double>> beh_or;
  try {
    beh_or = objective::behavior_loss(z, pred, rewards, cfg_.gamma, pairing);
  } catch (const InvalidInput& e) {
    // Latents whose norm vanished or overflowed leave the cosine undefined.
    throw diagnose(e.what(), std::numeric_limits<double>::quiet_NaN(), rec.value().item());
  }
  const auto beh = *beh_or;
  const double l_beh = beh.value().item(), l_rec = rec.value().item();
  if (!std::isfinite(l_beh) || !std::isfinite(l_rec)) throw diagnose("non-finite loss", l_beh, l_rec);
  const auto [total, parts] = objective::total_loss(beh, rec, cfg_.beta, cfg_.weighting, cfg_.terms);
  g.backward(total);
  const double grad_norm = adam_.step(model_, g.leaf_grads());
  const double m = cfg_.momentum;
  for (auto& [name, t] : momentum_.tensors()) t.data = m * t.data + (1.0 - m) * model_.at(name).data;

  MetricsRow row;
  row.step = step_;
  row.l_behavior = parts.l_behavior;
  row.l_reconstruction = parts.l_reconstruction;
  row.l_total = parts.l_total;
  const MatrixXd zm = z.value().matrix(B * K, d);
  row.latent_erank = erank_lab::erank(MatrixXd(zm.transpose() * zm / static_cast<double>(B * K))).erank;
  row.grad_norm = grad_norm;
  if (cfg_.log_wall_time)
    row.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
  return row;
}

TrainResult train(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  save_run_config(out_dir / "config.json", cfg);
  Trainer trainer(cfg);
  TrainResult result;
  std::ofstream csv(out_dir / "metrics.csv");
  if (!csv) throw InvalidInput("train: cannot write " + (out_dir / "metrics.csv").string());
  csv << kMetricsHeader << '\n';
  std::vector<std::string> checkpoints;
  for (long s = 0; s < cfg.steps; ++s) {
    MetricsRow row;
    try {
      row = trainer.step();
    } catch (const NonFiniteLoss& e) {
      std::ofstream(out_dir / "diagnostic.json") << e.snapshot().dump(2) << '\n';
      throw;
    }
    csv << to_csv_row(row) << '\n';
    result.metrics.push_back(row);
    if (cfg.checkpoint_every > 0 && row.step % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%08ld.bslb", row.step);
      std::filesystem::create_directories(out_dir / "checkpoints");
      ad::save_checkpoint(out_dir / "checkpoints" / name, trainer.checkpoint());
      checkpoints.emplace_back(std::string("checkpoints/") + name);
    }
  }
  csv.close();
  result.final_checkpoint = out_dir / "model.bslb";
  ad::save_checkpoint(result.final_checkpoint, trainer.checkpoint());

  nlohmann::json log{{"config", to_json(cfg)},
                     {"steps", trainer.steps_done()},
                     {"checkpoints", checkpoints},
                     {"final_checkpoint", "model.bslb"},
                     {"transitions_collected", trainer.buffer().total_added()}};
  if (!result.metrics.empty()) {
    const auto& last = result.metrics.back();
    log["final"] = {{"l_behavior", last.l_behavior},
                    {"l_reconstruction", last.l_reconstruction},
                    {"l_total", last.l_total},
                    {"latent_erank", last.latent_erank}};
  }
  std::ofstream(out_dir / "run_log.json") << log.dump(2) << '\n';
  return result;
}

}  // namespace bisimlab::train
