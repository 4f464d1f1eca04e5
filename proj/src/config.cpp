#include "bisimlab/config.hpp"

#include <fstream>

namespace bisimlab {

perception::EncoderConfig RunConfig::encoder_config() const {
  perception::EncoderConfig e;
  e.in_channels = env.stack;
  e.frame_size = env.frame_size;
  e.channels = conv_channels;
  e.kernels = conv_kernels;
  e.strides = conv_strides;
  e.latent_dim = latent_dim;
  return e;
}

dynamics::TransformerConfig RunConfig::transformer_config() const {
  dynamics::TransformerConfig t;
  t.layers = layers;
  t.heads = heads;
  t.d_model = latent_dim;
  t.ff_width = ff_width;
  t.n_actions = 4;
  t.seq_len = seq_len;
  t.position_bias = position_bias;
  return t;
}

void RunConfig::validate() const {
  env.validate();
  require(seq_len >= 2, "RunConfig: seq_len must be at least 2");
  require(mask_ratio >= 0.0 && mask_ratio < 1.0, "RunConfig: mask_ratio must lie in [0, 1)");
  require(cube.depth >= 1 && cube.height >= 1 && cube.width >= 1, "RunConfig: cube dimensions must be positive");
  require(cube.depth <= seq_len && cube.height <= env.frame_size && cube.width <= env.frame_size,
          "RunConfig: cube does not fit the sequence");
  require(beta >= 0.0, "RunConfig: beta must be non-negative");
  require(momentum >= 0.0 && momentum <= 1.0, "RunConfig: momentum must lie in [0, 1]");
  require(gamma >= 0.0 && gamma < 1.0, "RunConfig: gamma must lie in [0, 1)");
  require(batch_size >= 2, "RunConfig: batch_size must be at least 2");
  require(conv_channels.size() == conv_kernels.size() && conv_kernels.size() == conv_strides.size() &&
              !conv_channels.empty(),
          "RunConfig: conv channel, kernel and stride lists must have equal non-zero length");
  encoder_config().spatial_sizes();
  transformer_config().validate();
  require(adam.lr >= 0.0 && adam.eps > 0.0 && adam.max_grad_norm >= 0.0, "RunConfig: invalid optimizer settings");
  require(steps >= 0 && prefill_steps >= 0 && env_steps_per_update >= 0 && checkpoint_every >= 0,
          "RunConfig: step counts must be non-negative");
  require(buffer_capacity >= seq_len, "RunConfig: buffer must hold at least one window");
  require(env.time_limit >= seq_len, "RunConfig: episodes shorter than seq_len yield no windows");
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"env", envs::to_json(c.env)},
          {"seq_len", c.seq_len},
          {"mask_ratio", c.mask_ratio},
          {"cube", {c.cube.depth, c.cube.height, c.cube.width}},
          {"beta", c.beta},
          {"momentum", c.momentum},
          {"gamma", c.gamma},
          {"batch_size", c.batch_size},
          {"latent_dim", c.latent_dim},
          {"conv_channels", c.conv_channels},
          {"conv_kernels", c.conv_kernels},
          {"conv_strides", c.conv_strides},
          {"layers", c.layers},
          {"heads", c.heads},
          {"ff_width", c.ff_width},
          {"position_bias", c.position_bias},
          {"adam",
           {{"lr", c.adam.lr},
            {"beta1", c.adam.beta1},
            {"beta2", c.adam.beta2},
            {"eps", c.adam.eps},
            {"max_grad_norm", c.adam.max_grad_norm}}},
          {"weighting", objective::to_string(c.weighting)},
          {"terms", objective::to_string(c.terms)},
          {"steps", c.steps},
          {"prefill_steps", c.prefill_steps},
          {"env_steps_per_update", c.env_steps_per_update},
          {"buffer_capacity", c.buffer_capacity},
          {"checkpoint_every", c.checkpoint_every},
          {"log_wall_time", c.log_wall_time}};
}

RunConfig run_config_from_json(const nlohmann::json& doc) {
  require(doc.is_object(), "RunConfig: document must be an object");
  const auto known = to_json(RunConfig{});
  for (const auto& [key, value] : doc.items())
    if (!known.contains(key)) throw InvalidInput("RunConfig: unknown key '" + key + "'");
  RunConfig c;
  try {
    c.seed = doc.value("seed", c.seed);
    if (doc.contains("env")) c.env = envs::env_spec_from_json(doc.at("env"));
    c.seq_len = doc.value("seq_len", c.seq_len);
    c.mask_ratio = doc.value("mask_ratio", c.mask_ratio);
    if (doc.contains("cube")) {
      const auto v = doc.at("cube").get<std::vector<Index>>();
      require(v.size() == 3, "RunConfig: cube must be [depth, height, width]");
      c.cube = {v[0], v[1], v[2]};
    }
    c.beta = doc.value("beta", c.beta);
    c.momentum = doc.value("momentum", c.momentum);
    c.gamma = doc.value("gamma", c.gamma);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.latent_dim = doc.value("latent_dim", c.latent_dim);
    c.conv_channels = doc.value("conv_channels", c.conv_channels);
    c.conv_kernels = doc.value("conv_kernels", c.conv_kernels);
    c.conv_strides = doc.value("conv_strides", c.conv_strides);
    c.layers = doc.value("layers", c.layers);
    c.heads = doc.value("heads", c.heads);
    c.ff_width = doc.value("ff_width", c.ff_width);
    c.position_bias = doc.value("position_bias", c.position_bias);
    if (doc.contains("adam")) {
      const auto& a = doc.at("adam");
      c.adam.lr = a.value("lr", c.adam.lr);
      c.adam.beta1 = a.value("beta1", c.adam.beta1);
      c.adam.beta2 = a.value("beta2", c.adam.beta2);
      c.adam.eps = a.value("eps", c.adam.eps);
      c.adam.max_grad_norm = a.value("max_grad_norm", c.adam.max_grad_norm);
    }
    if (doc.contains("weighting")) c.weighting = objective::parse_weighting(doc.at("weighting").get<std::string>());
    if (doc.contains("terms")) c.terms = objective::parse_terms(doc.at("terms").get<std::string>());
    c.steps = doc.value("steps", c.steps);
    c.prefill_steps = doc.value("prefill_steps", c.prefill_steps);
    c.env_steps_per_update = doc.value("env_steps_per_update", c.env_steps_per_update);
    c.buffer_capacity = doc.value("buffer_capacity", c.buffer_capacity);
    c.checkpoint_every = doc.value("checkpoint_every", c.checkpoint_every);
    c.log_wall_time = doc.value("log_wall_time", c.log_wall_time);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("RunConfig: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw InvalidInput("cannot open config " + path.string());
  nlohmann::json doc;
  try {
    f >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(doc);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream f(path);
  if (!f) throw InvalidInput("cannot write config " + path.string());
  f << to_json(cfg).dump(2) << '\n';
}

}  // namespace bisimlab
