#pragma once

#include <filesystem>
#include <vector>

#include "bisimlab/ad/ops.hpp"
#include "bisimlab/ad/params.hpp"

namespace bisimlab::perception {

/// K consecutive stacked-frame observations with their actions and rewards.
struct ObservationSequence {
  ad::Tensor<double> frames;  ///< [K, stack, H, W], pixels in [0, 1]
  std::vector<Index> actions;
  std::vector<double> rewards;

  Index length() const { return frames.dim(0); }
  Index stack() const { return frames.dim(1); }
  Index height() const { return frames.dim(2); }
  Index width() const { return frames.dim(3); }

  /// Checks K >= 2, rank 4, pixel range and that actions/rewards have K entries.
  void validate() const;
};

struct CubeShape {
  Index depth = 8;
  Index height = 7;
  Index width = 7;

  Index volume() const { return depth * height * width; }
};

/// Spacetime mask over [K][H][W]; true cells are zeroed in every stacked
/// channel of the corresponding frame.
struct CubeMask {
  Index K = 0, H = 0, W = 0;
  std::vector<std::uint8_t> cells;
  double ratio = 0.0;
  CubeShape cube;
  std::uint64_t seed = 0;

  bool at(Index k, Index y, Index x) const { return cells[static_cast<std::size_t>((k * H + y) * W + x)] != 0; }
  Index masked_count() const;
  double achieved_fraction() const { return static_cast<double>(masked_count()) / static_cast<double>(K * H * W); }
};

/// Places cubes at origins drawn uniformly with replacement (cubes may
/// overlap and lie fully inside the volume) until the masked fraction first
/// reaches `ratio`. The overshoot is therefore below one cube volume.
CubeMask make_cube_mask(Index K, Index H, Index W, double ratio, const CubeShape& cube, std::uint64_t seed);

/// Zero-fills masked pixels across all stacked channels.
ad::Tensor<double> apply_mask(const ad::Tensor<double>& frames, const CubeMask& mask);

/// Masks `seq` and returns the masked copy with the mask used.
std::pair<ObservationSequence, CubeMask> cube_mask(const ObservationSequence& seq, double ratio,
                                                   const CubeShape& cube, std::uint64_t seed);

/// Bitset file: u32 K, u32 H, u32 W (little-endian), then the cells in
/// row-major order, eight per byte, least significant bit first.
void save_mask(const std::filesystem::path& path, const CubeMask& mask);
CubeMask load_mask(const std::filesystem::path& path);

/// Conv stack followed by flatten and a linear map to the latent dimension.
/// Defaults are the 32/64/64 channel, 8/4/3 kernel, 4/2/1 stride stack on
/// 48x48 frames, which leaves a 2x2 spatial map.
struct EncoderConfig {
  Index in_channels = 3;
  Index frame_size = 48;
  std::vector<Index> channels{32, 64, 64};
  std::vector<Index> kernels{8, 4, 3};
  std::vector<Index> strides{4, 2, 1};
  Index latent_dim = 50;

  /// Spatial side length after each conv layer; throws if any is < 1.
  std::vector<Index> spatial_sizes() const;
  Index flat_features() const { return channels.back() * spatial_sizes().back() * spatial_sizes().back(); }
};

/// He-normal conv and linear weights, zero biases, under "encoder/".
template <typename Scalar>
ad::ParameterSet<Scalar> init_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  ad::ParameterSet<Scalar> p;
  const auto sizes = cfg.spatial_sizes();
  Index in = cfg.in_channels;
  auto normal = [&](ad::Shape s, double stddev) {
    ad::Tensor<Scalar> t(std::move(s));
    for (Index i = 0; i < t.size(); ++i) t.data(i) = static_cast<Scalar>(stddev * rng.normal());
    return t;
  };
  for (std::size_t l = 0; l < cfg.channels.size(); ++l) {
    const Index k = cfg.kernels[l], out = cfg.channels[l];
    const std::string pre = "encoder/conv" + std::to_string(l);
    p.add(pre + "/w", normal({out, in, k, k}, std::sqrt(2.0 / static_cast<double>(in * k * k))));
    p.add(pre + "/b", ad::Tensor<Scalar>({out}));
    in = out;
  }
  const Index f = cfg.flat_features();
  p.add("encoder/fc/w", normal({f, cfg.latent_dim}, std::sqrt(1.0 / static_cast<double>(f))));
  p.add("encoder/fc/b", ad::Tensor<Scalar>({cfg.latent_dim}));
  return p;
}

/// frames: [N, C, H, W] -> latents [N, d]. `vars` holds the bound encoder
/// parameters (online leaves or momentum constants).
template <typename Scalar>
ad::Var<Scalar> encoder_forward(const EncoderConfig& cfg, const std::map<std::string, ad::Var<Scalar>>& vars,
                                const ad::Var<Scalar>& frames) {
  const auto& s = frames.shape();
  if (s.size() != 4 || s[1] != cfg.in_channels || s[2] != cfg.frame_size || s[3] != cfg.frame_size)
    throw InvalidInput("encoder: expected [N, " + std::to_string(cfg.in_channels) + ", " +
                       std::to_string(cfg.frame_size) + ", " + std::to_string(cfg.frame_size) + "], got " +
                       ad::shape_str(s));
  ad::Var<Scalar> h = frames;
  for (std::size_t l = 0; l < cfg.channels.size(); ++l) {
    const std::string pre = "encoder/conv" + std::to_string(l);
    h = ad::relu(ad::conv2d(h, vars.at(pre + "/w"), vars.at(pre + "/b"), cfg.strides[l], 0));
  }
  h = ad::reshape(h, {s[0], cfg.flat_features()});
  return ad::add(ad::matmul(h, vars.at("encoder/fc/w")), vars.at("encoder/fc/b"));
}

/// Online encoder and its EMA shadow. The shadow is a non-trainable set, so
/// binding it into a graph yields constants only.
template <typename Scalar>
class SiameseEncoderPair {
 public:
  SiameseEncoderPair(EncoderConfig cfg, ad::ParameterSet<Scalar> online, double m)
      : cfg_(std::move(cfg)), online_(std::move(online)), momentum_(online_.copy_as(false)), m_(m) {
    if (!(m >= 0.0 && m <= 1.0)) throw InvalidInput("SiameseEncoderPair: EMA coefficient must lie in [0, 1]");
    if (!online_.trainable()) throw InvalidInput("SiameseEncoderPair: online parameters must be trainable");
  }

  SiameseEncoderPair(const EncoderConfig& cfg, std::uint64_t seed, double m)
      : SiameseEncoderPair(cfg, init_encoder<Scalar>(cfg, seed), m) {}

  const EncoderConfig& config() const { return cfg_; }
  double m() const { return m_; }
  ad::ParameterSet<Scalar>& online() { return online_; }
  const ad::ParameterSet<Scalar>& online() const { return online_; }
  ad::ParameterSet<Scalar>& momentum() { return momentum_; }
  const ad::ParameterSet<Scalar>& momentum() const { return momentum_; }

  /// momentum <- m * momentum + (1 - m) * online.
  void ema_update() { ad::ema_update(momentum_, online_, m_); }

  /// Graph-free encoding of [N, C, H, W] frames.
  ad::Tensor<Scalar> encode(const ad::Tensor<Scalar>& frames, bool use_momentum) const {
    ad::Graph<Scalar> g;
    const auto& params = use_momentum ? momentum_ : online_;
    std::map<std::string, ad::Var<Scalar>> vars;
    for (const auto& [name, t] : params.tensors()) vars.emplace(name, g.constant(t));
    return encoder_forward(cfg_, vars, g.constant(frames)).value();
  }

 private:
  EncoderConfig cfg_;
  ad::ParameterSet<Scalar> online_;
  ad::ParameterSet<Scalar> momentum_;
  double m_;
};

}  // namespace bisimlab::perception
