#include "bisimlab/perception.hpp"

#include <fstream>

namespace bisimlab::perception {

void ObservationSequence::validate() const {
  if (frames.rank() != 4) throw InvalidInput("ObservationSequence: frames must be [K, stack, H, W], got " + ad::shape_str(frames.shape));
  if (length() < 2) throw InvalidInput("ObservationSequence: need K >= 2");
  if (static_cast<Index>(actions.size()) != length() || static_cast<Index>(rewards.size()) != length())
    throw InvalidInput("ObservationSequence: actions and rewards must have K entries");
  if (frames.data.size() > 0 && (frames.data.minCoeff() < 0.0 || frames.data.maxCoeff() > 1.0))
    throw InvalidInput("ObservationSequence: pixels outside [0, 1]");
}

Index CubeMask::masked_count() const {
  Index n = 0;
  for (auto c : cells) n += c;
  return n;
}

CubeMask make_cube_mask(Index K, Index H, Index W, double ratio, const CubeShape& cube, std::uint64_t seed) {
  require(K >= 1 && H >= 1 && W >= 1, "cube_mask: empty volume");
  require(ratio >= 0.0 && ratio < 1.0, "cube_mask: ratio must lie in [0, 1)");
  require(cube.depth >= 1 && cube.height >= 1 && cube.width >= 1, "cube_mask: cube dimensions must be positive");
  if (cube.depth > K || cube.height > H || cube.width > W)
    throw InvalidInput("cube_mask: cube " + std::to_string(cube.depth) + "x" + std::to_string(cube.height) + "x" +
                       std::to_string(cube.width) + " does not fit in " + std::to_string(K) + "x" +
                       std::to_string(H) + "x" + std::to_string(W));
  CubeMask mask{K, H, W, std::vector<std::uint8_t>(static_cast<std::size_t>(K * H * W), 0), ratio, cube, seed};
  const Index target = static_cast<Index>(std::ceil(ratio * static_cast<double>(K * H * W)));
  Rng rng(seed);
  Index covered = 0;
  while (covered < target) {
    const Index k0 = static_cast<Index>(rng.below(static_cast<std::uint64_t>(K - cube.depth + 1)));
    const Index y0 = static_cast<Index>(rng.below(static_cast<std::uint64_t>(H - cube.height + 1)));
    const Index x0 = static_cast<Index>(rng.below(static_cast<std::uint64_t>(W - cube.width + 1)));
    for (Index k = k0; k < k0 + cube.depth; ++k)
      for (Index y = y0; y < y0 + cube.height; ++y)
        for (Index x = x0; x < x0 + cube.width; ++x) {
          auto& c = mask.cells[static_cast<std::size_t>((k * H + y) * W + x)];
          covered += 1 - c;
          c = 1;
        }
  }
  return mask;
}

ad::Tensor<double> apply_mask(const ad::Tensor<double>& frames, const CubeMask& mask) {
  if (frames.rank() != 4 || frames.dim(0) != mask.K || frames.dim(2) != mask.H || frames.dim(3) != mask.W)
    throw InvalidInput("apply_mask: frames " + ad::shape_str(frames.shape) + " do not match mask [" +
                       std::to_string(mask.K) + ", *, " + std::to_string(mask.H) + ", " + std::to_string(mask.W) + "]");
  ad::Tensor<double> out = frames;
  const Index C = frames.dim(1), HW = mask.H * mask.W;
  for (Index k = 0; k < mask.K; ++k)
    for (Index p = 0; p < HW; ++p)
      if (mask.cells[static_cast<std::size_t>(k * HW + p)])
        for (Index c = 0; c < C; ++c) out.data((k * C + c) * HW + p) = 0.0;
  return out;
}

std::pair<ObservationSequence, CubeMask> cube_mask(const ObservationSequence& seq, double ratio,
                                                   const CubeShape& cube, std::uint64_t seed) {
  seq.validate();
  CubeMask mask = make_cube_mask(seq.length(), seq.height(), seq.width(), ratio, cube, seed);
  ObservationSequence masked{apply_mask(seq.frames, mask), seq.actions, seq.rewards};
  return {std::move(masked), std::move(mask)};
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw InvalidInput("mask file: truncated header");
    v |= static_cast<std::uint32_t>(c) << (8 * i);
  }
  return v;
}

}  // namespace

void save_mask(const std::filesystem::path& path, const CubeMask& mask) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput("mask file: cannot open " + path.string());
  put_u32(out, static_cast<std::uint32_t>(mask.K));
  put_u32(out, static_cast<std::uint32_t>(mask.H));
  put_u32(out, static_cast<std::uint32_t>(mask.W));
  std::vector<char> bytes((mask.cells.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < mask.cells.size(); ++i)
    if (mask.cells[i]) bytes[i / 8] = static_cast<char>(bytes[i / 8] | (1 << (i % 8)));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

CubeMask load_mask(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("mask file: cannot open " + path.string());
  CubeMask mask;
  mask.K = get_u32(in);
  mask.H = get_u32(in);
  mask.W = get_u32(in);
  const auto n = static_cast<std::size_t>(mask.K * mask.H * mask.W);
  std::vector<char> bytes((n + 7) / 8);
  if (!in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()))) throw InvalidInput("mask file: truncated bits");
  mask.cells.resize(n);
  for (std::size_t i = 0; i < n; ++i) mask.cells[i] = (bytes[i / 8] >> (i % 8)) & 1;
  return mask;
}

std::vector<Index> EncoderConfig::spatial_sizes() const {
  if (channels.empty() || channels.size() != kernels.size() || channels.size() != strides.size())
    throw InvalidInput("EncoderConfig: channels, kernels and strides must have equal non-zero length");
  std::vector<Index> sizes;
  Index s = frame_size;
  for (std::size_t l = 0; l < channels.size(); ++l) {
    if (s < kernels[l]) throw InvalidInput("EncoderConfig: kernel " + std::to_string(kernels[l]) + " larger than " + std::to_string(s) + " input");
    s = (s - kernels[l]) / strides[l] + 1;
    sizes.push_back(s);
  }
  return sizes;
}

}  // namespace bisimlab::perception
