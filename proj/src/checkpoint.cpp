#include "bisimlab/ad/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace bisimlab::ad {

namespace {

constexpr char kMagic[4] = {'B', 'S', 'L', 'B'};

template <typename U>
void put_le(std::ostream& out, U v) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get_le(std::istream& in, const std::string& what) {
  unsigned char buf[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(U))) throw InvalidInput("checkpoint: truncated " + what);
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TensorMap& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput("checkpoint: cannot open " + path.string() + " for writing");
  out.write(kMagic, 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (Index d : t.shape) put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    for (Index i = 0; i < t.size(); ++i) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(t.data(i)));
  }
  if (!out) throw InvalidInput("checkpoint: write failed for " + path.string());
}

TensorMap load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("checkpoint: cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw InvalidInput("checkpoint: bad magic in " + path.string());
  const auto version = get_le<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) throw InvalidInput("checkpoint: unsupported version " + std::to_string(version));
  const auto count = get_le<std::uint64_t>(in, "count");
  TensorMap tensors;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto len = get_le<std::uint32_t>(in, "name length");
    if (len > (1u << 16)) throw InvalidInput("checkpoint: implausible name length");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw InvalidInput("checkpoint: truncated name");
    const auto rank = get_le<std::uint32_t>(in, "rank");
    if (rank > 16) throw InvalidInput("checkpoint: implausible rank for '" + name + "'");
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<Index>(get_le<std::uint64_t>(in, "dims")));
    Tensor<double> t(shape);
    for (Index i = 0; i < t.size(); ++i) t.data(i) = std::bit_cast<double>(get_le<std::uint64_t>(in, "payload"));
    if (!tensors.emplace(name, std::move(t)).second) throw InvalidInput("checkpoint: duplicate tensor '" + name + "'");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw InvalidInput("checkpoint: trailing bytes in " + path.string());
  return tensors;
}

}  // namespace bisimlab::ad
