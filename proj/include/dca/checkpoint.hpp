#pragma once

#include <zlib.h>

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "dca/bank.hpp"
#include "dca/error.hpp"

namespace dca {

// Binary layout, all little-endian:
//   "DCA1" | version u32 | granularity u8 | n u16 | component_count u32
//   per component: slot_count u64, then n arrays of slot_count f64
//   CRC32 (zlib polynomial) of every preceding byte, u32
inline constexpr std::array<char, 4> kCheckpointMagic{'D', 'C', 'A', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::size_t kCheckpointHeaderBytes = 4 + 4 + 1 + 2 + 4;

struct Checkpoint {
  Granularity granularity = Granularity::modelwise;
  std::uint16_t n = 1;
  ParameterBank::Instances components;  // [component][instance][slot]

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(v);
  for (std::size_t b = 0; b < sizeof(T); ++b) out.push_back(static_cast<std::uint8_t>(u >> (8 * b)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    if (pos_ + sizeof(T) > bytes_.size())
      throw DataError(std::string("checkpoint truncated reading ") + what + " at byte offset " + std::to_string(pos_));
    std::make_unsigned_t<T> u = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) u |= static_cast<decltype(u)>(bytes_[pos_ + b]) << (8 * b);
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }

  std::size_t pos() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t len = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = ::crc32(crc, bytes.data() + off, static_cast<uInt>(len));
    off += len;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  std::vector<std::uint8_t> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(ck.granularity));
  detail::put_le<std::uint16_t>(out, ck.n);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ck.components.size()));
  for (const auto& comp : ck.components) {
    if (comp.size() != ck.n) throw DimensionError("checkpoint component has wrong instance count");
    const std::uint64_t slots = comp.empty() ? 0 : comp.front().size();
    detail::put_le<std::uint64_t>(out, slots);
    for (const auto& inst : comp) {
      if (inst.size() != slots) throw DimensionError("checkpoint instances of one component differ in length");
      for (double v : inst) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  detail::put_le<std::uint32_t>(out, detail::crc32_of(out));
  return out;
}

// Header fields plus CRC status; never throws on a CRC mismatch.
struct CheckpointInfo {
  std::uint32_t version = 0;
  Granularity granularity = Granularity::modelwise;
  std::uint16_t n = 0;
  std::vector<std::uint64_t> component_slots;
  std::uint32_t stored_crc = 0;
  std::uint32_t computed_crc = 0;
  bool crc_ok() const noexcept { return stored_crc == computed_crc; }
};

namespace detail {

inline CheckpointInfo parse_checkpoint(std::span<const std::uint8_t> bytes, Checkpoint* body) {
  if (bytes.size() < kCheckpointHeaderBytes + 4)
    throw DataError("checkpoint too short (" + std::to_string(bytes.size()) + " bytes)");
  if (!std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin()))
    throw DataError("bad checkpoint magic at byte offset 0");
  Reader rd(bytes.first(bytes.size() - 4));
  rd.get<std::uint32_t>("magic");
  CheckpointInfo info;
  info.version = rd.get<std::uint32_t>("version");
  if (info.version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(info.version) + " at byte offset 4");
  const auto tag = rd.get<std::uint8_t>("granularity");
  if (tag > static_cast<std::uint8_t>(Granularity::modelwise))
    throw DataError("unknown granularity tag " + std::to_string(tag) + " at byte offset 8");
  info.granularity = static_cast<Granularity>(tag);
  info.n = rd.get<std::uint16_t>("instance count");
  const auto count = rd.get<std::uint32_t>("component count");
  Reader footer(bytes.last(4));
  info.stored_crc = footer.get<std::uint32_t>("crc");
  info.computed_crc = crc32_of(bytes.first(bytes.size() - 4));
  if (body) {
    body->granularity = info.granularity;
    body->n = info.n;
    body->components.clear();
  }
  for (std::uint32_t c = 0; c < count; ++c) {
    const auto slots = rd.get<std::uint64_t>("slot count");
    info.component_slots.push_back(slots);
    const std::uint64_t need = slots * info.n * 8;
    if (slots != 0 && need / slots != static_cast<std::uint64_t>(info.n) * 8)
      throw DataError("checkpoint slot count overflows at byte offset " + std::to_string(rd.pos() - 8));
    if (need > rd.remaining())
      throw DataError("checkpoint truncated in component " + std::to_string(c) + " at byte offset " +
                      std::to_string(rd.pos()));
    if (!body) {
      for (std::uint64_t k = 0; k < slots * info.n; ++k) rd.get<std::uint64_t>("value");
      continue;
    }
    auto& comp = body->components.emplace_back(info.n, std::vector<double>(slots));
    for (auto& inst : comp)
      for (auto& v : inst) v = std::bit_cast<double>(rd.get<std::uint64_t>("value"));
  }
  if (rd.remaining() != 0)
    throw DataError("trailing bytes after checkpoint payload at byte offset " + std::to_string(rd.pos()));
  return info;
}

}  // namespace detail

inline CheckpointInfo inspect_checkpoint(std::span<const std::uint8_t> bytes) {
  return detail::parse_checkpoint(bytes, nullptr);
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Checkpoint ck;
  const CheckpointInfo info = detail::parse_checkpoint(bytes, &ck);
  if (!info.crc_ok())
    throw DataError("checkpoint CRC mismatch: stored " + std::to_string(info.stored_crc) + ", computed " +
                    std::to_string(info.computed_crc));
  return ck;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_file_bytes(path, encode_checkpoint(ck));
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

inline Checkpoint to_checkpoint(const ParameterBank& bank) {
  return {bank.granularity(), static_cast<std::uint16_t>(bank.instance_count()), bank.instances()};
}

// A single parameterization stored as one modelwise component with n = 1.
inline Checkpoint single_model_checkpoint(std::span<const double> params) {
  return {Granularity::modelwise, 1, {{std::vector<double>(params.begin(), params.end())}}};
}

// Rebuilds a bank; the checkpoint must match the model's partition exactly.
inline ParameterBank to_bank(const ModelLayout& layout, const Checkpoint& ck) {
  const Partition p = partition(layout, ck.granularity);
  if (p.component_count() != ck.components.size())
    throw DataError("checkpoint has " + std::to_string(ck.components.size()) + " components, model " +
                    std::string(to_string(ck.granularity)) + " partition has " +
                    std::to_string(p.component_count()));
  for (std::size_t c = 0; c < p.component_count(); ++c)
    if (!ck.components[c].empty() && ck.components[c].front().size() != p.components[c].size())
      throw DataError("checkpoint component " + std::to_string(c) + " has " +
                      std::to_string(ck.components[c].front().size()) + " slots, model expects " +
                      std::to_string(p.components[c].size()));
  return ParameterBank(layout, ck.granularity, ck.components);
}

}  // namespace dca
