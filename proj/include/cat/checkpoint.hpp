#pragma once

#include <cat/autograd.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace cat {

inline constexpr std::array<unsigned char, 8> kCheckpointMagic = {'C', 'A', 'T', 'C',
                                                                  'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint32_t crc32(const unsigned char* data, size_t len) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = 0xFFFFFFFFu;
  for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

namespace detail {

inline void put_u32(std::vector<unsigned char>& buf, std::uint32_t v) {
  buf.push_back(static_cast<unsigned char>(v & 0xFF));
  buf.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
  buf.push_back(static_cast<unsigned char>((v >> 16) & 0xFF));
  buf.push_back(static_cast<unsigned char>((v >> 24) & 0xFF));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

}  // namespace detail

/// Payloads are always 32-bit floats, regardless of the working precision.
template <typename T>
std::vector<unsigned char> serialize_checkpoint(const ParamStore<T>& store) {
  std::vector<unsigned char> buf;
  buf.insert(buf.end(), kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u32(buf, kCheckpointVersion);
  detail::put_u32(buf, static_cast<std::uint32_t>(store.size()));
  for (const Parameter<T>* p : store.all()) {
    detail::put_u32(buf, static_cast<std::uint32_t>(p->name.size()));
    buf.insert(buf.end(), p->name.begin(), p->name.end());
    detail::put_u32(buf, static_cast<std::uint32_t>(p->value.rank()));
    for (int e : p->value.shape()) detail::put_u32(buf, static_cast<std::uint32_t>(e));
    for (std::int64_t i = 0; i < p->value.numel(); ++i)
      detail::put_u32(buf, std::bit_cast<std::uint32_t>(float(p->value[i])));
  }
  detail::put_u32(buf, crc32(buf.data(), buf.size()));
  return buf;
}

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store) {
  const std::vector<unsigned char> buf = serialize_checkpoint(store);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.good(), "save_checkpoint: cannot open " + path);
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  check(f.good(), "save_checkpoint: write failed for " + path);
}

struct CheckpointEntry {
  std::string name;
  Tensor<float> value;
};

inline std::vector<CheckpointEntry> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "load_checkpoint: cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  check(buf.size() >= 20, "load_checkpoint: " + path + " is too short to be a checkpoint");

  const std::uint32_t stored = detail::get_u32(buf.data() + buf.size() - 4);
  const std::uint32_t actual = crc32(buf.data(), buf.size() - 4);
  check(stored == actual, "load_checkpoint: CRC mismatch in " + path + " (stored " +
                              std::to_string(stored) + ", computed " + std::to_string(actual) +
                              ")");
  check(std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), buf.begin()),
        "load_checkpoint: " + path + " has the wrong magic");
  size_t pos = kCheckpointMagic.size();
  const size_t end = buf.size() - 4;
  auto need = [&](size_t n) {
    check(pos + n <= end, "load_checkpoint: truncated entry data in " + path);
  };
  need(8);
  const std::uint32_t version = detail::get_u32(buf.data() + pos);
  pos += 4;
  check(version == kCheckpointVersion,
        "load_checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t count = detail::get_u32(buf.data() + pos);
  pos += 4;

  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    need(4);
    const std::uint32_t name_len = detail::get_u32(buf.data() + pos);
    pos += 4;
    need(name_len);
    std::string name(reinterpret_cast<const char*>(buf.data() + pos), name_len);
    pos += name_len;
    need(4);
    const std::uint32_t rank = detail::get_u32(buf.data() + pos);
    pos += 4;
    check(rank >= 1 && rank <= 8, "load_checkpoint: entry " + name + " has rank " +
                                      std::to_string(rank));
    Shape shape(rank);
    need(4 * rank);
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<int>(detail::get_u32(buf.data() + pos));
      pos += 4;
    }
    Tensor<float> value(shape);
    need(4 * static_cast<size_t>(value.numel()));
    for (std::int64_t j = 0; j < value.numel(); ++j) {
      value[j] = std::bit_cast<float>(detail::get_u32(buf.data() + pos));
      pos += 4;
    }
    entries.push_back({std::move(name), std::move(value)});
  }
  check(pos == end, "load_checkpoint: " + path + " has trailing bytes");
  return entries;
}

/// Loads by name into an existing store; the name sets must match exactly.
template <typename T>
void load_checkpoint_into(const std::string& path, ParamStore<T>& store) {
  std::vector<CheckpointEntry> entries = load_checkpoint(path);
  std::unordered_map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries)
    check(by_name.emplace(e.name, &e).second,
          "load_checkpoint: duplicate entry " + e.name + " in " + path);

  std::string missing, extra;
  for (const Parameter<T>* p : store.all())
    if (!by_name.count(p->name)) missing += (missing.empty() ? "" : ", ") + p->name;
  if (entries.size() != store.size() || !missing.empty()) {
    for (const auto& e : entries)
      if (store.find(e.name) == nullptr) extra += (extra.empty() ? "" : ", ") + e.name;
    if (!missing.empty() || !extra.empty())
      throw std::invalid_argument("load_checkpoint: parameter names do not match the model; "
                                  "missing from file: [" +
                                  missing + "]; not in model: [" + extra + "]");
  }
  for (Parameter<T>* p : store.all()) {
    const CheckpointEntry& e = *by_name.at(p->name);
    check(e.value.shape() == p->value.shape(),
          "load_checkpoint: entry " + p->name + " has shape " + shape_str(e.value.shape()) +
              " but the model expects " + shape_str(p->value.shape()));
    for (std::int64_t i = 0; i < e.value.numel(); ++i) p->value[i] = T(e.value[i]);
  }
}

}  // namespace cat
