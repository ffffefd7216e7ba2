#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "arbsteer/common.hpp"
#include "json.hpp"

namespace arbsteer::io {

inline std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xF]);
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ContractError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes via a temporary file and rename so readers never see partial output.
inline void write_file(const std::filesystem::path& p, std::string_view bytes) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  const auto tmp = std::filesystem::path(p.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ContractError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ContractError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, p);
}

inline std::string file_sha256(const std::filesystem::path& p) { return sha256_hex(read_file(p)); }

template <class T>
std::string to_jsonl(const std::vector<T>& items) {
  std::string out;
  for (const auto& it : items) {
    out += nlohmann::json(it).dump();
    out += '\n';
  }
  return out;
}

template <class T>
std::vector<T> from_jsonl(std::string_view text) {
  std::vector<T> out;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(start, end - start);
    if (!line.empty()) out.push_back(nlohmann::json::parse(line).get<T>());
    start = end + 1;
  }
  return out;
}

// Little-endian scalar encoding for the binary artifact formats.
template <class T>
void put_le(std::string& buf, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  buf.append(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(std::string_view buf, std::size_t& pos) {
  if (pos + sizeof(T) > buf.size()) throw ContractError("truncated binary file");
  unsigned char b[sizeof(T)];
  std::memcpy(b, buf.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  pos += sizeof(T);
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace arbsteer::io
