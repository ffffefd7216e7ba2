#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "arbsteer/io.hpp"
#include "arbsteer/model/transformer.hpp"

namespace arbsteer::model {

inline constexpr std::uint32_t kCheckpointMagic = 0x41524253;  // "ARBS"
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary checkpoint: magic, version, config fields as u64, then each
/// parameter tensor as little-endian f32 in declaration order.
template <class T>
std::string serialize_checkpoint(const Transformer<T>& m) {
  std::string buf;
  const auto& c = m.config();
  io::put_le<std::uint32_t>(buf, kCheckpointMagic);
  io::put_le<std::uint32_t>(buf, kCheckpointVersion);
  for (std::uint64_t v : {std::uint64_t(c.d_model), std::uint64_t(c.n_layers),
                          std::uint64_t(c.n_heads), std::uint64_t(c.d_ff),
                          std::uint64_t(c.vocab_size), std::uint64_t(c.max_seq), c.seed}) {
    io::put_le<std::uint64_t>(buf, v);
  }
  for (const auto* t : m.params().all()) {
    for (T v : t->data()) io::put_le<float>(buf, static_cast<float>(v));
  }
  return buf;
}

template <class T>
Transformer<T> deserialize_checkpoint(std::string_view buf) {
  std::size_t pos = 0;
  if (io::get_le<std::uint32_t>(buf, pos) != kCheckpointMagic) {
    throw ContractError("checkpoint: bad magic");
  }
  const auto version = io::get_le<std::uint32_t>(buf, pos);
  if (version != kCheckpointVersion) {
    throw ContractError("checkpoint: unsupported version " + std::to_string(version));
  }
  ModelConfig c;
  c.d_model = io::get_le<std::uint64_t>(buf, pos);
  c.n_layers = io::get_le<std::uint64_t>(buf, pos);
  c.n_heads = io::get_le<std::uint64_t>(buf, pos);
  c.d_ff = io::get_le<std::uint64_t>(buf, pos);
  c.vocab_size = io::get_le<std::uint64_t>(buf, pos);
  c.max_seq = io::get_le<std::uint64_t>(buf, pos);
  c.seed = io::get_le<std::uint64_t>(buf, pos);
  Transformer<T> m(c);
  for (auto* t : m.params().all()) {
    for (T& v : t->data()) v = static_cast<T>(io::get_le<float>(buf, pos));
  }
  if (pos != buf.size()) throw ContractError("checkpoint: trailing bytes");
  return m;
}

template <class T>
void save_checkpoint(const std::filesystem::path& p, const Transformer<T>& m) {
  io::write_file(p, serialize_checkpoint(m));
}

template <class T>
Transformer<T> load_checkpoint(const std::filesystem::path& p) {
  return deserialize_checkpoint<T>(io::read_file(p));
}

}  // namespace arbsteer::model
