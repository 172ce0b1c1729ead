#pragma once

// Binary checkpoint container.
//
//   "ZSLCKPT1"                   8-byte magic
//   u32 version                  kCheckpointVersion
//   u64 header length, bytes     JSON header (model config, vocab, metadata)
//   u64 parameter count
//   per parameter: u32 name length, name bytes, u32 rank, u64 dims[rank],
//                  numel little-endian IEEE-754 doubles
//
// All integers are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "zsl/errors.hpp"
#include "zsl/model.hpp"
#include "zsl/tensor.hpp"

namespace zsl {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'Z', 'S', 'L', 'C', 'K', 'P', 'T', '1'};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const char* what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw ParseError(std::string("checkpoint truncated reading ") + what);
  return v;
}

}  // namespace detail

inline void write_parameters(std::ostream& out, const ParameterSet& params) {
  detail::put<std::uint64_t>(out, params.size());
  for (const auto& [name, p] : params) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Shape& s = p.value.shape();
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(s.rank()));
    for (std::size_t d : s.dims()) detail::put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
}

inline ParameterSet read_parameters(std::istream& in) {
  ParameterSet params;
  const auto count = detail::get<std::uint64_t>(in, "parameter count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = detail::get<std::uint32_t>(in, "name length");
    if (len > 4096) throw ParseError("checkpoint parameter name too long");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw ParseError("checkpoint truncated reading a name");
    const auto rank = detail::get<std::uint32_t>(in, "rank");
    if (rank > Shape::kMaxRank) throw ParseError("checkpoint parameter '" + name + "' has rank " + std::to_string(rank));
    std::size_t dims[Shape::kMaxRank];
    for (std::uint32_t r = 0; r < rank; ++r) dims[r] = detail::get<std::uint64_t>(in, "dims");
    Shape shape(std::span<const std::size_t>(dims, rank));
    Tensor t(shape);
    if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double))))
      throw ParseError("checkpoint truncated in values of '" + name + "'");
    params.add(name, std::move(t));
  }
  return params;
}

struct Checkpoint {
  Model model;
  nlohmann::json metadata = nlohmann::json::object();
};

inline void write_checkpoint(std::ostream& out, const Model& model, const nlohmann::json& metadata = nlohmann::json::object()) {
  const nlohmann::json header = {{"config", to_json(model.config)},
                                 {"vocab", model.vocab.entries()},
                                 {"metadata", metadata}};
  const std::string text = header.dump();
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_parameters(out, model.params);
}

inline Checkpoint read_checkpoint(std::istream& in) {
  char magic[sizeof kCheckpointMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw VersionError("not a checkpoint file (bad magic)");
  const auto version = detail::get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint format version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));
  const auto len = detail::get<std::uint64_t>(in, "header length");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw ParseError("checkpoint truncated in header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what());
  }
  Checkpoint ck;
  ck.model.config = model_config_from_json(header.at("config"));
  ck.model.vocab = Vocab::from_entries(header.at("vocab").get<std::vector<std::string>>());
  ck.metadata = header.value("metadata", nlohmann::json::object());
  ck.model.params = read_parameters(in);
  if (ck.model.config.encoder.vocab_size != ck.model.vocab.size())
    throw VersionError("checkpoint vocab size disagrees with its config");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Model& model,
                            const nlohmann::json& metadata = nlohmann::json::object()) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write checkpoint " + path);
  write_checkpoint(out, model, metadata);
  if (!out) throw ParseError("error writing checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path);
  return read_checkpoint(in);
}

// Raw bytes, for bitwise comparison.
inline std::string checkpoint_bytes(const Model& model, const nlohmann::json& metadata = nlohmann::json::object()) {
  std::ostringstream out(std::ios::binary);
  write_checkpoint(out, model, metadata);
  return out.str();
}

}  // namespace zsl
