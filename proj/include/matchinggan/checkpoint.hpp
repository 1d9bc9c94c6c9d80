#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "matchinggan/data.hpp"
#include "matchinggan/nn.hpp"

// Checkpoint container:
//
//   bytes 0..7    magic "MGANCKPT"
//   bytes 8..11   format version, uint32 little endian
//   bytes 12..19  header length H, uint64 little endian
//   next H bytes  JSON header: metadata plus an index of arrays
//                 {name, shape, offset, count} in lexicographic name order
//   remainder     float32 little-endian payloads, in index order
//
// Identical state always serializes to identical bytes.

namespace mgan {

inline constexpr char kCheckpointMagic[8] = {'M', 'G', 'A', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Tensor<float>> arrays;
};

namespace ckpt_detail {

template <class U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <class U>
U get_le(const std::string& in, std::size_t at) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return static_cast<U>(v);
}

}  // namespace ckpt_detail

inline std::string serialize_checkpoint(const CheckpointData& data) {
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : data.arrays) {
    index.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"count", t.size()}});
    offset += t.size();
  }
  nlohmann::json header = {{"meta", data.meta}, {"arrays", index}};
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  ckpt_detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  ckpt_detail::put_le<std::uint64_t>(out, h.size());
  out += h;
  out.reserve(out.size() + offset * 4);
  for (const auto& [name, t] : data.arrays)
    for (float v : t.values()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      ckpt_detail::put_le<std::uint32_t>(out, bits);
    }
  return out;
}

inline CheckpointData deserialize_checkpoint(const std::string& bytes, const std::string& origin) {
  auto fail = [&](const std::string& why) { return CheckpointError("checkpoint " + origin + ": " + why); };
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) throw fail("bad magic, not a checkpoint");
  const auto version = ckpt_detail::get_le<std::uint32_t>(bytes, 8);
  if (version != kCheckpointVersion)
    throw fail("format version " + std::to_string(version) + " is not supported (expected " +
               std::to_string(kCheckpointVersion) + ")");
  const auto hlen = ckpt_detail::get_le<std::uint64_t>(bytes, 12);
  if (20 + hlen > bytes.size()) throw fail("truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(20, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("corrupt header: ") + e.what());
  }
  CheckpointData data;
  data.meta = header.at("meta");
  const std::size_t payload = 20 + hlen;
  for (const auto& e : header.at("arrays")) {
    const auto name = e.at("name").get<std::string>();
    const auto shape = e.at("shape").get<Shape>();
    const auto off = e.at("offset").get<std::uint64_t>();
    const auto count = e.at("count").get<std::uint64_t>();
    if (count != shape_numel(shape)) throw fail("array " + name + " has inconsistent size");
    if (payload + (off + count) * 4 > bytes.size()) throw fail("truncated payload in array " + name);
    Tensor<float> t(shape);
    for (std::uint64_t i = 0; i < count; ++i) {
      const auto bits = ckpt_detail::get_le<std::uint32_t>(bytes, payload + (off + i) * 4);
      std::memcpy(&t[i], &bits, 4);
    }
    data.arrays.emplace(name, std::move(t));
  }
  return data;
}

inline void save_checkpoint(const CheckpointData& data, const fs::path& path) {
  write_text_atomic(path, serialize_checkpoint(data));
}

inline CheckpointData load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, path.string());
}

// Adds a state list under `prefix.` to the checkpoint.
inline void put_state(CheckpointData& data, const std::string& prefix, const nn::StateList<float>& state) {
  for (const auto& nv : state) data.arrays[prefix + "." + nv.name] = nv.var.value();
}

// Copies arrays named `prefix.*` into the state list. The state and the
// checkpoint must agree exactly on names and shapes; the first disagreement in
// name order is reported.
inline void get_state(const CheckpointData& data, const std::string& prefix, nn::StateList<float>& state) {
  std::map<std::string, const nn::NamedVar<float>*> wanted;
  for (const auto& nv : state) wanted[prefix + "." + nv.name] = &nv;
  std::vector<std::string> stored;
  for (const auto& [name, _] : data.arrays)
    if (name.starts_with(prefix + ".")) stored.push_back(name);
  auto w = wanted.begin();
  auto s = stored.begin();
  while (w != wanted.end() || s != stored.end()) {
    if (s == stored.end() || (w != wanted.end() && w->first < *s))
      throw CheckpointError("checkpoint lacks array " + w->first + " required by the model");
    if (w == wanted.end() || *s < w->first)
      throw CheckpointError("checkpoint array " + *s + " has no counterpart in the model");
    const auto& t = data.arrays.at(*s);
    if (t.shape() != w->second->var.shape())
      throw CheckpointError("checkpoint array " + *s + " has shape " + shape_str(t.shape()) + ", model expects " +
                            shape_str(w->second->var.shape()));
    ++w;
    ++s;
  }
  for (auto& nv : state) nv.var.mutable_value() = data.arrays.at(prefix + "." + nv.name);
}

}  // namespace mgan
