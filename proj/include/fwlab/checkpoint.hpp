#pragma once

// Parameter checkpoints: little-endian flat binary payload behind a JSON
// header (names, shapes, precision, byte offsets). Round-trips bit-exactly.

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "fwlab/optim.hpp"
#include "fwlab/util.hpp"

namespace fwlab {

namespace detail {
template <typename T>
const char* precision_tag();
template <>
inline const char* precision_tag<float>() {
  return "f32";
}
template <>
inline const char* precision_tag<double>() {
  return "f64";
}
inline constexpr char kMagic[4] = {'F', 'W', 'L', '1'};
}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store) {
  nlohmann::json header;
  header["precision"] = detail::precision_tag<T>();
  header["params"] = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& p : store.params) {
    header["params"].push_back(
        {{"name", p.name}, {"shape", p.value.shape}, {"offset", offset}});
    offset += p.value.data.size() * sizeof(T);
  }
  const std::string head = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(detail::kMagic, 4);
  const uint64_t head_len = head.size();
  out.write(reinterpret_cast<const char*>(&head_len), sizeof(head_len));
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const auto& p : store.params)
    out.write(reinterpret_cast<const char*>(p.value.data.data()),
              static_cast<std::streamsize>(p.value.data.size() * sizeof(T)));
}

// Loads into an existing store; parameter names and shapes must match the
// file exactly.
template <typename T>
void load_checkpoint(const std::string& path, ParamStore<T>& store) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (std::memcmp(magic, detail::kMagic, 4) != 0)
    throw DataError("not a checkpoint file: " + path);
  uint64_t head_len = 0;
  in.read(reinterpret_cast<char*>(&head_len), sizeof(head_len));
  std::string head(head_len, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head_len));
  nlohmann::json header = nlohmann::json::parse(head);
  if (header.at("precision").get<std::string>() != detail::precision_tag<T>())
    throw DataError("checkpoint precision mismatch");
  const auto& params = header.at("params");
  if (params.size() != store.params.size())
    throw DataError("checkpoint parameter count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = store.params[i];
    if (params[i].at("name").get<std::string>() != p.name)
      throw DataError("checkpoint parameter order mismatch at " + p.name);
    if (params[i].at("shape").get<std::vector<int>>() != p.value.shape)
      throw DataError("checkpoint shape mismatch for " + p.name);
    in.read(reinterpret_cast<char*>(p.value.data.data()),
            static_cast<std::streamsize>(p.value.data.size() * sizeof(T)));
  }
  if (!in) throw DataError("truncated checkpoint: " + path);
}

}  // namespace fwlab
