#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "vinil/model.hpp"

namespace vinil {

// Binary checkpoint: magic "VINIL1\0", entry count (u32 LE), then per
// entry: name length (u32 LE), UTF-8 name, rank (u32 LE), dims (u32 LE
// each), payload as 64-bit LE floats. The instance registry rides along
// as the synthetic entry "classifier.instances".
static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian; big-endian hosts are unsupported");

namespace detail {

constexpr char kCheckpointMagic[7] = {'V', 'I', 'N', 'I', 'L', '1', '\0'};
constexpr const char* kInstanceEntry = "classifier.instances";

inline void put_u32(std::ofstream& f, uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), 4);
}

struct Reader {
  std::ifstream f;
  uint64_t offset = 0;
  std::string path;

  void read(void* dst, size_t n, const char* what) {
    f.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    check(f.gcount() == static_cast<std::streamsize>(n), "load_checkpoint: ", path,
          ": truncated while reading ", what, " at offset ", offset);
    offset += n;
  }

  uint32_t u32(const char* what) {
    uint32_t v = 0;
    read(&v, 4, what);
    return v;
  }
};

}  // namespace detail

inline void save_checkpoint(const ModelState& model, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "save_checkpoint: cannot open ", path.string(), " for writing");
  f.write(detail::kCheckpointMagic, sizeof detail::kCheckpointMagic);

  const bool with_registry = !model.instance_slots.empty();
  detail::put_u32(f, static_cast<uint32_t>(model.params.size() + (with_registry ? 1 : 0)));
  auto write_entry = [&f](const std::string& name, const std::vector<int>& shape,
                          const std::vector<double>& values) {
    detail::put_u32(f, static_cast<uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(f, static_cast<uint32_t>(shape.size()));
    for (int d : shape) detail::put_u32(f, static_cast<uint32_t>(d));
    f.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
  };
  for (const auto& [name, p] : model.params) write_entry(name, p.shape, p.values);
  if (with_registry) {
    std::vector<double> ids(model.instance_slots.begin(), model.instance_slots.end());
    write_entry(detail::kInstanceEntry, {static_cast<int>(ids.size())}, ids);
  }
  check(f.good(), "save_checkpoint: write failed for ", path.string());
}

/// Restores a model saved with save_checkpoint. The encoder config must
/// match the checkpoint exactly; every stored parameter is validated
/// against the expected shape before anything is accepted.
inline ModelState load_checkpoint(const std::filesystem::path& path,
                                  const EncoderConfig& config) {
  detail::Reader r;
  r.path = path.string();
  r.f.open(path, std::ios::binary);
  check(r.f.good(), "load_checkpoint: cannot open ", r.path);

  char magic[sizeof detail::kCheckpointMagic];
  r.read(magic, sizeof magic, "magic");
  check(std::memcmp(magic, detail::kCheckpointMagic, sizeof magic) == 0,
        "load_checkpoint: ", r.path, ": bad magic at offset 0");
  const uint32_t count = r.u32("entry count");

  ModelState model = make_model(config, 0);
  std::map<std::string, Tensor> loaded;
  std::vector<double> registry;
  for (uint32_t e = 0; e < count; ++e) {
    const uint64_t entry_offset = r.offset;
    const uint32_t name_len = r.u32("name length");
    check(name_len > 0 && name_len < 4096, "load_checkpoint: ", r.path,
          ": implausible name length ", name_len, " at offset ", entry_offset);
    std::string name(name_len, '\0');
    r.read(name.data(), name_len, "name");
    const uint32_t rank = r.u32("rank");
    check(rank <= 8, "load_checkpoint: ", r.path, ": implausible rank ", rank, " for '", name,
          "' at offset ", entry_offset);
    std::vector<int> shape;
    int64_t n = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      const uint32_t dim = r.u32("dimension");
      check(dim > 0 && dim < (1u << 24), "load_checkpoint: ", r.path, ": bad dimension ", dim,
            " for '", name, "'");
      shape.push_back(static_cast<int>(dim));
      n *= dim;
    }
    std::vector<double> values(static_cast<size_t>(n));
    r.read(values.data(), static_cast<size_t>(n) * sizeof(double), "payload");
    if (name == detail::kInstanceEntry) {
      registry = std::move(values);
    } else {
      check(loaded.emplace(name, Tensor(shape, std::move(values))).second,
            "load_checkpoint: ", r.path, ": duplicate entry '", name, "'");
    }
  }

  // Encoder / projector parameters must match the configured skeleton.
  for (const auto& [name, expected] : model.params) {
    auto it = loaded.find(name);
    check(it != loaded.end(), "load_checkpoint: ", r.path, ": missing parameter '", name, "'");
    check(it->second.shape == expected.shape, "load_checkpoint: ", r.path, ": parameter '", name,
          "' has shape ", shape_str(it->second.shape), ", expected ", shape_str(expected.shape));
    model.params[name] = std::move(it->second);
    loaded.erase(it);
  }

  // Whatever remains must be the expandable classifier.
  auto wit = loaded.find("classifier.w");
  auto bit = loaded.find("classifier.b");
  if (wit != loaded.end() || bit != loaded.end() || !registry.empty()) {
    check(wit != loaded.end() && bit != loaded.end() && !registry.empty(),
          "load_checkpoint: ", r.path, ": incomplete classifier (need classifier.w, ",
          "classifier.b and ", detail::kInstanceEntry, ")");
    const int n = bit->second.shape[0];
    check(wit->second.rank() == 2 && wit->second.shape[0] == config.embed_dim &&
              wit->second.shape[1] == n && static_cast<int>(registry.size()) == n,
          "load_checkpoint: ", r.path, ": classifier shapes ", shape_str(wit->second.shape),
          " / ", shape_str(bit->second.shape), " do not agree with ", registry.size(),
          " registered instances (embed_dim ", config.embed_dim, ")");
    model.params["classifier.w"] = std::move(wit->second);
    model.params["classifier.b"] = std::move(bit->second);
    model.num_instances = n;
    for (double id : registry) model.instance_slots.push_back(static_cast<int>(id));
    loaded.erase(wit);
    loaded.erase(bit);
  }
  check(loaded.empty(), "load_checkpoint: ", r.path, ": unexpected entry '",
        loaded.empty() ? "" : loaded.begin()->first, "'");
  return model;
}

}  // namespace vinil
