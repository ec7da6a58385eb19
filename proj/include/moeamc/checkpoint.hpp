#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "moeamc/crc32.hpp"
#include "moeamc/io_util.hpp"
#include "moeamc/params.hpp"

namespace moeamc {

// Checkpoint format, little-endian:
//   magic "MOEAMCPT" | u32 version=1 | u32 manifest_len | manifest JSON
//   | concatenated f32 tensor data | u32 CRC32 over the tensor data
// The manifest holds a caller-supplied config object plus one entry per
// tensor: name, shape, dtype, and byte offset into the data blob. Values are
// stored as f32 regardless of the in-memory scalar type.

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  nlohmann::json config;
  std::vector<CheckpointTensor> tensors;
};

namespace detail {
inline constexpr char kCkptMagic[] = "MOEAMCPT";
inline constexpr std::uint32_t kCkptVersion = 1;
}  // namespace detail

template <class T>
void save_checkpoint(const ParamStore<T>& store, const nlohmann::json& config,
                     const std::string& path) {
  ByteWriter blob;
  nlohmann::json manifest;
  manifest["config"] = config;
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& e : store.entries()) {
    nlohmann::json t;
    t["name"] = e.name;
    t["shape"] = e.tensor.shape();
    t["dtype"] = "f32";
    t["offset"] = blob.size();
    manifest["tensors"].push_back(t);
    for (std::size_t i = 0; i < e.tensor.size(); ++i) {
      blob.f32(static_cast<float>(e.tensor[i]));
    }
  }
  std::string mjson = manifest.dump();

  ByteWriter out;
  out.str(detail::kCkptMagic);
  out.u32(detail::kCkptVersion);
  out.u32(static_cast<std::uint32_t>(mjson.size()));
  out.str(mjson);
  out.bytes(blob.data().data(), blob.size());
  out.u32(crc32(blob.data().data(), blob.size()));
  write_file_bytes(path, out.data());
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::vector<std::uint8_t> bytes = read_file_bytes(path);
  ByteReader r(bytes);
  if (r.remaining() < 8 || r.str(8) != detail::kCkptMagic) throw IoError("bad magic in " + path);
  std::uint32_t version = r.u32();
  if (version != detail::kCkptVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  }
  std::uint32_t mlen = r.u32();
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(r.str(mlen));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest in " + path + ": " + e.what());
  }
  if (r.remaining() < 4) throw IoError("truncated payload in " + path);
  std::size_t blob_off = r.pos();
  std::size_t blob_len = r.remaining() - 4;

  Checkpoint ck;
  try {
    ck.config = manifest.at("config");
    for (const auto& t : manifest.at("tensors")) {
      CheckpointTensor ct;
      ct.name = t.at("name").get<std::string>();
      ct.shape = t.at("shape").get<Shape>();
      if (t.at("dtype").get<std::string>() != "f32") {
        throw IoError("unsupported dtype in " + path);
      }
      auto offset = t.at("offset").get<std::size_t>();
      std::size_t n = shape_size(ct.shape);
      if (offset + n * 4 > blob_len) throw IoError("truncated payload in " + path);
      ByteReader tr(bytes.data() + blob_off + offset, n * 4);
      ct.data.resize(n);
      for (auto& v : ct.data) v = tr.f32();
      ck.tensors.push_back(std::move(ct));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest in " + path + ": " + e.what());
  }
  std::uint32_t stored =
      ByteReader(bytes.data() + blob_off + blob_len, 4).u32();
  if (stored != crc32(bytes.data() + blob_off, blob_len)) {
    throw IoError("checksum failure in " + path);
  }
  return ck;
}

// Copies checkpoint values into a store built from the same config; every
// name and shape must match exactly.
template <class T>
void load_into_store(ParamStore<T>& store, const Checkpoint& ck) {
  if (ck.tensors.size() != store.size()) {
    throw ValidationError("checkpoint: tensor count " + std::to_string(ck.tensors.size()) +
                          ", store has " + std::to_string(store.size()));
  }
  for (const auto& ct : ck.tensors) {
    Tensor<T>& t = store.get(ct.name);
    if (t.shape() != ct.shape) {
      throw ValidationError("checkpoint: shape mismatch for " + ct.name);
    }
    for (std::size_t i = 0; i < ct.data.size(); ++i) t[i] = static_cast<T>(ct.data[i]);
  }
}

}  // namespace moeamc
