#include "moeamc/dataset_io.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "moeamc/crc32.hpp"
#include "moeamc/io_util.hpp"

namespace moeamc {

namespace {

constexpr char kMagic[] = "MOEAMCDS";
constexpr std::uint32_t kVersion = 1;

nlohmann::json spec_to_json(const DatasetSpec& spec) {
  nlohmann::json j;
  for (Scheme s : spec.schemes) j["schemes"].push_back(scheme_name(s));
  j["snr_grid_db"] = spec.snr_grid_db;
  j["frame_len"] = spec.frame_len;
  j["samples_per_symbol"] = spec.samples_per_symbol;
  j["frames_per_cell"] = spec.frames_per_cell;
  j["seed"] = spec.seed;
  return j;
}

DatasetSpec spec_from_json(const nlohmann::json& j) {
  DatasetSpec spec;
  for (const auto& name : j.at("schemes")) {
    spec.schemes.push_back(scheme_from_name(name.get<std::string>()));
  }
  spec.snr_grid_db = j.at("snr_grid_db").get<std::vector<double>>();
  spec.frame_len = j.at("frame_len").get<std::size_t>();
  spec.samples_per_symbol = j.at("samples_per_symbol").get<std::size_t>();
  spec.frames_per_cell = j.at("frames_per_cell").get<std::size_t>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  return spec;
}

}  // namespace

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  f.seekg(0, std::ios::end);
  auto len = static_cast<std::size_t>(f.tellg());
  f.seekg(0);
  std::vector<std::uint8_t> bytes(len);
  if (len > 0) f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(len));
  if (!f) throw IoError("read failed for " + path);
  return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for " + path);
}

void write_file_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw IoError("write failed for " + path);
}

void save_dataset(const Dataset& ds, const std::string& path) {
  nlohmann::json header = spec_to_json(ds.spec);
  header["split_tag"] = split_tag_name(ds.split_tag);
  header["count"] = ds.examples.size();
  std::string hjson = header.dump();

  ByteWriter records;
  for (const auto& ex : ds.examples) {
    records.u16(ex.class_idx);
    records.f32(ex.snr_db);
    records.u32(static_cast<std::uint32_t>(ex.frame.length()));
    for (float v : ex.frame.i) records.f32(v);
    for (float v : ex.frame.q) records.f32(v);
  }

  ByteWriter out;
  out.str(kMagic);
  out.u32(kVersion);
  out.u32(static_cast<std::uint32_t>(hjson.size()));
  out.str(hjson);
  out.bytes(records.data().data(), records.size());
  out.u32(crc32(records.data().data(), records.size()));
  write_file_bytes(path, out.data());
}

Dataset load_dataset(const std::string& path) {
  std::vector<std::uint8_t> bytes = read_file_bytes(path);
  ByteReader r(bytes);
  if (r.remaining() < 8 || r.str(8) != kMagic) throw IoError("bad magic in " + path);
  std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw IoError("unsupported dataset version " + std::to_string(version) + " in " + path);
  }
  std::uint32_t hlen = r.u32();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.str(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed header in " + path + ": " + e.what());
  }

  Dataset ds;
  try {
    ds.spec = spec_from_json(header);
    ds.split_tag = split_tag_from_name(header.at("split_tag").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed header in " + path + ": " + e.what());
  }
  auto count = header.at("count").get<std::size_t>();

  if (r.remaining() < 4) throw IoError("truncated payload in " + path);
  std::size_t records_off = r.pos();
  std::size_t records_len = r.remaining() - 4;

  ds.examples.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    LabeledExample ex;
    ex.class_idx = r.u16();
    float snr = r.f32();
    std::uint32_t len = r.u32();
    ex.frame.i.resize(len);
    ex.frame.q.resize(len);
    for (auto& v : ex.frame.i) v = r.f32();
    for (auto& v : ex.frame.q) v = r.f32();
    // snap to the grid so stored f32 values compare exactly to spec doubles
    double best = 0.0, best_d = 1e300;
    for (double g : ds.spec.snr_grid_db) {
      double d = std::abs(g - snr);
      if (d < best_d) {
        best_d = d;
        best = g;
      }
    }
    if (best_d > 1e-3) {
      throw IoError("snr_db " + std::to_string(snr) + " not on the spec grid in " + path);
    }
    ex.snr_db = static_cast<float>(best);
    ds.examples.push_back(std::move(ex));
  }
  if (r.pos() - records_off != records_len) {
    throw IoError("truncated payload in " + path);
  }
  std::uint32_t stored = r.u32();
  std::uint32_t actual = crc32(bytes.data() + records_off, records_len);
  if (stored != actual) throw IoError("checksum failure in " + path);
  return ds;
}

}  // namespace moeamc
