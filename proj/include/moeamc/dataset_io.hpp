#pragma once

#include <string>

#include "moeamc/signal.hpp"

namespace moeamc {

// On-disk dataset format, little-endian:
//   magic "MOEAMCDS" | u32 version=1 | u32 header_len | header JSON
//   | N records [u16 class][f32 snr_db][u32 L][L*f32 I][L*f32 Q]
//   | u32 CRC32 over the record bytes
// The header JSON carries the generating spec, split tag, and count.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace moeamc
