#pragma once

#include <string>

#include <json.hpp>

#include "fddprec/binio.hpp"
#include "fddprec/channel.hpp"
#include "fddprec/config.hpp"

namespace fddprec {

// Dataset file layout:
//   "FDDC" | version u16 LE | header length u32 LE | header (UTF-8 JSON)
//   | payload: S*K*N_t complex entries as little-endian float32 (re, im)
//   | CRC32 (u32 LE) of the payload bytes
inline constexpr char kDatasetMagic[4] = {'F', 'D', 'D', 'C'};
inline constexpr std::uint16_t kDatasetVersion = 1;

inline void save_dataset(const ChannelDataset& ds, const std::string& path) {
  nlohmann::json header;
  header["config"] = ds.config;
  header["samples"] = ds.samples;
  const std::string header_text = header.dump();

  std::vector<unsigned char> out;
  out.reserve(14 + header_text.size() + ds.data.size() * 4 + 4);
  out.insert(out.end(), kDatasetMagic, kDatasetMagic + 4);
  binio::put_u16(out, kDatasetVersion);
  binio::put_u32(out, static_cast<std::uint32_t>(header_text.size()));
  out.insert(out.end(), header_text.begin(), header_text.end());

  const std::size_t payload_start = out.size();
  for (float v : ds.data) binio::put_f32(out, v);
  const std::uint32_t crc = crc32(out.data() + payload_start, out.size() - payload_start);
  binio::put_u32(out, crc);
  binio::write_file(path, out);
}

inline ChannelDataset load_dataset(const std::string& path) {
  const auto bytes = binio::read_file(path);
  binio::Reader r(bytes);
  const std::string magic = r.bytes(4, "magic");
  if (magic != std::string(kDatasetMagic, 4))
    throw bad_magic_error("'" + path + "': bad magic '" + magic + "', expected 'FDDC'");
  const std::uint16_t version = r.u16("version");
  if (version != kDatasetVersion)
    throw version_error("'" + path + "': dataset format version " + std::to_string(version) +
                        ", this build reads version " + std::to_string(kDatasetVersion));
  const std::uint32_t header_len = r.u32("header length");
  const std::string header_text = r.bytes(header_len, "header");

  ChannelDataset ds;
  std::size_t declared_samples = 0;
  try {
    const auto header = nlohmann::json::parse(header_text);
    ds.config = header.at("config").get<TaskConfig>();
    declared_samples = header.at("samples").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw manifest_error("'" + path + "': malformed dataset header: " + e.what());
  }

  const std::size_t payload_floats = declared_samples * ds.config.n_users * ds.config.n_tx * 2;
  const std::size_t payload_start = r.pos;
  r.need(payload_floats * 4 + 4, "payload and checksum");
  ds.samples = declared_samples;
  ds.data.resize(payload_floats);
  for (std::size_t i = 0; i < payload_floats; ++i) ds.data[i] = r.f32("payload");
  const std::uint32_t actual = crc32(bytes.data() + payload_start, payload_floats * 4);
  const std::uint32_t stored = r.u32("checksum");
  if (actual != stored)
    throw checksum_error("'" + path + "': payload CRC32 mismatch (stored " +
                         std::to_string(stored) + ", computed " + std::to_string(actual) + ")");
  return ds;
}

}  // namespace fddprec
