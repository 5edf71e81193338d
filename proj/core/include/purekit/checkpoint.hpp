#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "purekit/network.hpp"

namespace purekit {

// "PEBM" tensor container:
//   magic "PEBM" | version u32 | entry count u32
//   per entry: name length u16 | UTF-8 name | rank u8 | dims u32 each | f32 payload
// All integers and floats little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(std::span<const ParamEntry> entries);
std::vector<ParamEntry> decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, std::span<const ParamEntry> entries);
std::vector<ParamEntry> load_checkpoint(const std::filesystem::path& path);

// Free-form metadata travels as a final zero-length entry whose name is
// "__meta__" followed by newline-separated key=value lines.
using Metadata = std::map<std::string, std::string>;
inline constexpr const char* kMetaPrefix = "__meta__";

ParamEntry make_meta_entry(const Metadata& meta);
bool is_meta_entry(const ParamEntry& entry);
Metadata parse_meta_entry(const ParamEntry& entry);

// A network plus its architecture (stored under meta "arch") and any extra
// named tensors that ride along (the training bank, optimizer state).
struct ModelFile {
  NetworkSpec spec;
  NetworkParams params;
  std::vector<ParamEntry> extras;
  Metadata meta;
};

std::vector<ParamEntry> model_entries(const ModelFile& model);
ModelFile model_from_entries(std::vector<ParamEntry> entries);
void save_model(const std::filesystem::path& path, const ModelFile& model);
ModelFile load_model(const std::filesystem::path& path);

}  // namespace purekit
