#include "purekit/checkpoint.hpp"

#include <limits>

#include "purekit/error.hpp"
#include "purekit/io.hpp"

namespace purekit {

namespace {
constexpr std::uint8_t kMagic[4] = {'P', 'E', 'B', 'M'};
}

std::vector<std::uint8_t> encode_checkpoint(std::span<const ParamEntry> entries) {
  ByteWriter w;
  w.raw(kMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const ParamEntry& e : entries) {
    if (e.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw FormatError("entry name too long: " + e.name.substr(0, 32) + "...");
    }
    if (e.shape.size() > std::numeric_limits<std::uint8_t>::max()) {
      throw FormatError("entry " + e.name + " has too many dimensions");
    }
    std::size_t n = 1;
    for (int d : e.shape) n *= static_cast<std::size_t>(d);
    if (n != e.values.size()) throw ShapeError("entry " + e.name + " payload does not match shape");
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.raw(std::span(reinterpret_cast<const std::uint8_t*>(e.name.data()), e.name.size()));
    w.u8(static_cast<std::uint8_t>(e.shape.size()));
    for (int d : e.shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : e.values) w.f32(v);
  }
  return std::move(w.bytes());
}

std::vector<ParamEntry> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "checkpoint");
  auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw FormatError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  std::vector<ParamEntry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    ParamEntry e;
    const std::uint16_t name_len = r.u16();
    auto name = r.take(name_len);
    e.name.assign(name.begin(), name.end());
    const std::uint8_t rank = r.u8();
    std::uint64_t n = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32();
      if (dim > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) {
        throw FormatError("checkpoint: entry " + e.name + " dimension too large");
      }
      e.shape.push_back(static_cast<int>(dim));
      n *= dim;
      if (n > r.remaining() / 4 + 1) {
        throw FormatError("checkpoint: entry " + e.name + " payload exceeds file size");
      }
    }
    if (n * 4 > r.remaining()) throw FormatError("checkpoint: entry " + e.name + " truncated");
    e.values.resize(static_cast<std::size_t>(n));
    for (auto& v : e.values) v = r.f32();
    entries.push_back(std::move(e));
  }
  if (r.remaining() != 0) {
    throw FormatError("checkpoint: " + std::to_string(r.remaining()) +
                      " trailing bytes after last entry");
  }
  return entries;
}

void save_checkpoint(const std::filesystem::path& path, std::span<const ParamEntry> entries) {
  write_file_atomic(path, encode_checkpoint(entries));
}

std::vector<ParamEntry> load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

ParamEntry make_meta_entry(const Metadata& meta) {
  std::string name = kMetaPrefix;
  for (const auto& [k, v] : meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw FormatError("metadata key/value may not contain '=' (key) or newlines: " + k);
    }
    name += "\n" + k + "=" + v;
  }
  return ParamEntry{name, {0}, {}};
}

bool is_meta_entry(const ParamEntry& entry) {
  return entry.name.rfind(kMetaPrefix, 0) == 0 && entry.values.empty();
}

Metadata parse_meta_entry(const ParamEntry& entry) {
  if (!is_meta_entry(entry)) throw FormatError("not a metadata entry: " + entry.name);
  const auto kv = parse_key_values(entry.name.substr(std::string(kMetaPrefix).size()));
  return Metadata(kv.begin(), kv.end());
}

std::vector<ParamEntry> model_entries(const ModelFile& model) {
  std::vector<ParamEntry> entries = model.params.entries();
  entries.insert(entries.end(), model.extras.begin(), model.extras.end());
  Metadata meta = model.meta;
  meta["arch"] = model.spec.to_string();
  entries.push_back(make_meta_entry(meta));
  return entries;
}

ModelFile model_from_entries(std::vector<ParamEntry> entries) {
  if (entries.empty() || !is_meta_entry(entries.back())) {
    throw FormatError("model file lacks a trailing metadata entry");
  }
  ModelFile model;
  model.meta = parse_meta_entry(entries.back());
  entries.pop_back();
  auto arch = model.meta.find("arch");
  if (arch == model.meta.end()) throw FormatError("model metadata has no arch");
  model.spec = NetworkSpec::parse(arch->second);
  const auto layout = model.spec.param_layout();
  if (entries.size() < layout.size()) throw FormatError("model file is missing parameters");
  std::vector<ParamEntry> params(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(layout.size()));
  model.extras.assign(entries.begin() + static_cast<std::ptrdiff_t>(layout.size()), entries.end());
  model.params = NetworkParams(std::move(params));
  model.params.require_matches(model.spec);
  return model;
}

void save_model(const std::filesystem::path& path, const ModelFile& model) {
  save_checkpoint(path, model_entries(model));
}

ModelFile load_model(const std::filesystem::path& path) {
  try {
    return model_from_entries(load_checkpoint(path));
  } catch (const ShapeError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace purekit
