// SPDX-License-Identifier: Apache-2.0
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "chela/checkpoint.hpp"
#include "chela/config.hpp"

namespace chela {

using nlohmann::json;

namespace {

constexpr std::size_t kMagicLen = sizeof(kCheckpointMagic) - 1;

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
  return v;
}

void put_f32_le(std::string& out, float f) {
  std::uint32_t u = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

float get_f32_le(const unsigned char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= std::uint32_t(p[i]) << (8 * i);
  return std::bit_cast<float>(u);
}

// Every tensor stored in a checkpoint, in file order.
std::vector<std::pair<std::string, Tensorf*>> stored_tensors(ModelParams<float>& p, OptimState<float>& opt) {
  std::vector<std::pair<std::string, Tensorf*>> out;
  std::vector<std::string> trainable;
  for (auto& r : model_params(p)) {
    out.emplace_back("param." + r.name, r.tensor);
    if (r.trainable) trainable.push_back(r.name);
  }
  if (!opt.m.empty()) {
    if (opt.m.size() != trainable.size() || opt.v.size() != trainable.size()) {
      throw ManifestError("optimizer state does not match the trainable parameter count");
    }
    for (std::size_t i = 0; i < trainable.size(); ++i) out.emplace_back("optim.m." + trainable[i], &opt.m[i]);
    for (std::size_t i = 0; i < trainable.size(); ++i) out.emplace_back("optim.v." + trainable[i], &opt.v[i]);
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct Parsed {
  json manifest;
  std::size_t payload_start = 0;
};

Parsed parse_header(const std::string& bytes, const std::string& path) {
  if (bytes.size() < kMagicLen || std::memcmp(bytes.data(), kCheckpointMagic, kMagicLen) != 0) {
    throw BadMagicError("checkpoint '" + path + "': bad magic (expected CHELA1)");
  }
  if (bytes.size() < kMagicLen + 8) throw TruncatedPayloadError("checkpoint '" + path + "': truncated header");
  const std::uint64_t hlen = get_u64_le(reinterpret_cast<const unsigned char*>(bytes.data()) + kMagicLen);
  if (hlen > bytes.size() - kMagicLen - 8) throw TruncatedPayloadError("checkpoint '" + path + "': truncated manifest");
  Parsed p;
  try {
    p.manifest = json::parse(bytes.substr(kMagicLen + 8, hlen));
  } catch (const json::exception& e) {
    throw ManifestError("checkpoint '" + path + "': manifest is not valid JSON: " + e.what());
  }
  p.payload_start = kMagicLen + 8 + hlen;
  return p;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  Checkpoint copy = ck;  // stored_tensors needs mutable access
  auto tensors = stored_tensors(copy.params, copy.optim);

  json entries = json::array();
  std::string payload;
  for (const auto& [name, t] : tensors) {
    const std::size_t offset = payload.size();
    for (float f : t->storage()) put_f32_le(payload, f);
    entries.push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}, {"nbytes", payload.size() - offset}});
  }
  const json manifest{{"format", "CHELA1"},
                      {"dtype", "float32"},
                      {"endianness", "little"},
                      {"config", config_to_json(ck.params.cfg)},
                      {"rng_state", ck.rng_state},
                      {"step", ck.step},
                      {"optim_step", ck.optim.step},
                      {"payload_bytes", payload.size()},
                      {"tensors", entries}};
  const std::string header = manifest.dump();

  std::string file(kCheckpointMagic, kMagicLen);
  put_u64_le(file, header.size());
  file += header;
  file += payload;

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint '" + tmp + "'");
    out.write(file.data(), static_cast<std::streamsize>(file.size()));
    out.flush();
    if (!out) throw CheckpointError("write failed for checkpoint '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot move checkpoint into place at '" + path + "': " + ec.message());
}

json read_checkpoint_manifest(const std::string& path) { return parse_header(read_file(path), path).manifest; }

Checkpoint load_checkpoint(const std::string& path) {
  const std::string bytes = read_file(path);
  const Parsed parsed = parse_header(bytes, path);
  const json& m = parsed.manifest;

  Checkpoint ck;
  std::vector<json> entries;
  std::uint64_t payload_bytes = 0;
  try {
    if (m.at("format") != "CHELA1" || m.at("dtype") != "float32") throw ManifestError("unsupported format or dtype");
    ck.params = init_chela_params<float>(config_from_json(m.at("config")));
    ck.rng_state = m.at("rng_state").get<std::uint64_t>();
    ck.step = m.at("step").get<std::uint64_t>();
    ck.optim.step = m.at("optim_step").get<std::uint64_t>();
    payload_bytes = m.at("payload_bytes").get<std::uint64_t>();
    entries = m.at("tensors").get<std::vector<json>>();
  } catch (const json::exception& e) {
    throw ManifestError("checkpoint '" + path + "': malformed manifest: " + e.what());
  } catch (const ConfigError& e) {
    throw ManifestError("checkpoint '" + path + "': bad config echo: " + e.what());
  }

  if (ck.optim.step > 0) {
    for (auto& r : model_params(ck.params)) {
      if (!r.trainable) continue;
      ck.optim.m.emplace_back(r.tensor->shape());
      ck.optim.v.emplace_back(r.tensor->shape());
    }
  }
  auto tensors = stored_tensors(ck.params, ck.optim);
  if (entries.size() != tensors.size()) {
    throw ManifestError("checkpoint '" + path + "': manifest lists " + std::to_string(entries.size()) +
                        " tensors, model expects " + std::to_string(tensors.size()));
  }

  // Validate the whole manifest before touching the payload.
  std::uint64_t expected_offset = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const json& e = entries[i];
    try {
      const auto name = e.at("name").get<std::string>();
      const auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::uint64_t>();
      const auto nbytes = e.at("nbytes").get<std::uint64_t>();
      if (name != tensors[i].first) {
        throw ManifestError("tensor " + std::to_string(i) + " is '" + name + "', expected '" + tensors[i].first + "'");
      }
      if (shape != tensors[i].second->shape()) {
        throw ManifestError("tensor '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                            shape_str(tensors[i].second->shape()));
      }
      if (nbytes != 4 * shape_numel(shape)) {
        throw ManifestError("tensor '" + name + "' byte count disagrees with its shape");
      }
      if (offset != expected_offset) throw ManifestError("tensor '" + name + "' offset overlaps or leaves a gap");
      expected_offset += nbytes;
    } catch (const json::exception& ex) {
      throw ManifestError("checkpoint '" + path + "': malformed tensor entry: " + ex.what());
    } catch (const ManifestError& ex) {
      throw ManifestError("checkpoint '" + path + "': " + ex.what());
    }
  }
  if (expected_offset != payload_bytes) {
    throw ManifestError("checkpoint '" + path + "': payload_bytes disagrees with tensor sizes");
  }
  const std::size_t available = bytes.size() - parsed.payload_start;
  if (available < payload_bytes) {
    throw TruncatedPayloadError("checkpoint '" + path + "': payload has " + std::to_string(available) + " of " +
                                std::to_string(payload_bytes) + " bytes");
  }
  if (available > payload_bytes) throw ManifestError("checkpoint '" + path + "': trailing bytes after payload");

  const auto* base = reinterpret_cast<const unsigned char*>(bytes.data()) + parsed.payload_start;
  std::size_t offset = 0;
  for (auto& [name, t] : tensors) {
    for (float& f : t->storage()) {
      f = get_f32_le(base + offset);
      offset += 4;
    }
  }
  return ck;
}

}  // namespace chela
