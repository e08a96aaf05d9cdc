// SPDX-License-Identifier: Apache-2.0
#include "depthrnn/io/checkpoint.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "depthrnn/errors.hpp"
#include "json.hpp"

namespace depthrnn::io {
namespace {

using nlohmann::json;

constexpr const char* kFormat = "depthrnn-params";
constexpr int kVersion = 1;

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(std::string_view in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[i])) << (8 * i);
  }
  return v;
}

void put_f64_le(std::string& out, double x) {
  put_u64_le(out, std::bit_cast<std::uint64_t>(x));
}

double get_f64_le(std::string_view in) { return std::bit_cast<double>(get_u64_le(in)); }

}  // namespace

const Tensor& Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw ConfigError("checkpoint has no tensor named '" + std::string(name) + "'");
}

std::string serialize(std::span<const Parameter* const> params,
                      const Metadata& metadata) {
  json header;
  header["format"] = kFormat;
  header["version"] = kVersion;
  header["metadata"] = json::object();
  for (const auto& [k, v] : metadata) header["metadata"][k] = v;
  header["tensors"] = json::array();
  std::uint64_t offset = 0;
  for (const Parameter* p : params) {
    const std::uint64_t nbytes = p->value.size() * sizeof(double);
    header["tensors"].push_back({{"name", p->name},
                                 {"shape", p->value.shape()},
                                 {"offset", offset},
                                 {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string head = header.dump();
  std::string out;
  out.reserve(8 + head.size() + offset);
  put_u64_le(out, head.size());
  out += head;
  for (const Parameter* p : params) {
    for (double x : p->value.values()) put_f64_le(out, x);
  }
  return out;
}

Checkpoint deserialize(std::string_view bytes) {
  if (bytes.size() < 8) throw ConfigError("checkpoint truncated: missing header length");
  const std::uint64_t head_len = get_u64_le(bytes);
  if (bytes.size() - 8 < head_len) throw ConfigError("checkpoint truncated: header");
  json header;
  try {
    header = json::parse(bytes.substr(8, head_len));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  if (header.value("format", "") != kFormat || header.value("version", 0) != kVersion) {
    throw ConfigError("unrecognized checkpoint format");
  }
  const std::string_view payload = bytes.substr(8 + head_len);
  Checkpoint ckpt;
  for (const auto& [k, v] : header.at("metadata").items()) {
    ckpt.metadata[k] = v.get<std::string>();
  }
  for (const auto& entry : header.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
    if (nbytes != shape_numel(shape) * sizeof(double) || offset + nbytes > payload.size()) {
      throw ConfigError("checkpoint tensor '" + entry.at("name").get<std::string>() +
                        "' has inconsistent extent");
    }
    std::vector<double> data(shape_numel(shape));
    for (std::size_t i = 0; i < data.size(); ++i) {
      data[i] = get_f64_le(payload.substr(offset + 8 * i, 8));
    }
    ckpt.tensors.push_back({entry.at("name").get<std::string>(),
                            Tensor(std::move(shape), std::move(data))});
  }
  return ckpt;
}

void save(const std::filesystem::path& path, std::span<const Parameter* const> params,
          const Metadata& metadata) {
  write_file(path, serialize(params, metadata));
}

Checkpoint load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

void assign(const Checkpoint& ckpt, std::span<Parameter* const> params) {
  for (Parameter* p : params) {
    const Tensor& t = ckpt.find(p->name);
    if (t.shape() != p->value.shape()) {
      throw ConfigError("checkpoint tensor '" + p->name + "' has shape " +
                        shape_string(t.shape()) + ", expected " +
                        shape_string(p->value.shape()));
    }
    p->value = t;
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("short write to '" + path.string() + "'");
}

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(),
                 nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

}  // namespace depthrnn::io
