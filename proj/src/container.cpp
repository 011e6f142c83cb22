#include "radapt/container.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "radapt/digest.hpp"

namespace radapt {
namespace {

constexpr char kMagic[8] = {'R', 'A', 'D', 'A', 'P', 'T', '0', '1'};
constexpr int kFormatVersion = 1;

// Payload is always little-endian on disk; byte-swap on big-endian hosts.
bool host_is_little_endian() {
  const std::uint16_t probe = 1;
  unsigned char b;
  std::memcpy(&b, &probe, 1);
  return b == 1;
}

void maybe_swap(std::vector<double>& values) {
  if (host_is_little_endian()) return;
  for (double& v : values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    bits = __builtin_bswap64(bits);
    std::memcpy(&v, &bits, 8);
  }
}

}  // namespace

void write_container(const std::string& path, const Container& c) {
  nlohmann::json header;
  header["format_version"] = kFormatVersion;
  header["config"] = c.config;
  header["meta"] = c.meta;

  nlohmann::json manifest = nlohmann::json::object();
  std::size_t offset = 0;
  for (const auto& [name, t] : c.tensors) {
    manifest[name] = {{"dtype", "f64"}, {"shape", t.shape()}, {"offset", offset}};
    offset += t.size() * sizeof(double);
  }
  header["tensors"] = manifest;

  const std::string header_str = header.dump();
  if (header_str.size() > 0xFFFFFFFFULL) throw std::runtime_error("container: header too large");

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("container: cannot open " + path + " for writing");
  out.write(kMagic, 8);
  const auto hlen = static_cast<std::uint32_t>(header_str.size());
  unsigned char lenb[4] = {static_cast<unsigned char>(hlen & 0xFF),
                           static_cast<unsigned char>((hlen >> 8) & 0xFF),
                           static_cast<unsigned char>((hlen >> 16) & 0xFF),
                           static_cast<unsigned char>((hlen >> 24) & 0xFF)};
  out.write(reinterpret_cast<const char*>(lenb), 4);
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& [name, t] : c.tensors) {
    std::vector<double> buf = t.raw();
    maybe_swap(buf);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("container: write failed for " + path);
}

Container read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("container: cannot open " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw std::runtime_error("container: magic mismatch in " + path);
  }
  const auto* lb = reinterpret_cast<const unsigned char*>(bytes.data() + 8);
  const std::uint32_t hlen = static_cast<std::uint32_t>(lb[0]) |
                             (static_cast<std::uint32_t>(lb[1]) << 8) |
                             (static_cast<std::uint32_t>(lb[2]) << 16) |
                             (static_cast<std::uint32_t>(lb[3]) << 24);
  if (bytes.size() < 12 + static_cast<std::size_t>(hlen)) {
    throw std::runtime_error("container: truncated header in " + path);
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + hlen);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("container: bad header json: ") + e.what());
  }
  if (header.at("format_version").get<int>() != kFormatVersion) {
    throw std::runtime_error("container: unsupported format version");
  }

  Container c;
  c.config = header.value("config", nlohmann::json::object());
  c.meta = header.value("meta", nlohmann::json::object());

  const std::size_t payload_start = 12 + hlen;
  const std::size_t payload_len = bytes.size() - payload_start;
  for (const auto& [name, entry] : header.at("tensors").items()) {
    if (entry.at("dtype").get<std::string>() != "f64") {
      throw std::runtime_error("container: unsupported dtype for tensor " + name);
    }
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const std::size_t count = shape_product(shape);
    if (offset + count * sizeof(double) > payload_len) {
      // Distinguish a short file from a manifest that disagrees with itself.
      throw std::runtime_error("container: truncated payload for tensor " + name +
                               " in " + path);
    }
    std::vector<double> buf(count);
    std::memcpy(buf.data(), bytes.data() + payload_start + offset, count * sizeof(double));
    maybe_swap(buf);
    for (double v : buf) {
      if (!std::isfinite(v)) {
        throw std::runtime_error("container: non-finite value in tensor " + name);
      }
    }
    c.tensors.emplace(name, Tensor(shape, std::move(buf)));
  }
  return c;
}

std::string file_digest_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("digest: cannot open " + path);
  Digest d;
  char buf[1 << 14];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    d.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return d.hex();
}

}  // namespace radapt
