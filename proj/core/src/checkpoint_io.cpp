#include <cstring>
#include <fstream>

#include "dcil/checkpoint.hpp"
#include "dcil/errors.hpp"

namespace dcil {
namespace ckpt {

namespace {

constexpr char kMagic[8] = {'D', 'C', 'I', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kFlagPnetOnly = 1u;

template <class T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw data_error(path + ": truncated checkpoint");
  return v;
}

}  // namespace

void write_file(const std::string& path, const File& file) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error(path + ": cannot open for writing");
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, file.version);
  write_pod<std::uint32_t>(out, file.pnet_only ? kFlagPnetOnly : 0u);
  write_pod<std::uint64_t>(out, file.entries.size());
  for (const Entry& e : file.entries) {
    write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(e.key.size()));
    out.write(e.key.data(), static_cast<std::streamsize>(e.key.size()));
    write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(e.kind));
    write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(e.dims.size()));
    for (std::size_t d : e.dims) write_pod<std::uint64_t>(out, d);
    if (e.kind == kTensorF32) {
      out.write(reinterpret_cast<const char*>(e.f32.data()), static_cast<std::streamsize>(e.f32.size() * 4));
    } else if (e.kind == kTensorF64) {
      out.write(reinterpret_cast<const char*>(e.f64.data()), static_cast<std::streamsize>(e.f64.size() * 8));
    } else {
      out.write(reinterpret_cast<const char*>(e.bits.data()), static_cast<std::streamsize>(e.bits.size()));
    }
  }
  if (!out) throw data_error(path + ": write failed");
}

File read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error(path + ": cannot open checkpoint");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw data_error(path + ": not a checkpoint file (bad magic)");
  }
  File file;
  file.version = read_pod<std::uint32_t>(in, path);
  if (file.version != 1) {
    throw data_error(path + ": unsupported checkpoint version " + std::to_string(file.version));
  }
  const std::uint32_t flags = read_pod<std::uint32_t>(in, path);
  file.pnet_only = (flags & kFlagPnetOnly) != 0;
  const std::uint64_t count = read_pod<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    Entry e;
    const std::uint16_t keylen = read_pod<std::uint16_t>(in, path);
    e.key.resize(keylen);
    in.read(e.key.data(), keylen);
    if (!in) throw data_error(path + ": truncated checkpoint key");
    e.kind = read_pod<std::uint8_t>(in, path);
    if (e.kind != kTensorF32 && e.kind != kTensorF64 && e.kind != kMaskBits) {
      throw data_error(path + ": corrupt entry kind " + std::to_string(e.kind) + " for key " + e.key);
    }
    const std::uint8_t ndim = read_pod<std::uint8_t>(in, path);
    for (std::uint8_t d = 0; d < ndim; ++d) e.dims.push_back(static_cast<std::size_t>(read_pod<std::uint64_t>(in, path)));
    const std::size_t n = e.numel();
    if (e.kind == kTensorF32) {
      e.f32.resize(n);
      in.read(reinterpret_cast<char*>(e.f32.data()), static_cast<std::streamsize>(n * 4));
    } else if (e.kind == kTensorF64) {
      e.f64.resize(n);
      in.read(reinterpret_cast<char*>(e.f64.data()), static_cast<std::streamsize>(n * 8));
    } else {
      e.bits.resize((n + 7) / 8);
      in.read(reinterpret_cast<char*>(e.bits.data()), static_cast<std::streamsize>(e.bits.size()));
    }
    if (!in) throw data_error(path + ": truncated payload for key " + e.key);
    file.entries.push_back(std::move(e));
  }
  return file;
}

File export_pnet(const File& in) {
  File out;
  out.version = in.version;
  out.pnet_only = true;
  for (const Entry& e : in.entries) {
    if (e.key.find(".S.") != std::string::npos || e.key.rfind("head.S.", 0) == 0) continue;
    Entry copy = e;
    if (e.kind != kMaskBits && e.key.rfind("layer", 0) == 0) {
      if (const Entry* mask = in.find(e.key + ".mask")) {
        const std::vector<std::uint8_t> bits = unpack_bits(mask->bits, mask->numel());
        if (bits.size() == copy.numel()) {
          for (std::size_t i = 0; i < bits.size(); ++i) {
            if (!bits[i]) {
              if (copy.kind == kTensorF32) {
                copy.f32[i] = 0.0f;
              } else {
                copy.f64[i] = 0.0;
              }
            }
          }
        }
      }
    }
    out.entries.push_back(std::move(copy));
  }
  return out;
}

}  // namespace ckpt
}  // namespace dcil
