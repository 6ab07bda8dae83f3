#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dcil {

inline constexpr std::uint32_t kIdxMagicImages = 0x00000803;
inline constexpr std::uint32_t kIdxMagicLabels = 0x00000801;

struct IdxFile {
  std::uint32_t magic = 0;
  std::vector<std::size_t> dims;
  std::vector<std::uint8_t> bytes;
};

/// Reads an IDX file (big-endian header, unsigned byte payload). Throws
/// data_error naming the offending offset / byte counts.
IdxFile read_idx_file(const std::string& path);

void write_idx_images(const std::string& path, std::size_t count, std::size_t height, std::size_t width,
                      const std::vector<std::uint8_t>& pixels);
void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels);

struct CifarBatch {
  std::vector<std::uint8_t> labels;  // N
  std::vector<std::uint8_t> pixels;  // N * 3072, planar RGB
};

/// Reads a CIFAR-10 binary batch: 3073-byte records (label + 32x32x3 planar).
CifarBatch read_cifar_batch(const std::string& path);

void write_cifar_batch(const std::string& path, const CifarBatch& batch);

/// Writes a synthetic 10-class digit dataset in MNIST IDX format (28x28
/// grayscale glyphs with jitter and noise), for environments without the real
/// files. Deterministic in `seed`.
void make_synthetic_mnist(const std::string& dir, std::size_t n_train, std::size_t n_test, std::uint64_t seed,
                          double noise_stddev = 0.35);

}  // namespace dcil
