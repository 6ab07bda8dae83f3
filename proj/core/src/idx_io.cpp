#include "dcil/idx_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "dcil/errors.hpp"
#include "dcil/random.hpp"

namespace dcil {

namespace {

std::uint32_t read_be32(std::ifstream& in, const std::string& path, std::size_t offset) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) {
    throw data_error(path + ": truncated header, expected 4 bytes at offset " + std::to_string(offset));
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::size_t file_size(const std::string& path) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw data_error(path + ": " + ec.message());
  return static_cast<std::size_t>(size);
}

}  // namespace

IdxFile read_idx_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error(path + ": cannot open file");
  IdxFile f;
  f.magic = read_be32(in, path, 0);
  std::size_t ndim;
  if (f.magic == kIdxMagicImages) {
    ndim = 3;
  } else if (f.magic == kIdxMagicLabels) {
    ndim = 1;
  } else {
    char hex[16];
    std::snprintf(hex, sizeof(hex), "0x%08x", f.magic);
    throw data_error(path + ": bad IDX magic " + hex + " at offset 0 (expected 0x00000803 or 0x00000801)");
  }
  std::size_t total = 1;
  for (std::size_t d = 0; d < ndim; ++d) {
    const std::uint32_t extent = read_be32(in, path, 4 + 4 * d);
    f.dims.push_back(extent);
    total *= extent;
  }
  const std::size_t header = 4 + 4 * ndim;
  const std::size_t actual = file_size(path);
  if (actual != header + total) {
    throw data_error(path + ": expected " + std::to_string(header + total) + " bytes (" + std::to_string(total) +
                     " payload after " + std::to_string(header) + "-byte header), file has " + std::to_string(actual));
  }
  f.bytes.resize(total);
  in.read(reinterpret_cast<char*>(f.bytes.data()), static_cast<std::streamsize>(total));
  if (!in) throw data_error(path + ": read failed at offset " + std::to_string(header));
  return f;
}

void write_idx_images(const std::string& path, std::size_t count, std::size_t height, std::size_t width,
                      const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != count * height * width) throw data_error(path + ": pixel count does not match dimensions");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error(path + ": cannot open for writing");
  write_be32(out, kIdxMagicImages);
  write_be32(out, static_cast<std::uint32_t>(count));
  write_be32(out, static_cast<std::uint32_t>(height));
  write_be32(out, static_cast<std::uint32_t>(width));
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw data_error(path + ": write failed");
}

void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error(path + ": cannot open for writing");
  write_be32(out, kIdxMagicLabels);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
  if (!out) throw data_error(path + ": write failed");
}

CifarBatch read_cifar_batch(const std::string& path) {
  constexpr std::size_t kRecord = 3073;
  const std::size_t actual = file_size(path);
  if (actual == 0 || actual % kRecord != 0) {
    throw data_error(path + ": size " + std::to_string(actual) + " is not a whole number of " +
                     std::to_string(kRecord) + "-byte records");
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error(path + ": cannot open file");
  const std::size_t n = actual / kRecord;
  CifarBatch batch;
  batch.labels.resize(n);
  batch.pixels.resize(n * 3072);
  std::vector<std::uint8_t> record(kRecord);
  for (std::size_t i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(record.data()), kRecord);
    if (!in) throw data_error(path + ": read failed at record " + std::to_string(i));
    if (record[0] > 9) {
      throw data_error(path + ": label byte " + std::to_string(record[0]) + " out of range at record " +
                       std::to_string(i));
    }
    batch.labels[i] = record[0];
    std::copy(record.begin() + 1, record.end(), batch.pixels.begin() + i * 3072);
  }
  return batch;
}

void write_cifar_batch(const std::string& path, const CifarBatch& batch) {
  if (batch.pixels.size() != batch.labels.size() * 3072) throw data_error(path + ": pixel/label count mismatch");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error(path + ": cannot open for writing");
  for (std::size_t i = 0; i < batch.labels.size(); ++i) {
    out.put(static_cast<char>(batch.labels[i]));
    out.write(reinterpret_cast<const char*>(batch.pixels.data() + i * 3072), 3072);
  }
  if (!out) throw data_error(path + ": write failed");
}

namespace {

// 5x7 glyph bitmaps for digits 0-9, bit 4 = leftmost column.
constexpr std::uint8_t kDigitFont[10][7] = {
    {0x0E, 0x11, 0x19, 0x15, 0x13, 0x11, 0x0E},  // 0
    {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},  // 1
    {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},  // 2
    {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},  // 3
    {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},  // 4
    {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},  // 5
    {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},  // 6
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},  // 7
    {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},  // 8
    {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},  // 9
};

void render_digit(int digit, int offset_y, int offset_x, double intensity, double noise_stddev, Rng& rng,
                  std::uint8_t* out28x28) {
  double img[28 * 28] = {};
  // Affine-sampled glyph: the 5x7 bitmap is scaled to a 15x21 box, rotated,
  // scaled and shifted; cells drop out at random so strokes go missing.
  const double angle = rng.uniform(-0.45, 0.45);  // about 25 degrees either way
  const double scale = rng.uniform(0.85, 1.25);
  std::uint64_t dropped = 0;
  for (int cell = 0; cell < 35; ++cell) {
    if (rng.below(100) < 12) dropped |= 1ULL << cell;
  }
  const double cy = offset_y + 10.5, cx = offset_x + 7.5;
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (int y = 0; y < 28; ++y) {
    for (int x = 0; x < 28; ++x) {
      const double dy = (y - cy) / scale, dx = (x - cx) / scale;
      const double gy = ca * dy - sa * dx + 10.5;
      const double gx = sa * dy + ca * dx + 7.5;
      if (gy < 0 || gy >= 21.0 || gx < 0 || gx >= 15.0) continue;
      const int cell_y = static_cast<int>(gy / 3.0);
      const int cell_x = static_cast<int>(gx / 3.0);
      if (dropped & (1ULL << (cell_y * 5 + cell_x))) continue;
      if ((kDigitFont[digit][cell_y] >> (4 - cell_x)) & 1) img[y * 28 + x] = intensity;
    }
  }
  // Distractor bars: stroke-like clutter that is uninformative about the class.
  const int bars = 2 + static_cast<int>(rng.below(2));
  for (int b = 0; b < bars; ++b) {
    const bool vertical = rng.coin();
    const int len = 5 + static_cast<int>(rng.below(8));
    const int thick = 1 + static_cast<int>(rng.below(2));
    const int y0 = static_cast<int>(rng.below(28));
    const int x0 = static_cast<int>(rng.below(28));
    const double bar = rng.uniform(0.25, 0.6);
    for (int t = 0; t < thick; ++t) {
      for (int l = 0; l < len; ++l) {
        const int y = vertical ? y0 + l : y0 + t;
        const int x = vertical ? x0 + t : x0 + l;
        if (y >= 0 && y < 28 && x >= 0 && x < 28) img[y * 28 + x] = std::max(img[y * 28 + x], bar);
      }
    }
  }
  for (int i = 0; i < 28 * 28; ++i) {
    double v = img[i] + noise_stddev * rng.normal();
    if (rng.below(50) == 0) v = rng.uniform(0.4, 1.0);  // 2% salt pixels
    v = std::min(1.0, std::max(0.0, v));
    out28x28[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
}

void make_split(const std::string& images_path, const std::string& labels_path, std::size_t n, Rng& rng,
                double noise_stddev) {
  std::vector<std::uint8_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::uint8_t>(i % 10);
  rng.shuffle(labels);
  std::vector<std::uint8_t> pixels(n * 28 * 28);
  for (std::size_t i = 0; i < n; ++i) {
    const int dy = static_cast<int>(rng.below(9)) - 4;
    const int dx = static_cast<int>(rng.below(9)) - 4;
    const double intensity = rng.uniform(0.4, 0.95);
    render_digit(labels[i], 4 + dy, 7 + dx, intensity, noise_stddev, rng, pixels.data() + i * 28 * 28);
  }
  write_idx_images(images_path, n, 28, 28, pixels);
  write_idx_labels(labels_path, labels);
}

}  // namespace

void make_synthetic_mnist(const std::string& dir, std::size_t n_train, std::size_t n_test, std::uint64_t seed,
                          double noise_stddev) {
  std::filesystem::create_directories(dir);
  Rng train_rng = Rng::derive(seed, "synth-train");
  Rng test_rng = Rng::derive(seed, "synth-test");
  make_split(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte", n_train, train_rng, noise_stddev);
  make_split(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte", n_test, test_rng, noise_stddev);
}

}  // namespace dcil
