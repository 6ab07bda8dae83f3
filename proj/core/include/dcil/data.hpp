#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "dcil/errors.hpp"
#include "dcil/idx_io.hpp"
#include "dcil/random.hpp"
#include "dcil/tensor.hpp"

namespace dcil {

enum class Split { Train, Test };

enum class AugmentPolicy { None, Cifar };

template <class S>
struct Dataset {
  Tensor<S> images;  // N x C x H x W, standardized
  std::vector<int> labels;
  Split split = Split::Train;
  int num_classes = 10;
  std::vector<double> mean, stddev;  // per channel, computed from the train split

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
};

namespace detail {

struct ChannelStats {
  std::vector<double> mean, stddev;
};

// Per-channel mean/std of [0,1]-scaled bytes, planar layout N x C x H x W.
inline ChannelStats compute_channel_stats(const std::vector<std::uint8_t>& bytes, std::size_t n, std::size_t channels,
                                          std::size_t hw) {
  ChannelStats st;
  std::vector<double> sum(channels, 0.0), sumsq(channels, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::uint8_t* plane = bytes.data() + (i * channels + c) * hw;
      for (std::size_t p = 0; p < hw; ++p) {
        const double v = plane[p] / 255.0;
        sum[c] += v;
        sumsq[c] += v * v;
      }
    }
  }
  const double count = static_cast<double>(n * hw);
  st.mean.resize(channels);
  st.stddev.resize(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    st.mean[c] = sum[c] / count;
    const double var = std::max(0.0, sumsq[c] / count - st.mean[c] * st.mean[c]);
    st.stddev[c] = std::max(std::sqrt(var), 1e-8);
  }
  return st;
}

inline bool read_stats_sidecar(const std::string& path, std::size_t channels, ChannelStats& st) {
  std::ifstream in(path);
  if (!in) return false;
  std::map<std::string, double> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    try {
      kv[line.substr(0, eq)] = std::stod(line.substr(eq + 1));
    } catch (const std::exception&) {
      return false;
    }
  }
  st.mean.resize(channels);
  st.stddev.resize(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    const auto m = kv.find("mean_" + std::to_string(c));
    const auto s = kv.find("std_" + std::to_string(c));
    if (m == kv.end() || s == kv.end() || s->second <= 0.0) return false;
    st.mean[c] = m->second;
    st.stddev[c] = s->second;
  }
  return true;
}

inline void write_stats_sidecar(const std::string& path, const ChannelStats& st) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) return;  // cache only; loading still works without it
  char buf[64];
  for (std::size_t c = 0; c < st.mean.size(); ++c) {
    std::snprintf(buf, sizeof(buf), "mean_%zu=%.17g\n", c, st.mean[c]);
    out << buf;
    std::snprintf(buf, sizeof(buf), "std_%zu=%.17g\n", c, st.stddev[c]);
    out << buf;
  }
}

template <class S>
Tensor<S> standardize(const std::vector<std::uint8_t>& bytes, std::size_t n, std::size_t channels, std::size_t h,
                      std::size_t w, const ChannelStats& st) {
  Tensor<S> out({n, channels, h, w});
  const std::size_t hw = h * w;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::uint8_t* src = bytes.data() + (i * channels + c) * hw;
      S* dst = out.data() + (i * channels + c) * hw;
      const double mu = st.mean[c], inv = 1.0 / st.stddev[c];
      for (std::size_t p = 0; p < hw; ++p) dst[p] = static_cast<S>((src[p] / 255.0 - mu) * inv);
    }
  }
  return out;
}

}  // namespace detail

/// Loads one MNIST IDX split from `dir` (canonical file names). Pixels are
/// scaled to [0,1] and standardized with train-split statistics, which are
/// cached in a sidecar file on first load.
template <class S>
Dataset<S> load_mnist(const std::string& dir, Split split) {
  const std::string img_path = dir + (split == Split::Train ? "/train-images-idx3-ubyte" : "/t10k-images-idx3-ubyte");
  const std::string lbl_path = dir + (split == Split::Train ? "/train-labels-idx1-ubyte" : "/t10k-labels-idx1-ubyte");
  const IdxFile images = read_idx_file(img_path);
  if (images.magic != kIdxMagicImages) throw data_error(img_path + ": not an IDX image file");
  const IdxFile labels = read_idx_file(lbl_path);
  if (labels.magic != kIdxMagicLabels) throw data_error(lbl_path + ": not an IDX label file");
  const std::size_t n = images.dims[0], h = images.dims[1], w = images.dims[2];
  if (labels.dims[0] != n) {
    throw data_error(dir + ": image count " + std::to_string(n) + " != label count " +
                     std::to_string(labels.dims[0]));
  }

  const std::string sidecar = dir + "/dcil_stats_mnist.txt";
  detail::ChannelStats st;
  if (!detail::read_stats_sidecar(sidecar, 1, st)) {
    if (split == Split::Train) {
      st = detail::compute_channel_stats(images.bytes, n, 1, h * w);
    } else {
      const IdxFile train = read_idx_file(dir + "/train-images-idx3-ubyte");
      st = detail::compute_channel_stats(train.bytes, train.dims[0], 1, train.dims[1] * train.dims[2]);
    }
    detail::write_stats_sidecar(sidecar, st);
  }

  Dataset<S> ds;
  ds.split = split;
  ds.mean = st.mean;
  ds.stddev = st.stddev;
  ds.images = detail::standardize<S>(images.bytes, n, 1, h, w, st);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels.bytes[i];
    if (y > 9) throw data_error(lbl_path + ": label " + std::to_string(y) + " out of range at record " + std::to_string(i));
    ds.labels[i] = y;
  }
  return ds;
}

/// Loads CIFAR-10 binary batches: data_batch_1..5.bin for train, test_batch.bin
/// for test. Standardization as for MNIST, per RGB channel.
template <class S>
Dataset<S> load_cifar10(const std::string& dir, Split split) {
  std::vector<std::uint8_t> pixels;
  std::vector<std::uint8_t> labels;
  auto append = [&](const std::string& path) {
    CifarBatch b = read_cifar_batch(path);
    labels.insert(labels.end(), b.labels.begin(), b.labels.end());
    pixels.insert(pixels.end(), b.pixels.begin(), b.pixels.end());
  };
  if (split == Split::Train) {
    for (int i = 1; i <= 5; ++i) append(dir + "/data_batch_" + std::to_string(i) + ".bin");
  } else {
    append(dir + "/test_batch.bin");
  }
  const std::size_t n = labels.size();

  const std::string sidecar = dir + "/dcil_stats_cifar10.txt";
  detail::ChannelStats st;
  if (!detail::read_stats_sidecar(sidecar, 3, st)) {
    if (split == Split::Train) {
      st = detail::compute_channel_stats(pixels, n, 3, 1024);
    } else {
      std::vector<std::uint8_t> train_pixels;
      std::size_t train_n = 0;
      for (int i = 1; i <= 5; ++i) {
        CifarBatch b = read_cifar_batch(dir + "/data_batch_" + std::to_string(i) + ".bin");
        train_pixels.insert(train_pixels.end(), b.pixels.begin(), b.pixels.end());
        train_n += b.labels.size();
      }
      st = detail::compute_channel_stats(train_pixels, train_n, 3, 1024);
    }
    detail::write_stats_sidecar(sidecar, st);
  }

  Dataset<S> ds;
  ds.split = split;
  ds.mean = st.mean;
  ds.stddev = st.stddev;
  ds.images = detail::standardize<S>(pixels, n, 3, 32, 32, st);
  ds.labels.assign(labels.begin(), labels.end());
  return ds;
}

/// Deterministic class-stratified subsample of size k (per-class quotas differ
/// by at most one). Selected indices keep their original order.
template <class S>
Dataset<S> subset(const Dataset<S>& ds, std::size_t k, std::uint64_t seed) {
  if (k > ds.size()) throw data_error("subset: k exceeds dataset size");
  const std::size_t classes = static_cast<std::size_t>(ds.num_classes);
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

  std::vector<std::size_t> chosen;
  chosen.reserve(k);
  const std::size_t base = k / classes;
  const std::size_t rem = k % classes;
  for (std::size_t c = 0; c < classes; ++c) {
    const std::size_t quota = base + (c < rem ? 1 : 0);
    if (quota > by_class[c].size()) {
      throw data_error("subset: class " + std::to_string(c) + " has only " + std::to_string(by_class[c].size()) +
                       " samples, need " + std::to_string(quota));
    }
    Rng rng = Rng::derive(seed, "subset", c);
    rng.shuffle(by_class[c]);
    chosen.insert(chosen.end(), by_class[c].begin(), by_class[c].begin() + static_cast<std::ptrdiff_t>(quota));
  }
  std::sort(chosen.begin(), chosen.end());

  Dataset<S> out;
  out.split = ds.split;
  out.num_classes = ds.num_classes;
  out.mean = ds.mean;
  out.stddev = ds.stddev;
  const std::size_t chw = ds.images.numel() / ds.size();
  out.images = Tensor<S>({chosen.size(), ds.images.dim(1), ds.images.dim(2), ds.images.dim(3)});
  out.labels.resize(chosen.size());
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    std::copy(ds.images.data() + chosen[i] * chw, ds.images.data() + (chosen[i] + 1) * chw,
              out.images.data() + i * chw);
    out.labels[i] = ds.labels[chosen[i]];
  }
  return out;
}

/// Seeded epoch iterator: each epoch visits every index exactly once, the
/// permutation is a pure function of (seed, epoch).
class BatchIterator {
public:
  BatchIterator(std::size_t n, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch, bool shuffle = true)
      : batch_size_(batch_size) {
    if (batch_size == 0) throw config_error("batch size must be >= 1");
    order_.resize(n);
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    if (shuffle) {
      Rng rng = Rng::derive(seed, "batch-order", epoch);
      rng.shuffle(order_);
    }
  }

  bool next(std::vector<std::size_t>& indices) {
    indices.clear();
    if (cursor_ >= order_.size()) return false;
    const std::size_t end = std::min(cursor_ + batch_size_, order_.size());
    indices.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                   order_.begin() + static_cast<std::ptrdiff_t>(end));
    cursor_ = end;
    return true;
  }

  std::size_t batches() const { return (order_.size() + batch_size_ - 1) / batch_size_; }
  const std::vector<std::size_t>& order() const { return order_; }

private:
  std::vector<std::size_t> order_;
  std::size_t batch_size_ = 0;
  std::size_t cursor_ = 0;
};

template <class S>
std::pair<Tensor<S>, std::vector<int>> gather_batch(const Dataset<S>& ds, const std::vector<std::size_t>& indices) {
  const std::size_t chw = ds.images.numel() / ds.size();
  Tensor<S> images({indices.size(), ds.images.dim(1), ds.images.dim(2), ds.images.dim(3)});
  std::vector<int> labels(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy(ds.images.data() + indices[i] * chw, ds.images.data() + (indices[i] + 1) * chw,
              images.data() + i * chw);
    labels[i] = ds.labels[indices[i]];
  }
  return {std::move(images), std::move(labels)};
}

/// Mirrors image `idx` of the batch in place (width axis).
template <class S>
void flip_horizontal(Tensor<S>& images, std::size_t idx) {
  const std::size_t c = images.dim(1), h = images.dim(2), w = images.dim(3);
  S* base = images.data() + idx * c * h * w;
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t y = 0; y < h; ++y) {
      S* row = base + (ci * h + y) * w;
      std::reverse(row, row + w);
    }
  }
}

/// Reflect-pads by `pad` and crops back to the original size at (dy, dx).
template <class S>
void shift_crop_reflect(Tensor<S>& images, std::size_t idx, int pad, int dy, int dx) {
  const std::size_t c = images.dim(1), h = images.dim(2), w = images.dim(3);
  S* base = images.data() + idx * c * h * w;
  std::vector<S> out(c * h * w);
  auto reflect = [](long long i, long long n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
    return static_cast<std::size_t>(i);
  };
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t sy = reflect(static_cast<long long>(y) + dy - pad, static_cast<long long>(h));
        const std::size_t sx = reflect(static_cast<long long>(x) + dx - pad, static_cast<long long>(w));
        out[(ci * h + y) * w + x] = base[(ci * h + sy) * w + sx];
      }
    }
  }
  std::copy(out.begin(), out.end(), base);
}

/// CIFAR recipe: reflect-pad 4, random crop back to 32x32, random horizontal
/// flip. Offsets and flips come from the caller's seeded stream.
template <class S>
void augment_batch(Tensor<S>& images, AugmentPolicy policy, Rng& rng) {
  if (policy == AugmentPolicy::None) return;
  const int pad = 4;
  for (std::size_t i = 0; i < images.dim(0); ++i) {
    const int dy = static_cast<int>(rng.below(2 * pad + 1));
    const int dx = static_cast<int>(rng.below(2 * pad + 1));
    shift_crop_reflect(images, i, pad, dy, dx);
    if (rng.coin()) flip_horizontal(images, i);
  }
}

}  // namespace dcil
