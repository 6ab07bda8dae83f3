#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dcil/errors.hpp"
#include "dcil/model.hpp"

namespace dcil {

struct CkptMeta {
  int epoch = -1;
  long long global_iter = 0;
};

namespace ckpt {

inline constexpr int kTensorF32 = 0;
inline constexpr int kTensorF64 = 1;
inline constexpr int kMaskBits = 2;

struct Entry {
  std::string key;
  int kind = kTensorF32;
  std::vector<std::size_t> dims;
  std::vector<float> f32;
  std::vector<double> f64;
  std::vector<std::uint8_t> bits;  // LSB-first packed mask

  std::size_t numel() const {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    return dims.empty() ? 0 : n;
  }
};

struct File {
  std::uint32_t version = 1;
  bool pnet_only = false;
  std::vector<Entry> entries;

  const Entry* find(const std::string& key) const {
    for (const Entry& e : entries) {
      if (e.key == key) return &e;
    }
    return nullptr;
  }
};

void write_file(const std::string& path, const File& file);
File read_file(const std::string& path);

/// Drops the S-path head and batch-norm entries, materializes masked trunk
/// weights (W <- M o W) and marks the file as a P-net-only deployable. Mask
/// entries are kept so sparsity audits stay possible after export.
File export_pnet(const File& in);

inline std::vector<std::uint8_t> pack_bits(const std::vector<std::uint8_t>& values) {
  std::vector<std::uint8_t> packed((values.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  return packed;
}

inline std::vector<std::uint8_t> unpack_bits(const std::vector<std::uint8_t>& packed, std::size_t n) {
  std::vector<std::uint8_t> values(n, 0);
  for (std::size_t i = 0; i < n; ++i) values[i] = (packed[i / 8] >> (i % 8)) & 1u;
  return values;
}

}  // namespace ckpt

namespace detail {

template <class S>
ckpt::Entry tensor_entry(const std::string& key, const Tensor<S>& t) {
  ckpt::Entry e;
  e.key = key;
  e.dims = t.shape();
  if constexpr (sizeof(S) == 4) {
    e.kind = ckpt::kTensorF32;
    e.f32.assign(t.data(), t.data() + t.numel());
  } else {
    e.kind = ckpt::kTensorF64;
    e.f64.assign(t.data(), t.data() + t.numel());
  }
  return e;
}

template <class S>
ckpt::Entry mask_entry(const std::string& key, const Tensor<S>& mask) {
  ckpt::Entry e;
  e.key = key;
  e.kind = ckpt::kMaskBits;
  e.dims = mask.shape();
  std::vector<std::uint8_t> vals(mask.numel());
  for (std::size_t i = 0; i < mask.numel(); ++i) vals[i] = mask[i] != S(0) ? 1 : 0;
  e.bits = ckpt::pack_bits(vals);
  return e;
}

template <class S>
Tensor<S> entry_tensor(const ckpt::Entry& e, const std::string& path) {
  if (e.kind == ckpt::kMaskBits) {
    const std::vector<std::uint8_t> vals = ckpt::unpack_bits(e.bits, e.numel());
    Tensor<S> t(e.dims);
    for (std::size_t i = 0; i < vals.size(); ++i) t[i] = static_cast<S>(vals[i]);
    return t;
  }
  Tensor<S> t(e.dims);
  if (e.kind == ckpt::kTensorF32) {
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(e.f32[i]);
  } else {
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(e.f64[i]);
  }
  (void)path;
  return t;
}

}  // namespace detail

template <class S>
void save_checkpoint(const DualPathNetwork<S>& network, const std::string& path, const CkptMeta& meta) {
  ckpt::File file;
  for (const auto& layer : network.layers()) {
    if (const auto* conv = std::get_if<net::ConvLayer<S>>(&layer)) {
      file.entries.push_back(detail::tensor_entry(conv->weight.id, conv->weight.weight));
      file.entries.push_back(detail::mask_entry(conv->weight.id + ".mask", conv->weight.mask));
      file.entries.push_back(detail::tensor_entry(conv->bias.id, conv->bias.value));
    } else if (const auto* lin = std::get_if<net::LinearLayer<S>>(&layer)) {
      file.entries.push_back(detail::tensor_entry(lin->weight.id, lin->weight.weight));
      file.entries.push_back(detail::mask_entry(lin->weight.id + ".mask", lin->weight.mask));
      file.entries.push_back(detail::tensor_entry(lin->bias.id, lin->bias.value));
    } else if (const auto* bn = std::get_if<net::BatchNormLayer<S>>(&layer)) {
      for (int p = 0; p < 2; ++p) {
        file.entries.push_back(detail::tensor_entry(bn->gamma[p].id, bn->gamma[p].value));
        file.entries.push_back(detail::tensor_entry(bn->beta[p].id, bn->beta[p].value));
        file.entries.push_back(detail::tensor_entry(bn->gamma[p].id + ".running_mean", bn->stats[p].mean));
        file.entries.push_back(detail::tensor_entry(bn->gamma[p].id + ".running_var", bn->stats[p].var));
      }
    } else if (const auto* cls = std::get_if<net::ClassifierLayer<S>>(&layer)) {
      for (int p = 0; p < 2; ++p) {
        file.entries.push_back(detail::tensor_entry(cls->weight[p].id, cls->weight[p].value));
        file.entries.push_back(detail::tensor_entry(cls->bias[p].id, cls->bias[p].value));
      }
    }
  }
  ckpt::Entry meta_entry;
  meta_entry.key = "meta.state";
  meta_entry.kind = ckpt::kTensorF64;
  meta_entry.dims = {2};
  meta_entry.f64 = {static_cast<double>(meta.epoch), static_cast<double>(meta.global_iter)};
  file.entries.push_back(std::move(meta_entry));
  ckpt::write_file(path, file);
}

template <class S>
CkptMeta load_checkpoint(DualPathNetwork<S>& network, const std::string& path) {
  const ckpt::File file = ckpt::read_file(path);

  auto pull = [&](const std::string& key, Tensor<S>& dst, bool allow_pnet_fallback) {
    const ckpt::Entry* e = file.find(key);
    if (!e && allow_pnet_fallback && file.pnet_only) {
      // P-net-only exports drop the S path; clone the P entries for eval use.
      std::string alt = key;
      const auto pos = alt.find(".S.");
      if (pos != std::string::npos) alt.replace(pos, 3, ".P.");
      e = file.find(alt);
    }
    if (!e) throw data_error(path + ": missing checkpoint entry " + key);
    if (e->dims != dst.shape()) {
      throw data_error(path + ": entry " + key + " has shape " + shape_to_string(e->dims) + ", network expects " +
                       shape_to_string(dst.shape()));
    }
    dst = detail::entry_tensor<S>(*e, path);
  };

  for (auto& layer : network.layers()) {
    if (auto* conv = std::get_if<net::ConvLayer<S>>(&layer)) {
      pull(conv->weight.id, conv->weight.weight, false);
      pull(conv->weight.id + ".mask", conv->weight.mask, false);
      pull(conv->bias.id, conv->bias.value, false);
    } else if (auto* lin = std::get_if<net::LinearLayer<S>>(&layer)) {
      pull(lin->weight.id, lin->weight.weight, false);
      pull(lin->weight.id + ".mask", lin->weight.mask, false);
      pull(lin->bias.id, lin->bias.value, false);
    } else if (auto* bn = std::get_if<net::BatchNormLayer<S>>(&layer)) {
      for (int p = 0; p < 2; ++p) {
        pull(bn->gamma[p].id, bn->gamma[p].value, true);
        pull(bn->beta[p].id, bn->beta[p].value, true);
        pull(bn->gamma[p].id + ".running_mean", bn->stats[p].mean, true);
        pull(bn->gamma[p].id + ".running_var", bn->stats[p].var, true);
      }
    } else if (auto* cls = std::get_if<net::ClassifierLayer<S>>(&layer)) {
      for (int p = 0; p < 2; ++p) {
        pull(cls->weight[p].id, cls->weight[p].value, true);
        pull(cls->bias[p].id, cls->bias[p].value, true);
      }
    }
  }

  CkptMeta meta;
  if (const ckpt::Entry* e = file.find("meta.state"); e && e->f64.size() == 2) {
    meta.epoch = static_cast<int>(e->f64[0]);
    meta.global_iter = static_cast<long long>(e->f64[1]);
  }
  return meta;
}

}  // namespace dcil
