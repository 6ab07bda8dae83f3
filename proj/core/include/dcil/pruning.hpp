#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "dcil/errors.hpp"
#include "dcil/params.hpp"

namespace dcil {

enum class Granularity { Weight, Filter };

enum class PruneCriterion { L2Magnitude };
enum class PruneScope { Global };

/// Mask refresh cadence. `enabled = false` freezes the current masks (the
/// schedule still ramps but is never re-applied).
struct MaskUpdatePolicy {
  int frequency = 16;  // F, in iterations
  PruneCriterion criterion = PruneCriterion::L2Magnitude;
  PruneScope scope = PruneScope::Global;
  bool enabled = true;

  void validate() const {
    if (frequency < 1) throw config_error("mask update frequency must be >= 1");
  }
};

/// Number of units to zero at sparsity s over `units` prunable units.
/// Floor rounding: the realized sparsity never overshoots the schedule.
inline std::size_t target_count(double sparsity, std::size_t units) {
  if (sparsity < 0.0 || sparsity >= 1.0) throw config_error("sparsity must lie in [0, 1)");
  return static_cast<std::size_t>(std::floor(sparsity * static_cast<double>(units)));
}

inline bool should_refresh(long long global_iter, const MaskUpdatePolicy& policy) {
  if (!policy.enabled) return false;
  return global_iter > 0 && global_iter % policy.frequency == 0;
}

namespace detail {

struct RankedUnit {
  double score;
  std::uint32_t param;
  std::uint32_t index;

  bool operator<(const RankedUnit& o) const {
    if (score != o.score) return score < o.score;
    if (param != o.param) return param < o.param;
    return index < o.index;
  }
};

}  // namespace detail

/// Recomputes all masks from scratch under the global L2-magnitude criterion.
/// Weight granularity ranks every prunable weight by |w|; filter granularity
/// ranks whole output-filter slabs of conv tensors by size-normalized L2 (RMS)
/// so layers with different kernel sizes compete fairly. Because masks are
/// rebuilt from current magnitudes, previously pruned units revive whenever
/// they outgrow the threshold.
template <class S>
void compute_masks(const std::vector<PrunableParam<S>*>& params, double sparsity, Granularity granularity) {
  if (sparsity < 0.0 || sparsity >= 1.0) throw config_error("sparsity must lie in [0, 1)");

  if (granularity == Granularity::Weight) {
    std::vector<detail::RankedUnit> units;
    std::size_t total = 0;
    for (const auto* p : params) total += p->weight.numel();
    units.reserve(total);
    for (std::uint32_t pi = 0; pi < params.size(); ++pi) {
      const Tensor<S>& w = params[pi]->weight;
      for (std::uint32_t i = 0; i < w.numel(); ++i) {
        units.push_back({std::abs(static_cast<double>(w[i])), pi, i});
      }
    }
    const std::size_t k = target_count(sparsity, total);
    std::sort(units.begin(), units.end());
    for (auto* p : params) p->mask = Tensor<S>::ones(p->weight.shape());
    for (std::size_t u = 0; u < k; ++u) params[units[u].param]->mask[units[u].index] = S(0);
    return;
  }

  // Filter granularity: only rank-4 (conv) weights carry filter slabs; other
  // prunable tensors stay dense.
  std::vector<detail::RankedUnit> filters;
  std::size_t total_filters = 0;
  for (std::uint32_t pi = 0; pi < params.size(); ++pi) {
    const Tensor<S>& w = params[pi]->weight;
    if (w.rank() != 4) continue;
    const std::size_t f = w.dim(0);
    const std::size_t slab = w.numel() / f;
    total_filters += f;
    for (std::uint32_t fi = 0; fi < f; ++fi) {
      double sq = 0.0;
      const S* base = w.data() + fi * slab;
      for (std::size_t i = 0; i < slab; ++i) sq += static_cast<double>(base[i]) * static_cast<double>(base[i]);
      filters.push_back({std::sqrt(sq / static_cast<double>(slab)), pi, fi});
    }
  }
  const std::size_t k = target_count(sparsity, total_filters);
  std::sort(filters.begin(), filters.end());
  for (auto* p : params) p->mask = Tensor<S>::ones(p->weight.shape());

  std::vector<std::vector<std::uint32_t>> pruned_by_param(params.size());
  for (std::size_t u = 0; u < k; ++u) pruned_by_param[filters[u].param].push_back(filters[u].index);

  for (std::uint32_t pi = 0; pi < params.size(); ++pi) {
    PrunableParam<S>* p = params[pi];
    if (p->weight.rank() != 4) continue;
    const std::size_t f = p->weight.dim(0);
    const std::size_t slab = p->weight.numel() / f;
    auto& pruned = pruned_by_param[pi];
    if (pruned.size() == f && f > 0) {
      // Keep-one guard: a fully pruned layer would sever the network. Retain
      // the highest-scoring filter of this layer (the one ranked last).
      std::uint32_t keep = 0;
      for (const auto& unit : filters) {
        if (unit.param == pi) keep = unit.index;  // last visit = max score under the tie-break order
      }
      pruned.erase(std::remove(pruned.begin(), pruned.end(), keep), pruned.end());
    }
    for (std::uint32_t fi : pruned) {
      S* base = p->mask.data() + fi * slab;
      std::fill(base, base + slab, S(0));
    }
  }
}

/// Total prunable units at the given granularity (weights, or conv filters).
template <class S>
std::size_t count_units(const std::vector<PrunableParam<S>*>& params, Granularity granularity) {
  std::size_t total = 0;
  for (const auto* p : params) {
    if (granularity == Granularity::Weight) {
      total += p->weight.numel();
    } else if (p->weight.rank() == 4) {
      total += p->weight.dim(0);
    }
  }
  return total;
}

/// Fraction of masked-out entries across all prunable weights.
template <class S>
double realized_sparsity(const std::vector<PrunableParam<S>*>& params) {
  std::size_t total = 0, zeros = 0;
  for (const auto* p : params) {
    total += p->mask.numel();
    zeros += p->mask_zeros();
  }
  return total == 0 ? 0.0 : static_cast<double>(zeros) / static_cast<double>(total);
}

}  // namespace dcil
