#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "dcil/errors.hpp"
#include "dcil/ops.hpp"
#include "dcil/params.hpp"
#include "dcil/random.hpp"
#include "dcil/tensor.hpp"

namespace dcil {

/// The two forward paths sharing one trunk: P runs on masked weights with its
/// own batch-norm statistics and classifier head, S runs on the full weights
/// with a separate auxiliary head and batch-norm set.
enum class PathId { P = 0, S = 1 };

inline const char* path_name(PathId p) { return p == PathId::P ? "P" : "S"; }

enum class LayerKind { Conv, Linear, BatchNorm, ReLU, AvgPool, Flatten, Classifier };

struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  int channels = 0;  // conv output channels
  int kernel = 3;    // conv kernel / pool window (0 = global pool)
  int stride = 1;
  int pad = 0;
  int units = 0;  // linear output features
};

struct NetworkSpec {
  std::vector<LayerSpec> layers;
  std::vector<std::size_t> input_shape;  // C,H,W or {features}, without batch
  int num_classes = 10;
};

/// Parses a comma-separated layer chain, e.g.
///   "conv:12:3:2:1,bn,relu,avgpool:0,classifier"
/// Tokens: conv:<out>[:k[:stride[:pad]]], linear:<units>, bn, relu,
/// avgpool:<k> (0 = global), flatten, classifier.
std::vector<LayerSpec> parse_layer_chain(const std::string& chain);

/// Named architectures used by the CLI; returns the chain string.
std::string model_preset(const std::string& name);

namespace net {

template <class S>
struct ConvLayer {
  PrunableParam<S> weight;  // F x C x K x K
  Param<S> bias;            // F
  ops::Conv2dGeom geom;
};

template <class S>
struct LinearLayer {
  PrunableParam<S> weight;  // O x I
  Param<S> bias;
};

template <class S>
struct BatchNormLayer {
  std::array<Param<S>, 2> gamma, beta;            // indexed by PathId
  std::array<ops::RunningStats<S>, 2> stats;
  double momentum = 0.1;
  double epsilon = 1e-5;
};

struct ReluLayer {};
struct AvgPoolLayer {
  int kernel = 0;
};
struct FlattenLayer {};

template <class S>
struct ClassifierLayer {
  std::array<Param<S>, 2> weight, bias;  // per-path heads, never pruned
  std::size_t in_features = 0;
};

template <class S>
using Layer = std::variant<ConvLayer<S>, LinearLayer<S>, BatchNormLayer<S>, ReluLayer, AvgPoolLayer, FlattenLayer,
                           ClassifierLayer<S>>;

template <class S>
struct ClassifierCtx {
  ops::LinearCtx<S> lin;
  std::vector<std::size_t> in_shape;
  bool consumed = false;
};

template <class S>
using TraceEntry = std::variant<std::monostate, ops::LinearCtx<S>, ops::Conv2dCtx<S>, ops::BatchNormCtx<S>,
                                ops::ReluCtx<S>, ops::AvgPoolCtx<S>, ops::FlattenCtx<S>, ClassifierCtx<S>>;

}  // namespace net

template <class S>
struct ForwardTrace {
  PathId path = PathId::P;
  Mode mode = Mode::Train;
  std::vector<net::TraceEntry<S>> entries;
  bool consumed = false;
};

/// Per-parameter gradients from one backward pass, keyed by parameter id and
/// tagged with the path that produced them. Trunk gradients from the P path
/// are taken with respect to the masked view; from the S path with respect to
/// the full weights.
template <class S>
struct GradSet {
  PathId path = PathId::P;
  std::map<std::string, Tensor<S>> grads;

  const Tensor<S>& at(const std::string& id) const {
    auto it = grads.find(id);
    if (it == grads.end()) throw contract_error("GradSet: no gradient for parameter " + id);
    return it->second;
  }
  bool all_zero() const {
    for (const auto& [id, g] : grads) {
      for (std::size_t i = 0; i < g.numel(); ++i) {
        if (g[i] != S(0)) return false;
      }
    }
    return true;
  }
};

template <class S>
class DualPathNetwork {
public:
  static DualPathNetwork build(const NetworkSpec& spec, std::uint64_t seed) {
    if (spec.layers.empty()) throw config_error("network spec is empty");
    if (spec.input_shape.size() != 1 && spec.input_shape.size() != 3) {
      throw config_error("network input shape must be C,H,W or a flat feature count");
    }
    if (spec.num_classes < 2) throw config_error("network needs at least 2 classes");
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      const bool is_cls = spec.layers[i].kind == LayerKind::Classifier;
      const bool is_last = i + 1 == spec.layers.size();
      if (is_cls != is_last) {
        throw config_error("network spec must end with exactly one classifier layer");
      }
    }

    DualPathNetwork net;
    net.spec_ = spec;
    Rng rng = Rng::derive(seed, "model-init");
    std::vector<std::size_t> cur = spec.input_shape;

    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
      const LayerSpec& ls = spec.layers[li];
      const std::string prefix = "layer" + std::to_string(li);
      switch (ls.kind) {
        case LayerKind::Conv: {
          if (cur.size() != 3) throw config_error(prefix + ": conv requires C,H,W input");
          if (ls.channels < 1 || ls.kernel < 1) throw config_error(prefix + ": conv needs channels and kernel >= 1");
          const std::size_t c = cur[0];
          ops::Conv2dGeom geom{ls.stride, ls.pad};
          const std::size_t k = static_cast<std::size_t>(ls.kernel);
          const std::size_t oh = ops::conv_out_dim(cur[1], k, geom, "height");
          const std::size_t ow = ops::conv_out_dim(cur[2], k, geom, "width");
          net::ConvLayer<S> layer;
          layer.geom = geom;
          layer.weight = PrunableParam<S>(
              prefix + ".weight", init_weights(rng, {static_cast<std::size_t>(ls.channels), c, k, k}, c * k * k, 2.0));
          layer.bias = Param<S>(prefix + ".bias", Tensor<S>::zeros({static_cast<std::size_t>(ls.channels)}));
          net.layers_.push_back(std::move(layer));
          cur = {static_cast<std::size_t>(ls.channels), oh, ow};
          break;
        }
        case LayerKind::Linear: {
          if (cur.size() != 1) throw config_error(prefix + ": linear requires flattened input (insert flatten)");
          if (ls.units < 1) throw config_error(prefix + ": linear needs units >= 1");
          net::LinearLayer<S> layer;
          layer.weight = PrunableParam<S>(
              prefix + ".weight", init_weights(rng, {static_cast<std::size_t>(ls.units), cur[0]}, cur[0], 2.0));
          layer.bias = Param<S>(prefix + ".bias", Tensor<S>::zeros({static_cast<std::size_t>(ls.units)}));
          net.layers_.push_back(std::move(layer));
          cur = {static_cast<std::size_t>(ls.units)};
          break;
        }
        case LayerKind::BatchNorm: {
          if (cur.size() != 1 && cur.size() != 3) throw config_error(prefix + ": batchnorm placement invalid");
          const std::size_t c = cur[0];
          net::BatchNormLayer<S> layer;
          for (int p = 0; p < 2; ++p) {
            const std::string path = p == 0 ? "P" : "S";
            layer.gamma[p] = Param<S>(prefix + ".bn." + path + ".gamma", Tensor<S>::ones({c}));
            layer.beta[p] = Param<S>(prefix + ".bn." + path + ".beta", Tensor<S>::zeros({c}));
            layer.stats[p] = ops::RunningStats<S>(c);
          }
          net.layers_.push_back(std::move(layer));
          break;
        }
        case LayerKind::ReLU:
          net.layers_.push_back(net::ReluLayer{});
          break;
        case LayerKind::AvgPool: {
          if (cur.size() != 3) throw config_error(prefix + ": avgpool requires C,H,W input");
          net.layers_.push_back(net::AvgPoolLayer{ls.kernel});
          if (ls.kernel == 0) {
            cur = {cur[0], 1, 1};
          } else {
            if (ls.kernel < 0 || static_cast<std::size_t>(ls.kernel) > cur[1] ||
                static_cast<std::size_t>(ls.kernel) > cur[2]) {
              throw config_error(prefix + ": avgpool window larger than input");
            }
            const std::size_t k = static_cast<std::size_t>(ls.kernel);
            cur = {cur[0], (cur[1] - k) / k + 1, (cur[2] - k) / k + 1};
          }
          break;
        }
        case LayerKind::Flatten: {
          std::size_t n = 1;
          for (std::size_t d : cur) n *= d;
          net.layers_.push_back(net::FlattenLayer{});
          cur = {n};
          break;
        }
        case LayerKind::Classifier: {
          std::size_t in_features = 1;
          for (std::size_t d : cur) in_features *= d;
          net::ClassifierLayer<S> layer;
          layer.in_features = in_features;
          const std::size_t classes = static_cast<std::size_t>(spec.num_classes);
          // P head initialized, S head cloned from it so both paths start identical.
          Tensor<S> w = init_weights(rng, {classes, in_features}, in_features, 1.0);
          layer.weight[0] = Param<S>("head.P.weight", w);
          layer.weight[1] = Param<S>("head.S.weight", w);
          layer.bias[0] = Param<S>("head.P.bias", Tensor<S>::zeros({classes}));
          layer.bias[1] = Param<S>("head.S.bias", Tensor<S>::zeros({classes}));
          net.layers_.push_back(std::move(layer));
          cur = {classes};
          break;
        }
      }
    }
    return net;
  }

  /// Forward one batch along the chosen path. Train mode updates only that
  /// path's batch-norm running statistics.
  Tensor<S> forward(PathId path, const Tensor<S>& batch, Mode mode, ForwardTrace<S>* trace = nullptr) {
    if (trace) {
      trace->path = path;
      trace->mode = mode;
      trace->consumed = false;
      trace->entries.clear();
      trace->entries.resize(layers_.size());
    }
    const int pi = static_cast<int>(path);
    Tensor<S> x = batch;
    for (std::size_t li = 0; li < layers_.size(); ++li) {
      net::Layer<S>& layer = layers_[li];
      if (auto* conv = std::get_if<net::ConvLayer<S>>(&layer)) {
        const Tensor<S> w = path == PathId::P ? conv->weight.masked_weight() : conv->weight.weight;
        if (trace) {
          ops::Conv2dCtx<S> ctx;
          x = ops::conv2d_eval(x, w, conv->bias.value, conv->geom, &ctx);
          trace->entries[li] = std::move(ctx);
        } else {
          x = ops::conv2d_eval(x, w, conv->bias.value, conv->geom);
        }
      } else if (auto* lin = std::get_if<net::LinearLayer<S>>(&layer)) {
        const Tensor<S> w = path == PathId::P ? lin->weight.masked_weight() : lin->weight.weight;
        if (trace) {
          auto [out, ctx] = ops::linear_forward(x, w, lin->bias.value);
          x = std::move(out);
          trace->entries[li] = std::move(ctx);
        } else {
          x = ops::linear_eval(x, w, lin->bias.value);
        }
      } else if (auto* bn = std::get_if<net::BatchNormLayer<S>>(&layer)) {
        if (trace) {
          ops::BatchNormCtx<S> ctx;
          x = ops::batchnorm_forward(x, bn->gamma[pi].value, bn->beta[pi].value, bn->stats[pi], mode, bn->momentum,
                                     bn->epsilon, &ctx);
          trace->entries[li] = std::move(ctx);
        } else {
          x = ops::batchnorm_forward(x, bn->gamma[pi].value, bn->beta[pi].value, bn->stats[pi], mode, bn->momentum,
                                     bn->epsilon);
        }
      } else if (std::get_if<net::ReluLayer>(&layer)) {
        if (trace) {
          auto [out, ctx] = ops::relu_forward(x);
          x = std::move(out);
          trace->entries[li] = std::move(ctx);
        } else {
          x = ops::relu_eval(x);
        }
      } else if (auto* pool = std::get_if<net::AvgPoolLayer>(&layer)) {
        if (trace) {
          ops::AvgPoolCtx<S> ctx;
          x = ops::avgpool2d_eval(x, pool->kernel, &ctx);
          trace->entries[li] = std::move(ctx);
        } else {
          x = ops::avgpool2d_eval(x, pool->kernel);
        }
      } else if (std::get_if<net::FlattenLayer>(&layer)) {
        if (trace) {
          auto [out, ctx] = ops::flatten_forward(x);
          x = std::move(out);
          trace->entries[li] = std::move(ctx);
        } else {
          x = ops::flatten_eval(x);
        }
      } else if (auto* cls = std::get_if<net::ClassifierLayer<S>>(&layer)) {
        net::ClassifierCtx<S> ctx;
        ctx.in_shape = x.shape();
        Tensor<S> flat = x.rank() == 2 ? x : ops::flatten_eval(x);
        if (trace) {
          auto [out, lctx] = ops::linear_forward(flat, cls->weight[pi].value, cls->bias[pi].value);
          x = std::move(out);
          ctx.lin = std::move(lctx);
          trace->entries[li] = std::move(ctx);
        } else {
          x = ops::linear_eval(flat, cls->weight[pi].value, cls->bias[pi].value);
        }
      }
    }
    return x;
  }

  /// Backward through the trace's path. Trunk gradients are reported under the
  /// trunk parameter ids; the P path's trunk gradient is the gradient with
  /// respect to the masked view (the chain rule stops there), the S path's is
  /// with respect to the full weights.
  GradSet<S> backward(ForwardTrace<S>& trace, const Tensor<S>& grad_logits) {
    if (trace.entries.size() != layers_.size()) {
      throw contract_error("backward: trace does not match this network (was forward called with a trace?)");
    }
    if (trace.consumed) throw contract_error("backward: trace already consumed");
    trace.consumed = true;

    GradSet<S> gs;
    gs.path = trace.path;
    const int pi = static_cast<int>(trace.path);
    Tensor<S> g = grad_logits;
    for (std::size_t ri = layers_.size(); ri-- > 0;) {
      net::Layer<S>& layer = layers_[ri];
      if (auto* conv = std::get_if<net::ConvLayer<S>>(&layer)) {
        auto& ctx = std::get<ops::Conv2dCtx<S>>(trace.entries[ri]);
        auto grads = ops::conv2d_backward(ctx, g);
        gs.grads.emplace(conv->weight.id, std::move(grads.weight));
        gs.grads.emplace(conv->bias.id, std::move(grads.bias));
        g = std::move(grads.input);
      } else if (auto* lin = std::get_if<net::LinearLayer<S>>(&layer)) {
        auto& ctx = std::get<ops::LinearCtx<S>>(trace.entries[ri]);
        auto grads = ops::linear_backward(ctx, g);
        gs.grads.emplace(lin->weight.id, std::move(grads.weight));
        gs.grads.emplace(lin->bias.id, std::move(grads.bias));
        g = std::move(grads.input);
      } else if (auto* bn = std::get_if<net::BatchNormLayer<S>>(&layer)) {
        auto& ctx = std::get<ops::BatchNormCtx<S>>(trace.entries[ri]);
        auto grads = ops::batchnorm_backward(ctx, g);
        gs.grads.emplace(bn->gamma[pi].id, std::move(grads.gamma));
        gs.grads.emplace(bn->beta[pi].id, std::move(grads.beta));
        g = std::move(grads.input);
      } else if (std::get_if<net::ReluLayer>(&layer)) {
        auto& ctx = std::get<ops::ReluCtx<S>>(trace.entries[ri]);
        g = ops::relu_backward(ctx, g);
      } else if (std::get_if<net::AvgPoolLayer>(&layer)) {
        auto& ctx = std::get<ops::AvgPoolCtx<S>>(trace.entries[ri]);
        g = ops::avgpool2d_backward(ctx, g);
      } else if (std::get_if<net::FlattenLayer>(&layer)) {
        auto& ctx = std::get<ops::FlattenCtx<S>>(trace.entries[ri]);
        g = ops::flatten_backward(ctx, g);
      } else if (auto* cls = std::get_if<net::ClassifierLayer<S>>(&layer)) {
        auto& ctx = std::get<net::ClassifierCtx<S>>(trace.entries[ri]);
        auto grads = ops::linear_backward(ctx.lin, g);
        gs.grads.emplace(cls->weight[pi].id, std::move(grads.weight));
        gs.grads.emplace(cls->bias[pi].id, std::move(grads.bias));
        g = ctx.in_shape.size() == 2 ? std::move(grads.input) : Tensor<S>(ctx.in_shape, grads.input.vec());
      }
    }
    return gs;
  }

  std::vector<PrunableParam<S>*> prunable_params() {
    std::vector<PrunableParam<S>*> out;
    for (auto& layer : layers_) {
      if (auto* conv = std::get_if<net::ConvLayer<S>>(&layer)) out.push_back(&conv->weight);
      if (auto* lin = std::get_if<net::LinearLayer<S>>(&layer)) out.push_back(&lin->weight);
    }
    return out;
  }

  std::vector<const PrunableParam<S>*> prunable_params() const {
    std::vector<const PrunableParam<S>*> out;
    for (const auto& layer : layers_) {
      if (const auto* conv = std::get_if<net::ConvLayer<S>>(&layer)) out.push_back(&conv->weight);
      if (const auto* lin = std::get_if<net::LinearLayer<S>>(&layer)) out.push_back(&lin->weight);
    }
    return out;
  }

  /// Total prunable weight count P and per-layer breakdown.
  std::pair<std::size_t, std::vector<std::pair<std::string, std::size_t>>> count_prunable() const {
    std::size_t total = 0;
    std::vector<std::pair<std::string, std::size_t>> per_layer;
    for (const auto* p : prunable_params()) {
      per_layer.emplace_back(p->id, p->weight.numel());
      total += p->weight.numel();
    }
    return {total, per_layer};
  }

  std::vector<net::Layer<S>>& layers() { return layers_; }
  const std::vector<net::Layer<S>>& layers() const { return layers_; }
  const NetworkSpec& spec() const { return spec_; }

private:
  static Tensor<S> init_weights(Rng& rng, std::vector<std::size_t> shape, std::size_t fan_in, double gain) {
    Tensor<S> w(std::move(shape));
    const double stddev = std::sqrt(gain / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = static_cast<S>(stddev * rng.normal());
    return w;
  }

  NetworkSpec spec_;
  std::vector<net::Layer<S>> layers_;
};

}  // namespace dcil
