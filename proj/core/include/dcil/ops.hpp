#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "dcil/errors.hpp"
#include "dcil/tensor.hpp"

namespace dcil {

enum class Mode { Train, Eval };

namespace ops {

// ---------------------------------------------------------------------------
// Small row-major GEMM kernels. The i-k-j loop keeps the inner loop contiguous
// so it vectorizes without relaxing IEEE semantics.
// ---------------------------------------------------------------------------

// c[m x n] += a[m x k] * b[k x n]
template <class S>
void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const S* a, const S* b, S* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const S* arow = a + i * k;
    S* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const S av = arow[p];
      if (av == S(0)) continue;
      const S* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x n] += a[m x k] * b^T, with b stored as [n x k]
template <class S>
void gemm_abt_acc(std::size_t m, std::size_t n, std::size_t k, const S* a, const S* b, S* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const S* arow = a + i * k;
    S* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const S* brow = b + j * k;
      S s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        s0 += arow[p] * brow[p];
        s1 += arow[p + 1] * brow[p + 1];
        s2 += arow[p + 2] * brow[p + 2];
        s3 += arow[p + 3] * brow[p + 3];
      }
      for (; p < k; ++p) s0 += arow[p] * brow[p];
      crow[j] += ((s0 + s1) + (s2 + s3));
    }
  }
}

template <class S>
std::vector<S> transposed(const S* a, std::size_t rows, std::size_t cols) {
  std::vector<S> t(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = a[i * cols + j];
  return t;
}

inline void mark_consumed(bool& consumed, const char* op) {
  if (consumed) throw contract_error(std::string(op) + ": context already consumed by a previous backward call");
  consumed = true;
}

// ---------------------------------------------------------------------------
// linear: out[b,o] = sum_i input[b,i] * weight[o,i] + bias[o]
// ---------------------------------------------------------------------------

template <class S>
struct LinearCtx {
  Tensor<S> input;   // B x I
  Tensor<S> weight;  // O x I
  bool consumed = false;
};

template <class S>
struct LinearGrads {
  Tensor<S> input, weight, bias;
};

template <class S>
Tensor<S> linear_eval(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias) {
  require_rank(input, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  const std::size_t batch = input.dim(0), in_f = input.dim(1);
  const std::size_t out_f = weight.dim(0);
  if (weight.dim(1) != in_f) {
    throw shape_error("linear: weight " + shape_to_string(weight.shape()) + " does not accept input " +
                      shape_to_string(input.shape()));
  }
  require_shape(bias, {out_f}, "linear bias");
  Tensor<S> out({batch, out_f});
  const std::vector<S> wt = transposed(weight.data(), out_f, in_f);  // I x O
  gemm_acc(batch, out_f, in_f, input.data(), wt.data(), out.data());
  for (std::size_t b = 0; b < batch; ++b) {
    S* row = out.data() + b * out_f;
    for (std::size_t o = 0; o < out_f; ++o) row[o] += bias[o];
  }
  debug_check_finite(out, "linear_forward");
  return out;
}

template <class S>
std::pair<Tensor<S>, LinearCtx<S>> linear_forward(const Tensor<S>& input, const Tensor<S>& weight,
                                                  const Tensor<S>& bias) {
  Tensor<S> out = linear_eval(input, weight, bias);
  return {std::move(out), LinearCtx<S>{input, weight}};
}

template <class S>
LinearGrads<S> linear_backward(LinearCtx<S>& ctx, const Tensor<S>& grad_out) {
  mark_consumed(ctx.consumed, "linear_backward");
  const std::size_t batch = ctx.input.dim(0), in_f = ctx.input.dim(1), out_f = ctx.weight.dim(0);
  require_shape(grad_out, {batch, out_f}, "linear grad_out");
  LinearGrads<S> g{Tensor<S>({batch, in_f}), Tensor<S>({out_f, in_f}), Tensor<S>({out_f})};
  // grad_in = grad_out * W
  gemm_acc(batch, in_f, out_f, grad_out.data(), ctx.weight.data(), g.input.data());
  // grad_w[o,i] = sum_b grad_out[b,o] * input[b,i]
  const std::vector<S> gt = transposed(grad_out.data(), batch, out_f);  // O x B
  gemm_acc(out_f, in_f, batch, gt.data(), ctx.input.data(), g.weight.data());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < out_f; ++o) g.bias[o] += grad_out[b * out_f + o];
  debug_check_finite(g.input, "linear_backward");
  debug_check_finite(g.weight, "linear_backward");
  return g;
}

// ---------------------------------------------------------------------------
// conv2d: cross-correlation, square K x K kernels
// ---------------------------------------------------------------------------

struct Conv2dGeom {
  int stride = 1;
  int pad = 0;
};

inline std::size_t conv_out_dim(std::size_t in, std::size_t kernel, const Conv2dGeom& g, const char* what) {
  const long long numer = static_cast<long long>(in) + 2LL * g.pad - static_cast<long long>(kernel);
  if (g.stride < 1) throw config_error("conv2d: stride must be >= 1");
  if (g.pad < 0) throw config_error("conv2d: pad must be >= 0");
  const long long out = numer / g.stride + 1;
  if (numer < 0 || out < 1) {
    throw config_error(std::string("conv2d: nonpositive output ") + what + " for input " + std::to_string(in) +
                       ", kernel " + std::to_string(kernel) + ", stride " + std::to_string(g.stride) + ", pad " +
                       std::to_string(g.pad));
  }
  return static_cast<std::size_t>(out);
}

template <class S>
struct Conv2dCtx {
  Tensor<S> input;   // B x C x H x W
  Tensor<S> weight;  // F x C x K x K
  Conv2dGeom geom;
  std::vector<S> col;  // B * [CKK x OHW], transposed im2col patches
  std::size_t out_h = 0, out_w = 0;
  bool consumed = false;
};

template <class S>
struct Conv2dGrads {
  Tensor<S> input, weight, bias;
};

// Writes the [CKK x OHW] patch matrix for one image.
template <class S>
void im2col(const S* img, std::size_t channels, std::size_t height, std::size_t width, std::size_t kernel,
            const Conv2dGeom& g, std::size_t out_h, std::size_t out_w, S* col) {
  const std::size_t ohw = out_h * out_w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    const S* plane = img + c * height * width;
    for (std::size_t kh = 0; kh < kernel; ++kh) {
      for (std::size_t kw = 0; kw < kernel; ++kw, ++row) {
        S* dst = col + row * ohw;
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          const long long ih = static_cast<long long>(oh) * g.stride - g.pad + static_cast<long long>(kh);
          if (ih < 0 || ih >= static_cast<long long>(height)) {
            std::fill(dst + oh * out_w, dst + (oh + 1) * out_w, S(0));
            continue;
          }
          const S* src_row = plane + static_cast<std::size_t>(ih) * width;
          for (std::size_t ow = 0; ow < out_w; ++ow) {
            const long long iw = static_cast<long long>(ow) * g.stride - g.pad + static_cast<long long>(kw);
            dst[oh * out_w + ow] =
                (iw < 0 || iw >= static_cast<long long>(width)) ? S(0) : src_row[static_cast<std::size_t>(iw)];
          }
        }
      }
    }
  }
}

template <class S>
void col2im_add(const S* col, std::size_t channels, std::size_t height, std::size_t width, std::size_t kernel,
                const Conv2dGeom& g, std::size_t out_h, std::size_t out_w, S* img) {
  const std::size_t ohw = out_h * out_w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    S* plane = img + c * height * width;
    for (std::size_t kh = 0; kh < kernel; ++kh) {
      for (std::size_t kw = 0; kw < kernel; ++kw, ++row) {
        const S* src = col + row * ohw;
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          const long long ih = static_cast<long long>(oh) * g.stride - g.pad + static_cast<long long>(kh);
          if (ih < 0 || ih >= static_cast<long long>(height)) continue;
          S* dst_row = plane + static_cast<std::size_t>(ih) * width;
          for (std::size_t ow = 0; ow < out_w; ++ow) {
            const long long iw = static_cast<long long>(ow) * g.stride - g.pad + static_cast<long long>(kw);
            if (iw >= 0 && iw < static_cast<long long>(width)) dst_row[static_cast<std::size_t>(iw)] += src[oh * out_w + ow];
          }
        }
      }
    }
  }
}

template <class S>
Tensor<S> conv2d_eval(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias, const Conv2dGeom& geom,
                      Conv2dCtx<S>* ctx = nullptr) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  const std::size_t batch = input.dim(0), channels = input.dim(1), height = input.dim(2), width = input.dim(3);
  const std::size_t filters = weight.dim(0), kernel = weight.dim(2);
  if (weight.dim(1) != channels || weight.dim(3) != kernel) {
    throw shape_error("conv2d: weight " + shape_to_string(weight.shape()) + " does not accept input " +
                      shape_to_string(input.shape()));
  }
  require_shape(bias, {filters}, "conv2d bias");
  const std::size_t out_h = conv_out_dim(height, kernel, geom, "height");
  const std::size_t out_w = conv_out_dim(width, kernel, geom, "width");
  const std::size_t ohw = out_h * out_w;
  const std::size_t ckk = channels * kernel * kernel;

  Tensor<S> out({batch, filters, out_h, out_w});
  std::vector<S> scratch;
  std::vector<S>* col_store = nullptr;
  if (ctx) {
    ctx->col.assign(batch * ckk * ohw, S(0));
    col_store = &ctx->col;
  } else {
    scratch.assign(ckk * ohw, S(0));
  }
  for (std::size_t b = 0; b < batch; ++b) {
    S* col = ctx ? col_store->data() + b * ckk * ohw : scratch.data();
    im2col(input.data() + b * channels * height * width, channels, height, width, kernel, geom, out_h, out_w, col);
    S* out_b = out.data() + b * filters * ohw;
    gemm_acc(filters, ohw, ckk, weight.data(), col, out_b);
    for (std::size_t f = 0; f < filters; ++f) {
      const S bv = bias[f];
      S* dst = out_b + f * ohw;
      for (std::size_t i = 0; i < ohw; ++i) dst[i] += bv;
    }
  }
  if (ctx) {
    ctx->input = input;
    ctx->weight = weight;
    ctx->geom = geom;
    ctx->out_h = out_h;
    ctx->out_w = out_w;
  }
  debug_check_finite(out, "conv2d_forward");
  return out;
}

template <class S>
std::pair<Tensor<S>, Conv2dCtx<S>> conv2d_forward(const Tensor<S>& input, const Tensor<S>& weight,
                                                  const Tensor<S>& bias, const Conv2dGeom& geom) {
  Conv2dCtx<S> ctx;
  Tensor<S> out = conv2d_eval(input, weight, bias, geom, &ctx);
  return {std::move(out), std::move(ctx)};
}

template <class S>
Conv2dGrads<S> conv2d_backward(Conv2dCtx<S>& ctx, const Tensor<S>& grad_out) {
  mark_consumed(ctx.consumed, "conv2d_backward");
  const std::size_t batch = ctx.input.dim(0), channels = ctx.input.dim(1);
  const std::size_t height = ctx.input.dim(2), width = ctx.input.dim(3);
  const std::size_t filters = ctx.weight.dim(0), kernel = ctx.weight.dim(2);
  const std::size_t ohw = ctx.out_h * ctx.out_w;
  const std::size_t ckk = channels * kernel * kernel;
  require_shape(grad_out, {batch, filters, ctx.out_h, ctx.out_w}, "conv2d grad_out");

  Conv2dGrads<S> g{Tensor<S>(ctx.input.shape()), Tensor<S>(ctx.weight.shape()), Tensor<S>({filters})};
  const std::vector<S> wt = transposed(ctx.weight.data(), filters, ckk);  // CKK x F
  std::vector<S> grad_col(ckk * ohw);
  for (std::size_t b = 0; b < batch; ++b) {
    const S* gb = grad_out.data() + b * filters * ohw;
    const S* col = ctx.col.data() + b * ckk * ohw;
    // grad_w += g_b * col^T  (dot of contiguous rows)
    gemm_abt_acc(filters, ckk, ohw, gb, col, g.weight.data());
    // grad_col = W^T * g_b, then scatter back to image layout
    std::fill(grad_col.begin(), grad_col.end(), S(0));
    gemm_acc(ckk, ohw, filters, wt.data(), gb, grad_col.data());
    col2im_add(grad_col.data(), channels, height, width, kernel, ctx.geom, ctx.out_h, ctx.out_w,
               g.input.data() + b * channels * height * width);
    for (std::size_t f = 0; f < filters; ++f) {
      S acc = 0;
      const S* row = gb + f * ohw;
      for (std::size_t i = 0; i < ohw; ++i) acc += row[i];
      g.bias[f] += acc;
    }
  }
  debug_check_finite(g.input, "conv2d_backward");
  debug_check_finite(g.weight, "conv2d_backward");
  return g;
}

// ---------------------------------------------------------------------------
// batch norm over channel axis 1, rank-2 (B x C) or rank-4 (B x C x H x W)
// ---------------------------------------------------------------------------

template <class S>
struct BatchNormCtx {
  Tensor<S> xhat;            // normalized input
  Tensor<S> gamma;           // C
  std::vector<S> inv_std;    // per channel
  Mode mode = Mode::Train;
  bool consumed = false;
};

template <class S>
struct BatchNormGrads {
  Tensor<S> input, gamma, beta;
};

template <class S>
struct RunningStats {
  Tensor<S> mean, var;
  explicit RunningStats(std::size_t channels = 1)
      : mean(Tensor<S>::zeros({channels})), var(Tensor<S>::ones({channels})) {}
};

template <class S>
Tensor<S> batchnorm_forward(const Tensor<S>& input, const Tensor<S>& gamma, const Tensor<S>& beta,
                            RunningStats<S>& stats, Mode mode, double momentum, double epsilon,
                            BatchNormCtx<S>* ctx = nullptr) {
  if (input.rank() != 2 && input.rank() != 4) {
    throw shape_error("batchnorm: expected rank 2 or 4 input, got " + shape_to_string(input.shape()));
  }
  const std::size_t channels = input.dim(1);
  require_shape(gamma, {channels}, "batchnorm gamma");
  require_shape(beta, {channels}, "batchnorm beta");
  require_shape(stats.mean, {channels}, "batchnorm running mean");
  const std::size_t batch = input.dim(0);
  const std::size_t spatial = input.numel() / (batch * channels);
  const std::size_t count = batch * spatial;

  std::vector<S> mean(channels), var(channels);
  if (mode == Mode::Train) {
    if (count < 2) {
      throw shape_error("batchnorm: training statistics undefined for " + std::to_string(count) +
                        " element(s) per channel");
    }
    for (std::size_t c = 0; c < channels; ++c) {
      S acc = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        const S* src = input.data() + (b * channels + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) acc += src[i];
      }
      mean[c] = acc / static_cast<S>(count);
      S vacc = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        const S* src = input.data() + (b * channels + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) {
          const S d = src[i] - mean[c];
          vacc += d * d;
        }
      }
      var[c] = vacc / static_cast<S>(count);
      stats.mean[c] = static_cast<S>((1.0 - momentum) * stats.mean[c] + momentum * mean[c]);
      stats.var[c] = static_cast<S>((1.0 - momentum) * stats.var[c] + momentum * var[c]);
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = stats.mean[c];
      var[c] = stats.var[c];
    }
  }

  Tensor<S> out(input.shape());
  std::vector<S> inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) inv_std[c] = static_cast<S>(1.0 / std::sqrt(static_cast<double>(var[c]) + epsilon));
  Tensor<S> xhat(input.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const S* src = input.data() + (b * channels + c) * spatial;
      S* xh = xhat.data() + (b * channels + c) * spatial;
      S* dst = out.data() + (b * channels + c) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) {
        xh[i] = (src[i] - mean[c]) * inv_std[c];
        dst[i] = gamma[c] * xh[i] + beta[c];
      }
    }
  }
  if (ctx) {
    ctx->xhat = std::move(xhat);
    ctx->gamma = gamma;
    ctx->inv_std = std::move(inv_std);
    ctx->mode = mode;
  }
  debug_check_finite(out, "batchnorm_forward");
  return out;
}

template <class S>
BatchNormGrads<S> batchnorm_backward(BatchNormCtx<S>& ctx, const Tensor<S>& grad_out) {
  mark_consumed(ctx.consumed, "batchnorm_backward");
  if (!grad_out.same_shape(ctx.xhat)) throw shape_error("batchnorm grad_out: shape mismatch");
  const std::size_t batch = grad_out.dim(0), channels = grad_out.dim(1);
  const std::size_t spatial = grad_out.numel() / (batch * channels);
  const std::size_t count = batch * spatial;

  BatchNormGrads<S> g{Tensor<S>(grad_out.shape()), Tensor<S>({channels}), Tensor<S>({channels})};
  for (std::size_t c = 0; c < channels; ++c) {
    S sum_g = 0, sum_gx = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      const S* go = grad_out.data() + (b * channels + c) * spatial;
      const S* xh = ctx.xhat.data() + (b * channels + c) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) {
        sum_g += go[i];
        sum_gx += go[i] * xh[i];
      }
    }
    g.beta[c] = sum_g;
    g.gamma[c] = sum_gx;
    const S scale = ctx.gamma[c] * ctx.inv_std[c];
    if (ctx.mode == Mode::Train) {
      const S mean_g = sum_g / static_cast<S>(count);
      const S mean_gx = sum_gx / static_cast<S>(count);
      for (std::size_t b = 0; b < batch; ++b) {
        const S* go = grad_out.data() + (b * channels + c) * spatial;
        const S* xh = ctx.xhat.data() + (b * channels + c) * spatial;
        S* gi = g.input.data() + (b * channels + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) gi[i] = scale * (go[i] - mean_g - xh[i] * mean_gx);
      }
    } else {
      for (std::size_t b = 0; b < batch; ++b) {
        const S* go = grad_out.data() + (b * channels + c) * spatial;
        S* gi = g.input.data() + (b * channels + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) gi[i] = scale * go[i];
      }
    }
  }
  debug_check_finite(g.input, "batchnorm_backward");
  return g;
}

// ---------------------------------------------------------------------------
// relu
// ---------------------------------------------------------------------------

template <class S>
struct ReluCtx {
  Tensor<S> input;
  bool consumed = false;
};

template <class S>
Tensor<S> relu_eval(const Tensor<S>& input) {
  Tensor<S> out(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) out[i] = input[i] > S(0) ? input[i] : S(0);
  return out;
}

template <class S>
std::pair<Tensor<S>, ReluCtx<S>> relu_forward(const Tensor<S>& input) {
  return {relu_eval(input), ReluCtx<S>{input}};
}

template <class S>
Tensor<S> relu_backward(ReluCtx<S>& ctx, const Tensor<S>& grad_out) {
  mark_consumed(ctx.consumed, "relu_backward");
  if (!grad_out.same_shape(ctx.input)) throw shape_error("relu grad_out: shape mismatch");
  Tensor<S> g(grad_out.shape());
  for (std::size_t i = 0; i < g.numel(); ++i) g[i] = ctx.input[i] > S(0) ? grad_out[i] : S(0);
  return g;
}

// ---------------------------------------------------------------------------
// average pooling, square window; kernel 0 means global (full spatial extent)
// ---------------------------------------------------------------------------

template <class S>
struct AvgPoolCtx {
  std::vector<std::size_t> in_shape;
  std::size_t kernel_h = 0, kernel_w = 0;
  std::size_t stride = 1;
  std::size_t out_h = 0, out_w = 0;
  bool consumed = false;
};

template <class S>
Tensor<S> avgpool2d_eval(const Tensor<S>& input, int kernel, AvgPoolCtx<S>* ctx = nullptr) {
  require_rank(input, 4, "avgpool2d input");
  const std::size_t batch = input.dim(0), channels = input.dim(1), height = input.dim(2), width = input.dim(3);
  std::size_t kh, kw, stride;
  if (kernel == 0) {
    kh = height;
    kw = width;
    stride = 1;
  } else {
    if (kernel < 0) throw config_error("avgpool2d: kernel must be >= 0");
    kh = kw = static_cast<std::size_t>(kernel);
    stride = kh;
    if (kh > height || kw > width) throw config_error("avgpool2d: window larger than input");
  }
  const std::size_t out_h = (height - kh) / stride + 1;
  const std::size_t out_w = (width - kw) / stride + 1;
  const S inv = static_cast<S>(1.0 / static_cast<double>(kh * kw));
  Tensor<S> out({batch, channels, out_h, out_w});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const S* plane = input.data() + (b * channels + c) * height * width;
      S* dst = out.data() + (b * channels + c) * out_h * out_w;
      for (std::size_t oh = 0; oh < out_h; ++oh) {
        for (std::size_t ow = 0; ow < out_w; ++ow) {
          S acc = 0;
          for (std::size_t i = 0; i < kh; ++i) {
            const S* row = plane + (oh * stride + i) * width + ow * stride;
            for (std::size_t j = 0; j < kw; ++j) acc += row[j];
          }
          dst[oh * out_w + ow] = acc * inv;
        }
      }
    }
  }
  if (ctx) {
    ctx->in_shape = input.shape();
    ctx->kernel_h = kh;
    ctx->kernel_w = kw;
    ctx->stride = stride;
    ctx->out_h = out_h;
    ctx->out_w = out_w;
  }
  return out;
}

template <class S>
std::pair<Tensor<S>, AvgPoolCtx<S>> avgpool2d_forward(const Tensor<S>& input, int kernel) {
  AvgPoolCtx<S> ctx;
  Tensor<S> out = avgpool2d_eval(input, kernel, &ctx);
  return {std::move(out), std::move(ctx)};
}

template <class S>
Tensor<S> avgpool2d_backward(AvgPoolCtx<S>& ctx, const Tensor<S>& grad_out) {
  mark_consumed(ctx.consumed, "avgpool2d_backward");
  const std::size_t batch = ctx.in_shape[0], channels = ctx.in_shape[1];
  const std::size_t height = ctx.in_shape[2], width = ctx.in_shape[3];
  require_shape(grad_out, {batch, channels, ctx.out_h, ctx.out_w}, "avgpool2d grad_out");
  const S inv = static_cast<S>(1.0 / static_cast<double>(ctx.kernel_h * ctx.kernel_w));
  Tensor<S> g(ctx.in_shape);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const S* go = grad_out.data() + (b * channels + c) * ctx.out_h * ctx.out_w;
      S* plane = g.data() + (b * channels + c) * height * width;
      for (std::size_t oh = 0; oh < ctx.out_h; ++oh) {
        for (std::size_t ow = 0; ow < ctx.out_w; ++ow) {
          const S v = go[oh * ctx.out_w + ow] * inv;
          for (std::size_t i = 0; i < ctx.kernel_h; ++i) {
            S* row = plane + (oh * ctx.stride + i) * width + ow * ctx.stride;
            for (std::size_t j = 0; j < ctx.kernel_w; ++j) row[j] += v;
          }
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// flatten
// ---------------------------------------------------------------------------

template <class S>
struct FlattenCtx {
  std::vector<std::size_t> in_shape;
  bool consumed = false;
};

template <class S>
Tensor<S> flatten_eval(const Tensor<S>& input) {
  if (input.rank() < 2) throw shape_error("flatten: expected rank >= 2");
  return Tensor<S>({input.dim(0), input.numel() / input.dim(0)}, input.vec());
}

template <class S>
std::pair<Tensor<S>, FlattenCtx<S>> flatten_forward(const Tensor<S>& input) {
  return {flatten_eval(input), FlattenCtx<S>{input.shape()}};
}

template <class S>
Tensor<S> flatten_backward(FlattenCtx<S>& ctx, const Tensor<S>& grad_out) {
  mark_consumed(ctx.consumed, "flatten_backward");
  if (grad_out.numel() != shape_numel(ctx.in_shape)) throw shape_error("flatten grad_out: numel mismatch");
  return Tensor<S>(ctx.in_shape, grad_out.vec());
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

template <class S>
struct LossResult {
  double loss = 0.0;
  Tensor<S> grad_logits;
};

template <class S>
void softmax_rows(const Tensor<S>& logits, double temperature, std::vector<double>& probs) {
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  probs.resize(batch * classes);
  for (std::size_t b = 0; b < batch; ++b) {
    const S* row = logits.data() + b * classes;
    double mx = static_cast<double>(row[0]) / temperature;
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, static_cast<double>(row[c]) / temperature);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double e = std::exp(static_cast<double>(row[c]) / temperature - mx);
      probs[b * classes + c] = e;
      denom += e;
    }
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] /= denom;
  }
}

/// Mean cross entropy over the batch; gradient is (softmax - onehot) / B.
template <class S>
LossResult<S> softmax_cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels) {
  require_rank(logits, 2, "softmax_cross_entropy logits");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) throw shape_error("softmax_cross_entropy: label count mismatch");
  std::vector<double> probs;
  softmax_rows(logits, 1.0, probs);
  LossResult<S> r;
  r.grad_logits = Tensor<S>({batch, classes});
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const int y = labels[b];
    if (y < 0 || y >= static_cast<int>(classes)) {
      throw shape_error("softmax_cross_entropy: label " + std::to_string(y) + " out of range [0, " +
                        std::to_string(classes) + ")");
    }
    const double p = std::max(probs[b * classes + static_cast<std::size_t>(y)], 1e-300);
    loss -= std::log(p);
    for (std::size_t c = 0; c < classes; ++c) {
      const double onehot = (static_cast<int>(c) == y) ? 1.0 : 0.0;
      r.grad_logits[b * classes + c] = static_cast<S>((probs[b * classes + c] - onehot) / static_cast<double>(batch));
    }
  }
  r.loss = loss / static_cast<double>(batch);
  return r;
}

/// Temperature-scaled distillation loss T^2 * mean_b KL(p_teacher || p_student).
/// The teacher distribution is treated as a constant: gradient reaches the
/// student logits only.
template <class S>
LossResult<S> kd_kl_loss(const Tensor<S>& teacher_logits, const Tensor<S>& student_logits, double temperature) {
  if (temperature <= 0.0) throw config_error("kd_kl_loss: temperature must be > 0");
  require_rank(teacher_logits, 2, "kd teacher logits");
  if (!teacher_logits.same_shape(student_logits)) throw shape_error("kd_kl_loss: logit shape mismatch");
  const std::size_t batch = teacher_logits.dim(0), classes = teacher_logits.dim(1);
  std::vector<double> p, q;
  softmax_rows(teacher_logits, temperature, p);
  softmax_rows(student_logits, temperature, q);
  LossResult<S> r;
  r.grad_logits = Tensor<S>({batch, classes});
  double kl = 0.0;
  const double t2 = temperature * temperature;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < classes; ++c) {
      const double pi = p[b * classes + c], qi = q[b * classes + c];
      if (pi > 0.0) kl += pi * (std::log(pi) - std::log(std::max(qi, 1e-300)));
      r.grad_logits[b * classes + c] =
          static_cast<S>(temperature * (qi - pi) / static_cast<double>(batch));
    }
  }
  r.loss = t2 * kl / static_cast<double>(batch);
  return r;
}

}  // namespace ops
}  // namespace dcil
