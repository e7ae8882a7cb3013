// Copyright 2026 The drgrade Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/**
 * @file
 * @brief Reverse-mode differentiation over the grading network's operators.
 *
 * A Graph is a tape: every operator call appends a node holding its output
 * value and a closure that pushes the output gradient back to its inputs.
 * Nodes are appended in evaluation order, so the tape is topologically sorted
 * by construction and backward() is a single reverse sweep.
 *
 * Leaves come in three flavours:
 *  - constant(): owned value, never receives a gradient;
 *  - variable(): owned value that collects a gradient (IG inputs);
 *  - parameter(): borrowed value (e.g. frozen model weights shared between
 *    threads) that may or may not collect a gradient in this graph.
 *
 * A Graph is single-writer. Several graphs may borrow the same weights and
 * run concurrently because borrowed tensors are only ever read.
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "drgrade/gemm.hpp"
#include "drgrade/tensor.hpp"

namespace drgrade {

/// Handle to a node of a Graph.
struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

template <typename T>
class Graph {
 public:
  using value_type = T;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  // -- leaves ---------------------------------------------------------------

  Var constant(Tensor<T> value) {
    return push_leaf("constant", std::move(value), nullptr, false);
  }

  Var variable(Tensor<T> value, bool requires_grad = true) {
    return push_leaf("variable", std::move(value), nullptr, requires_grad);
  }

  /// Borrow `value`; it must outlive the graph.
  Var parameter(const Tensor<T>& value, bool requires_grad) {
    return push_leaf("parameter", Tensor<T>(), &value, requires_grad);
  }

  // -- inspection -----------------------------------------------------------

  std::size_t size() const { return nodes_.size(); }
  const Tensor<T>& value(Var v) const { return node(v).value(); }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  const char* op_name(Var v) const { return node(v).op; }
  const std::vector<std::size_t>& inputs(Var v) const {
    return node(v).inputs;
  }

  /// Gradient accumulated at `v`, or nullptr if backward never reached it.
  const Tensor<T>* grad(Var v) const {
    const auto& n = node(v);
    return n.grad.empty() ? nullptr : &n.grad;
  }

  /// Clears every gradient buffer, leaves included.
  void zero_grad() {
    for (auto& n : nodes_) n.grad = Tensor<T>();
  }

  /**
   * Hash of every relu on/off decision and every maxpool argmax on the tape.
   * Two forward passes with equal signatures lie in the same smooth piece of
   * the network, which is what finite-difference checks need to know.
   */
  std::uint64_t nonsmooth_signature() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& n : nodes_) {
      for (auto word : n.pattern) {
        h ^= word;
        h *= 0x100000001b3ULL;
      }
    }
    return h;
  }

  // -- backward -------------------------------------------------------------

  /**
   * Populates gradients of every requires-grad node reachable from `root`.
   * Leaf gradients accumulate across calls; call zero_grad() to reset them.
   */
  void backward(Var root) {
    if (root.id >= nodes_.size()) {
      throw std::invalid_argument("backward: root does not belong to graph");
    }
    if (node(root).value().size() != 1) {
      throw ShapeError("backward: root must be scalar, got shape " +
                       shape_str(node(root).value().shape()));
    }
    for (auto& n : nodes_) {
      if (n.backward) n.grad = Tensor<T>();
    }
    if (!nodes_[root.id].requires_grad) return;
    grad_buffer(root.id)[0] += T(1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(*this, i);
    }
  }

  // -- operators ------------------------------------------------------------

  /// 2-D cross-correlation, NCHW input with OIHW kernel, zero padding.
  Var conv2d(Var input, Var kernel, std::size_t stride, std::size_t padding) {
    const auto& x = value(input);
    const auto& k = value(kernel);
    if (x.rank() != 4 || k.rank() != 4) {
      throw ShapeError("conv2d: expected NCHW input and OIHW kernel, got " +
                       shape_str(x.shape()) + " and " + shape_str(k.shape()));
    }
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    const std::size_t batch = x.dim(0), in_c = x.dim(1), in_h = x.dim(2),
                      in_w = x.dim(3);
    const std::size_t out_c = k.dim(0), k_h = k.dim(2), k_w = k.dim(3);
    if (k.dim(1) != in_c) {
      throw ShapeError("conv2d: input channels (input axis 1) = " +
                       std::to_string(in_c) +
                       " but kernel in-channels (kernel axis 1) = " +
                       std::to_string(k.dim(1)));
    }
    if (in_h + 2 * padding < k_h) {
      throw ShapeError("conv2d: padded input height (input axis 2) = " +
                       std::to_string(in_h + 2 * padding) +
                       " smaller than kernel height (kernel axis 2) = " +
                       std::to_string(k_h));
    }
    if (in_w + 2 * padding < k_w) {
      throw ShapeError("conv2d: padded input width (input axis 3) = " +
                       std::to_string(in_w + 2 * padding) +
                       " smaller than kernel width (kernel axis 3) = " +
                       std::to_string(k_w));
    }
    const std::size_t out_h = (in_h + 2 * padding - k_h) / stride + 1;
    const std::size_t out_w = (in_w + 2 * padding - k_w) / stride + 1;
    const ConvGeometry geo{in_c, in_h, in_w, k_h, k_w, out_h, out_w, stride,
                           padding};
    const std::size_t rows = in_c * k_h * k_w;
    const std::size_t cols = out_h * out_w;

    Tensor<T> out({batch, out_c, out_h, out_w});
    const bool keep_cols = requires_grad(kernel);
    std::vector<T> saved(keep_cols ? batch * rows * cols : 0);
    std::vector<T> scratch(keep_cols ? 0 : rows * cols);
    for (std::size_t n = 0; n < batch; ++n) {
      T* col = keep_cols ? saved.data() + n * rows * cols : scratch.data();
      im2col(geo, x.ptr() + n * in_c * in_h * in_w, col);
      detail::gemm<T>(false, false, int(out_c), int(cols), int(rows), T(1),
                      k.ptr(), col, T(0), out.ptr() + n * out_c * cols);
    }

    return push_op("conv2d", {input.id, kernel.id}, std::move(out),
                   [geo, batch, out_c, rows, cols, saved = std::move(saved)](
                       Graph& g, std::size_t self) {
                     const auto in_id = g.nodes_[self].inputs[0];
                     const auto k_id = g.nodes_[self].inputs[1];
                     const Tensor<T>& gout = g.nodes_[self].grad;
                     const Tensor<T>& kv = g.nodes_[k_id].value();
                     if (g.nodes_[k_id].requires_grad) {
                       T* dk = g.grad_buffer(k_id).ptr();
                       for (std::size_t n = 0; n < batch; ++n) {
                         detail::gemm<T>(false, true, int(out_c), int(rows),
                                         int(cols), T(1),
                                         gout.ptr() + n * out_c * cols,
                                         saved.data() + n * rows * cols, T(1),
                                         dk);
                       }
                     }
                     if (g.nodes_[in_id].requires_grad) {
                       T* dx = g.grad_buffer(in_id).ptr();
                       std::vector<T> dcol(rows * cols);
                       const std::size_t in_size =
                           geo.in_c * geo.in_h * geo.in_w;
                       for (std::size_t n = 0; n < batch; ++n) {
                         detail::gemm<T>(true, false, int(rows), int(cols),
                                         int(out_c), T(1), kv.ptr(),
                                         gout.ptr() + n * out_c * cols, T(0),
                                         dcol.data());
                         col2im_add(geo, dcol.data(), dx + n * in_size);
                       }
                     }
                   });
  }

  /// Adds `bias[c]` along axis 1 of an N×C or N×C×H×W tensor.
  Var add_channel_bias(Var input, Var bias) {
    const auto& x = value(input);
    const auto& b = value(bias);
    if (x.rank() < 2 || b.size() != x.dim(1)) {
      throw ShapeError("add_channel_bias: bias of " + shape_str(b.shape()) +
                       " does not match axis 1 of " + shape_str(x.shape()));
    }
    const std::size_t outer = x.dim(0), channels = x.dim(1);
    const std::size_t inner = x.size() / (outer * channels);
    Tensor<T> out = x;
    for (std::size_t n = 0; n < outer; ++n)
      for (std::size_t c = 0; c < channels; ++c) {
        T* p = out.ptr() + (n * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) p[i] += b[c];
      }
    return push_op("add_channel_bias", {input.id, bias.id}, std::move(out),
                   [outer, channels, inner](Graph& g, std::size_t self) {
                     const auto in_id = g.nodes_[self].inputs[0];
                     const auto b_id = g.nodes_[self].inputs[1];
                     const Tensor<T>& gout = g.nodes_[self].grad;
                     if (g.nodes_[in_id].requires_grad) {
                       g.accumulate(in_id, gout);
                     }
                     if (g.nodes_[b_id].requires_grad) {
                       T* db = g.grad_buffer(b_id).ptr();
                       for (std::size_t n = 0; n < outer; ++n)
                         for (std::size_t c = 0; c < channels; ++c) {
                           const T* p = gout.ptr() + (n * channels + c) * inner;
                           T acc = 0;
                           for (std::size_t i = 0; i < inner; ++i) acc += p[i];
                           db[c] += acc;
                         }
                     }
                   });
  }

  /// Affine map: input (N×F) · weight (F×C) + bias (C).
  Var dense(Var input, Var weight, Var bias) {
    const auto& x = value(input);
    const auto& w = value(weight);
    const auto& b = value(bias);
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0)) {
      throw ShapeError("dense: input " + shape_str(x.shape()) +
                       " inner extent (axis 1) does not match weight " +
                       shape_str(w.shape()) + " (axis 0)");
    }
    if (b.size() != w.dim(1)) {
      throw ShapeError("dense: bias " + shape_str(b.shape()) +
                       " does not match weight output extent (axis 1) of " +
                       shape_str(w.shape()));
    }
    const std::size_t rows = x.dim(0), in_f = x.dim(1), out_f = w.dim(1);
    Tensor<T> out({rows, out_f});
    for (std::size_t n = 0; n < rows; ++n)
      for (std::size_t c = 0; c < out_f; ++c) out[n * out_f + c] = b[c];
    detail::gemm<T>(false, false, int(rows), int(out_f), int(in_f), T(1),
                    x.ptr(), w.ptr(), T(1), out.ptr());
    return push_op(
        "dense", {input.id, weight.id, bias.id}, std::move(out),
        [rows, in_f, out_f](Graph& g, std::size_t self) {
          const auto& ins = g.nodes_[self].inputs;
          const Tensor<T>& gout = g.nodes_[self].grad;
          if (g.nodes_[ins[0]].requires_grad) {
            detail::gemm<T>(false, true, int(rows), int(in_f), int(out_f),
                            T(1), gout.ptr(), g.nodes_[ins[1]].value().ptr(),
                            T(1), g.grad_buffer(ins[0]).ptr());
          }
          if (g.nodes_[ins[1]].requires_grad) {
            detail::gemm<T>(true, false, int(in_f), int(out_f), int(rows),
                            T(1), g.nodes_[ins[0]].value().ptr(), gout.ptr(),
                            T(1), g.grad_buffer(ins[1]).ptr());
          }
          if (g.nodes_[ins[2]].requires_grad) {
            T* db = g.grad_buffer(ins[2]).ptr();
            for (std::size_t n = 0; n < rows; ++n)
              for (std::size_t c = 0; c < out_f; ++c)
                db[c] += gout[n * out_f + c];
          }
        });
  }

  /// Max over window×window patches of an NCHW tensor.
  Var maxpool(Var input, std::size_t window, std::size_t stride) {
    const auto& x = value(input);
    if (x.rank() != 4) {
      throw ShapeError("maxpool: expected NCHW input, got " +
                       shape_str(x.shape()));
    }
    if (window == 0 || stride == 0) {
      throw ShapeError("maxpool: window and stride must be positive");
    }
    if (window > x.dim(2) || window > x.dim(3)) {
      throw ShapeError("maxpool: window " + std::to_string(window) +
                       " larger than input spatial extents " +
                       shape_str(x.shape()));
    }
    const std::size_t planes = x.dim(0) * x.dim(1), in_h = x.dim(2),
                      in_w = x.dim(3);
    const std::size_t out_h = (in_h - window) / stride + 1;
    const std::size_t out_w = (in_w - window) / stride + 1;
    Tensor<T> out({x.dim(0), x.dim(1), out_h, out_w});
    std::vector<std::uint32_t> argmax(out.size());
    for (std::size_t p = 0; p < planes; ++p) {
      const T* src = x.ptr() + p * in_h * in_w;
      for (std::size_t oh = 0; oh < out_h; ++oh)
        for (std::size_t ow = 0; ow < out_w; ++ow) {
          std::size_t best = (oh * stride) * in_w + ow * stride;
          for (std::size_t i = 0; i < window; ++i)
            for (std::size_t j = 0; j < window; ++j) {
              const std::size_t idx = (oh * stride + i) * in_w + ow * stride + j;
              if (src[idx] > src[best]) best = idx;  // first max wins ties
            }
          const std::size_t o = (p * out_h + oh) * out_w + ow;
          out[o] = src[best];
          argmax[o] = static_cast<std::uint32_t>(p * in_h * in_w + best);
        }
    }
    Var v = push_op("maxpool", {input.id}, std::move(out),
                    [](Graph& g, std::size_t self) {
                      const auto in_id = g.nodes_[self].inputs[0];
                      if (!g.nodes_[in_id].requires_grad) return;
                      const auto& n = g.nodes_[self];
                      T* dx = g.grad_buffer(in_id).ptr();
                      for (std::size_t o = 0; o < n.pattern.size(); ++o)
                        dx[n.pattern[o]] += n.grad[o];
                    });
    nodes_[v.id].pattern = std::move(argmax);
    return v;
  }

  Var relu(Var input) {
    const auto& x = value(input);
    Tensor<T> out(x.shape());
    std::vector<std::uint32_t> mask((x.size() + 31) / 32, 0);
    const T* in = x.ptr();
    T* o = out.ptr();
    for (std::size_t w = 0; w < mask.size(); ++w) {
      const std::size_t base = w * 32, end = std::min(x.size(), base + 32);
      std::uint32_t bits = 0;
      for (std::size_t i = base; i < end; ++i) {
        const bool on = in[i] > T(0);
        bits |= std::uint32_t(on) << (i - base);
        o[i] = on ? in[i] : T(0);
      }
      mask[w] = bits;
    }
    Var v = push_op("relu", {input.id}, std::move(out),
                    [](Graph& g, std::size_t self) {
                      const auto in_id = g.nodes_[self].inputs[0];
                      if (!g.nodes_[in_id].requires_grad) return;
                      const auto& n = g.nodes_[self];
                      T* dx = g.grad_buffer(in_id).ptr();
                      const T* gp = n.grad.ptr();
                      for (std::size_t i = 0; i < n.grad.size(); ++i)
                        dx[i] += ((n.pattern[i / 32] >> (i % 32)) & 1u) ? gp[i] : T(0);
                    });
    nodes_[v.id].pattern = std::move(mask);
    return v;
  }

  /// Row-wise softmax of an N×C tensor, C >= 2.
  Var softmax(Var logits) {
    const auto& x = value(logits);
    if (x.rank() != 2 || x.dim(1) < 2) {
      throw ShapeError("softmax: expected N x C with C >= 2, got " +
                       shape_str(x.shape()));
    }
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    Tensor<T> out(x.shape());
    for (std::size_t n = 0; n < rows; ++n) {
      const T* in = x.ptr() + n * cols;
      T* o = out.ptr() + n * cols;
      T peak = in[0];
      for (std::size_t c = 1; c < cols; ++c) peak = std::max(peak, in[c]);
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        o[c] = static_cast<T>(std::exp(static_cast<double>(in[c] - peak)));
        total += o[c];
      }
      for (std::size_t c = 0; c < cols; ++c)
        o[c] = static_cast<T>(o[c] / total);
    }
    return push_op("softmax", {logits.id}, std::move(out),
                   [rows, cols](Graph& g, std::size_t self) {
                     const auto in_id = g.nodes_[self].inputs[0];
                     if (!g.nodes_[in_id].requires_grad) return;
                     const auto& n = g.nodes_[self];
                     T* dx = g.grad_buffer(in_id).ptr();
                     for (std::size_t r = 0; r < rows; ++r) {
                       const T* y = n.owned.ptr() + r * cols;
                       const T* gy = n.grad.ptr() + r * cols;
                       double dot = 0.0;
                       for (std::size_t c = 0; c < cols; ++c)
                         dot += double(gy[c]) * y[c];
                       for (std::size_t c = 0; c < cols; ++c)
                         dx[r * cols + c] +=
                             static_cast<T>(y[c] * (gy[c] - dot));
                     }
                   });
  }

  /**
   * Mean over rows of -log p(true class). Probabilities are clamped at
   * 1e-7 before the log; the clamp has zero gradient.
   */
  Var cross_entropy(Var probs, const Tensor<T>& one_hot) {
    const auto& p = value(probs);
    if (p.rank() != 2 || one_hot.shape() != p.shape()) {
      throw ShapeError("cross_entropy: labels " + shape_str(one_hot.shape()) +
                       " do not match probabilities " + shape_str(p.shape()));
    }
    const std::size_t rows = p.dim(0), cols = p.dim(1);
    std::vector<std::size_t> target(rows);
    for (std::size_t n = 0; n < rows; ++n) {
      std::size_t hot = cols;
      for (std::size_t c = 0; c < cols; ++c) {
        const T v = one_hot[n * cols + c];
        if (v == T(1) && hot == cols) {
          hot = c;
        } else if (v != T(0)) {
          hot = cols + 1;
          break;
        }
      }
      if (hot >= cols) {
        throw std::invalid_argument("cross_entropy: label row " +
                                    std::to_string(n) + " is not one-hot");
      }
      target[n] = hot;
    }
    constexpr double kFloor = 1e-7;
    double loss = 0.0;
    for (std::size_t n = 0; n < rows; ++n)
      loss -= std::log(std::max(double(p[n * cols + target[n]]), kFloor));
    Tensor<T> out({1}, static_cast<T>(loss / double(rows)));
    return push_op("cross_entropy", {probs.id}, std::move(out),
                   [rows, cols, target = std::move(target)](Graph& g,
                                                            std::size_t self) {
                     const auto in_id = g.nodes_[self].inputs[0];
                     if (!g.nodes_[in_id].requires_grad) return;
                     const T seed = g.nodes_[self].grad[0];
                     const auto& pv = g.nodes_[in_id].value();
                     T* dp = g.grad_buffer(in_id).ptr();
                     for (std::size_t n = 0; n < rows; ++n) {
                       const std::size_t i = n * cols + target[n];
                       if (double(pv[i]) > kFloor)
                         dp[i] -= seed / (T(rows) * pv[i]);
                     }
                   });
  }

  Var reshape(Var input, Shape shape) {
    Tensor<T> out = value(input).reshaped(std::move(shape));
    return push_op("reshape", {input.id}, std::move(out),
                   [](Graph& g, std::size_t self) {
                     const auto in_id = g.nodes_[self].inputs[0];
                     if (g.nodes_[in_id].requires_grad)
                       g.accumulate(in_id, g.nodes_[self].grad);
                   });
  }

  /**
   * out[n,c] = sum_p weights[n,p] * features[n,c,p] over the H·W spatial
   * positions p of an N×C×H×W feature map; weights is N×(H·W).
   */
  Var weighted_spatial_sum(Var features, Var weights) {
    const auto& f = value(features);
    const auto& w = value(weights);
    if (f.rank() != 4 || w.rank() != 2 || w.dim(0) != f.dim(0) ||
        w.dim(1) != f.dim(2) * f.dim(3)) {
      throw ShapeError("weighted_spatial_sum: weights " + shape_str(w.shape()) +
                       " do not match features " + shape_str(f.shape()));
    }
    const std::size_t batch = f.dim(0), channels = f.dim(1),
                      positions = f.dim(2) * f.dim(3);
    Tensor<T> out({batch, channels});
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t c = 0; c < channels; ++c) {
        const T* fp = f.ptr() + (n * channels + c) * positions;
        const T* wp = w.ptr() + n * positions;
        double acc = 0.0;
        for (std::size_t p = 0; p < positions; ++p) acc += double(wp[p]) * fp[p];
        out[n * channels + c] = static_cast<T>(acc);
      }
    return push_op(
        "weighted_spatial_sum", {features.id, weights.id}, std::move(out),
        [batch, channels, positions](Graph& g, std::size_t self) {
          const auto f_id = g.nodes_[self].inputs[0];
          const auto w_id = g.nodes_[self].inputs[1];
          const Tensor<T>& gout = g.nodes_[self].grad;
          const auto& fv = g.nodes_[f_id].value();
          const auto& wv = g.nodes_[w_id].value();
          if (g.nodes_[f_id].requires_grad) {
            T* df = g.grad_buffer(f_id).ptr();
            for (std::size_t n = 0; n < batch; ++n)
              for (std::size_t c = 0; c < channels; ++c) {
                const T gc = gout[n * channels + c];
                T* d = df + (n * channels + c) * positions;
                const T* wp = wv.ptr() + n * positions;
                for (std::size_t p = 0; p < positions; ++p) d[p] += gc * wp[p];
              }
          }
          if (g.nodes_[w_id].requires_grad) {
            T* dw = g.grad_buffer(w_id).ptr();
            for (std::size_t n = 0; n < batch; ++n)
              for (std::size_t c = 0; c < channels; ++c) {
                const T gc = gout[n * channels + c];
                const T* fp = fv.ptr() + (n * channels + c) * positions;
                T* d = dw + n * positions;
                for (std::size_t p = 0; p < positions; ++p) d[p] += gc * fp[p];
              }
          }
        });
  }

  Var add(Var a, Var b) {
    check_same_shape("add", a, b);
    Tensor<T> out = value(a);
    const auto& bv = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return push_op("add", {a.id, b.id}, std::move(out),
                   [](Graph& g, std::size_t self) {
                     for (auto id : g.nodes_[self].inputs)
                       if (g.nodes_[id].requires_grad)
                         g.accumulate(id, g.nodes_[self].grad);
                   });
  }

  Var mul(Var a, Var b) {
    check_same_shape("mul", a, b);
    Tensor<T> out = value(a);
    const auto& bv = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return push_op("mul", {a.id, b.id}, std::move(out),
                   [](Graph& g, std::size_t self) {
                     const auto a_id = g.nodes_[self].inputs[0];
                     const auto b_id = g.nodes_[self].inputs[1];
                     const auto& gout = g.nodes_[self].grad;
                     const auto& av = g.nodes_[a_id].value();
                     const auto& bv = g.nodes_[b_id].value();
                     if (g.nodes_[a_id].requires_grad) {
                       T* da = g.grad_buffer(a_id).ptr();
                       for (std::size_t i = 0; i < gout.size(); ++i)
                         da[i] += gout[i] * bv[i];
                     }
                     if (g.nodes_[b_id].requires_grad) {
                       T* db = g.grad_buffer(b_id).ptr();
                       for (std::size_t i = 0; i < gout.size(); ++i)
                         db[i] += gout[i] * av[i];
                     }
                   });
  }

  Var scale(Var input, T factor) {
    Tensor<T> out = value(input);
    for (auto& v : out.data()) v *= factor;
    return push_op("scale", {input.id}, std::move(out),
                   [factor](Graph& g, std::size_t self) {
                     const auto in_id = g.nodes_[self].inputs[0];
                     if (!g.nodes_[in_id].requires_grad) return;
                     const auto& gout = g.nodes_[self].grad;
                     T* dx = g.grad_buffer(in_id).ptr();
                     for (std::size_t i = 0; i < gout.size(); ++i)
                       dx[i] += gout[i] * factor;
                   });
  }

  /// Scalar sum of all elements.
  Var sum(Var input) {
    const auto& x = value(input);
    double acc = 0.0;
    for (auto v : x.data()) acc += v;
    return push_op("sum", {input.id}, Tensor<T>({1}, static_cast<T>(acc)),
                   [](Graph& g, std::size_t self) {
                     const auto in_id = g.nodes_[self].inputs[0];
                     if (!g.nodes_[in_id].requires_grad) return;
                     const T seed = g.nodes_[self].grad[0];
                     for (auto& d : g.grad_buffer(in_id).data()) d += seed;
                   });
  }

  /// Scalar sum over rows of column `column` of an N×C tensor.
  Var pick(Var input, std::size_t column) {
    const auto& x = value(input);
    if (x.rank() != 2 || column >= x.dim(1)) {
      throw std::out_of_range("pick: column " + std::to_string(column) +
                              " out of range for " + shape_str(x.shape()));
    }
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    double acc = 0.0;
    for (std::size_t n = 0; n < rows; ++n) acc += x[n * cols + column];
    return push_op("pick", {input.id}, Tensor<T>({1}, static_cast<T>(acc)),
                   [rows, cols, column](Graph& g, std::size_t self) {
                     const auto in_id = g.nodes_[self].inputs[0];
                     if (!g.nodes_[in_id].requires_grad) return;
                     const T seed = g.nodes_[self].grad[0];
                     T* dx = g.grad_buffer(in_id).ptr();
                     for (std::size_t n = 0; n < rows; ++n)
                       dx[n * cols + column] += seed;
                   });
  }

 private:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  struct Node {
    const char* op = "";
    std::vector<std::size_t> inputs;
    Tensor<T> owned;
    const Tensor<T>* borrowed = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
    std::vector<std::uint32_t> pattern;

    const Tensor<T>& value() const { return borrowed ? *borrowed : owned; }
  };

  struct ConvGeometry {
    std::size_t in_c, in_h, in_w, k_h, k_w, out_h, out_w, stride, padding;
  };

  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) {
      throw std::out_of_range("graph: variable does not belong to graph");
    }
    return nodes_[v.id];
  }

  Var push_leaf(const char* op, Tensor<T> value, const Tensor<T>* borrowed,
                bool requires_grad) {
    Node n;
    n.op = op;
    n.owned = std::move(value);
    n.borrowed = borrowed;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Var push_op(const char* op, std::vector<std::size_t> inputs, Tensor<T> out,
              BackwardFn backward) {
    Node n;
    n.op = op;
    for (auto id : inputs) n.requires_grad |= nodes_[id].requires_grad;
    n.inputs = std::move(inputs);
    n.owned = std::move(out);
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Tensor<T>& grad_buffer(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value().shape());
    return n.grad;
  }

  void accumulate(std::size_t id, const Tensor<T>& g) {
    auto& buf = grad_buffer(id);
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
  }

  void check_same_shape(const char* op, Var a, Var b) const {
    if (value(a).shape() != value(b).shape()) {
      throw ShapeError(std::string(op) + ": operand shapes " +
                       shape_str(value(a).shape()) + " and " +
                       shape_str(value(b).shape()) + " differ");
    }
  }

  // Output columns [lo, hi) whose input column ow·stride + kj − padding
  // lies inside the image.
  static std::pair<std::size_t, std::size_t> valid_cols(const ConvGeometry& g,
                                                        std::size_t kj) {
    std::size_t lo = 0;
    while (lo < g.out_w && lo * g.stride + kj < g.padding) ++lo;
    std::size_t hi = lo;
    while (hi < g.out_w && hi * g.stride + kj < g.padding + g.in_w) ++hi;
    return {lo, hi};
  }

  static void im2col(const ConvGeometry& g, const T* src, T* col) {
    const std::size_t cols = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.in_c; ++c)
      for (std::size_t ki = 0; ki < g.k_h; ++ki)
        for (std::size_t kj = 0; kj < g.k_w; ++kj) {
          T* row = col + ((c * g.k_h + ki) * g.k_w + kj) * cols;
          const T* plane = src + c * g.in_h * g.in_w;
          const auto [lo, hi] = valid_cols(g, kj);
          for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                            static_cast<std::ptrdiff_t>(g.padding);
            T* dst = row + oh * g.out_w;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) {
              std::fill(dst, dst + g.out_w, T(0));
              continue;
            }
            const T* line = plane + ih * g.in_w + kj;
            std::fill(dst, dst + lo, T(0));
            if (g.stride == 1) {
              std::copy(line + lo - g.padding, line + hi - g.padding, dst + lo);
            } else {
              for (std::size_t ow = lo; ow < hi; ++ow)
                dst[ow] = line[ow * g.stride - g.padding];
            }
            std::fill(dst + hi, dst + g.out_w, T(0));
          }
        }
  }

  static void col2im_add(const ConvGeometry& g, const T* col, T* dst) {
    const std::size_t cols = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.in_c; ++c)
      for (std::size_t ki = 0; ki < g.k_h; ++ki)
        for (std::size_t kj = 0; kj < g.k_w; ++kj) {
          const T* row = col + ((c * g.k_h + ki) * g.k_w + kj) * cols;
          T* plane = dst + c * g.in_h * g.in_w;
          const auto [lo, hi] = valid_cols(g, kj);
          for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                            static_cast<std::ptrdiff_t>(g.padding);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
            T* line = plane + ih * g.in_w + kj;
            const T* src = row + oh * g.out_w;
            for (std::size_t ow = lo; ow < hi; ++ow)
              line[ow * g.stride - g.padding] += src[ow];
          }
        }
  }

  std::vector<Node> nodes_;
};

}  // namespace drgrade
