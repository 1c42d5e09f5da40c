#include "lip3d/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>
#include <unordered_set>

#include "lip3d/errors.hpp"

namespace lip3d {

namespace {

std::atomic<int> g_num_threads{0};  // 0 = auto

int resolve_threads() {
  int n = g_num_threads.load(std::memory_order_relaxed);
  if (n > 0) return n;
  const unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::clamp<unsigned>(hw, 1u, 8u));
}

// Chunked index parallelism. Each index is processed by exactly one thread
// with its own internal loop order, so results do not depend on the split.
template <typename Fn>
void parallel_for(std::size_t n, const Fn& fn) {
  const int threads = resolve_threads();
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t t = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::thread> pool;
  pool.reserve(t);
  for (std::size_t w = 0; w < t; ++w) {
    const std::size_t lo = n * w / t;
    const std::size_t hi = n * (w + 1) / t;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void ensure_grad(detail::TensorNode& n) {
  if (n.grad.empty()) n.grad.assign(n.numel(), 0.0);
}

void require_same_shape(const DiffTensor& a, const DiffTensor& b,
                        const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank(const DiffTensor& t, std::size_t rank, const char* op,
                  const char* arg) {
  if (t.shape().size() != rank) {
    throw DimensionError(std::string(op) + ": " + arg + " must have rank " +
                         std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

double stable_sigmoid_scalar(double x) {
  double s;
  if (x >= 0.0) {
    s = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    s = e / (1.0 + e);
  }
  // Keep the contract output strictly inside (0,1) even at saturation.
  s = std::min(s, 1.0 - 0x1.0p-53);
  s = std::max(s, std::numeric_limits<double>::min());
  return s;
}

}  // namespace

void set_num_threads(int n) { g_num_threads.store(n, std::memory_order_relaxed); }
int num_threads() { return resolve_threads(); }

DiffTensor make_op_result(std::vector<std::size_t> shape,
                          std::vector<double> values,
                          std::vector<DiffTensor> parents,
                          std::function<void(detail::TensorNode&)> fn) {
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  bool track = false;
  for (const auto& p : parents) {
    track = track || p.node()->track;
    node->parents.push_back(p.handle());
  }
  node->track = track;
  if (track) node->backprop = std::move(fn);
  return DiffTensor(std::move(node));
}

DiffTensor DiffTensor::make(std::vector<std::size_t> shape,
                            std::vector<double> values, bool requires_grad) {
  if (values.size() != shape_numel(shape)) {
    throw DimensionError("tensor: " + std::to_string(values.size()) +
                         " values do not fill shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  node->track = requires_grad;
  return DiffTensor(std::move(node));
}

DiffTensor DiffTensor::zeros(std::vector<std::size_t> shape,
                             bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return make(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

DiffTensor DiffTensor::full(std::vector<std::size_t> shape, double value,
                            bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return make(std::move(shape), std::vector<double>(n, value), requires_grad);
}

DiffTensor DiffTensor::from_values(std::vector<std::size_t> shape,
                                   std::vector<double> values,
                                   bool requires_grad) {
  return make(std::move(shape), std::move(values), requires_grad);
}

double DiffTensor::scalar() const {
  if (numel() != 1) {
    throw DimensionError("scalar(): tensor has shape " + shape_str(shape()));
  }
  return node_->values[0];
}

const std::vector<double>& DiffTensor::grad() const {
  if (!has_grad()) throw ValueError("grad(): no gradient present");
  return node_->grad;
}

void DiffTensor::clear_grad() {
  node_->grad.clear();
  node_->grad.shrink_to_fit();
  node_->consumed = false;
}

// ---------------------------------------------------------------------------
// Elementwise ops

DiffTensor add(const DiffTensor& a, const DiffTensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  auto* an = a.node();
  auto* bn = b.node();
  return make_op_result(a.shape(), std::move(out), {a, b},
                        [an, bn](detail::TensorNode& self) {
                          if (an->track) {
                            ensure_grad(*an);
                            for (std::size_t i = 0; i < self.grad.size(); ++i)
                              an->grad[i] += self.grad[i];
                          }
                          if (bn->track) {
                            ensure_grad(*bn);
                            for (std::size_t i = 0; i < self.grad.size(); ++i)
                              bn->grad[i] += self.grad[i];
                          }
                        });
}

DiffTensor mul(const DiffTensor& a, const DiffTensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto* an = a.node();
  auto* bn = b.node();
  return make_op_result(a.shape(), std::move(out), {a, b},
                        [an, bn](detail::TensorNode& self) {
                          if (an->track) {
                            ensure_grad(*an);
                            for (std::size_t i = 0; i < self.grad.size(); ++i)
                              an->grad[i] += self.grad[i] * bn->values[i];
                          }
                          if (bn->track) {
                            ensure_grad(*bn);
                            for (std::size_t i = 0; i < self.grad.size(); ++i)
                              bn->grad[i] += self.grad[i] * an->values[i];
                          }
                        });
}

DiffTensor relu(const DiffTensor& x) {
  std::vector<double> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  auto* xn = x.node();
  return make_op_result(x.shape(), std::move(out), {x},
                        [xn](detail::TensorNode& self) {
                          if (!xn->track) return;
                          ensure_grad(*xn);
                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                            if (xn->values[i] > 0.0) xn->grad[i] += self.grad[i];
                        });
}

DiffTensor sigmoid(const DiffTensor& x) {
  std::vector<double> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid_scalar(xv[i]);
  auto* xn = x.node();
  return make_op_result(x.shape(), std::move(out), {x},
                        [xn](detail::TensorNode& self) {
                          if (!xn->track) return;
                          ensure_grad(*xn);
                          for (std::size_t i = 0; i < self.grad.size(); ++i) {
                            const double s = self.values[i];
                            xn->grad[i] += self.grad[i] * s * (1.0 - s);
                          }
                        });
}

// ---------------------------------------------------------------------------
// linear

DiffTensor linear(const DiffTensor& x, const DiffTensor& weight,
                  const DiffTensor& bias) {
  require_rank(x, 2, "linear", "input");
  require_rank(weight, 2, "linear", "weight");
  require_rank(bias, 1, "linear", "bias");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  const std::size_t e = weight.shape()[1];
  if (weight.shape()[0] != d) {
    throw DimensionError("linear: input axis 1 (" + std::to_string(d) +
                         ") does not match weight axis 0 (" +
                         std::to_string(weight.shape()[0]) + ")");
  }
  if (bias.shape()[0] != e) {
    throw DimensionError("linear: bias axis 0 (" +
                         std::to_string(bias.shape()[0]) +
                         ") does not match weight axis 1 (" +
                         std::to_string(e) + ")");
  }
  std::vector<double> out(n * e);
  const auto& xv = x.values();
  const auto& wv = weight.values();
  const auto& bv = bias.values();
  for (std::size_t r = 0; r < n; ++r) {
    double* orow = out.data() + r * e;
    for (std::size_t c = 0; c < e; ++c) orow[c] = bv[c];
    for (std::size_t k = 0; k < d; ++k) {
      const double xk = xv[r * d + k];
      const double* wrow = wv.data() + k * e;
      for (std::size_t c = 0; c < e; ++c) orow[c] += xk * wrow[c];
    }
  }
  auto* xn = x.node();
  auto* wn = weight.node();
  auto* bn = bias.node();
  return make_op_result(
      {n, e}, std::move(out), {x, weight, bias},
      [xn, wn, bn, n, d, e](detail::TensorNode& self) {
        const double* g = self.grad.data();
        if (xn->track) {
          ensure_grad(*xn);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t k = 0; k < d; ++k) {
              const double* wrow = wn->values.data() + k * e;
              const double* grow = g + r * e;
              double acc = 0.0;
              for (std::size_t c = 0; c < e; ++c) acc += grow[c] * wrow[c];
              xn->grad[r * d + k] += acc;
            }
        }
        if (wn->track) {
          ensure_grad(*wn);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t k = 0; k < d; ++k) {
              const double xk = xn->values[r * d + k];
              double* wgrow = wn->grad.data() + k * e;
              const double* grow = g + r * e;
              for (std::size_t c = 0; c < e; ++c) wgrow[c] += xk * grow[c];
            }
        }
        if (bn->track) {
          ensure_grad(*bn);
          for (std::size_t r = 0; r < n; ++r) {
            const double* grow = g + r * e;
            for (std::size_t c = 0; c < e; ++c) bn->grad[c] += grow[c];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// conv2d

DiffTensor conv2d(const DiffTensor& input, const DiffTensor& kernel,
                  const DiffTensor& bias, std::size_t pad_h,
                  std::size_t pad_w) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  require_rank(bias, 1, "conv2d", "bias");
  const std::size_t n = input.shape()[0], c = input.shape()[1];
  const std::size_t h = input.shape()[2], w = input.shape()[3];
  const std::size_t k = kernel.shape()[0], kc = kernel.shape()[1];
  const std::size_t kh = kernel.shape()[2], kw = kernel.shape()[3];
  if (kc != c) {
    throw DimensionError("conv2d: kernel channel axis (1) = " +
                         std::to_string(kc) +
                         " does not match input channel axis (1) = " +
                         std::to_string(c));
  }
  if (bias.shape()[0] != k) {
    throw DimensionError("conv2d: bias axis 0 = " +
                         std::to_string(bias.shape()[0]) +
                         " does not match kernel count axis (0) = " +
                         std::to_string(k));
  }
  if (kh > h + 2 * pad_h || kw > w + 2 * pad_w) {
    throw DimensionError("conv2d: kernel " + std::to_string(kh) + "x" +
                         std::to_string(kw) + " exceeds padded input " +
                         std::to_string(h + 2 * pad_h) + "x" +
                         std::to_string(w + 2 * pad_w));
  }
  const std::size_t oh = h + 2 * pad_h - kh + 1;
  const std::size_t ow = w + 2 * pad_w - kw + 1;

  std::vector<double> out(n * k * oh * ow);
  const double* in = input.values().data();
  const double* ker = kernel.values().data();
  const double* bv = bias.values().data();
  const long ph = static_cast<long>(pad_h), pw = static_cast<long>(pad_w);

  parallel_for(n * k, [&](std::size_t nk) {
    const std::size_t bn = nk / k, ko = nk % k;
    double* plane = out.data() + nk * oh * ow;
    std::fill(plane, plane + oh * ow, bv[ko]);
    for (std::size_t ci = 0; ci < c; ++ci) {
      const double* in_chan = in + (bn * c + ci) * h * w;
      for (std::size_t i = 0; i < kh; ++i) {
        const long dy = static_cast<long>(i) - ph;
        const std::size_t y0 = static_cast<std::size_t>(std::max<long>(0, -dy));
        const std::size_t y1 = static_cast<std::size_t>(
            std::min<long>(static_cast<long>(oh), static_cast<long>(h) - dy));
        for (std::size_t j = 0; j < kw; ++j) {
          const double kval = ker[((ko * c + ci) * kh + i) * kw + j];
          if (kval == 0.0) continue;
          const long dx = static_cast<long>(j) - pw;
          const std::size_t x0 = static_cast<std::size_t>(std::max<long>(0, -dx));
          const std::size_t x1 = static_cast<std::size_t>(
              std::min<long>(static_cast<long>(ow), static_cast<long>(w) - dx));
          for (std::size_t y = y0; y < y1; ++y) {
            const double* irow = in_chan + (y + dy) * w + dx;
            double* orow = plane + y * ow;
            for (std::size_t x = x0; x < x1; ++x) orow[x] += kval * irow[x];
          }
        }
      }
    }
  });

  auto* in_node = input.node();
  auto* ker_node = kernel.node();
  auto* bias_node = bias.node();
  return make_op_result(
      {n, k, oh, ow}, std::move(out), {input, kernel, bias},
      [in_node, ker_node, bias_node, n, c, h, w, k, kh, kw, oh, ow, ph,
       pw](detail::TensorNode& self) {
        const double* g = self.grad.data();
        if (bias_node->track) {
          ensure_grad(*bias_node);
          for (std::size_t ko = 0; ko < k; ++ko) {
            double acc = 0.0;
            for (std::size_t bn = 0; bn < n; ++bn) {
              const double* plane = g + (bn * k + ko) * oh * ow;
              for (std::size_t i = 0; i < oh * ow; ++i) acc += plane[i];
            }
            bias_node->grad[ko] += acc;
          }
        }
        if (ker_node->track) {
          ensure_grad(*ker_node);
          // One thread owns one output channel; inner order fixed.
          parallel_for(k, [&](std::size_t ko) {
            for (std::size_t ci = 0; ci < c; ++ci)
              for (std::size_t i = 0; i < kh; ++i) {
                const long dy = static_cast<long>(i) - ph;
                const std::size_t y0 =
                    static_cast<std::size_t>(std::max<long>(0, -dy));
                const std::size_t y1 = static_cast<std::size_t>(std::min<long>(
                    static_cast<long>(oh), static_cast<long>(h) - dy));
                for (std::size_t j = 0; j < kw; ++j) {
                  const long dx = static_cast<long>(j) - pw;
                  const std::size_t x0 =
                      static_cast<std::size_t>(std::max<long>(0, -dx));
                  const std::size_t x1 =
                      static_cast<std::size_t>(std::min<long>(
                          static_cast<long>(ow), static_cast<long>(w) - dx));
                  double acc = 0.0;
                  for (std::size_t bn = 0; bn < n; ++bn) {
                    const double* gplane = g + (bn * k + ko) * oh * ow;
                    const double* in_chan =
                        in_node->values.data() + (bn * c + ci) * h * w;
                    for (std::size_t y = y0; y < y1; ++y) {
                      const double* irow = in_chan + (y + dy) * w + dx;
                      const double* grow = gplane + y * ow;
                      for (std::size_t x = x0; x < x1; ++x)
                        acc += grow[x] * irow[x];
                    }
                  }
                  ker_node->grad[((ko * c + ci) * kh + i) * kw + j] += acc;
                }
              }
          });
        }
        if (in_node->track) {
          ensure_grad(*in_node);
          // One thread owns one batch item's input grad.
          parallel_for(n, [&](std::size_t bn) {
            for (std::size_t ko = 0; ko < k; ++ko) {
              const double* gplane = g + (bn * k + ko) * oh * ow;
              for (std::size_t ci = 0; ci < c; ++ci) {
                double* ig_chan =
                    in_node->grad.data() + (bn * c + ci) * h * w;
                for (std::size_t i = 0; i < kh; ++i) {
                  const long dy = static_cast<long>(i) - ph;
                  const std::size_t y0 =
                      static_cast<std::size_t>(std::max<long>(0, -dy));
                  const std::size_t y1 =
                      static_cast<std::size_t>(std::min<long>(
                          static_cast<long>(oh), static_cast<long>(h) - dy));
                  for (std::size_t j = 0; j < kw; ++j) {
                    const double kval =
                        ker_node
                            ->values[((ko * c + ci) * kh + i) * kw + j];
                    if (kval == 0.0) continue;
                    const long dx = static_cast<long>(j) - pw;
                    const std::size_t x0 =
                        static_cast<std::size_t>(std::max<long>(0, -dx));
                    const std::size_t x1 =
                        static_cast<std::size_t>(std::min<long>(
                            static_cast<long>(ow), static_cast<long>(w) - dx));
                    for (std::size_t y = y0; y < y1; ++y) {
                      double* irow = ig_chan + (y + dy) * w + dx;
                      const double* grow = gplane + y * ow;
                      for (std::size_t x = x0; x < x1; ++x)
                        irow[x] += kval * grow[x];
                    }
                  }
                }
              }
            }
          });
        }
      });
}

// ---------------------------------------------------------------------------
// concat / hadamard / pooling

DiffTensor concat_channels(const DiffTensor& a, const DiffTensor& b) {
  require_rank(a, 4, "concat_channels", "a");
  require_rank(b, 4, "concat_channels", "b");
  for (std::size_t ax : {std::size_t{0}, std::size_t{2}, std::size_t{3}}) {
    if (a.shape()[ax] != b.shape()[ax]) {
      throw DimensionError("concat_channels: axis " + std::to_string(ax) +
                           " mismatch: " + std::to_string(a.shape()[ax]) +
                           " vs " + std::to_string(b.shape()[ax]));
    }
  }
  const std::size_t n = a.shape()[0];
  const std::size_t ca = a.shape()[1], cb = b.shape()[1];
  const std::size_t hw = a.shape()[2] * a.shape()[3];
  std::vector<double> out(n * (ca + cb) * hw);
  for (std::size_t bn = 0; bn < n; ++bn) {
    std::copy_n(a.values().data() + bn * ca * hw, ca * hw,
                out.data() + bn * (ca + cb) * hw);
    std::copy_n(b.values().data() + bn * cb * hw, cb * hw,
                out.data() + bn * (ca + cb) * hw + ca * hw);
  }
  auto* an = a.node();
  auto* bn_ = b.node();
  return make_op_result(
      {n, ca + cb, a.shape()[2], a.shape()[3]}, std::move(out), {a, b},
      [an, bn_, n, ca, cb, hw](detail::TensorNode& self) {
        const double* g = self.grad.data();
        if (an->track) {
          ensure_grad(*an);
          for (std::size_t bn = 0; bn < n; ++bn) {
            const double* src = g + bn * (ca + cb) * hw;
            double* dst = an->grad.data() + bn * ca * hw;
            for (std::size_t i = 0; i < ca * hw; ++i) dst[i] += src[i];
          }
        }
        if (bn_->track) {
          ensure_grad(*bn_);
          for (std::size_t bn = 0; bn < n; ++bn) {
            const double* src = g + bn * (ca + cb) * hw + ca * hw;
            double* dst = bn_->grad.data() + bn * cb * hw;
            for (std::size_t i = 0; i < cb * hw; ++i) dst[i] += src[i];
          }
        }
      });
}

DiffTensor hadamard_landmark(const DiffTensor& w, const DiffTensor& theta) {
  require_rank(w, 4, "hadamard_landmark", "w");
  require_rank(theta, 1, "hadamard_landmark", "theta");
  const std::size_t l = w.shape()[3];
  if (theta.shape()[0] != l) {
    throw DimensionError("hadamard_landmark: theta length " +
                         std::to_string(theta.shape()[0]) +
                         " does not match landmark axis (3) = " +
                         std::to_string(l));
  }
  const std::size_t rows = w.numel() / l;
  std::vector<double> out(w.numel());
  const double* wv = w.values().data();
  const double* tv = theta.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = wv + r * l;
    double* dst = out.data() + r * l;
    for (std::size_t i = 0; i < l; ++i) dst[i] = src[i] * tv[i];
  }
  auto* wn = w.node();
  auto* tn = theta.node();
  return make_op_result(
      w.shape(), std::move(out), {w, theta},
      [wn, tn, rows, l](detail::TensorNode& self) {
        const double* g = self.grad.data();
        if (wn->track) {
          ensure_grad(*wn);
          for (std::size_t r = 0; r < rows; ++r) {
            const double* grow = g + r * l;
            double* dst = wn->grad.data() + r * l;
            for (std::size_t i = 0; i < l; ++i)
              dst[i] += grow[i] * tn->values[i];
          }
        }
        if (tn->track) {
          ensure_grad(*tn);
          for (std::size_t r = 0; r < rows; ++r) {
            const double* grow = g + r * l;
            const double* wrow = wn->values.data() + r * l;
            for (std::size_t i = 0; i < l; ++i)
              tn->grad[i] += grow[i] * wrow[i];
          }
        }
      });
}

DiffTensor avg_pool2(const DiffTensor& x) {
  require_rank(x, 4, "avg_pool2", "input");
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  const std::size_t h = x.shape()[2], w = x.shape()[3];
  if (h % 2 != 0 || w % 2 != 0) {
    throw DimensionError("avg_pool2: spatial dims must be even, got " +
                         std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<double> out(n * c * oh * ow);
  const double* xv = x.values().data();
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* plane = xv + p * h * w;
    double* oplane = out.data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const double* r0 = plane + (2 * y) * w + 2 * xx;
        const double* r1 = r0 + w;
        oplane[y * ow + xx] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
  }
  auto* xn = x.node();
  return make_op_result(
      {n, c, oh, ow}, std::move(out), {x},
      [xn, n, c, h, w, oh, ow](detail::TensorNode& self) {
        if (!xn->track) return;
        ensure_grad(*xn);
        const double* g = self.grad.data();
        for (std::size_t p = 0; p < n * c; ++p) {
          double* plane = xn->grad.data() + p * h * w;
          const double* gplane = g + p * oh * ow;
          for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx) {
              const double q = 0.25 * gplane[y * ow + xx];
              double* r0 = plane + (2 * y) * w + 2 * xx;
              double* r1 = r0 + w;
              r0[0] += q;
              r0[1] += q;
              r1[0] += q;
              r1[1] += q;
            }
        }
      });
}

DiffTensor global_avg_pool(const DiffTensor& x) {
  require_rank(x, 4, "global_avg_pool", "input");
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  const std::size_t hw = x.shape()[2] * x.shape()[3];
  std::vector<double> out(n * c);
  const double* xv = x.values().data();
  const double inv = 1.0 / static_cast<double>(hw);
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* plane = xv + p * hw;
    double acc = 0.0;
    for (std::size_t i = 0; i < hw; ++i) acc += plane[i];
    out[p] = acc * inv;
  }
  auto* xn = x.node();
  return make_op_result({n, c}, std::move(out), {x},
                        [xn, hw, inv](detail::TensorNode& self) {
                          if (!xn->track) return;
                          ensure_grad(*xn);
                          for (std::size_t p = 0; p < self.grad.size(); ++p) {
                            const double q = self.grad[p] * inv;
                            double* plane = xn->grad.data() + p * hw;
                            for (std::size_t i = 0; i < hw; ++i) plane[i] += q;
                          }
                        });
}

DiffTensor sum_all(const DiffTensor& x) {
  const auto& xv = x.values();
  double acc = 0.0;
  for (double v : xv) acc += v;
  auto* xn = x.node();
  return make_op_result({1}, {acc}, {x}, [xn](detail::TensorNode& self) {
    if (!xn->track) return;
    ensure_grad(*xn);
    const double g = self.grad[0];
    for (double& v : xn->grad) v += g;
  });
}

// ---------------------------------------------------------------------------
// softmax cross entropy

std::vector<double> softmax_rows(const DiffTensor& logits) {
  require_rank(logits, 2, "softmax_rows", "logits");
  const std::size_t n = logits.shape()[0], c = logits.shape()[1];
  std::vector<double> probs(n * c);
  const double* lv = logits.values().data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = lv + r * c;
    double m = row[0];
    for (std::size_t i = 1; i < c; ++i) m = std::max(m, row[i]);
    double z = 0.0;
    double* prow = probs.data() + r * c;
    for (std::size_t i = 0; i < c; ++i) {
      prow[i] = std::exp(row[i] - m);
      z += prow[i];
    }
    const double inv = 1.0 / z;
    for (std::size_t i = 0; i < c; ++i) prow[i] *= inv;
  }
  return probs;
}

DiffTensor softmax_cross_entropy(const DiffTensor& logits,
                                 const std::vector<int>& labels) {
  require_rank(logits, 2, "softmax_cross_entropy", "logits");
  const std::size_t n = logits.shape()[0], c = logits.shape()[1];
  if (labels.size() != n) {
    throw DimensionError("softmax_cross_entropy: " +
                         std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(n));
  }
  for (int lab : labels) {
    if (lab < 0 || static_cast<std::size_t>(lab) >= c) {
      throw ValueError("softmax_cross_entropy: label " + std::to_string(lab) +
                       " out of range [0," + std::to_string(c) + ")");
    }
  }
  const double* lv = logits.values().data();
  double loss = 0.0;
  auto probs = std::make_shared<std::vector<double>>(n * c);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = lv + r * c;
    double m = row[0];
    for (std::size_t i = 1; i < c; ++i) m = std::max(m, row[i]);
    double z = 0.0;
    double* prow = probs->data() + r * c;
    for (std::size_t i = 0; i < c; ++i) {
      prow[i] = std::exp(row[i] - m);
      z += prow[i];
    }
    loss += std::log(z) - (row[labels[r]] - m);
    const double inv = 1.0 / z;
    for (std::size_t i = 0; i < c; ++i) prow[i] *= inv;
  }
  loss /= static_cast<double>(n);
  auto* ln = logits.node();
  auto labels_copy = std::make_shared<std::vector<int>>(labels);
  return make_op_result(
      {1}, {loss}, {logits},
      [ln, probs, labels_copy, n, c](detail::TensorNode& self) {
        if (!ln->track) return;
        ensure_grad(*ln);
        const double g = self.grad[0] / static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) {
          const double* prow = probs->data() + r * c;
          double* grow = ln->grad.data() + r * c;
          for (std::size_t i = 0; i < c; ++i) grow[i] += g * prow[i];
          grow[(*labels_copy)[r]] -= g;
        }
      });
}

// ---------------------------------------------------------------------------
// backward

void backward(const DiffTensor& loss) {
  if (!loss.defined()) throw ValueError("backward: undefined tensor");
  if (loss.numel() != 1) {
    throw DimensionError("backward: loss must be scalar, got shape " +
                         shape_str(loss.shape()));
  }
  detail::TensorNode* root = loss.node();
  if (!root->track) return;  // nothing requires grad

  // Iterative postorder DFS over tracked ancestors.
  std::vector<detail::TensorNode*> order;
  std::unordered_set<detail::TensorNode*> visited;
  std::vector<std::pair<detail::TensorNode*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (node->consumed) {
      throw ValueError(
          "backward: graph already consumed by a previous backward pass");
    }
    if (idx < node->parents.size()) {
      detail::TensorNode* p = node->parents[idx++].get();
      if (p->track && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  ensure_grad(*root);
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorNode* node = *it;
    if (node->backprop && !node->grad.empty()) node->backprop(*node);
  }
  for (detail::TensorNode* node : order) {
    node->consumed = true;
    if (!node->requires_grad) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

}  // namespace lip3d
