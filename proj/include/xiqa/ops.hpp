#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "xiqa/tensor.hpp"

namespace xiqa {

namespace detail {

template <class T>
bool wants_grad(const std::shared_ptr<Node<T>>& n) {
    return n->requires_grad;
}

inline bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Elementwise binary op where the smaller operand is either a single value or
// matches the trailing extents of the larger one.
template <class T, class Fwd, class DA, class DB>
Tensor<T> broadcast_binary(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd, DA da, DB db) {
    const bool a_big = a.numel() >= b.numel();
    const Tensor<T>& big = a_big ? a : b;
    const Tensor<T>& small = a_big ? b : a;
    if (small.numel() != 1 && !is_suffix(small.shape(), big.shape())) {
        throw Error(Errc::ShapeMismatch, std::string(name) + ": cannot broadcast " + shape_str(a.shape()) +
                                             " with " + shape_str(b.shape()));
    }
    const std::size_t n = big.numel();
    const std::size_t ns = small.numel();
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const T x = a_big ? av[i] : av[i % ns];
        const T y = a_big ? bv[i % ns] : bv[i];
        out[i] = fwd(x, y);
    }
    return Tensor<T>::from_op(big.shape(), std::move(out), {a, b}, [a_big, n, ns, da, db](Node<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        const auto& g = self.grad;
        const auto& av = pa->value;
        const auto& bv = pb->value;
        if (pa->requires_grad) {
            auto& ga = pa->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t ia = a_big ? i : i % ns;
                const std::size_t ib = a_big ? i % ns : i;
                ga[ia] += g[i] * da(av[ia], bv[ib]);
            }
        }
        if (pb->requires_grad) {
            auto& gb = pb->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t ia = a_big ? i : i % ns;
                const std::size_t ib = a_big ? i % ns : i;
                gb[ib] += g[i] * db(av[ia], bv[ib]);
            }
        }
    });
}

} // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::broadcast_binary(
        a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::broadcast_binary(
        a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::broadcast_binary(
        a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    std::vector<T> out(a.values().begin(), a.values().end());
    for (auto& v : out) v *= s;
    return Tensor<T>::from_op(a.shape(), std::move(out), {a}, [s](detail::Node<T>& self) {
        auto& p = self.parents[0];
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
    T total = T(0);
    for (T v : a.values()) total += v;
    return Tensor<T>::from_op(Shape{}, {total}, {a}, [](detail::Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (auto& v : g) v += self.grad[0];
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw Error(Errc::ShapeMismatch, "reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
    }
    return Tensor<T>::from_op(std::move(shape), a.vector(), {a}, [](detail::Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

/// Swaps two axes, materializing the permuted layout.
template <class T>
Tensor<T> transpose(const Tensor<T>& a, std::size_t axis0, std::size_t axis1) {
    const auto nd = a.ndim();
    if (axis0 >= nd || axis1 >= nd) {
        throw Error(Errc::AxisOutOfRange, "transpose axes out of range for " + shape_str(a.shape()));
    }
    Shape out_shape = a.shape();
    std::swap(out_shape[axis0], out_shape[axis1]);

    std::vector<std::size_t> in_strides(nd, 1);
    for (std::size_t i = nd; i-- > 1;) in_strides[i - 1] = in_strides[i] * a.shape()[i];
    std::vector<std::size_t> perm_strides = in_strides;
    std::swap(perm_strides[axis0], perm_strides[axis1]);

    // src[k] is the input offset feeding output element k
    const std::size_t n = a.numel();
    std::vector<std::size_t> src(n);
    std::vector<std::size_t> idx(nd, 0);
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t off = 0;
        for (std::size_t d = 0; d < nd; ++d) off += idx[d] * perm_strides[d];
        src[k] = off;
        for (std::size_t d = nd; d-- > 0;) {
            if (++idx[d] < out_shape[d]) break;
            idx[d] = 0;
        }
    }
    std::vector<T> out(n);
    const auto av = a.values();
    for (std::size_t k = 0; k < n; ++k) out[k] = av[src[k]];
    return Tensor<T>::from_op(std::move(out_shape), std::move(out), {a},
                              [src = std::move(src)](detail::Node<T>& self) {
                                  auto& g = self.parents[0]->ensure_grad();
                                  for (std::size_t k = 0; k < src.size(); ++k) g[src[k]] += self.grad[k];
                              });
}

/// Batched matrix product [..., m, k] x [..., k, n] with numpy-style
/// broadcasting over the leading batch extents.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() < 2 || b.ndim() < 2) {
        throw Error(Errc::ShapeMismatch, "matmul needs rank >= 2 operands");
    }
    const std::size_t m = a.shape()[a.ndim() - 2];
    const std::size_t k = a.shape()[a.ndim() - 1];
    const std::size_t kb = b.shape()[b.ndim() - 2];
    const std::size_t n = b.shape()[b.ndim() - 1];
    if (k != kb) {
        throw Error(Errc::ShapeMismatch, "matmul inner extents differ: " + shape_str(a.shape()) + " x " +
                                             shape_str(b.shape()));
    }
    const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
    const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
    const std::size_t nb = std::max(batch_a.size(), batch_b.size());
    Shape batch(nb, 1);
    for (std::size_t i = 0; i < nb; ++i) {
        const std::size_t ea = i + batch_a.size() >= nb ? batch_a[i + batch_a.size() - nb] : 1;
        const std::size_t eb = i + batch_b.size() >= nb ? batch_b[i + batch_b.size() - nb] : 1;
        if (ea != eb && ea != 1 && eb != 1) {
            throw Error(Errc::ShapeMismatch, "matmul batch extents not broadcastable: " + shape_str(a.shape()) +
                                                 " x " + shape_str(b.shape()));
        }
        batch[i] = std::max(ea, eb);
    }
    const std::size_t batch_count = shape_numel(batch);

    // Per output batch, the matrix index into a and b.
    std::vector<std::size_t> ia(batch_count), ib(batch_count);
    {
        std::vector<std::size_t> idx(nb, 0);
        for (std::size_t t = 0; t < batch_count; ++t) {
            std::size_t oa = 0, ob = 0;
            for (std::size_t d = 0; d < nb; ++d) {
                if (d + batch_a.size() >= nb) {
                    const std::size_t e = batch_a[d + batch_a.size() - nb];
                    oa = oa * e + (e == 1 ? 0 : idx[d]);
                }
                if (d + batch_b.size() >= nb) {
                    const std::size_t e = batch_b[d + batch_b.size() - nb];
                    ob = ob * e + (e == 1 ? 0 : idx[d]);
                }
            }
            ia[t] = oa;
            ib[t] = ob;
            for (std::size_t d = nb; d-- > 0;) {
                if (++idx[d] < batch[d]) break;
                idx[d] = 0;
            }
        }
    }

    Shape out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    std::vector<T> out(batch_count * m * n, T(0));
    const T* A = a.values().data();
    const T* B = b.values().data();
    for (std::size_t t = 0; t < batch_count; ++t) {
        const T* At = A + ia[t] * m * k;
        const T* Bt = B + ib[t] * k * n;
        T* Ct = out.data() + t * m * n;
        for (std::size_t i = 0; i < m; ++i) {
            T* crow = Ct + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const T aip = At[i * k + p];
                const T* brow = Bt + p * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
            }
        }
    }
    return Tensor<T>::from_op(
        std::move(out_shape), std::move(out), {a, b},
        [ia = std::move(ia), ib = std::move(ib), m, k, n](detail::Node<T>& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            const T* G = self.grad.data();
            const T* A = pa->value.data();
            const T* B = pb->value.data();
            if (pa->requires_grad) {
                T* GA = pa->ensure_grad().data();
                for (std::size_t t = 0; t < ia.size(); ++t) {
                    const T* Gt = G + t * m * n;
                    const T* Bt = B + ib[t] * k * n;
                    T* GAt = GA + ia[t] * m * k;
                    for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t p = 0; p < k; ++p) {
                            const T* grow = Gt + i * n;
                            const T* brow = Bt + p * n;
                            T acc = T(0);
                            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                            GAt[i * k + p] += acc;
                        }
                    }
                }
            }
            if (pb->requires_grad) {
                T* GB = pb->ensure_grad().data();
                for (std::size_t t = 0; t < ib.size(); ++t) {
                    const T* Gt = G + t * m * n;
                    const T* At = A + ia[t] * m * k;
                    T* GBt = GB + ib[t] * k * n;
                    for (std::size_t i = 0; i < m; ++i) {
                        const T* grow = Gt + i * n;
                        for (std::size_t p = 0; p < k; ++p) {
                            const T aip = At[i * k + p];
                            T* gbrow = GBt + p * n;
                            for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                        }
                    }
                }
            }
        });
}

/// Softmax along `axis`, with max-subtraction.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    if (axis >= x.ndim()) {
        throw Error(Errc::AxisOutOfRange, "softmax axis " + std::to_string(axis) + " for " + shape_str(x.shape()));
    }
    const auto& s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
    for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    const std::size_t len = s[axis];
    const auto xv = x.values();
    std::vector<T> out(x.numel());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T mx = xv[base];
            for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
            T total = T(0);
            for (std::size_t j = 0; j < len; ++j) {
                const T e = std::exp(xv[base + j * inner] - mx);
                out[base + j * inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
        }
    }
    return Tensor<T>::from_op(s, std::move(out), {x}, [outer, inner, len](detail::Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        const auto& y = self.value;
        const auto& gy = self.grad;
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * len * inner + in;
                T dot = T(0);
                for (std::size_t j = 0; j < len; ++j) dot += gy[base + j * inner] * y[base + j * inner];
                for (std::size_t j = 0; j < len; ++j) {
                    const std::size_t i = base + j * inner;
                    g[i] += y[i] * (gy[i] - dot);
                }
            }
        }
    });
}

/// Layer normalization over the last axis followed by an elementwise affine map.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
    if (x.ndim() == 0) throw Error(Errc::ShapeMismatch, "layer_norm on a scalar");
    const std::size_t d = x.shape().back();
    if (gain.numel() != d || bias.numel() != d) {
        throw Error(Errc::ShapeMismatch, "layer_norm gain/bias must have " + std::to_string(d) + " values");
    }
    const std::size_t rows = x.numel() / d;
    const auto xv = x.values();
    const auto gv = gain.values();
    const auto bv = bias.values();
    std::vector<T> out(x.numel());
    std::vector<T> xhat(x.numel());
    std::vector<T> rstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = xv.data() + r * d;
        T mu = T(0);
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<T>(d);
        T var = T(0);
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<T>(d);
        rstd[r] = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            const T h = (row[j] - mu) * rstd[r];
            xhat[r * d + j] = h;
            out[r * d + j] = h * gv[j] + bv[j];
        }
    }
    return Tensor<T>::from_op(
        x.shape(), std::move(out), {x, gain, bias},
        [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node<T>& self) {
            auto& px = self.parents[0];
            auto& pg = self.parents[1];
            auto& pb = self.parents[2];
            const auto& gy = self.grad;
            const auto& gv = pg->value;
            if (pg->requires_grad) {
                auto& gg = pg->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) gg[j] += gy[r * d + j] * xhat[r * d + j];
            }
            if (pb->requires_grad) {
                auto& gb = pb->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) gb[j] += gy[r * d + j];
            }
            if (px->requires_grad) {
                auto& gx = px->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r) {
                    T mean_dh = T(0), mean_dh_h = T(0);
                    for (std::size_t j = 0; j < d; ++j) {
                        const T dh = gy[r * d + j] * gv[j];
                        mean_dh += dh;
                        mean_dh_h += dh * xhat[r * d + j];
                    }
                    mean_dh /= static_cast<T>(d);
                    mean_dh_h /= static_cast<T>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        const T dh = gy[r * d + j] * gv[j];
                        gx[r * d + j] += rstd[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
                    }
                }
            }
        });
}

/// GELU, tanh approximation.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr T c = static_cast<T>(0.7978845608028654); // sqrt(2/pi)
    constexpr T k = static_cast<T>(0.044715);
    const auto xv = x.values();
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = xv[i];
        out[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + k * v * v * v)));
    }
    return Tensor<T>::from_op(x.shape(), std::move(out), {x}, [](detail::Node<T>& self) {
        auto& p = self.parents[0];
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T v = p->value[i];
            const T t = std::tanh(c * (v + k * v * v * v));
            const T dt = (T(1) - t * t) * c * (T(1) + T(3) * k * v * v);
            g[i] += self.grad[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * dt);
        }
    });
}

/// Stacks two rank-2 tensors along the first axis.
template <class T>
Tensor<T> concat_rows(const Tensor<T>& top, const Tensor<T>& bottom) {
    if (top.ndim() != 2 || bottom.ndim() != 2 || top.dim(1) != bottom.dim(1)) {
        throw Error(Errc::ShapeMismatch, "concat_rows " + shape_str(top.shape()) + " with " + shape_str(bottom.shape()));
    }
    std::vector<T> out;
    out.reserve(top.numel() + bottom.numel());
    out.insert(out.end(), top.values().begin(), top.values().end());
    out.insert(out.end(), bottom.values().begin(), bottom.values().end());
    const std::size_t split = top.numel();
    return Tensor<T>::from_op(Shape{top.dim(0) + bottom.dim(0), top.dim(1)}, std::move(out), {top, bottom},
                              [split](detail::Node<T>& self) {
                                  auto& pt = self.parents[0];
                                  auto& pb = self.parents[1];
                                  if (pt->requires_grad) {
                                      auto& g = pt->ensure_grad();
                                      for (std::size_t i = 0; i < split; ++i) g[i] += self.grad[i];
                                  }
                                  if (pb->requires_grad) {
                                      auto& g = pb->ensure_grad();
                                      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[split + i];
                                  }
                              });
}

/// Rows [begin, end) of a rank-2 tensor.
template <class T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end) {
    if (a.ndim() != 2 || begin > end || end > a.dim(0)) {
        throw Error(Errc::ShapeMismatch, "slice_rows out of range for " + shape_str(a.shape()));
    }
    const std::size_t w = a.dim(1);
    std::vector<T> out(a.values().begin() + begin * w, a.values().begin() + end * w);
    return Tensor<T>::from_op(Shape{end - begin, w}, std::move(out), {a}, [begin, w](detail::Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * w + i] += self.grad[i];
    });
}

/// Mean of squared differences. `target` is treated as a constant.
template <class T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape() != target.shape()) {
        throw Error(Errc::ShapeMismatch, "mse_loss " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    }
    const auto pv = pred.values();
    const auto tv = target.values();
    T acc = T(0);
    for (std::size_t i = 0; i < pv.size(); ++i) acc += (pv[i] - tv[i]) * (pv[i] - tv[i]);
    const T n = static_cast<T>(pv.size());
    return Tensor<T>::from_op(Shape{}, {acc / n}, {pred}, [target, n](detail::Node<T>& self) {
        auto& p = self.parents[0];
        auto& g = p->ensure_grad();
        const auto tv = target.values();
        const T s = T(2) * self.grad[0] / n;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * (p->value[i] - tv[i]);
    });
}

/// Mean absolute difference. The subgradient at an exact tie is zero.
template <class T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape() != target.shape()) {
        throw Error(Errc::ShapeMismatch, "l1_loss " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    }
    const auto pv = pred.values();
    const auto tv = target.values();
    T acc = T(0);
    for (std::size_t i = 0; i < pv.size(); ++i) acc += std::abs(pv[i] - tv[i]);
    const T n = static_cast<T>(pv.size());
    return Tensor<T>::from_op(Shape{}, {acc / n}, {pred}, [target, n](detail::Node<T>& self) {
        auto& p = self.parents[0];
        auto& g = p->ensure_grad();
        const auto tv = target.values();
        const T s = self.grad[0] / n;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T diff = p->value[i] - tv[i];
            g[i] += diff > T(0) ? s : (diff < T(0) ? -s : T(0));
        }
    });
}

/// Mean absolute error as a plain number; not part of any trace.
template <class T>
T mae_metric(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape() != target.shape()) {
        throw Error(Errc::ShapeMismatch, "mae " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    }
    const auto pv = pred.values();
    const auto tv = target.values();
    T acc = T(0);
    for (std::size_t i = 0; i < pv.size(); ++i) acc += std::abs(pv[i] - tv[i]);
    return acc / static_cast<T>(pv.size());
}

} // namespace xiqa
