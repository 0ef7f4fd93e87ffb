#pragma once

#include <cmath>
#include <vector>

#include "flux/tensor.hpp"

namespace flux {

namespace detail {
template <typename S>
void check_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}
template <typename S>
bool all_finite(const typename TensorNode<S>::Vec& v) {
  for (Index i = 0; i < v.size(); ++i)
    if (!std::isfinite(static_cast<double>(v[i]))) return false;
  return true;
}
}  // namespace detail

// ---- linear algebra ----

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: incompatible shapes " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  typename Tensor<S>::Vec out(m * n);
  typename Tensor<S>::MatMap c(out.data(), m, n);
  c.noalias() = a.mat() * b.mat();
  auto an = a.node(), bn = b.node();
  return make_op<S>(
      {m, n}, std::move(out), {a, b}, [an, bn, m, k, n](TensorNode<S>& o) {
        using M = typename Tensor<S>::MatMap;
        using CM = typename Tensor<S>::CMatMap;
        CM g(o.grad.data(), m, n);
        CM av(an->value.data(), m, k);
        CM bv(bn->value.data(), k, n);
        M(an->grad.data(), m, k).noalias() += g * bv.transpose();
        M(bn->grad.data(), k, n).noalias() += av.transpose() * g;
      });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
  if (a.rank() != 2)
    throw std::invalid_argument("transpose: expected rank 2, got " +
                                shape_str(a.shape()));
  const Index m = a.dim(0), n = a.dim(1);
  typename Tensor<S>::Vec out(m * n);
  typename Tensor<S>::MatMap(out.data(), n, m) = a.mat().transpose();
  auto an = a.node();
  return make_op<S>({n, m}, std::move(out), {a}, [an, m, n](TensorNode<S>& o) {
    typename Tensor<S>::CMatMap g(o.grad.data(), n, m);
    typename Tensor<S>::MatMap(an->grad.data(), m, n) += g.transpose();
  });
}

// ---- elementwise ----

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("add", a, b);
  auto an = a.node(), bn = b.node();
  return make_op<S>(a.shape(), a.value() + b.value(), {a, b},
                    [an, bn](TensorNode<S>& o) {
                      an->grad += o.grad;
                      bn->grad += o.grad;
                    });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("mul", a, b);
  auto an = a.node(), bn = b.node();
  return make_op<S>(a.shape(), a.value().cwiseProduct(b.value()), {a, b},
                    [an, bn](TensorNode<S>& o) {
                      an->grad += o.grad.cwiseProduct(bn->value);
                      bn->grad += o.grad.cwiseProduct(an->value);
                    });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  auto an = a.node();
  return make_op<S>(a.shape(), a.value() * c, {a},
                    [an, c](TensorNode<S>& o) { an->grad += o.grad * c; });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return add(a, scale(b, S(-1)));
}

// matrix + broadcast row vector (bias add)
template <typename S>
Tensor<S> add_rowvec(const Tensor<S>& a, const Tensor<S>& v) {
  if (a.rank() != 2 || v.rank() != 1 || v.dim(0) != a.dim(1))
    throw std::invalid_argument("add_rowvec: shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(v.shape()));
  const Index m = a.dim(0), n = a.dim(1);
  typename Tensor<S>::Vec out(m * n);
  typename Tensor<S>::MatMap o(out.data(), m, n);
  o = a.mat();
  o.rowwise() += v.value().transpose();
  auto an = a.node(), vn = v.node();
  return make_op<S>({m, n}, std::move(out), {a, v},
                    [an, vn, m, n](TensorNode<S>& od) {
                      typename Tensor<S>::CMatMap g(od.grad.data(), m, n);
                      an->grad += od.grad;
                      vn->grad += g.colwise().sum().transpose();
                    });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
  typename Tensor<S>::Vec out(1);
  out[0] = a.value().sum();
  auto an = a.node();
  return make_op<S>({1}, std::move(out), {a}, [an](TensorNode<S>& o) {
    an->grad.array() += o.grad[0];
  });
}

// mean over one axis of an arbitrary-rank tensor
template <typename S>
Tensor<S> mean_axis(const Tensor<S>& a, std::size_t axis) {
  if (axis >= a.rank())
    throw std::invalid_argument("mean_axis: axis " + std::to_string(axis) +
                                " out of range for " + shape_str(a.shape()));
  const auto& sh = a.shape();
  Index outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= sh[i];
  for (std::size_t i = axis + 1; i < sh.size(); ++i) inner *= sh[i];
  const Index n = sh[axis];
  std::vector<Index> osh;
  for (std::size_t i = 0; i < sh.size(); ++i)
    if (i != axis) osh.push_back(sh[i]);
  if (osh.empty()) osh.push_back(1);
  typename Tensor<S>::Vec out = Tensor<S>::Vec::Zero(outer * inner);
  for (Index o = 0; o < outer; ++o)
    for (Index j = 0; j < n; ++j)
      for (Index i = 0; i < inner; ++i)
        out[o * inner + i] += a.value()[(o * n + j) * inner + i];
  out /= static_cast<S>(n);
  auto an = a.node();
  return make_op<S>(std::move(osh), std::move(out), {a},
                    [an, outer, inner, n](TensorNode<S>& od) {
                      const S inv = S(1) / static_cast<S>(n);
                      for (Index o = 0; o < outer; ++o)
                        for (Index j = 0; j < n; ++j)
                          for (Index i = 0; i < inner; ++i)
                            an->grad[(o * n + j) * inner + i] +=
                                od.grad[o * inner + i] * inv;
                    });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, std::vector<Index> shape) {
  if (Tensor<S>::numel(shape) != a.size())
    throw std::invalid_argument("reshape: cannot view " +
                                shape_str(a.shape()) + " as " +
                                shape_str(shape));
  auto an = a.node();
  return make_op<S>(std::move(shape), a.value(), {a},
                    [an](TensorNode<S>& o) { an->grad += o.grad; });
}

// ---- nonlinearities ----

template <typename S>
Tensor<S> softmax(const Tensor<S>& a) {
  if (a.rank() < 1)
    throw std::invalid_argument("softmax: rank-0 input");
  if (!detail::all_finite<S>(a.value()))
    throw std::invalid_argument("softmax: non-finite input");
  const Index d = a.shape().back();
  const Index rows = a.size() / d;
  typename Tensor<S>::Vec out(a.size());
  for (Index r = 0; r < rows; ++r) {
    auto x = a.value().segment(r * d, d);
    S mx = x.maxCoeff();
    auto y = out.segment(r * d, d);
    y = (x.array() - mx).exp();
    y /= y.sum();
  }
  auto an = a.node();
  return make_op<S>(a.shape(), std::move(out), {a},
                    [an, rows, d](TensorNode<S>& o) {
                      for (Index r = 0; r < rows; ++r) {
                        auto y = o.value.segment(r * d, d);
                        auto g = o.grad.segment(r * d, d);
                        S dot = y.dot(g);
                        an->grad.segment(r * d, d).array() +=
                            y.array() * (g.array() - dot);
                      }
                    });
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& a) {
  typename Tensor<S>::Vec out(a.size());
  for (Index i = 0; i < a.size(); ++i) {
    S x = a.value()[i];
    out[i] = S(0.5) * x * (S(1) + std::erf(x / std::sqrt(S(2))));
  }
  auto an = a.node();
  return make_op<S>(a.shape(), std::move(out), {a}, [an](TensorNode<S>& o) {
    const S inv_sqrt2pi = S(0.3989422804014326779);
    for (Index i = 0; i < o.grad.size(); ++i) {
      S x = an->value[i];
      S cdf = S(0.5) * (S(1) + std::erf(x / std::sqrt(S(2))));
      S pdf = inv_sqrt2pi * std::exp(S(-0.5) * x * x);
      an->grad[i] += o.grad[i] * (cdf + x * pdf);
    }
  });
}

// layer normalization over the last axis with learnable scale/shift
template <typename S>
Tensor<S> layernorm(const Tensor<S>& x, const Tensor<S>& gamma,
                    const Tensor<S>& beta, S eps = S(1e-6)) {
  const Index d = x.shape().back();
  if (gamma.size() != d || beta.size() != d)
    throw std::invalid_argument("layernorm: scale/shift size mismatch " +
                                shape_str(gamma.shape()) + "/" +
                                shape_str(beta.shape()) + " vs last dim " +
                                std::to_string(d));
  const Index rows = x.size() / d;
  typename Tensor<S>::Vec out(x.size());
  typename Tensor<S>::Vec xhat(x.size());
  typename Tensor<S>::Vec inv_std(rows);
  for (Index r = 0; r < rows; ++r) {
    auto xr = x.value().segment(r * d, d);
    S mu = xr.mean();
    S var = (xr.array() - mu).square().sum() / static_cast<S>(d);
    S is = S(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    xhat.segment(r * d, d) = (xr.array() - mu) * is;
    out.segment(r * d, d) =
        xhat.segment(r * d, d).cwiseProduct(gamma.value()) + beta.value();
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return make_op<S>(
      x.shape(), std::move(out), {x, gamma, beta},
      [xn, gn, bn, rows, d, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](TensorNode<S>& o) {
        for (Index r = 0; r < rows; ++r) {
          auto g = o.grad.segment(r * d, d);
          auto xh = xhat.segment(r * d, d);
          typename Tensor<S>::Vec dxhat = g.cwiseProduct(gn->value);
          S m1 = dxhat.mean();
          S m2 = dxhat.cwiseProduct(xh).mean();
          xn->grad.segment(r * d, d).array() +=
              inv_std[r] * (dxhat.array() - m1 - xh.array() * m2);
          gn->grad += g.cwiseProduct(xh);
          bn->grad += g;
        }
      });
}

// L2 normalization along the last axis
template <typename S>
Tensor<S> l2_normalize(const Tensor<S>& x) {
  const Index d = x.shape().back();
  const Index rows = x.size() / d;
  typename Tensor<S>::Vec out(x.size());
  typename Tensor<S>::Vec norms(rows);
  for (Index r = 0; r < rows; ++r) {
    auto xr = x.value().segment(r * d, d);
    S n = std::max(xr.norm(), S(1e-12));
    norms[r] = n;
    out.segment(r * d, d) = xr / n;
  }
  auto xn = x.node();
  return make_op<S>(x.shape(), std::move(out), {x},
                    [xn, rows, d, norms = std::move(norms)](TensorNode<S>& o) {
                      for (Index r = 0; r < rows; ++r) {
                        auto y = o.value.segment(r * d, d);
                        auto g = o.grad.segment(r * d, d);
                        S dot = y.dot(g);
                        xn->grad.segment(r * d, d).array() +=
                            (g.array() - y.array() * dot) / norms[r];
                      }
                    });
}

// ---- indexing and reshaping along the token axis ----

template <typename S>
Tensor<S> gather_rows(const Tensor<S>& x, const std::vector<Index>& idx) {
  if (x.rank() != 2)
    throw std::invalid_argument("gather_rows: expected rank 2, got " +
                                shape_str(x.shape()));
  const Index n = x.dim(0), d = x.dim(1);
  for (Index i : idx)
    if (i < 0 || i >= n)
      throw std::invalid_argument("gather_rows: index " + std::to_string(i) +
                                  " out of range [0," + std::to_string(n) + ")");
  const Index k = static_cast<Index>(idx.size());
  typename Tensor<S>::Vec out(k * d);
  for (Index r = 0; r < k; ++r)
    out.segment(r * d, d) = x.value().segment(idx[static_cast<std::size_t>(r)] * d, d);
  auto xn = x.node();
  return make_op<S>({k, d}, std::move(out), {x},
                    [xn, d, idx](TensorNode<S>& o) {
                      for (std::size_t r = 0; r < idx.size(); ++r)
                        xn->grad.segment(idx[r] * d, d) +=
                            o.grad.segment(static_cast<Index>(r) * d, d);
                    });
}

template <typename S>
Tensor<S> concat_rows(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw std::invalid_argument("concat_rows: shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  const Index m = a.dim(0), n = b.dim(0), d = a.dim(1);
  typename Tensor<S>::Vec out(a.size() + b.size());
  out.head(a.size()) = a.value();
  out.tail(b.size()) = b.value();
  auto an = a.node(), bn = b.node();
  return make_op<S>({m + n, d}, std::move(out), {a, b},
                    [an, bn](TensorNode<S>& o) {
                      an->grad += o.grad.head(an->value.size());
                      bn->grad += o.grad.tail(bn->value.size());
                    });
}

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, Index start, Index len) {
  if (x.rank() != 2 || start < 0 || start + len > x.dim(1))
    throw std::invalid_argument("slice_cols: [" + std::to_string(start) + "," +
                                std::to_string(start + len) +
                                ") out of range for " + shape_str(x.shape()));
  const Index m = x.dim(0), n = x.dim(1);
  typename Tensor<S>::Vec out(m * len);
  typename Tensor<S>::MatMap(out.data(), m, len) =
      x.mat().middleCols(start, len);
  auto xn = x.node();
  return make_op<S>({m, len}, std::move(out), {x},
                    [xn, m, n, start, len](TensorNode<S>& o) {
                      typename Tensor<S>::CMatMap g(o.grad.data(), m, len);
                      typename Tensor<S>::MatMap(xn->grad.data(), m, n)
                          .middleCols(start, len) += g;
                    });
}

template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
  const Index m = parts[0].dim(0);
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != m)
      throw std::invalid_argument("concat_cols: row mismatch " +
                                  shape_str(parts[0].shape()) + " vs " +
                                  shape_str(p.shape()));
    total += p.dim(1);
  }
  typename Tensor<S>::Vec out(m * total);
  typename Tensor<S>::MatMap o(out.data(), m, total);
  Index col = 0;
  for (const auto& p : parts) {
    o.middleCols(col, p.dim(1)) = p.mat();
    col += p.dim(1);
  }
  std::vector<Index> widths;
  for (const auto& p : parts) widths.push_back(p.dim(1));
  return make_op<S>({m, total}, std::move(out), parts,
                    [m, total, widths](TensorNode<S>& o) {
                      typename Tensor<S>::CMatMap g(o.grad.data(), m, total);
                      Index col = 0;
                      for (std::size_t i = 0; i < widths.size(); ++i) {
                        auto pn = o.parents[i];
                        typename Tensor<S>::MatMap(pn->grad.data(), m,
                                                   widths[i]) +=
                            g.middleCols(col, widths[i]);
                        col += widths[i];
                      }
                    });
}

// ---- grid ops on (T,H,W,C) tensors ----

// depthwise 3-D convolution, stride 1, zero padding, odd kernel dims
template <typename S>
Tensor<S> dwconv3d(const Tensor<S>& x, const Tensor<S>& kernel) {
  if (x.rank() != 4)
    throw std::invalid_argument("dwconv3d: expected (T,H,W,C) input, got " +
                                shape_str(x.shape()));
  if (kernel.rank() != 4 || kernel.shape()[3] != x.shape()[3])
    throw std::invalid_argument("dwconv3d: kernel " + shape_str(kernel.shape()) +
                                " incompatible with input " +
                                shape_str(x.shape()));
  const Index T = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const Index kt = kernel.dim(0), kh = kernel.dim(1), kw = kernel.dim(2);
  if (kt % 2 == 0 || kh % 2 == 0 || kw % 2 == 0)
    throw std::invalid_argument("dwconv3d: kernel dims must be odd, got " +
                                shape_str(kernel.shape()));
  const Index ct = kt / 2, ch = kh / 2, cw = kw / 2;
  auto xi = [H, W, C](Index t, Index h, Index w, Index c) {
    return ((t * H + h) * W + w) * C + c;
  };
  auto ki = [kh, kw, C](Index t, Index h, Index w, Index c) {
    return ((t * kh + h) * kw + w) * C + c;
  };
  typename Tensor<S>::Vec out = Tensor<S>::Vec::Zero(x.size());
  for (Index t = 0; t < T; ++t)
    for (Index h = 0; h < H; ++h)
      for (Index w = 0; w < W; ++w)
        for (Index dt = 0; dt < kt; ++dt) {
          Index st = t + dt - ct;
          if (st < 0 || st >= T) continue;
          for (Index dh = 0; dh < kh; ++dh) {
            Index sh = h + dh - ch;
            if (sh < 0 || sh >= H) continue;
            for (Index dw = 0; dw < kw; ++dw) {
              Index sw = w + dw - cw;
              if (sw < 0 || sw >= W) continue;
              for (Index c = 0; c < C; ++c)
                out[xi(t, h, w, c)] +=
                    x.value()[xi(st, sh, sw, c)] * kernel.value()[ki(dt, dh, dw, c)];
            }
          }
        }
  auto xn = x.node(), kn = kernel.node();
  return make_op<S>(
      x.shape(), std::move(out), {x, kernel},
      [xn, kn, T, H, W, C, kt, kh, kw, ct, ch, cw, xi, ki](TensorNode<S>& o) {
        for (Index t = 0; t < T; ++t)
          for (Index h = 0; h < H; ++h)
            for (Index w = 0; w < W; ++w)
              for (Index dt = 0; dt < kt; ++dt) {
                Index st = t + dt - ct;
                if (st < 0 || st >= T) continue;
                for (Index dh = 0; dh < kh; ++dh) {
                  Index sh = h + dh - ch;
                  if (sh < 0 || sh >= H) continue;
                  for (Index dw = 0; dw < kw; ++dw) {
                    Index sw = w + dw - cw;
                    if (sw < 0 || sw >= W) continue;
                    for (Index c = 0; c < C; ++c) {
                      S g = o.grad[xi(t, h, w, c)];
                      xn->grad[xi(st, sh, sw, c)] +=
                          g * kn->value[ki(dt, dh, dw, c)];
                      kn->grad[ki(dt, dh, dw, c)] +=
                          g * xn->value[xi(st, sh, sw, c)];
                    }
                  }
                }
              }
      });
}

// trilinear resize of a (T,H,W,C) grid, align-corners-true
template <typename S>
Tensor<S> trilinear_resize(const Tensor<S>& x, Index T2, Index H2, Index W2) {
  if (x.rank() != 4)
    throw std::invalid_argument("trilinear_resize: expected (T,H,W,C), got " +
                                shape_str(x.shape()));
  if (T2 < 1 || H2 < 1 || W2 < 1)
    throw std::invalid_argument("trilinear_resize: invalid target size");
  const Index T = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  auto src = [](Index out, Index n_out, Index n_in) -> double {
    if (n_out <= 1) return 0.0;
    return static_cast<double>(out) * static_cast<double>(n_in - 1) /
           static_cast<double>(n_out - 1);
  };
  struct Lin {
    Index i0, i1;
    S w0, w1;
  };
  auto make_lin = [&](Index out, Index n_out, Index n_in) -> Lin {
    double p = src(out, n_out, n_in);
    Index i0 = static_cast<Index>(std::floor(p));
    if (i0 > n_in - 1) i0 = n_in - 1;
    Index i1 = std::min(i0 + 1, n_in - 1);
    S f = static_cast<S>(p - static_cast<double>(i0));
    return {i0, i1, S(1) - f, f};
  };
  std::vector<Lin> lt(T2), lh(H2), lw(W2);
  for (Index i = 0; i < T2; ++i) lt[i] = make_lin(i, T2, T);
  for (Index i = 0; i < H2; ++i) lh[i] = make_lin(i, H2, H);
  for (Index i = 0; i < W2; ++i) lw[i] = make_lin(i, W2, W);
  auto xi = [H, W, C](Index t, Index h, Index w) {
    return ((t * H + h) * W + w) * C;
  };
  typename Tensor<S>::Vec out = Tensor<S>::Vec::Zero(T2 * H2 * W2 * C);
  Index oi = 0;
  for (Index t = 0; t < T2; ++t)
    for (Index h = 0; h < H2; ++h)
      for (Index w = 0; w < W2; ++w, oi += C) {
        const Lin &a = lt[t], &b = lh[h], &c = lw[w];
        for (int dt = 0; dt < 2; ++dt)
          for (int dh = 0; dh < 2; ++dh)
            for (int dw = 0; dw < 2; ++dw) {
              S wgt = (dt ? a.w1 : a.w0) * (dh ? b.w1 : b.w0) *
                      (dw ? c.w1 : c.w0);
              if (wgt == S(0)) continue;
              out.segment(oi, C) +=
                  wgt * x.value().segment(
                            xi(dt ? a.i1 : a.i0, dh ? b.i1 : b.i0,
                               dw ? c.i1 : c.i0),
                            C);
            }
      }
  auto xn = x.node();
  return make_op<S>(
      {T2, H2, W2, C}, std::move(out), {x},
      [xn, T2, H2, W2, C, lt = std::move(lt), lh = std::move(lh),
       lw = std::move(lw), xi](TensorNode<S>& o) {
        Index oi = 0;
        for (Index t = 0; t < T2; ++t)
          for (Index h = 0; h < H2; ++h)
            for (Index w = 0; w < W2; ++w, oi += C) {
              const Lin &a = lt[t], &b = lh[h], &c = lw[w];
              for (int dt = 0; dt < 2; ++dt)
                for (int dh = 0; dh < 2; ++dh)
                  for (int dw = 0; dw < 2; ++dw) {
                    S wgt = (dt ? a.w1 : a.w0) * (dh ? b.w1 : b.w0) *
                            (dw ? c.w1 : c.w0);
                    if (wgt == S(0)) continue;
                    xn->grad.segment(
                        xi(dt ? a.i1 : a.i0, dh ? b.i1 : b.i0,
                           dw ? c.i1 : c.i0),
                        C) += wgt * o.grad.segment(oi, C);
                  }
            }
      });
}

// ---- losses ----

// mean smooth-L1 over all elements; quadratic below beta, linear above
template <typename S>
Tensor<S> smooth_l1(const Tensor<S>& pred, const Tensor<S>& target,
                    S beta = S(1)) {
  detail::check_same_shape("smooth_l1", pred, target);
  if (pred.size() == 0)
    throw std::invalid_argument("smooth_l1: empty input");
  const Index m = pred.size();
  S total = S(0);
  for (Index i = 0; i < m; ++i) {
    S d = pred.value()[i] - target.value()[i];
    S ad = std::abs(d);
    total += ad < beta ? S(0.5) * d * d / beta : ad - S(0.5) * beta;
  }
  typename Tensor<S>::Vec out(1);
  out[0] = total / static_cast<S>(m);
  auto pn = pred.node(), tn = target.node();
  return make_op<S>({1}, std::move(out), {pred, target},
                    [pn, tn, m, beta](TensorNode<S>& o) {
                      const S g = o.grad[0] / static_cast<S>(m);
                      for (Index i = 0; i < m; ++i) {
                        S d = pn->value[i] - tn->value[i];
                        S gd = std::abs(d) < beta
                                   ? d / beta
                                   : (d > 0 ? S(1) : S(-1));
                        pn->grad[i] += g * gd;
                        tn->grad[i] -= g * gd;
                      }
                    });
}

// mean cross-entropy of (B,C) logits against integer labels
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits,
                        const std::vector<Index>& labels) {
  if (logits.rank() != 2 ||
      logits.dim(0) != static_cast<Index>(labels.size()))
    throw std::invalid_argument("cross_entropy: logits " +
                                shape_str(logits.shape()) + " vs " +
                                std::to_string(labels.size()) + " labels");
  if (!detail::all_finite<S>(logits.value()))
    throw std::invalid_argument("cross_entropy: non-finite logits");
  const Index b = logits.dim(0), c = logits.dim(1);
  for (Index lbl : labels)
    if (lbl < 0 || lbl >= c)
      throw std::invalid_argument("cross_entropy: label " +
                                  std::to_string(lbl) + " out of range [0," +
                                  std::to_string(c) + ")");
  typename Tensor<S>::Vec probs(b * c);
  S total = S(0);
  for (Index r = 0; r < b; ++r) {
    auto z = logits.value().segment(r * c, c);
    S mx = z.maxCoeff();
    auto p = probs.segment(r * c, c);
    p = (z.array() - mx).exp();
    S denom = p.sum();
    p /= denom;
    total += std::log(denom) + mx - z[labels[static_cast<std::size_t>(r)]];
  }
  typename Tensor<S>::Vec out(1);
  out[0] = total / static_cast<S>(b);
  auto ln = logits.node();
  return make_op<S>({1}, std::move(out), {logits},
                    [ln, b, c, labels, probs = std::move(probs)](TensorNode<S>& o) {
                      const S g = o.grad[0] / static_cast<S>(b);
                      for (Index r = 0; r < b; ++r) {
                        ln->grad.segment(r * c, c) += g * probs.segment(r * c, c);
                        ln->grad[r * c + labels[static_cast<std::size_t>(r)]] -= g;
                      }
                    });
}

}  // namespace flux
