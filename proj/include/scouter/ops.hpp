#pragma once

// Differentiable operations on BasicTensor. Every op computes its value
// eagerly and, when recorded on the active tape, registers a rule that maps the
// output gradient back onto its inputs.

#include "scouter/tensor.hpp"

#include <cmath>
#include <span>
#include <string>

namespace scouter {

namespace detail {

template <typename Scalar>
using Vec = typename TensorNode<Scalar>::Vector;

template <typename Scalar>
Eigen::Map<const Vec<Scalar>> flat(const RowMatrix<Scalar>& m) {
  return Eigen::Map<const Vec<Scalar>>(m.data(), m.size());
}

template <typename Scalar>
Eigen::Map<const RowMatrix<Scalar>> as_matrix(const Vec<Scalar>& v, Index rows, Index cols) {
  return Eigen::Map<const RowMatrix<Scalar>>(v.data(), rows, cols);
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

inline void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  require(a == b, std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

template <typename Scalar>
Scalar stable_sigmoid(Scalar x) {
  if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar ex = std::exp(x);
  return ex / (Scalar(1) + ex);
}

}  // namespace detail

// --- linear algebra --------------------------------------------------------

template <typename Scalar>
BasicTensor<Scalar> matmul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require(a.rank() == 2 && b.rank() == 2, "matmul: expects matrices");
  const Index m = a.dim(0), k = a.dim(1), p = b.dim(1);
  detail::require(b.dim(0) == k, "matmul: inner dimensions " + to_string(a.shape()) + " x " + to_string(b.shape()));
  RowMatrix<Scalar> out = a.matrix(m, k) * b.matrix(k, p);
  return detail::make_result<Scalar>(
      "matmul", Shape{m, p}, detail::flat(out), {&a, &b},
      [an = a.node(), bn = b.node(), m, k, p](const detail::Vec<Scalar>& g) {
        const auto G = detail::as_matrix<Scalar>(g, m, p);
        if (an->requires_grad) {
          RowMatrix<Scalar> ga = G * detail::as_matrix<Scalar>(bn->value, k, p).transpose();
          detail::accumulate(an, detail::flat(ga));
        }
        if (bn->requires_grad) {
          RowMatrix<Scalar> gb = detail::as_matrix<Scalar>(an->value, m, k).transpose() * G;
          detail::accumulate(bn, detail::flat(gb));
        }
      });
}

/// a · bᵀ for a: [m×k], b: [p×k].
template <typename Scalar>
BasicTensor<Scalar> matmul_nt(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require(a.rank() == 2 && b.rank() == 2, "matmul_nt: expects matrices");
  const Index m = a.dim(0), k = a.dim(1), p = b.dim(0);
  detail::require(b.dim(1) == k, "matmul_nt: inner dimensions " + to_string(a.shape()) + " x " + to_string(b.shape()) + "^T");
  RowMatrix<Scalar> out = a.matrix(m, k) * b.matrix(p, k).transpose();
  return detail::make_result<Scalar>(
      "matmul_nt", Shape{m, p}, detail::flat(out), {&a, &b},
      [an = a.node(), bn = b.node(), m, k, p](const detail::Vec<Scalar>& g) {
        const auto G = detail::as_matrix<Scalar>(g, m, p);
        if (an->requires_grad) {
          RowMatrix<Scalar> ga = G * detail::as_matrix<Scalar>(bn->value, p, k);
          detail::accumulate(an, detail::flat(ga));
        }
        if (bn->requires_grad) {
          RowMatrix<Scalar> gb = G.transpose() * detail::as_matrix<Scalar>(an->value, m, k);
          detail::accumulate(bn, detail::flat(gb));
        }
      });
}

/// Batched product: a [B×m×k], b [B×k×p] (or b [B×p×k] when transpose_b).
template <typename Scalar>
BasicTensor<Scalar> bmm(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b, bool transpose_b = false) {
  detail::require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0), "bmm: expects equal-batch rank-3 tensors");
  const Index batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const Index p = transpose_b ? b.dim(1) : b.dim(2);
  detail::require((transpose_b ? b.dim(2) : b.dim(1)) == k,
                  "bmm: inner dimensions " + to_string(a.shape()) + " x " + to_string(b.shape()));
  detail::Vec<Scalar> out(batch * m * p);
  const Index bk = transpose_b ? p : k, bc = transpose_b ? k : p;
  for (Index i = 0; i < batch; ++i) {
    Eigen::Map<const RowMatrix<Scalar>> A(a.value().data() + i * m * k, m, k);
    Eigen::Map<const RowMatrix<Scalar>> B(b.value().data() + i * bk * bc, bk, bc);
    Eigen::Map<RowMatrix<Scalar>> O(out.data() + i * m * p, m, p);
    if (transpose_b)
      O.noalias() = A * B.transpose();
    else
      O.noalias() = A * B;
  }
  return detail::make_result<Scalar>(
      "bmm", Shape{batch, m, p}, std::move(out), {&a, &b},
      [an = a.node(), bn = b.node(), batch, m, k, p, bk, bc, transpose_b](const detail::Vec<Scalar>& g) {
        detail::Vec<Scalar> ga, gb;
        if (an->requires_grad) ga = detail::Vec<Scalar>::Zero(an->value.size());
        if (bn->requires_grad) gb = detail::Vec<Scalar>::Zero(bn->value.size());
        for (Index i = 0; i < batch; ++i) {
          Eigen::Map<const RowMatrix<Scalar>> G(g.data() + i * m * p, m, p);
          Eigen::Map<const RowMatrix<Scalar>> A(an->value.data() + i * m * k, m, k);
          Eigen::Map<const RowMatrix<Scalar>> B(bn->value.data() + i * bk * bc, bk, bc);
          if (an->requires_grad) {
            Eigen::Map<RowMatrix<Scalar>> GA(ga.data() + i * m * k, m, k);
            if (transpose_b)
              GA.noalias() = G * B;
            else
              GA.noalias() = G * B.transpose();
          }
          if (bn->requires_grad) {
            Eigen::Map<RowMatrix<Scalar>> GB(gb.data() + i * bk * bc, bk, bc);
            if (transpose_b)
              GB.noalias() = G.transpose() * A;
            else
              GB.noalias() = A.transpose() * G;
          }
        }
        if (an->requires_grad) detail::accumulate(an, ga);
        if (bn->requires_grad) detail::accumulate(bn, gb);
      });
}

// --- elementwise -----------------------------------------------------------

template <typename Scalar>
BasicTensor<Scalar> add(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same_shape("add", a.shape(), b.shape());
  return detail::make_result<Scalar>("add", a.shape(), a.value() + b.value(), {&a, &b},
                                     [an = a.node(), bn = b.node()](const detail::Vec<Scalar>& g) {
                                       detail::accumulate(an, g);
                                       detail::accumulate(bn, g);
                                     });
}

template <typename Scalar>
BasicTensor<Scalar> sub(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same_shape("sub", a.shape(), b.shape());
  return detail::make_result<Scalar>("sub", a.shape(), a.value() - b.value(), {&a, &b},
                                     [an = a.node(), bn = b.node()](const detail::Vec<Scalar>& g) {
                                       detail::accumulate(an, g);
                                       if (bn->requires_grad) detail::accumulate<Scalar>(bn, -g);
                                     });
}

/// Hadamard product.
template <typename Scalar>
BasicTensor<Scalar> mul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same_shape("mul", a.shape(), b.shape());
  return detail::make_result<Scalar>("mul", a.shape(), a.value().cwiseProduct(b.value()), {&a, &b},
                                     [an = a.node(), bn = b.node()](const detail::Vec<Scalar>& g) {
                                       if (an->requires_grad) detail::accumulate<Scalar>(an, g.cwiseProduct(bn->value));
                                       if (bn->requires_grad) detail::accumulate<Scalar>(bn, g.cwiseProduct(an->value));
                                     });
}

/// x + y where y repeats over the leading axes of x; y's shape must equal the
/// trailing dimensions of x (bias rows, positional embeddings).
template <typename Scalar>
BasicTensor<Scalar> add_tiled(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& y) {
  const auto& xs = x.shape();
  const auto& ys = y.shape();
  detail::require(ys.size() <= xs.size() && std::equal(ys.rbegin(), ys.rend(), xs.rbegin()),
                  "add_tiled: " + to_string(ys) + " is not a trailing block of " + to_string(xs));
  const Index block = y.size();
  const Index reps = block == 0 ? 0 : x.size() / block;
  detail::Vec<Scalar> out = x.value();
  Eigen::Map<RowMatrix<Scalar>>(out.data(), reps, block).rowwise() += y.value().transpose();
  return detail::make_result<Scalar>(
      "add_tiled", xs, std::move(out), {&x, &y},
      [xn = x.node(), yn = y.node(), reps, block](const detail::Vec<Scalar>& g) {
        detail::accumulate(xn, g);
        if (yn->requires_grad)
          detail::accumulate<Scalar>(yn, detail::as_matrix<Scalar>(g, reps, block).colwise().sum().transpose());
      });
}

template <typename Scalar>
BasicTensor<Scalar> scale(const BasicTensor<Scalar>& a, Scalar s) {
  return detail::make_result<Scalar>("scale", a.shape(), a.value() * s, {&a},
                                     [an = a.node(), s](const detail::Vec<Scalar>& g) {
                                       detail::accumulate<Scalar>(an, g * s);
                                     });
}

template <typename Scalar>
BasicTensor<Scalar> add_scalar(const BasicTensor<Scalar>& a, Scalar s) {
  return detail::make_result<Scalar>("add_scalar", a.shape(), (a.value().array() + s).matrix(), {&a},
                                     [an = a.node()](const detail::Vec<Scalar>& g) { detail::accumulate(an, g); });
}

template <typename Scalar>
BasicTensor<Scalar> relu(const BasicTensor<Scalar>& a) {
  return detail::make_result<Scalar>(
      "relu", a.shape(), a.value().cwiseMax(Scalar(0)), {&a}, [an = a.node()](const detail::Vec<Scalar>& g) {
        detail::accumulate<Scalar>(an, (an->value.array() > Scalar(0)).select(g.array(), Scalar(0)).matrix());
      });
}

template <typename Scalar>
BasicTensor<Scalar> sigmoid(const BasicTensor<Scalar>& a) {
  detail::Vec<Scalar> out = a.value().unaryExpr([](Scalar x) { return detail::stable_sigmoid(x); });
  auto result = detail::make_result<Scalar>("sigmoid", a.shape(), out, {&a},
                                            [an = a.node(), out](const detail::Vec<Scalar>& g) {
                                              detail::accumulate<Scalar>(
                                                  an, (g.array() * out.array() * (Scalar(1) - out.array())).matrix());
                                            });
  return result;
}

template <typename Scalar>
BasicTensor<Scalar> tanh(const BasicTensor<Scalar>& a) {
  detail::Vec<Scalar> out = a.value().array().tanh().matrix();
  return detail::make_result<Scalar>("tanh", a.shape(), out, {&a}, [an = a.node(), out](const detail::Vec<Scalar>& g) {
    detail::accumulate<Scalar>(an, (g.array() * (Scalar(1) - out.array().square())).matrix());
  });
}

template <typename Scalar>
BasicTensor<Scalar> exp(const BasicTensor<Scalar>& a) {
  detail::Vec<Scalar> out = a.value().array().exp().matrix();
  return detail::make_result<Scalar>("exp", a.shape(), out, {&a}, [an = a.node(), out](const detail::Vec<Scalar>& g) {
    detail::accumulate<Scalar>(an, g.cwiseProduct(out));
  });
}

template <typename Scalar>
BasicTensor<Scalar> log(const BasicTensor<Scalar>& a) {
  if (a.size() > 0 && a.value().minCoeff() <= Scalar(0)) throw NumericError("log: non-positive input");
  return detail::make_result<Scalar>("log", a.shape(), a.value().array().log().matrix(), {&a},
                                     [an = a.node()](const detail::Vec<Scalar>& g) {
                                       detail::accumulate<Scalar>(an, g.cwiseQuotient(an->value));
                                     });
}

// --- reductions -------------------------------------------------------------

template <typename Scalar>
BasicTensor<Scalar> sum(const BasicTensor<Scalar>& a) {
  return detail::make_result<Scalar>("sum", Shape{}, detail::Vec<Scalar>::Constant(1, a.value().sum()), {&a},
                                     [an = a.node()](const detail::Vec<Scalar>& g) {
                                       detail::accumulate<Scalar>(an, detail::Vec<Scalar>::Constant(an->value.size(), g[0]));
                                     });
}

template <typename Scalar>
BasicTensor<Scalar> mean(const BasicTensor<Scalar>& a) {
  detail::require(a.size() > 0, "mean: empty tensor");
  return scale(sum(a), Scalar(1) / Scalar(a.size()));
}

/// Sums out `axis`; the result drops that axis.
template <typename Scalar>
BasicTensor<Scalar> sum_axis(const BasicTensor<Scalar>& a, Index axis) {
  if (axis < 0) axis += a.rank();
  detail::require(axis >= 0 && axis < a.rank(), "sum_axis: axis out of range");
  const auto& s = a.shape();
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= s[std::size_t(i)];
  for (Index i = axis + 1; i < a.rank(); ++i) inner *= s[std::size_t(i)];
  const Index len = s[std::size_t(axis)];
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + axis);
  detail::Vec<Scalar> out = detail::Vec<Scalar>::Zero(outer * inner);
  for (Index o = 0; o < outer; ++o)
    for (Index j = 0; j < len; ++j) out.segment(o * inner, inner) += a.value().segment((o * len + j) * inner, inner);
  return detail::make_result<Scalar>("sum_axis", out_shape, std::move(out), {&a},
                                     [an = a.node(), outer, inner, len](const detail::Vec<Scalar>& g) {
                                       detail::Vec<Scalar> ga(outer * len * inner);
                                       for (Index o = 0; o < outer; ++o)
                                         for (Index j = 0; j < len; ++j)
                                           ga.segment((o * len + j) * inner, inner) = g.segment(o * inner, inner);
                                       detail::accumulate(an, ga);
                                     });
}

// --- softmax family (last axis) ---------------------------------------------

template <typename Scalar>
BasicTensor<Scalar> softmax(const BasicTensor<Scalar>& a) {
  const Index cols = a.rank() == 0 ? 1 : a.shape().back();
  const Index rows = cols == 0 ? 0 : a.size() / cols;
  RowMatrix<Scalar> p = a.matrix(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    p.row(r).array() -= p.row(r).maxCoeff();
    p.row(r) = p.row(r).array().exp();
    p.row(r) /= p.row(r).sum();
  }
  return detail::make_result<Scalar>("softmax", a.shape(), detail::flat(p), {&a},
                                     [an = a.node(), p, rows, cols](const detail::Vec<Scalar>& g) {
                                       const auto G = detail::as_matrix<Scalar>(g, rows, cols);
                                       RowMatrix<Scalar> ga = p.cwiseProduct(G);
                                       const auto dots = ga.rowwise().sum();
                                       ga -= p.cwiseProduct(dots.replicate(1, cols));
                                       detail::accumulate(an, detail::flat(ga));
                                     });
}

template <typename Scalar>
BasicTensor<Scalar> log_softmax(const BasicTensor<Scalar>& a) {
  const Index cols = a.rank() == 0 ? 1 : a.shape().back();
  const Index rows = cols == 0 ? 0 : a.size() / cols;
  RowMatrix<Scalar> out = a.matrix(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const Scalar mx = out.row(r).maxCoeff();
    const Scalar lse = mx + std::log((out.row(r).array() - mx).exp().sum());
    out.row(r).array() -= lse;
  }
  return detail::make_result<Scalar>("log_softmax", a.shape(), detail::flat(out), {&a},
                                     [an = a.node(), out, rows, cols](const detail::Vec<Scalar>& g) {
                                       const auto G = detail::as_matrix<Scalar>(g, rows, cols);
                                       RowMatrix<Scalar> ga =
                                           G - out.array().exp().matrix().cwiseProduct(G.rowwise().sum().replicate(1, cols));
                                       detail::accumulate(an, detail::flat(ga));
                                     });
}

/// Mean softmax cross-entropy over the rows of `logits` ([N×n], or [n] for a
/// single sample).
template <typename Scalar>
BasicTensor<Scalar> cross_entropy(const BasicTensor<Scalar>& logits, std::span<const Index> labels) {
  detail::require(logits.rank() == 1 || logits.rank() == 2, "cross_entropy: logits must be [n] or [N x n]");
  const Index cols = logits.shape().back();
  const Index rows = logits.rank() == 1 ? 1 : logits.dim(0);
  detail::require(Index(labels.size()) == rows, "cross_entropy: one label per row required");
  for (Index y : labels)
    if (y < 0 || y >= cols) throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " out of range");
  RowMatrix<Scalar> logp = logits.matrix(rows, cols);
  Scalar loss = 0;
  for (Index r = 0; r < rows; ++r) {
    const Scalar mx = logp.row(r).maxCoeff();
    logp.row(r).array() -= mx + std::log((logp.row(r).array() - mx).exp().sum());
    loss -= logp(r, labels[std::size_t(r)]);
  }
  loss /= Scalar(rows);
  std::vector<Index> ys(labels.begin(), labels.end());
  return detail::make_result<Scalar>("cross_entropy", Shape{}, detail::Vec<Scalar>::Constant(1, loss), {&logits},
                                     [ln = logits.node(), logp, ys, rows, cols](const detail::Vec<Scalar>& g) {
                                       RowMatrix<Scalar> ga = logp.array().exp();
                                       for (Index r = 0; r < rows; ++r) ga(r, ys[std::size_t(r)]) -= Scalar(1);
                                       ga *= g[0] / Scalar(rows);
                                       detail::accumulate(ln, detail::flat(ga));
                                     });
}

// --- layout -----------------------------------------------------------------

template <typename Scalar>
BasicTensor<Scalar> reshape(const BasicTensor<Scalar>& a, Shape shape) {
  detail::require(numel(shape) == a.size(), "reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
  return detail::make_result<Scalar>("reshape", std::move(shape), a.value(), {&a},
                                     [an = a.node()](const detail::Vec<Scalar>& g) { detail::accumulate(an, g); });
}

/// Stacks `times` copies of `a` along its first axis.
template <typename Scalar>
BasicTensor<Scalar> repeat(const BasicTensor<Scalar>& a, Index times) {
  detail::require(a.rank() >= 1 && times >= 1, "repeat: needs rank >= 1 and times >= 1");
  Shape shape = a.shape();
  shape[0] *= times;
  const Index block = a.size();
  detail::Vec<Scalar> out = a.value().replicate(times, 1);
  return detail::make_result<Scalar>("repeat", std::move(shape), std::move(out), {&a},
                                     [an = a.node(), times, block](const detail::Vec<Scalar>& g) {
                                       detail::accumulate<Scalar>(
                                           an, detail::as_matrix<Scalar>(g, times, block).colwise().sum().transpose());
                                     });
}

// --- convolution --------------------------------------------------------------

/// 2-d convolution over NHWC input with a [k×k×Cin×Cout] kernel, zero padding.
template <typename Scalar>
BasicTensor<Scalar> conv2d(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& w, Index stride, Index pad) {
  detail::require(x.rank() == 4 && w.rank() == 4, "conv2d: expects NHWC input and [k x k x Cin x Cout] kernel");
  const Index n = x.dim(0), h = x.dim(1), wd = x.dim(2), cin = x.dim(3);
  const Index k = w.dim(0), cout = w.dim(3);
  detail::require(w.dim(1) == k && w.dim(2) == cin, "conv2d: kernel " + to_string(w.shape()) + " vs input " + to_string(x.shape()));
  detail::require(stride >= 1 && pad >= 0, "conv2d: bad stride/padding");
  const Index ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  detail::require(ho >= 1 && wo >= 1, "conv2d: kernel larger than padded input");
  const Index patch = k * k * cin, positions = n * ho * wo;

  RowMatrix<Scalar> cols = RowMatrix<Scalar>::Zero(positions, patch);
  const Scalar* src = x.value().data();
  for (Index b = 0; b < n; ++b)
    for (Index oy = 0; oy < ho; ++oy)
      for (Index ox = 0; ox < wo; ++ox) {
        Scalar* row = cols.data() + ((b * ho + oy) * wo + ox) * patch;
        for (Index ky = 0; ky < k; ++ky) {
          const Index iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (Index kx = 0; kx < k; ++kx) {
            const Index ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= wd) continue;
            std::copy_n(src + ((b * h + iy) * wd + ix) * cin, cin, row + (ky * k + kx) * cin);
          }
        }
      }
  RowMatrix<Scalar> out = cols * w.matrix(patch, cout);
  return detail::make_result<Scalar>(
      "conv2d", Shape{n, ho, wo, cout}, detail::flat(out), {&x, &w},
      [xn = x.node(), wn = w.node(), cols = std::move(cols), n, h, wd, cin, k, cout, ho, wo, stride, pad, patch,
       positions](const detail::Vec<Scalar>& g) {
        const auto G = detail::as_matrix<Scalar>(g, positions, cout);
        if (wn->requires_grad) {
          RowMatrix<Scalar> gw = cols.transpose() * G;
          detail::accumulate(wn, detail::flat(gw));
        }
        if (xn->requires_grad) {
          RowMatrix<Scalar> gcols = G * detail::as_matrix<Scalar>(wn->value, patch, cout).transpose();
          detail::Vec<Scalar> gx = detail::Vec<Scalar>::Zero(xn->value.size());
          for (Index b = 0; b < n; ++b)
            for (Index oy = 0; oy < ho; ++oy)
              for (Index ox = 0; ox < wo; ++ox) {
                const Scalar* row = gcols.data() + ((b * ho + oy) * wo + ox) * patch;
                for (Index ky = 0; ky < k; ++ky) {
                  const Index iy = oy * stride - pad + ky;
                  if (iy < 0 || iy >= h) continue;
                  for (Index kx = 0; kx < k; ++kx) {
                    const Index ix = ox * stride - pad + kx;
                    if (ix < 0 || ix >= wd) continue;
                    gx.segment(((b * h + iy) * wd + ix) * cin, cin) +=
                        Eigen::Map<const detail::Vec<Scalar>>(row + (ky * k + kx) * cin, cin);
                  }
                }
              }
          detail::accumulate(xn, gx);
        }
      });
}

/// 1×1 convolution with bias over NHWC input; weight is [Cin×Cout].
template <typename Scalar>
BasicTensor<Scalar> conv1x1(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& w, const BasicTensor<Scalar>& b) {
  detail::require(x.rank() == 4 && w.rank() == 2 && x.dim(3) == w.dim(0),
                  "conv1x1: input " + to_string(x.shape()) + " vs weight " + to_string(w.shape()));
  const Index n = x.dim(0), h = x.dim(1), wd = x.dim(2);
  auto y = add_tiled(matmul(reshape(x, Shape{n * h * wd, x.dim(3)}), w), b);
  return reshape(y, Shape{n, h, wd, w.dim(1)});
}

/// Spatial mean of NHWC input, giving [N×C].
template <typename Scalar>
BasicTensor<Scalar> global_avg_pool(const BasicTensor<Scalar>& x) {
  detail::require(x.rank() == 4, "global_avg_pool: expects NHWC input");
  const Index n = x.dim(0), s = x.dim(1) * x.dim(2), c = x.dim(3);
  RowMatrix<Scalar> out(n, c);
  for (Index b = 0; b < n; ++b)
    out.row(b) = Eigen::Map<const RowMatrix<Scalar>>(x.value().data() + b * s * c, s, c).colwise().mean();
  return detail::make_result<Scalar>("global_avg_pool", Shape{n, c}, detail::flat(out), {&x},
                                     [xn = x.node(), n, s, c](const detail::Vec<Scalar>& g) {
                                       detail::Vec<Scalar> gx(n * s * c);
                                       for (Index b = 0; b < n; ++b)
                                         Eigen::Map<RowMatrix<Scalar>>(gx.data() + b * s * c, s, c) =
                                             (detail::as_matrix<Scalar>(g, n, c).row(b) / Scalar(s)).replicate(s, 1);
                                       detail::accumulate(xn, gx);
                                     });
}

// --- slot attention pieces -----------------------------------------------------

/// Row-wise a / (a·1 + 1) over the last axis.
template <typename Scalar>
BasicTensor<Scalar> normalize_attention(const BasicTensor<Scalar>& a) {
  const Index cols = a.shape().back();
  const Index rows = cols == 0 ? 0 : a.size() / cols;
  const auto A = a.matrix(rows, cols);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> denom = (A.rowwise().sum().array() + Scalar(1)).matrix();
  RowMatrix<Scalar> out = denom.cwiseInverse().asDiagonal() * A;
  return detail::make_result<Scalar>(
      "normalize_attention", a.shape(), detail::flat(out), {&a},
      [an = a.node(), out, denom, rows, cols](const detail::Vec<Scalar>& g) {
        const auto G = detail::as_matrix<Scalar>(g, rows, cols);
        // d(a_i/D)/d(a_j) = δ_ij/D − a_i/D², D = Σa + 1
        const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots = G.cwiseProduct(out).rowwise().sum();
        RowMatrix<Scalar> ga = denom.cwiseInverse().asDiagonal() * (G - dots.replicate(1, cols));
        detail::accumulate(an, detail::flat(ga));
      });
}

template <typename Scalar>
struct BasicGruWeights {
  // input-to-hidden and hidden-to-hidden maps for reset, update, candidate
  BasicTensor<Scalar> w_ir, w_iz, w_in, w_hr, w_hz, w_hn;
  BasicTensor<Scalar> b_ir, b_iz, b_in, b_hr, b_hz, b_hn;
};

/// One gated-recurrent-unit step applied row-wise with shared weights:
///   r = σ(u W_ir + b_ir + h W_hr + b_hr)
///   z = σ(u W_iz + b_iz + h W_hz + b_hz)
///   c = tanh(u W_in + b_in + r ⊙ (h W_hn + b_hn))
///   h' = (1 − z) ⊙ h + z ⊙ c
template <typename Scalar>
BasicTensor<Scalar> gru_cell(const BasicTensor<Scalar>& u, const BasicTensor<Scalar>& h,
                             const BasicGruWeights<Scalar>& p) {
  detail::require_same_shape("gru_cell", u.shape(), h.shape());
  detail::require(u.rank() == 2, "gru_cell: expects [rows x width] input");
  auto affine = [](const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& w, const BasicTensor<Scalar>& b) {
    return add_tiled(matmul(x, w), b);
  };
  auto r = sigmoid(add(affine(u, p.w_ir, p.b_ir), affine(h, p.w_hr, p.b_hr)));
  auto z = sigmoid(add(affine(u, p.w_iz, p.b_iz), affine(h, p.w_hz, p.b_hz)));
  auto c = tanh(add(affine(u, p.w_in, p.b_in), mul(r, affine(h, p.w_hn, p.b_hn))));
  return add(h, mul(z, sub(c, h)));
}

using GruWeights = BasicGruWeights<double>;

}  // namespace scouter
