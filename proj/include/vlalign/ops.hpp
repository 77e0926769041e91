#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "vlalign/tensor.hpp"

namespace vlalign {

namespace detail {

inline bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (active_tape() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

inline void add_into(std::vector<double>& dst, const std::vector<double>& src) {
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and linear algebra
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "add: shape mismatch");
  std::vector<double> out(a.values());
  for (long i = 0; i < a.size(); ++i) out[static_cast<size_t>(i)] += b.data()[i];
  Tensor r = Tensor::from_flat(a.shape(), std::move(out));
  r.check_finite("add");
  if (detail::should_record({&a, &b})) {
    r.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), ri = r.impl();
    active_tape()->record("add", [ai, bi, ri]() {
      if (ai->requires_grad) detail::add_into(ai->grad, ri->grad);
      if (bi->requires_grad) detail::add_into(bi->grad, ri->grad);
    });
  }
  return r;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "sub: shape mismatch");
  std::vector<double> out(a.values());
  for (long i = 0; i < a.size(); ++i) out[static_cast<size_t>(i)] -= b.data()[i];
  Tensor r = Tensor::from_flat(a.shape(), std::move(out));
  r.check_finite("sub");
  if (detail::should_record({&a, &b})) {
    r.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), ri = r.impl();
    active_tape()->record("sub", [ai, bi, ri]() {
      if (ai->requires_grad) detail::add_into(ai->grad, ri->grad);
      if (bi->requires_grad)
        for (size_t i = 0; i < bi->grad.size(); ++i) bi->grad[i] -= ri->grad[i];
    });
  }
  return r;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "mul: shape mismatch");
  std::vector<double> out(a.values());
  for (long i = 0; i < a.size(); ++i) out[static_cast<size_t>(i)] *= b.data()[i];
  Tensor r = Tensor::from_flat(a.shape(), std::move(out));
  r.check_finite("mul");
  if (detail::should_record({&a, &b})) {
    r.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), ri = r.impl();
    active_tape()->record("mul", [ai, bi, ri]() {
      for (size_t i = 0; i < ri->grad.size(); ++i) {
        if (ai->requires_grad) ai->grad[i] += ri->grad[i] * bi->values[i];
        if (bi->requires_grad) bi->grad[i] += ri->grad[i] * ai->values[i];
      }
    });
  }
  return r;
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.values());
  for (double& v : out) v *= c;
  Tensor r = Tensor::from_flat(a.shape(), std::move(out));
  r.check_finite("scale");
  if (detail::should_record({&a})) {
    r.set_requires_grad(true);
    auto ai = a.impl(), ri = r.impl();
    active_tape()->record("scale", [ai, ri, c]() {
      for (size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += c * ri->grad[i];
    });
  }
  return r;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.rank() == 2 && b.rank() == 2, "matmul: inputs must be rank 2");
  check(a.dim(1) == b.dim(0), "matmul: inner dimensions mismatch");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  const double* __restrict__ pa = a.data();
  const double* __restrict__ pb = b.data();
  for (int i = 0; i < m; ++i) {
    double* __restrict__ po = out.data() + static_cast<size_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      const double av = pa[static_cast<size_t>(i) * k + l];
      const double* __restrict__ pbrow = pb + static_cast<size_t>(l) * n;
      for (int j = 0; j < n; ++j) po[j] += av * pbrow[j];
    }
  }
  Tensor r = Tensor::from_flat({m, n}, std::move(out));
  r.check_finite("matmul");
  if (detail::should_record({&a, &b})) {
    r.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), ri = r.impl();
    active_tape()->record("matmul", [ai, bi, ri, m, k, n]() {
      const double* g = ri->grad.data();
      if (ai->requires_grad) {
        // dA = g . B^T
        double* da = ai->grad.data();
        const double* pb = bi->values.data();
        for (int i = 0; i < m; ++i) {
          const double* grow = g + static_cast<size_t>(i) * n;
          double* darow = da + static_cast<size_t>(i) * k;
          for (int l = 0; l < k; ++l) {
            const double* brow = pb + static_cast<size_t>(l) * n;
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
            darow[l] += s;
          }
        }
      }
      if (bi->requires_grad) {
        // dB = A^T . g
        double* db = bi->grad.data();
        const double* pa = ai->values.data();
        for (int l = 0; l < k; ++l)
          for (int i = 0; i < m; ++i) {
            const double av = pa[static_cast<size_t>(i) * k + l];
            if (av == 0.0) continue;
            const double* grow = g + static_cast<size_t>(i) * n;
            double* dbrow = db + static_cast<size_t>(l) * n;
            for (int j = 0; j < n; ++j) dbrow[j] += av * grow[j];
          }
      }
    });
  }
  return r;
}

inline Tensor transpose(const Tensor& a) {
  check(a.rank() == 2, "transpose: input must be rank 2");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<double> out(static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(j) * m + i] = a.data()[static_cast<size_t>(i) * n + j];
  Tensor r = Tensor::from_flat({n, m}, std::move(out));
  if (detail::should_record({&a})) {
    r.set_requires_grad(true);
    auto ai = a.impl(), ri = r.impl();
    active_tape()->record("transpose", [ai, ri, m, n]() {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          ai->grad[static_cast<size_t>(i) * n + j] += ri->grad[static_cast<size_t>(j) * m + i];
    });
  }
  return r;
}

// rows of `mat` plus a shared bias row
inline Tensor add_row_broadcast(const Tensor& mat, const Tensor& row) {
  check(mat.rank() == 2 && row.rank() == 1, "add_row_broadcast: want matrix and vector");
  check(mat.dim(1) == row.dim(0), "add_row_broadcast: width mismatch");
  const int m = mat.dim(0), n = mat.dim(1);
  std::vector<double> out(mat.values());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] += row.data()[j];
  Tensor r = Tensor::from_flat({m, n}, std::move(out));
  r.check_finite("add_row_broadcast");
  if (detail::should_record({&mat, &row})) {
    r.set_requires_grad(true);
    auto mi = mat.impl(), vi = row.impl(), ri = r.impl();
    active_tape()->record("add_row_broadcast", [mi, vi, ri, m, n]() {
      if (mi->requires_grad) detail::add_into(mi->grad, ri->grad);
      if (vi->requires_grad)
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) vi->grad[j] += ri->grad[static_cast<size_t>(i) * n + j];
    });
  }
  return r;
}

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_row_broadcast(matmul(x, w), b);
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  Tensor r = Tensor::from_flat(a.shape(), std::move(out));
  if (detail::should_record({&a})) {
    r.set_requires_grad(true);
    auto ai = a.impl(), ri = r.impl();
    active_tape()->record("relu", [ai, ri]() {
      for (size_t i = 0; i < ai->grad.size(); ++i)
        if (ai->values[i] > 0.0) ai->grad[i] += ri->grad[i];
    });
  }
  return r;
}

inline Tensor slice_cols(const Tensor& a, int c0, int c1) {
  check(a.rank() == 2, "slice_cols: input must be rank 2");
  check(0 <= c0 && c0 < c1 && c1 <= a.dim(1), "slice_cols: bad column range");
  const int m = a.dim(0), n = a.dim(1), w = c1 - c0;
  std::vector<double> out(static_cast<size_t>(m) * w);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < w; ++j)
      out[static_cast<size_t>(i) * w + j] = a.data()[static_cast<size_t>(i) * n + c0 + j];
  Tensor r = Tensor::from_flat({m, w}, std::move(out));
  if (detail::should_record({&a})) {
    r.set_requires_grad(true);
    auto ai = a.impl(), ri = r.impl();
    active_tape()->record("slice_cols", [ai, ri, m, n, w, c0]() {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
          ai->grad[static_cast<size_t>(i) * n + c0 + j] += ri->grad[static_cast<size_t>(i) * w + j];
    });
  }
  return r;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_cols: empty input");
  const int m = parts[0].dim(0);
  int total = 0;
  for (const Tensor& p : parts) {
    check(p.rank() == 2 && p.dim(0) == m, "concat_cols: row mismatch");
    total += p.dim(1);
  }
  std::vector<double> out(static_cast<size_t>(m) * total);
  int off = 0;
  for (const Tensor& p : parts) {
    const int w = p.dim(1);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j)
        out[static_cast<size_t>(i) * total + off + j] = p.data()[static_cast<size_t>(i) * w + j];
    off += w;
  }
  Tensor r = Tensor::from_flat({m, total}, std::move(out));
  bool rec = false;
  for (const Tensor& p : parts) rec = rec || detail::should_record({&p});
  if (rec) {
    r.set_requires_grad(true);
    std::vector<std::shared_ptr<detail::TensorData>> ins;
    for (const Tensor& p : parts) ins.push_back(p.impl());
    auto ri = r.impl();
    active_tape()->record("concat_cols", [ins, ri, m, total]() {
      int off2 = 0;
      for (auto& pi : ins) {
        const int w = pi->shape[1];
        if (pi->requires_grad) {
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
              pi->grad[static_cast<size_t>(i) * w + j] +=
                  ri->grad[static_cast<size_t>(i) * total + off2 + j];
        }
        off2 += w;
      }
    });
  }
  return r;
}

// out[i] = a[indices[i]]; duplicate indices accumulate gradient additively
inline Tensor gather_rows(const Tensor& a, const std::vector<int>& indices) {
  check(a.rank() == 2, "gather_rows: input must be rank 2");
  check(!indices.empty(), "gather_rows: empty index list");
  const int m = a.dim(0), n = a.dim(1);
  for (int idx : indices) check(0 <= idx && idx < m, "gather_rows: index out of range");
  std::vector<double> out(indices.size() * static_cast<size_t>(n));
  for (size_t i = 0; i < indices.size(); ++i)
    std::copy_n(a.data() + static_cast<size_t>(indices[i]) * n, n, out.data() + i * n);
  Tensor r = Tensor::from_flat({static_cast<int>(indices.size()), n}, std::move(out));
  if (detail::should_record({&a})) {
    r.set_requires_grad(true);
    auto ai = a.impl(), ri = r.impl();
    active_tape()->record("gather_rows", [ai, ri, indices, n]() {
      for (size_t i = 0; i < indices.size(); ++i)
        for (int j = 0; j < n; ++j)
          ai->grad[static_cast<size_t>(indices[i]) * n + j] += ri->grad[i * n + j];
    });
  }
  return r;
}

inline Tensor row(const Tensor& a, int i) {
  check(a.rank() == 2, "row: input must be rank 2");
  check(0 <= i && i < a.dim(0), "row: index out of range");
  const int n = a.dim(1);
  std::vector<double> out(a.data() + static_cast<size_t>(i) * n,
                          a.data() + static_cast<size_t>(i + 1) * n);
  Tensor r = Tensor::from_flat({n}, std::move(out));
  if (detail::should_record({&a})) {
    r.set_requires_grad(true);
    auto ai = a.impl(), ri = r.impl();
    active_tape()->record("row", [ai, ri, i, n]() {
      for (int j = 0; j < n; ++j) ai->grad[static_cast<size_t>(i) * n + j] += ri->grad[j];
    });
  }
  return r;
}

inline Tensor concat_vec(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_vec: empty input");
  std::vector<double> out;
  for (const Tensor& p : parts) {
    check(p.rank() == 1, "concat_vec: inputs must be rank 1");
    out.insert(out.end(), p.data(), p.data() + p.size());
  }
  Tensor r = Tensor::from_flat({static_cast<int>(out.size())}, std::move(out));
  bool rec = false;
  for (const Tensor& p : parts) rec = rec || detail::should_record({&p});
  if (rec) {
    r.set_requires_grad(true);
    std::vector<std::shared_ptr<detail::TensorData>> ins;
    for (const Tensor& p : parts) ins.push_back(p.impl());
    auto ri = r.impl();
    active_tape()->record("concat_vec", [ins, ri]() {
      size_t off = 0;
      for (auto& pi : ins) {
        if (pi->requires_grad)
          for (size_t j = 0; j < pi->values.size(); ++j) pi->grad[j] += ri->grad[off + j];
        off += pi->values.size();
      }
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& a) {
  double s = std::accumulate(a.values().begin(), a.values().end(), 0.0);
  Tensor r = Tensor::scalar(s);
  r.check_finite("sum_all");
  if (detail::should_record({&a})) {
    r.set_requires_grad(true);
    auto ai = a.impl(), ri = r.impl();
    active_tape()->record("sum_all", [ai, ri]() {
      for (double& g : ai->grad) g += ri->grad[0];
    });
  }
  return r;
}

inline Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / a.size()); }

inline Tensor add_n(const std::vector<Tensor>& terms) {
  check(!terms.empty(), "add_n: empty term list");
  Tensor acc = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return acc;
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
  check(a.rank() == 1 && b.rank() == 1 && a.size() == b.size(), "dot: want equal-length vectors");
  double s = 0.0;
  for (long i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  Tensor r = Tensor::scalar(s);
  r.check_finite("dot");
  if (detail::should_record({&a, &b})) {
    r.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), ri = r.impl();
    active_tape()->record("dot", [ai, bi, ri]() {
      const double g = ri->grad[0];
      for (size_t i = 0; i < ai->values.size(); ++i) {
        if (ai->requires_grad) ai->grad[i] += g * bi->values[i];
        if (bi->requires_grad) bi->grad[i] += g * ai->values[i];
      }
    });
  }
  return r;
}

// mean of squared differences against a constant target
inline Tensor mse_to_const(const Tensor& pred, const std::vector<double>& target) {
  check(static_cast<size_t>(pred.size()) == target.size(), "mse_to_const: size mismatch");
  const long n = pred.size();
  double s = 0.0;
  for (long i = 0; i < n; ++i) {
    const double d = pred.data()[i] - target[static_cast<size_t>(i)];
    s += d * d;
  }
  Tensor r = Tensor::scalar(s / static_cast<double>(n));
  r.check_finite("mse_to_const");
  if (detail::should_record({&pred})) {
    r.set_requires_grad(true);
    auto pi = pred.impl(), ri = r.impl();
    active_tape()->record("mse_to_const", [pi, ri, target, n]() {
      const double g = ri->grad[0] * 2.0 / static_cast<double>(n);
      for (long i = 0; i < n; ++i)
        pi->grad[static_cast<size_t>(i)] +=
            g * (pi->values[static_cast<size_t>(i)] - target[static_cast<size_t>(i)]);
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// softmax / normalization
// ---------------------------------------------------------------------------

namespace detail {

// max-subtracted softmax of the `valid` positions of one row; invalid
// positions get probability 0
inline void softmax_row(const double* in, double* out, int n, const unsigned char* valid) {
  double mx = -std::numeric_limits<double>::infinity();
  int n_valid = 0;
  for (int j = 0; j < n; ++j) {
    if (valid == nullptr || valid[j]) {
      mx = std::max(mx, in[j]);
      ++n_valid;
    }
  }
  check(n_valid > 0, "softmax: no valid entries in row");
  double z = 0.0;
  for (int j = 0; j < n; ++j) {
    if (valid == nullptr || valid[j]) {
      out[j] = std::exp(in[j] - mx);
      z += out[j];
    } else {
      out[j] = 0.0;
    }
  }
  for (int j = 0; j < n; ++j) out[j] /= z;
}

// dx = y * (g - sum(g*y)) restricted to the support of y
inline void softmax_row_backward(const double* y, const double* g, double* dx, int n) {
  double dotgy = 0.0;
  for (int j = 0; j < n; ++j) dotgy += g[j] * y[j];
  for (int j = 0; j < n; ++j) dx[j] += y[j] * (g[j] - dotgy);
}

}  // namespace detail

// row-wise softmax with an optional validity mask over columns
inline Tensor masked_softmax_rows(const Tensor& a, const std::vector<unsigned char>* col_valid) {
  check(a.rank() == 2, "masked_softmax_rows: input must be rank 2");
  const int m = a.dim(0), n = a.dim(1);
  if (col_valid != nullptr)
    check(static_cast<int>(col_valid->size()) == n, "masked_softmax_rows: mask width mismatch");
  std::vector<double> out(static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i)
    detail::softmax_row(a.data() + static_cast<size_t>(i) * n, out.data() + static_cast<size_t>(i) * n,
                        n, col_valid ? col_valid->data() : nullptr);
  Tensor r = Tensor::from_flat({m, n}, std::move(out));
  r.check_finite("masked_softmax_rows");
  if (detail::should_record({&a})) {
    r.set_requires_grad(true);
    auto ai = a.impl(), ri = r.impl();
    active_tape()->record("masked_softmax_rows", [ai, ri, m, n]() {
      for (int i = 0; i < m; ++i)
        detail::softmax_row_backward(ri->values.data() + static_cast<size_t>(i) * n,
                                     ri->grad.data() + static_cast<size_t>(i) * n,
                                     ai->grad.data() + static_cast<size_t>(i) * n, n);
    });
  }
  return r;
}

inline Tensor softmax_rows(const Tensor& a) { return masked_softmax_rows(a, nullptr); }

// softmax along `axis` of a vector (axis 0) or matrix (axis 0 = down columns,
// axis 1 = along rows)
inline Tensor softmax(const Tensor& x, int axis = -1) {
  if (x.rank() == 1) {
    check(axis == 0 || axis == -1, "softmax: bad axis for vector input");
    check(x.dim(0) > 0, "softmax: empty axis");
    Tensor m = Tensor::from_flat({1, x.dim(0)}, x.values());
    if (x.requires_grad() && active_tape()) {
      // keep the graph connection through a reshape-style op
      m.set_requires_grad(true);
      auto xi = x.impl(), mi = m.impl();
      active_tape()->record("reshape", [xi, mi]() { detail::add_into(xi->grad, mi->grad); });
    }
    Tensor s = softmax_rows(m);
    Tensor outv = Tensor::from_flat({x.dim(0)}, s.values());
    if (s.requires_grad() && active_tape()) {
      outv.set_requires_grad(true);
      auto si = s.impl(), oi = outv.impl();
      active_tape()->record("reshape", [si, oi]() { detail::add_into(si->grad, oi->grad); });
    }
    return outv;
  }
  check(x.rank() == 2, "softmax: only vectors and matrices supported");
  if (axis == -1) axis = 1;
  check(axis == 0 || axis == 1, "softmax: bad axis");
  if (axis == 1) return softmax_rows(x);
  return transpose(softmax_rows(transpose(x)));
}

// row-wise layer normalization: y = (x - mean) / sqrt(var + eps) * gain + bias
// (population variance; eps added before the root)
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                              double eps = 1e-5) {
  check(x.rank() == 2, "layer_norm_rows: input must be rank 2");
  const int m = x.dim(0), n = x.dim(1);
  check(n >= 2, "layer_norm: row length must be at least 2");
  check(gain.rank() == 1 && gain.dim(0) == n, "layer_norm: gain width mismatch");
  check(bias.rank() == 1 && bias.dim(0) == n, "layer_norm: bias width mismatch");
  std::vector<double> out(static_cast<size_t>(m) * n);
  std::vector<double> xhat(static_cast<size_t>(m) * n);
  std::vector<double> inv_std(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    const double* xr = x.data() + static_cast<size_t>(i) * n;
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += xr[j];
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= n;
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = istd;
    for (int j = 0; j < n; ++j) {
      const double xh = (xr[j] - mean) * istd;
      xhat[static_cast<size_t>(i) * n + j] = xh;
      out[static_cast<size_t>(i) * n + j] = xh * gain.data()[j] + bias.data()[j];
    }
  }
  Tensor r = Tensor::from_flat({m, n}, std::move(out));
  r.check_finite("layer_norm");
  if (detail::should_record({&x, &gain, &bias})) {
    r.set_requires_grad(true);
    auto xi = x.impl(), gi = gain.impl(), bi = bias.impl(), ri = r.impl();
    active_tape()->record("layer_norm", [xi, gi, bi, ri, xhat, inv_std, m, n]() {
      for (int i = 0; i < m; ++i) {
        const double* g = ri->grad.data() + static_cast<size_t>(i) * n;
        const double* xh = xhat.data() + static_cast<size_t>(i) * n;
        if (gi->requires_grad)
          for (int j = 0; j < n; ++j) gi->grad[j] += g[j] * xh[j];
        if (bi->requires_grad)
          for (int j = 0; j < n; ++j) bi->grad[j] += g[j];
        if (xi->requires_grad) {
          double mean_gh = 0.0, mean_ghx = 0.0;
          std::vector<double> gh(static_cast<size_t>(n));
          for (int j = 0; j < n; ++j) {
            gh[static_cast<size_t>(j)] = g[j] * gi->values[static_cast<size_t>(j)];
            mean_gh += gh[static_cast<size_t>(j)];
            mean_ghx += gh[static_cast<size_t>(j)] * xh[j];
          }
          mean_gh /= n;
          mean_ghx /= n;
          const double istd = inv_std[static_cast<size_t>(i)];
          for (int j = 0; j < n; ++j)
            xi->grad[static_cast<size_t>(i) * n + j] +=
                istd * (gh[static_cast<size_t>(j)] - mean_gh - xh[j] * mean_ghx);
        }
      }
    });
  }
  return r;
}

// vector form
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
  check(x.rank() == 1, "layer_norm: input must be rank 1");
  check(x.dim(0) >= 2, "layer_norm: input length must be at least 2");
  Tensor m = Tensor::from_flat({1, x.dim(0)}, x.values());
  if (x.requires_grad() && active_tape()) {
    m.set_requires_grad(true);
    auto xi = x.impl(), mi = m.impl();
    active_tape()->record("reshape", [xi, mi]() { detail::add_into(xi->grad, mi->grad); });
  }
  Tensor y = layer_norm_rows(m, gain, bias, eps);
  Tensor out = Tensor::from_flat({x.dim(0)}, y.values());
  if (y.requires_grad() && active_tape()) {
    out.set_requires_grad(true);
    auto yi = y.impl(), oi = out.impl();
    active_tape()->record("reshape", [yi, oi]() { detail::add_into(yi->grad, oi->grad); });
  }
  return out;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// mean cross-entropy of row-wise logits against integer labels
inline Tensor mean_cross_entropy_rows(const Tensor& logits, const std::vector<int>& labels) {
  check(logits.rank() == 2, "cross_entropy: logits must be rank 2");
  const int m = logits.dim(0), n = logits.dim(1);
  check(static_cast<int>(labels.size()) == m, "cross_entropy: label count mismatch");
  for (int lbl : labels) check(0 <= lbl && lbl < n, "cross_entropy: label out of range");
  std::vector<double> probs(static_cast<size_t>(m) * n);
  double loss = 0.0;
  for (int i = 0; i < m; ++i) {
    const double* lr = logits.data() + static_cast<size_t>(i) * n;
    double* pr = probs.data() + static_cast<size_t>(i) * n;
    detail::softmax_row(lr, pr, n, nullptr);
    double mx = *std::max_element(lr, lr + n);
    double lse = 0.0;
    for (int j = 0; j < n; ++j) lse += std::exp(lr[j] - mx);
    lse = mx + std::log(lse);
    loss += lse - lr[labels[static_cast<size_t>(i)]];
  }
  Tensor r = Tensor::scalar(loss / m);
  r.check_finite("cross_entropy");
  if (detail::should_record({&logits})) {
    r.set_requires_grad(true);
    auto li = logits.impl(), ri = r.impl();
    active_tape()->record("cross_entropy", [li, ri, probs, labels, m, n]() {
      const double g = ri->grad[0] / m;
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j)
          li->grad[static_cast<size_t>(i) * n + j] += g * probs[static_cast<size_t>(i) * n + j];
        li->grad[static_cast<size_t>(i) * n + labels[static_cast<size_t>(i)]] -= g;
      }
    });
  }
  return r;
}

inline Tensor cross_entropy(const Tensor& logits, int label) {
  check(logits.rank() == 1, "cross_entropy: logits must be rank 1");
  Tensor m = Tensor::from_flat({1, logits.dim(0)}, logits.values());
  if (logits.requires_grad() && active_tape()) {
    m.set_requires_grad(true);
    auto xi = logits.impl(), mi = m.impl();
    active_tape()->record("reshape", [xi, mi]() { detail::add_into(xi->grad, mi->grad); });
  }
  return mean_cross_entropy_rows(m, {label});
}

// numerically stable binary cross-entropy on a single logit
inline Tensor binary_cross_entropy_with_logit(const Tensor& logit, bool positive) {
  check(logit.is_scalar(), "binary_cross_entropy: logit must be scalar");
  const double z = logit.value();
  const double y = positive ? 1.0 : 0.0;
  const double loss = std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z)));
  Tensor r = Tensor::scalar(loss);
  r.check_finite("binary_cross_entropy");
  if (detail::should_record({&logit})) {
    r.set_requires_grad(true);
    auto li = logit.impl(), ri = r.impl();
    active_tape()->record("binary_cross_entropy", [li, ri, z, y]() {
      const double sig = 1.0 / (1.0 + std::exp(-z));
      li->grad[0] += ri->grad[0] * (sig - y);
    });
  }
  return r;
}

namespace detail {
constexpr double kKlFloor = 1e-8;
constexpr double kStochasticTol = 1e-6;
}  // namespace detail

// KL(target || pred). The prediction is floored at 1e-8 and renormalized so
// that target mass outside the prediction's support stays finite. Gradient
// flows into `pred` only (targets are data).
inline Tensor kl_divergence(const Tensor& target, const Tensor& pred) {
  check(target.rank() == 1 && pred.rank() == 1, "kl_divergence: want vectors");
  check(target.size() == pred.size(), "kl_divergence: length mismatch");
  const long n = target.size();
  double ts = 0.0, ps = 0.0;
  for (long i = 0; i < n; ++i) {
    check(target.data()[i] >= 0.0, "kl_divergence: negative target entry");
    check(pred.data()[i] >= 0.0, "kl_divergence: negative prediction entry");
    ts += target.data()[i];
    ps += pred.data()[i];
  }
  check(std::abs(ts - 1.0) <= detail::kStochasticTol, "kl_divergence: target does not sum to 1");
  check(std::abs(ps - 1.0) <= detail::kStochasticTol,
        "kl_divergence: prediction does not sum to 1");
  std::vector<double> qf(static_cast<size_t>(n));
  double z = 0.0;
  for (long i = 0; i < n; ++i) {
    qf[static_cast<size_t>(i)] = std::max(pred.data()[i], detail::kKlFloor);
    z += qf[static_cast<size_t>(i)];
  }
  double loss = 0.0;
  for (long i = 0; i < n; ++i) {
    const double p = target.data()[i];
    if (p > 0.0) loss += p * std::log(p * z / qf[static_cast<size_t>(i)]);
  }
  loss = std::max(loss, 0.0);  // guards tiny negative round-off at target==pred
  Tensor r = Tensor::scalar(loss);
  r.check_finite("kl_divergence");
  if (detail::should_record({&pred})) {
    r.set_requires_grad(true);
    auto ti = target.impl(), pi = pred.impl(), ri = r.impl();
    active_tape()->record("kl_divergence", [ti, pi, ri, qf, z, n]() {
      const double g = ri->grad[0];
      for (long i = 0; i < n; ++i) {
        if (pi->values[static_cast<size_t>(i)] > detail::kKlFloor) {
          pi->grad[static_cast<size_t>(i)] +=
              g * (1.0 / z - ti->values[static_cast<size_t>(i)] / qf[static_cast<size_t>(i)]);
        }
      }
    });
  }
  return r;
}

// per-row top-k softmax: keep the k largest scores of each row (ties broken
// toward the lowest column), softmax over them, zeros elsewhere
struct TopKSoftmax {
  Tensor probs;                           // same shape as scores
  std::vector<std::vector<int>> support;  // kept column indices per row, ascending
};

inline TopKSoftmax topk_row_softmax(const Tensor& scores, int k) {
  check(scores.rank() == 2, "topk_row_softmax: input must be rank 2");
  check(k >= 1, "topk_row_softmax: k must be >= 1");
  const int m = scores.dim(0), n = scores.dim(1);
  const int kk = std::min(k, n);
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  std::vector<std::vector<int>> support(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    const double* sr = scores.data() + static_cast<size_t>(i) * n;
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [sr](int a, int b) {
      if (sr[a] != sr[b]) return sr[a] > sr[b];
      return a < b;
    });
    std::vector<int> keep(order.begin(), order.begin() + kk);
    std::sort(keep.begin(), keep.end());
    double mx = -std::numeric_limits<double>::infinity();
    for (int j : keep) mx = std::max(mx, sr[j]);
    double zsum = 0.0;
    for (int j : keep) zsum += std::exp(sr[j] - mx);
    for (int j : keep) out[static_cast<size_t>(i) * n + j] = std::exp(sr[j] - mx) / zsum;
    support[static_cast<size_t>(i)] = std::move(keep);
  }
  Tensor probs = Tensor::from_flat({m, n}, std::move(out));
  probs.check_finite("topk_row_softmax");
  if (detail::should_record({&scores})) {
    probs.set_requires_grad(true);
    auto si = scores.impl(), pi = probs.impl();
    auto sup = support;
    active_tape()->record("topk_row_softmax", [si, pi, sup, n]() {
      for (size_t i = 0; i < sup.size(); ++i) {
        const double* y = pi->values.data() + i * n;
        const double* g = pi->grad.data() + i * n;
        double dotgy = 0.0;
        for (int j : sup[i]) dotgy += g[j] * y[j];
        for (int j : sup[i]) si->grad[i * static_cast<size_t>(n) + j] += y[j] * (g[j] - dotgy);
      }
    });
  }
  return TopKSoftmax{std::move(probs), std::move(support)};
}

}  // namespace vlalign
