#ifndef SPIDER_OPS_HPP
#define SPIDER_OPS_HPP

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "spider/tensor.hpp"

namespace spider {
namespace detail {

// C[m,n] (+)= A[m,k] * B[k,n], row-major. 4-way unrolled over k so the
// accumulator row of C stays hot; inner loop vectorizes.
template <class T>
void gemm_nn(int64_t m, int64_t n, int64_t k, const T* A, const T* B, T* C,
             bool accumulate) {
  if (!accumulate) std::fill(C, C + m * n, T(0));
  for (int64_t i = 0; i < m; ++i) {
    const T* a = A + i * k;
    T* c = C + i * n;
    int64_t l = 0;
    for (; l + 4 <= k; l += 4) {
      const T a0 = a[l], a1 = a[l + 1], a2 = a[l + 2], a3 = a[l + 3];
      const T* b0 = B + l * n;
      const T* b1 = b0 + n;
      const T* b2 = b1 + n;
      const T* b3 = b2 + n;
      for (int64_t j = 0; j < n; ++j)
        c[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
    }
    for (; l < k; ++l) {
      const T av = a[l];
      const T* b = B + l * n;
      for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m,n] (+)= A[m,k] * B[n,k]^T  (dot products of contiguous rows)
template <class T>
void gemm_nt(int64_t m, int64_t n, int64_t k, const T* A, const T* B, T* C,
             bool accumulate) {
  for (int64_t i = 0; i < m; ++i) {
    const T* a = A + i * k;
    T* c = C + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const T* b = B + j * k;
      T acc = accumulate ? c[j] : T(0);
      for (int64_t l = 0; l < k; ++l) acc += a[l] * b[l];
      c[j] = acc;
    }
  }
}

// C[m,n] (+)= A[k,m]^T * B[k,n]
template <class T>
void gemm_tn(int64_t m, int64_t n, int64_t k, const T* A, const T* B, T* C,
             bool accumulate) {
  if (!accumulate) std::fill(C, C + m * n, T(0));
  for (int64_t l = 0; l < k; ++l) {
    const T* a = A + l * m;
    const T* b = B + l * n;
    for (int64_t i = 0; i < m; ++i) {
      const T av = a[i];
      T* c = C + i * n;
      for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// x[C,H,W] -> col[(C*kh*kw) x (Ho*Wo)], zero padding
template <class T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t Ho, int64_t Wo, T* col) {
  const int64_t P = Ho * Wo;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t di = 0; di < kh; ++di) {
      for (int64_t dj = 0; dj < kw; ++dj) {
        T* dst = col + ((c * kh + di) * kw + dj) * P;
        for (int64_t oy = 0; oy < Ho; ++oy) {
          const int64_t iy = oy * stride + di - pad;
          if (iy < 0 || iy >= H) {
            std::fill(dst + oy * Wo, dst + (oy + 1) * Wo, T(0));
            continue;
          }
          const T* src = x + (c * H + iy) * W;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            const int64_t ix = ox * stride + dj - pad;
            dst[oy * Wo + ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

// scatter-add of col back into x[C,H,W]
template <class T>
void col2im_add(const T* col, int64_t C, int64_t H, int64_t W, int64_t kh,
                int64_t kw, int64_t stride, int64_t pad, int64_t Ho, int64_t Wo,
                T* x) {
  const int64_t P = Ho * Wo;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t di = 0; di < kh; ++di) {
      for (int64_t dj = 0; dj < kw; ++dj) {
        const T* src = col + ((c * kh + di) * kw + dj) * P;
        for (int64_t oy = 0; oy < Ho; ++oy) {
          const int64_t iy = oy * stride + di - pad;
          if (iy < 0 || iy >= H) continue;
          T* dst = x + (c * H + iy) * W;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            const int64_t ix = ox * stride + dj - pad;
            if (ix >= 0 && ix < W) dst[ix] += src[oy * Wo + ox];
          }
        }
      }
    }
  }
}

template <class T>
void record_if(bool rec, const char* op, std::vector<TensorPtr<T>> writes,
               TensorPtr<T> output, std::function<void()> bwd) {
  if (rec)
    Tape<T>::current()->record(op, std::move(writes), std::move(output), std::move(bwd));
}

template <class T>
bool recording_for(std::initializer_list<TensorPtr<T>> inputs) {
  if (!Tape<T>::recording_enabled()) return false;
  for (const auto& t : inputs)
    if (t && t->requires_grad()) return true;
  return false;
}

template <class T>
void finish(const TensorPtr<T>& out, const char* op) {
  if (strict_numeric_mode()) check_finite_or_throw(*out, op);
}

}  // namespace detail

namespace ops {

template <class T>
TensorPtr<T> matmul(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (a->rank() != 2 || b->rank() != 2 || a->dim(1) != b->dim(0))
    throw DimensionError("matmul shape mismatch: " + shape_str(a->shape()) +
                         " x " + shape_str(b->shape()));
  const int64_t m = a->dim(0), k = a->dim(1), n = b->dim(1);
  auto out = make_tensor<T>({m, n});
  detail::gemm_nn(m, n, k, a->data(), b->data(), out->data(), false);
  if (detail::recording_for<T>({a, b})) {
    out->set_requires_grad(true);
    detail::record_if<T>(true, "matmul", {a, b}, out, [a, b, out, m, n, k] {
      if (a->requires_grad())
        detail::gemm_nt(m, k, n, out->grad(), b->data(), a->grad(), true);
      if (b->requires_grad())
        detail::gemm_tn(k, n, m, a->data(), out->grad(), b->grad(), true);
    });
  }
  detail::finish(out, "matmul");
  return out;
}

template <class T>
TensorPtr<T> transpose(const TensorPtr<T>& a) {
  if (a->rank() != 2) throw DimensionError("transpose expects rank-2, got " + shape_str(a->shape()));
  const int64_t m = a->dim(0), n = a->dim(1);
  auto out = make_tensor<T>({n, m});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out->data()[j * m + i] = a->data()[i * n + j];
  if (detail::recording_for<T>({a})) {
    out->set_requires_grad(true);
    detail::record_if<T>(true, "transpose", {a}, out, [a, out, m, n] {
      if (!a->requires_grad()) return;
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
          a->grad()[i * n + j] += out->grad()[j * m + i];
    });
  }
  return out;
}

// x[B,C,H,W] conv k[O,C,kh,kw] (+ optional bias[O]), zero padding
template <class T>
TensorPtr<T> conv2d(const TensorPtr<T>& x, const TensorPtr<T>& k,
                    const TensorPtr<T>& bias, int64_t stride, int64_t pad) {
  if (x->rank() != 4 || k->rank() != 4)
    throw DimensionError("conv2d expects 4-D input and kernel, got " +
                         shape_str(x->shape()) + " and " + shape_str(k->shape()));
  const int64_t B = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  const int64_t O = k->dim(0), kh = k->dim(2), kw = k->dim(3);
  if (k->dim(1) != C)
    throw DimensionError("conv2d channel mismatch: input " + shape_str(x->shape()) +
                         " vs kernel " + shape_str(k->shape()));
  if (kh % 2 == 0 || kw % 2 == 0)
    throw DimensionError("conv2d requires odd kernel extents, got " + shape_str(k->shape()));
  if (H + 2 * pad < kh || W + 2 * pad < kw)
    throw DimensionError("conv2d kernel larger than padded input: " +
                         shape_str(x->shape()) + " vs " + shape_str(k->shape()));
  if ((H + 2 * pad - kh) % stride != 0 || (W + 2 * pad - kw) % stride != 0)
    throw DimensionError("conv2d stride does not divide geometry: input " +
                         shape_str(x->shape()) + ", kernel " + shape_str(k->shape()) +
                         ", stride " + std::to_string(stride) + ", pad " + std::to_string(pad));
  if (bias && (bias->rank() != 1 || bias->dim(0) != O))
    throw DimensionError("conv2d bias shape " + shape_str(bias->shape()) +
                         " does not match output channels " + std::to_string(O));
  const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  const int64_t K = C * kh * kw, P = Ho * Wo;

  auto out = make_tensor<T>({B, O, Ho, Wo});
  std::vector<T> col(static_cast<size_t>(K * P));
  for (int64_t b = 0; b < B; ++b) {
    detail::im2col(x->data() + b * C * H * W, C, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
    detail::gemm_nn(O, P, K, k->data(), col.data(), out->data() + b * O * P, false);
    if (bias) {
      T* y = out->data() + b * O * P;
      for (int64_t o = 0; o < O; ++o) {
        const T bv = bias->data()[o];
        for (int64_t p = 0; p < P; ++p) y[o * P + p] += bv;
      }
    }
  }

  if (detail::recording_for<T>({x, k, bias})) {
    out->set_requires_grad(true);
    std::vector<TensorPtr<T>> writes{x, k};
    if (bias) writes.push_back(bias);
    detail::record_if<T>(true, "conv2d", std::move(writes), out,
                         [x, k, bias, out, B, C, H, W, O, kh, kw, stride, pad, Ho, Wo, K, P] {
      std::vector<T> col(static_cast<size_t>(K * P));
      std::vector<T> dcol(static_cast<size_t>(K * P));
      for (int64_t b = 0; b < B; ++b) {
        const T* dy = out->grad() + b * O * P;
        if (k->requires_grad() || x->requires_grad())
          detail::im2col(x->data() + b * C * H * W, C, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
        if (k->requires_grad())
          detail::gemm_nt(O, K, P, dy, col.data(), k->grad(), true);
        if (x->requires_grad()) {
          detail::gemm_tn(K, P, O, k->data(), dy, dcol.data(), false);
          detail::col2im_add(dcol.data(), C, H, W, kh, kw, stride, pad, Ho, Wo,
                             x->grad() + b * C * H * W);
        }
        if (bias && bias->requires_grad()) {
          for (int64_t o = 0; o < O; ++o) {
            T acc = T(0);
            for (int64_t p = 0; p < P; ++p) acc += dy[o * P + p];
            bias->grad()[o] += acc;
          }
        }
      }
    });
  }
  detail::finish(out, "conv2d");
  return out;
}

template <class T>
TensorPtr<T> conv2d(const TensorPtr<T>& x, const TensorPtr<T>& k, int64_t stride,
                    int64_t pad) {
  return conv2d(x, k, TensorPtr<T>(), stride, pad);
}

// mean filter; the divisor is k*k everywhere (padding counts as zeros)
template <class T>
TensorPtr<T> avg_pool2d(const TensorPtr<T>& x, int64_t k, int64_t stride, int64_t pad) {
  if (x->rank() != 4) throw DimensionError("avg_pool2d expects 4-D, got " + shape_str(x->shape()));
  const int64_t B = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  if (H + 2 * pad < k || W + 2 * pad < k)
    throw DimensionError("avg_pool2d window larger than padded input");
  if ((H + 2 * pad - k) % stride != 0 || (W + 2 * pad - k) % stride != 0)
    throw DimensionError("avg_pool2d stride does not divide geometry");
  const int64_t Ho = (H + 2 * pad - k) / stride + 1;
  const int64_t Wo = (W + 2 * pad - k) / stride + 1;
  auto out = make_tensor<T>({B, C, Ho, Wo});
  const T inv = T(1) / static_cast<T>(k * k);
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* src = x->data() + bc * H * W;
    T* dst = out->data() + bc * Ho * Wo;
    for (int64_t oy = 0; oy < Ho; ++oy) {
      for (int64_t ox = 0; ox < Wo; ++ox) {
        T acc = T(0);
        for (int64_t di = 0; di < k; ++di) {
          const int64_t iy = oy * stride + di - pad;
          if (iy < 0 || iy >= H) continue;
          for (int64_t dj = 0; dj < k; ++dj) {
            const int64_t ix = ox * stride + dj - pad;
            if (ix >= 0 && ix < W) acc += src[iy * W + ix];
          }
        }
        dst[oy * Wo + ox] = acc * inv;
      }
    }
  }
  if (detail::recording_for<T>({x})) {
    out->set_requires_grad(true);
    detail::record_if<T>(true, "avg_pool2d", {x}, out, [x, out, B, C, H, W, k, stride, pad, Ho, Wo, inv] {
      if (!x->requires_grad()) return;
      for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* dy = out->grad() + bc * Ho * Wo;
        T* dx = x->grad() + bc * H * W;
        for (int64_t oy = 0; oy < Ho; ++oy)
          for (int64_t ox = 0; ox < Wo; ++ox) {
            const T g = dy[oy * Wo + ox] * inv;
            for (int64_t di = 0; di < k; ++di) {
              const int64_t iy = oy * stride + di - pad;
              if (iy < 0 || iy >= H) continue;
              for (int64_t dj = 0; dj < k; ++dj) {
                const int64_t ix = ox * stride + dj - pad;
                if (ix >= 0 && ix < W) dx[iy * W + ix] += g;
              }
            }
          }
      }
    });
  }
  detail::finish(out, "avg_pool2d");
  return out;
}

// numerically stable softmax along `axis`; each slice sums to 1
template <class T>
TensorPtr<T> softmax(const TensorPtr<T>& x, int64_t axis) {
  if (axis < 0 || axis >= static_cast<int64_t>(x->rank()))
    throw ContractError("softmax axis " + std::to_string(axis) + " invalid for " + shape_str(x->shape()));
  const int64_t L = x->dim(axis);
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= x->dim(i);
  for (size_t i = axis + 1; i < x->rank(); ++i) inner *= x->dim(i);
  auto out = make_tensor<T>(x->shape());
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const T* src = x->data() + o * L * inner + in;
      T* dst = out->data() + o * L * inner + in;
      T mx = src[0];
      for (int64_t l = 1; l < L; ++l) mx = std::max(mx, src[l * inner]);
      T sum = T(0);
      for (int64_t l = 0; l < L; ++l) {
        const T e = std::exp(src[l * inner] - mx);
        dst[l * inner] = e;
        sum += e;
      }
      const T inv = T(1) / sum;
      for (int64_t l = 0; l < L; ++l) dst[l * inner] *= inv;
    }
  }
  if (detail::recording_for<T>({x})) {
    out->set_requires_grad(true);
    detail::record_if<T>(true, "softmax", {x}, out, [x, out, L, outer, inner] {
      if (!x->requires_grad()) return;
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
          const T* y = out->data() + o * L * inner + in;
          const T* dy = out->grad() + o * L * inner + in;
          T* dx = x->grad() + o * L * inner + in;
          T dot = T(0);
          for (int64_t l = 0; l < L; ++l) dot += dy[l * inner] * y[l * inner];
          for (int64_t l = 0; l < L; ++l)
            dx[l * inner] += y[l * inner] * (dy[l * inner] - dot);
        }
    });
  }
  detail::finish(out, "softmax");
  return out;
}

// x[B,C,H,W]; per-channel batch statistics over (B,H,W) in training mode,
// running statistics in eval mode. Running buffers are updated in place with
// momentum 0.1 only when update_running is set.
template <class T>
TensorPtr<T> batch_norm(const TensorPtr<T>& x, const TensorPtr<T>& gamma,
                        const TensorPtr<T>& beta, const TensorPtr<T>& running_mean,
                        const TensorPtr<T>& running_var, bool training,
                        bool update_running = true, double momentum = 0.1,
                        double eps = 1e-5) {
  if (x->rank() != 4) throw DimensionError("batch_norm expects 4-D, got " + shape_str(x->shape()));
  const int64_t B = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  const int64_t n = B * H * W;
  if (training && n < 2)
    throw ContractError("batch_norm degenerate batch: B*H*W = " + std::to_string(n));
  if (gamma->numel() != C || beta->numel() != C || running_mean->numel() != C ||
      running_var->numel() != C)
    throw DimensionError("batch_norm parameter length mismatch for C=" + std::to_string(C));

  std::vector<T> mean(C), inv_std(C);
  if (training) {
    for (int64_t c = 0; c < C; ++c) {
      T m = T(0);
      for (int64_t b = 0; b < B; ++b) {
        const T* src = x->data() + (b * C + c) * H * W;
        for (int64_t p = 0; p < H * W; ++p) m += src[p];
      }
      m /= static_cast<T>(n);
      T v = T(0);
      for (int64_t b = 0; b < B; ++b) {
        const T* src = x->data() + (b * C + c) * H * W;
        for (int64_t p = 0; p < H * W; ++p) {
          const T d = src[p] - m;
          v += d * d;
        }
      }
      v /= static_cast<T>(n);
      mean[c] = m;
      inv_std[c] = T(1) / std::sqrt(v + static_cast<T>(eps));
      if (update_running) {
        running_mean->data()[c] = static_cast<T>((1.0 - momentum) * running_mean->data()[c] + momentum * m);
        running_var->data()[c] = static_cast<T>((1.0 - momentum) * running_var->data()[c] + momentum * v);
      }
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mean[c] = running_mean->data()[c];
      inv_std[c] = T(1) / std::sqrt(running_var->data()[c] + static_cast<T>(eps));
    }
  }

  auto out = make_tensor<T>(x->shape());
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const T* src = x->data() + (b * C + c) * H * W;
      T* dst = out->data() + (b * C + c) * H * W;
      const T m = mean[c], is = inv_std[c], g = gamma->data()[c], bt = beta->data()[c];
      for (int64_t p = 0; p < H * W; ++p) dst[p] = (src[p] - m) * is * g + bt;
    }

  if (detail::recording_for<T>({x, gamma, beta})) {
    out->set_requires_grad(true);
    detail::record_if<T>(true, "batch_norm", {x, gamma, beta}, out,
                         [x, gamma, beta, out, B, C, H, W, n, training,
                          mean = std::move(mean), inv_std = std::move(inv_std)] {
      for (int64_t c = 0; c < C; ++c) {
        const T m = mean[c], is = inv_std[c], g = gamma->data()[c];
        T sum_dy = T(0), sum_dy_xhat = T(0);
        for (int64_t b = 0; b < B; ++b) {
          const T* src = x->data() + (b * C + c) * H * W;
          const T* dy = out->grad() + (b * C + c) * H * W;
          for (int64_t p = 0; p < H * W; ++p) {
            sum_dy += dy[p];
            sum_dy_xhat += dy[p] * (src[p] - m) * is;
          }
        }
        if (gamma->requires_grad()) gamma->grad()[c] += sum_dy_xhat;
        if (beta->requires_grad()) beta->grad()[c] += sum_dy;
        if (x->requires_grad()) {
          if (training) {
            const T invn = T(1) / static_cast<T>(n);
            for (int64_t b = 0; b < B; ++b) {
              const T* src = x->data() + (b * C + c) * H * W;
              const T* dy = out->grad() + (b * C + c) * H * W;
              T* dx = x->grad() + (b * C + c) * H * W;
              for (int64_t p = 0; p < H * W; ++p) {
                const T xhat = (src[p] - m) * is;
                dx[p] += g * is * (dy[p] - sum_dy * invn - xhat * sum_dy_xhat * invn);
              }
            }
          } else {
            for (int64_t b = 0; b < B; ++b) {
              const T* dy = out->grad() + (b * C + c) * H * W;
              T* dx = x->grad() + (b * C + c) * H * W;
              for (int64_t p = 0; p < H * W; ++p) dx[p] += dy[p] * g * is;
            }
          }
        }
      }
    });
  }
  detail::finish(out, "batch_norm");
  return out;
}

namespace detail_resize {
struct Taps {
  std::vector<int64_t> i0, i1;
  std::vector<double> w1;  // weight of i1; weight of i0 is 1-w1
};
inline Taps make_taps(int64_t in, int64_t out) {
  Taps t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.w1.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t o = 0; o < out; ++o) {
    double s = (o + 0.5) * scale - 0.5;
    if (s < 0) s = 0;
    const double f = std::floor(s);
    int64_t i0 = static_cast<int64_t>(f);
    int64_t i1 = i0 + 1;
    double w = s - f;
    if (i1 > in - 1) {
      i1 = in - 1;
      if (i0 > in - 1) i0 = in - 1;
      if (i0 == i1) w = 0;
    }
    t.i0[o] = i0;
    t.i1[o] = i1;
    t.w1[o] = w;
  }
  return t;
}
}  // namespace detail_resize

// align-corners=false bilinear interpolation; exact when sizes match
template <class T>
TensorPtr<T> bilinear_resize(const TensorPtr<T>& x, int64_t h, int64_t w) {
  if (x->rank() != 4) throw DimensionError("bilinear_resize expects 4-D, got " + shape_str(x->shape()));
  if (h < 1 || w < 1) throw DimensionError("bilinear_resize target must be >= 1");
  const int64_t B = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  auto ty = detail_resize::make_taps(H, h);
  auto tx = detail_resize::make_taps(W, w);
  auto out = make_tensor<T>({B, C, h, w});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* src = x->data() + bc * H * W;
    T* dst = out->data() + bc * h * w;
    for (int64_t oy = 0; oy < h; ++oy) {
      const int64_t y0 = ty.i0[oy], y1 = ty.i1[oy];
      const T wy = static_cast<T>(ty.w1[oy]);
      for (int64_t ox = 0; ox < w; ++ox) {
        const int64_t x0 = tx.i0[ox], x1 = tx.i1[ox];
        const T wx = static_cast<T>(tx.w1[ox]);
        const T v00 = src[y0 * W + x0], v01 = src[y0 * W + x1];
        const T v10 = src[y1 * W + x0], v11 = src[y1 * W + x1];
        dst[oy * w + ox] = (T(1) - wy) * ((T(1) - wx) * v00 + wx * v01) +
                           wy * ((T(1) - wx) * v10 + wx * v11);
      }
    }
  }
  if (detail::recording_for<T>({x})) {
    out->set_requires_grad(true);
    detail::record_if<T>(true, "bilinear_resize", {x}, out, [x, out, B, C, H, W, h, w, ty, tx] {
      if (!x->requires_grad()) return;
      for (int64_t bc = 0; bc < B * C; ++bc) {
        T* dx = x->grad() + bc * H * W;
        const T* dy = out->grad() + bc * h * w;
        for (int64_t oy = 0; oy < h; ++oy) {
          const int64_t y0 = ty.i0[oy], y1 = ty.i1[oy];
          const T wy = static_cast<T>(ty.w1[oy]);
          for (int64_t ox = 0; ox < w; ++ox) {
            const int64_t x0 = tx.i0[ox], x1 = tx.i1[ox];
            const T wx = static_cast<T>(tx.w1[ox]);
            const T g = dy[oy * w + ox];
            dx[y0 * W + x0] += g * (T(1) - wy) * (T(1) - wx);
            dx[y0 * W + x1] += g * (T(1) - wy) * wx;
            dx[y1 * W + x0] += g * wy * (T(1) - wx);
            dx[y1 * W + x1] += g * wy * wx;
          }
        }
      }
    });
  }
  detail::finish(out, "bilinear_resize");
  return out;
}

template <class T>
TensorPtr<T> global_avg_pool(const TensorPtr<T>& x) {
  if (x->rank() != 4) throw DimensionError("global_avg_pool expects 4-D, got " + shape_str(x->shape()));
  const int64_t B = x->dim(0), C = x->dim(1), HW = x->dim(2) * x->dim(3);
  auto out = make_tensor<T>({B, C});
  const T inv = T(1) / static_cast<T>(HW);
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* src = x->data() + bc * HW;
    T acc = T(0);
    for (int64_t p = 0; p < HW; ++p) acc += src[p];
    out->data()[bc] = acc * inv;
  }
  if (detail::recording_for<T>({x})) {
    out->set_requires_grad(true);
    detail::record_if<T>(true, "global_avg_pool", {x}, out, [x, out, B, C, HW, inv] {
      if (!x->requires_grad()) return;
      for (int64_t bc = 0; bc < B * C; ++bc) {
        const T g = out->grad()[bc] * inv;
        T* dx = x->grad() + bc * HW;
        for (int64_t p = 0; p < HW; ++p) dx[p] += g;
      }
    });
  }
  detail::finish(out, "global_avg_pool");
  return out;
}

template <class T>
TensorPtr<T> relu(const TensorPtr<T>& x) {
  auto out = make_tensor<T>(x->shape());
  const int64_t n = x->numel();
  for (int64_t i = 0; i < n; ++i) out->data()[i] = x->data()[i] > T(0) ? x->data()[i] : T(0);
  if (detail::recording_for<T>({x})) {
    out->set_requires_grad(true);
    detail::record_if<T>(true, "relu", {x}, out, [x, out, n] {
      if (!x->requires_grad()) return;
      for (int64_t i = 0; i < n; ++i)
        if (x->data()[i] > T(0)) x->grad()[i] += out->grad()[i];
    });
  }
  return out;
}

template <class T>
TensorPtr<T> sigmoid(const TensorPtr<T>& x) {
  auto out = make_tensor<T>(x->shape());
  const int64_t n = x->numel();
  for (int64_t i = 0; i < n; ++i) {
    const T v = x->data()[i];
    out->data()[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                               : std::exp(v) / (T(1) + std::exp(v));
  }
  if (detail::recording_for<T>({x})) {
    out->set_requires_grad(true);
    detail::record_if<T>(true, "sigmoid", {x}, out, [x, out, n] {
      if (!x->requires_grad()) return;
      for (int64_t i = 0; i < n; ++i) {
        const T s = out->data()[i];
        x->grad()[i] += out->grad()[i] * s * (T(1) - s);
      }
    });
  }
  detail::finish(out, "sigmoid");
  return out;
}

namespace detail_ew {
template <class T, class FwdFn, class BwdFn>
TensorPtr<T> binary(const char* name, const TensorPtr<T>& a, const TensorPtr<T>& b,
                    FwdFn fwd, BwdFn bwd) {
  if (a->shape() != b->shape())
    throw DimensionError(std::string(name) + " shape mismatch: " + shape_str(a->shape()) +
                         " vs " + shape_str(b->shape()));
  auto out = make_tensor<T>(a->shape());
  const int64_t n = a->numel();
  for (int64_t i = 0; i < n; ++i) out->data()[i] = fwd(a->data()[i], b->data()[i]);
  if (detail::recording_for<T>({a, b})) {
    out->set_requires_grad(true);
    detail::record_if<T>(true, name, {a, b}, out, [a, b, out, n, bwd] {
      for (int64_t i = 0; i < n; ++i) {
        const T g = out->grad()[i];
        T da, db;
        bwd(a->data()[i], b->data()[i], out->data()[i], g, da, db);
        if (a->requires_grad()) a->grad()[i] += da;
        if (b->requires_grad()) b->grad()[i] += db;
      }
    });
  }
  detail::finish(out, name);
  return out;
}
}  // namespace detail_ew

template <class T>
TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  return detail_ew::binary<T>("add", a, b, [](T x, T y) { return x + y; },
                              [](T, T, T, T g, T& da, T& db) { da = g; db = g; });
}

template <class T>
TensorPtr<T> sub(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  return detail_ew::binary<T>("sub", a, b, [](T x, T y) { return x - y; },
                              [](T, T, T, T g, T& da, T& db) { da = g; db = -g; });
}

template <class T>
TensorPtr<T> mul(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  return detail_ew::binary<T>("mul", a, b, [](T x, T y) { return x * y; },
                              [](T x, T y, T, T g, T& da, T& db) { da = g * y; db = g * x; });
}

template <class T>
TensorPtr<T> div(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  return detail_ew::binary<T>("div", a, b, [](T x, T y) { return x / y; },
                              [](T x, T y, T, T g, T& da, T& db) {
                                da = g / y;
                                db = -g * x / (y * y);
                              });
}

template <class T>
TensorPtr<T> scale(const TensorPtr<T>& x, double c) {
  auto out = make_tensor<T>(x->shape());
  const int64_t n = x->numel();
  const T cv = static_cast<T>(c);
  for (int64_t i = 0; i < n; ++i) out->data()[i] = x->data()[i] * cv;
  if (detail::recording_for<T>({x})) {
    out->set_requires_grad(true);
    detail::record_if<T>(true, "scale", {x}, out, [x, out, n, cv] {
      if (!x->requires_grad()) return;
      for (int64_t i = 0; i < n; ++i) x->grad()[i] += out->grad()[i] * cv;
    });
  }
  detail::finish(out, "scale");
  return out;
}

template <class T>
TensorPtr<T> add_scalar(const TensorPtr<T>& x, double c) {
  auto out = make_tensor<T>(x->shape());
  const int64_t n = x->numel();
  const T cv = static_cast<T>(c);
  for (int64_t i = 0; i < n; ++i) out->data()[i] = x->data()[i] + cv;
  if (detail::recording_for<T>({x})) {
    out->set_requires_grad(true);
    detail::record_if<T>(true, "add_scalar", {x}, out, [x, out, n] {
      if (!x->requires_grad()) return;
      for (int64_t i = 0; i < n; ++i) x->grad()[i] += out->grad()[i];
    });
  }
  return out;
}

template <class T>
TensorPtr<T> sum_all(const TensorPtr<T>& x) {
  auto out = make_tensor<T>({1});
  T acc = T(0);
  const int64_t n = x->numel();
  for (int64_t i = 0; i < n; ++i) acc += x->data()[i];
  out->data()[0] = acc;
  if (detail::recording_for<T>({x})) {
    out->set_requires_grad(true);
    detail::record_if<T>(true, "sum_all", {x}, out, [x, out, n] {
      if (!x->requires_grad()) return;
      const T g = out->grad()[0];
      for (int64_t i = 0; i < n; ++i) x->grad()[i] += g;
    });
  }
  detail::finish(out, "sum_all");
  return out;
}

template <class T>
TensorPtr<T> mean_all(const TensorPtr<T>& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x->numel()));
}

// sum over all dims except dim 0: [B, ...] -> [B, 1]
template <class T>
TensorPtr<T> sum_per_sample(const TensorPtr<T>& x) {
  if (x->rank() < 1) throw DimensionError("sum_per_sample expects rank >= 1");
  const int64_t B = x->dim(0);
  const int64_t R = x->numel() / B;
  auto out = make_tensor<T>({B, 1});
  for (int64_t b = 0; b < B; ++b) {
    const T* src = x->data() + b * R;
    T acc = T(0);
    for (int64_t i = 0; i < R; ++i) acc += src[i];
    out->data()[b] = acc;
  }
  if (detail::recording_for<T>({x})) {
    out->set_requires_grad(true);
    detail::record_if<T>(true, "sum_per_sample", {x}, out, [x, out, B, R] {
      if (!x->requires_grad()) return;
      for (int64_t b = 0; b < B; ++b) {
        const T g = out->grad()[b];
        T* dx = x->grad() + b * R;
        for (int64_t i = 0; i < R; ++i) dx[i] += g;
      }
    });
  }
  return out;
}

// rows [r0, r1) along dim 0 of any-rank tensor
template <class T>
TensorPtr<T> slice_rows(const TensorPtr<T>& x, int64_t r0, int64_t r1) {
  if (r0 < 0 || r1 <= r0 || r1 > x->dim(0))
    throw DimensionError("slice_rows range [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") invalid for " + shape_str(x->shape()));
  Shape s = x->shape();
  s[0] = r1 - r0;
  const int64_t R = x->numel() / x->dim(0);
  auto out = make_tensor<T>(s);
  std::copy(x->data() + r0 * R, x->data() + r1 * R, out->data());
  if (detail::recording_for<T>({x})) {
    out->set_requires_grad(true);
    detail::record_if<T>(true, "slice_rows", {x}, out, [x, out, r0, r1, R] {
      if (!x->requires_grad()) return;
      const int64_t n = (r1 - r0) * R;
      for (int64_t i = 0; i < n; ++i) x->grad()[r0 * R + i] += out->grad()[i];
    });
  }
  return out;
}

template <class T>
TensorPtr<T> slice_cols(const TensorPtr<T>& x, int64_t c0, int64_t c1) {
  if (x->rank() != 2) throw DimensionError("slice_cols expects rank-2, got " + shape_str(x->shape()));
  if (c0 < 0 || c1 <= c0 || c1 > x->dim(1)) throw DimensionError("slice_cols range invalid");
  const int64_t m = x->dim(0), n = x->dim(1), w = c1 - c0;
  auto out = make_tensor<T>({m, w});
  for (int64_t i = 0; i < m; ++i)
    std::copy(x->data() + i * n + c0, x->data() + i * n + c1, out->data() + i * w);
  if (detail::recording_for<T>({x})) {
    out->set_requires_grad(true);
    detail::record_if<T>(true, "slice_cols", {x}, out, [x, out, m, n, c0, w] {
      if (!x->requires_grad()) return;
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < w; ++j) x->grad()[i * n + c0 + j] += out->grad()[i * w + j];
    });
  }
  return out;
}

template <class T>
TensorPtr<T> concat_cols(const std::vector<TensorPtr<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols needs at least one part");
  const int64_t m = parts[0]->dim(0);
  int64_t total = 0;
  for (const auto& p : parts) {
    if (p->rank() != 2 || p->dim(0) != m) throw DimensionError("concat_cols row mismatch");
    total += p->dim(1);
  }
  auto out = make_tensor<T>({m, total});
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t w = p->dim(1);
    for (int64_t i = 0; i < m; ++i)
      std::copy(p->data() + i * w, p->data() + (i + 1) * w, out->data() + i * total + off);
    off += w;
  }
  bool rec = Tape<T>::recording_enabled();
  bool any = false;
  for (const auto& p : parts) any = any || p->requires_grad();
  if (rec && any) {
    out->set_requires_grad(true);
    detail::record_if<T>(true, "concat_cols", parts, out, [parts, out, m, total] {
      int64_t off = 0;
      for (const auto& p : parts) {
        const int64_t w = p->dim(1);
        if (p->requires_grad())
          for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < w; ++j)
              p->grad()[i * w + j] += out->grad()[i * total + off + j];
        off += w;
      }
    });
  }
  return out;
}

template <class T>
TensorPtr<T> concat_rows(const std::vector<TensorPtr<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows needs at least one part");
  Shape s = parts[0]->shape();
  int64_t rows = 0;
  const int64_t R = parts[0]->numel() / parts[0]->dim(0);
  for (const auto& p : parts) {
    Shape ps = p->shape();
    ps[0] = s[0];
    if (ps != s) throw DimensionError("concat_rows trailing-shape mismatch");
    rows += p->dim(0);
  }
  s[0] = rows;
  auto out = make_tensor<T>(s);
  int64_t off = 0;
  for (const auto& p : parts) {
    std::copy(p->data(), p->data() + p->numel(), out->data() + off);
    off += p->numel();
  }
  bool any = false;
  for (const auto& p : parts) any = any || p->requires_grad();
  if (Tape<T>::recording_enabled() && any) {
    out->set_requires_grad(true);
    detail::record_if<T>(true, "concat_rows", parts, out, [parts, out] {
      int64_t off = 0;
      for (const auto& p : parts) {
        if (p->requires_grad())
          for (int64_t i = 0; i < p->numel(); ++i) p->grad()[i] += out->grad()[off + i];
        off += p->numel();
      }
    });
  }
  return out;
}

template <class T>
TensorPtr<T> reshape(const TensorPtr<T>& x, Shape s) {
  if (shape_numel(s) != x->numel())
    throw DimensionError("reshape " + shape_str(x->shape()) + " -> " + shape_str(s) +
                         " changes element count");
  auto out = make_tensor<T>(std::move(s), x->vec());
  if (detail::recording_for<T>({x})) {
    out->set_requires_grad(true);
    detail::record_if<T>(true, "reshape", {x}, out, [x, out] {
      if (!x->requires_grad()) return;
      for (int64_t i = 0; i < x->numel(); ++i) x->grad()[i] += out->grad()[i];
    });
  }
  return out;
}

// broadcast add of a [1,C] bias over the rows of a [R,C] matrix
template <class T>
TensorPtr<T> add_bias_rows(const TensorPtr<T>& x, const TensorPtr<T>& bias) {
  if (x->rank() != 2 || bias->rank() != 2 || bias->dim(0) != 1 || bias->dim(1) != x->dim(1))
    throw DimensionError("add_bias_rows shapes " + shape_str(x->shape()) + " + " +
                         shape_str(bias->shape()));
  const int64_t R = x->dim(0), C = x->dim(1);
  auto out = make_tensor<T>(x->shape());
  for (int64_t i = 0; i < R; ++i)
    for (int64_t j = 0; j < C; ++j)
      out->data()[i * C + j] = x->data()[i * C + j] + bias->data()[j];
  if (detail::recording_for<T>({x, bias})) {
    out->set_requires_grad(true);
    detail::record_if<T>(true, "add_bias_rows", {x, bias}, out, [x, bias, out, R, C] {
      if (x->requires_grad())
        for (int64_t i = 0; i < R * C; ++i) x->grad()[i] += out->grad()[i];
      if (bias->requires_grad())
        for (int64_t i = 0; i < R; ++i)
          for (int64_t j = 0; j < C; ++j) bias->grad()[j] += out->grad()[i * C + j];
    });
  }
  return out;
}

// elementwise binary cross-entropy on logits; target is a constant.
// loss = max(x,0) - x*t + log1p(exp(-|x|)); d/dx = sigmoid(x) - t
template <class T>
TensorPtr<T> bce_with_logits(const TensorPtr<T>& x, const TensorPtr<T>& target) {
  if (x->shape() != target->shape())
    throw DimensionError("bce_with_logits shape mismatch: " + shape_str(x->shape()) +
                         " vs " + shape_str(target->shape()));
  const int64_t n = x->numel();
  for (int64_t i = 0; i < n; ++i) {
    const T t = target->data()[i];
    if (t < T(0) || t > T(1))
      throw ContractError("bce_with_logits target outside [0,1]");
  }
  auto out = make_tensor<T>(x->shape());
  for (int64_t i = 0; i < n; ++i) {
    const T v = x->data()[i], t = target->data()[i];
    out->data()[i] = std::max(v, T(0)) - v * t + std::log1p(std::exp(-std::abs(v)));
  }
  if (detail::recording_for<T>({x})) {
    out->set_requires_grad(true);
    detail::record_if<T>(true, "bce_with_logits", {x}, out, [x, target, out, n] {
      if (!x->requires_grad()) return;
      for (int64_t i = 0; i < n; ++i) {
        const T v = x->data()[i];
        const T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
        x->grad()[i] += out->grad()[i] * (s - target->data()[i]);
      }
    });
  }
  detail::finish(out, "bce_with_logits");
  return out;
}

}  // namespace ops
}  // namespace spider

#endif
