// Brute-force reference implementations used as independent oracles. These
// deliberately use naive loops and never share code with the library.
#ifndef SPIDER_TESTS_ORACLES_HPP
#define SPIDER_TESTS_ORACLES_HPP

#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

// C[m,n] = A[m,k] * B[k,n]
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b,
                                  int64_t m, int64_t k, int64_t n) {
  std::vector<double> c(m * n, 0.0);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j)
      for (int64_t l = 0; l < k; ++l) c[i * n + j] += a[i * k + l] * b[l * n + j];
  return c;
}

// y[B,O,Ho,Wo] from x[B,C,H,W], k[O,C,kh,kw], zero padding
inline std::vector<double> conv2d(const std::vector<double>& x, const std::vector<double>& k,
                                  int64_t B, int64_t C, int64_t H, int64_t W, int64_t O,
                                  int64_t kh, int64_t kw, int64_t stride, int64_t pad,
                                  const std::vector<double>& bias = {}) {
  const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  std::vector<double> y(B * O * Ho * Wo, 0.0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t o = 0; o < O; ++o)
      for (int64_t oy = 0; oy < Ho; ++oy)
        for (int64_t ox = 0; ox < Wo; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (int64_t c = 0; c < C; ++c)
            for (int64_t di = 0; di < kh; ++di)
              for (int64_t dj = 0; dj < kw; ++dj) {
                const int64_t iy = oy * stride + di - pad;
                const int64_t ix = ox * stride + dj - pad;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x[((b * C + c) * H + iy) * W + ix] *
                       k[((o * C + c) * kh + di) * kw + dj];
              }
          y[((b * O + o) * Ho + oy) * Wo + ox] = acc;
        }
  return y;
}

inline std::vector<double> softmax_1d(const std::vector<double>& x) {
  std::vector<double> e(x.size());
  double sum = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    e[i] = std::exp(x[i]);
    sum += e[i];
  }
  for (double& v : e) v /= sum;
  return e;
}

// two-pass per-channel batch norm over (B,H,W)
inline std::vector<double> batch_norm(const std::vector<double>& x, int64_t B, int64_t C,
                                      int64_t H, int64_t W, const std::vector<double>& gamma,
                                      const std::vector<double>& beta, double eps = 1e-5) {
  std::vector<double> y(x.size());
  const int64_t n = B * H * W;
  for (int64_t c = 0; c < C; ++c) {
    double mean = 0;
    for (int64_t b = 0; b < B; ++b)
      for (int64_t p = 0; p < H * W; ++p) mean += x[(b * C + c) * H * W + p];
    mean /= n;
    double var = 0;
    for (int64_t b = 0; b < B; ++b)
      for (int64_t p = 0; p < H * W; ++p) {
        const double d = x[(b * C + c) * H * W + p] - mean;
        var += d * d;
      }
    var /= n;
    for (int64_t b = 0; b < B; ++b)
      for (int64_t p = 0; p < H * W; ++p) {
        const int64_t i = (b * C + c) * H * W + p;
        y[i] = (x[i] - mean) / std::sqrt(var + eps) * gamma[c] + beta[c];
      }
  }
  return y;
}

// align-corners=false bilinear, per-pixel formula
inline std::vector<double> bilinear(const std::vector<double>& x, int64_t H, int64_t W,
                                    int64_t h, int64_t w) {
  std::vector<double> y(h * w);
  for (int64_t oy = 0; oy < h; ++oy)
    for (int64_t ox = 0; ox < w; ++ox) {
      double sy = (oy + 0.5) * static_cast<double>(H) / h - 0.5;
      double sx = (ox + 0.5) * static_cast<double>(W) / w - 0.5;
      sy = std::max(0.0, sy);
      sx = std::max(0.0, sx);
      int64_t y0 = static_cast<int64_t>(std::floor(sy));
      int64_t x0 = static_cast<int64_t>(std::floor(sx));
      const double fy = sy - y0, fx = sx - x0;
      const int64_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
      y0 = std::min(y0, H - 1);
      x0 = std::min(x0, W - 1);
      y[oy * w + ox] = (1 - fy) * ((1 - fx) * x[y0 * W + x0] + fx * x[y0 * W + x1]) +
                       fy * ((1 - fx) * x[y1 * W + x0] + fx * x[y1 * W + x1]);
    }
  return y;
}

// weighted mean of token rows: sum_t f[t,:] * m[t] / (sum_t m[t] + eps)
inline std::vector<double> weighted_mean(const std::vector<double>& f,
                                         const std::vector<double>& m, int64_t T, int64_t C,
                                         double eps = 1e-6) {
  std::vector<double> d(C, 0.0);
  double total = 0;
  for (int64_t t = 0; t < T; ++t) total += m[t];
  for (int64_t t = 0; t < T; ++t)
    for (int64_t c = 0; c < C; ++c) d[c] += f[t * C + c] * m[t];
  for (int64_t c = 0; c < C; ++c) d[c] /= (total + eps);
  return d;
}

// single-head cross attention + FFN block with explicit loops.
// x[1,C], f[T,C]; weights all [C,C] except the FFN pair.
struct AttnWeights {
  std::vector<double> wq, wk, wv, wz;          // [C*C]
  std::vector<double> w1, b1;                  // [C*4C], [4C]
  std::vector<double> w2, b2;                  // [4C*C], [C]
};

inline std::vector<double> mhca_single_head(const std::vector<double>& x,
                                            const std::vector<double>& f, int64_t T,
                                            int64_t C, const AttnWeights& w) {
  auto matvec = [C](const std::vector<double>& mat, const std::vector<double>& v,
                    int64_t rows, int64_t cols) {
    std::vector<double> out(cols, 0.0);
    (void)rows;
    for (int64_t j = 0; j < cols; ++j)
      for (int64_t i = 0; i < static_cast<int64_t>(v.size()); ++i)
        out[j] += v[i] * mat[i * cols + j];
    return out;
  };
  const double d = std::sqrt(static_cast<double>(C));
  auto q = matvec(w.wq, x, C, C);
  std::vector<double> scores(T, 0.0);
  for (int64_t t = 0; t < T; ++t) {
    std::vector<double> row(f.begin() + t * C, f.begin() + (t + 1) * C);
    auto kt = matvec(w.wk, row, C, C);
    for (int64_t c = 0; c < C; ++c) scores[t] += q[c] * kt[c];
    scores[t] /= d;
  }
  auto attn = softmax_1d(scores);
  std::vector<double> ctx(C, 0.0);
  for (int64_t t = 0; t < T; ++t) {
    std::vector<double> row(f.begin() + t * C, f.begin() + (t + 1) * C);
    auto vt = matvec(w.wv, row, C, C);
    for (int64_t c = 0; c < C; ++c) ctx[c] += attn[t] * vt[c];
  }
  auto zadd = matvec(w.wz, ctx, C, C);
  std::vector<double> z(C);
  for (int64_t c = 0; c < C; ++c) z[c] = x[c] + zadd[c];
  // FFN
  std::vector<double> hidden(4 * C, 0.0);
  for (int64_t j = 0; j < 4 * C; ++j) {
    for (int64_t i = 0; i < C; ++i) hidden[j] += z[i] * w.w1[i * 4 * C + j];
    hidden[j] += w.b1[j];
    hidden[j] = std::max(0.0, hidden[j]);
  }
  std::vector<double> out(C, 0.0);
  for (int64_t j = 0; j < C; ++j) {
    for (int64_t i = 0; i < 4 * C; ++i) out[j] += hidden[i] * w.w2[i * C + j];
    out[j] += w.b2[j] + z[j];
  }
  return out;
}

// logits[p] = <w_obj, f[:,p]> + b
inline std::vector<double> dynamic_head(const std::vector<double>& f, int64_t C, int64_t H,
                                        int64_t W, const std::vector<double>& w_obj,
                                        double b) {
  std::vector<double> y(H * W, b);
  for (int64_t p = 0; p < H * W; ++p)
    for (int64_t c = 0; c < C; ++c) y[p] += w_obj[c] * f[c * H * W + p];
  return y;
}

// boundary-weighted BCE + weighted IoU for one sample [H,W]
inline double ppa(const std::vector<double>& logits, const std::vector<double>& gt,
                  int64_t H, int64_t W, int64_t k) {
  const int64_t r = k / 2;
  std::vector<double> wmap(H * W);
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      double acc = 0;
      for (int64_t dy = -r; dy <= r; ++dy)
        for (int64_t dx = -r; dx <= r; ++dx) {
          const int64_t iy = y + dy, ix = x + dx;
          if (iy >= 0 && iy < H && ix >= 0 && ix < W) acc += gt[iy * W + ix];
        }
      wmap[y * W + x] = 1.0 + 5.0 * std::abs(acc / (k * k) - gt[y * W + x]);
    }
  double wbce_num = 0, wsum = 0, inter = 0, uni = 0;
  for (int64_t p = 0; p < H * W; ++p) {
    const double x = logits[p], g = gt[p];
    const double bce = std::max(x, 0.0) - x * g + std::log1p(std::exp(-std::abs(x)));
    const double prob = 1.0 / (1.0 + std::exp(-x));
    wbce_num += wmap[p] * bce;
    wsum += wmap[p];
    inter += wmap[p] * prob * g;
    uni += wmap[p] * (prob + g - prob * g);
  }
  return wbce_num / wsum + (1.0 - (inter + 1.0) / (uni + 1.0));
}

struct Confusion {
  int64_t tp = 0, tn = 0, fp = 0, fn = 0;
};

inline Confusion confusion(const std::vector<double>& pred, const std::vector<double>& gt) {
  Confusion c;
  for (size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] > 0.5, g = gt[i] > 0.5;
    if (p && g) ++c.tp;
    else if (p && !g) ++c.fp;
    else if (!p && g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// neighborhood max/min with zero padding
inline std::vector<double> morph(const std::vector<double>& m, int64_t H, int64_t W,
                                 int64_t k, bool is_max) {
  const int64_t r = k / 2;
  std::vector<double> out(H * W);
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      double best = is_max ? 0.0 : 1.0;
      for (int64_t dy = -r; dy <= r; ++dy)
        for (int64_t dx = -r; dx <= r; ++dx) {
          const int64_t iy = y + dy, ix = x + dx;
          const double v = (iy >= 0 && iy < H && ix >= 0 && ix < W) ? m[iy * W + ix] : 0.0;
          best = is_max ? std::max(best, v) : std::min(best, v);
        }
      out[y * W + x] = best;
    }
  return out;
}

}  // namespace oracle

#endif
