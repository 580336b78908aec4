#include "piars/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace piars::grad::kernels {

void conv2d(const Tensor& img, const Tensor& ker, const Tensor& bias, Tensor& out) {
  require(img.rank() == 3, "conv2d: image must be CxHxW, got " + shape_str(img.shape));
  require(ker.rank() == 4 && ker.shape[2] == 3 && ker.shape[3] == 3,
          "conv2d: kernels must be CoxCix3x3, got " + shape_str(ker.shape));
  const int ci_n = img.shape[0], h = img.shape[1], w = img.shape[2];
  const int co_n = ker.shape[0];
  require(ker.shape[1] == ci_n, "conv2d: input channel mismatch, image " + shape_str(img.shape) +
                                    " vs kernels " + shape_str(ker.shape));
  require(bias.rank() == 1 && bias.shape[0] == co_n, "conv2d: bias must be [Co]");
  out = Tensor({co_n, h, w});
  for (int co = 0; co < co_n; ++co) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int ci = 0; ci < ci_n; ++ci)
          for (int ky = 0; ky < 3; ++ky) {
            const int yy = y + ky - 1;
            if (yy < 0 || yy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int xx = x + kx - 1;
              if (xx < 0 || xx >= w) continue;
              acc += img.at(ci, yy, xx) * ker.v[((static_cast<std::size_t>(co) * ci_n + ci) * 3 + ky) * 3 + kx];
            }
          }
        out.at(co, y, x) = acc + bias.at(co);
      }
    }
  }
}

void conv2d_backward(const Tensor& img, const Tensor& ker, const Tensor& gout,
                     Tensor& gimg, Tensor& gker, Tensor& gbias) {
  const int ci_n = img.shape[0], h = img.shape[1], w = img.shape[2];
  const int co_n = ker.shape[0];
  if (gimg.shape != img.shape) gimg = Tensor(img.shape);
  if (gker.shape != ker.shape) gker = Tensor(ker.shape);
  if (gbias.shape != std::vector<int>{co_n}) gbias = Tensor({co_n});
  for (int co = 0; co < co_n; ++co) {
    double bacc = 0.0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double g = gout.at(co, y, x);
        bacc += g;
        if (g == 0.0) continue;
        for (int ci = 0; ci < ci_n; ++ci)
          for (int ky = 0; ky < 3; ++ky) {
            const int yy = y + ky - 1;
            if (yy < 0 || yy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int xx = x + kx - 1;
              if (xx < 0 || xx >= w) continue;
              const std::size_t ki = ((static_cast<std::size_t>(co) * ci_n + ci) * 3 + ky) * 3 + kx;
              gker.v[ki] += img.at(ci, yy, xx) * g;
              gimg.at(ci, yy, xx) += ker.v[ki] * g;
            }
          }
      }
    gbias.at(co) += bacc;
  }
}

void affine(const Tensor& w, const Tensor& b, const double* x, double* y) {
  const int out_n = w.shape[0], in_n = w.shape[1];
  for (int i = 0; i < out_n; ++i) {
    const double* row = &w.v[static_cast<std::size_t>(i) * in_n];
    double acc = 0.0;
    for (int j = 0; j < in_n; ++j) acc += row[j] * x[j];
    y[i] = acc + b.at(i);
  }
}

void matmul(const Tensor& a, const Tensor& b, Tensor& out) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: operands must be matrices");
  require(a.shape[1] == b.shape[0], "matmul: inner dimensions disagree, " + shape_str(a.shape) +
                                        " x " + shape_str(b.shape));
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  out = Tensor({m, n});
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const double av = a.at(i, p);
      if (av == 0.0) continue;
      for (int j = 0; j < n; ++j) out.at(i, j) += av * b.at(p, j);
    }
}

void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out) {
  require(a.rank() == 2 && b.rank() == 2, "matmul_nt: operands must be matrices");
  require(a.shape[1] == b.shape[1], "matmul_nt: inner dimensions disagree");
  const int m = a.shape[0], k = a.shape[1], n = b.shape[0];
  out = Tensor({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += a.at(i, p) * b.at(j, p);
      out.at(i, j) = acc;
    }
}

double logsumexp(const double* x, int n) {
  double mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  if (n == 1) return mx;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += std::exp(x[i] - mx);
  return mx + std::log(acc);
}

bool l2_normalize(const double* x, int n, double* y, double eps) {
  double ss = 0.0;
  for (int i = 0; i < n; ++i) ss += x[i] * x[i];
  const double norm = std::sqrt(ss);
  if (norm < eps) {
    const double u = 1.0 / std::sqrt(static_cast<double>(n));
    for (int i = 0; i < n; ++i) y[i] = u;
    return true;
  }
  const double inv = 1.0 / norm;
  for (int i = 0; i < n; ++i) y[i] = x[i] * inv;
  return false;
}

}  // namespace piars::grad::kernels
