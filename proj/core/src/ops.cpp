#include "mixacm/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <mutex>

#include "mixacm/error.hpp"

extern "C" void openblas_set_num_threads(int);

namespace mixacm {

namespace blas {

void dgemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
           const double* a, int lda, const double* b, int ldb, double beta,
           double* c, int ldc) {
  static std::once_flag once;
  std::call_once(once, [] { openblas_set_num_threads(1); });
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

}  // namespace blas

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

bool record_wanted(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

void mark_output(Tensor& y) { y.set_requires_grad(true); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor y(a.shape());
  auto ya = y.data();
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < ya.size(); ++i) ya[i] = da[i] + db[i];
  if (record_wanted({&a, &b})) {
    mark_output(y);
    Tensor ac = a, bc = b, yc = y;
    Tape::active()->record(y.id(), [ac, bc, yc]() mutable {
      auto g = yc.grad();
      if (ac.requires_grad()) {
        auto ga = ac.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bc.requires_grad()) {
        auto gb = bc.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor y(a.shape());
  auto ya = y.data();
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < ya.size(); ++i) ya[i] = da[i] - db[i];
  if (record_wanted({&a, &b})) {
    mark_output(y);
    Tensor ac = a, bc = b, yc = y;
    Tape::active()->record(y.id(), [ac, bc, yc]() mutable {
      auto g = yc.grad();
      if (ac.requires_grad()) {
        auto ga = ac.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bc.requires_grad()) {
        auto gb = bc.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor y(a.shape());
  auto ya = y.data();
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < ya.size(); ++i) ya[i] = da[i] * db[i];
  if (record_wanted({&a, &b})) {
    mark_output(y);
    Tensor ac = a, bc = b, yc = y;
    Tape::active()->record(y.id(), [ac, bc, yc]() mutable {
      auto g = yc.grad();
      auto da2 = ac.data(), db2 = bc.data();
      if (ac.requires_grad()) {
        auto ga = ac.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * db2[i];
      }
      if (bc.requires_grad()) {
        auto gb = bc.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * da2[i];
      }
    });
  }
  return y;
}

Tensor scalar_mul(const Tensor& a, double c) {
  Tensor y(a.shape());
  auto ya = y.data();
  auto da = a.data();
  for (std::size_t i = 0; i < ya.size(); ++i) ya[i] = da[i] * c;
  if (record_wanted({&a})) {
    mark_output(y);
    Tensor ac = a, yc = y;
    Tape::active()->record(y.id(), [ac, yc, c]() mutable {
      auto g = yc.grad();
      auto ga = ac.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
  }
  return y;
}

Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  auto yd = y.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  if (record_wanted({&x})) {
    mark_output(y);
    Tensor xc = x, yc = y;
    Tape::active()->record(y.id(), [xc, yc]() mutable {
      auto g = yc.grad();
      auto gx = xc.grad();
      auto xd2 = xc.data();
      // subgradient at exactly 0 is 0
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xd2[i] > 0.0) gx[i] += g[i];
    });
  }
  return y;
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw ConfigError("clamp: lo > hi");
  Tensor y(x.shape());
  auto yd = y.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] = std::min(hi, std::max(lo, xd[i]));
  if (record_wanted({&x})) {
    mark_output(y);
    Tensor xc = x, yc = y;
    Tape::active()->record(y.id(), [xc, yc, lo, hi]() mutable {
      auto g = yc.grad();
      auto gx = xc.grad();
      auto xd2 = xc.data();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xd2[i] >= lo && xd2[i] <= hi) gx[i] += g[i];
    });
  }
  return y;
}

Tensor sign(const Tensor& x) {
  Tensor y(x.shape());
  auto yd = y.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < yd.size(); ++i)
    yd[i] = xd[i] > 0.0 ? 1.0 : (xd[i] < 0.0 ? -1.0 : 0.0);
  if (record_wanted({&x})) {
    mark_output(y);
    Tensor yc = y;
    // piecewise constant: zero gradient, but keep the tape connected
    Tape::active()->record(y.id(), [yc]() mutable { (void)yc.grad(); });
  }
  return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul: expected rank-2 tensors, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  Tensor y(Shape{m, n});
  blas::dgemm(false, false, (int)m, (int)n, (int)k, 1.0, a.data().data(), (int)k,
              b.data().data(), (int)n, 0.0, y.data().data(), (int)n);
  if (record_wanted({&a, &b})) {
    mark_output(y);
    Tensor ac = a, bc = b, yc = y;
    Tape::active()->record(y.id(), [ac, bc, yc, m, n, k]() mutable {
      auto g = yc.grad();
      if (ac.requires_grad()) {
        // dA = G * B^T
        blas::dgemm(false, true, (int)m, (int)k, (int)n, 1.0, g.data(), (int)n,
                    bc.data().data(), (int)n, 1.0, ac.grad().data(), (int)k);
      }
      if (bc.requires_grad()) {
        // dB = A^T * G
        blas::dgemm(true, false, (int)k, (int)n, (int)m, 1.0, ac.data().data(), (int)k,
                    g.data(), (int)n, 1.0, bc.grad().data(), (int)n);
      }
    });
  }
  return y;
}

namespace {

struct ConvDims {
  std::size_t n, c, h, w, co, kh, kw, ho, wo;
  int stride, padding;
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernel, int stride, int padding) {
  if (input.rank() != 4 || kernel.rank() != 4)
    throw DimensionError("conv2d: expected NCHW input and [C_out,C,kH,kW] kernel");
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (padding < 0) throw ConfigError("conv2d: padding must be >= 0");
  ConvDims d;
  d.n = input.dim(0);
  d.c = input.dim(1);
  d.h = input.dim(2);
  d.w = input.dim(3);
  d.co = kernel.dim(0);
  d.kh = kernel.dim(2);
  d.kw = kernel.dim(3);
  d.stride = stride;
  d.padding = padding;
  if (kernel.dim(1) != d.c)
    throw DimensionError("conv2d: input has " + std::to_string(d.c) +
                         " channels but kernel expects " + std::to_string(kernel.dim(1)));
  if (d.kh > d.h + 2 * (std::size_t)padding || d.kw > d.w + 2 * (std::size_t)padding)
    throw DimensionError("conv2d: kernel larger than padded input");
  d.ho = (d.h + 2 * padding - d.kh) / stride + 1;
  d.wo = (d.w + 2 * padding - d.kw) / stride + 1;
  return d;
}

// cols: [C*kh*kw, N*Ho*Wo], row-major
std::vector<double> im2col(const Tensor& input, const ConvDims& d) {
  const std::size_t rows = d.c * d.kh * d.kw;
  const std::size_t positions = d.n * d.ho * d.wo;
  std::vector<double> cols(rows * positions, 0.0);
  auto x = input.data();
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      const double* xc = x.data() + (n * d.c + c) * d.h * d.w;
      for (std::size_t i = 0; i < d.kh; ++i) {
        for (std::size_t j = 0; j < d.kw; ++j) {
          const std::size_t row = (c * d.kh + i) * d.kw + j;
          double* out = cols.data() + row * positions + n * d.ho * d.wo;
          for (std::size_t ho = 0; ho < d.ho; ++ho) {
            const long hi = (long)ho * d.stride - d.padding + (long)i;
            if (hi < 0 || hi >= (long)d.h) continue;
            for (std::size_t wo = 0; wo < d.wo; ++wo) {
              const long wi = (long)wo * d.stride - d.padding + (long)j;
              if (wi < 0 || wi >= (long)d.w) continue;
              out[ho * d.wo + wo] = xc[hi * d.w + wi];
            }
          }
        }
      }
    }
  }
  return cols;
}

void col2im_accumulate(const std::vector<double>& cols, const ConvDims& d,
                       std::span<double> dx) {
  const std::size_t positions = d.n * d.ho * d.wo;
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      double* dxc = dx.data() + (n * d.c + c) * d.h * d.w;
      for (std::size_t i = 0; i < d.kh; ++i) {
        for (std::size_t j = 0; j < d.kw; ++j) {
          const std::size_t row = (c * d.kh + i) * d.kw + j;
          const double* in = cols.data() + row * positions + n * d.ho * d.wo;
          for (std::size_t ho = 0; ho < d.ho; ++ho) {
            const long hi = (long)ho * d.stride - d.padding + (long)i;
            if (hi < 0 || hi >= (long)d.h) continue;
            for (std::size_t wo = 0; wo < d.wo; ++wo) {
              const long wi = (long)wo * d.stride - d.padding + (long)j;
              if (wi < 0 || wi >= (long)d.w) continue;
              dxc[hi * d.w + wi] += in[ho * d.wo + wo];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
  const ConvDims d = conv_dims(input, kernel, stride, padding);
  const std::size_t rows = d.c * d.kh * d.kw;
  const std::size_t positions = d.n * d.ho * d.wo;
  std::vector<double> cols = im2col(input, d);
  // O2d[Co, positions] = K[Co, rows] * cols
  std::vector<double> o2d(d.co * positions);
  blas::dgemm(false, false, (int)d.co, (int)positions, (int)rows, 1.0,
              kernel.data().data(), (int)rows, cols.data(), (int)positions, 0.0,
              o2d.data(), (int)positions);
  Tensor y(Shape{d.n, d.co, d.ho, d.wo});
  auto yd = y.data();
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t co = 0; co < d.co; ++co) {
      const double* src = o2d.data() + co * positions + n * d.ho * d.wo;
      double* dst = yd.data() + (n * d.co + co) * d.ho * d.wo;
      std::copy(src, src + d.ho * d.wo, dst);
    }
  if (record_wanted({&input, &kernel})) {
    mark_output(y);
    Tensor xc = input, kc = kernel, yc = y;
    Tape::active()->record(
        y.id(), [xc, kc, yc, d, cols = std::move(cols), rows, positions]() mutable {
          auto g = yc.grad();
          // gather to [Co, positions]
          std::vector<double> g2d(d.co * positions);
          for (std::size_t n = 0; n < d.n; ++n)
            for (std::size_t co = 0; co < d.co; ++co) {
              const double* src = g.data() + (n * d.co + co) * d.ho * d.wo;
              double* dst = g2d.data() + co * positions + n * d.ho * d.wo;
              std::copy(src, src + d.ho * d.wo, dst);
            }
          if (kc.requires_grad()) {
            // dK = G2d * cols^T
            blas::dgemm(false, true, (int)d.co, (int)rows, (int)positions, 1.0,
                        g2d.data(), (int)positions, cols.data(), (int)positions, 1.0,
                        kc.grad().data(), (int)rows);
          }
          if (xc.requires_grad()) {
            // dcols = K^T * G2d, then scatter back
            std::vector<double> dcols(rows * positions);
            blas::dgemm(true, false, (int)rows, (int)positions, (int)d.co, 1.0,
                        kc.data().data(), (int)rows, g2d.data(), (int)positions, 0.0,
                        dcols.data(), (int)positions);
            col2im_accumulate(dcols, d, xc.grad());
          }
        });
  }
  return y;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 4 || bias.rank() != 1 || bias.dim(0) != x.dim(1))
    throw DimensionError("add_channel_bias: need NCHW and [C] bias, got " +
                         shape_str(x.shape()) + " + " + shape_str(bias.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor y(x.shape());
  auto yd = y.data();
  auto xd = x.data();
  auto bd = bias.data();
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t ci = 0; ci < c; ++ci) {
      const double b = bd[ci];
      const std::size_t base = (ni * c + ci) * hw;
      for (std::size_t p = 0; p < hw; ++p) yd[base + p] = xd[base + p] + b;
    }
  if (record_wanted({&x, &bias})) {
    mark_output(y);
    Tensor xc = x, bc = bias, yc = y;
    Tape::active()->record(y.id(), [xc, bc, yc, n, c, hw]() mutable {
      auto g = yc.grad();
      if (xc.requires_grad()) {
        auto gx = xc.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bc.requires_grad()) {
        auto gb = bc.grad();
        for (std::size_t ni = 0; ni < n; ++ni)
          for (std::size_t ci = 0; ci < c; ++ci) {
            const std::size_t base = (ni * c + ci) * hw;
            double s = 0.0;
            for (std::size_t p = 0; p < hw; ++p) s += g[base + p];
            gb[ci] += s;
          }
      }
    });
  }
  return y;
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1))
    throw DimensionError("add_row_bias: need [N,K] and [K] bias, got " +
                         shape_str(x.shape()) + " + " + shape_str(bias.shape()));
  const std::size_t n = x.dim(0), k = x.dim(1);
  Tensor y(x.shape());
  auto yd = y.data();
  auto xd = x.data();
  auto bd = bias.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) yd[i * k + j] = xd[i * k + j] + bd[j];
  if (record_wanted({&x, &bias})) {
    mark_output(y);
    Tensor xc = x, bc = bias, yc = y;
    Tape::active()->record(y.id(), [xc, bc, yc, n, k]() mutable {
      auto g = yc.grad();
      if (xc.requires_grad()) {
        auto gx = xc.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bc.requires_grad()) {
        auto gb = bc.grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < k; ++j) gb[j] += g[i * k + j];
      }
    });
  }
  return y;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor y = Tensor::scalar(s);
  if (record_wanted({&x})) {
    mark_output(y);
    Tensor xc = x, yc = y;
    Tape::active()->record(y.id(), [xc, yc]() mutable {
      const double g = yc.grad()[0];
      auto gx = xc.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return y;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean: empty tensor");
  double s = 0.0;
  for (double v : x.data()) s += v;
  const double inv = 1.0 / (double)x.numel();
  Tensor y = Tensor::scalar(s * inv);
  if (record_wanted({&x})) {
    mark_output(y);
    Tensor xc = x, yc = y;
    Tape::active()->record(y.id(), [xc, yc, inv]() mutable {
      const double g = yc.grad()[0] * inv;
      auto gx = xc.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return y;
}

Tensor l2_norm(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v * v;
  const double r = std::sqrt(s);
  Tensor y = Tensor::scalar(r);
  if (record_wanted({&x})) {
    mark_output(y);
    Tensor xc = x, yc = y;
    Tape::active()->record(y.id(), [xc, yc, r]() mutable {
      if (r == 0.0) return;  // subgradient 0 at the origin
      const double g = yc.grad()[0] / r;
      auto gx = xc.grad();
      auto xd = xc.data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * xd[i];
    });
  }
  return y;
}

Tensor spatial_max(const Tensor& x) {
  if (x.rank() != 4)
    throw DimensionError("spatial_max: expected NCHW, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (hw == 0) throw DimensionError("spatial_max: empty spatial extent");
  Tensor y(Shape{n, c});
  std::vector<std::size_t> argmax(n * c);
  auto yd = y.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < n * c; ++i) {
    const double* row = xd.data() + i * hw;
    std::size_t best = 0;
    for (std::size_t p = 1; p < hw; ++p)
      if (row[p] > row[best]) best = p;  // first argmax wins on ties
    yd[i] = row[best];
    argmax[i] = best;
  }
  if (record_wanted({&x})) {
    mark_output(y);
    Tensor xc = x, yc = y;
    Tape::active()->record(y.id(), [xc, yc, hw, argmax = std::move(argmax)]() mutable {
      auto g = yc.grad();
      auto gx = xc.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i * hw + argmax[i]] += g[i];
    });
  }
  return y;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4)
    throw DimensionError("global_avg_pool: expected NCHW, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (hw == 0) throw DimensionError("global_avg_pool: empty spatial extent");
  const double inv = 1.0 / (double)hw;
  Tensor y(Shape{n, c});
  auto yd = y.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < n * c; ++i) {
    double s = 0.0;
    const double* row = xd.data() + i * hw;
    for (std::size_t p = 0; p < hw; ++p) s += row[p];
    yd[i] = s * inv;
  }
  if (record_wanted({&x})) {
    mark_output(y);
    Tensor xc = x, yc = y;
    Tape::active()->record(y.id(), [xc, yc, hw, inv]() mutable {
      auto g = yc.grad();
      auto gx = xc.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double gi = g[i] * inv;
        double* row = gx.data() + i * hw;
        for (std::size_t p = 0; p < hw; ++p) row[p] += gi;
      }
    });
  }
  return y;
}

namespace {

void require_rows(const Tensor& x, const char* op) {
  if (x.rank() != 2)
    throw DimensionError(std::string(op) + ": expected [N,K], got " + shape_str(x.shape()));
}

}  // namespace

Tensor softmax(const Tensor& x) {
  require_rows(x, "softmax");
  const std::size_t n = x.dim(0), k = x.dim(1);
  Tensor y(x.shape());
  auto yd = y.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xd.data() + i * k;
    double mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j < k; ++j) yd[i * k + j] = std::exp(row[j] - mx) * inv;
  }
  if (record_wanted({&x})) {
    mark_output(y);
    Tensor xc = x, yc = y;
    Tape::active()->record(y.id(), [xc, yc, n, k]() mutable {
      auto g = yc.grad();
      auto gx = xc.grad();
      auto yd2 = yc.data();
      for (std::size_t i = 0; i < n; ++i) {
        const double* gr = g.data() + i * k;
        const double* yr = yd2.data() + i * k;
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += gr[j] * yr[j];
        for (std::size_t j = 0; j < k; ++j) gx[i * k + j] += yr[j] * (gr[j] - dot);
      }
    });
  }
  return y;
}

Tensor log_softmax(const Tensor& x) {
  require_rows(x, "log_softmax");
  const std::size_t n = x.dim(0), k = x.dim(1);
  Tensor y(x.shape());
  auto yd = y.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xd.data() + i * k;
    double mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < k; ++j) yd[i * k + j] = row[j] - lse;
  }
  if (record_wanted({&x})) {
    mark_output(y);
    Tensor xc = x, yc = y;
    Tape::active()->record(y.id(), [xc, yc, n, k]() mutable {
      auto g = yc.grad();
      auto gx = xc.grad();
      auto yd2 = yc.data();
      for (std::size_t i = 0; i < n; ++i) {
        const double* gr = g.data() + i * k;
        const double* yr = yd2.data() + i * k;
        double gsum = 0.0;
        for (std::size_t j = 0; j < k; ++j) gsum += gr[j];
        for (std::size_t j = 0; j < k; ++j)
          gx[i * k + j] += gr[j] - std::exp(yr[j]) * gsum;
      }
    });
  }
  return y;
}

Tensor row_l2_normalize(const Tensor& x) {
  require_rows(x, "row_l2_normalize");
  const std::size_t n = x.dim(0), k = x.dim(1);
  constexpr double kDeadRowNorm = 1e-12;
  Tensor y(x.shape());
  std::vector<double> norms(n);
  auto yd = y.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xd.data() + i * k;
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += row[j] * row[j];
    const double r = std::sqrt(s);
    norms[i] = r;
    if (r < kDeadRowNorm) {
      for (std::size_t j = 0; j < k; ++j) yd[i * k + j] = 0.0;
    } else {
      const double inv = 1.0 / r;
      for (std::size_t j = 0; j < k; ++j) yd[i * k + j] = row[j] * inv;
    }
  }
  if (record_wanted({&x})) {
    mark_output(y);
    Tensor xc = x, yc = y;
    Tape::active()->record(y.id(), [xc, yc, n, k, norms = std::move(norms)]() mutable {
      auto g = yc.grad();
      auto gx = xc.grad();
      auto yd2 = yc.data();
      for (std::size_t i = 0; i < n; ++i) {
        const double r = norms[i];
        if (r < kDeadRowNorm) continue;  // dead rows get zero gradient
        const double* gr = g.data() + i * k;
        const double* yr = yd2.data() + i * k;
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += gr[j] * yr[j];
        const double inv = 1.0 / r;
        for (std::size_t j = 0; j < k; ++j)
          gx[i * k + j] += (gr[j] - yr[j] * dot) * inv;
      }
    });
  }
  return y;
}

Tensor adaptive_max_pool_1d(const Tensor& x, std::size_t out_channels) {
  require_rows(x, "adaptive_max_pool_1d");
  if (out_channels == 0) throw ConfigError("adaptive_max_pool_1d: out_channels must be >= 1");
  const std::size_t n = x.dim(0), cin = x.dim(1);
  Tensor y(Shape{n, out_channels});
  std::vector<std::size_t> argmax(n * out_channels);
  auto yd = y.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xd.data() + i * cin;
    for (std::size_t o = 0; o < out_channels; ++o) {
      const std::size_t lo = o * cin / out_channels;
      const std::size_t hi = ((o + 1) * cin + out_channels - 1) / out_channels;  // ceil
      std::size_t best = lo;
      for (std::size_t j = lo + 1; j < hi; ++j)
        if (row[j] > row[best]) best = j;
      yd[i * out_channels + o] = row[best];
      argmax[i * out_channels + o] = best;
    }
  }
  if (record_wanted({&x})) {
    mark_output(y);
    Tensor xc = x, yc = y;
    Tape::active()->record(
        y.id(), [xc, yc, cin, out_channels, argmax = std::move(argmax)]() mutable {
          auto g = yc.grad();
          auto gx = xc.grad();
          const std::size_t n2 = yc.dim(0);
          for (std::size_t i = 0; i < n2 * out_channels; ++i)
            gx[(i / out_channels) * cin + argmax[i]] += g[i];
        });
  }
  return y;
}

}  // namespace mixacm
