// Copyright 2026 The sedtune Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "sedtune/ops.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "sedtune/error.hpp"

namespace sedtune::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;
using Stride = Eigen::OuterStride<>;
using SMapM = Eigen::Map<RowMat, 0, Stride>;
using CSMapM = Eigen::Map<const RowMat, 0, Stride>;

constexpr double kProbClamp = 1e-7;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  SEDTUNE_REQUIRE(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                              shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void column_sums(const double* src, std::size_t rows, std::size_t cols, double* dst) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = src + r * cols;
    for (std::size_t c = 0; c < cols; ++c) dst[c] += row[c];
  }
}

template <typename F>
Var unary(const Var& x, F&& f, std::function<void(const Tensor&, const Tensor&, const Tensor&, Tensor&)> grad_fn,
          bool keep_output = false) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  auto out_copy = std::make_shared<Tensor>();
  if (keep_output && grad_enabled()) *out_copy = out;
  return make_result(std::move(out), {x}, [x, out_copy, grad_fn](const Tensor& g) mutable {
    Tensor gx(x.shape());
    grad_fn(x.value(), *out_copy, g, gx);
    x.accumulate(gx);
  });
}

// Patch matrix for one image: row (h*W+w), column (kh*3+kw)*C+c.
void im2col(const double* img, std::size_t H, std::size_t W, std::size_t C, double* col) {
  const std::size_t K = 9 * C;
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t w = 0; w < W; ++w) {
      double* dst = col + (h * W + w) * K;
      for (int kh = 0; kh < 3; ++kh) {
        const long ih = static_cast<long>(h) + kh - 1;
        for (int kw = 0; kw < 3; ++kw) {
          const long iw = static_cast<long>(w) + kw - 1;
          double* d = dst + (kh * 3 + kw) * C;
          if (ih < 0 || iw < 0 || ih >= static_cast<long>(H) || iw >= static_cast<long>(W)) {
            std::fill(d, d + C, 0.0);
          } else {
            const double* s = img + (static_cast<std::size_t>(ih) * W + static_cast<std::size_t>(iw)) * C;
            std::copy(s, s + C, d);
          }
        }
      }
    }
  }
}

void col2im(const double* col, std::size_t H, std::size_t W, std::size_t C, double* img) {
  const std::size_t K = 9 * C;
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t w = 0; w < W; ++w) {
      const double* src = col + (h * W + w) * K;
      for (int kh = 0; kh < 3; ++kh) {
        const long ih = static_cast<long>(h) + kh - 1;
        if (ih < 0 || ih >= static_cast<long>(H)) continue;
        for (int kw = 0; kw < 3; ++kw) {
          const long iw = static_cast<long>(w) + kw - 1;
          if (iw < 0 || iw >= static_cast<long>(W)) continue;
          const double* s = src + (kh * 3 + kw) * C;
          double* d = img + (static_cast<std::size_t>(ih) * W + static_cast<std::size_t>(iw)) * C;
          for (std::size_t c = 0; c < C; ++c) d[c] += s[c];
        }
      }
    }
  }
}

void softmax_rows(RowMat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    double mx = m(r, 0);
    for (Eigen::Index c = 1; c < m.cols(); ++c) mx = std::max(mx, m(r, c));
    double sum = 0.0;
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      m(r, c) = std::exp(m(r, c) - mx);
      sum += m(r, c);
    }
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) /= sum;
  }
}

double sigm(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result(std::move(out), {a, b}, [a, b](const Tensor& g) mutable {
    a.accumulate(g);
    b.accumulate(g);
  });
}

Var add_constant(const Var& x, const Tensor& c) {
  const std::size_t n = c.size();
  SEDTUNE_REQUIRE(n > 0 && x.value().size() % n == 0, "add_constant: incompatible shapes");
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i % n];
  return make_result(std::move(out), {x}, [x](const Tensor& g) mutable { x.accumulate(g); });
}

Var add_broadcast(const Var& x, const Var& b) {
  const std::size_t n = b.value().size();
  SEDTUNE_REQUIRE(n > 0 && x.value().size() % n == 0, "add_broadcast: incompatible shapes");
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i % n];
  return make_result(std::move(out), {x, b}, [x, b, n](const Tensor& g) mutable {
    x.accumulate(g);
    if (b.requires_grad()) {
      Tensor gb(b.shape());
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
      b.accumulate(gb);
    }
  });
}

Var scale(const Var& x, double s) {
  Tensor out = x.value();
  for (auto& v : out.values()) v *= s;
  return make_result(std::move(out), {x}, [x, s](const Tensor& g) mutable {
    Tensor gx = g;
    for (auto& v : gx.values()) v *= s;
    x.accumulate(gx);
  });
}

Var add_scaled(const Var& a, double w, const Var& b) {
  SEDTUNE_REQUIRE(a.value().size() == 1 && b.value().size() == 1, "add_scaled: scalars only");
  Tensor out({}, a.value()[0] + w * b.value()[0]);
  return make_result(std::move(out), {a, b}, [a, b, w](const Tensor& g) mutable {
    a.accumulate(g);
    Tensor gb({}, w * g[0]);
    b.accumulate(gb);
  });
}

Var relu(const Var& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](const Tensor& xv, const Tensor&, const Tensor& g, Tensor& gx) {
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = xv[i] > 0.0 ? g[i] : 0.0;
      });
}

Var gelu(const Var& x) {
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); },
      [](const Tensor& xv, const Tensor&, const Tensor& g, Tensor& gx) {
        for (std::size_t i = 0; i < gx.size(); ++i) {
          const double v = xv[i];
          const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
          const double pdf = std::exp(-0.5 * v * v) * 0.3989422804014327;
          gx[i] = g[i] * (cdf + v * pdf);
        }
      });
}

Var sigmoid(const Var& x) {
  return unary(
      x, [](double v) { return sigm(v); },
      [](const Tensor&, const Tensor& out, const Tensor& g, Tensor& gx) {
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[i] * out[i] * (1.0 - out[i]);
      },
      true);
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Shape& xs = x.shape();
  SEDTUNE_REQUIRE(!xs.empty() && w.shape().size() == 2 && xs.back() == w.dim(0),
                  "linear: input " + shape_str(xs) + " incompatible with weight " +
                      shape_str(w.shape()));
  const std::size_t K = w.dim(0), M = w.dim(1), R = x.value().size() / K;
  if (b.defined()) SEDTUNE_REQUIRE(b.value().size() == M, "linear: bias size mismatch");
  Shape os = xs;
  os.back() = M;
  Tensor out(os);
  MapM(out.data(), R, M).noalias() = CMapM(x.value().data(), R, K) * CMapM(w.value().data(), K, M);
  if (b.defined()) {
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t m = 0; m < M; ++m) out[r * M + m] += b.value()[m];
  }
  std::vector<Var> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_result(std::move(out), std::move(inputs), [x, w, b, K, M, R](const Tensor& g) mutable {
    CMapM gm(g.data(), R, M);
    if (x.requires_grad()) {
      Tensor gx(x.shape());
      MapM(gx.data(), R, K).noalias() = gm * CMapM(w.value().data(), K, M).transpose();
      x.accumulate(gx);
    }
    if (w.requires_grad()) {
      Tensor gw(w.shape());
      MapM(gw.data(), K, M).noalias() = CMapM(x.value().data(), R, K).transpose() * gm;
      w.accumulate(gw);
    }
    if (b.defined() && b.requires_grad()) {
      Tensor gb(b.shape());
      column_sums(g.data(), R, M, gb.data());
      b.accumulate(gb);
    }
  });
}

Var conv3x3(const Var& x, const Var& w, const Var& b) {
  const Shape& xs = x.shape();
  SEDTUNE_REQUIRE(xs.size() == 4, "conv3x3: expected [N,H,W,C] input, got " + shape_str(xs));
  const std::size_t N = xs[0], H = xs[1], W = xs[2], C = xs[3];
  const std::size_t K = 9 * C;
  SEDTUNE_REQUIRE(w.shape().size() == 2 && w.dim(0) == K, "conv3x3: weight must be [9*C, Co]");
  const std::size_t Co = w.dim(1);
  SEDTUNE_REQUIRE(b.value().size() == Co, "conv3x3: bias size mismatch");
  const std::size_t P = H * W;

  Tensor out({N, H, W, Co});
  Buffer col(P * K);
  for (std::size_t n = 0; n < N; ++n) {
    im2col(x.value().data() + n * P * C, H, W, C, col.data());
    MapM y(out.data() + n * P * Co, P, Co);
    y.noalias() = CMapM(col.data(), P, K) * CMapM(w.value().data(), K, Co);
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t c = 0; c < Co; ++c) y(p, c) += b.value()[c];
  }
  return make_result(std::move(out), {x, w, b}, [x, w, b, N, H, W, C, K, Co, P](const Tensor& g) mutable {
    Buffer col(P * K);
    Tensor gw(w.shape());
    Tensor gb(b.shape());
    Tensor gx;
    if (x.requires_grad()) gx = Tensor(x.shape());
    CMapM wm(w.value().data(), K, Co);
    for (std::size_t n = 0; n < N; ++n) {
      CMapM gy(g.data() + n * P * Co, P, Co);
      if (w.requires_grad()) {
        im2col(x.value().data() + n * P * C, H, W, C, col.data());
        MapM(gw.data(), K, Co).noalias() += CMapM(col.data(), P, K).transpose() * gy;
      }
      if (x.requires_grad()) {
        MapM(col.data(), P, K).noalias() = gy * wm.transpose();
        col2im(col.data(), H, W, C, gx.data() + n * P * C);
      }
    }
    column_sums(g.data(), N * P, Co, gb.data());
    if (x.requires_grad()) x.accumulate(gx);
    w.accumulate(gw);
    b.accumulate(gb);
  });
}

Var avg_pool2d(const Var& x, std::size_t ph, std::size_t pw) {
  const Shape& xs = x.shape();
  SEDTUNE_REQUIRE(xs.size() == 4 && ph >= 1 && pw >= 1, "avg_pool2d: expected [N,H,W,C]");
  const std::size_t N = xs[0], H = xs[1], W = xs[2], C = xs[3];
  const std::size_t Ho = H / ph, Wo = W / pw;
  SEDTUNE_REQUIRE(Ho >= 1 && Wo >= 1, "avg_pool2d: input " + shape_str(xs) + " smaller than pool window");
  const double inv = 1.0 / static_cast<double>(ph * pw);
  Tensor out({N, Ho, Wo, C});
  const double* xv = x.value().data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Wo; ++j) {
        double* d = out.data() + ((n * Ho + i) * Wo + j) * C;
        for (std::size_t a = 0; a < ph; ++a)
          for (std::size_t bb = 0; bb < pw; ++bb) {
            const double* s = xv + ((n * H + i * ph + a) * W + j * pw + bb) * C;
            for (std::size_t c = 0; c < C; ++c) d[c] += s[c];
          }
        for (std::size_t c = 0; c < C; ++c) d[c] *= inv;
      }
  return make_result(std::move(out), {x}, [x, N, H, W, C, Ho, Wo, ph, pw, inv](const Tensor& g) mutable {
    Tensor gx(x.shape());
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          const double* s = g.data() + ((n * Ho + i) * Wo + j) * C;
          for (std::size_t a = 0; a < ph; ++a)
            for (std::size_t bb = 0; bb < pw; ++bb) {
              double* d = gx.data() + ((n * H + i * ph + a) * W + j * pw + bb) * C;
              for (std::size_t c = 0; c < C; ++c) d[c] += s[c] * inv;
            }
        }
    x.accumulate(gx);
  });
}

Var layer_norm(const Var& x, std::size_t group, const Var& gamma, const Var& beta, double eps) {
  const Shape& xs = x.shape();
  const std::size_t C = xs.back();
  const std::size_t total = x.value().size();
  SEDTUNE_REQUIRE(group > 0 && group % C == 0 && total % group == 0,
                  "layer_norm: group must be a multiple of the last dim");
  SEDTUNE_REQUIRE(gamma.value().size() == C && beta.value().size() == C,
                  "layer_norm: affine parameters must match last dim");
  const std::size_t G = total / group;
  auto xhat = std::make_shared<Tensor>(xs);
  auto rstd = std::make_shared<std::vector<double>>(G);
  Tensor out(xs);
  const double* xv = x.value().data();
  for (std::size_t gi = 0; gi < G; ++gi) {
    const double* s = xv + gi * group;
    double mean = 0.0;
    for (std::size_t i = 0; i < group; ++i) mean += s[i];
    mean /= static_cast<double>(group);
    double var = 0.0;
    for (std::size_t i = 0; i < group; ++i) var += (s[i] - mean) * (s[i] - mean);
    var /= static_cast<double>(group);
    const double r = 1.0 / std::sqrt(var + eps);
    (*rstd)[gi] = r;
    double* xh = xhat->data() + gi * group;
    double* o = out.data() + gi * group;
    for (std::size_t i = 0; i < group; ++i) {
      xh[i] = (s[i] - mean) * r;
      o[i] = xh[i] * gamma.value()[i % C] + beta.value()[i % C];
    }
  }
  return make_result(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, xhat, rstd, group, C, G](const Tensor& g) mutable {
                       Tensor gg(gamma.shape()), gbeta(beta.shape());
                       Tensor gx(x.shape());
                       std::vector<double> dxh(group);
                       for (std::size_t gi = 0; gi < G; ++gi) {
                         const double* go = g.data() + gi * group;
                         const double* xh = xhat->data() + gi * group;
                         double mean_d = 0.0, mean_dx = 0.0;
                         for (std::size_t i = 0; i < group; ++i) {
                           gg[i % C] += go[i] * xh[i];
                           gbeta[i % C] += go[i];
                           dxh[i] = go[i] * gamma.value()[i % C];
                           mean_d += dxh[i];
                           mean_dx += dxh[i] * xh[i];
                         }
                         mean_d /= static_cast<double>(group);
                         mean_dx /= static_cast<double>(group);
                         double* d = gx.data() + gi * group;
                         const double r = (*rstd)[gi];
                         for (std::size_t i = 0; i < group; ++i)
                           d[i] = r * (dxh[i] - mean_d - xh[i] * mean_dx);
                       }
                       x.accumulate(gx);
                       gamma.accumulate(gg);
                       beta.accumulate(gbeta);
                     });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_result(std::move(out), {x}, [x](const Tensor& g) mutable {
    x.accumulate(g.reshaped(x.shape()));
  });
}

Var concat_last(const Var& a, const Var& b) {
  Shape as = a.shape(), bs = b.shape();
  SEDTUNE_REQUIRE(as.size() == bs.size() && !as.empty() &&
                      std::equal(as.begin(), as.end() - 1, bs.begin()),
                  "concat_last: leading dims differ: " + shape_str(as) + " vs " + shape_str(bs));
  const std::size_t Da = as.back(), Db = bs.back(), R = a.value().size() / Da;
  Shape os = as;
  os.back() = Da + Db;
  Tensor out(os);
  for (std::size_t r = 0; r < R; ++r) {
    std::copy_n(a.value().data() + r * Da, Da, out.data() + r * (Da + Db));
    std::copy_n(b.value().data() + r * Db, Db, out.data() + r * (Da + Db) + Da);
  }
  return make_result(std::move(out), {a, b}, [a, b, Da, Db, R](const Tensor& g) mutable {
    Tensor ga(a.shape()), gb(b.shape());
    for (std::size_t r = 0; r < R; ++r) {
      std::copy_n(g.data() + r * (Da + Db), Da, ga.data() + r * Da);
      std::copy_n(g.data() + r * (Da + Db) + Da, Db, gb.data() + r * Db);
    }
    a.accumulate(ga);
    b.accumulate(gb);
  });
}

Var select_rows(const Var& x, std::span<const std::size_t> rows) {
  const Shape& xs = x.shape();
  SEDTUNE_REQUIRE(!xs.empty(), "select_rows: scalar input");
  const std::size_t stride = xs[0] ? x.value().size() / xs[0] : 0;
  Shape os = xs;
  os[0] = rows.size();
  Tensor out(os);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    SEDTUNE_REQUIRE(rows[i] < xs[0], "select_rows: index out of range");
    std::copy_n(x.value().data() + rows[i] * stride, stride, out.data() + i * stride);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result(std::move(out), {x}, [x, idx, stride](const Tensor& g) mutable {
    Tensor gx(x.shape());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* d = gx.data() + idx[i] * stride;
      const double* s = g.data() + i * stride;
      for (std::size_t k = 0; k < stride; ++k) d[k] += s[k];
    }
    x.accumulate(gx);
  });
}

Var self_attention(const Var& qkv, std::size_t heads) {
  const Shape& s = qkv.shape();
  SEDTUNE_REQUIRE(s.size() == 3 && s[2] % 3 == 0, "self_attention: expected [N,T,3D]");
  const std::size_t N = s[0], T = s[1], D = s[2] / 3;
  SEDTUNE_REQUIRE(heads >= 1 && D % heads == 0, "self_attention: width not divisible by heads");
  const std::size_t dh = D / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const long ld = static_cast<long>(3 * D);

  Tensor out({N, T, D});
  RowMat P(T, T);
  for (std::size_t n = 0; n < N; ++n) {
    const double* base = qkv.value().data() + n * T * 3 * D;
    for (std::size_t h = 0; h < heads; ++h) {
      CSMapM Q(base + h * dh, T, dh, Stride(ld));
      CSMapM K(base + D + h * dh, T, dh, Stride(ld));
      CSMapM V(base + 2 * D + h * dh, T, dh, Stride(ld));
      P.noalias() = (Q * K.transpose()) * sc;
      softmax_rows(P);
      SMapM O(out.data() + n * T * D + h * dh, T, dh, Stride(static_cast<long>(D)));
      O.noalias() = P * V;
    }
  }
  return make_result(std::move(out), {qkv}, [qkv, N, T, D, dh, heads, sc, ld](const Tensor& g) mutable {
    Tensor gq(qkv.shape());
    RowMat P(T, T), dP(T, T);
    for (std::size_t n = 0; n < N; ++n) {
      const double* base = qkv.value().data() + n * T * 3 * D;
      double* gbase = gq.data() + n * T * 3 * D;
      for (std::size_t h = 0; h < heads; ++h) {
        CSMapM Q(base + h * dh, T, dh, Stride(ld));
        CSMapM K(base + D + h * dh, T, dh, Stride(ld));
        CSMapM V(base + 2 * D + h * dh, T, dh, Stride(ld));
        CSMapM dO(g.data() + n * T * D + h * dh, T, dh, Stride(static_cast<long>(D)));
        P.noalias() = (Q * K.transpose()) * sc;
        softmax_rows(P);
        SMapM dV(gbase + 2 * D + h * dh, T, dh, Stride(ld));
        dV.noalias() += P.transpose() * dO;
        dP.noalias() = dO * V.transpose();
        for (std::size_t r = 0; r < T; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < T; ++c) dot += dP(r, c) * P(r, c);
          for (std::size_t c = 0; c < T; ++c) dP(r, c) = P(r, c) * (dP(r, c) - dot) * sc;
        }
        SMapM dQ(gbase + h * dh, T, dh, Stride(ld));
        SMapM dK(gbase + D + h * dh, T, dh, Stride(ld));
        dQ.noalias() += dP * K;
        dK.noalias() += dP.transpose() * Q;
      }
    }
    qkv.accumulate(gq);
  });
}

Var gru(const Var& x, const Var& wx, const Var& wh, const Var& bx, const Var& bh, bool reverse) {
  const Shape& xs = x.shape();
  SEDTUNE_REQUIRE(xs.size() == 3, "gru: expected [N,T,D] input");
  const std::size_t N = xs[0], T = xs[1], D = xs[2];
  SEDTUNE_REQUIRE(wx.shape().size() == 2 && wx.dim(0) == D && wx.dim(1) % 3 == 0,
                  "gru: input weight must be [D, 3H]");
  const std::size_t H = wx.dim(1) / 3;
  SEDTUNE_REQUIRE(wh.shape() == (Shape{H, 3 * H}) && bx.value().size() == 3 * H &&
                      bh.value().size() == 3 * H,
                  "gru: recurrent parameter shapes inconsistent");
  const std::size_t G = 3 * H;

  // Input projections for all steps at once: row (n*T + t).
  auto xp = std::make_shared<Tensor>(Shape{N * T, G});
  MapM(xp->data(), N * T, G).noalias() = CMapM(x.value().data(), N * T, D) * CMapM(wx.value().data(), D, G);
  for (std::size_t r = 0; r < N * T; ++r)
    for (std::size_t k = 0; k < G; ++k) (*xp)[r * G + k] += bx.value()[k];

  // Per step caches, indexed by processing step s.
  auto hs = std::make_shared<Tensor>(Shape{T + 1, N, H});
  auto rg = std::make_shared<Tensor>(Shape{T, N, H});
  auto zg = std::make_shared<Tensor>(Shape{T, N, H});
  auto ng = std::make_shared<Tensor>(Shape{T, N, H});
  auto hn = std::make_shared<Tensor>(Shape{T, N, H});
  Tensor out({N, T, H});
  RowMat hp(N, G);
  CMapM whm(wh.value().data(), H, G);
  for (std::size_t s = 0; s < T; ++s) {
    const std::size_t t = reverse ? T - 1 - s : s;
    CMapM hprev(hs->data() + s * N * H, N, H);
    hp.noalias() = hprev * whm;
    double* hnext = hs->data() + (s + 1) * N * H;
    for (std::size_t i = 0; i < N; ++i) {
      const double* xr = xp->data() + (i * T + t) * G;
      for (std::size_t j = 0; j < H; ++j) {
        const double hr = hp(i, j) + bh.value()[j];
        const double hz = hp(i, H + j) + bh.value()[H + j];
        const double hcand = hp(i, 2 * H + j) + bh.value()[2 * H + j];
        const double r = sigm(xr[j] + hr);
        const double z = sigm(xr[H + j] + hz);
        const double nn = std::tanh(xr[2 * H + j] + r * hcand);
        const double hv = (1.0 - z) * nn + z * hprev(i, j);
        const std::size_t k = (s * N + i) * H + j;
        (*rg)[k] = r;
        (*zg)[k] = z;
        (*ng)[k] = nn;
        (*hn)[k] = hcand;
        hnext[i * H + j] = hv;
        out[(i * T + t) * H + j] = hv;
      }
    }
  }
  return make_result(
      std::move(out), {x, wx, wh, bx, bh},
      [x, wx, wh, bx, bh, hs, rg, zg, ng, hn, N, T, D, H, G, reverse](const Tensor& g) mutable {
        Tensor dxp({N * T, G});
        Tensor gwh(wh.shape()), gbh(bh.shape());
        RowMat dh(N, H), dh_next = RowMat::Zero(N, H), dhp(N, G);
        CMapM whm(wh.value().data(), H, G);
        for (std::size_t s = T; s-- > 0;) {
          const std::size_t t = reverse ? T - 1 - s : s;
          const double* hprev = hs->data() + s * N * H;
          for (std::size_t i = 0; i < N; ++i) {
            for (std::size_t j = 0; j < H; ++j) {
              const std::size_t k = (s * N + i) * H + j;
              const double r = (*rg)[k], z = (*zg)[k], nn = (*ng)[k], hc = (*hn)[k];
              const double dhv = g[(i * T + t) * H + j] + dh_next(i, j);
              const double dn = dhv * (1.0 - z);
              const double dz = dhv * (hprev[i * H + j] - nn);
              dh(i, j) = dhv * z;
              const double dn_pre = dn * (1.0 - nn * nn);
              const double dr = dn_pre * hc;
              const double dz_pre = dz * z * (1.0 - z);
              const double dr_pre = dr * r * (1.0 - r);
              double* dx = dxp.data() + (i * T + t) * G;
              dx[j] = dr_pre;
              dx[H + j] = dz_pre;
              dx[2 * H + j] = dn_pre;
              dhp(i, j) = dr_pre;
              dhp(i, H + j) = dz_pre;
              dhp(i, 2 * H + j) = dn_pre * r;
            }
          }
          MapM(gwh.data(), H, G).noalias() += CMapM(hprev, N, H).transpose() * dhp;
          for (std::size_t i = 0; i < N; ++i)
            for (std::size_t k = 0; k < G; ++k) gbh[k] += dhp(i, k);
          dh_next.noalias() = dh + dhp * whm.transpose();
        }
        CMapM dxm(dxp.data(), N * T, G);
        if (x.requires_grad()) {
          Tensor gx(x.shape());
          MapM(gx.data(), N * T, D).noalias() = dxm * CMapM(wx.value().data(), D, G).transpose();
          x.accumulate(gx);
        }
        if (wx.requires_grad()) {
          Tensor gwx(wx.shape());
          MapM(gwx.data(), D, G).noalias() = CMapM(x.value().data(), N * T, D).transpose() * dxm;
          wx.accumulate(gwx);
        }
        Tensor gbx(bx.shape());
        column_sums(dxp.data(), N * T, G, gbx.data());
        bx.accumulate(gbx);
        wh.accumulate(gwh);
        bh.accumulate(gbh);
      });
}

std::vector<std::pair<std::size_t, std::size_t>> adaptive_windows(std::size_t length, std::size_t target) {
  SEDTUNE_REQUIRE(length >= 1, "adaptive_windows: empty input sequence");
  SEDTUNE_REQUIRE(target >= 1, "adaptive_windows: target length must be positive");
  std::vector<std::pair<std::size_t, std::size_t>> w(target);
  for (std::size_t i = 0; i < target; ++i) {
    w[i].first = (i * length) / target;
    w[i].second = ((i + 1) * length + target - 1) / target;
  }
  return w;
}

Var adaptive_avg_pool_time(const Var& x, std::size_t target) {
  const Shape& xs = x.shape();
  SEDTUNE_REQUIRE(xs.size() == 3, "adaptive_avg_pool_time: expected [N,T,D]");
  const std::size_t N = xs[0], T = xs[1], D = xs[2];
  auto windows = adaptive_windows(T, target);
  Tensor out({N, target, D});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < target; ++i) {
      const auto [b, e] = windows[i];
      double* d = out.data() + (n * target + i) * D;
      for (std::size_t t = b; t < e; ++t) {
        const double* s = x.value().data() + (n * T + t) * D;
        for (std::size_t k = 0; k < D; ++k) d[k] += s[k];
      }
      const double len = static_cast<double>(e - b);
      for (std::size_t k = 0; k < D; ++k) d[k] /= len;
    }
  return make_result(std::move(out), {x}, [x, windows, N, T, D, target](const Tensor& g) mutable {
    Tensor gx(x.shape());
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < target; ++i) {
        const auto [b, e] = windows[i];
        const double inv = 1.0 / static_cast<double>(e - b);
        const double* s = g.data() + (n * target + i) * D;
        for (std::size_t t = b; t < e; ++t) {
          double* d = gx.data() + (n * T + t) * D;
          for (std::size_t k = 0; k < D; ++k) d[k] += s[k] * inv;
        }
      }
    x.accumulate(gx);
  });
}

Var group_mean(const Var& x, std::size_t group) {
  const Shape& xs = x.shape();
  SEDTUNE_REQUIRE(xs.size() == 3 && group >= 1 && xs[1] % group == 0,
                  "group_mean: time length must be a multiple of the group size");
  const std::size_t N = xs[0], T = xs[1] / group, D = xs[2];
  const double inv = 1.0 / static_cast<double>(group);
  Tensor out({N, T, D});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 0; t < T; ++t) {
      double* d = out.data() + (n * T + t) * D;
      for (std::size_t q = 0; q < group; ++q) {
        const double* s = x.value().data() + ((n * T + t) * group + q) * D;
        for (std::size_t k = 0; k < D; ++k) d[k] += s[k];
      }
      for (std::size_t k = 0; k < D; ++k) d[k] *= inv;
    }
  return make_result(std::move(out), {x}, [x, N, T, D, group, inv](const Tensor& g) mutable {
    Tensor gx(x.shape());
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = 0; t < T; ++t) {
        const double* s = g.data() + (n * T + t) * D;
        for (std::size_t q = 0; q < group; ++q) {
          double* d = gx.data() + ((n * T + t) * group + q) * D;
          for (std::size_t k = 0; k < D; ++k) d[k] = s[k] * inv;
        }
      }
    x.accumulate(gx);
  });
}

Var attention_pool(const Var& values, const Var& scores) {
  require_same_shape(values, scores, "attention_pool");
  const Shape& s = values.shape();
  SEDTUNE_REQUIRE(s.size() == 3 && s[1] >= 1, "attention_pool: expected [N,T,C]");
  const std::size_t N = s[0], T = s[1], C = s[2];
  auto weights = std::make_shared<Tensor>(s);
  Tensor out({N, C});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      double mx = scores.value()[(n * T) * C + c];
      for (std::size_t t = 1; t < T; ++t) mx = std::max(mx, scores.value()[(n * T + t) * C + c]);
      double sum = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t k = (n * T + t) * C + c;
        (*weights)[k] = std::exp(scores.value()[k] - mx);
        sum += (*weights)[k];
      }
      double acc = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t k = (n * T + t) * C + c;
        (*weights)[k] /= sum;
        acc += (*weights)[k] * values.value()[k];
      }
      out[n * C + c] = acc;
    }
  auto pooled = std::make_shared<Tensor>(out);
  return make_result(std::move(out), {values, scores},
                     [values, scores, weights, pooled, N, T, C](const Tensor& g) mutable {
                       Tensor gv(values.shape()), gs(scores.shape());
                       for (std::size_t n = 0; n < N; ++n)
                         for (std::size_t c = 0; c < C; ++c) {
                           const double go = g[n * C + c];
                           const double o = (*pooled)[n * C + c];
                           for (std::size_t t = 0; t < T; ++t) {
                             const std::size_t k = (n * T + t) * C + c;
                             const double w = (*weights)[k];
                             gv[k] = w * go;
                             gs[k] = w * (values.value()[k] - o) * go;
                           }
                         }
                       values.accumulate(gv);
                       scores.accumulate(gs);
                     });
}

Var bce_mean(const Var& prob, const Tensor& target) {
  SEDTUNE_REQUIRE(prob.value().size() == target.size(), "bce_mean: target shape mismatch");
  const std::size_t n = target.size();
  if (n == 0) return Var(Tensor({}, 0.0));
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p0 = prob.value()[i];
    if (!(p0 >= 0.0 && p0 <= 1.0)) throw ContractError("bce_mean: posterior outside [0,1]");
    const double p = std::clamp(p0, kProbClamp, 1.0 - kProbClamp);
    const double y = target[i];
    acc -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  Tensor out({}, acc / static_cast<double>(n));
  return make_result(std::move(out), {prob}, [prob, target, n](const Tensor& g) mutable {
    Tensor gp(prob.shape());
    const double s = g[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double p = prob.value()[i];
      if (p <= kProbClamp || p >= 1.0 - kProbClamp) continue;
      gp[i] = s * (p - target[i]) / (p * (1.0 - p));
    }
    prob.accumulate(gp);
  });
}

Var mse_mean(const Var& pred, const Tensor& target) {
  SEDTUNE_REQUIRE(pred.value().size() == target.size(), "mse_mean: target shape mismatch");
  const std::size_t n = target.size();
  if (n == 0) return Var(Tensor({}, 0.0));
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred.value()[i] - target[i];
    acc += d * d;
  }
  Tensor out({}, acc / static_cast<double>(n));
  return make_result(std::move(out), {pred}, [pred, target, n](const Tensor& g) mutable {
    Tensor gp(pred.shape());
    const double s = 2.0 * g[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) gp[i] = s * (pred.value()[i] - target[i]);
    pred.accumulate(gp);
  });
}

}  // namespace sedtune::ag
