#include "mtl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Core>

#include "mtl/errors.hpp"

namespace mtl {
namespace {

void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw ContractViolation(std::string(op) + ": " + what);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), op, "shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

void require_matrix(const Tensor& t, const char* op) {
  require(t.rank() == 2, op, "expected a matrix, got shape " + shape_string(t.shape()));
}

// C[m, n] += A[m, k] * B[k, n]
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

// C[m, n] += A[m, k] * B[k, n]
void gemm_nn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  MutMap(c, M, N).noalias() += ConstMap(a, M, K) * ConstMap(b, K, N);
}

// C[k, n] += A[m, k]^T * B[m, n]
void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  MutMap(c, K, N).noalias() += ConstMap(a, M, K).transpose() * ConstMap(b, M, N);
}

// C[m, n] += A[m, k] * B[n, k]^T
void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  MutMap(c, M, N).noalias() += ConstMap(a, M, K) * ConstMap(b, N, K).transpose();
}

double gelu_scalar(double x) {
  const double c = std::sqrt(2.0 / std::numbers::pi);
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

double gelu_grad_scalar(double x) {
  const double c = std::sqrt(2.0 / std::numbers::pi);
  const double inner = c * (x + 0.044715 * x * x * x);
  const double t = std::tanh(inner);
  const double dinner = c * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
}

}  // namespace

void matmul_into(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  std::fill(c, c + m * n, 0.0);
  gemm_nn_acc(a, b, c, m, k, n);
}

Var add(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, "add");
  Tensor out = x;
  out.add_(y);
  return a.tape->record("add", std::move(out), {a, b}, [](const Tensor& g, GradSink& s) {
    if (Tensor* ga = s.grad(0)) ga->add_(g);
    if (Tensor* gb = s.grad(1)) gb->add_(g);
  });
}

Var sub(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, "sub");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  return a.tape->record("sub", std::move(out), {a, b}, [](const Tensor& g, GradSink& s) {
    if (Tensor* ga = s.grad(0)) ga->add_(g);
    if (Tensor* gb = s.grad(1))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, "mul");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  return a.tape->record("mul", std::move(out), {a, b}, [](const Tensor& g, GradSink& s) {
    const Tensor& x = s.input(0);
    const Tensor& y = s.input(1);
    if (Tensor* ga = s.grad(0))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * y[i];
    if (Tensor* gb = s.grad(1))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * x[i];
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  out.scale_(factor);
  return a.tape->record("scale", std::move(out), {a}, [factor](const Tensor& g, GradSink& s) {
    if (Tensor* ga = s.grad(0))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += factor * g[i];
  });
}

Var add_bias(Var x, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  require(xv.rank() == 2 || xv.rank() == 1, "add_bias", "x must be rank 1 or 2");
  require(bv.rank() == 1 && bv.size() == xv.cols(), "add_bias",
          "bias shape " + shape_string(bv.shape()) + " does not match x " + shape_string(xv.shape()));
  Tensor out = xv;
  const std::size_t rows = xv.rows(), cols = xv.cols();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  return x.tape->record("add_bias", std::move(out), {x, bias}, [rows, cols](const Tensor& g, GradSink& s) {
    if (Tensor* gx = s.grad(0)) gx->add_(g);
    if (Tensor* gb = s.grad(1))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) (*gb)[c] += g[r * cols + c];
  });
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  require(bv.dim(0) == k, "matmul", "inner dimensions differ: " + shape_string(av.shape()) + " @ " +
                                        shape_string(bv.shape()));
  Tensor out(Shape{m, n});
  gemm_nn_acc(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  return a.tape->record("matmul", std::move(out), {a, b}, [m, k, n](const Tensor& g, GradSink& s) {
    if (Tensor* ga = s.grad(0)) gemm_nt_acc(g.data().data(), s.input(1).data().data(), ga->data().data(), m, n, k);
    if (Tensor* gb = s.grad(1)) gemm_tn_acc(s.input(0).data().data(), g.data().data(), gb->data().data(), m, k, n);
  });
}

Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul_nt");
  require_matrix(bv, "matmul_nt");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(0);
  require(bv.dim(1) == k, "matmul_nt", "inner dimensions differ: " + shape_string(av.shape()) + " @ " +
                                           shape_string(bv.shape()) + "^T");
  Tensor out(Shape{m, n});
  gemm_nt_acc(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  return a.tape->record("matmul_nt", std::move(out), {a, b}, [m, k, n](const Tensor& g, GradSink& s) {
    if (Tensor* ga = s.grad(0)) gemm_nn_acc(g.data().data(), s.input(1).data().data(), ga->data().data(), m, n, k);
    if (Tensor* gb = s.grad(1)) gemm_tn_acc(g.data().data(), s.input(0).data().data(), gb->data().data(), m, n, k);
  });
}

Var gelu(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = gelu_scalar(v);
  return x.tape->record("gelu", std::move(out), {x}, [](const Tensor& g, GradSink& s) {
    const Tensor& xv = s.input(0);
    if (Tensor* gx = s.grad(0))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * gelu_grad_scalar(xv[i]);
  });
}

Var tanh(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = std::tanh(v);
  return x.tape->record("tanh", std::move(out), {x}, [](const Tensor& g, GradSink& s) {
    const Tensor& y = s.output();
    if (Tensor* gx = s.grad(0))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var softmax(Var logits, std::size_t axis) {
  const Tensor& xv = logits.value();
  require(xv.size() > 0, "softmax", "empty tensor");
  require(axis < xv.rank(), "softmax", "axis out of range for shape " + shape_string(xv.shape()));
  const std::size_t len = xv.dim(axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= xv.dim(d);
  for (std::size_t d = axis + 1; d < xv.rank(); ++d) inner *= xv.dim(d);

  Tensor out(xv.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = xv[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= z;
    }
  }
  return logits.tape->record("softmax", std::move(out), {logits},
                             [outer, inner, len](const Tensor& g, GradSink& s) {
                               Tensor* gx = s.grad(0);
                               if (!gx) return;
                               const Tensor& y = s.output();
                               for (std::size_t o = 0; o < outer; ++o) {
                                 for (std::size_t in = 0; in < inner; ++in) {
                                   const std::size_t base = o * len * inner + in;
                                   double dot = 0.0;
                                   for (std::size_t j = 0; j < len; ++j)
                                     dot += g[base + j * inner] * y[base + j * inner];
                                   for (std::size_t j = 0; j < len; ++j) {
                                     const std::size_t idx = base + j * inner;
                                     (*gx)[idx] += y[idx] * (g[idx] - dot);
                                   }
                                 }
                               }
                             });
}

Tensor softmax_rows(const Tensor& logits) {
  const std::size_t rows = logits.rows(), cols = logits.cols();
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = logits.data().data() + r * cols;
    double* y = out.data().data() + r * cols;
    double mx = x[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      z += y[c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[c] /= z;
  }
  return out;
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = x.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  require(eps > 0.0, "layer_norm", "eps must be positive");
  require(xv.rank() >= 1 && xv.size() > 0, "layer_norm", "empty input");
  const std::size_t n = xv.shape().back();
  const std::size_t rows = xv.size() / n;
  require(gv.rank() == 1 && gv.size() == n, "layer_norm", "gamma shape " + shape_string(gv.shape()));
  require(bv.rank() == 1 && bv.size() == n, "layer_norm", "beta shape " + shape_string(bv.shape()));

  Tensor out(xv.shape());
  std::vector<double> xhat(xv.size());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data().data() + r * n;
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += row[c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(n);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (row[c] - mu) * rstd[r];
      xhat[r * n + c] = h;
      out[r * n + c] = h * gv[c] + bv[c];
    }
  }
  return x.tape->record(
      "layer_norm", std::move(out), {x, gamma, beta},
      [rows, n, xhat = std::move(xhat), rstd = std::move(rstd)](const Tensor& g, GradSink& s) {
        const Tensor& gv = s.input(1);
        Tensor* gx = s.grad(0);
        Tensor* gg = s.grad(1);
        Tensor* gb = s.grad(2);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* dy = g.data().data() + r * n;
          const double* h = xhat.data() + r * n;
          if (gg)
            for (std::size_t c = 0; c < n; ++c) (*gg)[c] += dy[c] * h[c];
          if (gb)
            for (std::size_t c = 0; c < n; ++c) (*gb)[c] += dy[c];
          if (gx) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
              const double dh = dy[c] * gv[c];
              mean_dh += dh;
              mean_dh_h += dh * h[c];
            }
            mean_dh /= static_cast<double>(n);
            mean_dh_h /= static_cast<double>(n);
            double* dx = gx->data().data() + r * n;
            for (std::size_t c = 0; c < n; ++c) dx[c] += rstd[r] * (dy[c] * gv[c] - mean_dh - h[c] * mean_dh_h);
          }
        }
      });
}

Var embedding(Var table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  require_matrix(tv, "embedding");
  const std::size_t vocab = tv.dim(0), hidden = tv.dim(1);
  Tensor out(Shape{ids.size(), hidden});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < vocab, "embedding",
            "id " + std::to_string(ids[i]) + " outside table of " + std::to_string(vocab) + " rows");
    std::copy_n(tv.data().data() + static_cast<std::size_t>(ids[i]) * hidden, hidden, out.data().data() + i * hidden);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return table.tape->record("embedding", std::move(out), {table},
                            [hidden, idx = std::move(idx)](const Tensor& g, GradSink& s) {
                              Tensor* gt = s.grad(0);
                              if (!gt) return;
                              for (std::size_t i = 0; i < idx.size(); ++i) {
                                double* dst = gt->data().data() + static_cast<std::size_t>(idx[i]) * hidden;
                                const double* src = g.data().data() + i * hidden;
                                for (std::size_t c = 0; c < hidden; ++c) dst[c] += src[c];
                              }
                            });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  const Tensor& xv = x.value();
  require_matrix(xv, "gather_rows");
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  Tensor out(Shape{rows.size(), n});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < m, "gather_rows", "row " + std::to_string(rows[i]) + " out of range");
    std::copy_n(xv.data().data() + rows[i] * n, n, out.data().data() + i * n);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return x.tape->record("gather_rows", std::move(out), {x}, [n, idx = std::move(idx)](const Tensor& g, GradSink& s) {
    Tensor* gx = s.grad(0);
    if (!gx) return;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* dst = gx->data().data() + idx[i] * n;
      const double* src = g.data().data() + i * n;
      for (std::size_t c = 0; c < n; ++c) dst[c] += src[c];
    }
  });
}

Var dropout(Var x, double p, Rng& rng) {
  require(p >= 0.0 && p < 1.0, "dropout", "probability must be in [0, 1)");
  if (p == 0.0) return x;
  const Tensor& xv = x.value();
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(xv.size());
  Tensor out = xv;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng.bernoulli(p) ? 0.0 : keep_scale;
    out[i] *= mask[i];
  }
  return x.tape->record("dropout", std::move(out), {x}, [mask = std::move(mask)](const Tensor& g, GradSink& s) {
    if (Tensor* gx = s.grad(0))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * mask[i];
  });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.tape->record("sum", Tensor::scalar(total), {x}, [](const Tensor& g, GradSink& s) {
    if (Tensor* gx = s.grad(0))
      for (double& v : gx->data()) v += g[0];
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  require(n > 0, "mean", "empty tensor");
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.tape->record("mean", Tensor::scalar(total / static_cast<double>(n)), {x},
                        [n](const Tensor& g, GradSink& s) {
                          if (Tensor* gx = s.grad(0))
                            for (double& v : gx->data()) v += g[0] / static_cast<double>(n);
                        });
}

Tensor attention_weights(const Tensor& q, const Tensor& k, std::span<const int> key_mask, std::size_t batch,
                         std::size_t seq, std::size_t heads) {
  const std::size_t hidden = q.cols();
  const std::size_t d = hidden / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor probs(Shape{batch * heads * seq, seq});
  for (std::size_t b = 0; b < batch; ++b) {
    const int* mask = key_mask.data() + b * seq;
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < seq; ++i) {
        double* p = probs.data().data() + ((b * heads + h) * seq + i) * seq;
        const double* qi = q.data().data() + (b * seq + i) * hidden + h * d;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < seq; ++j) {
          if (!mask[j]) continue;
          const double* kj = k.data().data() + (b * seq + j) * hidden + h * d;
          double dot = 0.0;
          for (std::size_t c = 0; c < d; ++c) dot += qi[c] * kj[c];
          p[j] = dot * inv_sqrt_d;
          mx = std::max(mx, p[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < seq; ++j) {
          if (!mask[j]) {
            p[j] = 0.0;
            continue;
          }
          p[j] = std::exp(p[j] - mx);
          z += p[j];
        }
        for (std::size_t j = 0; j < seq; ++j) p[j] /= z;
      }
    }
  }
  return probs;
}

Var self_attention(Var q, Var k, Var v, std::span<const int> key_mask, std::size_t batch, std::size_t seq,
                   std::size_t heads) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  require_matrix(qv, "self_attention");
  require_same_shape(qv, kv, "self_attention");
  require_same_shape(qv, vv, "self_attention");
  require(qv.dim(0) == batch * seq, "self_attention", "rows must equal batch * seq");
  require(key_mask.size() == batch * seq, "self_attention", "key mask length must equal batch * seq");
  require(heads > 0 && qv.dim(1) % heads == 0, "self_attention", "hidden size not divisible by head count");
  for (std::size_t b = 0; b < batch; ++b) {
    bool any = false;
    for (std::size_t j = 0; j < seq; ++j) any = any || key_mask[b * seq + j] != 0;
    require(any, "self_attention", "sequence " + std::to_string(b) + " has no unmasked key");
  }
  const std::size_t hidden = qv.dim(1);
  const std::size_t d = hidden / heads;

  Tensor probs = attention_weights(qv, kv, key_mask, batch, seq, heads);
  Tensor out(Shape{batch * seq, hidden});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < seq; ++i) {
        const double* p = probs.data().data() + ((b * heads + h) * seq + i) * seq;
        double* oi = out.data().data() + (b * seq + i) * hidden + h * d;
        for (std::size_t j = 0; j < seq; ++j) {
          if (p[j] == 0.0) continue;
          const double* vj = vv.data().data() + (b * seq + j) * hidden + h * d;
          for (std::size_t c = 0; c < d; ++c) oi[c] += p[j] * vj[c];
        }
      }
    }
  }

  return q.tape->record(
      "self_attention", std::move(out), {q, k, v},
      [batch, seq, heads, hidden, d, probs = std::move(probs)](const Tensor& g, GradSink& s) {
        const Tensor& qv = s.input(0);
        const Tensor& kv = s.input(1);
        const Tensor& vv = s.input(2);
        Tensor* gq = s.grad(0);
        Tensor* gk = s.grad(1);
        Tensor* gv = s.grad(2);
        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
        std::vector<double> dp(seq);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < seq; ++i) {
              const double* p = probs.data().data() + ((b * heads + h) * seq + i) * seq;
              const double* gi = g.data().data() + (b * seq + i) * hidden + h * d;
              double dot = 0.0;
              for (std::size_t j = 0; j < seq; ++j) {
                dp[j] = 0.0;
                if (p[j] == 0.0) continue;
                const double* vj = vv.data().data() + (b * seq + j) * hidden + h * d;
                double acc = 0.0;
                for (std::size_t c = 0; c < d; ++c) acc += gi[c] * vj[c];
                dp[j] = acc;
                dot += p[j] * acc;
                if (gv) {
                  double* gvj = gv->data().data() + (b * seq + j) * hidden + h * d;
                  for (std::size_t c = 0; c < d; ++c) gvj[c] += p[j] * gi[c];
                }
              }
              const double* qi = qv.data().data() + (b * seq + i) * hidden + h * d;
              double* gqi = gq ? gq->data().data() + (b * seq + i) * hidden + h * d : nullptr;
              for (std::size_t j = 0; j < seq; ++j) {
                if (p[j] == 0.0) continue;
                const double ds = p[j] * (dp[j] - dot) * inv_sqrt_d;
                const double* kj = kv.data().data() + (b * seq + j) * hidden + h * d;
                if (gqi)
                  for (std::size_t c = 0; c < d; ++c) gqi[c] += ds * kj[c];
                if (gk) {
                  double* gkj = gk->data().data() + (b * seq + j) * hidden + h * d;
                  for (std::size_t c = 0; c < d; ++c) gkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
      });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  const Tensor& xv = logits.value();
  require_matrix(xv, "cross_entropy");
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  require(targets.size() == rows, "cross_entropy", "one target per row required");
  std::size_t count = 0;
  for (int t : targets) {
    if (t < 0) continue;
    require(static_cast<std::size_t>(t) < cols, "cross_entropy", "target " + std::to_string(t) + " out of range");
    ++count;
  }
  if (count == 0) throw DataError("cross_entropy: every position is ignored");

  Tensor probs = softmax_rows(xv);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0) continue;
    const double* x = xv.data().data() + r * cols;
    double mx = x[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(x[c] - mx);
    total += mx + std::log(z) - x[targets[r]];
  }
  const double n = static_cast<double>(count);
  std::vector<int> tgt(targets.begin(), targets.end());
  return logits.tape->record(
      "cross_entropy", Tensor::scalar(total / n), {logits},
      [rows, cols, n, tgt = std::move(tgt), probs = std::move(probs)](const Tensor& g, GradSink& s) {
        Tensor* gx = s.grad(0);
        if (!gx) return;
        const double w = g[0] / n;
        for (std::size_t r = 0; r < rows; ++r) {
          if (tgt[r] < 0) continue;
          for (std::size_t c = 0; c < cols; ++c) {
            const double y = static_cast<int>(c) == tgt[r] ? 1.0 : 0.0;
            (*gx)[r * cols + c] += w * (probs[r * cols + c] - y);
          }
        }
      });
}

Var mse_loss(Var pred, std::span<const double> targets) {
  const Tensor& pv = pred.value();
  require(pv.size() == targets.size() && !targets.empty(), "mse_loss", "one target per prediction required");
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) total += (targets[i] - pv[i]) * (targets[i] - pv[i]);
  const double n = static_cast<double>(pv.size());
  std::vector<double> tgt(targets.begin(), targets.end());
  return pred.tape->record("mse_loss", Tensor::scalar(total / n), {pred},
                           [n, tgt = std::move(tgt)](const Tensor& g, GradSink& s) {
                             Tensor* gp = s.grad(0);
                             if (!gp) return;
                             const Tensor& pv = s.input(0);
                             for (std::size_t i = 0; i < tgt.size(); ++i)
                               (*gp)[i] += g[0] * (-2.0) * (tgt[i] - pv[i]) / n;
                           });
}

}  // namespace mtl
