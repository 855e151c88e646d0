#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mtl/random.hpp"
#include "mtl/tape.hpp"

namespace mtl {

// Elementwise; shapes must match exactly.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);

/// x[m, n] + bias[n] broadcast over rows.
Var add_bias(Var x, Var bias);

/// a[m, k] @ b[k, n].
Var matmul(Var a, Var b);
/// a[m, k] @ b[n, k]^T.
Var matmul_nt(Var a, Var b);

/// GELU, tanh approximation.
Var gelu(Var x);
Var tanh(Var x);

/// Softmax along `axis` with max subtraction.
Var softmax(Var logits, std::size_t axis);

/// Normalizes over the last axis: (x - mean) / sqrt(var + eps) * gamma + beta.
Var layer_norm(Var x, Var gamma, Var beta, double eps);

/// Rows of table[V, H] selected by ids -> [ids.size(), H].
Var embedding(Var table, std::span<const int> ids);
/// Rows of x[m, n] selected by index -> [rows.size(), n].
Var gather_rows(Var x, std::span<const std::size_t> rows);

/// Inverted dropout: kept entries are scaled by 1 / (1 - p).
Var dropout(Var x, double p, Rng& rng);

Var sum(Var x);
Var mean(Var x);

/// Multi-head scaled dot-product self-attention over `batch` sequences of
/// length `seq` packed row-wise in q, k, v [batch * seq, hidden]. Keys with
/// key_mask == 0 receive exactly zero weight.
Var self_attention(Var q, Var k, Var v, std::span<const int> key_mask, std::size_t batch, std::size_t seq,
                   std::size_t heads);

/// Attention weights [batch * heads * seq, seq] computed the same way as
/// self_attention's forward pass. Exposed for inspection.
Tensor attention_weights(const Tensor& q, const Tensor& k, std::span<const int> key_mask, std::size_t batch,
                         std::size_t seq, std::size_t heads);

/// Mean over rows with target >= 0 of -log softmax(logits)[target].
/// Rows with a negative target are ignored. Throws DataError when every
/// row is ignored.
Var cross_entropy(Var logits, std::span<const int> targets);

/// Mean over elements of (target - pred)^2.
Var mse_loss(Var pred, std::span<const double> targets);

// Plain-tensor helpers shared by the primitives and by evaluation code.
Tensor softmax_rows(const Tensor& logits);
void matmul_into(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);

}  // namespace mtl
