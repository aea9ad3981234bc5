#pragma once

#include <vector>

#include "pert/tensor.hpp"

namespace pert {

enum class Activation { Gelu, Relu, Tanh };

Activation activation_from_string(const std::string& name);
const char* activation_name(Activation a);

// Elementwise, shapes must match exactly. The only broadcasting rule in the
// library is add_bias over leading axes; everything else is explicit.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

/// x: [... x n], bias: [n]; bias added to every length-n slice.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Softmax over the last axis, computed with max subtraction. Rows sum to 1.
/// NaN inputs raise NumericError; -inf entries are legal and get weight 0.
Tensor softmax_lastdim(const Tensor& x);

/// Per last-axis slice: zero mean, unit variance (biased), then gain/bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-12);

Tensor relu(const Tensor& x);
/// gelu uses the tanh approximation:
///   0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 x^3)))
Tensor gelu(const Tensor& x);
Tensor tanh_act(const Tensor& x);
Tensor activation(const Tensor& x, Activation kind);

/// Inverted dropout: kept entries scaled by 1/(1-p). Train-time only; eval
/// paths simply do not call it.
Tensor dropout(const Tensor& x, double p, Rng& rng);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

/// Inner product of two equal-length rank-1 tensors.
Tensor dot(const Tensor& a, const Tensor& b);

/// Concatenate along axis 0. Ranks must match (1 or 2); trailing dims equal.
Tensor concat0(const Tensor& a, const Tensor& b);

/// Row i of a [m x n] tensor as a rank-1 [n] tensor.
Tensor row(const Tensor& x, std::size_t i);

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t len);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len);
Tensor concat_cols(const std::vector<Tensor>& parts);

/// k one-element tensors stacked into a rank-1 [k] tensor.
Tensor stack_scalars(const std::vector<Tensor>& xs);

/// log(sum(exp(x))) over a rank-1 tensor, stable under large magnitudes.
Tensor logsumexp(const Tensor& x);

/// Rows of a [v x n] table selected by index -> [k x n]. Gradient scatters
/// back into the selected rows.
Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& indices);

/// Per-row maximum of a [m x n] tensor -> [m]. Gradient flows to the first
/// maximal entry of each row.
Tensor max_lastdim(const Tensor& x);

/// Rows rescaled to unit L2 norm.
Tensor l2_normalize_rows(const Tensor& x);

}  // namespace pert
