#include "pert/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pert {

namespace {

Tensor make_op(const char* name, const Shape& shape, std::vector<double> data,
               const std::vector<Tensor>& parents,
               std::function<void(TensorNode&)> backward_fn) {
  bool rg = false;
  if (grad_enabled()) {
    for (const auto& p : parents) rg = rg || p.requires_grad();
  }
  Tensor out = Tensor::from(std::move(data), shape, rg);
  out.node()->op = name;
  if (rg) {
    for (const auto& p : parents) out.node()->parents.push_back(p.node());
    out.node()->backward_fn = std::move(backward_fn);
  }
  return out;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

std::size_t last_dim(const Tensor& x) {
  if (x.rank() == 0 || x.shape().back() == 0) {
    throw ShapeError("empty last axis: " + shape_str(x.shape()));
  }
  return x.shape().back();
}

}  // namespace

Activation activation_from_string(const std::string& name) {
  if (name == "gelu") return Activation::Gelu;
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  throw ConfigError("unknown activation '" + name + "' (expected gelu, relu, or tanh)");
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Gelu: return "gelu";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return make_op("add", a.shape(), std::move(out), {a, b}, [](TensorNode& o) {
    for (int k = 0; k < 2; ++k) {
      TensorNode& p = *o.parents[k];
      if (!p.requires_grad) continue;
      for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return make_op("sub", a.shape(), std::move(out), {a, b}, [](TensorNode& o) {
    TensorNode& pa = *o.parents[0];
    TensorNode& pb = *o.parents[1];
    if (pa.requires_grad) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += o.grad[i];
    }
    if (pb.requires_grad) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) pb.grad[i] -= o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return make_op("mul", a.shape(), std::move(out), {a, b}, [](TensorNode& o) {
    TensorNode& pa = *o.parents[0];
    TensorNode& pb = *o.parents[1];
    if (pa.requires_grad) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += o.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) pb.grad[i] += o.grad[i] * pa.data[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * c;
  return make_op("scale", a.shape(), std::move(out), {a}, [c](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i] * c;
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = last_dim(x);
  if (bias.rank() != 1 || bias.numel() != n) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match last axis of " +
                     shape_str(x.shape()));
  }
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) + bias.at(i % n);
  return make_op("add_bias", x.shape(), std::move(out), {x, bias}, [n](TensorNode& o) {
    TensorNode& px = *o.parents[0];
    TensorNode& pb = *o.parents[1];
    if (px.requires_grad) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) px.grad[i] += o.grad[i];
    }
    if (pb.requires_grad) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) pb.grad[i % n] += o.grad[i];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a.at(i, p);
      if (av == 0.0) continue;
      const double* brow = b.data().data() + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return make_op("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](TensorNode& o) {
    TensorNode& pa = *o.parents[0];
    TensorNode& pb = *o.parents[1];
    if (pa.requires_grad) {
      // dA = dC . B^T
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* grow = o.grad.data() + i * n;
          const double* brow = pb.data.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          pa.grad[i * k + p] += acc;
        }
      }
    }
    if (pb.requires_grad) {
      // dB = A^T . dC
      for (std::size_t i = 0; i < m; ++i) {
        const double* arow = pa.data.data() + i * k;
        const double* grow = o.grad.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = arow[p];
          if (av == 0.0) continue;
          double* brow = pb.grad.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.at(i, j);
  return make_op("transpose", {n, m}, std::move(out), {a}, [m, n](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) p.grad[i * n + j] += o.grad[j * m + i];
  });
}

Tensor softmax_lastdim(const Tensor& x) {
  const std::size_t n = last_dim(x);
  const std::size_t slices = x.numel() / n;
  std::vector<double> out(x.numel());
  for (std::size_t s = 0; s < slices; ++s) {
    const double* in = x.data().data() + s * n;
    double* y = out.data() + s * n;
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (std::isnan(in[i])) throw NumericError("softmax: NaN input");
      m = std::max(m, in[i]);
    }
    if (std::isinf(m) && m < 0) throw NumericError("softmax: every entry is -inf");
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = std::exp(in[i] - m);
      z += y[i];
    }
    for (std::size_t i = 0; i < n; ++i) y[i] /= z;
  }
  return make_op("softmax", x.shape(), std::move(out), {x}, [n](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    const std::size_t slices = o.data.size() / n;
    for (std::size_t s = 0; s < slices; ++s) {
      const double* y = o.data.data() + s * n;
      const double* dy = o.grad.data() + s * n;
      double dotv = 0.0;
      for (std::size_t i = 0; i < n; ++i) dotv += y[i] * dy[i];
      double* dx = p.grad.data() + s * n;
      for (std::size_t i = 0; i < n; ++i) dx[i] += y[i] * (dy[i] - dotv);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t n = last_dim(x);
  if (gain.rank() != 1 || gain.numel() != n || bias.rank() != 1 || bias.numel() != n) {
    throw ShapeError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                     shape_str(bias.shape()) + " do not match last axis of " + shape_str(x.shape()));
  }
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  const std::size_t slices = x.numel() / n;
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv(slices);
  for (std::size_t s = 0; s < slices; ++s) {
    const double* in = x.data().data() + s * n;
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += in[i];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (in[i] - mu) * (in[i] - mu);
    var /= static_cast<double>(n);
    inv[s] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) {
      xhat[s * n + i] = (in[i] - mu) * inv[s];
      out[s * n + i] = gain.at(i) * xhat[s * n + i] + bias.at(i);
    }
  }
  return make_op("layer_norm", x.shape(), std::move(out), {x, gain, bias},
                 [n, xhat = std::move(xhat), inv = std::move(inv)](TensorNode& o) {
                   TensorNode& px = *o.parents[0];
                   TensorNode& pg = *o.parents[1];
                   TensorNode& pb = *o.parents[2];
                   const std::size_t slices = o.data.size() / n;
                   const double nd = static_cast<double>(n);
                   for (std::size_t s = 0; s < slices; ++s) {
                     const double* dy = o.grad.data() + s * n;
                     const double* xh = xhat.data() + s * n;
                     if (pg.requires_grad) {
                       for (std::size_t i = 0; i < n; ++i) pg.grad[i] += dy[i] * xh[i];
                     }
                     if (pb.requires_grad) {
                       for (std::size_t i = 0; i < n; ++i) pb.grad[i] += dy[i];
                     }
                     if (px.requires_grad) {
                       double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                       for (std::size_t i = 0; i < n; ++i) {
                         const double dxh = dy[i] * pg.data[i];
                         mean_dxh += dxh;
                         mean_dxh_xh += dxh * xh[i];
                       }
                       mean_dxh /= nd;
                       mean_dxh_xh /= nd;
                       for (std::size_t i = 0; i < n; ++i) {
                         const double dxh = dy[i] * pg.data[i];
                         px.grad[s * n + i] += inv[s] * (dxh - mean_dxh - xh[i] * mean_dxh_xh);
                       }
                     }
                   }
                 });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) > 0.0 ? x.at(i) : 0.0;
  return make_op("relu", x.shape(), std::move(out), {x}, [](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      if (p.data[i] > 0.0) p.grad[i] += o.grad[i];
    }
  });
}

Tensor gelu(const Tensor& x) {
  constexpr double kS = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kC = 0.044715;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.at(i);
    out[i] = 0.5 * v * (1.0 + std::tanh(kS * (v + kC * v * v * v)));
  }
  return make_op("gelu", x.shape(), std::move(out), {x}, [](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const double v = p.data[i];
      const double t = std::tanh(kS * (v + kC * v * v * v));
      const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kS * (1.0 + 3.0 * kC * v * v);
      p.grad[i] += o.grad[i] * d;
    }
  });
}

Tensor tanh_act(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.at(i));
  return make_op("tanh", x.shape(), std::move(out), {x}, [](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      p.grad[i] += o.grad[i] * (1.0 - o.data[i] * o.data[i]);
    }
  });
}

Tensor activation(const Tensor& x, Activation kind) {
  switch (kind) {
    case Activation::Gelu: return gelu(x);
    case Activation::Relu: return relu(x);
    case Activation::Tanh: return tanh_act(x);
  }
  throw ConfigError("activation: unknown kind");
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: rate must be in [0, 1)");
  if (p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() >= p ? keep_scale : 0.0;
    out[i] = x.at(i) * mask[i];
  }
  return make_op("dropout", x.shape(), std::move(out), {x},
                 [mask = std::move(mask)](TensorNode& o) {
                   TensorNode& p = *o.parents[0];
                   if (!p.requires_grad) return;
                   for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i] * mask[i];
                 });
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) s += x.at(i);
  return make_op("sum", {1}, {s}, {x}, [](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += o.grad[0];
  });
}

Tensor mean_all(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) s += x.at(i);
  const double inv_n = 1.0 / static_cast<double>(x.numel());
  return make_op("mean", {1}, {s * inv_n}, {x}, [inv_n](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += o.grad[0] * inv_n;
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1 || a.numel() != b.numel()) {
    throw ShapeError("dot: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.at(i) * b.at(i);
  return make_op("dot", {1}, {s}, {a, b}, [](TensorNode& o) {
    TensorNode& pa = *o.parents[0];
    TensorNode& pb = *o.parents[1];
    const double g = o.grad[0];
    if (pa.requires_grad) {
      for (std::size_t i = 0; i < pa.data.size(); ++i) pa.grad[i] += g * pb.data[i];
    }
    if (pb.requires_grad) {
      for (std::size_t i = 0; i < pb.data.size(); ++i) pb.grad[i] += g * pa.data[i];
    }
  });
}

Tensor concat0(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() < 1 || a.rank() > 2 ||
      (a.rank() == 2 && a.dim(1) != b.dim(1))) {
    throw ShapeError("concat0: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  Shape shape = a.shape();
  shape[0] += b.shape()[0];
  std::vector<double> out;
  out.reserve(a.numel() + b.numel());
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  const std::size_t na = a.numel();
  return make_op("concat0", shape, std::move(out), {a, b}, [na](TensorNode& o) {
    TensorNode& pa = *o.parents[0];
    TensorNode& pb = *o.parents[1];
    if (pa.requires_grad) {
      for (std::size_t i = 0; i < na; ++i) pa.grad[i] += o.grad[i];
    }
    if (pb.requires_grad) {
      for (std::size_t i = na; i < o.grad.size(); ++i) pb.grad[i - na] += o.grad[i];
    }
  });
}

Tensor row(const Tensor& x, std::size_t i) {
  if (x.rank() != 2 || i >= x.dim(0)) {
    throw ShapeError("row: index " + std::to_string(i) + " out of range for " +
                     shape_str(x.shape()));
  }
  const std::size_t n = x.dim(1);
  std::vector<double> out(x.data().begin() + i * n, x.data().begin() + (i + 1) * n);
  return make_op("row", {n}, std::move(out), {x}, [i, n](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t j = 0; j < n; ++j) p.grad[i * n + j] += o.grad[j];
  });
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t len) {
  if (x.rank() != 2 || start + len > x.dim(0)) {
    throw ShapeError("slice_rows: [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") out of range for " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(1);
  std::vector<double> out(x.data().begin() + start * n, x.data().begin() + (start + len) * n);
  return make_op("slice_rows", {len, n}, std::move(out), {x}, [start, n](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[start * n + i] += o.grad[i];
  });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len) {
  if (x.rank() != 2 || start + len > x.dim(1)) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") out of range for " + shape_str(x.shape()));
  }
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(m * len);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < len; ++j) out[i * len + j] = x.at(i, start + j);
  return make_op("slice_cols", {m, len}, std::move(out), {x}, [start, len, n](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    const std::size_t m2 = o.data.size() / len;
    for (std::size_t i = 0; i < m2; ++i)
      for (std::size_t j = 0; j < len; ++j) p.grad[i * n + start + j] += o.grad[i * len + j];
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const std::size_t m = parts[0].dim(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != m) {
      throw ShapeError("concat_cols: row counts differ: " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    total += p.dim(1);
  }
  std::vector<double> out(m * total);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t w = p.dim(1);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * total + off + j] = p.at(i, j);
    off += w;
  }
  return make_op("concat_cols", {m, total}, std::move(out), parts,
                 [offsets = std::move(offsets), total](TensorNode& o) {
                   const std::size_t m2 = o.data.size() / total;
                   for (std::size_t k = 0; k < o.parents.size(); ++k) {
                     TensorNode& p = *o.parents[k];
                     if (!p.requires_grad) continue;
                     const std::size_t w = p.shape[1];
                     for (std::size_t i = 0; i < m2; ++i)
                       for (std::size_t j = 0; j < w; ++j)
                         p.grad[i * w + j] += o.grad[i * total + offsets[k] + j];
                   }
                 });
}

Tensor stack_scalars(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("stack_scalars: empty input");
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].numel() != 1) {
      throw ShapeError("stack_scalars: element " + std::to_string(i) + " has shape " +
                       shape_str(xs[i].shape()));
    }
    out[i] = xs[i].at(0);
  }
  return make_op("stack_scalars", {xs.size()}, std::move(out), xs, [](TensorNode& o) {
    for (std::size_t i = 0; i < o.parents.size(); ++i) {
      TensorNode& p = *o.parents[i];
      if (p.requires_grad) p.grad[0] += o.grad[i];
    }
  });
}

Tensor logsumexp(const Tensor& x) {
  if (x.rank() != 1 || x.numel() == 0) {
    throw ShapeError("logsumexp: expected non-empty rank-1 tensor, got " + shape_str(x.shape()));
  }
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (std::isnan(x.at(i))) throw NumericError("logsumexp: NaN input");
    m = std::max(m, x.at(i));
  }
  double z = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) z += std::exp(x.at(i) - m);
  const double lse = m + std::log(z);
  return make_op("logsumexp", {1}, {lse}, {x}, [](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    const double g = o.grad[0];
    const double lse = o.data[0];
    for (std::size_t i = 0; i < p.data.size(); ++i) p.grad[i] += g * std::exp(p.data[i] - lse);
  });
}

Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& indices) {
  if (table.rank() != 2) {
    throw ShapeError("gather_rows: expected rank-2 table, got " + shape_str(table.shape()));
  }
  const std::size_t n = table.dim(1);
  std::vector<double> out(indices.size() * n);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= table.dim(0)) {
      throw ShapeError("gather_rows: index " + std::to_string(indices[r]) + " out of range for " +
                       shape_str(table.shape()));
    }
    std::copy_n(table.data().begin() + indices[r] * n, n, out.begin() + r * n);
  }
  return make_op("gather_rows", {indices.size(), n}, std::move(out), {table},
                 [n, indices](TensorNode& o) {
                   TensorNode& p = *o.parents[0];
                   if (!p.requires_grad) return;
                   for (std::size_t r = 0; r < indices.size(); ++r) {
                     for (std::size_t j = 0; j < n; ++j) {
                       p.grad[indices[r] * n + j] += o.grad[r * n + j];
                     }
                   }
                 });
}

Tensor max_lastdim(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("max_lastdim: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (n == 0) throw ShapeError("max_lastdim: empty last axis");
  std::vector<double> out(m);
  std::vector<std::size_t> argmax(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j) {
      if (x.at(i, j) > x.at(i, best)) best = j;
    }
    argmax[i] = best;
    out[i] = x.at(i, best);
  }
  return make_op("max_lastdim", {m}, std::move(out), {x},
                 [n, argmax = std::move(argmax)](TensorNode& o) {
                   TensorNode& p = *o.parents[0];
                   if (!p.requires_grad) return;
                   for (std::size_t i = 0; i < o.grad.size(); ++i) {
                     p.grad[i * n + argmax[i]] += o.grad[i];
                   }
                 });
}

Tensor l2_normalize_rows(const Tensor& x) {
  if (x.rank() != 2) {
    throw ShapeError("l2_normalize_rows: expected rank 2, got " + shape_str(x.shape()));
  }
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(m * n);
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += x.at(i, j) * x.at(i, j);
    norms[i] = std::sqrt(s);
    if (norms[i] == 0.0) {
      throw NumericError("l2_normalize_rows: zero-norm row " + std::to_string(i));
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x.at(i, j) / norms[i];
  }
  return make_op("l2_normalize_rows", x.shape(), std::move(out), {x},
                 [n, norms = std::move(norms)](TensorNode& o) {
                   TensorNode& p = *o.parents[0];
                   if (!p.requires_grad) return;
                   const std::size_t m2 = o.data.size() / n;
                   for (std::size_t i = 0; i < m2; ++i) {
                     const double* y = o.data.data() + i * n;
                     const double* dy = o.grad.data() + i * n;
                     double ydy = 0.0;
                     for (std::size_t j = 0; j < n; ++j) ydy += y[j] * dy[j];
                     for (std::size_t j = 0; j < n; ++j) {
                       p.grad[i * n + j] += (dy[j] - y[j] * ydy) / norms[i];
                     }
                   }
                 });
}

}  // namespace pert
