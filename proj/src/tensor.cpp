#include "dnsgt/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace dnsgt {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

namespace {

using NodePtr = std::shared_ptr<Tensor::Node>;

int64_t shape_size(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

bool needs_grad(const NodePtr& n) {
  return n->requires_grad || n->backward_fn != nullptr;
}

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x))
      throw NonFiniteDetected(std::string("non-finite value in ") + op);
  }
}

NodePtr make_node(std::vector<int> shape) {
  auto n = std::make_shared<Tensor::Node>();
  n->shape = std::move(shape);
  n->data.assign(shape_size(n->shape), 0.0);
  return n;
}

std::string shape_str(const std::vector<int>& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto n = make_node(std::move(shape));
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  auto n = make_node(std::move(shape));
  std::fill(n->data.begin(), n->data.end(), value);
  return Tensor(n);
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data,
                    bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  if ((int64_t)data.size() != shape_size(n->shape))
    throw ShapeMismatch("Tensor::from: data length does not match shape");
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

double Tensor::item() const {
  if (size() != 1) throw NotScalar("item() on non-scalar tensor");
  return node_->data[0];
}

// --- matmul -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2)
    throw ShapeMismatch("matmul: operands must have >= 2 dims");

  const int m = as[as.size() - 2];
  const int k = as[as.size() - 1];
  const int bk = transpose_b ? bs[bs.size() - 1] : bs[bs.size() - 2];
  const int n = transpose_b ? bs[bs.size() - 2] : bs[bs.size() - 1];
  if (k != bk)
    throw ShapeMismatch("matmul: inner dims " + shape_str(as) + " x " +
                        shape_str(bs));

  std::vector<int> lead(as.begin(), as.end() - 2);
  const int64_t batch = shape_size(lead);
  const bool b_batched = bs.size() > 2;
  if (b_batched) {
    std::vector<int> blead(bs.begin(), bs.end() - 2);
    if (blead != lead)
      throw ShapeMismatch("matmul: batched operands with different leading dims");
  }

  std::vector<int> out_shape = lead;
  out_shape.push_back(m);
  out_shape.push_back(n);
  auto out = make_node(out_shape);

  const int64_t a_stride = (int64_t)m * k;
  const int64_t b_block = (int64_t)(transpose_b ? n * k : k * n);
  const int64_t o_stride = (int64_t)m * n;

  for (int64_t t = 0; t < batch; ++t) {
    CMatMap A(a.data().data() + t * a_stride, m, k);
    CMatMap B(b.data().data() + (b_batched ? t * b_block : 0),
              transpose_b ? n : k, transpose_b ? k : n);
    MatMap C(out->data.data() + t * o_stride, m, n);
    if (transpose_b)
      C.noalias() = A * B.transpose();
    else
      C.noalias() = A * B;
  }
  check_finite(out->data, "matmul");

  auto an = a.node();
  auto bn = b.node();
  if (needs_grad(an) || needs_grad(bn)) {
    out->parents = {an, bn};
    out->backward_fn = [an, bn, m, k, n, batch, a_stride, b_block, o_stride,
                        b_batched, transpose_b](Tensor::Node& o) {
      const bool ga = needs_grad(an);
      const bool gb = needs_grad(bn);
      if (ga) an->ensure_grad();
      if (gb) bn->ensure_grad();
      for (int64_t t = 0; t < batch; ++t) {
        CMatMap dC(o.grad.data() + t * o_stride, m, n);
        CMatMap A(an->data.data() + t * a_stride, m, k);
        CMatMap B(bn->data.data() + (b_batched ? t * b_block : 0),
                  transpose_b ? n : k, transpose_b ? k : n);
        if (ga) {
          MatMap dA(an->grad.data() + t * a_stride, m, k);
          if (transpose_b)
            dA.noalias() += dC * B;
          else
            dA.noalias() += dC * B.transpose();
        }
        if (gb) {
          MatMap dB(bn->grad.data() + (b_batched ? t * b_block : 0),
                    transpose_b ? n : k, transpose_b ? k : n);
          if (transpose_b)
            dB.noalias() += dC.transpose() * A;
          else
            dB.noalias() += A.transpose() * dC;
        }
      }
    };
  }
  return Tensor(out);
}

// --- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (bs.size() > as.size() ||
      !std::equal(bs.rbegin(), bs.rend(), as.rbegin()))
    throw ShapeMismatch("add: " + shape_str(bs) + " is not a suffix of " +
                        shape_str(as));
  const int64_t bn_size = shape_size(bs);
  auto out = make_node(as);
  for (int64_t i = 0; i < (int64_t)out->data.size(); ++i)
    out->data[i] = a.data()[i] + b.data()[i % bn_size];
  check_finite(out->data, "add");

  auto an = a.node();
  auto bn = b.node();
  if (needs_grad(an) || needs_grad(bn)) {
    out->parents = {an, bn};
    out->backward_fn = [an, bn, bn_size](Tensor::Node& o) {
      if (needs_grad(an)) {
        auto& g = an->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
      }
      if (needs_grad(bn)) {
        auto& g = bn->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) g[i % bn_size] += o.grad[i];
      }
    };
  }
  return Tensor(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return add(a, scale(b, -1.0));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeMismatch("mul: shape mismatch");
  auto out = make_node(a.shape());
  for (size_t i = 0; i < out->data.size(); ++i)
    out->data[i] = a.data()[i] * b.data()[i];
  check_finite(out->data, "mul");
  auto an = a.node();
  auto bn = b.node();
  if (needs_grad(an) || needs_grad(bn)) {
    out->parents = {an, bn};
    out->backward_fn = [an, bn](Tensor::Node& o) {
      if (needs_grad(an)) {
        auto& g = an->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i)
          g[i] += o.grad[i] * bn->data[i];
      }
      if (needs_grad(bn)) {
        auto& g = bn->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i)
          g[i] += o.grad[i] * an->data[i];
      }
    };
  }
  return Tensor(out);
}

Tensor scale(const Tensor& a, double s) {
  auto out = make_node(a.shape());
  for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a.data()[i] * s;
  check_finite(out->data, "scale");
  auto an = a.node();
  if (needs_grad(an)) {
    out->parents = {an};
    out->backward_fn = [an, s](Tensor::Node& o) {
      auto& g = an->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * s;
    };
  }
  return Tensor(out);
}

Tensor relu(const Tensor& a) {
  auto out = make_node(a.shape());
  for (size_t i = 0; i < out->data.size(); ++i)
    out->data[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  auto an = a.node();
  if (needs_grad(an)) {
    out->parents = {an};
    out->backward_fn = [an](Tensor::Node& o) {
      auto& g = an->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i)
        if (an->data[i] > 0.0) g[i] += o.grad[i];
    };
  }
  return Tensor(out);
}

Tensor sigmoid(const Tensor& a) {
  auto out = make_node(a.shape());
  for (size_t i = 0; i < out->data.size(); ++i)
    out->data[i] = 1.0 / (1.0 + std::exp(-a.data()[i]));
  check_finite(out->data, "sigmoid");
  auto an = a.node();
  if (needs_grad(an)) {
    out->parents = {an};
    out->backward_fn = [an](Tensor::Node& o) {
      auto& g = an->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) {
        double y = o.data[i];
        g[i] += o.grad[i] * y * (1.0 - y);
      }
    };
  }
  return Tensor(out);
}

// --- softmax family ---------------------------------------------------------

Tensor softmax_rows(const Tensor& a) {
  const auto& s = a.shape();
  const int n = s.back();
  const int64_t rows = shape_size(s) / n;
  auto out = make_node(s);
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * n;
    double* y = out->data.data() + r * n;
    double mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (int j = 0; j < n; ++j) y[j] /= sum;
  }
  check_finite(out->data, "softmax_rows");
  auto an = a.node();
  if (needs_grad(an)) {
    out->parents = {an};
    out->backward_fn = [an, rows, n](Tensor::Node& o) {
      auto& g = an->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const double* y = o.data.data() + r * n;
        const double* dy = o.grad.data() + r * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += dy[j] * y[j];
        for (int j = 0; j < n; ++j) g[r * n + j] += y[j] * (dy[j] - dot);
      }
    };
  }
  return Tensor(out);
}

Tensor masked_softmax_rows(const Tensor& a, const Tensor& mask) {
  const auto& s = a.shape();
  const auto& ms = mask.shape();
  const int n = s.back();
  const int64_t total = shape_size(s);
  const int64_t rows = total / n;
  const int64_t msize = shape_size(ms);
  if (total % msize != 0 ||
      !std::equal(ms.rbegin(), ms.rend(), s.rbegin()))
    throw ShapeMismatch("masked_softmax_rows: mask " + shape_str(ms) +
                        " incompatible with " + shape_str(s));

  auto out = make_node(s);
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * n;
    const double* m = mask.data().data() + (r * n) % msize;
    double* y = out->data.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j)
      if (m[j] != 0.0) mx = std::max(mx, x[j]);
    if (!std::isfinite(mx)) {
      for (int j = 0; j < n; ++j) y[j] = 0.0;  // fully masked row
      continue;
    }
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      y[j] = (m[j] != 0.0) ? std::exp(x[j] - mx) : 0.0;
      sum += y[j];
    }
    for (int j = 0; j < n; ++j) y[j] /= sum;
  }
  check_finite(out->data, "masked_softmax_rows");

  auto an = a.node();
  auto mn = mask.node();
  if (needs_grad(an)) {
    out->parents = {an, mn};
    out->backward_fn = [an, mn, rows, n, msize](Tensor::Node& o) {
      auto& g = an->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const double* y = o.data.data() + r * n;
        const double* dy = o.grad.data() + r * n;
        const double* m = mn->data.data() + (r * n) % msize;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += dy[j] * y[j];
        for (int j = 0; j < n; ++j)
          if (m[j] != 0.0) g[r * n + j] += y[j] * (dy[j] - dot);
      }
    };
  }
  return Tensor(out);
}

// --- normalizations ---------------------------------------------------------

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps) {
  const auto& s = x.shape();
  const int n = s.back();
  if (gain.size() != n || bias.size() != n)
    throw ShapeMismatch("layer_norm_rows: gain/bias size mismatch");
  const int64_t rows = shape_size(s) / n;

  auto out = make_node(s);
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (int64_t r = 0; r < rows; ++r) {
    const double* xi = x.data().data() + r * n;
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += xi[j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (int j = 0; j < n; ++j) {
      double xh = (xi[j] - mu) * is;
      (*xhat)[r * n + j] = xh;
      out->data[r * n + j] = gain.data()[j] * xh + bias.data()[j];
    }
  }
  check_finite(out->data, "layer_norm_rows");

  auto xn = x.node();
  auto gn = gain.node();
  auto bn = bias.node();
  if (needs_grad(xn) || needs_grad(gn) || needs_grad(bn)) {
    out->parents = {xn, gn, bn};
    out->backward_fn = [xn, gn, bn, xhat, inv_std, rows, n](Tensor::Node& o) {
      for (int64_t r = 0; r < rows; ++r) {
        const double* dy = o.grad.data() + r * n;
        const double* xh = xhat->data() + r * n;
        if (needs_grad(gn)) {
          auto& gg = gn->ensure_grad();
          for (int j = 0; j < n; ++j) gg[j] += dy[j] * xh[j];
        }
        if (needs_grad(bn)) {
          auto& gb = bn->ensure_grad();
          for (int j = 0; j < n; ++j) gb[j] += dy[j];
        }
        if (needs_grad(xn)) {
          auto& gx = xn->ensure_grad();
          double m1 = 0.0, m2 = 0.0;
          for (int j = 0; j < n; ++j) {
            double dxh = dy[j] * gn->data[j];
            m1 += dxh;
            m2 += dxh * xh[j];
          }
          m1 /= n;
          m2 /= n;
          const double is = (*inv_std)[r];
          for (int j = 0; j < n; ++j) {
            double dxh = dy[j] * gn->data[j];
            gx[r * n + j] += is * (dxh - m1 - xh[j] * m2);
          }
        }
      }
    };
  }
  return Tensor(out);
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  const std::vector<uint8_t>& valid, BatchNormState& state,
                  bool train, double eps) {
  const auto& s = x.shape();
  if (s.size() != 3) throw ShapeMismatch("batch_norm expects (B,L,N)");
  const int B = s[0], L = s[1], N = s[2];
  if ((int)valid.size() != B * L)
    throw ShapeMismatch("batch_norm: valid mask size mismatch");
  if (gamma.size() != N || beta.size() != N)
    throw ShapeMismatch("batch_norm: gamma/beta size mismatch");

  if (state.running_mean.empty()) {
    state.running_mean.assign(N, 0.0);
    state.running_var.assign(N, 1.0);
  }

  std::vector<double> mu(N, 0.0), var(N, 0.0);
  int64_t m = 0;
  if (train) {
    for (int p = 0; p < B * L; ++p)
      if (valid[p]) ++m;
    if (m == 0) throw ShapeMismatch("batch_norm: no valid positions");
    for (int p = 0; p < B * L; ++p) {
      if (!valid[p]) continue;
      const double* xp = x.data().data() + (int64_t)p * N;
      for (int j = 0; j < N; ++j) mu[j] += xp[j];
    }
    for (int j = 0; j < N; ++j) mu[j] /= (double)m;
    for (int p = 0; p < B * L; ++p) {
      if (!valid[p]) continue;
      const double* xp = x.data().data() + (int64_t)p * N;
      for (int j = 0; j < N; ++j) var[j] += (xp[j] - mu[j]) * (xp[j] - mu[j]);
    }
    for (int j = 0; j < N; ++j) var[j] /= (double)m;
    for (int j = 0; j < N; ++j) {
      if (!state.initialized) {
        state.running_mean[j] = mu[j];
        state.running_var[j] = var[j];
      } else {
        state.running_mean[j] =
            state.momentum * state.running_mean[j] + (1.0 - state.momentum) * mu[j];
        state.running_var[j] =
            state.momentum * state.running_var[j] + (1.0 - state.momentum) * var[j];
      }
    }
    state.initialized = true;
  } else {
    mu = state.running_mean;
    var = state.running_var;
  }

  auto out = make_node(s);
  auto inv_std = std::make_shared<std::vector<double>>(N);
  for (int j = 0; j < N; ++j) (*inv_std)[j] = 1.0 / std::sqrt(var[j] + eps);
  auto mu_s = std::make_shared<std::vector<double>>(mu);
  for (int p = 0; p < B * L; ++p) {
    const double* xp = x.data().data() + (int64_t)p * N;
    double* yp = out->data.data() + (int64_t)p * N;
    for (int j = 0; j < N; ++j)
      yp[j] = gamma.data()[j] * (xp[j] - mu[j]) * (*inv_std)[j] + beta.data()[j];
  }
  check_finite(out->data, "batch_norm");

  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  if (needs_grad(xn) || needs_grad(gn) || needs_grad(bn)) {
    auto valid_s = std::make_shared<std::vector<uint8_t>>(valid);
    out->parents = {xn, gn, bn};
    out->backward_fn = [xn, gn, bn, inv_std, mu_s, valid_s, B, L, N, m,
                        train](Tensor::Node& o) {
      const int P = B * L;
      if (needs_grad(gn) || needs_grad(bn)) {
        for (int p = 0; p < P; ++p) {
          const double* dy = o.grad.data() + (int64_t)p * N;
          const double* xp = xn->data.data() + (int64_t)p * N;
          if (needs_grad(gn)) {
            auto& gg = gn->ensure_grad();
            for (int j = 0; j < N; ++j)
              gg[j] += dy[j] * (xp[j] - (*mu_s)[j]) * (*inv_std)[j];
          }
          if (needs_grad(bn)) {
            auto& gb = bn->ensure_grad();
            for (int j = 0; j < N; ++j) gb[j] += dy[j];
          }
        }
      }
      if (!needs_grad(xn)) return;
      auto& gx = xn->ensure_grad();
      if (!train) {
        for (int p = 0; p < P; ++p) {
          const double* dy = o.grad.data() + (int64_t)p * N;
          for (int j = 0; j < N; ++j)
            gx[(int64_t)p * N + j] += dy[j] * gn->data[j] * (*inv_std)[j];
        }
        return;
      }
      // Batch statistics were computed from valid positions only, but
      // every position was normalized with them.
      std::vector<double> dmu(N, 0.0), dvar(N, 0.0);
      for (int p = 0; p < P; ++p) {
        const double* dy = o.grad.data() + (int64_t)p * N;
        const double* xp = xn->data.data() + (int64_t)p * N;
        for (int j = 0; j < N; ++j) {
          const double gs = dy[j] * gn->data[j];
          dmu[j] -= gs * (*inv_std)[j];
          dvar[j] -= 0.5 * gs * (xp[j] - (*mu_s)[j]) * (*inv_std)[j] *
                     (*inv_std)[j] * (*inv_std)[j];
        }
      }
      for (int p = 0; p < P; ++p) {
        const double* dy = o.grad.data() + (int64_t)p * N;
        const double* xp = xn->data.data() + (int64_t)p * N;
        double* gp = gx.data() + (int64_t)p * N;
        for (int j = 0; j < N; ++j)
          gp[j] += dy[j] * gn->data[j] * (*inv_std)[j];
        if ((*valid_s)[p]) {
          for (int j = 0; j < N; ++j)
            gp[j] += dmu[j] / (double)m +
                     dvar[j] * 2.0 * (xp[j] - (*mu_s)[j]) / (double)m;
        }
      }
    };
  }
  return Tensor(out);
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool train) {
  if (!train || rate <= 0.0) return x;
  if (rate >= 1.0) throw ShapeMismatch("dropout: rate must be < 1");
  const double keep = 1.0 - rate;
  auto mask = std::make_shared<std::vector<double>>(x.size());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : *mask) v = (u(rng) < keep) ? 1.0 / keep : 0.0;
  auto out = make_node(x.shape());
  for (size_t i = 0; i < out->data.size(); ++i)
    out->data[i] = x.data()[i] * (*mask)[i];
  auto xn = x.node();
  if (needs_grad(xn)) {
    out->parents = {xn};
    out->backward_fn = [xn, mask](Tensor::Node& o) {
      auto& g = xn->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * (*mask)[i];
    };
  }
  return Tensor(out);
}

Tensor embedding_gather(const Tensor& table, const std::vector<int>& ids,
                        const std::vector<int>& ids_shape) {
  const auto& ts = table.shape();
  if (ts.size() != 2) throw ShapeMismatch("embedding_gather: table must be 2-D");
  const int V = ts[0], N = ts[1];
  if ((int64_t)ids.size() != shape_size(ids_shape))
    throw ShapeMismatch("embedding_gather: ids size mismatch");
  for (int id : ids)
    if (id < 0 || id >= V)
      throw std::out_of_range("embedding_gather: id out of range: " +
                              std::to_string(id));
  std::vector<int> out_shape = ids_shape;
  out_shape.push_back(N);
  auto out = make_node(out_shape);
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.data().data() + (int64_t)ids[i] * N, N,
                out->data.data() + (int64_t)i * N);

  auto tn = table.node();
  if (needs_grad(tn)) {
    auto ids_s = std::make_shared<std::vector<int>>(ids);
    out->parents = {tn};
    out->backward_fn = [tn, ids_s, N](Tensor::Node& o) {
      auto& g = tn->ensure_grad();
      for (size_t i = 0; i < ids_s->size(); ++i) {
        const double* dy = o.grad.data() + (int64_t)i * N;
        double* gr = g.data() + (int64_t)(*ids_s)[i] * N;
        for (int j = 0; j < N; ++j) gr[j] += dy[j];
      }
    };
  }
  return Tensor(out);
}

Tensor concat_last_axis(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_last_axis: empty input");
  auto lead = parts[0].shape();
  lead.pop_back();
  int total = 0;
  std::vector<int> widths;
  for (const auto& p : parts) {
    auto l = p.shape();
    int w = l.back();
    l.pop_back();
    if (l != lead) throw ShapeMismatch("concat_last_axis: leading dims differ");
    widths.push_back(w);
    total += w;
  }
  const int64_t rows = shape_size(lead);
  std::vector<int> out_shape = lead;
  out_shape.push_back(total);
  auto out = make_node(out_shape);
  int64_t off = 0;
  for (size_t p = 0; p < parts.size(); ++p) {
    const int w = widths[p];
    for (int64_t r = 0; r < rows; ++r)
      std::copy_n(parts[p].data().data() + r * w, w,
                  out->data.data() + r * total + off);
    off += w;
  }

  bool any = false;
  for (const auto& p : parts) any = any || needs_grad(p.node());
  if (any) {
    for (const auto& p : parts) out->parents.push_back(p.node());
    auto widths_s = std::make_shared<std::vector<int>>(widths);
    out->backward_fn = [widths_s, rows, total](Tensor::Node& o) {
      int64_t off = 0;
      for (size_t p = 0; p < o.parents.size(); ++p) {
        const int w = (*widths_s)[p];
        auto& pn = o.parents[p];
        if (needs_grad(pn)) {
          auto& g = pn->ensure_grad();
          for (int64_t r = 0; r < rows; ++r)
            for (int j = 0; j < w; ++j)
              g[r * w + j] += o.grad[r * total + off + j];
        }
        off += w;
      }
    };
  }
  return Tensor(out);
}

Tensor cross_entropy_masked(const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<double>& weights) {
  const auto& s = logits.shape();
  const int V = s.back();
  const int64_t rows = shape_size(s) / V;
  if ((int64_t)targets.size() != rows || (int64_t)weights.size() != rows)
    throw ShapeMismatch("cross_entropy_masked: target/weight rows mismatch");

  double wsum = 0.0;
  for (double w : weights) wsum += w;
  const double denom = wsum > 0.0 ? wsum : 1.0;

  auto probs = std::make_shared<std::vector<double>>(logits.size());
  double loss = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    const double* z = logits.data().data() + r * V;
    double* p = probs->data() + r * V;
    double mx = z[0];
    for (int j = 1; j < V; ++j) mx = std::max(mx, z[j]);
    double sum = 0.0;
    for (int j = 0; j < V; ++j) {
      p[j] = std::exp(z[j] - mx);
      sum += p[j];
    }
    for (int j = 0; j < V; ++j) p[j] /= sum;
    if (weights[r] != 0.0) {
      const int t = targets[r];
      if (t < 0 || t >= V)
        throw std::out_of_range("cross_entropy_masked: target out of range");
      loss += weights[r] * (std::log(sum) + mx - z[t]);
    }
  }
  loss /= denom;
  if (!std::isfinite(loss))
    throw NonFiniteDetected("non-finite loss in cross_entropy_masked");

  auto out = make_node({1});
  out->data[0] = loss;
  auto ln = logits.node();
  if (needs_grad(ln)) {
    auto tg = std::make_shared<std::vector<int>>(targets);
    auto wg = std::make_shared<std::vector<double>>(weights);
    out->parents = {ln};
    out->backward_fn = [ln, probs, tg, wg, rows, V, denom](Tensor::Node& o) {
      auto& g = ln->ensure_grad();
      const double d = o.grad[0] / denom;
      for (int64_t r = 0; r < rows; ++r) {
        const double w = (*wg)[r];
        if (w == 0.0) continue;
        const double* p = probs->data() + r * V;
        double* gr = g.data() + r * V;
        for (int j = 0; j < V; ++j) gr[j] += d * w * p[j];
        gr[(*tg)[r]] -= d * w;
      }
    };
  }
  return Tensor(out);
}

Tensor cross_entropy_soft(const Tensor& logits,
                          const std::vector<double>& target_probs,
                          const std::vector<double>& row_weights) {
  const auto& s = logits.shape();
  const int V = s.back();
  const int64_t rows = shape_size(s) / V;
  if ((int64_t)target_probs.size() != rows * V ||
      (int64_t)row_weights.size() != rows)
    throw ShapeMismatch("cross_entropy_soft: target/weight size mismatch");

  double wsum = 0.0;
  for (double w : row_weights) wsum += w;
  const double denom = wsum > 0.0 ? wsum : 1.0;

  auto probs = std::make_shared<std::vector<double>>(logits.size());
  double loss = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    const double* z = logits.data().data() + r * V;
    double* p = probs->data() + r * V;
    double mx = z[0];
    for (int j = 1; j < V; ++j) mx = std::max(mx, z[j]);
    double sum = 0.0;
    for (int j = 0; j < V; ++j) {
      p[j] = std::exp(z[j] - mx);
      sum += p[j];
    }
    const double lse = std::log(sum) + mx;
    for (int j = 0; j < V; ++j) p[j] /= sum;
    if (row_weights[r] != 0.0) {
      double ce = 0.0;
      for (int j = 0; j < V; ++j)
        if (target_probs[r * V + j] != 0.0)
          ce += target_probs[r * V + j] * (lse - z[j]);
      loss += row_weights[r] * ce;
    }
  }
  loss /= denom;
  if (!std::isfinite(loss))
    throw NonFiniteDetected("non-finite loss in cross_entropy_soft");

  auto out = make_node({1});
  out->data[0] = loss;
  auto ln = logits.node();
  if (needs_grad(ln)) {
    auto tg = std::make_shared<std::vector<double>>(target_probs);
    auto wg = std::make_shared<std::vector<double>>(row_weights);
    out->parents = {ln};
    out->backward_fn = [ln, probs, tg, wg, rows, V, denom](Tensor::Node& o) {
      auto& g = ln->ensure_grad();
      const double d = o.grad[0] / denom;
      for (int64_t r = 0; r < rows; ++r) {
        const double w = (*wg)[r];
        if (w == 0.0) continue;
        for (int j = 0; j < V; ++j)
          g[r * V + j] +=
              d * w * ((*probs)[r * V + j] - (*tg)[r * V + j]);
      }
    };
  }
  return Tensor(out);
}

Tensor binary_cross_entropy_logits(const Tensor& logits,
                                   const std::vector<double>& labels,
                                   const std::vector<double>& weights) {
  const int64_t n = logits.size();
  if ((int64_t)labels.size() != n || (int64_t)weights.size() != n)
    throw ShapeMismatch("binary_cross_entropy_logits: size mismatch");
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  const double denom = wsum > 0.0 ? wsum : 1.0;

  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    if (weights[i] == 0.0) continue;
    const double z = logits.data()[i];
    const double y = labels[i];
    loss += weights[i] *
            (std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))));
  }
  loss /= denom;
  if (!std::isfinite(loss))
    throw NonFiniteDetected("non-finite loss in binary_cross_entropy_logits");

  auto out = make_node({1});
  out->data[0] = loss;
  auto ln = logits.node();
  if (needs_grad(ln)) {
    auto yl = std::make_shared<std::vector<double>>(labels);
    auto wl = std::make_shared<std::vector<double>>(weights);
    out->parents = {ln};
    out->backward_fn = [ln, yl, wl, n, denom](Tensor::Node& o) {
      auto& g = ln->ensure_grad();
      const double d = o.grad[0] / denom;
      for (int64_t i = 0; i < n; ++i) {
        if ((*wl)[i] == 0.0) continue;
        const double p = 1.0 / (1.0 + std::exp(-ln->data[i]));
        g[i] += d * (*wl)[i] * (p - (*yl)[i]);
      }
    };
  }
  return Tensor(out);
}

Tensor mean_pool_rows(const Tensor& x, const std::vector<uint8_t>& valid) {
  const auto& s = x.shape();
  if (s.size() != 3) throw ShapeMismatch("mean_pool_rows expects (B,L,N)");
  const int B = s[0], L = s[1], N = s[2];
  if ((int)valid.size() != B * L)
    throw ShapeMismatch("mean_pool_rows: valid mask size mismatch");
  auto out = make_node({B, N});
  auto counts = std::make_shared<std::vector<int>>(B, 0);
  for (int b = 0; b < B; ++b) {
    for (int l = 0; l < L; ++l) {
      if (!valid[b * L + l]) continue;
      ++(*counts)[b];
      const double* xp = x.data().data() + ((int64_t)b * L + l) * N;
      for (int j = 0; j < N; ++j) out->data[(int64_t)b * N + j] += xp[j];
    }
    if ((*counts)[b] > 0)
      for (int j = 0; j < N; ++j) out->data[(int64_t)b * N + j] /= (*counts)[b];
  }
  auto xn = x.node();
  if (needs_grad(xn)) {
    auto valid_s = std::make_shared<std::vector<uint8_t>>(valid);
    out->parents = {xn};
    out->backward_fn = [xn, valid_s, counts, B, L, N](Tensor::Node& o) {
      auto& g = xn->ensure_grad();
      for (int b = 0; b < B; ++b) {
        if ((*counts)[b] == 0) continue;
        const double inv = 1.0 / (*counts)[b];
        for (int l = 0; l < L; ++l) {
          if (!(*valid_s)[b * L + l]) continue;
          double* gp = g.data() + ((int64_t)b * L + l) * N;
          for (int j = 0; j < N; ++j) gp[j] += o.grad[(int64_t)b * N + j] * inv;
        }
      }
    };
  }
  return Tensor(out);
}

Tensor sum_all(const Tensor& a) {
  auto out = make_node({1});
  double s = 0.0;
  for (double v : a.data()) s += v;
  out->data[0] = s;
  auto an = a.node();
  if (needs_grad(an)) {
    out->parents = {an};
    out->backward_fn = [an](Tensor::Node& o) {
      auto& g = an->ensure_grad();
      for (auto& v : g) v += o.grad[0];
    };
  }
  return Tensor(out);
}

// --- backward ---------------------------------------------------------------

void backward(const Tensor& loss) {
  if (loss.size() != 1) throw NotScalar("backward: loss must be scalar");
  std::vector<Tensor::Node*> order;
  std::unordered_set<Tensor::Node*> seen;
  std::vector<std::pair<Tensor::Node*, size_t>> stack;
  stack.push_back({loss.node().get(), 0});
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Tensor::Node* p = node->parents[idx++].get();
      if (p->backward_fn && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor::Node* n = *it;
    if (n->backward_fn) {
      n->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

GradCheckReport grad_check(const std::function<Tensor()>& f, Tensor x,
                           double h) {
  GradCheckReport rep;
  x.set_requires_grad(true);
  Tensor loss = f();
  x.zero_grad();
  // clear any stale grads elsewhere is the caller's job; x is the probe
  backward(loss);
  std::vector<double> analytic = x.grad();
  for (int64_t i = 0; i < x.size(); ++i) {
    const double orig = x.data()[i];
    x.data()[i] = orig + h;
    const double fp = f().item();
    x.data()[i] = orig - h;
    const double fm = f().item();
    x.data()[i] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[i];
    const double rel = std::abs(a - numeric) /
                       std::max({std::abs(a), std::abs(numeric), 1e-8});
    rep.max_rel_err = std::max(rep.max_rel_err, rel);
    ++rep.checked;
  }
  return rep;
}

Tensor randn(std::vector<int> shape, double stddev, Rng& rng,
             bool requires_grad) {
  std::normal_distribution<double> d(0.0, stddev);
  auto n = make_node(std::move(shape));
  for (auto& v : n->data) v = d(rng);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor xavier_uniform(int fan_in, int fan_out, Rng& rng, bool requires_grad) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> d(-limit, limit);
  auto n = make_node({fan_in, fan_out});
  for (auto& v : n->data) v = d(rng);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

}  // namespace dnsgt
