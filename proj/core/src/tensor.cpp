#include "dualmask/tensor.hpp"

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace dualmask {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using Strided = Eigen::OuterStride<>;
using SMapMat = Eigen::Map<RowMat, 0, Strided>;
using CSMapMat = Eigen::Map<const RowMat, 0, Strided>;

thread_local Tape* g_active_tape = nullptr;

using ImplPtr = std::shared_ptr<detail::TensorImpl>;

ImplPtr make_impl(Shape shape, Buffer data, bool requires_grad) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return impl;
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

// Output tensor; marked as requiring grad when it will be on the tape.
Tensor make_output(Shape shape, Buffer data, bool track) {
  return Tensor(make_impl(std::move(shape), std::move(data), track));
}

CMapMat view(const Tensor& t) { return CMapMat(t.data().data(), t.rows(), t.cols()); }

void require_rank2(const Tensor& t, const char* op) {
  if (!t.defined() || t.rank() == 0 || t.rank() > 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " +
                         (t.defined() ? shape_string(t.shape()) : std::string("undefined")));
  }
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ------------------------------------------------------------------- Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw ContractError("tensor extents must be positive, got " + shape_string(shape));
  }
  Buffer data(shape_numel(shape), value);
  return Tensor(make_impl(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw ContractError("tensor extents must be positive, got " + shape_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("data length " + std::to_string(values.size()) + " does not match shape " +
                         shape_string(shape));
  }
  return Tensor(make_impl(std::move(shape), Buffer(values.begin(), values.end()), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_impl(Shape{}, {value}, requires_grad));
}

std::size_t Tensor::rows() const { return rank() == 2 ? shape()[0] : 1; }

std::size_t Tensor::cols() const {
  if (rank() == 0) return 1;
  if (rank() == 1) return shape()[0];
  return numel() / shape()[0];
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return impl_->data[0];
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(impl_->data.size(), 0.0);
  return {impl_->grad.begin(), impl_->grad.end()};
}

Tensor Tensor::detach() const { return Tensor(make_impl(impl_->shape, impl_->data, false)); }

// --------------------------------------------------------------------- Tape

void Tape::run_backward() {
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got " +
                        (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  }
  if (g_active_tape == nullptr) throw ContractError("backward() called with no active tape");
  if (!loss.requires_grad()) return;  // constant loss: every gradient stays zero
  loss.impl()->grad_buffer()[0] += 1.0;
  g_active_tape->run_backward();
}

// --------------------------------------------------------------- operations

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner extents differ for " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), n = b.cols();
  Buffer out(m * n);
  MapMat(out.data(), m, n).noalias() = view(a) * view(b);
  const bool track = tracking({&a, &b});
  Tensor y = make_output({m, n}, std::move(out), track);
  if (track) {
    g_active_tape->record([ai = a.impl(), bi = b.impl(), yi = y.impl(), m, n]() {
      if (yi->grad.empty()) return;
      const std::size_t k = ai->data.size() / m;
      CMapMat dy(yi->grad.data(), m, n);
      if (ai->requires_grad) {
        MapMat(ai->grad_buffer().data(), m, k).noalias() += dy * CMapMat(bi->data.data(), k, n).transpose();
      }
      if (bi->requires_grad) {
        MapMat(bi->grad_buffer().data(), k, n).noalias() += CMapMat(ai->data.data(), m, k).transpose() * dy;
      }
    });
  }
  return y;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank2(x, "linear");
  require_rank2(weight, "linear");
  if (x.cols() != weight.rows() || bias.numel() != weight.cols()) {
    throw DimensionError("linear: incompatible shapes " + shape_string(x.shape()) + ", " +
                         shape_string(weight.shape()) + ", bias " + shape_string(bias.shape()));
  }
  const std::size_t n = x.rows(), in = x.cols(), out_dim = weight.cols();
  Buffer out(n * out_dim);
  MapMat y(out.data(), n, out_dim);
  y.noalias() = view(x) * CMapMat(weight.data().data(), in, out_dim);
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), out_dim);
  const bool track = tracking({&x, &weight, &bias});
  Tensor result = make_output({n, out_dim}, std::move(out), track);
  if (track) {
    g_active_tape->record([xi = x.impl(), wi = weight.impl(), bi = bias.impl(), yi = result.impl(), n, in,
                           out_dim]() {
      if (yi->grad.empty()) return;
      CMapMat dy(yi->grad.data(), n, out_dim);
      if (xi->requires_grad) {
        MapMat(xi->grad_buffer().data(), n, in).noalias() += dy * CMapMat(wi->data.data(), in, out_dim).transpose();
      }
      if (wi->requires_grad) {
        MapMat(wi->grad_buffer().data(), in, out_dim).noalias() += CMapMat(xi->data.data(), n, in).transpose() * dy;
      }
      if (bi->requires_grad) {
        auto& g = bi->grad_buffer();
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t c = 0; c < out_dim; ++c) g[c] += yi->grad[r * out_dim + c];
        }
      }
    });
  }
  return result;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shapes differ " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Buffer out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  const bool track = tracking({&a, &b});
  Tensor y = make_output(a.shape(), std::move(out), track);
  if (track) {
    g_active_tape->record([ai = a.impl(), bi = b.impl(), yi = y.impl()]() {
      if (yi->grad.empty()) return;
      for (auto* in : {ai.get(), bi.get()}) {
        if (!in->requires_grad) continue;
        auto& g = in->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += yi->grad[i];
      }
    });
  }
  return y;
}

Tensor scale(const Tensor& a, double factor) {
  Buffer out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  const bool track = tracking({&a});
  Tensor y = make_output(a.shape(), std::move(out), track);
  if (track) {
    g_active_tape->record([ai = a.impl(), yi = y.impl(), factor]() {
      if (yi->grad.empty()) return;
      auto& g = ai->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += yi->grad[i] * factor;
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shapes differ " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Buffer out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  const bool track = tracking({&a, &b});
  Tensor y = make_output(a.shape(), std::move(out), track);
  if (track) {
    g_active_tape->record([ai = a.impl(), bi = b.impl(), yi = y.impl()]() {
      if (yi->grad.empty()) return;
      if (ai->requires_grad) {
        auto& g = ai->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += yi->grad[i] * bi->data[i];
      }
      if (bi->requires_grad) {
        auto& g = bi->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += yi->grad[i] * ai->data[i];
      }
    });
  }
  return y;
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  const bool track = tracking({&a});
  Tensor y = make_output(Shape{}, {s}, track);
  if (track) {
    g_active_tape->record([ai = a.impl(), yi = y.impl()]() {
      if (yi->grad.empty()) return;
      auto& g = ai->grad_buffer();
      for (auto& v : g) v += yi->grad[0];
    });
  }
  return y;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
  using Arr = Eigen::Array<double, Eigen::Dynamic, 1>;
  const std::size_t n = x.numel();
  Eigen::Map<const Arr> v(x.data().data(), static_cast<Eigen::Index>(n));
  // tanh(u) = 1 - 2 / (exp(2u) + 1), evaluated with the vectorized exp.
  Arr th = 1.0 - 2.0 / ((2.0 * kGeluC * (v + kGeluA * v.cube())).exp() + 1.0);
  Buffer out(n);
  Eigen::Map<Arr>(out.data(), static_cast<Eigen::Index>(n)) = 0.5 * v * (1.0 + th);
  const bool track = tracking({&x});
  Tensor y = make_output(x.shape(), std::move(out), track);
  if (track) {
    g_active_tape->record([xi = x.impl(), yi = y.impl(), th = std::move(th), n]() {
      if (yi->grad.empty()) return;
      const auto len = static_cast<Eigen::Index>(n);
      Eigen::Map<const Arr> xv(xi->data.data(), len);
      Eigen::Map<const Arr> dy(yi->grad.data(), len);
      Eigen::Map<Arr> g(xi->grad_buffer().data(), len);
      const Arr du = kGeluC * (1.0 + 3.0 * kGeluA * xv.square());
      g += dy * (0.5 * (1.0 + th) + 0.5 * xv * (1.0 - th.square()) * du);
    });
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank2(x, "layer_norm");
  const std::size_t n = x.rows(), d = x.cols();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_string(gain.shape()) + "/" + shape_string(bias.shape()) +
                         " do not match input " + shape_string(x.shape()));
  }
  Buffer out(n * d), xhat(n * d), inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = x.data().data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (xr[c] - mean) * inv_std[r];
      out[r * d + c] = xhat[r * d + c] * gain.data()[c] + bias.data()[c];
    }
  }
  const bool track = tracking({&x, &gain, &bias});
  Tensor y = make_output(x.shape(), std::move(out), track);
  if (track) {
    g_active_tape->record([xi = x.impl(), gi = gain.impl(), bi = bias.impl(), yi = y.impl(), xhat = std::move(xhat),
                           inv_std = std::move(inv_std), n, d]() {
      if (yi->grad.empty()) return;
      const auto& dy = yi->grad;
      if (gi->requires_grad || bi->requires_grad) {
        auto* gg = gi->requires_grad ? gi->grad_buffer().data() : nullptr;
        auto* gb = bi->requires_grad ? bi->grad_buffer().data() : nullptr;
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t c = 0; c < d; ++c) {
            if (gg) gg[c] += dy[r * d + c] * xhat[r * d + c];
            if (gb) gb[c] += dy[r * d + c];
          }
        }
      }
      if (xi->requires_grad) {
        auto& gx = xi->grad_buffer();
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t r = 0; r < n; ++r) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            const double g = dy[r * d + c] * gi->data[c];
            sum_g += g;
            sum_gx += g * xhat[r * d + c];
          }
          for (std::size_t c = 0; c < d; ++c) {
            const double g = dy[r * d + c] * gi->data[c];
            gx[r * d + c] += inv_std[r] * (g - inv_d * sum_g - xhat[r * d + c] * inv_d * sum_gx);
          }
        }
      }
    });
  }
  return y;
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_rank2(table, "embedding");
  const std::size_t vocab = table.rows(), d = table.cols();
  if (ids.empty()) throw ContractError("embedding: empty id list");
  Buffer out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw ContractError("embedding: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(vocab) +
                          " rows");
    }
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  const bool track = tracking({&table});
  Tensor y = make_output({ids.size(), d}, std::move(out), track);
  if (track) {
    g_active_tape->record([ti = table.impl(), yi = y.impl(), ids = std::vector<int>(ids.begin(), ids.end()), d]() {
      if (yi->grad.empty()) return;
      auto& g = ti->grad_buffer();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        double* dst = g.data() + static_cast<std::size_t>(ids[i]) * d;
        const double* src = yi->grad.data() + i * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
      }
    });
  }
  return y;
}

Tensor select_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank2(x, "select_rows");
  const std::size_t d = x.cols();
  if (rows.empty()) throw ContractError("select_rows: empty row list");
  Buffer out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) {
      throw DimensionError("select_rows: row " + std::to_string(rows[i]) + " outside " + shape_string(x.shape()));
    }
    std::copy_n(x.data().data() + rows[i] * d, d, out.data() + i * d);
  }
  const bool track = tracking({&x});
  Tensor y = make_output({rows.size(), d}, std::move(out), track);
  if (track) {
    g_active_tape->record(
        [xi = x.impl(), yi = y.impl(), rows = std::vector<std::size_t>(rows.begin(), rows.end()), d]() {
          if (yi->grad.empty()) return;
          auto& g = xi->grad_buffer();
          for (std::size_t i = 0; i < rows.size(); ++i) {
            for (std::size_t c = 0; c < d; ++c) g[rows[i] * d + c] += yi->grad[i * d + c];
          }
        });
  }
  return y;
}

Tensor concat_cols(const Tensor& left, const Tensor& right) {
  require_rank2(left, "concat_cols");
  require_rank2(right, "concat_cols");
  if (left.rows() != right.rows()) {
    throw DimensionError("concat_cols: row counts differ " + shape_string(left.shape()) + " vs " +
                         shape_string(right.shape()));
  }
  const std::size_t n = left.rows(), dl = left.cols(), dr = right.cols(), d = dl + dr;
  Buffer out(n * d);
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(left.data().data() + r * dl, dl, out.data() + r * d);
    std::copy_n(right.data().data() + r * dr, dr, out.data() + r * d + dl);
  }
  const bool track = tracking({&left, &right});
  Tensor y = make_output({n, d}, std::move(out), track);
  if (track) {
    g_active_tape->record([li = left.impl(), ri = right.impl(), yi = y.impl(), n, dl, dr]() {
      if (yi->grad.empty()) return;
      const std::size_t d = dl + dr;
      if (li->requires_grad) {
        auto& g = li->grad_buffer();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < dl; ++c) g[r * dl + c] += yi->grad[r * d + c];
      }
      if (ri->requires_grad) {
        auto& g = ri->grad_buffer();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < dr; ++c) g[r * dr + c] += yi->grad[r * d + dl + c];
      }
    });
  }
  return y;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t d = parts.front().cols();
  std::size_t n = 0;
  bool track = false;
  for (const auto& p : parts) {
    if (p.cols() != d) {
      throw DimensionError("concat_rows: widths differ " + shape_string(parts.front().shape()) + " vs " +
                           shape_string(p.shape()));
    }
    n += p.rows();
    track = track || p.requires_grad();
  }
  track = track && g_active_tape != nullptr;
  Buffer out;
  out.reserve(n * d);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor y = make_output({n, d}, std::move(out), track);
  if (track) {
    std::vector<ImplPtr> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    g_active_tape->record([impls = std::move(impls), yi = y.impl()]() {
      if (yi->grad.empty()) return;
      std::size_t offset = 0;
      for (const auto& p : impls) {
        if (p->requires_grad) {
          auto& g = p->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += yi->grad[offset + i];
        }
        offset += p->data.size();
      }
    });
  }
  return y;
}

Tensor mean_rows(const Tensor& x) {
  require_rank2(x, "mean_rows");
  const std::size_t n = x.rows(), d = x.cols();
  Buffer out(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[c] += x.data()[r * d + c];
  for (auto& v : out) v /= static_cast<double>(n);
  const bool track = tracking({&x});
  Tensor y = make_output({1, d}, std::move(out), track);
  if (track) {
    g_active_tape->record([xi = x.impl(), yi = y.impl(), n, d]() {
      if (yi->grad.empty()) return;
      auto& g = xi->grad_buffer();
      const double inv = 1.0 / static_cast<double>(n);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) g[r * d + c] += yi->grad[c] * inv;
    });
  }
  return y;
}

Tensor add_row_table(const Tensor& x, const Tensor& table, std::size_t block) {
  require_rank2(x, "add_row_table");
  require_rank2(table, "add_row_table");
  const std::size_t n = x.rows(), d = x.cols();
  if (table.cols() != d || block == 0 || n % block != 0 || table.rows() < block) {
    throw DimensionError("add_row_table: input " + shape_string(x.shape()) + " incompatible with table " +
                         shape_string(table.shape()) + " at block " + std::to_string(block));
  }
  Buffer out(x.data().begin(), x.data().end());
  for (std::size_t r = 0; r < n; ++r) {
    const double* t = table.data().data() + (r % block) * d;
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] += t[c];
  }
  const bool track = tracking({&x, &table});
  Tensor y = make_output(x.shape(), std::move(out), track);
  if (track) {
    g_active_tape->record([xi = x.impl(), ti = table.impl(), yi = y.impl(), n, d, block]() {
      if (yi->grad.empty()) return;
      if (xi->requires_grad) {
        auto& g = xi->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += yi->grad[i];
      }
      if (ti->requires_grad) {
        auto& g = ti->grad_buffer();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < d; ++c) g[(r % block) * d + c] += yi->grad[r * d + c];
      }
    });
  }
  return y;
}

Tensor attention(const Tensor& qkv, std::size_t heads, std::size_t seq_len, AttentionKind kind,
                 std::vector<double>* probs_out) {
  require_rank2(qkv, "attention");
  const std::size_t n = qkv.rows(), width = qkv.cols();
  if (heads == 0 || width % (3 * heads) != 0 || seq_len == 0 || n % seq_len != 0) {
    throw DimensionError("attention: qkv " + shape_string(qkv.shape()) + " incompatible with " +
                         std::to_string(heads) + " heads, sequence length " + std::to_string(seq_len));
  }
  const std::size_t d = width / 3, dh = d / heads, nseq = n / seq_len, S = seq_len;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool track = tracking({&qkv});
  // Probabilities are only materialized for every head when backward or the
  // caller needs them; otherwise one S x S scratch block is reused.
  const bool keep = track || probs_out != nullptr;
  Buffer probs(keep ? nseq * heads * S * S : S * S, 0.0);
  Buffer out(n * d, 0.0);
  RowMat scores(S, S);
  for (std::size_t b = 0; b < nseq; ++b) {
    const double* base = qkv.data().data() + b * S * width;
    for (std::size_t h = 0; h < heads; ++h) {
      CSMapMat q(base + h * dh, S, dh, Strided(width));
      CSMapMat k(base + d + h * dh, S, dh, Strided(width));
      CSMapMat v(base + 2 * d + h * dh, S, dh, Strided(width));
      scores.noalias() = (q * k.transpose()) * scale_factor;
      double* p = probs.data() + (keep ? ((b * heads + h) * S) * S : 0);
      for (std::size_t i = 0; i < S; ++i) {
        // Causal rows only see keys 0..i; the rest of the row stays exactly zero.
        const std::size_t w = kind == AttentionKind::causal ? i + 1 : S;
        const auto src = Eigen::Map<const Eigen::ArrayXd>(scores.data() + i * S, static_cast<Eigen::Index>(w));
        Eigen::Map<Eigen::ArrayXd> dst(p + i * S, static_cast<Eigen::Index>(w));
        dst = (src - src.maxCoeff()).exp();
        dst /= dst.sum();
      }
      SMapMat o(out.data() + b * S * d + h * dh, S, dh, Strided(d));
      o.noalias() = CMapMat(p, S, S) * v;
    }
  }
  if (probs_out) probs_out->assign(probs.begin(), probs.end());
  Tensor y = make_output({n, d}, std::move(out), track);
  if (track) {
    g_active_tape->record([xi = qkv.impl(), yi = y.impl(), probs = std::move(probs), heads, S, nseq, d, dh, width,
                           scale_factor]() {
      if (yi->grad.empty()) return;
      auto& gx = xi->grad_buffer();
      RowMat dp(S, S);
      for (std::size_t b = 0; b < nseq; ++b) {
        const double* base = xi->data.data() + b * S * width;
        double* gbase = gx.data() + b * S * width;
        for (std::size_t h = 0; h < heads; ++h) {
          CSMapMat q(base + h * dh, S, dh, Strided(width));
          CSMapMat k(base + d + h * dh, S, dh, Strided(width));
          CSMapMat v(base + 2 * d + h * dh, S, dh, Strided(width));
          SMapMat gq(gbase + h * dh, S, dh, Strided(width));
          SMapMat gk(gbase + d + h * dh, S, dh, Strided(width));
          SMapMat gv(gbase + 2 * d + h * dh, S, dh, Strided(width));
          CSMapMat dout(yi->grad.data() + b * S * d + h * dh, S, dh, Strided(d));
          CMapMat p(probs.data() + ((b * heads + h) * S) * S, S, S);
          gv.noalias() += p.transpose() * dout;
          dp.noalias() = dout * v.transpose();
          // Softmax Jacobian; masked entries have p == 0 and drop out.
          for (std::size_t i = 0; i < S; ++i) {
            Eigen::Map<Eigen::ArrayXd> g(dp.data() + i * S, static_cast<Eigen::Index>(S));
            const auto pr = Eigen::Map<const Eigen::ArrayXd>(p.data() + i * S, static_cast<Eigen::Index>(S));
            const double dot = (g * pr).sum();
            g = pr * (g - dot) * scale_factor;
          }
          gq.noalias() += dp * k;
          gk.noalias() += dp.transpose() * q;
        }
      }
    });
  }
  return y;
}

Tensor weighted_cross_entropy(const Tensor& logits, std::span<const int> targets, std::span<const double> weights) {
  require_rank2(logits, "weighted_cross_entropy");
  const std::size_t n = logits.rows(), k = logits.cols();
  if (targets.size() != n || weights.size() != n) {
    throw DimensionError("weighted_cross_entropy: logits " + shape_string(logits.shape()) + " with " +
                         std::to_string(targets.size()) + " targets and " + std::to_string(weights.size()) +
                         " weights");
  }
  // Softmax rows kept for backward; only rows with nonzero weight are used.
  Buffer soft(n * k, 0.0);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (weights[r] == 0.0) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= k) {
      throw ContractError("weighted_cross_entropy: target " + std::to_string(targets[r]) + " outside [0," +
                          std::to_string(k) + ")");
    }
    const double* row = logits.data().data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      soft[r * k + c] = std::exp(row[c] - mx);
      z += soft[r * k + c];
    }
    for (std::size_t c = 0; c < k; ++c) soft[r * k + c] /= z;
    loss += weights[r] * (std::log(z) - (row[targets[r]] - mx));
  }
  const bool track = tracking({&logits});
  Tensor y = make_output(Shape{}, {loss}, track);
  if (track) {
    g_active_tape->record([li = logits.impl(), yi = y.impl(), soft = std::move(soft),
                           targets = std::vector<int>(targets.begin(), targets.end()),
                           weights = Buffer(weights.begin(), weights.end()), n, k]() {
      if (yi->grad.empty()) return;
      auto& g = li->grad_buffer();
      const double up = yi->grad[0];
      for (std::size_t r = 0; r < n; ++r) {
        if (weights[r] == 0.0) continue;
        const double w = weights[r] * up;
        for (std::size_t c = 0; c < k; ++c) g[r * k + c] += w * soft[r * k + c];
        g[r * k + static_cast<std::size_t>(targets[r])] -= w;
      }
    });
  }
  return y;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets, std::span<const std::uint8_t> active) {
  require_rank2(logits, "softmax_cross_entropy");
  if (active.size() != logits.rows()) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(active.size()) + " flags for logits " +
                         shape_string(logits.shape()));
  }
  const auto count = static_cast<std::size_t>(std::count_if(active.begin(), active.end(), [](std::uint8_t f) { return f != 0; }));
  if (count == 0) spdlog::debug("softmax_cross_entropy: no active positions, loss defined as 0");
  Buffer weights(active.size(), 0.0);
  for (std::size_t i = 0; i < active.size(); ++i) {
    if (active[i]) weights[i] = 1.0 / static_cast<double>(count);
  }
  return weighted_cross_entropy(logits, targets, weights);
}

double clamped_sigmoid(double x) {
  const double c = std::clamp(x, -kLogitClamp, kLogitClamp);
  return 1.0 / (1.0 + std::exp(-c));
}

Tensor weighted_bce_with_logits(const Tensor& logits, std::span<const std::uint8_t> labels, std::span<const double> weights) {
  const std::size_t n = logits.numel();
  if (labels.size() != n || weights.size() != n) {
    throw DimensionError("weighted_bce_with_logits: logits " + shape_string(logits.shape()) + " with " +
                         std::to_string(labels.size()) + " labels and " + std::to_string(weights.size()) +
                         " weights");
  }
  auto softplus = [](double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); };
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (weights[i] == 0.0) continue;
    const double x = std::clamp(logits.data()[i], -kLogitClamp, kLogitClamp);
    // -log sigmoid(x) = softplus(-x); -log(1 - sigmoid(x)) = softplus(x)
    loss += weights[i] * (labels[i] ? softplus(-x) : softplus(x));
  }
  const bool track = tracking({&logits});
  Tensor y = make_output(Shape{}, {loss}, track);
  if (track) {
    g_active_tape->record([li = logits.impl(), yi = y.impl(), labels = std::vector<std::uint8_t>(labels.begin(), labels.end()),
                           weights = Buffer(weights.begin(), weights.end()), n]() {
      if (yi->grad.empty()) return;
      auto& g = li->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        if (weights[i] == 0.0) continue;
        const double x = li->data[i];
        if (x < -kLogitClamp || x > kLogitClamp) continue;  // clamp is flat outside the band
        g[i] += yi->grad[0] * weights[i] * (clamped_sigmoid(x) - (labels[i] ? 1.0 : 0.0));
      }
    });
  }
  return y;
}

}  // namespace dualmask
