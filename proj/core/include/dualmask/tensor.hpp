#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dualmask {

/// Raised when a caller violates an operation's precondition.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when tensor shapes are incompatible; the message names both shapes.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

using Shape = std::vector<std::size_t>;

/// Per-position boolean flags (contiguous, unlike std::vector<bool>).
using Flags = std::vector<std::uint8_t>;

std::string shape_string(const Shape& shape);

/// Allocator returning 64-byte aligned blocks. Vectorized reductions peel
/// their first elements up to an alignment boundary, so a fixed base
/// alignment is what makes results bit-identical between runs.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

namespace detail {
struct TensorImpl {
  Shape shape;
  Buffer data;
  Buffer grad;  // empty until the first accumulation
  bool requires_grad = false;

  Buffer& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};
}  // namespace detail

/// Dense row-major tensor of doubles. Tensors produced by operations are
/// immutable; only leaf parameters are updated in place by an optimizer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }
  /// Leading extent (1 for scalars).
  std::size_t rows() const;
  /// Product of trailing extents (1 for rank <= 1).
  std::size_t cols() const;

  std::span<const double> data() const { return impl_->data; }
  double at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  /// Accumulated gradient; all zeros when nothing has been accumulated.
  std::vector<double> grad() const;
  bool has_grad() const { return !impl_->grad.empty(); }
  void zero_grad() { impl_->grad.clear(); }

  /// In-place access for leaf parameters (optimizer, checkpoint loading).
  std::span<double> mutable_data() { return impl_->data; }
  std::span<double> mutable_grad() { return impl_->grad_buffer(); }

  /// Copy of this tensor's values with no gradient tracking.
  Tensor detach() const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Reverse-mode gradient tape. Operations record onto the tape installed by
/// the innermost live TapeScope on the current thread; with no scope active,
/// nothing is recorded and no gradient memory is kept.
class Tape {
 public:
  void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  /// Runs recorded backward closures newest-first.
  void run_backward();

 private:
  std::vector<std::function<void()>> nodes_;
};

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

/// Seeds d(loss)/d(loss) = 1 and back-propagates through the active tape.
/// Throws ContractError if `loss` is not a scalar or no tape is active.
void backward(const Tensor& loss);

// ---------------------------------------------------------------- operations
// All operations treat rank-2 tensors as [rows x cols]; rank-1 tensors of
// length n behave as [1 x n] where a row vector is expected.

Tensor matmul(const Tensor& a, const Tensor& b);
/// x[n x in] * w[in x out] + bias[out] broadcast over rows.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& a);
Tensor gelu(const Tensor& x);
/// Row-wise layer normalization with learned gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Rows of `table` selected by `ids`; gradient scatter-adds into the table.
Tensor embedding(const Tensor& table, std::span<const int> ids);
/// Arbitrary row gather (rows may repeat).
Tensor select_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor concat_cols(const Tensor& left, const Tensor& right);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor mean_rows(const Tensor& x);
/// Adds rows [0, x.rows()) of `table` to x, block-wise every `block` rows:
/// out[b*block + i] = x[b*block + i] + table[i].
Tensor add_row_table(const Tensor& x, const Tensor& table, std::size_t block);

enum class AttentionKind { bidirectional, causal };

/// Multi-head scaled dot-product self-attention over qkv = [Q | K | V]
/// (rows x 3D). Rows are grouped into independent sequences of length
/// `seq_len`. Causal attention lets row i see rows 0..i of its sequence.
/// When `probs_out` is non-null it receives the attention weights laid out
/// [sequence][head][query][key].
Tensor attention(const Tensor& qkv, std::size_t heads, std::size_t seq_len, AttentionKind kind,
                 std::vector<double>* probs_out = nullptr);

/// Sum over rows of weights[i] * -log softmax(logits[i])[targets[i]]; rows
/// with zero weight are skipped. Numerically stabilized by max-subtraction.
Tensor weighted_cross_entropy(const Tensor& logits, std::span<const int> targets,
                              std::span<const double> weights);

/// Mean over active rows of -log softmax(logits)[target]. With no active rows
/// the result is a defined zero with zero gradient.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets,
                             std::span<const std::uint8_t> active);

/// Logit clamp applied before every sigmoid so probabilities stay inside (0,1).
inline constexpr double kLogitClamp = 30.0;

/// Sum over rows of weights[i] * BCE(sigmoid(clamp(x[i])), labels[i]).
Tensor weighted_bce_with_logits(const Tensor& logits, std::span<const std::uint8_t> labels,
                                std::span<const double> weights);

double clamped_sigmoid(double x);

}  // namespace dualmask
