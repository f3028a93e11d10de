#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "maskdiff/errors.hpp"

namespace maskdiff {

class Rng;

// Element type of a tensor. f64 exists for numeric verification (gradient
// checks, loss oracles); f32 is the training/eval default. Ops never mix
// dtypes.
enum class Dtype : uint8_t { f32 = 0, f64 = 1 };

constexpr size_t dtype_size(Dtype dt) { return dt == Dtype::f32 ? 4 : 8; }
const char* dtype_name(Dtype dt);

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {
struct TensorNode;
}

// Value-semantic handle to a dense tensor. When grad mode is on and an
// operand requires gradients, ops record a reverse-mode graph; backward()
// walks it once in reverse topological order and accumulates into leaf
// grads. Rank-0 tensors act as scalars.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, Dtype dt = Dtype::f64,
                      bool requires_grad = false);
  static Tensor full(Shape shape, double value, Dtype dt = Dtype::f64,
                     bool requires_grad = false);
  static Tensor from_vector(Shape shape, std::span<const double> values,
                            Dtype dt = Dtype::f64, bool requires_grad = false);
  static Tensor scalar(double value, Dtype dt = Dtype::f64);
  static Tensor randn(Shape shape, Rng& rng, double mean, double sd,
                      Dtype dt = Dtype::f64, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int64_t dim(int i) const;
  int rank() const;
  int64_t numel() const;
  Dtype dtype() const;
  bool requires_grad() const;

  // Scalar value; contract error unless numel() == 1.
  double item() const;
  double value_at(int64_t flat) const;
  // Direct write into the buffer; meant for leaves (init, optimizer steps,
  // finite-difference probes). Does not touch any recorded graph.
  void set_value_at(int64_t flat, double v);
  std::vector<double> values() const;

  bool has_grad() const;
  double grad_at(int64_t flat) const;
  std::vector<double> grad_values() const;
  void zero_grad();

  // Typed raw access; dtype mismatch is a contract error. grad spans are
  // empty until backward() has touched the tensor.
  std::span<float> data_f32();
  std::span<const float> data_f32() const;
  std::span<double> data_f64();
  std::span<const double> data_f64() const;
  std::span<float> grad_f32();
  std::span<double> grad_f64();

  // Deep copy of the values as a fresh leaf (keeps requires_grad).
  Tensor clone() const;
  // Value copy that never tracks gradients.
  Tensor detach() const;

  detail::TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<detail::TensorNode>& node_ptr() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::TensorNode> n);

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

bool grad_enabled();

// RAII switch that disables graph recording on this thread (forward-only
// evaluation paths).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// ---- ops -------------------------------------------------------------
// Shapes are always explicit; nothing broadcasts except the tensor-scalar
// forms. All ops validate shape/dtype and are differentiable.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double c);
Tensor abs(const Tensor& a);
Tensor gelu(const Tensor& a);

// 2-D matrix product [M,K] x [K,N] -> [M,N].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape new_shape);
// Concatenates 2-D tensors along axis 0 or 1 (1-D along axis 0).
Tensor concat(std::span<const Tensor> parts, int axis);
// Row selection from a 2-D tensor; duplicate indices accumulate gradient.
Tensor gather_rows(const Tensor& a, std::span<const int32_t> rows);
// rows of `table` selected by token id; gradient scatters into the table.
Tensor embedding(const Tensor& table, std::span<const int32_t> ids);

// Last-axis layer norm with affine gain/bias of length d. Statistics are
// computed in double for both dtypes; the small eps keeps the standardized
// output's variance within 1e-6 of one for any reasonable input scale.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-8);
// Last-axis softmax / log-softmax, max-subtracted. Non-finite input is a
// numeric-domain error.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
// Rotary position rotation over a [len, d] block, d even; row index is the
// position. Applied per attention head.
Tensor rotary(const Tensor& x, double base = 10000.0);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Negative log-likelihood of `target` under softmax(logits), logits 1-D.
Tensor cross_entropy(const Tensor& logits, int64_t target);
// Fused sum of cross-entropies at selected rows of [L,V] logits;
// targets[i] labels rows[i]. Rows must be distinct.
Tensor masked_cross_entropy_sum(const Tensor& logits,
                                std::span<const int32_t> targets,
                                std::span<const int32_t> rows);

// Reverse-mode sweep from a scalar loss. Each graph node's backward runs
// exactly once; leaf tensors with requires_grad receive accumulated grads.
void backward(const Tensor& loss);

}  // namespace maskdiff
