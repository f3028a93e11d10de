#include "maskdiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <unordered_set>

#include "maskdiff/rng.hpp"
#include "maskdiff/threadpool.hpp"

namespace maskdiff {

namespace detail {

struct TensorNode {
  Shape shape;
  Dtype dtype = Dtype::f64;
  bool requires_grad = false;
  std::vector<std::byte> data;
  std::vector<std::byte> grad;  // empty until backward touches this node
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  int64_t numel() const { return shape_numel(shape); }

  template <class T>
  std::span<T> as() {
    return {reinterpret_cast<T*>(data.data()), data.size() / sizeof(T)};
  }
  template <class T>
  std::span<const T> as() const {
    return {reinterpret_cast<const T*>(data.data()), data.size() / sizeof(T)};
  }
  template <class T>
  std::span<T> grad_as() {
    if (grad.empty()) grad.assign(data.size(), std::byte{0});
    return {reinterpret_cast<T*>(grad.data()), grad.size() / sizeof(T)};
  }
};

}  // namespace detail

using detail::TensorNode;

namespace {

thread_local bool t_grad_enabled = true;

template <class F>
void dispatch(Dtype dt, F&& f) {
  if (dt == Dtype::f32) {
    f.template operator()<float>();
  } else {
    f.template operator()<double>();
  }
}

std::shared_ptr<TensorNode> new_node(Shape shape, Dtype dt) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->dtype = dt;
  n->data.assign(static_cast<size_t>(n->numel()) * dtype_size(dt),
                 std::byte{0});
  return n;
}

TensorNode& deref(const Tensor& t) {
  MD_CHECK(t.defined(), "op on default-constructed tensor");
  return *t.node();
}

// Builds the op result and wires the graph when recording is active.
Tensor make_result(Shape shape, Dtype dt, std::vector<Tensor> parents,
                   std::function<void(TensorNode&)> backward_fn) {
  auto n = new_node(std::move(shape), dt);
  bool track = t_grad_enabled;
  if (track) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    track = any;
  }
  if (track) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node_ptr());
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(n));
}

void check_same(const Tensor& a, const Tensor& b, const char* op) {
  MD_CHECK(deref(a).shape == deref(b).shape, op);
  MD_CHECK(deref(a).dtype == deref(b).dtype, op);
}

template <class T>
bool span_finite(std::span<const T> v) {
  for (T x : v) {
    if (!std::isfinite(static_cast<double>(x))) return false;
  }
  return true;
}

void check_finite_input(const Tensor& x, const char* op) {
  bool ok = true;
  dispatch(x.dtype(), [&]<class T>() {
    ok = span_finite(std::span<const T>(deref(x).as<T>()));
  });
  if (!ok) throw NumericError(std::string(op) + ": non-finite input");
}

// Treats 1-D [d] as a single row, 2-D [L,d] as L rows.
void rows_cols(const TensorNode& n, int64_t& rows, int64_t& cols) {
  if (n.shape.size() == 1) {
    rows = 1;
    cols = n.shape[0];
  } else if (n.shape.size() == 2) {
    rows = n.shape[0];
    cols = n.shape[1];
  } else {
    MD_CHECK(false, "op expects a 1-D or 2-D tensor");
  }
}

constexpr int64_t kParallelWorkThreshold = 1 << 16;

// c[M,N] += a[M,K] * b[K,N]
template <class T>
void k_matmul_nn(const T* a, const T* b, T* c, int64_t M, int64_t K,
                 int64_t N) {
  auto body = [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      T* crow = c + i * N;
      const T* arow = a + i * K;
      for (int64_t k = 0; k < K; ++k) {
        T av = arow[k];
        const T* brow = b + k * N;
        for (int64_t j = 0; j < N; ++j) crow[j] += av * brow[j];
      }
    }
  };
  if (M * K * N < kParallelWorkThreshold) {
    body(0, M);
  } else {
    mt::parallel_for(M, 1, body);
  }
}

// c[M,N] += a[M,K] * b[N,K]^T
template <class T>
void k_matmul_nt(const T* a, const T* b, T* c, int64_t M, int64_t K,
                 int64_t N) {
  auto body = [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      const T* arow = a + i * K;
      T* crow = c + i * N;
      for (int64_t j = 0; j < N; ++j) {
        const T* brow = b + j * K;
        T acc = 0;
        for (int64_t k = 0; k < K; ++k) acc += arow[k] * brow[k];
        crow[j] += acc;
      }
    }
  };
  if (M * K * N < kParallelWorkThreshold) {
    body(0, M);
  } else {
    mt::parallel_for(M, 1, body);
  }
}

// c[K,N] += a[M,K]^T * b[M,N]; parallel chunks own row ranges of c.
template <class T>
void k_matmul_tn(const T* a, const T* b, T* c, int64_t M, int64_t K,
                 int64_t N) {
  auto body = [&](int64_t k0, int64_t k1) {
    for (int64_t i = 0; i < M; ++i) {
      const T* arow = a + i * K;
      const T* brow = b + i * N;
      for (int64_t k = k0; k < k1; ++k) {
        T av = arow[k];
        T* crow = c + k * N;
        for (int64_t j = 0; j < N; ++j) crow[j] += av * brow[j];
      }
    }
  };
  if (M * K * N < kParallelWorkThreshold) {
    body(0, K);
  } else {
    mt::parallel_for(K, 1, body);
  }
}

template <class T>
void k_softmax_row(const T* x, T* y, int64_t n) {
  T m = x[0];
  for (int64_t i = 1; i < n; ++i) m = std::max(m, x[i]);
  T s = 0;
  for (int64_t i = 0; i < n; ++i) {
    y[i] = std::exp(x[i] - m);
    s += y[i];
  }
  T inv = T(1) / s;
  for (int64_t i = 0; i < n; ++i) y[i] *= inv;
}

template <class T>
T k_logsumexp_row(const T* x, int64_t n) {
  T m = x[0];
  for (int64_t i = 1; i < n; ++i) m = std::max(m, x[i]);
  T s = 0;
  for (int64_t i = 0; i < n; ++i) s += std::exp(x[i] - m);
  return m + std::log(s);
}

Tensor ewise_binary(const Tensor& a, const Tensor& b, const char* name,
                    void (*fwd)(Dtype, const TensorNode&, const TensorNode&,
                                TensorNode&),
                    std::function<void(TensorNode&)> bwd) {
  check_same(a, b, name);
  Tensor out = make_result(a.shape(), a.dtype(), {a, b}, std::move(bwd));
  fwd(a.dtype(), deref(a), deref(b), deref(out));
  return out;
}

}  // namespace

// ---- Tensor basics ---------------------------------------------------

const char* dtype_name(Dtype dt) { return dt == Dtype::f32 ? "f32" : "f64"; }

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    MD_CHECK(d >= 0, "negative dimension");
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor::Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

Tensor Tensor::zeros(Shape shape, Dtype dt, bool requires_grad) {
  auto n = new_node(std::move(shape), dt);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, double value, Dtype dt, bool requires_grad) {
  Tensor t = zeros(std::move(shape), dt, requires_grad);
  dispatch(dt, [&]<class T>() {
    auto d = t.node()->as<T>();
    std::fill(d.begin(), d.end(), static_cast<T>(value));
  });
  return t;
}

Tensor Tensor::from_vector(Shape shape, std::span<const double> values,
                           Dtype dt, bool requires_grad) {
  MD_CHECK(shape_numel(shape) == static_cast<int64_t>(values.size()),
           "from_vector: size mismatch");
  Tensor t = zeros(std::move(shape), dt, requires_grad);
  dispatch(dt, [&]<class T>() {
    auto d = t.node()->as<T>();
    for (size_t i = 0; i < values.size(); ++i) d[i] = static_cast<T>(values[i]);
  });
  return t;
}

Tensor Tensor::scalar(double value, Dtype dt) {
  return full(Shape{}, value, dt, false);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double mean, double sd, Dtype dt,
                     bool requires_grad) {
  Tensor t = zeros(std::move(shape), dt, requires_grad);
  dispatch(dt, [&]<class T>() {
    auto d = t.node()->as<T>();
    for (auto& x : d) x = static_cast<T>(rng.normal(mean, sd));
  });
  return t;
}

const Shape& Tensor::shape() const { return deref(*this).shape; }

int64_t Tensor::dim(int i) const {
  const auto& s = shape();
  MD_CHECK(i >= 0 && i < static_cast<int>(s.size()), "dim out of range");
  return s[static_cast<size_t>(i)];
}

int Tensor::rank() const { return static_cast<int>(shape().size()); }
int64_t Tensor::numel() const { return deref(*this).numel(); }
Dtype Tensor::dtype() const { return deref(*this).dtype; }
bool Tensor::requires_grad() const { return deref(*this).requires_grad; }

double Tensor::item() const {
  MD_CHECK(numel() == 1, "item: tensor is not scalar");
  return value_at(0);
}

double Tensor::value_at(int64_t flat) const {
  MD_CHECK(flat >= 0 && flat < numel(), "value_at: index out of range");
  double v = 0;
  dispatch(dtype(), [&]<class T>() {
    v = static_cast<double>(node()->as<T>()[static_cast<size_t>(flat)]);
  });
  return v;
}

void Tensor::set_value_at(int64_t flat, double v) {
  MD_CHECK(flat >= 0 && flat < numel(), "set_value_at: index out of range");
  dispatch(dtype(), [&]<class T>() {
    node()->as<T>()[static_cast<size_t>(flat)] = static_cast<T>(v);
  });
}

std::vector<double> Tensor::values() const {
  std::vector<double> out(static_cast<size_t>(numel()));
  dispatch(dtype(), [&]<class T>() {
    auto d = node()->as<T>();
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(d[i]);
  });
  return out;
}

bool Tensor::has_grad() const { return !deref(*this).grad.empty(); }

double Tensor::grad_at(int64_t flat) const {
  MD_CHECK(has_grad(), "grad_at: no gradient recorded");
  MD_CHECK(flat >= 0 && flat < numel(), "grad_at: index out of range");
  double v = 0;
  dispatch(dtype(), [&]<class T>() {
    v = static_cast<double>(node()->grad_as<T>()[static_cast<size_t>(flat)]);
  });
  return v;
}

std::vector<double> Tensor::grad_values() const {
  MD_CHECK(has_grad(), "grad_values: no gradient recorded");
  std::vector<double> out(static_cast<size_t>(numel()));
  dispatch(dtype(), [&]<class T>() {
    auto g = node()->grad_as<T>();
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(g[i]);
  });
  return out;
}

void Tensor::zero_grad() { deref(*this).grad.clear(); }

std::span<float> Tensor::data_f32() {
  MD_CHECK(dtype() == Dtype::f32, "data_f32 on f64 tensor");
  return node()->as<float>();
}
std::span<const float> Tensor::data_f32() const {
  MD_CHECK(dtype() == Dtype::f32, "data_f32 on f64 tensor");
  return node()->as<float>();
}
std::span<double> Tensor::data_f64() {
  MD_CHECK(dtype() == Dtype::f64, "data_f64 on f32 tensor");
  return node()->as<double>();
}
std::span<const double> Tensor::data_f64() const {
  MD_CHECK(dtype() == Dtype::f64, "data_f64 on f32 tensor");
  return node()->as<double>();
}
std::span<float> Tensor::grad_f32() {
  MD_CHECK(dtype() == Dtype::f32, "grad_f32 on f64 tensor");
  return node()->grad_as<float>();
}
std::span<double> Tensor::grad_f64() {
  MD_CHECK(dtype() == Dtype::f64, "grad_f64 on f32 tensor");
  return node()->grad_as<double>();
}

Tensor Tensor::clone() const {
  auto n = new_node(shape(), dtype());
  n->requires_grad = requires_grad();
  n->data = deref(*this).data;
  return Tensor(std::move(n));
}

Tensor Tensor::detach() const {
  auto n = new_node(shape(), dtype());
  n->data = deref(*this).data;
  return Tensor(std::move(n));
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

// ---- elementwise ops -------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return ewise_binary(
      a, b, "add: shape/dtype mismatch",
      [](Dtype dt, const TensorNode& x, const TensorNode& y, TensorNode& out) {
        dispatch(dt, [&]<class T>() {
          auto xa = x.as<T>(), ya = y.as<T>();
          auto oa = out.as<T>();
          for (size_t i = 0; i < oa.size(); ++i) oa[i] = xa[i] + ya[i];
        });
      },
      [](TensorNode& self) {
        dispatch(self.dtype, [&]<class T>() {
          auto g = self.grad_as<T>();
          for (int p = 0; p < 2; ++p) {
            if (!self.parents[p]->requires_grad) continue;
            auto pg = self.parents[p]->grad_as<T>();
            for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
          }
        });
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return ewise_binary(
      a, b, "sub: shape/dtype mismatch",
      [](Dtype dt, const TensorNode& x, const TensorNode& y, TensorNode& out) {
        dispatch(dt, [&]<class T>() {
          auto xa = x.as<T>(), ya = y.as<T>();
          auto oa = out.as<T>();
          for (size_t i = 0; i < oa.size(); ++i) oa[i] = xa[i] - ya[i];
        });
      },
      [](TensorNode& self) {
        dispatch(self.dtype, [&]<class T>() {
          auto g = self.grad_as<T>();
          if (self.parents[0]->requires_grad) {
            auto pg = self.parents[0]->grad_as<T>();
            for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
          }
          if (self.parents[1]->requires_grad) {
            auto pg = self.parents[1]->grad_as<T>();
            for (size_t i = 0; i < g.size(); ++i) pg[i] -= g[i];
          }
        });
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return ewise_binary(
      a, b, "mul: shape/dtype mismatch",
      [](Dtype dt, const TensorNode& x, const TensorNode& y, TensorNode& out) {
        dispatch(dt, [&]<class T>() {
          auto xa = x.as<T>(), ya = y.as<T>();
          auto oa = out.as<T>();
          for (size_t i = 0; i < oa.size(); ++i) oa[i] = xa[i] * ya[i];
        });
      },
      [](TensorNode& self) {
        dispatch(self.dtype, [&]<class T>() {
          auto g = self.grad_as<T>();
          auto xa = self.parents[0]->as<T>();
          auto ya = self.parents[1]->as<T>();
          if (self.parents[0]->requires_grad) {
            auto pg = self.parents[0]->grad_as<T>();
            for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * ya[i];
          }
          if (self.parents[1]->requires_grad) {
            auto pg = self.parents[1]->grad_as<T>();
            for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * xa[i];
          }
        });
      });
}

Tensor scalar_mul(const Tensor& a, double c) {
  Tensor out = make_result(a.shape(), a.dtype(), {a}, [c](TensorNode& self) {
    dispatch(self.dtype, [&]<class T>() {
      auto g = self.grad_as<T>();
      auto pg = self.parents[0]->grad_as<T>();
      T cv = static_cast<T>(c);
      for (size_t i = 0; i < g.size(); ++i) pg[i] += cv * g[i];
    });
  });
  dispatch(a.dtype(), [&]<class T>() {
    auto xa = deref(a).as<T>();
    auto oa = deref(out).as<T>();
    T cv = static_cast<T>(c);
    for (size_t i = 0; i < oa.size(); ++i) oa[i] = cv * xa[i];
  });
  return out;
}

Tensor abs(const Tensor& a) {
  Tensor out = make_result(a.shape(), a.dtype(), {a}, [](TensorNode& self) {
    dispatch(self.dtype, [&]<class T>() {
      auto g = self.grad_as<T>();
      auto xa = self.parents[0]->as<T>();
      auto pg = self.parents[0]->grad_as<T>();
      for (size_t i = 0; i < g.size(); ++i) {
        // subgradient 0 at the kink
        T s = xa[i] > T(0) ? T(1) : (xa[i] < T(0) ? T(-1) : T(0));
        pg[i] += s * g[i];
      }
    });
  });
  dispatch(a.dtype(), [&]<class T>() {
    auto xa = deref(a).as<T>();
    auto oa = deref(out).as<T>();
    for (size_t i = 0; i < oa.size(); ++i) oa[i] = std::abs(xa[i]);
  });
  return out;
}

Tensor gelu(const Tensor& a) {
  Tensor out = make_result(a.shape(), a.dtype(), {a}, [](TensorNode& self) {
    dispatch(self.dtype, [&]<class T>() {
      auto g = self.grad_as<T>();
      auto xa = self.parents[0]->as<T>();
      auto pg = self.parents[0]->grad_as<T>();
      constexpr double inv_sqrt2 = 0.70710678118654752440;
      constexpr double inv_sqrt2pi = 0.39894228040143267794;
      for (size_t i = 0; i < g.size(); ++i) {
        double x = static_cast<double>(xa[i]);
        double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
        pg[i] += static_cast<T>((cdf + x * pdf) * static_cast<double>(g[i]));
      }
    });
  });
  dispatch(a.dtype(), [&]<class T>() {
    auto xa = deref(a).as<T>();
    auto oa = deref(out).as<T>();
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    for (size_t i = 0; i < oa.size(); ++i) {
      double x = static_cast<double>(xa[i]);
      oa[i] = static_cast<T>(0.5 * x * (1.0 + std::erf(x * inv_sqrt2)));
    }
  });
  return out;
}

// ---- linear algebra ---------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& an = deref(a);
  const auto& bn = deref(b);
  MD_CHECK(an.shape.size() == 2 && bn.shape.size() == 2,
           "matmul: operands must be 2-D");
  MD_CHECK(an.shape[1] == bn.shape[0], "matmul: inner dimensions differ");
  MD_CHECK(an.dtype == bn.dtype, "matmul: dtype mismatch");
  int64_t M = an.shape[0], K = an.shape[1], N = bn.shape[1];
  Tensor out =
      make_result({M, N}, an.dtype, {a, b}, [M, K, N](TensorNode& self) {
        dispatch(self.dtype, [&]<class T>() {
          auto g = self.grad_as<T>();
          auto& pa = *self.parents[0];
          auto& pb = *self.parents[1];
          if (pa.requires_grad) {
            // dA = dC * B^T
            k_matmul_nt(g.data(), pb.as<T>().data(),
                        pa.grad_as<T>().data(), M, N, K);
          }
          if (pb.requires_grad) {
            // dB = A^T * dC
            k_matmul_tn(pa.as<T>().data(), g.data(),
                        pb.grad_as<T>().data(), M, K, N);
          }
        });
      });
  dispatch(an.dtype, [&]<class T>() {
    k_matmul_nn(an.as<T>().data(), bn.as<T>().data(),
                deref(out).as<T>().data(), M, K, N);
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  const auto& an = deref(a);
  MD_CHECK(an.shape.size() == 2, "transpose: operand must be 2-D");
  int64_t M = an.shape[0], N = an.shape[1];
  Tensor out = make_result({N, M}, an.dtype, {a}, [M, N](TensorNode& self) {
    dispatch(self.dtype, [&]<class T>() {
      auto g = self.grad_as<T>();  // [N, M]
      auto pg = self.parents[0]->grad_as<T>();
      for (int64_t j = 0; j < N; ++j)
        for (int64_t i = 0; i < M; ++i) pg[i * N + j] += g[j * M + i];
    });
  });
  dispatch(an.dtype, [&]<class T>() {
    auto x = an.as<T>();
    auto o = deref(out).as<T>();
    for (int64_t i = 0; i < M; ++i)
      for (int64_t j = 0; j < N; ++j) o[j * M + i] = x[i * N + j];
  });
  return out;
}

Tensor reshape(const Tensor& a, Shape new_shape) {
  MD_CHECK(shape_numel(new_shape) == a.numel(), "reshape: element count differs");
  Tensor out =
      make_result(std::move(new_shape), a.dtype(), {a}, [](TensorNode& self) {
        dispatch(self.dtype, [&]<class T>() {
          auto g = self.grad_as<T>();
          auto pg = self.parents[0]->grad_as<T>();
          for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
        });
      });
  deref(out).data = deref(a).data;
  return out;
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  MD_CHECK(!parts.empty(), "concat: no operands");
  MD_CHECK(axis == 0 || axis == 1, "concat: axis must be 0 or 1");
  const auto& first = deref(parts[0]);
  int rank = static_cast<int>(first.shape.size());
  MD_CHECK(rank == 1 || rank == 2, "concat: operands must be 1-D or 2-D");
  MD_CHECK(axis < rank, "concat: axis out of range");
  int64_t other_dim = rank == 2 ? first.shape[1 - axis] : 0;
  int64_t total = 0;
  for (const auto& p : parts) {
    const auto& pn = deref(p);
    MD_CHECK(static_cast<int>(pn.shape.size()) == rank,
             "concat: rank mismatch");
    MD_CHECK(pn.dtype == first.dtype, "concat: dtype mismatch");
    if (rank == 2)
      MD_CHECK(pn.shape[1 - axis] == other_dim, "concat: shape mismatch");
    total += pn.shape[static_cast<size_t>(axis)];
  }
  Shape out_shape = first.shape;
  out_shape[static_cast<size_t>(axis)] = total;

  std::vector<int64_t> sizes;
  for (const auto& p : parts)
    sizes.push_back(deref(p).shape[static_cast<size_t>(axis)]);

  std::vector<Tensor> parent_vec(parts.begin(), parts.end());
  Tensor out = make_result(
      out_shape, first.dtype, std::move(parent_vec),
      [axis, sizes, other_dim, rank](TensorNode& self) {
        dispatch(self.dtype, [&]<class T>() {
          auto g = self.grad_as<T>();
          if (axis == 0 || rank == 1) {
            int64_t row_len = rank == 2 ? other_dim : 1;
            int64_t off = 0;
            for (size_t p = 0; p < self.parents.size(); ++p) {
              auto& par = *self.parents[p];
              int64_t n = sizes[p] * row_len;
              if (par.requires_grad) {
                auto pg = par.grad_as<T>();
                for (int64_t i = 0; i < n; ++i) pg[i] += g[off + i];
              }
              off += n;
            }
          } else {
            int64_t rows = other_dim;
            int64_t out_cols = 0;
            for (int64_t s : sizes) out_cols += s;
            int64_t col_off = 0;
            for (size_t p = 0; p < self.parents.size(); ++p) {
              auto& par = *self.parents[p];
              int64_t cols = sizes[p];
              if (par.requires_grad) {
                auto pg = par.grad_as<T>();
                for (int64_t r = 0; r < rows; ++r)
                  for (int64_t c = 0; c < cols; ++c)
                    pg[r * cols + c] += g[r * out_cols + col_off + c];
              }
              col_off += cols;
            }
          }
        });
      });

  dispatch(first.dtype, [&]<class T>() {
    auto o = deref(out).as<T>();
    if (axis == 0 || rank == 1) {
      int64_t off = 0;
      for (const auto& p : parts) {
        auto x = deref(p).as<T>();
        std::copy(x.begin(), x.end(), o.begin() + off);
        off += static_cast<int64_t>(x.size());
      }
    } else {
      int64_t rows = other_dim;
      int64_t out_cols = total;
      int64_t col_off = 0;
      for (const auto& p : parts) {
        auto x = deref(p).as<T>();
        int64_t cols = deref(p).shape[1];
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t c = 0; c < cols; ++c)
            o[r * out_cols + col_off + c] = x[r * cols + c];
        col_off += cols;
      }
    }
  });
  return out;
}

Tensor gather_rows(const Tensor& a, std::span<const int32_t> rows) {
  const auto& an = deref(a);
  MD_CHECK(an.shape.size() == 2, "gather_rows: operand must be 2-D");
  int64_t M = an.shape[0], N = an.shape[1];
  for (int32_t r : rows)
    MD_CHECK(r >= 0 && r < M, "gather_rows: row index out of range");
  std::vector<int32_t> idx(rows.begin(), rows.end());
  int64_t K = static_cast<int64_t>(idx.size());
  Tensor out =
      make_result({K, N}, an.dtype, {a}, [idx, N](TensorNode& self) {
        dispatch(self.dtype, [&]<class T>() {
          auto g = self.grad_as<T>();
          auto pg = self.parents[0]->grad_as<T>();
          for (size_t k = 0; k < idx.size(); ++k) {
            const T* grow = g.data() + static_cast<int64_t>(k) * N;
            T* prow = pg.data() + static_cast<int64_t>(idx[k]) * N;
            for (int64_t j = 0; j < N; ++j) prow[j] += grow[j];
          }
        });
      });
  dispatch(an.dtype, [&]<class T>() {
    auto x = an.as<T>();
    auto o = deref(out).as<T>();
    for (size_t k = 0; k < idx.size(); ++k)
      std::copy_n(x.data() + static_cast<int64_t>(idx[k]) * N, N,
                  o.data() + static_cast<int64_t>(k) * N);
  });
  return out;
}

Tensor embedding(const Tensor& table, std::span<const int32_t> ids) {
  const auto& tn = deref(table);
  MD_CHECK(tn.shape.size() == 2, "embedding: table must be 2-D");
  int64_t V = tn.shape[0], D = tn.shape[1];
  for (int32_t id : ids)
    MD_CHECK(id >= 0 && id < V, "embedding: token id out of range");
  std::vector<int32_t> idx(ids.begin(), ids.end());
  int64_t L = static_cast<int64_t>(idx.size());
  Tensor out =
      make_result({L, D}, tn.dtype, {table}, [idx, D](TensorNode& self) {
        dispatch(self.dtype, [&]<class T>() {
          auto g = self.grad_as<T>();
          auto pg = self.parents[0]->grad_as<T>();
          for (size_t k = 0; k < idx.size(); ++k) {
            const T* grow = g.data() + static_cast<int64_t>(k) * D;
            T* prow = pg.data() + static_cast<int64_t>(idx[k]) * D;
            for (int64_t j = 0; j < D; ++j) prow[j] += grow[j];
          }
        });
      });
  dispatch(tn.dtype, [&]<class T>() {
    auto x = tn.as<T>();
    auto o = deref(out).as<T>();
    for (size_t k = 0; k < idx.size(); ++k)
      std::copy_n(x.data() + static_cast<int64_t>(idx[k]) * D, D,
                  o.data() + static_cast<int64_t>(k) * D);
  });
  return out;
}

// ---- normalization and activations over rows ---------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  const auto& xn = deref(x);
  int64_t rows, d;
  rows_cols(xn, rows, d);
  MD_CHECK(deref(gain).shape == Shape{d} && deref(bias).shape == Shape{d},
           "layer_norm: affine params must be [d]");
  MD_CHECK(deref(gain).dtype == xn.dtype && deref(bias).dtype == xn.dtype,
           "layer_norm: dtype mismatch");
  check_finite_input(x, "layer_norm");

  // Forward statistics first; xhat and rstd are then captured for backward.
  std::vector<double> xhat(static_cast<size_t>(rows * d));
  std::vector<double> rstd(static_cast<size_t>(rows));
  std::vector<double> yvals(static_cast<size_t>(rows * d));
  dispatch(xn.dtype, [&]<class T>() {
    auto xv = xn.as<T>();
    auto gv = deref(gain).as<T>();
    auto bv = deref(bias).as<T>();
    for (int64_t r = 0; r < rows; ++r) {
      const T* xr = xv.data() + r * d;
      double mu = 0;
      for (int64_t j = 0; j < d; ++j) mu += static_cast<double>(xr[j]);
      mu /= static_cast<double>(d);
      double var = 0;
      for (int64_t j = 0; j < d; ++j) {
        double c = static_cast<double>(xr[j]) - mu;
        var += c * c;
      }
      var /= static_cast<double>(d);
      double r_std = 1.0 / std::sqrt(var + eps);
      rstd[static_cast<size_t>(r)] = r_std;
      for (int64_t j = 0; j < d; ++j) {
        double h = (static_cast<double>(xr[j]) - mu) * r_std;
        xhat[static_cast<size_t>(r * d + j)] = h;
        yvals[static_cast<size_t>(r * d + j)] =
            h * static_cast<double>(gv[j]) + static_cast<double>(bv[j]);
      }
    }
  });

  Tensor out = make_result(
      xn.shape, xn.dtype, {x, gain, bias},
      [rows, d, xhat, rstd](TensorNode& self) {
        dispatch(self.dtype, [&]<class T>() {
          auto g = self.grad_as<T>();
          auto& px = *self.parents[0];
          auto& pgain = *self.parents[1];
          auto& pbias = *self.parents[2];
          auto gain_v = pgain.as<T>();
          std::span<T> gx, ggain, gbias;
          if (px.requires_grad) gx = px.grad_as<T>();
          if (pgain.requires_grad) ggain = pgain.grad_as<T>();
          if (pbias.requires_grad) gbias = pbias.grad_as<T>();
          for (int64_t r = 0; r < rows; ++r) {
            const T* grow = g.data() + r * d;
            const double* xh = xhat.data() + r * d;
            double m1 = 0, m2 = 0;  // mean(dxhat), mean(dxhat*xhat)
            for (int64_t j = 0; j < d; ++j) {
              double dxh = static_cast<double>(grow[j]) *
                           static_cast<double>(gain_v[j]);
              m1 += dxh;
              m2 += dxh * xh[j];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            for (int64_t j = 0; j < d; ++j) {
              double dxh = static_cast<double>(grow[j]) *
                           static_cast<double>(gain_v[j]);
              if (!gx.empty())
                gx[r * d + j] += static_cast<T>(
                    rstd[static_cast<size_t>(r)] * (dxh - m1 - xh[j] * m2));
              if (!ggain.empty())
                ggain[j] += static_cast<T>(static_cast<double>(grow[j]) * xh[j]);
              if (!gbias.empty()) gbias[j] += grow[j];
            }
          }
        });
      });

  dispatch(xn.dtype, [&]<class T>() {
    auto ov = deref(out).as<T>();
    for (size_t i = 0; i < yvals.size(); ++i) ov[i] = static_cast<T>(yvals[i]);
  });
  return out;
}

Tensor softmax(const Tensor& x) {
  const auto& xn = deref(x);
  int64_t rows, d;
  rows_cols(xn, rows, d);
  MD_CHECK(d > 0, "softmax: empty rows");
  check_finite_input(x, "softmax");
  Tensor out = make_result(xn.shape, xn.dtype, {x}, [rows, d](TensorNode& self) {
    dispatch(self.dtype, [&]<class T>() {
      auto g = self.grad_as<T>();
      auto y = self.as<T>();
      auto pg = self.parents[0]->grad_as<T>();
      for (int64_t r = 0; r < rows; ++r) {
        const T* yr = y.data() + r * d;
        const T* gr = g.data() + r * d;
        T dot = 0;
        for (int64_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
        T* pr = pg.data() + r * d;
        for (int64_t j = 0; j < d; ++j) pr[j] += yr[j] * (gr[j] - dot);
      }
    });
  });
  dispatch(xn.dtype, [&]<class T>() {
    auto xv = xn.as<T>();
    auto ov = deref(out).as<T>();
    auto body = [&](int64_t r0, int64_t r1) {
      for (int64_t r = r0; r < r1; ++r)
        k_softmax_row(xv.data() + r * d, ov.data() + r * d, d);
    };
    if (rows * d < kParallelWorkThreshold) {
      body(0, rows);
    } else {
      mt::parallel_for(rows, 1, body);
    }
  });
  return out;
}

Tensor log_softmax(const Tensor& x) {
  const auto& xn = deref(x);
  int64_t rows, d;
  rows_cols(xn, rows, d);
  MD_CHECK(d > 0, "log_softmax: empty rows");
  check_finite_input(x, "log_softmax");
  Tensor out = make_result(xn.shape, xn.dtype, {x}, [rows, d](TensorNode& self) {
    dispatch(self.dtype, [&]<class T>() {
      auto g = self.grad_as<T>();
      auto y = self.as<T>();  // log-probs
      auto pg = self.parents[0]->grad_as<T>();
      for (int64_t r = 0; r < rows; ++r) {
        const T* yr = y.data() + r * d;
        const T* gr = g.data() + r * d;
        T gsum = 0;
        for (int64_t j = 0; j < d; ++j) gsum += gr[j];
        T* pr = pg.data() + r * d;
        for (int64_t j = 0; j < d; ++j)
          pr[j] += gr[j] - std::exp(yr[j]) * gsum;
      }
    });
  });
  dispatch(xn.dtype, [&]<class T>() {
    auto xv = xn.as<T>();
    auto ov = deref(out).as<T>();
    for (int64_t r = 0; r < rows; ++r) {
      const T* xr = xv.data() + r * d;
      T lse = k_logsumexp_row(xr, d);
      T* orow = ov.data() + r * d;
      for (int64_t j = 0; j < d; ++j) orow[j] = xr[j] - lse;
    }
  });
  return out;
}

Tensor rotary(const Tensor& x, double base) {
  const auto& xn = deref(x);
  MD_CHECK(xn.shape.size() == 2, "rotary: operand must be 2-D");
  int64_t L = xn.shape[0], D = xn.shape[1];
  MD_CHECK(D % 2 == 0, "rotary: head dimension must be even");
  int64_t H = D / 2;
  // Angle tables computed in double for both dtypes so the rotation is the
  // same math either way.
  std::vector<double> cs(static_cast<size_t>(L * H)), sn(static_cast<size_t>(L * H));
  for (int64_t i = 0; i < L; ++i) {
    for (int64_t k = 0; k < H; ++k) {
      double theta = static_cast<double>(i) *
                     std::pow(base, -2.0 * static_cast<double>(k) /
                                        static_cast<double>(D));
      cs[static_cast<size_t>(i * H + k)] = std::cos(theta);
      sn[static_cast<size_t>(i * H + k)] = std::sin(theta);
    }
  }
  Tensor out = make_result(
      xn.shape, xn.dtype, {x}, [L, H, cs, sn](TensorNode& self) {
        dispatch(self.dtype, [&]<class T>() {
          auto g = self.grad_as<T>();
          auto pg = self.parents[0]->grad_as<T>();
          for (int64_t i = 0; i < L; ++i) {
            for (int64_t k = 0; k < H; ++k) {
              double c = cs[static_cast<size_t>(i * H + k)];
              double s = sn[static_cast<size_t>(i * H + k)];
              double g0 = static_cast<double>(g[i * 2 * H + 2 * k]);
              double g1 = static_cast<double>(g[i * 2 * H + 2 * k + 1]);
              // gradient of a rotation is the inverse rotation
              pg[i * 2 * H + 2 * k] += static_cast<T>(g0 * c + g1 * s);
              pg[i * 2 * H + 2 * k + 1] += static_cast<T>(-g0 * s + g1 * c);
            }
          }
        });
      });
  dispatch(xn.dtype, [&]<class T>() {
    auto xv = xn.as<T>();
    auto ov = deref(out).as<T>();
    for (int64_t i = 0; i < L; ++i) {
      for (int64_t k = 0; k < H; ++k) {
        double c = cs[static_cast<size_t>(i * H + k)];
        double s = sn[static_cast<size_t>(i * H + k)];
        double x0 = static_cast<double>(xv[i * 2 * H + 2 * k]);
        double x1 = static_cast<double>(xv[i * 2 * H + 2 * k + 1]);
        ov[i * 2 * H + 2 * k] = static_cast<T>(x0 * c - x1 * s);
        ov[i * 2 * H + 2 * k + 1] = static_cast<T>(x0 * s + x1 * c);
      }
    }
  });
  return out;
}

// ---- reductions and losses ---------------------------------------------

Tensor sum(const Tensor& x) {
  Tensor out = make_result({}, x.dtype(), {x}, [](TensorNode& self) {
    dispatch(self.dtype, [&]<class T>() {
      T g = self.grad_as<T>()[0];
      auto pg = self.parents[0]->grad_as<T>();
      for (auto& v : pg) v += g;
    });
  });
  dispatch(x.dtype(), [&]<class T>() {
    auto xv = deref(x).as<T>();
    T acc = 0;
    for (T v : xv) acc += v;
    deref(out).as<T>()[0] = acc;
  });
  return out;
}

Tensor mean(const Tensor& x) {
  int64_t n = x.numel();
  MD_CHECK(n > 0, "mean: empty tensor");
  Tensor out = make_result({}, x.dtype(), {x}, [n](TensorNode& self) {
    dispatch(self.dtype, [&]<class T>() {
      T g = self.grad_as<T>()[0] / static_cast<T>(n);
      auto pg = self.parents[0]->grad_as<T>();
      for (auto& v : pg) v += g;
    });
  });
  dispatch(x.dtype(), [&]<class T>() {
    auto xv = deref(x).as<T>();
    T acc = 0;
    for (T v : xv) acc += v;
    deref(out).as<T>()[0] = acc / static_cast<T>(n);
  });
  return out;
}

Tensor cross_entropy(const Tensor& logits, int64_t target) {
  const auto& ln = deref(logits);
  MD_CHECK(ln.shape.size() == 1, "cross_entropy: logits must be 1-D");
  int64_t V = ln.shape[0];
  MD_CHECK(target >= 0 && target < V, "cross_entropy: target out of range");
  check_finite_input(logits, "cross_entropy");
  Tensor out = make_result({}, ln.dtype, {logits}, [target, V](TensorNode& self) {
    dispatch(self.dtype, [&]<class T>() {
      T g = self.grad_as<T>()[0];
      auto xv = self.parents[0]->as<T>();
      auto pg = self.parents[0]->grad_as<T>();
      std::vector<T> p(static_cast<size_t>(V));
      k_softmax_row(xv.data(), p.data(), V);
      for (int64_t j = 0; j < V; ++j) pg[j] += g * p[static_cast<size_t>(j)];
      pg[target] -= g;
    });
  });
  dispatch(ln.dtype, [&]<class T>() {
    auto xv = ln.as<T>();
    deref(out).as<T>()[0] = k_logsumexp_row(xv.data(), V) - xv[target];
  });
  return out;
}

Tensor masked_cross_entropy_sum(const Tensor& logits,
                                std::span<const int32_t> targets,
                                std::span<const int32_t> rows) {
  const auto& ln = deref(logits);
  MD_CHECK(ln.shape.size() == 2, "masked_cross_entropy_sum: logits must be 2-D");
  MD_CHECK(targets.size() == rows.size(),
           "masked_cross_entropy_sum: targets/rows size mismatch");
  int64_t L = ln.shape[0], V = ln.shape[1];
  std::unordered_set<int32_t> seen;
  for (size_t i = 0; i < rows.size(); ++i) {
    MD_CHECK(rows[i] >= 0 && rows[i] < L,
             "masked_cross_entropy_sum: row out of range");
    MD_CHECK(targets[i] >= 0 && targets[i] < V,
             "masked_cross_entropy_sum: target out of range");
    MD_CHECK(seen.insert(rows[i]).second,
             "masked_cross_entropy_sum: duplicate row");
  }
  std::vector<int32_t> r(rows.begin(), rows.end());
  std::vector<int32_t> t(targets.begin(), targets.end());
  Tensor out = make_result({}, ln.dtype, {logits}, [r, t, V](TensorNode& self) {
    dispatch(self.dtype, [&]<class T>() {
      T g = self.grad_as<T>()[0];
      auto xv = self.parents[0]->as<T>();
      auto pg = self.parents[0]->grad_as<T>();
      std::vector<T> p(static_cast<size_t>(V));
      for (size_t i = 0; i < r.size(); ++i) {
        const T* xrow = xv.data() + static_cast<int64_t>(r[i]) * V;
        T* grow = pg.data() + static_cast<int64_t>(r[i]) * V;
        k_softmax_row(xrow, p.data(), V);
        for (int64_t j = 0; j < V; ++j)
          grow[j] += g * p[static_cast<size_t>(j)];
        grow[t[i]] -= g;
      }
    });
  });
  dispatch(ln.dtype, [&]<class T>() {
    auto xv = ln.as<T>();
    T acc = 0;
    for (size_t i = 0; i < r.size(); ++i) {
      const T* xrow = xv.data() + static_cast<int64_t>(r[i]) * V;
      if (!span_finite(std::span<const T>(xrow, static_cast<size_t>(V))))
        throw NumericError("masked_cross_entropy_sum: non-finite input");
      acc += k_logsumexp_row(xrow, V) - xrow[t[i]];
    }
    deref(out).as<T>()[0] = acc;
  });
  return out;
}

// ---- backward ----------------------------------------------------------

void backward(const Tensor& loss) {
  MD_CHECK(loss.defined(), "backward: undefined tensor");
  MD_CHECK(loss.numel() == 1, "backward: loss must be scalar");
  TensorNode* root = loss.node();
  MD_CHECK(root->requires_grad,
           "backward: loss is not connected to any gradient-tracked leaf");

  // Iterative post-order DFS; the reversed finish order is a valid
  // topological order of the recorded DAG.
  std::vector<TensorNode*> topo;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.push_back({root, 0});
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next].get();
      ++next;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  dispatch(root->dtype, [&]<class T>() { root->grad_as<T>()[0] = T(1); });
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

}  // namespace maskdiff
