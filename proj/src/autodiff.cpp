#include "fewgen/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fewgen {

namespace {

using Op = Tape::Op;

// C (m x n) += A (m x k) . B (k x n)
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C (m x n) += A (m x k) . B^T, B is n x k
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  // Transposing B lets the inner loop run over contiguous columns of C.
  thread_local std::vector<double> bt;
  bt.resize(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(a, bt.data(), c, m, k, n);
}

// C (k x n) += A^T . B, A is m x k, B is m x n
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t p = 0; p < m; ++p) {
    const double* ap = a + p * k;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < k; ++i) {
      const double aval = ap[i];
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aval * bp[j];
    }
  }
}

Tensor make(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor({rows, cols}, std::move(v));
}

void require_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(std::string(op) + ": shape mismatch " + shape_string({a.rows(), a.cols()}) +
                " vs " + shape_string({b.rows(), b.cols()}));
  }
}

Tape* tape_of(Var a) {
  if (!a.tape) throw Error("operation on unbound Var");
  return a.tape;
}

Tape* tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw Error("operands recorded on different tapes");
  return tape_of(a);
}

Tape::Node unary(Op op, Var a, Tensor value) {
  Tape::Node n;
  n.op = op;
  n.inputs = {a.id};
  n.value = std::move(value);
  return n;
}

Tape::Node binary(Op op, Var a, Var b, Tensor value) {
  Tape::Node n;
  n.op = op;
  n.inputs = {a.id, b.id};
  n.value = std::move(value);
  return n;
}

template <class F>
Var elementwise(Op op, Var a, F f) {
  const auto& av = a.value().data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return tape_of(a)->record(unary(op, a, make(a.rows(), a.cols(), std::move(out))));
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

const Tensor& Var::value() const {
  if (!tape) throw Error("value() of unbound Var");
  return tape->value(*this);
}

Var Tape::record(Node node) {
  for (int in : node.inputs) {
    if (in < 0 || static_cast<std::size_t>(in) >= nodes_.size()) throw Error("dangling tape input");
    if (nodes_[in].requires_grad) node.requires_grad = true;
  }
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) { return leaf(std::move(value), false); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::parameter(const ParameterSet& params, const std::string& name) {
  Node n;
  n.op = Op::Leaf;
  n.value = params.get(name);
  n.requires_grad = params.trainable(name);
  n.is_param = true;
  n.label = name;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

std::vector<std::vector<double>> Tape::backward(Var root, std::span<const double> seed) const {
  if (root.tape != this) throw Error("backward: root recorded on another tape");
  const auto& rv = nodes_[root.id].value;
  if (seed.size() != rv.size()) {
    throw Error("backward: seed has " + std::to_string(seed.size()) + " entries, root has " +
                std::to_string(rv.size()));
  }
  std::vector<std::vector<double>> adj(nodes_.size());
  if (!nodes_[root.id].requires_grad) return adj;
  adj[root.id].assign(seed.begin(), seed.end());

  auto acc = [&](int id) -> double* {
    if (!nodes_[id].requires_grad) return nullptr;
    auto& buf = adj[id];
    if (buf.empty()) buf.assign(nodes_[id].value.size(), 0.0);
    return buf.data();
  };

  for (int i = root.id; i >= 0; --i) {
    if (adj[i].empty()) continue;
    const Node& n = nodes_[i];
    const double* g = adj[i].data();
    const std::size_t R = n.value.rows(), C = n.value.cols();
    const std::size_t N = n.value.size();
    const double* y = n.value.data().data();

    auto in_val = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };

    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::MatMul: {
        const auto& A = in_val(0);
        const auto& B = in_val(1);
        std::size_t m = A.rows(), k = A.cols(), nn = B.cols();
        if (double* da = acc(n.inputs[0])) gemm_nt(g, B.data().data(), da, m, nn, k);
        if (double* db = acc(n.inputs[1])) gemm_tn(A.data().data(), g, db, m, k, nn);
        break;
      }
      case Op::MatMulNT: {
        const auto& A = in_val(0);
        const auto& B = in_val(1);
        std::size_t m = A.rows(), k = A.cols(), nn = B.rows();
        if (double* da = acc(n.inputs[0])) gemm_nn(g, B.data().data(), da, m, nn, k);
        if (double* db = acc(n.inputs[1])) gemm_tn(g, A.data().data(), db, m, nn, k);
        break;
      }
      case Op::Add:
        if (double* da = acc(n.inputs[0]))
          for (std::size_t t = 0; t < N; ++t) da[t] += g[t];
        if (double* db = acc(n.inputs[1]))
          for (std::size_t t = 0; t < N; ++t) db[t] += g[t];
        break;
      case Op::Sub:
        if (double* da = acc(n.inputs[0]))
          for (std::size_t t = 0; t < N; ++t) da[t] += g[t];
        if (double* db = acc(n.inputs[1]))
          for (std::size_t t = 0; t < N; ++t) db[t] -= g[t];
        break;
      case Op::Mul: {
        const auto& A = in_val(0).data();
        const auto& B = in_val(1).data();
        if (double* da = acc(n.inputs[0]))
          for (std::size_t t = 0; t < N; ++t) da[t] += g[t] * B[t];
        if (double* db = acc(n.inputs[1]))
          for (std::size_t t = 0; t < N; ++t) db[t] += g[t] * A[t];
        break;
      }
      case Op::Div: {
        const auto& A = in_val(0).data();
        const auto& B = in_val(1).data();
        if (double* da = acc(n.inputs[0]))
          for (std::size_t t = 0; t < N; ++t) da[t] += g[t] / B[t];
        if (double* db = acc(n.inputs[1]))
          for (std::size_t t = 0; t < N; ++t) db[t] -= g[t] * A[t] / (B[t] * B[t]);
        break;
      }
      case Op::AddRow:
        if (double* da = acc(n.inputs[0]))
          for (std::size_t t = 0; t < N; ++t) da[t] += g[t];
        if (double* db = acc(n.inputs[1]))
          for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c) db[c] += g[r * C + c];
        break;
      case Op::Scale:
        if (double* da = acc(n.inputs[0]))
          for (std::size_t t = 0; t < N; ++t) da[t] += n.darg * g[t];
        break;
      case Op::AddScalar:
        if (double* da = acc(n.inputs[0]))
          for (std::size_t t = 0; t < N; ++t) da[t] += g[t];
        break;
      case Op::Tanh:
        if (double* da = acc(n.inputs[0]))
          for (std::size_t t = 0; t < N; ++t) da[t] += g[t] * (1.0 - y[t] * y[t]);
        break;
      case Op::Gelu: {
        const auto& X = in_val(0).data();
        if (double* da = acc(n.inputs[0])) {
          for (std::size_t t = 0; t < N; ++t) {
            double x = X[t];
            double th = std::tanh(kGeluC * (x + kGeluA * x * x * x));
            double d = 0.5 * (1.0 + th) +
                       0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
            da[t] += g[t] * d;
          }
        }
        break;
      }
      case Op::Exp:
        if (double* da = acc(n.inputs[0]))
          for (std::size_t t = 0; t < N; ++t) da[t] += g[t] * y[t];
        break;
      case Op::Log: {
        const auto& X = in_val(0).data();
        if (double* da = acc(n.inputs[0]))
          for (std::size_t t = 0; t < N; ++t) da[t] += g[t] / X[t];
        break;
      }
      case Op::ClampMin: {
        const auto& X = in_val(0).data();
        if (double* da = acc(n.inputs[0]))
          for (std::size_t t = 0; t < N; ++t)
            if (X[t] >= n.darg) da[t] += g[t];
        break;
      }
      case Op::SoftmaxRows:
        if (double* da = acc(n.inputs[0])) {
          for (std::size_t r = 0; r < R; ++r) {
            const double* yr = y + r * C;
            const double* gr = g + r * C;
            double dot = 0.0;
            for (std::size_t c = 0; c < C; ++c) dot += gr[c] * yr[c];
            for (std::size_t c = 0; c < C; ++c) da[r * C + c] += yr[c] * (gr[c] - dot);
          }
        }
        break;
      case Op::LogSoftmaxRows:
        if (double* da = acc(n.inputs[0])) {
          for (std::size_t r = 0; r < R; ++r) {
            const double* yr = y + r * C;
            const double* gr = g + r * C;
            double gs = 0.0;
            for (std::size_t c = 0; c < C; ++c) gs += gr[c];
            for (std::size_t c = 0; c < C; ++c) da[r * C + c] += gr[c] - std::exp(yr[c]) * gs;
          }
        }
        break;
      case Op::LayerNormRows: {
        // cache: xhat (R*C) followed by rstd (R)
        const double* xhat = n.cache.data();
        const double* rstd = n.cache.data() + N;
        const auto& gain = in_val(1).data();
        if (double* dgain = acc(n.inputs[1]))
          for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c) dgain[c] += g[r * C + c] * xhat[r * C + c];
        if (double* dbias = acc(n.inputs[2]))
          for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c) dbias[c] += g[r * C + c];
        if (double* dx = acc(n.inputs[0])) {
          std::vector<double> dxhat(C);
          for (std::size_t r = 0; r < R; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
              dxhat[c] = g[r * C + c] * gain[c];
              m1 += dxhat[c];
              m2 += dxhat[c] * xhat[r * C + c];
            }
            m1 /= static_cast<double>(C);
            m2 /= static_cast<double>(C);
            for (std::size_t c = 0; c < C; ++c)
              dx[r * C + c] += rstd[r] * (dxhat[c] - m1 - xhat[r * C + c] * m2);
          }
        }
        break;
      }
      case Op::Embedding:
        if (double* dt = acc(n.inputs[0])) {
          for (std::size_t r = 0; r < n.index.size(); ++r) {
            double* row = dt + n.index[r] * C;
            for (std::size_t c = 0; c < C; ++c) row[c] += g[r * C + c];
          }
        }
        break;
      case Op::Sum:
        if (double* da = acc(n.inputs[0])) {
          auto M = in_val(0).size();
          for (std::size_t t = 0; t < M; ++t) da[t] += g[0];
        }
        break;
      case Op::Mean:
        if (double* da = acc(n.inputs[0])) {
          auto M = in_val(0).size();
          for (std::size_t t = 0; t < M; ++t) da[t] += g[0] / static_cast<double>(M);
        }
        break;
      case Op::MeanRows:
        if (double* da = acc(n.inputs[0])) {
          auto rows = in_val(0).rows();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < C; ++c) da[r * C + c] += g[c] / static_cast<double>(rows);
        }
        break;
      case Op::ConcatRows: {
        std::size_t off = 0;
        for (int in : n.inputs) {
          auto M = nodes_[in].value.size();
          if (double* da = acc(in))
            for (std::size_t t = 0; t < M; ++t) da[t] += g[off + t];
          off += M;
        }
        break;
      }
      case Op::ConcatCols: {
        std::size_t coff = 0;
        for (int in : n.inputs) {
          auto pc = nodes_[in].value.cols();
          if (double* da = acc(in))
            for (std::size_t r = 0; r < R; ++r)
              for (std::size_t c = 0; c < pc; ++c) da[r * pc + c] += g[r * C + coff + c];
          coff += pc;
        }
        break;
      }
      case Op::SliceRows:
        if (double* da = acc(n.inputs[0])) {
          auto off = static_cast<std::size_t>(n.iarg) * C;
          for (std::size_t t = 0; t < N; ++t) da[off + t] += g[t];
        }
        break;
      case Op::SliceCols:
        if (double* da = acc(n.inputs[0])) {
          auto ic = in_val(0).cols();
          auto start = static_cast<std::size_t>(n.iarg);
          for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c) da[r * ic + start + c] += g[r * C + c];
        }
        break;
      case Op::Transpose:
        if (double* da = acc(n.inputs[0]))
          for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c) da[c * R + r] += g[r * C + c];
        break;
      case Op::Pick:
        if (double* da = acc(n.inputs[0])) {
          auto ic = in_val(0).cols();
          auto K = n.index.size() / 2;
          for (std::size_t t = 0; t < K; ++t) da[n.index[2 * t] * ic + n.index[2 * t + 1]] += g[t];
        }
        break;
      case Op::SetRow: {
        auto row = static_cast<std::size_t>(n.iarg);
        if (double* da = acc(n.inputs[0]))
          for (std::size_t t = 0; t < N; ++t)
            if (t / C != row) da[t] += g[t];
        if (double* dv = acc(n.inputs[1]))
          for (std::size_t c = 0; c < C; ++c) dv[c] += g[row * C + c];
        break;
      }
      case Op::Reshape:
        if (double* da = acc(n.inputs[0]))
          for (std::size_t t = 0; t < N; ++t) da[t] += g[t];
        break;
      case Op::NonDifferentiable:
        if (nodes_[n.inputs[0]].requires_grad)
          throw Error("unsupported primitive in backward pass: " + n.label);
        break;
    }
  }
  return adj;
}

GradientSet Tape::gradients(Var root, std::span<const double> seed,
                            const ParameterSet& params) const {
  auto adj = backward(root, seed);
  GradientSet out;
  for (const auto& e : params.entries()) {
    if (!e.trainable) continue;
    std::vector<double> gsum(e.value.size(), 0.0);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const auto& n = nodes_[i];
      if (!n.is_param || n.label != e.name || adj[i].empty()) continue;
      for (std::size_t t = 0; t < gsum.size(); ++t) gsum[t] += adj[i][t];
    }
    out.names.push_back(e.name);
    out.tensors.emplace_back(e.value.shape(), std::move(gsum));
  }
  return out;
}

GradientSet backward_gradients(Var loss, const ParameterSet& params) {
  if (loss.value().size() != 1) {
    throw Error("backward_gradients: loss is not a scalar (shape " +
                shape_string(loss.value().shape()) + ")");
  }
  const double one = 1.0;
  return loss.tape->gradients(loss, std::span<const double>(&one, 1), params);
}

GradientSet finite_difference_oracle(const std::function<double(const ParameterSet&)>& f,
                                     const ParameterSet& params, double h) {
  if (!(h > 0.0)) throw Error("finite_difference_oracle: step size must be positive");
  ParameterSet work = params;
  GradientSet out;
  std::size_t coord = 0;
  for (const auto& e : params.entries()) {
    if (!e.trainable) continue;
    std::vector<double> grad(e.value.size());
    std::vector<double> base = e.value.data();
    for (std::size_t t = 0; t < base.size(); ++t, ++coord) {
      auto eval = [&](double delta) {
        auto v = base;
        v[t] += delta;
        work.set(e.name, Tensor(e.value.shape(), std::move(v)));
        double r = f(work);
        if (!std::isfinite(r)) {
          throw Error("finite_difference_oracle: non-finite value at coordinate " +
                      std::to_string(coord) + " (" + e.name + "[" + std::to_string(t) + "])");
        }
        return r;
      };
      double fp = eval(h);
      double fm = eval(-h);
      grad[t] = (fp - fm) / (2.0 * h);
    }
    work.set(e.name, e.value);
    out.names.push_back(e.name);
    out.tensors.emplace_back(e.value.shape(), std::move(grad));
  }
  return out;
}

namespace ad {

Var matmul(Var a, Var b) {
  auto* t = tape_of(a, b);
  if (a.cols() != b.rows()) {
    throw Error("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                std::to_string(b.rows()));
  }
  std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.value().data().data(), b.value().data().data(), out.data(), m, k, n);
  return t->record(binary(Op::MatMul, a, b, make(m, n, std::move(out))));
}

Var matmul_nt(Var a, Var b) {
  auto* t = tape_of(a, b);
  if (a.cols() != b.cols()) {
    throw Error("matmul_nt: inner dimensions " + std::to_string(a.cols()) + " and " +
                std::to_string(b.cols()));
  }
  std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<double> out(m * n, 0.0);
  gemm_nt(a.value().data().data(), b.value().data().data(), out.data(), m, k, n);
  return t->record(binary(Op::MatMulNT, a, b, make(m, n, std::move(out))));
}

namespace {
template <class F>
Var zip(Op op, Var a, Var b, const char* name, F f) {
  auto* t = tape_of(a, b);
  require_same_shape(a, b, name);
  const auto& av = a.value().data();
  const auto& bv = b.value().data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
  return t->record(binary(op, a, b, make(a.rows(), a.cols(), std::move(out))));
}
}  // namespace

Var add(Var a, Var b) { return zip(Op::Add, a, b, "add", [](double x, double y) { return x + y; }); }
Var sub(Var a, Var b) { return zip(Op::Sub, a, b, "sub", [](double x, double y) { return x - y; }); }
Var mul(Var a, Var b) { return zip(Op::Mul, a, b, "mul", [](double x, double y) { return x * y; }); }
Var div(Var a, Var b) { return zip(Op::Div, a, b, "div", [](double x, double y) { return x / y; }); }

Var add_row(Var a, Var row) {
  auto* t = tape_of(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw Error("add_row: row shape mismatch");
  const auto& av = a.value().data();
  const auto& rv = row.value().data();
  std::size_t C = a.cols();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + rv[i % C];
  return t->record(binary(Op::AddRow, a, row, make(a.rows(), C, std::move(out))));
}

Var scale(Var a, double c) {
  const auto& av = a.value().data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = c * av[i];
  auto n = unary(Op::Scale, a, make(a.rows(), a.cols(), std::move(out)));
  n.darg = c;
  return tape_of(a)->record(std::move(n));
}

Var add_scalar(Var a, double c) {
  return elementwise(Op::AddScalar, a, [c](double x) { return x + c; });
}

Var tanh(Var a) { return elementwise(Op::Tanh, a, [](double x) { return std::tanh(x); }); }

Var gelu(Var a) {
  return elementwise(Op::Gelu, a, [](double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
  });
}

Var exp(Var a) { return elementwise(Op::Exp, a, [](double x) { return std::exp(x); }); }
Var log(Var a) { return elementwise(Op::Log, a, [](double x) { return std::log(x); }); }

Var clamp_min(Var a, double floor) {
  const auto& av = a.value().data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::max(av[i], floor);
  auto n = unary(Op::ClampMin, a, make(a.rows(), a.cols(), std::move(out)));
  n.darg = floor;
  return tape_of(a)->record(std::move(n));
}

Var softmax_rows(Var a, long long causal_offset) {
  std::size_t R = a.rows(), C = a.cols();
  const auto& av = a.value().data();
  std::vector<double> out(R * C, 0.0);
  for (std::size_t r = 0; r < R; ++r) {
    std::size_t limit = C;
    if (causal_offset >= 0)
      limit = std::min<std::size_t>(C, static_cast<std::size_t>(causal_offset) + r + 1);
    const double* ar = av.data() + r * C;
    double mx = ar[0];
    for (std::size_t c = 1; c < limit; ++c) mx = std::max(mx, ar[c]);
    double s = 0.0;
    for (std::size_t c = 0; c < limit; ++c) {
      out[r * C + c] = std::exp(ar[c] - mx);
      s += out[r * C + c];
    }
    for (std::size_t c = 0; c < limit; ++c) out[r * C + c] /= s;
  }
  auto n = unary(Op::SoftmaxRows, a, make(R, C, std::move(out)));
  n.iarg = causal_offset;
  return tape_of(a)->record(std::move(n));
}

Var log_softmax_rows(Var a) {
  std::size_t R = a.rows(), C = a.cols();
  const auto& av = a.value().data();
  std::vector<double> out(R * C);
  for (std::size_t r = 0; r < R; ++r) {
    auto ls = log_softmax_stable(std::span<const double>(av.data() + r * C, C));
    std::copy(ls.begin(), ls.end(), out.begin() + r * C);
  }
  return tape_of(a)->record(unary(Op::LogSoftmaxRows, a, make(R, C, std::move(out))));
}

Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  auto* t = tape_of(x, gain);
  tape_of(x, bias);
  std::size_t R = x.rows(), C = x.cols();
  if (gain.rows() != 1 || gain.cols() != C || bias.rows() != 1 ||
      bias.cols() != C)
    throw Error("layer_norm_rows: gain/bias must be 1x" + std::to_string(C));
  const auto& xv = x.value().data();
  const auto& gv = gain.value().data();
  const auto& bv = bias.value().data();
  std::vector<double> out(R * C), cache(R * C + R);
  for (std::size_t r = 0; r < R; ++r) {
    const double* xr = xv.data() + r * C;
    double mu = 0.0;
    for (std::size_t c = 0; c < C; ++c) mu += xr[c];
    mu /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t c = 0; c < C; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(C);
    double rstd = 1.0 / std::sqrt(var + eps);
    cache[R * C + r] = rstd;
    for (std::size_t c = 0; c < C; ++c) {
      double xh = (xr[c] - mu) * rstd;
      cache[r * C + c] = xh;
      out[r * C + c] = xh * gv[c] + bv[c];
    }
  }
  Tape::Node n;
  n.op = Op::LayerNormRows;
  n.inputs = {x.id, gain.id, bias.id};
  n.value = make(R, C, std::move(out));
  n.cache = std::move(cache);
  n.darg = eps;
  return t->record(std::move(n));
}

Var embedding(Var table, std::span<const std::size_t> ids) {
  std::size_t V = table.rows(), C = table.cols();
  const auto& tv = table.value().data();
  std::vector<double> out(ids.size() * C);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= V) throw Error("embedding: index " + std::to_string(ids[r]) + " out of range");
    std::copy_n(tv.begin() + ids[r] * C, C, out.begin() + r * C);
  }
  auto n = unary(Op::Embedding, table, make(ids.size(), C, std::move(out)));
  n.index.assign(ids.begin(), ids.end());
  return tape_of(table)->record(std::move(n));
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return tape_of(a)->record(unary(Op::Sum, a, make(1, 1, {s})));
}

Var mean(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return tape_of(a)->record(
      unary(Op::Mean, a, make(1, 1, {s / static_cast<double>(a.value().size())})));
}

Var mean_rows(Var a) {
  std::size_t R = a.rows(), C = a.cols();
  const auto& av = a.value().data();
  std::vector<double> out(C, 0.0);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out[c] += av[r * C + c];
  for (auto& v : out) v /= static_cast<double>(R);
  return tape_of(a)->record(unary(Op::MeanRows, a, make(1, C, std::move(out))));
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw Error("concat_rows: no inputs");
  auto* t = tape_of(parts[0]);
  std::size_t C = parts[0].cols(), R = 0;
  Tape::Node n;
  n.op = Op::ConcatRows;
  std::vector<double> out;
  for (const auto& p : parts) {
    tape_of(parts[0], p);
    if (p.cols() != C) throw Error("concat_rows: column mismatch");
    R += p.rows();
    const auto& pv = p.value().data();
    out.insert(out.end(), pv.begin(), pv.end());
    n.inputs.push_back(p.id);
  }
  n.value = make(R, C, std::move(out));
  return t->record(std::move(n));
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error("concat_cols: no inputs");
  auto* t = tape_of(parts[0]);
  std::size_t R = parts[0].rows(), C = 0;
  for (const auto& p : parts) {
    tape_of(parts[0], p);
    if (p.rows() != R) throw Error("concat_cols: row mismatch");
    C += p.cols();
  }
  std::vector<double> out(R * C);
  Tape::Node n;
  n.op = Op::ConcatCols;
  std::size_t coff = 0;
  for (const auto& p : parts) {
    const auto& pv = p.value().data();
    std::size_t pc = p.cols();
    for (std::size_t r = 0; r < R; ++r)
      std::copy_n(pv.begin() + r * pc, pc, out.begin() + r * C + coff);
    coff += pc;
    n.inputs.push_back(p.id);
  }
  n.value = make(R, C, std::move(out));
  return t->record(std::move(n));
}

Var slice_rows(Var a, std::size_t start, std::size_t count) {
  std::size_t C = a.cols();
  if (start + count > a.rows()) throw Error("slice_rows: out of range");
  const auto& av = a.value().data();
  std::vector<double> out(av.begin() + start * C, av.begin() + (start + count) * C);
  auto n = unary(Op::SliceRows, a, make(count, C, std::move(out)));
  n.iarg = static_cast<long long>(start);
  return tape_of(a)->record(std::move(n));
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  std::size_t R = a.rows(), C = a.cols();
  if (start + count > C) throw Error("slice_cols: out of range");
  const auto& av = a.value().data();
  std::vector<double> out(R * count);
  for (std::size_t r = 0; r < R; ++r)
    std::copy_n(av.begin() + r * C + start, count, out.begin() + r * count);
  auto n = unary(Op::SliceCols, a, make(R, count, std::move(out)));
  n.iarg = static_cast<long long>(start);
  return tape_of(a)->record(std::move(n));
}

Var transpose(Var a) {
  std::size_t R = a.rows(), C = a.cols();
  const auto& av = a.value().data();
  std::vector<double> out(R * C);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out[c * R + r] = av[r * C + c];
  return tape_of(a)->record(unary(Op::Transpose, a, make(C, R, std::move(out))));
}

Var pick(Var a, std::span<const std::size_t> rows, std::span<const std::size_t> cols) {
  if (rows.size() != cols.size()) throw Error("pick: coordinate length mismatch");
  std::size_t R = a.rows(), C = a.cols();
  std::vector<double> out(rows.size());
  auto n = unary(Op::Pick, a, Tensor());
  n.index.reserve(2 * rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= R || cols[k] >= C) throw Error("pick: coordinate out of range");
    out[k] = a.value().at(rows[k], cols[k]);
    n.index.push_back(rows[k]);
    n.index.push_back(cols[k]);
  }
  n.value = make(1, rows.size(), std::move(out));
  return tape_of(a)->record(std::move(n));
}

Var set_row(Var a, std::size_t row, Var v) {
  auto* t = tape_of(a, v);
  std::size_t C = a.cols();
  if (row >= a.rows() || v.rows() != 1 || v.cols() != C) throw Error("set_row: shape mismatch");
  auto out = a.value().data();
  std::copy(v.value().data().begin(), v.value().data().end(), out.begin() + row * C);
  auto n = binary(Op::SetRow, a, v, make(a.rows(), C, std::move(out)));
  n.iarg = static_cast<long long>(row);
  return t->record(std::move(n));
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  if (rows * cols != a.value().size()) throw Error("reshape: size mismatch");
  return tape_of(a)->record(unary(Op::Reshape, a, make(rows, cols, a.value().data())));
}

Var non_differentiable(std::string name, Var a, const std::function<Tensor(const Tensor&)>& fn) {
  Tensor out = fn(a.value());
  auto n = unary(Op::NonDifferentiable, a, make(out.rows(), out.cols(), out.data()));
  n.label = std::move(name);
  return tape_of(a)->record(std::move(n));
}

}  // namespace ad

}  // namespace fewgen
