#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fewgen/params.hpp"
#include "fewgen/tensor.hpp"

namespace fewgen {

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Records matrix-valued operations for one loss evaluation and replays them
/// in reverse. Every value on the tape is viewed as a rows x cols matrix.
///
/// backward() is const, so several reverse sweeps over the same recording
/// (one per output token, say) may run concurrently.
class Tape {
 public:
  enum class Op {
    Leaf,
    MatMul,
    MatMulNT,
    Add,
    Sub,
    Mul,
    Div,
    AddRow,
    Scale,
    AddScalar,
    Tanh,
    Gelu,
    Exp,
    Log,
    ClampMin,
    SoftmaxRows,
    LogSoftmaxRows,
    LayerNormRows,
    Embedding,
    Sum,
    Mean,
    MeanRows,
    ConcatRows,
    ConcatCols,
    SliceRows,
    SliceCols,
    Transpose,
    Pick,
    SetRow,
    Reshape,
    NonDifferentiable,
  };

  struct Node {
    Op op = Op::Leaf;
    std::vector<int> inputs;
    Tensor value;
    bool requires_grad = false;
    bool is_param = false;
    std::string label;                // parameter or primitive name
    long long iarg = 0;               // offset / row index / causal offset
    double darg = 0.0;                // scale / clamp floor / epsilon
    std::vector<std::size_t> index;   // embedding ids, pick coordinates
    std::vector<double> cache;        // forward intermediates needed by backward
  };

  Var constant(Tensor value);
  /// Leaf bound to a named parameter; it requires a gradient iff trainable.
  Var parameter(const ParameterSet& params, const std::string& name);
  Var leaf(Tensor value, bool requires_grad);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Node& node(int id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  Var record(Node node);

  /// Adjoint of every node for the scalar <seed, root>. Nodes that do not
  /// reach root, or do not require a gradient, get an empty buffer.
  std::vector<std::vector<double>> backward(Var root, std::span<const double> seed) const;

  /// Gradients of <seed, root> with respect to every trainable parameter of
  /// params. Frozen parameters get no entry.
  GradientSet gradients(Var root, std::span<const double> seed, const ParameterSet& params) const;

 private:
  std::vector<Node> nodes_;
};

/// Gradient of a 1x1 loss with respect to each trainable tensor of params.
GradientSet backward_gradients(Var loss, const ParameterSet& params);

/// Central differences (f(p + h e_i) - f(p - h e_i)) / 2h over every trainable
/// coordinate of params.
GradientSet finite_difference_oracle(const std::function<double(const ParameterSet&)>& f,
                                     const ParameterSet& params, double h);

namespace ad {

Var matmul(Var a, Var b);     // a . b
Var matmul_nt(Var a, Var b);  // a . b^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var add_row(Var a, Var row);  // broadcast a 1xC row over every row of a
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var tanh(Var a);
Var gelu(Var a);
Var exp(Var a);
Var log(Var a);
Var clamp_min(Var a, double floor);
/// Row softmax. With causal_offset >= 0, row i only sees columns <= causal_offset + i.
Var softmax_rows(Var a, long long causal_offset = -1);
Var log_softmax_rows(Var a);
Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);
Var embedding(Var table, std::span<const std::size_t> ids);
Var sum(Var a);
Var mean(Var a);
Var mean_rows(Var a);  // RxC -> 1xC
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t start, std::size_t count);
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var transpose(Var a);
/// Gathers a(r_k, c_k) into a 1xK row.
Var pick(Var a, std::span<const std::size_t> rows, std::span<const std::size_t> cols);
Var set_row(Var a, std::size_t row, Var v);
Var reshape(Var a, std::size_t rows, std::size_t cols);
/// Forward-only primitive; reverse mode through it throws naming the primitive.
Var non_differentiable(std::string name, Var a, const std::function<Tensor(const Tensor&)>& fn);

}  // namespace ad

}  // namespace fewgen
