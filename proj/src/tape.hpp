#pragma once

#include <cstddef>
#include <map>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace salient {

using ParamId = std::size_t;

// Handle to a node recorded on a GradientTape.
struct Var {
  std::size_t id = 0;
};

using Gradients = std::map<ParamId, Tensor>;

// Reverse-mode tape over matrix-valued primitives. Values are computed eagerly
// when an op is recorded; backward() replays adjoints in reverse order.
class GradientTape {
 public:
  Var parameter(ParamId pid, Tensor value);
  Var constant(Tensor value);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  std::size_t size() const { return nodes_.size(); }

  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, double k);
  Var add_scalar(Var a, double k);
  Var relu(Var a);
  Var gelu(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var clamp(Var a, double lo, double hi);
  Var minimum(Var a, Var b);
  Var rmsnorm_rows(Var x, Var gamma, double eps);
  // Row i of a square score matrix is softmaxed over columns 0..i; the rest are 0.
  Var causal_softmax_rows(Var scores);
  Var log_softmax_rows(Var x);
  Var gather_rows(Var table, std::vector<std::size_t> rows);
  Var concat_rows(Var top, Var bottom);
  // Picks x(r, c) for each coordinate into an n x 1 column.
  Var pick(Var x, std::vector<std::pair<std::size_t, std::size_t>> coords);
  Var sum(Var a);
  Var mean(Var a);

  // dOutput/dParam for every parameter node; output must be 1x1.
  Gradients backward(Var output) const;

  // Recomputes every non-leaf node from its inputs and reports whether all
  // values are bit-identical to the recorded ones.
  bool replay_matches() const;

 private:
  enum class Op {
    kParam, kConst, kMatMul, kMatMulNT, kAdd, kSub, kMul, kScale, kAddScalar,
    kRelu, kGelu, kExp, kLog, kClamp, kMinimum, kRmsNorm, kCausalSoftmax,
    kLogSoftmax, kGatherRows, kConcatRows, kPick, kSum, kMean,
  };

  struct Node {
    Op op = Op::kConst;
    std::size_t a = 0, b = 0;
    double k0 = 0.0, k1 = 0.0;
    std::vector<std::size_t> index;
    ParamId param = 0;
    Tensor value;
  };

  Tensor compute(const Node& n) const;
  Var record(Node n);
  void accumulate(std::vector<Tensor>& grads, std::size_t id, const Tensor& g) const;

  std::vector<Node> nodes_;
};

inline Gradients backward(const GradientTape& tape, Var output) {
  return tape.backward(output);
}

}  // namespace salient
