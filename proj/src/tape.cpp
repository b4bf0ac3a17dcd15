#include "tape.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "error.hpp"

namespace salient {

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

double gelu_value(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_deriv(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

template <class F>
Tensor map_unary(const Tensor& a, F f) {
  Tensor y = a;
  for (auto& v : y.values()) v = f(v);
  return y;
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) fail(ErrorKind::kShape, std::string(op) + ": shape mismatch");
}

}  // namespace

Var GradientTape::record(Node n) {
  n.value = compute(n);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var GradientTape::parameter(ParamId pid, Tensor value) {
  Node n;
  n.op = Op::kParam;
  n.param = pid;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var GradientTape::constant(Tensor value) {
  Node n;
  n.op = Op::kConst;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Tensor GradientTape::compute(const Node& n) const {
  auto in = [&](std::size_t i) -> const Tensor& { return nodes_.at(i).value; };
  switch (n.op) {
    case Op::kParam:
    case Op::kConst:
      return n.value;
    case Op::kMatMul:
      return salient::matmul(in(n.a), in(n.b));
    case Op::kMatMulNT:
      return salient::matmul_nt(in(n.a), in(n.b));
    case Op::kAdd:
      return salient::add(in(n.a), in(n.b));
    case Op::kSub:
      return salient::sub(in(n.a), in(n.b));
    case Op::kMul: {
      require_same(in(n.a), in(n.b), "mul");
      Tensor y = in(n.a);
      for (std::size_t i = 0; i < y.size(); ++i) y[i] *= in(n.b)[i];
      return y;
    }
    case Op::kScale:
      return salient::scale(in(n.a), n.k0);
    case Op::kAddScalar:
      return map_unary(in(n.a), [&](double v) { return v + n.k0; });
    case Op::kRelu:
      return map_unary(in(n.a), [](double v) { return v > 0.0 ? v : 0.0; });
    case Op::kGelu:
      return map_unary(in(n.a), gelu_value);
    case Op::kExp:
      return map_unary(in(n.a), [](double v) { return std::exp(v); });
    case Op::kLog:
      return map_unary(in(n.a), [](double v) { return std::log(v); });
    case Op::kClamp:
      return map_unary(in(n.a), [&](double v) { return std::clamp(v, n.k0, n.k1); });
    case Op::kMinimum: {
      require_same(in(n.a), in(n.b), "minimum");
      Tensor y = in(n.a);
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::min(y[i], in(n.b)[i]);
      return y;
    }
    case Op::kRmsNorm:
      return salient::rmsnorm(in(n.a), in(n.b), n.k0);
    case Op::kCausalSoftmax: {
      const Tensor& s = in(n.a);
      if (s.rank() != 2 || s.rows() != s.cols()) {
        fail(ErrorKind::kShape, "causal_softmax_rows: expected a square matrix");
      }
      Tensor y({s.rows(), s.cols()});
      for (std::size_t i = 0; i < s.rows(); ++i) {
        auto src = s.row(i).first(i + 1);
        auto dst = y.row(i).first(i + 1);
        std::copy(src.begin(), src.end(), dst.begin());
        softmax_inplace(dst);
      }
      return y;
    }
    case Op::kLogSoftmax: {
      Tensor y = in(n.a);
      for (std::size_t r = 0; r < y.rows(); ++r) log_softmax_inplace(y.row(r));
      return y;
    }
    case Op::kGatherRows: {
      const Tensor& t = in(n.a);
      Tensor y({n.index.size(), t.cols()});
      for (std::size_t r = 0; r < n.index.size(); ++r) {
        if (n.index[r] >= t.rows()) fail(ErrorKind::kIndex, "gather_rows: row out of range");
        auto src = t.row(n.index[r]);
        std::copy(src.begin(), src.end(), y.row(r).begin());
      }
      return y;
    }
    case Op::kConcatRows: {
      const Tensor& top = in(n.a);
      const Tensor& bot = in(n.b);
      if (top.cols() != bot.cols()) fail(ErrorKind::kShape, "concat_rows: column mismatch");
      Tensor y({top.rows() + bot.rows(), top.cols()});
      std::copy(top.values().begin(), top.values().end(), y.values().begin());
      std::copy(bot.values().begin(), bot.values().end(),
                y.values().begin() + static_cast<std::ptrdiff_t>(top.size()));
      return y;
    }
    case Op::kPick: {
      const Tensor& x = in(n.a);
      const std::size_t m = n.index.size() / 2;
      Tensor y({m, 1});
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t r = n.index[2 * i], c = n.index[2 * i + 1];
        if (r >= x.rows() || c >= x.cols()) fail(ErrorKind::kIndex, "pick: out of range");
        y[i] = x(r, c);
      }
      return y;
    }
    case Op::kSum: {
      double s = 0.0;
      for (double v : in(n.a).values()) s += v;
      return Tensor::scalar(s);
    }
    case Op::kMean: {
      const Tensor& x = in(n.a);
      if (x.size() == 0) fail(ErrorKind::kShape, "mean of empty tensor");
      double s = 0.0;
      for (double v : x.values()) s += v;
      return Tensor::scalar(s / static_cast<double>(x.size()));
    }
  }
  fail(ErrorKind::kUsage, "unknown tape op");
}

Var GradientTape::matmul(Var a, Var b) { Node n; n.op = Op::kMatMul; n.a = a.id; n.b = b.id; return record(std::move(n)); }
Var GradientTape::matmul_nt(Var a, Var b) { Node n; n.op = Op::kMatMulNT; n.a = a.id; n.b = b.id; return record(std::move(n)); }
Var GradientTape::add(Var a, Var b) { Node n; n.op = Op::kAdd; n.a = a.id; n.b = b.id; return record(std::move(n)); }
Var GradientTape::sub(Var a, Var b) { Node n; n.op = Op::kSub; n.a = a.id; n.b = b.id; return record(std::move(n)); }
Var GradientTape::mul(Var a, Var b) { Node n; n.op = Op::kMul; n.a = a.id; n.b = b.id; return record(std::move(n)); }
Var GradientTape::scale(Var a, double k) { Node n; n.op = Op::kScale; n.a = a.id; n.k0 = k; return record(std::move(n)); }
Var GradientTape::add_scalar(Var a, double k) { Node n; n.op = Op::kAddScalar; n.a = a.id; n.k0 = k; return record(std::move(n)); }
Var GradientTape::relu(Var a) { Node n; n.op = Op::kRelu; n.a = a.id; return record(std::move(n)); }
Var GradientTape::gelu(Var a) { Node n; n.op = Op::kGelu; n.a = a.id; return record(std::move(n)); }
Var GradientTape::exp(Var a) { Node n; n.op = Op::kExp; n.a = a.id; return record(std::move(n)); }
Var GradientTape::log(Var a) { Node n; n.op = Op::kLog; n.a = a.id; return record(std::move(n)); }
Var GradientTape::minimum(Var a, Var b) { Node n; n.op = Op::kMinimum; n.a = a.id; n.b = b.id; return record(std::move(n)); }
Var GradientTape::causal_softmax_rows(Var s) { Node n; n.op = Op::kCausalSoftmax; n.a = s.id; return record(std::move(n)); }
Var GradientTape::log_softmax_rows(Var x) { Node n; n.op = Op::kLogSoftmax; n.a = x.id; return record(std::move(n)); }
Var GradientTape::sum(Var a) { Node n; n.op = Op::kSum; n.a = a.id; return record(std::move(n)); }
Var GradientTape::mean(Var a) { Node n; n.op = Op::kMean; n.a = a.id; return record(std::move(n)); }

Var GradientTape::clamp(Var a, double lo, double hi) {
  Node n;
  n.op = Op::kClamp;
  n.a = a.id;
  n.k0 = lo;
  n.k1 = hi;
  return record(std::move(n));
}

Var GradientTape::rmsnorm_rows(Var x, Var gamma, double eps) {
  Node n;
  n.op = Op::kRmsNorm;
  n.a = x.id;
  n.b = gamma.id;
  n.k0 = eps;
  return record(std::move(n));
}

Var GradientTape::gather_rows(Var table, std::vector<std::size_t> rows) {
  Node n;
  n.op = Op::kGatherRows;
  n.a = table.id;
  n.index = std::move(rows);
  return record(std::move(n));
}

Var GradientTape::concat_rows(Var top, Var bottom) {
  Node n;
  n.op = Op::kConcatRows;
  n.a = top.id;
  n.b = bottom.id;
  return record(std::move(n));
}

Var GradientTape::pick(Var x, std::vector<std::pair<std::size_t, std::size_t>> coords) {
  Node n;
  n.op = Op::kPick;
  n.a = x.id;
  n.index.reserve(coords.size() * 2);
  for (auto [r, c] : coords) {
    n.index.push_back(r);
    n.index.push_back(c);
  }
  return record(std::move(n));
}

void GradientTape::accumulate(std::vector<Tensor>& grads, std::size_t id,
                              const Tensor& g) const {
  Tensor& dst = grads[id];
  if (dst.empty()) {
    dst = g;
    return;
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

Gradients GradientTape::backward(Var output) const {
  const Tensor& out = value(output);
  if (out.size() != 1) {
    fail(ErrorKind::kUsage, "backward: output must be a scalar node");
  }
  std::vector<Tensor> grads(nodes_.size());
  grads[output.id] = Tensor(out.shape(), {1.0});

  for (std::size_t id = output.id + 1; id-- > 0;) {
    if (grads[id].empty()) continue;
    const Node& n = nodes_[id];
    const Tensor& g = grads[id];
    const Tensor& y = n.value;
    auto in = [&](std::size_t i) -> const Tensor& { return nodes_[i].value; };

    switch (n.op) {
      case Op::kParam:
      case Op::kConst:
        break;
      case Op::kMatMul:
        accumulate(grads, n.a, salient::matmul_nt(g, in(n.b)));
        accumulate(grads, n.b, salient::matmul_tn(in(n.a), g));
        break;
      case Op::kMatMulNT:
        // y = a b^T: da = g b, db = g^T a
        accumulate(grads, n.a, salient::matmul(g, in(n.b)));
        accumulate(grads, n.b, salient::matmul_tn(g, in(n.a)));
        break;
      case Op::kAdd:
        accumulate(grads, n.a, g);
        accumulate(grads, n.b, g);
        break;
      case Op::kSub:
        accumulate(grads, n.a, g);
        accumulate(grads, n.b, salient::scale(g, -1.0));
        break;
      case Op::kMul: {
        Tensor ga = g, gb = g;
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] *= in(n.b)[i];
          gb[i] *= in(n.a)[i];
        }
        accumulate(grads, n.a, ga);
        accumulate(grads, n.b, gb);
        break;
      }
      case Op::kScale:
        accumulate(grads, n.a, salient::scale(g, n.k0));
        break;
      case Op::kAddScalar:
        accumulate(grads, n.a, g);
        break;
      case Op::kRelu: {
        Tensor ga = g;
        for (std::size_t i = 0; i < g.size(); ++i)
          if (!(in(n.a)[i] > 0.0)) ga[i] = 0.0;
        accumulate(grads, n.a, ga);
        break;
      }
      case Op::kGelu: {
        Tensor ga = g;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] *= gelu_deriv(in(n.a)[i]);
        accumulate(grads, n.a, ga);
        break;
      }
      case Op::kExp: {
        Tensor ga = g;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] *= y[i];
        accumulate(grads, n.a, ga);
        break;
      }
      case Op::kLog: {
        Tensor ga = g;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] /= in(n.a)[i];
        accumulate(grads, n.a, ga);
        break;
      }
      case Op::kClamp: {
        Tensor ga = g;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double v = in(n.a)[i];
          if (v < n.k0 || v > n.k1) ga[i] = 0.0;
        }
        accumulate(grads, n.a, ga);
        break;
      }
      case Op::kMinimum: {
        // Ties route the gradient to the first argument.
        Tensor ga = g, gb = g;
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (in(n.a)[i] <= in(n.b)[i]) gb[i] = 0.0;
          else ga[i] = 0.0;
        }
        accumulate(grads, n.a, ga);
        accumulate(grads, n.b, gb);
        break;
      }
      case Op::kRmsNorm: {
        const Tensor& x = in(n.a);
        const Tensor& gamma = in(n.b);
        const std::size_t d = x.cols();
        Tensor gx(x.shape());
        Tensor ggamma(gamma.shape());
        for (std::size_t r = 0; r < x.rows(); ++r) {
          auto xr = x.row(r);
          auto gr = g.row(r);
          const double s = rms_statistic(xr, n.k0);
          double proj = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            proj += gamma[j] * gr[j] * xr[j];
            ggamma[j] += gr[j] * xr[j] / s;
          }
          const double coef = proj / (static_cast<double>(d) * s * s * s);
          auto gxr = gx.row(r);
          for (std::size_t j = 0; j < d; ++j) {
            gxr[j] = gamma[j] * gr[j] / s - xr[j] * coef;
          }
        }
        accumulate(grads, n.a, gx);
        accumulate(grads, n.b, ggamma);
        break;
      }
      case Op::kCausalSoftmax: {
        Tensor gs(y.shape());
        for (std::size_t i = 0; i < y.rows(); ++i) {
          auto yr = y.row(i);
          auto gr = g.row(i);
          double inner = 0.0;
          for (std::size_t p = 0; p <= i; ++p) inner += gr[p] * yr[p];
          auto out = gs.row(i);
          for (std::size_t p = 0; p <= i; ++p) out[p] = yr[p] * (gr[p] - inner);
        }
        accumulate(grads, n.a, gs);
        break;
      }
      case Op::kLogSoftmax: {
        Tensor gx(y.shape());
        for (std::size_t r = 0; r < y.rows(); ++r) {
          auto yr = y.row(r);
          auto gr = g.row(r);
          double total = 0.0;
          for (double v : gr) total += v;
          auto out = gx.row(r);
          for (std::size_t j = 0; j < yr.size(); ++j) out[j] = gr[j] - std::exp(yr[j]) * total;
        }
        accumulate(grads, n.a, gx);
        break;
      }
      case Op::kGatherRows: {
        const Tensor& t = in(n.a);
        Tensor gt(t.shape());
        for (std::size_t r = 0; r < n.index.size(); ++r) {
          auto src = g.row(r);
          auto dst = gt.row(n.index[r]);
          for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
        }
        accumulate(grads, n.a, gt);
        break;
      }
      case Op::kConcatRows: {
        const Tensor& top = in(n.a);
        const Tensor& bot = in(n.b);
        Tensor gt(top.shape()), gb(bot.shape());
        std::copy(g.values().begin(), g.values().begin() + static_cast<std::ptrdiff_t>(top.size()),
                  gt.values().begin());
        std::copy(g.values().begin() + static_cast<std::ptrdiff_t>(top.size()), g.values().end(),
                  gb.values().begin());
        accumulate(grads, n.a, gt);
        accumulate(grads, n.b, gb);
        break;
      }
      case Op::kPick: {
        const Tensor& x = in(n.a);
        Tensor gx(x.shape());
        for (std::size_t i = 0; i < n.index.size() / 2; ++i) {
          gx(n.index[2 * i], n.index[2 * i + 1]) += g[i];
        }
        accumulate(grads, n.a, gx);
        break;
      }
      case Op::kSum: {
        Tensor ga(in(n.a).shape());
        for (auto& v : ga.values()) v = g[0];
        accumulate(grads, n.a, ga);
        break;
      }
      case Op::kMean: {
        const Tensor& x = in(n.a);
        Tensor ga(x.shape());
        const double v = g[0] / static_cast<double>(x.size());
        for (auto& e : ga.values()) e = v;
        accumulate(grads, n.a, ga);
        break;
      }
    }
  }

  Gradients result;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (n.op != Op::kParam) continue;
    Tensor g = grads[id].empty() ? Tensor(n.value.shape()) : grads[id];
    auto it = result.find(n.param);
    if (it == result.end()) {
      result.emplace(n.param, std::move(g));
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
    }
  }
  return result;
}

bool GradientTape::replay_matches() const {
  for (const Node& n : nodes_) {
    if (n.op == Op::kParam || n.op == Op::kConst) continue;
    if (!(compute(n) == n.value)) return false;
  }
  return true;
}

}  // namespace salient
