#include "odebundle/diffcore.hpp"

namespace odebundle::ad {

std::uint32_t Tape::push(Op op, std::uint32_t a, std::uint32_t b, std::uint32_t c, double aux,
                         double primal, double tangent) {
  const auto idx = static_cast<std::uint32_t>(nodes_.size());
  nodes_.push_back({op, a, b, c});
  aux_.push_back(aux);
  primal_.push_back(primal);
  tangent_.push_back(tangent);
  return idx;
}

Var Tape::leaf(double value, double tangent) {
  const auto ordinal = static_cast<std::uint32_t>(leaves_.size());
  const auto idx = push(Op::Leaf, 0, ordinal, 0, 0.0, value, tangent);
  leaves_.push_back(idx);
  return {this, idx};
}

Var Tape::constant(double value) {
  return {this, push(Op::Const, 0, 0, 0, value, value, 0.0)};
}

Var Tape::record_unary(Op op, Var a) {
  const double pa = primal_[a.index()];
  const double da = tangent_[a.index()];
  double p = 0.0, d = 0.0;
  switch (op) {
    case Op::Neg:
      p = -pa;
      d = -da;
      break;
    case Op::Exp:
      p = std::exp(pa);
      d = da * p;
      break;
    case Op::Tanh:
      p = std::tanh(pa);
      d = da * (1.0 - p * p);
      break;
    case Op::Sin:
      p = std::sin(pa);
      d = da * std::cos(pa);
      break;
    case Op::Cos:
      p = std::cos(pa);
      d = -da * std::sin(pa);
      break;
    case Op::Sqrt:
      if (pa < 0.0) throw DomainError("sqrt of negative value");
      p = std::sqrt(pa);
      d = 0.5 * da / p;
      break;
    case Op::Abs:
      p = std::fabs(pa);
      d = pa > 0.0 ? da : (pa < 0.0 ? -da : 0.0);
      break;
    case Op::Heaviside:
      p = pa > 0.0 ? 1.0 : 0.0;
      d = 0.0;
      break;
    default:
      throw std::logic_error("record_unary: not a unary op");
  }
  return {this, push(op, a.index(), 0, 0, 0.0, p, d)};
}

Var Tape::record_binary(Op op, Var a, Var b) {
  const double pa = primal_[a.index()], da = tangent_[a.index()];
  const double pb = primal_[b.index()], db = tangent_[b.index()];
  double p = 0.0, d = 0.0;
  switch (op) {
    case Op::Add:
      p = pa + pb;
      d = da + db;
      break;
    case Op::Sub:
      p = pa - pb;
      d = da - db;
      break;
    case Op::Mul:
      p = pa * pb;
      d = da * pb + pa * db;
      break;
    case Op::Div:
      if (pb == 0.0) throw DomainError("division by zero");
      p = pa / pb;
      d = (da - p * db) / pb;
      break;
    case Op::Max:
      if (pa >= pb) {
        p = pa;
        d = da;
      } else {
        p = pb;
        d = db;
      }
      break;
    default:
      throw std::logic_error("record_binary: not a binary op");
  }
  return {this, push(op, a.index(), b.index(), 0, 0.0, p, d)};
}

Var Tape::record_muladd(Var a, Var b, Var c) {
  const double pa = primal_[a.index()], da = tangent_[a.index()];
  const double pb = primal_[b.index()], db = tangent_[b.index()];
  const double pc = primal_[c.index()], dc = tangent_[c.index()];
  return {this, push(Op::MulAdd, a.index(), b.index(), c.index(), 0.0, pa + pb * pc,
                     da + db * pc + pb * dc)};
}

Var Tape::record_pow(Var a, double exponent) {
  const double pa = primal_[a.index()], da = tangent_[a.index()];
  if (pa < 0.0 && exponent != std::floor(exponent))
    throw DomainError("pow of negative base with non-integer exponent");
  const double p = std::pow(pa, exponent);
  const double d = exponent * std::pow(pa, exponent - 1.0) * da;
  return {this, push(Op::PowC, a.index(), 0, 0, exponent, p, d)};
}

Var Tape::record_tangent_of(Var a) {
  return {this, push(Op::TangentOf, a.index(), 0, 0, 0.0, tangent_[a.index()], 0.0)};
}

void Tape::seed(ReplayBuffer& buf) const {
  buf.primal.assign(primal_.begin(), primal_.end());
  buf.tangent.assign(tangent_.begin(), tangent_.end());
}

void Tape::set_leaf(ReplayBuffer& buf, std::size_t ordinal, double value, double tangent) const {
  const std::uint32_t i = leaves_[ordinal];
  buf.primal[i] = value;
  buf.tangent[i] = tangent;
}

void Tape::replay(ReplayBuffer& buf) const {
  double* __restrict p = buf.primal.data();
  double* __restrict d = buf.tangent.data();
  const std::size_t count = nodes_.size();
  for (std::size_t i = 0; i < count; ++i) {
    const Node& n = nodes_[i];
    const double pa = p[n.a], da = d[n.a];
    switch (n.op) {
      case Op::Leaf:
        break;  // externally set
      case Op::Const:
        p[i] = aux_[i];
        d[i] = 0.0;
        break;
      case Op::Add:
        p[i] = pa + p[n.b];
        d[i] = da + d[n.b];
        break;
      case Op::Sub:
        p[i] = pa - p[n.b];
        d[i] = da - d[n.b];
        break;
      case Op::Mul:
        p[i] = pa * p[n.b];
        d[i] = da * p[n.b] + pa * d[n.b];
        break;
      case Op::MulAdd:
        p[i] = pa + p[n.b] * p[n.c];
        d[i] = da + d[n.b] * p[n.c] + p[n.b] * d[n.c];
        break;
      case Op::Div: {
        const double inv = 1.0 / p[n.b];
        p[i] = pa * inv;
        d[i] = (da - p[i] * d[n.b]) * inv;
        break;
      }
      case Op::Neg:
        p[i] = -pa;
        d[i] = -da;
        break;
      case Op::PowC: {
        const double e = aux_[i];
        p[i] = std::pow(pa, e);
        d[i] = e * std::pow(pa, e - 1.0) * da;
        break;
      }
      case Op::Exp:
        p[i] = std::exp(pa);
        d[i] = da * p[i];
        break;
      case Op::Tanh: {
        const double t = std::tanh(pa);
        p[i] = t;
        d[i] = da * (1.0 - t * t);
        break;
      }
      case Op::Sin:
        p[i] = std::sin(pa);
        d[i] = da * std::cos(pa);
        break;
      case Op::Cos:
        p[i] = std::cos(pa);
        d[i] = -da * std::sin(pa);
        break;
      case Op::Sqrt:
        p[i] = std::sqrt(pa);
        d[i] = 0.5 * da / p[i];
        break;
      case Op::Max:
        if (pa >= p[n.b]) {
          p[i] = pa;
          d[i] = da;
        } else {
          p[i] = p[n.b];
          d[i] = d[n.b];
        }
        break;
      case Op::Abs:
        p[i] = std::fabs(pa);
        d[i] = pa > 0.0 ? da : (pa < 0.0 ? -da : 0.0);
        break;
      case Op::Heaviside:
        p[i] = pa > 0.0 ? 1.0 : 0.0;
        d[i] = 0.0;
        break;
      case Op::TangentOf:
        p[i] = da;
        d[i] = 0.0;
        break;
    }
  }
}

void Tape::reverse(ReplayBuffer& buf, std::uint32_t output,
                   std::span<double> leaf_gradients) const {
  const std::size_t count = nodes_.size();
  buf.adj_primal.assign(count, 0.0);
  buf.adj_tangent.assign(count, 0.0);

  const double* __restrict p = buf.primal.data();
  const double* __restrict d = buf.tangent.data();
  double* __restrict ap = buf.adj_primal.data();
  double* __restrict ad = buf.adj_tangent.data();

  ap[output] = 1.0;

  // Each case scatters the adjoint of node i into its operands. For
  // f = phi(a, b), with primal channel p and tangent channel d:
  //   ap[a] += ap[i]*phi_a + ad[i]*(phi_aa*d[a] + phi_ab*d[b])
  //   ad[a] += ad[i]*phi_a
  // The second-derivative terms are what make gradients of
  // tangent-consuming outputs correct.
  for (std::size_t i = count; i-- > 0;) {
    const Node& n = nodes_[i];
    const double wp = ap[i];
    const double wd = ad[i];
    if (wp == 0.0 && wd == 0.0) continue;
    switch (n.op) {
      case Op::Leaf:
      case Op::Const:
        break;
      case Op::Add:
        ap[n.a] += wp;
        ap[n.b] += wp;
        ad[n.a] += wd;
        ad[n.b] += wd;
        break;
      case Op::Sub:
        ap[n.a] += wp;
        ap[n.b] -= wp;
        ad[n.a] += wd;
        ad[n.b] -= wd;
        break;
      case Op::Mul:
        ap[n.a] += wp * p[n.b] + wd * d[n.b];
        ap[n.b] += wp * p[n.a] + wd * d[n.a];
        ad[n.a] += wd * p[n.b];
        ad[n.b] += wd * p[n.a];
        break;
      case Op::Div: {
        const double inv = 1.0 / p[n.b];
        const double q = p[i];  // a/b
        ap[n.a] += wp * inv - wd * d[n.b] * inv * inv;
        ap[n.b] += -wp * q * inv + wd * (2.0 * q * d[n.b] - d[n.a]) * inv * inv;
        ad[n.a] += wd * inv;
        ad[n.b] -= wd * q * inv;
        break;
      }
      case Op::Neg:
        ap[n.a] -= wp;
        ad[n.a] -= wd;
        break;
      case Op::PowC: {
        const double e = aux_[i];
        const double g1 = e * std::pow(p[n.a], e - 1.0);
        ap[n.a] += wp * g1;
        if (wd != 0.0) {
          const double g2 = e * (e - 1.0) * std::pow(p[n.a], e - 2.0);
          ap[n.a] += wd * g2 * d[n.a];
          ad[n.a] += wd * g1;
        }
        break;
      }
      case Op::Exp: {
        const double g1 = p[i];
        ap[n.a] += (wp + wd * d[n.a]) * g1;
        ad[n.a] += wd * g1;
        break;
      }
      case Op::Tanh: {
        const double t = p[i];
        const double g1 = 1.0 - t * t;
        ap[n.a] += wp * g1 + wd * (-2.0 * t * g1) * d[n.a];
        ad[n.a] += wd * g1;
        break;
      }
      case Op::Sin: {
        const double g1 = std::cos(p[n.a]);
        ap[n.a] += wp * g1 - wd * p[i] * d[n.a];
        ad[n.a] += wd * g1;
        break;
      }
      case Op::Cos: {
        const double g1 = -std::sin(p[n.a]);
        ap[n.a] += wp * g1 - wd * p[i] * d[n.a];
        ad[n.a] += wd * g1;
        break;
      }
      case Op::Sqrt: {
        const double g1 = 0.5 / p[i];
        ap[n.a] += wp * g1 + wd * (-0.5 * g1 / p[n.a]) * d[n.a];
        ad[n.a] += wd * g1;
        break;
      }
      case Op::Max:
        if (p[n.a] >= p[n.b]) {
          ap[n.a] += wp;
          ad[n.a] += wd;
        } else {
          ap[n.b] += wp;
          ad[n.b] += wd;
        }
        break;
      case Op::Abs: {
        const double s = p[n.a] > 0.0 ? 1.0 : (p[n.a] < 0.0 ? -1.0 : 0.0);
        ap[n.a] += wp * s;
        ad[n.a] += wd * s;
        break;
      }
      case Op::Heaviside:
        break;
      case Op::TangentOf:
        ad[n.a] += wp;
        break;
    }
  }

  for (std::size_t k = 0; k < leaves_.size() && k < leaf_gradients.size(); ++k)
    leaf_gradients[k] = ap[leaves_[k]];
}

namespace {
Var promote(Var like, double c) { return like.tape()->constant(c); }
}  // namespace

Var operator+(Var a, Var b) { return a.tape()->record_binary(Op::Add, a, b); }
Var operator-(Var a, Var b) { return a.tape()->record_binary(Op::Sub, a, b); }
Var operator*(Var a, Var b) { return a.tape()->record_binary(Op::Mul, a, b); }
Var operator/(Var a, Var b) { return a.tape()->record_binary(Op::Div, a, b); }
Var operator-(Var a) { return a.tape()->record_unary(Op::Neg, a); }

Var operator+(Var a, double b) { return a + promote(a, b); }
Var operator+(double a, Var b) { return promote(b, a) + b; }
Var operator-(Var a, double b) { return a - promote(a, b); }
Var operator-(double a, Var b) { return promote(b, a) - b; }
Var operator*(Var a, double b) { return a * promote(a, b); }
Var operator*(double a, Var b) { return promote(b, a) * b; }
Var operator/(Var a, double b) { return a / promote(a, b); }
Var operator/(double a, Var b) { return promote(b, a) / b; }

Var exp(Var a) { return a.tape()->record_unary(Op::Exp, a); }
Var tanh(Var a) { return a.tape()->record_unary(Op::Tanh, a); }
Var sin(Var a) { return a.tape()->record_unary(Op::Sin, a); }
Var cos(Var a) { return a.tape()->record_unary(Op::Cos, a); }
Var sqrt(Var a) { return a.tape()->record_unary(Op::Sqrt, a); }
Var pow(Var a, double e) { return a.tape()->record_pow(a, e); }
Var max(Var a, Var b) { return a.tape()->record_binary(Op::Max, a, b); }
Var abs(Var a) { return a.tape()->record_unary(Op::Abs, a); }
Var relu(Var a) { return max(a, a.tape()->constant(0.0)); }
Var heaviside(Var a) { return a.tape()->record_unary(Op::Heaviside, a); }
Var tangent_of(Var a) { return a.tape()->record_tangent_of(a); }

std::vector<double> reverse_gradient(const Tape& tape, Var output) {
  ReplayBuffer buf;
  tape.seed(buf);
  std::vector<double> grad(tape.leaf_count(), 0.0);
  tape.reverse(buf, output.index(), grad);
  return grad;
}

}  // namespace odebundle::ad
