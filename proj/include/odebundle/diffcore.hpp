#pragma once

// Scalar automatic differentiation with two cooperating modes:
//
//  * Dual      — stack-based forward mode. Carries a value and a directional
//                derivative with respect to a single designated input.
//  * Tape/Var  — recorded computation. Every elementary operation becomes a
//                node carrying a primal and a forward tangent, and the tape
//                can be swept in reverse to obtain the gradient of any scalar
//                node with respect to every leaf.
//
// The reverse sweep propagates adjoints of both the primal and the tangent
// channel, so gradients of expressions that consume a forward tangent (via
// tangent_of) come out correct. This is what training needs: the loss
// contains a time derivative, and we still want d(loss)/d(weights).

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace odebundle::ad {

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// ---------------------------------------------------------------------------
// Forward mode

struct Dual {
  double v = 0.0;  // primal
  double d = 0.0;  // derivative with respect to the seeded input

  Dual() = default;
  Dual(double value) : v(value) {}  // constants have zero tangent
  Dual(double value, double tangent) : v(value), d(tangent) {}
};

inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator-(Dual a) { return {-a.v, -a.d}; }
inline Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }

inline Dual operator/(Dual a, Dual b) {
  if (b.v == 0.0) throw DomainError("division by zero");
  const double q = a.v / b.v;
  return {q, (a.d - q * b.d) / b.v};
}

inline Dual& operator+=(Dual& a, Dual b) { return a = a + b; }
inline Dual& operator-=(Dual& a, Dual b) { return a = a - b; }
inline Dual& operator*=(Dual& a, Dual b) { return a = a * b; }

inline Dual exp(Dual a) {
  const double e = std::exp(a.v);
  return {e, a.d * e};
}

inline Dual tanh(Dual a) {
  const double t = std::tanh(a.v);
  return {t, a.d * (1.0 - t * t)};
}

inline Dual sin(Dual a) { return {std::sin(a.v), a.d * std::cos(a.v)}; }
inline Dual cos(Dual a) { return {std::cos(a.v), -a.d * std::sin(a.v)}; }

inline Dual sqrt(Dual a) {
  if (a.v < 0.0) throw DomainError("sqrt of negative value");
  const double s = std::sqrt(a.v);
  return {s, 0.5 * a.d / s};
}

inline Dual pow(Dual a, double e) {
  if (a.v < 0.0 && e != std::floor(e))
    throw DomainError("pow of negative base with non-integer exponent");
  const double p = std::pow(a.v, e);
  return {p, e * std::pow(a.v, e - 1.0) * a.d};
}

// Tie at a == b resolves to the first operand.
inline Dual max(Dual a, Dual b) { return a.v >= b.v ? a : b; }

// Derivative at 0 is defined as 0.
inline Dual abs(Dual a) {
  if (a.v > 0.0) return a;
  if (a.v < 0.0) return {-a.v, -a.d};
  return {0.0, 0.0};
}

inline Dual relu(Dual a) { return max(a, Dual(0.0)); }

// Step function; evaluates to 0 at exactly 0, derivative 0 everywhere.
inline Dual heaviside(Dual a) { return {a.v > 0.0 ? 1.0 : 0.0, 0.0}; }

// a + b*c as one operation; the workhorse of dense layers.
inline double fmadd(double a, double b, double c) { return a + b * c; }
inline Dual fmadd(Dual a, Dual b, Dual c) {
  return {a.v + b.v * c.v, a.d + b.d * c.v + b.v * c.d};
}

// ---------------------------------------------------------------------------
// Recorded computation

enum class Op : std::uint8_t {
  Leaf,
  Const,
  Add,
  Sub,
  Mul,
  MulAdd,  // a + b*c
  Div,
  Neg,
  PowC,  // exponent stored in aux
  Exp,
  Tanh,
  Sin,
  Cos,
  Sqrt,
  Max,
  Abs,
  Heaviside,
  TangentOf,  // primal = forward tangent of the operand
};

class Tape;

// Handle to a tape node. Cheap to copy; all arithmetic on Vars records.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t index) : tape_(tape), index_(index) {}

  Tape* tape() const { return tape_; }
  std::uint32_t index() const { return index_; }
  double value() const;
  double tangent() const;

 private:
  Tape* tape_ = nullptr;
  std::uint32_t index_ = 0;
};

// Scratch arrays for replaying/reversing a tape without touching the
// recorded values. One buffer per thread; reusable across replays.
struct ReplayBuffer {
  std::vector<double> primal;
  std::vector<double> tangent;
  std::vector<double> adj_primal;
  std::vector<double> adj_tangent;
};

class Tape {
 public:
  struct Node {
    Op op;
    std::uint32_t a = 0;
    std::uint32_t b = 0;  // for Leaf nodes: the leaf ordinal
    std::uint32_t c = 0;
  };

  // Leaves are identified by the order of creation (leaf ordinal).
  Var leaf(double value, double tangent = 0.0);
  Var constant(double value);

  std::size_t size() const { return nodes_.size(); }
  std::size_t leaf_count() const { return leaves_.size(); }
  std::uint32_t leaf_node(std::size_t ordinal) const { return leaves_[ordinal]; }

  double primal(std::uint32_t i) const { return primal_[i]; }
  double tangent(std::uint32_t i) const { return tangent_[i]; }

  // Replay support. seed() copies the recorded values into the buffer;
  // set_leaf overrides one leaf; replay() recomputes every non-leaf node.
  // Replaying untouched leaves reproduces the recorded primals bit-exactly.
  void seed(ReplayBuffer& buf) const;
  void set_leaf(ReplayBuffer& buf, std::size_t ordinal, double value, double tangent = 0.0) const;
  void replay(ReplayBuffer& buf) const;

  // Reverse sweep from `output` over both value channels. Fills
  // `leaf_gradients` (length leaf_count) with d(primal of output)/d(leaf k).
  void reverse(ReplayBuffer& buf, std::uint32_t output, std::span<double> leaf_gradients) const;

  // Recording API used by Var operators.
  Var record_unary(Op op, Var a);
  Var record_binary(Op op, Var a, Var b);
  Var record_muladd(Var a, Var b, Var c);
  Var record_pow(Var a, double exponent);
  Var record_tangent_of(Var a);

 private:
  std::uint32_t push(Op op, std::uint32_t a, std::uint32_t b, std::uint32_t c, double aux,
                     double primal, double tangent);

  std::vector<Node> nodes_;
  std::vector<double> aux_;      // per-node constant (PowC exponent, Const value)
  std::vector<double> primal_;   // values of the recording pass
  std::vector<double> tangent_;
  std::vector<std::uint32_t> leaves_;
};

inline double Var::value() const { return tape_->primal(index_); }
inline double Var::tangent() const { return tape_->tangent(index_); }

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);

Var operator+(Var a, double b);
Var operator+(double a, Var b);
Var operator-(Var a, double b);
Var operator-(double a, Var b);
Var operator*(Var a, double b);
Var operator*(double a, Var b);
Var operator/(Var a, double b);
Var operator/(double a, Var b);

Var fmadd(Var a, Var b, Var c);
Var exp(Var a);
Var tanh(Var a);
Var sin(Var a);
Var cos(Var a);
Var sqrt(Var a);
Var pow(Var a, double e);
Var max(Var a, Var b);
Var abs(Var a);
Var relu(Var a);
Var heaviside(Var a);

// Extracts the forward tangent of `a` as a primal value. The tangent channel
// of the result is 0: second time-derivatives are out of scope, so
// tangent_of must not be applied to anything derived from another
// tangent_of.
Var tangent_of(Var a);

// ---------------------------------------------------------------------------
// Convenience entry points

struct DualValue {
  double primal = 0.0;
  double tangent = 0.0;
};

// Records `build` over fresh leaves (one per entry of `leaf_values`, with the
// tangent seeded at `tangent_seed`) and returns the output's value pair.
template <class F>
DualValue eval_dual(std::span<const double> leaf_values, std::size_t tangent_seed, F&& build) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(leaf_values.size());
  for (std::size_t k = 0; k < leaf_values.size(); ++k)
    leaves.push_back(tape.leaf(leaf_values[k], k == tangent_seed ? 1.0 : 0.0));
  Var out = build(tape, std::span<const Var>(leaves));
  return {out.value(), out.tangent()};
}

// Gradient of the recorded output with respect to every leaf, using the
// values of the recording pass.
std::vector<double> reverse_gradient(const Tape& tape, Var output);

}  // namespace odebundle::ad
