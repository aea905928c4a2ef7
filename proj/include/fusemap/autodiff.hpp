#pragma once

/// @file autodiff.hpp
/// @brief Minimal reverse-mode automatic differentiation over scalar
///        expressions.
///
/// A Tape owns an append-only list of expression nodes; Expr is a cheap
/// handle into it. Values are computed eagerly at construction and can be
/// recomputed after parameter updates with forward(). backward() produces
/// the gradient of one root with respect to every parameter in a single
/// reverse sweep.
///
/// A tape is single-threaded; distinct tapes may be used concurrently.

#include <cstddef>
#include <unordered_map>
#include <vector>

namespace fusemap::ad {

class Tape;

/// Handle to a tape node. Valid only together with the owning tape.
struct Expr {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  double value() const;
};

/// Gradient of one root with respect to each parameter node on the tape.
class GradientMap {
 public:
  GradientMap() = default;
  explicit GradientMap(std::unordered_map<int, double> grads)
      : grads_(std::move(grads)) {}

  /// Derivative w.r.t. a param node; 0 for params the root does not reach.
  double at(const Expr& param) const;
  size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<int, double> grads_;
};

class Tape {
 public:
  /// Leaf nodes. Constants carry no gradient; params are gradient targets.
  /// Throws std::runtime_error on non-finite input.
  Expr constant(double v);
  Expr param(double v);

  Expr add(Expr a, Expr b);
  Expr sub(Expr a, Expr b);
  Expr mul(Expr a, Expr b);
  /// Throws std::domain_error on division by zero at evaluation.
  Expr div(Expr a, Expr b);
  Expr neg(Expr a);
  Expr exp(Expr a);
  /// Throws std::domain_error on non-positive argument at evaluation.
  Expr log(Expr a);
  /// Fixed real exponent; derivative c·x^{c−1}.
  Expr pow(Expr a, double c);

  /// Exact maximum; the backward pass routes the full gradient to the
  /// first operand attaining the maximum. Throws on an empty list.
  Expr max(const std::vector<Expr>& operands);

  /// max(0,x)^2 with derivative 2·max(0,x), continuous at 0.
  Expr relu_sq(Expr a);

  /// Straight-through selection: forward value is choices[argmax(scores)]
  /// (ties resolve to the highest index); backward passes the gradient to
  /// `soft` unchanged and none to the scores. The argmax is recomputed on
  /// every forward pass, so the hard choice tracks parameter updates.
  Expr select_hard(Expr soft, const std::vector<Expr>& scores,
                   const std::vector<double>& choices);

  double value(Expr e) const;
  /// Updates a param leaf in place; call forward() to propagate.
  void set_param(Expr p, double v);

  /// Re-evaluates every node in append order. Domain errors throw.
  void forward();

  /// Reverse sweep from `root`; O(tape size). The map holds an entry for
  /// every param node on the tape.
  GradientMap backward(Expr root) const;

  size_t size() const { return nodes_.size(); }

 private:
  enum class Op {
    Const,
    Param,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Pow,
    Max,
    ReluSq,
    Select
  };

  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    // Range into pool_ for variadic operands (Max, Select scores).
    int pool_begin = 0;
    int pool_count = 0;
    // Range into dpool_ for Select choices; aux is the Pow exponent.
    int dpool_begin = 0;
    double aux = 0.0;
    double value = 0.0;
  };

  Expr push(Node n);
  void eval(Node& n) const;
  void check_same_tape(Expr e) const;

  std::vector<Node> nodes_;
  std::vector<int> pool_;
  std::vector<double> dpool_;
  std::vector<int> params_;
};

// Operator sugar; operands must share a tape. Scalars lift to constants.
Expr operator+(Expr a, Expr b);
Expr operator-(Expr a, Expr b);
Expr operator*(Expr a, Expr b);
Expr operator/(Expr a, Expr b);
Expr operator-(Expr a);
Expr operator+(Expr a, double b);
Expr operator+(double a, Expr b);
Expr operator-(Expr a, double b);
Expr operator-(double a, Expr b);
Expr operator*(Expr a, double b);
Expr operator*(double a, Expr b);
Expr operator/(Expr a, double b);
Expr operator/(double a, Expr b);

}  // namespace fusemap::ad
