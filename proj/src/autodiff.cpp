#include <fusemap/autodiff.hpp>

#include <cmath>
#include <stdexcept>

namespace fusemap::ad {

double Expr::value() const {
  if (!valid()) throw std::logic_error("autodiff: invalid expression handle");
  return tape->value(*this);
}

double GradientMap::at(const Expr& param) const {
  auto it = grads_.find(param.id);
  return it == grads_.end() ? 0.0 : it->second;
}

void Tape::check_same_tape(Expr e) const {
  if (e.tape != this || e.id < 0 || e.id >= static_cast<int>(nodes_.size())) {
    throw std::logic_error("autodiff: expression does not belong to this tape");
  }
}

Expr Tape::push(Node n) {
  eval(n);
  nodes_.push_back(n);
  return Expr{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::eval(Node& n) const {
  auto v = [&](int id) { return nodes_[id].value; };
  switch (n.op) {
    case Op::Const:
    case Op::Param:
      break;
    case Op::Add: n.value = v(n.a) + v(n.b); break;
    case Op::Sub: n.value = v(n.a) - v(n.b); break;
    case Op::Mul: n.value = v(n.a) * v(n.b); break;
    case Op::Div:
      if (v(n.b) == 0.0) throw std::domain_error("autodiff: division by zero");
      n.value = v(n.a) / v(n.b);
      break;
    case Op::Neg: n.value = -v(n.a); break;
    case Op::Exp: n.value = std::exp(v(n.a)); break;
    case Op::Log:
      if (v(n.a) <= 0.0) {
        throw std::domain_error("autodiff: log of non-positive value");
      }
      n.value = std::log(v(n.a));
      break;
    case Op::Pow: n.value = std::pow(v(n.a), n.aux); break;
    case Op::Max: {
      double m = v(pool_[n.pool_begin]);
      for (int i = 1; i < n.pool_count; ++i) {
        m = std::max(m, v(pool_[n.pool_begin + i]));
      }
      n.value = m;
      break;
    }
    case Op::ReluSq: {
      double x = std::max(0.0, v(n.a));
      n.value = x * x;
      break;
    }
    case Op::Select: {
      // Highest-index winner on ties; scores are in ascending-choice order.
      int best = 0;
      for (int i = 1; i < n.pool_count; ++i) {
        if (v(pool_[n.pool_begin + i]) >= v(pool_[n.pool_begin + best])) {
          best = i;
        }
      }
      n.value = dpool_[n.dpool_begin + best];
      break;
    }
  }
}

Expr Tape::constant(double v) {
  if (!std::isfinite(v)) {
    throw std::runtime_error("autodiff: non-finite constant");
  }
  Node n;
  n.op = Op::Const;
  n.value = v;
  return push(n);
}

Expr Tape::param(double v) {
  if (!std::isfinite(v)) {
    throw std::runtime_error("autodiff: non-finite parameter value");
  }
  Node n;
  n.op = Op::Param;
  n.value = v;
  Expr e = push(n);
  params_.push_back(e.id);
  return e;
}

Expr Tape::add(Expr a, Expr b) {
  check_same_tape(a);
  check_same_tape(b);
  Node n;
  n.op = Op::Add;
  n.a = a.id;
  n.b = b.id;
  return push(n);
}

Expr Tape::sub(Expr a, Expr b) {
  check_same_tape(a);
  check_same_tape(b);
  Node n;
  n.op = Op::Sub;
  n.a = a.id;
  n.b = b.id;
  return push(n);
}

Expr Tape::mul(Expr a, Expr b) {
  check_same_tape(a);
  check_same_tape(b);
  Node n;
  n.op = Op::Mul;
  n.a = a.id;
  n.b = b.id;
  return push(n);
}

Expr Tape::div(Expr a, Expr b) {
  check_same_tape(a);
  check_same_tape(b);
  Node n;
  n.op = Op::Div;
  n.a = a.id;
  n.b = b.id;
  return push(n);
}

Expr Tape::neg(Expr a) {
  check_same_tape(a);
  Node n;
  n.op = Op::Neg;
  n.a = a.id;
  return push(n);
}

Expr Tape::exp(Expr a) {
  check_same_tape(a);
  Node n;
  n.op = Op::Exp;
  n.a = a.id;
  return push(n);
}

Expr Tape::log(Expr a) {
  check_same_tape(a);
  Node n;
  n.op = Op::Log;
  n.a = a.id;
  return push(n);
}

Expr Tape::pow(Expr a, double c) {
  check_same_tape(a);
  Node n;
  n.op = Op::Pow;
  n.a = a.id;
  n.aux = c;
  return push(n);
}

Expr Tape::max(const std::vector<Expr>& operands) {
  if (operands.empty()) {
    throw std::runtime_error("autodiff: max of empty operand list");
  }
  for (Expr e : operands) check_same_tape(e);
  Node n;
  n.op = Op::Max;
  n.pool_begin = static_cast<int>(pool_.size());
  n.pool_count = static_cast<int>(operands.size());
  for (Expr e : operands) pool_.push_back(e.id);
  return push(n);
}

Expr Tape::relu_sq(Expr a) {
  check_same_tape(a);
  Node n;
  n.op = Op::ReluSq;
  n.a = a.id;
  return push(n);
}

Expr Tape::select_hard(Expr soft, const std::vector<Expr>& scores,
                       const std::vector<double>& choices) {
  check_same_tape(soft);
  if (scores.empty() || scores.size() != choices.size()) {
    throw std::runtime_error(
        "autodiff: select_hard needs matching non-empty scores and choices");
  }
  for (Expr e : scores) check_same_tape(e);
  Node n;
  n.op = Op::Select;
  n.a = soft.id;
  n.pool_begin = static_cast<int>(pool_.size());
  n.pool_count = static_cast<int>(scores.size());
  for (Expr e : scores) pool_.push_back(e.id);
  n.dpool_begin = static_cast<int>(dpool_.size());
  for (double c : choices) dpool_.push_back(c);
  return push(n);
}

double Tape::value(Expr e) const {
  check_same_tape(e);
  return nodes_[e.id].value;
}

void Tape::set_param(Expr p, double v) {
  check_same_tape(p);
  if (nodes_[p.id].op != Op::Param) {
    throw std::logic_error("autodiff: set_param on a non-parameter node");
  }
  if (!std::isfinite(v)) {
    throw std::runtime_error("autodiff: non-finite parameter value");
  }
  nodes_[p.id].value = v;
}

void Tape::forward() {
  for (Node& n : nodes_) eval(n);
}

GradientMap Tape::backward(Expr root) const {
  check_same_tape(root);
  std::vector<double> adj(nodes_.size(), 0.0);
  adj[root.id] = 1.0;
  auto v = [&](int id) { return nodes_[id].value; };
  for (int i = root.id; i >= 0; --i) {
    const Node& n = nodes_[i];
    double a = adj[i];
    if (a == 0.0) continue;
    switch (n.op) {
      case Op::Const:
      case Op::Param:
        break;
      case Op::Add:
        adj[n.a] += a;
        adj[n.b] += a;
        break;
      case Op::Sub:
        adj[n.a] += a;
        adj[n.b] -= a;
        break;
      case Op::Mul:
        adj[n.a] += a * v(n.b);
        adj[n.b] += a * v(n.a);
        break;
      case Op::Div:
        adj[n.a] += a / v(n.b);
        adj[n.b] -= a * v(n.a) / (v(n.b) * v(n.b));
        break;
      case Op::Neg:
        adj[n.a] -= a;
        break;
      case Op::Exp:
        adj[n.a] += a * n.value;
        break;
      case Op::Log:
        adj[n.a] += a / v(n.a);
        break;
      case Op::Pow:
        adj[n.a] += a * n.aux * std::pow(v(n.a), n.aux - 1.0);
        break;
      case Op::Max: {
        // First operand attaining the maximum takes the full gradient.
        for (int k = 0; k < n.pool_count; ++k) {
          int src = pool_[n.pool_begin + k];
          if (v(src) == n.value) {
            adj[src] += a;
            break;
          }
        }
        break;
      }
      case Op::ReluSq:
        adj[n.a] += a * 2.0 * std::max(0.0, v(n.a));
        break;
      case Op::Select:
        adj[n.a] += a;
        break;
    }
  }
  std::unordered_map<int, double> grads;
  grads.reserve(params_.size());
  for (int pid : params_) grads.emplace(pid, adj[pid]);
  return GradientMap(std::move(grads));
}

namespace {
Tape& tape_of(Expr a, Expr b) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw std::logic_error("autodiff: operands on different tapes");
  }
  return *a.tape;
}
}  // namespace

Expr operator+(Expr a, Expr b) { return tape_of(a, b).add(a, b); }
Expr operator-(Expr a, Expr b) { return tape_of(a, b).sub(a, b); }
Expr operator*(Expr a, Expr b) { return tape_of(a, b).mul(a, b); }
Expr operator/(Expr a, Expr b) { return tape_of(a, b).div(a, b); }
Expr operator-(Expr a) { return a.tape->neg(a); }
Expr operator+(Expr a, double b) { return a + a.tape->constant(b); }
Expr operator+(double a, Expr b) { return b.tape->constant(a) + b; }
Expr operator-(Expr a, double b) { return a - a.tape->constant(b); }
Expr operator-(double a, Expr b) { return b.tape->constant(a) - b; }
Expr operator*(Expr a, double b) { return a * a.tape->constant(b); }
Expr operator*(double a, Expr b) { return b.tape->constant(a) * b; }
Expr operator/(Expr a, double b) { return a / a.tape->constant(b); }
Expr operator/(double a, Expr b) { return b.tape->constant(a) / b; }

}  // namespace fusemap::ad
