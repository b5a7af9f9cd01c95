#ifndef SFL_EXPR_HPP
#define SFL_EXPR_HPP

#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

// Immutable symbolic expressions over one independent variable x and the
// solution tokens y, y1, y2 (value and first/second derivative of the unknown
// function). Subtrees are shared; an Expr is a cheap value type.

namespace sfl {

enum class Op {
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  PowInt,   // integer exponent, |k| <= kMaxPowExponent
  Sin,
  Cos,
  SqrtAbs,  // sqrt(|v| + 1e-9)
  Exp,
  LogAbs,   // log(|v| + 1e-9)
  Abs,
  Identity,
};

inline constexpr int kMaxPowExponent = 16;

enum class Var { X, Y, DY, D2Y };

int arity(Op op);
std::string_view op_name(Op op);

class Expr {
 public:
  enum class Kind { Constant, Variable, Apply };

  // default-constructs the constant 0 so containers of Expr behave sanely
  Expr();

  static Expr constant(double value);
  static Expr variable(Var v);
  // throws std::invalid_argument on arity mismatch, non-finite constant or
  // out-of-range pow exponent
  static Expr apply(Op op, std::vector<Expr> children, int pow_k = 0);

  Kind kind() const;
  Op op() const;             // Apply only
  double value() const;      // Constant only
  Var var() const;           // Variable only
  int pow_exponent() const;  // PowInt only
  int child_count() const;
  const Expr& child(int i) const;

  size_t node_count() const;

 private:
  struct Node;
  explicit Expr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}
  std::shared_ptr<const Node> node_;
};

// convenience builders
Expr operator+(const Expr& a, const Expr& b);
Expr operator-(const Expr& a, const Expr& b);
Expr operator*(const Expr& a, const Expr& b);
Expr operator/(const Expr& a, const Expr& b);
Expr operator-(const Expr& a);
Expr sin(const Expr& a);
Expr cos(const Expr& a);
Expr sqrt_abs(const Expr& a);
Expr exp(const Expr& a);
Expr log_abs(const Expr& a);
Expr abs(const Expr& a);
Expr identity(const Expr& a);
Expr pow_int(const Expr& a, int k);

struct EvalPoint {
  double x = 0.0;
  double y = 0.0;
  double y1 = 0.0;
  double y2 = 0.0;
};

// total evaluation under the guard rules in guards.hpp
double eval(const Expr& e, const EvalPoint& at);
double eval(const Expr& e, double x);

bool uses_var(const Expr& e, Var v);

// replace every occurrence of v by replacement
Expr substitute(const Expr& e, Var v, const Expr& replacement);

// exact symbolic derivative with respect to `v`; the guarded primitives
// differentiate to their guarded derivative (d log_abs(u) = sign(u)/(|u|+eps)
// etc.) so dual-number and symbolic derivatives agree away from the guards
Expr differentiate(const Expr& e, Var v = Var::X);

// algebraic cleanup: flattens +/- and */ chains, folds constants, drops
// near-zero terms and near-one factors (|coeff| <= tol). The result is
// verified against the input by sampling; if the tolerance-based cleanup
// moves any sampled value by more than tol*(1+|value|) only exact rewrites
// are applied.
Expr simplify(const Expr& e, double tol = 0.0);

// round-trippable text form, precision = significant digits (1..12)
std::string to_string(const Expr& e, int precision = 6);

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, size_t offset)
      : std::runtime_error(what), offset_(offset) {}
  size_t offset() const { return offset_; }

 private:
  size_t offset_;
};

// grammar: expr := term (('+'|'-') term)*; term := unary (('*'|'/') unary)*;
// unary := '-' unary | power; power := atom ('^' integer)?;
// atom := number | 'x' | 'y' | 'y1' | 'y2' | 'pi' | func '(' expr ')'
//       | '(' expr ')'
// funcs: sin cos sqrt exp log abs (sqrt/log map to their guarded forms)
Expr parse(std::string_view text);

}  // namespace sfl

#endif
