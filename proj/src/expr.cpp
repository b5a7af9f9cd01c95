#include "sfl/expr.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <utility>

#include "sfl/guards.hpp"

namespace sfl {

struct Expr::Node {
  Kind kind = Kind::Constant;
  Op op = Op::Add;
  double value = 0.0;
  Var var = Var::X;
  int pow_k = 0;
  std::vector<Expr> children;
};

int arity(Op op) {
  switch (op) {
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div:
      return 2;
    default:
      return 1;
  }
}

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Neg: return "neg";
    case Op::PowInt: return "pow";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::SqrtAbs: return "sqrt";
    case Op::Exp: return "exp";
    case Op::LogAbs: return "log";
    case Op::Abs: return "abs";
    case Op::Identity: return "id";
  }
  return "?";
}

Expr::Expr() {
  static const std::shared_ptr<const Node> zero = [] {
    auto n = std::make_shared<Node>();
    n->kind = Kind::Constant;
    n->value = 0.0;
    return n;
  }();
  node_ = zero;
}

Expr Expr::constant(double value) {
  if (!std::isfinite(value))
    throw std::invalid_argument("expression constant must be finite");
  auto n = std::make_shared<Node>();
  n->kind = Kind::Constant;
  n->value = value;
  return Expr(std::move(n));
}

Expr Expr::variable(Var v) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::Variable;
  n->var = v;
  return Expr(std::move(n));
}

Expr Expr::apply(Op op, std::vector<Expr> children, int pow_k) {
  if (static_cast<int>(children.size()) != arity(op))
    throw std::invalid_argument("wrong operand count for operator");
  if (op == Op::PowInt) {
    if (pow_k < -kMaxPowExponent || pow_k > kMaxPowExponent)
      throw std::invalid_argument("pow exponent out of range");
  } else {
    pow_k = 0;
  }
  auto n = std::make_shared<Node>();
  n->kind = Kind::Apply;
  n->op = op;
  n->pow_k = pow_k;
  n->children = std::move(children);
  return Expr(std::move(n));
}

Expr::Kind Expr::kind() const { return node_->kind; }
Op Expr::op() const { return node_->op; }
double Expr::value() const { return node_->value; }
Var Expr::var() const { return node_->var; }
int Expr::pow_exponent() const { return node_->pow_k; }
int Expr::child_count() const { return static_cast<int>(node_->children.size()); }
const Expr& Expr::child(int i) const { return node_->children[i]; }

size_t Expr::node_count() const {
  size_t n = 1;
  for (const Expr& c : node_->children) n += c.node_count();
  return n;
}

Expr operator+(const Expr& a, const Expr& b) { return Expr::apply(Op::Add, {a, b}); }
Expr operator-(const Expr& a, const Expr& b) { return Expr::apply(Op::Sub, {a, b}); }
Expr operator*(const Expr& a, const Expr& b) { return Expr::apply(Op::Mul, {a, b}); }
Expr operator/(const Expr& a, const Expr& b) { return Expr::apply(Op::Div, {a, b}); }
Expr operator-(const Expr& a) { return Expr::apply(Op::Neg, {a}); }
Expr sin(const Expr& a) { return Expr::apply(Op::Sin, {a}); }
Expr cos(const Expr& a) { return Expr::apply(Op::Cos, {a}); }
Expr sqrt_abs(const Expr& a) { return Expr::apply(Op::SqrtAbs, {a}); }
Expr exp(const Expr& a) { return Expr::apply(Op::Exp, {a}); }
Expr log_abs(const Expr& a) { return Expr::apply(Op::LogAbs, {a}); }
Expr abs(const Expr& a) { return Expr::apply(Op::Abs, {a}); }
Expr identity(const Expr& a) { return Expr::apply(Op::Identity, {a}); }
Expr pow_int(const Expr& a, int k) { return Expr::apply(Op::PowInt, {a}, k); }

double eval(const Expr& e, const EvalPoint& at) {
  switch (e.kind()) {
    case Expr::Kind::Constant:
      return e.value();
    case Expr::Kind::Variable:
      switch (e.var()) {
        case Var::X: return at.x;
        case Var::Y: return at.y;
        case Var::DY: return at.y1;
        case Var::D2Y: return at.y2;
      }
      return 0.0;
    case Expr::Kind::Apply:
      break;
  }
  switch (e.op()) {
    case Op::Add: return eval(e.child(0), at) + eval(e.child(1), at);
    case Op::Sub: return eval(e.child(0), at) - eval(e.child(1), at);
    case Op::Mul: return eval(e.child(0), at) * eval(e.child(1), at);
    case Op::Div: return guarded_div(eval(e.child(0), at), eval(e.child(1), at));
    case Op::Neg: return -eval(e.child(0), at);
    case Op::PowInt: return int_pow(eval(e.child(0), at), e.pow_exponent());
    case Op::Sin: return std::sin(eval(e.child(0), at));
    case Op::Cos: return std::cos(eval(e.child(0), at));
    case Op::SqrtAbs: return sqrt_abs_value(eval(e.child(0), at));
    case Op::Exp: return std::exp(eval(e.child(0), at));
    case Op::LogAbs: return log_abs_value(eval(e.child(0), at));
    case Op::Abs: return std::abs(eval(e.child(0), at));
    case Op::Identity: return eval(e.child(0), at);
  }
  return 0.0;
}

double eval(const Expr& e, double x) { return eval(e, EvalPoint{x, 0, 0, 0}); }

bool uses_var(const Expr& e, Var v) {
  if (e.kind() == Expr::Kind::Variable) return e.var() == v;
  for (int i = 0; i < e.child_count(); ++i)
    if (uses_var(e.child(i), v)) return true;
  return false;
}

Expr substitute(const Expr& e, Var v, const Expr& replacement) {
  switch (e.kind()) {
    case Expr::Kind::Constant:
      return e;
    case Expr::Kind::Variable:
      return e.var() == v ? replacement : e;
    case Expr::Kind::Apply: {
      std::vector<Expr> kids;
      kids.reserve(e.child_count());
      for (int i = 0; i < e.child_count(); ++i)
        kids.push_back(substitute(e.child(i), v, replacement));
      return Expr::apply(e.op(), std::move(kids), e.pow_exponent());
    }
  }
  return e;
}

namespace {

bool is_const(const Expr& e) { return e.kind() == Expr::Kind::Constant; }
bool is_const_val(const Expr& e, double v) { return is_const(e) && e.value() == v; }

// structural smart constructors: fold exact zeros/ones so derivative trees
// stay readable without a full simplify pass
Expr mk_add(const Expr& a, const Expr& b) {
  if (is_const_val(a, 0.0)) return b;
  if (is_const_val(b, 0.0)) return a;
  if (is_const(a) && is_const(b)) return Expr::constant(a.value() + b.value());
  return a + b;
}

Expr mk_neg(const Expr& a) {
  if (is_const(a)) return Expr::constant(-a.value());
  if (a.kind() == Expr::Kind::Apply && a.op() == Op::Neg) return a.child(0);
  return -a;
}

Expr mk_sub(const Expr& a, const Expr& b) {
  if (is_const_val(b, 0.0)) return a;
  if (is_const_val(a, 0.0)) return mk_neg(b);
  if (is_const(a) && is_const(b)) return Expr::constant(a.value() - b.value());
  return a - b;
}

Expr mk_mul(const Expr& a, const Expr& b) {
  if (is_const_val(a, 0.0) || is_const_val(b, 0.0)) return Expr::constant(0.0);
  if (is_const_val(a, 1.0)) return b;
  if (is_const_val(b, 1.0)) return a;
  if (is_const(a) && is_const(b)) {
    double v = a.value() * b.value();
    if (std::isfinite(v)) return Expr::constant(v);
  }
  return a * b;
}

Expr mk_div(const Expr& a, const Expr& b) {
  if (is_const_val(a, 0.0)) return Expr::constant(0.0);
  if (is_const_val(b, 1.0)) return a;
  if (is_const(a) && is_const(b)) {
    double v = guarded_div(a.value(), b.value());
    if (std::isfinite(v)) return Expr::constant(v);
  }
  return a / b;
}

// Guarded sign for the abs-family derivatives. A single u/|u| ramps softly
// across |u| < 1e-6 (the division guard), which even powers hit easily; each
// extra pass squares the exact region, so three passes leave a ramp only
// below |u| = 1e-18 where the chain-rule factor is negligible anyway.
Expr sign_expr(const Expr& u) {
  Expr s = mk_div(u, abs(u));
  s = mk_div(s, abs(s));
  return mk_div(s, abs(s));
}

}  // namespace

Expr differentiate(const Expr& e, Var v) {
  switch (e.kind()) {
    case Expr::Kind::Constant:
      return Expr::constant(0.0);
    case Expr::Kind::Variable:
      return Expr::constant(e.var() == v ? 1.0 : 0.0);
    case Expr::Kind::Apply:
      break;
  }
  const Expr& a = e.child(0);
  Expr da = differentiate(a, v);
  switch (e.op()) {
    case Op::Add:
      return mk_add(da, differentiate(e.child(1), v));
    case Op::Sub:
      return mk_sub(da, differentiate(e.child(1), v));
    case Op::Mul: {
      const Expr& b = e.child(1);
      return mk_add(mk_mul(da, b), mk_mul(a, differentiate(b, v)));
    }
    case Op::Div: {
      // a'/b - (a*b')/b/b: staged single divisions keep the guard behaviour
      // identical to the dual-number reciprocal path
      const Expr& b = e.child(1);
      Expr db = differentiate(b, v);
      return mk_sub(mk_div(da, b), mk_div(mk_div(mk_mul(a, db), b), b));
    }
    case Op::Neg:
      return mk_neg(da);
    case Op::Identity:
      return da;
    case Op::Sin:
      return mk_mul(cos(a), da);
    case Op::Cos:
      return mk_neg(mk_mul(sin(a), da));
    case Op::Exp:
      return mk_mul(exp(a), da);
    case Op::SqrtAbs:
      // sign(a) / (2 sqrt(|a|+eps))
      return mk_mul(da, mk_div(sign_expr(a),
                               mk_mul(Expr::constant(2.0), sqrt_abs(a))));
    case Op::LogAbs:
      // sign(a) / (|a|+eps)
      return mk_mul(da, mk_div(sign_expr(a),
                               mk_add(abs(a), Expr::constant(kAbsShift))));
    case Op::Abs:
      return mk_mul(da, sign_expr(a));
    case Op::PowInt: {
      int k = e.pow_exponent();
      if (k == 0) return Expr::constant(0.0);
      if (k == 1) return da;
      // k u^(k-1); negative k writes u^k / u to stay inside the exponent range
      Expr factor = k > 0 ? pow_int(a, k - 1) : mk_div(pow_int(a, k), a);
      return mk_mul(mk_mul(Expr::constant(static_cast<double>(k)), factor), da);
    }
  }
  return Expr::constant(0.0);
}

// ---------------------------------------------------------------------------
// simplify

namespace {

std::string expr_key(const Expr& e);  // defined after to_string helpers

struct TermList {
  double constant = 0.0;
  std::vector<std::pair<double, Expr>> terms;
};

struct Factored {
  double coeff = 1.0;
  std::vector<Expr> num;
  std::vector<Expr> den;
};

Factored collect_factors(const Expr& e) {
  Factored out;
  if (e.kind() == Expr::Kind::Constant) {
    out.coeff = e.value();
    return out;
  }
  if (e.kind() == Expr::Kind::Apply) {
    switch (e.op()) {
      case Op::Mul: {
        Factored l = collect_factors(e.child(0));
        Factored r = collect_factors(e.child(1));
        out.coeff = l.coeff * r.coeff;
        out.num = std::move(l.num);
        out.num.insert(out.num.end(), r.num.begin(), r.num.end());
        out.den = std::move(l.den);
        out.den.insert(out.den.end(), r.den.begin(), r.den.end());
        return out;
      }
      case Op::Div: {
        Factored l = collect_factors(e.child(0));
        Factored r = collect_factors(e.child(1));
        out.coeff = guarded_div(l.coeff, r.coeff);
        out.num = std::move(l.num);
        out.num.insert(out.num.end(), r.den.begin(), r.den.end());
        out.den = std::move(l.den);
        out.den.insert(out.den.end(), r.num.begin(), r.num.end());
        return out;
      }
      case Op::Neg: {
        out = collect_factors(e.child(0));
        out.coeff = -out.coeff;
        return out;
      }
      case Op::Identity:
        return collect_factors(e.child(0));
      default:
        break;
    }
  }
  out.num.push_back(e);
  return out;
}

bool is_sum_like(const Expr& e) {
  return e.kind() == Expr::Kind::Apply &&
         (e.op() == Op::Add || e.op() == Op::Sub);
}

// scale carries sign and any constant factors distributed over inner sums
void collect_terms(const Expr& e, double scale, TermList& out) {
  if (e.kind() == Expr::Kind::Constant) {
    out.constant += scale * e.value();
    return;
  }
  if (e.kind() == Expr::Kind::Apply) {
    switch (e.op()) {
      case Op::Add:
        collect_terms(e.child(0), scale, out);
        collect_terms(e.child(1), scale, out);
        return;
      case Op::Sub:
        collect_terms(e.child(0), scale, out);
        collect_terms(e.child(1), -scale, out);
        return;
      case Op::Neg:
        collect_terms(e.child(0), -scale, out);
        return;
      case Op::Identity:
        collect_terms(e.child(0), scale, out);
        return;
      default:
        break;
    }
  }
  Factored f = collect_factors(e);
  if (f.num.empty() && f.den.empty()) {
    out.constant += scale * f.coeff;
    return;
  }
  // a constant times a single sum distributes, collapsing nested affine
  // layers like w*(w'*g + b') + b
  if (f.den.empty() && f.num.size() == 1 && is_sum_like(f.num[0])) {
    collect_terms(f.num[0], scale * f.coeff, out);
    return;
  }
  // rebuild the coefficient-free core
  Expr core;
  bool have = false;
  for (const Expr& n : f.num) {
    core = have ? core * n : n;
    have = true;
  }
  if (!have) core = Expr::constant(1.0);
  if (!f.den.empty()) {
    Expr d = f.den[0];
    for (size_t i = 1; i < f.den.size(); ++i) d = d * f.den[i];
    core = core / d;
  }
  out.terms.emplace_back(scale * f.coeff, core);
}

Expr term_form(double coeff, const Expr& core) {
  if (coeff == 1.0) return core;
  return Expr::constant(coeff) * core;
}

Expr rebuild_sum(const Expr& e, double tol) {
  TermList tl;
  collect_terms(e, 1.0, tl);

  // merge like cores, first occurrence keeps its position
  std::vector<std::pair<double, Expr>> merged;
  std::map<std::string, size_t> index;
  for (auto& [coeff, core] : tl.terms) {
    std::string key = expr_key(core);
    auto it = index.find(key);
    if (it == index.end()) {
      index.emplace(std::move(key), merged.size());
      merged.emplace_back(coeff, core);
    } else {
      merged[it->second].first += coeff;
    }
  }

  bool have = false;
  Expr acc;
  if (std::abs(tl.constant) > tol) {
    acc = Expr::constant(tl.constant);
    have = true;
  }
  for (auto& [coeff, core] : merged) {
    if (std::abs(coeff) <= tol) continue;
    if (!have) {
      acc = coeff < 0.0 ? (coeff == -1.0 ? mk_neg(core) : term_form(coeff, core))
                        : term_form(coeff, core);
      have = true;
    } else if (coeff < 0.0) {
      acc = acc - term_form(-coeff, core);
    } else {
      acc = acc + term_form(coeff, core);
    }
  }
  return have ? acc : Expr::constant(0.0);
}

Expr rebuild_product(const Expr& e, double tol) {
  Factored f = collect_factors(e);

  // cancel structurally equal numerator/denominator factors pairwise
  std::vector<std::string> num_keys;
  num_keys.reserve(f.num.size());
  for (const Expr& n : f.num) num_keys.push_back(expr_key(n));
  std::vector<bool> num_dead(f.num.size(), false);
  std::vector<Expr> den_kept;
  for (const Expr& d : f.den) {
    std::string key = expr_key(d);
    bool cancelled = false;
    for (size_t i = 0; i < f.num.size(); ++i) {
      if (!num_dead[i] && num_keys[i] == key) {
        num_dead[i] = true;
        cancelled = true;
        break;
      }
    }
    if (!cancelled) den_kept.push_back(d);
  }
  std::vector<Expr> num_kept;
  for (size_t i = 0; i < f.num.size(); ++i)
    if (!num_dead[i]) num_kept.push_back(f.num[i]);

  if (std::abs(f.coeff) <= tol) return Expr::constant(0.0);

  bool negate = false;
  double coeff = f.coeff;
  if (std::abs(coeff + 1.0) <= tol) {
    negate = true;
    coeff = 1.0;
  }

  Expr acc;
  bool have = false;
  if (std::abs(coeff - 1.0) > tol) {
    acc = Expr::constant(coeff);
    have = true;
  }
  for (const Expr& n : num_kept) {
    acc = have ? acc * n : n;
    have = true;
  }
  if (!have) acc = Expr::constant(1.0);
  if (!den_kept.empty()) {
    Expr d = den_kept[0];
    for (size_t i = 1; i < den_kept.size(); ++i) d = d * den_kept[i];
    acc = acc / d;
  }
  return negate ? mk_neg(acc) : acc;
}

bool all_children_const(const Expr& e) {
  for (int i = 0; i < e.child_count(); ++i)
    if (!is_const(e.child(i))) return false;
  return e.child_count() > 0;
}

Expr rewrite(const Expr& e, double tol) {
  if (e.kind() != Expr::Kind::Apply) return e;

  std::vector<Expr> kids;
  kids.reserve(e.child_count());
  for (int i = 0; i < e.child_count(); ++i) kids.push_back(rewrite(e.child(i), tol));
  Expr cur = Expr::apply(e.op(), kids, e.pow_exponent());

  if (all_children_const(cur)) {
    double v = eval(cur, EvalPoint{});
    if (std::isfinite(v)) return Expr::constant(v);
  }

  switch (cur.op()) {
    case Op::Identity:
      return cur.child(0);
    case Op::Add:
    case Op::Sub:
    case Op::Neg:
      return rebuild_sum(cur, tol);
    case Op::Mul:
    case Op::Div:
      return rebuild_product(cur, tol);
    case Op::PowInt: {
      int k = cur.pow_exponent();
      if (k == 0) return Expr::constant(1.0);
      if (k == 1) return cur.child(0);
      return cur;
    }
    default:
      return cur;
  }
}

// fixed pseudo-random probe points for verifying tolerance-based rewrites
EvalPoint probe_point(int i) {
  double x = -4.0 + 8.0 * i / 99.0;
  return EvalPoint{x, std::sin(1.3 * x) + 0.7, std::cos(0.7 * x) - 0.2,
                   0.8 * std::sin(2.1 * x + 0.5)};
}

bool verify_rewrite(const Expr& orig, const Expr& cand, double tol) {
  // a dropped term of coefficient <= tol can move small values by more than
  // tol*(1+|value at that point|), so the bound uses the expression's scale
  // over the probe set rather than each point alone
  double scale = 0.0;
  std::vector<double> vals(100);
  for (int i = 0; i < 100; ++i) {
    double a = eval(orig, probe_point(i));
    vals[i] = a;
    if (std::isfinite(a) && std::abs(a) <= 1e12)
      scale = std::max(scale, std::abs(a));
  }
  int checked = 0;
  for (int i = 0; i < 100; ++i) {
    double a = vals[i];
    if (!std::isfinite(a) || std::abs(a) > 1e12) continue;
    double b = eval(cand, probe_point(i));
    if (!std::isfinite(b)) return false;
    if (std::abs(a - b) > tol * (1.0 + scale)) return false;
    ++checked;
  }
  return checked > 0;
}

}  // namespace

Expr simplify(const Expr& e, double tol) {
  if (tol < 0.0 || !std::isfinite(tol))
    throw std::invalid_argument("simplify tolerance must be >= 0");
  Expr cand = rewrite(e, tol);
  if (tol == 0.0) return cand;
  if (verify_rewrite(e, cand, tol)) return cand;
  return rewrite(e, 0.0);
}

// ---------------------------------------------------------------------------
// printing

namespace {

// binding strength: + - (1), * / (2), unary minus (3), ^ (4), atoms (5)
int precedence(const Expr& e) {
  switch (e.kind()) {
    case Expr::Kind::Constant:
      return e.value() < 0.0 ? 3 : 5;
    case Expr::Kind::Variable:
      return 5;
    case Expr::Kind::Apply:
      break;
  }
  switch (e.op()) {
    case Op::Add:
    case Op::Sub:
      return 1;
    case Op::Mul:
    case Op::Div:
      return 2;
    case Op::Neg:
      return 3;
    case Op::PowInt:
      return 4;
    case Op::Identity:
      return precedence(e.child(0));
    default:
      return 5;
  }
}

void format_constant(std::string& out, double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
  out += buf;
}

void render(std::string& out, const Expr& e, int precision);

void render_paren(std::string& out, const Expr& e, int precision, bool parens) {
  if (parens) {
    out += '(';
    render(out, e, precision);
    out += ')';
  } else {
    render(out, e, precision);
  }
}

bool is_negative_const(const Expr& e) { return is_const(e) && e.value() < 0.0; }
bool is_neg_apply(const Expr& e) {
  return e.kind() == Expr::Kind::Apply && e.op() == Op::Neg;
}

void render(std::string& out, const Expr& e, int precision) {
  switch (e.kind()) {
    case Expr::Kind::Constant:
      format_constant(out, e.value(), precision);
      return;
    case Expr::Kind::Variable:
      switch (e.var()) {
        case Var::X: out += 'x'; return;
        case Var::Y: out += 'y'; return;
        case Var::DY: out += "y1"; return;
        case Var::D2Y: out += "y2"; return;
      }
      return;
    case Expr::Kind::Apply:
      break;
  }
  switch (e.op()) {
    case Op::Add:
    case Op::Sub: {
      const Expr& l = e.child(0);
      const Expr& r = e.child(1);
      bool minus = e.op() == Op::Sub;
      render_paren(out, l, precision, precedence(l) < 1);
      // fold a trailing negation into the operator: a + (-b) prints a - b
      if (is_negative_const(r)) {
        out += minus ? " + " : " - ";
        format_constant(out, -r.value(), precision);
        return;
      }
      if (is_neg_apply(r)) {
        out += minus ? " + " : " - ";
        render_paren(out, r.child(0), precision, precedence(r.child(0)) <= 1);
        return;
      }
      out += minus ? " - " : " + ";
      render_paren(out, r, precision, precedence(r) <= 1);
      return;
    }
    case Op::Mul:
    case Op::Div: {
      const Expr& l = e.child(0);
      const Expr& r = e.child(1);
      render_paren(out, l, precision, precedence(l) < 2);
      out += e.op() == Op::Mul ? '*' : '/';
      render_paren(out, r, precision, precedence(r) <= 2);
      return;
    }
    case Op::Neg: {
      const Expr& c = e.child(0);
      out += '-';
      render_paren(out, c, precision, precedence(c) <= 3);
      return;
    }
    case Op::PowInt: {
      const Expr& c = e.child(0);
      render_paren(out, c, precision, precedence(c) < 5);
      out += '^';
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%d", e.pow_exponent());
      out += buf;
      return;
    }
    case Op::Identity:
      render(out, e.child(0), precision);
      return;
    default: {
      out += op_name(e.op());
      out += '(';
      render(out, e.child(0), precision);
      out += ')';
      return;
    }
  }
}

std::string expr_key(const Expr& e) {
  std::string s;
  render(s, e, 12);
  return s;
}

}  // namespace

std::string to_string(const Expr& e, int precision) {
  if (precision < 1 || precision > 12)
    throw std::invalid_argument("precision must be in 1..12");
  std::string out;
  render(out, e, precision);
  return out;
}

// ---------------------------------------------------------------------------
// parsing

namespace {

struct Parser {
  std::string_view s;
  size_t pos = 0;

  void skip_ws() {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  }
  bool eof() const { return pos >= s.size(); }
  char peek() const { return pos < s.size() ? s[pos] : '\0'; }

  [[noreturn]] void fail(const std::string& msg, size_t at) {
    throw ParseError(msg + " at offset " + std::to_string(at), at);
  }

  bool accept(char c) {
    skip_ws();
    if (!eof() && s[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }

  void expect(char c) {
    skip_ws();
    if (eof() || s[pos] != c)
      fail(std::string("expected '") + c + "'", pos);
    ++pos;
  }

  Expr parse_expr() {
    Expr e = parse_term();
    for (;;) {
      skip_ws();
      if (accept('+'))
        e = e + parse_term();
      else if (accept('-'))
        e = e - parse_term();
      else
        return e;
    }
  }

  Expr parse_term() {
    Expr e = parse_unary();
    for (;;) {
      skip_ws();
      if (accept('*'))
        e = e * parse_unary();
      else if (accept('/'))
        e = e / parse_unary();
      else
        return e;
    }
  }

  Expr parse_unary() {
    skip_ws();
    if (accept('-')) return -parse_unary();
    return parse_power();
  }

  Expr parse_power() {
    Expr base = parse_atom();
    skip_ws();
    if (!accept('^')) return base;
    skip_ws();
    size_t at = pos;
    bool negative = accept('-');
    skip_ws();
    size_t digits = pos;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos == digits) fail("expected integer exponent", pos);
    if (pos < s.size() && (s[pos] == '.' || s[pos] == 'e' || s[pos] == 'E'))
      fail("exponent must be an integer", pos);
    long k = std::strtol(std::string(s.substr(digits, pos - digits)).c_str(),
                         nullptr, 10);
    if (negative) k = -k;
    if (k < -kMaxPowExponent || k > kMaxPowExponent)
      fail("exponent out of range", at);
    return pow_int(base, static_cast<int>(k));
  }

  Expr parse_atom() {
    skip_ws();
    if (eof()) fail("unexpected end of input", pos);
    char c = s[pos];
    if (c == '(') {
      ++pos;
      Expr e = parse_expr();
      expect(')');
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c))) return parse_ident();
    fail(std::string("unexpected character '") + c + "'", pos);
  }

  Expr parse_number() {
    size_t start = pos;
    while (pos < s.size() && (std::isdigit(static_cast<unsigned char>(s[pos])) ||
                              s[pos] == '.'))
      ++pos;
    if (pos < s.size() && (s[pos] == 'e' || s[pos] == 'E')) {
      size_t mark = pos++;
      if (pos < s.size() && (s[pos] == '+' || s[pos] == '-')) ++pos;
      if (pos >= s.size() || !std::isdigit(static_cast<unsigned char>(s[pos])))
        pos = mark;  // the e belongs to something else; let it fail naturally
      else
        while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
    }
    std::string text(s.substr(start, pos - start));
    char* end = nullptr;
    double v = std::strtod(text.c_str(), &end);
    if (end != text.c_str() + text.size() || !std::isfinite(v))
      fail("malformed number", start);
    return Expr::constant(v);
  }

  Expr parse_ident() {
    size_t start = pos;
    while (pos < s.size() && (std::isalnum(static_cast<unsigned char>(s[pos]))))
      ++pos;
    std::string_view name = s.substr(start, pos - start);
    if (name == "x") return Expr::variable(Var::X);
    if (name == "y") return Expr::variable(Var::Y);
    if (name == "y1") return Expr::variable(Var::DY);
    if (name == "y2") return Expr::variable(Var::D2Y);
    if (name == "pi") return Expr::constant(M_PI);

    Op op;
    if (name == "sin") op = Op::Sin;
    else if (name == "cos") op = Op::Cos;
    else if (name == "sqrt") op = Op::SqrtAbs;
    else if (name == "exp") op = Op::Exp;
    else if (name == "log") op = Op::LogAbs;
    else if (name == "abs") op = Op::Abs;
    else fail("unknown identifier '" + std::string(name) + "'", start);

    expect('(');
    Expr arg = parse_expr();
    expect(')');
    return Expr::apply(op, {arg});
  }
};

}  // namespace

Expr parse(std::string_view text) {
  Parser p{text};
  p.skip_ws();
  if (p.eof()) throw ParseError("empty expression", 0);
  Expr e = p.parse_expr();
  p.skip_ws();
  if (!p.eof()) p.fail("unexpected trailing input", p.pos);
  return e;
}

}  // namespace sfl
