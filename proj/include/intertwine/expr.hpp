#pragma once

// Small symbolic expression language for potentials, test functions and
// twist entries. Expressions are parsed into an immutable tree, differentiated
// symbolically (so exact derivatives of any order are available) and
// compiled to a flat postfix program for fast evaluation in inner loops.
//
// Grammar:
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := '-' unary | power
//   power   := primary ('^' unary)?
//   primary := number | name | name '(' expr ')' | '(' expr ')'
// Functions: sin cos tan exp log sqrt tanh sinh cosh. Constants: pi, e.

#include <cctype>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"

namespace intertwine::expr {

enum class Op {
  Const, Var, Add, Sub, Mul, Div, Neg, Pow,
  Sin, Cos, Tan, Exp, Log, Sqrt, Tanh, Sinh, Cosh
};

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
  Op op = Op::Const;
  double value = 0.0;
  int index = -1;
  NodePtr a, b;
};

inline bool is_const(const NodePtr& n) { return n->op == Op::Const; }
inline bool is_const(const NodePtr& n, double v) { return n->op == Op::Const && n->value == v; }

inline NodePtr constant(double v) {
  auto n = std::make_shared<Node>();
  n->op = Op::Const;
  n->value = v;
  return n;
}

inline NodePtr variable(int index) {
  auto n = std::make_shared<Node>();
  n->op = Op::Var;
  n->index = index;
  return n;
}

inline double apply_unary(Op op, double x) {
  switch (op) {
    case Op::Neg: return -x;
    case Op::Sin: return std::sin(x);
    case Op::Cos: return std::cos(x);
    case Op::Tan: return std::tan(x);
    case Op::Exp: return std::exp(x);
    case Op::Log: return std::log(x);
    case Op::Sqrt: return std::sqrt(x);
    case Op::Tanh: return std::tanh(x);
    case Op::Sinh: return std::sinh(x);
    case Op::Cosh: return std::cosh(x);
    default: return x;
  }
}

inline double ipow(double x, double p) {
  if (p == 2.0) return x * x;
  if (p == 3.0) return x * x * x;
  if (p == 4.0) {
    const double x2 = x * x;
    return x2 * x2;
  }
  if (p == 1.0) return x;
  if (p == 0.0) return 1.0;
  return std::pow(x, p);
}

inline NodePtr unary(Op op, NodePtr a) {
  if (is_const(a)) return constant(apply_unary(op, a->value));
  if (op == Op::Neg && a->op == Op::Neg) return a->a;
  auto n = std::make_shared<Node>();
  n->op = op;
  n->a = std::move(a);
  return n;
}

inline NodePtr binary(Op op, NodePtr a, NodePtr b) {
  if (is_const(a) && is_const(b)) {
    const double x = a->value, y = b->value;
    switch (op) {
      case Op::Add: return constant(x + y);
      case Op::Sub: return constant(x - y);
      case Op::Mul: return constant(x * y);
      case Op::Div: return constant(x / y);
      case Op::Pow: return constant(ipow(x, y));
      default: break;
    }
  }
  switch (op) {
    case Op::Add:
      if (is_const(a, 0.0)) return b;
      if (is_const(b, 0.0)) return a;
      break;
    case Op::Sub:
      if (is_const(b, 0.0)) return a;
      if (is_const(a, 0.0)) return unary(Op::Neg, b);
      break;
    case Op::Mul:
      if (is_const(a, 0.0) || is_const(b, 0.0)) return constant(0.0);
      if (is_const(a, 1.0)) return b;
      if (is_const(b, 1.0)) return a;
      if (is_const(a, -1.0)) return unary(Op::Neg, b);
      if (is_const(b, -1.0)) return unary(Op::Neg, a);
      break;
    case Op::Div:
      if (is_const(a, 0.0)) return constant(0.0);
      if (is_const(b, 1.0)) return a;
      break;
    case Op::Pow:
      if (is_const(b, 0.0)) return constant(1.0);
      if (is_const(b, 1.0)) return a;
      break;
    default: break;
  }
  auto n = std::make_shared<Node>();
  n->op = op;
  n->a = std::move(a);
  n->b = std::move(b);
  return n;
}

inline NodePtr operator+(NodePtr a, NodePtr b) { return binary(Op::Add, std::move(a), std::move(b)); }
inline NodePtr operator-(NodePtr a, NodePtr b) { return binary(Op::Sub, std::move(a), std::move(b)); }
inline NodePtr operator*(NodePtr a, NodePtr b) { return binary(Op::Mul, std::move(a), std::move(b)); }
inline NodePtr operator/(NodePtr a, NodePtr b) { return binary(Op::Div, std::move(a), std::move(b)); }
inline NodePtr operator-(NodePtr a) { return unary(Op::Neg, std::move(a)); }

inline NodePtr diff(const NodePtr& n, int var) {
  switch (n->op) {
    case Op::Const: return constant(0.0);
    case Op::Var: return constant(n->index == var ? 1.0 : 0.0);
    case Op::Add: return diff(n->a, var) + diff(n->b, var);
    case Op::Sub: return diff(n->a, var) - diff(n->b, var);
    case Op::Neg: return -diff(n->a, var);
    case Op::Mul: return diff(n->a, var) * n->b + n->a * diff(n->b, var);
    case Op::Div: {
      auto da = diff(n->a, var), db = diff(n->b, var);
      if (is_const(db, 0.0)) return da / n->b;
      return (da * n->b - n->a * db) / binary(Op::Pow, n->b, constant(2.0));
    }
    case Op::Pow: {
      auto da = diff(n->a, var);
      if (is_const(n->b)) {
        const double p = n->b->value;
        return constant(p) * binary(Op::Pow, n->a, constant(p - 1.0)) * da;
      }
      auto db = diff(n->b, var);
      return n * (db * unary(Op::Log, n->a) + n->b * da / n->a);
    }
    case Op::Sin: return unary(Op::Cos, n->a) * diff(n->a, var);
    case Op::Cos: return -(unary(Op::Sin, n->a) * diff(n->a, var));
    case Op::Tan: {
      auto c = unary(Op::Cos, n->a);
      return diff(n->a, var) / binary(Op::Pow, c, constant(2.0));
    }
    case Op::Exp: return n * diff(n->a, var);
    case Op::Log: return diff(n->a, var) / n->a;
    case Op::Sqrt: return diff(n->a, var) / (constant(2.0) * n);
    case Op::Tanh:
      return (constant(1.0) - binary(Op::Pow, n, constant(2.0))) * diff(n->a, var);
    case Op::Sinh: return unary(Op::Cosh, n->a) * diff(n->a, var);
    case Op::Cosh: return unary(Op::Sinh, n->a) * diff(n->a, var);
  }
  return constant(0.0);
}

inline NodePtr substitute(const NodePtr& n, int var, double value) {
  switch (n->op) {
    case Op::Const: return n;
    case Op::Var: return n->index == var ? constant(value) : n;
    default: break;
  }
  if (!n->b) return unary(n->op, substitute(n->a, var, value));
  return binary(n->op, substitute(n->a, var, value), substitute(n->b, var, value));
}

/// Names bound to variable slots. Coordinates occupy slots [0, n_coords),
/// parameters follow. Several aliases may map to one slot.
class SymbolTable {
 public:
  SymbolTable() = default;

  /// `coords[i]` lists the accepted names of coordinate i.
  SymbolTable(const std::vector<std::vector<std::string>>& coords,
              const std::vector<std::string>& params = {})
      : n_coords_(static_cast<int>(coords.size())), params_(params) {
    for (int i = 0; i < n_coords_; ++i)
      for (const auto& name : coords[static_cast<std::size_t>(i)]) slots_[name] = i;
    for (std::size_t p = 0; p < params.size(); ++p)
      slots_[params[p]] = n_coords_ + static_cast<int>(p);
  }

  std::optional<int> lookup(const std::string& name) const {
    auto it = slots_.find(name);
    if (it == slots_.end()) return std::nullopt;
    return it->second;
  }
  int n_coords() const { return n_coords_; }
  int n_params() const { return static_cast<int>(params_.size()); }
  const std::vector<std::string>& params() const { return params_; }

  std::string describe() const {
    std::ostringstream os;
    bool first = true;
    for (const auto& [name, slot] : slots_) {
      os << (first ? "" : ", ") << name;
      first = false;
    }
    return os.str();
  }

 private:
  int n_coords_ = 0;
  std::vector<std::string> params_;
  std::map<std::string, int> slots_;
};

class Parser {
 public:
  Parser(std::string_view text, const SymbolTable& symbols) : text_(text), symbols_(symbols) {}

  NodePtr parse() {
    auto n = parse_expr();
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected '" + std::string(1, text_[pos_]) + "'");
    return n;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError("expression \"" + std::string(text_) + "\" at column " +
                      std::to_string(pos_ + 1) + ": " + msg);
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  NodePtr parse_expr() {
    auto lhs = parse_term();
    for (;;) {
      if (accept('+')) lhs = lhs + parse_term();
      else if (accept('-')) lhs = lhs - parse_term();
      else return lhs;
    }
  }

  NodePtr parse_term() {
    auto lhs = parse_unary();
    for (;;) {
      if (accept('*')) lhs = lhs * parse_unary();
      else if (accept('/')) lhs = lhs / parse_unary();
      else return lhs;
    }
  }

  NodePtr parse_unary() {
    if (accept('-')) return -parse_unary();
    if (accept('+')) return parse_unary();
    return parse_power();
  }

  NodePtr parse_power() {
    auto base = parse_primary();
    if (accept('^')) return binary(Op::Pow, base, parse_unary());
    return base;
  }

  NodePtr parse_primary() {
    skip_ws();
    if (pos_ >= text_.size()) fail("unexpected end of input");
    const char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      auto n = parse_expr();
      if (!accept(')')) fail("expected ')'");
      return n;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      const std::size_t start = pos_;
      while (pos_ < text_.size() &&
             (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
        ++pos_;
      const std::string name(text_.substr(start, pos_ - start));
      skip_ws();
      if (pos_ < text_.size() && text_[pos_] == '(') {
        static const std::map<std::string, Op> functions = {
            {"sin", Op::Sin},   {"cos", Op::Cos},   {"tan", Op::Tan},
            {"exp", Op::Exp},   {"log", Op::Log},   {"sqrt", Op::Sqrt},
            {"tanh", Op::Tanh}, {"sinh", Op::Sinh}, {"cosh", Op::Cosh}};
        auto it = functions.find(name);
        if (it == functions.end()) fail("unknown function '" + name + "'");
        ++pos_;
        auto arg = parse_expr();
        if (!accept(')')) fail("expected ')' after argument of " + name);
        return unary(it->second, arg);
      }
      if (auto slot = symbols_.lookup(name)) return variable(*slot);
      if (name == "pi") return constant(std::numbers::pi);
      if (name == "e") return constant(std::numbers::e);
      fail("unknown symbol '" + name + "' (known: " + symbols_.describe() + ")");
    }
    fail("unexpected '" + std::string(1, c) + "'");
  }

  NodePtr parse_number() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.'))
      ++pos_;
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      std::size_t look = pos_ + 1;
      if (look < text_.size() && (text_[look] == '+' || text_[look] == '-')) ++look;
      if (look < text_.size() && std::isdigit(static_cast<unsigned char>(text_[look]))) {
        pos_ = look;
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      }
    }
    const std::string tok(text_.substr(start, pos_ - start));
    try {
      std::size_t used = 0;
      const double v = std::stod(tok, &used);
      if (used != tok.size()) fail("malformed number '" + tok + "'");
      return constant(v);
    } catch (const std::logic_error&) {
      fail("malformed number '" + tok + "'");
    }
  }

  std::string_view text_;
  const SymbolTable& symbols_;
  std::size_t pos_ = 0;
};

/// Postfix program compiled from a tree. Evaluation needs no allocation.
class Program {
 public:
  Program() = default;

  explicit Program(const NodePtr& root) {
    int depth = 0;
    emit(root, depth);
  }

  double eval(const double* coords, int n_coords, const double* params) const {
    double stack[kStack];
    int sp = 0;
    for (const auto& ins : code_) {
      switch (ins.op) {
        case Op::Const: stack[sp++] = ins.value; break;
        case Op::Var:
          stack[sp++] = ins.index < n_coords ? coords[ins.index] : params[ins.index - n_coords];
          break;
        case Op::Add: --sp; stack[sp - 1] += stack[sp]; break;
        case Op::Sub: --sp; stack[sp - 1] -= stack[sp]; break;
        case Op::Mul: --sp; stack[sp - 1] *= stack[sp]; break;
        case Op::Div: --sp; stack[sp - 1] /= stack[sp]; break;
        case Op::Pow: --sp; stack[sp - 1] = ipow(stack[sp - 1], stack[sp]); break;
        default: stack[sp - 1] = apply_unary(ins.op, stack[sp - 1]); break;
      }
    }
    return sp == 0 ? 0.0 : stack[0];
  }

  bool is_constant() const { return code_.size() == 1 && code_[0].op == Op::Const; }
  double constant_value() const { return code_.empty() ? 0.0 : code_[0].value; }

 private:
  static constexpr int kStack = 64;
  struct Instr {
    Op op;
    double value;
    int index;
  };

  void emit(const NodePtr& n, int& depth) {
    if (n->a) emit(n->a, depth);
    if (n->b) emit(n->b, depth);
    code_.push_back({n->op, n->value, n->index});
    if (n->op == Op::Const || n->op == Op::Var) ++depth;
    else if (n->b) --depth;
    if (depth > kStack) throw ConfigError("expression too deeply nested");
  }

  std::vector<Instr> code_;
};

inline std::string to_string(const NodePtr& n) {
  auto name = [](Op op) -> const char* {
    switch (op) {
      case Op::Sin: return "sin";
      case Op::Cos: return "cos";
      case Op::Tan: return "tan";
      case Op::Exp: return "exp";
      case Op::Log: return "log";
      case Op::Sqrt: return "sqrt";
      case Op::Tanh: return "tanh";
      case Op::Sinh: return "sinh";
      case Op::Cosh: return "cosh";
      default: return "?";
    }
  };
  std::ostringstream os;
  os.precision(17);
  switch (n->op) {
    case Op::Const: os << n->value; break;
    case Op::Var: os << "$" << n->index; break;
    case Op::Add: os << "(" << to_string(n->a) << " + " << to_string(n->b) << ")"; break;
    case Op::Sub: os << "(" << to_string(n->a) << " - " << to_string(n->b) << ")"; break;
    case Op::Mul: os << "(" << to_string(n->a) << " * " << to_string(n->b) << ")"; break;
    case Op::Div: os << "(" << to_string(n->a) << " / " << to_string(n->b) << ")"; break;
    case Op::Pow: os << "(" << to_string(n->a) << " ^ " << to_string(n->b) << ")"; break;
    case Op::Neg: os << "(-" << to_string(n->a) << ")"; break;
    default: os << name(n->op) << "(" << to_string(n->a) << ")"; break;
  }
  return os.str();
}

}  // namespace intertwine::expr

namespace intertwine {

/// A smooth scalar field given by an expression in chart coordinates, with
/// exact gradient and Hessian programs. Third derivatives are compiled on
/// demand. Parameter values are bound per instance; the compiled derivative
/// programs are shared between instances that differ only in parameters.
class SmoothFunction {
 public:
  SmoothFunction() : SmoothFunction(expr::constant(0.0), 1, "0") {}

  SmoothFunction(const std::string& text, const expr::SymbolTable& symbols,
                 std::vector<double> params = {})
      : SmoothFunction(expr::Parser(text, symbols).parse(), symbols.n_coords(), text) {
    if (static_cast<int>(params.size()) != symbols.n_params())
      throw ConfigError("expression \"" + text + "\" expects " +
                        std::to_string(symbols.n_params()) + " parameters");
    params_ = std::move(params);
  }

  SmoothFunction(expr::NodePtr root, int n_coords, std::string source = {})
      : data_(std::make_shared<Data>()) {
    data_->source = source.empty() ? expr::to_string(root) : std::move(source);
    data_->n = n_coords;
    data_->root = root;
    data_->value = expr::Program(root);
    data_->grad_nodes.resize(static_cast<std::size_t>(n_coords));
    for (int i = 0; i < n_coords; ++i) {
      auto d = expr::diff(root, i);
      data_->grad_nodes[static_cast<std::size_t>(i)] = d;
      data_->grad.emplace_back(d);
    }
    for (int i = 0; i < n_coords; ++i)
      for (int j = 0; j < n_coords; ++j) {
        auto d = j >= i ? expr::diff(data_->grad_nodes[static_cast<std::size_t>(i)], j)
                        : expr::NodePtr{};
        data_->hess_nodes.push_back(d);
      }
    for (int i = 0; i < n_coords; ++i)
      for (int j = 0; j < n_coords; ++j) {
        const auto& d = data_->hess_nodes[static_cast<std::size_t>(std::min(i, j) * n_coords + std::max(i, j))];
        data_->hess.emplace_back(d);
      }
  }

  static SmoothFunction constant(double c, int n_coords) {
    return SmoothFunction(expr::constant(c), n_coords);
  }

  SmoothFunction with_params(std::vector<double> params) const {
    SmoothFunction f = *this;
    f.params_ = std::move(params);
    return f;
  }

  int n_coords() const { return data_->n; }
  const std::string& source() const { return data_->source; }
  const std::vector<double>& params() const { return params_; }
  const expr::NodePtr& root() const { return data_->root; }
  bool is_constant() const { return data_->value.is_constant(); }

  double operator()(const double* x) const { return data_->value.eval(x, data_->n, params_.data()); }
  template <class V>
  double value(const V& x) const { return (*this)(x.data()); }

  double partial(const double* x, int i) const {
    return data_->grad[static_cast<std::size_t>(i)].eval(x, data_->n, params_.data());
  }
  double second(const double* x, int i, int j) const {
    return data_->hess[static_cast<std::size_t>(i * data_->n + j)].eval(x, data_->n, params_.data());
  }

  template <class V>
  V gradient(const V& x) const {
    V g(data_->n);
    for (int i = 0; i < data_->n; ++i) g(i) = partial(x.data(), i);
    return g;
  }

  template <class M, class V>
  M hessian(const V& x) const {
    M h(data_->n, data_->n);
    for (int i = 0; i < data_->n; ++i)
      for (int j = i; j < data_->n; ++j) h(i, j) = h(j, i) = second(x.data(), i, j);
    return h;
  }

  /// ∂_i∂_j∂_k f, exact.
  double third(const double* x, int i, int j, int k) const {
    std::lock_guard lock(data_->third_mutex);
    auto& cache = data_->third;
    const int key = (i * data_->n + j) * data_->n + k;
    auto it = cache.find(key);
    if (it == cache.end()) {
      auto node = expr::diff(
          data_->hess_nodes[static_cast<std::size_t>(std::min(i, j) * data_->n + std::max(i, j))], k);
      it = cache.emplace(key, expr::Program(node)).first;
    }
    return it->second.eval(x, data_->n, params_.data());
  }

  /// Exact partial derivative as a new function.
  SmoothFunction derivative(int i) const {
    SmoothFunction f(data_->grad_nodes[static_cast<std::size_t>(i)], data_->n);
    f.params_ = params_;
    return f;
  }

 private:
  struct Data {
    std::string source;
    int n = 0;
    expr::NodePtr root;
    expr::Program value;
    std::vector<expr::NodePtr> grad_nodes;
    std::vector<expr::Program> grad;
    std::vector<expr::NodePtr> hess_nodes;
    std::vector<expr::Program> hess;
    std::mutex third_mutex;
    std::map<int, expr::Program> third;
  };
  std::shared_ptr<Data> data_;
  std::vector<double> params_;
};

}  // namespace intertwine
