#include "sdelab/expression.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>

#include "sdelab/errors.hpp"

namespace sdelab {

namespace {

constexpr std::array<const char*, 7> kFunctions = {"sin", "cos", "tan", "exp", "log", "sqrt", "abs"};

double call(int id, double v) {
  switch (id) {
    case 0: return std::sin(v);
    case 1: return std::cos(v);
    case 2: return std::tan(v);
    case 3: return std::exp(v);
    case 4: return std::log(v);
    case 5: return std::sqrt(v);
    default: return std::abs(v);
  }
}

// expr   := term (('+'|'-') term)*
// term   := unary (('*'|'/') unary)*
// unary  := '-' unary | '+' unary | power
// power  := atom ('^' unary)?
// atom   := number | name | name '(' expr ')' | '(' expr ')'
class Parser {
 public:
  Parser(const std::string& s, const VariableMap& vars, std::vector<Expression::Op>& out)
      : s_(s), vars_(vars), out_(out) {}

  void parse() {
    expr();
    skip();
    if (pos_ != s_.size()) fail("unexpected '" + std::string(1, s_[pos_]) + "'");
  }

 private:
  using Op = Expression::Op;

  [[noreturn]] void fail(const std::string& what) const {
    std::ostringstream os;
    os << "expression \"" << s_ << "\": " << what << " at position " << pos_;
    throw ConfigError(os.str());
  }

  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expr() {
    term();
    for (;;) {
      if (accept('+')) {
        term();
        out_.push_back({Op::add});
      } else if (accept('-')) {
        term();
        out_.push_back({Op::sub});
      } else {
        return;
      }
    }
  }

  void term() {
    unary();
    for (;;) {
      if (accept('*')) {
        unary();
        out_.push_back({Op::mul});
      } else if (accept('/')) {
        unary();
        out_.push_back({Op::div});
      } else {
        return;
      }
    }
  }

  void unary() {
    if (++nest_ > 64) fail("nested too deeply");
    if (accept('-')) {
      unary();
      out_.push_back({Op::neg});
    } else if (accept('+')) {
      unary();
    } else {
      power();
    }
    --nest_;
  }

  void power() {
    atom();
    if (accept('^')) {
      unary();
      out_.push_back({Op::pow});
    }
  }

  void atom() {
    skip();
    if (pos_ >= s_.size()) fail("unexpected end");
    const char c = s_[pos_];
    if (c == '(') {
      ++pos_;
      expr();
      if (!accept(')')) fail("missing ')'");
      return;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      double v = 0.0;
      const char* begin = s_.data() + pos_;
      auto [ptr, ec] = std::from_chars(begin, s_.data() + s_.size(), v);
      if (ec != std::errc()) fail("bad number");
      pos_ += static_cast<std::size_t>(ptr - begin);
      out_.push_back({Op::number, v});
      return;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      const std::size_t start = pos_;
      while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) ++pos_;
      const std::string name = s_.substr(start, pos_ - start);
      for (std::size_t f = 0; f < kFunctions.size(); ++f) {
        if (name == kFunctions[f]) {
          if (!accept('(')) fail("function '" + name + "' needs '('");
          expr();
          if (!accept(')')) fail("missing ')'");
          out_.push_back({Op::call, 0.0, static_cast<int>(f)});
          return;
        }
      }
      for (std::size_t v = 0; v < vars_.size(); ++v) {
        if (name == vars_[v].first) {
          out_.push_back({Op::variable, 0.0, vars_[v].second});
          return;
        }
      }
      if (name == "pi") {
        out_.push_back({Op::number, std::numbers::pi});
        return;
      }
      if (name == "e") {
        out_.push_back({Op::number, std::numbers::e});
        return;
      }
      pos_ = start;
      fail("unknown name '" + name + "'");
    }
    fail("unexpected '" + std::string(1, c) + "'");
  }

  const std::string& s_;
  const VariableMap& vars_;
  std::vector<Op>& out_;
  std::size_t pos_ = 0;
  int nest_ = 0;
};

}  // namespace

Expression::Expression(const std::string& source, const VariableMap& variables) : source_(source) {
  Parser(source_, variables, program_).parse();
  int depth = 0;
  for (const Op& op : program_) {
    if (op.kind == Op::number || op.kind == Op::variable) {
      if (++depth > 64) throw ConfigError("expression \"" + source_ + "\" is nested too deeply");
    } else if (op.kind != Op::neg && op.kind != Op::call) {
      --depth;
    }
  }
}

bool Expression::is_constant() const {
  for (const auto& op : program_) {
    if (op.kind == Op::variable) return false;
  }
  return true;
}

double Expression::operator()(const double* values) const {
  std::array<double, 64> stack{};
  std::size_t top = 0;
  for (const Op& op : program_) {
    switch (op.kind) {
      case Op::number: stack[top++] = op.value; break;
      case Op::variable: stack[top++] = values[op.index]; break;
      case Op::neg: stack[top - 1] = -stack[top - 1]; break;
      case Op::call: stack[top - 1] = call(op.index, stack[top - 1]); break;
      default: {
        const double r = stack[--top];
        double& l = stack[top - 1];
        switch (op.kind) {
          case Op::add: l += r; break;
          case Op::sub: l -= r; break;
          case Op::mul: l *= r; break;
          case Op::div: l /= r; break;
          default: l = std::pow(l, r); break;
        }
      }
    }
  }
  return stack[0];
}

VariableMap state_variables(Index dim) {
  VariableMap v;
  for (Index i = 0; i < dim; ++i) v.emplace_back("x" + std::to_string(i + 1), static_cast<int>(i));
  if (dim == 1) v.emplace_back("x", 0);
  return v;
}

}  // namespace sdelab
