#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sdelab/types.hpp"

namespace sdelab {

// Variable names and the state index each one reads.
using VariableMap = std::vector<std::pair<std::string, int>>;

// Restricted arithmetic: numbers, named variables, pi, e, + - * / ^, unary
// minus, parentheses and sin cos tan exp log sqrt abs. Compiled once to a
// stack program; evaluation is reentrant.
class Expression {
 public:
  // Throws ConfigError with the position of the first problem.
  Expression(const std::string& source, const VariableMap& variables);

  double operator()(const double* values) const;
  double operator()(const StateVector& x) const { return (*this)(x.data()); }

  const std::string& source() const { return source_; }
  bool is_constant() const;

  struct Op {
    enum Kind { number, variable, add, sub, mul, div, pow, neg, call } kind;
    double value = 0.0;
    int index = 0;  // variable index or function id
  };

 private:
  std::string source_;
  std::vector<Op> program_;
};

// Variable names for a state of dimension dim: x1..xn, plus x when dim = 1.
VariableMap state_variables(Index dim);

}  // namespace sdelab
