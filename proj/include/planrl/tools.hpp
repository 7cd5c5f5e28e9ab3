#pragma once

// Deterministic built-in tools used by the simulated tool agent.

#include <cctype>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace planrl {

using ToolArgs = std::map<std::string, std::string>;
using ToolFn = std::function<std::string(const ToolArgs&)>;

/// Exact rational over int64 with overflow detection.
class Rational {
 public:
  Rational() = default;
  Rational(std::int64_t num, std::int64_t den = 1) : num_(num), den_(den) {  // NOLINT
    if (den_ == 0) throw std::domain_error("division by zero");
    normalize();
  }

  std::int64_t num() const { return num_; }
  std::int64_t den() const { return den_; }

  friend Rational operator+(const Rational& a, const Rational& b) {
    return Rational(add(mul(a.num_, b.den_), mul(b.num_, a.den_)), mul(a.den_, b.den_));
  }
  friend Rational operator-(const Rational& a, const Rational& b) { return a + Rational(neg(b.num_), b.den_); }
  friend Rational operator*(const Rational& a, const Rational& b) {
    return Rational(mul(a.num_, b.num_), mul(a.den_, b.den_));
  }
  friend Rational operator/(const Rational& a, const Rational& b) {
    if (b.num_ == 0) throw std::domain_error("division by zero");
    return Rational(mul(a.num_, b.den_), mul(a.den_, b.num_));
  }
  bool operator==(const Rational&) const = default;

  std::string str() const {
    return den_ == 1 ? std::to_string(num_) : std::to_string(num_) + "/" + std::to_string(den_);
  }

 private:
  static std::int64_t mul(std::int64_t a, std::int64_t b) {
    std::int64_t r;
    if (__builtin_mul_overflow(a, b, &r)) throw std::overflow_error("integer overflow");
    return r;
  }
  static std::int64_t add(std::int64_t a, std::int64_t b) {
    std::int64_t r;
    if (__builtin_add_overflow(a, b, &r)) throw std::overflow_error("integer overflow");
    return r;
  }
  static std::int64_t neg(std::int64_t a) { return mul(a, -1); }

  void normalize() {
    if (den_ < 0) {
      num_ = neg(num_);
      den_ = neg(den_);
    }
    const std::int64_t g = std::gcd(num_, den_);
    if (g > 1) {
      num_ /= g;
      den_ /= g;
    }
  }

  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

namespace detail {

// expr := term (('+'|'-') term)* ; term := unary (('*'|'/') unary)* ;
// unary := '-' unary | number | '(' expr ')'
class ArithmeticParser {
 public:
  explicit ArithmeticParser(std::string_view src) : src_(src) {}

  Rational parse() {
    Rational v = expr();
    skip_ws();
    if (pos_ != src_.size()) throw std::invalid_argument("unexpected character in expression");
    return v;
  }

 private:
  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }
  bool eat(char c) {
    skip_ws();
    if (pos_ < src_.size() && src_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  Rational expr() {
    Rational v = term();
    for (;;) {
      if (eat('+')) v = v + term();
      else if (eat('-')) v = v - term();
      else return v;
    }
  }
  Rational term() {
    Rational v = unary();
    for (;;) {
      if (eat('*')) v = v * unary();
      else if (eat('/')) v = v / unary();
      else return v;
    }
  }
  Rational unary() {
    if (++depth_ > 64) throw std::invalid_argument("expression nested too deeply");
    Rational v;
    if (eat('-')) {
      v = Rational(0) - unary();
    } else if (eat('(')) {
      v = expr();
      if (!eat(')')) throw std::invalid_argument("missing ')'");
    } else {
      v = number();
    }
    --depth_;
    return v;
  }
  Rational number() {
    skip_ws();
    const std::size_t start = pos_;
    std::int64_t n = 0;
    while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
      if (__builtin_mul_overflow(n, 10, &n) || __builtin_add_overflow(n, src_[pos_] - '0', &n))
        throw std::overflow_error("integer overflow");
      ++pos_;
    }
    if (pos_ == start) throw std::invalid_argument("expected a number");
    return Rational(n);
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int depth_ = 0;
};

}  // namespace detail

/// Evaluates integer arithmetic over + - * / with parentheses exactly.
/// Returns "n" or "n/d" in lowest terms, or "error: <reason>".
inline std::string calculator(std::string_view expression) {
  try {
    return detail::ArithmeticParser(expression).parse().str();
  } catch (const std::exception& e) {
    return std::string("error: ") + e.what();
  }
}

class ToolRegistry {
 public:
  void add(std::string name, ToolFn fn) { tools_[std::move(name)] = std::move(fn); }

  bool contains(const std::string& name) const { return tools_.contains(name); }

  /// Dispatches on args["tool"]. Unknown or missing tools yield an error string.
  std::string invoke(const ToolArgs& args) const {
    const auto name = args.find("tool");
    if (name == args.end()) return "error: no tool named";
    const auto fn = tools_.find(name->second);
    if (fn == tools_.end()) return "error: unknown tool " + name->second;
    return fn->second(args);
  }

  /// calculator(expr) and lookup(key) over the given table.
  static ToolRegistry builtin(std::map<std::string, std::string> lookup_table = {}) {
    ToolRegistry r;
    r.add("calculator", [](const ToolArgs& a) {
      const auto e = a.find("expr");
      return e == a.end() ? std::string("error: missing expr") : calculator(e->second);
    });
    r.add("lookup", [table = std::move(lookup_table)](const ToolArgs& a) {
      const auto k = a.find("key");
      if (k == a.end()) return std::string("error: missing key");
      const auto v = table.find(k->second);
      return v == table.end() ? std::string("error: no entry for ") + k->second : v->second;
    });
    return r;
  }

 private:
  std::map<std::string, ToolFn> tools_;
};

}  // namespace planrl
