#pragma once

// Numbers that may carry derivatives: a plain double or a real series.

#include <cmath>
#include <numbers>
#include <string>
#include <variant>

#include "mad/tpsa.hpp"

namespace mad {

class Value {
 public:
  Value(double v = 0) : v_(v) {}
  Value(RTpsa t) : v_(std::move(t)) {}

  bool is_tpsa() const { return std::holds_alternative<RTpsa>(v_); }
  double num() const { return is_tpsa() ? std::get<RTpsa>(v_).get0() : std::get<double>(v_); }
  const RTpsa& tpsa() const { return std::get<RTpsa>(v_); }
  DescPtr desc() const { return is_tpsa() ? tpsa().desc() : nullptr; }
  // as a series over d (scalars become constants)
  RTpsa as_tpsa(const DescPtr& d) const {
    if (is_tpsa()) {
      check_same(d, tpsa().desc(), "value");
      return tpsa();
    }
    return RTpsa(d, std::get<double>(v_));
  }
  // drop derivatives
  Value scalar() const { return Value(num()); }

  friend Value operator-(const Value& a) {
    if (a.is_tpsa()) return Value(-a.tpsa());
    return Value(-a.num());
  }
#define MAD_VALUE_OP(op)                                                            \
  friend Value operator op(const Value& a, const Value& b) {                        \
    if (!a.is_tpsa() && !b.is_tpsa()) return Value(a.num() op b.num());             \
    if (a.is_tpsa() && b.is_tpsa()) return Value(a.tpsa() op b.tpsa());             \
    if (a.is_tpsa()) return Value(a.tpsa() op b.num());                             \
    return Value(a.num() op b.tpsa());                                              \
  }
  MAD_VALUE_OP(+)
  MAD_VALUE_OP(-)
  MAD_VALUE_OP(*)
  MAD_VALUE_OP(/)
#undef MAD_VALUE_OP
  Value& operator+=(const Value& o) { return *this = *this + o; }
  Value& operator-=(const Value& o) { return *this = *this - o; }
  Value& operator*=(const Value& o) { return *this = *this * o; }

  bool operator==(double d) const { return !is_tpsa() && num() == d; }

 private:
  std::variant<double, RTpsa> v_;
};

inline Value pow(const Value& a, const Value& b) {
  if (!a.is_tpsa() && !b.is_tpsa()) return std::pow(a.num(), b.num());
  if (a.is_tpsa() && !b.is_tpsa()) {
    const double e = b.num();
    if (e == std::round(e) && std::abs(e) < 64) {
      const int n = static_cast<int>(e);
      return n >= 0 ? Value(pow(a.tpsa(), n)) : Value(inv(pow(a.tpsa(), -n)));
    }
    return Value(exp(log(a.tpsa()) * e));
  }
  if (!a.is_tpsa()) return Value(exp(b.tpsa() * std::log(a.num())));
  return Value(exp(log(a.tpsa()) * b.tpsa()));
}

// Named elementary function applied to a value; false if unknown.
inline bool apply_function(const std::string& f, const Value& x, Value& out) {
  auto both = [&](double (*d)(double), RTpsa (*t)(const RTpsa&)) {
    out = x.is_tpsa() ? Value(t(x.tpsa())) : Value(d(x.num()));
  };
  if (f == "sqrt") both(std::sqrt, [](const RTpsa& a) { return sqrt(a); });
  else if (f == "exp") both(std::exp, [](const RTpsa& a) { return exp(a); });
  else if (f == "log") both(std::log, [](const RTpsa& a) { return log(a); });
  else if (f == "sin") both(std::sin, [](const RTpsa& a) { return sin(a); });
  else if (f == "cos") both(std::cos, [](const RTpsa& a) { return cos(a); });
  else if (f == "tan") both(std::tan, [](const RTpsa& a) { return sin(a) / cos(a); });
  else if (f == "asin") both(std::asin, [](const RTpsa& a) { return asin(a); });
  else if (f == "acos") both(std::acos, [](const RTpsa& a) { return std::numbers::pi / 2 - asin(a); });
  else if (f == "atan") both(std::atan, [](const RTpsa& a) { return atan(a); });
  else if (f == "sinh") both(std::sinh, [](const RTpsa& a) { return (exp(a) - exp(-a)) * 0.5; });
  else if (f == "cosh") both(std::cosh, [](const RTpsa& a) { return (exp(a) + exp(-a)) * 0.5; });
  else if (f == "tanh") both(std::tanh, [](const RTpsa& a) {
    auto e2 = exp(a * 2.0);
    return (e2 - 1.0) / (e2 + 1.0);
  });
  else if (f == "abs") out = x.num() < 0 ? -x : x;
  else if (f == "floor") out = std::floor(x.num());
  else if (f == "ceil") out = std::ceil(x.num());
  else if (f == "round") out = std::round(x.num());
  else if (f == "sign") out = x.num() > 0 ? 1.0 : x.num() < 0 ? -1.0 : 0.0;
  else return false;
  return true;
}

}  // namespace mad
