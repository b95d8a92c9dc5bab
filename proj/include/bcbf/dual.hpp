#pragma once

#include <cmath>
#include <type_traits>

#include <Eigen/Core>

namespace bcbf {

// Forward-mode dual number carrying a single directional derivative.
// The value type may itself be a Dual, which gives second directional
// derivatives by nesting.
template <typename T>
struct Dual {
  T value{};
  T deriv{};

  constexpr Dual() = default;
  constexpr Dual(T v, T d) : value(v), deriv(d) {}
  template <typename U, typename = std::enable_if_t<std::is_arithmetic_v<U>>>
  constexpr Dual(U v) : value(static_cast<T>(v)), deriv(0) {}  // NOLINT(google-explicit-constructor)

  constexpr Dual& operator+=(const Dual& o) { value += o.value; deriv += o.deriv; return *this; }
  constexpr Dual& operator-=(const Dual& o) { value -= o.value; deriv -= o.deriv; return *this; }
  constexpr Dual& operator*=(const Dual& o) {
    deriv = deriv * o.value + value * o.deriv;
    value *= o.value;
    return *this;
  }
  constexpr Dual& operator/=(const Dual& o) {
    deriv = (deriv * o.value - value * o.deriv) / (o.value * o.value);
    value /= o.value;
    return *this;
  }
};

template <typename T> constexpr Dual<T> operator+(Dual<T> a, const Dual<T>& b) { return a += b; }
template <typename T> constexpr Dual<T> operator-(Dual<T> a, const Dual<T>& b) { return a -= b; }
template <typename T> constexpr Dual<T> operator*(Dual<T> a, const Dual<T>& b) { return a *= b; }
template <typename T> constexpr Dual<T> operator/(Dual<T> a, const Dual<T>& b) { return a /= b; }
template <typename T> constexpr Dual<T> operator-(const Dual<T>& a) { return {-a.value, -a.deriv}; }
template <typename T> constexpr Dual<T> operator+(const Dual<T>& a) { return a; }

template <typename T> constexpr Dual<T> operator+(Dual<T> a, double b) { a.value += b; return a; }
template <typename T> constexpr Dual<T> operator+(double a, Dual<T> b) { b.value += a; return b; }
template <typename T> constexpr Dual<T> operator-(Dual<T> a, double b) { a.value -= b; return a; }
template <typename T> constexpr Dual<T> operator-(double a, const Dual<T>& b) { return {a - b.value, -b.deriv}; }
template <typename T> constexpr Dual<T> operator*(const Dual<T>& a, double b) { return {a.value * b, a.deriv * b}; }
template <typename T> constexpr Dual<T> operator*(double a, const Dual<T>& b) { return {a * b.value, a * b.deriv}; }
template <typename T> constexpr Dual<T> operator/(const Dual<T>& a, double b) { return {a.value / b, a.deriv / b}; }
template <typename T> constexpr Dual<T> operator/(double a, const Dual<T>& b) {
  return {a / b.value, -a * b.deriv / (b.value * b.value)};
}

template <typename T> constexpr bool operator==(const Dual<T>& a, const Dual<T>& b) { return a.value == b.value; }
template <typename T> constexpr bool operator!=(const Dual<T>& a, const Dual<T>& b) { return a.value != b.value; }
template <typename T> constexpr bool operator<(const Dual<T>& a, const Dual<T>& b) { return a.value < b.value; }
template <typename T> constexpr bool operator>(const Dual<T>& a, const Dual<T>& b) { return a.value > b.value; }
template <typename T> constexpr bool operator<=(const Dual<T>& a, const Dual<T>& b) { return a.value <= b.value; }
template <typename T> constexpr bool operator>=(const Dual<T>& a, const Dual<T>& b) { return a.value >= b.value; }

template <typename T>
Dual<T> sqrt(const Dual<T>& a) {
  using std::sqrt;
  const T s = sqrt(a.value);
  return {s, a.deriv / (2.0 * s)};
}
template <typename T>
Dual<T> sin(const Dual<T>& a) {
  using std::cos;
  using std::sin;
  return {sin(a.value), a.deriv * cos(a.value)};
}
template <typename T>
Dual<T> cos(const Dual<T>& a) {
  using std::cos;
  using std::sin;
  return {cos(a.value), -a.deriv * sin(a.value)};
}
template <typename T>
Dual<T> exp(const Dual<T>& a) {
  using std::exp;
  const T e = exp(a.value);
  return {e, a.deriv * e};
}
template <typename T>
Dual<T> log(const Dual<T>& a) {
  using std::log;
  return {log(a.value), a.deriv / a.value};
}
template <typename T>
Dual<T> abs(const Dual<T>& a) {
  return a.value < T(0) ? -a : a;
}

/// Strips every derivative layer.
inline double primal(double x) { return x; }
template <typename T>
double primal(const Dual<T>& x) { return primal(x.value); }

/// Seeds a value/direction pair at the outermost layer.
template <typename T>
constexpr Dual<T> make_dual(T value, T direction) { return {value, direction}; }

using Dual1 = Dual<double>;
using Dual2 = Dual<Dual<double>>;

}  // namespace bcbf

namespace Eigen {

template <typename T>
struct NumTraits<bcbf::Dual<T>> : NumTraits<double> {
  using Real = bcbf::Dual<T>;
  using NonInteger = bcbf::Dual<T>;
  using Nested = bcbf::Dual<T>;
  using Literal = bcbf::Dual<T>;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 2 * NumTraits<T>::ReadCost,
    AddCost = 2 * NumTraits<T>::AddCost,
    MulCost = 3 * NumTraits<T>::MulCost
  };
  static inline Real epsilon() { return Real(NumTraits<double>::epsilon()); }
  static inline Real dummy_precision() { return Real(NumTraits<double>::dummy_precision()); }
  static inline Real highest() { return Real(NumTraits<double>::highest()); }
  static inline Real lowest() { return Real(NumTraits<double>::lowest()); }
  static inline int digits10() { return NumTraits<double>::digits10(); }
};

template <typename T, typename BinaryOp>
struct ScalarBinaryOpTraits<bcbf::Dual<T>, double, BinaryOp> {
  using ReturnType = bcbf::Dual<T>;
};
template <typename T, typename BinaryOp>
struct ScalarBinaryOpTraits<double, bcbf::Dual<T>, BinaryOp> {
  using ReturnType = bcbf::Dual<T>;
};

}  // namespace Eigen
