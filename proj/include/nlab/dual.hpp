#pragma once

#include <cmath>
#include <complex>
#include <type_traits>

namespace nlab {

/// Forward-mode dual number a + b·ε with ε² = 0.
///
/// T may itself be a Dual (nested duals give mixed second derivatives) or
/// std::complex<double> (holomorphic derivatives of complex-valued maps).
template <class T>
struct Dual {
  using value_type = T;

  T v{};
  T d{};

  constexpr Dual() = default;
  constexpr Dual(T value) : v(value), d() {}  // NOLINT: implicit lift
  template <class U>
    requires(std::is_arithmetic_v<U> && !std::is_same_v<T, U>)
  constexpr Dual(U value) : v(T(value)), d() {}  // NOLINT: implicit lift
  constexpr Dual(T value, T deriv) : v(value), d(deriv) {}

  friend Dual operator+(const Dual& a, const Dual& b) { return {a.v + b.v, a.d + b.d}; }
  friend Dual operator-(const Dual& a, const Dual& b) { return {a.v - b.v, a.d - b.d}; }
  friend Dual operator-(const Dual& a) { return {-a.v, -a.d}; }
  friend Dual operator*(const Dual& a, const Dual& b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
  friend Dual operator/(const Dual& a, const Dual& b) {
    T inv = T(1.0) / b.v;
    return {a.v * inv, (a.d - a.v * inv * b.d) * inv};
  }
  Dual& operator+=(const Dual& o) { return *this = *this + o; }
  Dual& operator-=(const Dual& o) { return *this = *this - o; }
  Dual& operator*=(const Dual& o) { return *this = *this * o; }
  Dual& operator/=(const Dual& o) { return *this = *this / o; }

  friend Dual exp(const Dual& a) {
    using std::exp;
    T e = exp(a.v);
    return {e, e * a.d};
  }
  friend Dual log(const Dual& a) {
    using std::log;
    return {log(a.v), a.d / a.v};
  }
  friend Dual sqrt(const Dual& a) {
    using std::sqrt;
    T s = sqrt(a.v);
    return {s, a.d / (T(2.0) * s)};
  }
  friend Dual sin(const Dual& a) {
    using std::cos;
    using std::sin;
    return {sin(a.v), cos(a.v) * a.d};
  }
  friend Dual cos(const Dual& a) {
    using std::cos;
    using std::sin;
    return {cos(a.v), -sin(a.v) * a.d};
  }
};

using Dual1 = Dual<double>;
/// Real second-order jet: outer and inner seeds give value, two first and one mixed partial.
using RJet = Dual<Dual<double>>;
/// Complex second-order jet.
using CJet = Dual<Dual<std::complex<double>>>;

template <class T>
struct is_dual : std::false_type {};
template <class T>
struct is_dual<Dual<T>> : std::true_type {};

/// Integer power by repeated multiplication; exact for dual and complex scalars.
template <class S>
S ipow(const S& base, int n) {
  S result = S(1.0);
  for (int i = 0; i < n; ++i) result = result * base;
  return result;
}

inline CJet to_complex(const RJet& r) {
  using C = std::complex<double>;
  return CJet(Dual<C>(C(r.v.v), C(r.v.d)), Dual<C>(C(r.d.v), C(r.d.d)));
}

/// Seed a real second-order jet: value x, outer tangent `outer`, inner tangent `inner`.
inline RJet seed_jet(double x, double outer, double inner) {
  return RJet(Dual1(x, inner), Dual1(outer, 0.0));
}

}  // namespace nlab
