#pragma once

#include <boost/multiprecision/gmp.hpp>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace ahat {

using Int = boost::multiprecision::mpz_int;
using Rat = boost::multiprecision::mpq_rational;

inline Int num(const Rat& q) { return boost::multiprecision::numerator(q); }
inline Int den(const Rat& q) { return boost::multiprecision::denominator(q); }

// floor division, total except b == 0
inline Int floor_div(const Int& a, const Int& b) {
  if (b == 0) throw std::domain_error("floor_div: division by zero");
  Int q = a / b;
  Int r = a - q * b;
  if (r != 0 && ((r < 0) != (b < 0))) --q;
  return q;
}

inline Int floor_mod(const Int& a, const Int& b) { return a - floor_div(a, b) * b; }

inline Int rat_floor(const Rat& q) { return floor_div(num(q), den(q)); }

inline bool is_integer(const Rat& q) { return den(q) == 1; }

inline Int pow_int(Int base, unsigned e) {
  Int r = 1;
  while (e) {
    if (e & 1) r *= base;
    base *= base;
    e >>= 1;
  }
  return r;
}

// "p" or "p/q"; q > 0 after normalization
inline std::string rat_str(const Rat& q) {
  std::string s = num(q).str();
  if (den(q) != 1) s += "/" + den(q).str();
  return s;
}

inline Rat parse_rat(const std::string& s) {
  auto slash = s.find('/');
  try {
    if (slash == std::string::npos) return Rat(Int(s));
    Int p(s.substr(0, slash)), q(s.substr(slash + 1));
    if (q == 0) throw std::domain_error("parse_rat: zero denominator");
    return Rat(p, q);
  } catch (const std::domain_error&) {
    throw;
  } catch (const std::exception&) {
    throw std::domain_error("parse_rat: bad rational '" + s + "'");
  }
}

}  // namespace ahat
