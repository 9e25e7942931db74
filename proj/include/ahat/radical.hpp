#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ahat/rational.hpp"

namespace ahat {

// Exact element of the ring Q[sqrt(r) : r squarefree].
// Canonical form: finite sum c_r * sqrt(r) over distinct squarefree radicands r >= 1,
// sorted ascending, all coefficients nonzero; r == 1 carries the rational part.
// Equality of canonical forms is structural equality.
class radical_sum {
 public:
  using term = std::pair<std::int64_t, Rat>;

  radical_sum() = default;
  radical_sum(const Rat& q);
  radical_sum(long v) : radical_sum(Rat(v)) {}
  radical_sum(int v) : radical_sum(Rat(v)) {}

  // coeff * sqrt(radicand); radicand >= 0, canonicalized via squarefree factorization
  static radical_sum root_term(const Rat& coeff, const Int& radicand);
  // principal square root of a nonnegative rational
  static radical_sum sqrt_rational(const Rat& q);

  bool is_zero() const { return terms_.empty(); }
  bool is_rational() const;
  Rat rational_value() const;  // requires is_rational()
  // pure: 0, a rational, or a single term c*sqrt(r)
  bool is_pure() const { return terms_.size() <= 1; }

  int sign() const;
  static int compare(const radical_sum& a, const radical_sum& b);

  radical_sum operator-() const;
  radical_sum& operator+=(const radical_sum& o);
  radical_sum& operator-=(const radical_sum& o);
  friend radical_sum operator+(radical_sum a, const radical_sum& b) { return a += b; }
  friend radical_sum operator-(radical_sum a, const radical_sum& b) { return a -= b; }
  friend radical_sum operator*(const radical_sum& a, const radical_sum& b);
  radical_sum& operator*=(const radical_sum& o) { return *this = *this * o; }

  radical_sum div_rat(const Rat& q) const;            // q != 0
  radical_sum div_root(const radical_sum& d) const;   // d a single nonzero term c*sqrt(r)

  bool operator==(const radical_sum& o) const { return terms_ == o.terms_; }
  bool operator!=(const radical_sum& o) const { return !(*this == o); }

  const std::vector<term>& terms() const { return terms_; }
  std::size_t term_count() const { return terms_.size(); }

  std::string str() const;

 private:
  std::vector<term> terms_;
  void append_merged(std::int64_t squarefree_rad, const Rat& coeff);
  friend struct radical_sum_access;
};

}  // namespace ahat
