#include "ahat/radical.hpp"

#include <boost/multiprecision/gmp.hpp>
#include <algorithm>
#include <limits>
#include <stdexcept>
#include <unordered_map>

namespace ahat {

namespace {

constexpr std::int64_t kRadicandLimit = std::numeric_limits<std::int64_t>::max();

// n = square * squarefree; memoized trial division (radicands stay desk-scale)
std::pair<std::int64_t, std::int64_t> squarefree_split(std::int64_t n) {
  static std::unordered_map<std::int64_t, std::pair<std::int64_t, std::int64_t>> memo;
  auto it = memo.find(n);
  if (it != memo.end()) return it->second;
  std::int64_t square_root = 1, squarefree = 1, m = n;
  for (std::int64_t p = 2; p * p <= m; p += (p == 2 ? 1 : 2)) {
    if (m % p != 0) continue;
    int e = 0;
    while (m % p == 0) {
      m /= p;
      ++e;
    }
    for (int i = 0; i < e / 2; ++i) square_root *= p;
    if (e & 1) squarefree *= p;
  }
  if (m > 1) squarefree *= m;
  auto result = std::make_pair(square_root, squarefree);
  if (memo.size() < (1u << 20)) memo.emplace(n, result);
  return result;
}

std::int64_t to_int64_radicand(const Int& n) {
  if (n < 0 || n > kRadicandLimit)
    throw std::domain_error("radical: radicand out of range: " + n.str());
  return static_cast<std::int64_t>(n);
}

std::int64_t checked_mul(std::int64_t a, std::int64_t b) {
  std::int64_t r;
  if (__builtin_mul_overflow(a, b, &r))
    throw std::domain_error("radical: radicand product overflow");
  return r;
}

std::int64_t gcd64(std::int64_t a, std::int64_t b) {
  while (b) {
    std::int64_t t = a % b;
    a = b;
    b = t;
  }
  return a;
}

}  // namespace

radical_sum::radical_sum(const Rat& q) {
  if (q != 0) terms_.emplace_back(1, q);
}

bool radical_sum::is_rational() const {
  return terms_.empty() || (terms_.size() == 1 && terms_[0].first == 1);
}

Rat radical_sum::rational_value() const {
  if (terms_.empty()) return Rat(0);
  if (terms_.size() == 1 && terms_[0].first == 1) return terms_[0].second;
  throw std::logic_error("radical: rational_value on irrational sum");
}

radical_sum radical_sum::root_term(const Rat& coeff, const Int& radicand) {
  if (radicand < 0) throw std::domain_error("radical: negative radicand");
  if (coeff == 0 || radicand == 0) return radical_sum();
  auto [sq, sf] = squarefree_split(to_int64_radicand(radicand));
  radical_sum r;
  r.terms_.emplace_back(sf, coeff * Int(sq));
  return r;
}

radical_sum radical_sum::sqrt_rational(const Rat& q) {
  if (q < 0) throw std::domain_error("radical: sqrt of negative rational");
  if (q == 0) return radical_sum();
  // sqrt(p/d) = sqrt(p*d)/d
  Int pd = num(q) * den(q);
  auto [sq, sf] = squarefree_split(to_int64_radicand(pd));
  radical_sum r;
  r.terms_.emplace_back(sf, Rat(Int(sq), den(q)));
  return r;
}

void radical_sum::append_merged(std::int64_t squarefree_rad, const Rat& coeff) {
  if (coeff == 0) return;
  auto it = std::lower_bound(
      terms_.begin(), terms_.end(), squarefree_rad,
      [](const term& t, std::int64_t r) { return t.first < r; });
  if (it != terms_.end() && it->first == squarefree_rad) {
    it->second += coeff;
    if (it->second == 0) terms_.erase(it);
  } else {
    terms_.emplace(it, squarefree_rad, coeff);
  }
}

radical_sum radical_sum::operator-() const {
  radical_sum r = *this;
  for (auto& t : r.terms_) t.second = -t.second;
  return r;
}

radical_sum& radical_sum::operator+=(const radical_sum& o) {
  if (o.terms_.empty()) return *this;
  if (terms_.empty()) {
    terms_ = o.terms_;
    return *this;
  }
  std::vector<term> merged;
  merged.reserve(terms_.size() + o.terms_.size());
  auto a = terms_.cbegin();
  auto b = o.terms_.cbegin();
  while (a != terms_.cend() && b != o.terms_.cend()) {
    if (a->first < b->first) {
      merged.push_back(*a++);
    } else if (b->first < a->first) {
      merged.push_back(*b++);
    } else {
      Rat c = a->second + b->second;
      if (c != 0) merged.emplace_back(a->first, c);
      ++a;
      ++b;
    }
  }
  merged.insert(merged.end(), a, terms_.cend());
  merged.insert(merged.end(), b, o.terms_.cend());
  terms_ = std::move(merged);
  return *this;
}

radical_sum& radical_sum::operator-=(const radical_sum& o) { return *this += -o; }

radical_sum operator*(const radical_sum& a, const radical_sum& b) {
  radical_sum r;
  for (const auto& [ra, ca] : a.terms_) {
    for (const auto& [rb, cb] : b.terms_) {
      // sqrt(ra)*sqrt(rb) = g*sqrt((ra/g)*(rb/g)) with g = gcd; result radicand squarefree
      std::int64_t g = gcd64(ra, rb);
      std::int64_t rad = checked_mul(ra / g, rb / g);
      r.append_merged(rad, ca * cb * Int(g));
    }
  }
  return r;
}

radical_sum radical_sum::div_rat(const Rat& q) const {
  if (q == 0) throw std::domain_error("radical: division by zero");
  radical_sum r = *this;
  for (auto& t : r.terms_) t.second /= q;
  return r;
}

radical_sum radical_sum::div_root(const radical_sum& d) const {
  if (d.terms_.size() != 1)
    throw std::domain_error("radical: divisor must be a single term");
  const auto& [rad, coeff] = d.terms_[0];
  if (rad == 1) return div_rat(coeff);
  // x / (c*sqrt(r)) = x * sqrt(r) / (c*r)
  radical_sum unit;
  unit.terms_.emplace_back(rad, Rat(1) / (coeff * Int(rad)));
  return *this * unit;
}

int radical_sum::sign() const {
  if (terms_.empty()) return 0;
  int first_sign = terms_[0].second > 0 ? 1 : -1;
  bool uniform = true;
  for (const auto& t : terms_) {
    int s = t.second > 0 ? 1 : -1;
    if (s != first_sign) {
      uniform = false;
      break;
    }
  }
  if (uniform) return first_sign;
  if (terms_.size() == 2) {
    // opposite signs: compare c1^2*r1 vs c2^2*r2 exactly; distinct squarefree
    // radicands force inequality
    const auto& [r1, c1] = terms_[0];
    const auto& [r2, c2] = terms_[1];
    Rat m1 = c1 * c1 * Int(r1), m2 = c2 * c2 * Int(r2);
    if (m1 == m2) throw std::logic_error("radical: equal magnitudes across distinct radicands");
    return m1 > m2 ? first_sign : -first_sign;
  }
  // dyadic interval refinement; a canonical nonempty sum is nonzero, so this resolves
  for (unsigned f = 64; f <= 16384; f *= 2) {
    Int scale = Int(1) << f;
    Rat lo(0), hi(0);
    for (const auto& [rad, c] : terms_) {
      Int s = boost::multiprecision::sqrt(Int(rad) << (2 * f));  // floor(sqrt(rad)*2^f)
      Rat lo_root(s, scale), hi_root(s + 1, scale);
      if (c > 0) {
        lo += c * lo_root;
        hi += c * hi_root;
      } else {
        lo += c * hi_root;
        hi += c * lo_root;
      }
    }
    if (lo > 0) return 1;
    if (hi < 0) return -1;
  }
  throw std::logic_error("radical: sign refinement failed to resolve");
}

int radical_sum::compare(const radical_sum& a, const radical_sum& b) {
  if (a == b) return 0;
  return (a - b).sign();
}

std::string radical_sum::str() const {
  if (terms_.empty()) return "0";
  std::string out;
  bool first = true;
  for (const auto& [rad, c] : terms_) {
    Rat a = c < 0 ? Rat(-c) : c;
    std::string body;
    if (rad == 1) {
      body = rat_str(a);
    } else if (a == 1) {
      body = "sqrt(" + std::to_string(rad) + ")";
    } else {
      body = rat_str(a) + "*sqrt(" + std::to_string(rad) + ")";
    }
    if (first) {
      out = (c < 0 ? "-" : "") + body;
      first = false;
    } else {
      out += (c < 0 ? " - " : " + ") + body;
    }
  }
  return out;
}

}  // namespace ahat
