#pragma once

// Generalized truncated power series algebra.
//
// A Descriptor fixes the algebra: nv variables, np parameters, a maximum
// total order mo and a cap po on the total order carried by the parameter
// slots. Monomials are stored densely in graded order (all monomials of
// total degree d precede those of degree d+1); within a degree the exponent
// vectors are sorted in descending lexicographic order, variables first and
// parameters last. The unit monomials therefore occupy indices 1..nv+np in
// declaration order.
//
// Ranking is computed slot by slot from per-slot completion counts, so the
// cost of mono_index is O(nv+np) and no intermediate ever exceeds the number
// of admissible monomials (no Kronecker-style exponential index range).

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "mad/error.hpp"

namespace mad {

using Monomial = std::vector<int>;
using index_t = std::size_t;

namespace detail {

inline std::uint64_t sat_add(std::uint64_t a, std::uint64_t b) {
  const std::uint64_t r = a + b;
  return r < a ? std::numeric_limits<std::uint64_t>::max() : r;
}

inline std::uint64_t sat_mul(std::uint64_t a, std::uint64_t b) {
  if (a == 0 || b == 0) return 0;
  if (a > std::numeric_limits<std::uint64_t>::max() / b) return std::numeric_limits<std::uint64_t>::max();
  return a * b;
}

// Number of ways to write r as an ordered sum of k non-negative integers.
inline std::uint64_t compositions(int k, int r) {
  if (k == 0) return r == 0 ? 1 : 0;
  // binom(r + k - 1, r), computed incrementally (exact for small r)
  std::uint64_t v = 1;
  for (int i = 1; i <= r; ++i) {
    const std::uint64_t num = static_cast<std::uint64_t>(k - 1 + i);
    // v * num is divisible by i at every step
    const std::uint64_t g = std::gcd(v, static_cast<std::uint64_t>(i));
    v = sat_mul(v / g, num / (static_cast<std::uint64_t>(i) / g));
  }
  return v;
}

}  // namespace detail

inline const std::vector<std::string>& phase_space_names() {
  static const std::vector<std::string> names{"x", "px", "y", "py", "t", "pt"};
  return names;
}

class Descriptor;
using DescPtr = std::shared_ptr<const Descriptor>;

class Descriptor {
 public:
  // Above this many monomials the exponent table is not materialized.
  static constexpr std::uint64_t kMaxTabulated = 4'000'000;
  // Above this many valid (i, j) pairs the product table is not built.
  static constexpr std::uint64_t kMaxPairs = 30'000'000;

  static DescPtr make(int nv, int mo, int np = 0, int po = -1, std::vector<std::string> pn = {},
                      std::vector<std::string> vn = {}) {
    return std::shared_ptr<const Descriptor>(new Descriptor(nv, mo, np, po, std::move(pn), std::move(vn)));
  }

  int nv() const { return nv_; }
  int mo() const { return mo_; }
  int np() const { return np_; }
  int po() const { return po_; }
  int nn() const { return nv_ + np_; }

  const std::vector<std::string>& var_names() const { return vn_; }
  const std::vector<std::string>& param_names() const { return pn_; }
  const std::string& slot_name(int slot) const { return slot < nv_ ? vn_.at(slot) : pn_.at(slot - nv_); }

  // Slot of a variable or parameter name, -1 if unknown.
  int slot_of(const std::string& name) const {
    for (int i = 0; i < nv_; ++i)
      if (vn_[i] == name) return i;
    for (int i = 0; i < np_; ++i)
      if (pn_[i] == name) return nv_ + i;
    return -1;
  }

  // Number of admissible monomials of total degree <= order.
  std::uint64_t size(int order) const {
    if (order < 0 || order > mo_)
      throw DescriptorError("size: order " + std::to_string(order) + " outside [0, " + std::to_string(mo_) + "]");
    return off_[order + 1];
  }
  std::uint64_t size() const { return off_[mo_ + 1]; }

  // Index of the first monomial of degree d (d in [0, mo+1]).
  std::uint64_t order_offset(int d) const { return off_.at(d); }

  bool tabulated() const { return !exps_.empty() || size() == 0; }

  void check_admissible(std::span<const int> m) const {
    if (static_cast<int>(m.size()) != nn())
      throw DescriptorError("monomial has " + std::to_string(m.size()) + " exponents, descriptor expects " +
                            std::to_string(nn()));
    int d = 0, dp = 0;
    for (int i = 0; i < nn(); ++i) {
      if (m[i] < 0) throw DescriptorError("monomial has negative exponent in slot " + std::to_string(i));
      d += m[i];
      if (i >= nv_) dp += m[i];
    }
    if (d > mo_)
      throw DescriptorError("monomial total order " + std::to_string(d) + " exceeds mo=" + std::to_string(mo_));
    if (dp > po_)
      throw DescriptorError("monomial parameter order " + std::to_string(dp) + " exceeds po=" + std::to_string(po_));
  }

  std::uint64_t mono_index(std::span<const int> m) const {
    check_admissible(m);
    int r = 0;
    for (int v : m) r += v;
    std::uint64_t idx = off_[r];
    for (int i = 0; i < nn() && r > 0; ++i) {
      const int e = m[i];
      // monomials sharing the prefix and with a larger exponent in slot i
      // come first: they leave u = r - v < r - e for the remaining slots
      if (r - e - 1 >= 0) idx += prefix(i + 1, r - e - 1);
      r -= e;
    }
    return idx;
  }

  Monomial index_mono(std::uint64_t idx) const {
    if (idx >= size())
      throw DescriptorError("index " + std::to_string(idx) + " out of range [0, " + std::to_string(size()) + ")");
    int d = 0;
    while (off_[d + 1] <= idx) ++d;
    std::uint64_t rank = idx - off_[d];
    Monomial m(nn(), 0);
    int r = d;
    for (int i = 0; i < nn() && r > 0; ++i) {
      for (int v = r; v >= 0; --v) {
        const std::uint64_t c = count(i + 1, r - v);
        if (rank < c) {
          m[i] = v;
          r -= v;
          break;
        }
        rank -= c;
      }
    }
    return m;
  }

  // Tabulated exponents of monomial idx.
  std::span<const std::uint8_t> exps(index_t idx) const {
    return {exps_.data() + idx * static_cast<std::size_t>(nn()), static_cast<std::size_t>(nn())};
  }
  int order_of(index_t idx) const {
    if (tabulated()) return ord_[idx];
    int d = 0;
    while (off_[d + 1] <= idx) ++d;
    return d;
  }
  int param_order_of(index_t idx) const {
    if (tabulated()) return pord_[idx];
    const Monomial m = index_mono(idx);
    int dp = 0;
    for (int i = nv_; i < nn(); ++i) dp += m[i];
    return dp;
  }

  // Index of the monomial idx divided by slot s (exponent lowered by one),
  // or npos when that exponent is zero.
  static constexpr index_t npos = static_cast<index_t>(-1);
  index_t lower(int s, index_t idx) const {
    build_lower();
    return lower_[static_cast<std::size_t>(s) * size() + idx];
  }
  // Index of the monomial idx multiplied by slot s, or npos if inadmissible.
  index_t raise(int s, index_t idx) const {
    build_lower();
    return raise_[static_cast<std::size_t>(s) * size() + idx];
  }

  struct ProductTable {
    std::vector<std::uint32_t> start;  // size()+1 row offsets
    std::vector<std::uint32_t> j;      // partner index, ascending within a row
    std::vector<std::uint32_t> k;      // product index
  };
  // Null when the descriptor is too large for a precomputed table.
  const ProductTable* product_table() const {
    std::call_once(prod_once_, [this] { build_products(); });
    return prod_ ? prod_.get() : nullptr;
  }

 private:
  Descriptor(int nv, int mo, int np, int po, std::vector<std::string> pn, std::vector<std::string> vn)
      : nv_(nv), mo_(mo), np_(np), po_(po) {
    if (nv < 1) throw DescriptorError("descriptor: nv must be >= 1 (got " + std::to_string(nv) + ")");
    if (mo < 0) throw DescriptorError("descriptor: mo must be >= 0 (got " + std::to_string(mo) + ")");
    if (mo > 63) throw DescriptorError("descriptor: mo must be <= 63 (got " + std::to_string(mo) + ")");
    if (np < 0) throw DescriptorError("descriptor: np must be >= 0 (got " + std::to_string(np) + ")");
    if (po_ < 0) po_ = np > 0 ? std::min(1, mo) : 0;
    if (po_ > mo) throw DescriptorError("descriptor: po=" + std::to_string(po_) + " exceeds mo=" + std::to_string(mo));
    if (np == 0) po_ = 0;

    if (vn.empty()) {
      if (nv <= 6) {
        vn.assign(phase_space_names().begin(), phase_space_names().begin() + nv);
      } else {
        for (int i = 0; i < nv; ++i) vn.push_back("x" + std::to_string(i + 1));
      }
    }
    if (static_cast<int>(vn.size()) != nv) throw DescriptorError("descriptor: vn must list nv names");
    if (pn.empty())
      for (int i = 0; i < np; ++i) pn.push_back("k" + std::to_string(i + 1));
    if (static_cast<int>(pn.size()) != np)
      throw DescriptorError("descriptor: pn has " + std::to_string(pn.size()) + " names, np=" + std::to_string(np));
    vn_ = std::move(vn);
    pn_ = std::move(pn);
    std::vector<std::string> all = vn_;
    all.insert(all.end(), pn_.begin(), pn_.end());
    for (std::size_t i = 0; i < all.size(); ++i)
      for (std::size_t j = i + 1; j < all.size(); ++j)
        if (all[i] == all[j]) throw DescriptorError("descriptor: duplicate name '" + all[i] + "'");

    const int n = nn();
    cnt_.assign(static_cast<std::size_t>(n + 1) * (mo_ + 1), 0);
    pre_.assign(cnt_.size(), 0);
    for (int i = 0; i <= n; ++i) {
      for (int r = 0; r <= mo_; ++r) {
        std::uint64_t c = 0;
        if (i > nv_) {
          c = detail::compositions(n - i, r);
        } else {
          for (int dp = 0; dp <= std::min(r, po_); ++dp)
            c = detail::sat_add(c, detail::sat_mul(detail::compositions(nv_ - i, r - dp),
                                                   detail::compositions(np_, dp)));
        }
        cnt_[i * (mo_ + 1) + r] = c;
        pre_[i * (mo_ + 1) + r] = detail::sat_add(r > 0 ? pre_[i * (mo_ + 1) + r - 1] : 0, c);
      }
    }
    off_.assign(mo_ + 2, 0);
    for (int d = 0; d <= mo_; ++d) off_[d + 1] = detail::sat_add(off_[d], count(0, d));
    if (off_[mo_ + 1] == std::numeric_limits<std::uint64_t>::max())
      throw DescriptorError("descriptor: monomial count overflows 64 bits");

    if (size() <= kMaxTabulated) enumerate();
  }

  std::uint64_t count(int i, int r) const {
    if (r < 0) return 0;
    if (i >= nn()) return r == 0 ? 1 : 0;
    return cnt_[i * (mo_ + 1) + r];
  }
  std::uint64_t prefix(int i, int r) const {
    if (r < 0) return 0;
    if (i >= nn()) return 1;
    return pre_[i * (mo_ + 1) + r];
  }

  void enumerate() {
    const int n = nn();
    const std::size_t sz = size();
    exps_.assign(sz * n, 0);
    ord_.assign(sz, 0);
    pord_.assign(sz, 0);
    std::vector<int> cur(n, 0);
    std::size_t at = 0;
    for (int d = 0; d <= mo_; ++d) gen(0, d, cur, at, d);
  }

  void gen(int i, int r, std::vector<int>& cur, std::size_t& at, int d) {
    const int n = nn();
    if (i == n) {
      if (r != 0) return;
      int dp = 0;
      for (int s = 0; s < n; ++s) {
        exps_[at * n + s] = static_cast<std::uint8_t>(cur[s]);
        if (s >= nv_) dp += cur[s];
      }
      ord_[at] = static_cast<std::uint8_t>(d);
      pord_[at] = static_cast<std::uint8_t>(dp);
      ++at;
      return;
    }
    for (int v = r; v >= 0; --v) {
      if (count(i + 1, r - v) == 0) continue;
      cur[i] = v;
      gen(i + 1, r - v, cur, at, d);
    }
    cur[i] = 0;
  }

  void build_lower() const {
    std::call_once(lower_once_, [this] {
      if (!tabulated()) throw DescriptorError("descriptor too large for derivative tables");
      const int n = nn();
      const std::size_t sz = size();
      lower_.assign(static_cast<std::size_t>(n) * sz, npos);
      raise_.assign(static_cast<std::size_t>(n) * sz, npos);
      std::vector<int> m(n);
      for (std::size_t idx = 0; idx < sz; ++idx) {
        auto e = exps(idx);
        for (int s = 0; s < n; ++s) {
          for (int q = 0; q < n; ++q) m[q] = e[q];
          if (m[s] > 0) {
            m[s] -= 1;
            lower_[s * sz + idx] = mono_index(m);
            m[s] += 1;
          }
          const int d = ord_[idx] + 1;
          const int dp = pord_[idx] + (s >= nv_ ? 1 : 0);
          if (d <= mo_ && dp <= po_) {
            m[s] += 1;
            raise_[s * sz + idx] = mono_index(m);
          }
        }
      }
    });
  }

  void build_products() const {
    if (!tabulated()) return;
    const std::size_t sz = size();
    std::uint64_t pairs = 0;
    for (std::size_t i = 0; i < sz; ++i) pairs += off_[mo_ - ord_[i] + 1];
    if (pairs > kMaxPairs || sz >= std::numeric_limits<std::uint32_t>::max()) return;
    auto t = std::make_unique<ProductTable>();
    t->start.reserve(sz + 1);
    t->j.reserve(pairs);
    t->k.reserve(pairs);
    const int n = nn();
    std::vector<int> m(n);
    for (std::size_t i = 0; i < sz; ++i) {
      t->start.push_back(static_cast<std::uint32_t>(t->j.size()));
      const std::size_t jend = off_[mo_ - ord_[i] + 1];
      auto ei = exps(i);
      for (std::size_t j = 0; j < jend; ++j) {
        if (pord_[i] + pord_[j] > po_) continue;
        auto ej = exps(j);
        for (int q = 0; q < n; ++q) m[q] = ei[q] + ej[q];
        t->j.push_back(static_cast<std::uint32_t>(j));
        t->k.push_back(static_cast<std::uint32_t>(mono_index(m)));
      }
    }
    t->start.push_back(static_cast<std::uint32_t>(t->j.size()));
    prod_ = std::move(t);
  }

  int nv_, mo_, np_, po_;
  std::vector<std::string> vn_, pn_;
  std::vector<std::uint64_t> cnt_, pre_, off_;
  std::vector<std::uint8_t> exps_, ord_, pord_;

  mutable std::once_flag lower_once_, prod_once_;
  mutable std::vector<index_t> lower_, raise_;
  mutable std::unique_ptr<ProductTable> prod_;
};

inline void check_same(const DescPtr& a, const DescPtr& b, const char* op) {
  if (a.get() != b.get()) throw DescriptorError(std::string(op) + ": operands use different descriptors");
}

template <class T>
struct is_complex : std::false_type {};
template <class T>
struct is_complex<std::complex<T>> : std::true_type {};

template <class T>
class Tpsa {
 public:
  using value_type = T;

  Tpsa() = default;
  explicit Tpsa(DescPtr d, T constant = T(0)) : d_(std::move(d)), c_(d_->size(), T(0)) { c_[0] = constant; }

  // value + unit monomial of the given slot
  static Tpsa variable(const DescPtr& d, int slot, T value = T(0)) {
    if (slot < 0 || slot >= d->nn()) throw DescriptorError("variable: invalid slot " + std::to_string(slot));
    Tpsa t(d, value);
    // a parameter at po = 0 keeps only its value
    if (d->mo() >= 1 && (slot < d->nv() || d->po() >= 1)) {
      t.c_[slot + 1] = T(1);
      t.hi_ = 1;
    }
    return t;
  }

  const DescPtr& desc() const { return d_; }
  bool valid() const { return static_cast<bool>(d_); }
  std::size_t size() const { return c_.size(); }
  int hi() const { return hi_; }

  std::span<const T> coefs() const { return c_; }
  std::span<T> coefs() { return c_; }
  const T& operator[](index_t i) const { return c_[i]; }
  // Writable access; callers must keep hi() an upper bound (use touch()).
  T& operator[](index_t i) { return c_[i]; }
  void touch(int order) { hi_ = std::max(hi_, order); }
  void touch_all() { hi_ = d_->mo(); }

  T get0() const { return c_[0]; }
  void set0(T v) { c_[0] = v; }

  T getm(std::span<const int> m) const { return c_[d_->mono_index(m)]; }
  T getm(const Monomial& m) const { return getm(std::span<const int>(m)); }
  void setm(std::span<const int> m, T v) {
    const auto idx = d_->mono_index(m);
    c_[idx] = v;
    if (v != T(0)) touch(d_->order_of(idx));
  }
  void setm(const Monomial& m, T v) { setm(std::span<const int>(m), v); }

  // Shrink hi() to the highest order holding a nonzero coefficient.
  void trim() {
    while (hi_ > 0) {
      const auto b = d_->order_offset(hi_), e = d_->order_offset(hi_ + 1);
      bool nz = false;
      for (auto i = b; i < e && !nz; ++i) nz = c_[i] != T(0);
      if (nz) break;
      --hi_;
    }
  }

  bool is_zero() const {
    for (std::size_t i = 0; i < end(); ++i)
      if (c_[i] != T(0)) return false;
    return true;
  }

  // One past the last index that may hold a nonzero coefficient.
  std::size_t end() const { return d_->order_offset(hi_ + 1); }

  void clear() {
    std::fill(c_.begin(), c_.end(), T(0));
    hi_ = 0;
  }

  // Drop every term of total order > order.
  Tpsa truncated(int order) const {
    Tpsa r = *this;
    if (order < 0) {
      r.clear();
      return r;
    }
    if (order < r.hi_) {
      std::fill(r.c_.begin() + d_->order_offset(order + 1), r.c_.end(), T(0));
      r.hi_ = order;
    }
    return r;
  }

  // Nilpotent part (constant removed).
  Tpsa nilpotent() const {
    Tpsa r = *this;
    r.c_[0] = T(0);
    return r;
  }

  Tpsa& operator+=(const Tpsa& o) {
    check_same(d_, o.d_, "add");
    for (std::size_t i = 0, e = o.end(); i < e; ++i) c_[i] += o.c_[i];
    hi_ = std::max(hi_, o.hi_);
    return *this;
  }
  Tpsa& operator-=(const Tpsa& o) {
    check_same(d_, o.d_, "sub");
    for (std::size_t i = 0, e = o.end(); i < e; ++i) c_[i] -= o.c_[i];
    hi_ = std::max(hi_, o.hi_);
    return *this;
  }
  Tpsa& operator*=(T s) {
    for (std::size_t i = 0, e = end(); i < e; ++i) c_[i] *= s;
    return *this;
  }
  Tpsa& operator/=(T s) { return *this *= (T(1) / s); }
  Tpsa& operator+=(T s) {
    c_[0] += s;
    return *this;
  }
  Tpsa& operator-=(T s) {
    c_[0] -= s;
    return *this;
  }
  Tpsa& operator*=(const Tpsa& o) { return *this = mul(*this, o); }
  Tpsa& operator/=(const Tpsa& o) { return *this = mul(*this, inv(o)); }

  // this += s * o
  void axpy(T s, const Tpsa& o) {
    check_same(d_, o.d_, "axpy");
    for (std::size_t i = 0, e = o.end(); i < e; ++i) c_[i] += s * o.c_[i];
    hi_ = std::max(hi_, o.hi_);
  }

  friend Tpsa operator-(Tpsa a) {
    for (auto& v : a.c_) v = -v;
    return a;
  }

  friend Tpsa mul(const Tpsa& a, const Tpsa& b) {
    check_same(a.d_, b.d_, "mul");
    Tpsa r(a.d_);
    mul_acc(a, b, r, T(1));
    return r;
  }

  // r += s * a * b (r must not alias a or b)
  friend void mul_acc(const Tpsa& a, const Tpsa& b, Tpsa& r, T s) {
    const Descriptor& d = *a.d_;
    const int mo = d.mo();
    const auto* tab = d.product_table();
    const std::size_t aend = a.end(), bend = b.end();
    if (tab) {
      for (std::size_t i = 0; i < aend; ++i) {
        const T ai = a.c_[i];
        if (ai == T(0)) continue;
        const T sai = s * ai;
        const std::uint32_t* pj = tab->j.data() + tab->start[i];
        const std::uint32_t* pk = tab->k.data() + tab->start[i];
        const std::uint32_t n = tab->start[i + 1] - tab->start[i];
        for (std::uint32_t q = 0; q < n; ++q) {
          if (pj[q] >= bend) break;
          const T bj = b.c_[pj[q]];
          if (bj != T(0)) r.c_[pk[q]] += sai * bj;
        }
      }
    } else {
      std::vector<int> m(d.nn());
      for (std::size_t i = 0; i < aend; ++i) {
        if (a.c_[i] == T(0)) continue;
        const Monomial mi = d.index_mono(i);
        int oi = 0, pi = 0;
        for (int q = 0; q < d.nn(); ++q) {
          oi += mi[q];
          if (q >= d.nv()) pi += mi[q];
        }
        const std::size_t jend = std::min<std::size_t>(bend, d.order_offset(mo - oi + 1));
        for (std::size_t j = 0; j < jend; ++j) {
          if (b.c_[j] == T(0)) continue;
          const Monomial mj = d.index_mono(j);
          int pj = 0;
          for (int q = d.nv(); q < d.nn(); ++q) pj += mj[q];
          if (pi + pj > d.po()) continue;
          for (int q = 0; q < d.nn(); ++q) m[q] = mi[q] + mj[q];
          r.c_[d.mono_index(m)] += s * a.c_[i] * b.c_[j];
        }
      }
    }
    r.hi_ = std::min(mo, std::max(r.hi_, a.hi_ + b.hi_));
  }

  friend Tpsa operator+(Tpsa a, const Tpsa& b) { return a += b; }
  friend Tpsa operator-(Tpsa a, const Tpsa& b) { return a -= b; }
  friend Tpsa operator*(const Tpsa& a, const Tpsa& b) { return mul(a, b); }
  friend Tpsa operator/(const Tpsa& a, const Tpsa& b) { return mul(a, inv(b)); }

  friend Tpsa operator+(Tpsa a, T s) { return a += s; }
  friend Tpsa operator+(T s, Tpsa a) { return a += s; }
  friend Tpsa operator-(Tpsa a, T s) { return a -= s; }
  friend Tpsa operator-(T s, const Tpsa& a) { return (-a) += s; }
  friend Tpsa operator*(Tpsa a, T s) { return a *= s; }
  friend Tpsa operator*(T s, Tpsa a) { return a *= s; }
  friend Tpsa operator/(Tpsa a, T s) { return a /= s; }
  friend Tpsa operator/(T s, const Tpsa& a) { return inv(a) *= s; }

  // Mixed real scalars for complex series.
  template <class S, class = std::enable_if_t<is_complex<T>::value && std::is_arithmetic_v<S>>>
  friend Tpsa operator*(Tpsa a, S s) {
    return a *= T(s);
  }
  template <class S, class = std::enable_if_t<is_complex<T>::value && std::is_arithmetic_v<S>>>
  friend Tpsa operator*(S s, Tpsa a) {
    return a *= T(s);
  }
  template <class S, class = std::enable_if_t<is_complex<T>::value && std::is_arithmetic_v<S>>>
  friend Tpsa operator+(Tpsa a, S s) {
    return a += T(s);
  }
  template <class S, class = std::enable_if_t<is_complex<T>::value && std::is_arithmetic_v<S>>>
  friend Tpsa operator-(Tpsa a, S s) {
    return a -= T(s);
  }

  // Formal partial derivative with respect to a variable or parameter slot.
  friend Tpsa deriv(const Tpsa& a, int slot) {
    const Descriptor& d = *a.d_;
    if (slot < 0 || slot >= d.nn()) throw DescriptorError("deriv: invalid slot " + std::to_string(slot));
    Tpsa r(a.d_);
    const std::size_t e = a.end();
    for (std::size_t i = 1; i < e; ++i) {
      if (a.c_[i] == T(0)) continue;
      const index_t lo = d.lower(slot, i);
      if (lo == Descriptor::npos) continue;
      r.c_[lo] += static_cast<double>(d.exps(i)[slot]) * a.c_[i];
    }
    r.hi_ = std::max(0, a.hi_ - 1);
    return r;
  }

  // Substitute the series g into the univariate Taylor expansion sum c_n t^n,
  // where t is the nilpotent part of a.
  friend Tpsa horner(const Tpsa& a, const std::vector<T>& c) {
    const Tpsa t = a.nilpotent();
    Tpsa r(a.d_, c.back());
    for (int n = static_cast<int>(c.size()) - 2; n >= 0; --n) {
      r = mul(r, t);
      r.c_[0] += c[n];
    }
    return r;
  }

  void dump(std::ostream& os) const {
    const Descriptor& d = *d_;
    os << std::setprecision(17);
    for (std::size_t i = 0, e = end(); i < e; ++i) {
      if (c_[i] == T(0)) continue;
      const Monomial m = d.index_mono(i);
      os << i << ' ';
      for (std::size_t q = 0; q < m.size(); ++q) os << (q ? "," : "") << m[q];
      os << ' ' << c_[i] << '\n';
    }
  }

 private:
  DescPtr d_;
  std::vector<T> c_;
  int hi_ = 0;
};

using RTpsa = Tpsa<double>;
using CTpsa = Tpsa<std::complex<double>>;

template <class T>
Tpsa<T> lincomb(std::span<const std::pair<T, const Tpsa<T>*>> terms) {
  if (terms.empty()) throw DescriptorError("lincomb: no terms");
  Tpsa<T> r(terms.front().second->desc());
  for (const auto& [s, a] : terms) r.axpy(s, *a);
  return r;
}

// Univariate Taylor coefficients ------------------------------------------

namespace series {

// Coefficients of w^alpha from those of w (w[0] != 0), n terms.
template <class T>
std::vector<T> power(const std::vector<T>& w, T alpha, std::size_t n) {
  std::vector<T> f(n, T(0));
  f[0] = std::pow(w[0], alpha);
  for (std::size_t k = 1; k < n; ++k) {
    T acc(0);
    for (std::size_t j = 1; j <= k && j < w.size(); ++j)
      acc += (alpha * static_cast<double>(j) - static_cast<double>(k - j)) * w[j] * f[k - j];
    f[k] = acc / (static_cast<double>(k) * w[0]);
  }
  return f;
}

template <class T>
std::vector<T> integrate(const std::vector<T>& g, T c0, std::size_t n) {
  std::vector<T> f(n, T(0));
  f[0] = c0;
  for (std::size_t k = 1; k < n; ++k) f[k] = g[k - 1] / static_cast<double>(k);
  return f;
}

}  // namespace series

enum class Fun { inv, sqrt, exp, log, sin, cos, asin, atan };

inline const char* fun_name(Fun f) {
  switch (f) {
    case Fun::inv: return "inv";
    case Fun::sqrt: return "sqrt";
    case Fun::exp: return "exp";
    case Fun::log: return "log";
    case Fun::sin: return "sin";
    case Fun::cos: return "cos";
    case Fun::asin: return "asin";
    case Fun::atan: return "atan";
  }
  return "?";
}

// Taylor coefficients f^(n)(a0)/n!, n = 0..mo.
template <class T>
std::vector<T> taylor_coefficients(Fun f, T a0, int mo) {
  const std::size_t n = static_cast<std::size_t>(mo) + 1;
  auto domain = [&](const char* why) {
    std::ostringstream os;
    os << fun_name(f) << ": constant part " << a0 << ' ' << why;
    throw DomainError(os.str());
  };
  std::vector<T> c(n, T(0));
  switch (f) {
    case Fun::inv: {
      if (a0 == T(0)) domain("is zero");
      T p = T(1) / a0;
      for (std::size_t k = 0; k < n; ++k, p /= -a0) c[k] = p;
      break;
    }
    case Fun::sqrt: {
      if constexpr (is_complex<T>::value) {
        if (a0 == T(0)) domain("is zero");
      } else {
        if (!(a0 > 0)) domain("must be > 0");
      }
      c = series::power(std::vector<T>{a0, T(1)}, T(0.5), n);
      break;
    }
    case Fun::exp: {
      T e = std::exp(a0);
      double fact = 1;
      for (std::size_t k = 0; k < n; ++k) {
        if (k) fact *= static_cast<double>(k);
        c[k] = e / fact;
      }
      break;
    }
    case Fun::log: {
      if constexpr (is_complex<T>::value) {
        if (a0 == T(0)) domain("is zero");
      } else {
        if (!(a0 > 0)) domain("must be > 0");
      }
      c[0] = std::log(a0);
      T p = T(1);
      for (std::size_t k = 1; k < n; ++k) {
        p /= a0;
        c[k] = ((k % 2) ? T(1) : T(-1)) * p / static_cast<double>(k);
      }
      break;
    }
    case Fun::sin:
    case Fun::cos: {
      const T s = std::sin(a0), co = std::cos(a0);
      // derivatives cycle through sin, cos, -sin, -cos
      const T cyc_sin[4] = {s, co, -s, -co};
      const T cyc_cos[4] = {co, -s, -co, s};
      double fact = 1;
      for (std::size_t k = 0; k < n; ++k) {
        if (k) fact *= static_cast<double>(k);
        c[k] = (f == Fun::sin ? cyc_sin[k % 4] : cyc_cos[k % 4]) / fact;
      }
      break;
    }
    case Fun::asin: {
      if constexpr (!is_complex<T>::value) {
        if (!(std::abs(a0) < 1)) domain("must be in (-1, 1)");
      }
      // d/du asin(u) = (1 - u^2)^(-1/2)
      std::vector<T> w{T(1) - a0 * a0, T(-2) * a0, T(-1)};
      auto g = series::power(w, T(-0.5), n);
      c = series::integrate(g, std::asin(a0), n);
      break;
    }
    case Fun::atan: {
      std::vector<T> w{T(1) + a0 * a0, T(2) * a0, T(1)};
      auto g = series::power(w, T(-1), n);
      c = series::integrate(g, std::atan(a0), n);
      break;
    }
  }
  return c;
}

template <class T>
Tpsa<T> analytic(Fun f, const Tpsa<T>& a) {
  return horner(a, taylor_coefficients(f, a.get0(), a.desc()->mo()));
}

template <class T> Tpsa<T> inv(const Tpsa<T>& a) { return analytic(Fun::inv, a); }
template <class T> Tpsa<T> sqrt(const Tpsa<T>& a) { return analytic(Fun::sqrt, a); }
template <class T> Tpsa<T> exp(const Tpsa<T>& a) { return analytic(Fun::exp, a); }
template <class T> Tpsa<T> log(const Tpsa<T>& a) { return analytic(Fun::log, a); }
template <class T> Tpsa<T> sin(const Tpsa<T>& a) { return analytic(Fun::sin, a); }
template <class T> Tpsa<T> cos(const Tpsa<T>& a) { return analytic(Fun::cos, a); }
template <class T> Tpsa<T> asin(const Tpsa<T>& a) { return analytic(Fun::asin, a); }
template <class T> Tpsa<T> atan(const Tpsa<T>& a) { return analytic(Fun::atan, a); }

template <class T>
Tpsa<T> pow(const Tpsa<T>& a, int n) {
  if (n < 0) return pow(inv(a), -n);
  Tpsa<T> r(a.desc(), T(1)), b = a;
  while (n) {
    if (n & 1) r = mul(r, b);
    n >>= 1;
    if (n) b = mul(b, b);
  }
  return r;
}

template <class T>
std::ostream& operator<<(std::ostream& os, const Tpsa<T>& a) {
  a.dump(os);
  return os;
}

// Scalar helpers shared by code that is generic over double and Tpsa.
inline double scalar0(double v) { return v; }
template <class T>
T scalar0(const Tpsa<T>& v) {
  return v.get0();
}

}  // namespace mad
