#pragma once

// Differential-algebra maps: one truncated series per phase-space variable.

#include <Eigen/Dense>

#include <complex>
#include <ostream>
#include <sstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mad/tpsa.hpp"

namespace mad {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <class T>
class DaMap {
 public:
  DaMap() = default;
  explicit DaMap(DescPtr d) : d_(std::move(d)), rows_(d_->nv(), Tpsa<T>(d_)) {}

  static DaMap identity(const DescPtr& d) {
    DaMap m(d);
    for (int i = 0; i < d->nv(); ++i) m.rows_[i] = Tpsa<T>::variable(d, i);
    return m;
  }
  static DaMap identity(int nv, int mo, int np = 0, int po = -1, std::vector<std::string> pn = {}) {
    return identity(Descriptor::make(nv, mo, np, po, std::move(pn)));
  }

  const DescPtr& desc() const { return d_; }
  int nv() const { return d_->nv(); }

  Tpsa<T>& operator[](int i) { return rows_.at(i); }
  const Tpsa<T>& operator[](int i) const { return rows_.at(i); }
  Tpsa<T>& operator[](const std::string& name) { return rows_.at(row_of(name)); }
  const Tpsa<T>& operator[](const std::string& name) const { return rows_.at(row_of(name)); }
  std::span<Tpsa<T>> rows() { return rows_; }
  std::span<const Tpsa<T>> rows() const { return rows_; }

  // First-order series of a parameter: zero constant, unit derivative.
  Tpsa<T> param(const std::string& name) const {
    const int s = d_->slot_of(name);
    if (s < d_->nv()) throw DescriptorError("damap: '" + name + "' is not a parameter");
    return Tpsa<T>::variable(d_, s);
  }
  Tpsa<T> param(int k) const { return Tpsa<T>::variable(d_, d_->nv() + k); }

  // Orbit part E (constants) and first-derivative matrix R over the variables.
  Vector<T> orbit() const {
    Vector<T> e(nv());
    for (int i = 0; i < nv(); ++i) e[i] = rows_[i].get0();
    return e;
  }
  Matrix<T> linear() const {
    Matrix<T> r(nv(), nv());
    const bool first = d_->mo() >= 1;
    for (int i = 0; i < nv(); ++i)
      for (int j = 0; j < nv(); ++j) r(i, j) = first ? rows_[i][j + 1] : T(0);
    return r;
  }
  void set_orbit(const Vector<T>& e) {
    for (int i = 0; i < nv(); ++i) rows_[i].set0(e[i]);
  }

  std::vector<T> eval(std::span<const T> point, std::span<const T> params = {}) const {
    if (static_cast<int>(point.size()) != nv())
      throw DescriptorError("eval: point has " + std::to_string(point.size()) + " values, map has " +
                            std::to_string(nv()) + " variables");
    if (static_cast<int>(params.size()) != d_->np() && !(params.empty() && d_->np() == 0))
      throw DescriptorError("eval: expected " + std::to_string(d_->np()) + " parameter values");
    std::vector<T> z(point.begin(), point.end());
    z.insert(z.end(), params.begin(), params.end());
    if (z.size() < static_cast<std::size_t>(d_->nn())) z.resize(d_->nn(), T(0));
    const std::size_t sz = d_->size();
    std::vector<T> mv(sz);
    mv[0] = T(1);
    for (std::size_t idx = 1; idx < sz; ++idx) {
      int s = 0;
      index_t lo = d_->lower(0, idx);
      while (lo == Descriptor::npos) lo = d_->lower(++s, idx);
      mv[idx] = mv[lo] * z[s];
    }
    std::vector<T> out(nv(), T(0));
    for (int i = 0; i < nv(); ++i) {
      const auto& r = rows_[i];
      T acc(0);
      for (std::size_t idx = 0, e = r.end(); idx < e; ++idx) acc += r[idx] * mv[idx];
      out[i] = acc;
    }
    return out;
  }

  void dump(std::ostream& os) const {
    for (int i = 0; i < nv(); ++i) {
      os << "@ " << d_->var_names()[i] << '\n';
      rows_[i].dump(os);
    }
  }

 private:
  int row_of(const std::string& name) const {
    const int s = d_->slot_of(name);
    if (s < 0 || s >= nv()) throw DescriptorError("damap: unknown variable '" + name + "'");
    return s;
  }

  DescPtr d_;
  std::vector<Tpsa<T>> rows_;
};

using RDaMap = DaMap<double>;
using CDaMap = DaMap<std::complex<double>>;

namespace detail {

// Depth-first walk over monomials, multiplying the substituted slot series
// along the way so only O(mo) partial products are alive at once.
template <class T>
void compose_walk(const DaMap<T>& f, std::span<const Tpsa<T>> sub, std::vector<Tpsa<T>>& out, index_t idx,
                  int first_slot, const Tpsa<T>& prod, int depth, int max_depth) {
  const Descriptor& d = *f.desc();
  for (int s = first_slot; s < d.nn(); ++s) {
    const index_t child = d.raise(s, idx);
    if (child == Descriptor::npos) continue;
    if (sub[s].is_zero()) continue;
    Tpsa<T> p = mul(prod, sub[s]);
    for (int r = 0; r < f.nv(); ++r) {
      const T c = f[r][child];
      if (c != T(0)) out[r].axpy(c, p);
    }
    if (depth + 1 < max_depth) compose_walk(f, sub, out, child, s, p, depth + 1, max_depth);
  }
}

}  // namespace detail

// Substitute arbitrary series for every slot (variables then parameters).
template <class T>
std::vector<Tpsa<T>> substitute(const DaMap<T>& f, std::span<const Tpsa<T>> sub) {
  const DescPtr& d = f.desc();
  if (static_cast<int>(sub.size()) != d->nn()) throw DescriptorError("substitute: wrong number of slot series");
  const DescPtr& od = sub.front().desc();
  for (const auto& s : sub) check_same(od, s.desc(), "substitute");
  std::vector<Tpsa<T>> out;
  out.reserve(f.nv());
  for (int r = 0; r < f.nv(); ++r) out.emplace_back(od, f[r].get0());
  int max_depth = 0;
  for (int r = 0; r < f.nv(); ++r) max_depth = std::max(max_depth, f[r].hi());
  if (max_depth > 0) detail::compose_walk(f, sub, out, 0, 0, Tpsa<T>(od, T(1)), 0, max_depth);
  return out;
}

// f o g: the rows of f with every variable replaced by the matching row of
// g; parameters substitute to themselves. A nonzero orbit in g re-expands f
// around it (polynomial substitution).
template <class T>
DaMap<T> compose(const DaMap<T>& f, const DaMap<T>& g) {
  check_same(f.desc(), g.desc(), "compose");
  const DescPtr& d = f.desc();
  std::vector<Tpsa<T>> sub;
  sub.reserve(d->nn());
  for (int i = 0; i < d->nv(); ++i) sub.push_back(g[i]);
  for (int k = 0; k < d->np(); ++k) sub.push_back(Tpsa<T>::variable(d, d->nv() + k));
  auto rows = substitute(f, std::span<const Tpsa<T>>(sub));
  DaMap<T> r(d);
  for (int i = 0; i < d->nv(); ++i) r[i] = std::move(rows[i]);
  return r;
}

// Apply a constant matrix to the rows of a map: (M m)_i = sum_j M_ij m_j.
template <class T>
DaMap<T> apply_matrix(const Matrix<T>& mat, const DaMap<T>& m) {
  DaMap<T> r(m.desc());
  for (int i = 0; i < m.nv(); ++i)
    for (int j = 0; j < m.nv(); ++j)
      if (mat(i, j) != T(0)) r[i].axpy(mat(i, j), m[j]);
  return r;
}

// Linear map z -> mat z + orbit.
template <class T>
DaMap<T> linear_map(const DescPtr& d, const Matrix<T>& mat, const Vector<T>* orbit = nullptr) {
  auto r = apply_matrix(mat, DaMap<T>::identity(d));
  if (orbit) r.set_orbit(*orbit);
  return r;
}

template <class T>
DaMap<T> invert(const DaMap<T>& m) {
  const DescPtr& d = m.desc();
  const int nv = m.nv();
  const Matrix<T> lin = m.linear();
  const T det = lin.determinant();
  if (!(std::abs(det) > 1e-12)) {
    std::ostringstream os;
    os << "invert: singular linear part (det=" << det << ")";
    throw Error(os.str());
  }
  const Matrix<T> li = lin.inverse();
  const Vector<T> e = m.orbit();

  // nonlinear remainder: m minus its orbit and its variable-linear part
  DaMap<T> rest = m;
  for (int i = 0; i < nv; ++i) {
    rest[i].set0(T(0));
    if (d->mo() >= 1)
      for (int j = 0; j < nv; ++j) rest[i][j + 1] = T(0);
  }
  const DaMap<T> id = DaMap<T>::identity(d);
  DaMap<T> z = apply_matrix(li, id);
  bool nonlinear = false;
  for (int i = 0; i < nv; ++i) nonlinear = nonlinear || !rest[i].is_zero();
  if (nonlinear) {
    // z <- R^-1 (w - N(z)); each pass fixes one more order
    for (int it = 0; it <= d->mo(); ++it) {
      DaMap<T> nz = compose(rest, z);
      DaMap<T> w = id;
      for (int i = 0; i < nv; ++i) w[i] -= nz[i];
      z = apply_matrix(li, w);
    }
  }
  if (e.cwiseAbs().maxCoeff() != 0) {
    DaMap<T> shift = id;
    for (int i = 0; i < nv; ++i) shift[i].set0(-e[i]);
    z = compose(z, shift);
  }
  return z;
}

template <class T>
std::pair<Vector<T>, Matrix<T>> extract(const DaMap<T>& m) {
  return {m.orbit(), m.linear()};
}

template <class T>
DaMap<std::complex<T>> to_complex(const DaMap<T>& m) {
  DaMap<std::complex<T>> r(m.desc());
  for (int i = 0; i < m.nv(); ++i) {
    auto& row = r[i];
    for (std::size_t k = 0, e = m[i].end(); k < e; ++k) row[k] = m[i][k];
    row.touch(m[i].hi());
  }
  return r;
}

// Real part of a complex map; *max_imag receives the largest discarded
// imaginary coefficient.
template <class T>
DaMap<T> real_part(const DaMap<std::complex<T>>& m, double* max_imag = nullptr) {
  DaMap<T> r(m.desc());
  double mi = 0;
  for (int i = 0; i < m.nv(); ++i) {
    auto& row = r[i];
    for (std::size_t k = 0, e = m[i].end(); k < e; ++k) {
      row[k] = m[i][k].real();
      mi = std::max(mi, std::abs(m[i][k].imag()));
    }
    row.touch(m[i].hi());
  }
  if (max_imag) *max_imag = mi;
  return r;
}

template <class T>
std::ostream& operator<<(std::ostream& os, const DaMap<T>& m) {
  m.dump(os);
  return os;
}

}  // namespace mad
