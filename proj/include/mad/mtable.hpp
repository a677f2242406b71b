#pragma once

// Named-column tables with lazy generated columns and TFS/CSV serialization.

#include <algorithm>
#include <complex>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <valarray>
#include <variant>
#include <vector>

#include "mad/error.hpp"

namespace mad {

using RealCol = std::vector<double>;
using StrCol = std::vector<std::string>;
using CplxCol = std::vector<std::complex<double>>;
using Column = std::variant<RealCol, StrCol, CplxCol>;
using Scalar = std::variant<double, std::string>;

class MTable;
using Generator = std::function<double(const MTable&, std::size_t)>;

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Splits "name[n]" into its name and occurrence (default 1).
inline std::pair<std::string, int> split_occurrence(const std::string& s) {
  if (!s.empty() && s.back() == ']') {
    const auto lb = s.rfind('[');
    if (lb != std::string::npos) {
      const std::string num = s.substr(lb + 1, s.size() - lb - 2);
      if (!num.empty() && std::all_of(num.begin(), num.end(), ::isdigit))
        return {s.substr(0, lb), std::stoi(num)};
    }
  }
  return {s, 1};
}

class MTable {
 public:
  MTable() = default;
  explicit MTable(std::string name, std::string type = "user") : name_(std::move(name)), type_(std::move(type)) {}

  const std::string& name() const { return name_; }
  void set_name(std::string n) { name_ = std::move(n); }
  const std::string& type() const { return type_; }
  void set_type(std::string t) { type_ = std::move(t); }

  std::size_t nrow() const { return nrow_; }
  const std::vector<std::string>& colnames() const { return order_; }
  bool has_col(const std::string& c) const { return data_.count(c) || gens_.count(c); }
  bool is_generated(const std::string& c) const { return gens_.count(c) > 0; }

  // header ------------------------------------------------------------------
  void set_header(const std::string& k, Scalar v) {
    for (auto& [key, val] : header_)
      if (key == k) {
        val = std::move(v);
        return;
      }
    header_.emplace_back(k, std::move(v));
  }
  bool has_header(const std::string& k) const {
    return std::any_of(header_.begin(), header_.end(), [&](auto& kv) { return kv.first == k; });
  }
  const Scalar& header(const std::string& k) const {
    for (auto& [key, val] : header_)
      if (key == k) return val;
    throw Error("table '" + name_ + "': no header '" + k + "'");
  }
  double header_num(const std::string& k) const {
    const auto& v = header(k);
    if (auto p = std::get_if<double>(&v)) return *p;
    throw Error("table '" + name_ + "': header '" + k + "' is not numeric");
  }
  const std::vector<std::pair<std::string, Scalar>>& headers() const { return header_; }

  // columns -----------------------------------------------------------------
  void add_column(const std::string& c, Column col) {
    const std::size_t n = std::visit([](auto& v) { return v.size(); }, col);
    if (order_.empty() && gens_.empty())
      nrow_ = n;
    else if (n != nrow_)
      throw Error("table '" + name_ + "': column '" + c + "' has " + std::to_string(n) + " rows, expected " +
                  std::to_string(nrow_));
    if (!has_col(c)) order_.push_back(c);
    gens_.erase(c);
    data_[c] = std::move(col);
    invalidate();
  }

  void addcol(const std::string& c, Generator g) {
    if (!has_col(c)) order_.push_back(c);
    data_.erase(c);
    gens_[c] = std::move(g);
    invalidate();
  }

  const Column& column(const std::string& c) const {
    if (auto it = data_.find(c); it != data_.end()) return it->second;
    auto g = gens_.find(c);
    if (g == gens_.end()) throw Error("table '" + name_ + "': no column '" + c + "'");
    if (auto it = cache_.find(c); it != cache_.end()) return it->second;
    if (!busy_.insert(c).second) throw Error("table '" + name_ + "': cyclic column generator '" + c + "'");
    RealCol v(nrow_);
    try {
      for (std::size_t i = 0; i < nrow_; ++i) v[i] = g->second(*this, i);
    } catch (...) {
      busy_.erase(c);
      throw;
    }
    busy_.erase(c);
    return cache_[c] = std::move(v);
  }

  const RealCol& col(const std::string& c) const {
    if (auto p = std::get_if<RealCol>(&column(c))) return *p;
    throw Error("table '" + name_ + "': column '" + c + "' is not numeric");
  }
  const StrCol& strcol(const std::string& c) const {
    if (auto p = std::get_if<StrCol>(&column(c))) return *p;
    throw Error("table '" + name_ + "': column '" + c + "' is not a string column");
  }
  const CplxCol& cplxcol(const std::string& c) const {
    if (auto p = std::get_if<CplxCol>(&column(c))) return *p;
    throw Error("table '" + name_ + "': column '" + c + "' is not complex");
  }
  // numeric column as a vector value supporting element-wise arithmetic
  std::valarray<double> vec(const std::string& c) const {
    const auto& v = col(c);
    return std::valarray<double>(v.data(), v.size());
  }
  double get(const std::string& c, std::size_t row) const {
    check_row(row);
    return col(c)[row];
  }

  // Mutable access to a stored column; drops generated caches.
  Column& mutable_column(const std::string& c) {
    auto it = data_.find(c);
    if (it == data_.end()) throw Error("table '" + name_ + "': no stored column '" + c + "'");
    invalidate();
    return it->second;
  }

  // rows --------------------------------------------------------------------
  // Row of the n-th occurrence of an element name ("qf[2]" or name, n).
  std::size_t row_of(const std::string& spec) const {
    auto [nm, occ] = split_occurrence(spec);
    return row_of(nm, occ);
  }
  std::size_t row_of(const std::string& nm, int occ) const {
    if (nm == "#s") return 0;
    if (nm == "#e") {
      if (nrow_ == 0) throw Error("table '" + name_ + "': empty");
      return nrow_ - 1;
    }
    const auto& names = strcol("name");
    int seen = 0;
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == nm && ++seen == occ) return i;
    throw Error("table '" + name_ + "': no row '" + nm + "'" + (occ > 1 ? "[" + std::to_string(occ) + "]" : ""));
  }

  // Row indices of "A/B"; B before A wraps around the end of the table.
  std::vector<std::size_t> range_rows(const std::string& range) const {
    if (range.empty() || nrow_ == 0) return {};
    const auto slash = range.find('/');
    const std::size_t a = row_of(range.substr(0, slash));
    const std::size_t b = slash == std::string::npos ? a : row_of(range.substr(slash + 1));
    std::vector<std::size_t> rows;
    if (a <= b) {
      for (std::size_t i = a; i <= b; ++i) rows.push_back(i);
    } else {
      for (std::size_t i = a; i < nrow_; ++i) rows.push_back(i);
      for (std::size_t i = 0; i <= b; ++i) rows.push_back(i);
    }
    return rows;
  }

  MTable select_rows(const std::vector<std::size_t>& rows) const {
    MTable t(name_, type_);
    t.header_ = header_;
    for (std::size_t r : rows) check_row(r);
    t.nrow_ = rows.size();
    for (const auto& c : order_) {
      t.order_.push_back(c);
      std::visit(
          [&](const auto& v) {
            std::decay_t<decltype(v)> out;
            out.reserve(rows.size());
            for (std::size_t r : rows) out.push_back(v[r]);
            t.data_[c] = std::move(out);
          },
          column(c));
    }
    return t;
  }
  MTable select_range(const std::string& range) const { return select_rows(range_rows(range)); }

  // Drop generators, keeping their current values as stored columns.
  void materialize() {
    for (const auto& c : order_)
      if (gens_.count(c)) data_[c] = col(c);
    gens_.clear();
    invalidate();
  }

 private:
  void check_row(std::size_t r) const {
    if (r >= nrow_)
      throw Error("table '" + name_ + "': row " + std::to_string(r) + " out of range [0, " + std::to_string(nrow_) +
                  ")");
  }
  void invalidate() { cache_.clear(); }

  std::string name_, type_ = "user";
  std::size_t nrow_ = 0;
  std::vector<std::pair<std::string, Scalar>> header_;
  std::vector<std::string> order_;
  std::map<std::string, Column> data_;
  std::map<std::string, Generator> gens_;
  mutable std::map<std::string, Column> cache_;
  mutable std::set<std::string> busy_;
};

// TFS ------------------------------------------------------------------------

namespace detail {

inline std::string tfs_quote(const std::string& s) {
  std::string r = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') r += '\\';
    r += c;
  }
  return r + '"';
}

// Whitespace separated tokens; double-quoted tokens may hold spaces.
inline std::vector<std::string> tfs_tokens(const std::string& line, int lineno, std::vector<bool>* quoted = nullptr) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    if (std::isspace(static_cast<unsigned char>(line[i]))) {
      ++i;
      continue;
    }
    std::string tok;
    if (line[i] == '"') {
      ++i;
      bool closed = false;
      while (i < line.size()) {
        char c = line[i++];
        if (c == '\\' && i < line.size()) {
          tok += line[i++];
        } else if (c == '"') {
          closed = true;
          break;
        } else {
          tok += c;
        }
      }
      if (!closed) throw Error("tfs line " + std::to_string(lineno) + ": unterminated string");
      if (quoted) quoted->push_back(true);
    } else {
      while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) tok += line[i++];
      if (quoted) quoted->push_back(false);
    }
    out.push_back(std::move(tok));
  }
  return out;
}

inline double tfs_number(const std::string& s, int lineno) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw Error("tfs line " + std::to_string(lineno) + ": bad number '" + s + "'");
  return v;
}

}  // namespace detail

inline void write_tfs(const MTable& t, std::ostream& os) {
  os << "@ NAME             %s " << detail::tfs_quote(t.name()) << '\n';
  os << "@ TYPE             %s " << detail::tfs_quote(t.type()) << '\n';
  for (const auto& [k, v] : t.headers()) {
    if (k == "NAME" || k == "TYPE") continue;
    std::string key = k;
    key.resize(std::max<std::size_t>(k.size(), 16), ' ');
    if (auto p = std::get_if<double>(&v))
      os << "@ " << key << " %le " << fmt_double(*p) << '\n';
    else
      os << "@ " << key << " %s " << detail::tfs_quote(std::get<std::string>(v)) << '\n';
  }
  std::vector<std::string> names, types;
  for (const auto& c : t.colnames()) {
    const Column& col = t.column(c);
    if (std::holds_alternative<CplxCol>(col)) {
      names.push_back(c + "_re");
      names.push_back(c + "_im");
      types.insert(types.end(), {"%le", "%le"});
    } else {
      names.push_back(c);
      types.push_back(std::holds_alternative<StrCol>(col) ? "%s" : "%le");
    }
  }
  os << '*';
  for (const auto& n : names) os << ' ' << n;
  os << "\n$";
  for (const auto& ty : types) os << ' ' << ty;
  os << '\n';
  for (std::size_t r = 0; r < t.nrow(); ++r) {
    for (const auto& c : t.colnames()) {
      const Column& col = t.column(c);
      if (auto p = std::get_if<RealCol>(&col))
        os << ' ' << fmt_double((*p)[r]);
      else if (auto s = std::get_if<StrCol>(&col))
        os << ' ' << detail::tfs_quote((*s)[r]);
      else {
        const auto z = std::get<CplxCol>(col)[r];
        os << ' ' << fmt_double(z.real()) << ' ' << fmt_double(z.imag());
      }
    }
    os << '\n';
  }
}

inline MTable read_tfs(std::istream& is) {
  MTable t;
  std::vector<std::string> names, types;
  std::vector<RealCol> reals;
  std::vector<StrCol> strs;
  std::string line;
  int lineno = 0;
  bool have_types = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const char lead = line[line.find_first_not_of(" \t")];
    if (lead == '@') {
      auto tok = detail::tfs_tokens(line.substr(line.find('@') + 1), lineno);
      if (tok.size() != 3) throw Error("tfs line " + std::to_string(lineno) + ": malformed header");
      const std::string& k = tok[0];
      if (tok[1] == "%s") {
        if (k == "NAME")
          t.set_name(tok[2]);
        else if (k == "TYPE")
          t.set_type(tok[2]);
        else
          t.set_header(k, tok[2]);
      } else if (tok[1] == "%le" || tok[1] == "%d" || tok[1] == "%lf") {
        t.set_header(k, detail::tfs_number(tok[2], lineno));
      } else {
        throw Error("tfs line " + std::to_string(lineno) + ": unknown header type '" + tok[1] + "'");
      }
    } else if (lead == '*') {
      names = detail::tfs_tokens(line.substr(line.find('*') + 1), lineno);
    } else if (lead == '$') {
      types = detail::tfs_tokens(line.substr(line.find('$') + 1), lineno);
      if (types.size() != names.size())
        throw Error("tfs line " + std::to_string(lineno) + ": " + std::to_string(types.size()) + " types for " +
                    std::to_string(names.size()) + " columns");
      for (const auto& ty : types)
        if (ty != "%s" && ty != "%le" && ty != "%d" && ty != "%lf")
          throw Error("tfs line " + std::to_string(lineno) + ": unknown column type '" + ty + "'");
      reals.assign(names.size(), {});
      strs.assign(names.size(), {});
      have_types = true;
    } else {
      if (!have_types) throw Error("tfs line " + std::to_string(lineno) + ": data before column description");
      auto tok = detail::tfs_tokens(line, lineno);
      if (tok.size() != names.size())
        throw Error("tfs line " + std::to_string(lineno) + ": expected " + std::to_string(names.size()) +
                    " fields, got " + std::to_string(tok.size()));
      for (std::size_t i = 0; i < tok.size(); ++i) {
        if (types[i] == "%s")
          strs[i].push_back(tok[i]);
        else
          reals[i].push_back(detail::tfs_number(tok[i], lineno));
      }
    }
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    const std::string& n = names[i];
    // re-pair complex columns
    if (types[i] != "%s" && n.size() > 3 && n.compare(n.size() - 3, 3, "_re") == 0 && i + 1 < names.size() &&
        names[i + 1] == n.substr(0, n.size() - 3) + "_im" && types[i + 1] != "%s") {
      CplxCol z(reals[i].size());
      for (std::size_t r = 0; r < z.size(); ++r) z[r] = {reals[i][r], reals[i + 1][r]};
      t.add_column(n.substr(0, n.size() - 3), std::move(z));
      ++i;
      continue;
    }
    if (types[i] == "%s")
      t.add_column(n, std::move(strs[i]));
    else
      t.add_column(n, std::move(reals[i]));
  }
  return t;
}

inline void write_tfs(const MTable& t, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write '" + path + "'");
  write_tfs(t, os);
}

inline MTable read_tfs(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read '" + path + "'");
  return read_tfs(is);
}

inline void write_csv(const MTable& t, std::ostream& os) {
  auto field = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string r = "\"";
    for (char c : s) r += c == '"' ? std::string("\"\"") : std::string(1, c);
    return r + '"';
  };
  bool first = true;
  for (const auto& c : t.colnames()) {
    const bool cplx = std::holds_alternative<CplxCol>(t.column(c));
    os << (first ? "" : ",") << (cplx ? field(c + "_re") + "," + field(c + "_im") : field(c));
    first = false;
  }
  os << '\n';
  for (std::size_t r = 0; r < t.nrow(); ++r) {
    first = true;
    for (const auto& c : t.colnames()) {
      os << (first ? "" : ",");
      first = false;
      const Column& col = t.column(c);
      if (auto p = std::get_if<RealCol>(&col))
        os << fmt_double((*p)[r]);
      else if (auto s = std::get_if<StrCol>(&col))
        os << field((*s)[r]);
      else
        os << fmt_double(std::get<CplxCol>(col)[r].real()) << ',' << fmt_double(std::get<CplxCol>(col)[r].imag());
    }
    os << '\n';
  }
}

}  // namespace mad
