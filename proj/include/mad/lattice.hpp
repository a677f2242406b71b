#pragma once

// Elements, beams, beam lines, sequences and the lazy-expression environment.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "mad/damap.hpp"
#include "mad/error.hpp"
#include "mad/geom.hpp"
#include "mad/mtable.hpp"
#include "mad/value.hpp"

namespace mad {

class Env;
struct Expr;
struct Element;
struct BLine;
struct Sequence;
struct Beam;
using ExprPtr = std::shared_ptr<const Expr>;
using ElementPtr = std::shared_ptr<Element>;
using BLinePtr = std::shared_ptr<BLine>;
using SequencePtr = std::shared_ptr<Sequence>;
using TablePtr = std::shared_ptr<MTable>;
using BeamPtr = std::shared_ptr<Beam>;

// Result of evaluating an expression.
using Datum = std::variant<Value, std::string, std::vector<double>, TablePtr>;

// expressions ----------------------------------------------------------------

struct Expr {
  enum class Op { lit, str, var, neg, add, sub, mul, div, pow, call, vec };
  Op op = Op::lit;
  Value lit;
  std::string name;  // variable, string literal or function name
  std::vector<ExprPtr> args;

  static ExprPtr number(Value v) {
    auto e = std::make_shared<Expr>();
    e->lit = std::move(v);
    return e;
  }
  static ExprPtr string(std::string s) {
    auto e = std::make_shared<Expr>();
    e->op = Op::str;
    e->name = std::move(s);
    return e;
  }
  static ExprPtr var(std::string n) {
    auto e = std::make_shared<Expr>();
    e->op = Op::var;
    e->name = std::move(n);
    return e;
  }
  static ExprPtr node(Op op, std::vector<ExprPtr> args, std::string name = {}) {
    auto e = std::make_shared<Expr>();
    e->op = op;
    e->args = std::move(args);
    e->name = std::move(name);
    return e;
  }
};

inline const char* datum_kind(const Datum& d) {
  switch (d.index()) {
    case 0: return "number";
    case 1: return "string";
    case 2: return "vector";
    default: return "table";
  }
}

Datum eval(const Expr& e, Env& env);

inline Value eval_num(const Expr& e, Env& env) {
  Datum d = eval(e, env);
  if (auto v = std::get_if<Value>(&d)) return *v;
  throw CommandError(std::string("expected a number, got a ") + datum_kind(d));
}

// beam -----------------------------------------------------------------------

struct Beam {
  std::string particle = "positron";
  double mass = 0.51099895000e-3;  // GeV
  double charge = 1;
  double energy = 1;  // GeV

  static double particle_mass(const std::string& p) {
    if (p == "proton" || p == "antiproton") return 0.93827208816;
    if (p == "electron" || p == "positron") return 0.51099895000e-3;
    throw CommandError("beam: unknown particle '" + p + "'");
  }
  static double particle_charge(const std::string& p) {
    if (p == "proton" || p == "positron") return 1;
    if (p == "electron" || p == "antiproton") return -1;
    throw CommandError("beam: unknown particle '" + p + "'");
  }
  static Beam make(const std::string& particle, double energy) {
    Beam b;
    b.particle = particle;
    b.mass = particle_mass(particle);
    b.charge = particle_charge(particle);
    b.set_energy(energy);
    return b;
  }
  void set_energy(double e) {
    if (!(e > mass)) throw CommandError("beam: energy " + fmt_double(e) + " GeV not above the rest mass");
    energy = e;
  }
  void set_pc(double pc) { set_energy(std::sqrt(pc * pc + mass * mass)); }
  void set_gamma(double g) { set_energy(g * mass); }
  double pc() const { return std::sqrt(energy * energy - mass * mass); }
  double gamma() const { return energy / mass; }
  double beta() const { return pc() / energy; }
  // magnetic rigidity [T m]
  double brho() const { return pc() * 1e9 / 299792458.0 / std::abs(charge); }
};

// elements -------------------------------------------------------------------

// Attribute: a (possibly deferred) expression, a list of them, or a string.
struct Attr {
  std::variant<ExprPtr, std::vector<ExprPtr>, std::string> v;
  bool deferred = false;
};

inline const std::vector<std::string>& element_kinds() {
  static const std::vector<std::string> k{"marker",  "drift",     "sbend",    "rbend",     "quadrupole",
                                          "sextupole", "octupole", "multipole", "hkicker",  "vkicker",
                                          "kicker",  "monitor",   "rfcavity", "translate", "rotate"};
  return k;
}
inline bool is_kind(const std::string& k) {
  const auto& ks = element_kinds();
  return std::find(ks.begin(), ks.end(), k) != ks.end();
}

struct Element : std::enable_shared_from_this<Element> {
  std::string name;
  std::string kind;
  std::shared_ptr<const Element> parent;  // attribute inheritance
  std::map<std::string, Attr> attrs;
  Env* env = nullptr;  // evaluation context of deferred expressions

  static ElementPtr make(std::string kind, std::string name, const std::map<std::string, double>& nums = {}) {
    if (!is_kind(kind)) throw CommandError("unknown element kind '" + kind + "'");
    auto e = std::make_shared<Element>();
    e->kind = std::move(kind);
    e->name = std::move(name);
    for (const auto& [k, v] : nums) e->set(k, v);
    return e;
  }
  // new element inheriting every attribute of this one
  ElementPtr clone(std::string new_name, const std::map<std::string, double>& nums = {}) const {
    auto e = std::make_shared<Element>();
    e->kind = kind;
    e->name = std::move(new_name);
    e->parent = shared_from_this();
    e->env = env;
    for (const auto& [k, v] : nums) e->set(k, v);
    return e;
  }

  void set(const std::string& k, Value v) { attrs[k] = Attr{Expr::number(std::move(v)), false}; }
  void set(const std::string& k, ExprPtr e, bool deferred) { attrs[k] = Attr{std::move(e), deferred}; }
  void set_list(const std::string& k, std::vector<Value> vs) {
    std::vector<ExprPtr> es;
    for (auto& v : vs) es.push_back(Expr::number(std::move(v)));
    attrs[k] = Attr{std::move(es), false};
  }
  void set_str(const std::string& k, std::string s) { attrs[k] = Attr{std::move(s), false}; }

  const Attr* find(const std::string& k) const {
    for (const Element* e = this; e; e = e->parent.get())
      if (auto it = e->attrs.find(k); it != e->attrs.end()) return &it->second;
    return nullptr;
  }
  bool has(const std::string& k) const { return find(k) != nullptr; }

  Value value(const std::string& k, double dflt = 0) const;
  double num(const std::string& k, double dflt = 0) const { return value(k, dflt).num(); }
  std::vector<Value> list(const std::string& k) const;
  std::string str(const std::string& k, const std::string& dflt = "") const {
    const Attr* a = find(k);
    if (!a) return dflt;
    if (auto s = std::get_if<std::string>(&a->v)) return *s;
    throw CommandError("element '" + name + "': attribute '" + k + "' is not a string");
  }

  bool is_thick() const { return kind != "marker" && kind != "multipole" && kind != "translate" && kind != "rotate"; }
  double length() const {
    if (!is_thick()) return 0;
    const double l = num("l");
    if (l < 0) throw CommandError("element '" + name + "': negative length");
    return l;
  }
};

// beam lines -----------------------------------------------------------------

struct BLine {
  struct Item {
    std::variant<ElementPtr, BLinePtr> ref;
    int rep = 1;
  };
  std::string name;
  std::vector<Item> items;

  static BLinePtr make(std::string name, std::vector<Item> items = {}) {
    auto b = std::make_shared<BLine>();
    b->name = std::move(name);
    b->items = std::move(items);
    return b;
  }
};

namespace detail {

inline void expand(const BLine& b, std::vector<ElementPtr>& out, std::set<const BLine*>& stack) {
  if (!stack.insert(&b).second) throw CommandError("line '" + b.name + "' contains itself");
  for (const auto& it : b.items) {
    if (it.rep < 0) throw CommandError("line '" + b.name + "': negative repetition " + std::to_string(it.rep));
    for (int r = 0; r < it.rep; ++r) {
      if (auto e = std::get_if<ElementPtr>(&it.ref))
        out.push_back(*e);
      else
        expand(*std::get<BLinePtr>(it.ref), out, stack);
    }
  }
  stack.erase(&b);
}

}  // namespace detail

inline std::vector<ElementPtr> expand_bline(const BLine& b) {
  std::vector<ElementPtr> out;
  std::set<const BLine*> stack;
  detail::expand(b, out, stack);
  return out;
}

// sequences ------------------------------------------------------------------

enum class Refer { entry, centre, exit };

inline Refer parse_refer(const std::string& s) {
  if (s == "entry") return Refer::entry;
  if (s == "centre" || s == "center") return Refer::centre;
  if (s == "exit") return Refer::exit;
  throw CommandError("unknown refer '" + s + "'");
}

struct SeqEntry {
  ElementPtr elem;
  double s = 0;  // entry position
  double l = 0;
  bool implicit = false;  // drift filling a gap
};

struct Sequence {
  std::string name;
  Refer refer = Refer::entry;
  std::vector<SeqEntry> entries;
  double length = 0;
  BeamPtr beam;
  int dir = 1;

  std::size_t size() const { return entries.size(); }
  // index of the n-th occurrence of an element name
  std::size_t index_of(const std::string& spec) const {
    auto [nm, occ] = split_occurrence(spec);
    if (nm == "#s") return 0;
    if (nm == "#e") return entries.empty() ? 0 : entries.size() - 1;
    int seen = 0;
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].elem->name == nm && ++seen == occ) return i;
    throw CommandError("sequence '" + name + "': no element '" + spec + "'");
  }
};

struct Placed {
  ElementPtr elem;
  double at = 0;  // position of the element reference point
  bool has_at = false;
};

namespace detail {

inline double entry_of(double at, double l, Refer r) {
  switch (r) {
    case Refer::entry: return at;
    case Refer::centre: return at - l / 2;
    default: return at - l;
  }
}

// Lay out a line starting at s0; `at` values are relative to the line start,
// items without one follow the previous item. Returns the end position.
inline double place(const BLine& b, double s0, Refer refer, std::vector<SeqEntry>& out, std::set<const BLine*>& stack) {
  if (!stack.insert(&b).second) throw CommandError("line '" + b.name + "' contains itself");
  double cur = s0;
  for (const auto& it : b.items) {
    if (it.rep < 0) throw CommandError("line '" + b.name + "': negative repetition " + std::to_string(it.rep));
    for (int r = 0; r < it.rep; ++r) {
      if (auto pe = std::get_if<ElementPtr>(&it.ref)) {
        const auto& e = *pe;
        const double l = e->length();
        double s = cur;
        if (e->has("at")) s = entry_of(s0 + e->num("at"), l, refer);
        out.push_back({e, s, l, false});
        cur = s + l;
      } else {
        cur = place(*std::get<BLinePtr>(it.ref), cur, refer, out, stack);
      }
    }
  }
  stack.erase(&b);
  return cur;
}

}  // namespace detail

// Sequence from a line; implicit drifts fill gaps. A positive total length
// pads the end with a drift.
inline SequencePtr build_sequence(const std::string& name, const BLine& line, Refer refer = Refer::entry,
                                  BeamPtr beam = nullptr, double total_l = -1) {
  std::vector<SeqEntry> placed;
  std::set<const BLine*> stack;
  detail::place(line, 0, refer, placed, stack);
  auto seq = std::make_shared<Sequence>();
  seq->name = name;
  seq->refer = refer;
  seq->beam = beam ? beam : std::make_shared<Beam>();
  double cur = 0;
  const SeqEntry* prev = nullptr;
  int ndrift = 0;
  auto add_drift = [&](double from, double len) {
    auto d = (Element::make("drift", "drift_" + std::to_string(ndrift++), {{"l", len}}));
    seq->entries.push_back({d, from, len, true});
  };
  for (const auto& p : placed) {
    const double gap = p.s - cur;
    if (gap < -1e-12)
      throw CommandError("sequence '" + name + "': element '" + p.elem->name + "' overlaps '" +
                         (prev ? prev->elem->name : std::string("start")) + "' by " + fmt_double(-gap) + " m");
    if (gap > 1e-12) add_drift(cur, gap);
    seq->entries.push_back({p.elem, std::max(p.s, cur), p.l, false});
    cur = std::max(p.s, cur) + p.l;
    prev = &p;
  }
  if (total_l >= 0) {
    if (total_l < cur - 1e-12)
      throw CommandError("sequence '" + name + "': length " + fmt_double(total_l) + " shorter than its content");
    if (total_l - cur > 1e-12) add_drift(cur, total_l - cur);
    cur = std::max(cur, total_l);
  }
  seq->length = cur;
  return seq;
}

// Start the sequence at the named element; positions are re-based.
inline SequencePtr cycle(const Sequence& seq, const std::string& start) {
  const std::size_t k = seq.index_of(start);
  auto out = std::make_shared<Sequence>(seq);
  out->entries.clear();
  const double s0 = seq.entries.empty() ? 0 : seq.entries[k].s;
  for (std::size_t i = 0; i < seq.entries.size(); ++i) {
    SeqEntry e = seq.entries[(k + i) % seq.entries.size()];
    e.s -= s0;
    if (e.s < -1e-12) e.s += seq.length;
    out->entries.push_back(e);
  }
  return out;
}

// environment ----------------------------------------------------------------

using EnvEntry = std::variant<Value, ExprPtr, std::string, ElementPtr, BLinePtr, SequencePtr, TablePtr, BeamPtr>;

class Env {
 public:
  explicit Env(Env* parent = nullptr) : parent_(parent) {}

  Env* parent() const { return parent_; }

  const EnvEntry* find(const std::string& n) const {
    for (const Env* e = this; e; e = e->parent_)
      if (auto it = e->vars_.find(n); it != e->vars_.end()) return &it->second;
    return nullptr;
  }
  bool defined(const std::string& n) const { return find(n) != nullptr; }
  bool defined_here(const std::string& n) const { return vars_.count(n) > 0; }

  void set(const std::string& n, Value v) { vars_[n] = std::move(v); }
  void set_deferred(const std::string& n, ExprPtr e) { vars_[n] = std::move(e); }
  void define(const std::string& n, EnvEntry v) { vars_[n] = std::move(v); }
  void erase(const std::string& n) { vars_.erase(n); }

  // Read a name. Undefined plain names are created as 0 in this env; dotted
  // names may address table headers/columns or element attributes.
  Datum get(const std::string& n) {
    if (const EnvEntry* e = find(n)) return to_datum(*e, n);
    for (auto dot = n.rfind('.'); dot != std::string::npos && dot > 0; dot = n.rfind('.', dot - 1)) {
      const std::string head = n.substr(0, dot), tail = n.substr(dot + 1);
      const EnvEntry* h = find(head);
      if (!h) continue;
      if (auto t = std::get_if<TablePtr>(h)) {
        const MTable& tb = **t;
        if (tb.has_header(tail)) {
          const Scalar& s = tb.header(tail);
          if (auto d = std::get_if<double>(&s)) return Value(*d);
          return std::get<std::string>(s);
        }
        if (tb.has_col(tail)) {
          const Column& c = tb.column(tail);
          if (auto r = std::get_if<RealCol>(&c)) return *r;
          throw CommandError("column '" + n + "' is not numeric");
        }
        throw CommandError("table '" + head + "' has no header or column '" + tail + "'");
      }
      if (auto el = std::get_if<ElementPtr>(h)) {
        const Attr* a = (*el)->find(tail);
        if (!a) return Value(0.0);
        if (auto s = std::get_if<std::string>(&a->v)) return *s;
        return (*el)->value(tail);
      }
      if (auto sq = std::get_if<SequencePtr>(h)) {
        if (tail == "length" || tail == "l") return Value((*sq)->length);
        if (tail == "dir") return Value(double((*sq)->dir));
        throw CommandError("sequence '" + head + "' has no attribute '" + tail + "'");
      }
      if (auto bm = std::get_if<BeamPtr>(h)) {
        const Beam& b = **bm;
        if (tail == "energy") return Value(b.energy);
        if (tail == "pc") return Value(b.pc());
        if (tail == "gamma") return Value(b.gamma());
        if (tail == "beta") return Value(b.beta());
        if (tail == "mass") return Value(b.mass);
        if (tail == "charge") return Value(b.charge);
        throw CommandError("beam '" + head + "' has no attribute '" + tail + "'");
      }
      break;
    }
    vars_[n] = Value(0.0);
    return Value(0.0);
  }

  Value num(const std::string& n) {
    Datum d = get(n);
    if (auto v = std::get_if<Value>(&d)) return *v;
    throw CommandError("'" + n + "' is a " + datum_kind(d) + ", not a number");
  }

  template <class P>
  P lookup(const std::string& n, const char* what) const {
    const EnvEntry* e = find(n);
    if (e)
      if (auto p = std::get_if<P>(e)) return *p;
    throw CommandError(std::string("no ") + what + " named '" + n + "'");
  }
  ElementPtr element(const std::string& n) const { return lookup<ElementPtr>(n, "element"); }
  BLinePtr line(const std::string& n) const { return lookup<BLinePtr>(n, "line"); }
  SequencePtr sequence(const std::string& n) const { return lookup<SequencePtr>(n, "sequence"); }
  TablePtr table(const std::string& n) const { return lookup<TablePtr>(n, "table"); }

  const std::map<std::string, EnvEntry>& vars() const { return vars_; }

 private:
  Datum to_datum(const EnvEntry& e, const std::string& n) {
    if (auto v = std::get_if<Value>(&e)) return *v;
    if (auto x = std::get_if<ExprPtr>(&e)) {
      if (!evaluating_.insert(n).second) throw CommandError("cyclic deferred expression through '" + n + "'");
      struct Guard {
        std::set<std::string>& s;
        const std::string& n;
        ~Guard() { s.erase(n); }
      } g{evaluating_, n};
      return eval(**x, *this);
    }
    if (auto s = std::get_if<std::string>(&e)) return *s;
    if (auto t = std::get_if<TablePtr>(&e)) return *t;
    throw CommandError("'" + n + "' is not a value");
  }

  Env* parent_ = nullptr;
  std::map<std::string, EnvEntry> vars_;
  std::set<std::string> evaluating_;
};

namespace detail {

inline Datum arith(Expr::Op op, const Datum& a, const Datum& b) {
  auto scal = [&](const Value& x, const Value& y) -> Value {
    switch (op) {
      case Expr::Op::add: return x + y;
      case Expr::Op::sub: return x - y;
      case Expr::Op::mul: return x * y;
      case Expr::Op::div: return x / y;
      default: return pow(x, y);
    }
  };
  auto va = std::get_if<Value>(&a);
  auto vb = std::get_if<Value>(&b);
  if (va && vb) return scal(*va, *vb);
  auto xa = std::get_if<std::vector<double>>(&a);
  auto xb = std::get_if<std::vector<double>>(&b);
  if ((xa || va) && (xb || vb)) {
    const std::size_t n = xa ? xa->size() : xb->size();
    if (xa && xb && xa->size() != xb->size()) throw CommandError("vector length mismatch in expression");
    if ((va && va->is_tpsa()) || (vb && vb->is_tpsa())) throw CommandError("cannot mix vectors and series");
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i)
      r[i] = scal(Value(xa ? (*xa)[i] : va->num()), Value(xb ? (*xb)[i] : vb->num())).num();
    return r;
  }
  throw CommandError(std::string("invalid operands: ") + datum_kind(a) + " and " + datum_kind(b));
}

}  // namespace detail

inline Datum eval(const Expr& e, Env& env) {
  using Op = Expr::Op;
  switch (e.op) {
    case Op::lit: return e.lit;
    case Op::str: return e.name;
    case Op::var: {
      if (e.name == "pi") return Value(std::numbers::pi);
      if (e.name == "twopi") return Value(2 * std::numbers::pi);
      if (e.name == "e" && !env.defined("e")) return Value(std::numbers::e);
      if (e.name == "clight") return Value(299792458.0);
      return env.get(e.name);
    }
    case Op::neg: {
      Datum a = eval(*e.args[0], env);
      if (auto v = std::get_if<Value>(&a)) return -*v;
      if (auto x = std::get_if<std::vector<double>>(&a)) {
        for (auto& c : *x) c = -c;
        return a;
      }
      throw CommandError(std::string("cannot negate a ") + datum_kind(a));
    }
    case Op::add:
    case Op::sub:
    case Op::mul:
    case Op::div:
    case Op::pow: return detail::arith(e.op, eval(*e.args[0], env), eval(*e.args[1], env));
    case Op::vec: {
      std::vector<double> v;
      for (const auto& a : e.args) v.push_back(eval_num(*a, env).num());
      return v;
    }
    case Op::call: {
      std::vector<Datum> args;
      for (const auto& a : e.args) args.push_back(eval(*a, env));
      auto num_arg = [&](std::size_t i) -> Value {
        if (auto v = std::get_if<Value>(&args[i])) return *v;
        throw CommandError(e.name + ": argument " + std::to_string(i + 1) + " is not a number");
      };
      if (args.size() == 1) {
        if (auto x = std::get_if<std::vector<double>>(&args[0])) {
          if (e.name == "sum" || e.name == "max" || e.name == "min" || e.name == "len") {
            if (e.name == "len") return Value(double(x->size()));
            if (x->empty()) throw CommandError(e.name + " of an empty vector");
            if (e.name == "sum") {
              double s = 0;
              for (double c : *x) s += c;
              return Value(s);
            }
            return Value(e.name == "max" ? *std::max_element(x->begin(), x->end())
                                         : *std::min_element(x->begin(), x->end()));
          }
          std::vector<double> r(x->size());
          for (std::size_t i = 0; i < r.size(); ++i) {
            Value o;
            if (!apply_function(e.name, Value((*x)[i]), o)) throw CommandError("unknown function '" + e.name + "'");
            r[i] = o.num();
          }
          return r;
        }
        Value o;
        if (apply_function(e.name, num_arg(0), o)) return o;
      }
      if (args.size() == 2) {
        if (e.name == "atan2") return Value(std::atan2(num_arg(0).num(), num_arg(1).num()));
        if (e.name == "max") return num_arg(0).num() >= num_arg(1).num() ? num_arg(0) : num_arg(1);
        if (e.name == "min") return num_arg(0).num() <= num_arg(1).num() ? num_arg(0) : num_arg(1);
        if (e.name == "pow") return pow(num_arg(0), num_arg(1));
      }
      throw CommandError("unknown function '" + e.name + "' with " + std::to_string(args.size()) + " argument(s)");
    }
  }
  throw CommandError("bad expression");
}

inline Value Element::value(const std::string& k, double dflt) const {
  const Attr* a = find(k);
  if (!a) return Value(dflt);
  const ExprPtr* e = std::get_if<ExprPtr>(&a->v);
  if (!e) throw CommandError("element '" + name + "': attribute '" + k + "' is not a number");
  if ((*e)->op == Expr::Op::lit) return (*e)->lit;
  if (!env) throw CommandError("element '" + name + "': attribute '" + k + "' needs an environment");
  return eval_num(**e, *env);
}

inline std::vector<Value> Element::list(const std::string& k) const {
  const Attr* a = find(k);
  if (!a) return {};
  std::vector<Value> out;
  auto one = [&](const ExprPtr& e) {
    if (e->op == Expr::Op::lit) return out.push_back(e->lit);
    if (!env) throw CommandError("element '" + name + "': attribute '" + k + "' needs an environment");
    Datum d = eval(*e, *env);
    if (auto v = std::get_if<Value>(&d)) return out.push_back(*v);
    if (auto x = std::get_if<std::vector<double>>(&d))
      for (double c : *x) out.push_back(c);
  };
  if (auto l = std::get_if<std::vector<ExprPtr>>(&a->v))
    for (const auto& e : *l) one(e);
  else if (auto e = std::get_if<ExprPtr>(&a->v))
    one(*e);
  return out;
}

// knobs ----------------------------------------------------------------------

// env[name] <- scalar(env[name]) + parameter series of X0.
inline void env_bind_knobs(Env& env, const std::vector<std::string>& names, const DescPtr& d) {
  for (const auto& n : names) {
    const int s = d->slot_of(n);
    if (s < d->nv()) throw CommandError("knob '" + n + "' is not a parameter of the map");
    const double v = env.num(n).num();
    env.set(n, Value(RTpsa::variable(d, s, v)));
  }
}

// Knobs back to plain scalars holding their constant part.
inline void env_restore_knobs(Env& env, const std::vector<std::string>& names) {
  for (const auto& n : names) env.set(n, env.num(n).scalar());
}

}  // namespace mad
