#pragma once

// Runs parsed job statements against an environment.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "mad/engine.hpp"
#include "mad/latparse.hpp"
#include "mad/match.hpp"
#include "mad/optics.hpp"

namespace mad {

namespace fs = std::filesystem;

// Attributes of one command statement, with type checks and a check for
// leftovers.
class CmdArgs {
 public:
  CmdArgs(const lat::Statement& s, Env& env) : s_(s), env_(env), taken_(s.args.size(), false) {}

  const lat::Arg* find(const std::string& k) {
    for (std::size_t i = 0; i < s_.args.size(); ++i)
      if (s_.args[i].name == k) {
        taken_[i] = true;
        return &s_.args[i];
      }
    return nullptr;
  }
  bool has(const std::string& k) const {
    for (const auto& a : s_.args)
      if (a.name == k) return true;
    return false;
  }
  double num(const std::string& k, double dflt) {
    const lat::Arg* a = find(k);
    if (!a) return dflt;
    Datum d = eval(*a->value, env_);
    if (auto v = std::get_if<Value>(&d)) return v->num();
    bad(k, "a number");
  }
  int integer(const std::string& k, int dflt) {
    const double v = num(k, dflt);
    if (v != std::floor(v)) bad(k, "an integer");
    return static_cast<int>(v);
  }
  // bare names are taken as strings (sequence=ring, particle=proton)
  std::string str(const std::string& k, const std::string& dflt = "") {
    const lat::Arg* a = find(k);
    if (!a) return dflt;
    if (a->value->op == Expr::Op::str || a->value->op == Expr::Op::var) return a->value->name;
    bad(k, "a string");
  }
  // `name` alone or name=true/false/number
  bool flag(const std::string& k, bool dflt = false) {
    for (std::size_t i = 0; i < s_.args.size(); ++i) {
      const auto& a = s_.args[i];
      if (a.name.empty() && a.value->op == Expr::Op::var && a.value->name == k) {
        taken_[i] = true;
        return true;
      }
    }
    const lat::Arg* a = find(k);
    if (!a) return dflt;
    if (a->value->op == Expr::Op::var && (a->value->name == "true" || a->value->name == "false"))
      return a->value->name == "true";
    return num(k, 0) != 0;
  }
  std::vector<ExprPtr> positional() {
    std::vector<ExprPtr> out;
    for (std::size_t i = 0; i < s_.args.size(); ++i)
      if (s_.args[i].name.empty() && !taken_[i]) {
        taken_[i] = true;
        out.push_back(s_.args[i].value);
      }
    return out;
  }
  void finish() {
    for (std::size_t i = 0; i < s_.args.size(); ++i) {
      if (taken_[i]) continue;
      const auto& a = s_.args[i];
      if (!a.name.empty()) throw CommandError(s_.name + ": unknown attribute '" + a.name + "'");
      throw CommandError(s_.name + ": unexpected value '" + lat::unparse(*a.value) + "'");
    }
  }

 private:
  [[noreturn]] void bad(const std::string& k, const char* what) {
    throw CommandError(s_.name + ": attribute '" + k + "' expects " + what);
  }
  const lat::Statement& s_;
  Env& env_;
  std::vector<bool> taken_;
};

class Job {
 public:
  explicit Job(Env& env, std::ostream& out = std::cout) : env_(env), out_(&out) {}

  // receives the values of send statements
  std::function<void(const Datum&)> send;

  void run_source(const std::string& src, const fs::path& base = fs::current_path()) {
    auto prog = lat::parse(src);
    base_.push_back(base);
    struct Pop {
      std::vector<fs::path>& b;
      ~Pop() { b.pop_back(); }
    } pop{base_};
    execute(prog);
  }

  void run_file(const fs::path& p) {
    fs::path full = fs::weakly_canonical(base_.empty() ? p : base_.back() / p);
    if (!files_.insert(full).second) throw CommandError("call: '" + p.string() + "' includes itself");
    struct Erase {
      std::set<fs::path>& f;
      fs::path p;
      ~Erase() { f.erase(p); }
    } erase{files_, full};
    std::ifstream is(full);
    if (!is) throw CommandError("cannot open '" + p.string() + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    run_source(ss.str(), full.parent_path());
  }

  void execute(const std::vector<lat::Statement>& prog) {
    for (const auto& s : prog) {
      if (stopped_) return;
      statement(s);
    }
  }

  bool stopped() const { return stopped_; }
  // forget a stop or an unfinished match block
  void reset() {
    stopped_ = false;
    in_match_ = false;
  }

 private:
  using K = lat::Statement::Kind;

  void statement(const lat::Statement& s) {
    if (in_match_ && !(s.kind == K::command && (s.name == "vary" || s.name == "constraint" || s.name == "endmatch")))
      throw CommandError("'" + s.name + "' inside a match block");
    switch (s.kind) {
      case K::assign: return assign(s);
      case K::define: env_.define(s.name, define(s)); return;
      case K::line: env_.define(s.name, line(s)); return;
      case K::sequence: return sequence(s);
      case K::command: return command(s);
    }
  }

  void assign(const lat::Statement& s) {
    if (s.deferred) return env_.set_deferred(s.name, s.value);
    Datum d = eval(*s.value, env_);
    if (auto v = std::get_if<Value>(&d)) return env_.set(s.name, *v);
    if (auto t = std::get_if<std::string>(&d)) return env_.define(s.name, *t);
    throw CommandError("cannot assign a " + std::string(datum_kind(d)) + " to '" + s.name + "'");
  }

  void set_attr(Element& e, const lat::Arg& a) {
    if (a.name.empty()) throw CommandError("element '" + e.name + "': expected attr=value, got '" + lat::unparse(*a.value) + "'");
    if (a.value->op == Expr::Op::str) return e.set_str(a.name, a.value->name);
    if (a.deferred) {
      if (a.value->op == Expr::Op::vec) {
        e.attrs[a.name] = Attr{a.value->args, true};
        return;
      }
      return e.set(a.name, a.value, true);
    }
    Datum d = eval(*a.value, env_);
    if (auto v = std::get_if<Value>(&d)) return e.set(a.name, *v);
    if (auto x = std::get_if<std::vector<double>>(&d)) {
      std::vector<Value> vs(x->begin(), x->end());
      return e.set_list(a.name, vs);
    }
    throw CommandError("element '" + e.name + "': attribute '" + a.name + "' expects a number, got a " + datum_kind(d));
  }

  ElementPtr define(const lat::Statement& s) {
    ElementPtr e;
    if (is_kind(s.head)) {
      e = Element::make(s.head, s.name);
    } else if (auto p = env_.find(s.head); p && std::holds_alternative<ElementPtr>(*p)) {
      e = std::get<ElementPtr>(*p)->clone(s.name);
    } else {
      throw CommandError("'" + s.head + "' is neither an element kind nor a defined element");
    }
    e->env = &env_;
    for (const auto& a : s.args) set_attr(*e, a);
    return e;
  }

  std::vector<BLine::Item> items(const std::vector<lat::LineItem>& li, const std::string& owner) {
    std::vector<BLine::Item> out;
    for (const auto& it : li) {
      if (it.name.empty()) {
        out.push_back({BLine::make(owner + "_sub", items(it.sub, owner)), it.rep});
        continue;
      }
      const EnvEntry* p = env_.find(it.name);
      if (p && std::holds_alternative<ElementPtr>(*p))
        out.push_back({std::get<ElementPtr>(*p), it.rep});
      else if (p && std::holds_alternative<BLinePtr>(*p))
        out.push_back({std::get<BLinePtr>(*p), it.rep});
      else
        throw CommandError("line '" + owner + "': unknown element or line '" + it.name + "'");
    }
    return out;
  }

  BLinePtr line(const lat::Statement& s) { return BLine::make(s.name, items(s.items, s.name)); }

  void sequence(const lat::Statement& s) {
    CmdArgs a(s, env_);
    const Refer refer = parse_refer(a.str("refer", "centre"));
    const double l = a.num("l", -1);
    a.finish();
    std::vector<BLine::Item> placed;
    for (const auto& p : s.body) {
      ElementPtr e;
      if (p.kind == K::define) {
        e = define(p);
        env_.define(p.name, e);
      } else {
        for (const auto& x : p.args)
          if (x.name != "at") throw CommandError("sequence '" + s.name + "': placement of '" + p.name + "' takes only at=");
        e = env_.element(p.name)->clone(p.name);
        for (const auto& x : p.args) set_attr(*e, x);
      }
      placed.push_back({e, 1});
    }
    // MAD-X style: placements may come in any order
    auto entry = [&](const BLine::Item& it) {
      const auto& e = std::get<ElementPtr>(it.ref);
      return e->has("at") ? detail::entry_of(e->num("at"), e->length(), refer) : -INFINITY;
    };
    if (std::all_of(placed.begin(), placed.end(), [&](auto& it) { return std::get<ElementPtr>(it.ref)->has("at"); }))
      std::stable_sort(placed.begin(), placed.end(), [&](auto& x, auto& y) { return entry(x) < entry(y); });
    auto seq = build_sequence(s.name, *BLine::make(s.name, placed), refer, beam_, l);
    env_.define(s.name, seq);
  }

  SequencePtr seq_of(CmdArgs& a) {
    const std::string n = a.str("sequence");
    if (n.empty()) throw CommandError("missing sequence=");
    const EnvEntry* p = env_.find(n);
    if (p && std::holds_alternative<BLinePtr>(*p)) {
      auto seq = build_sequence(n, *std::get<BLinePtr>(*p), Refer::entry, beam_);
      env_.define(n, seq);
      return seq;
    }
    auto seq = env_.sequence(n);
    if (!explicit_beam_.count(seq.get()) && beam_) seq->beam = beam_;
    return seq;
  }

  void emit(CmdArgs& a, const std::string& dflt_name, MTable t) {
    const std::string name = a.str("table", dflt_name);
    const std::string file = a.str("file");
    const std::string format = a.str("format", "tfs");
    if (format != "tfs" && format != "csv") throw CommandError("unknown format '" + format + "'");
    a.finish();
    if (!file.empty()) {
      // outputs land in the working directory, calls resolve from the caller
      std::ofstream os(file);
      if (!os) throw CommandError("cannot write '" + file + "'");
      if (format == "csv")
        write_csv(t, os);
      else
        write_tfs(t, os);
    }
    env_.define(name, std::make_shared<MTable>(std::move(t)));
  }

  MTable ranged(MTable t, const std::string& range) {
    if (range.empty()) return t;
    return t.select_rows(t.range_rows(range));
  }

  State<double> coords(CmdArgs& a) {
    State<double> z{};
    const char* n[6] = {"x", "px", "y", "py", "t", "pt"};
    for (int i = 0; i < 6; ++i) z[i] = a.num(n[i], 0);
    return z;
  }

  void command(const lat::Statement& s) {
    CmdArgs a(s, env_);
    const std::string& c = s.name;
    if (c == "beam") return cmd_beam(a);
    if (c == "twiss") {
      auto seq = seq_of(a);
      TwissOptions o;
      o.order = a.integer("order", a.flag("chrom") ? 2 : 1);
      o.ring = !a.flag("line");
      o.guess = coords(a);
      o.beta11 = a.num("betx", 1);
      o.beta22 = a.num("bety", 1);
      o.alfa11 = a.num("alfx", 0);
      o.alfa22 = a.num("alfy", 0);
      o.dx = a.num("dx", 0);
      o.dpx = a.num("dpx", 0);
      o.dy = a.num("dy", 0);
      o.dpy = a.num("dpy", 0);
      const std::string range = a.str("range");
      auto r = twiss(*seq, o, &env_);
      return emit(a, "twiss", ranged(std::move(r.table), range));
    }
    if (c == "survey") {
      auto seq = seq_of(a);
      SurveyOptions o;
      o.range = a.str("range");
      return emit(a, "survey", survey(*seq, o).table);
    }
    if (c == "track") {
      auto seq = seq_of(a);
      TrackOptions o;
      o.nturn = a.integer("nturn", 1);
      o.dir = a.integer("dir", 1);
      o.range = a.str("range");
      const std::string ob = a.str("observe", "all");
      o.observe = ob == "all" ? Observe::all : ob == "last" ? Observe::last : ob == "none" ? Observe::none
                  : throw CommandError("track: unknown observe '" + ob + "'");
      auto flow = particle_flow(*seq->beam, {coords(a)});
      return emit(a, "track", track(*seq, flow, o));
    }
    if (c == "cofind") {
      auto seq = seq_of(a);
      auto orb = cofind(*seq, coords(a), a.integer("codim", 4));
      MTable t("cofind", "cofind");
      const char* n[6] = {"x", "px", "y", "py", "t", "pt"};
      for (int i = 0; i < 6; ++i) t.add_column(n[i], RealCol{orb.x[i]});
      t.set_header("iterations", double(orb.iterations));
      t.set_header("residual", orb.residual);
      return emit(a, "cofind", std::move(t));
    }
    if (c == "match") return match_begin(s, a);
    if (c == "vary" || c == "constraint" || c == "endmatch") return match_part(s, a);
    if (c == "call") {
      const std::string f = a.str("file");
      a.finish();
      if (f.empty()) throw CommandError("call: missing file=");
      return run_file(f);
    }
    if (c == "value") {
      for (const auto& e : a.positional()) *out_ << lat::unparse(*e) << " = " << show(eval(*e, env_)) << "\n";
      return a.finish();
    }
    if (c == "send") {
      auto ps = a.positional();
      a.finish();
      if (!send) throw CommandError("send: no client connected");
      for (const auto& e : ps) send(eval(*e, env_));
      return;
    }
    if (c == "write") {
      const std::string tn = a.str("table");
      if (tn.empty()) throw CommandError("write: missing table=");
      MTable t = *env_.table(tn);
      if (a.str("file").empty()) throw CommandError("write: missing file=");
      return emit(a, tn, std::move(t));
    }
    if (c == "cycle") {
      auto seq = seq_of(a);
      const std::string st = a.str("start");
      a.finish();
      env_.define(seq->name, mad::cycle(*seq, st));
      return;
    }
    if (c == "stop" || c == "exit") {
      a.finish();
      stopped_ = true;
      return;
    }
    // name, attr=...; updates an existing element
    if (auto p = env_.find(c); p && std::holds_alternative<ElementPtr>(*p)) {
      for (const auto& x : s.args) set_attr(*std::get<ElementPtr>(*p), x);
      return;
    }
    throw CommandError("unknown command '" + c + "'");
  }

  void cmd_beam(CmdArgs& a) {
    auto b = std::make_shared<Beam>(Beam::make(a.str("particle", "positron"), 1e9));
    if (a.has("energy"))
      b->set_energy(a.num("energy", 0));
    else if (a.has("pc"))
      b->set_pc(a.num("pc", 0));
    else if (a.has("gamma"))
      b->set_gamma(a.num("gamma", 0));
    else
      b->set_energy(1);
    if (a.has("sequence")) {
      auto seq = env_.sequence(a.str("sequence"));
      seq->beam = b;
      explicit_beam_.insert(seq.get());
    } else {
      beam_ = b;
    }
    a.finish();
    env_.define("beam", b);
  }

  static std::string show(const Datum& d) {
    if (auto v = std::get_if<Value>(&d)) return lat::fmt_num(v->num());
    if (auto s = std::get_if<std::string>(&d)) return "\"" + *s + "\"";
    if (auto x = std::get_if<std::vector<double>>(&d)) {
      std::string r = "{";
      for (std::size_t i = 0; i < x->size(); ++i) r += (i ? ", " : "") + lat::fmt_num((*x)[i]);
      return r + "}";
    }
    return "table " + std::get<TablePtr>(d)->name();
  }

  // match block ---------------------------------------------------------------

  struct Pending {
    lat::Statement cmd;
    MatchProblem<int> p;
  };

  void match_begin(const lat::Statement& s, CmdArgs& a) {
    Pending m;
    m.p.fmin = a.num("fmin", 1e-10);
    m.p.bisec = a.integer("bisec", 3);
    m.p.maxcall = a.integer("maxcall", 100);
    m.p.info = a.integer("info", 0);
    m.p.out = out_;
    m.cmd = s;
    m.cmd.name = a.str("command");
    if (m.cmd.name.empty()) throw CommandError("match: missing command=");
    static const std::set<std::string> own{"command", "fmin", "bisec", "maxcall", "info"};
    std::erase_if(m.cmd.args, [](const lat::Arg& x) { return own.count(x.name) > 0; });
    pending_ = std::move(m);
    in_match_ = true;
  }

  void match_part(const lat::Statement& s, CmdArgs& a) {
    if (!in_match_) throw CommandError("'" + s.name + "' outside a match block");
    auto& p = pending_.p;
    if (s.name == "vary") {
      const std::string n = a.str("name");
      if (n.empty()) throw CommandError("vary: missing name=");
      p.variables.push_back(env_variable(env_, n, a.num("rtol", 1e-8), a.num("min", -INFINITY), a.num("max", INFINITY)));
      return a.finish();
    }
    if (s.name == "constraint") {
      MatchEquality<int> e;
      e.name = a.str("name");
      const lat::Arg* x = a.find("expr");
      if (!x) throw CommandError("constraint: missing expr=");
      ExprPtr ex = x->value;
      if (e.name.empty()) e.name = lat::unparse(*ex);
      e.tol = a.num("tol", 0);
      e.weight = a.num("weight", 1);
      a.finish();
      Env* env = &env_;
      e.expr = [ex, env](const int&) { return eval_num(*ex, *env).num(); };
      p.equalities.push_back(std::move(e));
      return;
    }
    a.finish();
    in_match_ = false;
    const lat::Statement cmd = pending_.cmd;
    p.command = [this, cmd] {
      command(cmd);
      return 0;
    };
    auto r = match(p);
    MTable t("match", "match");
    StrCol names;
    RealCol vals;
    for (std::size_t k = 0; k < p.variables.size(); ++k) {
      names.push_back(p.variables[k].name);
      vals.push_back(r.values[k]);
    }
    t.add_column("name", names);
    t.add_column("value", vals);
    t.set_header("status", r.status);
    t.set_header("penalty", r.penalty);
    t.set_header("calls", double(r.calls));
    t.set_header("iterations", double(r.iterations));
    env_.define("match", std::make_shared<MTable>(std::move(t)));
  }

  Env& env_;
  std::ostream* out_;
  BeamPtr beam_;
  std::set<const Sequence*> explicit_beam_;
  std::vector<fs::path> base_;
  std::set<fs::path> files_;
  bool stopped_ = false;
  bool in_match_ = false;
  Pending pending_;
};

}  // namespace mad
