#pragma once

// Lattice/job language: tokens, statements, printing back.

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "mad/error.hpp"
#include "mad/lattice.hpp"

namespace mad::lat {

struct Token {
  enum Kind { ident, number, string, punct, end };
  Kind kind = end;
  std::string text;  // identifiers lower-cased
  double num = 0;
  int line = 1, column = 1;
};

inline std::string describe(const Token& t) {
  switch (t.kind) {
    case Token::end: return "end of input";
    case Token::string: return "string \"" + t.text + "\"";
    default: return "'" + t.text + "'";
  }
}

inline std::vector<Token> tokenize(const std::string& src) {
  std::vector<Token> out;
  std::size_t i = 0;
  int line = 1, col = 1;
  auto adv = [&](std::size_t n = 1) {
    for (; n && i < src.size(); --n, ++i) {
      if (src[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
  };
  auto at = [&](std::size_t k) { return i + k < src.size() ? src[i + k] : '\0'; };
  while (i < src.size()) {
    const char c = src[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      adv();
      continue;
    }
    if (c == '!' || (c == '/' && at(1) == '/')) {
      while (i < src.size() && src[i] != '\n') adv();
      continue;
    }
    if (c == '/' && at(1) == '*') {
      const int l0 = line, c0 = col;
      adv(2);
      while (i < src.size() && !(src[i] == '*' && at(1) == '/')) adv();
      if (i >= src.size()) throw ParseError("unterminated comment", l0, c0);
      adv(2);
      continue;
    }
    Token t;
    t.line = line;
    t.column = col;
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < src.size() && (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_' || src[j] == '.' ||
                                src[j] == '$'))
        ++j;
      t.kind = Token::ident;
      for (std::size_t k = i; k < j; ++k) t.text += static_cast<char>(std::tolower(static_cast<unsigned char>(src[k])));
      adv(j - i);
    } else if (std::isdigit(static_cast<unsigned char>(c)) || (c == '.' && std::isdigit(static_cast<unsigned char>(at(1))))) {
      const char* b = src.c_str() + i;
      char* e = nullptr;
      t.kind = Token::number;
      t.num = std::strtod(b, &e);
      t.text.assign(b, static_cast<std::size_t>(e - b));
      adv(static_cast<std::size_t>(e - b));
      if (i < src.size() && (std::isalpha(static_cast<unsigned char>(src[i])) || src[i] == '_'))
        throw ParseError("malformed number '" + t.text + src[i] + "'", t.line, t.column);
    } else if (c == '"' || c == '\'') {
      std::size_t j = i + 1;
      while (j < src.size() && src[j] != c && src[j] != '\n') ++j;
      if (j >= src.size() || src[j] != c) throw ParseError("unterminated string", line, col);
      t.kind = Token::string;
      t.text = src.substr(i + 1, j - i - 1);
      adv(j + 1 - i);
    } else if (c == ':' && at(1) == '=') {
      t.kind = Token::punct;
      t.text = ":=";
      adv(2);
    } else if (std::string("=:,;()+-*/^{}").find(c) != std::string::npos) {
      t.kind = Token::punct;
      t.text = std::string(1, c);
      adv();
    } else {
      throw ParseError(std::string("unexpected character '") + c + "'", line, col);
    }
    out.push_back(std::move(t));
  }
  Token e;
  e.line = line;
  e.column = col;
  out.push_back(e);
  return out;
}

// statements -----------------------------------------------------------------

struct Arg {
  std::string name;  // empty for positional values and flags
  ExprPtr value;
  bool deferred = false;
};

struct LineItem {
  std::string name;  // empty for a sub-list
  int rep = 1;
  std::vector<LineItem> sub;
};

struct Statement {
  enum class Kind { assign, define, line, sequence, command };
  Kind kind = Kind::command;
  std::string name;  // assigned/defined name, or the command
  std::string head;  // element kind or parent of a definition
  ExprPtr value;
  bool deferred = false;
  std::vector<Arg> args;
  std::vector<LineItem> items;
  std::vector<Statement> body;  // placements of a sequence
  int line = 0, column = 0;
};

inline bool same(const Expr& a, const Expr& b) {
  if (a.op != b.op || a.name != b.name || a.args.size() != b.args.size()) return false;
  if (a.op == Expr::Op::lit && a.lit.num() != b.lit.num()) return false;
  for (std::size_t i = 0; i < a.args.size(); ++i)
    if (!same(*a.args[i], *b.args[i])) return false;
  return true;
}
inline bool same(const ExprPtr& a, const ExprPtr& b) { return (!a && !b) || (a && b && same(*a, *b)); }

inline bool operator==(const Arg& a, const Arg& b) {
  return a.name == b.name && a.deferred == b.deferred && same(a.value, b.value);
}
inline bool operator==(const LineItem& a, const LineItem& b) {
  return a.name == b.name && a.rep == b.rep && a.sub == b.sub;
}
// positions are not compared
inline bool operator==(const Statement& a, const Statement& b) {
  return a.kind == b.kind && a.name == b.name && a.head == b.head && same(a.value, b.value) &&
         a.deferred == b.deferred && a.args == b.args && a.items == b.items && a.body == b.body;
}

// parser ---------------------------------------------------------------------

class Parser {
 public:
  explicit Parser(const std::string& src) : toks_(tokenize(src)) {}

  std::vector<Statement> program() {
    std::vector<Statement> out;
    while (peek().kind != Token::end) out.push_back(statement());
    return out;
  }

  ExprPtr expression() { return sum(); }

 private:
  const Token& peek(int k = 0) const { return toks_[std::min(pos_ + k, toks_.size() - 1)]; }
  const Token& next() { return toks_[std::min(pos_++, toks_.size() - 1)]; }
  bool is(const char* p, int k = 0) const { return peek(k).kind == Token::punct && peek(k).text == p; }
  bool accept(const char* p) {
    if (!is(p)) return false;
    ++pos_;
    return true;
  }
  [[noreturn]] void fail(const std::string& what) const {
    const Token& t = peek();
    if (t.kind == Token::end) throw ParseError(what + ", got end of input (unterminated statement?)", t.line, t.column);
    throw ParseError(what + ", got " + describe(t), t.line, t.column);
  }
  void expect(const char* p, const char* where) {
    if (!accept(p)) fail(std::string("expected '") + p + "' " + where);
  }
  std::string ident(const char* what) {
    if (peek().kind != Token::ident) fail(std::string("expected ") + what);
    return next().text;
  }

  Statement statement() {
    Statement s;
    s.line = peek().line;
    s.column = peek().column;
    s.name = ident("a statement");
    if (is("=") || is(":=")) {
      s.kind = Statement::Kind::assign;
      s.deferred = next().text == ":=";
      s.value = expression();
    } else if (accept(":")) {
      s.head = ident("element kind, parent or 'line'/'sequence' after ':'");
      if (s.head == "line") {
        s.kind = Statement::Kind::line;
        expect("=", "after 'line'");
        expect("(", "to open the line");
        s.items = items();
      } else {
        s.kind = s.head == "sequence" ? Statement::Kind::sequence : Statement::Kind::define;
        s.args = args();
      }
    } else if (accept("(")) {
      // name(a, b) is a command with positional values
      if (!is(")")) {
        do s.args.push_back({"", expression(), false});
        while (accept(","));
      }
      expect(")", "to close the argument list");
    } else {
      s.args = args();
    }
    expect(";", "at end of statement");
    if (s.kind == Statement::Kind::sequence) {
      while (true) {
        if (peek().kind == Token::ident && peek().text == "endsequence") {
          next();
          expect(";", "after 'endsequence'");
          break;
        }
        if (peek().kind == Token::end) fail("expected 'endsequence' to close sequence '" + s.name + "'");
        Statement p = statement();
        if (p.kind != Statement::Kind::define && p.kind != Statement::Kind::command)
          throw ParseError("only element placements are allowed inside a sequence", p.line, p.column);
        if (p.kind == Statement::Kind::define && p.head == "sequence")
          throw ParseError("nested sequence", p.line, p.column);
        s.body.push_back(std::move(p));
      }
    }
    return s;
  }

  std::vector<Arg> args() {
    std::vector<Arg> out;
    while (accept(",")) {
      Arg a;
      if (peek().kind == Token::ident && (is("=", 1) || is(":=", 1))) {
        a.name = next().text;
        a.deferred = next().text == ":=";
        a.value = expression();
      } else {
        a.value = expression();
      }
      out.push_back(std::move(a));
    }
    return out;
  }

  std::vector<LineItem> items() {
    std::vector<LineItem> out;
    do {
      LineItem it;
      if (peek().kind == Token::number && is("*", 1)) {
        const Token& n = next();
        if (n.num != std::floor(n.num) || n.num < 0) throw ParseError("repetition must be a non-negative integer", n.line, n.column);
        it.rep = static_cast<int>(n.num);
        next();
      }
      if (accept("("))
        it.sub = items();
      else
        it.name = ident("element or line name");
      out.push_back(std::move(it));
    } while (accept(","));
    expect(")", "to close the line");
    return out;
  }

  // + - < * / < unary - < ^
  ExprPtr sum() {
    ExprPtr a = product();
    while (is("+") || is("-")) {
      const bool add = next().text == "+";
      a = Expr::node(add ? Expr::Op::add : Expr::Op::sub, {a, product()});
    }
    return a;
  }
  ExprPtr product() {
    ExprPtr a = unary();
    while (is("*") || is("/")) {
      const bool mul = next().text == "*";
      a = Expr::node(mul ? Expr::Op::mul : Expr::Op::div, {a, unary()});
    }
    return a;
  }
  ExprPtr unary() {
    if (accept("-")) return Expr::node(Expr::Op::neg, {unary()});
    if (accept("+")) return unary();
    return power();
  }
  ExprPtr power() {
    ExprPtr a = primary();
    if (accept("^")) return Expr::node(Expr::Op::pow, {a, unary()});
    return a;
  }
  ExprPtr primary() {
    const Token& t = peek();
    switch (t.kind) {
      case Token::number: next(); return Expr::number(Value(t.num));
      case Token::string: next(); return Expr::string(t.text);
      case Token::ident: {
        std::string n = next().text;
        if (!accept("(")) return Expr::var(std::move(n));
        std::vector<ExprPtr> a;
        if (!is(")")) {
          do a.push_back(expression());
          while (accept(","));
        }
        expect(")", ("to close the call of '" + n + "'").c_str());
        return Expr::node(Expr::Op::call, std::move(a), std::move(n));
      }
      default: break;
    }
    if (accept("(")) {
      ExprPtr e = expression();
      expect(")", "to close '('");
      return e;
    }
    if (accept("{")) {
      std::vector<ExprPtr> a;
      if (!is("}")) {
        do a.push_back(expression());
        while (accept(","));
      }
      expect("}", "to close '{'");
      return Expr::node(Expr::Op::vec, std::move(a));
    }
    fail("expected expression");
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

inline std::vector<Statement> parse(const std::string& src) { return Parser(src).program(); }

inline ExprPtr parse_expr(const std::string& src) {
  Parser p(src);
  return p.expression();
}

// printing -------------------------------------------------------------------

// shortest decimal that reads back to the same double
inline std::string fmt_num(double v) {
  char buf[40];
  for (int p = 1; p <= 17; ++p) {
    std::snprintf(buf, sizeof buf, "%.*g", p, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline int prec(const Expr& e) {
  switch (e.op) {
    case Expr::Op::add:
    case Expr::Op::sub: return 1;
    case Expr::Op::mul:
    case Expr::Op::div: return 2;
    case Expr::Op::neg: return 3;
    case Expr::Op::pow: return 4;
    case Expr::Op::lit: return e.lit.num() < 0 ? 0 : 5;
    default: return 5;
  }
}

inline std::string unparse(const Expr& e) {
  using Op = Expr::Op;
  auto wrap = [](const Expr& x, bool p) { return p ? "(" + unparse(x) + ")" : unparse(x); };
  auto list = [](const std::vector<ExprPtr>& a) {
    std::string s;
    for (std::size_t i = 0; i < a.size(); ++i) s += (i ? ", " : "") + unparse(*a[i]);
    return s;
  };
  const int p = prec(e);
  switch (e.op) {
    case Op::lit: return fmt_num(e.lit.num());
    case Op::str: return e.name.find('"') == std::string::npos ? "\"" + e.name + "\"" : "'" + e.name + "'";
    case Op::var: return e.name;
    case Op::call: return e.name + "(" + list(e.args) + ")";
    case Op::vec: return "{" + list(e.args) + "}";
    case Op::neg: return "-" + wrap(*e.args[0], prec(*e.args[0]) < 3);
    case Op::pow: return wrap(*e.args[0], prec(*e.args[0]) <= 4) + "^" + wrap(*e.args[1], prec(*e.args[1]) < 3);
    default: {
      const char* o = e.op == Op::add ? " + " : e.op == Op::sub ? " - " : e.op == Op::mul ? "*" : "/";
      return wrap(*e.args[0], prec(*e.args[0]) < p) + o + wrap(*e.args[1], prec(*e.args[1]) <= p);
    }
  }
}

inline std::string unparse(const std::vector<LineItem>& items) {
  std::string s = "(";
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) s += ", ";
    if (items[i].rep != 1) s += std::to_string(items[i].rep) + "*";
    s += items[i].name.empty() ? unparse(items[i].sub) : items[i].name;
  }
  return s + ")";
}

inline std::string unparse(const Statement& s) {
  using K = Statement::Kind;
  auto args = [&] {
    std::string r;
    for (const auto& a : s.args) {
      r += ", ";
      if (!a.name.empty()) r += a.name;
      if (a.value) r += (a.name.empty() ? "" : a.deferred ? ":=" : "=") + unparse(*a.value);
    }
    return r;
  };
  switch (s.kind) {
    case K::assign: return s.name + (s.deferred ? " := " : " = ") + unparse(*s.value) + ";";
    case K::line: return s.name + ": line = " + unparse(s.items) + ";";
    case K::define: return s.name + ": " + s.head + args() + ";";
    case K::sequence: {
      std::string r = s.name + ": sequence" + args() + ";\n";
      for (const auto& p : s.body) r += "  " + unparse(p) + "\n";
      return r + "endsequence;";
    }
    default: return s.name + args() + ";";
  }
}

inline std::string unparse(const std::vector<Statement>& prog) {
  std::string r;
  for (const auto& s : prog) r += unparse(s) + "\n";
  return r;
}

}  // namespace mad::lat
