#pragma once

// Pipe protocol of `madng serve`. Text headers, raw little-endian doubles.
//
//   EXEC <n>\n<n bytes>          job script (client -> server)
//   NUM <double>\n
//   STR <n>\n<n bytes>
//   VEC <n>\n<8n bytes>
//   TBL <ncols> <nrows>\n then per column COL <name> <num|str|cplx>\n + payload
//       num: 8*nrows bytes, cplx: 16*nrows (re, im), str: per row <len>\n<bytes>
//   DONE\n
//   ERR <n>\n<n bytes>

#include <bit>
#include <cstdint>
#include <cstring>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mad/job.hpp"

namespace mad::proto {

struct TblCol {
  std::string name;
  std::string type;  // num, str, cplx
  std::vector<double> num;  // cplx interleaved
  std::vector<std::string> str;
  bool operator==(const TblCol& o) const {
    return name == o.name && type == o.type && str == o.str && num.size() == o.num.size() &&
           (num.empty() || std::memcmp(num.data(), o.num.data(), 8 * num.size()) == 0);
  }
};

struct Frame {
  enum Type { exec, num, str, vec, tbl, done, err, bad };
  Type type = bad;
  std::string text;  // exec/str/err payload, bad: reason
  double value = 0;
  std::vector<double> data;
  std::size_t nrows = 0;
  std::vector<TblCol> cols;

  bool operator==(const Frame& o) const {
    if (type != o.type || text != o.text || nrows != o.nrows || cols != o.cols || data.size() != o.data.size())
      return false;
    // bit-exact, NaN payloads included
    if (std::memcmp(&value, &o.value, 8) != 0) return false;
    return data.empty() || std::memcmp(data.data(), o.data.data(), 8 * data.size()) == 0;
  }
};

// encoding -------------------------------------------------------------------

inline void put_doubles(std::string& out, const double* d, std::size_t n) {
  const std::size_t at = out.size();
  out.resize(at + 8 * n);
  if constexpr (std::endian::native == std::endian::little) {
    if (n) std::memcpy(out.data() + at, d, 8 * n);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t u;
      std::memcpy(&u, d + i, 8);
      for (int b = 0; b < 8; ++b) out[at + 8 * i + b] = static_cast<char>(u >> (8 * b));
    }
  }
}

inline double get_double(const char* p) {
  std::uint64_t u = 0;
  for (int b = 0; b < 8; ++b) u |= std::uint64_t(static_cast<unsigned char>(p[b])) << (8 * b);
  double d;
  std::memcpy(&d, &u, 8);
  return d;
}

inline std::string encode(const Frame& f) {
  std::string o;
  auto sized = [&](const char* tag, const std::string& s) { o += tag + (" " + std::to_string(s.size())) + "\n" + s; };
  switch (f.type) {
    case Frame::exec: sized("EXEC", f.text); break;
    case Frame::str: sized("STR", f.text); break;
    case Frame::err: sized("ERR", f.text); break;
    case Frame::done: o = "DONE\n"; break;
    case Frame::num: {
      char b[40];
      std::snprintf(b, sizeof b, "%.17g", f.value);
      o = std::string("NUM ") + b + "\n";
      break;
    }
    case Frame::vec:
      o = "VEC " + std::to_string(f.data.size()) + "\n";
      put_doubles(o, f.data.data(), f.data.size());
      break;
    case Frame::tbl:
      o = "TBL " + std::to_string(f.cols.size()) + " " + std::to_string(f.nrows) + "\n";
      for (const auto& c : f.cols) {
        o += "COL " + c.name + " " + c.type + "\n";
        if (c.type == "str")
          for (const auto& s : c.str) o += std::to_string(s.size()) + "\n" + s;
        else
          put_doubles(o, c.num.data(), c.num.size());
      }
      break;
    case Frame::bad: throw Error("cannot encode a malformed frame");
  }
  return o;
}

inline Frame num_frame(double v) {
  Frame f;
  f.type = Frame::num;
  f.value = v;
  return f;
}
inline Frame text_frame(Frame::Type t, std::string s) {
  Frame f;
  f.type = t;
  f.text = std::move(s);
  return f;
}
inline Frame vec_frame(std::vector<double> v) {
  Frame f;
  f.type = Frame::vec;
  f.data = std::move(v);
  return f;
}

inline Frame table_frame(const MTable& t) {
  Frame f;
  f.type = Frame::tbl;
  f.nrows = t.nrow();
  for (const auto& n : t.colnames()) {
    if (n.find_first_of(" \n") != std::string::npos) throw Error("column name '" + n + "' cannot be sent");
    TblCol c;
    c.name = n;
    const Column& col = t.column(n);
    if (auto r = std::get_if<RealCol>(&col)) {
      c.type = "num";
      c.num = *r;
    } else if (auto s = std::get_if<StrCol>(&col)) {
      c.type = "str";
      c.str = *s;
    } else {
      c.type = "cplx";
      for (auto z : std::get<CplxCol>(col)) {
        c.num.push_back(z.real());
        c.num.push_back(z.imag());
      }
    }
    f.cols.push_back(std::move(c));
  }
  return f;
}

inline Frame datum_frame(const Datum& d) {
  if (auto v = std::get_if<Value>(&d)) return num_frame(v->num());
  if (auto s = std::get_if<std::string>(&d)) return text_frame(Frame::str, *s);
  if (auto x = std::get_if<std::vector<double>>(&d)) return vec_frame(*x);
  return table_frame(*std::get<TablePtr>(d));
}

// decoding -------------------------------------------------------------------

// Accepts bytes in arbitrary chunks and yields whole frames. A header it does
// not understand is dropped up to its newline and reported as a bad frame.
class Reader {
 public:
  void feed(const char* p, std::size_t n) { buf_.append(p, n); }
  void feed(const std::string& s) { buf_ += s; }

  std::optional<Frame> next() {
    std::size_t pos = 0;
    auto f = parse(pos);
    if (f) buf_.erase(0, pos);
    return f;
  }

  std::size_t pending() const { return buf_.size(); }

 private:
  // size as written by the encoder: decimal digits only
  static bool size_of(const std::string& s, std::size_t& out) {
    if (s.empty() || s.size() > 15) return false;
    out = 0;
    for (char c : s) {
      if (c < '0' || c > '9') return false;
      out = out * 10 + std::size_t(c - '0');
    }
    return true;
  }
  static std::vector<std::string> words(const std::string& s) {
    std::vector<std::string> w;
    std::size_t i = 0;
    while (i < s.size()) {
      const std::size_t j = s.find(' ', i);
      w.push_back(s.substr(i, j == std::string::npos ? std::string::npos : j - i));
      if (j == std::string::npos) break;
      i = j + 1;
    }
    return w;
  }
  bool line(std::size_t& pos, std::string& out) const {
    const std::size_t nl = buf_.find('\n', pos);
    if (nl == std::string::npos) return false;
    out = buf_.substr(pos, nl - pos);
    pos = nl + 1;
    return true;
  }
  bool bytes(std::size_t& pos, std::size_t n, std::string& out) const {
    if (buf_.size() - pos < n) return false;
    out = buf_.substr(pos, n);
    pos += n;
    return true;
  }
  bool doubles(std::size_t& pos, std::size_t n, std::vector<double>& out) const {
    if (n > (buf_.size() - pos) / 8) return false;
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = get_double(buf_.data() + pos + 8 * i);
    pos += 8 * n;
    return true;
  }

  std::optional<Frame> parse(std::size_t& pos) const {
    std::string head;
    if (!line(pos, head)) return std::nullopt;
    Frame f;
    auto bad = [&](const std::string& why) {
      f.type = Frame::bad;
      f.text = why + ": '" + head.substr(0, 40) + "'";
      return f;
    };
    const auto w = words(head);
    const std::string& tag = w.empty() ? head : w[0];
    std::size_t n = 0, m = 0;
    if (tag == "DONE" && w.size() == 1) {
      f.type = Frame::done;
      return f;
    }
    if (tag == "NUM" && w.size() == 2) {
      char* end = nullptr;
      f.value = std::strtod(w[1].c_str(), &end);
      if (w[1].empty() || *end) return bad("bad number");
      f.type = Frame::num;
      return f;
    }
    if ((tag == "EXEC" || tag == "STR" || tag == "ERR") && w.size() == 2) {
      if (!size_of(w[1], n)) return bad("bad length");
      f.type = tag == "EXEC" ? Frame::exec : tag == "STR" ? Frame::str : Frame::err;
      if (!bytes(pos, n, f.text)) return std::nullopt;
      return f;
    }
    if (tag == "VEC" && w.size() == 2) {
      if (!size_of(w[1], n)) return bad("bad length");
      f.type = Frame::vec;
      if (!doubles(pos, n, f.data)) return std::nullopt;
      return f;
    }
    if (tag == "TBL" && w.size() == 3) {
      if (!size_of(w[1], n) || !size_of(w[2], m)) return bad("bad table size");
      f.type = Frame::tbl;
      f.nrows = m;
      for (std::size_t c = 0; c < n; ++c) {
        std::string ch;
        if (!line(pos, ch)) return std::nullopt;
        const auto cw = words(ch);
        if (cw.size() != 3 || cw[0] != "COL") return bad("bad column header");
        TblCol col{cw[1], cw[2], {}, {}};
        if (col.type == "num" || col.type == "cplx") {
          if (!doubles(pos, col.type == "num" ? m : 2 * m, col.num)) return std::nullopt;
        } else if (col.type == "str") {
          for (std::size_t r = 0; r < m; ++r) {
            std::string len, s;
            std::size_t k = 0;
            if (!line(pos, len)) return std::nullopt;
            if (!size_of(len, k)) return bad("bad string length");
            if (!bytes(pos, k, s)) return std::nullopt;
            col.str.push_back(std::move(s));
          }
        } else {
          return bad("bad column type");
        }
        f.cols.push_back(std::move(col));
      }
      return f;
    }
    return bad("unknown frame");
  }

  std::string buf_;
};

// server ---------------------------------------------------------------------

using ReadFn = std::function<std::size_t(char*, std::size_t)>;  // 0 at end of input
using WriteFn = std::function<void(const std::string&)>;

// Runs EXEC requests until the input ends. State persists across requests.
inline void serve(const ReadFn& read, const WriteFn& write, Env& env, std::ostream& log = std::cerr) {
  Reader rd;
  Job job(env, log);
  job.send = [&](const Datum& d) { write(encode(datum_frame(d))); };
  char buf[65536];
  while (true) {
    while (auto f = rd.next()) {
      if (f->type != Frame::exec) {
        write(encode(text_frame(Frame::err, f->type == Frame::bad ? "malformed frame: " + f->text
                                                                  : "expected an EXEC frame")));
        continue;
      }
      try {
        job.reset();
        job.run_source(f->text);
        write(encode(Frame{Frame::done}));
      } catch (const std::exception& e) {
        write(encode(text_frame(Frame::err, e.what())));
      }
    }
    const std::size_t n = read(buf, sizeof buf);
    if (n == 0) {
      if (rd.pending()) write(encode(text_frame(Frame::err, "truncated frame at end of input")));
      break;
    }
    rd.feed(buf, n);
  }
}

}  // namespace mad::proto
