#include <gtest/gtest.h>

#include <random>

#include "mad/protocol.hpp"

using mad::Env;
using mad::MTable;
using mad::RealCol;
using mad::StrCol;
using namespace mad::proto;

namespace {

const char* ring_src = R"(
kqf = 0.29601;
kqd = -0.30242;
qf: quadrupole, l=1, k1:=kqf;
qd: quadrupole, l=1, k1:=kqd;
mb: sbend, l=2, angle=2*pi/50;
d: drift, l=1;
cell: line = (qf, d, mb, d, qd, d, mb, d);
ring: line = (25*cell);
)";

std::vector<Frame> decode_all(const std::string& s, std::mt19937& rng, int maxchunk) {
  Reader rd;
  std::vector<Frame> out;
  std::uniform_int_distribution<int> len(0, maxchunk);
  std::size_t i = 0;
  while (i < s.size()) {
    const std::size_t n = std::min<std::size_t>(len(rng), s.size() - i);
    rd.feed(s.data() + i, n);
    i += n;
    while (auto f = rd.next()) out.push_back(std::move(*f));
  }
  EXPECT_EQ(rd.pending(), 0u);
  return out;
}

// request bytes in, response bytes out
std::string session(Env& env, const std::string& in, std::size_t chunk = 7) {
  std::size_t pos = 0;
  std::string out;
  serve([&](char* b, std::size_t n) {
          const std::size_t k = std::min({n, chunk, in.size() - pos});
          std::memcpy(b, in.data() + pos, k);
          pos += k;
          return k;
        },
        [&](const std::string& s) { out += s; }, env);
  return out;
}

std::vector<Frame> frames(const std::string& s) {
  Reader rd;
  rd.feed(s);
  std::vector<Frame> out;
  while (auto f = rd.next()) out.push_back(std::move(*f));
  EXPECT_EQ(rd.pending(), 0u);
  return out;
}

std::string exec(const std::string& script) { return encode(text_frame(Frame::exec, script)); }

}  // namespace

TEST(Protocol, Encodings) {
  EXPECT_EQ(encode(num_frame(1.5)), "NUM 1.5\n");
  EXPECT_EQ(encode(text_frame(Frame::str, "a\nb")), "STR 3\na\nb");
  EXPECT_EQ(encode(Frame{Frame::done}), "DONE\n");
  const std::string v = encode(vec_frame({1.0}));
  EXPECT_EQ(v.substr(0, 6), "VEC 1\n");
  // 1.0 little-endian
  EXPECT_EQ(v.substr(6), std::string("\0\0\0\0\0\0\xf0\x3f", 8));
  MTable t("t");
  t.add_column("name", StrCol{"a", "bc"});
  t.add_column("x", RealCol{0.5, -2});
  EXPECT_EQ(encode(table_frame(t)), "TBL 2 2\nCOL name str\n1\na2\nbcCOL x num\n" +
                                        std::string("\0\0\0\0\0\0\xe0\x3f\0\0\0\0\0\0\0\xc0", 16));
}

TEST(Protocol, NumRoundTripsDoubles) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20000; ++i) {
    std::uint64_t u = rng();
    double d;
    std::memcpy(&d, &u, 8);
    if (!std::isfinite(d)) continue;
    const auto f = frames(encode(num_frame(d)));
    ASSERT_EQ(f.size(), 1u);
    EXPECT_TRUE(f[0] == num_frame(d)) << d;
  }
}

// random frame corpora decode identically whatever the read-chunk boundaries
TEST(Protocol, FuzzChunkBoundaries) {
  std::mt19937 rng(11);
  std::mt19937_64 bits(5);
  std::uniform_int_distribution<int> kind(0, 7), small(0, 6), byte(0, 255);
  auto rnd_double = [&] {
    std::uint64_t u = bits();
    double d;
    std::memcpy(&d, &u, 8);
    return d;
  };
  auto rnd_text = [&] {
    std::string s(small(rng) * 3, '\0');
    for (auto& c : s) c = static_cast<char>(byte(rng));
    return s;
  };
  int splits = 0;
  for (int corpus = 0; corpus < 1000; ++corpus) {
    std::vector<Frame> want;
    std::string wire;
    const int nf = 1 + small(rng);
    for (int k = 0; k < nf; ++k) {
      Frame f;
      switch (kind(rng)) {
        case 0: f = num_frame(std::ldexp(double(bits() % 1000001) - 5e5, int(bits() % 400) - 200)); break;
        case 1: f = text_frame(Frame::str, rnd_text()); break;
        case 2: f = text_frame(Frame::exec, rnd_text()); break;
        case 3: f = text_frame(Frame::err, rnd_text()); break;
        case 4: f = Frame{Frame::done}; break;
        case 5: {
          std::vector<double> v(small(rng) * 5);
          for (auto& x : v) x = rnd_double();  // NaN payloads included
          f = vec_frame(std::move(v));
          break;
        }
        default: {
          f.type = Frame::tbl;
          f.nrows = small(rng);
          const int nc = small(rng);
          for (int c = 0; c < nc; ++c) {
            TblCol col;
            col.name = "c" + std::to_string(c);
            col.type = c % 3 == 0 ? "str" : c % 3 == 1 ? "num" : "cplx";
            if (col.type == "str")
              for (std::size_t r = 0; r < f.nrows; ++r) col.str.push_back(rnd_text());
            else
              for (std::size_t r = 0; r < f.nrows * (col.type == "num" ? 1 : 2); ++r) col.num.push_back(rnd_double());
            f.cols.push_back(std::move(col));
          }
        }
      }
      wire += encode(f);
      want.push_back(std::move(f));
    }
    for (int s = 0; s < 100; ++s, ++splits) {
      const auto got = decode_all(wire, rng, 1 + s % 17);
      ASSERT_EQ(got.size(), want.size());
      for (std::size_t k = 0; k < got.size(); ++k) ASSERT_TRUE(got[k] == want[k]) << "corpus " << corpus << " frame " << k;
    }
  }
  EXPECT_EQ(splits, 100000);
}

TEST(Protocol, BadHeaderResyncs) {
  const std::string wire = "HELLO there\n" + encode(num_frame(2)) + "VEC x\n" + "NUM 1e\n" + encode(Frame{Frame::done});
  const auto f = frames(wire);
  ASSERT_EQ(f.size(), 5u);
  EXPECT_EQ(f[0].type, Frame::bad);
  EXPECT_EQ(f[1].value, 2);
  EXPECT_EQ(f[2].type, Frame::bad);
  EXPECT_EQ(f[3].type, Frame::bad);
  EXPECT_EQ(f[4].type, Frame::done);
}

TEST(Serve, ScalarAndDone) {
  Env env;
  const auto f = frames(session(env, exec("send(1.5);")));
  ASSERT_EQ(f.size(), 2u);
  EXPECT_EQ(f[0].type, Frame::num);
  EXPECT_EQ(f[0].value, 1.5);
  EXPECT_EQ(f[1].type, Frame::done);
}

// three twiss columns as vectors, then the table
TEST(Serve, TwissColumnsThenTable) {
  Env env;
  const std::string script = std::string(ring_src) +
                             "twiss, sequence=ring;\n"
                             "send(twiss.s, twiss.beta11, twiss.beta22);\n"
                             "send(twiss);\n";
  const auto f = frames(session(env, exec(script), 4096));
  ASSERT_EQ(f.size(), 5u);
  auto tw = env.table("twiss");
  const char* cols[3] = {"s", "beta11", "beta22"};
  for (int i = 0; i < 3; ++i) {
    ASSERT_EQ(f[i].type, Frame::vec);
    const auto& c = tw->col(cols[i]);
    ASSERT_EQ(f[i].data.size(), c.size());
    EXPECT_EQ(std::memcmp(f[i].data.data(), c.data(), 8 * c.size()), 0);
  }
  ASSERT_EQ(f[3].type, Frame::tbl);
  EXPECT_EQ(f[3].nrows, tw->nrow());
  EXPECT_EQ(f[3].cols.size(), tw->colnames().size());
  EXPECT_EQ(f[3].cols[0].name, "name");
  EXPECT_EQ(f[3].cols[0].str, tw->strcol("name"));
  for (const auto& c : f[3].cols)
    if (c.type == "num") EXPECT_EQ(c.num, tw->col(c.name)) << c.name;
  EXPECT_EQ(f[4].type, Frame::done);
}

TEST(Serve, ErrorsKeepConnection) {
  Env env;
  const std::string in = "GARBAGE\n" + exec("x = ;") + exec("frob;") + exec("x = 2; send(x*3);") +
                         encode(num_frame(1)) + exec("send(x);");
  const auto f = frames(session(env, in, 3));
  ASSERT_EQ(f.size(), 8u);
  EXPECT_EQ(f[0].type, Frame::err);
  EXPECT_NE(f[0].text.find("malformed"), std::string::npos);
  EXPECT_EQ(f[1].type, Frame::err);
  EXPECT_NE(f[1].text.find("line 1, column 5"), std::string::npos);
  EXPECT_EQ(f[2].type, Frame::err);
  EXPECT_NE(f[2].text.find("unknown command 'frob'"), std::string::npos);
  EXPECT_EQ(f[3].value, 6);
  EXPECT_EQ(f[4].type, Frame::done);
  EXPECT_EQ(f[5].type, Frame::err);
  EXPECT_EQ(f[6].value, 2);
  EXPECT_EQ(f[7].type, Frame::done);
}

TEST(Serve, TruncatedInput) {
  Env env;
  const auto f = frames(session(env, "EXEC 40\nx = 1;"));
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f[0].type, Frame::err);
  EXPECT_NE(f[0].text.find("truncated"), std::string::npos);
}
