#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "mad/geom.hpp"
#include "mad/mtable.hpp"

using namespace mad;

namespace {

MTable sample(std::size_t n = 6) {
  MTable t("tw", "twiss");
  StrCol name{"$start", "qf", "d", "qd", "d", "$end"};
  name.resize(n, "x");
  RealCol s(n), beta(n);
  CplxCol z(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = 0.1 * i;
    beta[i] = 10 + std::sin(i) / 3;
    z[i] = {std::cos(i * 0.7), -std::sin(i * 1.3) * 1e-3};
  }
  t.add_column("name", name);
  t.add_column("s", s);
  t.add_column("beta11", beta);
  t.add_column("f3000", z);
  t.set_header("q1", 0.31);
  t.set_header("title", std::string("a \"quoted\" title"));
  return t;
}

}  // namespace

TEST(MTable, ColumnsAndHeaders) {
  auto t = sample();
  EXPECT_EQ(t.nrow(), 6u);
  EXPECT_EQ(t.colnames(), (std::vector<std::string>{"name", "s", "beta11", "f3000"}));
  EXPECT_EQ(t.header_num("q1"), 0.31);
  EXPECT_THROW(t.header_num("title"), Error);
  EXPECT_THROW(t.col("name"), Error);
  EXPECT_THROW(t.add_column("bad", RealCol(3)), Error);
  EXPECT_THROW(t.col("nope"), Error);
}

TEST(MTable, OccurrenceIndexing) {
  auto t = sample();
  EXPECT_EQ(t.row_of("d"), 2u);
  EXPECT_EQ(t.row_of("d[2]"), 4u);
  EXPECT_EQ(t.row_of("d", 2), 4u);
  EXPECT_THROW(t.row_of("d[3]"), Error);
  EXPECT_EQ(t.row_of("#e"), 5u);
}

TEST(MTable, ConstantAndChainedGenerators) {
  auto t = sample();
  t.addcol("one", [](const MTable&, std::size_t) { return 1.0; });
  for (double v : t.col("one")) EXPECT_EQ(v, 1.0);
  // b depends on a which is declared later: resolved on first read
  t.addcol("b", [](const MTable& m, std::size_t i) { return 2 * m.col("a")[i]; });
  t.addcol("a", [](const MTable& m, std::size_t i) { return m.col("s")[i] + 1; });
  for (std::size_t i = 0; i < t.nrow(); ++i) EXPECT_EQ(t.col("b")[i], 2 * (0.1 * i + 1));
  // generators follow their inputs
  std::get<RealCol>(t.mutable_column("s"))[3] = 100;
  EXPECT_EQ(t.col("b")[3], 202);
}

TEST(MTable, CyclicGeneratorsAreReported) {
  auto t = sample();
  t.addcol("p", [](const MTable& m, std::size_t i) { return m.col("q")[i]; });
  t.addcol("q", [](const MTable& m, std::size_t i) { return m.col("p")[i]; });
  EXPECT_THROW(t.col("p"), Error);
  // the table stays usable
  EXPECT_EQ(t.col("s").size(), 6u);
}

TEST(MTable, GlobalFrameColumnsFromOrientation) {
  // global-frame beta offsets built from per-row orientation matrices, as for
  // plotting a beta function over a survey layout
  auto t = sample();
  std::vector<Mat3> W;
  RealCol X(t.nrow()), Z(t.nrow());
  for (std::size_t i = 0; i < t.nrow(); ++i) {
    W.push_back(rot_y(-0.1 * i));
    X[i] = -0.01 * i;
    Z[i] = 0.5 * i;
  }
  t.add_column("x", X);
  t.add_column("z", Z);
  std::valarray<double> B = t.vec("beta11") / 3.0 + 3.0;
  std::vector<Vec3> V;
  for (std::size_t i = 0; i < W.size(); ++i) V.push_back(W[i] * Vec3(B[i], 0, 0));
  t.addcol("betx_X", [V](const MTable& m, std::size_t i) { return V[i][0] + m.col("x")[i]; });
  t.addcol("betx_Z", [V](const MTable& m, std::size_t i) { return V[i][2] + m.col("z")[i]; });
  for (std::size_t i = 0; i < t.nrow(); ++i) {
    const double b = t.col("beta11")[i] / 3 + 3;
    EXPECT_NEAR(t.col("betx_X")[i], b * std::cos(0.1 * i) + X[i], 1e-14);
    EXPECT_NEAR(t.col("betx_Z")[i], b * std::sin(0.1 * i) + Z[i], 1e-14);
  }
}

TEST(MTable, VectorArithmeticMatchesLoop) {
  auto t = sample();
  std::valarray<double> v = t.vec("beta11") * t.vec("s") - 2.0 * t.vec("s");
  for (std::size_t i = 0; i < t.nrow(); ++i)
    EXPECT_EQ(v[i], t.col("beta11")[i] * t.col("s")[i] - 2.0 * t.col("s")[i]);
}

TEST(MTable, Ranges) {
  auto t = sample();
  EXPECT_EQ(t.select_range("").nrow(), 0u);
  auto r = t.select_range("qf/qd");
  EXPECT_EQ(r.strcol("name"), (StrCol{"qf", "d", "qd"}));
  // wraparound: rotated rows
  auto w = t.select_range("qd/qf");
  EXPECT_EQ(w.strcol("name"), (StrCol{"qd", "d", "$end", "$start", "qf"}));
  EXPECT_EQ(w.col("s")[3], 0.0);
  EXPECT_EQ(w.header_num("q1"), 0.31);
}

TEST(MTable, TfsRoundTripIsExact) {
  auto t = sample();
  t.addcol("g", [](const MTable& m, std::size_t i) { return std::exp(m.col("s")[i]) / 3; });
  std::stringstream ss;
  write_tfs(t, ss);
  const std::string text = ss.str();
  auto back = read_tfs(ss);
  EXPECT_EQ(back.name(), "tw");
  EXPECT_EQ(back.type(), "twiss");
  EXPECT_EQ(back.colnames(), t.colnames());
  EXPECT_EQ(back.header_num("q1"), 0.31);
  EXPECT_EQ(std::get<std::string>(back.header("title")), "a \"quoted\" title");
  EXPECT_EQ(back.strcol("name"), t.strcol("name"));
  for (const char* c : {"s", "beta11", "g"}) EXPECT_EQ(back.col(c), t.col(c)) << c;
  EXPECT_EQ(back.cplxcol("f3000"), t.cplxcol("f3000"));
  std::stringstream again;
  write_tfs(back, again);
  EXPECT_EQ(again.str(), text);
  EXPECT_NE(text.find("* name s beta11 f3000_re f3000_im g"), std::string::npos);
}

TEST(MTable, EmptyTableRoundTrip) {
  MTable t("empty");
  std::stringstream ss;
  write_tfs(t, ss);
  auto back = read_tfs(ss);
  EXPECT_EQ(back.name(), "empty");
  EXPECT_EQ(back.nrow(), 0u);
  EXPECT_TRUE(back.colnames().empty());
}

TEST(MTable, MalformedTfsNamesTheLine) {
  std::stringstream ss("@ NAME %s \"x\"\n* a b\n$ %le %le\n 1 2\n 3\n");
  try {
    read_tfs(ss);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("line 5"), std::string::npos) << e.what();
  }
  std::stringstream bad("* a\n$ %le\n 1x\n");
  EXPECT_THROW(read_tfs(bad), Error);
}

TEST(MTable, CsvExport) {
  auto t = sample(6);
  std::ostringstream os;
  write_csv(t, os);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "name,s,beta11,f3000_re,f3000_im");
  std::getline(is, line);
  EXPECT_EQ(line.substr(0, 9), "$start,0,");
}
