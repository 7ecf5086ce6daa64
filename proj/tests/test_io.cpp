#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "test_util.hpp"

using namespace lmest;
namespace fs = std::filesystem;

namespace {

class IoTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("lmest_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string put(const std::string& name, const std::string& text) const {
    std::ofstream(path(name), std::ios::binary) << text;
    return path(name);
  }

  static std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  // Parse error message of reading `text` as responses.
  std::string parse_error(const std::string& text) const {
    try {
      io::read_responses(put("bad.csv", text));
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Parse) << e.what();
      return e.what();
    }
    ADD_FAILURE() << "no error for:\n" << text;
    return {};
  }

  fs::path dir_;
};

}  // namespace

TEST(Format, ShortestRoundTrip) {
  std::mt19937_64 gen(1);
  std::normal_distribution<double> nd(0.0, 10.0);
  for (int m = 0; m < 1000; ++m) {
    const double v = nd(gen) * std::pow(10.0, m % 7 - 3);
    EXPECT_EQ(*io::parse_double(io::format_double(v)), v);
  }
  EXPECT_EQ(io::format_double(0.1), "0.1");
  EXPECT_EQ(io::format_double(1.0), "1");
}

TEST_F(IoTest, ResponsesRoundTripBitForBit) {
  const auto sc = scenario_preset("basic-s4");
  const auto data = gen_panel(sc, 3);
  io::ResponseData d{data.responses, io::sequential_ids(sc.n), {}};
  io::write_responses(path("r.csv"), d);
  const auto back = io::read_responses(path("r.csv"), sc.cats);
  EXPECT_EQ(back.panel.values(), data.responses.values());
  io::write_responses(path("r2.csv"), back);
  EXPECT_EQ(slurp(path("r.csv")), slurp(path("r2.csv")));
}

TEST_F(IoTest, MissingCellsAndCategoryInference) {
  const auto p = put("r.csv",
                     "unit_id,time,a,b\n"
                     "u1,1,0,2\n"
                     "u1,2,,1\n"
                     "u2,2,1,\n"
                     "u2,1,1,0\n");
  const auto d = io::read_responses(p);
  EXPECT_EQ(d.unit_ids, (std::vector<std::string>{"u1", "u2"}));
  EXPECT_EQ(d.panel.cats(), (std::vector<int>{2, 3}));
  EXPECT_EQ(d.panel(0, 1, 0), kMissing);
  EXPECT_EQ(d.panel(1, 1, 1), kMissing);
  EXPECT_EQ(d.panel(1, 0, 0), 1);  // rows may come in any time order
  EXPECT_EQ(io::read_responses(p, std::vector<int>{4, 3}).panel.cats()[0], 4);
  EXPECT_THROW(io::read_responses(p, std::vector<int>{2, 2}), Error);
  // canonical output sorts by unit then time
  EXPECT_EQ(io::format_responses(d), "unit_id,time,a,b\nu1,1,0,2\nu1,2,,1\nu2,1,1,0\nu2,2,1,\n");
}

TEST_F(IoTest, ParseErrorsCarryLineNumbers) {
  EXPECT_NE(parse_error("unit_id,time,a\n1,1,0\n1,2,x\n").find("bad.csv:3:"), std::string::npos);
  EXPECT_NE(parse_error("unit_id,time,a\n1,1,0\n\n1,2,0,1\n").find(":4: expected 3 fields"), std::string::npos);
  EXPECT_NE(parse_error("unit_id,time,a\n1,0,0\n").find(":2: time"), std::string::npos);
  EXPECT_NE(parse_error("unit_id,time,a\n1,1,0\n1,1,1\n").find(":3: duplicate"), std::string::npos);
  EXPECT_NE(parse_error("unit_id,time,a\n1,1,-2\n").find(":2:"), std::string::npos);
  EXPECT_NE(parse_error("id,t,a\n1,1,0\n").find(":1: header"), std::string::npos);
  EXPECT_NE(parse_error("unit_id,time,a\n1,1,\"0\"\n").find(":2: quoted"), std::string::npos);
  EXPECT_NE(parse_error("unit_id,time,a\n1,1,0\n1,2,0\n2,1,1\n").find("balanced"), std::string::npos);
  EXPECT_NE(parse_error("").find("missing header"), std::string::npos);
  try {
    io::read_responses(path("nope.csv"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Io);
  }
}

TEST_F(IoTest, CovariatesRoundTrip) {
  const auto sc = scenario_preset("cov-s1");
  const auto data = gen_panel(sc, 4);
  const auto ids = io::sequential_ids(sc.n);
  io::write_covariates(path("x.csv"), *data.covariates, ids);
  const auto back = io::read_covariates(path("x.csv"), ids, sc.T);
  EXPECT_EQ(back.series(), data.covariates->series());
  EXPECT_EQ(back.names(), data.covariates->names());
  io::write_covariates(path("x2.csv"), back, ids);
  EXPECT_EQ(slurp(path("x.csv")), slurp(path("x2.csv")));

  const auto sel = io::read_covariates(path("x.csv"), ids, sc.T, std::vector<int>{1}, std::vector<int>{});
  EXPECT_EQ(sel.q1(), 1);
  EXPECT_EQ(sel.q2(), 0);
  EXPECT_EQ(sel.init_design()(3, 0), data.covariates->series()(3 * sc.T, 1));
}

TEST_F(IoTest, CovariateErrors) {
  const std::vector<std::string> ids{"1", "2"};
  auto err = [&](const std::string& text, int T = 2) {
    try {
      io::read_covariates(put("x.csv", text), ids, T);
    } catch (const Error& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(err("unit_id,time,x\n1,1,0.5\n1,2,\n2,1,1\n2,2,1\n").find(":3: covariate x"), std::string::npos);
  EXPECT_NE(err("unit_id,time,x\n1,1,0.5\n1,2,nan\n2,1,1\n2,2,1\n").find(":3:"), std::string::npos);
  EXPECT_NE(err("unit_id,time,x\n2,1,0.5\n2,2,1\n1,1,1\n1,2,1\n").find("unit ids"), std::string::npos);
  EXPECT_NE(err("unit_id,time,x\n1,1,0.5\n1,2,1\n2,1,1\n2,2,1\n", 3).find("occasion count"), std::string::npos);
}

TEST_F(IoTest, ParameterFilesRoundTrip) {
  const auto sc = scenario_preset("basic-s4");
  io::write_params(path("basic"), sc.truth);
  for (const char* f : {"phi.csv", "pi.csv", "Pi.csv"}) EXPECT_TRUE(fs::exists(dir_ / "basic" / f)) << f;
  const auto phi = io::read_phi(path("basic/phi.csv"));
  for (int j = 0; j < sc.r; ++j) EXPECT_EQ(phi.phi[j], sc.truth.measurement.phi[j]);
  EXPECT_EQ(slurp(path("basic/Pi.csv")), "from,to_1,to_2,to_3\n1,0.6,0.2,0.2\n2,0.2,0.6,0.2\n3,0.2,0.2,0.6\n");

  const auto cov = scenario_preset("cov-s1");
  io::write_params(path("cov"), cov.truth, {"a", "b"}, {"a", "b"});
  const std::string gamma = slurp(path("cov/gamma.csv"));
  EXPECT_EQ(gamma.substr(0, gamma.find('\n')), "from,term,to_1,to_2");
  EXPECT_NE(gamma.find("1,intercept,,"), std::string::npos);
  EXPECT_NE(gamma.find("2,b,1,\n"), std::string::npos);
  EXPECT_EQ(slurp(path("cov/beta.csv")), "term,state_2\nintercept,0\na,0.5\nb,1\n");

  std::mt19937_64 gen(5);
  ModelParams diff{testutil::random_phi(3, {2}, gen),
                   testutil::random_regression(3, 1, 1, TransitionLayout::Difference, gen)};
  io::write_params(path("diff"), diff);
  EXPECT_TRUE(fs::exists(dir_ / "diff" / "gamma_intercept.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "diff" / "gamma_slope.csv"));
}

TEST_F(IoTest, PhiFileValidation) {
  EXPECT_THROW(io::read_phi(put("p.csv", "item,category,state_1\n1,0,0.5\n1,1,0.4\n")), Error);
  EXPECT_THROW(io::read_phi(put("p.csv", "item,category,state_1\n1,0,0.5\n1,2,0.5\n")), Error);
  EXPECT_THROW(io::read_phi(put("p.csv", "item,category,state_1\n2,0,0.5\n2,1,0.5\n")), Error);
  const auto ok = io::read_phi(put("p.csv", "item,category,state_1,state_2\n1,1,0.3,1\n1,0,0.7,0\n"));
  EXPECT_EQ(ok.k, 2);
  EXPECT_EQ(ok.phi[0](1, 0), 0.3);
}

TEST_F(IoTest, SectionFiles) {
  const auto m = io::read_sections(put("s.csv", "item,section\n3,ADL\n1,IADL\n2,ADL\n"), 3);
  EXPECT_EQ(m.names, (std::vector<std::string>{"ADL", "IADL"}));
  EXPECT_EQ(m.section_of, (std::vector<int>{1, 0, 0}));
  EXPECT_THROW(io::read_sections(put("s.csv", "item,section\n1,A\n"), 2), Error);
  EXPECT_THROW(io::read_sections(put("s.csv", "item,section\n1,A\n1,B\n2,A\n"), 2), Error);
  EXPECT_THROW(io::read_sections(put("s.csv", "item,section\n1,A\n5,B\n"), 2), Error);
}
