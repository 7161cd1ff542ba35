#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "icjm/data.hpp"
#include "icjm/simulate.hpp"

using namespace icjm;

namespace {

const char* kTable1Style =
    "id,start,end,status,z1\n"
    "1,0,0.3,0,1.1\n"
    "1,0.3,0.9,0,1.2\n"
    "2,0,0.2,0,2.1\n"
    "2,0.2,0.5,0,2.2\n"
    "2,0.5,0.8,0,2.3\n"
    "2,0.8,1.4,1,0\n";

}  // namespace

TEST_CASE("long format parsing") {
  SUBCASE("interval subject with three sampling rows") {
    const Dataset ds = parse_long_csv_text(kTable1Style);
    REQUIRE(ds.n() == 2);
    const Subject& s2 = ds.subjects[1];
    CHECK(s2.longitudinal.size() == 3);
    CHECK(s2.status == CensoringStatus::Interval);
    CHECK(s2.t_left == doctest::Approx(0.8));
    CHECK(s2.t_right == doctest::Approx(1.4));
    CHECK(s2.longitudinal[0].time == 0.0);
    CHECK(s2.longitudinal[2].values[0] == doctest::Approx(2.3));
  }
  SUBCASE("trailing status-0 row means right censoring at its end") {
    const Dataset ds = parse_long_csv_text(kTable1Style);
    const Subject& s1 = ds.subjects[0];
    CHECK(s1.status == CensoringStatus::Right);
    CHECK(s1.t_left == doctest::Approx(0.9));
    CHECK(std::isinf(s1.t_right));
  }
  SUBCASE("sentinel inf terminal row") {
    const Dataset ds = parse_long_csv_text(
        "id,start,end,status,z1\n"
        "7,0,5,0,0.5\n"
        "7,5,inf,1,0\n");
    CHECK(ds.subjects[0].status == CensoringStatus::Right);
    CHECK(ds.subjects[0].t_left == doctest::Approx(5.0));
    CHECK(ds.subjects[0].longitudinal.size() == 1);
  }
  SUBCASE("exact, left and interval classification") {
    const Dataset ds = parse_long_csv_text(
        "id,start,end,status,z1\n"
        "a,0,1,0,0.1\n"
        "a,2,2,1,0\n"
        "b,0,3,1,0\n"
        "c,1,4,1,0\n");
    CHECK(ds.subjects[0].status == CensoringStatus::Exact);
    CHECK(ds.subjects[1].status == CensoringStatus::Left);
    CHECK(ds.subjects[2].status == CensoringStatus::Interval);
  }
  SUBCASE("end before start is rejected with the row number") {
    CHECK_THROWS_WITH_AS(parse_long_csv_text("id,start,end,status,z1\n"
                                             "1,2,1,0,0\n"),
                         doctest::Contains("row 2"), std::runtime_error);
  }
  SUBCASE("unknown status code is rejected with the row number") {
    CHECK_THROWS_WITH_AS(parse_long_csv_text("id,start,end,status,z1\n"
                                             "1,0,1,7,0\n"),
                         doctest::Contains("row 2"), std::runtime_error);
  }
  SUBCASE("non-monotone observation times name the id") {
    CHECK_THROWS_WITH_AS(parse_long_csv_text("id,start,end,status,z1\n"
                                             "w,0.5,0.9,0,0\n"
                                             "w,0.2,0.5,0,0\n"
                                             "w,0.9,inf,1,0\n"),
                         doctest::Contains("w"), std::runtime_error);
  }
  SUBCASE("covariate columns are picked up in numeric order") {
    const Dataset ds = parse_long_csv_text(
        "id,start,end,status,z1,x2,x1,w1\n"
        "1,0,1,0,0.5,20,10,3\n"
        "1,1,inf,1,0,20,10,3\n");
    CHECK(ds.p == 2);
    CHECK(ds.pz == 1);
    CHECK(ds.subjects[0].x[0] == 10.0);
    CHECK(ds.subjects[0].x[1] == 20.0);
    CHECK(ds.subjects[0].long_fixed[0] == 3.0);
  }
}

TEST_CASE("validate") {
  SUBCASE("generated study draws validate cleanly") {
    SimScenario scn;
    scn.design = StudyDesign::Study1;
    scn.n = 40;
    scn.seed = 5;
    auto [ds, truth] = generate(scn);
    CHECK(validate(ds).ok());
  }
  SUBCASE("observation beyond the event interval is a finding") {
    Dataset ds = parse_long_csv_text(kTable1Style);
    ds.subjects[1].longitudinal.push_back({5.0, Vec::Constant(1, 0.0)});
    const auto rep = validate(ds);
    REQUIRE(rep.findings.size() == 1);
    CHECK(rep.findings[0].find("beyond") != std::string::npos);
  }
  SUBCASE("dimension mismatch is a finding") {
    Dataset ds = parse_long_csv_text(kTable1Style);
    ds.subjects[0].longitudinal[0].values = Vec::Zero(3);
    CHECK(!validate(ds).ok());
  }
  SUBCASE("status inconsistent with endpoints is a finding") {
    Dataset ds = parse_long_csv_text(kTable1Style);
    ds.subjects[0].status = CensoringStatus::Exact;
    CHECK(!validate(ds).ok());
  }
}

TEST_CASE("midpoint imputation") {
  Dataset ds = parse_long_csv_text(
      "id,start,end,status,z1\n"
      "a,0,1,0,0.1\n"
      "a,2,4,1,0\n"
      "b,0,4,1,0\n"
      "c,0,2,0,0.2\n"
      "c,5,inf,1,0\n");
  const Dataset imp = midpoint_impute(ds);
  CHECK(imp.subjects[0].status == CensoringStatus::Exact);
  CHECK(imp.subjects[0].t_left == doctest::Approx(3.0));
  CHECK(imp.subjects[1].status == CensoringStatus::Exact);
  CHECK(imp.subjects[1].t_left == doctest::Approx(2.0));
  CHECK(imp.subjects[2].status == CensoringStatus::Right);
  CHECK(imp.subjects[2].t_left == doctest::Approx(5.0));
  CHECK(validate(imp).ok());
}

TEST_CASE("round trip through the csv writer") {
  SimScenario scn;
  scn.design = StudyDesign::Study2a;
  scn.n = 30;
  scn.seed = 9;
  auto [ds, truth] = generate(scn);
  const Dataset back = parse_long_csv_text(write_long_csv_text(ds));
  REQUIRE(back.n() == ds.n());
  CHECK(back.p == ds.p);
  CHECK(back.q == ds.q);
  CHECK(back.pz == ds.pz);
  for (int i = 0; i < ds.n(); ++i) {
    const Subject& a = ds.subjects[i];
    const Subject& b = back.subjects[i];
    CHECK(a.status == b.status);
    CHECK(a.t_left == doctest::Approx(b.t_left).epsilon(1e-12));
    if (std::isfinite(a.t_right))
      CHECK(a.t_right == doctest::Approx(b.t_right).epsilon(1e-12));
    REQUIRE(a.longitudinal.size() == b.longitudinal.size());
    for (size_t k = 0; k < a.longitudinal.size(); ++k) {
      CHECK(a.longitudinal[k].time ==
            doctest::Approx(b.longitudinal[k].time).epsilon(1e-12));
      CHECK(a.longitudinal[k].values[0] ==
            doctest::Approx(b.longitudinal[k].values[0]).epsilon(1e-12));
    }
    for (int j = 0; j < ds.p; ++j) CHECK(a.x[j] == doctest::Approx(b.x[j]).epsilon(1e-12));
  }
}

TEST_CASE("n0 is the non-right-censored count") {
  SimScenario scn;
  scn.design = StudyDesign::Study1;
  scn.n = 50;
  scn.seed = 77;
  auto [ds, truth] = generate(scn);
  int right = 0;
  for (const auto& s : ds.subjects)
    if (s.status == CensoringStatus::Right) ++right;
  CHECK(ds.n0() == ds.n() - right);
}
