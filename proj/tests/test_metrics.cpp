#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "sgumlp/metrics.hpp"
#include "sgumlp/rng.hpp"

using namespace sgumlp;

namespace {

ConfusionMatrix from_rows(const std::vector<std::vector<std::size_t>>& rows) {
  ConfusionMatrix m(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t p = 0; p < rows.size(); ++p)
      for (std::size_t n = 0; n < rows[t][p]; ++n)
        m.accumulate(std::uint16_t(t + 1), std::uint16_t(p + 1));
  return m;
}

// Direct reimplementation of every statistic from the count table.
struct OracleStats {
  double oa = 0, aa = 0, kappa = 0;
  std::vector<double> f1;
};

OracleStats oracle_stats(const std::vector<std::vector<std::size_t>>& rows) {
  const std::size_t c = rows.size();
  double total = 0, diag = 0;
  std::vector<double> row_sum(c, 0), col_sum(c, 0);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      total += double(rows[i][j]);
      row_sum[i] += double(rows[i][j]);
      col_sum[j] += double(rows[i][j]);
      if (i == j) diag += double(rows[i][j]);
    }
  OracleStats s;
  s.oa = diag / total;
  double recall_sum = 0;
  for (std::size_t i = 0; i < c; ++i) recall_sum += double(rows[i][i]) / row_sum[i];
  s.aa = recall_sum / double(c);
  double pe = 0;
  for (std::size_t i = 0; i < c; ++i) pe += row_sum[i] * col_sum[i] / (total * total);
  s.kappa = (s.oa - pe) / (1.0 - pe);
  for (std::size_t i = 0; i < c; ++i) {
    const double tp = double(rows[i][i]);
    const double prec = col_sum[i] > 0 ? tp / col_sum[i] : 0.0;
    const double rec = row_sum[i] > 0 ? tp / row_sum[i] : 0.0;
    s.f1.push_back(prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0);
  }
  return s;
}

}  // namespace

TEST_CASE("frozen two-class example") {
  ConfusionMatrix m = from_rows({{50, 10}, {5, 35}});
  CHECK(overall_accuracy(m) == doctest::Approx(0.85).epsilon(1e-15));
  CHECK(average_accuracy(m) ==
        doctest::Approx((50.0 / 60.0 + 35.0 / 40.0) / 2.0).epsilon(1e-15));
  // p_e = (60*55 + 40*45) / 100^2 = 0.51, kappa = 0.34 / 0.49
  CHECK(kappa(m) == doctest::Approx(0.34 / 0.49).epsilon(1e-15));
  std::vector<double> f1 = f1_per_class(m);
  REQUIRE(f1.size() == 2);
  // class 1: precision 50/55, recall 50/60
  const double p1 = 50.0 / 55.0, r1 = 50.0 / 60.0;
  CHECK(f1[0] == doctest::Approx(2 * p1 * r1 / (p1 + r1)).epsilon(1e-15));
  const double p2 = 35.0 / 45.0, r2 = 35.0 / 40.0;
  CHECK(f1[1] == doctest::Approx(2 * p2 * r2 / (p2 + r2)).epsilon(1e-15));
  CHECK(f1[1] == doctest::Approx(0.8235294117647058).epsilon(1e-14));
}

TEST_CASE("perfect predictions score one everywhere") {
  ConfusionMatrix m = from_rows({{7, 0, 0}, {0, 3, 0}, {0, 0, 11}});
  CHECK(overall_accuracy(m) == 1.0);
  CHECK(average_accuracy(m) == 1.0);
  CHECK(kappa(m) == 1.0);
  for (double f : f1_per_class(m)) CHECK(f == 1.0);
}

TEST_CASE("uniform confusion gives chance-level averages") {
  ConfusionMatrix m = from_rows({{1, 1}, {1, 1}});
  CHECK(overall_accuracy(m) == 0.5);
  CHECK(average_accuracy(m) == 0.5);
  CHECK(kappa(m) == 0.0);
}

TEST_CASE("statistically independent predictions have zero kappa") {
  // rank-one table: counts = row_profile x col_profile
  const std::vector<std::size_t> row = {3, 5, 2};
  const std::vector<std::size_t> col = {4, 1, 7};
  std::vector<std::vector<std::size_t>> rows(3, std::vector<std::size_t>(3));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) rows[i][j] = row[i] * col[j];
  ConfusionMatrix m = from_rows(rows);
  CHECK(kappa(m) == 0.0);
}

TEST_CASE("metrics match a direct recomputation on random tables") {
  SplitMix64 rng(80);
  for (int iter = 0; iter < 1000; ++iter) {
    const std::size_t c = 2 + rng.below(5);
    std::vector<std::vector<std::size_t>> rows(c, std::vector<std::size_t>(c));
    for (auto& r : rows)
      for (auto& v : r) v = rng.below(20);
    // guarantee no empty row and a non-degenerate p_e
    for (std::size_t i = 0; i < c; ++i) rows[i][i] += 1 + rng.below(10);
    ConfusionMatrix m = from_rows(rows);
    OracleStats s = oracle_stats(rows);
    CHECK(std::abs(overall_accuracy(m) - s.oa) < 1e-12);
    CHECK(std::abs(average_accuracy(m) - s.aa) < 1e-12);
    CHECK(std::abs(kappa(m) - s.kappa) < 1e-12);
    std::vector<double> f1 = f1_per_class(m);
    for (std::size_t i = 0; i < c; ++i) CHECK(std::abs(f1[i] - s.f1[i]) < 1e-12);
    CHECK(kappa(m) <= overall_accuracy(m) + 1e-12);
  }
}

TEST_CASE("class relabeling permutes scores consistently") {
  ConfusionMatrix m = from_rows({{8, 2, 0}, {1, 5, 4}, {0, 3, 9}});
  // swap classes 1 and 3 everywhere
  ConfusionMatrix p = from_rows({{9, 3, 0}, {4, 5, 1}, {0, 2, 8}});
  CHECK(overall_accuracy(m) == doctest::Approx(overall_accuracy(p)).epsilon(1e-15));
  CHECK(average_accuracy(m) == doctest::Approx(average_accuracy(p)).epsilon(1e-15));
  CHECK(kappa(m) == doctest::Approx(kappa(p)).epsilon(1e-15));
  std::vector<double> f1m = f1_per_class(m);
  std::vector<double> f1p = f1_per_class(p);
  CHECK(f1m[0] == doctest::Approx(f1p[2]).epsilon(1e-15));
  CHECK(f1m[2] == doctest::Approx(f1p[0]).epsilon(1e-15));
}

TEST_CASE("scaling all counts leaves every metric unchanged") {
  const std::vector<std::vector<std::size_t>> base = {{6, 1, 2}, {0, 7, 1}, {2, 2, 5}};
  std::vector<std::vector<std::size_t>> tripled = base;
  for (auto& r : tripled)
    for (auto& v : r) v *= 3;
  ConfusionMatrix a = from_rows(base);
  ConfusionMatrix b = from_rows(tripled);
  CHECK(overall_accuracy(a) == doctest::Approx(overall_accuracy(b)).epsilon(1e-15));
  CHECK(average_accuracy(a) == doctest::Approx(average_accuracy(b)).epsilon(1e-15));
  CHECK(kappa(a) == doctest::Approx(kappa(b)).epsilon(1e-15));
}

TEST_CASE("zero-denominator F1 falls back to zero") {
  // class 2 never predicted and never correct: precision and recall both 0
  ConfusionMatrix m = from_rows({{5, 0}, {3, 0}});
  std::vector<double> f1 = f1_per_class(m);
  CHECK(f1[1] == 0.0);
  CHECK(f1[0] > 0.0);
}

TEST_CASE("degenerate tables raise") {
  ConfusionMatrix empty(3);
  CHECK_THROWS_AS(overall_accuracy(empty), MetricError);
  CHECK_THROWS_AS(average_accuracy(empty), MetricError);
  CHECK_THROWS_AS(kappa(empty), MetricError);

  ConfusionMatrix no_second(2);
  no_second.accumulate(1, 1);
  try {
    average_accuracy(no_second);
    FAIL("expected MetricError");
  } catch (const MetricError& e) {
    CHECK(std::string(e.what()).find("class 2") != std::string::npos);
  }

  // everything in one cell: p_e == 1
  ConfusionMatrix all_one(2);
  all_one.accumulate(1, 1);
  all_one.accumulate(1, 1);
  CHECK_THROWS_AS(kappa(all_one), MetricError);

  ConfusionMatrix m(2);
  CHECK_THROWS_AS(m.accumulate(0, 1), DataError);
  CHECK_THROWS_AS(m.accumulate(1, 3), DataError);
  CHECK_THROWS_AS(ConfusionMatrix(0), ConfigError);
}

TEST_CASE("merging tables adds counts") {
  ConfusionMatrix a = from_rows({{2, 1}, {0, 3}});
  ConfusionMatrix b = from_rows({{1, 0}, {2, 2}});
  ConfusionMatrix ab = a;
  ab.merge(b);
  CHECK(ab.count(0, 0) == 3);
  CHECK(ab.count(0, 1) == 1);
  CHECK(ab.count(1, 0) == 2);
  CHECK(ab.count(1, 1) == 5);
  CHECK(ab.total() == 11);
  ConfusionMatrix wrong(3);
  CHECK_THROWS_AS(ab.merge(wrong), DimensionError);
}

TEST_CASE("report renders percentages and exact machine lines") {
  ConfusionMatrix m = from_rows({{50, 10}, {5, 35}});
  std::string report = render_report(m, {"water", "urban soil"});
  CHECK(report.find("water F1 x100") != std::string::npos);
  CHECK(report.find("urban soil F1 x100") != std::string::npos);
  CHECK(report.find("OA x100") != std::string::npos);
  CHECK(report.find("85.00") != std::string::npos);
  CHECK(report.find("f1.urban_soil=") != std::string::npos);

  // machine lines parse back to the exact doubles
  std::istringstream lines(report.substr(report.find("oa=")));
  std::string line;
  double parsed_oa = -2, parsed_kappa = -2;
  while (std::getline(lines, line)) {
    if (line.rfind("oa=", 0) == 0) parsed_oa = std::stod(line.substr(3));
    if (line.rfind("kappa=", 0) == 0) parsed_kappa = std::stod(line.substr(6));
  }
  CHECK(parsed_oa == overall_accuracy(m));
  CHECK(parsed_kappa == kappa(m));
}

TEST_CASE("report formatting edge cases") {
  ConfusionMatrix perfect = from_rows({{4, 0}, {0, 4}});
  std::string report = render_report(perfect, default_class_names(2));
  CHECK(report.find("100.00") != std::string::npos);
  CHECK(report.find("class_1 F1 x100") != std::string::npos);
  CHECK(report.find("kappa=1") != std::string::npos);

  CHECK_THROWS_AS(render_report(perfect, {"only_one"}), ConfigError);

  // long names widen the column instead of truncating
  std::string long_name(40, 'x');
  std::string wide = render_report(perfect, {long_name, "y"});
  CHECK(wide.find(long_name + " F1 x100") != std::string::npos);
}
