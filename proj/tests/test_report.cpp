#include "fixtures.hpp"

#include "defuse/report.hpp"

#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <random>

using namespace defuse;

namespace {

const ColumnSummary* find(const std::vector<ColumnSummary>& s, const std::string& name) {
    for (const auto& c : s) {
        if (c.name == name) {
            return &c;
        }
    }
    return nullptr;
}

}  // namespace

TEST_CASE("csv parsing") {
    const CsvTable t = parse_csv("frame,status,residual_mm\r\n0,initialized,0\n1,fused,0.25\n\n2,fused,\n");
    CHECK(t.header == std::vector<std::string>{"frame", "status", "residual_mm"});
    REQUIRE(t.rows.size() == 3);
    CHECK(t.column("status") == 1u);
    CHECK_FALSE(t.column("nope"));
    CHECK(t.number(1, 2) == 0.25);
    CHECK_FALSE(t.number(1, 1));
    CHECK_FALSE(t.number(2, 2));  // empty cell

    CHECK_THROWS_AS(parse_csv(""), ReportError);
    CHECK_THROWS_AS(parse_csv("a,b\n1,2,3\n"), ReportError);
    CHECK_THROWS_AS(read_csv("/nonexistent.csv"), ReportError);
}

TEST_CASE("summary of a single row") {
    const auto s = summarize(parse_csv("frame,status,x\n4,fused,-1.5\n"));
    REQUIRE(s.size() == 2);  // status is not numeric
    const auto* x = find(s, "x");
    REQUIRE(x);
    CHECK(x->mean == -1.5);
    CHECK(x->max == -1.5);
    CHECK(x->min == -1.5);
    CHECK(x->count == 1);
}

TEST_CASE("summary: a constant column has mean equal to max") {
    std::string text = "frame,c\n";
    for (int i = 0; i < 100; ++i) {
        text += std::to_string(i) + ",0.1\n";
    }
    const auto s = summarize(parse_csv(text));
    const auto* c = find(s, "c");
    REQUIRE(c);
    CHECK(c->mean == c->max);
    CHECK(c->min == c->max);
    const auto* f = find(s, "frame");
    REQUIRE(f);
    CHECK(f->mean == 49.5);
    CHECK(f->max == 99.0);
    CHECK(format_summary(s).rfind("column,mean,max,min,count\n", 0) == 0);
}

TEST_CASE("summary invariants: min <= mean <= max") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1e3, 1e3);
    for (int trial = 0; trial < 50; ++trial) {
        std::string text = "frame,v\n";
        const int rows = 1 + static_cast<int>(rng() % 30);
        for (int i = 0; i < rows; ++i) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%d,%.17g\n", i, u(rng));
            text += buf;
        }
        const auto* v = find(summarize(parse_csv(text)), "v");
        REQUIRE(v);
        CHECK(v->min <= v->mean);
        CHECK(v->mean <= v->max);
        CHECK(v->count == static_cast<std::size_t>(rows));
    }
}

TEST_CASE("summary: a header-only table is an error") {
    CHECK_THROWS_AS(summarize(parse_csv("frame,status,residual_mm\n")), ReportError);
}

TEST_CASE("difference series joins on the frame column") {
    const CsvTable a = parse_csv("frame,e\n0,1.0\n1,2.0\n3,5.0\n");
    const CsvTable b = parse_csv("frame,e\n1,0.5\n0,1.0\n2,9.0\n3,6.0\n");
    const auto d = difference_series(a, b, "e");
    REQUIRE(d.size() == 3);
    CHECK(d[0].frame == 0);
    CHECK(d[0].diff == 0.0);
    CHECK(d[1].frame == 1);
    CHECK(d[1].diff == 1.5);
    CHECK(d[2].frame == 3);
    CHECK(d[2].a == 5.0);
    CHECK(d[2].b == 6.0);
    CHECK(d[2].diff == -1.0);
    CHECK(format_difference_csv(d, "e") == "frame,e_a,e_b,diff\n0,1,1,0\n1,2,0.5,1.5\n3,5,6,-1\n");

    CHECK_THROWS_AS(difference_series(a, b, "missing"), ReportError);
    CHECK_THROWS_AS(difference_series(a, parse_csv("frame,e\n"), "e"), ReportError);
    CHECK_THROWS_AS(difference_series(a, parse_csv("frame,e\n0,x\n"), "e"), ReportError);
}

TEST_CASE("read_csv from disk") {
    const fixtures::TempDir dir("report");
    {
        std::ofstream out(dir.path() / "m.csv");
        out << "frame,v\n0,1\n1,3\n";
    }
    const auto s = summarize(read_csv(dir.path() / "m.csv"));
    CHECK(find(s, "v")->mean == 2.0);
}
