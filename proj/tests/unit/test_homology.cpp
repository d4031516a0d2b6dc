#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "fixtures.hpp"
#include "nca_scope/homology.hpp"
#include "oracles.hpp"

using namespace nca_scope;

namespace {

PointMatrix rigid_motion(const PointMatrix& p, double angle, double dx, double dy) {
    Eigen::Matrix2d rot;
    rot << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
    PointMatrix out = p * rot.transpose();
    out.col(0).array() += dx;
    out.col(1).array() += dy;
    return out;
}

void check_same(const PersistenceDiagram& a, const PersistenceDiagram& b, double tol) {
    const auto x = a.sorted(), y = b.sorted();
    REQUIRE(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(x[i].dim == y[i].dim);
        CHECK(std::abs(x[i].birth - y[i].birth) <= tol);
        if (x[i].infinite() || y[i].infinite()) CHECK(x[i].death == y[i].death);
        else CHECK(std::abs(x[i].death - y[i].death) <= tol);
    }
}

}  // namespace

TEST_CASE("distance matrix examples") {
    PointMatrix two(2, 3);
    two << 1, 2, 3, 1, 2, 3;
    CHECK(distance_matrix(two).condensed() == std::vector<double>{0.0});

    PointMatrix square(4, 2);
    square << 0, 0, 1, 0, 1, 1, 0, 1;
    auto d = distance_matrix(square).condensed();
    std::sort(d.begin(), d.end());
    CHECK(d[0] == 1.0);
    CHECK(d[3] == 1.0);
    CHECK(d[4] == doctest::Approx(std::sqrt(2.0)));
    CHECK(d[5] == doctest::Approx(std::sqrt(2.0)));

    const auto cloud = fixture::gaussian(15, 4, 1);
    const auto m = distance_matrix(cloud);
    for (std::size_t i = 0; i < 15; ++i)
        for (std::size_t j = 0; j < 15; ++j) {
            CHECK(m(i, j) == m(j, i));
            for (std::size_t k = 0; k < 15; ++k) CHECK(m(i, k) <= m(i, j) + m(j, k) + 1e-12);
        }
}

TEST_CASE("maxmin subsampling") {
    const auto p = fixture::uniform(30, 2, 2);
    auto all = maxmin_subsample(p, 30, 3);
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < 30; ++i) CHECK(all[i] == i);
    CHECK(maxmin_subsample(p, 1, 3) == std::vector<std::size_t>{maxmin_subsample(p, 5, 3).front()});
    CHECK(maxmin_subsample(p, 10, 4) == maxmin_subsample(p, 10, 4));

    PointMatrix clusters(20, 2);
    clusters.topRows(10) = fixture::uniform(10, 2, 5);
    clusters.bottomRows(10) = fixture::uniform(10, 2, 6);
    clusters.bottomRows(10).col(0).array() += 50.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto two = maxmin_subsample(clusters, 2, seed);
        CHECK((two[0] < 10) != (two[1] < 10));
    }
}

TEST_CASE("coverage arithmetic") {
    CHECK(ph_coverage(1000, 8000) == 0.125);
    CHECK(ph_coverage(1000, 500) == 1.0);
}

TEST_CASE("two points") {
    PointMatrix p(2, 1);
    p << 0, 2.5;
    const auto dg = rips_persistence(distance_matrix(p), 1);
    const auto h0 = dg.in_dim(0);
    REQUIRE(h0.size() == 2);
    CHECK(dg.sorted()[0] == PersistenceInterval{0, 0.0, 2.5});
    CHECK(dg.sorted()[1] == PersistenceInterval{0, 0.0, kInfinity});
    CHECK(dg.count(1) == 0);
}

TEST_CASE("reducer matches the full boundary-matrix oracle") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 4 + trial % 9;
        const int d = 2 + trial % 3;
        const auto p = fixture::uniform(n, d, static_cast<std::uint64_t>(100 + trial));
        const int max_dim = trial % 2 ? 2 : 1;
        const auto dist = distance_matrix(p);
        const auto fast = rips_persistence(dist, max_dim, dist.max() + 1.0);
        CHECK(fast.sorted() == oracle::rips(dist, max_dim));
    }
}

TEST_CASE("diagram invariances") {
    const auto circle = fixture::circle(40);
    const auto base = rips_persistence(distance_matrix(circle), 1);

    std::vector<Eigen::Index> order(40);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), std::mt19937_64(1));
    PointMatrix shuffled(40, 2);
    for (Eigen::Index i = 0; i < 40; ++i) shuffled.row(i) = circle.row(order[static_cast<std::size_t>(i)]);
    check_same(rips_persistence(distance_matrix(shuffled), 1), base, 1e-12);

    check_same(rips_persistence(distance_matrix(rigid_motion(circle, 0.7, 3.0, -2.0)), 1), base, 1e-9);

    const auto scaled = rips_persistence(distance_matrix(PointMatrix(circle * 2.5)), 1);
    auto expect = base;
    for (auto& iv : expect.intervals) {
        iv.birth *= 2.5;
        iv.death *= 2.5;
    }
    check_same(scaled, expect, 1e-12);
}

TEST_CASE("circle has one long loop dying near sqrt(3)") {
    const auto dg = rips_persistence(distance_matrix(fixture::circle(60)), 1);
    int long_loops = 0;
    for (const auto& iv : dg.in_dim(1))
        if (iv.persistence() > 1.0) {
            ++long_loops;
            CHECK(iv.death >= 1.70);
            CHECK(iv.death <= 1.76);
            CHECK(iv.birth == doctest::Approx(2.0 * std::sin(fixture::kPi / 60)));
        }
    CHECK(long_loops == 1);
    const auto betti = betti_report(dg);
    CHECK(betti.h0() == 1);
    CHECK(betti.h1() == 1);
    CHECK(betti.h2() == 0);
}

TEST_CASE("betti numbers at a radius") {
    const auto p = fixture::circle(30);
    const auto dist = distance_matrix(p);
    const auto dg = rips_persistence(dist, 1, dist.max() + 1.0);
    CHECK(betti_at(dg, 0.01)[0] == 30);
    CHECK(betti_at(dg, dist.max() + 0.5) == std::array<int, 3>{1, 0, 0});
    const auto loop = dg.in_dim(1);
    const auto longest = *std::max_element(loop.begin(), loop.end(),
                                           [](const auto& a, const auto& b) { return a.persistence() < b.persistence(); });
    CHECK(betti_at(dg, 0.5 * (longest.birth + longest.death)) == std::array<int, 3>{1, 1, 0});
}

TEST_CASE("H0 structure") {
    const auto p = fixture::two_rings(20);
    const auto dist = distance_matrix(p);
    const auto dg = rips_persistence(dist, 1, 0.9);
    CHECK(dg.count(0) == 40);
    int infinite = 0;
    for (const auto& iv : dg.in_dim(0)) infinite += iv.infinite();
    CHECK(infinite == 2);
}

TEST_CASE("significance filter") {
    PersistenceDiagram dg;
    dg.intervals = {{0, 0.0, kInfinity}, {0, 0.0, 1.0}, {1, 0.5, 2.0}, {1, 0.5, 0.6}, {2, 1.0, 1.2}};
    CHECK(default_significance_threshold(dg) == doctest::Approx(0.6));
    const auto b = betti_report(dg);
    CHECK(b.counts == std::array<int, 3>{2, 1, 0});
    CHECK(betti_report(dg, 0.05).counts == std::array<int, 3>{2, 2, 1});
    CHECK(betti_report(PersistenceDiagram{}).counts == std::array<int, 3>{0, 0, 0});
}

TEST_CASE("noisy sphere keeps short-lived voids below threshold") {
    PointMatrix p = fixture::sphere(150) + fixture::gaussian(150, 3, 8, 0.03);
    const auto b = betti_report(rips_persistence(distance_matrix(p), 2));
    CHECK(b.counts == std::array<int, 3>{1, 0, 1});
}

TEST_CASE("diagram CSV round trip") {
    const auto dg = rips_persistence(distance_matrix(fixture::circle(20)), 1);
    const auto path = (std::filesystem::temp_directory_path() / "nca_scope_diag.csv").string();
    write_diagram_csv(dg, path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "dim,birth,death");
    CHECK(read_diagram_csv(path).sorted() == dg.sorted());
    std::filesystem::remove(path);
}

TEST_CASE("simplex budget guard") {
    const auto p = fixture::uniform(40, 3, 9);
    CHECK_THROWS_AS(rips_persistence(distance_matrix(p), 2, -1.0, 100), CapacityError);
    CHECK_THROWS_AS(rips_persistence(distance_matrix(p), 3), ContractError);
}
