#include <catch2/catch_amalgamated.hpp>

#include "tsda/metrics.hpp"
#include "tsda/rng.hpp"

using namespace tsda;

namespace {

// Independent oracle: full confusion matrix, then per-class P/R/F1.
double macro_f1_oracle(const std::vector<int>& yt, const std::vector<int>& yp, long k) {
    std::vector<std::vector<long>> cm(static_cast<std::size_t>(k),
                                      std::vector<long>(static_cast<std::size_t>(k), 0));
    for (std::size_t i = 0; i < yt.size(); ++i) cm[yt[i]][yp[i]]++;
    double sum = 0;
    long present = 0;
    for (long c = 0; c < k; ++c) {
        long tp = cm[c][c], row = 0, col = 0;
        for (long j = 0; j < k; ++j) {
            row += cm[c][j];
            col += cm[j][c];
        }
        if (row == 0 && col == 0) continue;
        ++present;
        // definitional per-class F1 on exact integer counts:
        // 2TP / (2TP + FP + FN), one rounding step
        long fp = col - tp, fn = row - tp;
        if (tp > 0) sum += 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
    }
    return present ? sum / present : 0.0;
}

}  // namespace

TEST_CASE("macro f1 hand cases") {
    SECTION("perfect predictions give 1.0") {
        std::vector<int> y{0, 1, 2, 0, 1, 2};
        CHECK(macro_f1(y, y, 3) == 1.0);
    }
    SECTION("the 11/15 case") {
        std::vector<int> yt{0, 0, 1, 1}, yp{0, 1, 1, 1};
        CHECK_THAT(macro_f1(yt, yp, 2), Catch::Matchers::WithinAbs(11.0 / 15.0, 1e-12));
    }
    SECTION("class absent from both is excluded") {
        std::vector<int> yt{0, 0, 1, 1}, yp{0, 0, 1, 1};
        CHECK(macro_f1(yt, yp, 5) == 1.0);
    }
    SECTION("class present but never predicted contributes zero") {
        std::vector<int> yt{0, 0, 1}, yp{0, 0, 0};
        // class0 f1 = 2*2/(4+1+0) = 0.8; class1 f1 = 0
        CHECK_THAT(macro_f1(yt, yp, 2), Catch::Matchers::WithinAbs(0.4, 1e-12));
    }
    SECTION("empty input rejected") {
        CHECK_THROWS_AS(macro_f1({}, {}, 2), ArgumentError);
    }
}

TEST_CASE("macro f1 matches the confusion-matrix oracle on random instances") {
    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        long k = 2 + static_cast<long>(rng.below(4));
        long n = 1 + static_cast<long>(rng.below(50));
        std::vector<int> yt(n), yp(n);
        for (long i = 0; i < n; ++i) {
            yt[i] = static_cast<int>(rng.below(k));
            yp[i] = static_cast<int>(rng.below(k));
        }
        CHECK(macro_f1(yt, yp, k) == macro_f1_oracle(yt, yp, k));
        double acc = 0;
        for (long i = 0; i < n; ++i) acc += yt[i] == yp[i] ? 1.0 : 0.0;
        CHECK(accuracy(yt, yp) == acc / n);
    }
}

TEST_CASE("macro f1 relabeling invariance") {
    Rng rng(17);
    std::vector<int> yt(40), yp(40);
    for (int i = 0; i < 40; ++i) {
        yt[i] = static_cast<int>(rng.below(4));
        yp[i] = static_cast<int>(rng.below(4));
    }
    double base = macro_f1(yt, yp, 4);
    std::vector<int> perm{2, 0, 3, 1};
    std::vector<int> yt2(40), yp2(40);
    for (int i = 0; i < 40; ++i) {
        yt2[i] = perm[yt[i]];
        yp2[i] = perm[yp[i]];
    }
    CHECK_THAT(macro_f1(yt2, yp2, 4), Catch::Matchers::WithinAbs(base, 1e-12));
}

TEST_CASE("accuracy hand cases") {
    CHECK(accuracy({0, 1, 1}, {0, 1, 0}) == 2.0 / 3.0);
    CHECK(accuracy({1, 1}, {1, 1}) == 1.0);
    CHECK(accuracy({1, 1}, {0, 0}) == 0.0);
}

TEST_CASE("macro f1 equals accuracy under symmetric balanced confusion") {
    // balanced binary, two errors in each direction
    std::vector<int> yt, yp;
    for (int i = 0; i < 10; ++i) {
        yt.push_back(0);
        yp.push_back(i < 2 ? 1 : 0);
    }
    for (int i = 0; i < 10; ++i) {
        yt.push_back(1);
        yp.push_back(i < 2 ? 0 : 1);
    }
    CHECK_THAT(macro_f1(yt, yp, 2), Catch::Matchers::WithinAbs(accuracy(yt, yp), 1e-12));
    // and for perfect predictions both are exactly one
    std::vector<int> y{0, 1, 2};
    CHECK(macro_f1(y, y, 3) == accuracy(y, y));
}

TEST_CASE("domain gap arithmetic") {
    SECTION("published MFD bounds reproduce the printed gap exactly") {
        auto row = domain_gap(99.39, 72.51, "MFD", 26.88);
        CHECK_THAT(row.gap, Catch::Matchers::WithinAbs(26.88, 1e-9));
        CHECK(!gap_inconsistent(row));
    }
    SECTION("equal bounds give zero") {
        CHECK(domain_gap(80.0, 80.0).gap == 0.0);
    }
    SECTION("recomputation overrides inconsistent published figures") {
        auto row = domain_gap(98.02, 48.60, "WISDM", 49.44);
        CHECK_THAT(row.gap, Catch::Matchers::WithinAbs(49.42, 1e-9));
        CHECK(gap_inconsistent(row));
        auto row2 = domain_gap(100.00, 65.94, "UCIHAR", 37.32);
        CHECK_THAT(row2.gap, Catch::Matchers::WithinAbs(34.06, 1e-9));
        CHECK(gap_inconsistent(row2));
    }
    SECTION("scale mismatch rejected") {
        CHECK_THROWS_AS(domain_gap(99.0, 0.7), ArgumentError);
        CHECK_THROWS_AS(domain_gap(0.99, 70.0), ArgumentError);
        CHECK_THROWS_AS(domain_gap(101.0, 70.0), ArgumentError);
        CHECK_NOTHROW(domain_gap(0.99, 0.72));
    }
}
