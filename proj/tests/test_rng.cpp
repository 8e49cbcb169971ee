#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "flsim/rng.hpp"

using flsim::RngStream;

TEST_CASE("identical seeds give identical sequences") {
    RngStream a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("derivation is independent of consumption") {
    RngStream a(7);
    RngStream b(7);
    a.next_u64();
    a.next_u64();
    RngStream da = a.derive("tag", 1, 2);
    RngStream db = b.derive("tag", 1, 2);
    for (int i = 0; i < 20; ++i) CHECK(da.next_u64() == db.next_u64());
}

TEST_CASE("different tags and indices give different streams") {
    RngStream root(7);
    CHECK(root.derive("a").next_u64() != root.derive("b").next_u64());
    CHECK(root.derive("a", 0).next_u64() != root.derive("a", 1).next_u64());
    CHECK(root.derive("a", 0, 0).next_u64() != root.derive("a", 0, 1).next_u64());
}

TEST_CASE("uniform stays in [0,1) and covers the range") {
    RngStream rng(3);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    CHECK(lo < 0.01);
    CHECK(hi > 0.99);
}

TEST_CASE("normal moments are sane") {
    RngStream rng(11);
    const int n = 50000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sq += x * x;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("gamma mean matches its shape") {
    RngStream rng(11);
    for (double alpha : {0.5, 1.0, 3.0}) {
        const int n = 40000;
        double sum = 0.0;
        for (int i = 0; i < n; ++i) {
            const double g = rng.gamma(alpha);
            CHECK(g > 0.0);
            sum += g;
        }
        CHECK(std::abs(sum / n - alpha) < 0.05 * std::max(1.0, alpha));
    }
    CHECK_THROWS_AS(rng.gamma(0.0), flsim::InputError);
}

TEST_CASE("uniform_index is bounded and roughly uniform") {
    RngStream rng(5);
    std::vector<int> counts(10, 0);
    for (int i = 0; i < 50000; ++i) ++counts[rng.uniform_index(10)];
    for (int c : counts) CHECK(std::abs(c - 5000) < 400);
}

TEST_CASE("sample_without_replacement gives k sorted distinct values") {
    RngStream rng(9);
    const auto sample = rng.sample_without_replacement(100, 10);
    CHECK(sample.size() == 10);
    std::set<size_t> uniq(sample.begin(), sample.end());
    CHECK(uniq.size() == 10);
    CHECK(std::is_sorted(sample.begin(), sample.end()));
    for (size_t v : sample) CHECK(v < 100);
    CHECK_THROWS_AS(rng.sample_without_replacement(5, 6), flsim::ConfigError);
}

TEST_CASE("shuffle permutes deterministically per stream") {
    std::vector<int> v1{1, 2, 3, 4, 5, 6, 7, 8};
    std::vector<int> v2 = v1;
    RngStream(13).shuffle(v1);
    RngStream(13).shuffle(v2);
    CHECK(v1 == v2);
    std::vector<int> sorted = v1;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8});
}
