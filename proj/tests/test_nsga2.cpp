#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "servesim/errors.hpp"
#include "servesim/nsga2.hpp"

using namespace servesim;
using namespace servesim::nsga2;

namespace {

Individual ind(std::vector<double> obj, double violation = 0.0) {
    Individual i;
    i.objectives = std::move(obj);
    i.violation = violation;
    return i;
}

int ones(const Genome& g) { return static_cast<int>(std::accumulate(g.begin(), g.end(), 0)); }

}  // namespace

TEST_CASE("dominance definition") {
    CHECK_FALSE(dominates(ind({1, 1}), ind({1, 1})));
    CHECK(dominates(ind({1, 2}), ind({2, 2})));
    CHECK_FALSE(dominates(ind({1, 3}), ind({2, 1})));
    CHECK_FALSE(dominates(ind({2, 1}), ind({1, 3})));
    CHECK_THROWS_AS(dominates(ind({1}), ind({1, 2})), ContractError);
}

TEST_CASE("constrained domination puts feasibility first") {
    CHECK(dominates(ind({9, 9}, 0.0), ind({0, 0}, 1.0)));
    CHECK_FALSE(dominates(ind({0, 0}, 1.0), ind({9, 9}, 0.0)));
    CHECK(dominates(ind({9, 9}, 1.0), ind({0, 0}, 2.0)));
    CHECK_FALSE(dominates(ind({9, 9}, 2.0), ind({0, 0}, 2.0)));
}

TEST_CASE("sorting a dominance chain yields singleton fronts") {
    std::vector<Individual> pop{ind({1, 1}), ind({1, 2}), ind({2, 2})};
    auto fronts = non_dominated_sort(pop);
    REQUIRE(fronts.size() == 3);
    CHECK(fronts[0] == std::vector<int>{0});
    CHECK(fronts[1] == std::vector<int>{1});
    CHECK(fronts[2] == std::vector<int>{2});
    CHECK(pop[0].rank == 0);
    CHECK(pop[2].rank == 2);
}

TEST_CASE("identical objectives form a single front") {
    std::vector<Individual> pop{ind({3, 3}), ind({3, 3}), ind({3, 3})};
    auto fronts = non_dominated_sort(pop);
    REQUIRE(fronts.size() == 1);
    CHECK(fronts[0].size() == 3);
}

TEST_CASE("fast sort matches a brute-force peel") {
    Rng rng(17);
    std::vector<Individual> pop;
    for (int i = 0; i < 50; ++i) {
        pop.push_back(ind({rng.uniform_int(0, 9) * 1.0, rng.uniform_int(0, 9) * 1.0},
                          rng.bernoulli(0.2) ? 1.0 : 0.0));
    }
    auto fronts = non_dominated_sort(pop);

    // Reference: repeatedly peel the mutually non-dominated remainder.
    std::vector<int> remaining(pop.size());
    std::iota(remaining.begin(), remaining.end(), 0);
    std::vector<std::vector<int>> expected;
    while (!remaining.empty()) {
        std::vector<int> layer, rest;
        for (int i : remaining) {
            bool dominated = false;
            for (int j : remaining) {
                if (i != j && dominates(pop[static_cast<size_t>(j)], pop[static_cast<size_t>(i)]))
                    dominated = true;
            }
            (dominated ? rest : layer).push_back(i);
        }
        expected.push_back(layer);
        remaining = rest;
    }

    REQUIRE(fronts.size() == expected.size());
    for (size_t k = 0; k < fronts.size(); ++k) {
        std::set<int> a(fronts[k].begin(), fronts[k].end());
        std::set<int> b(expected[k].begin(), expected[k].end());
        CHECK(a == b);
    }
}

TEST_CASE("crowding boundary and interior values") {
    std::vector<Individual> pop{ind({1, 5}), ind({2, 3}), ind({3, 1})};
    std::vector<int> front{0, 1, 2};
    assign_crowding(pop, front);
    CHECK(std::isinf(pop[0].crowding));
    CHECK(std::isinf(pop[2].crowding));
    CHECK(pop[1].crowding == doctest::Approx(2.0).epsilon(1e-15));

    std::vector<Individual> tiny{ind({1, 1}), ind({2, 2})};
    std::vector<int> f2{0, 1};
    assign_crowding(tiny, f2);
    CHECK(std::isinf(tiny[0].crowding));
    CHECK(std::isinf(tiny[1].crowding));

    std::vector<Individual> flat{ind({4, 4}), ind({4, 4}), ind({4, 4})};
    std::vector<int> f3{0, 1, 2};
    assign_crowding(flat, f3);
    CHECK(flat[1].crowding == 0.0);
}

TEST_CASE("mutation at the extremes") {
    Rng rng(1);
    Genome g{0, 0, 0};
    CHECK(bit_flip_mutation(g, 0.0, rng) == Genome{0, 0, 0});
    CHECK(bit_flip_mutation(g, 1.0, rng) == Genome{1, 1, 1});
}

TEST_CASE("mutation flip count matches the binomial mean") {
    Rng rng(23);
    const int L = 100, trials = 10000;
    Genome zero(L, 0);
    long long flips = 0;
    for (int t = 0; t < trials; ++t) flips += ones(bit_flip_mutation(zero, 0.05, rng));
    const double mean = static_cast<double>(flips) / trials;
    CHECK(mean == doctest::Approx(5.0).epsilon(0.04));
}

TEST_CASE("single point crossover swaps suffixes") {
    Rng rng(2);
    Genome a{0, 0, 0, 0}, b{1, 1, 1, 1};
    auto [c1, c2] = single_point_crossover(a, b, rng);
    // Regardless of the cut, children are a 0-prefix/1-suffix pair and its mirror.
    int cut = 0;
    while (cut < 4 && c1[static_cast<size_t>(cut)] == 0) ++cut;
    CHECK(cut >= 1);
    CHECK(cut <= 3);
    for (int i = 0; i < 4; ++i) {
        CHECK(c1[static_cast<size_t>(i)] == (i < cut ? 0 : 1));
        CHECK(c2[static_cast<size_t>(i)] == (i < cut ? 1 : 0));
    }

    auto [d1, d2] = single_point_crossover(a, a, rng);
    CHECK(d1 == a);
    CHECK(d2 == a);

    CHECK_THROWS_AS(single_point_crossover(a, Genome{1, 1}, rng), ContractError);
    CHECK_THROWS_AS(single_point_crossover(Genome{1}, Genome{0}, rng), ContractError);
}

TEST_CASE("crossover conserves bits per position") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        Genome a(16), b(16);
        for (auto& x : a) x = rng.bernoulli(0.5);
        for (auto& x : b) x = rng.bernoulli(0.5);
        auto [c1, c2] = single_point_crossover(a, b, rng);
        for (size_t i = 0; i < a.size(); ++i) {
            CHECK(static_cast<int>(c1[i]) + c2[i] == static_cast<int>(a[i]) + b[i]);
        }
    }
}

TEST_CASE("one-max converges within 50 generations") {
    auto eval = [](const Genome& g) {
        return Evaluation{{-static_cast<double>(ones(g)), 0.0}, 0.0};
    };
    Config cfg;
    cfg.population_size = 20;
    cfg.generations = 50;
    Result res = evolve(10, eval, cfg, Rng(5));
    REQUIRE_FALSE(res.front.empty());
    bool found = false;
    for (const auto& i : res.front) {
        if (ones(i.genome) == 10) found = true;
    }
    CHECK(found);
    CHECK(res.population.size() == 20);
}

TEST_CASE("the lone feasible genome survives") {
    const Genome target{1, 0, 1, 0};
    auto eval = [&](const Genome& g) {
        double dist = 0.0;
        for (size_t i = 0; i < g.size(); ++i) dist += g[i] != target[i];
        return Evaluation{{0.0, 0.0}, dist};
    };
    Config cfg;
    cfg.population_size = 20;
    cfg.generations = 50;
    Result res = evolve(4, eval, cfg, Rng(6));
    bool found = false;
    for (const auto& i : res.population) {
        if (i.genome == target) found = true;
    }
    CHECK(found);
    REQUIRE(res.front.size() >= 1);
    CHECK(res.front[0].genome == target);
}

TEST_CASE("evolve is deterministic in the seed") {
    auto eval = [](const Genome& g) {
        double f1 = ones(g);
        double f2 = static_cast<double>(g.size()) - f1;
        return Evaluation{{f1, f2}, 0.0};
    };
    Config cfg;
    cfg.population_size = 12;
    cfg.generations = 30;
    Result a = evolve(8, eval, cfg, Rng(9));
    Result b = evolve(8, eval, cfg, Rng(9));
    REQUIRE(a.population.size() == b.population.size());
    for (size_t i = 0; i < a.population.size(); ++i) {
        CHECK(a.population[i].genome == b.population[i].genome);
        CHECK(a.population[i].objectives == b.population[i].objectives);
    }
}

TEST_CASE("reported front is mutually non-dominated") {
    auto eval = [](const Genome& g) {
        double f1 = ones(g);
        double f2 = static_cast<double>(g.size()) - f1;
        return Evaluation{{f1, f2}, 0.0};
    };
    Config cfg;
    cfg.population_size = 16;
    cfg.generations = 20;
    Result res = evolve(10, eval, cfg, Rng(10));
    for (const auto& a : res.front) {
        CHECK(a.violation == 0.0);
        for (const auto& b : res.front) CHECK_FALSE(dominates(a, b));
    }
}

TEST_CASE("non-finite evaluations are discarded, not propagated") {
    auto eval = [](const Genome& g) {
        if (g[0]) return Evaluation{{std::nan(""), 0.0}, 0.0};
        return Evaluation{{static_cast<double>(ones(g)), 0.0}, 0.0};
    };
    Config cfg;
    cfg.population_size = 12;
    cfg.generations = 10;
    Result res;
    REQUIRE_NOTHROW(res = evolve(6, eval, cfg, Rng(11)));
    REQUIRE_FALSE(res.front.empty());
    for (const auto& i : res.front) {
        CHECK(i.genome[0] == 0);
        for (double o : i.objectives) CHECK(std::isfinite(o));
    }
}

TEST_CASE("config validation") {
    auto eval = [](const Genome&) { return Evaluation{{0.0, 0.0}, 0.0}; };
    Config odd;
    odd.population_size = 7;
    CHECK_THROWS_AS(evolve(4, eval, odd, Rng(1)), ConfigError);
    Config small;
    small.population_size = 2;
    CHECK_THROWS_AS(evolve(4, eval, small, Rng(1)), ConfigError);
    Config bad_cx;
    bad_cx.p_crossover = 1.5;
    CHECK_THROWS_AS(evolve(4, eval, bad_cx, Rng(1)), ConfigError);
}
