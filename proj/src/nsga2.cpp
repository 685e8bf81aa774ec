#include "servesim/nsga2.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "servesim/errors.hpp"

namespace servesim::nsga2 {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Sentinel for individuals whose evaluation produced non-finite values.
constexpr double kDiscarded = std::numeric_limits<double>::max();

bool pareto_dominates(const std::vector<double>& a, const std::vector<double>& b) {
    bool strictly_better = false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i] > b[i]) return false;
        if (a[i] < b[i]) strictly_better = true;
    }
    return strictly_better;
}

}  // namespace

bool dominates(const Individual& a, const Individual& b) {
    if (a.objectives.size() != b.objectives.size()) {
        throw ContractError("dominates: objective arity mismatch");
    }
    const bool a_feasible = a.violation == 0.0;
    const bool b_feasible = b.violation == 0.0;
    if (a_feasible != b_feasible) return a_feasible;
    if (!a_feasible) return a.violation < b.violation;
    return pareto_dominates(a.objectives, b.objectives);
}

std::vector<std::vector<int>> non_dominated_sort(std::vector<Individual>& pop) {
    const int n = static_cast<int>(pop.size());
    std::vector<std::vector<int>> dominated_by(n);
    std::vector<int> domination_count(n, 0);

    std::vector<std::vector<int>> fronts(1);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            if (dominates(pop[i], pop[j])) {
                dominated_by[i].push_back(j);
            } else if (dominates(pop[j], pop[i])) {
                ++domination_count[i];
            }
        }
        if (domination_count[i] == 0) {
            pop[i].rank = 0;
            fronts[0].push_back(i);
        }
    }

    int k = 0;
    while (!fronts[k].empty()) {
        std::vector<int> next;
        for (int i : fronts[k]) {
            for (int j : dominated_by[i]) {
                if (--domination_count[j] == 0) {
                    pop[j].rank = k + 1;
                    next.push_back(j);
                }
            }
        }
        fronts.push_back(std::move(next));
        ++k;
    }
    fronts.pop_back();  // last front is always empty
    return fronts;
}

void assign_crowding(std::vector<Individual>& pop, std::span<const int> front) {
    const size_t n = front.size();
    for (int i : front) pop[static_cast<size_t>(i)].crowding = 0.0;
    if (n <= 2) {
        for (int i : front) pop[static_cast<size_t>(i)].crowding = kInf;
        return;
    }
    const size_t num_obj = pop[static_cast<size_t>(front[0])].objectives.size();
    std::vector<int> order(front.begin(), front.end());
    for (size_t m = 0; m < num_obj; ++m) {
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return pop[static_cast<size_t>(a)].objectives[m] < pop[static_cast<size_t>(b)].objectives[m];
        });
        auto& first = pop[static_cast<size_t>(order.front())];
        auto& last = pop[static_cast<size_t>(order.back())];
        first.crowding = kInf;
        last.crowding = kInf;
        const double range = last.objectives[m] - first.objectives[m];
        if (range <= 0.0) continue;  // zero range contributes nothing
        for (size_t i = 1; i + 1 < n; ++i) {
            auto& ind = pop[static_cast<size_t>(order[i])];
            if (ind.crowding == kInf) continue;
            const double gap = pop[static_cast<size_t>(order[i + 1])].objectives[m] -
                               pop[static_cast<size_t>(order[i - 1])].objectives[m];
            ind.crowding += gap / range;
        }
    }
}

Genome bit_flip_mutation(Genome genome, double p_mut, Rng& rng) {
    for (auto& bit : genome) {
        if (rng.bernoulli(p_mut)) bit ^= 1;
    }
    return genome;
}

std::pair<Genome, Genome> single_point_crossover(const Genome& a, const Genome& b, Rng& rng) {
    if (a.size() != b.size()) throw ContractError("single_point_crossover: length mismatch");
    if (a.size() < 2) throw ContractError("single_point_crossover: length must be >= 2");
    const size_t cut = static_cast<size_t>(rng.uniform_int(1, static_cast<std::int64_t>(a.size()) - 1));
    Genome c1(a.begin(), a.begin() + static_cast<long>(cut));
    c1.insert(c1.end(), b.begin() + static_cast<long>(cut), b.end());
    Genome c2(b.begin(), b.begin() + static_cast<long>(cut));
    c2.insert(c2.end(), a.begin() + static_cast<long>(cut), a.end());
    return {std::move(c1), std::move(c2)};
}

namespace {

Individual make_individual(Genome genome, const EvalFn& eval, size_t expected_arity) {
    Individual ind;
    ind.genome = std::move(genome);
    Evaluation ev = eval(ind.genome);
    bool ok = std::isfinite(ev.violation) && ev.violation >= 0.0 &&
              (expected_arity == 0 || ev.objectives.size() == expected_arity);
    for (double o : ev.objectives) ok = ok && std::isfinite(o);
    if (!ok) {
        ind.objectives.assign(std::max<size_t>(expected_arity, ev.objectives.size()), kDiscarded);
        ind.violation = kDiscarded;
    } else {
        ind.objectives = std::move(ev.objectives);
        ind.violation = ev.violation;
    }
    return ind;
}

// Binary tournament on (rank asc, crowding desc); remaining ties flip a coin.
int tournament_pick(const std::vector<Individual>& pop, Rng& rng) {
    const int i = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(pop.size()) - 1));
    const int j = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(pop.size()) - 1));
    const auto& a = pop[static_cast<size_t>(i)];
    const auto& b = pop[static_cast<size_t>(j)];
    if (a.rank != b.rank) return a.rank < b.rank ? i : j;
    if (a.crowding != b.crowding) return a.crowding > b.crowding ? i : j;
    return rng.bernoulli(0.5) ? i : j;
}

void rank_population(std::vector<Individual>& pop) {
    auto fronts = non_dominated_sort(pop);
    for (const auto& front : fronts) assign_crowding(pop, front);
}

}  // namespace

Result evolve(int genome_len, const EvalFn& eval, const Config& cfg, Rng rng) {
    if (genome_len < 2) throw ConfigError("nsga2.genome_len: must be >= 2");
    const int m = cfg.population_size;
    if (m < 4 || m % 2 != 0) throw ConfigError("nsga2.population_size: must be even and >= 4");
    if (cfg.generations < 0) throw ConfigError("nsga2.generations: must be >= 0");
    if (cfg.p_crossover < 0.0 || cfg.p_crossover > 1.0) {
        throw ConfigError("nsga2.p_crossover: must be in [0, 1]");
    }
    const double p_mut =
        cfg.p_mutation < 0.0 ? 1.0 / static_cast<double>(genome_len) : cfg.p_mutation;
    if (p_mut > 1.0) throw ConfigError("nsga2.p_mutation: must be in [0, 1]");

    std::vector<Individual> pop;
    pop.reserve(static_cast<size_t>(m));
    size_t arity = 0;
    for (int i = 0; i < m; ++i) {
        Genome g(static_cast<size_t>(genome_len));
        for (auto& bit : g) bit = rng.bernoulli(0.5) ? 1 : 0;
        pop.push_back(make_individual(std::move(g), eval, arity));
        arity = std::max(arity, pop.back().objectives.size());
    }
    rank_population(pop);

    for (int gen = 0; gen < cfg.generations; ++gen) {
        std::vector<Individual> offspring;
        offspring.reserve(static_cast<size_t>(m));
        while (static_cast<int>(offspring.size()) < m) {
            const auto& p1 = pop[static_cast<size_t>(tournament_pick(pop, rng))];
            const auto& p2 = pop[static_cast<size_t>(tournament_pick(pop, rng))];
            Genome c1 = p1.genome;
            Genome c2 = p2.genome;
            if (rng.bernoulli(cfg.p_crossover)) {
                std::tie(c1, c2) = single_point_crossover(c1, c2, rng);
            }
            c1 = bit_flip_mutation(std::move(c1), p_mut, rng);
            c2 = bit_flip_mutation(std::move(c2), p_mut, rng);
            offspring.push_back(make_individual(std::move(c1), eval, arity));
            if (static_cast<int>(offspring.size()) < m) {
                offspring.push_back(make_individual(std::move(c2), eval, arity));
            }
        }

        std::vector<Individual> combined = std::move(pop);
        combined.insert(combined.end(), std::make_move_iterator(offspring.begin()),
                        std::make_move_iterator(offspring.end()));
        auto fronts = non_dominated_sort(combined);

        std::vector<Individual> next;
        next.reserve(static_cast<size_t>(m));
        for (const auto& front : fronts) {
            assign_crowding(combined, front);
            if (next.size() + front.size() <= static_cast<size_t>(m)) {
                for (int idx : front) next.push_back(std::move(combined[static_cast<size_t>(idx)]));
            } else {
                std::vector<int> order(front.begin(), front.end());
                std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
                    return combined[static_cast<size_t>(a)].crowding >
                           combined[static_cast<size_t>(b)].crowding;
                });
                for (int idx : order) {
                    if (next.size() == static_cast<size_t>(m)) break;
                    next.push_back(std::move(combined[static_cast<size_t>(idx)]));
                }
            }
            if (next.size() == static_cast<size_t>(m)) break;
        }
        pop = std::move(next);
        rank_population(pop);
    }

    Result res;
    res.front.reserve(pop.size());
    for (const auto& ind : pop) {
        if (ind.rank == 0 && ind.violation == 0.0) res.front.push_back(ind);
    }
    res.population = std::move(pop);
    return res;
}

}  // namespace servesim::nsga2
