#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "servesim/rng.hpp"

namespace servesim::nsga2 {

using Genome = std::vector<std::uint8_t>;  // each element 0 or 1

// Objectives are all minimization; a maximized quantity is negated by the
// problem before it gets here.
struct Evaluation {
    std::vector<double> objectives;
    double violation = 0.0;  // 0 means feasible
};

struct Individual {
    Genome genome;
    std::vector<double> objectives;
    double violation = 0.0;
    int rank = -1;          // front index; -1 until sorted
    double crowding = 0.0;  // +inf on front boundaries
};

struct Config {
    int population_size = 100;  // must be even and >= 4
    int generations = 200;
    double p_crossover = 0.9;
    double p_mutation = -1.0;  // < 0 selects the 1/L default
};

// Constrained domination: feasible beats infeasible, lower violation beats
// higher, and Pareto dominance decides between two feasible individuals.
bool dominates(const Individual& a, const Individual& b);

// Fast non-dominated sort. Returns fronts as index lists into pop and
// writes rank into each individual.
std::vector<std::vector<int>> non_dominated_sort(std::vector<Individual>& pop);

// Crowding distance for the members of one front.
void assign_crowding(std::vector<Individual>& pop, std::span<const int> front);

Genome bit_flip_mutation(Genome genome, double p_mut, Rng& rng);

std::pair<Genome, Genome> single_point_crossover(const Genome& a, const Genome& b, Rng& rng);

using EvalFn = std::function<Evaluation(const Genome&)>;

struct Result {
    std::vector<Individual> population;  // final generation, size m
    std::vector<Individual> front;       // feasible rank-0 members
};

// Standard generational NSGA-II: random init, binary tournament on
// (rank, crowding), single-point crossover, per-bit mutation, and (mu+lambda)
// elitist truncation by fronts then crowding. Deterministic in rng.
Result evolve(int genome_len, const EvalFn& eval, const Config& cfg, Rng rng);

}  // namespace servesim::nsga2
