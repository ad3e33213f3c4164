#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>

namespace cg3d {

using Rng = std::mt19937_64;

/// Independent stream for (seed, tags...), e.g. (seed, worker_id) or
/// (seed, iteration, domain). Identical inputs give identical streams.
Rng make_stream(uint64_t seed, std::initializer_list<uint64_t> tags = {});

/// Uniform in [0, 1) with 53 random bits.
double uniform01(Rng& rng);
double uniform(Rng& rng, double low, double high);
/// Unbiased uniform integer in [0, n); n must be > 0.
uint64_t uniform_index(Rng& rng, uint64_t n);
bool bernoulli(Rng& rng, double p);

std::string serialize_rng(const Rng& rng);
Rng deserialize_rng(const std::string& state);

}  // namespace cg3d
