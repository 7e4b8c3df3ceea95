#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

namespace twoarm {

/// 64-bit Mersenne Twister. The engine is fully specified by the standard and
/// the distributions below come from Boost.Random, so a seed reproduces the
/// same stream on every conforming platform.
using Rng = std::mt19937_64;

/// Derive an independent engine from a root seed and a path of stream ids
/// (replicate, chain, ...). std::seed_seq scrambles all words together, so
/// (seed, 1, 2) and (seed, 2, 1) give unrelated streams.
inline Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path = {}) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * path.size());
  auto push = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto id : path) push(id);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

/// Uniform on [0, 1).
inline double uniform01(Rng& rng) { return boost::random::uniform_01<double>{}(rng); }

inline double std_normal(Rng& rng) { return boost::random::normal_distribution<double>{}(rng); }

}  // namespace twoarm
