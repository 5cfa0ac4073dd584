#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace batchmine {

using Rng = std::mt19937_64;

/// Mixes a label into a seed so each pipeline stage (and task) gets an
/// independent, reproducible stream from one global seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

/// Fisher-Yates with an explicit draw order, so sequences do not depend on
/// the standard library's std::shuffle.
template <typename T>
void shuffle_span(std::span<T> values, Rng& rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(values[i - 1], values[pick(rng)]);
  }
}

}  // namespace batchmine
