#include <cstdlib>
#include <string>

#include "batchmine/binary_io.hpp"
#include "batchmine/parallel.hpp"
#include "batchmine/random.hpp"

namespace batchmine {

unsigned default_workers() {
  if (const char* env = std::getenv("BATCHMINE_WORKERS")) {
    try {
      const int v = std::stoi(env);
      if (v >= 1) return static_cast<unsigned>(v);
    } catch (...) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  // splitmix64 finalizer over (seed xor label hash)
  std::uint64_t z = seed ^ fnv1a64(label);
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace batchmine
