#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "design/tensor.hpp"

namespace testing_support {

inline design::IntPlane random_pm1(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  design::IntPlane p(h, w);
  for (auto& v : p.values()) v = (rng() & 1u) ? 1 : -1;
  return p;
}

inline design::BitPlane random_bits(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  return design::pack(random_pm1(h, w, rng));
}

inline design::RealPlane random_real(std::size_t h, std::size_t w, std::mt19937_64& rng, double lo = -2.0,
                                     double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  design::RealPlane p(h, w);
  for (auto& v : p.values()) v = u(rng);
  return p;
}

inline std::size_t uniform(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

}  // namespace testing_support
