#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "rfn/rng.hpp"
#include "rfn/tensor.hpp"

namespace rfn::testing {

inline Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng,
                            double lo = -1.0, double hi = 1.0) {
  Tensor t(rows, cols);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Random simple digraph: no self loops, no duplicate directed edges.
inline std::vector<std::pair<std::uint32_t, std::uint32_t>> random_digraph(
    std::size_t nodes, std::size_t edges, Rng& rng) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> all;
  for (std::uint32_t u = 0; u < nodes; ++u) {
    for (std::uint32_t v = 0; v < nodes; ++v) {
      if (u != v) all.emplace_back(u, v);
    }
  }
  rng.shuffle(all);
  if (edges < all.size()) all.resize(edges);
  return all;
}

}  // namespace rfn::testing
