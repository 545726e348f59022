#pragma once

// Random instance generators shared by the test binaries.

#include <random>
#include <vector>

#include "nisim/stability.hpp"

namespace fixtures {

inline std::vector<double> random_simplex(std::size_t m, std::mt19937_64& gen) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> v(m);
  double s = 0.0;
  for (auto& x : v) s += (x = e(gen));
  for (auto& x : v) x /= s;
  // Renormalize so the sum is 1 to the last bit where possible.
  double t = 0.0;
  for (std::size_t i = 0; i + 1 < m; ++i) t += v[i];
  v[m - 1] = std::max(0.0, 1.0 - t);
  return v;
}

/// Cell function whose cells take random simplex values (or random vertices
/// when `vertex_valued`).
inline nisim::CellFunction random_cell_function(const nisim::CellGrid& grid, std::size_t m, std::mt19937_64& gen,
                                                bool vertex_valued = false) {
  std::vector<double> vals;
  vals.reserve(grid.cell_count() * m);
  std::uniform_int_distribution<std::size_t> pick(0, m - 1);
  for (std::size_t c = 0; c < grid.cell_count(); ++c) {
    if (vertex_valued) {
      std::vector<double> v(m, 0.0);
      v[pick(gen)] = 1.0;
      vals.insert(vals.end(), v.begin(), v.end());
    } else {
      const auto v = random_simplex(m, gen);
      vals.insert(vals.end(), v.begin(), v.end());
    }
  }
  return nisim::CellFunction(grid, m, std::move(vals));
}

/// m = 2 function on a one-dimensional grid equal to e_1 on (-inf, edge(i))
/// and e_2 elsewhere.
inline nisim::CellFunction threshold_function(const nisim::CellGrid& grid, std::size_t edge_index) {
  std::vector<int> labels(grid.cell_count());
  for (std::size_t c = 0; c < labels.size(); ++c) labels[c] = c <= edge_index ? 0 : 1;
  return nisim::CellFunction::from_labels(grid, 2, labels);
}

}  // namespace fixtures
