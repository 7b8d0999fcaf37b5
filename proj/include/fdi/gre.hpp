#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "fdi/network.hpp"

namespace fdi {

/// Grid-with-Random-Edges generator parameters.
struct GreParams {
  int rows = 3;
  int cols = 2;
  double p = 0.6057;  // grid-edge keep probability
  double q = 0.3162;  // random-edge base probability
  uint64_t seed = 0;
  int max_retries = 100;  // strong-connectivity rejection cap
};

namespace detail {

inline int grid_distance(int rows, int cols, int a, int b) {
  (void)rows;
  const int ra = a / cols, ca = a % cols;
  const int rb = b / cols, cb = b % cols;
  return std::abs(ra - rb) + std::abs(ca - cb);
}

}  // namespace detail

/// Builds a rows x cols grid network. Each grid-adjacent directed edge is kept
/// with probability p. Each ordered non-adjacent pair (grid distance m >= 2)
/// gets a shortcut with probability q * 2^(1-m); shortcut count is capped at
/// the number of kept grid edges. Edge attributes are resampled uniformly with
/// replacement from `attribute_source`; shortcut free-flow times scale with m.
/// Regenerates until strongly connected (up to max_retries).
inline RoadNetwork generate_gre(const GreParams& params,
                                const RoadNetwork& attribute_source) {
  if (params.rows < 1 || params.cols < 1 || params.rows * params.cols < 2)
    throw std::invalid_argument("generate_gre: rows*cols must be >= 2");
  if (params.p < 0.0 || params.p > 1.0 || params.q < 0.0 || params.q > 1.0)
    throw std::invalid_argument("generate_gre: p, q must be in [0,1]");
  if (attribute_source.num_edges() == 0)
    throw std::invalid_argument("generate_gre: empty attribute source");

  const int rows = params.rows, cols = params.cols;
  const int n = rows * cols;
  RngStream rng(derive_seed(params.seed, /*tag=*/0x67726964));  // "grid"

  auto draw_attr = [&]() {
    return attribute_source.edge(static_cast<int>(
        rng.uniform_int(attribute_source.num_edges()))).attr;
  };

  for (int attempt = 0; attempt < params.max_retries; ++attempt) {
    RoadNetwork net(n);

    // grid edges: 4-neighborhood, each direction drawn independently
    int kept_grid = 0;
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const int u = r * cols + c;
        const int neighbors[2] = {c + 1 < cols ? u + 1 : -1,
                                  r + 1 < rows ? u + cols : -1};
        for (int v : neighbors) {
          if (v < 0) continue;
          if (rng.uniform() < params.p) {
            net.add_edge(u, v, draw_attr());
            ++kept_grid;
          }
          if (rng.uniform() < params.p) {
            net.add_edge(v, u, draw_attr());
            ++kept_grid;
          }
        }
      }
    }

    // distance-decayed shortcuts over ordered non-adjacent pairs
    struct Shortcut {
      int u, v, m;
    };
    std::vector<Shortcut> shortcuts;
    for (int u = 0; u < n; ++u) {
      for (int v = 0; v < n; ++v) {
        if (u == v) continue;
        const int m = detail::grid_distance(rows, cols, u, v);
        if (m < 2) continue;
        const double prob = params.q * std::pow(2.0, 1.0 - m);
        if (rng.uniform() < prob) shortcuts.push_back({u, v, m});
      }
    }
    if (static_cast<int>(shortcuts.size()) > kept_grid) {
      rng.shuffle(shortcuts);
      shortcuts.resize(kept_grid);
    }
    for (const auto& sc : shortcuts) {
      EdgeAttr attr = draw_attr();
      attr.free_flow_time *= sc.m;  // a shortcut spanning m cells is not faster
      net.add_edge(sc.u, sc.v, attr);
    }

    if (net.strongly_connected()) return net;
  }
  throw std::runtime_error("generate_gre: no strongly connected draw within retry cap");
}

}  // namespace fdi
