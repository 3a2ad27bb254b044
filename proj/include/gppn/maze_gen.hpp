#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "gppn/grid_mdp.hpp"
#include "gppn/rng.hpp"

namespace gppn {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct MazeGenConfig {
  int m = 15;
  std::uint64_t seed = 0;
  // Wall-decimation probability; empty means draw d ~ U[0,1] per maze.
  std::optional<double> decimation;
};

/// Recursive-backtracker maze on the room lattice (rooms at odd coordinates),
/// followed by decimation of the room-to-room wall slots.
///
/// Random draws, in order: DFS neighbour choices, then d (if not fixed), then
/// one uniform per interior wall slot in row-major order.
inline MazeGrid generate_maze(const MazeGenConfig& cfg, Rng& rng) {
  const int m = cfg.m;
  if (m < 5 || m % 2 == 0) throw ConfigError("maze size must be odd and >= 5");
  if (cfg.decimation && !(*cfg.decimation >= 0.0 && *cfg.decimation <= 1.0))
    throw ConfigError("decimation probability must lie in [0,1]");

  const int rooms = (m - 1) / 2;
  std::vector<bool> open(static_cast<std::size_t>(m) * m, false);
  auto set_open = [&](int x, int y) {
    open[static_cast<std::size_t>(y) * m + x] = true;
  };

  std::vector<bool> visited(static_cast<std::size_t>(rooms) * rooms, false);
  std::vector<std::pair<int, int>> stack;
  stack.emplace_back(0, 0);
  visited[0] = true;
  set_open(1, 1);
  while (!stack.empty()) {
    const auto [rx, ry] = stack.back();
    int candidates[4];
    int n = 0;
    for (int d = 0; d < 4; ++d) {
      const int nx = rx + detail::kNewsDx[d], ny = ry + detail::kNewsDy[d];
      if (nx < 0 || ny < 0 || nx >= rooms || ny >= rooms) continue;
      if (visited[static_cast<std::size_t>(ny) * rooms + nx]) continue;
      candidates[n++] = d;
    }
    if (n == 0) {
      stack.pop_back();
      continue;
    }
    const int d = candidates[rng.below(static_cast<std::uint64_t>(n))];
    const int nx = rx + detail::kNewsDx[d], ny = ry + detail::kNewsDy[d];
    visited[static_cast<std::size_t>(ny) * rooms + nx] = true;
    set_open(2 * nx + 1, 2 * ny + 1);
    set_open(2 * rx + 1 + detail::kNewsDx[d], 2 * ry + 1 + detail::kNewsDy[d]);
    stack.emplace_back(nx, ny);
  }

  const double d = cfg.decimation ? *cfg.decimation : rng.uniform();
  for (int y = 1; y < m - 1; ++y) {
    for (int x = 1; x < m - 1; ++x) {
      // Wall slots between two rooms have exactly one even coordinate.
      if ((x % 2) == (y % 2)) continue;
      const bool hit = rng.bernoulli(d);
      if (hit) set_open(x, y);
    }
  }
  return MazeGrid(m, std::move(open));
}

inline MazeGrid generate_maze(const MazeGenConfig& cfg) {
  Rng rng(cfg.seed);
  return generate_maze(cfg, rng);
}

/// Uniform open cell; uniform orientation under differential drive.
inline GoalSpec sample_goal(const MazeGrid& maze, Kernel kernel, Rng& rng) {
  std::vector<std::pair<int, int>> cells;
  for (int y = 0; y < maze.size(); ++y)
    for (int x = 0; x < maze.size(); ++x)
      if (maze.is_open(x, y)) cells.emplace_back(x, y);
  require(!cells.empty(), "sample_goal: maze has no open cell");
  const auto [x, y] = cells[rng.below(cells.size())];
  const int o = kernel == Kernel::kDiffDrive
                    ? static_cast<int>(rng.below(4))
                    : 0;
  return GoalSpec{{x, y, o}};
}

}  // namespace gppn
