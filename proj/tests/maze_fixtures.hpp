#pragma once

#include <string>
#include <vector>

#include "gppn/grid_mdp.hpp"

namespace gppn::testing {

/// '.' is open, anything else a wall; rows are y, columns x.
inline MazeGrid maze_from_rows(const std::vector<std::string>& rows) {
  const int m = static_cast<int>(rows.size());
  std::vector<bool> open;
  for (const auto& r : rows)
    for (char c : r) open.push_back(c == '.');
  return MazeGrid(m, std::move(open));
}

/// Walled border around a fully open interior.
inline MazeGrid open_room(int m) {
  std::vector<bool> open(static_cast<std::size_t>(m) * m, false);
  for (int y = 1; y < m - 1; ++y)
    for (int x = 1; x < m - 1; ++x) open[static_cast<std::size_t>(y) * m + x] = true;
  return MazeGrid(m, std::move(open));
}

}  // namespace gppn::testing
