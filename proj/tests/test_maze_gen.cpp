#include <cmath>
#include <queue>
#include <set>
#include <utility>

#include "gppn/maze_gen.hpp"
#include "gtest/gtest.h"
#include "maze_fixtures.hpp"

namespace gppn {
namespace {

// Independent of MazeGrid's own constructor check.
bool flood_fill_connected(const MazeGrid& maze) {
  const int m = maze.size();
  std::vector<char> seen(static_cast<std::size_t>(m) * m, 0);
  std::queue<std::pair<int, int>> q;
  int total = 0, start_x = -1, start_y = -1;
  for (int y = 0; y < m; ++y)
    for (int x = 0; x < m; ++x)
      if (maze.is_open(x, y)) {
        ++total;
        if (start_x < 0) start_x = x, start_y = y;
      }
  q.emplace(start_x, start_y);
  seen[start_y * m + start_x] = 1;
  int reached = 0;
  while (!q.empty()) {
    auto [x, y] = q.front();
    q.pop();
    ++reached;
    const int dx[] = {1, -1, 0, 0}, dy[] = {0, 0, 1, -1};
    for (int d = 0; d < 4; ++d) {
      const int nx = x + dx[d], ny = y + dy[d];
      if (maze.is_open(nx, ny) && !seen[ny * m + nx]) {
        seen[ny * m + nx] = 1;
        q.emplace(nx, ny);
      }
    }
  }
  return reached == total;
}

std::set<std::pair<int, int>> open_cells(const MazeGrid& maze) {
  std::set<std::pair<int, int>> out;
  for (int y = 0; y < maze.size(); ++y)
    for (int x = 0; x < maze.size(); ++x)
      if (maze.is_open(x, y)) out.emplace(x, y);
  return out;
}

TEST(GenerateMazeTest, NoDecimationGivesSpanningTree) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const MazeGrid maze = generate_maze({5, seed, 0.0});
    const auto cells = open_cells(maze);
    int rooms = 0, slots = 0;
    for (auto [x, y] : cells) {
      if (x % 2 == 1 && y % 2 == 1) ++rooms;
      else ++slots;
    }
    EXPECT_EQ(rooms, 4);
    EXPECT_EQ(slots, 3);
  }
}

TEST(GenerateMazeTest, FullDecimationOpensEveryRoomSlot) {
  // Hand enumeration of the 5x5 lattice: rooms at odd/odd, room-to-room
  // slots at (2,1), (1,2), (3,2), (2,3); the pillar (2,2) stays closed.
  const std::set<std::pair<int, int>> expected = {{1, 1}, {3, 1}, {1, 3}, {3, 3},
                                                  {2, 1}, {1, 2}, {3, 2}, {2, 3}};
  const MazeGrid maze = generate_maze({5, 7, 1.0});
  EXPECT_EQ(open_cells(maze), expected);
  EXPECT_FALSE(maze.is_open(2, 2));
}

TEST(GenerateMazeTest, DeterministicForFixedSeed) {
  for (std::uint64_t seed : {0ull, 1ull, 12345ull}) {
    EXPECT_EQ(generate_maze({15, seed, 0.3}), generate_maze({15, seed, 0.3}));
    EXPECT_EQ(generate_maze({15, seed, std::nullopt}), generate_maze({15, seed, std::nullopt}));
  }
  EXPECT_NE(generate_maze({15, 1, 0.3}), generate_maze({15, 2, 0.3}));
}

TEST(GenerateMazeTest, RejectsBadConfig) {
  EXPECT_THROW(generate_maze({6, 0, 0.5}), ConfigError);
  EXPECT_THROW(generate_maze({3, 0, 0.5}), ConfigError);
  EXPECT_THROW(generate_maze({9, 0, 1.5}), ConfigError);
}

TEST(GenerateMazeProperty, ConnectedForRandomSeedsAndDecimation) {
  Rng meta(2024);
  for (int i = 0; i < 1000; ++i) {
    const std::uint64_t seed = meta.next_u64();
    const double d = meta.uniform();
    const int m = 5 + 2 * static_cast<int>(meta.below(6));
    const MazeGrid maze = generate_maze({m, seed, d});
    ASSERT_TRUE(flood_fill_connected(maze)) << "seed " << seed << " d " << d;
    for (int k = 0; k < m; ++k) {
      ASSERT_FALSE(maze.is_open(k, 0));
      ASSERT_FALSE(maze.is_open(0, k));
      ASSERT_FALSE(maze.is_open(k, m - 1));
      ASSERT_FALSE(maze.is_open(m - 1, k));
    }
    for (int y = 0; y < m; y += 2)
      for (int x = 0; x < m; x += 2) ASSERT_FALSE(maze.is_open(x, y)) << "pillar opened";
  }
}

TEST(GenerateMazeProperty, DecimationIsMonotone) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto sparse = open_cells(generate_maze({11, seed, 0.0}));
    const auto mid = open_cells(generate_maze({11, seed, 0.5}));
    const auto dense = open_cells(generate_maze({11, seed, 1.0}));
    for (const auto& c : sparse) {
      EXPECT_TRUE(mid.count(c));
      EXPECT_TRUE(dense.count(c));
    }
  }
}

TEST(SampleGoalTest, SingleOpenCell) {
  const MazeGrid maze = testing::maze_from_rows({"###", "#.#", "###"});
  Rng rng(3);
  for (int i = 0; i < 20; ++i)
    EXPECT_EQ(sample_goal(maze, Kernel::kNews, rng), (GoalSpec{{1, 1, 0}}));
}

TEST(SampleGoalTest, UniformOverOpenCells) {
  const MazeGrid room = testing::open_room(7);  // 25 open cells
  Rng rng(11);
  const int n = 10000;
  std::vector<int> counts(49, 0);
  for (int i = 0; i < n; ++i) {
    const GoalSpec g = sample_goal(room, Kernel::kNews, rng);
    ASSERT_EQ(g.goal.orientation, 0);
    ++counts[g.goal.y * 7 + g.goal.x];
  }
  const double p = 1.0 / 25.0;
  const double mean = n * p, sigma = std::sqrt(n * p * (1 - p));
  double chi2 = 0.0;
  for (int y = 0; y < 7; ++y) {
    for (int x = 0; x < 7; ++x) {
      const int c = counts[y * 7 + x];
      if (!room.is_open(x, y)) {
        EXPECT_EQ(c, 0);
        continue;
      }
      EXPECT_LT(std::abs(c - mean), 5 * sigma);
      chi2 += (c - mean) * (c - mean) / mean;
    }
  }
  // 24 degrees of freedom; 0.1% upper tail is about 51.2.
  EXPECT_LT(chi2, 51.2);
}

TEST(SampleGoalTest, DiffDriveOrientationsUniform) {
  const MazeGrid room = testing::open_room(5);
  Rng rng(5);
  std::vector<int> counts(4, 0);
  for (int i = 0; i < 4000; ++i) ++counts[sample_goal(room, Kernel::kDiffDrive, rng).goal.orientation];
  for (int c : counts) EXPECT_LT(std::abs(c - 1000), 5 * std::sqrt(4000 * 0.25 * 0.75));
}

}  // namespace
}  // namespace gppn
