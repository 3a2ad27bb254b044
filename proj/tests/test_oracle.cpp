#include <cstdlib>
#include <functional>

#include "gppn/maze_gen.hpp"
#include "gppn/oracle.hpp"
#include "gtest/gtest.h"
#include "maze_fixtures.hpp"

namespace gppn {
namespace {

using testing::open_room;

constexpr Kernel kAllKernels[] = {Kernel::kNews, Kernel::kMoore, Kernel::kDiffDrive};

// Shortest action sequence by iterative deepening over raw successor calls.
int brute_force_distance(const MazeGrid& maze, Kernel k, AgentState s, const AgentState& goal,
                         int max_depth) {
  std::function<bool(const AgentState&, int)> reach = [&](const AgentState& cur, int depth) {
    if (cur == goal) return true;
    if (depth == 0) return false;
    for (int a = 0; a < action_count(k); ++a)
      if (reach(successor(maze, k, cur, a), depth - 1)) return true;
    return false;
  };
  for (int d = 0; d <= max_depth; ++d)
    if (reach(s, d)) return d;
  return -1;
}

int rollout_length(const MazeGrid& maze, Kernel k, const GoalSpec& goal,
                   const std::vector<int>& policy, AgentState s) {
  const StateIndex index(maze, k);
  int steps = 0;
  while (!(s == goal.goal) && steps < 4 * maze.size() * maze.size()) {
    s = successor(maze, k, s, policy[index.index_of(s)]);
    ++steps;
  }
  return s == goal.goal ? steps : -1;
}

TEST(BfsDistancesTest, GoalIsZero) {
  const MazeGrid maze = generate_maze({9, 4, std::nullopt});
  for (Kernel k : kAllKernels) {
    Rng rng(1);
    const GoalSpec goal = sample_goal(maze, k, rng);
    const auto dist = bfs_distances(maze, k, goal);
    EXPECT_EQ(dist.dist[StateIndex(maze, k).index_of(goal.goal)], 0);
  }
}

TEST(BfsDistancesTest, OpenRoomNewsIsManhattan) {
  const MazeGrid room = open_room(9);
  const GoalSpec goal{{3, 5, 0}};
  const auto dist = bfs_distances(room, Kernel::kNews, goal);
  const auto states = enumerate_states(room, Kernel::kNews);
  for (std::size_t i = 0; i < states.size(); ++i)
    EXPECT_EQ(dist.dist[i], std::abs(states[i].x - 3) + std::abs(states[i].y - 5));
}

TEST(BfsDistancesTest, OpenRoomMooreIsChebyshev) {
  const MazeGrid room = open_room(9);
  const GoalSpec goal{{2, 6, 0}};
  const auto dist = bfs_distances(room, Kernel::kMoore, goal);
  const auto states = enumerate_states(room, Kernel::kMoore);
  for (std::size_t i = 0; i < states.size(); ++i)
    EXPECT_EQ(dist.dist[i], std::max(std::abs(states[i].x - 2), std::abs(states[i].y - 6)));
}

TEST(BfsDistancesTest, DiffDriveTurnThenForward) {
  const MazeGrid room = open_room(7);
  const StateIndex index(room, Kernel::kDiffDrive);
  // Agent west of the goal cell facing north; goal faces east.
  {
    const GoalSpec goal{{3, 3, kEast}};
    const auto dist = bfs_distances(room, Kernel::kDiffDrive, goal);
    const AgentState agent{2, 3, kNorth};
    EXPECT_EQ(dist.dist[index.index_of(agent)], 2);
    EXPECT_EQ(brute_force_distance(room, Kernel::kDiffDrive, agent, goal.goal, 4), 2);
  }
  // Mirror image: agent east of the goal facing north; goal faces west.
  {
    const GoalSpec goal{{3, 3, kWest}};
    const auto dist = bfs_distances(room, Kernel::kDiffDrive, goal);
    EXPECT_EQ(dist.dist[index.index_of({4, 3, kNorth})], 2);
  }
}

TEST(BfsDistancesTest, MatchesExhaustiveSearchOnSmallMazes) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const MazeGrid maze = generate_maze({5, seed, std::nullopt});
    for (Kernel k : kAllKernels) {
      Rng rng(seed + 100);
      const GoalSpec goal = sample_goal(maze, k, rng);
      const auto dist = bfs_distances(maze, k, goal);
      const auto states = enumerate_states(maze, k);
      for (std::size_t i = 0; i < states.size(); ++i)
        ASSERT_EQ(dist.dist[i], brute_force_distance(maze, k, states[i], goal.goal, 12))
            << "kernel " << kernel_name(k) << " state " << i;
    }
  }
}

TEST(OptimalLabelsTest, TieBreakPicksLowestIndex) {
  const MazeGrid room = open_room(7);
  const GoalSpec goal{{3, 1, 0}};
  const auto dist = bfs_distances(room, Kernel::kNews, goal);
  const auto labels = optimal_labels(dist, room, Kernel::kNews);
  const StateIndex index(room, Kernel::kNews);
  // From (2,2) both North and East are optimal.
  EXPECT_EQ(labels.label[index.index_of({2, 2, 0})], kNorth);
  // From (3,3) only North is optimal.
  EXPECT_EQ(labels.label[index.index_of({3, 3, 0})], kNorth);
  // From (1,1) only East is optimal.
  EXPECT_EQ(labels.label[index.index_of({1, 1, 0})], kEast);
  EXPECT_EQ(labels.label[index.index_of(goal.goal)], kStayLabel);
}

TEST(OptimalLabelsTest, RejectsInconsistentDistances) {
  const MazeGrid room = open_room(5);
  const GoalSpec goal{{1, 1, 0}};
  auto dist = bfs_distances(room, Kernel::kNews, goal);
  dist.dist[8] = 17;  // (3,3) cannot be 17 steps away
  EXPECT_THROW(optimal_labels(dist, room, Kernel::kNews), std::logic_error);
  dist.dist.pop_back();
  EXPECT_THROW(optimal_labels(dist, room, Kernel::kNews), std::logic_error);
}

TEST(OracleProperty, BellmanConsistencyAndLabelValidity) {
  Rng meta(77);
  for (int i = 0; i < 100; ++i) {
    const MazeGrid maze = generate_maze({9, meta.next_u64(), std::nullopt});
    for (Kernel k : kAllKernels) {
      const GoalSpec goal = sample_goal(maze, k, meta);
      const auto dist = bfs_distances(maze, k, goal);
      const auto labels = optimal_labels(dist, maze, k);
      const StateIndex index(maze, k);
      for (std::size_t s = 0; s < index.size(); ++s) {
        ASSERT_NE(dist.dist[s], kUnreachable);
        if (dist.dist[s] == 0) {
          ASSERT_EQ(index[s], goal.goal);
          continue;
        }
        int best = kUnreachable;
        for (int a = 0; a < action_count(k); ++a)
          best = std::min(best, dist.dist[index.index_of(successor(maze, k, index[s], a))]);
        ASSERT_EQ(best, dist.dist[s] - 1);
        const int t = index.index_of(successor(maze, k, index[s], labels.label[s]));
        ASSERT_EQ(dist.dist[t], dist.dist[s] - 1);
      }
    }
  }
}

TEST(OracleProperty, TransposeSymmetry) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const MazeGrid maze = generate_maze({9, seed, std::nullopt});
    std::vector<bool> t(81);
    for (int y = 0; y < 9; ++y)
      for (int x = 0; x < 9; ++x) t[x * 9 + y] = maze.is_open(x, y);
    const MazeGrid transposed(9, t);
    for (Kernel k : {Kernel::kNews, Kernel::kMoore}) {
      Rng rng(seed);
      const GoalSpec goal = sample_goal(maze, k, rng);
      const GoalSpec goal_t{{goal.goal.y, goal.goal.x, 0}};
      const auto d = bfs_distances(maze, k, goal);
      const auto dt = bfs_distances(transposed, k, goal_t);
      const StateIndex idx(maze, k), idx_t(transposed, k);
      for (std::size_t s = 0; s < idx.size(); ++s) {
        const AgentState st{idx[s].y, idx[s].x, 0};
        ASSERT_EQ(d.dist[s], dt.dist[idx_t.index_of(st)]);
      }
    }
  }
}

TEST(ValueIterationTest, GoalAndAdjacentValues) {
  const MazeGrid room = open_room(7);
  const GoalSpec goal{{3, 3, 0}};
  const auto vi = value_iteration(room, Kernel::kNews, goal, 0.99, 50);
  const StateIndex index(room, Kernel::kNews);
  EXPECT_EQ(vi.value[index.index_of(goal.goal)], 0.0);
  EXPECT_EQ(vi.value[index.index_of({3, 2, 0})], -1.0);
  EXPECT_EQ(vi.value[index.index_of({4, 3, 0})], -1.0);
  EXPECT_DOUBLE_EQ(vi.value[index.index_of({4, 4, 0})], -1.0 - 0.99);
  EXPECT_EQ(vi.policy[index.index_of(goal.goal)], kStayLabel);
}

TEST(ValueIterationTest, RejectsBadGamma) {
  const MazeGrid room = open_room(5);
  EXPECT_THROW(value_iteration(room, Kernel::kNews, {{1, 1, 0}}, 1.0, 10), ContractViolation);
  EXPECT_THROW(value_iteration(room, Kernel::kNews, {{1, 1, 0}}, 0.0, 10), ContractViolation);
}

TEST(ValueIterationTest, GreedyRolloutsMatchBfsOnSmallMazes) {
  Rng meta(5);
  for (int i = 0; i < 30; ++i) {
    const MazeGrid maze = generate_maze({7, meta.next_u64(), std::nullopt});
    for (Kernel k : kAllKernels) {
      const GoalSpec goal = sample_goal(maze, k, meta);
      const auto dist = bfs_distances(maze, k, goal);
      const auto vi = value_iteration(maze, k, goal, 0.99, 4 * 7 * 7);
      const auto states = enumerate_states(maze, k);
      for (std::size_t s = 0; s < states.size(); ++s)
        ASSERT_EQ(rollout_length(maze, k, goal, vi.policy, states[s]), dist.dist[s]);
    }
  }
}

}  // namespace
}  // namespace gppn
