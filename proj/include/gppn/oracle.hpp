#pragma once

#include <cstdint>
#include <deque>
#include <limits>
#include <stdexcept>
#include <vector>

#include "gppn/grid_mdp.hpp"

namespace gppn {

inline constexpr int kUnreachable = std::numeric_limits<int>::max();
/// Label carried by the goal state; it has no optimal action.
inline constexpr int kStayLabel = -1;

/// Distance-to-goal in actions, indexed like enumerate_states.
struct DistanceMap {
  std::vector<int> dist;
};

/// Optimal action per state, indexed like enumerate_states.
struct LabelMap {
  std::vector<int> label;
};

/// Reverse BFS from the goal over the deterministic transition graph.
inline DistanceMap bfs_distances(const MazeGrid& maze, Kernel kernel,
                                 const GoalSpec& goal) {
  require(valid_state(maze, kernel, goal.goal), "bfs_distances: invalid goal");
  const StateIndex index(maze, kernel);
  const int n = static_cast<int>(index.size());
  const int actions = action_count(kernel);

  std::vector<std::vector<int>> predecessors(n);
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < actions; ++a) {
      const int t = index.index_of(successor(maze, kernel, index[s], a));
      if (t != s) predecessors[t].push_back(s);
    }
  }

  DistanceMap out{std::vector<int>(n, kUnreachable)};
  std::deque<int> frontier;
  const int g = index.index_of(goal.goal);
  out.dist[g] = 0;
  frontier.push_back(g);
  while (!frontier.empty()) {
    const int t = frontier.front();
    frontier.pop_front();
    for (int s : predecessors[t]) {
      if (out.dist[s] != kUnreachable) continue;
      out.dist[s] = out.dist[t] + 1;
      frontier.push_back(s);
    }
  }
  return out;
}

/// Lowest-index action whose successor is one step closer to the goal.
inline LabelMap optimal_labels(const DistanceMap& dist, const MazeGrid& maze,
                               Kernel kernel) {
  const StateIndex index(maze, kernel);
  if (dist.dist.size() != index.size())
    throw std::logic_error("optimal_labels: distance map size mismatch");
  LabelMap out{std::vector<int>(index.size(), kStayLabel)};
  for (std::size_t s = 0; s < index.size(); ++s) {
    const int d = dist.dist[s];
    if (d == 0) continue;
    if (d == kUnreachable)
      throw std::logic_error("optimal_labels: unreachable state");
    int best = kStayLabel;
    for (int a = 0; a < action_count(kernel); ++a) {
      const int t = index.index_of(successor(maze, kernel, index[s], a));
      if (dist.dist[t] == d - 1) {
        best = a;
        break;
      }
    }
    if (best == kStayLabel)
      throw std::logic_error("optimal_labels: inconsistent distance map");
    out.label[s] = best;
  }
  return out;
}

struct ValueIterationResult {
  std::vector<double> value;
  std::vector<int> policy;  // kStayLabel at the goal
};

/// Tabular value iteration on the true model: reward -1 per step, absorbing
/// zero-reward goal. Greedy ties go to the lowest action index.
inline ValueIterationResult value_iteration(const MazeGrid& maze,
                                            Kernel kernel,
                                            const GoalSpec& goal,
                                            double gamma, int iters) {
  require(gamma > 0.0 && gamma < 1.0, "value_iteration: gamma must be in (0,1)");
  require(iters >= 0, "value_iteration: negative iteration count");
  const StateIndex index(maze, kernel);
  const int n = static_cast<int>(index.size());
  const int actions = action_count(kernel);
  const int g = index.index_of(goal.goal);
  require(g >= 0, "value_iteration: invalid goal");

  std::vector<int> next(static_cast<std::size_t>(n) * actions);
  for (int s = 0; s < n; ++s)
    for (int a = 0; a < actions; ++a)
      next[static_cast<std::size_t>(s) * actions + a] =
          index.index_of(successor(maze, kernel, index[s], a));

  std::vector<double> v(n, 0.0), v_next(n, 0.0);
  for (int k = 0; k < iters; ++k) {
    for (int s = 0; s < n; ++s) {
      if (s == g) {
        v_next[s] = 0.0;
        continue;
      }
      double best = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < actions; ++a) {
        const double q =
            -1.0 + gamma * v[next[static_cast<std::size_t>(s) * actions + a]];
        if (q > best) best = q;
      }
      v_next[s] = best;
    }
    v.swap(v_next);
  }

  ValueIterationResult out{v, std::vector<int>(n, kStayLabel)};
  for (int s = 0; s < n; ++s) {
    if (s == g) continue;
    double best = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < actions; ++a) {
      const double q =
          -1.0 + gamma * v[next[static_cast<std::size_t>(s) * actions + a]];
      if (q > best) {
        best = q;
        out.policy[s] = a;
      }
    }
  }
  return out;
}

}  // namespace gppn
