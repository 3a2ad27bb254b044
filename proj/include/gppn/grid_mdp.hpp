#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <queue>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gppn {

/// Thrown when a caller breaks a documented precondition.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline void require(bool cond, const char* what) {
  if (!cond) throw ContractViolation(what);
}

enum class Kernel : std::uint8_t { kNews = 0, kMoore = 1, kDiffDrive = 2 };

constexpr int action_count(Kernel k) {
  switch (k) {
    case Kernel::kNews: return 4;
    case Kernel::kMoore: return 8;
    case Kernel::kDiffDrive: return 3;
  }
  return 0;
}

constexpr int orientation_count(Kernel k) {
  return k == Kernel::kDiffDrive ? 4 : 1;
}

inline std::string_view kernel_name(Kernel k) {
  switch (k) {
    case Kernel::kNews: return "news";
    case Kernel::kMoore: return "moore";
    case Kernel::kDiffDrive: return "diffdrive";
  }
  return "?";
}

inline Kernel parse_kernel(std::string_view s) {
  if (s == "news" || s == "NEWS") return Kernel::kNews;
  if (s == "moore" || s == "MOORE") return Kernel::kMoore;
  if (s == "diffdrive" || s == "DIFFDRIVE") return Kernel::kDiffDrive;
  throw std::invalid_argument("unknown kernel: " + std::string(s));
}

// Orientation codes, also the direction order used by NEWS actions.
enum Orientation : int { kNorth = 0, kEast = 1, kSouth = 2, kWest = 3 };

// NEWS actions: 0=N 1=E 2=S 3=W.
// Moore actions: N, NE, E, SE, S, SW, W, NW.
// Differential drive actions: 0=forward 1=turn left 2=turn right.
enum DiffDriveAction : int { kForward = 0, kTurnLeft = 1, kTurnRight = 2 };

namespace detail {
// y grows southwards (row index).
inline constexpr std::array<int, 4> kNewsDx = {0, 1, 0, -1};
inline constexpr std::array<int, 4> kNewsDy = {-1, 0, 1, 0};
inline constexpr std::array<int, 8> kMooreDx = {0, 1, 1, 1, 0, -1, -1, -1};
inline constexpr std::array<int, 8> kMooreDy = {-1, -1, 0, 1, 1, 1, 0, -1};
}  // namespace detail

struct AgentState {
  int x = 0;
  int y = 0;
  int orientation = 0;

  friend bool operator==(const AgentState&, const AgentState&) = default;
};

struct GoalSpec {
  AgentState goal;
  friend bool operator==(const GoalSpec&, const GoalSpec&) = default;
};

/// Square occupancy map; true marks an open cell. Construction checks the
/// border, non-emptiness and 4-connectivity of the open cells.
class MazeGrid {
 public:
  MazeGrid() = default;

  MazeGrid(int m, std::vector<bool> open) : m_(m), open_(std::move(open)) {
    require(m >= 1, "maze size must be positive");
    require(open_.size() == static_cast<std::size_t>(m) * m,
            "maze cell count must be m*m");
    for (int i = 0; i < m; ++i) {
      require(!is_open(i, 0) && !is_open(i, m - 1) && !is_open(0, i) &&
                  !is_open(m - 1, i),
              "maze border cells must be walls");
    }
    require(open_count() > 0, "maze must contain an open cell");
    require(connected(), "open cells of a maze must be 4-connected");
  }

  int size() const { return m_; }

  bool in_bounds(int x, int y) const {
    return x >= 0 && y >= 0 && x < m_ && y < m_;
  }

  bool is_open(int x, int y) const {
    return in_bounds(x, y) && open_[static_cast<std::size_t>(y) * m_ + x];
  }

  const std::vector<bool>& cells() const { return open_; }

  int open_count() const {
    int n = 0;
    for (bool b : open_) n += b ? 1 : 0;
    return n;
  }

  friend bool operator==(const MazeGrid&, const MazeGrid&) = default;

 private:
  bool connected() const {
    int start = -1;
    for (std::size_t i = 0; i < open_.size(); ++i) {
      if (open_[i]) {
        start = static_cast<int>(i);
        break;
      }
    }
    std::vector<bool> seen(open_.size(), false);
    std::queue<int> frontier;
    frontier.push(start);
    seen[start] = true;
    int reached = 1;
    while (!frontier.empty()) {
      const int c = frontier.front();
      frontier.pop();
      const int x = c % m_, y = c / m_;
      for (int d = 0; d < 4; ++d) {
        const int nx = x + detail::kNewsDx[d], ny = y + detail::kNewsDy[d];
        if (!is_open(nx, ny)) continue;
        const int n = ny * m_ + nx;
        if (seen[n]) continue;
        seen[n] = true;
        ++reached;
        frontier.push(n);
      }
    }
    return reached == open_count();
  }

  int m_ = 0;
  std::vector<bool> open_;
};

inline bool valid_state(const MazeGrid& maze, Kernel kernel,
                        const AgentState& s) {
  return maze.is_open(s.x, s.y) && s.orientation >= 0 &&
         s.orientation < orientation_count(kernel);
}

/// Deterministic transition. Moves into walls or off the grid leave the
/// state unchanged.
inline AgentState successor(const MazeGrid& maze, Kernel kernel,
                            const AgentState& s, int action) {
  require(valid_state(maze, kernel, s), "successor: invalid state");
  require(action >= 0 && action < action_count(kernel),
          "successor: invalid action");
  AgentState next = s;
  switch (kernel) {
    case Kernel::kNews:
      next.x += detail::kNewsDx[action];
      next.y += detail::kNewsDy[action];
      break;
    case Kernel::kMoore:
      next.x += detail::kMooreDx[action];
      next.y += detail::kMooreDy[action];
      break;
    case Kernel::kDiffDrive:
      if (action == kTurnLeft) return {s.x, s.y, (s.orientation + 3) % 4};
      if (action == kTurnRight) return {s.x, s.y, (s.orientation + 1) % 4};
      next.x += detail::kNewsDx[s.orientation];
      next.y += detail::kNewsDy[s.orientation];
      break;
  }
  return maze.is_open(next.x, next.y) ? next : s;
}

/// Maps states to dense indices in enumerate_states order and back.
class StateIndex {
 public:
  StateIndex(const MazeGrid& maze, Kernel kernel)
      : m_(maze.size()),
        orientations_(orientation_count(kernel)),
        index_(static_cast<std::size_t>(m_) * m_ * orientations_, -1) {
    for (int y = 0; y < m_; ++y) {
      for (int x = 0; x < m_; ++x) {
        if (!maze.is_open(x, y)) continue;
        for (int o = 0; o < orientations_; ++o) {
          index_[slot(x, y, o)] = static_cast<int>(states_.size());
          states_.push_back({x, y, o});
        }
      }
    }
  }

  std::size_t size() const { return states_.size(); }
  const std::vector<AgentState>& states() const { return states_; }
  const AgentState& operator[](std::size_t i) const { return states_[i]; }

  /// -1 for states not on an open cell.
  int index_of(const AgentState& s) const {
    if (s.x < 0 || s.y < 0 || s.x >= m_ || s.y >= m_ || s.orientation < 0 ||
        s.orientation >= orientations_)
      return -1;
    return index_[slot(s.x, s.y, s.orientation)];
  }

 private:
  std::size_t slot(int x, int y, int o) const {
    return (static_cast<std::size_t>(y) * m_ + x) * orientations_ + o;
  }

  int m_;
  int orientations_;
  std::vector<int> index_;
  std::vector<AgentState> states_;
};

/// Open cells in row-major order, crossed with orientations.
inline std::vector<AgentState> enumerate_states(const MazeGrid& maze,
                                                Kernel kernel) {
  require(maze.size() > 0 && maze.open_count() > 0,
          "enumerate_states: invalid maze");
  return StateIndex(maze, kernel).states();
}

/// One-hot goal image, orientation_count x m x m, flattened channel-major.
inline std::vector<double> goal_map(const GoalSpec& goal, Kernel kernel,
                                    int m) {
  const int channels = orientation_count(kernel);
  const auto& g = goal.goal;
  require(g.x >= 0 && g.y >= 0 && g.x < m && g.y < m && g.orientation >= 0 &&
              g.orientation < channels,
          "goal_map: goal out of range");
  std::vector<double> map(static_cast<std::size_t>(channels) * m * m, 0.0);
  map[(static_cast<std::size_t>(g.orientation) * m + g.y) * m + g.x] = 1.0;
  return map;
}

}  // namespace gppn
