#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gppn/binary_io.hpp"
#include "gppn/grid_mdp.hpp"
#include "gppn/maze_gen.hpp"
#include "gppn/oracle.hpp"

// Dataset file layout (all integers little-endian):
//
//   header   "GPPN" | version u16 | m u16 | kernel u8 | count u32 |
//            generator seed u64 | tie-break policy u8
//   record   maze bitmap: ceil(m*m/8) bytes, cell (x,y) is bit (y*m+x),
//              LSB-first within each byte, 1 = open
//            goal: orientation u8 | x u16 | y u16
//            labels: u8 per state in enumerate_states order
//              (0xFE = goal/stay, 0xFF reserved)
//            distances: u16 per state, same order

namespace gppn {

inline constexpr std::uint16_t kDatasetVersion = 1;
inline constexpr std::uint8_t kTieBreakLowestIndex = 0;
inline constexpr std::uint8_t kGoalLabelByte = 0xFE;
inline constexpr std::uint8_t kReservedLabelByte = 0xFF;

struct PlanningSample {
  MazeGrid maze;
  GoalSpec goal;
  LabelMap labels;
  DistanceMap distances;

  friend bool operator==(const PlanningSample& a, const PlanningSample& b) {
    return a.maze == b.maze && a.goal == b.goal && a.labels.label == b.labels.label &&
           a.distances.dist == b.distances.dist;
  }
};

struct Dataset {
  int m = 0;
  Kernel kernel = Kernel::kNews;
  std::uint64_t seed = 0;
  std::uint8_t tie_break = kTieBreakLowestIndex;
  std::vector<PlanningSample> samples;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Builds one labelled sample from an independent stream seeded with
/// seed ^ index.
inline PlanningSample generate_sample(int m, Kernel kernel, std::uint64_t seed,
                                      std::uint64_t index,
                                      std::optional<double> decimation = std::nullopt) {
  Rng rng(seed ^ index);
  MazeGenConfig cfg{m, seed ^ index, decimation};
  PlanningSample s;
  s.maze = generate_maze(cfg, rng);
  s.goal = sample_goal(s.maze, kernel, rng);
  s.distances = bfs_distances(s.maze, kernel, s.goal);
  s.labels = optimal_labels(s.distances, s.maze, kernel);
  return s;
}

inline Dataset generate_dataset(int m, Kernel kernel, std::size_t count, std::uint64_t seed,
                                std::optional<double> decimation = std::nullopt) {
  Dataset d{m, kernel, seed, kTieBreakLowestIndex, {}};
  d.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    d.samples.push_back(generate_sample(m, kernel, seed, i, decimation));
  return d;
}

/// Generator seed of split i (0 train, 1 val, 2 test) under a run seed.
inline std::uint64_t split_seed(std::uint64_t seed, std::size_t split) {
  return seed + 0x9E3779B97F4A7C15ULL * (split + 1);
}

inline std::vector<std::uint8_t> serialize(const Dataset& d) {
  io::ByteWriter w;
  w.put_bytes("GPPN");
  w.put<std::uint16_t>(kDatasetVersion);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(d.m));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(d.kernel));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(d.samples.size()));
  w.put<std::uint64_t>(d.seed);
  w.put<std::uint8_t>(d.tie_break);
  const std::size_t cells = static_cast<std::size_t>(d.m) * d.m;
  for (const auto& s : d.samples) {
    std::vector<std::uint8_t> bits((cells + 7) / 8, 0);
    for (std::size_t i = 0; i < cells; ++i)
      if (s.maze.cells()[i]) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    w.put_bytes(bits);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(s.goal.goal.orientation));
    w.put<std::uint16_t>(static_cast<std::uint16_t>(s.goal.goal.x));
    w.put<std::uint16_t>(static_cast<std::uint16_t>(s.goal.goal.y));
    for (int l : s.labels.label)
      w.put<std::uint8_t>(l == kStayLabel ? kGoalLabelByte : static_cast<std::uint8_t>(l));
    for (int dist : s.distances.dist) w.put<std::uint16_t>(static_cast<std::uint16_t>(dist));
  }
  return w.bytes();
}

inline Dataset parse_dataset(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes);
  if (r.get_string(4, "magic") != "GPPN") throw io::ParseError("bad magic", 0);
  const auto version = r.get<std::uint16_t>("version");
  if (version != kDatasetVersion)
    throw io::ParseError("unsupported version " + std::to_string(version), 4);
  Dataset d;
  d.m = r.get<std::uint16_t>("maze size");
  if (d.m < 3) throw io::ParseError("maze size too small", 6);
  const auto kernel = r.get<std::uint8_t>("kernel");
  if (kernel > 2) throw io::ParseError("unknown kernel code", 8);
  d.kernel = static_cast<Kernel>(kernel);
  const auto count = r.get<std::uint32_t>("sample count");
  d.seed = r.get<std::uint64_t>("generator seed");
  d.tie_break = r.get<std::uint8_t>("tie-break policy");
  if (d.tie_break != kTieBreakLowestIndex)
    throw io::ParseError("unknown tie-break policy", r.offset() - 1);

  const std::size_t cells = static_cast<std::size_t>(d.m) * d.m;
  const int actions = action_count(d.kernel);
  for (std::uint32_t n = 0; n < count; ++n) {
    const std::size_t record_start = r.offset();
    const auto* bits = r.take((cells + 7) / 8, "maze bitmap");
    std::vector<bool> open(cells);
    for (std::size_t i = 0; i < cells; ++i) open[i] = (bits[i / 8] >> (i % 8)) & 1u;
    PlanningSample s;
    try {
      s.maze = MazeGrid(d.m, std::move(open));
    } catch (const ContractViolation& e) {
      throw io::ParseError(std::string("invalid maze: ") + e.what(), record_start);
    }
    const std::size_t goal_at = r.offset();
    s.goal.goal.orientation = r.get<std::uint8_t>("goal orientation");
    s.goal.goal.x = r.get<std::uint16_t>("goal x");
    s.goal.goal.y = r.get<std::uint16_t>("goal y");
    if (!valid_state(s.maze, d.kernel, s.goal.goal))
      throw io::ParseError("goal is not a valid open state", goal_at);

    const std::size_t states = StateIndex(s.maze, d.kernel).size();
    s.labels.label.resize(states);
    for (std::size_t i = 0; i < states; ++i) {
      const auto b = r.get<std::uint8_t>("label");
      if (b == kGoalLabelByte) {
        s.labels.label[i] = kStayLabel;
      } else if (b == kReservedLabelByte || b >= actions) {
        throw io::ParseError("invalid label byte", r.offset() - 1);
      } else {
        s.labels.label[i] = b;
      }
    }
    s.distances.dist.resize(states);
    for (std::size_t i = 0; i < states; ++i)
      s.distances.dist[i] = r.get<std::uint16_t>("distance");
    d.samples.push_back(std::move(s));
  }
  if (!r.at_end()) r.fail("trailing bytes after last record");
  return d;
}

inline Dataset load_dataset(const std::string& path) { return parse_dataset(io::read_file(path)); }

inline void save_dataset(const std::string& path, const Dataset& d) {
  io::write_file(path, serialize(d));
}

/// Checks stored distances against BFS and every stored label against the
/// stored distances. Returns one message per violation.
inline std::vector<std::string> oracle_check(const Dataset& d) {
  std::vector<std::string> errors;
  for (std::size_t n = 0; n < d.samples.size(); ++n) {
    const auto& s = d.samples[n];
    const std::string where = "sample " + std::to_string(n) + ": ";
    const StateIndex index(s.maze, d.kernel);
    const int g = index.index_of(s.goal.goal);
    const auto expected = bfs_distances(s.maze, d.kernel, s.goal);
    if (expected.dist != s.distances.dist) errors.push_back(where + "distance map differs from BFS");
    for (std::size_t i = 0; i < index.size(); ++i) {
      const int label = s.labels.label[i];
      if (static_cast<int>(i) == g) {
        if (label != kStayLabel) errors.push_back(where + "goal state carries an action label");
        if (s.distances.dist[i] != 0) errors.push_back(where + "goal distance is not zero");
        continue;
      }
      if (label == kStayLabel) {
        errors.push_back(where + "non-goal state " + std::to_string(i) + " labelled stay");
        continue;
      }
      const int t = index.index_of(successor(s.maze, d.kernel, index[i], label));
      if (s.distances.dist[t] + 1 != s.distances.dist[i])
        errors.push_back(where + "label of state " + std::to_string(i) +
                         " does not decrease distance");
    }
  }
  return errors;
}

}  // namespace gppn
