#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gppn/grid_mdp.hpp"
#include "gppn/rng.hpp"
#include "gppn/tensor.hpp"

namespace gppn {

enum class Arch : std::uint8_t { kVin = 0, kGppn = 1, kHyperVin = 2 };

inline std::string_view arch_name(Arch a) {
  switch (a) {
    case Arch::kVin: return "vin";
    case Arch::kGppn: return "gppn";
    case Arch::kHyperVin: return "hypervin";
  }
  return "?";
}

inline Arch parse_arch(std::string_view s) {
  if (s == "vin" || s == "VIN") return Arch::kVin;
  if (s == "gppn" || s == "GPPN") return Arch::kGppn;
  if (s == "hypervin" || s == "HYPERVIN" || s == "hyper-vin") return Arch::kHyperVin;
  throw std::invalid_argument("unknown architecture: " + std::string(s));
}

/// Hidden width used when none is given: 600 channels for VIN-style
/// planners, 150 LSTM units for GPPN.
constexpr int default_hidden(Arch a) { return a == Arch::kGppn ? 150 : 600; }

struct PlannerConfig {
  Arch arch = Arch::kGppn;
  int K = 20;
  int F = 3;
  int hidden = 150;
  Kernel kernel = Kernel::kNews;

  int input_channels() const { return 1 + orientation_count(kernel); }
  int head_channels() const {
    return orientation_count(kernel) * action_count(kernel);
  }

  void validate() const {
    if (K < 1) throw ContractViolation("planner: K must be >= 1");
    if (F < 3 || F % 2 == 0) throw ContractViolation("planner: F must be odd and >= 3");
    if (hidden < 1) throw ContractViolation("planner: hidden must be >= 1");
    if (arch == Arch::kHyperVin && F != 3)
      throw ContractViolation("planner: Hyper-VIN uses F = 3");
  }

  friend bool operator==(const PlannerConfig&, const PlannerConfig&) = default;
};

/// Named parameter tensors of one planner, in a fixed per-architecture order.
template <typename T>
struct ModelParams {
  PlannerConfig cfg;
  std::vector<std::pair<std::string, ad::Tensor<T>>> tensors;

  ad::Tensor<T>& at(std::string_view name) {
    for (auto& [n, t] : tensors)
      if (n == name) return t;
    throw std::out_of_range("no parameter named " + std::string(name));
  }
  const ad::Tensor<T>& at(std::string_view name) const {
    return const_cast<ModelParams*>(this)->at(name);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors) n += t.size();
    return n;
  }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out{cfg, {}};
    for (const auto& [n, t] : tensors) out.tensors.emplace_back(n, t.template cast<U>());
    return out;
  }
};

struct ParamSpec {
  std::string name;
  ad::Shape shape;
  std::size_t fan_in;
};

/// Parameter names, shapes and fan-ins for a configuration.
inline std::vector<ParamSpec> param_layout(const PlannerConfig& cfg) {
  cfg.validate();
  using S = std::size_t;
  const S c = cfg.input_channels(), f = cfg.F, h = cfg.hidden;
  const S head = cfg.head_channels();
  std::vector<ParamSpec> out;
  switch (cfg.arch) {
    case Arch::kVin:
      out = {{"reward.weight", {1, c, f, f}, c * f * f},
             {"reward.bias", {1}, c * f * f},
             {"q.weight", {h, 2, f, f}, 2 * f * f}};
      break;
    case Arch::kGppn:
      out = {{"input.weight", {h, c, f, f}, c * f * f},
             {"input.bias", {h}, c * f * f},
             {"recur.weight", {1, h, f, f}, h * f * f},
             {"recur.bias", {1}, h * f * f},
             {"lstm.weight", {4 * h, 1 + h}, 1 + h},
             {"lstm.bias", {4 * h}, 1 + h}};
      break;
    case Arch::kHyperVin:
      out = {{"reward.weight", {1, c, 3, 3}, c * 9},
             {"reward.bias", {1}, c * 9},
             {"hyper1.weight", {h, c, 3, 3}, c * 9},
             {"hyper1.bias", {h}, c * 9},
             {"hyper2.weight", {h * 18, h, 3, 3}, h * 9},
             {"hyper2.bias", {h * 18}, h * 9}};
      break;
  }
  out.push_back({"head.weight", {head, h, 1, 1}, h});
  out.push_back({"head.bias", {head}, h});
  return out;
}

template <typename T>
ModelParams<T> zero_params(const PlannerConfig& cfg) {
  ModelParams<T> p{cfg, {}};
  for (auto& spec : param_layout(cfg))
    p.tensors.emplace_back(spec.name, ad::Tensor<T>(spec.shape));
  return p;
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) everywhere, LSTM forget-gate
/// bias set to 1.
template <typename T>
ModelParams<T> init_params(const PlannerConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  ModelParams<T> p{cfg, {}};
  for (auto& spec : param_layout(cfg)) {
    ad::Tensor<T> t(spec.shape);
    const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
    for (auto& v : t.vec()) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
    if (spec.name == "lstm.bias") {
      const std::size_t h = static_cast<std::size_t>(cfg.hidden);
      for (std::size_t j = h; j < 2 * h; ++j) t[j] = T{1};
    }
    p.tensors.emplace_back(spec.name, std::move(t));
  }
  return p;
}

/// Parameters registered on a tape, parallel to ModelParams::tensors.
struct BoundParams {
  std::vector<std::string> names;
  std::vector<ad::Var> vars;

  ad::Var operator[](std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return vars[i];
    throw std::out_of_range("no bound parameter named " + std::string(name));
  }
};

template <typename T>
BoundParams bind(ad::Tape<T>& tape, const ModelParams<T>& p, bool trainable = true) {
  BoundParams b;
  for (const auto& [name, t] : p.tensors) {
    b.names.push_back(name);
    b.vars.push_back(trainable ? tape.parameter(t) : tape.constant(t));
  }
  return b;
}

/// Where each state's logits live in the head output: channel block
/// orientation*A at the state's cell.
struct StateGather {
  std::vector<int> channel_base;
  std::vector<int> position;
  int actions = 0;
};

inline StateGather make_gather(const MazeGrid& maze, Kernel kernel) {
  StateGather g;
  g.actions = action_count(kernel);
  for (const auto& s : enumerate_states(maze, kernel)) {
    g.channel_base.push_back(s.orientation * g.actions);
    g.position.push_back(s.y * maze.size() + s.x);
  }
  return g;
}

/// Stacked planner input: maze occupancy (1 = open) followed by the goal map.
template <typename T>
ad::Tensor<T> make_input(const MazeGrid& maze, const GoalSpec& goal, Kernel kernel) {
  const int m = maze.size();
  const std::size_t plane = static_cast<std::size_t>(m) * m;
  const auto gm = goal_map(goal, kernel, m);
  ad::Tensor<T> x({static_cast<std::size_t>(1 + orientation_count(kernel)),
                   static_cast<std::size_t>(m), static_cast<std::size_t>(m)});
  for (std::size_t i = 0; i < plane; ++i) x[i] = maze.cells()[i] ? T{1} : T{0};
  for (std::size_t i = 0; i < gm.size(); ++i) x[plane + i] = static_cast<T>(gm[i]);
  return x;
}

namespace detail {

template <typename T>
void check_input(const ad::Tape<T>& tape, ad::Var input, const PlannerConfig& cfg) {
  cfg.validate();
  const auto& s = tape.value(input).shape();
  require(s.size() == 3 && s[0] == static_cast<std::size_t>(cfg.input_channels()) &&
              s[1] == s[2],
          "planner: input must be (1 + orientations) x m x m");
}

template <typename T>
ad::Var policy_head(ad::Tape<T>& tape, const BoundParams& p, ad::Var features,
                    const StateGather& gather) {
  const ad::Var head = ad::conv2d(tape, features, p["head.weight"], p["head.bias"]);
  return ad::gather_positions(tape, head, gather.channel_base, gather.position,
                              gather.actions);
}

}  // namespace detail

/// VIN: reward conv, K rounds of Q = conv([R; V]) and V = max_a Q, then a
/// 1x1 head on the final Q.
template <typename T>
ad::Var vin_forward(ad::Tape<T>& tape, const BoundParams& p, ad::Var input,
                    const PlannerConfig& cfg, const StateGather& gather) {
  detail::check_input(tape, input, cfg);
  const std::size_t m = tape.value(input).dim(1);
  const ad::Var reward = ad::conv2d(tape, input, p["reward.weight"], p["reward.bias"]);
  ad::Var value = tape.constant(ad::Tensor<T>({1, m, m}));
  ad::Var q{};
  for (int k = 0; k < cfg.K; ++k) {
    const ad::Var stacked = ad::concat_channels(tape, {reward, value});
    q = ad::conv2d(tape, stacked, p["q.weight"], std::nullopt);
    value = ad::channel_max(tape, q).values;
  }
  return detail::policy_head(tape, p, q, gather);
}

/// GPPN: h0 from an input conv, then K steps of a position-shared LSTM fed
/// by a 1-channel conv of the previous hidden map.
template <typename T>
ad::Var gppn_forward(ad::Tape<T>& tape, const BoundParams& p, ad::Var input,
                     const PlannerConfig& cfg, const StateGather& gather) {
  detail::check_input(tape, input, cfg);
  const std::size_t m = tape.value(input).dim(1);
  const std::size_t positions = m * m;
  const std::size_t hid = static_cast<std::size_t>(cfg.hidden);
  const ad::LstmParams<T> lstm{p["lstm.weight"], p["lstm.bias"]};

  ad::Var h_map = ad::conv2d(tape, input, p["input.weight"], p["input.bias"]);
  ad::Var h = ad::transpose(tape, ad::reshape(tape, h_map, {hid, positions}));
  ad::Var c = tape.constant(ad::Tensor<T>({positions, hid}));
  for (int k = 0; k < cfg.K; ++k) {
    const ad::Var x_map = ad::conv2d(tape, h_map, p["recur.weight"], p["recur.bias"]);
    const ad::Var x = ad::reshape(tape, x_map, {positions, 1});
    const auto next = ad::lstm_cell(tape, x, h, c, lstm);
    h = next.h;
    c = next.c;
    h_map = ad::reshape(tape, ad::transpose(tape, h), {hid, m, m});
  }
  return detail::policy_head(tape, p, h_map, gather);
}

/// Hyper-VIN: a two-layer conv hypernetwork predicts a 3x3 filter bank for
/// [R; V] at every position; the VIN recurrence then uses those untied
/// filters.
template <typename T>
ad::Var hypervin_forward(ad::Tape<T>& tape, const BoundParams& p, ad::Var input,
                         const PlannerConfig& cfg, const StateGather& gather) {
  detail::check_input(tape, input, cfg);
  const std::size_t m = tape.value(input).dim(1);
  const ad::Var reward = ad::conv2d(tape, input, p["reward.weight"], p["reward.bias"]);
  const ad::Var hidden = ad::tanh(
      tape, ad::conv2d(tape, input, p["hyper1.weight"], p["hyper1.bias"]));
  const ad::Var filters = ad::conv2d(tape, hidden, p["hyper2.weight"], p["hyper2.bias"]);
  ad::Var value = tape.constant(ad::Tensor<T>({1, m, m}));
  ad::Var q{};
  for (int k = 0; k < cfg.K; ++k) {
    const ad::Var stacked = ad::concat_channels(tape, {reward, value});
    q = ad::local_conv2d(tape, stacked, filters, cfg.hidden, 3);
    value = ad::channel_max(tape, q).values;
  }
  return detail::policy_head(tape, p, q, gather);
}

/// Per-state action logits, S x A in enumerate_states order.
template <typename T>
ad::Var planner_forward(ad::Tape<T>& tape, const BoundParams& p, ad::Var input,
                        const PlannerConfig& cfg, const StateGather& gather) {
  switch (cfg.arch) {
    case Arch::kVin: return vin_forward(tape, p, input, cfg, gather);
    case Arch::kGppn: return gppn_forward(tape, p, input, cfg, gather);
    case Arch::kHyperVin: return hypervin_forward(tape, p, input, cfg, gather);
  }
  throw ContractViolation("planner: unknown architecture");
}

}  // namespace gppn
