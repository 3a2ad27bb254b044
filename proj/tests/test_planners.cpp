#include <cmath>

#include "gradcheck.hpp"
#include "gppn/dataset.hpp"
#include "gppn/planners.hpp"
#include "gtest/gtest.h"

namespace gppn {
namespace {

using ad::Tape;
using ad::Tensor;
using ad::Var;

/// Gathers every cell (walls included) so probes can address any position.
StateGather all_positions(int m, Kernel kernel) {
  StateGather g;
  g.actions = action_count(kernel);
  for (int p = 0; p < m * m; ++p)
    for (int o = 0; o < orientation_count(kernel); ++o) {
      g.channel_base.push_back(o * g.actions);
      g.position.push_back(p);
    }
  return g;
}

Tensor<double> run(const ModelParams<double>& params, const Tensor<double>& input,
                   const StateGather& gather) {
  Tape<double> tape;
  const auto bound = bind(tape, params, false);
  return tape.value(planner_forward(tape, bound, tape.constant(input), params.cfg, gather));
}

Tensor<double> random_input(std::size_t channels, std::size_t m, Rng& rng) {
  Tensor<double> x({channels, m, m});
  for (auto& v : x.vec()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  return x;
}

constexpr Arch kArchs[] = {Arch::kVin, Arch::kGppn, Arch::kHyperVin};

TEST(PlannerConfigTest, Validation) {
  EXPECT_EQ(default_hidden(Arch::kGppn), 150);
  EXPECT_EQ(default_hidden(Arch::kVin), 600);
  EXPECT_THROW((PlannerConfig{Arch::kVin, 0, 3, 4, Kernel::kNews}.validate()), ContractViolation);
  EXPECT_THROW((PlannerConfig{Arch::kVin, 2, 4, 4, Kernel::kNews}.validate()), ContractViolation);
  EXPECT_THROW((PlannerConfig{Arch::kHyperVin, 2, 5, 4, Kernel::kNews}.validate()),
               ContractViolation);
  EXPECT_NO_THROW((PlannerConfig{Arch::kGppn, 1, 11, 1, Kernel::kDiffDrive}.validate()));
}

TEST(PlannerInitTest, UniformBoundsAndForgetBias) {
  const PlannerConfig cfg{Arch::kGppn, 3, 5, 6, Kernel::kNews};
  const auto p = init_params<double>(cfg, 42);
  const auto layout = param_layout(cfg);
  for (std::size_t k = 0; k < layout.size(); ++k) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layout[k].fan_in));
    const auto& t = p.tensors[k].second;
    EXPECT_EQ(t.shape(), layout[k].shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (layout[k].name == "lstm.bias" && i >= 6 && i < 12) {
        EXPECT_EQ(t[i], 1.0);
      } else {
        EXPECT_LE(std::abs(t[i]), bound);
      }
    }
  }
  EXPECT_EQ(init_params<double>(cfg, 42).tensors, p.tensors);
}

TEST(PlannerShapeTest, LogitsAreStatesByActions) {
  for (Kernel k : {Kernel::kNews, Kernel::kMoore, Kernel::kDiffDrive}) {
    const auto sample = generate_sample(7, k, 3, 0);
    const auto gather = make_gather(sample.maze, k);
    const auto input = make_input<double>(sample.maze, sample.goal, k);
    for (Arch a : kArchs) {
      const PlannerConfig cfg{a, 2, 3, 3, k};
      const auto logits = run(init_params<double>(cfg, 1), input, gather);
      EXPECT_EQ(logits.dim(0), static_cast<std::size_t>(sample.maze.open_count()) *
                                   orientation_count(k));
      EXPECT_EQ(logits.dim(1), static_cast<std::size_t>(action_count(k)));
    }
  }
}

TEST(PlannerShapeTest, RejectsWrongInputChannels) {
  const PlannerConfig cfg{Arch::kVin, 2, 3, 3, Kernel::kDiffDrive};
  Tape<double> tape;
  const auto bound = bind(tape, zero_params<double>(cfg));
  EXPECT_THROW(planner_forward(tape, bound, tape.constant(Tensor<double>({2, 7, 7})), cfg,
                               all_positions(7, Kernel::kDiffDrive)),
               ContractViolation);
}

TEST(PlannerZeroTest, ZeroParamsGiveZeroLogits) {
  for (Arch a : kArchs) {
    const PlannerConfig cfg{a, 3, 3, 4, Kernel::kNews};
    const auto sample = generate_sample(7, Kernel::kNews, 9, 0);
    const auto logits = run(zero_params<double>(cfg),
                            make_input<double>(sample.maze, sample.goal, Kernel::kNews),
                            make_gather(sample.maze, Kernel::kNews));
    for (double v : logits.vec()) EXPECT_EQ(v, 0.0) << arch_name(a);
  }
}

TEST(PlannerZeroTest, GppnZeroParamsGiveUniformLoss) {
  const PlannerConfig cfg{Arch::kGppn, 4, 5, 4, Kernel::kMoore};
  const auto sample = generate_sample(9, Kernel::kMoore, 2, 0);
  Tape<double> tape;
  const auto bound = bind(tape, zero_params<double>(cfg));
  const Var logits = planner_forward(
      tape, bound, tape.constant(make_input<double>(sample.maze, sample.goal, Kernel::kMoore)),
      cfg, make_gather(sample.maze, Kernel::kMoore));
  std::vector<int> labels;
  std::vector<char> mask;
  for (int l : sample.labels.label) {
    labels.push_back(l < 0 ? 0 : l);
    mask.push_back(l >= 0);
  }
  const Var loss = ad::softmax_cross_entropy(tape, logits, labels, mask);
  EXPECT_NEAR(tape.value(loss)[0], std::log(8.0), 1e-12);
}

struct LocalityCase {
  Arch arch;
  int K;
  int F;
};

TEST(PlannerLocalityTest, FarCellsDoNotAffectProbe) {
  const int m = 15;
  const std::vector<LocalityCase> cases = {{Arch::kVin, 3, 3},      {Arch::kVin, 2, 5},
                                           {Arch::kGppn, 3, 3},     {Arch::kGppn, 2, 5},
                                           {Arch::kHyperVin, 3, 3}, {Arch::kHyperVin, 2, 3}};
  for (const auto& c : cases) {
    const PlannerConfig cfg{c.arch, c.K, c.F, 3, Kernel::kNews};
    const auto params = init_params<double>(cfg, 7);
    Rng rng(c.K * 10 + c.F);
    const auto input = random_input(2, m, rng);
    const int px = 4, py = 5;
    StateGather probe{{0}, {py * m + px}, 4};
    const auto base = run(params, input, probe);
    const int radius = (c.K + 1) * (c.F - 1) / 2;
    bool boundary_sensitive = false;
    for (int y = 0; y < m; ++y) {
      for (int x = 0; x < m; ++x) {
        const int cheb = std::max(std::abs(x - px), std::abs(y - py));
        for (std::size_t ch = 0; ch < 2; ++ch) {
          auto flipped = input;
          auto& v = flipped[(ch * m + y) * m + x];
          v = 1.0 - v;
          const auto out = run(params, flipped, probe);
          if (cheb > radius) {
            ASSERT_EQ(out, base) << arch_name(c.arch) << " K=" << c.K << " F=" << c.F
                                 << " cell (" << x << "," << y << ")";
          } else if (cheb == radius && !(out == base)) {
            boundary_sensitive = true;
          }
        }
      }
    }
    EXPECT_TRUE(boundary_sensitive) << "bound is not tight for " << arch_name(c.arch);
  }
}

TEST(PlannerEquivarianceTest, TranslationShiftsInteriorLogits) {
  const int m = 17, pattern = 6;
  for (Arch a : {Arch::kVin, Arch::kGppn}) {
    const PlannerConfig cfg{a, 2, 3, 3, Kernel::kNews};
    const auto params = init_params<double>(cfg, 3);
    Rng rng(5);
    const auto patch = random_input(2, pattern, rng);
    auto place = [&](int ox, int oy) {
      Tensor<double> x({2, static_cast<std::size_t>(m), static_cast<std::size_t>(m)});
      for (int c = 0; c < 2; ++c)
        for (int y = 0; y < pattern; ++y)
          for (int xx = 0; xx < pattern; ++xx)
            x[(c * m + y + oy) * m + xx + ox] = patch[(c * pattern + y) * pattern + xx];
      return x;
    };
    const int dx = 3, dy = 2;
    const auto gather = all_positions(m, Kernel::kNews);
    const auto out_a = run(params, place(4, 4), gather);
    const auto out_b = run(params, place(4 + dx, 4 + dy), gather);
    const int radius = (cfg.K + 1) * (cfg.F - 1) / 2;
    int compared = 0;
    for (int y = radius; y < m - radius - dy; ++y) {
      for (int x = radius; x < m - radius - dx; ++x) {
        for (int act = 0; act < 4; ++act) {
          ASSERT_EQ(out_a[(y * m + x) * 4 + act], out_b[((y + dy) * m + x + dx) * 4 + act]);
          ++compared;
        }
      }
    }
    EXPECT_GT(compared, 0);
  }
}

TEST(HyperVinTest, PositionConstantFiltersReproduceVinBitwise) {
  for (Kernel k : {Kernel::kNews, Kernel::kDiffDrive}) {
    const int hidden = 5;
    const PlannerConfig vin_cfg{Arch::kVin, 4, 3, hidden, k};
    const PlannerConfig hyper_cfg{Arch::kHyperVin, 4, 3, hidden, k};
    const auto vin = init_params<double>(vin_cfg, 21);
    auto hyper = zero_params<double>(hyper_cfg);
    hyper.at("reward.weight") = vin.at("reward.weight");
    hyper.at("reward.bias") = vin.at("reward.bias");
    hyper.at("head.weight") = vin.at("head.weight");
    hyper.at("head.bias") = vin.at("head.bias");
    // Zero hypernetwork weights leave only the output bias: the shared filter.
    auto& bias = hyper.at("hyper2.bias");
    const auto& q = vin.at("q.weight");
    ASSERT_EQ(bias.size(), q.size());
    for (std::size_t i = 0; i < q.size(); ++i) bias[i] = q[i];

    const auto sample = generate_sample(9, k, 8, 0);
    const auto input = make_input<double>(sample.maze, sample.goal, k);
    const auto gather = make_gather(sample.maze, k);
    EXPECT_EQ(run(vin, input, gather), run(hyper, input, gather));
  }
}

double planner_gradcheck(const PlannerConfig& cfg, int m, std::uint64_t seed) {
  const auto sample = generate_sample(m, cfg.kernel, seed, 0);
  const auto params = init_params<double>(cfg, seed);
  const auto input = make_input<double>(sample.maze, sample.goal, cfg.kernel);
  const auto gather = make_gather(sample.maze, cfg.kernel);
  std::vector<int> labels;
  std::vector<char> mask;
  for (int l : sample.labels.label) {
    labels.push_back(l < 0 ? 0 : l);
    mask.push_back(l >= 0);
  }
  std::vector<Tensor<double>> leaves;
  std::vector<std::string> names;
  for (const auto& [n, t] : params.tensors) {
    names.push_back(n);
    leaves.push_back(t);
  }
  const auto r = testing::gradcheck(
      [&](Tape<double>& tape, const std::vector<Var>& vars) {
        const BoundParams bound{names, vars};
        const Var logits = planner_forward(tape, bound, tape.constant(input), cfg, gather);
        return ad::softmax_cross_entropy(tape, logits, labels, mask);
      },
      leaves);
  return r.max_rel_error;
}

TEST(PlannerGradientTest, VinEndToEnd) {
  EXPECT_LT(planner_gradcheck({Arch::kVin, 2, 3, 4, Kernel::kNews}, 7, 1), 1e-4);
}

TEST(PlannerGradientTest, GppnEndToEnd) {
  EXPECT_LT(planner_gradcheck({Arch::kGppn, 2, 5, 8, Kernel::kNews}, 7, 2), 1e-4);
}

TEST(PlannerGradientTest, HyperVinEndToEnd) {
  EXPECT_LT(planner_gradcheck({Arch::kHyperVin, 2, 3, 4, Kernel::kNews}, 7, 3), 1e-4);
}

TEST(PlannerGradientTest, DiffDriveHeads) {
  EXPECT_LT(planner_gradcheck({Arch::kVin, 2, 3, 3, Kernel::kDiffDrive}, 7, 4), 1e-4);
  EXPECT_LT(planner_gradcheck({Arch::kGppn, 2, 3, 3, Kernel::kDiffDrive}, 7, 5), 1e-4);
}

}  // namespace
}  // namespace gppn
