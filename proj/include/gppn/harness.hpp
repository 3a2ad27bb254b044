#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gppn/dataset.hpp"
#include "gppn/planners.hpp"
#include "gppn/rng.hpp"
#include "gppn/tensor.hpp"

namespace gppn {

// ---------------------------------------------------------------------------
// Metrics

struct Metrics {
  std::size_t states = 0;
  std::size_t success = 0;
  std::size_t optimal = 0;

  double pct_opt() const { return states ? 100.0 * optimal / states : 0.0; }
  double pct_suc() const { return states ? 100.0 * success / states : 0.0; }

  Metrics& operator+=(const Metrics& o) {
    states += o.states;
    success += o.success;
    optimal += o.optimal;
    return *this;
  }
};

inline int rollout_cap(int m) { return 4 * m * m; }

/// Rolls the deterministic policy out from every state of the sample. A
/// rollout succeeds if it reaches the goal within 4*m*m steps and is optimal
/// if it does so in exactly the oracle distance. The goal itself counts as
/// both.
inline Metrics evaluate_policy(const PlanningSample& sample, Kernel kernel,
                               std::span<const int> policy) {
  const StateIndex index(sample.maze, kernel);
  const std::size_t n = index.size();
  require(policy.size() == n, "evaluate_policy: policy size mismatch");
  const int goal = index.index_of(sample.goal.goal);
  std::vector<int> next(n);
  for (std::size_t s = 0; s < n; ++s) {
    const int a = policy[s];
    next[s] = (static_cast<int>(s) == goal || a < 0)
                  ? static_cast<int>(s)
                  : index.index_of(successor(sample.maze, kernel, index[s], a));
  }
  const int cap = rollout_cap(sample.maze.size());
  Metrics out;
  out.states = n;
  for (std::size_t s = 0; s < n; ++s) {
    int cur = static_cast<int>(s);
    int steps = 0;
    while (cur != goal && steps < cap) {
      const int nxt = next[cur];
      if (nxt == cur) {
        steps = cap;  // stuck on a self-loop
        break;
      }
      cur = nxt;
      ++steps;
    }
    if (cur == goal) {
      ++out.success;
      if (steps == sample.distances.dist[s]) ++out.optimal;
    }
  }
  return out;
}

/// Row-wise argmax of an S x A logit matrix; ties go to the lowest action.
template <typename T>
std::vector<int> argmax_policy(const ad::Tensor<T>& logits) {
  require(logits.rank() == 2, "argmax_policy: logits must be S x A");
  const std::size_t rows = logits.dim(0), a = logits.dim(1);
  std::vector<int> policy(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = logits.data() + r * a;
    policy[r] = static_cast<int>(std::max_element(row, row + a) - row);
  }
  return policy;
}

/// Precomputed network inputs and training targets for one sample.
template <typename T>
struct PreparedSample {
  ad::Tensor<T> input;
  StateGather gather;
  std::vector<int> labels;  // 0 where masked
  std::vector<char> mask;   // 0 on the goal state
};

template <typename T>
PreparedSample<T> prepare(const PlanningSample& s, Kernel kernel) {
  PreparedSample<T> p{make_input<T>(s.maze, s.goal, kernel), make_gather(s.maze, kernel), {}, {}};
  for (int l : s.labels.label) {
    p.labels.push_back(l == kStayLabel ? 0 : l);
    p.mask.push_back(l == kStayLabel ? 0 : 1);
  }
  return p;
}

template <typename T>
std::vector<PreparedSample<T>> prepare_all(const Dataset& d) {
  std::vector<PreparedSample<T>> out;
  out.reserve(d.samples.size());
  for (const auto& s : d.samples) out.push_back(prepare<T>(s, d.kernel));
  return out;
}

struct EvalResult {
  Metrics metrics;
  double loss = 0.0;  // mean per-sample masked cross-entropy
};

template <typename T>
EvalResult evaluate_prepared(const ModelParams<T>& params, const Dataset& data,
                             const std::vector<PreparedSample<T>>& prepared) {
  EvalResult out;
  for (std::size_t i = 0; i < prepared.size(); ++i) {
    ad::Tape<T> tape;
    const auto bound = bind(tape, params, false);
    const auto& p = prepared[i];
    const ad::Var logits =
        planner_forward(tape, bound, tape.constant(p.input), params.cfg, p.gather);
    const auto policy = argmax_policy(tape.value(logits));
    out.metrics += evaluate_policy(data.samples[i], data.kernel, policy);
    if (std::any_of(p.mask.begin(), p.mask.end(), [](char c) { return c != 0; })) {
      const ad::Var loss = ad::softmax_cross_entropy(tape, logits, p.labels, p.mask);
      out.loss += static_cast<double>(tape.value(loss)[0]);
    }
  }
  if (!prepared.empty()) out.loss /= static_cast<double>(prepared.size());
  return out;
}

/// %Opt / %Suc of a model's argmax policy over every state of every sample.
template <typename T>
EvalResult evaluate(const ModelParams<T>& params, const Dataset& data) {
  require(params.cfg.kernel == data.kernel, "evaluate: kernel mismatch");
  return evaluate_prepared(params, data, prepare_all<T>(data));
}

/// Evaluation of the oracle labels used as a policy.
inline Metrics evaluate_oracle(const Dataset& data) {
  Metrics out;
  for (const auto& s : data.samples) out += evaluate_policy(s, data.kernel, s.labels.label);
  return out;
}

// ---------------------------------------------------------------------------
// Optimization

struct TrainConfig {
  double lr = 1e-3;
  int batch = 32;
  double clip = 40.0;
  int epochs = 30;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch < 1 || epochs < 1 || !(clip > 0.0) || !(lr >= 0.0))
      throw ContractViolation("train config: counts must be positive, clip > 0, lr >= 0");
  }
};

/// Scales the gradients in place so their joint L2 norm is at most `clip`.
/// Returns the norm before scaling.
template <typename T>
double clip_global_norm(std::vector<ad::Tensor<T>>& grads, double clip) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (T v : g.vec()) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (norm > clip) {
    const T factor = static_cast<T>(clip / norm);
    for (auto& g : grads)
      for (auto& v : g.vec()) v *= factor;
  }
  return norm;
}

/// Adam with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
template <typename T>
class Adam {
 public:
  Adam(const ModelParams<T>& params, double lr) : lr_(lr) {
    for (const auto& [_, t] : params.tensors) {
      m_.emplace_back(t.shape());
      v_.emplace_back(t.shape());
    }
  }

  void step(ModelParams<T>& params, const std::vector<ad::Tensor<T>>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, t_);
    const double bc2 = 1.0 - std::pow(kBeta2, t_);
    const T step = static_cast<T>(lr_ / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    for (std::size_t k = 0; k < grads.size(); ++k) {
      auto& p = params.tensors[k].second;
      auto& m = m_[k];
      auto& v = v_[k];
      const auto& g = grads[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = static_cast<T>(kBeta1) * m[i] + static_cast<T>(1.0 - kBeta1) * g[i];
        v[i] = static_cast<T>(kBeta2) * v[i] + static_cast<T>(1.0 - kBeta2) * g[i] * g[i];
        p[i] -= step * m[i] / (std::sqrt(v[i] * inv_bc2) + static_cast<T>(kEps));
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  double lr_;
  int t_ = 0;
  std::vector<ad::Tensor<T>> m_, v_;
};

struct EpochReport {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double train_pct_opt = 0.0;
  double train_pct_suc = 0.0;
  double val_pct_opt = 0.0;
  double val_pct_suc = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  ModelParams<float> best;
  std::vector<EpochReport> reports;
  int best_epoch = 0;
  bool diverged = false;
};

/// Minibatch training on masked cross-entropy over every non-goal state.
/// Train-split metrics come from the forward passes of each epoch; the
/// returned parameters are those with the best validation %Opt.
inline TrainResult train(const PlannerConfig& cfg, const TrainConfig& tc, const Dataset& train_set,
                         const Dataset& val_set, std::ostream* log = nullptr) {
  cfg.validate();
  tc.validate();
  require(train_set.kernel == cfg.kernel && val_set.kernel == cfg.kernel,
          "train: dataset kernel does not match model kernel");
  require(!train_set.samples.empty() && !val_set.samples.empty(), "train: empty split");

  const auto train_prep = prepare_all<float>(train_set);
  const auto val_prep = prepare_all<float>(val_set);

  TrainResult result;
  ModelParams<float> params = init_params<float>(cfg, tc.seed);
  result.best = params;
  Adam<float> opt(params, tc.lr);
  Rng shuffle_rng(tc.seed ^ 0x9E3779B97F4A7C15ULL);
  std::vector<std::size_t> order(train_prep.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double best_val = -1.0;

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    Metrics train_metrics;
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t start = 0; start < order.size() && !result.diverged;
         start += static_cast<std::size_t>(tc.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tc.batch));
      std::vector<ad::Tensor<float>> grads;
      for (const auto& [_, t] : params.tensors) grads.emplace_back(t.shape());
      std::size_t used = 0;
      for (std::size_t j = start; j < end; ++j) {
        const std::size_t idx = order[j];
        const auto& p = train_prep[idx];
        ad::Tape<float> tape;
        const auto bound = bind(tape, params);
        const ad::Var logits = planner_forward(tape, bound, tape.constant(p.input), cfg, p.gather);
        train_metrics += evaluate_policy(train_set.samples[idx], cfg.kernel,
                                         argmax_policy(tape.value(logits)));
        if (std::none_of(p.mask.begin(), p.mask.end(), [](char c) { return c != 0; })) continue;
        const ad::Var loss = ad::softmax_cross_entropy(tape, logits, p.labels, p.mask);
        const double lv = tape.value(loss)[0];
        if (!std::isfinite(lv)) {
          result.diverged = true;
          break;
        }
        loss_sum += lv;
        ++loss_count;
        ++used;
        tape.backward(loss);
        for (std::size_t k = 0; k < grads.size(); ++k) {
          const auto& g = tape.grad(bound.vars[k]);
          auto& acc = grads[k];
          for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
        }
      }
      if (result.diverged || used == 0) break;
      const float inv = 1.0f / static_cast<float>(used);
      for (auto& g : grads)
        for (auto& v : g.vec()) v *= inv;
      const double norm = clip_global_norm(grads, tc.clip);
      if (!std::isfinite(norm)) {
        result.diverged = true;
        break;
      }
      opt.step(params, grads);
    }
    if (result.diverged) break;

    const EvalResult val = evaluate_prepared(params, val_set, val_prep);
    EpochReport rep;
    rep.epoch = epoch;
    rep.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    rep.val_loss = val.loss;
    rep.train_pct_opt = train_metrics.pct_opt();
    rep.train_pct_suc = train_metrics.pct_suc();
    rep.val_pct_opt = val.metrics.pct_opt();
    rep.val_pct_suc = val.metrics.pct_suc();
    rep.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!std::isfinite(rep.val_loss)) {
      result.diverged = true;
      break;
    }
    result.reports.push_back(rep);
    if (log) {
      *log << arch_name(cfg.arch) << " epoch " << epoch << " loss " << rep.train_loss
           << " train %Opt " << rep.train_pct_opt << " val %Opt " << rep.val_pct_opt
           << " val %Suc " << rep.val_pct_suc << " (" << rep.seconds << " s)\n";
      log->flush();
    }
    if (rep.val_pct_opt > best_val) {
      best_val = rep.val_pct_opt;
      result.best = params;
      result.best_epoch = epoch;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Reports

/// Mean of the top-n values for n = 1..size, values ranked descending.
inline std::vector<double> top_n_curve(std::vector<double> values) {
  std::sort(values.begin(), values.end(), std::greater<>());
  std::vector<double> curve;
  double running = 0.0;
  for (std::size_t n = 0; n < values.size(); ++n) {
    running += values[n];
    curve.push_back(running / static_cast<double>(n + 1));
  }
  return curve;
}

struct SweepEntry {
  PlannerConfig cfg;
  std::uint64_t seed = 0;
  bool diverged = false;
  double test_pct_opt = 0.0;
  double test_pct_suc = 0.0;
};

struct SweepResult {
  std::vector<SweepEntry> ranked;  // converged runs by descending test %Opt, then diverged
  std::vector<double> curve;       // top-n mean test %Opt over converged runs
};

/// Trains every (K, F) combination of `base` and ranks by test %Opt.
inline SweepResult sweep(const PlannerConfig& base, const std::vector<int>& ks,
                         const std::vector<int>& fs, const TrainConfig& tc,
                         const Dataset& train_set, const Dataset& val_set,
                         const Dataset& test_set, std::ostream* log = nullptr) {
  require(!ks.empty() && !fs.empty(), "sweep: empty grid");
  std::vector<SweepEntry> entries;
  for (int k : ks) {
    for (int f : fs) {
      PlannerConfig cfg = base;
      cfg.K = k;
      cfg.F = f;
      SweepEntry e{cfg, tc.seed, false, 0.0, 0.0};
      const TrainResult r = train(cfg, tc, train_set, val_set, log);
      if (r.diverged || r.best_epoch == 0) {
        e.diverged = true;
      } else {
        const EvalResult ev = evaluate(r.best, test_set);
        e.test_pct_opt = ev.metrics.pct_opt();
        e.test_pct_suc = ev.metrics.pct_suc();
      }
      entries.push_back(e);
    }
  }
  std::stable_sort(entries.begin(), entries.end(), [](const SweepEntry& a, const SweepEntry& b) {
    if (a.diverged != b.diverged) return !a.diverged;
    return a.test_pct_opt > b.test_pct_opt;
  });
  std::vector<double> scores;
  for (const auto& e : entries)
    if (!e.diverged) scores.push_back(e.test_pct_opt);
  return {entries, top_n_curve(scores)};
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1)
};

/// Welford's running mean/variance.
inline MeanStd mean_std(std::span<const double> xs) {
  require(!xs.empty(), "mean_std: empty input");
  double mean = 0.0, m2 = 0.0;
  std::size_t n = 0;
  for (double x : xs) {
    ++n;
    const double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }
  return {mean, n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1)) : 0.0};
}

struct SeedVarianceResult {
  MeanStd train_pct_opt;
  MeanStd val_pct_opt;
  std::vector<TrainResult> runs;
};

/// Repeats training with seeds base, base+1, ... and summarizes the final
/// epoch %Opt.
inline SeedVarianceResult seed_variance(const PlannerConfig& cfg, const TrainConfig& tc,
                                        const Dataset& train_set, const Dataset& val_set,
                                        int n_seeds = 3, std::ostream* log = nullptr) {
  require(n_seeds >= 2, "seed_variance: need at least two seeds");
  SeedVarianceResult out;
  std::vector<double> tr, va;
  for (int i = 0; i < n_seeds; ++i) {
    TrainConfig t = tc;
    t.seed = tc.seed + static_cast<std::uint64_t>(i);
    out.runs.push_back(train(cfg, t, train_set, val_set, log));
    const auto& reps = out.runs.back().reports;
    tr.push_back(reps.empty() ? 0.0 : reps.back().train_pct_opt);
    va.push_back(reps.empty() ? 0.0 : reps.back().val_pct_opt);
  }
  out.train_pct_opt = mean_std(tr);
  out.val_pct_opt = mean_std(va);
  return out;
}

/// First (1-based) epoch whose validation %Opt reaches each threshold;
/// empty when never reached.
inline std::vector<std::optional<int>> learning_speed(std::span<const double> val_pct_opt,
                                                      std::span<const double> thresholds) {
  require(!val_pct_opt.empty(), "learning_speed: empty series");
  std::vector<std::optional<int>> out;
  for (double th : thresholds) {
    std::optional<int> hit;
    for (std::size_t e = 0; e < val_pct_opt.size(); ++e) {
      if (val_pct_opt[e] >= th) {
        hit = static_cast<int>(e + 1);
        break;
      }
    }
    out.push_back(hit);
  }
  return out;
}

inline std::vector<std::optional<int>> learning_speed(
    const std::vector<EpochReport>& reports,
    std::span<const double> thresholds = std::span<const double>()) {
  static const std::vector<double> kDefault = {50, 75, 90, 95};
  std::vector<double> series;
  for (const auto& r : reports) series.push_back(r.val_pct_opt);
  return learning_speed(series, thresholds.empty() ? std::span<const double>(kDefault) : thresholds);
}

// ---------------------------------------------------------------------------
// CSV

inline std::string fmt_num(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

inline void write_epoch_csv(std::ostream& os, const std::vector<EpochReport>& reports) {
  os << "epoch,split,loss,pct_opt,pct_suc,seconds\n";
  for (const auto& r : reports) {
    os << r.epoch << ",train," << fmt_num(r.train_loss, 6) << ',' << fmt_num(r.train_pct_opt)
       << ',' << fmt_num(r.train_pct_suc) << ',' << fmt_num(r.seconds, 3) << '\n';
    os << r.epoch << ",val," << fmt_num(r.val_loss, 6) << ',' << fmt_num(r.val_pct_opt) << ','
       << fmt_num(r.val_pct_suc) << ',' << fmt_num(r.seconds, 3) << '\n';
  }
}

inline void write_sweep_csv(std::ostream& os, const SweepResult& s) {
  os << "arch,K,F,seed,test_pct_opt,test_pct_suc,status\n";
  for (const auto& e : s.ranked) {
    os << arch_name(e.cfg.arch) << ',' << e.cfg.K << ',' << e.cfg.F << ',' << e.seed << ',';
    if (e.diverged)
      os << "--,--,diverged\n";
    else
      os << fmt_num(e.test_pct_opt) << ',' << fmt_num(e.test_pct_suc) << ",ok\n";
  }
}

inline void write_curve_csv(std::ostream& os, const std::vector<double>& curve) {
  os << "n,mean_test_pct_opt\n";
  for (std::size_t n = 0; n < curve.size(); ++n) os << n + 1 << ',' << fmt_num(curve[n]) << '\n';
}

}  // namespace gppn
