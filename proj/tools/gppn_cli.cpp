// Command-line front end: dataset generation, training, evaluation, sweeps
// and dataset verification.

#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gppn/checkpoint.hpp"
#include "gppn/dataset.hpp"
#include "gppn/harness.hpp"

namespace {

using namespace gppn;

const char* const kSplitNames[] = {"train", "val", "test"};

std::vector<std::size_t> parse_counts(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoull(item));
  if (out.empty() || out.size() == 2 || out.size() > 3)
    throw CLI::ValidationError("--count", "expects N or TRAIN,VAL,TEST");
  return out;
}

std::string split_path(const std::string& prefix, const char* split) {
  return prefix + "." + split + ".gppn";
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  return os;
}

struct GenerateArgs {
  int m = 15;
  std::string kernel = "news";
  std::string count = "25000,5000,5000";
  std::uint64_t seed = 0;
  std::optional<double> decimation;
  std::string out;
};

int run_generate(const GenerateArgs& a) {
  const Kernel kernel = parse_kernel(a.kernel);
  const auto counts = parse_counts(a.count);
  if (counts.size() == 1) {
    save_dataset(a.out, generate_dataset(a.m, kernel, counts[0], a.seed, a.decimation));
    std::cout << a.out << '\n';
    return 0;
  }
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const std::uint64_t seed = split_seed(a.seed, i);
    const std::string path = split_path(a.out, kSplitNames[i]);
    save_dataset(path, generate_dataset(a.m, kernel, counts[i], seed, a.decimation));
    std::cout << path << '\n';
  }
  return 0;
}

struct ModelArgs {
  std::string arch = "gppn";
  int K = 20;
  int F = 3;
  int hidden = 0;  // 0 = architecture default
};

PlannerConfig planner_config(const ModelArgs& m, Kernel kernel) {
  const Arch arch = parse_arch(m.arch);
  return {arch, m.K, m.F, m.hidden > 0 ? m.hidden : default_hidden(arch), kernel};
}

struct TrainArgs {
  ModelArgs model;
  std::string data;
  TrainConfig tc;
  std::string out;
  std::string csv;
};

int run_train(const TrainArgs& a) {
  const Dataset train_set = load_dataset(split_path(a.data, "train"));
  const Dataset val_set = load_dataset(split_path(a.data, "val"));
  const PlannerConfig cfg = planner_config(a.model, train_set.kernel);
  const TrainResult r = train(cfg, a.tc, train_set, val_set, &std::cerr);
  save_checkpoint(a.out, r.best);
  auto csv = open_out(a.csv.empty() ? a.out + ".epochs.csv" : a.csv);
  write_epoch_csv(csv, r.reports);
  if (r.diverged) {
    csv << r.reports.size() + 1 << ",diverged,nan,--,--,0.000\n";
    std::cout << "status,diverged\n";
  } else {
    std::cout << "status,ok\nbest_epoch," << r.best_epoch << '\n';
  }
  return 0;
}

struct EvalArgs {
  std::string ckpt;
  std::string data;
  bool oracle = false;
};

int run_eval(const EvalArgs& a) {
  const Dataset d = load_dataset(a.data);
  Metrics m;
  std::string source = "oracle";
  if (a.oracle) {
    m = evaluate_oracle(d);
  } else {
    if (a.ckpt.empty()) throw CLI::ValidationError("--ckpt", "required unless --oracle");
    const auto params = load_checkpoint<float>(a.ckpt);
    m = evaluate(params, d).metrics;
    source = std::string(arch_name(params.cfg.arch));
  }
  std::cout << "source,states,pct_opt,pct_suc\n"
            << source << ',' << m.states << ',' << fmt_num(m.pct_opt()) << ','
            << fmt_num(m.pct_suc()) << '\n';
  return 0;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

struct SweepArgs {
  ModelArgs model;
  std::string ks = "5,10,15,20,30";
  std::string fs = "3,5,7,9,11";
  std::string data;
  TrainConfig tc;
  std::string out;
};

int run_sweep(const SweepArgs& a) {
  const Dataset train_set = load_dataset(split_path(a.data, "train"));
  const Dataset val_set = load_dataset(split_path(a.data, "val"));
  const Dataset test_set = load_dataset(split_path(a.data, "test"));
  const PlannerConfig base = planner_config(a.model, train_set.kernel);
  const SweepResult s = sweep(base, parse_int_list(a.ks), parse_int_list(a.fs), a.tc, train_set,
                              val_set, test_set, &std::cerr);
  auto summary = open_out(a.out + ".summary.csv");
  write_sweep_csv(summary, s);
  auto curve = open_out(a.out + ".curve.csv");
  write_curve_csv(curve, s.curve);
  write_sweep_csv(std::cout, s);
  return 0;
}

int run_oracle_check(const std::vector<std::string>& files) {
  int status = 0;
  for (const auto& f : files) {
    const auto errors = oracle_check(load_dataset(f));
    for (const auto& e : errors) std::cerr << f << ": " << e << '\n';
    std::cout << f << ',' << (errors.empty() ? "ok" : "violations") << '\n';
    if (!errors.empty()) status = 1;
  }
  return status;
}

void add_model_flags(CLI::App* cmd, ModelArgs& m) {
  cmd->add_option("--arch", m.arch, "vin | gppn | hypervin")->capture_default_str();
  cmd->add_option("--K", m.K, "planning iterations")->capture_default_str();
  cmd->add_option("--F", m.F, "kernel size (odd)")->capture_default_str();
  cmd->add_option("--hidden", m.hidden, "hidden width (default 600 VIN, 150 GPPN)");
}

void add_train_flags(CLI::App* cmd, TrainConfig& tc) {
  cmd->add_option("--lr", tc.lr)->capture_default_str();
  cmd->add_option("--batch", tc.batch)->capture_default_str();
  cmd->add_option("--clip", tc.clip, "global gradient-norm limit")->capture_default_str();
  cmd->add_option("--epochs", tc.epochs)->capture_default_str();
  cmd->add_option("--seed", tc.seed)->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable grid-maze planners: VIN, GPPN, Hyper-VIN"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "generate labelled maze datasets");
  generate->add_option("--m", gen.m, "maze size (odd, >= 5)")->capture_default_str();
  generate->add_option("--kernel", gen.kernel, "news | moore | diffdrive")->capture_default_str();
  generate->add_option("--count", gen.count, "N, or TRAIN,VAL,TEST for split files")
      ->capture_default_str();
  generate->add_option("--seed", gen.seed)->capture_default_str();
  generate->add_option("--decimation", gen.decimation, "fixed wall-deletion probability");
  generate->add_option("--out", gen.out, "file, or prefix for <prefix>.{train,val,test}.gppn")
      ->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "train a planner");
  add_model_flags(train_cmd, tr.model);
  add_train_flags(train_cmd, tr.tc);
  train_cmd->add_option("--data", tr.data, "dataset prefix")->required();
  train_cmd->add_option("--out", tr.out, "checkpoint path")->required();
  train_cmd->add_option("--csv", tr.csv, "epoch CSV path (default <out>.epochs.csv)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate %Opt / %Suc on a dataset file");
  eval_cmd->add_option("--ckpt", ev.ckpt, "checkpoint path");
  eval_cmd->add_option("--data", ev.data, "dataset file")->required();
  eval_cmd->add_flag("--oracle", ev.oracle, "evaluate the stored oracle labels instead");

  SweepArgs sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "train a (K, F) grid and rank by test %Opt");
  add_model_flags(sweep_cmd, sw.model);
  add_train_flags(sweep_cmd, sw.tc);
  sweep_cmd->add_option("--K-list", sw.ks)->capture_default_str();
  sweep_cmd->add_option("--F-list", sw.fs)->capture_default_str();
  sweep_cmd->add_option("--data", sw.data, "dataset prefix")->required();
  sweep_cmd->add_option("--out", sw.out, "output prefix")->required();

  std::vector<std::string> check_files;
  auto* check = app.add_subcommand("oracle-check", "verify dataset invariants");
  check->add_option("--data", check_files, "dataset file(s)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*generate) return run_generate(gen);
    if (*train_cmd) return run_train(tr);
    if (*eval_cmd) return run_eval(ev);
    if (*sweep_cmd) return run_sweep(sw);
    if (*check) return run_oracle_check(check_files);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
