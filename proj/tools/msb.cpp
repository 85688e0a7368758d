// Command-line front end: generate synthetic instances, run experiments,
// summarize and plot their CSVs.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "CLI11.hpp"
#include "msb/harness.hpp"

namespace fs = std::filesystem;
using namespace msb;

namespace {

std::vector<fs::path> metrics_files(const std::string& input) {
  std::vector<fs::path> out;
  const fs::path p(input);
  if (fs::is_regular_file(p)) return {p};
  if (!fs::is_directory(p)) throw InvalidInput("no such file or directory: " + input);
  for (const auto& e : fs::recursive_directory_iterator(p))
    if (e.is_regular_file() && e.path().filename() == "metrics.csv") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw InvalidInput("no metrics.csv under " + input);
  return out;
}

std::uint64_t fresh_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

void print_row(const std::string& label, const SeriesSummary& s) {
  std::printf("%-28s  r=%.6f  c=%.6f  tail_r=%.6f\n", label.c_str(), s.mean_reward, s.mean_violation, s.tail_reward);
}

int cmd_gen(Index L, Index d, double tau, std::size_t target, std::uint64_t seed, const std::string& out) {
  // Same streams as replicate 0 of a synthetic run with this seed.
  Rng rng = make_rng(seed, 1);
  const FeatureMatrix F = uniform_features(L, d, rng);
  const double t = target > 0 ? tau_for_constraint_count(F, target) : tau;
  const ConstraintSet C = build_constraints(F, t);
  if (!out.empty()) {
    fs::create_directories(out);
    write_features(F, (fs::path(out) / "features.csv").string());
    std::ofstream summary(fs::path(out) / "constraints.txt");
    summary << "L = " << L << "\nd = " << d << "\ntau = " << t << "\nseed = " << seed << "\nconstraints = " << C.size()
            << "\n";
    std::ofstream pairs(fs::path(out) / "constraints.csv");
    pairs << "i,j\n";
    for (const auto& [i, j] : C.pairs()) pairs << i << ',' << j << '\n';
  }
  std::printf("L=%ld d=%ld tau=%.6g seed=%llu constraints=%zu\n", static_cast<long>(L), static_cast<long>(d), t,
              static_cast<unsigned long long>(seed), C.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"master-slave constrained combinatorial bandit"};
  app.require_subcommand(1);

  // gen-synthetic
  auto* gen = app.add_subcommand("gen-synthetic", "uniform features plus the induced constraint set");
  Index gL = 300, gd = 10;
  double gtau = 0.5;
  std::size_t gtarget = 0;
  std::optional<std::uint64_t> gseed;
  std::string gout;
  gen->add_option("--L", gL, "number of arms")->check(CLI::PositiveNumber);
  gen->add_option("--d", gd, "feature dimension")->check(CLI::PositiveNumber);
  gen->add_option("--tau", gtau, "NED threshold")->check(CLI::Range(0.0, 1.0));
  gen->add_option("--target-constraints", gtarget, "pick tau to give this many constraints");
  gen->add_option("--seed", gseed, "random seed");
  gen->add_option("--out", gout, "output directory");

  // run
  auto* run = app.add_subcommand("run", "run an experiment");
  std::string config_path, out_dir, mode, master;
  std::optional<std::uint64_t> seed;
  std::optional<int> replicates, jobs;
  std::vector<std::string> overrides;
  run->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "random seed");
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--replicates", replicates, "number of replicates");
  run->add_option("--jobs", jobs, "parallel replicates");
  run->add_option("--mode", mode, "master-slave | standalone:<sampler>");
  run->add_option("--master", master, "stationary | discounted");
  run->add_option("--set", overrides, "extra key=value, applied after the config file");

  // report
  auto* report = app.add_subcommand("report", "mean and std over replicate CSVs");
  std::vector<std::string> report_in;
  std::size_t tail = 200;
  Index report_L = 0;
  report->add_option("inputs", report_in, "run directories or metrics CSVs")->required();
  report->add_option("--tail", tail, "rounds in the tail reward");
  report->add_option("--L", report_L, "arm count, for the recommended-rate window 2L");

  // plot
  auto* plot = app.add_subcommand("plot", "cumulative-mean curves as SVG");
  std::vector<std::string> plot_in;
  std::string plot_out = "plot.svg";
  plot->add_option("inputs", plot_in, "metrics CSVs or run directories")->required();
  plot->add_option("--out", plot_out, "output SVG");

  // validate-config
  auto* val = app.add_subcommand("validate-config", "check a config file without running");
  std::string val_path;
  val->add_option("--config", val_path, "config file")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      std::uint64_t s = gseed.value_or(0);
      if (!gseed) {
        s = fresh_seed();
        std::printf("seed: %llu\n", static_cast<unsigned long long>(s));
      }
      return cmd_gen(gL, gd, gtau, gtarget, s, gout);
    }

    if (*run) {
      ExperimentConfig cfg;
      std::vector<std::string> keys;
      if (!config_path.empty()) cfg = load_config(config_path, cfg, &keys);
      for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw InvalidInput("--set expects key=value, got " + kv);
        set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
        keys.push_back(kv.substr(0, eq));
      }
      if (seed) {
        cfg.hp.seed = *seed;
      } else if (std::find(keys.begin(), keys.end(), "seed") == keys.end()) {
        cfg.hp.seed = fresh_seed();
        std::printf("seed: %llu\n", static_cast<unsigned long long>(cfg.hp.seed));
      }
      if (!out_dir.empty()) cfg.out_dir = out_dir;
      if (replicates) cfg.replicates = *replicates;
      if (jobs) cfg.jobs = *jobs;
      if (!mode.empty()) cfg.mode = mode;
      if (!master.empty()) set_config_value(cfg, "master", master);
      cfg.validate();
      const auto series = run_experiment(cfg);
      std::vector<double> r, c, tr;
      for (std::size_t k = 0; k < series.size(); ++k) {
        const auto s = summarize(series[k].rounds, series[k].exploration);
        char label[64];
        std::snprintf(label, sizeof label, "replicate %zu (M=%zu)", k, series[k].constraint_count);
        print_row(label, s);
        if (series[k].ground_truth) std::printf("%-28s  ground truth %.6f\n", "", *series[k].ground_truth);
        r.push_back(s.mean_reward);
        c.push_back(s.mean_violation);
        tr.push_back(s.tail_reward);
      }
      const auto mr = mean_std(r), mc = mean_std(c), mt = mean_std(tr);
      std::printf("mean+-std  r=%.6f+-%.6f  c=%.6f+-%.6f  tail_r=%.6f+-%.6f\n", mr.mean, mr.std, mc.mean, mc.std,
                  mt.mean, mt.std);
      return 0;
    }

    if (*report) {
      for (const auto& input : report_in) {
        std::vector<double> r, c, tr;
        std::map<std::string, std::vector<double>> arr;
        for (const auto& f : metrics_files(input)) {
          const auto rows = read_csv(f.string());
          const auto s = summarize(rows, 2 * static_cast<std::size_t>(report_L), tail);
          print_row(f.string(), s);
          r.push_back(s.mean_reward);
          c.push_back(s.mean_violation);
          tr.push_back(s.tail_reward);
          for (const auto& [name, v] : s.arr) arr[name].push_back(v);
        }
        const auto mr = mean_std(r), mc = mean_std(c), mt = mean_std(tr);
        std::printf("%s: n=%zu  r=%.6f+-%.6f  c=%.6f+-%.6f  tail_r=%.6f+-%.6f\n", input.c_str(), r.size(), mr.mean,
                    mr.std, mc.mean, mc.std, mt.mean, mt.std);
        for (const auto& [name, v] : arr) {
          const auto m = mean_std(v);
          if (m.mean > 0.0) std::printf("  arr %-14s %.4f+-%.4f\n", name.c_str(), m.mean, m.std);
        }
      }
      return 0;
    }

    if (*plot) {
      std::vector<std::vector<RoundRecord>> series;
      std::vector<std::string> labels;
      for (const auto& input : plot_in)
        for (const auto& f : metrics_files(input)) {
          series.push_back(read_csv(f.string()));
          labels.push_back(f.string());
        }
      render_plot(series, labels, plot_out);
      std::printf("wrote %s\n", plot_out.c_str());
      return 0;
    }

    if (*val) {
      const auto cfg = load_config(val_path);
      cfg.validate();
      std::printf("ok\n");
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
