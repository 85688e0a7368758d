#pragma once

// Experiment runner: builds an environment and a master (or a single
// standalone sampler), plays T rounds per replicate, and writes the per-round
// metrics as CSV. Also the ground-truth optimum, the recommended-rate metric,
// replicate summaries and a small SVG plot.

#include <array>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msb/env.hpp"
#include "msb/master.hpp"
#include "msb/neuralucb.hpp"

namespace msb {

enum class EnvironmentKind { synthetic, replay, cascade };
enum class MasterVariant { stationary, discounted };

struct ExperimentConfig {
  Hyperparameters hp;
  EnvironmentKind environment = EnvironmentKind::synthetic;
  FeedbackForm form = FeedbackForm::linear;
  double noise_sigma = 0.1;
  Index feature_dim = 10;
  /// When > 0, tau is replaced by the smallest NED threshold giving at least
  /// this many constraints on the generated features.
  std::size_t target_constraints = 0;
  std::string features_path;  // replay: feature matrix CSV
  std::string log_path;       // replay: click log CSV
  double gamma_c = 0.9;       // cascade continuation

  std::size_t T = 1000;
  int replicates = 1;
  int jobs = 1;
  /// "master-slave" or "standalone:<sampler>".
  std::string mode = "master-slave";
  MasterVariant master = MasterVariant::stationary;
  std::array<bool, kSlaveCount> enabled{true, true, true, true, true, true};
  std::array<int, kSlaveCount> period{1, 1, 1, 1, 1, 1};

  UcbConfig ucb;
  std::size_t solver_refresh = 20;
  int demo_steps = 20;
  std::size_t stuck_patience = 0;  // 0: 3 f_in
  bool cotraining = true;

  std::string out_dir;

  /// Throws InvalidInput naming the offending field.
  void validate() const;
  bool standalone() const { return mode != "master-slave"; }
  SamplerId standalone_sampler() const;
};

/// Flat key = value text, '#' starts a comment. Unknown keys are rejected.
/// `keys_seen`, when given, receives every key the text set.
ExperimentConfig parse_config(std::istream& in, const ExperimentConfig& base = {},
                              std::vector<std::string>* keys_seen = nullptr);
ExperimentConfig load_config(const std::string& path, const ExperimentConfig& base = {},
                             std::vector<std::string>* keys_seen = nullptr);
/// Applies one key = value pair; throws InvalidInput on unknown keys or bad values.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();

struct MetricsSeries {
  std::vector<RoundRecord> rounds;
  std::size_t exploration = 0;  // 2L
  double tau = 0.0;
  std::size_t constraint_count = 0;
  std::optional<double> ground_truth;
};

/// Fraction of rounds in (exploration, t] whose played sample came from `id`.
double compute_arr(const std::vector<RoundRecord>& history, SamplerId id, std::size_t t, std::size_t exploration);

struct GroundTruth {
  ActionVector action;
  double value = 0.0;
  bool heuristic = false;
};

/// Constrained optimum of the noiseless synthetic feedback.
GroundTruth ground_truth(const SyntheticFeedbackSpec& spec, const ConstraintSet& C, Index K);

/// Smallest threshold with at least `count` pairs strictly below it (just
/// above the count-th smallest pairwise NED).
double tau_for_constraint_count(const FeatureMatrix& features, std::size_t count);

/// Uniform [0, 1) features.
FeatureMatrix uniform_features(Index L, Index d, Rng& rng);

/// Seed of replicate r. Replicate 0 uses the configured seed itself.
std::uint64_t replicate_seed(std::uint64_t seed, int r);

/// One replicate. When `csv` / `arr_csv` are given the rows are written as they are produced.
MetricsSeries run_replicate(const ExperimentConfig& cfg, int replicate, std::ostream* csv = nullptr,
                            std::ostream* arr_csv = nullptr);

/// All replicates, min(replicates, jobs) at a time. With out_dir set each
/// replicate writes <out_dir>/rep_NNN/{metrics.csv, arr.csv}.
std::vector<MetricsSeries> run_experiment(const ExperimentConfig& cfg);

void write_csv_header(std::ostream& out);
void write_csv_row(std::ostream& out, const RoundRecord& r);
void export_csv(const MetricsSeries& series, const std::string& path);
void export_arr_csv(const MetricsSeries& series, const std::string& path);
std::vector<RoundRecord> read_csv(const std::string& path);

struct SeriesSummary {
  double mean_reward = 0.0;
  double mean_violation = 0.0;
  double tail_reward = 0.0;  // mean over the last `tail` rounds
  std::map<std::string, double> arr;  // final arr per sampler
};

SeriesSummary summarize(const std::vector<RoundRecord>& rounds, std::size_t exploration, std::size_t tail = 200);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};
MeanStd mean_std(const std::vector<double>& v);

/// Cumulative-mean reward and violation curves, one polyline per series.
void render_plot(const std::vector<std::vector<RoundRecord>>& series, const std::vector<std::string>& labels,
                 const std::string& path);

}  // namespace msb
