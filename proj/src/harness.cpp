#include "msb/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

#include "msb/cem_sampler.hpp"
#include "msb/population_samplers.hpp"
#include "msb/solver_sampler.hpp"
#include "msb/wolpertinger_sampler.hpp"

namespace msb {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw InvalidInput(key + ": expected a number, got '" + v + "'");
  }
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw InvalidInput(key + ": expected an integer, got '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size() || v.front() == '-') throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw InvalidInput(key + ": expected a nonnegative integer, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw InvalidInput(key + ": expected a boolean, got '" + v + "'");
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

const std::vector<std::pair<std::string, Setter>>& setters() {
  static const std::vector<std::pair<std::string, Setter>> table = [] {
    std::vector<std::pair<std::string, Setter>> t;
    auto add = [&](std::string k, Setter s) { t.emplace_back(std::move(k), std::move(s)); };
    add("L", [](auto& c, auto& k, auto& v) { c.hp.L = to_int(k, v); });
    add("K", [](auto& c, auto& k, auto& v) { c.hp.K = to_int(k, v); });
    add("lambda", [](auto& c, auto& k, auto& v) { c.hp.lambda = to_double(k, v); });
    add("tau", [](auto& c, auto& k, auto& v) { c.hp.tau = to_double(k, v); });
    add("eps0", [](auto& c, auto& k, auto& v) { c.hp.eps0 = to_double(k, v); });
    add("rho", [](auto& c, auto& k, auto& v) { c.hp.rho = to_double(k, v); });
    add("f_in", [](auto& c, auto& k, auto& v) { c.hp.f_in = static_cast<int>(to_int(k, v)); });
    add("length_epoch", [](auto& c, auto& k, auto& v) { c.hp.length_epoch = static_cast<int>(to_int(k, v)); });
    add("demo_window", [](auto& c, auto& k, auto& v) { c.hp.demo_window = static_cast<int>(to_int(k, v)); });
    add("n_es", [](auto& c, auto& k, auto& v) { c.hp.n_es = static_cast<int>(to_int(k, v)); });
    add("cluster_count", [](auto& c, auto& k, auto& v) { c.hp.cluster_count = static_cast<int>(to_int(k, v)); });
    add("seed", [](auto& c, auto& k, auto& v) { c.hp.seed = to_u64(k, v); });
    add("environment", [](auto& c, auto& k, auto& v) {
      if (v == "synthetic") c.environment = EnvironmentKind::synthetic;
      else if (v == "replay") c.environment = EnvironmentKind::replay;
      else if (v == "cascade") c.environment = EnvironmentKind::cascade;
      else throw InvalidInput(k + ": expected synthetic, replay or cascade");
    });
    add("form", [](auto& c, auto&, auto& v) { c.form = form_from_name(v); });
    add("noise_sigma", [](auto& c, auto& k, auto& v) { c.noise_sigma = to_double(k, v); });
    add("feature_dim", [](auto& c, auto& k, auto& v) { c.feature_dim = to_int(k, v); });
    add("target_constraints", [](auto& c, auto& k, auto& v) { c.target_constraints = to_u64(k, v); });
    add("features_path", [](auto& c, auto&, auto& v) { c.features_path = v; });
    add("log_path", [](auto& c, auto&, auto& v) { c.log_path = v; });
    add("gamma_c", [](auto& c, auto& k, auto& v) { c.gamma_c = to_double(k, v); });
    add("T", [](auto& c, auto& k, auto& v) { c.T = to_u64(k, v); });
    add("replicates", [](auto& c, auto& k, auto& v) { c.replicates = static_cast<int>(to_int(k, v)); });
    add("jobs", [](auto& c, auto& k, auto& v) { c.jobs = static_cast<int>(to_int(k, v)); });
    add("mode", [](auto& c, auto&, auto& v) { c.mode = v; });
    add("master", [](auto& c, auto& k, auto& v) {
      if (v == "stationary") c.master = MasterVariant::stationary;
      else if (v == "discounted") c.master = MasterVariant::discounted;
      else throw InvalidInput(k + ": expected stationary or discounted");
    });
    add("samplers", [](auto& c, auto&, auto& v) {
      c.enabled.fill(false);
      std::stringstream ss(v);
      std::string name;
      while (std::getline(ss, name, ',')) {
        const auto id = sampler_from_name(trim(name));
        if (static_cast<int>(id) >= kSlaveCount) throw InvalidInput("samplers: " + name + " is not a master slave");
        c.enabled[static_cast<std::size_t>(id)] = true;
      }
    });
    for (int s = 0; s < kSlaveCount; ++s) {
      const std::size_t slot = static_cast<std::size_t>(s);
      add(std::string("period.") + sampler_name(static_cast<SamplerId>(s)),
          [slot](auto& c, auto& k, auto& v) { c.period[slot] = static_cast<int>(to_int(k, v)); });
    }
    add("ucb.width", [](auto& c, auto& k, auto& v) { c.ucb.width = to_int(k, v); });
    add("ucb.depth", [](auto& c, auto& k, auto& v) { c.ucb.depth = static_cast<int>(to_int(k, v)); });
    add("ucb.steps", [](auto& c, auto& k, auto& v) { c.ucb.steps = static_cast<int>(to_int(k, v)); });
    add("ucb.lr", [](auto& c, auto& k, auto& v) { c.ucb.lr = to_double(k, v); });
    add("ucb.ridge", [](auto& c, auto& k, auto& v) { c.ucb.ridge = to_double(k, v); });
    add("ucb.nu", [](auto& c, auto& k, auto& v) { c.ucb.nu = to_double(k, v); });
    add("ucb.delta", [](auto& c, auto& k, auto& v) { c.ucb.delta = to_double(k, v); });
    add("ucb.radius_floor", [](auto& c, auto& k, auto& v) { c.ucb.radius_floor = to_double(k, v); });
    add("ucb.warm_start", [](auto& c, auto& k, auto& v) { c.ucb.warm_start = to_bool(k, v); });
    add("ucb.refresh_every", [](auto& c, auto& k, auto& v) { c.ucb.refresh_every = static_cast<int>(to_int(k, v)); });
    add("ucb.diagonal", [](auto& c, auto& k, auto& v) { c.ucb.diagonal = to_bool(k, v); });
    add("ucb.gamma_ns", [](auto& c, auto& k, auto& v) { c.ucb.gamma_ns = to_double(k, v); });
    add("ucb.alpha_const", [](auto& c, auto& k, auto& v) { c.ucb.alpha_const = to_double(k, v); });
    add("solver_refresh", [](auto& c, auto& k, auto& v) { c.solver_refresh = to_u64(k, v); });
    add("demo_steps", [](auto& c, auto& k, auto& v) { c.demo_steps = static_cast<int>(to_int(k, v)); });
    add("stuck_patience", [](auto& c, auto& k, auto& v) { c.stuck_patience = to_u64(k, v); });
    add("cotraining", [](auto& c, auto& k, auto& v) { c.cotraining = to_bool(k, v); });
    add("out", [](auto& c, auto&, auto& v) { c.out_dir = v; });
    return t;
  }();
  return table;
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::unique_ptr<Environment> make_environment(const ExperimentConfig& cfg, std::uint64_t seed, FeatureMatrix& features,
                                              std::optional<SyntheticFeedbackSpec>& spec) {
  const Index L = cfg.hp.L;
  Rng feature_rng = make_rng(seed, 1);
  Rng spec_rng = make_rng(seed, 2);
  switch (cfg.environment) {
    case EnvironmentKind::synthetic:
      features = uniform_features(L, cfg.feature_dim, feature_rng);
      spec = make_synthetic_spec(cfg.form, L, spec_rng, cfg.noise_sigma);
      return std::make_unique<SyntheticEnvironment>(*spec);
    case EnvironmentKind::cascade:
      features = uniform_features(L, cfg.feature_dim, feature_rng);
      return std::make_unique<CascadeEnvironment>(make_cascade_spec(L, cfg.gamma_c, spec_rng));
    case EnvironmentKind::replay: {
      features = ingest_features(cfg.features_path);
      if (features.rows() != L) throw InvalidInput("L: does not match the feature file row count");
      return std::make_unique<ReplayEnvironment>(ingest_log(cfg.log_path, cfg.hp.K));
    }
  }
  throw InvalidInput("environment: unknown kind");
}

std::unique_ptr<Sampler> make_standalone(SamplerId id, const ExperimentConfig& cfg, const FeatureMatrix* features,
                                         std::uint64_t seed) {
  const Index L = cfg.hp.L, K = cfg.hp.K;
  switch (id) {
    case SamplerId::wolpertinger: {
      WolpertingerConfig wc;
      wc.seed = mix_seed(seed, 12);
      wc.length_epoch = static_cast<std::size_t>(cfg.hp.length_epoch);
      wc.clusters = cfg.hp.cluster_count;
      return std::make_unique<WolpertingerSampler>(L, wc);
    }
    case SamplerId::g2anet: {
      G2aConfig gc;
      gc.seed = mix_seed(seed, 13);
      return std::make_unique<G2aSampler>(L, features, gc);
    }
    case SamplerId::cem: {
      CemConfig cc;
      cc.rho = cfg.hp.rho;
      cc.use_global_elites = false;
      return std::make_unique<CemSampler>(L, K, cc);
    }
    case SamplerId::random: return std::make_unique<RandomSampler>(false);
    case SamplerId::gtkr: return std::make_unique<GtkrSampler>(L);
    case SamplerId::solver:
      throw InvalidInput("mode: the solver sampler needs the master's estimator and cannot run standalone");
    case SamplerId::tlbo:
      throw InvalidInput("mode: the tlbo sampler perturbs other samplers' elites and cannot run standalone");
  }
  throw InvalidInput("mode: unknown sampler");
}

std::array<std::unique_ptr<Sampler>, kSlaveCount> make_slaves(const ExperimentConfig& cfg,
                                                               const FeatureMatrix* features, std::uint64_t seed) {
  const Index L = cfg.hp.L, K = cfg.hp.K;
  std::array<std::unique_ptr<Sampler>, kSlaveCount> s;
  SolverSamplerConfig sc;
  sc.eps0 = cfg.hp.eps0;
  sc.refresh_every = std::max<std::size_t>(1, cfg.solver_refresh);
  sc.solve.seed = mix_seed(seed, 11);
  s[static_cast<std::size_t>(SamplerId::solver)] = std::make_unique<SolverSampler>(sc);
  WolpertingerConfig wc;
  wc.seed = mix_seed(seed, 12);
  wc.length_epoch = static_cast<std::size_t>(cfg.hp.length_epoch);
  wc.clusters = cfg.hp.cluster_count;
  s[static_cast<std::size_t>(SamplerId::wolpertinger)] = std::make_unique<WolpertingerSampler>(L, wc);
  G2aConfig gc;
  gc.seed = mix_seed(seed, 13);
  s[static_cast<std::size_t>(SamplerId::g2anet)] = std::make_unique<G2aSampler>(L, features, gc);
  CemConfig cc;
  cc.rho = cfg.hp.rho;
  s[static_cast<std::size_t>(SamplerId::cem)] = std::make_unique<CemSampler>(L, K, cc);
  s[static_cast<std::size_t>(SamplerId::random)] = std::make_unique<RandomSampler>();
  s[static_cast<std::size_t>(SamplerId::tlbo)] = std::make_unique<TlboSampler>();
  return s;
}

/// Running arr over (exploration, t]; writes one row per sampler per round.
class ArrWriter {
 public:
  ArrWriter(std::ostream* out, std::size_t exploration, std::vector<SamplerId> ids)
      : out_(out), exploration_(exploration), ids_(std::move(ids)), counts_(ids_.size(), 0) {
    if (out_) *out_ << "t,sampler_id,arr\n";
  }
  void push(const RoundRecord& r) {
    if (r.t <= exploration_) return;
    ++window_;
    for (std::size_t i = 0; i < ids_.size(); ++i) counts_[i] += ids_[i] == r.chosen ? 1 : 0;
    if (!out_) return;
    for (std::size_t i = 0; i < ids_.size(); ++i)
      *out_ << r.t << ',' << sampler_name(ids_[i]) << ','
            << fmt(static_cast<double>(counts_[i]) / static_cast<double>(window_)) << '\n';
    out_->flush();
  }

 private:
  std::ostream* out_;
  std::size_t exploration_;
  std::vector<SamplerId> ids_;
  std::vector<std::size_t> counts_;
  std::size_t window_ = 0;
};

}  // namespace

SamplerId ExperimentConfig::standalone_sampler() const {
  const std::string prefix = "standalone:";
  if (mode.rfind(prefix, 0) != 0) throw InvalidInput("mode: expected master-slave or standalone:<sampler>");
  return sampler_from_name(mode.substr(prefix.size()));
}

void ExperimentConfig::validate() const {
  hp.validate();
  if (T < 1) throw InvalidInput("T must be >= 1");
  if (replicates < 1) throw InvalidInput("replicates must be >= 1");
  if (jobs < 1) throw InvalidInput("jobs must be >= 1");
  if (!(noise_sigma >= 0.0)) throw InvalidInput("noise_sigma must be >= 0");
  if (feature_dim < 1) throw InvalidInput("feature_dim must be >= 1");
  if (!(gamma_c > 0.0 && gamma_c <= 1.0)) throw InvalidInput("gamma_c must lie in (0,1]");
  if (ucb.width < 2 || ucb.width % 2 != 0) throw InvalidInput("ucb.width must be even and >= 2");
  if (ucb.depth < 2) throw InvalidInput("ucb.depth must be >= 2");
  if (ucb.steps < 0) throw InvalidInput("ucb.steps must be >= 0");
  if (!(ucb.ridge > 0.0)) throw InvalidInput("ucb.ridge must be > 0");
  if (!(ucb.delta > 0.0 && ucb.delta < 1.0)) throw InvalidInput("ucb.delta must lie in (0,1)");
  if (!(ucb.gamma_ns > 0.0 && ucb.gamma_ns < 1.0)) throw InvalidInput("ucb.gamma_ns must lie in (0,1)");
  for (int s = 0; s < kSlaveCount; ++s)
    if (period[static_cast<std::size_t>(s)] < 1)
      throw InvalidInput(std::string("period.") + sampler_name(static_cast<SamplerId>(s)) + " must be >= 1");
  if (demo_steps < 0) throw InvalidInput("demo_steps must be >= 0");
  if (environment == EnvironmentKind::replay && (features_path.empty() || log_path.empty()))
    throw InvalidInput("features_path and log_path are required for the replay environment");
  if (standalone()) {
    const SamplerId id = standalone_sampler();
    if (id == SamplerId::tlbo) throw InvalidInput("mode: the tlbo sampler cannot run standalone");
    if (id == SamplerId::solver) throw InvalidInput("mode: the solver sampler cannot run standalone");
  } else if (!enabled[static_cast<std::size_t>(SamplerId::random)]) {
    throw InvalidInput("samplers: the random sampler must stay enabled");
  }
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& [k, set] : setters())
    if (k == key) {
      set(cfg, key, value);
      return;
    }
  throw InvalidInput("unknown config key: " + key);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& kv : setters()) keys.push_back(kv.first);
  return keys;
}

ExperimentConfig parse_config(std::istream& in, const ExperimentConfig& base, std::vector<std::string>* keys_seen) {
  ExperimentConfig cfg = base;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidInput("config line " + std::to_string(number) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    set_config_value(cfg, key, trim(line.substr(eq + 1)));
    if (keys_seen) keys_seen->push_back(key);
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path, const ExperimentConfig& base,
                             std::vector<std::string>* keys_seen) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open config file: " + path);
  return parse_config(in, base, keys_seen);
}

double compute_arr(const std::vector<RoundRecord>& history, SamplerId id, std::size_t t, std::size_t exploration) {
  if (t <= exploration) throw InvalidInput("compute_arr: t must exceed the exploration window");
  if (t > history.size()) throw InvalidInput("compute_arr: t beyond history");
  std::size_t hits = 0;
  for (std::size_t i = exploration; i < t; ++i) hits += history[i].chosen == id ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(t - exploration);
}

GroundTruth ground_truth(const SyntheticFeedbackSpec& spec, const ConstraintSet& C, Index K) {
  const Index L = spec.theta.size();
  SolveOptions opt;
  opt.mode = L <= opt.exact_limit ? SolveMode::exact : SolveMode::heuristic;
  IpSolution sol;
  switch (spec.form) {
    case FeedbackForm::linear:
    case FeedbackForm::cubic:  // x^3 is increasing, and theta >= 0 keeps theta.A >= 0
      sol = solve_ip(LinearSurrogate{spec.theta}, C, K, opt);
      break;
    case FeedbackForm::quadratic:
      sol = solve_ip(QuadraticSurrogate{spec.Q, 0.0}, C, K, opt);
      break;
    case FeedbackForm::mixed:
      sol = solve_ip(QuadraticSurrogate{spec.theta * spec.theta.transpose() + spec.Q, 0.0}, C, K, opt);
      break;
  }
  return {sol.action, noiseless_feedback(spec, sol.action), sol.heuristic};
}

double tau_for_constraint_count(const FeatureMatrix& features, std::size_t count) {
  std::vector<double> d;
  const Index L = features.rows();
  for (Index i = 0; i < L; ++i)
    for (Index j = i + 1; j < L; ++j) d.push_back(ned<double>(features.row(i).transpose(), features.row(j).transpose()));
  if (count == 0 || d.empty()) return 0.0;
  std::sort(d.begin(), d.end());
  const std::size_t k = std::min(count, d.size());
  // midpoint to the next distance, so exactly k pairs fall strictly below
  const double hi = k < d.size() ? d[k] : d.back() + 1e-9;
  return 0.5 * (d[k - 1] + hi);
}

FeatureMatrix uniform_features(Index L, Index d, Rng& rng) {
  FeatureMatrix F(L, d);
  for (Index i = 0; i < L; ++i)
    for (Index j = 0; j < d; ++j) F(i, j) = uniform01(rng);
  return F;
}

std::uint64_t replicate_seed(std::uint64_t seed, int r) { return r == 0 ? seed : mix_seed(seed, 0x7e9 + r); }

void write_csv_header(std::ostream& out) { out << "t,reward,violation_rate,chosen_sampler,score\n"; }

void write_csv_row(std::ostream& out, const RoundRecord& r) {
  out << r.t << ',' << fmt(r.reward) << ',' << fmt(r.violation) << ',' << sampler_name(r.chosen) << ','
      << fmt(r.score) << '\n';
}

MetricsSeries run_replicate(const ExperimentConfig& cfg, int replicate, std::ostream* csv, std::ostream* arr_csv) {
  cfg.validate();
  const std::uint64_t seed = replicate_seed(cfg.hp.seed, replicate);
  FeatureMatrix features;
  std::optional<SyntheticFeedbackSpec> spec;
  auto env = make_environment(cfg, seed, features, spec);
  const Index L = cfg.hp.L, K = cfg.hp.K;

  MetricsSeries series;
  series.tau = cfg.target_constraints > 0 ? tau_for_constraint_count(features, cfg.target_constraints) : cfg.hp.tau;
  ConstraintSet C = build_constraints(features, series.tau);
  series.constraint_count = C.size();
  if (spec) series.ground_truth = ground_truth(*spec, C, K).value;
  series.exploration = 2 * static_cast<std::size_t>(L);
  Rng env_rng = make_rng(seed, 3);
  const FeatureMatrix* fptr = &features;

  if (csv) write_csv_header(*csv);
  auto emit = [&](const RoundRecord& r, ArrWriter& arr) {
    series.rounds.push_back(r);
    if (csv) {
      write_csv_row(*csv, r);
      csv->flush();
    }
    arr.push(r);
  };

  try {
    if (cfg.standalone()) {
      const SamplerId id = cfg.standalone_sampler();
      auto sampler = make_standalone(id, cfg, fptr, seed);
      ArrWriter arr(arr_csv, series.exploration, {id});
      Rng rng = make_rng(seed, 4);
      SamplerContext ctx;
      ctx.L = L;
      ctx.K = K;
      ctx.lambda = cfg.hp.lambda;
      ctx.constraints = &C;
      ctx.features = fptr;
      for (std::size_t t = 1; t <= cfg.T; ++t) {
        ctx.round = t;
        auto proposals = sampler->propose(ctx, 1, rng);
        const ActionVector a = proposals.empty() ? random_sample(L, K, rng) : proposals.front();
        RoundRecord r;
        r.t = t;
        r.action = a;
        r.chosen = id;
        r.violation = ctx.violation(a);
        r.reward = env->feedback(t, a, a.selected(), env_rng);
        r.score = composite_score(r.reward, r.violation, cfg.hp.lambda);
        sampler->record(ctx, a, r.reward, r.violation);
        if (t % static_cast<std::size_t>(cfg.hp.f_in) == 0) sampler->train(ctx, rng);
        emit(r, arr);
      }
    } else {
      MasterConfig mc;
      mc.L = L;
      mc.K = K;
      mc.lambda = cfg.hp.lambda;
      mc.f_in = cfg.hp.f_in;
      mc.n_es = cfg.hp.n_es;
      mc.enabled = cfg.enabled;
      mc.period = cfg.period;
      mc.buffer_capacity = static_cast<std::size_t>(cfg.hp.length_epoch);
      mc.demo_window = static_cast<std::size_t>(cfg.hp.demo_window);
      if (cfg.stuck_patience > 0) mc.stuck_patience = cfg.stuck_patience;
      mc.demo_steps = cfg.demo_steps;
      mc.cotraining = cfg.cotraining;
      mc.seed = mix_seed(seed, 5);
      UcbConfig uc = cfg.ucb;
      uc.seed = mix_seed(seed, 6);
      uc.discounted = cfg.master == MasterVariant::discounted;
      std::vector<SamplerId> ids;
      for (int s = 0; s < kSlaveCount; ++s) ids.push_back(static_cast<SamplerId>(s));
      ArrWriter arr(arr_csv, series.exploration, ids);
      Master master(mc, uc, C, fptr, make_slaves(cfg, fptr, seed));
      for (std::size_t t = 1; t <= cfg.T; ++t) emit(master.run_round(*env, env_rng), arr);
    }
  } catch (const EndOfLog&) {
    // replay logs end the experiment early
  }
  return series;
}

std::vector<MetricsSeries> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto R = static_cast<std::size_t>(cfg.replicates);
  std::vector<MetricsSeries> out(R);
  std::vector<std::exception_ptr> errors(R);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t r = next++; r < R; r = next++) {
      try {
        if (cfg.out_dir.empty()) {
          out[r] = run_replicate(cfg, static_cast<int>(r));
          continue;
        }
        char name[32];
        std::snprintf(name, sizeof name, "rep_%03zu", r);
        const auto dir = std::filesystem::path(cfg.out_dir) / name;
        std::filesystem::create_directories(dir);
        std::ofstream csv(dir / "metrics.csv", std::ios::binary);
        std::ofstream arr(dir / "arr.csv", std::ios::binary);
        if (!csv || !arr) throw std::runtime_error("cannot write into " + dir.string());
        out[r] = run_replicate(cfg, static_cast<int>(r), &csv, &arr);
      } catch (...) {
        errors[r] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min<std::size_t>(R, static_cast<std::size_t>(cfg.jobs));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

void export_csv(const MetricsSeries& series, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_csv_header(out);
  for (const auto& r : series.rounds) write_csv_row(out, r);
  if (!out) throw std::runtime_error("write failed: " + path);
}

void export_arr_csv(const MetricsSeries& series, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  std::vector<SamplerId> ids;
  for (int s = 0; s < kSlaveCount; ++s) ids.push_back(static_cast<SamplerId>(s));
  ArrWriter arr(&out, series.exploration, ids);
  for (const auto& r : series.rounds) arr.push(r);
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<RoundRecord> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path);
  std::string line;
  std::getline(in, line);
  if (trim(line) != "t,reward,violation_rate,chosen_sampler,score") throw InvalidInput(path + ": unexpected header");
  std::vector<RoundRecord> rows;
  int number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (trim(line).empty()) continue;
    std::stringstream ss(line);
    std::string f[5];
    for (auto& x : f)
      if (!std::getline(ss, x, ',')) throw InvalidInput(path + ":" + std::to_string(number) + ": expected 5 fields");
    RoundRecord r;
    r.t = to_u64("t", trim(f[0]));
    r.reward = to_double("reward", trim(f[1]));
    r.violation = to_double("violation_rate", trim(f[2]));
    r.chosen = sampler_from_name(trim(f[3]));
    r.score = to_double("score", trim(f[4]));
    rows.push_back(r);
  }
  return rows;
}

SeriesSummary summarize(const std::vector<RoundRecord>& rounds, std::size_t exploration, std::size_t tail) {
  SeriesSummary s;
  if (rounds.empty()) return s;
  for (const auto& r : rounds) {
    s.mean_reward += r.reward;
    s.mean_violation += r.violation;
  }
  s.mean_reward /= static_cast<double>(rounds.size());
  s.mean_violation /= static_cast<double>(rounds.size());
  const std::size_t n = std::min(tail, rounds.size());
  for (std::size_t i = rounds.size() - n; i < rounds.size(); ++i) s.tail_reward += rounds[i].reward;
  s.tail_reward /= static_cast<double>(n);
  if (rounds.size() > exploration)
    for (int id = 0; id < kSamplerCount; ++id)
      s.arr[sampler_name(static_cast<SamplerId>(id))] =
          compute_arr(rounds, static_cast<SamplerId>(id), rounds.size(), exploration);
  return s;
}

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    for (double x : v) m.std += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(m.std / static_cast<double>(v.size() - 1));
  }
  return m;
}

void render_plot(const std::vector<std::vector<RoundRecord>>& series, const std::vector<std::string>& labels,
                 const std::string& path) {
  static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};
  const double W = 760, H = 260, left = 60, top = 30, gap = 70;
  std::vector<std::vector<double>> cum_r, cum_c;
  std::size_t T = 1;
  double rmin = 1e300, rmax = -1e300, cmax = 1e-12;
  for (const auto& s : series) {
    std::vector<double> r, c;
    double sr = 0, sc = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      sr += s[i].reward;
      sc += s[i].violation;
      r.push_back(sr / double(i + 1));
      c.push_back(sc / double(i + 1));
      rmin = std::min(rmin, r.back());
      rmax = std::max(rmax, r.back());
      cmax = std::max(cmax, c.back());
    }
    T = std::max(T, s.size());
    cum_r.push_back(std::move(r));
    cum_c.push_back(std::move(c));
  }
  if (rmin > rmax) rmin = 0, rmax = 1;
  if (rmax - rmin < 1e-12) rmax = rmin + 1.0;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  const double total_h = top + 2 * H + gap + 40 + 18.0 * double(series.size());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(W + left + 20) << "\" height=\"" << fmt(total_h)
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  auto panel = [&](const std::vector<std::vector<double>>& ys, double lo, double hi, double y0, const char* title) {
    out << "<rect x=\"" << fmt(left) << "\" y=\"" << fmt(y0) << "\" width=\"" << fmt(W) << "\" height=\"" << fmt(H)
        << "\" fill=\"none\" stroke=\"#444\"/>\n";
    out << "<text x=\"" << fmt(left) << "\" y=\"" << fmt(y0 - 8) << "\">" << title << "</text>\n";
    out << "<text x=\"4\" y=\"" << fmt(y0 + 10) << "\">" << fmt(hi) << "</text>\n";
    out << "<text x=\"4\" y=\"" << fmt(y0 + H) << "\">" << fmt(lo) << "</text>\n";
    for (std::size_t k = 0; k < ys.size(); ++k) {
      out << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << colours[k % 7] << "\" points=\"";
      const std::size_t step = std::max<std::size_t>(1, ys[k].size() / 400);
      for (std::size_t i = 0; i < ys[k].size(); i += step) {
        const double x = left + W * double(i + 1) / double(T);
        const double y = y0 + H * (1.0 - (ys[k][i] - lo) / (hi - lo));
        out << fmt(x) << ',' << fmt(y) << ' ';
      }
      out << "\"/>\n";
    }
  };
  panel(cum_r, rmin, rmax, top, "cumulative mean reward");
  panel(cum_c, 0.0, cmax, top + H + gap, "cumulative mean violation rate");
  out << "<text x=\"" << fmt(left + W - 40) << "\" y=\"" << fmt(top + 2 * H + gap + 16) << "\">t = " << T
      << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const double y = top + 2 * H + gap + 34 + 18.0 * double(k);
    out << "<rect x=\"" << fmt(left) << "\" y=\"" << fmt(y - 10) << "\" width=\"12\" height=\"12\" fill=\""
        << colours[k % 7] << "\"/>";
    out << "<text x=\"" << fmt(left + 18) << "\" y=\"" << fmt(y) << "\">"
        << xml_escape(k < labels.size() ? labels[k] : "series " + std::to_string(k)) << "</text>\n";
  }
  out << "</svg>\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace msb
