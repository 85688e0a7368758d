#pragma once

// Bandit environments. Each one turns a chosen action into a scalar reward;
// randomness only ever comes from the stream handed in by the caller.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msb/core.hpp"
#include "msb/random.hpp"

namespace msb {

enum class FeedbackForm { linear, cubic, quadratic, mixed };

const char* form_name(FeedbackForm f);
FeedbackForm form_from_name(const std::string& name);

struct SyntheticFeedbackSpec {
  FeedbackForm form = FeedbackForm::linear;
  RealVector theta;
  Eigen::MatrixXd Q;
  double noise_sigma = 0.1;
};

/// theta ~ U[0, 0.5]^L, Q ~ U[0, 0.5]^{L x L}.
SyntheticFeedbackSpec make_synthetic_spec(FeedbackForm form, Index L, Rng& rng, double noise_sigma = 0.1);

/// h(A) without noise.
double noiseless_feedback(const SyntheticFeedbackSpec& spec, const ActionVector& a);
double synthetic_feedback(const SyntheticFeedbackSpec& spec, const ActionVector& a, Rng& rng);

struct ClickEvent {
  std::int64_t timestamp = 0;
  Index item = 0;
};

struct ReplayLog {
  std::vector<ClickEvent> events;
  Index L = 0;
  Index K = 1;
  /// Set when ingestion had to sort the events.
  bool resorted = false;
};

/// Items clicked within the 2K events centred on the event mapped to round t (1-based).
std::vector<Index> replay_click_window(const ReplayLog& log, std::size_t t);
/// |window ∩ selected(A)| / 2K. Throws EndOfLog past the last event.
double replay_feedback(const ReplayLog& log, std::size_t t, const ActionVector& a);

struct CascadeSpec {
  RealVector attract;
  RealVector satisfy;
  double gamma_c = 0.9;
};

struct CascadeOutcome {
  int reward = 0;
  Index examined = 0;
};

CascadeSpec make_cascade_spec(Index L, double gamma_c, Rng& rng);
CascadeOutcome cascade_step(const CascadeSpec& spec, std::span<const Index> ordered_items, Rng& rng);

FeatureMatrix ingest_features(const std::string& path);
ReplayLog ingest_log(const std::string& path, Index K);
void write_features(const FeatureMatrix& features, const std::string& path);

/// Common surface the experiment loop drives.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual Index arm_count() const = 0;
  /// Whether feedback depends on the order of the selected arms.
  virtual bool ordered() const { return false; }
  /// Reward for round t (1-based). `order` lists the selected arms best-first when ordered().
  virtual double feedback(std::size_t t, const ActionVector& a, std::span<const Index> order, Rng& rng) = 0;
  /// Noise-free expected reward, when the environment can compute it.
  virtual std::optional<double> expected(const ActionVector&) const { return std::nullopt; }
};

class SyntheticEnvironment final : public Environment {
 public:
  explicit SyntheticEnvironment(SyntheticFeedbackSpec spec) : spec_(std::move(spec)) {}
  Index arm_count() const override { return spec_.theta.size(); }
  double feedback(std::size_t, const ActionVector& a, std::span<const Index>, Rng& rng) override {
    return synthetic_feedback(spec_, a, rng);
  }
  std::optional<double> expected(const ActionVector& a) const override { return noiseless_feedback(spec_, a); }
  const SyntheticFeedbackSpec& spec() const { return spec_; }

 private:
  SyntheticFeedbackSpec spec_;
};

class ReplayEnvironment final : public Environment {
 public:
  explicit ReplayEnvironment(ReplayLog log) : log_(std::move(log)) {}
  Index arm_count() const override { return log_.L; }
  double feedback(std::size_t t, const ActionVector& a, std::span<const Index>, Rng&) override {
    return replay_feedback(log_, t, a);
  }

 private:
  ReplayLog log_;
};

class CascadeEnvironment final : public Environment {
 public:
  explicit CascadeEnvironment(CascadeSpec spec) : spec_(std::move(spec)) {}
  Index arm_count() const override { return spec_.attract.size(); }
  bool ordered() const override { return true; }
  double feedback(std::size_t, const ActionVector& a, std::span<const Index> order, Rng& rng) override;
  const CascadeSpec& spec() const { return spec_; }

 private:
  CascadeSpec spec_;
};

}  // namespace msb
