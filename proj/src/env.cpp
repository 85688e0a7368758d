#include "msb/env.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace msb {

const char* form_name(FeedbackForm f) {
  switch (f) {
    case FeedbackForm::linear: return "linear";
    case FeedbackForm::cubic: return "cubic";
    case FeedbackForm::quadratic: return "quadratic";
    case FeedbackForm::mixed: return "mixed";
  }
  return "unknown";
}

FeedbackForm form_from_name(const std::string& name) {
  for (auto f : {FeedbackForm::linear, FeedbackForm::cubic, FeedbackForm::quadratic, FeedbackForm::mixed}) {
    if (name == form_name(f)) return f;
  }
  throw InvalidInput("unknown feedback form: " + name);
}

SyntheticFeedbackSpec make_synthetic_spec(FeedbackForm form, Index L, Rng& rng, double noise_sigma) {
  SyntheticFeedbackSpec spec;
  spec.form = form;
  spec.noise_sigma = noise_sigma;
  spec.theta.resize(L);
  for (Index i = 0; i < L; ++i) spec.theta[i] = 0.5 * uniform01(rng);
  spec.Q.resize(L, L);
  for (Index j = 0; j < L; ++j)
    for (Index i = 0; i < L; ++i) spec.Q(i, j) = 0.5 * uniform01(rng);
  return spec;
}

double noiseless_feedback(const SyntheticFeedbackSpec& spec, const ActionVector& a) {
  const Index L = spec.theta.size();
  if (a.size() != L) throw InvalidInput("synthetic_feedback: action length does not match theta");
  const auto& s = a.selected();
  auto linear = [&] {
    double v = 0.0;
    for (Index i : s) v += spec.theta[i];
    return v;
  };
  auto quadratic = [&] {
    if (spec.Q.rows() != L || spec.Q.cols() != L) throw InvalidInput("synthetic_feedback: Q must be L x L");
    double v = 0.0;
    for (Index i : s)
      for (Index j : s) v += spec.Q(i, j);
    return v;
  };
  switch (spec.form) {
    case FeedbackForm::linear: return linear();
    case FeedbackForm::cubic: {
      const double x = linear();
      return x * x * x;
    }
    case FeedbackForm::quadratic: return quadratic();
    case FeedbackForm::mixed: {
      const double x = linear();
      return x * x + quadratic();
    }
  }
  return 0.0;
}

double synthetic_feedback(const SyntheticFeedbackSpec& spec, const ActionVector& a, Rng& rng) {
  const double h = noiseless_feedback(spec, a);
  if (spec.noise_sigma == 0.0) return h;
  return h + spec.noise_sigma * standard_normal(rng);
}

std::vector<Index> replay_click_window(const ReplayLog& log, std::size_t t) {
  const std::size_t n = log.events.size();
  if (n == 0) throw InvalidInput("replay: empty log");
  if (t < 1 || t > n) throw EndOfLog("replay: round beyond log horizon");
  const std::size_t width = std::min<std::size_t>(2 * static_cast<std::size_t>(log.K), n);
  const std::size_t centre = t - 1;
  std::size_t start = centre >= width / 2 ? centre - width / 2 : 0;
  start = std::min(start, n - width);
  std::set<Index> items;
  for (std::size_t e = start; e < start + width; ++e) items.insert(log.events[e].item);
  return {items.begin(), items.end()};
}

double replay_feedback(const ReplayLog& log, std::size_t t, const ActionVector& a) {
  const auto window = replay_click_window(log, t);
  std::size_t overlap = 0;
  for (Index i : window) {
    if (i < a.size() && a[i]) ++overlap;
  }
  return static_cast<double>(overlap) / (2.0 * static_cast<double>(log.K));
}

CascadeSpec make_cascade_spec(Index L, double gamma_c, Rng& rng) {
  CascadeSpec spec;
  spec.gamma_c = gamma_c;
  spec.attract.resize(L);
  spec.satisfy.resize(L);
  for (Index i = 0; i < L; ++i) spec.attract[i] = uniform01(rng);
  for (Index i = 0; i < L; ++i) spec.satisfy[i] = uniform01(rng);
  return spec;
}

CascadeOutcome cascade_step(const CascadeSpec& spec, std::span<const Index> ordered_items, Rng& rng) {
  CascadeOutcome out;
  for (std::size_t k = 0; k < ordered_items.size(); ++k) {
    if (k > 0 && !(uniform01(rng) < spec.gamma_c)) break;
    const Index item = ordered_items[k];
    ++out.examined;
    if (uniform01(rng) < spec.attract[item] && uniform01(rng) < spec.satisfy[item]) {
      out.reward = 1;
      break;
    }
  }
  return out;
}

double CascadeEnvironment::feedback(std::size_t, const ActionVector& a, std::span<const Index> order, Rng& rng) {
  if (order.empty()) {
    const auto& s = a.selected();
    return cascade_step(spec_, std::span<const Index>(s.data(), s.size()), rng).reward;
  }
  return cascade_step(spec_, order, rng).reward;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_field(const std::string& raw, const std::string& path, std::size_t line_no) {
  const std::string s = trim(raw);
  std::istringstream ss(s);
  T value{};
  ss >> value;
  if (s.empty() || ss.fail() || !ss.eof()) {
    throw InvalidInput(path + ":" + std::to_string(line_no) + ": malformed field '" + s + "'");
  }
  return value;
}

}  // namespace

FeatureMatrix ingest_features(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open features file: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    std::vector<double> row;
    row.reserve(fields.size());
    for (const auto& f : fields) row.push_back(parse_field<double>(f, path, line_no));
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw InvalidInput(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(rows.front().size()) +
                         " fields, got " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InvalidInput("features file is empty: " + path);
  FeatureMatrix f(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) f(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return f;
}

ReplayLog ingest_log(const std::string& path, Index K) {
  if (K < 1) throw InvalidInput("ingest_log: K must be >= 1");
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open click log: " + path);
  std::string line;
  std::size_t line_no = 0;
  ReplayLog log;
  log.K = K;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    if (!header_seen) {
      if (fields.size() != 2 || trim(fields[0]) != "timestamp" || trim(fields[1]) != "item") {
        throw InvalidInput(path + ":" + std::to_string(line_no) + ": expected header 'timestamp,item'");
      }
      header_seen = true;
      continue;
    }
    if (fields.size() != 2) {
      throw InvalidInput(path + ":" + std::to_string(line_no) + ": expected 2 fields, got " +
                         std::to_string(fields.size()));
    }
    ClickEvent e;
    e.timestamp = parse_field<std::int64_t>(fields[0], path, line_no);
    const auto item = parse_field<std::int64_t>(fields[1], path, line_no);
    if (item < 0) throw InvalidInput(path + ":" + std::to_string(line_no) + ": negative item index");
    e.item = static_cast<Index>(item);
    log.events.push_back(e);
  }
  if (log.events.empty()) throw InvalidInput("click log has no events: " + path);
  if (!std::is_sorted(log.events.begin(), log.events.end(),
                      [](const ClickEvent& a, const ClickEvent& b) { return a.timestamp < b.timestamp; })) {
    std::stable_sort(log.events.begin(), log.events.end(),
                     [](const ClickEvent& a, const ClickEvent& b) { return a.timestamp < b.timestamp; });
    log.resorted = true;
  }
  for (const auto& e : log.events) log.L = std::max(log.L, e.item + 1);
  return log;
}

void write_features(const FeatureMatrix& features, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write features file: " + path);
  out << std::setprecision(17);
  for (Index i = 0; i < features.rows(); ++i) {
    for (Index j = 0; j < features.cols(); ++j) {
      if (j) out << ',';
      out << features(i, j);
    }
    out << '\n';
  }
}

}  // namespace msb
