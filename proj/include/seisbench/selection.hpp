// Interpretability gate: interval filter on the four reference-type
// probabilities, plus ranking of per-epoch checkpoints by distance to the
// interval midpoints.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "seisbench/common.hpp"
#include "seisbench/sweep.hpp"

namespace seisbench {

// Open intervals of acceptable usable-energy probability per signal type.
struct ExpectedRangeSpec {
  // Fixed type order: white noise, coherent, noncoherent, saturated.
  std::array<std::pair<double, double>, 4> ranges = {{
      {0.0, 0.1},  // white noise
      {0.9, 1.0},  // coherent waves
      {0.7, 0.9},  // non-coherent waves
      {0.2, 0.3},  // saturated signal
  }};

  void validate() const {
    for (const auto& [lo, hi] : ranges)
      if (!(lo >= 0.0 && lo < hi && hi <= 1.0))
        throw SpecError("ExpectedRangeSpec: need 0 <= lo < hi <= 1 per type");
  }

  ordered_json to_json() const {
    ordered_json j;
    j["white_noise"] = {ranges[0].first, ranges[0].second};
    j["coherent"] = {ranges[1].first, ranges[1].second};
    j["noncoherent"] = {ranges[2].first, ranges[2].second};
    j["saturated"] = {ranges[3].first, ranges[3].second};
    return j;
  }

  static ExpectedRangeSpec from_json(const ordered_json& j) {
    ExpectedRangeSpec s;
    auto grab = [&](const char* name, int idx) {
      const auto& a = j.at(name);
      if (!a.is_array() || a.size() != 2)
        throw SpecError(std::string("range spec: '") + name + "' must be [lo, hi]");
      s.ranges[idx] = {a[0].get<double>(), a[1].get<double>()};
    };
    grab("white_noise", 0);
    grab("coherent", 1);
    grab("noncoherent", 2);
    grab("saturated", 3);
    s.validate();
    return s;
  }

  static ExpectedRangeSpec from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open range spec: " + path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return from_json(ordered_json::parse(text));
  }
};

struct RangeCheck {
  double p = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  bool pass = false;
};

struct RangeReport {
  std::array<RangeCheck, 4> per_type;
  bool pass = false;      // all four pass
  double distance = 0.0;  // sum |p - midpoint| over types
};

// Strict-inequality containment, matching "p < 0.1"-style bounds.
inline RangeReport check_ranges(const RefProbs& probs, const ExpectedRangeSpec& spec) {
  spec.validate();
  std::array<double, 4> p = {probs.white_noise, probs.coherent,
                             probs.noncoherent, probs.saturated};
  RangeReport rep;
  rep.pass = true;
  for (int i = 0; i < 4; ++i) {
    auto [lo, hi] = spec.ranges[i];
    rep.per_type[i] = {p[i], lo, hi, p[i] > lo && p[i] < hi};
    rep.pass = rep.pass && rep.per_type[i].pass;
    rep.distance += std::abs(p[i] - 0.5 * (lo + hi));
  }
  return rep;
}

template <typename T>
RefProbs eval_reference(Model<T>& m, const ReferenceSet& refset) {
  return eval_reference_probs(m, refset);
}

struct Candidate {
  std::string run_id;
  int epoch = 0;
  RangeReport report;
};

struct RankSummary {
  std::int64_t passing = 0;
  std::int64_t total = 0;  // candidates = (run, epoch) checkpoints examined
};

struct Ranking {
  std::vector<Candidate> candidates;  // passing only, ascending distance
  RankSummary summary;
};

// Every (run, epoch) checkpoint is a candidate; passing candidates are
// returned ordered by ascending distance to the interval midpoints.
inline Ranking rank_models(const std::vector<RunRecord>& records,
                           const ExpectedRangeSpec& spec) {
  Ranking out;
  for (const RunRecord& r : records) {
    for (const EpochStats& e : r.epochs) {
      ++out.summary.total;
      RangeReport rep = check_ranges(e.ref_probs, spec);
      if (rep.pass) {
        ++out.summary.passing;
        out.candidates.push_back({r.id, e.epoch, rep});
      }
    }
  }
  std::stable_sort(out.candidates.begin(), out.candidates.end(),
                   [](const Candidate& a, const Candidate& b) {
                     if (a.report.distance != b.report.distance)
                       return a.report.distance < b.report.distance;
                     if (a.run_id != b.run_id) return a.run_id < b.run_id;
                     return a.epoch < b.epoch;
                   });
  return out;
}

}  // namespace seisbench
