// Plot-ready CSV exporters: parallel-coordinates rows per run, throughput
// maps (measured or modeled) and per-epoch reference-probability matrices.
#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "seisbench/common.hpp"
#include "seisbench/selection.hpp"
#include "seisbench/sweep.hpp"
#include "seisbench/trainer.hpp"

namespace seisbench {

// Shortest decimal serialization that round-trips exactly.
inline std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw DataError("csv: bad numeric field: " + s);
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

// ---- Fig. 1: parallel coordinates ------------------------------------------

inline const char* kParallelCoordsHeader =
    "run_id,backend_label,workers,channel_mode,batch,dataset_size,depth,"
    "bottleneck,lr,epochs,final_loss,best_distance,pass";

// One row per run, in record order. final_loss is the last completed epoch's
// loss; best_distance the minimum midpoint distance over epochs; pass is true
// if any epoch clears every range.
inline std::string export_parallel_coords(const std::vector<RunRecord>& records,
                                          const ExpectedRangeSpec& spec = {}) {
  std::ostringstream os;
  os << kParallelCoordsHeader << '\n';
  for (const RunRecord& r : records) {
    double final_loss = r.epochs.empty() ? std::nan("") : r.epochs.back().loss;
    double best_distance = std::numeric_limits<double>::infinity();
    bool pass = false;
    for (const EpochStats& e : r.epochs) {
      RangeReport rep = check_ranges(e.ref_probs, spec);
      best_distance = std::min(best_distance, rep.distance);
      pass = pass || rep.pass;
    }
    os << r.id << ',' << r.hp.backend_label << ',' << r.hp.workers << ','
       << channel_mode_name(r.hp.channel_mode) << ',' << r.hp.batch << ','
       << r.hp.dataset_size << ',' << r.hp.depth << ',' << r.hp.bottleneck << ','
       << fmt_double(r.hp.lr) << ',' << r.hp.epochs << ','
       << fmt_double(final_loss) << ',' << fmt_double(best_distance) << ','
       << (pass ? "true" : "false") << '\n';
  }
  return os.str();
}

// ---- Fig. 2: throughput map -------------------------------------------------

struct ThroughputCell {
  int workers = 0;
  std::int64_t dataset_size = 0;
  std::int64_t batch = 0;
  double samples_per_sec = 0.0;
  bool measured = false;

  const char* source() const { return measured ? "measured" : "modeled"; }
};

inline const char* kThroughputHeader =
    "workers,dataset_size,batch,samples_per_sec,source";

inline std::string export_throughput_map(const std::vector<ThroughputCell>& cells) {
  std::ostringstream os;
  os << kThroughputHeader << '\n';
  for (const ThroughputCell& c : cells) {
    if (!(c.samples_per_sec > 0.0))
      throw SpecError("throughput cell: samples_per_sec must be > 0");
    os << c.workers << ',' << c.dataset_size << ',' << c.batch << ','
       << fmt_double(c.samples_per_sec) << ',' << c.source() << '\n';
  }
  return os.str();
}

// Modeled grid via the analytic cost model.
inline std::vector<ThroughputCell> modeled_cells(const ScalingCostModel& m,
                                                 const std::vector<int>& workers,
                                                 const std::vector<std::int64_t>& sizes,
                                                 const std::vector<std::int64_t>& batches) {
  if (workers.empty() || sizes.empty() || batches.empty())
    throw SpecError("throughput grid: all axes must be non-empty");
  std::vector<ThroughputCell> out;
  for (int w : workers)
    for (std::int64_t n : sizes)
      for (std::int64_t b : batches) {
        ThroughputCell c;
        c.workers = w;
        c.dataset_size = n;
        c.batch = b;
        c.samples_per_sec = model_throughput(m, w, n, b);
        c.measured = false;
        out.push_back(c);
      }
  return out;
}

inline std::string export_throughput_map(const ScalingCostModel& m,
                                         const std::vector<int>& workers,
                                         const std::vector<std::int64_t>& sizes,
                                         const std::vector<std::int64_t>& batches) {
  return export_throughput_map(modeled_cells(m, workers, sizes, batches));
}

// ---- Fig. 3: probability matrix ---------------------------------------------

inline const char* kProbMatrixHeader =
    "model_index,run_id,depth,lr,epoch,p_white_noise,p_coherent,"
    "p_noncoherent,p_saturated,pass";

// Rows ordered by the figure convention: model index by depth, then lr
// within depth; epochs in order within each model.
inline std::string export_prob_matrix(const std::vector<RunRecord>& records,
                                      const ExpectedRangeSpec& spec = {}) {
  std::vector<const RunRecord*> order;
  order.reserve(records.size());
  for (const RunRecord& r : records) order.push_back(&r);
  std::stable_sort(order.begin(), order.end(),
                   [](const RunRecord* a, const RunRecord* b) {
                     if (a->hp.depth != b->hp.depth) return a->hp.depth < b->hp.depth;
                     return a->hp.lr < b->hp.lr;
                   });
  std::ostringstream os;
  os << kProbMatrixHeader << '\n';
  for (std::size_t mi = 0; mi < order.size(); ++mi) {
    const RunRecord& r = *order[mi];
    for (const EpochStats& e : r.epochs) {
      RangeReport rep = check_ranges(e.ref_probs, spec);
      os << mi << ',' << r.id << ',' << r.hp.depth << ',' << fmt_double(r.hp.lr)
         << ',' << e.epoch << ',' << fmt_double(e.ref_probs.white_noise) << ','
         << fmt_double(e.ref_probs.coherent) << ','
         << fmt_double(e.ref_probs.noncoherent) << ','
         << fmt_double(e.ref_probs.saturated) << ','
         << (rep.pass ? "true" : "false") << '\n';
    }
  }
  return os.str();
}

}  // namespace seisbench
