// 9-axis hyperparameter grid: enumeration, run execution and resumable
// JSONL run records.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "seisbench/common.hpp"
#include "seisbench/patch.hpp"
#include "seisbench/trainer.hpp"

namespace seisbench {

// One point in the 9-axis training-configuration space.
struct HyperParams {
  std::string backend_label = "cpu";
  int workers = 1;
  ChannelMode channel_mode = ChannelMode::Grayscale;
  int batch = 128;
  std::int64_t dataset_size = 1000;
  int depth = 14;
  int bottleneck = 2;
  double lr = 0.001;
  int epochs = 40;

  void validate() const {
    if (workers < 1 || workers > 32)
      throw SpecError("HyperParams: workers must be in [1,32]");
    if (batch < 64 || batch > 512)
      throw SpecError("HyperParams: batch must be in [64,512]");
    if (dataset_size < batch)
      throw SpecError("HyperParams: dataset_size must be >= batch");
    if (depth < 2 || depth > 32)
      throw SpecError("HyperParams: depth must be in [2,32]");
    if (bottleneck != 1 && bottleneck != 2)
      throw SpecError("HyperParams: bottleneck must be 1 or 2");
    if (!(lr >= 0.001 && lr <= 0.5))
      throw SpecError("HyperParams: lr must be in [0.001,0.5]");
    if (epochs < 1) throw SpecError("HyperParams: epochs must be >= 1");
  }

  ordered_json to_json() const {
    ordered_json j;
    j["backend_label"] = backend_label;
    j["workers"] = workers;
    j["channel_mode"] = channel_mode_name(channel_mode);
    j["batch"] = batch;
    j["dataset_size"] = dataset_size;
    j["depth"] = depth;
    j["bottleneck"] = bottleneck;
    j["lr"] = lr;
    j["epochs"] = epochs;
    return j;
  }

  static HyperParams from_json(const ordered_json& j) {
    HyperParams hp;
    hp.backend_label = j.at("backend_label").get<std::string>();
    hp.workers = j.at("workers").get<int>();
    hp.channel_mode = channel_mode_from_name(j.at("channel_mode").get<std::string>());
    hp.batch = j.at("batch").get<int>();
    hp.dataset_size = j.at("dataset_size").get<std::int64_t>();
    hp.depth = j.at("depth").get<int>();
    hp.bottleneck = j.at("bottleneck").get<int>();
    hp.lr = j.at("lr").get<double>();
    hp.epochs = j.at("epochs").get<int>();
    return hp;
  }
};

struct SweepSpace {
  std::uint64_t seed = 0;
  std::vector<std::string> backend_label;
  std::vector<int> workers;
  std::vector<ChannelMode> channel_mode;
  std::vector<int> batch;
  std::vector<std::int64_t> dataset_size;
  std::vector<int> depth;
  std::vector<int> bottleneck;
  std::vector<double> lr;
  std::vector<int> epochs;
  // Optional explicit points, run after the grid enumeration.
  std::vector<HyperParams> points;
};

namespace detail {

template <typename V>
void require_axis(const std::vector<V>& axis, const char* name) {
  if (axis.empty())
    throw SpecError(std::string("sweep space: axis '") + name + "' is empty or missing");
}

}  // namespace detail

inline SweepSpace parse_space(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("sweep space: malformed JSON: ") + e.what());
  }
  SweepSpace s;
  try {
    s.seed = j.at("seed").get<std::uint64_t>();
  } catch (const std::exception&) {
    throw SpecError("sweep space: missing or invalid 'seed'");
  }
  if (!j.contains("axes") || !j["axes"].is_object())
    throw SpecError("sweep space: missing 'axes' object");
  const auto& ax = j["axes"];
  auto grab = [&](const char* name) -> const ordered_json& {
    if (!ax.contains(name))
      throw SpecError(std::string("sweep space: missing axis '") + name + "'");
    if (!ax[name].is_array())
      throw SpecError(std::string("sweep space: axis '") + name + "' must be an array");
    return ax[name];
  };
  for (const auto& v : grab("backend_label")) s.backend_label.push_back(v.get<std::string>());
  for (const auto& v : grab("workers")) s.workers.push_back(v.get<int>());
  for (const auto& v : grab("channel_mode"))
    s.channel_mode.push_back(channel_mode_from_name(v.get<std::string>()));
  for (const auto& v : grab("batch")) s.batch.push_back(v.get<int>());
  for (const auto& v : grab("dataset_size")) s.dataset_size.push_back(v.get<std::int64_t>());
  for (const auto& v : grab("depth")) s.depth.push_back(v.get<int>());
  for (const auto& v : grab("bottleneck")) s.bottleneck.push_back(v.get<int>());
  for (const auto& v : grab("lr")) s.lr.push_back(v.get<double>());
  for (const auto& v : grab("epochs")) s.epochs.push_back(v.get<int>());
  if (j.contains("points"))
    for (const auto& p : j["points"]) s.points.push_back(HyperParams::from_json(p));

  detail::require_axis(s.backend_label, "backend_label");
  detail::require_axis(s.workers, "workers");
  detail::require_axis(s.channel_mode, "channel_mode");
  detail::require_axis(s.batch, "batch");
  detail::require_axis(s.dataset_size, "dataset_size");
  detail::require_axis(s.depth, "depth");
  detail::require_axis(s.bottleneck, "bottleneck");
  detail::require_axis(s.lr, "lr");
  detail::require_axis(s.epochs, "epochs");
  auto check = [](bool ok, const char* axis) {
    if (!ok) throw SpecError(std::string("sweep space: value out of bounds on axis '") + axis + "'");
  };
  for (int w : s.workers) check(w >= 1 && w <= 32, "workers");
  for (int b : s.batch) check(b >= 64 && b <= 512, "batch");
  for (auto n : s.dataset_size) check(n >= 64, "dataset_size");
  for (int d : s.depth) check(d >= 2 && d <= 32, "depth");
  for (int b : s.bottleneck) check(b == 1 || b == 2, "bottleneck");
  for (double l : s.lr) check(l >= 0.001 && l <= 0.5, "lr");
  for (int e : s.epochs) check(e >= 1, "epochs");
  for (const auto& p : s.points) p.validate();
  return s;
}

inline SweepSpace parse_space_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open sweep space file: " + path);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_space(text);
}

// Full cartesian product, lexicographic in HyperParams field order with the
// last axis varying fastest. Explicit points follow the grid.
inline std::vector<HyperParams> enumerate_space(const SweepSpace& s) {
  std::vector<HyperParams> out;
  for (const auto& backend : s.backend_label)
    for (int workers : s.workers)
      for (ChannelMode mode : s.channel_mode)
        for (int batch : s.batch)
          for (std::int64_t dsize : s.dataset_size)
            for (int depth : s.depth)
              for (int bottleneck : s.bottleneck)
                for (double lr : s.lr)
                  for (int epochs : s.epochs) {
                    HyperParams hp;
                    hp.backend_label = backend;
                    hp.workers = workers;
                    hp.channel_mode = mode;
                    hp.batch = batch;
                    hp.dataset_size = dsize;
                    hp.depth = depth;
                    hp.bottleneck = bottleneck;
                    hp.lr = lr;
                    hp.epochs = epochs;
                    out.push_back(hp);
                  }
  for (const auto& p : s.points) out.push_back(p);
  return out;
}

// Stable 64-bit FNV-1a over the canonical serialization, avalanched with the
// run seed. Hex string, 16 chars.
inline std::string run_id(const HyperParams& hp, std::uint64_t seed) {
  std::string canon = hp.to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canon) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  h = avalanche64(h ^ avalanche64(seed));
  static const char* hex = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = hex[h & 0xf];
    h >>= 4;
  }
  return out;
}

enum class RunStatus { Ok, Diverged };

inline const char* run_status_name(RunStatus s) {
  return s == RunStatus::Ok ? "ok" : "diverged";
}

inline RunStatus run_status_from_name(const std::string& s) {
  if (s == "ok") return RunStatus::Ok;
  if (s == "diverged") return RunStatus::Diverged;
  throw DataError("unknown run status: " + s);
}

struct RunRecord {
  std::string id;
  HyperParams hp;
  std::uint64_t seed = 0;
  std::int64_t param_count = 0;
  RunStatus status = RunStatus::Ok;
  std::vector<EpochStats> epochs;
};

inline ordered_json run_record_to_json(const RunRecord& r) {
  ordered_json j;
  j["run_id"] = r.id;
  j["hp"] = r.hp.to_json();
  j["seed"] = r.seed;
  j["param_count"] = r.param_count;
  j["status"] = run_status_name(r.status);
  ordered_json eps = ordered_json::array();
  for (const EpochStats& e : r.epochs) {
    ordered_json je;
    je["epoch"] = e.epoch;
    je["loss"] = e.loss;
    je["samples_per_sec"] = e.samples_per_sec;
    je["wall_time_s"] = e.wall_time_s;
    ordered_json rp;
    rp["white_noise"] = e.ref_probs.white_noise;
    rp["coherent"] = e.ref_probs.coherent;
    rp["noncoherent"] = e.ref_probs.noncoherent;
    rp["saturated"] = e.ref_probs.saturated;
    je["ref_probs"] = rp;
    eps.push_back(je);
  }
  j["epochs"] = eps;
  return j;
}

inline std::string serialize_run_record(const RunRecord& r) {
  return run_record_to_json(r).dump();
}

inline RunRecord parse_run_record(const std::string& line) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const std::exception& e) {
    throw DataError(std::string("run record: malformed JSON: ") + e.what());
  }
  RunRecord r;
  r.id = j.at("run_id").get<std::string>();
  r.hp = HyperParams::from_json(j.at("hp"));
  r.seed = j.at("seed").get<std::uint64_t>();
  r.param_count = j.at("param_count").get<std::int64_t>();
  r.status = run_status_from_name(j.at("status").get<std::string>());
  for (const auto& je : j.at("epochs")) {
    EpochStats e;
    e.epoch = je.at("epoch").get<int>();
    e.loss = je.at("loss").get<double>();
    e.samples_per_sec = je.at("samples_per_sec").get<double>();
    e.wall_time_s = je.at("wall_time_s").get<double>();
    const auto& rp = je.at("ref_probs");
    e.ref_probs.white_noise = rp.at("white_noise").get<double>();
    e.ref_probs.coherent = rp.at("coherent").get<double>();
    e.ref_probs.noncoherent = rp.at("noncoherent").get<double>();
    e.ref_probs.saturated = rp.at("saturated").get<double>();
    r.epochs.push_back(e);
  }
  return r;
}

inline std::vector<RunRecord> read_run_records(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open records file: " + path);
  std::vector<RunRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(parse_run_record(line));
  }
  return out;
}

// Optional per-epoch checkpoint sink (run id, epoch, model).
template <typename T>
using CheckpointSink = std::function<void(const std::string&, int, Model<T>&)>;

// Execute one training run for a grid point. Dataset class balance is the
// shipped 50/50 default; dataset seed is the sweep master seed so datasets
// are shared across runs with equal (size, mode, seed).
template <typename T = float>
RunRecord train_run(const HyperParams& hp, const Dataset& dataset,
                    const ReferenceSet& refset, std::uint64_t run_seed,
                    const CheckpointSink<T>& sink = nullptr) {
  hp.validate();
  ArchSpec arch;
  arch.depth = hp.depth;
  arch.in_channels = hp.channel_mode == ChannelMode::Rgb ? 3 : 1;
  arch.bottleneck = hp.bottleneck;
  TrainConfig cfg;
  cfg.workers = hp.workers;
  cfg.batch = hp.batch;
  cfg.lr = hp.lr;
  cfg.epochs = hp.epochs;
  cfg.seed = run_seed;

  RunRecord rec;
  rec.hp = hp;
  rec.seed = run_seed;
  rec.id = run_id(hp, run_seed);
  rec.param_count = count_params(arch);
  ParallelTrainer<T> trainer(arch, cfg);
  for (int e = 0; e < hp.epochs; ++e) {
    EpochStats stats;
    if (!trainer.run_epoch(dataset, e, &refset, stats)) {
      rec.status = RunStatus::Diverged;
      break;
    }
    rec.epochs.push_back(stats);
    if (sink) sink(rec.id, e, trainer.model());
  }
  return rec;
}

struct SweepSummary {
  std::int64_t ok = 0;
  std::int64_t diverged = 0;
  std::int64_t skipped = 0;
};

// Sequential sweep with append-only JSONL persistence and resume support.
inline SweepSummary run_sweep(const SweepSpace& space, const std::string& out_path,
                              bool resume,
                              const std::function<void(std::int64_t, std::int64_t,
                                                       const RunRecord&)>& progress = nullptr) {
  std::set<std::string> done;
  if (resume && std::filesystem::exists(out_path)) {
    for (const RunRecord& r : read_run_records(out_path)) done.insert(r.id);
  }
  std::ofstream os(out_path, std::ios::app);
  if (!os) throw IoError("cannot open sweep output for append: " + out_path);

  std::vector<HyperParams> pointset = enumerate_space(space);
  SweepSummary summary;
  // Datasets shared across runs with equal (size, mode): keyed cache.
  std::map<std::pair<std::int64_t, int>, Dataset> cache;
  PatchSpec pspec;
  ReferenceSet ref_gray = build_reference_set(pspec, ChannelMode::Grayscale, space.seed);
  ReferenceSet ref_rgb = build_reference_set(pspec, ChannelMode::Rgb, space.seed);

  for (std::size_t i = 0; i < pointset.size(); ++i) {
    const HyperParams& hp = pointset[i];
    std::uint64_t run_seed = derive_seed(space.seed, SeedStream::SweepRun, i);
    std::string id = run_id(hp, run_seed);
    if (done.count(id)) {
      ++summary.skipped;
      continue;
    }
    auto key = std::make_pair(hp.dataset_size, static_cast<int>(hp.channel_mode));
    auto it = cache.find(key);
    if (it == cache.end())
      it = cache.emplace(key, build_dataset(hp.dataset_size, 0.5, pspec,
                                            hp.channel_mode, space.seed)).first;
    const ReferenceSet& ref =
        hp.channel_mode == ChannelMode::Rgb ? ref_rgb : ref_gray;
    RunRecord rec = train_run<float>(hp, it->second, ref, run_seed);
    if (rec.status == RunStatus::Ok) ++summary.ok;
    else ++summary.diverged;
    os << serialize_run_record(rec) << '\n';
    os.flush();
    if (!os) throw IoError("sweep output write failed: " + out_path);
    if (progress) progress(static_cast<std::int64_t>(i + 1),
                           static_cast<std::int64_t>(pointset.size()), rec);
  }
  return summary;
}

}  // namespace seisbench
