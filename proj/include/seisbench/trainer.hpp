// Synchronous data-parallel SGD over W in-process workers: ordered sharding,
// deterministic pairwise-tree gradient reduction, per-epoch throughput
// metering and the analytic scaling cost model.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

#include "seisbench/common.hpp"
#include "seisbench/patch.hpp"
#include "seisbench/resnet.hpp"

namespace seisbench {

struct TrainConfig {
  int workers = 1;
  int batch = 128;       // global batch size
  double lr = 0.001;
  double momentum = 0.0;
  int epochs = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (workers < 1) throw SpecError("TrainConfig: workers must be >= 1");
    if (batch < workers) throw SpecError("TrainConfig: batch must be >= workers");
    if (epochs < 1) throw SpecError("TrainConfig: epochs must be >= 1");
    if (!(lr > 0.0)) throw SpecError("TrainConfig: lr must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw SpecError("TrainConfig: momentum must be in [0,1)");
  }
};

struct RefProbs {
  double white_noise = 0.0;
  double coherent = 0.0;
  double noncoherent = 0.0;
  double saturated = 0.0;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;            // mean loss over the epoch
  double samples_per_sec = 0.0;
  double wall_time_s = 0.0;     // step loop only
  RefProbs ref_probs;
};

// Ordered partition of [0, n) into W contiguous shards, sizes differing by
// at most one (earlier shards take the remainder).
struct Shard {
  std::int64_t begin = 0;
  std::int64_t end = 0;
  std::int64_t size() const { return end - begin; }
};

inline std::vector<Shard> shard(std::int64_t n, int workers) {
  if (workers < 1) throw SpecError("shard: workers must be >= 1");
  if (n < workers) throw SpecError("shard: batch smaller than worker count");
  std::vector<Shard> out(workers);
  std::int64_t base = n / workers, rem = n % workers;
  std::int64_t pos = 0;
  for (int w = 0; w < workers; ++w) {
    std::int64_t sz = base + (w < rem ? 1 : 0);
    out[w] = {pos, pos + sz};
    pos += sz;
  }
  return out;
}

// Fixed-order pairwise tree combination: (0+1), (2+3), then pairs of pairs.
// Inputs are pre-weighted, so the reduction is a plain sum. Bit-deterministic
// for a fixed worker count.
template <typename T>
void tree_reduce_sum(std::vector<std::vector<std::vector<T>>>& sets) {
  if (sets.empty()) throw ShapeError("tree_reduce: no gradient sets");
  std::size_t active = sets.size();
  std::vector<std::size_t> idx(active);
  for (std::size_t i = 0; i < active; ++i) idx[i] = i;
  while (idx.size() > 1) {
    std::vector<std::size_t> next;
    for (std::size_t i = 0; i + 1 < idx.size(); i += 2) {
      auto& a = sets[idx[i]];
      auto& b = sets[idx[i + 1]];
      if (a.size() != b.size()) throw ShapeError("tree_reduce: set count mismatch");
      for (std::size_t t = 0; t < a.size(); ++t) {
        if (a[t].size() != b[t].size())
          throw ShapeError("tree_reduce: tensor shape mismatch");
        for (std::size_t j = 0; j < a[t].size(); ++j) a[t][j] += b[t][j];
      }
      next.push_back(idx[i]);
    }
    if (idx.size() % 2 == 1) next.push_back(idx.back());
    idx = std::move(next);
  }
  if (idx[0] != 0) sets[0] = std::move(sets[idx[0]]);
}

// Convenience wrapper matching the mean contract: inputs pre-weighted by
// shard fraction, output written into sets[0].
template <typename T>
const std::vector<std::vector<T>>& tree_reduce_mean(
    std::vector<std::vector<std::vector<T>>>& weighted_sets) {
  tree_reduce_sum(weighted_sets);
  return weighted_sets[0];
}

template <typename T>
RefProbs eval_reference_probs(Model<T>& m, const ReferenceSet& refset) {
  RefProbs rp;
  rp.white_noise = static_cast<double>(predict_usable(m, refset.images[0]));
  rp.coherent = static_cast<double>(predict_usable(m, refset.images[1]));
  rp.noncoherent = static_cast<double>(predict_usable(m, refset.images[2]));
  rp.saturated = static_cast<double>(predict_usable(m, refset.images[3]));
  return rp;
}

// Deterministic Fisher-Yates with the project RNG.
inline std::vector<std::int64_t> shuffled_indices(std::int64_t n, std::uint64_t seed) {
  std::vector<std::int64_t> idx(n);
  for (std::int64_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  for (std::int64_t i = n - 1; i > 0; --i) {
    std::int64_t j = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(idx[i], idx[j]);
  }
  return idx;
}

// Owns the canonical model, W worker replicas and the optimizer state for
// one training run. Parameters live on the canonical model; each step copies
// them to the replicas, reduces the weighted shard gradients in a fixed tree
// order and applies one canonical update.
template <typename T>
class ParallelTrainer {
 public:
  ParallelTrainer(const ArchSpec& arch, const TrainConfig& cfg)
      : cfg_(cfg), arch_(arch) {
    cfg.validate();
    arch.validate();
    model_ = build_model<T>(arch, cfg.seed);
    for (int w = 0; w < cfg.workers; ++w) {
      replicas_.push_back(build_model<T>(arch, cfg.seed));
      tapes_.emplace_back();
    }
  }

  Model<T>& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }

  // One synchronous epoch. Returns false if the run diverged (the epoch is
  // then not recorded by callers).
  bool run_epoch(const Dataset& data, int epoch_index, const ReferenceSet* refset,
                 EpochStats& out) {
    std::int64_t n = data.size();
    // Synthesis is outside the throughput boundary: materialize once, before
    // the timed step loop.
    if (static_cast<std::int64_t>(items_.size()) != n) {
      items_.clear();
      items_.reserve(n);
      for (std::int64_t i = 0; i < n; ++i) items_.push_back(data.item(i));
    }
    int batch = cfg_.batch;
    std::uint64_t shuffle_seed =
        derive_seed(cfg_.seed, SeedStream::Shuffle, static_cast<std::uint64_t>(epoch_index));
    std::vector<std::int64_t> order = shuffled_indices(n, shuffle_seed);

    double loss_sum = 0.0;
    bool diverged = false;
    auto t0 = std::chrono::steady_clock::now();
    std::int64_t steps = (n + batch - 1) / batch;
    for (std::int64_t s = 0; s < steps && !diverged; ++s) {
      std::int64_t lo = s * batch;
      std::int64_t hi = std::min<std::int64_t>(lo + batch, n);
      std::int64_t bn = hi - lo;
      int w_eff = static_cast<int>(std::min<std::int64_t>(cfg_.workers, bn));
      std::vector<Shard> shards = shard(bn, w_eff);

      std::vector<double> shard_loss(w_eff, 0.0);
      std::vector<std::vector<std::vector<T>>> grad_sets(w_eff);
      std::vector<std::vector<std::vector<T>>> state_sets(w_eff);

      auto worker_fn = [&](int w) {
        Model<T>& rep = replicas_[w];
        copy_weights(rep, model_);
        zero_grads(rep);
        std::int64_t sz = shards[w].size();
        std::vector<const ImageTensor*> imgs(sz);
        std::vector<int> labels(sz);
        for (std::int64_t i = 0; i < sz; ++i) {
          const LabeledImage& it = items_[order[lo + shards[w].begin + i]];
          imgs[i] = &it.image;
          labels[i] = it.label;
        }
        Tensor4<T> x = images_to_batch<T>(imgs);
        Tensor4<T> logits = forward(rep, x, RunMode::Train, &tapes_[w]);
        auto head = nn::binary_head(logits, labels);
        backward(rep, tapes_[w], head.dlogits);
        shard_loss[w] = static_cast<double>(head.mean_loss);
        // Pre-weight by the shard's sample fraction of the global batch.
        T weight = static_cast<T>(static_cast<double>(sz) / static_cast<double>(bn));
        auto params = model_params(rep);
        grad_sets[w].resize(params.size());
        for (std::size_t t = 0; t < params.size(); ++t) {
          grad_sets[w][t].resize(params[t].size);
          for (std::size_t j = 0; j < params[t].size; ++j)
            grad_sets[w][t][j] = params[t].grad[j] * weight;
        }
        auto state = model_state(rep);
        state_sets[w].resize(state.size());
        for (std::size_t t = 0; t < state.size(); ++t) {
          state_sets[w][t].resize(state[t].size);
          for (std::size_t j = 0; j < state[t].size; ++j)
            state_sets[w][t][j] = state[t].data[j] * weight;
        }
      };

      if (w_eff == 1) {
        worker_fn(0);
      } else {
        std::vector<std::thread> threads;
        for (int w = 1; w < w_eff; ++w) threads.emplace_back(worker_fn, w);
        worker_fn(0);
        for (auto& t : threads) t.join();  // barrier before reduction
      }

      const auto& grads = tree_reduce_mean(grad_sets);
      double step_loss = 0.0;
      for (int w = 0; w < w_eff; ++w)
        step_loss += shard_loss[w] * static_cast<double>(shards[w].size()) /
                     static_cast<double>(bn);
      if (!std::isfinite(step_loss)) {
        diverged = true;
        break;
      }
      auto params = model_params(model_);
      for (std::size_t t = 0; t < params.size(); ++t)
        std::copy(grads[t].begin(), grads[t].end(), params[t].grad);
      try {
        sgd_step(params, sgd_, static_cast<T>(cfg_.lr), static_cast<T>(cfg_.momentum));
      } catch (const NumericError&) {
        diverged = true;
        break;
      }
      // Weighted tree mean of per-worker running statistics.
      if (!state_sets.empty() && !state_sets[0].empty()) {
        const auto& stats = tree_reduce_mean(state_sets);
        auto state = model_state(model_);
        for (std::size_t t = 0; t < state.size(); ++t)
          std::copy(stats[t].begin(), stats[t].end(), state[t].data);
      }
      loss_sum += step_loss * static_cast<double>(bn);
    }
    auto t1 = std::chrono::steady_clock::now();
    if (diverged) return false;

    out.epoch = epoch_index;
    out.loss = loss_sum / static_cast<double>(n);
    if (!std::isfinite(out.loss)) return false;
    out.wall_time_s = std::chrono::duration<double>(t1 - t0).count();
    if (out.wall_time_s <= 0.0) out.wall_time_s = 1e-9;
    out.samples_per_sec = static_cast<double>(n) / out.wall_time_s;
    if (refset) out.ref_probs = eval_reference_probs(model_, *refset);
    return true;
  }

 private:
  TrainConfig cfg_;
  ArchSpec arch_;
  Model<T> model_;
  std::vector<Model<T>> replicas_;
  std::vector<Tape<T>> tapes_;
  SgdState<T> sgd_;
  std::vector<LabeledImage> items_;
};

// ---- Analytic scaling cost model ------------------------------------------

struct ScalingCostModel {
  double c_f = 1e-3;  // seconds per sample of per-worker compute
  double c_c = 4e-2;  // seconds per reduction level
  double c_0 = 5e-3;  // fixed seconds per step
  double s_w = 0.5;   // per-worker per-epoch setup seconds

  void validate() const {
    if (!(c_f > 0.0)) throw SpecError("ScalingCostModel: c_f must be > 0");
    if (c_c < 0.0 || c_0 < 0.0 || s_w < 0.0)
      throw SpecError("ScalingCostModel: constants must be >= 0");
  }

  ordered_json to_json() const {
    ordered_json j;
    j["c_f"] = c_f;
    j["c_c"] = c_c;
    j["c_0"] = c_0;
    j["s_w"] = s_w;
    return j;
  }

  static ScalingCostModel from_json(const ordered_json& j) {
    ScalingCostModel m;
    m.c_f = j.at("c_f").get<double>();
    m.c_c = j.at("c_c").get<double>();
    m.c_0 = j.at("c_0").get<double>();
    m.s_w = j.at("s_w").get<double>();
    m.validate();
    return m;
  }
};

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

inline int ceil_log2(int w) {
  int levels = 0;
  int span = 1;
  while (span < w) {
    span *= 2;
    ++levels;
  }
  return levels;
}

// T_epoch = s_w*W + ceil(N/batch) * (c_f*ceil(batch/W) + c_c*ceil(log2 W) + c_0)
// returns N / T_epoch in samples/second.
inline double model_throughput(const ScalingCostModel& m, int workers,
                               std::int64_t n, std::int64_t batch) {
  m.validate();
  if (workers < 1 || batch < workers || n < batch)
    throw SpecError("model_throughput: need W >= 1 and N >= batch >= W");
  double steps = static_cast<double>(ceil_div(n, batch));
  double per_step = m.c_f * static_cast<double>(ceil_div(batch, workers)) +
                    m.c_c * static_cast<double>(ceil_log2(workers)) + m.c_0;
  double t_epoch = m.s_w * static_cast<double>(workers) + steps * per_step;
  return static_cast<double>(n) / t_epoch;
}

inline double speedup(double t_small, double t_large) {
  if (!(t_small > 0.0) || !(t_large > 0.0))
    throw SpecError("speedup: throughputs must be positive");
  return t_large / t_small;
}

}  // namespace seisbench
