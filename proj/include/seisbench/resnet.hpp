// Configurable residual classifier: depth (hidden conv layers), input channel
// mode and bottleneck head width are the tunable axes. CIFAR-style basic
// blocks over up to 3 stages with filter doubling and stride-2 downsampling.
#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "seisbench/common.hpp"
#include "seisbench/nn.hpp"
#include "seisbench/patch.hpp"
#include "seisbench/tensor.hpp"

namespace seisbench {

struct ArchSpec {
  int depth = 14;        // hidden conv layers, 2..32
  int in_channels = 1;   // 1 | 3
  int bottleneck = 2;    // head width, 1 | 2
  int base_filters = 16;
  bool use_norm = true;  // switch for exact data-parallel equivalence checks

  void validate() const {
    if (depth < 2 || depth > 32)
      throw SpecError("ArchSpec: depth must be in [2,32]");
    if (in_channels != 1 && in_channels != 3)
      throw SpecError("ArchSpec: in_channels must be 1 or 3");
    if (bottleneck != 1 && bottleneck != 2)
      throw SpecError("ArchSpec: bottleneck must be 1 or 2");
    if (base_filters < 1) throw SpecError("ArchSpec: base_filters must be >= 1");
  }

  ordered_json to_json() const {
    ordered_json j;
    j["depth"] = depth;
    j["in_channels"] = in_channels;
    j["bottleneck"] = bottleneck;
    j["base_filters"] = base_filters;
    j["use_norm"] = use_norm;
    return j;
  }

  static ArchSpec from_json(const ordered_json& j) {
    ArchSpec a;
    a.depth = j.at("depth").get<int>();
    a.in_channels = j.at("in_channels").get<int>();
    a.bottleneck = j.at("bottleneck").get<int>();
    a.base_filters = j.value("base_filters", 16);
    a.use_norm = j.value("use_norm", true);
    a.validate();
    return a;
  }
};

// Construction plan shared by the builder and the closed-form param counter.
struct BlockPlan {
  int in_filters = 0;
  int out_filters = 0;
  int stride = 1;
  bool projection = false;
};

struct ModelPlan {
  std::vector<BlockPlan> blocks;
  bool extra_conv = false;  // appended plain conv when depth is odd
  int last_filters = 0;
};

inline ModelPlan plan_model(const ArchSpec& arch) {
  arch.validate();
  ModelPlan plan;
  int nb = arch.depth / 2;
  int n_stages = std::min(3, nb);
  // Distribute blocks evenly, remainder to the later (cheaper) stages.
  std::vector<int> per_stage(n_stages, nb / n_stages);
  for (int r = 0; r < nb % n_stages; ++r) per_stage[n_stages - 1 - r] += 1;
  int filters = arch.base_filters;
  int prev = arch.base_filters;  // stem output
  for (int s = 0; s < n_stages; ++s) {
    for (int b = 0; b < per_stage[s]; ++b) {
      BlockPlan bp;
      bp.in_filters = prev;
      bp.out_filters = filters;
      bp.stride = (s > 0 && b == 0) ? 2 : 1;
      bp.projection = bp.stride != 1 || bp.in_filters != bp.out_filters;
      plan.blocks.push_back(bp);
      prev = filters;
    }
    filters *= 2;
  }
  plan.extra_conv = (arch.depth % 2) == 1;
  plan.last_filters = prev;
  return plan;
}

namespace rn {

// One basic block: conv-bn-relu-conv-bn + shortcut, relu.
template <typename T>
struct Block {
  nn::Conv2d<T> c1, c2;
  nn::BatchNorm<T> b1, b2;
  std::optional<nn::Conv2d<T>> proj;
  std::optional<nn::BatchNorm<T>> bproj;
  bool use_norm = true;
};

template <typename T>
struct BlockCache {
  nn::ConvCache<T> c1, c2;
  nn::BNCache<T> b1, b2;
  nn::ConvCache<T> proj;
  nn::BNCache<T> bproj;
  nn::ReluCache<T> r1, r2;
};

}  // namespace rn

template <typename T>
struct Model {
  ArchSpec arch;
  ModelPlan plan;
  nn::Conv2d<T> stem;
  nn::BatchNorm<T> stem_bn;
  std::vector<rn::Block<T>> blocks;
  std::optional<nn::Conv2d<T>> extra;
  std::optional<nn::BatchNorm<T>> extra_bn;
  nn::Linear<T> head;
};

// Forward tape: per-layer caches in execution order, consumed exactly once.
template <typename T>
struct Tape {
  nn::ConvCache<T> stem;
  nn::BNCache<T> stem_bn;
  nn::ReluCache<T> stem_relu;
  std::vector<rn::BlockCache<T>> blocks;
  nn::ConvCache<T> extra;
  nn::BNCache<T> extra_bn;
  nn::ReluCache<T> extra_relu;
  nn::GapCache<T> gap;
  nn::LinearCache<T> head;
  bool consumed = false;
};

template <typename T>
Model<T> build_model(const ArchSpec& arch, std::uint64_t seed) {
  arch.validate();
  Model<T> m;
  m.arch = arch;
  m.plan = plan_model(arch);
  Rng rng(derive_seed(seed, SeedStream::ModelInit, 0));
  m.stem = nn::Conv2d<T>(arch.in_channels, arch.base_filters, 3, 1, 1);
  m.stem.init(rng);
  if (arch.use_norm) m.stem_bn = nn::BatchNorm<T>(arch.base_filters);
  for (const BlockPlan& bp : m.plan.blocks) {
    rn::Block<T> blk;
    blk.use_norm = arch.use_norm;
    blk.c1 = nn::Conv2d<T>(bp.in_filters, bp.out_filters, 3, bp.stride, 1);
    blk.c1.init(rng);
    blk.c2 = nn::Conv2d<T>(bp.out_filters, bp.out_filters, 3, 1, 1);
    blk.c2.init(rng);
    if (arch.use_norm) {
      blk.b1 = nn::BatchNorm<T>(bp.out_filters);
      blk.b2 = nn::BatchNorm<T>(bp.out_filters);
    }
    if (bp.projection) {
      blk.proj.emplace(bp.in_filters, bp.out_filters, 1, bp.stride, 0);
      blk.proj->init(rng);
      if (arch.use_norm) blk.bproj.emplace(bp.out_filters);
    }
    m.blocks.push_back(std::move(blk));
  }
  if (m.plan.extra_conv) {
    m.extra.emplace(m.plan.last_filters, m.plan.last_filters, 3, 1, 1);
    m.extra->init(rng);
    if (arch.use_norm) m.extra_bn.emplace(m.plan.last_filters);
  }
  m.head = nn::Linear<T>(m.plan.last_filters, arch.bottleneck);
  m.head.init(rng);
  return m;
}

// Closed-form parameter count; matches the built model's tally.
inline std::int64_t count_params(const ArchSpec& arch) {
  ModelPlan plan = plan_model(arch);
  auto conv = [](int in, int out, int k) {
    return static_cast<std::int64_t>(out) * in * k * k + out;
  };
  auto bn = [&](int c) { return arch.use_norm ? 2LL * c : 0LL; };
  std::int64_t total = conv(arch.in_channels, arch.base_filters, 3) + bn(arch.base_filters);
  for (const BlockPlan& bp : plan.blocks) {
    total += conv(bp.in_filters, bp.out_filters, 3) + bn(bp.out_filters);
    total += conv(bp.out_filters, bp.out_filters, 3) + bn(bp.out_filters);
    if (bp.projection) total += conv(bp.in_filters, bp.out_filters, 1) + bn(bp.out_filters);
  }
  if (plan.extra_conv)
    total += conv(plan.last_filters, plan.last_filters, 3) + bn(plan.last_filters);
  total += static_cast<std::int64_t>(arch.bottleneck) * plan.last_filters + arch.bottleneck;
  return total;
}

// Hidden conv layers as counted by the depth axis (shortcut projections and
// the stem are plumbing, not hidden layers).
template <typename T>
int hidden_layer_count(const Model<T>& m) {
  int n = static_cast<int>(m.blocks.size()) * 2;
  if (m.extra) n += 1;
  return n;
}

// Parameter refs in fixed serialization order.
template <typename T>
std::vector<ParamRef<T>> model_params(Model<T>& m) {
  std::vector<ParamRef<T>> out;
  auto add_conv = [&](nn::Conv2d<T>& c) {
    out.push_back({c.w.v.data(), c.gw.v.data(), c.w.size()});
    out.push_back({c.b.data(), c.gb.data(), c.b.size()});
  };
  auto add_bn = [&](nn::BatchNorm<T>& b) {
    out.push_back({b.gamma.data(), b.ggamma.data(), b.gamma.size()});
    out.push_back({b.beta.data(), b.gbeta.data(), b.beta.size()});
  };
  add_conv(m.stem);
  if (m.arch.use_norm) add_bn(m.stem_bn);
  for (auto& blk : m.blocks) {
    add_conv(blk.c1);
    if (blk.use_norm) add_bn(blk.b1);
    add_conv(blk.c2);
    if (blk.use_norm) add_bn(blk.b2);
    if (blk.proj) {
      add_conv(*blk.proj);
      if (blk.bproj) add_bn(*blk.bproj);
    }
  }
  if (m.extra) {
    add_conv(*m.extra);
    if (m.extra_bn) add_bn(*m.extra_bn);
  }
  out.push_back({m.head.w.data(), m.head.gw.data(), m.head.w.size()});
  out.push_back({m.head.b.data(), m.head.gb.data(), m.head.b.size()});
  return out;
}

// Running-statistics refs, in the same layer order as model_params.
template <typename T>
std::vector<StateRef<T>> model_state(Model<T>& m) {
  std::vector<StateRef<T>> out;
  auto add_bn = [&](nn::BatchNorm<T>& b) {
    out.push_back({b.run_mean.data(), b.run_mean.size()});
    out.push_back({b.run_var.data(), b.run_var.size()});
  };
  if (!m.arch.use_norm) return out;
  add_bn(m.stem_bn);
  for (auto& blk : m.blocks) {
    add_bn(blk.b1);
    add_bn(blk.b2);
    if (blk.bproj) add_bn(*blk.bproj);
  }
  if (m.extra_bn) add_bn(*m.extra_bn);
  return out;
}

template <typename T>
void zero_grads(Model<T>& m) {
  for (auto& p : model_params(m)) std::fill(p.grad, p.grad + p.size, T(0));
}

// Copy parameters and running stats from src to dst (same architecture).
template <typename T>
void copy_weights(Model<T>& dst, Model<T>& src) {
  auto dp = model_params(dst);
  auto sp = model_params(src);
  if (dp.size() != sp.size()) throw ShapeError("copy_weights: arch mismatch");
  for (std::size_t i = 0; i < dp.size(); ++i) {
    if (dp[i].size != sp[i].size) throw ShapeError("copy_weights: size mismatch");
    std::copy(sp[i].data, sp[i].data + sp[i].size, dp[i].data);
  }
  auto ds = model_state(dst);
  auto ss = model_state(src);
  for (std::size_t i = 0; i < ds.size(); ++i)
    std::copy(ss[i].data, ss[i].data + ss[i].size, ds[i].data);
}

template <typename T>
Tensor4<T> forward(Model<T>& m, const Tensor4<T>& x, RunMode mode,
                   Tape<T>* tape = nullptr) {
  if (x.c != m.arch.in_channels)
    throw ShapeError("forward: batch has " + std::to_string(x.c) +
                     " channels, model expects " + std::to_string(m.arch.in_channels));
  if (tape) {
    tape->blocks.assign(m.blocks.size(), rn::BlockCache<T>{});
    tape->consumed = false;
  }
  Tensor4<T> h = m.stem.forward(x, tape ? &tape->stem : nullptr);
  if (m.arch.use_norm)
    h = m.stem_bn.forward(h, mode, tape ? &tape->stem_bn : nullptr);
  h = nn::relu(h, tape ? &tape->stem_relu : nullptr);
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    rn::Block<T>& blk = m.blocks[i];
    rn::BlockCache<T>* bc = tape ? &tape->blocks[i] : nullptr;
    Tensor4<T> shortcut;
    if (blk.proj) {
      shortcut = blk.proj->forward(h, bc ? &bc->proj : nullptr);
      if (blk.bproj)
        shortcut = blk.bproj->forward(shortcut, mode, bc ? &bc->bproj : nullptr);
    } else {
      shortcut = h;
    }
    Tensor4<T> t = blk.c1.forward(h, bc ? &bc->c1 : nullptr);
    if (blk.use_norm) t = blk.b1.forward(t, mode, bc ? &bc->b1 : nullptr);
    t = nn::relu(t, bc ? &bc->r1 : nullptr);
    t = blk.c2.forward(t, bc ? &bc->c2 : nullptr);
    if (blk.use_norm) t = blk.b2.forward(t, mode, bc ? &bc->b2 : nullptr);
    if (!t.same_shape(shortcut)) throw ShapeError("block: shortcut shape mismatch");
    for (std::size_t j = 0; j < t.v.size(); ++j) t.v[j] += shortcut.v[j];
    h = nn::relu(t, bc ? &bc->r2 : nullptr);
  }
  if (m.extra) {
    h = m.extra->forward(h, tape ? &tape->extra : nullptr);
    if (m.extra_bn)
      h = m.extra_bn->forward(h, mode, tape ? &tape->extra_bn : nullptr);
    h = nn::relu(h, tape ? &tape->extra_relu : nullptr);
  }
  h = nn::global_avg_pool(h, tape ? &tape->gap : nullptr);
  return m.head.forward(h, tape ? &tape->head : nullptr);
}

// Reverse traversal; accumulates parameter gradients, returns dL/dinput.
template <typename T>
Tensor4<T> backward(Model<T>& m, Tape<T>& tape, const Tensor4<T>& dlogits) {
  if (tape.consumed) throw StateError("backward: tape already consumed");
  tape.consumed = true;
  Tensor4<T> d = m.head.backward(dlogits, tape.head);
  d = nn::global_avg_pool_backward(d, tape.gap);
  if (m.extra) {
    d = nn::relu_backward(d, tape.extra_relu);
    if (m.extra_bn) d = m.extra_bn->backward(d, tape.extra_bn);
    d = m.extra->backward(d, tape.extra);
  }
  for (std::size_t ri = m.blocks.size(); ri-- > 0;) {
    rn::Block<T>& blk = m.blocks[ri];
    rn::BlockCache<T>& bc = tape.blocks[ri];
    d = nn::relu_backward(d, bc.r2);
    // d now feeds both the residual branch and the shortcut.
    Tensor4<T> d_branch = d;
    if (blk.use_norm) d_branch = blk.b2.backward(d_branch, bc.b2);
    d_branch = blk.c2.backward(d_branch, bc.c2);
    d_branch = nn::relu_backward(d_branch, bc.r1);
    if (blk.use_norm) d_branch = blk.b1.backward(d_branch, bc.b1);
    d_branch = blk.c1.backward(d_branch, bc.c1);
    Tensor4<T> d_short;
    if (blk.proj) {
      Tensor4<T> t = d;
      if (blk.bproj) t = blk.bproj->backward(t, bc.bproj);
      d_short = blk.proj->backward(t, bc.proj);
    } else {
      d_short = d;
    }
    d = std::move(d_branch);
    for (std::size_t j = 0; j < d.v.size(); ++j) d.v[j] += d_short.v[j];
  }
  d = nn::relu_backward(d, tape.stem_relu);
  if (m.arch.use_norm) d = m.stem_bn.backward(d, tape.stem_bn);
  return m.stem.backward(d, tape.stem);
}

template <typename T>
Tensor4<T> image_to_tensor(const ImageTensor& img) {
  Tensor4<T> x(1, img.channels, img.height, img.width);
  for (std::size_t i = 0; i < img.values.size(); ++i)
    x.v[i] = static_cast<T>(img.values[i]);
  return x;
}

template <typename T>
Tensor4<T> images_to_batch(const std::vector<const ImageTensor*>& imgs) {
  if (imgs.empty()) throw ShapeError("images_to_batch: empty batch");
  const ImageTensor& first = *imgs[0];
  Tensor4<T> x(static_cast<int>(imgs.size()), first.channels, first.height, first.width);
  std::size_t plane = first.values.size();
  for (std::size_t n = 0; n < imgs.size(); ++n) {
    if (imgs[n]->values.size() != plane || imgs[n]->channels != first.channels)
      throw ShapeError("images_to_batch: inhomogeneous batch");
    for (std::size_t i = 0; i < plane; ++i)
      x.v[n * plane + i] = static_cast<T>(imgs[n]->values[i]);
  }
  return x;
}

// Probability of usable (coherent) energy for one image, eval mode.
template <typename T>
T predict_usable(Model<T>& m, const ImageTensor& img) {
  Tensor4<T> x = image_to_tensor<T>(img);
  Tensor4<T> logits = forward(m, x, RunMode::Eval);
  if (m.arch.bottleneck == 2)
    return nn::softmax_ce(logits.at(0, 0, 0, 0), logits.at(0, 1, 0, 0), 1).p_usable;
  return nn::sigmoid_bce(logits.at(0, 0, 0, 0), 1).p_usable;
}

// ---- Checkpoints ----------------------------------------------------------
// One-line JSON header, then params and running stats as little-endian f32
// blobs in model_params/model_state order.

template <typename T>
void save_checkpoint(std::ostream& os, Model<T>& m, std::uint64_t seed, int epoch) {
  auto params = model_params(m);
  auto state = model_state(m);
  std::size_t np = 0, ns = 0;
  for (auto& p : params) np += p.size;
  for (auto& s : state) ns += s.size;
  ordered_json hdr;
  hdr["arch"] = m.arch.to_json();
  hdr["seed"] = seed;
  hdr["epoch"] = epoch;
  hdr["param_count"] = np;
  hdr["state_count"] = ns;
  os << hdr.dump() << '\n';
  auto write_block = [&](const T* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      float f = static_cast<float>(data[i]);
      os.write(reinterpret_cast<const char*>(&f), sizeof(float));
    }
  };
  for (auto& p : params) write_block(p.data, p.size);
  for (auto& s : state) write_block(s.data, s.size);
  if (!os) throw IoError("save_checkpoint: stream write failed");
}

template <typename T>
void save_checkpoint_file(const std::string& path, Model<T>& m,
                          std::uint64_t seed, int epoch) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save_checkpoint: cannot open " + path);
  save_checkpoint(os, m, seed, epoch);
}

template <typename T>
struct Checkpoint {
  Model<T> model;
  std::uint64_t seed = 0;
  int epoch = 0;
};

template <typename T>
Checkpoint<T> load_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("load_checkpoint: missing header");
  ordered_json hdr;
  try {
    hdr = ordered_json::parse(line);
  } catch (const std::exception& e) {
    throw DataError(std::string("load_checkpoint: bad header: ") + e.what());
  }
  Checkpoint<T> ck;
  ck.seed = hdr.at("seed").get<std::uint64_t>();
  ck.epoch = hdr.at("epoch").get<int>();
  ck.model = build_model<T>(ArchSpec::from_json(hdr.at("arch")), ck.seed);
  auto params = model_params(ck.model);
  auto state = model_state(ck.model);
  auto read_block = [&](T* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      is.read(reinterpret_cast<char*>(&f), sizeof(float));
      data[i] = static_cast<T>(f);
    }
  };
  for (auto& p : params) read_block(p.data, p.size);
  for (auto& s : state) read_block(s.data, s.size);
  if (!is) throw DataError("load_checkpoint: truncated payload");
  return ck;
}

template <typename T>
Checkpoint<T> load_checkpoint_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_checkpoint: cannot open " + path);
  return load_checkpoint<T>(is);
}

}  // namespace seisbench
