// Synthetic DAS-like patch generation: the four reference signal types,
// normalization, channel encoding, dataset assembly and patch file I/O.
#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "seisbench/common.hpp"
#include "seisbench/tensor.hpp"

namespace seisbench {

using ordered_json = nlohmann::ordered_json;

struct PatchSpec {
  int n_time = 64;   // time samples (rows)
  int n_chan = 64;   // fiber channels (columns)
  double dt = 0.002; // seconds per sample
  double dx = 2.0;   // meters per channel

  void validate() const {
    if (n_time < 8 || n_chan < 8)
      throw SpecError("PatchSpec: n_time and n_chan must be >= 8");
    if (dt <= 0.0 || dx <= 0.0)
      throw SpecError("PatchSpec: dt and dx must be positive");
  }
};

enum class SignalType : int {
  WhiteNoise = 0,
  CoherentWaves = 1,
  NonCoherentWaves = 2,
  Saturated = 3,
};

inline constexpr std::array<SignalType, 4> kSignalTypes = {
    SignalType::WhiteNoise, SignalType::CoherentWaves,
    SignalType::NonCoherentWaves, SignalType::Saturated};

inline const char* signal_type_name(SignalType t) {
  switch (t) {
    case SignalType::WhiteNoise: return "white_noise";
    case SignalType::CoherentWaves: return "coherent";
    case SignalType::NonCoherentWaves: return "noncoherent";
    case SignalType::Saturated: return "saturated";
  }
  throw SpecError("unknown signal type");
}

inline SignalType signal_type_from_name(const std::string& s) {
  for (SignalType t : kSignalTypes)
    if (s == signal_type_name(t)) return t;
  throw SpecError("unknown signal type name: " + s);
}

// One linear-moveout Ricker event. velocity is channels per time sample;
// arrival(c) = onset + (c - origin_chan) / velocity.
struct CoherentEventParams {
  double amplitude = 1.0;
  double velocity = 1.0;
  double origin_chan = 0.0;
  double onset = 0.0;
  double wavelet_freq = 0.08;  // cycles per time sample

  void validate() const {
    if (amplitude <= 0.0) throw SpecError("event amplitude must be > 0");
    if (velocity == 0.0) throw SpecError("event velocity must be nonzero");
    if (wavelet_freq <= 0.0 || wavelet_freq >= 0.5)
      throw SpecError("wavelet_freq must be in (0, 0.5)");
  }

  double arrival(int chan) const {
    return onset + (static_cast<double>(chan) - origin_chan) / velocity;
  }
};

struct Patch {
  PatchSpec spec;
  std::vector<float> values;  // row-major (n_time x n_chan)
  std::optional<SignalType> label;

  // Generation metadata, kept so invariants (opposite velocity signs,
  // clip fraction) are assertable after the fact.
  std::vector<CoherentEventParams> events;
  float clip_value = 0.0f;  // > 0 only for saturated patches
  double noise_sigma = 0.0;

  float& at(int t, int c) { return values[static_cast<std::size_t>(t) * spec.n_chan + c]; }
  float at(int t, int c) const { return values[static_cast<std::size_t>(t) * spec.n_chan + c]; }
};

// Zero-phase Ricker wavelet sampled at tau = pi * f * t_offset_samples.
inline double ricker(double tau) {
  double t2 = tau * tau;
  return (1.0 - 2.0 * t2) * std::exp(-t2);
}

constexpr double kPi = 3.14159265358979323846;

namespace detail {

inline void add_event(std::vector<double>& field, const PatchSpec& spec,
                      const CoherentEventParams& ev) {
  for (int c = 0; c < spec.n_chan; ++c) {
    double arr = ev.arrival(c);
    for (int t = 0; t < spec.n_time; ++t) {
      double tau = kPi * ev.wavelet_freq * (static_cast<double>(t) - arr);
      if (tau > 6.0 || tau < -6.0) continue;
      field[static_cast<std::size_t>(t) * spec.n_chan + c] +=
          ev.amplitude * ricker(tau);
    }
  }
}

inline void add_noise(std::vector<double>& field, Rng& rng, double sigma) {
  for (double& x : field) x += sigma * rng.gaussian();
}

inline std::vector<float> to_f32(const std::vector<double>& field) {
  std::vector<float> out(field.size());
  for (std::size_t i = 0; i < field.size(); ++i)
    out[i] = static_cast<float>(field[i]);
  return out;
}

}  // namespace detail

// Event band membership: within one lobe half-width of any event arrival.
inline bool in_event_band(const Patch& p, int t, int c) {
  for (const auto& ev : p.events) {
    double half_width = 1.0 / (kPi * ev.wavelet_freq);
    if (std::abs(static_cast<double>(t) - ev.arrival(c)) <= half_width)
      return true;
  }
  return false;
}

// Fraction of event-band samples sitting exactly at the clip bound.
inline double clipped_band_fraction(const Patch& p) {
  if (p.clip_value <= 0.0f) return 0.0;
  std::size_t band = 0, clipped = 0;
  for (int t = 0; t < p.spec.n_time; ++t)
    for (int c = 0; c < p.spec.n_chan; ++c) {
      if (!in_event_band(p, t, c)) continue;
      ++band;
      float v = p.at(t, c);
      if (v == p.clip_value || v == -p.clip_value) ++clipped;
    }
  if (band == 0) return 0.0;
  return static_cast<double>(clipped) / static_cast<double>(band);
}

namespace detail {

inline Patch gen_white_noise(const PatchSpec& spec, Rng& rng) {
  Patch p;
  p.spec = spec;
  p.noise_sigma = 1.0;
  std::vector<double> field(static_cast<std::size_t>(spec.n_time) * spec.n_chan, 0.0);
  add_noise(field, rng, 1.0);
  p.values = to_f32(field);
  return p;
}

inline Patch gen_coherent(const PatchSpec& spec, Rng& rng) {
  Patch p;
  p.spec = spec;
  p.noise_sigma = 0.05;
  std::vector<double> field(static_cast<std::size_t>(spec.n_time) * spec.n_chan, 0.0);
  int n_events = 1 + static_cast<int>(rng.below(3));
  double sign = rng.uniform() < 0.5 ? 1.0 : -1.0;
  for (int i = 0; i < n_events; ++i) {
    CoherentEventParams ev;
    ev.amplitude = rng.uniform(1.0, 1.6);  // >= 5x noise sigma by construction
    ev.velocity = sign * rng.uniform(0.5, 2.0);
    ev.origin_chan = rng.uniform(0.0, spec.n_chan - 1.0);
    ev.onset = rng.uniform(0.2, 0.8) * spec.n_time;
    ev.wavelet_freq = rng.uniform(0.05, 0.12);
    ev.validate();
    add_event(field, spec, ev);
    p.events.push_back(ev);
  }
  add_noise(field, rng, p.noise_sigma);
  p.values = to_f32(field);
  return p;
}

inline Patch gen_noncoherent(const PatchSpec& spec, Rng& rng) {
  Patch p;
  p.spec = spec;
  p.noise_sigma = 0.2;
  std::vector<double> field(static_cast<std::size_t>(spec.n_time) * spec.n_chan, 0.0);
  int n_events = 3 + static_cast<int>(rng.below(3));
  for (int i = 0; i < n_events; ++i) {
    CoherentEventParams ev;
    ev.amplitude = rng.uniform(0.8, 1.5);
    // First two events get opposite signs so crossing patterns are certain.
    double sign = (i == 0) ? 1.0 : (i == 1) ? -1.0 : (rng.uniform() < 0.5 ? 1.0 : -1.0);
    ev.velocity = sign * rng.uniform(0.5, 2.0);
    ev.origin_chan = rng.uniform(0.0, spec.n_chan - 1.0);
    ev.onset = rng.uniform(0.15, 0.85) * spec.n_time;
    ev.wavelet_freq = rng.uniform(0.05, 0.12);
    ev.validate();
    add_event(field, spec, ev);
    p.events.push_back(ev);
  }
  add_noise(field, rng, p.noise_sigma);
  p.values = to_f32(field);
  return p;
}

inline Patch gen_saturated_attempt(const PatchSpec& spec, Rng& rng) {
  Patch p;
  p.spec = spec;
  p.noise_sigma = 0.05;
  std::vector<double> field(static_cast<std::size_t>(spec.n_time) * spec.n_chan, 0.0);
  // Two broad, well separated, high-amplitude events with near-flat moveout.
  double sign = rng.uniform() < 0.5 ? 1.0 : -1.0;
  const double onset_frac[2] = {0.3, 0.7};
  for (int i = 0; i < 2; ++i) {
    CoherentEventParams ev;
    ev.amplitude = 10.0 * rng.uniform(0.95, 1.05);
    ev.velocity = sign * rng.uniform(6.0, 10.0);
    ev.origin_chan = spec.n_chan / 2.0;
    ev.onset = onset_frac[i] * spec.n_time + rng.uniform(-2.0, 2.0);
    ev.wavelet_freq = 0.03;
    ev.validate();
    add_event(field, spec, ev);
    p.events.push_back(ev);
  }
  add_noise(field, rng, p.noise_sigma);
  double peak = 0.0;
  for (double x : field) peak = std::max(peak, std::abs(x));
  // Hard clip at 0.8x the pre-clip peak.
  float c = static_cast<float>(0.8 * peak);
  p.clip_value = c;
  p.values.resize(field.size());
  for (std::size_t i = 0; i < field.size(); ++i) {
    float v = static_cast<float>(field[i]);
    p.values[i] = std::min(std::max(v, -c), c);
  }
  return p;
}

inline Patch gen_saturated(const PatchSpec& spec, Rng& rng) {
  // Deterministic retry: event interference can in principle sharpen the
  // global peak enough to shrink the clipped region below contract.
  for (int attempt = 0; attempt < 32; ++attempt) {
    Patch p = gen_saturated_attempt(spec, rng);
    if (clipped_band_fraction(p) >= 0.20) return p;
  }
  throw NumericError("saturated patch generation failed its clip contract");
}

}  // namespace detail

inline Patch gen_patch(SignalType type, const PatchSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(mix64(seed, static_cast<std::uint64_t>(type)));
  Patch p;
  switch (type) {
    case SignalType::WhiteNoise: p = detail::gen_white_noise(spec, rng); break;
    case SignalType::CoherentWaves: p = detail::gen_coherent(spec, rng); break;
    case SignalType::NonCoherentWaves: p = detail::gen_noncoherent(spec, rng); break;
    case SignalType::Saturated: p = detail::gen_saturated(spec, rng); break;
  }
  p.label = type;
  return p;
}

// Affine rescale to [0,1]; a constant patch maps to all 0.5.
inline Patch normalize_patch(const Patch& p) {
  float lo = std::numeric_limits<float>::infinity();
  float hi = -std::numeric_limits<float>::infinity();
  for (float v : p.values) {
    if (!std::isfinite(v)) throw DataError("normalize_patch: non-finite amplitude");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Patch out = p;
  if (hi == lo) {
    std::fill(out.values.begin(), out.values.end(), 0.5f);
    return out;
  }
  float scale = 1.0f / (hi - lo);
  for (float& v : out.values) v = (v - lo) * scale;
  return out;
}

struct ImageTensor {
  int channels = 1;
  int height = 0;
  int width = 0;
  std::vector<float> values;  // channel-major (c, h, w)

  float at(int c, int y, int x) const {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

enum class ChannelMode { Grayscale, Rgb };

inline const char* channel_mode_name(ChannelMode m) {
  return m == ChannelMode::Grayscale ? "grayscale" : "rgb";
}

inline ChannelMode channel_mode_from_name(const std::string& s) {
  if (s == "grayscale") return ChannelMode::Grayscale;
  if (s == "rgb") return ChannelMode::Rgb;
  throw SpecError("unknown channel mode: " + s);
}

// Diverging colormap anchors: 0 -> blue, 0.5 -> white, 1 -> red.
inline void diverging_rgb(float v, float& r, float& g, float& b) {
  if (v <= 0.5f) {
    float t = v * 2.0f;
    r = t; g = t; b = 1.0f;
  } else {
    float t = (v - 0.5f) * 2.0f;
    r = 1.0f; g = 1.0f - t; b = 1.0f - t;
  }
}

inline ImageTensor encode_channels(const Patch& p, ChannelMode mode) {
  for (float v : p.values)
    if (!(v >= 0.0f && v <= 1.0f))
      throw DataError("encode_channels: patch must be normalized to [0,1]");
  ImageTensor img;
  img.height = p.spec.n_time;
  img.width = p.spec.n_chan;
  if (mode == ChannelMode::Grayscale) {
    img.channels = 1;
    img.values = p.values;
  } else {
    img.channels = 3;
    std::size_t plane = p.values.size();
    img.values.resize(3 * plane);
    for (std::size_t i = 0; i < plane; ++i) {
      float r, g, b;
      diverging_rgb(p.values[i], r, g, b);
      img.values[i] = r;
      img.values[plane + i] = g;
      img.values[2 * plane + i] = b;
    }
  }
  return img;
}

struct LabeledImage {
  ImageTensor image;
  int label = 0;  // 1 = coherent (usable), 0 = white noise
};

// Lazy binary dataset: round(n * coherent_fraction) coherent items first,
// white noise after; every item regenerable from (master seed, index) alone.
class Dataset {
 public:
  Dataset(std::int64_t n, double coherent_fraction, PatchSpec spec,
          ChannelMode mode, std::uint64_t seed)
      : n_(n), spec_(spec), mode_(mode), seed_(seed) {
    if (n < 2) throw SpecError("build_dataset: n must be >= 2");
    if (!(coherent_fraction > 0.0 && coherent_fraction < 1.0))
      throw SpecError("build_dataset: coherent_fraction must be in (0,1)");
    spec.validate();
    n_coherent_ = std::llround(static_cast<double>(n) * coherent_fraction);
    if (n_coherent_ < 1 || n_coherent_ >= n)
      throw SpecError("build_dataset: degenerate class split");
  }

  std::int64_t size() const { return n_; }
  std::int64_t coherent_count() const { return n_coherent_; }
  ChannelMode mode() const { return mode_; }
  const PatchSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }

  std::uint64_t item_seed(std::int64_t i) const {
    return derive_seed(seed_, SeedStream::Dataset, static_cast<std::uint64_t>(i));
  }

  LabeledImage item(std::int64_t i) const {
    if (i < 0 || i >= n_) throw SpecError("dataset index out of range");
    bool coherent = i < n_coherent_;
    SignalType t = coherent ? SignalType::CoherentWaves : SignalType::WhiteNoise;
    Patch p = gen_patch(t, spec_, item_seed(i));
    return {encode_channels(normalize_patch(p), mode_), coherent ? 1 : 0};
  }

 private:
  std::int64_t n_;
  std::int64_t n_coherent_;
  PatchSpec spec_;
  ChannelMode mode_;
  std::uint64_t seed_;
};

inline Dataset build_dataset(std::int64_t n, double coherent_fraction,
                             const PatchSpec& spec, ChannelMode mode,
                             std::uint64_t seed) {
  return Dataset(n, coherent_fraction, spec, mode, seed);
}

// Fixed type order: WhiteNoise, CoherentWaves, NonCoherentWaves, Saturated.
struct ReferenceSet {
  std::array<ImageTensor, 4> images;
};

inline std::uint64_t reference_seed(std::uint64_t master, SignalType t) {
  return derive_seed(master, SeedStream::Reference,
                     static_cast<std::uint64_t>(t));
}

inline ReferenceSet build_reference_set(const PatchSpec& spec, ChannelMode mode,
                                        std::uint64_t seed) {
  spec.validate();
  ReferenceSet rs;
  for (std::size_t i = 0; i < kSignalTypes.size(); ++i) {
    Patch p = gen_patch(kSignalTypes[i], spec, reference_seed(seed, kSignalTypes[i]));
    rs.images[i] = encode_channels(normalize_patch(p), mode);
  }
  return rs;
}

// Patch container: one-line JSON header + row-major little-endian f32 payload.
inline void write_patch(std::ostream& os, const Patch& p) {
  ordered_json hdr;
  hdr["n_time"] = p.spec.n_time;
  hdr["n_chan"] = p.spec.n_chan;
  hdr["dtype"] = "f32";
  if (p.label) hdr["label"] = signal_type_name(*p.label);
  else hdr["label"] = nullptr;
  os << hdr.dump() << '\n';
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(p.values.data()),
           static_cast<std::streamsize>(p.values.size() * sizeof(float)));
  if (!os) throw IoError("write_patch: stream write failed");
}

inline void write_patch_file(const std::string& path, const Patch& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("write_patch: cannot open " + path);
  write_patch(os, p);
}

inline Patch read_patch(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("read_patch: missing header");
  ordered_json hdr;
  try {
    hdr = ordered_json::parse(line);
  } catch (const std::exception& e) {
    throw DataError(std::string("read_patch: bad header: ") + e.what());
  }
  Patch p;
  p.spec.n_time = hdr.at("n_time").get<int>();
  p.spec.n_chan = hdr.at("n_chan").get<int>();
  if (hdr.at("dtype").get<std::string>() != "f32")
    throw DataError("read_patch: unsupported dtype");
  if (!hdr.at("label").is_null())
    p.label = signal_type_from_name(hdr.at("label").get<std::string>());
  p.spec.validate();
  std::size_t count = static_cast<std::size_t>(p.spec.n_time) * p.spec.n_chan;
  p.values.resize(count);
  is.read(reinterpret_cast<char*>(p.values.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (static_cast<std::size_t>(is.gcount()) != count * sizeof(float))
    throw DataError("read_patch: truncated payload");
  return p;
}

inline Patch read_patch_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("read_patch: cannot open " + path);
  return read_patch(is);
}

}  // namespace seisbench
