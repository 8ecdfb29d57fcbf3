#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "doctest.h"
#include "seisbench/sweep.hpp"

using namespace seisbench;

namespace {

std::string tiny_space_json() {
  return R"({
    "seed": 11,
    "axes": {
      "backend_label": ["cpu"],
      "workers": [1, 2],
      "channel_mode": ["grayscale"],
      "batch": [64],
      "dataset_size": [64],
      "depth": [2, 4, 8],
      "bottleneck": [2],
      "lr": [0.01],
      "epochs": [1]
    }
  })";
}

std::string throws_spec_message(const std::string& text) {
  try {
    parse_space(text);
  } catch (const SpecError& e) {
    return e.what();
  }
  return "";
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name)
      : path((std::filesystem::temp_directory_path() / name).string()) {
    std::filesystem::remove(path);
  }
  ~TempFile() { std::filesystem::remove(path); }
};

}  // namespace

TEST_CASE("hyperparameter bounds are enforced") {
  HyperParams hp;
  CHECK_NOTHROW(hp.validate());
  auto reject = [](auto mutate) {
    HyperParams h;
    mutate(h);
    CHECK_THROWS_AS(h.validate(), SpecError);
  };
  reject([](HyperParams& h) { h.workers = 0; });
  reject([](HyperParams& h) { h.workers = 33; });
  reject([](HyperParams& h) { h.batch = 63; });
  reject([](HyperParams& h) { h.batch = 513; });
  reject([](HyperParams& h) { h.dataset_size = 100; });
  reject([](HyperParams& h) { h.depth = 1; });
  reject([](HyperParams& h) { h.depth = 33; });
  reject([](HyperParams& h) { h.bottleneck = 3; });
  reject([](HyperParams& h) { h.lr = 0.0009; });
  reject([](HyperParams& h) { h.lr = 0.6; });
  reject([](HyperParams& h) { h.epochs = 0; });
}

TEST_CASE("hyperparameters round-trip through JSON") {
  HyperParams hp;
  hp.backend_label = "gpu-sim";
  hp.workers = 8;
  hp.channel_mode = ChannelMode::Rgb;
  hp.batch = 256;
  hp.dataset_size = 50000;
  hp.depth = 22;
  hp.bottleneck = 1;
  hp.lr = 0.05;
  hp.epochs = 40;
  HyperParams back = HyperParams::from_json(hp.to_json());
  CHECK(back.to_json().dump() == hp.to_json().dump());
}

TEST_CASE("parse_space rejects malformed input with named axes") {
  CHECK_THROWS_AS(parse_space("{ not json"), DataError);
  CHECK_THROWS_AS(parse_space("{}"), SpecError);

  // drop one axis
  std::string no_depth = tiny_space_json();
  auto pos = no_depth.find("\"depth\": [2, 4, 8],");
  REQUIRE(pos != std::string::npos);
  no_depth.erase(pos, std::string("\"depth\": [2, 4, 8],").size());
  std::string msg = throws_spec_message(no_depth);
  CHECK(msg.find("depth") != std::string::npos);

  // out-of-bound value names the offending axis
  std::string deep = tiny_space_json();
  pos = deep.find("[2, 4, 8]");
  deep.replace(pos, 9, "[2, 33]");
  msg = throws_spec_message(deep);
  CHECK(msg.find("depth") != std::string::npos);

  std::string tiny_ds = tiny_space_json();
  pos = tiny_ds.find("\"dataset_size\": [64]");
  tiny_ds.replace(pos, std::string("\"dataset_size\": [64]").size(),
                  "\"dataset_size\": [32]");
  msg = throws_spec_message(tiny_ds);
  CHECK(msg.find("dataset_size") != std::string::npos);
}

TEST_CASE("enumerate_space is the full cartesian product in field order") {
  SweepSpace s = parse_space(tiny_space_json());
  auto pts = enumerate_space(s);
  REQUIRE(pts.size() == 6);  // 2 workers x 3 depths
  // last axes vary fastest: depth cycles within a fixed worker count
  CHECK(pts[0].workers == 1);
  CHECK(pts[0].depth == 2);
  CHECK(pts[1].depth == 4);
  CHECK(pts[2].depth == 8);
  CHECK(pts[3].workers == 2);
  CHECK(pts[3].depth == 2);

  // 6 x 6 subgrid of the headline figure
  SweepSpace fig;
  fig.seed = 1;
  fig.backend_label = {"cpu"};
  fig.workers = {4};
  fig.channel_mode = {ChannelMode::Grayscale};
  fig.batch = {128};
  fig.dataset_size = {1000};
  fig.depth = {2, 4, 8, 14, 22, 32};
  fig.bottleneck = {2};
  fig.lr = {0.001, 0.005, 0.01, 0.05, 0.1, 0.5};
  fig.epochs = {40};
  CHECK(enumerate_space(fig).size() == 36);

  // explicit points append after the grid
  SweepSpace with_pt = s;
  HyperParams extra;
  extra.batch = 64;
  extra.dataset_size = 64;
  with_pt.points.push_back(extra);
  auto pts2 = enumerate_space(with_pt);
  CHECK(pts2.size() == 7);
  CHECK(pts2.back().depth == extra.depth);
}

TEST_CASE("run ids are stable, hex-shaped and collision-free over the grid") {
  HyperParams hp;
  std::string a = run_id(hp, 7);
  CHECK(a == run_id(hp, 7));
  CHECK(a.size() == 16);
  for (char c : a) CHECK(std::string("0123456789abcdef").find(c) != std::string::npos);
  CHECK(a != run_id(hp, 8));
  HyperParams other = hp;
  other.depth = 4;
  CHECK(a != run_id(other, 7));

  SweepSpace fig;
  fig.seed = 20260823;
  fig.backend_label = {"cpu"};
  fig.workers = {1, 2, 4, 8, 16, 32};
  fig.channel_mode = {ChannelMode::Grayscale, ChannelMode::Rgb};
  fig.batch = {64, 512};
  fig.dataset_size = {1000};
  fig.depth = {2, 14, 32};
  fig.bottleneck = {1, 2};
  fig.lr = {0.001, 0.5};
  fig.epochs = {40};
  auto pts = enumerate_space(fig);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < pts.size(); ++i)
    ids.insert(run_id(pts[i], derive_seed(fig.seed, SeedStream::SweepRun, i)));
  CHECK(ids.size() == pts.size());
}

TEST_CASE("run records round-trip byte-identically through JSONL") {
  RunRecord r;
  r.id = "00ff00ff00ff00ff";
  r.hp = HyperParams{};
  r.seed = 123456789;
  r.param_count = 87554;
  r.status = RunStatus::Ok;
  for (int e = 0; e < 3; ++e) {
    EpochStats st;
    st.epoch = e;
    st.loss = 0.693 / (e + 1);
    st.samples_per_sec = 123.456 + e;
    st.wall_time_s = 8.1 - e;
    st.ref_probs = {0.0657, 0.9008, 0.8551, 0.2975};
    r.epochs.push_back(st);
  }
  std::string line = serialize_run_record(r);
  RunRecord back = parse_run_record(line);
  CHECK(serialize_run_record(back) == line);
  CHECK(back.epochs.size() == 3);
  CHECK(back.epochs[1].ref_probs.coherent == 0.9008);

  CHECK_THROWS_AS(parse_run_record("{bad"), DataError);
  CHECK_THROWS_AS(read_run_records("/nonexistent/records.jsonl"), IoError);
}

TEST_CASE("sweeps persist every run and resume without recomputation") {
  std::string space_text = R"({
    "seed": 3,
    "axes": {
      "backend_label": ["cpu"],
      "workers": [1],
      "channel_mode": ["grayscale"],
      "batch": [64],
      "dataset_size": [64],
      "depth": [2],
      "bottleneck": [2],
      "lr": [0.01],
      "epochs": [1]
    }
  })";
  SweepSpace s = parse_space(space_text);
  TempFile tmp("seisbench_sweep_test.jsonl");

  SweepSummary first = run_sweep(s, tmp.path, false);
  CHECK(first.ok == 1);
  CHECK(first.skipped == 0);
  auto recs = read_run_records(tmp.path);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].status == RunStatus::Ok);
  CHECK(recs[0].epochs.size() == 1);
  CHECK(recs[0].param_count > 0);

  SweepSummary second = run_sweep(s, tmp.path, true);
  CHECK(second.ok == 0);
  CHECK(second.skipped == 1);
  CHECK(read_run_records(tmp.path).size() == 1);

  // resume off appends a duplicate record with the same id
  SweepSummary third = run_sweep(s, tmp.path, false);
  CHECK(third.ok == 1);
  auto recs3 = read_run_records(tmp.path);
  REQUIRE(recs3.size() == 2);
  CHECK(recs3[0].id == recs3[1].id);
  // identical modulo wall-clock timing fields
  auto strip = [](RunRecord r) {
    for (auto& e : r.epochs) {
      e.wall_time_s = 0.0;
      e.samples_per_sec = 0.0;
    }
    return serialize_run_record(r);
  };
  CHECK(strip(recs3[0]) == strip(recs3[1]));
}

TEST_CASE("train_run records the closed-form parameter count") {
  HyperParams hp;
  hp.batch = 64;
  hp.dataset_size = 64;
  hp.depth = 2;
  hp.epochs = 1;
  hp.lr = 0.01;
  PatchSpec pspec;
  Dataset data = build_dataset(64, 0.5, pspec, ChannelMode::Grayscale, 3);
  ReferenceSet refs = build_reference_set(pspec, ChannelMode::Grayscale, 3);
  RunRecord rec = train_run<float>(hp, data, refs, 77);
  ArchSpec arch;
  arch.depth = 2;
  CHECK(rec.param_count == count_params(arch));
  CHECK(rec.id == run_id(hp, 77));
  REQUIRE(rec.epochs.size() == 1);
  CHECK(std::isfinite(rec.epochs[0].loss));
}
