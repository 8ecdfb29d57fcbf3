// seisbench command line: synth, train, sweep, validate, bench, report.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "seisbench/patch.hpp"
#include "seisbench/report.hpp"
#include "seisbench/resnet.hpp"
#include "seisbench/selection.hpp"
#include "seisbench/sweep.hpp"
#include "seisbench/trainer.hpp"

namespace sb = seisbench;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;
constexpr int kExitNumeric = 3;

std::uint64_t effective_seed(std::uint64_t seed) {
  // SEISBENCH_SEED overrides configured seeds for CI determinism.
  if (const char* env = std::getenv("SEISBENCH_SEED")) {
    return std::strtoull(env, nullptr, 10);
  }
  return seed;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw sb::IoError("cannot open output file: " + path);
  os << text;
  if (!os) throw sb::IoError("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw sb::IoError("cannot open input file: " + path);
  return std::string((std::istreambuf_iterator<char>(is)),
                     std::istreambuf_iterator<char>());
}

struct GridSpec {
  std::vector<int> workers = {1, 2, 4, 8, 16, 32};
  std::vector<std::int64_t> dataset_size = {1000, 50000};
  std::vector<std::int64_t> batch = {128, 512};
  int depth = 2;
  sb::ScalingCostModel cost;
};

GridSpec parse_grid(const std::string& path) {
  GridSpec g;
  auto j = sb::ordered_json::parse(read_text_file(path));
  if (j.contains("workers")) g.workers = j["workers"].get<std::vector<int>>();
  if (j.contains("dataset_size"))
    g.dataset_size = j["dataset_size"].get<std::vector<std::int64_t>>();
  if (j.contains("batch")) g.batch = j["batch"].get<std::vector<std::int64_t>>();
  if (j.contains("depth")) g.depth = j["depth"].get<int>();
  if (j.contains("cost_model"))
    g.cost = sb::ScalingCostModel::from_json(j["cost_model"]);
  return g;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"seisbench: synthetic DAS patch classification benchmark"};
  app.require_subcommand(1);

  // ---- synth ----
  auto* synth = app.add_subcommand("synth", "generate one reference patch");
  std::string synth_type = "coherent";
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  int synth_nt = 64, synth_nc = 64;
  synth->add_option("--type", synth_type, "white_noise|coherent|noncoherent|saturated");
  synth->add_option("--seed", synth_seed, "generation seed");
  synth->add_option("--out", synth_out, "output patch file")->required();
  synth->add_option("--n-time", synth_nt, "time samples");
  synth->add_option("--n-chan", synth_nc, "fiber channels");

  // ---- train ----
  auto* train = app.add_subcommand("train", "single training run from flags");
  sb::HyperParams thp;
  std::string train_mode = "grayscale";
  std::string train_out, train_ckpt;
  std::uint64_t train_seed = 0;
  double train_momentum = 0.0;
  train->add_option("--workers", thp.workers);
  train->add_option("--channel-mode", train_mode, "grayscale|rgb");
  train->add_option("--batch", thp.batch);
  train->add_option("--dataset-size", thp.dataset_size);
  train->add_option("--depth", thp.depth);
  train->add_option("--bottleneck", thp.bottleneck);
  train->add_option("--lr", thp.lr);
  train->add_option("--epochs", thp.epochs);
  train->add_option("--momentum", train_momentum);
  train->add_option("--seed", train_seed);
  train->add_option("--backend-label", thp.backend_label);
  train->add_option("--out", train_out, "append RunRecord JSONL here");
  train->add_option("--checkpoint", train_ckpt, "save final model checkpoint");

  // ---- sweep ----
  auto* sweep = app.add_subcommand("sweep", "run a hyperparameter sweep");
  std::string sweep_space, sweep_out;
  bool sweep_resume = false;
  sweep->add_option("--space", sweep_space, "sweep space JSON")->required();
  sweep->add_option("--out", sweep_out, "output JSONL")->required();
  sweep->add_flag("--resume", sweep_resume, "skip runs already recorded");

  // ---- validate ----
  auto* validate = app.add_subcommand("validate", "range-filter recorded models");
  std::string val_records, val_spec;
  int val_top = 10;
  validate->add_option("--records", val_records, "RunRecord JSONL")->required();
  validate->add_option("--spec", val_spec, "range spec JSON (default: shipped ranges)");
  validate->add_option("--top", val_top, "show top k candidates");

  // ---- bench ----
  auto* bench = app.add_subcommand("bench", "throughput map, measured or modeled");
  std::string bench_mode = "modeled", bench_grid, bench_out;
  std::uint64_t bench_seed = 0;
  bench->add_option("--mode", bench_mode, "measured|modeled");
  bench->add_option("--grid", bench_grid, "grid JSON (axes + optional cost_model)");
  bench->add_option("--out", bench_out, "output CSV")->required();
  bench->add_option("--seed", bench_seed);

  // ---- report ----
  auto* report = app.add_subcommand("report", "CSV exports for the three figures");
  report->require_subcommand(1);
  std::string rep_records, rep_out, rep_spec, rep_grid;
  auto add_rep = [&](const char* name, const char* desc, bool needs_records) {
    auto* sc = report->add_subcommand(name, desc);
    if (needs_records)
      sc->add_option("--records", rep_records, "RunRecord JSONL")->required();
    else
      sc->add_option("--grid", rep_grid, "grid JSON");
    sc->add_option("--out", rep_out, "output CSV")->required();
    sc->add_option("--spec", rep_spec, "range spec JSON");
    return sc;
  };
  auto* rep_pc = add_rep("parallel-coords", "one row per run", true);
  auto* rep_tm = add_rep("throughput-map", "modeled throughput grid", false);
  auto* rep_pm = add_rep("prob-matrix", "per-epoch reference probabilities", true);

  CLI11_PARSE(app, argc, argv);

  if (synth->parsed()) {
    sb::PatchSpec spec;
    spec.n_time = synth_nt;
    spec.n_chan = synth_nc;
    sb::Patch p = sb::gen_patch(sb::signal_type_from_name(synth_type), spec,
                                effective_seed(synth_seed));
    sb::write_patch_file(synth_out, p);
    std::cout << "wrote " << synth_out << " (" << synth_type << ", "
              << spec.n_time << "x" << spec.n_chan << ")\n";
    return kExitOk;
  }

  if (train->parsed()) {
    thp.channel_mode = sb::channel_mode_from_name(train_mode);
    thp.validate();
    std::uint64_t seed = effective_seed(train_seed);
    sb::PatchSpec pspec;
    sb::Dataset data = sb::build_dataset(thp.dataset_size, 0.5, pspec,
                                         thp.channel_mode, seed);
    sb::ReferenceSet ref = sb::build_reference_set(pspec, thp.channel_mode, seed);

    sb::ArchSpec arch;
    arch.depth = thp.depth;
    arch.in_channels = thp.channel_mode == sb::ChannelMode::Rgb ? 3 : 1;
    arch.bottleneck = thp.bottleneck;
    sb::TrainConfig cfg;
    cfg.workers = thp.workers;
    cfg.batch = thp.batch;
    cfg.lr = thp.lr;
    cfg.momentum = train_momentum;
    cfg.epochs = thp.epochs;
    cfg.seed = seed;
    sb::ParallelTrainer<float> trainer(arch, cfg);
    sb::RunRecord rec;
    rec.hp = thp;
    rec.seed = seed;
    rec.id = sb::run_id(thp, seed);
    rec.param_count = sb::count_params(arch);
    for (int e = 0; e < thp.epochs; ++e) {
      sb::EpochStats stats;
      if (!trainer.run_epoch(data, e, &ref, stats)) {
        rec.status = sb::RunStatus::Diverged;
        std::cerr << "run diverged at epoch " << e << "\n";
        break;
      }
      rec.epochs.push_back(stats);
      std::cout << "epoch " << e << " loss " << stats.loss << " ("
                << static_cast<long>(stats.samples_per_sec) << " samples/s)"
                << " ref p: " << stats.ref_probs.white_noise << " "
                << stats.ref_probs.coherent << " " << stats.ref_probs.noncoherent
                << " " << stats.ref_probs.saturated << "\n";
    }
    if (!train_out.empty()) {
      std::ofstream os(train_out, std::ios::app);
      if (!os) throw sb::IoError("cannot open output: " + train_out);
      os << sb::serialize_run_record(rec) << '\n';
    }
    if (!train_ckpt.empty())
      sb::save_checkpoint_file(train_ckpt, trainer.model(), seed,
                               static_cast<int>(rec.epochs.size()) - 1);
    return rec.status == sb::RunStatus::Ok ? kExitOk : kExitNumeric;
  }

  if (sweep->parsed()) {
    sb::SweepSpace space = sb::parse_space_file(sweep_space);
    if (const char* env = std::getenv("SEISBENCH_SEED"))
      space.seed = std::strtoull(env, nullptr, 10);
    sb::SweepSummary s = sb::run_sweep(space, sweep_out, sweep_resume,
                                       [](std::int64_t i, std::int64_t total,
                                          const sb::RunRecord& rec) {
                                         std::cout << "[" << i << "/" << total << "] "
                                                   << rec.id << " "
                                                   << sb::run_status_name(rec.status)
                                                   << "\n";
                                       });
    std::cout << "ok " << s.ok << ", diverged " << s.diverged << ", skipped "
              << s.skipped << "\n";
    return kExitOk;
  }

  if (validate->parsed()) {
    std::vector<sb::RunRecord> records = sb::read_run_records(val_records);
    sb::ExpectedRangeSpec spec;
    if (!val_spec.empty()) spec = sb::ExpectedRangeSpec::from_file(val_spec);
    sb::Ranking rank = sb::rank_models(records, spec);
    std::cout << "run_id           epoch  p_wn     p_coh    p_nc     p_sat    "
                 "pass              distance\n";
    int shown = 0;
    for (const sb::Candidate& c : rank.candidates) {
      if (shown++ >= val_top) break;
      char line[256];
      const auto& t = c.report.per_type;
      std::snprintf(line, sizeof(line),
                    "%s %5d  %.4f   %.4f   %.4f   %.4f   %c%c%c%c          %.6f",
                    c.run_id.c_str(), c.epoch, t[0].p, t[1].p, t[2].p, t[3].p,
                    t[0].pass ? 'y' : 'n', t[1].pass ? 'y' : 'n',
                    t[2].pass ? 'y' : 'n', t[3].pass ? 'y' : 'n',
                    c.report.distance);
      std::cout << line << "\n";
    }
    std::cout << rank.summary.passing << "/" << rank.summary.total
              << " candidates pass\n";
    return kExitOk;
  }

  if (bench->parsed()) {
    GridSpec g = bench_grid.empty() ? GridSpec{} : parse_grid(bench_grid);
    if (bench_mode == "modeled") {
      write_text_file(bench_out, sb::export_throughput_map(
                                     g.cost, g.workers, g.dataset_size, g.batch));
    } else if (bench_mode == "measured") {
      std::uint64_t seed = effective_seed(bench_seed);
      std::vector<sb::ThroughputCell> cells;
      sb::PatchSpec pspec;
      for (std::int64_t n : g.dataset_size)
        for (std::int64_t b : g.batch)
          for (int w : g.workers) {
            sb::ArchSpec arch;
            arch.depth = g.depth;
            sb::TrainConfig cfg;
            cfg.workers = w;
            cfg.batch = static_cast<int>(b);
            cfg.lr = 0.01;
            cfg.seed = seed;
            sb::Dataset data =
                sb::build_dataset(n, 0.5, pspec, sb::ChannelMode::Grayscale, seed);
            sb::ParallelTrainer<float> trainer(arch, cfg);
            sb::EpochStats stats;
            if (!trainer.run_epoch(data, 0, nullptr, stats))
              throw sb::NumericError("measured bench run diverged");
            cells.push_back({w, n, b, stats.samples_per_sec, true});
            std::cout << "W=" << w << " N=" << n << " batch=" << b << ": "
                      << static_cast<long>(stats.samples_per_sec) << " samples/s\n";
          }
      write_text_file(bench_out, sb::export_throughput_map(cells));
    } else {
      throw sb::SpecError("bench: --mode must be measured or modeled");
    }
    return kExitOk;
  }

  if (report->parsed()) {
    sb::ExpectedRangeSpec spec;
    if (!rep_spec.empty()) spec = sb::ExpectedRangeSpec::from_file(rep_spec);
    if (rep_pc->parsed()) {
      write_text_file(rep_out,
                      sb::export_parallel_coords(sb::read_run_records(rep_records), spec));
    } else if (rep_tm->parsed()) {
      GridSpec g = rep_grid.empty() ? GridSpec{} : parse_grid(rep_grid);
      write_text_file(rep_out, sb::export_throughput_map(g.cost, g.workers,
                                                         g.dataset_size, g.batch));
    } else if (rep_pm->parsed()) {
      write_text_file(rep_out,
                      sb::export_prob_matrix(sb::read_run_records(rep_records), spec));
    }
    return kExitOk;
  }

  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const sb::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const sb::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}
