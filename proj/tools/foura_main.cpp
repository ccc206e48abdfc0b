// foura: command-line workbench for frequency-domain low-rank adapters.
//
// Subcommands: train, analyze, merge, gradcheck, denoise-report.
// Exit codes: 0 success, 1 usage/config error, 2 numerical failure.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "foura/foura.hpp"

namespace fs = std::filesystem;
using namespace foura;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

struct ManifestWriter {
  std::vector<std::string> lines;

  void kv(const std::string& key, const std::string& value) {
    lines.push_back(key + "=" + value);
  }

  void artifact(const fs::path& p) { lines.push_back("artifact=" + p.string()); }

  void write(const fs::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    for (const std::string& l : lines) out << l << '\n';
  }
};

std::size_t worker_cap() {
  const char* env = std::getenv("FOURA_THREADS");
  if (!env) return 1;
  const long v = std::atol(env);
  return v < 1 ? 1 : static_cast<std::size_t>(v);
}

TrainTrace run_task(const TrainConfig& cfg) {
  return cfg.task == Task::MatrixFit ? run_matrix_fit(cfg) : run_toy_denoise(cfg);
}

void write_losses_csv(const fs::path& path, const TrainTrace& trace) {
  CsvWriter csv(path.string());
  csv.row({"step", "loss"});
  for (std::size_t i = 0; i < trace.losses.size(); ++i) {
    csv.row({CsvWriter::cell(i), CsvWriter::cell(trace.losses[i])});
  }
}

void write_ranks_csv(const fs::path& path, const TrainTrace& trace) {
  CsvWriter csv(path.string());
  csv.row({"index", "layer", "effective_rank", "soft_mask_mean"});
  for (const RankTraceRow& r : effective_rank_trace(trace)) {
    csv.row({CsvWriter::cell(r.index), CsvWriter::cell(r.layer),
             CsvWriter::cell(r.effective_rank), CsvWriter::cell(r.soft_mask_mean)});
  }
}

// Materialized update of a trained layer: frozen gates use their captured
// mask, live gates are frozen on the task's calibration batches first.
Matrix materialized_update(const AdapterLayer& layer, const TrainConfig& cfg) {
  AdapterLayer copy = layer;
  if (copy.gate) {
    if (copy.gate->mode != GateMode::Frozen) {
      freeze_gate(copy, calibration_batches(cfg.seed, 16, copy.k1()));
    }
    return materialize_delta_w(copy, copy.gate->frozen_mask);
  }
  return materialize_delta_w(copy, std::vector<double>(copy.rank, 1.0));
}

TrainConfig config_echo_from_checkpoint(const Checkpoint& ckpt) {
  TrainConfig cfg;
  cfg.task = detail::parse_task(ckpt.meta_value("task"));
  cfg.rank = detail::parse_u64(ckpt.meta_value("rank"));
  cfg.transform = detail::parse_transform(ckpt.meta_value("transform"));
  cfg.axis = detail::parse_axis(ckpt.meta_value("axis"));
  cfg.alpha = detail::parse_real(ckpt.meta_value("alpha"));
  cfg.seed = detail::parse_u64(ckpt.meta_value("seed"));
  cfg.gate_mode = detail::parse_gate(ckpt.meta_value("gate_mode"));
  cfg.gate_threshold = detail::parse_real(ckpt.meta_value("threshold"));
  cfg.lambda_entropy = detail::parse_real(ckpt.meta_value("lambda_entropy"));
  return cfg;
}

int train_one(const TrainConfig& cfg, const std::string& config_path,
              const std::string& out_dir, bool store_f32) {
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(out_dir);
  const TrainTrace trace = run_task(cfg);

  const fs::path ckpt_path = fs::path(out_dir) / "checkpoint.fckpt";
  const fs::path losses_path = fs::path(out_dir) / "losses.csv";
  const fs::path ranks_path = fs::path(out_dir) / "ranks.csv";
  write_checkpoint(ckpt_path.string(), make_checkpoint(cfg, trace.final_layers, store_f32));
  write_losses_csv(losses_path, trace);
  write_ranks_csv(ranks_path, trace);

  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ManifestWriter mf;
  mf.kv("command", "train");
  mf.kv("config", config_path);
  mf.kv("task", to_string(cfg.task));
  mf.kv("transform", to_string(cfg.transform));
  mf.kv("axis", to_string(cfg.axis));
  mf.kv("gate_mode", to_string(cfg.gate_mode));
  mf.kv("rank", std::to_string(cfg.rank));
  mf.kv("steps", std::to_string(cfg.steps));
  mf.kv("seed", std::to_string(cfg.seed));
  mf.kv("target_id", std::to_string(cfg.target_id));
  mf.kv("library_version", kLibraryVersion);
  mf.kv("wall_time_seconds", format_real(secs));
  mf.artifact(ckpt_path);
  mf.artifact(losses_path);
  mf.artifact(ranks_path);
  mf.write(fs::path(out_dir) / "manifest.txt");

  std::printf("trained %s: final loss %s -> %s\n", to_string(cfg.task).c_str(),
              format_real(trace.losses.back()).c_str(), out_dir.c_str());
  return kExitOk;
}

int cmd_train(const std::string& config_path, long long seed_override,
              long long target_override, const std::vector<std::uint64_t>& seeds,
              const std::string& out_dir, bool store_f32) {
  TrainConfig cfg = load_train_config(config_path);
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  if (target_override >= 0) cfg.target_id = static_cast<std::uint64_t>(target_override);
  validate_train_config(cfg);
  if (seeds.empty()) {
    return train_one(cfg, config_path, out_dir, store_f32);
  }

  // independent seed sweep; FOURA_THREADS caps the parallel workers
  const std::size_t cap = std::min(worker_cap(), seeds.size());
  std::vector<int> rcs(seeds.size(), kExitOk);
  std::vector<std::string> messages(seeds.size());
  std::size_t next = 0;
  std::mutex mu;
  const auto worker = [&] {
    for (;;) {
      std::size_t mine;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= seeds.size()) return;
        mine = next++;
      }
      TrainConfig run_cfg = cfg;
      run_cfg.seed = seeds[mine];
      const std::string sub = out_dir + "/seed" + std::to_string(seeds[mine]);
      try {
        rcs[mine] = train_one(run_cfg, config_path, sub, store_f32);
      } catch (const Error& e) {
        rcs[mine] = kExitNumerical;
        messages[mine] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t i = 0; i < cap; ++i) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  int rc = kExitOk;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (rcs[i] != kExitOk) {
      std::fprintf(stderr, "seed %llu failed: %s\n",
                   static_cast<unsigned long long>(seeds[i]), messages[i].c_str());
      rc = rcs[i];
    }
  }
  return rc;
}

int cmd_analyze(const std::vector<std::string>& ckpt_paths, const std::string& base_path,
                std::size_t rank, const std::string& out_dir, bool pairwise,
                const BoundParams& bound_defaults, double bound_n, double bound_delta) {
  fs::create_directories(out_dir);
  struct Loaded {
    std::string name;
    TrainConfig cfg;
    std::vector<AdapterLayer> layers;
    std::vector<Matrix> updates;
  };
  std::vector<Loaded> all;
  for (const std::string& path : ckpt_paths) {
    const Checkpoint ckpt = read_checkpoint(path);
    Loaded l;
    l.name = path;
    l.cfg = config_echo_from_checkpoint(ckpt);
    l.layers = layers_from_checkpoint(ckpt);
    for (const AdapterLayer& layer : l.layers) {
      l.updates.push_back(materialized_update(layer, l.cfg));
    }
    all.push_back(std::move(l));
  }
  std::vector<Matrix> base_override;
  if (!base_path.empty()) {
    const Checkpoint base = read_checkpoint(base_path);
    for (const AdapterLayer& layer : layers_from_checkpoint(base)) {
      base_override.push_back(layer.w0);
    }
    for (const Loaded& l : all) {
      for (std::size_t j = 0; j < l.layers.size() && j < base_override.size(); ++j) {
        if (!l.layers[j].w0.same_shape(base_override[j])) {
          throw IncompatibleCheckpoints("--base weights do not match layer shapes");
        }
      }
    }
  }

  for (std::size_t i = 1; i < all.size(); ++i) {
    if (all[i].layers.size() != all[0].layers.size()) {
      throw IncompatibleCheckpoints("checkpoints disagree on layer count");
    }
    for (std::size_t j = 0; j < all[i].layers.size(); ++j) {
      if (all[i].layers[j].k1() != all[0].layers[j].k1() ||
          all[i].layers[j].k2() != all[0].layers[j].k2()) {
        throw IncompatibleCheckpoints("checkpoints disagree on layer shapes");
      }
    }
  }

  const fs::path spread_path = fs::path(out_dir) / "spread.csv";
  {
    CsvWriter csv(spread_path.string());
    csv.row({"checkpoint", "layer", "sigma_index", "sigma", "tail_energy_ratio_at_rank"});
    for (const Loaded& l : all) {
      for (std::size_t layer = 0; layer < l.updates.size(); ++layer) {
        const SpreadReport rep = spread_report(l.updates[layer]);
        const std::size_t r = std::min(rank, rep.sigmas.size());
        for (std::size_t i = 0; i < rep.sigmas.size(); ++i) {
          csv.row({l.name, CsvWriter::cell(layer), CsvWriter::cell(i),
                   CsvWriter::cell(rep.sigmas[i]),
                   CsvWriter::cell(rep.tail_energy_ratio(r))});
        }
      }
    }
  }

  const fs::path amp_path = fs::path(out_dir) / "amplification.csv";
  {
    CsvWriter csv(amp_path.string());
    csv.row({"checkpoint", "layer", "dw_norm", "proj_norm", "factor"});
    for (const Loaded& l : all) {
      for (std::size_t layer = 0; layer < l.updates.size(); ++layer) {
        const Matrix& w0 = layer < base_override.size() ? base_override[layer]
                                                        : l.layers[layer].w0;
        const std::size_t kmin =
            std::min(l.updates[layer].rows(), l.updates[layer].cols());
        try {
          const AmplificationReport rep =
              amplification_factor(w0, l.updates[layer], std::min(rank, kmin));
          csv.row({l.name, CsvWriter::cell(layer), CsvWriter::cell(rep.dw_norm),
                   CsvWriter::cell(rep.proj_norm), CsvWriter::cell(rep.factor)});
        } catch (const DegenerateProjection&) {
          // base weights vanish on the adapter subspace (e.g. a silent adapter)
          csv.row({l.name, CsvWriter::cell(layer),
                   CsvWriter::cell(frobenius_norm(l.updates[layer])), "degenerate",
                   "degenerate"});
        }
      }
    }
  }

  const fs::path bound_path = fs::path(out_dir) / "bound.csv";
  {
    CsvWriter csv(bound_path.string());
    csv.row({"checkpoint", "layer", "p", "bound"});
    for (const Loaded& l : all) {
      for (std::size_t layer = 0; layer < l.layers.size(); ++layer) {
        // measured effective-rank ratio of the stored mask, plus a sweep
        double p_measured = 1.0;
        if (l.layers[layer].gate && l.layers[layer].gate->mode == GateMode::Frozen) {
          double on = 0.0;
          for (double v : l.layers[layer].gate->frozen_mask) on += v;
          p_measured = on / static_cast<double>(l.layers[layer].rank);
        }
        BoundParams bp = bound_defaults;
        bp.n = bound_n;
        bp.delta = bound_delta;
        if (p_measured > 0.0 && bp.lambda_min + 2.0 * (1.0 - p_measured) > 0.0) {
          bp.p = p_measured;
          csv.row({l.name, CsvWriter::cell(layer), CsvWriter::cell(bp.p),
                   CsvWriter::cell(generalization_bound(bp))});
        }
        for (int i = 1; i <= 20; ++i) {
          bp.p = 0.045 * i;
          csv.row({l.name + ":sweep", CsvWriter::cell(layer), CsvWriter::cell(bp.p),
                   CsvWriter::cell(generalization_bound(bp))});
        }
      }
    }
  }

  const fs::path autocorr_path = fs::path(out_dir) / "autocorr.csv";
  {
    // output-autocorrelation split on a seeded probe batch
    CsvWriter csv(autocorr_path.string());
    csv.row({"checkpoint", "layer", "base_term_norm", "adapter_term_norm",
             "cross_term_norm", "off_diag_ratio"});
    for (const Loaded& l : all) {
      for (std::size_t layer = 0; layer < l.updates.size(); ++layer) {
        Rng rng(substream(l.cfg.seed, 0xACu));
        const Matrix z = rng.gaussian_matrix(8, l.layers[layer].k1());
        const AutocorrReport rep =
            autocorrelation_decomposition(l.layers[layer].w0, l.updates[layer], z);
        csv.row({l.name, CsvWriter::cell(layer),
                 CsvWriter::cell(frobenius_norm(rep.base_term)),
                 CsvWriter::cell(frobenius_norm(rep.adapter_term)),
                 CsvWriter::cell(frobenius_norm(rep.cross_term)),
                 CsvWriter::cell(rep.off_diag_ratio)});
      }
    }
  }

  const fs::path svg_path = fs::path(out_dir) / "spread.svg";
  {
    std::vector<PlotSeries> series;
    for (const Loaded& l : all) {
      for (std::size_t layer = 0; layer < l.updates.size(); ++layer) {
        PlotSeries s;
        s.name = l.name + " L" + std::to_string(layer);
        const SpreadReport rep = spread_report(l.updates[layer]);
        for (std::size_t i = 0; i < rep.sigmas.size(); ++i) {
          s.x.push_back(static_cast<double>(i + 1));
          s.y.push_back(rep.sigmas[i]);
        }
        series.push_back(std::move(s));
      }
    }
    write_line_plot(svg_path.string(), "singular value spread", series);
  }

  ManifestWriter mf;
  mf.kv("command", "analyze");
  mf.kv("rank", std::to_string(rank));
  mf.kv("library_version", kLibraryVersion);
  mf.artifact(spread_path);
  mf.artifact(amp_path);
  mf.artifact(bound_path);
  mf.artifact(autocorr_path);
  mf.artifact(svg_path);

  if (pairwise && all.size() >= 2) {
    const fs::path proj_path = fs::path(out_dir) / "projection.csv";
    CsvWriter csv(proj_path.string());
    csv.row({"from", "onto", "layer", "projection_norm", "normalized"});
    for (std::size_t i = 0; i < all.size(); ++i) {
      for (std::size_t j = 0; j < all.size(); ++j) {
        if (i == j) continue;
        for (std::size_t layer = 0; layer < all[i].updates.size(); ++layer) {
          const Matrix& d1 = all[i].updates[layer];
          const Matrix& d2 = all[j].updates[layer];
          const std::size_t r = std::min(rank, std::min(d1.rows(), d1.cols()));
          csv.row({all[i].name, all[j].name, CsvWriter::cell(layer),
                   CsvWriter::cell(projection_norm(d1, d2, r, false)),
                   CsvWriter::cell(projection_norm(d1, d2, r, true))});
        }
      }
    }
    mf.artifact(proj_path);
  }
  mf.write(fs::path(out_dir) / "manifest.txt");
  std::printf("analyzed %zu checkpoint(s) -> %s\n", all.size(), out_dir.c_str());
  return kExitOk;
}

int cmd_merge(const std::string& path1, const std::string& path2, double alpha1,
              double alpha2, std::uint64_t probe_seed, std::size_t probes,
              const std::string& out_dir) {
  fs::create_directories(out_dir);
  const Checkpoint c1 = read_checkpoint(path1);
  const Checkpoint c2 = read_checkpoint(path2);
  const TrainConfig cfg1 = config_echo_from_checkpoint(c1);
  const TrainConfig cfg2 = config_echo_from_checkpoint(c2);
  std::vector<AdapterLayer> l1 = layers_from_checkpoint(c1);
  std::vector<AdapterLayer> l2 = layers_from_checkpoint(c2);
  if (l1.size() != l2.size()) {
    throw IncompatibleCheckpoints("checkpoints disagree on layer count");
  }
  // merged evaluation needs static masks; freeze live gates on calibration data
  for (AdapterLayer& l : l1) {
    if (l.gate && l.gate->mode != GateMode::Frozen) {
      freeze_gate(l, calibration_batches(cfg1.seed, 16, l.k1()));
    }
  }
  for (AdapterLayer& l : l2) {
    if (l.gate && l.gate->mode != GateMode::Frozen) {
      freeze_gate(l, calibration_batches(cfg2.seed, 16, l.k1()));
    }
  }

  const fs::path eval_path = fs::path(out_dir) / "merged_eval.csv";
  CsvWriter csv(eval_path.string());
  csv.row({"probe", "layer", "merged_norm", "first_only_norm", "second_only_norm"});
  Rng rng(substream(probe_seed, 0xD1CEu));
  for (std::size_t p = 0; p < probes; ++p) {
    for (std::size_t layer = 0; layer < l1.size(); ++layer) {
      const Matrix z = rng.gaussian_matrix(8, l1[layer].k1());
      MergeSpec both;
      both.adapters = {{&l1[layer], alpha1}, {&l2[layer], alpha2}};
      MergeSpec first;
      first.adapters = {{&l1[layer], alpha1}};
      MergeSpec second;
      second.adapters = {{&l2[layer], alpha2}};
      csv.row({CsvWriter::cell(p), CsvWriter::cell(layer),
               CsvWriter::cell(frobenius_norm(merge_outputs(both, z))),
               CsvWriter::cell(frobenius_norm(merge_outputs(first, z))),
               CsvWriter::cell(frobenius_norm(merge_outputs(second, z)))});
    }
  }

  const fs::path score_path = fs::path(out_dir) / "compatibility.csv";
  {
    CsvWriter scsv(score_path.string());
    scsv.row({"layer", "compatibility"});
    for (std::size_t layer = 0; layer < l1.size(); ++layer) {
      const double score = merge_compatibility(l1[layer], l2[layer], l1[layer].rank);
      scsv.row({CsvWriter::cell(layer), CsvWriter::cell(score)});
      std::printf("layer %zu compatibility (lower merges cleaner): %s\n", layer,
                  format_real(score).c_str());
    }
  }

  ManifestWriter mf;
  mf.kv("command", "merge");
  mf.kv("alphas", format_real(alpha1) + "," + format_real(alpha2));
  mf.kv("probe_seed", std::to_string(probe_seed));
  mf.kv("library_version", kLibraryVersion);
  mf.artifact(eval_path);
  mf.artifact(score_path);
  mf.write(fs::path(out_dir) / "manifest.txt");
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, bool inject_fault) {
  struct Combo {
    const char* name;
    TransformKind kind;
    Axis axis;
    bool gated;
  };
  const Combo combos[] = {
      {"lora", TransformKind::None, Axis::Embedding, false},
      {"foura-dct-embedding-soft", TransformKind::Dct, Axis::Embedding, true},
      {"foura-dct-token-soft", TransformKind::Dct, Axis::Token, true},
      {"foura-dft-embedding-soft", TransformKind::Dft, Axis::Embedding, true},
      {"foura-dft-token-soft", TransformKind::Dft, Axis::Token, true},
      {"foura-dct-embedding-ungated", TransformKind::Dct, Axis::Embedding, false},
      {"foura-dft-embedding-ungated", TransformKind::Dft, Axis::Embedding, false},
  };
  bool ok = true;
  int index = 0;
  for (const Combo& combo : combos) {
    Rng rng(substream(seed, static_cast<std::uint64_t>(index++)));
    AdapterLayer layer;
    layer.w0 = rng.gaussian_matrix(6, 5, 0.5);
    layer.a = rng.gaussian_matrix(3, 6, 0.4);
    layer.b = rng.gaussian_matrix(5, 3, 0.4);
    layer.rank = 3;
    layer.alpha = 0.9;
    layer.transform = combo.kind;
    layer.axis = combo.axis;
    if (combo.gated) {
      GateState g;
      g.g1 = rng.gaussian_matrix(3, 3, 0.5);
      g.g2 = rng.gaussian_matrix(3, 3, 0.5);
      layer.gate = g;
    }
    const Matrix z = rng.gaussian_matrix(4, 6);
    double err = grad_check(layer, z, 1e-5);
    if (inject_fault) err += 1.0;  // debug hook: force a failing report
    const bool pass = err < 1e-5;
    ok = ok && pass;
    std::printf("[%s] %-28s max rel err %s\n", pass ? "PASS" : "FAIL", combo.name,
                format_real(err).c_str());
  }
  return ok ? kExitOk : kExitNumerical;
}

int cmd_denoise_report(const std::string& ckpt_path, std::uint64_t seed,
                       const std::string& out_dir) {
  fs::create_directories(out_dir);
  const Checkpoint ckpt = read_checkpoint(ckpt_path);
  const TrainConfig cfg = config_echo_from_checkpoint(ckpt);
  if (cfg.task != Task::ToyDenoise) {
    throw IncompatibleCheckpoints("denoise-report needs a toy_denoise checkpoint");
  }
  const std::vector<AdapterLayer> layers = layers_from_checkpoint(ckpt);
  const DenoiseEval ev = run_denoise_eval(layers, seed, 8);

  const fs::path csv_path = fs::path(out_dir) / "timesteps.csv";
  {
    CsvWriter csv(csv_path.string());
    csv.row({"timestep", "layer", "effective_rank", "soft_mask_mean"});
    for (std::size_t i = 0; i < ev.timesteps.size(); ++i) {
      for (std::size_t layer = 0; layer < ev.ranks[i].size(); ++layer) {
        csv.row({CsvWriter::cell(ev.timesteps[i]), CsvWriter::cell(layer),
                 CsvWriter::cell(ev.ranks[i][layer]),
                 CsvWriter::cell(ev.soft_means[i][layer])});
      }
    }
  }
  const fs::path svg_path = fs::path(out_dir) / "effective_rank.svg";
  {
    std::vector<PlotSeries> series(layers.size());
    for (std::size_t layer = 0; layer < layers.size(); ++layer) {
      series[layer].name = "layer " + std::to_string(layer);
      for (std::size_t i = 0; i < ev.timesteps.size(); ++i) {
        series[layer].x.push_back(static_cast<double>(ev.timesteps[i]));
        series[layer].y.push_back(static_cast<double>(ev.ranks[i][layer]));
      }
    }
    write_line_plot(svg_path.string(), "effective rank across denoising timesteps", series);
  }

  ManifestWriter mf;
  mf.kv("command", "denoise-report");
  mf.kv("seed", std::to_string(seed));
  mf.kv("library_version", kLibraryVersion);
  mf.artifact(csv_path);
  mf.artifact(svg_path);
  mf.write(fs::path(out_dir) / "manifest.txt");
  std::printf("denoise report -> %s\n", out_dir.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FouRA workbench: frequency-domain low-rank adapters at desk scale"};
  app.require_subcommand(1);

  // train
  std::string train_config;
  long long train_seed = -1;
  long long train_target = -1;
  std::vector<std::uint64_t> train_seeds;
  std::string train_out = "out";
  bool store_f32 = false;
  auto* train = app.add_subcommand("train", "train adapters on a toy task");
  train->add_option("config", train_config, "key=value config file")->required();
  train->add_option("--seed", train_seed, "override the config seed");
  train->add_option("--target-id", train_target, "override the planted target id");
  train->add_option("--seeds", train_seeds, "sweep several seeds into per-seed subdirs");
  train->add_option("--out", train_out, "output directory");
  train->add_flag("--store-f32", store_f32, "store checkpoint tensors as f32");

  // analyze
  std::vector<std::string> analyze_ckpts;
  std::string analyze_base;
  std::size_t analyze_rank = 8;
  std::string analyze_out = "analysis";
  bool analyze_pairwise = false;
  double bound_c = 1.0, bound_rho = 1.0, bound_lambda = 0.0, bound_rhat = 0.0;
  double bound_n = 100.0, bound_delta = 0.1;
  auto* analyze = app.add_subcommand("analyze", "singular-value and subspace reports");
  analyze->add_option("checkpoints", analyze_ckpts, "trained checkpoints")->required();
  analyze->add_option("--base", analyze_base, "checkpoint supplying base weights");
  analyze->add_option("--rank", analyze_rank, "analysis rank");
  analyze->add_option("--out", analyze_out, "output directory");
  analyze->add_flag("--pairwise", analyze_pairwise, "emit pairwise projection norms");
  analyze->add_option("--bound-c", bound_c, "stability constant C");
  analyze->add_option("--bound-rho", bound_rho, "stability constant rho");
  analyze->add_option("--bound-lambda-min", bound_lambda, "loss Hessian floor");
  analyze->add_option("--bound-rhat", bound_rhat, "empirical error");
  analyze->add_option("--bound-n", bound_n, "training set size");
  analyze->add_option("--bound-delta", bound_delta, "confidence delta");

  // merge
  std::string merge_a, merge_b;
  std::vector<double> merge_alphas{1.0, 1.0};
  std::uint64_t merge_probe = 0;
  std::size_t merge_probes = 16;
  std::string merge_out = "merge";
  auto* merge = app.add_subcommand("merge", "training-free adapter combination");
  merge->add_option("first", merge_a, "first checkpoint")->required();
  merge->add_option("second", merge_b, "second checkpoint")->required();
  merge->add_option("--alphas", merge_alphas, "merge strengths")->expected(2);
  merge->add_option("--probe", merge_probe, "probe batch seed");
  merge->add_option("--probes", merge_probes, "number of probe batches");
  merge->add_option("--out", merge_out, "output directory");

  // gradcheck
  std::uint64_t gc_seed = 0;
  bool gc_fault = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  gradcheck->add_option("--seed", gc_seed, "seed for the audit layers");
  gradcheck->add_flag("--inject-fault", gc_fault, "corrupt gradients to test reporting");

  // denoise-report
  std::string dn_ckpt;
  std::uint64_t dn_seed = 0;
  std::string dn_out = "denoise";
  auto* dn = app.add_subcommand("denoise-report", "per-timestep effective-rank report");
  dn->add_option("checkpoint", dn_ckpt, "toy_denoise checkpoint")->required();
  dn->add_option("--seed", dn_seed, "evaluation seed");
  dn->add_option("--out", dn_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      return cmd_train(train_config, train_seed, train_target, train_seeds, train_out,
                       store_f32);
    }
    if (*analyze) {
      BoundParams bp;
      bp.c = bound_c;
      bp.rho = bound_rho;
      bp.lambda_min = bound_lambda;
      bp.r_hat = bound_rhat;
      return cmd_analyze(analyze_ckpts, analyze_base, analyze_rank, analyze_out,
                         analyze_pairwise, bp, bound_n, bound_delta);
    }
    if (*merge) {
      return cmd_merge(merge_a, merge_b, merge_alphas[0], merge_alphas[1], merge_probe,
                       merge_probes, merge_out);
    }
    if (*gradcheck) {
      return cmd_gradcheck(gc_seed, gc_fault);
    }
    if (*dn) {
      return cmd_denoise_report(dn_ckpt, dn_seed, dn_out);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const CheckpointError& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return kExitUsage;
  } catch (const IncompatibleCheckpoints& e) {
    std::fprintf(stderr, "incompatible checkpoints: %s\n", e.what());
    return kExitUsage;
  } catch (const IncompatibleAdapters& e) {
    std::fprintf(stderr, "incompatible adapters: %s\n", e.what());
    return kExitUsage;
  } catch (const TrainingDiverged& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return kExitNumerical;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumerical;
  }
  return kExitUsage;
}
