#include "sds/commands.hpp"

#include <cstdio>
#include <exception>
#include <stdexcept>

#include <CLI11.hpp>

#include "sds/checkpoint.hpp"
#include "sds/dataio.hpp"
#include "sds/experiment.hpp"
#include "sds/optim.hpp"
#include "sds/pipeline.hpp"
#include "sds/synthdata.hpp"

namespace sds {

namespace fs = std::filesystem;

RunConfig resolve_config(const CommonOptions& opts) {
  RunConfig cfg = opts.config ? load_run_config(*opts.config) : RunConfig{};
  if (opts.seed) cfg.set_seed(*opts.seed);
  if (opts.out) cfg.out_dir = *opts.out;
  return cfg;
}

fs::path train_manifest(const RunConfig& cfg) { return cfg.data_dir / "train.jsonl"; }
fs::path test_manifest(const RunConfig& cfg) { return cfg.data_dir / "test.jsonl"; }

namespace {

std::string loss_csv(const std::vector<LossBreakdown>& history) {
  std::string out = "iteration,classification,regression,segmentation,total\n";
  for (std::size_t i = 0; i < history.size(); ++i) {
    const LossBreakdown& b = history[i];
    out += std::to_string(i) + "," + format_double(b.classification) + "," + format_double(b.regression) + "," +
           format_double(b.segmentation) + "," + format_double(b.total) + "\n";
  }
  return out;
}

ProgressFn progress_printer(std::ostream& log, const std::string& role) {
  return [&log, role, sum = 0.0, n = std::size_t{0}](std::size_t it, const LossBreakdown& b) mutable {
    sum += b.total;
    if (++n == 250) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "%s iteration %zu: mean loss %.4f", role.c_str(), it + 1, sum / n);
      log << buf << std::endl;
      sum = 0.0;
      n = 0;
    }
  };
}

Dataset load_dataset(const fs::path& manifest, std::ostream& log) {
  if (!fs::exists(manifest)) throw DataError(manifest.string() + ": manifest not found (run `sdsrcnn synth` first)");
  Dataset d = Dataset::load(manifest);
  log << "loaded " << d.size() << " images from " << manifest.string() << std::endl;
  return d;
}

Checkpoint load_role(const fs::path& path, const std::string& role) {
  if (!fs::exists(path)) throw DataError(path.string() + ": checkpoint not found");
  Checkpoint c = load_checkpoint(path);
  const auto it = c.meta.find("role");
  if (it == c.meta.end() || it->second != role) {
    throw DataError(path.string() + ": not a " + role + " checkpoint");
  }
  return c;
}

}  // namespace

int cmd_synth(const CommonOptions& opts, std::ostream& log) {
  RunConfig cfg = resolve_config(opts);
  const fs::path dir = opts.out ? *opts.out : cfg.data_dir;
  const fs::path tr = generate_dataset(cfg.scene, cfg.train_images, "train", dir);
  log << "wrote " << cfg.train_images << " images, " << tr.string() << std::endl;
  const fs::path te = generate_dataset(cfg.scene, cfg.test_images, "test", dir);
  log << "wrote " << cfg.test_images << " images, " << te.string() << std::endl;
  return kExitOk;
}

int cmd_train(const CommonOptions& opts, const std::string& stage_name, const std::optional<fs::path>& rpn_path,
              std::ostream& log) {
  const RunConfig cfg = resolve_config(opts);
  const PipelineConfig p = effective_pipeline(cfg);
  const Dataset train = load_dataset(train_manifest(cfg), log);
  TrainResult result;
  if (stage_name == "rpn") {
    result = train_rpn(train, p, progress_printer(log, "rpn"));
  } else if (stage_name == "bcn") {
    const Checkpoint rpn = load_role(rpn_path.value_or(cfg.out_dir / "rpn.ckpt"), "rpn");
    result = train_bcn(train, rpn.net, p, progress_printer(log, "bcn"));
  } else {
    throw std::invalid_argument("unknown stage '" + stage_name + "' (expected rpn or bcn)");
  }
  Checkpoint ckpt{std::move(result.net), {{"role", stage_name}, {"mean_height", format_double(result.mean_height)}}};
  const fs::path ckpt_path = cfg.out_dir / (stage_name + ".ckpt");
  fs::create_directories(cfg.out_dir);
  save_checkpoint(ckpt, ckpt_path);
  write_text_file(cfg.out_dir / (stage_name + "_loss.csv"), loss_csv(result.history));
  log << "wrote " << ckpt_path.string() << " after " << result.history.size() << " iterations" << std::endl;
  return kExitOk;
}

int cmd_detect(const CommonOptions& opts, const fs::path& rpn_path, const std::optional<fs::path>& bcn_path,
               const fs::path& manifest, std::ostream& log) {
  const RunConfig cfg = resolve_config(opts);
  const PipelineConfig p = effective_pipeline(cfg);
  const Checkpoint rpn = load_role(rpn_path, "rpn");
  std::optional<Checkpoint> bcn;
  if (bcn_path) bcn = load_role(*bcn_path, "bcn");
  const Dataset data = load_dataset(manifest, log);
  const auto dets = detect_dataset(data, rpn.net, bcn ? &bcn->net : nullptr, p);
  const fs::path out = cfg.out_dir / "detections.jsonl";
  write_detections(to_records(dets), out);
  log << "wrote " << out.string() << (bcn ? "" : " (RPN only)") << std::endl;
  return kExitOk;
}

int cmd_eval(const CommonOptions& opts, const fs::path& detections, const fs::path& manifest,
             const std::string& protocol, const std::string& score, std::ostream& log) {
  const RunConfig cfg = resolve_config(opts);
  const ScoreKind kind = parse_score_kind(score);
  if (protocol != "mr" && protocol != "ap") {
    throw std::invalid_argument("unknown protocol '" + protocol + "' (expected mr or ap)");
  }
  const auto records = read_detections(detections);
  std::vector<std::vector<Annotation>> gts;
  for (const ManifestRecord& r : read_manifest(manifest)) gts.push_back(r.annotations);
  const auto images = eval_images(records, gts, kind);

  const fs::path csv = cfg.out_dir / (protocol + "_" + score + ".csv");
  char buf[128];
  if (protocol == "mr") {
    const EvalCurve curve = mr_fppi_curve(images, cfg.eval_iou);
    const auto refs = lamr_references();
    const auto samples = lamr_samples(curve);
    std::vector<std::pair<double, double>> summary;
    for (std::size_t k = 0; k < refs.size(); ++k) summary.emplace_back(refs[k], samples[k]);
    write_curve_csv(curve, summary, csv);
    std::snprintf(buf, sizeof buf, "log-average miss rate (%s): %.17g", score.c_str(), log_average_miss_rate(curve));
  } else {
    const EvalCurve curve = precision_recall_curve(images, cfg.eval_iou);
    const auto samples = ap_samples(curve);
    std::vector<std::pair<double, double>> summary;
    for (std::size_t k = 0; k < samples.size(); ++k) summary.emplace_back(static_cast<double>(k) / 10.0, samples[k]);
    write_curve_csv(curve, summary, csv);
    std::snprintf(buf, sizeof buf, "average precision (%s): %.17g", score.c_str(),
                  average_precision(images, cfg.eval_iou));
  }
  log << buf << "\nwrote " << csv.string() << std::endl;
  return kExitOk;
}

int cmd_gradcheck(const CommonOptions& opts, std::ostream& log) {
  const RunConfig cfg = resolve_config(opts);
  const GradcheckSuite suite = run_gradcheck_suite(cfg);
  char buf[160];
  for (const GradcheckCase& c : suite.cases) {
    std::snprintf(buf, sizeof buf, "%-4s %-20s max relative error %.3e over %zu entries (%zu kink draws skipped)",
                  c.passed ? "ok" : "FAIL", c.name.c_str(), c.max_error, c.checked, c.rejected);
    log << buf;
    if (c.smallest_step < 1e-3) {
      std::snprintf(buf, sizeof buf, " (some blocks at step %.0e)", c.smallest_step);
      log << buf;
    }
    if (!c.passed && !c.detail.empty()) log << " [" << c.detail << "]";
    log << '\n';
  }
  std::snprintf(buf, sizeof buf, "%s: tolerance %.1e, %.1f s", suite.passed() ? "passed" : "FAILED", suite.tolerance,
                suite.seconds);
  log << buf << std::endl;
  return suite.passed() ? kExitOk : kExitCheck;
}

int cmd_ablate(const CommonOptions& opts, std::ostream& log) {
  const RunConfig cfg = resolve_config(opts);
  if (!fs::exists(train_manifest(cfg)) || !fs::exists(test_manifest(cfg))) {
    log << "datasets missing under " << cfg.data_dir.string() << ", generating" << std::endl;
    CommonOptions synth = opts;
    synth.out = cfg.data_dir;
    cmd_synth(synth, log);
  }
  const Dataset train = load_dataset(train_manifest(cfg), log);
  const Dataset test = load_dataset(test_manifest(cfg), log);
  const auto settings = ablation_settings();
  const auto rows = run_ablation(train, test, cfg, settings, [&log](const std::string& s) { log << s << std::endl; });
  fs::create_directories(cfg.out_dir);
  const std::string table = format_ablation_table(rows);
  write_text_file(cfg.out_dir / "ablation.txt", table);
  write_text_file(cfg.out_dir / "ablation.csv", format_ablation_csv(rows));
  log << table;
  return kExitOk;
}

int cmd_dumpfeat(const CommonOptions& opts, const fs::path& checkpoint, const fs::path& image, const std::string& layer,
                 std::ostream& log) {
  const RunConfig cfg = resolve_config(opts);
  if (!fs::exists(checkpoint)) throw DataError(checkpoint.string() + ": checkpoint not found");
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const GrayImage img = read_pgm(image);
  const ActivationRecord rec = forward(ckpt.net, normalize_input(img.to_tensor(), cfg.pipeline.input_mean));
  try {
    (void)rec.layer_output(layer);
  } catch (const std::out_of_range&) {
    throw DataError("unknown layer '" + layer + "'");
  }
  const fs::path out = cfg.out_dir / (image.stem().string() + "_" + layer + ".pgm");
  fs::create_directories(cfg.out_dir);
  dump_feature_map(rec, layer, out);
  log << "wrote " << out.string() << std::endl;
  return kExitOk;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-stage pedestrian detector with segmentation infusion"};
  app.require_subcommand(1);

  CommonOptions common;
  std::string config;
  std::uint64_t seed = 0;
  std::string out_dir;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "Run config (key = value lines)");
    sub->add_option("--seed", seed, "Overrides the config seed");
    sub->add_option("--out", out_dir, "Output directory");
  };

  CLI::App* synth = app.add_subcommand("synth", "Generate the synthetic train and test sets");
  add_common(synth);

  CLI::App* train = app.add_subcommand("train", "Train one stage");
  std::string stage_name;
  std::string rpn_for_bcn;
  train->add_option("stage", stage_name, "rpn or bcn")->required()->check(CLI::IsMember({"rpn", "bcn"}));
  train->add_option("--rpn", rpn_for_bcn, "RPN checkpoint for BCN training (default <out>/rpn.ckpt)");
  add_common(train);

  CLI::App* detect_cmd = app.add_subcommand("detect", "Run the detector over a manifest");
  std::string rpn_ckpt;
  std::string bcn_ckpt;
  std::string detect_manifest;
  detect_cmd->add_option("manifest", detect_manifest, "Dataset manifest (default <data_dir>/test.jsonl)");
  detect_cmd->add_option("--rpn", rpn_ckpt, "RPN checkpoint (default <out>/rpn.ckpt)");
  detect_cmd->add_option("--bcn", bcn_ckpt, "BCN checkpoint; omit for RPN-only detection");
  add_common(detect_cmd);

  CLI::App* eval = app.add_subcommand("eval", "Score detections against a manifest");
  std::string eval_dets;
  std::string eval_manifest;
  std::string protocol = "mr";
  std::string score = "fused";
  eval->add_option("detections", eval_dets, "Detections file")->required();
  eval->add_option("manifest", eval_manifest, "Ground-truth manifest")->required();
  eval->add_option("--protocol", protocol, "mr (log-average miss rate) or ap")->check(CLI::IsMember({"mr", "ap"}));
  eval->add_option("--score", score, "fused, rpn or bcn")->check(CLI::IsMember({"fused", "rpn", "bcn"}));
  add_common(eval);

  CLI::App* grad = app.add_subcommand("gradcheck", "Finite-difference check of every layer and loss");
  add_common(grad);

  CLI::App* ablate = app.add_subcommand("ablate", "Full configuration plus each component switched off");
  add_common(ablate);

  CLI::App* dump = app.add_subcommand("dumpfeat", "Write a channel-max feature map as a graymap");
  std::string dump_ckpt;
  std::string dump_image;
  std::string layer = "relu5";
  dump->add_option("checkpoint", dump_ckpt, "Network checkpoint")->required();
  dump->add_option("image", dump_image, "Input image (.pgm)")->required();
  dump->add_option("--layer", layer, "Layer name (default relu5)");
  add_common(dump);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  if (!config.empty()) common.config = config;
  if (sub->count("--seed") > 0) common.seed = seed;
  if (!out_dir.empty()) common.out = out_dir;

  try {
    if (sub == synth) return cmd_synth(common, out);
    if (sub == train) {
      return cmd_train(common, stage_name, rpn_for_bcn.empty() ? std::nullopt : std::optional<fs::path>(rpn_for_bcn),
                       out);
    }
    if (sub == detect_cmd) {
      const RunConfig cfg = resolve_config(common);
      const fs::path rpn = rpn_ckpt.empty() ? cfg.out_dir / "rpn.ckpt" : fs::path(rpn_ckpt);
      const std::optional<fs::path> bcn = bcn_ckpt.empty() ? std::nullopt : std::optional<fs::path>(bcn_ckpt);
      const fs::path manifest = detect_manifest.empty() ? test_manifest(cfg) : fs::path(detect_manifest);
      return cmd_detect(common, rpn, bcn, manifest, out);
    }
    if (sub == eval) return cmd_eval(common, eval_dets, eval_manifest, protocol, score, out);
    if (sub == grad) return cmd_gradcheck(common, out);
    if (sub == ablate) return cmd_ablate(common, out);
    if (sub == dump) return cmd_dumpfeat(common, dump_ckpt, dump_image, layer, out);
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitCheck;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace sds
