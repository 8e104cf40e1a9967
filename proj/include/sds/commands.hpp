#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "sds/config.hpp"

namespace sds {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitCheck = 3 };

struct CommonOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
};

/// Config file (or the built-in defaults) with --seed applied. --out
/// replaces out_dir.
RunConfig resolve_config(const CommonOptions& opts);

/// Manifest paths inside cfg.data_dir.
std::filesystem::path train_manifest(const RunConfig& cfg);
std::filesystem::path test_manifest(const RunConfig& cfg);

// Every command writes human-readable progress to `log` and its results to
// files; exceptions are mapped to exit codes by run_cli.

/// Writes train and test sets into cfg.data_dir (--out overrides it).
int cmd_synth(const CommonOptions& opts, std::ostream& log);

/// stage "rpn" writes rpn.ckpt + rpn_loss.csv; stage "bcn" reads the RPN
/// checkpoint (default out_dir/rpn.ckpt) and writes bcn.ckpt + bcn_loss.csv.
int cmd_train(const CommonOptions& opts, const std::string& stage, const std::optional<std::filesystem::path>& rpn,
              std::ostream& log);

/// Writes out_dir/detections.jsonl. No BCN checkpoint means RPN-only mode.
int cmd_detect(const CommonOptions& opts, const std::filesystem::path& rpn,
               const std::optional<std::filesystem::path>& bcn, const std::filesystem::path& manifest,
               std::ostream& log);

/// Prints the summary metric and writes out_dir/<protocol>_<score>.csv.
int cmd_eval(const CommonOptions& opts, const std::filesystem::path& detections, const std::filesystem::path& manifest,
             const std::string& protocol, const std::string& score, std::ostream& log);

int cmd_gradcheck(const CommonOptions& opts, std::ostream& log);

/// Writes out_dir/ablation.csv and out_dir/ablation.txt.
int cmd_ablate(const CommonOptions& opts, std::ostream& log);

/// Writes out_dir/<image stem>_<layer>.pgm.
int cmd_dumpfeat(const CommonOptions& opts, const std::filesystem::path& checkpoint, const std::filesystem::path& image,
                 const std::string& layer, std::ostream& log);

/// Parses the command line and dispatches; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sds
