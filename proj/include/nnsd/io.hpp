#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nnsd/diagnostics.hpp"
#include "nnsd/domain.hpp"
#include "nnsd/inference.hpp"

namespace nnsd {

/// Everything a `fit` needs, with every default materialized.
struct RunConfig {
    Hyperparams hp;
    ChainConfig chain;
    int n_chains = 2;
    bool parallel = true;
    double rhat_threshold = kDefaultRhatThreshold;
    std::string units_file;
    std::optional<std::string> adjacency_file;
    ColumnSpec columns;
    std::string output_dir = "nnsd_out";

    /// Throws ConfigError naming the offending field.
    void validate() const;
};

nlohmann::json to_json(const RunConfig& config);

/// Applies the keys of `j` on top of `base`. Unknown keys are an error that lists them.
RunConfig apply_json(const nlohmann::json& j, RunConfig base = {});

/// File values first (when a path is given), then `overrides` (command-line flags).
/// The result is validated; units_file must be set by one of the two.
RunConfig parse_config(const std::optional<std::string>& path, const nlohmann::json& overrides = nlohmann::json::object());

/// Writes posterior_summary.csv, unit_estimates.csv, edge_probs.csv,
/// latent_positions.csv, traces.csv, diagnostics.csv and resolved_config.json.
/// Position draws go to position_draws.csv when they were stored.
void write_outputs(const std::string& dir, const RunConfig& config, const SpatialDomain& domain,
                   const std::vector<ChainDraws>& chains, const DiagnosticsReport& report,
                   const PosteriorSummary& summary);

/// Scalar traces from a traces.csv written by write_outputs, one matrix per chain.
std::vector<Matrix> read_traces(const std::string& path, std::vector<std::string>& names);

/// Writes text to a file, replacing it. Throws InputError when the path is not writable.
void write_text(const std::string& path, const std::string& text);

/// Exit statuses of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitInput = 2, kExitNotConverged = 3, kExitRuntime = 4 };

/// Runs one subcommand (fit, simulate, score, diagnose, compare). Errors are
/// reported on stderr as a single line: error: code=<kind> msg="<text>".
int cli_dispatch(int argc, const char* const* argv);

} // namespace nnsd
