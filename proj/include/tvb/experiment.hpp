#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "tvb/metrics.hpp"
#include "tvb/problems.hpp"
#include "tvb/vb.hpp"

namespace tvb {

enum class MethodKind {
    TuckerVbSingle,
    TuckerVbMode,
    TuckerVbSlice,
    DirectVb,
    Lcurve,
    Gcv,
    Upre,
    Dp,
};

std::string method_name(MethodKind kind);
MethodKind parse_method(const std::string& name); // UsageError on unknown names
bool is_vb_method(MethodKind kind);

enum class BaselineSpace { Reduced, Full };

struct ExperimentConfig {
    std::string experiment; // fredholm | deblur | heat | bench | solve
    std::vector<double> noise_levels;
    int trials = 10;
    std::vector<MethodKind> methods;
    std::vector<Index> ranks;
    std::uint64_t base_seed = 0;
    bool timing = true; // when off, runtime_ms is written as 0.000
    BaselineSpace baseline_space = BaselineSpace::Reduced;
    VBConfig vb{}; // variant is overridden per method
    double dp_tau = 1.0;

    Index fredholm_n = 32;
    double fredholm_alpha = 0.15;

    std::string deblur_image = "synthetic64"; // or a path to a PGM file
    double deblur_sigma_row = 1.3;
    double deblur_sigma_col = 0.7;

    Shape heat_grid = {16, 16, 16};
    std::array<double, 3> heat_kappa = {0.01, 0.005, 0.02};
    double heat_t = 0.1;

    std::vector<Index> bench_dims = {16, 24, 32};
    Index bench_rank = 12;
    double bench_noise = 0.05;

    std::string solve_a_csv;
    std::string solve_y_csv;
    std::string solve_x_true_csv; // optional
    double solve_sigma2 = 0.0;    // required by upre / dp

    static ExperimentConfig from_json_file(const std::string& path);
    static ExperimentConfig from_json_text(const std::string& text);
};

struct RunOutputs {
    std::string detail_path;
    std::string summary_path;
    std::vector<MetricRow> rows;
    /// Result of the last VB method in the method list at the first noise
    /// level, trial 0; feeds --dump-alphas and the diagnostics consumers.
    std::optional<VBResult> diagnostics;
};

/// Runs one generator experiment (fredholm, deblur or heat): per noise level
/// and trial, every configured method on the same instance. Method failures
/// become rows with a non-ok status; the run continues.
RunOutputs run_experiment(const ExperimentConfig& cfg, const std::string& out_csv,
                          const std::string& dump_alphas_csv = "",
                          const std::string& write_images_dir = "");

struct BenchRow {
    Index dim = 0;
    Index problem_size = 0;
    double tucker_ms_mean = 0.0;
    double tucker_ms_std = 0.0;
    std::optional<double> direct_ms_mean; // empty when over the size limit
    std::optional<double> direct_ms_std;
    std::optional<double> speedup;
};

/// Timing comparison of the reduced solver (project + solve) against the
/// full-space solver (materialize + solve) across problem dimensions.
std::vector<BenchRow> run_bench(const ExperimentConfig& cfg, const std::string& out_csv);

/// Baseline selectors and direct VB on an explicit system loaded from CSV
/// files; writes the detail CSV plus one x_hat_<method>.csv per method.
RunOutputs run_solve(const ExperimentConfig& cfg, const std::string& out_csv);

/// Writes mode,slice_index,e_alpha,lambda rows for a VB result. Single
/// precision layouts produce one row with mode 0.
void dump_diagnostics(const VBResult& result, const std::string& path);

/// Full command-line entry point; returns the process exit code
/// (0 success, 2 usage or configuration error, 3 runtime failure).
int run_cli(int argc, char** argv);

} // namespace tvb
