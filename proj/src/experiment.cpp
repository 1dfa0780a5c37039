#include "tvb/experiment.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tvb/baselines.hpp"
#include "tvb/errors.hpp"
#include "tvb/pgm.hpp"

namespace tvb {

namespace {

using nlohmann::json;

// ---------------------------------------------------------------------------
// formatting

std::string fmt_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw NumericalError("number formatting failed");
    return std::string(buf, ptr);
}

std::string fmt_fixed3(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_double(*v) : ""; }

std::string sanitize(std::string s) {
    for (char& c : s) {
        if (c == ',' || c == '"') c = ';';
        if (c == '\n' || c == '\r') c = ' ';
    }
    return s;
}

std::string join_semicolon(const std::vector<double>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ';';
        out += fmt_double(v[i]);
    }
    return out;
}

std::string summary_path_for(const std::string& out_csv) {
    if (out_csv.size() > 4 && out_csv.substr(out_csv.size() - 4) == ".csv")
        return out_csv.substr(0, out_csv.size() - 4) + ".summary.csv";
    return out_csv + ".summary.csv";
}

// ---------------------------------------------------------------------------
// timing

class Stopwatch {
  public:
    void start() { t0_ = std::chrono::steady_clock::now(); }
    double stop_ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0_)
            .count();
    }

  private:
    std::chrono::steady_clock::time_point t0_;
};

double sample_mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / double(v.size());
}

double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = sample_mean(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / double(v.size() - 1));
}

// ---------------------------------------------------------------------------
// CSV output

void write_detail_csv(const std::string& path, const std::vector<MetricRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "method,noise_level,trial,seed,rel_error,psnr_db,ssim,sigma_hat,lambda_report,"
           "runtime_ms,iterations,status\n";
    for (const MetricRow& r : rows) {
        out << r.method << ',' << fmt_double(r.noise_level) << ',' << r.trial << ',' << r.seed
            << ',' << fmt_opt(r.rel_error) << ',' << fmt_opt(r.psnr_db) << ',' << fmt_opt(r.ssim)
            << ',' << fmt_opt(r.sigma_hat) << ',' << join_semicolon(r.lambda_report) << ','
            << fmt_fixed3(r.runtime_ms) << ',' << r.iterations << ',' << r.status << '\n';
    }
    if (!out) throw IoError("failed writing " + path);
}

struct GroupStats {
    int ok = 0;
    std::vector<double> rel, psnr, ssim, sigma, runtime, iters;
};

void write_summary_csv(const std::string& path, const std::vector<MetricRow>& rows,
                       const std::vector<std::string>& method_order,
                       const std::vector<double>& noise_order) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "method,noise_level,trials_ok,rel_error_mean,rel_error_std,psnr_db_mean,psnr_db_std,"
           "ssim_mean,ssim_std,sigma_hat_mean,sigma_hat_std,runtime_ms_mean,runtime_ms_std,"
           "iterations_mean\n";
    for (const std::string& method : method_order) {
        for (double noise : noise_order) {
            GroupStats g;
            for (const MetricRow& r : rows) {
                if (r.method != method || r.noise_level != noise) continue;
                if (r.status.rfind("ok", 0) != 0) continue;
                ++g.ok;
                if (r.rel_error) g.rel.push_back(*r.rel_error);
                if (r.psnr_db) g.psnr.push_back(*r.psnr_db);
                if (r.ssim) g.ssim.push_back(*r.ssim);
                if (r.sigma_hat) g.sigma.push_back(*r.sigma_hat);
                g.runtime.push_back(r.runtime_ms);
                g.iters.push_back(double(r.iterations));
            }
            auto pair_or_empty = [](const std::vector<double>& v) {
                if (v.empty()) return std::string(",");
                return fmt_double(sample_mean(v)) + "," + fmt_double(sample_std(v));
            };
            out << method << ',' << fmt_double(noise) << ',' << g.ok << ','
                << pair_or_empty(g.rel) << ',' << pair_or_empty(g.psnr) << ','
                << pair_or_empty(g.ssim) << ',' << pair_or_empty(g.sigma) << ','
                << pair_or_empty(g.runtime) << ','
                << (g.iters.empty() ? "" : fmt_double(sample_mean(g.iters))) << '\n';
        }
    }
    if (!out) throw IoError("failed writing " + path);
}

// ---------------------------------------------------------------------------
// CSV input (solve command)

std::vector<std::vector<double>> read_csv_rows(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw IoError(path + ": cannot parse '" + cell + "' as a number");
            }
        }
        if (!row.empty()) rows.push_back(std::move(row));
    }
    if (rows.empty()) throw IoError(path + ": no numeric data");
    return rows;
}

Matrix read_csv_matrix(const std::string& path) {
    auto rows = read_csv_rows(path);
    const size_t cols = rows[0].size();
    for (const auto& r : rows)
        if (r.size() != cols) throw IoError(path + ": ragged rows");
    Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(cols));
    for (size_t i = 0; i < rows.size(); ++i)
        for (size_t j = 0; j < cols; ++j)
            m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    return m;
}

Vector read_csv_vector(const std::string& path) {
    Matrix m = read_csv_matrix(path);
    if (m.cols() == 1) return m.col(0);
    if (m.rows() == 1) return m.row(0).transpose();
    throw IoError(path + ": expected a single row or column of numbers");
}

void write_csv_vector(const std::string& path, const Vector& v) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    for (Index i = 0; i < v.size(); ++i) out << fmt_double(v[i]) << '\n';
}

// ---------------------------------------------------------------------------
// image output

DenseTensor central_slice(const Vector& data, const Shape& shape) {
    if (shape.size() == 2) return DenseTensor(shape, data);
    if (shape.size() == 3) {
        DenseTensor t3(shape, data);
        const Index k3 = shape[2] / 2;
        DenseTensor t2(Shape{shape[0], shape[1]});
        for (Index j = 0; j < shape[1]; ++j)
            for (Index i = 0; i < shape[0]; ++i) t2.at({i, j}) = t3.at({i, j, k3});
        return t2;
    }
    throw DimensionError("image export supports 2-D and 3-D fields only");
}

void write_field_image(const std::string& path, const Vector& data, const Shape& shape) {
    write_pgm(path, central_slice(data, shape));
}

void write_error_image(const std::string& path, const Vector& est, const Vector& truth,
                       const Shape& shape) {
    Vector err = (est - truth).cwiseAbs();
    double peak = err.maxCoeff();
    if (peak > 0.0) err /= peak;
    write_pgm(path, central_slice(err, shape));
}

// ---------------------------------------------------------------------------
// methods

struct MethodEntry {
    MethodKind kind;
    const char* name;
};

constexpr MethodEntry kMethods[] = {
    {MethodKind::TuckerVbSingle, "tucker_vb_single"}, {MethodKind::TuckerVbMode, "tucker_vb_mode"},
    {MethodKind::TuckerVbSlice, "tucker_vb_slice"},   {MethodKind::DirectVb, "direct_vb"},
    {MethodKind::Lcurve, "lcurve"},                   {MethodKind::Gcv, "gcv"},
    {MethodKind::Upre, "upre"},                       {MethodKind::Dp, "dp"},
};

} // namespace

std::string method_name(MethodKind kind) {
    for (const MethodEntry& e : kMethods)
        if (e.kind == kind) return e.name;
    throw UsageError("unknown method kind");
}

MethodKind parse_method(const std::string& name) {
    for (const MethodEntry& e : kMethods)
        if (name == e.name) return e.kind;
    throw UsageError("unknown method '" + name + "'");
}

bool is_vb_method(MethodKind kind) {
    return kind == MethodKind::TuckerVbSingle || kind == MethodKind::TuckerVbMode ||
           kind == MethodKind::TuckerVbSlice || kind == MethodKind::DirectVb;
}

// ---------------------------------------------------------------------------
// configuration

namespace {

[[noreturn]] void config_error(const std::string& msg) { throw UsageError("config: " + msg); }

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* k : allowed)
            if (item.key() == k) ok = true;
        if (!ok) config_error("unknown key '" + item.key() + "' in " + where);
    }
}

} // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        config_error(std::string("invalid JSON: ") + e.what());
    }
    ExperimentConfig cfg;
    try {
        check_keys(j,
                   {"experiment", "noise_levels", "trials", "methods", "ranks", "base_seed",
                    "timing", "baseline_space", "vb", "dp_tau", "fredholm", "deblur", "heat",
                    "bench", "solve"},
                   "top level");
        if (j.contains("experiment")) cfg.experiment = j["experiment"].get<std::string>();
        if (j.contains("noise_levels"))
            cfg.noise_levels = j["noise_levels"].get<std::vector<double>>();
        if (j.contains("trials")) cfg.trials = j["trials"].get<int>();
        if (j.contains("methods"))
            for (const auto& m : j["methods"])
                cfg.methods.push_back(parse_method(m.get<std::string>()));
        if (j.contains("ranks")) {
            for (const auto& r : j["ranks"]) cfg.ranks.push_back(r.get<Index>());
        }
        if (j.contains("base_seed")) cfg.base_seed = j["base_seed"].get<std::uint64_t>();
        if (j.contains("timing")) {
            const json& t = j["timing"];
            if (t.is_boolean()) cfg.timing = t.get<bool>();
            else if (t.is_string() && (t == "on" || t == "off")) cfg.timing = (t == "on");
            else config_error("timing must be a boolean or \"on\"/\"off\"");
        }
        if (j.contains("baseline_space")) {
            std::string s = j["baseline_space"].get<std::string>();
            if (s == "reduced") cfg.baseline_space = BaselineSpace::Reduced;
            else if (s == "full") cfg.baseline_space = BaselineSpace::Full;
            else config_error("baseline_space must be 'reduced' or 'full'");
        }
        if (j.contains("vb")) {
            const json& v = j["vb"];
            check_keys(v, {"a0", "b0", "tol", "max_iters", "direct_max_n"}, "vb");
            if (v.contains("a0")) cfg.vb.prior.a0 = v["a0"].get<double>();
            if (v.contains("b0")) cfg.vb.prior.b0 = v["b0"].get<double>();
            if (v.contains("tol")) cfg.vb.tol = v["tol"].get<double>();
            if (v.contains("max_iters")) cfg.vb.max_iters = v["max_iters"].get<int>();
            if (v.contains("direct_max_n")) cfg.vb.direct_max_n = v["direct_max_n"].get<Index>();
        }
        if (j.contains("dp_tau")) cfg.dp_tau = j["dp_tau"].get<double>();
        if (j.contains("fredholm")) {
            const json& f = j["fredholm"];
            check_keys(f, {"n", "alpha"}, "fredholm");
            if (f.contains("n")) cfg.fredholm_n = f["n"].get<Index>();
            if (f.contains("alpha")) cfg.fredholm_alpha = f["alpha"].get<double>();
        }
        if (j.contains("deblur")) {
            const json& d = j["deblur"];
            check_keys(d, {"image", "sigma_row", "sigma_col"}, "deblur");
            if (d.contains("image")) cfg.deblur_image = d["image"].get<std::string>();
            if (d.contains("sigma_row")) cfg.deblur_sigma_row = d["sigma_row"].get<double>();
            if (d.contains("sigma_col")) cfg.deblur_sigma_col = d["sigma_col"].get<double>();
        }
        if (j.contains("heat")) {
            const json& h = j["heat"];
            check_keys(h, {"grid", "kappa", "t_final"}, "heat");
            if (h.contains("grid")) {
                cfg.heat_grid = h["grid"].get<Shape>();
                if (cfg.heat_grid.size() != 3) config_error("heat.grid must have 3 entries");
            }
            if (h.contains("kappa")) {
                auto k = h["kappa"].get<std::vector<double>>();
                if (k.size() != 3) config_error("heat.kappa must have 3 entries");
                std::copy(k.begin(), k.end(), cfg.heat_kappa.begin());
            }
            if (h.contains("t_final")) cfg.heat_t = h["t_final"].get<double>();
        }
        if (j.contains("bench")) {
            const json& b = j["bench"];
            check_keys(b, {"dims", "rank", "noise"}, "bench");
            if (b.contains("dims")) cfg.bench_dims = b["dims"].get<std::vector<Index>>();
            if (b.contains("rank")) cfg.bench_rank = b["rank"].get<Index>();
            if (b.contains("noise")) cfg.bench_noise = b["noise"].get<double>();
        }
        if (j.contains("solve")) {
            const json& s = j["solve"];
            check_keys(s, {"a_csv", "y_csv", "x_true_csv", "sigma2"}, "solve");
            if (s.contains("a_csv")) cfg.solve_a_csv = s["a_csv"].get<std::string>();
            if (s.contains("y_csv")) cfg.solve_y_csv = s["y_csv"].get<std::string>();
            if (s.contains("x_true_csv")) cfg.solve_x_true_csv = s["x_true_csv"].get<std::string>();
            if (s.contains("sigma2")) cfg.solve_sigma2 = s["sigma2"].get<double>();
        }
    } catch (const json::exception& e) {
        config_error(std::string("bad field type: ") + e.what());
    }
    if (cfg.trials < 1) config_error("trials must be at least 1");
    for (double s : cfg.noise_levels)
        if (s < 0.0) config_error("noise levels must be non-negative");
    for (Index r : cfg.ranks)
        if (r < 1) config_error("ranks must be positive");
    return cfg;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

// ---------------------------------------------------------------------------
// diagnostics

void dump_diagnostics(const VBResult& result, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "mode,slice_index,e_alpha,lambda\n";
    auto emit = [&](Index mode, Index slice, size_t c) {
        out << mode << ',' << slice << ',' << fmt_double(result.alpha[c].mean()) << ','
            << fmt_double(result.lambda[c]) << '\n';
    };
    switch (result.variant) {
    case VBVariant::Single:
        emit(0, 0, 0);
        break;
    case VBVariant::PerMode:
        for (size_t k = 0; k < result.alpha.size(); ++k)
            emit(static_cast<Index>(k + 1), 0, k);
        break;
    case VBVariant::PerSlice: {
        size_t c = 0;
        for (size_t k = 0; k < result.ranks.size(); ++k)
            for (Index i = 0; i < result.ranks[k]; ++i, ++c)
                emit(static_cast<Index>(k + 1), i, c);
        break;
    }
    }
    if (!out) throw IoError("failed writing " + path);
}

// ---------------------------------------------------------------------------
// experiment runner

namespace {

std::vector<Index> effective_ranks(const ExperimentConfig& cfg) {
    if (!cfg.ranks.empty()) return cfg.ranks;
    if (cfg.experiment == "fredholm") return {12, 12};
    if (cfg.experiment == "deblur") return {48, 48};
    if (cfg.experiment == "heat") return {12, 12, 12};
    config_error("ranks are required for experiment '" + cfg.experiment + "'");
}

GeneratedProblem make_instance(const ExperimentConfig& cfg, const std::vector<Index>& ranks,
                               double noise, std::uint64_t seed) {
    if (cfg.experiment == "fredholm") {
        FredholmSpec spec;
        spec.n = cfg.fredholm_n;
        spec.alpha = cfg.fredholm_alpha;
        if (ranks.size() != 2) config_error("fredholm needs 2 rank entries");
        return gen_fredholm(spec, ranks, noise, seed);
    }
    if (cfg.experiment == "deblur") {
        if (ranks.size() != 2) config_error("deblur needs 2 rank entries");
        DeblurSpec spec{cfg.deblur_image == "synthetic64" ? synthetic_test_image(64)
                                                          : read_pgm(cfg.deblur_image),
                        cfg.deblur_sigma_row, cfg.deblur_sigma_col, ranks};
        return gen_deblur(spec, noise, seed);
    }
    if (cfg.experiment == "heat") {
        if (ranks.size() != 3) config_error("heat needs 3 rank entries");
        HeatSpec spec;
        spec.grid = cfg.heat_grid;
        spec.kappa = cfg.heat_kappa;
        spec.t_final = cfg.heat_t;
        return gen_heat(spec, ranks, noise, seed);
    }
    config_error("unknown experiment '" + cfg.experiment + "'");
}

VBVariant variant_for(MethodKind kind) {
    switch (kind) {
    case MethodKind::TuckerVbSingle: return VBVariant::Single;
    case MethodKind::TuckerVbMode: return VBVariant::PerMode;
    case MethodKind::TuckerVbSlice: return VBVariant::PerSlice;
    default: return VBVariant::Single; // direct_vb
    }
}

/// Shared per-instance artifacts, each built at most once per trial.
struct TrialContext {
    const ExperimentConfig& cfg;
    const GeneratedProblem& gp;
    std::optional<ReducedSystem> reduced;
    std::optional<SvdSystem> svd;

    const ReducedSystem& ensure_reduced() {
        if (!reduced) reduced = reduce(gp.instance.op, gp.subspace, gp.instance.y);
        return *reduced;
    }

    const SvdSystem& ensure_svd() {
        if (svd) return *svd;
        const ForwardOperator& op = gp.instance.op;
        const Vector& y = gp.instance.y;
        if (cfg.baseline_space == BaselineSpace::Reduced) {
            if (const auto* sep = std::get_if<SeparableOp>(&op)) {
                std::vector<Matrix> projected(sep->factors.size());
                for (size_t k = 0; k < sep->factors.size(); ++k)
                    projected[k] = sep->factors[k] * gp.subspace.factors[k];
                svd = svd_system_from_kron(projected, y);
            } else {
                svd = svd_system_from_dense(ensure_reduced().a_tilde, y);
            }
        } else {
            if (const auto* sep = std::get_if<SeparableOp>(&op))
                svd = svd_system_from_kron(sep->factors, y);
            else if (const auto* dense = std::get_if<DenseOp>(&op))
                svd = svd_system_from_dense(dense->a, y);
            else svd = svd_system_from_dense(materialize(op), y);
        }
        return *svd;
    }
};

struct MethodOutcome {
    Vector x_hat;
    std::optional<VBResult> vb;
};

MethodOutcome run_method(TrialContext& ctx, MethodKind kind, double noise, MetricRow& row,
                         Stopwatch& watch) {
    const ExperimentConfig& cfg = ctx.cfg;
    MethodOutcome out;
    if (is_vb_method(kind)) {
        VBConfig vb = cfg.vb;
        vb.variant = variant_for(kind);
        VBResult res;
        if (kind == MethodKind::DirectVb) {
            watch.start();
            res = solve_direct(ctx.gp.instance.op, ctx.gp.instance.y, vb);
            row.runtime_ms = watch.stop_ms();
        } else {
            const ReducedSystem& sys = ctx.ensure_reduced();
            watch.start();
            res = solve(sys, vb, ctx.gp.subspace);
            row.runtime_ms = watch.stop_ms();
        }
        row.sigma_hat = std::sqrt(res.sigma2_hat);
        row.lambda_report = res.lambda;
        row.iterations = res.iterations;
        out.x_hat = res.x_hat;
        out.vb = std::move(res);
        return out;
    }

    const SvdSystem& svd = ctx.ensure_svd();
    Vector grid = default_lambda_grid(svd);
    const double sigma2 = noise * noise;
    SelectionResult sel;
    watch.start();
    switch (kind) {
    case MethodKind::Lcurve: sel = lcurve_select(svd, grid); break;
    case MethodKind::Gcv: sel = gcv_select(svd, grid); break;
    case MethodKind::Upre: sel = upre_select(svd, sigma2, grid); break;
    case MethodKind::Dp: sel = dp_select(svd, sigma2, grid, cfg.dp_tau); break;
    default: throw UsageError("method not valid here");
    }
    Vector coef = tikhonov_solve(svd, sel.lambda);
    row.runtime_ms = watch.stop_ms();
    row.lambda_report = {sel.lambda};
    if (sel.at_boundary) row.status = "ok (lambda at grid boundary)";
    out.x_hat =
        (cfg.baseline_space == BaselineSpace::Reduced) ? ctx.gp.subspace.expand(coef) : coef;
    return out;
}

void write_trial_images(const std::string& dir, const GeneratedProblem& gp,
                        const std::vector<std::pair<std::string, Vector>>& recons) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const Shape& shape = gp.instance.shape;
    write_field_image(dir + "/truth.pgm", gp.instance.x_true, shape);
    if (gp.instance.y.size() == shape_product(shape))
        write_field_image(dir + "/observation.pgm", gp.instance.y, shape);
    for (const auto& [name, x_hat] : recons) {
        write_field_image(dir + "/recon_" + name + ".pgm", x_hat, shape);
        write_error_image(dir + "/err_" + name + ".pgm", x_hat, gp.instance.x_true, shape);
    }
}

} // namespace

RunOutputs run_experiment(const ExperimentConfig& cfg, const std::string& out_csv,
                          const std::string& dump_alphas_csv,
                          const std::string& write_images_dir) {
    if (cfg.experiment != "fredholm" && cfg.experiment != "deblur" && cfg.experiment != "heat")
        config_error("run_experiment handles fredholm, deblur and heat only");
    if (cfg.methods.empty()) config_error("at least one method is required");
    if (cfg.noise_levels.empty()) config_error("at least one noise level is required");
    if (out_csv.empty()) config_error("output path is required");
    const std::vector<Index> ranks = effective_ranks(cfg);

    std::ptrdiff_t last_vb = -1;
    for (size_t i = 0; i < cfg.methods.size(); ++i)
        if (is_vb_method(cfg.methods[i])) last_vb = static_cast<std::ptrdiff_t>(i);
    if (!dump_alphas_csv.empty() && last_vb < 0)
        config_error("--dump-alphas needs at least one VB method");

    RunOutputs outputs;
    Stopwatch watch;
    for (size_t ni = 0; ni < cfg.noise_levels.size(); ++ni) {
        const double noise = cfg.noise_levels[ni];
        for (int trial = 0; trial < cfg.trials; ++trial) {
            const std::uint64_t seed = cfg.base_seed + static_cast<std::uint64_t>(trial);
            GeneratedProblem gp = make_instance(cfg, ranks, noise, seed);
            TrialContext ctx{cfg, gp, {}, {}};
            std::vector<std::pair<std::string, Vector>> recons;
            for (size_t mi = 0; mi < cfg.methods.size(); ++mi) {
                const MethodKind kind = cfg.methods[mi];
                MetricRow row;
                row.method = method_name(kind);
                row.noise_level = noise;
                row.trial = trial;
                row.seed = seed;
                try {
                    MethodOutcome mo = run_method(ctx, kind, noise, row, watch);
                    row.rel_error = rel_error(mo.x_hat, gp.instance.x_true);
                    row.psnr_db = psnr(mo.x_hat, gp.instance.x_true);
                    row.ssim = ssim_global(mo.x_hat, gp.instance.x_true);
                    if (ni == 0 && trial == 0) {
                        recons.emplace_back(row.method, mo.x_hat);
                        if (static_cast<std::ptrdiff_t>(mi) == last_vb && mo.vb)
                            outputs.diagnostics = std::move(mo.vb);
                    }
                } catch (const std::exception& e) {
                    row.status = sanitize(e.what());
                    row.runtime_ms = 0.0;
                }
                if (!cfg.timing) row.runtime_ms = 0.0;
                outputs.rows.push_back(std::move(row));
            }
            if (!write_images_dir.empty() && ni == 0 && trial == 0)
                write_trial_images(write_images_dir, gp, recons);
        }
    }

    outputs.detail_path = out_csv;
    outputs.summary_path = summary_path_for(out_csv);
    write_detail_csv(outputs.detail_path, outputs.rows);
    std::vector<std::string> method_order;
    for (MethodKind k : cfg.methods) method_order.push_back(method_name(k));
    write_summary_csv(outputs.summary_path, outputs.rows, method_order, cfg.noise_levels);
    if (!dump_alphas_csv.empty()) {
        if (!outputs.diagnostics)
            throw Error("no VB result available for diagnostics"); // methods all failed
        dump_diagnostics(*outputs.diagnostics, dump_alphas_csv);
    }
    return outputs;
}

// ---------------------------------------------------------------------------
// bench runner

std::vector<BenchRow> run_bench(const ExperimentConfig& cfg, const std::string& out_csv) {
    if (cfg.experiment != "bench") config_error("run_bench requires experiment 'bench'");
    if (cfg.bench_dims.empty()) config_error("bench needs at least one dimension");
    for (Index dim : cfg.bench_dims) {
        if (dim < 2) config_error("bench dimensions must be at least 2");
        if (cfg.bench_rank > dim)
            config_error("bench rank exceeds dimension " + std::to_string(dim));
    }
    if (cfg.bench_noise < 0.0) config_error("bench noise must be non-negative");

    std::vector<BenchRow> rows;
    Stopwatch watch;
    for (Index dim : cfg.bench_dims) {
        BenchRow row;
        row.dim = dim;
        row.problem_size = dim * dim;
        std::vector<double> tucker_ms, direct_ms;
        for (int trial = 0; trial < cfg.trials; ++trial) {
            const std::uint64_t seed = cfg.base_seed + static_cast<std::uint64_t>(trial);
            FredholmSpec spec;
            spec.n = dim;
            spec.alpha = cfg.fredholm_alpha;
            GeneratedProblem gp =
                gen_fredholm(spec, {cfg.bench_rank, cfg.bench_rank}, cfg.bench_noise, seed);
            VBConfig vb = cfg.vb;
            vb.variant = VBVariant::Single;

            watch.start();
            ReducedSystem sys = reduce(gp.instance.op, gp.subspace, gp.instance.y);
            (void)solve(sys, vb, gp.subspace);
            tucker_ms.push_back(watch.stop_ms());

            if (row.problem_size <= cfg.vb.direct_max_n) {
                watch.start();
                (void)solve_direct(gp.instance.op, gp.instance.y, vb);
                direct_ms.push_back(watch.stop_ms());
            }
        }
        row.tucker_ms_mean = sample_mean(tucker_ms);
        row.tucker_ms_std = sample_std(tucker_ms);
        if (!direct_ms.empty()) {
            row.direct_ms_mean = sample_mean(direct_ms);
            row.direct_ms_std = sample_std(direct_ms);
            row.speedup = *row.direct_ms_mean / row.tucker_ms_mean;
        }
        rows.push_back(row);
    }

    if (!out_csv.empty()) {
        std::ofstream out(out_csv);
        if (!out) throw IoError("cannot open " + out_csv + " for writing");
        out << "dim,problem_size,tucker_ms_mean,tucker_ms_std,direct_ms_mean,speedup\n";
        for (const BenchRow& r : rows) {
            out << r.dim << ',' << r.problem_size << ',' << fmt_fixed3(r.tucker_ms_mean) << ','
                << fmt_fixed3(r.tucker_ms_std) << ','
                << (r.direct_ms_mean ? fmt_fixed3(*r.direct_ms_mean) : "NA") << ','
                << (r.speedup ? fmt_fixed3(*r.speedup) : "NA") << '\n';
        }
        if (!out) throw IoError("failed writing " + out_csv);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// solve runner

RunOutputs run_solve(const ExperimentConfig& cfg, const std::string& out_csv) {
    if (cfg.experiment != "solve") config_error("run_solve requires experiment 'solve'");
    if (cfg.methods.empty()) config_error("at least one method is required");
    for (MethodKind k : cfg.methods) {
        if (is_vb_method(k) && k != MethodKind::DirectVb)
            config_error("solve supports lcurve, gcv, upre, dp and direct_vb only");
    }
    if (cfg.solve_a_csv.empty() || cfg.solve_y_csv.empty())
        config_error("solve needs solve.a_csv and solve.y_csv");
    const bool needs_sigma =
        std::any_of(cfg.methods.begin(), cfg.methods.end(), [](MethodKind k) {
            return k == MethodKind::Upre || k == MethodKind::Dp;
        });
    if (needs_sigma && !(cfg.solve_sigma2 > 0.0))
        config_error("upre and dp need a positive solve.sigma2");
    if (out_csv.empty()) config_error("output path is required");

    Matrix a = read_csv_matrix(cfg.solve_a_csv);
    Vector y = read_csv_vector(cfg.solve_y_csv);
    if (y.size() != a.rows()) config_error("y length does not match the rows of A");
    std::optional<Vector> x_true;
    if (!cfg.solve_x_true_csv.empty()) {
        x_true = read_csv_vector(cfg.solve_x_true_csv);
        if (x_true->size() != a.cols()) config_error("x_true length does not match A columns");
    }

    const std::string out_dir = std::filesystem::path(out_csv).parent_path().string();
    auto aux_path = [&](const std::string& name) {
        return out_dir.empty() ? name : out_dir + "/" + name;
    };

    std::optional<SvdSystem> svd;
    RunOutputs outputs;
    Stopwatch watch;
    for (MethodKind kind : cfg.methods) {
        MetricRow row;
        row.method = method_name(kind);
        row.noise_level = 0.0;
        row.trial = 0;
        row.seed = cfg.base_seed;
        try {
            Vector x_hat;
            if (kind == MethodKind::DirectVb) {
                VBConfig vb = cfg.vb;
                vb.variant = VBVariant::Single;
                watch.start();
                VBResult res = solve_direct(DenseOp{a}, y, vb);
                row.runtime_ms = watch.stop_ms();
                row.sigma_hat = std::sqrt(res.sigma2_hat);
                row.lambda_report = res.lambda;
                row.iterations = res.iterations;
                x_hat = res.x_hat;
            } else {
                if (!svd) svd = svd_system_from_dense(a, y);
                Vector grid = default_lambda_grid(*svd);
                SelectionResult sel;
                watch.start();
                switch (kind) {
                case MethodKind::Lcurve: sel = lcurve_select(*svd, grid); break;
                case MethodKind::Gcv: sel = gcv_select(*svd, grid); break;
                case MethodKind::Upre: sel = upre_select(*svd, cfg.solve_sigma2, grid); break;
                default: sel = dp_select(*svd, cfg.solve_sigma2, grid, cfg.dp_tau); break;
                }
                x_hat = tikhonov_solve(*svd, sel.lambda);
                row.runtime_ms = watch.stop_ms();
                row.lambda_report = {sel.lambda};
                if (sel.at_boundary) row.status = "ok (lambda at grid boundary)";
            }
            if (x_true) {
                row.rel_error = rel_error(x_hat, *x_true);
                row.psnr_db = psnr(x_hat, *x_true);
                row.ssim = ssim_global(x_hat, *x_true);
            }
            write_csv_vector(aux_path("x_hat_" + row.method + ".csv"), x_hat);
        } catch (const std::exception& e) {
            row.status = sanitize(e.what());
            row.runtime_ms = 0.0;
        }
        if (!cfg.timing) row.runtime_ms = 0.0;
        outputs.rows.push_back(std::move(row));
    }

    outputs.detail_path = out_csv;
    outputs.summary_path = summary_path_for(out_csv);
    write_detail_csv(outputs.detail_path, outputs.rows);
    std::vector<std::string> method_order;
    for (MethodKind k : cfg.methods) method_order.push_back(method_name(k));
    write_summary_csv(outputs.summary_path, outputs.rows, method_order, {0.0});
    return outputs;
}

// ---------------------------------------------------------------------------
// command line

int run_cli(int argc, char** argv) {
    CLI::App app{"Tensor-subspace variational inversion toolkit"};
    app.require_subcommand(1);

    struct SubOpts {
        std::string config;
        std::string out;
        std::string dump_alphas;
        std::string write_images;
        std::uint64_t seed = 0;
        bool seed_set = false;
    };
    std::map<std::string, SubOpts> opts;
    for (const char* name : {"fredholm", "deblur", "heat", "bench", "solve"}) {
        CLI::App* sub = app.add_subcommand(name, std::string("run the ") + name + " command");
        SubOpts& o = opts[name];
        sub->add_option("--config", o.config, "JSON configuration file")->required();
        sub->add_option("--out", o.out, "output CSV path");
        if (std::string(name) != "bench" && std::string(name) != "solve") {
            sub->add_option("--dump-alphas", o.dump_alphas,
                            "write per-slice precision diagnostics CSV");
            sub->add_option("--write-images", o.write_images,
                            "directory for truth/observation/reconstruction images");
        }
        sub->add_option("--seed", o.seed, "override base_seed")
            ->each([&o](const std::string&) { o.seed_set = true; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const std::string name = app.get_subcommands().front()->get_name();
    const SubOpts& o = opts[name];
    try {
        ExperimentConfig cfg = ExperimentConfig::from_json_file(o.config);
        if (!cfg.experiment.empty() && cfg.experiment != name)
            throw UsageError("config is for experiment '" + cfg.experiment +
                             "', but the subcommand is '" + name + "'");
        cfg.experiment = name;
        if (o.seed_set) cfg.base_seed = o.seed;
        const std::string out = o.out.empty() ? name + "_detail.csv" : o.out;
        if (name == "bench") {
            run_bench(cfg, o.out.empty() ? "bench.csv" : o.out);
        } else if (name == "solve") {
            run_solve(cfg, out);
        } else {
            run_experiment(cfg, out, o.dump_alphas, o.write_images);
        }
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}

} // namespace tvb
