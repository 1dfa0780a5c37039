#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "tvb/errors.hpp"
#include "tvb/experiment.hpp"

using namespace tvb;
namespace fs = std::filesystem;

namespace {

int run_tool(const std::string& args) {
    std::string cmd = std::string(TVB_TOOL_PATH) + " " + args + " >/dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -2;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
    REQUIRE(bool(out));
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(bool(in));
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

size_t line_count(const std::string& text) {
    size_t n = 0;
    for (char c : text)
        if (c == '\n') ++n;
    return n;
}

struct Scratch {
    fs::path dir;
    Scratch() : dir(fs::temp_directory_path() / "tvb_cli_test") {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Scratch() { fs::remove_all(dir); }
    fs::path operator/(const std::string& name) const { return dir / name; }
};

const char* kTinyFredholm = R"({
  "experiment": "fredholm",
  "noise_levels": [0.05],
  "trials": 2,
  "methods": ["tucker_vb_single", "gcv"],
  "ranks": [4, 4],
  "base_seed": 42,
  "timing": "off",
  "fredholm": {"n": 12, "alpha": 0.2}
})";

} // namespace

TEST_CASE("config parsing fills every section") {
    ExperimentConfig cfg = ExperimentConfig::from_json_text(R"({
        "experiment": "heat",
        "noise_levels": [0.01, 0.1],
        "trials": 3,
        "methods": ["tucker_vb_slice", "dp"],
        "ranks": [5, 6, 7],
        "base_seed": 99,
        "timing": false,
        "baseline_space": "full",
        "dp_tau": 1.5,
        "vb": {"a0": 1e-4, "b0": 1e-5, "tol": 1e-6, "max_iters": 50, "direct_max_n": 100},
        "heat": {"grid": [8, 8, 8], "kappa": [0.1, 0.2, 0.3], "t_final": 0.5}
    })");
    CHECK(cfg.experiment == "heat");
    CHECK(cfg.noise_levels == std::vector<double>{0.01, 0.1});
    CHECK(cfg.trials == 3);
    REQUIRE(cfg.methods.size() == 2);
    CHECK(cfg.methods[0] == MethodKind::TuckerVbSlice);
    CHECK(cfg.methods[1] == MethodKind::Dp);
    CHECK(cfg.ranks == std::vector<Index>{5, 6, 7});
    CHECK(cfg.base_seed == 99);
    CHECK_FALSE(cfg.timing);
    CHECK(cfg.baseline_space == BaselineSpace::Full);
    CHECK(cfg.dp_tau == 1.5);
    CHECK(cfg.vb.prior.a0 == 1e-4);
    CHECK(cfg.vb.prior.b0 == 1e-5);
    CHECK(cfg.vb.tol == 1e-6);
    CHECK(cfg.vb.max_iters == 50);
    CHECK(cfg.vb.direct_max_n == 100);
    CHECK(cfg.heat_grid == Shape{8, 8, 8});
    CHECK(cfg.heat_kappa[2] == 0.3);
    CHECK(cfg.heat_t == 0.5);
}

TEST_CASE("config parsing rejects malformed input") {
    CHECK_THROWS_AS(ExperimentConfig::from_json_text("not json"), UsageError);
    CHECK_THROWS_AS(ExperimentConfig::from_json_text(R"({"unknown_key": 1})"), UsageError);
    CHECK_THROWS_AS(ExperimentConfig::from_json_text(R"({"vb": {"bogus": 1}})"), UsageError);
    CHECK_THROWS_AS(ExperimentConfig::from_json_text(R"({"trials": "many"})"), UsageError);
    CHECK_THROWS_AS(ExperimentConfig::from_json_text(R"({"trials": 0})"), UsageError);
    CHECK_THROWS_AS(ExperimentConfig::from_json_text(R"({"methods": ["sorcery"]})"), UsageError);
    CHECK_THROWS_AS(ExperimentConfig::from_json_text(R"({"noise_levels": [-0.1]})"), UsageError);
    CHECK_THROWS_AS(ExperimentConfig::from_json_text(R"({"timing": 3})"), UsageError);
    CHECK_THROWS_AS(ExperimentConfig::from_json_text(R"({"heat": {"grid": [2, 2]}})"),
                    UsageError);
    CHECK_THROWS_AS(ExperimentConfig::from_json_text(R"({"baseline_space": "half"})"),
                    UsageError);
}

TEST_CASE("method names round-trip") {
    for (MethodKind k :
         {MethodKind::TuckerVbSingle, MethodKind::TuckerVbMode, MethodKind::TuckerVbSlice,
          MethodKind::DirectVb, MethodKind::Lcurve, MethodKind::Gcv, MethodKind::Upre,
          MethodKind::Dp}) {
        CHECK(parse_method(method_name(k)) == k);
    }
    CHECK_THROWS_AS(parse_method("ridge"), UsageError);
    CHECK(is_vb_method(MethodKind::DirectVb));
    CHECK_FALSE(is_vb_method(MethodKind::Gcv));
}

TEST_CASE("tool runs a small experiment and writes consistent csv files") {
    Scratch tmp;
    write_file(tmp / "cfg.json", kTinyFredholm);
    fs::path out = tmp / "out.csv";
    int rc = run_tool("fredholm --config " + (tmp / "cfg.json").string() + " --out " +
                      out.string());
    REQUIRE(rc == 0);

    std::string detail = slurp(out);
    CHECK(detail.rfind("method,noise_level,trial,seed,rel_error,psnr_db,ssim,sigma_hat,"
                       "lambda_report,runtime_ms,iterations,status\n",
                       0) == 0);
    CHECK(line_count(detail) == 1 + 2 * 2); // header + trials x methods
    CHECK(detail.find("tucker_vb_single,0.05,0,42,") != std::string::npos);
    CHECK(detail.find("gcv,0.05,1,43,") != std::string::npos);

    std::string summary = slurp(tmp / "out.summary.csv");
    CHECK(summary.rfind("method,noise_level,trials_ok,", 0) == 0);
    CHECK(line_count(summary) == 1 + 2);

    SUBCASE("reruns are byte-identical with timing off") {
        fs::path out2 = tmp / "out2.csv";
        REQUIRE(run_tool("fredholm --config " + (tmp / "cfg.json").string() + " --out " +
                         out2.string()) == 0);
        CHECK(slurp(out2) == detail);
    }

    SUBCASE("seed override changes the noise draws") {
        fs::path out3 = tmp / "out3.csv";
        REQUIRE(run_tool("fredholm --config " + (tmp / "cfg.json").string() + " --out " +
                         out3.string() + " --seed 999") == 0);
        std::string moved = slurp(out3);
        CHECK(moved != detail);
        CHECK(moved.find(",999,") != std::string::npos);
    }
}

TEST_CASE("tool writes diagnostics and images on request") {
    Scratch tmp;
    write_file(tmp / "cfg.json", kTinyFredholm);
    fs::path alphas = tmp / "alphas.csv";
    fs::path images = tmp / "imgs";
    int rc = run_tool("fredholm --config " + (tmp / "cfg.json").string() + " --out " +
                      (tmp / "o.csv").string() + " --dump-alphas " + alphas.string() +
                      " --write-images " + images.string());
    REQUIRE(rc == 0);

    std::string dump = slurp(alphas);
    CHECK(dump.rfind("mode,slice_index,e_alpha,lambda\n", 0) == 0);
    CHECK(line_count(dump) == 2); // single-precision layout: one data row

    CHECK(fs::exists(images / "truth.pgm"));
    CHECK(fs::exists(images / "observation.pgm"));
    CHECK(fs::exists(images / "recon_tucker_vb_single.pgm"));
    CHECK(fs::exists(images / "err_gcv.pgm"));
}

TEST_CASE("tool reports usage errors with exit code 2") {
    Scratch tmp;
    CHECK(run_tool("") == 2);                                 // missing subcommand
    CHECK(run_tool("fredholm") == 2);                         // missing --config
    CHECK(run_tool("fredholm --config /nonexistent.json") == 2);

    write_file(tmp / "bad.json", R"({"methods": ["sorcery"]})");
    CHECK(run_tool("fredholm --config " + (tmp / "bad.json").string()) == 2);

    write_file(tmp / "cfg.json", kTinyFredholm);
    CHECK(run_tool("heat --config " + (tmp / "cfg.json").string()) == 2); // wrong subcommand

    write_file(tmp / "solve.json", R"({"experiment": "solve", "methods": ["upre"],
        "solve": {"a_csv": "a.csv", "y_csv": "y.csv"}})");
    CHECK(run_tool("solve --config " + (tmp / "solve.json").string()) == 2); // sigma2 missing
}

TEST_CASE("tool reports runtime failures with exit code 3") {
    Scratch tmp;
    write_file(tmp / "solve.json", R"({"experiment": "solve", "methods": ["lcurve"],
        "solve": {"a_csv": "/nonexistent_a.csv", "y_csv": "/nonexistent_y.csv"}})");
    CHECK(run_tool("solve --config " + (tmp / "solve.json").string() + " --out " +
                   (tmp / "s.csv").string()) == 3);
}

TEST_CASE("solve subcommand recovers a simple diagonal system") {
    Scratch tmp;
    // tall, well-conditioned stack of two diagonal blocks so the VB noise
    // estimate has residual degrees of freedom to work with
    const int n = 8;
    std::ostringstream a_csv, y_csv, x_csv;
    for (int i = 0; i < 2 * n; ++i) {
        const int j_diag = i % n;
        const double d = (i < n ? 1.0 : 0.5) / (1.0 + 0.1 * j_diag);
        for (int j = 0; j < n; ++j) a_csv << (j == j_diag ? d : 0.0) << (j + 1 < n ? "," : "\n");
        y_csv << d << "\n";
        if (i < n) x_csv << 1.0 << "\n";
    }
    write_file(tmp / "a.csv", a_csv.str());
    write_file(tmp / "y.csv", y_csv.str());
    write_file(tmp / "x.csv", x_csv.str());
    write_file(tmp / "solve.json",
               "{\"experiment\": \"solve\", \"methods\": [\"dp\", \"direct_vb\"],\n"
               " \"solve\": {\"a_csv\": \"" + (tmp / "a.csv").string() +
               "\", \"y_csv\": \"" + (tmp / "y.csv").string() +
               "\", \"x_true_csv\": \"" + (tmp / "x.csv").string() +
               "\", \"sigma2\": 1e-6}, \"timing\": \"off\"}");
    fs::path out = tmp / "solve_out.csv";
    REQUIRE(run_tool("solve --config " + (tmp / "solve.json").string() + " --out " +
                     out.string()) == 0);
    std::string detail = slurp(out);
    CHECK(line_count(detail) == 1 + 2);
    CHECK(fs::exists(tmp / "x_hat_dp.csv"));
    CHECK(fs::exists(tmp / "x_hat_direct_vb.csv"));
    CHECK(line_count(slurp(tmp / "x_hat_dp.csv")) == n);

    // noiseless diagonal system: both solvers should land near x = 1
    std::string xhat = slurp(tmp / "x_hat_direct_vb.csv");
    std::stringstream ss(xhat);
    double v, max_err = 0.0;
    while (ss >> v) max_err = std::max(max_err, std::abs(v - 1.0));
    CHECK(max_err < 1e-2);
}
