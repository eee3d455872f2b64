#include "doctest.h"

#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "smind/cli.hpp"
#include "smind/config.hpp"
#include "smind/io.hpp"
#include "test_util.hpp"

using namespace smind;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Small grid and short schedules so a full register run takes a few seconds.
fs::path write_small_config(const fs::path &dir) {
    RegistrationConfig c;
    c.target_spacing = {1.0, 1.0, 1.0};
    c.target_dims = {24, 24, 16};
    c.coarse_iters = 150;
    c.deform_iters = 40;
    save_config(c, dir / "small.cfg");
    return dir / "small.cfg";
}

fs::path make_phantom(const fs::path &dir, const std::vector<std::string> &extra = {}) {
    std::vector<std::string> args{"--out-dir", dir.string(), "--dims", "24", "24", "16", "--seed", "3"};
    args.insert(args.end(), extra.begin(), extra.end());
    REQUIRE(cmd_phantom(args) == kExitOk);
    return dir;
}

} // namespace

TEST_CASE("defaults follow the published settings") {
    const RegistrationConfig c;
    CHECK(c.bins == 32);
    CHECK(c.window == 7);
    CHECK(c.epsilon == 1e-7);
    CHECK(c.search_radius == 4);
    CHECK(c.tau == 0.05);
    CHECK(c.sigma == 2.0);
    CHECK(c.lambda == 1.0);
    CHECK(c.coarse_lr == 0.01);
    CHECK(c.coarse_iters == 500);
    CHECK(c.deform_lr == 1e-4);
    CHECK(c.deform_iters == 200);
    CHECK(c.levels == 3);
    CHECK(c.target_spacing == Vec3{1.0, 1.0, 2.5});
    CHECK(c.target_dims == Index3{256, 256, 48});
}

TEST_CASE("config round trip is exact") {
    RegistrationConfig c;
    c.tau = 0.1 / 3.0;
    c.coarse_lr = 1.0 / 7.0;
    c.target_spacing = {0.1, 1.0 / 3.0, 2.5};
    c.target_dims = {17, 19, 23};
    c.levels = 2;
    CHECK(parse_config(format_config(c)) == c);
    const auto dir = testutil::scratch_dir("cfg_rt");
    save_config(c, dir / "c.cfg");
    CHECK(load_config(dir / "c.cfg") == c);
}

TEST_CASE("config parsing: comments, partial files and errors") {
    const RegistrationConfig c = parse_config("# comment\n  tau = 0.2  # trailing\n\nlevels=2\n");
    CHECK(c.tau == 0.2);
    CHECK(c.levels == 2);
    CHECK(c.bins == 32);
    CHECK_THROWS_AS(parse_config("nonsense = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("tau = abc\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("tau\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("target_dims = 1 2\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("window = 4\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("tau = 0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("bins = 1\n"), ConfigError);
}

TEST_CASE("default-config writes a parseable file") {
    const auto dir = testutil::scratch_dir("cli_defcfg");
    CHECK(cmd_default_config({"--out", (dir / "d.cfg").string()}) == kExitOk);
    CHECK(load_config(dir / "d.cfg") == RegistrationConfig{});
    CHECK(cmd_default_config({"--bogus"}) == kExitUsage);
}

TEST_CASE("phantom command is deterministic and echoes its spec") {
    const auto a = make_phantom(testutil::scratch_dir("cli_ph_a"), {"--rot-deg", "0", "0", "5", "--remap", "inverse"});
    const auto b = make_phantom(testutil::scratch_dir("cli_ph_b"), {"--rot-deg", "0", "0", "5", "--remap", "inverse"});
    for (const char *f : {"fixed.raw", "moving.raw", "fixed_mask.raw", "moving_mask.raw", "ground_truth.json"})
        CHECK(slurp(a / f) == slurp(b / f));
    const auto gt = nlohmann::json::parse(slurp(a / "ground_truth.json"));
    CHECK(gt["spec"]["seed"] == 3);
    CHECK(gt["spec"]["remap"] == "inverse");
    CHECK(gt["spec"]["rotation_deg"][2] == 5.0);
    CHECK(gt["rotation_rad"][2].get<double>() == doctest::Approx(5.0 * 3.14159265358979 / 180.0));

    CHECK(cmd_phantom({"--out-dir", (a / "x").string(), "--remap", "t1"}) == kExitUsage);
    CHECK(cmd_phantom({"--out-dir", (a / "x").string(), "--dims", "16", "16", "16", "--bump-center", "8", "8", "8",
                       "--bump-peak", "5"}) == kExitUsage);
}

TEST_CASE("register: self-registration, skip-deformable and determinism") {
    const auto dir = testutil::scratch_dir("cli_reg");
    const fs::path cfg = write_small_config(dir);
    const fs::path ph = make_phantom(dir / "ph", {"--trans-mm", "2", "1", "0"});
    auto run = [&](const std::string &name, const std::string &moving, std::vector<std::string> extra) {
        std::vector<std::string> args{"--fixed",      (ph / "fixed.json").string(),      "--moving",
                                      (ph / moving).string(),
                                      "--fixed-mask", (ph / "fixed_mask.json").string(), "--moving-mask",
                                      (ph / (moving == "fixed.json" ? "fixed_mask.json" : "moving_mask.json")).string(),
                                      "--config",     cfg.string(),                      "--out-dir",
                                      (dir / name).string()};
        args.insert(args.end(), extra.begin(), extra.end());
        return cmd_register(args);
    };

    REQUIRE(run("self", "fixed.json", {}) == kExitOk);
    const auto self = nlohmann::json::parse(slurp(dir / "self" / "metrics.json"));
    CHECK(self["dsc"].get<double>() >= 0.99);
    CHECK(self["folding_percent"].get<double>() <= 1.0);
    CHECK(fs::exists(dir / "self" / "field.json"));
    CHECK(fs::exists(dir / "self" / "warped_moving.json"));
    CHECK(fs::exists(dir / "self" / "run.json"));

    REQUIRE(run("skip", "moving.json", {"--skip-deformable", "--trace"}) == kExitOk);
    CHECK_FALSE(fs::exists(dir / "skip" / "field.json"));
    CHECK(fs::exists(dir / "skip" / "affine.json"));
    const std::string trace = slurp(dir / "skip" / "trace.csv");
    CHECK(trace.starts_with("stage,iter,loss\nrigid,0,"));
    CHECK(trace.find("deformable") == std::string::npos);
    const auto affine = nlohmann::json::parse(slurp(dir / "skip" / "affine.json"));
    // the moving image is the fixed one shifted by (2, 1, 0) mm, so the recovered
    // sampling transform shifts back
    CHECK(affine["translation_mm"][0].get<double>() == doctest::Approx(-2.0).epsilon(0.25));
    CHECK(affine["translation_mm"][1].get<double>() == doctest::Approx(-1.0).epsilon(0.5));

    REQUIRE(run("again", "moving.json", {"--skip-deformable", "--trace"}) == kExitOk);
    CHECK(slurp(dir / "skip" / "affine.json") == slurp(dir / "again" / "affine.json"));
    CHECK(slurp(dir / "skip" / "metrics.json") == slurp(dir / "again" / "metrics.json"));
    CHECK(slurp(dir / "skip" / "trace.csv") == slurp(dir / "again" / "trace.csv"));
}

TEST_CASE("register exit codes") {
    const auto dir = testutil::scratch_dir("cli_codes");
    const fs::path ph = make_phantom(dir / "ph");
    const std::string f = (ph / "fixed.json").string();
    CHECK(cmd_register({"--fixed", f, "--moving", f}) == kExitUsage); // no --out-dir
    CHECK(cmd_register({"--fixed", f, "--moving", f, "--out-dir", dir.string(), "--fixed-mask", f}) == kExitUsage);
    CHECK(cmd_register({"--fixed", (dir / "missing.json").string(), "--moving", f, "--out-dir", dir.string()}) ==
          kExitData);
    std::ofstream(dir / "bad.cfg") << "bins = many\n";
    CHECK(cmd_register({"--fixed", f, "--moving", f, "--config", (dir / "bad.cfg").string(), "--out-dir",
                        dir.string()}) == kExitUsage);

    Volume nan_vol({24, 24, 16}, {1, 1, 1}, std::numeric_limits<double>::quiet_NaN());
    write_volume(nan_vol, dir / "nan.json");
    RegistrationConfig c;
    c.target_spacing = {1, 1, 1};
    c.target_dims = {24, 24, 16};
    save_config(c, dir / "small.cfg");
    CHECK(cmd_register({"--fixed", f, "--moving", (dir / "nan.json").string(), "--config", (dir / "small.cfg").string(),
                        "--out-dir", (dir / "out").string()}) == kExitData);
}

TEST_CASE("evaluate") {
    const auto dir = testutil::scratch_dir("cli_eval");
    const fs::path ph = make_phantom(dir / "ph");
    const std::string m = (ph / "fixed_mask.json").string();
    write_field(DeformationField({24, 24, 16}, {1, 1, 1}), dir / "zero.json");
    REQUIRE(cmd_evaluate({"--fixed-mask", m, "--moving-mask", m, "--field", (dir / "zero.json").string(), "--out",
                          (dir / "m.json").string()}) == kExitOk);
    const auto j = nlohmann::json::parse(slurp(dir / "m.json"));
    CHECK(j["dsc"] == 1.0);
    CHECK(j["folding_percent"] == 0.0);
    CHECK(j["sigma_log_j"] == 0.0);

    write_volume(Volume({24, 24, 15}, {1, 1, 1}), dir / "other.json");
    CHECK(cmd_evaluate({"--fixed-mask", m, "--moving-mask", (dir / "other.json").string()}) == kExitData);
    CHECK(cmd_evaluate({"--fixed-mask", m}) == kExitUsage);
}

TEST_CASE("run_cli dispatch") {
    char prog[] = "smindreg", bogus[] = "frobnicate", help[] = "--help";
    char *none[] = {prog};
    char *unknown[] = {prog, bogus};
    char *h[] = {prog, help};
    CHECK(run_cli(1, none) == kExitUsage);
    CHECK(run_cli(2, unknown) == kExitUsage);
    CHECK(run_cli(2, h) == kExitOk);
}
