// cli.cpp - the smindreg subcommands.

#include "smind/cli.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "smind/config.hpp"
#include "smind/io.hpp"
#include "smind/metrics.hpp"
#include "smind/optimizer.hpp"
#include "smind/phantom.hpp"

namespace smind {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Maps exceptions onto exit codes with a one-line message.
int guarded(const std::function<int()> &body) {
    try {
        return body();
    } catch (const ConfigError &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const FormatError &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const NumericalError &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::invalid_argument &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
}

// CLI11 consumes argument vectors back to front.
int parse(CLI::App &app, const std::vector<std::string> &args) {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(std::move(reversed));
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? -1 : kExitUsage; // -1: help printed, stop with success
    }
    return kExitOk;
}

void write_json(const json &j, const fs::path &path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

json vec_json(const Vec3 &v) { return json::array({v[0], v[1], v[2]}); }

LabelMask preprocess_mask(const Volume &mask, const GridSpec &grid) {
    return make_mask(crop_or_pad(resample(mask, grid.target_spacing), grid.target_dims), 0.5);
}

json affine_json(const CoarseResult &r, const Vec3 &center) {
    json j;
    j["rotation_rad"] = vec_json(r.params.rot);
    j["translation_mm"] = vec_json(r.params.trans);
    j["scale"] = vec_json(r.params.scale);
    const Mat4 m = affine_matrix(r.params, center);
    json rows = json::array();
    for (const auto &row : m) rows.push_back(json::array({row[0], row[1], row[2], row[3]}));
    j["matrix"] = rows;
    j["center_mm"] = vec_json(center);
    j["rigid"] = {{"rotation_rad", vec_json(r.rigid_params.rot)}, {"translation_mm", vec_json(r.rigid_params.trans)}};
    j["loss"] = r.loss;
    j["rigid_iterations"] = r.rigid_iterations;
    j["affine_iterations"] = r.affine_iterations;
    j["uniform_weight_fallback"] = r.uniform_weight_fallback;
    return j;
}

void write_trace(const LossTrace &trace, const fs::path &path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write '" + path.string() + "'");
    out << "stage,iter,loss\n";
    char buf[64];
    for (const auto &e : trace) {
        const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, e.loss);
        out << e.stage << ',' << e.iter << ',' << std::string_view(buf, static_cast<size_t>(ptr - buf)) << '\n';
    }
}

} // namespace

int cmd_register(const std::vector<std::string> &args) {
    CLI::App app{"Register a moving volume to a fixed volume (coarse affine, then deformable)", "register"};
    std::string fixed_path, moving_path, fixed_mask_path, moving_mask_path, config_path, out_dir;
    bool skip_deformable = false, trace_flag = false;
    app.add_option("--fixed", fixed_path, "fixed volume (.json header or .nii/.nii.gz)")->required();
    app.add_option("--moving", moving_path, "moving volume")->required();
    app.add_option("--fixed-mask", fixed_mask_path, "fixed label mask");
    app.add_option("--moving-mask", moving_mask_path, "moving label mask");
    app.add_option("--config", config_path, "key = value configuration file");
    app.add_option("--out-dir", out_dir, "output directory")->required();
    app.add_flag("--skip-deformable", skip_deformable, "stop after the affine stage");
    app.add_flag("--trace", trace_flag, "write the per-iteration loss trace (trace.csv)");
    if (const int rc = parse(app, args); rc != kExitOk) return rc < 0 ? kExitOk : rc;
    if (fixed_mask_path.empty() != moving_mask_path.empty()) {
        std::cerr << "error: --fixed-mask and --moving-mask must be given together\n";
        return kExitUsage;
    }

    return guarded([&] {
        const auto t0 = std::chrono::steady_clock::now();
        const RegistrationConfig cfg = config_path.empty() ? RegistrationConfig{} : load_config(config_path);
        cfg.validate();
        const GridSpec grid = cfg.grid();

        const Volume fixed = preprocess(read_volume(fixed_path), grid);
        const Volume moving = preprocess(read_volume(moving_path), grid);
        std::optional<LabelMask> fixed_mask, moving_mask;
        if (!fixed_mask_path.empty()) {
            fixed_mask = preprocess_mask(read_volume(fixed_mask_path), grid);
            moving_mask = preprocess_mask(read_volume(moving_mask_path), grid);
        }
        fs::create_directories(out_dir);

        LossTrace trace;
        const CoarseResult coarse = coarse_register(fixed, moving, cfg.coarse(), &trace);
        Volume warped = warp_affine(moving, coarse.params);

        std::optional<DeformationField> field;
        int deform_iterations = 0;
        if (!skip_deformable) {
            // The deformable stage sees a border-replicated image: zero-filled slabs
            // would be edges that MIND has no counterpart for in the fixed image.
            const Volume coarse_moving = warp_affine(moving, coarse.params, Boundary::clamp);
            const DeformableResult d = deformable_register(fixed, coarse_moving, cfg.deformable(), &trace);
            field = compose_multires(d.field);
            deform_iterations = d.iterations;
            warped = warp_dense(warped, *field);
        }

        const fs::path dir(out_dir);
        write_volume(warped, dir / "warped_moving.json");
        if (field) write_field(*field, dir / "field.json");
        write_json(affine_json(coarse, fixed.center()), dir / "affine.json");
        if (trace_flag) write_trace(trace, dir / "trace.csv");

        if (fixed_mask) {
            json m;
            LabelMask coarse_mask = warp_mask(*moving_mask, coarse.params);
            m["dsc_initial"] = dice(*fixed_mask, *moving_mask);
            m["dsc_coarse"] = dice(*fixed_mask, coarse_mask);
            JacobianStats js;
            if (field) {
                m["dsc"] = dice(*fixed_mask, warp_mask(coarse_mask, *field));
                js = jacobian_stats(*field);
            } else {
                m["dsc"] = m["dsc_coarse"];
            }
            m["folding_percent"] = js.folding_percent;
            m["sigma_log_j"] = js.sigma_log_j;
            write_json(m, dir / "metrics.json");
        }

        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        json run;
        run["runtime_seconds"] = seconds;
        run["rigid_iterations"] = coarse.rigid_iterations;
        run["affine_iterations"] = coarse.affine_iterations;
        run["deformable_iterations"] = deform_iterations;
        write_json(run, dir / "run.json");
        std::cout << "registered in " << seconds << " s; outputs in " << dir.string() << '\n';
        return static_cast<int>(kExitOk);
    });
}

int cmd_evaluate(const std::vector<std::string> &args) {
    CLI::App app{"Dice overlap and Jacobian statistics", "evaluate"};
    std::string fixed_mask_path, moving_mask_path, field_path, out_path;
    app.add_option("--fixed-mask", fixed_mask_path, "fixed label mask")->required();
    app.add_option("--moving-mask", moving_mask_path, "moving label mask")->required();
    app.add_option("--field", field_path, "displacement field applied to the moving mask");
    app.add_option("--out", out_path, "write the metrics JSON here as well as to stdout");
    if (const int rc = parse(app, args); rc != kExitOk) return rc < 0 ? kExitOk : rc;

    return guarded([&] {
        const LabelMask fixed = make_mask(read_volume(fixed_mask_path), 0.5);
        LabelMask moving = make_mask(read_volume(moving_mask_path), 0.5);
        if (fixed.values.dims() != moving.values.dims()) throw std::invalid_argument("evaluate: mask dims differ");
        JacobianStats js;
        if (!field_path.empty()) {
            const DeformationField field = read_field(field_path);
            if (field.dims() != moving.values.dims()) throw std::invalid_argument("evaluate: field and mask dims differ");
            moving = warp_mask(moving, field);
            js = jacobian_stats(field);
        }
        json m;
        m["dsc"] = dice(fixed, moving);
        m["folding_percent"] = js.folding_percent;
        m["sigma_log_j"] = js.sigma_log_j;
        std::cout << m.dump(2) << '\n';
        if (!out_path.empty()) write_json(m, out_path);
        return static_cast<int>(kExitOk);
    });
}

int cmd_phantom(const std::vector<std::string> &args) {
    CLI::App app{"Write a synthetic multi-modal phantom pair with its ground truth", "phantom"};
    PhantomSpec spec;
    std::string out_dir, remap = "identity";
    Vec3 rot_deg{0.0, 0.0, 0.0};
    std::vector<double> bump_center;
    BumpSpec bump;
    app.add_option("--out-dir", out_dir, "output directory")->required();
    app.add_option("--seed", spec.seed, "random seed");
    app.add_option("--dims", spec.dims, "nx ny nz");
    app.add_option("--spacing", spec.spacing, "voxel spacing in mm");
    app.add_option("--blobs", spec.n_blobs, "number of Gaussian blobs");
    app.add_option("--noise", spec.noise, "noise standard deviation (fraction of range)");
    app.add_option("--remap", remap, "identity | inverse | gamma | sigmoid-bands");
    app.add_option("--gamma", spec.remap.gamma, "exponent for the gamma remap");
    app.add_option("--rot-deg", rot_deg, "rotation about x y z in degrees");
    app.add_option("--trans-mm", spec.transform.trans, "translation in mm");
    app.add_option("--scale", spec.transform.scale, "per-axis scale");
    app.add_option("--bump-center", bump_center, "bump centre in voxels (enables the bump)")->expected(3);
    app.add_option("--bump-radius", bump.radius, "bump radius in voxels");
    app.add_option("--bump-peak", bump.peak, "bump peak displacement in voxels");
    app.add_option("--bump-axis", bump.axis, "displacement axis 0, 1 or 2");
    if (const int rc = parse(app, args); rc != kExitOk) return rc < 0 ? kExitOk : rc;

    try {
        spec.remap.kind = parse_remap_kind(remap);
        for (int a = 0; a < 3; ++a) spec.transform.rot[a] = rot_deg[a] * kDeg;
        if (!bump_center.empty()) {
            bump.center = {bump_center[0], bump_center[1], bump_center[2]};
            spec.bump = bump;
        }
        spec.validate();
    } catch (const std::invalid_argument &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }

    return guarded([&] {
        const PhantomPair pair = generate_pair(spec);
        const fs::path dir(out_dir);
        fs::create_directories(dir);
        write_volume(pair.fixed, dir / "fixed.json");
        write_volume(pair.moving, dir / "moving.json");
        write_volume(pair.fixed_mask.values, dir / "fixed_mask.json");
        write_volume(pair.moving_mask.values, dir / "moving_mask.json");
        if (pair.bump_field) write_field(*pair.bump_field, dir / "bump_field.json");

        json s;
        s["seed"] = spec.seed;
        s["dims"] = {spec.dims[0], spec.dims[1], spec.dims[2]};
        s["spacing"] = vec_json(spec.spacing);
        s["n_blobs"] = spec.n_blobs;
        s["noise"] = spec.noise;
        s["remap"] = to_string(spec.remap.kind);
        if (spec.remap.kind == RemapKind::gamma) s["gamma"] = spec.remap.gamma;
        s["rotation_deg"] = vec_json(rot_deg);
        if (spec.bump) {
            s["bump"] = {{"center", vec_json(spec.bump->center)},
                         {"radius", spec.bump->radius},
                         {"peak", spec.bump->peak},
                         {"axis", spec.bump->axis}};
        }
        json gt;
        gt["spec"] = s;
        gt["rotation_rad"] = vec_json(pair.ground_truth.rot);
        gt["translation_mm"] = vec_json(pair.ground_truth.trans);
        gt["scale"] = vec_json(pair.ground_truth.scale);
        write_json(gt, dir / "ground_truth.json");
        return static_cast<int>(kExitOk);
    });
}

int cmd_default_config(const std::vector<std::string> &args) {
    CLI::App app{"Print the default configuration", "default-config"};
    std::string out_path;
    app.add_option("--out", out_path, "write to this file instead of stdout");
    if (const int rc = parse(app, args); rc != kExitOk) return rc < 0 ? kExitOk : rc;
    return guarded([&] {
        if (out_path.empty())
            std::cout << format_config(RegistrationConfig{});
        else
            save_config(RegistrationConfig{}, out_path);
        return static_cast<int>(kExitOk);
    });
}

int run_cli(int argc, char **argv) {
    const std::string usage = "usage: smindreg <register|evaluate|phantom|default-config> [options]\n"
                              "       smindreg <command> --help\n";
    if (argc < 2) {
        std::cerr << usage;
        return kExitUsage;
    }
    const std::string command = argv[1];
    const std::vector<std::string> rest(argv + 2, argv + argc);
    if (command == "register") return cmd_register(rest);
    if (command == "evaluate") return cmd_evaluate(rest);
    if (command == "phantom") return cmd_phantom(rest);
    if (command == "default-config") return cmd_default_config(rest);
    if (command == "-h" || command == "--help") {
        std::cout << usage;
        return kExitOk;
    }
    std::cerr << "unknown command '" << command << "'\n" << usage;
    return kExitUsage;
}

} // namespace smind
