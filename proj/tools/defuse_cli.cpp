// defuse: generate synthetic sequences, run the reconstruction pipeline, summarise metrics.
#include "defuse/pipeline.hpp"
#include "defuse/posefeed.hpp"
#include "defuse/report.hpp"
#include "defuse/synth.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace defuse;

namespace {

KeyValueConfig load_or_empty(const std::string& path) {
    return path.empty() ? KeyValueConfig{} : KeyValueConfig::load(path);
}

int cmd_generate(const std::string& scene_path, const std::string& out, std::optional<std::uint64_t> seed) {
    auto cfg = KeyValueConfig::load(scene_path);
    if (seed) {
        cfg.set("seed", std::to_string(*seed));
    }
    const SceneSpec spec = scene_from_config(cfg);
    const SceneGenerator gen(spec);
    fs::create_directories(out);
    scene_to_config(spec).save(fs::path(out) / "scene.cfg");
    std::ofstream truth(fs::path(out) / "truth_poses.txt");
    for (int f = 0; f < spec.frames; ++f) {
        RenderedFrame r = gen.render_frame(f);
        FrameEnvelope env;
        env.scan = std::move(r.scan);
        env.prior = r.prior;
        env.correspondences = r.correspondences;
        write_envelope(out, env);
        truth << f << ' ' << pose_to_text({r.truth.pose, f});
    }
    std::cout << "wrote " << spec.frames << " frames to " << out << '\n';
    return 0;
}

struct RunArgs {
    std::string scene;
    std::string input;
    std::string config;
    std::string out = "run";
    std::optional<std::uint64_t> seed;
    int export_every = -1;
    bool no_prior = false;
    bool threaded = false;
    int verbosity = 1;
};

int cmd_run(const RunArgs& a) {
    if (a.scene.empty() == a.input.empty()) {
        throw std::invalid_argument("exactly one of --scene or --input is required");
    }
    KeyValueConfig cfg = load_or_empty(a.config);
    RunConfig run = run_config_from(cfg);
    if (a.export_every >= 0) {
        run.export_every = a.export_every;
    }
    if (a.no_prior) {
        run.use_prior = false;
    }
    if (a.threaded) {
        run.threaded = true;
    }
    run.validate();

    std::unique_ptr<FrameSource> source;
    if (!a.scene.empty()) {
        auto scene_cfg = KeyValueConfig::load(a.scene);
        if (a.seed) {
            scene_cfg.set("seed", std::to_string(*a.seed));
        }
        source = std::make_unique<SyntheticSource>(scene_from_config(scene_cfg), run.truth_spacing);
    } else {
        source = std::make_unique<DirectorySource>(a.input);
    }
    fs::create_directories(a.out);
    run_config_to(run).save(fs::path(a.out) / "run.cfg");
    const RunSummary s = run_sequence(run, *source, a.out, &std::cout, a.verbosity);
    if (a.verbosity > 0) {
        std::cout << "done: " << s.frames_fused << " fused, " << s.frames_skipped << " skipped, " << s.feed.dropped
                  << " dropped, " << s.model_points << " points\n";
    }
    return 0;
}

int cmd_report(const std::string& metrics, const std::string& compare, const std::string& column,
               const std::string& out) {
    const CsvTable a = read_csv(metrics);
    const auto summary = summarize(a);
    std::cout << format_summary(summary);
    if (!compare.empty()) {
        const CsvTable b = read_csv(compare);
        const auto series = difference_series(a, b, column);
        const std::string text = format_difference_csv(series, column);
        if (out.empty()) {
            std::cout << '\n' << text;
        } else {
            std::ofstream f(out);
            if (!f) {
                throw std::runtime_error("cannot write " + out);
            }
            f << text;
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deformable point-based fusion with pose priors"};
    app.require_subcommand(1);

    std::string gen_scene;
    std::string gen_out;
    std::optional<std::uint64_t> gen_seed;
    auto* gen = app.add_subcommand("generate", "Render a synthetic scene into an offline frame directory");
    gen->add_option("--scene", gen_scene, "Scene config (key = value)")->required()->check(CLI::ExistingFile);
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--seed", gen_seed, "Override the scene seed");

    RunArgs run;
    auto* run_cmd = app.add_subcommand("run", "Reconstruct a sequence");
    auto* scene_opt = run_cmd->add_option("--scene", run.scene, "Synthetic scene config")->check(CLI::ExistingFile);
    auto* input_opt = run_cmd->add_option("--input", run.input, "Offline frame directory")->check(CLI::ExistingDirectory);
    scene_opt->excludes(input_opt);
    run_cmd->add_option("--config", run.config, "Pipeline parameters (key = value)")->check(CLI::ExistingFile);
    run_cmd->add_option("--out", run.out, "Output directory");
    run_cmd->add_option("--seed", run.seed, "Override the scene seed");
    run_cmd->add_option("--export-every", run.export_every, "Write model_NNNN.ply every N frames (0: final only)");
    run_cmd->add_flag("--no-prior", run.no_prior, "Ignore the pose/feature feed (priors and correspondences)");
    run_cmd->add_flag("--threaded", run.threaded, "Produce frames on a second thread (latest-wins, may drop)");
    run_cmd->add_option("-v,--verbosity", run.verbosity, "0 silent, 1 per-frame, 2 detailed")->check(CLI::Range(0, 2));

    std::string metrics;
    std::string compare;
    std::string column = "translation_error_mm";
    std::string report_out;
    auto* rep = app.add_subcommand("report", "Summarise a metrics.csv, optionally against a second run");
    rep->add_option("metrics", metrics, "metrics.csv")->required()->check(CLI::ExistingFile);
    rep->add_option("--compare", compare, "Second metrics.csv for a per-frame difference series")
        ->check(CLI::ExistingFile);
    rep->add_option("--column", column, "Column for the difference series");
    rep->add_option("--out", report_out, "Write the difference series here instead of stdout");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            return cmd_generate(gen_scene, gen_out, gen_seed);
        }
        if (*run_cmd) {
            return cmd_run(run);
        }
        return cmd_report(metrics, compare, column, report_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
