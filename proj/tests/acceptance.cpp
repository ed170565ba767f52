// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "fixtures.hpp"
#include "oracle.hpp"

#include "defuse/pipeline.hpp"
#include "defuse/posefeed.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <tuple>

using namespace defuse;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::filesystem::path source_path(const std::string& rel) { return std::filesystem::path(DEFUSE_SOURCE_DIR) / rel; }

SceneSpec load_scene(const std::string& name) {
    return scene_from_config(KeyValueConfig::load(source_path("configs/scenes/" + name)));
}

RunConfig default_config() { return run_config_from(KeyValueConfig::load(source_path("configs/defaults.cfg"))); }

struct RunResult {
    RunSummary summary;
    std::vector<FrameMetrics> frames;
    double seconds = 0.0;
};

RunResult run_scene(const RunConfig& cfg, const SceneSpec& scene, const std::filesystem::path& out) {
    RunResult r;
    const SyntheticSource source(scene, cfg.truth_spacing);
    const auto t0 = Clock::now();
    r.summary = run_sequence(cfg, source, out, nullptr, 0, [&](const FrameMetrics& m) { r.frames.push_back(m); });
    r.seconds = seconds_since(t0);
    return r;
}

// 1. Analytic Jacobians against central differences.
Outcome gradients() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    double worst_value = 0.0;
    int instances = 0;
    bool every_term = true;
    for (std::uint64_t seed = 1; seed <= 25; ++seed) {
        const auto check = fixtures::check_jacobian(fixtures::random_energy_instance(seed));
        for (std::size_t t = 0; t < kTermCount; ++t) {
            worst = std::max(worst, check.max_rel_error[t]);
            worst_value = std::max(worst_value, check.max_value_error[t]);
            every_term = every_term && check.rows[t] > 0;
        }
        ++instances;
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-4 && every_term && secs < 10.0,
            fmt("%d instances, all six terms present: %s, max rel error %.2e, max residual mismatch %.2e, %.2f s",
                instances, every_term ? "yes" : "no", worst, worst_value, secs)};
}

// 2. Rigid trajectory, no noise.
Outcome rigid_recovery() {
    const fixtures::TempDir dir("accept_rigid");
    const SceneSpec scene = load_scene("rigid.cfg");
    RunConfig cfg = default_config();
    cfg.export_every = 0;
    cfg.truth_spacing = 2.0;
    const RunResult r = run_scene(cfg, scene, dir.path());
    const FrameMetrics& last = *r.summary.last;
    const bool ok = scene.frames == 50 && last.frame == 49 && last.translation_error_mm < 0.01 &&
                    last.rotation_error_deg < 0.01 && r.seconds < 60.0;
    return {ok, fmt("%d frames, final error %.2e mm / %.2e deg, %.1f s", r.summary.frames_seen,
                    last.translation_error_mm, last.rotation_error_deg, r.seconds)};
}

// 3. Breathing sinusoidal sheet with depth noise.
Outcome deformation_recovery() {
    const fixtures::TempDir dir("accept_sinusoid");
    const SceneSpec scene = load_scene("sinusoid.cfg");
    RunConfig cfg = default_config();
    cfg.export_every = 0;
    cfg.truth_spacing = 1.0;
    const RunResult r = run_scene(cfg, scene, dir.path());
    const FrameMetrics& last = *r.summary.last;
    const bool ok = scene.frames == 30 && scene.amplitude == 2.5 && scene.noise_sigma == 0.1 && last.frame == 29 &&
                    last.residual_mm < 0.5 && r.seconds < 120.0;
    return {ok, fmt("final residual %.3f mm (truth distance %.3f mm), %d fused / %d skipped, %.1f s", last.residual_mm,
                    last.truth_distance_mm, r.summary.frames_fused, r.summary.frames_skipped, r.seconds)};
}

// 4. Fast motion with and without the pose/feature feed.
Outcome prior_ab() {
    const fixtures::TempDir on_dir("accept_fast_on");
    const fixtures::TempDir off_dir("accept_fast_off");
    const SceneSpec scene = load_scene("fast.cfg");
    RunConfig cfg = default_config();
    cfg.export_every = 0;
    cfg.truth_spacing = 2.0;
    const RunResult on = run_scene(cfg, scene, on_dir.path());
    cfg.use_prior = false;
    const RunResult off = run_scene(cfg, scene, off_dir.path());
    auto max_error = [](const RunResult& r) {
        double m = 0.0;
        for (const auto& f : r.frames) {
            m = std::max(m, f.translation_error_mm);
        }
        return m;
    };
    const double on_max = max_error(on);
    const double off_max = max_error(off);
    const double on_res = on.summary.last->residual_mm;
    const double off_res = off.summary.last->residual_mm;
    const bool ok = scene.jump == 5.0 && on_res < off_res && on_max < 1.0 && off_max > 1.0;
    return {ok, fmt("final residual on %.4f / off %.4f mm; max pose error on %.4f / off %.3f mm", on_res, off_res,
                    on_max, off_max)};
}

// 5. Projective registration against the exhaustive oracle.
Outcome registration_oracle() {
    int equal = 0;
    std::size_t registered = 0;
    for (std::uint64_t seed = 1000; seed < 1200; ++seed) {
        const auto c = fixtures::random_registration_case(seed);
        const auto got = register_model(c.model, fixtures::to_library(c.skins), c.field, c.scan, c.params);
        const auto want = oracle::brute_force_register(c.model, c.skins, c.field, c.scan, c.params);
        equal += got == want ? 1 : 0;
        registered += got.registered_count();
    }
    return {equal == 200, fmt("%d/200 maps identical, %zu registrations in total", equal, registered)};
}

using CellKey = std::tuple<long long, long long, long long>;

CellKey cell_of(const Vec3& p, double grid) {
    return {static_cast<long long>(std::floor(p.x() / grid)), static_cast<long long>(std::floor(p.y() / grid)),
            static_cast<long long>(std::floor(p.z() / grid))};
}

// 6. Fusion invariants over a long run, and contraction on static scenes.
Outcome fusion_invariants() {
    SceneSpec scene = load_scene("perturbed.cfg");
    scene.frames = 100;
    scene.intrinsics = fixtures::small_camera(64, 48);
    scene.trajectory_translation = Vec3(12, 6, 0);
    scene.trajectory_period = 60;
    const SceneGenerator gen(scene);
    FusionParams params = default_config().fusion;

    bool cap_ok = true;
    bool accounting_ok = true;
    bool survival_ok = true;
    std::size_t deleted = 0;
    std::size_t checked_registered = 0;
    PointModel model;
    WarpField field;
    for (int frame = 0; frame < scene.frames; ++frame) {
        const RenderedFrame f = gen.render_frame(frame);
        DepthScan scan = f.scan;
        scan.normals = normals_from_depth(scan, {2, 2.0});
        if (frame == 0) {
            model = filter_points(lift_scan(scan, f.truth.pose, 0), 0, params);
        } else {
            field.rotation = f.truth.pose.rotation;
            field.translation = f.truth.pose.translation;
            std::vector<Vec3> pos;
            for (const auto& p : model) {
                pos.push_back(p.position);
            }
            const auto skins = compute_skinning(pos, field);
            const RegistrationMap reg = register_model(model, skins, field, scan, params);
            const FuseResult r = fuse_frame(model, skins, field, scan, reg, params, frame);
            accounting_ok = accounting_ok && r.stats.registered == reg.registered_count() &&
                            r.stats.registered + r.stats.spawned == r.stats.valid_pixels;
            deleted += r.stats.deleted;

            // each registered point's cell survives filtering, stamped with this frame
            const PointModel blended = fuse_registered(model, skins, field, scan, reg, params, frame);
            std::map<CellKey, int> cells;
            for (const auto& p : r.model) {
                cells[cell_of(p.position, params.point_grid)] = p.timestamp;
            }
            for (std::size_t i = 0; i < blended.size(); ++i) {
                if (reg.point_pixel[i] < 0) {
                    continue;
                }
                ++checked_registered;
                const auto it = cells.find(cell_of(blended[i].position, params.point_grid));
                survival_ok = survival_ok && it != cells.end() && it->second == frame;
            }
            model = r.model;
            field = r.field;
        }
        for (const auto& p : model) {
            cap_ok = cap_ok && p.weight <= params.max_weight;
        }
        if (frame == 0) {
            std::vector<Vec3> pos;
            for (const auto& p : model) {
                pos.push_back(p.position);
            }
            field = make_warp_field(pos, params.node_grid, params.k, params.graph_neighbors);
        }
    }

    // re-fusing an identical scan: the second fusion moves every fused point less than the first
    int contracting = 0;
    std::size_t fused_points = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> amp(0.5, 3.0);
        std::uniform_real_distribution<double> wave(15.0, 45.0);
        SceneSpec s;
        s.amplitude = amp(rng);
        s.wavelength = wave(rng);
        s.noise_sigma = 0.3;
        s.frames = 1;
        s.seed = seed;
        s.intrinsics = fixtures::small_camera(48, 36);
        DepthScan noisy = SceneGenerator(s).render_frame(0).scan;
        s.seed = seed + 500;
        DepthScan scan = SceneGenerator(s).render_frame(0).scan;
        noisy.normals = normals_from_depth(noisy, {2, 2.0});
        scan.normals = normals_from_depth(scan, {2, 2.0});

        const PointModel start = lift_scan(noisy, Pose{}, 0);
        std::vector<Vec3> pos;
        for (const auto& p : start) {
            pos.push_back(p.position);
        }
        const WarpField f = make_warp_field(pos, params.node_grid, params.k, params.graph_neighbors);
        const auto skins = compute_skinning(pos, f);
        const auto reg1 = register_model(start, skins, f, scan, params);
        const PointModel once = fuse_registered(start, skins, f, scan, reg1, params, 1);
        const auto reg2 = register_model(once, skins, f, scan, params);
        const PointModel twice = fuse_registered(once, skins, f, scan, reg2, params, 2);
        bool ok = true;
        std::size_t n = 0;
        for (std::size_t i = 0; i < start.size(); ++i) {
            // fused in both passes: registered and blended (weight went up; start weight 1 keeps it under the cap)
            const bool first = reg1.point_pixel[i] >= 0 && once[i].weight > start[i].weight;
            const bool second = reg2.point_pixel[i] >= 0 && twice[i].weight > once[i].weight;
            if (!first || !second) {
                continue;
            }
            ++n;
            const double m1 = (once[i].position - start[i].position).norm();
            const double m2 = (twice[i].position - once[i].position).norm();
            ok = ok && (m2 < m1 || (m1 == 0.0 && m2 == 0.0));
        }
        fused_points += n;
        contracting += ok && n > 0 ? 1 : 0;
    }

    const bool ok = cap_ok && accounting_ok && survival_ok && deleted > 0 && checked_registered > 0 &&
                    contracting == 20;
    return {ok, fmt("100 frames: cap %s, accounting %s, %zu registered points kept (%zu deletions); contraction on "
                    "%d/20 scenes (%zu points)",
                    cap_ok ? "held" : "VIOLATED", accounting_ok ? "held" : "VIOLATED", checked_registered, deleted,
                    contracting, fused_points)};
}

// 7. Latest-wins feed.
Outcome latest_wins() {
    LatestWinsFeed stalled;
    for (int i = 1; i <= 10; ++i) {
        FrameEnvelope e;
        e.scan.frame_index = i;
        stalled.submit(std::move(e));
    }
    const auto got = stalled.take_latest();
    const bool stall_ok = got && got->frame_index() == 10 && stalled.stats().dropped == 9 && !stalled.take_latest();

    std::mt19937_64 rng(2024);
    int good = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        LatestWinsFeed feed;
        int next = 0;
        int last = -1;
        bool ok = true;
        const int steps = 5 + static_cast<int>(rng() % 60);
        for (int s = 0; s < steps; ++s) {
            if (rng() % 3 != 0) {
                next += 1 + static_cast<int>(rng() % 4);
                FrameEnvelope e;
                e.scan.frame_index = next;
                feed.submit(std::move(e));
            } else if (const auto g = feed.take_latest()) {
                ok = ok && g->frame_index() > last && g->frame_index() == next;
                last = g->frame_index();
            }
        }
        const FeedStats st = feed.stats();
        ok = ok && st.submitted == st.delivered + st.dropped + (feed.pending() ? 1 : 0);
        good += ok ? 1 : 0;
    }
    return {stall_ok && good == 1000,
            fmt("stall of 10: delivered %d with %llu drops; %d/1000 schedules strictly increasing", got ? got->frame_index() : -1,
                static_cast<unsigned long long>(stalled.stats().dropped), good)};
}

// 8. Byte-identical outputs across two runs.
Outcome determinism() {
    const fixtures::TempDir a("accept_det_a");
    const fixtures::TempDir b("accept_det_b");
    SceneSpec scene = load_scene("perturbed.cfg");
    scene.frames = 8;
    RunConfig cfg = default_config();
    cfg.export_every = 2;
    cfg.truth_spacing = 2.0;
    run_scene(cfg, scene, a.path());
    run_scene(cfg, scene, b.path());
    int compared = 0;
    bool same = true;
    for (const auto& entry : std::filesystem::directory_iterator(a.path())) {
        const auto name = entry.path().filename().string();
        if (name == "timings.csv") {
            continue;  // wall-clock times
        }
        ++compared;
        same = same && std::filesystem::exists(b.path() / name) &&
               fixtures::read_file(entry.path()) == fixtures::read_file(b.path() / name);
    }
    const bool has_ply = std::filesystem::exists(a.path() / "model_0006.ply");
    return {same && has_ply && compared >= 7, fmt("%d files compared, identical: %s", compared, same ? "yes" : "no")};
}

// 9. One frame at 10k points / 256 nodes / 320x240.
Outcome performance() {
    SceneSpec scene = load_scene("sinusoid.cfg");
    scene.frames = 2;
    RunConfig cfg = default_config();
    // grids chosen so the initial model just exceeds 10k points and 256 nodes
    cfg.fusion.point_grid = 0.58;
    cfg.fusion.node_grid = 3.4;
    const SceneGenerator gen(scene);
    Pipeline pipeline(cfg);
    auto envelope = [&](int i) {
        const RenderedFrame f = gen.render_frame(i);
        FrameEnvelope e;
        e.scan = f.scan;
        e.prior = f.prior;
        e.correspondences = f.correspondences;
        return e;
    };
    pipeline.process(envelope(0));
    const std::size_t points = pipeline.model().size();
    const std::size_t nodes = pipeline.field().nodes.size();
    const FrameEnvelope next = envelope(1);
    const auto t0 = Clock::now();
    const FrameMetrics m = pipeline.process(next);
    const double secs = seconds_since(t0);
    const bool ok = points >= 10000 && nodes >= 256 && scene.intrinsics.width == 320 &&
                    scene.intrinsics.height == 240 && m.status == FrameStatus::fused && secs < 2.0;
    return {ok, fmt("%zu points, %zu nodes, 320x240, %d iterations: %.2f s", points, nodes, m.iterations, secs)};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"1 gradient correctness", gradients},
        {"2 rigid recovery", rigid_recovery},
        {"3 deformation recovery", deformation_recovery},
        {"4 prior A/B", prior_ab},
        {"5 registration oracle", registration_oracle},
        {"6 fusion invariants", fusion_invariants},
        {"7 latest-wins contract", latest_wins},
        {"8 determinism", determinism},
        {"9 performance smoke", performance},
    };
    int failures = 0;
    for (const auto& [name, run] : criteria) {
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        std::printf("%s criterion %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
