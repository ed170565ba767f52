#include "fixtures.hpp"
#include "oracle.hpp"

#include "defuse/rotation.hpp"
#include "defuse/synth.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace defuse;

namespace {

SceneSpec small_spec() {
    SceneSpec s;
    s.intrinsics = fixtures::small_camera(64, 48);
    s.frames = 6;
    s.correspondences = 5;
    return s;
}

}  // namespace

TEST_CASE("synth: a fronto-parallel plane has constant depth") {
    SceneSpec s = small_spec();
    s.surface = SurfaceKind::plane;
    s.distance = 42.0;
    const RenderedFrame f = SceneGenerator(s).render_frame(0);
    for (int v = 0; v < 48; ++v) {
        for (int u = 0; u < 64; ++u) {
            CHECK(f.scan.depth(u, v) == doctest::Approx(42.0).epsilon(1e-12));
            const Vec3 p = back_project(Pixel{u, v}, f.scan.depth(u, v), s.intrinsics);
            CHECK((f.scan.color(u, v) - surface_color(p.x(), p.y())).cwiseAbs().maxCoeff() < 1e-9);
        }
    }
    CHECK(f.truth.pose.rotation == Mat3::Identity());
    CHECK(f.truth.pose.translation == Vec3::Zero());
}

TEST_CASE("synth: sinusoid depth matches an independent ray solve") {
    SceneSpec s = small_spec();
    s.amplitude = 3.0;
    s.wavelength = 20.0;
    s.frequency = 0.1;
    const SceneGenerator gen(s);
    for (int frame : {0, 3}) {
        const RenderedFrame f = gen.render_frame(frame);
        const double phase = 2.0 * std::numbers::pi * s.frequency * frame;
        int compared = 0;
        for (int v = 0; v < 48; v += 3) {
            for (int u = 0; u < 64; u += 3) {
                const auto want = oracle::sinusoid_ray_depth(u, v, s.intrinsics, s.distance, s.amplitude, s.wavelength,
                                                             phase, 0.5 * s.extent);
                REQUIRE(want);
                CHECK(f.scan.depth(u, v) == doctest::Approx(*want).epsilon(1e-9));
                ++compared;
            }
        }
        CHECK(compared > 300);
    }
}

TEST_CASE("synth: rendering is deterministic and seed dependent") {
    SceneSpec s = small_spec();
    s.amplitude = 2.0;
    s.noise_sigma = 0.2;
    s.perturbation = 1.0;
    s.prior_translation_noise = 0.5;
    s.trajectory_translation = Vec3(2, 1, 0);
    const RenderedFrame a = SceneGenerator(s).render_frame(4, 2.0);
    const RenderedFrame b = SceneGenerator(s).render_frame(4, 2.0);
    CHECK(a.scan.depth == b.scan.depth);
    CHECK(a.scan.normals == b.scan.normals);
    CHECK(a.prior.pose.translation == b.prior.pose.translation);
    CHECK(a.truth.surface == b.truth.surface);
    REQUIRE(a.correspondences.size() == b.correspondences.size());
    for (std::size_t i = 0; i < a.correspondences.size(); ++i) {
        CHECK(a.correspondences[i].target == b.correspondences[i].target);
    }
    s.seed = 2;
    CHECK_FALSE(SceneGenerator(s).render_frame(4).scan.depth == a.scan.depth);
}

TEST_CASE("synth: consecutive frames of a static scene are bit-identical") {
    SceneSpec s = small_spec();
    s.amplitude = 2.0;
    const SceneGenerator gen(s);
    const RenderedFrame a = gen.render_frame(1);
    const RenderedFrame b = gen.render_frame(2);
    CHECK(a.scan.depth == b.scan.depth);
    CHECK(a.scan.color == b.scan.color);
    CHECK(a.scan.normals == b.scan.normals);
}

TEST_CASE("synth: noiseless depth back-projects onto the surface") {
    SceneSpec s = small_spec();
    s.amplitude = 2.5;
    s.wavelength = 25.0;
    s.frequency = 0.05;
    s.trajectory_translation = Vec3(3, -2, 1);
    s.trajectory_rotation = Vec3(3, 2, 1);
    s.trajectory_period = 8;
    s.perturbation = 1.5;
    const SceneGenerator gen(s);
    for (int frame = 0; frame < s.frames; ++frame) {
        const RenderedFrame f = gen.render_frame(frame);
        const Pose& pose = f.truth.pose;
        for (int v = 0; v < 48; v += 2) {
            for (int u = 0; u < 64; u += 2) {
                if (!valid_depth(f.scan.depth(u, v))) {
                    continue;
                }
                const Vec3 world = pose.apply_inverse(back_project(Pixel{u, v}, f.scan.depth(u, v), s.intrinsics));
                const auto h = gen.height(world.x(), world.y(), frame);
                REQUIRE(h);
                CHECK(std::abs(world.z() - *h) < 0.05);
            }
        }
    }
}

TEST_CASE("synth: correspondences are exact tracks of material points") {
    SceneSpec s = small_spec();
    s.amplitude = 2.0;
    s.frequency = 0.1;
    s.trajectory_translation = Vec3(2, 0, 0);
    const SceneGenerator gen(s);
    const RenderedFrame f = gen.render_frame(2);
    REQUIRE(f.correspondences.size() == 5);
    for (const auto& c : f.correspondences) {
        CHECK(c.model_point.z() == doctest::Approx(*gen.height(c.model_point.x(), c.model_point.y(), 1)));
        const Vec3 world = f.truth.pose.apply_inverse(c.target);
        CHECK(world.x() == doctest::Approx(c.model_point.x()));
        CHECK(world.y() == doctest::Approx(c.model_point.y()));
        CHECK(world.z() == doctest::Approx(*gen.height(world.x(), world.y(), 2)));
    }
    CHECK(gen.render_frame(0).correspondences.empty());
}

TEST_CASE("synth: camera trajectory and jumps") {
    SceneSpec s = small_spec();
    s.jump = 5.0;
    const SceneGenerator gen(s);
    // centre = -R^T t
    auto centre = [&](int f) {
        const Pose p = gen.camera_pose(f);
        return Vec3(-(p.rotation.transpose() * p.translation));
    };
    CHECK((centre(0) - Vec3::Zero()).norm() < 1e-12);
    CHECK((centre(1) - Vec3(5, 0, 0)).norm() < 1e-12);
    CHECK((centre(2) - Vec3::Zero()).norm() < 1e-12);
}

TEST_CASE("synth: the rigid scene moves at most 2 mm and 2 degrees per frame") {
    const SceneSpec s = scene_from_config(KeyValueConfig::load(std::string(DEFUSE_SOURCE_DIR) + "/configs/scenes/rigid.cfg"));
    const SceneGenerator gen(s);
    for (int f = 1; f < s.frames; ++f) {
        const Pose a = gen.camera_pose(f - 1);
        const Pose b = gen.camera_pose(f);
        const Vec3 ca = -(a.rotation.transpose() * a.translation);
        const Vec3 cb = -(b.rotation.transpose() * b.translation);
        CHECK((cb - ca).norm() <= 2.0);
        CHECK(rotation_angle_deg(a.rotation.transpose() * b.rotation) <= 2.0);
    }
}

TEST_CASE("synth: hemisphere and out-of-range frames") {
    SceneSpec s = small_spec();
    s.surface = SurfaceKind::hemisphere;
    s.radius = 20.0;
    s.distance = 30.0;
    const SceneGenerator gen(s);
    CHECK(*gen.height(0, 0, 0) == doctest::Approx(30.0));
    CHECK(*gen.height(12, 0, 0) == doctest::Approx(30.0 + 20.0 - 16.0));
    CHECK_FALSE(gen.height(19.5, 0, 0));
    const RenderedFrame f = gen.render_frame(0);
    CHECK(f.scan.depth(32, 24) == doctest::Approx(30.0).epsilon(1e-3));
    CHECK_THROWS_AS(gen.render_frame(6), SceneError);
    CHECK_THROWS_AS(gen.render_frame(-1), SceneError);
}

TEST_CASE("synth: scene config round trip and validation") {
    SceneSpec s = small_spec();
    s.surface = SurfaceKind::hemisphere;
    s.amplitude = 1.25;
    s.trajectory_rotation = Vec3(1, 2, 3);
    s.jump = 0.1;
    s.seed = 77;
    const SceneSpec back = scene_from_config(KeyValueConfig::parse(scene_to_config(s).to_string()));
    CHECK(back.surface == s.surface);
    CHECK(back.amplitude == s.amplitude);
    CHECK(back.trajectory_rotation == s.trajectory_rotation);
    CHECK(back.jump == s.jump);
    CHECK(back.seed == 77);
    CHECK(back.intrinsics.fx == s.intrinsics.fx);
    CHECK(back.intrinsics.width == 64);

    CHECK_THROWS_AS(scene_from_config(KeyValueConfig::parse("surface = torus")), ConfigError);
    CHECK_THROWS_AS(scene_from_config(KeyValueConfig::parse("frames = 0")), SceneError);
    CHECK_THROWS_AS(scene_from_config(KeyValueConfig::parse("surface = mesh")), SceneError);
}

TEST_CASE("evaluate: exact model, offset model and empty model") {
    SceneSpec s = small_spec();
    s.surface = SurfaceKind::plane;
    const SceneGenerator gen(s);
    const RenderedFrame f = gen.render_frame(0, 1.0);
    EvaluateOptions opts;
    opts.estimated_pose = f.truth.pose;
    opts.scan = &f.scan;

    SUBCASE("truth distance") {
        // points on the samples themselves, then lifted off the sheet by 0.1
        PointModel on;
        for (std::size_t i = 0; i < f.truth.surface.size(); i += 7) {
            ModelPoint p;
            p.position = f.truth.surface[i];
            on.push_back(p);
        }
        CHECK(evaluate(on, f.truth).mean_truth_distance == 0.0);
        for (auto& p : on) {
            p.position.z() += 0.1;
        }
        CHECK(evaluate(on, f.truth).mean_truth_distance == doctest::Approx(0.1).epsilon(1e-9));
    }
    SUBCASE("point-to-plane residual and pose error") {
        const PointModel exact = lift_scan(f.scan, f.truth.pose, 0);
        const ErrorReport zero = evaluate(exact, f.truth, opts);
        CHECK(zero.mean_point_to_plane < 1e-9);
        CHECK(zero.residual_points == exact.size());
        CHECK(zero.rotation_error_deg == 0.0);
        CHECK(zero.translation_error_mm == 0.0);

        PointModel shifted = exact;
        for (auto& p : shifted) {
            p.position.z() += 0.1;
        }
        CHECK(evaluate(shifted, f.truth, opts).mean_point_to_plane == doctest::Approx(0.1).epsilon(0.05));

        opts.estimated_pose->translation = Vec3(0, 0.3, 0.4);
        CHECK(evaluate(exact, f.truth, opts).translation_error_mm == doctest::Approx(0.5));
    }
    CHECK_THROWS_AS(evaluate(PointModel{}, f.truth), SceneError);
}
