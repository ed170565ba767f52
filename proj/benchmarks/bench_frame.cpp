#include "defuse/pipeline.hpp"

#include <benchmark/benchmark.h>

using namespace defuse;

namespace {

SceneSpec bench_scene() {
    SceneSpec s;
    s.amplitude = 2.5;
    s.wavelength = 40.0;
    s.frequency = 0.05;
    s.noise_sigma = 0.1;
    s.trajectory_translation = Vec3(5, 3, 0);
    s.trajectory_rotation = Vec3(2, 2, 0);
    s.frames = 2;
    s.seed = 7;
    return s;
}

FrameEnvelope envelope_of(const RenderedFrame& f) {
    FrameEnvelope e;
    e.scan = f.scan;
    e.prior = f.prior;
    e.correspondences = f.correspondences;
    return e;
}

RunConfig bench_config(double point_grid, double node_grid) {
    RunConfig c;
    c.fusion.point_grid = point_grid;
    c.fusion.node_grid = node_grid;
    return c;
}

// One full frame (solve, register, fuse, filter) after initialisation.
void BM_Frame(benchmark::State& state) {
    const SceneGenerator gen(bench_scene());
    const FrameEnvelope first = envelope_of(gen.render_frame(0));
    const FrameEnvelope second = envelope_of(gen.render_frame(1));
    const RunConfig cfg = bench_config(state.range(0) / 100.0, state.range(1) / 10.0);
    std::size_t points = 0;
    std::size_t nodes = 0;
    for (auto _ : state) {
        state.PauseTiming();
        Pipeline p(cfg);
        p.process(first);
        points = p.model().size();
        nodes = p.field().nodes.size();
        state.ResumeTiming();
        benchmark::DoNotOptimize(p.process(second));
    }
    state.counters["points"] = static_cast<double>(points);
    state.counters["nodes"] = static_cast<double>(nodes);
}
BENCHMARK(BM_Frame)->Args({100, 40})->Args({58, 34})->Unit(benchmark::kMillisecond);

void BM_Register(benchmark::State& state) {
    const SceneGenerator gen(bench_scene());
    const RenderedFrame f0 = gen.render_frame(0);
    const RenderedFrame f1 = gen.render_frame(1);
    const FusionParams params = bench_config(0.58, 3.4).fusion;
    DepthScan scan = f1.scan;
    scan.normals = normals_from_depth(scan, {2, 2.0});
    DepthScan scan0 = f0.scan;
    scan0.normals = normals_from_depth(scan0, {2, 2.0});
    const PointModel model = filter_points(lift_scan(scan0, f0.truth.pose, 0), 0, params);
    std::vector<Vec3> pos;
    for (const auto& p : model) {
        pos.push_back(p.position);
    }
    WarpField field = make_warp_field(pos, params.node_grid, params.k, params.graph_neighbors);
    field.rotation = f1.truth.pose.rotation;
    field.translation = f1.truth.pose.translation;
    const auto skins = compute_skinning(pos, field);
    for (auto _ : state) {
        benchmark::DoNotOptimize(register_model(model, skins, field, scan, params));
    }
    state.counters["points"] = static_cast<double>(model.size());
}
BENCHMARK(BM_Register)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
