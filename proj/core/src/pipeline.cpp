#include "defuse/pipeline.hpp"

#include "defuse/ply.hpp"
#include "defuse/rotation.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace defuse {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::vector<Vec3> positions_of(const PointModel& model) {
    std::vector<Vec3> out;
    out.reserve(model.size());
    for (const auto& p : model) {
        out.push_back(p.position);
    }
    return out;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    return out;
}

}  // namespace

void RunConfig::validate() const {
    energy.validate();
    fusion.validate();
    solver.validate();
    if (!(discard_residual > 0.0)) {
        throw std::invalid_argument("discard_residual must be positive");
    }
    if (export_every < 0) {
        throw std::invalid_argument("export_every must be >= 0");
    }
    if (normals.step < 1 || !(normals.smoothing_sigma >= 0.0)) {
        throw std::invalid_argument("normal_step must be >= 1 and normal_smoothing >= 0");
    }
    if (!(truth_spacing > 0.0)) {
        throw std::invalid_argument("truth_spacing must be positive");
    }
}

RunConfig run_config_from(const KeyValueConfig& cfg) {
    RunConfig c;
    auto& e = c.energy;
    e.w_rot = cfg.get_double("w_rot", e.w_rot);
    e.w_reg = cfg.get_double("w_reg", e.w_reg);
    e.w_data = cfg.get_double("w_data", e.w_data);
    e.w_corr = cfg.get_double("w_corr", e.w_corr);
    e.w_r = cfg.get_double("w_r", e.w_r);
    e.w_p = cfg.get_double("w_p", e.w_p);
    e.eps_d = cfg.get_double("eps_d", e.eps_d);
    e.eps_n = cfg.get_double("eps_n", e.eps_n);
    e.alpha = cfg.get_double("alpha", e.alpha);

    auto& f = c.fusion;
    f.node_grid = cfg.get_double("node_grid", f.node_grid);
    f.depth_gate = cfg.get_double("depth_gate", f.depth_gate);
    f.angle_gate = cfg.get_double("angle_gate", f.angle_gate);
    f.truncation = cfg.get_double("truncation", f.truncation);
    f.max_weight = cfg.get_double("max_weight", f.max_weight);
    f.time_threshold = cfg.get_int("time_threshold", f.time_threshold);
    f.weight_threshold = cfg.get_double("weight_threshold", f.weight_threshold);
    f.point_grid = cfg.get_double("point_grid", f.point_grid);
    f.k = cfg.get_int("k", f.k);
    f.graph_neighbors = cfg.get_int("graph_neighbors", f.graph_neighbors);

    auto& s = c.solver;
    s.max_iterations = cfg.get_int("max_iterations", s.max_iterations);
    s.initial_damping = cfg.get_double("initial_damping", s.initial_damping);
    s.damping_up = cfg.get_double("damping_up", s.damping_up);
    s.damping_down = cfg.get_double("damping_down", s.damping_down);
    s.convergence_tol = cfg.get_double("convergence_tol", s.convergence_tol);
    s.step_tol = cfg.get_double("step_tol", s.step_tol);
    s.max_damping = cfg.get_double("max_damping", s.max_damping);

    c.discard_residual = cfg.get_double("discard_residual", c.discard_residual);
    c.use_prior = cfg.get_bool("use_prior", c.use_prior);
    c.truth_spacing = cfg.get_double("truth_spacing", c.truth_spacing);
    c.export_every = cfg.get_int("export_every", c.export_every);
    c.threaded = cfg.get_bool("threaded", c.threaded);
    c.normals.step = cfg.get_int("normal_step", c.normals.step);
    c.normals.smoothing_sigma = cfg.get_double("normal_smoothing", c.normals.smoothing_sigma);
    c.validate();
    return c;
}

KeyValueConfig run_config_to(const RunConfig& c) {
    KeyValueConfig cfg;
    const auto& e = c.energy;
    cfg.set("w_rot", num(e.w_rot));
    cfg.set("w_reg", num(e.w_reg));
    cfg.set("w_data", num(e.w_data));
    cfg.set("w_corr", num(e.w_corr));
    cfg.set("w_r", num(e.w_r));
    cfg.set("w_p", num(e.w_p));
    cfg.set("eps_d", num(e.eps_d));
    cfg.set("eps_n", num(e.eps_n));
    cfg.set("alpha", num(e.alpha));
    const auto& f = c.fusion;
    cfg.set("node_grid", num(f.node_grid));
    cfg.set("depth_gate", num(f.depth_gate));
    cfg.set("angle_gate", num(f.angle_gate));
    cfg.set("truncation", num(f.truncation));
    cfg.set("max_weight", num(f.max_weight));
    cfg.set("time_threshold", std::to_string(f.time_threshold));
    cfg.set("weight_threshold", num(f.weight_threshold));
    cfg.set("point_grid", num(f.point_grid));
    cfg.set("k", std::to_string(f.k));
    cfg.set("graph_neighbors", std::to_string(f.graph_neighbors));
    const auto& s = c.solver;
    cfg.set("max_iterations", std::to_string(s.max_iterations));
    cfg.set("initial_damping", num(s.initial_damping));
    cfg.set("damping_up", num(s.damping_up));
    cfg.set("damping_down", num(s.damping_down));
    cfg.set("convergence_tol", num(s.convergence_tol));
    cfg.set("step_tol", num(s.step_tol));
    cfg.set("max_damping", num(s.max_damping));
    cfg.set("discard_residual", num(c.discard_residual));
    cfg.set("use_prior", c.use_prior ? "true" : "false");
    cfg.set("truth_spacing", num(c.truth_spacing));
    cfg.set("export_every", std::to_string(c.export_every));
    cfg.set("threaded", c.threaded ? "true" : "false");
    cfg.set("normal_step", std::to_string(c.normals.step));
    cfg.set("normal_smoothing", num(c.normals.smoothing_sigma));
    return cfg;
}

SyntheticSource::SyntheticSource(SceneSpec spec, double truth_spacing)
    : generator_(std::move(spec)), truth_spacing_(truth_spacing) {}

int SyntheticSource::frame_count() const { return generator_.spec().frames; }

SourceFrame SyntheticSource::load(int index) const {
    RenderedFrame r = generator_.render_frame(index, truth_spacing_);
    SourceFrame out;
    out.envelope.scan = std::move(r.scan);
    out.envelope.prior = r.prior;
    out.envelope.correspondences = std::move(r.correspondences);
    out.truth = std::move(r.truth);
    return out;
}

DirectorySource::DirectorySource(std::filesystem::path dir)
    : dir_(std::move(dir)), frames_(list_frames(dir_)), intrinsics_(read_directory_intrinsics(dir_)) {
    if (frames_.empty()) {
        throw std::runtime_error("no frames found in " + dir_.string());
    }
}

int DirectorySource::frame_count() const { return static_cast<int>(frames_.size()); }

SourceFrame DirectorySource::load(int index) const {
    SourceFrame out;
    out.envelope = read_envelope(dir_, frames_.at(static_cast<std::size_t>(index)), intrinsics_);
    return out;
}

std::string_view frame_status_name(FrameStatus s) {
    switch (s) {
        case FrameStatus::initialized: return "initialized";
        case FrameStatus::fused: return "fused";
        case FrameStatus::skipped_stall: return "skipped_stall";
        case FrameStatus::skipped_residual: return "skipped_residual";
    }
    return "?";
}

Pipeline::Pipeline(RunConfig config) : config_(std::move(config)) { config_.validate(); }

void Pipeline::initialize(const FrameEnvelope& envelope, FrameMetrics& m) {
    const int frame = envelope.frame_index();
    Pose pose;
    if (config_.use_prior && envelope.prior && envelope.prior->frame_index == frame) {
        pose = envelope.prior->pose;
        m.prior_applied = true;
    }
    m.stages.push_back("lift");
    PointModel lifted = lift_scan(envelope.scan, pose, frame);
    m.fuse.valid_pixels = lifted.size();
    m.fuse.spawned = lifted.size();
    m.stages.push_back("filter");
    model_ = filter_points(lifted, frame, config_.fusion, &m.fuse);
    if (model_.empty()) {
        throw std::runtime_error("first frame has no valid depth");
    }
    m.stages.push_back("nodes");
    field_ = make_warp_field(positions_of(model_), config_.fusion.node_grid, config_.fusion.k,
                             config_.fusion.graph_neighbors);
    field_.rotation = pose.rotation;
    field_.translation = pose.translation;
    m.status = FrameStatus::initialized;
    initialized_ = true;
}

void Pipeline::evaluate_frame(const FrameEnvelope& envelope, const GroundTruthFrame* truth, FrameMetrics& m) const {
    const Pose estimate{field_.rotation, field_.translation};
    m.back_projection_mm = mean_back_projection_residual(model_, estimate, envelope.scan, config_.energy.eps_d);
    if (truth) {
        EvaluateOptions options;
        options.estimated_pose = estimate;
        options.residual_gate = config_.energy.eps_d;
        const ErrorReport err = evaluate(model_, *truth, options);
        m.truth_distance_mm = err.mean_truth_distance;
        m.rotation_error_deg = err.rotation_error_deg;
        m.translation_error_mm = err.translation_error_mm;
    }
    m.model_points = model_.size();
    m.nodes = field_.nodes.size();
}

FrameMetrics Pipeline::process(const FrameEnvelope& input, const GroundTruthFrame* truth, FrameTimings* timings) {
    const auto t_start = Clock::now();
    FrameMetrics m;
    m.frame = input.frame_index();
    m.stages.push_back("preprocess");
    FrameEnvelope envelope = input;
    envelope.scan.normals = normals_from_depth(envelope.scan, config_.normals);
    FrameTimings t;
    t.frame = m.frame;

    if (!initialized_) {
        initialize(envelope, m);
        evaluate_frame(envelope, truth, m);
        t.total_s = seconds_since(t_start);
        if (timings) {
            *timings = t;
        }
        return m;
    }

    const int frame = m.frame;
    const std::optional<PosePrior> prior = config_.use_prior ? envelope.prior : std::nullopt;

    m.stages.push_back("prior");
    PriorApplication pa = apply_prior(field_, prior, frame);
    m.prior_applied = pa.applied;

    m.stages.push_back("visible");
    const std::vector<Vec3> positions = positions_of(model_);
    const std::vector<Skinning> skins = compute_skinning(positions, pa.field);
    FrameInputs inputs;
    inputs.model = model_;
    inputs.skins = skins;
    inputs.scan = &envelope.scan;
    // Correspondences come from the same feature track as the pose prior; without the feed neither is used.
    if (config_.use_prior) {
        inputs.correspondences = envelope.correspondences;
    }
    if (pa.applied) {
        inputs.prior = prior;
    }

    m.stages.push_back("solve");
    auto t0 = Clock::now();
    SolveResult solved = solve(pa.field, inputs, config_.energy, config_.solver);
    t.solve_s = seconds_since(t0);
    const SolveReport& rep = solved.report;
    history_ = rep.history;
    m.iterations = rep.iterations;
    m.termination = rep.termination;
    m.initial_energy = rep.initial_energy;
    m.final_energy = rep.final_energy;
    m.terms = rep.final_terms;
    m.visible = rep.visible_points;
    const std::vector<int> visible =
        predict_visible(model_, skins, solved.field, envelope.scan, config_.energy);
    m.residual_mm = mean_abs_point_to_plane(visible, model_, skins, solved.field, envelope.scan);

    if (rep.termination == Termination::stalled) {
        m.status = FrameStatus::skipped_stall;
    } else if (visible.empty() || m.residual_mm > config_.discard_residual) {
        m.status = FrameStatus::skipped_residual;
    }
    if (m.status != FrameStatus::fused) {
        m.model_points = model_.size();
        m.nodes = field_.nodes.size();
        t.total_s = seconds_since(t_start);
        if (timings) {
            *timings = t;
        }
        return m;
    }

    m.stages.push_back("register");
    t0 = Clock::now();
    const RegistrationMap reg = register_model(model_, skins, solved.field, envelope.scan, config_.fusion);
    t.register_s = seconds_since(t0);

    m.stages.push_back("fuse");
    m.stages.push_back("filter");
    t0 = Clock::now();
    FuseResult fused = fuse_frame(model_, skins, solved.field, envelope.scan, reg, config_.fusion, frame);
    t.fuse_s = seconds_since(t0);
    m.fuse = fused.stats;
    model_ = std::move(fused.model);
    field_ = std::move(fused.field);

    evaluate_frame(envelope, truth, m);
    t.total_s = seconds_since(t_start);
    if (timings) {
        *timings = t;
    }
    return m;
}

std::string metrics_csv_header() {
    std::string h = "frame,status,prior,iterations,termination,initial_energy,final_energy";
    for (std::size_t i = 0; i < kTermCount; ++i) {
        h += ",E_";
        h += term_name(static_cast<Term>(i));
    }
    h += ",visible,residual_mm,back_projection_mm,truth_distance_mm,rotation_error_deg,translation_error_mm,"
         "valid_pixels,registered,fused,spawned,merged,deleted,model_points,nodes,dropped";
    return h;
}

std::string metrics_csv_row(const FrameMetrics& m) {
    std::string r = std::to_string(m.frame);
    r += ',';
    r += frame_status_name(m.status);
    r += ',' + std::to_string(m.prior_applied ? 1 : 0);
    r += ',' + std::to_string(m.iterations);
    r += ',';
    r += termination_name(m.termination);
    r += ',' + num(m.initial_energy) + ',' + num(m.final_energy);
    for (double e : m.terms) {
        r += ',' + num(e);
    }
    r += ',' + std::to_string(m.visible);
    r += ',' + num(m.residual_mm) + ',' + num(m.back_projection_mm) + ',' + num(m.truth_distance_mm);
    r += ',' + num(m.rotation_error_deg) + ',' + num(m.translation_error_mm);
    for (std::size_t v : {m.fuse.valid_pixels, m.fuse.registered, m.fuse.fused, m.fuse.spawned, m.fuse.merged,
                          m.fuse.deleted, m.model_points, m.nodes}) {
        r += ',' + std::to_string(v);
    }
    r += ',' + std::to_string(m.dropped);
    return r;
}

RunSummary run_sequence(const RunConfig& config, const FrameSource& source, const std::filesystem::path& out_dir,
                        std::ostream* log, int verbosity, const FrameCallback& on_frame) {
    config.validate();
    std::filesystem::create_directories(out_dir);
    auto metrics = open_out(out_dir / "metrics.csv");
    auto energy = open_out(out_dir / "energy.csv");
    auto timing = open_out(out_dir / "timings.csv");
    metrics << metrics_csv_header() << '\n';
    energy << "frame,iteration,energy,damping,rejected";
    for (std::size_t i = 0; i < kTermCount; ++i) {
        energy << ",E_" << term_name(static_cast<Term>(i));
    }
    energy << '\n';
    timing << "frame,solve_s,register_s,fuse_s,total_s\n";

    Pipeline pipeline(config);
    LatestWinsFeed feed;
    RunSummary summary;
    std::map<int, GroundTruthFrame> truths;
    std::mutex truth_mutex;
    const int last_frame = source.frame_count() - 1;

    auto produce = [&](int i) {
        SourceFrame f = source.load(i);
        if (f.truth) {
            std::lock_guard lock(truth_mutex);
            truths[f.envelope.frame_index()] = std::move(*f.truth);
        }
        feed.submit(std::move(f.envelope));
    };

    auto consume = [&](const FrameEnvelope& env) {
        std::optional<GroundTruthFrame> truth;
        {
            std::lock_guard lock(truth_mutex);
            if (auto it = truths.find(env.frame_index()); it != truths.end()) {
                truth = std::move(it->second);
            }
            truths.erase(truths.begin(), truths.upper_bound(env.frame_index()));
        }
        FrameTimings t;
        FrameMetrics m = pipeline.process(env, truth ? &*truth : nullptr, &t);
        m.dropped = feed.stats().dropped;
        ++summary.frames_seen;
        if (m.status == FrameStatus::fused || m.status == FrameStatus::initialized) {
            ++summary.frames_fused;
        } else {
            ++summary.frames_skipped;
        }

        metrics << metrics_csv_row(m) << '\n';
        for (const auto& rec : pipeline.last_history()) {
            if (m.status == FrameStatus::initialized) {
                break;
            }
            energy << m.frame << ',' << rec.iteration << ',' << num(rec.energy) << ',' << num(rec.damping) << ','
                   << rec.rejected_steps;
            for (double e : rec.terms) {
                energy << ',' << num(e);
            }
            energy << '\n';
        }
        timing << t.frame << ',' << num(t.solve_s) << ',' << num(t.register_s) << ',' << num(t.fuse_s) << ','
               << num(t.total_s) << '\n';

        const bool periodic = config.export_every > 0 && m.frame % config.export_every == 0;
        if (periodic || m.frame == last_frame) {
            char name[32];
            std::snprintf(name, sizeof name, "model_%04d.ply", m.frame);
            write_model_ply(out_dir / name, pipeline.model());
        }
        if (log && verbosity > 0) {
            *log << "frame " << m.frame << ' ' << frame_status_name(m.status) << " stages=";
            for (std::size_t i = 0; i < m.stages.size(); ++i) {
                *log << (i ? ">" : "") << m.stages[i];
            }
            *log << " iters=" << m.iterations << " residual=" << num(m.residual_mm)
                 << "mm points=" << m.model_points;
            if (verbosity > 1) {
                *log << " energy=" << num(m.initial_energy) << "->" << num(m.final_energy)
                     << " rot_err=" << num(m.rotation_error_deg) << "deg trans_err=" << num(m.translation_error_mm)
                     << "mm solve=" << num(t.solve_s) << 's';
            }
            *log << '\n';
        }
        if (on_frame) {
            on_frame(m);
        }
        summary.last = std::move(m);
    };

    if (config.threaded) {
        std::exception_ptr producer_error;
        std::thread producer([&] {
            try {
                for (int i = 0; i <= last_frame; ++i) {
                    produce(i);
                }
            } catch (...) {
                producer_error = std::current_exception();
            }
            feed.close();
        });
        try {
            while (auto env = feed.wait_latest()) {
                consume(*env);
            }
        } catch (...) {
            feed.close();
            producer.join();
            throw;
        }
        producer.join();
        if (producer_error) {
            std::rethrow_exception(producer_error);
        }
    } else {
        for (int i = 0; i <= last_frame; ++i) {
            produce(i);
            if (auto env = feed.take_latest()) {
                consume(*env);
            }
        }
        feed.close();
    }

    summary.feed = feed.stats();
    summary.model_points = pipeline.model().size();
    // The last consumed frame may not be the last produced one when frames were dropped.
    if (summary.last && summary.last->frame != last_frame) {
        char name[32];
        std::snprintf(name, sizeof name, "model_%04d.ply", summary.last->frame);
        write_model_ply(out_dir / name, pipeline.model());
    }

    auto text = open_out(out_dir / "summary.txt");
    text << "frames_seen " << summary.frames_seen << '\n'
         << "frames_fused " << summary.frames_fused << '\n'
         << "frames_skipped " << summary.frames_skipped << '\n'
         << "feed_submitted " << summary.feed.submitted << '\n'
         << "feed_delivered " << summary.feed.delivered << '\n'
         << "feed_dropped " << summary.feed.dropped << '\n'
         << "model_points " << summary.model_points << '\n';
    if (summary.last) {
        const auto& m = *summary.last;
        text << "final_frame " << m.frame << '\n'
             << "final_residual_mm " << num(m.residual_mm) << '\n'
             << "final_back_projection_mm " << num(m.back_projection_mm) << '\n'
             << "final_truth_distance_mm " << num(m.truth_distance_mm) << '\n'
             << "final_rotation_error_deg " << num(m.rotation_error_deg) << '\n'
             << "final_translation_error_mm " << num(m.translation_error_mm) << '\n';
    }
    return summary;
}

}  // namespace defuse
