#pragma once

#include "defuse/config.hpp"
#include "defuse/energy.hpp"
#include "defuse/fusion.hpp"
#include "defuse/model.hpp"
#include "defuse/posefeed.hpp"
#include "defuse/solver.hpp"
#include "defuse/synth.hpp"
#include "defuse/warpfield.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace defuse {

struct RunConfig {
    EnergyParams energy;
    FusionParams fusion;
    SolverConfig solver;
    double discard_residual = 2.0;  // frames whose post-solve mean |point-to-plane| exceeds this (mm) are skipped
    bool use_prior = true;          // false drops the whole feature feed: pose prior and correspondences
    double truth_spacing = 0.5;     // synthetic evaluation sampling, mm
    int export_every = 0;           // 0 disables periodic PLY export; the final model is always written
    bool threaded = false;          // produce frames on a second thread through the latest-wins feed
    NormalOptions normals{2, 2.0};  // scan normals are recomputed with these before use

    void validate() const;
};

/// Reads every recognised key; unknown keys are ignored so one file can also carry a scene.
RunConfig run_config_from(const KeyValueConfig& cfg);
KeyValueConfig run_config_to(const RunConfig& cfg);

struct SourceFrame {
    FrameEnvelope envelope;
    std::optional<GroundTruthFrame> truth;
};

class FrameSource {
public:
    virtual ~FrameSource() = default;
    virtual int frame_count() const = 0;
    virtual SourceFrame load(int index) const = 0;
};

class SyntheticSource : public FrameSource {
public:
    SyntheticSource(SceneSpec spec, double truth_spacing);
    int frame_count() const override;
    SourceFrame load(int index) const override;
    const SceneGenerator& generator() const { return generator_; }

private:
    SceneGenerator generator_;
    double truth_spacing_;
};

class DirectorySource : public FrameSource {
public:
    explicit DirectorySource(std::filesystem::path dir);
    int frame_count() const override;
    SourceFrame load(int index) const override;

private:
    std::filesystem::path dir_;
    std::vector<int> frames_;
    CameraIntrinsics intrinsics_;
};

enum class FrameStatus { initialized, fused, skipped_stall, skipped_residual };
std::string_view frame_status_name(FrameStatus s);

struct FrameMetrics {
    int frame = 0;
    FrameStatus status = FrameStatus::fused;
    bool prior_applied = false;
    int iterations = 0;
    Termination termination = Termination::converged;
    double initial_energy = 0.0;
    double final_energy = 0.0;
    std::array<double, kTermCount> terms{};  // weighted, final state
    std::size_t visible = 0;
    double residual_mm = 0.0;         // mean |point-to-plane| of visible points after the solve
    double back_projection_mm = 0.0;  // fused model against the scan through the estimated pose
    double truth_distance_mm = 0.0;   // synthetic runs only
    double rotation_error_deg = 0.0;
    double translation_error_mm = 0.0;
    FuseStats fuse;
    std::size_t model_points = 0;
    std::size_t nodes = 0;
    std::uint64_t dropped = 0;  // cumulative feed drops
    std::vector<std::string> stages;
};

struct FrameTimings {
    int frame = 0;
    double solve_s = 0.0;
    double register_s = 0.0;
    double fuse_s = 0.0;
    double total_s = 0.0;
};

/// Consumer-side state: the fused model and warp field, advanced one envelope at a time.
class Pipeline {
public:
    explicit Pipeline(RunConfig config);

    FrameMetrics process(const FrameEnvelope& envelope, const GroundTruthFrame* truth = nullptr,
                         FrameTimings* timings = nullptr);

    const PointModel& model() const { return model_; }
    const WarpField& field() const { return field_; }
    const std::vector<IterationRecord>& last_history() const { return history_; }
    bool initialized() const { return initialized_; }

private:
    void initialize(const FrameEnvelope& envelope, FrameMetrics& m);
    void evaluate_frame(const FrameEnvelope& envelope, const GroundTruthFrame* truth, FrameMetrics& m) const;

    RunConfig config_;
    PointModel model_;
    WarpField field_;
    std::vector<IterationRecord> history_;
    bool initialized_ = false;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const FrameMetrics& m);

struct RunSummary {
    int frames_seen = 0;
    int frames_fused = 0;
    int frames_skipped = 0;
    FeedStats feed;
    std::optional<FrameMetrics> last;
    std::size_t model_points = 0;
};

using FrameCallback = std::function<void(const FrameMetrics&)>;

/// Feeds every frame of `source` through a LatestWinsFeed into a Pipeline. Writes metrics.csv,
/// energy.csv, timings.csv, model_NNNN.ply and summary.txt into `out_dir`. With
/// `config.threaded` the producer runs on its own thread and slow frames may be dropped.
RunSummary run_sequence(const RunConfig& config, const FrameSource& source, const std::filesystem::path& out_dir,
                        std::ostream* log = nullptr, int verbosity = 1, const FrameCallback& on_frame = {});

}  // namespace defuse
