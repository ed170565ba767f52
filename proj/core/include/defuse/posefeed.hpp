#pragma once

#include "defuse/geometry.hpp"
#include "defuse/model.hpp"
#include "defuse/warpfield.hpp"

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <vector>

namespace defuse {

/// One frame of input: the scan plus whatever the pose/feature tracker produced for it.
struct FrameEnvelope {
    DepthScan scan;
    std::optional<PosePrior> prior;
    std::vector<FeatureCorrespondence> correspondences;
    std::uint64_t arrival = 0;  // assigned by the feed

    int frame_index() const { return scan.frame_index; }
};

enum class SubmitStatus { accepted, rejected_out_of_order, closed };

struct SubmitAck {
    SubmitStatus status = SubmitStatus::accepted;
    std::optional<int> superseded;  // frame index dropped by this submission
};

struct FeedStats {
    std::uint64_t submitted = 0;  // accepted submissions
    std::uint64_t delivered = 0;
    std::uint64_t dropped = 0;
    std::uint64_t rejected = 0;
};

/// Single-slot latest-wins handoff between one producer and one consumer. A new submission
/// supersedes any envelope the consumer has not taken yet. Invariant:
/// submitted == delivered + dropped + (pending ? 1 : 0).
class LatestWinsFeed {
public:
    SubmitAck submit(FrameEnvelope envelope);

    /// Non-blocking; nullopt when nothing is pending.
    std::optional<FrameEnvelope> take_latest();

    /// Blocks until an envelope is pending or the feed is closed and drained.
    std::optional<FrameEnvelope> wait_latest();

    void close();
    bool closed() const;
    bool pending() const;
    FeedStats stats() const;

private:
    mutable std::mutex mutex_;
    std::condition_variable ready_;
    std::optional<FrameEnvelope> slot_;
    std::optional<int> last_index_;
    FeedStats stats_;
    bool closed_ = false;
};

struct PriorApplication {
    WarpField field;
    bool applied = false;  // false: degraded mode, pose left at its previous value
};

/// Initialises the global pose from the prior; node parameters are never touched.
PriorApplication apply_prior(const WarpField& field, const std::optional<PosePrior>& prior, int frame);

// Offline directory layout, per frame NNNNNN:
//   intrinsics.cfg               fx fy cx cy width height (key = value)
//   frame_NNNNNN_depth.raw/.hdr  float32 depth in mm (or frame_NNNNNN_depth.pgm)
//   frame_NNNNNN_color.ppm       optional
//   frame_NNNNNN_pose.txt        optional: 9 row-major rotation values then 3 translation values
//   frame_NNNNNN_corr.txt        optional: "id ox oy oz nx ny nz" per line
std::string pose_to_text(const PosePrior& prior);
PosePrior pose_from_text(const std::string& text, int frame);
std::string correspondences_to_text(const std::vector<FeatureCorrespondence>& corr);
std::vector<FeatureCorrespondence> correspondences_from_text(const std::string& text);

void write_envelope(const std::filesystem::path& dir, const FrameEnvelope& envelope);
/// Frame indices present in `dir`, ascending.
std::vector<int> list_frames(const std::filesystem::path& dir);
/// Reads one frame; normals are derived from the depth raster.
FrameEnvelope read_envelope(const std::filesystem::path& dir, int frame, const CameraIntrinsics& intrinsics);
CameraIntrinsics read_directory_intrinsics(const std::filesystem::path& dir);

}  // namespace defuse
