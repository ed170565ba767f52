#include "defuse/posefeed.hpp"

#include "defuse/raster_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <regex>
#include <sstream>

namespace defuse {
namespace {

std::string frame_stem(int frame) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%06d", frame);
    return buf;
}

std::optional<std::string> read_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        return std::nullopt;
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << text;
}

}  // namespace

SubmitAck LatestWinsFeed::submit(FrameEnvelope envelope) {
    SubmitAck ack;
    {
        std::lock_guard lock(mutex_);
        if (closed_) {
            ack.status = SubmitStatus::closed;
            return ack;
        }
        if (last_index_ && envelope.frame_index() <= *last_index_) {
            ++stats_.rejected;
            ack.status = SubmitStatus::rejected_out_of_order;
            return ack;
        }
        last_index_ = envelope.frame_index();
        envelope.arrival = stats_.submitted++;
        if (slot_) {
            ack.superseded = slot_->frame_index();
            ++stats_.dropped;
        }
        slot_ = std::move(envelope);
    }
    ready_.notify_one();
    return ack;
}

std::optional<FrameEnvelope> LatestWinsFeed::take_latest() {
    std::lock_guard lock(mutex_);
    if (!slot_) {
        return std::nullopt;
    }
    std::optional<FrameEnvelope> out = std::move(slot_);
    slot_.reset();
    ++stats_.delivered;
    return out;
}

std::optional<FrameEnvelope> LatestWinsFeed::wait_latest() {
    std::unique_lock lock(mutex_);
    ready_.wait(lock, [this] { return slot_.has_value() || closed_; });
    if (!slot_) {
        return std::nullopt;
    }
    std::optional<FrameEnvelope> out = std::move(slot_);
    slot_.reset();
    ++stats_.delivered;
    return out;
}

void LatestWinsFeed::close() {
    {
        std::lock_guard lock(mutex_);
        closed_ = true;
    }
    ready_.notify_all();
}

bool LatestWinsFeed::closed() const {
    std::lock_guard lock(mutex_);
    return closed_;
}

bool LatestWinsFeed::pending() const {
    std::lock_guard lock(mutex_);
    return slot_.has_value();
}

FeedStats LatestWinsFeed::stats() const {
    std::lock_guard lock(mutex_);
    return stats_;
}

PriorApplication apply_prior(const WarpField& field, const std::optional<PosePrior>& prior, int frame) {
    PriorApplication out{field, false};
    if (!prior || prior->frame_index != frame) {
        return out;
    }
    out.field.rotation = prior->pose.rotation;
    out.field.translation = prior->pose.translation;
    out.applied = true;
    return out;
}

std::string pose_to_text(const PosePrior& prior) {
    std::ostringstream out;
    out << std::setprecision(17);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            out << prior.pose.rotation(r, c) << (c == 2 ? '\n' : ' ');
        }
    }
    out << prior.pose.translation.x() << ' ' << prior.pose.translation.y() << ' ' << prior.pose.translation.z()
        << '\n';
    return out.str();
}

PosePrior pose_from_text(const std::string& text, int frame) {
    std::istringstream in(text);
    PosePrior prior;
    prior.frame_index = frame;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            in >> prior.pose.rotation(r, c);
        }
    }
    in >> prior.pose.translation.x() >> prior.pose.translation.y() >> prior.pose.translation.z();
    if (!in) {
        throw IoError("pose file: expected 12 numbers");
    }
    const Mat3& rot = prior.pose.rotation;
    if ((rot * rot.transpose() - Mat3::Identity()).norm() > 1e-6 || std::abs(rot.determinant() - 1.0) > 1e-6) {
        throw IoError("pose file: rotation is not orthonormal");
    }
    return prior;
}

std::string correspondences_to_text(const std::vector<FeatureCorrespondence>& corr) {
    std::ostringstream out;
    out << std::setprecision(17);
    for (const auto& c : corr) {
        out << c.id << ' ' << c.model_point.x() << ' ' << c.model_point.y() << ' ' << c.model_point.z() << ' '
            << c.target.x() << ' ' << c.target.y() << ' ' << c.target.z() << '\n';
    }
    return out.str();
}

std::vector<FeatureCorrespondence> correspondences_from_text(const std::string& text) {
    std::vector<FeatureCorrespondence> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') {
            continue;
        }
        std::istringstream ls(line);
        FeatureCorrespondence c;
        ls >> c.id >> c.model_point.x() >> c.model_point.y() >> c.model_point.z() >> c.target.x() >> c.target.y() >>
            c.target.z();
        if (!ls || !c.model_point.allFinite() || !c.target.allFinite()) {
            throw IoError("correspondence file: malformed line: " + line);
        }
        out.push_back(c);
    }
    return out;
}

void write_envelope(const std::filesystem::path& dir, const FrameEnvelope& envelope) {
    std::filesystem::create_directories(dir);
    const auto stem = frame_stem(envelope.frame_index());
    const auto intr = dir / "intrinsics.cfg";
    if (!std::filesystem::exists(intr)) {
        intrinsics_to_config(envelope.scan.intrinsics).save(intr);
    }
    write_depth_raw(dir / (stem + "_depth.raw"), envelope.scan.depth);
    if (!envelope.scan.color.empty()) {
        write_color_ppm(dir / (stem + "_color.ppm"), envelope.scan.color);
    }
    if (envelope.prior) {
        write_text(dir / (stem + "_pose.txt"), pose_to_text(*envelope.prior));
    }
    if (!envelope.correspondences.empty()) {
        write_text(dir / (stem + "_corr.txt"), correspondences_to_text(envelope.correspondences));
    }
}

std::vector<int> list_frames(const std::filesystem::path& dir) {
    static const std::regex pattern(R"(frame_(\d+)_depth\.(raw|pgm))");
    std::vector<int> frames;
    if (!std::filesystem::is_directory(dir)) {
        throw IoError("not a directory: " + dir.string());
    }
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (std::regex_match(name, m, pattern)) {
            frames.push_back(std::stoi(m[1].str()));
        }
    }
    std::sort(frames.begin(), frames.end());
    frames.erase(std::unique(frames.begin(), frames.end()), frames.end());
    return frames;
}

CameraIntrinsics read_directory_intrinsics(const std::filesystem::path& dir) {
    return intrinsics_from_config(KeyValueConfig::load(dir / "intrinsics.cfg"));
}

FrameEnvelope read_envelope(const std::filesystem::path& dir, int frame, const CameraIntrinsics& intrinsics) {
    const auto stem = frame_stem(frame);
    FrameEnvelope env;
    auto& scan = env.scan;
    scan.frame_index = frame;
    scan.intrinsics = intrinsics;
    const auto raw = dir / (stem + "_depth.raw");
    scan.depth = std::filesystem::exists(raw) ? read_depth_raw(raw) : read_depth_pgm(dir / (stem + "_depth.pgm"));
    if (scan.depth.width() != intrinsics.width || scan.depth.height() != intrinsics.height) {
        throw IoError(stem + ": depth size does not match intrinsics");
    }
    const auto color = dir / (stem + "_color.ppm");
    scan.color = std::filesystem::exists(color) ? read_color_ppm(color)
                                                : ColorMap(scan.depth.width(), scan.depth.height(), Color::Zero());
    if (scan.color.width() != scan.depth.width() || scan.color.height() != scan.depth.height()) {
        throw IoError(stem + ": color size does not match depth");
    }
    scan.normals = normals_from_depth(scan);
    if (const auto pose = read_text(dir / (stem + "_pose.txt"))) {
        env.prior = pose_from_text(*pose, frame);
    }
    if (const auto corr = read_text(dir / (stem + "_corr.txt"))) {
        env.correspondences = correspondences_from_text(*corr);
    }
    return env;
}

}  // namespace defuse
