#include "defuse/synth.hpp"

#include "defuse/rotation.hpp"

#include <boost/math/tools/toms748_solve.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <unordered_map>

namespace defuse {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDeg = kPi / 180.0;

enum class Stream : std::uint64_t { bumps = 1, noise = 2, prior = 3, tracks = 4 };

std::mt19937_64 make_rng(std::uint64_t seed, int frame, Stream stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(frame), static_cast<std::uint32_t>(stream)};
    return std::mt19937_64(seq);
}

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
}

// Uniform hash grid for nearest-neighbour queries against the truth samples.
class NearestGrid {
public:
    NearestGrid(std::span<const Vec3> points, double cell) : points_(points), cell_(cell) {
        for (int i = 0; i < static_cast<int>(points.size()); ++i) {
            cells_[key(cell_of(points[i]))].push_back(i);
        }
    }

    double distance(const Vec3& q) const {
        const auto c = cell_of(q);
        double best = std::numeric_limits<double>::infinity();
        for (int ring = 0; ring < 512; ++ring) {
            // Any point in a ring beyond this one is at least ring * cell_ away.
            if (std::isfinite(best) && best < ring * cell_) {
                break;
            }
            for (int dx = -ring; dx <= ring; ++dx) {
                for (int dy = -ring; dy <= ring; ++dy) {
                    for (int dz = -ring; dz <= ring; ++dz) {
                        if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) {
                            continue;
                        }
                        const auto it = cells_.find(key({c[0] + dx, c[1] + dy, c[2] + dz}));
                        if (it == cells_.end()) {
                            continue;
                        }
                        for (int i : it->second) {
                            best = std::min(best, (points_[i] - q).norm());
                        }
                    }
                }
            }
        }
        return best;
    }

private:
    std::array<long long, 3> cell_of(const Vec3& p) const {
        return {static_cast<long long>(std::floor(p.x() / cell_)), static_cast<long long>(std::floor(p.y() / cell_)),
                static_cast<long long>(std::floor(p.z() / cell_))};
    }
    static std::uint64_t key(const std::array<long long, 3>& c) {
        return (static_cast<std::uint64_t>(c[0] & 0x1fffff) << 42) | (static_cast<std::uint64_t>(c[1] & 0x1fffff) << 21) |
               static_cast<std::uint64_t>(c[2] & 0x1fffff);
    }

    std::span<const Vec3> points_;
    double cell_;
    std::unordered_map<std::uint64_t, std::vector<int>> cells_;
};

}  // namespace

void SceneSpec::validate() const {
    if (!(amplitude >= 0.0)) {
        throw SceneError("amplitude must be non-negative");
    }
    if (frames < 1) {
        throw SceneError("frame count must be >= 1");
    }
    if (!(extent > 0.0 && distance > 0.0 && wavelength > 0.0 && radius > 0.0 && trajectory_period > 0.0)) {
        throw SceneError("extent, distance, wavelength, radius and period must be positive");
    }
    if (!(noise_sigma >= 0.0 && perturbation >= 0.0 && perturbation_radius > 0.0)) {
        throw SceneError("noise and perturbation must be non-negative");
    }
    if (correspondences < 0) {
        throw SceneError("correspondence count must be non-negative");
    }
    if (surface == SurfaceKind::mesh && mesh_path.empty()) {
        throw SceneError("mesh surface needs mesh_path");
    }
    intrinsics.validate();
}

std::string surface_name(SurfaceKind kind) {
    switch (kind) {
        case SurfaceKind::plane: return "plane";
        case SurfaceKind::sinusoid: return "sinusoid";
        case SurfaceKind::hemisphere: return "hemisphere";
        case SurfaceKind::mesh: return "mesh";
    }
    return "?";
}

SceneSpec scene_from_config(const KeyValueConfig& cfg) {
    SceneSpec s;
    const std::string kind = cfg.get_string("surface", "sinusoid");
    if (kind == "plane") {
        s.surface = SurfaceKind::plane;
    } else if (kind == "sinusoid") {
        s.surface = SurfaceKind::sinusoid;
    } else if (kind == "hemisphere") {
        s.surface = SurfaceKind::hemisphere;
    } else if (kind == "mesh") {
        s.surface = SurfaceKind::mesh;
    } else {
        throw ConfigError("unknown surface kind '" + kind + "'");
    }
    s.extent = cfg.get_double("extent", s.extent);
    s.distance = cfg.get_double("distance", s.distance);
    s.amplitude = cfg.get_double("amplitude", s.amplitude);
    s.wavelength = cfg.get_double("wavelength", s.wavelength);
    s.frequency = cfg.get_double("frequency", s.frequency);
    s.radius = cfg.get_double("radius", s.radius);
    s.perturbation = cfg.get_double("perturbation", s.perturbation);
    s.perturbation_radius = cfg.get_double("perturbation_radius", s.perturbation_radius);
    s.trajectory_translation = Vec3(cfg.get_double("traj_tx", 0.0), cfg.get_double("traj_ty", 0.0),
                                    cfg.get_double("traj_tz", 0.0));
    s.trajectory_rotation = Vec3(cfg.get_double("traj_rx", 0.0), cfg.get_double("traj_ry", 0.0),
                                 cfg.get_double("traj_rz", 0.0));
    s.trajectory_period = cfg.get_double("traj_period", s.trajectory_period);
    s.jump = cfg.get_double("jump", s.jump);
    s.noise_sigma = cfg.get_double("noise_sigma", s.noise_sigma);
    s.prior_rotation_noise = cfg.get_double("prior_rot_noise", s.prior_rotation_noise);
    s.prior_translation_noise = cfg.get_double("prior_trans_noise", s.prior_translation_noise);
    s.correspondences = cfg.get_int("correspondences", s.correspondences);
    s.frames = cfg.get_int("frames", s.frames);
    s.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<int>(s.seed)));
    s.intrinsics.fx = cfg.get_double("fx", s.intrinsics.fx);
    s.intrinsics.fy = cfg.get_double("fy", s.intrinsics.fy);
    s.intrinsics.cx = cfg.get_double("cx", s.intrinsics.cx);
    s.intrinsics.cy = cfg.get_double("cy", s.intrinsics.cy);
    s.intrinsics.width = cfg.get_int("width", s.intrinsics.width);
    s.intrinsics.height = cfg.get_int("height", s.intrinsics.height);
    s.mesh_path = cfg.get_string("mesh_path", "");
    s.validate();
    return s;
}

KeyValueConfig scene_to_config(const SceneSpec& s) {
    KeyValueConfig cfg;
    cfg.set("surface", surface_name(s.surface));
    cfg.set("extent", fmt(s.extent));
    cfg.set("distance", fmt(s.distance));
    cfg.set("amplitude", fmt(s.amplitude));
    cfg.set("wavelength", fmt(s.wavelength));
    cfg.set("frequency", fmt(s.frequency));
    cfg.set("radius", fmt(s.radius));
    cfg.set("perturbation", fmt(s.perturbation));
    cfg.set("perturbation_radius", fmt(s.perturbation_radius));
    cfg.set("traj_tx", fmt(s.trajectory_translation.x()));
    cfg.set("traj_ty", fmt(s.trajectory_translation.y()));
    cfg.set("traj_tz", fmt(s.trajectory_translation.z()));
    cfg.set("traj_rx", fmt(s.trajectory_rotation.x()));
    cfg.set("traj_ry", fmt(s.trajectory_rotation.y()));
    cfg.set("traj_rz", fmt(s.trajectory_rotation.z()));
    cfg.set("traj_period", fmt(s.trajectory_period));
    cfg.set("jump", fmt(s.jump));
    cfg.set("noise_sigma", fmt(s.noise_sigma));
    cfg.set("prior_rot_noise", fmt(s.prior_rotation_noise));
    cfg.set("prior_trans_noise", fmt(s.prior_translation_noise));
    cfg.set("correspondences", std::to_string(s.correspondences));
    cfg.set("frames", std::to_string(s.frames));
    cfg.set("seed", std::to_string(s.seed));
    cfg.set("fx", fmt(s.intrinsics.fx));
    cfg.set("fy", fmt(s.intrinsics.fy));
    cfg.set("cx", fmt(s.intrinsics.cx));
    cfg.set("cy", fmt(s.intrinsics.cy));
    cfg.set("width", std::to_string(s.intrinsics.width));
    cfg.set("height", std::to_string(s.intrinsics.height));
    if (!s.mesh_path.empty()) {
        cfg.set("mesh_path", s.mesh_path);
    }
    return cfg;
}

Color surface_color(double x, double y) {
    return {128.0 + 90.0 * std::sin(x / 3.0) * std::cos(y / 5.0), 110.0 + 60.0 * std::cos((x + y) / 4.0),
            90.0 + 50.0 * std::sin(y / 2.5)};
}

SceneGenerator::SceneGenerator(SceneSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    if (spec_.surface == SurfaceKind::mesh) {
        mesh_ = read_mesh_ply(spec_.mesh_path);
        if (mesh_.vertices.empty() || mesh_.faces.empty()) {
            throw SceneError("mesh has no triangles");
        }
    }
    if (spec_.perturbation > 0.0) {
        auto rng = make_rng(spec_.seed, 0, Stream::bumps);
        std::uniform_real_distribution<double> pos(-0.4 * spec_.extent, 0.4 * spec_.extent);
        std::uniform_real_distribution<double> mag(spec_.perturbation, 1.5 * spec_.perturbation);
        std::uniform_int_distribution<int> sign(0, 1);
        std::uniform_int_distribution<std::size_t> vertex(0, mesh_.vertices.empty() ? 0 : mesh_.vertices.size() - 1);
        for (int f = 1; f < spec_.frames; ++f) {
            Bump b{};
            if (spec_.surface == SurfaceKind::mesh) {
                const Vec3& v = mesh_.vertices[vertex(rng)];
                b.x = v.x();
                b.y = v.y();
            } else {
                b.x = pos(rng);
                b.y = pos(rng);
            }
            b.magnitude = mag(rng) * (sign(rng) ? 1.0 : -1.0);
            bumps_.push_back(b);
        }
    }
}

double SceneGenerator::bump_height(double x, double y, int frame) const {
    double h = 0.0;
    const double inv = 1.0 / (2.0 * spec_.perturbation_radius * spec_.perturbation_radius);
    const int count = std::min<int>(frame, static_cast<int>(bumps_.size()));
    for (int g = 0; g < count; ++g) {
        const double dx = x - bumps_[g].x;
        const double dy = y - bumps_[g].y;
        const double r2 = dx * dx + dy * dy;
        if (r2 * inv < 40.0) {
            h += bumps_[g].magnitude * std::exp(-r2 * inv);
        }
    }
    return h;
}

std::optional<double> SceneGenerator::height(double x, double y, int frame) const {
    const double half = 0.5 * spec_.extent;
    if (std::abs(x) > half || std::abs(y) > half) {
        return std::nullopt;
    }
    const double phase = 2.0 * kPi * spec_.frequency * frame;
    double h = spec_.distance;
    switch (spec_.surface) {
        case SurfaceKind::plane:
            break;
        case SurfaceKind::sinusoid: {
            const double k = 2.0 * kPi / spec_.wavelength;
            h += spec_.amplitude * std::sin(k * x + phase) * std::cos(k * y);
            break;
        }
        case SurfaceKind::hemisphere: {
            const double r = spec_.radius + spec_.amplitude * std::sin(phase);
            const double r2 = x * x + y * y;
            if (r2 > 0.95 * 0.95 * r * r) {
                return std::nullopt;
            }
            h += r - std::sqrt(r * r - r2);
            break;
        }
        case SurfaceKind::mesh:
            return std::nullopt;
    }
    return h + bump_height(x, y, frame);
}

double SceneGenerator::lipschitz_bound(int frame) const {
    double l = 0.0;
    if (spec_.surface == SurfaceKind::sinusoid) {
        l += spec_.amplitude * (2.0 * kPi / spec_.wavelength) * std::sqrt(2.0);
    } else if (spec_.surface == SurfaceKind::hemisphere) {
        l += 0.95 / std::sqrt(1.0 - 0.95 * 0.95);
    }
    const int count = std::min<int>(frame, static_cast<int>(bumps_.size()));
    for (int g = 0; g < count; ++g) {
        // max |grad| of m exp(-r^2 / 2s^2) is |m| exp(-1/2) / s
        l += std::abs(bumps_[g].magnitude) * 0.6066 / spec_.perturbation_radius;
    }
    return l;
}

std::optional<double> SceneGenerator::cast_ray(const Vec3& origin, const Vec3& dir, int frame,
                                               double lipschitz) const {
    if (!(dir.z() > 1e-6)) {
        return std::nullopt;
    }
    double spread = spec_.amplitude + 1.0;
    for (int g = 0; g < std::min<int>(frame, static_cast<int>(bumps_.size())); ++g) {
        spread += std::abs(bumps_[g].magnitude);
    }
    const double z_lo = spec_.distance - spread;
    const double z_hi = spec_.distance + spread + (spec_.surface == SurfaceKind::hemisphere ? spec_.radius : 0.0);
    double s = std::max(1e-6, (z_lo - origin.z()) / dir.z());
    const double s_end = (z_hi - origin.z()) / dir.z();
    const double rate = dir.z() + lipschitz * std::hypot(dir.x(), dir.y());

    auto eval = [&](double t) -> std::optional<double> {
        const Vec3 p = origin + t * dir;
        const auto h = height(p.x(), p.y(), frame);
        if (!h) {
            return std::nullopt;
        }
        return p.z() - *h;
    };

    bool have_prev = false;
    double prev_s = 0.0;
    double prev_f = 0.0;
    while (s <= s_end) {
        const auto f = eval(s);
        if (!f) {
            have_prev = false;
            s += 0.1;
            continue;
        }
        if (*f >= 0.0) {
            if (*f == 0.0) {
                return s;
            }
            if (!have_prev) {
                return std::nullopt;  // entered below the sheet through the patch boundary
            }
            auto g = [&](double t) {
                const auto v = eval(t);
                return v ? *v : 1.0;  // off the patch counts as above the sheet
            };
            std::uintmax_t max_iter = 100;
            const auto [lo, hi] = boost::math::tools::toms748_solve(
                g, prev_s, s, prev_f, *f, [](double a, double b) { return std::abs(b - a) <= 1e-13; }, max_iter);
            return 0.5 * (lo + hi);
        }
        have_prev = true;
        prev_s = s;
        prev_f = *f;
        s += std::max(-*f / rate, 1e-4);
    }
    return std::nullopt;
}

Pose SceneGenerator::camera_pose(int frame) const {
    const double phase = std::sin(2.0 * kPi * frame / spec_.trajectory_period);
    const Mat3 orientation = so3_exp(spec_.trajectory_rotation * (phase * kDeg));
    Vec3 centre = spec_.trajectory_translation * phase;
    if (frame % 2 == 1) {
        centre.x() += spec_.jump;
    }
    Pose pose;
    pose.rotation = orientation.transpose();
    pose.translation = -(orientation.transpose() * centre);
    return pose;
}

std::vector<Vec3> SceneGenerator::mesh_vertices(int frame) const {
    std::vector<Vec3> out = mesh_.vertices;
    for (auto& v : out) {
        v.z() += bump_height(v.x(), v.y(), frame);
    }
    return out;
}

void SceneGenerator::render_mesh(int frame, const Pose& pose, DepthMap& depth, ColorMap& color) const {
    const auto& k = spec_.intrinsics;
    const auto world = mesh_vertices(frame);
    std::vector<Vec3> cam(world.size());
    for (std::size_t i = 0; i < world.size(); ++i) {
        cam[i] = pose.apply(world[i]);
    }
    for (const auto& f : mesh_.faces) {
        const Vec3& a = cam[f[0]];
        const Vec3& b = cam[f[1]];
        const Vec3& c = cam[f[2]];
        if (a.z() <= 1e-6 || b.z() <= 1e-6 || c.z() <= 1e-6) {
            continue;
        }
        const Vec2 qa(k.fx * a.x() / a.z() + k.cx, k.fy * a.y() / a.z() + k.cy);
        const Vec2 qb(k.fx * b.x() / b.z() + k.cx, k.fy * b.y() / b.z() + k.cy);
        const Vec2 qc(k.fx * c.x() / c.z() + k.cx, k.fy * c.y() / c.z() + k.cy);
        const double area = (qb - qa).x() * (qc - qa).y() - (qb - qa).y() * (qc - qa).x();
        if (std::abs(area) < 1e-12) {
            continue;
        }
        const int u0 = std::max(0, static_cast<int>(std::ceil(std::min({qa.x(), qb.x(), qc.x()}))));
        const int u1 = std::min(k.width - 1, static_cast<int>(std::floor(std::max({qa.x(), qb.x(), qc.x()}))));
        const int v0 = std::max(0, static_cast<int>(std::ceil(std::min({qa.y(), qb.y(), qc.y()}))));
        const int v1 = std::min(k.height - 1, static_cast<int>(std::floor(std::max({qa.y(), qb.y(), qc.y()}))));
        for (int v = v0; v <= v1; ++v) {
            for (int u = u0; u <= u1; ++u) {
                const Vec2 p(u, v);
                auto edge = [](const Vec2& s, const Vec2& e, const Vec2& x) {
                    return (e - s).x() * (x - s).y() - (e - s).y() * (x - s).x();
                };
                const double w0 = edge(qb, qc, p) / area;
                const double w1 = edge(qc, qa, p) / area;
                const double w2 = edge(qa, qb, p) / area;
                if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) {
                    continue;
                }
                const double inv_z = w0 / a.z() + w1 / b.z() + w2 / c.z();
                const double z = 1.0 / inv_z;
                if (valid_depth(depth(u, v)) && depth(u, v) <= z) {
                    continue;
                }
                depth(u, v) = z;
                const Vec3 wp =
                    z * (w0 / a.z() * world[f[0]] + w1 / b.z() * world[f[1]] + w2 / c.z() * world[f[2]]);
                color(u, v) = surface_color(wp.x(), wp.y());
            }
        }
    }
}

std::vector<Vec3> SceneGenerator::surface_samples(int frame, double spacing) const {
    if (spec_.surface == SurfaceKind::mesh) {
        return mesh_vertices(frame);
    }
    std::vector<Vec3> out;
    const double half = 0.5 * spec_.extent;
    const int n = static_cast<int>(std::floor(spec_.extent / spacing));
    for (int iy = 0; iy <= n; ++iy) {
        for (int ix = 0; ix <= n; ++ix) {
            const double x = -half + ix * spacing;
            const double y = -half + iy * spacing;
            if (const auto h = height(x, y, frame)) {
                out.emplace_back(x, y, *h);
            }
        }
    }
    return out;
}

RenderedFrame SceneGenerator::render_frame(int frame, double truth_spacing) const {
    if (frame < 0 || frame >= spec_.frames) {
        throw SceneError("frame index out of range");
    }
    const auto& k = spec_.intrinsics;
    const Pose pose = camera_pose(frame);
    const Mat3 orientation = pose.rotation.transpose();
    const Vec3 centre = -(orientation * pose.translation);

    RenderedFrame out;
    DepthScan& scan = out.scan;
    scan.intrinsics = k;
    scan.frame_index = frame;
    scan.depth = DepthMap(k.width, k.height, 0.0);
    scan.color = ColorMap(k.width, k.height, Color::Zero());

    if (spec_.surface == SurfaceKind::mesh) {
        render_mesh(frame, pose, scan.depth, scan.color);
    } else {
        const double lipschitz = lipschitz_bound(frame);
        for (int v = 0; v < k.height; ++v) {
            for (int u = 0; u < k.width; ++u) {
                const Vec3 dir = orientation * Vec3((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
                if (const auto s = cast_ray(centre, dir, frame, lipschitz)) {
                    scan.depth(u, v) = *s;
                    const Vec3 hit = centre + *s * dir;
                    scan.color(u, v) = surface_color(hit.x(), hit.y());
                }
            }
        }
    }

    std::size_t valid = 0;
    for (std::size_t i = 0; i < scan.depth.size(); ++i) {
        valid += valid_depth(scan.depth[i]) ? 1 : 0;
    }
    if (valid == 0) {
        throw SceneError("camera does not see the surface in frame " + std::to_string(frame));
    }
    if (spec_.noise_sigma > 0.0) {
        auto rng = make_rng(spec_.seed, frame, Stream::noise);
        std::normal_distribution<double> noise(0.0, spec_.noise_sigma);
        for (std::size_t i = 0; i < scan.depth.size(); ++i) {
            if (valid_depth(scan.depth[i])) {
                const double d = scan.depth[i] + noise(rng);
                scan.depth[i] = d > 0.0 ? d : 0.0;
            }
        }
    }
    scan.normals = normals_from_depth(scan);

    out.prior.frame_index = frame;
    out.prior.pose = pose;
    if (spec_.prior_rotation_noise > 0.0 || spec_.prior_translation_noise > 0.0) {
        auto rng = make_rng(spec_.seed, frame, Stream::prior);
        std::normal_distribution<double> unit(0.0, 1.0);
        const Vec3 w(unit(rng), unit(rng), unit(rng));
        const Vec3 t(unit(rng), unit(rng), unit(rng));
        out.prior.pose.rotation = so3_exp(w * (spec_.prior_rotation_noise * kDeg)) * pose.rotation;
        out.prior.pose.translation = pose.translation + t * spec_.prior_translation_noise;
    }

    if (frame > 0 && spec_.correspondences > 0) {
        auto rng = make_rng(spec_.seed, frame, Stream::tracks);
        std::uniform_real_distribution<double> coord(-0.5 * spec_.extent, 0.5 * spec_.extent);
        const auto prev_vertices = spec_.surface == SurfaceKind::mesh ? mesh_vertices(frame - 1) : std::vector<Vec3>{};
        const auto cur_vertices = spec_.surface == SurfaceKind::mesh ? mesh_vertices(frame) : std::vector<Vec3>{};
        std::uniform_int_distribution<std::size_t> pick(0, cur_vertices.empty() ? 0 : cur_vertices.size() - 1);
        for (int attempt = 0; attempt < 50 * spec_.correspondences &&
                              static_cast<int>(out.truth.correspondences.size()) < spec_.correspondences;
             ++attempt) {
            Vec3 before;
            Vec3 now;
            int id = attempt;
            if (spec_.surface == SurfaceKind::mesh) {
                const auto idx = pick(rng);
                before = prev_vertices[idx];
                now = cur_vertices[idx];
                id = static_cast<int>(idx);
            } else {
                const double x = coord(rng);
                const double y = coord(rng);
                const auto h0 = height(x, y, frame - 1);
                const auto h1 = height(x, y, frame);
                if (!h0 || !h1) {
                    continue;
                }
                before = Vec3(x, y, *h0);
                now = Vec3(x, y, *h1);
            }
            const Vec3 cam = pose.apply(now);
            const auto px = project_to_pixel(cam, k);
            if (!px || !scan.valid_pixel(px->u, px->v) || std::abs(scan.depth(px->u, px->v) - cam.z()) > 0.5) {
                continue;
            }
            out.truth.correspondences.push_back({before, cam, id});
        }
        out.correspondences = out.truth.correspondences;
    }

    out.truth.frame = frame;
    out.truth.pose = pose;
    if (truth_spacing > 0.0) {
        out.truth.surface = surface_samples(frame, truth_spacing);
    }
    return out;
}

double mean_back_projection_residual(std::span<const ModelPoint> model, const Pose& pose, const DepthScan& scan,
                                     double gate, std::size_t* count) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& p : model) {
        const Vec3 cam = pose.apply(p.position);
        const auto px = project_to_pixel(cam, scan.intrinsics);
        if (!px || !scan.valid_pixel(px->u, px->v)) {
            continue;
        }
        const Vec3 lifted = back_project(*px, scan.depth(px->u, px->v), scan.intrinsics);
        if (!((cam - lifted).norm() < gate)) {
            continue;
        }
        sum += std::abs(scan.normals(px->u, px->v).dot(cam - lifted));
        ++n;
    }
    if (count) {
        *count = n;
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

ErrorReport evaluate(std::span<const ModelPoint> model, const GroundTruthFrame& truth, const EvaluateOptions& options) {
    if (model.empty()) {
        throw SceneError("evaluate: empty model");
    }
    ErrorReport report;
    if (!truth.surface.empty()) {
        const NearestGrid grid(truth.surface, 1.0);
        double sum = 0.0;
        for (const auto& p : model) {
            sum += grid.distance(p.position);
        }
        report.mean_truth_distance = sum / static_cast<double>(model.size());
    }
    if (options.estimated_pose) {
        report.rotation_error_deg =
            rotation_angle_deg(options.estimated_pose->rotation.transpose() * truth.pose.rotation);
        report.translation_error_mm = (options.estimated_pose->translation - truth.pose.translation).norm();
        if (options.scan) {
            report.mean_point_to_plane = mean_back_projection_residual(model, *options.estimated_pose, *options.scan,
                                                                       options.residual_gate, &report.residual_points);
        }
    }
    return report;
}

}  // namespace defuse
