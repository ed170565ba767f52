#include "fixtures.hpp"

#include "defuse/geometry.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <unistd.h>

namespace fixtures {

using defuse::Vec3;

std::vector<defuse::Skinning> to_library(const std::vector<oracle::Skin>& skins) {
    std::vector<defuse::Skinning> out;
    for (const auto& s : skins) {
        out.push_back({s.ids, s.weights});
    }
    return out;
}

oracle::EnergyInstance random_energy_instance(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> box(-8.0, 8.0);
    auto around = [&](double z) { return Vec3(box(rng), box(rng), z + box(rng)); };

    oracle::EnergyInstance inst;
    auto& f = inst.field;
    f.k = 3;
    for (int j = 0; j < 4; ++j) {
        defuse::EDNode node;
        node.position = around(50.0);
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) {
                node.affine(r, c) = (r == c ? 1.0 : 0.0) + 0.05 * g(rng);
            }
            node.translation(r) = 0.3 * g(rng);
        }
        for (int k = 0; k < 4; ++k) {
            if (k != j) {
                node.neighbors.push_back(k);
            }
        }
        f.nodes.push_back(node);
    }
    f.rotation = oracle::random_rotation(rng, 10.0);
    f.translation = Vec3(g(rng), g(rng), g(rng));

    std::vector<Vec3> node_positions;
    for (const auto& n : f.nodes) {
        node_positions.push_back(n.position);
    }
    for (int i = 0; i < 10; ++i) {
        defuse::ModelPoint p;
        p.position = around(50.0);
        p.normal = Vec3(0.2 * g(rng), 0.2 * g(rng), -1.0).normalized();
        inst.model.push_back(p);
        inst.skins.push_back(oracle::skinning(p.position, node_positions, f.k));
        inst.visible.push_back(i);
    }
    for (int i = 0; i < 2; ++i) {
        defuse::FeatureCorrespondence c;
        c.model_point = around(50.0);
        c.target = around(50.0);
        c.id = i;
        inst.correspondences.push_back(c);
        inst.corr_skins.push_back(oracle::skinning(c.model_point, node_positions, f.k));
    }
    inst.prior.pose.rotation = oracle::random_rotation(rng, 5.0) * f.rotation;
    inst.prior.pose.translation = f.translation + Vec3(0.5 * g(rng), 0.5 * g(rng), 0.5 * g(rng));
    inst.prior.frame_index = 1;
    const Vec3 n = Vec3(0.2 * g(rng), 0.2 * g(rng), -1.0).normalized();
    inst.plane = {n, n.dot(Vec3(0.0, 0.0, 50.0))};
    return inst;
}

JacobianCheck check_jacobian(const oracle::EnergyInstance& inst, double h) {
    const defuse::CameraIntrinsics cam{150.0, 150.0, 99.5, 99.5, 200, 200};
    const defuse::DepthScan scan = oracle::plane_scan(inst.plane, cam);
    const auto lib_skins = to_library(inst.skins);
    defuse::FrameInputs inputs;
    inputs.model = inst.model;
    inputs.skins = lib_skins;
    inputs.scan = &scan;
    inputs.correspondences = inst.correspondences;
    inputs.prior = inst.prior;
    const defuse::Residuals res = defuse::assemble(inputs, inst.field, inst.params, &inst.visible, true);
    const Eigen::MatrixXd analytic = Eigen::MatrixXd(res.jacobian);

    JacobianCheck out;
    const auto reference = oracle::residuals(inst, inst.field);
    for (std::size_t t = 0; t < defuse::kTermCount; ++t) {
        const auto range = res.ranges[t];
        out.rows[t] = range.count;
        if (range.count != reference[t].size()) {
            out.max_value_error[t] = std::numeric_limits<double>::infinity();
            out.max_rel_error[t] = std::numeric_limits<double>::infinity();
            continue;
        }
        for (std::size_t i = 0; i < range.count; ++i) {
            out.max_value_error[t] = std::max(
                out.max_value_error[t], std::abs(res.values(static_cast<Eigen::Index>(range.begin + i)) - reference[t][i]));
        }
        const Eigen::MatrixXd fd = oracle::finite_difference(
            [&](const defuse::WarpField& field) {
                const auto r = oracle::residuals(inst, field)[t];
                return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size())));
            },
            inst.field, h);
        const Eigen::MatrixXd block =
            analytic.middleRows(static_cast<Eigen::Index>(range.begin), static_cast<Eigen::Index>(range.count));
        for (Eigen::Index r = 0; r < fd.rows(); ++r) {
            for (Eigen::Index c = 0; c < fd.cols(); ++c) {
                const double a = block(r, c);
                const double f = fd(r, c);
                const double rel = std::abs(a - f) / std::max({1.0, std::abs(a), std::abs(f)});
                out.max_rel_error[t] = std::max(out.max_rel_error[t], rel);
            }
        }
    }
    return out;
}

RegistrationCase random_registration_case(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> size(8, 32);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);

    RegistrationCase c;
    defuse::CameraIntrinsics cam;
    cam.width = size(rng);
    cam.height = size(rng);
    cam.fx = 20.0 + 20.0 * unit(rng);
    cam.fy = cam.fx;
    cam.cx = 0.5 * (cam.width - 1);
    cam.cy = 0.5 * (cam.height - 1);
    c.scan.intrinsics = cam;
    c.scan.depth = defuse::DepthMap(cam.width, cam.height, 0.0);
    c.scan.color = defuse::ColorMap(cam.width, cam.height, defuse::Color::Zero());
    const double tilt_x = 0.3 * g(rng);
    const double wave = 1.0 + 2.0 * unit(rng);
    for (int v = 0; v < cam.height; ++v) {
        for (int u = 0; u < cam.width; ++u) {
            if (unit(rng) < 0.1) {
                continue;
            }
            c.scan.depth(u, v) = 50.0 + tilt_x * (u - cam.cx) + wave * std::sin(0.4 * v);
        }
    }
    c.scan.normals = defuse::normals_from_depth(c.scan);

    std::vector<Vec3> lifted;
    for (int v = 0; v < cam.height; ++v) {
        for (int u = 0; u < cam.width; ++u) {
            if (defuse::valid_depth(c.scan.depth(u, v))) {
                lifted.push_back(defuse::back_project(defuse::Pixel{u, v}, c.scan.depth(u, v), cam));
            }
        }
    }
    c.field.k = 4;
    c.field.nodes = defuse::build_node_graph(lifted, 6.0, 4);
    for (auto& node : c.field.nodes) {
        for (int r = 0; r < 3; ++r) {
            for (int q = 0; q < 3; ++q) {
                node.affine(r, q) += 0.02 * g(rng);
            }
            node.translation(r) = 0.2 * g(rng);
        }
    }
    c.field.rotation = oracle::random_rotation(rng, 3.0);
    c.field.translation = Vec3(0.3 * g(rng), 0.3 * g(rng), 0.3 * g(rng));

    c.params.depth_gate = 4.0 + 10.0 * unit(rng);
    c.params.angle_gate = 5.0 + 25.0 * unit(rng);

    const int count = static_cast<int>(1.5 * cam.width * cam.height);
    std::uniform_int_distribution<int> pu(0, cam.width - 1);
    std::uniform_int_distribution<int> pv(0, cam.height - 1);
    for (int i = 0; i < count; ++i) {
        defuse::ModelPoint p;
        const int u = pu(rng);
        const int v = pv(rng);
        const double d = c.scan.depth(u, v);
        Vec3 cam_point;
        Vec3 cam_normal;
        if (d > 0.0 && unit(rng) < 0.85) {
            const double jitter_u = unit(rng) - 0.5;
            const double jitter_v = unit(rng) - 0.5;
            cam_point = defuse::back_project(defuse::Vec2(u + jitter_u, v + jitter_v),
                                             d + 1.5 * c.params.depth_gate * (2.0 * unit(rng) - 1.0), cam);
            const Vec3 sn = defuse::valid_normal(c.scan.normals(u, v)) ? c.scan.normals(u, v) : Vec3(0, 0, -1);
            cam_normal = (sn + 0.3 * Vec3(g(rng), g(rng), g(rng))).normalized();
        } else {
            // Anywhere in a box, including behind the camera and outside the frustum.
            cam_point = Vec3(40.0 * g(rng), 40.0 * g(rng), 50.0 + 30.0 * g(rng));
            cam_normal = Vec3(g(rng), g(rng), g(rng)).normalized();
        }
        // Undo the global pose only; the node deformation is small.
        p.position = c.field.rotation.transpose() * (cam_point - c.field.translation);
        p.normal = c.field.rotation.transpose() * cam_normal;
        c.model.push_back(p);
    }
    std::vector<Vec3> node_positions;
    for (const auto& n : c.field.nodes) {
        node_positions.push_back(n.position);
    }
    for (const auto& p : c.model) {
        c.skins.push_back(oracle::skinning(p.position, node_positions, c.field.k));
    }
    return c;
}

defuse::CameraIntrinsics small_camera(int width, int height) {
    const double f = 75.0 * width / 80.0;
    return {f, f, 0.5 * (width - 1), 0.5 * (height - 1), width, height};
}

TempDir::TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("defuse_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace fixtures
