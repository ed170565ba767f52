#include "defuse/energy.hpp"

#include "defuse/rotation.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace defuse {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Adds d(v~)/d(x) scaled by `row_weights` (one 3-vector per output row) to `block`.
// v~ = R s + T with s = sum_j w_j [A_j (v - g_j) + g_j + t_j].
template <int Rows>
void add_warp_jacobian(ResidualBlock& block, std::size_t row, const Eigen::Matrix<double, Rows, 3>& proj,
                       const Vec3& v, const Skinning& skin, const WarpField& field, const Vec3& rotated_s) {
    const auto gcol = global_column(field);
    const Eigen::Matrix<double, Rows, 3> pr = proj * field.rotation;
    for (std::size_t i = 0; i < skin.node_ids.size(); ++i) {
        const int j = skin.node_ids[i];
        const double w = skin.weights[i];
        if (w == 0.0) {
            continue;
        }
        const Vec3 d = v - field.nodes[j].position;
        const auto col = node_column(j);
        // d v~ / d A(a,c) = w R.col(a) d(c);  d v~ / d t(a) = w R.col(a)
        for (int q = 0; q < Rows; ++q) {
            for (int a = 0; a < 3; ++a) {
                const double base = w * pr(q, a);
                for (int c = 0; c < 3; ++c) {
                    block.jacobian.emplace_back(static_cast<int>(row + q), static_cast<int>(col + 3 * a + c),
                                                base * d(c));
                }
                block.jacobian.emplace_back(static_cast<int>(row + q), static_cast<int>(col + 9 + a), base);
            }
        }
    }
    // Left rotation increment: d(Exp(delta) R s)/d delta = -[R s]_x
    const Eigen::Matrix<double, Rows, 3> prot = -proj * skew(rotated_s);
    for (int q = 0; q < Rows; ++q) {
        for (int a = 0; a < 3; ++a) {
            block.jacobian.emplace_back(static_cast<int>(row + q), static_cast<int>(gcol + a), prot(q, a));
            block.jacobian.emplace_back(static_cast<int>(row + q), static_cast<int>(gcol + 3 + a), proj(q, a));
        }
    }
}

struct DataSample {
    bool valid = false;
    Vec3 warped;
    Vec3 lifted;
    Vec3 normal;
};

DataSample sample_data(const ModelPoint& point, const Skinning& skin, const WarpField& field, const DepthScan& scan) {
    DataSample s;
    s.warped = warp_point(point.position, skin, field);
    const auto px = project_to_pixel(s.warped, scan.intrinsics);
    if (!px || !scan.valid_pixel(px->u, px->v)) {
        return s;
    }
    s.lifted = back_project(*px, scan.depth(px->u, px->v), scan.intrinsics);
    s.normal = scan.normals(px->u, px->v);
    s.valid = true;
    return s;
}

}  // namespace

void EnergyParams::validate() const {
    for (double w : {w_rot, w_reg, w_data, w_corr, w_r, w_p, alpha}) {
        if (!(w >= 0.0)) {
            throw std::invalid_argument("energy weights must be non-negative");
        }
    }
    if (!(eps_d > 0.0)) {
        throw std::invalid_argument("eps_d must be positive");
    }
    if (!(eps_n > 0.0 && eps_n < 90.0)) {
        throw std::invalid_argument("eps_n must lie in (0, 90) degrees");
    }
}

std::string_view term_name(Term term) {
    switch (term) {
        case Term::rot: return "rot";
        case Term::reg: return "reg";
        case Term::data: return "data";
        case Term::corr: return "corr";
        case Term::pose_rot: return "pose_rot";
        case Term::pose_trans: return "pose_trans";
    }
    return "?";
}

double ResidualBlock::squared_norm() const {
    double sum = 0.0;
    for (double v : values) {
        sum += v * v;
    }
    return sum;
}

ResidualBlock e_rot(const WarpField& field) {
    ResidualBlock block;
    block.values.reserve(6 * field.nodes.size());
    block.jacobian.reserve(36 * field.nodes.size());
    static constexpr std::array<std::array<int, 2>, 6> pairs{{{0, 1}, {0, 2}, {1, 2}, {0, 0}, {1, 1}, {2, 2}}};
    for (int j = 0; j < static_cast<int>(field.nodes.size()); ++j) {
        const Mat3& a = field.nodes[j].affine;
        const auto col = node_column(j);
        for (const auto& [p, q] : pairs) {
            const auto row = static_cast<int>(block.values.size());
            const double dot = a.col(p).dot(a.col(q));
            block.values.push_back(p == q ? dot - 1.0 : dot);
            // d(c_p . c_q)/d A(r,p) = c_q(r), d/d A(r,q) = c_p(r); doubled when p == q.
            for (int r = 0; r < 3; ++r) {
                if (p == q) {
                    block.jacobian.emplace_back(row, static_cast<int>(col + 3 * r + p), 2.0 * a(r, p));
                } else {
                    block.jacobian.emplace_back(row, static_cast<int>(col + 3 * r + p), a(r, q));
                    block.jacobian.emplace_back(row, static_cast<int>(col + 3 * r + q), a(r, p));
                }
            }
        }
    }
    return block;
}

ResidualBlock e_reg(const WarpField& field, double alpha) {
    ResidualBlock block;
    const double s = std::sqrt(alpha);
    for (int j = 0; j < static_cast<int>(field.nodes.size()); ++j) {
        const auto& nj = field.nodes[j];
        for (int k : nj.neighbors) {
            const auto& nk = field.nodes[k];
            const Vec3 edge = nk.position - nj.position;
            const Vec3 r = s * (nj.affine * edge + nj.position + nj.translation - (nk.position + nk.translation));
            const auto row = static_cast<int>(block.values.size());
            const auto cj = static_cast<int>(node_column(j));
            const auto ck = static_cast<int>(node_column(k));
            for (int a = 0; a < 3; ++a) {
                block.values.push_back(r(a));
                for (int c = 0; c < 3; ++c) {
                    block.jacobian.emplace_back(row + a, cj + 3 * a + c, s * edge(c));
                }
                block.jacobian.emplace_back(row + a, cj + 9 + a, s);
                block.jacobian.emplace_back(row + a, ck + 9 + a, -s);
            }
        }
    }
    return block;
}

std::vector<int> predict_visible(std::span<const ModelPoint> model, std::span<const Skinning> skins,
                                 const WarpField& field, const DepthScan& scan, const EnergyParams& params) {
    std::vector<int> visible;
    const double cos_gate = std::cos(params.eps_n * kDeg);
    for (int i = 0; i < static_cast<int>(model.size()); ++i) {
        const DataSample s = sample_data(model[i], skins[i], field, scan);
        if (!s.valid || !((s.warped - s.lifted).norm() < params.eps_d)) {
            continue;
        }
        Vec3 n;
        try {
            n = warp_normal(model[i].normal, skins[i], field);
        } catch (const GeometryError&) {
            continue;
        }
        if (n.dot(s.normal) > cos_gate) {
            visible.push_back(i);
        }
    }
    return visible;
}

namespace {

ResidualBlock data_block(std::span<const int> visible, std::span<const ModelPoint> model,
                         std::span<const Skinning> skins, const WarpField& field, const DepthScan& scan,
                         bool with_jacobian) {
    ResidualBlock block;
    block.values.reserve(visible.size());
    if (with_jacobian) {
        block.jacobian.reserve(visible.size() * (12 * static_cast<std::size_t>(field.k) + 6));
    }
    Eigen::Matrix<double, 1, 3> proj;
    for (int i : visible) {
        const std::size_t row = block.values.size();
        const DataSample s = sample_data(model[i], skins[i], field, scan);
        if (!s.valid) {
            block.values.push_back(0.0);
            ++block.flagged;
            continue;
        }
        block.values.push_back(s.normal.dot(s.warped - s.lifted));
        if (with_jacobian) {
            // The hit pixel is locally constant, so only v~ carries derivatives.
            proj.row(0) = s.normal.transpose();
            add_warp_jacobian(block, row, proj, model[i].position, skins[i], field, s.warped - field.translation);
        }
    }
    return block;
}

// Row-major Jacobian straight from the term blocks (rows offset per term, values scaled),
// duplicates summed, columns ascending within each row.
Eigen::SparseMatrix<double, Eigen::RowMajor> stack_jacobian(const std::array<ResidualBlock, kTermCount>& blocks,
                                                            const std::array<TermRange, kTermCount>& ranges,
                                                            const std::array<double, kTermCount>& scale,
                                                            std::size_t rows, std::size_t cols) {
    Eigen::SparseMatrix<double, Eigen::RowMajor> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    std::size_t nnz = 0;
    for (const auto& b : blocks) {
        nnz += b.jacobian.size();
    }
    m.resizeNonZeros(static_cast<Eigen::Index>(nnz));
    int* outer = m.outerIndexPtr();
    int* inner = m.innerIndexPtr();
    double* value = m.valuePtr();
    std::fill(outer, outer + rows + 1, 0);
    for (std::size_t t = 0; t < kTermCount; ++t) {
        for (const auto& tr : blocks[t].jacobian) {
            ++outer[ranges[t].begin + static_cast<std::size_t>(tr.row()) + 1];
        }
    }
    for (std::size_t r = 0; r < rows; ++r) {
        outer[r + 1] += outer[r];
    }
    std::vector<int> fill(outer, outer + rows);
    for (std::size_t t = 0; t < kTermCount; ++t) {
        for (const auto& tr : blocks[t].jacobian) {
            const int pos = fill[ranges[t].begin + static_cast<std::size_t>(tr.row())]++;
            inner[pos] = tr.col();
            value[pos] = scale[t] * tr.value();
        }
    }
    // Sort each row by column and merge duplicates, compacting in place.
    std::vector<std::pair<int, double>> row;
    int out = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        const int begin = outer[r];
        const int end = outer[r + 1];
        row.clear();
        for (int k = begin; k < end; ++k) {
            row.emplace_back(inner[k], value[k]);
        }
        std::sort(row.begin(), row.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        outer[r] = out;
        for (const auto& [c, v] : row) {
            if (out > outer[r] && inner[out - 1] == c) {
                value[out - 1] += v;
            } else {
                inner[out] = c;
                value[out] = v;
                ++out;
            }
        }
    }
    outer[rows] = out;
    m.resizeNonZeros(out);
    return m;
}

}  // namespace

ResidualBlock e_data(std::span<const int> visible, std::span<const ModelPoint> model,
                     std::span<const Skinning> skins, const WarpField& field, const DepthScan& scan) {
    return data_block(visible, model, skins, field, scan, true);
}

ResidualBlock e_corr(std::span<const FeatureCorrespondence> correspondences, std::span<const Skinning> skins,
                     const WarpField& field) {
    ResidualBlock block;
    const Mat3 proj = Mat3::Identity();
    for (std::size_t i = 0; i < correspondences.size(); ++i) {
        const auto& c = correspondences[i];
        const std::size_t row = block.values.size();
        const Vec3 warped = warp_point(c.model_point, skins[i], field);
        const Vec3 r = warped - c.target;
        block.values.insert(block.values.end(), {r.x(), r.y(), r.z()});
        add_warp_jacobian(block, row, proj, c.model_point, skins[i], field, warped - field.translation);
    }
    return block;
}

ResidualBlock e_pose(const WarpField& field, const PosePrior& prior, double w_r, double w_p) {
    ResidualBlock block;
    const Mat3 delta = field.rotation * prior.pose.rotation.transpose();
    const Vec3 ypr = euler_zyx(delta);
    Vec3 rot_res;
    Mat3 rot_jac;
    if (std::abs(std::abs(ypr.y()) - std::numbers::pi / 2) < 1e-6) {
        rot_res = so3_log(delta);
        rot_jac = so3_left_jacobian_inverse(rot_res);
        block.flagged = 1;
    } else {
        // Space-frame angular velocity of Rz(yaw)Ry(pitch)Rx(roll) is M * (yaw', pitch', roll').
        const double cy = std::cos(ypr.x());
        const double sy = std::sin(ypr.x());
        const double cp = std::cos(ypr.y());
        const double sp = std::sin(ypr.y());
        Mat3 m;
        m << 0.0, -sy, cy * cp,
             0.0, cy, sy * cp,
             1.0, 0.0, -sp;
        rot_res = ypr;
        rot_jac = m.inverse();
    }
    const double sr = std::sqrt(w_r);
    const double sp = std::sqrt(w_p);
    const Vec3 trans_res = field.translation - prior.pose.translation;
    const auto gcol = static_cast<int>(global_column(field));
    for (int a = 0; a < 3; ++a) {
        block.values.push_back(sr * rot_res(a));
        for (int b = 0; b < 3; ++b) {
            block.jacobian.emplace_back(a, gcol + b, sr * rot_jac(a, b));
        }
    }
    for (int a = 0; a < 3; ++a) {
        block.values.push_back(sp * trans_res(a));
        block.jacobian.emplace_back(3 + a, gcol + 3 + a, sp);
    }
    return block;
}

Residuals assemble(const FrameInputs& inputs, const WarpField& field, const EnergyParams& params,
                   const std::vector<int>* visible, bool with_jacobian) {
    if (inputs.scan == nullptr) {
        throw std::invalid_argument("assemble: no scan");
    }
    if (inputs.skins.size() != inputs.model.size()) {
        throw std::invalid_argument("assemble: skinning count does not match model");
    }
    Residuals out;
    out.visible = visible ? *visible : predict_visible(inputs.model, inputs.skins, field, *inputs.scan, params);

    std::vector<Skinning> corr_skins;
    corr_skins.reserve(inputs.correspondences.size());
    for (const auto& c : inputs.correspondences) {
        corr_skins.push_back(compute_skinning(c.model_point, field));
    }

    std::array<ResidualBlock, kTermCount> blocks;
    blocks[0] = e_rot(field);
    blocks[1] = e_reg(field, params.alpha);
    blocks[2] = data_block(out.visible, inputs.model, inputs.skins, field, *inputs.scan, with_jacobian);
    blocks[3] = e_corr(inputs.correspondences, corr_skins, field);
    out.invalid_data_points = blocks[2].flagged;
    std::array<double, kTermCount> scale{std::sqrt(params.w_rot), std::sqrt(params.w_reg), std::sqrt(params.w_data),
                                         std::sqrt(params.w_corr), 1.0, 1.0};
    out.weights = {params.w_rot, params.w_reg, params.w_data, params.w_corr, params.w_r, params.w_p};
    if (inputs.prior) {
        const ResidualBlock unit = e_pose(field, *inputs.prior, 1.0, 1.0);
        out.pose_fallback = unit.flagged != 0;
        out.energies[4] = unit.values[0] * unit.values[0] + unit.values[1] * unit.values[1] +
                          unit.values[2] * unit.values[2];
        out.energies[5] = unit.values[3] * unit.values[3] + unit.values[4] * unit.values[4] +
                          unit.values[5] * unit.values[5];
        ResidualBlock weighted = e_pose(field, *inputs.prior, params.w_r, params.w_p);
        // Split the six pose rows into the two pose terms.
        ResidualBlock rot;
        ResidualBlock trans;
        rot.values.assign(weighted.values.begin(), weighted.values.begin() + 3);
        trans.values.assign(weighted.values.begin() + 3, weighted.values.end());
        for (const auto& t : weighted.jacobian) {
            if (t.row() < 3) {
                rot.jacobian.push_back(t);
            } else {
                trans.jacobian.emplace_back(t.row() - 3, t.col(), t.value());
            }
        }
        blocks[4] = std::move(rot);
        blocks[5] = std::move(trans);
    }
    for (std::size_t t = 0; t < 4; ++t) {
        out.energies[t] = blocks[t].squared_norm();
    }

    std::size_t rows = 0;
    for (std::size_t t = 0; t < kTermCount; ++t) {
        out.ranges[t] = {rows, blocks[t].rows()};
        rows += blocks[t].rows();
    }
    out.values.resize(static_cast<Eigen::Index>(rows));
    for (std::size_t t = 0; t < kTermCount; ++t) {
        const auto offset = out.ranges[t].begin;
        for (std::size_t i = 0; i < blocks[t].rows(); ++i) {
            out.values(static_cast<Eigen::Index>(offset + i)) = scale[t] * blocks[t].values[i];
        }
    }
    if (with_jacobian) {
        out.jacobian = stack_jacobian(blocks, out.ranges, scale, rows, field.variable_count());
    }
    return out;
}

double mean_abs_point_to_plane(std::span<const int> visible, std::span<const ModelPoint> model,
                               std::span<const Skinning> skins, const WarpField& field, const DepthScan& scan) {
    double sum = 0.0;
    std::size_t count = 0;
    for (int i : visible) {
        const DataSample s = sample_data(model[i], skins[i], field, scan);
        if (s.valid) {
            sum += std::abs(s.normal.dot(s.warped - s.lifted));
            ++count;
        }
    }
    return count ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace defuse
