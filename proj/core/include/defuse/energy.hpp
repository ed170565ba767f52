#pragma once

#include "defuse/geometry.hpp"
#include "defuse/model.hpp"
#include "defuse/warpfield.hpp"

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <array>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace defuse {

struct EnergyParams {
    double w_rot = 1000.0;
    double w_reg = 10000.0;
    double w_data = 1.0;
    double w_corr = 10.0;
    double w_r = 1e6;
    double w_p = 1000.0;
    double eps_d = 15.0;   // visibility distance gate, mm
    double eps_n = 10.0;   // visibility normal-angle gate, degrees
    double alpha = 1.0;    // regularisation edge weight

    void validate() const;
};

enum class Term : int { rot = 0, reg, data, corr, pose_rot, pose_trans };
inline constexpr std::size_t kTermCount = 6;
std::string_view term_name(Term term);

// Variable layout: node j owns columns [12j, 12j+12): A(r,c) at 3r+c, t(r) at 9+r.
// The global pose follows the nodes: rotation increment (left, axis-angle) then translation.
inline std::size_t node_column(int node) { return 12 * static_cast<std::size_t>(node); }
inline std::size_t global_column(const WarpField& field) { return 12 * field.nodes.size(); }

using Triplet = Eigen::Triplet<double>;

/// Residuals of one term with a Jacobian in local row numbering.
struct ResidualBlock {
    std::vector<double> values;
    std::vector<Triplet> jacobian;
    std::size_t flagged = 0;  // data: points on invalid pixels; pose: Euler fallback used

    std::size_t rows() const { return values.size(); }
    double squared_norm() const;
};

ResidualBlock e_rot(const WarpField& field);
ResidualBlock e_reg(const WarpField& field, double alpha = 1.0);

/// Indices of model points whose warped position lands on a valid pixel within eps_d of the
/// lifted depth and whose warped normal is within eps_n of the scan normal.
std::vector<int> predict_visible(std::span<const ModelPoint> model, std::span<const Skinning> skins,
                                 const WarpField& field, const DepthScan& scan, const EnergyParams& params);

/// Point-to-plane residual n_scan . (v~ - lift(P(v~))) for each listed point.
ResidualBlock e_data(std::span<const int> visible, std::span<const ModelPoint> model,
                     std::span<const Skinning> skins, const WarpField& field, const DepthScan& scan);

ResidualBlock e_corr(std::span<const FeatureCorrespondence> correspondences, std::span<const Skinning> skins,
                     const WarpField& field);

/// Six rows: sqrt(w_r) * ZYX Euler angles (yaw, pitch, roll) of R * R_prior^T, then
/// sqrt(w_p) * (T - T_prior). Near gimbal lock the rotation rows fall back to the axis-angle
/// log and `flagged` is set.
ResidualBlock e_pose(const WarpField& field, const PosePrior& prior, double w_r, double w_p);

struct FrameInputs {
    std::span<const ModelPoint> model;
    std::span<const Skinning> skins;
    const DepthScan* scan = nullptr;
    std::span<const FeatureCorrespondence> correspondences;
    std::optional<PosePrior> prior;
};

struct TermRange {
    std::size_t begin = 0;
    std::size_t count = 0;
};

struct Residuals {
    Eigen::VectorXd values;                    // weighted, stacked in Term order
    Eigen::SparseMatrix<double, Eigen::RowMajor> jacobian;  // rows x (12m + 6)
    std::array<TermRange, kTermCount> ranges{};
    std::array<double, kTermCount> energies{}; // unweighted per-term energies
    std::array<double, kTermCount> weights{};
    std::vector<int> visible;
    std::size_t invalid_data_points = 0;
    bool pose_fallback = false;

    double total() const { return values.squaredNorm(); }
    double weighted(Term term) const {
        return weights[static_cast<int>(term)] * energies[static_cast<int>(term)];
    }
};

/// Full energy with analytic Jacobian. Visibility is predicted from the current field unless
/// `visible` is supplied.
Residuals assemble(const FrameInputs& inputs, const WarpField& field, const EnergyParams& params,
                   const std::vector<int>* visible = nullptr, bool with_jacobian = true);

/// Mean |point-to-plane| over the listed points that still land on valid pixels.
double mean_abs_point_to_plane(std::span<const int> visible, std::span<const ModelPoint> model,
                               std::span<const Skinning> skins, const WarpField& field, const DepthScan& scan);

}  // namespace defuse
