#pragma once

#include "defuse/energy.hpp"
#include "defuse/warpfield.hpp"

#include <Eigen/Core>

#include <array>
#include <string_view>
#include <vector>

namespace defuse {

struct SolverConfig {
    int max_iterations = 10;
    double initial_damping = 1e-3;
    double damping_up = 10.0;
    double damping_down = 0.5;
    double convergence_tol = 1e-4;  // relative energy decrease
    double step_tol = 1e-8;         // increment norm
    double max_damping = 1e16;

    void validate() const;
};

enum class Termination { converged, max_iterations, stalled };
std::string_view termination_name(Termination t);

struct IterationRecord {
    int iteration = 0;
    double energy = 0.0;      // energy after the iteration (accepted state)
    double damping = 0.0;     // damping used for the accepted step
    int rejected_steps = 0;
    std::array<double, kTermCount> terms{};  // weighted term energies
};

struct SolveReport {
    int iterations = 0;
    double initial_energy = 0.0;
    double final_energy = 0.0;
    std::vector<double> trace;  // initial energy followed by every accepted energy
    std::vector<IterationRecord> history;
    Termination termination = Termination::max_iterations;
    std::array<double, kTermCount> final_terms{};
    std::size_t visible_points = 0;
    double last_step_norm = 0.0;
    bool pose_fallback = false;
};

struct SolveResult {
    WarpField field;
    SolveReport report;
};

/// Applies a (12m + 6) increment: node affines/translations additively, global rotation by
/// left multiplication with Exp(delta_rot) followed by re-orthonormalisation.
void apply_increment(WarpField& field, const Eigen::VectorXd& delta);

/// Levenberg-Marquardt on the assembled energy. Visibility is re-predicted at every evaluated
/// state, so the accepted energy trace is monotone for the function actually minimised.
/// Throws std::invalid_argument when the problem has no residuals.
SolveResult solve(const WarpField& field, const FrameInputs& inputs, const EnergyParams& params,
                  const SolverConfig& config);

}  // namespace defuse
