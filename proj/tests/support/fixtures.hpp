#pragma once

#include "oracle.hpp"

#include "defuse/energy.hpp"
#include "defuse/fusion.hpp"
#include "defuse/synth.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fixtures {

std::vector<defuse::Skinning> to_library(const std::vector<oracle::Skin>& skins);

/// Random planar instance: 10 points, 4 nodes (k = 3, fully connected), 2 correspondences and a
/// pose prior, with every point visible.
oracle::EnergyInstance random_energy_instance(std::uint64_t seed);

struct JacobianCheck {
    std::array<double, defuse::kTermCount> max_rel_error{};  // analytic vs central differences
    std::array<double, defuse::kTermCount> max_value_error{};  // library vs oracle residuals
    std::array<std::size_t, defuse::kTermCount> rows{};
};

/// Compares the library's assembled residuals and Jacobian with the oracle's residuals and their
/// central differences (step h). Relative error per entry is |a - f| / max(1, |a|, |f|).
JacobianCheck check_jacobian(const oracle::EnergyInstance& inst, double h = 1e-5);

struct RegistrationCase {
    std::vector<defuse::ModelPoint> model;
    std::vector<oracle::Skin> skins;
    defuse::WarpField field;
    defuse::DepthScan scan;
    defuse::FusionParams params;
};

/// Scan of at most 32x32 pixels with holes, and a model scattered around it so that gates,
/// collisions and out-of-frame points all occur.
RegistrationCase random_registration_case(std::uint64_t seed);

/// Small camera for fast sequence tests.
defuse::CameraIntrinsics small_camera(int width = 80, int height = 60);

/// Temporary directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag);
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& path);

}  // namespace fixtures
