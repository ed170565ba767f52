#pragma once

#include "defuse/model.hpp"

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace defuse {

/// ASCII PLY with x y z nx ny nz red green blue weight timestamp stable per vertex.
std::string model_to_ply(const PointModel& model);
PointModel model_from_ply(const std::string& text);

void write_model_ply(const std::filesystem::path& path, const PointModel& model);
PointModel read_model_ply(const std::filesystem::path& path);

struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;
};

/// Loads vertex positions and triangle (or fan-triangulated polygon) faces from an ASCII PLY.
TriangleMesh read_mesh_ply(const std::filesystem::path& path);
TriangleMesh mesh_from_ply(const std::string& text);

}  // namespace defuse
