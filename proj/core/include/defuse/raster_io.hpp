#pragma once

#include "defuse/config.hpp"
#include "defuse/geometry.hpp"

#include <filesystem>
#include <stdexcept>

namespace defuse {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// 16-bit binary PGM, one grey level per millimetre. Zero is the absent marker.
void write_depth_pgm(const std::filesystem::path& path, const DepthMap& depth);
DepthMap read_depth_pgm(const std::filesystem::path& path);

// Raw little-endian float32 raster plus a `<name>.hdr` key=value sidecar
// (width, height, type=float32, endian=little, unit=mm).
void write_depth_raw(const std::filesystem::path& path, const DepthMap& depth);
DepthMap read_depth_raw(const std::filesystem::path& path);

/// Dispatches on extension: .pgm or .raw.
DepthMap read_depth(const std::filesystem::path& path);

// 8-bit binary PPM.
void write_color_ppm(const std::filesystem::path& path, const ColorMap& color);
ColorMap read_color_ppm(const std::filesystem::path& path);

CameraIntrinsics intrinsics_from_config(const KeyValueConfig& cfg);
KeyValueConfig intrinsics_to_config(const CameraIntrinsics& intrinsics);

}  // namespace defuse
