#include "defuse/raster_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace defuse {
namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    return in;
}

// Reads the next whitespace-separated header token, skipping '#' comments.
std::string next_token(std::istream& in) {
    std::string token;
    while (in) {
        const int c = in.peek();
        if (c == '#') {
            std::string skip;
            std::getline(in, skip);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    in >> token;
    return token;
}

struct NetpbmHeader {
    int width = 0;
    int height = 0;
    int maxval = 0;
};

NetpbmHeader read_netpbm_header(std::istream& in, const std::string& magic,
                                const std::filesystem::path& path) {
    if (next_token(in) != magic) {
        throw IoError(path.string() + ": expected " + magic + " header");
    }
    NetpbmHeader h;
    try {
        h.width = std::stoi(next_token(in));
        h.height = std::stoi(next_token(in));
        h.maxval = std::stoi(next_token(in));
    } catch (const std::exception&) {
        throw IoError(path.string() + ": malformed header");
    }
    if (h.width <= 0 || h.height <= 0 || h.maxval <= 0 || h.maxval > 65535) {
        throw IoError(path.string() + ": bad header values");
    }
    in.get();  // single whitespace before the payload
    return h;
}

std::filesystem::path sidecar(const std::filesystem::path& raw) {
    auto hdr = raw;
    hdr.replace_extension(".hdr");
    return hdr;
}

}  // namespace

void write_depth_pgm(const std::filesystem::path& path, const DepthMap& depth) {
    auto out = open_out(path);
    out << "P5\n" << depth.width() << ' ' << depth.height() << "\n65535\n";
    std::vector<unsigned char> payload(depth.size() * 2);
    for (std::size_t i = 0; i < depth.size(); ++i) {
        const double d = valid_depth(depth[i]) ? std::clamp(std::round(depth[i]), 0.0, 65535.0) : 0.0;
        const auto value = static_cast<std::uint16_t>(d);
        payload[2 * i] = static_cast<unsigned char>(value >> 8);
        payload[2 * i + 1] = static_cast<unsigned char>(value & 0xff);
    }
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
}

DepthMap read_depth_pgm(const std::filesystem::path& path) {
    auto in = open_in(path);
    const auto h = read_netpbm_header(in, "P5", path);
    const std::size_t bytes_per = h.maxval > 255 ? 2 : 1;
    std::vector<unsigned char> payload(static_cast<std::size_t>(h.width) * h.height * bytes_per);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (in.gcount() != static_cast<std::streamsize>(payload.size())) {
        throw IoError(path.string() + ": truncated payload");
    }
    DepthMap depth(h.width, h.height, 0.0);
    for (std::size_t i = 0; i < depth.size(); ++i) {
        depth[i] = bytes_per == 2 ? static_cast<double>((payload[2 * i] << 8) | payload[2 * i + 1])
                                  : static_cast<double>(payload[i]);
    }
    return depth;
}

void write_depth_raw(const std::filesystem::path& path, const DepthMap& depth) {
    KeyValueConfig hdr;
    hdr.set("width", std::to_string(depth.width()));
    hdr.set("height", std::to_string(depth.height()));
    hdr.set("type", "float32");
    hdr.set("endian", "little");
    hdr.set("unit", "mm");
    hdr.save(sidecar(path));

    auto out = open_out(path);
    std::vector<unsigned char> payload(depth.size() * 4);
    for (std::size_t i = 0; i < depth.size(); ++i) {
        const float f = valid_depth(depth[i]) ? static_cast<float>(depth[i]) : 0.0f;
        auto bits = std::bit_cast<std::uint32_t>(f);
        for (int b = 0; b < 4; ++b) {
            payload[4 * i + b] = static_cast<unsigned char>(bits & 0xff);
            bits >>= 8;
        }
    }
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
}

DepthMap read_depth_raw(const std::filesystem::path& path) {
    KeyValueConfig hdr;
    try {
        hdr = KeyValueConfig::load(sidecar(path));
    } catch (const ConfigError& e) {
        throw IoError(e.what());
    }
    if (hdr.get_string("type", "float32") != "float32" || hdr.get_string("endian", "little") != "little") {
        throw IoError(path.string() + ": only little-endian float32 rasters are supported");
    }
    const int width = hdr.require_int("width");
    const int height = hdr.require_int("height");
    if (width <= 0 || height <= 0) {
        throw IoError(path.string() + ": bad raster size");
    }
    auto in = open_in(path);
    std::vector<unsigned char> payload(static_cast<std::size_t>(width) * height * 4);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (in.gcount() != static_cast<std::streamsize>(payload.size())) {
        throw IoError(path.string() + ": truncated payload");
    }
    DepthMap depth(width, height, 0.0);
    for (std::size_t i = 0; i < depth.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 3; b >= 0; --b) {
            bits = (bits << 8) | payload[4 * i + b];
        }
        const float f = std::bit_cast<float>(bits);
        depth[i] = std::isfinite(f) && f > 0.0f ? static_cast<double>(f) : 0.0;
    }
    return depth;
}

DepthMap read_depth(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".pgm") {
        return read_depth_pgm(path);
    }
    if (ext == ".raw") {
        return read_depth_raw(path);
    }
    throw IoError(path.string() + ": unsupported depth format");
}

void write_color_ppm(const std::filesystem::path& path, const ColorMap& color) {
    auto out = open_out(path);
    out << "P6\n" << color.width() << ' ' << color.height() << "\n255\n";
    std::vector<unsigned char> payload(color.size() * 3);
    for (std::size_t i = 0; i < color.size(); ++i) {
        for (int c = 0; c < 3; ++c) {
            payload[3 * i + c] = static_cast<unsigned char>(std::clamp(std::round(color[i][c]), 0.0, 255.0));
        }
    }
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
}

ColorMap read_color_ppm(const std::filesystem::path& path) {
    auto in = open_in(path);
    const auto h = read_netpbm_header(in, "P6", path);
    if (h.maxval > 255) {
        throw IoError(path.string() + ": 16-bit PPM not supported");
    }
    std::vector<unsigned char> payload(static_cast<std::size_t>(h.width) * h.height * 3);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (in.gcount() != static_cast<std::streamsize>(payload.size())) {
        throw IoError(path.string() + ": truncated payload");
    }
    ColorMap color(h.width, h.height, Color::Zero());
    for (std::size_t i = 0; i < color.size(); ++i) {
        color[i] = Color(payload[3 * i], payload[3 * i + 1], payload[3 * i + 2]);
    }
    return color;
}

CameraIntrinsics intrinsics_from_config(const KeyValueConfig& cfg) {
    CameraIntrinsics k;
    k.fx = cfg.require_double("fx");
    k.fy = cfg.require_double("fy");
    k.cx = cfg.require_double("cx");
    k.cy = cfg.require_double("cy");
    k.width = cfg.require_int("width");
    k.height = cfg.require_int("height");
    k.validate();
    return k;
}

KeyValueConfig intrinsics_to_config(const CameraIntrinsics& k) {
    KeyValueConfig cfg;
    auto fmt = [](double v) {
        std::ostringstream s;
        s.precision(17);
        s << v;
        return s.str();
    };
    cfg.set("fx", fmt(k.fx));
    cfg.set("fy", fmt(k.fy));
    cfg.set("cx", fmt(k.cx));
    cfg.set("cy", fmt(k.cy));
    cfg.set("width", std::to_string(k.width));
    cfg.set("height", std::to_string(k.height));
    return cfg;
}

}  // namespace defuse
