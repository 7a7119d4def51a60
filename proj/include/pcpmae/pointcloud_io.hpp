#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include "pcpmae/geometry.hpp"

namespace pcpmae {

using Color3 = std::array<std::uint8_t, 3>;

// ASCII XYZ: one "x y z" triple per line; '#'-prefixed lines are comments.
inline PointCloud read_xyz(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_xyz: cannot open '" + path + "'");
    PointCloud cloud;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::size_t first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream ls(line);
        Point3 p;
        std::string extra;
        if (!(ls >> p[0] >> p[1] >> p[2]) || (ls >> extra))
            throw std::runtime_error("read_xyz: malformed line " + std::to_string(line_no) +
                                     " in '" + path + "': '" + line + "'");
        for (double c : p)
            if (!std::isfinite(c))
                throw std::runtime_error("read_xyz: non-finite coordinate at line " +
                                         std::to_string(line_no) + " in '" + path + "'");
        cloud.points.push_back(p);
    }
    if (cloud.points.empty())
        throw std::runtime_error("read_xyz: '" + path + "' contains no points");
    return cloud;
}

inline void write_xyz(const PointCloud& cloud, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_xyz: cannot open '" + path + "' for writing");
    char buf[96];
    for (const auto& p : cloud.points) {
        std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g\n", p[0], p[1], p[2]);
        out << buf;
    }
    if (!out) throw std::runtime_error("write_xyz: write failure on '" + path + "'");
}

// ASCII PLY 1.0 with float x/y/z vertices and optional uchar RGB.
inline void write_ply(const PointCloud& cloud, const std::string& path,
                      const std::vector<Color3>* colors = nullptr) {
    if (colors && colors->size() != cloud.size())
        throw std::invalid_argument("write_ply: " + std::to_string(colors->size()) +
                                    " colors for " + std::to_string(cloud.size()) + " points");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_ply: cannot open '" + path + "' for writing");
    out << "ply\nformat ascii 1.0\n";
    out << "element vertex " << cloud.size() << "\n";
    out << "property float x\nproperty float y\nproperty float z\n";
    if (colors) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    out << "end_header\n";
    char buf[96];
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.points[i];
        std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g", p[0], p[1], p[2]);
        out << buf;
        if (colors)
            out << ' ' << int((*colors)[i][0]) << ' ' << int((*colors)[i][1]) << ' '
                << int((*colors)[i][2]);
        out << '\n';
    }
    if (!out) throw std::runtime_error("write_ply: write failure on '" + path + "'");
}

struct PlyInfo {
    std::size_t vertex_count = 0;
    bool has_color = false;
};

// Validates the ASCII PLY layout produced by write_ply and that the body
// row count matches the header. Throws on any deviation.
inline PlyInfo check_ply(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("check_ply: cannot open '" + path + "'");
    std::string line;
    auto expect = [&](const std::string& want) {
        if (!std::getline(in, line) || line != want)
            throw std::runtime_error("check_ply: '" + path + "': expected '" + want + "', got '" +
                                     line + "'");
    };
    expect("ply");
    expect("format ascii 1.0");
    if (!std::getline(in, line) || line.rfind("element vertex ", 0) != 0)
        throw std::runtime_error("check_ply: '" + path + "': missing vertex element");
    PlyInfo info;
    info.vertex_count = std::stoull(line.substr(15));
    expect("property float x");
    expect("property float y");
    expect("property float z");
    if (!std::getline(in, line))
        throw std::runtime_error("check_ply: '" + path + "': truncated header");
    if (line == "property uchar red") {
        expect("property uchar green");
        expect("property uchar blue");
        info.has_color = true;
        expect("end_header");
    } else if (line != "end_header") {
        throw std::runtime_error("check_ply: '" + path + "': unexpected header line '" + line + "'");
    }
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        double x, y, z;
        if (!(ls >> x >> y >> z))
            throw std::runtime_error("check_ply: '" + path + "': malformed vertex row " +
                                     std::to_string(rows + 1));
        if (info.has_color) {
            int r, g, b;
            if (!(ls >> r >> g >> b))
                throw std::runtime_error("check_ply: '" + path + "': missing color on row " +
                                         std::to_string(rows + 1));
        }
        ++rows;
    }
    if (rows != info.vertex_count)
        throw std::runtime_error("check_ply: '" + path + "': header declares " +
                                 std::to_string(info.vertex_count) + " vertices, body has " +
                                 std::to_string(rows));
    return info;
}

}  // namespace pcpmae
