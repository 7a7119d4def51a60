#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pcpmae/pointcloud_io.hpp"

using namespace pcpmae;
using Catch::Approx;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "pcpmae_io_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("xyz write then read restores a small cloud exactly") {
    PointCloud c;
    c.points = {{0.5, 1.25, -3.0}, {0.0625, -0.125, 2.0}, {10.0, -7.5, 0.0}};
    auto path = temp_file("roundtrip.xyz");
    write_xyz(c, path.string());
    auto back = read_xyz(path.string());
    REQUIRE(back.size() == 3);
    CHECK(back.points == c.points);
}

TEST_CASE("xyz round trip holds to printed precision on arbitrary values") {
    Rng rng(17);
    PointCloud c;
    for (int i = 0; i < 20; ++i)
        c.points.push_back({rng.normal(), rng.normal() * 100, rng.normal() * 1e-3});
    auto path = temp_file("precision.xyz");
    write_xyz(c, path.string());
    auto back = read_xyz(path.string());
    REQUIRE(back.size() == c.size());
    for (std::size_t i = 0; i < c.size(); ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(back.points[i][j] == Approx(c.points[i][j]).epsilon(1e-8).margin(1e-12));
}

TEST_CASE("xyz reader skips comments and reports malformed lines by number") {
    auto path = temp_file("bad.xyz");
    {
        std::ofstream out(path);
        out << "1 2\n";
    }
    REQUIRE_THROWS_WITH(read_xyz(path.string()), Catch::Matchers::ContainsSubstring("line 1"));

    {
        std::ofstream out(path);
        out << "# comment\n1 2 3\n\n# more\n4 5 6 7\n";
    }
    REQUIRE_THROWS_WITH(read_xyz(path.string()), Catch::Matchers::ContainsSubstring("line 5"));

    {
        std::ofstream out(path);
        out << "# only a header\n0.25 0.5 0.75\n";
    }
    auto cloud = read_xyz(path.string());
    REQUIRE(cloud.size() == 1);
    CHECK(cloud.points[0] == Point3{0.25, 0.5, 0.75});

    CHECK_THROWS_AS(read_xyz("/nonexistent/nowhere.xyz"), std::runtime_error);
}

TEST_CASE("ply header for five uncolored points follows the fixed template") {
    PointCloud c;
    for (int i = 0; i < 5; ++i) c.points.push_back({double(i), 0.0, 0.0});
    auto path = temp_file("five.ply");
    write_ply(c, path.string());

    std::ifstream in(path);
    std::string l1, l2, l3, l4, l5, l6, l7;
    std::getline(in, l1);
    std::getline(in, l2);
    std::getline(in, l3);
    std::getline(in, l4);
    std::getline(in, l5);
    std::getline(in, l6);
    std::getline(in, l7);
    CHECK(l1 == "ply");
    CHECK(l2 == "format ascii 1.0");
    CHECK(l3 == "element vertex 5");
    CHECK(l4 == "property float x");
    CHECK(l5 == "property float y");
    CHECK(l6 == "property float z");
    CHECK(l7 == "end_header");

    auto info = check_ply(path.string());
    CHECK(info.vertex_count == 5);
    CHECK_FALSE(info.has_color);
}

TEST_CASE("colored ply declares rgb properties and validates") {
    PointCloud c;
    c.points = {{0, 0, 0}, {1, 1, 1}};
    std::vector<Color3> colors{{255, 0, 0}, {0, 0, 255}};
    auto path = temp_file("colored.ply");
    write_ply(c, path.string(), &colors);
    auto info = check_ply(path.string());
    CHECK(info.vertex_count == 2);
    CHECK(info.has_color);

    std::vector<Color3> wrong{{1, 2, 3}};
    CHECK_THROWS_AS(write_ply(c, path.string(), &wrong), std::invalid_argument);
}

TEST_CASE("ply check rejects a truncated body") {
    auto path = temp_file("truncated.ply");
    {
        std::ofstream out(path);
        out << "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
               "property float z\nend_header\n0 0 0\n";
    }
    REQUIRE_THROWS_WITH(check_ply(path.string()), Catch::Matchers::ContainsSubstring("3"));
}
