#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mind/image.hpp"
#include "mind/image_io.hpp"
#include "mind/rng.hpp"

using namespace mind;
namespace fs = std::filesystem;

namespace {
std::string tmp_path(const std::string& name) {
    static const std::string dir = [] {
        auto d = fs::temp_directory_path() / "mind_test_image";
        fs::create_directories(d);
        return d.string();
    }();
    return dir + "/" + name;
}

void write_raw(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary);
    f.write(bytes.data(), std::streamsize(bytes.size()));
}

Image random_image(int h, int w, Rng& rng, bool f32_grid = false) {
    Image img(h, w);
    for (auto& p : img.pix) {
        double v = rng.next_double();
        p = f32_grid ? double(float(v)) : v;
    }
    return img;
}
}  // namespace

TEST_CASE("pgm8 payload scaling", "[image]") {
    const std::string path = tmp_path("small.pgm");
    std::string bytes = "P5\n2 2\n255\n";
    bytes.push_back(char(0));
    bytes.push_back(char(255));
    bytes.push_back(char(128));
    bytes.push_back(char(64));
    write_raw(path, bytes);
    Image img = read_image(path);
    REQUIRE(img.height == 2);
    REQUIRE(img.width == 2);
    CHECK(img.at(0, 0) == 0.0);
    CHECK(img.at(0, 1) == 1.0);
    CHECK(img.at(1, 0) == 128.0 / 255.0);
    CHECK(img.at(1, 1) == 64.0 / 255.0);
}

TEST_CASE("pgm8 quantization rounds half up", "[image]") {
    Image img(1, 1, 0.5);
    const std::string path = tmp_path("half.pgm");
    write_image(img, path, ImageFormat::pgm8);
    std::ifstream f(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    // header "P5\n1 1\n255\n" then a single byte: round(127.5) = 128
    REQUIRE(bytes.size() == 12);
    CHECK(static_cast<unsigned char>(bytes.back()) == 128);
}

TEST_CASE("pgm16 round trip within half a quantum", "[image]") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        Image img = random_image(9, 13, rng);
        const std::string path = tmp_path("rt16.pgm");
        write_image(img, path, ImageFormat::pgm16);
        Image back = read_image(path);
        for (size_t i = 0; i < img.size(); ++i)
            REQUIRE(std::fabs(back.pix[i] - img.pix[i]) <= 0.5 / 65535.0 + 1e-12);
    }
}

TEST_CASE("pfm round trip is bit exact on float-valued images", "[image][property]") {
    Rng rng(8);
    const std::string path = tmp_path("rt.pfm");
    for (int trial = 0; trial < 10000; ++trial) {
        Image img = random_image(4, 5, rng, /*f32_grid=*/true);
        write_image(img, path, ImageFormat::pfm);
        Image back = read_image(path);
        REQUIRE(back.pix == img.pix);
    }
}

TEST_CASE("pgm16 round trip max error over random images", "[image][property]") {
    Rng rng(9);
    const std::string path = tmp_path("rt16b.pgm");
    double max_err = 0;
    for (int trial = 0; trial < 200; ++trial) {
        Image img = random_image(6, 6, rng);
        write_image(img, path, ImageFormat::pgm16);
        Image back = read_image(path);
        for (size_t i = 0; i < img.size(); ++i)
            max_err = std::max(max_err, std::fabs(back.pix[i] - img.pix[i]));
    }
    CHECK(max_err <= 1.0 / 65535.0);
}

TEST_CASE("pfm out-of-range values clamp and count", "[image]") {
    const std::string path = tmp_path("oor.pfm");
    {
        std::string bytes = "Pf\n2 1\n-1.0\n";
        float vals[2] = {1.5f, 0.25f};
        bytes.append(reinterpret_cast<const char*>(vals), 8);
        write_raw(path, bytes);
    }
    int oor = -1;
    Image img = read_image(path, &oor);
    CHECK(img.at(0, 0) == 1.0);
    CHECK(img.at(0, 1) == 0.25);
    CHECK(oor == 1);
}

TEST_CASE("all-zero image round trips in every format", "[image]") {
    Image zero(5, 4, 0.0);
    for (auto fmt : {ImageFormat::pgm8, ImageFormat::pgm16, ImageFormat::pfm}) {
        const std::string path = tmp_path("zero.img");
        write_image(zero, path, fmt);
        Image back = read_image(path);
        for (double p : back.pix) REQUIRE(p == 0.0);
    }
}

TEST_CASE("malformed headers raise format errors", "[image]") {
    const std::string path = tmp_path("bad.pgm");
    write_raw(path, "P5\n4 x\n255\n0000");
    CHECK_THROWS_AS(read_image(path), FormatError);
    write_raw(path, "P7\n2 2\n255\n0000");
    CHECK_THROWS_AS(read_image(path), FormatError);
    write_raw(path, "P5\n2 2\n70000\n0000");
    CHECK_THROWS_AS(read_image(path), FormatError);
    write_raw(path, "PF\n2 2\n-1.0\n");
    CHECK_THROWS_AS(read_image(path), FormatError);
}

TEST_CASE("truncated payload raises size mismatch", "[image]") {
    const std::string path = tmp_path("trunc.pgm");
    write_raw(path, "P5\n4 4\n255\nabc");
    CHECK_THROWS_WITH(read_image(path), Catch::Matchers::ContainsSubstring("truncated"));
    write_raw(path, std::string("Pf\n2 2\n-1.0\n") + "abcd");
    CHECK_THROWS_AS(read_image(path), FormatError);
}

TEST_CASE("crop_patches single valid offset", "[image]") {
    Rng rng(10);
    Image img = random_image(64, 64, rng);
    PatchSet set = crop_patches(img, 64, 3, 123);
    REQUIRE(set.patches.size() == 3);
    for (const auto& p : set.patches) REQUIRE(p.pix == img.pix);
    for (const auto& prov : set.provenance) {
        CHECK(prov.row == 0);
        CHECK(prov.col == 0);
    }
}

TEST_CASE("crop_patches determinism", "[image]") {
    Rng rng(11);
    Image img = random_image(48, 40, rng);
    PatchSet a = crop_patches(img, 16, 8, 99, "img");
    PatchSet b = crop_patches(img, 16, 8, 99, "img");
    REQUIRE(a.patches.size() == b.patches.size());
    for (size_t i = 0; i < a.patches.size(); ++i) {
        CHECK(a.patches[i].pix == b.patches[i].pix);
        CHECK(a.provenance[i].row == b.provenance[i].row);
        CHECK(a.provenance[i].col == b.provenance[i].col);
    }
}

TEST_CASE("crop_patches offsets stay in bounds", "[image]") {
    Rng rng(12);
    Image img = random_image(300, 300, rng);
    PatchSet set = crop_patches(img, 256, 40, 5);
    for (const auto& prov : set.provenance) {
        CHECK(prov.row >= 0);
        CHECK(prov.row <= 44);
        CHECK(prov.col >= 0);
        CHECK(prov.col <= 44);
    }
}

TEST_CASE("crop_patches rejects oversize patches", "[image]") {
    Image img(10, 10, 0.5);
    CHECK_THROWS_AS(crop_patches(img, 11, 1, 0), DimensionError);
}
