#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "capsdet/data.hpp"
#include "capsdet/errors.hpp"
#include "capsdet/rng.hpp"

using namespace capsdet;

namespace {

std::filesystem::path tmpdir() {
    auto d = std::filesystem::temp_directory_path() / "capsdet_data_test";
    std::filesystem::create_directories(d);
    return d;
}

void put_u32be(std::vector<uint8_t>& b, uint32_t v) {
    b.push_back(static_cast<uint8_t>(v >> 24));
    b.push_back(static_cast<uint8_t>(v >> 16));
    b.push_back(static_cast<uint8_t>(v >> 8));
    b.push_back(static_cast<uint8_t>(v));
}

std::string dump(const std::filesystem::path& p, const std::vector<uint8_t>& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    REQUIRE(out.good());
    return p.string();
}

}  // namespace

TEST_CASE("idx loader parses valid pairs and normalizes pixels") {
    auto dir = tmpdir();
    std::vector<uint8_t> img;
    put_u32be(img, 0x803);
    put_u32be(img, 2);
    put_u32be(img, 3);
    put_u32be(img, 2);
    for (int i = 0; i < 12; ++i) img.push_back(static_cast<uint8_t>(i == 0 ? 255 : i));
    std::vector<uint8_t> lab;
    put_u32be(lab, 0x801);
    put_u32be(lab, 2);
    lab.push_back(4);
    lab.push_back(9);

    std::string ip = dump(dir / "img.idx", img);
    std::string lp = dump(dir / "lab.idx", lab);
    Dataset ds = load_idx(ip, lp);
    CHECK(ds.images.shape() == Shape{2, 3, 2, 1});
    CHECK(ds.images[0] == 1.0);  // byte 255 maps to exactly 1
    CHECK(ds.images[1] == doctest::Approx(1.0 / 255.0).epsilon(1e-15));
    CHECK(ds.labels == std::vector<int>{4, 9});
    CHECK(ds.classes == 10);

    SUBCASE("label magic on an image file is rejected") {
        std::vector<uint8_t> wrong = img;
        wrong[3] = 0x01;
        std::string wp = dump(dir / "wrong.idx", wrong);
        CHECK_THROWS_AS(load_idx(wp, lp), FormatError);
        CHECK_THROWS_AS(load_idx(lp, ip), FormatError);  // swapped files
    }
    SUBCASE("truncated pixels are rejected") {
        std::vector<uint8_t> cut(img.begin(), img.end() - 3);
        std::string cp = dump(dir / "cut.idx", cut);
        CHECK_THROWS_AS(load_idx(cp, lp), FormatError);
    }
    SUBCASE("count mismatch between files is rejected") {
        std::vector<uint8_t> l3;
        put_u32be(l3, 0x801);
        put_u32be(l3, 3);
        l3.push_back(1);
        l3.push_back(2);
        l3.push_back(3);
        std::string lp3 = dump(dir / "lab3.idx", l3);
        CHECK_THROWS_AS(load_idx(ip, lp3), FormatError);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("cifar loader converts planar records to interleaved") {
    auto dir = tmpdir();
    std::vector<uint8_t> rec(3073);
    rec[0] = 7;
    for (int i = 0; i < 1024; ++i) {
        rec[1 + i] = 10;          // red plane
        rec[1 + 1024 + i] = 20;   // green plane
        rec[1 + 2048 + i] = 30;   // blue plane
    }
    std::string p = dump(dir / "batch.bin", rec);
    Dataset ds = load_cifar_binary({p});
    CHECK(ds.images.shape() == Shape{1, 32, 32, 3});
    CHECK(ds.labels == std::vector<int>{7});
    for (int px = 0; px < 1024; ++px) {
        CHECK(ds.images[px * 3 + 0] == doctest::Approx(10.0 / 255.0).epsilon(1e-15));
        CHECK(ds.images[px * 3 + 1] == doctest::Approx(20.0 / 255.0).epsilon(1e-15));
        CHECK(ds.images[px * 3 + 2] == doctest::Approx(30.0 / 255.0).epsilon(1e-15));
    }

    SUBCASE("two batch files concatenate") {
        std::vector<uint8_t> two = rec;
        two.insert(two.end(), rec.begin(), rec.end());
        std::string p2 = dump(dir / "batch2.bin", two);
        CHECK(load_cifar_binary({p, p2}).size() == 3);
    }
    SUBCASE("partial record is rejected") {
        std::vector<uint8_t> bad(rec.begin(), rec.end() - 1);
        std::string bp = dump(dir / "bad.bin", bad);
        CHECK_THROWS_AS(load_cifar_binary({bp}), FormatError);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("u8 container validates layout and round trips exactly") {
    auto dir = tmpdir();
    std::vector<uint8_t> c;
    for (char ch : std::string("CAPSDAT1")) c.push_back(static_cast<uint8_t>(ch));
    auto put_le = [&](uint32_t v) {
        c.push_back(static_cast<uint8_t>(v));
        c.push_back(static_cast<uint8_t>(v >> 8));
        c.push_back(static_cast<uint8_t>(v >> 16));
        c.push_back(static_cast<uint8_t>(v >> 24));
    };
    put_le(2);
    put_le(4);
    put_le(4);
    put_le(1);
    c.push_back(0);
    c.push_back(3);
    for (int i = 0; i < 32; ++i) c.push_back(static_cast<uint8_t>(i * 8));

    std::string p = dump(dir / "ds.capsdat", c);
    Dataset ds = load_u8_container(p);
    CHECK(ds.images.shape() == Shape{2, 4, 4, 1});
    CHECK(ds.labels == std::vector<int>{0, 3});
    CHECK(ds.images[1] == doctest::Approx(8.0 / 255.0).epsilon(1e-15));

    SUBCASE("missing pixel byte is a length error") {
        std::vector<uint8_t> cut(c.begin(), c.end() - 1);
        std::string cp = dump(dir / "cut.capsdat", cut);
        CHECK_THROWS_AS(load_u8_container(cp), FormatError);
    }
    SUBCASE("bad magic is rejected") {
        std::vector<uint8_t> bad = c;
        bad[0] = 'X';
        std::string bp = dump(dir / "bad.capsdat", bad);
        CHECK_THROWS_AS(load_u8_container(bp), FormatError);
    }
    SUBCASE("random dataset survives a save load round trip bit exactly") {
        Rng r = Rng::from_seed(5);
        Dataset src;
        src.images = Tensor({3, 5, 4, 3});
        for (int64_t i = 0; i < src.images.size(); ++i)
            src.images[i] = static_cast<double>(r.uniform_int(256)) / 255.0;
        src.labels = {1, 0, 2};
        std::string rp = (dir / "rt.capsdat").string();
        save_u8_container(src, rp);
        Dataset back = load_u8_container(rp);
        CHECK(back.images.shape() == src.images.shape());
        CHECK(back.labels == src.labels);
        for (int64_t i = 0; i < src.images.size(); ++i) CHECK(back.images[i] == src.images[i]);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("stroke digits are deterministic, balanced and class separable") {
    Dataset a = make_stroke_digits(20, 16, 10, 42);
    Dataset b = make_stroke_digits(20, 16, 10, 42);
    CHECK(a.images.shape() == Shape{20, 16, 16, 1});
    CHECK(a.classes == 10);
    for (int i = 0; i < 20; ++i) CHECK(a.labels[static_cast<size_t>(i)] == i % 10);
    for (int64_t i = 0; i < a.images.size(); ++i) {
        CHECK(a.images[i] == b.images[i]);
        CHECK(a.images[i] >= 0.0);
        CHECK(a.images[i] <= 1.0);
        // u8 grid quantization
        CHECK(a.images[i] * 255.0 == doctest::Approx(std::round(a.images[i] * 255.0)).epsilon(1e-9));
    }

    Dataset c = make_stroke_digits(20, 16, 10, 43);
    bool differs = false;
    for (int64_t i = 0; i < a.images.size() && !differs; ++i)
        differs = a.images[i] != c.images[i];
    CHECK(differs);

    // two different digits render visibly different glyphs
    int64_t block = 16 * 16;
    double gap = 0.0;
    for (int64_t i = 0; i < block; ++i) gap += std::abs(a.images[i] - a.images[block + i]);
    CHECK(gap / block > 0.02);

    CHECK_THROWS_AS(make_stroke_digits(0, 16, 10, 1), ContractError);
    CHECK_THROWS_AS(make_stroke_digits(4, 4, 10, 1), ContractError);
    CHECK_THROWS_AS(make_stroke_digits(4, 16, 1, 1), ContractError);
    CHECK_THROWS_AS(make_stroke_digits(4, 16, 11, 1), ContractError);
}

TEST_CASE("dataset slicing copies the requested rows") {
    Dataset ds = make_stroke_digits(10, 12, 5, 7);
    Dataset cut = slice_dataset(ds, 4, 3);
    CHECK(cut.images.shape() == Shape{3, 12, 12, 1});
    CHECK(cut.labels == std::vector<int>{4, 0, 1});
    int64_t block = 12 * 12;
    for (int64_t i = 0; i < 3 * block; ++i)
        CHECK(cut.images[i] == ds.images[4 * block + i]);
    CHECK(cut.classes == 5);

    CHECK_THROWS_AS(slice_dataset(ds, 8, 3), ContractError);
    CHECK_THROWS_AS(slice_dataset(ds, -1, 2), ContractError);
    CHECK_THROWS_AS(slice_dataset(ds, 0, 0), ContractError);
}
