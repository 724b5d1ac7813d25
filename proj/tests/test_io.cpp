#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "lamotion/io.hpp"
#include "test_util.hpp"

using namespace lamotion;
using namespace testutil;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        std::random_device rd;
        path = fs::temp_directory_path() / ("lamotion_io_" + std::to_string(rd()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

PhantomCase small_case(uint64_t seed = 4) {
    PhantomConfig c;
    c.dims = {8, 8, 8};
    c.frames = 3;
    c.seed = seed;
    c.wall_thickness_vox = 0.5;
    c.slice_steps = 2;
    return generate_case(c);
}

} // namespace

TEST_CASE("f32 payload survives a read/write round trip byte for byte") {
    TempDir tmp;
    std::mt19937_64 rng(1);
    Volume v = random_volume(cube_grid(5, 1.5), rng, -3, 3);
    io::write_volume(tmp.path / "a.raw", v, io::DType::F32);
    const Volume back = io::read_volume(tmp.path / "a.raw");
    io::write_volume(tmp.path / "b.raw", back, io::DType::F32);
    CHECK(io::read_file(tmp.path / "a.raw") == io::read_file(tmp.path / "b.raw"));
    CHECK(io::read_file(tmp.path / "a.raw").size() == 125 * 4);
    for (size_t n = 0; n < v.values.size(); ++n) CHECK(back.values[n] == double(float(v.values[n])));
}

TEST_CASE("f64 volumes, masks and fields round trip exactly") {
    TempDir tmp;
    std::mt19937_64 rng(2);
    const Grid g({4, 5, 6}, {1.0, 1.25, 2.0}, {0.5, -1.0, 3.0});
    Volume v = random_volume(g, rng);
    v.frame_index = 7;
    io::write_volume(tmp.path / "v.raw", v);
    const Volume vb = io::read_volume(tmp.path / "v.raw");
    CHECK(vb.values == v.values);
    CHECK(vb.grid == g);
    CHECK(vb.frame_index == 7);

    Mask m = random_mask(g, rng, 0.4);
    io::write_mask(tmp.path / "m.raw", m);
    CHECK(io::read_mask(tmp.path / "m.raw").labels == m.labels);

    DisplacementField f = random_field(g, rng, 2.0);
    f.from_frame = 0;
    f.to_frame = 5;
    io::write_dvf(tmp.path / "f.raw", f);
    const auto fb = io::read_dvf(tmp.path / "f.raw");
    CHECK(fb.to_frame == 5);
    for (size_t n = 0; n < f.vectors.size(); ++n) CHECK(fb.vectors[n] == f.vectors[n]);
}

TEST_CASE("field payload is channel-major with X fastest") {
    TempDir tmp;
    const Grid g({3, 2, 2}, {1, 1, 1});
    DisplacementField f(g, 0, 1);
    f.at(2, 1, 0) = {10.0, 20.0, 30.0};
    io::write_dvf(tmp.path / "f.raw", f);
    const std::string bytes = io::read_file(tmp.path / "f.raw");
    REQUIRE(bytes.size() == 12 * 3 * 8);
    const size_t lin = 2 + 3 * 1;
    for (int c = 0; c < 3; ++c) {
        double v;
        std::memcpy(&v, bytes.data() + (size_t(c) * 12 + lin) * 8, 8);
        CHECK(v == 10.0 * (c + 1));
    }
}

TEST_CASE("malformed arrays are rejected with a reason") {
    TempDir tmp;
    std::mt19937_64 rng(3);
    const auto p = tmp.path / "v.raw";
    io::write_volume(p, random_volume(cube_grid(4), rng));

    SUBCASE("truncated payload") {
        const std::string bytes = io::read_file(p);
        io::write_file_atomic(p, bytes.substr(0, bytes.size() - 8));
        CHECK_THROWS_WITH(io::read_volume(p), doctest::Contains("expected 512 bytes, found 504"));
    }
    SUBCASE("unknown dtype") {
        std::string h = io::read_file(io::header_path(p));
        h.replace(h.find("f64"), 3, "f16");
        io::write_file_atomic(io::header_path(p), h);
        CHECK_THROWS_WITH(io::read_volume(p), doctest::Contains("unknown dtype 'f16'"));
    }
    SUBCASE("big endian") {
        std::string h = io::read_file(io::header_path(p));
        h.replace(h.find("little"), 6, "big");
        io::write_file_atomic(io::header_path(p), h);
        CHECK_THROWS_WITH(io::read_volume(p), doctest::Contains("endianness"));
    }
    SUBCASE("missing header") {
        fs::remove(io::header_path(p));
        CHECK_THROWS_WITH(io::read_volume(p), doctest::Contains("cannot read"));
    }
    SUBCASE("wrong kind") { CHECK_THROWS_WITH(io::read_dvf(p), doctest::Contains("expected a dvf")); }
}

TEST_CASE("case directories round trip and are deterministic") {
    TempDir tmp;
    const PhantomCase c = small_case();
    io::write_case(tmp.path / "a", c, "s01");
    io::write_case(tmp.path / "b", small_case());
    for (const auto &e : fs::recursive_directory_iterator(tmp.path / "a")) {
        if (!e.is_regular_file() || e.path().filename() == "manifest.json") continue;
        const auto rel = fs::relative(e.path(), tmp.path / "a");
        CHECK(io::read_file(e.path()) == io::read_file(tmp.path / "b" / rel));
    }

    const io::CaseData d = io::load_case(tmp.path / "a");
    CHECK(d.manifest.subject_id == "s01");
    CHECK(d.manifest.frames == 3);
    REQUIRE(d.manifest.phantom.has_value());
    CHECK(d.manifest.phantom->seed == 4);
    REQUIRE(d.frames.size() == 3);
    REQUIRE(d.gt_dvfs.size() == 2);
    for (int t = 0; t < 3; ++t) {
        CHECK(d.frames[size_t(t)].values == c.frames[size_t(t)].values);
        CHECK(d.masks[size_t(t)].labels == c.masks[size_t(t)].labels);
        CHECK(d.sequences[size_t(t)].slices == c.sequences[size_t(t)].slices);
        CHECK(d.sequences[size_t(t)].end_frame == t);
    }
    CHECK(d.gt_dvfs[1].vectors == c.gt_dvfs[1].vectors);

    SUBCASE("a missing frame file is reported") {
        fs::remove(tmp.path / "a" / d.manifest.frame_files[1]);
        CHECK_THROWS_WITH(io::load_case(tmp.path / "a"), doctest::Contains("frame_001"));
    }
    SUBCASE("a manifest whose counts disagree is rejected") {
        std::string m = io::read_file(tmp.path / "a" / "manifest.json");
        m.replace(m.find("\"frames\": 3"), 11, "\"frames\": 4");
        io::write_file_atomic(tmp.path / "a" / "manifest.json", m);
        CHECK_THROWS_WITH(io::load_case(tmp.path / "a"), doctest::Contains("expected 4"));
    }
}

TEST_CASE("field directories") {
    TempDir tmp;
    const PhantomCase c = small_case();
    io::write_dvf_dir(tmp.path, c.gt_dvfs);
    const auto back = io::read_dvf_dir(tmp.path, 3, 0);
    REQUIRE(back.size() == 2);
    CHECK(back[0].to_frame == 1);
    CHECK(back[1].vectors == c.gt_dvfs[1].vectors);
    fs::remove(io::dvf_file(tmp.path, 2));
    CHECK_THROWS_WITH(io::read_dvf_dir(tmp.path, 3, 0), doctest::Contains("frame 2"));
}

TEST_CASE("checkpoints round trip") {
    TempDir tmp;
    const PhantomCase c = small_case();
    MaeConfig mc;
    mc.width = mc.height = 8;
    mc.n_steps = 2;
    mc.patch = 4;
    mc.embed = 8;
    MaeTrainConfig mt;
    mt.epochs = 2;
    const MaeModel mae = pretrain_mae(c.sequences, mc, mt).model;

    CvaeConfig a;
    a.dims = c.config.dims;
    a.spacing = {1.8, 1.8, 1.8};
    a.n_steps = 2;
    a.latent_dim = 4;
    a.channels = 2;
    a.features = 4;
    a.head_hidden = 4;
    a.cycle_frames = 3;
    CvaeModel m = init_cvae(a, EncoderMode::MotionMAE, &mae);
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0.0, 0.1);
    for (auto &[name, t] : m.params)
        for (auto &x : t.data) x += n(rng);
    m.trained = true;

    io::save_cvae(tmp.path / "ck", m);
    const CvaeModel back = io::load_cvae(tmp.path / "ck");
    CHECK(back.mode == EncoderMode::MotionMAE);
    CHECK(back.trained);
    CHECK(back.params == m.params);
    REQUIRE(back.mae.has_value());
    CHECK(back.mae->params == mae.params);
    const auto p1 = predict_ahead(m, c.sequences[0], c.frames[0], 1);
    const auto p2 = predict_ahead(back, c.sequences[0], c.frames[0], 1);
    CHECK(p1[0].vectors == p2[0].vectors);

    SUBCASE("corrupted parameters are rejected") {
        const std::string bytes = io::read_file(tmp.path / "ck" / "params.bin");
        io::write_file_atomic(tmp.path / "ck" / "params.bin", bytes.substr(0, bytes.size() - 8));
        CHECK_THROWS_WITH(io::load_cvae(tmp.path / "ck"), doctest::Contains("truncated"));
    }
}
