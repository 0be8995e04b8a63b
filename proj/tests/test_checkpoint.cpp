#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>

#include <bit>
#include <filesystem>
#include <fstream>

#include "losslab/checkpoint.hpp"
#include "losslab/direction.hpp"
#include "losslab/model.hpp"
#include "losslab/util.hpp"

using namespace losslab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("ckpt_test_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const char* name) const { return (path / name).string(); }
};

std::string slurp(const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("save then load returns a bit-identical parameter vector") {
    TempDir tmp;
    Model model(ModelSpec::mlp_d(3, 16, 2, 2));
    ParamVector theta = model.init(7);
    // salt a few entries with values that stress the float round-trip
    theta.values[0] = 0.1;
    theta.values[1] = -1.0 / 3.0;
    theta.values[2] = 1e-300;
    theta.values[3] = -0.0;

    save_param_vector(tmp.file("a.ckpt"), theta, 42, {{"note", "unit"}});
    ParamVector back = load_param_vector(tmp.file("a.ckpt"), model);

    REQUIRE(back.values.size() == theta.values.size());
    for (size_t i = 0; i < theta.values.size(); ++i) {
        // bit identity, not closeness: -0.0 must survive as -0.0
        CHECK(std::bit_cast<uint64_t>(back.values[i]) == std::bit_cast<uint64_t>(theta.values[i]));
    }
    CHECK(back.meta->spec_hash == theta.meta->spec_hash);
}

TEST_CASE("save is byte-deterministic and epoch plus metadata round-trip") {
    TempDir tmp;
    Model model(ModelSpec::mlp_d(2, 8, 2, 2));
    ParamVector theta = model.init(1);

    save_param_vector(tmp.file("a.ckpt"), theta, 5, {{"phase", "train"}, {"lr", "0.1"}});
    save_param_vector(tmp.file("b.ckpt"), theta, 5, {{"lr", "0.1"}, {"phase", "train"}});
    CHECK(slurp(tmp.file("a.ckpt")) == slurp(tmp.file("b.ckpt")));

    CheckpointData c = load_checkpoint(tmp.file("a.ckpt"));
    CHECK(c.epoch == 5);
    CHECK(c.metadata.at("phase") == "train");
    CHECK(c.metadata.at("lr") == "0.1");
    CHECK(c.metadata.at("kind") == "theta");
    CHECK(c.spec_hash == model.meta().spec_hash);
}

TEST_CASE("loading rejects wrong files with distinct errors") {
    TempDir tmp;
    Model model(ModelSpec::mlp_d(2, 8, 2, 2));
    ParamVector theta = model.init(1);
    save_param_vector(tmp.file("good.ckpt"), theta, 0);

    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_checkpoint(tmp.file("absent.ckpt")), CheckpointError);
    }
    SUBCASE("bad magic") {
        std::ofstream f(tmp.file("junk.ckpt"), std::ios::binary);
        f << "definitely not a checkpoint";
        f.close();
        try {
            load_checkpoint(tmp.file("junk.ckpt"));
            FAIL("expected CheckpointError");
        } catch (const CheckpointError& e) {
            CHECK(std::string(e.what()).find("magic") != std::string::npos);
        }
    }
    SUBCASE("truncated payload") {
        std::string bytes = slurp(tmp.file("good.ckpt"));
        std::ofstream f(tmp.file("cut.ckpt"), std::ios::binary);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
        f.close();
        try {
            load_checkpoint(tmp.file("cut.ckpt"));
            FAIL("expected CheckpointError");
        } catch (const CheckpointError& e) {
            CHECK(std::string(e.what()).find("truncated") != std::string::npos);
        }
    }
    SUBCASE("trailing garbage") {
        std::string bytes = slurp(tmp.file("good.ckpt"));
        std::ofstream f(tmp.file("long.ckpt"), std::ios::binary);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        f << "extra";
        f.close();
        CHECK_THROWS_AS(load_checkpoint(tmp.file("long.ckpt")), CheckpointError);
    }
    SUBCASE("model mismatch") {
        Model other(ModelSpec::mlp_d(2, 9, 2, 2));
        try {
            load_param_vector(tmp.file("good.ckpt"), other);
            FAIL("expected CheckpointError");
        } catch (const CheckpointError& e) {
            CHECK(std::string(e.what()).find("different model spec") != std::string::npos);
        }
    }
}

TEST_CASE("directions persist with their provenance metadata") {
    TempDir tmp;
    Model model(ModelSpec::mlp_d(2, 8, 2, 2));
    ParamVector theta = model.init(3);
    Direction d = filter_normalize(sample_gaussian(theta, 99, IgnorePolicy::biasbn), theta);

    save_direction(tmp.file("d.ckpt"), d);
    Direction back = load_direction(tmp.file("d.ckpt"), model);

    CHECK(back.seed == 99);
    CHECK(back.scheme == NormScheme::filter);
    CHECK(back.ignore == IgnorePolicy::biasbn);
    REQUIRE(back.values.size() == d.values.size());
    for (size_t i = 0; i < d.values.size(); ++i)
        CHECK(std::bit_cast<uint64_t>(back.values[i]) == std::bit_cast<uint64_t>(d.values[i]));

    CheckpointData raw = load_checkpoint(tmp.file("d.ckpt"));
    CHECK(raw.metadata.at("kind") == "direction");
    CHECK(raw.metadata.at("generator") == Rng64::kIdentity);

    // a theta checkpoint is not a direction
    save_param_vector(tmp.file("t.ckpt"), theta, 0);
    CHECK_THROWS_AS(load_direction(tmp.file("t.ckpt"), model), CheckpointError);
}
