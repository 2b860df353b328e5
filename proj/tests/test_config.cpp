#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "handsoff/config.hpp"
#include "handsoff/errors.hpp"

using namespace handsoff;

TEST_CASE("parse sections, comments and values") {
    const auto cfg = parse_config(R"(
# comment
[experiment]
seed = 7
task = keypoints   # trailing comment
pool_size = 16

[scene]
resolution = 32
classes = 4

[labelgen]
members = 3
channel_caps = 0,0,-1,2

[longtail]
proportions = 1/16, 0.25, 0.5
)");
    CHECK(cfg.seed == 7);
    CHECK(cfg.task == TaskKind::keypoints);
    CHECK(cfg.pool_size == 16);
    CHECK(cfg.scene.resolution == 32);
    CHECK(cfg.scene.classes == 4);
    CHECK(cfg.labelgen.members == 3);
    REQUIRE(cfg.channel_caps);
    CHECK(*cfg.channel_caps == hypercolumn::ChannelCaps{0, 0, -1, 2});
    REQUIRE(cfg.longtail.proportions.size() == 3);
    CHECK(cfg.longtail.proportions[0] == 1.0 / 16.0);
    CHECK(cfg.dataset_size == 1000);
    CHECK(cfg.inversion.iterations == 300);
}

TEST_CASE("bad configs are config errors") {
    CHECK_THROWS_AS(parse_config("[experiment]\ntask = segmentaton\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[experiment]\nflavour = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[nowhere]\nseed = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[experiment]\nseed = three\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[experiment]\nfilter_fraction = 1.0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("seed = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[sweep]\naxis = ensemble_size\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[scene]\nresolution = 48\n"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/handsoff.ini"), Error);
}

TEST_CASE("dotted keys set and get") {
    ExperimentConfig cfg;
    set_config_value(cfg, "labelgen.members", "4");
    CHECK(cfg.labelgen.members == 4);
    CHECK(get_config_value(cfg, "labelgen.members") == "4");
    set_config_value(cfg, "inversion.c_reg", "0.25");
    CHECK(cfg.inversion.c_reg == 0.25);
    CHECK_THROWS_AS(set_config_value(cfg, "labelgen.nope", "1"), ConfigError);
}

TEST_CASE("sweep schema") {
    const auto cfg = parse_config("[sweep]\naxis = ensemble_size\nvalues = 1; 3; 10\n");
    CHECK(cfg.sweep.axis == "ensemble_size");
    CHECK(cfg.sweep.values == std::vector<std::string>{"1", "3", "10"});
}

TEST_CASE("config hash tracks content and honours exclusions") {
    ExperimentConfig a, b;
    CHECK(config_hash(a) == config_hash(b));
    CHECK(config_hash(a).size() == 16);
    b.labelgen.members = 3;
    CHECK(config_hash(a) != config_hash(b));
    CHECK(config_hash(a, {"labelgen.members"}) == config_hash(b, {"labelgen.members"}));
    CHECK(config_hash(a, {"labelgen.members"}) != config_hash(a));
}

TEST_CASE("canonical text round-trips through set_config_value") {
    auto src = parse_config("[experiment]\nseed = 9\ntask = depth\n[inversion]\nlambda_l2 = 0.3\n");
    ExperimentConfig copy;
    std::istringstream in(canonical_text(src));
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find(" = ");
        REQUIRE(eq != std::string::npos);
        set_config_value(copy, line.substr(0, eq), line.substr(eq + 3));
    }
    CHECK(canonical_text(copy) == canonical_text(src));
    CHECK(config_hash(copy) == config_hash(src));
}

TEST_CASE("shipped configs load") {
    for (const auto& entry : std::filesystem::directory_iterator(std::filesystem::path(HANDSOFF_SOURCE_DIR) / "configs")) {
        if (entry.path().extension() != ".ini") continue;
        CAPTURE(entry.path().string());
        CHECK_NOTHROW(load_config(entry.path()));
    }
}
