#include <filesystem>
#include <string>

#include "doctest.h"
#include "openparts/config.hpp"
#include "openparts/error.hpp"

namespace op = openparts;

#ifndef OPENPARTS_GOLDEN_DIR
#error "OPENPARTS_GOLDEN_DIR must be defined by the build"
#endif

TEST_CASE("default config matches the checked-in golden byte for byte") {
    std::string golden =
        op::read_text_file(std::string(OPENPARTS_GOLDEN_DIR) + "/default_config.json");
    CHECK(op::config_to_json(op::RunConfig{}) == golden);
}

TEST_CASE("config round trips through json") {
    op::RunConfig cfg;
    cfg.parts = 8;
    cfg.lr = 0.05;
    cfg.tau_anneal = true;
    cfg.ood_split = {0.0, 1.0, 1.0};
    cfg.eval_k_mode = "estimate";
    std::string s = op::config_to_json(cfg);
    op::RunConfig back = op::config_from_json(s);
    CHECK(op::config_to_json(back) == s);
    CHECK(back.parts == 8);
    CHECK(back.lr == 0.05);
    CHECK(back.tau_anneal == true);
    CHECK(back.ood_split[0] == 0.0);
    CHECK(back.eval_k_mode == "estimate");
}

TEST_CASE("config accepts partial files and fills defaults") {
    op::RunConfig cfg = op::config_from_json("{\"parts\": 4, \"seed\": 11}");
    CHECK(cfg.parts == 4);
    CHECK(cfg.seed == 11);
    CHECK(cfg.embed_dim == op::RunConfig{}.embed_dim);
}

TEST_CASE("config rejects unknown keys") {
    CHECK_THROWS_AS(op::config_from_json("{\"partz\": 4}"), op::ParamError);
    CHECK_THROWS_AS(op::config_from_json("{\"parts\": 4, \"extra\": {}}"), op::ParamError);
}

TEST_CASE("config rejects malformed json and wrong types") {
    CHECK_THROWS_AS(op::config_from_json("{"), op::ParamError);
    CHECK_THROWS_AS(op::config_from_json("{\"parts\": \"four\"}"), op::ParamError);
    CHECK_THROWS_AS(op::config_from_json("{\"ood_split\": [1.0]}"), op::ParamError);
}

TEST_CASE("config validation catches out-of-range values") {
    auto bad = [](auto mut) {
        op::RunConfig cfg;
        mut(cfg);
        CHECK_THROWS_AS(cfg.validate(), op::ParamError);
    };
    bad([](op::RunConfig& c) { c.rho = 0.0; });
    bad([](op::RunConfig& c) { c.rho = 1.5; });
    bad([](op::RunConfig& c) { c.parts = 0; });
    bad([](op::RunConfig& c) { c.gumbel_tau = 0.0; });
    bad([](op::RunConfig& c) { c.attn_heads = 0; });
    bad([](op::RunConfig& c) { c.embed_dim = 0; });
    bad([](op::RunConfig& c) { c.n_ood = -1; });
    bad([](op::RunConfig& c) { c.beta_tail = 0.5; });
    bad([](op::RunConfig& c) { c.mix_k = 0; });
    bad([](op::RunConfig& c) { c.alpha_mean = 1.5; });
    bad([](op::RunConfig& c) { c.ood_split = {-1.0, 1.0, 1.0}; });
    bad([](op::RunConfig& c) { c.batch_size = 0; });
    bad([](op::RunConfig& c) { c.epochs = 0; });
    bad([](op::RunConfig& c) { c.eval_k_mode = "banana"; });
    bad([](op::RunConfig& c) { c.eval_k_subsample = -1; });
    bad([](op::RunConfig& c) { c.eval_k_restarts = 0; });
    bad([](op::RunConfig& c) { c.synth_known = c.synth_classes + 1; });
    bad([](op::RunConfig& c) { c.synth_rotation = 1.5; });
    bad([](op::RunConfig& c) { c.synth_rotation = -0.1; });

    op::RunConfig ok;
    CHECK_NOTHROW(ok.validate());
}

TEST_CASE("config hash is stable and key-sensitive") {
    op::RunConfig a;
    op::RunConfig b;
    CHECK(op::config_hash(a) == op::config_hash(b));
    CHECK(op::config_hash(a).size() == 16);
    b.seed = 1;
    CHECK(op::config_hash(a) != op::config_hash(b));
}

TEST_CASE("manifest carries hash, seed, and versions") {
    op::RunConfig cfg;
    cfg.seed = 123;
    std::string m = op::manifest_json(cfg);
    CHECK(m.find("\"config_hash\"") != std::string::npos);
    CHECK(m.find(op::config_hash(cfg)) != std::string::npos);
    CHECK(m.find("\"seed\": 123") != std::string::npos);
    CHECK(m.find("\"tool_version\"") != std::string::npos);
    CHECK(m.find("\"container_version\"") != std::string::npos);
}

TEST_CASE("text file round trip") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "openparts_config_test";
    fs::create_directories(dir);
    fs::path p = dir / "x.json";
    op::write_text_file(p.string(), "hello\n");
    CHECK(op::read_text_file(p.string()) == "hello\n");
    CHECK_FALSE(fs::exists(p.string() + ".tmp"));
    CHECK_THROWS_AS(op::read_text_file((dir / "absent").string()), op::IoError);
    fs::remove_all(dir);
}
