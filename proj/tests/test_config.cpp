#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "capsdet/config.hpp"
#include "capsdet/errors.hpp"

using namespace capsdet;

TEST_CASE("parser accepts both separators, comments, and overrides in order") {
    ExperimentConfig c = parse_config_text(
        "# experiment\n"
        "dataset = synthetic\n"
        "classes 4\n"
        "batch_size = 8   # trailing comment\n"
        "\n"
        "batch_size = 32\n"
        "out_dir results/run1\n");
    CHECK(c.dataset == "synthetic");
    CHECK(c.classes == 4);
    CHECK(c.batch_size == 32);
    CHECK(c.out_dir == "results/run1");
}

TEST_CASE("parser rejects unknown keys and malformed values") {
    CHECK_THROWS_AS(parse_config_text("not_a_key = 3\n"), DomainError);
    CHECK_THROWS_AS(parse_config_text("batch_size = twelve\n"), FormatError);
    CHECK_THROWS_AS(parse_config_text("lr = 0.003x\n"), FormatError);
    CHECK_THROWS_AS(parse_config_text("droproute = maybe\n"), FormatError);
    CHECK_THROWS_AS(parse_config_text("batch_size\n"), FormatError);
    CHECK_THROWS_AS(parse_config_text("= 5\n"), FormatError);
    CHECK_THROWS_AS(parse_config_text("preset = no-such-preset\n"), DomainError);
}

TEST_CASE("preset line loads defaults that later lines override") {
    ExperimentConfig c = parse_config_text(
        "preset = svhn-caps\n"
        "train_images = svhn_train.dat\n"
        "test_images = svhn_test.dat\n"
        "batch_size = 4\n");
    CHECK(c.dataset == "svhn");
    CHECK(c.conv_channels == 128);
    CHECK(c.prim_caps == 32);
    CHECK(c.batch_size == 4);
    CHECK(c.lambda_capsule == 1e-6);
}

TEST_CASE("paper presets carry the published sizes and regularization") {
    SUBCASE("mnist capsnet") {
        ExperimentConfig c = preset_config("mnist-caps");
        CHECK(c.conv_channels == 64);
        CHECK(c.prim_caps == 8);
        CHECK(c.conv_caps1 == 16);
        CHECK(c.conv_caps2 == 16);
        CHECK(c.classes == 10);
        CHECK(c.decoder_fc1 == 512);
        CHECK(c.decoder_fc2 == 1024);
        CHECK(c.lambda_capsule == 0.0);
        CHECK(c.lambda_conv_fc == 2e-7);
        CHECK(c.batch_size == 128);
        CHECK(c.attack_batch == 128);
        CHECK(c.lr == 0.003);
        CHECK(c.routing_iterations == 2);
        CHECK(c.mcd_p == 0.5);
    }
    SUBCASE("svhn capsnet") {
        ExperimentConfig c = preset_config("svhn-caps");
        CHECK(c.conv_channels == 128);
        CHECK(c.prim_caps == 32);
        CHECK(c.conv_caps1 == 24);
        CHECK(c.conv_caps2 == 32);
        CHECK(c.image_channels == 3);
        CHECK(c.lambda_capsule == 1e-6);
        CHECK(c.lambda_conv_fc == 1e-6);
        CHECK(c.batch_size == 24);
        CHECK(c.attack_batch == 16);
    }
    SUBCASE("cifar10 capsnet") {
        ExperimentConfig c = preset_config("cifar10-caps");
        CHECK(c.conv_channels == 128);
        CHECK(c.prim_caps == 24);
        CHECK(c.conv_caps1 == 24);
        CHECK(c.conv_caps2 == 32);
        CHECK(c.lambda_capsule == 0.0);
        CHECK(c.lambda_conv_fc == 2e-7);
        CHECK(c.batch_size == 16);
        CHECK(c.attack_batch == 16);
    }
    SUBCASE("smallnorb capsnet has no decoder") {
        ExperimentConfig c = preset_config("smallnorb-caps");
        CHECK(c.conv_channels == 64);
        CHECK(c.prim_caps == 8);
        CHECK(c.conv_caps1 == 16);
        CHECK(c.conv_caps2 == 16);
        CHECK(c.classes == 5);
        CHECK(c.decoder_fc1 == 0);
        CHECK(c.decoder_fc2 == 0);
        CHECK(c.recon_weight == 0.0);
        CHECK(c.batch_size == 64);
        CHECK(c.lambda_conv_fc == 2e-7);
    }
    SUBCASE("cnn baselines upsample and use the published patch lr") {
        CHECK(preset_config("mnist-cnn").arch == "cnn");
        CHECK(preset_config("mnist-cnn").cnn_input_side == 224);
        CHECK(preset_config("mnist-cnn").attack_lr == 0.003);
        CHECK(preset_config("svhn-cnn").attack_lr == 0.01);
        CHECK(preset_config("cifar10-cnn").attack_lr == 0.01);
        CHECK(preset_config("cifar10-cnn").cnn_input_side == 224);
    }
    SUBCASE("every listed preset constructs") {
        for (const std::string& name : preset_names()) CHECK_NOTHROW(preset_config(name));
    }
}

TEST_CASE("improved arch toggles exactly mcd and affine voting") {
    ExperimentConfig base = preset_config("desk-caps");
    ExperimentConfig improved = base;
    improved.arch = "capsnet-improved";

    Model mb = build_model(model_spec_from(base), 5);
    Model mi = build_model(model_spec_from(improved), 5);

    CHECK(mb.spec.caps.mcd_enabled == false);
    CHECK(mb.spec.caps.voting == Voting::Linear);
    CHECK(mi.spec.caps.mcd_enabled == true);
    CHECK(mi.spec.caps.voting == Voting::Affine);

    CHECK(mb.spec.caps.image_side == mi.spec.caps.image_side);
    CHECK(mb.spec.caps.conv_channels == mi.spec.caps.conv_channels);
    CHECK(mb.spec.caps.prim_caps == mi.spec.caps.prim_caps);
    CHECK(mb.spec.caps.conv_caps1 == mi.spec.caps.conv_caps1);
    CHECK(mb.spec.caps.conv_caps2 == mi.spec.caps.conv_caps2);
    CHECK(mb.spec.caps.class_caps == mi.spec.caps.class_caps);
    CHECK(mb.spec.caps.mcd_p == mi.spec.caps.mcd_p);
    CHECK(mb.spec.caps.routing_iterations == mi.spec.caps.routing_iterations);
    CHECK(mb.spec.recon_weight == mi.spec.recon_weight);
    CHECK(mb.spec.l2_capsule == mi.spec.l2_capsule);
    CHECK(mb.spec.l2_conv_fc == mi.spec.l2_conv_fc);
}

TEST_CASE("echo round trip is exact and idempotent") {
    ExperimentConfig c = preset_config("desk-caps");
    c.attack_lambda = 0.1;
    c.lambda_conv_fc = 1e-6;
    c.rotation_limit_deg = 22.5;
    c.lambda_grid = {0.0, 0.5, 1.0, 10000.0};
    c.scale_grid = {0.1, 0.25, 0.4};
    c.seed = 1234567890123ULL;
    c.train_images = "a/b.idx";
    std::string echo1 = config_echo(c);
    ExperimentConfig back = parse_config_text(echo1);
    CHECK(config_echo(back) == echo1);
    CHECK(back.attack_lambda == c.attack_lambda);
    CHECK(back.lambda_grid == c.lambda_grid);
    CHECK(back.seed == c.seed);
    CHECK(back.train_images == c.train_images);
}

TEST_CASE("validation rejects out-of-range fields") {
    ExperimentConfig good = preset_config("desk-caps");
    CHECK_NOTHROW(validate_config(good));

    auto breaks = [&](auto mutate) {
        ExperimentConfig c = preset_config("desk-caps");
        mutate(c);
        CHECK_THROWS_AS(validate_config(c), ContractError);
    };
    breaks([](ExperimentConfig& c) { c.classes = 1; });
    breaks([](ExperimentConfig& c) { c.scale_min = 0.0; });
    breaks([](ExperimentConfig& c) { c.scale_max = 1.5; });
    breaks([](ExperimentConfig& c) {
        c.scale_min = 0.6;
        c.scale_max = 0.5;
    });
    breaks([](ExperimentConfig& c) { c.calib_percentile = 100.0; });
    breaks([](ExperimentConfig& c) { c.c_adv = 10; });
    breaks([](ExperimentConfig& c) { c.mcd_p = 1.0; });
    breaks([](ExperimentConfig& c) { c.lr = 0.0; });
    breaks([](ExperimentConfig& c) { c.decoder_fc1 = 0; });
    breaks([](ExperimentConfig& c) { c.eval_area = 0.0; });
    breaks([](ExperimentConfig& c) { c.data_format = "hdf5"; });
    breaks([](ExperimentConfig& c) { c.data_format = "idx"; });
    breaks([](ExperimentConfig& c) { c.out_dir = ""; });
    breaks([](ExperimentConfig& c) { c.lambda_grid = {0.0, -1.0}; });
    CHECK_THROWS_AS(parse_config_text("arch = resnet\n"), DomainError);
}

TEST_CASE("grid values parse from comma lists") {
    ExperimentConfig c = parse_config_text("lambda_grid = 0, 5, 1e4\nscale_grid = 0.1,0.4\n");
    CHECK(c.lambda_grid == std::vector<double>{0.0, 5.0, 10000.0});
    CHECK(c.scale_grid == std::vector<double>{0.1, 0.4});
    CHECK_THROWS_AS(parse_config_text("lambda_grid = 0,,5\n"), FormatError);
    CHECK_THROWS_AS(parse_config_text("lambda_grid = 0,abc\n"), FormatError);
}

TEST_CASE("derived attack, eval, and model structs mirror the config") {
    ExperimentConfig c = preset_config("desk-caps");
    c.c_adv = 3;
    c.kappa = 12.0;
    c.attack_lambda = 2.5;
    c.rotation_limit_deg = 45.0;
    c.seed = 99;
    c.eval_area = 0.25;
    c.eval_repeats = 3;

    AttackConfig a = attack_config_from(c);
    CHECK(a.c_adv == 3);
    CHECK(a.kappa == 12.0);
    CHECK(a.lambda_a == 2.5);
    CHECK(a.rotation_max == doctest::Approx(std::numbers::pi / 4.0).epsilon(1e-12));
    CHECK(a.rotation_min == -a.rotation_max);
    CHECK(a.seed == 99);
    CHECK(a.batch_size == c.attack_batch);
    CHECK(a.lr == c.attack_lr);

    EvalConfig e = eval_config_from(c);
    CHECK(e.area_fraction == 0.25);
    CHECK(e.repeats == 3);
    CHECK(e.seed == 99);

    ModelSpec s = model_spec_from(c);
    CHECK(s.arch == Arch::CapsNet);
    CHECK(s.caps.class_caps == c.classes);
    CHECK(s.cnn.input_side == c.image_side);
    CHECK(s.decoder.out_h == c.image_side);
    CHECK(s.decoder.out_c == c.image_channels);
    c.cnn_input_side = 224;
    CHECK(model_spec_from(c).cnn.input_side == 224);
}

TEST_CASE("missing config file raises an io error") {
    CHECK_THROWS_AS(load_config_file("/no/such/config.cfg"), IoError);
}
