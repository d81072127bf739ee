#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "capsdet/eval.hpp"
#include "capsdet/model.hpp"
#include "capsdet/patch.hpp"

namespace capsdet {

// One experiment, described as flat key-value text. '#' starts a comment,
// lines are `key = value` or `key value`, unknown keys are errors. A
// `preset <name>` line loads named defaults; later lines override them.
struct ExperimentConfig {
    std::string dataset = "synthetic";
    std::string data_format = "synthetic";  // synthetic | idx | cifar | capsdat
    std::string train_images;
    std::string train_labels;
    std::string test_images;
    std::string test_labels;
    int synthetic_train = 2048;
    int synthetic_test = 512;

    std::string arch = "capsnet";  // cnn | capsnet | capsnet-improved
    int image_side = 28;
    int image_channels = 1;
    int classes = 10;

    // Capsule stack widths A-E share `classes` as E; decoder sizes are X, Y.
    int conv_channels = 64;
    int prim_caps = 8;
    int conv_caps1 = 16;
    int conv_caps2 = 16;
    int decoder_fc1 = 512;
    int decoder_fc2 = 1024;

    int cnn_input_side = 0;  // 0 runs the CNN at native dataset resolution
    double width_mult = 1.0;

    double lambda_capsule = 0.0;
    double lambda_conv_fc = 2e-7;
    double recon_weight = 1.0;
    double lr = 0.003;
    int routing_iterations = 2;
    double mcd_p = 0.5;
    bool droproute = false;
    double droproute_p = 0.5;

    int batch_size = 128;
    int train_steps = 500;
    double budget_minutes = 30.0;
    int checkpoint_every = 100;

    double calib_percentile = 95.0;
    int calib_samples = 0;  // 0 calibrates on the full test split

    int c_adv = 0;
    double kappa = 20.0;
    double attack_lambda = 0.0;
    double scale_min = 0.10;
    double scale_max = 0.50;
    double rotation_limit_deg = 22.5;  // symmetric bound, degrees
    int patch_side = 64;
    int attack_steps = 500;
    int attack_batch = 16;
    double attack_lr = 0.003;
    int attack_pool = 256;  // training images the EOT batch draws from

    double eval_area = 0.40;
    int eval_repeats = 1;
    int eval_batch = 32;
    std::vector<double> lambda_grid;  // empty uses the default grid
    std::vector<double> scale_grid;   // empty uses {0.1, 0.2, 0.3, 0.4, 0.5}

    uint64_t seed = 0;
    std::string out_dir = "out";
};

// Named defaults: paper-scale presets carry the published layer sizes,
// regularization, and batch sizes verbatim; desk presets are width-reduced
// synthetic-data runs that finish on one CPU.
ExperimentConfig preset_config(const std::string& name);
std::vector<std::string> preset_names();

void set_config_key(ExperimentConfig& cfg, const std::string& key, const std::string& value);
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

void validate_config(const ExperimentConfig& cfg);

ModelSpec model_spec_from(const ExperimentConfig& cfg);
AttackConfig attack_config_from(const ExperimentConfig& cfg);
EvalConfig eval_config_from(const ExperimentConfig& cfg);

// Canonical serialization: fixed key order, lossless doubles. Feeding the
// echo back through the parser reproduces the config exactly.
std::string config_echo(const ExperimentConfig& cfg);

}  // namespace capsdet
