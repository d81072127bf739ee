#include "capsdet/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>

#include "capsdet/errors.hpp"

namespace capsdet {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    size_t used = 0;
    double d;
    try {
        d = std::stod(v, &used);
    } catch (const std::exception&) {
        throw FormatError("config: " + key + " wants a number, got '" + v + "'");
    }
    if (used != v.size()) throw FormatError("config: " + key + " wants a number, got '" + v + "'");
    return d;
}

int parse_int(const std::string& key, const std::string& v) {
    size_t used = 0;
    long long n;
    try {
        n = std::stoll(v, &used);
    } catch (const std::exception&) {
        throw FormatError("config: " + key + " wants an integer, got '" + v + "'");
    }
    if (used != v.size())
        throw FormatError("config: " + key + " wants an integer, got '" + v + "'");
    return static_cast<int>(n);
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    size_t used = 0;
    unsigned long long n;
    try {
        n = std::stoull(v, &used);
    } catch (const std::exception&) {
        throw FormatError("config: " + key + " wants an unsigned integer, got '" + v + "'");
    }
    if (used != v.size())
        throw FormatError("config: " + key + " wants an unsigned integer, got '" + v + "'");
    return n;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw FormatError("config: " + key + " wants a boolean, got '" + v + "'");
}

std::vector<double> parse_grid(const std::string& key, const std::string& v) {
    std::vector<double> out;
    std::string item;
    std::stringstream ss(v);
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) throw FormatError("config: " + key + " has an empty list entry");
        out.push_back(parse_double(key, item));
    }
    if (out.empty()) throw FormatError("config: " + key + " wants a comma-separated list");
    return out;
}

// Shortest decimal form that parses back to the same bits.
std::string fmt_double(double d) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%g", d);
    if (std::stod(buf) == d) return buf;
    std::snprintf(buf, sizeof buf, "%.17g", d);
    return buf;
}

std::string fmt_grid(const std::vector<double>& g) {
    std::string out;
    for (size_t i = 0; i < g.size(); ++i) {
        if (i) out += ",";
        out += fmt_double(g[i]);
    }
    return out;
}

void check(bool ok, const std::string& msg) {
    if (!ok) throw ContractError("config: " + msg);
}

}  // namespace

std::vector<std::string> preset_names() {
    return {"mnist-caps",   "mnist-cnn",   "svhn-caps",     "svhn-cnn", "cifar10-caps",
            "cifar10-cnn",  "smallnorb-caps", "desk-caps",  "desk-cnn"};
}

ExperimentConfig preset_config(const std::string& name) {
    ExperimentConfig c;
    if (name == "mnist-caps" || name == "mnist-cnn") {
        c.dataset = "mnist";
        c.data_format = "idx";
        c.image_side = 28;
        c.image_channels = 1;
        c.classes = 10;
        c.conv_channels = 64;
        c.prim_caps = 8;
        c.conv_caps1 = 16;
        c.conv_caps2 = 16;
        c.decoder_fc1 = 512;
        c.decoder_fc2 = 1024;
        c.lambda_capsule = 0.0;
        c.lambda_conv_fc = 2e-7;
        c.batch_size = 128;
        c.attack_batch = 128;
    } else if (name == "svhn-caps" || name == "svhn-cnn") {
        c.dataset = "svhn";
        c.data_format = "capsdat";
        c.image_side = 32;
        c.image_channels = 3;
        c.classes = 10;
        c.conv_channels = 128;
        c.prim_caps = 32;
        c.conv_caps1 = 24;
        c.conv_caps2 = 32;
        c.decoder_fc1 = 512;
        c.decoder_fc2 = 1024;
        c.lambda_capsule = 1e-6;
        c.lambda_conv_fc = 1e-6;
        c.batch_size = 24;
        c.attack_batch = 16;
    } else if (name == "cifar10-caps" || name == "cifar10-cnn") {
        c.dataset = "cifar10";
        c.data_format = "cifar";
        c.image_side = 32;
        c.image_channels = 3;
        c.classes = 10;
        c.conv_channels = 128;
        c.prim_caps = 24;
        c.conv_caps1 = 24;
        c.conv_caps2 = 32;
        c.decoder_fc1 = 512;
        c.decoder_fc2 = 1024;
        c.lambda_capsule = 0.0;
        c.lambda_conv_fc = 2e-7;
        c.batch_size = 16;
        c.attack_batch = 16;
    } else if (name == "smallnorb-caps") {
        // No reconstruction network at paper scale (decoder sizes are blank),
        // so this preset only supports train/evaluate-accuracy workflows.
        c.dataset = "smallnorb";
        c.data_format = "capsdat";
        c.image_side = 32;
        c.image_channels = 1;
        c.classes = 5;
        c.conv_channels = 64;
        c.prim_caps = 8;
        c.conv_caps1 = 16;
        c.conv_caps2 = 16;
        c.decoder_fc1 = 0;
        c.decoder_fc2 = 0;
        c.recon_weight = 0.0;
        c.lambda_capsule = 0.0;
        c.lambda_conv_fc = 2e-7;
        c.batch_size = 64;
    } else if (name == "desk-caps" || name == "desk-cnn") {
        c.dataset = "synthetic";
        c.data_format = "synthetic";
        c.image_side = 28;
        c.image_channels = 1;
        c.classes = 10;
        c.conv_channels = 16;
        c.prim_caps = 2;
        c.conv_caps1 = 4;
        c.conv_caps2 = 4;
        c.decoder_fc1 = 64;
        c.decoder_fc2 = 128;
        c.width_mult = 0.25;
        c.lambda_capsule = 0.0;
        c.lambda_conv_fc = 2e-7;
        c.batch_size = 16;
        c.train_steps = 400;
        c.attack_batch = 16;
        c.attack_steps = 400;
        c.attack_lr = 0.02;
        c.attack_pool = 128;
        c.patch_side = 32;
        c.synthetic_train = 2048;
        c.synthetic_test = 512;
    } else {
        throw DomainError("unknown preset: " + name);
    }
    if (name.size() > 4 && name.substr(name.size() - 4) == "-cnn") {
        c.arch = "cnn";
        if (name == "mnist-cnn" || name == "svhn-cnn" || name == "cifar10-cnn")
            c.cnn_input_side = 224;  // published CNN baseline upsamples its input
        if (name == "svhn-cnn" || name == "cifar10-cnn") c.attack_lr = 0.01;
    }
    return c;
}

void set_config_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    using Setter = std::function<void(ExperimentConfig&, const std::string&)>;
    static const std::map<std::string, Setter> table = {
        {"preset", [](ExperimentConfig& c, const std::string& v) { c = preset_config(v); }},
        {"dataset", [](ExperimentConfig& c, const std::string& v) { c.dataset = v; }},
        {"data_format", [](ExperimentConfig& c, const std::string& v) { c.data_format = v; }},
        {"train_images", [](ExperimentConfig& c, const std::string& v) { c.train_images = v; }},
        {"train_labels", [](ExperimentConfig& c, const std::string& v) { c.train_labels = v; }},
        {"test_images", [](ExperimentConfig& c, const std::string& v) { c.test_images = v; }},
        {"test_labels", [](ExperimentConfig& c, const std::string& v) { c.test_labels = v; }},
        {"synthetic_train",
         [](ExperimentConfig& c, const std::string& v) {
             c.synthetic_train = parse_int("synthetic_train", v);
         }},
        {"synthetic_test",
         [](ExperimentConfig& c, const std::string& v) {
             c.synthetic_test = parse_int("synthetic_test", v);
         }},
        {"arch", [](ExperimentConfig& c, const std::string& v) { c.arch = v; }},
        {"image_side",
         [](ExperimentConfig& c, const std::string& v) {
             c.image_side = parse_int("image_side", v);
         }},
        {"image_channels",
         [](ExperimentConfig& c, const std::string& v) {
             c.image_channels = parse_int("image_channels", v);
         }},
        {"classes",
         [](ExperimentConfig& c, const std::string& v) { c.classes = parse_int("classes", v); }},
        {"conv_channels",
         [](ExperimentConfig& c, const std::string& v) {
             c.conv_channels = parse_int("conv_channels", v);
         }},
        {"prim_caps",
         [](ExperimentConfig& c, const std::string& v) {
             c.prim_caps = parse_int("prim_caps", v);
         }},
        {"conv_caps1",
         [](ExperimentConfig& c, const std::string& v) {
             c.conv_caps1 = parse_int("conv_caps1", v);
         }},
        {"conv_caps2",
         [](ExperimentConfig& c, const std::string& v) {
             c.conv_caps2 = parse_int("conv_caps2", v);
         }},
        {"decoder_fc1",
         [](ExperimentConfig& c, const std::string& v) {
             c.decoder_fc1 = parse_int("decoder_fc1", v);
         }},
        {"decoder_fc2",
         [](ExperimentConfig& c, const std::string& v) {
             c.decoder_fc2 = parse_int("decoder_fc2", v);
         }},
        {"cnn_input_side",
         [](ExperimentConfig& c, const std::string& v) {
             c.cnn_input_side = parse_int("cnn_input_side", v);
         }},
        {"width_mult",
         [](ExperimentConfig& c, const std::string& v) {
             c.width_mult = parse_double("width_mult", v);
         }},
        {"lambda_capsule",
         [](ExperimentConfig& c, const std::string& v) {
             c.lambda_capsule = parse_double("lambda_capsule", v);
         }},
        {"lambda_conv_fc",
         [](ExperimentConfig& c, const std::string& v) {
             c.lambda_conv_fc = parse_double("lambda_conv_fc", v);
         }},
        {"recon_weight",
         [](ExperimentConfig& c, const std::string& v) {
             c.recon_weight = parse_double("recon_weight", v);
         }},
        {"lr", [](ExperimentConfig& c, const std::string& v) { c.lr = parse_double("lr", v); }},
        {"routing_iterations",
         [](ExperimentConfig& c, const std::string& v) {
             c.routing_iterations = parse_int("routing_iterations", v);
         }},
        {"mcd_p",
         [](ExperimentConfig& c, const std::string& v) { c.mcd_p = parse_double("mcd_p", v); }},
        {"droproute",
         [](ExperimentConfig& c, const std::string& v) {
             c.droproute = parse_bool("droproute", v);
         }},
        {"droproute_p",
         [](ExperimentConfig& c, const std::string& v) {
             c.droproute_p = parse_double("droproute_p", v);
         }},
        {"batch_size",
         [](ExperimentConfig& c, const std::string& v) {
             c.batch_size = parse_int("batch_size", v);
         }},
        {"train_steps",
         [](ExperimentConfig& c, const std::string& v) {
             c.train_steps = parse_int("train_steps", v);
         }},
        {"budget_minutes",
         [](ExperimentConfig& c, const std::string& v) {
             c.budget_minutes = parse_double("budget_minutes", v);
         }},
        {"checkpoint_every",
         [](ExperimentConfig& c, const std::string& v) {
             c.checkpoint_every = parse_int("checkpoint_every", v);
         }},
        {"calib_percentile",
         [](ExperimentConfig& c, const std::string& v) {
             c.calib_percentile = parse_double("calib_percentile", v);
         }},
        {"calib_samples",
         [](ExperimentConfig& c, const std::string& v) {
             c.calib_samples = parse_int("calib_samples", v);
         }},
        {"c_adv",
         [](ExperimentConfig& c, const std::string& v) { c.c_adv = parse_int("c_adv", v); }},
        {"kappa",
         [](ExperimentConfig& c, const std::string& v) { c.kappa = parse_double("kappa", v); }},
        {"attack_lambda",
         [](ExperimentConfig& c, const std::string& v) {
             c.attack_lambda = parse_double("attack_lambda", v);
         }},
        {"scale_min",
         [](ExperimentConfig& c, const std::string& v) {
             c.scale_min = parse_double("scale_min", v);
         }},
        {"scale_max",
         [](ExperimentConfig& c, const std::string& v) {
             c.scale_max = parse_double("scale_max", v);
         }},
        {"rotation_limit_deg",
         [](ExperimentConfig& c, const std::string& v) {
             c.rotation_limit_deg = parse_double("rotation_limit_deg", v);
         }},
        {"patch_side",
         [](ExperimentConfig& c, const std::string& v) {
             c.patch_side = parse_int("patch_side", v);
         }},
        {"attack_steps",
         [](ExperimentConfig& c, const std::string& v) {
             c.attack_steps = parse_int("attack_steps", v);
         }},
        {"attack_batch",
         [](ExperimentConfig& c, const std::string& v) {
             c.attack_batch = parse_int("attack_batch", v);
         }},
        {"attack_lr",
         [](ExperimentConfig& c, const std::string& v) {
             c.attack_lr = parse_double("attack_lr", v);
         }},
        {"attack_pool",
         [](ExperimentConfig& c, const std::string& v) {
             c.attack_pool = parse_int("attack_pool", v);
         }},
        {"eval_area",
         [](ExperimentConfig& c, const std::string& v) {
             c.eval_area = parse_double("eval_area", v);
         }},
        {"eval_repeats",
         [](ExperimentConfig& c, const std::string& v) {
             c.eval_repeats = parse_int("eval_repeats", v);
         }},
        {"eval_batch",
         [](ExperimentConfig& c, const std::string& v) {
             c.eval_batch = parse_int("eval_batch", v);
         }},
        {"lambda_grid",
         [](ExperimentConfig& c, const std::string& v) {
             c.lambda_grid = parse_grid("lambda_grid", v);
         }},
        {"scale_grid",
         [](ExperimentConfig& c, const std::string& v) {
             c.scale_grid = parse_grid("scale_grid", v);
         }},
        {"seed", [](ExperimentConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); }},
        {"out_dir", [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; }},
    };
    auto it = table.find(key);
    if (it == table.end()) throw DomainError("config: unknown key '" + key + "'");
    it->second(cfg, value);
}

ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        std::string key, value;
        size_t eq = line.find('=');
        if (eq != std::string::npos) {
            key = trim(line.substr(0, eq));
            value = trim(line.substr(eq + 1));
        } else {
            size_t sp = line.find_first_of(" \t");
            if (sp == std::string::npos)
                throw FormatError("config line " + std::to_string(lineno) + ": no value for '" +
                                  line + "'");
            key = trim(line.substr(0, sp));
            value = trim(line.substr(sp + 1));
        }
        if (key.empty() || value.empty())
            throw FormatError("config line " + std::to_string(lineno) + ": malformed entry");
        set_config_key(cfg, key, value);
    }
    validate_config(cfg);
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config_text(text);
}

void validate_config(const ExperimentConfig& cfg) {
    arch_from_name(cfg.arch);
    check(cfg.data_format == "synthetic" || cfg.data_format == "idx" ||
              cfg.data_format == "cifar" || cfg.data_format == "capsdat",
          "data_format must be synthetic, idx, cifar, or capsdat");
    if (cfg.data_format != "synthetic")
        check(!cfg.train_images.empty() && !cfg.test_images.empty(),
              "file-backed datasets need train_images and test_images paths");
    if (cfg.data_format == "idx")
        check(!cfg.train_labels.empty() && !cfg.test_labels.empty(),
              "idx datasets need train_labels and test_labels paths");
    check(cfg.synthetic_train >= 1 && cfg.synthetic_test >= 1, "synthetic split sizes >= 1");
    check(cfg.image_side >= 8 && cfg.image_channels >= 1, "image dims too small");
    check(cfg.classes >= 2, "classes >= 2");
    check(cfg.conv_channels >= 1 && cfg.prim_caps >= 1 && cfg.conv_caps1 >= 1 &&
              cfg.conv_caps2 >= 1,
          "capsule stack widths >= 1");
    check(cfg.decoder_fc1 >= 0 && cfg.decoder_fc2 >= 0, "decoder sizes >= 0");
    check((cfg.decoder_fc1 == 0) == (cfg.decoder_fc2 == 0),
          "decoder sizes must be both zero or both positive");
    check(cfg.cnn_input_side == 0 || cfg.cnn_input_side >= cfg.image_side,
          "cnn_input_side must be 0 or >= image_side");
    check(cfg.width_mult > 0.0, "width_mult > 0");
    check(cfg.lambda_capsule >= 0.0 && cfg.lambda_conv_fc >= 0.0, "regularization >= 0");
    check(cfg.recon_weight >= 0.0, "recon_weight >= 0");
    check(cfg.lr > 0.0 && cfg.attack_lr > 0.0, "learning rates > 0");
    check(cfg.routing_iterations >= 1, "routing_iterations >= 1");
    check(cfg.mcd_p >= 0.0 && cfg.mcd_p < 1.0, "mcd_p in [0,1)");
    check(cfg.droproute_p >= 0.0 && cfg.droproute_p < 1.0, "droproute_p in [0,1)");
    check(cfg.batch_size >= 1 && cfg.attack_batch >= 1 && cfg.eval_batch >= 1, "batch sizes >= 1");
    check(cfg.train_steps >= 0 && cfg.attack_steps >= 0, "step counts >= 0");
    check(cfg.budget_minutes > 0.0, "budget_minutes > 0");
    check(cfg.checkpoint_every >= 1, "checkpoint_every >= 1");
    check(cfg.calib_percentile > 0.0 && cfg.calib_percentile < 100.0,
          "calib_percentile in (0,100)");
    check(cfg.calib_samples >= 0, "calib_samples >= 0");
    check(cfg.c_adv >= 0 && cfg.c_adv < cfg.classes, "c_adv must name a class");
    check(cfg.kappa >= 0.0, "kappa >= 0");
    check(cfg.attack_lambda >= 0.0, "attack_lambda >= 0");
    check(cfg.scale_min > 0.0 && cfg.scale_max <= 1.0 && cfg.scale_min <= cfg.scale_max,
          "patch area bounds must satisfy 0 < min <= max <= 1");
    check(cfg.rotation_limit_deg >= 0.0 && cfg.rotation_limit_deg <= 180.0,
          "rotation_limit_deg in [0,180]");
    check(cfg.patch_side >= 2, "patch_side >= 2");
    check(cfg.attack_pool >= 1, "attack_pool >= 1");
    check(cfg.eval_area > 0.0 && cfg.eval_area <= 1.0, "eval_area in (0,1]");
    check(cfg.eval_repeats >= 1, "eval_repeats >= 1");
    for (double l : cfg.lambda_grid) check(l >= 0.0, "lambda_grid entries >= 0");
    for (double s : cfg.scale_grid)
        check(s > 0.0 && s <= 1.0, "scale_grid entries in (0,1]");
    check(!cfg.out_dir.empty(), "out_dir must be set");
}

ModelSpec model_spec_from(const ExperimentConfig& cfg) {
    ModelSpec s;
    s.arch = arch_from_name(cfg.arch);
    s.caps.image_side = cfg.image_side;
    s.caps.image_channels = cfg.image_channels;
    s.caps.conv_channels = cfg.conv_channels;
    s.caps.prim_caps = cfg.prim_caps;
    s.caps.conv_caps1 = cfg.conv_caps1;
    s.caps.conv_caps2 = cfg.conv_caps2;
    s.caps.class_caps = cfg.classes;
    s.caps.mcd_p = cfg.mcd_p;
    s.caps.droproute_enabled = cfg.droproute;
    s.caps.droproute_p = cfg.droproute_p;
    s.caps.routing_iterations = cfg.routing_iterations;
    s.cnn.image_side = cfg.image_side;
    s.cnn.image_channels = cfg.image_channels;
    s.cnn.input_side = cfg.cnn_input_side > 0 ? cfg.cnn_input_side : cfg.image_side;
    s.cnn.classes = cfg.classes;
    s.cnn.width_mult = cfg.width_mult;
    s.decoder.fc1 = cfg.decoder_fc1;
    s.decoder.fc2 = cfg.decoder_fc2;
    s.decoder.out_h = cfg.image_side;
    s.decoder.out_w = cfg.image_side;
    s.decoder.out_c = cfg.image_channels;
    s.recon_weight = cfg.recon_weight;
    s.l2_capsule = cfg.lambda_capsule;
    s.l2_conv_fc = cfg.lambda_conv_fc;
    return s;
}

AttackConfig attack_config_from(const ExperimentConfig& cfg) {
    AttackConfig a;
    a.c_adv = cfg.c_adv;
    a.kappa = cfg.kappa;
    a.lambda_a = cfg.attack_lambda;
    a.scale_min = cfg.scale_min;
    a.scale_max = cfg.scale_max;
    double rad = cfg.rotation_limit_deg * std::numbers::pi / 180.0;
    a.rotation_min = -rad;
    a.rotation_max = rad;
    a.patch_side = cfg.patch_side;
    a.steps = cfg.attack_steps;
    a.batch_size = cfg.attack_batch;
    a.lr = cfg.attack_lr;
    a.seed = cfg.seed;
    return a;
}

EvalConfig eval_config_from(const ExperimentConfig& cfg) {
    EvalConfig e;
    e.area_fraction = cfg.eval_area;
    e.repeats = cfg.eval_repeats;
    e.batch_size = cfg.eval_batch;
    e.seed = cfg.seed;
    return e;
}

std::string config_echo(const ExperimentConfig& cfg) {
    std::string out;
    auto put = [&out](const std::string& k, const std::string& v) {
        out += k;
        out += " = ";
        out += v;
        out += "\n";
    };
    put("dataset", cfg.dataset);
    put("data_format", cfg.data_format);
    if (!cfg.train_images.empty()) put("train_images", cfg.train_images);
    if (!cfg.train_labels.empty()) put("train_labels", cfg.train_labels);
    if (!cfg.test_images.empty()) put("test_images", cfg.test_images);
    if (!cfg.test_labels.empty()) put("test_labels", cfg.test_labels);
    put("synthetic_train", std::to_string(cfg.synthetic_train));
    put("synthetic_test", std::to_string(cfg.synthetic_test));
    put("arch", cfg.arch);
    put("image_side", std::to_string(cfg.image_side));
    put("image_channels", std::to_string(cfg.image_channels));
    put("classes", std::to_string(cfg.classes));
    put("conv_channels", std::to_string(cfg.conv_channels));
    put("prim_caps", std::to_string(cfg.prim_caps));
    put("conv_caps1", std::to_string(cfg.conv_caps1));
    put("conv_caps2", std::to_string(cfg.conv_caps2));
    put("decoder_fc1", std::to_string(cfg.decoder_fc1));
    put("decoder_fc2", std::to_string(cfg.decoder_fc2));
    put("cnn_input_side", std::to_string(cfg.cnn_input_side));
    put("width_mult", fmt_double(cfg.width_mult));
    put("lambda_capsule", fmt_double(cfg.lambda_capsule));
    put("lambda_conv_fc", fmt_double(cfg.lambda_conv_fc));
    put("recon_weight", fmt_double(cfg.recon_weight));
    put("lr", fmt_double(cfg.lr));
    put("routing_iterations", std::to_string(cfg.routing_iterations));
    put("mcd_p", fmt_double(cfg.mcd_p));
    put("droproute", cfg.droproute ? "true" : "false");
    put("droproute_p", fmt_double(cfg.droproute_p));
    put("batch_size", std::to_string(cfg.batch_size));
    put("train_steps", std::to_string(cfg.train_steps));
    put("budget_minutes", fmt_double(cfg.budget_minutes));
    put("checkpoint_every", std::to_string(cfg.checkpoint_every));
    put("calib_percentile", fmt_double(cfg.calib_percentile));
    put("calib_samples", std::to_string(cfg.calib_samples));
    put("c_adv", std::to_string(cfg.c_adv));
    put("kappa", fmt_double(cfg.kappa));
    put("attack_lambda", fmt_double(cfg.attack_lambda));
    put("scale_min", fmt_double(cfg.scale_min));
    put("scale_max", fmt_double(cfg.scale_max));
    put("rotation_limit_deg", fmt_double(cfg.rotation_limit_deg));
    put("patch_side", std::to_string(cfg.patch_side));
    put("attack_steps", std::to_string(cfg.attack_steps));
    put("attack_batch", std::to_string(cfg.attack_batch));
    put("attack_lr", fmt_double(cfg.attack_lr));
    put("attack_pool", std::to_string(cfg.attack_pool));
    put("eval_area", fmt_double(cfg.eval_area));
    put("eval_repeats", std::to_string(cfg.eval_repeats));
    put("eval_batch", std::to_string(cfg.eval_batch));
    if (!cfg.lambda_grid.empty()) put("lambda_grid", fmt_grid(cfg.lambda_grid));
    if (!cfg.scale_grid.empty()) put("scale_grid", fmt_grid(cfg.scale_grid));
    put("seed", std::to_string(cfg.seed));
    put("out_dir", cfg.out_dir);
    return out;
}

}  // namespace capsdet
