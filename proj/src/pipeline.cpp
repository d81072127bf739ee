#include "capsdet/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "capsdet/errors.hpp"
#include "capsdet/nn.hpp"

namespace capsdet {

namespace {

std::vector<std::string> split_paths(const std::string& list) {
    std::vector<std::string> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        size_t a = item.find_first_not_of(" \t");
        size_t b = item.find_last_not_of(" \t");
        if (a == std::string::npos) continue;
        out.push_back(item.substr(a, b - a + 1));
    }
    return out;
}

Tensor batch_images(const Dataset& ds, int64_t step, int batch) {
    const Shape& s = ds.images.shape();
    int n = s[0];
    int64_t block = static_cast<int64_t>(s[1]) * s[2] * s[3];
    Tensor out({batch, s[1], s[2], s[3]});
    for (int j = 0; j < batch; ++j) {
        int64_t idx = (step * batch + j) % n;
        std::memcpy(out.data() + j * block, ds.images.data() + idx * block,
                    static_cast<size_t>(block) * sizeof(double));
    }
    return out;
}

std::vector<int> batch_labels(const Dataset& ds, int64_t step, int batch) {
    int n = ds.size();
    std::vector<int> out(static_cast<size_t>(batch));
    for (int j = 0; j < batch; ++j)
        out[static_cast<size_t>(j)] = ds.labels[static_cast<size_t>((step * batch + j) % n)];
    return out;
}

void check_labels(const Dataset& ds, int classes) {
    for (int l : ds.labels)
        if (l < 0 || l >= classes)
            throw ContractError("dataset labels must lie in [0, classes)");
}

bool use_decoder(const Model& model, const ExperimentConfig& cfg) {
    return model.spec.decoder.fc1 > 0 && cfg.recon_weight > 0.0;
}

TrainResult train_loop(const ExperimentConfig& cfg, const Dataset& train, Model& model, Adam& opt,
                       int64_t start_step, const std::string& checkpoint_path,
                       int64_t stop_after) {
    if (train.size() < 1) throw ContractError("train_model: empty dataset");
    check_labels(train, cfg.classes);

    TrainResult res;
    res.checkpoint = make_checkpoint(model, opt, start_step, cfg);
    Checkpoint last_good = res.checkpoint;

    const int64_t total = cfg.train_steps;  // schedule span, never shortened
    int64_t until = total;
    if (stop_after > 0) until = std::min(until, stop_after);
    const bool with_recon = use_decoder(model, cfg);
    const Rng root = Rng::from_seed(cfg.seed);
    const SpreadSchedule sched;
    const auto t0 = std::chrono::steady_clock::now();
    const double budget_s = cfg.budget_minutes * 60.0;

    int64_t step = start_step;
    for (; step < until; ++step) {
        double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (elapsed >= budget_s) {
            res.budget_hit = true;
            break;
        }

        Tensor batch = batch_images(train, step, cfg.batch_size);
        std::vector<int> labels = batch_labels(train, step, cfg.batch_size);
        Rng srng = root.split("train-step").split(static_cast<uint64_t>(step));

        try {
            Tape tape;
            BoundParams bp(tape, model.params);
            Var x = tape.input(std::move(batch));
            ModelForward fwd = model_forward(tape, x, bp, model, true, srng.split("fwd"));

            Var class_loss;
            if (model.spec.arch == Arch::Cnn) {
                class_loss =
                    cross_entropy(fwd.scores, tape.constant(one_hot(labels, cfg.classes)));
            } else {
                double margin = spread_margin_at(sched, step, total);
                double temp = spread_temperature_at(sched, step, total);
                class_loss = spread_loss(sigmoid(fwd.scores), labels, margin, temp);
            }

            Var loss = class_loss;
            double recon_val = 0.0;
            if (with_recon) {
                Var sel = select_embedding(fwd.embeddings, tape.value(fwd.scores),
                                           SelectMode::GroundTruth, labels);
                Var rloss = reconstruction_loss(decode(sel, bp, model.spec.decoder), x);
                loss = add(class_loss, cfg.recon_weight * rloss);
                recon_val = tape.value(rloss).item();
            }

            double loss_val = tape.value(loss).item();
            if (!std::isfinite(loss_val)) throw NumericError("non-finite loss");

            tape.backward(loss);
            std::vector<Tensor> grads = bp.grads(tape);
            std::vector<Tensor*> ptrs = model.params.pointers();
            opt.step(ptrs, grads, model.params.l2_all());

            res.log.push_back({step + 1, loss_val, tape.value(class_loss).item(), recon_val});
        } catch (const NumericError&) {
            res.diverged = true;
            res.checkpoint = last_good;
            if (!checkpoint_path.empty()) save_checkpoint(last_good, checkpoint_path);
            return res;
        }
        ++res.steps_run;

        if ((step + 1) % cfg.checkpoint_every == 0 || step + 1 == until) {
            last_good = make_checkpoint(model, opt, step + 1, cfg);
            if (!checkpoint_path.empty()) save_checkpoint(last_good, checkpoint_path);
        }
    }

    res.checkpoint = make_checkpoint(model, opt, step, cfg);
    if (!checkpoint_path.empty()) save_checkpoint(res.checkpoint, checkpoint_path);
    return res;
}

// One inference pass per chunk; hands (chunk offset, scores, deltas or
// nothing) to the sink. Decoding is optional so accuracy scans work on
// decoder-less models.
template <typename Sink>
void inference_scan(const Model& model, const Dataset& ds, int batch_size, int max_samples,
                    bool with_deltas, Sink&& sink) {
    if (ds.size() < 1) throw ContractError("inference: empty dataset");
    if (batch_size < 1) throw ContractError("inference: batch_size must be positive");
    int n = ds.size();
    if (max_samples > 0) n = std::min(n, max_samples);
    const Shape& s = ds.images.shape();
    int64_t block = static_cast<int64_t>(s[1]) * s[2] * s[3];

    for (int off = 0; off < n; off += batch_size) {
        int bsz = std::min(batch_size, n - off);
        Tensor raw({bsz, s[1], s[2], s[3]});
        std::memcpy(raw.data(), ds.images.data() + static_cast<int64_t>(off) * block,
                    static_cast<size_t>(bsz * block) * sizeof(double));

        Tape tape;
        BoundParams bp(tape, model.params, false);
        Var x = tape.input(std::move(raw));
        ModelForward fwd = model_forward(tape, x, bp, model, false, Rng::from_seed(0));
        const Tensor& scores = tape.value(fwd.scores);
        if (with_deltas) {
            Var emb = select_embedding(fwd.embeddings, scores, SelectMode::Predicted);
            Var delta = reconstruction_delta(decode(emb, bp, model.spec.decoder), x);
            sink(off, scores, &tape.value(delta));
        } else {
            sink(off, scores, static_cast<const Tensor*>(nullptr));
        }
    }
}

}  // namespace

Dataset load_split(const ExperimentConfig& cfg, bool train) {
    const std::string tag = train ? "train" : "test";
    Dataset ds;
    if (cfg.data_format == "synthetic") {
        uint64_t seed = Rng::from_seed(cfg.seed).split(train ? "train-data" : "test-data").key();
        int n = train ? cfg.synthetic_train : cfg.synthetic_test;
        ds = make_stroke_digits(n, cfg.image_side, cfg.classes, seed, tag);
    } else if (cfg.data_format == "idx") {
        ds = load_idx(train ? cfg.train_images : cfg.test_images,
                      train ? cfg.train_labels : cfg.test_labels);
    } else if (cfg.data_format == "cifar") {
        ds = load_cifar_binary(split_paths(train ? cfg.train_images : cfg.test_images));
    } else if (cfg.data_format == "capsdat") {
        ds = load_u8_container(train ? cfg.train_images : cfg.test_images);
    } else {
        throw ContractError("load_split: unknown data_format " + cfg.data_format);
    }
    ds.split = tag;
    const Shape& s = ds.images.shape();
    if (s[1] != cfg.image_side || s[2] != cfg.image_side || s[3] != cfg.image_channels)
        throw ContractError("load_split: dataset dims disagree with config");
    check_labels(ds, cfg.classes);
    ds.classes = cfg.classes;
    return ds;
}

Checkpoint make_checkpoint(const Model& model, const Adam& opt, int64_t step,
                           const ExperimentConfig& cfg) {
    Checkpoint c;
    c.model_kind = arch_name(model.spec.arch);
    c.config_echo = config_echo(cfg);
    c.step = step;
    Rng root = Rng::from_seed(cfg.seed);
    c.rng_key = root.key();
    c.rng_counter = root.counter();
    for (size_t i = 0; i < model.params.count(); ++i) {
        c.names.push_back(model.params.name(i));
        c.values.push_back(model.params.value(i));
        c.l2.push_back(model.params.l2(i));
    }
    if (opt.step_count() > 0) {
        c.adam_m = opt.moments_m();
        c.adam_v = opt.moments_v();
    }
    return c;
}

RestoredModel restore_checkpoint(const Checkpoint& ckpt, const ExperimentConfig& cfg) {
    RestoredModel r;
    r.model = build_model(model_spec_from(cfg), cfg.seed);
    if (ckpt.model_kind != arch_name(r.model.spec.arch))
        throw FormatError("checkpoint architecture '" + ckpt.model_kind +
                          "' does not match the config");
    if (ckpt.names.size() != r.model.params.count())
        throw FormatError("checkpoint parameter count does not match the config");
    for (size_t i = 0; i < ckpt.names.size(); ++i) {
        if (ckpt.names[i] != r.model.params.name(i))
            throw FormatError("checkpoint slot '" + ckpt.names[i] + "' does not match '" +
                              r.model.params.name(i) + "'");
        if (ckpt.values[i].shape() != r.model.params.value(i).shape())
            throw FormatError("checkpoint tensor shape mismatch at '" + ckpt.names[i] + "'");
        r.model.params.value(i) = ckpt.values[i];
    }
    r.opt = Adam(AdamConfig{.lr = cfg.lr});
    if (!ckpt.adam_m.empty()) r.opt.restore(ckpt.step, ckpt.adam_m, ckpt.adam_v);
    r.step = ckpt.step;
    return r;
}

TrainResult train_model(const ExperimentConfig& cfg, const Dataset& train,
                        const std::string& checkpoint_path, int64_t stop_after) {
    validate_config(cfg);
    Model model = build_model(model_spec_from(cfg), cfg.seed);
    Adam opt(AdamConfig{.lr = cfg.lr});
    return train_loop(cfg, train, model, opt, 0, checkpoint_path, stop_after);
}

TrainResult resume_training(const ExperimentConfig& cfg, const Dataset& train,
                            const Checkpoint& ckpt, const std::string& checkpoint_path,
                            int64_t stop_after) {
    validate_config(cfg);
    RestoredModel r = restore_checkpoint(ckpt, cfg);
    if (r.step > cfg.train_steps)
        throw ContractError("resume_training: checkpoint is past the configured steps");
    return train_loop(cfg, train, r.model, r.opt, r.step, checkpoint_path, stop_after);
}

double model_accuracy(const Model& model, const Dataset& ds, int batch_size) {
    int64_t correct = 0;
    int total = 0;
    inference_scan(model, ds, batch_size, 0, false,
                   [&](int off, const Tensor& scores, const Tensor*) {
                       std::vector<int> preds = predicted_classes(scores);
                       for (size_t j = 0; j < preds.size(); ++j) {
                           if (preds[j] == ds.labels[static_cast<size_t>(off) + j]) ++correct;
                           ++total;
                       }
                   });
    return static_cast<double>(correct) / total;
}

std::vector<double> clean_recon_deltas(const Model& model, const Dataset& ds, int batch_size,
                                       int max_samples) {
    if (model.spec.decoder.fc1 <= 0)
        throw ContractError("clean_recon_deltas: the model has no reconstruction network");
    std::vector<double> out;
    inference_scan(model, ds, batch_size, max_samples, true,
                   [&](int, const Tensor&, const Tensor* deltas) {
                       for (int64_t j = 0; j < deltas->size(); ++j)
                           out.push_back((*deltas)[j]);
                   });
    return out;
}

DetectorState calibrate_detector(const Model& model, const Dataset& test,
                                 const ExperimentConfig& cfg) {
    std::vector<double> deltas =
        clean_recon_deltas(model, test, cfg.eval_batch, cfg.calib_samples);
    return make_detector(deltas, cfg.calib_percentile);
}

void save_detector(const DetectorState& st, const std::string& path) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "alpha_crit = %.17g\npercentile = %.17g\nsamples = %d\n",
                  st.alpha_crit, st.percentile, st.calibration_count);
    std::ofstream out(path, std::ios::trunc);
    out << buf;
    if (!out) throw IoError("cannot write " + path);
}

DetectorState load_detector(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    DetectorState st;
    std::string key, eq;
    if (!(in >> key >> eq >> st.alpha_crit) || key != "alpha_crit" || eq != "=")
        throw FormatError("detector file: bad alpha_crit line");
    if (!(in >> key >> eq >> st.percentile) || key != "percentile" || eq != "=")
        throw FormatError("detector file: bad percentile line");
    if (!(in >> key >> eq >> st.calibration_count) || key != "samples" || eq != "=")
        throw FormatError("detector file: bad samples line");
    if (st.alpha_crit < 0.0 || st.percentile < 0.0 || st.percentile > 100.0)
        throw FormatError("detector file: values out of range");
    return st;
}

Tensor attack_pool_images(const Dataset& train, int pool) {
    if (train.size() < 1) throw ContractError("attack_pool_images: empty dataset");
    if (pool < 1) throw ContractError("attack_pool_images: pool must be positive");
    const Shape& s = train.images.shape();
    int take = std::min(pool, train.size());
    Tensor out({take, s[1], s[2], s[3]});
    std::memcpy(out.data(), train.images.data(),
                static_cast<size_t>(out.size()) * sizeof(double));
    return out;
}

PatchTrainResult run_attack(const Model& model, const Dataset& train,
                            const ExperimentConfig& cfg) {
    Tensor pool = attack_pool_images(train, cfg.attack_pool);
    return train_patch(model, pool, attack_config_from(cfg));
}

std::vector<SweepRow> run_lambda_sweep(const Model& model, const DetectorState& detector,
                                       const Dataset& train, const Dataset& test,
                                       const ExperimentConfig& cfg) {
    std::vector<double> grid =
        cfg.lambda_grid.empty() ? default_lambda_grid() : cfg.lambda_grid;
    Tensor pool = attack_pool_images(train, cfg.attack_pool);
    return lambda_grid_sweep(model, detector, pool, test.images, test.labels, grid,
                             attack_config_from(cfg), eval_config_from(cfg));
}

std::vector<EvalMetrics> run_scale_sweep(const Model& model, const DetectorState& detector,
                                         const Tensor& patch, const Dataset& test,
                                         const ExperimentConfig& cfg) {
    std::vector<double> scales =
        cfg.scale_grid.empty() ? std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5} : cfg.scale_grid;
    return scale_sweep(model, detector, patch, test.images, test.labels, scales,
                       attack_config_from(cfg), eval_config_from(cfg));
}

std::vector<ReportCell> cells_from_rows(const std::vector<SweepRow>& rows,
                                        const ExperimentConfig& cfg) {
    std::vector<ReportCell> cells;
    cells.reserve(rows.size());
    for (const SweepRow& r : rows) {
        ReportCell c;
        c.model = cfg.arch;
        c.dataset = cfg.dataset;
        c.metrics = r.metrics;
        c.seed = cfg.seed;
        c.patch = r.patch;
        cells.push_back(std::move(c));
    }
    return cells;
}

std::vector<ReportCell> cells_from_metrics(const std::vector<EvalMetrics>& metrics,
                                           const Tensor& patch, const ExperimentConfig& cfg) {
    std::vector<ReportCell> cells;
    cells.reserve(metrics.size());
    for (size_t i = 0; i < metrics.size(); ++i) {
        ReportCell c;
        c.model = cfg.arch;
        c.dataset = cfg.dataset;
        c.metrics = metrics[i];
        c.seed = cfg.seed;
        c.patch = i == 0 ? patch : Tensor::scalar(0.0);
        cells.push_back(std::move(c));
    }
    return cells;
}

}  // namespace capsdet
