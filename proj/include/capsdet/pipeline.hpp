#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "capsdet/adam.hpp"
#include "capsdet/checkpoint.hpp"
#include "capsdet/config.hpp"
#include "capsdet/data.hpp"
#include "capsdet/eval.hpp"

namespace capsdet {

// Train or test split named by the config: synthetic corpora are generated
// on the fly from the config seed, file-backed formats load from the
// configured paths (cifar accepts comma-separated batch lists).
Dataset load_split(const ExperimentConfig& cfg, bool train);

Checkpoint make_checkpoint(const Model& model, const Adam& opt, int64_t step,
                           const ExperimentConfig& cfg);

struct RestoredModel {
    Model model;
    Adam opt{AdamConfig{}};
    int64_t step = 0;
};

// Rebuilds model and optimizer from a checkpoint. The config must describe
// the same architecture and parameter layout the checkpoint was saved from.
RestoredModel restore_checkpoint(const Checkpoint& ckpt, const ExperimentConfig& cfg);

struct TrainLogEntry {
    int64_t step = 0;      // 1-based, the step this entry describes
    double loss = 0.0;     // joint objective
    double class_loss = 0.0;
    double recon_delta = 0.0;  // mean ground-truth-class delta, 0 when off
};

struct TrainResult {
    Checkpoint checkpoint;  // final state, or last good one on divergence
    std::vector<TrainLogEntry> log;
    bool diverged = false;
    bool budget_hit = false;
    int64_t steps_run = 0;  // steps executed in this call
};

// Joint objective: spread loss (capsnets, margin and temperature annealed
// over the configured total steps) or cross-entropy (cnn), plus recon_weight
// times the mean ground-truth-class reconstruction delta. Per-slot L2 decay
// goes through the optimizer. Batch k reads the dataset sequentially with
// wraparound and seeds its randomness from (config seed, k), so a resumed
// run retraces the uninterrupted trajectory exactly. Non-finite losses stop
// training and surface the last good checkpoint with diverged set.
// stop_after > 0 pauses cleanly once that absolute step is reached; the
// schedule still spans cfg.train_steps, so resuming continues the same run.
TrainResult train_model(const ExperimentConfig& cfg, const Dataset& train,
                        const std::string& checkpoint_path = "", int64_t stop_after = 0);

// Continues a run from a checkpoint up to cfg.train_steps total steps.
TrainResult resume_training(const ExperimentConfig& cfg, const Dataset& train,
                            const Checkpoint& ckpt, const std::string& checkpoint_path = "",
                            int64_t stop_after = 0);

double model_accuracy(const Model& model, const Dataset& ds, int batch_size);

// Clean-image reconstruction deltas with predicted-class embeddings,
// inference mode. max_samples 0 uses the whole set.
std::vector<double> clean_recon_deltas(const Model& model, const Dataset& ds, int batch_size,
                                       int max_samples = 0);

DetectorState calibrate_detector(const Model& model, const Dataset& test,
                                 const ExperimentConfig& cfg);

void save_detector(const DetectorState& st, const std::string& path);
DetectorState load_detector(const std::string& path);

// First min(pool, n) training images, the EOT sampling pool for attacks.
Tensor attack_pool_images(const Dataset& train, int pool);

PatchTrainResult run_attack(const Model& model, const Dataset& train,
                            const ExperimentConfig& cfg);

std::vector<SweepRow> run_lambda_sweep(const Model& model, const DetectorState& detector,
                                       const Dataset& train, const Dataset& test,
                                       const ExperimentConfig& cfg);

std::vector<EvalMetrics> run_scale_sweep(const Model& model, const DetectorState& detector,
                                         const Tensor& patch, const Dataset& test,
                                         const ExperimentConfig& cfg);

// Report cells for emit_report, one per sweep row, tagged with the config's
// architecture and dataset names.
std::vector<ReportCell> cells_from_rows(const std::vector<SweepRow>& rows,
                                        const ExperimentConfig& cfg);
std::vector<ReportCell> cells_from_metrics(const std::vector<EvalMetrics>& metrics,
                                           const Tensor& patch, const ExperimentConfig& cfg);

}  // namespace capsdet
