#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "capsdet/detector.hpp"
#include "capsdet/model.hpp"
#include "capsdet/patch.hpp"
#include "capsdet/tensor.hpp"

namespace capsdet {

struct EvalMetrics {
    double adr = 0.0;  // fraction of adversarial trials detected
    double afr = 0.0;  // fraction classified as c_adv
    double asr = 0.0;  // fooled AND undetected
    int n_evaluated = 0;
    double lambda_a = 0.0;  // config echo
    double scale = 0.0;
};

struct EvalConfig {
    double area_fraction = 0.40;
    int repeats = 1;      // transform draws per image
    int batch_size = 32;  // forward-pass chunking only; no effect on results
    uint64_t seed = 0;
};

// Applies the rendered patch to every image whose label differs from
// attack.c_adv (one random transform per image per repeat, pinned to
// cfg.area_fraction), classifies, decodes the predicted-class embedding and
// runs the detector. Counts are reduced in trial order; the same seed gives
// bit-identical metrics. ASR <= min(AFR, 1-ADR) holds per construction and is
// asserted.
EvalMetrics evaluate_patch(const Model& model, const DetectorState& detector, const Tensor& patch,
                           const Tensor& images, const std::vector<int>& labels,
                           const AttackConfig& attack, const EvalConfig& cfg);

// The paper's search grid for the Lagrangian multiplier.
std::vector<double> default_lambda_grid();

struct SweepRow {
    double lambda_a = 0.0;
    Tensor patch;  // rendered pixels after training
    EvalMetrics metrics;
    bool best_adaptive = false;  // max ASR among lambda_a > 0 rows
};

// Trains one patch per grid entry (lambda_a = 0 is the naive attack) on
// train_images and evaluates each at cfg.area_fraction on the eval set. The
// grid must contain 0.
std::vector<SweepRow> lambda_grid_sweep(const Model& model, const DetectorState& detector,
                                        const Tensor& train_images, const Tensor& eval_images,
                                        const std::vector<int>& eval_labels,
                                        const std::vector<double>& grid,
                                        const AttackConfig& attack, const EvalConfig& cfg);

// Single-set convenience: patches train and evaluate on the same images.
std::vector<SweepRow> lambda_grid_sweep(const Model& model, const DetectorState& detector,
                                        const Tensor& images, const std::vector<int>& labels,
                                        const std::vector<double>& grid,
                                        const AttackConfig& attack, const EvalConfig& cfg);

// Re-evaluates a fixed patch across render scales (fractions of image area).
std::vector<EvalMetrics> scale_sweep(const Model& model, const DetectorState& detector,
                                     const Tensor& patch, const Tensor& images,
                                     const std::vector<int>& labels,
                                     const std::vector<double>& scales,
                                     const AttackConfig& attack, const EvalConfig& cfg);

struct ReportCell {
    std::string model;
    std::string dataset;
    EvalMetrics metrics;
    uint64_t seed = 0;
    Tensor patch;  // rendered pixels; size 1 means "no raster for this cell"
};

// Writes metrics.csv (schema: model,dataset,lambda_a,scale,adr,afr,asr,n,seed),
// sweep.svg line plots grouped by model/dataset, and one PNG per cell that
// carries a patch raster. Identical cells produce byte-identical files.
void emit_report(const std::vector<ReportCell>& cells, const std::string& out_dir);

// Minimal 8-bit PNG writer for [h,w,1] or [h,w,3] tensors in [0,1].
void write_png(const Tensor& image, const std::string& path);

}  // namespace capsdet
