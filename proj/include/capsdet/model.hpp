#pragma once

#include <string>
#include <vector>

#include "capsdet/capsnet.hpp"
#include "capsdet/cnn.hpp"
#include "capsdet/detector.hpp"
#include "capsdet/params.hpp"

namespace capsdet {

enum class Arch { Cnn, CapsNet, CapsNetImproved };

std::string arch_name(Arch a);
Arch arch_from_name(const std::string& name);

struct ModelSpec {
    Arch arch = Arch::CapsNet;
    CapsNetSpec caps;
    CnnSpec cnn;
    DecoderSpec decoder;
    double recon_weight = 1.0;  // eta on Delta_recon in the training objective
    double l2_capsule = 0.0;
    double l2_conv_fc = 0.0;
};

// Classifier + decoder parameters in one registry. The improved arch is the
// baseline capsnet with exactly {MCD on, Affine voting} toggled.
struct Model {
    ModelSpec spec;
    ParamRegistry params;
};

Model build_model(ModelSpec spec, uint64_t seed);

struct ModelForward {
    Var scores;      // pre-activation class scores [N, E]
    Var embeddings;  // [N, E, 16]: capsule poses or CNN logistic embeddings
};

ModelForward model_forward(Tape& tape, Var images, const BoundParams& params, const Model& model,
                           bool training, Rng rng);

enum class SelectMode { GroundTruth, Predicted };

std::vector<int> predicted_classes(const Tensor& scores);

// Picks one row of [N,E,16] per sample through a one-hot product, so the
// gradient reaches only the selected class embedding. Ties at argmax go to
// the lowest class index.
Var select_embedding(Var embeddings, const Tensor& scores, SelectMode mode,
                     const std::vector<int>& labels = {});

}  // namespace capsdet
