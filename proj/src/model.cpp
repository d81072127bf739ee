#include "capsdet/model.hpp"

#include "capsdet/errors.hpp"

namespace capsdet {

std::string arch_name(Arch a) {
    switch (a) {
        case Arch::Cnn: return "cnn";
        case Arch::CapsNet: return "capsnet";
        case Arch::CapsNetImproved: return "capsnet-improved";
    }
    throw ContractError("arch_name: bad enum");
}

Arch arch_from_name(const std::string& name) {
    if (name == "cnn") return Arch::Cnn;
    if (name == "capsnet") return Arch::CapsNet;
    if (name == "capsnet-improved") return Arch::CapsNetImproved;
    throw DomainError("unknown architecture: " + name);
}

Model build_model(ModelSpec spec, uint64_t seed) {
    if (spec.arch == Arch::CapsNetImproved) {
        spec.caps.mcd_enabled = true;
        spec.caps.voting = Voting::Affine;
    } else if (spec.arch == Arch::CapsNet) {
        spec.caps.mcd_enabled = false;
        spec.caps.voting = Voting::Linear;
    }
    Rng rng = Rng::from_seed(seed);
    Model m;
    m.spec = spec;
    if (spec.arch == Arch::Cnn) {
        m.params = build_cnn_params(spec.cnn, rng.split("cnn"), spec.l2_conv_fc);
    } else {
        m.params = build_capsnet_params(spec.caps, rng.split("caps"), spec.l2_capsule,
                                        spec.l2_conv_fc);
    }
    add_decoder_params(m.params, spec.decoder, rng.split("dec"), spec.l2_conv_fc);
    return m;
}

ModelForward model_forward(Tape& tape, Var images, const BoundParams& params, const Model& model,
                           bool training, Rng rng) {
    ModelForward out;
    if (model.spec.arch == Arch::Cnn) {
        CnnForward f = cnn_forward(tape, images, params, model.spec.cnn);
        out.scores = f.logits;
        out.embeddings = f.embeddings;
    } else {
        CapsForward f = capsnet_forward(tape, images, params, model.spec.caps, training, rng);
        out.scores = f.scores;
        out.embeddings = f.poses;
    }
    return out;
}

std::vector<int> predicted_classes(const Tensor& scores) { return argmax_rows(scores); }

Var select_embedding(Var embeddings, const Tensor& scores, SelectMode mode,
                     const std::vector<int>& labels) {
    const Shape& es = embeddings.shape();
    if (es.size() != 3) throw ShapeError("select_embedding: want [N,E,16]");
    int n = es[0], e = es[1], m = es[2];
    std::vector<int> idx;
    if (mode == SelectMode::GroundTruth) {
        if (static_cast<int>(labels.size()) != n)
            throw ContractError("select_embedding: one label per sample required");
        for (int v : labels)
            if (v < 0 || v >= e) throw ContractError("select_embedding: label out of range");
        idx = labels;
    } else {
        if (scores.shape() != Shape{n, e})
            throw ShapeError("select_embedding: scores must be [N,E]");
        idx = argmax_rows(scores);
    }
    Tensor pick = Tensor::zeros({n, 1, e});
    for (int i = 0; i < n; ++i) pick.at({i, 0, idx[static_cast<size_t>(i)]}) = 1.0;
    Var sel = matmul(embeddings.tape->constant(std::move(pick)), embeddings);  // [N,1,16]
    return reshape(sel, {n, m});
}

}  // namespace capsdet
