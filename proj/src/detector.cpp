#include "capsdet/detector.hpp"

#include <algorithm>
#include <cmath>

#include "capsdet/errors.hpp"
#include "capsdet/nn.hpp"

namespace capsdet {

namespace {

Tensor xavier_init(Rng& r, const Shape& s, int fan_in) {
    Tensor t(s);
    double sd = std::sqrt(1.0 / fan_in);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = r.normal(0.0, sd);
    return t;
}

}  // namespace

void add_decoder_params(ParamRegistry& reg, const DecoderSpec& spec, Rng rng, double l2) {
    if (spec.fc1 <= 0) return;  // fc1 == 0 means no reconstruction network
    Rng r = rng.split("decoder-init");
    int pix = static_cast<int>(spec.pixel_count());
    reg.add("dec.fc1.w", xavier_init(r, {16, spec.fc1}, 16), l2);
    reg.add("dec.fc1.b", Tensor::zeros({spec.fc1}), 0.0);
    reg.add("dec.fc2.w", xavier_init(r, {spec.fc1, spec.fc2}, spec.fc1), l2);
    reg.add("dec.fc2.b", Tensor::zeros({spec.fc2}), 0.0);
    reg.add("dec.out.w", xavier_init(r, {spec.fc2, pix}, spec.fc2), l2);
    reg.add("dec.out.b", Tensor::zeros({pix}), 0.0);
}

Var decode(Var embedding, const BoundParams& params, const DecoderSpec& spec) {
    const Shape& es = embedding.shape();
    if (es.size() != 2 || es[1] != 16) throw ShapeError("decode: embedding must be [N,16]");
    int n = es[0];
    Var h = tanh(dense(embedding, params["dec.fc1.w"], params["dec.fc1.b"]));
    h = tanh(dense(h, params["dec.fc2.w"], params["dec.fc2.b"]));
    Var out = sigmoid(dense(h, params["dec.out.w"], params["dec.out.b"]));
    return reshape(out, {n, spec.out_h, spec.out_w, spec.out_c});
}

Var reconstruction_delta(Var x_recon, Var x) {
    const Shape& s = x.shape();
    if (x_recon.shape() != s) throw ShapeError("reconstruction_delta: shape mismatch");
    if (s.size() != 4) throw ShapeError("reconstruction_delta: want [N,h,w,c]");
    int n = s[0];
    double area = static_cast<double>(s[1]) * s[2];
    Var d2 = square(sub(x_recon, x));
    Var flat = reshape(d2, {n, s[1] * s[2] * s[3]});
    return div(sqrt(sum(flat, -1)), x.tape->scalar(area));
}

Var reconstruction_loss(Var x_recon, Var x) {
    Var per = reconstruction_delta(x_recon, x);
    return sum(per) / static_cast<double>(x.shape()[0]);
}

double calibrate_threshold(std::vector<double> losses, double percentile) {
    if (losses.empty()) throw ContractError("calibrate_threshold: empty loss list");
    if (percentile < 0.0 || percentile > 100.0)
        throw DomainError("calibrate_threshold: percentile outside [0,100]");
    std::sort(losses.begin(), losses.end());
    size_t n = losses.size();
    if (n == 1) return losses[0];
    double rank = (static_cast<double>(n) - 1.0) * percentile / 100.0;
    size_t lo = static_cast<size_t>(rank);
    if (lo >= n - 1) return losses[n - 1];
    double frac = rank - static_cast<double>(lo);
    return losses[lo] + frac * (losses[lo + 1] - losses[lo]);
}

DetectorState make_detector(const std::vector<double>& clean_losses, double percentile) {
    DetectorState st;
    st.alpha_crit = calibrate_threshold(clean_losses, percentile);
    st.percentile = percentile;
    st.calibration_count = static_cast<int>(clean_losses.size());
    return st;
}

int detect(double delta_recon, double alpha_crit) {
    if (delta_recon < 0.0 || alpha_crit < 0.0)
        throw DomainError("detect: losses and thresholds are non-negative");
    return delta_recon > alpha_crit ? 1 : 0;
}

}  // namespace capsdet
