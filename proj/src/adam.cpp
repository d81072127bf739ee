#include "capsdet/adam.hpp"

#include <cmath>

#include "capsdet/errors.hpp"

namespace capsdet {

void Adam::step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                const std::vector<double>& decay) {
    if (params.size() != grads.size()) throw ContractError("adam: params/grads count mismatch");
    if (!decay.empty() && decay.size() != params.size())
        throw ContractError("adam: decay count mismatch");
    if (m_.empty()) {
        for (const Tensor* p : params) {
            m_.push_back(Tensor::zeros(p->shape()));
            v_.push_back(Tensor::zeros(p->shape()));
        }
    }
    if (m_.size() != params.size()) throw ContractError("adam: slot layout changed");
    for (size_t i = 0; i < params.size(); ++i) {
        if (grads[i].shape() != params[i]->shape())
            throw ShapeError("adam: grad shape mismatch at slot " + std::to_string(i));
        if (!grads[i].all_finite())
            throw NumericError("adam: non-finite gradient at slot " + std::to_string(i) +
                               ", step aborted");
    }

    int64_t t = step_ + 1;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        double lambda = decay.empty() ? 0.0 : decay[i];
        double* pd = p.data();
        double* md = m_[i].data();
        double* vd = v_[i].data();
        const double* gd = grads[i].data();
        int64_t n = p.size();
        for (int64_t k = 0; k < n; ++k) {
            double g = gd[k] + lambda * pd[k];
            md[k] = cfg_.beta1 * md[k] + (1.0 - cfg_.beta1) * g;
            vd[k] = cfg_.beta2 * vd[k] + (1.0 - cfg_.beta2) * g * g;
            double mh = md[k] / bc1;
            double vh = vd[k] / bc2;
            pd[k] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
        }
        if (!p.all_finite()) throw NumericError("adam: parameters went non-finite");
    }
    step_ = t;
}

void Adam::restore(int64_t step, std::vector<Tensor> m, std::vector<Tensor> v) {
    if (m.size() != v.size()) throw ContractError("adam: restore moment count mismatch");
    step_ = step;
    m_ = std::move(m);
    v_ = std::move(v);
}

}  // namespace capsdet
