#include "capsdet/params.hpp"

#include "capsdet/errors.hpp"

namespace capsdet {

int ParamRegistry::add(std::string name, Tensor init, double l2) {
    if (index_of(name) >= 0) throw ContractError("param registered twice: " + name);
    names_.push_back(std::move(name));
    values_.push_back(std::move(init));
    l2_.push_back(l2);
    return static_cast<int>(values_.size() - 1);
}

int ParamRegistry::index_of(const std::string& name) const {
    for (size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return static_cast<int>(i);
    return -1;
}

Tensor& ParamRegistry::value(const std::string& name) {
    int i = index_of(name);
    if (i < 0) throw ContractError("unknown param: " + name);
    return values_[static_cast<size_t>(i)];
}

const Tensor& ParamRegistry::value(const std::string& name) const {
    int i = index_of(name);
    if (i < 0) throw ContractError("unknown param: " + name);
    return values_[static_cast<size_t>(i)];
}

std::vector<Tensor*> ParamRegistry::pointers() {
    std::vector<Tensor*> out;
    out.reserve(values_.size());
    for (Tensor& t : values_) out.push_back(&t);
    return out;
}

int64_t ParamRegistry::total_scalars() const {
    int64_t n = 0;
    for (const Tensor& t : values_) n += t.size();
    return n;
}

BoundParams::BoundParams(Tape& tape, const ParamRegistry& reg, bool requires_grad) : reg_(&reg) {
    vars_.reserve(reg.count());
    for (size_t i = 0; i < reg.count(); ++i) vars_.push_back(tape.input(reg.value(i), requires_grad));
}

Var BoundParams::operator[](const std::string& name) const {
    int i = reg_->index_of(name);
    if (i < 0) throw ContractError("unknown param: " + name);
    return vars_[static_cast<size_t>(i)];
}

std::vector<Tensor> BoundParams::grads(Tape& tape) const {
    std::vector<Tensor> out;
    out.reserve(vars_.size());
    for (Var v : vars_) out.push_back(tape.grad(v));
    return out;
}

}  // namespace capsdet
