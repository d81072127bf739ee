#pragma once

#include <string>
#include <vector>

#include "capsdet/tape.hpp"
#include "capsdet/tensor.hpp"

namespace capsdet {

// Named trainable tensors plus their per-tensor L2 coefficients. The slot
// order is the canonical order for optimizer state and checkpoints.
class ParamRegistry {
  public:
    int add(std::string name, Tensor init, double l2);
    int index_of(const std::string& name) const;  // -1 when absent
    bool has(const std::string& name) const { return index_of(name) >= 0; }

    size_t count() const { return values_.size(); }
    const std::string& name(size_t i) const { return names_[i]; }
    Tensor& value(size_t i) { return values_[i]; }
    const Tensor& value(size_t i) const { return values_[i]; }
    Tensor& value(const std::string& name);
    const Tensor& value(const std::string& name) const;
    double l2(size_t i) const { return l2_[i]; }
    const std::vector<double>& l2_all() const { return l2_; }

    std::vector<Tensor*> pointers();
    int64_t total_scalars() const;

  private:
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
    std::vector<double> l2_;
};

// One forward pass's view of the registry: every tensor placed on the tape
// with requires_grad set.
class BoundParams {
  public:
    BoundParams(Tape& tape, const ParamRegistry& reg, bool requires_grad = true);
    Var operator[](const std::string& name) const;
    Var at(size_t i) const { return vars_[i]; }
    size_t count() const { return vars_.size(); }

    // Gradients in registry slot order (zero tensors where unused).
    std::vector<Tensor> grads(Tape& tape) const;

  private:
    const ParamRegistry* reg_;
    std::vector<Var> vars_;
};

}  // namespace capsdet
