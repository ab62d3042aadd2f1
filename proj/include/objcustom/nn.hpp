#pragma once

#include <random>
#include <string>

#include "objcustom/autodiff.hpp"

namespace objcustom::nn {

// y = x W + b with W stored [in x out].
class Linear {
public:
    Linear() = default;
    static Linear create(ad::ParamStore& store, const std::string& name, int in, int out, std::mt19937_64& rng,
                         bool bias = true, double gain = 1.0);
    // Binds to parameters that already exist in `store` (e.g. after loading a checkpoint).
    static Linear bind(ad::ParamStore& store, const std::string& name, bool bias = true);

    ad::Var operator()(ad::Var x) const;
    Tensor eval(const Tensor& x) const;

    int in() const { return weight_->value.rows; }
    int out() const { return weight_->value.cols; }
    ad::Param& weight() const { return *weight_; }
    ad::Param* bias() const { return bias_; }

private:
    ad::Param* weight_ = nullptr;
    ad::Param* bias_ = nullptr;
};

// Two-layer MLP: in -> hidden -> out with an activation in between.
class Mlp2 {
public:
    Mlp2() = default;
    static Mlp2 create(ad::ParamStore& store, const std::string& name, int in, int hidden, int out,
                       std::mt19937_64& rng, ad::Activation act = ad::Activation::Gelu);
    static Mlp2 bind(ad::ParamStore& store, const std::string& name, ad::Activation act = ad::Activation::Gelu);

    ad::Var operator()(ad::Var x) const;
    Tensor eval(const Tensor& x) const;

    int in() const { return fc1_.in(); }
    int out() const { return fc2_.out(); }
    const Linear& fc1() const { return fc1_; }
    const Linear& fc2() const { return fc2_; }
    ad::Activation activation() const { return act_; }
    void set_activation(ad::Activation a) { act_ = a; }

private:
    Linear fc1_, fc2_;
    ad::Activation act_ = ad::Activation::Gelu;
};

// 3x3 "same" convolution over [N*H*W x C] activations.
class Conv3x3 {
public:
    Conv3x3() = default;
    static Conv3x3 create(ad::ParamStore& store, const std::string& name, int in, int out, std::mt19937_64& rng,
                          double gain = 1.0);
    static Conv3x3 bind(ad::ParamStore& store, const std::string& name);
    ad::Var operator()(ad::Var x, int n, int h, int w) const;

private:
    Linear lin_;
};

}  // namespace objcustom::nn
