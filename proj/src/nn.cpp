#include "objcustom/nn.hpp"

#include <cmath>

namespace objcustom::nn {

Linear Linear::create(ad::ParamStore& store, const std::string& name, int in, int out, std::mt19937_64& rng,
                      bool bias, double gain) {
    Linear l;
    l.weight_ = &store.add(name + ".w", gain == 0.0 ? Tensor(in, out)
                                                    : randn(in, out, rng, gain / std::sqrt(static_cast<double>(in))));
    if (bias) l.bias_ = &store.add(name + ".b", Tensor(1, out), true, false);
    return l;
}

Linear Linear::bind(ad::ParamStore& store, const std::string& name, bool bias) {
    Linear l;
    l.weight_ = &store.get(name + ".w");
    if (bias) l.bias_ = &store.get(name + ".b");
    return l;
}

ad::Var Linear::operator()(ad::Var x) const {
    require_shape(x.cols() == in(), "linear " + weight_->name + ": input width " + std::to_string(x.cols()) +
                                        " != " + std::to_string(in()));
    ad::Graph& g = *x.g;
    ad::Var y = ad::matmul(x, g.param(*weight_));
    if (bias_ != nullptr) y = ad::add_row(y, g.param(*bias_));
    return y;
}

Tensor Linear::eval(const Tensor& x) const {
    require_shape(x.cols == in(), "linear " + weight_->name + ": input width mismatch");
    Tensor y = kernels::matmul(x, weight_->value);
    if (bias_ != nullptr)
        for (int r = 0; r < y.rows; ++r)
            for (int j = 0; j < y.cols; ++j) y(r, j) += bias_->value.data[static_cast<std::size_t>(j)];
    return y;
}

Mlp2 Mlp2::create(ad::ParamStore& store, const std::string& name, int in, int hidden, int out, std::mt19937_64& rng,
                  ad::Activation act) {
    Mlp2 m;
    m.fc1_ = Linear::create(store, name + ".fc1", in, hidden, rng);
    m.fc2_ = Linear::create(store, name + ".fc2", hidden, out, rng);
    m.act_ = act;
    return m;
}

Mlp2 Mlp2::bind(ad::ParamStore& store, const std::string& name, ad::Activation act) {
    Mlp2 m;
    m.fc1_ = Linear::bind(store, name + ".fc1");
    m.fc2_ = Linear::bind(store, name + ".fc2");
    m.act_ = act;
    return m;
}

ad::Var Mlp2::operator()(ad::Var x) const { return fc2_(ad::activate(fc1_(x), act_)); }

Tensor Mlp2::eval(const Tensor& x) const {
    ad::Graph g;
    return (*this)(g.constant(x)).value();
}

Conv3x3 Conv3x3::create(ad::ParamStore& store, const std::string& name, int in, int out, std::mt19937_64& rng,
                        double gain) {
    Conv3x3 c;
    c.lin_ = Linear::create(store, name, 9 * in, out, rng, true, gain);
    return c;
}

Conv3x3 Conv3x3::bind(ad::ParamStore& store, const std::string& name) {
    Conv3x3 c;
    c.lin_ = Linear::bind(store, name);
    return c;
}

ad::Var Conv3x3::operator()(ad::Var x, int n, int h, int w) const { return lin_(ad::im2col3x3(x, n, h, w)); }

}  // namespace objcustom::nn
