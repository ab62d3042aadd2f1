#pragma once

// Tape-based reverse-mode differentiation over 2-D tensors. A Graph lives for
// one forward/backward pass; parameters live in a ParamStore and receive
// accumulated gradients when Graph::backward runs.

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "objcustom/kernels.hpp"
#include "objcustom/tensor.hpp"

namespace objcustom::ad {

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;
    bool decay = true;
};

class ParamStore {
public:
    Param& add(const std::string& name, Tensor init, bool trainable = true, bool decay = true);
    Param& get(const std::string& name);
    const Param& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<Param*> all();
    std::vector<const Param*> all() const;
    std::size_t size() const { return params_.size(); }
    std::size_t scalar_count() const;
    void zero_grad();

private:
    std::vector<std::unique_ptr<Param>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

class Graph;

struct Var {
    Graph* g = nullptr;
    int id = -1;

    const Tensor& value() const;
    int rows() const { return value().rows; }
    int cols() const { return value().cols; }
    bool valid() const { return g != nullptr; }
};

class Graph {
public:
    using Backward = std::function<void(Graph&, int self)>;

    Graph() { nodes_.reserve(256); }

    Var constant(Tensor v);
    Var param(Param& p);
    Var make(Tensor value, std::initializer_list<Var> parents, Backward bw);
    Var make(Tensor value, const std::vector<Var>& parents, Backward bw);

    const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    const Tensor& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
    // Zero-initialized gradient buffer for `id`, allocated on first use.
    Tensor& grad_buffer(int id);

    // Runs reverse accumulation from a 1x1 loss and adds leaf gradients into
    // the trainable Params they were created from.
    void backward(Var loss);
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        Backward backward;
        Param* param = nullptr;
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;
};

enum class Activation { Gelu, Silu, Identity };

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_row(Var a, Var bias);                           // bias [1 x C] on every row
Var add_segments(Var a, Var b, int rows_per_segment);   // row s of b on segment s of a
Var activate(Var a, Activation act);
Var gelu(Var a);
Var silu(Var a);
Var sigmoid(Var a);
Var concat_cols(Var a, Var b);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var a, int start, int count);
Var gather_rows(Var a, std::vector<int> index);
Var segment_mean(Var a, std::vector<int> offsets);      // [segments x C]
Var im2col3x3(Var x, int n, int h, int w);
Var avgpool2(Var x, int n, int h, int w);
Var upsample2(Var x, int n, int h, int w);
Var attention(Var q, Var k, Var v, kernels::AttentionLayout layout, double scale);
Var mse(Var a, Var b);                                  // mean of squared differences, 1x1
Var sum(Var a);
Var mean(Var a);
// Row-wise cosine similarity, [R x 1]. Rows with norm below `eps` yield 0 with zero gradient.
Var row_cosine(Var a, Var b, double eps = 1e-12);

}  // namespace objcustom::ad
