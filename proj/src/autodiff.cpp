#include "objcustom/autodiff.hpp"

#include <cmath>
#include <numbers>

namespace objcustom::ad {

using kernels::Trans;

// ---- ParamStore ----------------------------------------------------------

Param& ParamStore::add(const std::string& name, Tensor init, bool trainable, bool decay) {
    if (contains(name)) throw ConfigError("duplicate parameter name: " + name);
    auto p = std::make_unique<Param>();
    p->name = name;
    p->grad = Tensor(init.rows, init.cols);
    p->value = std::move(init);
    p->trainable = trainable;
    p->decay = decay;
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
}

Param& ParamStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return *params_[it->second];
}

const Param& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return *params_[it->second];
}

std::vector<Param*> ParamStore::all() {
    std::vector<Param*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
}

std::vector<const Param*> ParamStore::all() const {
    std::vector<const Param*> out;
    for (const auto& p : params_) out.push_back(p.get());
    return out;
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0);
}

// ---- Graph ---------------------------------------------------------------

const Tensor& Var::value() const { return g->value(id); }

Var Graph::constant(Tensor v) {
    nodes_.push_back(Node{std::move(v), {}, {}, nullptr, false});
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(Param& p) {
    nodes_.push_back(Node{p.value, {}, {}, &p, p.trainable});
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::make(Tensor value, std::initializer_list<Var> parents, Backward bw) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || requires_grad(p.id);
    nodes_.push_back(Node{std::move(value), {}, rg ? std::move(bw) : Backward{}, nullptr, rg});
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::make(Tensor value, const std::vector<Var>& parents, Backward bw) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || requires_grad(p.id);
    nodes_.push_back(Node{std::move(value), {}, rg ? std::move(bw) : Backward{}, nullptr, rg});
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Graph::grad_buffer(int id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.rows, n.value.cols);
    return n.grad;
}

void Graph::backward(Var loss) {
    require_shape(loss.g == this, "backward: loss belongs to another graph");
    require_shape(value(loss.id).rows == 1 && value(loss.id).cols == 1, "backward: loss must be 1x1");
    if (!requires_grad(loss.id)) return;
    grad_buffer(loss.id).data[0] += 1.0;
    for (int i = loss.id; i >= 0; --i) {
        auto& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.backward) n.backward(*this, i);
        if (n.param != nullptr && n.param->trainable) {
            auto& pg = n.param->grad;
            for (std::size_t j = 0; j < pg.size(); ++j) pg.data[j] += n.grad.data[j];
        }
    }
}

// ---- ops -----------------------------------------------------------------

namespace {

void accumulate(Graph& g, int id, const Tensor& d) {
    if (!g.requires_grad(id)) return;
    auto& buf = g.grad_buffer(id);
    for (std::size_t i = 0; i < buf.size(); ++i) buf.data[i] += d.data[i];
}

void check_same(Var a, Var b, const char* op) {
    require_shape(a.g == b.g, std::string(op) + ": operands from different graphs");
    require_shape(a.value().same_shape(b.value()),
                  std::string(op) + ": shape mismatch " + a.value().shape_str() + " vs " + b.value().shape_str());
}

template <class F>
Var unary(Var a, F&& fwd_and_deriv) {
    const Tensor& x = a.value();
    Tensor y(x.rows, x.cols);
    for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = fwd_and_deriv(x.data[i]).first;
    const int ia = a.id;
    return a.g->make(std::move(y), {a}, [ia, fwd_and_deriv](Graph& g, int self) {
        if (!g.requires_grad(ia)) return;
        const Tensor& x = g.value(ia);
        const Tensor& dy = g.grad(self);
        auto& dx = g.grad_buffer(ia);
        for (std::size_t i = 0; i < x.size(); ++i) dx.data[i] += dy.data[i] * fwd_and_deriv(x.data[i]).second;
    });
}

}  // namespace

Var matmul(Var a, Var b) {
    require_shape(a.g == b.g, "matmul: operands from different graphs");
    Tensor c = kernels::matmul(a.value(), b.value());
    const int ia = a.id, ib = b.id;
    return a.g->make(std::move(c), {a, b}, [ia, ib](Graph& g, int self) {
        const Tensor& dc = g.grad(self);
        if (g.requires_grad(ia)) kernels::gemm(Trans::N, Trans::T, 1.0, dc, g.value(ib), 1.0, g.grad_buffer(ia));
        if (g.requires_grad(ib)) kernels::gemm(Trans::T, Trans::N, 1.0, g.value(ia), dc, 1.0, g.grad_buffer(ib));
    });
}

Var add(Var a, Var b) {
    check_same(a, b, "add");
    Tensor c = a.value();
    for (std::size_t i = 0; i < c.size(); ++i) c.data[i] += b.value().data[i];
    const int ia = a.id, ib = b.id;
    return a.g->make(std::move(c), {a, b}, [ia, ib](Graph& g, int self) {
        accumulate(g, ia, g.grad(self));
        accumulate(g, ib, g.grad(self));
    });
}

Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    Tensor c = a.value();
    for (std::size_t i = 0; i < c.size(); ++i) c.data[i] -= b.value().data[i];
    const int ia = a.id, ib = b.id;
    return a.g->make(std::move(c), {a, b}, [ia, ib](Graph& g, int self) {
        accumulate(g, ia, g.grad(self));
        if (g.requires_grad(ib)) {
            auto& db = g.grad_buffer(ib);
            const Tensor& dc = g.grad(self);
            for (std::size_t i = 0; i < db.size(); ++i) db.data[i] -= dc.data[i];
        }
    });
}

Var mul(Var a, Var b) {
    check_same(a, b, "mul");
    Tensor c = a.value();
    for (std::size_t i = 0; i < c.size(); ++i) c.data[i] *= b.value().data[i];
    const int ia = a.id, ib = b.id;
    return a.g->make(std::move(c), {a, b}, [ia, ib](Graph& g, int self) {
        const Tensor& dc = g.grad(self);
        if (g.requires_grad(ia)) {
            auto& da = g.grad_buffer(ia);
            const Tensor& vb = g.value(ib);
            for (std::size_t i = 0; i < da.size(); ++i) da.data[i] += dc.data[i] * vb.data[i];
        }
        if (g.requires_grad(ib)) {
            auto& db = g.grad_buffer(ib);
            const Tensor& va = g.value(ia);
            for (std::size_t i = 0; i < db.size(); ++i) db.data[i] += dc.data[i] * va.data[i];
        }
    });
}

Var scale(Var a, double s) {
    Tensor c = a.value();
    for (auto& v : c.data) v *= s;
    const int ia = a.id;
    return a.g->make(std::move(c), {a}, [ia, s](Graph& g, int self) {
        auto& da = g.grad_buffer(ia);
        const Tensor& dc = g.grad(self);
        for (std::size_t i = 0; i < da.size(); ++i) da.data[i] += s * dc.data[i];
    });
}

Var add_row(Var a, Var bias) {
    require_shape(bias.rows() == 1 && bias.cols() == a.cols(), "add_row: bias must be [1 x cols]");
    Tensor c = a.value();
    const Tensor& b = bias.value();
    for (int r = 0; r < c.rows; ++r)
        for (int j = 0; j < c.cols; ++j) c(r, j) += b.data[static_cast<std::size_t>(j)];
    const int ia = a.id, ib = bias.id;
    return a.g->make(std::move(c), {a, bias}, [ia, ib](Graph& g, int self) {
        const Tensor& dc = g.grad(self);
        accumulate(g, ia, dc);
        if (g.requires_grad(ib)) {
            auto& db = g.grad_buffer(ib);
            for (int r = 0; r < dc.rows; ++r)
                for (int j = 0; j < dc.cols; ++j) db.data[static_cast<std::size_t>(j)] += dc(r, j);
        }
    });
}

Var add_segments(Var a, Var b, int rows_per_segment) {
    require_shape(rows_per_segment > 0 && a.rows() == b.rows() * rows_per_segment && a.cols() == b.cols(),
                  "add_segments: " + a.value().shape_str() + " vs " + b.value().shape_str());
    Tensor c = a.value();
    const Tensor& bv = b.value();
    for (int r = 0; r < c.rows; ++r)
        for (int j = 0; j < c.cols; ++j) c(r, j) += bv(r / rows_per_segment, j);
    const int ia = a.id, ib = b.id;
    return a.g->make(std::move(c), {a, b}, [ia, ib, rows_per_segment](Graph& g, int self) {
        const Tensor& dc = g.grad(self);
        accumulate(g, ia, dc);
        if (g.requires_grad(ib)) {
            auto& db = g.grad_buffer(ib);
            for (int r = 0; r < dc.rows; ++r)
                for (int j = 0; j < dc.cols; ++j) db(r / rows_per_segment, j) += dc(r, j);
        }
    });
}

Var gelu(Var a) {
    return unary(a, [](double x) {
        const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
        return std::pair{x * cdf, cdf + x * pdf};
    });
}

Var silu(Var a) {
    return unary(a, [](double x) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return std::pair{x * s, s * (1.0 + x * (1.0 - s))};
    });
}

Var sigmoid(Var a) {
    return unary(a, [](double x) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return std::pair{s, s * (1.0 - s)};
    });
}

Var activate(Var a, Activation act) {
    switch (act) {
        case Activation::Gelu: return gelu(a);
        case Activation::Silu: return silu(a);
        case Activation::Identity: return a;
    }
    return a;
}

Var concat_cols(Var a, Var b) {
    require_shape(a.rows() == b.rows(), "concat_cols: row mismatch");
    const int ca = a.cols(), cb = b.cols();
    Tensor c(a.rows(), ca + cb);
    for (int r = 0; r < c.rows; ++r) {
        std::copy_n(a.value().row(r).data(), ca, c.row(r).data());
        std::copy_n(b.value().row(r).data(), cb, c.row(r).data() + ca);
    }
    const int ia = a.id, ib = b.id;
    return a.g->make(std::move(c), {a, b}, [ia, ib, ca, cb](Graph& g, int self) {
        const Tensor& dc = g.grad(self);
        if (g.requires_grad(ia)) {
            auto& da = g.grad_buffer(ia);
            for (int r = 0; r < dc.rows; ++r)
                for (int j = 0; j < ca; ++j) da(r, j) += dc(r, j);
        }
        if (g.requires_grad(ib)) {
            auto& db = g.grad_buffer(ib);
            for (int r = 0; r < dc.rows; ++r)
                for (int j = 0; j < cb; ++j) db(r, j) += dc(r, ca + j);
        }
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    require_shape(!parts.empty(), "concat_rows: no parts");
    std::vector<Tensor> values;
    std::vector<int> ids, starts;
    int acc = 0;
    for (const auto& p : parts) {
        values.push_back(p.value());
        ids.push_back(p.id);
        starts.push_back(acc);
        acc += p.rows();
    }
    Tensor c = objcustom::concat_rows(values);
    return parts.front().g->make(std::move(c), parts, [ids, starts](Graph& g, int self) {
        const Tensor& dc = g.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!g.requires_grad(ids[k])) continue;
            auto& d = g.grad_buffer(ids[k]);
            const std::size_t off = static_cast<std::size_t>(starts[k]) * dc.cols;
            for (std::size_t i = 0; i < d.size(); ++i) d.data[i] += dc.data[off + i];
        }
    });
}

Var slice_rows(Var a, int start, int count) {
    Tensor c = a.value().slice_rows(start, count);
    const int ia = a.id;
    return a.g->make(std::move(c), {a}, [ia, start](Graph& g, int self) {
        const Tensor& dc = g.grad(self);
        auto& da = g.grad_buffer(ia);
        const std::size_t off = static_cast<std::size_t>(start) * da.cols;
        for (std::size_t i = 0; i < dc.size(); ++i) da.data[off + i] += dc.data[i];
    });
}

Var gather_rows(Var a, std::vector<int> index) {
    const Tensor& x = a.value();
    Tensor c(static_cast<int>(index.size()), x.cols);
    for (std::size_t r = 0; r < index.size(); ++r) {
        require_shape(index[r] >= 0 && index[r] < x.rows, "gather_rows: index out of range");
        std::copy_n(x.row(index[r]).data(), x.cols, c.row(static_cast<int>(r)).data());
    }
    const int ia = a.id;
    return a.g->make(std::move(c), {a}, [ia, index = std::move(index)](Graph& g, int self) {
        const Tensor& dc = g.grad(self);
        auto& da = g.grad_buffer(ia);
        for (std::size_t r = 0; r < index.size(); ++r)
            for (int j = 0; j < dc.cols; ++j) da(index[r], j) += dc(static_cast<int>(r), j);
    });
}

Var segment_mean(Var a, std::vector<int> offsets) {
    require_shape(offsets.size() >= 2 && offsets.front() == 0 && offsets.back() == a.rows(),
                  "segment_mean: offsets do not cover input");
    const Tensor& x = a.value();
    const int segs = static_cast<int>(offsets.size()) - 1;
    Tensor c(segs, x.cols);
    for (int s = 0; s < segs; ++s) {
        const int n = offsets[s + 1] - offsets[s];
        require_shape(n > 0, "segment_mean: empty segment");
        for (int r = offsets[s]; r < offsets[s + 1]; ++r)
            for (int j = 0; j < x.cols; ++j) c(s, j) += x(r, j);
        for (int j = 0; j < x.cols; ++j) c(s, j) /= n;
    }
    const int ia = a.id;
    return a.g->make(std::move(c), {a}, [ia, offsets = std::move(offsets)](Graph& g, int self) {
        const Tensor& dc = g.grad(self);
        auto& da = g.grad_buffer(ia);
        for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
            const double inv = 1.0 / (offsets[s + 1] - offsets[s]);
            for (int r = offsets[s]; r < offsets[s + 1]; ++r)
                for (int j = 0; j < dc.cols; ++j) da(r, j) += dc(static_cast<int>(s), j) * inv;
        }
    });
}

Var im2col3x3(Var x, int n, int h, int w) {
    Tensor c = kernels::im2col3x3(x.value(), n, h, w);
    const int ix = x.id;
    return x.g->make(std::move(c), {x}, [ix, n, h, w](Graph& g, int self) {
        kernels::col2im3x3(g.grad(self), n, h, w, g.grad_buffer(ix));
    });
}

Var avgpool2(Var x, int n, int h, int w) {
    require_shape(h % 2 == 0 && w % 2 == 0 && x.rows() == n * h * w, "avgpool2: bad geometry");
    const int ho = h / 2, wo = w / 2, ch = x.cols();
    const Tensor& xv = x.value();
    Tensor c(n * ho * wo, ch);
    for (int b = 0; b < n; ++b)
        for (int y = 0; y < ho; ++y)
            for (int xx = 0; xx < wo; ++xx) {
                const int o = (b * ho + y) * wo + xx;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const int i = (b * h + 2 * y + dy) * w + 2 * xx + dx;
                        for (int k = 0; k < ch; ++k) c(o, k) += 0.25 * xv(i, k);
                    }
            }
    const int ix = x.id;
    return x.g->make(std::move(c), {x}, [ix, n, h, w](Graph& g, int self) {
        const Tensor& dc = g.grad(self);
        auto& dx = g.grad_buffer(ix);
        const int ho = h / 2, wo = w / 2;
        for (int b = 0; b < n; ++b)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    const int o = (b * ho + y / 2) * wo + xx / 2;
                    const int i = (b * h + y) * w + xx;
                    for (int k = 0; k < dx.cols; ++k) dx(i, k) += 0.25 * dc(o, k);
                }
    });
}

Var upsample2(Var x, int n, int h, int w) {
    require_shape(x.rows() == n * h * w, "upsample2: bad geometry");
    const int ho = 2 * h, wo = 2 * w, ch = x.cols();
    const Tensor& xv = x.value();
    Tensor c(n * ho * wo, ch);
    for (int b = 0; b < n; ++b)
        for (int y = 0; y < ho; ++y)
            for (int xx = 0; xx < wo; ++xx)
                std::copy_n(xv.row((b * h + y / 2) * w + xx / 2).data(), ch, c.row((b * ho + y) * wo + xx).data());
    const int ix = x.id;
    return x.g->make(std::move(c), {x}, [ix, n, h, w](Graph& g, int self) {
        const Tensor& dc = g.grad(self);
        auto& dx = g.grad_buffer(ix);
        const int ho = 2 * h, wo = 2 * w;
        for (int b = 0; b < n; ++b)
            for (int y = 0; y < ho; ++y)
                for (int xx = 0; xx < wo; ++xx) {
                    const int i = (b * h + y / 2) * w + xx / 2;
                    const int o = (b * ho + y) * wo + xx;
                    for (int k = 0; k < dx.cols; ++k) dx(i, k) += dc(o, k);
                }
    });
}

Var attention(Var q, Var k, Var v, kernels::AttentionLayout layout, double scale) {
    auto res = std::make_shared<kernels::AttentionResult>(kernels::attention(q.value(), k.value(), v.value(), layout, scale));
    Tensor out = res->out;
    const int iq = q.id, ik = k.id, iv = v.id;
    return q.g->make(std::move(out), {q, k, v},
                     [iq, ik, iv, res, layout = std::move(layout), scale](Graph& g, int self) {
                         auto grads = kernels::attention_backward(g.grad(self), g.value(iq), g.value(ik), g.value(iv),
                                                                  *res, layout, scale);
                         accumulate(g, iq, grads.dq);
                         accumulate(g, ik, grads.dk);
                         accumulate(g, iv, grads.dv);
                     });
}

Var mse(Var a, Var b) {
    check_same(a, b, "mse");
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x.data[i] - y.data[i];
        s += d * d;
    }
    const double n = static_cast<double>(x.size());
    const int ia = a.id, ib = b.id;
    return a.g->make(Tensor(1, 1, s / n), {a, b}, [ia, ib, n](Graph& g, int self) {
        const double go = g.grad(self).data[0] * 2.0 / n;
        const Tensor& x = g.value(ia);
        const Tensor& y = g.value(ib);
        if (g.requires_grad(ia)) {
            auto& da = g.grad_buffer(ia);
            for (std::size_t i = 0; i < x.size(); ++i) da.data[i] += go * (x.data[i] - y.data[i]);
        }
        if (g.requires_grad(ib)) {
            auto& db = g.grad_buffer(ib);
            for (std::size_t i = 0; i < x.size(); ++i) db.data[i] -= go * (x.data[i] - y.data[i]);
        }
    });
}

Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().data) s += v;
    const int ia = a.id;
    return a.g->make(Tensor(1, 1, s), {a}, [ia](Graph& g, int self) {
        const double go = g.grad(self).data[0];
        for (auto& d : g.grad_buffer(ia).data) d += go;
    });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var row_cosine(Var a, Var b, double eps) {
    check_same(a, b, "row_cosine");
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    Tensor c(x.rows, 1);
    for (int r = 0; r < x.rows; ++r) {
        double dot = 0.0, nx = 0.0, ny = 0.0;
        for (int j = 0; j < x.cols; ++j) {
            dot += x(r, j) * y(r, j);
            nx += x(r, j) * x(r, j);
            ny += y(r, j) * y(r, j);
        }
        nx = std::sqrt(nx);
        ny = std::sqrt(ny);
        c(r, 0) = (nx < eps || ny < eps) ? 0.0 : dot / (nx * ny);
    }
    const int ia = a.id, ib = b.id;
    return a.g->make(std::move(c), {a, b}, [ia, ib, eps](Graph& g, int self) {
        const Tensor& x = g.value(ia);
        const Tensor& y = g.value(ib);
        const Tensor& cv = g.value(self);
        const Tensor& dc = g.grad(self);
        for (int r = 0; r < x.rows; ++r) {
            double nx = 0.0, ny = 0.0;
            for (int j = 0; j < x.cols; ++j) {
                nx += x(r, j) * x(r, j);
                ny += y(r, j) * y(r, j);
            }
            nx = std::sqrt(nx);
            ny = std::sqrt(ny);
            if (nx < eps || ny < eps) continue;
            const double go = dc(r, 0), cosv = cv(r, 0);
            if (g.requires_grad(ia)) {
                auto& da = g.grad_buffer(ia);
                for (int j = 0; j < x.cols; ++j)
                    da(r, j) += go * (y(r, j) / (nx * ny) - cosv * x(r, j) / (nx * nx));
            }
            if (g.requires_grad(ib)) {
                auto& db = g.grad_buffer(ib);
                for (int j = 0; j < x.cols; ++j)
                    db(r, j) += go * (x(r, j) / (nx * ny) - cosv * y(r, j) / (ny * ny));
            }
        }
    });
}

}  // namespace objcustom::ad
