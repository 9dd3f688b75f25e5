#include "samlp/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace samlp {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

thread_local bool g_grad_enabled = true;

void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

std::vector<float>& grad_of(Node& n) {
    if (n.grad.empty()) n.grad.assign(n.data.size(), 0.0f);
    return n.grad;
}

void require_2d(const Tensor& t, const char* op) {
    require(t.rank() == 2, std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape()));
}

}  // namespace

std::int64_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? " x " : "") << shape[i];
    os << ']';
    return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor::Tensor() : Tensor(Shape{0}) {}

Tensor::Tensor(Shape shape, float fill) : node_(std::make_shared<Node>()) {
    node_->data.assign(static_cast<std::size_t>(numel(shape)), fill);
    node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<float> values) : node_(std::make_shared<Node>()) {
    require(static_cast<std::int64_t>(values.size()) == numel(shape),
            "Tensor: value count does not match shape " + shape_str(shape));
    node_->data = std::move(values);
    node_->shape = std::move(shape);
}

Tensor Tensor::from_node(std::shared_ptr<Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
}

std::int64_t Tensor::rows() const {
    require(rank() == 2, "rows(): tensor is not 2-D " + shape_str(shape()));
    return node_->shape[0];
}

std::int64_t Tensor::cols() const {
    require(rank() == 2, "cols(): tensor is not 2-D " + shape_str(shape()));
    return node_->shape[1];
}

float Tensor::item() const {
    require(node_->data.size() == 1, "item(): tensor has " + std::to_string(node_->data.size()) + " elements");
    return node_->data[0];
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->data); }

Tensor Tensor::clone() const {
    Tensor t(node_->shape, node_->data);
    t.set_requires_grad(node_->requires_grad);
    return t;
}

Tensor Tensor::reshape(Shape shape) const {
    require(numel(shape) == size(), "reshape: " + shape_str(this->shape()) + " -> " + shape_str(shape));
    return ops::gather(*this, [&] {
        std::vector<std::int64_t> idx(static_cast<std::size_t>(size()));
        std::iota(idx.begin(), idx.end(), 0);
        return idx;
    }(), std::move(shape));
}

void Tensor::backward() {
    require(size() == 1, "backward(): loss must be a single element");
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    grad_of(*node_)[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) {
            n->backward(*n);
            n->grad.clear();
            n->grad.shrink_to_fit();
        }
    }
}

Tensor make_result(Shape shape, std::vector<float> values, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any && g_grad_enabled) {
        node->requires_grad = true;
        for (const auto& p : parents) node->parents.push_back(p.node());
        node->backward = std::move(backward);
    }
    return Tensor::from_node(std::move(node));
}

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const auto n = a.rows(), k = a.cols(), m = b.cols();
    require(b.rows() == k, "matmul: " + shape_str(a.shape()) + " . " + shape_str(b.shape()));
    std::vector<float> out(static_cast<std::size_t>(n * m));
    MapMat(out.data(), n, m).noalias() = CMapMat(a.data().data(), n, k) * CMapMat(b.data().data(), k, m);
    return make_result({n, m}, std::move(out), {a, b}, [n, k, m](Node& self) {
        CMapMat g(self.grad.data(), n, m);
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad)
            MapMat(grad_of(pa).data(), n, k).noalias() += g * CMapMat(pb.data.data(), k, m).transpose();
        if (pb.requires_grad)
            MapMat(grad_of(pb).data(), k, m).noalias() += CMapMat(pa.data.data(), n, k).transpose() * g;
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul_nt");
    require_2d(b, "matmul_nt");
    const auto n = a.rows(), k = a.cols(), m = b.rows();
    require(b.cols() == k, "matmul_nt: " + shape_str(a.shape()) + " . " + shape_str(b.shape()) + "^T");
    std::vector<float> out(static_cast<std::size_t>(n * m));
    MapMat(out.data(), n, m).noalias() = CMapMat(a.data().data(), n, k) * CMapMat(b.data().data(), m, k).transpose();
    return make_result({n, m}, std::move(out), {a, b}, [n, k, m](Node& self) {
        CMapMat g(self.grad.data(), n, m);
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad)
            MapMat(grad_of(pa).data(), n, k).noalias() += g * CMapMat(pb.data.data(), m, k);
        if (pb.requires_grad)
            MapMat(grad_of(pb).data(), m, k).noalias() += g.transpose() * CMapMat(pa.data.data(), n, k);
    });
}

namespace {

template <typename Fwd, typename Bwd>
Tensor unary(const Tensor& a, Fwd fwd, Bwd dfdx) {
    std::vector<float> out(a.values().size());
    std::transform(a.values().begin(), a.values().end(), out.begin(), fwd);
    return make_result(a.shape(), std::move(out), {a}, [dfdx](Node& self) {
        Node& p = *self.parents[0];
        auto& g = grad_of(p);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(p.data[i], self.data[i]);
    });
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    require(a.shape() == b.shape(), std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same(a, b, "add");
    std::vector<float> out(a.values());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.values()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (auto& p : self.parents) {
            if (!p->requires_grad) continue;
            auto& g = grad_of(*p);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same(a, b, "sub");
    std::vector<float> out(a.values());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.values()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            Node& p = *self.parents[k];
            if (!p.requires_grad) continue;
            const float sign = k == 0 ? 1.0f : -1.0f;
            auto& g = grad_of(p);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same(a, b, "mul");
    std::vector<float> out(a.values());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.values()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = grad_of(pa);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
        }
        if (pb.requires_grad) {
            auto& g = grad_of(pb);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
        }
    });
}

Tensor scale(const Tensor& a, float s) {
    return unary(a, [s](float x) { return x * s; }, [s](float, float) { return s; });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
    require_2d(a, "add_row");
    const auto n = a.rows(), m = a.cols();
    require(row.size() == m, "add_row: row of " + std::to_string(row.size()) + " vs " + shape_str(a.shape()));
    std::vector<float> out(a.values());
    for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t c = 0; c < m; ++c) out[static_cast<std::size_t>(r * m + c)] += row.values()[static_cast<std::size_t>(c)];
    return make_result(a.shape(), std::move(out), {a, row}, [n, m](Node& self) {
        Node& pa = *self.parents[0];
        Node& pr = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = grad_of(pa);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pr.requires_grad) {
            auto& g = grad_of(pr);
            for (std::int64_t r = 0; r < n; ++r)
                for (std::int64_t c = 0; c < m; ++c) g[static_cast<std::size_t>(c)] += self.grad[static_cast<std::size_t>(r * m + c)];
        }
    });
}

Tensor broadcast_rows(const Tensor& row, std::int64_t n) {
    const auto m = row.size();
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n * m));
    for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t c = 0; c < m; ++c) idx[static_cast<std::size_t>(r * m + c)] = c;
    return gather(row, std::move(idx), {n, m});
}

Tensor relu(const Tensor& a) {
    return unary(a, [](float x) { return x > 0.0f ? x : 0.0f; }, [](float x, float) { return x > 0.0f ? 1.0f : 0.0f; });
}

Tensor gelu(const Tensor& a) {
    constexpr float inv_sqrt2 = 0.70710678118654752f;
    constexpr float inv_sqrt2pi = 0.39894228040143268f;
    return unary(
        a, [](float x) { return 0.5f * x * (1.0f + std::erf(x * inv_sqrt2)); },
        [](float x, float) { return 0.5f * (1.0f + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5f * x * x); });
}

Tensor sigmoid(const Tensor& a) {
    return unary(a, [](float x) { return 1.0f / (1.0f + std::exp(-x)); }, [](float, float y) { return y * (1.0f - y); });
}

Tensor softmax_rows(const Tensor& a) {
    require_2d(a, "softmax_rows");
    const auto n = a.rows(), m = a.cols();
    std::vector<float> out(a.values().size());
    for (std::int64_t r = 0; r < n; ++r) {
        const float* x = a.values().data() + r * m;
        float* y = out.data() + r * m;
        const float mx = *std::max_element(x, x + m);
        float s = 0.0f;
        for (std::int64_t c = 0; c < m; ++c) s += (y[c] = std::exp(x[c] - mx));
        for (std::int64_t c = 0; c < m; ++c) y[c] /= s;
    }
    return make_result(a.shape(), std::move(out), {a}, [n, m](Node& self) {
        auto& g = grad_of(*self.parents[0]);
        for (std::int64_t r = 0; r < n; ++r) {
            const float* y = self.data.data() + r * m;
            const float* gy = self.grad.data() + r * m;
            float dot = 0.0f;
            for (std::int64_t c = 0; c < m; ++c) dot += y[c] * gy[c];
            for (std::int64_t c = 0; c < m; ++c) g[static_cast<std::size_t>(r * m + c)] += y[c] * (gy[c] - dot);
        }
    });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
    require_2d(x, "layer_norm_rows");
    const auto n = x.rows(), m = x.cols();
    require(gamma.size() == m && beta.size() == m, "layer_norm_rows: affine size mismatch");
    std::vector<float> out(x.values().size());
    // xhat and 1/sigma are kept for the backward pass.
    auto xhat = std::make_shared<std::vector<float>>(x.values().size());
    auto inv_std = std::make_shared<std::vector<float>>(static_cast<std::size_t>(n));
    for (std::int64_t r = 0; r < n; ++r) {
        const float* xr = x.values().data() + r * m;
        double mu = 0.0;
        for (std::int64_t c = 0; c < m; ++c) mu += xr[c];
        mu /= static_cast<double>(m);
        double var = 0.0;
        for (std::int64_t c = 0; c < m; ++c) var += (xr[c] - mu) * (xr[c] - mu);
        var /= static_cast<double>(m);
        const float is = static_cast<float>(1.0 / std::sqrt(var + eps));
        (*inv_std)[static_cast<std::size_t>(r)] = is;
        for (std::int64_t c = 0; c < m; ++c) {
            const auto i = static_cast<std::size_t>(r * m + c);
            (*xhat)[i] = (xr[c] - static_cast<float>(mu)) * is;
            out[i] = (*xhat)[i] * gamma.values()[static_cast<std::size_t>(c)] + beta.values()[static_cast<std::size_t>(c)];
        }
    }
    return make_result(x.shape(), std::move(out), {x, gamma, beta}, [n, m, xhat, inv_std](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        if (pg.requires_grad || pb.requires_grad) {
            auto& gg = grad_of(pg);
            auto& gb = grad_of(pb);
            for (std::int64_t r = 0; r < n; ++r)
                for (std::int64_t c = 0; c < m; ++c) {
                    const auto i = static_cast<std::size_t>(r * m + c);
                    gg[static_cast<std::size_t>(c)] += self.grad[i] * (*xhat)[i];
                    gb[static_cast<std::size_t>(c)] += self.grad[i];
                }
        }
        if (px.requires_grad) {
            auto& gx = grad_of(px);
            std::vector<float> dxhat(static_cast<std::size_t>(m));
            for (std::int64_t r = 0; r < n; ++r) {
                float s1 = 0.0f, s2 = 0.0f;
                for (std::int64_t c = 0; c < m; ++c) {
                    const auto i = static_cast<std::size_t>(r * m + c);
                    dxhat[static_cast<std::size_t>(c)] = self.grad[i] * pg.data[static_cast<std::size_t>(c)];
                    s1 += dxhat[static_cast<std::size_t>(c)];
                    s2 += dxhat[static_cast<std::size_t>(c)] * (*xhat)[i];
                }
                const float is = (*inv_std)[static_cast<std::size_t>(r)];
                const float inv_m = 1.0f / static_cast<float>(m);
                for (std::int64_t c = 0; c < m; ++c) {
                    const auto i = static_cast<std::size_t>(r * m + c);
                    gx[i] += is * (dxhat[static_cast<std::size_t>(c)] - inv_m * s1 - (*xhat)[i] * inv_m * s2);
                }
            }
        }
    });
}

Tensor gather(const Tensor& a, std::vector<std::int64_t> index, Shape out_shape) {
    require(static_cast<std::int64_t>(index.size()) == numel(out_shape), "gather: index count vs output shape");
    std::vector<float> out(index.size());
    const auto n = a.size();
    for (std::size_t i = 0; i < index.size(); ++i) {
        require(index[i] >= 0 && index[i] < n, "gather: index out of range");
        out[i] = a.values()[static_cast<std::size_t>(index[i])];
    }
    auto idx = std::make_shared<std::vector<std::int64_t>>(std::move(index));
    return make_result(std::move(out_shape), std::move(out), {a}, [idx](Node& self) {
        auto& g = grad_of(*self.parents[0]);
        for (std::size_t i = 0; i < idx->size(); ++i) g[static_cast<std::size_t>((*idx)[i])] += self.grad[i];
    });
}

Tensor slice_rows(const Tensor& a, std::int64_t begin, std::int64_t end) {
    require_2d(a, "slice_rows");
    require(0 <= begin && begin <= end && end <= a.rows(), "slice_rows: bad range");
    const auto m = a.cols();
    std::vector<std::int64_t> idx(static_cast<std::size_t>((end - begin) * m));
    std::iota(idx.begin(), idx.end(), begin * m);
    return gather(a, std::move(idx), {end - begin, m});
}

Tensor slice_cols(const Tensor& a, std::int64_t begin, std::int64_t end) {
    require_2d(a, "slice_cols");
    require(0 <= begin && begin <= end && end <= a.cols(), "slice_cols: bad range");
    const auto n = a.rows(), m = a.cols(), w = end - begin;
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n * w));
    for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t c = 0; c < w; ++c) idx[static_cast<std::size_t>(r * w + c)] = r * m + begin + c;
    return gather(a, std::move(idx), {n, w});
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat_rows: no inputs");
    const auto m = parts.front().cols();
    std::int64_t n = 0;
    std::vector<float> out;
    for (const auto& p : parts) {
        require(p.cols() == m, "concat_rows: column mismatch");
        n += p.rows();
        out.insert(out.end(), p.values().begin(), p.values().end());
    }
    return make_result({n, m}, std::move(out), parts, [](Node& self) {
        std::size_t off = 0;
        for (auto& p : self.parents) {
            const auto len = p->data.size();
            if (p->requires_grad) {
                auto& g = grad_of(*p);
                for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[off + i];
            }
            off += len;
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    const auto n = parts.front().rows();
    std::int64_t m = 0;
    for (const auto& p : parts) {
        require(p.rows() == n, "concat_cols: row mismatch");
        m += p.cols();
    }
    std::vector<float> out(static_cast<std::size_t>(n * m));
    std::int64_t c0 = 0;
    for (const auto& p : parts) {
        const auto w = p.cols();
        for (std::int64_t r = 0; r < n; ++r)
            std::copy_n(p.values().data() + r * w, w, out.data() + r * m + c0);
        c0 += w;
    }
    return make_result({n, m}, std::move(out), parts, [n, m](Node& self) {
        std::int64_t c0 = 0;
        for (auto& p : self.parents) {
            const auto w = p->shape[1];
            if (p->requires_grad) {
                auto& g = grad_of(*p);
                for (std::int64_t r = 0; r < n; ++r)
                    for (std::int64_t c = 0; c < w; ++c)
                        g[static_cast<std::size_t>(r * w + c)] += self.grad[static_cast<std::size_t>(r * m + c0 + c)];
            }
            c0 += w;
        }
    });
}

Tensor transpose(const Tensor& a) {
    require_2d(a, "transpose");
    const auto n = a.rows(), m = a.cols();
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n * m));
    for (std::int64_t c = 0; c < m; ++c)
        for (std::int64_t r = 0; r < n; ++r) idx[static_cast<std::size_t>(c * n + r)] = r * m + c;
    return gather(a, std::move(idx), {m, n});
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (float v : a.values()) s += v;
    return make_result({1}, {static_cast<float>(s)}, {a}, [](Node& self) {
        auto& g = grad_of(*self.parents[0]);
        for (auto& v : g) v += self.grad[0];
    });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0f / static_cast<float>(a.size())); }

Tensor space_to_depth(const Tensor& a, std::int64_t h, std::int64_t w, std::int64_t k) {
    require_2d(a, "space_to_depth");
    require(a.rows() == h * w && h % k == 0 && w % k == 0, "space_to_depth: grid mismatch");
    const auto c = a.cols(), oh = h / k, ow = w / k, oc = k * k * c;
    std::vector<std::int64_t> idx(static_cast<std::size_t>(oh * ow * oc));
    for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j)
            for (std::int64_t di = 0; di < k; ++di)
                for (std::int64_t dj = 0; dj < k; ++dj)
                    for (std::int64_t ch = 0; ch < c; ++ch) {
                        const auto out = (i * ow + j) * oc + (di * k + dj) * c + ch;
                        idx[static_cast<std::size_t>(out)] = ((i * k + di) * w + (j * k + dj)) * c + ch;
                    }
    return gather(a, std::move(idx), {oh * ow, oc});
}

Tensor depth_to_space(const Tensor& a, std::int64_t h, std::int64_t w, std::int64_t k) {
    require_2d(a, "depth_to_space");
    require(a.rows() == h * w && a.cols() % (k * k) == 0, "depth_to_space: grid mismatch");
    const auto c = a.cols() / (k * k), oh = h * k, ow = w * k;
    std::vector<std::int64_t> idx(static_cast<std::size_t>(oh * ow * c));
    for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j)
            for (std::int64_t di = 0; di < k; ++di)
                for (std::int64_t dj = 0; dj < k; ++dj)
                    for (std::int64_t ch = 0; ch < c; ++ch) {
                        const auto out = ((i * k + di) * ow + (j * k + dj)) * c + ch;
                        idx[static_cast<std::size_t>(out)] = (i * w + j) * (k * k * c) + (di * k + dj) * c + ch;
                    }
    return gather(a, std::move(idx), {oh * ow, c});
}

}  // namespace ops
}  // namespace samlp
