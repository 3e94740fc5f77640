#include "nstagger/tensor.hpp"

#include "nstagger/errors.hpp"
#include "nstagger/field.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

namespace nstagger {

std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t k = 0; k < s.size(); ++k) {
        if (k) out += ",";
        out += std::to_string(s[k]);
    }
    return out + "]";
}

namespace detail {
std::vector<double>& Node::input_grad(std::size_t k) {
    auto& g = inputs[k]->grad;
    if (g.size() != inputs[k]->value.size()) g.assign(inputs[k]->value.size(), 0.0);
    return g;
}
} // namespace detail

using detail::Node;

namespace {

std::shared_ptr<Node> leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    if (numel(shape) != values.size()) {
        throw ShapeError("tensor of shape " + shape_str(shape) + " given " +
                         std::to_string(values.size()) + " values");
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return n;
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

bool wants(const Node& n, std::size_t k) { return n.inputs[k]->requires_grad; }

// Splits a tensor into (outer, H, W) over its last two axes.
struct Planes {
    std::size_t outer, h, w;
};

Planes planes_of(const Shape& s, const char* op) {
    if (s.size() < 2) throw ShapeError(std::string(op) + " needs rank >= 2, got " + shape_str(s));
    Planes p{1, s[s.size() - 2], s[s.size() - 1]};
    for (std::size_t k = 0; k + 2 < s.size(); ++k) p.outer *= s[k];
    return p;
}

std::size_t pad_source(long idx, std::size_t n, PadMode mode, bool& inside) {
    const long ln = static_cast<long>(n);
    inside = true;
    switch (mode) {
    case PadMode::zero:
        if (idx < 0 || idx >= ln) {
            inside = false;
            return 0;
        }
        return static_cast<std::size_t>(idx);
    case PadMode::periodic:
        return static_cast<std::size_t>(((idx % ln) + ln) % ln);
    case PadMode::reflect:
        if (idx < 0) idx = -idx;
        if (idx >= ln) idx = 2 * (ln - 1) - idx;
        return static_cast<std::size_t>(idx);
    }
    return 0;
}

constexpr double kGeluC = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

// Valid correlation of a padded [Ci,Hp,Wp] input with a [Co,Ci,k,k] kernel.
Tensor valid_conv(const Tensor& padded, const Tensor& kernel, std::size_t out_h,
                  std::size_t out_w) {
    const auto& ks = kernel.shape();
    const std::size_t co_n = ks[0], ci_n = ks[1], k = ks[2];
    const std::size_t hp = padded.shape()[1], wp = padded.shape()[2];
    std::vector<double> out(co_n * out_h * out_w, 0.0);
    const double* in = padded.data().data();
    const double* w = kernel.data().data();
    for (std::size_t co = 0; co < co_n; ++co) {
        double* dst_plane = out.data() + co * out_h * out_w;
        for (std::size_t ci = 0; ci < ci_n; ++ci) {
            const double* src_plane = in + ci * hp * wp;
            for (std::size_t ky = 0; ky < k; ++ky) {
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const double wv = w[((co * ci_n + ci) * k + ky) * k + kx];
                    for (std::size_t y = 0; y < out_h; ++y) {
                        const double* src = src_plane + (y + ky) * wp + kx;
                        double* dst = dst_plane + y * out_w;
                        for (std::size_t x = 0; x < out_w; ++x) dst[x] += wv * src[x];
                    }
                }
            }
        }
    }
    return make_result(
        "conv2d", Shape{co_n, out_h, out_w}, std::move(out), {padded, kernel},
        [=](Node& n) {
            const auto& g = n.grad;
            const double* in_v = n.inputs[0]->value.data();
            const double* w_v = n.inputs[1]->value.data();
            if (wants(n, 0)) {
                double* gi = n.input_grad(0).data();
                for (std::size_t co = 0; co < co_n; ++co) {
                    const double* gplane = g.data() + co * out_h * out_w;
                    for (std::size_t ci = 0; ci < ci_n; ++ci) {
                        double* giplane = gi + ci * hp * wp;
                        for (std::size_t ky = 0; ky < k; ++ky) {
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const double wv = w_v[((co * ci_n + ci) * k + ky) * k + kx];
                                for (std::size_t y = 0; y < out_h; ++y) {
                                    double* dst = giplane + (y + ky) * wp + kx;
                                    const double* src = gplane + y * out_w;
                                    for (std::size_t x = 0; x < out_w; ++x) dst[x] += wv * src[x];
                                }
                            }
                        }
                    }
                }
            }
            if (wants(n, 1)) {
                double* gw = n.input_grad(1).data();
                for (std::size_t co = 0; co < co_n; ++co) {
                    const double* gplane = g.data() + co * out_h * out_w;
                    for (std::size_t ci = 0; ci < ci_n; ++ci) {
                        const double* src_plane = in_v + ci * hp * wp;
                        for (std::size_t ky = 0; ky < k; ++ky) {
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                double acc = 0.0;
                                for (std::size_t y = 0; y < out_h; ++y) {
                                    const double* src = src_plane + (y + ky) * wp + kx;
                                    const double* gg = gplane + y * out_w;
                                    for (std::size_t x = 0; x < out_w; ++x) acc += src[x] * gg[x];
                                }
                                gw[((co * ci_n + ci) * k + ky) * k + kx] += acc;
                            }
                        }
                    }
                }
            }
        });
}

} // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const auto n = numel(shape);
    return Tensor(leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = numel(shape);
    return Tensor(leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    return Tensor(leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return Tensor(leaf(Shape{}, std::vector<double>{v}, requires_grad));
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }
std::span<const double> Tensor::data() const { return node_->value; }

double Tensor::item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return !node_->backward_fn; }

std::span<const double> Tensor::grad() const {
    if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), 0.0);
    return node_->grad;
}

Tensor Tensor::detach(bool requires_grad) const {
    return Tensor(leaf(node_->shape, node_->value, requires_grad));
}

Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs, std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->shape = std::move(shape);
    n->value = std::move(value);
    for (const auto& in : inputs) n->requires_grad = n->requires_grad || in.requires_grad();
    if (n->requires_grad) {
        n->inputs.reserve(inputs.size());
        for (auto& in : inputs) n->inputs.push_back(in.node_);
        n->backward_fn = std::move(fn);
    }
    return Tensor(std::move(n));
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ContractError("backward needs a scalar loss, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("<none>")));
    }
    // Iterative post-order DFS gives a topological order of the reachable graph.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
    seen.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* n : order) n->grad.assign(n->value.size(), 0.0);
    loss.node()->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same(a, b, "add");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
    return make_result("add", a.shape(), std::move(v), {a, b}, [](Node& n) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (!wants(n, k)) continue;
            auto& g = n.input_grad(k);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same(a, b, "sub");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
    return make_result("sub", a.shape(), std::move(v), {a, b}, [](Node& n) {
        if (wants(n, 0)) {
            auto& g = n.input_grad(0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
        if (wants(n, 1)) {
            auto& g = n.input_grad(1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same(a, b, "mul");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
    return make_result("mul", a.shape(), std::move(v), {a, b}, [](Node& n) {
        const auto& av = n.inputs[0]->value;
        const auto& bv = n.inputs[1]->value;
        if (wants(n, 0)) {
            auto& g = n.input_grad(0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * bv[i];
        }
        if (wants(n, 1)) {
            auto& g = n.input_grad(1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * av[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = s * a.data()[i];
    return make_result("scale", a.shape(), std::move(v), {a}, [s](Node& n) {
        auto& g = n.input_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
    });
}

Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + s;
    return make_result("add_scalar", a.shape(), std::move(v), {a}, [](Node& n) {
        auto& g = n.input_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
}

Tensor square(const Tensor& a) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * a.data()[i];
    return make_result("square", a.shape(), std::move(v), {a}, [](Node& n) {
        const auto& av = n.inputs[0]->value;
        auto& g = n.input_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * av[i] * n.grad[i];
    });
}

Tensor gelu(const Tensor& a) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double x = a.data()[i];
        v[i] = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
    }
    return make_result("gelu", a.shape(), std::move(v), {a}, [](Node& n) {
        const auto& av = n.inputs[0]->value;
        auto& g = n.input_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = av[i];
            const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
            const double d = 0.5 * (1.0 + t) +
                             0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
            g[i] += d * n.grad[i];
        }
    });
}

Tensor tanh(const Tensor& a) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(a.data()[i]);
    return make_result("tanh", a.shape(), std::move(v), {a}, [](Node& n) {
        auto& g = n.input_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double t = n.value[i];
            g[i] += (1.0 - t * t) * n.grad[i];
        }
    });
}

Tensor reduce_sum(const Tensor& a) {
    double s = 0.0;
    for (double x : a.data()) s += x;
    return make_result("reduce_sum", Shape{}, {s}, {a}, [](Node& n) {
        auto& g = n.input_grad(0);
        for (auto& x : g) x += n.grad[0];
    });
}

Tensor reduce_mean(const Tensor& a) {
    if (a.size() == 0) throw ContractError("mean of empty tensor");
    double s = 0.0;
    for (double x : a.data()) s += x;
    const double inv = 1.0 / static_cast<double>(a.size());
    return make_result("reduce_mean", Shape{}, {s * inv}, {a}, [inv](Node& n) {
        auto& g = n.input_grad(0);
        for (auto& x : g) x += n.grad[0] * inv;
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size()) {
        throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
    }
    std::vector<double> v(a.data().begin(), a.data().end());
    return make_result("reshape", std::move(shape), std::move(v), {a}, [](Node& n) {
        auto& g = n.input_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_channels of nothing");
    const auto pl = planes_of(parts[0].shape(), "concat_channels");
    std::vector<std::size_t> channels;
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 && p.rank() != 3) {
            throw ShapeError("concat_channels takes [H,W] or [C,H,W], got " + shape_str(p.shape()));
        }
        const auto q = planes_of(p.shape(), "concat_channels");
        if (q.h != pl.h || q.w != pl.w) {
            throw ShapeError("concat_channels: shape mismatch " + shape_str(parts[0].shape()) +
                             " vs " + shape_str(p.shape()));
        }
        channels.push_back(q.outer);
        total += q.outer;
    }
    std::vector<double> v;
    v.reserve(total * pl.h * pl.w);
    for (const auto& p : parts) v.insert(v.end(), p.data().begin(), p.data().end());
    return make_result("concat_channels", Shape{total, pl.h, pl.w}, std::move(v), parts,
                       [channels, hw = pl.h * pl.w](Node& n) {
                           std::size_t off = 0;
                           for (std::size_t k = 0; k < channels.size(); ++k) {
                               const std::size_t len = channels[k] * hw;
                               if (wants(n, k)) {
                                   auto& g = n.input_grad(k);
                                   for (std::size_t i = 0; i < len; ++i) g[i] += n.grad[off + i];
                               }
                               off += len;
                           }
                       });
}

Tensor slice_channels(const Tensor& a, std::size_t begin, std::size_t end) {
    if (a.rank() != 3 || begin >= end || end > a.shape()[0]) {
        throw ShapeError("slice_channels [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") of " + shape_str(a.shape()));
    }
    const std::size_t hw = a.shape()[1] * a.shape()[2];
    std::vector<double> v(a.data().begin() + static_cast<long>(begin * hw),
                          a.data().begin() + static_cast<long>(end * hw));
    return make_result("slice_channels", Shape{end - begin, a.shape()[1], a.shape()[2]},
                       std::move(v), {a}, [off = begin * hw](Node& n) {
                           auto& g = n.input_grad(0);
                           for (std::size_t i = 0; i < n.grad.size(); ++i) g[off + i] += n.grad[i];
                       });
}

Tensor slice2d(const Tensor& a, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
    const auto pl = planes_of(a.shape(), "slice2d");
    if (r0 >= r1 || c0 >= c1 || r1 > pl.h || c1 > pl.w) {
        throw ShapeError("slice2d out of range for " + shape_str(a.shape()));
    }
    const std::size_t oh = r1 - r0, ow = c1 - c0;
    Shape s = a.shape();
    s[s.size() - 2] = oh;
    s[s.size() - 1] = ow;
    std::vector<double> v(pl.outer * oh * ow);
    for (std::size_t o = 0; o < pl.outer; ++o)
        for (std::size_t r = 0; r < oh; ++r)
            for (std::size_t c = 0; c < ow; ++c)
                v[(o * oh + r) * ow + c] = a.data()[(o * pl.h + r + r0) * pl.w + c + c0];
    return make_result("slice2d", std::move(s), std::move(v), {a}, [=](Node& n) {
        auto& g = n.input_grad(0);
        for (std::size_t o = 0; o < pl.outer; ++o)
            for (std::size_t r = 0; r < oh; ++r)
                for (std::size_t c = 0; c < ow; ++c)
                    g[(o * pl.h + r + r0) * pl.w + c + c0] += n.grad[(o * oh + r) * ow + c];
    });
}

Tensor pad(const Tensor& a, std::size_t p, PadMode mode) {
    const auto pl = planes_of(a.shape(), "pad");
    if (mode == PadMode::reflect && (p >= pl.h || p >= pl.w)) {
        throw ShapeError("reflect padding of " + std::to_string(p) + " exceeds " +
                         shape_str(a.shape()));
    }
    const std::size_t hp = pl.h + 2 * p, wp = pl.w + 2 * p;
    // Source index per padded position, or npos for zero padding.
    constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> src(hp * wp);
    for (std::size_t r = 0; r < hp; ++r) {
        bool in_r = true, in_c = true;
        const std::size_t sr = pad_source(static_cast<long>(r) - static_cast<long>(p), pl.h, mode,
                                          in_r);
        for (std::size_t c = 0; c < wp; ++c) {
            const std::size_t sc = pad_source(static_cast<long>(c) - static_cast<long>(p), pl.w,
                                              mode, in_c);
            src[r * wp + c] = (in_r && in_c) ? sr * pl.w + sc : npos;
        }
    }
    std::vector<double> v(pl.outer * hp * wp, 0.0);
    for (std::size_t o = 0; o < pl.outer; ++o) {
        const double* in = a.data().data() + o * pl.h * pl.w;
        double* out = v.data() + o * hp * wp;
        for (std::size_t i = 0; i < hp * wp; ++i)
            if (src[i] != npos) out[i] = in[src[i]];
    }
    Shape s = a.shape();
    s[s.size() - 2] = hp;
    s[s.size() - 1] = wp;
    return make_result("pad", std::move(s), std::move(v), {a},
                       [src = std::move(src), pl, hp, wp](Node& n) {
                           auto& g = n.input_grad(0);
                           for (std::size_t o = 0; o < pl.outer; ++o) {
                               double* gi = g.data() + o * pl.h * pl.w;
                               const double* go = n.grad.data() + o * hp * wp;
                               for (std::size_t i = 0; i < hp * wp; ++i)
                                   if (src[i] != npos) gi[src[i]] += go[i];
                           }
                       });
}

Tensor circular_shift(const Tensor& a, std::size_t axis, long offset) {
    const auto& s = a.shape();
    if (axis >= s.size()) throw ShapeError("circular_shift axis out of range");
    std::size_t outer = 1, inner = 1;
    for (std::size_t k = 0; k < axis; ++k) outer *= s[k];
    for (std::size_t k = axis + 1; k < s.size(); ++k) inner *= s[k];
    const std::size_t n = s[axis];
    const long ln = static_cast<long>(n);
    const std::size_t shift = static_cast<std::size_t>(((offset % ln) + ln) % ln);
    std::vector<double> v(a.size());
    const double* in = a.data().data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t src = (i + n - shift) % n;
            std::copy_n(in + (o * n + src) * inner, inner, v.data() + (o * n + i) * inner);
        }
    return make_result("circular_shift", s, std::move(v), {a}, [=](Node& nd) {
        auto& g = nd.input_grad(0);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t src = (i + n - shift) % n;
                const double* go = nd.grad.data() + (o * n + i) * inner;
                double* gi = g.data() + (o * n + src) * inner;
                for (std::size_t q = 0; q < inner; ++q) gi[q] += go[q];
            }
    });
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, PadMode padding) {
    if (input.rank() != 3 || kernel.rank() != 4) {
        throw ShapeError("conv2d expects [C,H,W] input and [Co,Ci,k,k] kernel, got " +
                         shape_str(input.shape()) + " and " + shape_str(kernel.shape()));
    }
    const auto& ks = kernel.shape();
    if (ks[1] != input.shape()[0] || ks[2] != ks[3] || ks[2] % 2 == 0) {
        throw ShapeError("conv2d: kernel " + shape_str(ks) + " incompatible with input " +
                         shape_str(input.shape()));
    }
    if (padding == PadMode::reflect) throw ContractError("conv2d padding must be zero or periodic");
    const std::size_t p = ks[2] / 2;
    const Tensor padded = p > 0 ? pad(input, p, padding) : input;
    return valid_conv(padded, kernel, input.shape()[1], input.shape()[2]);
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
    if (x.rank() != 3 || bias.rank() != 1 || bias.shape()[0] != x.shape()[0]) {
        throw ShapeError("add_channel_bias: " + shape_str(x.shape()) + " vs bias " +
                         shape_str(bias.shape()));
    }
    const std::size_t c_n = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
    std::vector<double> v(x.data().begin(), x.data().end());
    for (std::size_t c = 0; c < c_n; ++c)
        for (std::size_t i = 0; i < hw; ++i) v[c * hw + i] += bias.data()[c];
    return make_result("add_channel_bias", x.shape(), std::move(v), {x, bias}, [c_n, hw](Node& n) {
        if (wants(n, 0)) {
            auto& g = n.input_grad(0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
        if (wants(n, 1)) {
            auto& g = n.input_grad(1);
            for (std::size_t c = 0; c < c_n; ++c) {
                double acc = 0.0;
                for (std::size_t i = 0; i < hw; ++i) acc += n.grad[c * hw + i];
                g[c] += acc;
            }
        }
    });
}

Tensor subsample(const Tensor& a, std::size_t s_h, std::size_t s_w, std::size_t i,
                 std::size_t j) {
    if (a.rank() != 2 || a.shape()[0] % s_h != 0 || a.shape()[1] % s_w != 0 || i >= s_h ||
        j >= s_w) {
        throw DimensionError("subsample (" + std::to_string(i) + "," + std::to_string(j) +
                             ") with factors (" + std::to_string(s_h) + "," + std::to_string(s_w) +
                             ") of " + shape_str(a.shape()));
    }
    const std::size_t w = a.shape()[1];
    const std::size_t ch = a.shape()[0] / s_h, cw = w / s_w;
    std::vector<double> v(ch * cw);
    gather_subgrid(a.data(), w, s_h, s_w, i, j, ch, cw, v);
    return make_result("subsample", Shape{ch, cw}, std::move(v), {a}, [=](Node& n) {
        auto& g = n.input_grad(0);
        for (std::size_t r = 0; r < ch; ++r)
            for (std::size_t c = 0; c < cw; ++c)
                g[(r * s_h + i) * w + c * s_w + j] += n.grad[r * cw + c];
    });
}

Tensor stagger_merge(const std::vector<Tensor>& parts, std::size_t s_h, std::size_t s_w) {
    if (parts.size() != s_h * s_w) {
        throw LayoutError("stagger_merge expects " + std::to_string(s_h * s_w) + " parts, got " +
                          std::to_string(parts.size()));
    }
    const Shape cs = parts[0].shape();
    if (cs.size() != 2) throw ShapeError("stagger_merge parts must be [h,w]");
    for (const auto& p : parts) {
        if (p.shape() != cs) {
            throw DimensionError("stagger_merge: part shape " + shape_str(p.shape()) + " vs " +
                                 shape_str(cs));
        }
    }
    const std::size_t ch = cs[0], cw = cs[1], w = cw * s_w;
    std::vector<double> v(ch * s_h * w);
    for (std::size_t i = 0; i < s_h; ++i)
        for (std::size_t j = 0; j < s_w; ++j)
            scatter_subgrid(parts[i * s_w + j].data(), w, s_h, s_w, i, j, ch, cw, v);
    return make_result("stagger_merge", Shape{ch * s_h, w}, std::move(v), parts, [=](Node& n) {
        for (std::size_t i = 0; i < s_h; ++i)
            for (std::size_t j = 0; j < s_w; ++j) {
                const std::size_t k = i * s_w + j;
                if (!wants(n, k)) continue;
                auto& g = n.input_grad(k);
                for (std::size_t r = 0; r < ch; ++r)
                    for (std::size_t c = 0; c < cw; ++c)
                        g[r * cw + c] += n.grad[(r * s_h + i) * w + c * s_w + j];
            }
    });
}

GradCheckReport gradient_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                               const std::vector<Tensor>& leaves, double eps,
                               std::size_t max_coords_per_leaf) {
    GradCheckReport rep;
    std::vector<Tensor> ad_leaves;
    for (const auto& l : leaves) ad_leaves.push_back(l.detach(l.requires_grad()));
    const Tensor loss = f(ad_leaves);
    backward(loss);

    auto eval = [&](std::size_t which, std::size_t coord, double delta) {
        std::vector<Tensor> probe;
        for (std::size_t k = 0; k < leaves.size(); ++k) {
            std::vector<double> v(leaves[k].data().begin(), leaves[k].data().end());
            if (k == which) v[coord] += delta;
            probe.push_back(Tensor::from(leaves[k].shape(), std::move(v)));
        }
        return f(probe).item();
    };

    for (std::size_t k = 0; k < leaves.size(); ++k) {
        if (!leaves[k].requires_grad()) continue;
        const auto g = ad_leaves[k].grad();
        const std::size_t n = leaves[k].size();
        const std::size_t stride =
            (max_coords_per_leaf == 0 || n <= max_coords_per_leaf) ? 1 : n / max_coords_per_leaf;
        for (std::size_t i = 0; i < n; i += stride) {
            const double fd = (eval(k, i, eps) - eval(k, i, -eps)) / (2.0 * eps);
            const double dev = std::abs(g[i] - fd) / (std::abs(g[i]) + std::abs(fd) + 1e-12);
            if (!std::isfinite(dev)) {
                rep.finite = false;
                rep.max_deviation = std::numeric_limits<double>::infinity();
            } else {
                rep.max_deviation = std::max(rep.max_deviation, dev);
            }
            ++rep.coordinates;
        }
    }
    return rep;
}

double gradient_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
    const auto rep = gradient_check(
        [&](const std::vector<Tensor>& l) { return f(l[0]); }, {x.detach(true)}, eps);
    return rep.finite ? rep.max_deviation : std::numeric_limits<double>::infinity();
}

} // namespace nstagger
