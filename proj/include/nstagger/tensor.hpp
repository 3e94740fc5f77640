#pragma once

/**
 * @file tensor.hpp
 * @brief Dense f64 tensors with reverse-mode automatic differentiation.
 *
 * A Tensor is a cheap handle to a node of a computation graph. Every op
 * returns a new node holding its forward value; the node keeps its inputs and
 * a backward closure only when some input requires a gradient, so pure
 * inference builds no graph. `backward(loss)` walks the graph reachable from
 * a scalar in reverse topological order, visiting each node exactly once, and
 * sums the contributions of every use of a node.
 *
 * Conventions: images are [C, H, W], kernels are [C_out, C_in, k, k], and all
 * spatial ops act on the last two axes. Convolution is "same" (output keeps
 * H x W) and implemented as pad followed by a valid correlation whose
 * summation order does not depend on position, so periodic convolution
 * commutes exactly with circular shifts.
 */

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace nstagger {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

enum class PadMode { zero, reflect, periodic };

namespace detail {
struct Node;
}

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t size() const;
    std::size_t rank() const { return shape().size(); }
    std::span<const double> data() const;
    double item() const;
    bool requires_grad() const;
    bool is_leaf() const;

    /// Gradient accumulated by the last backward pass; zeros when none reached this tensor.
    std::span<const double> grad() const;

    /// Fresh leaf holding a copy of the values, detached from any graph.
    Tensor detach(bool requires_grad = false) const;

    detail::Node* node() const { return node_.get(); }

private:
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
    std::shared_ptr<detail::Node> node_;

    friend Tensor make_result(const char*, Shape, std::vector<double>, std::vector<Tensor>,
                              std::function<void(detail::Node&)>);
    friend void backward(const Tensor& loss);
};

namespace detail {
struct Node {
    const char* op = "leaf";
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    /// Reads `grad` of this node and accumulates into the inputs' grads.
    std::function<void(Node&)> backward_fn;

    std::vector<double>& input_grad(std::size_t k);
};
} // namespace detail

/// Builds an op result. `fn` is kept only when some input requires a gradient.
Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs, std::function<void(detail::Node&)> fn);

/// Throws ContractError unless `loss` holds exactly one element.
void backward(const Tensor& loss);

// Elementwise arithmetic (identical shapes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor square(const Tensor& a);
/// Tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& a);
Tensor tanh(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

Tensor reduce_sum(const Tensor& a);
Tensor reduce_mean(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
/// Stacks rank-2 [H,W] (one channel) and rank-3 [C,H,W] tensors along channels.
Tensor concat_channels(const std::vector<Tensor>& parts);
/// Channels [begin, end) of a [C,H,W] tensor.
Tensor slice_channels(const Tensor& a, std::size_t begin, std::size_t end);
/// Rows [r0, r1) and columns [c0, c1) of the last two axes.
Tensor slice2d(const Tensor& a, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1);

/// Pads the last two axes by `p` on every side.
Tensor pad(const Tensor& a, std::size_t p, PadMode mode);
/// out[..., i] = a[..., (i - offset) mod n] along `axis`; offset 1 maps [1,2,3,4] to [4,1,2,3].
Tensor circular_shift(const Tensor& a, std::size_t axis, long offset);

/// "Same" 2-D correlation. `padding` must be zero or periodic.
Tensor conv2d(const Tensor& input, const Tensor& kernel, PadMode padding);
/// Adds bias[c] to every element of channel c of a [C,H,W] tensor.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

/// Subgrid (i, j) of a [H,W] tensor under factors (s_h, s_w).
Tensor subsample(const Tensor& a, std::size_t s_h, std::size_t s_w, std::size_t i, std::size_t j);
/// Inverse of subsample over all subgrids; parts are ordered i * s_w + j.
Tensor stagger_merge(const std::vector<Tensor>& parts, std::size_t s_h, std::size_t s_w);

struct GradCheckReport {
    double max_deviation = 0.0;
    std::size_t coordinates = 0;
    bool finite = true;
};

/// Compares reverse-mode gradients of a scalar function of `leaves` against
/// central differences of step `eps`. Leaves that do not require a gradient are
/// skipped. Deviation per coordinate is |g_ad - g_fd| / (|g_ad| + |g_fd| + 1e-12).
/// `max_coords_per_leaf` (0 = all) limits the coordinates probed, evenly strided.
GradCheckReport gradient_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                               const std::vector<Tensor>& leaves, double eps = 1e-5,
                               std::size_t max_coords_per_leaf = 0);

/// Single-input convenience form; returns the max deviation (infinity on NaN).
double gradient_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                      double eps = 1e-5);

} // namespace nstagger
