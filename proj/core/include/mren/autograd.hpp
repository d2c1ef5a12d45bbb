#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mren/ops.hpp"
#include "mren/tensor.hpp"

// Reverse-mode autodiff on an append-only tape. Recording order is the
// topological order; backward walks it in reverse and frees each node's
// gradient buffer as soon as it has been consumed. Leaf gradients
// accumulate immediately into caller-owned sinks, so repeated backward
// calls without reset() add up. The usual contract is reset-then-backward.
// A tape is single-threaded.

namespace mren::autograd {

template <class T>
class Tape;

// A tensor that may be tracked on a tape. node < 0 means constant.
template <class T>
struct Value {
    std::shared_ptr<const Tensor4<T>> data;
    Tape<T>* tape = nullptr;
    int node = -1;

    const Tensor4<T>& t() const { return *data; }
    Dims4 dims() const { return data->dims(); }
    bool tracked() const { return tape != nullptr && node >= 0; }
};

template <class T>
Value<T> make_value(Tensor4<T> t) {
    return Value<T>{std::make_shared<const Tensor4<T>>(std::move(t)), nullptr, -1};
}

template <class T>
Value<T> make_value(std::shared_ptr<const Tensor4<T>> t) {
    return Value<T>{std::move(t), nullptr, -1};
}

template <class T>
class Tape {
public:
    using BackFn = std::function<void(Tape<T>&, const Tensor4<T>&)>;

    // Leaf whose gradient accumulates into *grad_sink (dims must match).
    Value<T> leaf(const Tensor4<T>& value, Tensor4<T>* grad_sink);

    // Interior node; back receives d(loss)/d(this node).
    int record(const Dims4& dims, BackFn back);

    // Routes a gradient contribution to a node (leaf sink or interior buffer).
    void add_grad(int node, Tensor4<T>&& g);

    // loss must be a scalar recorded on this tape.
    void backward(const Value<T>& loss);

    void reset() { nodes_.clear(); }
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Dims4 dims;
        Tensor4<T>* sink = nullptr;
        std::unique_ptr<Tensor4<T>> grad;
        BackFn back;
    };
    std::vector<Node> nodes_;
};

// Returns the single tape shared by the tracked operands, nullptr when all
// are constants; throws UsageError when two different tapes are mixed.
template <class T>
Tape<T>* joint_tape(std::initializer_list<const Value<T>*> vs);

// Traced wrappers. Each computes via ops:: and records a backward closure
// on the operands' tape when any operand is tracked.
template <class T>
Value<T> conv2d(const Value<T>& x, const Value<T>& w, const Value<T>* bias, const ConvSpec& spec);
template <class T>
Value<T> gelu(const Value<T>& x);
template <class T>
Value<T> sigmoid(const Value<T>& x);
template <class T>
Value<T> add(const Value<T>& x, const Value<T>& y);
template <class T>
Value<T> mul(const Value<T>& x, const Value<T>& y);
template <class T>
Value<T> axpy(T alpha, const Value<T>& x, const Value<T>& y);
template <class T>
Value<T> concat_channels(const std::vector<Value<T>>& parts);
template <class T>
Value<T> slice_channels(const Value<T>& x, std::int64_t c0, std::int64_t c1);
template <class T>
Value<T> resize_up(ops::ResizeKind kind, const Value<T>& x, int scale);
template <class T>
Value<T> global_avg_pool(const Value<T>& x);
template <class T>
Value<T> scale_channels(const Value<T>& x, const Value<T>& s);
template <class T>
Value<T> l1_loss(const Value<T>& pred, const Value<T>& target);
// Scalar sum(x * weights); weights are a constant.
template <class T>
Value<T> weighted_sum(const Value<T>& x, std::shared_ptr<const Tensor4<T>> weights);
template <class T>
Value<T> sum(const Value<T>& x);

// Finite-difference validation of analytic gradients. A check builds its
// inputs deterministically from (dims, seed), runs one backward, then
// perturbs every input element by +-step (double precision throughout) and
// returns the max of |analytic - numeric| / max(floor, |analytic| + |numeric|).
// The floor is max(1e-8, 1e-3 * max|analytic|) per checked tensor, so
// near-zero components are judged against the gradient's own scale instead
// of amplifying central-difference roundoff.
using GradCheckFn =
    std::function<Value<double>(Tape<double>&, const std::vector<Value<double>>&)>;

struct GradCheckCase {
    std::vector<Dims4> input_dims; // every input is treated as differentiable
    GradCheckFn forward;
    // Extra differentiable state owned by the case (e.g. a model's parameter
    // store): (value, grad sink) pairs the forward closure reads through
    // context. These are perturbed and checked like the inputs above.
    std::vector<std::pair<Tensor4<double>*, Tensor4<double>*>> extra;
    std::shared_ptr<void> context;
    // Fill range for the extra slots. Deep compositions set this below 1 to
    // keep activations O(1); exploding values drown finite differences.
    double param_scale = 1.0;
    // Central-difference step. The default suits single ops; smooth deep
    // compositions want a larger step so the loss delta clears roundoff.
    double step = 1e-5;
};

// builder maps the caller-supplied base dims to the case to run.
void register_grad_check(const std::string& primitive,
                         std::function<GradCheckCase(const Dims4&)> builder);
bool has_grad_check(const std::string& primitive);
std::vector<std::string> grad_check_primitives();
double grad_check(const std::string& primitive, const Dims4& dims, std::uint64_t seed);

} // namespace mren::autograd
