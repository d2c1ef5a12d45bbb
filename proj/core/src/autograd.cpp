#include "mren/autograd.hpp"

#include <cmath>
#include <map>
#include <mutex>

#include "mren/error.hpp"
#include "mren/rng.hpp"

namespace mren::autograd {
namespace {

template <class T>
void accumulate(Tensor4<T>& dst, const Tensor4<T>& src) {
    check_same_dims(dst.dims(), src.dims(), "grad accumulate");
    const std::int64_t count = dst.count();
    for (std::int64_t i = 0; i < count; ++i) dst.data()[i] += src.data()[i];
}

} // namespace

template <class T>
Value<T> Tape<T>::leaf(const Tensor4<T>& value, Tensor4<T>* grad_sink) {
    if (grad_sink != nullptr) check_same_dims(value.dims(), grad_sink->dims(), "leaf");
    Node node;
    node.dims = value.dims();
    node.sink = grad_sink;
    nodes_.push_back(std::move(node));
    return Value<T>{std::make_shared<const Tensor4<T>>(value), this,
                    static_cast<int>(nodes_.size()) - 1};
}

template <class T>
int Tape<T>::record(const Dims4& dims, BackFn back) {
    Node node;
    node.dims = dims;
    node.back = std::move(back);
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
}

template <class T>
void Tape<T>::add_grad(int node, Tensor4<T>&& g) {
    if (node < 0 || node >= static_cast<int>(nodes_.size())) {
        throw UsageError("add_grad: node id " + std::to_string(node) + " out of range");
    }
    Node& nd = nodes_[static_cast<std::size_t>(node)];
    check_same_dims(nd.dims, g.dims(), "add_grad");
    if (nd.sink != nullptr) {
        accumulate(*nd.sink, g);
    } else if (!nd.grad) {
        nd.grad = std::make_unique<Tensor4<T>>(std::move(g));
    } else {
        accumulate(*nd.grad, g);
    }
}

template <class T>
void Tape<T>::backward(const Value<T>& loss) {
    if (loss.tape != this || loss.node < 0) {
        throw UsageError("backward: loss tensor is not traced on this tape");
    }
    if (loss.data->count() != 1) {
        throw UsageError("backward: loss must be scalar, got dims " + loss.dims().str());
    }
    add_grad(loss.node, Tensor4<T>(nodes_[static_cast<std::size_t>(loss.node)].dims, T(1)));
    for (int i = loss.node; i >= 0; --i) {
        Node& nd = nodes_[static_cast<std::size_t>(i)];
        if (!nd.grad) continue;
        Tensor4<T> g = std::move(*nd.grad);
        nd.grad.reset();
        if (nd.back) nd.back(*this, g);
    }
}

template <class T>
Tape<T>* joint_tape(std::initializer_list<const Value<T>*> vs) {
    Tape<T>* tape = nullptr;
    for (const Value<T>* v : vs) {
        if (v == nullptr || !v->tracked()) continue;
        if (tape == nullptr) {
            tape = v->tape;
        } else if (tape != v->tape) {
            throw UsageError("operands recorded on different tapes");
        }
    }
    return tape;
}

template <class T>
Value<T> conv2d(const Value<T>& x, const Value<T>& w, const Value<T>* bias, const ConvSpec& spec) {
    Tape<T>* tape = joint_tape<T>({&x, &w, bias});
    auto out = std::make_shared<const Tensor4<T>>(
        ops::conv2d(*x.data, *w.data, bias ? bias->data.get() : nullptr, spec));
    Value<T> v{out, tape, -1};
    if (tape == nullptr) return v;
    const int xn = x.tracked() ? x.node : -1;
    const int wn = w.tracked() ? w.node : -1;
    const int bn = (bias != nullptr && bias->tracked()) ? bias->node : -1;
    auto xd = x.data;
    auto wd = w.data;
    v.node = tape->record(out->dims(), [xn, wn, bn, xd, wd, spec](Tape<T>& t, const Tensor4<T>& g) {
        if (xn >= 0) t.add_grad(xn, ops::conv2d_grad_input(g, *wd, xd->dims(), spec));
        if (wn >= 0) t.add_grad(wn, ops::conv2d_grad_weight(g, *xd, spec));
        if (bn >= 0) t.add_grad(bn, ops::conv2d_grad_bias(g));
    });
    return v;
}

template <class T>
Value<T> gelu(const Value<T>& x) {
    auto out = std::make_shared<const Tensor4<T>>(ops::gelu(*x.data));
    Value<T> v{out, x.tape, -1};
    if (!x.tracked()) return v;
    auto xd = x.data;
    v.node = x.tape->record(out->dims(), [xn = x.node, xd](Tape<T>& t, const Tensor4<T>& g) {
        t.add_grad(xn, ops::gelu_grad(*xd, g));
    });
    return v;
}

template <class T>
Value<T> sigmoid(const Value<T>& x) {
    auto out = std::make_shared<const Tensor4<T>>(ops::sigmoid(*x.data));
    Value<T> v{out, x.tape, -1};
    if (!x.tracked()) return v;
    v.node = x.tape->record(out->dims(), [xn = x.node, out](Tape<T>& t, const Tensor4<T>& g) {
        t.add_grad(xn, ops::sigmoid_grad(*out, g));
    });
    return v;
}

template <class T>
Value<T> add(const Value<T>& x, const Value<T>& y) {
    Tape<T>* tape = joint_tape<T>({&x, &y});
    auto out = std::make_shared<const Tensor4<T>>(ops::add(*x.data, *y.data));
    Value<T> v{out, tape, -1};
    if (tape == nullptr) return v;
    const int xn = x.tracked() ? x.node : -1;
    const int yn = y.tracked() ? y.node : -1;
    v.node = tape->record(out->dims(), [xn, yn](Tape<T>& t, const Tensor4<T>& g) {
        if (xn >= 0) t.add_grad(xn, Tensor4<T>(g));
        if (yn >= 0) t.add_grad(yn, Tensor4<T>(g));
    });
    return v;
}

template <class T>
Value<T> mul(const Value<T>& x, const Value<T>& y) {
    Tape<T>* tape = joint_tape<T>({&x, &y});
    auto out = std::make_shared<const Tensor4<T>>(ops::mul(*x.data, *y.data));
    Value<T> v{out, tape, -1};
    if (tape == nullptr) return v;
    const int xn = x.tracked() ? x.node : -1;
    const int yn = y.tracked() ? y.node : -1;
    auto xd = x.data;
    auto yd = y.data;
    v.node = tape->record(out->dims(), [xn, yn, xd, yd](Tape<T>& t, const Tensor4<T>& g) {
        if (xn >= 0) t.add_grad(xn, ops::mul(g, *yd));
        if (yn >= 0) t.add_grad(yn, ops::mul(g, *xd));
    });
    return v;
}

template <class T>
Value<T> axpy(T alpha, const Value<T>& x, const Value<T>& y) {
    Tape<T>* tape = joint_tape<T>({&x, &y});
    auto out = std::make_shared<const Tensor4<T>>(ops::axpy(alpha, *x.data, *y.data));
    Value<T> v{out, tape, -1};
    if (tape == nullptr) return v;
    const int xn = x.tracked() ? x.node : -1;
    const int yn = y.tracked() ? y.node : -1;
    v.node = tape->record(out->dims(), [xn, yn, alpha](Tape<T>& t, const Tensor4<T>& g) {
        if (xn >= 0) t.add_grad(xn, ops::scale(alpha, g));
        if (yn >= 0) t.add_grad(yn, Tensor4<T>(g));
    });
    return v;
}

template <class T>
Value<T> concat_channels(const std::vector<Value<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no parts");
    std::vector<const Value<T>*> ptrs;
    std::vector<const Tensor4<T>*> tensors;
    for (const auto& p : parts) {
        ptrs.push_back(&p);
        tensors.push_back(p.data.get());
    }
    Tape<T>* tape = nullptr;
    for (const auto& p : parts) {
        if (!p.tracked()) continue;
        if (tape == nullptr) tape = p.tape;
        else if (tape != p.tape) throw UsageError("operands recorded on different tapes");
    }
    auto out = std::make_shared<const Tensor4<T>>(ops::concat_channels(tensors));
    Value<T> v{out, tape, -1};
    if (tape == nullptr) return v;
    struct Piece {
        int node;
        std::int64_t c0, c1;
    };
    std::vector<Piece> pieces;
    std::int64_t coff = 0;
    for (const auto& p : parts) {
        const std::int64_t pc = p.dims().c;
        if (p.tracked()) pieces.push_back({p.node, coff, coff + pc});
        coff += pc;
    }
    v.node = tape->record(out->dims(), [pieces](Tape<T>& t, const Tensor4<T>& g) {
        for (const Piece& p : pieces) t.add_grad(p.node, ops::slice_channels(g, p.c0, p.c1));
    });
    return v;
}

template <class T>
Value<T> slice_channels(const Value<T>& x, std::int64_t c0, std::int64_t c1) {
    auto out = std::make_shared<const Tensor4<T>>(ops::slice_channels(*x.data, c0, c1));
    Value<T> v{out, x.tape, -1};
    if (!x.tracked()) return v;
    const std::int64_t total_c = x.dims().c;
    v.node = x.tape->record(out->dims(), [xn = x.node, c0, total_c](Tape<T>& t, const Tensor4<T>& g) {
        t.add_grad(xn, ops::pad_channels(g, c0, total_c));
    });
    return v;
}

template <class T>
Value<T> resize_up(ops::ResizeKind kind, const Value<T>& x, int scale) {
    auto out = std::make_shared<const Tensor4<T>>(ops::resize_up(kind, *x.data, scale));
    Value<T> v{out, x.tape, -1};
    if (!x.tracked()) return v;
    const Dims4 xd = x.dims();
    v.node = x.tape->record(out->dims(), [xn = x.node, kind, xd, scale](Tape<T>& t, const Tensor4<T>& g) {
        t.add_grad(xn, ops::resize_up_grad(kind, g, xd, scale));
    });
    return v;
}

template <class T>
Value<T> global_avg_pool(const Value<T>& x) {
    auto out = std::make_shared<const Tensor4<T>>(ops::global_avg_pool(*x.data));
    Value<T> v{out, x.tape, -1};
    if (!x.tracked()) return v;
    const Dims4 xd = x.dims();
    v.node = x.tape->record(out->dims(), [xn = x.node, xd](Tape<T>& t, const Tensor4<T>& g) {
        t.add_grad(xn, ops::global_avg_pool_grad(g, xd));
    });
    return v;
}

template <class T>
Value<T> scale_channels(const Value<T>& x, const Value<T>& s) {
    Tape<T>* tape = joint_tape<T>({&x, &s});
    auto out = std::make_shared<const Tensor4<T>>(ops::scale_channels(*x.data, *s.data));
    Value<T> v{out, tape, -1};
    if (tape == nullptr) return v;
    const int xn = x.tracked() ? x.node : -1;
    const int sn = s.tracked() ? s.node : -1;
    auto xd = x.data;
    auto sd = s.data;
    v.node = tape->record(out->dims(), [xn, sn, xd, sd](Tape<T>& t, const Tensor4<T>& g) {
        if (xn >= 0) t.add_grad(xn, ops::scale_channels(g, *sd));
        if (sn >= 0) t.add_grad(sn, ops::scale_channels_grad_scale(g, *xd));
    });
    return v;
}

template <class T>
Value<T> l1_loss(const Value<T>& pred, const Value<T>& target) {
    Tape<T>* tape = joint_tape<T>({&pred, &target});
    const T loss = ops::l1_loss(*pred.data, *target.data);
    auto out = std::make_shared<const Tensor4<T>>(Dims4{1, 1, 1, 1}, loss);
    Value<T> v{out, tape, -1};
    if (tape == nullptr) return v;
    const int pn = pred.tracked() ? pred.node : -1;
    const int tn = target.tracked() ? target.node : -1;
    auto pd = pred.data;
    auto td = target.data;
    v.node = tape->record(out->dims(), [pn, tn, pd, td](Tape<T>& t, const Tensor4<T>& g) {
        Tensor4<T> gp = ops::l1_loss_grad(*pd, *td, g.data()[0]);
        if (tn >= 0) t.add_grad(tn, ops::scale(T(-1), gp));
        if (pn >= 0) t.add_grad(pn, std::move(gp));
    });
    return v;
}

template <class T>
Value<T> weighted_sum(const Value<T>& x, std::shared_ptr<const Tensor4<T>> weights) {
    check_same_dims(x.dims(), weights->dims(), "weighted_sum");
    const T s = ops::sum(ops::mul(*x.data, *weights));
    auto out = std::make_shared<const Tensor4<T>>(Dims4{1, 1, 1, 1}, s);
    Value<T> v{out, x.tape, -1};
    if (!x.tracked()) return v;
    v.node = x.tape->record(out->dims(), [xn = x.node, weights](Tape<T>& t, const Tensor4<T>& g) {
        t.add_grad(xn, ops::scale(g.data()[0], *weights));
    });
    return v;
}

template <class T>
Value<T> sum(const Value<T>& x) {
    return weighted_sum(x, std::make_shared<const Tensor4<T>>(x.dims(), T(1)));
}

// --- grad check machinery ---

namespace {

std::map<std::string, std::function<GradCheckCase(const Dims4&)>>& grad_check_registry() {
    static std::map<std::string, std::function<GradCheckCase(const Dims4&)>> reg;
    return reg;
}

Tensor4<double> random_tensor(const Dims4& dims, Rng& rng) {
    Tensor4<double> t(dims);
    for (std::int64_t i = 0; i < t.count(); ++i) t.data()[i] = rng.uniform(-1.0, 1.0);
    return t;
}

double run_scalar(const GradCheckCase& c, const std::vector<Tensor4<double>>& inputs,
                  const Tensor4<double>& weights) {
    Tape<double> tape;
    std::vector<Value<double>> vals;
    vals.reserve(inputs.size());
    for (const auto& in : inputs) vals.push_back(tape.leaf(in, nullptr));
    Value<double> out = c.forward(tape, vals);
    if (out.data->count() == 1) return out.data->data()[0];
    return ops::sum(ops::mul(*out.data, weights));
}

ConvSpec ordinary_spec(std::int64_t in_c, std::int64_t out_c, int k) {
    ConvSpec s;
    s.in_channels = in_c;
    s.out_channels = out_c;
    s.kh = k;
    s.kw = k;
    return s;
}

ConvSpec depthwise_spec(std::int64_t c, int k) {
    ConvSpec s;
    s.in_channels = c;
    s.out_channels = c;
    s.kh = k;
    s.kw = k;
    s.groups = c;
    return s;
}

void register_conv_check(const std::string& name, bool depthwise, int k) {
    register_grad_check(name, [depthwise, k](const Dims4& d) {
        const ConvSpec spec = depthwise ? depthwise_spec(d.c, k) : ordinary_spec(d.c, 4, k);
        GradCheckCase c;
        c.input_dims = {d, spec.weight_dims(), spec.bias_dims()};
        c.forward = [spec](Tape<double>&, const std::vector<Value<double>>& in) {
            return conv2d(in[0], in[1], &in[2], spec);
        };
        return c;
    });
}

void register_builtin_checks() {
    register_conv_check("conv2d_k1", false, 1);
    register_conv_check("conv2d_k3", false, 3);
    register_conv_check("conv2d_k5", false, 5);
    register_conv_check("conv2d_dw_k1", true, 1);
    register_conv_check("conv2d_dw_k3", true, 3);
    register_conv_check("conv2d_dw_k5", true, 5);

    register_grad_check("gelu", [](const Dims4& d) {
        return GradCheckCase{{d}, [](Tape<double>&, const std::vector<Value<double>>& in) {
                                 return gelu(in[0]);
                             }};
    });
    register_grad_check("sigmoid", [](const Dims4& d) {
        return GradCheckCase{{d}, [](Tape<double>&, const std::vector<Value<double>>& in) {
                                 return sigmoid(in[0]);
                             }};
    });
    register_grad_check("add", [](const Dims4& d) {
        return GradCheckCase{{d, d}, [](Tape<double>&, const std::vector<Value<double>>& in) {
                                 return add(in[0], in[1]);
                             }};
    });
    register_grad_check("mul", [](const Dims4& d) {
        return GradCheckCase{{d, d}, [](Tape<double>&, const std::vector<Value<double>>& in) {
                                 return mul(in[0], in[1]);
                             }};
    });
    register_grad_check("axpy", [](const Dims4& d) {
        return GradCheckCase{{d, d}, [](Tape<double>&, const std::vector<Value<double>>& in) {
                                 return axpy(0.2, in[0], in[1]);
                             }};
    });
    register_grad_check("concat_channels", [](const Dims4& d) {
        return GradCheckCase{{d, d}, [](Tape<double>&, const std::vector<Value<double>>& in) {
                                 return concat_channels<double>({in[0], in[1]});
                             }};
    });
    register_grad_check("slice_channels", [](const Dims4& d) {
        const std::int64_t c1 = std::max<std::int64_t>(1, d.c - 1);
        return GradCheckCase{{d}, [c1](Tape<double>&, const std::vector<Value<double>>& in) {
                                 return slice_channels(in[0], 0, c1);
                             }};
    });
    register_grad_check("resize_bilinear", [](const Dims4& d) {
        return GradCheckCase{{d}, [](Tape<double>&, const std::vector<Value<double>>& in) {
                                 return resize_up(ops::ResizeKind::bilinear, in[0], 2);
                             }};
    });
    register_grad_check("resize_bicubic", [](const Dims4& d) {
        return GradCheckCase{{d}, [](Tape<double>&, const std::vector<Value<double>>& in) {
                                 return resize_up(ops::ResizeKind::bicubic, in[0], 2);
                             }};
    });
    register_grad_check("l1_loss", [](const Dims4& d) {
        return GradCheckCase{{d, d}, [](Tape<double>&, const std::vector<Value<double>>& in) {
                                 return l1_loss(in[0], in[1]);
                             }};
    });
    register_grad_check("global_avg_pool", [](const Dims4& d) {
        return GradCheckCase{{d}, [](Tape<double>&, const std::vector<Value<double>>& in) {
                                 return global_avg_pool(in[0]);
                             }};
    });
    register_grad_check("scale_channels", [](const Dims4& d) {
        const Dims4 sd{d.n, d.c, 1, 1};
        return GradCheckCase{{d, sd}, [](Tape<double>&, const std::vector<Value<double>>& in) {
                                 return scale_channels(in[0], in[1]);
                             }};
    });
}

std::once_flag builtin_once;

} // namespace

void register_grad_check(const std::string& primitive,
                         std::function<GradCheckCase(const Dims4&)> builder) {
    grad_check_registry()[primitive] = std::move(builder);
}

bool has_grad_check(const std::string& primitive) {
    std::call_once(builtin_once, register_builtin_checks);
    return grad_check_registry().count(primitive) > 0;
}

std::vector<std::string> grad_check_primitives() {
    std::call_once(builtin_once, register_builtin_checks);
    std::vector<std::string> names;
    for (const auto& [name, fn] : grad_check_registry()) names.push_back(name);
    return names;
}

double grad_check(const std::string& primitive, const Dims4& dims, std::uint64_t seed) {
    std::call_once(builtin_once, register_builtin_checks);
    auto it = grad_check_registry().find(primitive);
    if (it == grad_check_registry().end()) {
        throw UsageError("grad_check: unregistered primitive '" + primitive + "'");
    }
    GradCheckCase c = it->second(dims);

    Rng rng(seed);
    std::vector<Tensor4<double>> inputs;
    inputs.reserve(c.input_dims.size());
    for (const Dims4& d : c.input_dims) inputs.push_back(random_tensor(d, rng));
    for (auto& [value, sink] : c.extra) {
        for (std::int64_t i = 0; i < value->count(); ++i)
            value->data()[i] = rng.uniform(-c.param_scale, c.param_scale);
        sink->fill(0.0);
    }

    // analytic pass; non-scalar outputs are reduced by a fixed random
    // weighted sum so every output element influences the loss
    Tape<double> tape;
    std::vector<Value<double>> vals;
    std::vector<Tensor4<double>> grads;
    grads.reserve(inputs.size());
    for (auto& in : inputs) grads.emplace_back(in.dims(), 0.0);
    for (std::size_t i = 0; i < inputs.size(); ++i) vals.push_back(tape.leaf(inputs[i], &grads[i]));
    Value<double> out = c.forward(tape, vals);
    Tensor4<double> weights(out.dims());
    for (std::int64_t i = 0; i < weights.count(); ++i) weights.data()[i] = rng.uniform(-1.0, 1.0);
    Value<double> loss =
        out.data->count() == 1
            ? out
            : weighted_sum(out, std::make_shared<const Tensor4<double>>(weights));
    tape.backward(loss);

    const double h = c.step;
    double max_err = 0.0;
    auto probe = [&](Tensor4<double>& value, const Tensor4<double>& analytic_grad) {
        double g_max = 0.0;
        for (std::int64_t j = 0; j < analytic_grad.count(); ++j)
            g_max = std::max(g_max, std::fabs(analytic_grad.data()[j]));
        const double floor = std::max(1e-8, 1e-3 * g_max);
        for (std::int64_t j = 0; j < value.count(); ++j) {
            const double orig = value.data()[j];
            value.data()[j] = orig + h;
            const double fp = run_scalar(c, inputs, weights);
            value.data()[j] = orig - h;
            const double fm = run_scalar(c, inputs, weights);
            value.data()[j] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic = analytic_grad.data()[j];
            const double err = std::fabs(analytic - numeric) /
                               std::max(floor, std::fabs(analytic) + std::fabs(numeric));
            max_err = std::max(max_err, err);
        }
    };
    for (std::size_t i = 0; i < inputs.size(); ++i) probe(inputs[i], grads[i]);
    for (auto& [value, sink] : c.extra) probe(*value, *sink);
    return max_err;
}

#define MREN_INSTANTIATE_AUTOGRAD(T)                                                               \
    template class Tape<T>;                                                                        \
    template Tape<T>* joint_tape<T>(std::initializer_list<const Value<T>*>);                       \
    template Value<T> conv2d<T>(const Value<T>&, const Value<T>&, const Value<T>*,                 \
                                const ConvSpec&);                                                  \
    template Value<T> gelu<T>(const Value<T>&);                                                    \
    template Value<T> sigmoid<T>(const Value<T>&);                                                 \
    template Value<T> add<T>(const Value<T>&, const Value<T>&);                                    \
    template Value<T> mul<T>(const Value<T>&, const Value<T>&);                                    \
    template Value<T> axpy<T>(T, const Value<T>&, const Value<T>&);                                \
    template Value<T> concat_channels<T>(const std::vector<Value<T>>&);                            \
    template Value<T> slice_channels<T>(const Value<T>&, std::int64_t, std::int64_t);              \
    template Value<T> resize_up<T>(ops::ResizeKind, const Value<T>&, int);                         \
    template Value<T> global_avg_pool<T>(const Value<T>&);                                         \
    template Value<T> scale_channels<T>(const Value<T>&, const Value<T>&);                         \
    template Value<T> l1_loss<T>(const Value<T>&, const Value<T>&);                                \
    template Value<T> weighted_sum<T>(const Value<T>&, std::shared_ptr<const Tensor4<T>>);         \
    template Value<T> sum<T>(const Value<T>&);

MREN_INSTANTIATE_AUTOGRAD(float)
MREN_INSTANTIATE_AUTOGRAD(double)

#undef MREN_INSTANTIATE_AUTOGRAD

} // namespace mren::autograd
