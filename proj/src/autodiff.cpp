#include "bioadapt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace bioadapt::ad {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

void check_finite(const Tensor& a, const char* op) {
    for (double v : a.values()) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(op) + ": non-finite input value");
        }
    }
}

double norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->values.assign(numel(d->shape), 0.0);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.values().begin(), t.values().end(), value);
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (numel(shape) != values.size()) {
        throw DimensionError("Tensor::from: shape " + shape_str(shape) + " does not hold " +
                             std::to_string(values.size()) + " values");
    }
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->values = std::move(values);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({}, {value}, requires_grad);
}

double Tensor::item() const {
    if (size() != 1) {
        throw ContractError("item(): tensor of shape " + shape_str(shape()) + " is not scalar");
    }
    return d_->values[0];
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw DimensionError("rows(): tensor is not 2-D: " + shape_str(shape()));
    return d_->shape[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw DimensionError("cols(): tensor is not 2-D: " + shape_str(shape()));
    return d_->shape[1];
}

double& Tensor::at(std::size_t i, std::size_t j) { return d_->values[i * cols() + j]; }
double Tensor::at(std::size_t i, std::size_t j) const { return d_->values[i * cols() + j]; }

std::vector<double>& Tensor::grad() {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
    return d_->grad;
}

const std::vector<double>& Tensor::grad() const {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
    return d_->grad;
}

void Tensor::zero_grad() {
    if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

// ---- Tape ------------------------------------------------------------------

void Tape::track(const Tensor& t) {
    TensorData* p = t.data();
    if (seen_.insert(p).second) tracked_.push_back(t.d_);
}

Tensor Tape::make(Shape shape, bool requires_grad) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    track(t);
    return t;
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1 || !loss.shape().empty()) {
        throw ContractError("backward: loss must be scalar, got shape " +
                            shape_str(loss.shape()));
    }
    if (!seen_.count(loss.data())) {
        throw ContractError("backward: loss is not connected to this tape");
    }
    for (auto& d : tracked_) {
        d->adj.assign(d->values.size(), 0.0);
    }
    loss.data()->adj[0] = 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    for (auto& d : tracked_) {
        if (!d->requires_grad) continue;
        if (d->grad.empty()) d->grad.assign(d->values.size(), 0.0);
        for (std::size_t i = 0; i < d->adj.size(); ++i) d->grad[i] += d->adj[i];
    }
}

// ---- op helpers ------------------------------------------------------------

namespace {

struct OpCtx {
    Tape& tape;
    bool needs_grad;
};

OpCtx begin_op(Tape& t, std::initializer_list<const Tensor*> inputs) {
    bool needs = false;
    for (const Tensor* in : inputs) {
        t.track(*in);
        needs = needs || in->requires_grad() || !in->data()->adj.empty();
    }
    // Intermediates do not carry requires_grad themselves; gradient flow is
    // decided per-pass from whether any input is tracked upstream. Tracking
    // every touched tensor keeps adjoint buffers alive for the whole tape.
    (void)needs;
    return OpCtx{t, true};
}

}  // namespace

// For simplicity every op records its reverse rule; closures cost little at
// this scale and recording unconditionally keeps gradient routing uniform.

Tensor add(Tape& t, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    begin_op(t, {&a, &b});
    Tensor out = t.make(a.shape(), false);
    for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) + b.at(i);
    TensorData *ad = a.data(), *bd = b.data(), *od = out.data();
    t.record([ad, bd, od] {
        for (std::size_t i = 0; i < od->adj.size(); ++i) {
            ad->adj[i] += od->adj[i];
            bd->adj[i] += od->adj[i];
        }
    });
    return out;
}

Tensor sub(Tape& t, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("sub: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    begin_op(t, {&a, &b});
    Tensor out = t.make(a.shape(), false);
    for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) - b.at(i);
    TensorData *ad = a.data(), *bd = b.data(), *od = out.data();
    t.record([ad, bd, od] {
        for (std::size_t i = 0; i < od->adj.size(); ++i) {
            ad->adj[i] += od->adj[i];
            bd->adj[i] -= od->adj[i];
        }
    });
    return out;
}

Tensor mul(Tape& t, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    begin_op(t, {&a, &b});
    Tensor out = t.make(a.shape(), false);
    for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) * b.at(i);
    TensorData *ad = a.data(), *bd = b.data(), *od = out.data();
    t.record([ad, bd, od] {
        for (std::size_t i = 0; i < od->adj.size(); ++i) {
            ad->adj[i] += od->adj[i] * bd->values[i];
            bd->adj[i] += od->adj[i] * ad->values[i];
        }
    });
    return out;
}

Tensor scale(Tape& t, const Tensor& a, double c) {
    begin_op(t, {&a});
    Tensor out = t.make(a.shape(), false);
    for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) * c;
    TensorData *ad = a.data(), *od = out.data();
    t.record([ad, od, c] {
        for (std::size_t i = 0; i < od->adj.size(); ++i) ad->adj[i] += od->adj[i] * c;
    });
    return out;
}

Tensor add_scalar(Tape& t, const Tensor& a, double c) {
    begin_op(t, {&a});
    Tensor out = t.make(a.shape(), false);
    for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) + c;
    TensorData *ad = a.data(), *od = out.data();
    t.record([ad, od] {
        for (std::size_t i = 0; i < od->adj.size(); ++i) ad->adj[i] += od->adj[i];
    });
    return out;
}

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    begin_op(t, {&a, &b});
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = t.make({m, n}, false);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    double* ov = out.values().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = bv + p * n;
            double* orow = ov + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    TensorData *ad = a.data(), *bd = b.data(), *od = out.data();
    t.record([ad, bd, od, m, k, n] {
        // a.grad += g . b^T ; b.grad += a^T . g
        const double* g = od->adj.data();
        const double* av2 = ad->values.data();
        const double* bv2 = bd->values.data();
        double* ga = ad->adj.data();
        double* gb = bd->adj.data();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
                double s = 0.0;
                const double* grow = g + i * n;
                const double* brow = bv2 + p * n;
                for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                ga[i * k + p] += s;
            }
        }
        for (std::size_t p = 0; p < k; ++p) {
            for (std::size_t i = 0; i < m; ++i) {
                const double aip = av2[i * k + p];
                if (aip == 0.0) continue;
                const double* grow = g + i * n;
                double* gbrow = gb + p * n;
                for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
            }
        }
    });
    return out;
}

Tensor transpose(Tape& t, const Tensor& a) {
    if (a.rank() != 2) {
        throw DimensionError("transpose: expected 2-D tensor, got " + shape_str(a.shape()));
    }
    begin_op(t, {&a});
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out = t.make({n, m}, false);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
    TensorData *ad = a.data(), *od = out.data();
    t.record([ad, od, m, n] {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ad->adj[i * n + j] += od->adj[j * m + i];
    });
    return out;
}

Tensor add_bias(Tape& t, const Tensor& a, const Tensor& bias) {
    if (a.rank() != 2 || bias.rank() != 1 || bias.shape()[0] != a.cols()) {
        throw DimensionError("add_bias: shapes " + shape_str(a.shape()) + " and " +
                             shape_str(bias.shape()) + " do not broadcast");
    }
    begin_op(t, {&a, &bias});
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out = t.make({m, n}, false);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = a.at(i, j) + bias.at(j);
    TensorData *ad = a.data(), *bd = bias.data(), *od = out.data();
    t.record([ad, bd, od, m, n] {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                ad->adj[i * n + j] += od->adj[i * n + j];
                bd->adj[j] += od->adj[i * n + j];
            }
        }
    });
    return out;
}

Tensor reshape(Tape& t, const Tensor& a, Shape shape) {
    if (numel(shape) != a.size()) {
        throw DimensionError("reshape: " + shape_str(a.shape()) + " cannot become " +
                             shape_str(shape));
    }
    begin_op(t, {&a});
    Tensor out = t.make(std::move(shape), false);
    out.values() = a.values();
    TensorData *ad = a.data(), *od = out.data();
    t.record([ad, od] {
        for (std::size_t i = 0; i < od->adj.size(); ++i) ad->adj[i] += od->adj[i];
    });
    return out;
}

Tensor slice(Tape& t, const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
    if (a.rank() == 1) {
        if (axis != 0 || begin > end || end > a.shape()[0]) {
            throw DimensionError("slice: bad range on " + shape_str(a.shape()));
        }
        begin_op(t, {&a});
        Tensor out = t.make({end - begin}, false);
        for (std::size_t i = begin; i < end; ++i) out.at(i - begin) = a.at(i);
        TensorData *ad = a.data(), *od = out.data();
        t.record([ad, od, begin] {
            for (std::size_t i = 0; i < od->adj.size(); ++i) ad->adj[begin + i] += od->adj[i];
        });
        return out;
    }
    if (a.rank() != 2 || axis > 1) {
        throw DimensionError("slice: expected 1-D or 2-D tensor, got " + shape_str(a.shape()));
    }
    const std::size_t extent = a.shape()[axis];
    if (begin > end || end > extent) {
        throw DimensionError("slice: range [" + std::to_string(begin) + "," +
                             std::to_string(end) + ") out of bounds for " +
                             shape_str(a.shape()));
    }
    begin_op(t, {&a});
    const std::size_t m = a.rows(), n = a.cols();
    const std::size_t om = axis == 0 ? end - begin : m;
    const std::size_t on = axis == 1 ? end - begin : n;
    Tensor out = t.make({om, on}, false);
    for (std::size_t i = 0; i < om; ++i) {
        for (std::size_t j = 0; j < on; ++j) {
            const std::size_t si = axis == 0 ? i + begin : i;
            const std::size_t sj = axis == 1 ? j + begin : j;
            out.at(i, j) = a.at(si, sj);
        }
    }
    TensorData *ad = a.data(), *od = out.data();
    t.record([ad, od, axis, begin, om, on, n] {
        for (std::size_t i = 0; i < om; ++i) {
            for (std::size_t j = 0; j < on; ++j) {
                const std::size_t si = axis == 0 ? i + begin : i;
                const std::size_t sj = axis == 1 ? j + begin : j;
                ad->adj[si * n + sj] += od->adj[i * on + j];
            }
        }
    });
    return out;
}

Tensor row(Tape& t, const Tensor& a, std::size_t r) {
    Tensor s = slice(t, a, 0, r, r + 1);
    return reshape(t, s, {a.cols()});
}

Tensor concatenate(Tape& t, const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concatenate: no inputs");
    if (parts[0].rank() == 1) {
        if (axis != 0) throw DimensionError("concatenate: 1-D tensors concatenate on axis 0");
        std::size_t total = 0;
        for (const Tensor& p : parts) {
            if (p.rank() != 1) throw DimensionError("concatenate: mixed ranks");
            t.track(p);
            total += p.size();
        }
        Tensor out = t.make({total}, false);
        std::size_t off = 0;
        std::vector<std::pair<TensorData*, std::size_t>> spans;
        for (const Tensor& p : parts) {
            for (std::size_t i = 0; i < p.size(); ++i) out.at(off + i) = p.at(i);
            spans.emplace_back(p.data(), off);
            off += p.size();
        }
        TensorData* od = out.data();
        t.record([spans, od] {
            for (auto& [pd, o] : spans)
                for (std::size_t i = 0; i < pd->adj.size(); ++i) pd->adj[i] += od->adj[o + i];
        });
        return out;
    }
    if (axis > 1) throw DimensionError("concatenate: axis must be 0 or 1 for 2-D");
    const std::size_t fixed = axis == 0 ? parts[0].cols() : parts[0].rows();
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != 2) throw DimensionError("concatenate: mixed ranks");
        const std::size_t pf = axis == 0 ? p.cols() : p.rows();
        if (pf != fixed) {
            throw DimensionError("concatenate: shape mismatch " + shape_str(parts[0].shape()) +
                                 " vs " + shape_str(p.shape()));
        }
        t.track(p);
        total += axis == 0 ? p.rows() : p.cols();
    }
    const std::size_t om = axis == 0 ? total : fixed;
    const std::size_t on = axis == 0 ? fixed : total;
    Tensor out = t.make({om, on}, false);
    std::size_t off = 0;
    struct Span {
        TensorData* pd;
        std::size_t off, m, n;
    };
    std::vector<Span> spans;
    for (const Tensor& p : parts) {
        const std::size_t pm = p.rows(), pn = p.cols();
        for (std::size_t i = 0; i < pm; ++i) {
            for (std::size_t j = 0; j < pn; ++j) {
                if (axis == 0)
                    out.at(off + i, j) = p.at(i, j);
                else
                    out.at(i, off + j) = p.at(i, j);
            }
        }
        spans.push_back({p.data(), off, pm, pn});
        off += axis == 0 ? pm : pn;
    }
    TensorData* od = out.data();
    t.record([spans, od, axis, on] {
        for (const Span& s : spans) {
            for (std::size_t i = 0; i < s.m; ++i) {
                for (std::size_t j = 0; j < s.n; ++j) {
                    const std::size_t oi = axis == 0 ? s.off + i : i;
                    const std::size_t oj = axis == 1 ? s.off + j : j;
                    s.pd->adj[i * s.n + j] += od->adj[oi * on + oj];
                }
            }
        }
    });
    return out;
}

namespace {

// Softmax over contiguous groups described by (group count, group size, stride
// pattern). For axis=1 of 2-D the rows are contiguous; for axis=0 we walk
// columns. 1-D is a single group.
void softmax_groups(const std::vector<double>& in, std::vector<double>& out, std::size_t groups,
                    std::size_t len, std::size_t outer_stride, std::size_t inner_stride) {
    for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t base = g * outer_stride;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, in[base + i * inner_stride]);
        double z = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            const double e = std::exp(in[base + i * inner_stride] - mx);
            out[base + i * inner_stride] = e;
            z += e;
        }
        for (std::size_t i = 0; i < len; ++i) out[base + i * inner_stride] /= z;
    }
}

void softmax_backward_groups(const std::vector<double>& y, const std::vector<double>& gout,
                             std::vector<double>& gin, std::size_t groups, std::size_t len,
                             std::size_t outer_stride, std::size_t inner_stride) {
    for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t base = g * outer_stride;
        double dot = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            const std::size_t k = base + i * inner_stride;
            dot += gout[k] * y[k];
        }
        for (std::size_t i = 0; i < len; ++i) {
            const std::size_t k = base + i * inner_stride;
            gin[k] += y[k] * (gout[k] - dot);
        }
    }
}

}  // namespace

Tensor softmax(Tape& t, const Tensor& a, std::size_t axis) {
    check_finite(a, "softmax");
    if (a.size() == 0) throw DimensionError("softmax: empty tensor");
    begin_op(t, {&a});
    Tensor out = t.make(a.shape(), false);
    std::size_t groups, len, outer, inner;
    if (a.rank() <= 1) {
        groups = 1;
        len = a.size();
        outer = 0;
        inner = 1;
    } else if (a.rank() == 2 && axis == 1) {
        groups = a.rows();
        len = a.cols();
        outer = a.cols();
        inner = 1;
    } else if (a.rank() == 2 && axis == 0) {
        groups = a.cols();
        len = a.rows();
        outer = 1;
        inner = a.cols();
    } else {
        throw DimensionError("softmax: unsupported axis " + std::to_string(axis) + " for " +
                             shape_str(a.shape()));
    }
    softmax_groups(a.values(), out.values(), groups, len, outer, inner);
    TensorData *ad = a.data(), *od = out.data();
    t.record([ad, od, groups, len, outer, inner] {
        softmax_backward_groups(od->values, od->adj, ad->adj, groups, len, outer, inner);
    });
    return out;
}

Tensor masked_softmax(Tape& t, const Tensor& a, const std::vector<bool>& key_valid) {
    check_finite(a, "masked_softmax");
    if (a.rank() != 2 || key_valid.size() != a.cols()) {
        throw DimensionError("masked_softmax: mask length " + std::to_string(key_valid.size()) +
                             " does not match " + shape_str(a.shape()));
    }
    if (std::none_of(key_valid.begin(), key_valid.end(), [](bool b) { return b; })) {
        throw NumericError("masked_softmax: all key positions masked");
    }
    begin_op(t, {&a});
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out = t.make({m, n}, false);
    for (std::size_t i = 0; i < m; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j)
            if (key_valid[j]) mx = std::max(mx, a.at(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (!key_valid[j]) continue;
            const double e = std::exp(a.at(i, j) - mx);
            out.at(i, j) = e;
            z += e;
        }
        for (std::size_t j = 0; j < n; ++j) {
            if (key_valid[j])
                out.at(i, j) /= z;
            else
                out.at(i, j) = 0.0;  // masked keys get exactly zero weight
        }
    }
    TensorData *ad = a.data(), *od = out.data();
    auto mask = key_valid;
    t.record([ad, od, m, n, mask] {
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (mask[j]) dot += od->adj[i * n + j] * od->values[i * n + j];
            }
            for (std::size_t j = 0; j < n; ++j) {
                if (!mask[j]) continue;
                const double y = od->values[i * n + j];
                ad->adj[i * n + j] += y * (od->adj[i * n + j] - dot);
            }
        }
    });
    return out;
}

Tensor log(Tape& t, const Tensor& a) {
    begin_op(t, {&a});
    Tensor out = t.make(a.shape(), false);
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!(a.at(i) > 0.0)) {
            throw NumericError("log: non-positive input " + std::to_string(a.at(i)));
        }
        out.at(i) = std::log(a.at(i));
    }
    TensorData *ad = a.data(), *od = out.data();
    t.record([ad, od] {
        for (std::size_t i = 0; i < od->adj.size(); ++i)
            ad->adj[i] += od->adj[i] / ad->values[i];
    });
    return out;
}

Tensor relu(Tape& t, const Tensor& a) {
    begin_op(t, {&a});
    Tensor out = t.make(a.shape(), false);
    for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) > 0.0 ? a.at(i) : 0.0;
    TensorData *ad = a.data(), *od = out.data();
    t.record([ad, od] {
        for (std::size_t i = 0; i < od->adj.size(); ++i)
            if (ad->values[i] > 0.0) ad->adj[i] += od->adj[i];
    });
    return out;
}

Tensor gelu(Tape& t, const Tensor& a) {
    begin_op(t, {&a});
    Tensor out = t.make(a.shape(), false);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a.at(i);
        out.at(i) = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    TensorData *ad = a.data(), *od = out.data();
    t.record([ad, od] {
        for (std::size_t i = 0; i < od->adj.size(); ++i) {
            const double x = ad->values[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            ad->adj[i] += od->adj[i] * (cdf + x * pdf);
        }
    });
    return out;
}

Tensor layer_norm(Tape& t, const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps) {
    if (a.rank() != 2 || gamma.rank() != 1 || beta.rank() != 1 || gamma.shape()[0] != a.cols() ||
        beta.shape()[0] != a.cols()) {
        throw DimensionError("layer_norm: shapes " + shape_str(a.shape()) + ", " +
                             shape_str(gamma.shape()) + ", " + shape_str(beta.shape()));
    }
    begin_op(t, {&a, &gamma, &beta});
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out = t.make({m, n}, false);
    auto xhat = std::make_shared<std::vector<double>>(m * n);
    auto inv_sigma = std::make_shared<std::vector<double>>(m);
    for (std::size_t i = 0; i < m; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += a.at(i, j);
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = a.at(i, j) - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_sigma)[i] = is;
        for (std::size_t j = 0; j < n; ++j) {
            const double xh = (a.at(i, j) - mu) * is;
            (*xhat)[i * n + j] = xh;
            out.at(i, j) = gamma.at(j) * xh + beta.at(j);
        }
    }
    TensorData *ad = a.data(), *gd = gamma.data(), *bd = beta.data(), *od = out.data();
    t.record([ad, gd, bd, od, xhat, inv_sigma, m, n] {
        for (std::size_t i = 0; i < m; ++i) {
            double mean_gh = 0.0, mean_ghx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double g = od->adj[i * n + j];
                const double xh = (*xhat)[i * n + j];
                gd->adj[j] += g * xh;
                bd->adj[j] += g;
                const double gh = g * gd->values[j];
                mean_gh += gh;
                mean_ghx += gh * xh;
            }
            mean_gh /= static_cast<double>(n);
            mean_ghx /= static_cast<double>(n);
            const double is = (*inv_sigma)[i];
            for (std::size_t j = 0; j < n; ++j) {
                const double gh = od->adj[i * n + j] * gd->values[j];
                const double xh = (*xhat)[i * n + j];
                ad->adj[i * n + j] += (gh - mean_gh - xh * mean_ghx) * is;
            }
        }
    });
    return out;
}

Tensor dropout(Tape& t, const Tensor& a, double p, bool train_flag, Rng& rng) {
    if (p < 0.0 || p >= 1.0) {
        throw ConfigError("dropout: rate must be in [0,1), got " + std::to_string(p));
    }
    if (!train_flag || p == 0.0) return a;  // identity, nothing recorded
    begin_op(t, {&a});
    Tensor out = t.make(a.shape(), false);
    auto mask = std::make_shared<std::vector<double>>(a.size());
    const double keep_scale = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double m = rng.bernoulli(p) ? 0.0 : keep_scale;
        (*mask)[i] = m;
        out.at(i) = a.at(i) * m;
    }
    TensorData *ad = a.data(), *od = out.data();
    t.record([ad, od, mask] {
        for (std::size_t i = 0; i < od->adj.size(); ++i) ad->adj[i] += od->adj[i] * (*mask)[i];
    });
    return out;
}

Tensor embedding_lookup(Tape& t, const Tensor& table, const std::vector<std::size_t>& ids) {
    if (table.rank() != 2) {
        throw DimensionError("embedding_lookup: table must be 2-D, got " +
                             shape_str(table.shape()));
    }
    const std::size_t v = table.rows(), h = table.cols();
    for (std::size_t id : ids) {
        if (id >= v) {
            throw InputError("embedding_lookup: id " + std::to_string(id) +
                             " out of range for table " + shape_str(table.shape()));
        }
    }
    begin_op(t, {&table});
    Tensor out = t.make({ids.size(), h}, false);
    for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < h; ++j) out.at(i, j) = table.at(ids[i], j);
    TensorData *td = table.data(), *od = out.data();
    auto idc = ids;
    t.record([td, od, idc, h] {
        for (std::size_t i = 0; i < idc.size(); ++i)
            for (std::size_t j = 0; j < h; ++j) td->adj[idc[i] * h + j] += od->adj[i * h + j];
    });
    return out;
}

Tensor sum(Tape& t, const Tensor& a) {
    begin_op(t, {&a});
    Tensor out = t.make({}, false);
    double s = 0.0;
    for (double v : a.values()) s += v;
    out.at(0) = s;
    TensorData *ad = a.data(), *od = out.data();
    t.record([ad, od] {
        for (std::size_t i = 0; i < ad->adj.size(); ++i) ad->adj[i] += od->adj[0];
    });
    return out;
}

Tensor mean(Tape& t, const Tensor& a) {
    Tensor s = sum(t, a);
    return scale(t, s, 1.0 / static_cast<double>(a.size()));
}

Tensor pick(Tape& t, const Tensor& a, std::size_t flat_index) {
    if (flat_index >= a.size()) {
        throw DimensionError("pick: index " + std::to_string(flat_index) + " out of range for " +
                             shape_str(a.shape()));
    }
    begin_op(t, {&a});
    Tensor out = t.make({}, false);
    out.at(0) = a.at(flat_index);
    TensorData *ad = a.data(), *od = out.data();
    t.record([ad, od, flat_index] { ad->adj[flat_index] += od->adj[0]; });
    return out;
}

Tensor cosine_similarity(Tape& t, const Tensor& u, const Tensor& v) {
    if (u.shape() != v.shape() || u.rank() != 1) {
        throw DimensionError("cosine_similarity: expected equal 1-D shapes, got " +
                             shape_str(u.shape()) + " and " + shape_str(v.shape()));
    }
    const double nu = norm(u.values());
    const double nv = norm(v.values());
    if (nu == 0.0 || nv == 0.0) {
        throw DegenerateVectorError("cosine_similarity: zero-norm input vector");
    }
    begin_op(t, {&u, &v});
    double dot = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) dot += u.at(i) * v.at(i);
    Tensor out = t.make({}, false);
    out.at(0) = dot / (nu * nv);
    TensorData *ud = u.data(), *vd = v.data(), *od = out.data();
    t.record([ud, vd, od, nu, nv, dot] {
        const double g = od->adj[0];
        const double inv = 1.0 / (nu * nv);
        for (std::size_t i = 0; i < ud->adj.size(); ++i) {
            ud->adj[i] += g * (vd->values[i] - (dot / (nu * nu)) * ud->values[i]) * inv;
            vd->adj[i] += g * (ud->values[i] - (dot / (nv * nv)) * vd->values[i]) * inv;
        }
    });
    return out;
}

Tensor cross_entropy_from_logprobs(Tape& t, const Tensor& logp, std::size_t golden) {
    if (logp.rank() != 1) {
        throw DimensionError("cross_entropy_from_logprobs: expected 1-D log-probabilities");
    }
    if (golden >= logp.size()) {
        throw LabelError("cross_entropy_from_logprobs: golden position " +
                         std::to_string(golden) + " out of range " +
                         std::to_string(logp.size()));
    }
    begin_op(t, {&logp});
    Tensor out = t.make({}, false);
    out.at(0) = -logp.at(golden);
    TensorData *ld = logp.data(), *od = out.data();
    t.record([ld, od, golden] { ld->adj[golden] -= od->adj[0]; });
    return out;
}

Tensor gradient_reversal(Tape& t, const Tensor& x, double lambda) {
    if (lambda < 0.0) {
        throw ConfigError("gradient_reversal: lambda must be non-negative, got " +
                          std::to_string(lambda));
    }
    begin_op(t, {&x});
    Tensor out = t.make(x.shape(), false);
    out.values() = x.values();
    TensorData *xd = x.data(), *od = out.data();
    t.record([xd, od, lambda] {
        for (std::size_t i = 0; i < od->adj.size(); ++i) xd->adj[i] += -lambda * od->adj[i];
    });
    return out;
}

}  // namespace bioadapt::ad
