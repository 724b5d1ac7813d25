// autodiff.cpp - Tape, tensors and differentiable primitives.

#include "lamotion/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace lamotion::ad {

size_t shape_numel(const std::vector<int64_t> &shape) {
    int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw std::invalid_argument("negative tensor dimension");
        n *= d;
    }
    return static_cast<size_t>(n);
}

Tensor::Tensor(std::vector<int64_t> s, double fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}

Tensor::Tensor(std::vector<int64_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_numel(shape)) {
        throw std::invalid_argument("Tensor data length " + std::to_string(data.size()) + " does not match shape " +
                                    shape_str());
    }
}

int64_t Tensor::dim(int axis) const {
    const int r = static_cast<int>(shape.size());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) throw std::out_of_range("Tensor::dim: axis out of range for shape " + shape_str());
    return shape[static_cast<size_t>(a)];
}

double Tensor::item() const {
    if (data.size() != 1) throw std::invalid_argument("Tensor::item on non-scalar " + shape_str());
    return data[0];
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
}

const Tensor &Var::value() const { return tape->value(id); }
const Tensor &Var::grad() const { return tape->grad(id); }

namespace {
void require_finite(const Tensor &t, const char *what) {
    for (double v : t.data) {
        if (!std::isfinite(v)) throw std::runtime_error(std::string(what) + ": non-finite value");
    }
}
} // namespace

Var Tape::constant(Tensor t) {
    require_finite(t, "constant");
    Node n;
    n.op = "constant";
    n.value = std::move(t);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor t, bool requires_grad) {
    require_finite(t, "leaf");
    Node n;
    n.op = "leaf";
    n.value = std::move(t);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
}

const Tensor &Tape::grad(int id) const {
    const auto &n = nodes_.at(static_cast<size_t>(id));
    if (!n.has_grad) {
        if (!consumed_) throw std::logic_error("Tape::grad read before backward()");
        return empty_;
    }
    return n.grad;
}

Var Tape::record(const char *op, Tensor value, std::vector<Var> inputs, BackwardFn fn) {
    for (double v : value.data) {
        if (!std::isfinite(v)) throw std::runtime_error(std::string("non-finite output from primitive ") + op);
    }
    Node n;
    n.op = op;
    n.value = std::move(value);
    for (const auto &v : inputs) {
        if (v.tape != this) throw std::invalid_argument(std::string(op) + ": input recorded on a different tape");
        n.inputs.push_back(v.id);
        n.requires_grad = n.requires_grad || nodes_[static_cast<size_t>(v.id)].requires_grad;
    }
    if (n.requires_grad) n.fn = std::move(fn);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
}

Tensor *Tape::grad_buffer(int id) {
    auto &n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad) return nullptr;
    if (!n.has_grad) {
        n.grad = Tensor(n.value.shape, 0.0);
        n.has_grad = true;
    }
    return &n.grad;
}

void Tape::backward(Var out) {
    if (value(out.id).size() != 1) throw std::invalid_argument("Tape::backward(out) needs a scalar output");
    backward(out, Tensor(value(out.id).shape, 1.0));
}

void Tape::backward(Var out, const Tensor &seed) {
    if (consumed_) throw std::logic_error("Tape::backward: tape already consumed; re-run the forward pass");
    if (out.tape != this) throw std::invalid_argument("Tape::backward: output belongs to another tape");
    auto &root = nodes_.at(static_cast<size_t>(out.id));
    if (seed.shape != root.value.shape) {
        throw std::invalid_argument("Tape::backward: seed shape " + seed.shape_str() + " vs output " + root.value.shape_str());
    }
    root.grad = seed;
    root.has_grad = true;
    for (int id = out.id; id >= 0; --id) {
        auto &n = nodes_[static_cast<size_t>(id)];
        if (n.has_grad && n.fn) n.fn(*this, id);
    }
    for (auto &n : nodes_) {
        if (n.requires_grad && !n.has_grad) {
            n.grad = Tensor(n.value.shape, 0.0);
            n.has_grad = true;
        }
    }
    consumed_ = true;
}

// ---- helpers ----------------------------------------------------------------------------------

namespace {

void require_same_shape(const char *op, const Tensor &a, const Tensor &b) {
    if (a.shape != b.shape) throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

template <class F>
Var unary(const char *op, Var a, Tensor out, F dfdx) {
    const int ia = a.id;
    return a.tape->record(op, std::move(out), {a}, [ia, dfdx](Tape &t, int self) {
        Tensor *ga = t.grad_buffer(ia);
        if (ga == nullptr) return;
        const auto &g = t.out_grad(self).data;
        const auto &x = t.value(ia).data;
        const auto &y = t.value(self).data;
        for (size_t i = 0; i < g.size(); ++i) ga->data[i] += g[i] * dfdx(x[i], y[i]);
    });
}

} // namespace

Var add(Var a, Var b) {
    require_same_shape("add", a.value(), b.value());
    Tensor out = a.value();
    for (size_t i = 0; i < out.size(); ++i) out.data[i] += b.value().data[i];
    const int ia = a.id, ib = b.id;
    return a.tape->record("add", std::move(out), {a, b}, [ia, ib](Tape &t, int self) {
        const auto &g = t.out_grad(self).data;
        for (int id : {ia, ib}) {
            if (Tensor *gx = t.grad_buffer(id)) {
                for (size_t i = 0; i < g.size(); ++i) gx->data[i] += g[i];
            }
        }
    });
}

Var sub(Var a, Var b) {
    require_same_shape("sub", a.value(), b.value());
    Tensor out = a.value();
    for (size_t i = 0; i < out.size(); ++i) out.data[i] -= b.value().data[i];
    const int ia = a.id, ib = b.id;
    return a.tape->record("sub", std::move(out), {a, b}, [ia, ib](Tape &t, int self) {
        const auto &g = t.out_grad(self).data;
        if (Tensor *ga = t.grad_buffer(ia)) {
            for (size_t i = 0; i < g.size(); ++i) ga->data[i] += g[i];
        }
        if (Tensor *gb = t.grad_buffer(ib)) {
            for (size_t i = 0; i < g.size(); ++i) gb->data[i] -= g[i];
        }
    });
}

Var mul(Var a, Var b) {
    require_same_shape("mul", a.value(), b.value());
    Tensor out = a.value();
    for (size_t i = 0; i < out.size(); ++i) out.data[i] *= b.value().data[i];
    const int ia = a.id, ib = b.id;
    return a.tape->record("mul", std::move(out), {a, b}, [ia, ib](Tape &t, int self) {
        const auto &g = t.out_grad(self).data;
        const auto &av = t.value(ia).data;
        const auto &bv = t.value(ib).data;
        if (Tensor *ga = t.grad_buffer(ia)) {
            for (size_t i = 0; i < g.size(); ++i) ga->data[i] += g[i] * bv[i];
        }
        if (Tensor *gb = t.grad_buffer(ib)) {
            for (size_t i = 0; i < g.size(); ++i) gb->data[i] += g[i] * av[i];
        }
    });
}

Var scale_by(Var a, Var s) {
    if (s.value().size() != 1) throw std::invalid_argument("scale_by: factor must have one element, got " + s.value().shape_str());
    const double f = s.value().data[0];
    Tensor out = a.value();
    for (auto &v : out.data) v *= f;
    const int ia = a.id, is = s.id;
    return a.tape->record("scale_by", std::move(out), {a, s}, [ia, is](Tape &t, int self) {
        const auto &g = t.out_grad(self).data;
        if (Tensor *ga = t.grad_buffer(ia)) {
            const double f = t.value(is).data[0];
            for (size_t i = 0; i < g.size(); ++i) ga->data[i] += g[i] * f;
        }
        if (Tensor *gs = t.grad_buffer(is)) {
            const auto &av = t.value(ia).data;
            double acc = 0.0;
            for (size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
            gs->data[0] += acc;
        }
    });
}

Var scale(Var a, double s) {
    Tensor out = a.value();
    for (auto &v : out.data) v *= s;
    return unary("scale", a, std::move(out), [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
    Tensor out = a.value();
    for (auto &v : out.data) v += s;
    return unary("add_scalar", a, std::move(out), [](double, double) { return 1.0; });
}

Var sum(Var a) {
    const auto &x = a.value().data;
    const double s = std::accumulate(x.begin(), x.end(), 0.0);
    const int ia = a.id;
    return a.tape->record("sum", Tensor::scalar(s), {a}, [ia](Tape &t, int self) {
        if (Tensor *ga = t.grad_buffer(ia)) {
            const double g = t.out_grad(self).data[0];
            for (auto &v : ga->data) v += g;
        }
    });
}

Var mean(Var a) {
    const auto n = static_cast<double>(a.value().size());
    if (n == 0) throw std::invalid_argument("mean: empty tensor");
    return scale(sum(a), 1.0 / n);
}

Var mse(Var a, Var b) {
    require_same_shape("mse", a.value(), b.value());
    const auto &x = a.value().data;
    const auto &y = b.value().data;
    if (x.empty()) throw std::invalid_argument("mse: empty tensors");
    double s = 0.0;
    for (size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    const double n = static_cast<double>(x.size());
    const int ia = a.id, ib = b.id;
    return a.tape->record("mse", Tensor::scalar(s / n), {a, b}, [ia, ib, n](Tape &t, int self) {
        const double g = t.out_grad(self).data[0];
        const auto &xv = t.value(ia).data;
        const auto &yv = t.value(ib).data;
        Tensor *ga = t.grad_buffer(ia);
        Tensor *gb = t.grad_buffer(ib);
        for (size_t i = 0; i < xv.size(); ++i) {
            const double d = 2.0 * (xv[i] - yv[i]) / n * g;
            if (ga) ga->data[i] += d;
            if (gb) gb->data[i] -= d;
        }
    });
}

Var relu(Var a) {
    Tensor out = a.value();
    uint64_t bits = 0;
    int nbits = 0;
    for (auto &v : out.data) {
        const bool on = v > 0.0;
        if (!on) v = 0.0;
        bits = (bits << 1) | (on ? 1U : 0U);
        if (++nbits == 64) {
            a.tape->note_branch(bits);
            bits = 0;
            nbits = 0;
        }
    }
    a.tape->note_branch(bits ^ (static_cast<uint64_t>(nbits) << 58));
    return unary("relu", a, std::move(out), [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var softplus(Var a) {
    Tensor out = a.value();
    for (auto &v : out.data) v = v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
    return unary("softplus", a, std::move(out), [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Var reshape(Var a, std::vector<int64_t> shape) {
    if (shape_numel(shape) != a.value().size()) {
        throw std::invalid_argument("reshape: cannot view " + a.value().shape_str() + " with " +
                                    Tensor(shape).shape_str());
    }
    Tensor out(std::move(shape), a.value().data);
    return unary("reshape", a, std::move(out), [](double, double) { return 1.0; });
}

Var concat(const std::vector<Var> &xs, int axis) {
    if (xs.empty()) throw std::invalid_argument("concat: no inputs");
    const auto &s0 = xs[0].value().shape;
    const int r = static_cast<int>(s0.size());
    const int ax = axis < 0 ? axis + r : axis;
    if (ax < 0 || ax >= r) throw std::invalid_argument("concat: axis out of range for " + xs[0].value().shape_str());
    std::vector<int64_t> out_shape = s0;
    out_shape[static_cast<size_t>(ax)] = 0;
    for (const auto &x : xs) {
        const auto &s = x.value().shape;
        for (int d = 0; d < r; ++d) {
            if (d != ax && (s.size() != s0.size() || s[static_cast<size_t>(d)] != s0[static_cast<size_t>(d)])) {
                throw std::invalid_argument("concat: incompatible shapes " + xs[0].value().shape_str() + " and " +
                                            x.value().shape_str());
            }
        }
        out_shape[static_cast<size_t>(ax)] += s[static_cast<size_t>(ax)];
    }
    size_t outer = 1, inner = 1;
    for (int d = 0; d < ax; ++d) outer *= static_cast<size_t>(s0[static_cast<size_t>(d)]);
    for (int d = ax + 1; d < r; ++d) inner *= static_cast<size_t>(s0[static_cast<size_t>(d)]);
    const auto total_axis = static_cast<size_t>(out_shape[static_cast<size_t>(ax)]);

    Tensor out(out_shape);
    std::vector<int> ids;
    std::vector<size_t> offsets;
    size_t off = 0;
    for (const auto &x : xs) {
        const auto len = static_cast<size_t>(x.value().shape[static_cast<size_t>(ax)]);
        for (size_t o = 0; o < outer; ++o) {
            std::copy_n(x.value().data.begin() + static_cast<std::ptrdiff_t>(o * len * inner), len * inner,
                        out.data.begin() + static_cast<std::ptrdiff_t>((o * total_axis + off) * inner));
        }
        ids.push_back(x.id);
        offsets.push_back(off);
        off += len;
    }
    return xs[0].tape->record("concat", std::move(out), xs, [ids, offsets, outer, inner, total_axis, ax](Tape &t, int self) {
        const auto &g = t.out_grad(self).data;
        for (size_t n = 0; n < ids.size(); ++n) {
            Tensor *gx = t.grad_buffer(ids[n]);
            if (gx == nullptr) continue;
            const auto len = static_cast<size_t>(t.value(ids[n]).shape[static_cast<size_t>(ax)]);
            for (size_t o = 0; o < outer; ++o) {
                for (size_t q = 0; q < len * inner; ++q) {
                    gx->data[o * len * inner + q] += g[(o * total_axis + offsets[n]) * inner + q];
                }
            }
        }
    });
}

Var dense(Var x, Var w, Var b) {
    const auto &xv = x.value();
    const auto &wv = w.value();
    const auto &bv = b.value();
    if (wv.rank() != 2 || bv.rank() != 1 || xv.rank() < 1 || wv.shape[1] != xv.shape.back() || bv.shape[0] != wv.shape[0]) {
        throw std::invalid_argument("dense: incompatible shapes x" + xv.shape_str() + " w" + wv.shape_str() + " b" +
                                    bv.shape_str());
    }
    const auto in = static_cast<size_t>(wv.shape[1]);
    const auto outn = static_cast<size_t>(wv.shape[0]);
    const size_t rows = xv.size() / in;
    std::vector<int64_t> out_shape = xv.shape;
    out_shape.back() = static_cast<int64_t>(outn);
    Tensor out(out_shape);
    for (size_t r = 0; r < rows; ++r) {
        const double *xr = xv.data.data() + r * in;
        for (size_t o = 0; o < outn; ++o) {
            const double *wr = wv.data.data() + o * in;
            double acc = bv.data[o];
            for (size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
            out.data[r * outn + o] = acc;
        }
    }
    const int ix = x.id, iw = w.id, ib = b.id;
    return x.tape->record("dense", std::move(out), {x, w, b}, [ix, iw, ib, in, outn, rows](Tape &t, int self) {
        const auto &g = t.out_grad(self).data;
        const auto &xd = t.value(ix).data;
        const auto &wd = t.value(iw).data;
        Tensor *gx = t.grad_buffer(ix);
        Tensor *gw = t.grad_buffer(iw);
        Tensor *gb = t.grad_buffer(ib);
        for (size_t r = 0; r < rows; ++r) {
            for (size_t o = 0; o < outn; ++o) {
                const double go = g[r * outn + o];
                if (go == 0.0) continue;
                if (gb) gb->data[o] += go;
                if (gw) {
                    for (size_t i = 0; i < in; ++i) gw->data[o * in + i] += go * xd[r * in + i];
                }
                if (gx) {
                    for (size_t i = 0; i < in; ++i) gx->data[r * in + i] += go * wd[o * in + i];
                }
            }
        }
    });
}

Var transpose2d(Var x) {
    const auto &xv = x.value();
    if (xv.rank() != 2) throw std::invalid_argument("transpose2d: expected rank 2, got " + xv.shape_str());
    const auto R = static_cast<size_t>(xv.shape[0]), C = static_cast<size_t>(xv.shape[1]);
    Tensor out({xv.shape[1], xv.shape[0]});
    for (size_t r = 0; r < R; ++r) {
        for (size_t c = 0; c < C; ++c) out.data[c * R + r] = xv.data[r * C + c];
    }
    const int ix = x.id;
    return x.tape->record("transpose2d", std::move(out), {x}, [ix, R, C](Tape &t, int self) {
        if (Tensor *gx = t.grad_buffer(ix)) {
            const auto &g = t.out_grad(self).data;
            for (size_t r = 0; r < R; ++r) {
                for (size_t c = 0; c < C; ++c) gx->data[r * C + c] += g[c * R + r];
            }
        }
    });
}

// ---- convolution ------------------------------------------------------------------------------

namespace {

struct ConvGeom {
    int64_t N, C, O;
    int64_t Z, Y, X;       // input
    int64_t kz, ky, kx;    // kernel
    int64_t oz, oy, ox;    // output
    int64_t sz, sy, sx;    // strides
    int64_t pz, py, px;    // padding
};

void conv_forward(const ConvGeom &g, const double *in, const double *w, const double *b, double *out) {
    for (int64_t n = 0; n < g.N; ++n) {
        for (int64_t o = 0; o < g.O; ++o) {
            double *outp = out + (n * g.O + o) * g.oz * g.oy * g.ox;
            std::fill(outp, outp + g.oz * g.oy * g.ox, b[o]);
            for (int64_t c = 0; c < g.C; ++c) {
                const double *inp = in + (n * g.C + c) * g.Z * g.Y * g.X;
                const double *wp = w + (o * g.C + c) * g.kz * g.ky * g.kx;
                for (int64_t dz = 0; dz < g.kz; ++dz) {
                    for (int64_t dy = 0; dy < g.ky; ++dy) {
                        for (int64_t dx = 0; dx < g.kx; ++dx) {
                            const double wv = wp[(dz * g.ky + dy) * g.kx + dx];
                            for (int64_t z = 0; z < g.oz; ++z) {
                                const int64_t iz = z * g.sz + dz - g.pz;
                                if (iz < 0 || iz >= g.Z) continue;
                                for (int64_t y = 0; y < g.oy; ++y) {
                                    const int64_t iy = y * g.sy + dy - g.py;
                                    if (iy < 0 || iy >= g.Y) continue;
                                    const double *row = inp + (iz * g.Y + iy) * g.X;
                                    double *orow = outp + (z * g.oy + y) * g.ox;
                                    for (int64_t x = 0; x < g.ox; ++x) {
                                        const int64_t ix = x * g.sx + dx - g.px;
                                        if (ix < 0 || ix >= g.X) continue;
                                        orow[x] += wv * row[ix];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv_backward(const ConvGeom &g, const double *in, const double *w, const double *gout, double *gin, double *gw,
                   double *gb) {
    for (int64_t n = 0; n < g.N; ++n) {
        for (int64_t o = 0; o < g.O; ++o) {
            const double *go = gout + (n * g.O + o) * g.oz * g.oy * g.ox;
            if (gb) {
                for (int64_t q = 0; q < g.oz * g.oy * g.ox; ++q) gb[o] += go[q];
            }
            for (int64_t c = 0; c < g.C; ++c) {
                const double *inp = in + (n * g.C + c) * g.Z * g.Y * g.X;
                double *ginp = gin ? gin + (n * g.C + c) * g.Z * g.Y * g.X : nullptr;
                const double *wp = w + (o * g.C + c) * g.kz * g.ky * g.kx;
                double *gwp = gw ? gw + (o * g.C + c) * g.kz * g.ky * g.kx : nullptr;
                for (int64_t dz = 0; dz < g.kz; ++dz) {
                    for (int64_t dy = 0; dy < g.ky; ++dy) {
                        for (int64_t dx = 0; dx < g.kx; ++dx) {
                            const int64_t widx = (dz * g.ky + dy) * g.kx + dx;
                            const double wv = wp[widx];
                            double gacc = 0.0;
                            for (int64_t z = 0; z < g.oz; ++z) {
                                const int64_t iz = z * g.sz + dz - g.pz;
                                if (iz < 0 || iz >= g.Z) continue;
                                for (int64_t y = 0; y < g.oy; ++y) {
                                    const int64_t iy = y * g.sy + dy - g.py;
                                    if (iy < 0 || iy >= g.Y) continue;
                                    const int64_t rbase = (iz * g.Y + iy) * g.X;
                                    const double *grow = go + (z * g.oy + y) * g.ox;
                                    for (int64_t x = 0; x < g.ox; ++x) {
                                        const int64_t ix = x * g.sx + dx - g.px;
                                        if (ix < 0 || ix >= g.X) continue;
                                        gacc += grow[x] * inp[rbase + ix];
                                        if (ginp) ginp[rbase + ix] += grow[x] * wv;
                                    }
                                }
                            }
                            if (gwp) gwp[widx] += gacc;
                        }
                    }
                }
            }
        }
    }
}

Var conv_generic(const char *op, Var x, Var w, Var b, ConvGeom geo, std::vector<int64_t> out_shape) {
    Tensor out(std::move(out_shape));
    conv_forward(geo, x.value().data.data(), w.value().data.data(), b.value().data.data(), out.data.data());
    const int ix = x.id, iw = w.id, ib = b.id;
    return x.tape->record(op, std::move(out), {x, w, b}, [geo, ix, iw, ib](Tape &t, int self) {
        Tensor *gx = t.grad_buffer(ix);
        Tensor *gw = t.grad_buffer(iw);
        Tensor *gb = t.grad_buffer(ib);
        conv_backward(geo, t.value(ix).data.data(), t.value(iw).data.data(), t.out_grad(self).data.data(),
                      gx ? gx->data.data() : nullptr, gw ? gw->data.data() : nullptr, gb ? gb->data.data() : nullptr);
    });
}

int64_t conv_out(int64_t n, int64_t k, int64_t s) { return (n + 2 * (k / 2) - k) / s + 1; }

} // namespace

Var conv3d(Var x, Var w, Var b, int stride) {
    const auto &xv = x.value();
    const auto &wv = w.value();
    if (stride != 1 && stride != 2) throw std::invalid_argument("conv3d: stride must be 1 or 2");
    if (xv.rank() != 5 || wv.rank() != 5 || b.value().rank() != 1 || wv.shape[1] != xv.shape[1] ||
        b.value().shape[0] != wv.shape[0] || wv.shape[2] != wv.shape[3] || wv.shape[3] != wv.shape[4] ||
        wv.shape[2] % 2 == 0) {
        throw std::invalid_argument("conv3d: incompatible shapes x" + xv.shape_str() + " w" + wv.shape_str() + " b" +
                                    b.value().shape_str());
    }
    const int64_t k = wv.shape[2];
    ConvGeom g{xv.shape[0], xv.shape[1], wv.shape[0], xv.shape[2], xv.shape[3], xv.shape[4], k, k, k,
               conv_out(xv.shape[2], k, stride), conv_out(xv.shape[3], k, stride), conv_out(xv.shape[4], k, stride),
               stride, stride, stride, k / 2, k / 2, k / 2};
    return conv_generic("conv3d", x, w, b, g, {g.N, g.O, g.oz, g.oy, g.ox});
}

Var conv2d(Var x, Var w, Var b, int stride) {
    const auto &xv = x.value();
    const auto &wv = w.value();
    if (stride != 1 && stride != 2) throw std::invalid_argument("conv2d: stride must be 1 or 2");
    if (xv.rank() != 4 || wv.rank() != 4 || b.value().rank() != 1 || wv.shape[1] != xv.shape[1] ||
        b.value().shape[0] != wv.shape[0] || wv.shape[2] != wv.shape[3] || wv.shape[2] % 2 == 0) {
        throw std::invalid_argument("conv2d: incompatible shapes x" + xv.shape_str() + " w" + wv.shape_str() + " b" +
                                    b.value().shape_str());
    }
    const int64_t k = wv.shape[2];
    ConvGeom g{xv.shape[0], xv.shape[1], wv.shape[0], 1, xv.shape[2], xv.shape[3], 1, k, k,
               1, conv_out(xv.shape[2], k, stride), conv_out(xv.shape[3], k, stride),
               1, stride, stride, 0, k / 2, k / 2};
    return conv_generic("conv2d", x, w, b, g, {g.N, g.O, g.oy, g.ox});
}

// ---- pooling / resampling ---------------------------------------------------------------------

namespace {

Var pool_generic(const char *op, Var x, int64_t Z, int64_t Y, int64_t X, bool pool_z, std::vector<int64_t> out_shape) {
    const auto &xv = x.value();
    const int64_t planes = static_cast<int64_t>(xv.size()) / (Z * Y * X);
    const int64_t fz = pool_z ? 2 : 1;
    const int64_t oz = Z / fz, oy = Y / 2, ox = X / 2;
    if (oz < 1 || oy < 1 || ox < 1) throw std::invalid_argument(std::string(op) + ": input too small " + xv.shape_str());
    const double w = 1.0 / static_cast<double>(fz * 4);
    Tensor out(std::move(out_shape));
    for (int64_t p = 0; p < planes; ++p) {
        for (int64_t z = 0; z < oz; ++z) {
            for (int64_t y = 0; y < oy; ++y) {
                for (int64_t xx = 0; xx < ox; ++xx) {
                    double acc = 0.0;
                    for (int64_t dz = 0; dz < fz; ++dz)
                        for (int64_t dy = 0; dy < 2; ++dy)
                            for (int64_t dx = 0; dx < 2; ++dx)
                                acc += xv.data[static_cast<size_t>(((p * Z + z * fz + dz) * Y + 2 * y + dy) * X + 2 * xx + dx)];
                    out.data[static_cast<size_t>(((p * oz + z) * oy + y) * ox + xx)] = acc * w;
                }
            }
        }
    }
    const int ix = x.id;
    return x.tape->record(op, std::move(out), {x}, [ix, planes, Z, Y, X, fz, oz, oy, ox, w](Tape &t, int self) {
        Tensor *gx = t.grad_buffer(ix);
        if (gx == nullptr) return;
        const auto &g = t.out_grad(self).data;
        for (int64_t p = 0; p < planes; ++p)
            for (int64_t z = 0; z < oz; ++z)
                for (int64_t y = 0; y < oy; ++y)
                    for (int64_t xx = 0; xx < ox; ++xx) {
                        const double gv = g[static_cast<size_t>(((p * oz + z) * oy + y) * ox + xx)] * w;
                        for (int64_t dz = 0; dz < fz; ++dz)
                            for (int64_t dy = 0; dy < 2; ++dy)
                                for (int64_t dx = 0; dx < 2; ++dx)
                                    gx->data[static_cast<size_t>(((p * Z + z * fz + dz) * Y + 2 * y + dy) * X + 2 * xx + dx)] += gv;
                    }
    });
}

} // namespace

Var avg_pool3d(Var x) {
    const auto &s = x.value().shape;
    if (s.size() != 5) throw std::invalid_argument("avg_pool3d: expected (N,C,Z,Y,X), got " + x.value().shape_str());
    return pool_generic("avg_pool3d", x, s[2], s[3], s[4], true, {s[0], s[1], s[2] / 2, s[3] / 2, s[4] / 2});
}

Var avg_pool2d(Var x) {
    const auto &s = x.value().shape;
    if (s.size() != 4) throw std::invalid_argument("avg_pool2d: expected (N,C,Y,X), got " + x.value().shape_str());
    return pool_generic("avg_pool2d", x, 1, s[2], s[3], false, {s[0], s[1], s[2] / 2, s[3] / 2});
}

Var upsample_nearest3d(Var x, int64_t Z, int64_t Y, int64_t X) {
    const auto &xv = x.value();
    if (xv.rank() != 5) throw std::invalid_argument("upsample_nearest3d: expected (N,C,z,y,x), got " + xv.shape_str());
    const int64_t iz = xv.shape[2], iy = xv.shape[3], ixn = xv.shape[4];
    const int64_t planes = xv.shape[0] * xv.shape[1];
    std::vector<size_t> src(static_cast<size_t>(Z * Y * X));
    for (int64_t z = 0; z < Z; ++z)
        for (int64_t y = 0; y < Y; ++y)
            for (int64_t xx = 0; xx < X; ++xx)
                src[static_cast<size_t>((z * Y + y) * X + xx)] =
                    static_cast<size_t>(((z * iz) / Z * iy + (y * iy) / Y) * ixn + (xx * ixn) / X);
    Tensor out({xv.shape[0], xv.shape[1], Z, Y, X});
    const auto in_plane = static_cast<size_t>(iz * iy * ixn), out_plane = static_cast<size_t>(Z * Y * X);
    for (int64_t p = 0; p < planes; ++p)
        for (size_t q = 0; q < out_plane; ++q) out.data[static_cast<size_t>(p) * out_plane + q] = xv.data[static_cast<size_t>(p) * in_plane + src[q]];
    const int id = x.id;
    return x.tape->record("upsample_nearest3d", std::move(out), {x},
                          [id, src = std::move(src), planes, in_plane, out_plane](Tape &t, int self) {
                              Tensor *gx = t.grad_buffer(id);
                              if (gx == nullptr) return;
                              const auto &g = t.out_grad(self).data;
                              for (int64_t p = 0; p < planes; ++p)
                                  for (size_t q = 0; q < out_plane; ++q)
                                      gx->data[static_cast<size_t>(p) * in_plane + src[q]] += g[static_cast<size_t>(p) * out_plane + q];
                          });
}

// ---- image-space primitives -------------------------------------------------------------------

namespace {

void check_field_shape(const char *op, const Tensor &f, const Grid &g) {
    const std::vector<int64_t> want{1, 3, g.dim(2), g.dim(1), g.dim(0)};
    if (f.shape != want) throw std::invalid_argument(std::string(op) + ": field shape " + f.shape_str() + " does not match grid");
}

} // namespace

Var warp(Var field, const Volume &vol) {
    const auto &g = vol.grid;
    check_field_shape("warp", field.value(), g);
    const size_t N = g.voxel_count();
    const auto &u = field.value().data;
    const auto &s = g.spacing();
    Tensor out({1, 1, g.dim(2), g.dim(1), g.dim(0)});
    auto dudx = std::make_shared<std::vector<Vec3>>(N);
    Tape &tape = *field.tape;
    for (int64_t k = 0; k < g.dim(2); ++k) {
        for (int64_t j = 0; j < g.dim(1); ++j) {
            for (int64_t i = 0; i < g.dim(0); ++i) {
                const size_t n = g.linear(i, j, k);
                const Vec3 ci{static_cast<double>(i) + u[n] / s.x, static_cast<double>(j) + u[N + n] / s.y,
                              static_cast<double>(k) + u[2 * N + n] / s.z};
                Vec3 gi;
                out.data[n] = sample_index(g, vol.values, ci, &gi);
                (*dudx)[n] = {gi.x / s.x, gi.y / s.y, gi.z / s.z};
                // Interpolation cell (and clamp state) is the piecewise-linear branch.
                for (int a = 0; a < 3; ++a) {
                    const double c = std::clamp(ci[a], -1.0, static_cast<double>(g.dim(a)));
                    tape.note_branch(static_cast<uint64_t>(static_cast<int64_t>(std::floor(c)) + 7));
                }
            }
        }
    }
    const int id = field.id;
    return tape.record("warp", std::move(out), {field}, [id, dudx, N](Tape &t, int self) {
        Tensor *gf = t.grad_buffer(id);
        if (gf == nullptr) return;
        const auto &go = t.out_grad(self).data;
        for (size_t n = 0; n < N; ++n) {
            gf->data[n] += go[n] * (*dudx)[n].x;
            gf->data[N + n] += go[n] * (*dudx)[n].y;
            gf->data[2 * N + n] += go[n] * (*dudx)[n].z;
        }
    });
}

Var smoothness(Var field, const Grid &grid) {
    check_field_shape("smoothness", field.value(), grid);
    auto grad = std::make_shared<std::vector<double>>(field.value().size());
    const double loss = smoothness_loss_raw(grid, field.value().data, *grad);
    const int id = field.id;
    return field.tape->record("smoothness", Tensor::scalar(loss), {field}, [id, grad](Tape &t, int self) {
        if (Tensor *gf = t.grad_buffer(id)) {
            const double g = t.out_grad(self).data[0];
            for (size_t n = 0; n < grad->size(); ++n) gf->data[n] += g * (*grad)[n];
        }
    });
}

Var kl_standard_normal(Var mu, Var sigma) {
    require_same_shape("kl_standard_normal", mu.value(), sigma.value());
    const auto &m = mu.value().data;
    const auto &s = sigma.value().data;
    double kl = 0.0;
    for (size_t i = 0; i < m.size(); ++i) {
        if (!(s[i] > 0.0)) throw std::invalid_argument("kl_standard_normal: sigma must be positive");
        kl += m[i] * m[i] + s[i] * s[i] - 1.0 - 2.0 * std::log(s[i]);
    }
    const int im = mu.id, is = sigma.id;
    return mu.tape->record("kl_standard_normal", Tensor::scalar(0.5 * kl), {mu, sigma}, [im, is](Tape &t, int self) {
        const double g = t.out_grad(self).data[0];
        const auto &mv = t.value(im).data;
        const auto &sv = t.value(is).data;
        if (Tensor *gm = t.grad_buffer(im)) {
            for (size_t i = 0; i < mv.size(); ++i) gm->data[i] += g * mv[i];
        }
        if (Tensor *gs = t.grad_buffer(is)) {
            for (size_t i = 0; i < sv.size(); ++i) gs->data[i] += g * (sv[i] - 1.0 / sv[i]);
        }
    });
}

Var masked_row_mse(Var pred, Var target, std::span<const uint8_t> row_mask) {
    require_same_shape("masked_row_mse", pred.value(), target.value());
    const auto &p = pred.value();
    if (p.rank() != 2 || static_cast<size_t>(p.shape[0]) != row_mask.size()) {
        throw std::invalid_argument("masked_row_mse: expected (rows, cols) with one mask entry per row, got " + p.shape_str());
    }
    const auto R = static_cast<size_t>(p.shape[0]), C = static_cast<size_t>(p.shape[1]);
    size_t selected = 0;
    for (auto m : row_mask) selected += m ? 1 : 0;
    double acc = 0.0;
    for (size_t r = 0; r < R; ++r) {
        if (!row_mask[r]) continue;
        for (size_t c = 0; c < C; ++c) {
            const double d = p.data[r * C + c] - target.value().data[r * C + c];
            acc += d * d;
        }
    }
    const double denom = selected == 0 ? 0.0 : static_cast<double>(selected * C);
    std::vector<uint8_t> rows(row_mask.begin(), row_mask.end());
    const int ip = pred.id, itg = target.id;
    return pred.tape->record("masked_row_mse", Tensor::scalar(selected == 0 ? 0.0 : acc / denom), {pred, target},
                             [ip, itg, rows = std::move(rows), R, C, denom](Tape &t, int self) {
                                 if (denom == 0.0) return;
                                 const double g = t.out_grad(self).data[0];
                                 const auto &pv = t.value(ip).data;
                                 const auto &tv = t.value(itg).data;
                                 Tensor *gp = t.grad_buffer(ip);
                                 Tensor *gt = t.grad_buffer(itg);
                                 for (size_t r = 0; r < R; ++r) {
                                     if (!rows[r]) continue;
                                     for (size_t c = 0; c < C; ++c) {
                                         const double d = 2.0 * (pv[r * C + c] - tv[r * C + c]) / denom * g;
                                         if (gp) gp->data[r * C + c] += d;
                                         if (gt) gt->data[r * C + c] -= d;
                                     }
                                 }
                             });
}

// ---- parameters -------------------------------------------------------------------------------

ParamVars bind_params(Tape &tape, const ParamSet &params) {
    ParamVars vars;
    for (const auto &[name, t] : params) vars.emplace(name, tape.leaf(t, true));
    return vars;
}

ParamSet collect_grads(const Tape &tape, const ParamVars &vars) {
    ParamSet out;
    for (const auto &[name, v] : vars) out.emplace(name, tape.grad(v.id));
    return out;
}

} // namespace lamotion::ad
