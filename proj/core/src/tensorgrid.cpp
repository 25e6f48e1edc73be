#include "cellseg/tensorgrid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cellseg/errors.hpp"

namespace cellseg {

namespace {

long shape_product(const std::vector<int>& shape) {
    long n = 1;
    for (int e : shape) {
        if (e < 0) throw DimensionError("negative extent in shape");
        n *= e;
    }
    return n;
}

void ensure_finite(const std::vector<double>& v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x))
            throw NumericalError(std::string("non-finite value produced by ") + op);
    }
}

void require(bool cond, const char* msg) {
    if (!cond) throw DimensionError(msg);
}

// The single tape shared by the tracked inputs, nullptr when none is tracked.
Tape* common_tape(std::initializer_list<const TensorGrid*> xs) {
    Tape* t = nullptr;
    for (const TensorGrid* x : xs) {
        if (!x->tracked()) continue;
        if (t == nullptr) t = x->tape();
        else if (t != x->tape())
            throw DimensionError("operands tracked on different tapes");
    }
    return t;
}

int parent_node(const TensorGrid& x) { return x.tracked() ? x.node() : -1; }

std::shared_ptr<const std::vector<double>> snapshot(const TensorGrid& x) {
    return std::make_shared<const std::vector<double>>(x.values());
}

} // namespace

// --- TensorGrid ------------------------------------------------------------

TensorGrid::TensorGrid(std::vector<int> shape, double fill) {
    const long n = shape_product(shape);
    shape_ = std::move(shape);
    values_.assign(static_cast<size_t>(n), fill);
    if (!std::isfinite(fill)) throw NumericalError("non-finite fill value");
}

TensorGrid TensorGrid::from_values(std::vector<int> shape, std::vector<double> values) {
    const long n = shape_product(shape);
    if (n != static_cast<long>(values.size()))
        throw DimensionError("value count does not match shape");
    ensure_finite(values, "from_values");
    TensorGrid t;
    t.shape_ = std::move(shape);
    t.values_ = std::move(values);
    return t;
}

TensorGrid TensorGrid::scalar_of(double v) {
    return from_values({1}, {v});
}

double TensorGrid::scalar() const {
    if (values_.size() != 1) throw DimensionError("scalar() on non-scalar tensor");
    return values_[0];
}

TensorGrid TensorGrid::detached() const {
    TensorGrid t;
    t.shape_ = shape_;
    t.values_ = values_;
    return t;
}

// --- Tape -------------------------------------------------------------------

void Tape::track(TensorGrid& t) {
    if (t.tracked()) {
        if (t.tape_ == this) return;
        throw DimensionError("tensor already tracked on another tape");
    }
    Node n;
    n.size = t.size();
    n.is_leaf = true;
    nodes_.push_back(std::move(n));
    t.tape_ = this;
    t.node_ = static_cast<int>(nodes_.size()) - 1;
}

void Tape::attach(TensorGrid& out, const std::vector<int>& parents, Backprop fn) {
    Node n;
    n.size = out.size();
    for (int p : parents)
        if (p >= 0) n.parents.push_back(p);
    n.backprop = std::move(fn);
    nodes_.push_back(std::move(n));
    out.tape_ = this;
    out.node_ = static_cast<int>(nodes_.size()) - 1;
}

void Tape::backward(const TensorGrid& loss) {
    if (backward_done_)
        throw NumericalError("backward already ran on this tape; reset() to reuse");
    if (!loss.tracked() || loss.tape() != this)
        throw DimensionError("loss is not on this tape");
    if (loss.size() != 1)
        throw DimensionError("backward requires a scalar loss");

    backward_done_ = true;
    nodes_[static_cast<size_t>(loss.node())].grad.assign(1, 1.0);

    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.grad.empty() || !n.backprop) continue;
        std::vector<std::vector<double>*> pg;
        pg.reserve(n.parents.size());
        for (int p : n.parents) {
            Node& pn = nodes_[static_cast<size_t>(p)];
            if (pn.grad.empty()) pn.grad.assign(static_cast<size_t>(pn.size), 0.0);
            pg.push_back(&pn.grad);
        }
        n.backprop(n.grad, pg);
        // Interior gradients are consumed top-down; drop them to bound memory.
        std::vector<double>().swap(n.grad);
    }
}

TensorGrid Tape::grad(const TensorGrid& t) const {
    if (!t.tracked() || t.tape() != this)
        throw DimensionError("tensor is not on this tape");
    if (!backward_done_)
        throw NumericalError("grad() before backward()");
    const Node& n = nodes_[static_cast<size_t>(t.node())];
    if (n.grad.empty()) return TensorGrid(t.shape(), 0.0);
    return TensorGrid::from_values(t.shape(), n.grad);
}

void Tape::reset() {
    nodes_.clear();
    backward_done_ = false;
}

// --- ops ---------------------------------------------------------------------

TensorGrid conv2d(const TensorGrid& input, const TensorGrid& kernel, const TensorGrid& bias) {
    require(input.rank() == 3, "conv2d: input must be [Cin,H,W]");
    require(kernel.rank() == 4, "conv2d: kernel must be [Cout,Cin,3,3]");
    require(bias.rank() == 1, "conv2d: bias must be [Cout]");
    require(kernel.extent(2) == 3 && kernel.extent(3) == 3, "conv2d: kernel spatial size must be 3x3");
    require(kernel.extent(1) == input.extent(0), "conv2d: Cin mismatch between input and kernel");
    require(bias.extent(0) == kernel.extent(0), "conv2d: bias length must equal Cout");

    const int cin = input.extent(0), h = input.extent(1), w = input.extent(2);
    const int cout = kernel.extent(0);
    const int plane = h * w;

    TensorGrid out({cout, h, w});
    const double* iv = input.values().data();
    const double* kv = kernel.values().data();
    double* ov = out.values().data();

    for (int co = 0; co < cout; ++co) {
        double* oc = ov + static_cast<long>(co) * plane;
        std::fill(oc, oc + plane, bias[co]);
        for (int ci = 0; ci < cin; ++ci) {
            const double* ic = iv + static_cast<long>(ci) * plane;
            const double* kc = kv + (static_cast<long>(co) * cin + ci) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx = kx - 1;
                    const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    const double wt = kc[ky * 3 + kx];
                    for (int y = y0; y < y1; ++y) {
                        double* orow = oc + y * w;
                        const double* irow = ic + (y + dy) * w + dx;
                        for (int x = x0; x < x1; ++x) orow[x] += wt * irow[x];
                    }
                }
            }
        }
    }
    ensure_finite(out.values(), "conv2d");

    if (Tape* t = common_tape({&input, &kernel, &bias})) {
        auto in_v = snapshot(input);
        auto k_v = snapshot(kernel);
        t->attach(out, {parent_node(input), parent_node(kernel), parent_node(bias)},
                  [in_v, k_v, cin, cout, h, w, plane,
                   gi = input.tracked(), gk = kernel.tracked(), gb = bias.tracked()](
                      const std::vector<double>& g,
                      const std::vector<std::vector<double>*>& pg) {
            size_t slot = 0;
            std::vector<double>* gin = gi ? pg[slot++] : nullptr;
            std::vector<double>* gkn = gk ? pg[slot++] : nullptr;
            std::vector<double>* gbs = gb ? pg[slot++] : nullptr;
            const double* gv = g.data();
            for (int co = 0; co < cout; ++co) {
                const double* gc = gv + static_cast<long>(co) * plane;
                if (gbs) {
                    double acc = 0.0;
                    for (int i = 0; i < plane; ++i) acc += gc[i];
                    (*gbs)[static_cast<size_t>(co)] += acc;
                }
                for (int ci = 0; ci < cin; ++ci) {
                    const double* kc = k_v->data() + (static_cast<long>(co) * cin + ci) * 9;
                    const double* ic = in_v->data() + static_cast<long>(ci) * plane;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int dy = ky - 1;
                        const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                        for (int kx = 0; kx < 3; ++kx) {
                            const int dx = kx - 1;
                            const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                            if (gin) {
                                const double wt = kc[ky * 3 + kx];
                                double* girow_base = gin->data() + static_cast<long>(ci) * plane;
                                for (int y = y0; y < y1; ++y) {
                                    const double* grow = gc + y * w;
                                    double* girow = girow_base + (y + dy) * w + dx;
                                    for (int x = x0; x < x1; ++x) girow[x] += wt * grow[x];
                                }
                            }
                            if (gkn) {
                                double acc = 0.0;
                                for (int y = y0; y < y1; ++y) {
                                    const double* grow = gc + y * w;
                                    const double* irow = ic + (y + dy) * w + dx;
                                    for (int x = x0; x < x1; ++x) acc += grow[x] * irow[x];
                                }
                                (*gkn)[(static_cast<size_t>(co) * cin + ci) * 9 + ky * 3 + kx] += acc;
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

TensorGrid relu(const TensorGrid& x) {
    TensorGrid out(x.shape());
    const int n = x.size();
    for (int i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    ensure_finite(out.values(), "relu");
    if (Tape* t = common_tape({&x})) {
        auto ov = snapshot(out);
        t->attach(out, {x.node()},
                  [ov](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
            std::vector<double>& gx = *pg[0];
            for (size_t i = 0; i < g.size(); ++i)
                if ((*ov)[i] > 0.0) gx[i] += g[i];
        });
    }
    return out;
}

TensorGrid sigmoid(const TensorGrid& x) {
    TensorGrid out(x.shape());
    const int n = x.size();
    for (int i = 0; i < n; ++i) {
        const double v = x[i];
        // Split by sign to avoid overflow in exp.
        double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                            : std::exp(v) / (1.0 + std::exp(v));
        // Keep the contract strict: saturated values stay inside (0,1).
        if (s >= 1.0) s = std::nextafter(1.0, 0.0);
        if (s <= 0.0) s = std::numeric_limits<double>::min();
        out[i] = s;
    }
    ensure_finite(out.values(), "sigmoid");
    if (Tape* t = common_tape({&x})) {
        auto ov = snapshot(out);
        t->attach(out, {x.node()},
                  [ov](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
            std::vector<double>& gx = *pg[0];
            for (size_t i = 0; i < g.size(); ++i) {
                const double s = (*ov)[i];
                gx[i] += g[i] * s * (1.0 - s);
            }
        });
    }
    return out;
}

TensorGrid maxpool2(const TensorGrid& x) {
    require(x.rank() == 3, "maxpool2: input must be [C,H,W]");
    const int c = x.extent(0), h = x.extent(1), w = x.extent(2);
    require(h % 2 == 0 && w % 2 == 0, "maxpool2: H and W must be even");
    const int oh = h / 2, ow = w / 2;

    TensorGrid out({c, oh, ow});
    std::vector<int> argmax(static_cast<size_t>(out.size()));
    for (int ci = 0; ci < c; ++ci) {
        const double* plane = x.values().data() + static_cast<long>(ci) * h * w;
        for (int y = 0; y < oh; ++y) {
            for (int xo = 0; xo < ow; ++xo) {
                const int base = (2 * y) * w + 2 * xo;
                const int idx[4] = {base, base + 1, base + w, base + w + 1};
                int best = idx[0];
                for (int k = 1; k < 4; ++k)
                    if (plane[idx[k]] > plane[best]) best = idx[k];
                const long o = (static_cast<long>(ci) * oh + y) * ow + xo;
                out[static_cast<int>(o)] = plane[best];
                argmax[static_cast<size_t>(o)] = static_cast<int>(ci) * h * w + best;
            }
        }
    }
    ensure_finite(out.values(), "maxpool2");
    if (Tape* t = common_tape({&x})) {
        t->attach(out, {x.node()},
                  [am = std::move(argmax)](const std::vector<double>& g,
                                           const std::vector<std::vector<double>*>& pg) {
            std::vector<double>& gx = *pg[0];
            for (size_t i = 0; i < g.size(); ++i)
                gx[static_cast<size_t>(am[i])] += g[i];
        });
    }
    return out;
}

TensorGrid upsample2(const TensorGrid& x) {
    require(x.rank() == 3, "upsample2: input must be [C,H,W]");
    const int c = x.extent(0), h = x.extent(1), w = x.extent(2);
    TensorGrid out({c, 2 * h, 2 * w});
    for (int ci = 0; ci < c; ++ci) {
        const double* ip = x.values().data() + static_cast<long>(ci) * h * w;
        double* op = out.values().data() + static_cast<long>(ci) * 4 * h * w;
        for (int y = 0; y < h; ++y) {
            for (int xo = 0; xo < w; ++xo) {
                const double v = ip[y * w + xo];
                const long o = (2L * y) * (2 * w) + 2 * xo;
                op[o] = v;
                op[o + 1] = v;
                op[o + 2L * w] = v;
                op[o + 2L * w + 1] = v;
            }
        }
    }
    ensure_finite(out.values(), "upsample2");
    if (Tape* t = common_tape({&x})) {
        t->attach(out, {x.node()},
                  [c, h, w](const std::vector<double>& g,
                            const std::vector<std::vector<double>*>& pg) {
            std::vector<double>& gx = *pg[0];
            for (int ci = 0; ci < c; ++ci) {
                const double* gp = g.data() + static_cast<long>(ci) * 4 * h * w;
                double* gi = gx.data() + static_cast<long>(ci) * h * w;
                for (int y = 0; y < h; ++y) {
                    for (int xo = 0; xo < w; ++xo) {
                        const long o = (2L * y) * (2 * w) + 2 * xo;
                        gi[y * w + xo] += gp[o] + gp[o + 1] + gp[o + 2L * w] + gp[o + 2L * w + 1];
                    }
                }
            }
        });
    }
    return out;
}

TensorGrid concat_channels(const TensorGrid& a, const TensorGrid& b) {
    require(a.rank() == 3 && b.rank() == 3, "concat_channels: inputs must be [C,H,W]");
    require(a.extent(1) == b.extent(1) && a.extent(2) == b.extent(2),
            "concat_channels: spatial extents differ");
    const int c1 = a.extent(0), c2 = b.extent(0);
    const int h = a.extent(1), w = a.extent(2);
    TensorGrid out({c1 + c2, h, w});
    std::copy(a.values().begin(), a.values().end(), out.values().begin());
    std::copy(b.values().begin(), b.values().end(),
              out.values().begin() + static_cast<long>(c1) * h * w);
    if (Tape* t = common_tape({&a, &b})) {
        const long na = a.size();
        t->attach(out, {parent_node(a), parent_node(b)},
                  [na, ga = a.tracked(), gb = b.tracked()](
                      const std::vector<double>& g,
                      const std::vector<std::vector<double>*>& pg) {
            size_t slot = 0;
            if (ga) {
                std::vector<double>& gx = *pg[slot++];
                for (long i = 0; i < na; ++i) gx[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
            }
            if (gb) {
                std::vector<double>& gx = *pg[slot];
                for (size_t i = static_cast<size_t>(na); i < g.size(); ++i)
                    gx[i - static_cast<size_t>(na)] += g[i];
            }
        });
    }
    return out;
}

TensorGrid add(const TensorGrid& a, const TensorGrid& b) {
    require(a.shape() == b.shape(), "add: shape mismatch");
    TensorGrid out(a.shape());
    for (int i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    ensure_finite(out.values(), "add");
    if (Tape* t = common_tape({&a, &b})) {
        t->attach(out, {parent_node(a), parent_node(b)},
                  [ga = a.tracked(), gb = b.tracked()](
                      const std::vector<double>& g,
                      const std::vector<std::vector<double>*>& pg) {
            size_t slot = 0;
            if (ga) {
                std::vector<double>& gx = *pg[slot++];
                for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (gb) {
                std::vector<double>& gx = *pg[slot];
                for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
        });
    }
    return out;
}

TensorGrid mul(const TensorGrid& a, const TensorGrid& b) {
    require(a.shape() == b.shape(), "mul: shape mismatch");
    TensorGrid out(a.shape());
    for (int i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    ensure_finite(out.values(), "mul");
    if (Tape* t = common_tape({&a, &b})) {
        auto av = snapshot(a);
        auto bv = snapshot(b);
        t->attach(out, {parent_node(a), parent_node(b)},
                  [av, bv, ga = a.tracked(), gb = b.tracked()](
                      const std::vector<double>& g,
                      const std::vector<std::vector<double>*>& pg) {
            size_t slot = 0;
            if (ga) {
                std::vector<double>& gx = *pg[slot++];
                for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*bv)[i];
            }
            if (gb) {
                std::vector<double>& gx = *pg[slot];
                for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*av)[i];
            }
        });
    }
    return out;
}

TensorGrid div(const TensorGrid& a, const TensorGrid& b) {
    require(a.shape() == b.shape(), "div: shape mismatch");
    TensorGrid out(a.shape());
    for (int i = 0; i < a.size(); ++i) out[i] = a[i] / b[i];
    ensure_finite(out.values(), "div");
    if (Tape* t = common_tape({&a, &b})) {
        auto bv = snapshot(b);
        auto ov = snapshot(out);
        t->attach(out, {parent_node(a), parent_node(b)},
                  [bv, ov, ga = a.tracked(), gb = b.tracked()](
                      const std::vector<double>& g,
                      const std::vector<std::vector<double>*>& pg) {
            size_t slot = 0;
            if (ga) {
                std::vector<double>& gx = *pg[slot++];
                for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / (*bv)[i];
            }
            if (gb) {
                std::vector<double>& gx = *pg[slot];
                for (size_t i = 0; i < g.size(); ++i)
                    gx[i] -= g[i] * (*ov)[i] / (*bv)[i];
            }
        });
    }
    return out;
}

TensorGrid affine(const TensorGrid& x, double scale, double shift) {
    TensorGrid out(x.shape());
    for (int i = 0; i < x.size(); ++i) out[i] = scale * x[i] + shift;
    ensure_finite(out.values(), "affine");
    if (Tape* t = common_tape({&x})) {
        t->attach(out, {x.node()},
                  [scale](const std::vector<double>& g,
                          const std::vector<std::vector<double>*>& pg) {
            std::vector<double>& gx = *pg[0];
            for (size_t i = 0; i < g.size(); ++i) gx[i] += scale * g[i];
        });
    }
    return out;
}

TensorGrid sum(const TensorGrid& x) {
    double acc = 0.0;
    for (int i = 0; i < x.size(); ++i) acc += x[i];
    TensorGrid out = TensorGrid::from_values({1}, {acc});
    if (Tape* t = common_tape({&x})) {
        t->attach(out, {x.node()},
                  [](const std::vector<double>& g,
                     const std::vector<std::vector<double>*>& pg) {
            std::vector<double>& gx = *pg[0];
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
        });
    }
    return out;
}

} // namespace cellseg
