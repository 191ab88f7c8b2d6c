#include "cbformer/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "cbformer/fft.hpp"

namespace cbf {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

// Parent gradient buffer, or nullptr when that input is a constant.
double* grad_of(TensorNode& out, std::size_t i) {
    auto& p = *out.parents[i];
    return p.requires_grad ? p.grad_buffer().data() : nullptr;
}

const double* value_of(TensorNode& out, std::size_t i) { return out.parents[i]->value.data(); }

ShapeError mismatch(const char* op, const Shape& a, const Shape& b) {
    return ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

struct Broadcast {
    Shape out;
    std::vector<std::size_t> stride_a;
    std::vector<std::size_t> stride_b;
    bool same = false;
};

std::vector<std::size_t> strides_of(const Shape& s) {
    std::vector<std::size_t> st(s.size());
    std::size_t acc = 1;
    for (std::size_t i = s.size(); i-- > 0;) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
    Broadcast bc;
    if (a == b) {
        bc.out = a;
        bc.same = true;
        return bc;
    }
    const std::size_t r = std::max(a.size(), b.size());
    Shape pa(r - a.size(), 1), pb(r - b.size(), 1);
    pa.insert(pa.end(), a.begin(), a.end());
    pb.insert(pb.end(), b.begin(), b.end());
    const auto sa = strides_of(pa);
    const auto sb = strides_of(pb);
    bc.out.resize(r);
    bc.stride_a.resize(r);
    bc.stride_b.resize(r);
    for (std::size_t i = 0; i < r; ++i) {
        if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) throw mismatch(op, a, b);
        bc.out[i] = std::max(pa[i], pb[i]);
        bc.stride_a[i] = pa[i] == 1 ? 0 : sa[i];
        bc.stride_b[i] = pb[i] == 1 ? 0 : sb[i];
    }
    return bc;
}

template <class F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
    const std::size_t n = shape_numel(bc.out);
    if (bc.same) {
        for (std::size_t i = 0; i < n; ++i) f(i, i, i);
        return;
    }
    const std::size_t r = bc.out.size();
    if (r == 0) {
        f(0, 0, 0);
        return;
    }
    const std::size_t inner = bc.out[r - 1];
    const std::size_t ia = bc.stride_a[r - 1];
    const std::size_t ib = bc.stride_b[r - 1];
    std::vector<std::size_t> idx(r, 0);
    std::size_t oa = 0, ob = 0;
    for (std::size_t o = 0; o < n; o += inner) {
        for (std::size_t j = 0; j < inner; ++j) f(o + j, oa + j * ia, ob + j * ib);
        // Advance the outer multi-index.
        for (std::size_t d = r - 1; d-- > 0;) {
            ++idx[d];
            oa += bc.stride_a[d];
            ob += bc.stride_b[d];
            if (idx[d] < bc.out[d]) break;
            oa -= bc.stride_a[d] * idx[d];
            ob -= bc.stride_b[d] * idx[d];
            idx[d] = 0;
        }
    }
}

enum class Binary { Add, Sub, Mul, Div };

template <Binary kind>
Tensor same_shape_binary(const Tensor& a, const Tensor& b) {
    const std::size_t len = a.numel();
    std::vector<double> out(len);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    for (std::size_t i = 0; i < len; ++i) {
        if constexpr (kind == Binary::Add) out[i] = av[i] + bv[i];
        if constexpr (kind == Binary::Sub) out[i] = av[i] - bv[i];
        if constexpr (kind == Binary::Mul) out[i] = av[i] * bv[i];
        if constexpr (kind == Binary::Div) out[i] = av[i] / bv[i];
    }
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [len](TensorNode& n) {
        double* ga = grad_of(n, 0);
        double* gb = grad_of(n, 1);
        const double* av = value_of(n, 0);
        const double* bv = value_of(n, 1);
        const double* g = n.grad.data();
        if (ga) {
            for (std::size_t i = 0; i < len; ++i) {
                if constexpr (kind == Binary::Add || kind == Binary::Sub) ga[i] += g[i];
                if constexpr (kind == Binary::Mul) ga[i] += g[i] * bv[i];
                if constexpr (kind == Binary::Div) ga[i] += g[i] / bv[i];
            }
        }
        if (gb) {
            for (std::size_t i = 0; i < len; ++i) {
                if constexpr (kind == Binary::Add) gb[i] += g[i];
                if constexpr (kind == Binary::Sub) gb[i] -= g[i];
                if constexpr (kind == Binary::Mul) gb[i] += g[i] * av[i];
                if constexpr (kind == Binary::Div) gb[i] -= g[i] * av[i] / (bv[i] * bv[i]);
            }
        }
    });
}

Tensor binary(const Tensor& a, const Tensor& b, Binary kind, const char* name) {
    if (a.shape() == b.shape()) {
        switch (kind) {
            case Binary::Add: return same_shape_binary<Binary::Add>(a, b);
            case Binary::Sub: return same_shape_binary<Binary::Sub>(a, b);
            case Binary::Mul: return same_shape_binary<Binary::Mul>(a, b);
            case Binary::Div: return same_shape_binary<Binary::Div>(a, b);
        }
    }
    auto bc = plan_broadcast(a.shape(), b.shape(), name);
    std::vector<double> out(shape_numel(bc.out));
    const double* av = a.values().data();
    const double* bv = b.values().data();
    for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) {
        switch (kind) {
            case Binary::Add: out[o] = av[i] + bv[j]; break;
            case Binary::Sub: out[o] = av[i] - bv[j]; break;
            case Binary::Mul: out[o] = av[i] * bv[j]; break;
            case Binary::Div: out[o] = av[i] / bv[j]; break;
        }
    });
    Shape shape = bc.out;
    return Tensor::make_result(std::move(shape), std::move(out), {a, b}, [bc, kind](TensorNode& n) {
        double* ga = grad_of(n, 0);
        double* gb = grad_of(n, 1);
        const double* av = value_of(n, 0);
        const double* bv = value_of(n, 1);
        const double* g = n.grad.data();
        for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) {
            switch (kind) {
                case Binary::Add:
                    if (ga) ga[i] += g[o];
                    if (gb) gb[j] += g[o];
                    break;
                case Binary::Sub:
                    if (ga) ga[i] += g[o];
                    if (gb) gb[j] -= g[o];
                    break;
                case Binary::Mul:
                    if (ga) ga[i] += g[o] * bv[j];
                    if (gb) gb[j] += g[o] * av[i];
                    break;
                case Binary::Div:
                    if (ga) ga[i] += g[o] / bv[j];
                    if (gb) gb[j] -= g[o] * av[i] / (bv[j] * bv[j]);
                    break;
            }
        });
    });
}

// Views a tensor as [outer, n, inner] around one axis.
struct AxisView {
    std::size_t outer = 1, n = 1, inner = 1;
};

AxisView axis_view(const Shape& s, std::size_t axis) {
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
    v.n = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::Mul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::Div, "div"); }

Tensor scale(const Tensor& x, double s) {
    std::vector<double> out(x.values().begin(), x.values().end());
    for (auto& v : out) v *= s;
    return Tensor::make_result(x.shape(), std::move(out), {x}, [s](TensorNode& n) {
        double* gx = grad_of(n, 0);
        for (std::size_t i = 0; i < n.grad.size(); ++i) gx[i] += s * n.grad[i];
    });
}

Tensor add_scalar(const Tensor& x, double s) {
    std::vector<double> out(x.values().begin(), x.values().end());
    for (auto& v : out) v += s;
    return Tensor::make_result(x.shape(), std::move(out), {x}, [](TensorNode& n) {
        double* gx = grad_of(n, 0);
        for (std::size_t i = 0; i < n.grad.size(); ++i) gx[i] += n.grad[i];
    });
}

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.values().begin(), x.values().end());
    for (auto& v : out) v = v > 0.0 ? v : 0.0;
    return Tensor::make_result(x.shape(), std::move(out), {x}, [](TensorNode& n) {
        double* gx = grad_of(n, 0);
        const double* xv = value_of(n, 0);
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            if (xv[i] > 0.0) gx[i] += n.grad[i];
        }
    });
}

Tensor sqrt(const Tensor& x) {
    std::vector<double> out(x.values().begin(), x.values().end());
    for (auto& v : out) v = std::sqrt(v);
    return Tensor::make_result(x.shape(), out, {x}, [out](TensorNode& n) {
        double* gx = grad_of(n, 0);
        for (std::size_t i = 0; i < n.grad.size(); ++i) gx[i] += n.grad[i] * 0.5 / out[i];
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2) throw mismatch("matmul", a.shape(), b.shape());
    if (b.rank() == 2) {
        const std::size_t k = a.shape().back();
        if (b.shape()[0] != k) throw mismatch("matmul", a.shape(), b.shape());
        const std::size_t rows = a.numel() / k;
        const std::size_t cols = b.shape()[1];
        std::vector<double> out(rows * cols);
        Map(out.data(), rows, cols).noalias() =
            MapC(a.values().data(), rows, k) * MapC(b.values().data(), k, cols);
        Shape shape = a.shape();
        shape.back() = cols;
        return Tensor::make_result(std::move(shape), std::move(out), {a, b},
                                   [rows, k, cols](TensorNode& n) {
                                       MapC g(n.grad.data(), rows, cols);
                                       if (double* ga = grad_of(n, 0)) {
                                           Map(ga, rows, k).noalias() +=
                                               g * MapC(value_of(n, 1), k, cols).transpose();
                                       }
                                       if (double* gb = grad_of(n, 1)) {
                                           Map(gb, k, cols).noalias() +=
                                               MapC(value_of(n, 0), rows, k).transpose() * g;
                                       }
                                   });
    }
    if (a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] || a.shape()[2] != b.shape()[1]) {
        throw mismatch("matmul", a.shape(), b.shape());
    }
    const std::size_t batch = a.shape()[0], m = a.shape()[1], k = a.shape()[2], cols = b.shape()[2];
    std::vector<double> out(batch * m * cols);
    for (std::size_t i = 0; i < batch; ++i) {
        Map(out.data() + i * m * cols, m, cols).noalias() =
            MapC(a.values().data() + i * m * k, m, k) * MapC(b.values().data() + i * k * cols, k, cols);
    }
    return Tensor::make_result({batch, m, cols}, std::move(out), {a, b}, [batch, m, k, cols](TensorNode& n) {
        double* ga = grad_of(n, 0);
        double* gb = grad_of(n, 1);
        for (std::size_t i = 0; i < batch; ++i) {
            MapC g(n.grad.data() + i * m * cols, m, cols);
            if (ga) Map(ga + i * m * k, m, k).noalias() += g * MapC(value_of(n, 1) + i * k * cols, k, cols).transpose();
            if (gb) Map(gb + i * k * cols, k, cols).noalias() += MapC(value_of(n, 0) + i * m * k, m, k).transpose() * g;
        }
    });
}

Tensor transpose(const Tensor& x, int axis0, int axis1) {
    const std::size_t r = x.rank();
    const std::size_t a0 = normalize_axis(axis0, r, "transpose");
    const std::size_t a1 = normalize_axis(axis1, r, "transpose");
    Shape shape = x.shape();
    std::swap(shape[a0], shape[a1]);
    const auto in_strides = strides_of(x.shape());
    // Stride into the input for each output axis.
    std::vector<std::size_t> src(r);
    for (std::size_t i = 0; i < r; ++i) src[i] = in_strides[i];
    std::swap(src[a0], src[a1]);
    const std::size_t total = x.numel();
    std::vector<std::size_t> map(total);
    {
        std::vector<std::size_t> idx(r, 0);
        std::size_t off = 0;
        for (std::size_t o = 0; o < total; ++o) {
            map[o] = off;
            for (std::size_t d = r; d-- > 0;) {
                ++idx[d];
                off += src[d];
                if (idx[d] < shape[d]) break;
                off -= src[d] * idx[d];
                idx[d] = 0;
            }
        }
    }
    std::vector<double> out(total);
    const double* xv = x.values().data();
    for (std::size_t o = 0; o < total; ++o) out[o] = xv[map[o]];
    return Tensor::make_result(std::move(shape), std::move(out), {x}, [map = std::move(map)](TensorNode& n) {
        double* gx = grad_of(n, 0);
        for (std::size_t o = 0; o < map.size(); ++o) gx[map[o]] += n.grad[o];
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) throw mismatch("reshape", x.shape(), shape);
    std::vector<double> out(x.values().begin(), x.values().end());
    return Tensor::make_result(std::move(shape), std::move(out), {x}, [](TensorNode& n) {
        double* gx = grad_of(n, 0);
        for (std::size_t i = 0; i < n.grad.size(); ++i) gx[i] += n.grad[i];
    });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    return Tensor::make_result({}, {s}, {x}, [](TensorNode& n) {
        double* gx = grad_of(n, 0);
        const double g = n.grad[0];
        const std::size_t len = n.parents[0]->value.size();
        for (std::size_t i = 0; i < len; ++i) gx[i] += g;
    });
}

Tensor sum(const Tensor& x, int axis, bool keepdim) {
    const std::size_t ax = normalize_axis(axis, x.rank(), "sum");
    const auto v = axis_view(x.shape(), ax);
    std::vector<double> out(v.outer * v.inner, 0.0);
    const double* xv = x.values().data();
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.n; ++i)
            for (std::size_t j = 0; j < v.inner; ++j) out[o * v.inner + j] += xv[(o * v.n + i) * v.inner + j];
    Shape shape = x.shape();
    if (keepdim) shape[ax] = 1;
    else shape.erase(shape.begin() + static_cast<long>(ax));
    return Tensor::make_result(std::move(shape), std::move(out), {x}, [v](TensorNode& n) {
        double* gx = grad_of(n, 0);
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t i = 0; i < v.n; ++i)
                for (std::size_t j = 0; j < v.inner; ++j) gx[(o * v.n + i) * v.inner + j] += n.grad[o * v.inner + j];
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean(const Tensor& x, int axis, bool keepdim) {
    const std::size_t ax = normalize_axis(axis, x.rank(), "mean");
    return scale(sum(x, axis, keepdim), 1.0 / static_cast<double>(x.shape()[ax]));
}

Tensor softmax(const Tensor& x, int axis) {
    const std::size_t ax = normalize_axis(axis, x.rank(), "softmax");
    const auto v = axis_view(x.shape(), ax);
    std::vector<double> out(x.numel());
    const double* xv = x.values().data();
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t j = 0; j < v.inner; ++j) {
            auto at = [&](std::size_t i) { return (o * v.n + i) * v.inner + j; };
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < v.n; ++i) mx = std::max(mx, xv[at(i)]);
            double z = 0.0;
            for (std::size_t i = 0; i < v.n; ++i) {
                out[at(i)] = std::exp(xv[at(i)] - mx);
                z += out[at(i)];
            }
            for (std::size_t i = 0; i < v.n; ++i) out[at(i)] /= z;
        }
    }
    return Tensor::make_result(x.shape(), out, {x}, [v, y = out](TensorNode& n) {
        double* gx = grad_of(n, 0);
        for (std::size_t o = 0; o < v.outer; ++o) {
            for (std::size_t j = 0; j < v.inner; ++j) {
                auto at = [&](std::size_t i) { return (o * v.n + i) * v.inner + j; };
                double dot = 0.0;
                for (std::size_t i = 0; i < v.n; ++i) dot += n.grad[at(i)] * y[at(i)];
                for (std::size_t i = 0; i < v.n; ++i) gx[at(i)] += y[at(i)] * (n.grad[at(i)] - dot);
            }
        }
    });
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
    const std::size_t ax = normalize_axis(axis, x.rank(), "slice");
    const auto v = axis_view(x.shape(), ax);
    if (begin > end || end > v.n) {
        throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for axis " + std::to_string(ax) + " of " + shape_str(x.shape()));
    }
    const std::size_t len = end - begin;
    std::vector<double> out(v.outer * len * v.inner);
    const double* xv = x.values().data();
    for (std::size_t o = 0; o < v.outer; ++o) {
        std::copy_n(xv + (o * v.n + begin) * v.inner, len * v.inner, out.data() + o * len * v.inner);
    }
    Shape shape = x.shape();
    shape[ax] = len;
    return Tensor::make_result(std::move(shape), std::move(out), {x}, [v, begin, len](TensorNode& n) {
        double* gx = grad_of(n, 0);
        for (std::size_t o = 0; o < v.outer; ++o) {
            double* dst = gx + (o * v.n + begin) * v.inner;
            const double* g = n.grad.data() + o * len * v.inner;
            for (std::size_t i = 0; i < len * v.inner; ++i) dst[i] += g[i];
        }
    });
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    const std::size_t ax = normalize_axis(axis, xs[0].rank(), "concat");
    Shape shape = xs[0].shape();
    std::size_t total = 0;
    std::vector<std::size_t> lens;
    for (const auto& t : xs) {
        Shape probe = t.shape();
        if (probe.size() != shape.size()) throw mismatch("concat", shape, probe);
        probe[ax] = shape[ax];
        if (probe != shape) throw mismatch("concat", xs[0].shape(), t.shape());
        lens.push_back(t.shape()[ax]);
        total += t.shape()[ax];
    }
    shape[ax] = total;
    const auto v = axis_view(shape, ax);
    std::vector<double> out(shape_numel(shape));
    std::size_t offset = 0;
    for (std::size_t p = 0; p < xs.size(); ++p) {
        const double* src = xs[p].values().data();
        for (std::size_t o = 0; o < v.outer; ++o) {
            std::copy_n(src + o * lens[p] * v.inner, lens[p] * v.inner, out.data() + (o * total + offset) * v.inner);
        }
        offset += lens[p];
    }
    return Tensor::make_result(std::move(shape), std::move(out), xs, [v, lens, total](TensorNode& n) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < lens.size(); ++p) {
            if (double* gx = grad_of(n, p)) {
                for (std::size_t o = 0; o < v.outer; ++o) {
                    const double* g = n.grad.data() + (o * total + offset) * v.inner;
                    double* dst = gx + o * lens[p] * v.inner;
                    for (std::size_t i = 0; i < lens[p] * v.inner; ++i) dst[i] += g[i];
                }
            }
            offset += lens[p];
        }
    });
}

Tensor stack(const std::vector<Tensor>& xs, int axis) {
    if (xs.empty()) throw ShapeError("stack: no inputs");
    const std::size_t ax = normalize_axis(axis, xs[0].rank() + 1, "stack");
    std::vector<Tensor> expanded;
    expanded.reserve(xs.size());
    for (const auto& t : xs) {
        Shape s = t.shape();
        s.insert(s.begin() + static_cast<long>(ax), 1);
        expanded.push_back(reshape(t, std::move(s)));
    }
    return concat(expanded, static_cast<int>(ax));
}

std::vector<Tensor> split(const Tensor& x, std::size_t parts, int axis) {
    const std::size_t ax = normalize_axis(axis, x.rank(), "split");
    const std::size_t n = x.shape()[ax];
    if (parts == 0 || n % parts != 0) {
        throw ShapeError("split: axis " + std::to_string(ax) + " of " + shape_str(x.shape()) +
                         " not divisible into " + std::to_string(parts) + " parts");
    }
    const std::size_t w = n / parts;
    std::vector<Tensor> out;
    out.reserve(parts);
    for (std::size_t i = 0; i < parts; ++i) out.push_back(slice(x, static_cast<int>(ax), i * w, (i + 1) * w));
    return out;
}

Tensor layer_norm(const Tensor& x, double eps) {
    if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.numel() / d;
    std::vector<double> out(x.numel());
    std::vector<double> inv_std(rows);
    const double* xv = x.values().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (row[j] - mu) * inv_std[r];
    }
    return Tensor::make_result(x.shape(), out, {x}, [d, rows, y = out, inv_std](TensorNode& n) {
        double* gx = grad_of(n, 0);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* g = n.grad.data() + r * d;
            const double* yr = y.data() + r * d;
            double gm = 0.0, gy = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                gm += g[j];
                gy += g[j] * yr[j];
            }
            gm /= static_cast<double>(d);
            gy /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += inv_std[r] * (g[j] - gm - yr[j] * gy);
        }
    });
}

Tensor roll(const Tensor& x, long shift, int axis) {
    const std::size_t ax = normalize_axis(axis, x.rank(), "roll");
    const auto v = axis_view(x.shape(), ax);
    const long n = static_cast<long>(v.n);
    const std::size_t s = n == 0 ? 0 : static_cast<std::size_t>(((shift % n) + n) % n);
    std::vector<double> out(x.numel());
    const double* xv = x.values().data();
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.n; ++i) {
            const std::size_t src = (i + v.n - s) % v.n;
            std::copy_n(xv + (o * v.n + src) * v.inner, v.inner, out.data() + (o * v.n + i) * v.inner);
        }
    return Tensor::make_result(x.shape(), std::move(out), {x}, [v, s](TensorNode& n) {
        double* gx = grad_of(n, 0);
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t i = 0; i < v.n; ++i) {
                const std::size_t src = (i + v.n - s) % v.n;
                const double* g = n.grad.data() + (o * v.n + i) * v.inner;
                double* dst = gx + (o * v.n + src) * v.inner;
                for (std::size_t j = 0; j < v.inner; ++j) dst[j] += g[j];
            }
    });
}

namespace {

void check_kernel(std::size_t kernel, std::size_t n) {
    if (kernel == 0 || kernel % 2 == 0) {
        throw std::invalid_argument("moving_average: kernel " + std::to_string(kernel) +
                                    " must be odd and positive (centering undefined)");
    }
    if (n == 0 || kernel > 2 * n - 1) {
        throw std::invalid_argument("moving_average: kernel " + std::to_string(kernel) +
                                    " exceeds 2L-1 for length " + std::to_string(n));
    }
}

// Sliding-window means with edge replication over `n` steps of `width`
// contiguous columns. Sums run over offsets from each column's first value,
// so a constant column yields zero offsets and is reproduced bit-exactly.
void moving_average_block(const double* in, double* out, std::size_t n, std::size_t width, std::size_t kernel) {
    if (kernel == 1) {
        std::copy(in, in + n * width, out);
        return;
    }
    const long half = static_cast<long>(kernel / 2);
    const long last = static_cast<long>(n) - 1;
    auto row = [&](long t) { return in + static_cast<std::size_t>(std::clamp(t, 0L, last)) * width; };
    const double* ref = in;
    std::vector<double> acc(width, 0.0);
    for (long j = -half; j <= half; ++j) {
        const double* r = row(j);
        for (std::size_t e = 0; e < width; ++e) acc[e] += r[e] - ref[e];
    }
    const double k = static_cast<double>(kernel);
    for (long t = 0; t <= last; ++t) {
        double* o = out + static_cast<std::size_t>(t) * width;
        for (std::size_t e = 0; e < width; ++e) o[e] = ref[e] + acc[e] / k;
        if (t < last) {
            const double* add = row(t + half + 1);
            const double* drop = row(t - half);
            for (std::size_t e = 0; e < width; ++e) acc[e] += (add[e] - ref[e]) - (drop[e] - ref[e]);
        }
    }
}

}  // namespace

std::vector<double> avg_pool_moving(std::span<const double> series, std::size_t kernel) {
    check_kernel(kernel, series.size());
    std::vector<double> out(series.size());
    moving_average_block(series.data(), out.data(), series.size(), 1, kernel);
    return out;
}

Tensor moving_average(const Tensor& x, std::size_t kernel, int axis) {
    const std::size_t ax = normalize_axis(axis, x.rank(), "moving_average");
    const auto v = axis_view(x.shape(), ax);
    check_kernel(kernel, v.n);
    std::vector<double> out(x.numel());
    const double* xv = x.values().data();
    for (std::size_t o = 0; o < v.outer; ++o) {
        const std::size_t base = o * v.n * v.inner;
        moving_average_block(xv + base, out.data() + base, v.n, v.inner, kernel);
    }
    return Tensor::make_result(x.shape(), std::move(out), {x}, [v, kernel](TensorNode& n) {
        double* gx = grad_of(n, 0);
        const long half = static_cast<long>(kernel / 2);
        const long last = static_cast<long>(v.n) - 1;
        const double w = 1.0 / static_cast<double>(kernel);
        const std::size_t width = v.inner;
        // Adjoint of the replicated window: position s collects the output
        // grads of every window covering it (a prefix-sum difference), and the
        // clamped edges collect the overflow of windows hanging past them.
        std::vector<double> prefix((v.n + 1) * width);
        for (std::size_t o = 0; o < v.outer; ++o) {
            const double* g = n.grad.data() + o * v.n * width;
            double* gxo = gx + o * v.n * width;
            std::fill(prefix.begin(), prefix.begin() + static_cast<long>(width), 0.0);
            for (std::size_t t = 0; t < v.n; ++t)
                for (std::size_t e = 0; e < width; ++e)
                    prefix[(t + 1) * width + e] = prefix[t * width + e] + g[t * width + e];
            for (long s = 0; s <= last; ++s) {
                const auto lo = static_cast<std::size_t>(std::max(s - half, 0L));
                const auto hi = static_cast<std::size_t>(std::min(s + half, last)) + 1;
                for (std::size_t e = 0; e < width; ++e)
                    gxo[static_cast<std::size_t>(s) * width + e] += w * (prefix[hi * width + e] - prefix[lo * width + e]);
            }
            for (long t = 0; t <= last; ++t) {
                const long lo = t - half, hi = t + half;
                if (lo < 0)
                    for (std::size_t e = 0; e < width; ++e) gxo[e] += w * g[static_cast<std::size_t>(t) * width + e] * static_cast<double>(-lo);
                if (hi > last)
                    for (std::size_t e = 0; e < width; ++e)
                        gxo[static_cast<std::size_t>(last) * width + e] +=
                            w * g[static_cast<std::size_t>(t) * width + e] * static_cast<double>(hi - last);
            }
        }
    });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) throw mismatch("mse_loss", pred.shape(), target.shape());
    const double* p = pred.values().data();
    const double* t = target.values().data();
    const std::size_t len = pred.numel();
    double acc = 0.0;
    for (std::size_t i = 0; i < len; ++i) acc += (p[i] - t[i]) * (p[i] - t[i]);
    return Tensor::make_result({}, {acc / static_cast<double>(len)}, {pred, target}, [len](TensorNode& n) {
        const double g = n.grad[0] * 2.0 / static_cast<double>(len);
        const double* p = value_of(n, 0);
        const double* t = value_of(n, 1);
        double* gp = grad_of(n, 0);
        double* gt = grad_of(n, 1);
        for (std::size_t i = 0; i < len; ++i) {
            const double d = g * (p[i] - t[i]);
            if (gp) gp[i] += d;
            if (gt) gt[i] -= d;
        }
    });
}

namespace {

// Spectra of two real columns from one complex transform of q + i k.
void pair_spectra(const double* q, const double* k, std::size_t len, std::size_t stride, fft::cplx* fq,
                  fft::cplx* fk, std::vector<fft::cplx>& scratch) {
    scratch.resize(len);
    for (std::size_t t = 0; t < len; ++t) scratch[t] = {q[t * stride], k[t * stride]};
    const auto z = fft::forward(scratch);
    const std::size_t bins = len / 2 + 1;
    for (std::size_t f = 0; f < bins; ++f) {
        const fft::cplx zc = std::conj(z[(len - f) % len]);
        fq[f] = 0.5 * (z[f] + zc);
        fk[f] = fft::cplx(0.0, -0.5) * (z[f] - zc);
    }
}

// Hermitian extension of a half spectrum with real DC and Nyquist bins.
void hermitian_full(const fft::cplx* half, std::size_t len, fft::cplx* full) {
    const std::size_t bins = len / 2 + 1;
    for (std::size_t f = 0; f < bins; ++f) full[f] = half[f];
    for (std::size_t f = bins; f < len; ++f) full[f] = std::conj(half[len - f]);
    full[0] = {full[0].real(), 0.0};
    if (len % 2 == 0) full[len / 2] = {full[len / 2].real(), 0.0};
}

}  // namespace

Tensor lag_correlation(const Tensor& q, const Tensor& k) {
    if (q.rank() != 3 || q.shape() != k.shape()) throw mismatch("lag_correlation", q.shape(), k.shape());
    const std::size_t batch = q.shape()[0], len = q.shape()[1], width = q.shape()[2];
    const std::size_t bins = len / 2 + 1;
    const double inv_w = 1.0 / static_cast<double>(width);
    std::vector<double> out(batch * len);
    const double* qv = q.values().data();
    const double* kv = k.values().data();
    // Column spectra, kept for the reverse pass: [batch][width][bins].
    auto spec_q = std::make_shared<std::vector<fft::cplx>>(batch * width * bins);
    auto spec_k = std::make_shared<std::vector<fft::cplx>>(batch * width * bins);
    std::vector<fft::cplx> scratch;
    std::vector<fft::cplx> acc(bins);
    for (std::size_t b = 0; b < batch; ++b) {
        std::fill(acc.begin(), acc.end(), fft::cplx{});
        for (std::size_t e = 0; e < width; ++e) {
            fft::cplx* fq = spec_q->data() + (b * width + e) * bins;
            fft::cplx* fk = spec_k->data() + (b * width + e) * bins;
            pair_spectra(qv + b * len * width + e, kv + b * len * width + e, len, width, fq, fk, scratch);
            for (std::size_t f = 0; f < bins; ++f) acc[f] += fq[f] * std::conj(fk[f]);
        }
        const auto r = fft::irfft(acc, len);
        for (std::size_t t = 0; t < len; ++t) out[b * len + t] = r[t] * inv_w;
    }
    return Tensor::make_result({batch, len}, std::move(out), {q, k},
                               [batch, len, width, bins, inv_w, spec_q, spec_k](TensorNode& n) {
        double* gq = grad_of(n, 0);
        double* gk = grad_of(n, 1);
        std::vector<fft::cplx> pq(bins), pk(bins), full_q(len), full_k(len), packed(len);
        for (std::size_t b = 0; b < batch; ++b) {
            const auto fg = fft::rfft(std::span<const double>(n.grad.data() + b * len, len));
            for (std::size_t e = 0; e < width; ++e) {
                const fft::cplx* fq = spec_q->data() + (b * width + e) * bins;
                const fft::cplx* fk = spec_k->data() + (b * width + e) * bins;
                // d/dq: circular convolution of the grad with k;
                // d/dk: circular cross-correlation of q with the grad.
                for (std::size_t f = 0; f < bins; ++f) {
                    pq[f] = fg[f] * fk[f];
                    pk[f] = fq[f] * std::conj(fg[f]);
                }
                hermitian_full(pq.data(), len, full_q.data());
                hermitian_full(pk.data(), len, full_k.data());
                for (std::size_t t = 0; t < len; ++t) packed[t] = full_q[t] + fft::cplx(0.0, 1.0) * full_k[t];
                const auto d = fft::inverse(packed);
                const std::size_t base = b * len * width + e;
                for (std::size_t t = 0; t < len; ++t) {
                    if (gq) gq[base + t * width] += d[t].real() * inv_w;
                    if (gk) gk[base + t * width] += d[t].imag() * inv_w;
                }
            }
        }
    });
}

std::vector<std::size_t> topk_indices(const Tensor& x, std::size_t k) {
    if (x.rank() == 0) throw ShapeError("topk_indices: scalar input");
    const std::size_t n = x.shape().back();
    if (k > n) throw ShapeError("topk_indices: k=" + std::to_string(k) + " exceeds row length " + std::to_string(n));
    const std::size_t rows = x.numel() / n;
    std::vector<std::size_t> out;
    out.reserve(rows * k);
    std::vector<std::size_t> order(n);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = x.values().data() + r * n;
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::partial_sort(order.begin(), order.begin() + static_cast<long>(k), order.end(),
                          [row](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
        out.insert(out.end(), order.begin(), order.begin() + static_cast<long>(k));
    }
    return out;
}

Tensor gather_last(const Tensor& x, const std::vector<std::size_t>& idx, std::size_t k) {
    if (x.rank() != 2 || idx.size() != x.shape()[0] * k) {
        throw ShapeError("gather_last: expected [B, L] input and B*k indices, got " + shape_str(x.shape()) +
                         " with " + std::to_string(idx.size()) + " indices");
    }
    const std::size_t batch = x.shape()[0], len = x.shape()[1];
    std::vector<double> out(batch * k);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < k; ++i) out[b * k + i] = x.values()[b * len + idx[b * k + i]];
    return Tensor::make_result({batch, k}, std::move(out), {x}, [idx, batch, len, k](TensorNode& n) {
        double* gx = grad_of(n, 0);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < k; ++i) gx[b * len + idx[b * k + i]] += n.grad[b * k + i];
    });
}

Tensor delay_aggregate(const Tensor& v, const Tensor& w, const std::vector<std::size_t>& lags) {
    if (v.rank() != 3 || w.rank() != 2 || w.shape()[0] != v.shape()[0] || lags.size() != w.numel()) {
        throw mismatch("delay_aggregate", v.shape(), w.shape());
    }
    const std::size_t batch = v.shape()[0], len = v.shape()[1], width = v.shape()[2], k = w.shape()[1];
    std::vector<double> out(v.numel(), 0.0);
    const double* vv = v.values().data();
    const double* wv = w.values().data();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < k; ++i) {
            const double weight = wv[b * k + i];
            const std::size_t lag = lags[b * k + i] % len;
            for (std::size_t t = 0; t < len; ++t) {
                const double* src = vv + (b * len + (t + lag) % len) * width;
                double* dst = out.data() + (b * len + t) * width;
                for (std::size_t e = 0; e < width; ++e) dst[e] += weight * src[e];
            }
        }
    return Tensor::make_result(v.shape(), std::move(out), {v, w}, [lags, batch, len, width, k](TensorNode& n) {
        double* gv = grad_of(n, 0);
        double* gw = grad_of(n, 1);
        const double* vv = value_of(n, 0);
        const double* wv = value_of(n, 1);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < k; ++i) {
                const std::size_t lag = lags[b * k + i] % len;
                double acc = 0.0;
                for (std::size_t t = 0; t < len; ++t) {
                    const std::size_t src = (b * len + (t + lag) % len) * width;
                    const double* g = n.grad.data() + (b * len + t) * width;
                    for (std::size_t e = 0; e < width; ++e) {
                        if (gv) gv[src + e] += wv[b * k + i] * g[e];
                        acc += g[e] * vv[src + e];
                    }
                }
                if (gw) gw[b * k + i] += acc;
            }
    });
}

}  // namespace cbf
