#include "smalldet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace smalldet {

namespace {

std::size_t product(const std::vector<int>& shape)
{
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) {
            throw TensorError("negative dimension in shape " + shape_string(shape));
        }
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

void require_rank4(const std::vector<int>& shape, const char* what)
{
    if (shape.size() != 4) {
        throw TensorError(std::string(what) + ": expected NCHW tensor, got " + shape_string(shape));
    }
}

}  // namespace

std::string shape_string(const std::vector<int>& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename Real>
BasicTensor<Real>::BasicTensor(std::vector<int> shape, Real fill)
    : shape_(std::move(shape)), data_(product(shape_), fill)
{
}

template <typename Real>
BasicTensor<Real>::BasicTensor(std::vector<int> shape, std::vector<Real> data)
    : shape_(std::move(shape)), data_(std::move(data))
{
    if (data_.size() != product(shape_)) {
        throw TensorError("data length " + std::to_string(data_.size()) +
                          " does not match shape " + shape_string(shape_));
    }
}

template <typename Real>
void BasicTensor<Real>::fill(Real v)
{
    std::fill(data_.begin(), data_.end(), v);
}

template <typename Real>
bool all_finite(const BasicTensor<Real>& t)
{
    return std::all_of(t.data().begin(), t.data().end(), [](Real v) { return std::isfinite(v); });
}

template bool all_finite(const BasicTensor<float>&);
template bool all_finite(const BasicTensor<double>&);

namespace ops {

namespace {

struct ConvGeometry {
    int n, c, h, w;
    int f, k;
    int oh, ow;
    int stride, pad;

    std::size_t cols() const { return static_cast<std::size_t>(oh) * ow; }
    std::size_t rows() const { return static_cast<std::size_t>(c) * k * k; }
    bool is_pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

template <typename Real>
ConvGeometry conv_geometry(const BasicTensor<Real>& x, const BasicTensor<Real>& weight,
                           int stride, int pad)
{
    require_rank4(x.shape(), "conv2d input");
    require_rank4(weight.shape(), "conv2d weight");
    ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2),
                   0,        0,        stride,   pad};
    if (weight.dim(1) != g.c) {
        throw TensorError("conv2d: weight " + shape_string(weight.shape()) +
                          " does not match input channels " + std::to_string(g.c));
    }
    if (weight.dim(3) != g.k) {
        throw TensorError("conv2d: kernel must be square");
    }
    if (stride < 1 || pad < 0) {
        throw TensorError("conv2d: invalid stride/pad");
    }
    const int span_h = g.h + 2 * pad - g.k;
    const int span_w = g.w + 2 * pad - g.k;
    if (span_h < 0 || span_w < 0) {
        throw TensorError("conv2d: kernel larger than padded input " +
                          shape_string(x.shape()) + ", kernel " + std::to_string(g.k) +
                          ", stride " + std::to_string(stride) + ", pad " +
                          std::to_string(pad));
    }
    g.oh = span_h / stride + 1;
    g.ow = span_w / stride + 1;
    return g;
}

template <typename Real>
void im2col(const Real* x, const ConvGeometry& g, Real* col)
{
    const std::size_t cols = g.cols();
    for (int c = 0; c < g.c; ++c) {
        const Real* plane = x + static_cast<std::size_t>(c) * g.h * g.w;
        for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
                Real* row = col + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * cols;
                for (int oy = 0; oy < g.oh; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    Real* out = row + static_cast<std::size_t>(oy) * g.ow;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(out, out + g.ow, Real(0));
                        continue;
                    }
                    const Real* in = plane + static_cast<std::size_t>(iy) * g.w;
                    if (g.stride == 1) {
                        const int x0 = kx - g.pad;
                        for (int ox = 0; ox < g.ow; ++ox) {
                            const int ix = x0 + ox;
                            out[ox] = (ix >= 0 && ix < g.w) ? in[ix] : Real(0);
                        }
                    } else {
                        for (int ox = 0; ox < g.ow; ++ox) {
                            const int ix = ox * g.stride - g.pad + kx;
                            out[ox] = (ix >= 0 && ix < g.w) ? in[ix] : Real(0);
                        }
                    }
                }
            }
        }
    }
}

template <typename Real>
void col2im_add(const Real* col, const ConvGeometry& g, Real* dx)
{
    const std::size_t cols = g.cols();
    for (int c = 0; c < g.c; ++c) {
        Real* plane = dx + static_cast<std::size_t>(c) * g.h * g.w;
        for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
                const Real* row =
                    col + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * cols;
                for (int oy = 0; oy < g.oh; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.h) {
                        continue;
                    }
                    const Real* in = row + static_cast<std::size_t>(oy) * g.ow;
                    Real* out = plane + static_cast<std::size_t>(iy) * g.w;
                    for (int ox = 0; ox < g.ow; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (ix >= 0 && ix < g.w) {
                            out[ix] += in[ox];
                        }
                    }
                }
            }
        }
    }
}

constexpr std::size_t kTile = 256;

/// C[M x N] += A[M x K] * B[K x N]; A is indexed as A[m * lda + k * ak] so
/// the same routine serves A and A-transposed.
template <typename Real>
void gemm_accumulate(std::size_t M, std::size_t N, std::size_t K, const Real* A,
                     std::size_t a_row, std::size_t a_col, const Real* B, Real* C)
{
    for (std::size_t p0 = 0; p0 < N; p0 += kTile) {
        const std::size_t pn = std::min(kTile, N - p0);
        std::size_t m = 0;
        for (; m + 4 <= M; m += 4) {
            Real* c0 = C + (m + 0) * N + p0;
            Real* c1 = C + (m + 1) * N + p0;
            Real* c2 = C + (m + 2) * N + p0;
            Real* c3 = C + (m + 3) * N + p0;
            for (std::size_t k = 0; k < K; ++k) {
                const Real a0 = A[(m + 0) * a_row + k * a_col];
                const Real a1 = A[(m + 1) * a_row + k * a_col];
                const Real a2 = A[(m + 2) * a_row + k * a_col];
                const Real a3 = A[(m + 3) * a_row + k * a_col];
                const Real* b = B + k * N + p0;
                for (std::size_t p = 0; p < pn; ++p) {
                    const Real bv = b[p];
                    c0[p] += a0 * bv;
                    c1[p] += a1 * bv;
                    c2[p] += a2 * bv;
                    c3[p] += a3 * bv;
                }
            }
        }
        for (; m < M; ++m) {
            Real* c0 = C + m * N + p0;
            for (std::size_t k = 0; k < K; ++k) {
                const Real a0 = A[m * a_row + k * a_col];
                const Real* b = B + k * N + p0;
                for (std::size_t p = 0; p < pn; ++p) {
                    c0[p] += a0 * b[p];
                }
            }
        }
    }
}

template <typename Real>
Real dot(const Real* a, const Real* b, std::size_t n)
{
    Real acc[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (int j = 0; j < 8; ++j) {
            acc[j] += a[i + j] * b[i + j];
        }
    }
    Real s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (; i < n; ++i) {
        s += a[i] * b[i];
    }
    return s;
}

template <typename Real>
void require_same_shape(const BasicTensor<Real>& a, const BasicTensor<Real>& b, const char* what)
{
    if (a.shape() != b.shape()) {
        throw TensorError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) +
                          " vs " + shape_string(b.shape()));
    }
}

}  // namespace

template <typename Real>
BasicTensor<Real> conv2d(const BasicTensor<Real>& x, const BasicTensor<Real>& weight,
                         const BasicTensor<Real>* bias, int stride, int pad)
{
    const auto g = conv_geometry(x, weight, stride, pad);
    if (bias && (bias->rank() != 1 || bias->dim(0) != g.f)) {
        throw TensorError("conv2d: bias must have shape [" + std::to_string(g.f) + "]");
    }
    BasicTensor<Real> y({g.n, g.f, g.oh, g.ow});
    const std::size_t cols = g.cols();
    std::vector<Real> col(g.is_pointwise() ? 0 : g.rows() * cols);
    for (int n = 0; n < g.n; ++n) {
        const Real* xin = x.raw() + static_cast<std::size_t>(n) * g.c * g.h * g.w;
        Real* yout = y.raw() + static_cast<std::size_t>(n) * g.f * cols;
        if (bias) {
            for (int f = 0; f < g.f; ++f) {
                std::fill(yout + f * cols, yout + (f + 1) * cols, (*bias)[f]);
            }
        }
        const Real* b = xin;
        if (!g.is_pointwise()) {
            im2col(xin, g, col.data());
            b = col.data();
        }
        gemm_accumulate<Real>(g.f, cols, g.rows(), weight.raw(), g.rows(), 1, b, yout);
    }
    return y;
}

template <typename Real>
void conv2d_backward(const BasicTensor<Real>& x, const BasicTensor<Real>& weight, int stride,
                     int pad, const BasicTensor<Real>& dy, BasicTensor<Real>* dx,
                     BasicTensor<Real>* dweight, BasicTensor<Real>* dbias)
{
    const auto g = conv_geometry(x, weight, stride, pad);
    if (dy.shape() != std::vector<int>{g.n, g.f, g.oh, g.ow}) {
        throw TensorError("conv2d backward: gradient shape " + shape_string(dy.shape()));
    }
    const std::size_t cols = g.cols();
    const std::size_t rows = g.rows();
    std::vector<Real> col(g.is_pointwise() ? 0 : rows * cols);
    std::vector<Real> dcol(dx && !g.is_pointwise() ? rows * cols : 0);
    for (int n = 0; n < g.n; ++n) {
        const Real* xin = x.raw() + static_cast<std::size_t>(n) * g.c * g.h * g.w;
        const Real* dyn = dy.raw() + static_cast<std::size_t>(n) * g.f * cols;
        if (dbias) {
            for (int f = 0; f < g.f; ++f) {
                Real s = 0;
                for (std::size_t p = 0; p < cols; ++p) {
                    s += dyn[f * cols + p];
                }
                (*dbias)[f] += s;
            }
        }
        const Real* b = xin;
        if (dweight) {
            if (!g.is_pointwise()) {
                im2col(xin, g, col.data());
                b = col.data();
            }
            Real* dw = dweight->raw();
            for (int f = 0; f < g.f; ++f) {
                for (std::size_t k = 0; k < rows; ++k) {
                    dw[f * rows + k] += dot(dyn + f * cols, b + k * cols, cols);
                }
            }
        }
        if (dx) {
            Real* dxn = dx->raw() + static_cast<std::size_t>(n) * g.c * g.h * g.w;
            if (g.is_pointwise()) {
                gemm_accumulate<Real>(rows, cols, g.f, weight.raw(), 1, rows, dyn, dxn);
            } else {
                std::fill(dcol.begin(), dcol.end(), Real(0));
                gemm_accumulate<Real>(rows, cols, g.f, weight.raw(), 1, rows, dyn, dcol.data());
                col2im_add(dcol.data(), g, dxn);
            }
        }
    }
}

template <typename Real>
BasicTensor<Real> leaky_relu(const BasicTensor<Real>& x, Real slope)
{
    BasicTensor<Real> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const Real v = x[i];
        y[i] = v > Real(0) ? v : v * slope;
    }
    return y;
}

template <typename Real>
void leaky_relu_backward(const BasicTensor<Real>& x, Real slope, const BasicTensor<Real>& dy,
                         BasicTensor<Real>& dx)
{
    for (std::size_t i = 0; i < x.size(); ++i) {
        dx[i] += x[i] > Real(0) ? dy[i] : dy[i] * slope;
    }
}

template <typename Real>
BasicTensor<Real> upsample2x(const BasicTensor<Real>& x)
{
    require_rank4(x.shape(), "upsample2x");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    BasicTensor<Real> y({n, c, 2 * h, 2 * w});
    const Real* in = x.raw();
    Real* out = y.raw();
    for (int plane = 0; plane < n * c; ++plane) {
        for (int iy = 0; iy < h; ++iy) {
            const Real* src = in + (static_cast<std::size_t>(plane) * h + iy) * w;
            Real* r0 = out + (static_cast<std::size_t>(plane) * 2 * h + 2 * iy) * 2 * w;
            Real* r1 = r0 + 2 * w;
            for (int ix = 0; ix < w; ++ix) {
                r0[2 * ix] = r0[2 * ix + 1] = src[ix];
                r1[2 * ix] = r1[2 * ix + 1] = src[ix];
            }
        }
    }
    return y;
}

template <typename Real>
void upsample2x_backward(const BasicTensor<Real>& dy, BasicTensor<Real>& dx)
{
    const int n = dx.dim(0), c = dx.dim(1), h = dx.dim(2), w = dx.dim(3);
    const Real* in = dy.raw();
    Real* out = dx.raw();
    for (int plane = 0; plane < n * c; ++plane) {
        for (int iy = 0; iy < h; ++iy) {
            const Real* r0 = in + (static_cast<std::size_t>(plane) * 2 * h + 2 * iy) * 2 * w;
            const Real* r1 = r0 + 2 * w;
            Real* dst = out + (static_cast<std::size_t>(plane) * h + iy) * w;
            for (int ix = 0; ix < w; ++ix) {
                dst[ix] += (r0[2 * ix] + r0[2 * ix + 1]) + (r1[2 * ix] + r1[2 * ix + 1]);
            }
        }
    }
}

template <typename Real>
BasicTensor<Real> add(const BasicTensor<Real>& a, const BasicTensor<Real>& b)
{
    require_same_shape(a, b, "shortcut_add");
    BasicTensor<Real> y(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        y[i] = a[i] + b[i];
    }
    return y;
}

template <typename Real>
BasicTensor<Real> concat_channels(std::span<const BasicTensor<Real>* const> xs)
{
    if (xs.empty()) {
        throw TensorError("route_concat: no inputs");
    }
    const auto& first = *xs.front();
    require_rank4(first.shape(), "route_concat");
    int channels = 0;
    for (const auto* t : xs) {
        require_rank4(t->shape(), "route_concat");
        if (t->dim(0) != first.dim(0) || t->dim(2) != first.dim(2) || t->dim(3) != first.dim(3)) {
            throw TensorError("route_concat: spatial mismatch " + shape_string(t->shape()) +
                              " vs " + shape_string(first.shape()));
        }
        channels += t->dim(1);
    }
    const int n = first.dim(0);
    const std::size_t plane = static_cast<std::size_t>(first.dim(2)) * first.dim(3);
    BasicTensor<Real> y({n, channels, first.dim(2), first.dim(3)});
    Real* out = y.raw();
    for (int b = 0; b < n; ++b) {
        for (const auto* t : xs) {
            const std::size_t count = t->dim(1) * plane;
            const Real* src = t->raw() + b * count;
            out = std::copy(src, src + count, out);
        }
    }
    return y;
}

template <typename Real>
BasicTensor<Real> slice_channels(const BasicTensor<Real>& x, int c0, int count)
{
    require_rank4(x.shape(), "slice_channels");
    if (c0 < 0 || count < 0 || c0 + count > x.dim(1)) {
        throw TensorError("slice_channels: range out of bounds");
    }
    const int n = x.dim(0);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    BasicTensor<Real> y({n, count, x.dim(2), x.dim(3)});
    for (int b = 0; b < n; ++b) {
        const Real* src = x.raw() + (static_cast<std::size_t>(b) * x.dim(1) + c0) * plane;
        std::copy(src, src + count * plane, y.raw() + static_cast<std::size_t>(b) * count * plane);
    }
    return y;
}

#define SMALLDET_INSTANTIATE_OPS(Real)                                                          \
    template BasicTensor<Real> conv2d(const BasicTensor<Real>&, const BasicTensor<Real>&,     \
                                      const BasicTensor<Real>*, int, int);                     \
    template void conv2d_backward(const BasicTensor<Real>&, const BasicTensor<Real>&, int, int, \
                                  const BasicTensor<Real>&, BasicTensor<Real>*,                 \
                                  BasicTensor<Real>*, BasicTensor<Real>*);                      \
    template BasicTensor<Real> leaky_relu(const BasicTensor<Real>&, Real);                     \
    template void leaky_relu_backward(const BasicTensor<Real>&, Real, const BasicTensor<Real>&, \
                                      BasicTensor<Real>&);                                      \
    template BasicTensor<Real> upsample2x(const BasicTensor<Real>&);                           \
    template void upsample2x_backward(const BasicTensor<Real>&, BasicTensor<Real>&);           \
    template BasicTensor<Real> add(const BasicTensor<Real>&, const BasicTensor<Real>&);        \
    template BasicTensor<Real> concat_channels(std::span<const BasicTensor<Real>* const>);     \
    template BasicTensor<Real> slice_channels(const BasicTensor<Real>&, int, int);

SMALLDET_INSTANTIATE_OPS(float)
SMALLDET_INSTANTIATE_OPS(double)
#undef SMALLDET_INSTANTIATE_OPS

}  // namespace ops

// ---------------------------------------------------------------------------
// Tape

template <typename Real>
typename Tape<Real>::Node& Tape<Real>::node(Var v)
{
    if (v.index >= nodes_.size()) {
        throw TensorError("tensor is not on this tape");
    }
    return nodes_[v.index];
}

template <typename Real>
const typename Tape<Real>::Node& Tape<Real>::node(Var v) const
{
    if (v.index >= nodes_.size()) {
        throw TensorError("tensor is not on this tape");
    }
    return nodes_[v.index];
}

template <typename Real>
Var Tape<Real>::push(TensorT value, std::initializer_list<Var> inputs,
                     std::function<void(Tape&, std::size_t)> fn)
{
#ifndef NDEBUG
    if (!all_finite(value)) {
        throw TensorError("non-finite value produced at tape node " +
                          std::to_string(nodes_.size()));
    }
#endif
    Node n;
    n.value = std::move(value);
    if (record_) {
        for (Var in : inputs) {
            n.requires_grad = n.requires_grad || node(in).requires_grad;
        }
        if (n.requires_grad) {
            n.backward_fn = std::move(fn);
        }
    }
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

template <typename Real>
typename Tape<Real>::TensorT& Tape<Real>::grad_buffer(std::size_t index)
{
    Node& n = nodes_[index];
    if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) {
        n.grad = TensorT(n.value.shape());
    }
    return n.grad;
}

template <typename Real>
Var Tape<Real>::leaf(TensorT value)
{
    Node n;
    n.requires_grad = record_ && value.requires_grad();
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

template <typename Real>
Var Tape<Real>::conv2d(Var x, Var weight, std::optional<Var> bias, int stride, int pad)
{
    const TensorT* b = bias ? &value(*bias) : nullptr;
    auto y = ops::conv2d(value(x), value(weight), b, stride, pad);
    if (bias) {
        return push(std::move(y), {x, weight, *bias},
                    [x, weight, bias, stride, pad](Tape& t, std::size_t self) {
                        const auto& dy = t.nodes_[self].grad;
                        TensorT* dx = t.node(x).requires_grad ? &t.grad_buffer(x.index) : nullptr;
                        TensorT* dw = t.node(weight).requires_grad ? &t.grad_buffer(weight.index)
                                                                   : nullptr;
                        TensorT* db = t.node(*bias).requires_grad ? &t.grad_buffer(bias->index)
                                                                  : nullptr;
                        ops::conv2d_backward(t.value(x), t.value(weight), stride, pad, dy, dx, dw,
                                             db);
                    });
    }
    return push(std::move(y), {x, weight}, [x, weight, stride, pad](Tape& t, std::size_t self) {
        const auto& dy = t.nodes_[self].grad;
        TensorT* dx = t.node(x).requires_grad ? &t.grad_buffer(x.index) : nullptr;
        TensorT* dw = t.node(weight).requires_grad ? &t.grad_buffer(weight.index) : nullptr;
        ops::conv2d_backward(t.value(x), t.value(weight), stride, pad, dy, dx, dw,
                             static_cast<TensorT*>(nullptr));
    });
}

template <typename Real>
Var Tape<Real>::leaky_relu(Var x, Real slope)
{
    return push(ops::leaky_relu(value(x), slope), {x}, [x, slope](Tape& t, std::size_t self) {
        if (t.node(x).requires_grad) {
            ops::leaky_relu_backward(t.value(x), slope, t.nodes_[self].grad, t.grad_buffer(x.index));
        }
    });
}

template <typename Real>
Var Tape<Real>::upsample2x(Var x)
{
    return push(ops::upsample2x(value(x)), {x}, [x](Tape& t, std::size_t self) {
        if (t.node(x).requires_grad) {
            ops::upsample2x_backward(t.nodes_[self].grad, t.grad_buffer(x.index));
        }
    });
}

template <typename Real>
Var Tape<Real>::add(Var a, Var b)
{
    return push(ops::add(value(a), value(b)), {a, b}, [a, b](Tape& t, std::size_t self) {
        const auto& dy = t.nodes_[self].grad;
        for (Var in : {a, b}) {
            if (t.node(in).requires_grad) {
                auto& g = t.grad_buffer(in.index);
                for (std::size_t i = 0; i < dy.size(); ++i) {
                    g[i] += dy[i];
                }
            }
        }
    });
}

template <typename Real>
Var Tape<Real>::concat(std::span<const Var> xs)
{
    std::vector<const TensorT*> inputs;
    for (Var v : xs) {
        inputs.push_back(&value(v));
    }
    auto y = ops::concat_channels<Real>(inputs);
    std::vector<Var> sources(xs.begin(), xs.end());
    Node n;
    n.value = std::move(y);
    if (record_) {
        for (Var v : sources) {
            n.requires_grad = n.requires_grad || node(v).requires_grad;
        }
    }
    if (n.requires_grad) {
        n.backward_fn = [sources](Tape& t, std::size_t self) {
            const auto& dy = t.nodes_[self].grad;
            const int batch = dy.dim(0);
            const std::size_t plane = static_cast<std::size_t>(dy.dim(2)) * dy.dim(3);
            const std::size_t total = static_cast<std::size_t>(dy.dim(1)) * plane;
            std::size_t offset = 0;
            for (Var v : sources) {
                const std::size_t count = t.value(v).dim(1) * plane;
                if (t.node(v).requires_grad) {
                    auto& g = t.grad_buffer(v.index);
                    for (int b = 0; b < batch; ++b) {
                        const Real* src = dy.raw() + b * total + offset;
                        Real* dst = g.raw() + b * count;
                        for (std::size_t i = 0; i < count; ++i) {
                            dst[i] += src[i];
                        }
                    }
                }
                offset += count;
            }
        };
    }
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

template <typename Real>
Var Tape<Real>::sum(Var x)
{
    const auto& xv = value(x);
    Real s = 0;
    for (Real v : xv.data()) {
        s += v;
    }
    return push(TensorT({1}, std::vector<Real>{s}), {x}, [x](Tape& t, std::size_t self) {
        if (t.node(x).requires_grad) {
            const Real g = t.nodes_[self].grad[0];
            auto& dx = t.grad_buffer(x.index);
            for (std::size_t i = 0; i < dx.size(); ++i) {
                dx[i] += g;
            }
        }
    });
}

template <typename Real>
Var Tape<Real>::weighted_sum(Var x, const TensorT& weights)
{
    const auto& xv = value(x);
    if (weights.size() != xv.size()) {
        throw TensorError("weighted_sum: weight count mismatch");
    }
    Real s = 0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
        s += xv[i] * weights[i];
    }
    return push(TensorT({1}, std::vector<Real>{s}), {x},
                [x, weights](Tape& t, std::size_t self) {
                    if (t.node(x).requires_grad) {
                        const Real g = t.nodes_[self].grad[0];
                        auto& dx = t.grad_buffer(x.index);
                        for (std::size_t i = 0; i < dx.size(); ++i) {
                            dx[i] += g * weights[i];
                        }
                    }
                });
}

template <typename Real>
void Tape<Real>::run_backward(std::size_t last)
{
    for (std::size_t i = last + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.backward_fn && !n.grad.empty()) {
            n.backward_fn(*this, i);
        }
    }
}

template <typename Real>
void Tape<Real>::backward(Var loss)
{
    const Node& n = node(loss);
    if (n.value.size() != 1) {
        throw TensorError("backward: loss must be a scalar, got shape " +
                          shape_string(n.value.shape()));
    }
    if (!record_) {
        throw TensorError("backward: tape was created without recording");
    }
    grad_buffer(loss.index)[0] = Real(1);
    run_backward(loss.index);
}

template <typename Real>
void Tape<Real>::backward(std::span<const Var> outputs, std::span<const TensorT> seeds)
{
    if (outputs.size() != seeds.size()) {
        throw TensorError("backward: one seed per output required");
    }
    if (!record_) {
        throw TensorError("backward: tape was created without recording");
    }
    std::size_t last = 0;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        const Node& n = node(outputs[i]);
        if (seeds[i].shape() != n.value.shape()) {
            throw TensorError("backward: seed shape " + shape_string(seeds[i].shape()) +
                              " does not match output " + shape_string(n.value.shape()));
        }
        auto& g = grad_buffer(outputs[i].index);
        for (std::size_t k = 0; k < g.size(); ++k) {
            g[k] += seeds[i][k];
        }
        last = std::max(last, outputs[i].index);
    }
    run_backward(last);
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace smalldet
