#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace smalldet {

class TensorError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major array. Activations use NCHW order, convolution weights
/// FCkk. Instantiated for float (storage) and double (gradient checks).
template <typename Real>
class BasicTensor {
public:
    using value_type = Real;

    BasicTensor() = default;
    explicit BasicTensor(std::vector<int> shape, Real fill = Real(0));
    BasicTensor(std::vector<int> shape, std::vector<Real> data);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<Real> data() { return data_; }
    std::span<const Real> data() const { return data_; }
    Real* raw() { return data_.data(); }
    const Real* raw() const { return data_.data(); }

    Real& operator[](std::size_t i) { return data_[i]; }
    Real operator[](std::size_t i) const { return data_[i]; }

    /// Element of a rank-4 tensor.
    Real& at(int n, int c, int y, int x)
    {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }
    Real at(int n, int c, int y, int x) const
    {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool on) { requires_grad_ = on; }

    void fill(Real v);

    template <typename Other>
    BasicTensor<Other> cast() const
    {
        BasicTensor<Other> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) {
            out[i] = static_cast<Other>(data_[i]);
        }
        out.set_requires_grad(requires_grad_);
        return out;
    }

    bool operator==(const BasicTensor& other) const
    {
        return shape_ == other.shape_ && data_ == other.data_;
    }

private:
    std::vector<int> shape_;
    std::vector<Real> data_;
    bool requires_grad_ = false;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

std::string shape_string(const std::vector<int>& shape);

template <typename Real>
bool all_finite(const BasicTensor<Real>& t);

/// Stateless forward and backward kernels. Backward kernels accumulate into
/// the gradient tensors they are given (which must already be sized).
namespace ops {

template <typename Real>
BasicTensor<Real> conv2d(const BasicTensor<Real>& x, const BasicTensor<Real>& weight,
                         const BasicTensor<Real>* bias, int stride, int pad);

template <typename Real>
void conv2d_backward(const BasicTensor<Real>& x, const BasicTensor<Real>& weight, int stride,
                     int pad, const BasicTensor<Real>& dy, BasicTensor<Real>* dx,
                     BasicTensor<Real>* dweight, BasicTensor<Real>* dbias);

template <typename Real>
BasicTensor<Real> leaky_relu(const BasicTensor<Real>& x, Real slope);

template <typename Real>
void leaky_relu_backward(const BasicTensor<Real>& x, Real slope, const BasicTensor<Real>& dy,
                         BasicTensor<Real>& dx);

template <typename Real>
BasicTensor<Real> upsample2x(const BasicTensor<Real>& x);

template <typename Real>
void upsample2x_backward(const BasicTensor<Real>& dy, BasicTensor<Real>& dx);

template <typename Real>
BasicTensor<Real> add(const BasicTensor<Real>& a, const BasicTensor<Real>& b);

/// Channel concatenation of NCHW tensors in argument order.
template <typename Real>
BasicTensor<Real> concat_channels(std::span<const BasicTensor<Real>* const> xs);

/// Channel slice [c0, c0 + count) of an NCHW tensor.
template <typename Real>
BasicTensor<Real> slice_channels(const BasicTensor<Real>& x, int c0, int count);

}  // namespace ops

/// Handle to a value recorded on a Tape.
struct Var {
    std::size_t index = static_cast<std::size_t>(-1);
};

/// Records executed operations so gradients can be propagated in reverse.
/// Nodes are appended in execution order, which is already a topological
/// order; backward walks them once from the back.
template <typename Real>
class Tape {
public:
    using TensorT = BasicTensor<Real>;

    /// With `record` false the tape only holds values (inference).
    explicit Tape(bool record = true) : record_(record) {}

    /// Adds an input. Gradients are tracked iff value.requires_grad().
    Var leaf(TensorT value);

    Var conv2d(Var x, Var weight, std::optional<Var> bias, int stride, int pad);
    Var leaky_relu(Var x, Real slope = Real(0.1));
    Var upsample2x(Var x);
    Var add(Var a, Var b);
    Var concat(std::span<const Var> xs);
    /// Scalar sum of all elements.
    Var sum(Var x);
    /// Scalar sum of x * weights (weights are constants).
    Var weighted_sum(Var x, const TensorT& weights);

    const TensorT& value(Var v) const { return node(v).value; }
    /// Gradient after backward; empty if the node does not require grad.
    const TensorT& grad(Var v) const { return node(v).grad; }
    bool requires_grad(Var v) const { return node(v).requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Reverse pass from a scalar.
    void backward(Var loss);
    /// Reverse pass seeded with explicit output gradients.
    void backward(std::span<const Var> outputs, std::span<const TensorT> seeds);

private:
    struct Node {
        TensorT value;
        TensorT grad;
        bool requires_grad = false;
        std::function<void(Tape&, std::size_t)> backward_fn;
    };

    Node& node(Var v);
    const Node& node(Var v) const;
    Var push(TensorT value, std::initializer_list<Var> inputs,
             std::function<void(Tape&, std::size_t)> fn);
    TensorT& grad_buffer(std::size_t index);
    void run_backward(std::size_t last);

    std::vector<Node> nodes_;
    bool record_;
};

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace smalldet
