#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpcqa {

using Shape = std::vector<int64_t>;

// Thrown on incompatible shapes or invalid op arguments.
class ShapeError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// Thrown when an op produces NaN/Inf. Forward results must stay finite.
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Thrown on malformed files, unreadable paths, or bad manifests.
class IoError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

inline int64_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), int64_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

// Dense row-major tensor. Carries an optional gradient buffer of the same
// shape; grad is allocated iff requires_grad.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad;

    // Monotone creation id assigned by the tape; used to assert that
    // recorded ops stay topologically ordered.
    int64_t node_id = -1;

    Tensor() = default;
    Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (shape_numel(shape) != static_cast<int64_t>(data.size()))
            throw ShapeError("tensor data size " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t dim(size_t i) const { return shape.at(i); }
    size_t rank() const { return shape.size(); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }

    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
    }

    T& at(int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& at(int64_t i) const { return data[static_cast<size_t>(i)]; }

    // Row-major 3-d access, shape [C x H x W].
    T& at3(int64_t c, int64_t y, int64_t x) {
        return data[static_cast<size_t>((c * shape[1] + y) * shape[2] + x)];
    }
    const T& at3(int64_t c, int64_t y, int64_t x) const {
        return data[static_cast<size_t>((c * shape[1] + y) * shape[2] + x)];
    }
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <typename T>
TensorPtr<T> make_tensor(Shape shape, std::vector<T> data = {}) {
    auto n = shape_numel(shape);
    if (n < 0) throw ShapeError("negative shape " + shape_str(shape));
    if (data.empty() && n > 0) data.assign(static_cast<size_t>(n), T(0));
    return std::make_shared<Tensor<T>>(std::move(shape), std::move(data));
}

template <typename T>
TensorPtr<T> zeros(Shape shape) {
    auto n = shape_numel(shape);
    if (n < 0) throw ShapeError("negative shape " + shape_str(shape));
    return make_tensor<T>(std::move(shape), std::vector<T>(static_cast<size_t>(n), T(0)));
}

template <typename T>
TensorPtr<T> full(Shape shape, T value) {
    auto n = shape_numel(shape);
    return make_tensor<T>(std::move(shape), std::vector<T>(static_cast<size_t>(n), value));
}

template <typename T>
TensorPtr<T> scalar_tensor(T value) {
    return make_tensor<T>(Shape{1}, std::vector<T>{value});
}

// Trainable leaf: grad storage allocated up front.
template <typename T>
TensorPtr<T> param_tensor(Shape shape, std::vector<T> data = {}) {
    auto t = make_tensor<T>(std::move(shape), std::move(data));
    t->requires_grad = true;
    t->ensure_grad();
    return t;
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* op_name) {
    for (const T& v : t.data) {
        if (!std::isfinite(static_cast<double>(v)))
            throw NumericalError(std::string(op_name) + " produced a non-finite value");
    }
}

template <typename T>
bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape == b.shape;
}

// Elementwise precision change; grads are not carried over.
template <typename Dst, typename Src>
TensorPtr<Dst> cast_tensor(const TensorPtr<Src>& t) {
    std::vector<Dst> d(t->data.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = static_cast<Dst>(t->data[i]);
    return make_tensor<Dst>(t->shape, std::move(d));
}

}  // namespace dpcqa
