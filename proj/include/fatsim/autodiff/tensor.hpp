#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fatsim/error.hpp"

namespace fatsim::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

/// Dense row-major array. Scalars are represented with shape {1}.
template <typename S>
struct BasicTensor {
    Shape shape;
    std::vector<S> data;

    BasicTensor() = default;

    explicit BasicTensor(Shape s, S fill = S(0)) : shape(std::move(s)), data(shape_numel(shape), fill) {
        check_extents();
    }

    BasicTensor(Shape s, std::vector<S> values) : shape(std::move(s)), data(std::move(values)) {
        check_extents();
        if (shape_numel(shape) != data.size())
            throw ShapeError("tensor: shape " + shape_str(shape) + " holds " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(data.size()));
    }

    static BasicTensor scalar(S v) { return BasicTensor(Shape{1}, std::vector<S>{v}); }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    S& operator[](std::size_t i) { return data[i]; }
    const S& operator[](std::size_t i) const { return data[i]; }

    S item() const {
        if (data.size() != 1) throw ShapeError("item: tensor " + shape_str(shape) + " is not a scalar");
        return data[0];
    }

    bool all_finite() const {
        for (S v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    template <typename T>
    BasicTensor<T> cast() const {
        return BasicTensor<T>(shape, std::vector<T>(data.begin(), data.end()));
    }

    friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

private:
    void check_extents() const {
        if (shape.empty()) throw ShapeError("tensor: empty shape");
        for (auto e : shape)
            if (e == 0) throw ShapeError("tensor: zero extent in shape " + shape_str(shape));
    }
};

using Tensor = BasicTensor<float>;

}  // namespace fatsim::ad
