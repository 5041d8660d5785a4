#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "metacl/errors.hpp"

namespace metacl {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major 64-bit real tensor. Rank 0 is a scalar holding one element.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;

    Tensor() = default;

    static Tensor zeros(Shape s);
    static Tensor full(Shape s, double v);
    static Tensor scalar(double v);
    static Tensor from(Shape s, std::vector<double> d);

    int64_t numel() const { return int64_t(data.size()); }
    int64_t rank() const { return int64_t(shape.size()); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double& operator[](int64_t i) { return data[size_t(i)]; }
    double operator[](int64_t i) const { return data[size_t(i)]; }

    // Rank-2 access.
    double& at(int64_t i, int64_t j) { return data[size_t(i * shape[1] + j)]; }
    double at(int64_t i, int64_t j) const { return data[size_t(i * shape[1] + j)]; }

    double item() const;  // requires numel() == 1
    bool all_finite() const;
};

bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace metacl
