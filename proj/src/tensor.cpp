#include "metacl/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace metacl {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

Tensor Tensor::zeros(Shape s) {
    Tensor t;
    t.data.assign(size_t(shape_numel(s)), 0.0);
    t.shape = std::move(s);
    return t;
}

Tensor Tensor::full(Shape s, double v) {
    Tensor t;
    t.data.assign(size_t(shape_numel(s)), v);
    t.shape = std::move(s);
    return t;
}

Tensor Tensor::scalar(double v) {
    Tensor t;
    t.shape = {};
    t.data = {v};
    return t;
}

Tensor Tensor::from(Shape s, std::vector<double> d) {
    if (shape_numel(s) != int64_t(d.size())) {
        throw ShapeError("tensor data length " + std::to_string(d.size()) +
                         " does not match shape " + shape_str(s));
    }
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(d);
    return t;
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ContractError("item() requires a single-element tensor, got shape " +
                            shape_str(shape));
    }
    return data[0];
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) return false;
    for (size_t i = 0; i < a.data.size(); ++i) {
        // Bitwise: distinguishes -0.0 from 0.0 and compares NaN payloads.
        if (std::memcmp(&a.data[i], &b.data[i], sizeof(double)) != 0) return false;
    }
    return true;
}

}  // namespace metacl
