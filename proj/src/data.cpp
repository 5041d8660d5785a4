#include "metacl/data.hpp"

#include <algorithm>

#include "metacl/errors.hpp"

namespace metacl {

Tensor image_rows(const Tensor& images, const std::vector<int64_t>& rows) {
    if (images.rank() < 1) throw ShapeError("image_rows: images tensor has no batch dimension");
    int64_t n = images.shape[0];
    int64_t item = n > 0 ? images.numel() / n : 0;
    for (int64_t r : rows) {
        if (r < 0 || r >= n) throw ContractError("image_rows: row index out of range");
    }
    Shape s = images.shape;
    s[0] = int64_t(rows.size());
    Tensor out = Tensor::zeros(s);
    for (size_t i = 0; i < rows.size(); ++i) {
        const double* src = images.data.data() + rows[i] * item;
        std::copy(src, src + item, out.data.data() + int64_t(i) * item);
    }
    return out;
}

}  // namespace metacl
