#include "flowguide/tensor.hpp"

#include <cmath>
#include <sstream>

namespace flowguide {

std::string Tensor::shape_string() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << ",";
        os << shape_[i];
    }
    os << ")";
    return os.str();
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw DimensionError(std::string("tensor ") + op + ": shape mismatch " +
                             a.shape_string() + " vs " + b.shape_string());
}

}  // namespace

Tensor operator+(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

Tensor operator*(double c, const Tensor& a) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
    return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "hadamard");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
        throw DimensionError("matmul: incompatible shapes " + a.shape_string() +
                             " x " + b.shape_string());
    const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a.at(i, p);
            if (aip == 0.0) continue;
            for (std::size_t j = 0; j < m; ++j) out.at(i, j) += aip * b.at(p, j);
        }
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw DimensionError("transpose: rank-2 tensor required");
    const std::size_t n = a.shape()[0], m = a.shape()[1];
    Tensor out({m, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

Tensor matvec(const Tensor& a, const Tensor& x) {
    if (a.rank() != 2 || x.rank() != 1 || a.shape()[1] != x.size())
        throw DimensionError("matvec: incompatible shapes " + a.shape_string() +
                             " x " + x.shape_string());
    Tensor out({a.shape()[0]});
    matvec_into(a, x.span(), out.span());
    return out;
}

void matvec_into(const Tensor& a, std::span<const double> x, std::span<double> out) {
    const std::size_t n = a.shape()[0], m = a.shape()[1];
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        const double* row = a.data() + i * m;
        for (std::size_t j = 0; j < m; ++j) s += row[j] * x[j];
        out[i] = s;
    }
}

void matvec_transposed_into(const Tensor& a, std::span<const double> x, std::span<double> out) {
    const std::size_t n = a.shape()[0], m = a.shape()[1];
    for (std::size_t j = 0; j < m; ++j) out[j] = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        const double* row = a.data() + i * m;
        for (std::size_t j = 0; j < m; ++j) out[j] += row[j] * xi;
    }
}

bool tensor_all_finite(const Tensor& a) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!std::isfinite(a[i])) return false;
    return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace flowguide
