#pragma once

#include <cstddef>
#include <vector>

#include "openparts/error.hpp"

namespace openparts {

// Dense row-major matrix of doubles. Rank-1 data is carried as 1xN or Nx1.
struct Tensor2 {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Tensor2() = default;
    Tensor2(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {
        if (r < 0 || c < 0) throw DimError("negative tensor dimension");
    }
    Tensor2(int r, int c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
        if (data.size() != static_cast<size_t>(r) * c)
            throw DimError("tensor data size does not match shape");
    }

    double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

    size_t size() const { return data.size(); }

    bool same_shape(const Tensor2& o) const { return rows == o.rows && cols == o.cols; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    static Tensor2 identity(int n) {
        Tensor2 t(n, n);
        for (int i = 0; i < n; ++i) t(i, i) = 1.0;
        return t;
    }
};

}  // namespace openparts
