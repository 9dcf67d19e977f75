#pragma once
#include <cblas.h>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "mind/common.hpp"
#include "mind/rng.hpp"

extern "C" void openblas_set_num_threads(int);

namespace mind {

// BLAS stays single-threaded; reproducibility comes from a fixed evaluation
// order, parallelism (if any) happens across independent samples.
inline void blas_init_once() {
    static const bool done = [] {
        openblas_set_num_threads(1);
        return true;
    }();
    (void)done;
}

/// Dense row-major tensor of rank <= 4.
template <class T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(size_t(numel_of(shape)), T(0));
    }
    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, T v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static Tensor from(std::vector<int> s, std::vector<T> d) {
        Tensor t;
        t.shape = std::move(s);
        t.data = std::move(d);
        if (std::int64_t(t.data.size()) != numel_of(t.shape))
            throw DimensionError("tensor: data size does not match shape");
        return t;
    }

    static std::int64_t numel_of(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }
    std::int64_t numel() const { return std::int64_t(data.size()); }
    int dim(int i) const { return shape[size_t(i)]; }
    T& operator[](size_t i) { return data[i]; }
    const T& operator[](size_t i) const { return data[i]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
        return out;
    }
};

/// C[M x N] = alpha * op(A) op(B) + beta * C, row-major.
template <class T>
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda,
                 const T* b, int ldb, T beta, T* c, int ldc) {
    blas_init_once();
    if constexpr (std::is_same_v<T, float>) {
        cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                    trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
    } else {
        cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                    trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
    }
}

/// Seeded N(0, std) fill; the stream is keyed by name so initialization does
/// not depend on parameter registration order.
template <class T>
inline Tensor<T> randn_named(std::vector<int> shape, double std, std::uint64_t seed,
                             const std::string& name) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (char ch : name) {
        h ^= std::uint64_t(static_cast<unsigned char>(ch));
        h *= 1099511628211ULL;
    }
    Rng rng = Rng::keyed(seed, h);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) v = T(std * rng.normal());
    return t;
}

}  // namespace mind
