#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace sag {

/// Dense row-major double matrix. The universal numeric carrier for
/// embeddings, affinities and Laplacians.
class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, double fill = 0.0);

    /// Construct from nested initializer-style data; rows must be equal length.
    static Mat from_rows(const std::vector<std::vector<double>>& rows);
    static Mat identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const {
        return {data_.data() + i * cols_, cols_};
    }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Mat& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    bool all_finite() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Mat transpose(const Mat& a);
Mat matmul(const Mat& a, const Mat& b);     // a (n×m) · b (m×p)
Mat matmul_nt(const Mat& a, const Mat& b);  // a (n×m) · bᵀ (p×m) -> n×p
Mat matmul_tn(const Mat& a, const Mat& b);  // aᵀ (m×n) · b (m×p) -> n×p

/// Throws std::invalid_argument when the matrix holds NaN or Inf.
void require_finite(const Mat& m, const std::string& what);

/// Condensed upper-triangle distance vector over n items; pair (i<j) lives
/// at index i*n - i*(i+1)/2 + (j-i-1).
struct CondensedDist {
    std::size_t n = 0;
    std::vector<double> values;

    CondensedDist() = default;
    explicit CondensedDist(std::size_t n_items)
        : n(n_items), values(n_items * (n_items - 1) / 2, 0.0) {}

    static std::size_t index(std::size_t i, std::size_t j, std::size_t n) {
        if (i > j) std::swap(i, j);
        return i * n - i * (i + 1) / 2 + (j - i - 1);
    }

    double operator()(std::size_t i, std::size_t j) const {
        return values[index(i, j, n)];
    }
    double& at(std::size_t i, std::size_t j) { return values[index(i, j, n)]; }
    std::size_t pair_count() const { return values.size(); }
};

/// Flat cluster assignment; label interpretation is relabeling-invariant.
struct Partition {
    std::vector<int> labels;

    Partition() = default;
    explicit Partition(std::vector<int> l) : labels(std::move(l)) {}
    std::size_t size() const { return labels.size(); }
};

} // namespace sag
