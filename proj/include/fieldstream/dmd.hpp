#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fieldstream/core.hpp"

// Exact dynamic mode decomposition over a sliding window of snapshots.
// With snapshots x_1..x_m, X = [x_1..x_{m-1}] and X' = [x_2..x_m], the
// reduced SVD X = U S V^T is truncated to rank r and the low-rank operator
// A~ = U_r^T X' V_r S_r^{-1} is formed; its eigenvalues approximate the
// discrete-time spectrum of the dynamics that generated the snapshots.

namespace fieldstream::dmd {

/// Sliding matrix of the most recent snapshots of one stream. Oldest
/// snapshots are evicted once `capacity` is exceeded.
class SnapshotWindow {
public:
    struct Snapshot {
        std::uint64_t step = 0;
        std::vector<double> values;
    };

    SnapshotWindow(std::size_t dim, std::size_t capacity = 16)
        : dim_(dim), capacity_(capacity) {
        if (dim_ < 1) throw InvalidArgument("snapshot dimension must be >= 1");
        if (capacity_ < 2) throw InvalidArgument("window capacity must be >= 2");
    }

    void push(std::uint64_t step, std::span<const double> values) {
        if (values.size() != dim_)
            throw InvalidArgument("snapshot length " + std::to_string(values.size()) +
                                  " does not match window dimension " + std::to_string(dim_));
        if (!snaps_.empty() && step <= snaps_.back().step)
            throw InvalidArgument("snapshot step " + std::to_string(step) +
                                  " not after " + std::to_string(snaps_.back().step));
        snaps_.push_back({step, std::vector<double>(values.begin(), values.end())});
        if (snaps_.size() > capacity_) snaps_.pop_front();
    }

    std::size_t size() const { return snaps_.size(); }
    std::size_t dim() const { return dim_; }
    std::size_t capacity() const { return capacity_; }
    std::uint64_t first_step() const { return snaps_.front().step; }
    std::uint64_t last_step() const { return snaps_.back().step; }
    const std::deque<Snapshot>& snapshots() const { return snaps_; }

    /// Column k is snapshot k, in window order.
    Eigen::MatrixXd as_matrix() const {
        Eigen::MatrixXd out(static_cast<Eigen::Index>(dim_),
                            static_cast<Eigen::Index>(snaps_.size()));
        for (std::size_t c = 0; c < snaps_.size(); ++c)
            for (std::size_t i = 0; i < dim_; ++i)
                out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) =
                    snaps_[c].values[i];
        return out;
    }

private:
    std::size_t dim_;
    std::size_t capacity_;
    std::deque<Snapshot> snaps_;
};

struct DmdResult {
    std::size_t rank = 0;
    std::vector<std::complex<double>> eigenvalues;  // sorted by |.| desc, then re, then im
    double stability_metric = 0.0;
    std::vector<double> singular_values;  // the r retained singular values
};

/// Mean of (|lambda| - 1)^2 over the eigenvalues: 0 exactly when every
/// eigenvalue sits on the unit circle, i.e. when the dynamics neither grow
/// nor decay.
inline double stability_metric(std::span<const std::complex<double>> eigenvalues) {
    if (eigenvalues.empty()) throw InvalidArgument("stability metric of empty eigenvalue list");
    double sum = 0.0;
    for (const auto& ev : eigenvalues) {
        double d = std::abs(ev) - 1.0;
        sum += d * d;
    }
    return sum / static_cast<double>(eigenvalues.size());
}

/// Exact DMD on a snapshot matrix (one column per snapshot, oldest first).
/// Singular values at or below svd_tol * sigma_1 are truncated; r_max == 0
/// leaves the rank uncapped.
inline DmdResult compute_dmd(const Eigen::MatrixXd& snapshots, double svd_tol = 1e-10,
                             std::size_t r_max = 0) {
    const Eigen::Index m = snapshots.cols();
    if (m < 2) throw InsufficientSnapshots("DMD needs at least 2 snapshots, got " +
                                           std::to_string(m));
    if (!snapshots.allFinite()) throw InvalidArgument("non-finite value in snapshot window");
    if (!(svd_tol >= 0.0) || svd_tol >= 1.0)
        throw InvalidArgument("svd_tol must be in [0, 1)");

    const auto X = snapshots.leftCols(m - 1);
    const auto Xp = snapshots.rightCols(m - 1);

    Eigen::BDCSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sigma = svd.singularValues();
    if (!(sigma(0) > 0.0)) throw DegenerateWindow("zero snapshot window");

    Eigen::Index r = 0;
    while (r < sigma.size() && sigma(r) > svd_tol * sigma(0)) ++r;
    if (r_max > 0) r = std::min(r, static_cast<Eigen::Index>(r_max));
    if (r < 1) throw DegenerateWindow("all singular values below tolerance");

    const Eigen::MatrixXd Ur = svd.matrixU().leftCols(r);
    const Eigen::MatrixXd Vr = svd.matrixV().leftCols(r);
    const Eigen::VectorXd sr = sigma.head(r);

    // A~ = U_r^T X' V_r S_r^{-1}, r x r
    Eigen::MatrixXd atilde =
        Ur.transpose() * Xp * Vr * sr.cwiseInverse().asDiagonal();

    Eigen::EigenSolver<Eigen::MatrixXd> es(atilde);
    if (es.info() != Eigen::Success) throw DegenerateWindow("eigensolver failed to converge");

    DmdResult out;
    out.rank = static_cast<std::size_t>(r);
    out.eigenvalues.reserve(out.rank);
    for (Eigen::Index i = 0; i < r; ++i) out.eigenvalues.push_back(es.eigenvalues()(i));
    std::sort(out.eigenvalues.begin(), out.eigenvalues.end(),
              [](const std::complex<double>& a, const std::complex<double>& b) {
                  double ma = std::abs(a), mb = std::abs(b);
                  if (ma != mb) return ma > mb;
                  if (a.real() != b.real()) return a.real() > b.real();
                  return a.imag() > b.imag();
              });
    out.stability_metric = stability_metric(out.eigenvalues);
    out.singular_values.assign(sr.data(), sr.data() + r);
    return out;
}

inline DmdResult compute_dmd(const SnapshotWindow& window, double svd_tol = 1e-10,
                             std::size_t r_max = 0) {
    if (window.size() < 2)
        throw InsufficientSnapshots("DMD needs at least 2 snapshots, got " +
                                    std::to_string(window.size()));
    return compute_dmd(window.as_matrix(), svd_tol, r_max);
}

}  // namespace fieldstream::dmd
