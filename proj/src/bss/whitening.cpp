#include <myodecode/bss.hpp>
#include <myodecode/error.hpp>

#include <algorithm>
#include <cmath>
#include <string>

namespace myodecode::bss {

namespace {
constexpr Index kBlock = 4096;
}

ExtendedObservations extend(const EmgRecording& emg, int extension_factor) {
    if (extension_factor < 1) {
        throw InvalidArgument("extension factor must be at least 1, got " + std::to_string(extension_factor));
    }
    const Index m = emg.channels();
    const Index n = emg.length();
    const Index R = extension_factor;

    ExtendedObservations out;
    out.extension_factor = extension_factor;
    out.data = Matrix::Zero(m * R, n);
    out.channel_origin.reserve(static_cast<std::size_t>(m * R));
    for (Index i = 0; i < m; ++i) {
        for (Index d = 0; d < R; ++d) {
            const Index row = i * R + d;
            if (d < n) {
                out.data.row(row).tail(n - d) = emg.samples.row(i).head(n - d);
            }
            out.channel_origin.emplace_back(static_cast<int>(i), static_cast<int>(d));
        }
    }
    return out;
}

WhiteningModel fit_whitening(const Matrix& x, double floor) {
    const Index p = x.rows();
    const Index n = x.cols();
    if (p < 1) {
        throw InvalidArgument("cannot whiten an empty observation matrix");
    }
    if (n <= p) {
        throw InvalidArgument("whitening needs more samples (" + std::to_string(n) + ") than rows (" +
                              std::to_string(p) + ")");
    }
    if (!(floor >= 0.0 && floor < 1.0)) {
        throw InvalidArgument("regularization floor must lie in [0, 1)");
    }

    WhiteningModel model;
    model.regularization_floor = floor;
    model.mean = x.rowwise().mean();

    Matrix cov = Matrix::Zero(p, p);
    Matrix block;
    for (Index c0 = 0; c0 < n; c0 += kBlock) {
        const Index w = std::min(kBlock, n - c0);
        block = x.middleCols(c0, w).colwise() - model.mean;
        cov.selfadjointView<Eigen::Lower>().rankUpdate(block);
    }
    cov = cov.selfadjointView<Eigen::Lower>();
    cov /= static_cast<double>(n - 1);

    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    if (eig.info() != Eigen::Success) {
        throw DegenerateInput("covariance eigendecomposition failed");
    }
    model.eigenvalues = eig.eigenvalues();
    model.eigenvectors = eig.eigenvectors();
    const double lmax = model.eigenvalues.maxCoeff();
    if (!(lmax > 0.0) || !std::isfinite(lmax)) {
        throw DegenerateInput("observations have zero covariance");
    }

    Vector inv_sqrt(p);
    const double lfloor = floor * lmax;
    for (Index i = 0; i < p; ++i) {
        double l = model.eigenvalues(i);
        if (l < lfloor) {
            l = lfloor;
            ++model.clamped_directions;
        }
        if (!(l > 0.0)) {
            throw DegenerateInput("covariance has non-positive eigenvalues and no regularization floor");
        }
        inv_sqrt(i) = 1.0 / std::sqrt(l);
    }
    model.whitening = model.eigenvectors * inv_sqrt.asDiagonal() * model.eigenvectors.transpose();
    return model;
}

Matrix whiten(const WhiteningModel& model, const Matrix& x) {
    if (x.rows() != model.whitening.cols()) {
        throw InvalidArgument("whitening model expects " + std::to_string(model.whitening.cols()) + " rows, got " +
                              std::to_string(x.rows()));
    }
    Matrix y(model.whitening.rows(), x.cols());
    Matrix block;
    for (Index c0 = 0; c0 < x.cols(); c0 += kBlock) {
        const Index w = std::min(kBlock, x.cols() - c0);
        block = x.middleCols(c0, w).colwise() - model.mean;
        y.middleCols(c0, w).noalias() = model.whitening * block;
    }
    return y;
}

} // namespace myodecode::bss
