#include <myodecode/bss.hpp>
#include <myodecode/error.hpp>
#include <myodecode/random.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace myodecode::bss {

namespace {

// Removes the span of the accepted rows, twice for numerical safety.
void orthogonalize(Vector& w, const Matrix& basis, Index count) {
    if (count == 0) {
        return;
    }
    const auto b = basis.topRows(count);
    for (int pass = 0; pass < 2; ++pass) {
        w.noalias() -= b.transpose() * (b * w);
    }
}

// One fixed-point update: E[y·g(wᵀy)] − E[g′(wᵀy)]·w.
// The loop is bound by memory traffic, so y is a single-precision copy and
// both products are taken block by block, reading each block once while it
// is still in cache. Block results are accumulated in double.
void fixed_point_step(const Eigen::MatrixXf& y, const Vector& w, Contrast contrast, Eigen::VectorXf& u,
                      Vector& next) {
    constexpr Index block = 256;
    const Index n = y.cols();
    const Eigen::VectorXf wf = w.cast<float>();
    Eigen::VectorXf partial(y.rows());
    next.setZero();
    double gp_sum = 0.0;
    for (Index b = 0; b < n; b += block) {
        const Index len = std::min(block, n - b);
        auto yb = y.middleCols(b, len);
        auto ub = u.segment(b, len);
        ub.noalias() = yb.transpose() * wf;
        if (contrast == Contrast::Square) {
            gp_sum += 2.0 * static_cast<double>(ub.sum());
            ub = ub.array().square();
        } else {
            ub = ub.array().tanh();
            gp_sum += static_cast<double>((1.0f - ub.array().square()).sum());
        }
        partial.noalias() = yb * ub;
        next += partial.cast<double>();
    }
    next /= static_cast<double>(n);
    next -= (gp_sum / static_cast<double>(n)) * w;
}

} // namespace

IptSet fixed_point_ica(const Matrix& whitened, const IcaOptions& options) {
    const Index p = whitened.rows();
    if (options.max_sources < 1) {
        throw InvalidArgument("max_sources must be positive");
    }
    if (options.max_sources > p) {
        throw InvalidArgument("max_sources (" + std::to_string(options.max_sources) +
                              ") exceeds the whitened dimension (" + std::to_string(p) + ")");
    }
    if (!(options.tolerance > 0.0) || options.max_iterations < 1) {
        throw InvalidArgument("ICA tolerance and iteration cap must be positive");
    }

    Matrix basis(options.max_sources, p);
    Index accepted = 0;
    int failures_in_row = 0;
    IptSet out;

    Vector w(p);
    Vector next(p);
    const Eigen::MatrixXf yf = whitened.cast<float>();
    Eigen::VectorXf u(whitened.cols());
    for (Index candidate = 0; candidate < options.max_sources; ++candidate) {
        std::mt19937_64 rng(derive_seed(options.seed, {static_cast<std::uint64_t>(candidate)}));
        std::normal_distribution<double> normal(0.0, 1.0);
        for (Index i = 0; i < p; ++i) {
            w(i) = normal(rng);
        }
        orthogonalize(w, basis, accepted);
        double norm = w.norm();
        if (!(norm > 0.0)) {
            ++out.rejected_candidates;
            continue;
        }
        w /= norm;

        bool converged = false;
        int it = 0;
        for (it = 1; it <= options.max_iterations; ++it) {
            fixed_point_step(yf, w, options.contrast, u, next);
            orthogonalize(next, basis, accepted);
            norm = next.norm();
            if (!(norm > 0.0) || !std::isfinite(norm)) {
                break;
            }
            next /= norm;
            const double overlap = std::abs(next.dot(w));
            w.swap(next);
            if (overlap > 1.0 - options.tolerance) {
                converged = true;
                break;
            }
        }
        if (!converged) {
            ++out.rejected_candidates;
            if (++failures_in_row >= options.max_failures_in_row && options.max_failures_in_row > 0) {
                break;
            }
            continue;
        }
        failures_in_row = 0;
        basis.row(accepted) = w.transpose();
        ++accepted;
        out.iterations.push_back(it);
    }

    out.separation = basis.topRows(accepted);
    out.sources.noalias() = out.separation * whitened;
    return out;
}

} // namespace myodecode::bss
