#include <myodecode/decode.hpp>
#include <myodecode/error.hpp>
#include <myodecode/filter.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>

namespace myodecode::decode {

BinnedActivity BinnedActivity::rows(Index begin, Index end) const {
    if (begin < 0 || end > bins() || begin > end) {
        throw InvalidArgument("bin range out of bounds");
    }
    return {values.middleRows(begin, end - begin), bin_ms, column_labels};
}

BinnedActivity BinnedActivity::columns(const std::vector<std::size_t>& indices) const {
    BinnedActivity out;
    out.bin_ms = bin_ms;
    out.values.resize(values.rows(), static_cast<Index>(indices.size()));
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (static_cast<Index>(indices[k]) >= values.cols()) {
            throw InvalidArgument("column index out of range");
        }
        out.values.col(static_cast<Index>(k)) = values.col(static_cast<Index>(indices[k]));
        if (indices[k] < column_labels.size()) {
            out.column_labels.push_back(column_labels[indices[k]]);
        }
    }
    return out;
}

BinnedActivity bin_spikes(const SpikeTrainSet& musts, double bin_ms, double duration_s) {
    if (!(bin_ms > 0.0)) {
        throw InvalidArgument("bin size must be positive");
    }
    if (musts.size() == 0) {
        throw InvalidArgument("cannot bin an empty spike train set");
    }
    if (!(musts.sample_rate > 0.0) || duration_s < 0.0) {
        throw InvalidArgument("spike trains need a positive sample rate and a non-negative duration");
    }
    const auto n_bins = static_cast<Index>(std::floor(duration_s * 1000.0 / bin_ms + 1e-9));
    const double samples_per_bin_x1000 = musts.sample_rate * bin_ms;

    BinnedActivity out;
    out.bin_ms = bin_ms;
    out.values = Matrix::Zero(n_bins, static_cast<Index>(musts.size()));
    out.column_labels = musts.labels;
    if (out.column_labels.size() != musts.size()) {
        out.column_labels.clear();
        for (std::size_t c = 0; c < musts.size(); ++c) {
            out.column_labels.push_back(source_label(c));
        }
    }
    for (std::size_t c = 0; c < musts.size(); ++c) {
        for (SampleIndex s : musts.trains[c]) {
            const auto b = static_cast<Index>(std::floor(static_cast<double>(s) * 1000.0 / samples_per_bin_x1000));
            if (b >= 0 && b < n_bins) {
                out.values(b, static_cast<Index>(c)) += 1.0;
            }
        }
    }
    return out;
}

BinnedActivity smooth(const BinnedActivity& binned, double cutoff_hz) {
    if (!(cutoff_hz > 0.0) || cutoff_hz >= 0.5 * binned.bin_rate()) {
        throw InvalidArgument("smoothing cutoff must lie in (0, Nyquist of the bin rate)");
    }
    const double a = smoothing_coefficient(cutoff_hz, binned.bin_rate());
    BinnedActivity out = binned;
    for (Index c = 0; c < out.values.cols(); ++c) {
        first_order_lowpass(std::span<double>(out.values.col(c).data(), static_cast<std::size_t>(out.values.rows())), a);
    }
    return out;
}

Matrix ProjectionModel::scores(const Matrix& x) const {
    if (x.cols() != loadings.rows()) {
        throw InvalidArgument("activity has " + std::to_string(x.cols()) + " columns, model expects " +
                              std::to_string(loadings.rows()));
    }
    return (x.rowwise() - column_means) * loadings;
}

Matrix ProjectionModel::rotated_scores(const Matrix& x) const {
    if (x.cols() != rotated_loadings.rows()) {
        throw InvalidArgument("activity has " + std::to_string(x.cols()) + " columns, model expects " +
                              std::to_string(rotated_loadings.rows()));
    }
    return (x.rowwise() - column_means) * rotated_loadings;
}

ProjectionModel fit_pca(const BinnedActivity& x, Index components) {
    const Index T = x.bins();
    const Index D = x.channels();
    if (components < 1) {
        throw InvalidArgument("PCA needs at least one component");
    }
    if (T < 2 || D < 1) {
        throw InvalidArgument("PCA needs at least two bins and one channel");
    }
    if (components > std::min(T, D)) {
        throw RankDeficient("cannot extract " + std::to_string(components) + " components from a " +
                            std::to_string(T) + " x " + std::to_string(D) + " matrix");
    }

    ProjectionModel model;
    model.column_means = x.values.colwise().mean();
    model.training_rows = T;
    model.column_labels = x.column_labels;
    model.bin_ms = x.bin_ms;

    const Matrix centered = x.values.rowwise() - model.column_means;
    Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinV);
    model.loadings = svd.matrixV().leftCols(components);
    model.singular_values = svd.singularValues().head(components);
    for (Index k = 0; k < components; ++k) {
        Index arg = 0;
        model.loadings.col(k).cwiseAbs().maxCoeff(&arg);
        if (model.loadings(arg, k) < 0.0) {
            model.loadings.col(k) *= -1.0;
        }
    }
    model.rotation = Matrix::Identity(components, components);
    model.rotated_loadings = model.loadings;
    return model;
}

double varimax_criterion(const Matrix& loadings) {
    const auto d = static_cast<double>(loadings.cols());
    const Matrix sq = loadings.array().square().matrix();
    const Vector fourth = sq.array().square().rowwise().sum().matrix() / d;
    const Vector second = sq.rowwise().sum() / d;
    return fourth.sum() - second.squaredNorm();
}

VarimaxResult varimax(const Matrix& loadings, double tolerance, int max_sweeps) {
    const Index d = loadings.cols();
    const auto rows = static_cast<double>(loadings.rows());
    VarimaxResult out;
    out.rotation = Matrix::Identity(d, d);
    Matrix L = loadings;
    out.criterion.push_back(varimax_criterion(L));
    if (d < 2) {
        return out;
    }

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        for (Index p = 0; p < d - 1; ++p) {
            for (Index q = p + 1; q < d; ++q) {
                const Vector x = L.col(p);
                const Vector y = L.col(q);
                const Vector u = x.array().square() - y.array().square();
                const Vector v = 2.0 * x.array() * y.array();
                const double A = u.sum();
                const double B = v.sum();
                const double C = (u.array().square() - v.array().square()).sum();
                const double Dv = 2.0 * u.dot(v);
                const double num = Dv - 2.0 * A * B / rows;
                const double den = C - (A * A - B * B) / rows;
                const double theta = 0.25 * std::atan2(num, den);
                if (std::abs(theta) < 1e-15) {
                    continue;
                }
                const double c = std::cos(theta);
                const double s = std::sin(theta);
                L.col(p) = c * x + s * y;
                L.col(q) = -s * x + c * y;
                const Vector rp = out.rotation.col(p);
                const Vector rq = out.rotation.col(q);
                out.rotation.col(p) = c * rp + s * rq;
                out.rotation.col(q) = -s * rp + c * rq;
            }
        }
        ++out.sweeps;
        out.criterion.push_back(varimax_criterion(L));
        const double gain = out.criterion.back() - out.criterion[out.criterion.size() - 2];
        if (gain < tolerance) {
            break;
        }
    }
    return out;
}

ProjectionModel rotate_model(ProjectionModel model, const Matrix& rotation) {
    const Index d = model.components();
    if (rotation.rows() != d || rotation.cols() != d) {
        throw InvalidArgument("rotation must be " + std::to_string(d) + " x " + std::to_string(d));
    }
    const double err = (rotation.transpose() * rotation - Matrix::Identity(d, d)).cwiseAbs().maxCoeff();
    if (!(err <= 1e-6)) {
        throw InvalidArgument("rotation is not orthogonal");
    }
    model.rotation = rotation;
    model.rotated_loadings = model.loadings * rotation;
    return model;
}

double pearson(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw InvalidArgument("correlation needs two series of equal length >= 2");
    }
    const Vector ac = a.array() - a.mean();
    const Vector bc = b.array() - b.mean();
    const double den = std::sqrt(ac.squaredNorm() * bc.squaredNorm());
    if (!(den > 0.0)) {
        return 0.0;
    }
    return ac.dot(bc) / den;
}

ProjectionModel assign_dofs(ProjectionModel model, const Matrix& training_scores, const KinematicsTrajectory& reference,
                            const AssignOptions& options) {
    const Index k = training_scores.cols();
    const Index T = training_scores.rows();
    const Index dofs = reference.dofs();
    if (dofs > k) {
        throw InvalidArgument(std::to_string(dofs) + " DoFs cannot be assigned to " + std::to_string(k) +
                              " components");
    }
    if (reference.length() != T) {
        throw InvalidArgument("reference and training scores differ in length");
    }
    const Index cal_begin = options.calibration_begin;
    const Index cal_end = options.calibration_end < 0 ? T : options.calibration_end;
    if (cal_begin < 0 || cal_end > T || cal_end - cal_begin < 2) {
        throw InvalidArgument("calibration range out of bounds");
    }

    Matrix corr(dofs, k);
    for (Index d = 0; d < dofs; ++d) {
        const Vector r = reference.angles.row(d).transpose();
        for (Index c = 0; c < k; ++c) {
            corr(d, c) = pearson(r, training_scores.col(c));
        }
    }

    model.dofs.assign(static_cast<std::size_t>(dofs), DofAssignment{});
    for (Index d = 0; d < dofs; ++d) {
        auto& a = model.dofs[static_cast<std::size_t>(d)];
        a.label = d < static_cast<Index>(reference.dof_labels.size()) ? reference.dof_labels[static_cast<std::size_t>(d)]
                                                                      : "dof" + std::to_string(d);
    }

    std::vector<bool> dof_done(static_cast<std::size_t>(dofs), false);
    std::vector<bool> comp_used(static_cast<std::size_t>(k), false);
    for (Index round = 0; round < dofs; ++round) {
        double best = -1.0;
        Index bd = -1;
        Index bc = -1;
        for (Index d = 0; d < dofs; ++d) {
            if (dof_done[static_cast<std::size_t>(d)]) {
                continue;
            }
            for (Index c = 0; c < k; ++c) {
                if (!comp_used[static_cast<std::size_t>(c)] && std::abs(corr(d, c)) > best) {
                    best = std::abs(corr(d, c));
                    bd = d;
                    bc = c;
                }
            }
        }
        if (best < options.min_correlation) {
            break;
        }
        dof_done[static_cast<std::size_t>(bd)] = true;
        comp_used[static_cast<std::size_t>(bc)] = true;
        auto& a = model.dofs[static_cast<std::size_t>(bd)];
        a.component = bc;
        a.sign = corr(bd, bc) < 0.0 ? -1 : 1;
        a.correlation = corr(bd, bc);
        a.assigned = true;
    }

    for (Index d = 0; d < dofs; ++d) {
        auto& a = model.dofs[static_cast<std::size_t>(d)];
        const Vector r = reference.angles.row(d).segment(cal_begin, cal_end - cal_begin).transpose();
        if (!a.assigned) {
            if (options.require_all) {
                throw UnassignedDof("DoF " + a.label + " has no rotated component with |correlation| >= " +
                                    std::to_string(options.min_correlation));
            }
            a.gain = 0.0;
            a.offset = reference.angles.row(d).mean();
            continue;
        }
        const Vector o = a.sign * training_scores.col(a.component).segment(cal_begin, cal_end - cal_begin);
        const double o_span = o.maxCoeff() - o.minCoeff();
        if (!(o_span > 0.0)) {
            a.gain = 0.0;
            a.offset = r.mean();
            continue;
        }
        a.gain = (r.maxCoeff() - r.minCoeff()) / o_span;
        a.offset = r.minCoeff() - a.gain * o.minCoeff();
    }
    return model;
}

KinematicsTrajectory project(const ProjectionModel& model, const BinnedActivity& x, double sample_rate) {
    if (model.dofs.empty()) {
        throw InvalidArgument("model has no DoF assignment");
    }
    const Matrix s = model.rotated_scores(x.values);
    KinematicsTrajectory out;
    out.sample_rate = sample_rate > 0.0 ? sample_rate : x.bin_rate();
    out.angles.resize(static_cast<Index>(model.dofs.size()), x.bins());
    for (std::size_t d = 0; d < model.dofs.size(); ++d) {
        const auto& a = model.dofs[d];
        out.dof_labels.push_back(a.label);
        if (a.assigned) {
            out.angles.row(static_cast<Index>(d)) =
                (static_cast<double>(a.sign) * a.gain * s.col(a.component)).array().transpose() + a.offset;
        } else {
            out.angles.row(static_cast<Index>(d)).setConstant(a.offset);
        }
    }
    return out;
}

KinematicsTrajectory resample(const KinematicsTrajectory& traj, double rate, Index length) {
    if (!(rate > 0.0) || !(traj.sample_rate > 0.0) || traj.length() < 1 || length < 0) {
        throw InvalidArgument("invalid resampling request");
    }
    KinematicsTrajectory out;
    out.sample_rate = rate;
    out.dof_labels = traj.dof_labels;
    out.angles.resize(traj.dofs(), length);
    const Index n = traj.length();
    for (Index k = 0; k < length; ++k) {
        const double pos = static_cast<double>(k) / rate * traj.sample_rate;
        const auto i = std::min<Index>(static_cast<Index>(std::floor(pos)), n - 1);
        const double f = std::min(1.0, pos - static_cast<double>(i));
        const Index j = std::min(i + 1, n - 1);
        out.angles.col(k) = (1.0 - f) * traj.angles.col(i) + f * traj.angles.col(j);
    }
    return out;
}

std::uint64_t DecodeConfig::hash() const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "bin=%.17g;cut=%.17g;d=%lld;vtol=%.17g;vmax=%d;rmin=%.17g", bin_ms, cutoff_hz,
                  static_cast<long long>(components), varimax_tolerance, varimax_max_sweeps, min_correlation);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char* p = buf; *p; ++p) {
        h ^= static_cast<unsigned char>(*p);
        h *= 0x100000001b3ULL;
    }
    return h;
}

void TrialLayout::validate() const {
    if (trials.empty() || train.empty()) {
        throw InvalidArgument("trial layout needs at least one training trial");
    }
    for (const auto& [b, e] : trials) {
        if (!(b >= 0.0 && e > b)) {
            throw InvalidArgument("trial boundaries must satisfy 0 <= start < end");
        }
    }
    auto check = [&](std::size_t t) {
        if (t >= trials.size()) {
            throw InvalidArgument("trial index " + std::to_string(t) + " out of range");
        }
    };
    for (auto t : train) {
        check(t);
    }
    for (auto t : test) {
        check(t);
        if (std::find(train.begin(), train.end(), t) != train.end()) {
            throw InvalidArgument("trial " + std::to_string(t) + " is both a training and a test trial");
        }
    }
    if (std::find(train.begin(), train.end(), calibration) == train.end()) {
        throw InvalidArgument("calibration trial must be a training trial");
    }
}

std::pair<Index, Index> TrialLayout::bins(std::size_t trial, double bin_ms, Index total_bins) const {
    const auto& [b, e] = trials.at(trial);
    const auto begin = std::min<Index>(static_cast<Index>(std::llround(b * 1000.0 / bin_ms)), total_bins);
    const auto end = std::min<Index>(static_cast<Index>(std::llround(e * 1000.0 / bin_ms)), total_bins);
    return {begin, end};
}

std::vector<Index> TrialLayout::bin_indices(const std::vector<std::size_t>& which, double bin_ms,
                                            Index total_bins) const {
    std::vector<Index> out;
    for (auto t : which) {
        auto [b, e] = bins(t, bin_ms, total_bins);
        for (Index k = b; k < e; ++k) {
            out.push_back(k);
        }
    }
    return out;
}

Matrix take_rows(const Matrix& m, const std::vector<Index>& rows) {
    Matrix out(static_cast<Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.row(static_cast<Index>(i)) = m.row(rows[i]);
    }
    return out;
}

Matrix take_cols(const Matrix& m, const std::vector<Index>& cols) {
    Matrix out(m.rows(), static_cast<Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) {
        out.col(static_cast<Index>(i)) = m.col(cols[i]);
    }
    return out;
}

DecoderFit fit_decoder(const BinnedActivity& smoothed, const KinematicsTrajectory& reference, const TrialLayout& layout,
                       const DecodeConfig& config, bool require_all_dofs) {
    layout.validate();
    if (reference.length() != smoothed.bins()) {
        throw InvalidArgument("reference has " + std::to_string(reference.length()) + " samples but activity has " +
                              std::to_string(smoothed.bins()) + " bins");
    }
    const std::vector<Index> rows = layout.bin_indices(layout.train, smoothed.bin_ms, smoothed.bins());
    if (rows.size() < 2) {
        throw InvalidArgument("training trials cover fewer than two bins");
    }

    Index cal_begin = 0;
    for (auto t : layout.train) {
        auto [b, e] = layout.bins(t, smoothed.bin_ms, smoothed.bins());
        if (t == layout.calibration) {
            break;
        }
        cal_begin += e - b;
    }
    auto [cb, ce] = layout.bins(layout.calibration, smoothed.bin_ms, smoothed.bins());
    const Index cal_end = cal_begin + (ce - cb);

    BinnedActivity train{take_rows(smoothed.values, rows), smoothed.bin_ms, smoothed.column_labels};
    const Index d = std::min({config.components, train.channels(), train.bins()});

    DecoderFit fit;
    fit.model = fit_pca(train, d);
    const VarimaxResult vr = varimax(fit.model.loadings, config.varimax_tolerance, config.varimax_max_sweeps);
    fit.model = rotate_model(std::move(fit.model), vr.rotation);
    fit.model.smoothing_coefficient = smoothing_coefficient(config.cutoff_hz, smoothed.bin_rate());
    fit.model.config_hash = config.hash();
    fit.training_scores = fit.model.rotated_scores(train.values);

    KinematicsTrajectory ref_train{take_cols(reference.angles, rows), reference.dof_labels, reference.sample_rate};
    AssignOptions opts;
    opts.calibration_begin = cal_begin;
    opts.calibration_end = cal_end;
    opts.min_correlation = config.min_correlation;
    opts.require_all = require_all_dofs;
    fit.model = assign_dofs(std::move(fit.model), fit.training_scores, ref_train, opts);
    return fit;
}

} // namespace myodecode::decode
