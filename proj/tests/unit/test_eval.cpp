#include <doctest.h>

#include <myodecode/error.hpp>
#include <myodecode/eval.hpp>
#include <myodecode/sim.hpp>

#include "gen.hpp"
#include "oracles.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <set>

using namespace myodecode;
using namespace myodecode::eval;
using testing_support::Gen;

namespace {

KinematicsTrajectory traj(const Matrix& a) {
    KinematicsTrajectory k;
    k.angles = a;
    k.sample_rate = 20.0;
    for (Index d = 0; d < a.rows(); ++d) {
        k.dof_labels.push_back("d" + std::to_string(d));
    }
    return k;
}

decode::BinnedActivity binned(const Matrix& m) {
    decode::BinnedActivity b;
    b.values = m;
    b.bin_ms = 50.0;
    for (Index c = 0; c < m.cols(); ++c) {
        b.column_labels.push_back(source_label(static_cast<std::size_t>(c)));
    }
    return b;
}

// Small 3-DoF scene shared by the study tests.
struct StudyScene {
    sim::Scene scene;
    decode::TrialLayout layout;
};

const StudyScene& study_scene() {
    static const StudyScene s = [] {
        sim::SceneConfig cfg;
        cfg.dofs = 3;
        cfg.channels = 16;
        cfg.grid_cols = 4;
        cfg.neurons_per_dof = 8;
        cfg.cue = {1.5, 1.5, 1.0, 0.5};
        cfg.dof_stagger_s = 1.0;
        StudyScene out{sim::build_scene(cfg, 21), {}};
        const double t = cfg.trial_duration_s();
        out.layout.trials = {{0, t}, {t, 2 * t}, {2 * t, 3 * t}};
        out.layout.train = {0, 1};
        out.layout.test = {2};
        return out;
    }();
    return s;
}

StudyOptions study_options(std::size_t runs, std::uint64_t seed) {
    StudyOptions o;
    o.runs = runs;
    o.seed = seed;
    o.layout = study_scene().layout;
    o.threads = 1;
    return o;
}

bool same_report(const SweepReport& a, const SweepReport& b) {
    if (a.entries.size() != b.entries.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        const auto& x = a.entries[i];
        const auto& y = b.entries[i];
        if (x.label != y.label || x.train_r2.size() != y.train_r2.size()) {
            return false;
        }
        for (std::size_t r = 0; r < x.train_r2.size(); ++r) {
            if (!testing_support::bit_equal(x.train_r2[r], y.train_r2[r]) ||
                !testing_support::bit_equal(x.test_r2[r], y.test_r2[r])) {
                return false;
            }
        }
    }
    return true;
}

} // namespace

TEST_CASE("r2: perfect, mean-only and negative estimates") {
    Gen g(50);
    const Matrix ref = g.matrix(3, 40);
    CHECK(multivariate_r2(traj(ref), traj(ref)) == 1.0);
    const Matrix mean = ref.rowwise().mean().replicate(1, 40);
    CHECK(std::abs(multivariate_r2(traj(mean), traj(ref))) < 1e-12);
    CHECK(multivariate_r2(traj(-ref), traj(ref)) < 0.0);
}

TEST_CASE("r2: matches the loop oracle and ignores a shared per-DoF offset") {
    testing_support::for_all(20, 51, [](Gen& g, int) {
        const Index d = g.integer(1, 4);
        const Index t = g.integer(2, 200);
        const Matrix ref = g.matrix(d, t);
        const Matrix est = ref + 0.5 * g.matrix(d, t);
        const double r2 = multivariate_r2(traj(est), traj(ref));
        REQUIRE(std::abs(r2 - testing_support::naive_r2(est, ref)) < 1e-12);
        REQUIRE(r2 <= 1.0);
        const Matrix shift = g.matrix(d, 1).replicate(1, t);
        REQUIRE(std::abs(multivariate_r2(traj(est + shift), traj(ref + shift)) - r2) < 1e-9);
    });
}

TEST_CASE("r2: errors") {
    Gen g(52);
    CHECK_THROWS_AS(multivariate_r2(traj(g.matrix(2, 5)), traj(Matrix::Constant(2, 5, 3.0))), UndefinedMetric);
    CHECK_THROWS_AS(multivariate_r2(traj(g.matrix(2, 5)), traj(g.matrix(2, 6))), InvalidArgument);
    auto a = traj(g.matrix(2, 5));
    auto b = traj(g.matrix(2, 5));
    b.dof_labels[1] = "other";
    CHECK_THROWS_AS(multivariate_r2(a, b), InvalidArgument);
}

TEST_CASE("summary statistics") {
    const std::vector<double> v{4, 1, 3, 2};
    const auto s = summarize(v);
    CHECK(s.mean == 2.5);
    CHECK(s.variance == doctest::Approx(5.0 / 3.0).epsilon(1e-15));
    CHECK(s.median == 2.5);
    CHECK(s.p25 == 1.75);
    CHECK(s.p75 == 3.25);
    const std::vector<double> one{7.0};
    CHECK(summarize(one).variance == 0.0);
    CHECK(summarize(one).p25 == 7.0);

    testing_support::for_all(20, 53, [](Gen& g, int) {
        std::vector<double> x(static_cast<std::size_t>(g.integer(1, 60)));
        for (auto& e : x) {
            e = g.normal();
        }
        const auto st = summarize(x);
        REQUIRE(st.p25 <= st.median);
        REQUIRE(st.median <= st.p75);
        std::sort(x.begin(), x.end());
        REQUIRE(st.p25 >= x.front());
        REQUIRE(st.p75 <= x.back());
        if (x.size() % 2 == 1) {
            REQUIRE(st.median == x[x.size() / 2]);
        }
    });
}

TEST_CASE("worker count honours MYODECODE_THREADS as a cap") {
    ::setenv("MYODECODE_THREADS", "2", 1);
    CHECK(worker_count(8) == 2);
    CHECK(worker_count(1) == 1);
    CHECK(worker_count(0) <= 2);
    ::unsetenv("MYODECODE_THREADS");
    CHECK(worker_count(3) == 3);
    CHECK(worker_count(0) >= 1);
}

TEST_CASE("parallel_for visits every index once and propagates failures") {
    std::vector<std::atomic<int>> hits(97);
    parallel_for(hits.size(), 4, [&](std::size_t i) { ++hits[i]; });
    for (auto& h : hits) {
        CHECK(h.load() == 1);
    }
    CHECK_THROWS_AS(parallel_for(10, 3,
                                 [](std::size_t i) {
                                     if (i == 7) {
                                         throw InvalidArgument("boom");
                                     }
                                 }),
                    InvalidArgument);
}

TEST_CASE("mux schedule: revisit time and validation") {
    MuxSchedule s{32, 100.0, 3, Selection::Random, 1};
    CHECK(s.revisit_ms() == 300.0);
    CHECK_NOTHROW(s.validate(96));
    CHECK_THROWS_AS(s.validate(97), InvalidArgument);
    CHECK_THROWS_AS(s.validate(31), InvalidArgument);
    CHECK_THROWS_AS((MuxSchedule{0, 100.0, 3}.validate(10)), InvalidArgument);
    CHECK_THROWS_AS((MuxSchedule{4, 100.0, 0}.validate(4)), InvalidArgument);
    CHECK_THROWS_AS((MuxSchedule{4, 0.0, 1}.validate(4)), InvalidArgument);
}

TEST_CASE("mux blocks cover every channel once per revisit") {
    testing_support::for_all(30, 54, [](Gen& g, int) {
        const auto channels = static_cast<std::size_t>(g.integer(1, 120));
        const auto subset = static_cast<std::size_t>(g.integer(1, static_cast<Index>(channels)));
        const auto n = (channels + subset - 1) / subset + static_cast<std::size_t>(g.integer(0, 2));
        MuxSchedule s{subset, 50.0, n, g.coin() ? Selection::Random : Selection::Periodic,
                      static_cast<std::uint64_t>(g.integer(0, 1000))};
        const auto blocks = mux_blocks(s, channels);
        REQUIRE(blocks.size() == n);
        std::set<std::size_t> seen;
        for (const auto& b : blocks) {
            REQUIRE(b.size() == subset);
            REQUIRE(std::set<std::size_t>(b.begin(), b.end()).size() == subset);
            seen.insert(b.begin(), b.end());
        }
        REQUIRE(seen.size() == channels);
        REQUIRE(*seen.rbegin() == channels - 1);
    });
    const auto periodic = mux_blocks(MuxSchedule{2, 50.0, 3, Selection::Periodic, 9}, 6);
    CHECK(periodic == std::vector<std::vector<std::size_t>>{{0, 1}, {2, 3}, {4, 5}});
}

TEST_CASE("time multiplexing: full subset is the identity") {
    Gen g(55);
    const auto x = binned(g.matrix(37, 10));
    const auto y = time_multiplex(x, MuxSchedule{10, 50.0, 1, Selection::Random, 3});
    CHECK(testing_support::bit_equal(y.values, x.values));
    const auto z = time_multiplex(y, MuxSchedule{10, 50.0, 1, Selection::Random, 4});
    CHECK(testing_support::bit_equal(z.values, y.values));
}

TEST_CASE("time multiplexing: 32 of 96, T_B = 100 ms at 50 ms bins") {
    Gen g(56);
    const auto x = binned(g.matrix(120, 96));
    const MuxSchedule s{32, 100.0, 3, Selection::Random, 11};
    CHECK(s.revisit_ms() == 300.0);
    const auto y = time_multiplex(x, s);
    const auto blocks = mux_blocks(s, 96);
    // block k is live on bins [2k, 2k+2) of every 6-bin revisit period
    for (Index t = 0; t < 120; ++t) {
        const auto& live = blocks[static_cast<std::size_t>((t / 2) % 3)];
        for (auto c : live) {
            REQUIRE(y.values(t, static_cast<Index>(c)) == x.values(t, static_cast<Index>(c)));
        }
    }
    // after the first revisit period every channel has been refreshed within the last 6 bins
    for (Index t = 6; t < 120; ++t) {
        for (Index c = 0; c < 96; ++c) {
            bool fresh = false;
            for (Index back = 0; back < 6; ++back) {
                fresh = fresh || y.values(t, c) == x.values(t - back, c);
            }
            REQUIRE(fresh);
        }
    }
    CHECK_THROWS_AS(time_multiplex(x, MuxSchedule{32, 75.0, 3}), InvalidArgument);
}

TEST_CASE("time multiplexing: schedule replay oracle") {
    testing_support::for_all(25, 57, [](Gen& g, int) {
        const Index channels = g.integer(1, 40);
        const auto subset = static_cast<std::size_t>(g.integer(1, channels));
        const auto n = (static_cast<std::size_t>(channels) + subset - 1) / subset + static_cast<std::size_t>(g.integer(0, 2));
        const Index block_bins = g.integer(1, 4);
        const MuxSchedule s{subset, 50.0 * static_cast<double>(block_bins), n,
                            g.coin() ? Selection::Random : Selection::Periodic,
                            static_cast<std::uint64_t>(g.integer(0, 1 << 20))};
        const auto x = binned(g.matrix(g.integer(1, 90), channels));
        const auto y = time_multiplex(x, s);
        const auto blocks = mux_blocks(s, static_cast<std::size_t>(channels));
        for (Index c = 0; c < channels; ++c) {
            Index last = -1;
            for (Index t = 0; t < x.bins(); ++t) {
                const auto& live = blocks[static_cast<std::size_t>((t / block_bins) % static_cast<Index>(n))];
                if (std::find(live.begin(), live.end(), static_cast<std::size_t>(c)) != live.end()) {
                    last = t;
                }
                const double expected = last < 0 ? 0.0 : x.values(last, c);
                REQUIRE(y.values(t, c) == expected);
            }
        }
    });
}

TEST_CASE("time multiplexing commutes with a column permutation") {
    testing_support::for_all(10, 58, [](Gen& g, int) {
        const Index channels = g.integer(2, 30);
        const auto x = binned(g.matrix(50, channels));
        const auto subset = static_cast<std::size_t>(g.integer(1, channels));
        const auto n = (static_cast<std::size_t>(channels) + subset - 1) / subset;
        const auto blocks = mux_blocks(MuxSchedule{subset, 50.0, n, Selection::Random, 5}, static_cast<std::size_t>(channels));
        const auto perm = g.permutation(static_cast<std::size_t>(channels));  // new column j holds old column perm[j]
        std::vector<std::size_t> inverse(perm.size());
        for (std::size_t j = 0; j < perm.size(); ++j) {
            inverse[perm[j]] = j;
        }
        auto permuted_blocks = blocks;
        for (auto& b : permuted_blocks) {
            for (auto& c : b) {
                c = inverse[c];
            }
        }
        const auto lhs = time_multiplex(x.columns(perm), permuted_blocks, 2);
        const auto rhs = time_multiplex(x, blocks, 2).columns(perm);
        REQUIRE(testing_support::bit_equal(lhs.values, rhs.values));
    });
}

TEST_CASE("six switching setups") {
    const auto setups = standard_mux_setups();
    REQUIRE(setups.size() == 6);
    CHECK(setups[1].scheduled_channels == 96);
    CHECK(setups[1].subset_size == 32);
    CHECK(setups[1].block_ms == 100.0);
    CHECK(setups[1].switchings == 3);
    CHECK(setups[0].scheduled_channels == 224);
    CHECK(setups[0].switchings == 7);
    CHECK(setups[5].scheduled_channels == 0);
}

TEST_CASE("spike train matching") {
    const std::vector<SampleIndex> truth{100, 200, 300};
    const std::vector<SampleIndex> det{101, 205, 299, 400};
    const auto m = match_trains(truth, det, 2, 0);
    CHECK(m.matched == 2);
    CHECK(m.missed == 1);
    CHECK(m.false_positives == 2);
    CHECK(m.rate_of_agreement == doctest::Approx(2.0 / 5.0));
    CHECK(m.recall == doctest::Approx(2.0 / 3.0));

    const std::vector<SampleIndex> shifted{110, 210, 310};
    CHECK(match_trains(truth, shifted, 2, 10).rate_of_agreement == 1.0);
    CHECK(match_trains(truth, shifted, 2, 0).rate_of_agreement == 0.0);
}

TEST_CASE("source matching recovers the delay and the best source") {
    Gen g(59);
    SpikeTrainSet truth;
    truth.sample_rate = 2048;
    truth.sample_count = 60000;
    truth.trains.resize(2);
    for (auto& t : truth.trains) {
        for (SampleIndex k = g.integer(0, 100); k < 59000; k += g.integer(80, 200)) {
            t.push_back(k);
        }
    }
    truth.labels = {"a", "b"};
    SpikeTrainSet det = truth;
    det.trains = {truth.trains[1], {}, truth.trains[0]};
    det.labels = {"x", "y", "z"};
    for (auto& k : det.trains[2]) {
        k += 17;
    }
    const auto matches = match_sources(truth, det, 1.0, 20.0);
    REQUIRE(matches.size() == 2);
    CHECK(matches[0].source == 2);
    CHECK(matches[0].lag == 17);
    CHECK(matches[0].rate_of_agreement == 1.0);
    CHECK(matches[1].source == 0);
    CHECK(matches[1].lag == 0);
    CHECK(detection_recall(matches, truth) == 1.0);

    // an empty detection set matches nothing
    SpikeTrainSet none = det;
    none.trains.assign(3, {});
    const auto nm = match_sources(truth, none, 1.0, 20.0);
    CHECK(detection_recall(nm, truth) == 0.0);
}

TEST_CASE("reduced-set sweep: full-size subset equals the plain pipeline") {
    const auto& s = study_scene();
    const auto full = s.scene.truth.size();
    const std::vector<std::size_t> sizes{full};
    const auto report = reduced_set_sweep(s.scene.truth, s.scene.reference, sizes, study_options(1, 3));
    REQUIRE(report.entries.size() == 1);
    const auto scene = bin_scene(s.scene.truth, s.scene.reference, 50.0);
    const auto plain = evaluate_decoding(scene.counts, scene.reference, s.layout, decode::DecodeConfig{});
    CHECK(testing_support::bit_equal(report.entries[0].test_r2[0], plain.test_r2));
    CHECK(testing_support::bit_equal(report.entries[0].train_r2[0], plain.train_r2));
    CHECK(plain.test_r2 > 0.5);
}

TEST_CASE("reduced-set sweep: shape, skipped sizes, determinism and run stability") {
    const auto& s = study_scene();
    const std::vector<std::size_t> sizes{4, 12, 500, 0};
    auto opts = study_options(3, 77);
    const auto a = reduced_set_sweep(s.scene.truth, s.scene.reference, sizes, opts);
    REQUIRE(a.entries.size() == 2);
    CHECK(a.warnings.size() == 2);
    CHECK(a.run_count == 3);
    for (const auto& e : a.entries) {
        CHECK(e.test_r2.size() == a.run_count);
        CHECK(e.test.p25 <= e.test.median);
        CHECK(e.test.median <= e.test.p75);
    }
    opts.threads = 3;
    const auto b = reduced_set_sweep(s.scene.truth, s.scene.reference, sizes, opts);
    CHECK(same_report(a, b));

    opts.runs = 4;
    const auto c = reduced_set_sweep(s.scene.truth, s.scene.reference, sizes, opts);
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        for (std::size_t r = 0; r < 3; ++r) {
            CHECK(testing_support::bit_equal(c.entries[i].test_r2[r], a.entries[i].test_r2[r]));
        }
    }
    opts.seed = 78;
    const auto d = reduced_set_sweep(s.scene.truth, s.scene.reference, sizes, opts);
    CHECK(!same_report(a, d));
}

TEST_CASE("mux study: baseline equals plain pipeline, skipped setups and determinism") {
    const auto& s = study_scene();
    const std::size_t n = s.scene.truth.size();
    const std::vector<MuxSetup> setups{
        {"mux", n, 8, 100.0, 3, Selection::Random},
        {"too many", n + 1, 0, 50.0, 1, Selection::Random},
        {"all", 0, 0, 50.0, 1, Selection::Random},
    };
    const auto a = mux_study(s.scene.truth, s.scene.reference, setups, study_options(2, 5));
    REQUIRE(a.entries.size() == 2);
    CHECK(a.warnings.size() == 1);
    const auto scene = bin_scene(s.scene.truth, s.scene.reference, 50.0);
    const auto plain = evaluate_decoding(scene.counts, scene.reference, s.layout, decode::DecodeConfig{});
    CHECK(testing_support::bit_equal(a.entries[1].test_r2[0], plain.test_r2));
    CHECK(testing_support::bit_equal(a.entries[1].test_r2[1], plain.test_r2));
    CHECK(std::isfinite(a.entries[0].test.mean));

    auto opts = study_options(2, 5);
    opts.threads = 2;
    CHECK(same_report(a, mux_study(s.scene.truth, s.scene.reference, setups, opts)));

    const std::vector<MuxSetup> bad{{"bad", n, 4, 100.0, 2, Selection::Random}};
    CHECK_THROWS_AS(mux_study(s.scene.truth, s.scene.reference, bad, study_options(1, 5)), InvalidArgument);
}
