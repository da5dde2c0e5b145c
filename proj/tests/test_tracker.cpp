#include <gtest/gtest.h>

#include <cstring>
#include <numbers>
#include <random>

#include "l1dpf/eval.hpp"
#include "l1dpf/tracker.hpp"
#include "oracles.hpp"

using namespace l1dpf;
using namespace l1dpf::tracker;
using geometry::Point;

namespace {

std::vector<Particle> population(std::size_t n, AnyState s) {
    return std::vector<Particle>(n, Particle{s, 1.0 / n, 0.0});
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

bool same_result(const FrameResult& a, const FrameResult& b) {
    for (int k = 0; k < 4; ++k)
        for (int c = 0; c < 2; ++c)
            if (!same_bits(a.chosen_quad[k][c], b.chosen_quad[k][c])) return false;
    return a.frame_index == b.frame_index && same_bits(a.max_likelihood, b.max_likelihood) &&
           a.dict_updated == b.dict_updated && a.detection_used == b.detection_used &&
           a.chosen_state == b.chosen_state && a.failed == b.failed;
}

eval::SynthSpec small_spec(eval::Motion m, int frames) {
    eval::SynthSpec s;
    s.motion = m;
    s.n_frames = frames;
    s.width = 160;
    s.height = 120;
    s.seed = 3;
    return s;
}

TrackerConfig small_config(Mode mode) {
    TrackerConfig c;
    c.n_particles = 100;
    c.mode = mode;
    c.alpha = 1000;
    c.seed = 9;
    return c;
}

std::vector<FrameResult> run(const eval::SyntheticSequence& seq, const TrackerConfig& cfg, bool with_detections) {
    const auto dets = seq.detections();
    Tracker t(seq.render(1), seq.gt_quad(1), cfg);
    std::vector<FrameResult> out{t.initial_result()};
    for (int f = 2; f <= seq.size(); ++f) {
        std::span<const dataio::Detection> d;
        if (with_detections) d = dets.at(f);
        out.push_back(t.step(seq.render(f), d));
    }
    return out;
}

}  // namespace

TEST(Transition, ZeroSigmaLeavesParticles) {
    StateVector v{0.1, 5, 6, 1.5, 2, 0.1, 0.05};
    auto ps = population(20, v);
    transition(ps, MotionSigmas{0, 0, 0, 0, 0, 0, 0}, LegacySigmas{0, 0, 0, 0}, 1, 2);
    for (const auto& p : ps) EXPECT_EQ(std::get<StateVector>(p.state), v);
    auto legacy = population(20, LegacyStateVector{1.2, 0.1, -0.1, 0.9, 3, 4});
    MotionSigmas zero{0, 0, 0, 0, 0, 0, 0};
    transition(legacy, zero, LegacySigmas{0, 0, 0, 0}, 1, 2);
    for (const auto& p : legacy) EXPECT_EQ(std::get<LegacyStateVector>(p.state), (LegacyStateVector{1.2, 0.1, -0.1, 0.9, 3, 4}));
}

TEST(Transition, ThetaStatistics) {
    auto ps = population(100000, StateVector{});
    MotionSigmas sig{0.1, 0, 0, 0, 0, 0, 0};
    transition(ps, sig, LegacySigmas{}, 42, 2);
    double mean = 0, sq = 0;
    for (const auto& p : ps) mean += std::get<StateVector>(p.state).theta;
    mean /= ps.size();
    for (const auto& p : ps) sq += std::pow(std::get<StateVector>(p.state).theta - mean, 2);
    const double sd = std::sqrt(sq / (ps.size() - 1));
    EXPECT_LT(std::abs(mean), 3 * 0.1 / std::sqrt(1e5));
    EXPECT_NEAR(sd, 0.1, 0.002);
}

TEST(Transition, Deterministic) {
    auto a = population(50, StateVector{});
    auto b = a;
    std::vector<double> la, lb;
    transition(a, MotionSigmas{}, LegacySigmas{}, 7, 3, &la);
    transition(b, MotionSigmas{}, LegacySigmas{}, 7, 3, &lb);
    for (std::size_t i = 0; i < a.size(); ++i)
        EXPECT_EQ(std::get<StateVector>(a[i].state), std::get<StateVector>(b[i].state));
    EXPECT_EQ(la, lb);
    EXPECT_EQ(la.size(), 10u);
}

TEST(Transition, FirstDrawSharedAcrossStateKinds) {
    auto a = population(10, StateVector{});
    auto b = population(10, LegacyStateVector{});
    std::vector<double> la, lb;
    transition(a, MotionSigmas{}, LegacySigmas{}, 5, 4, &la);
    transition(b, MotionSigmas{}, LegacySigmas{}, 5, 4, &lb);
    EXPECT_EQ(la, lb);
}

TEST(Transition, KeepsStatesValid) {
    auto a = population(2000, StateVector{0, 0, 0, 0.06, 0.06, 0.99, -0.99});
    MotionSigmas big{0.5, 5, 5, 0.5, 0.5, 0.5, 0.5};
    for (int f = 2; f < 6; ++f) transition(a, big, LegacySigmas{}, 1, f);
    for (const auto& p : a) {
        const auto& v = std::get<StateVector>(p.state);
        EXPECT_TRUE(v.valid());
        EXPECT_LE(std::abs(v.sh1), kMaxShear);
    }
    auto b = population(2000, LegacyStateVector{0.06, 0, 0, 0.06, 0, 0});
    for (int f = 2; f < 6; ++f) transition(b, big, LegacySigmas{0.5, 0.5, 0.5, 0.5}, 1, f);
    for (const auto& p : b) EXPECT_GE(std::get<LegacyStateVector>(p.state).det(), kMinLegacyDet);
}

TEST(LikelihoodPf, Examples) {
    const auto u = likelihood_pf(std::vector<double>(5, 0.3), 30);
    for (double w : u) EXPECT_DOUBLE_EQ(w, 0.2);
    const auto w = likelihood_pf(std::vector<double>{0.0, std::log(2.0) / 30}, 30);
    EXPECT_NEAR(w[0], 2.0 / 3, 1e-15);
    EXPECT_NEAR(w[1], 1.0 / 3, 1e-15);
    EXPECT_THROW(likelihood_pf(std::vector<double>{0.1, std::nan("")}, 30), NumericError);
    EXPECT_THROW(likelihood_pf(std::vector<double>{}, 30), ContractError);
}

TEST(LikelihoodPf, NaiveOracleAndNormalization) {
    std::mt19937_64 gen(31);
    std::uniform_real_distribution<double> u(0, 0.5);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> e(50);
        for (double& x : e) x = u(gen);
        const auto w = likelihood_pf(e, 30);
        const auto ref = oracle::naive_softmax(e, 30);
        for (std::size_t i = 0; i < e.size(); ++i) EXPECT_NEAR(w[i], ref[i], 1e-12);
        EXPECT_NEAR(oracle::softmax_weight_sum(w), 1.0, 1e-9);
    }
}

TEST(LikelihoodPf, HugeAlphaStaysFinite) {
    const auto w = likelihood_pf(std::vector<double>{10, 11, 12}, 1e6);
    EXPECT_EQ(w[0], 1.0);
    EXPECT_NEAR(oracle::softmax_weight_sum(w), 1.0, 1e-12);
}

TEST(LikelihoodPf, ArgmaxInvariantUnderAlphaScaling) {
    std::mt19937_64 gen(32);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> e(40);
        for (double& x : e) x = u(gen);
        const std::size_t i = select_map(likelihood_pf(e, 1.0));
        for (double a : {0.01, 3.0, 100.0, 1e4}) EXPECT_EQ(select_map(likelihood_pf(e, a)), i);
    }
}

TEST(LikelihoodFused, ReducesToPfForIdenticalCandidates) {
    const std::vector<double> e = {0.1, 0.2, 0.05};
    Eigen::VectorXd d = Eigen::VectorXd::LinSpaced(8, 0, 1).normalized();
    Eigen::MatrixXd c(8, 3);
    c.colwise() = d;
    EXPECT_EQ(likelihood_fused(e, d, c, 30), likelihood_pf(e, 30));
    EXPECT_EQ(likelihood_fused(e, std::optional<Eigen::VectorXd>{}, c, 30), likelihood_pf(e, 30));
}

TEST(LikelihoodFused, Dominance) {
    const double alpha = 30;
    Eigen::VectorXd d = Eigen::VectorXd::Zero(4);
    d[0] = 1;
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(4, 3);
    c.col(0) = d;
    c(1, 1) = 1;
    c(2, 2) = 1;
    // Combined exponents: 0 for the match, exactly 10 / alpha for the others.
    const std::vector<double> e = {0.0, 10.0 / alpha, 10.0 / alpha};
    Eigen::MatrixXd c2 = c;
    c2.col(1) = d;
    c2.col(2) = d;
    const auto w = likelihood_fused(e, d, c2, alpha);
    EXPECT_GT(w[0], 0.9999);
    const auto w2 = likelihood_fused(std::vector<double>{0.0, 0.0, 0.0}, d, c, alpha);
    EXPECT_GT(w2[0], 0.9999);
}

TEST(LikelihoodFused, ProductOfLikelihoods) {
    std::mt19937_64 gen(33);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 30, dim = 16;
        std::vector<double> e(n);
        for (double& x : e) x = 0.2 * u(gen);
        Eigen::MatrixXd c(dim, n);
        for (int j = 0; j < n; ++j) {
            for (int i = 0; i < dim; ++i) c(i, j) = u(gen);
            c.col(j).normalize();
        }
        Eigen::VectorXd d(dim);
        for (auto& v : d) v = u(gen);
        d.normalize();
        const auto w = likelihood_fused(e, d, c, 30);
        std::vector<double> ref(n);
        double s = 0;
        for (int j = 0; j < n; ++j) s += ref[j] = std::exp(-30 * e[j]) * std::exp(-30 * (d - c.col(j)).squaredNorm());
        for (int j = 0; j < n; ++j) EXPECT_NEAR(w[j], ref[j] / s, 1e-12);
        EXPECT_NEAR(oracle::softmax_weight_sum(w), 1.0, 1e-9);
    }
}

TEST(SelectMap, Examples) {
    EXPECT_EQ(select_map(std::vector<double>{0.1, 0.7, 0.2}), 1u);
    EXPECT_EQ(select_map(std::vector<double>(7, 1.0 / 7)), 0u);
    std::mt19937_64 gen(34);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> w(25);
        for (double& x : w) x = std::round(u(gen) * 8) / 8;  // frequent ties
        EXPECT_EQ(select_map(w), oracle::scan_max(w));
    }
}

TEST(Resample, Examples) {
    std::vector<Particle> ps;
    for (int i = 0; i < 4; ++i) ps.push_back(Particle{StateVector{0, double(i), 0, 1, 1, 0, 0}, 0.25, 0});
    const auto one = resample(ps, std::vector<double>{0, 0, 1, 0}, 0.3);
    for (const auto& p : one) {
        EXPECT_EQ(std::get<StateVector>(p.state).o1, 2.0);
        EXPECT_EQ(p.weight, 0.25);
    }
    for (double off : {0.0, 0.5, 0.999}) {
        const auto idx = systematic_indices(std::vector<double>(4, 0.25), off);
        EXPECT_EQ(idx, (std::vector<std::size_t>{0, 1, 2, 3}));
    }
}

TEST(Resample, EnumerationOracle) {
    for (int k = 0; k < 1000; ++k) {
        const double off = k / 1000.0;
        const std::vector<double> w = {0.5, 0.25, 0.25, 0.0};
        const auto idx = systematic_indices(w, off);
        std::vector<int> counts(4, 0);
        for (auto i : idx) ++counts[i];
        EXPECT_EQ(counts, (std::vector<int>{2, 1, 1, 0}));
    }
    std::mt19937_64 gen(35);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> w(12);
        double s = 0;
        for (double& x : w) s += x = u(gen);
        for (double& x : w) x /= s;
        const double off = u(gen);
        const auto idx = systematic_indices(w, off);
        std::vector<int> counts(12, 0);
        for (auto i : idx) ++counts[i];
        EXPECT_EQ(counts, oracle::systematic_counts(w, off));
    }
}

TEST(Resample, NeverPicksTrailingZeroWeight) {
    std::vector<double> w = {0.1, 0.2, 0.7, 0.0, 0.0};
    w[2] = 0.7000000000000001;  // cumulative sum overshoots 1 slightly
    const auto idx = systematic_indices(w, 0.9999999);
    for (auto i : idx) EXPECT_LT(i, 3u);
}

TEST(Consensus, Examples) {
    const std::vector<double> a = {0.1, 0.5, 0.4};
    EXPECT_TRUE(consensus_check(a, a, 1));
    const std::vector<double> fused = {0.6, 0.1, 0.3};  // pf argmax (1) ranked last
    EXPECT_FALSE(consensus_check(a, fused, 2));
    EXPECT_TRUE(consensus_check(a, fused, 3));
    std::mt19937_64 gen(36);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> p(20), f(20);
        for (double& x : p) x = u(gen);
        for (double& x : f) x = u(gen);
        EXPECT_TRUE(consensus_check(p, f, 20));
    }
}

TEST(DictionaryUpdate, FullEqualsBuild) {
    const eval::SyntheticSequence seq(small_spec(eval::Motion::still, 1));
    const auto f = seq.render(1);
    const auto q = seq.gt_quad(1);
    const auto a = update_dictionary_full(f, q, 10, 16);
    const auto b = sparse::build_dictionary(f, q, 10, 16);
    EXPECT_EQ(a.significant, b.significant);
}

TEST(DictionaryUpdate, FullReducesErrorAfterAppearanceDrift) {
    auto spec = small_spec(eval::Motion::still, 1);
    const eval::SyntheticSequence before(spec);
    spec.seed = 99;  // new object texture
    const eval::SyntheticSequence after(spec);
    const auto q = before.gt_quad(1);
    const auto old_dict = sparse::build_dictionary(before.render(1), q, 10, 16);
    const auto target = imaging::warp_patch(after.render(1), q, 16, true);
    const sparse::SolverConfig cfg;
    const double pre = sparse::reconstruction_error(old_dict, target, sparse::solve_l1apg(old_dict, target, cfg));
    const auto new_dict = update_dictionary_full(after.render(1), q, 10, 16);
    const double post = sparse::reconstruction_error(new_dict, target, sparse::solve_l1apg(new_dict, target, cfg));
    EXPECT_LT(post, pre);
}

TEST(DictionaryUpdate, Slow) {
    std::mt19937_64 gen(37);
    std::uniform_real_distribution<double> u(0, 1);
    sparse::Dictionary d;
    d.significant = Eigen::MatrixXd::Zero(8, 3);
    for (int j = 0; j < 3; ++j) d.significant(j, j) = 1;
    EXPECT_FALSE(update_dictionary_slow(d, d.significant.col(1), Eigen::Vector3d(0.2, 0.9, 0.1), 0.8));
    Eigen::VectorXd orth = Eigen::VectorXd::Zero(8);
    orth[6] = 2.0;
    EXPECT_TRUE(update_dictionary_slow(d, orth, Eigen::Vector3d(0.2, 0.9, 0.1), 0.5));
    EXPECT_EQ(d.significant(6, 2), 1.0);
    for (int rep = 0; rep < 50; ++rep) {
        Eigen::VectorXd y(8);
        for (auto& v : y) v = u(gen);
        update_dictionary_slow(d, y, Eigen::Vector3d(u(gen), u(gen), u(gen)), 0.99);
        EXPECT_EQ(d.size(), 3);
        for (int j = 0; j < 3; ++j) EXPECT_NEAR(d.significant.col(j).norm(), 1.0, 1e-12);
    }
}

TEST(Association, PicksLargestOverlapThenScore) {
    const geometry::QuadBB prev{{Point(0, 0), Point(10, 0), Point(10, 10), Point(0, 10)}};
    dataio::Detection far, near_low, near_high, overlap;
    far.score = 0.99;
    far.quad = geometry::translated(prev, Point(100, 0));
    near_low.score = 0.5;
    near_low.quad = geometry::translated(prev, Point(12, 0));
    near_high.score = 0.8;
    near_high.quad = geometry::translated(prev, Point(0, 13));
    overlap.score = 0.1;
    overlap.quad = geometry::translated(prev, Point(3, 3));

    std::vector<dataio::Detection> all = {far, near_low, near_high, overlap};
    EXPECT_EQ(*associate_detection(all, prev), *overlap.quad);
    all.pop_back();
    EXPECT_EQ(*associate_detection(all, prev), *near_high.quad);
    EXPECT_FALSE(associate_detection(std::vector<dataio::Detection>{far}, prev));
    EXPECT_FALSE(associate_detection(std::vector<dataio::Detection>{}, prev));
}

TEST(TrackerInit, AxisAlignedScale) {
    const imaging::Frame f = eval::SyntheticSequence(small_spec(eval::Motion::still, 1)).render(1);
    const geometry::QuadBB q{{Point(40, 30), Point(72, 30), Point(72, 62), Point(40, 62)}};
    TrackerConfig cfg = small_config(Mode::l1dpf_m);
    Tracker t(f, q, cfg);
    const auto& v = std::get<StateVector>(t.initial_result().chosen_state);
    EXPECT_NEAR(v.theta, 0, 1e-12);
    EXPECT_NEAR(v.s1, 2, 1e-12);
    EXPECT_NEAR(v.s2, 2, 1e-12);
    EXPECT_NEAR(v.sh1, 0, 1e-12);
    EXPECT_NEAR(v.sh2, 0, 1e-12);
    EXPECT_NEAR(v.o1, 56, 1e-12);
    EXPECT_NEAR(v.o2, 46, 1e-12);
    for (const auto& p : t.particles()) EXPECT_EQ(p.weight, 1.0 / cfg.n_particles);
}

TEST(TrackerInit, RotatedQuad) {
    const imaging::Frame f = eval::SyntheticSequence(small_spec(eval::Motion::still, 1)).render(1);
    StateVector s{std::numbers::pi / 6, 80, 60, 2, 1.5, 0, 0};
    const auto q = geometry::quad_from_affine(geometry::compose_affine(s), 16);
    Tracker t(f, q, small_config(Mode::l1dpf_m));
    EXPECT_NEAR(std::get<StateVector>(t.initial_result().chosen_state).theta, std::numbers::pi / 6, 1e-6);
}

TEST(TrackerInit, RejectsDegenerate) {
    const imaging::Frame f(100, 100, 0.5);
    const geometry::QuadBB q{{Point(10, 10), Point(11, 10), Point(11, 10.5), Point(10, 10.5)}};
    EXPECT_THROW(Tracker(f, q, small_config(Mode::l1apg)), DegenerateRegionError);
}

TEST(TrackerRun, StaticSequenceZeroSigmaIsFixedPoint) {
    const eval::SyntheticSequence seq(small_spec(eval::Motion::still, 6));
    TrackerConfig cfg = small_config(Mode::l1dpf_m);
    cfg.n_particles = 20;
    cfg.sigmas = MotionSigmas{0, 0, 0, 0, 0, 0, 0};
    const auto res = run(seq, cfg, true);
    for (const auto& r : res) {
        EXPECT_LT((r.chosen_quad[0] - res[0].chosen_quad[0]).norm(), 1e-9);
        EXPECT_LT((r.chosen_quad[2] - res[0].chosen_quad[2]).norm(), 1e-9);
    }
}

TEST(TrackerRun, TranslationWithDetections) {
    auto spec = small_spec(eval::Motion::translate, 25);
    const eval::SyntheticSequence seq(spec);
    const auto res = run(seq, small_config(Mode::l1dpf_m), true);
    ASSERT_EQ(res.size(), 25u);
    for (int f = 1; f <= 25; ++f) {
        const auto& r = res[f - 1];
        EXPECT_GE(geometry::quad_iou(r.chosen_quad, seq.gt_quad(f)), 0.7) << "frame " << f;
        EXPECT_FALSE(r.failed);
        if (f > 1) {
            EXPECT_NEAR(r.weight_sum, 1.0, 1e-9);
            EXPECT_GE(r.max_likelihood, 1.0 / 100 - 1e-15);
        }
        // Full updates only on a consensus failure with a detection present.
        if (r.dict_updated) {
            EXPECT_TRUE(r.detection_used);
            ASSERT_TRUE(r.consensus.has_value());
            EXPECT_FALSE(*r.consensus);
        }
    }
}

TEST(TrackerRun, ModeReductionBitExact) {
    const eval::SyntheticSequence seq(small_spec(eval::Motion::mixed, 12));
    TrackerConfig a = small_config(Mode::l1apg), b = small_config(Mode::l1dpf);
    a.dict_update = b.dict_update = false;
    const auto ra = run(seq, a, false);
    const auto rb = run(seq, b, false);
    ASSERT_EQ(ra.size(), rb.size());
    for (std::size_t i = 0; i < ra.size(); ++i) EXPECT_TRUE(same_result(ra[i], rb[i])) << "frame " << i + 1;
}

TEST(TrackerRun, Deterministic) {
    const eval::SyntheticSequence seq(small_spec(eval::Motion::rotate, 8));
    const auto cfg = small_config(Mode::l1dpf_m);
    const auto ra = run(seq, cfg, true);
    const auto rb = run(seq, cfg, true);
    for (std::size_t i = 0; i < ra.size(); ++i) EXPECT_TRUE(same_result(ra[i], rb[i]));
}

TEST(TrackerRun, NoDetectionMeansNoFullUpdate) {
    const eval::SyntheticSequence seq(small_spec(eval::Motion::translate, 6));
    const auto res = run(seq, small_config(Mode::l1dpf_m), false);
    for (const auto& r : res) {
        EXPECT_FALSE(r.dict_updated);
        EXPECT_FALSE(r.detection_used);
    }
}

TEST(TrackerConfigCheck, Validation) {
    TrackerConfig c;
    EXPECT_EQ(c.effective_knn_k(), 40);
    c.n_particles = 4;
    EXPECT_EQ(c.effective_knn_k(), 1);
    c.n_particles = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrackerConfig{};
    c.n_templates = 300;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrackerConfig{};
    c.sigmas.tx = -1;
    try {
        c.validate();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.key(), "sigma_tx");
    }
}
