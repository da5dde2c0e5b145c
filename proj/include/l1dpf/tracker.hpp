#pragma once

// Particle-filter tracking loop: transition sampling, sparse-coding
// likelihoods (reconstruction-only or fused with a detection patch), MAP
// selection, dictionary maintenance and systematic resampling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "l1dpf/detection.hpp"
#include "l1dpf/errors.hpp"
#include "l1dpf/geometry.hpp"
#include "l1dpf/imaging.hpp"
#include "l1dpf/rng.hpp"
#include "l1dpf/sparse.hpp"

namespace l1dpf::tracker {

using geometry::LegacyStateVector;
using geometry::QuadBB;
using geometry::StateVector;

enum class Mode { l1apg, l1dpf, l1dpf_m };

inline const char* to_string(Mode m) {
    switch (m) {
        case Mode::l1apg: return "l1apg";
        case Mode::l1dpf: return "l1dpf";
        case Mode::l1dpf_m: return "l1dpf-m";
    }
    return "?";
}

/// Transition std-devs of the decomposed state.
struct MotionSigmas {
    double theta = 0.02;
    double tx = 4.0;
    double ty = 4.0;
    double s1 = 0.02;
    double s2 = 0.02;
    double sh1 = 0.005;
    double sh2 = 0.005;
};

/// Std-devs of the four legacy affine entries; translation shares tx / ty.
struct LegacySigmas {
    double a1 = 0.02;
    double a2 = 0.02;
    double a3 = 0.02;
    double a4 = 0.02;
};

struct TrackerConfig {
    int n_particles = 400;
    int n_templates = 10;
    int template_side = 16;
    MotionSigmas sigmas;
    LegacySigmas legacy_sigmas;
    double alpha = 30.0;
    Mode mode = Mode::l1dpf_m;
    bool dict_update = true;
    std::optional<int> knn_k;  ///< unset: max(1, round(0.1 N))
    double slow_update_threshold = 0.8;
    std::uint64_t seed = 0;
    sparse::SolverConfig solver;

    int effective_knn_k() const {
        if (knn_k) return *knn_k;
        return std::max(1, static_cast<int>(std::lround(0.1 * n_particles)));
    }

    bool legacy_state() const noexcept { return mode != Mode::l1dpf_m; }

    void validate() const {
        if (n_particles < 1) throw ConfigError("n_particles", "must be >= 1");
        if (n_templates < 1) throw ConfigError("n_templates", "must be >= 1");
        if (template_side < 2) throw ConfigError("template_side", "must be >= 2");
        if (static_cast<long long>(template_side) * template_side < n_templates)
            throw ConfigError("n_templates", "must not exceed template_side^2");
        if (!(alpha > 0.0)) throw ConfigError("alpha", "must be > 0");
        const std::pair<const char*, double> sig[] = {
            {"sigma_theta", sigmas.theta}, {"sigma_tx", sigmas.tx},   {"sigma_ty", sigmas.ty},
            {"sigma_s1", sigmas.s1},       {"sigma_s2", sigmas.s2},   {"sigma_sh1", sigmas.sh1},
            {"sigma_sh2", sigmas.sh2},     {"sigma_a1", legacy_sigmas.a1},
            {"sigma_a2", legacy_sigmas.a2}, {"sigma_a3", legacy_sigmas.a3},
            {"sigma_a4", legacy_sigmas.a4}};
        for (const auto& [key, v] : sig)
            if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(key, "must be finite and >= 0");
        const int k = effective_knn_k();
        if (k < 1 || k > n_particles) throw ConfigError("knn_k", "must lie in [1, n_particles]");
        if (!(slow_update_threshold >= -1.0 && slow_update_threshold <= 1.0))
            throw ConfigError("slow_update_threshold", "must lie in [-1, 1]");
        solver.validate();
    }
};

using AnyState = std::variant<StateVector, LegacyStateVector>;

inline geometry::AffineMatrix affine_of(const AnyState& s) {
    return std::visit(
        [](const auto& v) -> geometry::AffineMatrix {
            if constexpr (std::is_same_v<std::decay_t<decltype(v)>, StateVector>)
                return geometry::compose_affine(v);
            else
                return geometry::legacy_affine(v);
        },
        s);
}

struct Particle {
    AnyState state;
    double weight = 0.0;
    double cached_error = 0.0;
};

struct FrameResult {
    int frame_index = 0;
    QuadBB chosen_quad;
    AnyState chosen_state;
    double max_likelihood = 0.0;
    bool dict_updated = false;
    bool detection_used = false;
    // Diagnostics outside the CSV schema.
    double weight_sum = 0.0;
    double max_pf_likelihood = 0.0;
    std::optional<bool> consensus;
    bool failed = false;
    std::string message;
};

// Smallest scale kept after a transition, and the matching legacy bound on
// the determinant of the linear block.
inline constexpr double kMinScale = 0.05;
inline constexpr double kMaxShear = 1.0;
inline constexpr double kMinLegacyDet = kMinScale * kMinScale;

/// Stream salts.
inline constexpr std::uint64_t kTransitionSalt = 1;
inline constexpr std::uint64_t kResampleSalt = 2;

/// Perturbs every field of every particle with independent zero-mean
/// Gaussians; particle i draws from stream (seed, frame, i).
inline void transition(std::span<Particle> particles, const MotionSigmas& sig,
                       const LegacySigmas& legacy, std::uint64_t seed, int frame,
                       std::vector<double>* first_draws = nullptr) {
    for (std::size_t i = 0; i < particles.size(); ++i) {
        auto gen = stream(seed, static_cast<std::uint64_t>(frame), i, kTransitionSalt);
        NormalSource normal(gen);
        const double z0 = normal();
        if (first_draws && first_draws->size() < 10) first_draws->push_back(z0);
        if (auto* v = std::get_if<StateVector>(&particles[i].state)) {
            v->theta += sig.theta * z0;
            v->o1 += sig.tx * normal();
            v->o2 += sig.ty * normal();
            v->s1 = std::max(v->s1 + sig.s1 * normal(), kMinScale);
            v->s2 = std::max(v->s2 + sig.s2 * normal(), kMinScale);
            v->sh1 = std::clamp(v->sh1 + sig.sh1 * normal(), -kMaxShear, kMaxShear);
            v->sh2 = std::clamp(v->sh2 + sig.sh2 * normal(), -kMaxShear, kMaxShear);
        } else {
            auto& w = std::get<LegacyStateVector>(particles[i].state);
            LegacyStateVector next = w;
            next.a1 += legacy.a1 * z0;
            next.a2 += legacy.a2 * normal();
            next.a3 += legacy.a3 * normal();
            next.a4 += legacy.a4 * normal();
            next.o1 += sig.tx * normal();
            next.o2 += sig.ty * normal();
            if (next.det() < kMinLegacyDet) {
                next.a1 = w.a1;
                next.a2 = w.a2;
                next.a3 = w.a3;
                next.a4 = w.a4;
            }
            w = next;
        }
    }
}

/// Normalized exp(-alpha * err), stabilized by the smallest error.
inline std::vector<double> likelihood_pf(std::span<const double> errors, double alpha) {
    if (errors.empty()) throw ContractError("no particles to weigh");
    if (!(alpha > 0.0)) throw ContractError("alpha must be positive");
    double lo = errors[0];
    for (double e : errors) {
        if (!std::isfinite(e)) throw NumericError("non-finite reconstruction error");
        lo = std::min(lo, e);
    }
    std::vector<double> w(errors.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < errors.size(); ++i) {
        w[i] = std::exp(-alpha * (errors[i] - lo));
        sum += w[i];
    }
    for (double& x : w) x /= sum;
    return w;
}

/// Normalized exp(-alpha * (err_i + ||d - y_i||^2)). Candidates are the
/// columns of `candidates`.
inline std::vector<double> likelihood_fused(std::span<const double> errors,
                                            const Eigen::VectorXd& detection,
                                            const Eigen::MatrixXd& candidates, double alpha) {
    if (static_cast<Eigen::Index>(errors.size()) != candidates.cols())
        throw ContractError("error count does not match candidate count");
    if (detection.size() != candidates.rows())
        throw ContractError("detection patch dimension does not match candidates");
    std::vector<double> combined(errors.size());
    for (std::size_t i = 0; i < errors.size(); ++i)
        combined[i] = errors[i] + (detection - candidates.col(static_cast<Eigen::Index>(i))).squaredNorm();
    return likelihood_pf(combined, alpha);
}

/// Falls back to likelihood_pf when no detection patch is available.
inline std::vector<double> likelihood_fused(std::span<const double> errors,
                                            const std::optional<Eigen::VectorXd>& detection,
                                            const Eigen::MatrixXd& candidates, double alpha) {
    if (!detection) return likelihood_pf(errors, alpha);
    return likelihood_fused(errors, *detection, candidates, alpha);
}

/// Index of the largest weight; the lowest index wins ties.
inline std::size_t select_map(std::span<const double> weights) {
    if (weights.empty()) throw ContractError("empty population");
    std::size_t best = 0;
    for (std::size_t i = 1; i < weights.size(); ++i)
        if (weights[i] > weights[best]) best = i;
    return best;
}

/// Systematic resampling: offspring j takes the particle whose cumulative
/// weight interval contains (offset + j) / N, offset in [0, 1).
inline std::vector<std::size_t> systematic_indices(std::span<const double> weights, double offset) {
    const std::size_t n = weights.size();
    std::vector<std::size_t> idx(n);
    if (n == 0) return idx;
    // Round-off in the cumulative sum must not select a trailing zero weight.
    std::size_t last = n - 1;
    while (last > 0 && weights[last] <= 0.0) --last;
    double cum = weights[0];
    std::size_t i = 0;
    for (std::size_t j = 0; j < n; ++j) {
        const double u = (offset + static_cast<double>(j)) / static_cast<double>(n);
        while (u >= cum && i < last) cum += weights[++i];
        idx[j] = i;
    }
    return idx;
}

inline std::vector<Particle> resample(std::span<const Particle> particles,
                                      std::span<const double> weights, double offset) {
    if (particles.size() != weights.size())
        throw ContractError("weights do not match particles");
    const auto idx = systematic_indices(weights, offset);
    std::vector<Particle> out;
    out.reserve(particles.size());
    const double w = 1.0 / static_cast<double>(particles.size());
    for (std::size_t j : idx) {
        out.push_back(particles[j]);
        out.back().weight = w;
    }
    return out;
}

/// True when the pf-likelihood argmax ranks within the top k of the fused
/// weights (rank 1 = largest, ties share the better rank).
inline bool consensus_check(std::span<const double> pf, std::span<const double> fused, int k) {
    if (pf.size() != fused.size() || pf.empty())
        throw ContractError("weight sets must cover the same nonempty population");
    const std::size_t best = select_map(pf);
    std::size_t better = 0;
    for (double f : fused)
        if (f > fused[best]) ++better;
    return static_cast<long long>(better) + 1 <= k;
}

/// Replaces all significant templates with patches around `detection_quad`.
inline sparse::Dictionary update_dictionary_full(const imaging::Frame& frame,
                                                 const QuadBB& detection_quad, int n, int side) {
    return sparse::build_dictionary(frame, detection_quad, n, side);
}

/// Replaces the template with the smallest coefficient by the tracked patch
/// when no template reaches `threshold` cosine similarity. Returns whether a
/// replacement happened.
inline bool update_dictionary_slow(sparse::Dictionary& dict, const Eigen::VectorXd& tracked,
                                   const Eigen::VectorXd& significant_coeffs, double threshold) {
    if (tracked.size() != dict.dim() || significant_coeffs.size() != dict.size())
        throw ContractError("tracked patch or coefficients do not match dictionary");
    const double norm = tracked.norm();
    if (norm == 0.0) return false;
    const Eigen::VectorXd unit = tracked / norm;
    const double best = (dict.significant.transpose() * unit).maxCoeff();
    if (best >= threshold) return false;
    Eigen::Index weakest = 0;
    significant_coeffs.minCoeff(&weakest);
    dict.significant.col(weakest) = unit;
    return true;
}

/// Overlap used for association; tolerates non-convex input via its hull.
inline double association_iou(const QuadBB& a, const QuadBB& b) {
    const QuadBB ha = geometry::convex_hull(a);
    const QuadBB hb = geometry::convex_hull(b);
    if (geometry::area(ha) <= 0.0 || geometry::area(hb) <= 0.0) return 0.0;
    return geometry::quad_iou(ha, hb);
}

/// Picks the detection with the largest IoU against `previous`; failing any
/// overlap, the best-scoring one whose center lies within 1.5 diagonals.
inline std::optional<QuadBB> associate_detection(std::span<const dataio::Detection> detections,
                                                 const QuadBB& previous) {
    std::vector<QuadBB> quads;
    std::vector<double> scores;
    for (const auto& d : detections) {
        try {
            quads.push_back(d.resolve_quad());
            scores.push_back(d.score);
        } catch (const Error&) {
            // unusable mask; skipped
        }
    }
    double best_iou = 0.0;
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < quads.size(); ++i) {
        const double iou = association_iou(quads[i], previous);
        if (iou > best_iou) {
            best_iou = iou;
            best = i;
        }
    }
    if (best) return quads[*best];
    const double diag =
        std::max((previous[0] - previous[2]).norm(), (previous[1] - previous[3]).norm());
    const geometry::Point center = previous.center();
    for (std::size_t i = 0; i < quads.size(); ++i) {
        if ((quads[i].center() - center).norm() > 1.5 * diag) continue;
        if (!best || scores[i] > scores[*best]) best = i;
    }
    if (best) return quads[*best];
    return std::nullopt;
}

class Tracker {
public:
    /// Builds the initial dictionary from `init_quad` and seeds every particle
    /// at the state mapping the reference square onto it.
    Tracker(const imaging::Frame& first, const QuadBB& init_quad, TrackerConfig cfg)
        : cfg_(std::move(cfg)) {
        cfg_.validate();
        if (!geometry::all_finite(init_quad) || geometry::area(init_quad) < 1.0)
            throw DegenerateRegionError("initial quad is degenerate");
        dict_ = sparse::build_dictionary(first, init_quad, cfg_.n_templates, cfg_.template_side);
        step_ = sparse::step_size(dict_, cfg_.solver.mu);

        const geometry::AffineMatrix a = geometry::fit_affine_to_quad(init_quad, cfg_.template_side);
        AnyState init;
        if (cfg_.legacy_state())
            init = geometry::legacy_from_affine(a);
        else
            init = geometry::extract_state(a);
        particles_.assign(static_cast<std::size_t>(cfg_.n_particles),
                          Particle{init, 1.0 / cfg_.n_particles, 0.0});

        first_.frame_index = 1;
        first_.chosen_quad = geometry::quad_from_affine(a, cfg_.template_side);
        first_.chosen_state = init;
        first_.max_likelihood = 1.0 / cfg_.n_particles;
        first_.weight_sum = 1.0;
        first_.max_pf_likelihood = first_.max_likelihood;
        previous_ = first_.chosen_quad;
    }

    const TrackerConfig& config() const noexcept { return cfg_; }
    const sparse::Dictionary& dictionary() const noexcept { return dict_; }
    const std::vector<Particle>& particles() const noexcept { return particles_; }
    const FrameResult& initial_result() const noexcept { return first_; }
    int frame_index() const noexcept { return frame_; }

    /// First standard-normal transition draws (particles 0..9) of the first step.
    const std::vector<double>& noise_log() const noexcept { return noise_log_; }

    FrameResult step(const imaging::Frame& frame, std::span<const dataio::Detection> detections) {
        ++frame_;
        FrameResult res;
        res.frame_index = frame_;
        try {
            run_step(frame, detections, res);
        } catch (const Error& e) {
            res = failure(e.what());
        }
        return res;
    }

private:
    FrameResult failure(const std::string& why) const {
        FrameResult r;
        r.frame_index = frame_;
        r.chosen_quad = previous_;
        r.chosen_state = last_state_or_init();
        r.failed = true;
        r.message = why;
        return r;
    }

    AnyState last_state_or_init() const {
        return last_state_ ? *last_state_ : first_.chosen_state;
    }

    void run_step(const imaging::Frame& frame, std::span<const dataio::Detection> detections,
                  FrameResult& res) {
        const std::size_t n = particles_.size();
        const int side = cfg_.template_side;
        const Eigen::Index d = static_cast<Eigen::Index>(side) * side;

        transition(particles_, cfg_.sigmas, cfg_.legacy_sigmas, cfg_.seed, frame_,
                   noise_log_.empty() ? &noise_log_ : nullptr);

        // Per-particle warp + sparse code; invalid boxes get zero weight.
        std::vector<QuadBB> quads(n);
        std::vector<char> valid(n, 0);
        std::vector<double> errors(n, 0.0);
        Eigen::MatrixXd patches(d, static_cast<Eigen::Index>(n));
        Eigen::MatrixXd coeffs(dict_.size(), static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) {
            try {
                quads[i] = geometry::quad_from_affine(affine_of(particles_[i].state), side);
                const imaging::PatchVector p = imaging::warp_patch(frame, quads[i], side, true);
                const sparse::Coefficients c = sparse::solve_l1apg(dict_, p.values, cfg_.solver, step_);
                errors[i] = sparse::reconstruction_error(dict_, p.values, c);
                patches.col(static_cast<Eigen::Index>(i)) = p.values;
                coeffs.col(static_cast<Eigen::Index>(i)) = c.significant;
                valid[i] = 1;
            } catch (const DegenerateRegionError&) {
                valid[i] = 0;
            }
            particles_[i].cached_error = errors[i];
        }
        std::vector<std::size_t> live;
        for (std::size_t i = 0; i < n; ++i)
            if (valid[i]) live.push_back(i);
        if (live.empty()) throw NumericError("every particle maps to a degenerate region");

        std::optional<QuadBB> det_quad = associate_detection(detections, previous_);
        std::optional<Eigen::VectorXd> det_patch;
        if (det_quad) {
            try {
                det_patch = imaging::warp_patch(frame, *det_quad, side, true).values;
            } catch (const DegenerateRegionError&) {
                det_quad.reset();
            }
        }

        std::vector<double> live_err(live.size());
        Eigen::MatrixXd live_patches(d, static_cast<Eigen::Index>(live.size()));
        for (std::size_t k = 0; k < live.size(); ++k) {
            live_err[k] = errors[live[k]];
            live_patches.col(static_cast<Eigen::Index>(k)) = patches.col(static_cast<Eigen::Index>(live[k]));
        }
        const std::vector<double> pf = scatter(likelihood_pf(live_err, cfg_.alpha), live, n);
        std::vector<double> fused;
        const bool use_detection = cfg_.mode != Mode::l1apg && det_patch.has_value();
        if (use_detection)
            fused = scatter(likelihood_fused(live_err, *det_patch, live_patches, cfg_.alpha), live, n);
        const std::vector<double>& weights = use_detection ? fused : pf;
        for (std::size_t i = 0; i < n; ++i) particles_[i].weight = weights[i];

        const std::size_t best = select_map(weights);
        res.chosen_quad = quads[best];
        res.chosen_state = particles_[best].state;
        res.max_likelihood = weights[best];
        res.max_pf_likelihood = pf[select_map(pf)];
        res.detection_used = use_detection;
        for (double w : weights) res.weight_sum += w;

        if (cfg_.dict_update) {
            if (cfg_.mode == Mode::l1apg) {
                res.dict_updated = update_dictionary_slow(
                    dict_, patches.col(static_cast<Eigen::Index>(best)),
                    coeffs.col(static_cast<Eigen::Index>(best)), cfg_.slow_update_threshold);
            } else if (use_detection) {
                res.consensus = consensus_check(pf, fused, cfg_.effective_knn_k());
                if (!*res.consensus) {
                    try {
                        dict_ = update_dictionary_full(frame, *det_quad, cfg_.n_templates, side);
                        res.dict_updated = true;
                    } catch (const Error& e) {
                        res.message = std::string("dictionary update skipped: ") + e.what();
                    }
                }
            }
            if (res.dict_updated) step_ = sparse::step_size(dict_, cfg_.solver.mu);
        }

        auto gen = stream(cfg_.seed, static_cast<std::uint64_t>(frame_), 0, kResampleSalt);
        NormalSource src(gen);
        particles_ = resample(particles_, weights, src.uniform());

        previous_ = res.chosen_quad;
        last_state_ = res.chosen_state;
    }

    static std::vector<double> scatter(const std::vector<double>& w,
                                       const std::vector<std::size_t>& live, std::size_t n) {
        std::vector<double> out(n, 0.0);
        for (std::size_t k = 0; k < live.size(); ++k) out[live[k]] = w[k];
        return out;
    }

    TrackerConfig cfg_;
    sparse::Dictionary dict_;
    double step_ = 0.0;
    std::vector<Particle> particles_;
    FrameResult first_;
    QuadBB previous_;
    std::optional<AnyState> last_state_;
    std::vector<double> noise_log_;
    int frame_ = 1;
};

}  // namespace l1dpf::tracker
