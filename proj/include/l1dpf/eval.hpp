#pragma once

// Tracking metrics, paired ablation statistics and the synthetic-sequence
// generator used as a ground-truth oracle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "l1dpf/dataio.hpp"
#include "l1dpf/errors.hpp"
#include "l1dpf/geometry.hpp"
#include "l1dpf/imaging.hpp"
#include "l1dpf/rng.hpp"

namespace l1dpf::eval {

namespace fs = std::filesystem;
using geometry::QuadBB;

inline constexpr int kThresholdCount = 21;

/// Threshold k of the success grid, k = 0..20 -> 0.00, 0.05, ..., 1.00.
inline double threshold(int k) { return static_cast<double>(k) / 20.0; }

/// Per-frame overlap; non-convex quads are replaced by their hull and
/// degenerate ones overlap nothing.
inline double frame_iou(const QuadBB& pred, const QuadBB& gt) {
    const QuadBB p = geometry::is_convex(pred) ? pred : geometry::convex_hull(pred);
    const QuadBB g = geometry::is_convex(gt) ? gt : geometry::convex_hull(gt);
    if (!geometry::all_finite(p) || !geometry::all_finite(g)) return 0.0;
    if (geometry::area(p) <= 1e-12 || geometry::area(g) <= 1e-12) return 0.0;
    return geometry::quad_iou(p, g);
}

inline std::vector<double> frame_ious(std::span<const QuadBB> pred, std::span<const QuadBB> gt) {
    if (pred.size() != gt.size())
        throw DataError("prediction has " + std::to_string(pred.size()) + " frames, groundtruth has " +
                        std::to_string(gt.size()));
    if (pred.empty()) throw DataError("no frames to evaluate");
    std::vector<double> out(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) out[i] = frame_iou(pred[i], gt[i]);
    return out;
}

/// Success at tau is IoU >= tau, with IoU > 0 required at tau = 0.
inline bool success(double iou, double tau) { return iou > 0.0 && iou >= tau; }

using SuccessCurve = std::vector<std::pair<double, double>>;

inline SuccessCurve success_curve_from_ious(std::span<const double> ious) {
    SuccessCurve curve;
    for (int k = 0; k < kThresholdCount; ++k) {
        const double tau = threshold(k);
        std::size_t hits = 0;
        for (double v : ious) hits += success(v, tau) ? 1 : 0;
        curve.emplace_back(tau, static_cast<double>(hits) / static_cast<double>(ious.size()));
    }
    return curve;
}

inline SuccessCurve success_curve(std::span<const QuadBB> pred, std::span<const QuadBB> gt) {
    return success_curve_from_ious(frame_ious(pred, gt));
}

/// Success rate at one threshold.
inline double success_rate(std::span<const double> ious, double tau) {
    std::size_t hits = 0;
    for (double v : ious) hits += success(v, tau) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(ious.size());
}

inline double accuracy_from_ious(std::span<const double> ious) {
    double sum = 0.0;
    std::size_t n = 0;
    for (double v : ious)
        if (v > 0.0) {
            sum += v;
            ++n;
        }
    return n ? sum / static_cast<double>(n) : 0.0;
}

inline double accuracy(std::span<const QuadBB> pred, std::span<const QuadBB> gt) {
    return accuracy_from_ious(frame_ious(pred, gt));
}

/// Drift events per frame: each overlap-to-zero transition, plus a miss on
/// the first frame.
inline double robustness_from_ious(std::span<const double> ious) {
    std::size_t events = 0;
    for (std::size_t i = 0; i < ious.size(); ++i) {
        const bool lost = ious[i] <= 0.0;
        if (lost && (i == 0 || ious[i - 1] > 0.0)) ++events;
    }
    return static_cast<double>(events) / static_cast<double>(ious.size());
}

inline double robustness(std::span<const QuadBB> pred, std::span<const QuadBB> gt) {
    return robustness_from_ious(frame_ious(pred, gt));
}

inline double miss_rate_from_ious(std::span<const double> ious) {
    std::size_t miss = 0;
    for (double v : ious) miss += v <= 0.0 ? 1 : 0;
    return static_cast<double>(miss) / static_cast<double>(ious.size());
}

inline double miss_rate(std::span<const QuadBB> pred, std::span<const QuadBB> gt) {
    return miss_rate_from_ious(frame_ious(pred, gt));
}

inline double update_rate(std::span<const dataio::ResultRow> results) {
    if (results.empty()) throw DataError("no results");
    std::size_t n = 0;
    for (const auto& r : results) n += r.dict_updated ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(results.size());
}

struct MetricReport {
    SuccessCurve success_curve;
    double accuracy = 0.0;
    double robustness = 0.0;
    double miss_rate = 0.0;
    std::optional<double> update_rate;
    std::size_t n_frames = 0;

    double sr(double tau) const {
        for (const auto& [t, r] : success_curve)
            if (std::abs(t - tau) < 1e-12) return r;
        throw ContractError("threshold not on the success grid");
    }
};

/// Metrics over all frames, or only those with subset[i] set.
inline MetricReport evaluate(std::span<const QuadBB> pred, std::span<const QuadBB> gt,
                             std::span<const dataio::ResultRow> results = {},
                             const std::vector<bool>* subset = nullptr) {
    std::vector<double> ious = frame_ious(pred, gt);
    std::vector<dataio::ResultRow> rows(results.begin(), results.end());
    if (subset) {
        if (subset->size() != ious.size()) throw DataError("subset mask length mismatch");
        std::vector<double> kept;
        std::vector<dataio::ResultRow> kept_rows;
        for (std::size_t i = 0; i < ious.size(); ++i)
            if ((*subset)[i]) {
                kept.push_back(ious[i]);
                if (!rows.empty()) kept_rows.push_back(rows[i]);
            }
        if (kept.empty()) throw DataError("subset selects no frames");
        ious = std::move(kept);
        rows = std::move(kept_rows);
    }
    MetricReport r;
    r.success_curve = success_curve_from_ious(ious);
    r.accuracy = accuracy_from_ious(ious);
    r.robustness = robustness_from_ious(ious);
    r.miss_rate = miss_rate_from_ious(ious);
    if (!rows.empty()) r.update_rate = update_rate(rows);
    r.n_frames = ious.size();
    return r;
}

/// `metric,value` rows followed by `tau,rate` rows.
inline void write_report(const MetricReport& r, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write report " + path.string());
    out << "metric,value\n";
    out << "n_frames," << r.n_frames << '\n';
    out << "accuracy," << dataio::detail::fixed4(r.accuracy) << '\n';
    out << "robustness," << dataio::detail::fixed4(r.robustness) << '\n';
    out << "miss_rate," << dataio::detail::fixed4(r.miss_rate) << '\n';
    if (r.update_rate) out << "update_rate," << dataio::detail::fixed4(*r.update_rate) << '\n';
    out << "tau,rate\n";
    for (const auto& [tau, rate] : r.success_curve)
        out << dataio::detail::fixed4(tau).substr(0, 4) << ',' << dataio::detail::fixed4(rate) << '\n';
}

// ------------------------------------------------------------- ablation

struct PairedReport {
    SuccessCurve success_delta;       ///< SR_a(tau) - SR_b(tau)
    std::vector<double> iou_delta;    ///< per frame IoU_a - IoU_b
    double likelihood_win_fraction = 0.0;  ///< frames with ml_a > ml_b
};

inline PairedReport ablation_pairing(std::span<const dataio::ResultRow> a,
                                     std::span<const dataio::ResultRow> b,
                                     std::span<const QuadBB> gt) {
    if (a.size() != b.size() || a.size() != gt.size())
        throw DataError("paired runs must cover the same frames (" + std::to_string(a.size()) + ", " +
                        std::to_string(b.size()) + ", gt " + std::to_string(gt.size()) + ")");
    if (a.empty()) throw DataError("no frames to pair");
    std::vector<QuadBB> qa, qb;
    std::size_t wins = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].frame != b[i].frame) throw DataError("paired runs disagree on frame order");
        qa.push_back(a[i].quad);
        qb.push_back(b[i].quad);
        if (a[i].max_likelihood > b[i].max_likelihood) ++wins;
    }
    const auto ia = frame_ious(qa, gt);
    const auto ib = frame_ious(qb, gt);
    const auto ca = success_curve_from_ious(ia);
    const auto cb = success_curve_from_ious(ib);
    PairedReport p;
    for (std::size_t k = 0; k < ca.size(); ++k)
        p.success_delta.emplace_back(ca[k].first, ca[k].second - cb[k].second);
    for (std::size_t i = 0; i < ia.size(); ++i) p.iou_delta.push_back(ia[i] - ib[i]);
    p.likelihood_win_fraction = static_cast<double>(wins) / static_cast<double>(a.size());
    return p;
}

// ------------------------------------------------------------ synthetic

enum class Motion { still, translate, rotate, scale, shear, mixed, occlude, illum };

inline Motion parse_motion(std::string_view v) {
    if (v == "static") return Motion::still;
    if (v == "translate") return Motion::translate;
    if (v == "rotate") return Motion::rotate;
    if (v == "scale") return Motion::scale;
    if (v == "shear") return Motion::shear;
    if (v == "mixed") return Motion::mixed;
    if (v == "occlude") return Motion::occlude;
    if (v == "illum") return Motion::illum;
    throw ConfigError("motion", "unknown preset '" + std::string(v) +
                                    "', expected one of {static, translate, rotate, scale, shear, "
                                    "mixed, occlude, illum}");
}

/// Per-frame rate of the preset's motion when none is configured.
inline double default_rate(Motion m) {
    switch (m) {
        case Motion::still: return 0.0;
        case Motion::translate: return 2.0;    // px / frame
        case Motion::rotate: return 0.01;      // rad / frame
        case Motion::scale: return 0.005;      // relative growth / frame
        case Motion::shear: return 0.003;      // shear / frame
        case Motion::mixed: return 1.0;        // multiplier of the mixed schedule
        case Motion::occlude: return 0.5;      // px / frame drift under the bar
        case Motion::illum: return -0.005;     // gain change / frame
    }
    return 0.0;
}

struct SynthSpec {
    int n_frames = 100;
    Motion motion = Motion::translate;
    std::optional<double> rate;
    double jitter = 2.0;   ///< detection translation jitter, px
    double dropout = 0.2;  ///< probability a frame has no detection
    double contrast = 0.3; ///< object mean minus background mean
    int width = 320;
    int height = 240;
    double object_width = 40.0;
    double object_height = 32.0;
    double texture = 0.1;      ///< amplitude of object / background texture
    double pixel_noise = 0.01; ///< per-frame Gaussian sensor noise
    std::uint64_t seed = 0;

    double effective_rate() const { return rate ? *rate : default_rate(motion); }

    void validate() const {
        if (n_frames < 1) throw ConfigError("n_frames", "must be >= 1");
        if (!(jitter >= 0.0)) throw ConfigError("jitter", "must be >= 0");
        if (!(dropout >= 0.0 && dropout <= 1.0)) throw ConfigError("dropout", "must lie in [0, 1]");
        if (!(contrast >= 0.0 && contrast <= 0.6)) throw ConfigError("contrast", "must lie in [0, 0.6]");
        if (width < 16 || height < 16) throw ConfigError("width", "frame must be at least 16x16");
        if (!(object_width >= 4.0 && object_height >= 4.0))
            throw ConfigError("object_width", "object must be at least 4x4");
        if (!(texture >= 0.0 && texture <= 0.2)) throw ConfigError("texture", "must lie in [0, 0.2]");
        if (!(pixel_noise >= 0.0)) throw ConfigError("pixel_noise", "must be >= 0");
        if (!std::isfinite(effective_rate())) throw ConfigError("rate", "must be finite");
    }
};

inline SynthSpec parse_synth_spec(std::istream& in, const std::string& src = "spec") {
    const auto kv = dataio::detail::read_key_values(in, src);
    SynthSpec s;
    for (const auto& [key, v] : kv) {
        using dataio::detail::as_double;
        using dataio::detail::as_int;
        if (key == "n_frames") s.n_frames = static_cast<int>(as_int(key, v));
        else if (key == "motion") s.motion = parse_motion(v);
        else if (key == "rate") s.rate = as_double(key, v);
        else if (key == "jitter") s.jitter = as_double(key, v);
        else if (key == "dropout") s.dropout = as_double(key, v);
        else if (key == "contrast") s.contrast = as_double(key, v);
        else if (key == "width") s.width = static_cast<int>(as_int(key, v));
        else if (key == "height") s.height = static_cast<int>(as_int(key, v));
        else if (key == "object_width") s.object_width = as_double(key, v);
        else if (key == "object_height") s.object_height = as_double(key, v);
        else if (key == "texture") s.texture = as_double(key, v);
        else if (key == "pixel_noise") s.pixel_noise = as_double(key, v);
        else throw ConfigError(key, "unknown synthetic-spec key");
    }
    s.validate();
    return s;
}

inline SynthSpec load_synth_spec(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot open spec file " + path.string());
    return parse_synth_spec(in, path.string());
}

/// Renders a textured rectangle moving over a static textured background.
/// Everything is a deterministic function of the spec (including its seed).
class SyntheticSequence {
public:
    static constexpr double kSide = 16.0;  ///< reference-square edge of the GT states

    explicit SyntheticSequence(SynthSpec spec) : spec_(std::move(spec)) {
        spec_.validate();
        build_background();
        build_object_texture();
    }

    const SynthSpec& spec() const noexcept { return spec_; }
    int size() const noexcept { return spec_.n_frames; }

    /// Analytic state at 1-based `frame`.
    geometry::StateVector state(int frame) const {
        const double t = frame - 1;
        const double n1 = std::max(spec_.n_frames - 1, 0);
        const double rate = spec_.effective_rate();
        geometry::StateVector v;
        v.o1 = 0.5 * spec_.width;
        v.o2 = 0.5 * spec_.height;
        v.s1 = spec_.object_width / kSide;
        v.s2 = spec_.object_height / kSide;
        switch (spec_.motion) {
            case Motion::still:
            case Motion::illum:
                break;
            case Motion::translate:
                v.o1 += rate * (t - 0.5 * n1);
                break;
            case Motion::rotate:
                v.theta = rate * t;
                break;
            case Motion::scale:
                v.s1 *= std::pow(1.0 + rate, t);
                v.s2 *= std::pow(1.0 + rate, t);
                break;
            case Motion::shear:
                v.sh1 = rate * t;
                break;
            case Motion::mixed:
                v.o1 += rate * 1.0 * (t - 0.5 * n1);
                v.o2 += rate * 0.5 * (t - 0.5 * n1);
                v.theta = rate * 0.005 * t;
                v.s1 *= std::pow(1.0 + rate * 0.003, t);
                v.s2 *= std::pow(1.0 + rate * 0.003, t);
                break;
            case Motion::occlude:
                v.o1 += rate * (t - 0.5 * n1);
                break;
        }
        return v;
    }

    QuadBB gt_quad(int frame) const {
        return geometry::quad_from_affine(geometry::compose_affine(state(frame)), kSide);
    }

    /// Vertical occluder bar sweeping across the object (occlude preset only).
    std::optional<QuadBB> occluder(int frame) const {
        if (spec_.motion != Motion::occlude) return std::nullopt;
        const double t = frame - 1;
        const double n1 = std::max(spec_.n_frames - 1, 1);
        const double w = spec_.object_width;
        const double cx = state(frame).o1 - 1.5 * w + 3.0 * w * t / n1;
        const double half = 0.3 * w;
        const double h = spec_.height;
        return QuadBB{{geometry::Point(cx - half, -0.5), geometry::Point(cx + half, -0.5),
                       geometry::Point(cx + half, h - 0.5), geometry::Point(cx - half, h - 0.5)}};
    }

    double gain(int frame) const {
        if (spec_.motion != Motion::illum) return 1.0;
        return std::max(0.05, 1.0 + spec_.effective_rate() * (frame - 1));
    }

    /// Pixels whose centers fall inside the object at `frame`.
    imaging::BinaryMask object_mask(int frame) const {
        imaging::BinaryMask m(spec_.width, spec_.height);
        const Eigen::Matrix2d inv = linear_inverse(frame);
        const geometry::StateVector v = state(frame);
        for (int y = 0; y < spec_.height; ++y)
            for (int x = 0; x < spec_.width; ++x) {
                const Eigen::Vector2d q = inv * Eigen::Vector2d(x - v.o1, y - v.o2);
                if (inside(q)) m.set(x, y, true);
            }
        return m;
    }

    /// Frame at 1-based index, quantized to 8 bits.
    imaging::Frame render(int frame) const {
        const geometry::StateVector v = state(frame);
        const Eigen::Matrix2d inv = linear_inverse(frame);
        const double g = gain(frame);
        const auto bar = occluder(frame);
        const double obj_mean = 0.5 + 0.5 * spec_.contrast;
        auto gen = stream(spec_.seed, static_cast<std::uint64_t>(frame), 0, kNoiseSalt);
        NormalSource normal(gen);

        std::vector<double> px(static_cast<std::size_t>(spec_.width) * spec_.height);
        for (int y = 0; y < spec_.height; ++y)
            for (int x = 0; x < spec_.width; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * spec_.width + x;
                double value = background_[i];
                const Eigen::Vector2d q = inv * Eigen::Vector2d(x - v.o1, y - v.o2);
                if (inside(q)) value = obj_mean + object_texture(q.x(), q.y());
                value *= g;
                if (bar && x >= (*bar)[0].x() && x <= (*bar)[1].x())
                    value = 0.5 + 0.08 * (((x / 4) + (y / 4)) % 2 == 0 ? 1.0 : -1.0);
                value += spec_.pixel_noise * normal();
                px[i] = std::round(std::clamp(value, 0.0, 1.0) * 255.0) / 255.0;
            }
        return imaging::Frame(spec_.width, spec_.height, std::move(px));
    }

    /// GT states jittered in translation, dropped with probability `dropout`.
    dataio::DetectionSet detections() const {
        dataio::DetectionSet set;
        for (int f = 1; f <= spec_.n_frames; ++f) {
            auto gen = stream(spec_.seed, static_cast<std::uint64_t>(f), 0, kDetectionSalt);
            NormalSource normal(gen);
            const double u = normal.uniform();
            const double jx = normal();
            const double jy = normal();
            std::vector<dataio::Detection> dets;
            if (u >= spec_.dropout) {
                geometry::StateVector v = state(f);
                v.o1 += spec_.jitter * jx;
                v.o2 += spec_.jitter * jy;
                dataio::Detection d;
                d.score = 0.9;
                d.class_label = "object";
                d.quad = geometry::quad_from_affine(geometry::compose_affine(v), kSide);
                dets.push_back(std::move(d));
            }
            set.add(f, std::move(dets));
        }
        return set;
    }

    std::vector<QuadBB> gt_quads() const {
        std::vector<QuadBB> out;
        for (int f = 1; f <= spec_.n_frames; ++f) out.push_back(gt_quad(f));
        return out;
    }

private:
    static constexpr std::uint64_t kNoiseSalt = 11;
    static constexpr std::uint64_t kDetectionSalt = 12;
    static constexpr std::uint64_t kTextureSalt = 13;
    static constexpr int kBackgroundCell = 12;  // px
    static constexpr int kObjectCells = 8;      // per reference edge

    static bool inside(const Eigen::Vector2d& q) {
        const double h = 0.5 * kSide;
        return q.x() >= -h && q.x() < h && q.y() >= -h && q.y() < h;
    }

    Eigen::Matrix2d linear_inverse(int frame) const {
        return geometry::compose_affine(state(frame)).leftCols<2>().inverse();
    }

    static double lerp_grid(const std::vector<double>& grid, int cols, double gx, double gy) {
        const int x0 = static_cast<int>(std::floor(gx));
        const int y0 = static_cast<int>(std::floor(gy));
        const double tx = gx - x0;
        const double ty = gy - y0;
        auto at = [&](int x, int y) { return grid[static_cast<std::size_t>(y) * cols + x]; };
        return (1 - ty) * ((1 - tx) * at(x0, y0) + tx * at(x0 + 1, y0)) +
               ty * ((1 - tx) * at(x0, y0 + 1) + tx * at(x0 + 1, y0 + 1));
    }

    void build_background() {
        auto gen = stream(spec_.seed, 0, 1, kTextureSalt);
        NormalSource src(gen);
        const int cols = spec_.width / kBackgroundCell + 2;
        const int rows = spec_.height / kBackgroundCell + 2;
        std::vector<double> grid(static_cast<std::size_t>(cols) * rows);
        for (double& g : grid) g = (2.0 * src.uniform() - 1.0) * spec_.texture;
        background_.resize(static_cast<std::size_t>(spec_.width) * spec_.height);
        double mean = 0.0;
        for (int y = 0; y < spec_.height; ++y)
            for (int x = 0; x < spec_.width; ++x) {
                const double v = lerp_grid(grid, cols, static_cast<double>(x) / kBackgroundCell,
                                           static_cast<double>(y) / kBackgroundCell);
                background_[static_cast<std::size_t>(y) * spec_.width + x] = v;
                mean += v;
            }
        mean /= static_cast<double>(background_.size());
        const double base = 0.5 - 0.5 * spec_.contrast;
        for (double& v : background_) v += base - mean;
    }

    void build_object_texture() {
        auto gen = stream(spec_.seed, 0, 2, kTextureSalt);
        NormalSource src(gen);
        const int n = kObjectCells + 1;
        object_grid_.resize(static_cast<std::size_t>(n) * n);
        for (double& g : object_grid_) g = (2.0 * src.uniform() - 1.0) * 1.5 * spec_.texture;
        // Zero the mean over a fine sampling of the reference square.
        constexpr int fine = 64;
        double mean = 0.0;
        for (int j = 0; j < fine; ++j)
            for (int i = 0; i < fine; ++i)
                mean += raw_object_texture(-0.5 * kSide + kSide * (i + 0.5) / fine,
                                           -0.5 * kSide + kSide * (j + 0.5) / fine);
        object_offset_ = mean / (fine * fine);
    }

    double raw_object_texture(double u, double v) const {
        const double scale = kObjectCells / kSide;
        const double gx = std::clamp((u + 0.5 * kSide) * scale, 0.0, kObjectCells - 1e-9);
        const double gy = std::clamp((v + 0.5 * kSide) * scale, 0.0, kObjectCells - 1e-9);
        return lerp_grid(object_grid_, kObjectCells + 1, gx, gy);
    }

    double object_texture(double u, double v) const { return raw_object_texture(u, v) - object_offset_; }

    SynthSpec spec_;
    std::vector<double> background_;
    std::vector<double> object_grid_;
    double object_offset_ = 0.0;
};

/// Writes %08d.png frames, groundtruth.txt, detections.jsonl and, for the
/// occlude preset, occluders.txt.
inline void generate_synthetic(const SynthSpec& spec, const fs::path& out_dir) {
    const SyntheticSequence seq(spec);
    fs::create_directories(out_dir);
    char name[32];
    for (int f = 1; f <= seq.size(); ++f) {
        std::snprintf(name, sizeof name, "%08d.png", f);
        dataio::save_frame(seq.render(f), out_dir / name);
    }
    dataio::write_groundtruth(seq.gt_quads(), out_dir / "groundtruth.txt");
    dataio::write_detections(seq.detections(), seq.size(), out_dir / "detections.jsonl");
    if (spec.motion == Motion::occlude) {
        std::vector<QuadBB> bars;
        for (int f = 1; f <= seq.size(); ++f) bars.push_back(*seq.occluder(f));
        dataio::write_groundtruth(bars, out_dir / "occluders.txt");
    }
}

}  // namespace l1dpf::eval
