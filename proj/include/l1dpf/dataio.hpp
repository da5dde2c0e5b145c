#pragma once

// File formats: VOT-style sequence directories, 8-float groundtruth lines,
// JSON-lines detections, results CSV and `key = value` run configuration.

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>

#include "l1dpf/detection.hpp"
#include "l1dpf/errors.hpp"
#include "l1dpf/geometry.hpp"
#include "l1dpf/imaging.hpp"
#include "l1dpf/tracker.hpp"

namespace l1dpf::dataio {

namespace fs = std::filesystem;
using geometry::QuadBB;

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::optional<double> parse_double(std::string_view s) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

inline std::optional<long long> parse_int(std::string_view s) {
    s = trim(s);
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

inline std::string fixed4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

}  // namespace detail

// ---------------------------------------------------------------- frames

inline imaging::Frame load_frame(const fs::path& path) {
    const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw DataError("cannot decode image " + path.string());
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(bgr.rows) * bgr.cols * 3);
    for (int y = 0; y < bgr.rows; ++y) {
        const auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            const std::size_t i = (static_cast<std::size_t>(y) * bgr.cols + x) * 3;
            rgb[i] = row[x][2];
            rgb[i + 1] = row[x][1];
            rgb[i + 2] = row[x][0];
        }
    }
    return imaging::to_grayscale(rgb, bgr.cols, bgr.rows);
}

/// 8-bit grayscale PNG.
inline void save_frame(const imaging::Frame& frame, const fs::path& path) {
    cv::Mat img(frame.height(), frame.width(), CV_8UC1);
    for (int y = 0; y < frame.height(); ++y)
        for (int x = 0; x < frame.width(); ++x)
            img.at<std::uint8_t>(y, x) =
                static_cast<std::uint8_t>(std::lround(std::clamp(frame.at(x, y), 0.0, 1.0) * 255.0));
    if (!cv::imwrite(path.string(), img)) throw DataError("cannot write image " + path.string());
}

// ---------------------------------------------------------- groundtruth

struct ParsedQuad {
    QuadBB quad;
    bool convex = true;  ///< false: kept as written, callers should use the hull
};

/// Parses "x1,y1,x2,y2,x3,y3,x4,y4".
inline ParsedQuad parse_gt_line(std::string_view line) {
    const auto fields = detail::split(detail::trim(line), ',');
    if (fields.size() != 8)
        throw FormatError("expected 8 comma-separated values, found " + std::to_string(fields.size()));
    ParsedQuad out;
    for (std::size_t i = 0; i < 8; ++i) {
        const auto v = detail::parse_double(fields[i]);
        if (!v || !std::isfinite(*v))
            throw FormatError("field " + std::to_string(i + 1) + " is not a number: '" +
                              std::string(detail::trim(fields[i])) + "'");
        out.quad[i / 2][i % 2] = *v;
    }
    out.convex = geometry::is_convex(out.quad) && geometry::area(out.quad) > 0.0;
    return out;
}

struct GroundTruth {
    std::vector<QuadBB> quads;
    std::vector<int> nonconvex_lines;  ///< 1-based
};

inline GroundTruth load_groundtruth(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    GroundTruth gt;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        try {
            ParsedQuad p = parse_gt_line(line);
            if (!p.convex) gt.nonconvex_lines.push_back(lineno);
            gt.quads.push_back(p.quad);
        } catch (const FormatError& e) {
            throw DataError(path.string() + " line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return gt;
}

inline std::string format_quad(const QuadBB& q) {
    std::string s;
    for (std::size_t i = 0; i < 8; ++i) {
        if (i) s += ',';
        s += detail::fixed4(q[i / 2][i % 2]);
    }
    return s;
}

inline void write_groundtruth(const std::vector<QuadBB>& quads, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& q : quads) out << format_quad(q) << '\n';
}

// ------------------------------------------------------------- sequence

struct Sequence {
    std::string name;
    std::vector<fs::path> frame_paths;
    std::optional<GroundTruth> gt;

    std::size_t size() const noexcept { return frame_paths.size(); }
};

/// Reads a directory of numbered .jpg/.png frames and optional groundtruth.txt.
inline Sequence load_sequence(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    static const std::regex frame_name(R"(^(\d+)\.(jpg|jpeg|png)$)", std::regex::icase);
    std::vector<std::pair<long long, fs::path>> frames;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        std::smatch m;
        if (std::regex_match(name, m, frame_name))
            frames.emplace_back(std::stoll(m[1].str()), entry.path());
    }
    if (frames.empty()) throw DataError("no numbered frames in " + dir.string());
    std::sort(frames.begin(), frames.end());
    Sequence seq;
    seq.name = dir.filename().string();
    if (seq.name.empty()) seq.name = dir.parent_path().filename().string();
    for (auto& f : frames) seq.frame_paths.push_back(std::move(f.second));
    const fs::path gt_path = dir / "groundtruth.txt";
    if (fs::exists(gt_path)) {
        seq.gt = load_groundtruth(gt_path);
        if (seq.gt->quads.size() != seq.size())
            throw DataError("groundtruth has " + std::to_string(seq.gt->quads.size()) +
                            " entries for " + std::to_string(seq.size()) + " frames");
    }
    return seq;
}

// ----------------------------------------------------------- detections

/// Per-frame detection lists; frames missing from the file are empty.
class DetectionSet {
public:
    std::span<const Detection> at(int frame) const {
        const auto it = by_frame_.find(frame);
        if (it == by_frame_.end()) return {};
        return it->second;
    }

    void add(int frame, std::vector<Detection> dets) { by_frame_[frame] = std::move(dets); }
    bool contains(int frame) const { return by_frame_.count(frame) != 0; }
    const std::map<int, std::vector<Detection>>& frames() const noexcept { return by_frame_; }

private:
    std::map<int, std::vector<Detection>> by_frame_;
};

inline Detection parse_detection(const nlohmann::json& j) {
    if (!j.is_object()) throw FormatError("detection is not an object");
    Detection d;
    if (!j.contains("score") || !j["score"].is_number()) throw FormatError("missing numeric \"score\"");
    d.score = j["score"].get<double>();
    if (!(d.score >= 0.0 && d.score <= 1.0)) throw FormatError("score outside [0, 1]");
    if (j.contains("class")) {
        if (!j["class"].is_string()) throw FormatError("\"class\" must be a string");
        d.class_label = j["class"].get<std::string>();
    }
    if (j.contains("quad") && !j["quad"].is_null()) {
        const auto& q = j["quad"];
        if (!q.is_array() || q.size() != 8) throw FormatError("\"quad\" must hold 8 numbers");
        QuadBB quad;
        for (std::size_t i = 0; i < 8; ++i) {
            if (!q[i].is_number()) throw FormatError("\"quad\" must hold 8 numbers");
            quad[i / 2][i % 2] = q[i].get<double>();
        }
        d.quad = quad;
    }
    if (j.contains("mask_rle") && !j["mask_rle"].is_null()) {
        const auto& m = j["mask_rle"];
        if (!m.is_object() || !m.contains("size") || !m.contains("counts"))
            throw FormatError("\"mask_rle\" needs \"size\" and \"counts\"");
        const auto& size = m["size"];
        if (!size.is_array() || size.size() != 2 || !size[0].is_number_integer() ||
            !size[1].is_number_integer())
            throw FormatError("\"size\" must be [h, w]");
        RleMask rle;
        rle.height = size[0].get<int>();
        rle.width = size[1].get<int>();
        if (rle.height < 0 || rle.width < 0) throw FormatError("negative mask size");
        if (!m["counts"].is_array()) throw FormatError("\"counts\" must be an integer array");
        long long total = 0;
        for (const auto& c : m["counts"]) {
            if (!c.is_number_integer() || c.get<long long>() < 0)
                throw FormatError("\"counts\" must hold non-negative integers");
            rle.counts.push_back(c.get<long long>());
            total += rle.counts.back();
        }
        if (total != static_cast<long long>(rle.height) * rle.width)
            throw FormatError("counts sum to " + std::to_string(total) + " but size is " +
                              std::to_string(rle.height) + "x" + std::to_string(rle.width));
        d.mask_rle = std::move(rle);
    }
    if (!d.quad && !d.mask_rle) throw FormatError("detection has neither \"quad\" nor \"mask_rle\"");
    return d;
}

/// Reads the JSON-lines detections file. Masks stay RLE-encoded until used.
inline DetectionSet load_detections(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    DetectionSet set;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        const std::string where = path.string() + " line " + std::to_string(lineno) + ": ";
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError(where + "malformed JSON (" + e.what() + ")");
        }
        try {
            if (!j.is_object() || !j.contains("frame") || !j["frame"].is_number_integer())
                throw FormatError("missing integer \"frame\"");
            const long long frame = j["frame"].get<long long>();
            if (frame < 1 || frame > std::numeric_limits<int>::max())
                throw FormatError("\"frame\" must be >= 1");
            if (set.contains(static_cast<int>(frame)))
                throw FormatError("duplicate entry for frame " + std::to_string(frame));
            if (!j.contains("detections") || !j["detections"].is_array())
                throw FormatError("missing \"detections\" array");
            std::vector<Detection> dets;
            for (const auto& dj : j["detections"]) dets.push_back(parse_detection(dj));
            set.add(static_cast<int>(frame), std::move(dets));
        } catch (const FormatError& e) {
            throw DataError(where + e.what());
        }
    }
    return set;
}

inline nlohmann::json detection_to_json(const Detection& d) {
    nlohmann::json j;
    j["score"] = d.score;
    j["class"] = d.class_label;
    if (d.quad) {
        nlohmann::json q = nlohmann::json::array();
        for (std::size_t i = 0; i < 8; ++i) q.push_back((*d.quad)[i / 2][i % 2]);
        j["quad"] = q;
    }
    if (d.mask_rle) j["mask_rle"] = {{"size", {d.mask_rle->height, d.mask_rle->width}},
                                     {"counts", d.mask_rle->counts}};
    return j;
}

/// Writes one line per frame 1..n_frames, in order.
inline void write_detections(const DetectionSet& set, int n_frames, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    for (int f = 1; f <= n_frames; ++f) {
        nlohmann::json line;
        line["frame"] = f;
        line["detections"] = nlohmann::json::array();
        for (const auto& d : set.at(f)) line["detections"].push_back(detection_to_json(d));
        out << line.dump() << '\n';
    }
}

// -------------------------------------------------------------- results

inline constexpr std::string_view kResultsHeader =
    "frame,x1,y1,x2,y2,x3,y3,x4,y4,max_likelihood,dict_updated,detection_used";

struct ResultRow {
    int frame = 0;
    QuadBB quad;
    double max_likelihood = 0.0;
    bool dict_updated = false;
    bool detection_used = false;
};

inline ResultRow to_row(const tracker::FrameResult& r) {
    return {r.frame_index, r.chosen_quad, r.max_likelihood, r.dict_updated, r.detection_used};
}

inline void write_results(std::span<const tracker::FrameResult> results, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write results to " + path.string());
    out << kResultsHeader << '\n';
    for (const auto& r : results) {
        out << r.frame_index << ',' << format_quad(r.chosen_quad) << ','
            << detail::fixed4(r.max_likelihood) << ',' << (r.dict_updated ? 1 : 0) << ','
            << (r.detection_used ? 1 : 0) << '\n';
    }
    if (!out) throw DataError("write failed for " + path.string());
}

inline std::vector<ResultRow> read_results(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || detail::trim(line) != kResultsHeader)
        throw DataError(path.string() + " line 1: unexpected header");
    std::vector<ResultRow> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        const auto f = detail::split(detail::trim(line), ',');
        const std::string where = path.string() + " line " + std::to_string(lineno) + ": ";
        if (f.size() != 12) throw DataError(where + "expected 12 fields");
        ResultRow r;
        const auto frame = detail::parse_int(f[0]);
        if (!frame) throw DataError(where + "bad frame index");
        r.frame = static_cast<int>(*frame);
        for (std::size_t i = 0; i < 8; ++i) {
            const auto v = detail::parse_double(f[1 + i]);
            if (!v) throw DataError(where + "bad coordinate");
            r.quad[i / 2][i % 2] = *v;
        }
        const auto ml = detail::parse_double(f[9]);
        const auto du = detail::parse_int(f[10]);
        const auto dd = detail::parse_int(f[11]);
        if (!ml || !du || !dd || (*du != 0 && *du != 1) || (*dd != 0 && *dd != 1))
            throw DataError(where + "bad likelihood or flag");
        r.max_likelihood = *ml;
        r.dict_updated = *du == 1;
        r.detection_used = *dd == 1;
        rows.push_back(r);
    }
    return rows;
}

// --------------------------------------------------------------- config

/// Flat run configuration: tracker, solver and template keys.
using RunConfig = tracker::TrackerConfig;

inline const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = {
        "template_side", "n_templates", "n_particles", "lambda",    "mu",
        "alpha",         "max_apg_iters", "apg_tol",   "sigma_theta", "sigma_tx",
        "sigma_ty",      "sigma_s1",    "sigma_s2",    "sigma_sh1", "sigma_sh2",
        "sigma_a1",      "sigma_a2",    "sigma_a3",    "sigma_a4",  "mode",
        "dict_update",   "knn_k",       "slow_update_threshold",    "seed"};
    return keys;
}

inline tracker::Mode parse_mode(std::string_view v) {
    if (v == "l1apg") return tracker::Mode::l1apg;
    if (v == "l1dpf") return tracker::Mode::l1dpf;
    if (v == "l1dpf-m") return tracker::Mode::l1dpf_m;
    throw ConfigError("mode", "unknown value '" + std::string(v) +
                                  "', expected one of {l1apg, l1dpf, l1dpf-m}");
}

namespace detail {

/// Reads `key = value` lines with `#` comments into an ordered map; rejects
/// duplicates and malformed lines.
inline std::map<std::string, std::string> read_key_values(std::istream& in, const std::string& src) {
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        std::string_view body = trim(std::string_view(line).substr(0, hash));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError("", src + " line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key(trim(body.substr(0, eq)));
        const std::string value(trim(body.substr(eq + 1)));
        if (key.empty() || value.empty())
            throw ConfigError(key, src + " line " + std::to_string(lineno) + ": empty key or value");
        if (kv.count(key)) throw ConfigError(key, "given more than once");
        kv[key] = value;
    }
    return kv;
}

inline double as_double(const std::string& key, const std::string& v) {
    const auto d = parse_double(v);
    if (!d || !std::isfinite(*d)) throw ConfigError(key, "expected a number, got '" + v + "'");
    return *d;
}

inline long long as_int(const std::string& key, const std::string& v) {
    const auto i = parse_int(v);
    if (!i) throw ConfigError(key, "expected an integer, got '" + v + "'");
    return *i;
}

inline bool as_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "off" || v == "no") return false;
    throw ConfigError(key, "expected a boolean, got '" + v + "'");
}

}  // namespace detail

inline RunConfig parse_config(std::istream& in, const std::string& src = "config") {
    const auto kv = detail::read_key_values(in, src);
    RunConfig c;
    const auto& known = config_keys();
    for (const auto& [key, v] : kv) {
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ConfigError(key, "unknown configuration key");
        auto as_int_in = [&](long long lo, long long hi) {
            const long long i = detail::as_int(key, v);
            if (i < lo || i > hi) throw ConfigError(key, "value " + v + " out of range");
            return static_cast<int>(i);
        };
        if (key == "template_side") c.template_side = as_int_in(2, 1024);
        else if (key == "n_templates") c.n_templates = as_int_in(1, 1 << 20);
        else if (key == "n_particles") c.n_particles = as_int_in(1, 1 << 24);
        else if (key == "lambda") c.solver.lambda = detail::as_double(key, v);
        else if (key == "mu") c.solver.mu = detail::as_double(key, v);
        else if (key == "alpha") c.alpha = detail::as_double(key, v);
        else if (key == "max_apg_iters") c.solver.max_iters = as_int_in(1, 1 << 30);
        else if (key == "apg_tol") c.solver.tol = detail::as_double(key, v);
        else if (key == "sigma_theta") c.sigmas.theta = detail::as_double(key, v);
        else if (key == "sigma_tx") c.sigmas.tx = detail::as_double(key, v);
        else if (key == "sigma_ty") c.sigmas.ty = detail::as_double(key, v);
        else if (key == "sigma_s1") c.sigmas.s1 = detail::as_double(key, v);
        else if (key == "sigma_s2") c.sigmas.s2 = detail::as_double(key, v);
        else if (key == "sigma_sh1") c.sigmas.sh1 = detail::as_double(key, v);
        else if (key == "sigma_sh2") c.sigmas.sh2 = detail::as_double(key, v);
        else if (key == "sigma_a1") c.legacy_sigmas.a1 = detail::as_double(key, v);
        else if (key == "sigma_a2") c.legacy_sigmas.a2 = detail::as_double(key, v);
        else if (key == "sigma_a3") c.legacy_sigmas.a3 = detail::as_double(key, v);
        else if (key == "sigma_a4") c.legacy_sigmas.a4 = detail::as_double(key, v);
        else if (key == "mode") c.mode = parse_mode(v);
        else if (key == "dict_update") c.dict_update = detail::as_bool(key, v);
        else if (key == "knn_k") c.knn_k = as_int_in(1, 1 << 24);
        else if (key == "slow_update_threshold") c.slow_update_threshold = detail::as_double(key, v);
        else if (key == "seed") {
            const long long s = detail::as_int(key, v);
            if (s < 0) throw ConfigError(key, "must be >= 0");
            c.seed = static_cast<std::uint64_t>(s);
        }
    }
    c.validate();
    return c;
}

inline RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot open config file " + path.string());
    return parse_config(in, path.string());
}

/// Every key with its effective value, in canonical order.
inline std::string describe_config(const RunConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "template_side = " << c.template_side << '\n'
       << "n_templates = " << c.n_templates << '\n'
       << "n_particles = " << c.n_particles << '\n'
       << "lambda = " << c.solver.lambda << '\n'
       << "mu = " << c.solver.mu << '\n'
       << "alpha = " << c.alpha << '\n'
       << "max_apg_iters = " << c.solver.max_iters << '\n'
       << "apg_tol = " << c.solver.tol << '\n'
       << "sigma_theta = " << c.sigmas.theta << '\n'
       << "sigma_tx = " << c.sigmas.tx << '\n'
       << "sigma_ty = " << c.sigmas.ty << '\n'
       << "sigma_s1 = " << c.sigmas.s1 << '\n'
       << "sigma_s2 = " << c.sigmas.s2 << '\n'
       << "sigma_sh1 = " << c.sigmas.sh1 << '\n'
       << "sigma_sh2 = " << c.sigmas.sh2 << '\n'
       << "sigma_a1 = " << c.legacy_sigmas.a1 << '\n'
       << "sigma_a2 = " << c.legacy_sigmas.a2 << '\n'
       << "sigma_a3 = " << c.legacy_sigmas.a3 << '\n'
       << "sigma_a4 = " << c.legacy_sigmas.a4 << '\n'
       << "mode = " << tracker::to_string(c.mode) << '\n'
       << "dict_update = " << (c.dict_update ? "true" : "false") << '\n'
       << "knn_k = " << c.effective_knn_k() << '\n'
       << "slow_update_threshold = " << c.slow_update_threshold << '\n'
       << "seed = " << c.seed << '\n';
    return os.str();
}

}  // namespace l1dpf::dataio
