#pragma once

#include <optional>
#include <string>
#include <vector>

#include "l1dpf/geometry.hpp"
#include "l1dpf/imaging.hpp"

namespace l1dpf::dataio {

/// Uncompressed column-major RLE as stored in the detections file.
struct RleMask {
    int height = 0;
    int width = 0;
    std::vector<long long> counts;

    imaging::BinaryMask decode() const { return imaging::rle_decode(counts, height, width); }
};

/// One detector output for a frame. At least one of quad / mask is present.
struct Detection {
    double score = 0.0;
    std::string class_label;
    std::optional<geometry::QuadBB> quad;
    std::optional<RleMask> mask_rle;

    /// The explicit quad, or the ellipse-derived deformed box of the mask.
    geometry::QuadBB resolve_quad() const {
        if (quad) return *quad;
        if (!mask_rle) throw FormatError("detection has neither quad nor mask");
        return geometry::quad_from_ellipse(geometry::ellipse_from_mask(mask_rle->decode()));
    }
};

}  // namespace l1dpf::dataio
