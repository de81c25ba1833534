#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <optional>
#include <vector>

namespace wsod {

/// 2-D point in normalized image coordinates (x in width units, y in height
/// units). Offsets are also represented as Point2 and may be negative.
struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

inline Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
inline Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }

/// Axis-aligned box, normalized coordinates, x1 <= x2 and y1 <= y2.
/// Zero-area (degenerate) boxes are legal.
struct BBox {
    double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    bool valid() const { return x1 <= x2 && y1 <= y2; }
};

inline Point2 center(const BBox& b) {
    return {(b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0};
}

/// Intersection-over-union. Degenerate boxes contribute zero intersection;
/// a zero union yields 0.
inline double iou(const BBox& a, const BBox& b) {
    const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

struct ScoredBox {
    BBox box;
    double score = 0.0;
};

/// Greedy non-maximum suppression. Candidates are ranked by score descending
/// (ties broken by lower input index); the top box is kept and every
/// remaining box with IoU strictly above `iou_threshold` against it is
/// dropped. Output preserves the kept order.
inline std::vector<ScoredBox> nms(const std::vector<ScoredBox>& dets, double iou_threshold) {
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
        return dets[i].score > dets[j].score;
    });

    std::vector<ScoredBox> kept;
    std::vector<bool> suppressed(dets.size(), false);
    for (std::size_t oi = 0; oi < order.size(); ++oi) {
        const std::size_t i = order[oi];
        if (suppressed[i]) continue;
        kept.push_back(dets[i]);
        for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
            const std::size_t j = order[oj];
            if (!suppressed[j] && iou(dets[i].box, dets[j].box) > iou_threshold)
                suppressed[j] = true;
        }
    }
    return kept;
}

/// Drops proposals overlapping the person region with IoU > theta_h (no-op
/// when no person box is given), sorts the remainder by objectness
/// confidence descending (stable on ties) and keeps the top n_r.
///
/// Prop must expose `.box` (BBox) and `.confidence` (double). The result may
/// be empty; callers must handle that.
template <class Prop>
std::vector<Prop> filter_proposals(const std::vector<Prop>& props,
                                   const std::optional<BBox>& person,
                                   double theta_h, std::size_t n_r) {
    std::vector<Prop> out;
    out.reserve(props.size());
    for (const Prop& p : props) {
        if (person && iou(p.box, *person) > theta_h) continue;
        out.push_back(p);
    }
    std::stable_sort(out.begin(), out.end(), [](const Prop& a, const Prop& b) {
        return a.confidence > b.confidence;
    });
    if (out.size() > n_r) out.resize(n_r);
    return out;
}

} // namespace wsod
