#pragma once

#include <string>
#include <vector>

#include "wsod/data.hpp"
#include "wsod/geometry.hpp"

namespace wsod {

struct Detection {
    std::string sample_id;
    int object = 0;
    BBox box;
    double score = 0.0;
};

/// Sorts detections of one class into evaluation order: score descending,
/// ties by lower sample id, remaining ties by input order.
std::vector<Detection> sort_detections(std::vector<Detection> dets);

/// Ground truth of one class, grouped by sample.
struct ClassGt {
    std::vector<std::string> sample_ids; // one entry per sample holding the class
    std::vector<std::vector<BBox>> boxes;
};

/// Greedy one-to-one matching in evaluation order: a detection is a true
/// positive when its best-IoU unmatched ground truth in the same sample
/// reaches iou_thresh; that ground truth is then consumed. Flags align with
/// the (sorted) input order.
std::vector<bool> match_detections(const std::vector<Detection>& sorted_dets,
                                   const ClassGt& gt, double iou_thresh = 0.5);

/// Exact all-point average precision of an ordered TP/FP sequence: area
/// under the precision-recall step curve with the monotone precision
/// envelope. n_gt = 0 yields 0 (callers exclude such classes from means).
double average_precision(const std::vector<bool>& tp_flags, int n_gt);

/// Fraction of the class's samples whose top-scored detection overlaps a
/// ground truth strictly above iou_thresh. Samples without a detection
/// count as misses. Undefined (returns -1) when the class has no samples.
double corloc(const std::vector<Detection>& sorted_dets, const ClassGt& gt,
              double iou_thresh = 0.5);

struct EvalConfig {
    double ap_iou = 0.5;     // matching uses IoU >= ap_iou
    double corloc_iou = 0.5; // correctness uses IoU > corloc_iou
};

/// Per-class metrics. Classes with no ground truth are undefined and
/// excluded from the means (ap/corloc hold -1 there).
struct EvalReport {
    std::vector<double> per_class_ap;
    std::vector<double> per_class_corloc;
    double map = 0.0;
    double corloc_mean = 0.0;
};

EvalReport evaluate(const Dataset& ds, const std::vector<Detection>& dets,
                    const EvalConfig& cfg = {});

/// Deterministic JSON rendering keyed by object class names; undefined
/// classes serialize as null.
std::string report_json(const EvalReport& report, const TaskSpec& task);

std::string serialize_detections(const std::vector<Detection>& dets);
std::vector<Detection> load_detections(const std::string& path);
void save_detections(const std::string& path, const std::vector<Detection>& dets);

} // namespace wsod
