#include "wsod/eval.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace wsod {

using ordered_json = nlohmann::ordered_json;

std::vector<Detection> sort_detections(std::vector<Detection> dets) {
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.sample_id < b.sample_id;
    });
    return dets;
}

std::vector<bool> match_detections(const std::vector<Detection>& sorted_dets,
                                   const ClassGt& gt, double iou_thresh) {
    std::map<std::string, std::size_t> sample_of;
    for (std::size_t s = 0; s < gt.sample_ids.size(); ++s)
        sample_of[gt.sample_ids[s]] = s;
    std::vector<std::vector<bool>> used(gt.boxes.size());
    for (std::size_t s = 0; s < gt.boxes.size(); ++s)
        used[s].assign(gt.boxes[s].size(), false);

    std::vector<bool> tp(sorted_dets.size(), false);
    for (std::size_t d = 0; d < sorted_dets.size(); ++d) {
        const auto it = sample_of.find(sorted_dets[d].sample_id);
        if (it == sample_of.end()) continue;
        const std::vector<BBox>& boxes = gt.boxes[it->second];
        double best = -1.0;
        std::size_t arg = 0;
        for (std::size_t g = 0; g < boxes.size(); ++g) {
            if (used[it->second][g]) continue;
            const double v = iou(sorted_dets[d].box, boxes[g]);
            if (v > best) {
                best = v;
                arg = g;
            }
        }
        if (best >= iou_thresh) {
            tp[d] = true;
            used[it->second][arg] = true;
        }
    }
    return tp;
}

double average_precision(const std::vector<bool>& tp_flags, int n_gt) {
    if (n_gt <= 0 || tp_flags.empty()) return 0.0;
    const std::size_t n = tp_flags.size();
    std::vector<double> recall(n), precision(n);
    int tp_cum = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (tp_flags[i]) ++tp_cum;
        recall[i] = static_cast<double>(tp_cum) / n_gt;
        precision[i] = static_cast<double>(tp_cum) / static_cast<double>(i + 1);
    }
    // Monotone precision envelope, integrated over recall increments.
    double ap = 0.0, env = 0.0, prev_recall = 0.0;
    std::vector<double> envelope(n);
    for (std::size_t i = n; i-- > 0;) {
        env = std::max(env, precision[i]);
        envelope[i] = env;
    }
    for (std::size_t i = 0; i < n; ++i) {
        ap += (recall[i] - prev_recall) * envelope[i];
        prev_recall = recall[i];
    }
    return ap;
}

double corloc(const std::vector<Detection>& sorted_dets, const ClassGt& gt,
              double iou_thresh) {
    if (gt.sample_ids.empty()) return -1.0;
    int correct = 0;
    for (std::size_t s = 0; s < gt.sample_ids.size(); ++s) {
        const Detection* top = nullptr;
        for (const Detection& d : sorted_dets)
            if (d.sample_id == gt.sample_ids[s]) {
                top = &d;
                break;
            }
        if (!top) continue;
        for (const BBox& g : gt.boxes[s])
            if (iou(top->box, g) > iou_thresh) {
                ++correct;
                break;
            }
    }
    return static_cast<double>(correct) / static_cast<double>(gt.sample_ids.size());
}

EvalReport evaluate(const Dataset& ds, const std::vector<Detection>& dets,
                    const EvalConfig& cfg) {
    const int n_o = ds.task.n_objects();
    std::vector<std::vector<Detection>> by_class(static_cast<std::size_t>(n_o));
    for (const Detection& d : dets) {
        if (d.object < 0 || d.object >= n_o)
            throw std::runtime_error("detection object id out of range: " +
                                     std::to_string(d.object));
        by_class[static_cast<std::size_t>(d.object)].push_back(d);
    }

    std::vector<ClassGt> gts(static_cast<std::size_t>(n_o));
    std::vector<int> n_gt(static_cast<std::size_t>(n_o), 0);
    for (const Sample& s : ds.samples) {
        std::map<int, std::vector<BBox>> here;
        for (const GtBox& g : s.gt_boxes) {
            here[g.object].push_back(g.box);
            ++n_gt[static_cast<std::size_t>(g.object)];
        }
        for (auto& [cls, boxes] : here) {
            gts[static_cast<std::size_t>(cls)].sample_ids.push_back(s.id);
            gts[static_cast<std::size_t>(cls)].boxes.push_back(std::move(boxes));
        }
    }

    EvalReport rep;
    rep.per_class_ap.assign(static_cast<std::size_t>(n_o), -1.0);
    rep.per_class_corloc.assign(static_cast<std::size_t>(n_o), -1.0);
    double ap_sum = 0.0, cl_sum = 0.0;
    int defined = 0;
    for (int c = 0; c < n_o; ++c) {
        const std::size_t ci = static_cast<std::size_t>(c);
        if (n_gt[ci] == 0) continue;
        const std::vector<Detection> sorted = sort_detections(by_class[ci]);
        rep.per_class_ap[ci] =
            average_precision(match_detections(sorted, gts[ci], cfg.ap_iou), n_gt[ci]);
        rep.per_class_corloc[ci] = corloc(sorted, gts[ci], cfg.corloc_iou);
        ap_sum += rep.per_class_ap[ci];
        cl_sum += rep.per_class_corloc[ci];
        ++defined;
    }
    if (defined > 0) {
        rep.map = ap_sum / defined;
        rep.corloc_mean = cl_sum / defined;
    }
    return rep;
}

std::string report_json(const EvalReport& report, const TaskSpec& task) {
    ordered_json j;
    ordered_json ap, cl;
    for (int c = 0; c < task.n_objects(); ++c) {
        const std::size_t ci = static_cast<std::size_t>(c);
        const std::string& name = task.objects[ci];
        if (report.per_class_ap[ci] < 0.0)
            ap[name] = nullptr;
        else
            ap[name] = report.per_class_ap[ci];
        if (report.per_class_corloc[ci] < 0.0)
            cl[name] = nullptr;
        else
            cl[name] = report.per_class_corloc[ci];
    }
    j["per_class_ap"] = std::move(ap);
    j["map"] = report.map;
    j["per_class_corloc"] = std::move(cl);
    j["corloc_mean"] = report.corloc_mean;
    return j.dump(1);
}

std::string serialize_detections(const std::vector<Detection>& dets) {
    ordered_json arr = ordered_json::array();
    for (const Detection& d : dets) {
        ordered_json jd;
        jd["sample_id"] = d.sample_id;
        jd["object"] = d.object;
        jd["box"] = ordered_json::array({d.box.x1, d.box.y1, d.box.x2, d.box.y2});
        jd["score"] = d.score;
        arr.push_back(std::move(jd));
    }
    return arr.dump(1);
}

std::vector<Detection> load_detections(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open detections: " + path);
    ordered_json arr;
    try {
        in >> arr;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed JSON in " + path + ": " + e.what());
    }
    if (!arr.is_array())
        throw std::runtime_error("detections file must hold a JSON array: " + path);
    std::vector<Detection> out;
    try {
        for (const auto& jd : arr) {
            Detection d;
            d.sample_id = jd.at("sample_id").get<std::string>();
            d.object = jd.at("object").get<int>();
            const auto& b = jd.at("box");
            if (!b.is_array() || b.size() != 4)
                throw std::runtime_error("box must be [x1,y1,x2,y2]");
            d.box = BBox{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                         b[3].get<double>()};
            d.score = jd.at("score").get<double>();
            out.push_back(std::move(d));
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("bad detection record in " + path + ": " + e.what());
    }
    return out;
}

void save_detections(const std::string& path, const std::vector<Detection>& dets) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << serialize_detections(dets) << "\n";
}

} // namespace wsod
