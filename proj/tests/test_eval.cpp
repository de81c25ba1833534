#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <map>
#include <string>

#include "wsod/eval.hpp"
#include "wsod/rng.hpp"

using namespace wsod;

namespace {

Detection det(const std::string& id, double score, BBox box, int object = 0) {
    return Detection{id, object, box, score};
}

// Independent greedy matcher over per-sample ground-truth pools.
std::vector<bool> oracle_match(const std::vector<Detection>& sorted_dets,
                               const ClassGt& gt, double thresh) {
    std::map<std::string, std::vector<std::pair<BBox, bool>>> pool;
    for (std::size_t s = 0; s < gt.sample_ids.size(); ++s)
        for (const BBox& b : gt.boxes[s]) pool[gt.sample_ids[s]].push_back({b, false});

    std::vector<bool> flags;
    for (const Detection& d : sorted_dets) {
        bool matched = false;
        auto it = pool.find(d.sample_id);
        if (it != pool.end()) {
            double best = -1.0;
            std::pair<BBox, bool>* arg = nullptr;
            for (auto& entry : it->second) {
                if (entry.second) continue;
                const double v = iou(d.box, entry.first);
                if (v > best) {
                    best = v;
                    arg = &entry;
                }
            }
            if (arg && best >= thresh) {
                arg->second = true;
                matched = true;
            }
        }
        flags.push_back(matched);
    }
    return flags;
}

BBox random_box(Rng& rng) {
    const double x = rng.uniform(0.0, 0.7);
    const double y = rng.uniform(0.0, 0.7);
    return {x, y, x + rng.uniform(0.05, 0.3), y + rng.uniform(0.05, 0.3)};
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

// Two-class dataset: class 0 has ground truth in s0 and s1, class 1 only
// in s0, class 2 appears nowhere.
Dataset eval_dataset() {
    Dataset ds;
    ds.task.actions = {"a"};
    ds.task.objects = {"cup", "bowl", "ghost"};
    ds.task.action_to_object = {0};
    ds.task.num_keypoints = 1;
    ds.task.feature_dim = 1;
    Sample s0, s1;
    s0.id = "s0";
    s0.action_labels = {0};
    s0.frames.emplace_back();
    s0.gt_boxes.push_back({0, {0.1, 0.1, 0.3, 0.3}});
    s0.gt_boxes.push_back({1, {0.5, 0.5, 0.7, 0.7}});
    s1.id = "s1";
    s1.action_labels = {0};
    s1.frames.emplace_back();
    s1.gt_boxes.push_back({0, {0.2, 0.2, 0.4, 0.4}});
    ds.samples = {s0, s1};
    return ds;
}

} // namespace

TEST_CASE("average precision fixtures") {
    CHECK(average_precision({true}, 1) == doctest::Approx(1.0).epsilon(1e-12));
    // PR points: (0.5, 1), (0.5, 1/2), (1.0, 2/3); envelope gives
    // 0.5*1 + 0.5*(2/3) = 5/6.
    CHECK(average_precision({true, false, true}, 2) ==
          doctest::Approx(5.0 / 6.0).epsilon(1e-12));
    CHECK(average_precision({false, false}, 3) == 0.0);
    CHECK(average_precision({}, 2) == 0.0);
    CHECK(average_precision({true, true}, 0) == 0.0);
    // Envelope carries later precision peaks backward.
    CHECK(average_precision({false, true}, 1) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(average_precision({true, false, false, true}, 2) ==
          doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("ap stays within [0,1] and is monotone-rescaling invariant") {
    Rng rng(41);
    for (int trial = 0; trial < 100; ++trial) {
        ClassGt gt;
        gt.sample_ids = {"s0", "s1"};
        gt.boxes = {{random_box(rng), random_box(rng)}, {random_box(rng)}};
        std::vector<Detection> dets;
        const int n = 1 + static_cast<int>(rng.uniform_int(8));
        for (int i = 0; i < n; ++i)
            dets.push_back(det(rng.uniform() < 0.5 ? "s0" : "s1",
                               rng.uniform(0.0, 1.0), random_box(rng)));
        const std::vector<Detection> sorted = sort_detections(dets);
        const double ap = average_precision(match_detections(sorted, gt), 3);
        CHECK(ap >= 0.0);
        CHECK(ap <= 1.0);

        std::vector<Detection> rescaled = dets;
        for (Detection& d : rescaled) d.score = 3.0 * d.score + 11.0;
        const std::vector<Detection> rs = sort_detections(rescaled);
        CHECK(average_precision(match_detections(rs, gt), 3) ==
              doctest::Approx(ap).epsilon(1e-12));
    }
}

TEST_CASE("detections sort by score, then sample id, then input order") {
    std::vector<Detection> dets = {
        det("s2", 0.5, {0, 0, 1, 1}),
        det("s1", 0.9, {0, 0, 1, 1}),
        det("s1", 0.5, {0.5, 0, 1, 1}),
        det("s1", 0.5, {0.25, 0, 1, 1}),
    };
    const std::vector<Detection> s = sort_detections(dets);
    CHECK(s[0].score == 0.9);
    CHECK(s[1].sample_id == "s1"); // ties: lower sample id first
    CHECK(s[1].box.x1 == 0.5);     // equal id ties keep input order
    CHECK(s[2].box.x1 == 0.25);
    CHECK(s[3].sample_id == "s2");
}

TEST_CASE("matching fixtures") {
    ClassGt gt;
    gt.sample_ids = {"s0"};
    gt.boxes = {{{0.0, 0.0, 0.5, 0.5}}};

    // Exact hit.
    auto flags = match_detections({det("s0", 0.9, {0.0, 0.0, 0.5, 0.5})}, gt);
    CHECK(flags == std::vector<bool>{true});

    // One-to-one: the second detection on the same GT is a false positive.
    flags = match_detections({det("s0", 0.9, {0.0, 0.0, 0.5, 0.5}),
                              det("s0", 0.5, {0.0, 0.0, 0.5, 0.5})},
                             gt);
    CHECK(flags == std::vector<bool>{true, false});

    // IoU 0.49 misses, 0.5 exactly matches.
    flags = match_detections({det("s0", 0.9, {0.0, 0.0, 0.245, 0.5})}, gt);
    CHECK(flags == std::vector<bool>{false});
    flags = match_detections({det("s0", 0.9, {0.0, 0.0, 0.25, 0.5})}, gt);
    CHECK(flags == std::vector<bool>{true});

    // Detections in samples without this class never match.
    flags = match_detections({det("other", 0.9, {0.0, 0.0, 0.5, 0.5})}, gt);
    CHECK(flags == std::vector<bool>{false});
}

TEST_CASE("matching equals an independent greedy oracle") {
    Rng rng(42);
    for (int trial = 0; trial < 300; ++trial) {
        ClassGt gt;
        const int ns = 1 + static_cast<int>(rng.uniform_int(3));
        for (int s = 0; s < ns; ++s) {
            gt.sample_ids.push_back("s" + std::to_string(s));
            std::vector<BBox> boxes;
            const int ng = 1 + static_cast<int>(rng.uniform_int(3));
            for (int g = 0; g < ng; ++g) boxes.push_back(random_box(rng));
            gt.boxes.push_back(boxes);
        }
        std::vector<Detection> dets;
        const int nd = static_cast<int>(rng.uniform_int(10));
        for (int i = 0; i < nd; ++i)
            dets.push_back(det("s" + std::to_string(rng.uniform_int(4)),
                               rng.uniform(0.0, 1.0), random_box(rng)));
        const std::vector<Detection> sorted = sort_detections(dets);
        CHECK(match_detections(sorted, gt) == oracle_match(sorted, gt, 0.5));
    }
}

TEST_CASE("corloc fixtures") {
    ClassGt gt;
    gt.sample_ids = {"s0", "s1"};
    gt.boxes = {{{0.0, 0.0, 0.4, 0.4}}, {{0.5, 0.5, 0.9, 0.9}}};

    // Correct in s0, wrong in s1 -> exactly one half.
    double v = corloc({det("s0", 0.9, {0.0, 0.0, 0.4, 0.4}),
                       det("s1", 0.8, {0.0, 0.5, 0.2, 0.7})},
                      gt);
    CHECK(v == 0.5);

    // Correct in both.
    v = corloc({det("s0", 0.9, {0.0, 0.0, 0.4, 0.4}),
                det("s1", 0.8, {0.5, 0.5, 0.9, 0.9})},
               gt);
    CHECK(v == 1.0);

    // A qualifying sample with no detection counts as a miss.
    v = corloc({det("s0", 0.9, {0.0, 0.0, 0.4, 0.4})}, gt);
    CHECK(v == 0.5);

    // Only the top-scored detection of a sample counts.
    v = corloc({det("s1", 0.9, {0.0, 0.5, 0.2, 0.7}),
                det("s1", 0.5, {0.5, 0.5, 0.9, 0.9})},
               gt);
    CHECK(v == 0.0);

    // IoU exactly at the threshold is not strict overlap.
    v = corloc({det("s0", 0.9, {0.0, 0.0, 0.2, 0.4})}, gt);
    CHECK(v == 0.0);

    // No qualifying samples -> undefined.
    CHECK(corloc({}, ClassGt{}) == -1.0);
}

TEST_CASE("evaluate reports per-class metrics and skips empty classes") {
    const Dataset ds = eval_dataset();
    const std::vector<Detection> dets = {
        det("s0", 0.9, {0.1, 0.1, 0.3, 0.3}, 0),  // hit on class 0
        det("s1", 0.8, {0.6, 0.6, 0.9, 0.9}, 0),  // miss
        det("s0", 0.7, {0.5, 0.5, 0.7, 0.7}, 1),  // hit on class 1
    };
    const EvalReport rep = evaluate(ds, dets);
    REQUIRE(rep.per_class_ap.size() == 3);
    CHECK(rep.per_class_ap[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(rep.per_class_ap[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rep.per_class_ap[2] == -1.0); // no ground truth anywhere
    CHECK(rep.per_class_corloc[2] == -1.0);
    CHECK(rep.map ==
          doctest::Approx((rep.per_class_ap[0] + rep.per_class_ap[1]) / 2.0)
              .epsilon(1e-12));
    CHECK(rep.corloc_mean ==
          doctest::Approx((rep.per_class_corloc[0] + rep.per_class_corloc[1]) / 2.0)
              .epsilon(1e-12));

    const EvalReport empty = evaluate(ds, {});
    CHECK(empty.per_class_ap[0] == 0.0);
    CHECK(empty.map == 0.0);

    CHECK_THROWS(evaluate(ds, {det("s0", 0.9, {0, 0, 1, 1}, 7)}));
}

TEST_CASE("report json names classes and nulls undefined ones") {
    const Dataset ds = eval_dataset();
    const EvalReport rep = evaluate(ds, {det("s0", 0.9, {0.1, 0.1, 0.3, 0.3}, 0)});
    const std::string j = report_json(rep, ds.task);
    CHECK(j.find("\"per_class_ap\"") != std::string::npos);
    CHECK(j.find("\"map\"") != std::string::npos);
    CHECK(j.find("\"per_class_corloc\"") != std::string::npos);
    CHECK(j.find("\"corloc_mean\"") != std::string::npos);
    CHECK(j.find("\"cup\"") != std::string::npos);
    CHECK(j.find("\"ghost\": null") != std::string::npos);
    CHECK(report_json(rep, ds.task) == j); // deterministic rendering
}

TEST_CASE("detections round trip through disk") {
    const std::vector<Detection> dets = {
        det("s0", 0.912345678901234, {0.1, 0.2, 0.3, 0.4}, 1),
        det("s1", 0.25, {0.0, 0.0, 1.0, 1.0}, 0),
    };
    const std::string path = temp_path("wsod_dets.json");
    save_detections(path, dets);
    const std::vector<Detection> back = load_detections(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].sample_id == "s0");
    CHECK(back[0].object == 1);
    CHECK(back[0].score == dets[0].score);
    CHECK(back[0].box.x2 == dets[0].box.x2);
    CHECK(serialize_detections(back) == serialize_detections(dets));
    std::remove(path.c_str());

    CHECK_THROWS(load_detections("/nonexistent/dets.json"));
}
