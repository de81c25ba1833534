#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <vector>

#include "wsod/geometry.hpp"
#include "wsod/rng.hpp"

using namespace wsod;

namespace {

// Direct O(n^2) restatement of greedy NMS, kept independent of the
// library's bookkeeping: walk candidates in rank order, keep each one that
// no previously kept box suppresses.
std::vector<ScoredBox> nms_oracle(const std::vector<ScoredBox>& dets, double thr) {
    std::vector<std::size_t> order(dets.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
        return dets[i].score > dets[j].score;
    });
    std::vector<ScoredBox> kept;
    for (std::size_t i : order) {
        bool dead = false;
        for (const ScoredBox& k : kept)
            if (iou(k.box, dets[i].box) > thr) dead = true;
        if (!dead) kept.push_back(dets[i]);
    }
    return kept;
}

BBox random_box(Rng& rng) {
    const double x = rng.uniform(0.0, 0.8);
    const double y = rng.uniform(0.0, 0.8);
    return BBox{x, y, x + rng.uniform(0.01, 0.3), y + rng.uniform(0.01, 0.3)};
}

} // namespace

TEST_CASE("iou basic values") {
    const BBox a{0, 0, 2, 2};
    CHECK(iou(a, a) == doctest::Approx(1.0));
    CHECK(iou(a, BBox{3, 3, 4, 4}) == 0.0);
    // Overlap 1x1 against areas 4 + 4: 1 / 7.
    CHECK(iou(a, BBox{1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0));
    // Shared edge only: zero-width intersection.
    CHECK(iou(a, BBox{2, 0, 4, 2}) == 0.0);
}

TEST_CASE("iou degenerate boxes") {
    const BBox pt{1, 1, 1, 1};
    CHECK(iou(pt, pt) == 0.0);
    CHECK(iou(pt, BBox{0, 0, 2, 2}) == 0.0);
}

TEST_CASE("iou symmetry and range") {
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const BBox a = random_box(rng), b = random_box(rng);
        const double v = iou(a, b);
        CHECK(v == iou(b, a));
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("bbox accessors") {
    const BBox b{0.25, 0.5, 0.75, 1.0};
    CHECK(b.width() == doctest::Approx(0.5));
    CHECK(b.height() == doctest::Approx(0.5));
    CHECK(b.area() == doctest::Approx(0.25));
    CHECK(b.valid());
    CHECK_FALSE(BBox{1, 0, 0, 1}.valid());
    const Point2 c = center(b);
    CHECK(c.x == doctest::Approx(0.5));
    CHECK(c.y == doctest::Approx(0.75));
}

TEST_CASE("nms keeps the top box and drops overlaps") {
    std::vector<ScoredBox> dets = {
        {{0.0, 0.0, 1.0, 1.0}, 0.9},
        {{0.05, 0.0, 1.05, 1.0}, 0.8}, // heavy overlap with the first
        {{2.0, 2.0, 3.0, 3.0}, 0.7},
    };
    const auto kept = nms(dets, 0.5);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].score == 0.9);
    CHECK(kept[1].score == 0.7);
}

TEST_CASE("nms threshold is strict") {
    // IoU exactly at the threshold is not suppressed.
    std::vector<ScoredBox> dets = {
        {{0.0, 0.0, 1.0, 1.0}, 0.9},
        {{0.0, 0.0, 0.5, 1.0}, 0.8}, // IoU exactly 0.5
    };
    CHECK(nms(dets, 0.5).size() == 2);
    CHECK(nms(dets, 0.49).size() == 1);
}

TEST_CASE("nms ties break toward the earlier input") {
    std::vector<ScoredBox> dets = {
        {{0.0, 0.0, 1.0, 1.0}, 0.5},
        {{0.0, 0.0, 1.0, 1.0}, 0.5},
    };
    const auto kept = nms(dets, 0.3);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].box.x2 == 1.0);
}

TEST_CASE("nms matches the brute-force oracle on 1000 random cases") {
    Rng rng(12345);
    for (int c = 0; c < 1000; ++c) {
        const int n = 1 + static_cast<int>(rng.uniform_int(12));
        std::vector<ScoredBox> dets;
        for (int i = 0; i < n; ++i) dets.push_back({random_box(rng), rng.uniform()});
        const double thr = rng.uniform(0.1, 0.7);
        const auto got = nms(dets, thr);
        const auto want = nms_oracle(dets, thr);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].score == want[i].score);
            CHECK(got[i].box.x1 == want[i].box.x1);
            CHECK(got[i].box.y1 == want[i].box.y1);
            CHECK(got[i].box.x2 == want[i].box.x2);
            CHECK(got[i].box.y2 == want[i].box.y2);
        }
    }
}

namespace {
struct MiniProp {
    BBox box;
    double confidence = 0.0;
    int tag = 0;
};
} // namespace

TEST_CASE("filter_proposals drops person overlaps and keeps top n_r") {
    const BBox person{0.0, 0.0, 0.5, 0.5};
    std::vector<MiniProp> props = {
        {{0.0, 0.0, 0.5, 0.5}, 0.9, 0},   // IoU 1 with person, dropped
        {{0.6, 0.6, 0.8, 0.8}, 0.4, 1},
        {{0.6, 0.0, 0.9, 0.3}, 0.8, 2},
        {{0.0, 0.6, 0.3, 0.9}, 0.6, 3},
    };
    const auto out = filter_proposals(props, std::optional<BBox>(person), 0.5, 2);
    REQUIRE(out.size() == 2);
    CHECK(out[0].tag == 2); // sorted by confidence descending
    CHECK(out[1].tag == 3);
}

TEST_CASE("filter_proposals without person box keeps everything") {
    std::vector<MiniProp> props = {
        {{0.0, 0.0, 0.5, 0.5}, 0.1, 0},
        {{0.1, 0.1, 0.6, 0.6}, 0.2, 1},
    };
    const auto out = filter_proposals(props, std::optional<BBox>{}, 0.5, 10);
    REQUIRE(out.size() == 2);
    CHECK(out[0].tag == 1);
}

TEST_CASE("filter_proposals is stable on confidence ties") {
    std::vector<MiniProp> props = {
        {{0.0, 0.0, 0.1, 0.1}, 0.5, 0},
        {{0.2, 0.2, 0.3, 0.3}, 0.5, 1},
        {{0.4, 0.4, 0.5, 0.5}, 0.5, 2},
    };
    const auto out = filter_proposals(props, std::optional<BBox>{}, 0.5, 3);
    REQUIRE(out.size() == 3);
    CHECK(out[0].tag == 0);
    CHECK(out[1].tag == 1);
    CHECK(out[2].tag == 2);
}

TEST_CASE("filter_proposals may empty out") {
    const BBox person{0, 0, 1, 1};
    std::vector<MiniProp> props = {{{0.0, 0.0, 1.0, 1.0}, 0.9, 0}};
    CHECK(filter_proposals(props, std::optional<BBox>(person), 0.5, 4).empty());
}
