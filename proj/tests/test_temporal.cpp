#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "wsod/rng.hpp"
#include "wsod/temporal.hpp"

using namespace wsod;

namespace {

// Exhaustive reference: repeatedly enumerate every index combination over
// the still-available proposals, take the best-scoring path, remove it.
// Random continuous confidences keep ties measure-zero, so the tie rules
// of the two searches never diverge on these instances.
std::vector<Tubelet> brute_tubelets(const std::vector<std::vector<ScoredBox>>& frames,
                                    double lambda, int k) {
    const std::size_t T = frames.size();
    std::vector<std::vector<int>> alive(T);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < frames[t].size(); ++j)
            alive[t].push_back(static_cast<int>(j));

    std::vector<Tubelet> out;
    while (static_cast<int>(out.size()) < k) {
        bool exhausted = false;
        for (const auto& a : alive) exhausted = exhausted || a.empty();
        if (exhausted) break;

        std::vector<std::size_t> combo(T, 0), best_combo;
        double best = -1e300;
        while (true) {
            double s = 0.0;
            for (std::size_t t = 0; t < T; ++t) {
                const ScoredBox& cur = frames[t][static_cast<std::size_t>(alive[t][combo[t]])];
                s += cur.score;
                if (t > 0) {
                    const ScoredBox& prev =
                        frames[t - 1][static_cast<std::size_t>(alive[t - 1][combo[t - 1]])];
                    s += lambda * iou(prev.box, cur.box);
                }
            }
            if (s > best) {
                best = s;
                best_combo = combo;
            }
            std::size_t t = 0;
            while (t < T && ++combo[t] == alive[t].size()) combo[t++] = 0;
            if (t == T) break;
        }

        Tubelet tub;
        tub.link_score = best;
        for (std::size_t t = 0; t < T; ++t)
            tub.proposal_indices.push_back(alive[t][best_combo[t]]);
        for (std::size_t t = T; t > 0; --t)
            alive[t - 1].erase(alive[t - 1].begin() +
                               static_cast<std::ptrdiff_t>(best_combo[t - 1]));
        out.push_back(std::move(tub));
    }
    return out;
}

std::vector<std::vector<ScoredBox>> random_frames(Rng& rng, int max_frames,
                                                  int max_props) {
    const int T = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(max_frames)));
    std::vector<std::vector<ScoredBox>> frames(static_cast<std::size_t>(T));
    for (auto& f : frames) {
        const int n = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(max_props)));
        for (int j = 0; j < n; ++j) {
            const double x = rng.uniform(0.0, 0.8);
            const double y = rng.uniform(0.0, 0.8);
            f.push_back({{x, y, x + rng.uniform(0.05, 0.2), y + rng.uniform(0.05, 0.2)},
                         rng.uniform(0.0, 1.0)});
        }
    }
    return frames;
}

Proposal make_proposal(BBox box, double conf, double feat0) {
    Proposal p;
    p.box = box;
    p.confidence = conf;
    p.feature = Eigen::Vector2d(feat0, 1.0);
    return p;
}

} // namespace

TEST_CASE("frame sampling follows floor(i*T/n)") {
    CHECK(sample_frames(16, 8) == std::vector<int>{0, 2, 4, 6, 8, 10, 12, 14});
    CHECK(sample_frames(8, 8) == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
    CHECK(sample_frames(3, 4) == std::vector<int>{0, 0, 1, 2});
    CHECK(sample_frames(1, 3) == std::vector<int>{0, 0, 0});
    CHECK(sample_frames(5, 1) == std::vector<int>{0});
    CHECK_THROWS(sample_frames(0, 4));
    CHECK_THROWS(sample_frames(4, 0));
}

TEST_CASE("two-frame linking prefers overlap over a higher lone confidence") {
    const BBox X{0.1, 0.1, 0.3, 0.3};
    const std::vector<std::vector<ScoredBox>> frames = {
        {{X, 0.9}, {{0.6, 0.6, 0.8, 0.8}, 0.5}},           // A, B
        {{X, 0.4}, {{0.4, 0.1, 0.6, 0.3}, 0.8}},           // C (at X), D (disjoint)
    };
    const std::vector<Tubelet> tubs = link_tubelets(frames, 1.0, 2);
    REQUIRE(tubs.size() == 2);
    // A -> C scores 0.9 + 0.4 + 1.0 = 2.3, beating A -> D at 1.7.
    CHECK(tubs[0].proposal_indices == std::vector<int>{0, 0});
    CHECK(tubs[0].link_score == doctest::Approx(2.3));
    // The leftovers B -> D follow.
    CHECK(tubs[1].proposal_indices == std::vector<int>{1, 1});
    CHECK(tubs[1].link_score == doctest::Approx(1.3));
}

TEST_CASE("single frame yields top-k length-1 tubelets") {
    const std::vector<std::vector<ScoredBox>> frames = {
        {{{0.0, 0.0, 0.1, 0.1}, 0.2},
         {{0.2, 0.2, 0.3, 0.3}, 0.9},
         {{0.4, 0.4, 0.5, 0.5}, 0.6}},
    };
    const std::vector<Tubelet> tubs = link_tubelets(frames, 1.0, 2);
    REQUIRE(tubs.size() == 2);
    CHECK(tubs[0].proposal_indices == std::vector<int>{1});
    CHECK(tubs[0].link_score == doctest::Approx(0.9));
    CHECK(tubs[1].proposal_indices == std::vector<int>{2});
}

TEST_CASE("zero lambda reduces to per-frame confidence argmax") {
    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        const auto frames = random_frames(rng, 4, 5);
        const auto tubs = link_tubelets(frames, 0.0, 1);
        REQUIRE(tubs.size() == 1);
        for (std::size_t t = 0; t < frames.size(); ++t) {
            int am = 0;
            for (std::size_t j = 1; j < frames[t].size(); ++j)
                if (frames[t][j].score > frames[t][static_cast<std::size_t>(am)].score)
                    am = static_cast<int>(j);
            CHECK(tubs[0].proposal_indices[t] == am);
        }
    }
}

TEST_CASE("dynamic program matches exhaustive search on random instances") {
    Rng rng(32);
    for (int trial = 0; trial < 500; ++trial) {
        const auto frames = random_frames(rng, 4, 5);
        const double lambda = rng.uniform(0.0, 2.0);
        const int k = 1 + static_cast<int>(rng.uniform_int(4));
        const auto got = link_tubelets(frames, lambda, k);
        const auto want = brute_tubelets(frames, lambda, k);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].proposal_indices == want[i].proposal_indices);
            CHECK(got[i].link_score == doctest::Approx(want[i].link_score).epsilon(1e-9));
        }
    }
}

TEST_CASE("extracted tubelets never reuse a proposal") {
    Rng rng(33);
    for (int trial = 0; trial < 100; ++trial) {
        const auto frames = random_frames(rng, 4, 5);
        const auto tubs = link_tubelets(frames, 1.0, 5);
        for (std::size_t t = 0; t < frames.size(); ++t) {
            std::set<int> used;
            for (const Tubelet& tub : tubs)
                CHECK(used.insert(tub.proposal_indices[t]).second);
        }
    }
}

TEST_CASE("scaling confidences and lambda together keeps the paths") {
    Rng rng(34);
    for (int trial = 0; trial < 50; ++trial) {
        const auto frames = random_frames(rng, 4, 4);
        const double c = rng.uniform(0.5, 4.0);
        auto scaled = frames;
        for (auto& f : scaled)
            for (auto& p : f) p.score *= c;
        const auto base = link_tubelets(frames, 0.7, 3);
        const auto same = link_tubelets(scaled, 0.7 * c, 3);
        REQUIRE(base.size() == same.size());
        for (std::size_t i = 0; i < base.size(); ++i) {
            CHECK(base[i].proposal_indices == same[i].proposal_indices);
            CHECK(same[i].link_score ==
                  doctest::Approx(c * base[i].link_score).epsilon(1e-9));
        }
    }
}

TEST_CASE("pool_scores averages rows") {
    Mat one(1, 3);
    one << 0.1, 0.5, -0.2;
    CHECK(pool_scores(one).isApprox(Eigen::Vector3d(0.1, 0.5, -0.2)));

    Mat two(2, 1);
    two << 0.0, 1.0;
    CHECK(pool_scores(two)(0) == doctest::Approx(0.5));

    Mat constant = Mat::Constant(4, 2, 0.7);
    CHECK(pool_scores(constant).isApprox(Eigen::Vector2d(0.7, 0.7)));

    Mat perm(3, 2);
    perm << 1, 4, 2, 5, 3, 6;
    Mat shuffled(3, 2);
    shuffled << 3, 6, 1, 4, 2, 5;
    CHECK(pool_scores(perm).isApprox(pool_scores(shuffled)));

    CHECK_THROWS(pool_scores(Mat(0, 2)));
}

TEST_CASE("tubelet units take the first-frame box and mean person feature") {
    Frame f1, f2;
    const BBox X{0.1, 0.1, 0.3, 0.3};
    f1.proposals = {make_proposal(X, 0.9, 1.0),
                    make_proposal({0.6, 0.6, 0.8, 0.8}, 0.5, 2.0)};
    f1.person_feature = Eigen::Vector2d(1.0, 3.0);
    f2.proposals = {make_proposal(X, 0.4, 3.0),
                    make_proposal({0.4, 0.1, 0.6, 0.3}, 0.8, 4.0)};
    f2.person_feature = Eigen::Vector2d(3.0, 5.0);

    const UnitInputs u = tubelet_units({&f1, &f2}, 0.5, 16, 1.0, 16);
    REQUIRE(u.m == 2);
    REQUIRE(u.features.size() == 2);
    // First tubelet is A -> C (the two-frame fixture above).
    CHECK(u.boxes[0].x1 == X.x1);
    CHECK(u.features[0](0, 0) == 1.0); // frame-1 feature of tubelet 0
    CHECK(u.features[1](0, 0) == 3.0); // frame-2 feature of tubelet 0
    CHECK(u.centers[1][0].x == doctest::Approx(0.2));
    REQUIRE(u.person_feature.has_value());
    CHECK((*u.person_feature)(0) == doctest::Approx(2.0));
    CHECK((*u.person_feature)(1) == doctest::Approx(4.0));
}

TEST_CASE("a frame emptied by person filtering yields zero units") {
    Frame f1, f2;
    f1.proposals = {make_proposal({0.1, 0.1, 0.3, 0.3}, 0.9, 1.0)};
    // The only frame-2 proposal overlaps the person box above theta_h.
    f2.proposals = {make_proposal({0.4, 0.4, 0.5, 0.52}, 0.8, 2.0)};
    f2.person_box = BBox{0.4, 0.4, 0.5, 0.5};
    const UnitInputs u = tubelet_units({&f1, &f2}, 0.5, 16, 1.0, 16);
    CHECK(u.m == 0);
    CHECK(u.features.empty());
    CHECK_FALSE(u.person_feature.has_value());
}

TEST_CASE("tubelet count respects k") {
    Frame f;
    for (int j = 0; j < 6; ++j) {
        const double x = 0.15 * j;
        f.proposals.push_back(make_proposal({x, 0.0, x + 0.1, 0.1}, 0.1 * (j + 1), j));
    }
    const UnitInputs u = tubelet_units({&f}, 0.5, 16, 1.0, 4);
    CHECK(u.m == 4);
}
