#include "wsod/temporal.hpp"

#include <limits>
#include <stdexcept>

namespace wsod {

std::vector<int> sample_frames(int clip_len, int n) {
    if (clip_len < 1 || n < 1)
        throw std::invalid_argument("sample_frames: counts must be >= 1");
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        idx[static_cast<std::size_t>(i)] =
            static_cast<int>((static_cast<long long>(i) * clip_len) / n);
    return idx;
}

std::vector<Tubelet> link_tubelets(const std::vector<std::vector<ScoredBox>>& frames,
                                   double lambda, int k) {
    const std::size_t T = frames.size();
    if (T == 0 || k < 1) return {};
    for (const auto& f : frames)
        if (f.empty()) throw std::invalid_argument("link_tubelets: empty frame");

    // alive[t] holds the original indices still available in frame t.
    std::vector<std::vector<int>> alive(T);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < frames[t].size(); ++j)
            alive[t].push_back(static_cast<int>(j));

    std::vector<Tubelet> out;
    while (static_cast<int>(out.size()) < k) {
        bool exhausted = false;
        for (const auto& a : alive)
            if (a.empty()) exhausted = true;
        if (exhausted) break;

        // best[t][j]: best path score ending at alive[t][j]; back[t][j]:
        // the alive-position of its predecessor in frame t-1.
        std::vector<std::vector<double>> best(T);
        std::vector<std::vector<int>> back(T);
        for (std::size_t j = 0; j < alive[0].size(); ++j)
            best[0].push_back(frames[0][static_cast<std::size_t>(alive[0][j])].score);
        for (std::size_t t = 1; t < T; ++t) {
            best[t].resize(alive[t].size());
            back[t].resize(alive[t].size());
            for (std::size_t j = 0; j < alive[t].size(); ++j) {
                const ScoredBox& cur = frames[t][static_cast<std::size_t>(alive[t][j])];
                double top = -std::numeric_limits<double>::infinity();
                int arg = 0;
                for (std::size_t i = 0; i < alive[t - 1].size(); ++i) {
                    const ScoredBox& prev =
                        frames[t - 1][static_cast<std::size_t>(alive[t - 1][i])];
                    const double v = best[t - 1][i] + lambda * iou(prev.box, cur.box);
                    if (v > top) {
                        top = v;
                        arg = static_cast<int>(i);
                    }
                }
                best[t][j] = top + cur.score;
                back[t][j] = arg;
            }
        }

        std::size_t end = 0;
        for (std::size_t j = 1; j < best[T - 1].size(); ++j)
            if (best[T - 1][j] > best[T - 1][end]) end = j;

        Tubelet tub;
        tub.link_score = best[T - 1][end];
        std::vector<std::size_t> path(T);
        path[T - 1] = end;
        for (std::size_t t = T - 1; t > 0; --t)
            path[t - 1] = static_cast<std::size_t>(back[t][path[t]]);
        for (std::size_t t = 0; t < T; ++t)
            tub.proposal_indices.push_back(alive[t][path[t]]);

        for (std::size_t t = 0; t < T; ++t)
            alive[t].erase(alive[t].begin() + static_cast<std::ptrdiff_t>(path[t]));
        out.push_back(std::move(tub));
    }
    return out;
}

Eigen::VectorXd pool_scores(const Mat& per_frame_scores) {
    if (per_frame_scores.rows() < 1)
        throw std::invalid_argument("pool_scores: no frames");
    return per_frame_scores.colwise().mean().transpose();
}

UnitInputs tubelet_units(const std::vector<const Frame*>& sampled_frames,
                         double theta_h, int n_r, double lambda, int k) {
    UnitInputs u;
    if (sampled_frames.empty()) return u;

    std::vector<std::vector<Proposal>> filtered;
    for (const Frame* f : sampled_frames) {
        filtered.push_back(filter_proposals(f->proposals, f->person_box, theta_h,
                                            static_cast<std::size_t>(n_r)));
        if (filtered.back().empty()) return u; // m stays 0, caller skips
    }

    std::vector<std::vector<ScoredBox>> views(filtered.size());
    for (std::size_t t = 0; t < filtered.size(); ++t)
        for (const Proposal& p : filtered[t])
            views[t].push_back({p.box, p.confidence});
    const std::vector<Tubelet> tubs = link_tubelets(views, lambda, k);
    if (tubs.empty()) return u;

    const std::size_t T = filtered.size();
    const Eigen::Index D = filtered[0][0].feature.size();
    u.m = static_cast<int>(tubs.size());
    for (std::size_t t = 0; t < T; ++t) {
        Mat X(u.m, D);
        std::vector<Point2> ctrs;
        for (int r = 0; r < u.m; ++r) {
            const Proposal& p = filtered[t][static_cast<std::size_t>(
                tubs[static_cast<std::size_t>(r)].proposal_indices[t])];
            X.row(r) = p.feature.transpose();
            ctrs.push_back(center(p.box));
            if (t == 0) u.boxes.push_back(p.box);
        }
        u.features.push_back(std::move(X));
        u.centers.push_back(std::move(ctrs));
        u.keypoints.push_back(sampled_frames[t]->keypoints);
    }

    Eigen::VectorXd person = Eigen::VectorXd::Zero(D);
    int with_person = 0;
    for (const Frame* f : sampled_frames)
        if (f->person_feature) {
            person += *f->person_feature;
            ++with_person;
        }
    if (with_person > 0)
        u.person_feature = person / static_cast<double>(with_person);
    return u;
}

} // namespace wsod
