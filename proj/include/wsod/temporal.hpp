#pragma once

#include <vector>

#include "wsod/geometry.hpp"
#include "wsod/model.hpp"

namespace wsod {

/// A temporally linked chain: one proposal index per sampled frame.
/// Indices refer to the per-frame proposal lists handed to link_tubelets.
struct Tubelet {
    std::vector<int> proposal_indices;
    double link_score = 0.0;
};

/// Uniform frame sampling: indices floor(i*T/n) for i = 0..n-1. When the
/// clip is shorter than n, frames repeat.
std::vector<int> sample_frames(int clip_len, int n);

/// Greedy tubelet extraction. Repeatedly selects the path maximizing
/// sum_t conf(p_t) + lambda * sum_t iou(box(p_t), box(p_{t+1})) by forward
/// dynamic programming (ties resolved toward lower proposal indices),
/// removes the used proposals and repeats, stopping after k tubelets or
/// once any frame runs out of proposals.
std::vector<Tubelet> link_tubelets(const std::vector<std::vector<ScoredBox>>& frames,
                                   double lambda, int k);

/// Arithmetic mean of per-frame score vectors (rows).
Eigen::VectorXd pool_scores(const Mat& per_frame_scores);

/// Units of a video sample: per-frame proposal filtering followed by
/// tubelet linking over the sampled frames. Each unit is one tubelet; its
/// representative box is the first-frame box. The person feature is the
/// mean over frames carrying one. Returns m = 0 when any sampled frame is
/// left empty by filtering.
UnitInputs tubelet_units(const std::vector<const Frame*>& sampled_frames,
                         double theta_h, int n_r, double lambda, int k);

} // namespace wsod
