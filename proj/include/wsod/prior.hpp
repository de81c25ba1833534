#pragma once

#include <Eigen/Dense>
#include <optional>
#include <utility>
#include <vector>

#include "wsod/geometry.hpp"

namespace wsod {

enum class PriorVariant { Normal, Grid, Center };

/// Detected keypoints of one person, one entry per configured keypoint.
struct Keypoints {
    std::vector<Point2> points;
    std::vector<bool> visible;

    std::size_t size() const { return points.size(); }
};

/// Per-action parameters of the spatial prior: keypoint mixing logits
/// (softmaxed into the anchor weights), the mean and log standard deviation
/// of the Gaussian offset density, and the 3x3 cell logits of the grid
/// variant.
struct ActionPrior {
    Eigen::VectorXd key_logits; // |P|
    Eigen::Vector2d mu = Eigen::Vector2d::Zero();
    Eigen::Vector2d log_sigma = Eigen::Vector2d::Zero();
    Eigen::Matrix3d grid_logits = Eigen::Matrix3d::Zero();
};

struct PriorParams {
    std::vector<ActionPrior> actions;
    PriorVariant variant = PriorVariant::Normal;
    bool learn_mu = true;
    bool learn_sigma = true;
    bool normalize = true;     // normalize weights across proposals
    double sigma_min = 1e-3;

    static PriorParams uniform(int n_actions, int n_keypoints,
                               double sigma_init = 0.3);
};

/// Frame center in normalized coordinates.
inline Point2 frame_center() { return {0.5, 0.5}; }

inline constexpr double kWeightEps = 1e-12;
inline constexpr double kGridExtent = 0.5; // grid spans [-0.5, 0.5]^2

/// Keypoint-weighted anchor location. The softmax over key_logits is
/// renormalized over visible keypoints; the center variant, missing
/// keypoints, or all keypoints invisible fall back to the frame center.
Point2 anchor_location(const PriorParams& params, int action,
                       const std::optional<Keypoints>& kps, Point2 frame_center);

/// 3x3 cell containing an offset, row 0 at the top (image y grows
/// downward); absent when the offset lies outside [-0.5, 0.5]^2.
std::optional<std::pair<int, int>> grid_cell(Point2 offset);

/// Unnormalized density of one offset under the action's prior: the
/// diagonal Gaussian for the normal/center variants, the softmaxed cell
/// probability (0 outside the grid extent) for the grid variant.
double prior_density(const PriorParams& params, int action, Point2 offset);

/// Per-proposal location probabilities w_r: densities of (center - anchor)
/// normalized to sum 1 across proposals, so a single proposal always gets
/// weight 1 regardless of its density. Grid variant with every offset
/// outside the extent falls back to uniform weights; normalize=false
/// returns the raw densities.
Eigen::VectorXd proposal_weights(const PriorParams& params, int action,
                                 Point2 anchor, const std::vector<Point2>& centers);

/// Projects exp(log_sigma) onto [sigma_min, inf). Applied after optimizer
/// steps.
void clamp_sigma(PriorParams& params);

} // namespace wsod
