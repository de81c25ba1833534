#include "wsod/prior.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace wsod {

PriorParams PriorParams::uniform(int n_actions, int n_keypoints, double sigma_init) {
    PriorParams p;
    p.actions.resize(static_cast<std::size_t>(n_actions));
    for (ActionPrior& a : p.actions) {
        a.key_logits = Eigen::VectorXd::Zero(n_keypoints);
        a.log_sigma.setConstant(std::log(sigma_init));
    }
    return p;
}

Point2 anchor_location(const PriorParams& params, int action,
                       const std::optional<Keypoints>& kps, Point2 frame_center) {
    if (params.variant == PriorVariant::Center || !kps || kps->size() == 0)
        return frame_center;

    const ActionPrior& ap = params.actions.at(static_cast<std::size_t>(action));
    if (static_cast<std::size_t>(ap.key_logits.size()) != kps->size())
        throw std::invalid_argument("anchor_location: keypoint count mismatch");

    // Softmax over visible keypoints only.
    double max_logit = -std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < kps->size(); ++p)
        if (kps->visible[p])
            max_logit = std::max(max_logit, ap.key_logits(static_cast<Eigen::Index>(p)));
    if (!std::isfinite(max_logit)) return frame_center; // none visible

    double denom = 0.0;
    Point2 anchor{0.0, 0.0};
    for (std::size_t p = 0; p < kps->size(); ++p) {
        if (!kps->visible[p]) continue;
        const double w = std::exp(ap.key_logits(static_cast<Eigen::Index>(p)) - max_logit);
        denom += w;
        anchor.x += w * kps->points[p].x;
        anchor.y += w * kps->points[p].y;
    }
    anchor.x /= denom;
    anchor.y /= denom;
    return anchor;
}

std::optional<std::pair<int, int>> grid_cell(Point2 offset) {
    const double cell = 2.0 * kGridExtent / 3.0;
    const int col = static_cast<int>(std::floor((offset.x + kGridExtent) / cell));
    const int row = static_cast<int>(std::floor((offset.y + kGridExtent) / cell));
    if (row < 0 || row > 2 || col < 0 || col > 2) return std::nullopt;
    return std::make_pair(row, col);
}

namespace {

// log of the diagonal Gaussian density at `offset` around mu with
// sigma = exp(log_sigma).
double log_gaussian_density(const ActionPrior& ap, Point2 offset) {
    const double sx = std::exp(ap.log_sigma(0));
    const double sy = std::exp(ap.log_sigma(1));
    const double ux = (offset.x - ap.mu(0)) / sx;
    const double uy = (offset.y - ap.mu(1)) / sy;
    return -0.5 * (ux * ux + uy * uy) - std::log(2.0 * M_PI) -
           ap.log_sigma(0) - ap.log_sigma(1);
}

Eigen::Matrix3d grid_probs(const ActionPrior& ap) {
    Eigen::Matrix3d e = (ap.grid_logits.array() - ap.grid_logits.maxCoeff()).exp();
    return e / e.sum();
}

} // namespace

double prior_density(const PriorParams& params, int action, Point2 offset) {
    const ActionPrior& ap = params.actions.at(static_cast<std::size_t>(action));
    if (params.variant == PriorVariant::Grid) {
        const auto cell = grid_cell(offset);
        if (!cell) return 0.0;
        return grid_probs(ap)(cell->first, cell->second);
    }
    return std::exp(log_gaussian_density(ap, offset));
}

Eigen::VectorXd proposal_weights(const PriorParams& params, int action,
                                 Point2 anchor, const std::vector<Point2>& centers) {
    const auto n = static_cast<Eigen::Index>(centers.size());
    if (n == 0) throw std::invalid_argument("proposal_weights: no proposal centers");
    const ActionPrior& ap = params.actions.at(static_cast<std::size_t>(action));

    Eigen::VectorXd dens(n);
    if (params.variant == PriorVariant::Grid) {
        const Eigen::Matrix3d probs = grid_probs(ap);
        for (Eigen::Index r = 0; r < n; ++r) {
            const auto cell = grid_cell(centers[static_cast<std::size_t>(r)] - anchor);
            dens(r) = cell ? probs(cell->first, cell->second) : 0.0;
        }
        if (!params.normalize) return dens;
        const double total = dens.sum();
        if (total <= kWeightEps)
            return Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
        return dens / total;
    }

    // Gaussian densities, normalized about the max log density so the
    // weights stay a probability vector even when the raw densities
    // underflow. A single proposal therefore gets weight exactly 1.
    Eigen::VectorXd logd(n);
    for (Eigen::Index r = 0; r < n; ++r)
        logd(r) = log_gaussian_density(ap, centers[static_cast<std::size_t>(r)] - anchor);
    if (!params.normalize) return logd.array().exp();

    const double shift = logd.maxCoeff();
    if (!std::isfinite(shift))
        return Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
    const Eigen::VectorXd e = (logd.array() - shift).exp();
    return e / e.sum();
}

void clamp_sigma(PriorParams& params) {
    const double floor = std::log(params.sigma_min);
    for (ActionPrior& a : params.actions) {
        a.log_sigma(0) = std::max(a.log_sigma(0), floor);
        a.log_sigma(1) = std::max(a.log_sigma(1), floor);
    }
}

} // namespace wsod
