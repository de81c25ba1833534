#pragma once

#include <Eigen/Dense>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "wsod/adam.hpp"
#include "wsod/data.hpp"
#include "wsod/prior.hpp"
#include "wsod/tape.hpp"

namespace wsod {

/// Probability style shared by the object and action losses: `Paper`
/// softmaxes scores before the binary cross entropy, `SigmoidBce` applies
/// an elementwise sigmoid instead.
enum class LossStyle { Paper, SigmoidBce };

struct HyperWeights {
    double alpha_o = 2.0;
    double alpha_a = 1.0;
};

inline constexpr double kLogFloor = 1e-12;

/// One two-layer perceptron head, stored in graph orientation:
/// scores = relu(X * W1 + b1) * W2 + b2 for row-major inputs X (m x D).
struct HeadParams {
    Mat W1; // D x H
    Mat b1; // 1 x H
    Mat W2; // H x out
    Mat b2; // 1 x out

    int in_dim() const { return static_cast<int>(W1.rows()); }
    int hidden_dim() const { return static_cast<int>(W1.cols()); }
    int out_dim() const { return static_cast<int>(W2.cols()); }

    static HeadParams init(int in, int hidden, int out, Rng& rng);
};

/// All trainable state: the per-action spatial prior plus the object head
/// s_O, the proposal action head s_A^O and the person action head s_A^H.
struct ModelParams {
    PriorParams prior;
    HeadParams object_head;        // D -> n_o
    HeadParams action_obj_head;    // D -> n_a
    HeadParams action_person_head; // D -> n_a

    static ModelParams init(const TaskSpec& task, PriorVariant variant,
                            int hidden, double sigma_init, std::uint64_t seed);

    /// Flat named tensors, the checkpoint payload. Prior entries are
    /// "prior.a{i}.key_logits|mu|log_sigma|grid" (mu/log_sigma as 1x2 rows,
    /// grid as a row-major 1x9), heads are
    /// "head.{object|action_obj|action_person}.{W1|b1|W2|b2}".
    ParamTable to_table() const;

    /// Overwrites values from a table produced by to_table. Throws on
    /// missing names or shape mismatches.
    void load_table(const ParamTable& table);
};

// ---------------------------------------------------------------------------
// Value-level forward passes and losses (used by inference and fixtures;
// the tape graphs below compute the same formulas differentiably).
// ---------------------------------------------------------------------------

/// Head forward pass: X (m x D) -> scores (m x out).
Mat head_forward(const HeadParams& head, const Mat& X);

/// P(o|r) rows from raw scores: per-row softmax (Paper) or sigmoid.
Mat object_probabilities(const Mat& scores, LossStyle style);

/// Object classification loss: for each labeled action a (paired with its
/// per-unit weight vector), the weighted per-unit BCE against the one-hot
/// target for the involved object o_a, averaged over units and labeled
/// actions. Throws when no labeled action is given.
double loss_obj(const Mat& P,
                const std::vector<std::pair<int, Eigen::VectorXd>>& action_weights,
                const std::vector<int>& action_to_object,
                double log_floor = kLogFloor);

/// Combined action scores s(a) = s_A^H(h;a) + sum_r w_r^a s_A^O(r;a).
/// W holds one weight column per action (m x n_a). A missing person
/// feature is replaced by the zero vector.
Eigen::VectorXd action_logit(const HeadParams& person_head,
                             const HeadParams& proposal_head,
                             const std::optional<Eigen::VectorXd>& person_feature,
                             const Mat& features, const Mat& W);

/// Action classification loss: BCE of the multi-hot labels against the
/// per-action probabilities of the combined scores.
double loss_act(const Eigen::VectorXd& logits, const Eigen::VectorXd& y_a,
                LossStyle style = LossStyle::Paper, double log_floor = kLogFloor);

double loss_total(double l_obj, double l_act, const HyperWeights& hw);

/// Matches units against ground-truth boxes for the supervised loss:
/// units whose best IoU reaches iou_min become positives carrying that
/// box's class (ties to higher IoU, then lower class index); a seeded
/// subset of the rest, at most neg_ratio per positive (min(neg_ratio,
/// available) when there are no positives), become negatives.
struct SupervisedSelection {
    std::vector<int> rows; // selected unit indices
    Mat targets;           // |rows| x n_o, one-hot or all-zero rows
};

SupervisedSelection select_supervised(const std::vector<BBox>& unit_boxes,
                                      const std::vector<GtBox>& gt_boxes,
                                      int n_objects, Rng& rng,
                                      double iou_min = 0.45, int neg_ratio = 5);

/// Mean over the selected units of the per-unit object BCE against the
/// selection targets. Empty selection -> 0.
double loss_supervised(const Mat& P, const SupervisedSelection& sel,
                       double log_floor = kLogFloor);

/// Convenience composition of select_supervised and loss_supervised.
double loss_supervised(const Mat& P, const std::vector<BBox>& unit_boxes,
                       const std::vector<GtBox>& gt_boxes, int n_objects,
                       Rng& rng, double log_floor = kLogFloor);

// ---------------------------------------------------------------------------
// Tape graphs
// ---------------------------------------------------------------------------

struct BoundHead {
    Var W1, b1, W2, b2;
};

struct BoundPrior {
    Var key_logits, mu, log_sigma, grid;
};

struct BoundModel {
    std::vector<BoundPrior> priors; // one per action
    BoundHead object, action_obj, action_person;
};

/// Binds every model tensor onto the tape. mu/log_sigma become constants
/// (frozen, no gradient) when the corresponding learn flag is off.
BoundModel bind_model(Tape& tape, const ModelParams& params);

/// relu(X*W1+b1)*W2+b2. Appends the hidden pre-activation node to preacts
/// when given (finite-difference harnesses reject draws near relu kinks).
Var head_graph(Tape& tape, const BoundHead& head, Var X,
               std::vector<Var>* preacts = nullptr);

/// Differentiable per-unit location probabilities for one action and one
/// frame; mirrors proposal_weights. Gradients flow into key_logits, mu and
/// log_sigma for the normal variant and into grid_logits for the grid
/// variant (whose cell assignment is piecewise constant by value).
Var weight_graph(Tape& tape, const BoundPrior& bp, const ModelParams& params,
                 int action, const std::vector<Point2>& centers,
                 const std::optional<Keypoints>& kps);

/// Model inputs of one sample reduced to trainable units: single-frame
/// proposals for images, tubelets spanning the sampled frames for clips.
/// features/centers hold one entry per frame (images: exactly one).
struct UnitInputs {
    int m = 0;
    std::vector<Mat> features;                       // per frame, m x D
    std::vector<std::vector<Point2>> centers;        // per frame box centers
    std::vector<std::optional<Keypoints>> keypoints; // per frame
    std::optional<Eigen::VectorXd> person_feature;   // pooled over frames
    std::vector<BBox> boxes;                         // representative box per unit
};

/// Units of a single image frame: proposals filtered against the person
/// box and truncated to the top n_r by confidence.
UnitInputs image_units(const Frame& frame, double theta_h, int n_r);

struct LossConfig {
    HyperWeights hw;
    LossStyle style = LossStyle::Paper;
    double log_floor = kLogFloor;
};

/// Full per-sample loss graph: frame-pooled head scores, per-action prior
/// weights (averaged over frames), the object and action losses and, when
/// a supervised selection is given, the supervised term added onto the
/// weighted total.
struct SampleLossGraph {
    Var total;                // 1x1
    Var l_obj, l_act;         // 1x1 each
    std::optional<Var> l_sup; // present when supervision was applied
    Var unit_probs;           // P(o|r), m x n_o
    Var action_probs;         // P(a), 1 x n_a
    std::vector<Var> action_weights; // m x 1 per action, frame-averaged
    std::vector<Var> preacts;        // relu pre-activations
};

SampleLossGraph sample_loss_graph(Tape& tape, const BoundModel& bound,
                                  const ModelParams& params, const TaskSpec& task,
                                  const UnitInputs& units,
                                  const std::set<int>& gt_actions,
                                  const LossConfig& cfg,
                                  const SupervisedSelection* supervised = nullptr);

} // namespace wsod
