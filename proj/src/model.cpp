#include "wsod/model.hpp"

#include <cmath>
#include <stdexcept>

namespace wsod {

namespace {

Mat softmax_rows_value(const Mat& a) {
    Mat out(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const double m = a.row(i).maxCoeff();
        Eigen::RowVectorXd e = (a.row(i).array() - m).exp();
        out.row(i) = e / e.sum();
    }
    return out;
}

double clog(double x, double floor) { return std::log(std::max(x, floor)); }

Mat gaussian_init(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, stddev);
    return m;
}

std::string prior_key(int action, const char* field) {
    return "prior.a" + std::to_string(action) + "." + field;
}

const Mat& table_at(const ParamTable& t, const std::string& name,
                    Eigen::Index rows, Eigen::Index cols) {
    auto it = t.find(name);
    if (it == t.end()) throw std::runtime_error("checkpoint missing tensor: " + name);
    if (it->second.rows() != rows || it->second.cols() != cols)
        throw std::runtime_error("checkpoint tensor has wrong shape: " + name);
    return it->second;
}

} // namespace

HeadParams HeadParams::init(int in, int hidden, int out, Rng& rng) {
    HeadParams h;
    h.W1 = gaussian_init(in, hidden, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    h.b1 = Mat::Zero(1, hidden);
    h.W2 = gaussian_init(hidden, out, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
    h.b2 = Mat::Zero(1, out);
    return h;
}

ModelParams ModelParams::init(const TaskSpec& task, PriorVariant variant,
                              int hidden, double sigma_init, std::uint64_t seed) {
    if (hidden < 1) throw std::invalid_argument("model: hidden width < 1");
    ModelParams mp;
    mp.prior = PriorParams::uniform(task.n_actions(), task.num_keypoints, sigma_init);
    mp.prior.variant = variant;
    Rng rng(seed);
    mp.object_head = HeadParams::init(task.feature_dim, hidden, task.n_objects(), rng);
    mp.action_obj_head = HeadParams::init(task.feature_dim, hidden, task.n_actions(), rng);
    mp.action_person_head = HeadParams::init(task.feature_dim, hidden, task.n_actions(), rng);
    return mp;
}

ParamTable ModelParams::to_table() const {
    ParamTable t;
    for (std::size_t i = 0; i < prior.actions.size(); ++i) {
        const ActionPrior& ap = prior.actions[i];
        const int a = static_cast<int>(i);
        t[prior_key(a, "key_logits")] = ap.key_logits;
        t[prior_key(a, "mu")] = ap.mu.transpose();
        t[prior_key(a, "log_sigma")] = ap.log_sigma.transpose();
        Mat grid(1, 9);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) grid(0, r * 3 + c) = ap.grid_logits(r, c);
        t[prior_key(a, "grid")] = grid;
    }
    auto put_head = [&t](const std::string& name, const HeadParams& h) {
        t["head." + name + ".W1"] = h.W1;
        t["head." + name + ".b1"] = h.b1;
        t["head." + name + ".W2"] = h.W2;
        t["head." + name + ".b2"] = h.b2;
    };
    put_head("object", object_head);
    put_head("action_obj", action_obj_head);
    put_head("action_person", action_person_head);
    return t;
}

void ModelParams::load_table(const ParamTable& table) {
    for (std::size_t i = 0; i < prior.actions.size(); ++i) {
        ActionPrior& ap = prior.actions[i];
        const int a = static_cast<int>(i);
        ap.key_logits = table_at(table, prior_key(a, "key_logits"),
                                 ap.key_logits.size(), 1);
        ap.mu = table_at(table, prior_key(a, "mu"), 1, 2).transpose();
        ap.log_sigma = table_at(table, prior_key(a, "log_sigma"), 1, 2).transpose();
        const Mat& grid = table_at(table, prior_key(a, "grid"), 1, 9);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) ap.grid_logits(r, c) = grid(0, r * 3 + c);
    }
    auto get_head = [&table](const std::string& name, HeadParams& h) {
        h.W1 = table_at(table, "head." + name + ".W1", h.W1.rows(), h.W1.cols());
        h.b1 = table_at(table, "head." + name + ".b1", h.b1.rows(), h.b1.cols());
        h.W2 = table_at(table, "head." + name + ".W2", h.W2.rows(), h.W2.cols());
        h.b2 = table_at(table, "head." + name + ".b2", h.b2.rows(), h.b2.cols());
    };
    get_head("object", object_head);
    get_head("action_obj", action_obj_head);
    get_head("action_person", action_person_head);
}

// ---------------------------------------------------------------------------
// Value-level forward passes and losses
// ---------------------------------------------------------------------------

Mat head_forward(const HeadParams& head, const Mat& X) {
    if (X.cols() != head.W1.rows())
        throw std::invalid_argument("model: feature width does not match head");
    Mat h = ((X * head.W1).rowwise() + head.b1.row(0)).cwiseMax(0.0);
    return (h * head.W2).rowwise() + head.b2.row(0);
}

Mat object_probabilities(const Mat& scores, LossStyle style) {
    if (style == LossStyle::Paper) return softmax_rows_value(scores);
    return scores.unaryExpr([](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
    });
}

double loss_obj(const Mat& P,
                const std::vector<std::pair<int, Eigen::VectorXd>>& action_weights,
                const std::vector<int>& action_to_object, double log_floor) {
    if (action_weights.empty())
        throw std::invalid_argument("loss_obj: a weak action label is required");
    const Eigen::Index m = P.rows();
    const Eigen::Index n_o = P.cols();
    double total = 0.0;
    for (const auto& [action, w] : action_weights) {
        if (w.size() != m)
            throw std::invalid_argument("loss_obj: weight length != unit count");
        const int target = action_to_object.at(static_cast<std::size_t>(action));
        double acc = 0.0;
        for (Eigen::Index r = 0; r < m; ++r) {
            double inner = 0.0;
            for (Eigen::Index o = 0; o < n_o; ++o) {
                const double y = (o == target) ? 1.0 : 0.0;
                inner += y * clog(P(r, o), log_floor) +
                         (1.0 - y) * clog(1.0 - P(r, o), log_floor);
            }
            acc += w(r) * inner / static_cast<double>(n_o);
        }
        total += -acc / static_cast<double>(m);
    }
    return total / static_cast<double>(action_weights.size());
}

Eigen::VectorXd action_logit(const HeadParams& person_head,
                             const HeadParams& proposal_head,
                             const std::optional<Eigen::VectorXd>& person_feature,
                             const Mat& features, const Mat& W) {
    Mat h(1, person_head.W1.rows());
    if (person_feature)
        h.row(0) = person_feature->transpose();
    else
        h.setZero();
    Eigen::VectorXd s = head_forward(person_head, h).row(0).transpose();
    const Mat scores = head_forward(proposal_head, features); // m x n_a
    if (W.rows() != scores.rows() || W.cols() != scores.cols())
        throw std::invalid_argument("action_logit: weight matrix shape mismatch");
    s += scores.cwiseProduct(W).colwise().sum().transpose();
    return s;
}

double loss_act(const Eigen::VectorXd& logits, const Eigen::VectorXd& y_a,
                LossStyle style, double log_floor) {
    if (logits.size() != y_a.size())
        throw std::invalid_argument("loss_act: label length != action count");
    const Mat probs = object_probabilities(logits.transpose(), style);
    const Eigen::Index n_a = logits.size();
    double acc = 0.0;
    for (Eigen::Index a = 0; a < n_a; ++a)
        acc += y_a(a) * clog(probs(0, a), log_floor) +
               (1.0 - y_a(a)) * clog(1.0 - probs(0, a), log_floor);
    return -acc / static_cast<double>(n_a);
}

double loss_total(double l_obj, double l_act, const HyperWeights& hw) {
    return hw.alpha_o * l_obj + hw.alpha_a * l_act;
}

SupervisedSelection select_supervised(const std::vector<BBox>& unit_boxes,
                                      const std::vector<GtBox>& gt_boxes,
                                      int n_objects, Rng& rng,
                                      double iou_min, int neg_ratio) {
    std::vector<int> pos_class(unit_boxes.size(), -1);
    std::vector<int> positives;
    std::vector<int> candidates;
    for (std::size_t r = 0; r < unit_boxes.size(); ++r) {
        double best = -1.0;
        int best_class = -1;
        for (const GtBox& g : gt_boxes) {
            const double v = iou(unit_boxes[r], g.box);
            if (v > best || (v == best && g.object < best_class)) {
                best = v;
                best_class = g.object;
            }
        }
        if (best >= iou_min) {
            pos_class[r] = best_class;
            positives.push_back(static_cast<int>(r));
        } else {
            candidates.push_back(static_cast<int>(r));
        }
    }

    const std::size_t quota =
        positives.empty()
            ? std::min<std::size_t>(static_cast<std::size_t>(neg_ratio), candidates.size())
            : std::min<std::size_t>(positives.size() * static_cast<std::size_t>(neg_ratio),
                                    candidates.size());
    rng.shuffle(candidates);
    candidates.resize(quota);

    SupervisedSelection sel;
    sel.rows = positives;
    sel.rows.insert(sel.rows.end(), candidates.begin(), candidates.end());
    sel.targets = Mat::Zero(static_cast<Eigen::Index>(sel.rows.size()), n_objects);
    for (std::size_t i = 0; i < positives.size(); ++i)
        sel.targets(static_cast<Eigen::Index>(i), pos_class[static_cast<std::size_t>(positives[i])]) = 1.0;
    return sel;
}

double loss_supervised(const Mat& P, const SupervisedSelection& sel, double log_floor) {
    if (sel.rows.empty()) return 0.0;
    const Eigen::Index n_o = P.cols();
    double acc = 0.0;
    for (std::size_t i = 0; i < sel.rows.size(); ++i) {
        const Eigen::Index r = sel.rows[i];
        double inner = 0.0;
        for (Eigen::Index o = 0; o < n_o; ++o) {
            const double t = sel.targets(static_cast<Eigen::Index>(i), o);
            inner += t * clog(P(r, o), log_floor) +
                     (1.0 - t) * clog(1.0 - P(r, o), log_floor);
        }
        acc += -inner / static_cast<double>(n_o);
    }
    return acc / static_cast<double>(sel.rows.size());
}

double loss_supervised(const Mat& P, const std::vector<BBox>& unit_boxes,
                       const std::vector<GtBox>& gt_boxes, int n_objects,
                       Rng& rng, double log_floor) {
    return loss_supervised(
        P, select_supervised(unit_boxes, gt_boxes, n_objects, rng), log_floor);
}

// ---------------------------------------------------------------------------
// Tape graphs
// ---------------------------------------------------------------------------

BoundModel bind_model(Tape& tape, const ModelParams& params) {
    BoundModel bm;
    for (std::size_t i = 0; i < params.prior.actions.size(); ++i) {
        const ActionPrior& ap = params.prior.actions[i];
        const int a = static_cast<int>(i);
        BoundPrior bp;
        bp.key_logits = tape.param(prior_key(a, "key_logits"), ap.key_logits);
        const Mat mu = ap.mu.transpose();
        const Mat ls = ap.log_sigma.transpose();
        bp.mu = params.prior.learn_mu ? tape.param(prior_key(a, "mu"), mu)
                                      : tape.constant(mu);
        bp.log_sigma = params.prior.learn_sigma
                           ? tape.param(prior_key(a, "log_sigma"), ls)
                           : tape.constant(ls);
        Mat grid(1, 9);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) grid(0, r * 3 + c) = ap.grid_logits(r, c);
        bp.grid = tape.param(prior_key(a, "grid"), grid);
        bm.priors.push_back(bp);
    }
    auto bind_head = [&tape](const std::string& name, const HeadParams& h) {
        BoundHead bh;
        bh.W1 = tape.param("head." + name + ".W1", h.W1);
        bh.b1 = tape.param("head." + name + ".b1", h.b1);
        bh.W2 = tape.param("head." + name + ".W2", h.W2);
        bh.b2 = tape.param("head." + name + ".b2", h.b2);
        return bh;
    };
    bm.object = bind_head("object", params.object_head);
    bm.action_obj = bind_head("action_obj", params.action_obj_head);
    bm.action_person = bind_head("action_person", params.action_person_head);
    return bm;
}

Var head_graph(Tape& tape, const BoundHead& head, Var X, std::vector<Var>* preacts) {
    Var p1 = tape.add(tape.matmul(X, head.W1), head.b1);
    if (preacts) preacts->push_back(p1);
    Var h = tape.relu(p1);
    return tape.add(tape.matmul(h, head.W2), head.b2);
}

namespace {

Var uniform_weights(Tape& tape, int m) {
    return tape.constant(Mat::Constant(m, 1, 1.0 / static_cast<double>(m)));
}

// Anchor node (1x2). Differentiable through key_logits unless the fallback
// to the frame center applies.
Var anchor_graph(Tape& tape, const BoundPrior& bp, const ModelParams& params,
                 const std::optional<Keypoints>& kps) {
    const Point2 fc = frame_center();
    Mat center(1, 2);
    center << fc.x, fc.y;
    if (params.prior.variant == PriorVariant::Center || !kps)
        return tape.constant(center);
    const Eigen::Index n_k = tape.value(bp.key_logits).rows();
    if (static_cast<Eigen::Index>(kps->size()) != n_k)
        throw std::invalid_argument("prior: keypoint count does not match key_logits");
    std::vector<int> vis;
    for (std::size_t i = 0; i < kps->size(); ++i)
        if (kps->visible[i]) vis.push_back(static_cast<int>(i));
    if (vis.empty()) return tape.constant(center);
    Mat K(static_cast<Eigen::Index>(vis.size()), 2);
    for (std::size_t i = 0; i < vis.size(); ++i) {
        K(static_cast<Eigen::Index>(i), 0) = kps->points[static_cast<std::size_t>(vis[i])].x;
        K(static_cast<Eigen::Index>(i), 1) = kps->points[static_cast<std::size_t>(vis[i])].y;
    }
    Var alpha = tape.softmax_cols(tape.gather_rows(bp.key_logits, vis));
    return tape.matmul(tape.transpose(alpha), tape.constant(K));
}

} // namespace

Var weight_graph(Tape& tape, const BoundPrior& bp, const ModelParams& params,
                 int action, const std::vector<Point2>& centers,
                 const std::optional<Keypoints>& kps) {
    const int m = static_cast<int>(centers.size());
    if (m < 1) throw std::invalid_argument("prior: no units to weight");
    Mat C(m, 2);
    for (int r = 0; r < m; ++r) {
        C(r, 0) = centers[static_cast<std::size_t>(r)].x;
        C(r, 1) = centers[static_cast<std::size_t>(r)].y;
    }

    if (params.prior.variant == PriorVariant::Grid) {
        // Cell assignment is a by-value decision: the grid density is
        // piecewise constant in the anchor, so only grid_logits get
        // gradients here.
        const Point2 anchor =
            anchor_location(params.prior, action, kps, frame_center());
        Mat S = Mat::Zero(m, 9);
        bool any_inside = false;
        for (int r = 0; r < m; ++r) {
            const auto cell = grid_cell({C(r, 0) - anchor.x, C(r, 1) - anchor.y});
            if (!cell) continue;
            S(r, cell->first * 3 + cell->second) = 1.0;
            any_inside = true;
        }
        Var d = tape.matmul(tape.constant(S),
                            tape.transpose(tape.softmax_rows(bp.grid)));
        if (!params.prior.normalize) return d;
        if (!any_inside) return uniform_weights(tape, m);
        return tape.div(d, tape.sum(d));
    }

    Var anchor = anchor_graph(tape, bp, params, kps);
    Var offsets = tape.sub(tape.constant(C), anchor);
    Var centered = tape.sub(offsets, bp.mu);
    Var inv_sigma = tape.exp(tape.scale_add(bp.log_sigma, -1.0, 0.0));
    Var u = tape.mul(centered, inv_sigma);
    Var ssq = tape.row_sum(tape.mul(u, u));
    Var log_d = tape.sub(tape.scale_add(ssq, -0.5, -std::log(2.0 * M_PI)),
                         tape.sum(bp.log_sigma));
    if (!params.prior.normalize) return tape.exp(log_d);

    // Normalization about the max log density keeps the weights a
    // probability vector even when the raw densities underflow.
    const double mstar = tape.value(log_d).maxCoeff();
    if (!std::isfinite(mstar)) return uniform_weights(tape, m);
    Var e = tape.exp(tape.sub(log_d, tape.constant(mstar)));
    return tape.div(e, tape.sum(e));
}

UnitInputs image_units(const Frame& frame, double theta_h, int n_r) {
    if (n_r < 1) throw std::invalid_argument("image_units: n_r < 1");
    const std::vector<Proposal> kept = filter_proposals(
        frame.proposals, frame.person_box, theta_h, static_cast<std::size_t>(n_r));
    UnitInputs u;
    u.m = static_cast<int>(kept.size());
    if (u.m == 0) return u;
    Mat X(u.m, kept[0].feature.size());
    std::vector<Point2> ctrs;
    for (int r = 0; r < u.m; ++r) {
        const Proposal& p = kept[static_cast<std::size_t>(r)];
        X.row(r) = p.feature.transpose();
        ctrs.push_back(center(p.box));
        u.boxes.push_back(p.box);
    }
    u.features.push_back(std::move(X));
    u.centers.push_back(std::move(ctrs));
    u.keypoints.push_back(frame.keypoints);
    u.person_feature = frame.person_feature;
    return u;
}

namespace {

Var frame_mean(Tape& tape, const std::vector<Var>& per_frame) {
    Var acc = per_frame[0];
    for (std::size_t f = 1; f < per_frame.size(); ++f)
        acc = tape.add(acc, per_frame[f]);
    if (per_frame.size() > 1)
        acc = tape.scale_add(acc, 1.0 / static_cast<double>(per_frame.size()), 0.0);
    return acc;
}

Var probabilities_graph(Tape& tape, Var scores, LossStyle style) {
    return style == LossStyle::Paper ? tape.softmax_rows(scores)
                                     : tape.sigmoid(scores);
}

// -(1/(rows*cols)) * sum(T*log P + (1-T)*log(1-P)) with T given per row
// (row-broadcast 1 x cols or full rows x cols).
Var bce_graph(Tape& tape, Var P, Var targets, Var targets_complement,
              double log_floor, double denom) {
    Var log_p = tape.log_clamped(P, log_floor);
    Var log_1mp = tape.log_clamped(tape.scale_add(P, -1.0, 1.0), log_floor);
    Var inner = tape.add(tape.mul(log_p, targets),
                         tape.mul(log_1mp, targets_complement));
    return tape.scale_add(tape.sum(inner), -1.0 / denom, 0.0);
}

} // namespace

SampleLossGraph sample_loss_graph(Tape& tape, const BoundModel& bound,
                                  const ModelParams& params, const TaskSpec& task,
                                  const UnitInputs& units,
                                  const std::set<int>& gt_actions,
                                  const LossConfig& cfg,
                                  const SupervisedSelection* supervised) {
    if (units.m < 1) throw std::invalid_argument("sample loss: no units");
    if (gt_actions.empty())
        throw std::invalid_argument("sample loss: a weak action label is required");
    const int n_a = task.n_actions();
    const int n_o = task.n_objects();
    const std::size_t T = units.features.size();

    SampleLossGraph g;

    std::vector<Var> obj_frames, aobj_frames;
    for (std::size_t f = 0; f < T; ++f) {
        Var X = tape.constant(units.features[f]);
        obj_frames.push_back(head_graph(tape, bound.object, X, &g.preacts));
        aobj_frames.push_back(head_graph(tape, bound.action_obj, X, &g.preacts));
    }
    Var obj_scores = frame_mean(tape, obj_frames);   // m x n_o
    Var aobj_scores = frame_mean(tape, aobj_frames); // m x n_a

    for (int a = 0; a < n_a; ++a) {
        std::vector<Var> w_frames;
        for (std::size_t f = 0; f < T; ++f)
            w_frames.push_back(weight_graph(tape, bound.priors[static_cast<std::size_t>(a)],
                                            params, a, units.centers[f],
                                            units.keypoints[f]));
        g.action_weights.push_back(frame_mean(tape, w_frames));
    }

    Var P = probabilities_graph(tape, obj_scores, cfg.style);
    g.unit_probs = P;
    Var log_p = tape.log_clamped(P, cfg.log_floor);
    Var log_1mp = tape.log_clamped(tape.scale_add(P, -1.0, 1.0), cfg.log_floor);

    // Object loss: mean over labeled actions of the weighted per-unit BCE
    // against the one-hot target for o_a.
    std::vector<Var> per_action;
    for (int a : gt_actions) {
        Mat y = Mat::Zero(1, n_o);
        y(0, task.action_to_object[static_cast<std::size_t>(a)]) = 1.0;
        Var inner = tape.add(tape.mul(log_p, tape.constant(y)),
                             tape.mul(log_1mp, tape.constant(Mat(Mat::Ones(1, n_o) - y))));
        Var weighted = tape.mul(tape.row_sum(inner),
                                g.action_weights[static_cast<std::size_t>(a)]);
        per_action.push_back(tape.scale_add(
            tape.sum(weighted), -1.0 / static_cast<double>(units.m * n_o), 0.0));
    }
    g.l_obj = frame_mean(tape, per_action);

    // Action loss: combined person + weighted proposal scores.
    Mat h = Mat::Zero(1, task.feature_dim);
    if (units.person_feature) h.row(0) = units.person_feature->transpose();
    Var s_person = head_graph(tape, bound.action_person, tape.constant(h), &g.preacts);
    Var W = tape.hcat(g.action_weights); // m x n_a
    Var s_combined = tape.add(s_person, tape.col_sum(tape.mul(aobj_scores, W)));
    Var Pa = probabilities_graph(tape, s_combined, cfg.style);
    g.action_probs = Pa;

    Mat ya = Mat::Zero(1, n_a);
    for (int a : gt_actions) ya(0, a) = 1.0;
    g.l_act = bce_graph(tape, Pa, tape.constant(ya),
                        tape.constant(Mat(Mat::Ones(1, n_a) - ya)), cfg.log_floor,
                        static_cast<double>(n_a));

    g.total = tape.add(tape.scale_add(g.l_obj, cfg.hw.alpha_o, 0.0),
                       tape.scale_add(g.l_act, cfg.hw.alpha_a, 0.0));

    if (supervised && !supervised->rows.empty()) {
        Var P_sel = tape.gather_rows(P, supervised->rows);
        Var l_sup = bce_graph(
            tape, P_sel, tape.constant(supervised->targets),
            tape.constant(Mat(Mat::Ones(supervised->targets.rows(), n_o) -
                              supervised->targets)),
            cfg.log_floor,
            static_cast<double>(supervised->rows.size() * static_cast<std::size_t>(n_o)));
        g.l_sup = l_sup;
        g.total = tape.add(g.total, l_sup);
    }
    return g;
}

} // namespace wsod
