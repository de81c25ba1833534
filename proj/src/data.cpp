#include "wsod/data.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace wsod {

using ordered_json = nlohmann::ordered_json;

const std::vector<std::string>& keypoint_names() {
    static const std::vector<std::string> names = {
        "head",
        "l_shoulder", "r_shoulder",
        "l_elbow",    "r_elbow",
        "l_wrist",    "r_wrist",
        "l_hip",      "r_hip",
        "l_knee",     "r_knee",
        "l_ankle",    "r_ankle",
    };
    return names;
}

namespace {

[[noreturn]] void fail(const std::string& sample_id, const std::string& what) {
    throw std::runtime_error("sample '" + sample_id + "': " + what);
}

void check_box(const std::string& id, const char* field, const BBox& b) {
    if (!std::isfinite(b.x1) || !std::isfinite(b.y1) || !std::isfinite(b.x2) ||
        !std::isfinite(b.y2))
        fail(id, std::string(field) + " has non-finite coordinates");
    if (!b.valid())
        fail(id, std::string(field) + " violates x1 <= x2, y1 <= y2");
}

} // namespace

void validate_dataset(const Dataset& ds) {
    const TaskSpec& t = ds.task;
    if (t.actions.empty()) throw std::runtime_error("task: no actions defined");
    if (t.objects.empty()) throw std::runtime_error("task: no objects defined");
    if (t.action_to_object.size() != t.actions.size())
        throw std::runtime_error("task: action_to_object must map every action");
    for (int o : t.action_to_object)
        if (o < 0 || o >= t.n_objects())
            throw std::runtime_error("task: action_to_object entry out of range");
    if (t.num_keypoints < 1) throw std::runtime_error("task: num_keypoints < 1");
    if (t.feature_dim < 1) throw std::runtime_error("task: feature_dim < 1");

    for (const Sample& s : ds.samples) {
        if (s.frames.empty()) fail(s.id, "no frames");
        for (int a : s.action_labels)
            if (a < 0 || a >= t.n_actions())
                fail(s.id, "action label " + std::to_string(a) + " out of range [0," +
                               std::to_string(t.n_actions()) + ")");
        for (const GtBox& g : s.gt_boxes) {
            if (g.object < 0 || g.object >= t.n_objects())
                fail(s.id, "gt object id " + std::to_string(g.object) + " out of range");
            check_box(s.id, "gt box", g.box);
        }
        for (const Frame& f : s.frames) {
            for (const Proposal& p : f.proposals) {
                check_box(s.id, "proposal box", p.box);
                if (p.feature.size() != t.feature_dim)
                    fail(s.id, "proposal feature length " +
                                   std::to_string(p.feature.size()) +
                                   " != feature_dim " + std::to_string(t.feature_dim));
                if (!p.feature.allFinite()) fail(s.id, "proposal feature not finite");
                if (!std::isfinite(p.confidence)) fail(s.id, "proposal confidence not finite");
            }
            if (f.person_box) check_box(s.id, "person box", *f.person_box);
            if (f.person_feature && f.person_feature->size() != t.feature_dim)
                fail(s.id, "person feature length " +
                               std::to_string(f.person_feature->size()) +
                               " != feature_dim " + std::to_string(t.feature_dim));
            if (f.keypoints) {
                if (static_cast<int>(f.keypoints->size()) != t.num_keypoints)
                    fail(s.id, "keypoint count " + std::to_string(f.keypoints->size()) +
                                   " != num_keypoints " + std::to_string(t.num_keypoints));
                if (f.keypoints->visible.size() != f.keypoints->points.size())
                    fail(s.id, "keypoint visibility length mismatch");
            }
        }
    }
}

namespace {

ordered_json box_to_json(const BBox& b) {
    return ordered_json::array({b.x1, b.y1, b.x2, b.y2});
}

BBox box_from_json(const ordered_json& j) {
    if (!j.is_array() || j.size() != 4)
        throw std::runtime_error("box must be a [x1,y1,x2,y2] array");
    return BBox{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
                j[3].get<double>()};
}

ordered_json vec_to_json(const Eigen::VectorXd& v) {
    ordered_json a = ordered_json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

Eigen::VectorXd vec_from_json(const ordered_json& j) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i)
        v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    return v;
}

ordered_json frame_to_json(const Frame& f) {
    ordered_json jf;
    ordered_json props = ordered_json::array();
    for (const Proposal& p : f.proposals) {
        ordered_json jp;
        jp["box"] = box_to_json(p.box);
        jp["confidence"] = p.confidence;
        jp["feature"] = vec_to_json(p.feature);
        props.push_back(std::move(jp));
    }
    jf["proposals"] = std::move(props);
    if (f.person_box) jf["person_box"] = box_to_json(*f.person_box);
    if (f.person_feature) jf["person_feature"] = vec_to_json(*f.person_feature);
    if (f.keypoints) {
        ordered_json kps = ordered_json::array();
        for (std::size_t i = 0; i < f.keypoints->size(); ++i)
            kps.push_back(ordered_json::array({f.keypoints->points[i].x,
                                               f.keypoints->points[i].y,
                                               f.keypoints->visible[i] ? 1 : 0}));
        jf["keypoints"] = std::move(kps);
    }
    return jf;
}

Frame frame_from_json(const ordered_json& jf) {
    Frame f;
    for (const auto& jp : jf.at("proposals")) {
        Proposal p;
        p.box = box_from_json(jp.at("box"));
        p.confidence = jp.at("confidence").get<double>();
        p.feature = vec_from_json(jp.at("feature"));
        f.proposals.push_back(std::move(p));
    }
    if (jf.contains("person_box") && !jf["person_box"].is_null())
        f.person_box = box_from_json(jf["person_box"]);
    if (jf.contains("person_feature") && !jf["person_feature"].is_null())
        f.person_feature = vec_from_json(jf["person_feature"]);
    if (jf.contains("keypoints") && !jf["keypoints"].is_null()) {
        Keypoints k;
        for (const auto& jk : jf["keypoints"]) {
            if (!jk.is_array() || jk.size() != 3)
                throw std::runtime_error("keypoint must be a [x,y,visible] array");
            k.points.push_back({jk[0].get<double>(), jk[1].get<double>()});
            k.visible.push_back(jk[2].get<double>() != 0.0);
        }
        f.keypoints = std::move(k);
    }
    return f;
}

} // namespace

std::string serialize_dataset(const Dataset& ds) {
    ordered_json root;
    ordered_json task;
    task["actions"] = ds.task.actions;
    task["objects"] = ds.task.objects;
    task["action_to_object"] = ds.task.action_to_object;
    task["num_keypoints"] = ds.task.num_keypoints;
    task["feature_dim"] = ds.task.feature_dim;
    root["task"] = std::move(task);

    ordered_json samples = ordered_json::array();
    for (const Sample& s : ds.samples) {
        ordered_json js;
        js["id"] = s.id;
        js["action_labels"] = std::vector<int>(s.action_labels.begin(),
                                               s.action_labels.end());
        if (!s.gt_boxes.empty()) {
            ordered_json gts = ordered_json::array();
            for (const GtBox& g : s.gt_boxes) {
                ordered_json jg;
                jg["object"] = g.object;
                jg["box"] = box_to_json(g.box);
                gts.push_back(std::move(jg));
            }
            js["gt_boxes"] = std::move(gts);
        }
        ordered_json frames = ordered_json::array();
        for (const Frame& f : s.frames) frames.push_back(frame_to_json(f));
        js["frames"] = std::move(frames);
        samples.push_back(std::move(js));
    }
    root["samples"] = std::move(samples);
    return root.dump(1);
}

void save_dataset(const std::string& path, const Dataset& ds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << serialize_dataset(ds) << "\n";
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset: " + path);
    ordered_json root;
    try {
        in >> root;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed JSON in " + path + ": " + e.what());
    }

    Dataset ds;
    std::string current = "<task>";
    try {
        const auto& jt = root.at("task");
        ds.task.actions = jt.at("actions").get<std::vector<std::string>>();
        ds.task.objects = jt.at("objects").get<std::vector<std::string>>();
        ds.task.action_to_object = jt.at("action_to_object").get<std::vector<int>>();
        ds.task.num_keypoints = jt.at("num_keypoints").get<int>();
        ds.task.feature_dim = jt.at("feature_dim").get<int>();

        for (const auto& js : root.at("samples")) {
            Sample s;
            s.id = js.at("id").get<std::string>();
            current = s.id;
            for (const auto& a : js.at("action_labels"))
                s.action_labels.insert(a.get<int>());
            if (js.contains("gt_boxes") && !js["gt_boxes"].is_null()) {
                for (const auto& jg : js["gt_boxes"]) {
                    GtBox g;
                    g.object = jg.at("object").get<int>();
                    g.box = box_from_json(jg.at("box"));
                    s.gt_boxes.push_back(g);
                }
            }
            for (const auto& jf : js.at("frames")) s.frames.push_back(frame_from_json(jf));
            ds.samples.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("sample '" + current + "': " + e.what());
    }
    validate_dataset(ds);
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

namespace {

// Stick-figure template, center-relative. Indices follow keypoint_names().
const std::vector<Point2>& figure_template() {
    // Spans about 0.28 vertically at unit scale; small enough that scaled,
    // translated and jittered figures rarely push planted boxes against
    // the frame border (border clamps would distort the offset density).
    static const std::vector<Point2> tmpl = {
        {0.000, -0.126},              // head
        {-0.036, -0.076}, {0.036, -0.076}, // shoulders
        {-0.063, -0.022}, {0.063, -0.022}, // elbows
        {-0.076, 0.036},  {0.076, 0.036},  // wrists
        {-0.022, 0.018},  {0.022, 0.018},  // hips
        {-0.027, 0.086},  {0.027, 0.086},  // knees
        {-0.032, 0.149},  {0.032, 0.149},  // ankles
    };
    return tmpl;
}

Keypoints sample_figure(const SyntheticConfig& cfg, Rng& rng) {
    const auto& tmpl = figure_template();
    const double s = rng.uniform(cfg.scale_min, cfg.scale_max);
    // Mirroring keeps joint identities (a flipped figure's right wrist is
    // still keypoint 6) but swaps the sides their positions fall on.
    const double flip = rng.uniform() < cfg.mirror_prob ? -1.0 : 1.0;
    const Point2 base{0.5 + rng.uniform(-cfg.translation_extent, cfg.translation_extent),
                      0.5 + rng.uniform(-cfg.translation_extent, cfg.translation_extent)};
    Keypoints k;
    for (int p = 0; p < cfg.n_keypoints; ++p) {
        const Point2 t = tmpl[static_cast<std::size_t>(p) % tmpl.size()];
        k.points.push_back({base.x + s * flip * t.x + rng.normal(0.0, cfg.joint_jitter),
                            base.y + s * t.y + rng.normal(0.0, cfg.joint_jitter)});
        k.visible.push_back(true);
    }
    return k;
}

BBox person_box_of(const Keypoints& k) {
    double x1 = k.points[0].x, x2 = x1, y1 = k.points[0].y, y2 = y1;
    for (const Point2& p : k.points) {
        x1 = std::min(x1, p.x);
        x2 = std::max(x2, p.x);
        y1 = std::min(y1, p.y);
        y2 = std::max(y2, p.y);
    }
    const double dw = 0.05 * (x2 - x1), dh = 0.05 * (y2 - y1);
    return BBox{x1 - dw, y1 - dh, x2 + dw, y2 + dh};
}

BBox box_around(Point2 c, double w, double h) {
    return BBox{c.x - w / 2.0, c.y - h / 2.0, c.x + w / 2.0, c.y + h / 2.0};
}

bool in_frame(const BBox& b) {
    return b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= 1.0 && b.y2 <= 1.0;
}

BBox clamp_to_frame(BBox b) {
    b.x1 = std::clamp(b.x1, 0.0, 1.0);
    b.y1 = std::clamp(b.y1, 0.0, 1.0);
    b.x2 = std::clamp(b.x2, b.x1, 1.0);
    b.y2 = std::clamp(b.y2, b.y1, 1.0);
    return b;
}

Eigen::VectorXd noisy(const Eigen::VectorXd& proto, double noise, Rng& rng) {
    Eigen::VectorXd v = proto;
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += rng.normal(0.0, noise);
    return v;
}

Eigen::VectorXd random_unit(int dim, Rng& rng) {
    Eigen::VectorXd v(dim);
    for (int i = 0; i < dim; ++i) v(i) = rng.normal();
    const double n = v.norm();
    return n > 0 ? Eigen::VectorXd(v / n) : random_unit(dim, rng);
}

} // namespace

void SyntheticConfig::finalize() {
    // Deterministic defaults: cycle through a preferred set of anchor
    // keypoints and offsets so that every action has a distinct planted
    // structure without requiring explicit configuration.
    // The first anchors come in left/right pairs (wrists, then knees): with
    // mirroring on, a frame-anchored prior sees identical position
    // distributions for a pair's two joints and cannot tell their actions
    // apart, while a keypoint-anchored prior separates them by index.
    static const int default_anchors[] = {6, 5, 10, 9, 0, 12, 4, 8};
    // Default offsets point outward from the figure so each planted box
    // stays closer to its own anchor joint than to any neighboring joint.
    static const Point2 default_mu[] = {
        {0.030, 0.004}, {-0.026, 0.012}, {0.035, 0.000}, {-0.028, 0.010},
        {-0.036, -0.013}, {0.018, 0.036}, {-0.027, 0.022}, {0.040, -0.018}};
    for (int a = static_cast<int>(planted_anchor.size()); a < n_actions; ++a)
        planted_anchor.push_back(default_anchors[a % 8] % n_keypoints);
    for (int a = static_cast<int>(planted_mu.size()); a < n_actions; ++a)
        planted_mu.push_back(default_mu[a % 8]);
    for (int a = static_cast<int>(planted_sigma.size()); a < n_actions; ++a)
        planted_sigma.push_back({0.012, 0.012});

    if (n_actions < 1 || n_objects < 1) throw std::runtime_error("synthetic: empty task");
    if (feature_dim < 1 || n_keypoints < 1) throw std::runtime_error("synthetic: bad dims");
    if (frames_per_clip < 1) throw std::runtime_error("synthetic: frames_per_clip < 1");
    if (distractor_spread <= 0.0)
        throw std::runtime_error("synthetic: distractor_spread must be > 0");
    if (co_occur < 0.0 || co_occur > 1.0)
        throw std::runtime_error("synthetic: co_occur must be in [0,1]");
    if (mirror_prob < 0.0 || mirror_prob > 1.0)
        throw std::runtime_error("synthetic: mirror_prob must be in [0,1]");
    for (int a = 0; a < n_actions; ++a) {
        if (planted_anchor[a] < 0 || planted_anchor[a] >= n_keypoints)
            throw std::runtime_error("synthetic: planted anchor out of range");
        if (planted_sigma[a].x < 1e-3 || planted_sigma[a].y < 1e-3)
            throw std::runtime_error("synthetic: planted sigma below 1e-3");
    }
}

SyntheticDataset generate_synthetic(const SyntheticConfig& cfg_in) {
    SyntheticConfig cfg = cfg_in;
    cfg.finalize();

    SyntheticDataset out;
    TaskSpec& task = out.task;
    for (int a = 0; a < cfg.n_actions; ++a) {
        task.actions.push_back("action_" + std::to_string(a));
        task.action_to_object.push_back(a % cfg.n_objects);
    }
    for (int o = 0; o < cfg.n_objects; ++o)
        task.objects.push_back("object_" + std::to_string(o));
    task.num_keypoints = cfg.n_keypoints;
    task.feature_dim = cfg.feature_dim;

    Rng rng(cfg.seed);

    // Object prototypes, one background, one person; pairwise distinct.
    std::vector<Eigen::VectorXd> protos;
    while (static_cast<int>(protos.size()) < cfg.n_objects + 2) {
        Eigen::VectorXd cand = random_unit(cfg.feature_dim, rng);
        bool distinct = true;
        for (const auto& p : protos)
            if (std::abs(p.dot(cand)) > 0.95) distinct = false;
        if (distinct) protos.push_back(std::move(cand));
    }
    const Eigen::VectorXd& background = protos[static_cast<std::size_t>(cfg.n_objects)];
    const Eigen::VectorXd& person_proto = protos[static_cast<std::size_t>(cfg.n_objects) + 1];

    auto make_sample = [&](int action, const std::string& id) {
        Sample s;
        s.id = id;
        s.action_labels.insert(action);
        const int obj = task.action_to_object[static_cast<std::size_t>(action)];

        const Keypoints kps = sample_figure(cfg, rng);
        const Point2 anchor = kps.points[static_cast<std::size_t>(cfg.planted_anchor[action])];

        auto place_box = [&](int act) {
            const Point2 kp =
                kps.points[static_cast<std::size_t>(cfg.planted_anchor[act])];
            const double bw = rng.uniform(cfg.box_size_min, cfg.box_size_max);
            const double bh = rng.uniform(cfg.box_size_min, cfg.box_size_max);
            BBox box{};
            bool placed = false;
            for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
                const Point2 c{kp.x + rng.normal(cfg.planted_mu[act].x,
                                                 cfg.planted_sigma[act].x),
                               kp.y + rng.normal(cfg.planted_mu[act].y,
                                                 cfg.planted_sigma[act].y)};
                box = box_around(c, bw, bh);
                placed = in_frame(box);
            }
            if (!placed) box = clamp_to_frame(box);
            return box;
        };

        const BBox true_box = place_box(action);
        s.gt_boxes.push_back({obj, true_box});

        // Unlabeled co-occurring objects sit at their own anchor keypoints.
        // They make bag-level feature statistics ambiguous (every prototype
        // appears under every action label), so the action label localizes
        // an object only through spatial gating.
        std::vector<std::pair<int, BBox>> extras;
        for (int a2 = 0; a2 < cfg.n_actions; ++a2) {
            const int obj2 = task.action_to_object[static_cast<std::size_t>(a2)];
            if (a2 == action || obj2 == obj) continue;
            bool dup = false;
            for (const auto& e : extras) dup = dup || e.first == obj2;
            if (dup || rng.uniform() >= cfg.co_occur) continue;
            extras.emplace_back(obj2, place_box(a2));
        }
        for (const auto& [obj2, box2] : extras) s.gt_boxes.push_back({obj2, box2});

        const BBox person = person_box_of(kps);
        for (int fi = 0; fi < cfg.frames_per_clip; ++fi) {
            Frame f;
            f.keypoints = kps;
            f.person_box = person;
            f.person_feature = noisy(person_proto, cfg.feature_noise, rng);

            Proposal tp;
            tp.box = true_box;
            tp.confidence = rng.uniform(0.5, 1.0);
            tp.feature = noisy(protos[static_cast<std::size_t>(obj)], cfg.feature_noise, rng);
            f.proposals.push_back(std::move(tp));
            for (const auto& [obj2, box2] : extras) {
                Proposal cp;
                cp.box = box2;
                cp.confidence = rng.uniform(0.5, 1.0);
                cp.feature =
                    noisy(protos[static_cast<std::size_t>(obj2)], cfg.feature_noise, rng);
                f.proposals.push_back(std::move(cp));
            }
            for (int d = 0; d < cfg.distractors; ++d) {
                Proposal dp;
                const double w = rng.uniform(cfg.box_size_min, cfg.box_size_max);
                const double h = rng.uniform(cfg.box_size_min, cfg.box_size_max);
                // Distractors cluster isotropically around the anchor
                // keypoint: they ride the figure, so frame-centrality
                // carries no localization signal, and they surround the
                // true box from every side, so only a Gaussian matched to
                // the planted offset density separates it.
                const Point2 c{std::clamp(rng.normal(anchor.x, cfg.distractor_spread),
                                          w / 2.0, 1.0 - w / 2.0),
                               std::clamp(rng.normal(anchor.y, cfg.distractor_spread),
                                          h / 2.0, 1.0 - h / 2.0)};
                dp.box = box_around(c, w, h);
                dp.confidence = rng.uniform(0.2, 0.95);
                dp.feature = noisy(background, cfg.feature_noise, rng);
                f.proposals.push_back(std::move(dp));
            }
            rng.shuffle(f.proposals);
            s.frames.push_back(std::move(f));
        }
        return s;
    };

    auto fill = [&](std::vector<Sample>& dst, const char* tag, int per_action) {
        for (int a = 0; a < cfg.n_actions; ++a)
            for (int i = 0; i < per_action; ++i)
                dst.push_back(make_sample(a, std::string(tag) + "_a" + std::to_string(a) +
                                                 "_" + std::to_string(i)));
    };
    fill(out.train, "train", cfg.train_per_action);
    fill(out.val, "val", cfg.val_per_action);
    fill(out.test, "test", cfg.test_per_action);
    return out;
}

std::vector<std::vector<Sample>> split(const std::vector<Sample>& samples,
                                       const std::vector<double>& fractions,
                                       std::uint64_t seed) {
    double total = 0.0;
    for (double f : fractions) {
        if (f < 0.0) throw std::invalid_argument("split: negative fraction");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("split: fractions must sum to 1");

    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    std::vector<std::size_t> counts(fractions.size());
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < fractions.size(); ++k) {
        counts[k] = static_cast<std::size_t>(fractions[k] * static_cast<double>(samples.size()));
        assigned += counts[k];
    }
    for (std::size_t k = 0; assigned < samples.size(); k = (k + 1) % counts.size()) {
        counts[k] += 1;
        assigned += 1;
    }

    std::vector<std::vector<Sample>> parts(fractions.size());
    std::size_t at = 0;
    for (std::size_t k = 0; k < counts.size(); ++k)
        for (std::size_t i = 0; i < counts[k]; ++i)
            parts[k].push_back(samples[order[at++]]);
    return parts;
}

LabelVectors derive_labels(const TaskSpec& task, const Sample& sample) {
    LabelVectors lv;
    lv.y_a = Eigen::VectorXd::Zero(task.n_actions());
    lv.y_o = Eigen::VectorXd::Zero(task.n_objects());
    for (int a : sample.action_labels) {
        lv.y_a(a) = 1.0;
        lv.y_o(task.action_to_object[static_cast<std::size_t>(a)]) = 1.0;
    }
    return lv;
}

} // namespace wsod
