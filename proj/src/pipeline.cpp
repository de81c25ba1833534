#include "wsod/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "wsod/temporal.hpp"

namespace wsod {

using ordered_json = nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// Flat key=value config format
// ---------------------------------------------------------------------------

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::map<std::string, std::string> parse_kv(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        ": expected key = value");
        const std::string key = trim(t.substr(0, eq));
        const std::string val = trim(t.substr(eq + 1));
        if (key.empty())
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        ": empty key");
        if (!kv.emplace(key, val).second)
            throw std::invalid_argument("config: duplicate key: " + key);
    }
    return kv;
}

double to_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad number for " + key + ": " + v);
    }
    if (used != v.size())
        throw std::invalid_argument("config: bad number for " + key + ": " + v);
    return x;
}

int to_int(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    long x = 0;
    try {
        x = std::stol(v, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad integer for " + key + ": " + v);
    }
    if (used != v.size())
        throw std::invalid_argument("config: bad integer for " + key + ": " + v);
    return static_cast<int>(x);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    unsigned long long x = 0;
    try {
        x = std::stoull(v, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad integer for " + key + ": " + v);
    }
    if (used != v.size())
        throw std::invalid_argument("config: bad integer for " + key + ": " + v);
    return static_cast<std::uint64_t>(x);
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config: bad boolean for " + key + ": " + v);
}

// Shortest round-trip rendering, shared with the JSON writers so that the
// canonical config text is reproducible.
std::string num(double x) { return ordered_json(x).dump(); }

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> parts;
    std::string cur;
    std::istringstream in(v);
    while (std::getline(in, cur, ',')) {
        cur = trim(cur);
        if (!cur.empty()) parts.push_back(cur);
    }
    return parts;
}

Point2 to_pair(const std::string& key, const std::string& v) {
    const auto colon = v.find(':');
    if (colon == std::string::npos)
        throw std::invalid_argument("config: expected x:y pair for " + key + ": " + v);
    return {to_double(key, trim(v.substr(0, colon))),
            to_double(key, trim(v.substr(colon + 1)))};
}

} // namespace

void TrainConfig::validate() const {
    auto bad = [](const std::string& what) {
        throw std::invalid_argument("config: " + what);
    };
    if (epochs < 1) bad("epochs must be >= 1");
    if (batch_size < 1) bad("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) bad("learning_rate must be > 0");
    if (alpha_o < 0.0 || alpha_a < 0.0) bad("loss weights must be >= 0");
    if (theta_h < 0.0 || theta_h > 1.0) bad("theta_h must be in [0,1]");
    if (n_r < 1) bad("n_r must be >= 1");
    if (frames < 1) bad("frames must be >= 1");
    if (prior_variant != "normal" && prior_variant != "grid" && prior_variant != "center")
        bad("prior_variant must be normal, grid or center");
    if (loss_style != "paper" && loss_style != "sigmoid_bce")
        bad("loss_style must be paper or sigmoid_bce");
    if (supervised_fraction < 0.0 || supervised_fraction > 1.0)
        bad("supervised_fraction must be in [0,1]");
    if (link_lambda < 0.0) bad("link_lambda must be >= 0");
    if (tubelets < 1) bad("tubelets must be >= 1");
    if (nms_threshold < 0.0 || nms_threshold > 1.0) bad("nms_threshold must be in [0,1]");
    if (score_threshold < 0.0 || score_threshold > 1.0)
        bad("score_threshold must be in [0,1]");
    if (hidden < 1) bad("hidden must be >= 1");
    if (sigma_init < 1e-3) bad("sigma_init must be >= 1e-3");
}

PriorVariant TrainConfig::variant() const {
    if (prior_variant == "normal") return PriorVariant::Normal;
    if (prior_variant == "grid") return PriorVariant::Grid;
    if (prior_variant == "center") return PriorVariant::Center;
    throw std::invalid_argument("config: unknown prior_variant: " + prior_variant);
}

LossStyle TrainConfig::style() const {
    if (loss_style == "paper") return LossStyle::Paper;
    if (loss_style == "sigmoid_bce") return LossStyle::SigmoidBce;
    throw std::invalid_argument("config: unknown loss_style: " + loss_style);
}

TrainConfig parse_train_config(const std::string& text) {
    TrainConfig c;
    for (const auto& [key, val] : parse_kv(text)) {
        if (key == "epochs") c.epochs = to_int(key, val);
        else if (key == "batch_size") c.batch_size = to_int(key, val);
        else if (key == "learning_rate") c.learning_rate = to_double(key, val);
        else if (key == "alpha_o") c.alpha_o = to_double(key, val);
        else if (key == "alpha_a") c.alpha_a = to_double(key, val);
        else if (key == "theta_h") c.theta_h = to_double(key, val);
        else if (key == "n_r") c.n_r = to_int(key, val);
        else if (key == "frames") c.frames = to_int(key, val);
        else if (key == "prior_variant") c.prior_variant = val;
        else if (key == "learn_mu") c.learn_mu = to_bool(key, val);
        else if (key == "learn_sigma") c.learn_sigma = to_bool(key, val);
        else if (key == "prior_normalize") c.prior_normalize = to_bool(key, val);
        else if (key == "loss_style") c.loss_style = val;
        else if (key == "supervised_fraction") c.supervised_fraction = to_double(key, val);
        else if (key == "link_lambda") c.link_lambda = to_double(key, val);
        else if (key == "tubelets") c.tubelets = to_int(key, val);
        else if (key == "nms_threshold") c.nms_threshold = to_double(key, val);
        else if (key == "score_threshold") c.score_threshold = to_double(key, val);
        else if (key == "seed") c.seed = to_u64(key, val);
        else if (key == "hidden") c.hidden = to_int(key, val);
        else if (key == "sigma_init") c.sigma_init = to_double(key, val);
        else throw std::invalid_argument("config: unknown key: " + key);
    }
    c.validate();
    return c;
}

TrainConfig load_train_config(const std::string& path) {
    return parse_train_config(read_file(path));
}

std::string serialize_train_config(const TrainConfig& c) {
    std::ostringstream out;
    out << "epochs = " << c.epochs << "\n"
        << "batch_size = " << c.batch_size << "\n"
        << "learning_rate = " << num(c.learning_rate) << "\n"
        << "alpha_o = " << num(c.alpha_o) << "\n"
        << "alpha_a = " << num(c.alpha_a) << "\n"
        << "theta_h = " << num(c.theta_h) << "\n"
        << "n_r = " << c.n_r << "\n"
        << "frames = " << c.frames << "\n"
        << "prior_variant = " << c.prior_variant << "\n"
        << "learn_mu = " << (c.learn_mu ? "true" : "false") << "\n"
        << "learn_sigma = " << (c.learn_sigma ? "true" : "false") << "\n"
        << "prior_normalize = " << (c.prior_normalize ? "true" : "false") << "\n"
        << "loss_style = " << c.loss_style << "\n"
        << "supervised_fraction = " << num(c.supervised_fraction) << "\n"
        << "link_lambda = " << num(c.link_lambda) << "\n"
        << "tubelets = " << c.tubelets << "\n"
        << "nms_threshold = " << num(c.nms_threshold) << "\n"
        << "score_threshold = " << num(c.score_threshold) << "\n"
        << "seed = " << c.seed << "\n"
        << "hidden = " << c.hidden << "\n"
        << "sigma_init = " << num(c.sigma_init) << "\n";
    return out.str();
}

std::uint64_t config_hash(const TrainConfig& cfg) {
    return fnv1a64(serialize_train_config(cfg));
}

SyntheticConfig parse_synth_config(const std::string& text) {
    SyntheticConfig c;
    for (const auto& [key, val] : parse_kv(text)) {
        if (key == "n_actions") c.n_actions = to_int(key, val);
        else if (key == "n_objects") c.n_objects = to_int(key, val);
        else if (key == "n_keypoints") c.n_keypoints = to_int(key, val);
        else if (key == "feature_dim") c.feature_dim = to_int(key, val);
        else if (key == "planted_anchor") {
            c.planted_anchor.clear();
            for (const std::string& s : split_list(val))
                c.planted_anchor.push_back(to_int(key, s));
        } else if (key == "planted_mu") {
            c.planted_mu.clear();
            for (const std::string& s : split_list(val))
                c.planted_mu.push_back(to_pair(key, s));
        } else if (key == "planted_sigma") {
            c.planted_sigma.clear();
            for (const std::string& s : split_list(val))
                c.planted_sigma.push_back(to_pair(key, s));
        }
        else if (key == "distractors") c.distractors = to_int(key, val);
        else if (key == "distractor_spread") c.distractor_spread = to_double(key, val);
        else if (key == "co_occur") c.co_occur = to_double(key, val);
        else if (key == "mirror_prob") c.mirror_prob = to_double(key, val);
        else if (key == "feature_noise") c.feature_noise = to_double(key, val);
        else if (key == "train_per_action") c.train_per_action = to_int(key, val);
        else if (key == "val_per_action") c.val_per_action = to_int(key, val);
        else if (key == "test_per_action") c.test_per_action = to_int(key, val);
        else if (key == "frames_per_clip") c.frames_per_clip = to_int(key, val);
        else if (key == "joint_jitter") c.joint_jitter = to_double(key, val);
        else if (key == "translation_extent") c.translation_extent = to_double(key, val);
        else if (key == "scale_min") c.scale_min = to_double(key, val);
        else if (key == "scale_max") c.scale_max = to_double(key, val);
        else if (key == "box_size_min") c.box_size_min = to_double(key, val);
        else if (key == "box_size_max") c.box_size_max = to_double(key, val);
        else if (key == "seed") c.seed = to_u64(key, val);
        else throw std::invalid_argument("config: unknown key: " + key);
    }
    return c;
}

SyntheticConfig load_synth_config(const std::string& path) {
    return parse_synth_config(read_file(path));
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

ordered_json matrix_json(const Mat& m) {
    ordered_json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    ordered_json data = ordered_json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    j["data"] = std::move(data);
    return j;
}

Mat matrix_from_json(const ordered_json& j) {
    const Eigen::Index rows = j.at("rows").get<Eigen::Index>();
    const Eigen::Index cols = j.at("cols").get<Eigen::Index>();
    const auto& data = j.at("data");
    if (static_cast<Eigen::Index>(data.size()) != rows * cols)
        throw std::runtime_error("checkpoint matrix data length mismatch");
    Mat m(rows, cols);
    std::size_t at = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[at++].get<double>();
    return m;
}

ordered_json table_json(const ParamTable& t) {
    ordered_json j;
    for (const auto& [name, m] : t) j[name] = matrix_json(m);
    return j;
}

ParamTable table_from_json(const ordered_json& j) {
    ParamTable t;
    for (auto it = j.begin(); it != j.end(); ++it) t[it.key()] = matrix_from_json(*it);
    return t;
}

ordered_json task_json(const TaskSpec& task) {
    ordered_json j;
    j["actions"] = task.actions;
    j["objects"] = task.objects;
    j["action_to_object"] = task.action_to_object;
    j["num_keypoints"] = task.num_keypoints;
    j["feature_dim"] = task.feature_dim;
    return j;
}

TaskSpec task_from_json(const ordered_json& j) {
    TaskSpec t;
    t.actions = j.at("actions").get<std::vector<std::string>>();
    t.objects = j.at("objects").get<std::vector<std::string>>();
    t.action_to_object = j.at("action_to_object").get<std::vector<int>>();
    t.num_keypoints = j.at("num_keypoints").get<int>();
    t.feature_dim = j.at("feature_dim").get<int>();
    return t;
}

} // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    ordered_json root;
    root["format"] = "wsod-checkpoint-v1";
    root["config_hash"] = hash_hex(config_hash(ckpt.config));
    root["epoch"] = ckpt.epoch;
    root["config"] = serialize_train_config(ckpt.config);
    root["task"] = task_json(ckpt.task);
    root["params"] = table_json(ckpt.params);
    ordered_json adam;
    adam["t"] = ckpt.adam.t;
    adam["m"] = table_json(ckpt.adam.m);
    adam["v"] = table_json(ckpt.adam.v);
    root["adam"] = std::move(adam);
    return root.dump(1);
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << serialize_checkpoint(ckpt) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    ordered_json root;
    try {
        in >> root;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed JSON in " + path + ": " + e.what());
    }
    Checkpoint ckpt;
    try {
        ckpt.config = parse_train_config(root.at("config").get<std::string>());
        if (root.at("config_hash").get<std::string>() != hash_hex(config_hash(ckpt.config)))
            throw std::runtime_error("checkpoint config hash mismatch");
        ckpt.epoch = root.at("epoch").get<int>();
        ckpt.task = task_from_json(root.at("task"));
        ckpt.params = table_from_json(root.at("params"));
        const auto& adam = root.at("adam");
        ckpt.adam.t = adam.at("t").get<long>();
        ckpt.adam.m = table_from_json(adam.at("m"));
        ckpt.adam.v = table_from_json(adam.at("v"));
        ckpt.adam.lr = ckpt.config.learning_rate;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("bad checkpoint " + path + ": " + e.what());
    }
    return ckpt;
}

ModelParams checkpoint_model(const Checkpoint& ckpt) {
    ModelParams mp = ModelParams::init(ckpt.task, ckpt.config.variant(),
                                       ckpt.config.hidden, ckpt.config.sigma_init,
                                       ckpt.config.seed);
    mp.prior.learn_mu = ckpt.config.learn_mu;
    mp.prior.learn_sigma = ckpt.config.learn_sigma;
    mp.prior.normalize = ckpt.config.prior_normalize;
    mp.load_table(ckpt.params);
    return mp;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

UnitInputs make_units(const Sample& s, const TrainConfig& cfg) {
    if (s.frames.size() == 1)
        return image_units(s.frames[0], cfg.theta_h, cfg.n_r);
    const std::vector<int> idx =
        sample_frames(static_cast<int>(s.frames.size()), cfg.frames);
    std::vector<const Frame*> sampled;
    for (int i : idx) sampled.push_back(&s.frames[static_cast<std::size_t>(i)]);
    return tubelet_units(sampled, cfg.theta_h, cfg.n_r, cfg.link_lambda, cfg.tubelets);
}

} // namespace

TrainResult train(const TrainConfig& cfg, const Dataset& train_ds,
                  const Dataset& val_ds, std::ostream* log_stream) {
    cfg.validate();
    const TaskSpec& task = train_ds.task;
    if (train_ds.samples.empty()) throw std::invalid_argument("train: empty dataset");

    ModelParams mp = ModelParams::init(task, cfg.variant(), cfg.hidden,
                                       cfg.sigma_init, cfg.seed);
    mp.prior.learn_mu = cfg.learn_mu;
    mp.prior.learn_sigma = cfg.learn_sigma;
    mp.prior.normalize = cfg.prior_normalize;
    AdamState opt;
    opt.lr = cfg.learning_rate;
    const LossConfig lc{{cfg.alpha_o, cfg.alpha_a}, cfg.style(), kLogFloor};

    TrainResult res;
    const std::size_t N = train_ds.samples.size();
    std::vector<UnitInputs> units(N);
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < N; ++i) {
        const Sample& s = train_ds.samples[i];
        if (s.action_labels.empty()) {
            if (log_stream)
                *log_stream << "warning: sample '" << s.id
                            << "' skipped (no action label)\n";
            ++res.skipped_samples;
            continue;
        }
        units[i] = make_units(s, cfg);
        if (units[i].m == 0) {
            if (log_stream)
                *log_stream << "warning: sample '" << s.id
                            << "' skipped (no proposals left after filtering)\n";
            ++res.skipped_samples;
            continue;
        }
        usable.push_back(i);
    }
    if (usable.empty()) throw std::runtime_error("train: no usable samples");

    // The supervised subset is drawn once per run.
    std::vector<std::size_t> reveal_order(N);
    for (std::size_t i = 0; i < N; ++i) reveal_order[i] = i;
    Rng reveal_rng(cfg.seed ^ fnv1a64("reveal"));
    reveal_rng.shuffle(reveal_order);
    const std::size_t n_reveal = static_cast<std::size_t>(std::min<long long>(
        static_cast<long long>(N),
        std::llround(cfg.supervised_fraction * static_cast<double>(N))));
    std::vector<char> revealed(N, 0);
    for (std::size_t i = 0; i < n_reveal; ++i) revealed[reveal_order[i]] = 1;

    Rng order_rng(cfg.seed ^ fnv1a64("order"));
    std::vector<std::size_t> order = usable;

    double best_map = -1.0;
    bool have_best = false;
    const bool has_val = !val_ds.samples.empty();
    auto snapshot = [&](int epoch) {
        res.checkpoint = Checkpoint{cfg, task, mp.to_table(), opt, epoch};
        have_best = true;
    };

    for (int e = 0; e < cfg.epochs; ++e) {
        order_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t at = 0; at < order.size();
             at += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(
                order.size(), at + static_cast<std::size_t>(cfg.batch_size));
            GradTable acc;
            std::size_t n = 0;
            for (std::size_t oi = at; oi < end; ++oi) {
                const std::size_t idx = order[oi];
                const Sample& s = train_ds.samples[idx];
                Tape tape;
                const BoundModel bound = bind_model(tape, mp);
                SupervisedSelection sel;
                const SupervisedSelection* selp = nullptr;
                if (revealed[idx] && !s.gt_boxes.empty()) {
                    Rng srng(fnv1a64(std::to_string(cfg.seed) + ":sup:" +
                                     std::to_string(e) + ":" + s.id));
                    sel = select_supervised(units[idx].boxes, s.gt_boxes,
                                            task.n_objects(), srng);
                    if (!sel.rows.empty()) selp = &sel;
                }
                const SampleLossGraph g = sample_loss_graph(
                    tape, bound, mp, task, units[idx], s.action_labels, lc, selp);
                tape.backward(g.total);
                for (const auto& [name, grad] : tape.parameter_grads()) {
                    auto it = acc.find(name);
                    if (it == acc.end())
                        acc.emplace(name, grad);
                    else
                        it->second += grad;
                }
                loss_sum += tape.scalar(g.total);
                ++seen;
                ++n;
            }
            if (n == 0) continue;
            for (auto& [name, grad] : acc) grad /= static_cast<double>(n);
            ParamTable tbl = mp.to_table();
            adam_step(opt, tbl, acc);
            mp.load_table(tbl);
            clamp_sigma(mp.prior);
        }

        EpochLog el;
        el.epoch = e;
        el.mean_loss = seen > 0 ? loss_sum / static_cast<double>(seen) : 0.0;
        if (has_val) {
            el.val_map = evaluate(val_ds, infer(mp, cfg, val_ds)).map;
            if (el.val_map > best_map) {
                best_map = el.val_map;
                snapshot(e);
            }
        }
        res.log.push_back(el);
        if (log_stream) {
            *log_stream << "epoch " << e << " loss " << el.mean_loss;
            if (has_val) *log_stream << " val_map " << el.val_map;
            *log_stream << "\n";
        }
    }
    if (!have_best) snapshot(cfg.epochs - 1);
    return res;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

std::vector<Detection> infer(const ModelParams& params, const TrainConfig& cfg,
                             const Dataset& ds) {
    const LossStyle style = cfg.style();
    std::vector<Detection> dets;
    for (const Sample& s : ds.samples) {
        const Frame* frame = &s.frames.at(0);
        if (s.frames.size() > 1) {
            Rng frng(fnv1a64(std::to_string(cfg.seed) + ":frame:" + s.id));
            frame = &s.frames[static_cast<std::size_t>(
                frng.uniform_int(s.frames.size()))];
        }
        const std::size_t m = frame->proposals.size();
        if (m == 0) continue;
        Mat X(static_cast<Eigen::Index>(m), frame->proposals[0].feature.size());
        for (std::size_t r = 0; r < m; ++r)
            X.row(static_cast<Eigen::Index>(r)) = frame->proposals[r].feature.transpose();
        const Mat P = object_probabilities(head_forward(params.object_head, X), style);
        for (int c = 0; c < static_cast<int>(P.cols()); ++c) {
            std::vector<ScoredBox> cand;
            for (std::size_t r = 0; r < m; ++r)
                cand.push_back({frame->proposals[r].box,
                                P(static_cast<Eigen::Index>(r), c)});
            for (const ScoredBox& kept : nms(cand, cfg.nms_threshold))
                if (kept.score >= cfg.score_threshold)
                    dets.push_back({s.id, c, kept.box, kept.score});
        }
    }
    return dets;
}

// ---------------------------------------------------------------------------
// Gradient checking harness
// ---------------------------------------------------------------------------

namespace {

std::string group_of(const std::string& param_name) {
    if (param_name.rfind("prior.", 0) == 0) {
        const std::string field = param_name.substr(param_name.rfind('.') + 1);
        return field == "grid" ? "grid_logits" : field;
    }
    // head.<name>.<tensor>
    const auto second = param_name.find('.', 5);
    return param_name.substr(0, second);
}

// Randomized draw for one gradient check: a tiny task, perturbed
// parameters, direct unit inputs (1 frame for images, 2 for clips) and an
// occasional supervised term.
struct GradCheckCase {
    TaskSpec task;
    ModelParams params;
    UnitInputs units;
    std::set<int> gt_actions;
    LossConfig loss;
    SupervisedSelection sel;
    bool has_sel = false;
};

GradCheckCase make_case(std::uint64_t seed) {
    Rng rng(fnv1a64("gradcheck:" + std::to_string(seed)));
    GradCheckCase c;
    c.task.actions = {"a0", "a1"};
    c.task.objects = {"o0", "o1", "o2"};
    c.task.action_to_object = {0, 1};
    c.task.num_keypoints = 5;
    c.task.feature_dim = 6;

    const PriorVariant variant = (seed % 3 == 0)   ? PriorVariant::Grid
                                 : (seed % 3 == 1) ? PriorVariant::Center
                                                   : PriorVariant::Normal;
    c.params = ModelParams::init(c.task, variant, 4, 0.25, seed);
    for (ActionPrior& ap : c.params.prior.actions) {
        for (Eigen::Index i = 0; i < ap.key_logits.size(); ++i)
            ap.key_logits(i) = rng.normal(0.0, 0.7);
        ap.mu = Eigen::Vector2d(rng.normal(0.0, 0.08), rng.normal(0.0, 0.08));
        ap.log_sigma = Eigen::Vector2d(std::log(0.25) + rng.normal(0.0, 0.3),
                                       std::log(0.25) + rng.normal(0.0, 0.3));
        for (int r = 0; r < 3; ++r)
            for (int col = 0; col < 3; ++col) ap.grid_logits(r, col) = rng.normal(0.0, 0.7);
    }

    const int m = 4;
    const std::size_t T = (seed % 2 == 1) ? 2 : 1;
    c.units.m = m;
    for (std::size_t f = 0; f < T; ++f) {
        Mat X(m, c.task.feature_dim);
        for (Eigen::Index r = 0; r < X.rows(); ++r)
            for (Eigen::Index j = 0; j < X.cols(); ++j) X(r, j) = rng.normal(0.0, 1.0);
        std::vector<Point2> ctrs;
        for (int r = 0; r < m; ++r)
            ctrs.push_back({rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)});
        Keypoints kps;
        for (int p = 0; p < c.task.num_keypoints; ++p) {
            kps.points.push_back({rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)});
            kps.visible.push_back(true);
        }
        if (seed % 5 == 0) kps.visible[static_cast<std::size_t>(seed) % kps.size()] = false;
        c.units.features.push_back(std::move(X));
        c.units.centers.push_back(ctrs);
        c.units.keypoints.push_back(std::move(kps));
        if (f == 0)
            for (const Point2& ct : ctrs) {
                const double w = rng.uniform(0.08, 0.2);
                c.units.boxes.push_back(
                    {ct.x - w / 2.0, ct.y - w / 2.0, ct.x + w / 2.0, ct.y + w / 2.0});
            }
    }
    if (seed % 7 != 0) {
        Eigen::VectorXd h(c.task.feature_dim);
        for (Eigen::Index i = 0; i < h.size(); ++i) h(i) = rng.normal(0.0, 1.0);
        c.units.person_feature = h;
    }

    c.gt_actions = (seed % 4 == 0) ? std::set<int>{0, 1}
                                   : std::set<int>{static_cast<int>(seed % 2)};
    c.loss.hw = {2.0, 1.0};
    c.loss.style = (seed % 11 == 0) ? LossStyle::SigmoidBce : LossStyle::Paper;

    if (seed % 3 == 0) {
        std::vector<GtBox> gts;
        gts.push_back({static_cast<int>(seed % 3), c.units.boxes[0]});
        c.sel = select_supervised(c.units.boxes, gts, c.task.n_objects(), rng);
        c.has_sel = !c.sel.rows.empty();
    }
    return c;
}

// Finite differences assume local smoothness; reject draws close to a relu
// kink, a probability clamp or a grid cell edge.
bool fd_safe(const GradCheckCase& c, const Tape& tape, const SampleLossGraph& g) {
    for (Var p : g.preacts)
        if (tape.value(p).cwiseAbs().minCoeff() < 1e-3) return false;
    auto probs_ok = [](const Mat& P) {
        return P.minCoeff() > 1e-2 && P.maxCoeff() < 1.0 - 1e-2;
    };
    if (!probs_ok(tape.value(g.unit_probs))) return false;
    if (!probs_ok(tape.value(g.action_probs))) return false;
    if (c.params.prior.variant == PriorVariant::Grid) {
        for (std::size_t f = 0; f < c.units.centers.size(); ++f)
            for (int a = 0; a < c.task.n_actions(); ++a) {
                const Point2 anchor = anchor_location(
                    c.params.prior, a, c.units.keypoints[f], frame_center());
                for (const Point2& ct : c.units.centers[f]) {
                    const double edges[] = {-0.5, -1.0 / 6.0, 1.0 / 6.0, 0.5};
                    for (const double off : {ct.x - anchor.x, ct.y - anchor.y})
                        for (const double edge : edges)
                            if (std::abs(off - edge) < 1e-3) return false;
                }
            }
    }
    return true;
}

} // namespace

GradCheckReport run_gradcheck(std::uint64_t base_seed, int count) {
    GradCheckReport rep;
    for (const char* g : {"key_logits", "mu", "log_sigma", "grid_logits",
                          "head.object", "head.action_obj", "head.action_person"})
        rep.group_max_err[g] = 0.0;

    std::uint64_t cursor = 0;
    while (rep.seeds_checked < count) {
        const std::uint64_t seed = base_seed + cursor;
        ++cursor;
        const GradCheckCase c = make_case(seed);

        Tape tape;
        const BoundModel bound = bind_model(tape, c.params);
        const SampleLossGraph g =
            sample_loss_graph(tape, bound, c.params, c.task, c.units, c.gt_actions,
                              c.loss, c.has_sel ? &c.sel : nullptr);
        if (!fd_safe(c, tape, g)) {
            ++rep.seeds_skipped;
            continue;
        }
        tape.backward(g.total);
        const GradTable analytic = tape.parameter_grads();
        const ParamTable base = c.params.to_table();

        const auto f = [&](const ParamTable& p) {
            ModelParams m2 = c.params;
            m2.load_table(p);
            Tape t2;
            const BoundModel b2 = bind_model(t2, m2);
            const SampleLossGraph g2 =
                sample_loss_graph(t2, b2, m2, c.task, c.units, c.gt_actions, c.loss,
                                  c.has_sel ? &c.sel : nullptr);
            return t2.scalar(g2.total);
        };

        std::map<std::string, GradTable> by_group;
        for (const auto& [name, grad] : analytic) by_group[group_of(name)][name] = grad;
        for (const auto& [group, subset] : by_group) {
            const double err = grad_check(f, base, subset, 1e-5);
            rep.group_max_err[group] = std::max(rep.group_max_err[group], err);
        }
        ++rep.seeds_checked;
    }
    return rep;
}

} // namespace wsod
