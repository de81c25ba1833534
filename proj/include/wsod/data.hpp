#pragma once

#include <Eigen/Dense>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "wsod/geometry.hpp"
#include "wsod/prior.hpp"
#include "wsod/rng.hpp"

namespace wsod {

/// Task vocabulary: action and object class names, the action-to-object
/// map o_a (one object involved in each action), keypoint count and the
/// proposal feature dimension.
struct TaskSpec {
    std::vector<std::string> actions;
    std::vector<std::string> objects;
    std::vector<int> action_to_object;
    int num_keypoints = 13;
    int feature_dim = 32;

    int n_actions() const { return static_cast<int>(actions.size()); }
    int n_objects() const { return static_cast<int>(objects.size()); }
};

struct Proposal {
    BBox box;
    double confidence = 0.0;
    Eigen::VectorXd feature;
};

struct Frame {
    std::vector<Proposal> proposals;
    std::optional<BBox> person_box;
    std::optional<Eigen::VectorXd> person_feature;
    std::optional<Keypoints> keypoints;
};

struct GtBox {
    int object = 0;
    BBox box;
};

/// One training/evaluation instance: a single image (one frame) or a clip.
struct Sample {
    std::string id;
    std::vector<Frame> frames;
    std::set<int> action_labels;
    std::vector<GtBox> gt_boxes; // evaluation / supervised mixing only
};

struct Dataset {
    TaskSpec task;
    std::vector<Sample> samples;
};

/// Validates structural invariants (feature dims, id ranges, keypoint
/// counts). Throws std::runtime_error naming the offending sample and field.
void validate_dataset(const Dataset& ds);

/// Reads a `.wsod.json` dataset file and validates it.
Dataset load_dataset(const std::string& path);

/// Serializes a dataset; deterministic byte-for-byte given equal contents.
std::string serialize_dataset(const Dataset& ds);
void save_dataset(const std::string& path, const Dataset& ds);

/// Configuration of the synthetic benchmark generator. Every learned
/// quantity has a planted ground-truth counterpart: the anchor keypoint
/// pi*(a), the offset mean mu*_a and spread sigma*_a of the true object
/// box around it.
struct SyntheticConfig {
    int n_actions = 4;
    int n_objects = 4;
    int n_keypoints = 13;
    int feature_dim = 32;

    std::vector<int> planted_anchor;      // pi*(a); defaults applied per action
    std::vector<Point2> planted_mu;       // mu*_a
    std::vector<Point2> planted_sigma;    // sigma*_a (>= 1e-3 per axis)

    int distractors = 8;                  // per frame
    double distractor_spread = 0.12;      // distractor center std around the anchor
    double co_occur = 0.6;                // chance each other object shares the scene
    double mirror_prob = 0.5;             // chance the figure faces the other way
    double feature_noise = 0.3;
    int train_per_action = 200;
    int val_per_action = 30;
    int test_per_action = 50;
    int frames_per_clip = 1;

    double joint_jitter = 0.03;           // per-joint articulation noise
    double translation_extent = 0.2;      // global figure translation range
    double scale_min = 0.75, scale_max = 1.25;
    double box_size_min = 0.04, box_size_max = 0.06;

    std::uint64_t seed = 0;

    /// Fills planted_* with the documented defaults for any action missing
    /// an entry, and checks invariants.
    void finalize();
};

struct SyntheticDataset {
    TaskSpec task;
    std::vector<Sample> train;
    std::vector<Sample> val;
    std::vector<Sample> test;
};

/// Deterministic synthetic scene generator. Each sample of action a draws a
/// stick-figure keypoint layout; the true object box is centered at
/// k(pi*(a)) + Normal(mu*_a, sigma*_a^2) and carries the object prototype
/// feature, while distractor proposals get random boxes and background
/// features. The true box is recorded in gt_boxes.
SyntheticDataset generate_synthetic(const SyntheticConfig& cfg);

/// Seeded, disjoint, exhaustive partition of samples. Fractions must sum
/// to 1 (within 1e-9).
std::vector<std::vector<Sample>> split(const std::vector<Sample>& samples,
                                       const std::vector<double>& fractions,
                                       std::uint64_t seed);

/// 13-keypoint naming used by the default template.
const std::vector<std::string>& keypoint_names();

/// Multi-hot action/object label vectors of a sample under a task.
struct LabelVectors {
    Eigen::VectorXd y_a;
    Eigen::VectorXd y_o;
};

LabelVectors derive_labels(const TaskSpec& task, const Sample& sample);

} // namespace wsod
