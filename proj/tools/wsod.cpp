#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "wsod/data.hpp"
#include "wsod/eval.hpp"
#include "wsod/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

wsod::Dataset load_split(const std::string& data_dir, const std::string& split) {
    return wsod::load_dataset((fs::path(data_dir) / (split + ".wsod.json")).string());
}

int run_synth(const std::string& config_path, const std::string& out_dir) {
    wsod::SyntheticConfig cfg = wsod::load_synth_config(config_path);
    const wsod::SyntheticDataset ds = wsod::generate_synthetic(cfg);
    fs::create_directories(out_dir);
    const fs::path out(out_dir);
    wsod::save_dataset((out / "train.wsod.json").string(), {ds.task, ds.train});
    wsod::save_dataset((out / "val.wsod.json").string(), {ds.task, ds.val});
    wsod::save_dataset((out / "test.wsod.json").string(), {ds.task, ds.test});
    std::cout << "wrote " << ds.train.size() << " train, " << ds.val.size()
              << " val, " << ds.test.size() << " test samples to " << out_dir
              << "\n";
    return 0;
}

int run_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_path) {
    const wsod::TrainConfig cfg = wsod::load_train_config(config_path);
    const wsod::Dataset train_ds = load_split(data_dir, "train");
    wsod::Dataset val_ds;
    val_ds.task = train_ds.task;
    if (fs::exists(fs::path(data_dir) / "val.wsod.json"))
        val_ds = load_split(data_dir, "val");
    const wsod::TrainResult res = wsod::train(cfg, train_ds, val_ds, &std::cout);
    wsod::save_checkpoint(out_path, res.checkpoint);
    std::cout << "saved checkpoint (epoch " << res.checkpoint.epoch << ") to "
              << out_path << "\n";
    return 0;
}

int run_infer(const std::string& ckpt_path, const std::string& data_dir,
              const std::string& out_path, const std::string& split) {
    const wsod::Checkpoint ckpt = wsod::load_checkpoint(ckpt_path);
    const wsod::Dataset ds = load_split(data_dir, split);
    const wsod::ModelParams params = wsod::checkpoint_model(ckpt);
    const std::vector<wsod::Detection> dets = wsod::infer(params, ckpt.config, ds);
    wsod::save_detections(out_path, dets);
    std::cout << "wrote " << dets.size() << " detections to " << out_path << "\n";
    return 0;
}

int run_eval(const std::string& data_dir, const std::string& dets_path,
             const std::string& report_path, const std::string& split) {
    const wsod::Dataset ds = load_split(data_dir, split);
    const std::vector<wsod::Detection> dets = wsod::load_detections(dets_path);
    const wsod::EvalReport report = wsod::evaluate(ds, dets);
    std::ofstream out(report_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + report_path);
    out << wsod::report_json(report, ds.task) << "\n";
    std::cout << "map " << report.map << " corloc " << report.corloc_mean << "\n";
    return 0;
}

int run_gradcheck_cmd(std::uint64_t seed, int count) {
    const wsod::GradCheckReport rep = wsod::run_gradcheck(seed, count);
    bool ok = true;
    for (const auto& [group, err] : rep.group_max_err) {
        std::cout << group << " max_rel_err " << err << "\n";
        if (!(err < 1e-4)) ok = false;
    }
    std::cout << "checked " << rep.seeds_checked << " cases (skipped "
              << rep.seeds_skipped << ")\n";
    if (!ok) {
        std::cerr << "error: gradient check tolerance exceeded\n";
        return 1;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Activity-driven weakly supervised object detection"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_path, ckpt_path, dets_path, report_path;
    std::string split = "test";
    std::uint64_t seed = 0;
    int count = 100;

    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    synth->add_option("--config", config_path, "Generator config file")->required();
    synth->add_option("--out", out_path, "Output dataset directory")->required();

    CLI::App* train = app.add_subcommand("train", "Train a detector");
    train->add_option("--config", config_path, "Training config file")->required();
    train->add_option("--data", data_dir, "Dataset directory")->required();
    train->add_option("--out", ckpt_path, "Checkpoint output path")->required();

    CLI::App* infer = app.add_subcommand("infer", "Detect objects with a checkpoint");
    infer->add_option("--ckpt", ckpt_path, "Checkpoint path")->required();
    infer->add_option("--data", data_dir, "Dataset directory")->required();
    infer->add_option("--out", out_path, "Detections output path")->required();
    infer->add_option("--split", split, "Dataset split (default test)");

    CLI::App* eval = app.add_subcommand("eval", "Score detections against a dataset");
    eval->add_option("--data", data_dir, "Dataset directory")->required();
    eval->add_option("--dets", dets_path, "Detections file")->required();
    eval->add_option("--report", report_path, "Report output path")->required();
    eval->add_option("--split", split, "Dataset split (default test)");

    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "Compare tape gradients to finite differences");
    gradcheck->add_option("--seed", seed, "Base seed")->required();
    gradcheck->add_option("--count", count, "Number of randomized cases");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return run_synth(config_path, out_path);
        if (train->parsed()) return run_train(config_path, data_dir, ckpt_path);
        if (infer->parsed()) return run_infer(ckpt_path, data_dir, out_path, split);
        if (eval->parsed()) return run_eval(data_dir, dets_path, report_path, split);
        if (gradcheck->parsed()) return run_gradcheck_cmd(seed, count);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
