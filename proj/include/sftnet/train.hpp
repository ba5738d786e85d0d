#pragma once

#include <string>
#include <vector>

#include "sftnet/data.hpp"
#include "sftnet/losses.hpp"
#include "sftnet/model.hpp"

namespace sft {

// Run configuration: model + objective + optimizer + loop controls. The
// config file is flat `key=value` text with `#` comments; every key mirrors
// a field name here (see parse_run_config).
struct RunConfig {
    ModelConfig model;
    LossWeights weights;
    double alpha = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int64_t batch_size = 8;
    int64_t epochs = 100;
    uint64_t seed = 1;
    std::string data_dir;
    std::string ckpt_path = "model.sftc";
    std::string log_path = "train_log.csv";
    bool emb_loss_enabled = true;
    bool resume = false;

    void validate() const;
};

RunConfig parse_run_config_text(const std::string& text, const std::string& origin = "<memory>");
RunConfig parse_run_config(const std::string& path);
SynthSpec parse_synth_spec(const std::string& path);

// Named presets mirroring the default full-scale recipe and the toy-scale
// benchmark configuration.
RunConfig full_scale_preset();
RunConfig toy_overfit_preset();

struct TrainResult {
    int64_t steps = 0;
    int64_t epochs = 0;
    double final_total = 0.0;
};

// Deterministic training loop: per-epoch seeded shuffle, forward ->
// total loss -> backward -> adam step, one CSV log row per step
// (step,epoch,bce,dice,emb,total), checkpoint at every epoch end.
TrainResult cmd_train(const RunConfig& cfg);

struct EvalRow {
    std::string id;
    SegMetrics m;
};

struct EvalResult {
    std::vector<EvalRow> rows;
    double mean_dice = 0, mean_miou = 0, mean_sen = 0, mean_spe = 0;
    SegMetrics pooled;  // metrics over globally pooled counts
};

// Writes one CSV row per image (id,tp,fp,fn,tn,dice,miou,sen,spe) plus a
// final mean row. Predictions must already be binary.
EvalResult evaluate_metrics(const std::vector<std::string>& ids,
                            const std::vector<Tensor<float>>& predictions,
                            const std::vector<Tensor<float>>& ground_truth,
                            const std::string& csv_path);

EvalResult cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
                    const std::string& out_csv, bool use_train_split = false);

// Runs the model on one PGM image and writes the binary mask; returns the
// predicted mass area in pixels.
int64_t cmd_infer(const std::string& ckpt_path, const std::string& in_pgm,
                  const std::string& out_pgm, bool auto_resize = false);

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> tensors;
    double worst = 0.0;
    std::vector<std::string> failures(double tol) const {
        std::vector<std::string> out;
        for (const auto& t : tensors)
            if (t.max_rel_err > tol) out.push_back(t.name);
        return out;
    }
};

// Compares the analytic gradient of the total loss against central finite
// differences at 64 bits, on >= coords_per_tensor sampled coordinates per
// trainable tensor. Relative error uses a unit floor:
// |a - f| / max(|a|, |f|, 1). Only toy-scale configs (H = W = 32) are
// accepted. corrupt_tensor/corrupt_delta form a test hook that perturbs one
// stored analytic gradient before comparison.
GradCheckReport run_gradcheck(const ModelConfig& cfg, uint64_t seed,
                              int64_t coords_per_tensor = 5, double fd_step = 1e-4,
                              const std::string& corrupt_tensor = "",
                              double corrupt_delta = 0.0);

// In-process CLI entry point (the `sftnet` binary forwards here).
// Exit codes: 0 ok, 1 assertion/tolerance failure, 2 I/O, 3 config.
int run_cli(const std::vector<std::string>& args);

}  // namespace sft
