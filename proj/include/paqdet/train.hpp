// Deterministic training loop: in-house AdamW with decoupled weight decay,
// per-step cosine learning rate, global-norm gradient clipping, per-epoch
// validation metrics and activation statistics, and a binary checkpoint
// format ("PAQD", version 1) holding parameters as little-endian float32.
#pragma once

#include "paqdet/analysis.hpp"
#include "paqdet/data.hpp"
#include "paqdet/eval.hpp"
#include "paqdet/model.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace paqdet::train {

struct TrainConfig {
    int epochs = 40;
    int batch_size = 8;
    double lr = 2e-4;
    double weight_decay = 1e-4;
    double lambda1 = 5.0;  // L1 box loss weight
    double lambda2 = 2.0;  // GIoU loss weight
    double clip_norm = 0.1;
    std::uint64_t seed = 0;
    double eval_score_threshold = 0.05;  // detection cutoff for val AP
    int eval_max_det = 30;

    void validate() const;  // throws with the violated constraint named
};

// lr at `step` of `total_steps`, decaying from base to exactly 0 on the last
// step. total_steps <= 1 pins the lr at base.
double cosine_lr(double base, long long step, long long total_steps);

// Scales grads in place so the global L2 norm is at most `clip`; returns the
// pre-clip norm. Layout mirrors a ParamStore: one flat buffer per tensor.
double clip_global_norm(std::vector<std::vector<double>>& grads, double clip);

// Adaptive-moment optimizer with decoupled weight decay. Moment buffers are
// sized on the first step and must see the same layout afterwards.
class AdamW {
public:
    explicit AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step(model::ParamStore& store, const std::vector<std::vector<double>>& grads, double lr,
              double weight_decay);
    long long steps_taken() const { return t_; }

private:
    double b1_, b2_, eps_;
    long long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct Sample {
    int image_id = 0;
    Image image;
    match::GroundTruthSet gt;
};

using Dataset = std::vector<Sample>;

// Reads {split_dir}/annotations.json plus every referenced image.
Dataset load_split(const std::string& split_dir);

// Runs the detector over a dataset without gradients and scores it. Fails
// (via compute_map) when the dataset has no ground truth at all. When
// out_dets is non-null the extracted detections are appended to it.
eval::APResult evaluate(const model::Detector& det, const Dataset& ds, double score_threshold,
                        int max_det, std::vector<eval::Detection>* out_dets = nullptr);

// ---- checkpoints -----------------------------------------------------------

struct CheckpointMeta {
    model::ModelConfig config;
    int epoch = 0;
    std::array<std::uint64_t, 4> rng_state{};
};

void save_checkpoint(const model::Detector& det, int epoch,
                     const std::array<std::uint64_t, 4>& rng_state, const std::string& path);

// Builds a fresh detector from the stored config and parameters.
model::Detector load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);

// Overwrites an existing detector's parameters. The stored config and the
// full tensor inventory (names, shapes, order) must match the detector's.
CheckpointMeta load_checkpoint_into(model::Detector& det, const std::string& path);

// ---- the loop --------------------------------------------------------------

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0;  // mean batch loss over the epoch
    double lr_last = 0;     // lr of the epoch's final step
    eval::APResult val;
    analysis::ActivationStats act;
};

struct TrainResult {
    std::vector<EpochRecord> epochs;
    std::vector<double> step_losses;
    bool nan_abort = false;
    std::string checkpoint_path;  // empty when out_dir was empty
};

// One metrics.jsonl line (no trailing newline); deterministic key order and
// shortest-round-trip float formatting.
std::string metrics_line(const EpochRecord& rec, model::Mode mode);

// Trains det in place. Per step: forward the batch on one graph, mean of
// per-image losses, backward, clip, AdamW, cosine lr. Per epoch: data order
// reshuffled from (seed, epoch), val metrics, activation stats, metrics line,
// checkpoint. out_dir == "" keeps everything in memory; otherwise writes
// {out_dir}/metrics.jsonl and {out_dir}/checkpoint.paqd. A non-finite batch
// loss aborts before the update, leaving the last completed epoch's
// checkpoint in place.
TrainResult train(model::Detector& det, const TrainConfig& tcfg, const Dataset& train_data,
                  const Dataset& val_data, const std::string& out_dir);

}  // namespace paqdet::train
