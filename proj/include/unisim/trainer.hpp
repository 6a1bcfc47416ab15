#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "unisim/core.hpp"
#include "unisim/forge.hpp"

namespace unisim::trainer {

// max{0, (2y-1)*(s0-s1) + mu}
double hinge_loss(double s0, double s1, int y, double mu);

struct ScoredTriplet {
    double s0 = 0.0;
    double s1 = 0.0;
    int y = 0;
};

// Sum over tasks of summed per-sample hinge losses (one batch per task).
double multi_task_loss(const std::vector<std::vector<ScoredTriplet>>& batches_per_task,
                       double mu);

// Low-rank delta attached to a named linear map. B starts at zero so the
// adapted forward equals the base forward before any training step.
struct LoraAdapter {
    std::string target;
    Eigen::MatrixXd A;  // r x d_in
    Eigen::MatrixXd B;  // d_out x r
    int rank = 16;
    double alpha = 32.0;
    double dropout_p = 0.0;

    static LoraAdapter init(std::string target, int d_in, int d_out, int rank, double alpha,
                            double dropout_p, uint64_t seed);

    Eigen::MatrixXd delta() const { return (alpha / rank) * B * A; }
};

// W*x + (alpha/r)*B*(A*drop(x)). Dropout (inverted, scaled by 1/(1-p)) is
// active only in train mode and draws its mask from rng.
Eigen::VectorXd lora_forward(const Eigen::MatrixXd& base, const LoraAdapter& adapter,
                             const Eigen::VectorXd& x, bool train_mode, forge::Rng* rng = nullptr);

struct TrainConfig {
    double margin = 0.05;
    int batch_size = 32;
    double max_lr = 5e-6;
    double weight_decay = 0.35;
    int warmup_steps = 500;
    int total_steps = 0;
    size_t per_task_cap = 400000;
    uint64_t seed = 0;
    int lora_rank = 16;
    double lora_alpha = 32.0;
    double lora_dropout = 0.2;
    bool frozen_text_encoder = true;
    int eval_every = 100;
};

TrainConfig train_config_from_file(const std::string& path);

// Linear warmup to max_lr, then cosine decay to zero.
double lr_at(int step, const TrainConfig& cfg);

// Round-robin batch stream over tasks; each pool is truncated at per_task_cap
// under the seed and reshuffle-cycles when exhausted.
class BalancedSampler {
public:
    BalancedSampler(std::vector<std::vector<TripletSample>> per_task_pools,
                    const TrainConfig& cfg);

    struct Batch {
        size_t task_index = 0;
        std::vector<const TripletSample*> samples;
    };

    Batch next();
    size_t task_count() const { return pools_.size(); }
    size_t pool_size(size_t task) const { return pools_[task].size(); }

private:
    std::vector<std::vector<TripletSample>> pools_;
    std::vector<std::vector<size_t>> order_;
    std::vector<size_t> cursor_;
    size_t next_task_ = 0;
    int batch_size_;
    forge::Rng rng_;
};

// Dual encoder for desk-scale verification: a deterministic featurizer
// ("vec:a,b,..." content) followed by one linear map per modality. The image
// map takes a LoRA adapter; the text map is frozen.
class ToyDualEncoder {
public:
    ToyDualEncoder(int feature_dim, int embed_dim, const TrainConfig& cfg);

    Eigen::VectorXd features(const MediaItem& item) const;
    Eigen::VectorXd embed_image(const Eigen::VectorXd& f, bool train_mode = false,
                                forge::Rng* rng = nullptr) const;
    Eigen::VectorXd embed_text(const Eigen::VectorXd& f) const;
    Eigen::VectorXd embed(const MediaItem& item) const;

    // Candidate scores for one triplet through the current adapter.
    std::pair<double, double> score(const TripletSample& s) const;
    int feature_dim() const { return feature_dim_; }
    int embed_dim() const { return embed_dim_; }

    Eigen::MatrixXd image_base;  // frozen base weights
    Eigen::MatrixXd text_base;   // frozen (text encoder stays fixed)
    LoraAdapter adapter;

    Eigen::MatrixXd merged_image_map() const { return image_base + adapter.delta(); }

private:
    int feature_dim_;
    int embed_dim_;
};

struct TracePoint {
    int step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double eval_acc = -1.0;  // negative when not evaluated this step
};

struct FitResult {
    LoraAdapter adapter;
    std::vector<TracePoint> trace;
    std::vector<double> final_task_accuracy;  // per task, on the training pools
    std::string optimizer = "adamw";
};

// Loss and analytic adapter gradients for one sample (exposed for the finite
// difference checks). Gradients accumulate into grad_A/grad_B.
double sample_loss_and_grads(const ToyDualEncoder& enc, const TripletSample& s, double mu,
                             Eigen::MatrixXd* grad_A, Eigen::MatrixXd* grad_B);

// Multi-task hinge fine-tuning of the toy encoder's image adapter. One
// optimizer step consumes one batch per task (the balanced objective).
// Deterministic under cfg.seed. Throws on a non-finite loss.
FitResult fit(ToyDualEncoder& enc, std::vector<std::vector<TripletSample>> per_task_pools,
              const TrainConfig& cfg);

// Checkpoint: adapter matrices in the .emb binary container plus a JSON
// manifest; trace as CSV (step,loss,lr[,eval_acc]).
void save_checkpoint(const std::string& dir, const FitResult& result, const TrainConfig& cfg);
void save_trace_csv(const std::string& path, const std::vector<TracePoint>& trace);

// Synthetic separable 2AFC task data for toy training runs: a hidden linear
// transform maps image features into the text feature space; winners sit near
// the reference direction, losers far from it.
std::vector<TripletSample> make_synthetic_task(int dim, size_t n, uint64_t seed,
                                               const std::string& dataset_id,
                                               double noise = 0.1);

}  // namespace unisim::trainer
