#include "unisim/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "unisim/backends.hpp"
#include "unisim/similarity.hpp"

namespace unisim::trainer {

namespace fs = std::filesystem;
using nlohmann::json;

double hinge_loss(double s0, double s1, int y, double mu) {
    if (mu < 0) throw std::invalid_argument("margin must be >= 0");
    return std::max(0.0, (2.0 * y - 1.0) * (s0 - s1) + mu);
}

double multi_task_loss(const std::vector<std::vector<ScoredTriplet>>& batches_per_task,
                       double mu) {
    double total = 0.0;
    for (const auto& batch : batches_per_task) {
        if (batch.empty()) throw std::invalid_argument("empty task batch");
        for (const auto& t : batch) total += hinge_loss(t.s0, t.s1, t.y, mu);
    }
    return total;
}

LoraAdapter LoraAdapter::init(std::string target, int d_in, int d_out, int rank, double alpha,
                              double dropout_p, uint64_t seed) {
    LoraAdapter a;
    a.target = std::move(target);
    a.rank = rank;
    a.alpha = alpha;
    a.dropout_p = dropout_p;
    // A gets a small random init, B starts at zero (adapted == base at step 0).
    forge::Rng rng(seed);
    a.A = Eigen::MatrixXd(rank, d_in);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_in));
    for (int r = 0; r < rank; ++r) {
        for (int c = 0; c < d_in; ++c) {
            a.A(r, c) = (2.0 * rng.unit() - 1.0) * scale;
        }
    }
    a.B = Eigen::MatrixXd::Zero(d_out, rank);
    return a;
}

Eigen::VectorXd lora_forward(const Eigen::MatrixXd& base, const LoraAdapter& adapter,
                             const Eigen::VectorXd& x, bool train_mode, forge::Rng* rng) {
    if (base.cols() != x.size() || adapter.A.cols() != x.size() ||
        adapter.B.rows() != base.rows() || adapter.A.rows() != adapter.B.cols()) {
        throw std::invalid_argument("shape mismatch in lora_forward");
    }
    Eigen::VectorXd dropped = x;
    if (train_mode && adapter.dropout_p > 0.0) {
        if (!rng) throw std::invalid_argument("train-mode dropout needs an rng");
        const double keep = 1.0 - adapter.dropout_p;
        for (Eigen::Index i = 0; i < dropped.size(); ++i) {
            dropped(i) = rng->unit() < adapter.dropout_p ? 0.0 : dropped(i) / keep;
        }
    }
    return base * x + (adapter.alpha / adapter.rank) * (adapter.B * (adapter.A * dropped));
}

double lr_at(int step, const TrainConfig& cfg) {
    if (step < 0 || step > cfg.total_steps) {
        throw std::out_of_range("step outside [0, total_steps]");
    }
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
        return cfg.max_lr * static_cast<double>(step) / cfg.warmup_steps;
    }
    if (cfg.total_steps == cfg.warmup_steps) return cfg.max_lr;
    const double progress =
        static_cast<double>(step - cfg.warmup_steps) / (cfg.total_steps - cfg.warmup_steps);
    return cfg.max_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

TrainConfig train_config_from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open train config: " + path);
    json j;
    in >> j;
    TrainConfig cfg;
    cfg.margin = j.value("margin", cfg.margin);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.max_lr = j.value("max_lr", cfg.max_lr);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.warmup_steps = j.value("warmup_steps", cfg.warmup_steps);
    cfg.total_steps = j.value("total_steps", cfg.total_steps);
    cfg.per_task_cap = j.value("per_task_cap", cfg.per_task_cap);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.lora_rank = j.value("lora_rank", cfg.lora_rank);
    cfg.lora_alpha = j.value("lora_alpha", cfg.lora_alpha);
    cfg.lora_dropout = j.value("lora_dropout", cfg.lora_dropout);
    cfg.frozen_text_encoder = j.value("frozen_text_encoder", cfg.frozen_text_encoder);
    cfg.eval_every = j.value("eval_every", cfg.eval_every);
    return cfg;
}

BalancedSampler::BalancedSampler(std::vector<std::vector<TripletSample>> per_task_pools,
                                 const TrainConfig& cfg)
    : pools_(std::move(per_task_pools)), batch_size_(cfg.batch_size), rng_(cfg.seed) {
    if (pools_.empty()) throw std::invalid_argument("no task pools");
    for (auto& pool : pools_) {
        if (pool.empty()) throw std::invalid_argument("empty task stream");
        // Cap under the seed: shuffle, then truncate to per_task_cap.
        std::vector<size_t> idx(pool.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        rng_.shuffle(idx);
        if (idx.size() > cfg.per_task_cap) idx.resize(cfg.per_task_cap);
        std::vector<TripletSample> capped;
        capped.reserve(idx.size());
        for (size_t i : idx) capped.push_back(std::move(pool[i]));
        pool = std::move(capped);

        std::vector<size_t> order(pool.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng_.shuffle(order);
        order_.push_back(std::move(order));
        cursor_.push_back(0);
    }
}

BalancedSampler::Batch BalancedSampler::next() {
    Batch batch;
    batch.task_index = next_task_;
    auto& order = order_[next_task_];
    auto& cursor = cursor_[next_task_];
    const auto& pool = pools_[next_task_];
    for (int i = 0; i < batch_size_; ++i) {
        if (cursor == order.size()) {
            rng_.shuffle(order);  // exhausted pools reshuffle-and-cycle
            cursor = 0;
        }
        batch.samples.push_back(&pool[order[cursor++]]);
    }
    next_task_ = (next_task_ + 1) % pools_.size();
    return batch;
}

// ---------------------------------------------------------------------------
// Toy dual encoder
// ---------------------------------------------------------------------------

ToyDualEncoder::ToyDualEncoder(int feature_dim, int embed_dim, const TrainConfig& cfg)
    : image_base(Eigen::MatrixXd::Identity(embed_dim, feature_dim)),
      text_base(Eigen::MatrixXd::Identity(embed_dim, feature_dim)),
      adapter(LoraAdapter::init("image_proj", feature_dim, embed_dim, cfg.lora_rank,
                                cfg.lora_alpha, cfg.lora_dropout, cfg.seed ^ 0x10f4)),
      feature_dim_(feature_dim),
      embed_dim_(embed_dim) {}

Eigen::VectorXd ToyDualEncoder::features(const MediaItem& item) const {
    const std::string& content = item.kind == MediaKind::Image ? item.uri : item.text;
    const size_t pos = content.find("vec:");
    if (pos == std::string::npos) {
        throw std::runtime_error("toy featurizer expects 'vec:...' content: " + content);
    }
    std::vector<double> vals;
    std::stringstream ss(content.substr(pos + 4));
    std::string tok;
    while (std::getline(ss, tok, ',')) vals.push_back(std::stod(tok));
    if (static_cast<int>(vals.size()) != feature_dim_) {
        throw std::runtime_error("toy featurizer dim mismatch: " + content);
    }
    return Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

Eigen::VectorXd ToyDualEncoder::embed_image(const Eigen::VectorXd& f, bool train_mode,
                                            forge::Rng* rng) const {
    return lora_forward(image_base, adapter, f, train_mode, rng);
}

Eigen::VectorXd ToyDualEncoder::embed_text(const Eigen::VectorXd& f) const {
    return text_base * f;
}

Eigen::VectorXd ToyDualEncoder::embed(const MediaItem& item) const {
    const Eigen::VectorXd f = features(item);
    return item.kind == MediaKind::Image ? embed_image(f) : embed_text(f);
}

std::pair<double, double> ToyDualEncoder::score(const TripletSample& s) const {
    const Eigen::VectorXd u = embed(s.ref);
    const Eigen::VectorXd v0 = embed(s.cand[0]);
    const Eigen::VectorXd v1 = embed(s.cand[1]);
    auto cos = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
        return sim::cosine_sim(std::span<const double>(a.data(), a.size()),
                               std::span<const double>(b.data(), b.size()));
    };
    return {cos(u, v0), cos(u, v1)};
}

// ---------------------------------------------------------------------------
// Loss + gradients
// ---------------------------------------------------------------------------

namespace {

// d cos(u,v) / d v with c precomputed.
Eigen::VectorXd dcos_dv(const Eigen::VectorXd& u, const Eigen::VectorXd& v, double c) {
    const double nu = u.norm();
    const double nv = v.norm();
    return u / (nu * nv) - (c / (nv * nv)) * v;
}

struct ItemForward {
    Eigen::VectorXd features;       // raw features
    Eigen::VectorXd adapter_input;  // after dropout (== features in eval mode)
    Eigen::VectorXd embedding;
    bool trainable = false;  // image-side items train; text side is frozen
};

ItemForward forward_item(const ToyDualEncoder& enc, const MediaItem& item, bool train_mode,
                         forge::Rng* rng) {
    ItemForward out;
    out.features = enc.features(item);
    out.adapter_input = out.features;
    if (item.kind == MediaKind::Image) {
        out.trainable = true;
        if (train_mode && enc.adapter.dropout_p > 0.0) {
            const double keep = 1.0 - enc.adapter.dropout_p;
            for (Eigen::Index i = 0; i < out.adapter_input.size(); ++i) {
                out.adapter_input(i) =
                    rng->unit() < enc.adapter.dropout_p ? 0.0 : out.adapter_input(i) / keep;
            }
        }
        out.embedding = enc.image_base * out.features +
                        (enc.adapter.alpha / enc.adapter.rank) *
                            (enc.adapter.B * (enc.adapter.A * out.adapter_input));
    } else {
        out.embedding = enc.embed_text(out.features);
    }
    return out;
}

double loss_and_grads_impl(const ToyDualEncoder& enc, const TripletSample& s, double mu,
                           bool train_mode, forge::Rng* rng, Eigen::MatrixXd* grad_A,
                           Eigen::MatrixXd* grad_B) {
    const ItemForward ref = forward_item(enc, s.ref, train_mode, rng);
    const ItemForward c0 = forward_item(enc, s.cand[0], train_mode, rng);
    const ItemForward c1 = forward_item(enc, s.cand[1], train_mode, rng);

    auto cos = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
        return a.dot(b) / (a.norm() * b.norm());
    };
    const double s0 = cos(ref.embedding, c0.embedding);
    const double s1 = cos(ref.embedding, c1.embedding);
    const double sign = 2.0 * s.label - 1.0;
    const double raw = sign * (s0 - s1) + mu;
    if (raw <= 0.0) return 0.0;  // clamped: zero loss, zero gradient
    if (!grad_A || !grad_B) return raw;

    const double scale = enc.adapter.alpha / enc.adapter.rank;
    auto accumulate = [&](const ItemForward& item, const Eigen::VectorXd& dL_de) {
        if (!item.trainable) return;
        // dL/dA = scale * B^T dL/de x_drop^T ; dL/dB = scale * dL/de (A x_drop)^T
        *grad_A += scale * (enc.adapter.B.transpose() * dL_de) * item.adapter_input.transpose();
        *grad_B += scale * dL_de * (enc.adapter.A * item.adapter_input).transpose();
    };

    // dL/ds0 = sign, dL/ds1 = -sign on the active branch.
    accumulate(c0, sign * dcos_dv(ref.embedding, c0.embedding, s0));
    accumulate(c1, -sign * dcos_dv(ref.embedding, c1.embedding, s1));
    if (ref.trainable) {
        Eigen::VectorXd dL_du = sign * dcos_dv(c0.embedding, ref.embedding, s0) -
                                sign * dcos_dv(c1.embedding, ref.embedding, s1);
        accumulate(ref, dL_du);
    }
    return raw;
}

}  // namespace

double sample_loss_and_grads(const ToyDualEncoder& enc, const TripletSample& s, double mu,
                             Eigen::MatrixXd* grad_A, Eigen::MatrixXd* grad_B) {
    return loss_and_grads_impl(enc, s, mu, /*train_mode=*/false, nullptr, grad_A, grad_B);
}

// ---------------------------------------------------------------------------
// Training loop (AdamW on adapter parameters only)
// ---------------------------------------------------------------------------

namespace {

struct AdamState {
    Eigen::MatrixXd m;
    Eigen::MatrixXd v;
    int t = 0;

    explicit AdamState(const Eigen::MatrixXd& shape)
        : m(Eigen::MatrixXd::Zero(shape.rows(), shape.cols())),
          v(Eigen::MatrixXd::Zero(shape.rows(), shape.cols())) {}

    void update(Eigen::MatrixXd& param, const Eigen::MatrixXd& grad, double lr,
                double weight_decay) {
        constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
        ++t;
        m = beta1 * m + (1.0 - beta1) * grad;
        v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
        const double bc1 = 1.0 - std::pow(beta1, t);
        const double bc2 = 1.0 - std::pow(beta2, t);
        const Eigen::MatrixXd mhat = m / bc1;
        const Eigen::MatrixXd vhat = v / bc2;
        param -= lr * (mhat.array() / (vhat.array().sqrt() + eps)).matrix();
        if (weight_decay > 0.0) param -= lr * weight_decay * param;  // decoupled decay
    }
};

double pool_accuracy(const ToyDualEncoder& enc, const std::vector<TripletSample>& pool) {
    size_t correct = 0;
    for (const auto& s : pool) {
        const auto [s0, s1] = enc.score(s);
        if (sim::decide_2afc(s0, s1) == s.label) ++correct;
    }
    return pool.empty() ? 0.0 : static_cast<double>(correct) / pool.size();
}

}  // namespace

FitResult fit(ToyDualEncoder& enc, std::vector<std::vector<TripletSample>> per_task_pools,
              const TrainConfig& cfg) {
    for (const auto& pool : per_task_pools) {
        for (const auto& s : pool) {
            auto violations = validate_sample(s);
            if (!violations.empty()) {
                throw std::invalid_argument("invalid training sample: " + violations.front());
            }
        }
    }
    BalancedSampler sampler(per_task_pools, cfg);
    // Keep the (capped) pools for accuracy evaluation.
    std::vector<std::vector<TripletSample>> eval_pools;
    for (size_t t = 0; t < sampler.task_count(); ++t) eval_pools.emplace_back();

    forge::Rng dropout_rng(cfg.seed ^ 0xd409);
    AdamState adam_A(enc.adapter.A);
    AdamState adam_B(enc.adapter.B);

    FitResult result;
    const size_t tasks = sampler.task_count();
    std::vector<std::vector<TripletSample>> pools_copy = std::move(per_task_pools);

    for (int step = 0; step < cfg.total_steps; ++step) {
        Eigen::MatrixXd grad_A = Eigen::MatrixXd::Zero(enc.adapter.A.rows(), enc.adapter.A.cols());
        Eigen::MatrixXd grad_B = Eigen::MatrixXd::Zero(enc.adapter.B.rows(), enc.adapter.B.cols());
        double loss = 0.0;
        for (size_t t = 0; t < tasks; ++t) {
            const auto batch = sampler.next();
            for (const auto* s : batch.samples) {
                loss += loss_and_grads_impl(enc, *s, cfg.margin, cfg.lora_dropout > 0.0,
                                            &dropout_rng, &grad_A, &grad_B);
            }
        }
        if (!std::isfinite(loss)) {
            throw std::runtime_error("non-finite loss at step " + std::to_string(step));
        }
        const double lr = lr_at(step, cfg);
        adam_A.update(enc.adapter.A, grad_A, lr, cfg.weight_decay);
        adam_B.update(enc.adapter.B, grad_B, lr, cfg.weight_decay);

        TracePoint tp;
        tp.step = step;
        tp.loss = loss;
        tp.lr = lr;
        if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) {
            double acc = 0.0;
            for (size_t t = 0; t < tasks; ++t) acc += pool_accuracy(enc, pools_copy[t]);
            tp.eval_acc = acc / tasks;
        }
        result.trace.push_back(tp);
    }

    for (size_t t = 0; t < tasks; ++t) {
        result.final_task_accuracy.push_back(pool_accuracy(enc, pools_copy[t]));
    }
    result.adapter = enc.adapter;
    return result;
}

void save_checkpoint(const std::string& dir, const FitResult& result, const TrainConfig& cfg) {
    fs::create_directories(dir);
    auto flatten = [](const Eigen::MatrixXd& m) {
        std::vector<float> out;
        out.reserve(static_cast<size_t>(m.size()));
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(static_cast<float>(m(r, c)));
        }
        return out;
    };
    backends::write_emb_file((fs::path(dir) / "adapter_A.emb").string(), flatten(result.adapter.A));
    backends::write_emb_file((fs::path(dir) / "adapter_B.emb").string(), flatten(result.adapter.B));

    json manifest;
    manifest["target"] = result.adapter.target;
    manifest["rank"] = result.adapter.rank;
    manifest["alpha"] = result.adapter.alpha;
    manifest["dropout"] = result.adapter.dropout_p;
    manifest["step"] = cfg.total_steps;
    manifest["optimizer"] = result.optimizer;
    manifest["shapes"] = {{"A", {result.adapter.A.rows(), result.adapter.A.cols()}},
                          {"B", {result.adapter.B.rows(), result.adapter.B.cols()}}};
    std::ofstream out(fs::path(dir) / "adapter.json", std::ios::binary);
    out << manifest.dump(2) << '\n';
    save_trace_csv((fs::path(dir) / "trace.csv").string(), result.trace);
}

void save_trace_csv(const std::string& path, const std::vector<TracePoint>& trace) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write trace file: " + path);
    out << "step,loss,lr,eval_acc\n";
    for (const auto& tp : trace) {
        out << tp.step << ',' << tp.loss << ',' << tp.lr << ',';
        if (tp.eval_acc >= 0.0) out << tp.eval_acc;
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

namespace {

// Shared hidden transform: a fixed random orthogonal map. Every synthetic
// task uses the same transform so that one adapter can serve them all.
Eigen::MatrixXd hidden_transform(int dim) {
    forge::Rng rng(0xC0FFEEu);
    Eigen::MatrixXd m(dim, dim);
    for (int r = 0; r < dim; ++r) {
        for (int c = 0; c < dim; ++c) m(r, c) = 2.0 * rng.unit() - 1.0;
    }
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    Eigen::MatrixXd q = qr.householderQ();
    return q;
}

std::string vec_to_content(const Eigen::VectorXd& v, const std::string& prefix) {
    std::ostringstream ss;
    ss << prefix << "vec:";
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i) ss << ',';
        ss << v(i);
    }
    return ss.str();
}

Eigen::VectorXd random_unit(forge::Rng& rng, int dim) {
    Eigen::VectorXd v(dim);
    for (int i = 0; i < dim; ++i) v(i) = 2.0 * rng.unit() - 1.0;
    const double n = v.norm();
    return n > 0 ? Eigen::VectorXd(v / n) : Eigen::VectorXd::Unit(dim, 0);
}

}  // namespace

std::vector<TripletSample> make_synthetic_task(int dim, size_t n, uint64_t seed,
                                               const std::string& dataset_id, double noise) {
    const Eigen::MatrixXd q = hidden_transform(dim);
    const Eigen::MatrixXd q_inv = q.transpose();  // orthogonal
    forge::Rng rng(seed);
    std::vector<TripletSample> out;
    out.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        const Eigen::VectorXd ref = random_unit(rng, dim);
        const Eigen::VectorXd winner_emb = (ref + noise * random_unit(rng, dim)).normalized();
        const Eigen::VectorXd loser_emb = random_unit(rng, dim);
        // Image features live in the rotated space; the trainable image map
        // has to learn the inverse rotation to line them up with the text side.
        const Eigen::VectorXd winner_feat = q_inv * winner_emb;
        const Eigen::VectorXd loser_feat = q_inv * loser_emb;

        TripletSample s;
        s.task = Task::It2afc;
        s.dataset_id = dataset_id;
        s.ref = MediaItem::make_text(vec_to_content(ref, ""));
        const bool winner_first = rng.below(2) == 0;
        s.cand[winner_first ? 0 : 1] = MediaItem::image(vec_to_content(winner_feat, "img-"));
        s.cand[winner_first ? 1 : 0] = MediaItem::image(vec_to_content(loser_feat, "img-"));
        s.label = winner_first ? 0 : 1;
        s.meta["preferred"] = s.cand[s.label].uri;
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace unisim::trainer
