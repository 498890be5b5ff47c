#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "scalevar/adam.hpp"
#include "scalevar/checkpoint.hpp"
#include "scalevar/depth.hpp"
#include "scalevar/errors.hpp"
#include "scalevar/model.hpp"
#include "scalevar/shard.hpp"

namespace scalevar {

// Three-phase schedule: joint training at p_initial, a linear ramp to 1,
// then subnet-only refinement.
struct TrainPhasePlan {
    std::uint32_t e1 = 0;     // last epoch of phase 1
    std::uint32_t e2 = 0;     // last epoch of phase 2
    std::uint32_t total = 0;  // last epoch overall
    double p_initial = 0.2;

    void validate() const {
        if (!(e1 > 0 && e1 < e2 && e2 <= total)) {
            throw std::invalid_argument("plan: need 0 < E1 < E2 <= E");
        }
        if (p_initial < 0.0 || p_initial > 1.0) {
            throw std::invalid_argument("plan: p_initial must lie in [0, 1]");
        }
    }

    std::uint32_t phase_of(std::uint32_t epoch) const {
        if (epoch <= e1) return 1;
        if (epoch <= e2) return 2;
        return 3;
    }

    // Reference phase durations by subnet depth; shallower subnets get a
    // longer refinement phase.
    static TrainPhasePlan preset_for_depth(std::uint32_t subnet_depth) {
        std::uint32_t refine = 5;
        if (subnet_depth < 16) refine = 8;
        if (subnet_depth < 8) refine = 12;
        if (subnet_depth < 4) refine = 15;
        TrainPhasePlan plan;
        plan.e1 = 5;
        plan.e2 = 20;
        plan.total = 20 + refine;
        return plan;
    }
};

// Subnet sampling probability at a (possibly fractional) epoch position.
inline double branch_probability(double epoch, const TrainPhasePlan& plan) {
    plan.validate();
    if (epoch < 0.0 || epoch > static_cast<double>(plan.total)) {
        throw std::invalid_argument("branch_probability: epoch outside [0, E]");
    }
    if (epoch <= static_cast<double>(plan.e1)) return plan.p_initial;
    if (epoch <= static_cast<double>(plan.e2)) {
        return plan.p_initial +
               (1.0 - plan.p_initial) * (epoch - plan.e1) / static_cast<double>(plan.e2 - plan.e1);
    }
    return 1.0;
}

enum class Branch { subnet, full };

inline Branch sample_branch(Rng& rng, double p) {
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("sample_branch: p outside [0, 1]");
    return rng.next_double() < p ? Branch::subnet : Branch::full;
}

enum class ZoneFilter { all, bridge, flexible };

// Mean cross-entropy over the selected token positions of a batch. Every
// scale contributes with weight t_k / (batch * total_tokens), so the bridge
// and flexible restrictions sum to the unrestricted loss. Bridge scales run
// the full stack; flexible scales run the subnet only when branch == subnet.
// Returns an undefined tensor when the filter selects no scales.
inline Tensor batch_loss(const ModelParams& params,
                         const std::vector<const TokenPyramid*>& batch,
                         const DepthPolicy& policy, Branch branch, ZoneFilter filter) {
    const ScaleSchedule& sched = params.config.schedule;
    if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
    if (policy.full_depth != params.config.depth) {
        throw config_error("batch_loss: policy depth does not match model");
    }
    const std::uint32_t K = sched.num_scales();
    if (policy.bridge_scales > K) {
        throw config_error("batch_loss: bridge zone exceeds scale count");
    }
    const double denom =
        static_cast<double>(batch.size()) * static_cast<double>(sched.total_tokens());

    Tensor loss;
    for (const TokenPyramid* sample : batch) {
        sample->validate(sched);
        KVCache cache(params.config.depth);
        for (std::uint32_t k = 1; k <= K; ++k) {
            if (k == policy.bridge_scales + 1) cache.detach_all();
            const bool bridge = k <= policy.bridge_scales;
            const std::vector<std::uint32_t> active =
                (bridge || branch == Branch::full) ? full_layer_set(policy.full_depth)
                                                   : policy.selected;
            const std::vector<std::uint16_t>* prev = (k == 1) ? nullptr : &sample->maps[k - 2];
            Tensor emb = embed_step(params, k, prev, sample->class_label);
            Tensor logits = forward_step(params, emb, active, cache);

            const bool included = filter == ZoneFilter::all ||
                                  (filter == ZoneFilter::bridge && bridge) ||
                                  (filter == ZoneFilter::flexible && !bridge);
            if (!included) continue;
            std::vector<std::uint32_t> targets(sample->maps[k - 1].begin(),
                                               sample->maps[k - 1].end());
            Tensor term = scale(cross_entropy(logits, targets),
                                static_cast<double>(sched.tokens_at(k)) / denom);
            loss = loss.defined() ? add(loss, term) : term;
        }
    }
    return loss;
}

inline void zero_all_grads(ModelParams& params) {
    params.for_each_param([](const std::string&, Tensor& t) { t.clear_grad(); });
}

// One optimization step; returns the (per-token mean) training loss.
inline double train_step(ModelParams& params, const std::vector<const TokenPyramid*>& batch,
                         Branch branch, const DepthPolicy& policy, AdamW& optimizer) {
    zero_all_grads(params);
    Tensor loss = batch_loss(params, batch, policy, branch, ZoneFilter::all);
    backward(loss);
    std::vector<Tensor*> plist = params.param_list();
    optimizer.step(plist);
    return loss.scalar();
}

struct LayerGradientSource {
    double bridge_norm = 0.0;
    double flexible_norm = 0.0;
};

// Two restricted backward passes (no update): per-layer L2 gradient norms of
// the loss limited to bridge-zone scales, then to flexible-zone scales.
inline std::vector<LayerGradientSource> gradient_source_report(
    ModelParams& params, const std::vector<const TokenPyramid*>& batch,
    const DepthPolicy& policy, Branch branch) {
    auto layer_norms = [&]() {
        std::vector<double> norms(params.config.depth, 0.0);
        for (std::uint32_t l = 0; l < params.config.depth; ++l) {
            double sq = 0.0;
            LayerParams& lp = params.layers[l];
            for (Tensor* t : {&lp.ln1_gain, &lp.ln1_bias, &lp.wq, &lp.bq, &lp.wk, &lp.bk,
                              &lp.wv, &lp.bv, &lp.wo, &lp.bo, &lp.ln2_gain, &lp.ln2_bias,
                              &lp.w1, &lp.b1, &lp.w2, &lp.b2}) {
                if (!t->has_grad()) continue;
                for (double g : t->grad()) sq += g * g;
            }
            norms[l] = std::sqrt(sq);
        }
        return norms;
    };

    zero_all_grads(params);
    Tensor bridge_loss = batch_loss(params, batch, policy, branch, ZoneFilter::bridge);
    if (bridge_loss.defined() && bridge_loss.requires_grad()) backward(bridge_loss);
    const std::vector<double> bridge = layer_norms();

    zero_all_grads(params);
    Tensor flex_loss = batch_loss(params, batch, policy, branch, ZoneFilter::flexible);
    if (flex_loss.defined() && flex_loss.requires_grad()) backward(flex_loss);
    const std::vector<double> flexible = layer_norms();
    zero_all_grads(params);

    std::vector<LayerGradientSource> out(params.config.depth);
    for (std::uint32_t l = 0; l < params.config.depth; ++l) {
        out[l].bridge_norm = bridge[l];
        out[l].flexible_norm = flexible[l];
    }
    return out;
}

struct EpochRecord {
    std::uint32_t epoch = 0;  // 1-based
    std::uint32_t phase = 1;
    double p = 0.0;  // subnet probability in effect at the end of the epoch
    double loss_subnet = 0.0;
    double loss_full = 0.0;
    std::uint64_t subnet_draws = 0;
    std::uint64_t full_draws = 0;
    double train_loss_subnet_branch = 0.0;  // mean over this epoch's subnet-branch steps
    double train_loss_full_branch = 0.0;
    std::vector<double> bridge_norms;
    std::vector<double> flexible_norms;

    bool operator==(const EpochRecord& other) const = default;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;

    bool operator==(const TrainHistory& other) const = default;
};

enum class RatioMode { progressive, fixed };

struct TrainRunConfig {
    AdamConfig adam;
    std::size_t batch_size = 16;
    std::uint64_t seed = 1;
    bool per_step_ramp = true;           // false: per-epoch staircase
    RatioMode mode = RatioMode::progressive;
    double fixed_p = 0.2;                // used when mode == fixed
    std::string checkpoint_dir;          // empty: no checkpoints
    std::ostream* metrics = nullptr;     // line-delimited records per epoch
};

inline double evaluate_loss(const ModelParams& params, const Shard& shard,
                            const DepthPolicy& policy, Branch branch, std::size_t batch_size) {
    NoGradGuard no_grad;
    double acc = 0.0;
    std::size_t counted = 0;
    for (std::size_t at = 0; at < shard.samples.size(); at += batch_size) {
        const std::size_t end = std::min(at + batch_size, shard.samples.size());
        std::vector<const TokenPyramid*> batch;
        for (std::size_t i = at; i < end; ++i) batch.push_back(&shard.samples[i]);
        acc += batch_loss(params, batch, policy, branch, ZoneFilter::all).scalar() * batch.size();
        counted += batch.size();
    }
    return acc / static_cast<double>(counted);
}

namespace detail {

inline nlohmann::json epoch_record_json(const EpochRecord& r) {
    return nlohmann::json{
        {"epoch", r.epoch},
        {"phase", r.phase},
        {"p", r.p},
        {"loss_subnet", r.loss_subnet},
        {"loss_full", r.loss_full},
        {"branch_counts", {{"subnet", r.subnet_draws}, {"full", r.full_draws}}},
        {"per_layer_bridge_norms", r.bridge_norms},
        {"per_layer_flexible_norms", r.flexible_norms},
    };
}

}  // namespace detail

// The progressive training loop. Fully deterministic per (seed, config):
// data order, branch draws and the per-epoch gradient probe all derive from
// the run seed. Writes one metrics record per epoch and a checkpoint at
// each phase boundary when a directory is configured.
inline TrainHistory run_training(ModelParams& params, const TrainPhasePlan& plan,
                                 const DepthPolicy& policy, const Shard& train_shard,
                                 const Shard& val_shard, const TrainRunConfig& cfg) {
    plan.validate();
    if (train_shard.meta.schedule != params.config.schedule ||
        val_shard.meta.schedule != params.config.schedule) {
        throw config_error("run_training: shard schedule does not match the model");
    }
    if (train_shard.meta.num_classes > params.config.num_classes ||
        val_shard.meta.num_classes > params.config.num_classes) {
        throw config_error("run_training: shard classes exceed the model's class count");
    }
    if (policy.full_depth != params.config.depth) {
        throw config_error("run_training: policy depth does not match the model");
    }
    if (train_shard.samples.empty() || val_shard.samples.empty()) {
        throw config_error("run_training: empty shard");
    }

    AdamW optimizer(cfg.adam);
    BatchIterator batches(train_shard.samples.size(), cfg.batch_size,
                          Rng::mix(cfg.seed, 0x64617461ull));
    const std::size_t probe_count = std::min<std::size_t>(8, val_shard.samples.size());
    std::vector<const TokenPyramid*> probe_batch;
    for (std::size_t i = 0; i < probe_count; ++i) probe_batch.push_back(&val_shard.samples[i]);

    TrainHistory history;
    for (std::uint32_t epoch = 1; epoch <= plan.total; ++epoch) {
        const auto epoch_batches = batches.epoch_batches(epoch - 1);
        const double steps = static_cast<double>(epoch_batches.size());
        Rng branch_rng = Rng(cfg.seed).derive(0x6272616eull, epoch);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.phase = plan.phase_of(epoch);
        double p = 0.0;
        double subnet_loss_sum = 0.0, full_loss_sum = 0.0;
        for (std::size_t s = 0; s < epoch_batches.size(); ++s) {
            if (cfg.mode == RatioMode::fixed) {
                p = cfg.fixed_p;
            } else if (cfg.per_step_ramp) {
                const double t = (epoch - 1) + static_cast<double>(s) / steps;
                p = branch_probability(t, plan);
            } else {
                p = branch_probability(static_cast<double>(epoch), plan);
            }
            const Branch branch = sample_branch(branch_rng, p);

            std::vector<const TokenPyramid*> batch;
            for (std::uint32_t idx : epoch_batches[s]) batch.push_back(&train_shard.samples[idx]);
            const double loss = train_step(params, batch, branch, policy, optimizer);
            if (!std::isfinite(loss)) {
                throw numeric_error("run_training: loss diverged at epoch " +
                                    std::to_string(epoch));
            }
            if (branch == Branch::subnet) {
                rec.subnet_draws += 1;
                subnet_loss_sum += loss;
            } else {
                rec.full_draws += 1;
                full_loss_sum += loss;
            }
        }
        rec.p = p;
        rec.train_loss_subnet_branch =
            rec.subnet_draws ? subnet_loss_sum / static_cast<double>(rec.subnet_draws) : 0.0;
        rec.train_loss_full_branch =
            rec.full_draws ? full_loss_sum / static_cast<double>(rec.full_draws) : 0.0;

        rec.loss_subnet = evaluate_loss(params, val_shard, policy, Branch::subnet, cfg.batch_size);
        rec.loss_full = evaluate_loss(params, val_shard, policy, Branch::full, cfg.batch_size);

        Rng probe_rng = Rng(cfg.seed).derive(0x70726f62ull, epoch);
        const Branch probe_branch = sample_branch(probe_rng, p);
        const auto sources = gradient_source_report(params, probe_batch, policy, probe_branch);
        for (const auto& s : sources) {
            rec.bridge_norms.push_back(s.bridge_norm);
            rec.flexible_norms.push_back(s.flexible_norm);
        }

        if (cfg.metrics != nullptr) {
            (*cfg.metrics) << detail::epoch_record_json(rec).dump() << "\n";
        }
        if (!cfg.checkpoint_dir.empty() &&
            (epoch == plan.e1 || epoch == plan.e2 || epoch == plan.total)) {
            const std::string name = (epoch == plan.total)
                                         ? "ckpt-final.svck"
                                         : "ckpt-phase" + std::to_string(rec.phase) + ".svck";
            save_checkpoint((std::filesystem::path(cfg.checkpoint_dir) / name).string(), params);
        }
        history.epochs.push_back(std::move(rec));
    }
    return history;
}

}  // namespace scalevar
