#pragma once

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fatsim/aggregation/rules.hpp"
#include "fatsim/attacks/pgd.hpp"
#include "fatsim/byzantine/attacks.hpp"
#include "fatsim/data/dataset.hpp"
#include "fatsim/data/partition.hpp"
#include "fatsim/fl/config.hpp"
#include "fatsim/fl/schedule.hpp"
#include "fatsim/fl/trainer.hpp"
#include "fatsim/nn/checkpoint.hpp"
#include "fatsim/nn/model.hpp"
#include "fatsim/parallel.hpp"
#include "fatsim/rng.hpp"

namespace fatsim::fl {

inline constexpr const char* kMetricsSchema = "fatsim.metrics/1";
inline constexpr const char* kDataDirEnv = "FATSIM_DATA_DIR";

// Stream tags mixed into derive_seed so unrelated draws never share a sequence.
enum SeedTag : std::uint64_t { kTagInit = 1, kTagData = 2, kTagPartition = 3, kTagSample = 4, kTagClient = 5, kTagEval = 6 };

struct EvalRecord {
    double clean_acc = 0.0;
    double adv_acc = 0.0;
    std::optional<double> logit_scaled_adv_acc;
    std::optional<double> transfer_adv_acc;
    std::optional<double> client_avg_clean_acc;
};

struct RoundRecord {
    int round = 0;
    double ratio = 0.0;
    agg::Rule rule = agg::Rule::fedavg;
    std::vector<int> participants;
    std::optional<int> selected_client;
    std::vector<int> selected_clients;
    std::size_t kept_per_coordinate = 0;
    AttackKind attack = AttackKind::none;
    bool attack_active = false;
    std::vector<int> colluders_present;
    bool colluders_identical = true;
    std::optional<double> l2_proximity;
    std::vector<int> nan_clients;
    bool aborted = false;
    std::string abort_reason;
    std::optional<EvalRecord> eval;
    double wall_ms = 0.0;  // not part of the metrics stream
};

inline nlohmann::json to_json(const RoundRecord& r, const std::string& run) {
    nlohmann::json j{{"schema", kMetricsSchema},
                     {"run", run},
                     {"round", r.round},
                     {"ratio", r.ratio},
                     {"rule", agg::to_string(r.rule)},
                     {"participants", r.participants},
                     {"kept_per_coordinate", r.kept_per_coordinate},
                     {"attack",
                      {{"kind", to_string(r.attack)},
                       {"active", r.attack_active},
                       {"colluders_present", r.colluders_present},
                       {"colluders_identical", r.colluders_identical}}},
                     {"nan_clients", r.nan_clients},
                     {"aborted", r.aborted}};
    j["selected_client"] = r.selected_client ? nlohmann::json(*r.selected_client) : nlohmann::json(nullptr);
    if (!r.selected_clients.empty()) j["selected_clients"] = r.selected_clients;
    if (r.l2_proximity) j["attack"]["l2_proximity"] = *r.l2_proximity;
    if (r.aborted) j["abort_reason"] = r.abort_reason;
    if (r.eval) {
        auto& e = j["eval"];
        e["clean_acc"] = r.eval->clean_acc;
        e["adv_acc"] = r.eval->adv_acc;
        if (r.eval->logit_scaled_adv_acc) e["logit_scaled_adv_acc"] = *r.eval->logit_scaled_adv_acc;
        if (r.eval->transfer_adv_acc) e["transfer_adv_acc"] = *r.eval->transfer_adv_acc;
        if (r.eval->client_avg_clean_acc) e["client_avg_clean_acc"] = *r.eval->client_avg_clean_acc;
    }
    return j;
}

struct ExperimentData {
    data::Dataset train;
    data::Dataset test;
};

/// Resolves and loads the configured dataset (IDX directory or synthetic blobs) and applies subsetting.
inline ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
    ExperimentData d;
    if (cfg.dataset.kind == "synthetic") {
        const auto& s = cfg.dataset;
        const auto seed = derive_seed({cfg.seed, kTagData});
        // one draw, then split per class so train and test share centroids
        const std::size_t per = s.synthetic_train_per_class + s.synthetic_test_per_class;
        auto all = data::synthetic_blobs(s.synthetic_classes, per, s.synthetic_dim, seed, static_cast<float>(s.synthetic_spread));
        std::vector<std::size_t> tr, te;
        for (std::size_t c = 0; c < s.synthetic_classes; ++c)
            for (std::size_t i = 0; i < per; ++i) (i < s.synthetic_train_per_class ? tr : te).push_back(c * per + i);
        d.train = data::select(all, tr);
        if (te.empty()) throw ConfigError("config field 'dataset.synthetic_test_per_class': must be >= 1");
        d.test = data::select(all, te);
    } else {
        std::filesystem::path root = cfg.dataset.root;
        if (root.empty()) {
            const char* env = std::getenv(kDataDirEnv);
            if (!env || !*env)
                throw DatasetError("dataset: no dataset.root configured and " + std::string(kDataDirEnv) + " is not set");
            root = std::filesystem::path(env) / cfg.dataset.kind;
        }
        auto tt = data::load_idx_dir(root);
        d.train = std::move(tt.train);
        d.test = std::move(tt.test);
    }
    d.train = data::subset(d.train, cfg.dataset.train_subset, derive_seed({cfg.seed, kTagData, 1}));
    d.test = data::subset(d.test, cfg.dataset.test_subset, derive_seed({cfg.seed, kTagData, 2}));
    return d;
}

/// Round-structured federated adversarial training with optional Byzantine colluders.
class Simulation {
public:
    Simulation(ExperimentConfig cfg, ExperimentData data) : cfg_(std::move(cfg)), data_(std::move(data)) {
        cfg_.validate();
        arch_ = cfg_.architecture(data_.train.sample_shape(), data_.train.classes);
        arch_.param_count();
        const auto pseed = derive_seed({cfg_.seed, kTagPartition});
        if (cfg_.partition.kind == "iid") {
            partition_.train = data::partition_iid(data_.train, cfg_.n_clients, pseed);
            partition_.test = data::partition_iid(data_.test, cfg_.n_clients, derive_seed({pseed, 1}));
        } else {
            partition_.train = data::partition_label_skew(data_.train, cfg_.n_clients, cfg_.partition.alpha, pseed);
            partition_.test =
                data::partition_label_skew(data_.test, cfg_.n_clients, cfg_.partition.alpha, derive_seed({pseed, 1}));
        }
        global_ = nn::build_model(arch_, derive_seed({cfg_.seed, kTagInit})).flatten();
        states_.resize(static_cast<std::size_t>(cfg_.n_clients));
        eval_set_ = cfg_.eval.samples == 0 || cfg_.eval.samples >= data_.test.size()
                        ? data_.test
                        : data::subset(data_.test, cfg_.eval.samples, derive_seed({cfg_.seed, kTagEval}));
        colluder_set_.assign(static_cast<std::size_t>(cfg_.n_clients), 0);
        for (int id : cfg_.attack.colluders) colluder_set_[static_cast<std::size_t>(id)] = 1;
        if (!cfg_.eval.surrogate.empty()) {
            auto ckpt = nn::load_checkpoint(cfg_.eval.surrogate);
            auto sub = cfg_;
            sub.model.kind = ckpt.kind;
            surrogate_arch_ = sub.architecture(data_.train.sample_shape(), data_.train.classes);
            nn::check_compatible(ckpt, surrogate_arch_);
            surrogate_ = nn::unflatten(ckpt.params, surrogate_arch_);
        }
    }

    const ExperimentConfig& config() const { return cfg_; }
    const nn::Architecture& architecture() const { return arch_; }
    const data::Partition& partition() const { return partition_; }
    const ExperimentData& data() const { return data_; }
    const data::Dataset& eval_set() const { return eval_set_; }
    int round() const { return round_; }
    const std::vector<float>& global_vector() const { return global_; }
    nn::ModelParams global_params() const { return nn::unflatten(global_, arch_); }
    void set_global(std::vector<float> v) {
        if (v.size() != global_.size()) throw ShapeError("set_global: wrong parameter count");
        global_ = std::move(v);
    }
    bool is_colluder(int id) const { return colluder_set_[static_cast<std::size_t>(id)] != 0; }

    /// Updates submitted in the most recent round, ordered by client id.
    const std::vector<agg::ClientUpdate>& last_submissions() const { return last_submissions_; }

    /// Clients taking part in `round`, ascending ids.
    std::vector<int> participants(int round) const {
        std::vector<int> ids(static_cast<std::size_t>(cfg_.n_clients));
        std::iota(ids.begin(), ids.end(), 0);
        if (cfg_.clients_per_round < cfg_.n_clients) {
            Rng rng(derive_seed({cfg_.seed, kTagSample, static_cast<std::uint64_t>(round)}));
            std::shuffle(ids.begin(), ids.end(), rng);
            ids.resize(static_cast<std::size_t>(cfg_.clients_per_round));
            std::sort(ids.begin(), ids.end());
        }
        return ids;
    }

    RoundRecord run_round() {
        const auto t0 = std::chrono::steady_clock::now();
        RoundRecord rec;
        rec.round = round_;
        rec.rule = cfg_.aggregation.rule;
        rec.ratio = schedule_ratio(cfg_.mix_schedule, round_);
        rec.participants = participants(round_);
        rec.attack = cfg_.attack.kind;
        rec.attack_active = cfg_.attack.kind != AttackKind::none && round_ >= cfg_.attack.start_round;

        const std::size_t m = rec.participants.size();
        std::vector<std::optional<agg::ClientUpdate>> submitted(m);
        std::vector<char> nan(m, 0);
        const bool distill = rec.attack_active && cfg_.attack.kind == AttackKind::distillation;

        // Local work; results land in slot i, so worker count cannot change them.
        parallel_for(m, cfg_.workers, [&](std::size_t i) {
            const int id = rec.participants[i];
            if (distill && is_colluder(id)) return;
            Rng rng(derive_seed({cfg_.seed, kTagClient, static_cast<std::uint64_t>(id), static_cast<std::uint64_t>(round_)}));
            auto& state = states_[static_cast<std::size_t>(id)];
            if (!cfg_.local.persist_optimizer_state) state = {};
            try {
                submitted[i] = local_fat_step(arch_, global_, data_.train, partition_.train[static_cast<std::size_t>(id)],
                                              rec.ratio, cfg_.train_pgd, cfg_.local, state, id, rng)
                                   .update;
            } catch (const NumericError&) {
                nan[i] = 1;
            }
        });

        // Distillation colluders pool their shards and all submit one distilled vector.
        if (distill) {
            std::vector<std::size_t> pooled, slots;
            for (std::size_t i = 0; i < m; ++i)
                if (is_colluder(rec.participants[i])) {
                    slots.push_back(i);
                    const auto& shard = partition_.train[static_cast<std::size_t>(rec.participants[i])];
                    pooled.insert(pooled.end(), shard.begin(), shard.end());
                }
            if (!slots.empty()) {
                const int leader = rec.participants[slots.front()];
                Rng rng(derive_seed({cfg_.seed, kTagClient, static_cast<std::uint64_t>(leader), static_cast<std::uint64_t>(round_)}));
                try {
                    const auto update = byz::distillation_attack_update(arch_, global_params(), data::select(data_.train, pooled),
                                                                        distillation_config(), leader, rng);
                    for (auto i : slots) {
                        submitted[i] = update;
                        submitted[i]->client_id = rec.participants[i];
                        submitted[i]->sample_count = static_cast<double>(
                            partition_.train[static_cast<std::size_t>(rec.participants[i])].size());
                    }
                } catch (const NumericError&) {
                    for (auto i : slots) nan[i] = 1;
                }
            }
        }

        // Rendezvous: convergence colluders replace their honest updates with mu + k sigma.
        std::vector<std::size_t> colluder_slots;
        for (std::size_t i = 0; i < m; ++i)
            if (is_colluder(rec.participants[i])) {
                rec.colluders_present.push_back(rec.participants[i]);
                if (submitted[i]) colluder_slots.push_back(i);
            }
        std::vector<std::vector<float>> honest_refs;
        for (std::size_t i = 0; i < m; ++i)
            if (submitted[i] && !is_colluder(rec.participants[i])) honest_refs.push_back(submitted[i]->vector);
        if (rec.attack_active && cfg_.attack.kind == AttackKind::convergence) {
            if (colluder_slots.size() >= 2) {
                std::vector<std::vector<float>> benign;
                for (auto i : colluder_slots) benign.push_back(submitted[i]->vector);
                const auto malicious = byz::convergence_attack_updates(benign, cfg_.attack.k);
                for (auto i : colluder_slots) submitted[i]->vector = malicious;
            } else {
                rec.attack_active = false;
            }
        }
        if (rec.attack_active && !colluder_slots.empty()) {
            const auto& first = submitted[colluder_slots.front()]->vector;
            for (auto i : colluder_slots) rec.colluders_identical = rec.colluders_identical && submitted[i]->vector == first;
            if (!honest_refs.empty()) rec.l2_proximity = byz::l2_proximity(first, honest_refs);
        }

        last_submissions_.clear();
        for (std::size_t i = 0; i < m; ++i) {
            if (nan[i]) rec.nan_clients.push_back(rec.participants[i]);
            if (submitted[i]) last_submissions_.push_back(std::move(*submitted[i]));
        }

        try {
            auto result = agg::aggregate(cfg_.aggregation, last_submissions_);
            for (float v : result.vector)
                if (!std::isfinite(v)) throw NumericError("aggregate: non-finite result");
            global_ = std::move(result.vector);
            rec.selected_client = result.selected_client;
            rec.selected_clients = std::move(result.selected_clients);
            rec.kept_per_coordinate = result.kept_per_coordinate;
        } catch (const AggregationError& e) {
            rec.aborted = true;
            rec.abort_reason = e.what();
        } catch (const NumericError& e) {
            rec.aborted = true;
            rec.abort_reason = e.what();
        }

        if ((round_ + 1) % cfg_.eval.every == 0) rec.eval = evaluate(round_);
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        ++round_;
        return rec;
    }

    EvalRecord evaluate(int round) const {
        const auto params = global_params();
        const attacks::EvalOptions opts{cfg_.eval.batch_size, cfg_.workers};
        const auto seed = derive_seed({cfg_.seed, kTagEval, static_cast<std::uint64_t>(round)});
        EvalRecord e;
        const auto r = attacks::evaluate_robustness(arch_, params, eval_set_, cfg_.eval.pgd, seed, opts);
        e.clean_acc = r.clean_acc;
        e.adv_acc = r.adv_acc;
        if (cfg_.eval.logit_scale_T) {
            auto pgd = cfg_.eval.pgd;
            pgd.logit_scale_T = *cfg_.eval.logit_scale_T;
            e.logit_scaled_adv_acc = attacks::evaluate_robustness(arch_, params, eval_set_, pgd, seed, opts).adv_acc;
        }
        if (surrogate_)
            e.transfer_adv_acc = attacks::transfer_attack(surrogate_arch_, *surrogate_, arch_, params, eval_set_, cfg_.eval.pgd, seed, opts);
        if (cfg_.eval.client_average) {
            double total = 0.0;
            std::size_t counted = 0;
            for (const auto& shard : partition_.test) {
                if (shard.empty()) continue;
                total += attacks::accuracy(arch_, params, data::select(data_.test, shard));
                ++counted;
            }
            if (counted) e.client_avg_clean_acc = total / static_cast<double>(counted);
        }
        return e;
    }

    byz::DistillationAttackConfig distillation_config() const {
        byz::DistillationAttackConfig d;
        d.temperature = cfg_.attack.temperature;
        d.target_layer = cfg_.attack.target_layer;
        d.teacher_epochs = cfg_.attack.teacher_epochs;
        d.student_epochs = cfg_.attack.student_epochs;
        d.batch_size = cfg_.local.batch_size;
        d.optimizer = cfg_.local.optimizer;
        if (cfg_.attack.lr) d.optimizer.lr = *cfg_.attack.lr;
        return d;
    }

    data::Dataset client_train(int id) const {
        return data::select(data_.train, partition_.train[static_cast<std::size_t>(id)]);
    }

private:
    ExperimentConfig cfg_;
    ExperimentData data_;
    nn::Architecture arch_;
    data::Partition partition_;
    data::Dataset eval_set_;
    std::vector<float> global_;
    std::vector<nn::OptimizerState> states_;
    std::vector<char> colluder_set_;
    std::vector<agg::ClientUpdate> last_submissions_;
    nn::Architecture surrogate_arch_;
    std::optional<nn::ModelParams> surrogate_;
    int round_ = 0;
};

struct RunOptions {
    std::filesystem::path out_dir;  // empty: keep everything in memory
    std::function<void(const RoundRecord&)> on_round;
    // sees the global weights the round started from and the submissions it aggregated
    std::function<void(const Simulation&, const std::vector<float>& start, const RoundRecord&)> inspect;
};

struct RunSummary {
    std::vector<RoundRecord> records;
    std::vector<float> final_params;
    std::optional<std::vector<float>> best_params;
    std::optional<EvalRecord> best_eval;
    int best_round = -1;
};

/// Runs every round, emitting metrics.jsonl (deterministic), timing.jsonl, and final/best checkpoints.
inline RunSummary run_experiment(const ExperimentConfig& cfg, ExperimentData data, const RunOptions& opts = {}) {
    Simulation sim(cfg, std::move(data));
    RunSummary summary;
    std::ofstream metrics, timing;
    if (!opts.out_dir.empty()) {
        std::filesystem::create_directories(opts.out_dir);
        metrics.open(opts.out_dir / "metrics.jsonl", std::ios::trunc);
        timing.open(opts.out_dir / "timing.jsonl", std::ios::trunc);
        if (!metrics || !timing) throw Error("run: cannot write into " + opts.out_dir.string());
        std::ofstream(opts.out_dir / "config.json", std::ios::trunc) << config_to_json(cfg).dump(2) << "\n";
    }
    for (int r = 0; r < cfg.total_rounds; ++r) {
        std::vector<float> start;
        if (opts.inspect) start = sim.global_vector();
        auto rec = sim.run_round();
        if (opts.inspect) opts.inspect(sim, start, rec);
        if (rec.eval && (!summary.best_eval || rec.eval->adv_acc > summary.best_eval->adv_acc)) {
            summary.best_eval = rec.eval;
            summary.best_params = sim.global_vector();
            summary.best_round = rec.round;
        }
        if (metrics.is_open()) {
            metrics << to_json(rec, cfg.name).dump() << "\n";
            timing << nlohmann::json{{"round", rec.round}, {"wall_ms", rec.wall_ms}}.dump() << "\n";
            if (!metrics) throw Error("run: failed writing metrics");
        }
        if (opts.on_round) opts.on_round(rec);
        summary.records.push_back(std::move(rec));
    }
    summary.final_params = sim.global_vector();
    if (!opts.out_dir.empty() && cfg.checkpoints) {
        nn::save_checkpoint(opts.out_dir / "final.ckpt",
                            {sim.architecture().kind, static_cast<std::uint64_t>(cfg.total_rounds), summary.final_params});
        if (summary.best_params)
            nn::save_checkpoint(opts.out_dir / "best.ckpt", {sim.architecture().kind,
                                                             static_cast<std::uint64_t>(summary.best_round + 1),
                                                             *summary.best_params});
    }
    return summary;
}

}  // namespace fatsim::fl
