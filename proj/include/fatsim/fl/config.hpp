#pragma once

// Experiment configuration: a single JSON document, strictly validated.
// Unknown keys are rejected; errors name the offending dotted field.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fatsim/aggregation/rules.hpp"
#include "fatsim/attacks/pgd.hpp"
#include "fatsim/byzantine/attacks.hpp"
#include "fatsim/error.hpp"
#include "fatsim/fl/schedule.hpp"
#include "fatsim/nn/architecture.hpp"
#include "fatsim/nn/optimizer.hpp"

namespace fatsim::fl {

using json = nlohmann::json;

struct DatasetSpec {
    std::string kind = "mnist";  // mnist | fashion-mnist | synthetic
    std::string root;            // directory with the IDX files; empty -> $FATSIM_DATA_DIR/<kind>
    std::size_t train_subset = 0;  // 0 keeps everything
    std::size_t test_subset = 0;
    // synthetic blobs
    std::size_t synthetic_classes = 10;
    std::size_t synthetic_train_per_class = 100;
    std::size_t synthetic_test_per_class = 20;
    std::size_t synthetic_dim = 16;
    double synthetic_spread = 0.05;
};

struct PartitionSpec {
    std::string kind = "iid";  // iid | dirichlet
    double alpha = 0.5;
};

struct ModelSpec {
    nn::ArchKind kind = nn::ArchKind::conv_small;
    std::vector<std::size_t> hidden{128};  // mlp only
};

struct LocalSpec {
    int steps = 1;
    std::size_t batch_size = 64;
    nn::OptimizerSpec optimizer{};
    bool persist_optimizer_state = true;
};

struct EvalSpec {
    int every = 10;
    std::size_t samples = 1000;  // 0: whole test set
    std::size_t batch_size = 250;
    attacks::PgdConfig pgd{0.3, 0.01, 40, 1, true, std::nullopt};
    std::optional<double> logit_scale_T;  // adds a logit-scaled PGD evaluator
    std::string surrogate;                // checkpoint for a transfer evaluator
    bool client_average = true;
};

enum class AttackKind { none, convergence, distillation };

inline std::string to_string(AttackKind k) {
    switch (k) {
        case AttackKind::none: return "none";
        case AttackKind::convergence: return "convergence";
        case AttackKind::distillation: return "distillation";
    }
    return "?";
}

struct AttackSpec {
    AttackKind kind = AttackKind::none;
    std::vector<int> colluders;
    int start_round = 0;
    double k = -1.5;
    double temperature = 100.0;
    std::string target_layer;
    int teacher_epochs = 2;
    int student_epochs = 2;
    std::optional<double> lr;  // distillation optimizer lr; defaults to the local lr
};

struct ExperimentConfig {
    std::string name = "experiment";
    std::uint64_t seed = 1;
    DatasetSpec dataset;
    PartitionSpec partition;
    ModelSpec model;
    int n_clients = 51;
    int clients_per_round = 51;
    LocalSpec local;
    MixSchedule mix_schedule;
    attacks::PgdConfig train_pgd{0.3, 0.03, 10, 1, true, std::nullopt};
    EvalSpec eval;
    agg::AggregationConfig aggregation;
    AttackSpec attack;
    int total_rounds = 100;
    int workers = 1;
    bool checkpoints = true;

    nn::Architecture architecture(const ad::Shape& input_shape, std::size_t classes) const {
        return model.kind == nn::ArchKind::conv_small ? nn::conv_small(input_shape, classes)
                                                      : nn::mlp(input_shape, model.hidden, classes);
    }

    void validate() const;
};

namespace detail {

// Reads fields of one JSON object and rejects whatever was not read.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
    }

    template <typename T>
    void opt(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            fail(field(key), std::string("wrong type (") + e.what() + ")");
        }
    }

    bool has(const char* key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    const json& at(const char* key) const { return j_.at(key); }
    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) fail(field(k), "unknown field");
    }

    [[noreturn]] static void fail(const std::string& field, const std::string& msg) {
        throw ConfigError("config field '" + field + "': " + msg);
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline attacks::PgdConfig read_pgd(const json& j, const std::string& path, attacks::PgdConfig cfg) {
    ObjectReader r(j, path);
    r.opt("epsilon", cfg.epsilon);
    r.opt("step_size", cfg.step_size);
    r.opt("steps", cfg.steps);
    r.opt("restarts", cfg.restarts);
    r.opt("random_init", cfg.random_init);
    if (r.has("logit_scale_T") && !r.at("logit_scale_T").is_null()) {
        double t = 0;
        r.opt("logit_scale_T", t);
        cfg.logit_scale_T = t;
    }
    r.finish();
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        ObjectReader::fail(path, e.what());
    }
    return cfg;
}

inline json write_pgd(const attacks::PgdConfig& c) {
    json j{{"epsilon", c.epsilon}, {"step_size", c.step_size}, {"steps", c.steps}, {"restarts", c.restarts},
           {"random_init", c.random_init}};
    if (c.logit_scale_T) j["logit_scale_T"] = *c.logit_scale_T;
    return j;
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
    using detail::ObjectReader;
    ExperimentConfig c;
    ObjectReader root(j, "");
    root.opt("name", c.name);
    root.opt("seed", c.seed);
    root.opt("n_clients", c.n_clients);
    root.opt("clients_per_round", c.clients_per_round);
    root.opt("total_rounds", c.total_rounds);
    root.opt("workers", c.workers);
    root.opt("checkpoints", c.checkpoints);

    if (root.has("dataset")) {
        ObjectReader r(j.at("dataset"), "dataset");
        auto& d = c.dataset;
        r.opt("kind", d.kind);
        r.opt("root", d.root);
        r.opt("train_subset", d.train_subset);
        r.opt("test_subset", d.test_subset);
        r.opt("synthetic_classes", d.synthetic_classes);
        r.opt("synthetic_train_per_class", d.synthetic_train_per_class);
        r.opt("synthetic_test_per_class", d.synthetic_test_per_class);
        r.opt("synthetic_dim", d.synthetic_dim);
        r.opt("synthetic_spread", d.synthetic_spread);
        r.finish();
        if (d.kind != "mnist" && d.kind != "fashion-mnist" && d.kind != "synthetic")
            ObjectReader::fail("dataset.kind", "expected mnist, fashion-mnist or synthetic, got '" + d.kind + "'");
    }
    if (root.has("partition")) {
        ObjectReader r(j.at("partition"), "partition");
        r.opt("kind", c.partition.kind);
        r.opt("alpha", c.partition.alpha);
        r.finish();
        if (c.partition.kind != "iid" && c.partition.kind != "dirichlet")
            ObjectReader::fail("partition.kind", "expected iid or dirichlet, got '" + c.partition.kind + "'");
    }
    if (root.has("model")) {
        ObjectReader r(j.at("model"), "model");
        std::string kind = nn::to_string(c.model.kind);
        r.opt("kind", kind);
        r.opt("hidden", c.model.hidden);
        r.finish();
        try {
            c.model.kind = nn::arch_kind_from_string(kind);
        } catch (const ConfigError& e) {
            ObjectReader::fail("model.kind", e.what());
        }
    }
    if (root.has("local")) {
        ObjectReader r(j.at("local"), "local");
        r.opt("steps", c.local.steps);
        r.opt("batch_size", c.local.batch_size);
        r.opt("persist_optimizer_state", c.local.persist_optimizer_state);
        if (r.has("optimizer")) {
            ObjectReader o(j.at("local").at("optimizer"), "local.optimizer");
            std::string kind = c.local.optimizer.kind == nn::OptimizerKind::adam ? "adam" : "sgd";
            o.opt("kind", kind);
            o.opt("lr", c.local.optimizer.lr);
            o.opt("beta1", c.local.optimizer.beta1);
            o.opt("beta2", c.local.optimizer.beta2);
            o.opt("eps", c.local.optimizer.eps);
            o.finish();
            if (kind != "adam" && kind != "sgd") ObjectReader::fail("local.optimizer.kind", "expected adam or sgd");
            c.local.optimizer.kind = kind == "adam" ? nn::OptimizerKind::adam : nn::OptimizerKind::sgd;
        }
        r.finish();
    }
    if (root.has("mix_schedule")) {
        const auto& s = j.at("mix_schedule");
        if (!s.is_array()) ObjectReader::fail("mix_schedule", "expected an array of {start_round, ratio}");
        c.mix_schedule.segments.clear();
        for (std::size_t i = 0; i < s.size(); ++i) {
            ObjectReader r(s[i], "mix_schedule[" + std::to_string(i) + "]");
            MixSegment seg;
            r.opt("start_round", seg.start_round);
            r.opt("ratio", seg.ratio);
            r.finish();
            c.mix_schedule.segments.push_back(seg);
        }
    }
    if (root.has("train_pgd")) c.train_pgd = detail::read_pgd(j.at("train_pgd"), "train_pgd", c.train_pgd);
    if (root.has("eval")) {
        ObjectReader r(j.at("eval"), "eval");
        r.opt("every", c.eval.every);
        r.opt("samples", c.eval.samples);
        r.opt("batch_size", c.eval.batch_size);
        r.opt("surrogate", c.eval.surrogate);
        r.opt("client_average", c.eval.client_average);
        if (r.has("logit_scale_T") && !j.at("eval").at("logit_scale_T").is_null()) {
            double t = 0;
            r.opt("logit_scale_T", t);
            c.eval.logit_scale_T = t;
        }
        if (r.has("pgd")) c.eval.pgd = detail::read_pgd(j.at("eval").at("pgd"), "eval.pgd", c.eval.pgd);
        r.finish();
    }
    if (root.has("aggregation")) {
        ObjectReader r(j.at("aggregation"), "aggregation");
        std::string rule = agg::to_string(c.aggregation.rule);
        r.opt("rule", rule);
        r.opt("f", c.aggregation.f);
        r.finish();
        try {
            c.aggregation.rule = agg::rule_from_string(rule);
        } catch (const ConfigError& e) {
            ObjectReader::fail("aggregation.rule", e.what());
        }
    }
    if (root.has("attack")) {
        ObjectReader r(j.at("attack"), "attack");
        std::string kind = to_string(c.attack.kind);
        r.opt("kind", kind);
        r.opt("colluders", c.attack.colluders);
        r.opt("start_round", c.attack.start_round);
        r.opt("k", c.attack.k);
        r.opt("temperature", c.attack.temperature);
        r.opt("target_layer", c.attack.target_layer);
        r.opt("teacher_epochs", c.attack.teacher_epochs);
        r.opt("student_epochs", c.attack.student_epochs);
        if (r.has("lr") && !j.at("attack").at("lr").is_null()) {
            double lr = 0;
            r.opt("lr", lr);
            c.attack.lr = lr;
        }
        r.finish();
        if (kind == "none") c.attack.kind = AttackKind::none;
        else if (kind == "convergence") c.attack.kind = AttackKind::convergence;
        else if (kind == "distillation") c.attack.kind = AttackKind::distillation;
        else ObjectReader::fail("attack.kind", "expected none, convergence or distillation, got '" + kind + "'");
    }
    root.finish();
    c.validate();
    return c;
}

inline json config_to_json(const ExperimentConfig& c) {
    json sched = json::array();
    for (const auto& s : c.mix_schedule.segments) sched.push_back({{"start_round", s.start_round}, {"ratio", s.ratio}});
    json eval{{"every", c.eval.every},
              {"samples", c.eval.samples},
              {"batch_size", c.eval.batch_size},
              {"pgd", detail::write_pgd(c.eval.pgd)},
              {"surrogate", c.eval.surrogate},
              {"client_average", c.eval.client_average}};
    if (c.eval.logit_scale_T) eval["logit_scale_T"] = *c.eval.logit_scale_T;
    json attack{{"kind", to_string(c.attack.kind)},
                {"colluders", c.attack.colluders},
                {"start_round", c.attack.start_round},
                {"k", c.attack.k},
                {"temperature", c.attack.temperature},
                {"target_layer", c.attack.target_layer},
                {"teacher_epochs", c.attack.teacher_epochs},
                {"student_epochs", c.attack.student_epochs}};
    if (c.attack.lr) attack["lr"] = *c.attack.lr;
    return json{
        {"name", c.name},
        {"seed", c.seed},
        {"dataset",
         {{"kind", c.dataset.kind},
          {"root", c.dataset.root},
          {"train_subset", c.dataset.train_subset},
          {"test_subset", c.dataset.test_subset},
          {"synthetic_classes", c.dataset.synthetic_classes},
          {"synthetic_train_per_class", c.dataset.synthetic_train_per_class},
          {"synthetic_test_per_class", c.dataset.synthetic_test_per_class},
          {"synthetic_dim", c.dataset.synthetic_dim},
          {"synthetic_spread", c.dataset.synthetic_spread}}},
        {"partition", {{"kind", c.partition.kind}, {"alpha", c.partition.alpha}}},
        {"model", {{"kind", nn::to_string(c.model.kind)}, {"hidden", c.model.hidden}}},
        {"n_clients", c.n_clients},
        {"clients_per_round", c.clients_per_round},
        {"local",
         {{"steps", c.local.steps},
          {"batch_size", c.local.batch_size},
          {"persist_optimizer_state", c.local.persist_optimizer_state},
          {"optimizer",
           {{"kind", c.local.optimizer.kind == nn::OptimizerKind::adam ? "adam" : "sgd"},
            {"lr", c.local.optimizer.lr},
            {"beta1", c.local.optimizer.beta1},
            {"beta2", c.local.optimizer.beta2},
            {"eps", c.local.optimizer.eps}}}}},
        {"mix_schedule", sched},
        {"train_pgd", detail::write_pgd(c.train_pgd)},
        {"eval", eval},
        {"aggregation", {{"rule", agg::to_string(c.aggregation.rule)}, {"f", c.aggregation.f}}},
        {"attack", attack},
        {"total_rounds", c.total_rounds},
        {"workers", c.workers},
        {"checkpoints", c.checkpoints},
    };
}

inline void ExperimentConfig::validate() const {
    using detail::ObjectReader;
    if (n_clients < 1) ObjectReader::fail("n_clients", "must be >= 1");
    if (clients_per_round < 1 || clients_per_round > n_clients)
        ObjectReader::fail("clients_per_round", "must lie in [1, n_clients]");
    if (total_rounds < 0) ObjectReader::fail("total_rounds", "must be >= 0");
    if (workers < 1) ObjectReader::fail("workers", "must be >= 1");
    if (local.steps < 1) ObjectReader::fail("local.steps", "must be >= 1");
    if (local.batch_size < 1) ObjectReader::fail("local.batch_size", "must be >= 1");
    if (!(local.optimizer.lr > 0.0)) ObjectReader::fail("local.optimizer.lr", "must be > 0");
    if (eval.every < 1) ObjectReader::fail("eval.every", "must be >= 1");
    if (eval.batch_size < 1) ObjectReader::fail("eval.batch_size", "must be >= 1");
    if (eval.logit_scale_T && !(*eval.logit_scale_T > 0.0)) ObjectReader::fail("eval.logit_scale_T", "must be > 0");
    if (!(partition.alpha > 0.0)) ObjectReader::fail("partition.alpha", "must be > 0");
    if (model.kind == nn::ArchKind::mlp && model.hidden.empty()) ObjectReader::fail("model.hidden", "needs at least one layer");
    try {
        mix_schedule.validate();
    } catch (const ConfigError& e) {
        ObjectReader::fail("mix_schedule", e.what());
    }
    if (aggregation.f < 0) ObjectReader::fail("aggregation.f", "must be >= 0");
    if (static_cast<std::size_t>(clients_per_round) < agg::min_updates(aggregation.rule, aggregation.f))
        ObjectReader::fail("aggregation.f", agg::to_string(aggregation.rule) + " with f=" + std::to_string(aggregation.f) +
                                                " needs at least " +
                                                std::to_string(agg::min_updates(aggregation.rule, aggregation.f)) +
                                                " clients per round");
    std::set<int> seen;
    for (int id : attack.colluders) {
        if (id < 0 || id >= n_clients) ObjectReader::fail("attack.colluders", "id " + std::to_string(id) + " out of range");
        if (!seen.insert(id).second) ObjectReader::fail("attack.colluders", "duplicate id " + std::to_string(id));
    }
    if (attack.kind != AttackKind::none) {
        if (attack.colluders.empty()) ObjectReader::fail("attack.colluders", "an attack needs colluders");
        if (aggregation.rule != agg::Rule::fedavg && static_cast<int>(attack.colluders.size()) != aggregation.f)
            ObjectReader::fail("attack.colluders", "count " + std::to_string(attack.colluders.size()) +
                                                       " must equal aggregation.f=" + std::to_string(aggregation.f));
        if (attack.kind == AttackKind::convergence && attack.colluders.size() < 2)
            ObjectReader::fail("attack.colluders", "the convergence attack needs at least 2 colluders");
        if (!(attack.temperature > 0.0)) ObjectReader::fail("attack.temperature", "must be > 0");
        if (attack.teacher_epochs < 0 || attack.student_epochs < 0)
            ObjectReader::fail("attack", "teacher_epochs/student_epochs must be >= 0");
        if (attack.lr && !(*attack.lr > 0.0)) ObjectReader::fail("attack.lr", "must be > 0");
        if (attack.start_round < 0) ObjectReader::fail("attack.start_round", "must be >= 0");
    } else if (!attack.colluders.empty()) {
        ObjectReader::fail("attack.colluders", "colluders listed but attack.kind is none");
    }
}

/// Applies "a.b.c=value" to a JSON document. The value is parsed as JSON when
/// possible, otherwise taken as a string.
inline void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override '" + assignment + "': expected key=value");
    const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    json* node = &doc;
    std::stringstream ss(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) {
        if (part.empty()) throw ConfigError("override '" + assignment + "': empty path component");
        parts.push_back(part);
    }
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->is_object()) throw ConfigError("config field '" + key + "': parent is not an object");
        node = &(*node)[parts[i]];
        if (node->is_null()) *node = json::object();
    }
    if (!node->is_object()) throw ConfigError("config field '" + key + "': parent is not an object");
    (*node)[parts.back()] = std::move(value);
}

inline json read_json_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path.string());
    json j = json::parse(is, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config: " + path.string() + " is not valid JSON");
    return j;
}

inline ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
    json j = read_json_file(path);
    for (const auto& o : overrides) apply_override(j, o);
    return config_from_json(j);
}

}  // namespace fatsim::fl
