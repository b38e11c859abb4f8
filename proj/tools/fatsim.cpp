#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <CLI11.hpp>
#include <json.hpp>

#include "fatsim/fl/simulation.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fatsim;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDataset = 3;
constexpr int kExitRuntime = 4;

void require_file(const fs::path& p, const std::string& what) {
    if (!fs::is_regular_file(p)) throw ConfigError(what + ": no such file " + p.string());
}

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
    return buf;
}

int cmd_run(const std::string& config, const std::vector<std::string>& sets, const fs::path& out) {
    require_file(config, "--config");
    const auto cfg = fl::load_config(config, sets);
    auto data = fl::load_experiment_data(cfg);
    fl::RunOptions opts;
    opts.out_dir = out;
    opts.on_round = [&](const fl::RoundRecord& r) {
        if (r.aborted) std::cout << "round " << r.round << " aborted: " << r.abort_reason << "\n";
        if (!r.eval) return;
        std::cout << "round " << r.round + 1 << "/" << cfg.total_rounds << "  clean " << pct(r.eval->clean_acc) << "  adv "
                  << pct(r.eval->adv_acc);
        if (r.eval->logit_scaled_adv_acc) std::cout << "  logit-scaled " << pct(*r.eval->logit_scaled_adv_acc);
        if (r.eval->transfer_adv_acc) std::cout << "  transfer " << pct(*r.eval->transfer_adv_acc);
        std::cout << std::endl;
    };
    const auto summary = fl::run_experiment(cfg, std::move(data), opts);
    std::cout << "wrote " << (out / "metrics.jsonl").string() << " (" << summary.records.size() << " rounds)\n";
    return 0;
}

int cmd_eval(const fs::path& ckpt_path, const std::string& config, const std::vector<std::string>& sets,
             const std::string& surrogate, const fs::path& out, double logit_T) {
    require_file(ckpt_path, "--ckpt");
    require_file(config, "--config");
    if (!surrogate.empty()) require_file(surrogate, "--surrogate");
    auto cfg = fl::load_config(config, sets);
    if (!surrogate.empty()) cfg.eval.surrogate = surrogate;
    if (!cfg.eval.logit_scale_T) cfg.eval.logit_scale_T = logit_T;
    cfg.eval.client_average = false;
    cfg.attack = {};
    cfg.aggregation = {};
    const auto ckpt = nn::load_checkpoint(ckpt_path);
    cfg.model.kind = ckpt.kind;
    fl::Simulation sim(cfg, fl::load_experiment_data(cfg));
    nn::check_compatible(ckpt, sim.architecture());
    sim.set_global(ckpt.params);
    const auto e = sim.evaluate(0);

    json report{{"checkpoint", ckpt_path.string()},
                {"round", ckpt.round},
                {"samples", sim.eval_set().size()},
                {"epsilon", cfg.eval.pgd.epsilon},
                {"steps", cfg.eval.pgd.steps},
                {"restarts", cfg.eval.pgd.restarts},
                {"clean_acc", e.clean_acc},
                {"adv_acc", e.adv_acc},
                {"logit_scale_T", *cfg.eval.logit_scale_T},
                {"logit_scaled_adv_acc", *e.logit_scaled_adv_acc}};
    if (e.transfer_adv_acc) report["transfer_adv_acc"] = *e.transfer_adv_acc;

    std::cout << "clean acc            " << pct(e.clean_acc) << "\n"
              << "pgd adv acc          " << pct(e.adv_acc) << "\n"
              << "logit-scaled adv acc " << pct(*e.logit_scaled_adv_acc) << "\n";
    if (e.transfer_adv_acc) std::cout << "transfer adv acc     " << pct(*e.transfer_adv_acc) << "\n";
    if (!out.empty()) {
        if (out.has_parent_path()) fs::create_directories(out.parent_path());
        std::ofstream(out) << report.dump(2) << "\n";
    }
    return 0;
}

struct MetricsFile {
    std::string run;
    std::vector<json> records;
};

MetricsFile read_metrics(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open metrics file " + path.string());
    MetricsFile m;
    m.run = path.parent_path().filename().string();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        const std::string where = path.string() + ":" + std::to_string(lineno);
        if (j.is_discarded() || !j.is_object()) throw ConfigError(where + ": not a JSON object");
        if (j.value("schema", "") != fl::kMetricsSchema)
            throw ConfigError(where + ": schema '" + j.value("schema", "") + "', expected '" + fl::kMetricsSchema + "'");
        if (m.records.empty() && j.contains("run")) m.run = j["run"].get<std::string>();
        m.records.push_back(std::move(j));
    }
    return m;
}

int cmd_export(const std::vector<std::string>& files, const fs::path& out) {
    for (const auto& f : files) require_file(f, "export-curves");
    std::vector<MetricsFile> runs;
    for (const auto& f : files) runs.push_back(read_metrics(f));
    std::set<std::string> used;
    for (auto& r : runs) {
        std::string id = r.run.empty() ? "run" : r.run;
        for (int n = 2; used.count(id); ++n) id = (r.run.empty() ? "run" : r.run) + "#" + std::to_string(n);
        used.insert(id);
        r.run = id;
    }
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream os(out);
    if (!os) throw Error("cannot write " + out.string());
    os << "run_id,round,metric,value\n";
    std::size_t rows = 0;
    for (const auto& r : runs)
        for (const auto& rec : r.records) {
            if (!rec.contains("eval")) continue;
            for (const auto& [metric, value] : rec["eval"].items()) {
                char buf[64];
                std::snprintf(buf, sizeof buf, "%.6f", value.get<double>());
                os << r.run << "," << rec["round"].get<int>() << "," << metric << "," << buf << "\n";
                ++rows;
            }
        }
    std::cout << "wrote " << rows << " rows to " << out.string() << "\n";
    return 0;
}

int cmd_compare(const std::vector<std::string>& files) {
    for (const auto& f : files) require_file(f, "compare");
    std::printf("%-32s %7s %9s %9s %9s %9s\n", "run", "rounds", "clean", "adv", "best adv", "logit");
    for (const auto& f : files) {
        const auto m = read_metrics(f);
        const json* last = nullptr;
        double best = -1.0;
        for (const auto& rec : m.records)
            if (rec.contains("eval")) {
                last = &rec;
                best = std::max(best, rec["eval"]["adv_acc"].get<double>());
            }
        if (!last) {
            std::printf("%-32s %7zu %9s %9s %9s %9s\n", m.run.c_str(), m.records.size(), "-", "-", "-", "-");
            continue;
        }
        const auto& e = (*last)["eval"];
        std::printf("%-32s %7zu %9s %9s %9s %9s\n", m.run.c_str(), m.records.size(),
                    pct(e["clean_acc"].get<double>()).c_str(), pct(e["adv_acc"].get<double>()).c_str(), pct(best).c_str(),
                    e.contains("logit_scaled_adv_acc") ? pct(e["logit_scaled_adv_acc"].get<double>()).c_str() : "-");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
    // Per-batch buffers are large enough to hit mmap on every allocation otherwise.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    CLI::App app{"Federated adversarial training simulator"};
    app.require_subcommand(1);

    std::string config, ckpt, surrogate, out;
    std::vector<std::string> sets, files;
    double logit_T = 100.0;

    auto* run = app.add_subcommand("run", "Run an experiment");
    run->add_option("--config", config, "Experiment config (JSON)")->required();
    run->add_option("--set", sets, "Override a config field, key.path=value");
    run->add_option("--out", out, "Output directory")->required();

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint under the attack suite");
    eval->add_option("--ckpt", ckpt, "Checkpoint")->required();
    eval->add_option("--config", config, "Config providing the dataset and eval settings")->required();
    eval->add_option("--set", sets, "Override a config field, key.path=value");
    eval->add_option("--surrogate", surrogate, "Surrogate checkpoint for a transfer attack");
    eval->add_option("--logit-T", logit_T, "Temperature for the logit-scaled attack when the config sets none");
    eval->add_option("--out", out, "Write the report as JSON");

    auto* compare = app.add_subcommand("compare", "Summarise metrics files side by side");
    compare->add_option("files", files, "metrics.jsonl files")->required();

    auto* exp = app.add_subcommand("export-curves", "Export eval metrics as tidy CSV");
    exp->add_option("files", files, "metrics.jsonl files")->required();
    exp->add_option("--out", out, "CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }
    try {
        if (*run) return cmd_run(config, sets, out);
        if (*eval) return cmd_eval(ckpt, config, sets, surrogate, out, logit_T);
        if (*compare) return cmd_compare(files);
        if (*exp) return cmd_export(files, out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DatasetError& e) {
        std::cerr << "dataset error: " << e.what() << "\n";
        return kExitDataset;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitConfig;
}
