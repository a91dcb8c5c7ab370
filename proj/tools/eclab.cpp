// eclab: run/sweep experiments from JSON configs, verify the math suites,
// and render metric streams to SVG charts.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "eclab/config.hpp"
#include "eclab/harness.hpp"
#include "eclab/plot.hpp"
#include "eclab/transformer.hpp"
#include "eclab/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw eclab::IoError("cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string sanitize_id(const std::string& id) {
    std::string out = id;
    for (char& c : out)
        if (c == '/' || c == ' ' || c == ',' || c == '"') c = '_';
    return out;
}

/// Writes metrics.jsonl, checkpoint.bin and a one-row summary.csv into dir.
eclab::ExperimentResult execute_run(const eclab::ExperimentConfig& cfg,
                                    const fs::path& dir, const std::string& run_id) {
    fs::create_directories(dir);
    std::ofstream metrics(dir / "metrics.jsonl");
    eclab::Model model;
    eclab::ExperimentResult result = eclab::run_experiment(cfg, &metrics, &model);

    std::ofstream ckpt(dir / "checkpoint.bin", std::ios::binary);
    eclab::save_checkpoint(ckpt, model);
    std::ofstream summary(dir / "summary.csv");
    eclab::write_sweep_summary(summary, {eclab::summary_row(run_id, result)});
    return result;
}

int cmd_run(const std::string& config_path, const std::string& out_dir,
            std::int64_t seed_override) {
    eclab::ExperimentConfig cfg = eclab::parse_config(read_file(config_path));
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
    eclab::ExperimentResult result = execute_run(cfg, out_dir, "run");

    json out;
    out["status"] = eclab::to_string(result.status);
    out["final_loss"] = result.final_loss;
    out["final_eval"] = result.final_eval;
    out["first_collapse_step"] = result.first_collapse_step;
    out["max_sharpness"] = result.max_sharpness;
    out["threshold"] = result.threshold;
    std::cout << out.dump() << "\n";
    return result.status == eclab::RunStatus::Completed ? 0 : 2;
}

int cmd_sweep(const std::string& config_path, const std::string& grid_path,
              const std::string& out_dir, unsigned parallel) {
    eclab::ExperimentConfig base = eclab::parse_config(read_file(config_path));
    json grid_json = json::parse(read_file(grid_path));
    if (!grid_json.is_object())
        throw eclab::ConfigError("sweep: grid file must be a JSON object");
    std::vector<std::pair<std::string, std::vector<json>>> grid;
    for (const auto& [path, values] : grid_json.items()) {
        if (!values.is_array())
            throw eclab::ConfigError("sweep: grid values for " + path + " must be an array");
        grid.emplace_back(path, std::vector<json>(values.begin(), values.end()));
    }

    std::vector<eclab::SweepRun> runs = eclab::expand_grid(base, grid);
    std::vector<eclab::ExperimentResult> results(runs.size());
    std::vector<fs::path> dirs(runs.size());
    for (std::size_t i = 0; i < runs.size(); ++i) {
        char idx[16];
        std::snprintf(idx, sizeof idx, "run_%03zu_", i);
        dirs[i] = fs::path(out_dir) / (idx + sanitize_id(runs[i].run_id));
    }

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < runs.size(); i = next.fetch_add(1))
            results[i] = execute_run(runs[i].cfg, dirs[i], runs[i].run_id);
    };
    const unsigned n_threads = std::max(1u, std::min<unsigned>(parallel, runs.size()));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (unsigned t = 0; t < n_threads; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }

    std::vector<eclab::SweepRow> rows;
    for (std::size_t i = 0; i < runs.size(); ++i)
        rows.push_back(eclab::summary_row(runs[i].run_id, results[i]));
    fs::create_directories(out_dir);
    std::ofstream summary(fs::path(out_dir) / "sweep_summary.csv");
    eclab::write_sweep_summary(summary, rows);
    eclab::write_sweep_summary(std::cout, rows);
    return 0;
}

int cmd_verify(const std::string& suite, std::uint64_t seed) {
    std::vector<eclab::VerifySuiteResult> results = eclab::run_verify(suite, seed);
    return eclab::print_verify_table(std::cout, results) ? 0 : 1;
}

int cmd_plot(const std::vector<std::string>& metrics_paths,
             const std::vector<std::string>& fields,
             const std::vector<std::string>& logy, const std::string& out_svg) {
    std::vector<std::pair<std::string, std::vector<json>>> runs;
    for (const std::string& path : metrics_paths) {
        std::ifstream is(path);
        if (!is) throw eclab::IoError("cannot open " + path);
        runs.emplace_back(fs::path(path).parent_path().filename().string().empty()
                              ? path
                              : fs::path(path).parent_path().filename().string(),
                          eclab::parse_jsonl(is));
    }
    const std::set<std::string> logy_set(logy.begin(), logy.end());
    const std::string svg = eclab::render_metric_charts(runs, fields, logy_set);
    std::ofstream os(out_svg);
    if (!os) throw eclab::IoError("cannot write " + out_svg);
    os << svg;
    std::cout << out_svg << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"attention-entropy laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_dir, grid_path, suite = "all", out_svg;
    std::int64_t seed_override = -1;
    std::uint64_t verify_seed = 0;
    unsigned parallel = 1;
    std::vector<std::string> metrics_paths, fields, logy;

    CLI::App* run = app.add_subcommand("run", "train one experiment from a JSON config");
    run->add_option("--config", config_path, "experiment config JSON")->required();
    run->add_option("--out", out_dir, "output directory")->required();
    run->add_option("--seed", seed_override, "override the config seed");

    CLI::App* sweep = app.add_subcommand("sweep", "Cartesian grid of experiments");
    sweep->add_option("--config", config_path, "base config JSON")->required();
    sweep->add_option("--grid", grid_path, "JSON object: config path -> value array")
        ->required();
    sweep->add_option("--out", out_dir, "output directory")->required();
    sweep->add_option("--parallel", parallel, "worker threads");

    CLI::App* verify = app.add_subcommand("verify", "run the math property suites");
    verify->add_option("--suite", suite, "bound|prop32|power|gradcheck|all");
    verify->add_option("--seed", verify_seed, "suite RNG seed");

    CLI::App* plot = app.add_subcommand("plot", "render metric JSONL files to SVG");
    plot->add_option("--metrics", metrics_paths, "metrics.jsonl paths")->required();
    plot->add_option("--fields", fields, "record fields to chart")->required();
    plot->add_option("--logy", logy, "fields drawn on a log scale");
    plot->add_option("--out", out_svg, "output SVG path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, out_dir, seed_override);
        if (sweep->parsed()) return cmd_sweep(config_path, grid_path, out_dir, parallel);
        if (verify->parsed()) return cmd_verify(suite, verify_seed);
        if (plot->parsed()) return cmd_plot(metrics_paths, fields, logy, out_svg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
