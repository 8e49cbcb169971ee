#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "flsim/harness.hpp"

namespace {

std::string resolve_out_dir(const std::string& flag_value, const flsim::SweepSpec& spec) {
    if (!flag_value.empty()) return flag_value;
    if (spec.out_dir.has_value() && !spec.out_dir->empty()) return *spec.out_dir;
    if (const char* env = std::getenv("FLSIM_OUT_DIR"); env != nullptr && *env != '\0') return env;
    return "flsim_out";
}

void print_summary(const flsim::SweepOutcome& outcome, const std::string& out_dir) {
    std::cout << "rows: " << outcome.rows.size() << ", errors: " << outcome.errors.size()
              << ", output: " << out_dir << "/results.csv\n";
    for (const flsim::CellError& e : outcome.errors)
        std::cerr << "cell " << e.cell_id << " failed: " << e.message << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated-learning poisoning robustness simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_flag;
    std::string results_path;
    std::string gen_path;
    size_t parallelism = 1;
    size_t cell_id = 0;
    size_t max_cells = 0;
    uint64_t seed_flag = 0;
    bool seed_set = false;
    size_t rounds_flag = 0;
    bool rounds_set = false;

    CLI::App* run = app.add_subcommand("run", "Execute a sweep described by a config file");
    run->add_option("config", config_path, "Path to the JSON config")->required();
    run->add_option("--out", out_flag, "Output directory (overrides config and FLSIM_OUT_DIR)");
    run->add_option("--parallelism", parallelism, "Number of worker threads")->check(CLI::PositiveNumber);
    run->add_option("--max-cells", max_cells, "Stop after this many new cells (sweep resumes later)");
    run->add_option("--seed", seed_flag, "Override every cell's seed")->each([&](const std::string&) {
        seed_set = true;
    });
    run->add_option("--rounds-override", rounds_flag, "Override the round count")
        ->each([&](const std::string&) { rounds_set = true; });

    CLI::App* validate = app.add_subcommand("validate", "Parse and check a config file");
    validate->add_option("config", config_path, "Path to the JSON config")->required();

    CLI::App* gen = app.add_subcommand("gen-config", "Write the annotated default config");
    gen->add_option("path", gen_path, "Destination file (stdout when omitted)");

    CLI::App* replay = app.add_subcommand("replay", "Re-run one cell of a finished sweep");
    replay->add_option("results", results_path, "Path to results.csv")->required();
    replay->add_option("--cell", cell_id, "Cell id to re-run")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            const std::string text = flsim::default_config_text();
            if (gen_path.empty()) {
                std::cout << text;
            } else {
                std::ofstream out(gen_path, std::ios::trunc);
                if (!out) throw flsim::IoError("cannot write " + gen_path);
                out << text;
                std::cout << "wrote " << gen_path << "\n";
            }
            return 0;
        }
        if (*validate) {
            const flsim::SweepSpec spec = flsim::parse_config(config_path);
            std::cout << "valid: " << spec.cells.size() << " cells\n";
            return 0;
        }
        if (*run) {
            const flsim::SweepSpec spec = flsim::parse_config(config_path);
            flsim::RunOptions options;
            options.parallelism = parallelism;
            options.out_dir = resolve_out_dir(out_flag, spec);
            if (seed_set) options.seed_override = seed_flag;
            if (rounds_set) options.rounds_override = rounds_flag;
            if (max_cells > 0) options.max_cells = max_cells;
            const flsim::SweepOutcome outcome = flsim::run_sweep(spec, options);
            print_summary(outcome, options.out_dir);
            return outcome.errors.empty() ? 0 : 1;
        }
        if (*replay) {
            const flsim::ResultRow row = flsim::replay_cell(results_path, cell_id);
            std::cout << "cell " << row.cell_id << ": attack=" << row.attack
                      << " rule=" << row.rule << " seed=" << row.seed
                      << " A_theta=" << row.a_theta << " A_theta_star=" << row.a_theta_star
                      << " I_theta=" << row.i_theta << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
