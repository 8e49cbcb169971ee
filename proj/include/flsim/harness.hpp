#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flsim/simulator.hpp"

namespace flsim {

/// Sources the training/test datasets for an experiment cell.
struct DataConfig {
    std::string source = "synthetic"; // synthetic | csv | idx
    // synthetic
    size_t classes = 10;
    size_t dim = 20;
    size_t per_class = 400;
    size_t test_per_class = 100;
    double separation = 6.0;
    // csv
    std::string train_path, test_path;
    size_t label_column = 0;
    bool has_header = false;
    // idx
    std::string train_images, train_labels, test_images, test_labels;

    double alpha = 1.0;

    bool operator==(const DataConfig&) const = default;
};

/// One fully resolved sweep cell.
struct Cell {
    size_t id = 0;
    AttackKind attack = AttackKind::none;
    AgrKind rule = AgrKind::average;
    double m_percent = 0.0;
    double dp_mult = 100.0;
    size_t total_clients = 0;
    size_t clients_per_round = 0;
    double alpha = 1.0;
    uint64_t seed = 1;
};

/// Parsed experiment description: the base configuration plus the sweep axes
/// expanded into cells.
struct SweepSpec {
    FlConfig base;
    ThreatModel threat;
    DataConfig data;
    SiloPlacement placement = SiloPlacement::uniform;
    size_t users_total = 0;
    std::optional<std::string> out_dir; // from the config's output section
    std::vector<Cell> cells;
    std::string config_json; // canonical resolved form, for the manifest
    uint64_t config_hash = 0;
};

struct ResultRow {
    std::string mode, rule, attack, threat;
    double m_percent = 0.0;
    size_t total_clients = 0;
    size_t clients_per_round = 0;
    double alpha = 1.0;
    double dp_mult = 0.0;
    uint64_t seed = 0;
    double a_theta = 0.0;
    double a_theta_star = 0.0;
    double i_theta = 0.0;
    size_t rounds = 0;
    double runtime_sec = 0.0;

    // Not part of the CSV: payload for rounds.jsonl / plotdata.
    size_t cell_id = 0;
    double d_avg_train = 0.0;
    std::vector<RoundRecord> clean_records;
    std::vector<RoundRecord> attacked_records;
};

struct CellError {
    size_t cell_id = 0;
    std::string message;
};

struct SweepOutcome {
    std::vector<ResultRow> rows; // sorted by cell id
    std::vector<CellError> errors;
    size_t cells_executed = 0; // cells actually run in this invocation
};

struct RunOptions {
    size_t parallelism = 1;
    std::string out_dir = "flsim_out";
    std::optional<uint64_t> seed_override;
    std::optional<size_t> rounds_override;
    size_t max_cells = SIZE_MAX; // stop (gracefully) after this many new cells
    bool quiet = false;
};

/// Parses and validates the JSON config file. Unknown keys are rejected;
/// keys starting with '_' are documentation and ignored. Parse errors carry
/// the line number, semantic errors the offending key path.
SweepSpec parse_config(const std::string& path);
SweepSpec parse_config_text(const std::string& text, const std::string& source_name);

/// Annotated default configuration (parses cleanly).
std::string default_config_text();

/// Runs every cell (clean twin plus attacked run, sharing benign random
/// streams through the common seed), appending to the out-dir ledger as cells
/// finish so interrupted sweeps resume without re-running completed cells.
SweepOutcome run_sweep(const SweepSpec& spec, const RunOptions& options);

/// results.csv (fixed column order), rounds.jsonl, and plotdata/ triples.
void write_results(const std::vector<ResultRow>& rows, const std::string& out_dir);

/// Reloads results.csv written by write_results.
std::vector<ResultRow> read_results_csv(const std::string& path);

/// Re-runs a single cell of a previously executed sweep (results.csv plus its
/// sibling manifest.json) and returns the freshly computed row.
ResultRow replay_cell(const std::string& results_csv_path, size_t cell_id);

/// Builds the (train, test, alpha, silo) layout for a cell.
DataLayout build_layout(const DataConfig& data, const SweepSpec& spec, const Cell& cell);

/// Resolves the per-cell FlConfig/ThreatModel from the base spec.
std::pair<FlConfig, ThreatModel> resolve_cell(const SweepSpec& spec, const Cell& cell);

} // namespace flsim
