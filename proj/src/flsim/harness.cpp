#include "flsim/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace flsim {

namespace {

// ---------------------------------------------------------------- parsing

size_t line_of_offset(const std::string& text, size_t byte) {
    size_t line = 1;
    for (size_t i = 0; i < byte && i < text.size(); ++i)
        if (text[i] == '\n') ++line;
    return line;
}

// Keys beginning with '_' are annotations; anything else must be declared.
void check_keys(const json& obj, const std::vector<std::string>& allowed,
                const std::string& path) {
    for (const auto& item : obj.items()) {
        const std::string& key = item.key();
        if (!key.empty() && key[0] == '_') continue;
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw FormatError("unknown key '" + path + "." + key + "'");
    }
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
    if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
    return obj.at(key).get<T>();
}

std::vector<double> axis_doubles(const json& sweep, const std::string& key, double fallback) {
    if (!sweep.contains(key)) return {fallback};
    std::vector<double> vals = sweep.at(key).get<std::vector<double>>();
    if (vals.empty()) throw ConfigError("sweep." + key + ": axis must not be empty");
    return vals;
}

std::vector<uint64_t> axis_u64(const json& sweep, const std::string& key, uint64_t fallback) {
    if (!sweep.contains(key)) return {fallback};
    std::vector<uint64_t> vals = sweep.at(key).get<std::vector<uint64_t>>();
    if (vals.empty()) throw ConfigError("sweep." + key + ": axis must not be empty");
    return vals;
}

std::vector<std::string> axis_strings(const json& sweep, const std::string& key,
                                      const std::string& fallback) {
    if (!sweep.contains(key)) return {fallback};
    std::vector<std::string> vals = sweep.at(key).get<std::vector<std::string>>();
    if (vals.empty()) throw ConfigError("sweep." + key + ": axis must not be empty");
    return vals;
}

ModelSpec parse_model(const json& m, const std::string& path) {
    check_keys(m, {"layer_sizes", "activation"}, path);
    ModelSpec spec;
    if (!m.contains("layer_sizes")) throw ConfigError(path + ".layer_sizes: required");
    spec.layer_sizes = m.at("layer_sizes").get<std::vector<size_t>>();
    spec.activation = activation_from_string(get_or<std::string>(m, "activation", "tanh"));
    spec.validate();
    return spec;
}

uint64_t fnv1a_text(const std::string& s) {
    uint64_t h = 0xcbf2'9ce4'8422'2325ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x0000'0100'0000'01b3ull;
    }
    return h;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

constexpr const char* kCsvHeader =
    "mode,rule,attack,threat,M_percent,N,n,alpha,dp_mult,seed,A_theta,A_theta_star,I_theta,"
    "rounds,runtime_sec";

} // namespace

SweepSpec parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str(), path);
}

SweepSpec parse_config_text(const std::string& text, const std::string& source_name) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(source_name + ": parse error at line " +
                          std::to_string(line_of_offset(text, e.byte)) + ": " + e.what());
    }

    check_keys(root, {"experiment", "threat", "sweep", "output"}, source_name);
    if (!root.contains("experiment")) throw ConfigError("experiment: section required");
    const json& exp = root.at("experiment");
    check_keys(exp,
               {"mode", "N", "n", "rounds", "server_lr", "lr_decay", "seed", "model", "train",
                "rule", "data", "silo"},
               "experiment");

    SweepSpec spec;
    spec.base.mode = fl_mode_from_string(get_or<std::string>(exp, "mode", "cross_device"));
    spec.base.total_clients = get_or<size_t>(exp, "N", 200);
    spec.base.clients_per_round = get_or<size_t>(exp, "n", 10);
    spec.base.rounds = get_or<size_t>(exp, "rounds", 100);
    spec.base.server_lr = get_or<double>(exp, "server_lr", 1.0);
    spec.base.lr_decay = get_or<double>(exp, "lr_decay", 1.0);
    spec.base.seed = get_or<uint64_t>(exp, "seed", 1);

    if (!exp.contains("model")) throw ConfigError("experiment.model: section required");
    spec.base.spec = parse_model(exp.at("model"), "experiment.model");

    const json train = exp.contains("train") ? exp.at("train") : json::object();
    check_keys(train, {"epochs", "batch_size", "lr"}, "experiment.train");
    spec.base.train_cfg.local_epochs = get_or<size_t>(train, "epochs", 5);
    spec.base.train_cfg.batch_size = get_or<size_t>(train, "batch_size", 10);
    spec.base.train_cfg.learning_rate = get_or<double>(train, "lr", 0.02);
    if (spec.base.train_cfg.local_epochs < 1) throw ConfigError("experiment.train.epochs: must be >= 1");
    if (spec.base.train_cfg.batch_size < 1) throw ConfigError("experiment.train.batch_size: must be >= 1");
    if (spec.base.train_cfg.learning_rate <= 0.0) throw ConfigError("experiment.train.lr: must be > 0");

    const json rule = exp.contains("rule") ? exp.at("rule") : json::object();
    check_keys(rule, {"kind", "tau", "m_assumed", "c", "weighted"}, "experiment.rule");
    spec.base.rule.kind = agr_kind_from_string(get_or<std::string>(rule, "kind", "average"));
    spec.base.rule.tau = get_or<double>(rule, "tau", 0.0);
    spec.base.rule.m_assumed = get_or<size_t>(rule, "m_assumed", 0);
    spec.base.rule.c = get_or<size_t>(rule, "c", 0);
    spec.base.rule.weighted = get_or<bool>(rule, "weighted", false);
    if (spec.base.rule.tau < 0.0) throw ConfigError("experiment.rule.tau: must be >= 0");

    const json data = exp.contains("data") ? exp.at("data") : json::object();
    check_keys(data,
               {"source", "classes", "dim", "per_class", "test_per_class", "separation",
                "train_path", "test_path", "label_column", "has_header", "train_images",
                "train_labels", "test_images", "test_labels", "alpha"},
               "experiment.data");
    spec.data.source = get_or<std::string>(data, "source", "synthetic");
    spec.data.classes = get_or<size_t>(data, "classes", 10);
    spec.data.dim = get_or<size_t>(data, "dim", 20);
    spec.data.per_class = get_or<size_t>(data, "per_class", 400);
    spec.data.test_per_class = get_or<size_t>(data, "test_per_class", 100);
    spec.data.separation = get_or<double>(data, "separation", 6.0);
    spec.data.train_path = get_or<std::string>(data, "train_path", "");
    spec.data.test_path = get_or<std::string>(data, "test_path", "");
    spec.data.label_column = get_or<size_t>(data, "label_column", 0);
    spec.data.has_header = get_or<bool>(data, "has_header", false);
    spec.data.train_images = get_or<std::string>(data, "train_images", "");
    spec.data.train_labels = get_or<std::string>(data, "train_labels", "");
    spec.data.test_images = get_or<std::string>(data, "test_images", "");
    spec.data.test_labels = get_or<std::string>(data, "test_labels", "");
    spec.data.alpha = get_or<double>(data, "alpha", 1.0);
    if (spec.data.source != "synthetic" && spec.data.source != "csv" && spec.data.source != "idx")
        throw ConfigError("experiment.data.source: must be synthetic, csv, or idx");
    if (spec.data.alpha <= 0.0) throw ConfigError("experiment.data.alpha: must be > 0");

    if (exp.contains("silo")) {
        const json& silo = exp.at("silo");
        check_keys(silo, {"users_total", "placement"}, "experiment.silo");
        spec.users_total = get_or<size_t>(silo, "users_total", 0);
        spec.placement =
            silo_placement_from_string(get_or<std::string>(silo, "placement", "uniform"));
    }

    const json threat = root.contains("threat") ? root.at("threat") : json::object();
    check_keys(threat, {"M_percent", "attack"}, "threat");
    spec.threat.m_percent = get_or<double>(threat, "M_percent", 0.0);
    const json attack = threat.contains("attack") ? threat.at("attack") : json::object();
    check_keys(attack,
               {"kind", "z", "omega", "gamma_max", "gamma_step", "dp_mult", "size_cap_mult",
                "noise_sigma", "rounding", "surrogate_rounds", "surrogate_layers", "mc_trials"},
               "threat.attack");
    AttackConfig& atk = spec.threat.attack;
    atk.kind = attack_kind_from_string(get_or<std::string>(attack, "kind", "none"));
    if (attack.contains("z") && !attack.at("z").is_null()) atk.lie_z = attack.at("z").get<double>();
    atk.omega = omega_kind_from_string(get_or<std::string>(attack, "omega", "inv_unit"));
    atk.project.gamma_max = get_or<double>(attack, "gamma_max", 50.0);
    atk.project.gamma_step = get_or<double>(attack, "gamma_step", 0.5);
    atk.dp_mult = get_or<double>(attack, "dp_mult", 100.0);
    atk.size_cap_mult = get_or<double>(attack, "size_cap_mult", 100.0);
    if (attack.contains("noise_sigma") && !attack.at("noise_sigma").is_null())
        atk.noise_sigma = attack.at("noise_sigma").get<double>();
    const std::string rounding = get_or<std::string>(attack, "rounding", "none");
    if (rounding == "none")
        atk.rounding = Rounding::none;
    else if (rounding == "round_to_int")
        atk.rounding = Rounding::round_to_int;
    else
        throw ConfigError("threat.attack.rounding: must be none or round_to_int");
    atk.surrogate_rounds = get_or<size_t>(attack, "surrogate_rounds", 30);
    if (attack.contains("surrogate_layers") && !attack.at("surrogate_layers").is_null()) {
        ModelSpec surrogate;
        surrogate.layer_sizes = attack.at("surrogate_layers").get<std::vector<size_t>>();
        surrogate.activation = spec.base.spec.activation;
        surrogate.validate();
        atk.surrogate_spec = surrogate;
    }
    atk.mc_trials = get_or<size_t>(attack, "mc_trials", 10);
    spec.threat.kind = threat_for_attack(atk.kind);
    if (spec.threat.kind == ThreatKind::none) spec.threat.m_percent = 0.0;

    if (root.contains("output")) {
        const json& output = root.at("output");
        check_keys(output, {"dir"}, "output");
        if (output.contains("dir")) spec.out_dir = output.at("dir").get<std::string>();
    }

    const json sweep = root.contains("sweep") ? root.at("sweep") : json::object();
    check_keys(sweep, {"attack", "rule", "M_percent", "dp_mult", "N", "n", "alpha", "seeds"},
               "sweep");
    const auto attacks = axis_strings(sweep, "attack", to_string(atk.kind));
    const auto rules = axis_strings(sweep, "rule", to_string(spec.base.rule.kind));
    const auto ms = axis_doubles(sweep, "M_percent", spec.threat.m_percent);
    const auto dp_mults = axis_doubles(sweep, "dp_mult", atk.dp_mult);
    const auto ns_total = axis_u64(sweep, "N", spec.base.total_clients);
    const auto ns_round = axis_u64(sweep, "n", spec.base.clients_per_round);
    const auto alphas = axis_doubles(sweep, "alpha", spec.data.alpha);
    const auto seeds = axis_u64(sweep, "seeds", spec.base.seed);

    // Semantic checks that hold across the whole sweep.
    if (spec.base.mode == FlMode::cross_silo) {
        if (sweep.contains("n"))
            throw ConfigError("experiment.mode/n: cross_silo selects all silos; do not sweep n");
        if (spec.base.clients_per_round != spec.base.total_clients)
            throw ConfigError("experiment.mode/n: cross_silo requires n == N");
        if (spec.users_total == 0)
            throw ConfigError("experiment.silo.users_total: required for cross_silo mode");
        for (uint64_t n_total : ns_total)
            if (spec.users_total % n_total != 0)
                throw ConfigError("experiment.silo.users_total: must divide evenly across silos");
    }
    for (const std::string& a : attacks) {
        const AttackKind kind = attack_kind_from_string(a);
        if (spec.base.mode == FlMode::cross_silo &&
            threat_for_attack(kind) == ThreatKind::whitebox_online_mp)
            throw ConfigError("sweep.attack: model poisoning is not simulated for cross_silo mode");
    }
    for (const std::string& r : rules) agr_kind_from_string(r);
    for (double m : ms)
        if (m < 0.0 || m > 100.0) throw ConfigError("sweep.M_percent: must lie in [0, 100]");
    for (uint64_t n_total : ns_total) {
        if (n_total == 0) throw ConfigError("sweep.N: must be positive");
        if (spec.base.mode == FlMode::cross_device) {
            for (uint64_t n_round : ns_round)
                if (n_round == 0 || n_round > n_total)
                    throw ConfigError("sweep.n: need 1 <= n <= N");
        }
    }
    for (double al : alphas)
        if (al <= 0.0) throw ConfigError("sweep.alpha: must be > 0");

    // Fixed axis order pins cell ids: attack, rule, M, dp_mult, N, n, alpha, seed.
    size_t id = 0;
    for (const std::string& a : attacks)
        for (const std::string& r : rules)
            for (double m : ms)
                for (double dpm : dp_mults)
                    for (uint64_t n_total : ns_total)
                        for (uint64_t n_round : ns_round)
                            for (double al : alphas)
                                for (uint64_t seed : seeds) {
                                    Cell cell;
                                    cell.id = id++;
                                    cell.attack = attack_kind_from_string(a);
                                    cell.rule = agr_kind_from_string(r);
                                    cell.m_percent = m;
                                    cell.dp_mult = dpm;
                                    cell.total_clients = n_total;
                                    cell.clients_per_round = spec.base.mode == FlMode::cross_silo
                                                                 ? n_total
                                                                 : n_round;
                                    cell.alpha = al;
                                    cell.seed = seed;
                                    spec.cells.push_back(cell);
                                }

    spec.config_json = root.dump(2);
    spec.config_hash = fnv1a_text(spec.config_json);
    return spec;
}

std::string default_config_text() {
    json root;
    root["_doc"] =
        "Experiment sweep configuration. Keys beginning with '_' are documentation and are "
        "ignored by the parser; every other key must be known. The sweep section lists axis "
        "values; the cartesian product of all axes defines the cells, each run against its "
        "attack-free twin to compute the accuracy impact.";
    json& exp = root["experiment"];
    exp["_doc"] =
        "Base federated setup: N total clients, n selected per round, server learning rate "
        "with per-round decay, and the aggregation rule under test.";
    exp["mode"] = "cross_device";
    exp["N"] = 200;
    exp["n"] = 10;
    exp["rounds"] = 100;
    exp["server_lr"] = 1.0;
    exp["lr_decay"] = 1.0;
    exp["seed"] = 1;
    exp["model"] = {{"_doc", "Fully connected classifier: sizes are input, hidden..., classes."},
                    {"layer_sizes", {20, 32, 10}},
                    {"activation", "tanh"}};
    exp["train"] = {{"_doc", "Per-client local training: epochs, minibatch size, step size."},
                    {"epochs", 5},
                    {"batch_size", 10},
                    {"lr", 0.02}};
    exp["rule"] = {{"_doc",
                    "kind: average | norm_bound | multi_krum | trimmed_mean | median. tau 0 "
                    "calibrates the norm bound from a benign pilot. c 0 picks the largest "
                    "multi_krum selection size. weighted averages by shard size."},
                   {"kind", "average"},
                   {"tau", 0.0},
                   {"m_assumed", 0},
                   {"c", 0},
                   {"weighted", false}};
    exp["data"] = {{"_doc",
                    "source synthetic generates Gaussian class clusters; csv/idx load files. "
                    "alpha is the Dirichlet concentration for the non-iid client split."},
                   {"source", "synthetic"},
                   {"classes", 10},
                   {"dim", 20},
                   {"per_class", 400},
                   {"test_per_class", 100},
                   {"separation", 6.0},
                   {"alpha", 1.0}};
    exp["silo"] = {{"_doc", "cross_silo only: users per deployment and compromised placement "
                            "(uniform | concentrated)."},
                   {"users_total", 0},
                   {"placement", "uniform"}};
    root["threat"] = {
        {"_doc", "M_percent: compromised share of the population. attack.kind none | lie | "
                 "stat_opt | dyn_opt | pga | dpa_slf | dpa_dlf; the threat model follows from "
                 "the kind (model attacks are whitebox online, data attacks nobox offline)."},
        {"M_percent", 0.0},
        {"attack",
         {{"_doc", "z: optional LIE coefficient. omega: dyn_opt direction (inv_unit | inv_std | "
                   "inv_sign). gamma_max/gamma_step: scaling grid. dp_mult and size_cap_mult "
                   "size poisoned sets as multiples of the mean benign shard size. "
                   "surrogate_layers overrides the adversary's model architecture; "
                   "surrogate_rounds its private training length. mc_trials: sign-alignment "
                   "refinement samples for the multi_krum data attack."},
          {"kind", "none"},
          {"z", nullptr},
          {"omega", "inv_unit"},
          {"gamma_max", 50.0},
          {"gamma_step", 0.5},
          {"dp_mult", 100.0},
          {"size_cap_mult", 100.0},
          {"noise_sigma", nullptr},
          {"rounding", "none"},
          {"surrogate_rounds", 30},
          {"surrogate_layers", nullptr},
          {"mc_trials", 10}}}};
    root["sweep"] = {{"_doc", "Axes over attack, rule, M_percent, dp_mult, N, n, alpha, seeds. "
                              "Missing axes use the base value."},
                     {"seeds", {1, 2, 3}}};
    root["output"] = {{"_doc", "Default output directory; FLSIM_OUT_DIR and --out override."},
                      {"dir", "flsim_out"}};
    return root.dump(2) + "\n";
}

std::pair<FlConfig, ThreatModel> resolve_cell(const SweepSpec& spec, const Cell& cell) {
    FlConfig cfg = spec.base;
    cfg.total_clients = cell.total_clients;
    cfg.clients_per_round = cell.clients_per_round;
    cfg.rule.kind = cell.rule;
    cfg.seed = cell.seed;

    ThreatModel threat = spec.threat;
    threat.attack.kind = cell.attack;
    threat.attack.dp_mult = cell.dp_mult;
    threat.kind = threat_for_attack(cell.attack);
    threat.m_percent = threat.kind == ThreatKind::none ? 0.0 : cell.m_percent;
    return {cfg, threat};
}

DataLayout build_layout(const DataConfig& data, const SweepSpec& spec, const Cell& cell) {
    DataLayout layout;
    layout.alpha = cell.alpha;
    layout.users_total = spec.users_total;
    layout.placement = spec.placement;
    if (data.source == "synthetic") {
        RngStream rng(cell.seed);
        layout.train = synth_mixture(data.classes, data.dim, data.per_class, data.separation,
                                     rng.derive("data-train"));
        layout.test = synth_mixture(data.classes, data.dim, data.test_per_class, data.separation,
                                    rng.derive("data-test"));
    } else if (data.source == "csv") {
        layout.train = load_csv(data.train_path, data.label_column, data.has_header);
        layout.test = load_csv(data.test_path, data.label_column, data.has_header);
    } else if (data.source == "idx") {
        layout.train = load_idx(data.train_images, data.train_labels);
        layout.test = load_idx(data.test_images, data.test_labels);
    } else {
        throw ConfigError("experiment.data.source: unknown source " + data.source);
    }
    return layout;
}

namespace {

// Everything that defines the attack-free twin of a cell: coordinates minus
// the threat.
std::string clean_key(const SweepSpec& spec, const Cell& cell) {
    std::ostringstream os;
    os << to_string(spec.base.mode) << '|' << to_string(cell.rule) << '|' << cell.total_clients
       << '|' << cell.clients_per_round << '|' << spec.base.rounds << '|' << spec.base.server_lr
       << '|' << spec.base.lr_decay << '|' << cell.alpha << '|' << cell.seed << '|'
       << spec.base.rule.tau << '|' << spec.base.rule.m_assumed << '|' << spec.base.rule.c << '|'
       << spec.base.rule.weighted;
    return os.str();
}

json record_to_json(const RoundRecord& r) {
    return json{{"round", r.round},
                {"selected", r.selected},
                {"compromised_selected", r.compromised_selected},
                {"accuracy", r.accuracy},
                {"mean_benign_norm", r.mean_benign_norm},
                {"aggregate_norm", r.aggregate_norm}};
}

RoundRecord record_from_json(const json& j) {
    RoundRecord r;
    r.round = j.at("round").get<size_t>();
    r.selected = j.at("selected").get<std::vector<size_t>>();
    r.compromised_selected = j.at("compromised_selected").get<size_t>();
    r.accuracy = j.at("accuracy").get<double>();
    r.mean_benign_norm = j.at("mean_benign_norm").get<double>();
    r.aggregate_norm = j.at("aggregate_norm").get<double>();
    return r;
}

json row_to_json(const ResultRow& row) {
    json j{{"mode", row.mode},
           {"rule", row.rule},
           {"attack", row.attack},
           {"threat", row.threat},
           {"M_percent", row.m_percent},
           {"N", row.total_clients},
           {"n", row.clients_per_round},
           {"alpha", row.alpha},
           {"dp_mult", row.dp_mult},
           {"seed", row.seed},
           {"A_theta", row.a_theta},
           {"A_theta_star", row.a_theta_star},
           {"I_theta", row.i_theta},
           {"rounds", row.rounds},
           {"runtime_sec", row.runtime_sec},
           {"cell", row.cell_id},
           {"d_avg_train", row.d_avg_train}};
    json clean = json::array();
    for (const RoundRecord& r : row.clean_records) clean.push_back(record_to_json(r));
    json attacked = json::array();
    for (const RoundRecord& r : row.attacked_records) attacked.push_back(record_to_json(r));
    j["clean_records"] = std::move(clean);
    j["attacked_records"] = std::move(attacked);
    return j;
}

ResultRow row_from_json(const json& j) {
    ResultRow row;
    row.mode = j.at("mode").get<std::string>();
    row.rule = j.at("rule").get<std::string>();
    row.attack = j.at("attack").get<std::string>();
    row.threat = j.at("threat").get<std::string>();
    row.m_percent = j.at("M_percent").get<double>();
    row.total_clients = j.at("N").get<size_t>();
    row.clients_per_round = j.at("n").get<size_t>();
    row.alpha = j.at("alpha").get<double>();
    row.dp_mult = j.at("dp_mult").get<double>();
    row.seed = j.at("seed").get<uint64_t>();
    row.a_theta = j.at("A_theta").get<double>();
    row.a_theta_star = j.at("A_theta_star").get<double>();
    row.i_theta = j.at("I_theta").get<double>();
    row.rounds = j.at("rounds").get<size_t>();
    row.runtime_sec = j.at("runtime_sec").get<double>();
    row.cell_id = j.at("cell").get<size_t>();
    row.d_avg_train = j.at("d_avg_train").get<double>();
    for (const json& r : j.at("clean_records")) row.clean_records.push_back(record_from_json(r));
    for (const json& r : j.at("attacked_records"))
        row.attacked_records.push_back(record_from_json(r));
    return row;
}

struct Ledger {
    bool header_present = false;
    std::map<size_t, ResultRow> done_rows;
    std::map<size_t, std::string> done_errors;
};

Ledger load_ledger(const std::string& path, uint64_t config_hash) {
    Ledger ledger;
    std::ifstream in(path);
    if (!in) return ledger;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        if (first) {
            first = false;
            ledger.header_present = true;
            const uint64_t h = j.at("config_hash").get<uint64_t>();
            if (h != config_hash)
                throw ConfigError("output directory holds a ledger for a different config; "
                                  "use a fresh --out directory");
            continue;
        }
        const size_t cell = j.at("cell").get<size_t>();
        if (j.at("status").get<std::string>() == "ok")
            ledger.done_rows.emplace(cell, row_from_json(j.at("row")));
        else
            ledger.done_errors.emplace(cell, j.at("message").get<std::string>());
    }
    return ledger;
}

} // namespace

SweepOutcome run_sweep(const SweepSpec& spec, const RunOptions& options) {
    SweepSpec effective = spec;
    if (options.seed_override.has_value()) {
        effective.base.seed = *options.seed_override;
        for (Cell& cell : effective.cells) cell.seed = *options.seed_override;
    }
    if (options.rounds_override.has_value()) effective.base.rounds = *options.rounds_override;

    fs::create_directories(options.out_dir);
    const std::string ledger_path = options.out_dir + "/ledger.jsonl";
    Ledger ledger = load_ledger(ledger_path, effective.config_hash);

    {
        std::ofstream manifest(options.out_dir + "/manifest.json", std::ios::trunc);
        if (!manifest) throw IoError("cannot write manifest in " + options.out_dir);
        manifest << effective.config_json << "\n";
    }

    std::ofstream ledger_out(ledger_path, std::ios::app);
    if (!ledger_out) throw IoError("cannot open ledger in " + options.out_dir);
    if (!ledger.header_present) {
        ledger_out << json{{"config_hash", effective.config_hash}}.dump() << "\n";
        ledger_out.flush();
    }

    std::vector<const Cell*> todo;
    for (const Cell& cell : effective.cells) {
        if (ledger.done_rows.count(cell.id) || ledger.done_errors.count(cell.id)) continue;
        if (todo.size() >= options.max_cells) break;
        todo.push_back(&cell);
    }
    if (!options.quiet)
        std::cout << "sweep: " << effective.cells.size() << " cells ("
                  << ledger.done_rows.size() + ledger.done_errors.size() << " already done, "
                  << todo.size() << " to run)\n";

    std::mutex ledger_mutex;
    std::mutex clean_mutex;
    std::map<std::string, std::shared_future<std::shared_ptr<const ExperimentResult>>> clean_cache;

    auto clean_result_for =
        [&](const Cell& cell) -> std::shared_ptr<const ExperimentResult> {
        const std::string key = clean_key(effective, cell);
        std::promise<std::shared_ptr<const ExperimentResult>> promise;
        std::shared_future<std::shared_ptr<const ExperimentResult>> fut;
        bool compute = false;
        {
            std::lock_guard<std::mutex> lock(clean_mutex);
            auto it = clean_cache.find(key);
            if (it == clean_cache.end()) {
                fut = promise.get_future().share();
                clean_cache.emplace(key, fut);
                compute = true;
            } else {
                fut = it->second;
            }
        }
        if (compute) {
            try {
                auto [cfg, threat] = resolve_cell(effective, cell);
                (void)threat;
                DataLayout layout = build_layout(effective.data, effective, cell);
                promise.set_value(std::make_shared<const ExperimentResult>(
                    run_experiment(cfg, ThreatModel{}, layout)));
            } catch (...) {
                promise.set_exception(std::current_exception());
            }
        }
        return fut.get();
    };

    std::vector<ResultRow> new_rows;
    std::vector<CellError> new_errors;
    std::mutex results_mutex;

    std::atomic<size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= todo.size()) return;
            const Cell& cell = *todo[i];
            try {
                auto [cfg, threat] = resolve_cell(effective, cell);
                DataLayout layout = build_layout(effective.data, effective, cell);
                const double d_avg_train = static_cast<double>(layout.train.size()) /
                                           static_cast<double>(cell.total_clients);
                const std::shared_ptr<const ExperimentResult> clean = clean_result_for(cell);

                ExperimentResult attacked;
                if (threat.kind == ThreatKind::none)
                    attacked = *clean;
                else
                    attacked = run_experiment(cfg, threat, layout);

                ResultRow row;
                row.mode = to_string(effective.base.mode);
                row.rule = to_string(cell.rule);
                row.attack = to_string(cell.attack);
                row.threat = to_string(threat.kind);
                row.m_percent = cell.m_percent;
                row.total_clients = cell.total_clients;
                row.clients_per_round = cell.clients_per_round;
                row.alpha = cell.alpha;
                row.dp_mult = cell.dp_mult;
                row.seed = cell.seed;
                row.a_theta = clean->a_theta_star;
                row.a_theta_star = attacked.a_theta_star;
                row.i_theta = clean->a_theta_star - attacked.a_theta_star;
                row.rounds = effective.base.rounds;
                row.runtime_sec = attacked.wallclock_sec;
                row.cell_id = cell.id;
                row.d_avg_train = d_avg_train;
                row.clean_records = clean->records;
                if (threat.kind != ThreatKind::none) row.attacked_records = attacked.records;

                {
                    std::lock_guard<std::mutex> lock(ledger_mutex);
                    ledger_out << json{{"cell", cell.id}, {"status", "ok"}, {"row", row_to_json(row)}}
                                      .dump()
                               << "\n";
                    ledger_out.flush();
                }
                std::lock_guard<std::mutex> lock(results_mutex);
                new_rows.push_back(std::move(row));
            } catch (const std::exception& e) {
                {
                    std::lock_guard<std::mutex> lock(ledger_mutex);
                    ledger_out
                        << json{{"cell", cell.id}, {"status", "error"}, {"message", e.what()}}.dump()
                        << "\n";
                    ledger_out.flush();
                }
                std::lock_guard<std::mutex> lock(results_mutex);
                new_errors.push_back({cell.id, e.what()});
            }
        }
    };

    const size_t n_threads = std::max<size_t>(1, std::min(options.parallelism, todo.size()));
    std::vector<std::thread> threads;
    for (size_t i = 0; i < n_threads; ++i) threads.emplace_back(worker);
    for (std::thread& t : threads) t.join();

    SweepOutcome outcome;
    outcome.cells_executed = todo.size();
    for (auto& [id, row] : ledger.done_rows) outcome.rows.push_back(std::move(row));
    for (auto& row : new_rows) outcome.rows.push_back(std::move(row));
    std::sort(outcome.rows.begin(), outcome.rows.end(),
              [](const ResultRow& a, const ResultRow& b) { return a.cell_id < b.cell_id; });
    for (auto& [id, msg] : ledger.done_errors) outcome.errors.push_back({id, msg});
    for (auto& err : new_errors) outcome.errors.push_back(err);
    std::sort(outcome.errors.begin(), outcome.errors.end(),
              [](const CellError& a, const CellError& b) { return a.cell_id < b.cell_id; });

    write_results(outcome.rows, options.out_dir);
    if (!outcome.errors.empty()) {
        std::ofstream errs(options.out_dir + "/errors.jsonl", std::ios::trunc);
        for (const CellError& e : outcome.errors)
            errs << json{{"cell", e.cell_id}, {"message", e.message}}.dump() << "\n";
    }
    return outcome;
}

void write_results(const std::vector<ResultRow>& rows, const std::string& out_dir) {
    fs::create_directories(out_dir);
    fs::create_directories(out_dir + "/plotdata");

    std::ofstream csv(out_dir + "/results.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot write results.csv in " + out_dir);
    csv << kCsvHeader << "\n";
    for (const ResultRow& r : rows) {
        csv << r.mode << ',' << r.rule << ',' << r.attack << ',' << r.threat << ','
            << fmt_double(r.m_percent) << ',' << r.total_clients << ',' << r.clients_per_round
            << ',' << fmt_double(r.alpha) << ',' << fmt_double(r.dp_mult) << ',' << r.seed << ','
            << fmt_double(r.a_theta) << ',' << fmt_double(r.a_theta_star) << ','
            << fmt_double(r.i_theta) << ',' << r.rounds << ',' << fmt_double(r.runtime_sec)
            << "\n";
    }
    csv.close();

    std::ofstream jsonl(out_dir + "/rounds.jsonl", std::ios::trunc);
    if (!jsonl) throw IoError("cannot write rounds.jsonl in " + out_dir);
    for (const ResultRow& row : rows) {
        for (const RoundRecord& rec : row.clean_records) {
            json j = record_to_json(rec);
            j["cell"] = row.cell_id;
            j["run"] = "clean";
            jsonl << j.dump() << "\n";
        }
        for (const RoundRecord& rec : row.attacked_records) {
            json j = record_to_json(rec);
            j["cell"] = row.cell_id;
            j["run"] = "attacked";
            jsonl << j.dump() << "\n";
        }
    }
    jsonl.close();

    auto write_plot = [&](const std::string& name, auto x_of, auto include) {
        std::ofstream out(out_dir + "/plotdata/" + name, std::ios::trunc);
        if (!out) throw IoError("cannot write plotdata/" + name);
        out << "x,y,series\n";
        for (const ResultRow& r : rows) {
            if (!include(r)) continue;
            out << fmt_double(x_of(r)) << ',' << fmt_double(r.i_theta) << ',' << r.attack << '/'
                << r.rule << "\n";
        }
    };
    write_plot(
        "impact_vs_M.csv", [](const ResultRow& r) { return r.m_percent; },
        [](const ResultRow& r) { return r.attack != "none"; });
    write_plot(
        "impact_vs_dp_mult.csv", [](const ResultRow& r) { return r.dp_mult; },
        [](const ResultRow& r) { return r.threat == "nobox_offline_dp"; });
    write_plot(
        "impact_vs_davg.csv", [](const ResultRow& r) { return r.d_avg_train; },
        [](const ResultRow& r) { return r.attack != "none"; });
}

std::vector<ResultRow> read_results_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kCsvHeader) throw FormatError(path + ": unexpected header");

    std::vector<ResultRow> rows;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::vector<std::string> fields;
        size_t start = 0;
        while (start <= line.size()) {
            size_t comma = line.find(',', start);
            if (comma == std::string::npos) comma = line.size();
            fields.push_back(line.substr(start, comma - start));
            start = comma + 1;
        }
        if (fields.size() != 15)
            throw FormatError(path + ": expected 15 fields in row " + std::to_string(lineno));
        ResultRow r;
        r.mode = fields[0];
        r.rule = fields[1];
        r.attack = fields[2];
        r.threat = fields[3];
        r.m_percent = std::stod(fields[4]);
        r.total_clients = std::stoull(fields[5]);
        r.clients_per_round = std::stoull(fields[6]);
        r.alpha = std::stod(fields[7]);
        r.dp_mult = std::stod(fields[8]);
        r.seed = std::stoull(fields[9]);
        r.a_theta = std::stod(fields[10]);
        r.a_theta_star = std::stod(fields[11]);
        r.i_theta = std::stod(fields[12]);
        r.rounds = std::stoull(fields[13]);
        r.runtime_sec = std::stod(fields[14]);
        rows.push_back(std::move(r));
    }
    return rows;
}

ResultRow replay_cell(const std::string& results_csv_path, size_t cell_id) {
    const fs::path dir = fs::path(results_csv_path).parent_path();
    const fs::path manifest = dir / "manifest.json";
    if (!fs::exists(manifest))
        throw IoError("manifest.json not found next to " + results_csv_path);
    SweepSpec spec = parse_config(manifest.string());
    if (cell_id >= spec.cells.size())
        throw InputError("replay: cell " + std::to_string(cell_id) + " out of range (sweep has " +
                         std::to_string(spec.cells.size()) + " cells)");
    const Cell& cell = spec.cells[cell_id];

    auto [cfg, threat] = resolve_cell(spec, cell);
    DataLayout layout = build_layout(spec.data, spec, cell);
    const ExperimentResult clean = run_experiment(cfg, ThreatModel{}, layout);
    const ExperimentResult attacked =
        threat.kind == ThreatKind::none ? clean : run_experiment(cfg, threat, layout);

    ResultRow row;
    row.mode = to_string(spec.base.mode);
    row.rule = to_string(cell.rule);
    row.attack = to_string(cell.attack);
    row.threat = to_string(threat.kind);
    row.m_percent = cell.m_percent;
    row.total_clients = cell.total_clients;
    row.clients_per_round = cell.clients_per_round;
    row.alpha = cell.alpha;
    row.dp_mult = cell.dp_mult;
    row.seed = cell.seed;
    row.a_theta = clean.a_theta_star;
    row.a_theta_star = attacked.a_theta_star;
    row.i_theta = clean.a_theta_star - attacked.a_theta_star;
    row.rounds = spec.base.rounds;
    row.runtime_sec = attacked.wallclock_sec;
    row.cell_id = cell.id;
    row.d_avg_train =
        static_cast<double>(layout.train.size()) / static_cast<double>(cell.total_clients);
    row.clean_records = clean.records;
    if (threat.kind != ThreatKind::none) row.attacked_records = attacked.records;
    return row;
}

} // namespace flsim
