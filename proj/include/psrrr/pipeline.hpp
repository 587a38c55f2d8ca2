#pragma once

// Stage commands over files: configuration, run manifest and the nine pipeline steps.
//
// Every stage reads its inputs from disk and writes its artefacts into the output
// directory, so stages can be run separately or resumed. The manifest records, per stage,
// the configuration hash and content hashes of inputs and outputs; a stage whose record
// still matches is skipped.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include <psrrr/common.hpp>
#include <psrrr/dense_io.hpp>
#include <psrrr/ingest.hpp>
#include <psrrr/model.hpp>
#include <psrrr/pathmap.hpp>
#include <psrrr/phenosig.hpp>
#include <psrrr/ranking.hpp>
#include <psrrr/simulate.hpp>

namespace psrrr {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct RunConfig {
    // inputs
    std::string genotypes;
    std::string snp_metadata;
    std::string covariates;
    std::string gene_locations;
    std::string gene_sets;
    std::string longitudinal;
    std::string targets;
    std::vector<std::string> exclude_pathways;
    // quality control
    double call_rate_min = 0.95;
    double hwe_p_min = 5e-7;
    double maf_min = 0.1;
    bool autosomes_only = true;
    // mapping
    std::int64_t window_bp = 10000;
    bool drop_unlocated = true;
    // phenotype
    std::string group_a = "AD";
    std::string group_b = "CN";
    double alpha = 0.05;
    int folds = 10;
    // model
    double gamma = 0.8;
    double gamma_lasso = 0.8;
    double tol = 1e-4;
    int max_alt = 100;
    double solver_tol = 1e-7;
    std::string weights = "tuned";   ///< "tuned" or "sqrt_size"
    // tuning
    double eta = 0.5;
    double eps = 0.05;
    int fits_per_iter = 0;
    int max_tune_iter = 100;
    // ranking and enrichment
    Index n_subsamples = 1000;
    double fraction = 0.5;
    Index n_perm = 100000;
    // run
    std::optional<std::uint64_t> seed;
    unsigned workers = 1;
    std::string out = "psrrr_out";
    bool fail_on_nonconvergence = false;
    SimulationSpec simulation;

    std::vector<std::string> violations() const {
        std::vector<std::string> v;
        auto unit = [&](double x, const char* name, bool open_low, bool open_high) {
            const bool ok = (open_low ? x > 0.0 : x >= 0.0) && (open_high ? x < 1.0 : x <= 1.0);
            if (!ok) v.push_back(std::string(name) + " must lie in " + (open_low ? "(0" : "[0") + ", 1" +
                                 (open_high ? ")" : "]"));
        };
        unit(call_rate_min, "call_rate_min", false, false);
        unit(hwe_p_min, "hwe_p_min", false, true);
        if (!(maf_min >= 0.0 && maf_min <= 0.5)) v.push_back("maf_min must lie in [0, 0.5]");
        if (window_bp < 0) v.push_back("window_bp must be non-negative");
        if (group_a.empty() || group_b.empty()) v.push_back("group_a and group_b must be non-empty");
        if (group_a == group_b) v.push_back("group_a and group_b must differ");
        unit(alpha, "alpha", true, true);
        if (folds < 2) v.push_back("folds must be at least 2");
        unit(gamma, "gamma", true, true);
        unit(gamma_lasso, "gamma_lasso", true, true);
        if (!(tol > 0.0)) v.push_back("tol must be positive");
        if (max_alt < 1) v.push_back("max_alt must be positive");
        if (!(solver_tol > 0.0)) v.push_back("solver_tol must be positive");
        if (weights != "tuned" && weights != "sqrt_size") v.push_back("weights must be 'tuned' or 'sqrt_size'");
        unit(eta, "eta", true, true);
        if (!(eps > 0.0)) v.push_back("eps must be positive");
        if (fits_per_iter < 0) v.push_back("fits_per_iter must be non-negative (0 selects 50 per pathway)");
        if (max_tune_iter < 1) v.push_back("max_tune_iter must be positive");
        if (n_subsamples < 1) v.push_back("n_subsamples must be positive");
        unit(fraction, "fraction", true, false);
        if (n_perm < 1) v.push_back("n_perm must be positive");
        if (workers < 1) v.push_back("workers must be positive");
        if (out.empty()) v.push_back("out must be non-empty");
        for (const auto& s : simulation.violations()) v.push_back("simulation." + s);
        return v;
    }

    /// Throws ConfigError listing every violation, plus missing inputs and seed for `command`.
    void validate_for(const std::string& command) const;
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
    j = {{"genotypes", c.genotypes},
         {"snp_metadata", c.snp_metadata},
         {"covariates", c.covariates},
         {"gene_locations", c.gene_locations},
         {"gene_sets", c.gene_sets},
         {"longitudinal", c.longitudinal},
         {"targets", c.targets},
         {"exclude_pathways", c.exclude_pathways},
         {"call_rate_min", c.call_rate_min},
         {"hwe_p_min", c.hwe_p_min},
         {"maf_min", c.maf_min},
         {"autosomes_only", c.autosomes_only},
         {"window_bp", c.window_bp},
         {"drop_unlocated", c.drop_unlocated},
         {"group_a", c.group_a},
         {"group_b", c.group_b},
         {"alpha", c.alpha},
         {"folds", c.folds},
         {"gamma", c.gamma},
         {"gamma_lasso", c.gamma_lasso},
         {"tol", c.tol},
         {"max_alt", c.max_alt},
         {"solver_tol", c.solver_tol},
         {"weights", c.weights},
         {"eta", c.eta},
         {"eps", c.eps},
         {"fits_per_iter", c.fits_per_iter},
         {"max_tune_iter", c.max_tune_iter},
         {"n_subsamples", c.n_subsamples},
         {"fraction", c.fraction},
         {"n_perm", c.n_perm},
         {"seed", c.seed ? nlohmann::json(*c.seed) : nlohmann::json(nullptr)},
         {"workers", c.workers},
         {"out", c.out},
         {"fail_on_nonconvergence", c.fail_on_nonconvergence},
         {"simulation", c.simulation}};
}

/// Missing keys keep their defaults; unknown keys and ill-typed values are collected and
/// reported together.
inline void from_json(const nlohmann::json& j, RunConfig& c) {
    if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
    std::vector<std::string> errors;
    const nlohmann::json known = c;
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.contains(it.key())) errors.push_back("unknown key '" + it.key() + "'");
    auto get = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(field);
        } catch (const nlohmann::json::exception&) {
            errors.push_back(std::string("bad value for '") + key + "'");
        }
    };
    get("genotypes", c.genotypes);
    get("snp_metadata", c.snp_metadata);
    get("covariates", c.covariates);
    get("gene_locations", c.gene_locations);
    get("gene_sets", c.gene_sets);
    get("longitudinal", c.longitudinal);
    get("targets", c.targets);
    get("exclude_pathways", c.exclude_pathways);
    get("call_rate_min", c.call_rate_min);
    get("hwe_p_min", c.hwe_p_min);
    get("maf_min", c.maf_min);
    get("autosomes_only", c.autosomes_only);
    get("window_bp", c.window_bp);
    get("drop_unlocated", c.drop_unlocated);
    get("group_a", c.group_a);
    get("group_b", c.group_b);
    get("alpha", c.alpha);
    get("folds", c.folds);
    get("gamma", c.gamma);
    get("gamma_lasso", c.gamma_lasso);
    get("tol", c.tol);
    get("max_alt", c.max_alt);
    get("solver_tol", c.solver_tol);
    get("weights", c.weights);
    get("eta", c.eta);
    get("eps", c.eps);
    get("fits_per_iter", c.fits_per_iter);
    get("max_tune_iter", c.max_tune_iter);
    get("n_subsamples", c.n_subsamples);
    get("fraction", c.fraction);
    get("n_perm", c.n_perm);
    if (j.contains("seed") && !j.at("seed").is_null()) {
        if (j.at("seed").is_number_unsigned()) c.seed = j.at("seed").get<std::uint64_t>();
        else errors.push_back("bad value for 'seed' (expected a non-negative integer)");
    }
    get("workers", c.workers);
    get("out", c.out);
    get("fail_on_nonconvergence", c.fail_on_nonconvergence);
    if (j.contains("simulation")) {
        try {
            j.at("simulation").get_to(c.simulation);
        } catch (const ConfigError& e) {
            errors.push_back(e.what());
        }
    }
    if (!errors.empty()) {
        std::string msg = "invalid configuration:";
        for (const auto& e : errors) msg += "\n  - " + e;
        throw ConfigError(msg);
    }
}

/// Inputs each command reads from the configuration (stage outputs are found in `out`).
inline std::vector<std::pair<const char*, const std::string*>> required_inputs(const RunConfig& c,
                                                                              const std::string& command) {
    if (command == "qc") return {{"genotypes", &c.genotypes}, {"snp_metadata", &c.snp_metadata}};
    if (command == "map") return {{"gene_locations", &c.gene_locations}, {"gene_sets", &c.gene_sets}};
    if (command == "phenotype") return {{"longitudinal", &c.longitudinal}, {"covariates", &c.covariates}};
    if (command == "enrich") return {{"targets", &c.targets}};
    return {};
}

inline bool command_needs_seed(const std::string& command) {
    return command == "tune" || command == "rank" || command == "snprank" || command == "enrich";
}

inline void RunConfig::validate_for(const std::string& command) const {
    auto v = violations();
    for (const auto& [name, path] : required_inputs(*this, command)) {
        if (path->empty()) v.push_back(std::string(name) + " is required for '" + command + "'");
        else if (!fs::is_regular_file(*path)) v.push_back(std::string(name) + ": no such file '" + *path + "'");
    }
    if (command_needs_seed(command) && !seed) v.push_back("seed is required for '" + command + "'");
    if (v.empty()) return;
    std::string msg = "invalid configuration:";
    for (const auto& s : v) msg += "\n  - " + s;
    throw ConfigError(msg);
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open configuration '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("configuration '" + path + "': " + e.what());
    }
    return j.get<RunConfig>();
}

/// Applies `key=value` overrides; the value is parsed as JSON when possible, else as a string.
inline RunConfig apply_overrides(const RunConfig& base, const std::vector<std::pair<std::string, std::string>>& kv) {
    nlohmann::json j = base;
    for (const auto& [key, value] : kv) {
        nlohmann::json parsed;
        try {
            parsed = nlohmann::json::parse(value);
        } catch (const nlohmann::json::exception&) {
            parsed = value;
        }
        const auto dot = key.find('.');
        if (dot != std::string::npos) j[key.substr(0, dot)][key.substr(dot + 1)] = parsed;
        else j[key] = parsed;
    }
    return j.get<RunConfig>();
}

/// Configuration identity for freshness checks. Worker count and output location do not
/// affect results and are excluded.
inline std::string config_hash(const RunConfig& c) {
    nlohmann::json j = c;
    j.erase("workers");
    j.erase("out");
    return hex64(fnv1a64(j.dump()));
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

inline std::string file_hash(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot read '" + p.string() + "'");
    std::uint64_t h = 0xcbf29ce484222325ULL;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        h = fnv1a64(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())), h);
    }
    return hex64(h);
}

inline std::string utc_timestamp() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

class RunManifest {
public:
    explicit RunManifest(fs::path dir) : path_(std::move(dir) / "manifest.json") {
        if (!fs::exists(path_)) {
            doc_ = {{"version", kVersion}, {"stages", nlohmann::json::object()}};
            return;
        }
        std::ifstream in(path_);
        try {
            doc_ = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("manifest '" + path_.string() + "': " + e.what());
        }
        if (!doc_.contains("stages")) doc_["stages"] = nlohmann::json::object();
    }

    const nlohmann::json& json() const { return doc_; }
    const fs::path& path() const { return path_; }

    /// True when `stage` was recorded with the same configuration and input hashes and
    /// every recorded output still has its recorded hash.
    bool fresh(const std::string& stage, const std::string& cfg_hash, const std::vector<fs::path>& inputs) const {
        const auto& stages = doc_.at("stages");
        if (!stages.contains(stage)) return false;
        const auto& rec = stages.at(stage);
        if (rec.value("config_hash", "") != cfg_hash) return false;
        const auto& rin = rec.at("inputs");
        if (rin.size() != inputs.size()) return false;
        for (const auto& p : inputs) {
            const auto key = p.string();
            if (!rin.contains(key) || !fs::exists(p) || rin.at(key).get<std::string>() != file_hash(p)) return false;
        }
        for (auto it = rec.at("outputs").begin(); it != rec.at("outputs").end(); ++it) {
            const fs::path p(it.key());
            if (!fs::exists(p) || file_hash(p) != it.value().get<std::string>()) return false;
        }
        return true;
    }

    void record(const std::string& stage, const RunConfig& cfg, const std::vector<fs::path>& inputs,
                const std::vector<fs::path>& outputs, nlohmann::json summary, const std::string& started) {
        nlohmann::json rec;
        rec["config_hash"] = config_hash(cfg);
        rec["config"] = cfg;
        rec["started"] = started;
        rec["finished"] = utc_timestamp();
        rec["inputs"] = nlohmann::json::object();
        for (const auto& p : inputs) rec["inputs"][p.string()] = file_hash(p);
        rec["outputs"] = nlohmann::json::object();
        for (const auto& p : outputs) rec["outputs"][p.string()] = file_hash(p);
        rec["summary"] = std::move(summary);
        doc_["version"] = kVersion;
        doc_["stages"][stage] = std::move(rec);
        save();
    }

private:
    void save() const {
        const auto tmp = path_.string() + ".tmp";
        {
            std::ofstream out(tmp);
            if (!out) throw DataError("cannot write manifest '" + tmp + "'");
            out << doc_.dump(2) << '\n';
        }
        fs::rename(tmp, path_);
    }

    fs::path path_;
    nlohmann::json doc_;
};

// ---------------------------------------------------------------------------
// Artefact files
// ---------------------------------------------------------------------------

struct StagePaths {
    fs::path dir;

    fs::path operator()(const char* name) const { return dir / name; }
    fs::path genotypes() const { return dir / "genotypes.std.bin"; }
    fs::path snps() const { return dir / "snps.qc.tsv"; }
    fs::path qc_report() const { return dir / "qc_report.tsv"; }
    fs::path annotation() const { return dir / "annotation.json"; }
    fs::path mapping_report() const { return dir / "mapping_report.tsv"; }
    fs::path mapping_stats() const { return dir / "mapping_stats.tsv"; }
    fs::path slopes() const { return dir / "slopes.tsv"; }
    fs::path selected_traits() const { return dir / "selected_traits.tsv"; }
    fs::path phenotype() const { return dir / "phenotype.tsv"; }
    fs::path validation() const { return dir / "validation.tsv"; }
    fs::path weights() const { return dir / "weights.tsv"; }
    fs::path weights_meta() const { return dir / "weights.json"; }
    fs::path fit_pathways() const { return dir / "fit_pathways.tsv"; }
    fs::path fit_traits() const { return dir / "fit_traits.tsv"; }
    fs::path pathway_ranking() const { return dir / "pathway_ranking.tsv"; }
    fs::path subsamples() const { return dir / "subsamples.jsonl"; }
    fs::path snp_ranking() const { return dir / "snp_ranking.tsv"; }
    fs::path gene_ranking() const { return dir / "gene_ranking.tsv"; }
    fs::path subsamples_snp() const { return dir / "subsamples_snp.jsonl"; }
    fs::path enrichment() const { return dir / "enrichment.tsv"; }
};

template <class Fn>
void write_file(const fs::path& p, Fn&& fn, bool binary = false) {
    const auto tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, binary ? std::ios::binary : std::ios::out);
        if (!out) throw DataError("cannot write '" + tmp + "'");
        fn(out);
        if (!out) throw DataError("write failed for '" + tmp + "'");
    }
    fs::rename(tmp, p);
}

inline std::ifstream open_file(const fs::path& p, bool binary = false) {
    std::ifstream in(p, binary ? std::ios::binary : std::ios::in);
    if (!in) throw DataError("cannot open '" + p.string() + "' (has the producing stage been run?)");
    return in;
}

inline nlohmann::json annotation_json(const PathwayAnnotation& a) {
    nlohmann::json j;
    j["snp_ids"] = a.snp_ids;
    j["gene_symbols"] = a.gene_symbols;
    j["genes_of_snp"] = a.genes_of_snp;
    auto& ps = j["pathways"] = nlohmann::json::array();
    for (const auto& p : a.pathways) ps.push_back({{"name", p.name}, {"snps", p.snps}, {"genes", p.genes}, {"weight", p.weight}});
    return j;
}

inline PathwayAnnotation annotation_from_json(const nlohmann::json& j) {
    PathwayAnnotation a;
    try {
        a.snp_ids = j.at("snp_ids").get<std::vector<std::string>>();
        a.gene_symbols = j.at("gene_symbols").get<std::vector<std::string>>();
        a.genes_of_snp = j.at("genes_of_snp").get<std::vector<std::vector<Index>>>();
        for (const auto& p : j.at("pathways")) {
            Pathway q;
            q.name = p.at("name").get<std::string>();
            q.snps = p.at("snps").get<std::vector<Index>>();
            q.genes = p.at("genes").get<std::vector<Index>>();
            q.weight = p.at("weight").get<double>();
            a.pathways.push_back(std::move(q));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("annotation: ") + e.what());
    }
    const auto n_snps = static_cast<Index>(a.snp_ids.size()), n_genes = static_cast<Index>(a.gene_symbols.size());
    if (a.genes_of_snp.size() != a.snp_ids.size()) throw DataError("annotation: genes_of_snp length mismatch");
    for (const auto& p : a.pathways) {
        for (auto s : p.snps)
            if (s < 0 || s >= n_snps) throw DataError("annotation: SNP index out of range in " + p.name);
        for (auto g : p.genes)
            if (g < 0 || g >= n_genes) throw DataError("annotation: gene index out of range in " + p.name);
    }
    return a;
}

inline PathwayAnnotation read_annotation(const fs::path& p) {
    auto in = open_file(p);
    try {
        return annotation_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError("annotation '" + p.string() + "': " + e.what());
    }
}

/// Standardised genotypes as stored by the qc stage.
inline GenotypeMatrix read_standardized_genotypes(const StagePaths& sp) {
    auto gin = open_file(sp.genotypes(), true);
    auto dense = read_dense(gin, "standardised genotypes");
    auto sin = open_file(sp.snps());
    const auto snps = parse_snp_metadata(sin);
    if (snps.size() != dense.col_labels.size()) throw DataError("QC SNP list does not match the genotype matrix");
    GenotypeMatrix g;
    g.values = std::move(dense.values);
    g.subject_ids = std::move(dense.row_labels);
    g.snps = snps;
    for (std::size_t k = 0; k < snps.size(); ++k)
        if (snps[k].id != dense.col_labels[k]) throw DataError("QC SNP list order does not match the genotype matrix");
    g.standardized = true;
    return g;
}

/// Response matrix with rows in genotype subject order.
inline Matrix read_response(const StagePaths& sp, const std::vector<std::string>& subjects) {
    auto in = open_file(sp.phenotype());
    const auto p = phenotype_from_dense(read_dense(in, "phenotype matrix"));
    if (p.values.cols() == 0) throw DataError("phenotype matrix has no traits (no trait passed the ANCOVA filter)");
    return align_rows(p, subjects);
}

inline Vector stage_weights(const RunConfig& cfg, const StagePaths& sp, const PathwayAnnotation& ann) {
    if (cfg.weights == "sqrt_size") return init_weights(ann);
    auto in = open_file(sp.weights());
    return read_weight_state(in, ann).weights;
}

/// Inputs of a stage that fits the model: the standardised genotypes, annotation,
/// phenotype and, for tuned weights, the weight table.
inline std::vector<fs::path> model_inputs(const RunConfig& cfg, const StagePaths& sp) {
    std::vector<fs::path> in{sp.genotypes(), sp.snps(), sp.annotation(), sp.phenotype()};
    if (cfg.weights != "sqrt_size") in.push_back(sp.weights());
    return in;
}

inline std::vector<std::string> read_gene_list(const fs::path& p) {
    auto in = open_file(p);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line[0] == '#') continue;
        for (char& ch : line)
            if (ch == ',' || ch == '\t' || ch == '\r') ch = ' ';
        std::istringstream words(line);
        std::string w;
        while (words >> w) out.push_back(w);
    }
    if (out.empty()) throw DataError("target gene list '" + p.string() + "' is empty");
    return out;
}

// ---------------------------------------------------------------------------
// Stage runner
// ---------------------------------------------------------------------------

struct StageResult {
    bool skipped = false;
    nlohmann::json summary;
};

/// Runs `body` unless the stage is fresh. `inputs` must list every file the body reads, since
/// freshness is decided before the body runs. `body` fills `outputs` and returns a summary.
template <class Body>
StageResult run_stage(const std::string& name, const RunConfig& cfg, std::vector<fs::path> inputs, bool force,
                      Body&& body, std::ostream& log) {
    const fs::path dir(cfg.out);
    fs::create_directories(dir);
    RunManifest manifest(dir);
    StageResult res;
    if (!force && manifest.fresh(name, config_hash(cfg), inputs)) {
        res.skipped = true;
        res.summary = manifest.json()["stages"][name]["summary"];
        log << name << ": up to date\n";
        return res;
    }
    const auto started = utc_timestamp();
    std::vector<fs::path> outputs;
    res.summary = body(inputs, outputs);
    manifest.record(name, cfg, inputs, outputs, res.summary, started);
    log << name << ": done\n";
    return res;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline StageResult cmd_qc(const RunConfig& cfg, bool force = false, std::ostream& log = std::clog) {
    cfg.validate_for("qc");
    const StagePaths sp{cfg.out};
    return run_stage("qc", cfg, {cfg.genotypes, cfg.snp_metadata}, force,
                     [&](std::vector<fs::path>&, std::vector<fs::path>& outputs) {
        auto gin = open_file(cfg.genotypes);
        auto min = open_file(cfg.snp_metadata);
        const auto raw = parse_genotypes(gin, min);
        const QcThresholds t{cfg.call_rate_min, cfg.hwe_p_min, cfg.maf_min, cfg.autosomes_only};
        GenotypeMatrix g;
        QcReport report;
        try {
            std::tie(g, report) = prepare_genotypes(raw, t);
        } catch (const AllFilteredError& e) {
            write_file(sp.qc_report(), [&](std::ostream& o) { write_qc_report(o, e.report()); });
            throw;
        }
        write_file(sp.qc_report(), [&](std::ostream& o) { write_qc_report(o, report); });
        DenseTable dense{"subject_id", g.subject_ids, {}, g.values};
        for (const auto& s : g.snps) dense.col_labels.push_back(s.id);
        write_file(sp.genotypes(), [&](std::ostream& o) { write_dense_binary(o, dense); }, true);
        write_file(sp.snps(), [&](std::ostream& o) { write_snp_metadata(o, g.snps); });
        outputs = {sp.qc_report(), sp.genotypes(), sp.snps()};
        return nlohmann::json{{"subjects", raw.n_subjects()},
                              {"snps_in", raw.n_snps()},
                              {"snps_retained", g.n_snps()},
                              {"missing_calls", raw.missing_count()}};
    }, log);
}

inline StageResult cmd_map(const RunConfig& cfg, bool force = false, std::ostream& log = std::clog) {
    cfg.validate_for("map");
    const StagePaths sp{cfg.out};
    return run_stage("map", cfg, {sp.snps(), cfg.gene_locations, cfg.gene_sets}, force,
                     [&](std::vector<fs::path>&, std::vector<fs::path>& outputs) {
        auto sin = open_file(sp.snps());
        const auto snps = parse_snp_metadata(sin);
        auto lin = open_file(cfg.gene_locations);
        const auto genes = parse_gene_locations(lin);
        auto gin = open_file(cfg.gene_sets);
        const auto sets = parse_gmt(gin);
        const auto map = map_snps_to_genes(snps, genes, cfg.window_bp);
        PathwayMapOptions opts;
        opts.exclude = cfg.exclude_pathways;
        opts.drop_unlocated = cfg.drop_unlocated;
        auto [ann, report] = map_genes_to_pathways(sets, map, snps, opts);
        ann.set_weights(init_weights(ann));
        write_file(sp.annotation(), [&](std::ostream& o) { o << annotation_json(ann).dump() << '\n'; });
        write_file(sp.mapping_report(), [&](std::ostream& o) { write_mapping_report(o, report); });
        write_file(sp.mapping_stats(), [&](std::ostream& o) { write_mapping_stats(o, mapping_stats(ann)); });
        outputs = {sp.annotation(), sp.mapping_report(), sp.mapping_stats()};
        return nlohmann::json{{"pathways", ann.n_pathways()},
                              {"gene_sets", sets.size()},
                              {"unmatched_genes", report.unmatched_genes.size()},
                              {"unmapped_snps", report.unmapped_snps.size()}};
    }, log);
}

inline StageResult cmd_phenotype(const RunConfig& cfg, bool force = false, std::ostream& log = std::clog) {
    cfg.validate_for("phenotype");
    const StagePaths sp{cfg.out};
    return run_stage("phenotype", cfg, {cfg.longitudinal, cfg.covariates}, force,
                     [&](std::vector<fs::path>&, std::vector<fs::path>& outputs) {
        auto lin = open_file(cfg.longitudinal);
        const auto traj = read_longitudinal(lin);
        auto cin = open_file(cfg.covariates);
        const auto cov = parse_covariates(cin);
        const auto slopes = fit_slopes(traj);
        const auto anc = ancova_filter(slopes, cov, cfg.group_a, cfg.group_b, cfg.alpha);
        const auto pheno = residualize(slopes, anc.selected, cov);

        write_file(sp.slopes(), [&](std::ostream& o) {
            write_dense_tsv(o, DenseTable{"subject_id", slopes.subject_ids, slopes.trait_names, slopes.slopes});
        });
        write_file(sp.selected_traits(), [&](std::ostream& o) { write_selected_traits(o, slopes, anc); });
        write_file(sp.phenotype(), [&](std::ostream& o) { write_dense_tsv(o, to_dense(pheno)); });
        outputs = {sp.slopes(), sp.selected_traits(), sp.phenotype()};

        nlohmann::json summary{{"subjects", slopes.subject_ids.size()},
                               {"traits", slopes.trait_names.size()},
                               {"selected", anc.selected.size()},
                               {"threshold", anc.threshold}};
        if (!anc.selected.empty()) {
            const auto aligned = cov.aligned_to(pheno.subject_ids);
            std::vector<Index> rows;
            std::vector<int> labels;
            for (std::size_t i = 0; i < aligned.records.size(); ++i) {
                const auto& g = aligned.records[i].group;
                if (g != cfg.group_a && g != cfg.group_b) continue;
                rows.push_back(static_cast<Index>(i));
                labels.push_back(g == cfg.group_a ? 1 : 0);
            }
            Matrix y(static_cast<Index>(rows.size()), pheno.values.cols());
            for (std::size_t k = 0; k < rows.size(); ++k) y.row(static_cast<Index>(k)) = pheno.values.row(rows[k]);
            const auto report = validate_signature(y, labels, cfg.folds, cfg.seed.value_or(0));
            write_file(sp.validation(), [&](std::ostream& o) { write_validation_report(o, report); });
            outputs.push_back(sp.validation());
            summary["accuracy"] = report.accuracy;
        } else {
            log << "phenotype: no trait passed the group filter; downstream stages have no response\n";
        }
        return summary;
    }, log);
}

inline void check_convergence(const RunConfig& cfg, bool converged, const std::string& what) {
    if (!converged && cfg.fail_on_nonconvergence) throw ConvergenceError(what + " did not converge");
}

inline ActiveSetOptions solver_options(const RunConfig& cfg) {
    ActiveSetOptions s;
    s.bcd.tol = cfg.solver_tol;
    return s;
}

inline FitOptions fit_options(const RunConfig& cfg) {
    FitOptions f;
    f.gamma = cfg.gamma;
    f.tol = cfg.tol;
    f.max_alt = cfg.max_alt;
    f.solver = solver_options(cfg);
    return f;
}

inline StageResult cmd_tune(const RunConfig& cfg, bool force = false, std::ostream& log = std::clog) {
    cfg.validate_for("tune");
    const StagePaths sp{cfg.out};
    return run_stage("tune", cfg, {sp.genotypes(), sp.snps(), sp.annotation(), sp.phenotype()}, force,
                     [&](std::vector<fs::path>&, std::vector<fs::path>& outputs) {
        const auto g = read_standardized_genotypes(sp);
        const auto ann = read_annotation(sp.annotation());
        const Matrix y = read_response(sp, g.subject_ids);
        const auto ctx = RankingContext::from_genotypes(g, ann);
        const GroupedDesign d = ctx.expanded(ctx.snps);
        TuneOptions o;
        o.eta = cfg.eta;
        o.eps = cfg.eps;
        o.fits_per_iter = cfg.fits_per_iter;
        o.max_iter = cfg.max_tune_iter;
        o.seed = *cfg.seed;
        o.workers = cfg.workers;
        o.bcd = solver_options(cfg).bcd;
        const auto st = tune_weights(y, d, init_weights(ann), o);
        write_file(sp.weights(), [&](std::ostream& out) { write_weight_state(out, st, ann); });
        write_file(sp.weights_meta(), [&](std::ostream& out) { out << weight_state_sidecar(st).dump(2) << '\n'; });
        outputs = {sp.weights(), sp.weights_meta()};
        check_convergence(cfg, st.converged, "weight tuning");
        if (!st.converged) log << "tune: not converged; best weights kept (sum |d| = " << st.sum_abs_d() << ")\n";
        return nlohmann::json{{"iterations", st.iteration}, {"converged", st.converged}, {"sum_abs_d", st.sum_abs_d()}};
    }, log);
}

inline StageResult cmd_fit(const RunConfig& cfg, bool force = false, std::ostream& log = std::clog) {
    cfg.validate_for("fit");
    const StagePaths sp{cfg.out};
    return run_stage("fit", cfg, model_inputs(cfg, sp), force,
                     [&](std::vector<fs::path>&, std::vector<fs::path>& outputs) {
        const auto g = read_standardized_genotypes(sp);
        const auto ann = read_annotation(sp.annotation());
        const Vector w = stage_weights(cfg, sp, ann);
        auto pin = open_file(sp.phenotype());
        const auto pheno = phenotype_from_dense(read_dense(pin, "phenotype matrix"));
        const Matrix y = read_response(sp, g.subject_ids);
        const auto ctx = RankingContext::from_genotypes(g, ann);
        const GroupedDesign d = ctx.expanded(ctx.snps);
        const auto fit = fit_rank1(y, d, w, fit_options(cfg));
        write_file(sp.fit_pathways(), [&](std::ostream& o) {
            o << "#pathway\tselected\tblock_norm\tweight\n";
            for (Index l = 0; l < ann.n_pathways(); ++l) {
                const double norm = fit.b.segment(d.group_start(l), d.group_size(l)).norm();
                o << ann.pathways[static_cast<std::size_t>(l)].name << '\t' << (norm > 0.0 ? 1 : 0) << '\t'
                  << tsv::fmt(norm) << '\t' << tsv::fmt(w[l]) << '\n';
            }
        });
        write_file(sp.fit_traits(), [&](std::ostream& o) {
            o << "#trait\tloading\n";
            for (Index q = 0; q < fit.a.size(); ++q)
                o << pheno.trait_names[static_cast<std::size_t>(q)] << '\t' << tsv::fmt(fit.a[q]) << '\n';
        });
        outputs = {sp.fit_pathways(), sp.fit_traits()};
        check_convergence(cfg, fit.converged && fit.solver_converged, "rank-1 fit");
        nlohmann::json sel = nlohmann::json::array();
        for (auto l : fit.selected) sel.push_back(ann.pathways[static_cast<std::size_t>(l)].name);
        return nlohmann::json{{"selected", sel},        {"lambda", fit.lambda},   {"lambda_max", fit.lambda_max},
                              {"iterations", fit.iterations}, {"converged", fit.converged && fit.solver_converged}};
    }, log);
}

inline StageResult cmd_rank(const RunConfig& cfg, bool force = false, std::ostream& log = std::clog) {
    cfg.validate_for("rank");
    const StagePaths sp{cfg.out};
    return run_stage("rank", cfg, model_inputs(cfg, sp), force,
                     [&](std::vector<fs::path>&, std::vector<fs::path>& outputs) {
        const auto g = read_standardized_genotypes(sp);
        auto ann = read_annotation(sp.annotation());
        const Vector w = stage_weights(cfg, sp, ann);
        ann.set_weights(w);
        const Matrix y = read_response(sp, g.subject_ids);
        const auto ctx = RankingContext::from_genotypes(g, ann);
        RankingOptions o;
        o.fit = fit_options(cfg);
        o.n_subsamples = cfg.n_subsamples;
        o.fraction = cfg.fraction;
        o.seed = *cfg.seed;
        o.workers = cfg.workers;
        const auto r = rank_pathways(y, ctx, w, o);
        write_file(sp.pathway_ranking(), [&](std::ostream& out) { write_ranking_table(out, r.table); });
        write_file(sp.subsamples(), [&](std::ostream& out) { write_subsample_ledger(out, r.records, ann); });
        outputs = {sp.pathway_ranking(), sp.subsamples()};
        Index unconverged = 0;
        for (const auto& rec : r.records) unconverged += rec.converged ? 0 : 1;
        check_convergence(cfg, unconverged == 0, std::to_string(unconverged) + " subsample fit(s)");
        if (r.all_empty) log << "rank: no subsample selected any pathway\n";
        return nlohmann::json{{"subsamples", r.records.size()},
                              {"selection_events", r.selection_events},
                              {"all_empty", r.all_empty},
                              {"unconverged", unconverged},
                              {"top", r.table.rows.empty() ? "" : r.table.rows.front().id}};
    }, log);
}

inline StageResult cmd_snprank(const RunConfig& cfg, bool force = false, std::ostream& log = std::clog) {
    cfg.validate_for("snprank");
    const StagePaths sp{cfg.out};
    return run_stage("snprank", cfg, {sp.genotypes(), sp.snps(), sp.annotation(), sp.phenotype(), sp.subsamples()},
                     force, [&](std::vector<fs::path>&, std::vector<fs::path>& outputs) {
        const auto g = read_standardized_genotypes(sp);
        const auto ann = read_annotation(sp.annotation());
        const Matrix y = read_response(sp, g.subject_ids);
        const auto ctx = RankingContext::from_genotypes(g, ann);
        auto lin = open_file(sp.subsamples());
        auto records = read_subsample_ledger(lin, ann, ctx.n_rows(), cfg.fraction, *cfg.seed);
        const auto r = rank_snps_genes(records, y, ctx, cfg.gamma_lasso, cfg.workers, cfg.tol, cfg.max_alt);
        write_file(sp.snp_ranking(), [&](std::ostream& out) { write_ranking_table(out, r.snps); });
        write_file(sp.gene_ranking(), [&](std::ostream& out) { write_ranking_table(out, r.genes); });
        write_file(sp.subsamples_snp(), [&](std::ostream& out) { write_subsample_ledger(out, records, ann); });
        outputs = {sp.snp_ranking(), sp.gene_ranking(), sp.subsamples_snp()};
        Index unconverged = 0;
        for (const auto& rec : records) unconverged += rec.lasso_converged ? 0 : 1;
        check_convergence(cfg, unconverged == 0, std::to_string(unconverged) + " second-level fit(s)");
        return nlohmann::json{{"subsamples", records.size()},
                              {"all_empty", r.all_empty},
                              {"unconverged", unconverged},
                              {"top_snp", r.snps.rows.empty() ? "" : r.snps.rows.front().id},
                              {"top_gene", r.genes.rows.empty() ? "" : r.genes.rows.front().id}};
    }, log);
}

inline StageResult cmd_enrich(const RunConfig& cfg, bool force = false, std::ostream& log = std::clog) {
    cfg.validate_for("enrich");
    const StagePaths sp{cfg.out};
    return run_stage("enrich", cfg, {sp.pathway_ranking(), sp.annotation(), cfg.targets}, force,
                     [&](std::vector<fs::path>&, std::vector<fs::path>& outputs) {
        const auto ann = read_annotation(sp.annotation());
        auto rin = open_file(sp.pathway_ranking());
        const auto ranks = read_pathway_ranks(rin);
        const auto targets = read_gene_list(cfg.targets);
        const auto r = enrichment_test(ranks, ann, targets, cfg.n_perm, *cfg.seed, cfg.workers);
        write_file(sp.enrichment(), [&](std::ostream& out) { write_enrichment(out, r); });
        outputs = {sp.enrichment()};
        return nlohmann::json{{"score", r.score},
                              {"p_value", r.p_value},
                              {"targets_used", r.targets_used.size()},
                              {"targets_dropped", r.targets_dropped.size()}};
    }, log);
}

/// Writes a synthetic data set in the input formats, the true loadings, and a
/// configuration (`config.json`) pointing at the written files.
inline StageResult cmd_simulate(const RunConfig& cfg, bool force = false, std::ostream& log = std::clog) {
    cfg.validate_for("simulate");
    RunConfig c = cfg;
    if (c.seed) c.simulation.seed = *c.seed;
    const StagePaths sp{c.out};
    return run_stage("simulate", c, {}, force, [&](std::vector<fs::path>&, std::vector<fs::path>& outputs) {
        const auto d = simulate_dataset(c.simulation, c.workers);
        RunConfig next = c;
        next.genotypes = sp("genotypes.tsv").string();
        next.snp_metadata = sp("snps.tsv").string();
        next.covariates = sp("covariates.tsv").string();
        next.gene_locations = sp("genes.tsv").string();
        next.gene_sets = sp("pathways.gmt").string();
        next.longitudinal = sp("longitudinal.tsv").string();
        next.targets = sp("targets.txt").string();
        if (!next.seed) next.seed = c.simulation.seed;

        write_file(next.genotypes, [&](std::ostream& o) { write_genotypes(o, d.genotypes); });
        write_file(next.snp_metadata, [&](std::ostream& o) { write_snp_metadata(o, d.genotypes.snps); });
        write_file(next.covariates, [&](std::ostream& o) { write_covariates(o, d.covariates); });
        write_file(next.gene_locations, [&](std::ostream& o) { write_gene_locations(o, d.annotation.genes); });
        write_file(next.gene_sets, [&](std::ostream& o) { write_gmt(o, d.annotation.gene_sets); });
        write_file(next.longitudinal, [&](std::ostream& o) { write_dense_tsv(o, to_dense(d.longitudinal)); });
        // Target genes for enrichment: the genes of the causal pathways.
        write_file(next.targets, [&](std::ostream& o) {
            for (auto l : c.simulation.causal_pathways)
                for (const auto& gname : d.annotation.gene_sets[static_cast<std::size_t>(l)].genes) o << gname << '\n';
        });
        nlohmann::json truth;
        truth["spec"] = c.simulation;
        nlohmann::json causal = nlohmann::json::array();
        for (auto l : c.simulation.causal_pathways) causal.push_back(d.annotation.gene_sets[static_cast<std::size_t>(l)].name);
        truth["causal_pathways"] = causal;
        nlohmann::json snps = nlohmann::json::array();
        for (auto j : d.planted.causal_snps) snps.push_back({{"snp", d.genotypes.snps[static_cast<std::size_t>(j)].id},
                                                             {"effect", d.planted.b[j]}});
        truth["causal_snps"] = snps;
        truth["trait_loading"] = std::vector<double>(d.planted.a.data(), d.planted.a.data() + d.planted.a.size());
        truth["noise_sd"] = d.planted.noise_sd;
        write_file(sp("truth.json"), [&](std::ostream& o) { o << truth.dump(2) << '\n'; });
        write_file(sp("config.json"), [&](std::ostream& o) { o << nlohmann::json(next).dump(2) << '\n'; });
        for (const auto& p : {next.genotypes, next.snp_metadata, next.covariates, next.gene_locations, next.gene_sets,
                              next.longitudinal, next.targets})
            outputs.emplace_back(p);
        outputs.push_back(sp("truth.json"));
        outputs.push_back(sp("config.json"));
        return nlohmann::json{{"subjects", c.simulation.n_subjects},
                              {"snps", c.simulation.n_snps},
                              {"pathways", c.simulation.n_pathways},
                              {"causal_pathways", causal}};
    }, log);
}

inline const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names{"qc",   "map",  "phenotype", "tune",    "fit",
                                                "rank", "snprank", "enrich", "simulate"};
    return names;
}

inline StageResult run_command(const std::string& name, const RunConfig& cfg, bool force = false,
                               std::ostream& log = std::clog) {
    if (name == "qc") return cmd_qc(cfg, force, log);
    if (name == "map") return cmd_map(cfg, force, log);
    if (name == "phenotype") return cmd_phenotype(cfg, force, log);
    if (name == "tune") return cmd_tune(cfg, force, log);
    if (name == "fit") return cmd_fit(cfg, force, log);
    if (name == "rank") return cmd_rank(cfg, force, log);
    if (name == "snprank") return cmd_snprank(cfg, force, log);
    if (name == "enrich") return cmd_enrich(cfg, force, log);
    if (name == "simulate") return cmd_simulate(cfg, force, log);
    throw ConfigError("unknown command '" + name + "'");
}

/// 0 success, 2 configuration error, 3 data error, 4 fatal non-convergence.
inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const ConvergenceError*>(&e)) return 4;
    if (dynamic_cast<const DataError*>(&e)) return 3;
    if (dynamic_cast<const nlohmann::json::exception*>(&e)) return 3;
    if (dynamic_cast<const fs::filesystem_error*>(&e)) return 3;
    return 3;
}

} // namespace psrrr
