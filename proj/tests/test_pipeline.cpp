// Drives the psrrr executable end to end. PSRRR_CLI_PATH points at the binary.

#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path scratch() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / ("psrrr_pipeline_" + std::to_string(::getpid()));
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

Run cli(const std::string& args, const std::string& env = "") {
    const char* bin = std::getenv("PSRRR_CLI_PATH");
    if (!bin) bin = "psrrr";
    const auto o = scratch() / "stdout.txt", e = scratch() / "stderr.txt";
    const std::string cmd = env + (env.empty() ? "" : " ") + std::string(bin) + " " + args + " >" + o.string() + " 2>" +
                            e.string();
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(o);
    r.err = slurp(e);
    return r;
}

const char* kSim =
    " --seed 21 --set simulation.n_subjects=150 --set simulation.n_snps=1000 --set simulation.n_pathways=10"
    " --set simulation.pathway_size_min=30 --set simulation.pathway_size_max=80 --set simulation.n_traits=20"
    " --set simulation.n_null_traits=10 --set simulation.n_chromosomes=4";

const char* kFast = " --n_subsamples 30 --fits_per_iter 100 --max_tune_iter 3 --n_perm 500";

class Pipeline : public ::testing::Test {
protected:
    static fs::path dir() { return scratch() / "main"; }
    static std::string config() { return (dir() / "config.json").string(); }

    static void SetUpTestSuite() {
        const auto sim = cli("simulate --out " + dir().string() + kSim);
        ASSERT_EQ(sim.code, 0) << sim.err;
        const auto run = cli("run --config " + config() + kFast);
        ASSERT_EQ(run.code, 0) << run.err;
    }

    static void TearDownTestSuite() { fs::remove_all(scratch()); }
};

} // namespace

TEST_F(Pipeline, SimulateWritesInputsAndRunnableConfig) {
    for (const char* f : {"genotypes.tsv", "snps.tsv", "covariates.tsv", "genes.tsv", "pathways.gmt", "longitudinal.tsv",
                          "targets.txt", "truth.json", "config.json"})
        EXPECT_TRUE(fs::exists(dir() / f)) << f;
    const auto cfg = nlohmann::json::parse(slurp(dir() / "config.json"));
    EXPECT_EQ(cfg.at("seed"), 21);
    EXPECT_EQ(cfg.at("simulation").at("n_subjects"), 150);
    EXPECT_EQ(fs::path(cfg.at("genotypes").get<std::string>()), dir() / "genotypes.tsv");
}

TEST_F(Pipeline, PlantedPathwayIsRankedNearTheTop) {
    const auto truth = nlohmann::json::parse(slurp(dir() / "truth.json"));
    const auto planted = truth.at("causal_pathways").at(0).get<std::string>();
    std::istringstream in(slurp(dir() / "pathway_ranking.tsv"));
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line.rfind("#rank\tpathway\tpi", 0), 0u);
    int found = -1;
    while (std::getline(in, line)) {
        std::istringstream row(line);
        int rank;
        std::string id;
        row >> rank >> id;
        if (id == planted) found = rank;
    }
    EXPECT_GE(found, 1);
    EXPECT_LE(found, 3);
    for (const char* f : {"qc_report.tsv", "annotation.json", "selected_traits.tsv", "phenotype.tsv", "weights.tsv",
                          "fit_pathways.tsv", "subsamples.jsonl", "snp_ranking.tsv", "gene_ranking.tsv",
                          "enrichment.tsv", "manifest.json"})
        EXPECT_TRUE(fs::exists(dir() / f)) << f;
}

TEST_F(Pipeline, RerunSkipsFreshStagesAndKeepsOutputs) {
    const auto before = slurp(dir() / "pathway_ranking.tsv");
    const auto again = cli("run --config " + config() + kFast);
    ASSERT_EQ(again.code, 0) << again.err;
    for (const char* stage : {"qc", "map", "phenotype", "tune", "fit", "rank", "snprank", "enrich"})
        EXPECT_NE(again.err.find(std::string(stage) + ": up to date"), std::string::npos) << stage;
    EXPECT_EQ(slurp(dir() / "pathway_ranking.tsv"), before);

    // A changed setting reruns; a forced rerun with identical settings reproduces the bytes.
    const auto forced = cli("rank --force --config " + config() + kFast);
    ASSERT_EQ(forced.code, 0) << forced.err;
    EXPECT_NE(forced.err.find("rank: done"), std::string::npos);
    EXPECT_EQ(slurp(dir() / "pathway_ranking.tsv"), before);
}

TEST_F(Pipeline, WorkerCountDoesNotChangeRankings) {
    const auto copy = scratch() / "workers8";
    fs::remove_all(copy);
    fs::copy(dir(), copy, fs::copy_options::recursive);
    for (const char* stage : {"rank", "snprank"}) {
        const auto r = cli(std::string(stage) + " --force --workers 8 --out " + copy.string() + " --config " + config() + kFast);
        ASSERT_EQ(r.code, 0) << r.err;
    }
    for (const char* f : {"pathway_ranking.tsv", "subsamples.jsonl", "snp_ranking.tsv", "gene_ranking.tsv"})
        EXPECT_EQ(slurp(copy / f), slurp(dir() / f)) << f;
    const auto env = cli("rank --force --out " + copy.string() + " --config " + config() + kFast, "PSRRR_WORKERS=3");
    ASSERT_EQ(env.code, 0) << env.err;
    EXPECT_EQ(slurp(copy / "pathway_ranking.tsv"), slurp(dir() / "pathway_ranking.tsv"));
}

TEST_F(Pipeline, InvalidConfigurationListsEveryViolation) {
    const auto r = cli("fit --config " + config() + " --gamma 1.5 --fraction 2");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("gamma"), std::string::npos);
    EXPECT_NE(r.err.find("fraction"), std::string::npos);

    EXPECT_EQ(cli("rank --config " + config() + " --no_such_option 1").code, 2);
    EXPECT_EQ(cli("fit --config " + config() + " --set nonsense=1").code, 2);
    EXPECT_EQ(cli("qc --config " + config() + " --genotypes /nonexistent/file.tsv --out " +
                  (scratch() / "missing").string()).code, 2);
    EXPECT_EQ(cli("qc --config " + config(), "PSRRR_WORKERS=zero").code, 2);
}

TEST_F(Pipeline, SeedIsRequiredForRandomisedStages) {
    auto cfg = nlohmann::json::parse(slurp(dir() / "config.json"));
    cfg.erase("seed");
    const auto path = scratch() / "noseed.json";
    std::ofstream(path) << cfg.dump();
    const auto r = cli("rank --config " + path.string() + " --out " + (scratch() / "noseed").string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("seed"), std::string::npos);
}

TEST_F(Pipeline, MalformedDataExitsWithDataErrorCode) {
    const auto bad = scratch() / "bad_genotypes.tsv";
    std::ofstream(bad) << "#subject_id\trs1\nS1\tseven\n";
    const auto r = cli("qc --config " + config() + " --genotypes " + bad.string() + " --out " + (scratch() / "bad").string());
    EXPECT_EQ(r.code, 3);
    EXPECT_FALSE(r.err.empty());
}

TEST_F(Pipeline, DumpConfigShowsResolvedValues) {
    const auto r = cli("fit --config " + config() + " --gamma 0.7 --dump-config --workers 2");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_DOUBLE_EQ(j.at("gamma").get<double>(), 0.7);
    EXPECT_EQ(j.at("workers"), 2);
    EXPECT_EQ(j.at("seed"), 21);
}
