#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "mwp/cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path data_dir() { return fs::path(MWP_SOURCE_DIR) / "data"; }

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run mwp_run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = mwp::cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("mwp-cli-" + tag + "-" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::vector<std::string> generation_args(const TempDir& dir, std::size_t per_template) {
    return {"generate",    "--templates", (data_dir() / "templates").string(), "--lexicon",
            (data_dir() / "lexicon.json").string(), "--per-template", std::to_string(per_template),
            "--output",    dir / "g.native.jsonl"};
}

} // namespace

TEST_CASE("test_cli help and usage errors") {
    for (std::vector<std::string> cmd : {std::vector<std::string>{},
                                         {"ingest"}, {"stats"}, {"folds"}, {"train"}, {"eval"}, {"probe", "noq"},
                                         {"partition"}, {"attn"}, {"delta"}, {"breakdown"}, {"generate"},
                                         {"validate-templates"}}) {
        cmd.push_back("--help");
        const Run r = mwp_run(cmd);
        CHECK(r.code == mwp::cli::kOk);
        CHECK(r.out.find("Usage:") != std::string::npos);
    }
    CHECK(mwp_run({"frobnicate"}).code == mwp::cli::kError);
    CHECK(mwp_run({}).code == mwp::cli::kError);
    CHECK(mwp_run({"stats", "--corpus", "/nonexistent/x.jsonl"}).code == mwp::cli::kError);
    CHECK(mwp_run({"stats", "--corpus", "a", "--format", "yaml"}).code == mwp::cli::kError);
}

TEST_CASE("test_cli generate, stats and reruns") {
    TempDir dir("gen");
    auto args = generation_args(dir, 50);
    const Run first = mwp_run(args);
    REQUIRE(first.code == mwp::cli::kOk);
    const json report = json::parse(first.out);
    CHECK(report["problems"] == 1000);
    CHECK(report["templates"].size() == 20);
    const std::string corpus = slurp(dir / "g.native.jsonl");

    const Run second = mwp_run(args);
    CHECK(second.out == first.out);
    CHECK(slurp(dir / "g.native.jsonl") == corpus);

    args.insert(args.end(), {"--jobs", "3"});
    CHECK(mwp_run(args).out == first.out);
    CHECK(slurp(dir / "g.native.jsonl") == corpus);

    const Run stats = mwp_run({"stats", "--corpus", dir / "g.native.jsonl", "--format", "md"});
    REQUIRE(stats.code == mwp::cli::kOk);
    CHECK(stats.out.starts_with("| Dataset "));
    CHECK(stats.out.find("| # Equation Templates |") != std::string::npos);
    CHECK(stats.out.find("| g ") != std::string::npos);

    const Run csv = mwp_run({"stats", "--corpus", dir / "g.native.jsonl", "--format", "csv"});
    CHECK(csv.out.starts_with("Dataset,# Problems,# Equation Templates,# Avg Ops,CLD\n"));
}

TEST_CASE("test_cli validate-templates") {
    const Run ok = mwp_run({"validate-templates", "--templates", (data_dir() / "templates").string(), "--lexicon",
                            (data_dir() / "lexicon.json").string()});
    CHECK(ok.code == mwp::cli::kOk);
    CHECK(json::parse(ok.out)["diagnostics"].empty());

    TempDir dir("validate");
    std::ofstream(dir / "bad.txt") << "ID: bad\nBODY: [NAME1] has [NUM1] [OBJP1].\nQUESTION: How many?\n"
                                      "EQUATION: [NUM1] + [NUM2]\n";
    const Run bad = mwp_run({"validate-templates", "--templates", dir / "bad.txt", "--lexicon",
                             (data_dir() / "lexicon.json").string()});
    CHECK(bad.code == mwp::cli::kError);
}

TEST_CASE("test_cli probe workflow on an untrained stub") {
    TempDir dir("probe");
    REQUIRE(mwp_run(generation_args(dir, 4)).code == mwp::cli::kOk);
    const std::string corpus = dir / "g.native.jsonl";

    const Run train = mwp_run({"train", "--corpus", corpus, "--epochs", "0", "--hidden", "8", "--embedding", "8",
                               "--model", dir / "stub.mwps"});
    REQUIRE(train.code == mwp::cli::kOk);
    CHECK(json::parse(train.out)["epochs"].empty());

    const Run probe = mwp_run({"probe", "noq", "--corpus", corpus, "--model", dir / "stub.mwps", "--folds",
                               "seed-grouped", "--out", dir / "probe"});
    REQUIRE(probe.code == mwp::cli::kOk);
    const json p = json::parse(slurp(dir / "probe/probe-noq.json"));
    CHECK(p["kind"] == "noq_probe");
    CHECK(p["identity_holds"] == true);
    CHECK(p["problems"].size() == 80);

    const Run full = mwp_run({"eval", "--corpus", corpus, "--baseline", "majority", "--folds", "seed-grouped",
                              "--out", dir / "eval"});
    REQUIRE(full.code == mwp::cli::kOk);
    const json e = json::parse(slurp(dir / "eval/eval.json"));
    CHECK(e["folds"]["per_fold"].size() == 5);

    const Run partition = mwp_run({"partition", "--corpus", corpus, "--report", dir / "probe/probe-noq.json",
                                   "--full", dir / "eval/eval.json"});
    REQUIRE(partition.code == mwp::cli::kOk);
    const json split = json::parse(partition.out);
    CHECK(split["easy"].size() + split["hard"].size() == 80);
    CHECK(split["accuracy"]["identity_holds"] == true);

    const Run delta = mwp_run({"delta", "--corpus", corpus, "--report", dir / "eval/eval.json", "--label",
                               "Invert Operation"});
    REQUIRE(delta.code == mwp::cli::kOk);
    const json d = json::parse(delta.out);
    CHECK(d["removed"].get<int>() > 0);
    CHECK(d["acc_full"]["total"].get<int>() == d["acc_remaining"]["total"].get<int>() + d["removed"].get<int>());

    const Run bogus = mwp_run({"delta", "--corpus", corpus, "--report", dir / "eval/eval.json", "--label", "bogus",
                               "--strict"});
    CHECK(bogus.code == mwp::cli::kWarnings);
    CHECK(bogus.err.find("warning:") != std::string::npos);

    const Run breakdown = mwp_run({"breakdown", "--corpus", corpus, "--report", dir / "eval/eval.json"});
    CHECK(json::parse(breakdown.out)["identity_holds"] == true);

    const Run attn = mwp_run({"attn", "--corpus", corpus, "--model", dir / "stub.mwps", "--limit", "3"});
    REQUIRE(attn.code == mwp::cli::kOk);
    const json a = json::parse(attn.out);
    CHECK(a["reports"].size() == 3);
    CHECK(a["summary"]["focused"] == 0);

    CHECK(mwp_run({"eval", "--corpus", corpus, "--baseline", "majority", "--variant", "seq2seq"}).code ==
          mwp::cli::kError);
    CHECK(mwp_run({"attn", "--corpus", corpus, "--model", dir / "stub.mwps", "--id", "missing"}).code ==
          mwp::cli::kError);
}

TEST_CASE("test_cli config files") {
    TempDir dir("config");
    std::ofstream(dir / "run.toml") << "per_template = 2\nformat = \"csv\"\nepochs = 3\n"
                                       "[generate]\nper_template = 3\nno_distinct_numbers = true\n";
    auto args = generation_args(dir, 0);
    args.erase(args.begin() + 5, args.begin() + 7); // drop --per-template
    args.insert(args.end(), {"--config", dir / "run.toml"});
    const Run r = mwp_run(args);
    REQUIRE(r.code == mwp::cli::kOk);
    CHECK(r.out.starts_with("Template,Requested,Produced\n"));
    CHECK(r.out.find(",3,3\n") != std::string::npos);

    args.insert(args.end(), {"--per-template", "1"});
    CHECK(mwp_run(args).out.find(",1,1\n") != std::string::npos);

    std::ofstream(dir / "bad.toml") << "[generate]\nbogus = 1\n";
    CHECK(mwp_run({"generate", "--config", dir / "bad.toml", "--output", dir / "x.jsonl"}).code == mwp::cli::kError);
    CHECK(mwp_run({"generate", "--config", dir / "missing.toml"}).code == mwp::cli::kError);
}
