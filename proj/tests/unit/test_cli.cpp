#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "softctl/cli.hpp"

namespace fs = std::filesystem;
using namespace softctl::cli;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = dispatch(args, out, err);
    return {code, out.str(), err.str()};
}

std::string scratch(const std::string& name) {
    const fs::path p = fs::current_path() / ("cli_scratch_" + name);
    fs::remove_all(p);
    return p.string();
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

std::size_t line_count(const fs::path& p) {
    std::ifstream f(p);
    std::size_t n = 0;
    for (std::string l; std::getline(f, l);) ++n;
    return n;
}

std::string parse_error(const std::string& text) {
    std::istringstream is(text);
    try {
        (void)parse_config(is, "cfg.txt");
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("config grammar") {
    std::istringstream ok("# comment\n\nproblem = lq1d\n  nodes=64  \nparam.beta = 4\n");
    const ConfigMap m = parse_config(ok, "cfg.txt");
    CHECK(m.at("problem") == "lq1d");
    CHECK(m.at("nodes") == "64");
    CHECK(m.at("param.beta") == "4");

    CHECK(parse_error("problem = lq1d\nbogus = 1\n").find("cfg.txt:2:") != std::string::npos);
    CHECK(parse_error("bogus = 1\n").find("unknown key") != std::string::npos);
    CHECK(parse_error("nodes = 1\nnodes = 2\n").find("duplicate") != std::string::npos);
    CHECK(parse_error("nodes 12\n").find("cfg.txt:1:") != std::string::npos);
    CHECK(parse_error(" = 3\n").find("cfg.txt:1:") != std::string::npos);
    CHECK(parse_error("nodes =\n").find("empty value") != std::string::npos);
    CHECK(parse_error("Nodes = 3\n").find("malformed key") != std::string::npos);
    for (const auto& k : config_keys()) CHECK(parse_error(k + " = 1\n").empty());
}

TEST_CASE("exit codes") {
    CHECK(run({}).code == kExitUserError);
    CHECK(run({"--help"}).code == kExitOk);
    CHECK(run({"frobnicate"}).code == kExitUserError);
    CHECK(run({"validate", "--bogus", "1"}).code == kExitUserError);
    CHECK(run({"validate", "--problem", "lq1d", "--nodes", "64"}).code == kExitOk);

    const Result bad = run({"solve-mdp", "--problem", "lq1d", "--h", "abc", "--out", scratch("bad")});
    CHECK(bad.code == kExitUserError);
    CHECK(bad.err.find("h") != std::string::npos);
    CHECK(run({"solve-mdp", "--problem", "nosuch", "--out", scratch("reg")}).code == kExitUserError);
    CHECK(run({"solve-mdp", "--problem", "temperature", "--out", scratch("mode")}).code == kExitUserError);
    CHECK(run({"solve-mdp", "--problem", "lq1d", "--set", "zzz=1", "--out", scratch("set")}).code == kExitUserError);

    const Result fail = run({"solve-hjb", "--problem", "lq1d", "--nodes", "32", "--tol", "1e-30", "--out", scratch("fail")});
    CHECK(fail.code == kExitSolverFailure);
    CHECK(fail.err.find("residual history") != std::string::npos);
}

TEST_CASE("existing output directory needs --force") {
    const std::string dir = scratch("force");
    const std::vector<std::string> base{"solve-classical", "--problem", "lq1d", "--nodes", "32", "--controls", "9", "--out", dir};
    CHECK(run(base).code == kExitOk);
    CHECK(fs::exists(fs::path(dir) / "manifest.json"));
    const Result again = run(base);
    CHECK(again.code == kExitUserError);
    CHECK(again.err.find("--force") != std::string::npos);
    std::vector<std::string> forced = base;
    forced.push_back("--force");
    CHECK(run(forced).code == kExitOk);
}

TEST_CASE("flags win over the config file; manifest replay reproduces outputs") {
    const std::string cfg = scratch("cfg") + ".txt";
    {
        std::ofstream f(cfg);
        f << "problem = lq1d\nnodes = 32\ncontrols = 9\nh = 0.25\nlambda = 0.5\n";
    }
    const std::string a = scratch("replay_a");
    REQUIRE(run({"solve-mdp", "--config", cfg, "--nodes", "16", "--out", a}).code == kExitOk);
    CHECK(line_count(fs::path(a) / "value.csv") == 17);
    const auto manifest = nlohmann::json::parse(slurp(fs::path(a) / "manifest.json"));
    CHECK(manifest["config"]["nodes"] == "16");
    CHECK(manifest["config"]["h"] == "0.25");
    CHECK(!manifest["config"].contains("out"));

    const std::string b = scratch("replay_b");
    REQUIRE(run({"solve-mdp", "--manifest", (fs::path(a) / "manifest.json").string(), "--out", b}).code == kExitOk);
    for (const char* f : {"value.csv", "policy.csv", "manifest.json"})
        CHECK(slurp(fs::path(a) / f) == slurp(fs::path(b) / f));
    fs::remove(cfg);
}

TEST_CASE("range lists expand and outputs do not depend on workers") {
    const std::string a = scratch("sweep_a"), b = scratch("sweep_b");
    const std::vector<std::string> base{"sweep", "--problem", "lq1d", "--h", "2^-2..2^-5", "--lambda", "0.5",
                                        "--nodes", "32", "--controls", "9"};
    std::vector<std::string> one = base, three = base;
    for (auto s : {"--workers", "1", "--out"}) one.push_back(s);
    one.push_back(a);
    for (auto s : {"--workers", "3", "--out"}) three.push_back(s);
    three.push_back(b);
    REQUIRE(run(one).code == kExitOk);
    REQUIRE(run(three).code == kExitOk);
    CHECK(line_count(fs::path(a) / "rates.csv") == 5);
    const auto fits = nlohmann::json::parse(slurp(fs::path(a) / "fits.json"));
    CHECK(fits["fits_absent"] == false);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(a)) {
        CHECK(slurp(e.path()) == slurp(fs::path(b) / e.path().filename()));
        ++files;
    }
    CHECK(files >= 4);
}
