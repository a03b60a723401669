#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string cli_path() {
    const char* env = std::getenv("MFCS_BIN");
    return env ? env : "tools/mfcs";
}

int run(const std::string& args) {
    const std::string cmd = cli_path() + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    json j;
    in >> j;
    return j;
}

fs::path fresh_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("mfcs_test_" + tag);
    fs::remove_all(p);
    return p;
}

void write_config(const fs::path& p, const json& j) {
    std::ofstream out(p);
    out << j.dump(2);
}

}  // namespace

TEST_CASE("solve on the zero-cost model returns zero value") {
    const fs::path out = fresh_dir("zero");
    const int code = run("solve --model zero_cost --atoms 16 --scenarios 8 --steps 10 --out " +
                         out.string());
    CHECK(code == 0);
    const json summary = read_json(out / "summary.json");
    CHECK(summary.at("converged").get<bool>());
    CHECK(std::abs(summary.at("value").get<double>()) <= 1e-12);
    CHECK(fs::exists(out / "quad.csv"));
    CHECK(fs::exists(out / "config_resolved.json"));
}

TEST_CASE("lq-validate reports oracle agreement within 2%") {
    const fs::path out = fresh_dir("lqv");
    const json cfg = {
        {"model", {{"name", "lq_scalar"},
                   {"params", {{"q", 1.0}, {"q_T", 1.0}, {"r", 1.0}, {"lambda_bar", 0.5}}}}},
        {"grid", {{"t0", 0.0}, {"T", 1.0}, {"steps", 50}}},
        {"ensemble", {{"atoms", 200}, {"scenarios", 400}, {"seed", 20240801}}},
        {"eta", 0.3},
        {"out", out.string()}};
    const fs::path cfg_path = out.string() + "_config.json";
    write_config(cfg_path, cfg);
    const int code = run("lq-validate --config " + cfg_path.string());
    CHECK(code == 0);
    const json summary = read_json(out / "summary.json");
    for (const char* method : {"gradient_descent", "picard_feedback"}) {
        CHECK(summary.at(method).at("control_rel_err_rms").get<double>() <= 0.02);
        CHECK(summary.at(method).at("value_rel_err").get<double>() <= 0.02);
    }
}

TEST_CASE("convexity gate exits 4 without --force and runs with it") {
    const fs::path out = fresh_dir("gate");
    // concave terminal cost: c'_h = 2 so c0 = 1 - 2 T < 0
    const json cfg = {{"model", {{"name", "lq_scalar"}, {"params", {{"q_T", -2.0}}}}},
                      {"grid", {{"t0", 0.0}, {"T", 1.0}, {"steps", 10}}},
                      {"ensemble", {{"atoms", 8}, {"scenarios", 4}}},
                      {"out", out.string()}};
    const fs::path cfg_path = out.string() + "_config.json";
    write_config(cfg_path, cfg);
    CHECK(run("solve --config " + cfg_path.string()) == 4);
    const json gate = read_json(out / "summary.json");
    CHECK(gate.at("c0").get<double>() < 0.0);
    CHECK(run("solve --config " + cfg_path.string() + " --force") != 4);
}

TEST_CASE("schema violations exit 2") {
    const fs::path out = fresh_dir("schema");
    const fs::path bad = out.string() + "_bad.json";
    fs::create_directories(out);
    std::ofstream(bad) << "{ not json";
    CHECK(run("solve --config " + bad.string()) == 2);

    const fs::path bad2 = out.string() + "_bad2.json";
    write_config(bad2, {{"grid", {{"t0", 1.0}, {"T", 0.5}, {"steps", 10}}}});
    CHECK(run("solve --config " + bad2.string()) == 2);

    CHECK(run("solve --model no_such_model") == 2);
    CHECK(run("no-such-command") == 2);
}

TEST_CASE("assumptions subcommand writes the report") {
    const fs::path out = fresh_dir("assume");
    const int code = run("assumptions --model exp_well --out " + out.string());
    CHECK(code == 0);
    const json rep = read_json(out / "assumptions.json");
    CHECK(rep.at("all_core_pass").get<bool>());
    CHECK(rep.at("b5_star").get<bool>());
}

TEST_CASE("outputs are byte-identical for identical configs modulo timestamp") {
    const fs::path out1 = fresh_dir("det1");
    const fs::path out2 = fresh_dir("det2");
    const std::string args = "solve --model lq_scalar --atoms 24 --scenarios 12 --steps 10 "
                             "--seed 99 --out ";
    CHECK(run(args + out1.string()) == 0);
    CHECK(run(args + out2.string()) == 0);

    // CSV artifacts identical byte for byte
    std::ifstream a(out1 / "quad.csv"), b(out2 / "quad.csv");
    const std::string sa((std::istreambuf_iterator<char>(a)), {});
    const std::string sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);
    CHECK_FALSE(sa.empty());

    json c1 = read_json(out1 / "config_resolved.json");
    json c2 = read_json(out2 / "config_resolved.json");
    c1.erase("timestamp");
    c2.erase("timestamp");
    // the out directory is part of the config (and so of its hash)
    c1.erase("out");
    c2.erase("out");
    c1.erase("config_hash");
    c2.erase("config_hash");
    CHECK(c1.dump() == c2.dump());

    const json s1 = read_json(out1 / "summary.json");
    const json s2 = read_json(out2 / "summary.json");
    CHECK(s1.at("value").get<double>() == s2.at("value").get<double>());
}

TEST_CASE("every output embeds the config hash") {
    const fs::path out = fresh_dir("hash");
    CHECK(run("solve --model zero_cost --atoms 8 --scenarios 4 --steps 5 --out " +
              out.string()) == 0);
    const json cfg = read_json(out / "config_resolved.json");
    const json summary = read_json(out / "summary.json");
    CHECK(cfg.at("config_hash").get<std::uint64_t>() ==
          summary.at("config_hash").get<std::uint64_t>());
}
