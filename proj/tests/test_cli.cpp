#include "attnsink/dump.hpp"
#include "attnsink/oversmoothing.hpp"
#include "oracles.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

using namespace attnsink;
namespace fs = std::filesystem;

namespace {

const fs::path kOut = fs::temp_directory_path() / "attnsink_cli_test";

int run(const std::string& args) {
    const std::string cmd = std::string(ATTNSINK_CLI_PATH) + " --out " + kOut.string() + " " + args + " >/dev/null 2>&1";
    const int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::vector<std::string> lines(const fs::path& p) {
    std::ifstream is(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(is, l);) out.push_back(l);
    return out;
}

// Layer 0 head 0 is a sink, layer 0 head 1 is diagonal; Z and W_V for layer 0 head 0.
std::string write_sample_dump() {
    const int n = 3, t1 = 6, d = 5;
    std::mt19937_64 rng(3);
    Tensor sink, diag, z;
    sink.dims = diag.dims = {n, t1, t1};
    z.dims = {n, t1, d};
    for (int s = 0; s < n; ++s) {
        Matrix sc = oracles::randn(rng, t1, t1);
        Matrix ss = sc, sd = sc;
        ss.col(0).array() += 8.0;
        sd.diagonal().array() += 8.0;
        auto as = causal_softmax(ss), ad = causal_softmax(sd);
        for (int i = 0; i < t1; ++i)
            for (int j = 0; j < t1; ++j) {
                sink.data.push_back(as(i, j));
                diag.data.push_back(ad(i, j));
            }
        Matrix zz = oracles::randn(rng, t1, d);
        for (int i = 0; i < t1; ++i)
            for (int c = 0; c < d; ++c) z.data.push_back(zz(i, c));
    }
    DumpFile df;
    df.dtype = DType::F32;
    df.records.push_back({head_record_name(0, 0, "A"), sink});
    df.records.push_back({head_record_name(0, 0, "Z"), z});
    df.records.push_back({head_record_name(0, 0, "Wv"), tensor_from_matrix(oracles::randn(rng, d, d))});
    df.records.push_back({head_record_name(0, 1, "A"), diag});
    df.records.push_back({head_record_name(0, 1, "Z"), z});
    const auto path = (fs::temp_directory_path() / "attnsink_cli_sample.atnd").string();
    write_dump(path, df);
    return path;
}

}  // namespace

TEST_CASE("argument errors exit with 2") {
    CHECK(run("--no-such-flag") == 2);
    CHECK(run("") == 2);
    CHECK(run("classify --dump /nonexistent/file.atnd") == 2);
    CHECK(run("construct --task nope") == 2);
    CHECK(run("construct --delta 3") == 2);
    CHECK(run("train --T 8 --steps 0") == 2);
    CHECK(run("classify --dump " + write_sample_dump() + " --thresholds 0.1,0.2") == 2);
}

TEST_CASE("corrupt dump exits with 2, unwritable output with 1") {
    const auto bad = fs::temp_directory_path() / "attnsink_cli_bad.atnd";
    std::ofstream(bad) << "not a dump";
    CHECK(run("classify --dump " + bad.string()) == 2);
    fs::remove(bad);
    const std::string cmd = std::string(ATTNSINK_CLI_PATH) + " --out /proc/attnsink_nope bounds >/dev/null 2>&1";
    const int st = std::system(cmd.c_str());
    CHECK(WEXITSTATUS(st) == 1);
}

TEST_CASE("classify writes a census with the expected labels") {
    fs::remove_all(kOut);
    REQUIRE(run("classify --dump " + write_sample_dump()) == 0);
    auto rows = lines(kOut / "census.csv");
    REQUIRE(rows.size() == 2 + 6);
    CHECK(rows[0].rfind("# config_hash=", 0) == 0);
    int sink = 0, diag = 0;
    for (size_t i = 2; i < rows.size(); ++i) {
        if (rows[i].rfind("0,0,", 0) == 0 && rows[i].find(",sink") != std::string::npos) ++sink;
        if (rows[i].rfind("0,1,", 0) == 0 && rows[i].find(",diagonal") != std::string::npos) ++diag;
    }
    CHECK(sink == 3);
    CHECK(diag == 3);
    std::ifstream js(kOut / "census_summary.json");
    auto j = nlohmann::json::parse(js);
    CHECK(j.dump().find("0.5") != std::string::npos);
}

TEST_CASE("analyze and geometry on a dump") {
    fs::remove_all(kOut);
    const auto dump = write_sample_dump();
    REQUIRE(run("analyze --dump " + dump) == 0);
    CHECK(lines(kOut / "analyze.csv").size() >= 3);
    REQUIRE(run("geometry --dump " + dump + " --bos-alignment --value-rank") == 0);
    CHECK(fs::exists(kOut / "bos_alignment.csv"));
    CHECK(fs::exists(kOut / "value_rank.csv"));
}

TEST_CASE("oversmooth, construct and bounds") {
    fs::remove_all(kOut);
    REQUIRE(run("oversmooth --d 8 --T 6 --points 11") == 0);
    CHECK(lines(kOut / "oversmooth_curve.csv").size() >= 12);
    CHECK(fs::exists(kOut / "oversmooth_conditions.json"));

    REQUIRE(run("construct --task backcopy --T 12") == 0);
    std::ifstream cs(kOut / "construct.json");
    auto c = nlohmann::json::parse(cs);
    CHECK(c.dump().find("true") != std::string::npos);

    REQUIRE(run("bounds --task generic --kappa 10 --delta 0.3") == 0);
    std::ifstream bs(kOut / "bounds.json");
    auto b = nlohmann::json::parse(bs);
    CHECK(b.dump().find("111") != std::string::npos);
}

TEST_CASE("train and a short sweep") {
    fs::remove_all(kOut);
    REQUIRE(run("train --T 8 --steps 20 --batch 4") == 0);
    CHECK(lines(kOut / "train_trace.csv").size() >= 21);
    CHECK(fs::exists(kOut / "train_final.json"));
    REQUIRE(run("sweep --task backcopy --pattern diag --T 8,12 --steps 20 --batch 4") == 0);
    CHECK(lines(kOut / "sweep_backcopy_diag.csv").size() == 4);
    fs::remove_all(kOut);
}
