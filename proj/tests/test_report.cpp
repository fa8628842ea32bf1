#include "attnsink/report.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace attnsink;
namespace fs = std::filesystem;

TEST_CASE("config hash is FNV-1a 64") {
    CHECK(config_hash("") == "cbf29ce484222325");
    CHECK(config_hash("a") == "af63dc4c8601ec8c");
    CHECK(config_hash("foobar") == "85944171f73967e8");
    CHECK(config_hash("x=1") != config_hash("x=2"));
}

TEST_CASE("output directory from the environment") {
    auto dir = fs::temp_directory_path() / "attnsink_report_env";
    fs::remove_all(dir);
    ::setenv("ATTNSINK_OUTPUT_DIR", dir.c_str(), 1);
    CHECK(resolve_output_dir("unused") == dir.string());
    CHECK(fs::is_directory(dir));
    ::unsetenv("ATTNSINK_OUTPUT_DIR");
    auto fb = fs::temp_directory_path() / "attnsink_report_fb";
    fs::remove_all(fb);
    CHECK(resolve_output_dir(fb.string()) == fb.string());
    CHECK(fs::is_directory(fb));
    fs::remove_all(dir);
    fs::remove_all(fb);
}

TEST_CASE("json of cost reports and bounds") {
    CostReport c;
    c.qk_nuclear = 1.5;
    c.total = 7.0;
    auto j = to_json(c);
    CHECK(j["qk_nuclear"].get<double>() == 1.5);
    CHECK(j["total"].get<double>() == 7.0);
    CHECK(j["convention"].get<std::string>() == to_string(CostConvention::Variational));

    BoundSet b;
    b.u_sink = 111.0;
    b.u_diag = std::numeric_limits<double>::infinity();
    auto jb = to_json(b);
    CHECK(jb["U_sink"].get<double>() == 111.0);
    CHECK(jb["U_diag"].get<std::string>() == "inf");
    CHECK(jb["eq3_lhs"].is_null());
    CHECK(jb["eq4_holds"].get<bool>() == false);

    Thm2Bounds t;
    t.lhs = 2.0;
    t.rhs = 3.0;
    t.sink_cheaper = true;
    auto jt = to_json(t);
    CHECK(jt["lhs"].get<double>() == 2.0);
    CHECK(jt["sink_cheaper"].get<bool>());
}

TEST_CASE("write_json round trip") {
    auto p = fs::temp_directory_path() / "attnsink_report.json";
    nlohmann::json j = {{"a", 1}, {"b", {1.5, 2.5}}};
    write_json(p.string(), j);
    std::ifstream is(p);
    CHECK(nlohmann::json::parse(is) == j);
    fs::remove(p);
    CHECK_THROWS(write_json("/nonexistent_dir_attnsink/x.json", j));
}
