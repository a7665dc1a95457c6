#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "orl/csv.hpp"

using namespace orl;

namespace {

std::string temp_file(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path);
    f << content;
}

}  // namespace

TEST_SUITE("csv") {

TEST_CASE("plain dataset round trip") {
    std::string path = temp_file("orl_csv_plain.csv");
    write_file(path, "x_0,x_1,a,y\n0.5,-1,1,2.25\n0,0,0,1\n1,2,1,0\n");
    auto loaded = load_csv(path);
    REQUIRE(std::holds_alternative<Dataset>(loaded));
    const Dataset& d = std::get<Dataset>(loaded);
    CHECK(d.n() == 3);
    CHECK(d.dim() == 2);
    CHECK(d.X(0, 0) == 0.5);
    CHECK(d.Y[0] == 2.25);
    std::remove(path.c_str());
}

TEST_CASE("non-binary treatment names the row") {
    std::string path = temp_file("orl_csv_badtreat.csv");
    write_file(path, "x_0,a,y\n0,0,1\n0,1,1\n0,0,1\n0,0,1\n0,2,1\n");
    try {
        load_csv(path);
        FAIL("expected NonBinaryTreatment");
    } catch (const NonBinaryTreatment& e) {
        CHECK(std::string(e.what()).find("row 5") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("missing column and non-finite values") {
    std::string path = temp_file("orl_csv_missing.csv");
    write_file(path, "x_0,y\n1,1\n");
    CHECK_THROWS_AS(load_csv(path), MissingColumn);
    write_file(path, "x_0,a,y\nnan,0,1\n");
    CHECK_THROWS_AS(load_csv(path), NonFiniteValue);
    std::remove(path.c_str());
}

TEST_CASE("oracle columns promote to OracleDataset and tau is recomputed") {
    std::string path = temp_file("orl_csv_oracle.csv");
    write_file(path,
               "x_0,a,y,mu0,mu1,pi1,y0,y1\n"
               "0.1,1,2.5,1,3,0.5,0.9,2.5\n"
               "0.2,0,0.8,1,3,0.4,0.8,3.1\n");
    auto loaded = load_csv(path);
    REQUIRE(std::holds_alternative<OracleDataset>(loaded));
    const OracleDataset& d = std::get<OracleDataset>(loaded);
    CHECK(d.tau[0] == 2.0);  // mu1 - mu0, no tau column present
    CHECK(d.tau[1] == 2.0);
    d.validate();
    std::remove(path.c_str());
}

TEST_CASE("generated oracle data survives a save/load round trip") {
    DgpSpec spec;
    spec.n = 50;
    spec.seed = 4;
    OracleDataset d = generate_kallus_synthetic(spec);
    std::string path = temp_file("orl_csv_roundtrip.csv");
    save_csv(d, path);
    auto loaded = load_csv(path);
    REQUIRE(std::holds_alternative<OracleDataset>(loaded));
    const OracleDataset& d2 = std::get<OracleDataset>(loaded);
    CHECK(csv_string(d) == csv_string(d2));
    std::remove(path.c_str());
}

}  // TEST_SUITE
