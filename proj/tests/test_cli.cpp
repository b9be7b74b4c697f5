#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <sstream>

#include "cli.hpp"
#include "mrp/io.hpp"

namespace fs = std::filesystem;
using mrp::io::read_file;

namespace {

const fs::path kConfigs = MRP_CONFIG_DIR;

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = mrp::cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / ("mrp_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }
    std::string path(const std::string& name) const { return (dir_ / name).string(); }
    void write(const std::string& name, const std::string& text) const { mrp::io::write_atomic(dir_ / name, text); }

    std::string simulate(const std::string& config, const std::string& out, const std::string& n = "150") {
        const auto r = run({"simulate", "--config", (kConfigs / config).string(), "--out", path(out), "--n", n});
        EXPECT_EQ(r.code, 0) << r.err;
        return path(out);
    }

    fs::path dir_;
};

}  // namespace

TEST_F(Cli, SimulateIsByteReproducible) {
    const auto a = simulate("illness_death.cfg", "a.csv");
    const auto b = simulate("illness_death.cfg", "b.csv");
    const auto r = run({"simulate", "--config", (kConfigs / "illness_death.cfg").string(), "--out", path("c.csv"),
                        "--n", "150", "--threads", "3"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(read_file(a), read_file(b));
    EXPECT_EQ(read_file(a), read_file(path("c.csv")));
    EXPECT_EQ(read_file(path("a_calendar.csv")), read_file(path("b_calendar.csv")));
    EXPECT_EQ(read_file(path("a_model.cfg")), read_file(path("b_model.cfg")));
    const auto other = run({"simulate", "--config", (kConfigs / "illness_death.cfg").string(), "--out", path("d.csv"),
                            "--n", "150", "--seed", "8"});
    EXPECT_NE(read_file(a), read_file(path("d.csv")));
}

TEST_F(Cli, ResolvedModelReproducesTheData) {
    const auto a = simulate("renewal.cfg", "a.csv", "60");
    const auto r = run({"simulate", "--config", path("a_model.cfg"), "--out", path("b.csv")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(read_file(a), read_file(path("b.csv")));
}

TEST_F(Cli, FitReportIsDeterministicAndFormIndependent) {
    const auto data = simulate("renewal.cfg", "r.csv", "200");
    for (const auto* est : {"pl", "m"}) {
        const auto a = run({"fit", "--data", data, "--estimator", est, "--bandwidth", "0.2"});
        const auto b = run({"fit", "--data", data, "--estimator", est, "--bandwidth", "0.2"});
        ASSERT_EQ(a.code, 0) << a.err;
        EXPECT_EQ(a.out, b.out);
        EXPECT_NE(a.out.find("converged = true"), std::string::npos);
        const auto c = run({"fit", "--data", path("r_calendar.csv"), "--estimator", est, "--bandwidth", "0.2",
                            "--out", path("fit.ini")});
        ASSERT_EQ(c.code, 0) << c.err;
        const auto beta = [](const std::string& text) {
            const auto at = text.find("beta_1 = ");
            return std::stod(text.substr(at + 9, text.find('\n', at) - at - 9));
        };
        EXPECT_NEAR(beta(a.out), beta(read_file(path("fit.ini"))), 1e-10);
    }
}

TEST_F(Cli, NaiveIsFlaggedAsComparator) {
    const auto data = simulate("renewal.cfg", "r.csv");
    const auto r = run({"fit", "--data", data, "--estimator", "naive"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("comparator_only = true"), std::string::npos);
    EXPECT_NE(r.out.find("comparator only"), std::string::npos);
    write("naive.ini", r.out);
    EXPECT_EQ(run({"hazard", "--data", data, "--fit", path("naive.ini"), "--out", path("h.csv")}).code, 2);
}

TEST_F(Cli, ConstantCovariateIsAnEstimationError) {
    const auto data = simulate("renewal.cfg", "r.csv");
    auto table = mrp::io::parse_csv(read_file(data), data);
    mrp::io::CsvWriter w(table.header);
    for (auto row : table.rows) {
        row.back() = "1";
        w.row(row);
    }
    write("flat.csv", w.str());
    const auto r = run({"fit", "--data", path("flat.csv")});
    EXPECT_EQ(r.code, 4);
    EXPECT_NE(r.err.find("no covariate contrast"), std::string::npos) << r.err;
}

TEST_F(Cli, ExitCodes) {
    auto cfg = read_file(kConfigs / "renewal.cfg");
    write("bad.cfg", cfg.replace(cfg.find("rate = 0.5"), 10, "rate = fast"));
    auto r = run({"simulate", "--config", path("bad.cfg"), "--out", path("x.csv")});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("rate"), std::string::npos) << r.err;
    EXPECT_FALSE(fs::exists(path("x.csv")));

    EXPECT_EQ(run({"simulate", "--out", path("x.csv")}).code, 2);
    EXPECT_EQ(run({}).code, 2);
    EXPECT_EQ(run({"frobnicate"}).code, 2);
    EXPECT_EQ(run({"fit", "--help"}).code, 0);
    EXPECT_EQ(run({"fit", "--data", path("missing.csv")}).code, 3);

    write("broken.csv", "subject_id,epoch,from_state,to_state,gap,x,z1\n1,0,S,S,-1,0.5,0\n");
    r = run({"fit", "--data", path("broken.csv")});
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("broken.csv:2"), std::string::npos) << r.err;

    const auto data = simulate("renewal.cfg", "r.csv");
    EXPECT_EQ(run({"fit", "--data", data, "--mu", "5"}).code, 2);
    write("outside.csv", "subject_id,epoch,from_state,to_state,gap,x,z1\n1,0,S,S,1,3,0\n");
    EXPECT_EQ(run({"fit", "--data", path("outside.csv")}).code, 2);  // marks outside (0, 1) need --tau
}

TEST_F(Cli, HazardGrid) {
    const auto data = simulate("illness_death.cfg", "d.csv", "400");
    auto r = run({"fit", "--data", data, "--estimator", "pl", "--bandwidth", "0.2", "--out", path("fit.ini")});
    ASSERT_EQ(r.code, 0) << r.err;
    r = run({"hazard", "--data", data, "--fit", path("fit.ini"), "--grid-v", "20", "--grid-x", "20", "--out",
             path("h.csv")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto table = mrp::io::parse_csv(read_file(path("h.csv")), "h.csv");
    EXPECT_EQ(table.header, (std::vector<std::string>{"transition", "v", "x", "A_hat", "stderr", "d_pq", "skipped"}));
    std::map<std::string, int> per;
    std::map<std::pair<std::string, std::string>, double> last;
    for (const auto& row : table.rows) {
        ++per[row[0]];
        const double x = std::stod(row[2]);
        if (x <= 0.2 || x >= 0.8) continue;  // boundary kernels can be negative
        const auto key = std::make_pair(row[0], row[2]);
        const double a = std::stod(row[3]);
        if (last.contains(key)) EXPECT_GE(a, last[key]) << row[0] << " x=" << x;
        last[key] = a;
    }
    ASSERT_EQ(per.size(), 3u);
    for (const auto& [label, rows] : per) EXPECT_EQ(rows, 400) << label;

    r = run({"hazard", "--data", data, "--fit", path("fit.ini"), "--grid-x", "0.5, 1.5", "--out", path("h2.csv")});
    EXPECT_EQ(r.code, 2);
    const auto again = run({"hazard", "--data", data, "--fit", path("fit.ini"), "--grid-v", "20", "--grid-x", "20",
                            "--out", path("h3.csv")});
    EXPECT_EQ(read_file(path("h.csv")), read_file(path("h3.csv")));
}

TEST_F(Cli, McCheckExitCode) {
    auto text = read_file(kConfigs / "coverage.cfg");
    text.replace(text.find("n = 200, 800"), 12, "n = 40");
    text.replace(text.find("replicates = 500"), 16, "replicates = 3");
    write("ok.cfg", text);
    write("strict.cfg", text + "\n[checks]\ncoverage_lo = 1.5\ncoverage_hi = 2\n");
    auto r = run({"mc", "--config", path("ok.cfg"), "--out", path("ok")});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(path("ok") + "/checks.csv"));
    r = run({"mc", "--config", path("strict.cfg"), "--out", path("strict")});
    EXPECT_EQ(r.code, 0) << r.err;
    r = run({"mc", "--config", path("strict.cfg"), "--out", path("strict"), "--check"});
    EXPECT_EQ(r.code, 5);
    r = run({"mc", "--config", path("ok.cfg"), "--out", path("t1"), "--threads", "1"});
    r = run({"mc", "--config", path("ok.cfg"), "--out", path("t2"), "--threads", "2"});
    for (const auto* f : {"cells.csv", "replicates.csv", "checks.csv", "summary.txt"}) {
        EXPECT_EQ(read_file(path("t1") + "/" + f), read_file(path("t2") + "/" + f)) << f;
    }
}
