#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#ifndef TFM_CLI_PATH
#error "TFM_CLI_PATH must point at the tfm executable"
#endif

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
    static const fs::path dir = [] {
        const auto d = fs::temp_directory_path() / "tfm_test_cli";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

struct CliRun {
    int code = -1;
    std::string out;
};

CliRun tfm(const std::string& args) {
    const auto out = workdir() / "stdout.txt";
    const std::string cmd = std::string("\"") + TFM_CLI_PATH + "\" " + args + " > \"" + out.string() + "\" 2> \"" +
                            (workdir() / "stderr.txt").string() + "\"";
    const int status = std::system(cmd.c_str());
    std::ifstream f(out);
    std::stringstream ss;
    ss << f.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string write(const std::string& name, const std::string& text) {
    const auto p = workdir() / name;
    std::ofstream(p) << text;
    return p.string();
}

std::string path(const std::string& name) { return (workdir() / name).string(); }

const char* kSmall = R"({
  "dataset": {"kind": "MOONS", "n_points": 1000},
  "model": {"hidden": [16, 16], "time_dim": 8},
  "optimizer": {"steps": 20, "batch": 32, "seed": 2},
  "eval": {"n_samples": 100, "n_projections": 16},
  "log_every": 10
})";

} // namespace

TEST(Cli, TrainSampleEvalPlot) {
    const std::string cfg = write("small.json", kSmall);
    ASSERT_EQ(tfm("train --config " + cfg + " --out " + path("run")).code, 0);
    EXPECT_TRUE(fs::exists(path("run/model.tfm")));
    EXPECT_TRUE(fs::exists(path("run/manifest.json")));

    const CliRun s = tfm("sample --ckpt " + path("run/model.tfm") + " --out " + path("samples") + " --steps 2 --n 17");
    ASSERT_EQ(s.code, 0);
    EXPECT_NE(s.out.find("\"model_calls\": 2"), std::string::npos);
    EXPECT_TRUE(fs::exists(path("samples/panel.svg")));

    const CliRun e = tfm("eval --ckpt " + path("run/model.tfm") + " --metric sliced_w2 --steps 1,2 --n 100");
    ASSERT_EQ(e.code, 0);
    EXPECT_NE(e.out.find("sliced_w2@steps=2"), std::string::npos);

    EXPECT_EQ(tfm("plot --ckpt " + path("run/model.tfm") + " --out " + path("plot") + " --n 10").code, 0);
    EXPECT_TRUE(fs::exists(path("plot/panel.svg")));
}

TEST(Cli, CheckSuitesPassAndReportJson) {
    for (const char* suite : {"JVP", "GRAD", "SAMPLER"}) {
        const CliRun r = tfm(std::string("check --suite ") + suite);
        EXPECT_EQ(r.code, 0) << suite;
        EXPECT_NE(r.out.find("\"passed\":true"), std::string::npos) << r.out;
    }
}

TEST(Cli, ExitCodes) {
    EXPECT_EQ(tfm("check --suite NOPE").code, 2);
    EXPECT_EQ(tfm("train --config " + write("bad.json", R"({"optimizer": {"stepz": 1}})") + " --out " + path("x"))
                  .code,
              2);
    EXPECT_EQ(tfm("train --config " + path("missing.json") + " --out " + path("x")).code, 4);
    EXPECT_EQ(tfm("sample --ckpt " + write("junk.tfm", "not a checkpoint") + " --out " + path("y")).code, 4);
    EXPECT_EQ(tfm("frobnicate").code, 2);
    EXPECT_EQ(tfm("").code, 2);
    EXPECT_EQ(tfm("--help").code, 0);
    const std::string diverge = write("diverge.json", R"({
      "dataset": {"kind": "GAUSSIAN", "gaussian_mean": [1e4, 1e4]},
      "loss": {"p": 0},
      "model": {"hidden": [8]},
      "optimizer": {"steps": 5, "batch": 8}
    })");
    EXPECT_EQ(tfm("train --config " + diverge + " --out " + path("div")).code, 3);
}

TEST(Cli, ThreadCapIsValidated) {
    EXPECT_EQ(tfm("check --suite SAMPLER").code, 0);
    ASSERT_EQ(setenv("TFM_THREADS", "zero", 1), 0);
    EXPECT_EQ(tfm("check --suite SAMPLER").code, 2);
    ASSERT_EQ(setenv("TFM_THREADS", "1", 1), 0);
    EXPECT_EQ(tfm("check --suite SAMPLER").code, 0);
    unsetenv("TFM_THREADS");
}
