#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "cli.hpp"
#include "swcalib/config.hpp"
#include "swcalib/container.hpp"
#include "swcalib/errors.hpp"
#include "swcalib/model_io.hpp"
#include "swcalib/report.hpp"

namespace swcalib {
namespace {

namespace fs = std::filesystem;

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "swcalib");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

class Cli : public ::testing::Test {
   protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / ("swcalib_test_cli_" +
                                            std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    std::string write_config(const Json& extra = Json::object()) const {
        Json j = Json::parse(R"({
          "seed": 3,
          "model": {"vocab_size": 64, "d_model": 16, "n_heads": 2, "n_blocks": 2, "ff_mult": 2, "max_seq_len": 16},
          "quant": "W2A16g8",
          "loss": {"sw_w": 0.1, "n_proj": 16},
          "calibration": {"epochs": 2, "batch_size": 4, "seq_len": 16, "n_sequences": 8},
          "corpus": {"calibration": {"name": "mixed", "kind": "mixed", "tokens": 512, "seed": 1},
                     "eval": [{"name": "uniform", "kind": "uniform", "tokens": 512, "seed": 2},
                              {"name": "mixed", "kind": "mixed", "tokens": 512, "seed": 3}],
                     "eval_max_windows": 16},
          "sw_probe_projections": 32
        })");
        j["output_dir"] = path("run");
        j.merge_patch(extra);
        const std::string p = path("config.json");
        std::ofstream(p) << j.dump(2);
        return p;
    }

    fs::path dir_;
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

TEST(CliExitCodes, DistinctPerErrorClass) {
    const std::vector<int> codes{cli::exit_code_for(FormatError(FormatErrc::kBadMagic, "")),
                                 cli::exit_code_for(IoError("")),
                                 cli::exit_code_for(ConfigError("")),
                                 cli::exit_code_for(UsageError("")),
                                 cli::exit_code_for(NonFiniteError("op", "forward")),
                                 cli::exit_code_for(DimensionError("")),
                                 cli::exit_code_for(std::runtime_error(""))};
    EXPECT_EQ(std::set<int>(codes.begin(), codes.end()).size(), codes.size());
    for (int c : codes) EXPECT_NE(c, 0);
    EXPECT_EQ(cli::exit_code_for(DomainError("")), cli::exit_code_for(DimensionError("")));
}

TEST_F(Cli, UsageErrors) {
    EXPECT_EQ(run_cli({}).code, cli::kUsage);
    EXPECT_EQ(run_cli({"frobnicate"}).code, cli::kUsage);
    EXPECT_EQ(run_cli({"gen-corpus"}).code, cli::kUsage);
    EXPECT_EQ(run_cli({"gen-corpus", "--out", path("c"), "--tokens", "x"}).code, cli::kUsage);
    EXPECT_EQ(run_cli({"gen-corpus", "--out", path("c"), "--tokens", "0"}).code, cli::kUsage);
    EXPECT_EQ(run_cli({"--help"}).code, cli::kOk);
}

TEST_F(Cli, GenCorpusIsDeterministic) {
    ASSERT_EQ(run_cli({"gen-corpus", "--vocab", "256", "--tokens", "1000", "--kind", "mixed", "--seed", "5", "--out", path("a.swc")}).code, 0);
    ASSERT_EQ(run_cli({"gen-corpus", "--vocab", "256", "--tokens", "1000", "--kind", "mixed", "--seed", "5", "--out", path("b.swc")}).code, 0);
    EXPECT_EQ(slurp(path("a.swc")), slurp(path("b.swc")));
    EXPECT_EQ(run_cli({"gen-corpus", "--kind", "zipf", "--out", path("c.swc")}).code, cli::kConfig);
    std::ofstream(path("file")) << "x";
    EXPECT_EQ(run_cli({"gen-corpus", "--out", path("file") + "/c.swc"}).code, cli::kIo);
}

TEST_F(Cli, InitModelAndEvalMaxEntropyBaseline) {
    ASSERT_EQ(run_cli({"init-model", "--seed", "1", "--out", path("m.swq")}).code, 0);
    ASSERT_EQ(run_cli({"gen-corpus", "--vocab", "256", "--tokens", "16384", "--seed", "9", "--out", path("u.swc")}).code, 0);
    const auto r = run_cli({"eval", "--model", path("m.swq"), "--corpus", path("u.swc")});
    ASSERT_EQ(r.code, 0) << r.err;
    const Json j = Json::parse(r.out);
    const double ppl = j["perplexity"][0]["full_precision"].get<double>();
    EXPECT_NEAR(ppl / 256.0, 1.0, 0.05);
    EXPECT_TRUE(j["perplexity"][0]["quantized"].is_null());
    EXPECT_TRUE(j["quant_tag"].is_null());
    const auto again = run_cli({"eval", "--model", path("m.swq"), "--corpus", path("u.swc")});
    EXPECT_EQ(reproducible_part(Json::parse(again.out)), reproducible_part(j));

    EXPECT_EQ(run_cli({"eval", "--model", path("m.swq"), "--corpus", path("u.swc"), "--quantized"}).code, cli::kUsage);
    EXPECT_EQ(run_cli({"eval", "--model", path("nope.swq"), "--corpus", path("u.swc")}).code, cli::kIo);
    EXPECT_EQ(run_cli({"init-model", "--d-model", "30", "--heads", "4", "--out", path("bad.swq")}).code, cli::kConfig);

    std::string bytes = slurp(path("m.swq"));
    bytes[0] = 'Z';
    std::ofstream(path("m.swq"), std::ios::binary) << bytes;
    EXPECT_EQ(run_cli({"eval", "--model", path("m.swq"), "--corpus", path("u.swc")}).code, cli::kFormat);
}

TEST_F(Cli, CalibrateWritesArtifactsAndReproduces) {
    const std::string cfg = write_config();
    const auto r = run_cli({"calibrate", "--config", cfg});
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* f : {"model.swq", "model.json", "calibration_report.json", "trajectory.csv", "metrics.json", "config.json"}) {
        EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
    }
    const Json metrics = Json::parse(slurp(dir_ / "run" / "metrics.json"));
    EXPECT_EQ(metrics["quant_tag"], "W2A16g8");
    EXPECT_EQ(metrics["perplexity"].size(), 2u);
    EXPECT_TRUE(metrics["final_block"]["sw_distance"].is_number());
    const Json report = Json::parse(slurp(dir_ / "run" / "calibration_report.json"));
    EXPECT_EQ(report["blocks"][1]["trajectory"].size(), 4u);
    EXPECT_TRUE(report["final_params"].contains("block1.fc2.lwc.gamma_raw"));

    // The saved artifact evaluates with its quantizers.
    const auto ev = run_cli({"eval", "--model", (dir_ / "run" / "model.swq").string(), "--corpus", path("none.swc"), "--quantized", "--seq", "16"});
    EXPECT_EQ(ev.code, cli::kIo);
    ASSERT_EQ(run_cli({"gen-corpus", "--vocab", "64", "--tokens", "512", "--seed", "2", "--out", path("u.swc")}).code, 0);
    const auto ev2 = run_cli({"eval", "--model", (dir_ / "run" / "model.swq").string(), "--corpus", path("u.swc"),
                              "--quantized", "--seq", "16", "--batch", "4", "--max-windows", "16", "--n-proj", "32", "--seed", "3"});
    ASSERT_EQ(ev2.code, 0) << ev2.err;
    const Json ej = Json::parse(ev2.out);
    EXPECT_EQ(ej["perplexity"][0]["quantized"], metrics["perplexity"][0]["quantized"]);

    const auto r2 = run_cli({"calibrate", "--config", cfg, "--output-dir", path("run2")});
    ASSERT_EQ(r2.code, 0);
    EXPECT_EQ(reproducible_part(Json::parse(slurp(dir_ / "run2" / "metrics.json"))), reproducible_part(metrics));
    EXPECT_EQ(slurp(dir_ / "run2" / "model.swq"), slurp(dir_ / "run" / "model.swq"));
    EXPECT_EQ(slurp(dir_ / "run2" / "trajectory.csv"), slurp(dir_ / "run" / "trajectory.csv"));
}

TEST_F(Cli, CalibrateErrorPaths) {
    EXPECT_EQ(run_cli({"calibrate", "--config", path("missing.json")}).code, cli::kIo);
    std::ofstream(path("bad.json")) << "{ not json";
    EXPECT_EQ(run_cli({"calibrate", "--config", path("bad.json")}).code, cli::kConfig);
    EXPECT_EQ(run_cli({"calibrate", "--config", write_config({{"bogus", 1}})}).code, cli::kConfig);
    const Json missing_corpus = {{"corpus", {{"calibration", {{"name", "c"}, {"kind", "mixed"}, {"path", path("gone.swc")}}}}}};
    EXPECT_EQ(run_cli({"calibrate", "--config", write_config(missing_corpus)}).code, cli::kIo);

    const auto r = run_cli({"calibrate", "--config", write_config({{"quant", {{"tag", "W2A16g8"}, {"let", true}}}, {"calibration", {{"let_lr", 1e300}}}})});
    EXPECT_EQ(r.code, cli::kCalibrationFailed);
    EXPECT_NE(r.err.find("block 0"), std::string::npos) << r.err;
    const Json metrics = Json::parse(slurp(dir_ / "run" / "metrics.json"));
    EXPECT_TRUE(metrics["perplexity"][0]["quantized"].is_null());
    EXPECT_TRUE(metrics["perplexity"][0]["failure_reason"].is_string());
    EXPECT_EQ(metrics["blocks"][0]["status"], "failed");
    EXPECT_EQ(metrics["blocks"][1]["status"], "skipped");
    const Json report = Json::parse(slurp(dir_ / "run" / "calibration_report.json"));
    EXPECT_EQ(report["failed_block"], 0);
    EXPECT_TRUE(report["blocks"][0]["failed_step"].is_number());
}

TEST_F(Cli, SwDistance) {
    WeightContainer a, b, c;
    a.add("x", Tensor({4, 2}, {0, 0, 1, 1, 2, 2, 3, 3}));
    b.add("x", Tensor({4, 2}, {1, 1, 2, 2, 3, 3, 4, 4}));
    c.add("x", Tensor({4, 3}, std::vector<double>(12, 0.0)));
    save_container(path("a.swq"), a);
    save_container(path("b.swq"), b);
    save_container(path("c.swq"), c);
    const auto r = run_cli({"sw-distance", "--a", path("a.swq"), "--b", path("a.swq"), "--n-proj", "8", "--seed", "1"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "0");
    const auto s = run_cli({"sw-distance", "--a", path("a.swq"), "--b", path("b.swq"), "--n-proj", "64"});
    ASSERT_EQ(s.code, 0);
    const double value = std::stod(s.out.substr(0, s.out.find('\n')));
    const Json j = Json::parse(s.out.substr(s.out.find('\n') + 1));
    EXPECT_EQ(j["sw_distance"].get<double>(), value);
    EXPECT_GT(j["std_error"].get<double>(), 0.0);
    EXPECT_GT(value, 0.0);
    EXPECT_LE(value, std::sqrt(2.0) + 1e-12);
    EXPECT_EQ(run_cli({"sw-distance", "--a", path("a.swq"), "--b", path("c.swq")}).code, cli::kDimension);
    EXPECT_EQ(run_cli({"sw-distance", "--a", path("a.swq"), "--b", path("none.swq")}).code, cli::kIo);
}

TEST_F(Cli, Gradcheck) {
    const auto r = run_cli({"gradcheck", "--op", "matmul", "--trials", "2"});
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("PASS"), std::string::npos);
    EXPECT_EQ(run_cli({"gradcheck", "--op", "nonsense"}).code, cli::kUsage);
    const auto failing = run_cli({"gradcheck", "--op", "sliced_wasserstein_nproj16", "--trials", "2", "--tol", "0"});
    EXPECT_EQ(failing.code, cli::kGradcheckFailed);
    EXPECT_NE(run_cli({"gradcheck", "--list"}).out.find("kl_loss"), std::string::npos);
}

TEST_F(Cli, SweepEmitsOneRowPerValue) {
    const std::string cfg = write_config({{"calibration", {{"epochs", 1}}}});
    const auto r = run_cli({"sweep", "--config", cfg, "--axis", "sw_w", "--values", "0,0.5", "--out", path("s.csv")});
    ASSERT_EQ(r.code, 0) << r.err;
    const std::string csv = slurp(path("s.csv"));
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "value,ppl_uniform,ppl_mixed,sw_distance");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
    EXPECT_EQ(run_cli({"sweep", "--config", cfg, "--axis", "lr", "--values", "1"}).code, cli::kUsage);
    EXPECT_EQ(run_cli({"sweep", "--config", cfg, "--axis", "n_proj", "--values", "abc"}).code, cli::kUsage);
}

}  // namespace
}  // namespace swcalib
