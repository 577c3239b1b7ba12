#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "clbruno/cli.hpp"
#include "clbruno/config.hpp"
#include "clbruno/errors.hpp"
#include "clbruno/persist.hpp"

using namespace clbruno;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun cli(const std::vector<std::string>& args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    out.push_back(line);
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::vector<double> split_doubles(const std::string& line, std::size_t count) {
  std::vector<double> out;
  std::istringstream in(line);
  std::string field;
  while (out.size() < count && std::getline(in, field, ',')) {
    out.push_back(std::stod(field));
  }
  return out;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("clbruno_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    write_text(path("run.cfg"),
               "# small run\n"
               "epochs = 2\nhidden_width=8\nembedding_dim=3\ncoupling_layers=2\n"
               "pseudo_size=8\nbatch_size=32\nlearning_rate=0.01\nseed=5\n"
               "synthetic_dim=6\nsynthetic_tasks=3\nsynthetic_train_size=60\n"
               "synthetic_test_size=30\n");
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void generate() { ASSERT_EQ(cli({"generate", "--config", path("run.cfg"), "--out-dir", path("data")}).code, 0); }

  void init_model() {
    generate();
    const CliRun r = cli({"init", "--config", path("run.cfg"), "--data", path("data/task1_train.csv"),
                       "--out", path("m1.bin")});
    ASSERT_EQ(r.code, 0) << r.err;
  }

  fs::path dir_;
};

}  // namespace

TEST(Config, ParsesAllKeysAndRoundTrips) {
  std::istringstream in(
      "coupling_layers=4\nembedding_dim=8\nhidden_width=32\npseudo_size=64\nalpha1=0.5\n"
      "alpha2=2\nlearning_rate=0.01\nepochs=7\nbatch_size=16\nseed=42\nresample_pseudo=false\n"
      "standardize=0\nsynthetic_dim=10\nsynthetic_tasks=2\nsynthetic_train_size=50\n"
      "synthetic_test_size=20\nsynthetic_noise=0.25\n");
  const RunConfig cfg = parse_run_config(in, "t");
  EXPECT_EQ(cfg.coupling_layers, 4u);
  EXPECT_EQ(cfg.alpha1, 0.5);
  EXPECT_EQ(cfg.seed, 42u);
  EXPECT_FALSE(cfg.resample_pseudo);
  EXPECT_FALSE(cfg.standardize);
  EXPECT_EQ(cfg.synthetic_spec().seed, 42u);
  EXPECT_EQ(cfg.synthetic.noise_variance, 0.25);
  std::istringstream again(format_run_config(cfg));
  EXPECT_EQ(format_run_config(parse_run_config(again, "t")), format_run_config(cfg));
}

TEST(Config, Defaults) {
  const RunConfig cfg;
  EXPECT_EQ(cfg.coupling_layers, 6u);
  EXPECT_EQ(cfg.embedding_dim, 16u);
  EXPECT_EQ(cfg.pseudo_size, 128u);
  EXPECT_EQ(cfg.alpha1, 1.0);
  EXPECT_EQ(cfg.alpha2, 1.0);
  EXPECT_TRUE(cfg.resample_pseudo);
  EXPECT_EQ(cfg.synthetic.train_size, 500u);
}

TEST(Config, ErrorsNameTheKey) {
  auto message = [](const std::string& text) -> std::string {
    std::istringstream in(text);
    try {
      parse_run_config(in, "cfg");
    } catch (const ConfigError& e) {
      return e.what();
    }
    return "";
  };
  EXPECT_NE(message("epochz=3\n").find("epochz"), std::string::npos);
  EXPECT_NE(message("epochs=three\n").find("epochs"), std::string::npos);
  EXPECT_NE(message("alpha1=-1\n").find("alpha1"), std::string::npos);
  EXPECT_NE(message("batch_size=0\n").find("batch_size"), std::string::npos);
  EXPECT_NE(message("standardize=maybe\n").find("standardize"), std::string::npos);
  EXPECT_NE(message("justtext\n").find("key=value"), std::string::npos);
  EXPECT_THROW(load_run_config("/nonexistent.cfg"), DataError);
}

TEST(ExitCodes, Mapping) {
  EXPECT_EQ(exit_code_for(ConfigError("x")), 2);
  EXPECT_EQ(exit_code_for(DataError("x")), 3);
  EXPECT_EQ(exit_code_for(ChecksumError("x")), 3);
  EXPECT_EQ(exit_code_for(DivergenceError("x")), 4);
  EXPECT_EQ(exit_code_for(DimensionError("x")), 5);
  EXPECT_EQ(exit_code_for(ContractError("x")), 6);
  EXPECT_EQ(exit_code_for(UnknownConditionError("x")), 6);
  EXPECT_EQ(exit_code_for(StaleThresholdError("x")), 6);
  EXPECT_EQ(exit_code_for(LabelSpaceError("x")), 7);
  EXPECT_EQ(exit_code_for(std::runtime_error("x")), 1);
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  EXPECT_EQ(cli({"init", "--config", path("run.cfg")}).code, 2);
  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST_F(CliTest, GenerateWritesCanonicalCsv) {
  const CliRun r = cli({"generate", "--config", path("run.cfg"), "--out-dir", path("data")});
  ASSERT_EQ(r.code, 0);
  const auto out = lines(r.out);
  EXPECT_EQ(out[0], "task,split,path,examples");
  EXPECT_EQ(out.size(), 7u);
  const auto train = lines(slurp(path("data/task2_train.csv")));
  EXPECT_EQ(train.size(), 60u);
  EXPECT_EQ(std::count(train[0].begin(), train[0].end(), ','), 6);
  const std::string first = slurp(path("data/task2_train.csv"));
  generate();
  EXPECT_EQ(slurp(path("data/task2_train.csv")), first);
}

TEST_F(CliTest, FullPipeline) {
  init_model();
  const CliRun again = cli({"init", "--config", path("run.cfg"), "--data",
                         path("data/task1_train.csv"), "--out", path("m1b.bin")});
  ASSERT_EQ(again.code, 0);
  EXPECT_EQ(slurp(path("m1.bin")), slurp(path("m1b.bin")));
  EXPECT_EQ(slurp(path("m1.bin.metrics.csv")), slurp(path("m1b.bin.metrics.csv")));
  EXPECT_EQ(lines(slurp(path("m1.bin.metrics.csv")))[0], "task,epoch,total,nll,replay,functional");
  EXPECT_EQ(lines(slurp(path("m1.bin.metrics.csv"))).size(), 3u);
  EXPECT_NE(again.out.find("train_accuracy="), std::string::npos);
  EXPECT_NE(again.out.find("final_nll="), std::string::npos);

  CliRun r = cli({"learn-task", "--model", path("m1.bin"), "--data", path("data/task2_train.csv"),
               "--out", path("m2.bin")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("task=2"), std::string::npos);
  EXPECT_EQ(load_model(path("m2.bin")).task_ids(), (std::vector<TaskId>{1, 2}));

  // Task 3 in two label groups.
  {
    std::ifstream in(path("data/task3_train.csv"));
    std::ofstream early(path("t3a.csv"));
    std::ofstream late(path("t3b.csv"));
    std::string line;
    while (std::getline(in, line)) {
      (line[0] == '3' || line[0] == '4' ? late : early) << line << '\n';
    }
  }
  r = cli({"learn-task", "--model", path("m2.bin"), "--data", path("t3a.csv"), "--out",
           path("m3.bin"), "--task", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  r = cli({"learn-classes", "--model", path("m3.bin"), "--task", "3", "--data", path("t3b.csv"),
           "--out", path("m4.bin")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_model(path("m4.bin")).task(3).labels(), (std::vector<Label>{1, 2, 3, 4}));
  EXPECT_EQ(cli({"learn-classes", "--model", path("m4.bin"), "--task", "3", "--data",
                 path("t3b.csv"), "--out", path("m5.bin")})
                .code,
            6);
  EXPECT_EQ(cli({"learn-classes", "--model", path("m4.bin"), "--task", "9", "--data",
                 path("t3b.csv"), "--out", path("m5.bin")})
                .code,
            6);

  r = cli({"predict", "--model", path("m4.bin"), "--task", "3", "--input",
           path("data/task3_test.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  auto rows = lines(r.out);
  EXPECT_EQ(rows[0], "p_1,p_2,p_3,p_4,label");
  EXPECT_EQ(rows.size(), 31u);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    double s = 0.0;
    for (double p : split_doubles(rows[i], 4)) {
      s += p;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }

  r = cli({"task-id", "--model", path("m4.bin"), "--input", path("data/task1_test.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  rows = lines(r.out);
  EXPECT_EQ(rows[0], "p_task_1,p_task_2,p_task_3,task");
  EXPECT_EQ(cli({"task-id", "--model", path("m4.bin"), "--input", path("data/task1_test.csv"),
                 "--prior", "0.5,0.5,0.5"})
                .code,
            6);
  r = cli({"task-id", "--model", path("m4.bin"), "--input", path("data/task1_test.csv"),
           "--prior", "1,0,0"});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(lines(r.out)[1], "1.000000000,0.000000000,0.000000000,1");

  EXPECT_EQ(cli({"predict", "--model", path("m4.bin"), "--task", "auto", "--input",
                 path("data/task1_test.csv")})
                .code,
            7);

  r = cli({"outlier", "--model", path("m4.bin"), "--task", "1", "--alpha", "0.1", "--input",
           path("data/task1_test.csv"), "--n-calib", "100"});
  ASSERT_EQ(r.code, 0) << r.err;
  rows = lines(r.out);
  EXPECT_EQ(rows[0], "outlier,log_density,threshold");
  EXPECT_EQ(rows.size(), 31u);
  EXPECT_EQ(cli({"outlier", "--model", path("m4.bin"), "--task", "1", "--alpha", "1.5",
                 "--input", path("data/task1_test.csv")})
                .code,
            2);
}

TEST_F(CliTest, ErrorExitCodes) {
  init_model();
  EXPECT_EQ(cli({"init", "--config", path("missing.cfg"), "--data", path("data/task1_train.csv"),
                 "--out", path("x.bin")})
                .code,
            3);
  write_text(path("bad.cfg"), "epochz=3\n");
  const CliRun bad = cli({"init", "--config", path("bad.cfg"), "--data",
                       path("data/task1_train.csv"), "--out", path("x.bin")});
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("epochz"), std::string::npos);
  const CliRun missing = cli({"learn-task", "--model", path("m1.bin"), "--data", path("nope.csv"),
                           "--out", path("x.bin")});
  EXPECT_EQ(missing.code, 3);
  EXPECT_NE(missing.err.find("nope.csv"), std::string::npos);

  write_text(path("wide.csv"), "1,1,2,3,4,5,6,7\n2,1,2,3,4,5,6,7\n");
  EXPECT_EQ(cli({"learn-task", "--model", path("m1.bin"), "--data", path("wide.csv"), "--out",
                 path("x.bin")})
                .code,
            5);
  EXPECT_EQ(cli({"predict", "--model", path("m1.bin"), "--task", "1", "--input", path("wide.csv")})
                .code,
            5);

  write_text(path("huge.csv"), "1,1e300,1e300,1e300,1e300,1e300,1e300\n2,-1e300,1,1,1,1,1\n");
  EXPECT_EQ(cli({"learn-task", "--model", path("m1.bin"), "--data", path("huge.csv"), "--out",
                 path("x.bin")})
                .code,
            4);

  std::string bytes = slurp(path("m1.bin"));
  bytes[bytes.size() / 2] ^= 0x40;
  write_text(path("corrupt.bin"), bytes);
  EXPECT_EQ(cli({"predict", "--model", path("corrupt.bin"), "--task", "1", "--input",
                 path("data/task1_test.csv")})
                .code,
            3);
  EXPECT_EQ(cli({"learn-task", "--model", path("m1.bin"), "--task", "1", "--data",
                 path("data/task2_train.csv"), "--out", path("x.bin")})
                .code,
            6);
}

TEST_F(CliTest, SingleTaskPosteriorsAreOne) {
  init_model();
  write_text(path("one.csv"), "2,0.5,0.5,0.5,0.5,0.5,0.5\n");
  CliRun r = cli({"learn-task", "--model", path("m1.bin"), "--data", path("one.csv"), "--out",
               path("single.bin")});
  ASSERT_EQ(r.code, 0) << r.err;
  r = cli({"predict", "--model", path("single.bin"), "--task", "2", "--input",
           path("data/task1_test.csv")});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(lines(r.out)[0], "p_2,label");
  EXPECT_EQ(lines(r.out)[1], "1.000000000,2");
  r = cli({"task-id", "--model", path("m1.bin"), "--input", path("data/task1_test.csv")});
  EXPECT_EQ(lines(r.out)[1], "1.000000000,1");
}

TEST_F(CliTest, BenchmarkWritesCurves) {
  const CliRun r = cli({"benchmark", "--config", path("run.cfg"), "--out-dir", path("bench")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto forgetting = lines(slurp(path("bench/forgetting.csv")));
  EXPECT_EQ(forgetting[0], "step,task,accuracy,task_id_accuracy");
  // Three tasks give four steps: 1, 2, 3 (first labels), 3 (last two labels).
  EXPECT_EQ(forgetting.size(), 1u + 1 + 2 + 3 + 3);
  EXPECT_EQ(lines(slurp(path("bench/metrics.csv")))[0], "step,task,epoch,total,nll,replay,functional");
  EXPECT_EQ(lines(slurp(path("bench/metrics.csv"))).size(), 1u + 4 * 2);
  EXPECT_EQ(lines(r.out)[0], "steps,min_accuracy,min_task_id_accuracy,max_forgetting");
  EXPECT_EQ(slurp(path("bench/summary.csv")), r.out);
}
