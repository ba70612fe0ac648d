/*
 * Copyright 2026 The comfed Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace
{

namespace fs = std::filesystem;

const char* const quadratic_cfg = R"([experiment]
seed = 1
rounds = 60

[algorithm]
name = comfedl
eta = 0.05
gamma = 0.5
b = 10
b1 = 10

[task]
model = quadratic
objective = dro
clients = 4
heterogeneity = 0.3
noise = 0.2
)";

struct Result
{
    int code = -1;
    std::string out;
};

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

class Cli : public ::testing::Test
{
  protected:
    void SetUp() override
    {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / (std::string("comfed_cli_") + info->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        write("q.cfg", quadratic_cfg);
    }
    void TearDown() override { fs::remove_all(dir_); }

    fs::path path(const std::string& name) const { return dir_ / name; }

    void write(const std::string& name, const std::string& text) const
    {
        std::ofstream(path(name), std::ios::binary) << text;
    }

    // Runs the CLI inside the test directory; stdout is captured, stderr dropped.
    Result run(const std::string& args) const
    {
        const fs::path out = path("stdout.txt");
        const std::string cmd = "cd '" + dir_.string() + "' && COMFED_LOG_LEVEL=error '"
                                + std::string(COMFED_CLI) + "' " + args + " > '" + out.string()
                                + "' 2>/dev/null";
        const int status = std::system(cmd.c_str());
        Result r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = slurp(out);
        return r;
    }

    std::size_t lines(const std::string& name) const
    {
        std::ifstream in(path(name));
        std::size_t n = 0;
        for (std::string line; std::getline(in, line);) ++n;
        return n;
    }

  private:
    fs::path dir_;
};

TEST_F(Cli, RunWritesOneRowPerRound)
{
    const auto r = run("run --config q.cfg --out m.csv");
    ASSERT_EQ(r.code, 0);
    EXPECT_EQ(lines("m.csv"), 61U);
    EXPECT_TRUE(fs::exists(path("m.ckpt")));
    EXPECT_NE(r.out.find("[algorithm]"), std::string::npos);
}

TEST_F(Cli, SetOverridesAppearInEcho)
{
    const auto r = run("run --config q.cfg --out m.csv --set eta=0.02 --set rounds=5");
    ASSERT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("eta = 0.02"), std::string::npos) << r.out;
    EXPECT_EQ(lines("m.csv"), 6U);
}

TEST_F(Cli, RerunsAreByteIdentical)
{
    ASSERT_EQ(run("run --config q.cfg --out a.csv").code, 0);
    ASSERT_EQ(run("run --config q.cfg --out b.csv").code, 0);
    EXPECT_EQ(slurp(path("a.csv")), slurp(path("b.csv")));
    EXPECT_EQ(slurp(path("a.ckpt")), slurp(path("b.ckpt")));
}

TEST_F(Cli, JsonlOutput)
{
    ASSERT_EQ(run("run --config q.cfg --out m.jsonl --set rounds=3").code, 0);
    EXPECT_EQ(lines("m.jsonl"), 3U);
}

TEST_F(Cli, BadConfigExitsOne)
{
    write("bad.cfg", "[algorithm]\ntau = 0\n");
    EXPECT_EQ(run("run --config bad.cfg --out m.csv").code, 1);
    write("unknown.cfg", "[algorithm]\nlearning_rate = 1\n");
    EXPECT_EQ(run("run --config unknown.cfg --out m.csv").code, 1);
    EXPECT_EQ(run("run --config missing.cfg").code, 1);
    EXPECT_EQ(run("run --config q.cfg --set m=9").code, 1);
    EXPECT_EQ(run("no-such-command").code, 1);
}

TEST_F(Cli, DivergenceExitsTwo)
{
    const auto r = run("run --config q.cfg --out m.csv --set eta=50 --set gamma=0.05");
    EXPECT_EQ(r.code, 2);
    EXPECT_TRUE(fs::exists(path("m.csv")));
}

TEST_F(Cli, VerifyLemma1Passes)
{
    const auto r = run("verify-lemma1 --n 8 --gamma 0.2 --trials 200");
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("\"passed\": true"), std::string::npos) << r.out;
}

TEST_F(Cli, GradCheckPassesAndFails)
{
    EXPECT_EQ(run("grad-check --task quadratic-dro").code, 0);
    EXPECT_EQ(run("grad-check --task logistic-maml").code, 0);
    EXPECT_EQ(run("grad-check --config q.cfg").code, 0);
    EXPECT_EQ(run("grad-check --task quadratic-dro --tol 0").code, 3);
    EXPECT_EQ(run("grad-check --task nonsense").code, 1);
}

TEST_F(Cli, DriftCheckOnRunOutput)
{
    ASSERT_EQ(run("run --config q.cfg --out m.csv").code, 0);
    EXPECT_EQ(run("drift-check --metrics m.csv").code, 0);
    EXPECT_EQ(run("drift-check --config q.cfg").code, 0);
}

TEST_F(Cli, RateFitOnMetrics)
{
    // 100 rounds of tau = 5 span T = 5..500, two decades.
    ASSERT_EQ(run("run --config q.cfg --out m.csv --set rounds=100").code, 0);
    const auto r = run("rate-fit --metrics m.csv --tau 5");
    EXPECT_TRUE(r.code == 0 || r.code == 3) << r.code;
    EXPECT_NE(r.out.find("\"slope\""), std::string::npos) << r.out;
    ASSERT_EQ(run("run --config q.cfg --out short.csv --set rounds=10").code, 0);
    EXPECT_EQ(run("rate-fit --metrics short.csv --tau 5").code, 1);
}

// exp(f / gamma) / gamma grows quickly as gamma shrinks, so the step size is
// small enough for gamma = 0.1.
TEST_F(Cli, GammaSweepWritesFilesAndSummary)
{
    const auto r = run("sweep --config q.cfg --param gamma --values 0.1,0.2,2,5 --out-dir sw "
                       "--set rounds=10 --set eta=0.0005");
    ASSERT_EQ(r.code, 0);
    for (const char* v : {"0.1", "0.2", "2", "5"})
    {
        EXPECT_EQ(lines("sw/gamma_" + std::string(v) + ".csv"), 11U) << v;
    }
    EXPECT_EQ(lines("sw/summary.csv"), 5U);
}

// With a fixed step size, more local steps per round reach the loss level
// in fewer rounds.
TEST_F(Cli, TauSweepReachesThresholdInFewerRounds)
{
    const auto r = run("sweep --config q.cfg --param tau --values 1,5,10 --out-dir sw "
                       "--metric mean_loss --threshold 0.19");
    ASSERT_EQ(r.code, 0);
    std::ifstream in(path("sw/summary.csv"));
    std::string line;
    std::getline(in, line);
    std::vector<int> rounds;
    while (std::getline(in, line))
    {
        std::stringstream cells(line);
        std::string cell;
        for (int k = 0; k < 4; ++k) std::getline(cells, cell, ',');
        ASSERT_FALSE(cell.empty()) << line;
        rounds.push_back(std::stoi(cell));
    }
    ASSERT_EQ(rounds.size(), 3U);
    EXPECT_GT(rounds[0], rounds[1]);
    EXPECT_GT(rounds[1], rounds[2]);
}

TEST_F(Cli, SingleValueSweepMatchesRun)
{
    ASSERT_EQ(run("run --config q.cfg --out m.csv --set tau=3").code, 0);
    ASSERT_EQ(run("sweep --config q.cfg --param tau --values 3 --out-dir sw").code, 0);
    EXPECT_EQ(slurp(path("m.csv")), slurp(path("sw/tau_3.csv")));
}

TEST_F(Cli, ParallelSweepMatchesSequential)
{
    ASSERT_EQ(run("sweep --config q.cfg --param gamma --values 0.3,1 --out-dir a").code, 0);
    ASSERT_EQ(run("sweep --config q.cfg --param gamma --values 0.3,1 --out-dir b --parallel").code, 0);
    EXPECT_EQ(slurp(path("a/gamma_0.3.csv")), slurp(path("b/gamma_0.3.csv")));
    EXPECT_EQ(slurp(path("a/gamma_1.csv")), slurp(path("b/gamma_1.csv")));
}

TEST_F(Cli, HelpListsEveryFlag)
{
    const auto run_help = run("run --help");
    EXPECT_EQ(run_help.code, 0);
    for (const char* flag : {"--config", "--set", "--seed", "--out", "--checkpoint", "--wall-clock"})
    {
        EXPECT_NE(run_help.out.find(flag), std::string::npos) << flag;
    }
    const auto sweep_help = run("sweep --help");
    for (const char* flag : {"--param", "--values", "--out-dir", "--metric", "--threshold", "--parallel"})
    {
        EXPECT_NE(sweep_help.out.find(flag), std::string::npos) << flag;
    }
    const auto top = run("--help");
    for (const char* cmd : {"run", "verify-lemma1", "grad-check", "rate-fit", "drift-check", "sweep"})
    {
        EXPECT_NE(top.out.find(cmd), std::string::npos) << cmd;
    }
}

}  // namespace
