#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = -1;
    std::string out;
    std::string err;
};

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / ("scot-cli-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    static std::string slurp(const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    Outcome run(const std::string& args) const {
        const auto out = path("stdout.txt");
        const auto err = path("stderr.txt");
        const std::string cmd = std::string(SCOT_CLI) + " " + args + " >" + out + " 2>" + err;
        const int status = std::system(cmd.c_str());
        return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
    }

    void write(const std::string& name, const std::string& text) const { std::ofstream(path(name)) << text; }

    fs::path dir_;
};

std::string digest_of(const std::string& out) {
    const auto at = out.find("digest sha256:");
    return at == std::string::npos ? std::string() : out.substr(at, 14 + 64);
}

}  // namespace

TEST_F(Cli, GenScenesDigest) {
    const auto a = run("gen-scenes --seed 1 --count 10 --out " + path("a"));
    const auto b = run("gen-scenes --seed 1 --count 10 --out " + path("b"));
    const auto c = run("gen-scenes --seed 1 --count 10 --canvas 2048x2048 --out " + path("c"));
    ASSERT_EQ(a.code, 0) << a.err;
    EXPECT_EQ(std::distance(fs::directory_iterator(path("a")), fs::directory_iterator()), 10);
    EXPECT_FALSE(digest_of(a.out).empty());
    EXPECT_EQ(digest_of(a.out), digest_of(b.out));
    EXPECT_NE(digest_of(a.out), digest_of(c.out));

    const auto empty = run("gen-scenes --count 0 --out " + path("e"));
    ASSERT_EQ(empty.code, 0);
    EXPECT_EQ(digest_of(empty.out), "digest sha256:e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");

    EXPECT_EQ(run("gen-scenes --canvas nope --out " + path("x")).code, 1);
    EXPECT_EQ(run("gen-scenes").code, 1);
}

TEST_F(Cli, RolloutWithTape) {
    ASSERT_EQ(run("gen-scenes --seed 2 --count 1 --out " + path("s")).code, 0);
    const auto scene = path("s/scene-0000.json");
    const auto doc = nlohmann::json::parse(slurp(scene));
    const auto& task = doc["tasks"][0];
    nlohmann::json target;
    for (const auto& r : doc["scene"]["regions"]) {
        if (r["id"] == task["target_region"]) target = r;
    }
    const auto b = target["bbox"];
    const std::string call = "<think>zoom</think><tool_call>{\"task_type\": \"vqa\", \"prompt\": " +
                             nlohmann::json(task["question"]).dump() + ", \"bbox\": " + b.dump() + "}</tool_call>";
    write("tape.json", nlohmann::json::array({call, "<answer>" + task["ground_truth"].get<std::string>() + "</answer>"}).dump());

    const auto r = run("rollout --task " + scene + " --tape " + path("tape.json") + " --store " + path("store.jsonl"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("total 2\n"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("MASKED"), std::string::npos);

    const auto listed = run("inspect --store " + path("store.jsonl"));
    ASSERT_EQ(listed.code, 0);
    EXPECT_NE(listed.out.find(task["ground_truth"].get<std::string>()), std::string::npos);
    const auto id = listed.out.substr(0, listed.out.find('\t'));
    const auto shown = run("inspect --store " + path("store.jsonl") + " --id '" + id + "'");
    ASSERT_EQ(shown.code, 0);
    EXPECT_NE(shown.out.find("final answer: " + task["ground_truth"].get<std::string>()), std::string::npos);
    EXPECT_EQ(run("inspect --store " + path("store.jsonl") + " --id nope").code, 1);

    // Tape runs out: backend failure.
    write("short.json", nlohmann::json::array({call}).dump());
    EXPECT_EQ(run("rollout --task " + scene + " --tape " + path("short.json")).code, 2);
}

TEST_F(Cli, RolloutErrors) {
    write("bad.json", "{not json");
    EXPECT_EQ(run("rollout --task " + path("bad.json")).code, 1);
    EXPECT_EQ(run("rollout").code, 1);
    ASSERT_EQ(run("gen-scenes --count 1 --out " + path("s")).code, 0);
    const auto remote = run("rollout --task " + path("s/scene-0000.json") +
                            " --backend remote --endpoint http://127.0.0.1:1/v1/chat/completions --config " +
                            path("fast.json"));
    // Missing config file is a usage error.
    EXPECT_EQ(remote.code, 1);
    write("fast.json", R"({"remote": {"retry_attempts": 1, "timeout_ms": 500}})");
    const auto down = run("rollout --task " + path("s/scene-0000.json") +
                          " --backend remote --endpoint http://127.0.0.1:1/v1/chat/completions --config " +
                          path("fast.json"));
    EXPECT_EQ(down.code, 2);
    EXPECT_NE(down.err.find("RemoteUnavailable"), std::string::npos);
    write("leaky.json", R"({"remote": {"token": "abc"}})");
    EXPECT_EQ(run("rollout --task " + path("s/scene-0000.json") + " --config " + path("leaky.json")).code, 1);
}

TEST_F(Cli, EvalPolicies) {
    ASSERT_EQ(run("gen-scenes --seed 4 --count 50 --out " + path("s")).code, 0);
    const auto oracle = run("eval --scenes " + path("s") + " --policy oracle");
    ASSERT_EQ(oracle.code, 0) << oracle.err;
    EXPECT_NE(oracle.out.find("accuracy 1.000000"), std::string::npos) << oracle.out;
    const auto guess = run("eval --scenes " + path("s") + " --policy guess");
    ASSERT_EQ(guess.code, 0);
    EXPECT_EQ(guess.out.find("accuracy 1.000000"), std::string::npos);

    fs::create_directories(path("empty"));
    const auto empty = run("eval --scenes " + path("empty"));
    EXPECT_EQ(empty.code, 0);
    EXPECT_NE(empty.out.find("tasks 0"), std::string::npos);
    EXPECT_NE(empty.err.find("warning"), std::string::npos);
}

TEST_F(Cli, TrainToyIsReproducible) {
    const std::string args = " --iterations 5 --group-size 4 --tasks-per-iteration 2 --quiet --checkpoint ";
    ASSERT_EQ(run("train-toy --out " + path("a.csv") + args + path("a.ckpt")).code, 0);
    ASSERT_EQ(run("train-toy --out " + path("b.csv") + args + path("b.ckpt")).code, 0);
    EXPECT_EQ(slurp(path("a.csv")), slurp(path("b.csv")));
    EXPECT_EQ(slurp(path("a.ckpt")), slurp(path("b.ckpt")));
    EXPECT_EQ(slurp(path("a.csv")).rfind("# config: ", 0), 0u);

    ASSERT_EQ(run("gen-scenes --count 3 --out " + path("s")).code, 0);
    const auto eval = run("eval --scenes " + path("s") + " --policy toy --checkpoint " + path("a.ckpt"));
    EXPECT_EQ(eval.code, 0) << eval.err;
    write("corrupt.ckpt", "{");
    EXPECT_EQ(run("eval --scenes " + path("s") + " --policy toy --checkpoint " + path("corrupt.ckpt")).code, 3);
}

TEST_F(Cli, InspectCorruptStore) {
    write("store.jsonl", "{\"schema\": \"scot.trajectory\", \"version\": 9, \"trajectory\": {}}\n");
    EXPECT_EQ(run("inspect --store " + path("store.jsonl")).code, 3);
    write("store2.jsonl", "\n\ngarbage\n");
    const auto r = run("inspect --store " + path("store2.jsonl"));
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("at byte 2"), std::string::npos) << r.err;
}
