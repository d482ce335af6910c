// scot: scene generation, rollouts, evaluation, toy training, inspection.
//
// Exit codes: 0 ok, 1 usage or configuration error, 2 backend failure,
// 3 corrupt data.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "scot/agents.hpp"
#include "scot/config.hpp"
#include "scot/image.hpp"
#include "scot/model_client.hpp"
#include "scot/orchestrator.hpp"
#include "scot/parallel.hpp"
#include "scot/reward.hpp"
#include "scot/scene.hpp"
#include "scot/store.hpp"
#include "scot/toy.hpp"

namespace fs = std::filesystem;
using namespace scot;

namespace {

enum Exit { kOk = 0, kUsage = 1, kBackend = 2, kData = 3 };

/// A usage error found after flag parsing.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string sha256_hex(std::string_view data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[md[i] >> 4]);
        out.push_back(kHex[md[i] & 15]);
    }
    return out;
}

Canvas parse_canvas(const std::string& s) {
    const auto x = s.find('x');
    try {
        if (x == std::string::npos) throw std::invalid_argument(s);
        Canvas c{std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
        if (!c.valid()) throw std::invalid_argument(s);
        return c;
    } catch (const std::exception&) {
        throw UsageError("canvas must look like 4096x4096, got '" + s + "'");
    }
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path + "'");
}

/// Config file (if any) with flag overrides applied by the caller afterwards.
struct ConfigFlags {
    std::string file;
    std::optional<std::string> backend;
    std::optional<std::string> endpoint;
    std::optional<std::string> model;
    std::optional<std::string> auth_env;
    std::optional<std::string> judge;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> mode;
    std::optional<double> alpha;
    std::optional<int> max_turns;
    std::optional<int> max_calls;
    std::optional<double> tool_bonus;
    bool no_ordering = false;
    bool trace = false;

    void add(CLI::App& app) {
        app.add_option("--config", file, "JSON run configuration; flags override it");
        app.add_option("--backend", backend, "scripted or remote")->check(CLI::IsMember({"scripted", "remote"}));
        app.add_option("--endpoint", endpoint, "chat-completions URL of the remote backend");
        app.add_option("--model", model, "model name sent to the remote backend");
        app.add_option("--auth-env", auth_env, "environment variable holding the bearer token");
        app.add_option("--judge", judge, "exact or llm")->check(CLI::IsMember({"exact", "llm"}));
        app.add_option("--seed", seed, "base seed");
        app.add_option("--mode", mode, "tool-call validation: constrained or relaxed")
            ->check(CLI::IsMember({"constrained", "relaxed"}));
        app.add_option("--alpha", alpha, "crop enlargement factor in [0, 1]");
        app.add_option("--max-turns", max_turns, "main-agent turns per rollout");
        app.add_option("--max-calls", max_calls, "tool calls per rollout");
        app.add_option("--tool-bonus", tool_bonus, "tool reward level");
        app.add_flag("--no-ordering", no_ordering, "pay the tool bonus wherever the call sits (ablation)");
        app.add_flag("--trace", trace, "keep every request and reply in the trajectory");
    }

    RunConfig resolve() const {
        RunConfig c;
        if (!file.empty()) c = load_run_config(file);
        nlohmann::json patch = nlohmann::json::object();
        if (backend) patch["backend"] = *backend;
        if (endpoint) patch["remote"]["endpoint"] = *endpoint;
        if (model) patch["remote"]["model"] = *model;
        if (auth_env) patch["remote"]["auth_env"] = *auth_env;
        if (judge) patch["judge"] = *judge;
        if (seed) patch["seed"] = *seed;
        if (mode) patch["rollout"]["mode"] = *mode;
        if (alpha) patch["rollout"]["alpha"] = *alpha;
        if (max_turns) patch["rollout"]["max_turns"] = *max_turns;
        if (max_calls) patch["rollout"]["max_tool_calls"] = *max_calls;
        if (tool_bonus) patch["levels"]["tool_bonus"] = *tool_bonus;
        if (no_ordering) patch["ordering_indicator"] = false;
        if (trace) patch["rollout"]["trace"] = true;
        return run_config_from_json(patch, c);
    }
};

/// Judge for a run. The LLM judge talks to the configured remote endpoint.
struct JudgeHolder {
    std::unique_ptr<RemoteBackend> backend;
    JudgeKind judge = ExactMatchJudge{};

    explicit JudgeHolder(const RunConfig& c) {
        if (c.judge == JudgeChoice::Llm) {
            backend = std::make_unique<RemoteBackend>(c.remote);
            LlmJudge j;
            j.backend = backend.get();
            judge = j;
        }
    }
};

std::vector<std::string> scene_paths(const std::string& path) {
    std::vector<std::string> out;
    if (fs::is_directory(path)) {
        for (const auto& e : fs::directory_iterator(path)) {
            if (e.is_regular_file() && e.path().extension() == ".json") out.push_back(e.path().string());
        }
        std::sort(out.begin(), out.end());
    } else if (fs::exists(path)) {
        out.push_back(path);
    } else {
        throw UsageError("no such scene file or directory: " + path);
    }
    return out;
}

// ---------------------------------------------------------------------------

int cmd_gen_scenes(std::uint64_t seed, int count, const std::string& canvas_text, int regions, int min_side,
                   int max_side, const std::string& out_dir) {
    if (count < 0) throw UsageError("--count must be non-negative");
    const Canvas canvas = parse_canvas(canvas_text);
    SceneOptions options;
    options.min_side = min_side;
    options.max_side = max_side;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir)) throw Error(ErrorCode::IoError, "cannot create directory '" + out_dir + "'");

    const auto tasks = make_corpus(seed, count, canvas, regions, options);
    std::string digest_input;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        const nlohmann::json config = {{"command", "gen-scenes"}, {"seed", seed},          {"count", count},
                                       {"canvas", {canvas.width, canvas.height}},            {"regions", regions},
                                       {"min_side", min_side},    {"max_side", max_side}, {"index", i}};
        const std::string content = write_scene_file(*tasks[i].scene, {tasks[i]}, config);
        char name[32];
        std::snprintf(name, sizeof name, "scene-%04zu.json", i);
        write_file((fs::path(out_dir) / name).string(), content);
        digest_input += name;
        digest_input += '\n';
        digest_input += content;
    }
    std::cout << "wrote " << tasks.size() << " scene file(s) to " << out_dir << "\n";
    std::cout << "digest sha256:" << sha256_hex(digest_input) << "\n";
    return kOk;
}

struct RolloutFlags {
    ConfigFlags config;
    std::string task_file;
    int task_index = 0;
    std::string tape;
    std::string agent = "oracle";
    std::string image;
    std::string question;
    std::string answer;
    std::string store;
    bool json = false;
};

int cmd_rollout(const RolloutFlags& f) {
    RunConfig config = f.config.resolve();
    if (!f.store.empty()) config.store = f.store;

    RolloutInput input;
    std::shared_ptr<const Scene> scene;
    if (!f.image.empty()) {
        if (f.question.empty()) throw UsageError("--image needs --question");
        auto raster = std::make_shared<const RasterImage>(decode_png(read_text_file(f.image)));
        input.image = raster;
        input.task = {fs::path(f.image).filename().string(), f.question, f.answer, std::nullopt};
    } else {
        if (f.task_file.empty()) throw UsageError("give --task FILE or --image PNG --question TEXT");
        SceneFile file;
        try {
            file = load_scene_file(f.task_file);
        } catch (const Error& e) {
            throw UsageError("bad task file '" + f.task_file + "': " + e.what());
        }
        if (f.task_index < 0 || static_cast<std::size_t>(f.task_index) >= file.tasks.size()) {
            throw UsageError("task file has " + std::to_string(file.tasks.size()) + " task(s); index " +
                             std::to_string(f.task_index) + " is out of range");
        }
        const Task& task = file.tasks[static_cast<std::size_t>(f.task_index)];
        scene = file.scene;
        input = rollout_input(task);
        if (!f.question.empty()) input.task.question = f.question;
    }

    Responder responder;
    if (config.backend == BackendKind::Scripted) {
        if (!f.tape.empty()) {
            const auto j = nlohmann::json::parse(read_text_file(f.tape), nullptr, false);
            if (j.is_discarded() || !j.is_array()) throw UsageError("tape must be a JSON array of strings");
            responder = replay_tape(j.get<std::vector<std::string>>());
        } else if (f.agent == "guess") {
            responder = guess_agent();
        } else {
            if (!scene) throw UsageError("the oracle agent needs a scene task; use --tape with --image");
            responder = oracle_agent(scene, input.task.question);
        }
    }
    auto backend = make_backend(config, scene, responder);
    JudgeHolder judge(config);

    const auto t = run_rollout(input, config.rollout, *backend);
    std::optional<RewardBreakdown> reward;
    if (t.termination != Termination::BackendError) {
        reward = total_reward(t, config.levels, judge.judge, {config.ordering_indicator});
    }
    const auto config_json = run_config_to_json(config);
    const auto record = store_record(t, reward, config_json);
    if (f.json) {
        std::cout << record << "\n";
    } else {
        std::cout << render_transcript(t, reward ? &*reward : nullptr);
        if (reward) std::cout << "total " << reward->total << "\n";
    }
    if (!config.store.empty()) StoreWriter(config.store).append(record);
    if (t.termination == Termination::BackendError) {
        std::cerr << "backend failure: " << t.metadata.error << "\n";
        return kBackend;
    }
    return kOk;
}

struct EvalFlags {
    ConfigFlags config;
    std::string scenes;
    std::string policy = "oracle";
    std::string checkpoint;
    int samples = 1;
    int parallel = 1;
    std::string store;
};

int cmd_eval(const EvalFlags& f) {
    RunConfig config = f.config.resolve();
    if (!f.store.empty()) config.store = f.store;
    if (f.samples < 1) throw UsageError("--samples must be positive");
    if (f.parallel < 1) throw UsageError("--parallel must be positive");
    if (f.policy == "remote") config.backend = BackendKind::Remote;

    std::vector<Task> tasks;
    for (const auto& path : scene_paths(f.scenes)) {
        auto file = load_scene_file(path);
        for (auto& t : file.tasks) tasks.push_back(std::move(t));
    }
    std::optional<ToyPolicy> toy;
    if (f.policy == "toy") {
        if (f.checkpoint.empty()) throw UsageError("--policy toy needs --checkpoint");
        toy = read_policy_checkpoint(read_text_file(f.checkpoint));
    }

    JudgeHolder judge(config);
    const RewardOptions options{config.ordering_indicator};
    const auto per = static_cast<std::size_t>(f.samples);
    struct Outcome {
        std::optional<Trajectory> trajectory;
        std::optional<RewardBreakdown> reward;
        std::string error;
    };
    std::vector<Outcome> outcomes(tasks.size() * per);

    parallel_for(outcomes.size(), f.parallel, [&](std::size_t k) {
        const Task& task = tasks[k / per];
        const std::uint64_t seed = derive_seed(config.seed, {k / per, k % per});
        const std::string id = task.id + "/" + std::to_string(k % per);
        auto& out = outcomes[k];
        try {
            if (toy) {
                ToyEnv env;
                env.rollout = config.rollout;
                env.levels = config.levels;
                env.options = options;
                env.judge = judge.judge;
                env.fidelity = config.fidelity;
                auto r = toy_rollout(*toy, task, env, seed, id);
                out.trajectory = std::move(r.trajectory);
                if (out.trajectory->termination != Termination::BackendError) out.reward = r.reward;
            } else {
                Responder responder;
                if (f.policy == "oracle") responder = oracle_agent(task.scene, task.question);
                if (f.policy == "guess") responder = guess_agent();
                auto backend = make_backend(config, task.scene, responder);
                RolloutConfig rc = config.rollout;
                if (!rc.main_sampling.seed) rc.main_sampling.seed = seed;
                out.trajectory = run_rollout(task, rc, *backend, id);
                if (out.trajectory->termination != Termination::BackendError) {
                    out.reward = total_reward(*out.trajectory, config.levels, judge.judge, options);
                }
            }
            if (out.trajectory->termination == Termination::BackendError) out.error = out.trajectory->metadata.error;
        } catch (const Error& e) {
            out.error = e.what();
        }
    });

    const auto config_json = run_config_to_json(config);
    std::unique_ptr<StoreWriter> writer;
    if (!config.store.empty()) writer = std::make_unique<StoreWriter>(config.store);
    int scored = 0;
    int failed = 0;
    int hacks = 0;
    double accuracy = 0.0;
    double reward = 0.0;
    double calls = 0.0;
    for (const auto& o : outcomes) {
        if (o.trajectory && writer) writer->append(store_record(*o.trajectory, o.reward, config_json));
        if (!o.reward) {
            ++failed;
            std::cerr << "failed: " << o.error << "\n";
            continue;
        }
        ++scored;
        accuracy += o.reward->ind_acc_pos ? 1.0 : 0.0;
        reward += o.reward->total;
        calls += o.trajectory->executed_calls();
        hacks += detect_hacking(*o.trajectory) > 0 ? 1 : 0;
    }
    if (tasks.empty()) std::cerr << "warning: the corpus has no tasks\n";
    const double n = scored > 0 ? scored : 1;
    std::printf("tasks %zu\nrollouts %zu\nfailed %d\n", tasks.size(), outcomes.size(), failed);
    std::printf("accuracy %.6f\nmean_reward %.6f\nmean_tool_calls %.6f\nhack_count %d\n", accuracy / n, reward / n,
                calls / n, hacks);
    return failed > 0 && scored == 0 ? kBackend : kOk;
}

struct TrainFlags {
    ConfigFlags config;
    std::optional<int> iterations;
    std::optional<double> lr;
    std::optional<int> group_size;
    std::optional<int> tasks_per_iteration;
    bool hack_judge = false;
    int parallel = 1;
    std::string out;
    std::string checkpoint;
    bool quiet = false;
};

int cmd_train_toy(const TrainFlags& f) {
    RunConfig config = f.config.resolve();
    ToyTrainConfig& toy = config.toy;
    // The shared flags mean the same thing for the toy run.
    if (f.config.seed) toy.seed = *f.config.seed;
    if (f.config.tool_bonus) toy.levels.tool_bonus = *f.config.tool_bonus;
    if (f.config.no_ordering) toy.ordering_indicator = false;
    if (f.config.alpha) toy.alpha = *f.config.alpha;
    if (f.iterations) toy.iterations = *f.iterations;
    if (f.lr) toy.lr = *f.lr;
    if (f.group_size) toy.group_size = *f.group_size;
    if (f.tasks_per_iteration) toy.tasks_per_iteration = *f.tasks_per_iteration;
    if (f.hack_judge) toy.hack_susceptible_judge = true;
    toy.parallel = f.parallel;
    toy.check();

    const auto corpus = make_toy_corpus(toy.corpus);
    const auto config_json = run_config_to_json(config);
    const auto result = train_toy(corpus, toy, [&](const DynamicsRecord& r) {
        if (!f.quiet && (r.iteration % 25 == 0 || r.iteration + 1 == toy.iterations)) {
            std::fprintf(stderr, "iter %4d  reward %.3f  calls %.3f  entropy %.3f  hacks %d\n", r.iteration,
                         r.mean_reward, r.mean_tool_calls, r.entropy, r.hack_count);
        }
    });

    std::ostringstream table;
    write_dynamics_csv(table, result.records, config_json);
    if (f.out.empty() || f.out == "-") {
        std::cout << table.str();
    } else {
        write_file(f.out, table.str());
    }
    if (!f.checkpoint.empty()) write_file(f.checkpoint, write_policy_checkpoint(result.policy, config_json));
    if (!result.records.empty() && !f.out.empty() && f.out != "-") {
        const auto& last = result.records.back();
        int hacks = 0;
        for (const auto& r : result.records) hacks += r.hack_count;
        std::printf("iterations %zu\nfinal mean_reward %.6f\nfinal mean_tool_calls %.6f\ntotal hack_count %d\n",
                    result.records.size(), last.mean_reward, last.mean_tool_calls, hacks);
    }
    return kOk;
}

int cmd_inspect(const std::string& store, const std::string& id) {
    const auto records = read_store(store);
    if (id.empty()) {
        for (const auto& r : records) {
            std::printf("%s\t%s\t%s\t%s\n", r.trajectory.id.c_str(),
                        r.trajectory.final_answer ? r.trajectory.final_answer->c_str() : "(none)",
                        std::string(to_string(r.trajectory.termination)).c_str(),
                        r.reward ? std::to_string(r.reward->total).c_str() : "-");
        }
        return kOk;
    }
    for (const auto& r : records) {
        if (r.trajectory.id == id) {
            std::cout << render_transcript(r.trajectory, r.reward ? &*r.reward : nullptr);
            return kOk;
        }
    }
    throw UsageError("no trajectory with id '" + id + "' in " + store);
}

int exit_code_for(const Error& e) {
    switch (e.code()) {
    case ErrorCode::ParseError:
    case ErrorCode::VersionError: return kData;
    case ErrorCode::RemoteUnavailable:
    case ErrorCode::ProtocolError:
    case ErrorCode::TapeExhausted:
    case ErrorCode::JudgeUnavailable: return kBackend;
    default: return kUsage;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Self-calling chain-of-thought runtime: rollouts, rewards and toy GRPO training"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-scenes", "Write a deterministic corpus of synthetic scene files");
    std::uint64_t gen_seed = 1;
    int gen_count = 10;
    int gen_regions = 8;
    int gen_min = 64;
    int gen_max = 200;
    std::string gen_canvas = "4096x4096";
    std::string gen_out;
    gen->add_option("--seed", gen_seed, "corpus seed");
    gen->add_option("--count", gen_count, "number of scenes");
    gen->add_option("--canvas", gen_canvas, "canvas size WxH");
    gen->add_option("--regions", gen_regions, "regions per scene");
    gen->add_option("--min-side", gen_min, "smallest region side in pixels");
    gen->add_option("--max-side", gen_max, "largest region side in pixels");
    gen->add_option("--out", gen_out, "output directory")->required();

    auto* roll = app.add_subcommand("rollout", "Run one rollout and print the annotated transcript");
    RolloutFlags rf;
    rf.config.add(*roll);
    roll->add_option("--task", rf.task_file, "scene file holding the task");
    roll->add_option("--task-index", rf.task_index, "which task of the file");
    roll->add_option("--tape", rf.tape, "JSON array of main-agent turns to replay (scripted backend)");
    roll->add_option("--agent", rf.agent, "scripted main agent when no tape is given")
        ->check(CLI::IsMember({"oracle", "guess"}));
    roll->add_option("--image", rf.image, "PNG image instead of a scene task");
    roll->add_option("--question", rf.question, "question to ask");
    roll->add_option("--answer", rf.answer, "reference answer for --image");
    roll->add_option("--store", rf.store, "append the trajectory record to this store");
    roll->add_flag("--json", rf.json, "print the record line instead of the transcript");

    auto* eval = app.add_subcommand("eval", "Evaluate a policy over a scene corpus");
    EvalFlags ef;
    ef.config.add(*eval);
    eval->add_option("--scenes", ef.scenes, "scene file or directory of scene files")->required();
    eval->add_option("--policy", ef.policy, "oracle, guess, toy or remote")
        ->check(CLI::IsMember({"oracle", "guess", "toy", "remote"}));
    eval->add_option("--checkpoint", ef.checkpoint, "toy policy checkpoint");
    eval->add_option("--samples", ef.samples, "rollouts per task");
    eval->add_option("--parallel", ef.parallel, "worker threads");
    eval->add_option("--store", ef.store, "append per-rollout records to this store");

    auto* train = app.add_subcommand("train-toy", "Train the toy policy with GRPO and write the dynamics table");
    TrainFlags tf;
    tf.config.add(*train);
    train->add_option("--iterations", tf.iterations, "training iterations");
    train->add_option("--lr", tf.lr, "learning rate");
    train->add_option("--group-size", tf.group_size, "rollouts per task (G)");
    train->add_option("--tasks-per-iteration", tf.tasks_per_iteration, "groups per update");
    train->add_flag("--hack-judge", tf.hack_judge, "judge that accepts every answer (ablation)");
    train->add_option("--parallel", tf.parallel, "worker threads for rollouts");
    train->add_option("--out", tf.out, "dynamics table path (default stdout)");
    train->add_option("--checkpoint", tf.checkpoint, "write the final policy here");
    train->add_flag("--quiet", tf.quiet, "no progress on stderr");

    auto* inspect = app.add_subcommand("inspect", "Print trajectories from a store");
    std::string inspect_store;
    std::string inspect_id;
    inspect->add_option("--store", inspect_store, "trajectory store")->required();
    inspect->add_option("--id", inspect_id, "trajectory id (lists all when omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    try {
        if (*gen) return cmd_gen_scenes(gen_seed, gen_count, gen_canvas, gen_regions, gen_min, gen_max, gen_out);
        if (*roll) return cmd_rollout(rf);
        if (*eval) return cmd_eval(ef);
        if (*train) return cmd_train_toy(tf);
        if (*inspect) return cmd_inspect(inspect_store, inspect_id);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const Error& e) {
        const int code = exit_code_for(e);
        std::cerr << (code == kData ? "data error: " : code == kBackend ? "backend failure: " : "error: ") << e.what()
                  << "\n";
        return code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    }
    return kUsage;
}
