#pragma once

// Run configuration: one JSON file, with command-line flags applied on top.
// Every artifact a run writes embeds the resolved configuration.

#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include <json.hpp>

#include "scot/error.hpp"
#include "scot/model_client.hpp"
#include "scot/orchestrator.hpp"
#include "scot/reward.hpp"
#include "scot/toy.hpp"

namespace scot {

enum class BackendKind { Scripted, Remote };
enum class JudgeChoice { ExactMatch, Llm };

struct RunConfig {
    BackendKind backend = BackendKind::Scripted;
    RemoteConfig remote;
    RolloutConfig rollout;
    RewardLevels levels;
    bool ordering_indicator = true;
    JudgeChoice judge = JudgeChoice::ExactMatch;
    double fidelity = kDefaultFidelity;
    ToyTrainConfig toy;
    std::uint64_t seed = 1;
    std::string store;
};

namespace detail {

inline ValidationMode mode_from(const std::string& s) {
    if (s == "constrained") return ValidationMode::Constrained;
    if (s == "relaxed") return ValidationMode::Relaxed;
    throw Error(ErrorCode::InvalidArgument, "unknown validation mode '" + s + "'");
}

inline nlohmann::json sampling_to_json(const SamplingParams& p) {
    nlohmann::json j = {{"temperature", p.temperature}, {"max_new_tokens", p.max_new_tokens}};
    if (p.seed) j["seed"] = *p.seed;
    return j;
}

inline SamplingParams sampling_from_json(const nlohmann::json& j, SamplingParams p) {
    p.temperature = j.value("temperature", p.temperature);
    p.max_new_tokens = j.value("max_new_tokens", p.max_new_tokens);
    if (j.contains("seed")) p.seed = j.at("seed").get<std::uint64_t>();
    return p;
}

}  // namespace detail

inline nlohmann::json run_config_to_json(const RunConfig& c) {
    return {{"backend", c.backend == BackendKind::Remote ? "remote" : "scripted"},
            {"remote",
             {{"endpoint", c.remote.endpoint},
              {"model", c.remote.model},
              {"auth_env", c.remote.auth_env},
              {"timeout_ms", c.remote.timeout.count()},
              {"retry_attempts", c.remote.retry.attempts},
              {"retry_backoff_ms", c.remote.retry.initial_backoff.count()},
              {"retry_multiplier", c.remote.retry.multiplier}}},
            {"rollout",
             {{"max_turns", c.rollout.max_turns},
              {"max_tool_calls", c.rollout.max_tool_calls},
              {"alpha", c.rollout.alpha},
              {"mode", c.rollout.mode == ValidationMode::Relaxed ? "relaxed" : "constrained"},
              {"main_sampling", detail::sampling_to_json(c.rollout.main_sampling)},
              {"sub_sampling", detail::sampling_to_json(c.rollout.sub_sampling)},
              {"trace", c.rollout.trace},
              {"record_timing", c.rollout.record_timing}}},
            {"levels", levels_to_json(c.levels)},
            {"ordering_indicator", c.ordering_indicator},
            {"judge", c.judge == JudgeChoice::Llm ? "llm" : "exact"},
            {"fidelity", c.fidelity},
            {"toy", toy_config_to_json(c.toy)},
            {"seed", c.seed},
            {"store", c.store}};
}

/// Missing keys keep the values in `c`; unknown keys are errors so that
/// typos do not silently fall back to defaults.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c = {}) {
    static const char* const kKeys[] = {"backend", "remote", "rollout", "levels", "ordering_indicator", "judge",
                                        "fidelity", "toy", "seed", "store"};
    if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        for (const char* k : kKeys) known = known || key == k;
        if (!known) throw Error(ErrorCode::InvalidArgument, "unknown config key '" + key + "'");
    }
    try {
        if (j.contains("backend")) {
            const auto b = j.at("backend").get<std::string>();
            if (b == "remote") {
                c.backend = BackendKind::Remote;
            } else if (b == "scripted") {
                c.backend = BackendKind::Scripted;
            } else {
                throw Error(ErrorCode::InvalidArgument, "unknown backend '" + b + "'");
            }
        }
        if (j.contains("remote")) {
            const auto& r = j.at("remote");
            if (r.contains("token") || r.contains("api_key")) {
                throw Error(ErrorCode::InvalidArgument, "credentials are read from the environment only; name the "
                                                        "variable with remote.auth_env");
            }
            c.remote.endpoint = r.value("endpoint", c.remote.endpoint);
            c.remote.model = r.value("model", c.remote.model);
            c.remote.auth_env = r.value("auth_env", c.remote.auth_env);
            c.remote.timeout = std::chrono::milliseconds(r.value("timeout_ms", c.remote.timeout.count()));
            c.remote.retry.attempts = r.value("retry_attempts", c.remote.retry.attempts);
            c.remote.retry.initial_backoff =
                std::chrono::milliseconds(r.value("retry_backoff_ms", c.remote.retry.initial_backoff.count()));
            c.remote.retry.multiplier = r.value("retry_multiplier", c.remote.retry.multiplier);
        }
        if (j.contains("rollout")) {
            const auto& r = j.at("rollout");
            c.rollout.max_turns = r.value("max_turns", c.rollout.max_turns);
            c.rollout.max_tool_calls = r.value("max_tool_calls", c.rollout.max_tool_calls);
            c.rollout.alpha = r.value("alpha", c.rollout.alpha);
            if (r.contains("mode")) c.rollout.mode = detail::mode_from(r.at("mode").get<std::string>());
            if (r.contains("main_sampling")) {
                c.rollout.main_sampling = detail::sampling_from_json(r.at("main_sampling"), c.rollout.main_sampling);
            }
            if (r.contains("sub_sampling")) {
                c.rollout.sub_sampling = detail::sampling_from_json(r.at("sub_sampling"), c.rollout.sub_sampling);
            }
            c.rollout.trace = r.value("trace", c.rollout.trace);
            c.rollout.record_timing = r.value("record_timing", c.rollout.record_timing);
        }
        if (j.contains("levels")) c.levels = levels_from_json(j.at("levels"), c.levels);
        c.ordering_indicator = j.value("ordering_indicator", c.ordering_indicator);
        if (j.contains("judge")) {
            const auto s = j.at("judge").get<std::string>();
            if (s == "exact") {
                c.judge = JudgeChoice::ExactMatch;
            } else if (s == "llm") {
                c.judge = JudgeChoice::Llm;
            } else {
                throw Error(ErrorCode::InvalidArgument, "unknown judge '" + s + "'");
            }
        }
        c.fidelity = j.value("fidelity", c.fidelity);
        if (j.contains("toy")) c.toy = toy_config_from_json(j.at("toy"), c.toy);
        c.seed = j.value("seed", c.seed);
        c.store = j.value("store", c.store);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("config: ") + e.what());
    }
    c.rollout.check();
    c.levels.check();
    return c;
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline RunConfig load_run_config(const std::string& path, RunConfig base = {}) {
    const auto text = read_text_file(path);
    const auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::InvalidArgument, "config '" + path + "' is not valid JSON");
    return run_config_from_json(j, std::move(base));
}

/// Main-agent backend. A scripted backend answers subtasks from `scene` and
/// everything else with `responder`.
inline std::unique_ptr<ChatBackend> make_backend(const RunConfig& c, std::shared_ptr<const Scene> scene,
                                                 Responder responder) {
    if (c.backend == BackendKind::Remote) return std::make_unique<RemoteBackend>(c.remote);
    return std::make_unique<ScriptedBackend>(std::move(scene), std::move(responder), c.fidelity);
}

}  // namespace scot
