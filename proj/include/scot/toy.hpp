#pragma once

// A small softmax policy that plays the main agent through the real rollout
// loop, and a GRPO trainer for it. Every sampled decision is one token.
//
// Decisions on the first turn:
//   template   answer directly | call then answer | answer then call
//   slot       answer word (direct and answer-then-call)
//   ground     candidate region, logit w . [colour matches, kind matches]
//   task_type  ocr | vqa | caption
//   prompt     the question | "read the text" | "" (rejected as empty)
// After a call the agent answers with the first item of the observation;
// that turn samples nothing and has zero tokens.

#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "scot/agents.hpp"
#include "scot/error.hpp"
#include "scot/grpo.hpp"
#include "scot/model_client.hpp"
#include "scot/orchestrator.hpp"
#include "scot/parallel.hpp"
#include "scot/random.hpp"
#include "scot/reward.hpp"
#include "scot/scene.hpp"

namespace scot {

enum class ToyTemplate { AnswerDirect = 0, CallThenAnswer = 1, AnswerThenCall = 2 };
enum class ToyHead { Template, Slot, Ground, TaskType, Prompt };

inline constexpr std::array<std::string_view, 3> kToyTaskTypes = {"ocr", "vqa", "caption"};
inline constexpr std::string_view kToyReadPrompt = "read the text";
inline constexpr std::string_view kToyUnknown = "unknown";

struct ToyPolicy {
    static constexpr std::size_t kTemplate = 0;
    static constexpr std::size_t kSlot = 3;
    static constexpr std::size_t kGround = kSlot + kLabelWords.size();
    static constexpr std::size_t kTaskType = kGround + 2;
    static constexpr std::size_t kPrompt = kTaskType + 3;
    static constexpr std::size_t kSize = kPrompt + 3;

    std::array<double, kSize> theta{};

    static ToyPolicy initial(double direct_prior) {
        ToyPolicy p;
        p.theta[kTemplate + static_cast<std::size_t>(ToyTemplate::AnswerDirect)] = direct_prior;
        return p;
    }

    friend bool operator==(const ToyPolicy&, const ToyPolicy&) = default;
};

struct ToyDecision {
    ToyHead head = ToyHead::Template;
    int choice = 0;
    /// Per-candidate features, ground decisions only.
    std::vector<std::array<double, 2>> features;
};

namespace detail {

inline std::size_t head_offset(ToyHead h) {
    switch (h) {
    case ToyHead::Template: return ToyPolicy::kTemplate;
    case ToyHead::Slot: return ToyPolicy::kSlot;
    case ToyHead::Ground: return ToyPolicy::kGround;
    case ToyHead::TaskType: return ToyPolicy::kTaskType;
    case ToyHead::Prompt: return ToyPolicy::kPrompt;
    }
    return 0;
}

inline std::size_t head_size(ToyHead h) {
    switch (h) {
    case ToyHead::Template: return 3;
    case ToyHead::Slot: return kLabelWords.size();
    case ToyHead::Ground: return 2;
    case ToyHead::TaskType: return 3;
    case ToyHead::Prompt: return 3;
    }
    return 0;
}

inline std::vector<double> logits(const ToyPolicy& p, const ToyDecision& d) {
    const std::size_t off = head_offset(d.head);
    if (d.head == ToyHead::Ground) {
        std::vector<double> z;
        z.reserve(d.features.size());
        for (const auto& f : d.features) z.push_back(p.theta[off] * f[0] + p.theta[off + 1] * f[1]);
        return z;
    }
    return {p.theta.begin() + static_cast<std::ptrdiff_t>(off),
            p.theta.begin() + static_cast<std::ptrdiff_t>(off + head_size(d.head))};
}

inline std::vector<double> softmax(std::vector<double> z) {
    double hi = z.front();
    for (double v : z) hi = std::max(hi, v);
    double sum = 0.0;
    for (double& v : z) sum += (v = std::exp(v - hi));
    for (double& v : z) v /= sum;
    return z;
}

}  // namespace detail

inline std::vector<double> probabilities(const ToyPolicy& p, const ToyDecision& d) {
    return detail::softmax(detail::logits(p, d));
}

inline double log_prob(const ToyPolicy& p, const ToyDecision& d) {
    const auto z = detail::logits(p, d);
    double hi = z.front();
    for (double v : z) hi = std::max(hi, v);
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - hi);
    return z[static_cast<std::size_t>(d.choice)] - hi - std::log(sum);
}

/// grad += scale * d log_prob / d theta.
inline void add_grad_log_prob(const ToyPolicy& p, const ToyDecision& d, double scale,
                              std::array<double, ToyPolicy::kSize>& grad) {
    const auto probs = probabilities(p, d);
    const std::size_t off = detail::head_offset(d.head);
    if (d.head == ToyHead::Ground) {
        std::array<double, 2> expected{};
        for (std::size_t j = 0; j < probs.size(); ++j) {
            expected[0] += probs[j] * d.features[j][0];
            expected[1] += probs[j] * d.features[j][1];
        }
        const auto& chosen = d.features[static_cast<std::size_t>(d.choice)];
        grad[off] += scale * (chosen[0] - expected[0]);
        grad[off + 1] += scale * (chosen[1] - expected[1]);
        return;
    }
    for (std::size_t j = 0; j < probs.size(); ++j) {
        grad[off + j] += scale * ((static_cast<int>(j) == d.choice ? 1.0 : 0.0) - probs[j]);
    }
}

inline double entropy(const ToyPolicy& p, const ToyDecision& d) {
    double h = 0.0;
    for (double q : probabilities(p, d)) {
        if (q > 0.0) h -= q * std::log(q);
    }
    return h;
}

/// Candidate features of every scene region against the question.
inline std::vector<std::array<double, 2>> ground_features(const Scene& scene, std::string_view question) {
    const auto mention = detail::find_mention(question);
    std::vector<std::array<double, 2>> out;
    out.reserve(scene.regions.size());
    for (const auto& r : scene.regions) {
        out.push_back({mention.color && r.color == *mention.color ? 1.0 : 0.0,
                       mention.kind && r.kind == *mention.kind ? 1.0 : 0.0});
    }
    return out;
}

/// The main-agent side of one rollout. Samples with its own generator and
/// keeps every decision for the update.
class ToyAgent {
public:
    ToyAgent(const ToyPolicy& policy, std::shared_ptr<const Scene> scene, std::string question, std::uint64_t seed)
        : policy_(policy), scene_(std::move(scene)), question_(std::move(question)), rng_(seed) {}

    ChatReply respond(std::span<const ChatMessage> messages, const SamplingParams&) {
        if (assistant_turns(messages) == 0) return first_turn();
        return {"<answer>" + first_observation_item(messages, kToyUnknown) + "</answer>", 0};
    }

    Responder responder() {
        return [this](std::span<const ChatMessage> m, const SamplingParams& p) { return respond(m, p); };
    }

    ToyTemplate chosen_template() const noexcept { return template_; }
    const std::vector<ToyDecision>& decisions() const noexcept { return decisions_; }
    const std::vector<double>& logprobs() const noexcept { return logprobs_; }
    const std::vector<double>& entropies() const noexcept { return entropies_; }

private:
    int sample(ToyDecision d) {
        const auto probs = probabilities(policy_, d);
        d.choice = static_cast<int>(rng_.categorical(probs));
        logprobs_.push_back(log_prob(policy_, d));
        entropies_.push_back(entropy(policy_, d));
        decisions_.push_back(std::move(d));
        return decisions_.back().choice;
    }

    std::string sample_word() {
        return std::string(kLabelWords[static_cast<std::size_t>(sample({ToyHead::Slot, 0, {}}))]);
    }

    ToolCall sample_call() {
        auto features = ground_features(*scene_, question_);
        const int region = sample({ToyHead::Ground, 0, std::move(features)});
        const int type = sample({ToyHead::TaskType, 0, {}});
        const int prompt = sample({ToyHead::Prompt, 0, {}});
        ToolCall call;
        call.task_type = std::string(kToyTaskTypes[static_cast<std::size_t>(type)]);
        call.prompt = prompt == 0 ? question_ : prompt == 1 ? std::string(kToyReadPrompt) : std::string();
        call.bbox = scene_->regions[static_cast<std::size_t>(region)].bbox;
        return call;
    }

    ChatReply first_turn() {
        const std::size_t before = decisions_.size();
        template_ = static_cast<ToyTemplate>(sample({ToyHead::Template, 0, {}}));
        std::string text;
        switch (template_) {
        case ToyTemplate::AnswerDirect:
            text = "<think>The overview should be enough.</think>\n<answer>" + sample_word() + "</answer>";
            break;
        case ToyTemplate::CallThenAnswer:
            text = "<think>The text is too small here; ask a subagent.</think>\n" + render_call(sample_call());
            break;
        case ToyTemplate::AnswerThenCall: {
            std::string word = sample_word();
            text = "<answer>" + word + "</answer>\n" + render_call(sample_call());
            break;
        }
        }
        return {std::move(text), static_cast<int>(decisions_.size() - before)};
    }

    ToyPolicy policy_;
    std::shared_ptr<const Scene> scene_;
    std::string question_;
    Rng rng_;
    ToyTemplate template_ = ToyTemplate::AnswerDirect;
    std::vector<ToyDecision> decisions_;
    std::vector<double> logprobs_;
    std::vector<double> entropies_;
};

/// Everything a toy rollout needs besides the policy and the task.
struct ToyEnv {
    RolloutConfig rollout;
    RewardLevels levels;
    RewardOptions options;
    JudgeKind judge = ExactMatchJudge{};
    double fidelity = kDefaultFidelity;
};

struct ToyRollout {
    Trajectory trajectory;
    RewardBreakdown reward;
    ToyTemplate chosen = ToyTemplate::AnswerDirect;
    std::vector<ToyDecision> decisions;  ///< one per unmasked token
    std::vector<double> behavior;        ///< log-prob of each decision at sampling time
    std::vector<double> entropies;
};

inline ToyRollout toy_rollout(const ToyPolicy& policy, const Task& task, const ToyEnv& env, std::uint64_t seed,
                              std::string id = {}) {
    ToyAgent agent(policy, task.scene, task.question, seed);
    ScriptedBackend backend(task.scene, agent.responder(), env.fidelity);
    RolloutConfig config = env.rollout;
    config.main_sampling.seed = seed;

    ToyRollout out;
    out.trajectory = run_rollout(task, config, backend, std::move(id));
    out.reward = total_reward(out.trajectory, env.levels, env.judge, env.options);
    out.chosen = agent.chosen_template();
    out.decisions = agent.decisions();
    out.behavior = agent.logprobs();
    out.entropies = agent.entropies();
    return out;
}

/// Log-probs in token-layout order; masked positions hold 0.
inline TokenLogprobs toy_logprobs(const ToyPolicy& policy, const ToyRollout& r, const std::vector<bool>& mask) {
    TokenLogprobs lp;
    lp.current.assign(mask.size(), 0.0);
    lp.behavior.assign(mask.size(), 0.0);
    std::size_t j = 0;
    for (std::size_t k = 0; k < mask.size(); ++k) {
        if (!mask[k]) continue;
        if (j >= r.decisions.size()) throw Error(ErrorCode::AlignmentError, "more unmasked tokens than decisions");
        lp.current[k] = log_prob(policy, r.decisions[j]);
        lp.behavior[k] = r.behavior[j];
        ++j;
    }
    if (j != r.decisions.size()) throw Error(ErrorCode::AlignmentError, "fewer unmasked tokens than decisions");
    return lp;
}

/// Chain rule from per-token gradients to theta.
inline void accumulate_theta_grad(const ToyPolicy& policy, const ToyRollout& r, const std::vector<bool>& mask,
                                  const std::vector<double>& token_grad, double scale,
                                  std::array<double, ToyPolicy::kSize>& grad) {
    std::size_t j = 0;
    for (std::size_t k = 0; k < mask.size(); ++k) {
        if (!mask[k]) continue;
        if (token_grad[k] != 0.0) add_grad_log_prob(policy, r.decisions[j], scale * token_grad[k], grad);
        ++j;
    }
}

struct GroupLoss {
    double loss = 0.0;
    std::array<double, ToyPolicy::kSize> grad{};
    int clipped_tokens = 0;
};

/// Masked objective of one group of toy rollouts and its gradient in theta.
inline GroupLoss toy_group_loss(const ToyPolicy& policy, std::span<const ToyRollout> group,
                                std::span<const double> advantages, const ObjectiveConfig& objective,
                                const std::vector<TokenLogprobs>* reference = nullptr) {
    std::vector<std::vector<bool>> masks;
    std::vector<TokenLogprobs> lps;
    for (std::size_t i = 0; i < group.size(); ++i) {
        masks.push_back(token_mask(group[i].trajectory));
        lps.push_back(toy_logprobs(policy, group[i], masks.back()));
        if (reference != nullptr) lps.back().reference = (*reference)[i].current;
    }
    const auto res = masked_objective(masks, lps, advantages, objective);
    GroupLoss out;
    out.loss = res.loss;
    out.clipped_tokens = res.clipped_tokens;
    for (std::size_t i = 0; i < group.size(); ++i) {
        accumulate_theta_grad(policy, group[i], masks[i], res.grad[i], 1.0, out.grad);
    }
    return out;
}

struct ToyCorpusConfig {
    std::uint64_t seed = 7;
    int size = 64;
    Canvas canvas{4096, 4096};
    int regions = 8;
    int min_side = 64;
    int max_side = 200;

    friend bool operator==(const ToyCorpusConfig&, const ToyCorpusConfig&) = default;
};

inline std::vector<Task> make_toy_corpus(const ToyCorpusConfig& c) {
    SceneOptions options;
    options.min_side = c.min_side;
    options.max_side = c.max_side;
    return make_corpus(c.seed, c.size, c.canvas, c.regions, options);
}

struct ToyTrainConfig {
    int group_size = 8;
    int iterations = 300;
    int tasks_per_iteration = 8;
    double lr = 1.5;
    double clip = 0.2;
    double eps = kDefaultAdvantageEps;
    int ppo_epochs = 1;
    double kl_coef = 0.0;
    bool ordering_indicator = true;
    RewardLevels levels;
    /// Initial template logit for answering directly.
    double direct_prior = 1.5;
    /// Judge every answer correct, through an LLM-judge path that always
    /// says yes.
    bool hack_susceptible_judge = false;
    std::uint64_t seed = 3;
    int parallel = 1;
    ToyCorpusConfig corpus;
    double alpha = kDefaultEnlargeAlpha;
    double fidelity = kDefaultFidelity;

    void check() const {
        if (group_size < 2) throw Error(ErrorCode::InvalidArgument, "group_size must be at least 2");
        if (iterations < 0) throw Error(ErrorCode::InvalidArgument, "iterations must be non-negative");
        if (tasks_per_iteration < 1) throw Error(ErrorCode::InvalidArgument, "tasks_per_iteration must be positive");
        if (ppo_epochs < 1) throw Error(ErrorCode::InvalidArgument, "ppo_epochs must be positive");
        if (!(lr > 0.0) || !std::isfinite(lr)) throw Error(ErrorCode::InvalidArgument, "lr must be positive");
        if (parallel < 1) throw Error(ErrorCode::InvalidArgument, "parallel must be positive");
        levels.check();
    }
};

inline nlohmann::json levels_to_json(const RewardLevels& l) {
    return {{"acc_pos", l.acc_pos}, {"acc_neg", l.acc_neg},       {"fmt_ok", l.fmt_ok},
            {"fmt_bad", l.fmt_bad}, {"tool_bonus", l.tool_bonus}};
}

inline RewardLevels levels_from_json(const nlohmann::json& j, RewardLevels l = {}) {
    l.acc_pos = j.value("acc_pos", l.acc_pos);
    l.acc_neg = j.value("acc_neg", l.acc_neg);
    l.fmt_ok = j.value("fmt_ok", l.fmt_ok);
    l.fmt_bad = j.value("fmt_bad", l.fmt_bad);
    l.tool_bonus = j.value("tool_bonus", l.tool_bonus);
    return l;
}

inline nlohmann::json toy_config_to_json(const ToyTrainConfig& c) {
    return {{"group_size", c.group_size},
            {"iterations", c.iterations},
            {"tasks_per_iteration", c.tasks_per_iteration},
            {"lr", c.lr},
            {"clip", c.clip},
            {"eps", c.eps},
            {"ppo_epochs", c.ppo_epochs},
            {"kl_coef", c.kl_coef},
            {"ordering_indicator", c.ordering_indicator},
            {"levels", levels_to_json(c.levels)},
            {"direct_prior", c.direct_prior},
            {"hack_susceptible_judge", c.hack_susceptible_judge},
            {"seed", c.seed},
            {"corpus",
             {{"seed", c.corpus.seed},
              {"size", c.corpus.size},
              {"canvas", {c.corpus.canvas.width, c.corpus.canvas.height}},
              {"regions", c.corpus.regions},
              {"min_side", c.corpus.min_side},
              {"max_side", c.corpus.max_side}}},
            {"alpha", c.alpha},
            {"fidelity", c.fidelity}};
}

/// Missing keys keep the values already in `c`. `parallel` is a property of
/// the run, not of the result, and is not read here.
inline ToyTrainConfig toy_config_from_json(const nlohmann::json& j, ToyTrainConfig c = {}) {
    c.group_size = j.value("group_size", c.group_size);
    c.iterations = j.value("iterations", c.iterations);
    c.tasks_per_iteration = j.value("tasks_per_iteration", c.tasks_per_iteration);
    c.lr = j.value("lr", c.lr);
    c.clip = j.value("clip", c.clip);
    c.eps = j.value("eps", c.eps);
    c.ppo_epochs = j.value("ppo_epochs", c.ppo_epochs);
    c.kl_coef = j.value("kl_coef", c.kl_coef);
    c.ordering_indicator = j.value("ordering_indicator", c.ordering_indicator);
    if (j.contains("levels")) c.levels = levels_from_json(j.at("levels"), c.levels);
    c.direct_prior = j.value("direct_prior", c.direct_prior);
    c.hack_susceptible_judge = j.value("hack_susceptible_judge", c.hack_susceptible_judge);
    c.seed = j.value("seed", c.seed);
    if (j.contains("corpus")) {
        const auto& k = j.at("corpus");
        c.corpus.seed = k.value("seed", c.corpus.seed);
        c.corpus.size = k.value("size", c.corpus.size);
        if (k.contains("canvas")) c.corpus.canvas = {k.at("canvas").at(0).get<int>(), k.at("canvas").at(1).get<int>()};
        c.corpus.regions = k.value("regions", c.corpus.regions);
        c.corpus.min_side = k.value("min_side", c.corpus.min_side);
        c.corpus.max_side = k.value("max_side", c.corpus.max_side);
    }
    c.alpha = j.value("alpha", c.alpha);
    c.fidelity = j.value("fidelity", c.fidelity);
    return c;
}

struct DynamicsRecord {
    int iteration = 0;
    double mean_reward = 0.0;
    double mean_tool_calls = 0.0;  ///< calls run before the answer, per rollout
    double entropy = 0.0;          ///< mean per-token entropy of sampled decisions
    int hack_count = 0;            ///< rollouts paid the bonus for post-answer calls only
    int post_answer_calls = 0;     ///< all post-answer calls, paid or not
    double accuracy = 0.0;

    friend bool operator==(const DynamicsRecord&, const DynamicsRecord&) = default;
};

struct ToyTrainResult {
    std::vector<DynamicsRecord> records;
    ToyPolicy policy;
};

/// Owns the always-yes judge backend when one is configured.
class ToyEnvHolder {
public:
    explicit ToyEnvHolder(const ToyTrainConfig& c) {
        env_.rollout.alpha = c.alpha;
        env_.levels = c.levels;
        env_.options.use_ordering_indicator = c.ordering_indicator;
        env_.fidelity = c.fidelity;
        if (c.hack_susceptible_judge) {
            judge_backend_ = std::make_unique<ScriptedBackend>(nullptr, fixed_reply("yes"));
            LlmJudge judge;
            judge.backend = judge_backend_.get();
            env_.judge = judge;
        }
    }
    ToyEnvHolder(const ToyEnvHolder&) = delete;
    ToyEnvHolder& operator=(const ToyEnvHolder&) = delete;

    const ToyEnv& env() const noexcept { return env_; }

private:
    ToyEnv env_;
    std::unique_ptr<ScriptedBackend> judge_backend_;
};

inline ToyTrainResult train_toy(const std::vector<Task>& corpus, const ToyTrainConfig& config,
                                const std::function<void(const DynamicsRecord&)>& on_iteration = {}) {
    config.check();
    if (corpus.empty()) throw Error(ErrorCode::InvalidArgument, "training corpus is empty");
    const ToyEnvHolder holder(config);
    const ToyEnv& env = holder.env();
    const ObjectiveConfig objective{config.clip, config.kl_coef};
    const auto G = static_cast<std::size_t>(config.group_size);
    const auto n_tasks = static_cast<std::size_t>(config.tasks_per_iteration);
    const ToyPolicy reference_policy = ToyPolicy::initial(config.direct_prior);

    ToyTrainResult result;
    result.policy = reference_policy;
    for (int it = 0; it < config.iterations; ++it) {
        Rng picker(derive_seed(config.seed, {0x7ea1, static_cast<std::uint64_t>(it)}));
        std::vector<std::size_t> picks(n_tasks);
        for (auto& p : picks) p = static_cast<std::size_t>(picker.uniform_int(0, static_cast<std::int64_t>(corpus.size()) - 1));

        std::vector<ToyRollout> rollouts(n_tasks * G);
        const ToyPolicy behavior = result.policy;
        parallel_for(rollouts.size(), config.parallel, [&](std::size_t k) {
            const std::size_t task = k / G;
            const std::size_t member = k % G;
            const std::uint64_t seed =
                derive_seed(config.seed, {static_cast<std::uint64_t>(it), task, member});
            rollouts[k] = toy_rollout(behavior, corpus[picks[task]], env, seed,
                                      corpus[picks[task]].id + "/it" + std::to_string(it) + "/" + std::to_string(member));
        });

        DynamicsRecord rec;
        rec.iteration = it;
        double entropy_sum = 0.0;
        std::size_t decisions = 0;
        for (const auto& r : rollouts) {
            rec.mean_reward += r.reward.total;
            rec.mean_tool_calls += r.trajectory.executed_calls();
            rec.accuracy += r.reward.ind_acc_pos ? 1.0 : 0.0;
            rec.hack_count += is_rewarded_hack(r.trajectory, r.reward) ? 1 : 0;
            rec.post_answer_calls += detect_hacking(r.trajectory);
            for (double h : r.entropies) entropy_sum += h;
            decisions += r.entropies.size();
        }
        const double n = static_cast<double>(rollouts.size());
        rec.mean_reward /= n;
        rec.mean_tool_calls /= n;
        rec.accuracy /= n;
        rec.entropy = decisions > 0 ? entropy_sum / static_cast<double>(decisions) : 0.0;

        std::vector<std::vector<double>> advantages(n_tasks);
        for (std::size_t task = 0; task < n_tasks; ++task) {
            std::vector<double> totals;
            for (std::size_t m = 0; m < G; ++m) totals.push_back(rollouts[task * G + m].reward.total);
            advantages[task] = compute_advantages(totals, config.eps).advantages;
        }

        std::vector<std::vector<TokenLogprobs>> reference(n_tasks);
        if (config.kl_coef != 0.0) {
            for (std::size_t task = 0; task < n_tasks; ++task) {
                for (std::size_t m = 0; m < G; ++m) {
                    const auto& r = rollouts[task * G + m];
                    reference[task].push_back(toy_logprobs(reference_policy, r, token_mask(r.trajectory)));
                }
            }
        }

        for (int epoch = 0; epoch < config.ppo_epochs; ++epoch) {
            std::array<double, ToyPolicy::kSize> grad{};
            for (std::size_t task = 0; task < n_tasks; ++task) {
                const auto group = std::span<const ToyRollout>(rollouts).subspan(task * G, G);
                const auto gl = toy_group_loss(result.policy, group, advantages[task], objective,
                                               config.kl_coef != 0.0 ? &reference[task] : nullptr);
                for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += gl.grad[i] / static_cast<double>(n_tasks);
            }
            for (std::size_t i = 0; i < grad.size(); ++i) {
                if (!std::isfinite(grad[i])) {
                    throw Error(ErrorCode::NumericalError, "non-finite gradient at iteration " + std::to_string(it));
                }
                result.policy.theta[i] -= config.lr * grad[i];
            }
        }

        if (on_iteration) on_iteration(rec);
        result.records.push_back(rec);
    }
    return result;
}

struct ToyEvaluation {
    int rollouts = 0;
    double mean_tool_calls = 0.0;
    double accuracy = 0.0;  ///< exact match, whatever the training judge
    double mean_reward = 0.0;
    int post_answer_calls = 0;
};

/// Samples `samples_per_task` rollouts per task and scores them with the
/// exact-match judge.
inline ToyEvaluation evaluate_toy(const ToyPolicy& policy, const std::vector<Task>& corpus, const ToyTrainConfig& config,
                                  int samples_per_task = 4, std::uint64_t seed = 0xe7a1) {
    ToyTrainConfig exact = config;
    exact.hack_susceptible_judge = false;
    const ToyEnvHolder holder(exact);
    const auto per = static_cast<std::size_t>(samples_per_task);
    std::vector<ToyRollout> rollouts(corpus.size() * per);
    parallel_for(rollouts.size(), config.parallel, [&](std::size_t k) {
        rollouts[k] = toy_rollout(policy, corpus[k / per], holder.env(), derive_seed(seed, {k / per, k % per}));
    });
    ToyEvaluation out;
    out.rollouts = static_cast<int>(rollouts.size());
    for (const auto& r : rollouts) {
        out.mean_tool_calls += r.trajectory.executed_calls();
        out.accuracy += r.reward.ind_acc_pos ? 1.0 : 0.0;
        out.mean_reward += r.reward.total;
        out.post_answer_calls += detect_hacking(r.trajectory);
    }
    if (!rollouts.empty()) {
        const double n = static_cast<double>(rollouts.size());
        out.mean_tool_calls /= n;
        out.accuracy /= n;
        out.mean_reward /= n;
    }
    return out;
}

/// Dynamics table: a config comment line, a header, one row per iteration.
inline void write_dynamics_csv(std::ostream& os, const std::vector<DynamicsRecord>& records,
                               const nlohmann::json& config) {
    os << "# config: " << config.dump() << "\n";
    os << "iteration,mean_reward,mean_tool_calls,entropy,hack_count\n";
    char line[160];
    for (const auto& r : records) {
        std::snprintf(line, sizeof line, "%d,%.6f,%.6f,%.6f,%d\n", r.iteration, r.mean_reward, r.mean_tool_calls,
                      r.entropy, r.hack_count);
        os << line;
    }
}

inline nlohmann::json policy_to_json(const ToyPolicy& p) {
    auto slice = [&](std::size_t off, std::size_t n) {
        return std::vector<double>(p.theta.begin() + static_cast<std::ptrdiff_t>(off),
                                   p.theta.begin() + static_cast<std::ptrdiff_t>(off + n));
    };
    return {{"template", slice(ToyPolicy::kTemplate, 3)},
            {"slot", slice(ToyPolicy::kSlot, kLabelWords.size())},
            {"ground", slice(ToyPolicy::kGround, 2)},
            {"task_type", slice(ToyPolicy::kTaskType, 3)},
            {"prompt", slice(ToyPolicy::kPrompt, 3)}};
}

inline ToyPolicy policy_from_json(const nlohmann::json& j) {
    ToyPolicy p;
    auto fill = [&](const char* key, std::size_t off, std::size_t n) {
        const auto v = j.at(key).get<std::vector<double>>();
        if (v.size() != n) throw Error(ErrorCode::ParseError, std::string("policy field '") + key + "' has wrong size");
        std::copy(v.begin(), v.end(), p.theta.begin() + static_cast<std::ptrdiff_t>(off));
    };
    fill("template", ToyPolicy::kTemplate, 3);
    fill("slot", ToyPolicy::kSlot, kLabelWords.size());
    fill("ground", ToyPolicy::kGround, 2);
    fill("task_type", ToyPolicy::kTaskType, 3);
    fill("prompt", ToyPolicy::kPrompt, 3);
    return p;
}

inline constexpr int kPolicySchemaVersion = 1;

inline std::string write_policy_checkpoint(const ToyPolicy& p, const nlohmann::json& config) {
    return nlohmann::json{{"schema", "scot.toy_policy"},
                          {"version", kPolicySchemaVersion},
                          {"theta", policy_to_json(p)},
                          {"config", config}}
        .dump(2);
}

inline ToyPolicy read_policy_checkpoint(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(e.byte > 0 ? e.byte - 1 : 0, e.what());
    }
    if (!j.is_object() || j.value("schema", std::string{}) != "scot.toy_policy") {
        throw ParseError(0, "not a toy policy checkpoint");
    }
    if (j.value("version", 0) != kPolicySchemaVersion) throw VersionError(kPolicySchemaVersion, j.value("version", 0));
    try {
        return policy_from_json(j.at("theta"));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(0, std::string("policy: ") + e.what());
    } catch (const ParseError&) {
        throw;
    } catch (const Error& e) {
        if (e.code() != ErrorCode::ParseError) throw;
        throw ParseError(0, e.what());
    }
}

}  // namespace scot
