#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "r2ag/concept_linker.hpp"
#include "r2ag/embeddings.hpp"
#include "r2ag/policy_net.hpp"
#include "r2ag/retrieval_env.hpp"
#include "r2ag/rng.hpp"

namespace r2ag {

struct TrainConfig {
    int horizon = 5;             // retrieval steps per episode
    double discount = 0.1;       // step t of T is weighted discount^(T - t)
    double reward_weight = 10;   // weight of the path/ground-truth cosine term
    int group_size = 4;          // rollouts per patient
    double learning_rate = 1e-3;
    int epochs = 1;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (horizon < 1) {
            throw std::invalid_argument("horizon must be >= 1");
        }
        if (!(discount >= 0.0 && discount <= 1.0)) {
            throw std::invalid_argument("discount must lie in [0, 1]");
        }
        if (!(reward_weight >= 0.0)) {
            throw std::invalid_argument("reward weight must be >= 0");
        }
        if (group_size < 2) {
            throw std::invalid_argument("rollouts per patient must be >= 2");
        }
        if (!std::isfinite(learning_rate)) {
            throw std::invalid_argument("learning rate must be finite");
        }
        if (epochs < 0) {
            throw std::invalid_argument("epochs must be >= 0");
        }
    }
};

/// Concepts linked from a reference instruction and their mean vector.
struct GroundTruth {
    std::vector<ConceptIndex> concepts;  // sorted
    Vector average;

    [[nodiscard]] bool empty() const noexcept { return concepts.empty(); }

    static GroundTruth from(std::vector<ConceptIndex> concepts, const EmbeddingTable& table)
    {
        GroundTruth gt;
        std::sort(concepts.begin(), concepts.end());
        concepts.erase(std::unique(concepts.begin(), concepts.end()), concepts.end());
        gt.concepts = std::move(concepts);
        if (!gt.concepts.empty()) {
            gt.average = avg_embedding(table, gt.concepts);
        }
        return gt;
    }
};

/// Ground-truth hits over distinct path concepts plus weighted cosine between
/// the path average and the ground-truth average. Zero when the ground truth is empty.
inline double path_reward(const ReasoningPath& path, const GroundTruth& gt, const EmbeddingTable& table,
                          double reward_weight)
{
    if (gt.empty()) {
        return 0.0;
    }
    const auto concepts = path.concepts();
    std::size_t hits = 0;
    for (ConceptIndex c : concepts) {
        if (std::binary_search(gt.concepts.begin(), gt.concepts.end(), c)) {
            ++hits;
        }
    }
    return static_cast<double>(hits) + reward_weight * cosine(avg_embedding(table, concepts), gt.average);
}

/// Mean path reward over the paths of one rollout.
inline double rollout_reward(std::span<const ReasoningPath> paths, const GroundTruth& gt, const EmbeddingTable& table,
                             double reward_weight)
{
    if (paths.empty()) {
        throw std::invalid_argument("rollout_reward: rollout has no paths");
    }
    double sum = 0.0;
    for (const auto& p : paths) {
        sum += path_reward(p, gt, table, reward_weight);
    }
    return sum / static_cast<double>(paths.size());
}

/// Softmax over the rollout rewards of one patient.
inline std::vector<double> relative_rewards(std::span<const double> rewards)
{
    if (rewards.size() < 2) {
        throw std::invalid_argument("relative_rewards: need at least two rollouts");
    }
    for (double r : rewards) {
        if (!std::isfinite(r)) {
            throw std::invalid_argument("relative_rewards: non-finite reward");
        }
    }
    const double mx = *std::max_element(rewards.begin(), rewards.end());
    std::vector<double> out(rewards.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < rewards.size(); ++i) {
        out[i] = std::exp(rewards[i] - mx);
        sum += out[i];
    }
    for (double& v : out) {
        v /= sum;
    }
    return out;
}

enum class ActionMode { Sample, Greedy, Uniform };

struct RolloutRecord {
    std::vector<std::size_t> actions;
    std::vector<ForwardCache> caches;  // empty for uniform rollouts
    std::vector<ReasoningPath> paths;
    double reward = 0.0;
    double relative_reward = 0.0;
};

/// Runs one episode of `env.horizon()` steps. Uniform mode skips the policy entirely.
inline RolloutRecord run_rollout(const PolicyParams& params, const RetrievalEnvironment& env, ActionMode mode, Rng& rng)
{
    RolloutRecord rec;
    RolloutState rs = env.reset();
    const std::size_t k = env.graph().group_count();
    while (!rs.finished()) {
        std::size_t a = 0;
        if (mode == ActionMode::Uniform) {
            a = rng.below(k);
        } else {
            auto as = env.action_space(rs);
            auto cache = forward(params, env.group_state(rs), env.concept_average(rs), as.embeddings);
            a = mode == ActionMode::Greedy ? greedy_action(cache.probs) : sample_action(cache.probs, rng);
            rec.caches.push_back(std::move(cache));
        }
        // The sampled action is what gets logged, even when the environment
        // degrades a leap to a stay.
        env.step(rs, static_cast<GroupIndex>(a));
        rec.actions.push_back(a);
    }
    rec.paths = std::move(rs.paths);
    return rec;
}

/// Replays a fixed action sequence, recording policy caches along the way.
inline RolloutRecord replay_rollout(const PolicyParams& params, const RetrievalEnvironment& env,
                                    std::span<const std::size_t> actions)
{
    RolloutRecord rec;
    RolloutState rs = env.reset();
    for (std::size_t a : actions) {
        auto as = env.action_space(rs);
        rec.caches.push_back(forward(params, env.group_state(rs), env.concept_average(rs), as.embeddings));
        env.step(rs, static_cast<GroupIndex>(a));
        rec.actions.push_back(a);
    }
    rec.paths = std::move(rs.paths);
    return rec;
}

/// Weight of step t (1-based) of a T-step episode; 0^0 is taken as 1.
inline double step_weight(double discount, int t, int horizon)
{
    const int power = horizon - t;
    return power == 0 ? 1.0 : std::pow(discount, power);
}

/// (1/G) sum_i sum_t discount^(T-t) * relative_i * grad log pi(a_t | s_t).
inline GradientBundle accumulate_gradient(const PolicyParams& params, std::span<const RolloutRecord> rollouts,
                                          double discount)
{
    GradientBundle total = GradientBundle::zeros_like(params);
    const double inv_g = 1.0 / static_cast<double>(rollouts.size());
    for (const auto& rec : rollouts) {
        const int horizon = static_cast<int>(rec.actions.size());
        if (rec.caches.size() != rec.actions.size()) {
            throw std::invalid_argument("accumulate_gradient: rollout without policy caches");
        }
        for (int t = 1; t <= horizon; ++t) {
            const double w = inv_g * step_weight(discount, t, horizon) * rec.relative_reward;
            if (w == 0.0) {
                continue;
            }
            const auto idx = static_cast<std::size_t>(t - 1);
            total.add_scaled(w, logprob_backward(params, rec.caches[idx], rec.actions[idx]));
        }
    }
    return total;
}

/// A linked patient ready for rollouts.
struct TrainingExample {
    std::string id;
    RetrievalEnvironment env;
    GroundTruth truth;
};

/// Links a patient; nullopt when it cannot seed any path or has no reference.
inline std::optional<TrainingExample> prepare_example(const Patient& patient, const ConceptLinker& linker,
                                                      const EmbeddingTable& table, const GroupVectors& groups,
                                                      int horizon, bool require_reference = true)
{
    auto keywords = linker.link(patient.pre_admission);
    if (keywords.empty()) {
        return std::nullopt;
    }
    if (require_reference && !patient.reference) {
        return std::nullopt;
    }
    GroundTruth truth;
    if (patient.reference) {
        truth = GroundTruth::from(linker.link(*patient.reference).concepts(), table);
    }
    return TrainingExample{patient.id,
                           RetrievalEnvironment(linker.graph(), table, groups, std::move(keywords), horizon),
                           std::move(truth)};
}

struct PatientUpdate {
    GradientBundle gradient;
    std::vector<double> rewards;
    std::vector<double> relative;
};

/// G sampled rollouts from one params snapshot, softmax-normalized rewards,
/// and the discounted log-likelihood gradient.
inline PatientUpdate train_patient(const PolicyParams& params, const TrainingExample& ex, const TrainConfig& cfg,
                                   Rng& rng)
{
    std::vector<RolloutRecord> rollouts;
    rollouts.reserve(static_cast<std::size_t>(cfg.group_size));
    PatientUpdate up;
    for (int i = 0; i < cfg.group_size; ++i) {
        auto rec = run_rollout(params, ex.env, ActionMode::Sample, rng);
        rec.reward = rollout_reward(rec.paths, ex.truth, ex.env.table(), cfg.reward_weight);
        up.rewards.push_back(rec.reward);
        rollouts.push_back(std::move(rec));
    }
    up.relative = relative_rewards(up.rewards);
    for (std::size_t i = 0; i < rollouts.size(); ++i) {
        rollouts[i].relative_reward = up.relative[i];
    }
    up.gradient = accumulate_gradient(params, rollouts, cfg.discount);
    return up;
}

struct EpisodeLog {
    int epoch = 0;
    std::string patient;
    double mean_reward = 0.0;
    std::vector<double> relative;
    bool skipped = false;
};

inline nlohmann::ordered_json to_json(const EpisodeLog& e)
{
    nlohmann::ordered_json j{{"epoch", e.epoch}, {"patient", e.patient}};
    if (e.skipped) {
        j["mean_R"] = nullptr;
    } else {
        j["mean_R"] = e.mean_reward;
    }
    j["relative_rewards"] = e.relative;
    j["skipped"] = e.skipped;
    return j;
}

struct TrainResult {
    PolicyParams params;
    std::vector<EpisodeLog> log;             // trained episodes and skip markers
    std::vector<double> episode_rewards;     // mean rollout reward per trained episode
    std::vector<double> epoch_mean_rewards;
    std::size_t skipped_patients = 0;
    std::size_t empty_truth_patients = 0;
};

/// Per-patient gradient ascent over the corpus for cfg.epochs epochs.
inline TrainResult train(const std::vector<Patient>& corpus, const ConceptLinker& linker, const EmbeddingTable& table,
                         const TrainConfig& cfg, PolicyParams init,
                         const std::function<void(const EpisodeLog&)>& on_episode = {})
{
    cfg.validate();
    if (corpus.empty()) {
        throw DataError("training corpus is empty");
    }
    if (init.dim != table.dim()) {
        throw std::invalid_argument("policy dimension does not match embedding dimension");
    }
    const GroupVectors groups(linker.graph(), table);
    std::vector<std::optional<TrainingExample>> examples;
    TrainResult result;
    for (const auto& p : corpus) {
        examples.push_back(prepare_example(p, linker, table, groups, cfg.horizon));
        if (!examples.back()) {
            ++result.skipped_patients;
        } else if (examples.back()->truth.empty()) {
            ++result.empty_truth_patients;
        }
    }
    if (result.skipped_patients == corpus.size()) {
        throw DataError("every patient was skipped: none has a linkable pre-admission text and a reference");
    }

    result.params = std::move(init);
    Rng rng(cfg.seed);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_sum = 0.0;
        std::size_t epoch_n = 0;
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            EpisodeLog entry;
            entry.epoch = epoch;
            entry.patient = corpus[i].id;
            if (!examples[i]) {
                entry.skipped = true;
            } else {
                auto up = train_patient(result.params, *examples[i], cfg, rng);
                result.params.add_scaled(cfg.learning_rate, up.gradient);
                double mean = 0.0;
                for (double r : up.rewards) {
                    mean += r;
                }
                mean /= static_cast<double>(up.rewards.size());
                entry.mean_reward = mean;
                entry.relative = std::move(up.relative);
                result.episode_rewards.push_back(mean);
                epoch_sum += mean;
                ++epoch_n;
            }
            if (on_episode) {
                on_episode(entry);
            }
            result.log.push_back(std::move(entry));
        }
        result.epoch_mean_rewards.push_back(epoch_n ? epoch_sum / static_cast<double>(epoch_n) : 0.0);
    }
    return result;
}

/// Mean rollout reward of a fixed policy (or uniform-random actions) over the given patients.
inline double mean_policy_reward(const PolicyParams& params, const std::vector<Patient>& patients,
                                 const ConceptLinker& linker, const EmbeddingTable& table, const TrainConfig& cfg,
                                 ActionMode mode, int rollouts_per_patient, std::uint64_t seed)
{
    const GroupVectors groups(linker.graph(), table);
    Rng rng(seed);
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& p : patients) {
        auto ex = prepare_example(p, linker, table, groups, cfg.horizon);
        if (!ex) {
            continue;
        }
        for (int i = 0; i < rollouts_per_patient; ++i) {
            auto rec = run_rollout(params, ex->env, mode, rng);
            sum += rollout_reward(rec.paths, ex->truth, table, cfg.reward_weight);
            ++n;
        }
    }
    if (n == 0) {
        throw DataError("no evaluable patients");
    }
    return sum / static_cast<double>(n);
}

}  // namespace r2ag
