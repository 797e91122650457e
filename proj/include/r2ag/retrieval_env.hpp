#pragma once

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "r2ag/common.hpp"
#include "r2ag/concept_linker.hpp"
#include "r2ag/embeddings.hpp"
#include "r2ag/kg_store.hpp"

namespace r2ag {

inline constexpr std::string_view kGroupLeapLabel = "group leap";

enum class StepKind : std::uint8_t { Origin, Relation, GroupLeap };

struct PathStep {
    StepKind kind = StepKind::Origin;
    LabelIndex label = 0;  // meaningful only for StepKind::Relation
    ConceptIndex concept_index = 0;
    friend bool operator==(const PathStep&, const PathStep&) = default;
};

struct ReasoningPath {
    ConceptIndex origin = 0;
    std::vector<PathStep> steps;  // steps.front() is the origin
    bool frozen = false;

    [[nodiscard]] ConceptIndex tail() const { return steps.back().concept_index; }

    /// Distinct concepts on the path, sorted by index.
    [[nodiscard]] std::vector<ConceptIndex> concepts() const
    {
        std::vector<ConceptIndex> out;
        out.reserve(steps.size());
        for (const auto& s : steps) {
            out.push_back(s.concept_index);
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    friend bool operator==(const ReasoningPath&, const ReasoningPath&) = default;
};

struct RolloutState {
    int step = 0;
    int horizon = 0;
    GroupIndex current = 0;   // most recently visited group
    GroupIndex previous = 0;  // group visited before `current`
    std::vector<ConceptIndex> explored;  // sorted union of path concepts
    std::vector<ReasoningPath> paths;

    [[nodiscard]] bool finished() const noexcept { return step >= horizon; }
};

/// Candidate next groups in index order and their [k_prev || k_next] embeddings.
struct ActionSpace {
    std::vector<GroupIndex> groups;
    Matrix embeddings;
};

/// What happened during one environment step.
struct StepResult {
    GroupIndex requested;
    GroupIndex effective;  // differs from `requested` when a leap degraded to a stay
    bool leaped;
};

/// Per-patient retrieval environment over an immutable graph and embedding table.
///
/// The group trajectory is shared by all paths of a rollout. A step either
/// stays in the current group or leaps: every live path first connects to the
/// most path-similar concept of the target group that is already on a path or
/// is an unexplored keyword, then retrieves one in-group neighbor.
class RetrievalEnvironment {
public:
    RetrievalEnvironment(const KnowledgeGraph& kg, const EmbeddingTable& table, const GroupVectors& groups,
                         KeywordSet keywords, int horizon)
        : kg_(&kg), table_(&table), groups_(&groups), keywords_(std::move(keywords)), horizon_(horizon)
    {
        if (keywords_.empty()) {
            throw std::invalid_argument("retrieval environment needs at least one keyword");
        }
        if (horizon_ < 1) {
            throw std::invalid_argument("horizon must be >= 1");
        }
        initial_ = initial_group(keywords_);
        scarce_ = scarce_group(keywords_, kg);
        keyword_concepts_ = keywords_.concepts();
        keyword_avg_ = avg_embedding(table, keyword_concepts_);
    }

    [[nodiscard]] GroupIndex initial() const noexcept { return initial_; }
    [[nodiscard]] GroupIndex scarce() const noexcept { return scarce_; }
    [[nodiscard]] int horizon() const noexcept { return horizon_; }
    [[nodiscard]] const KeywordSet& keywords() const noexcept { return keywords_; }
    [[nodiscard]] const Vector& keyword_average() const noexcept { return keyword_avg_; }
    [[nodiscard]] const KnowledgeGraph& graph() const noexcept { return *kg_; }
    [[nodiscard]] const EmbeddingTable& table() const noexcept { return *table_; }
    [[nodiscard]] const GroupVectors& group_vectors() const noexcept { return *groups_; }

    /// One single-concept path per keyword lying in the initial group.
    [[nodiscard]] RolloutState reset() const
    {
        RolloutState rs;
        rs.horizon = horizon_;
        rs.current = initial_;
        rs.previous = initial_;
        for (ConceptIndex c : keyword_concepts_) {
            if (kg_->group_of(c) == initial_) {
                rs.paths.push_back({c, {{StepKind::Origin, 0, c}}, false});
            }
        }
        if (rs.paths.empty()) {
            throw std::invalid_argument("no keyword lies in the initial group");
        }
        refresh_explored(rs);
        return rs;
    }

    /// [k_current || k_scarce], length 4d.
    [[nodiscard]] Vector group_state(const RolloutState& rs) const
    {
        const auto w = static_cast<Eigen::Index>(groups_->width());
        Vector s(2 * w);
        s.head(w) = groups_->row(rs.current);
        s.tail(w) = groups_->row(scarce_);
        return s;
    }

    /// Unprojected mean of explored concept vectors.
    [[nodiscard]] Vector concept_average(const RolloutState& rs) const { return avg_embedding(*table_, rs.explored); }

    [[nodiscard]] ActionSpace action_space(const RolloutState& rs) const
    {
        const auto k = kg_->group_count();
        const auto w = static_cast<Eigen::Index>(groups_->width());
        ActionSpace as;
        as.groups.resize(k);
        as.embeddings.resize(static_cast<Eigen::Index>(k), 2 * w);
        for (GroupIndex g = 0; g < k; ++g) {
            as.groups[g] = g;
            as.embeddings.row(g).head(w) = groups_->row(rs.current).transpose();
            as.embeddings.row(g).tail(w) = groups_->row(g).transpose();
        }
        return as;
    }

    /// Concepts of `target` already on a path, plus keywords of `target` not on any path.
    [[nodiscard]] std::vector<ConceptIndex> leap_candidates(const RolloutState& rs, GroupIndex target) const
    {
        std::vector<ConceptIndex> pool;
        for (ConceptIndex c : rs.explored) {
            if (kg_->group_of(c) == target) {
                pool.push_back(c);
            }
        }
        for (ConceptIndex c : keyword_concepts_) {
            if (kg_->group_of(c) == target && !std::binary_search(rs.explored.begin(), rs.explored.end(), c)) {
                pool.push_back(c);
            }
        }
        std::sort(pool.begin(), pool.end());
        return pool;
    }

    /// Appends a group-leap step to every live path. Returns the chosen anchor
    /// per path (nullopt for frozen paths or an empty candidate pool).
    std::vector<std::optional<ConceptIndex>> connect(RolloutState& rs, GroupIndex target) const
    {
        std::vector<std::optional<ConceptIndex>> chosen(rs.paths.size());
        const auto pool = leap_candidates(rs, target);
        if (pool.empty()) {
            return chosen;
        }
        for (std::size_t p = 0; p < rs.paths.size(); ++p) {
            auto& path = rs.paths[p];
            if (path.frozen) {
                continue;
            }
            const Vector path_avg = avg_embedding(*table_, path.concepts());
            ConceptIndex best = pool.front();
            double best_score = cosine(table_->row(best), path_avg);
            for (std::size_t i = 1; i < pool.size(); ++i) {
                const double s = cosine(table_->row(pool[i]), path_avg);
                if (s > best_score) {
                    best_score = s;
                    best = pool[i];
                }
            }
            path.steps.push_back({StepKind::GroupLeap, 0, best});
            chosen[p] = best;
        }
        refresh_explored(rs);
        return chosen;
    }

    /// Extends every live path by its best in-group neighbor of the tail, scored
    /// by the mean of cosine to the keyword average and cosine to the path
    /// average. Paths whose tail has no neighbor in `group` are frozen.
    void retrieve(RolloutState& rs, GroupIndex group) const
    {
        for (auto& path : rs.paths) {
            if (path.frozen) {
                continue;
            }
            const Vector path_avg = avg_embedding(*table_, path.concepts());
            std::optional<Neighbor> best;
            double best_score = 0.0;
            kg_->for_each_neighbor_in_group(path.tail(), group, [&](const Neighbor& n) {
                const auto v = table_->row(n.target);
                const double s = 0.5 * (cosine(v, keyword_avg_) + cosine(v, path_avg));
                if (!best || s > best_score) {
                    best = n;
                    best_score = s;
                }
            });
            if (!best) {
                path.frozen = true;
                continue;
            }
            path.steps.push_back({StepKind::Relation, best->label, best->target});
        }
        refresh_explored(rs);
    }

    StepResult step(RolloutState& rs, GroupIndex action) const
    {
        if (rs.finished()) {
            throw std::logic_error("step on a finished rollout");
        }
        if (action >= kg_->group_count()) {
            throw std::out_of_range("action group index out of range");
        }
        StepResult result{action, rs.current, false};
        if (action != rs.current && !leap_candidates(rs, action).empty()) {
            connect(rs, action);
            result.effective = action;
            result.leaped = true;
        }
        retrieve(rs, result.effective);
        rs.previous = rs.current;
        rs.current = result.effective;
        ++rs.step;
        return result;
    }

private:
    static void refresh_explored(RolloutState& rs)
    {
        rs.explored.clear();
        for (const auto& p : rs.paths) {
            for (const auto& s : p.steps) {
                rs.explored.push_back(s.concept_index);
            }
        }
        std::sort(rs.explored.begin(), rs.explored.end());
        rs.explored.erase(std::unique(rs.explored.begin(), rs.explored.end()), rs.explored.end());
    }

    const KnowledgeGraph* kg_;
    const EmbeddingTable* table_;
    const GroupVectors* groups_;
    KeywordSet keywords_;
    int horizon_;
    GroupIndex initial_ = 0;
    GroupIndex scarce_ = 0;
    std::vector<ConceptIndex> keyword_concepts_;
    Vector keyword_avg_;
};

}  // namespace r2ag
