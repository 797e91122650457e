#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "r2ag/concept_linker.hpp"
#include "r2ag/kg_store.hpp"
#include "r2ag/rng.hpp"

namespace r2ag::synth {

struct SynthSpec {
    std::size_t groups = 15;
    std::size_t concepts_per_group = 50;
    double intra_edge_prob = 0.05;
    double cross_edge_prob = 0.001;
    std::size_t patients = 200;
    std::size_t keywords_per_patient = 4;  // drawn from the patient's dominant group
    std::size_t side_groups = 3;           // further groups contributing one keyword each
    std::size_t truth_per_patient = 8;
    double skew = 0.875;                   // fraction of ground truth outside the dominant group
    int horizon = 5;
    std::uint64_t seed = 0;

    void validate() const
    {
        auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
        if (groups < 2) {
            throw std::invalid_argument("synth: need at least two groups");
        }
        if (concepts_per_group < 2) {
            throw std::invalid_argument("synth: need at least two concepts per group");
        }
        if (!prob(intra_edge_prob) || !prob(cross_edge_prob) || !prob(skew)) {
            throw std::invalid_argument("synth: probabilities and skew must lie in [0, 1]");
        }
        if (keywords_per_patient < 1 || keywords_per_patient > concepts_per_group) {
            throw std::invalid_argument("synth: keywords per patient must be in [1, concepts per group]");
        }
        if (side_groups + 1 > groups) {
            throw std::invalid_argument("synth: too many side groups for the group count");
        }
        if (skew > 0.0 && side_groups == 0) {
            throw std::invalid_argument("synth: skew > 0 needs at least one side group");
        }
        if (horizon < 1) {
            throw std::invalid_argument("synth: horizon must be >= 1");
        }
    }
};

/// Embedding width and step size used for synthetic runs. Production uses
/// 768-dimensional encoder vectors; the toy graphs need far fewer.
inline constexpr std::size_t kEmbeddingDim = 16;
inline constexpr double kLearningRate = 0.1;

inline const std::array<const char*, 15> kGroupNames = {
    "Activities & Behaviors", "Anatomy",     "Chemicals & Drugs", "Concepts & Ideas", "Devices",
    "Disorders",              "Genes & Molecular Sequences",     "Geographic Areas", "Living Beings",
    "Objects",                "Occupations", "Organizations",    "Phenomena",        "Physiology",
    "Procedures"};

inline const std::array<const char*, 8> kRelationLabels = {
    "associated with", "cause of",        "has causative agent", "has finding context",
    "has finding site", "interprets",     "isa",                 "may treat"};

inline std::string group_name(std::size_t g)
{
    if (g < kGroupNames.size()) {
        return kGroupNames[g];
    }
    return "Group " + std::to_string(g + 1);
}

/// Words used by the note templates; generated concept names never collide with them.
inline const std::unordered_set<std::string>& template_words()
{
    static const std::unordered_set<std::string> words = [] {
        std::unordered_set<std::string> w;
        const char* templates[] = {
            "Patient presents with and",  "History is notable for",  "Also reports",
            "Allergies none known",       "You were treated for",    "During your stay we addressed",
            "Please continue to monitor", "Follow up regarding",     "Related concepts",
        };
        for (const char* t : templates) {
            for (auto& x : text::words(t)) {
                w.insert(x);
            }
        }
        return w;
    }();
    return words;
}

/// Pronounceable single-token names: consonant-vowel syllables.
class NameGenerator {
public:
    explicit NameGenerator(Rng& rng) : rng_(&rng) {}

    std::string next()
    {
        static constexpr std::string_view consonants = "bdfgklmnprstvz";
        static constexpr std::string_view vowels = "aeiou";
        while (true) {
            const std::size_t syllables = 3 + rng_->below(2);
            std::string name;
            for (std::size_t s = 0; s < syllables; ++s) {
                name += consonants[rng_->below(consonants.size())];
                name += vowels[rng_->below(vowels.size())];
            }
            if (rng_->bernoulli(0.5)) {
                name += consonants[rng_->below(consonants.size())];
            }
            if (!template_words().count(name) && used_.insert(name).second) {
                return name;
            }
        }
    }

private:
    Rng* rng_;
    std::unordered_set<std::string> used_;
};

inline std::string concept_id(std::size_t i)
{
    std::string digits = std::to_string(i);
    return "C" + std::string(digits.size() < 6 ? 6 - digits.size() : 0, '0') + digits;
}

/// K groups of synthetic concepts. Each group gets a random spanning tree with
/// edges in both directions (so every concept has an in-group out-neighbor),
/// then independent intra- and cross-group edges.
inline KnowledgeGraph gen_kg(const SynthSpec& spec)
{
    spec.validate();
    Rng rng(mix64(spec.seed) ^ 0x6b67ULL);
    NameGenerator names(rng);
    const std::size_t n = spec.concepts_per_group;
    const std::size_t total = spec.groups * n;

    std::vector<ConceptRecord> concepts;
    concepts.reserve(total);
    for (std::size_t g = 0; g < spec.groups; ++g) {
        for (std::size_t i = 0; i < n; ++i) {
            concepts.push_back({concept_id(g * n + i), names.next(), group_name(g), 0});
        }
    }

    auto label = [&]() { return std::string(kRelationLabels[rng.below(kRelationLabels.size())]); };
    std::vector<EdgeRecord> edges;
    std::vector<char> linked(total * total, 0);
    auto add = [&](std::size_t u, std::size_t v) {
        if (!linked[u * total + v]) {
            linked[u * total + v] = 1;
            edges.push_back({concepts[u].id, label(), concepts[v].id, 0});
        }
    };

    for (std::size_t g = 0; g < spec.groups; ++g) {
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) {
            order[i] = g * n + i;
        }
        rng.shuffle(order);
        for (std::size_t i = 1; i < n; ++i) {
            const std::size_t parent = order[rng.below(i)];
            add(parent, order[i]);
            add(order[i], parent);
        }
        for (std::size_t u = g * n; u < (g + 1) * n; ++u) {
            for (std::size_t v = g * n; v < (g + 1) * n; ++v) {
                if (u != v && !linked[u * total + v] && rng.bernoulli(spec.intra_edge_prob)) {
                    add(u, v);
                }
            }
        }
    }
    if (spec.cross_edge_prob > 0.0) {
        for (std::size_t u = 0; u < total; ++u) {
            for (std::size_t v = 0; v < total; ++v) {
                if (u / n != v / n && rng.bernoulli(spec.cross_edge_prob)) {
                    add(u, v);
                }
            }
        }
    }
    return KnowledgeGraph::build(std::move(concepts), std::move(edges));
}

/// A generated patient plus the structure it was built from.
struct SynthPatient {
    Patient patient;
    GroupIndex dominant = 0;
    GroupIndex partner = 0;  // side group that holds the out-of-group ground truth
    std::vector<ConceptIndex> keywords;
    std::vector<ConceptIndex> truth;
};

/// Concepts of `group` within `hops` in-group steps of any seed (seeds excluded), sorted.
inline std::vector<ConceptIndex> in_group_ball(const KnowledgeGraph& kg, const std::vector<ConceptIndex>& seeds,
                                               GroupIndex group, int hops)
{
    std::vector<int> dist(kg.concept_count(), -1);
    std::deque<ConceptIndex> queue;
    for (ConceptIndex s : seeds) {
        if (kg.group_of(s) == group && dist[s] < 0) {
            dist[s] = 0;
            queue.push_back(s);
        }
    }
    std::vector<ConceptIndex> out;
    while (!queue.empty()) {
        const ConceptIndex c = queue.front();
        queue.pop_front();
        if (dist[c] >= hops) {
            continue;
        }
        kg.for_each_neighbor_in_group(c, group, [&](const Neighbor& nb) {
            if (dist[nb.target] < 0) {
                dist[nb.target] = dist[c] + 1;
                out.push_back(nb.target);
                queue.push_back(nb.target);
            }
        });
    }
    std::sort(out.begin(), out.end());
    return out;
}

namespace detail {

inline std::string join_names(const KnowledgeGraph& kg, const std::vector<ConceptIndex>& cs, std::size_t from,
                              std::size_t to)
{
    std::string out;
    for (std::size_t i = from; i < to; ++i) {
        if (i > from) {
            out += (i + 1 == to) ? " and " : ", ";
        }
        out += kg.concept_at(cs[i]).name;
    }
    return out;
}

/// Draws `count` distinct items from `pool` first, then from `fallback`.
inline std::vector<ConceptIndex> draw(Rng& rng, std::vector<ConceptIndex> pool, std::vector<ConceptIndex> fallback,
                                      std::size_t count)
{
    rng.shuffle(pool);
    if (pool.size() > count) {
        pool.resize(count);
    }
    if (pool.size() < count) {
        rng.shuffle(fallback);
        for (ConceptIndex c : fallback) {
            if (pool.size() == count) {
                break;
            }
            if (std::find(pool.begin(), pool.end(), c) == pool.end()) {
                pool.push_back(c);
            }
        }
    }
    return pool;
}

}  // namespace detail

/// Patients whose pre-admission keywords concentrate in one dominant group and
/// whose reference instruction spreads ground truth into a partner group.
///
/// Each group has a fixed partner group (a random derangement). Patients get
/// keywords from the dominant group plus one keyword from each side group, the
/// partner being one of them. A `skew` fraction of the ground truth is drawn
/// from the partner group within `horizon` in-group hops of the partner
/// keyword, the rest from within `horizon` hops of the dominant keywords.
inline std::vector<SynthPatient> gen_corpus(const SynthSpec& spec, const KnowledgeGraph& kg)
{
    spec.validate();
    if (kg.group_count() != spec.groups) {
        throw DataError("synth: graph has " + std::to_string(kg.group_count()) + " groups, settings ask for " +
                        std::to_string(spec.groups));
    }
    for (GroupIndex g = 0; g < kg.group_count(); ++g) {
        if (kg.members(g).size() < spec.keywords_per_patient + 1) {
            throw DataError("synth: group '" + kg.group_id(g).str() + "' is too small for these settings");
        }
    }
    Rng rng(mix64(spec.seed) ^ 0x636f72ULL);
    const std::size_t k = kg.group_count();

    std::vector<GroupIndex> perm(k);
    for (GroupIndex g = 0; g < k; ++g) {
        perm[g] = g;
    }
    rng.shuffle(perm);
    std::vector<GroupIndex> partner(k);
    for (std::size_t i = 0; i < k; ++i) {
        partner[perm[i]] = perm[(i + 1) % k];
    }

    std::vector<SynthPatient> out;
    out.reserve(spec.patients);
    for (std::size_t p = 0; p < spec.patients; ++p) {
        SynthPatient sp;
        sp.dominant = static_cast<GroupIndex>(rng.below(k));
        sp.partner = partner[sp.dominant];

        const auto dom_members = kg.members(sp.dominant);
        std::vector<ConceptIndex> dom_pool(dom_members.begin(), dom_members.end());
        auto dom_keywords = detail::draw(rng, dom_pool, {}, spec.keywords_per_patient);

        std::vector<GroupIndex> side;
        if (spec.side_groups > 0) {
            side.push_back(sp.partner);
            std::vector<GroupIndex> others;
            for (GroupIndex g = 0; g < k; ++g) {
                if (g != sp.dominant && g != sp.partner) {
                    others.push_back(g);
                }
            }
            rng.shuffle(others);
            for (std::size_t i = 0; i + 1 < spec.side_groups; ++i) {
                side.push_back(others[i]);
            }
        }
        std::vector<ConceptIndex> side_keywords;
        for (GroupIndex g : side) {
            const auto m = kg.members(g);
            side_keywords.push_back(m[rng.below(m.size())]);
        }

        const auto n_out = static_cast<std::size_t>(std::llround(spec.skew * static_cast<double>(spec.truth_per_patient)));
        const std::size_t n_dom = spec.truth_per_patient - n_out;
        auto exclude = [](std::vector<ConceptIndex> v, const std::vector<ConceptIndex>& drop) {
            std::erase_if(v, [&](ConceptIndex c) { return std::find(drop.begin(), drop.end(), c) != drop.end(); });
            return v;
        };
        std::vector<ConceptIndex> truth;
        if (n_dom > 0) {
            auto ball = exclude(in_group_ball(kg, dom_keywords, sp.dominant, spec.horizon), dom_keywords);
            auto rest = exclude(dom_pool, dom_keywords);
            truth = detail::draw(rng, ball, rest, n_dom);
        }
        if (n_out > 0) {
            const ConceptIndex anchor = side_keywords.front();
            auto ball = exclude(in_group_ball(kg, {anchor}, sp.partner, spec.horizon), {anchor});
            const auto m = kg.members(sp.partner);
            auto rest = exclude(std::vector<ConceptIndex>(m.begin(), m.end()), {anchor});
            auto picked = detail::draw(rng, ball, rest, n_out);
            truth.insert(truth.end(), picked.begin(), picked.end());
        }

        sp.keywords = dom_keywords;
        sp.keywords.insert(sp.keywords.end(), side_keywords.begin(), side_keywords.end());
        sp.truth = truth;

        // Pre-admission note: dominant keywords lead, side keywords trail.
        std::string pre;
        const std::size_t lead = std::min<std::size_t>(2, dom_keywords.size());
        pre += "Patient presents with " + detail::join_names(kg, dom_keywords, 0, lead) + ".";
        if (dom_keywords.size() > lead) {
            pre += " History is notable for " + detail::join_names(kg, dom_keywords, lead, dom_keywords.size()) + ".";
        }
        if (!side_keywords.empty()) {
            pre += " Also reports " + detail::join_names(kg, side_keywords, 0, side_keywords.size()) + ".";
        }
        pre += " Allergies: none known.";

        static const std::array<const char*, 4> openers = {"You were treated for", "During your stay we addressed",
                                                           "Please continue to monitor", "Follow up regarding"};
        std::string ref;
        for (std::size_t i = 0, s = 0; i < truth.size(); i += 2, ++s) {
            const std::size_t to = std::min(truth.size(), i + 2);
            if (!ref.empty()) {
                ref += ' ';
            }
            ref += std::string(openers[s % openers.size()]) + " " + detail::join_names(kg, truth, i, to) + ".";
        }

        sp.patient.id = "P" + std::string(5 - std::min<std::size_t>(5, std::to_string(p).size()), '0') +
                        std::to_string(p);
        sp.patient.pre_admission = std::move(pre);
        sp.patient.reference = std::move(ref);
        out.push_back(std::move(sp));
    }
    return out;
}

inline std::vector<Patient> patients_of(const std::vector<SynthPatient>& synth)
{
    std::vector<Patient> out;
    out.reserve(synth.size());
    for (const auto& s : synth) {
        out.push_back(s.patient);
    }
    return out;
}

}  // namespace r2ag::synth
