#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <deque>

#include "r2ag/pipeline.hpp"
#include "r2ag/synthetic_data.hpp"
#include "support.hpp"

using namespace r2ag;
using namespace r2ag::synth;

namespace {

/// Concepts reachable from `seeds` in at most `hops` steps over any edge.
std::set<ConceptIndex> reach(const KnowledgeGraph& kg, const std::vector<ConceptIndex>& seeds, int hops)
{
    std::map<ConceptIndex, int> dist;
    std::deque<ConceptIndex> q;
    for (auto s : seeds) {
        dist[s] = 0;
        q.push_back(s);
    }
    while (!q.empty()) {
        const auto u = q.front();
        q.pop_front();
        if (dist[u] == hops) {
            continue;
        }
        for (const auto& e : kg.edges()) {
            if (e.src == u && !dist.count(e.dst)) {
                dist[e.dst] = dist[u] + 1;
                q.push_back(e.dst);
            }
        }
    }
    std::set<ConceptIndex> out;
    for (const auto& [c, d] : dist) {
        out.insert(c);
    }
    return out;
}

}  // namespace

TEST_CASE("generation is deterministic per seed")
{
    SynthSpec spec;
    spec.groups = 4;
    spec.concepts_per_group = 12;
    spec.patients = 20;
    r2ag::testing::TempDir a("synth_a"), b("synth_b"), c("synth_c");
    const auto fa = pipeline::write_synthetic(spec, 8, a.path());
    const auto fb = pipeline::write_synthetic(spec, 8, b.path());
    spec.seed = 1;
    const auto fc = pipeline::write_synthetic(spec, 8, c.path());
    for (auto member : {&pipeline::SynthFiles::concepts, &pipeline::SynthFiles::relations,
                        &pipeline::SynthFiles::embeddings, &pipeline::SynthFiles::corpus}) {
        CHECK(r2ag::testing::read_file(fa.*member) == r2ag::testing::read_file(fb.*member));
    }
    CHECK(r2ag::testing::read_file(fa.corpus) != r2ag::testing::read_file(fc.corpus));
    // Files load back into a working workspace.
    const auto ws = pipeline::load_workspace(fa.concepts, fa.relations, fa.embeddings, fa.corpus);
    CHECK(ws->kg.concept_count() == 48);
    CHECK(ws->corpus.size() == 20);
    CHECK(ws->embeddings().dim() == 8);
}

TEST_CASE("full intra probability gives complete group digraphs")
{
    SynthSpec spec;
    spec.groups = 2;
    spec.concepts_per_group = 3;
    spec.intra_edge_prob = 1.0;
    spec.cross_edge_prob = 0.0;
    spec.keywords_per_patient = 1;
    spec.side_groups = 1;
    const auto kg = gen_kg(spec);
    CHECK(kg.edge_count() == 12);
    for (ConceptIndex u = 0; u < 6; ++u) {
        for (ConceptIndex v = 0; v < 6; ++v) {
            const bool same = kg.group_of(u) == kg.group_of(v);
            const auto es = kg.out_edges(u);
            const bool linked =
                std::any_of(es.begin(), es.end(), [&](const Neighbor& n) { return n.target == v; });
            CHECK(linked == (same && u != v));
        }
    }
}

TEST_CASE("edge counts stay within three sigma of the binomial expectation")
{
    SynthSpec spec;
    spec.groups = 6;
    spec.concepts_per_group = 25;
    spec.intra_edge_prob = 0.1;
    spec.cross_edge_prob = 0.005;
    const double n = 25, k = 6;
    // Spanning tree edges are fixed; the rest are independent Bernoulli draws.
    const double tree = k * 2 * (n - 1);
    const double intra_trials = k * (n * (n - 1) - 2 * (n - 1));
    const double cross_trials = k * n * (k - 1) * n;
    const double mean = tree + intra_trials * 0.1 + cross_trials * 0.005;
    const double sigma = std::sqrt(intra_trials * 0.1 * 0.9 + cross_trials * 0.005 * 0.995);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        spec.seed = seed;
        const auto kg = gen_kg(spec);
        INFO("seed " << seed << " edges " << kg.edge_count() << " mean " << mean << " sigma " << sigma);
        CHECK(std::abs(static_cast<double>(kg.edge_count()) - mean) <= 3 * sigma);
    }
}

TEST_CASE("every concept has an in-group out-neighbor and names are pronounceable")
{
    const auto kg = gen_kg(SynthSpec{});
    CHECK(kg.group_count() == 15);
    std::set<std::string> names;
    for (ConceptIndex c = 0; c < kg.concept_count(); ++c) {
        CHECK_FALSE(kg.neighbors_in_group(c, kg.group_of(c)).empty());
        const auto& name = kg.concept_at(c).name;
        CHECK(std::all_of(name.begin(), name.end(), [](char ch) { return ch >= 'a' && ch <= 'z'; }));
        CHECK_FALSE(template_words().count(name));
        names.insert(name);
    }
    CHECK(names.size() == kg.concept_count());
}

TEST_CASE("skew 0 keeps ground truth in the dominant group, skew 1 moves all of it out")
{
    for (double skew : {0.0, 1.0}) {
        SynthSpec spec;
        spec.groups = 5;
        spec.concepts_per_group = 20;
        spec.patients = 30;
        spec.skew = skew;
        const auto kg = gen_kg(spec);
        for (const auto& p : gen_corpus(spec, kg)) {
            REQUIRE(p.truth.size() == spec.truth_per_patient);
            for (auto c : p.truth) {
                CHECK((kg.group_of(c) == p.dominant) == (skew == 0.0));
            }
        }
    }
}

TEST_CASE("ground truth is reachable from the keywords within the horizon")
{
    const SynthSpec spec;
    const auto kg = gen_kg(spec);
    std::size_t total = 0, reachable = 0;
    for (const auto& p : gen_corpus(spec, kg)) {
        const auto r = reach(kg, p.keywords, spec.horizon);
        for (auto c : p.truth) {
            ++total;
            reachable += r.count(c);
        }
    }
    INFO(reachable << " of " << total);
    CHECK(static_cast<double>(reachable) >= 0.8 * static_cast<double>(total));
}

TEST_CASE("generated texts link back to their concepts")
{
    const SynthSpec spec;
    const auto kg = gen_kg(spec);
    const ConceptLinker linker(kg);
    const auto corpus = gen_corpus(spec, kg);
    REQUIRE(corpus.size() == 200);
    std::set<std::string> ids;
    for (const auto& p : corpus) {
        ids.insert(p.patient.id);
        const auto pre = linker.link(p.patient.pre_admission).concepts();
        const std::set<ConceptIndex> pre_set(pre.begin(), pre.end());
        for (auto c : p.keywords) {
            CHECK(pre_set.count(c));
        }
        const auto ks = linker.link(p.patient.pre_admission);
        CHECK(initial_group(ks) == p.dominant);
        const auto ref = linker.link(*p.patient.reference).concepts();
        const std::set<ConceptIndex> ref_set(ref.begin(), ref.end());
        for (auto c : p.truth) {
            CHECK(ref_set.count(c));
        }
    }
    CHECK(ids.size() == corpus.size());
    CHECK(corpus.front().patient.id == "P00000");
}

TEST_CASE("settings validation and graph mismatches")
{
    SynthSpec bad;
    bad.groups = 1;
    CHECK_THROWS(gen_kg(bad));
    bad = SynthSpec{};
    bad.skew = 1.5;
    CHECK_THROWS(gen_kg(bad));
    bad = SynthSpec{};
    bad.side_groups = 15;
    CHECK_THROWS(gen_kg(bad));
    SynthSpec small;
    small.groups = 4;
    small.concepts_per_group = 10;
    const auto kg = gen_kg(small);
    CHECK_THROWS_AS(gen_corpus(SynthSpec{}, kg), DataError);
}
