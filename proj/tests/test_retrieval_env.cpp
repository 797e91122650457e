#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "r2ag/retrieval_env.hpp"
#include "support.hpp"

using namespace r2ag;

namespace {

// Two groups. A: a1..a4, B: b1..b3.
//   a1 -> a2 (r), a1 -> a3 (s), a2 -> a4 (r), a3 -> b1 (x), b1 -> b2 (r), b2 -> b3 (r)
struct Fixture {
    KnowledgeGraph kg;
    EmbeddingTable table;
    GroupVectors groups;

    Fixture()
        : kg(r2ag::testing::parse_kg("id\tname\tgroup\n"
                                     "a1\tA1\tA\na2\tA2\tA\na3\tA3\tA\na4\tA4\tA\n"
                                     "b1\tB1\tB\nb2\tB2\tB\nb3\tB3\tB\n",
                                     "src\trelation\tdst\n"
                                     "a1\tr\ta2\na1\ts\ta3\na2\tr\ta4\na3\tx\tb1\nb1\tr\tb2\nb2\tr\tb3\n")),
          table(make_table()), groups(kg, table)
    {
    }

    static EmbeddingTable make_table()
    {
        Matrix m(7, 2);
        m << 1, 0,   // a1
            0.9, 0.1,  // a2
            0.5, 0.5,  // a3
            0.8, -0.2, // a4
            0, 1,      // b1
            0.3, 0.7,  // b2
            -1, 0.2;   // b3
        return EmbeddingTable(m);
    }

    KeywordSet keywords(std::initializer_list<const char*> ids) const
    {
        KeywordSet ks;
        ks.group_counts.assign(kg.group_count(), 0);
        for (const char* id : ids) {
            const auto c = kg.index_of(ConceptId(id));
            ks.matches.push_back({c, 0, 0});
            ++ks.group_counts[kg.group_of(c)];
        }
        return ks;
    }

    ConceptIndex c(const char* id) const { return kg.index_of(ConceptId(id)); }
};

}  // namespace

TEST_CASE("reset seeds one path per keyword of the initial group")
{
    const Fixture f;
    const RetrievalEnvironment env(f.kg, f.table, f.groups, f.keywords({"a1", "a3", "b2"}), 5);
    const auto rs = env.reset();
    CHECK(env.initial() == 0);
    CHECK(env.scarce() == 1);
    REQUIRE(rs.paths.size() == 2);
    CHECK(rs.paths[0].origin == f.c("a1"));
    CHECK(rs.paths[1].origin == f.c("a3"));
    CHECK(rs.explored == std::vector<ConceptIndex>{f.c("a1"), f.c("a3")});
    CHECK(rs.current == 0);
    CHECK(rs.previous == 0);
    CHECK(rs.step == 0);
}

TEST_CASE("group state and action space layout")
{
    const Fixture f;
    const RetrievalEnvironment env(f.kg, f.table, f.groups, f.keywords({"a1"}), 5);
    const auto rs = env.reset();
    const auto s = env.group_state(rs);
    REQUIRE(s.size() == 8);
    for (int j = 0; j < 4; ++j) {
        CHECK(s(j) == f.groups.row(0)(j));
        CHECK(s(4 + j) == f.groups.row(1)(j));
    }
    const auto as = env.action_space(rs);
    REQUIRE(as.embeddings.rows() == 2);
    REQUIRE(as.embeddings.cols() == 8);
    for (GroupIndex g = 0; g < 2; ++g) {
        CHECK(as.embeddings.row(g).head(4).transpose() == f.groups.row(0));
        CHECK(as.embeddings.row(g).tail(4).transpose() == f.groups.row(g));
    }
}

TEST_CASE("scarce equals current gives identical halves")
{
    const Fixture f;
    // Counts {1, 2}: initial group B, scarce group A.
    const RetrievalEnvironment env(f.kg, f.table, f.groups, f.keywords({"a1", "b1", "b2"}), 5);
    auto rs = env.reset();
    rs.current = env.scarce();
    const auto s = env.group_state(rs);
    CHECK(s.head(4) == s.tail(4));
}

TEST_CASE("stay retrieves the best in-group neighbor and freezes dead ends")
{
    const Fixture f;
    const RetrievalEnvironment env(f.kg, f.table, f.groups, f.keywords({"a1"}), 3);
    auto rs = env.reset();
    const auto r = env.step(rs, 0);
    CHECK_FALSE(r.leaped);
    REQUIRE(rs.paths[0].steps.size() == 2);
    // a2 is closer to both the keyword average (a1) and the path average.
    CHECK(rs.paths[0].steps[1].concept_index == f.c("a2"));
    CHECK(f.kg.label(rs.paths[0].steps[1].label) == "r");
    env.step(rs, 0);
    CHECK(rs.paths[0].tail() == f.c("a4"));
    env.step(rs, 0);  // a4 has no out-edges
    CHECK(rs.paths[0].frozen);
    CHECK(rs.paths[0].steps.size() == 3);
    CHECK(rs.finished());
    CHECK_THROWS_AS(env.step(rs, 0), std::logic_error);
}

TEST_CASE("leap with an empty candidate pool degrades to a stay")
{
    const Fixture f;
    const RetrievalEnvironment env(f.kg, f.table, f.groups, f.keywords({"a1"}), 2);
    auto rs = env.reset();
    CHECK(env.leap_candidates(rs, 1).empty());
    const auto r = env.step(rs, 1);
    CHECK_FALSE(r.leaped);
    CHECK(r.requested == 1);
    CHECK(r.effective == 0);
    CHECK(rs.current == 0);
    for (const auto& s : rs.paths[0].steps) {
        CHECK(s.kind != StepKind::GroupLeap);
    }
}

TEST_CASE("leap connects to the unexplored keyword and retrieves from it")
{
    const Fixture f;
    const RetrievalEnvironment env(f.kg, f.table, f.groups, f.keywords({"a1", "a2", "b1"}), 2);
    auto rs = env.reset();
    CHECK(env.leap_candidates(rs, 1) == std::vector<ConceptIndex>{f.c("b1")});
    const auto before = rs.paths[0].steps.size();
    const auto r = env.step(rs, 1);
    CHECK(r.leaped);
    CHECK(rs.current == 1);
    CHECK(rs.previous == 0);
    for (const auto& p : rs.paths) {
        REQUIRE(p.steps.size() == before + 2);
        CHECK(p.steps[before].kind == StepKind::GroupLeap);
        CHECK(p.steps[before].concept_index == f.c("b1"));
        CHECK(p.steps[before + 1].concept_index == f.c("b2"));
    }
}

TEST_CASE("explored set is the union of path concepts after every step")
{
    Rng rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const auto kg = r2ag::testing::random_kg(rng, 40, 3, 160, 2);
        const auto t = r2ag::testing::random_table(rng, 40, 4);
        const GroupVectors gv(kg, t);
        KeywordSet ks;
        ks.group_counts.assign(3, 0);
        for (ConceptIndex c : {0u, 1u, 2u, 7u}) {
            ks.matches.push_back({c, 0, 0});
            ++ks.group_counts[kg.group_of(c)];
        }
        const RetrievalEnvironment env(kg, t, gv, ks, 5);
        auto rs = env.reset();
        std::vector<ReasoningPath> frozen_snapshot(rs.paths.size());
        while (!rs.finished()) {
            env.step(rs, static_cast<GroupIndex>(rng.below(3)));
            std::set<ConceptIndex> u;
            for (const auto& p : rs.paths) {
                for (const auto& s : p.steps) {
                    u.insert(s.concept_index);
                }
            }
            CHECK(std::vector<ConceptIndex>(u.begin(), u.end()) == rs.explored);
            CHECK(env.action_space(rs).groups.size() == 3);
            for (std::size_t i = 0; i < rs.paths.size(); ++i) {
                if (frozen_snapshot[i].frozen) {
                    CHECK(rs.paths[i] == frozen_snapshot[i]);
                }
                if (rs.paths[i].frozen && !frozen_snapshot[i].frozen) {
                    frozen_snapshot[i] = rs.paths[i];
                }
            }
        }
        // Relation steps follow real edges.
        for (const auto& p : rs.paths) {
            for (std::size_t i = 1; i < p.steps.size(); ++i) {
                if (p.steps[i].kind != StepKind::Relation) {
                    continue;
                }
                const auto prev = p.steps[i - 1].concept_index;
                const auto edges = kg.out_edges(prev);
                CHECK(std::find(edges.begin(), edges.end(), Neighbor{p.steps[i].label, p.steps[i].concept_index}) !=
                      edges.end());
            }
        }
    }
}

TEST_CASE("identical action sequences give identical paths")
{
    const Fixture f;
    const RetrievalEnvironment env(f.kg, f.table, f.groups, f.keywords({"a1", "a3", "b1"}), 4);
    auto a = env.reset();
    auto b = env.reset();
    for (GroupIndex g : {1u, 0u, 1u, 1u}) {
        env.step(a, g);
        env.step(b, g);
    }
    CHECK(a.paths == b.paths);
}

TEST_CASE("connect and retrieve agree with exhaustive scans")
{
    std::size_t checked = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto r = oracle::retrieval_fixture(1000 + seed);
        INFO("seed " << seed);
        REQUIRE(r.agreed == r.checked);
        checked += r.checked;
    }
    CHECK(checked > 100);
}
