#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "r2ag/common.hpp"
#include "r2ag/text.hpp"

namespace r2ag {

struct Concept {
    ConceptId id;
    std::string name;                   // display name (first entry of the name field)
    std::vector<std::string> surfaces;  // normalized name and synonyms
    std::string name_field;             // name column as loaded, synonyms separated by '|'
    GroupIndex group = 0;
};

struct Neighbor {
    LabelIndex label;
    ConceptIndex target;
    friend auto operator<=>(const Neighbor&, const Neighbor&) = default;
};

struct RelationEdge {
    ConceptIndex src;
    LabelIndex label;
    ConceptIndex dst;
    friend auto operator<=>(const RelationEdge&, const RelationEdge&) = default;
};

/// Row of concepts.tsv. `line` is the 1-based source line, 0 when built in memory.
struct ConceptRecord {
    std::string id;
    std::string name;
    std::string group;
    std::size_t line = 0;
};

/// Row of relations.tsv.
struct EdgeRecord {
    std::string src;
    std::string relation;
    std::string dst;
    std::size_t line = 0;
};

/// Immutable knowledge graph partitioned into semantic groups.
///
/// Concepts, groups and relation labels are each indexed in lexicographic
/// order of their identifiers; adjacency lists are sorted by (label, target).
/// Every iteration order exposed here is therefore a pure function of the
/// input content, not of file order.
class KnowledgeGraph {
public:
    static KnowledgeGraph build(std::vector<ConceptRecord> concepts, std::vector<EdgeRecord> edges);

    static KnowledgeGraph load(const std::filesystem::path& concepts_path,
                               const std::filesystem::path& relations_path);

    static KnowledgeGraph parse(std::istream& concepts, std::istream& relations,
                                const std::string& concepts_name = "concepts.tsv",
                                const std::string& relations_name = "relations.tsv");

    [[nodiscard]] std::size_t concept_count() const noexcept { return concepts_.size(); }
    [[nodiscard]] std::size_t group_count() const noexcept { return groups_.size(); }
    [[nodiscard]] std::size_t edge_count() const noexcept { return edges_.size(); }
    [[nodiscard]] std::size_t label_count() const noexcept { return labels_.size(); }

    [[nodiscard]] const Concept& concept_at(ConceptIndex c) const { return concepts_.at(c); }
    [[nodiscard]] const ConceptId& id_of(ConceptIndex c) const { return concepts_.at(c).id; }
    [[nodiscard]] GroupIndex group_of(ConceptIndex c) const { return concepts_.at(c).group; }
    [[nodiscard]] const GroupId& group_id(GroupIndex g) const { return groups_.at(g); }
    [[nodiscard]] const std::string& label(LabelIndex l) const { return labels_.at(l); }

    [[nodiscard]] std::optional<ConceptIndex> find(const ConceptId& id) const
    {
        auto it = concept_index_.find(id);
        if (it == concept_index_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    [[nodiscard]] ConceptIndex index_of(const ConceptId& id) const
    {
        if (auto c = find(id)) {
            return *c;
        }
        throw DataError("unknown concept id '" + id.str() + "'");
    }

    [[nodiscard]] std::optional<GroupIndex> find_group(const GroupId& id) const
    {
        auto it = std::lower_bound(groups_.begin(), groups_.end(), id);
        if (it == groups_.end() || *it != id) {
            return std::nullopt;
        }
        return static_cast<GroupIndex>(it - groups_.begin());
    }

    [[nodiscard]] GroupIndex group_index(const GroupId& id) const
    {
        if (auto g = find_group(id)) {
            return *g;
        }
        throw DataError("unknown semantic group '" + id.str() + "'");
    }

    [[nodiscard]] std::span<const Neighbor> out_edges(ConceptIndex c) const
    {
        return {neighbors_.data() + offsets_.at(c), neighbors_.data() + offsets_.at(c + 1)};
    }

    [[nodiscard]] std::span<const ConceptIndex> members(GroupIndex g) const { return members_.at(g); }
    [[nodiscard]] std::span<const RelationEdge> edges() const noexcept { return edges_; }
    [[nodiscard]] std::span<const Concept> concepts() const noexcept { return concepts_; }
    [[nodiscard]] std::span<const GroupId> groups() const noexcept { return groups_; }
    [[nodiscard]] std::span<const std::string> labels() const noexcept { return labels_; }

    /// Forward neighbors of `c` that lie in group `g`, in (label, id) order.
    template <class Fn>
    void for_each_neighbor_in_group(ConceptIndex c, GroupIndex g, Fn&& fn) const
    {
        for (const Neighbor& n : out_edges(c)) {
            if (concepts_[n.target].group == g) {
                fn(n);
            }
        }
    }

    [[nodiscard]] std::vector<Neighbor> neighbors_in_group(ConceptIndex c, GroupIndex g) const
    {
        std::vector<Neighbor> out;
        for_each_neighbor_in_group(c, g, [&](const Neighbor& n) { out.push_back(n); });
        return out;
    }

    [[nodiscard]] std::vector<std::pair<std::string, ConceptId>> neighbors_in_group(const ConceptId& c,
                                                                                    const GroupId& g) const
    {
        const ConceptIndex ci = index_of(c);
        const GroupIndex gi = group_index(g);
        std::vector<std::pair<std::string, ConceptId>> out;
        for_each_neighbor_in_group(ci, gi, [&](const Neighbor& n) {
            out.emplace_back(labels_[n.label], concepts_[n.target].id);
        });
        return out;
    }

    [[nodiscard]] std::vector<ConceptId> concepts_in_group(const GroupId& g) const
    {
        std::vector<ConceptId> out;
        for (ConceptIndex c : members(group_index(g))) {
            out.push_back(concepts_[c].id);
        }
        return out;
    }

    [[nodiscard]] GroupId group_of(const ConceptId& c) const { return groups_[group_of(index_of(c))]; }

private:
    std::vector<Concept> concepts_;
    std::unordered_map<ConceptId, ConceptIndex> concept_index_;
    std::vector<GroupId> groups_;
    std::vector<std::vector<ConceptIndex>> members_;
    std::vector<std::string> labels_;
    std::vector<RelationEdge> edges_;  // sorted (src, label, dst), deduplicated
    std::vector<std::size_t> offsets_;
    std::vector<Neighbor> neighbors_;
};

namespace detail {

inline std::string where(const std::string& file, std::size_t line)
{
    if (line == 0) {
        return file;
    }
    return file + ":" + std::to_string(line);
}

/// Reads a tab-separated file with a fixed header; returns field rows with line numbers.
inline std::vector<std::pair<std::size_t, std::vector<std::string>>> read_tsv(std::istream& in,
                                                                             const std::vector<std::string>& header,
                                                                             const std::string& file)
{
    std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
    std::string line;
    std::size_t line_no = 0;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        auto parts = text::split(line, '\t');
        if (!saw_header) {
            std::vector<std::string> got(parts.begin(), parts.end());
            if (got != header) {
                std::string expected;
                for (const auto& h : header) {
                    expected += (expected.empty() ? "" : "\\t") + h;
                }
                throw DataError(where(file, line_no) + ": expected header '" + expected + "'");
            }
            saw_header = true;
            continue;
        }
        if (parts.size() != header.size()) {
            throw DataError(where(file, line_no) + ": malformed line, expected " + std::to_string(header.size()) +
                            " tab-separated fields, got " + std::to_string(parts.size()));
        }
        std::vector<std::string> fields;
        for (auto p : parts) {
            auto t = text::trim(p);
            if (t.empty()) {
                throw DataError(where(file, line_no) + ": malformed line, empty field");
            }
            fields.emplace_back(t);
        }
        rows.emplace_back(line_no, std::move(fields));
    }
    if (!saw_header) {
        throw DataError(file + ": missing header");
    }
    return rows;
}

}  // namespace detail

inline KnowledgeGraph KnowledgeGraph::build(std::vector<ConceptRecord> concepts, std::vector<EdgeRecord> edges)
{
    if (concepts.empty()) {
        throw DataError("empty graph: no concepts");
    }
    KnowledgeGraph kg;

    std::stable_sort(concepts.begin(), concepts.end(),
                     [](const ConceptRecord& a, const ConceptRecord& b) { return a.id < b.id; });
    for (std::size_t i = 1; i < concepts.size(); ++i) {
        if (concepts[i].id == concepts[i - 1].id) {
            throw DataError(detail::where("concepts.tsv", concepts[i].line) + ": duplicate concept id '" +
                            concepts[i].id + "'");
        }
    }

    std::map<std::string, GroupIndex> group_lookup;
    for (const auto& r : concepts) {
        group_lookup.emplace(r.group, 0);
    }
    if (group_lookup.size() < 2) {
        throw DataError("graph must have at least two semantic groups, found " + std::to_string(group_lookup.size()));
    }
    GroupIndex next_group = 0;
    for (auto& [name, idx] : group_lookup) {
        idx = next_group++;
        kg.groups_.emplace_back(name);
    }
    kg.members_.resize(kg.groups_.size());

    kg.concepts_.reserve(concepts.size());
    for (auto& r : concepts) {
        if (r.id.empty() || r.name.empty() || r.group.empty()) {
            throw DataError(detail::where("concepts.tsv", r.line) + ": malformed line, empty field");
        }
        Concept c;
        c.id = ConceptId(r.id);
        const auto names = text::split(r.name, '|');
        c.name = std::string(text::trim(names.front()));
        c.name_field = r.name;
        for (auto n : names) {
            auto norm = text::normalize(n);
            if (!norm.empty() && std::find(c.surfaces.begin(), c.surfaces.end(), norm) == c.surfaces.end()) {
                c.surfaces.push_back(std::move(norm));
            }
        }
        c.group = group_lookup.at(r.group);
        const auto idx = static_cast<ConceptIndex>(kg.concepts_.size());
        kg.members_[c.group].push_back(idx);
        kg.concept_index_.emplace(c.id, idx);
        kg.concepts_.push_back(std::move(c));
    }

    std::map<std::string, LabelIndex> label_lookup;
    for (const auto& e : edges) {
        label_lookup.emplace(e.relation, 0);
    }
    LabelIndex next_label = 0;
    for (auto& [name, idx] : label_lookup) {
        idx = next_label++;
        kg.labels_.push_back(name);
    }

    kg.edges_.reserve(edges.size());
    for (const auto& e : edges) {
        const auto src = kg.find(ConceptId(e.src));
        if (!src) {
            throw DataError(detail::where("relations.tsv", e.line) + ": unknown concept '" + e.src + "' in edge");
        }
        const auto dst = kg.find(ConceptId(e.dst));
        if (!dst) {
            throw DataError(detail::where("relations.tsv", e.line) + ": unknown concept '" + e.dst + "' in edge");
        }
        if (*src == *dst) {
            throw DataError(detail::where("relations.tsv", e.line) + ": self-loop on '" + e.src + "'");
        }
        kg.edges_.push_back({*src, label_lookup.at(e.relation), *dst});
    }
    std::sort(kg.edges_.begin(), kg.edges_.end());
    kg.edges_.erase(std::unique(kg.edges_.begin(), kg.edges_.end()), kg.edges_.end());

    kg.offsets_.assign(kg.concepts_.size() + 1, 0);
    for (const auto& e : kg.edges_) {
        ++kg.offsets_[e.src + 1];
    }
    for (std::size_t i = 1; i < kg.offsets_.size(); ++i) {
        kg.offsets_[i] += kg.offsets_[i - 1];
    }
    kg.neighbors_.reserve(kg.edges_.size());
    for (const auto& e : kg.edges_) {
        kg.neighbors_.push_back({e.label, e.dst});
    }
    return kg;
}

inline KnowledgeGraph KnowledgeGraph::parse(std::istream& concepts, std::istream& relations,
                                            const std::string& concepts_name, const std::string& relations_name)
{
    std::vector<ConceptRecord> crec;
    for (auto& [line, f] : detail::read_tsv(concepts, {"id", "name", "group"}, concepts_name)) {
        crec.push_back({std::move(f[0]), std::move(f[1]), std::move(f[2]), line});
    }
    std::vector<EdgeRecord> erec;
    for (auto& [line, f] : detail::read_tsv(relations, {"src", "relation", "dst"}, relations_name)) {
        erec.push_back({std::move(f[0]), std::move(f[1]), std::move(f[2]), line});
    }
    return build(std::move(crec), std::move(erec));
}

inline KnowledgeGraph KnowledgeGraph::load(const std::filesystem::path& concepts_path,
                                           const std::filesystem::path& relations_path)
{
    std::ifstream cin(concepts_path);
    if (!cin) {
        throw DataError("cannot open " + concepts_path.string());
    }
    std::ifstream rin(relations_path);
    if (!rin) {
        throw DataError("cannot open " + relations_path.string());
    }
    return parse(cin, rin, concepts_path.filename().string(), relations_path.filename().string());
}

/// Writes the graph back out in the two TSV formats `load` accepts.
inline void write_kg(const KnowledgeGraph& kg, std::ostream& concepts, std::ostream& relations)
{
    concepts << "id\tname\tgroup\n";
    for (const auto& c : kg.concepts()) {
        concepts << c.id.str() << '\t' << c.name_field << '\t' << kg.group_id(c.group).str() << '\n';
    }
    relations << "src\trelation\tdst\n";
    for (const auto& e : kg.edges()) {
        relations << kg.id_of(e.src).str() << '\t' << kg.label(e.label) << '\t' << kg.id_of(e.dst).str() << '\n';
    }
}

}  // namespace r2ag
