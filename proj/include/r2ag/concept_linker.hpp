#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "r2ag/common.hpp"
#include "r2ag/kg_store.hpp"
#include "r2ag/text.hpp"

namespace r2ag {

struct KeywordMatch {
    ConceptIndex concept_index;
    std::size_t begin;  // byte span of the matched surface in the source text
    std::size_t end;
};

/// Linked keywords in order of first appearance, each concept at most once.
struct KeywordSet {
    std::vector<KeywordMatch> matches;
    std::vector<std::size_t> group_counts;  // one slot per graph group

    [[nodiscard]] bool empty() const noexcept { return matches.empty(); }
    [[nodiscard]] std::size_t size() const noexcept { return matches.size(); }

    [[nodiscard]] std::vector<ConceptIndex> concepts() const
    {
        std::vector<ConceptIndex> out;
        out.reserve(matches.size());
        for (const auto& m : matches) {
            out.push_back(m.concept_index);
        }
        return out;
    }

    [[nodiscard]] bool contains(ConceptIndex c) const
    {
        return std::any_of(matches.begin(), matches.end(), [c](const auto& m) { return m.concept_index == c; });
    }
};

/// Exact longest-match lexicon linker over normalized concept names.
class ConceptLinker {
public:
    explicit ConceptLinker(const KnowledgeGraph& kg) : kg_(&kg)
    {
        // Concepts are visited in id order, so a surface shared by several
        // concepts resolves to the smallest id.
        for (ConceptIndex c = 0; c < kg.concept_count(); ++c) {
            for (const auto& s : kg.concept_at(c).surfaces) {
                if (lexicon_.emplace(s, c).second) {
                    max_tokens_ = std::max(max_tokens_, text::split(s, ' ').size());
                }
            }
        }
    }

    /// Greedy left-to-right, non-overlapping, longest-first matching.
    [[nodiscard]] KeywordSet link(std::string_view source) const
    {
        KeywordSet ks;
        ks.group_counts.assign(kg_->group_count(), 0);
        const auto tokens = text::tokenize(source);
        std::vector<bool> seen(kg_->concept_count(), false);
        std::size_t i = 0;
        std::string key;
        while (i < tokens.size()) {
            std::size_t matched = 0;
            ConceptIndex hit = 0;
            const std::size_t longest = std::min(max_tokens_, tokens.size() - i);
            for (std::size_t n = longest; n >= 1; --n) {
                key = tokens[i].text;
                for (std::size_t k = 1; k < n; ++k) {
                    key += ' ';
                    key += tokens[i + k].text;
                }
                if (auto it = lexicon_.find(key); it != lexicon_.end()) {
                    matched = n;
                    hit = it->second;
                    break;
                }
            }
            if (matched == 0) {
                ++i;
                continue;
            }
            if (!seen[hit]) {
                seen[hit] = true;
                ks.matches.push_back({hit, tokens[i].begin, tokens[i + matched - 1].end});
                ++ks.group_counts[kg_->group_of(hit)];
            }
            i += matched;
        }
        return ks;
    }

    [[nodiscard]] const KnowledgeGraph& graph() const noexcept { return *kg_; }

private:
    const KnowledgeGraph* kg_;
    std::unordered_map<std::string, ConceptIndex> lexicon_;
    std::size_t max_tokens_ = 0;
};

/// Group covering the most keywords; ties go to the smallest group id.
inline GroupIndex initial_group(const KeywordSet& ks)
{
    if (ks.empty()) {
        throw std::invalid_argument("initial_group: empty keyword set");
    }
    const auto& h = ks.group_counts;
    return static_cast<GroupIndex>(std::max_element(h.begin(), h.end()) - h.begin());
}

/// Group with the fewest keywords over all graph groups, zero counts included.
inline GroupIndex scarce_group(const KeywordSet& ks, const KnowledgeGraph& kg)
{
    if (ks.group_counts.size() != kg.group_count()) {
        throw std::invalid_argument("scarce_group: keyword histogram does not match graph");
    }
    const auto& h = ks.group_counts;
    return static_cast<GroupIndex>(std::min_element(h.begin(), h.end()) - h.begin());
}

struct Patient {
    std::string id;
    std::string pre_admission;
    std::optional<std::string> reference;
};

inline void to_json(nlohmann::json& j, const Patient& p)
{
    j = nlohmann::json{{"id", p.id}, {"pre_admission", p.pre_admission}};
    if (p.reference) {
        j["reference"] = *p.reference;
    }
}

inline std::vector<Patient> parse_corpus(std::istream& in, const std::string& name = "corpus")
{
    std::vector<Patient> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) {
            continue;
        }
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError(detail::where(name, line_no) + ": invalid JSON: " + e.what());
        }
        if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("pre_admission") ||
            !j["pre_admission"].is_string()) {
            throw DataError(detail::where(name, line_no) + ": patient needs string fields 'id' and 'pre_admission'");
        }
        Patient p{j["id"].get<std::string>(), j["pre_admission"].get<std::string>(), std::nullopt};
        if (j.contains("reference") && !j["reference"].is_null()) {
            if (!j["reference"].is_string()) {
                throw DataError(detail::where(name, line_no) + ": 'reference' must be a string");
            }
            p.reference = j["reference"].get<std::string>();
        }
        out.push_back(std::move(p));
    }
    return out;
}

inline std::vector<Patient> load_corpus(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    return parse_corpus(in, path.filename().string());
}

inline void write_corpus(std::ostream& out, const std::vector<Patient>& patients)
{
    for (const auto& p : patients) {
        out << nlohmann::json(p).dump() << '\n';
    }
}

}  // namespace r2ag
