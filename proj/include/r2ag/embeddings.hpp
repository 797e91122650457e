#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "r2ag/common.hpp"
#include "r2ag/kg_store.hpp"
#include "r2ag/rng.hpp"
#include "r2ag/text.hpp"

namespace r2ag {

/// Cosine similarity. Defined as 0 when either vector is zero.
template <class A, class B>
double cosine(const Eigen::MatrixBase<A>& u, const Eigen::MatrixBase<B>& v)
{
    if (u.size() != v.size()) {
        throw std::invalid_argument("cosine: dimension mismatch");
    }
    const double nu = u.norm();
    const double nv = v.norm();
    if (nu == 0.0 || nv == 0.0) {
        return 0.0;
    }
    const double c = u.dot(v) / (nu * nv);
    return std::clamp(c, -1.0, 1.0);
}

/// Weight of the shared per-group direction in pseudo embeddings.
inline constexpr double kPseudoGroupBias = 3.0;

/// Unit-norm concept vectors, one row per concept index of a graph.
class EmbeddingTable {
public:
    EmbeddingTable() = default;

    /// Takes ownership of raw rows and normalizes each to unit length.
    explicit EmbeddingTable(Matrix rows) : vectors_(std::move(rows))
    {
        for (Eigen::Index i = 0; i < vectors_.rows(); ++i) {
            const double n = vectors_.row(i).norm();
            if (!std::isfinite(n) || n == 0.0) {
                throw DataError("embedding row " + std::to_string(i) + " is zero or non-finite");
            }
            vectors_.row(i) /= n;
        }
    }

    static EmbeddingTable load(const std::filesystem::path& path, const KnowledgeGraph& kg);
    static EmbeddingTable parse(std::istream& in, const KnowledgeGraph& kg, const std::string& name = "embeddings");

    /// Deterministic stand-in for a text encoder.
    ///
    /// Each component is a keyed hash of (seed, concept id) mapped to [-1, 1],
    /// plus the same kind of draw keyed on (seed, group id). The shared group
    /// term makes same-group concepts more similar on average.
    static EmbeddingTable pseudo(const KnowledgeGraph& kg, std::size_t dim, std::uint64_t seed,
                                 double group_bias = kPseudoGroupBias);

    [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(vectors_.cols()); }
    [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(vectors_.rows()); }
    [[nodiscard]] auto row(ConceptIndex c) const { return vectors_.row(c).transpose(); }
    [[nodiscard]] const Matrix& matrix() const noexcept { return vectors_; }

    void write(std::ostream& out, const KnowledgeGraph& kg) const;

    friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b)
    {
        return a.vectors_.rows() == b.vectors_.rows() && a.vectors_.cols() == b.vectors_.cols() &&
               a.vectors_ == b.vectors_;
    }

private:
    Matrix vectors_;
};

/// Arithmetic mean of the given concept vectors (not re-normalized).
inline Vector avg_embedding(const EmbeddingTable& table, std::span<const ConceptIndex> concepts)
{
    if (concepts.empty()) {
        throw std::invalid_argument("avg_embedding: empty concept set");
    }
    Vector sum = Vector::Zero(static_cast<Eigen::Index>(table.dim()));
    for (ConceptIndex c : concepts) {
        sum += table.row(c);
    }
    return sum / static_cast<double>(concepts.size());
}

/// [mean-pool || max-pool] of a group's member vectors, length 2d.
inline Vector group_vector(const KnowledgeGraph& kg, const EmbeddingTable& table, GroupIndex g)
{
    const auto members = kg.members(g);
    if (members.empty()) {
        throw std::invalid_argument("group_vector: empty group");
    }
    const auto d = static_cast<Eigen::Index>(table.dim());
    Vector out(2 * d);
    out.head(d) = avg_embedding(table, members);
    Vector mx = table.row(members.front());
    for (ConceptIndex c : members.subspan(1)) {
        mx = mx.cwiseMax(table.row(c));
    }
    out.tail(d) = mx;
    return out;
}

/// Fixed group embeddings for every group of a graph, one row per group index.
class GroupVectors {
public:
    GroupVectors() = default;

    GroupVectors(const KnowledgeGraph& kg, const EmbeddingTable& table)
        : rows_(static_cast<Eigen::Index>(kg.group_count()), static_cast<Eigen::Index>(2 * table.dim()))
    {
        for (GroupIndex g = 0; g < kg.group_count(); ++g) {
            rows_.row(g) = group_vector(kg, table, g).transpose();
        }
    }

    [[nodiscard]] std::size_t count() const noexcept { return static_cast<std::size_t>(rows_.rows()); }
    [[nodiscard]] std::size_t width() const noexcept { return static_cast<std::size_t>(rows_.cols()); }
    [[nodiscard]] auto row(GroupIndex g) const { return rows_.row(g).transpose(); }

private:
    Matrix rows_;
};

inline EmbeddingTable EmbeddingTable::parse(std::istream& in, const KnowledgeGraph& kg, const std::string& name)
{
    std::string line;
    std::size_t line_no = 0;
    std::size_t dim = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto t = text::trim(line);
        if (t.empty()) {
            continue;
        }
        if (t.substr(0, 4) != "dim=") {
            throw DataError(detail::where(name, line_no) + ": expected 'dim=<d>' header");
        }
        try {
            std::size_t used = 0;
            const auto rest = std::string(t.substr(4));
            const long long v = std::stoll(rest, &used);
            if (used != rest.size() || v <= 0) {
                throw std::invalid_argument("bad dim");
            }
            dim = static_cast<std::size_t>(v);
        } catch (const std::logic_error&) {
            throw DataError(detail::where(name, line_no) + ": invalid dimension in header");
        }
        break;
    }
    if (dim == 0) {
        throw DataError(name + ": missing 'dim=<d>' header");
    }

    Matrix rows(static_cast<Eigen::Index>(kg.concept_count()), static_cast<Eigen::Index>(dim));
    std::vector<bool> seen(kg.concept_count(), false);
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (text::trim(line).empty()) {
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw DataError(detail::where(name, line_no) + ": malformed line, expected 'id<TAB>values'");
        }
        const ConceptId id{std::string(text::trim(std::string_view(line).substr(0, tab)))};
        const auto c = kg.find(id);
        if (!c) {
            throw DataError(detail::where(name, line_no) + ": unknown concept '" + id.str() + "'");
        }
        if (seen[*c]) {
            throw DataError(detail::where(name, line_no) + ": duplicate vector for '" + id.str() + "'");
        }
        std::istringstream values(line.substr(tab + 1));
        values.imbue(std::locale::classic());
        std::vector<double> row;
        std::string tok;
        while (values >> tok) {
            char* end = nullptr;
            const double v = std::strtod(tok.c_str(), &end);
            if (end != tok.c_str() + tok.size()) {
                throw DataError(detail::where(name, line_no) + ": invalid number '" + tok + "'");
            }
            if (!std::isfinite(v)) {
                throw DataError(detail::where(name, line_no) + ": non-finite value");
            }
            row.push_back(v);
        }
        if (row.size() != dim) {
            throw DataError(detail::where(name, line_no) + ": dimension mismatch, header says " + std::to_string(dim) +
                            " but row has " + std::to_string(row.size()));
        }
        rows.row(*c) = Eigen::Map<const Eigen::RowVectorXd>(row.data(), static_cast<Eigen::Index>(dim));
        seen[*c] = true;
    }
    for (ConceptIndex c = 0; c < kg.concept_count(); ++c) {
        if (!seen[c]) {
            throw DataError(name + ": missing vector for concept '" + kg.id_of(c).str() + "'");
        }
    }
    return EmbeddingTable(std::move(rows));
}

inline EmbeddingTable EmbeddingTable::load(const std::filesystem::path& path, const KnowledgeGraph& kg)
{
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    return parse(in, kg, path.filename().string());
}

inline EmbeddingTable EmbeddingTable::pseudo(const KnowledgeGraph& kg, std::size_t dim, std::uint64_t seed,
                                             double group_bias)
{
    if (dim < 2) {
        throw std::invalid_argument("pseudo embeddings need dim >= 2");
    }
    const auto d = static_cast<Eigen::Index>(dim);
    auto keyed = [&](std::string_view key, std::string_view domain, Eigen::Index j) {
        std::uint64_t h = hash_string(key, hash_string(domain, mix64(seed)));
        h = mix64(h ^ mix64(static_cast<std::uint64_t>(j) + 1));
        return 2.0 * bits_to_open_unit(h) - 1.0;
    };
    Matrix rows(static_cast<Eigen::Index>(kg.concept_count()), d);
    for (ConceptIndex c = 0; c < kg.concept_count(); ++c) {
        const auto& id = kg.id_of(c).str();
        const auto& group = kg.group_id(kg.group_of(c)).str();
        for (Eigen::Index j = 0; j < d; ++j) {
            rows(c, j) = keyed(id + '\x1f' + group, "concept", j) + group_bias * keyed(group, "group", j);
        }
    }
    return EmbeddingTable(std::move(rows));
}

inline void EmbeddingTable::write(std::ostream& out, const KnowledgeGraph& kg) const
{
    out.imbue(std::locale::classic());
    out << "dim=" << dim() << '\n';
    const auto old = out.precision(std::numeric_limits<double>::max_digits10);
    for (ConceptIndex c = 0; c < size(); ++c) {
        out << kg.id_of(c).str() << '\t';
        for (Eigen::Index j = 0; j < vectors_.cols(); ++j) {
            out << (j ? " " : "") << vectors_(c, j);
        }
        out << '\n';
    }
    out.precision(old);
}

}  // namespace r2ag
