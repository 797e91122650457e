#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "r2ag/embeddings.hpp"
#include "r2ag/kg_store.hpp"
#include "r2ag/rng.hpp"

namespace r2ag::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag)
    {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("r2ag_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return path_; }
    [[nodiscard]] std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& content)
{
    std::ofstream out(p, std::ios::binary);
    out << content;
}

inline std::string read_file(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

inline KnowledgeGraph parse_kg(const std::string& concepts, const std::string& relations)
{
    std::istringstream c(concepts);
    std::istringstream r(relations);
    return KnowledgeGraph::parse(c, r);
}

/// Random graph with ids "c000".."cNNN" spread over `groups` groups "G0".."Gk"
/// and roughly `edges` random directed edges over `labels` labels.
inline KnowledgeGraph random_kg(Rng& rng, std::size_t concepts, std::size_t groups, std::size_t edges,
                                std::size_t labels = 3)
{
    std::vector<ConceptRecord> cs;
    for (std::size_t i = 0; i < concepts; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "c%03zu", i);
        // The first `groups` concepts cover every group once.
        const std::size_t g = i < groups ? i : rng.below(groups);
        cs.push_back({id, std::string("name") + id, "G" + std::to_string(g), 0});
    }
    std::vector<EdgeRecord> es;
    for (std::size_t e = 0; e < edges; ++e) {
        const std::size_t a = rng.below(concepts);
        std::size_t b = rng.below(concepts - 1);
        if (b >= a) {
            ++b;
        }
        es.push_back({cs[a].id, "rel" + std::to_string(rng.below(labels)), cs[b].id, 0});
    }
    return KnowledgeGraph::build(std::move(cs), std::move(es));
}

/// Table of i.i.d. standard-ish random rows (normalized by the table).
inline EmbeddingTable random_table(Rng& rng, std::size_t concepts, std::size_t dim)
{
    Matrix m(static_cast<Eigen::Index>(concepts), static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            m(i, j) = 2.0 * rng.uniform() - 1.0;
        }
    }
    return EmbeddingTable(std::move(m));
}

}  // namespace r2ag::testing
