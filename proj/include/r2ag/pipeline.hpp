#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "r2ag/concept_linker.hpp"
#include "r2ag/embeddings.hpp"
#include "r2ag/evaluation.hpp"
#include "r2ag/generation.hpp"
#include "r2ag/gro_trainer.hpp"
#include "r2ag/kg_store.hpp"
#include "r2ag/synthetic_data.hpp"
#include "r2ag/worker_pool.hpp"

// File-level steps shared by the command-line tool and the end-to-end checks.
namespace r2ag::pipeline {

namespace fs = std::filesystem;

inline std::ofstream open_out(const fs::path& path)
{
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    return out;
}

struct SynthFiles {
    fs::path concepts;
    fs::path relations;
    fs::path embeddings;
    fs::path corpus;

    static SynthFiles in(const fs::path& dir)
    {
        return {dir / "concepts.tsv", dir / "relations.tsv", dir / "embeddings.tsv", dir / "patients.jsonl"};
    }
};

/// Graph, pseudo embeddings and patient corpus for one spec.
inline SynthFiles write_synthetic(const synth::SynthSpec& spec, std::size_t dim, const fs::path& dir)
{
    const auto files = SynthFiles::in(dir);
    const auto kg = synth::gen_kg(spec);
    const auto corpus = synth::patients_of(synth::gen_corpus(spec, kg));
    const auto table = EmbeddingTable::pseudo(kg, dim, spec.seed);
    {
        auto c = open_out(files.concepts);
        auto r = open_out(files.relations);
        write_kg(kg, c, r);
    }
    {
        auto e = open_out(files.embeddings);
        table.write(e, kg);
    }
    {
        auto p = open_out(files.corpus);
        write_corpus(p, corpus);
    }
    return files;
}

/// Loaded inputs. The linker points into the graph, so this lives behind a pointer.
struct Workspace {
    KnowledgeGraph kg;
    std::optional<EmbeddingTable> table;
    std::vector<Patient> corpus;
    std::unique_ptr<ConceptLinker> linker;

    Workspace() = default;
    Workspace(const Workspace&) = delete;
    Workspace& operator=(const Workspace&) = delete;

    [[nodiscard]] const EmbeddingTable& embeddings() const
    {
        if (!table) {
            throw std::logic_error("workspace has no embedding table");
        }
        return *table;
    }
};

inline std::unique_ptr<Workspace> load_workspace(const fs::path& concepts, const fs::path& relations,
                                                 const std::optional<fs::path>& embeddings,
                                                 const std::optional<fs::path>& corpus)
{
    auto ws = std::make_unique<Workspace>();
    ws->kg = KnowledgeGraph::load(concepts, relations);
    ws->linker = std::make_unique<ConceptLinker>(ws->kg);
    if (embeddings) {
        ws->table = EmbeddingTable::load(*embeddings, ws->kg);
    }
    if (corpus) {
        ws->corpus = load_corpus(*corpus);
    }
    return ws;
}

inline TrainResult run_train(const Workspace& ws, const TrainConfig& cfg, std::ostream* log = nullptr)
{
    auto init = PolicyParams::init(ws.embeddings().dim(), cfg.seed);
    std::function<void(const EpisodeLog&)> sink;
    if (log) {
        sink = [log](const EpisodeLog& e) { *log << to_json(e).dump() << '\n'; };
    }
    return train(ws.corpus, *ws.linker, ws.embeddings(), cfg, std::move(init), sink);
}

struct RetrieveOptions {
    int horizon = 5;
    std::size_t max_paths = 0;  // 0 keeps all
    bool sampled = false;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    bool disabled = false;  // skip retrieval entirely
    bool strict = false;    // unlinkable patients are an error
};

struct PatientPaths {
    std::string id;
    std::vector<ReasoningPath> paths;
    bool linked = true;  // false when no keyword could be linked
};

/// Paths for each patient in `patients`; sampling draws from a per-patient
/// stream so results do not depend on the worker count. Patients without any
/// linkable keyword get an empty path set unless `strict` is set.
inline std::vector<PatientPaths> run_retrieve(const Workspace& ws, const PolicyParams& params,
                                              const std::vector<Patient>& patients, const RetrieveOptions& opt)
{
    if (!opt.disabled && params.dim != ws.embeddings().dim()) {
        throw DataError("checkpoint dimension " + std::to_string(params.dim) + " does not match embeddings (" +
                        std::to_string(ws.embeddings().dim()) + ")");
    }
    std::optional<GroupVectors> groups;
    if (!opt.disabled) {
        groups.emplace(ws.kg, ws.embeddings());
    }
    return parallel_map(patients.size(), opt.jobs, [&](std::size_t i) {
        const auto& p = patients[i];
        if (opt.disabled) {
            return PatientPaths{p.id, {}, true};
        }
        if (!opt.strict && ws.linker->link(p.pre_admission).empty()) {
            return PatientPaths{p.id, {}, false};
        }
        std::optional<Rng> rng;
        if (opt.sampled) {
            rng.emplace(mix64(opt.seed) ^ hash_string(p.id));
        }
        auto paths = retrieve_for_patient(params, p, *ws.linker, ws.embeddings(), *groups, opt.horizon,
                                          rng ? &*rng : nullptr);
        return PatientPaths{p.id, truncate_paths(std::move(paths), opt.max_paths), true};
    });
}

/// One JSON line per path, tagged with its patient id.
inline void write_path_dump(std::ostream& out, const std::vector<PatientPaths>& rows, const KnowledgeGraph& kg)
{
    for (const auto& r : rows) {
        for (const auto& p : r.paths) {
            nlohmann::ordered_json j{{"patient", r.id}};
            const auto pj = path_json(p, kg);
            for (auto it = pj.begin(); it != pj.end(); ++it) {
                j[it.key()] = it.value();
            }
            out << j.dump() << '\n';
        }
    }
}

struct GenerateOptions {
    bool stub = true;
    GeneratorConfig generator;
    PromptTemplate prompt = PromptTemplate::defaults();
    std::size_t jobs = 1;
};

inline std::vector<GeneratedRecord> run_generate(const Workspace& ws, const std::vector<Patient>& patients,
                                                 const std::vector<PatientPaths>& retrieved,
                                                 const GenerateOptions& opt)
{
    if (patients.size() != retrieved.size()) {
        throw std::invalid_argument("run_generate: one path set per patient expected");
    }
    if (!opt.stub) {
        opt.generator.validate();
    }
    return parallel_map(patients.size(), opt.jobs, [&](std::size_t i) {
        const auto bundle = make_bundle(opt.prompt, patients[i], retrieved[i].paths, ws.kg);
        std::string text = opt.stub ? stub_generate(bundle) : generate(opt.generator, bundle, opt.prompt);
        return GeneratedRecord{patients[i].id, std::move(text), paths_json(retrieved[i].paths, ws.kg)};
    });
}

inline EvalReport run_eval(const Workspace& ws, const std::vector<Generated>& generated, std::size_t jobs = 1)
{
    check_alignment(generated, ws.corpus);
    auto rows = parallel_map(generated.size(), jobs, [&](std::size_t i) {
        return evaluate_row(generated[i].id, generated[i].text, *ws.corpus[i].reference, *ws.linker);
    });
    return aggregate(std::move(rows));
}

}  // namespace r2ag::pipeline
