#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "r2ag/pipeline.hpp"

namespace r2ag::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kEndpoint = 3 };

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Flattens nested objects into dotted keys. Keys that already contain dots pass through.
inline void flatten_config(const nlohmann::json& j, const std::string& prefix, std::map<std::string, nlohmann::json>& out)
{
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (it->is_object()) {
            flatten_config(*it, key, out);
        } else {
            out[key] = *it;
        }
    }
}

inline std::map<std::string, nlohmann::json> load_config(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw UsageError("cannot open config file " + path.string());
    }
    const auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw UsageError(path.string() + ": config must be a JSON object");
    }
    std::map<std::string, nlohmann::json> flat;
    flatten_config(j, "", flat);
    return flat;
}

/// Links CLI options to config keys; an option left unset on the command line
/// takes the config value.
class Bindings {
public:
    template <class T>
    CLI::Option* option(CLI::App* app, const std::string& flag, const std::string& key, T& target,
                        const std::string& help)
    {
        auto* opt = app->add_option(flag, target, help + "  [" + key + "]")->capture_default_str();
        add(app, key, opt, [&target, key](const nlohmann::json& v) { target = convert<T>(v, key); });
        return opt;
    }

    CLI::Option* flag(CLI::App* app, const std::string& flag, const std::string& key, bool& target,
                      const std::string& help)
    {
        auto* opt = app->add_flag(flag, target, help + "  [" + key + "]");
        add(app, key, opt, [&target, key](const nlohmann::json& v) { target = convert<bool>(v, key); });
        return opt;
    }

    /// Applies config values for `app` (and options of the main app).
    void apply(const std::map<std::string, nlohmann::json>& config, const CLI::App* active) const
    {
        for (const auto& [key, v] : config) {
            if (known_.count(key) == 0) {
                throw UsageError("unknown config key '" + key + "'");
            }
        }
        for (const auto& b : entries_) {
            if (b.app != active && b.app->get_parent() != nullptr) {
                continue;
            }
            if (b.opt->count() > 0) {
                continue;  // flags win
            }
            if (auto it = config.find(b.key); it != config.end()) {
                b.set(it->second);
            }
        }
    }

private:
    struct Entry {
        const CLI::App* app;
        std::string key;
        CLI::Option* opt;
        std::function<void(const nlohmann::json&)> set;
    };

    void add(const CLI::App* app, const std::string& key, CLI::Option* opt, std::function<void(const nlohmann::json&)> set)
    {
        known_.insert(key);
        entries_.push_back({app, key, opt, std::move(set)});
    }

    template <class T>
    static T convert(const nlohmann::json& v, const std::string& key)
    {
        try {
            if constexpr (std::is_same_v<T, fs::path>) {
                return fs::path(v.get<std::string>());
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) {
                    throw UsageError("config key '" + key + "' must be a boolean");
                }
                return v.get<bool>();
            } else if constexpr (std::is_unsigned_v<T>) {
                if (!v.is_number_unsigned()) {
                    throw UsageError("config key '" + key + "' must be a non-negative integer");
                }
                return v.get<T>();
            } else if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer()) {
                    throw UsageError("config key '" + key + "' must be an integer");
                }
                return v.get<T>();
            } else {
                return v.get<T>();
            }
        } catch (const nlohmann::json::exception&) {
            throw UsageError("config key '" + key + "' has the wrong type");
        }
    }

    std::vector<Entry> entries_;
    std::set<std::string> known_;
};

struct DataFiles {
    fs::path concepts = "data/concepts.tsv";
    fs::path relations = "data/relations.tsv";
    fs::path embeddings = "data/embeddings.tsv";
    fs::path corpus = "data/patients.jsonl";
};

inline std::string pct(double v)
{
    std::ostringstream s;
    s.imbue(std::locale::classic());
    s << std::fixed << std::setprecision(2) << 100.0 * v;
    return s.str();
}

/// Writes to `path`, or to `out` when path is "-".
template <class Fn>
void emit(const fs::path& path, std::ostream& out, Fn&& fn)
{
    if (path == "-") {
        fn(out);
        return;
    }
    auto f = pipeline::open_out(path);
    fn(f);
    f.flush();
    if (!f) {
        throw DataError("failed writing " + path.string());
    }
}

inline void print_eval(std::ostream& out, const EvalReport& rep)
{
    auto ce = [&out](const char* name, const CeSummary& s) {
        out << name << ": P " << pct(s.macro.precision) << "%  R " << pct(s.macro.recall) << "%  F1 "
            << pct(s.macro.f1) << "%  J " << pct(s.macro.jaccard) << "%  HL " << pct(s.macro.hamming_loss)
            << "%  (" << s.rows << " rows, " << s.skipped << " skipped, " << s.empty_predictions
            << " empty predictions)\n";
    };
    out << "patients: " << rep.rows.size() << '\n';
    ce("CE n-gram ", rep.ngram);
    ce("CE concept", rep.concepts);
    out << "NLG: ROUGE-1 " << pct(rep.nlg.rouge1) << "%  ROUGE-2 " << pct(rep.nlg.rouge2) << "%  ROUGE-L "
        << pct(rep.nlg.rougeL) << "%  BLEU-1 " << pct(rep.nlg.bleu1) << "%  BLEU-2 " << pct(rep.nlg.bleu2) << "%\n";
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    CLI::App app{"Reinforced retrieval over a semantic-group knowledge graph for discharge instructions", "r2ag"};
    app.require_subcommand(1);
    app.fallthrough();
    Bindings bind;

    fs::path config_path;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    app.add_option("--config", config_path, "JSON config with dotted keys; flags take precedence");
    bind.option(&app, "--seed", "seed", seed, "Seed for every random draw");
    bind.option(&app, "--jobs", "jobs", jobs, "Worker threads for generate and eval")->check(CLI::PositiveNumber);

    auto add_data = [&bind](CLI::App* sub, DataFiles& f, bool embeddings, bool corpus) {
        bind.option(sub, "--concepts", "paths.concepts", f.concepts, "Concept table (TSV)");
        bind.option(sub, "--relations", "paths.relations", f.relations, "Relation table (TSV)");
        if (embeddings) {
            bind.option(sub, "--embeddings", "paths.embeddings", f.embeddings, "Embedding table");
        }
        if (corpus) {
            bind.option(sub, "--corpus", "paths.corpus", f.corpus, "Patient corpus (JSON lines)");
        }
    };

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic graph, embeddings and patient corpus");
    synth::SynthSpec spec;
    std::size_t synth_dim = synth::kEmbeddingDim;
    fs::path synth_dir = "data";
    bind.option(synth_cmd, "--out-dir", "paths.data_dir", synth_dir, "Output directory");
    bind.option(synth_cmd, "--groups", "synth.groups", spec.groups, "Semantic groups");
    bind.option(synth_cmd, "--concepts-per-group", "synth.concepts_per_group", spec.concepts_per_group,
                "Concepts per group");
    bind.option(synth_cmd, "--intra-prob", "synth.intra_edge_prob", spec.intra_edge_prob, "Within-group edge probability");
    bind.option(synth_cmd, "--cross-prob", "synth.cross_edge_prob", spec.cross_edge_prob, "Cross-group edge probability");
    bind.option(synth_cmd, "--patients", "synth.patients", spec.patients, "Patients");
    bind.option(synth_cmd, "--keywords", "synth.keywords_per_patient", spec.keywords_per_patient,
                "Dominant-group keywords per patient");
    bind.option(synth_cmd, "--side-groups", "synth.side_groups", spec.side_groups,
                "Other groups contributing one keyword each");
    bind.option(synth_cmd, "--truth", "synth.truth_per_patient", spec.truth_per_patient,
                "Ground-truth concepts per patient");
    bind.option(synth_cmd, "--skew", "synth.skew", spec.skew, "Fraction of ground truth outside the dominant group");
    bind.option(synth_cmd, "--horizon", "train.horizon", spec.horizon, "Hop budget for ground-truth placement");
    bind.option(synth_cmd, "--dim", "synth.dim", synth_dim, "Pseudo-embedding dimension");

    // validate
    auto* validate_cmd = app.add_subcommand("validate", "Load and check graph, embedding and corpus files");
    DataFiles vfiles;
    bool v_embeddings = false;
    bool v_corpus = false;
    add_data(validate_cmd, vfiles, true, true);
    bind.flag(validate_cmd, "--check-embeddings", "validate.embeddings", v_embeddings, "Also load the embedding table");
    bind.flag(validate_cmd, "--check-corpus", "validate.corpus", v_corpus, "Also load and link the corpus");

    // train
    auto* train_cmd = app.add_subcommand("train", "Train the retrieval policy");
    DataFiles tfiles;
    TrainConfig tcfg;
    tcfg.epochs = 10;
    fs::path checkpoint = "out/checkpoint.json";
    fs::path train_log;
    add_data(train_cmd, tfiles, true, true);
    bind.option(train_cmd, "--checkpoint", "paths.checkpoint", checkpoint, "Output checkpoint");
    bind.option(train_cmd, "--log", "paths.train_log", train_log, "Per-episode JSON-lines log");
    bind.option(train_cmd, "--lr", "train.learning_rate", tcfg.learning_rate, "Learning rate");
    bind.option(train_cmd, "--epochs", "train.epochs", tcfg.epochs, "Passes over the corpus");
    bind.option(train_cmd, "--horizon", "train.horizon", tcfg.horizon, "Retrieval steps per episode");
    bind.option(train_cmd, "--discount", "train.discount", tcfg.discount, "Per-step discount");
    bind.option(train_cmd, "--reward-weight", "train.reward_weight", tcfg.reward_weight,
                "Weight of the semantic reward term");
    bind.option(train_cmd, "--group-size", "train.group_size", tcfg.group_size, "Rollouts per patient");

    // retrieve
    auto* retrieve_cmd = app.add_subcommand("retrieve", "Dump reasoning paths of a trained policy");
    DataFiles rfiles;
    fs::path r_checkpoint = "out/checkpoint.json";
    fs::path r_out = "out/paths.jsonl";
    std::string r_patient;
    pipeline::RetrieveOptions ropt;
    add_data(retrieve_cmd, rfiles, true, true);
    bind.option(retrieve_cmd, "--checkpoint", "paths.checkpoint", r_checkpoint, "Trained checkpoint");
    bind.option(retrieve_cmd, "--out", "paths.paths", r_out, "Path dump (JSON lines, '-' for stdout)");
    retrieve_cmd->add_option("--patient", r_patient, "Only this patient id");
    bind.option(retrieve_cmd, "--horizon", "train.horizon", ropt.horizon, "Retrieval steps");
    bind.option(retrieve_cmd, "--max-paths", "generation.max_paths", ropt.max_paths, "Keep at most this many paths (0 = all)");
    bind.flag(retrieve_cmd, "--sampled", "generation.sampled", ropt.sampled, "Sample actions instead of greedy");

    // generate
    auto* generate_cmd = app.add_subcommand("generate", "Generate discharge instructions");
    DataFiles gfiles;
    fs::path g_checkpoint = "out/checkpoint.json";
    fs::path g_out = "out/generated.jsonl";
    fs::path g_template;
    pipeline::RetrieveOptions gropt;
    pipeline::GenerateOptions gopt;
    gopt.stub = false;
    gopt.generator.endpoint.clear();
    bool no_retrieval = false;
    add_data(generate_cmd, gfiles, true, true);
    bind.option(generate_cmd, "--checkpoint", "paths.checkpoint", g_checkpoint, "Trained checkpoint");
    bind.option(generate_cmd, "--out", "paths.generated", g_out, "Generated corpus (JSON lines, '-' for stdout)");
    bind.option(generate_cmd, "--prompt-template", "paths.prompt_template", g_template, "Prompt template (JSON)");
    bind.option(generate_cmd, "--horizon", "train.horizon", gropt.horizon, "Retrieval steps");
    bind.option(generate_cmd, "--max-paths", "generation.max_paths", gropt.max_paths,
                "Keep at most this many paths (0 = all)");
    bind.flag(generate_cmd, "--sampled", "generation.sampled", gropt.sampled, "Sample actions instead of greedy");
    bind.flag(generate_cmd, "--no-retrieval", "generation.no_retrieval", no_retrieval, "Leave the path block empty");
    bind.flag(generate_cmd, "--stub", "generation.stub", gopt.stub, "Offline template generator");
    bind.option(generate_cmd, "--endpoint", "generator.endpoint", gopt.generator.endpoint, "Chat-completion URL");
    bind.option(generate_cmd, "--model", "generator.model", gopt.generator.model, "Model identifier");
    bind.option(generate_cmd, "--temperature", "generator.temperature", gopt.generator.temperature, "Temperature");
    bind.option(generate_cmd, "--max-tokens", "generator.max_tokens", gopt.generator.max_tokens, "Output token cap");
    bind.option(generate_cmd, "--auth-env", "generator.auth_env", gopt.generator.auth_env,
                "Environment variable holding the bearer token");
    bind.option(generate_cmd, "--timeout", "generator.timeout", gopt.generator.timeout_seconds,
                "Seconds per call, retries included");
    bind.option(generate_cmd, "--retries", "generator.retries", gopt.generator.retries, "Extra attempts");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Score generated instructions against references");
    DataFiles efiles;
    fs::path e_generated = "out/generated.jsonl";
    fs::path e_report = "out/report.json";
    fs::path e_rows = "out/rows.csv";
    add_data(eval_cmd, efiles, false, true);
    bind.option(eval_cmd, "--generated", "paths.generated", e_generated, "Generated corpus");
    bind.option(eval_cmd, "--report", "paths.report", e_report, "Report (JSON)");
    bind.option(eval_cmd, "--rows", "paths.rows", e_rows, "Per-patient rows (CSV)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kOk : kUsage;
    }

    try {
        const CLI::App* active = app.get_subcommands().front();
        if (!config_path.empty()) {
            bind.apply(load_config(config_path), active);
        }

        if (active == synth_cmd) {
            spec.seed = seed;
            spec.validate();
            const auto files = pipeline::write_synthetic(spec, synth_dim, synth_dir);
            out << "wrote " << files.concepts.string() << ", " << files.relations.string() << ", "
                << files.embeddings.string() << ", " << files.corpus.string() << '\n';
            return kOk;
        }

        if (active == validate_cmd) {
            auto ws = pipeline::load_workspace(vfiles.concepts, vfiles.relations,
                                               v_embeddings ? std::optional(vfiles.embeddings) : std::nullopt,
                                               v_corpus ? std::optional(vfiles.corpus) : std::nullopt);
            out << "concepts: " << ws->kg.concept_count() << "\ngroups: " << ws->kg.group_count()
                << "\nedges: " << ws->kg.edge_count() << "\nrelation labels: " << ws->kg.label_count() << '\n';
            for (GroupIndex g = 0; g < ws->kg.group_count(); ++g) {
                out << "  " << ws->kg.group_id(g).str() << ": " << ws->kg.members(g).size() << '\n';
            }
            if (ws->table) {
                out << "embedding dim: " << ws->table->dim() << '\n';
            }
            if (v_corpus) {
                std::size_t linked = 0;
                std::size_t with_ref = 0;
                for (const auto& p : ws->corpus) {
                    linked += ws->linker->link(p.pre_admission).empty() ? 0 : 1;
                    with_ref += p.reference ? 1 : 0;
                }
                out << "patients: " << ws->corpus.size() << " (" << linked << " linkable, " << with_ref
                    << " with reference)\n";
            }
            return kOk;
        }

        if (active == train_cmd) {
            tcfg.seed = seed;
            tcfg.validate();
            auto ws = pipeline::load_workspace(tfiles.concepts, tfiles.relations, tfiles.embeddings, tfiles.corpus);
            std::optional<std::ofstream> log;
            if (!train_log.empty()) {
                log.emplace(pipeline::open_out(train_log));
            }
            const auto res = pipeline::run_train(*ws, tcfg, log ? &*log : nullptr);
            auto f = pipeline::open_out(checkpoint);
            f << checkpoint_json(res.params).dump() << '\n';
            out << "trained " << res.episode_rewards.size() << " episodes";
            if (!res.epoch_mean_rewards.empty()) {
                out << "; epoch mean reward " << res.epoch_mean_rewards.front() << " -> "
                    << res.epoch_mean_rewards.back();
            }
            out << "; skipped " << res.skipped_patients << " patients\nwrote " << checkpoint.string() << '\n';
            return kOk;
        }

        if (active == retrieve_cmd) {
            auto ws = pipeline::load_workspace(rfiles.concepts, rfiles.relations, rfiles.embeddings, rfiles.corpus);
            const auto params = load_checkpoint(r_checkpoint);
            std::vector<Patient> patients = ws->corpus;
            ropt.seed = seed;
            ropt.jobs = jobs;
            if (!r_patient.empty()) {
                std::erase_if(patients, [&](const Patient& p) { return p.id != r_patient; });
                if (patients.empty()) {
                    throw DataError("no patient with id '" + r_patient + "'");
                }
                ropt.strict = true;
            }
            const auto rows = pipeline::run_retrieve(*ws, params, patients, ropt);
            emit(r_out, out, [&](std::ostream& o) { pipeline::write_path_dump(o, rows, ws->kg); });
            return kOk;
        }

        if (active == generate_cmd) {
            if (!gopt.stub && gopt.generator.endpoint.empty()) {
                throw UsageError("generate needs --stub or --endpoint");
            }
            auto ws = pipeline::load_workspace(gfiles.concepts, gfiles.relations, gfiles.embeddings, gfiles.corpus);
            if (!g_template.empty()) {
                gopt.prompt = PromptTemplate::load(g_template);
            }
            gropt.seed = seed;
            gropt.jobs = jobs;
            gropt.disabled = no_retrieval;
            gopt.jobs = jobs;
            PolicyParams params;
            if (!no_retrieval) {
                params = load_checkpoint(g_checkpoint);
            }
            const auto paths = pipeline::run_retrieve(*ws, params, ws->corpus, gropt);
            const auto records = pipeline::run_generate(*ws, ws->corpus, paths, gopt);
            emit(g_out, out, [&](std::ostream& o) { write_generated(o, records); });
            return kOk;
        }

        if (active == eval_cmd) {
            auto ws = pipeline::load_workspace(efiles.concepts, efiles.relations, std::nullopt, efiles.corpus);
            const auto generated = load_generated(e_generated);
            const auto rep = pipeline::run_eval(*ws, generated, jobs);
            emit(e_report, out, [&](std::ostream& o) { o << report_json(rep).dump(2) << '\n'; });
            emit(e_rows, out, [&](std::ostream& o) { write_rows_csv(o, rep); });
            print_eval(out, rep);
            return kOk;
        }
        return kUsage;
    } catch (const UsageError& e) {
        err << "r2ag: " << e.what() << '\n';
        return kUsage;
    } catch (const std::invalid_argument& e) {
        err << "r2ag: " << e.what() << '\n';
        return kUsage;
    } catch (const EndpointError& e) {
        err << "r2ag: endpoint error (" << to_string(e.kind()) << "): " << e.what() << '\n';
        return kEndpoint;
    } catch (const DataError& e) {
        err << "r2ag: " << e.what() << '\n';
        return kData;
    } catch (const std::exception& e) {
        err << "r2ag: " << e.what() << '\n';
        return kData;
    }
}

}  // namespace r2ag::cli
