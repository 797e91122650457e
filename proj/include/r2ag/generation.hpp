#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "r2ag/common.hpp"
#include "r2ag/concept_linker.hpp"
#include "r2ag/gro_trainer.hpp"
#include "r2ag/policy_net.hpp"
#include "r2ag/retrieval_env.hpp"

// Last: <resolv.h>, pulled in by httplib, defines a `_res` macro that breaks
// Eigen headers included after it.
#include <httplib.h>

namespace r2ag {

// ---------------------------------------------------------------------------
// Path rendering

inline std::string render_concept(const KnowledgeGraph& kg, ConceptIndex c)
{
    return kg.concept_at(c).name + " [" + kg.group_id(kg.group_of(c)).str() + "]";
}

/// `name [Group] --relation--> name [Group] --group leap--> ...`
inline std::string render_path(const ReasoningPath& path, const KnowledgeGraph& kg)
{
    std::string out;
    for (const auto& s : path.steps) {
        switch (s.kind) {
        case StepKind::Origin:
            break;
        case StepKind::Relation:
            out += " --" + kg.label(s.label) + "--> ";
            break;
        case StepKind::GroupLeap:
            out += " --" + std::string(kGroupLeapLabel) + "--> ";
            break;
        }
        out += render_concept(kg, s.concept_index);
    }
    return out;
}

/// One line per path, each terminated by a newline.
inline std::string render_paths(const std::vector<ReasoningPath>& paths, const KnowledgeGraph& kg)
{
    std::string out;
    for (const auto& p : paths) {
        out += render_path(p, kg);
        out += '\n';
    }
    return out;
}

inline nlohmann::ordered_json path_json(const ReasoningPath& path, const KnowledgeGraph& kg)
{
    nlohmann::ordered_json steps = nlohmann::ordered_json::array();
    for (const auto& s : path.steps) {
        nlohmann::ordered_json label;
        if (s.kind == StepKind::Relation) {
            label = kg.label(s.label);
        } else if (s.kind == StepKind::GroupLeap) {
            label = std::string(kGroupLeapLabel);
        }
        steps.push_back({{"label", label}, {"concept", kg.id_of(s.concept_index).str()}});
    }
    return {{"origin", kg.id_of(path.origin).str()}, {"steps", std::move(steps)}};
}

inline nlohmann::ordered_json paths_json(const std::vector<ReasoningPath>& paths, const KnowledgeGraph& kg)
{
    auto arr = nlohmann::ordered_json::array();
    for (const auto& p : paths) {
        arr.push_back(path_json(p, kg));
    }
    return arr;
}

/// Keeps the first `max_paths` paths in origin order; 0 keeps all.
inline std::vector<ReasoningPath> truncate_paths(std::vector<ReasoningPath> paths, std::size_t max_paths)
{
    std::stable_sort(paths.begin(), paths.end(),
                     [](const ReasoningPath& a, const ReasoningPath& b) { return a.origin < b.origin; });
    if (max_paths > 0 && paths.size() > max_paths) {
        paths.resize(max_paths);
    }
    return paths;
}

// ---------------------------------------------------------------------------
// Prompting

struct PromptTemplate {
    int version = 1;
    std::string system;
    std::string preamble;          // precedes the pre-admission text
    std::string paths_header;      // precedes the path block
    std::string instruction;       // final line of the user message

    static PromptTemplate defaults()
    {
        return {1,
                "You are a clinical assistant. Write the patient's discharge instruction.",
                "Pre-admission information:",
                "Reasoning paths from a medical knowledge graph:",
                "Write the discharge instruction for this patient in plain language."};
    }

    /// JSON object with keys version, system, preamble, paths_header, instruction.
    static PromptTemplate load(const std::filesystem::path& path)
    {
        std::ifstream in(path);
        if (!in) {
            throw DataError("cannot open " + path.string());
        }
        try {
            const auto j = nlohmann::json::parse(in);
            PromptTemplate t;
            t.version = j.at("version").get<int>();
            if (t.version != 1) {
                throw DataError(path.string() + ": unsupported prompt template version");
            }
            t.system = j.at("system").get<std::string>();
            t.preamble = j.at("preamble").get<std::string>();
            t.paths_header = j.at("paths_header").get<std::string>();
            t.instruction = j.at("instruction").get<std::string>();
            return t;
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path.string() + ": " + e.what());
        }
    }

    [[nodiscard]] nlohmann::ordered_json to_json() const
    {
        return {{"version", version},
                {"system", system},
                {"preamble", preamble},
                {"paths_header", paths_header},
                {"instruction", instruction}};
    }
};

struct PromptBundle {
    std::string system;
    std::string pre_admission;
    std::string path_block;   // one line per path, possibly empty
    std::string instruction;
    std::vector<std::string> concept_names;  // distinct path concepts, first appearance order

    [[nodiscard]] std::string user_message(const PromptTemplate& t) const
    {
        std::string m = t.preamble + "\n" + pre_admission + "\n\n";
        if (!path_block.empty()) {
            m += t.paths_header + "\n" + path_block + "\n";
        }
        m += instruction;
        return m;
    }
};

inline PromptBundle make_bundle(const PromptTemplate& t, const Patient& patient,
                                const std::vector<ReasoningPath>& paths, const KnowledgeGraph& kg)
{
    PromptBundle b{t.system, patient.pre_admission, render_paths(paths, kg), t.instruction, {}};
    std::vector<bool> seen(kg.concept_count(), false);
    for (const auto& p : paths) {
        for (const auto& s : p.steps) {
            if (!seen[s.concept_index]) {
                seen[s.concept_index] = true;
                b.concept_names.push_back(kg.concept_at(s.concept_index).name);
            }
        }
    }
    return b;
}

/// Text up to and including the first sentence terminator that ends the text
/// or is followed by whitespace.
inline std::string first_sentence(std::string_view s)
{
    s = text::trim(s);
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if ((c == '.' || c == '!' || c == '?') &&
            (i + 1 == s.size() || std::isspace(static_cast<unsigned char>(s[i + 1])))) {
            return std::string(s.substr(0, i + 1));
        }
    }
    return std::string(s);
}

/// Offline generator: the first pre-admission sentence, then every path concept name.
inline std::string stub_generate(const PromptBundle& bundle)
{
    std::string out = first_sentence(bundle.pre_admission);
    if (bundle.concept_names.empty()) {
        return out;
    }
    out += out.empty() ? "" : " ";
    out += "Discharge focus: ";
    for (std::size_t i = 0; i < bundle.concept_names.size(); ++i) {
        out += (i ? ", " : "") + bundle.concept_names[i];
    }
    out += '.';
    return out;
}

// ---------------------------------------------------------------------------
// Inference

/// One rollout of the trained policy from the patient's linked keywords.
/// Greedy unless `rng` is given, in which case actions are sampled.
inline std::vector<ReasoningPath> retrieve_for_patient(const PolicyParams& params, const Patient& patient,
                                                       const ConceptLinker& linker, const EmbeddingTable& table,
                                                       const GroupVectors& groups, int horizon,
                                                       Rng* rng = nullptr)
{
    auto keywords = linker.link(patient.pre_admission);
    if (keywords.empty()) {
        throw DataError("patient '" + patient.id + "': no concept could be linked");
    }
    const RetrievalEnvironment env(linker.graph(), table, groups, std::move(keywords), horizon);
    Rng unused(0);
    auto rec = run_rollout(params, env, rng ? ActionMode::Sample : ActionMode::Greedy, rng ? *rng : unused);
    return std::move(rec.paths);
}

// ---------------------------------------------------------------------------
// Endpoint

struct GeneratorConfig {
    std::string endpoint = "http://127.0.0.1:8080/v1/chat/completions";
    std::string model = "default";
    double temperature = 0.0;
    int max_tokens = 512;
    std::string auth_env = "R2AG_API_KEY";
    double timeout_seconds = 60.0;  // covers all attempts of one call
    int retries = 2;                // extra attempts after the first
    int backoff_ms = 250;           // doubled after every failed attempt

    void validate() const
    {
        if (!(temperature >= 0.0)) {
            throw std::invalid_argument("temperature must be >= 0");
        }
        if (!(timeout_seconds > 0.0)) {
            throw std::invalid_argument("timeout must be > 0");
        }
        if (max_tokens < 1) {
            throw std::invalid_argument("max_tokens must be >= 1");
        }
        if (retries < 0 || backoff_ms < 0) {
            throw std::invalid_argument("retries and backoff must be >= 0");
        }
    }
};

class EndpointError : public std::runtime_error {
public:
    enum class Kind { Network, Status, Timeout, Malformed };

    EndpointError(Kind kind, int attempts, const std::string& what)
        : std::runtime_error(what + " (after " + std::to_string(attempts) + " attempt" + (attempts == 1 ? "" : "s") +
                             ")"),
          kind_(kind), attempts_(attempts)
    {
    }

    [[nodiscard]] Kind kind() const noexcept { return kind_; }
    [[nodiscard]] int attempts() const noexcept { return attempts_; }

private:
    Kind kind_;
    int attempts_;
};

inline const char* to_string(EndpointError::Kind k)
{
    switch (k) {
    case EndpointError::Kind::Network:
        return "network";
    case EndpointError::Kind::Status:
        return "status";
    case EndpointError::Kind::Timeout:
        return "timeout";
    case EndpointError::Kind::Malformed:
        return "malformed";
    }
    return "unknown";
}

struct ParsedUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

inline ParsedUrl parse_url(std::string_view url)
{
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string_view::npos) {
        throw std::invalid_argument("endpoint must start with http:// or https://");
    }
    const auto scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") {
        throw std::invalid_argument("unsupported endpoint scheme '" + std::string(scheme) + "'");
    }
    const auto rest = url.substr(scheme_end + 3);
    const auto slash = rest.find('/');
    const auto host = rest.substr(0, slash);
    if (host.empty()) {
        throw std::invalid_argument("endpoint has no host");
    }
    ParsedUrl out{std::string(scheme) + "://" + std::string(host),
                  slash == std::string_view::npos ? "/" : std::string(rest.substr(slash))};
    return out;
}

inline nlohmann::ordered_json chat_request(const GeneratorConfig& cfg, const PromptBundle& bundle,
                                           const PromptTemplate& tmpl)
{
    return {{"model", cfg.model},
            {"messages",
             nlohmann::ordered_json::array({{{"role", "system"}, {"content", bundle.system}},
                                            {{"role", "user"}, {"content", bundle.user_message(tmpl)}}})},
            {"temperature", cfg.temperature},
            {"max_tokens", cfg.max_tokens}};
}

/// Text of choices[0].message.content; nullopt if the body does not have that shape.
inline std::optional<std::string> parse_completion(const std::string& body)
{
    const auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        return std::nullopt;
    }
    const auto choices = j.find("choices");
    if (choices == j.end() || !choices->is_array() || choices->empty()) {
        return std::nullopt;
    }
    const auto& first = (*choices)[0];
    if (!first.is_object() || !first.contains("message") || !first["message"].is_object()) {
        return std::nullopt;
    }
    const auto& msg = first["message"];
    if (!msg.contains("content") || !msg["content"].is_string()) {
        return std::nullopt;
    }
    return msg["content"].get<std::string>();
}

/// Sends one chat-completion request, retrying network errors, timeouts, 429
/// and 5xx responses until the retry budget or the overall deadline runs out.
inline std::string generate(const GeneratorConfig& cfg, const PromptBundle& bundle,
                            const PromptTemplate& tmpl = PromptTemplate::defaults())
{
    using clock = std::chrono::steady_clock;
    cfg.validate();
    const auto url = parse_url(cfg.endpoint);
    const std::string body = chat_request(cfg, bundle, tmpl).dump();

    httplib::Headers headers;
    if (const char* token = std::getenv(cfg.auth_env.c_str()); token && *token) {
        headers.emplace("Authorization", std::string("Bearer ") + token);
    }

    const auto deadline = clock::now() + std::chrono::duration_cast<clock::duration>(
                                             std::chrono::duration<double>(cfg.timeout_seconds));
    auto backoff = std::chrono::milliseconds(cfg.backoff_ms);
    const int max_attempts = cfg.retries + 1;
    int attempt = 0;
    for (;;) {
        ++attempt;
        const auto remaining = std::chrono::duration_cast<std::chrono::microseconds>(deadline - clock::now());
        if (remaining.count() <= 0) {
            throw EndpointError(EndpointError::Kind::Timeout, attempt - 1, "endpoint deadline exceeded");
        }

        httplib::Client client(url.origin);
        client.set_connection_timeout(remaining);
        client.set_read_timeout(remaining);
        client.set_write_timeout(remaining);

        const auto started = clock::now();
        auto res = client.Post(url.path, headers, body, "application/json");

        EndpointError::Kind kind;
        std::string what;
        if (!res) {
            const bool timed_out = res.error() == httplib::Error::ConnectionTimeout ||
                                   (res.error() == httplib::Error::Read && clock::now() - started >= remaining);
            kind = timed_out ? EndpointError::Kind::Timeout : EndpointError::Kind::Network;
            what = "endpoint request failed: " + httplib::to_string(res.error());
        } else if (res->status >= 200 && res->status < 300) {
            if (auto text = parse_completion(res->body)) {
                return *text;
            }
            throw EndpointError(EndpointError::Kind::Malformed, attempt,
                                "endpoint response lacks choices[0].message.content");
        } else {
            kind = EndpointError::Kind::Status;
            what = "endpoint returned HTTP " + std::to_string(res->status);
            const bool retryable = res->status == 429 || res->status >= 500;
            if (!retryable) {
                throw EndpointError(kind, attempt, what);
            }
        }

        if (attempt >= max_attempts) {
            throw EndpointError(kind, attempt, what);
        }
        const auto left = deadline - clock::now();
        if (left <= clock::duration::zero()) {
            throw EndpointError(EndpointError::Kind::Timeout, attempt, what + "; deadline exceeded");
        }
        std::this_thread::sleep_for(std::min<clock::duration>(backoff, left));
        backoff *= 2;
    }
}

// ---------------------------------------------------------------------------
// Output corpus

struct GeneratedRecord {
    std::string id;
    std::string generated;
    nlohmann::ordered_json paths;
};

inline void write_generated(std::ostream& out, const std::vector<GeneratedRecord>& rows)
{
    for (const auto& r : rows) {
        nlohmann::ordered_json j{{"id", r.id}, {"generated", r.generated}, {"paths", r.paths}};
        out << j.dump() << '\n';
    }
}

}  // namespace r2ag
