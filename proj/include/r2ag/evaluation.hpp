#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <locale>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "r2ag/common.hpp"
#include "r2ag/concept_linker.hpp"
#include "r2ag/text.hpp"

namespace r2ag {

namespace detail {

// 100 common English function words.
inline constexpr std::array<std::string_view, 100> kStopwords = {
    "a",     "about", "above", "after",   "again", "against", "all",   "am",    "an",    "and",
    "any",   "are",   "as",    "at",      "be",    "because", "been",  "before", "being", "below",
    "between", "both", "but",  "by",      "can",   "could",   "did",   "do",    "does",  "doing",
    "down",  "during", "each", "few",     "for",   "from",    "further", "had", "has",   "have",
    "having", "he",   "her",   "here",    "hers",  "him",     "his",   "how",   "if",    "in",
    "into",  "is",    "it",    "its",     "just",  "me",      "more",  "most",  "my",    "no",
    "nor",   "not",   "now",   "of",      "off",   "on",      "once",  "only",  "or",    "other",
    "our",   "out",   "over",  "own",     "same",  "she",     "should", "so",   "some",  "such",
    "than",  "that",  "the",   "their",   "them",  "then",    "there", "these", "they",  "this",
    "those", "through", "to",  "too",     "under", "until",   "up",    "very",  "was",   "we"};

}  // namespace detail

inline bool is_stopword(std::string_view w)
{
    static const std::unordered_set<std::string_view> set(detail::kStopwords.begin(), detail::kStopwords.end());
    return set.count(w) > 0;
}

using TokenSet = std::set<std::string>;

/// Lowercased content tokens: length >= 2, no stopwords, deduplicated.
inline TokenSet extract_tokens(std::string_view s)
{
    TokenSet out;
    for (auto& w : text::words(s)) {
        if (w.size() >= 2 && !is_stopword(w)) {
            out.insert(std::move(w));
        }
    }
    return out;
}

struct CeRow {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double jaccard = 0.0;
    double hamming_loss = 1.0;
    bool empty_prediction = false;
};

/// Set-level scores. Callers skip rows whose reference is empty.
template <class T>
CeRow ce_metrics(const std::set<T>& pred, const std::set<T>& ref)
{
    if (ref.empty()) {
        throw std::invalid_argument("ce_metrics: empty reference");
    }
    std::size_t inter = 0;
    for (const auto& x : pred) {
        inter += ref.count(x);
    }
    CeRow r;
    r.empty_prediction = pred.empty();
    r.precision = pred.empty() ? 0.0 : static_cast<double>(inter) / static_cast<double>(pred.size());
    r.recall = static_cast<double>(inter) / static_cast<double>(ref.size());
    const double pr = r.precision + r.recall;
    r.f1 = pr > 0.0 ? 2.0 * r.precision * r.recall / pr : 0.0;
    r.jaccard = static_cast<double>(inter) / static_cast<double>(pred.size() + ref.size() - inter);
    r.hamming_loss = 1.0 - r.recall;
    return r;
}

namespace detail {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

inline NgramCounts ngrams(const std::vector<std::string>& toks, std::size_t n)
{
    NgramCounts out;
    if (toks.size() < n) {
        return out;
    }
    for (std::size_t i = 0; i + n <= toks.size(); ++i) {
        ++out[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                       toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return out;
}

inline std::size_t clipped_overlap(const NgramCounts& pred, const NgramCounts& ref)
{
    std::size_t m = 0;
    for (const auto& [g, c] : pred) {
        if (auto it = ref.find(g); it != ref.end()) {
            m += std::min(c, it->second);
        }
    }
    return m;
}

inline std::size_t total(const NgramCounts& c)
{
    std::size_t t = 0;
    for (const auto& [g, n] : c) {
        t += n;
    }
    return t;
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b)
{
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

inline double f1_of(double matched, double pred_total, double ref_total)
{
    if (matched <= 0.0) {
        return 0.0;
    }
    const double p = matched / pred_total;
    const double r = matched / ref_total;
    return 2.0 * p * r / (p + r);
}

}  // namespace detail

/// ROUGE-n F1 over n-gram multisets. When neither text is long enough to
/// contain an n-gram the score is 1 for identical token sequences, else 0.
inline double rouge_n(std::string_view pred, std::string_view ref, std::size_t n)
{
    if (n < 1) {
        throw std::invalid_argument("rouge_n: n must be >= 1");
    }
    const auto p = text::words(pred);
    const auto r = text::words(ref);
    if (p.empty() || r.empty()) {
        return 0.0;
    }
    const auto pc = detail::ngrams(p, n);
    const auto rc = detail::ngrams(r, n);
    if (pc.empty() || rc.empty()) {
        return pc.empty() && rc.empty() && p == r ? 1.0 : 0.0;
    }
    return detail::f1_of(static_cast<double>(detail::clipped_overlap(pc, rc)), static_cast<double>(detail::total(pc)),
                         static_cast<double>(detail::total(rc)));
}

/// LCS-based F-measure with beta = 1.
inline double rouge_l(std::string_view pred, std::string_view ref)
{
    const auto p = text::words(pred);
    const auto r = text::words(ref);
    if (p.empty() || r.empty()) {
        return 0.0;
    }
    return detail::f1_of(static_cast<double>(detail::lcs_length(p, r)), static_cast<double>(p.size()),
                         static_cast<double>(r.size()));
}

/// Sentence BLEU: geometric mean of clipped 1..n-gram precisions times the
/// brevity penalty. No smoothing, so any zero precision gives 0. An order at
/// which neither text has an n-gram counts as precision 1.
inline double bleu_n(std::string_view pred, std::string_view ref, std::size_t n)
{
    if (n < 1) {
        throw std::invalid_argument("bleu_n: n must be >= 1");
    }
    const auto p = text::words(pred);
    const auto r = text::words(ref);
    if (p.empty() || r.empty()) {
        return 0.0;
    }
    double log_sum = 0.0;
    for (std::size_t k = 1; k <= n; ++k) {
        const auto pc = detail::ngrams(p, k);
        const auto rc = detail::ngrams(r, k);
        if (pc.empty()) {
            if (!rc.empty()) {
                return 0.0;
            }
            continue;
        }
        const auto m = detail::clipped_overlap(pc, rc);
        if (m == 0) {
            return 0.0;
        }
        log_sum += std::log(static_cast<double>(m) / static_cast<double>(detail::total(pc)));
    }
    const double lp = static_cast<double>(p.size());
    const double lr = static_cast<double>(r.size());
    const double bp = lp < lr ? std::exp(1.0 - lr / lp) : 1.0;
    return bp * std::exp(log_sum / static_cast<double>(n));
}

struct NlgRow {
    double rouge1 = 0.0;
    double rouge2 = 0.0;
    double rougeL = 0.0;
    double bleu1 = 0.0;
    double bleu2 = 0.0;
};

inline NlgRow nlg_metrics(std::string_view pred, std::string_view ref)
{
    return {rouge_n(pred, ref, 1), rouge_n(pred, ref, 2), rouge_l(pred, ref), bleu_n(pred, ref, 1),
            bleu_n(pred, ref, 2)};
}

struct Generated {
    std::string id;
    std::string text;
};

struct PatientRow {
    std::string id;
    std::optional<CeRow> ngram;    // nullopt when the reference has no content tokens
    std::optional<CeRow> concepts;  // nullopt when the reference links no concepts
    NlgRow nlg;
};

struct CeSummary {
    CeRow macro;  // empty_prediction unused
    std::size_t rows = 0;
    std::size_t skipped = 0;
    std::size_t empty_predictions = 0;
};

struct EvalReport {
    std::vector<PatientRow> rows;
    CeSummary ngram;
    CeSummary concepts;
    NlgRow nlg;
};

namespace detail {

inline CeSummary summarize(const std::vector<PatientRow>& rows, std::optional<CeRow> PatientRow::*level)
{
    CeSummary s;
    s.macro.hamming_loss = 0.0;
    for (const auto& row : rows) {
        const auto& r = row.*level;
        if (!r) {
            ++s.skipped;
            continue;
        }
        ++s.rows;
        s.empty_predictions += r->empty_prediction ? 1 : 0;
        s.macro.precision += r->precision;
        s.macro.recall += r->recall;
        s.macro.f1 += r->f1;
        s.macro.jaccard += r->jaccard;
        s.macro.hamming_loss += r->hamming_loss;
    }
    if (s.rows > 0) {
        const double n = static_cast<double>(s.rows);
        s.macro.precision /= n;
        s.macro.recall /= n;
        s.macro.f1 /= n;
        s.macro.jaccard /= n;
        s.macro.hamming_loss /= n;
    }
    return s;
}

inline std::set<ConceptIndex> concept_set(const ConceptLinker& linker, std::string_view s)
{
    const auto c = linker.link(s).concepts();
    return {c.begin(), c.end()};
}

}  // namespace detail

inline PatientRow evaluate_row(const std::string& id, std::string_view pred, std::string_view ref,
                               const ConceptLinker& linker)
{
    PatientRow row;
    row.id = id;
    const auto pt = extract_tokens(pred);
    const auto rt = extract_tokens(ref);
    if (!rt.empty()) {
        row.ngram = ce_metrics(pt, rt);
    }
    const auto pc = detail::concept_set(linker, pred);
    const auto rc = detail::concept_set(linker, ref);
    if (!rc.empty()) {
        row.concepts = ce_metrics(pc, rc);
    }
    row.nlg = nlg_metrics(pred, ref);
    return row;
}

/// Macro averages over already-scored rows.
inline EvalReport aggregate(std::vector<PatientRow> rows)
{
    EvalReport rep;
    rep.rows = std::move(rows);
    rep.ngram = detail::summarize(rep.rows, &PatientRow::ngram);
    rep.concepts = detail::summarize(rep.rows, &PatientRow::concepts);
    for (const auto& r : rep.rows) {
        rep.nlg.rouge1 += r.nlg.rouge1;
        rep.nlg.rouge2 += r.nlg.rouge2;
        rep.nlg.rougeL += r.nlg.rougeL;
        rep.nlg.bleu1 += r.nlg.bleu1;
        rep.nlg.bleu2 += r.nlg.bleu2;
    }
    if (!rep.rows.empty()) {
        const double n = static_cast<double>(rep.rows.size());
        rep.nlg.rouge1 /= n;
        rep.nlg.rouge2 /= n;
        rep.nlg.rougeL /= n;
        rep.nlg.bleu1 /= n;
        rep.nlg.bleu2 /= n;
    }
    return rep;
}

/// Reads `{id, generated, ...}` JSON lines; other fields are ignored.
inline std::vector<Generated> parse_generated(std::istream& in, const std::string& name = "generated")
{
    std::vector<Generated> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) {
            continue;
        }
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("id") || !j["id"].is_string() ||
            !j.contains("generated") || !j["generated"].is_string()) {
            throw DataError(detail::where(name, line_no) + ": expected an object with string 'id' and 'generated'");
        }
        out.push_back({j["id"].get<std::string>(), j["generated"].get<std::string>()});
    }
    return out;
}

inline std::vector<Generated> load_generated(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    return parse_generated(in, path.filename().string());
}

/// Checks that `generated` and `references` describe the same patients in the same order.
inline void check_alignment(const std::vector<Generated>& generated, const std::vector<Patient>& references)
{
    if (generated.empty()) {
        throw DataError("evaluation: empty corpus");
    }
    if (generated.size() != references.size()) {
        throw DataError("evaluation: " + std::to_string(generated.size()) + " generated rows but " +
                        std::to_string(references.size()) + " patients");
    }
    for (std::size_t i = 0; i < generated.size(); ++i) {
        if (generated[i].id != references[i].id) {
            throw DataError("evaluation: id mismatch at row " + std::to_string(i + 1) + ": '" + generated[i].id +
                            "' vs '" + references[i].id + "'");
        }
        if (!references[i].reference) {
            throw DataError("evaluation: patient '" + references[i].id + "' has no reference text");
        }
    }
}

inline EvalReport evaluate_corpus(const std::vector<Generated>& generated, const std::vector<Patient>& references,
                                  const ConceptLinker& linker)
{
    check_alignment(generated, references);
    std::vector<PatientRow> rows;
    rows.reserve(generated.size());
    for (std::size_t i = 0; i < generated.size(); ++i) {
        rows.push_back(evaluate_row(generated[i].id, generated[i].text, *references[i].reference, linker));
    }
    return aggregate(std::move(rows));
}

namespace detail {

inline nlohmann::ordered_json ce_json(const CeSummary& s)
{
    return {{"precision", s.macro.precision}, {"recall", s.macro.recall},
            {"f1", s.macro.f1},               {"jaccard", s.macro.jaccard},
            {"hamming_loss", s.macro.hamming_loss}, {"rows", s.rows},
            {"skipped", s.skipped},           {"empty_predictions", s.empty_predictions}};
}

}  // namespace detail

inline nlohmann::ordered_json report_json(const EvalReport& rep)
{
    nlohmann::ordered_json j;
    j["patients"] = rep.rows.size();
    j["ce"]["ngram"] = detail::ce_json(rep.ngram);
    j["ce"]["concept"] = detail::ce_json(rep.concepts);
    j["nlg"] = {{"rouge1", rep.nlg.rouge1},
                {"rouge2", rep.nlg.rouge2},
                {"rougeL", rep.nlg.rougeL},
                {"bleu1", rep.nlg.bleu1},
                {"bleu2", rep.nlg.bleu2}};
    return j;
}

/// One line per patient. Skipped CE levels leave their cells empty.
inline void write_rows_csv(std::ostream& out, const EvalReport& rep)
{
    out.imbue(std::locale::classic());
    const auto old = out.precision(std::numeric_limits<double>::max_digits10);
    out << "id,ngram_p,ngram_r,ngram_f1,ngram_j,ngram_hl,concept_p,concept_r,concept_f1,concept_j,concept_hl,"
           "rouge1,rouge2,rougeL,bleu1,bleu2\n";
    auto ce = [&out](const std::optional<CeRow>& r) {
        if (r) {
            out << ',' << r->precision << ',' << r->recall << ',' << r->f1 << ',' << r->jaccard << ','
                << r->hamming_loss;
        } else {
            out << ",,,,,";
        }
    };
    for (const auto& row : rep.rows) {
        // Patient ids are opaque; quote them so commas survive.
        out << '"';
        for (char c : row.id) {
            out << (c == '"' ? "\"\"" : std::string(1, c));
        }
        out << '"';
        ce(row.ngram);
        ce(row.concepts);
        out << ',' << row.nlg.rouge1 << ',' << row.nlg.rouge2 << ',' << row.nlg.rougeL << ',' << row.nlg.bleu1 << ','
            << row.nlg.bleu2 << '\n';
    }
    out.precision(old);
}

}  // namespace r2ag
