#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "trd/common.hpp"

namespace trd {

/// Lowercase alphanumeric run with its character span `[begin, end)`.
struct Token {
    std::string text;
    std::size_t begin = 0, end = 0;
    int sentence = 0;
    int clause = 0;
};

/// Sentences break at `.` before whitespace or end, `;` and newlines; clauses additionally
/// break at `,` and at the words "but" and "except".
std::vector<Token> tokenize_note(std::string_view text);

/// Distinct lowercase alphanumeric runs; the classifier's bag of words.
std::vector<std::string> bag_of_words(std::string_view text);

struct Lexicon {
    std::set<std::string> terms;
    std::string source;

    /// One term per line; blank lines and `#` comments ignored.
    static Lexicon parse(std::istream& in, std::string source = {});
    static Lexicon load(const std::filesystem::path& path);
};

enum class TriggerEffect { negated, prophylactic, speculated };  // declaration order is precedence
enum class TriggerScope { pre, post };
enum class TriggerWindow { clause, sentence };

std::string to_string(TriggerEffect e);

struct TriggerRule {
    std::string phrase;
    TriggerScope scope = TriggerScope::pre;
    TriggerEffect effect = TriggerEffect::negated;
    TriggerWindow window = TriggerWindow::sentence;
};

struct TriggerRuleSet {
    std::vector<TriggerRule> rules;

    /// Lines of `effect scope window phrase...`, e.g. `negated pre sentence no need for`.
    static TriggerRuleSet parse(std::istream& in);
    static TriggerRuleSet load(const std::filesystem::path& path);
};

struct TextSpan {
    std::size_t begin = 0, end = 0;
    std::string term;
    bool operator==(const TextSpan&) const = default;
};

/// Case-insensitive whole-token matches, longest term first, non-overlapping.
std::vector<TextSpan> match_antibiotics(std::string_view text, const Lexicon& lexicon);

enum class MentionAssertion { affirmed, negated, speculated, prophylactic };
std::string to_string(MentionAssertion a);

struct SpanAssertion {
    TextSpan span;
    MentionAssertion assertion = MentionAssertion::affirmed;
    std::string trigger;  // empty when affirmed by default
};

/// Nearest in-window trigger of the right scope decides; ties go negated, prophylactic, speculated.
std::vector<SpanAssertion> classify_assertion(std::string_view text, std::span<const TextSpan> spans,
                                              const TriggerRuleSet& rules);

enum class NoteAssertion { infection, possible_infection, no_infection };
std::string to_string(NoteAssertion a);
NoteAssertion note_assertion_from_string(std::string_view s);

struct NoteLabel {
    std::string note_id;
    NoteAssertion assertion = NoteAssertion::no_infection;
    std::vector<SpanAssertion> matches;
    std::vector<std::string> rationale;
};

NoteLabel heuristic_label(std::string_view text, const Lexicon& lexicon, const TriggerRuleSet& rules,
                          std::string note_id = {});

struct Note {
    std::string note_id;
    std::string stay_id;
    Timestamp timestamp = 0;
    std::string text;
};

/// `note_id,stay_id,timestamp,text` with RFC-4180 quoting.
std::vector<Note> read_notes_csv(std::istream& in);

enum class PossiblePolicy { exclude, positive, negative };

struct TextModelConfig {
    double lambda = 1e-4;  // L2 weight
    int epochs = 20;
    double eta0 = 0.5;  // step size is eta0 / (1 + lambda * eta0 * t)
    std::uint64_t seed = 0;
    PossiblePolicy possible = PossiblePolicy::exclude;
};

struct LinearTextModel {
    std::map<std::string, std::size_t> vocabulary;
    Eigen::VectorXd weights;
    double bias = 0;
    TextModelConfig config;
    std::vector<double> objective_trace;  // regularized hinge objective after each epoch

    nlohmann::json to_json() const;
    static LinearTextModel from_json(const nlohmann::json& j);
};

/// Linear max-margin classifier on binary term presence, by seeded stochastic subgradient
/// descent with an unregularized bias.
LinearTextModel train_text_classifier(std::span<const std::string> notes, std::span<const NoteAssertion> labels,
                                      const TextModelConfig& config = {});

struct NotePrediction {
    bool infection = false;  // score > 0
    double score = 0;
    double margin = 0;  // |score|
};

NotePrediction predict_note(const LinearTextModel& model, std::string_view text);

/// Criterion 1: antibiotic or culture order; criterion 2: ICD-9 code; criterion 3: note label.
struct StructuredCriteria {
    std::map<std::string, std::vector<std::string>> orders;      // stay -> antibiotic/culture entries
    std::map<std::string, std::vector<std::string>> icd9_codes;  // stay -> codes

    /// `stay_id,criterion,value` rows; criterion is antibiotic, culture or icd9.
    static StructuredCriteria read_csv(std::istream& in);
};

/// Code prefixes (dots ignored), one per line.
std::vector<std::string> load_icd9_prefixes(const std::filesystem::path& path);
std::vector<std::string> parse_icd9_prefixes(std::istream& in);

struct InclusionDecision {
    std::string stay_id;
    bool included = false;
    std::vector<std::string> rationale;
};

InclusionDecision flag_stay(const std::string& stay_id, const StructuredCriteria& criteria,
                            std::span<const std::string> icd9_prefixes,
                            const std::map<std::string, std::vector<bool>>& infected_notes);

std::vector<InclusionDecision> flag_stays(std::span<const std::string> stay_ids, const StructuredCriteria& criteria,
                                          std::span<const std::string> icd9_prefixes,
                                          const std::map<std::string, std::vector<bool>>& infected_notes);

}  // namespace trd
