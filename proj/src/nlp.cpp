#include "trd/nlp.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace trd {

using nlohmann::json;

namespace {

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::vector<std::string> words_of(std::string_view phrase) {
    std::vector<std::string> out;
    for (const auto& t : tokenize_note(phrase)) out.push_back(t.text);
    return out;
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    return in;
}

}  // namespace

std::vector<Token> tokenize_note(std::string_view text) {
    std::vector<Token> out;
    int sentence = 0, clause = 0;
    std::size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        if (is_alnum(c)) {
            std::size_t j = i;
            while (j < text.size() && is_alnum(text[j])) ++j;
            Token t{to_lower(text.substr(i, j - i)), i, j, sentence, clause};
            if (t.text == "but" || t.text == "except") t.clause = ++clause;
            out.push_back(std::move(t));
            i = j;
            continue;
        }
        const bool period_break = c == '.' && (i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1])));
        if (period_break || c == ';' || c == '\n') {
            ++sentence;
            ++clause;
        } else if (c == ',') {
            ++clause;
        }
        ++i;
    }
    return out;
}

std::vector<std::string> bag_of_words(std::string_view text) {
    std::vector<std::string> out;
    for (auto& t : tokenize_note(text)) out.push_back(std::move(t.text));
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

Lexicon Lexicon::parse(std::istream& in, std::string source) {
    Lexicon lex;
    lex.source = std::move(source);
    std::string line;
    while (std::getline(in, line)) {
        const auto t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto words = words_of(t);
        if (words.empty()) continue;
        std::string norm = words[0];
        for (std::size_t k = 1; k < words.size(); ++k) norm += " " + words[k];
        lex.terms.insert(norm);
    }
    if (lex.terms.empty()) throw ValidationError("lexicon is empty");
    return lex;
}

Lexicon Lexicon::load(const std::filesystem::path& path) {
    auto in = open_input(path);
    return parse(in, path.filename().string());
}

std::string to_string(TriggerEffect e) {
    switch (e) {
        case TriggerEffect::negated: return "negated";
        case TriggerEffect::prophylactic: return "prophylactic";
        case TriggerEffect::speculated: return "speculated";
    }
    return "?";
}

TriggerRuleSet TriggerRuleSet::parse(std::istream& in) {
    TriggerRuleSet set;
    std::set<std::pair<std::string, TriggerScope>> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::istringstream ss(t);
        std::string effect, scope, window, rest;
        ss >> effect >> scope >> window;
        std::getline(ss, rest);
        TriggerRule r;
        if (effect == "negated") r.effect = TriggerEffect::negated;
        else if (effect == "speculated") r.effect = TriggerEffect::speculated;
        else if (effect == "prophylactic") r.effect = TriggerEffect::prophylactic;
        else throw ParseError("unknown trigger effect '" + effect + "'", lineno);
        if (scope == "pre") r.scope = TriggerScope::pre;
        else if (scope == "post") r.scope = TriggerScope::post;
        else throw ParseError("unknown trigger scope '" + scope + "'", lineno);
        if (window == "clause") r.window = TriggerWindow::clause;
        else if (window == "sentence") r.window = TriggerWindow::sentence;
        else throw ParseError("unknown trigger window '" + window + "'", lineno);
        const auto words = words_of(rest);
        if (words.empty()) throw ParseError("trigger rule without phrase", lineno);
        r.phrase = words[0];
        for (std::size_t k = 1; k < words.size(); ++k) r.phrase += " " + words[k];
        if (!seen.insert({r.phrase, r.scope}).second)
            throw ParseError("duplicate trigger '" + r.phrase + "' for the same scope", lineno);
        set.rules.push_back(std::move(r));
    }
    return set;
}

TriggerRuleSet TriggerRuleSet::load(const std::filesystem::path& path) {
    auto in = open_input(path);
    return parse(in);
}

namespace {

/// Token-index matches of `phrase` words in `tokens`.
std::vector<std::pair<std::size_t, std::size_t>> find_phrase(const std::vector<Token>& tokens,
                                                             const std::vector<std::string>& words) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    if (words.empty() || words.size() > tokens.size()) return out;
    for (std::size_t i = 0; i + words.size() <= tokens.size(); ++i) {
        bool ok = true;
        for (std::size_t k = 0; k < words.size() && ok; ++k) ok = tokens[i + k].text == words[k];
        if (ok) out.push_back({i, i + words.size()});
    }
    return out;
}

}  // namespace

std::vector<TextSpan> match_antibiotics(std::string_view text, const Lexicon& lexicon) {
    const auto tokens = tokenize_note(text);
    std::size_t max_words = 1;
    for (const auto& term : lexicon.terms)
        max_words = std::max<std::size_t>(max_words, std::count(term.begin(), term.end(), ' ') + 1);
    std::vector<TextSpan> out;
    for (std::size_t i = 0; i < tokens.size();) {
        std::size_t matched = 0;
        for (std::size_t len = std::min(max_words, tokens.size() - i); len >= 1 && !matched; --len) {
            std::string cand = tokens[i].text;
            for (std::size_t k = 1; k < len; ++k) cand += " " + tokens[i + k].text;
            if (lexicon.terms.count(cand)) {
                out.push_back({tokens[i].begin, tokens[i + len - 1].end, cand});
                matched = len;
            }
        }
        i += matched ? matched : 1;
    }
    return out;
}

std::string to_string(MentionAssertion a) {
    switch (a) {
        case MentionAssertion::affirmed: return "affirmed";
        case MentionAssertion::negated: return "negated";
        case MentionAssertion::speculated: return "speculated";
        case MentionAssertion::prophylactic: return "prophylactic";
    }
    return "?";
}

std::vector<SpanAssertion> classify_assertion(std::string_view text, std::span<const TextSpan> spans,
                                              const TriggerRuleSet& rules) {
    const auto tokens = tokenize_note(text);
    struct Hit {
        std::size_t first, last;  // token range [first, last)
        const TriggerRule* rule;
    };
    std::vector<Hit> hits;
    for (const auto& r : rules.rules)
        for (auto [a, b] : find_phrase(tokens, words_of(r.phrase))) hits.push_back({a, b, &r});

    std::vector<SpanAssertion> out;
    for (const auto& span : spans) {
        SpanAssertion sa{span, MentionAssertion::affirmed, {}};
        // Token range covered by the span.
        std::size_t first = tokens.size(), last = 0;
        for (std::size_t i = 0; i < tokens.size(); ++i)
            if (tokens[i].begin >= span.begin && tokens[i].end <= span.end) {
                first = std::min(first, i);
                last = std::max(last, i + 1);
            }
        if (first >= last) {
            out.push_back(sa);
            continue;
        }
        std::size_t best_dist = std::numeric_limits<std::size_t>::max();
        const TriggerRule* best = nullptr;
        for (const auto& h : hits) {
            std::size_t dist;
            std::size_t near;  // trigger token closest to the span
            if (h.rule->scope == TriggerScope::pre) {
                if (h.last > first) continue;
                dist = first - h.last;
                near = h.last - 1;
            } else {
                if (h.first < last) continue;
                dist = h.first - last;
                near = h.first;
            }
            const auto& a = tokens[near];
            const auto& b = tokens[h.rule->scope == TriggerScope::pre ? first : last - 1];
            const bool same = h.rule->window == TriggerWindow::clause ? a.clause == b.clause && a.sentence == b.sentence
                                                                      : a.sentence == b.sentence;
            // A pre trigger must also share the window with its own first token (and a post
            // trigger with its last), so phrases never straddle a boundary.
            const auto& far = tokens[h.rule->scope == TriggerScope::pre ? h.first : h.last - 1];
            const bool intact = h.rule->window == TriggerWindow::clause ? far.clause == a.clause
                                                                        : far.sentence == a.sentence;
            if (!same || !intact) continue;
            if (dist < best_dist || (dist == best_dist && best && h.rule->effect < best->effect)) {
                best_dist = dist;
                best = h.rule;
            }
        }
        if (best) {
            sa.trigger = best->phrase;
            switch (best->effect) {
                case TriggerEffect::negated: sa.assertion = MentionAssertion::negated; break;
                case TriggerEffect::speculated: sa.assertion = MentionAssertion::speculated; break;
                case TriggerEffect::prophylactic: sa.assertion = MentionAssertion::prophylactic; break;
            }
        }
        out.push_back(std::move(sa));
    }
    return out;
}

std::string to_string(NoteAssertion a) {
    switch (a) {
        case NoteAssertion::infection: return "infection";
        case NoteAssertion::possible_infection: return "possible_infection";
        case NoteAssertion::no_infection: return "no_infection";
    }
    return "?";
}

NoteAssertion note_assertion_from_string(std::string_view s) {
    if (s == "infection") return NoteAssertion::infection;
    if (s == "possible_infection") return NoteAssertion::possible_infection;
    if (s == "no_infection") return NoteAssertion::no_infection;
    throw ParseError("unknown note label '" + std::string(s) + "'");
}

NoteLabel heuristic_label(std::string_view text, const Lexicon& lexicon, const TriggerRuleSet& rules,
                          std::string note_id) {
    NoteLabel label;
    label.note_id = std::move(note_id);
    const auto spans = match_antibiotics(text, lexicon);
    label.matches = classify_assertion(text, spans, rules);
    bool affirmed = false, speculated = false;
    for (const auto& m : label.matches) {
        std::string code = to_string(m.assertion) + ":" + m.span.term + "@" + std::to_string(m.span.begin);
        if (!m.trigger.empty()) code += " (" + m.trigger + ")";
        label.rationale.push_back(std::move(code));
        affirmed |= m.assertion == MentionAssertion::affirmed;
        speculated |= m.assertion == MentionAssertion::speculated;
    }
    label.assertion = affirmed     ? NoteAssertion::infection
                      : speculated ? NoteAssertion::possible_infection
                                   : NoteAssertion::no_infection;
    if (label.matches.empty()) label.rationale.push_back("no antibiotic mention");
    return label;
}

std::vector<Note> read_notes_csv(std::istream& in) {
    CsvReader reader(in);
    const auto c_id = reader.column("note_id"), c_stay = reader.column("stay_id"),
               c_ts = reader.column("timestamp"), c_text = reader.column("text");
    std::vector<Note> out;
    CsvRow row;
    while (reader.next(row)) {
        if (row.fields.size() != reader.header().size())
            throw ParseError("notes row has " + std::to_string(row.fields.size()) + " fields", row.line);
        Note n;
        n.note_id = row.fields[c_id];
        n.stay_id = row.fields[c_stay];
        try {
            n.timestamp = parse_timestamp(row.fields[c_ts]);
        } catch (const ParseError& e) {
            throw ParseError(e.what(), row.line);
        }
        n.text = row.fields[c_text];
        out.push_back(std::move(n));
    }
    return out;
}

json LinearTextModel::to_json() const {
    json vocab = json::object();
    for (const auto& [tok, idx] : vocabulary) vocab[tok] = weights(static_cast<Eigen::Index>(idx));
    const char* policy = config.possible == PossiblePolicy::exclude    ? "exclude"
                         : config.possible == PossiblePolicy::positive ? "positive"
                                                                       : "negative";
    return {{"format", "trd-text/1"},
            {"bias", bias},
            {"weights", vocab},
            {"config",
             {{"lambda", config.lambda},
              {"epochs", config.epochs},
              {"eta0", config.eta0},
              {"seed", config.seed},
              {"possible", policy}}},
            {"objective_trace", objective_trace}};
}

LinearTextModel LinearTextModel::from_json(const json& j) {
    LinearTextModel m;
    try {
        if (j.at("format").get<std::string>() != "trd-text/1") throw ParseError("unsupported text-model format");
        m.bias = j.at("bias").get<double>();
        const auto& w = j.at("weights");
        m.weights.resize(static_cast<Eigen::Index>(w.size()));
        std::size_t i = 0;
        for (auto it = w.begin(); it != w.end(); ++it, ++i) {
            m.vocabulary[it.key()] = i;
            m.weights(static_cast<Eigen::Index>(i)) = it.value().get<double>();
        }
        const auto& c = j.at("config");
        m.config.lambda = c.at("lambda").get<double>();
        m.config.epochs = c.at("epochs").get<int>();
        m.config.eta0 = c.at("eta0").get<double>();
        m.config.seed = c.at("seed").get<std::uint64_t>();
        const auto p = c.at("possible").get<std::string>();
        m.config.possible = p == "positive"   ? PossiblePolicy::positive
                            : p == "negative" ? PossiblePolicy::negative
                                              : PossiblePolicy::exclude;
        m.objective_trace = j.value("objective_trace", std::vector<double>{});
    } catch (const json::exception& e) {
        throw ParseError(std::string("text model: ") + e.what());
    }
    return m;
}

LinearTextModel train_text_classifier(std::span<const std::string> notes, std::span<const NoteAssertion> labels,
                                      const TextModelConfig& config) {
    if (notes.size() != labels.size()) throw ValidationError("notes and labels differ in length");
    if (!(config.lambda > 0) || config.epochs < 1 || !(config.eta0 > 0))
        throw ValidationError("invalid classifier configuration");

    std::vector<std::vector<std::string>> docs;
    std::vector<double> y;
    for (std::size_t i = 0; i < notes.size(); ++i) {
        double target;
        switch (labels[i]) {
            case NoteAssertion::infection: target = 1; break;
            case NoteAssertion::no_infection: target = -1; break;
            case NoteAssertion::possible_infection:
                if (config.possible == PossiblePolicy::exclude) continue;
                target = config.possible == PossiblePolicy::positive ? 1 : -1;
                break;
        }
        docs.push_back(bag_of_words(notes[i]));
        y.push_back(target);
    }
    const auto n_pos = std::count(y.begin(), y.end(), 1.0);
    if (n_pos == 0 || n_pos == static_cast<long>(y.size()))
        throw ValidationError("text classifier needs both classes among the training labels");

    LinearTextModel model;
    model.config = config;
    for (const auto& d : docs)
        for (const auto& t : d) model.vocabulary.emplace(t, 0);
    std::size_t next = 0;
    for (auto& [tok, idx] : model.vocabulary) idx = next++;
    std::vector<std::vector<Eigen::Index>> x(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i)
        for (const auto& t : docs[i]) x[i].push_back(static_cast<Eigen::Index>(model.vocabulary.at(t)));

    // w = scale * v keeps the L2 shrink O(1) per step.
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(next));
    double scale = 1, bias = 0;
    std::vector<std::size_t> order(docs.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(config.seed);
    double t = 0;
    auto score = [&](std::size_t i) {
        double s = 0;
        for (auto k : x[i]) s += v(k);
        return scale * s + bias;
    };
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (auto i : order) {
            const double eta = config.eta0 / (1 + config.lambda * config.eta0 * t);
            const double s = score(i);
            scale *= 1 - eta * config.lambda;
            if (y[i] * s < 1) {
                for (auto k : x[i]) v(k) += eta * y[i] / scale;
                bias += eta * y[i];
            }
            if (scale < 1e-9) {
                v *= scale;
                scale = 1;
            }
            t += 1;
        }
        double hinge = 0;
        for (std::size_t i = 0; i < docs.size(); ++i) hinge += std::max(0.0, 1 - y[i] * score(i));
        model.objective_trace.push_back(0.5 * config.lambda * scale * scale * v.squaredNorm() +
                                        hinge / static_cast<double>(docs.size()));
    }
    model.weights = scale * v;
    model.bias = bias;
    return model;
}

NotePrediction predict_note(const LinearTextModel& model, std::string_view text) {
    double s = model.bias;
    for (const auto& tok : bag_of_words(text)) {
        const auto it = model.vocabulary.find(tok);
        if (it != model.vocabulary.end()) s += model.weights(static_cast<Eigen::Index>(it->second));
    }
    return {s > 0, s, std::abs(s)};
}

StructuredCriteria StructuredCriteria::read_csv(std::istream& in) {
    CsvReader reader(in);
    const auto c_stay = reader.column("stay_id"), c_crit = reader.column("criterion"),
               c_val = reader.column("value");
    StructuredCriteria out;
    CsvRow row;
    while (reader.next(row)) {
        if (row.fields.size() != reader.header().size())
            throw ParseError("criteria row has " + std::to_string(row.fields.size()) + " fields", row.line);
        const auto crit = to_lower(trim(row.fields[c_crit]));
        const auto& stay = row.fields[c_stay];
        if (crit == "antibiotic" || crit == "culture") out.orders[stay].push_back(crit + ":" + row.fields[c_val]);
        else if (crit == "icd9") out.icd9_codes[stay].push_back(trim(row.fields[c_val]));
        else throw ParseError("unknown criterion '" + crit + "'", row.line);
    }
    return out;
}

namespace {

std::string strip_dots(std::string_view s) {
    std::string out;
    for (char c : s)
        if (c != '.') out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace

std::vector<std::string> parse_icd9_prefixes(std::istream& in) {
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        auto t = trim(line);
        if (const auto hash = t.find('#'); hash != std::string::npos) t = trim(t.substr(0, hash));
        if (!t.empty()) out.push_back(strip_dots(t));
    }
    return out;
}

std::vector<std::string> load_icd9_prefixes(const std::filesystem::path& path) {
    auto in = open_input(path);
    return parse_icd9_prefixes(in);
}

InclusionDecision flag_stay(const std::string& stay_id, const StructuredCriteria& criteria,
                            std::span<const std::string> icd9_prefixes,
                            const std::map<std::string, std::vector<bool>>& infected_notes) {
    InclusionDecision d{stay_id, false, {}};
    if (auto it = criteria.orders.find(stay_id); it != criteria.orders.end() && !it->second.empty())
        d.rationale.push_back("criterion 1: " + it->second.front());
    if (auto it = criteria.icd9_codes.find(stay_id); it != criteria.icd9_codes.end()) {
        for (const auto& code : it->second) {
            const auto c = strip_dots(code);
            const bool hit = std::any_of(icd9_prefixes.begin(), icd9_prefixes.end(),
                                         [&](const std::string& p) { return c.rfind(p, 0) == 0; });
            if (hit) {
                d.rationale.push_back("criterion 2: icd9 " + code);
                break;
            }
        }
    }
    if (auto it = infected_notes.find(stay_id); it != infected_notes.end()) {
        const auto n = std::count(it->second.begin(), it->second.end(), true);
        if (n > 0) d.rationale.push_back("criterion 3: " + std::to_string(n) + " infection note(s)");
    }
    d.included = !d.rationale.empty();
    if (!d.included) d.rationale.push_back("no criterion met");
    return d;
}

std::vector<InclusionDecision> flag_stays(std::span<const std::string> stay_ids, const StructuredCriteria& criteria,
                                          std::span<const std::string> icd9_prefixes,
                                          const std::map<std::string, std::vector<bool>>& infected_notes) {
    std::vector<InclusionDecision> out;
    for (const auto& s : stay_ids) out.push_back(flag_stay(s, criteria, icd9_prefixes, infected_notes));
    return out;
}

}  // namespace trd
