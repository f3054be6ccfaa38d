#include "quorum/answer.hpp"

#include <algorithm>
#include <cctype>

namespace quorum::answer {
namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }

bool is_word_char(char c) {
    return is_digit(c) || c == '_' || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

bool iequals(std::string_view a, std::string_view b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (lower(a[i]) != lower(b[i])) return false;
    return true;
}

// A raw number span [begin, end) in the source text plus its canonical form.
struct NumberToken {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::string canonical;
};

std::string canonicalize_digits(std::string_view sign, std::string_view int_part,
                                std::string_view frac_part) {
    // Strip leading zeros from the integer part, trailing zeros from the
    // fractional part.
    while (int_part.size() > 1 && int_part.front() == '0') int_part.remove_prefix(1);
    while (!frac_part.empty() && frac_part.back() == '0') frac_part.remove_suffix(1);

    std::string out;
    const bool zero = int_part == "0" && frac_part.empty();
    if (sign == "-" && !zero) out += '-';
    out.append(int_part);
    if (!frac_part.empty()) {
        out += '.';
        out.append(frac_part);
    }
    return out;
}

// Try to read one number starting exactly at `pos`. Boundary checks against
// the surrounding text are the caller's job for the left side; the right side
// is enforced here. Consumes an optional sign, a digit run with optional
// exact-3-digit comma groups, and an optional "." + digits fraction.
std::optional<NumberToken> read_number(std::string_view text, std::size_t pos) {
    std::size_t i = pos;
    std::string_view sign;
    if (i < text.size() && (text[i] == '-' || text[i] == '+')) {
        sign = text.substr(i, 1);
        ++i;
    }
    if (i >= text.size() || !is_digit(text[i])) return std::nullopt;

    std::string int_digits;
    while (i < text.size() && is_digit(text[i])) int_digits += text[i++];
    // A comma is a thousands separator only when followed by exactly three
    // digits; otherwise it ends the number.
    while (i + 3 < text.size() && text[i] == ',' && is_digit(text[i + 1]) &&
           is_digit(text[i + 2]) && is_digit(text[i + 3]) &&
           (i + 4 >= text.size() || !is_digit(text[i + 4]))) {
        int_digits += text[i + 1];
        int_digits += text[i + 2];
        int_digits += text[i + 3];
        i += 4;
    }

    std::string frac_digits;
    if (i + 1 < text.size() && text[i] == '.' && is_digit(text[i + 1])) {
        ++i;
        while (i < text.size() && is_digit(text[i])) frac_digits += text[i++];
    }

    // Right boundary: a trailing identifier character ("3kg", "12th") makes
    // this a non-standalone number.
    if (i < text.size() && is_word_char(text[i])) return std::nullopt;

    return NumberToken{pos, i, canonicalize_digits(sign, int_digits, frac_digits)};
}

// All standalone numbers in the text, left to right.
std::vector<NumberToken> scan_numbers(std::string_view text) {
    std::vector<NumberToken> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        const bool starts = is_digit(c) ||
                            ((c == '-' || c == '+') && i + 1 < text.size() &&
                             is_digit(text[i + 1]));
        if (starts) {
            const bool left_ok =
                i == 0 || (!is_word_char(text[i - 1]) && text[i - 1] != '.');
            if (left_ok) {
                if (auto tok = read_number(text, i)) {
                    out.push_back(*tok);
                    i = tok->end;
                    continue;
                }
            }
            // Skip the whole digit run so "3kg" does not re-trigger at 'g'-1.
            ++i;
            while (i < text.size() && is_digit(text[i])) ++i;
            continue;
        }
        ++i;
    }
    return out;
}

// Occurrences of the standalone word "answer" (case-insensitive), each
// yielding the offset just past any "is" / ":" / "=" and decorative filler
// that may precede the value.
std::vector<std::size_t> answer_pattern_offsets(std::string_view text) {
    static constexpr std::string_view kWord = "answer";
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i + kWord.size() <= text.size(); ++i) {
        if (!iequals(text.substr(i, kWord.size()), kWord)) continue;
        const bool left_ok = i == 0 || !is_word_char(text[i - 1]);
        std::size_t j = i + kWord.size();
        const bool right_ok = j >= text.size() || !is_word_char(text[j]);
        if (!left_ok || !right_ok) continue;

        auto skip_space = [&] {
            while (j < text.size() && (text[j] == ' ' || text[j] == '\t')) ++j;
        };
        skip_space();
        if (j + 2 <= text.size() && iequals(text.substr(j, 2), "is") &&
            (j + 2 == text.size() || !is_word_char(text[j + 2]))) {
            j += 2;
            skip_space();
        }
        if (j < text.size() && (text[j] == ':' || text[j] == '=')) {
            ++j;
            skip_space();
        }
        // Decorative filler often wraps the value: "**15**", "$15", "(B)".
        std::size_t filler = 0;
        while (j < text.size() && filler < 8 &&
               (text[j] == '*' || text[j] == '$' || text[j] == '"' ||
                text[j] == '\'' || text[j] == '`' || text[j] == ' ')) {
            ++j;
            ++filler;
        }
        out.push_back(j);
    }
    return out;
}

bool is_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

// True when position i begins a sentence: text start, or the previous
// non-space character ends a sentence.
bool sentence_initial(std::string_view text, std::size_t i) {
    while (i > 0 && text[i - 1] == ' ') --i;
    if (i == 0) return true;
    const char p = text[i - 1];
    return p == '.' || p == '!' || p == '?' || p == '\n';
}

// Match a declared label at `pos`, optionally parenthesized. Parenthesized
// and pattern-context matches are case-insensitive. Returns the declared
// label spelling.
std::optional<std::string> match_label_at(std::string_view text, std::size_t pos,
                                          const TaskKind& task,
                                          bool case_sensitive) {
    const bool paren = pos < text.size() && text[pos] == '(';
    const std::size_t start = paren ? pos + 1 : pos;
    for (const Choice& c : task.choices) {
        const std::string_view label = c.label;
        if (start + label.size() > text.size()) continue;
        const std::string_view got = text.substr(start, label.size());
        const bool eq = paren || !case_sensitive ? iequals(got, label) : got == label;
        if (!eq) continue;
        std::size_t end = start + label.size();
        if (paren) {
            if (end >= text.size() || text[end] != ')') continue;
        } else {
            if (end < text.size() && is_word_char(text[end])) continue;
        }
        return c.label;
    }
    return std::nullopt;
}

}  // namespace

TaskKind TaskKind::numeric() { return TaskKind{Kind::numeric, {}}; }

TaskKind TaskKind::multiple_choice(std::vector<Choice> choices) {
    if (choices.size() < 2) throw Error("multiple_choice task requires >= 2 choices");
    for (std::size_t i = 0; i < choices.size(); ++i) {
        if (choices[i].label.empty()) throw Error("empty choice label");
        for (std::size_t j = i + 1; j < choices.size(); ++j)
            if (iequals(choices[i].label, choices[j].label))
                throw Error("duplicate choice label: " + choices[i].label);
    }
    return TaskKind{Kind::multiple_choice, std::move(choices)};
}

std::optional<std::string> canonicalize_numeric(std::string_view raw) {
    auto tok = read_number(raw, 0);
    if (!tok || tok->end != raw.size()) return std::nullopt;
    return tok->canonical;
}

CanonicalAnswer CanonicalAnswer::numeric(std::string_view raw) {
    auto canon = canonicalize_numeric(raw);
    if (!canon) throw Error("not a canonical decimal: '" + std::string(raw) + "'");
    return CanonicalAnswer{*canon, Kind::numeric};
}

CanonicalAnswer CanonicalAnswer::choice(std::string_view label, const TaskKind& task) {
    if (task.kind != Kind::multiple_choice)
        throw Error("choice answer requires a multiple_choice task");
    for (const Choice& c : task.choices)
        if (iequals(c.label, label)) return CanonicalAnswer{c.label, Kind::multiple_choice};
    throw Error("unknown choice label: '" + std::string(label) + "'");
}

std::optional<CanonicalAnswer> extract_numeric(std::string_view text) {
    // Rule 1: first number after the final "####" marker.
    const std::size_t marker = text.rfind("####");
    if (marker != std::string_view::npos) {
        const auto after = scan_numbers(text.substr(marker + 4));
        if (!after.empty())
            return CanonicalAnswer{after.front().canonical, Kind::numeric};
    }

    // Rule 2: last "answer is X" pattern followed by a number.
    const auto offsets = answer_pattern_offsets(text);
    for (auto it = offsets.rbegin(); it != offsets.rend(); ++it) {
        if (auto tok = read_number(text, *it))
            return CanonicalAnswer{tok->canonical, Kind::numeric};
    }

    // Rule 3: last standalone number anywhere.
    const auto all = scan_numbers(text);
    if (!all.empty()) return CanonicalAnswer{all.back().canonical, Kind::numeric};
    return std::nullopt;
}

std::optional<CanonicalAnswer> extract_choice(std::string_view text,
                                              const TaskKind& task) {
    if (task.kind != Kind::multiple_choice)
        return std::nullopt;

    // Rule 1: last answer-pattern position that names a declared label.
    const auto offsets = answer_pattern_offsets(text);
    for (auto it = offsets.rbegin(); it != offsets.rend(); ++it) {
        if (auto label = match_label_at(text, *it, task, /*case_sensitive=*/false))
            return CanonicalAnswer{*label, Kind::multiple_choice};
    }

    // Rule 2: last standalone "(X)" or isolated label token. Bare labels that
    // double as English words are skipped where prose is the likelier
    // reading: "A" at a sentence start followed by another word, "I" anywhere
    // followed by another word. A label glued to a preceding dot ("U.S.A.")
    // is an abbreviation, not an answer.
    std::optional<std::string> last;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const bool left_ok = i == 0 || !is_word_char(text[i - 1]);
        if (!left_ok) continue;
        if (text[i] == '(') {
            if (auto label = match_label_at(text, i, task, /*case_sensitive=*/false))
                last = *label;
        } else if (is_word_char(text[i])) {
            auto label = match_label_at(text, i, task, /*case_sensitive=*/true);
            if (!label) continue;
            if (i > 0 && text[i - 1] == '.') continue;
            const std::size_t end = i + label->size();
            const bool word_follows = end < text.size() && text[end] == ' ' &&
                                      end + 1 < text.size() && is_alpha(text[end + 1]);
            if (word_follows &&
                ((*label == "A" && sentence_initial(text, i)) || *label == "I"))
                continue;
            last = *label;
        }
    }
    if (last) return CanonicalAnswer{*last, Kind::multiple_choice};

    // Rule 3: last occurrence of a choice's display text; at equal positions
    // the longer text wins.
    std::optional<std::string> best;
    std::size_t best_pos = 0, best_len = 0;
    for (const Choice& c : task.choices) {
        if (c.text.empty()) continue;
        for (std::size_t i = 0; i + c.text.size() <= text.size(); ++i) {
            if (!iequals(text.substr(i, c.text.size()), c.text)) continue;
            const bool lb = i == 0 || !is_word_char(text[i - 1]);
            const std::size_t end = i + c.text.size();
            const bool rb = end >= text.size() || !is_word_char(text[end]);
            if (!lb || !rb) continue;
            if (!best || i > best_pos || (i == best_pos && c.text.size() > best_len)) {
                best = c.label;
                best_pos = i;
                best_len = c.text.size();
            }
        }
    }
    if (best) return CanonicalAnswer{*best, Kind::multiple_choice};
    return std::nullopt;
}

std::optional<CanonicalAnswer> extract(std::string_view text, const TaskKind& task) {
    return task.kind == Kind::numeric ? extract_numeric(text)
                                      : extract_choice(text, task);
}

bool answers_equal(const CanonicalAnswer& a, const CanonicalAnswer& b) {
    if (a.kind != b.kind) throw Error("answer kind mismatch");
    if (a.kind == Kind::numeric) {
        const auto ca = canonicalize_numeric(a.value);
        const auto cb = canonicalize_numeric(b.value);
        if (ca && cb) return *ca == *cb;
        return a.value == b.value;
    }
    return iequals(a.value, b.value);
}

}  // namespace quorum::answer
