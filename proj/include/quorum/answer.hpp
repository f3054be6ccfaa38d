// Answer extraction: map free-form model text to canonical answers for
// numeric (grade-school math) and multiple-choice tasks.
//
// Extraction is a pure function of (text, task). It never throws on arbitrary
// input; absence of an answer is reported as std::nullopt and treated as an
// abstention by the voting layer. Parsing is hand-rolled (no std::regex) so a
// full dataset sweep stays cheap.
#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "quorum/errors.hpp"

namespace quorum::answer {

enum class Kind { numeric, multiple_choice };

struct Choice {
    std::string label;  // canonical label as declared, e.g. "A"
    std::string text;   // display text, may be empty
};

// Task descriptor. multiple_choice requires >= 2 choices with unique labels
// (compared case-insensitively).
struct TaskKind {
    Kind kind = Kind::numeric;
    std::vector<Choice> choices;

    static TaskKind numeric();
    static TaskKind multiple_choice(std::vector<Choice> choices);
};

// A normalized answer value.
//   numeric         canonical decimal: optional '-', digits, optional
//                   fractional part; no commas, no leading zeros (except
//                   "0.x"), no trailing fractional zeros, no "-0".
//   multiple_choice a single declared label.
struct CanonicalAnswer {
    std::string value;
    Kind kind = Kind::numeric;

    // Validating constructors. Throw Error on grammar violation / unknown
    // label. numeric() canonicalizes its input ("15.0" -> "15").
    static CanonicalAnswer numeric(std::string_view raw);
    static CanonicalAnswer choice(std::string_view label, const TaskKind& task);
};

// Canonicalize a decimal string ("+1,234.50" -> "1234.5"). Returns nullopt if
// the input is not a plain decimal.
std::optional<std::string> canonicalize_numeric(std::string_view raw);

// Numeric extraction precedence:
//   1. first number after the final "####" marker (falls through when the
//      marker is not followed by any number);
//   2. the last "answer is X" / "answer: X" style pattern (case-insensitive)
//      that is followed by a number;
//   3. the last standalone number in the text.
// Standalone means delimited by non-identifier characters on both sides, so
// "3kg" and "x3" contribute nothing. Thousands commas are consumed only for
// exact 3-digit groups. Fractions, units and scientific notation are not
// evaluated.
std::optional<CanonicalAnswer> extract_numeric(std::string_view text);

// Choice extraction precedence (task.kind must be multiple_choice):
//   1. the last "answer is (X)" / "answer: X" pattern whose X is a declared
//      label (label matched case-insensitively);
//   2. the last standalone parenthesized label "(B)" (case-insensitive) or
//      isolated label token, the latter matched case-sensitively so prose
//      articles ("a", sentence-initial "A dog") are not mistaken for labels;
//   3. the last occurrence of a choice's display text (case-insensitive,
//      word-bounded).
std::optional<CanonicalAnswer> extract_choice(std::string_view text,
                                              const TaskKind& task);

// Dispatch on task.kind.
std::optional<CanonicalAnswer> extract(std::string_view text, const TaskKind& task);

// Equality over canonical forms. Numeric values compare as exact decimals
// after canonicalization; labels compare case-folded. Throws Error when the
// kinds differ.
bool answers_equal(const CanonicalAnswer& a, const CanonicalAnswer& b);

}  // namespace quorum::answer
