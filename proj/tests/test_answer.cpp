#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <optional>
#include <random>
#include <string>

#include "json.hpp"
#include "quorum/answer.hpp"

using namespace quorum;
using answer::CanonicalAnswer;
using answer::Kind;
using answer::TaskKind;

namespace {

TaskKind abcd() {
    return TaskKind::multiple_choice({{"A", "alpha"}, {"B", "beta"},
                                      {"C", "gamma"}, {"D", "delta"}});
}

std::optional<std::string> num(std::string_view text) {
    auto r = answer::extract_numeric(text);
    if (!r) return std::nullopt;
    return r->value;
}

std::optional<std::string> cho(std::string_view text, const TaskKind& t) {
    auto r = answer::extract_choice(text, t);
    if (!r) return std::nullopt;
    return r->value;
}

}  // namespace

TEST_CASE("numeric extraction precedence") {
    CHECK(num("... 18 - 3 = 15. #### 15") == "15");
    CHECK(num("The answer is 1,234.50") == "1234.5");
    CHECK(num("No numbers here.") == std::nullopt);
    // Marker beats a later "answer is" pattern and any trailing number.
    CHECK(num("#### 7\nThe answer is 9, or maybe 11") == "7");
    CHECK(num("The answer is 9. #### 7") == "7");
    // Pattern beats the plain last number.
    CHECK(num("The answer is 12, given the 99 items") == "12");
    // Fallback: last standalone number.
    CHECK(num("We have 3 cats and 4 dogs") == "4");
    // Marker with no trailing number falls through.
    CHECK(num("#### none, but earlier we said answer is 5") == "5");
}

TEST_CASE("numeric normalization") {
    CHECK(num("#### 007") == "7");
    CHECK(num("#### +25") == "25");
    CHECK(num("#### -4") == "-4");
    CHECK(num("#### 35.0") == "35");
    CHECK(num("#### 1,234.50") == "1234.5");
    CHECK(num("#### 0.25") == "0.25");
    CHECK(num("#### -0.0") == "0");
    CHECK(num("#### 1,000,000") == "1000000");
}

TEST_CASE("numeric word boundaries") {
    CHECK(num("weighs 3kg total") == std::nullopt);
    CHECK(num("variable x3 is set") == std::nullopt);
    CHECK(num("the 12th of June") == std::nullopt);
    CHECK(num("3kg of flour, 5 eggs") == "5");
    // A comma not followed by a 3-digit group ends the number.
    CHECK(num("#### 1,23") == "1");
    CHECK(num("In 2020, things changed") == "2020");
}

TEST_CASE("choice extraction precedence") {
    const auto t = abcd();
    CHECK(cho("I choose (B) because it fits.", t) == "B");
    CHECK(cho("Working it through, so the answer is C.", t) == "C");
    CHECK(cho("Answer thoughtfully before responding.", t) == std::nullopt);
    // Explicit answer pattern beats later standalone labels.
    CHECK(cho("The answer is (B), not (C) as some would argue.", t) == "B");
    // Case-insensitive labels in pattern and parenthesized positions.
    CHECK(cho("answer: b", t) == "B");
    CHECK(cho("It must be (d).", t) == "D");
    // Isolated bare labels are case-sensitive; prose articles do not match.
    CHECK(cho("A dog barked at a squirrel.", t) == std::nullopt);
    CHECK(cho("After elimination, B remains.", t) == "B");
    // Display-text fallback.
    CHECK(cho("Clearly it must be gamma.", t) == "C");
    // Undeclared label yields abstention.
    CHECK(cho("The answer is E.", t) == std::nullopt);
    // extract() dispatches on task kind.
    CHECK(answer::extract("#### 5", TaskKind::numeric())->value == "5");
    CHECK(answer::extract("Answer: D", t)->value == "D");
}

TEST_CASE("idempotence on canonical strings") {
    for (const char* v : {"15", "-4", "0.25", "1234.5", "0", "1000000"}) {
        auto r = num(v);
        REQUIRE(r.has_value());
        CHECK(*r == v);
    }
    const auto t = abcd();
    for (const char* v : {"A", "B", "C", "D"}) {
        auto r = cho(v, t);
        REQUIRE(r.has_value());
        CHECK(*r == v);
    }
}

TEST_CASE("normalization recovers decorated canonical values") {
    // Inverse oracle: start from a known canonical decimal, decorate it with
    // commas / trailing zeros / a plus sign, and require extraction to give
    // back the original.
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<int> int_digits(1, 7), frac_digits(0, 4);
    std::uniform_int_distribution<int> digit(0, 9), pad(0, 3);
    std::bernoulli_distribution neg(0.3), plus(0.3);
    for (int trial = 0; trial < 500; ++trial) {
        std::string ip;
        const int nd = int_digits(rng);
        for (int i = 0; i < nd; ++i) {
            int d = digit(rng);
            if (i == 0 && nd > 1 && d == 0) d = 1;  // no leading zero
            ip += static_cast<char>('0' + d);
        }
        std::string fp;
        const int nf = frac_digits(rng);
        for (int i = 0; i < nf; ++i) fp += static_cast<char>('0' + digit(rng));
        while (!fp.empty() && fp.back() == '0') fp.pop_back();

        std::string canonical = ip;
        const bool negative = neg(rng) && !(ip == "0" && fp.empty());
        if (negative) canonical.insert(0, "-");
        if (!fp.empty()) canonical += "." + fp;

        // Decorate: thousands commas, zero padding, optional '+'.
        std::string decorated;
        for (std::size_t i = 0; i < ip.size(); ++i) {
            if (i > 0 && (ip.size() - i) % 3 == 0) decorated += ',';
            decorated += ip[i];
        }
        std::string frac_pad = fp;
        for (int i = 0, n = pad(rng); i < n; ++i) frac_pad += '0';
        if (!frac_pad.empty()) decorated += "." + frac_pad;
        if (negative)
            decorated.insert(0, "-");
        else if (plus(rng))
            decorated.insert(0, "+");

        const std::string text = "The answer is " + decorated;
        auto got = num(text);
        REQUIRE_MESSAGE(got.has_value(), text);
        CHECK_MESSAGE(*got == canonical, text, " -> ", *got, " want ", canonical);
    }
}

TEST_CASE("totality on arbitrary bytes") {
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<int> len(0, 200), byte(0, 255);
    const auto t = abcd();
    for (int trial = 0; trial < 300; ++trial) {
        std::string s;
        const int n = len(rng);
        for (int i = 0; i < n; ++i) s += static_cast<char>(byte(rng));
        CHECK_NOTHROW(answer::extract_numeric(s));
        CHECK_NOTHROW(answer::extract_choice(s, t));
    }
}

TEST_CASE("answers_equal") {
    auto n15 = CanonicalAnswer::numeric("15");
    auto n15b = CanonicalAnswer::numeric("15.0");
    CHECK(n15b.value == "15");
    CHECK(answer::answers_equal(n15, n15b));
    CHECK(!answer::answers_equal(n15, CanonicalAnswer::numeric("15.1")));

    // Fractions are not evaluated: "1/2" is not a decimal at all.
    CHECK_THROWS_AS(CanonicalAnswer::numeric("1/2"), Error);
    CHECK(!answer::answers_equal(CanonicalAnswer::numeric("0.5"),
                                 CanonicalAnswer{"1/2", Kind::numeric}));

    const auto t = abcd();
    CHECK(answer::answers_equal(CanonicalAnswer::choice("B", t),
                                CanonicalAnswer::choice("b", t)));
    CHECK(!answer::answers_equal(CanonicalAnswer::choice("B", t),
                                 CanonicalAnswer::choice("C", t)));
    CHECK_THROWS_WITH_AS(
        answer::answers_equal(n15, CanonicalAnswer::choice("B", t)),
        "answer kind mismatch", Error);
}

TEST_CASE("constructors validate") {
    CHECK_THROWS_AS(CanonicalAnswer::numeric("abc"), Error);
    CHECK_THROWS_AS(CanonicalAnswer::numeric(""), Error);
    CHECK_THROWS_AS(CanonicalAnswer::numeric("1e5"), Error);
    CHECK(CanonicalAnswer::numeric("+07.10").value == "7.1");

    CHECK_THROWS_AS(CanonicalAnswer::choice("E", abcd()), Error);
    CHECK_THROWS_AS(TaskKind::multiple_choice({{"A", "x"}}), Error);
    CHECK_THROWS_AS(TaskKind::multiple_choice({{"A", "x"}, {"a", "y"}}), Error);
    CHECK_THROWS_AS(CanonicalAnswer::choice("A", TaskKind::numeric()), Error);
}

TEST_CASE("fixture corpus: 100% extraction accuracy") {
    std::ifstream in(std::string(QUORUM_DATA_DIR) + "/extraction_corpus.jsonl");
    REQUIRE(in.is_open());

    int total = 0, correct = 0, numeric_n = 0, mc_n = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        const std::string text = j.at("text");
        const std::string kind = j.at("task_kind");
        std::optional<std::string> expected;
        if (!j.at("expected").is_null()) expected = j.at("expected").get<std::string>();

        std::optional<std::string> got;
        if (kind == "numeric") {
            ++numeric_n;
            got = num(text);
        } else {
            ++mc_n;
            std::vector<answer::Choice> choices;
            for (const auto& c : j.at("choices"))
                choices.push_back({c.at("label"), c.at("text")});
            got = cho(text, TaskKind::multiple_choice(std::move(choices)));
        }
        ++total;
        const bool ok = got == expected;
        if (ok) ++correct;
        CHECK_MESSAGE(ok, "line ", total, ": '", text, "' -> ",
                      got.value_or("<none>"), " want ", expected.value_or("<none>"));
    }
    CHECK(total == 60);
    CHECK(numeric_n == 20);
    CHECK(mc_n == 40);
    CHECK(correct == total);
}
