#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mwp/expr.hpp"
#include "mwp/text.hpp"

namespace mwp {

/// One math word problem. `numbers` index into body ++ question tokens, and
/// slots in `equation` index into `numbers`.
struct Problem {
    std::string id;
    std::string body_text;
    std::string question_text;
    std::vector<std::string> body;
    std::vector<std::string> question;
    std::vector<NumberMention> numbers;
    Expr equation;
    Rational answer;
    std::optional<int> grade;
    std::optional<std::string> ptype;
    std::vector<std::string> variation_chain; // latest first
    std::optional<std::string> seed_id;

    std::vector<std::string> tokens() const;
    std::vector<Rational> number_values() const;
    std::string text() const;
    /// Equation with every slot replaced by its bound literal.
    Expr literal_equation() const;
};

struct Provenance {
    std::string source_format;
    std::string source_path;
    std::vector<std::string> warnings;
};

struct Corpus {
    std::string name;
    std::vector<Problem> problems;
    Provenance provenance;

    const Problem* find(std::string_view id) const;
    std::size_t size() const { return problems.size(); }
    bool empty() const { return problems.empty(); }
};

class IngestError : public std::runtime_error {
public:
    IngestError(const std::string& what, std::vector<std::string> records = {});
    const std::vector<std::string>& records() const { return records_; }

private:
    std::vector<std::string> records_;
};

/// Per-problem outcome of ingest-time validation.
struct ProblemCheck {
    std::string id;
    bool answer_agrees = true;
    std::size_t literals = 0;
    std::size_t aligned = 0;
    std::vector<std::string> warnings;
};

struct ValidationReport {
    std::vector<ProblemCheck> problems;

    std::size_t answer_mismatches() const;
    /// Problems whose every equation literal aligned to a text number.
    std::size_t fully_aligned() const;
    std::vector<std::string> warnings() const;
};

struct AlignResult {
    Expr equation;
    std::size_t literals = 0;
    std::size_t aligned = 0;
};

/// Replaces equation literals with slots, left to right, each matched to the
/// first unused mention of equal value. Unmatched literals stay literals.
AlignResult align_equation(const Expr& literal_equation, std::span<const NumberMention> numbers);

/// Raw fields of one record before normalization.
struct RawProblem {
    std::string id;
    std::string body;
    std::string question;
    Expr equation; // literal form
    Rational answer;
    std::optional<int> grade;
    std::optional<std::string> ptype;
    std::vector<std::string> variation_chain;
    std::optional<std::string> seed_id;
};

/// Tokenizes, aligns and validates one record.
Problem make_problem(const RawProblem& raw, ProblemCheck* check = nullptr);

/// Answer tolerance used at ingest: |value - answer| <= tol * max(1, |answer|).
inline const Rational& ingest_tolerance() {
    static const Rational tol(1, 10000);
    return tol;
}

/// Invariant check shared by ingest and generation; returns violations.
std::vector<std::string> check_problem(const Problem& p);

enum class SourceFormat { AsdivXml, MawpsJson, SvampJson, NativeJson };

std::optional<SourceFormat> parse_source_format(std::string_view name);
std::string_view to_string(SourceFormat f);
/// Guesses a format from the extension and the first record.
SourceFormat detect_format(const std::filesystem::path& path);

struct IngestOptions {
    /// ASDiv only: keep problems whose formula is a single +-*/ expression
    /// that evaluates to the annotated answer.
    bool arithmetic_only = false;
    std::string name; // defaults to the file stem
};

struct IngestResult {
    Corpus corpus;
    ValidationReport report;
};

IngestResult ingest(const std::filesystem::path& path, SourceFormat format, const IngestOptions& options = {});
IngestResult ingest_string(std::string_view content, SourceFormat format, const IngestOptions& options = {});

/// Native format: one JSON object per line.
void write_native(std::ostream& out, const Corpus& corpus);
void write_native(const std::filesystem::path& path, const Corpus& corpus);
std::string problem_to_native_line(const Problem& p);

/// Restriction of a corpus to the given ids, in corpus order.
Corpus subset(const Corpus& c, const std::vector<std::string>& ids, std::string name);
Corpus concat(const std::vector<const Corpus*>& parts, std::string name);

/// Stable digest of problem content, used to detect mutation.
std::uint64_t fingerprint(const Corpus& c);

} // namespace mwp
