#pragma once

#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "morphcf/dataset.hpp"
#include "morphcf/types.hpp"

namespace morphcf {

/// Inclusive numeric range.
struct NumericRange {
    double lo = 0;
    double hi = 0;
};

struct CategorySet {
    std::set<std::string> values;
};

struct FilterClause {
    std::string variable;
    std::variant<NumericRange, CategorySet> condition;

    static FilterClause range(std::string variable, double lo, double hi);
    static FilterClause categories(std::string variable, std::set<std::string> values);

    /// Throws ValidationError on an unknown variable, a kind mismatch, lo > hi or an empty set.
    void validate(std::span<const VariableDecl> variables) const;
    /// Missing values never match.
    bool matches(const SubjectRecord& record) const;
    std::string describe() const;
};

/// Parses `var=lo:hi` (numeric) or `var=a|b` (categorical); the declared kind decides.
FilterClause parse_clause(const std::string& text, std::span<const VariableDecl> variables);

struct CohortState {
    std::vector<FilterClause> clauses;
    /// layer_counts[0] is the unfiltered count; layer i survives clauses 1..i.
    std::vector<std::size_t> layer_counts;
    std::vector<std::string> subset;  // dataset order
};

CohortState apply_filters(std::span<const SubjectRecord> records, std::span<const FilterClause> clauses,
                          std::span<const VariableDecl> variables);

std::vector<std::string> subset_ids(const CohortState& state);

struct HistogramBin {
    double lo = 0;
    double hi = 0;
    std::size_t count = 0;
};

struct Histogram {
    std::vector<HistogramBin> bins;
    std::size_t missing = 0;
};

/// Equal-width bins over [min, max]; bins are half-open except the last, which is closed.
/// A constant variable yields one [v, v] bin.
Histogram histogram(std::span<const SubjectRecord> records, const std::string& variable, std::size_t bin_count,
                    std::span<const VariableDecl> variables);

/// Value counts for a categorical variable, in lexicographic order; `missing` as for histograms.
struct CategoryCounts {
    std::vector<std::pair<std::string, std::size_t>> counts;
    std::size_t missing = 0;
};

CategoryCounts category_counts(std::span<const SubjectRecord> records, const std::string& variable,
                               std::span<const VariableDecl> variables);

}  // namespace morphcf
