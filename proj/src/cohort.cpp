#include "morphcf/cohort.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>

#include "morphcf/error.hpp"

namespace morphcf {

namespace {

const VariableDecl& find_decl(std::span<const VariableDecl> variables, const std::string& name) {
    for (const auto& v : variables) {
        if (v.name == name) return v;
    }
    throw ValidationError("unknown variable " + name);
}

double parse_bound(const std::string& text, const std::string& clause) {
    double v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
        throw ValidationError("bad numeric bound '" + text + "' in filter " + clause);
    }
    return v;
}

}  // namespace

FilterClause FilterClause::range(std::string variable, double lo, double hi) {
    return {std::move(variable), NumericRange{lo, hi}};
}

FilterClause FilterClause::categories(std::string variable, std::set<std::string> values) {
    return {std::move(variable), CategorySet{std::move(values)}};
}

void FilterClause::validate(std::span<const VariableDecl> variables) const {
    const auto& decl = find_decl(variables, variable);
    if (const auto* r = std::get_if<NumericRange>(&condition)) {
        if (decl.kind != VariableKind::numeric) throw ValidationError("range filter on categorical variable " + variable);
        if (!(r->lo <= r->hi)) throw ValidationError("filter on " + variable + " has lo > hi");
    } else {
        if (decl.kind != VariableKind::categorical) throw ValidationError("category filter on numeric variable " + variable);
        if (std::get<CategorySet>(condition).values.empty()) throw ValidationError("filter on " + variable + " has no categories");
    }
}

bool FilterClause::matches(const SubjectRecord& record) const {
    auto it = record.demographics.find(variable);
    if (it == record.demographics.end()) return false;
    if (const auto* r = std::get_if<NumericRange>(&condition)) {
        const auto* v = std::get_if<double>(&it->second);
        return v && *v >= r->lo && *v <= r->hi;
    }
    const auto* v = std::get_if<std::string>(&it->second);
    return v && std::get<CategorySet>(condition).values.count(*v) != 0;
}

std::string FilterClause::describe() const {
    if (const auto* r = std::get_if<NumericRange>(&condition)) {
        return variable + "=" + format_number(r->lo) + ":" + format_number(r->hi);
    }
    std::string out = variable + "=";
    bool first = true;
    for (const auto& v : std::get<CategorySet>(condition).values) {
        if (!first) out += '|';
        out += v;
        first = false;
    }
    return out;
}

FilterClause parse_clause(const std::string& text, std::span<const VariableDecl> variables) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError("filter must look like var=lo:hi or var=a|b: " + text);
    const auto name = text.substr(0, eq);
    const auto value = text.substr(eq + 1);
    const auto& decl = find_decl(variables, name);
    FilterClause clause;
    if (decl.kind == VariableKind::numeric) {
        const auto colon = value.find(':');
        if (colon == std::string::npos) throw ValidationError("numeric filter needs lo:hi: " + text);
        clause = FilterClause::range(name, parse_bound(value.substr(0, colon), text), parse_bound(value.substr(colon + 1), text));
    } else {
        std::set<std::string> values;
        std::size_t start = 0;
        while (start <= value.size()) {
            auto end = value.find('|', start);
            if (end == std::string::npos) end = value.size();
            if (end > start) values.insert(value.substr(start, end - start));
            start = end + 1;
        }
        clause = FilterClause::categories(name, std::move(values));
    }
    clause.validate(variables);
    return clause;
}

CohortState apply_filters(std::span<const SubjectRecord> records, std::span<const FilterClause> clauses,
                          std::span<const VariableDecl> variables) {
    for (const auto& c : clauses) c.validate(variables);
    CohortState state;
    state.clauses.assign(clauses.begin(), clauses.end());
    std::vector<const SubjectRecord*> alive;
    for (const auto& r : records) alive.push_back(&r);
    state.layer_counts.push_back(alive.size());
    for (const auto& c : clauses) {
        std::erase_if(alive, [&](const SubjectRecord* r) { return !c.matches(*r); });
        state.layer_counts.push_back(alive.size());
    }
    for (const auto* r : alive) state.subset.push_back(r->id);
    return state;
}

std::vector<std::string> subset_ids(const CohortState& state) { return state.subset; }

Histogram histogram(std::span<const SubjectRecord> records, const std::string& variable, std::size_t bin_count,
                    std::span<const VariableDecl> variables) {
    const auto& decl = find_decl(variables, variable);
    if (decl.kind != VariableKind::numeric) {
        throw ValidationError("histogram of categorical variable " + variable + "; use category counts");
    }
    if (bin_count < 1) throw ValidationError("histogram needs at least one bin");
    Histogram h;
    std::vector<double> values;
    for (const auto& r : records) {
        auto it = r.demographics.find(variable);
        const double* v = it == r.demographics.end() ? nullptr : std::get_if<double>(&it->second);
        if (v) values.push_back(*v);
        else ++h.missing;
    }
    if (values.empty()) return h;
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    const double lo = *mn, hi = *mx;
    if (lo == hi) {
        h.bins.push_back({lo, hi, values.size()});
        return h;
    }
    const double width = (hi - lo) / static_cast<double>(bin_count);
    for (std::size_t b = 0; b < bin_count; ++b) {
        h.bins.push_back({lo + width * static_cast<double>(b), b + 1 == bin_count ? hi : lo + width * static_cast<double>(b + 1), 0});
    }
    for (double v : values) {
        // Bin edges are recomputed exactly as stored so membership agrees with the reported bounds.
        auto b = static_cast<std::size_t>(std::floor((v - lo) / width));
        b = std::min(b, bin_count - 1);
        while (b > 0 && v < h.bins[b].lo) --b;
        while (b + 1 < bin_count && v >= h.bins[b + 1].lo) ++b;
        ++h.bins[b].count;
    }
    return h;
}

CategoryCounts category_counts(std::span<const SubjectRecord> records, const std::string& variable,
                               std::span<const VariableDecl> variables) {
    const auto& decl = find_decl(variables, variable);
    if (decl.kind != VariableKind::categorical) throw ValidationError("category counts of numeric variable " + variable);
    std::map<std::string, std::size_t> counts;
    CategoryCounts out;
    for (const auto& r : records) {
        auto it = r.demographics.find(variable);
        const std::string* v = it == r.demographics.end() ? nullptr : std::get_if<std::string>(&it->second);
        if (v) ++counts[*v];
        else ++out.missing;
    }
    out.counts.assign(counts.begin(), counts.end());
    return out;
}

}  // namespace morphcf
