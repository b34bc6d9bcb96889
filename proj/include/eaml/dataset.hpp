#pragma once

// Tabular binary-outcome data: schema, CSV ingest, mean imputation and
// stratified splitting/subsampling.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "eaml/error.hpp"

namespace eaml {

enum class FeatureKind { numeric, categorical };

struct FeatureSpec {
    std::string name;
    FeatureKind kind = FeatureKind::numeric;
    std::vector<std::string> categories; // categorical only, in display order
    bool missing_allowed = true;

    static FeatureSpec numeric(std::string name, bool missing_allowed = true) {
        return {std::move(name), FeatureKind::numeric, {}, missing_allowed};
    }
    static FeatureSpec categorical(std::string name, std::vector<std::string> levels,
                                   bool missing_allowed = true) {
        return {std::move(name), FeatureKind::categorical, std::move(levels), missing_allowed};
    }

    bool is_numeric() const noexcept { return kind == FeatureKind::numeric; }

    std::optional<int> category_index(std::string_view label) const {
        for (std::size_t i = 0; i < categories.size(); ++i) {
            if (categories[i] == label) {
                return static_cast<int>(i);
            }
        }
        return std::nullopt;
    }

    bool operator==(const FeatureSpec&) const = default;
};

// Cells hold the numeric value, or the category index for categorical
// features. Missing cells are NaN.
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) noexcept { return std::isnan(v); }

inline void validate_schema(std::span<const FeatureSpec> features) {
    std::set<std::string> seen;
    for (const auto& f : features) {
        if (f.name.empty()) {
            throw DataError("feature with empty name");
        }
        if (!seen.insert(f.name).second) {
            throw DataError("duplicate feature name '" + f.name + "'");
        }
        if (f.kind == FeatureKind::categorical && f.categories.empty()) {
            throw DataError("categorical feature '" + f.name + "' has no categories");
        }
        if (f.kind == FeatureKind::numeric && !f.categories.empty()) {
            throw DataError("numeric feature '" + f.name + "' lists categories");
        }
        std::set<std::string> levels(f.categories.begin(), f.categories.end());
        if (levels.size() != f.categories.size()) {
            throw DataError("categorical feature '" + f.name + "' repeats a category");
        }
    }
}

class Dataset {
public:
    Dataset() = default;

    explicit Dataset(std::vector<FeatureSpec> features) : features_(std::move(features)) {
        validate_schema(features_);
    }

    std::size_t n_rows() const noexcept { return outcome_.size(); }
    std::size_t n_features() const noexcept { return features_.size(); }
    bool empty() const noexcept { return outcome_.empty(); }

    const std::vector<FeatureSpec>& features() const noexcept { return features_; }
    const FeatureSpec& feature(std::size_t j) const { return features_.at(j); }

    std::optional<std::size_t> find_feature(std::string_view name) const {
        for (std::size_t j = 0; j < features_.size(); ++j) {
            if (features_[j].name == name) {
                return j;
            }
        }
        return std::nullopt;
    }

    std::size_t feature_index(std::string_view name) const {
        if (auto j = find_feature(name)) {
            return *j;
        }
        throw DataError("unknown feature '" + std::string(name) + "'");
    }

    /// Appends a case. `id` defaults to the row position and survives
    /// selection so subsamples can be compared by identity.
    void add_row(std::span<const double> values, int outcome,
                 std::optional<std::uint64_t> id = std::nullopt) {
        if (values.size() != features_.size()) {
            throw DataError("row has " + std::to_string(values.size()) + " values, schema has " +
                            std::to_string(features_.size()));
        }
        if (outcome != 0 && outcome != 1) {
            throw DataError("outcome must be 0 or 1, got " + std::to_string(outcome));
        }
        for (std::size_t j = 0; j < values.size(); ++j) {
            check_cell(j, values[j]);
        }
        cells_.insert(cells_.end(), values.begin(), values.end());
        outcome_.push_back(outcome);
        ids_.push_back(id.value_or(static_cast<std::uint64_t>(ids_.size())));
    }

    std::span<const double> row(std::size_t i) const {
        return {cells_.data() + i * features_.size(), features_.size()};
    }
    double at(std::size_t i, std::size_t j) const { return cells_[i * features_.size() + j]; }
    void set(std::size_t i, std::size_t j, double v) {
        check_cell(j, v);
        cells_[i * features_.size() + j] = v;
    }

    int outcome(std::size_t i) const { return outcome_[i]; }
    const std::vector<int>& outcomes() const noexcept { return outcome_; }
    std::uint64_t row_id(std::size_t i) const { return ids_[i]; }
    const std::vector<std::uint64_t>& row_ids() const noexcept { return ids_; }

    std::vector<double> column(std::size_t j) const {
        std::vector<double> col(n_rows());
        for (std::size_t i = 0; i < n_rows(); ++i) {
            col[i] = at(i, j);
        }
        return col;
    }

    std::size_t positives() const {
        return static_cast<std::size_t>(std::count(outcome_.begin(), outcome_.end(), 1));
    }

    double event_rate() const {
        return empty() ? 0.0 : static_cast<double>(positives()) / static_cast<double>(n_rows());
    }

    bool has_missing() const {
        return std::any_of(cells_.begin(), cells_.end(), [](double v) { return is_missing(v); });
    }

    Dataset select(std::span<const std::size_t> rows) const {
        Dataset out(features_);
        out.cells_.reserve(rows.size() * features_.size());
        for (std::size_t i : rows) {
            auto r = row(i);
            out.cells_.insert(out.cells_.end(), r.begin(), r.end());
            out.outcome_.push_back(outcome_[i]);
            out.ids_.push_back(ids_[i]);
        }
        return out;
    }

    bool operator==(const Dataset& other) const {
        if (features_ != other.features_ || outcome_ != other.outcome_ || ids_ != other.ids_ ||
            cells_.size() != other.cells_.size()) {
            return false;
        }
        for (std::size_t k = 0; k < cells_.size(); ++k) {
            const double a = cells_[k];
            const double b = other.cells_[k];
            if (!(a == b || (is_missing(a) && is_missing(b)))) {
                return false;
            }
        }
        return true;
    }

private:
    void check_cell(std::size_t j, double v) const {
        const auto& f = features_[j];
        if (is_missing(v)) {
            if (!f.missing_allowed) {
                throw DataError("missing value in feature '" + f.name + "' which disallows missing");
            }
            return;
        }
        if (!std::isfinite(v)) {
            throw DataError("non-finite value in feature '" + f.name + "'");
        }
        if (f.kind == FeatureKind::categorical) {
            if (v < 0 || v != std::floor(v) || v >= static_cast<double>(f.categories.size())) {
                throw DataError("category index out of range for feature '" + f.name + "'");
            }
        }
    }

    std::vector<FeatureSpec> features_;
    std::vector<double> cells_; // row-major
    std::vector<int> outcome_;
    std::vector<std::uint64_t> ids_;
};

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(std::move(cur));
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

inline std::optional<double> parse_double(std::string_view s) {
    double v = 0.0;
    if (!s.empty() && s.front() == '+') {
        s.remove_prefix(1);
    }
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        return std::nullopt;
    }
    return v;
}

/// Shortest round-trip decimal representation.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') {
            out += "\"\"";
        } else {
            out.push_back(c);
        }
    }
    return out + "\"";
}

} // namespace detail

inline Dataset read_csv(std::istream& in, std::vector<FeatureSpec> schema,
                        const std::string& outcome_column) {
    Dataset data(std::move(schema));
    std::string line;
    if (!std::getline(in, line)) {
        throw DataError("CSV input is empty (no header row)");
    }
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) {
        line.erase(0, 3);
    }
    const auto header = detail::split_csv_line(line);
    const std::size_t p = data.n_features();
    std::vector<std::optional<std::size_t>> column_to_feature(header.size());
    std::optional<std::size_t> outcome_pos;
    std::vector<bool> seen(p, false);
    for (std::size_t c = 0; c < header.size(); ++c) {
        const auto name = detail::trim(header[c]);
        if (name == outcome_column) {
            if (outcome_pos) {
                throw DataError("outcome column '" + outcome_column + "' appears twice");
            }
            outcome_pos = c;
            continue;
        }
        const auto j = data.find_feature(name);
        if (!j) {
            throw DataError("unknown column '" + std::string(name) + "'");
        }
        if (seen[*j]) {
            throw DataError("column '" + std::string(name) + "' appears twice");
        }
        seen[*j] = true;
        column_to_feature[c] = *j;
    }
    if (!outcome_pos) {
        throw DataError("outcome column '" + outcome_column + "' not found in header");
    }
    for (std::size_t j = 0; j < p; ++j) {
        if (!seen[j]) {
            throw DataError("schema column '" + data.feature(j).name + "' missing from header");
        }
    }

    std::vector<double> values(p);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) {
            continue;
        }
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size()) {
            throw DataError("line " + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " cells, found " +
                            std::to_string(cells.size()));
        }
        int outcome = 0;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const auto token = detail::trim(cells[c]);
            if (c == *outcome_pos) {
                if (token == "0") {
                    outcome = 0;
                } else if (token == "1") {
                    outcome = 1;
                } else {
                    throw DataError("line " + std::to_string(line_no) + ": outcome value '" +
                                    std::string(token) + "' is not 0 or 1");
                }
                continue;
            }
            const std::size_t j = *column_to_feature[c];
            const auto& f = data.feature(j);
            if (token.empty()) {
                values[j] = kMissing;
            } else if (f.is_numeric()) {
                const auto v = detail::parse_double(token);
                if (!v || !std::isfinite(*v)) {
                    throw DataError("line " + std::to_string(line_no) + ": non-numeric token '" +
                                    std::string(token) + "' in numeric column '" + f.name + "'");
                }
                values[j] = *v;
            } else {
                const auto k = f.category_index(token);
                if (!k) {
                    throw DataError("line " + std::to_string(line_no) + ": unknown category '" +
                                    std::string(token) + "' in column '" + f.name + "'");
                }
                values[j] = *k;
            }
        }
        try {
            data.add_row(values, outcome);
        } catch (const DataError& e) {
            throw DataError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return data;
}

inline Dataset load_csv(const std::string& path, std::vector<FeatureSpec> schema,
                        const std::string& outcome_column) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open data file '" + path + "'");
    }
    return read_csv(in, std::move(schema), outcome_column);
}

inline void write_csv(std::ostream& out, const Dataset& d, const std::string& outcome_column) {
    for (const auto& f : d.features()) {
        out << detail::csv_escape(f.name) << ',';
    }
    out << detail::csv_escape(outcome_column) << '\n';
    for (std::size_t i = 0; i < d.n_rows(); ++i) {
        for (std::size_t j = 0; j < d.n_features(); ++j) {
            const double v = d.at(i, j);
            if (!is_missing(v)) {
                const auto& f = d.feature(j);
                out << (f.is_numeric() ? detail::format_double(v)
                                       : detail::csv_escape(f.categories[static_cast<std::size_t>(v)]));
            }
            out << ',';
        }
        out << d.outcome(i) << '\n';
    }
}

inline void save_csv(const std::string& path, const Dataset& d, const std::string& outcome_column) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write data file '" + path + "'");
    }
    write_csv(out, d, outcome_column);
}

// ---------------------------------------------------------------------------
// Imputation

struct ColumnImputation {
    std::string feature;
    double missing_fraction = 0.0;
    double fill_value = 0.0; // mean, or category index of the mode
};

struct ImputationReport {
    std::vector<ColumnImputation> columns; // one per feature, schema order
};

struct ImputedDataset {
    Dataset data;
    ImputationReport report;
};

/// Fills missing cells using fill values computed elsewhere (typically on the
/// training data).
inline Dataset apply_imputation(const Dataset& d, const ImputationReport& report) {
    if (report.columns.size() != d.n_features()) {
        throw DataError("imputation report does not match the dataset schema");
    }
    Dataset out = d;
    for (std::size_t j = 0; j < d.n_features(); ++j) {
        if (report.columns[j].feature != d.feature(j).name) {
            throw DataError("imputation report column '" + report.columns[j].feature +
                            "' does not match feature '" + d.feature(j).name + "'");
        }
        for (std::size_t i = 0; i < d.n_rows(); ++i) {
            if (is_missing(out.at(i, j))) {
                out.set(i, j, report.columns[j].fill_value);
            }
        }
    }
    return out;
}

/// Numeric columns: mean of the observed values. Categorical columns: mode,
/// ties resolved by category order.
inline ImputedDataset impute_mean(const Dataset& d) {
    ImputationReport report;
    const std::size_t n = d.n_rows();
    for (std::size_t j = 0; j < d.n_features(); ++j) {
        const auto& f = d.feature(j);
        std::size_t missing = 0;
        double sum = 0.0;
        std::vector<std::size_t> counts(f.categories.size(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const double v = d.at(i, j);
            if (is_missing(v)) {
                ++missing;
            } else if (f.is_numeric()) {
                sum += v;
            } else {
                ++counts[static_cast<std::size_t>(v)];
            }
        }
        if (n > 0 && missing == n) {
            throw DataError("cannot impute column '" + f.name + "': every value is missing");
        }
        ColumnImputation col;
        col.feature = f.name;
        col.missing_fraction = n == 0 ? 0.0 : static_cast<double>(missing) / static_cast<double>(n);
        if (f.is_numeric()) {
            col.fill_value = n == missing ? 0.0 : sum / static_cast<double>(n - missing);
        } else {
            const auto best = std::max_element(counts.begin(), counts.end());
            col.fill_value = static_cast<double>(best - counts.begin());
        }
        report.columns.push_back(col);
    }
    return {apply_imputation(d, report), std::move(report)};
}

// ---------------------------------------------------------------------------
// Splitting and subsampling

namespace detail {

inline std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); }

inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>>
shuffled_classes(std::span<const int> labels, std::uint64_t seed) {
    std::vector<std::size_t> pos;
    std::vector<std::size_t> neg;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        (labels[i] == 1 ? pos : neg).push_back(i);
    }
    std::mt19937_64 rng(seed);
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);
    return {std::move(pos), std::move(neg)};
}

} // namespace detail

/// Stratified random partition. Returned parts keep the source row order.
inline std::pair<Dataset, Dataset> stratified_split(const Dataset& d, double train_fraction,
                                                    std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw UsageError("train fraction must lie in (0, 1)");
    }
    const std::size_t n = d.n_rows();
    const std::size_t n_pos = d.positives();
    if (n_pos == 0 || n_pos == n) {
        throw DataError("stratified split needs both outcome classes");
    }
    const std::size_t n_neg = n - n_pos;
    const std::size_t n_train = detail::round_half_up(train_fraction * static_cast<double>(n));
    std::size_t pos_train = detail::round_half_up(train_fraction * static_cast<double>(n_pos));
    pos_train = std::clamp(pos_train, n_train > n_neg ? n_train - n_neg : std::size_t{0},
                           std::min(n_train, n_pos));
    const std::size_t neg_train = n_train - pos_train;

    auto [pos, neg] = detail::shuffled_classes(d.outcomes(), seed);
    std::vector<bool> in_train(n, false);
    for (std::size_t k = 0; k < pos_train; ++k) {
        in_train[pos[k]] = true;
    }
    for (std::size_t k = 0; k < neg_train; ++k) {
        in_train[neg[k]] = true;
    }
    std::vector<std::size_t> train_rows;
    std::vector<std::size_t> test_rows;
    for (std::size_t i = 0; i < n; ++i) {
        (in_train[i] ? train_rows : test_rows).push_back(i);
    }
    return {d.select(train_rows), d.select(test_rows)};
}

/// Row indices (ascending) of a stratified subsample of `n` cases without
/// replacement.
inline std::vector<std::size_t> stratified_subsample_rows(std::span<const int> labels, std::size_t n,
                                                          std::uint64_t seed) {
    const std::size_t total = labels.size();
    if (n > total) {
        throw UsageError("subsample size " + std::to_string(n) + " exceeds dataset size " +
                         std::to_string(total));
    }
    if (n == 0) {
        return {};
    }
    const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    const std::size_t n_neg = total - n_pos;
    std::size_t pos_take = detail::round_half_up(static_cast<double>(n) * static_cast<double>(n_pos) /
                                                 static_cast<double>(total));
    pos_take = std::clamp(pos_take, n > n_neg ? n - n_neg : std::size_t{0}, std::min(n, n_pos));
    const std::size_t neg_take = n - pos_take;

    auto [pos, neg] = detail::shuffled_classes(labels, seed);
    std::vector<std::size_t> rows(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(pos_take));
    rows.insert(rows.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(neg_take));
    std::sort(rows.begin(), rows.end());
    return rows;
}

inline Dataset subsample_stratified(const Dataset& d, std::size_t n, std::uint64_t seed) {
    return d.select(stratified_subsample_rows(d.outcomes(), n, seed));
}

} // namespace eaml
