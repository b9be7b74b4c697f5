#pragma once

// INI-style configuration: model, experiment and fit sections. Every error
// names the section and key it came from. The schema is documented in the
// README.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mrp/estimate.hpp"
#include "mrp/mc.hpp"
#include "mrp/model.hpp"

namespace mrp::config {

class Section {
public:
    Section(std::string name, std::map<std::string, std::string> values);

    const std::string& name() const { return name_; }
    bool has(const std::string& key) const { return values_.contains(key); }
    const std::map<std::string, std::string>& values() const { return values_; }

    std::string text(const std::string& key) const;  // required
    std::optional<std::string> text_opt(const std::string& key) const;
    double real(const std::string& key) const;
    double real(const std::string& key, double fallback) const;
    long long integer(const std::string& key) const;
    long long integer(const std::string& key, long long fallback) const;
    bool boolean(const std::string& key, bool fallback) const;
    std::vector<double> reals(const std::string& key) const;
    std::vector<std::string> list(const std::string& key) const;  // top-level comma separated

    // ConfigError naming the first key that was never read.
    void reject_unknown() const;
    // Formats an error about `key` in this section.
    [[noreturn]] void fail(const std::string& key, const std::string& message) const;

private:
    std::string name_;
    std::map<std::string, std::string> values_;
    mutable std::map<std::string, bool> used_;
};

class Document {
public:
    // ConfigError with the line number on syntax errors.
    static Document parse(const std::string& text, const std::string& source);
    static Document load(const std::filesystem::path& path);

    const std::string& source() const { return source_; }
    bool has(const std::string& section) const;
    Section& section(const std::string& name);  // ConfigError when missing
    Section* find(const std::string& name);
    // Sections whose name starts with `prefix` followed by a space; the
    // remainder of the name is the key.
    std::vector<std::pair<std::string, Section*>> prefixed(const std::string& prefix);
    // ConfigError for sections none of the parsers consumed.
    void reject_unknown_sections(const std::vector<std::string>& known_prefixes) const;

private:
    std::string source_;
    std::vector<Section> sections_;
};

// Splits on commas outside parentheses and trims each item.
std::vector<std::string> split_list(const std::string& text);
// "normal(0, 1)", "uniform(0, 1)", "constant(4)", "bernoulli(0.5)", "exponential(2)".
model::ScalarLaw parse_law(const std::string& text);
// "A->B"
std::pair<std::string, std::string> parse_transition_label(const std::string& text);
// "1:1, 2:3" (1-based covariate column : coefficient index); "identity" or empty -> identity.
CovariateMap parse_covariate_map(const std::string& text);
// "rule", "rule*2", "0.1", comma separated.
std::vector<mc::BandwidthChoice> parse_bandwidths(const std::string& text);

// Sections [model], [covariates], [censoring], [transition A->B].
model::ModelSpec parse_model(Document& doc);
// [experiment] and optional [checks] plus the model sections.
mc::ExperimentSpec parse_experiment(Document& doc);

// Resolved model as a config text accepted by parse_model.
std::string format_model(const model::ModelSpec& spec);

struct FitTransition {
    std::string from;
    std::string to;
    std::optional<CovariateMap> covariates;
    std::optional<double> bandwidth;
    std::optional<int> mu;
};

// Optional [fit] section plus [fit A->B] subsections.
struct FitSpec {
    std::optional<estimate::EstimatorKind> estimator;
    std::optional<int> dimension;
    std::optional<int> mu;
    std::optional<double> tau;
    std::optional<double> tau0;
    std::optional<double> bandwidth;
    std::optional<double> bandwidth_scale;
    std::vector<FitTransition> transitions;
};
FitSpec parse_fit(Document& doc);

}  // namespace mrp::config
