#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mwp {

enum class Category { QuestionSensitivity, ReasoningAbility, StructuralInvariance };

std::string_view category_name(Category c);

struct VariationType {
    std::string_view name;
    Category category;
    std::vector<std::string_view> aliases;
    /// Position in the guided authoring order; chains must be non-decreasing
    /// from earliest to latest application.
    double step;
};

/// The nine variation types, grouped three per category.
const std::vector<VariationType>& variation_types();

/// Case- and whitespace-insensitive lookup by name or alias.
const VariationType* find_variation(std::string_view label);
std::optional<Category> find_category(std::string_view label);

/// Splits a comma-separated chain. Labels that themselves contain a comma
/// ("Same Object, Different Structure") are kept whole.
std::vector<std::string> split_chain(std::string_view text);

/// True when the chain was produced using `label`, which may name a
/// variation or a whole category. Unknown labels match verbatim entries.
bool chain_uses(const std::vector<std::string>& chain, std::string_view label);

/// Canonical display name for a label, or the label itself if unknown.
std::string canonical_label(std::string_view label);

} // namespace mwp
