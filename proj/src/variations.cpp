#include "mwp/variations.hpp"

#include <cctype>

#include "mwp/text.hpp"

namespace mwp {

namespace {

std::string normalize(std::string_view s) {
    std::string out;
    bool space = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            space = !out.empty();
            continue;
        }
        if (space) out += ' ';
        space = false;
        out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

} // namespace

std::string_view category_name(Category c) {
    switch (c) {
        case Category::QuestionSensitivity: return "Question Sensitivity";
        case Category::ReasoningAbility: return "Reasoning Ability";
        case Category::StructuralInvariance: return "Structural Invariance";
    }
    return "";
}

const std::vector<VariationType>& variation_types() {
    // Steps: question sensitivity first, then invert, then add-relevant (with
    // question variations of those at the same step), irrelevant additions,
    // information changes, and reorderings last.
    static const std::vector<VariationType> types = {
        {"Same Object, Different Structure", Category::QuestionSensitivity, {"Same Obj, Diff Struct"}, 1},
        {"Different Object, Same Structure", Category::QuestionSensitivity, {"Diff Obj, Same Struct"}, 1},
        {"Different Object, Different Structure", Category::QuestionSensitivity, {"Diff Obj, Diff Struct"}, 1},
        {"Add relevant information", Category::ReasoningAbility, {"Add Rel Info", "Add relevant info"}, 3},
        {"Change information", Category::ReasoningAbility, {"Change Info", "Change of information"}, 5},
        {"Invert Operation", Category::ReasoningAbility, {"Invert"}, 2},
        {"Add irrelevant information", Category::StructuralInvariance, {"Add Irrel Info", "Add irrelevant info"}, 4},
        {"Change order of objects", Category::StructuralInvariance, {"Change order of Obj"}, 6},
        {"Change order of phrases",
         Category::StructuralInvariance,
         {"Change order of Events or Phrases", "Change order of events"},
         6},
    };
    return types;
}

const VariationType* find_variation(std::string_view label) {
    const std::string key = normalize(label);
    for (const auto& t : variation_types()) {
        if (normalize(t.name) == key) return &t;
        for (auto alias : t.aliases)
            if (normalize(alias) == key) return &t;
    }
    return nullptr;
}

std::optional<Category> find_category(std::string_view label) {
    const std::string key = normalize(label);
    for (auto c : {Category::QuestionSensitivity, Category::ReasoningAbility, Category::StructuralInvariance})
        if (normalize(category_name(c)) == key) return c;
    return std::nullopt;
}

std::vector<std::string> split_chain(std::string_view text) {
    std::vector<std::string> pieces;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto comma = text.find(',', start);
        const auto end = comma == std::string_view::npos ? text.size() : comma;
        pieces.push_back(trim(text.substr(start, end - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    std::vector<std::string> out;
    for (std::size_t i = 0; i < pieces.size(); ++i) {
        if (pieces[i].empty()) continue;
        if (i + 1 < pieces.size() && !find_variation(pieces[i])) {
            const std::string joined = pieces[i] + ", " + pieces[i + 1];
            if (find_variation(joined)) {
                out.push_back(joined);
                ++i;
                continue;
            }
        }
        out.push_back(pieces[i]);
    }
    return out;
}

bool chain_uses(const std::vector<std::string>& chain, std::string_view label) {
    if (const auto category = find_category(label)) {
        for (const auto& entry : chain) {
            const VariationType* v = find_variation(entry);
            if ((v && v->category == *category) || normalize(entry) == normalize(label)) return true;
        }
        return false;
    }
    const VariationType* wanted = find_variation(label);
    for (const auto& entry : chain) {
        if (wanted ? find_variation(entry) == wanted : normalize(entry) == normalize(label)) return true;
    }
    return false;
}

std::string canonical_label(std::string_view label) {
    if (const auto c = find_category(label)) return std::string(category_name(*c));
    if (const auto* v = find_variation(label)) return std::string(v->name);
    return trim(label);
}

} // namespace mwp
