#include "objcustom/scenarios.hpp"

#include <cctype>

namespace objcustom {

ScenarioPromptSet ScenarioPromptSet::defaults() {
    return {{
        {"snow",
         {"The scene of the picture is in the snow.", "The background of the picture is in the snow."}},
        {"grass",
         {"The scene of the picture is on the grass.", "The background of the picture is on the grass."}},
        {"beach",
         {"The scene of the picture is on the beach.", "The background of the picture is on the beach."}},
        {"jungle",
         {"The scene of the picture is in the jungle.", "The background of the picture is in the jungle."}},
        {"eiffel_tower",
         {"The scene of the picture is beside the Eiffel Tower.",
          "The background of the picture is beside the Eiffel Tower."}},
    }};
}

std::string append_suffix(const std::string& prompt, const std::string& suffix) {
    if (prompt.empty()) return suffix;
    if (std::isspace(static_cast<unsigned char>(prompt.back()))) return prompt + suffix;
    return prompt + " " + suffix;
}

std::vector<std::pair<std::string, std::string>> ScenarioPromptSet::expand(const std::string& prompt) const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& s : scenarios)
        for (const auto& suffix : s.suffixes) out.emplace_back(s.name, append_suffix(prompt, suffix));
    return out;
}

const Scenario* ScenarioPromptSet::find(const std::string& name) const {
    for (const auto& s : scenarios)
        if (s.name == name) return &s;
    return nullptr;
}

}  // namespace objcustom
