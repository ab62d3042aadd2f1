#pragma once

#include <string>
#include <utility>
#include <vector>

namespace objcustom {

struct Scenario {
    std::string name;
    std::vector<std::string> suffixes;
};

// Scenario suffixes used to probe prompt-driven diversity. Each evaluation
// prompt is the original prompt followed by one suffix, verbatim.
struct ScenarioPromptSet {
    std::vector<Scenario> scenarios;

    static ScenarioPromptSet defaults();
    // (scenario name, expanded prompt) for every suffix of every scenario.
    std::vector<std::pair<std::string, std::string>> expand(const std::string& prompt) const;
    const Scenario* find(const std::string& name) const;
};

std::string append_suffix(const std::string& prompt, const std::string& suffix);

}  // namespace objcustom
