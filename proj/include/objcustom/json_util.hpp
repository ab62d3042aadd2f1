#pragma once

#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "objcustom/tensor.hpp"

namespace objcustom {

// Reads fields out of a JSON object and rejects any key nobody asked for.
// Missing keys keep the caller's default.
class StrictReader {
public:
    StrictReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
    }

    template <class T>
    StrictReader& get(const std::string& key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return *this;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
        return *this;
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    // Marks `key` as known and returns the sub-object (or null when absent).
    const nlohmann::json* child(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    std::string path(const std::string& key) const { return where_ + "." + key; }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw ConfigError(where_ + ": unknown key '" + k + "'");
    }

private:
    const nlohmann::json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

}  // namespace objcustom
