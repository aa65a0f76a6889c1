#pragma once

// JSON <-> config structs. Readers report problems as ConfigError naming the
// offending key path (e.g. "train.patch[2]") and reject unknown keys.

#include <json.hpp>

#include <set>
#include <string>

#include "phasealign/errors.hpp"
#include "phasealign/models.hpp"
#include "phasealign/phantom.hpp"
#include "phasealign/registration.hpp"
#include "phasealign/training.hpp"

namespace phasealign {

using json = nlohmann::json;

class JsonSection {
public:
    JsonSection(const json& j, std::string path);

    bool has(const std::string& key) const { return j_->contains(key); }
    const std::string& path() const { return path_; }
    std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    template <class T>
    T get(const std::string& key, T fallback) {
        seen_.insert(key);
        if (!has(key)) return fallback;
        return convert<T>(key);
    }

    template <class T>
    T require(const std::string& key) {
        seen_.insert(key);
        if (!has(key)) throw ConfigError(key_path(key) + ": required key is missing");
        return convert<T>(key);
    }

    Shape3 get_shape(const std::string& key, Shape3 fallback);
    /// Sub-object; an absent key yields an empty section.
    JsonSection section(const std::string& key);
    const json& raw(const std::string& key);
    /// Throws on keys that were never read.
    void finish() const;

private:
    template <class T>
    T convert(const std::string& key) const {
        try {
            return (*j_)[key].template get<T>();
        } catch (const json::exception&) {
            throw ConfigError(key_path(key) + ": wrong type (" + std::string((*j_)[key].type_name()) + ")");
        }
    }

    const json* j_;
    std::string path_;
    std::set<std::string> seen_;
    static const json empty_;
};

ArchitectureSpec read_arch(JsonSection s);
ModelSpec read_model_spec(JsonSection s, Strategy strategy);
TrainConfig read_train_config(JsonSection s);
RegistrationConfig read_registration_config(JsonSection s);
PhantomConfig read_phantom_config(JsonSection s);

json to_json(const ArchitectureSpec& a);
json to_json(const ModelSpec& m);
json to_json(const TrainConfig& c);
json to_json(const RegistrationConfig& c);
json to_json(const PhantomConfig& c);
json to_json(Shape3 s);

/// Applies "a.b.c=value" to j; value is parsed as JSON, falling back to a
/// plain string.
void apply_override(json& j, const std::string& assignment);

json read_json_file(const std::filesystem::path& path);

} // namespace phasealign
