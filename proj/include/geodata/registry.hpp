#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geodata/errors.hpp"

// Plug-and-play data source registry. A registry root holds one directory
// per source under sources/<alias>/ with:
//   entry.json   {"alias","display_name","description"[,"auth_placeholders"]}
//   handbook.md  numbered guideline items, one per blank-line-separated group
//   runtime.txt  runtime id and entry-function name, one per line
//   template.txt optional reference program
// Dropping a directory in (or removing one) is the whole integration story.
//
// Secrets never live in the registry tree. Guidelines and templates carry
// placeholder tokens of the exact form {{KEY:<alias>:<key_name>}}, resolved
// from the environment or a secrets file only at execution time.

namespace geodata {

inline constexpr const char* kUnknownSentinel = "Unknown";

struct DataSourceEntry {
    std::string alias;
    std::string display_name;
    std::string description;
};

struct ReplyContract {
    std::string entry_function;
};

struct Handbook {
    std::string alias;
    std::vector<std::string> guidelines; // verbatim items, typically "N. ..." lines
    std::string template_program;        // empty when the source ships none
    ReplyContract reply_contract;
    std::string runtime_id;
    std::vector<std::string> auth_placeholders;
};

enum class SecretInjection { env_variable, placeholder_substitution };

struct AuthRecord {
    std::string alias;
    std::string key_name;
    std::string secret;
    SecretInjection injection = SecretInjection::placeholder_substitution;
};

// ---------------------------------------------------------------------------
// Placeholder grammar: {{KEY:<alias>:<key_name>}}

struct PlaceholderRef {
    std::string alias;
    std::string key_name;
};

namespace detail {

inline const std::regex& placeholder_pattern() {
    static const std::regex pattern(R"(\{\{KEY:([^:{}\n]+):([^:{}\n]+)\}\})");
    return pattern;
}

} // namespace detail

inline PlaceholderRef parse_placeholder(const std::string& token) {
    std::smatch m;
    if (!std::regex_match(token, m, detail::placeholder_pattern())) {
        throw MalformedPlaceholder("'" + token +
                                   "' does not match {{KEY:<alias>:<key_name>}}");
    }
    return PlaceholderRef{m[1].str(), m[2].str()};
}

inline std::string placeholder_token(const std::string& alias, const std::string& key_name) {
    return "{{KEY:" + alias + ":" + key_name + "}}";
}

inline std::vector<std::string> find_placeholders(const std::string& text) {
    std::vector<std::string> out;
    auto begin = std::sregex_iterator(text.begin(), text.end(), detail::placeholder_pattern());
    for (auto it = begin; it != std::sregex_iterator(); ++it) out.push_back(it->str());
    return out;
}

// ---------------------------------------------------------------------------
// Secret store

// ALIAS and key names collapse onto A-Z0-9_ so environment variables, the
// secrets file, and placeholder tokens all address the same record.
inline std::string normalize_key_component(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    for (unsigned char c : text) {
        out.push_back(std::isalnum(c) ? static_cast<char>(std::toupper(c)) : '_');
    }
    return out;
}

inline constexpr const char* kSecretEnvPrefix = "GEODATA_KEY_";

class SecretStore {
  public:
    void add(AuthRecord record) {
        std::string key =
            normalize_key_component(record.alias) + "_" + normalize_key_component(record.key_name);
        records_[std::move(key)] = std::move(record);
    }

    // Scans for GEODATA_KEY_<ALIAS>_<KEYNAME> variables. The variable name
    // carries no alias/key boundary, so the whole suffix is the lookup key.
    static SecretStore from_environment(char** envp) {
        SecretStore store;
        for (char** e = envp; e && *e; ++e) {
            std::string entry(*e);
            auto eq = entry.find('=');
            if (eq == std::string::npos) continue;
            std::string name = entry.substr(0, eq);
            if (name.rfind(kSecretEnvPrefix, 0) != 0) continue;
            std::string suffix = name.substr(std::string(kSecretEnvPrefix).size());
            if (suffix.empty()) continue;
            AuthRecord record;
            record.key_name = suffix;
            record.secret = entry.substr(eq + 1);
            record.injection = SecretInjection::env_variable;
            store.records_[suffix] = std::move(record);
        }
        return store;
    }

    // Lines of "<alias>:<key_name>=<secret>"; blank lines and # comments skipped.
    void load_secrets_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot read secrets file " + path.string());
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || line[0] == '#') continue;
            auto colon = line.find(':');
            auto eq = line.find('=', colon == std::string::npos ? 0 : colon);
            if (colon == std::string::npos || eq == std::string::npos || colon == 0 ||
                eq <= colon + 1) {
                throw MalformedManifest("secrets file line " + std::to_string(line_no) +
                                        " is not <alias>:<key_name>=<secret>");
            }
            AuthRecord record;
            record.alias = line.substr(0, colon);
            record.key_name = line.substr(colon + 1, eq - colon - 1);
            record.secret = line.substr(eq + 1);
            add(std::move(record));
        }
    }

    bool empty() const { return records_.empty(); }
    size_t size() const { return records_.size(); }

    std::string resolve(const std::string& placeholder) const {
        PlaceholderRef ref = parse_placeholder(placeholder);
        std::string key =
            normalize_key_component(ref.alias) + "_" + normalize_key_component(ref.key_name);
        auto it = records_.find(key);
        if (it == records_.end()) {
            throw MissingSecret("no secret bound to " + placeholder);
        }
        return it->second.secret;
    }

    // Environment variables for records that inject via the environment.
    std::map<std::string, std::string> env_map() const {
        std::map<std::string, std::string> out;
        for (const auto& [suffix, record] : records_) {
            if (record.injection == SecretInjection::env_variable) {
                out[std::string(kSecretEnvPrefix) + suffix] = record.secret;
            }
        }
        return out;
    }

  private:
    std::map<std::string, AuthRecord> records_;
};

inline std::string resolve_secret(const SecretStore& store, const std::string& placeholder) {
    return store.resolve(placeholder);
}

// ---------------------------------------------------------------------------
// Validation

inline void validate_entry(const DataSourceEntry& entry) {
    if (entry.alias.empty() || entry.alias.find('\n') != std::string::npos) {
        throw MalformedManifest("alias must be non-empty and single-line");
    }
    if (entry.alias == kUnknownSentinel) {
        throw MalformedManifest("alias '" + entry.alias + "' is reserved");
    }
    if (entry.display_name.empty()) {
        throw MalformedManifest("display_name must be non-empty (alias " + entry.alias + ")");
    }
    if (entry.description.empty() || entry.description.find("\n\n") != std::string::npos) {
        throw MalformedManifest("description must be a single non-empty paragraph (alias " +
                                entry.alias + ")");
    }
}

inline void validate_handbook(const Handbook& handbook) {
    if (handbook.guidelines.empty()) {
        throw MalformedManifest("handbook for " + handbook.alias + " has no guideline items");
    }
    static const std::regex identifier(R"(^[A-Za-z_][A-Za-z0-9_]*$)");
    if (!std::regex_match(handbook.reply_contract.entry_function, identifier)) {
        throw MalformedManifest("entry function '" + handbook.reply_contract.entry_function +
                                "' is not a valid identifier (alias " + handbook.alias + ")");
    }
    if (handbook.runtime_id.empty()) {
        throw MalformedManifest("handbook for " + handbook.alias + " declares no runtime");
    }
    for (const auto& declared : handbook.auth_placeholders) {
        parse_placeholder(declared); // MalformedPlaceholder on bad declarations
    }
    auto declared_set = [&] {
        std::vector<std::string> v = handbook.auth_placeholders;
        std::sort(v.begin(), v.end());
        return v;
    }();
    std::string all_text;
    for (const auto& g : handbook.guidelines) all_text += g + "\n";
    all_text += handbook.template_program;
    for (const auto& used : find_placeholders(all_text)) {
        if (!std::binary_search(declared_set.begin(), declared_set.end(), used)) {
            throw MalformedManifest("placeholder " + used +
                                    " used but not declared (alias " + handbook.alias + ")");
        }
    }
}

// ---------------------------------------------------------------------------
// Registry

class Registry {
  public:
    Registry() = default;

    size_t size() const { return entries_.size(); }
    bool has(const std::string& alias) const { return entries_.count(alias) > 0; }
    const std::vector<std::string>& order() const { return order_; }
    const std::filesystem::path& root() const { return root_; }

    const DataSourceEntry& entry(const std::string& alias) const {
        auto it = entries_.find(alias);
        if (it == entries_.end()) throw UnknownAlias("no data source '" + alias + "'");
        return it->second;
    }

    const Handbook& handbook(const std::string& alias) const {
        auto it = handbooks_.find(alias);
        if (it == handbooks_.end()) throw UnknownAlias("no data source '" + alias + "'");
        return it->second;
    }

    // LLM selections echo the index's display names; accept either the alias
    // or an unambiguous display name. The Unknown sentinel never resolves.
    std::optional<std::string> resolve_selection(const std::string& selected) const {
        if (selected == kUnknownSentinel) return std::nullopt;
        if (has(selected)) return selected;
        std::optional<std::string> match;
        for (const auto& [alias, entry] : entries_) {
            if (entry.display_name == selected) {
                if (match) return std::nullopt; // ambiguous
                match = alias;
            }
        }
        return match;
    }

    void insert(DataSourceEntry entry, Handbook handbook) {
        validate_entry(entry);
        validate_handbook(handbook);
        if (entry.alias != handbook.alias) {
            throw AliasMismatch("entry alias '" + entry.alias + "' != handbook alias '" +
                                handbook.alias + "'");
        }
        if (entries_.count(entry.alias)) {
            throw DuplicateAlias("data source '" + entry.alias + "' already registered");
        }
        std::string alias = entry.alias;
        entries_[alias] = std::move(entry);
        handbooks_[alias] = std::move(handbook);
        order_.insert(std::upper_bound(order_.begin(), order_.end(), alias), alias);
    }

    void set_root(std::filesystem::path root) { root_ = std::move(root); }

  private:
    std::map<std::string, DataSourceEntry> entries_;
    std::map<std::string, Handbook> handbooks_;
    std::filesystem::path root_;
    std::vector<std::string> order_; // lexicographic aliases
};

namespace detail {

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Blank-line-separated groups; each group is one guideline item verbatim.
inline std::vector<std::string> parse_guidelines(const std::string& text) {
    std::vector<std::string> items;
    std::string current;
    std::istringstream lines(text);
    std::string line;
    auto flush = [&] {
        if (!current.empty()) items.push_back(current);
        current.clear();
    };
    while (std::getline(lines, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) {
            flush();
        } else {
            if (!current.empty()) current += "\n";
            current += line;
        }
    }
    flush();
    return items;
}

inline Handbook load_handbook_dir(const std::filesystem::path& dir, const std::string& alias,
                                  const std::vector<std::string>& declared_placeholders) {
    auto handbook_path = dir / "handbook.md";
    if (!std::filesystem::exists(handbook_path)) {
        throw MissingHandbook("source '" + alias + "' has no handbook.md");
    }
    Handbook handbook;
    handbook.alias = alias;
    handbook.guidelines = parse_guidelines(read_text_file(handbook_path));
    handbook.auth_placeholders = declared_placeholders;

    auto runtime_path = dir / "runtime.txt";
    if (!std::filesystem::exists(runtime_path)) {
        throw MalformedManifest("source '" + alias + "' has no runtime.txt");
    }
    std::ifstream runtime(runtime_path);
    std::string runtime_id, entry_function;
    std::getline(runtime, runtime_id);
    std::getline(runtime, entry_function);
    if (!runtime_id.empty() && runtime_id.back() == '\r') runtime_id.pop_back();
    if (!entry_function.empty() && entry_function.back() == '\r') entry_function.pop_back();
    handbook.runtime_id = runtime_id;
    handbook.reply_contract.entry_function = entry_function;

    auto template_path = dir / "template.txt";
    if (std::filesystem::exists(template_path)) {
        handbook.template_program = read_text_file(template_path);
    }
    validate_handbook(handbook);
    return handbook;
}

} // namespace detail

inline Registry load_registry(const std::filesystem::path& root) {
    if (!std::filesystem::exists(root)) {
        throw IoError("registry root " + root.string() + " does not exist");
    }
    Registry registry;
    registry.set_root(root);
    auto sources = root / "sources";
    if (!std::filesystem::exists(sources)) return registry;

    std::vector<std::filesystem::path> dirs;
    for (const auto& entry : std::filesystem::directory_iterator(sources)) {
        if (entry.is_directory()) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());

    for (const auto& dir : dirs) {
        auto manifest_path = dir / "entry.json";
        if (!std::filesystem::exists(manifest_path)) continue; // not a source dir
        nlohmann::json manifest;
        try {
            manifest = nlohmann::json::parse(detail::read_text_file(manifest_path));
        } catch (const nlohmann::json::exception& e) {
            throw MalformedManifest(manifest_path.string() + ": " + e.what());
        }
        DataSourceEntry entry;
        std::vector<std::string> declared;
        try {
            entry.alias = manifest.at("alias").get<std::string>();
            entry.display_name = manifest.at("display_name").get<std::string>();
            entry.description = manifest.at("description").get<std::string>();
            if (manifest.contains("auth_placeholders")) {
                declared = manifest["auth_placeholders"].get<std::vector<std::string>>();
            }
        } catch (const nlohmann::json::exception& e) {
            throw MalformedManifest(manifest_path.string() + ": " + e.what());
        }
        validate_entry(entry);
        if (registry.has(entry.alias)) {
            throw DuplicateAlias("alias '" + entry.alias + "' declared by more than one source");
        }
        Handbook handbook;
        try {
            handbook = detail::load_handbook_dir(dir, entry.alias, declared);
        } catch (const MalformedPlaceholder& e) {
            throw MalformedManifest(std::string("bad placeholder declaration: ") + e.what());
        }
        registry.insert(std::move(entry), std::move(handbook));
    }
    return registry;
}

// Numbered one-line-per-source text embedded in selection prompts. Pure
// function of the registry; identical registries yield identical bytes.
inline std::string render_index(const Registry& registry) {
    if (registry.size() == 0) throw EmptyRegistry("registry has no data sources");
    std::string out;
    size_t n = 1;
    for (const auto& alias : registry.order()) {
        const auto& entry = registry.entry(alias);
        if (n > 1) out += "\n";
        out += std::to_string(n) + ". " + entry.display_name + ". " + entry.description;
        ++n;
    }
    return out;
}

inline const Handbook& resolve_handbook(const Registry& registry, const std::string& alias) {
    if (alias == kUnknownSentinel) {
        throw UnknownAlias("'Unknown' is the no-source sentinel, not a data source");
    }
    return registry.handbook(alias);
}

inline Registry register_source(const Registry& registry, DataSourceEntry entry,
                                Handbook handbook) {
    Registry next = registry;
    next.insert(std::move(entry), std::move(handbook));
    return next;
}

} // namespace geodata
