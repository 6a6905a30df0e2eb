#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geodata/errors.hpp"
#include "geodata/geo_sources.hpp"
#include "geodata/llm_client.hpp"
#include "geodata/prompting.hpp"
#include "geodata/registry.hpp"
#include "geodata/sandbox.hpp"

// The agent workflow: select a data source, load its handbook, ask for a
// fetch program, run it sandboxed, and loop through debug prompts until the
// program runs clean or the iteration cap is spent. Every attempt is kept in
// the session report, programs recorded pre-injection so reports and
// cassettes never contain secrets.

namespace geodata {

enum class DeclaredFormat { geojson, csv, image, other };

inline const char* to_string(DeclaredFormat f) {
    switch (f) {
    case DeclaredFormat::geojson: return "geojson";
    case DeclaredFormat::csv: return "csv";
    case DeclaredFormat::image: return "image";
    default: return "other";
    }
}

inline std::optional<DeclaredFormat> declared_format_from(const std::string& name) {
    if (name == "geojson") return DeclaredFormat::geojson;
    if (name == "csv") return DeclaredFormat::csv;
    if (name == "image") return DeclaredFormat::image;
    if (name == "other") return DeclaredFormat::other;
    return std::nullopt;
}

struct DataRequest {
    std::string text;
    std::string output_path;
    std::optional<DeclaredFormat> declared_format;
};

enum class AttemptKind { fetch, debug };

struct AttemptRecord {
    int index = 1; // 1-based; index 1 is the fetch attempt
    AttemptKind prompt_kind = AttemptKind::fetch;
    GeneratedProgram program; // as generated, before secret injection
    ExecutionResult result;
};

enum class SessionStatus { success, selection_failed, exhausted_debug, verification_failed };

inline const char* to_string(SessionStatus s) {
    switch (s) {
    case SessionStatus::success: return "success";
    case SessionStatus::selection_failed: return "selection_failed";
    case SessionStatus::exhausted_debug: return "exhausted_debug";
    default: return "verification_failed";
    }
}

struct SessionReport {
    DataRequest request;
    std::string selected_source; // resolved alias, Unknown, or the raw reply value
    std::vector<AttemptRecord> attempts;
    SessionStatus status = SessionStatus::selection_failed;
    std::vector<std::string> output_files;
    double total_duration_s = 0.0;
    std::string verification_reason; // empty unless verification failed
};

struct AgentConfig {
    int max_debug_iterations = 10; // debug re-generations after the first attempt
    int selection_retries = 1;     // extra tries when the selection reply is unparsable
};

// ---------------------------------------------------------------------------
// Source selection

inline std::string select_source(const DataRequest& request, const Registry& registry,
                                 CompletionClient& llm, int selection_retries = 1) {
    RenderedPrompt prompt = build_selection_prompt(request.text, render_index(registry));
    for (int attempt = 0; attempt <= selection_retries; ++attempt) {
        std::string reply = llm.complete(prompt);
        try {
            return parse_selection_reply(reply).selected;
        } catch (const UnparsableReply&) {
            // retry with the identical prompt
        }
    }
    throw SelectionUnparsable("selection reply unparsable after " +
                              std::to_string(1 + selection_retries) + " attempts");
}

// ---------------------------------------------------------------------------
// Output verification

struct Verification {
    bool passed = false;
    std::string reason;

    static Verification pass() { return {true, ""}; }
    static Verification fail(std::string reason) { return {false, std::move(reason)}; }
};

namespace detail {

inline bool coordinates_valid(const nlohmann::json& node) {
    if (node.is_number()) {
        double v = node.get<double>();
        return std::isfinite(v);
    }
    if (!node.is_array()) return false;
    for (const auto& child : node) {
        if (!coordinates_valid(child)) return false;
    }
    return true;
}

inline bool geometry_valid(const nlohmann::json& geometry) {
    if (geometry.is_null()) return true; // RFC 7946 allows null geometries
    if (!geometry.is_object() || !geometry.contains("type")) return false;
    std::string type = geometry.value("type", "");
    if (type == "GeometryCollection") {
        if (!geometry.contains("geometries") || !geometry["geometries"].is_array())
            return false;
        for (const auto& g : geometry["geometries"]) {
            if (!geometry_valid(g)) return false;
        }
        return true;
    }
    return geometry.contains("coordinates") && coordinates_valid(geometry["coordinates"]);
}

inline Verification check_geojson(const std::string& text) {
    nlohmann::json doc = nlohmann::json::parse(text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
        return Verification::fail("output is not valid JSON");
    }
    std::string type = doc.value("type", "");
    if (type == "FeatureCollection") {
        if (!doc.contains("features") || !doc["features"].is_array()) {
            return Verification::fail("FeatureCollection without a features array");
        }
        for (const auto& feature : doc["features"]) {
            if (!feature.is_object() || !feature.contains("geometry") ||
                !geometry_valid(feature["geometry"])) {
                return Verification::fail("feature with invalid geometry coordinates");
            }
        }
        return Verification::pass();
    }
    if (type == "Feature") {
        return geometry_valid(doc["geometry"])
                   ? Verification::pass()
                   : Verification::fail("feature with invalid geometry coordinates");
    }
    return geometry_valid(doc) ? Verification::pass()
                               : Verification::fail("not a GeoJSON document");
}

inline Verification check_format(const std::filesystem::path& file, DeclaredFormat format) {
    std::ifstream in(file, std::ios::binary);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    std::string bytes = buffer.str();
    switch (format) {
    case DeclaredFormat::geojson:
        return check_geojson(bytes);
    case DeclaredFormat::csv:
        try {
            auto records = sources::parse_csv(bytes);
            if (records.empty()) return Verification::fail("csv has no header row");
            size_t width = records[0].size();
            for (const auto& row : records) {
                if (row.size() != width) {
                    return Verification::fail("csv rows have inconsistent field counts");
                }
            }
            return Verification::pass();
        } catch (const MalformedCsv& e) {
            return Verification::fail(std::string("csv unparsable: ") + e.what());
        }
    case DeclaredFormat::image:
        return sniff_image_format(bytes)
                   ? Verification::pass()
                   : Verification::fail("file lacks the magic bytes of a known raster format");
    default:
        return Verification::pass();
    }
}

} // namespace detail

// Relative output paths resolve against the sandbox output directory, which
// keeps request texts (and therefore cassette digests) machine-independent.
inline Verification verify_output(const DataRequest& request,
                                  const std::filesystem::path& output_dir) {
    namespace fs = std::filesystem;
    fs::path target = request.output_path;
    if (target.is_relative()) target = output_dir / target;
    std::error_code ec;
    if (!fs::exists(target, ec)) {
        return Verification::fail("no output at " + target.string());
    }
    fs::path file = target;
    if (fs::is_directory(target, ec)) {
        std::uintmax_t best = 0;
        fs::path best_path;
        for (const auto& entry : fs::recursive_directory_iterator(target, ec)) {
            if (!entry.is_regular_file(ec)) continue;
            auto size = entry.file_size(ec);
            if (size >= best) {
                best = size;
                best_path = entry.path();
            }
        }
        if (best_path.empty() || best == 0) {
            return Verification::fail("no non-empty file under " + target.string());
        }
        file = best_path;
    } else if (fs::file_size(target, ec) == 0) {
        return Verification::fail("empty output at " + target.string());
    }
    if (request.declared_format) {
        return detail::check_format(file, *request.declared_format);
    }
    return Verification::pass();
}

// ---------------------------------------------------------------------------
// Session loop

namespace detail {

inline constexpr size_t kErrorReportCap = 16 * 1024;

// stderr first, stdout as fallback; tails kept on truncation since
// interpreter tracebacks end with the salient line.
inline std::string error_report_of(const ExecutionResult& result) {
    std::string text = result.stderr_text.empty() ? result.stdout_text : result.stderr_text;
    if (text.empty()) {
        text = result.timed_out
                   ? "process was killed after exceeding the execution timeout"
                   : "process exited with code " + std::to_string(result.exit_code) +
                         " and produced no output";
    }
    if (text.size() > kErrorReportCap) {
        text = "[...truncated...]\n" + text.substr(text.size() - kErrorReportCap);
    }
    return text;
}

inline ExecutionResult synthetic_failure(const std::string& reason) {
    ExecutionResult result;
    result.succeeded = false;
    result.exit_code = -1;
    result.stderr_text = reason;
    return result;
}

inline std::string script_extension_for(const std::string& runtime_id) {
    if (runtime_id.find("python") != std::string::npos) return ".py";
    if (runtime_id.find("node") != std::string::npos) return ".js";
    return ".txt";
}

} // namespace detail

inline SessionReport run_session(const DataRequest& request, const Registry& registry,
                                 CompletionClient& llm, const RuntimeConfig& sandbox_cfg,
                                 const AgentConfig& cfg, const SecretStore& secrets = {}) {
    auto session_start = std::chrono::steady_clock::now();
    SessionReport report;
    report.request = request;
    auto finish = [&](SessionStatus status) -> SessionReport& {
        report.status = status;
        report.total_duration_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - session_start)
                .count();
        return report;
    };

    // 1. Source selection. An Unknown or unresolvable selection ends the
    // session; guessing a source instead is worse than failing.
    std::string selected;
    try {
        selected = select_source(request, registry, llm, cfg.selection_retries);
    } catch (const SelectionUnparsable&) {
        report.selected_source = "";
        return finish(SessionStatus::selection_failed);
    }
    report.selected_source = selected;
    auto alias = registry.resolve_selection(selected);
    if (!alias) {
        return finish(SessionStatus::selection_failed);
    }
    report.selected_source = *alias;
    const Handbook& handbook = registry.handbook(*alias);

    RuntimeConfig runtime = sandbox_cfg;
    if (runtime.interpreter_command.empty()) {
        runtime.interpreter_command = {handbook.runtime_id};
    }
    if (runtime.script_extension.empty()) {
        runtime.script_extension = detail::script_extension_for(handbook.runtime_id);
    }
    for (const auto& [name, value] : secrets.env_map()) runtime.env[name] = value;

    // 2. Generate, execute, and self-debug. Unparsable replies and transport
    // failures burn a debug iteration with the error text as the report, so
    // the loop is bounded no matter how generation misbehaves.
    int debug_used = 0;
    std::string pending_error;
    while (true) {
        int index = static_cast<int>(report.attempts.size()) + 1;
        AttemptRecord attempt;
        attempt.index = index;
        attempt.prompt_kind = index == 1 ? AttemptKind::fetch : AttemptKind::debug;

        RenderedPrompt prompt =
            index == 1
                ? build_fetch_prompt(request.text, *alias, handbook)
                : build_debug_prompt(request.text, handbook,
                                     report.attempts.back().program, pending_error);
        bool have_program = false;
        try {
            std::string reply = llm.complete(prompt);
            try {
                attempt.program = extract_program(reply, handbook.reply_contract);
                have_program = true;
            } catch (const NoCodeBlock&) {
                attempt.program.entry_function = handbook.reply_contract.entry_function;
                attempt.program.source_text = reply;
                attempt.result = detail::synthetic_failure("reply contained no code block");
            } catch (const MissingEntryFunction& e) {
                attempt.program.entry_function = handbook.reply_contract.entry_function;
                attempt.program.source_text = reply;
                attempt.result = detail::synthetic_failure(e.what());
            }
        } catch (const Error& e) {
            attempt.program.entry_function = handbook.reply_contract.entry_function;
            attempt.result = detail::synthetic_failure(e.what());
        }

        if (have_program) {
            try {
                GeneratedProgram injected = inject_secrets(attempt.program, secrets);
                attempt.result = execute(injected, runtime, index);
            } catch (const MissingSecret& e) {
                attempt.result = detail::synthetic_failure(e.what());
            }
        }
        report.attempts.push_back(std::move(attempt));

        if (report.attempts.back().result.succeeded) break;
        if (debug_used >= cfg.max_debug_iterations) {
            return finish(SessionStatus::exhausted_debug);
        }
        ++debug_used;
        pending_error = detail::error_report_of(report.attempts.back().result);
    }

    // 3. Verify what landed on disk.
    for (const auto& file : report.attempts.back().result.produced_files) {
        report.output_files.push_back(file.path);
    }
    Verification verdict = verify_output(request, runtime.output_dir);
    if (!verdict.passed) {
        report.verification_reason = verdict.reason;
        return finish(SessionStatus::verification_failed);
    }
    return finish(SessionStatus::success);
}

// ---------------------------------------------------------------------------
// Report serialization (one JSON document, field for field)

inline nlohmann::ordered_json report_to_json(const SessionReport& report) {
    nlohmann::ordered_json doc;
    doc["request"] = {
        {"text", report.request.text},
        {"output_path", report.request.output_path},
        {"declared_format", report.request.declared_format
                                ? nlohmann::json(to_string(*report.request.declared_format))
                                : nlohmann::json(nullptr)},
    };
    doc["selected_source"] = report.selected_source;
    doc["status"] = to_string(report.status);
    auto attempts = nlohmann::ordered_json::array();
    for (const auto& attempt : report.attempts) {
        nlohmann::ordered_json a;
        a["index"] = attempt.index;
        a["prompt_kind"] = attempt.prompt_kind == AttemptKind::fetch ? "fetch" : "debug";
        a["program"] = {
            {"entry_function", attempt.program.entry_function},
            {"source_text", attempt.program.source_text},
        };
        auto files = nlohmann::ordered_json::array();
        for (const auto& f : attempt.result.produced_files) {
            files.push_back({{"path", f.path}, {"bytes", f.bytes}});
        }
        a["result"] = {
            {"succeeded", attempt.result.succeeded},
            {"exit_code", attempt.result.exit_code},
            {"timed_out", attempt.result.timed_out},
            {"duration_s", attempt.result.duration_s},
            {"stdout", attempt.result.stdout_text},
            {"stderr", attempt.result.stderr_text},
            {"produced_files", std::move(files)},
        };
        attempts.push_back(std::move(a));
    }
    doc["attempts"] = std::move(attempts);
    doc["output_files"] = report.output_files;
    doc["verification_reason"] = report.verification_reason;
    doc["total_duration_s"] = report.total_duration_s;
    return doc;
}

inline void write_report(const SessionReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write report " + path.string());
    out << report_to_json(report).dump(2) << "\n";
}

} // namespace geodata
